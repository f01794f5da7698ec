//! Alternating discriminator/generator training over a manifest corpus.

use std::fs;
use std::io::Write;
use std::time::Instant;

use medfe_core::loss::FeatureExtractor;
use medfe_core::model::GeneratorConfig;
use medfe_core::trainer::{Batch, StepLosses, Trainer};

use crate::ckpt;
use crate::commands::load_batch;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::read_manifest;
use crate::ppm;

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str =
    "step\tl_re\tl_prec\tl_style\tl_adv\tl_rst\tl_rte\tl_total\tl_d\twall_ms";

fn log_line(step: u64, l: &StepLosses, wall_ms: f64) -> String {
    format!(
        "{step}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{wall_ms:.1}",
        l.l_re, l.l_prec, l.l_style, l.l_adv, l.l_rst, l.l_rte, l.l_total, l.l_d
    )
}

pub fn run(cfg: &RunConfig, quiet: bool) -> CliResult<()> {
    let manifest_path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Contract("train needs a dataset manifest".into()))?;
    let entries = read_manifest(manifest_path)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;

    // Resume keeps the checkpointed architecture; fresh runs take the
    // preset's.
    let mut trainer = match &cfg.checkpoint {
        Some(path) => {
            let state = ckpt::read_entries(path)?;
            let gen_cfg = GeneratorConfig::from_entries(&state)?;
            let mut t = Trainer::new(gen_cfg, cfg.train_config())?;
            t.load_state(&state)?;
            t
        }
        None => Trainer::new(cfg.preset.generator_config(), cfg.train_config())?,
    };
    trainer.weights = cfg.loss_weights();
    if let Some(path) = &cfg.extractor_weights {
        let state = ckpt::read_entries(path)?;
        trainer.fx = FeatureExtractor::from_entries(&state)?;
    }

    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    writeln!(log, "{LOG_HEADER}").map_err(|e| CliError::io(&log_path, e))?;

    while trainer.step < cfg.steps {
        let indices = trainer.sample_indices(entries.len(), cfg.batch_size);
        let batch = load_batch(&entries, &indices, cfg.image_size)?;
        let started = Instant::now();
        let losses = match trainer.train_step(&batch) {
            Ok(l) => l,
            Err(medfe_core::Error::NonFinite(what)) => {
                dump_diagnostics(cfg, &batch, &indices)?;
                return Err(CliError::Numerical(format!(
                    "non-finite {what} at step {}; offending batch dumped to {}",
                    trainer.step,
                    cfg.out_dir.join("diag").display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let line = log_line(trainer.step, &losses, wall_ms);
        writeln!(log, "{line}").map_err(|e| CliError::io(&log_path, e))?;
        if !quiet {
            println!("{line}");
        }
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("checkpoint_{}.medfe", trainer.step));
            ckpt::write_entries(&path, &trainer.state_entries())?;
        }
    }

    let final_path = cfg.out_dir.join("checkpoint_final.medfe");
    ckpt::write_entries(&final_path, &trainer.state_entries())?;
    Ok(())
}

fn dump_diagnostics(cfg: &RunConfig, batch: &Batch, indices: &[usize]) -> CliResult<()> {
    let diag = cfg.out_dir.join("diag");
    fs::create_dir_all(&diag).map_err(|e| CliError::io(&diag, e))?;
    let n = batch.image.shape().n();
    let s = batch.image.shape();
    let plane = s.c() * s.h() * s.w();
    for i in 0..n {
        let img = medfe_core::tensor::Tensor::new(
            medfe_core::tensor::Shape::nchw(1, s.c(), s.h(), s.w()),
            batch.image.data()[i * plane..(i + 1) * plane].to_vec(),
        )
        .expect("diag slice");
        ppm::write_ppm(&diag.join(format!("batch_{i}_sample_{}.ppm", indices[i])), &img)?;
    }
    let list = diag.join("indices.txt");
    fs::write(
        &list,
        indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .map_err(|e| CliError::io(&list, e))?;
    Ok(())
}
