//! Training-step behavior: loss finiteness, determinism across runs,
//! and bit-exact checkpoint resume.

use std::collections::BTreeMap;

use medfe_core::checkpoint;
use medfe_core::mask::{gen_center_mask, stack_masks};
use medfe_core::model::GeneratorConfig;
use medfe_core::synth::synth_sample;
use medfe_core::tensor::Tensor;
use medfe_core::trainer::{Batch, StepLosses, TrainConfig, Trainer};

fn tiny_batch(seed: u64, size: usize, n: usize) -> Batch {
    let mut images = Vec::new();
    let mut structures = Vec::new();
    let mut masks = Vec::new();
    for i in 0..n {
        let s = synth_sample(seed + i as u64, (size, size));
        images.push(s.image);
        structures.push(s.structure);
        masks.push(gen_center_mask(size, size));
    }
    Batch {
        image: cat_batch(&images),
        structure: cat_batch(&structures),
        mask: stack_masks(&masks).unwrap(),
    }
}

fn cat_batch(parts: &[Tensor]) -> Tensor {
    let s = parts[0].shape();
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(
        medfe_core::Shape::nchw(parts.len(), s.c(), s.h(), s.w()),
        data,
    )
    .unwrap()
}

fn run_steps(trainer: &mut Trainer, steps: usize) -> Vec<StepLosses> {
    let mut out = Vec::new();
    for step in 0..steps {
        let batch = tiny_batch(1000 + step as u64, 32, 2);
        out.push(trainer.train_step(&batch).unwrap());
    }
    out
}

#[test]
fn train_steps_produce_finite_losses_and_advance_the_counter() {
    let mut trainer = Trainer::new(GeneratorConfig::tiny(), TrainConfig::default()).unwrap();
    let losses = run_steps(&mut trainer, 3);
    assert_eq!(trainer.step, 3);
    for l in &losses {
        assert!(l.is_finite());
        assert!(l.l_re >= 0.0 && l.l_style >= 0.0 && l.l_prec >= 0.0);
        assert!(l.l_total >= 0.0);
    }
}

#[test]
fn identical_seeds_give_identical_loss_trajectories() {
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    let mut b = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    let la = run_steps(&mut a, 3);
    let lb = run_steps(&mut b, 3);
    for (x, y) in la.iter().zip(lb.iter()) {
        assert_eq!(x.l_total.to_bits(), y.l_total.to_bits());
        assert_eq!(x.l_d.to_bits(), y.l_d.to_bits());
    }
}

#[test]
fn zero_steps_checkpoint_equals_initialization() {
    let trainer = Trainer::new(GeneratorConfig::tiny(), TrainConfig::default()).unwrap();
    let fresh = Trainer::new(GeneratorConfig::tiny(), TrainConfig::default()).unwrap();
    let a = trainer.state_entries();
    let b = fresh.state_entries();
    assert_eq!(a.len(), b.len());
    for ((n0, t0), (n1, t1)) in a.iter().zip(b.iter()) {
        assert_eq!(n0, n1);
        for (x, y) in t0.data().iter().zip(t1.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{n0} differs");
        }
    }
}

#[test]
fn resume_from_checkpoint_reproduces_the_trajectory() {
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    // uninterrupted run: 4 steps
    let mut full = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    let reference = run_steps(&mut full, 4);

    // interrupted run: 2 steps, checkpoint, restore into a fresh trainer
    let mut first = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    let _ = run_steps(&mut first, 2);
    let bytes = checkpoint::encode(&first.state_entries());
    let entries: BTreeMap<String, Tensor> =
        checkpoint::decode(&bytes).unwrap().into_iter().collect();
    let mut resumed = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    resumed.load_state(&entries).unwrap();
    assert_eq!(resumed.step, 2);

    for step in 2..4 {
        let batch = tiny_batch(1000 + step as u64, 32, 2);
        let l = resumed.train_step(&batch).unwrap();
        assert_eq!(
            l.l_total.to_bits(),
            reference[step].l_total.to_bits(),
            "step {step} diverged after resume"
        );
        assert_eq!(l.l_d.to_bits(), reference[step].l_d.to_bits());
    }
}

#[test]
fn sample_indices_are_reproducible_and_in_range() {
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    let mut b = Trainer::new(GeneratorConfig::tiny(), cfg).unwrap();
    for _ in 0..10 {
        let ia = a.sample_indices(37, 4);
        let ib = b.sample_indices(37, 4);
        assert_eq!(ia, ib);
        assert!(ia.iter().all(|&i| i < 37));
    }
}
