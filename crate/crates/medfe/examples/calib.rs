// quick calibration: hole-L1 ratio + PSNR vs meanfill on holdout
use medfe_core::model::{model_from_entries, composite, GeneratorConfig};
use medfe_core::trainer::{Trainer, TrainConfig};
use medfe_core::metrics::{psnr, to_unit};
use medfe::ppm;
use std::path::Path;

fn hole_l1(model: &medfe_core::model::MEDFEModel, img: &medfe_core::Tensor, mask: &medfe_core::Tensor) -> f64 {
    let eval = model.generate(img, mask).unwrap();
    let s = img.shape();
    let (mut acc, mut n) = (0.0, 0usize);
    for c in 0..3 { for y in 0..s.h() { for x in 0..s.w() {
        if mask.at(0,0,y,x) == 0.0 { acc += (eval.i_out.at(0,c,y,x) - img.at(0,c,y,x)).abs(); n += 1; }
    }}}
    acc / n as f64
}

fn main() {
    let state = medfe::ckpt::read_entries(Path::new("/tmp/medfe_accept/run/checkpoint_1000.medfe")).unwrap();
    let trained = model_from_entries(&state).unwrap();
    let untrained = Trainer::new(GeneratorConfig::desk(), TrainConfig::default()).unwrap().model;
    let (mut l1_t, mut l1_u, mut p_t, mut p_m) = (0.0, 0.0, 0.0, 0.0);
    let n = 16;
    for i in 0..n {
        let img = ppm::read_ppm(Path::new(&format!("/tmp/medfe_accept/holdout/img_{i:04}.ppm"))).unwrap();
        let mask = ppm::read_pgm(Path::new(&format!("/tmp/medfe_accept/holdout/mask_{i:04}.pgm"))).unwrap();
        l1_t += hole_l1(&trained, &img, &mask);
        l1_u += hole_l1(&untrained, &img, &mask);
        let eval = trained.generate(&img, &mask).unwrap();
        p_t += psnr(&to_unit(&eval.i_comp), &to_unit(&img)).unwrap();
        // mean-fill baseline: per-channel mean of valid pixels
        let s = img.shape();
        let mut fill = vec![0.0; 3]; let mut cnt = 0.0;
        for y in 0..s.h() { for x in 0..s.w() { if mask.at(0,0,y,x) == 1.0 {
            cnt += 1.0; for c in 0..3 { fill[c] += img.at(0,c,y,x); }
        }}}
        for c in 0..3 { fill[c] /= cnt; }
        let filled = medfe_core::Tensor::from_fn(s, |idx| {
            let plane = s.h()*s.w(); let c = (idx/plane)%3;
            fill[c]
        });
        let mf = composite(&img, &filled, &mask).unwrap();
        p_m += psnr(&to_unit(&mf), &to_unit(&img)).unwrap();
    }
    let n = n as f64;
    println!("hole L1 trained {:.4} untrained {:.4} ratio {:.3}", l1_t/n, l1_u/n, l1_t/l1_u);
    println!("psnr comp {:.2} meanfill {:.2} delta {:.2}", p_t/n, p_m/n, p_t/n - p_m/n);
}
