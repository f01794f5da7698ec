//! Bilateral propagation activation against its brute-force oracle, the
//! branch algebra laws, and the fused equalization pipeline.

use medfe_core::equalize::{
    bpa, bpa_oracle, default_sigma, equalize, range_branch, spatial_branch, BpaConfig,
    EqualizeParams, SpatialKernel,
};
use medfe_core::gradcheck::grad_check;
use medfe_core::layers::{Binding, Conv2dLayer};
use medfe_core::oracle::max_abs_diff;
use medfe_core::rng::SeedRng;
use medfe_core::tape::Tape;
use medfe_core::tensor::{Shape, Tensor};

fn kernel_for(shape: Shape) -> SpatialKernel {
    let sigma = default_sigma(shape.h(), shape.w());
    SpatialKernel::new(shape.h(), shape.w(), sigma).unwrap()
}

#[test]
fn spatial_kernel_is_symmetric_with_unit_diagonal() {
    let k = SpatialKernel::new(4, 5, 2.0).unwrap();
    let hw = 20;
    for i in 0..hw {
        assert_eq!(k.weights.at(0, 0, i, i), 1.0);
        for j in 0..hw {
            let a = k.weights.at(0, 0, i, j);
            assert_eq!(a, k.weights.at(0, 0, j, i));
            assert!(a > 0.0 && a <= 1.0);
        }
    }
    assert!(SpatialKernel::new(3, 3, 0.0).is_err());
}

#[test]
fn branches_of_zero_input_are_zero() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(Shape::nchw(1, 3, 4, 4)));
    let k = kernel_for(x.shape());
    let ys = spatial_branch(&tape, &x, &k).unwrap();
    let yr = range_branch(&tape, &x, false).unwrap();
    assert!(ys.value().data().iter().all(|&v| v == 0.0));
    assert!(yr.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn spatial_branch_of_constant_with_flat_kernel_is_the_constant() {
    // σ → ∞ makes g ≡ 1; averaging a constant returns it.
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(Shape::nchw(1, 2, 3, 3), 0.7));
    let k = SpatialKernel::new(3, 3, 1e9).unwrap();
    let ys = spatial_branch(&tape, &x, &k).unwrap();
    for v in ys.value().data() {
        assert!((v - 0.7).abs() <= 1e-12);
    }
}

#[test]
fn spatial_branch_matches_per_pixel_double_loop() {
    let mut rng = SeedRng::new(31);
    let x = rng.uniform_tensor(Shape::nchw(1, 2, 4, 4), -1.0, 1.0);
    let k = SpatialKernel::new(4, 4, 2.0).unwrap();
    let tape = Tape::new();
    let ys = spatial_branch(&tape, &tape.constant(x.clone()), &k).unwrap();
    let (oracle_ys, _) = bpa_oracle(&x, 2.0);
    assert!(max_abs_diff(ys.value(), &oracle_ys).unwrap() <= 1e-10);
}

#[test]
fn range_branch_constant_interior_matches_hand_formula() {
    // constant c at an interior pixel: nine identical neighbors, so
    // y^r = 9·‖c‖²·c / N.
    let c = [0.3f64, -0.5];
    let x = Tensor::from_fn(Shape::nchw(1, 2, 5, 5), |i| c[i / 25]);
    let tape = Tape::new();
    let yr = range_branch(&tape, &tape.constant(x), false).unwrap();
    let norm2 = c[0] * c[0] + c[1] * c[1];
    let n = 25.0;
    for ch in 0..2 {
        let expect = 9.0 * norm2 * c[ch] / n;
        let got = yr.value().at(0, ch, 2, 2);
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn range_branch_matches_naive_triple_loop() {
    let mut rng = SeedRng::new(32);
    let x = rng.uniform_tensor(Shape::nchw(1, 3, 5, 5), -1.0, 1.0);
    let tape = Tape::new();
    let yr = range_branch(&tape, &tape.constant(x.clone()), false).unwrap();
    let (_, oracle_yr) = bpa_oracle(&x, 1.0);
    assert!(max_abs_diff(yr.value(), &oracle_yr).unwrap() <= 1e-10);
}

#[test]
fn oracle_equivalence_across_shapes_and_seeds() {
    // the acceptance shapes, ten seeds each
    let shapes = [
        Shape::nchw(1, 2, 4, 4),
        Shape::nchw(1, 4, 8, 8),
        Shape::nchw(2, 3, 5, 5),
    ];
    for shape in shapes {
        let sigma = default_sigma(shape.h(), shape.w());
        let kernel = SpatialKernel::new(shape.h(), shape.w(), sigma).unwrap();
        for seed in 0..10u64 {
            let mut rng = SeedRng::new(1000 + seed);
            let x = rng.uniform_tensor(shape, -1.0, 1.0);
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let ys = spatial_branch(&tape, &xv, &kernel).unwrap();
            let yr = range_branch(&tape, &xv, false).unwrap();
            let (oys, oyr) = bpa_oracle(&x, sigma);
            assert!(max_abs_diff(ys.value(), &oys).unwrap() <= 1e-8);
            assert!(max_abs_diff(yr.value(), &oyr).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn single_pixel_domain_degenerates_cleanly() {
    // 1×1 spatial: y^s = x, y^r = ‖x‖²·x with N = 1.
    let x = Tensor::new(Shape::nchw(1, 3, 1, 1), vec![0.4, -0.2, 0.9]).unwrap();
    let (ys, yr) = bpa_oracle(&x, 1.0);
    assert!(max_abs_diff(&ys, &x).unwrap() <= 1e-15);
    let n2 = 0.4 * 0.4 + 0.2 * 0.2 + 0.9 * 0.9;
    for ch in 0..3 {
        assert!((yr.at(0, ch, 0, 0) - n2 * x.at(0, ch, 0, 0)).abs() <= 1e-15);
    }
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let k = SpatialKernel::new(1, 1, 1.0).unwrap();
    let fast_ys = spatial_branch(&tape, &xv, &k).unwrap();
    let fast_yr = range_branch(&tape, &xv, false).unwrap();
    assert!(max_abs_diff(fast_ys.value(), &ys).unwrap() <= 1e-15);
    assert!(max_abs_diff(fast_yr.value(), &yr).unwrap() <= 1e-15);
}

#[test]
fn spatial_branch_is_linear() {
    let shape = Shape::nchw(1, 3, 4, 4);
    let kernel = kernel_for(shape);
    for seed in 0..10u64 {
        let mut rng = SeedRng::new(2000 + seed);
        let x = rng.uniform_tensor(shape, -1.0, 1.0);
        let z = rng.uniform_tensor(shape, -1.0, 1.0);
        let (a, b) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let tape = Tape::new();
        let combo = Tensor::from_fn(shape, |i| a * x.data()[i] + b * z.data()[i]);
        let lhs = spatial_branch(&tape, &tape.constant(combo), &kernel).unwrap();
        let sx = spatial_branch(&tape, &tape.constant(x), &kernel).unwrap();
        let sz = spatial_branch(&tape, &tape.constant(z), &kernel).unwrap();
        let rhs = Tensor::from_fn(shape, |i| {
            a * sx.value().data()[i] + b * sz.value().data()[i]
        });
        assert!(max_abs_diff(lhs.value(), &rhs).unwrap() <= 1e-10);
    }
}

#[test]
fn range_branch_is_three_homogeneous() {
    let shape = Shape::nchw(1, 3, 4, 4);
    for seed in 0..10u64 {
        let mut rng = SeedRng::new(3000 + seed);
        let x = rng.uniform_tensor(shape, -1.0, 1.0);
        let a = rng.uniform(0.3, 2.0);
        let tape = Tape::new();
        let scaled = x.map(|v| a * v);
        let lhs = range_branch(&tape, &tape.constant(scaled), false).unwrap();
        let base = range_branch(&tape, &tape.constant(x), false).unwrap();
        let a3 = a * a * a;
        for (l, b) in lhs.value().data().iter().zip(base.value().data().iter()) {
            let scale = l.abs().max((a3 * b).abs()).max(1e-12);
            assert!(
                (l - a3 * b).abs() / scale <= 1e-9,
                "3-homogeneity broke: {l} vs {}",
                a3 * b
            );
        }
    }
}

#[test]
fn bpa_with_averaging_q_is_the_branch_mean() {
    let mut rng = SeedRng::new(33);
    let c = 3usize;
    let shape = Shape::nchw(1, c, 4, 4);
    let x = rng.uniform_tensor(shape, -1.0, 1.0);
    // q takes channel i from each half with weight 1/2
    let mut q = Conv2dLayer::new("q", &mut rng, 2 * c, c, 1, 1, 0, 1, false);
    q.weight = Tensor::from_fn(Shape::nchw(c, 2 * c, 1, 1), |idx| {
        let oc = idx / (2 * c);
        let ic = idx % (2 * c);
        if ic == oc || ic == oc + c {
            0.5
        } else {
            0.0
        }
    });
    let kernel = kernel_for(shape);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let xv = tape.constant(x.clone());
    let out = bpa(&tape, &mut bind, &xv, &q, &kernel, &BpaConfig::default()).unwrap();
    let ys = spatial_branch(&tape, &xv, &kernel).unwrap();
    let yr = range_branch(&tape, &xv, false).unwrap();
    let expect = Tensor::from_fn(shape, |i| {
        0.5 * (ys.value().data()[i] + yr.value().data()[i])
    });
    assert!(max_abs_diff(out.value(), &expect).unwrap() <= 1e-12);
}

#[test]
fn bpa_of_zero_input_is_zero() {
    let mut rng = SeedRng::new(34);
    let q = Conv2dLayer::new("q", &mut rng, 4, 2, 1, 1, 0, 1, false);
    let shape = Shape::nchw(1, 2, 3, 3);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let x = tape.constant(Tensor::zeros(shape));
    let out = bpa(&tape, &mut bind, &x, &q, &kernel_for(shape), &BpaConfig::default()).unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn bpa_matches_oracle_composed_with_same_q() {
    let mut rng = SeedRng::new(35);
    let c = 3usize;
    let shape = Shape::nchw(2, c, 4, 4);
    let x = rng.uniform_tensor(shape, -1.0, 1.0);
    let q = Conv2dLayer::new("q", &mut rng, 2 * c, c, 1, 1, 0, 1, false);
    let kernel = kernel_for(shape);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let out = bpa(
        &tape,
        &mut bind,
        &tape.constant(x.clone()),
        &q,
        &kernel,
        &BpaConfig::default(),
    )
    .unwrap();

    // oracle branches composed with the same 1×1 weights
    let (ys, yr) = bpa_oracle(&x, kernel.sigma);
    let expect = Tensor::from_fn(shape, |idx| {
        let s = shape;
        let w = idx % s.w();
        let h = (idx / s.w()) % s.h();
        let oc = (idx / (s.w() * s.h())) % s.c();
        let n = idx / (s.w() * s.h() * s.c());
        let mut acc = 0.0;
        for ic in 0..c {
            acc += q.weight.at(oc, ic, 0, 0) * ys.at(n, ic, h, w);
            acc += q.weight.at(oc, ic + c, 0, 0) * yr.at(n, ic, h, w);
        }
        acc
    });
    assert!(max_abs_diff(out.value(), &expect).unwrap() <= 1e-8);
}

#[test]
fn bpa_gradcheck_both_normalizations() {
    for softmax in [false, true] {
        let mut rng = SeedRng::new(36);
        let c = 2usize;
        let shape = Shape::nchw(1, c, 3, 3);
        let x = rng.uniform_tensor(shape, -1.0, 1.0);
        let qw = rng.uniform_tensor(Shape::nchw(c, 2 * c, 1, 1), -0.7, 0.7);
        let kernel = kernel_for(shape);
        let report = grad_check(
            |tape, vars| {
                let ys = spatial_branch(tape, &vars[0], &kernel)?;
                let yr = range_branch(tape, &vars[0], softmax)?;
                let cat = tape.concat(1, &[&ys, &yr])?;
                let out = tape.conv2d(&cat, &vars[1], None, 1, 0, 1)?;
                let sq = tape.mul(&out, &out)?;
                tape.mean_all(&sq)
            },
            &[x, qw],
            1e-5,
            1e-4,
            None,
            7,
        )
        .unwrap();
        assert!(
            report.pass(),
            "softmax={softmax}: max rel err {}",
            report.max_rel_err
        );
    }
}

#[test]
fn residual_flag_adds_the_input_back() {
    let mut rng = SeedRng::new(37);
    let c = 2usize;
    let shape = Shape::nchw(1, c, 3, 3);
    let x = rng.uniform_tensor(shape, -1.0, 1.0);
    let q = Conv2dLayer::new("q", &mut rng, 2 * c, c, 1, 1, 0, 1, false);
    let kernel = kernel_for(shape);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let xv = tape.constant(x.clone());
    let plain = bpa(&tape, &mut bind, &xv, &q, &kernel, &BpaConfig::default()).unwrap();
    let with_res = bpa(
        &tape,
        &mut bind,
        &xv,
        &q,
        &kernel,
        &BpaConfig {
            residual: true,
            ..BpaConfig::default()
        },
    )
    .unwrap();
    let expect = Tensor::from_fn(shape, |i| plain.value().data()[i] + x.data()[i]);
    assert!(max_abs_diff(with_res.value(), &expect).unwrap() <= 1e-12);
}

#[test]
fn equalize_zero_inputs_give_zero_feature() {
    let mut rng = SeedRng::new(38);
    let params = EqualizeParams::new("eq", &mut rng, 4, BpaConfig::default()).unwrap();
    let shape = Shape::nchw(1, 4, 4, 4);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let zero = tape.constant(Tensor::zeros(shape));
    let kernel = kernel_for(shape);
    // zero the fusion bias so F_sf is exactly zero
    let mut params = params;
    params.fuse.bias = Some(Tensor::zeros(Shape::nchw(1, 4, 1, 1)));
    let (f_sf, f_equal) = equalize(&tape, &mut bind, &zero, &zero, &params, &kernel).unwrap();
    assert!(f_sf.value().data().iter().all(|&v| v == 0.0));
    assert!(f_equal.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn equalize_selector_fusion_returns_first_half() {
    let mut rng = SeedRng::new(39);
    let c = 4usize;
    let mut params = EqualizeParams::new("eq", &mut rng, c, BpaConfig::default()).unwrap();
    // identity-like 1×1 fusion taking only the first half
    params.fuse.weight = Tensor::from_fn(Shape::nchw(c, 2 * c, 1, 1), |idx| {
        let oc = idx / (2 * c);
        let ic = idx % (2 * c);
        if ic == oc {
            1.0
        } else {
            0.0
        }
    });
    params.fuse.bias = Some(Tensor::zeros(Shape::nchw(1, c, 1, 1)));
    let shape = Shape::nchw(1, c, 4, 4);
    let f_fte = rng.uniform_tensor(shape, -1.0, 1.0);
    let f_fst = rng.uniform_tensor(shape, -1.0, 1.0);
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let (f_sf, _) = equalize(
        &tape,
        &mut bind,
        &tape.constant(f_fte.clone()),
        &tape.constant(f_fst),
        &params,
        &kernel_for(shape),
    )
    .unwrap();
    assert!(max_abs_diff(f_sf.value(), &f_fte).unwrap() <= 1e-12);
}

#[test]
fn equalize_pipeline_gradcheck() {
    let mut rng = SeedRng::new(40);
    let c = 4usize;
    let params = EqualizeParams::new("eq", &mut rng, c, BpaConfig::default()).unwrap();
    let shape = Shape::nchw(1, c, 6, 6);
    let kernel = kernel_for(shape);
    let f_fte = rng.uniform_tensor(shape, -0.8, 0.8);
    let f_fst = rng.uniform_tensor(shape, -0.8, 0.8);
    let report = grad_check(
        |tape, vars| {
            let mut bind = Binding::new(tape, false);
            let (_, f_equal) = equalize(tape, &mut bind, &vars[0], &vars[1], &params, &kernel)?;
            let sq = tape.mul(&f_equal, &f_equal)?;
            tape.mean_all(&sq)
        },
        &[f_fte, f_fst],
        1e-5,
        1e-4,
        None,
        0,
    )
    .unwrap();
    assert!(report.pass(), "max rel err {}", report.max_rel_err);
}
