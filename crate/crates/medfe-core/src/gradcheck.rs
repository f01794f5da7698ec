//! Central-finite-difference gradient checking.
//!
//! Compares tape gradients against (f(x+ε) − f(x−ε)) / 2ε per coordinate.
//! Callers are responsible for sampling inputs away from non-differentiable
//! points (|pre-activation| comfortably above the step for kinked
//! activations).

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with a floor so near-zero gradient pairs compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    crate::mathfn::abs(analytic - numeric) / denom
}

pub struct CoordCheck {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub struct InputCheck {
    pub input: usize,
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
}

pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Checks the closure's tape gradient w.r.t. every input tensor.
///
/// `max_coords_per_input = None` perturbs every coordinate; `Some(m)`
/// perturbs a seeded random subset of `m` coordinates per input, which is
/// how whole-network pipelines stay affordable.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    max_coords_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    contract!(step > 0.0, "finite-difference step must be positive");

    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = f(&tape, &vars)?;
    contract!(
        loss.value().count() == 1,
        "grad_check closure must return a scalar"
    );
    let grads = tape.backward(&loss)?;

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        f(&tape, &vars)?.value().item()
    };

    let mut rng = SeedRng::new(seed);
    let mut report = GradCheckReport {
        inputs: Vec::new(),
        max_rel_err: 0.0,
        tol,
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let count = input.count();
        let coords: Vec<usize> = match max_coords_per_input {
            Some(m) if m < count => {
                let mut picked = Vec::with_capacity(m);
                while picked.len() < m {
                    let c = rng.usize_below(count);
                    if !picked.contains(&c) {
                        picked.push(c);
                    }
                }
                picked
            }
            _ => (0..count).collect(),
        };

        let analytic = grads.get(&vars[idx]);
        let mut check = InputCheck {
            input: idx,
            coords: Vec::with_capacity(coords.len()),
            max_rel_err: 0.0,
        };
        for coord in coords {
            let a = analytic.map_or(0.0, |g| g.data()[coord]);
            let base = input.data().to_vec();
            let mut plus = base.clone();
            plus[coord] += step;
            work[idx] = Tensor::new(input.shape(), plus)?;
            let f_plus = eval(&work)?;
            let mut minus = base;
            minus[coord] -= step;
            work[idx] = Tensor::new(input.shape(), minus)?;
            let f_minus = eval(&work)?;
            work[idx] = input.clone();
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let err = rel_err(a, numeric);
            check.max_rel_err = check.max_rel_err.max(err);
            check.coords.push(CoordCheck {
                coord,
                analytic: a,
                numeric,
            });
        }
        report.max_rel_err = report.max_rel_err.max(check.max_rel_err);
        report.inputs.push(check);
    }
    Ok(report)
}
