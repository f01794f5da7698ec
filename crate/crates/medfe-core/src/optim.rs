//! Adam optimizer with per-parameter moment slots keyed by name.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::mathfn::sqrt;
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64)) -> Adam {
        Adam {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Call once per optimization step, before the `update` calls.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) {
        debug_assert_eq!(param.shape(), grad.shape());
        let (m, v) = self
            .slots
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
        let b1 = self.beta1;
        let b2 = self.beta2;
        let gd = grad.data();
        m.update(|md| {
            for (mi, gi) in md.iter_mut().zip(gd.iter()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
            }
        });
        v.update(|vd| {
            for (vi, gi) in vd.iter_mut().zip(gd.iter()) {
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            }
        });
        let bc1 = 1.0 - libm::pow(b1, self.t as f64);
        let bc2 = 1.0 - libm::pow(b2, self.t as f64);
        let lr = self.lr;
        let eps = self.eps;
        let md = m.data().to_vec();
        let vd = v.data().to_vec();
        param.update(|pd| {
            for i in 0..pd.len() {
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (sqrt(vhat) + eps);
            }
        });
    }

    /// Serializable state: the step counter plus both moments per slot.
    pub fn state_entries(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push((
            alloc::format!("{prefix}.t"),
            Tensor::scalar(self.t as f64),
        ));
        for (name, (m, v)) in &self.slots {
            out.push((alloc::format!("{prefix}.m.{name}"), m.clone()));
            out.push((alloc::format!("{prefix}.v.{name}"), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, entries: &BTreeMap<String, Tensor>) {
        if let Some(t) = entries.get(&alloc::format!("{prefix}.t")) {
            self.t = t.data()[0] as u64;
        }
        let mpre = alloc::format!("{prefix}.m.");
        for (name, tensor) in entries {
            if let Some(param) = name.strip_prefix(&mpre) {
                let vkey = alloc::format!("{prefix}.v.{param}");
                if let Some(v) = entries.get(&vkey) {
                    self.slots
                        .insert(param.to_string(), (tensor.clone(), v.clone()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn descends_a_quadratic() {
        // f(p) = 0.5·p², grad = p; Adam should shrink |p|.
        let mut adam = Adam::new(0.1, (0.5, 0.999));
        let mut p = Tensor::scalar(2.0);
        for _ in 0..100 {
            adam.begin_step();
            let g = p.clone();
            adam.update("p", &mut p, &g);
        }
        assert!(p.data()[0].abs() < 0.5, "p = {}", p.data()[0]);
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let run = |split: Option<usize>| -> Tensor {
            let mut adam = Adam::new(0.05, (0.5, 0.999));
            let mut p = Tensor::new(Shape::nchw(1, 1, 1, 2), vec![1.0, -2.0]).unwrap();
            for i in 0..20 {
                if split == Some(i) {
                    let entries: BTreeMap<String, Tensor> =
                        adam.state_entries("opt").into_iter().collect();
                    let mut fresh = Adam::new(0.05, (0.5, 0.999));
                    fresh.load_state("opt", &entries);
                    adam = fresh;
                }
                adam.begin_step();
                let g = p.map(|v| v * 0.3 + 0.01);
                adam.update("p", &mut p, &g);
            }
            p
        };
        let a = run(None);
        let b = run(Some(10));
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
