//! Adam with decoupled weight decay.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Parameters that never receive weight decay: biases and norm gains.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every `(name, param)` that has a gradient in `grads`.
    /// Parameters without a gradient are left alone.
    pub fn update<'a, T: Float>(
        &mut self,
        params: impl Iterator<Item = (&'a String, &'a mut Tensor<T>)>,
        grads: &HashMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::dim("adamw", g.shape(), p.shape()));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            let wd = if decays(name) { self.weight_decay } else { 0.0 };
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.to_f64_lossy();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let xv = x.to_f64_lossy();
                let step = (*mi / c1) / ((*vi / c2).sqrt() + self.eps) + wd * xv;
                *x = T::from_f64_lossy(xv - lr * step);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, values: Vec<f64>) -> (String, Tensor<f64>) {
        (name.to_string(), Tensor::new(vec![values.len()], values).unwrap())
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (name, mut p) = one("w.weight", vec![0.5, -1.0]);
        let before = p.clone();
        let grads = HashMap::from([(name.clone(), Tensor::zeros(&[2]))]);
        let mut opt = AdamW::new(0.0);
        for _ in 0..5 {
            opt.update(std::iter::once((&name, &mut p)), &grads, 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let (name, mut p) = one("w.weight", vec![1.0, 1.0]);
        let grads = HashMap::from([(name.clone(), Tensor::new(vec![2], vec![3.0, -0.5]).unwrap())]);
        AdamW::new(0.0).update(std::iter::once((&name, &mut p)), &grads, 0.01).unwrap();
        // bias-corrected first step is g / (|g| + eps)
        assert!((p.data()[0] - (1.0 - 0.01 * 3.0 / (3.0 + 1e-6))).abs() < 1e-12);
        assert!((p.data()[1] - (1.0 + 0.01 * 0.5 / (0.5 + 1e-6))).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_skips_biases_and_gains() {
        let mut opt = AdamW::new(0.5);
        let mut params = vec![one("a.weight", vec![2.0]), one("a.bias", vec![2.0]), one("n.gain", vec![2.0])];
        let grads: HashMap<_, _> = params.iter().map(|(n, _)| (n.clone(), Tensor::zeros(&[1]))).collect();
        opt.update(params.iter_mut().map(|(n, p)| (&*n, p)), &grads, 0.1).unwrap();
        assert!((params[0].1.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
        assert_eq!(params[1].1.data()[0], 2.0);
        assert_eq!(params[2].1.data()[0], 2.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let (name, mut p) = one("x.weight", vec![3.0, -2.0]);
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let g = p.map(|v| 2.0 * v);
            opt.update(std::iter::once((&name, &mut p)), &HashMap::from([(name.clone(), g)]), 0.01).unwrap();
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2), "{:?}", p.data());
    }
}
