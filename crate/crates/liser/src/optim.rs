//! AdamW with decoupled weight decay. Decay multiplies the weights directly
//! before the moment update (never entering the gradient statistics), biases
//! and batch-norm scales are exempt via a per-tensor flag, and epsilon sits
//! outside the square root.

use crate::tensor::Tensor;
use std::error::Error;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptimError {
    WrongGradCount { params: usize, grads: usize },
    ShapeMismatch { index: usize, expected: usize, got: usize },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::WrongGradCount { params, grads } => {
                write!(f, "{params} parameter tensors but {grads} gradient tensors")
            }
            OptimError::ShapeMismatch { index, expected, got } => {
                write!(f, "parameter {index}: {expected} elements but gradient has {got}")
            }
        }
    }
}

impl Error for OptimError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWParams {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: hyperparameters, step counter, and per-tensor moments
/// allocated on first use.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub hp: AdamWParams,
    t: u64,
    slots: Vec<Moments>,
}

impl AdamW {
    pub fn new(hp: AdamWParams) -> Self {
        AdamW { hp, t: 0, slots: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameter tensors. `params` pairs each tensor
    /// with its decay flag; `grads` must align one-to-one. Tensor order and
    /// shapes must stay fixed across calls.
    pub fn step(
        &mut self,
        params: &mut [(&mut Tensor, bool)],
        grads: &[Tensor],
    ) -> std::result::Result<(), OptimError> {
        if params.len() != grads.len() {
            return Err(OptimError::WrongGradCount { params: params.len(), grads: grads.len() });
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|(p, _)| Moments { m: vec![0.0; p.numel()], v: vec![0.0; p.numel()] })
                .collect();
        } else if self.slots.len() != params.len() {
            return Err(OptimError::WrongGradCount { params: params.len(), grads: self.slots.len() });
        }
        for (i, ((p, _), g)) in params.iter().zip(grads).enumerate() {
            let expected = self.slots[i].m.len();
            if p.numel() != expected || g.numel() != expected {
                return Err(OptimError::ShapeMismatch { index: i, expected, got: g.numel() });
            }
        }
        self.t += 1;
        let hp = self.hp;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for (((p, decay), g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let theta = p.data_mut();
            let g = g.data();
            if *decay && hp.weight_decay != 0.0 {
                let shrink = 1.0 - hp.lr * hp.weight_decay;
                for t in theta.iter_mut() {
                    *t *= shrink;
                }
            }
            for i in 0..theta.len() {
                slot.m[i] = hp.beta1 * slot.m[i] + (1.0 - hp.beta1) * g[i];
                slot.v[i] = hp.beta2 * slot.v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                theta[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(vals: &[f64]) -> Tensor {
        Tensor::new(vec![vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_zero_state_no_decay_leaves_params_untouched() {
        let mut p = tensor(&[1.0, -2.5, 0.25]);
        let before = p.data().to_vec();
        let mut opt = AdamW::new(AdamWParams::new(1e-4, 0.0));
        opt.step(&mut [(&mut p, true)], &[tensor(&[0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn single_step_matches_the_closed_form() {
        // f(x) = x^2 at x=1: g=2. After one step the bias-corrected moments
        // are exactly g and g^2, so x moves by lr * g / (|g| + eps).
        let mut x = tensor(&[1.0]);
        let mut opt = AdamW::new(AdamWParams::new(1e-4, 0.0));
        opt.step(&mut [(&mut x, true)], &[tensor(&[2.0])]).unwrap();
        let want = 1.0 - 1e-4 * 2.0 / ((4.0f64).sqrt() + 1e-8);
        assert!((x.data()[0] - want).abs() < 1e-15, "{} vs {want}", x.data()[0]);
        assert!((x.data()[0] - 0.9999).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled_from_the_gradient() {
        // With a zero gradient the moments stay zero, so the only movement
        // is the multiplicative shrink. That distinguishes decoupled decay
        // from L2 regularization folded into the gradient.
        let mut p = tensor(&[1.0, -4.0]);
        let mut opt = AdamW::new(AdamWParams::new(1e-4, 0.01));
        opt.step(&mut [(&mut p, true)], &[tensor(&[0.0, 0.0])]).unwrap();
        assert_eq!(p.data(), &[1.0 * (1.0 - 1e-6), -4.0 * (1.0 - 1e-6)]);
    }

    #[test]
    fn decay_flag_exempts_a_tensor() {
        let mut a = tensor(&[1.0]);
        let mut b = tensor(&[1.0]);
        let g = [tensor(&[0.3]), tensor(&[0.3])];
        let mut opt = AdamW::new(AdamWParams::new(1e-3, 0.5));
        opt.step(&mut [(&mut a, true), (&mut b, false)], &g).unwrap();
        // Same gradient, same moments; the flagged tensor also shrank first.
        let diff = b.data()[0] - a.data()[0];
        assert!((diff - 1.0 * 1e-3 * 0.5).abs() < 1e-15, "{diff}");
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut x = tensor(&[1.0]);
        let mut opt = AdamW::new(AdamWParams::new(0.01, 0.0));
        for _ in 0..500 {
            let g = tensor(&[2.0 * x.data()[0]]);
            opt.step(&mut [(&mut x, true)], &[g]).unwrap();
        }
        assert!(x.data()[0].abs() < 1e-2, "{}", x.data()[0]);
    }

    #[test]
    fn matches_an_independent_reference_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 17;
        let mut p = tensor(&(0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<_>>());
        let mut reference = p.data().to_vec();
        let (lr, b1, b2, eps, wd) = (3e-3, 0.9, 0.999, 1e-8, 0.02);
        let mut opt = AdamW::new(AdamWParams { lr, beta1: b1, beta2: b2, eps, weight_decay: wd });
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=25 {
            let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            opt.step(&mut [(&mut p, true)], &[tensor(&g)]).unwrap();
            for i in 0..n {
                reference[i] *= 1.0 - lr * wd;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                reference[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        for (a, b) in p.data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_and_count_mismatches_error() {
        let mut p = tensor(&[1.0, 2.0]);
        let mut opt = AdamW::new(AdamWParams::new(1e-4, 0.0));
        assert!(opt.step(&mut [(&mut p, true)], &[]).is_err());
        assert!(opt.step(&mut [(&mut p, true)], &[tensor(&[1.0])]).is_err());
        // A successful step pins the layout; changing it later must fail.
        opt.step(&mut [(&mut p, true)], &[tensor(&[0.1, 0.1])]).unwrap();
        let mut q = tensor(&[1.0]);
        assert!(opt.step(&mut [(&mut q, true)], &[tensor(&[0.1])]).is_err());
    }
}
