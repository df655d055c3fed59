use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{DropoutMasks, Network};
use super::objective::{backward_masked, Batch, ObjectiveSpec};
use crate::error::{Error, Result};

/// Hutchinson estimate of the Hessian diagonal of a function given by its
/// gradient. Each probe `z` has Rademacher entries drawn from its own
/// stream; `H z` is the forward difference of gradients with step
/// `1e-6 * (1 + |theta|)`. The estimate `mean(z * Hz)` is then averaged
/// within every block and broadcast back.
pub fn hutchinson_diag_with<F>(
    grad: F,
    theta: &[f64],
    blocks: &[Range<usize>],
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if probes < 1 {
        return Err(Error::Config("Hutchinson needs at least one probe".into()));
    }
    let dim = theta.len();
    let g0 = grad(theta)?;
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-6 * (1.0 + norm);
    let mut acc = vec![0.0; dim];
    let mut shifted = vec![0.0; dim];
    for p in 0..probes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let z: Vec<f64> = (0..dim)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for i in 0..dim {
            shifted[i] = theta[i] + h * z[i];
        }
        let g1 = grad(&shifted)?;
        for i in 0..dim {
            acc[i] += z[i] * (g1[i] - g0[i]) / h;
        }
    }
    for v in &mut acc {
        *v /= probes as f64;
    }
    for block in blocks {
        let len = block.len();
        if len == 0 {
            continue;
        }
        let mean = acc[block.clone()].iter().sum::<f64>() / len as f64;
        acc[block.clone()].iter_mut().for_each(|v| *v = mean);
    }
    Ok(acc)
}

/// Diagonal Hessian estimate of the objective at the network's parameters,
/// averaged over each weight matrix and bias vector.
pub fn hutchinson_diag(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    masks: Option<&DropoutMasks>,
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grad = |theta: &[f64]| {
        let mut local = net.clone();
        local.theta.copy_from_slice(theta);
        backward_masked(&local, batch, spec, masks)
    };
    hutchinson_diag_with(grad, &net.theta, &net.spec.param_blocks(), probes, seed)
}

/// Stability term added to the AdaHessian denominator.
pub const ADAHESSIAN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaHessianState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub hessian_power: f64,
    pub probes: usize,
}

impl AdaHessianState {
    pub fn new(
        dim: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        hessian_power: f64,
        probes: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(hessian_power > 0.0 && hessian_power <= 1.0) {
            return Err(Error::Config(format!(
                "hessian power {hessian_power} outside (0, 1]"
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {lr} must be positive"
            )));
        }
        if probes < 1 {
            return Err(Error::Config("need at least one Hutchinson probe".into()));
        }
        Ok(Self {
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            beta1,
            beta2,
            lr,
            hessian_power,
            probes,
        })
    }

    /// One update: bias-corrected moment estimates, then
    /// `theta -= lr * m_hat / (v_hat^(k/2) + eps)`.
    pub fn step(&mut self, theta: &mut [f64], gradient: &[f64], diag: &[f64]) -> Result<()> {
        let dim = self.m.len();
        if theta.len() != dim || gradient.len() != dim || diag.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "optimiser state has {dim} entries; got theta {}, gradient {}, diagonal {}",
                theta.len(),
                gradient.len(),
                diag.len()
            )));
        }
        if gradient.iter().chain(diag).any(|v| !v.is_finite()) {
            return Err(Error::DivergenceDetected {
                reason: format!("non-finite gradient or curvature at step {}", self.t + 1),
                last_good: None,
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let half_k = self.hessian_power / 2.0;
        for i in 0..dim {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gradient[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * diag[i] * diag[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.lr * m_hat / (v_hat.powf(half_k) + ADAHESSIAN_EPS);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singletons(n: usize) -> Vec<Range<usize>> {
        (0..n).map(|i| i..i + 1).collect()
    }

    #[test]
    fn quadratic_diagonal_recovered() {
        let a = [1.0, 4.0, 0.5, 10.0];
        let grad = |t: &[f64]| Ok(t.iter().zip(&a).map(|(x, a)| a * x).collect());
        let theta = [0.3, -1.0, 2.0, 0.1];
        let d = hutchinson_diag_with(grad, &theta, &singletons(4), 64, 1).unwrap();
        for (est, want) in d.iter().zip(&a) {
            assert!((est - want).abs() / want < 0.05, "{est} vs {want}");
        }
    }

    #[test]
    fn linear_function_has_zero_curvature() {
        let grad = |_: &[f64]| Ok(vec![1.0, -2.0, 3.0]);
        let d = hutchinson_diag_with(grad, &[0.0, 1.0, 2.0], &singletons(3), 8, 0).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let grad = |t: &[f64]| Ok(vec![t[0] * t[1], t[0] * t[0]]);
        let whole = [std::ops::Range { start: 0, end: 2 }];
        let a = hutchinson_diag_with(grad, &[0.5, 1.5], &whole, 5, 42).unwrap();
        let b = hutchinson_diag_with(grad, &[0.5, 1.5], &whole, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut s = AdaHessianState::new(1, 0.1, 0.9, 0.999, 1.0, 1).unwrap();
        let mut theta = [1.0f64];
        let mut steps = 0;
        while theta[0].abs() >= 1e-6 && steps < 500 {
            let g = [2.0 * theta[0]];
            s.step(&mut theta, &g, &[2.0]).unwrap();
            steps += 1;
        }
        assert!(theta[0].abs() < 1e-6, "{} after {steps}", theta[0]);
    }

    #[test]
    fn memoryless_step_formula() {
        let mut s = AdaHessianState::new(2, 0.5, 0.0, 0.0, 0.5, 1).unwrap();
        let mut theta = [1.0, 1.0];
        s.step(&mut theta, &[0.4, -0.2], &[4.0, -9.0]).unwrap();
        assert!((theta[0] - (1.0 - 0.5 * 0.4 / (2.0 + ADAHESSIAN_EPS))).abs() < 1e-15);
        assert!((theta[1] - (1.0 + 0.5 * 0.2 / (3.0 + ADAHESSIAN_EPS))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdaHessianState::new(2, 0.1, 0.9, 0.999, 1.0, 1).unwrap();
        let mut theta = [0.7, -0.3];
        s.step(&mut theta, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(theta, [0.7, -0.3]);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut s = AdaHessianState::new(1, 0.1, 0.9, 0.999, 1.0, 1).unwrap();
        let mut theta = [0.0];
        assert!(matches!(
            s.step(&mut theta, &[f64::NAN], &[1.0]),
            Err(Error::DivergenceDetected { .. })
        ));
        assert_eq!(s.t, 0);
    }
}
