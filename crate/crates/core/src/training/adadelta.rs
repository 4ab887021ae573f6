use crate::params::{Gradients, ParamStore};
use crate::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Adadelta optimizer state: decaying averages of squared gradients and of
/// squared updates, one pair of buffers per parameter.
///
/// ```text
/// E[g²]  ← ρ E[g²] + (1 − ρ) g²
/// Δx     = −√(E[Δx²] + ε) / √(E[g²] + ε) · g
/// E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δx²
/// x      ← x + Δx
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    rho: f64,
    epsilon: f64,
    sq_grad: Vec<Vec<f64>>,
    sq_update: Vec<Vec<f64>>,
}

impl Adadelta {
    pub fn new(params: &ParamStore, rho: f64, epsilon: f64) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| vec![0.0; params.get(id).len()])
                .collect()
        };
        Self {
            rho,
            epsilon,
            sq_grad: zeros(),
            sq_update: zeros(),
        }
    }

    pub fn sq_grad(&self) -> &[Vec<f64>] {
        &self.sq_grad
    }

    pub fn sq_update(&self) -> &[Vec<f64>] {
        &self.sq_update
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient: their accumulators decay and they stay put.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.sq_grad.len() != params.len() {
            return Err(Error::Dimension {
                what: "gradient set",
                expected: params.len(),
                actual: grads.len(),
            });
        }
        // validate everything before touching any parameter
        for id in params.ids() {
            let len = params.get(id).len();
            let actual = grads.get(id).map_or(len, <[f64]>::len);
            let acc = self.sq_grad[id.index()].len();
            if actual != len || acc != len {
                return Err(Error::Dimension {
                    what: "gradient",
                    expected: len,
                    actual: if actual != len { actual } else { acc },
                });
            }
        }
        for id in params.ids() {
            let len = params.get(id).len();
            let i = id.index();
            let (eg, ex) = (&mut self.sq_grad[i], &mut self.sq_update[i]);
            let Some(g) = grads.get(id) else {
                eg.iter_mut()
                    .chain(ex.iter_mut())
                    .for_each(|a| *a *= self.rho);
                continue;
            };
            let x = params.get_mut(id).data_mut();
            let (rho, eps) = (self.rho, self.epsilon);
            for j in 0..len {
                eg[j] = rho * eg[j] + (1.0 - rho) * g[j] * g[j];
                let dx = -((ex[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * g[j];
                ex[j] = rho * ex[j] + (1.0 - rho) * dx * dx;
                x[j] += dx;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", ParamKind::Bias, Tensor::vector(vec![1.0, -2.0]));
        s.insert("b", ParamKind::Bias, Tensor::scalar(0.5));
        s
    }

    #[test]
    fn zero_gradient_is_a_fixpoint() {
        let mut params = store();
        let before = params.clone();
        let mut opt = Adadelta::new(&params, DEFAULT_RHO, DEFAULT_EPSILON);
        // prime the accumulators, then apply zero gradients
        let mut g = Gradients::zeros_like(&params);
        for id in params.ids() {
            g.set(id, vec![0.0; params.get(id).len()]);
        }
        opt.step(&mut params, &g).unwrap();
        let zero = Gradients::zeros_like(&params);
        opt.step(&mut params, &zero).unwrap();
        for id in params.ids() {
            assert_eq!(params.get(id), before.get(id));
        }
    }

    #[test]
    fn accumulators_decay_under_zero_gradient() {
        let mut params = store();
        let mut opt = Adadelta::new(&params, 0.9, 1e-6);
        let mut g = Gradients::zeros_like(&params);
        let a = params.find("a").unwrap();
        g.set(a, vec![1.0, 2.0]);
        opt.step(&mut params, &g).unwrap();
        let (eg, ex) = (opt.sq_grad()[0].clone(), opt.sq_update()[0].clone());
        let zero = Gradients::zeros_like(&params);
        opt.step(&mut params, &zero).unwrap();
        for j in 0..2 {
            assert!((opt.sq_grad()[0][j] - 0.9 * eg[j]).abs() < 1e-18);
            assert!((opt.sq_update()[0][j] - 0.9 * ex[j]).abs() < 1e-24);
        }
    }

    #[test]
    fn first_step_closed_form() {
        let (rho, eps, g0) = (0.95, 1e-6, 0.37);
        let mut params = ParamStore::new();
        let id = params.insert("x", ParamKind::Bias, Tensor::scalar(1.0));
        let mut opt = Adadelta::new(&params, rho, eps);
        let mut g = Gradients::zeros_like(&params);
        g.set(id, vec![g0]);
        opt.step(&mut params, &g).unwrap();
        let expected = -eps.sqrt() * g0 / ((1.0 - rho) * g0 * g0 + eps).sqrt();
        assert!((params.get(id).data()[0] - (1.0 + expected)).abs() < 1e-15);
    }

    #[test]
    fn accumulators_stay_nonnegative() {
        let mut params = store();
        let mut opt = Adadelta::new(&params, DEFAULT_RHO, DEFAULT_EPSILON);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut g = Gradients::zeros_like(&params);
            for id in params.ids() {
                let n = params.get(id).len();
                g.set(id, (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect());
            }
            opt.step(&mut params, &g).unwrap();
            assert!(opt
                .sq_grad()
                .iter()
                .chain(opt.sq_update())
                .flatten()
                .all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut params = store();
        let mut opt = Adadelta::new(&params, DEFAULT_RHO, DEFAULT_EPSILON);
        let mut g = Gradients::zeros_like(&params);
        g.set(params.find("a").unwrap(), vec![1.0]);
        assert!(matches!(
            opt.step(&mut params, &g),
            Err(Error::Dimension { .. })
        ));
    }
}
