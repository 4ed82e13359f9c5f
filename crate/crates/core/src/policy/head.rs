//! Distribution heads: the raw vector `z` a policy emits and the quantities
//! derived from it, each with its gradient with respect to `z`.
//!
//! Categorical heads are logits. Gaussian heads are `[μ_1..μ_d, ρ_1..ρ_d]`
//! with `σ_i = exp(ρ_i)`.

use rand::Rng;

use crate::distributions::{log_softmax, softmax, Categorical, DiagonalGaussian};
use crate::envs::{Action, ActionSpace};
use crate::error::{check_dim, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Categorical { actions: usize },
    Gaussian { dim: usize },
}

impl HeadKind {
    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => HeadKind::Categorical { actions: *n },
            ActionSpace::Continuous { dim, .. } => HeadKind::Gaussian { dim: *dim },
        }
    }

    /// Length of `z`.
    pub fn width(self) -> usize {
        match self {
            HeadKind::Categorical { actions } => actions,
            HeadKind::Gaussian { dim } => 2 * dim,
        }
    }

    pub fn distribution(self, z: &[f64]) -> Result<ActionDistribution> {
        check_dim(self.width(), z.len())?;
        match self {
            HeadKind::Categorical { .. } => Ok(ActionDistribution::Categorical(softmax(z)?)),
            HeadKind::Gaussian { dim } => {
                let std = z[dim..].iter().map(|r| r.exp()).collect();
                Ok(ActionDistribution::Gaussian(DiagonalGaussian::new(z[..dim].to_vec(), std)?))
            }
        }
    }

    /// `ln π(a)` and `∂ ln π(a) / ∂z`.
    pub fn log_prob(self, z: &[f64], action: &Action) -> Result<(f64, Vec<f64>)> {
        check_dim(self.width(), z.len())?;
        match (self, action) {
            (HeadKind::Categorical { actions }, Action::Discrete(a)) => {
                if *a >= actions {
                    return Err(Error::invalid(format!("action {a} out of range")));
                }
                let logp = log_softmax(z);
                let grad = logp
                    .iter()
                    .enumerate()
                    .map(|(j, &l)| f64::from(u8::from(j == *a)) - l.exp())
                    .collect();
                Ok((logp[*a], grad))
            }
            (HeadKind::Gaussian { dim }, Action::Continuous(x)) => {
                check_dim(dim, x.len())?;
                let mut lp = 0.0;
                let mut grad = vec![0.0; 2 * dim];
                for i in 0..dim {
                    let (mu, rho) = (z[i], z[dim + i]);
                    let inv_var = (-2.0 * rho).exp();
                    let d = x[i] - mu;
                    lp += -0.5 * d * d * inv_var - rho - HALF_LN_2PI;
                    grad[i] = d * inv_var;
                    grad[dim + i] = d * d * inv_var - 1.0;
                }
                Ok((lp, grad))
            }
            _ => Err(Error::invalid("action type does not match the policy head")),
        }
    }

    /// Entropy and its gradient.
    pub fn entropy(self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.width(), z.len())?;
        match self {
            HeadKind::Categorical { .. } => {
                let logp = log_softmax(z);
                let h: f64 = -logp.iter().map(|&l| l.exp() * l).sum::<f64>();
                let grad = logp.iter().map(|&l| -l.exp() * (l + h)).collect();
                Ok((h, grad))
            }
            HeadKind::Gaussian { dim } => {
                let h = z[dim..].iter().map(|&rho| 0.5 + HALF_LN_2PI + rho).sum();
                let mut grad = vec![0.0; 2 * dim];
                grad[dim..].fill(1.0);
                Ok((h, grad))
            }
        }
    }

    /// `KL(π_z ‖ π_old)` and its gradient with respect to `z`.
    pub fn kl(self, z: &[f64], z_old: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.width(), z.len())?;
        check_dim(self.width(), z_old.len())?;
        match self {
            HeadKind::Categorical { .. } => {
                let lp = log_softmax(z);
                let lq = log_softmax(z_old);
                let kl: f64 = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
                let grad = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b - kl)).collect();
                Ok((kl, grad))
            }
            HeadKind::Gaussian { dim } => {
                let mut kl = 0.0;
                let mut grad = vec![0.0; 2 * dim];
                for i in 0..dim {
                    let (m1, r1, m2, r2) = (z[i], z[dim + i], z_old[i], z_old[dim + i]);
                    let var_ratio = (2.0 * (r1 - r2)).exp();
                    let inv_var2 = (-2.0 * r2).exp();
                    kl += (r2 - r1) + 0.5 * var_ratio + 0.5 * (m1 - m2).powi(2) * inv_var2 - 0.5;
                    grad[i] = (m1 - m2) * inv_var2;
                    grad[dim + i] = var_ratio - 1.0;
                }
                Ok((kl, grad))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, z: &[f64], rng: &mut R) -> Result<Action> {
        Ok(match self.distribution(z)? {
            ActionDistribution::Categorical(d) => Action::Discrete(d.sample(rng)),
            ActionDistribution::Gaussian(d) => Action::Continuous(d.sample(rng)),
        })
    }

    /// Most likely action: lowest-index argmax, or the mean.
    pub fn greedy(self, z: &[f64]) -> Result<Action> {
        check_dim(self.width(), z.len())?;
        Ok(match self {
            HeadKind::Categorical { .. } => Action::Discrete(crate::distributions::argmax(z)),
            HeadKind::Gaussian { dim } => Action::Continuous(z[..dim].to_vec()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Categorical(Categorical),
    Gaussian(DiagonalGaussian),
}
