//! Categorical and diagonal-Gaussian action distributions. All logs are natural.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Floor applied to probabilities inside entropy/KL sums.
pub const PROB_FLOOR: f64 = 1e-12;

const SIMPLEX_TOLERANCE: f64 = 1e-9;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DegenerateInput("empty categorical".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("categorical probabilities must be >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("categorical probabilities sum to {total}")));
        }
        Ok(Categorical { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Categorical {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Lowest index of the largest probability.
    pub fn mode(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn entropy(&self) -> f64 {
        categorical_entropy(self)
    }

    pub fn log_prob(&self, action: usize) -> Result<f64> {
        let p = *self
            .probs
            .get(action)
            .ok_or_else(|| Error::Support(format!("action {action} out of range")))?;
        if p <= 0.0 {
            return Err(Error::Support(format!("action {action} has zero probability")));
        }
        Ok(p.ln())
    }

    /// Inverse-CDF sampling over the cumulative probabilities.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return i;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("gaussian std must be > 0"));
        }
        Ok(DiagonalGaussian { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((&mu, &sigma), &xi)| {
                let z = (xi - mu) / sigma;
                -0.5 * z * z - sigma.ln() - HALF_LN_2PI
            })
            .sum())
    }

    /// `μ + σ·z` with `z ~ N(0, 1)` per dimension.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&mu, &sigma)| {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            })
            .collect()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(preferences: &[f64]) -> Result<Categorical> {
    if preferences.is_empty() {
        return Err(Error::DegenerateInput("softmax of an empty vector".into()));
    }
    let max = preferences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite(format!("softmax input {preferences:?}")));
    }
    let exps: Vec<f64> = preferences.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Categorical {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// `ln softmax(x)` computed without forming the probabilities first.
pub fn log_softmax(preferences: &[f64]) -> Vec<f64> {
    let max = preferences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + preferences.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    preferences.iter().map(|&x| x - lse).collect()
}

/// Surprise of an event with probability `p`: `−ln p`.
pub fn information_content(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Support(format!("probability {p} outside (0, 1]")));
    }
    Ok(-p.ln())
}

pub fn categorical_entropy(d: &Categorical) -> f64 {
    -d.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// `KL(p ‖ q) = Σ p ln(p / q)`.
pub fn categorical_kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::Support(format!(
                "q assigns zero probability to outcome {i} where p > 0"
            )));
        }
        total += pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln());
    }
    Ok(total.max(0.0))
}

/// `Σ_i (½ + ½ ln 2π + ln σ_i)`.
pub fn gaussian_entropy(d: &DiagonalGaussian) -> f64 {
    d.std.iter().map(|&s| 0.5 + HALF_LN_2PI + s.ln()).sum()
}

/// `Σ_i ln(σ_Q/σ_P) + (σ_P² + (μ_P − μ_Q)²)/(2σ_Q²) − ½`.
pub fn gaussian_kl(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    Ok((0..p.dim())
        .map(|i| {
            let (mp, sp, mq, sq) = (p.mean[i], p.std[i], q.mean[i], q.std[i]);
            (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5
        })
        .sum())
}

pub fn tanh_squash(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|x| x.tanh()).collect()
}
