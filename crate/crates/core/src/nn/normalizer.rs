use crate::error::{check_dim, Result};

/// Lower bound on the running standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension running mean and (sample) standard deviation, Welford-style.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_parts(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), m2.len())?;
        Ok(RunningNormalizer { count, mean, m2 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Sample standard deviation, floored; 1 until two samples are seen.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.dim()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|&m| (m / denom).sqrt().max(STD_FLOOR)).collect()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
        Ok(())
    }

    /// Standardizes `x`, folding it into the statistics first when `update`.
    pub fn normalize(&mut self, x: &[f64], update: bool) -> Result<Vec<f64>> {
        if update {
            self.update(x)?;
        }
        self.apply(x)
    }

    /// Standardizes without touching the statistics.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let std = self.std();
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut n = RunningNormalizer::new(2);
        let mut last = vec![];
        for _ in 0..10 {
            last = n.normalize(&[3.0, -1.0], true).unwrap();
        }
        assert_eq!(last, vec![0.0, 0.0]);
        assert_eq!(n.std(), vec![STD_FLOOR, STD_FLOOR]);
    }

    #[test]
    fn two_sample_stream() {
        let mut n = RunningNormalizer::new(1);
        n.update(&[1.0]).unwrap();
        let out = n.normalize(&[3.0], true).unwrap();
        assert_eq!(n.mean(), &[2.0]);
        let sigma = 2f64.sqrt();
        assert!((n.std()[0] - sigma).abs() < 1e-15);
        assert!((out[0] - 1.0 / sigma).abs() < 1e-15);
    }

    #[test]
    fn evaluation_mode_is_read_only() {
        let mut n = RunningNormalizer::new(1);
        n.update(&[1.0]).unwrap();
        n.update(&[5.0]).unwrap();
        let before = n.clone();
        n.normalize(&[100.0], false).unwrap();
        assert_eq!(n, before);
    }

    proptest! {
        #[test]
        fn matches_two_pass(xs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..2000)) {
            let mut n = RunningNormalizer::new(3);
            for x in &xs { n.update(x).unwrap(); }
            let len = xs.len() as f64;
            for d in 0..3 {
                let mean = xs.iter().map(|x| x[d]).sum::<f64>() / len;
                let var = xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / (len - 1.0);
                prop_assert!((n.mean()[d] - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
                prop_assert!((n.std()[d] - var.sqrt().max(STD_FLOOR)).abs() <= 1e-9 * (1.0 + var.sqrt()));
            }
        }
    }
}
