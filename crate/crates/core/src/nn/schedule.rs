/// `α_t = α_0 τ^{t/δt}`.
pub fn lr_exponential_decay(alpha0: f64, tau: f64, delta_t: u64, t: u64) -> f64 {
    debug_assert!(alpha0 > 0.0 && tau > 0.0 && tau <= 1.0 && delta_t > 0);
    alpha0 * tau.powf(t as f64 / delta_t as f64)
}

/// Staircase variant: `α_0 τ^{⌊t/δt⌋}`.
pub fn lr_staircase_decay(alpha0: f64, tau: f64, delta_t: u64, t: u64) -> f64 {
    debug_assert!(alpha0 > 0.0 && tau > 0.0 && tau <= 1.0 && delta_t > 0);
    alpha0 * tau.powi((t / delta_t) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialDecay {
    pub alpha0: f64,
    pub tau: f64,
    pub delta_t: u64,
    pub staircase: bool,
}

impl ExponentialDecay {
    pub fn constant(alpha: f64) -> Self {
        ExponentialDecay {
            alpha0: alpha,
            tau: 1.0,
            delta_t: 1,
            staircase: false,
        }
    }

    pub fn rate(&self, t: u64) -> f64 {
        if self.staircase {
            lr_staircase_decay(self.alpha0, self.tau, self.delta_t, t)
        } else {
            lr_exponential_decay(self.alpha0, self.tau, self.delta_t, t)
        }
    }
}
