use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    /// Clamp on the implied clean latent when forming the posterior mean.
    pub x0_clip: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Cosine, steps: 50, x0_clip: Some(DEFAULT_X0_CLIP) }
    }
}

pub const DEFAULT_X0_CLIP: f64 = 4.0;

/// Variance-preserving schedule indexed by `t = 0..=T`; index 0 is clean data.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    x0_clip: Option<f64>,
}

const MAX_BETA: f64 = 0.999;

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("a schedule needs T >= 2, got {steps}")));
    }
    let t_max = steps as f64;
    let mut beta = vec![0.0; steps + 1];
    match kind {
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| ((t / t_max + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            for t in 1..=steps {
                beta[t] = (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(0.0, MAX_BETA);
            }
        }
        ScheduleKind::Linear => {
            let scale = 1000.0 / t_max;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            for t in 1..=steps {
                beta[t] = (lo + (hi - lo) * (t - 1) as f64 / (t_max - 1.0)).min(MAX_BETA);
            }
        }
    }
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
    }
    Ok(NoiseSchedule { kind, beta, alpha_bar, x0_clip: None })
}

impl NoiseSchedule {
    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        if cfg.x0_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("x0_clip must be positive".into()));
        }
        Ok(make_schedule(cfg.steps, cfg.kind)?.with_x0_clip(cfg.x0_clip))
    }

    pub fn with_x0_clip(mut self, clip: Option<f64>) -> Self {
        self.x0_clip = clip;
        self
    }

    pub fn x0_clip(&self) -> Option<f64> {
        self.x0_clip
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Signal scale `α_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// Noise scale `σ_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Posterior variance of `z_{t-1}` given `z_t` and `z_0`. At `t = 1`
    /// the exact value is zero, so the `t = 2` value is used instead.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "t out of range");
        let t = t.max(2);
        self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    /// Coefficients `(a, b)` of the posterior mean `μ = a·z_t − b·ε̂`.
    pub fn mean_coefficients(&self, t: usize) -> (f64, f64) {
        let a = 1.0 / (1.0 - self.beta[t]).sqrt();
        (a, a * self.beta[t] / (1.0 - self.alpha_bar[t]).sqrt())
    }
}

impl NoiseSchedule {
    /// `(1/α_t, σ_t/α_t)` so that `x̂0 = z_t/α_t − (σ_t/α_t)·ε̂`.
    pub fn x0_coefficients(&self, t: usize) -> (f64, f64) {
        (1.0 / self.alpha(t), self.sigma(t) / self.alpha(t))
    }

    /// `(c_x0, c_z)` of the posterior mean `μ = c_x0·x̂0 + c_z·z_t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let denom = 1.0 - self.alpha_bar[t];
        (self.alpha_bar[t - 1].sqrt() * self.beta[t] / denom, (1.0 - self.beta[t]).sqrt() * (1.0 - self.alpha_bar[t - 1]) / denom)
    }

    /// Posterior mean from a noise prediction. With a clip set, the implied
    /// clean sample is clamped to `[-clip, clip]` first.
    pub fn posterior_mean(&self, z_t: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        match self.x0_clip {
            None => {
                let (a, b) = self.mean_coefficients(t);
                z_t.iter().zip(eps).map(|(z, e)| a * z - b * e).collect()
            }
            Some(c) => {
                let (ia, sa) = self.x0_coefficients(t);
                let (cx, cz) = self.posterior_coefficients(t);
                z_t.iter().zip(eps).map(|(z, e)| cx * (ia * z - sa * e).clamp(-c, c) + cz * z).collect()
            }
        }
    }
}

/// Gaussian log-density of `x` under `N(mean, var)` summed over coordinates.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    x.iter().zip(mean).map(|(a, m)| norm - (a - m).powi(2) / (2.0 * var)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_preserving_for_every_family() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(50, kind).unwrap();
            for t in 0..=50 {
                assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-6);
            }
            for t in 1..=50 {
                assert!(s.alpha(t) < s.alpha(t - 1));
            }
            assert_eq!(s.alpha(0), 1.0);
        }
    }

    #[test]
    fn cosine_endpoint_is_nearly_pure_noise() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha(10) > s.alpha(40));
        assert!(s.sigma(50) / s.alpha(50) >= 100.0);
    }

    #[test]
    fn too_short_schedule_is_rejected() {
        assert!(make_schedule(1, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn logpdf_closed_forms() {
        let var = 0.3;
        let m = [0.1, -0.4, 2.0];
        let at_mean = gaussian_logpdf(&m, &m, var);
        assert!((at_mean + 1.5 * (2.0 * std::f64::consts::PI * var).ln()).abs() < 1e-12);
        assert!((gaussian_logpdf(&[1.0], &[0.0], 1.0) - (-0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5)).abs() < 1e-12);
        assert!((gaussian_logpdf(&[1.0], &[0.0], 1.0) + 1.4189385332).abs() < 1e-9);
    }

    #[test]
    fn unclipped_mean_forms_agree() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let (z, e) = ([0.3, -1.2, 2.0], [0.5, 0.1, -0.7]);
        for t in [1, 2, 25, 49] {
            let a = s.posterior_mean(&z, &e, t);
            let b = s.clone().with_x0_clip(Some(1e9)).posterior_mean(&z, &e, t);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn clipped_mean_stays_bounded_at_the_noisy_end() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap().with_x0_clip(Some(3.0));
        let (cx, cz) = s.posterior_coefficients(50);
        let mu = s.posterior_mean(&[0.0], &[-1.0], 50);
        assert!((mu[0] - cx * 3.0 - cz * 0.0).abs() < 1e-12);
        assert!(mu[0].abs() < 1.0);
    }

    #[test]
    fn linear_endpoint_is_nearly_pure_noise() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        assert!(s.sigma(50) / s.alpha(50) >= 100.0);
    }

    #[test]
    fn first_step_variance_is_clipped() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert!(s.posterior_variance(1) > 0.0);
        assert_eq!(s.posterior_variance(1), s.posterior_variance(2));
    }
}
