//! Local Bayesian occupancy estimation at each cell head.
//!
//! Each of the `m` SUs in a cell observes the PU state through a binary
//! asymmetric channel; the head only needs the number of "occupied" votes.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::OccupancyModel;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("sensor error rates must satisfy 0 <= eps < 1 and eps_f + eps_m < 1, got ({0}, {1})")]
    BadRates(f64, f64),
    #[error("observation of {xi} detections out of {m} is impossible under both hypotheses")]
    Inconsistent { xi: u32, m: u32 },
    #[error("detection count {xi} exceeds the {m} sensors")]
    CountOutOfRange { xi: u32, m: u32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub eps_f: f64,
    pub eps_m: f64,
}

impl SensorModel {
    pub fn new(eps_f: f64, eps_m: f64) -> Result<Self, SensingError> {
        let s = Self { eps_f, eps_m };
        s.validate()?;
        Ok(s)
    }

    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        let ok = (0.0..1.0).contains(&self.eps_f) && (0.0..1.0).contains(&self.eps_m) && self.eps_f + self.eps_m < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SensingError::BadRates(self.eps_f, self.eps_m))
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.eps_f == 0.0 && self.eps_m == 0.0
    }
}

/// Prior and posterior occupancy probability of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalBelief {
    pub prior: f64,
    pub posterior: f64,
}

impl LocalBelief {
    /// Steady-state start: both prior and posterior at `pi_b`.
    pub fn steady(model: &OccupancyModel) -> Self {
        Self {
            prior: model.pi_b,
            posterior: model.pi_b,
        }
    }

    /// Folds in one frame of detections and returns the new posterior. The
    /// prior for the following frame is propagated immediately.
    pub fn observe(&mut self, sensor: &SensorModel, occupancy: &OccupancyModel, xi: u32, m: u32) -> Result<f64, SensingError> {
        self.posterior = posterior_update(sensor, self.prior, xi, m)?;
        self.prior = prior_propagate(occupancy, self.posterior);
        Ok(self.posterior)
    }
}

/// Number of SUs reporting "occupied" out of `m`.
pub fn sample_detection_count<R: Rng + ?Sized>(sensor: &SensorModel, occupied: bool, m: u32, rng: &mut R) -> u32 {
    let p = if occupied { 1.0 - sensor.eps_m } else { sensor.eps_f };
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return m;
    }
    Binomial::new(m as u64, p).expect("p in (0, 1)").sample(rng) as u32
}

/// `k * ln(p)` with the convention `0^0 = 1`.
fn log_pow(p: f64, k: u32) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

/// Posterior occupancy probability after `xi` of `m` detections, evaluated
/// in log space.
pub fn posterior_update(sensor: &SensorModel, prior: f64, xi: u32, m: u32) -> Result<f64, SensingError> {
    if xi > m {
        return Err(SensingError::CountOutOfRange { xi, m });
    }
    let log_busy = prior.ln() + log_pow(1.0 - sensor.eps_m, xi) + log_pow(sensor.eps_m, m - xi);
    let log_idle = (1.0 - prior).ln() + log_pow(sensor.eps_f, xi) + log_pow(1.0 - sensor.eps_f, m - xi);
    if log_busy == f64::NEG_INFINITY && log_idle == f64::NEG_INFINITY {
        return Err(SensingError::Inconsistent { xi, m });
    }
    if log_busy == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if log_idle == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    // 1 / (1 + exp(log_idle - log_busy)), the logistic of the log-likelihood ratio.
    Ok(1.0 / (1.0 + (log_idle - log_busy).exp()))
}

/// One-step prediction of the occupancy probability.
pub fn prior_propagate(model: &OccupancyModel, posterior: f64) -> f64 {
    (1.0 - model.mu) * model.pi_b + model.mu * posterior
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn noiseless_counts() {
        let s = SensorModel::noiseless();
        let mut rng = stream(1, &[]);
        for _ in 0..20 {
            assert_eq!(sample_detection_count(&s, true, 5, &mut rng), 5);
            assert_eq!(sample_detection_count(&s, false, 5, &mut rng), 0);
        }
    }

    #[test]
    fn false_alarm_mean() {
        let s = SensorModel::new(0.1, 0.0).unwrap();
        let mut rng = stream(2, &[]);
        let m = 10_000u32;
        let draws = 200;
        let mean = (0..draws).map(|_| sample_detection_count(&s, false, m, &mut rng) as f64).sum::<f64>() / draws as f64;
        let sd = (m as f64 * 0.1 * 0.9 / draws as f64).sqrt();
        assert!((mean - 1000.0).abs() < 3.0 * sd, "{mean}");
    }

    #[test]
    fn noiseless_posterior_is_exact() {
        let s = SensorModel::noiseless();
        assert_eq!(posterior_update(&s, 0.3, 4, 4).unwrap(), 1.0);
        assert_eq!(posterior_update(&s, 0.3, 0, 4).unwrap(), 0.0);
        assert_eq!(
            posterior_update(&s, 0.3, 2, 4),
            Err(SensingError::Inconsistent { xi: 2, m: 4 })
        );
    }

    #[test]
    fn hand_bayes_example() {
        // 0.5 * 0.8^2 / (0.5 * 0.8^2 + 0.5 * 0.1^2) = 0.64 / 0.65
        let s = SensorModel::new(0.1, 0.2).unwrap();
        let p = posterior_update(&s, 0.5, 2, 2).unwrap();
        assert!((p - 0.64 / 0.65).abs() < 1e-12);
        assert!((p - 0.98462).abs() < 1e-5);
    }

    #[test]
    fn zero_prior_stays_zero() {
        let s = SensorModel::new(0.1, 0.2).unwrap();
        for xi in 0..=6 {
            assert_eq!(posterior_update(&s, 0.0, xi, 6).unwrap(), 0.0);
        }
    }

    #[test]
    fn large_population_does_not_underflow() {
        let s = SensorModel::new(0.1, 0.1).unwrap();
        let p = posterior_update(&s, 0.05, 2600, 5000).unwrap();
        assert!(p > 0.999 && p <= 1.0, "{p}");
        let q = posterior_update(&s, 0.05, 2400, 5000).unwrap();
        assert!((0.0..1e-3).contains(&q));
    }

    #[test]
    fn prior_propagation() {
        let m = OccupancyModel::reference();
        assert!((prior_propagate(&m, m.pi_b) - m.pi_b).abs() < 1e-15);
        assert!((prior_propagate(&m, 1.0) - 0.905).abs() < 1e-12);
        let memoryless = OccupancyModel::new(0.3, 0.7).unwrap();
        assert!((prior_propagate(&memoryless, 0.9) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bad_rates_rejected() {
        assert!(SensorModel::new(0.6, 0.5).is_err());
        assert!(SensorModel::new(1.0, 0.0).is_err());
    }
}
