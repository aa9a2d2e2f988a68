//! Poisson-based reliability from a sensor's consistency in landing in the
//! optimal set.
//!
//! Time arguments are in an abstract unit chosen by the caller; the pipeline
//! measures them in multiples of the cohort's sampling granularity, so that
//! a fully consistent sensor sits at the mode `lambda * t = n`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::SensorId;

/// `q / n` when `q < n`, otherwise 1.
pub fn lambda(q: u64, n_expected: u64) -> f64 {
    if q < n_expected {
        q as f64 / n_expected as f64
    } else {
        1.0
    }
}

/// `mean^n / n! * exp(-mean)`, evaluated in log space.
pub fn poisson_weight(mean: f64, n: u64) -> f64 {
    if mean <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n_f = n as f64;
    let log_p = n_f * mean.ln() - ln_gamma(n_f + 1.0) - mean;
    log_p.exp().clamp(0.0, 1.0)
}

/// Reliability over one interval of length `t` in which `q` of the
/// `n_expected` values were in the optimal set.
pub fn interval_reliability(q: u64, n_expected: u64, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("interval length must be positive, got {t}")));
    }
    if n_expected == 0 {
        return Err(Error::Domain("expected value count must be at least 1".into()));
    }
    poisson_reliability(lambda(q, n_expected), t, n_expected)
}

/// `(lambda t)^n / n! * exp(-lambda t)` for an explicit rate.
pub fn poisson_reliability(rate: f64, t: f64, n_expected: u64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("interval length must be positive, got {t}")));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("rate {rate} outside [0, 1]")));
    }
    Ok(poisson_weight(rate * t, n_expected))
}

/// Constant rate over the half-open span `]start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaSpan {
    pub start: f64,
    pub end: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CumulativeReliability {
    pub value: f64,
    /// Set when no history was available and the value defaulted to 0.
    pub empty_history: bool,
}

/// Reliability over `]t0, t_end]` using the integral of the piecewise-constant
/// rate history in place of `lambda * t`. Uncovered spans count as rate 0.
pub fn cumulative_reliability(
    history: &[LambdaSpan],
    n_expected: u64,
    t0: f64,
    t_end: f64,
) -> Result<CumulativeReliability> {
    if !(t_end > t0) {
        return Err(Error::Domain(format!("need t_end > t0, got ]{t0}, {t_end}]")));
    }
    if n_expected == 0 {
        return Err(Error::Domain("expected value count must be at least 1".into()));
    }
    if history.is_empty() {
        return Ok(CumulativeReliability {
            value: 0.0,
            empty_history: true,
        });
    }
    let integral: f64 = history
        .iter()
        .map(|s| {
            let covered = (s.end.min(t_end) - s.start.max(t0)).max(0.0);
            s.lambda * covered
        })
        .sum();
    Ok(CumulativeReliability {
        value: poisson_weight(integral, n_expected),
        empty_history: false,
    })
}

/// Per-sensor reliability bookkeeping. Single writer: the cohort's interval
/// loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityState {
    pub sensor_id: SensorId,
    /// Optimal-set appearances in the open interval.
    pub q: u64,
    pub n_expected: u64,
    pub interval_start: f64,
    pub lambda_history: Vec<LambdaSpan>,
    /// Reliability of the last closed interval.
    pub beta: f64,
}

impl ReliabilityState {
    /// Fresh state; β starts at the value of a fully consistent sensor over
    /// an interval of `n_expected` units.
    pub fn new(sensor_id: SensorId, n_expected: u64, start: f64) -> Result<Self> {
        let beta = interval_reliability(n_expected, n_expected, n_expected.max(1) as f64)?;
        Ok(ReliabilityState {
            sensor_id,
            q: 0,
            n_expected,
            interval_start: start,
            lambda_history: Vec::new(),
            beta,
        })
    }

    pub fn record_observation(&mut self, in_optimal: bool) {
        if in_optimal {
            self.q += 1;
        }
    }

    /// Closes `]interval_start, end]`, stores its rate, updates β and opens
    /// the next interval.
    pub fn close_interval(&mut self, end: f64) -> Result<f64> {
        let t = end - self.interval_start;
        let beta = interval_reliability(self.q, self.n_expected, t)?;
        self.lambda_history.push(LambdaSpan {
            start: self.interval_start,
            end,
            lambda: lambda(self.q, self.n_expected),
        });
        self.beta = beta;
        self.q = 0;
        self.interval_start = end;
        Ok(beta)
    }

    /// Cumulative reliability over all closed intervals since `t0`.
    pub fn cumulative(&self, t0: f64) -> Result<CumulativeReliability> {
        let end = self.lambda_history.last().map(|s| s.end).unwrap_or(t0);
        if end <= t0 {
            return Ok(CumulativeReliability {
                value: 0.0,
                empty_history: true,
            });
        }
        let n = self.n_expected * self.lambda_history.len() as u64;
        cumulative_reliability(&self.lambda_history, n, t0, end)
    }
}
