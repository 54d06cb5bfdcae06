//! Classical (measure-and-reprepare) memory benchmark for weak coherent inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid benchmark input: {0}")]
    Invalid(String),
}

/// Poisson tail left out of threshold sums.
pub const POISSON_TAIL: f64 = 1e-12;
/// Multiplies the LG(l) characteristic radius before comparing it with the
/// control waist.
pub const COVERAGE_FACTOR: f64 = 0.5;

/// Best intercept-resend fidelity `(N+1)/(N+2)` for `N` photons.
pub fn classical_fidelity_fock(n: u64) -> f64 {
    (n as f64 + 1.0) / (n as f64 + 2.0)
}

/// Whether vacuum pulses count toward the cheating memory's acceptance budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VacuumConvention {
    #[default]
    Included,
    Excluded,
}

/// Poisson probabilities `P(N)` up to the point where the remaining tail is
/// below [`POISSON_TAIL`].
pub fn poisson_weights(mean: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = (-mean).exp();
    let mut cum = 0.0;
    let mut n = 0u64;
    loop {
        out.push(p);
        cum += p;
        if 1.0 - cum < POISSON_TAIL && n as f64 > mean {
            break;
        }
        n += 1;
        p *= mean / n as f64;
        if n > 100_000 {
            break;
        }
    }
    out
}

/// Optimal acceptance-weighted fidelity for an arbitrary photon-number
/// distribution `weights` (indexed by `N`, normalized to its own sum) when the
/// memory answers on a fraction `eta` of the pulses: pulses are accepted from
/// the largest `N` downward, fractionally at the boundary.
pub fn threshold_for_distribution(weights: &[f64], eta: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return 0.5;
    }
    let budget = (eta * total).min(total);
    let mut remaining = budget;
    let mut acc = 0.0;
    for (n, &p) in weights.iter().enumerate().rev() {
        if remaining <= 0.0 {
            break;
        }
        let take = p.min(remaining);
        acc += take * classical_fidelity_fock(n as u64);
        remaining -= take;
    }
    acc / (budget - remaining.max(0.0))
}

pub fn classical_threshold(mean: f64, eta: f64) -> f64 {
    classical_threshold_with(mean, eta, VacuumConvention::Included)
}

pub fn classical_threshold_with(mean: f64, eta: f64, vacuum: VacuumConvention) -> f64 {
    let mut w = poisson_weights(mean);
    if vacuum == VacuumConvention::Excluded {
        w[0] = 0.0;
    }
    threshold_for_distribution(&w, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkInput {
    pub mean_photon_number: f64,
    pub eta: f64,
    pub eta_sigma: f64,
    pub fidelity: f64,
    pub fidelity_sigma: f64,
    #[serde(default)]
    pub vacuum: VacuumConvention,
}

impl BenchmarkInput {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.mean_photon_number > 0.0) || !self.mean_photon_number.is_finite() {
            return Err(BenchError::Invalid("mean photon number must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(BenchError::Invalid("eta must lie in (0,1]".into()));
        }
        if !(self.eta_sigma >= 0.0) || !(self.fidelity_sigma >= 0.0) {
            return Err(BenchError::Invalid("uncertainties must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_quantum: bool,
    pub sigmas: f64,
    pub threshold: f64,
    pub threshold_lo: f64,
    pub threshold_hi: f64,
    pub sigma_total: f64,
}

/// Distance of the measured fidelity above the threshold in combined standard
/// deviations; the threshold spread is half the band over `eta ± eta_sigma`.
pub fn verdict(b: &BenchmarkInput) -> Result<Verdict, BenchError> {
    b.validate()?;
    let thr = |eta: f64| classical_threshold_with(b.mean_photon_number, eta.clamp(1e-9, 1.0), b.vacuum);
    let threshold = thr(b.eta);
    // a higher efficiency lowers the threshold
    let threshold_hi = thr(b.eta - b.eta_sigma);
    let threshold_lo = thr(b.eta + b.eta_sigma);
    let spread = 0.5 * (threshold_hi - threshold_lo);
    let sigma_total = b.fidelity_sigma.hypot(spread);
    let diff = b.fidelity - threshold;
    let sigmas = if diff == 0.0 {
        0.0
    } else if sigma_total > 0.0 {
        diff / sigma_total
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(Verdict {
        is_quantum: sigmas > 0.0,
        sigmas,
        threshold,
        threshold_lo,
        threshold_hi,
        sigma_total,
    })
}

/// Largest `l` whose LG radius `w_q sqrt(l/2)`, scaled by the coverage
/// factor, still fits inside the control waist.
pub fn mode_capacity(control_waist: f64, qubit_waist: f64) -> Result<u64, BenchError> {
    if !(control_waist > 0.0 && qubit_waist > 0.0) {
        return Err(BenchError::Invalid("waists must be positive".into()));
    }
    let ratio = control_waist / (COVERAGE_FACTOR * qubit_waist);
    Ok((2.0 * ratio * ratio + 1e-9).floor() as u64)
}

/// Threshold curve row: `(n̄, F_eta=1, F_eta, F_eta-σ, F_eta+σ)`.
pub fn threshold_curve(means: &[f64], eta: f64, eta_sigma: f64, vacuum: VacuumConvention) -> Vec<[f64; 5]> {
    means
        .iter()
        .map(|&n| {
            [
                n,
                classical_threshold_with(n, 1.0, vacuum),
                classical_threshold_with(n, eta, vacuum),
                classical_threshold_with(n, (eta - eta_sigma).max(1e-9), vacuum),
                classical_threshold_with(n, (eta + eta_sigma).min(1.0), vacuum),
            ]
        })
        .collect()
}

/// `count` log-spaced values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
        .collect()
}
