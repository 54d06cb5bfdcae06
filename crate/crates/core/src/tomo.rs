//! Single-qubit tomography from counts in the three cardinal bases.

use crate::mode::{Cardinal, OamQubit};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TomoError {
    #[error("basis {0}/{1} has no counts")]
    EmptyBasis(&'static str, &'static str),
    #[error("invalid counts table: {0}")]
    Invalid(String),
    #[error("counts table format: {0}")]
    Format(String),
}

/// Outcome order used for the table arrays.
pub const OUTCOMES: [Cardinal; 6] = Cardinal::ALL;

fn slot(c: Cardinal) -> usize {
    OUTCOMES.iter().position(|&o| o == c).expect("cardinal")
}

/// Counts per outcome, the background expected in each, the pulses spent on
/// each outcome's setting, and the Poisson variance of each count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub counts: [f64; 6],
    pub background: [f64; 6],
    pub pulses: [f64; 6],
    pub variance: [f64; 6],
    /// Outcomes whose background exceeded the counts during subtraction.
    #[serde(default)]
    pub clamped: Vec<Cardinal>,
}

impl CountsTable {
    pub fn new(counts: [f64; 6], background: [f64; 6], pulses: [f64; 6]) -> Result<Self, TomoError> {
        let t = CountsTable {
            counts,
            background,
            pulses,
            variance: counts,
            clamped: Vec::new(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Table with expected counts `pulses · p(outcome)` for a density matrix.
    pub fn exact(rho: &DensityMatrix2, pulses: f64) -> Self {
        let counts = OUTCOMES.map(|c| pulses * rho.probability(&c.qubit()));
        CountsTable {
            counts,
            background: [0.0; 6],
            pulses: [pulses; 6],
            variance: counts,
            clamped: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TomoError> {
        let ok = |v: &[f64; 6]| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !ok(&self.counts) || !ok(&self.background) || !ok(&self.variance) {
            return Err(TomoError::Invalid("counts, backgrounds and variances must be non-negative".into()));
        }
        if !self.pulses.iter().all(|p| *p > 0.0 && p.is_finite()) {
            return Err(TomoError::Invalid("pulses must be positive".into()));
        }
        Ok(())
    }

    pub fn get(&self, c: Cardinal) -> f64 {
        self.counts[slot(c)]
    }

    fn rate(&self, c: Cardinal) -> f64 {
        self.counts[slot(c)] / self.pulses[slot(c)]
    }

    /// CSV with columns `outcome,counts,background,pulses`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TomoError> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| TomoError::Format(e.to_string());
        out.write_record(["outcome", "counts", "background", "pulses"]).map_err(err)?;
        for (k, c) in OUTCOMES.iter().enumerate() {
            out.write_record([
                c.name().to_string(),
                format!("{}", self.counts[k]),
                format!("{}", self.background[k]),
                format!("{}", self.pulses[k]),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| TomoError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TomoError> {
        #[derive(Deserialize)]
        struct Row {
            outcome: String,
            counts: f64,
            #[serde(default)]
            background: f64,
            pulses: f64,
        }
        let mut counts = [f64::NAN; 6];
        let mut background = [0.0; 6];
        let mut pulses = [f64::NAN; 6];
        for row in csv::Reader::from_reader(r).deserialize::<Row>() {
            let row = row.map_err(|e| TomoError::Format(e.to_string()))?;
            let c: Cardinal = row.outcome.parse().map_err(TomoError::Format)?;
            let k = slot(c);
            counts[k] = row.counts;
            background[k] = row.background;
            pulses[k] = row.pulses;
        }
        if let Some(k) = counts.iter().position(|c| c.is_nan()) {
            return Err(TomoError::Format(format!("missing outcome {}", OUTCOMES[k].name())));
        }
        CountsTable::new(counts, background, pulses)
    }
}

/// `counts - background`, clamped at zero; variances keep the raw Poisson
/// value so uncertainties stay honest after subtraction.
pub fn background_subtract(t: &CountsTable) -> CountsTable {
    let mut out = t.clone();
    for k in 0..6 {
        let v = t.counts[k] - t.background[k];
        if v < 0.0 {
            out.clamped.push(OUTCOMES[k]);
        }
        out.counts[k] = v.max(0.0);
        out.background[k] = 0.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s1, s2, s3 }
    }

    pub fn of(q: &OamQubit) -> Self {
        let [s1, s2, s3] = q.bloch_vector();
        StokesVector { s1, s2, s3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn dot(&self, o: &StokesVector) -> f64 {
        self.s1 * o.s1 + self.s2 * o.s2 + self.s3 * o.s3
    }
}

/// Per-pair normalized Stokes vector: `S1 = p_H - p_V`, `S2 = p_D - p_A`,
/// `S3 = p_R - p_L`, using rates (counts per pulse).
pub fn stokes_from_counts(t: &CountsTable) -> Result<StokesVector, TomoError> {
    let pair = |a: Cardinal, b: Cardinal| -> Result<f64, TomoError> {
        let (ra, rb) = (t.rate(a), t.rate(b));
        if !(ra + rb > 0.0) {
            return Err(TomoError::EmptyBasis(a.name(), b.name()));
        }
        Ok((ra - rb) / (ra + rb))
    };
    Ok(StokesVector {
        s1: pair(Cardinal::H, Cardinal::V)?,
        s2: pair(Cardinal::D, Cardinal::A)?,
        s3: pair(Cardinal::R, Cardinal::L)?,
    })
}

/// Standard deviations of the Stokes components from Poisson propagation.
pub fn stokes_sigma(t: &CountsTable) -> [f64; 3] {
    let pair = |a: Cardinal, b: Cardinal| {
        let (ka, kb) = (slot(a), slot(b));
        let (ra, rb) = (t.rate(a), t.rate(b));
        let sum = ra + rb;
        if !(sum > 0.0) {
            return 1.0;
        }
        let da = 2.0 * rb / (sum * sum) / t.pulses[ka];
        let db = 2.0 * ra / (sum * sum) / t.pulses[kb];
        (da * da * t.variance[ka] + db * db * t.variance[kb]).sqrt()
    };
    [
        pair(Cardinal::H, Cardinal::V),
        pair(Cardinal::D, Cardinal::A),
        pair(Cardinal::R, Cardinal::L),
    ]
}

/// 2×2 density matrix on the `{|R>, |L>}` basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix2 {
    pub m: [[Complex64; 2]; 2],
}

impl DensityMatrix2 {
    pub fn pure(q: &OamQubit) -> Self {
        reconstruct(&StokesVector::of(q))
    }

    pub fn maximally_mixed() -> Self {
        reconstruct(&StokesVector::new(0.0, 0.0, 0.0))
    }

    /// Stokes vector of a Hermitian, unit-trace matrix.
    pub fn stokes(&self) -> StokesVector {
        let off = self.m[0][1];
        StokesVector {
            s1: 2.0 * off.re,
            s2: -2.0 * off.im,
            s3: (self.m[0][0] - self.m[1][1]).re,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = (self.m[0][1] - self.m[1][0].conj()).norm();
        d.max(self.m[0][0].im.abs()).max(self.m[1][1].im.abs())
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let t = self.trace().re;
        let r = self.stokes().norm();
        [0.5 * (t - r), 0.5 * (t + r)]
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.eigenvalues()[0] >= -tol
    }

    /// `<ψ|ρ|ψ>`.
    pub fn probability(&self, q: &OamQubit) -> f64 {
        let v = [q.alpha, q.beta];
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += v[i].conj() * self.m[i][j] * v[j];
            }
        }
        acc.re
    }

    pub fn trace_distance(&self, other: &DensityMatrix2) -> f64 {
        let (a, b) = (self.stokes(), other.stokes());
        0.5 * ((a.s1 - b.s1).powi(2) + (a.s2 - b.s2).powi(2) + (a.s3 - b.s3).powi(2)).sqrt()
    }

    /// `w ρ + (1 - w) σ`.
    pub fn mix(&self, other: &DensityMatrix2, w: f64) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * w + other.m[i][j] * (1.0 - w);
            }
        }
        DensityMatrix2 { m }
    }
}

/// `ρ = ½(I + S1 σx + S2 σy + S3 σz)`.
pub fn reconstruct(s: &StokesVector) -> DensityMatrix2 {
    let half = 0.5;
    DensityMatrix2 {
        m: [
            [Complex64::new(half * (1.0 + s.s3), 0.0), Complex64::new(half * s.s1, -half * s.s2)],
            [Complex64::new(half * s.s1, half * s.s2), Complex64::new(half * (1.0 - s.s3), 0.0)],
        ],
    }
}

/// Nearest unit-trace positive matrix by eigenvalue clipping. For a qubit this
/// shrinks an outside Stokes vector onto the Bloch sphere.
pub fn physical_project(rho: &DensityMatrix2) -> DensityMatrix2 {
    let s = rho.stokes();
    let r = s.norm();
    if r <= 1.0 {
        return reconstruct(&s);
    }
    reconstruct(&StokesVector::new(s.s1 / r, s.s2 / r, s.s3 / r))
}

pub fn fidelity(rho: &DensityMatrix2, psi: &OamQubit) -> f64 {
    rho.probability(psi).clamp(0.0, 1.0)
}

/// Fidelity estimate with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub sigma: f64,
    pub sigma_poisson: f64,
    pub sigma_phase: f64,
}

/// Fidelity of the physically projected reconstruction against `psi`, with
/// Poisson propagation and the equatorial phase-bin term combined in
/// quadrature. `phase_sigma` is the rms interferometer phase error (rad).
pub fn estimate_fidelity(t: &CountsTable, psi: &OamQubit, phase_sigma: f64) -> Result<(DensityMatrix2, FidelityEstimate), TomoError> {
    let s = stokes_from_counts(t)?;
    let rho = physical_project(&reconstruct(&s));
    let target = StokesVector::of(psi);
    let sig = stokes_sigma(t);
    let sigma_poisson = 0.5
        * ((target.s1 * sig[0]).powi(2) + (target.s2 * sig[1]).powi(2) + (target.s3 * sig[2]).powi(2)).sqrt();
    // a phase error δ rotates the equatorial part: F picks up
    // ½|S⊥||s⊥| (cos(Δ+δ) - cos Δ)
    let (s_perp, t_perp) = (s.s1.hypot(s.s2), target.s1.hypot(target.s2));
    let delta = if s_perp > 0.0 && t_perp > 0.0 {
        (target.s2 * s.s1 - target.s1 * s.s2).atan2(target.s1 * s.s1 + target.s2 * s.s2)
    } else {
        0.0
    };
    let amp = 0.5 * s_perp * t_perp;
    let sp2 = phase_sigma * phase_sigma;
    let sigma_phase = amp * ((delta.sin() * phase_sigma).powi(2) + 0.5 * (delta.cos() * sp2).powi(2)).sqrt();
    let fid = fidelity(&rho, psi);
    Ok((
        rho,
        FidelityEstimate {
            fidelity: fid,
            sigma: sigma_poisson.hypot(sigma_phase),
            sigma_poisson,
            sigma_phase,
        },
    ))
}
