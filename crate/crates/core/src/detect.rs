//! Two-path analysis interferometer, APD statistics and fringe fitting.
//!
//! The Right path keeps the `|R>` amplitude and the Left path the `|L>`
//! amplitude (each through its fork projector and fiber). The fiber splitter
//! outputs are
//!
//! ```text
//! APD1: sqrt(f) r_R - sqrt(1-f) e^{iφ} r_L
//! APD2: sqrt(1-f) r_R + sqrt(f) e^{iφ} r_L
//! ```
//!
//! Background is unpolarized light in the signal mode: it reaches APD1 at the
//! rate `background` with both paths open and half of it with one path
//! blocked, and APD2 through the same extra transmission as the signal.

use crate::holo::Arm;
use crate::rng::{poisson, stream};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const PHASE_BINS: usize = 60;
/// Memory trial period (s).
pub const TRIAL_PERIOD: f64 = 5e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("invalid analyzer configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {populated} populated bins, need {required}")]
    InsufficientData { populated: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerConfig {
    /// Power fraction sent to the Right path by the first beam splitter.
    pub splitter_ratio: f64,
    /// Amplitude transmissions of the Right and Left paths.
    pub arm_transmission: [f64; 2],
    /// Power fraction of each input routed straight through the fiber splitter.
    pub fiber_splitter_ratio: f64,
    /// Energy overlap of the projected mode with the fiber mode.
    pub mode_match: f64,
    pub intrinsic_visibility: f64,
    pub detector_efficiency: f64,
    /// Extra transmission in front of APD2 (0.5 models the second fiber splitter).
    pub apd2_transmission: f64,
    /// Mean background counts per gate on APD1 with both paths open.
    pub background: f64,
    pub gate_duration: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            splitter_ratio: 0.5,
            arm_transmission: [1.0, 1.0],
            fiber_splitter_ratio: 0.5,
            mode_match: 1.0,
            intrinsic_visibility: 1.0,
            detector_efficiency: 1.0,
            apd2_transmission: 1.0,
            background: 0.0,
            gate_duration: 1e-6,
        }
    }
}

impl AnalyzerConfig {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let bad = |m: &str| Err(DetectError::InvalidConfig(m.to_string()));
        if !open(self.splitter_ratio) || !open(self.fiber_splitter_ratio) {
            return bad("splitter ratios must lie in (0,1)");
        }
        if !self.arm_transmission.iter().all(|&t| unit(t)) {
            return bad("arm transmissions must lie in [0,1]");
        }
        if !unit(self.mode_match) || !unit(self.intrinsic_visibility) || !unit(self.detector_efficiency) {
            return bad("mode_match, intrinsic_visibility and detector_efficiency must lie in [0,1]");
        }
        if !unit(self.apd2_transmission) {
            return bad("apd2_transmission must lie in [0,1]");
        }
        if !(self.background >= 0.0) || !self.background.is_finite() {
            return bad("background must be non-negative");
        }
        if !(self.gate_duration > 0.0) {
            return bad("gate_duration must be positive");
        }
        Ok(())
    }

    /// Fiber-coupled amplitudes `(r_R, r_L)` for input amplitudes `(a_R, a_L)`.
    fn arm_amplitudes(&self, a_r: Complex64, a_l: Complex64) -> (Complex64, Complex64) {
        let c = self.mode_match.sqrt();
        (
            a_r * (self.splitter_ratio.sqrt() * self.arm_transmission[0] * c),
            a_l * ((1.0 - self.splitter_ratio).sqrt() * self.arm_transmission[1] * c),
        )
    }

    /// Mean signal counts per pulse at each APD, without background.
    fn signal_rates(&self, r_r: Complex64, r_l: Complex64, phi: f64) -> (f64, f64) {
        let f = self.fiber_splitter_ratio;
        let cross = 2.0 * (f * (1.0 - f)).sqrt() * self.intrinsic_visibility * (r_r * r_l.conj() * Complex64::from_polar(1.0, -phi)).re;
        let (pr, pl) = (r_r.norm_sqr(), r_l.norm_sqr());
        let mu1 = f * pr + (1.0 - f) * pl - cross;
        let mu2 = (1.0 - f) * pr + f * pl + cross;
        (
            self.detector_efficiency * mu1.max(0.0),
            self.detector_efficiency * self.apd2_transmission * mu2.max(0.0),
        )
    }
}

/// Mean counts per pulse `(APD1, APD2)` for input amplitudes `(alpha, beta)`;
/// `|alpha|² + |beta|²` is the mean photon number reaching the analyzer.
pub fn apd_rates(alpha: Complex64, beta: Complex64, phi: f64, cfg: &AnalyzerConfig) -> (f64, f64) {
    let (r_r, r_l) = cfg.arm_amplitudes(alpha, beta);
    let (s1, s2) = cfg.signal_rates(r_r, r_l, phi);
    let b = cfg.background;
    (s1 + b, s2 + b * cfg.apd2_transmission)
}

/// Mean counts per pulse `(APD1, APD2)` with only `open` path unblocked.
pub fn blocked_rates(alpha: Complex64, beta: Complex64, open: Arm, cfg: &AnalyzerConfig) -> (f64, f64) {
    let (r_r, r_l) = cfg.arm_amplitudes(alpha, beta);
    let zero = Complex64::new(0.0, 0.0);
    let (s1, s2) = match open {
        Arm::Right => cfg.signal_rates(r_r, zero, 0.0),
        Arm::Left => cfg.signal_rates(zero, r_l, 0.0),
    };
    let b = 0.5 * cfg.background;
    (s1 + b, s2 + b * cfg.apd2_transmission)
}

/// Phase bin index: `floor(mod(φ, 2π) / 6°)`, with values within 1e-9 of a bin
/// edge snapped onto it.
pub fn bin_phase(phi: f64) -> usize {
    let x = phi.rem_euclid(2.0 * PI) / (2.0 * PI) * PHASE_BINS as f64;
    let nearest = x.round();
    let x = if (x - nearest).abs() < 1e-9 { nearest } else { x };
    (x.floor() as usize) % PHASE_BINS
}

pub fn bin_center(bin: usize) -> f64 {
    (bin as f64 + 0.5) * 2.0 * PI / PHASE_BINS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub trial: u64,
    pub detector: u8,
    pub bin: u8,
    /// Seconds since the start of the run.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClickRecord {
    pub events: Vec<ClickEvent>,
}

impl ClickRecord {
    pub fn counts(&self, detector: u8) -> usize {
        self.events.iter().filter(|e| e.detector == detector).count()
    }

    pub fn extend(&mut self, other: ClickRecord) {
        self.events.extend(other.events);
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "detector", "bin", "t"])?;
        for e in &self.events {
            out.write_record([
                e.trial.to_string(),
                e.detector.to_string(),
                e.bin.to_string(),
                format!("{:.9e}", e.timestamp),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Independent per-pulse Poisson draws on both detectors. Trials are numbered
/// from `first_trial`; each trial uses its own substream of `seed`, so any
/// partition of the trials reproduces the same events.
pub fn sample_clicks(mu1: f64, mu2: f64, pulses: u64, first_trial: u64, bin: usize, seed: u64) -> ClickRecord {
    let base = stream(seed, "clicks");
    let mut events = Vec::new();
    for trial in first_trial..first_trial + pulses {
        let mut rng = base.clone();
        rng.set_stream(trial);
        for (detector, mu) in [(1u8, mu1), (2u8, mu2)] {
            for _ in 0..poisson(&mut rng, mu) {
                events.push(ClickEvent {
                    trial,
                    detector,
                    bin: bin as u8,
                    timestamp: trial as f64 * TRIAL_PERIOD,
                });
            }
        }
    }
    ClickRecord { events }
}

/// Counts accumulated in one phase bin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinCounts {
    pub pulses: u64,
    pub apd1: u64,
    pub apd2: u64,
}

/// Per-bin counts of a phase scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    pub bins: Vec<BinCounts>,
}

impl FringeScan {
    pub fn new() -> Self {
        FringeScan {
            bins: vec![BinCounts::default(); PHASE_BINS],
        }
    }

    pub fn from_record(record: &ClickRecord, pulses_per_bin: &[u64]) -> Self {
        let mut scan = FringeScan::new();
        for (b, &p) in scan.bins.iter_mut().zip(pulses_per_bin) {
            b.pulses = p;
        }
        for e in &record.events {
            let b = &mut scan.bins[e.bin as usize];
            match e.detector {
                1 => b.apd1 += 1,
                _ => b.apd2 += 1,
            }
        }
        scan
    }

    /// `(φ, rate1, rate2)` per populated bin, optionally doubling APD2.
    pub fn table(&self, rescale_apd2: bool) -> Vec<(f64, f64, f64)> {
        let k = if rescale_apd2 { 2.0 } else { 1.0 };
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.pulses > 0)
            .map(|(i, b)| {
                let p = b.pulses as f64;
                (bin_center(i), b.apd1 as f64 / p, k * b.apd2 as f64 / p)
            })
            .collect()
    }
}

impl Default for FringeScan {
    fn default() -> Self {
        Self::new()
    }
}

/// Weighted sinusoid fit `a + b cos(φ - φ0)` of one detector's rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub background: f64,
    pub visibility_raw: f64,
    pub visibility_corrected: f64,
    pub sigma_raw: f64,
    pub sigma_corrected: f64,
}

pub const MIN_FIT_BINS: usize = 20;

/// Fits rates `(φ, counts, pulses)`; `background` is the separately measured
/// mean background counts per pulse.
pub fn fringe_fit(points: &[(f64, u64, u64)], background: f64) -> Result<FringeFit, DetectError> {
    let used: Vec<_> = points.iter().filter(|p| p.2 > 0).collect();
    if used.len() < MIN_FIT_BINS {
        return Err(DetectError::InsufficientData {
            populated: used.len(),
            required: MIN_FIT_BINS,
        });
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for &&(phi, counts, pulses) in &used {
        let n = pulses as f64;
        let rate = counts as f64 / n;
        // Poisson variance of the rate; empty bins get the one-count floor
        let var = (counts as f64).max(1.0) / (n * n);
        let row = Vector3::new(1.0, phi.cos(), phi.sin());
        ata += row * row.transpose() / var;
        atb += row * rate / var;
    }
    let cov = ata.try_inverse().ok_or(DetectError::InsufficientData {
        populated: used.len(),
        required: MIN_FIT_BINS,
    })?;
    let x = cov * atb;
    Ok(fit_from_params(x, cov, background))
}

/// Fit on exact mean rates (unit weights).
pub fn fringe_fit_exact(points: &[(f64, f64)], background: f64) -> Result<FringeFit, DetectError> {
    if points.len() < MIN_FIT_BINS {
        return Err(DetectError::InsufficientData {
            populated: points.len(),
            required: MIN_FIT_BINS,
        });
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for &(phi, rate) in points {
        let row = Vector3::new(1.0, phi.cos(), phi.sin());
        ata += row * row.transpose();
        atb += row * rate;
    }
    let inv = ata.try_inverse().ok_or(DetectError::InsufficientData {
        populated: points.len(),
        required: MIN_FIT_BINS,
    })?;
    Ok(fit_from_params(inv * atb, Matrix3::zeros(), background))
}

fn fit_from_params(x: Vector3<f64>, cov: Matrix3<f64>, background: f64) -> FringeFit {
    let (a, c, s) = (x[0], x[1], x[2]);
    let b = c.hypot(s);
    let phase = s.atan2(c).rem_euclid(2.0 * PI);
    // gradients of b/a and b/(a-B) with respect to (a, c, s)
    let (dbc, dbs) = if b > 0.0 { (c / b, s / b) } else { (1.0, 0.0) };
    let sigma = |den: f64| {
        let g = Vector3::new(-b / (den * den), dbc / den, dbs / den);
        (g.transpose() * cov * g)[0].max(0.0).sqrt()
    };
    let corrected_den = a - background;
    FringeFit {
        offset: a,
        amplitude: b,
        phase,
        background,
        visibility_raw: b / a,
        visibility_corrected: b / corrected_den,
        sigma_raw: sigma(a),
        sigma_corrected: sigma(corrected_den),
    }
}

/// Fits both detectors of a scan; `background` holds each detector's
/// separately measured background per pulse.
pub fn fit_scan(scan: &FringeScan, background: [f64; 2], rescale_apd2: bool) -> Result<(FringeFit, FringeFit), DetectError> {
    let k = if rescale_apd2 { 2.0 } else { 1.0 };
    let one: Vec<_> = scan
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| (bin_center(i), b.apd1, b.pulses))
        .collect();
    let two: Vec<_> = scan
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| (bin_center(i), b.apd2, b.pulses))
        .collect();
    let f1 = fringe_fit(&one, background[0])?;
    let mut f2 = fringe_fit(&two, background[1])?;
    if rescale_apd2 {
        f2.offset *= k;
        f2.amplitude *= k;
        f2.background *= k;
    }
    Ok((f1, f2))
}

/// Mean per-bin rates of a detector averaged across the bin width, for a
/// fringe `rate(φ)`.
pub fn bin_averaged_rates(rate: impl Fn(f64) -> f64, samples_per_bin: usize) -> Vec<(f64, f64)> {
    let w = 2.0 * PI / PHASE_BINS as f64;
    (0..PHASE_BINS)
        .map(|k| {
            let lo = k as f64 * w;
            let mean = (0..samples_per_bin)
                .map(|j| rate(lo + (j as f64 + 0.5) * w / samples_per_bin as f64))
                .sum::<f64>()
                / samples_per_bin as f64;
            (bin_center(k), mean)
        })
        .collect()
}

/// Chooses `intrinsic_visibility` and `background` so that the bin-averaged
/// exact fringe of an equatorial input with `photons` mean photons at the
/// analyzer fits to the target raw and corrected visibilities.
pub fn calibrate_noise(
    target_raw: f64,
    target_corrected: f64,
    photons: f64,
    cfg: &AnalyzerConfig,
) -> Result<AnalyzerConfig, DetectError> {
    if !(0.0 < target_raw && target_raw <= target_corrected && target_corrected <= 1.0) {
        return Err(DetectError::InvalidConfig(
            "visibility targets must satisfy 0 < raw <= corrected <= 1".into(),
        ));
    }
    let amp = Complex64::new((0.5 * photons).sqrt(), 0.0);
    let probe = |c: &AnalyzerConfig| -> Result<FringeFit, DetectError> {
        let pts = bin_averaged_rates(|phi| apd_rates(amp, amp, phi, c).0, 64);
        fringe_fit_exact(&pts, c.background)
    };
    let mut c = AnalyzerConfig {
        intrinsic_visibility: 1.0,
        background: 0.0,
        ..*cfg
    };
    // corrected visibility is independent of the background
    let atten = probe(&c)?.visibility_corrected;
    if target_corrected > atten + 1e-12 {
        return Err(DetectError::InvalidConfig(format!(
            "corrected visibility {target_corrected} exceeds the binning limit {atten}"
        )));
    }
    c.intrinsic_visibility = (target_corrected / atten).min(1.0);
    let fit = probe(&c)?;
    // V_raw = b / (s + B) with the signal offset s fixed
    let signal = fit.offset;
    c.background = (fit.amplitude / target_raw - signal).max(0.0);
    Ok(c)
}
