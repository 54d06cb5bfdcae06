//! End-to-end pipelines: calibration, fringe scans, six-state tomography and
//! the fidelity sweep. Every random draw comes from a named stream of the
//! configured master seed.

use crate::bench::{classical_threshold_with, log_grid, verdict, BenchmarkInput, Verdict};
use crate::config::{ConfigError, ExperimentConfig, StateSpec};
use crate::detect::{
    apd_rates, bin_phase, blocked_rates, calibrate_noise, fit_scan, AnalyzerConfig, ClickEvent, ClickRecord,
    FringeFit, FringeScan, PHASE_BINS,
};
use crate::eit::{
    calibrate_memory, store_qubit, temperature_for_dephasing_time, ControlTimeline, EitError, LambdaParams,
    MemoryCalibration, PulseShape, StorageRun,
};
use crate::holo::optimal_fiber_waist;
use crate::mode::{Cardinal, GridSpec, OamQubit};
use crate::phaseref::{extract_phase, phase_difference, CameraImage, ReferenceCamera};
use crate::rng::{poisson, stream, substream};
use crate::tomo::{background_subtract, estimate_fidelity, CountsTable, DensityMatrix2, FidelityEstimate};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Angle between signal and control beams (rad).
pub const CONTROL_ANGLE: f64 = 1.7 * PI / 180.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

impl From<EitError> for ExperimentError {
    fn from(e: EitError) -> Self {
        match e {
            EitError::InvalidParams(m) => ExperimentError::Config(ConfigError::Invalid(m)),
            EitError::UnreachableDelay { .. } | EitError::AnchorInfeasible { .. } => {
                ExperimentError::Infeasible(e.to_string())
            }
            EitError::GridInstability { .. } => ExperimentError::Simulation(e.to_string()),
        }
    }
}

macro_rules! simulation_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ExperimentError {
            fn from(e: $t) -> Self {
                ExperimentError::Simulation(e.to_string())
            }
        }
    )*};
}

simulation_error!(
    crate::mode::ModeError,
    crate::holo::HoloError,
    crate::detect::DetectError,
    crate::phaseref::PhaseRefError,
    crate::tomo::TomoError,
    crate::bench::BenchError
);

pub fn lambda_params(cfg: &ExperimentConfig) -> LambdaParams {
    LambdaParams {
        optical_depth: cfg.optical_depth,
        gamma_0: cfg.ground_decoherence,
        length: cfg.medium_length,
        ..Default::default()
    }
}

pub fn pulse_shape(cfg: &ExperimentConfig) -> PulseShape {
    PulseShape::half_gaussian(cfg.pulse_width)
}

pub fn control_timeline(cfg: &ExperimentConfig) -> ControlTimeline {
    ControlTimeline {
        ramp_down_start: Some(cfg.ramp_down_start),
        ramp_duration: cfg.ramp_duration,
        storage_time: cfg.storage_time,
        ..Default::default()
    }
}

pub fn projector_grid(cfg: &ExperimentConfig) -> Result<GridSpec, ExperimentError> {
    Ok(GridSpec::for_waist(cfg.grid_size, cfg.signal_waist)?.with_wavelength(cfg.wavelength))
}

/// Every fitted factor the downstream simulations use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub memory: MemoryCalibration,
    pub analyzer: AnalyzerConfig,
    pub fiber_waist: f64,
    pub mode_match: f64,
    /// Mean photons per pulse reaching the analyzer at the configured n̄.
    pub photons_at_analyzer: f64,
    /// MOT temperature at which motional dephasing alone gives the memory time.
    pub dephasing_temperature: f64,
}

impl Calibration {
    pub fn efficiency(&self) -> f64 {
        self.memory.channel.efficiency
    }
}

pub fn calibrate(cfg: &ExperimentConfig) -> Result<(Calibration, StorageRun), ExperimentError> {
    cfg.validate()?;
    let (memory, run) = calibrate_memory(
        cfg.target_delay,
        cfg.efficiency_target,
        cfg.memory_time,
        cfg.decay_law,
        &pulse_shape(cfg),
        &control_timeline(cfg),
        &lambda_params(cfg),
    )?;
    let grid = projector_grid(cfg)?;
    let (fiber_waist, mode_match) = optimal_fiber_waist(cfg.signal_waist, &grid)?;
    let photons = cfg.mean_photon_number * memory.channel.efficiency;
    let base = AnalyzerConfig {
        splitter_ratio: cfg.splitter_ratio,
        fiber_splitter_ratio: cfg.fiber_splitter_ratio,
        mode_match,
        detector_efficiency: cfg.detector_efficiency,
        apd2_transmission: cfg.apd2_transmission,
        ..Default::default()
    };
    let analyzer = match (cfg.background, cfg.intrinsic_visibility) {
        (Some(background), Some(intrinsic_visibility)) => AnalyzerConfig {
            background,
            intrinsic_visibility,
            ..base
        },
        (b, v) => {
            let fitted = calibrate_noise(cfg.visibility_raw_target, cfg.visibility_corrected_target, photons, &base)
                .map_err(|e| ExperimentError::Infeasible(e.to_string()))?;
            AnalyzerConfig {
                background: b.unwrap_or(fitted.background),
                intrinsic_visibility: v.unwrap_or(fitted.intrinsic_visibility),
                ..fitted
            }
        }
    };
    analyzer.validate()?;
    Ok((
        Calibration {
            memory,
            analyzer,
            fiber_waist,
            mode_match,
            photons_at_analyzer: photons,
            dephasing_temperature: temperature_for_dephasing_time(CONTROL_ANGLE, cfg.memory_time),
        },
        run,
    ))
}

/// One camera exposure of the phase reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    pub time: f64,
    pub true_phase: f64,
    pub measured_phase: f64,
    pub bin: usize,
    /// First memory trial of the frame.
    pub first_trial: u64,
    pub pulses: u64,
}

/// Linear phase sweep through one full turn, one camera image per frame.
/// The interferometer phase is constant while a frame is exposed.
pub fn phase_timeline(
    cfg: &ExperimentConfig,
    camera: &ReferenceCamera,
    pulses_per_bin: u64,
    label: &str,
) -> Result<Vec<Frame>, ExperimentError> {
    let total = pulses_per_bin * PHASE_BINS as u64;
    let per_frame = cfg.pulses_per_frame();
    let frames = total.div_ceil(per_frame);
    (0..frames)
        .into_par_iter()
        .map(|k| {
            let true_phase = TAU * (k as f64 + 0.5) / frames as f64;
            let mut rng = substream(cfg.seed, label, k);
            let measured = extract_phase(&camera.render_noisy(true_phase, cfg.camera_noise, &mut rng))?;
            Ok(Frame {
                index: k,
                time: k as f64 / cfg.camera_frame_rate,
                true_phase,
                measured_phase: measured,
                bin: bin_phase(measured),
                first_trial: k * per_frame,
                pulses: if k + 1 == frames { total - per_frame * k } else { per_frame },
            })
        })
        .collect()
}

/// Re-renders the exact image a timeline frame was measured from.
pub fn render_frame(cfg: &ExperimentConfig, camera: &ReferenceCamera, frame: &Frame, label: &str) -> CameraImage {
    let mut rng = substream(cfg.seed, label, frame.index);
    camera.render_noisy(frame.true_phase, cfg.camera_noise, &mut rng)
}

pub fn camera(cfg: &ExperimentConfig) -> Result<ReferenceCamera, ExperimentError> {
    Ok(ReferenceCamera::new(cfg.camera_pixels, cfg.signal_waist)?)
}

/// Rms of the camera phase error over a timeline.
pub fn phase_rms(frames: &[Frame]) -> f64 {
    let s: f64 = frames
        .iter()
        .map(|f| phase_difference(f.measured_phase, f.true_phase).powi(2))
        .sum();
    (s / frames.len().max(1) as f64).sqrt()
}

/// Poisson counts `(APD1, APD2)` per frame for input amplitudes at the analyzer.
pub fn count_frames(
    cfg: &ExperimentConfig,
    frames: &[Frame],
    amps: (Complex64, Complex64),
    analyzer: &AnalyzerConfig,
    label: &str,
) -> Vec<(u64, u64)> {
    frames
        .par_iter()
        .map(|f| {
            let (m1, m2) = apd_rates(amps.0, amps.1, f.true_phase, analyzer);
            let mut rng = substream(cfg.seed, label, f.index);
            let n = f.pulses as f64;
            (poisson(&mut rng, m1 * n), poisson(&mut rng, m2 * n))
        })
        .collect()
}

/// Bins frame counts by measured phase.
pub fn accumulate(frames: &[Frame], counts: &[(u64, u64)]) -> FringeScan {
    let mut scan = FringeScan::new();
    for (f, c) in frames.iter().zip(counts) {
        let b = &mut scan.bins[f.bin];
        b.pulses += f.pulses;
        b.apd1 += c.0;
        b.apd2 += c.1;
    }
    scan
}

/// Spreads each frame's clicks uniformly over its trials.
pub fn click_record(cfg: &ExperimentConfig, frames: &[Frame], counts: &[(u64, u64)], label: &str) -> ClickRecord {
    let mut events: Vec<ClickEvent> = frames
        .par_iter()
        .zip(counts)
        .flat_map_iter(|(f, &(c1, c2))| {
            let mut rng = substream(cfg.seed, label, f.index);
            let mut out = Vec::with_capacity((c1 + c2) as usize);
            for (detector, c) in [(1u8, c1), (2u8, c2)] {
                for _ in 0..c {
                    let trial = f.first_trial + rng.random_range(0..f.pulses);
                    out.push(ClickEvent {
                        trial,
                        detector,
                        bin: f.bin as u8,
                        timestamp: trial as f64 * cfg.trial_period,
                    });
                }
            }
            out
        })
        .collect();
    events.sort_by_key(|e| (e.trial, e.detector));
    ClickRecord { events }
}

/// Background counts per pulse on `(APD1, APD2)` from a run with the signal
/// blocked.
pub fn measure_background(cfg: &ExperimentConfig, analyzer: &AnalyzerConfig, label: &str) -> [f64; 2] {
    let mut rng = stream(cfg.seed, label);
    let zero = Complex64::new(0.0, 0.0);
    let (m1, m2) = apd_rates(zero, zero, 0.0, analyzer);
    let n = cfg.background_pulses as f64;
    [poisson(&mut rng, m1 * n) as f64 / n, poisson(&mut rng, m2 * n) as f64 / n]
}

/// Analyzer-input amplitudes of a stored and retrieved state.
pub fn retrieved_amplitudes(q: &OamQubit, cal: &Calibration, mean_photon_number: f64) -> (Complex64, Complex64) {
    let out = store_qubit(q, &cal.memory.channel);
    let s = mean_photon_number.sqrt();
    (out.alpha * s, out.beta * s)
}

/// The two bins adjacent to the phase `phi0`.
fn window(phi0: f64) -> [usize; 2] {
    let c = (phi0 / (TAU / PHASE_BINS as f64)).round() as usize % PHASE_BINS;
    [(c + PHASE_BINS - 1) % PHASE_BINS, c]
}

/// Counts, pulses and background of an equatorial outcome read from APD1
/// around `phi1` and APD2 around `phi2`.
fn equatorial_outcome(scan: &FringeScan, phi1: f64, phi2: f64, bg: [f64; 2]) -> (f64, f64, f64) {
    let (mut counts, mut pulses, mut background) = (0.0, 0.0, 0.0);
    for b in window(phi1) {
        let bin = &scan.bins[b];
        counts += bin.apd1 as f64;
        pulses += bin.pulses as f64;
        background += bg[0] * bin.pulses as f64;
    }
    for b in window(phi2) {
        let bin = &scan.bins[b];
        counts += bin.apd2 as f64;
        pulses += bin.pulses as f64;
        background += bg[1] * bin.pulses as f64;
    }
    (counts, pulses, background)
}

/// Six-outcome table: poles from the blocked-arm settings, equatorial
/// outcomes from the phase scan.
pub fn counts_table(
    cfg: &ExperimentConfig,
    scan: &FringeScan,
    amps: (Complex64, Complex64),
    analyzer: &AnalyzerConfig,
    bg: [f64; 2],
    label: &str,
) -> Result<CountsTable, ExperimentError> {
    let mut rng = stream(cfg.seed, label);
    let p = cfg.pole_pulses as f64;
    let mut pole = |arm| {
        let (m1, m2) = blocked_rates(amps.0, amps.1, arm, analyzer);
        (poisson(&mut rng, (m1 + m2) * p) as f64, p, 0.5 * (bg[0] + bg[1]) * p)
    };
    let r = pole(crate::holo::Arm::Right);
    let l = pole(crate::holo::Arm::Left);
    let h = equatorial_outcome(scan, PI, 0.0, bg);
    let v = equatorial_outcome(scan, 0.0, PI, bg);
    let d = equatorial_outcome(scan, PI / 2.0, 3.0 * PI / 2.0, bg);
    let a = equatorial_outcome(scan, 3.0 * PI / 2.0, PI / 2.0, bg);
    let mut table = [(0.0, 0.0, 0.0); 6];
    for (c, val) in [(Cardinal::R, r), (Cardinal::L, l), (Cardinal::H, h), (Cardinal::V, v), (Cardinal::D, d), (Cardinal::A, a)] {
        let k = crate::tomo::OUTCOMES.iter().position(|&o| o == c).expect("cardinal");
        table[k] = val;
    }
    Ok(CountsTable::new(table.map(|t| t.0), table.map(|t| t.2), table.map(|t| t.1))?)
}

/// Density matrix entries for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub re: [[f64; 2]; 2],
    pub im: [[f64; 2]; 2],
    pub eigenvalues: [f64; 2],
}

impl From<&DensityMatrix2> for MatrixReport {
    fn from(r: &DensityMatrix2) -> Self {
        MatrixReport {
            re: r.m.map(|row| row.map(|v| v.re)),
            im: r.m.map(|row| row.map(|v| v.im)),
            eigenvalues: r.eigenvalues(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResult {
    pub state: String,
    pub raw: FidelityEstimate,
    pub corrected: FidelityEstimate,
    pub rho_raw: MatrixReport,
    pub rho_corrected: MatrixReport,
    pub counts: CountsTable,
    /// Fringe fits of both detectors, for states on the equator.
    pub fringes: Option<[FringeFit; 2]>,
    pub phase_rms: f64,
}

/// Tomography of one state from an existing camera timeline.
#[allow(clippy::too_many_arguments)]
pub fn measure_state(
    cfg: &ExperimentConfig,
    cal: &Calibration,
    state: &StateSpec,
    mean_photon_number: f64,
    frames: &[Frame],
    bg: [f64; 2],
    label: &str,
) -> Result<(StateResult, FringeScan), ExperimentError> {
    let q = state.qubit();
    let amps = retrieved_amplitudes(&q, cal, mean_photon_number);
    let counts = count_frames(cfg, frames, amps, &cal.analyzer, &format!("{label}/counts"));
    let scan = accumulate(frames, &counts);
    let table = counts_table(cfg, &scan, amps, &cal.analyzer, bg, &format!("{label}/poles"))?;
    let rms = phase_rms(frames);
    let (rho_raw, raw) = estimate_fidelity(&table, &q, rms)?;
    let subtracted = background_subtract(&table);
    let (rho_corrected, corrected) = estimate_fidelity(&subtracted, &q, rms)?;
    let fringes = if state.is_equatorial() {
        let (a, b) = fit_scan(&scan, bg, cfg.rescale_apd2)?;
        Some([a, b])
    } else {
        None
    };
    Ok((
        StateResult {
            state: state.label(),
            raw,
            corrected,
            rho_raw: (&rho_raw).into(),
            rho_corrected: (&rho_corrected).into(),
            counts: CountsTable {
                clamped: subtracted.clamped,
                ..table
            },
            fringes,
            phase_rms: rms,
        },
        scan,
    ))
}

fn mean_with_sigma(values: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut n, mut s, mut v) = (0.0, 0.0, 0.0);
    for (x, sx) in values {
        n += 1.0;
        s += x;
        v += sx * sx;
    }
    (s / n, v.sqrt() / n)
}

/// Classical threshold at the calibrated efficiency and its band over the
/// efficiency uncertainty, as `(threshold, lo, hi)`.
pub fn threshold_band(cfg: &ExperimentConfig, cal: &Calibration, mean_photon_number: f64) -> (f64, f64, f64) {
    let eta = cal.efficiency();
    let thr = |e: f64| classical_threshold_with(mean_photon_number, e.clamp(1e-9, 1.0), cfg.vacuum);
    (thr(eta), thr(eta + cfg.efficiency_sigma), thr(eta - cfg.efficiency_sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub config_hash: String,
    pub seed: u64,
    pub mean_photon_number: f64,
    pub calibration: Calibration,
    pub background: [f64; 2],
    pub states: Vec<StateResult>,
    pub average_raw: f64,
    pub average_raw_sigma: f64,
    pub average_corrected: f64,
    pub average_corrected_sigma: f64,
    pub threshold: f64,
    pub threshold_band: [f64; 2],
    pub verdict: Verdict,
}

pub fn run_tomography(cfg: &ExperimentConfig, cal: &Calibration) -> Result<TomographyReport, ExperimentError> {
    let cam = camera(cfg)?;
    let bg = measure_background(cfg, &cal.analyzer, "tomography/background");
    let mut states = Vec::with_capacity(cfg.states.len());
    for s in &cfg.states {
        let label = format!("tomography/{}", s.label());
        let frames = phase_timeline(cfg, &cam, cfg.tomography_pulses_per_bin, &format!("{label}/camera"))?;
        states.push(measure_state(cfg, cal, s, cfg.mean_photon_number, &frames, bg, &label)?.0);
    }
    let (average_raw, average_raw_sigma) = mean_with_sigma(states.iter().map(|s| (s.raw.fidelity, s.raw.sigma)));
    let (average_corrected, average_corrected_sigma) =
        mean_with_sigma(states.iter().map(|s| (s.corrected.fidelity, s.corrected.sigma)));
    let (threshold, lo, hi) = threshold_band(cfg, cal, cfg.mean_photon_number);
    let verdict = verdict(&BenchmarkInput {
        mean_photon_number: cfg.mean_photon_number,
        eta: cal.efficiency(),
        eta_sigma: cfg.efficiency_sigma,
        fidelity: average_raw,
        fidelity_sigma: average_raw_sigma,
        vacuum: cfg.vacuum,
    })?;
    Ok(TomographyReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        mean_photon_number: cfg.mean_photon_number,
        calibration: cal.clone(),
        background: bg,
        states,
        average_raw,
        average_raw_sigma,
        average_corrected,
        average_corrected_sigma,
        threshold,
        threshold_band: [lo, hi],
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeReport {
    pub config_hash: String,
    pub seed: u64,
    pub state: String,
    pub calibration: Calibration,
    pub pulses_per_bin: u64,
    /// Measured background per pulse on each detector.
    pub background: [f64; 2],
    /// Background line of the plotted rates (APD2 rescaled when enabled).
    pub background_level: [f64; 2],
    pub apd1: FringeFit,
    pub apd2: FringeFit,
    /// Fitted phase of APD2 minus APD1, wrapped into (-π, π].
    pub phase_gap: f64,
    pub phase_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeRun {
    pub report: FringeReport,
    pub scan: FringeScan,
    pub frames: Vec<Frame>,
    pub counts: Vec<(u64, u64)>,
}

/// Phase scan of a retrieved `|A>` at the configured n̄.
pub fn run_fringe(cfg: &ExperimentConfig, cal: &Calibration) -> Result<FringeRun, ExperimentError> {
    let cam = camera(cfg)?;
    let frames = phase_timeline(cfg, &cam, cfg.fringe_pulses_per_bin, "fringe/camera")?;
    let state = StateSpec::Cardinal(Cardinal::A);
    let amps = retrieved_amplitudes(&state.qubit(), cal, cfg.mean_photon_number);
    let counts = count_frames(cfg, &frames, amps, &cal.analyzer, "fringe/counts");
    let scan = accumulate(&frames, &counts);
    let bg = measure_background(cfg, &cal.analyzer, "fringe/background");
    let (apd1, apd2) = fit_scan(&scan, bg, cfg.rescale_apd2)?;
    let k = if cfg.rescale_apd2 { 2.0 } else { 1.0 };
    let report = FringeReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        state: state.label(),
        calibration: cal.clone(),
        pulses_per_bin: cfg.fringe_pulses_per_bin,
        background: bg,
        background_level: [bg[0], k * bg[1]],
        apd1,
        apd2,
        phase_gap: phase_difference(apd2.phase, apd1.phase),
        phase_rms: phase_rms(&frames),
    };
    Ok(FringeRun {
        report,
        scan,
        frames,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mean_photon_number: f64,
    pub fidelity_raw: f64,
    pub sigma_raw: f64,
    pub fidelity_corrected: f64,
    pub sigma_corrected: f64,
    pub threshold: f64,
    pub threshold_lo: f64,
    pub threshold_hi: f64,
}

/// State-averaged fidelities over log-spaced n̄. Each state keeps one camera
/// timeline for the whole sweep.
pub fn run_fidelity_sweep(cfg: &ExperimentConfig, cal: &Calibration) -> Result<Vec<SweepRow>, ExperimentError> {
    let cam = camera(cfg)?;
    let timelines = cfg
        .states
        .iter()
        .map(|s| phase_timeline(cfg, &cam, cfg.sweep_pulses_per_bin, &format!("sweep/{}/camera", s.label())))
        .collect::<Result<Vec<_>, _>>()?;
    let bg = measure_background(cfg, &cal.analyzer, "sweep/background");
    let means = log_grid(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points);
    means
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut results = Vec::with_capacity(cfg.states.len());
            for (s, frames) in cfg.states.iter().zip(&timelines) {
                let label = format!("sweep/{k}/{}", s.label());
                results.push(measure_state(cfg, cal, s, n, frames, bg, &label)?.0);
            }
            let (fidelity_raw, sigma_raw) = mean_with_sigma(results.iter().map(|s| (s.raw.fidelity, s.raw.sigma)));
            let (fidelity_corrected, sigma_corrected) =
                mean_with_sigma(results.iter().map(|s| (s.corrected.fidelity, s.corrected.sigma)));
            let (threshold, threshold_lo, threshold_hi) = threshold_band(cfg, cal, n);
            Ok(SweepRow {
                mean_photon_number: n,
                fidelity_raw,
                sigma_raw,
                fidelity_corrected,
                sigma_corrected,
                threshold,
                threshold_lo,
                threshold_hi,
            })
        })
        .collect()
}
