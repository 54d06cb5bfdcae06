//! Experiment configuration: a flat TOML file with strict keys.

use crate::bench::VacuumConvention;
use crate::eit::DecayLaw;
use crate::mode::{bloch_state, Cardinal, OamQubit};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Input state of a tomography run: a cardinal name or `"theta,phi"` Bloch
/// angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StateSpec {
    Cardinal(Cardinal),
    Bloch { theta: f64, phi: f64 },
}

impl StateSpec {
    pub fn qubit(&self) -> OamQubit {
        match self {
            StateSpec::Cardinal(c) => c.qubit(),
            StateSpec::Bloch { theta, phi } => bloch_state(*theta, *phi),
        }
    }

    pub fn label(&self) -> String {
        String::from(self.clone())
    }

    /// Whether the state lies on the equator, so its fringe visibility is a
    /// fidelity witness.
    pub fn is_equatorial(&self) -> bool {
        self.qubit().bloch_vector()[2].abs() < 1e-9
    }
}

impl TryFrom<String> for StateSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl std::str::FromStr for StateSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some((a, b)) = s.split_once(',') {
            let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad Bloch angle {x:?}: {e}"));
            return Ok(StateSpec::Bloch {
                theta: parse(a)?,
                phi: parse(b)?,
            });
        }
        Ok(StateSpec::Cardinal(s.trim().parse()?))
    }
}

impl From<StateSpec> for String {
    fn from(s: StateSpec) -> String {
        match s {
            StateSpec::Cardinal(c) => c.name().to_string(),
            StateSpec::Bloch { theta, phi } => format!("{theta},{phi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub wavelength: f64,
    pub signal_waist: f64,
    pub control_waist: f64,
    /// Pixels per side of the simulation grid used by the mode projectors.
    pub grid_size: usize,
    pub slm_nx: usize,
    pub slm_ny: usize,
    pub slm_pitch: f64,

    pub optical_depth: f64,
    pub medium_length: f64,
    pub ground_decoherence: f64,
    pub target_delay: f64,
    /// Intensity FWHM of the half-Gaussian signal pulse.
    pub pulse_width: f64,
    pub ramp_duration: f64,
    /// Control switch-off time relative to the pulse peak.
    pub ramp_down_start: f64,
    pub storage_time: f64,
    /// 1/e time of the retrieved energy.
    pub memory_time: f64,
    pub decay_law: DecayLaw,
    pub efficiency_target: f64,
    pub efficiency_sigma: f64,

    pub mean_photon_number: f64,
    pub visibility_raw_target: f64,
    pub visibility_corrected_target: f64,
    /// Fixes the background per gate instead of calibrating it.
    pub background: Option<f64>,
    /// Fixes the intrinsic visibility instead of calibrating it.
    pub intrinsic_visibility: Option<f64>,
    pub splitter_ratio: f64,
    pub fiber_splitter_ratio: f64,
    pub detector_efficiency: f64,
    pub apd2_transmission: f64,
    pub rescale_apd2: bool,

    pub trials_per_cycle: u64,
    pub cycle_rate: f64,
    pub trial_period: f64,
    pub camera_frame_rate: f64,
    pub camera_pixels: usize,
    pub camera_noise: f64,
    pub fringe_pulses_per_bin: u64,
    pub tomography_pulses_per_bin: u64,
    pub pole_pulses: u64,
    pub background_pulses: u64,
    pub states: Vec<StateSpec>,

    pub sweep_points: usize,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub sweep_pulses_per_bin: u64,
    pub vacuum: VacuumConvention,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            wavelength: crate::mode::CESIUM_D2_WAVELENGTH,
            signal_waist: 50e-6,
            control_waist: 200e-6,
            grid_size: 256,
            slm_nx: crate::holo::SLM_RESOLUTION.0,
            slm_ny: crate::holo::SLM_RESOLUTION.1,
            slm_pitch: crate::holo::SLM_PITCH,
            optical_depth: 15.0,
            medium_length: 2e-3,
            ground_decoherence: 0.0,
            target_delay: 200e-9,
            pulse_width: 300e-9,
            ramp_duration: 50e-9,
            ramp_down_start: 0.0,
            storage_time: 1e-6,
            memory_time: 15e-6,
            decay_law: DecayLaw::Gaussian,
            efficiency_target: 0.15,
            efficiency_sigma: 0.02,
            mean_photon_number: 0.6,
            visibility_raw_target: 0.82,
            visibility_corrected_target: 0.965,
            background: None,
            intrinsic_visibility: None,
            splitter_ratio: 0.5,
            fiber_splitter_ratio: 0.5,
            detector_efficiency: 1.0,
            apd2_transmission: 0.5,
            rescale_apd2: true,
            trials_per_cycle: 200,
            cycle_rate: 66.0,
            trial_period: 5e-6,
            camera_frame_rate: 8.0,
            camera_pixels: 64,
            camera_noise: 0.02,
            fringe_pulses_per_bin: 100_000,
            tomography_pulses_per_bin: 1_500_000,
            pole_pulses: 6_000_000,
            background_pulses: 6_000_000,
            states: ["R", "L", "V", "D", "H", "A"]
                .iter()
                .map(|s| s.parse().expect("cardinal"))
                .collect(),
            sweep_points: 50,
            sweep_min: 0.05,
            sweep_max: 5.0,
            sweep_pulses_per_bin: 100_000,
            vacuum: VacuumConvention::Included,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Mean pulses sent while one camera frame is exposed.
    pub fn pulses_per_frame(&self) -> u64 {
        ((self.trials_per_cycle as f64 * self.cycle_rate / self.camera_frame_rate).round() as u64).max(1)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = [
            ("wavelength", self.wavelength),
            ("signal_waist", self.signal_waist),
            ("control_waist", self.control_waist),
            ("slm_pitch", self.slm_pitch),
            ("optical_depth", self.optical_depth),
            ("medium_length", self.medium_length),
            ("target_delay", self.target_delay),
            ("pulse_width", self.pulse_width),
            ("ramp_duration", self.ramp_duration),
            ("memory_time", self.memory_time),
            ("mean_photon_number", self.mean_photon_number),
            ("cycle_rate", self.cycle_rate),
            ("trial_period", self.trial_period),
            ("camera_frame_rate", self.camera_frame_rate),
            ("sweep_min", self.sweep_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("ground_decoherence", self.ground_decoherence),
            ("storage_time", self.storage_time),
            ("efficiency_sigma", self.efficiency_sigma),
            ("camera_noise", self.camera_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.ramp_down_start.is_finite() {
            return bad("ramp_down_start must be finite".into());
        }
        if !(self.efficiency_target > 0.0 && self.efficiency_target <= 1.0) {
            return bad("efficiency_target must lie in (0,1]".into());
        }
        let (vr, vc) = (self.visibility_raw_target, self.visibility_corrected_target);
        if !(vr > 0.0 && vr <= vc && vc <= 1.0) {
            return bad(format!("visibility targets need 0 < raw <= corrected <= 1, got {vr} and {vc}"));
        }
        if self.background.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
            return bad("background must be non-negative".into());
        }
        if self.intrinsic_visibility.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
            return bad("intrinsic_visibility must lie in [0,1]".into());
        }
        for (name, v) in [("splitter_ratio", self.splitter_ratio), ("fiber_splitter_ratio", self.fiber_splitter_ratio)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0,1)"));
            }
        }
        for (name, v) in [("detector_efficiency", self.detector_efficiency), ("apd2_transmission", self.apd2_transmission)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0,1]"));
            }
        }
        if self.grid_size < 32 || self.camera_pixels < 16 || self.slm_nx == 0 || self.slm_ny == 0 {
            return bad("grid sizes too small".into());
        }
        for (name, v) in [
            ("trials_per_cycle", self.trials_per_cycle),
            ("fringe_pulses_per_bin", self.fringe_pulses_per_bin),
            ("tomography_pulses_per_bin", self.tomography_pulses_per_bin),
            ("pole_pulses", self.pole_pulses),
            ("background_pulses", self.background_pulses),
            ("sweep_pulses_per_bin", self.sweep_pulses_per_bin),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.states.is_empty() {
            return bad("states must not be empty".into());
        }
        if self.sweep_points == 0 || !(self.sweep_max >= self.sweep_min) {
            return bad("sweep needs at least one point and sweep_max >= sweep_min".into());
        }
        Ok(())
    }
}
