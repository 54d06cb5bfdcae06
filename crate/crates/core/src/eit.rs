//! Dynamic-EIT storage in a three-level Λ ensemble.
//!
//! Linear response uses the normalized absorption kernel
//! `κ(δ) = γ B / (C B + Ω²/4)` with `B = γ0 - i(δ2 + δ)` and `C = γ - i(Δ + δ)`,
//! so the amplitude transmission through the sample is `exp(-d κ / 2)` and the
//! intensity optical depth at line center without control is `d`.
//!
//! The time-domain model is the 1-D Maxwell-Bloch system in the retarded frame
//! with `z` normalized to the sample length and `g² = d γ / 2`:
//!
//! ```text
//! ∂z E = i g P
//! ∂t P = -(γ - iΔ) P + i g E + i (Ω/2) S
//! ∂t S = -(γ0 - iδ2) S + i (Ω/2) P
//! ```

use crate::mode::{OamQubit, CESIUM_D2_WAVELENGTH};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Cesium-133 mass (kg).
pub const CESIUM_MASS: f64 = 132.905_451_933 * 1.660_539_066_60e-27;
/// Cesium D2 natural linewidth (rad/s).
pub const CESIUM_D2_GAMMA: f64 = 2.0 * PI * 5.234e6;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EitError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("delay {target:e} s unreachable (reachable range {min:e}..{max:e} s)")]
    UnreachableDelay { target: f64, min: f64, max: f64 },
    #[error("time step {dt:e} s exceeds stability limit {limit:e} s")]
    GridInstability { dt: f64, limit: f64 },
    #[error("efficiency anchor infeasible: bare efficiency {bare:.4} cannot be scaled down to {target:.4}")]
    AnchorInfeasible { bare: f64, target: f64 },
}

/// Λ-system and sample parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaParams {
    pub optical_depth: f64,
    /// Excited-state population decay rate Γ (rad/s); coherences decay at Γ/2.
    pub gamma_e: f64,
    pub omega_c: f64,
    pub gamma_0: f64,
    pub length: f64,
    pub signal_detuning: f64,
    pub two_photon_detuning: f64,
}

impl Default for LambdaParams {
    fn default() -> Self {
        LambdaParams {
            optical_depth: 15.0,
            gamma_e: CESIUM_D2_GAMMA,
            omega_c: 0.0,
            gamma_0: 0.0,
            length: 2e-3,
            signal_detuning: 0.0,
            two_photon_detuning: 0.0,
        }
    }
}

impl LambdaParams {
    pub fn with_control(mut self, omega_c: f64) -> Self {
        self.omega_c = omega_c;
        self
    }

    pub fn validate(&self) -> Result<(), EitError> {
        let bad = |m: &str| Err(EitError::InvalidParams(m.to_string()));
        if !(self.optical_depth > 0.0 && self.optical_depth.is_finite()) {
            return bad("optical_depth must be positive");
        }
        if !(self.gamma_e > 0.0 && self.gamma_e.is_finite()) {
            return bad("gamma_e must be positive");
        }
        if !(self.omega_c >= 0.0 && self.omega_c.is_finite()) {
            return bad("omega_c must be non-negative");
        }
        if !(self.gamma_0 >= 0.0 && self.gamma_0.is_finite()) {
            return bad("gamma_0 must be non-negative");
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad("length must be positive");
        }
        if !self.signal_detuning.is_finite() || !self.two_photon_detuning.is_finite() {
            return bad("detunings must be finite");
        }
        Ok(())
    }

    /// Optical coherence decay rate γ = Γ/2.
    pub fn gamma(&self) -> f64 {
        0.5 * self.gamma_e
    }

    /// Light-matter coupling in normalized length units, `g = sqrt(d γ / 2)`.
    pub fn coupling(&self) -> f64 {
        (self.optical_depth * self.gamma() / 2.0).sqrt()
    }

    /// Vacuum transit time `L / c`.
    pub fn transit_time(&self) -> f64 {
        self.length / SPEED_OF_LIGHT
    }
}

/// Normalized absorption kernel κ(δ); `κ = 1` on a bare two-level resonance.
pub fn absorption_kernel(delta: f64, p: &LambdaParams) -> Complex64 {
    let a = 0.25 * p.omega_c * p.omega_c;
    let b = Complex64::new(p.gamma_0, -(p.two_photon_detuning + delta));
    let c = Complex64::new(p.gamma(), -(p.signal_detuning + delta));
    if a == 0.0 {
        return p.gamma() / c;
    }
    p.gamma() * b / (c * b + a)
}

/// dκ/dδ, regular at the dark resonance.
pub fn absorption_kernel_slope(delta: f64, p: &LambdaParams) -> Complex64 {
    let a = 0.25 * p.omega_c * p.omega_c;
    let b = Complex64::new(p.gamma_0, -(p.two_photon_detuning + delta));
    let c = Complex64::new(p.gamma(), -(p.signal_detuning + delta));
    if a == 0.0 {
        return p.gamma() * I / (c * c);
    }
    let den = c * b + a;
    p.gamma() * I * (b * b - a) / (den * den)
}

/// Linear susceptibility χ(δ) of the sample for the signal field.
pub fn eit_susceptibility(delta: f64, p: &LambdaParams) -> Complex64 {
    let k = 2.0 * PI / CESIUM_D2_WAVELENGTH;
    I * p.optical_depth * absorption_kernel(delta, p) / (k * p.length)
}

/// Amplitude transfer function of the sample, `exp(-d κ(δ) / 2)` (retarded frame).
pub fn transfer_function(delta: f64, p: &LambdaParams) -> Complex64 {
    (-0.5 * p.optical_depth * absorption_kernel(delta, p)).exp()
}

/// Group delay `L / v_g` at δ = 0, including the vacuum transit time.
pub fn group_delay(p: &LambdaParams) -> f64 {
    medium_delay(p) + p.transit_time()
}

fn medium_delay(p: &LambdaParams) -> f64 {
    -0.5 * p.optical_depth * absorption_kernel_slope(0.0, p).im
}

/// Group index `c / v_g` from a central difference of Re χ.
pub fn group_index(p: &LambdaParams) -> f64 {
    let omega = 2.0 * PI * SPEED_OF_LIGHT / CESIUM_D2_WAVELENGTH;
    let h = 1e-4 * transparency_scale(p);
    let dchi = (eit_susceptibility(h, p).re - eit_susceptibility(-h, p).re) / (2.0 * h);
    1.0 + 0.5 * omega * dchi
}

fn transparency_scale(p: &LambdaParams) -> f64 {
    let a = 0.25 * p.omega_c * p.omega_c;
    (a / p.gamma()).max(p.gamma_0).max(1e-6 * p.gamma())
}

/// Half width (rad/s) of the transparency window: smallest δ > 0 with
/// Re κ(δ) = 1/2. `None` when the line center is already half absorbing.
pub fn transparency_half_width(p: &LambdaParams) -> Option<f64> {
    let re = |d: f64| absorption_kernel(d, p).re - 0.5;
    if re(0.0) >= 0.0 {
        return None;
    }
    let mut hi = 1e-3 * transparency_scale(p);
    let mut lo = 0.0;
    while re(hi) < 0.0 {
        lo = hi;
        hi *= 1.5;
        if hi > 1e4 * p.gamma() {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if re(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Control Rabi frequency giving the requested group delay.
///
/// The delay is scanned on a log grid to locate its maximum; the root is then
/// bisected on the branch where the delay decreases with Ω.
pub fn calibrate_control(target_delay: f64, p: &LambdaParams) -> Result<f64, EitError> {
    p.validate()?;
    if !(target_delay > 0.0) || !target_delay.is_finite() {
        return Err(EitError::InvalidParams("target_delay must be positive".into()));
    }
    let delay = |omega: f64| group_delay(&p.with_control(omega));
    let (lo_bound, hi_bound) = (1e-6 * p.gamma(), 1e3 * p.gamma());
    let steps = 900;
    let mut peak = (lo_bound, delay(lo_bound));
    for k in 1..=steps {
        let om = lo_bound * (hi_bound / lo_bound).powf(k as f64 / steps as f64);
        let d = delay(om);
        if d > peak.1 {
            peak = (om, d);
        }
    }
    let min = delay(hi_bound);
    if target_delay > peak.1 || target_delay < min {
        return Err(EitError::UnreachableDelay {
            target: target_delay,
            min,
            max: peak.1,
        });
    }
    let (mut lo, mut hi) = (peak.0, hi_bound);
    for _ in 0..300 {
        let mid = (lo * hi).sqrt();
        if delay(mid) > target_delay {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampShape {
    Linear,
    #[default]
    Smoothstep,
}

/// Control field schedule. `ramp_down_start = None` keeps the control on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlTimeline {
    pub ramp_down_start: Option<f64>,
    pub ramp_duration: f64,
    pub storage_time: f64,
    #[serde(default)]
    pub shape: RampShape,
}

impl Default for ControlTimeline {
    fn default() -> Self {
        ControlTimeline {
            ramp_down_start: Some(0.0),
            ramp_duration: 50e-9,
            storage_time: 1e-6,
            shape: RampShape::Smoothstep,
        }
    }
}

impl ControlTimeline {
    pub fn slow_light() -> Self {
        ControlTimeline {
            ramp_down_start: None,
            storage_time: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EitError> {
        if !(self.ramp_duration > 0.0) || !self.ramp_duration.is_finite() {
            return Err(EitError::InvalidParams("ramp_duration must be positive".into()));
        }
        if !(self.storage_time >= 0.0) || !self.storage_time.is_finite() {
            return Err(EitError::InvalidParams("storage_time must be non-negative".into()));
        }
        if self.ramp_down_start.is_some_and(|t| !t.is_finite()) {
            return Err(EitError::InvalidParams("ramp_down_start must be finite".into()));
        }
        Ok(())
    }

    /// Start of the read ramp, if the control is switched at all.
    pub fn ramp_up_start(&self) -> Option<f64> {
        self.ramp_down_start
            .map(|t| t + self.ramp_duration + self.storage_time)
    }

    /// Control amplitude relative to its full value, in `[0, 1]`.
    pub fn envelope(&self, t: f64) -> f64 {
        let Some(down) = self.ramp_down_start else {
            return 1.0;
        };
        let up = down + self.ramp_duration + self.storage_time;
        let s = |x: f64| {
            let x = x.clamp(0.0, 1.0);
            match self.shape {
                RampShape::Linear => x,
                RampShape::Smoothstep => x * x * (3.0 - 2.0 * x),
            }
        };
        if t < up {
            1.0 - s((t - down) / self.ramp_duration)
        } else {
            s((t - up) / self.ramp_duration)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    /// Rising half of a Gaussian that ends sharply at `t = 0`; `width` is the
    /// intensity FWHM of the full Gaussian.
    HalfGaussian { width: f64 },
    /// Full Gaussian centered at `t = 0`; `width` is the intensity FWHM.
    Gaussian { width: f64 },
}

/// Input pulse. The amplitude is normalized so that `∫|E|² dt = n̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    pub envelope: Envelope,
    pub mean_photon_number: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape {
            envelope: Envelope::HalfGaussian { width: 300e-9 },
            mean_photon_number: 1.0,
        }
    }
}

impl PulseShape {
    pub fn half_gaussian(width: f64) -> Self {
        PulseShape {
            envelope: Envelope::HalfGaussian { width },
            mean_photon_number: 1.0,
        }
    }

    pub fn gaussian(width: f64) -> Self {
        PulseShape {
            envelope: Envelope::Gaussian { width },
            mean_photon_number: 1.0,
        }
    }

    pub fn with_mean_photon_number(mut self, n: f64) -> Self {
        self.mean_photon_number = n;
        self
    }

    pub fn width(&self) -> f64 {
        match self.envelope {
            Envelope::HalfGaussian { width } | Envelope::Gaussian { width } => width,
        }
    }

    /// Intensity standard deviation of the underlying Gaussian.
    pub fn sigma(&self) -> f64 {
        self.width() / (8.0 * 2f64.ln()).sqrt()
    }

    pub fn validate(&self) -> Result<(), EitError> {
        if !(self.width() > 0.0) || !self.width().is_finite() {
            return Err(EitError::InvalidParams("pulse width must be positive".into()));
        }
        if !(self.mean_photon_number >= 0.0) || !self.mean_photon_number.is_finite() {
            return Err(EitError::InvalidParams("mean photon number must be non-negative".into()));
        }
        Ok(())
    }

    /// Time span outside which the intensity is below `1e-14` of its peak.
    pub fn support(&self) -> (f64, f64) {
        let reach = 8.0 * self.sigma();
        match self.envelope {
            Envelope::HalfGaussian { .. } => (-reach, 0.0),
            Envelope::Gaussian { .. } => (-reach, reach),
        }
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        let s = self.sigma();
        let gauss = (-t * t / (4.0 * s * s)).exp();
        match self.envelope {
            Envelope::HalfGaussian { .. } => {
                if t > 0.0 {
                    0.0
                } else {
                    gauss * (self.mean_photon_number / (s * (PI / 2.0).sqrt())).sqrt()
                }
            }
            Envelope::Gaussian { .. } => gauss * (self.mean_photon_number / (s * (2.0 * PI).sqrt())).sqrt(),
        }
    }
}

/// Scalar storage channel applied identically to both qubit amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageChannel {
    pub amplitude_transmission: Complex64,
    pub efficiency: f64,
    pub leak_fraction: f64,
    pub delay: f64,
}

impl StorageChannel {
    pub fn identity() -> Self {
        StorageChannel {
            amplitude_transmission: Complex64::new(1.0, 0.0),
            efficiency: 1.0,
            leak_fraction: 0.0,
            delay: 0.0,
        }
    }

    /// Channel with the given energy efficiency and a real amplitude.
    pub fn with_efficiency(efficiency: f64) -> Self {
        StorageChannel {
            amplitude_transmission: Complex64::new(efficiency.sqrt(), 0.0),
            efficiency,
            leak_fraction: 0.0,
            delay: 0.0,
        }
    }
}

/// Discretization of the Maxwell-Bloch solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverGrid {
    pub nz: usize,
    /// Fixed time step; automatic when `None`.
    pub dt: Option<f64>,
}

impl Default for SolverGrid {
    fn default() -> Self {
        SolverGrid { nz: 200, dt: None }
    }
}

/// Result of a time-domain storage simulation. Energies are in photons
/// (the input energy equals the pulse's n̄).
#[derive(Debug, Clone, PartialEq)]
pub struct StorageRun {
    pub channel: StorageChannel,
    pub times: Vec<f64>,
    pub input: Vec<Complex64>,
    pub output: Vec<Complex64>,
    pub control: Vec<f64>,
    pub input_energy: f64,
    pub leaked: f64,
    pub retrieved: f64,
    pub absorbed: f64,
    /// Excitation still in the medium when the run stops.
    pub remaining: f64,
    pub dt: f64,
}

impl StorageRun {
    /// `input - (leaked + retrieved + absorbed + remaining)`, relative to input.
    pub fn balance_error(&self) -> f64 {
        if self.input_energy == 0.0 {
            return 0.0;
        }
        (self.input_energy - self.leaked - self.retrieved - self.absorbed - self.remaining) / self.input_energy
    }

    pub fn transmitted(&self) -> f64 {
        self.leaked + self.retrieved
    }
}

/// RK4 stability bound for the explicit solver.
pub fn stability_limit(p: &LambdaParams) -> f64 {
    let g2 = p.coupling().powi(2);
    let rate = p.gamma() + p.signal_detuning.abs() + p.gamma_0 + p.two_photon_detuning.abs() + 0.5 * p.omega_c + g2;
    2.5 / rate
}

pub fn simulate_storage(pulse: &PulseShape, tl: &ControlTimeline, p: &LambdaParams) -> Result<StorageRun, EitError> {
    simulate_storage_with(pulse, tl, p, &SolverGrid::default())
}

struct Medium {
    nz: usize,
    dz: f64,
    g: f64,
    decay_p: Complex64,
    decay_s: Complex64,
    gamma: f64,
    gamma_0: f64,
    e: Vec<Complex64>,
}

struct Rates {
    input: f64,
    output: f64,
    loss: f64,
}

impl Medium {
    fn trapz(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.nz;
        let inner: f64 = (1..n - 1).map(&f).sum();
        self.dz * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    fn energy(&self, ps: &[Complex64], ss: &[Complex64]) -> f64 {
        self.trapz(|k| ps[k].norm_sqr() + ss[k].norm_sqr())
    }

    /// Evaluates the time derivative of (P, S) and the energy flow rates.
    fn deriv(
        &mut self,
        ein: Complex64,
        omega: f64,
        ps: &[Complex64],
        ss: &[Complex64],
        dp: &mut [Complex64],
        ds: &mut [Complex64],
    ) -> Rates {
        let half_gdz = 0.5 * self.g * self.dz;
        self.e[0] = ein;
        for k in 1..self.nz {
            self.e[k] = self.e[k - 1] + I * half_gdz * (ps[k - 1] + ps[k]);
        }
        let half_om = 0.5 * omega;
        for k in 0..self.nz {
            dp[k] = -self.decay_p * ps[k] + I * (self.g * self.e[k] + half_om * ss[k]);
            ds[k] = -self.decay_s * ss[k] + I * half_om * ps[k];
        }
        let loss = self.trapz(|k| 2.0 * self.gamma * ps[k].norm_sqr() + 2.0 * self.gamma_0 * ss[k].norm_sqr());
        Rates {
            input: ein.norm_sqr(),
            output: self.e[self.nz - 1].norm_sqr(),
            loss,
        }
    }
}

/// Integrates the Maxwell-Bloch equations with RK4 in time and trapezoidal
/// propagation in z. Stage times are evaluated just inside each step so that
/// the sharp pulse edge at `t = 0` (a grid node) is resolved exactly.
pub fn simulate_storage_with(
    pulse: &PulseShape,
    tl: &ControlTimeline,
    p: &LambdaParams,
    grid: &SolverGrid,
) -> Result<StorageRun, EitError> {
    p.validate()?;
    tl.validate()?;
    pulse.validate()?;
    if grid.nz < 3 {
        return Err(EitError::InvalidParams("nz must be at least 3".into()));
    }
    let limit = stability_limit(p);
    let delay = {
        let d = medium_delay(p);
        if d.is_finite() && d > 0.0 {
            d
        } else {
            1.0 / p.gamma()
        }
    };
    let dt = match grid.dt {
        Some(dt) if !(dt > 0.0) || !dt.is_finite() => {
            return Err(EitError::InvalidParams("dt must be positive".into()));
        }
        Some(dt) if dt > limit => return Err(EitError::GridInstability { dt, limit }),
        Some(dt) => dt,
        None => (tl.ramp_duration / 20.0)
            .min(0.5 * delay / (grid.nz - 1) as f64)
            .min(0.5 * limit),
    };

    let (lead, tail) = pulse.support();
    let n_lead = (-lead / dt).ceil() as i64;
    let t_start = -(n_lead as f64) * dt;
    let mut t_quiet = tail;
    if let Some(down) = tl.ramp_down_start {
        t_quiet = t_quiet.max(down + 2.0 * tl.ramp_duration + tl.storage_time);
    }
    let settle = delay + p.gamma().recip() + pulse.width();
    let t_hard_stop = t_quiet + 60.0 * settle;

    let nz = grid.nz;
    let mut med = Medium {
        nz,
        dz: 1.0 / (nz - 1) as f64,
        g: p.coupling(),
        decay_p: Complex64::new(p.gamma(), -p.signal_detuning),
        decay_s: Complex64::new(p.gamma_0, -p.two_photon_detuning),
        gamma: p.gamma(),
        gamma_0: p.gamma_0,
        e: vec![Complex64::new(0.0, 0.0); nz],
    };

    let zero = Complex64::new(0.0, 0.0);
    let mut ps = vec![zero; nz];
    let mut ss = vec![zero; nz];
    let mut kp = vec![vec![zero; nz]; 4];
    let mut ks = vec![vec![zero; nz]; 4];
    let mut tp = vec![zero; nz];
    let mut ts = vec![zero; nz];

    let up_start = tl.ramp_up_start();
    let (mut w_in, mut w_out, mut w_abs) = (0.0, 0.0, 0.0);
    let mut w_leak: Option<f64> = None;
    let mut times = Vec::new();
    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut control = Vec::new();

    let record = |t: f64, med: &mut Medium, ps: &[Complex64], ss: &[Complex64], times: &mut Vec<f64>, input: &mut Vec<Complex64>, output: &mut Vec<Complex64>, control: &mut Vec<f64>| {
        let ein = Complex64::new(pulse.amplitude(t), 0.0);
        let omega = p.omega_c * tl.envelope(t);
        let mut dp = vec![zero; ps.len()];
        let mut ds = vec![zero; ps.len()];
        med.deriv(ein, omega, ps, ss, &mut dp, &mut ds);
        times.push(t);
        input.push(ein);
        output.push(med.e[med.nz - 1]);
        control.push(omega);
    };

    let stage_offsets = [1e-9, 0.5, 0.5, 1.0 - 1e-9];
    let mut step: i64 = 0;
    record(t_start, &mut med, &ps, &ss, &mut times, &mut input, &mut output, &mut control);
    loop {
        let t0 = t_start + step as f64 * dt;
        if let (None, Some(up)) = (w_leak, up_start) {
            if t0 >= up {
                w_leak = Some(w_out);
            }
        }
        if t0 >= t_quiet {
            let remaining = med.energy(&ps, &ss);
            if remaining <= 1e-9 * pulse.mean_photon_number.max(1e-300) || t0 >= t_hard_stop {
                break;
            }
        }

        let mut rates = [0.0f64; 3];
        for (stage, &c) in stage_offsets.iter().enumerate() {
            let t = t0 + c * dt;
            let ein = Complex64::new(pulse.amplitude(t), 0.0);
            let omega = p.omega_c * tl.envelope(t);
            let weight = if stage == 0 || stage == 3 { 1.0 } else { 2.0 };
            let r = if stage == 0 {
                med.deriv(ein, omega, &ps, &ss, &mut kp[0], &mut ks[0])
            } else {
                let h = if stage == 3 { dt } else { 0.5 * dt };
                for k in 0..nz {
                    tp[k] = ps[k] + h * kp[stage - 1][k];
                    ts[k] = ss[k] + h * ks[stage - 1][k];
                }
                let (head_p, tail_p) = kp.split_at_mut(stage);
                let (head_s, tail_s) = ks.split_at_mut(stage);
                let _ = (head_p, head_s);
                med.deriv(ein, omega, &tp, &ts, &mut tail_p[0], &mut tail_s[0])
            };
            rates[0] += weight * r.input;
            rates[1] += weight * r.output;
            rates[2] += weight * r.loss;
        }
        for k in 0..nz {
            ps[k] += dt / 6.0 * (kp[0][k] + 2.0 * kp[1][k] + 2.0 * kp[2][k] + kp[3][k]);
            ss[k] += dt / 6.0 * (ks[0][k] + 2.0 * ks[1][k] + 2.0 * ks[2][k] + ks[3][k]);
        }
        w_in += dt / 6.0 * rates[0];
        w_out += dt / 6.0 * rates[1];
        w_abs += dt / 6.0 * rates[2];
        step += 1;
        let t1 = t_start + step as f64 * dt;
        record(t1, &mut med, &ps, &ss, &mut times, &mut input, &mut output, &mut control);
        if !ps.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(EitError::GridInstability { dt, limit });
        }
    }

    let remaining = med.energy(&ps, &ss);
    let (leaked, retrieved) = match (up_start, w_leak) {
        (None, _) => (w_out, 0.0),
        (Some(_), Some(l)) => (l, w_out - l),
        (Some(_), None) => (w_out, 0.0),
    };
    let (efficiency, leak_fraction) = if w_in > 0.0 {
        ((retrieved / w_in).clamp(0.0, 1.0), (leaked / w_in).clamp(0.0, 1.0))
    } else {
        (0.0, 0.0)
    };
    let centroid = |v: &[Complex64]| {
        let (mut num, mut den) = (0.0, 0.0);
        for (t, a) in times.iter().zip(v) {
            num += t * a.norm_sqr();
            den += a.norm_sqr();
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let channel = StorageChannel {
        amplitude_transmission: Complex64::new(efficiency.sqrt(), 0.0),
        efficiency,
        leak_fraction,
        delay: centroid(&output) - centroid(&input) + p.transit_time(),
    };
    Ok(StorageRun {
        channel,
        times,
        input,
        output,
        control,
        input_energy: w_in,
        leaked,
        retrieved,
        absorbed: w_abs,
        remaining,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayLaw {
    #[default]
    Gaussian,
    Exponential,
}

/// Amplitude factor after storing for `t_store`; `tau` is the 1/e time of the
/// retrieved energy.
pub fn decoherence_factor(t_store: f64, tau: f64) -> f64 {
    decoherence_factor_with(t_store, tau, DecayLaw::Gaussian)
}

pub fn decoherence_factor_with(t_store: f64, tau: f64, law: DecayLaw) -> f64 {
    if t_store <= 0.0 {
        return 1.0;
    }
    let x = t_store / tau;
    match law {
        DecayLaw::Gaussian => (-0.5 * x * x).exp(),
        DecayLaw::Exponential => (-0.5 * x).exp(),
    }
}

/// Spin-wave wavevector for a signal/control angle.
pub fn spin_wave_wavevector(angle: f64) -> f64 {
    4.0 * PI / CESIUM_D2_WAVELENGTH * (0.5 * angle).sin()
}

/// Motional dephasing time `1 / (k_s σ_v)` for cesium at `temperature`.
pub fn motional_dephasing_time(angle: f64, temperature: f64) -> f64 {
    let sigma_v = (BOLTZMANN * temperature / CESIUM_MASS).sqrt();
    1.0 / (spin_wave_wavevector(angle) * sigma_v)
}

/// Temperature at which the motional dephasing time equals `tau`.
pub fn temperature_for_dephasing_time(angle: f64, tau: f64) -> f64 {
    let sigma_v = 1.0 / (spin_wave_wavevector(angle) * tau);
    CESIUM_MASS * sigma_v * sigma_v / BOLTZMANN
}

/// Optional asymmetry between the two OAM components, applied to `|L>`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelAsymmetry {
    pub differential_phase: f64,
    /// Relative change of the `|L>` energy efficiency.
    pub differential_efficiency: f64,
}

/// Unnormalized retrieved qubit and its success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredQubit {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub success_probability: f64,
}

impl StoredQubit {
    pub fn normalized(&self) -> Option<OamQubit> {
        OamQubit::normalize(self.alpha, self.beta).ok()
    }
}

pub fn store_qubit(q: &OamQubit, ch: &StorageChannel) -> StoredQubit {
    store_qubit_with(q, ch, &ChannelAsymmetry::default())
}

pub fn store_qubit_with(q: &OamQubit, ch: &StorageChannel, asym: &ChannelAsymmetry) -> StoredQubit {
    let t = ch.amplitude_transmission;
    let scale_l = (1.0 + asym.differential_efficiency).max(0.0).sqrt();
    let alpha = t * q.alpha;
    let beta = t * q.beta * Complex64::from_polar(scale_l, asym.differential_phase);
    StoredQubit {
        alpha,
        beta,
        success_probability: alpha.norm_sqr() + beta.norm_sqr(),
    }
}

/// Outcome of the memory calibration against the delay and efficiency anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryCalibration {
    pub omega_c: f64,
    pub group_delay: f64,
    pub group_index: f64,
    pub bare_efficiency: f64,
    pub leak_fraction: f64,
    pub decoherence_energy: f64,
    /// Multiplicative energy factor fitted so the total efficiency hits the target.
    pub technical_loss: f64,
    pub channel: StorageChannel,
}

/// Calibrates Ω_c from the delay, runs the storage simulation and fits the
/// single technical-loss factor so the total efficiency equals
/// `target_efficiency` after `tl.storage_time` of decoherence.
pub fn calibrate_memory(
    target_delay: f64,
    target_efficiency: f64,
    memory_time: f64,
    law: DecayLaw,
    pulse: &PulseShape,
    tl: &ControlTimeline,
    base: &LambdaParams,
) -> Result<(MemoryCalibration, StorageRun), EitError> {
    let omega_c = calibrate_control(target_delay, base)?;
    let p = base.with_control(omega_c);
    let run = simulate_storage(pulse, tl, &p)?;
    let decoherence = decoherence_factor_with(tl.storage_time, memory_time, law).powi(2);
    let bare = run.channel.efficiency;
    let available = bare * decoherence;
    if !(available > 0.0) || target_efficiency > available {
        return Err(EitError::AnchorInfeasible {
            bare: available,
            target: target_efficiency,
        });
    }
    let technical_loss = target_efficiency / available;
    let efficiency = available * technical_loss;
    let channel = StorageChannel {
        amplitude_transmission: Complex64::new(efficiency.sqrt(), 0.0),
        efficiency,
        leak_fraction: run.channel.leak_fraction,
        delay: run.channel.delay,
    };
    Ok((
        MemoryCalibration {
            omega_c,
            group_delay: group_delay(&p),
            group_index: group_index(&p),
            bare_efficiency: bare,
            leak_fraction: run.channel.leak_fraction,
            decoherence_energy: decoherence,
            technical_loss,
            channel,
        },
        run,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calibrated() -> LambdaParams {
        let p = LambdaParams::default();
        p.with_control(calibrate_control(200e-9, &p).unwrap())
    }

    #[test]
    fn dark_resonance_is_transparent() {
        let p = calibrated();
        assert_eq!(eit_susceptibility(0.0, &p).im, 0.0);
        assert_eq!(absorption_kernel(0.0, &p), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn no_control_gives_two_level_optical_depth() {
        let p = LambdaParams::default();
        let od = -transfer_function(0.0, &p).norm_sqr().ln();
        assert!((od - 15.0).abs() < 1e-12);
        // Lorentzian half width at half maximum of Re κ is γ
        let k = absorption_kernel(p.gamma(), &p).re;
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_target_delay() {
        let p = calibrated();
        assert!((group_delay(&p) / 200e-9 - 1.0).abs() < 1e-3);
        // closed form d Γ / Ω² for γ0 = 0
        let approx = p.optical_depth * p.gamma_e / p.omega_c.powi(2) + p.transit_time();
        assert!((approx / group_delay(&p) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn group_index_two_routes_agree() {
        let p = calibrated();
        let from_delay = SPEED_OF_LIGHT * group_delay(&p) / p.length;
        let ng = group_index(&p);
        assert!((ng / from_delay - 1.0).abs() < 1e-4, "{ng} vs {from_delay}");
        assert!((ng / 3e4 - 1.0).abs() < 0.1, "slowing factor {ng}");
    }

    #[test]
    fn unreachable_delays_are_reported() {
        let p = LambdaParams::default();
        assert!(matches!(
            calibrate_control(1e-12, &p),
            Err(EitError::UnreachableDelay { .. })
        ));
        let lossy = LambdaParams {
            gamma_0: 1e6,
            ..p
        };
        assert!(matches!(
            calibrate_control(1e-3, &lossy),
            Err(EitError::UnreachableDelay { .. })
        ));
    }

    #[test]
    fn long_target_delay_needs_weak_control() {
        let p = LambdaParams::default();
        let a = calibrate_control(1e-6, &p).unwrap();
        let b = calibrate_control(1e-4, &p).unwrap();
        assert!(b < a / 5.0);
    }

    #[test]
    fn timeline_envelope() {
        let tl = ControlTimeline {
            ramp_down_start: Some(0.0),
            ramp_duration: 50e-9,
            storage_time: 1e-6,
            shape: RampShape::Linear,
        };
        assert_eq!(tl.envelope(-1e-9), 1.0);
        assert!((tl.envelope(25e-9) - 0.5).abs() < 1e-12);
        assert_eq!(tl.envelope(0.5e-6), 0.0);
        assert!((tl.envelope(1.075e-6) - 0.5).abs() < 1e-9);
        assert_eq!(tl.envelope(2e-6), 1.0);
        assert_eq!(ControlTimeline::slow_light().envelope(5.0), 1.0);
    }

    #[test]
    fn pulses_are_normalized() {
        for pulse in [PulseShape::half_gaussian(300e-9), PulseShape::gaussian(300e-9)] {
            let (a, b) = pulse.support();
            let n = 200_000;
            let h = (b - a) / n as f64;
            let e: f64 = (0..n).map(|k| pulse.amplitude(a + (k as f64 + 0.5) * h).powi(2) * h).sum();
            assert!((e - 1.0).abs() < 1e-6, "{e}");
        }
        let p = PulseShape::gaussian(300e-9);
        // intensity FWHM
        let half = p.amplitude(150e-9).powi(2) / p.amplitude(0.0).powi(2);
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decoherence_conventions() {
        assert_eq!(decoherence_factor(0.0, 15e-6), 1.0);
        assert!((decoherence_factor(15e-6, 15e-6).powi(2) - (-1f64).exp()).abs() < 1e-12);
        assert!((decoherence_factor_with(15e-6, 15e-6, DecayLaw::Exponential).powi(2) - (-1f64).exp()).abs() < 1e-12);
        assert!(decoherence_factor(1e-6, 15e-6).powi(2) > 0.99);
    }

    #[test]
    fn motional_dephasing_inverse() {
        let angle = 1.7f64.to_radians();
        let t = temperature_for_dephasing_time(angle, 15e-6);
        assert!((motional_dephasing_time(angle, t) / 15e-6 - 1.0).abs() < 1e-12);
        assert!(t > 1e-3 && t < 2e-3, "{t}");
        let ratio = motional_dephasing_time(0.01, 1e-4) / motional_dephasing_time(0.02, 1e-4);
        assert!((ratio - 2.0).abs() < 0.02);
    }

    #[test]
    fn identity_channel_keeps_qubit() {
        let q = crate::mode::bloch_state(1.1, 0.4);
        let out = store_qubit(&q, &StorageChannel::identity());
        assert_eq!(out.alpha, q.alpha);
        assert_eq!(out.beta, q.beta);
        assert!((out.success_probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_large_time_step_is_rejected() {
        let p = calibrated();
        let grid = SolverGrid {
            nz: 50,
            dt: Some(1e-6),
        };
        let r = simulate_storage_with(&PulseShape::default(), &ControlTimeline::default(), &p, &grid);
        assert!(matches!(r, Err(EitError::GridInstability { .. })));
    }
}
