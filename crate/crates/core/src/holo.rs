//! Phase-only holograms: SLM qubit-preparation patterns, blazed fork gratings,
//! and the two `{|R>, |L>}` mode projectors (fork hologram + single-mode fiber).

use crate::fft::{self, Direction};
use crate::mode::{overlap, GridSpec, ModeError, ModeIndex, OamQubit, TransverseField};
use crate::mode::lg_field;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Default SLM resolution (pixels).
pub const SLM_RESOLUTION: (usize, usize) = (792, 600);
/// Default SLM pixel pitch (meters).
pub const SLM_PITCH: f64 = 20e-6;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoloError {
    #[error("blaze period {period:.3e} m is not above two pixels ({pitch:.3e} m pitch)")]
    UndersampledBlaze { period: f64, pitch: f64 },
    #[error("pattern {pattern:?} does not sit on the field grid {grid:?}")]
    GridMismatch { pattern: (usize, usize, f64), grid: (usize, usize, f64) },
    #[error("invalid pattern: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

/// Phase-only map with values in `[0, 2 pi)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePattern {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    phase: Vec<f64>,
}

#[inline]
fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TWO_PI);
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

impl PhasePattern {
    /// Build from a function of physical coordinates `(x, y)` measured from
    /// pixel `(nx/2, ny/2)`.
    pub fn from_fn(nx: usize, ny: usize, pitch: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut phase = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = (j as f64 - (ny / 2) as f64) * pitch;
            for i in 0..nx {
                let x = (i as f64 - (nx / 2) as f64) * pitch;
                phase.push(wrap_phase(f(x, y)));
            }
        }
        PhasePattern { nx, ny, pitch, phase }
    }

    pub fn zeros(nx: usize, ny: usize, pitch: f64) -> Self {
        PhasePattern {
            nx,
            ny,
            pitch,
            phase: vec![0.0; nx * ny],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.phase
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.phase[j * self.nx + i]
    }

    /// Nearest-neighbour resampling onto a field grid. Points outside the
    /// pattern get zero phase.
    pub fn resampled_to(&self, grid: &GridSpec) -> PhasePattern {
        let cx = (self.nx / 2) as f64;
        let cy = (self.ny / 2) as f64;
        let mut phase = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let sj = (grid.y(j) / self.pitch + cy + 0.5).floor();
            for i in 0..grid.nx {
                let si = (grid.x(i) / self.pitch + cx + 0.5).floor();
                let inside = si >= 0.0 && sj >= 0.0 && (si as usize) < self.nx && (sj as usize) < self.ny;
                phase.push(if inside {
                    self.at(si as usize, sj as usize)
                } else {
                    0.0
                });
            }
        }
        PhasePattern {
            nx: grid.nx,
            ny: grid.ny,
            pitch: grid.dx,
            phase,
        }
    }

    /// 8-bit grayscale levels, phase `0..2pi` mapped onto `0..255`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.phase
            .iter()
            .map(|p| ((p / TWO_PI) * 256.0).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Binary PGM of [`Self::to_gray8`], top row at `+y`.
    pub fn write_pgm<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.nx, self.ny)?;
        let gray = self.to_gray8();
        for j in (0..self.ny).rev() {
            w.write_all(&gray[j * self.nx..(j + 1) * self.nx])?;
        }
        Ok(())
    }
}

/// SLM pattern preparing `q` from a flat input beam.
///
/// Pure `|R>`/`|L>` get a rotating phase `+-theta`; equal-weight superpositions
/// get a binary 0/pi sector pattern oriented at `arg(beta/alpha)/2`; anything
/// else gets the phase of `alpha e^{i theta} + beta e^{-i theta}`.
pub fn slm_qubit_pattern(q: &OamQubit, nx: usize, ny: usize, pitch: f64) -> PhasePattern {
    let (a2, b2) = (q.alpha.norm_sqr(), q.beta.norm_sqr());
    let azimuth = |x: f64, y: f64| if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
    if b2 < 1e-12 {
        PhasePattern::from_fn(nx, ny, pitch, |x, y| azimuth(x, y))
    } else if a2 < 1e-12 {
        PhasePattern::from_fn(nx, ny, pitch, |x, y| -azimuth(x, y))
    } else if (a2 - b2).abs() < 1e-9 {
        let orient = (q.beta / q.alpha).arg() / 2.0;
        PhasePattern::from_fn(nx, ny, pitch, |x, y| {
            if (azimuth(x, y) - orient).cos() < 0.0 {
                PI
            } else {
                0.0
            }
        })
    } else {
        PhasePattern::from_fn(nx, ny, pitch, |x, y| {
            let t = azimuth(x, y);
            (q.alpha * Complex64::from_polar(1.0, t) + q.beta * Complex64::from_polar(1.0, -t)).arg()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForkSpec {
    /// OAM added to the first diffraction order.
    pub delta_l: i32,
    /// Grating period along x, meters.
    pub blaze_period: f64,
    /// Dislocation position in pixel coordinates.
    pub center: (f64, f64),
}

/// Blazed fork grating: `mod(delta_l theta + 2 pi x / period, 2 pi)`.
pub fn fork_pattern(spec: &ForkSpec, nx: usize, ny: usize, pitch: f64) -> Result<PhasePattern, HoloError> {
    if !(spec.blaze_period > 2.0 * pitch) {
        return Err(HoloError::UndersampledBlaze {
            period: spec.blaze_period,
            pitch,
        });
    }
    let mut phase = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = (j as f64 - spec.center.1) * pitch;
        for i in 0..nx {
            let x = (i as f64 - spec.center.0) * pitch;
            let theta = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
            phase.push(wrap_phase(spec.delta_l as f64 * theta + TWO_PI * x / spec.blaze_period));
        }
    }
    Ok(PhasePattern { nx, ny, pitch, phase })
}

/// Pointwise multiplication by `e^{i phase}`.
pub fn apply_pattern(f: &TransverseField, p: &PhasePattern) -> Result<TransverseField, HoloError> {
    let g = f.grid();
    if p.nx != g.nx || p.ny != g.ny || (p.pitch - g.dx).abs() > 1e-12 * g.dx {
        return Err(HoloError::GridMismatch {
            pattern: (p.nx, p.ny, p.pitch),
            grid: (g.nx, g.ny, g.dx),
        });
    }
    let data = f
        .samples()
        .iter()
        .zip(&p.phase)
        .map(|(v, &ph)| v * Complex64::from_polar(1.0, ph))
        .collect();
    Ok(TransverseField::from_samples(*g, data)?)
}

/// Analysis arm of the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    /// Subtracts one OAM unit; its fiber selects `|R>`.
    Right,
    /// Adds one OAM unit; its fiber selects `|L>`.
    Left,
}

impl Arm {
    pub fn oam_shift(self) -> i32 {
        match self {
            Arm::Right => -1,
            Arm::Left => 1,
        }
    }
}

/// Normalized Gaussian fiber mode on the grid.
pub fn fiber_mode(waist: f64, g: &GridSpec) -> Result<TransverseField, ModeError> {
    lg_field(&ModeIndex::new(0, 0, waist), g)
}

fn spiral(f: &TransverseField, l: i32) -> TransverseField {
    let g = *f.grid();
    let mut out = f.clone();
    for j in 0..g.ny {
        let y = g.y(j);
        for i in 0..g.nx {
            let x = g.x(i);
            let theta = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
            out.samples_mut()[j * g.nx + i] *= Complex64::from_polar(1.0, l as f64 * theta);
        }
    }
    out
}

/// Mode-space projector: unwind the arm's OAM shift with a spiral phase and
/// overlap with the fiber Gaussian. For `qubit_field(q)` the Right arm returns
/// `c * alpha` and the Left arm `c * beta`, with `c` the fixed mode match.
pub fn project_arm(f: &TransverseField, arm: Arm, fiber_waist: f64) -> Result<Complex64, ModeError> {
    let fiber = fiber_mode(fiber_waist, f.grid())?;
    project_onto(f, arm, &fiber)
}

/// [`project_arm`] with a precomputed fiber mode.
pub fn project_onto(f: &TransverseField, arm: Arm, fiber: &TransverseField) -> Result<Complex64, ModeError> {
    overlap(fiber, &spiral(f, arm.oam_shift()))
}

/// `|<Gaussian(w_f) | e^{-i theta} LG(+1, w0)>|^2`, the arm mode match.
pub fn mode_match(signal_waist: f64, fiber_waist: f64, g: &GridSpec) -> Result<f64, ModeError> {
    let r = lg_field(&ModeIndex::new(1, 0, signal_waist), g)?;
    Ok(project_arm(&r, Arm::Right, fiber_waist)?.norm_sqr())
}

/// Golden-section search for the fiber waist maximizing [`mode_match`].
/// Returns `(waist, mode_match)`.
pub fn optimal_fiber_waist(signal_waist: f64, g: &GridSpec) -> Result<(f64, f64), ModeError> {
    let r = lg_field(&ModeIndex::new(1, 0, signal_waist), g)?;
    let unwound = spiral(&r, -1);
    let score = |w: f64| -> Result<f64, ModeError> {
        Ok(overlap(&fiber_mode(w, g)?, &unwound)?.norm_sqr())
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.5 * signal_waist, 2.5 * signal_waist);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (score(c)?, score(d)?);
    while hi - lo > 1e-7 * signal_waist {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = score(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = score(d)?;
        }
    }
    let w = 0.5 * (lo + hi);
    Ok((w, score(w)?))
}

/// Hologram geometry for the physical projector path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForkOptics {
    /// Hologram pixel pitch (meters); coarser than the field grid so the
    /// sawtooth is staircased.
    pub hologram_pitch: f64,
    /// Blaze period (meters).
    pub blaze_period: f64,
}

impl ForkOptics {
    /// Two field pixels per hologram pixel, twelve hologram pixels per period.
    pub fn default_for(g: &GridSpec) -> Self {
        ForkOptics {
            hologram_pitch: 2.0 * g.dx,
            blaze_period: 24.0 * g.dx,
        }
    }
}

/// Outcome of the physical projector simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalProjection {
    /// Fiber-coupled amplitude after the fork.
    pub amplitude: Complex64,
    /// Fraction of the incident energy diffracted into the first-order window.
    pub first_order_efficiency: f64,
}

/// Fork hologram for an arm, drawn at hologram resolution and resampled onto
/// the field grid.
pub fn arm_hologram(arm: Arm, optics: &ForkOptics, g: &GridSpec) -> Result<PhasePattern, HoloError> {
    let hx = (g.nx as f64 * g.dx / optics.hologram_pitch).ceil() as usize + 2;
    let hy = (g.ny as f64 * g.dx / optics.hologram_pitch).ceil() as usize + 2;
    let spec = ForkSpec {
        delta_l: arm.oam_shift(),
        blaze_period: optics.blaze_period,
        center: ((hx / 2) as f64, (hy / 2) as f64),
    };
    Ok(fork_pattern(&spec, hx, hy, optics.hologram_pitch)?.resampled_to(g))
}

/// Physical projector: blazed fork, far field through a lens, spatial window
/// on the first order, fiber overlap in the focal plane.
pub fn project_arm_physical(
    f: &TransverseField,
    arm: Arm,
    fiber_waist: f64,
    optics: &ForkOptics,
) -> Result<PhysicalProjection, HoloError> {
    let g = *f.grid();
    let holo = arm_hologram(arm, optics, &g)?;
    let diffracted = apply_pattern(f, &holo)?;
    let (windowed, eff) = first_order(&diffracted, optics.blaze_period);
    // remove the first-order carrier tilt before fiber coupling
    let carrier = TransverseField::from_fn(g, |x, _| Complex64::from_polar(1.0, -TWO_PI * x / optics.blaze_period));
    let mut centered = windowed;
    for (v, c) in centered.samples_mut().iter_mut().zip(carrier.samples()) {
        *v *= c;
    }
    let fiber = fiber_mode(fiber_waist, &g)?;
    Ok(PhysicalProjection {
        amplitude: overlap(&fiber, &centered)?,
        first_order_efficiency: eff,
    })
}

/// Keep only the angular-spectrum content within half an order spacing of the
/// first order. Returns the filtered near field and its energy fraction.
fn first_order(f: &TransverseField, blaze_period: f64) -> (TransverseField, f64) {
    let g = *f.grid();
    let mut spec = f.samples().to_vec();
    fft::fft2(&mut spec, g.nx, g.ny, Direction::Forward);
    let k0 = TWO_PI / blaze_period;
    let radius = 0.5 * k0;
    let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
    let mut kept = 0.0;
    for j in 0..g.ny {
        let ky = fft::angular_frequency(j, g.ny, g.dx);
        for i in 0..g.nx {
            let kx = fft::angular_frequency(i, g.nx, g.dx);
            let v = &mut spec[j * g.nx + i];
            if (kx - k0).hypot(ky) <= radius {
                kept += v.norm_sqr();
            } else {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft::fft2(&mut spec, g.nx, g.ny, Direction::Inverse);
    let eff = if total > 0.0 { kept / total } else { 0.0 };
    (TransverseField::from_samples(g, spec).expect("finite spectrum"), eff)
}

/// First-order diffraction efficiency of a fork (or plain grating when
/// `delta_l = 0`) hologram for the incident field `f`.
pub fn first_order_efficiency(f: &TransverseField, delta_l: i32, optics: &ForkOptics) -> Result<f64, HoloError> {
    let g = *f.grid();
    let hx = (g.nx as f64 * g.dx / optics.hologram_pitch).ceil() as usize + 2;
    let hy = (g.ny as f64 * g.dx / optics.hologram_pitch).ceil() as usize + 2;
    let spec = ForkSpec {
        delta_l,
        blaze_period: optics.blaze_period,
        center: ((hx / 2) as f64, (hy / 2) as f64),
    };
    let holo = fork_pattern(&spec, hx, hy, optics.hologram_pitch)?.resampled_to(&g);
    Ok(first_order(&apply_pattern(f, &holo)?, optics.blaze_period).1)
}

/// Amplitudes `(c alpha, c beta)` seen by the two fibers, from the mode-space
/// projector.
pub fn analyze(f: &TransverseField, fiber_waist: f64) -> Result<(Complex64, Complex64), ModeError> {
    let fiber = fiber_mode(fiber_waist, f.grid())?;
    Ok((project_onto(f, Arm::Right, &fiber)?, project_onto(f, Arm::Left, &fiber)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode::{qubit_field, Cardinal};

    const W0: f64 = 50e-6;

    fn grid() -> GridSpec {
        GridSpec::for_waist(256, W0).unwrap()
    }

    #[test]
    fn pure_r_is_azimuth() {
        let p = slm_qubit_pattern(&Cardinal::R.qubit(), 64, 64, 1.0);
        // pixel at (+x, +y) diagonal
        let v = p.at(40, 40);
        assert!((v - PI / 4.0).abs() < 1e-12);
        let l = slm_qubit_pattern(&Cardinal::L.qubit(), 64, 64, 1.0);
        assert!((l.at(40, 40) - (TWO_PI - PI / 4.0)).abs() < 1e-12);
        assert!(p.values().iter().all(|&x| (0.0..TWO_PI).contains(&x)));
    }

    #[test]
    fn h_is_half_plane_jump() {
        let p = slm_qubit_pattern(&Cardinal::H.qubit(), 64, 64, 1.0);
        for j in 0..64 {
            for i in 0..64 {
                let x = i as f64 - 32.0;
                let expect = if x < 0.0 { PI } else { 0.0 };
                assert_eq!(p.at(i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn d_is_h_turned_by_45_degrees() {
        let d = slm_qubit_pattern(&Cardinal::D.qubit(), 64, 64, 1.0);
        // oracle: arg(alpha e^{i t} + beta e^{-i t}) up to the global phase pi/4
        let q = Cardinal::D.qubit();
        for (i, j) in [(40usize, 33usize), (33, 40), (20, 45), (45, 20), (10, 12), (50, 52)] {
            let (x, y) = (i as f64 - 32.0, j as f64 - 32.0);
            let t = y.atan2(x);
            let target = (q.alpha * Complex64::from_polar(1.0, t) + q.beta * Complex64::from_polar(1.0, -t)).arg();
            let rel = wrap_phase(target - PI / 4.0);
            let rel = if (rel - PI).abs() < 1e-9 { PI } else { rel.min(TWO_PI - rel) };
            assert!((d.at(i, j) - rel).abs() < 1e-9, "({i},{j}) {} vs {rel}", d.at(i, j));
        }
    }

    #[test]
    fn general_qubit_is_target_phase() {
        let q = OamQubit::normalize(Complex64::new(0.8, 0.0), Complex64::new(0.3, 0.4)).unwrap();
        let p = slm_qubit_pattern(&q, 64, 64, 1.0);
        let t: f64 = (5.0f64).atan2(7.0);
        let expect = wrap_phase((q.alpha * Complex64::from_polar(1.0, t) + q.beta * Complex64::from_polar(1.0, -t)).arg());
        assert!((p.at(39, 37) - expect).abs() < 1e-12);
    }

    #[test]
    fn plain_grating_has_no_dislocation() {
        let spec = ForkSpec { delta_l: 0, blaze_period: 8.0, center: (32.0, 32.0) };
        let p = fork_pattern(&spec, 64, 64, 1.0).unwrap();
        for j in 0..64 {
            assert_eq!(p.at(5, j), p.at(5, 0));
        }
    }

    #[test]
    fn fork_winds_around_dislocation() {
        for dl in [-1, 1, 2] {
            let spec = ForkSpec { delta_l: dl, blaze_period: 1e9, center: (32.0, 32.0) };
            let p = fork_pattern(&spec, 64, 64, 1.0).unwrap();
            // loop of radius 10 pixels around the center
            let mut total = 0.0;
            let n = 400;
            let pt = |s: usize| {
                let t = TWO_PI * s as f64 / n as f64;
                let i = (32.0 + 10.0 * t.cos()).round() as usize;
                let j = (32.0 + 10.0 * t.sin()).round() as usize;
                p.at(i, j)
            };
            for s in 0..n {
                let d = pt(s + 1) - pt(s);
                total += (d + PI).rem_euclid(TWO_PI) - PI;
            }
            assert!((total - TWO_PI * dl as f64).abs() < 1e-6, "dl={dl} total={total}");
        }
    }

    #[test]
    fn undersampled_blaze_is_rejected() {
        let spec = ForkSpec { delta_l: 1, blaze_period: 2.0, center: (0.0, 0.0) };
        assert!(matches!(fork_pattern(&spec, 64, 64, 1.0), Err(HoloError::UndersampledBlaze { .. })));
    }

    #[test]
    fn zero_pattern_is_identity_and_norm_is_kept() {
        let g = grid();
        let f = qubit_field(&Cardinal::D.qubit(), W0, &g).unwrap();
        let z = PhasePattern::zeros(g.nx, g.ny, g.dx);
        assert_eq!(apply_pattern(&f, &z).unwrap(), f);
        let p = slm_qubit_pattern(&Cardinal::R.qubit(), g.nx, g.ny, g.dx);
        let out = apply_pattern(&f, &p).unwrap();
        assert!((out.norm() - f.norm()).abs() < 1e-12);
        for (a, b) in out.samples().iter().zip(f.samples()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-12 * b.norm().max(1.0));
        }
        let wrong = PhasePattern::zeros(g.nx, g.ny, 2.0 * g.dx);
        assert!(matches!(apply_pattern(&f, &wrong), Err(HoloError::GridMismatch { .. })));
    }

    #[test]
    fn projector_picks_one_helicity() {
        let g = grid();
        let (wf, c2) = optimal_fiber_waist(W0, &g).unwrap();
        let r = qubit_field(&Cardinal::R.qubit(), W0, &g).unwrap();
        assert!((project_arm(&r, Arm::Right, wf).unwrap().norm_sqr() - c2).abs() < 1e-9);
        assert!(project_arm(&r, Arm::Left, wf).unwrap().norm() < 1e-6);
        let h = qubit_field(&Cardinal::H.qubit(), W0, &g).unwrap();
        let (a, b) = analyze(&h, wf).unwrap();
        assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-6);
    }

    #[test]
    fn gray_levels_span_byte_range() {
        let p = PhasePattern::from_fn(4, 1, 1.0, |x, _| (x + 2.0) * PI / 2.0);
        assert_eq!(p.to_gray8(), vec![0, 64, 128, 192]);
    }
}
