//! Sampled transverse fields, Laguerre-Gaussian mode synthesis and free-space
//! propagation.
//!
//! Fields live on a square-pixel grid whose optical axis sits on pixel
//! `(nx/2, ny/2)`. Amplitudes are normalized so that `sum |f|^2 dx^2 = 1`.

use crate::fft::{self, Direction};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};
use thiserror::Error;

/// Cesium D2 line, used as the default optical wavelength.
pub const CESIUM_D2_WAVELENGTH: f64 = 852.3e-9;

/// Minimum window size, in units of the largest waist drawn on the grid.
pub const MIN_WINDOW_PER_WAIST: f64 = 8.0;

const FIELD_MAGIC: &[u8; 4] = b"OAMF";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("propagation over {z} m aliases on this grid (walk-off {walk_off:.3e} m)")]
    Aliasing { z: f64, walk_off: f64 },
    #[error("operation needs a square grid")]
    NonSquareGrid,
    #[error("qubit amplitudes not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModeError {
    fn from(e: std::io::Error) -> Self {
        ModeError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch in meters.
    pub dx: f64,
    /// Optical wavelength in meters.
    pub wavelength: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64) -> Result<Self, ModeError> {
        let g = GridSpec {
            nx,
            ny,
            dx,
            wavelength: CESIUM_D2_WAVELENGTH,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square `n x n` grid whose window spans `16 w0`.
    pub fn for_waist(n: usize, w0: f64) -> Result<Self, ModeError> {
        Self::new(n, n, 16.0 * w0 / n as f64)
    }

    pub fn with_wavelength(mut self, wavelength: f64) -> Self {
        self.wavelength = wavelength;
        self
    }

    pub fn validate(&self) -> Result<(), ModeError> {
        if self.nx < 32 || self.ny < 32 {
            return Err(ModeError::InvalidGrid(format!(
                "need at least 32x32 pixels, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(ModeError::InvalidGrid(format!("pixel pitch {} must be > 0", self.dx)));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(ModeError::InvalidGrid(format!(
                "wavelength {} must be > 0",
                self.wavelength
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - (self.nx / 2) as f64) * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - (self.ny / 2) as f64) * self.dx
    }

    /// Smaller side of the physical window.
    pub fn window(&self) -> f64 {
        self.nx.min(self.ny) as f64 * self.dx
    }

    pub fn pixel_area(&self) -> f64 {
        self.dx * self.dx
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn check_waist(&self, w0: f64) -> Result<(), ModeError> {
        if self.window() < MIN_WINDOW_PER_WAIST * w0 {
            return Err(ModeError::GridTooSmall(format!(
                "window {:.3e} m is below {} x waist {:.3e} m",
                self.window(),
                MIN_WINDOW_PER_WAIST,
                w0
            )));
        }
        Ok(())
    }

    fn same_as(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.wavelength - other.wavelength).abs() <= 1e-12 * self.wavelength
    }
}

/// Complex scalar amplitude sampled on a [`GridSpec`], row-major (`j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseField {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl TransverseField {
    pub fn zeros(grid: GridSpec) -> Self {
        TransverseField {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Evaluate `f(x, y)` at every pixel center.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), y));
            }
        }
        TransverseField { grid, data }
    }

    pub fn from_samples(grid: GridSpec, data: Vec<Complex64>) -> Result<Self, ModeError> {
        if data.len() != grid.len() {
            return Err(ModeError::GridMismatch);
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(ModeError::Format("non-finite sample".into()));
        }
        Ok(TransverseField { grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[j * self.grid.nx + i]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.pixel_area()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Copy rescaled to unit L2 norm. A zero field is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        self.scaled(Complex64::new(1.0 / n, 0.0))
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        TransverseField {
            grid: self.grid,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self, ModeError> {
        if !self.grid.same_as(&other.grid) {
            return Err(ModeError::GridMismatch);
        }
        Ok(TransverseField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(u, v)| a * u + b * v)
                .collect(),
        })
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Rotate the field counterclockwise by `angle` about the optical axis,
    /// `g(r) = f(R(-angle) r)`. Uses exact quarter turns plus three FFT shears,
    /// which is exact for band-limited content that stays inside the window.
    pub fn rotated(&self, angle: f64) -> Result<Self, ModeError> {
        let g = self.grid;
        if g.nx != g.ny {
            return Err(ModeError::NonSquareGrid);
        }
        let n = g.nx;
        let quarter = (angle / (PI / 2.0)).round();
        let residual = angle - quarter * PI / 2.0;
        let turns = (quarter as i64).rem_euclid(4);

        let mut data = self.data.clone();
        for _ in 0..turns {
            // g(x, y) = f(y, -x)
            let src = data.clone();
            for j in 0..n {
                for i in 0..n {
                    let si = j;
                    let sj = (n - i) % n;
                    data[j * n + i] = src[sj * n + si];
                }
            }
        }

        if residual != 0.0 {
            let t = (residual / 2.0).tan();
            let s = residual.sin();
            let c = (n / 2) as f64;
            // g(x, y) = f(x + t y, y): row j moves by -t * y_j pixels.
            fft::shift_rows(&mut data, n, n, |j| -t * (j as f64 - c));
            // g(x, y) = f(x, y - s x): column i moves by s * x_i pixels.
            fft::shift_columns(&mut data, n, n, |i| s * (i as f64 - c));
            fft::shift_rows(&mut data, n, n, |j| -t * (j as f64 - c));
        }
        Ok(TransverseField { grid: g, data })
    }

    /// Binary dump: magic, `nx`, `ny` (u32 LE), `dx`, `wavelength` (f64 LE),
    /// then `nx*ny` (re, im) f64 LE pairs in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), ModeError> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.grid.nx as u32).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u32).to_le_bytes())?;
        w.write_all(&self.grid.dx.to_le_bytes())?;
        w.write_all(&self.grid.wavelength.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, ModeError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(ModeError::Format("bad magic".into()));
        }
        let mut u = [0u8; 4];
        let mut f = [0u8; 8];
        r.read_exact(&mut u)?;
        let nx = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let ny = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut f)?;
        let dx = f64::from_le_bytes(f);
        r.read_exact(&mut f)?;
        let wavelength = f64::from_le_bytes(f);
        let grid = GridSpec { nx, ny, dx, wavelength };
        grid.validate()?;
        let mut data = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut f)?;
            let re = f64::from_le_bytes(f);
            r.read_exact(&mut f)?;
            data.push(Complex64::new(re, f64::from_le_bytes(f)));
        }
        Self::from_samples(grid, data)
    }
}

/// Discrete inner product `sum conj(a) b dx^2`.
pub fn overlap(a: &TransverseField, b: &TransverseField) -> Result<Complex64, ModeError> {
    if !a.grid.same_as(&b.grid) {
        return Err(ModeError::GridMismatch);
    }
    let s: Complex64 = a.data.iter().zip(&b.data).map(|(u, v)| u.conj() * v).sum();
    Ok(s * a.grid.pixel_area())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeIndex {
    /// Azimuthal index.
    pub l: i32,
    /// Radial index.
    pub p: u32,
    /// Waist radius in meters.
    pub w0: f64,
}

impl ModeIndex {
    pub fn new(l: i32, p: u32, w0: f64) -> Self {
        ModeIndex { l, p, w0 }
    }

    pub fn rayleigh_range(&self, wavelength: f64) -> f64 {
        PI * self.w0 * self.w0 / wavelength
    }
}

/// Generalized Laguerre polynomial `L_p^a(x)` by upward recurrence.
pub fn generalized_laguerre(p: u32, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Analytic LG amplitude at distance `z` from the waist, normalized to unit
/// power in the continuum. At `z = 0` the field is real up to `e^{i l theta}`.
pub fn lg_amplitude(m: &ModeIndex, wavelength: f64, x: f64, y: f64, z: f64) -> Complex64 {
    let al = m.l.unsigned_abs();
    let zr = m.rayleigh_range(wavelength);
    let w = m.w0 * (1.0 + (z / zr).powi(2)).sqrt();
    let norm = (2.0 * factorial(m.p) / (PI * factorial(m.p + al))).sqrt() / w;
    let r2 = x * x + y * y;
    let rho = (2.0 * r2).sqrt() / w;
    let radial = norm
        * rho.powi(al as i32)
        * generalized_laguerre(m.p, al as f64, 2.0 * r2 / (w * w))
        * (-r2 / (w * w)).exp();
    // Axis pixel: amplitude vanishes for l != 0, phase pinned to 0.
    let theta = if r2 == 0.0 { 0.0 } else { y.atan2(x) };
    let mut phase = m.l as f64 * theta;
    if z != 0.0 {
        let k = 2.0 * PI / wavelength;
        let curvature = z * (1.0 + (zr / z).powi(2));
        let gouy = (2 * m.p + al + 1) as f64 * (z / zr).atan();
        phase += k * r2 / (2.0 * curvature) - gouy;
    }
    Complex64::from_polar(radial, phase)
}

/// LG mode sampled at the waist plane and renormalized on the grid.
pub fn lg_field(m: &ModeIndex, g: &GridSpec) -> Result<TransverseField, ModeError> {
    lg_field_at(m, g, 0.0)
}

/// LG mode sampled at distance `z` from its waist.
pub fn lg_field_at(m: &ModeIndex, g: &GridSpec, z: f64) -> Result<TransverseField, ModeError> {
    g.validate()?;
    if !(m.w0 > 0.0) {
        return Err(ModeError::InvalidGrid(format!("waist {} must be > 0", m.w0)));
    }
    g.check_waist(m.w0)?;
    let f = TransverseField::from_fn(*g, |x, y| lg_amplitude(m, g.wavelength, x, y, z));
    let captured = f.norm_sqr();
    if 1.0 - captured > 1e-4 {
        return Err(ModeError::GridTooSmall(format!(
            "{:.2e} of the mode energy falls outside the window",
            1.0 - captured
        )));
    }
    Ok(f.normalized())
}

/// Qubit on the `{|R>, |L>}` = `{LG(+1,0), LG(-1,0)}` basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OamQubit {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl OamQubit {
    /// Validates `|alpha|^2 + |beta|^2 = 1` within 1e-12.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self, ModeError> {
        let n = alpha.norm_sqr() + beta.norm_sqr();
        if (n - 1.0).abs() > 1e-12 {
            return Err(ModeError::NotNormalized(n));
        }
        Ok(OamQubit { alpha, beta })
    }

    /// Rescales arbitrary nonzero amplitudes to a unit vector.
    pub fn normalize(alpha: Complex64, beta: Complex64) -> Result<Self, ModeError> {
        let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(ModeError::NotNormalized(n * n));
        }
        Ok(OamQubit {
            alpha: alpha / n,
            beta: beta / n,
        })
    }

    pub fn inner(&self, other: &OamQubit) -> Complex64 {
        self.alpha.conj() * other.alpha + self.beta.conj() * other.beta
    }

    /// Bloch vector `(S1, S2, S3)` with `S3 = |alpha|^2 - |beta|^2`.
    pub fn bloch_vector(&self) -> [f64; 3] {
        let c = self.alpha * self.beta.conj();
        [
            2.0 * c.re,
            -2.0 * c.im,
            self.alpha.norm_sqr() - self.beta.norm_sqr(),
        ]
    }
}

/// `alpha = cos(theta/2)`, `beta = e^{i phi} sin(theta/2)`.
pub fn bloch_state(theta: f64, phi: f64) -> OamQubit {
    OamQubit {
        alpha: Complex64::new((theta / 2.0).cos(), 0.0),
        beta: Complex64::from_polar((theta / 2.0).sin(), phi),
    }
}

/// The six cardinal states used for tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cardinal {
    R,
    L,
    H,
    V,
    D,
    A,
}

impl Cardinal {
    pub const ALL: [Cardinal; 6] = [
        Cardinal::R,
        Cardinal::L,
        Cardinal::H,
        Cardinal::V,
        Cardinal::D,
        Cardinal::A,
    ];

    pub fn qubit(self) -> OamQubit {
        let s = FRAC_1_SQRT_2;
        let (a, b) = match self {
            Cardinal::R => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
            Cardinal::L => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            Cardinal::H => (Complex64::new(s, 0.0), Complex64::new(s, 0.0)),
            Cardinal::V => (Complex64::new(s, 0.0), Complex64::new(-s, 0.0)),
            Cardinal::D => (Complex64::new(s, 0.0), Complex64::new(0.0, s)),
            Cardinal::A => (Complex64::new(s, 0.0), Complex64::new(0.0, -s)),
        };
        OamQubit { alpha: a, beta: b }
    }

    /// Bloch angles `(theta, phi)` of the state.
    pub fn angles(self) -> (f64, f64) {
        match self {
            Cardinal::R => (0.0, 0.0),
            Cardinal::L => (PI, 0.0),
            Cardinal::H => (PI / 2.0, 0.0),
            Cardinal::V => (PI / 2.0, PI),
            Cardinal::D => (PI / 2.0, PI / 2.0),
            Cardinal::A => (PI / 2.0, 3.0 * PI / 2.0),
        }
    }

    /// The other member of this state's measurement basis.
    pub fn partner(self) -> Cardinal {
        match self {
            Cardinal::R => Cardinal::L,
            Cardinal::L => Cardinal::R,
            Cardinal::H => Cardinal::V,
            Cardinal::V => Cardinal::H,
            Cardinal::D => Cardinal::A,
            Cardinal::A => Cardinal::D,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cardinal::R => "R",
            Cardinal::L => "L",
            Cardinal::H => "H",
            Cardinal::V => "V",
            Cardinal::D => "D",
            Cardinal::A => "A",
        }
    }
}

impl std::str::FromStr for Cardinal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cardinal::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown state '{s}' (expected one of R,L,H,V,D,A)"))
    }
}

/// `alpha LG(+1,0) + beta LG(-1,0)` at the waist plane, normalized.
pub fn qubit_field(q: &OamQubit, w0: f64, g: &GridSpec) -> Result<TransverseField, ModeError> {
    let r = lg_field(&ModeIndex::new(1, 0, w0), g)?;
    let l = lg_field(&ModeIndex::new(-1, 0, w0), g)?;
    Ok(r.combine(q.alpha, &l, q.beta)?.normalized())
}

/// Angular-spectrum propagation by `z` meters (`e^{i k z}` convention, with the
/// carrier phase `e^{ikz}` removed). Evanescent components decay.
///
/// Fails with [`ModeError::Aliasing`] when significant spectral content would
/// walk off far enough to wrap around the periodic window.
pub fn propagate(f: &TransverseField, z: f64) -> Result<TransverseField, ModeError> {
    if z == 0.0 {
        return Ok(f.clone());
    }
    let g = *f.grid();
    let k = g.wavenumber();
    let mut spec = f.data.clone();
    fft::fft2(&mut spec, g.nx, g.ny, Direction::Forward);

    let peak_k = spec.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    let peak_x = f.data.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    let mut walk_off: f64 = 0.0;
    for j in 0..g.ny {
        let ky = fft::angular_frequency(j, g.ny, g.dx);
        for i in 0..g.nx {
            let kx = fft::angular_frequency(i, g.nx, g.dx);
            let kt2 = kx * kx + ky * ky;
            let v = &mut spec[j * g.nx + i];
            let significant = v.norm_sqr() > 1e-10 * peak_k;
            if kt2 < k * k {
                let kz = (k * k - kt2).sqrt();
                if significant {
                    walk_off = walk_off.max(z.abs() * kt2.sqrt() / kz);
                }
                *v *= Complex64::from_polar(1.0, (kz - k) * z);
            } else {
                if significant {
                    walk_off = f64::INFINITY;
                }
                *v *= (-(kt2 - k * k).sqrt() * z.abs()).exp();
            }
        }
    }

    let mut extent: f64 = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if f.at(i, j).norm_sqr() > 1e-10 * peak_x {
                extent = extent.max(g.x(i).abs()).max(g.y(j).abs());
            }
        }
    }
    if extent + walk_off > 0.5 * g.window() {
        return Err(ModeError::Aliasing { z, walk_off });
    }

    fft::fft2(&mut spec, g.nx, g.ny, Direction::Inverse);
    Ok(TransverseField { grid: g, data: spec })
}

/// Fraction of the field energy carried by each azimuthal order `-lmax..=lmax`,
/// computed ring by ring (ring width one pixel).
pub fn azimuthal_spectrum(f: &TransverseField, lmax: i32) -> Vec<(i32, f64)> {
    let g = f.grid();
    let n_rings = (g.nx.max(g.ny) as f64 * std::f64::consts::SQRT_2 / 2.0).ceil() as usize + 2;
    let orders: Vec<i32> = (-lmax..=lmax).collect();
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); orders.len()]; n_rings];
    let mut counts = vec![0usize; n_rings];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (x, y) = (g.x(i), g.y(j));
            let ring = ((x * x + y * y).sqrt() / g.dx).round() as usize;
            let theta = y.atan2(x);
            let v = f.at(i, j);
            counts[ring] += 1;
            for (slot, &l) in acc[ring].iter_mut().zip(&orders) {
                *slot += v * Complex64::from_polar(1.0, -(l as f64) * theta);
            }
        }
    }
    let total = f.norm_sqr();
    let mut out: Vec<(i32, f64)> = orders.iter().map(|&l| (l, 0.0)).collect();
    for (ring, sums) in acc.iter().enumerate() {
        let n = counts[ring];
        if n == 0 {
            continue;
        }
        for (o, s) in out.iter_mut().zip(sums) {
            o.1 += s.norm_sqr() / n as f64 * g.pixel_area();
        }
    }
    if total > 0.0 {
        for o in &mut out {
            o.1 /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const W0: f64 = 50e-6;

    fn grid(n: usize) -> GridSpec {
        GridSpec::for_waist(n, W0).unwrap()
    }

    #[test]
    fn laguerre_low_orders() {
        let x = 0.7;
        assert_eq!(generalized_laguerre(0, 2.0, x), 1.0);
        assert_relative_eq!(generalized_laguerre(1, 2.0, x), 3.0 - x);
        // L_2^a(x) = (x^2 - 2(a+2)x + (a+1)(a+2)) / 2
        assert_relative_eq!(
            generalized_laguerre(2, 1.0, x),
            (x * x - 6.0 * x + 6.0) / 2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn doughnut_has_dark_center_and_unit_norm() {
        let g = grid(256);
        let f = lg_field(&ModeIndex::new(1, 0, W0), &g).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-9);
        let peak = f.intensity().iter().cloned().fold(0.0, f64::max);
        let center = f.at(g.nx / 2, g.ny / 2).norm_sqr();
        assert!(center < 1e-6 * peak);
        assert_eq!(f.at(g.nx / 2, g.ny / 2), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn phase_winds_by_l() {
        let g = grid(256);
        for l in [-2, 1, 3] {
            let f = lg_field(&ModeIndex::new(l, 0, W0), &g).unwrap();
            // walk a ring of radius w0 and accumulate the phase increments
            let steps = 720;
            let mut total = 0.0;
            let sample = |t: f64| lg_amplitude(&ModeIndex::new(l, 0, W0), g.wavelength, W0 * t.cos(), W0 * t.sin(), 0.0);
            for s in 0..steps {
                let a = sample(2.0 * PI * s as f64 / steps as f64);
                let b = sample(2.0 * PI * (s + 1) as f64 / steps as f64);
                total += (b / a).arg();
            }
            assert_relative_eq!(total, 2.0 * PI * l as f64, epsilon = 1e-9);
            assert!(f.norm() > 0.0);
        }
    }

    #[test]
    fn gaussian_is_flat_phase() {
        let g = grid(128);
        let f = lg_field(&ModeIndex::new(0, 0, W0), &g).unwrap();
        assert!(f.samples().iter().all(|v| v.im == 0.0 && v.re >= 0.0));
    }

    #[test]
    fn small_window_is_rejected() {
        let g = GridSpec::new(64, 64, 4e-6).unwrap(); // 256 um window
        assert!(matches!(
            lg_field(&ModeIndex::new(1, 0, W0), &g),
            Err(ModeError::GridTooSmall(_))
        ));
        assert!(GridSpec::new(16, 64, 1e-6).is_err());
        assert!(GridSpec::new(64, 64, 0.0).is_err());
    }

    #[test]
    fn opposite_helicities_are_orthogonal() {
        let g = grid(256);
        let r = lg_field(&ModeIndex::new(1, 0, W0), &g).unwrap();
        let l = lg_field(&ModeIndex::new(-1, 0, W0), &g).unwrap();
        assert!(overlap(&r, &l).unwrap().norm() < 1e-8);
        assert!((overlap(&r, &r).unwrap() - 1.0).norm() < 1e-9);
    }

    #[test]
    fn superposition_expansion_coefficient() {
        let g = grid(256);
        let h = qubit_field(&Cardinal::H.qubit(), W0, &g).unwrap();
        let r = lg_field(&ModeIndex::new(1, 0, W0), &g).unwrap();
        assert!((overlap(&h, &r).unwrap() - FRAC_1_SQRT_2).norm() < 1e-6);
    }

    #[test]
    fn overlap_rejects_mismatched_grids() {
        let a = TransverseField::zeros(grid(64));
        let b = TransverseField::zeros(grid(128));
        assert_eq!(overlap(&a, &b), Err(ModeError::GridMismatch));
    }

    #[test]
    fn bloch_poles_and_equator() {
        let r = bloch_state(0.0, 1.234);
        assert_relative_eq!(r.alpha.re, 1.0);
        assert!(r.beta.norm() < 1e-15);
        for c in Cardinal::ALL {
            let (t, p) = c.angles();
            let q = bloch_state(t, p);
            assert!((q.inner(&c.qubit()).norm() - 1.0).abs() < 1e-12, "{c:?}");
        }
        let d = bloch_state(PI / 2.0, PI / 2.0);
        assert!((d.beta - Complex64::new(0.0, FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn bloch_vector_convention() {
        let v = Cardinal::H.qubit().bloch_vector();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-15);
        let v = Cardinal::D.qubit().bloch_vector();
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
        let v = Cardinal::L.qubit().bloch_vector();
        assert_relative_eq!(v[2], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_distance_is_identity() {
        let g = grid(64);
        let f = lg_field(&ModeIndex::new(1, 0, W0), &g).unwrap();
        assert_eq!(propagate(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn long_throw_is_flagged_as_aliasing() {
        let g = grid(128);
        let f = lg_field(&ModeIndex::new(0, 0, W0), &g).unwrap();
        assert!(matches!(propagate(&f, 0.2), Err(ModeError::Aliasing { .. })));
    }

    #[test]
    fn quarter_turn_of_lg_is_pure_phase() {
        let g = grid(128);
        let f = lg_field(&ModeIndex::new(2, 0, W0), &g).unwrap();
        let rot = f.rotated(PI / 2.0).unwrap();
        let ov = overlap(&rot, &f).unwrap();
        assert!((ov - Complex64::from_polar(1.0, 2.0 * PI / 2.0)).norm() < 1e-9, "{ov}");
    }

    #[test]
    fn binary_dump_round_trips() {
        let g = grid(64);
        let f = qubit_field(&Cardinal::D.qubit(), W0, &g).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 16 + 16 * 64 * 64);
        let back = TransverseField::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(TransverseField::read_binary(&b"NOPE"[..]).is_err());
    }

    #[test]
    fn cardinal_parse() {
        assert_eq!("h".parse::<Cardinal>().unwrap(), Cardinal::H);
        assert!("Q".parse::<Cardinal>().is_err());
    }
}
