//! Phase-reference imaging: render the recombined two-lobe pattern and read
//! the interferometer phase back from its orientation.

use crate::mode::{lg_field, GridSpec, ModeError, ModeIndex, TransverseField};
use crate::rng::StreamRng;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseRefError {
    #[error("degenerate image: second moments are isotropic")]
    DegenerateImage,
    #[error("image has no intensity")]
    EmptyImage,
    #[error(transparent)]
    Mode(#[from] ModeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraImage {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub data: Vec<f64>,
    /// Relative shot-noise level used when rendering.
    pub noise: f64,
}

impl CameraImage {
    pub fn from_field(f: &TransverseField) -> Self {
        let g = f.grid();
        CameraImage {
            nx: g.nx,
            ny: g.ny,
            pitch: g.dx,
            data: f.intensity(),
            noise: 0.0,
        }
    }

    pub fn peak(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Adds `noise · sqrt(I · I_peak) · N(0,1)` to every pixel and clamps at 0.
    pub fn with_shot_noise(mut self, noise: f64, rng: &mut StreamRng) -> Self {
        let peak = self.peak();
        for v in &mut self.data {
            let n: f64 = StandardNormal.sample(rng);
            *v = (*v + noise * (*v * peak).sqrt() * n).max(0.0);
        }
        self.noise = noise;
        self
    }

    /// 8-bit binary PGM scaled to the image peak.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.nx, self.ny)?;
        let peak = self.peak();
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        // PGM rows run top to bottom; our rows run along +y
        for j in (0..self.ny).rev() {
            let row: Vec<u8> = (0..self.nx)
                .map(|i| (self.data[j * self.nx + i] * scale).round().clamp(0.0, 255.0) as u8)
                .collect();
            w.write_all(&row)?;
        }
        Ok(())
    }
}

/// Camera geometry used for the reference beam.
pub fn camera_grid(n: usize, w0: f64) -> Result<GridSpec, ModeError> {
    GridSpec::for_waist(n, w0)
}

/// `|LG(+1) + e^{iφ} LG(-1)|²`; lobes lie along the angle `φ/2`.
pub fn render_reference(phi: f64, w0: f64, g: &GridSpec) -> Result<CameraImage, PhaseRefError> {
    let r = lg_field(&ModeIndex::new(1, 0, w0), g)?;
    let l = lg_field(&ModeIndex::new(-1, 0, w0), g)?;
    let f = r.combine(Complex64::new(1.0, 0.0), &l, Complex64::from_polar(1.0, phi))?;
    Ok(CameraImage::from_field(&f))
}

/// Camera with the two LG basis fields precomputed, for rendering many frames.
#[derive(Debug, Clone)]
pub struct ReferenceCamera {
    grid: GridSpec,
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
}

impl ReferenceCamera {
    pub fn new(pixels: usize, w0: f64) -> Result<Self, PhaseRefError> {
        let grid = camera_grid(pixels, w0)?;
        let plus = lg_field(&ModeIndex::new(1, 0, w0), &grid)?.into_samples();
        let minus = lg_field(&ModeIndex::new(-1, 0, w0), &grid)?.into_samples();
        Ok(ReferenceCamera { grid, plus, minus })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Same image as [`render_reference`].
    pub fn render(&self, phi: f64) -> CameraImage {
        let e = Complex64::from_polar(1.0, phi);
        let data = self
            .plus
            .iter()
            .zip(&self.minus)
            .map(|(a, b)| (a + e * b).norm_sqr())
            .collect();
        CameraImage {
            nx: self.grid.nx,
            ny: self.grid.ny,
            pitch: self.grid.dx,
            data,
            noise: 0.0,
        }
    }

    pub fn render_noisy(&self, phi: f64, noise: f64, rng: &mut StreamRng) -> CameraImage {
        self.render(phi).with_shot_noise(noise, rng)
    }
}

pub fn render_noisy_reference(
    phi: f64,
    w0: f64,
    g: &GridSpec,
    noise: f64,
    rng: &mut StreamRng,
) -> Result<CameraImage, PhaseRefError> {
    Ok(render_reference(phi, w0, g)?.with_shot_noise(noise, rng))
}

/// Principal-axis orientation in `(-π/2, π/2]` from second central moments,
/// after subtracting the 5th-percentile floor.
pub fn orientation(img: &CameraImage) -> Result<f64, PhaseRefError> {
    if img.data.is_empty() {
        return Err(PhaseRefError::EmptyImage);
    }
    let mut scratch = img.data.clone();
    let k = (0.05 * (scratch.len() - 1) as f64).round() as usize;
    let floor = *scratch.select_nth_unstable_by(k, f64::total_cmp).1;
    let cx = (img.nx / 2) as f64;
    let cy = (img.ny / 2) as f64;
    let (mut m0, mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..img.ny {
        let y = j as f64 - cy;
        for (i, v) in img.data[j * img.nx..(j + 1) * img.nx].iter().enumerate() {
            let w = (v - floor).max(0.0);
            let x = i as f64 - cx;
            m0 += w;
            mx += w * x;
            my += w * y;
            mxx += w * x * x;
            myy += w * y * y;
            mxy += w * x * y;
        }
    }
    if !(m0 > 0.0) {
        return Err(PhaseRefError::EmptyImage);
    }
    let (xc, yc) = (mx / m0, my / m0);
    let m20 = mxx - m0 * xc * xc;
    let m02 = myy - m0 * yc * yc;
    let m11 = mxy - m0 * xc * yc;
    let aniso = (m20 - m02).hypot(2.0 * m11);
    if aniso <= 1e-6 * (m20 + m02) {
        return Err(PhaseRefError::DegenerateImage);
    }
    Ok(0.5 * (2.0 * m11).atan2(m20 - m02))
}

/// Interferometer phase in `[0, 2π)`: twice the lobe orientation.
pub fn extract_phase(img: &CameraImage) -> Result<f64, PhaseRefError> {
    Ok((2.0 * orientation(img)?).rem_euclid(2.0 * PI))
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn phase_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode::{qubit_field, Cardinal};

    const W0: f64 = 50e-6;

    fn grid() -> GridSpec {
        camera_grid(64, W0).unwrap()
    }

    #[test]
    fn orientation_follows_half_phase() {
        let g = grid();
        for (phi, theta) in [(0.0, 0.0), (PI, PI / 2.0), (PI / 2.0, PI / 4.0)] {
            let o = orientation(&render_reference(phi, W0, &g).unwrap()).unwrap();
            let d = phase_difference(2.0 * o, 2.0 * theta);
            assert!(d.abs() < 1e-6, "phi {phi}: orientation {o}");
        }
    }

    #[test]
    fn ring_is_degenerate() {
        let g = grid();
        let f = qubit_field(&Cardinal::R.qubit(), W0, &g).unwrap();
        assert_eq!(extract_phase(&CameraImage::from_field(&f)), Err(PhaseRefError::DegenerateImage));
    }

    #[test]
    fn pgm_header_and_size() {
        let img = render_reference(0.3, W0, &grid()).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(buf.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
    }

    #[test]
    fn cached_camera_matches_direct_render() {
        let cam = ReferenceCamera::new(64, W0).unwrap();
        let direct = render_reference(1.3, W0, &grid()).unwrap();
        let cached = cam.render(1.3);
        let peak = direct.peak();
        for (a, b) in direct.data.iter().zip(&cached.data) {
            assert!((a - b).abs() < 1e-12 * peak);
        }
    }

    #[test]
    fn wrapped_difference() {
        assert!((phase_difference(0.1, 2.0 * PI - 0.1) - 0.2).abs() < 1e-12);
        assert!((phase_difference(2.0 * PI - 0.1, 0.1) + 0.2).abs() < 1e-12);
    }
}
