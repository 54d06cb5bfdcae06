//! Thin 2-D FFT helpers over row-major complex buffers.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// In-place 2-D transform. The inverse is normalized by `1/(nx*ny)` so that
/// a forward/inverse pair is the identity.
pub fn fft2(data: &mut [Complex64], nx: usize, ny: usize, dir: Direction) {
    assert_eq!(data.len(), nx * ny);
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = match dir {
        Direction::Forward => (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny)),
        Direction::Inverse => (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny)),
    };

    for row in data.chunks_exact_mut(nx) {
        row_fft.process(row);
    }

    let mut column = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            column[j] = data[j * nx + i];
        }
        col_fft.process(&mut column);
        for j in 0..ny {
            data[j * nx + i] = column[j];
        }
    }

    if dir == Direction::Inverse {
        let scale = 1.0 / (nx * ny) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed frequency index of FFT bin `i` for a transform of length `n`.
#[inline]
pub fn signed_bin(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Angular spatial frequency (rad/m) of FFT bin `i`.
#[inline]
pub fn angular_frequency(i: usize, n: usize, dx: f64) -> f64 {
    2.0 * PI * signed_bin(i, n) as f64 / (n as f64 * dx)
}

/// Shift each row `j` of the buffer by `shift(j)` pixels (sub-pixel, periodic):
/// `out(x) = in(x - shift)`.
pub fn shift_rows(data: &mut [Complex64], nx: usize, ny: usize, shift: impl Fn(usize) -> f64) {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    let scale = 1.0 / nx as f64;
    for (j, row) in data.chunks_exact_mut(nx).enumerate().take(ny) {
        let s = shift(j);
        if s == 0.0 {
            continue;
        }
        fwd.process(row);
        for (i, v) in row.iter_mut().enumerate() {
            let k = 2.0 * PI * signed_bin(i, nx) as f64 / nx as f64;
            *v *= Complex64::from_polar(scale, -k * s);
        }
        inv.process(row);
    }
}

/// Column counterpart of [`shift_rows`].
pub fn shift_columns(data: &mut [Complex64], nx: usize, ny: usize, shift: impl Fn(usize) -> f64) {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(ny);
    let inv = planner.plan_fft_inverse(ny);
    let scale = 1.0 / ny as f64;
    let mut column = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        let s = shift(i);
        if s == 0.0 {
            continue;
        }
        for j in 0..ny {
            column[j] = data[j * nx + i];
        }
        fwd.process(&mut column);
        for (j, v) in column.iter_mut().enumerate() {
            let k = 2.0 * PI * signed_bin(j, ny) as f64 / ny as f64;
            *v *= Complex64::from_polar(scale, -k * s);
        }
        inv.process(&mut column);
        for j in 0..ny {
            data[j * nx + i] = column[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_roundtrip() {
        let (nx, ny) = (16, 8);
        let orig: Vec<Complex64> = (0..nx * ny)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        fft2(&mut buf, nx, ny, Direction::Forward);
        fft2(&mut buf, nx, ny, Direction::Inverse);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn integer_row_shift_is_a_roll() {
        let nx = 8;
        let mut buf: Vec<Complex64> = (0..nx).map(|k| Complex64::new(k as f64, 0.0)).collect();
        shift_rows(&mut buf, nx, 1, |_| 2.0);
        for (i, v) in buf.iter().enumerate() {
            let expect = ((i + nx - 2) % nx) as f64;
            assert!((v.re - expect).abs() < 1e-10, "{i}: {v}");
        }
    }

    #[test]
    fn signed_bins() {
        assert_eq!(signed_bin(0, 8), 0);
        assert_eq!(signed_bin(3, 8), 3);
        assert_eq!(signed_bin(4, 8), -4);
        assert_eq!(signed_bin(7, 8), -1);
    }
}
