use std::f64::consts::PI;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::seeding::{gaussian_matrix, rng, STREAM_POSITIONAL};

/// Random-Fourier positional features over normalized image coordinates.
///
/// A coordinate `(x, y)` in `[0, 1]^2` is mapped to `2c - 1`, projected by a
/// seeded Gaussian `2 x dim/2` frequency matrix, scaled by `2 pi`, and
/// encoded as `[sin, cos]`. The inner product of two encodings approximates
/// a Gaussian kernel of their distance, which is what gives point prompts
/// spatial reach in the toy decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    freqs: Array2<f64>,
    gain: f64,
}

impl PositionalEncoding {
    pub const DEFAULT_SCALE: f64 = 1.0;

    pub fn new(dim: usize, seed: u64, scale: f64, gain: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!("positional dim {dim} must be even and > 0")));
        }
        let mut r = rng(seed, STREAM_POSITIONAL);
        Ok(Self {
            freqs: gaussian_matrix(&mut r, 2, dim / 2, scale),
            gain,
        })
    }

    pub fn dim(&self) -> usize {
        self.freqs.ncols() * 2
    }

    /// Encodes a normalized `(y, x)` location.
    pub fn encode(&self, y: f64, x: f64) -> Array1<f64> {
        let half = self.freqs.ncols();
        let (cx, cy) = (2.0 * x - 1.0, 2.0 * y - 1.0);
        let mut out = Array1::zeros(2 * half);
        for j in 0..half {
            let phase = 2.0 * PI * (cx * self.freqs[[0, j]] + cy * self.freqs[[1, j]]);
            out[j] = self.gain * phase.sin();
            out[half + j] = self.gain * phase.cos();
        }
        out
    }

    /// Encodings of every cell centre of a `grid_h x grid_w` grid, row-major.
    pub fn dense(&self, grid_h: usize, grid_w: usize) -> Array2<f64> {
        let mut out = Array2::zeros((grid_h * grid_w, self.dim()));
        for r in 0..grid_h {
            for c in 0..grid_w {
                let y = (r as f64 + 0.5) / grid_h as f64;
                let x = (c as f64 + 0.5) / grid_w as f64;
                out.row_mut(r * grid_w + c).assign(&self.encode(y, x));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_peaks_at_zero_offset() {
        let pe = PositionalEncoding::new(64, 5, 1.0, 1.0).unwrap();
        let a = pe.encode(0.5, 0.5);
        let self_k = a.dot(&a);
        assert!((self_k - 32.0).abs() < 1e-9);
        for (dy, dx) in [(0.05, 0.0), (0.0, 0.1), (0.2, 0.2)] {
            let b = pe.encode(0.5 + dy, 0.5 + dx);
            assert!(a.dot(&b) < self_k);
        }
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(PositionalEncoding::new(7, 0, 1.0, 1.0).is_err());
    }
}
