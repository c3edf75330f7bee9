//! Flat binary array exchange format shared with external encoders,
//! generators and decoders.
//!
//! All integers are little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"OCAR"`                         |
//! | 4      | 1    | version, currently `1`                  |
//! | 5      | 1    | dtype tag: `1` = f32, `2` = f64         |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 4    | `grid_h` (u32)                          |
//! | 12     | 4    | `grid_w` (u32)                          |
//! | 16     | 4    | `dim` (u32)                             |
//! | 20     | 4    | `stride` in pixels per cell (u32)       |
//! | 24     | ...  | `grid_h * grid_w * dim` values, row-major over `(row, col, channel)` |
//!
//! Token grids use `dim = d`; probability maps use `dim = 1` and
//! `stride = 1` when they are stored at image resolution.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::grid::{ProbabilityMap, Resolution, TokenGrid};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCAR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl ArrayFile {
    pub fn encode(&self, dtype: DType) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * dtype.width());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(dtype as u8);
        out.extend_from_slice(&[0, 0]);
        for v in [self.grid_h, self.grid_w, self.dim, self.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in &self.data {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("file too short for header ({} bytes)", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        if bytes[4] != VERSION {
            return Err(format!("unsupported version {}", bytes[4]));
        }
        let dtype = match bytes[5] {
            1 => DType::F32,
            2 => DType::F64,
            t => return Err(format!("unknown dtype tag {t}")),
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (grid_h, grid_w, dim, stride) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
        let n = grid_h
            .checked_mul(grid_w)
            .and_then(|v| v.checked_mul(dim))
            .ok_or("header dimensions overflow")?;
        let expected = HEADER_LEN + n * dtype.width();
        if bytes.len() != expected {
            return Err(format!(
                "payload length {} does not match header ({expected})",
                bytes.len()
            ));
        }
        let body = &bytes[HEADER_LEN..];
        let data: Vec<f64> = match dtype {
            DType::F32 => body
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            DType::F64 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value in payload".into());
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            stride,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|message| Error::MalformedFeatures {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write(&self, path: &Path, dtype: DType) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.encode(dtype)).map_err(|e| Error::io(path, e))
    }
}

impl From<&TokenGrid> for ArrayFile {
    fn from(grid: &TokenGrid) -> Self {
        ArrayFile {
            grid_h: grid.grid_h(),
            grid_w: grid.grid_w(),
            dim: grid.dim(),
            stride: grid.stride(),
            data: grid.tokens().iter().copied().collect(),
        }
    }
}

impl From<&ProbabilityMap> for ArrayFile {
    fn from(map: &ProbabilityMap) -> Self {
        let stride = match map.resolution() {
            Resolution::Token { stride } => stride,
            Resolution::Image => 1,
        };
        ArrayFile {
            grid_h: map.height(),
            grid_w: map.width(),
            dim: 1,
            stride,
            data: map.values().to_vec(),
        }
    }
}

impl ArrayFile {
    pub fn into_token_grid(self) -> Result<TokenGrid> {
        let tokens = Array2::from_shape_vec((self.grid_h * self.grid_w, self.dim), self.data)
            .map_err(|e| Error::Backend(e.to_string()))?;
        TokenGrid::new(self.grid_h, self.grid_w, self.stride, tokens)
    }

    /// Interprets a `dim = 1` array as a probability map; `stride = 1` means image resolution.
    pub fn into_probability_map(self) -> Result<ProbabilityMap> {
        if self.dim != 1 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: self.dim,
            });
        }
        let resolution = if self.stride == 1 {
            Resolution::Image
        } else {
            Resolution::Token {
                stride: self.stride,
            }
        };
        ProbabilityMap::new(self.grid_h, self.grid_w, resolution, self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(h in 1usize..5, w in 1usize..5, d in 1usize..6, stride in 1usize..9, seed in any::<u64>()) {
            let data: Vec<f64> = (0..h * w * d)
                .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) % 10_007) as f64 / 97.0 - 50.0)
                .collect();
            let a = ArrayFile { grid_h: h, grid_w: w, dim: d, stride, data };
            let back = ArrayFile::decode(&a.encode(DType::F64)).unwrap();
            prop_assert_eq!(a, back);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let a = ArrayFile {
            grid_h: 2,
            grid_w: 3,
            dim: 4,
            stride: 16,
            data: vec![0.5; 24],
        };
        let bytes = a.encode(DType::F32);
        assert_eq!(&bytes[..8], b"OCAR\x01\x01\x00\x00");
        assert_eq!(&bytes[8..24], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0, 16, 0, 0, 0]);
        assert_eq!(bytes.len(), 24 + 24 * 4);
        assert_eq!(&bytes[24..28], &0.5f32.to_le_bytes());
    }

    #[test]
    fn truncated_and_corrupt_files_rejected() {
        let a = ArrayFile {
            grid_h: 1,
            grid_w: 1,
            dim: 2,
            stride: 1,
            data: vec![1.0, 2.0],
        };
        let bytes = a.encode(DType::F64);
        assert!(ArrayFile::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ArrayFile::decode(&bad).is_err());
        let mut bad = bytes;
        bad[5] = 9;
        assert!(ArrayFile::decode(&bad).is_err());
    }
}
