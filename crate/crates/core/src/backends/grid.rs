use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// A `grid_h x grid_w` grid of `dim`-dimensional feature tokens.
///
/// Tokens are stored one per row in row-major cell order, so row
/// `r * grid_w + c` holds the token of cell `(r, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    grid_h: usize,
    grid_w: usize,
    stride: usize,
    tokens: Array2<f64>,
}

impl TokenGrid {
    pub fn new(grid_h: usize, grid_w: usize, stride: usize, tokens: Array2<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || stride == 0 {
            return Err(Error::Empty("token grid"));
        }
        if tokens.nrows() != grid_h * grid_w {
            return Err(Error::DimensionMismatch {
                what: "token rows vs grid cells",
                expected: (grid_h * grid_w, tokens.ncols()),
                found: tokens.dim(),
            });
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("non-finite token value".into()));
        }
        Ok(Self {
            grid_h,
            grid_w,
            stride,
            tokens,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Image extent `(height, width)` covered by the grid, padding included.
    pub fn extent(&self) -> (usize, usize) {
        (self.grid_h * self.stride, self.grid_w * self.stride)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.grid_w + col
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.grid_w, index % self.grid_w)
    }

    pub fn token(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.tokens.row(self.index(row, col))
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn into_tokens(self) -> Array2<f64> {
        self.tokens
    }

    /// Same geometry, new token matrix.
    pub fn with_tokens(&self, tokens: Array2<f64>) -> Result<Self> {
        Self::new(self.grid_h, self.grid_w, self.stride, tokens)
    }

    pub fn same_shape(&self, other: &TokenGrid) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.dim() == other.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    /// One value per token cell; `stride` pixels per cell.
    Token { stride: usize },
    Image,
}

/// Decoder output: per-location occlusion probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    resolution: Resolution,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, resolution: Resolution, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "probability map length",
                expected: (height * width, 1),
                found: (values.len(), 1),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Backend(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            resolution,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
