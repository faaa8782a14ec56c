use crate::error::{Error, Result};

/// Label value skipped by every loss and metric.
pub const IGNORE: u8 = 255;

/// Dense row-major `height × width × channels` grid of doubles.
///
/// Images, probability maps, feature maps and embedding maps all use this
/// layout; the channel index varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    /// Channel vector of one pixel (flat pixel index).
    #[inline]
    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.channels..(j + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, j: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[j * c..(j + 1) * c]
    }

    /// Copy of channel `ch` as a single-channel grid.
    pub fn channel(&self, ch: usize) -> Grid2D {
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        Grid2D {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn set_channel(&mut self, ch: usize, plane: &Grid2D) {
        debug_assert_eq!(plane.pixels(), self.pixels());
        for (j, v) in plane.data.iter().enumerate() {
            self.data[j * self.channels + ch] = *v;
        }
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel class indices (`IGNORE` marks unlabeled pixels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Sorted distinct non-IGNORE classes.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..255).filter(|&c| seen[c]).collect()
    }
}
