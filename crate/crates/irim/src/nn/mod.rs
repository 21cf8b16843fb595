//! Dense-tensor building blocks with hand-written forward and backward
//! passes: 2-D convolution, ReLU, space/depth reshuffles, and the parameter
//! store with its checkpoint format. No tape, no general autodiff.

mod conv;
mod params;
mod shuffle;

pub use conv::{conv2d, conv2d_backward, ConvParams};
pub use params::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Tensor};
pub use shuffle::{depth_to_space, space_to_depth};

use crate::error::{Error, Result};

/// Channel-major real feature map: `data[c][y][x]` flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                context: "FeatureMap::new",
                expected: format!("{} values", channels * height * width),
                got: format!("{} values", data.len()),
            });
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Copy of channels `range.start..range.end` as a new map.
    pub fn slice_channels(&self, start: usize, end: usize) -> FeatureMap {
        assert!(start <= end && end <= self.channels);
        let p = self.plane();
        FeatureMap {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * p..end * p].to_vec(),
        }
    }

    /// Channel-wise concatenation; all parts must share spatial dims.
    pub fn concat_channels(parts: &[&FeatureMap]) -> FeatureMap {
        assert!(!parts.is_empty());
        let (h, w) = (parts[0].height, parts[0].width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for part in parts {
            assert_eq!((part.height, part.width), (h, w), "spatial dims differ");
            data.extend_from_slice(&part.data);
            channels += part.channels;
        }
        FeatureMap { channels, height: h, width: w, data }
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &FeatureMap) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// y = max(x, 0) elementwise.
pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        channels: x.channels,
        height: x.height,
        width: x.width,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// g_x = g_out where x > 0, else 0. The subgradient at exactly 0 is 0.
pub fn relu_backward(x: &FeatureMap, g_out: &FeatureMap) -> FeatureMap {
    assert!(x.same_shape(g_out));
    FeatureMap {
        channels: x.channels,
        height: x.height,
        width: x.width,
        data: x
            .data
            .iter()
            .zip(&g_out.data)
            .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
            .collect(),
    }
}
