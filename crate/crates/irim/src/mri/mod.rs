//! Measurement physics: centered orthonormal Fourier transforms, column
//! undersampling masks, the stacked coil operator and its adjoint, the data
//! consistency gradient, and center crop/pad geometry.

mod fourier;
mod geom;
mod mask;
mod operator;

pub use fourier::{fft2c, ifft2c};
pub use num_complex::Complex64;
pub use geom::center_crop_or_pad;
pub use mask::make_mask;
pub use operator::{adjoint_ah, dc_gradient, forward_a, zero_filled_init};

use crate::error::{Error, Result};

/// H×W complex field in row-major order. Interpreted as an image or as
/// k-space depending on context.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "ComplexImage::new",
                expected: format!("{height}x{width} = {} values", height * width),
                got: format!("{} values", data.len()),
            });
        }
        Ok(ComplexImage { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexImage {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut Complex64 {
        &mut self.data[row * self.width + col]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Elementwise modulus as a real plane.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Ordered stack of K same-shaped coil images (Eq. 3's stacked p, d, n).
#[derive(Debug, Clone, PartialEq)]
pub struct CoilStack {
    coils: Vec<ComplexImage>,
}

impl CoilStack {
    pub fn new(coils: Vec<ComplexImage>) -> Result<Self> {
        let first = coils.first().ok_or(Error::ShapeMismatch {
            context: "CoilStack::new",
            expected: "K >= 1 coil images".into(),
            got: "0".into(),
        })?;
        if let Some(bad) = coils.iter().find(|c| !c.same_shape(first)) {
            return Err(Error::ShapeMismatch {
                context: "CoilStack::new",
                expected: format!("{}x{}", first.height, first.width),
                got: format!("{}x{}", bad.height, bad.width),
            });
        }
        Ok(CoilStack { coils })
    }

    pub fn zeros(coil_count: usize, height: usize, width: usize) -> Self {
        CoilStack {
            coils: vec![ComplexImage::zeros(height, width); coil_count],
        }
    }

    pub fn coil_count(&self) -> usize {
        self.coils.len()
    }

    pub fn height(&self) -> usize {
        self.coils[0].height
    }

    pub fn width(&self) -> usize {
        self.coils[0].width
    }

    pub fn coil(&self, k: usize) -> &ComplexImage {
        &self.coils[k]
    }

    pub fn coil_mut(&mut self, k: usize) -> &mut ComplexImage {
        &mut self.coils[k]
    }

    pub fn coils(&self) -> &[ComplexImage] {
        &self.coils
    }

    /// Inner product conjugate-linear in `self`: Σ conj(x)·y over all coils.
    pub fn dot(&self, other: &CoilStack) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in self.coils.iter().zip(&other.coils) {
            for (x, y) in a.data.iter().zip(&b.data) {
                acc += x.conj() * y;
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.coils
            .iter()
            .map(|c| c.data.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// self + scale·other, elementwise.
    pub fn add_scaled(&self, other: &CoilStack, scale: f64) -> Result<CoilStack> {
        self.check_same_shape(other, "CoilStack::add_scaled")?;
        let coils = self
            .coils
            .iter()
            .zip(&other.coils)
            .map(|(a, b)| ComplexImage {
                height: a.height,
                width: a.width,
                data: a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(x, y)| x + scale * y)
                    .collect(),
            })
            .collect();
        Ok(CoilStack { coils })
    }

    pub(crate) fn check_same_shape(&self, other: &CoilStack, context: &'static str) -> Result<()> {
        if self.coil_count() != other.coil_count()
            || self.height() != other.height()
            || self.width() != other.width()
        {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{}x{}x{}", self.coil_count(), self.height(), self.width()),
                got: format!(
                    "{}x{}x{}",
                    other.coil_count(),
                    other.height(),
                    other.width()
                ),
            });
        }
        Ok(())
    }
}

/// Per-column k-space sampling pattern (the projection P of Eq. 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub width: usize,
    pub kept: Vec<bool>,
    pub acceleration: u32,
    pub center_fraction: f64,
}

impl SamplingMask {
    /// All columns kept; P is the identity.
    pub fn full(width: usize) -> Self {
        SamplingMask {
            width,
            kept: vec![true; width],
            acceleration: 1,
            center_fraction: 1.0,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Zeroes every column of `img` where kept = false.
    pub fn apply(&self, img: &ComplexImage) -> Result<ComplexImage> {
        if img.width != self.width {
            return Err(Error::ShapeMismatch {
                context: "SamplingMask::apply",
                expected: format!("width {}", self.width),
                got: format!("width {}", img.width),
            });
        }
        let mut out = img.clone();
        for row in out.data.chunks_mut(self.width) {
            for (value, &keep) in row.iter_mut().zip(&self.kept) {
                if !keep {
                    *value = Complex64::new(0.0, 0.0);
                }
            }
        }
        Ok(out)
    }
}

/// Scanner field strength of an acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldStrength {
    T1_5,
    T3,
}

/// Acquisition conditions encoded as the one-hot ω of the state init.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcquisitionMeta {
    pub field_strength: FieldStrength,
    pub fat_suppression: bool,
    pub coil_count: usize,
}

impl AcquisitionMeta {
    /// Injective index into the 8-slot one-hot block: bit 1 = field strength,
    /// bit 0 = fat suppression. Indices 4..7 are reserved.
    pub fn one_hot_index(&self) -> usize {
        let field = matches!(self.field_strength, FieldStrength::T3) as usize;
        2 * field + self.fat_suppression as usize
    }

    pub fn from_one_hot_index(index: usize, coil_count: usize) -> Result<Self> {
        if index >= 4 {
            return Err(Error::Config(format!(
                "one-hot index {index} is reserved (must be < 4)"
            )));
        }
        Ok(AcquisitionMeta {
            field_strength: if index & 2 != 0 {
                FieldStrength::T3
            } else {
                FieldStrength::T1_5
            },
            fat_suppression: index & 1 != 0,
            coil_count,
        })
    }
}
