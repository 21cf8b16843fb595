//! Centered orthonormal 2-D Fourier transforms.
//!
//! Both directions are fftshift ∘ (FFT or IFFT) ∘ ifftshift with a 1/√(HW)
//! scale, so the pair is mutually inverse, unitary, and mutually adjoint,
//! with the DC sample at (⌊H/2⌋, ⌊W/2⌋) for odd and even sizes alike.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::ComplexImage;

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)>> =
        OnceLock::new();
    let mut guard = PLANS
        .get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())))
        .lock()
        .unwrap();
    let key = (len, direction == FftDirection::Forward);
    let (planner, cache) = &mut *guard;
    cache
        .entry(key)
        .or_insert_with(|| planner.plan_fft(len, direction))
        .clone()
}

/// out[i] = in[(i + ⌈N/2⌉) mod N]: moves DC from index 0 to ⌊N/2⌋.
fn fftshift_rows(data: &mut Vec<Complex64>, height: usize, width: usize, cols: bool) {
    let n = if cols { width } else { height };
    let offset = n.div_ceil(2);
    shift_rows(data, height, width, cols, offset);
}

/// out[i] = in[(i + ⌊N/2⌋) mod N]: moves ⌊N/2⌋ to index 0.
fn ifftshift_rows(data: &mut Vec<Complex64>, height: usize, width: usize, cols: bool) {
    let n = if cols { width } else { height };
    let offset = n / 2;
    shift_rows(data, height, width, cols, offset);
}

fn shift_rows(data: &mut Vec<Complex64>, height: usize, width: usize, cols: bool, offset: usize) {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    if cols {
        for r in 0..height {
            let row = &data[r * width..(r + 1) * width];
            let dst = &mut out[r * width..(r + 1) * width];
            for (i, value) in dst.iter_mut().enumerate() {
                *value = row[(i + offset) % width];
            }
        }
    } else {
        for (i, chunk) in out.chunks_mut(width).enumerate() {
            let src = (i + offset) % height;
            chunk.copy_from_slice(&data[src * width..(src + 1) * width]);
        }
    }
    *data = out;
}

fn transform(img: &ComplexImage, direction: FftDirection) -> ComplexImage {
    let (h, w) = (img.height, img.width);
    let mut data = img.data.clone();

    ifftshift_rows(&mut data, h, w, false);
    ifftshift_rows(&mut data, h, w, true);

    let row_fft = plan(w, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut transposed = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..h {
        for c in 0..w {
            transposed[c * h + r] = data[r * w + c];
        }
    }
    let col_fft = plan(h, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for col in transposed.chunks_mut(h) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    for c in 0..w {
        for r in 0..h {
            data[r * w + c] = transposed[c * h + r];
        }
    }

    fftshift_rows(&mut data, h, w, false);
    fftshift_rows(&mut data, h, w, true);

    let scale = 1.0 / ((h * w) as f64).sqrt();
    for value in &mut data {
        *value *= scale;
    }
    ComplexImage { height: h, width: w, data }
}

/// Centered orthonormal 2-D DFT.
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    transform(img, FftDirection::Forward)
}

/// Exact inverse (and adjoint) of [`fft2c`].
pub fn ifft2c(ksp: &ComplexImage) -> ComplexImage {
    transform(ksp, FftDirection::Inverse)
}
