//! The stacked coil operator A = 1_K ⊗ PF, its adjoint, and the data
//! consistency gradient built from them.

use crate::error::Result;

use super::{fft2c, ifft2c, CoilStack, ComplexImage, SamplingMask};

fn check_mask_width(stack: &CoilStack, mask: &SamplingMask, context: &'static str) -> Result<()> {
    if stack.width() != mask.width {
        return Err(crate::error::Error::ShapeMismatch {
            context,
            expected: format!("width {}", mask.width),
            got: format!("width {}", stack.width()),
        });
    }
    Ok(())
}

/// d = A p: per coil, mask ∘ fft2c. Masked-out columns are exactly zero.
pub fn forward_a(p: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    check_mask_width(p, mask, "forward_a")?;
    let coils: Result<Vec<ComplexImage>> =
        p.coils().iter().map(|c| mask.apply(&fft2c(c))).collect();
    CoilStack::new(coils?)
}

/// Aᴴ d: per coil, ifft2c ∘ mask. Exact adjoint of [`forward_a`].
pub fn adjoint_ah(d: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    check_mask_width(d, mask, "adjoint_ah")?;
    let coils: Result<Vec<ComplexImage>> = d
        .coils()
        .iter()
        .map(|c| Ok(ifft2c(&mask.apply(c)?)))
        .collect();
    CoilStack::new(coils?)
}

/// ∇D = Aᴴ(A pₜ − d), the gradient of D(p) = ½‖Ap − d‖² with real and
/// imaginary parts treated as independent real variables.
pub fn dc_gradient(d: &CoilStack, mask: &SamplingMask, p_t: &CoilStack) -> Result<CoilStack> {
    p_t.check_same_shape(d, "dc_gradient")?;
    let residual = forward_a(p_t, mask)?.add_scaled(d, -1.0)?;
    adjoint_ah(&residual, mask)
}

/// p₀ = Aᴴ d, the zero-filled corrupted image stack.
pub fn zero_filled_init(d: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    adjoint_ah(d, mask)
}
