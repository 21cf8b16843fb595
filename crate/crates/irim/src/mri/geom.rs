//! Center crop and symmetric zero padding.

use super::ComplexImage;

/// Per axis: (source start, destination start, run length).
fn axis_plan(input: usize, target: usize) -> (usize, usize, usize) {
    if input >= target {
        ((input - target) / 2, 0, target)
    } else {
        // Padding surplus goes to the high-index side.
        (0, (target - input) / 2, input)
    }
}

/// Crops each oversized axis around its center and zero-pads each undersized
/// axis symmetrically. Identity when the shapes already match.
pub fn center_crop_or_pad(img: &ComplexImage, target_h: usize, target_w: usize) -> ComplexImage {
    assert!(target_h >= 1 && target_w >= 1);
    if img.height == target_h && img.width == target_w {
        return img.clone();
    }
    let (src_r, dst_r, rows) = axis_plan(img.height, target_h);
    let (src_c, dst_c, cols) = axis_plan(img.width, target_w);
    let mut out = ComplexImage::zeros(target_h, target_w);
    for r in 0..rows {
        let src = (src_r + r) * img.width + src_c;
        let dst = (dst_r + r) * target_w + dst_c;
        out.data[dst..dst + cols].copy_from_slice(&img.data[src..src + cols]);
    }
    out
}
