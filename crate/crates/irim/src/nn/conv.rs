//! Same-padded stride-1 2-D convolution (cross-correlation, no kernel flip)
//! and its exact backward pass.

use crate::error::{Error, Result};

use super::FeatureMap;

/// Shape descriptor plus borrowed weight/bias storage. Weights are laid out
/// `[out][in][ky][kx]`; kernel dims must be odd so same padding is symmetric.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl<'a> ConvParams<'a> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: &'a [f64],
        bias: &'a [f64],
    ) -> Result<Self> {
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel dims must be odd, got {kernel_h}x{kernel_w}"
            )));
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::ShapeMismatch {
                context: "ConvParams::new",
                expected: format!("{expected} weights, {out_channels} biases"),
                got: format!("{} weights, {} biases", weights.len(), bias.len()),
            });
        }
        Ok(ConvParams { out_channels, in_channels, kernel_h, kernel_w, weights, bias })
    }

    fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((co * self.in_channels + ci) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

fn check_input(x: &FeatureMap, p: &ConvParams) -> Result<()> {
    if x.channels != p.in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv2d",
            expected: format!("{} input channels", p.in_channels),
            got: format!("{}", x.channels),
        });
    }
    Ok(())
}

/// Row ranges over which a kernel tap at offset (dy, dx) overlaps the image:
/// output rows y with y+dy in bounds, and output cols x with x+dx in bounds.
fn tap_ranges(h: usize, w: usize, dy: isize, dx: isize) -> (usize, usize, usize, usize) {
    let y0 = (-dy).max(0) as usize;
    let y1 = ((h as isize - dy).min(h as isize)) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = ((w as isize - dx).min(w as isize)) as usize;
    (y0, y1, x0, x1)
}

pub fn conv2d(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    check_input(x, p)?;
    let (h, w) = (x.height, x.width);
    let (oy, ox) = (p.kernel_h as isize / 2, p.kernel_w as isize / 2);
    let mut out = FeatureMap::zeros(p.out_channels, h, w);

    for co in 0..p.out_channels {
        out.channel_mut(co).fill(p.bias[co]);
        for ci in 0..p.in_channels {
            let xc = x.channel(ci);
            for ky in 0..p.kernel_h {
                let dy = ky as isize - oy;
                for kx in 0..p.kernel_w {
                    let dx = kx as isize - ox;
                    let wv = p.weight(co, ci, ky, kx);
                    let (y0, y1, x0, x1) = tap_ranges(h, w, dy, dx);
                    let oc = out.channel_mut(co);
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * w;
                        let src_row = &xc[src + ((x0 as isize + dx) as usize)
                            ..src + ((x1 as isize + dx) as usize)];
                        let dst_row = &mut oc[y * w + x0..y * w + x1];
                        for (d, s) in dst_row.iter_mut().zip(src_row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of ⟨g_out, conv2d(x, p)⟩ with respect to x, weights, and bias.
pub fn conv2d_backward(
    x: &FeatureMap,
    p: &ConvParams,
    g_out: &FeatureMap,
) -> Result<(FeatureMap, Vec<f64>, Vec<f64>)> {
    check_input(x, p)?;
    if g_out.channels != p.out_channels || g_out.height != x.height || g_out.width != x.width {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward",
            expected: format!("{}x{}x{}", p.out_channels, x.height, x.width),
            got: format!("{}x{}x{}", g_out.channels, g_out.height, g_out.width),
        });
    }
    let (h, w) = (x.height, x.width);
    let (oy, ox) = (p.kernel_h as isize / 2, p.kernel_w as isize / 2);
    let mut g_x = FeatureMap::zeros(x.channels, h, w);
    let mut g_w = vec![0.0; p.weights.len()];
    let mut g_b = vec![0.0; p.out_channels];

    for co in 0..p.out_channels {
        let gc = g_out.channel(co);
        g_b[co] = gc.iter().sum();
        for ci in 0..p.in_channels {
            let xc = x.channel(ci);
            for ky in 0..p.kernel_h {
                let dy = ky as isize - oy;
                for kx in 0..p.kernel_w {
                    let dx = kx as isize - ox;
                    let (y0, y1, x0, x1) = tap_ranges(h, w, dy, dx);
                    let wv = p.weight(co, ci, ky, kx);
                    let widx =
                        ((co * p.in_channels + ci) * p.kernel_h + ky) * p.kernel_w + kx;
                    let gxc = g_x.channel_mut(ci);
                    let mut wacc = 0.0;
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * w
                            + ((x0 as isize + dx) as usize);
                        let len = x1 - x0;
                        let g_row = &gc[y * w + x0..y * w + x1];
                        let x_row = &xc[src..src + len];
                        for (g, xv) in g_row.iter().zip(x_row) {
                            wacc += g * xv;
                        }
                        let gx_row = &mut gxc[src..src + len];
                        for (gx, g) in gx_row.iter_mut().zip(g_row) {
                            *gx += wv * g;
                        }
                    }
                    g_w[widx] += wacc;
                }
            }
        }
    }
    Ok((g_x, g_w, g_b))
}
