//! Structural similarity: value and analytic gradient over a uniform
//! sliding window, evaluated at valid (fully inside) positions only.

use crate::error::{Error, Result};
use crate::nn::FeatureMap;

/// Window geometry and stabilization constants. `data_range` is the dynamic
/// range L entering C1 = (k1·L)² and C2 = (k2·L)²; training and evaluation
/// take it from the target's maximum magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl SsimConfig {
    pub fn with_data_range(data_range: f64) -> Self {
        SsimConfig {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range,
        }
    }

    /// Standard constants with L = max(target).
    pub fn for_target(target: &FeatureMap) -> Result<Self> {
        let cfg = Self::with_data_range(target.data.iter().cloned().fold(0.0, f64::max));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window must be odd and positive, got {}",
                self.window
            )));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::Config("SSIM k1 and k2 must be positive".into()));
        }
        if self.data_range == 0.0 {
            return Err(Error::ZeroDataRange);
        }
        if !(self.data_range > 0.0) {
            return Err(Error::Config(format!(
                "SSIM data range must be positive, got {}",
                self.data_range
            )));
        }
        Ok(())
    }
}

fn check_pair(x: &FeatureMap, y: &FeatureMap, cfg: &SsimConfig) -> Result<()> {
    cfg.validate()?;
    if x.channels != 1 || y.channels != 1 || !x.same_shape(y) {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            expected: format!("two 1×{}×{} maps", x.height, x.width),
            got: format!(
                "{}×{}×{} vs {}×{}×{}",
                x.channels, x.height, x.width, y.channels, y.height, y.width
            ),
        });
    }
    if x.height < cfg.window || x.width < cfg.window {
        return Err(Error::Config(format!(
            "image {}×{} smaller than SSIM window {}",
            x.height, x.width, cfg.window
        )));
    }
    Ok(())
}

/// Summed-area table with a zero top row and left column, so any window sum
/// is four lookups.
struct Integral {
    width: usize,
    table: Vec<f64>,
}

impl Integral {
    fn build(height: usize, width: usize, values: impl Fn(usize) -> f64) -> Integral {
        let w1 = width + 1;
        let mut table = vec![0.0; (height + 1) * w1];
        for y in 0..height {
            let mut row_sum = 0.0;
            for x in 0..width {
                row_sum += values(y * width + x);
                table[(y + 1) * w1 + x + 1] = table[y * w1 + x + 1] + row_sum;
            }
        }
        Integral { width, table }
    }

    fn window_sum(&self, y: usize, x: usize, win: usize) -> f64 {
        let w1 = self.width + 1;
        self.table[(y + win) * w1 + (x + win)] - self.table[y * w1 + (x + win)]
            - self.table[(y + win) * w1 + x]
            + self.table[y * w1 + x]
    }
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
    s: f64,
}

fn window_stats(
    sums: &[Integral; 5],
    y: usize,
    x: usize,
    win: usize,
    c1: f64,
    c2: f64,
) -> WindowStats {
    let n = (win * win) as f64;
    let mu_x = sums[0].window_sum(y, x, win) / n;
    let mu_y = sums[1].window_sum(y, x, win) / n;
    let var_x = sums[2].window_sum(y, x, win) / n - mu_x * mu_x;
    let var_y = sums[3].window_sum(y, x, win) / n - mu_y * mu_y;
    let cov = sums[4].window_sum(y, x, win) / n - mu_x * mu_y;
    let a1 = 2.0 * mu_x * mu_y + c1;
    let a2 = 2.0 * cov + c2;
    let b1 = mu_x * mu_x + mu_y * mu_y + c1;
    let b2 = var_x + var_y + c2;
    WindowStats {
        mu_x,
        mu_y,
        a1,
        a2,
        b1,
        b2,
        s: (a1 * a2) / (b1 * b2),
    }
}

fn build_sums(x: &FeatureMap, y: &FeatureMap) -> [Integral; 5] {
    let (h, w) = (x.height, x.width);
    let xv = &x.data;
    let yv = &y.data;
    [
        Integral::build(h, w, |i| xv[i]),
        Integral::build(h, w, |i| yv[i]),
        Integral::build(h, w, |i| xv[i] * xv[i]),
        Integral::build(h, w, |i| yv[i] * yv[i]),
        Integral::build(h, w, |i| xv[i] * yv[i]),
    ]
}

/// Mean SSIM index over all valid window positions.
pub fn ssim(x: &FeatureMap, y: &FeatureMap, cfg: &SsimConfig) -> Result<f64> {
    check_pair(x, y, cfg)?;
    let win = cfg.window;
    let l = cfg.data_range;
    let (c1, c2) = ((cfg.k1 * l) * (cfg.k1 * l), (cfg.k2 * l) * (cfg.k2 * l));
    let sums = build_sums(x, y);
    let (wy, wx) = (x.height - win + 1, x.width - win + 1);
    let mut total = 0.0;
    for y0 in 0..wy {
        for x0 in 0..wx {
            total += window_stats(&sums, y0, x0, win, c1, c2).s;
        }
    }
    Ok(total / (wy * wx) as f64)
}

/// SSIM value together with its gradient with respect to `x`. Each window
/// contributes ∂S/∂xᵢ = (2 / (n·B1·B2)) · (c0 + A1·yᵢ − S·B1·xᵢ) to every
/// pixel it covers; the result is averaged over windows.
pub fn ssim_with_grad(
    x: &FeatureMap,
    y: &FeatureMap,
    cfg: &SsimConfig,
) -> Result<(f64, FeatureMap)> {
    check_pair(x, y, cfg)?;
    let win = cfg.window;
    let l = cfg.data_range;
    let (c1, c2) = ((cfg.k1 * l) * (cfg.k1 * l), (cfg.k2 * l) * (cfg.k2 * l));
    let n = (win * win) as f64;
    let sums = build_sums(x, y);
    let (h, w) = (x.height, x.width);
    let (wy, wx) = (h - win + 1, w - win + 1);
    let mut total = 0.0;
    let mut grad = FeatureMap::zeros(1, h, w);
    for y0 in 0..wy {
        for x0 in 0..wx {
            let st = window_stats(&sums, y0, x0, win, c1, c2);
            total += st.s;
            let beta = 2.0 / (n * st.b1 * st.b2);
            let coeff0 =
                st.mu_y * st.a2 - st.a1 * st.mu_y - st.s * (st.mu_x * st.b2 - st.b1 * st.mu_x);
            let coeff1 = st.a1;
            let coeff2 = -(st.s * st.b1);
            for dy in 0..win {
                let row = (y0 + dy) * w + x0;
                for dx in 0..win {
                    let i = row + dx;
                    grad.data[i] += beta * (coeff0 + coeff1 * y.data[i] + coeff2 * x.data[i]);
                }
            }
        }
    }
    let count = (wy * wx) as f64;
    grad.scale(1.0 / count);
    Ok((total / count, grad))
}

pub fn ssim_grad(x: &FeatureMap, y: &FeatureMap, cfg: &SsimConfig) -> Result<FeatureMap> {
    Ok(ssim_with_grad(x, y, cfg)?.1)
}

/// −(1/N) Σᵢ SSIM(m̂ᵢ, mᵢ), with the data range taken from each target
/// (overriding `base.data_range`).
pub fn batch_loss(
    reconstructions: &[FeatureMap],
    targets: &[FeatureMap],
    base: &SsimConfig,
) -> Result<f64> {
    if reconstructions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if reconstructions.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "batch_loss",
            expected: format!("{} targets", reconstructions.len()),
            got: format!("{}", targets.len()),
        });
    }
    let mut total = 0.0;
    for (m_hat, m) in reconstructions.iter().zip(targets) {
        let cfg = SsimConfig {
            data_range: m.data.iter().cloned().fold(0.0, f64::max),
            ..*base
        };
        total += ssim(m_hat, m, &cfg)?;
    }
    Ok(-total / reconstructions.len() as f64)
}
