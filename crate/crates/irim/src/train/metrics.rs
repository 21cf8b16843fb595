//! Reconstruction quality metrics and the metrics-log line format.

use crate::error::{Error, Result};
use crate::nn::FeatureMap;

fn check_same(x_hat: &FeatureMap, x: &FeatureMap, context: &'static str) -> Result<()> {
    if !x_hat.same_shape(x) {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{}×{}×{}", x.channels, x.height, x.width),
            got: format!("{}×{}×{}", x_hat.channels, x_hat.height, x_hat.width),
        });
    }
    Ok(())
}

/// ‖x̂ − x‖² / ‖x‖².
pub fn nmse(x_hat: &FeatureMap, x: &FeatureMap) -> Result<f64> {
    check_same(x_hat, x, "nmse")?;
    let ref_energy: f64 = x.data.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let err_energy: f64 = x_hat
        .data
        .iter()
        .zip(&x.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(err_energy / ref_energy)
}

/// 10·log₁₀(max(x)² / mse); +∞ for identical images.
pub fn psnr(x_hat: &FeatureMap, x: &FeatureMap) -> Result<f64> {
    check_same(x_hat, x, "psnr")?;
    let peak = x.data.iter().cloned().fold(0.0, f64::max);
    let mse: f64 = x_hat
        .data
        .iter()
        .zip(&x.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * ((peak * peak) / mse).log10())
}

/// Six significant digits; infinities render as "inf" / "-inf".
pub fn format_sig6(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap();
    format!("{rounded}")
}

/// One evaluation-unit line of the metrics log:
/// `epoch,step,split,accel,nmse,psnr,ssim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub split: String,
    pub accel: u32,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.split,
            self.accel,
            format_sig6(self.nmse),
            format_sig6(self.psnr),
            format_sig6(self.ssim)
        )
    }

    pub fn parse(line: &str) -> Result<MetricsRow> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Config(format!(
                "metrics line must have 7 fields, got {}: {line:?}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            if s == "inf" {
                return Ok(f64::INFINITY);
            }
            if s == "-inf" {
                return Ok(f64::NEG_INFINITY);
            }
            s.parse()
                .map_err(|_| Error::Config(format!("bad metrics number {s:?}")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad metrics integer {s:?}")))
        };
        Ok(MetricsRow {
            epoch: int(fields[0])?,
            step: int(fields[1])?,
            split: fields[2].to_string(),
            accel: int(fields[3])? as u32,
            nmse: num(fields[4])?,
            psnr: num(fields[5])?,
            ssim: num(fields[6])?,
        })
    }
}
