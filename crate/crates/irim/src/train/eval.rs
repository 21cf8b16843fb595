//! Deterministic validation: reconstruct every record at one acceleration
//! with replayable per-item mask seeds and score it against the ground
//! truth, next to a zero-filled baseline.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{run_model, Model};
use crate::mri::{make_mask, zero_filled_init};
use crate::nn::{FeatureMap, ParamStore};
use crate::phantom::{rss, DatasetRecord};
use crate::rng::Rng;
use crate::train::metrics::{format_sig6, nmse, psnr, MetricsRow};
use crate::train::ssim::{ssim, SsimConfig};
use crate::train::trainer::{masked_kspace, record_target};

/// Base of the per-item mask streams. Fixed so every evaluation of a given
/// dataset sees the same masks, whatever checkpoint is being scored.
const EVAL_MASK_SEED: u64 = 0x4556_414c;

pub const METHOD_MODEL: &str = "model";
pub const METHOD_ZERO_FILLED: &str = "zero-filled";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub item: usize,
    pub method: &'static str,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-item rows plus per-method means for one acceleration factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acceleration: u32,
    pub rows: Vec<EvalRow>,
    pub model_nmse: f64,
    pub model_psnr: f64,
    pub model_ssim: f64,
    pub baseline_nmse: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

impl EvalReport {
    /// Rows in the metrics-log grammar. Model rows carry `split`, baseline
    /// rows `<split>-zero-filled`; the item index goes in the step field.
    pub fn to_metrics_rows(&self, epoch: usize, split: &str) -> Vec<MetricsRow> {
        self.rows
            .iter()
            .map(|r| MetricsRow {
                epoch,
                step: r.item,
                split: if r.method == METHOD_MODEL {
                    split.to_string()
                } else {
                    format!("{split}-zero-filled")
                },
                accel: self.acceleration,
                nmse: r.nmse,
                psnr: r.psnr,
                ssim: r.ssim,
            })
            .collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "item method nmse psnr ssim")?;
        for r in &self.rows {
            writeln!(
                f,
                "{} {} {} {} {}",
                r.item,
                r.method,
                format_sig6(r.nmse),
                format_sig6(r.psnr),
                format_sig6(r.ssim)
            )?;
        }
        writeln!(
            f,
            "mean {} {} {} {}",
            METHOD_MODEL,
            format_sig6(self.model_nmse),
            format_sig6(self.model_psnr),
            format_sig6(self.model_ssim)
        )?;
        write!(
            f,
            "mean {} {} {} {}",
            METHOD_ZERO_FILLED,
            format_sig6(self.baseline_nmse),
            format_sig6(self.baseline_psnr),
            format_sig6(self.baseline_ssim)
        )
    }
}

/// NMSE, PSNR, and SSIM of an estimate against its target.
pub fn score(estimate: &FeatureMap, target: &FeatureMap) -> Result<(f64, f64, f64)> {
    let cfg = SsimConfig::for_target(target)?;
    Ok((
        nmse(estimate, target)?,
        psnr(estimate, target)?,
        ssim(estimate, target, &cfg)?,
    ))
}

/// Scores `model` on every record at `acceleration`, emitting a model row
/// and a zero-filled baseline row per item. Mask seeds depend only on the
/// item index, so reports are bit-identical across runs.
pub fn evaluate(
    records: &[DatasetRecord],
    model: &Model,
    store: &ParamStore,
    acceleration: u32,
    resolution: usize,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    model.cfg.check_spatial(resolution, resolution)?;
    for (i, rec) in records.iter().enumerate() {
        if rec.kdata.coil_count() != model.cfg.coil_count {
            return Err(Error::ShapeMismatch {
                context: "evaluate",
                expected: format!("{} coils", model.cfg.coil_count),
                got: format!("{} coils in record {i}", rec.kdata.coil_count()),
            });
        }
    }

    let root = Rng::new(EVAL_MASK_SEED);
    let mut rows = Vec::with_capacity(2 * records.len());
    let mut sums = [[0.0f64; 3]; 2];
    for (i, rec) in records.iter().enumerate() {
        let mask_seed = root.derive("eval-mask", &[i as u64]).next_u64();
        let mask = make_mask(resolution, acceleration, mask_seed)?;
        let d = masked_kspace(rec, resolution, &mask)?;
        let target = record_target(rec, resolution)?;

        let (m_hat, _) = run_model(&d, &mask, &rec.meta, model, store)?;
        let zero_filled = rss(&zero_filled_init(&d, &mask)?);

        for (slot, (method, estimate)) in [
            (METHOD_MODEL, &m_hat),
            (METHOD_ZERO_FILLED, &zero_filled),
        ]
        .into_iter()
        .enumerate()
        {
            let (n, p, s) = score(estimate, &target)?;
            sums[slot][0] += n;
            sums[slot][1] += p;
            sums[slot][2] += s;
            rows.push(EvalRow { item: i, method, nmse: n, psnr: p, ssim: s });
        }
    }

    let count = records.len() as f64;
    Ok(EvalReport {
        acceleration,
        rows,
        model_nmse: sums[0][0] / count,
        model_psnr: sums[0][1] / count,
        model_ssim: sums[0][2] / count,
        baseline_nmse: sums[1][0] / count,
        baseline_psnr: sums[1][1] / count,
        baseline_ssim: sums[1][2] / count,
    })
}
