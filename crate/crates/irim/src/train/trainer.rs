//! The optimizer loop: seeded epoch shuffling, per-item mask simulation,
//! batch-averaged reverse-mode gradients, Adam updates, metrics rows, and
//! resumable checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;

use crate::backprop::{backward_reversible, BackwardOptions};
use crate::error::{Error, Result};
use crate::model::{bind_model, build_model, run_model, InitMode, Model, ModelConfig};
use crate::mri::{center_crop_or_pad, fft2c, ifft2c, make_mask, CoilStack, ComplexImage, SamplingMask};
use crate::nn::{load_checkpoint, save_checkpoint, FeatureMap, ParamStore};
use crate::phantom::DatasetRecord;
use crate::rng::Rng;
use crate::train::adam::{adam_step, learning_rate, OptimConfig};
use crate::train::metrics::{nmse, psnr, MetricsRow};

/// Everything about a run that is not the architecture or the optimizer:
/// data streams, checkpointing, and stopping.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Root seed for parameter init and the shuffle/mask/acceleration
    /// streams. Ignored on resume (the checkpoint's seed wins).
    pub seed: u64,
    /// Square spatial size items are cropped or padded to.
    pub resolution: usize,
    /// Acceleration factors drawn uniformly per item.
    pub accelerations: Vec<u32>,
    pub init: InitMode,
    /// Inversion drift guard handed to the backward pass; `None` skips the
    /// per-step replay.
    pub guard: Option<f64>,
    /// Stop after this many optimizer steps in this call; the checkpoint
    /// then records the mid-epoch cursor so a resume continues exactly.
    pub max_steps: Option<usize>,
    /// Rolling checkpoint destination; `None` disables checkpointing.
    pub checkpoint_path: Option<PathBuf>,
    /// Epochs between checkpoint writes (the final state is always written
    /// when a path is set).
    pub checkpoint_every: usize,
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            resolution: 64,
            accelerations: vec![4, 8],
            init: InitMode::IdentityCouplings,
            guard: None,
            max_steps: None,
            checkpoint_path: None,
            checkpoint_every: 1,
            resume_from: None,
        }
    }
}

/// Final state of a training call plus its full telemetry.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    /// One `split = "train"` row per item, in processing order.
    pub rows: Vec<MetricsRow>,
    /// Mean batch loss per optimizer step.
    pub loss_history: Vec<f64>,
    /// `(epoch, lr)` for every epoch this call touched.
    pub lr_by_epoch: Vec<(usize, f64)>,
    /// Fully completed epochs (counting ones from the resumed checkpoint).
    pub epochs_completed: usize,
    pub global_step: usize,
}

/// Crops or zero-pads every coil image to `size`×`size` and re-encodes the
/// fully sampled k-space at that resolution.
pub fn resample_kspace(kdata: &CoilStack, size: usize) -> Result<CoilStack> {
    let coils = kdata
        .coils()
        .iter()
        .map(|k| fft2c(&center_crop_or_pad(&ifft2c(k), size, size)))
        .collect();
    CoilStack::new(coils)
}

/// Measurements for one record: resampled k-space with the mask applied.
pub fn masked_kspace(rec: &DatasetRecord, size: usize, mask: &SamplingMask) -> Result<CoilStack> {
    let full = resample_kspace(&rec.kdata, size)?;
    let kept = full
        .coils()
        .iter()
        .map(|k| mask.apply(k))
        .collect::<Result<Vec<_>>>()?;
    CoilStack::new(kept)
}

fn resample_real(map: &FeatureMap, size: usize) -> Result<FeatureMap> {
    let img = ComplexImage::new(
        map.height,
        map.width,
        map.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    )?;
    let out = center_crop_or_pad(&img, size, size);
    FeatureMap::new(1, size, size, out.data.iter().map(|z| z.re).collect())
}

/// Ground truth for a record at the working resolution: the ESC plane for
/// single-coil data, the RSS plane otherwise.
pub fn record_target(rec: &DatasetRecord, size: usize) -> Result<FeatureMap> {
    let native = if rec.kdata.coil_count() == 1 {
        &rec.target_esc
    } else {
        &rec.target_rss
    };
    resample_real(native, size)
}

fn validate_run(
    records: &[DatasetRecord],
    cfg: &ModelConfig,
    optim: &OptimConfig,
    opts: &TrainOptions,
) -> Result<()> {
    cfg.validate()?;
    optim.validate()?;
    if records.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if opts.accelerations.is_empty() {
        return Err(Error::Config("no acceleration factors to sample from".into()));
    }
    if opts.checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be >= 1".into()));
    }
    if opts.resolution < 8 {
        return Err(Error::Config(format!(
            "resolution {} is below the 7x7 loss window",
            opts.resolution
        )));
    }
    cfg.check_spatial(opts.resolution, opts.resolution)?;
    for (i, rec) in records.iter().enumerate() {
        if rec.kdata.coil_count() != cfg.coil_count {
            return Err(Error::ShapeMismatch {
                context: "train",
                expected: format!("{} coils", cfg.coil_count),
                got: format!("{} coils in record {i}", rec.kdata.coil_count()),
            });
        }
    }
    Ok(())
}

fn parse_field<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Config(format!("checkpoint is missing {key}")))?
        .parse()
        .map_err(|_| Error::Config(format!("checkpoint field {key} is not a valid number")))
}

fn write_checkpoint(
    path: &Path,
    store: &ParamStore,
    cfg: &ModelConfig,
    seed: u64,
    resolution: usize,
    epoch: usize,
    cursor: usize,
    global_step: usize,
) -> Result<()> {
    let mut map = cfg.to_config_map();
    map.insert("train.seed".into(), seed.to_string());
    map.insert("train.resolution".into(), resolution.to_string());
    map.insert("train.epoch".into(), epoch.to_string());
    map.insert("train.cursor".into(), cursor.to_string());
    map.insert("train.step".into(), global_step.to_string());
    save_checkpoint(store, &map, path)
}

/// The epoch loop. Every random draw is derived from `(seed, epoch, item
/// position)` alone, so a resumed run replays the identical item stream and
/// the spec'd bit-exact continuation holds.
pub fn train(
    records: &[DatasetRecord],
    cfg: &ModelConfig,
    optim: &OptimConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    validate_run(records, cfg, optim, opts)?;

    let (mut store, model, seed, mut epoch, mut item, mut global_step) = match &opts.resume_from {
        Some(path) => {
            let (store, map) = load_checkpoint(path)?;
            let saved_model: BTreeMap<String, String> = map
                .iter()
                .filter(|(k, _)| k.starts_with("model."))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if saved_model != cfg.to_config_map() {
                return Err(Error::Config(
                    "checkpoint model config does not match the requested one".into(),
                ));
            }
            let resolution: usize = parse_field(&map, "train.resolution")?;
            if resolution != opts.resolution {
                return Err(Error::Config(format!(
                    "checkpoint was trained at resolution {resolution}, requested {}",
                    opts.resolution
                )));
            }
            let seed: u64 = parse_field(&map, "train.seed")?;
            let epoch: usize = parse_field(&map, "train.epoch")?;
            let cursor: usize = parse_field(&map, "train.cursor")?;
            let step: usize = parse_field(&map, "train.step")?;
            let model = bind_model(cfg, &store)?;
            (store, model, seed, epoch, cursor, step)
        }
        None => {
            let mut store = ParamStore::new();
            let model = build_model(cfg, &mut store, opts.init, opts.seed)?;
            (store, model, opts.seed, 0, 0, 0)
        }
    };

    let root = Rng::new(seed);
    let backward_opts = BackwardOptions { guard: opts.guard };
    let mut rows = Vec::new();
    let mut loss_history = Vec::new();
    let mut lr_by_epoch = Vec::new();
    let mut steps_this_run = 0usize;
    let mut stopped_early = false;

    'epochs: while epoch < optim.epochs {
        lr_by_epoch.push((epoch, learning_rate(optim, epoch)));
        let mut order: Vec<usize> = (0..records.len()).collect();
        root.derive("shuffle", &[epoch as u64]).shuffle(&mut order);

        while item < order.len() {
            if opts.max_steps.is_some_and(|max| steps_this_run >= max) {
                stopped_early = true;
                break 'epochs;
            }
            let end = (item + optim.batch_size).min(order.len());
            store.zero_grads();
            let mut loss_sum = 0.0;
            for pos in item..end {
                let rec = &records[order[pos]];
                let draw = [epoch as u64, pos as u64];
                let pick = root.derive("accel", &draw).below(opts.accelerations.len() as u64);
                let accel = opts.accelerations[pick as usize];
                let mask_seed = root.derive("mask-seed", &draw).next_u64();
                let mask = make_mask(opts.resolution, accel, mask_seed)?;
                let d = masked_kspace(rec, opts.resolution, &mask)?;
                let target = record_target(rec, opts.resolution)?;

                let (m_hat, final_state) = run_model(&d, &mask, &rec.meta, &model, &store)?;
                let report = backward_reversible(
                    &final_state,
                    &target,
                    &d,
                    &mask,
                    &model,
                    &mut store,
                    &backward_opts,
                )?;
                loss_sum += report.loss;
                rows.push(MetricsRow {
                    epoch,
                    step: global_step + 1,
                    split: "train".into(),
                    accel,
                    nmse: nmse(&m_hat, &target)?,
                    psnr: psnr(&m_hat, &target)?,
                    ssim: report.ssim,
                });
            }
            let n = (end - item) as f64;
            store.scale_grads(1.0 / n);
            global_step += 1;
            adam_step(&mut store, optim, epoch, global_step)?;
            loss_history.push(loss_sum / n);
            steps_this_run += 1;
            item = end;
        }

        epoch += 1;
        item = 0;
        if let Some(path) = &opts.checkpoint_path {
            if epoch % opts.checkpoint_every == 0 || epoch == optim.epochs {
                write_checkpoint(path, &store, cfg, seed, opts.resolution, epoch, 0, global_step)?;
            }
        }
    }

    if stopped_early {
        if let Some(path) = &opts.checkpoint_path {
            write_checkpoint(
                path,
                &store,
                cfg,
                seed,
                opts.resolution,
                epoch,
                item,
                global_step,
            )?;
        }
    }

    Ok(TrainOutcome {
        model,
        store,
        rows,
        loss_history,
        lr_by_epoch,
        epochs_completed: epoch,
        global_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::AcquisitionMeta;
    use crate::phantom::{make_coils, make_phantom, simulate_record};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            steps: 1,
            scales: 1,
            latent_channels: 8,
            layers_per_block: 2,
            channels_per_scale: vec![2, 2],
            coil_count: 1,
            shared_weights: true,
        }
    }

    fn tiny_records(count: usize, size: usize, seed: u64) -> Vec<DatasetRecord> {
        let coils = make_coils(size, 1, seed).unwrap();
        (0..count)
            .map(|i| {
                let p = make_phantom(size, seed + 100 + i as u64).unwrap();
                let meta = AcquisitionMeta::from_one_hot_index(0, 1).unwrap();
                simulate_record(&p, &coils, 0.02, &meta, seed + 500 + i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn shape_problems_surface_before_the_first_step() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { epochs: 1, ..OptimConfig::default() };
        let records = tiny_records(2, 16, 1);

        let opts = TrainOptions { resolution: 16, ..TrainOptions::default() };
        assert!(train(&[], &cfg, &optim, &opts).is_err());

        let odd = TrainOptions { resolution: 17, ..TrainOptions::default() };
        assert!(train(&records, &cfg, &optim, &odd).is_err());

        let mut multi = cfg.clone();
        multi.coil_count = 2;
        assert!(train(&records, &multi, &optim, &opts).is_err());

        let no_accel = TrainOptions {
            resolution: 16,
            accelerations: vec![],
            ..TrainOptions::default()
        };
        assert!(train(&records, &cfg, &optim, &no_accel).is_err());
    }

    #[test]
    fn emits_one_train_row_per_item_with_the_step_counter() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { batch_size: 2, epochs: 2, ..OptimConfig::default() };
        let records = tiny_records(3, 16, 2);
        let opts = TrainOptions { seed: 7, resolution: 16, ..TrainOptions::default() };
        let out = train(&records, &cfg, &optim, &opts).unwrap();

        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.loss_history.len(), 4);
        assert_eq!(out.global_step, 4);
        assert_eq!(out.epochs_completed, 2);
        for row in &out.rows {
            assert_eq!(row.split, "train");
            assert!(row.accel == 4 || row.accel == 8);
            assert!(row.ssim >= -1.0 && row.ssim <= 1.0);
        }
        assert_eq!(out.rows[0].step, 1);
        assert_eq!(out.rows[1].step, 1);
        assert_eq!(out.rows[2].step, 2);
        assert_eq!(out.rows[5].step, 4);
        for (i, &loss) in out.loss_history.iter().enumerate() {
            let w: Vec<f64> = out.rows.iter().filter(|r| r.step == i + 1).map(|r| -r.ssim).collect();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            assert_eq!(loss, mean);
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { batch_size: 2, epochs: 1, ..OptimConfig::default() };
        let records = tiny_records(4, 16, 3);
        let opts = TrainOptions { seed: 11, resolution: 16, ..TrainOptions::default() };

        let a = train(&records, &cfg, &optim, &opts).unwrap();
        let b = train(&records, &cfg, &optim, &opts).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        for (ia, ib) in a.store.ids().zip(b.store.ids()) {
            assert_eq!(a.store.value(ia), b.store.value(ib));
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_bit_exactly() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { batch_size: 2, epochs: 2, ..OptimConfig::default() };
        let records = tiny_records(6, 16, 4);
        let base = TrainOptions { seed: 21, resolution: 16, ..TrainOptions::default() };

        let full = train(&records, &cfg, &optim, &base).unwrap();
        assert_eq!(full.loss_history.len(), 6);

        let dir = std::env::temp_dir().join("irim-trainer-resume");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = dir.join("mid.ckpt");
        let first = TrainOptions {
            max_steps: Some(2),
            checkpoint_path: Some(ckpt.clone()),
            ..base.clone()
        };
        let head = train(&records, &cfg, &optim, &first).unwrap();
        assert_eq!(head.loss_history.len(), 2);
        assert_eq!(head.epochs_completed, 0);

        let second = TrainOptions {
            seed: 9999,
            resume_from: Some(ckpt),
            ..base.clone()
        };
        let tail = train(&records, &cfg, &optim, &second).unwrap();
        assert_eq!(tail.loss_history.len(), 4);

        let mut stitched = head.loss_history.clone();
        stitched.extend_from_slice(&tail.loss_history);
        assert_eq!(stitched, full.loss_history);
        for (ia, ib) in full.store.ids().zip(tail.store.ids()) {
            assert_eq!(full.store.value(ia), tail.store.value(ib));
            assert_eq!(full.store.moments(ia), tail.store.moments(ib));
        }
        assert_eq!(tail.global_step, full.global_step);
    }

    #[test]
    fn resume_rejects_a_mismatched_config() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { batch_size: 2, epochs: 1, ..OptimConfig::default() };
        let records = tiny_records(2, 16, 5);
        let dir = std::env::temp_dir().join("irim-trainer-mismatch");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = dir.join("done.ckpt");
        let opts = TrainOptions {
            seed: 3,
            resolution: 16,
            checkpoint_path: Some(ckpt.clone()),
            ..TrainOptions::default()
        };
        train(&records, &cfg, &optim, &opts).unwrap();

        let mut other = cfg.clone();
        other.latent_channels = 10;
        let resume = TrainOptions { resume_from: Some(ckpt.clone()), ..opts.clone() };
        assert!(train(&records, &other, &optim, &resume).is_err());

        let wrong_res = TrainOptions {
            resolution: 32,
            resume_from: Some(ckpt),
            ..opts
        };
        assert!(train(&records, &cfg, &optim, &wrong_res).is_err());
    }

    #[test]
    fn learning_rate_log_shows_the_decade_staircase() {
        let cfg = tiny_cfg();
        let optim = OptimConfig { batch_size: 1, epochs: 61, ..OptimConfig::default() };
        let records = tiny_records(1, 16, 6);
        let opts = TrainOptions { seed: 5, resolution: 16, ..TrainOptions::default() };
        let out = train(&records, &cfg, &optim, &opts).unwrap();

        assert_eq!(out.lr_by_epoch.len(), 61);
        assert_eq!(out.lr_by_epoch[0], (0, 1e-4));
        assert_eq!(out.lr_by_epoch[29], (29, 1e-4));
        assert_eq!(out.lr_by_epoch[30], (30, 1e-5));
        assert_eq!(out.lr_by_epoch[59], (59, 1e-5));
        assert_eq!(out.lr_by_epoch[60], (60, 1e-6));
    }

    #[test]
    fn loss_improves_on_a_small_corpus_in_most_seeded_trials() {
        let cfg = ModelConfig {
            steps: 2,
            scales: 2,
            latent_channels: 8,
            layers_per_block: 2,
            channels_per_scale: vec![2, 2, 2],
            coil_count: 1,
            shared_weights: true,
        };
        let optim = OptimConfig {
            lr0: 1e-3,
            batch_size: 1,
            epochs: 10,
            ..OptimConfig::default()
        };
        let records = tiny_records(10, 64, 7);

        let mut improved = 0;
        let mut failed = 0;
        for trial in 0..10u64 {
            let opts = TrainOptions {
                seed: 1000 + trial,
                resolution: 64,
                max_steps: Some(100),
                ..TrainOptions::default()
            };
            let out = train(&records, &cfg, &optim, &opts).unwrap();
            assert_eq!(out.loss_history.len(), 100);
            let early: f64 = out.loss_history[..10].iter().sum::<f64>() / 10.0;
            let late: f64 = out.loss_history[90..].iter().sum::<f64>() / 10.0;
            if late < early {
                improved += 1;
            } else {
                failed += 1;
            }
            if improved >= 8 || failed >= 3 {
                break;
            }
        }
        assert!(improved >= 8, "loss improved in only {improved} trials");
    }
}
