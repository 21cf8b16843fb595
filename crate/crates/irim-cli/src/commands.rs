//! Subcommand implementations other than `check`: dataset generation,
//! training, reconstruction, evaluation, and image export.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use irim::model::{bind_model, run_model, InitMode, ModelConfig};
use irim::mri::{ifft2c, make_mask, zero_filled_init, AcquisitionMeta, CoilStack};
use irim::nn::load_checkpoint;
use irim::phantom::{
    make_coils, make_phantom, read_dataset, rss, simulate_record, write_dataset, write_pgm,
};
use irim::rng::Rng;
use irim::train::{
    evaluate as score_dataset, masked_kspace, record_target, score, train as run_training,
    MetricsRow, TrainOptions,
};

use crate::config::{self, Overrides};
use crate::{lib, CmdResult, Failure};

#[derive(Args)]
pub struct GenerateArgs {
    /// Output dataset path
    #[arg(long)]
    pub out: PathBuf,
    /// Number of records to simulate
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    /// Square image size in pixels
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Receive coils per record
    #[arg(long, default_value_t = 1)]
    pub coils: usize,
    /// Per-component Gaussian noise std added in k-space
    #[arg(long, default_value_t = 0.02)]
    pub noise_sigma: f64,
    /// Root seed for the whole dataset
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn generate_data(args: GenerateArgs) -> CmdResult {
    if args.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    if !(args.noise_sigma >= 0.0) {
        return Err(Failure::Usage(format!(
            "--noise-sigma must be non-negative, got {}",
            args.noise_sigma
        )));
    }
    println!("resolved-config:");
    println!("  data.coils={}", args.coils);
    println!("  data.count={}", args.count);
    println!("  data.noise_sigma={}", args.noise_sigma);
    println!("  data.seed={}", args.seed);
    println!("  data.size={}", args.size);

    let root = Rng::new(args.seed);
    let profile = lib(
        "generate-data",
        make_coils(args.size, args.coils, root.derive("coil-seed", &[]).next_u64()),
    )?;
    let mut records = Vec::with_capacity(args.count as usize);
    for i in 0..args.count {
        let mut attempt = 0u64;
        let phantom = loop {
            let seed = root.derive("phantom-seed", &[i, attempt]).next_u64();
            let candidate = lib("generate-data", make_phantom(args.size, seed))?;
            if candidate.magnitude_map().data.iter().any(|&v| v > 0.0) {
                break candidate;
            }
            attempt += 1;
        };
        let meta = lib(
            "generate-data",
            AcquisitionMeta::from_one_hot_index((i % 4) as usize, args.coils),
        )?;
        let record = lib(
            "generate-data",
            simulate_record(
                &phantom,
                &profile,
                args.noise_sigma,
                &meta,
                root.derive("noise-seed", &[i]).next_u64(),
            ),
        )?;
        records.push(record);
    }
    lib(
        &format!("writing {}", args.out.display()),
        write_dataset(&records, &args.out),
    )?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    DeskSingle,
    DeskMulti,
    PaperSingle,
    PaperMulti,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::DeskSingle => "desk-single",
            Preset::DeskMulti => "desk-multi",
            Preset::PaperSingle => "paper-single",
            Preset::PaperMulti => "paper-multi",
        }
    }

    fn is_paper_scale(self) -> bool {
        matches!(self, Preset::PaperSingle | Preset::PaperMulti)
    }

    fn base(self) -> (ModelConfig, usize) {
        match self {
            Preset::DeskSingle => (ModelConfig::desk_single(), 64),
            Preset::DeskMulti => (ModelConfig::desk_multi(), 64),
            Preset::PaperSingle => (ModelConfig::paper_single(), 368),
            Preset::PaperMulti => (ModelConfig::paper_multi(), 368),
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset path
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log to append rows to
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Model size preset the config file and flags refine
    #[arg(long, value_enum, default_value_t = Preset::DeskSingle)]
    pub preset: Preset,
    /// key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for shuffling and mask draws
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square training resolution
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Number of epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Items per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated acceleration factors sampled per item
    #[arg(long)]
    pub accelerations: Option<String>,
    /// Reconstruction guard tolerance for the reversible backward pass
    #[arg(long)]
    pub guard: Option<f64>,
    /// Write a checkpoint every N epochs
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Stop after N optimizer steps, checkpointing mid-epoch
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Checkpoint to continue from
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Confirm a paper-scale preset on purpose
    #[arg(long)]
    pub allow_large: bool,
}

pub fn train(args: TrainArgs) -> CmdResult {
    if args.preset.is_paper_scale() && !args.allow_large {
        return Err(Failure::Usage(format!(
            "preset {} is paper-scale; pass --allow-large to run it",
            args.preset.name()
        )));
    }
    let (base_model, base_resolution) = args.preset.base();
    let over = Overrides {
        seed: args.seed,
        resolution: args.resolution,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        accelerations: args.accelerations.clone(),
        guard: args.guard,
        checkpoint_every: args.checkpoint_every,
    };
    let resolved = config::resolve(&base_model, base_resolution, args.config.as_deref(), &over)?;
    config::print_resolved(&resolved.map);

    let records = lib(
        &format!("reading {}", args.data.display()),
        read_dataset(&args.data),
    )?;
    let opts = TrainOptions {
        seed: resolved.seed,
        resolution: resolved.resolution,
        accelerations: resolved.accelerations.clone(),
        init: InitMode::IdentityCouplings,
        guard: resolved.guard,
        max_steps: args.max_steps,
        checkpoint_path: Some(args.out.clone()),
        checkpoint_every: resolved.checkpoint_every,
        resume_from: args.resume.clone(),
    };
    let outcome = lib(
        "train",
        run_training(&records, &resolved.model, &resolved.optim, &opts),
    )?;
    for (epoch, lr) in &outcome.lr_by_epoch {
        println!("epoch={epoch} lr={lr}");
    }
    if let Some(log) = &args.log {
        append_rows(log, &outcome.rows)?;
    }
    println!(
        "trained {} steps ({} epochs complete); checkpoint {}",
        outcome.global_step,
        outcome.epochs_completed,
        args.out.display()
    );
    Ok(())
}

fn append_rows(path: &Path, rows: &[MetricsRow]) -> CmdResult {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Failure::Io(format!("log {}: {e}", path.display())))?;
    let mut text = String::new();
    for row in rows {
        text.push_str(&row.to_line());
        text.push('\n');
    }
    file.write_all(text.as_bytes())
        .map_err(|e| Failure::Io(format!("log {}: {e}", path.display())))
}

/// Loads a checkpoint and resolves its model against the stored parameters.
fn open_checkpoint(
    path: &Path,
) -> Result<
    (
        irim::nn::ParamStore,
        BTreeMap<String, String>,
        irim::model::Model,
    ),
    Failure,
> {
    let (store, map) = lib(&format!("reading {}", path.display()), load_checkpoint(path))?;
    let cfg = lib("checkpoint config", ModelConfig::from_config_map(&map))?;
    let model = lib("checkpoint config", bind_model(&cfg, &store))?;
    Ok((store, map, model))
}

/// The reconstruction resolution, from the flag if given, otherwise from
/// the checkpoint's recorded training resolution.
fn pick_resolution(
    flag: Option<usize>,
    map: &BTreeMap<String, String>,
) -> Result<usize, Failure> {
    if let Some(resolution) = flag {
        return Ok(resolution);
    }
    match map.get("train.resolution") {
        Some(text) => text.parse().map_err(|_| {
            Failure::Usage(format!("checkpoint train.resolution is invalid: {text}"))
        }),
        None => Err(Failure::Usage(
            "checkpoint lacks train.resolution; pass --resolution".into(),
        )),
    }
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// Dataset path
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint path
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for PGM images
    #[arg(long)]
    pub out: PathBuf,
    /// Acceleration factor
    #[arg(long, default_value_t = 4)]
    pub accel: u32,
    /// Seed for the per-record sampling masks
    #[arg(long, default_value_t = 0)]
    pub mask_seed: u64,
    /// Reconstruction resolution; defaults to the checkpoint's
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Only reconstruct the first N records
    #[arg(long)]
    pub count: Option<usize>,
    /// Metrics log to append rows to
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn reconstruct(args: ReconstructArgs) -> CmdResult {
    let records = lib(
        &format!("reading {}", args.data.display()),
        read_dataset(&args.data),
    )?;
    let (store, map, model) = open_checkpoint(&args.checkpoint)?;
    let resolution = pick_resolution(args.resolution, &map)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Io(format!("creating {}: {e}", args.out.display())))?;

    let root = Rng::new(args.mask_seed);
    let limit = args.count.unwrap_or(records.len()).min(records.len());
    let mut rows = Vec::new();
    for (i, record) in records.iter().take(limit).enumerate() {
        let mask_seed = root.derive("reconstruct-mask", &[i as u64]).next_u64();
        let mask = lib("reconstruct", make_mask(resolution, args.accel, mask_seed))?;
        let d = lib("reconstruct", masked_kspace(record, resolution, &mask))?;
        let target = lib("reconstruct", record_target(record, resolution))?;
        let (m_hat, _) = lib("reconstruct", run_model(&d, &mask, &record.meta, &model, &store))?;
        let zero_filled = rss(&lib("reconstruct", zero_filled_init(&d, &mask))?);

        for (suffix, image) in [
            ("zero-filled", &zero_filled),
            ("model", &m_hat),
            ("target", &target),
        ] {
            let path = args.out.join(format!("rec{i:03}-{suffix}.pgm"));
            lib(&format!("writing {}", path.display()), write_pgm(image, &path))?;
        }
        for (split, image) in [("reconstruct", &m_hat), ("reconstruct-zero-filled", &zero_filled)]
        {
            let (nmse, psnr, ssim) = lib("reconstruct", score(image, &target))?;
            let row = MetricsRow {
                epoch: 0,
                step: i,
                split: split.to_string(),
                accel: args.accel,
                nmse,
                psnr,
                ssim,
            };
            println!("{}", row.to_line());
            rows.push(row);
        }
    }
    if let Some(log) = &args.log {
        append_rows(log, &rows)?;
    }
    println!("wrote {} images to {}", 3 * limit, args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset path
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint path
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Acceleration factors to score (repeatable)
    #[arg(long = "accel", default_values_t = vec![4u32, 8])]
    pub accels: Vec<u32>,
    /// Evaluation resolution; defaults to the checkpoint's
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Metrics log to append rows to
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Split name used in appended log rows
    #[arg(long, default_value = "val")]
    pub split: String,
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let records = lib(
        &format!("reading {}", args.data.display()),
        read_dataset(&args.data),
    )?;
    let (store, map, model) = open_checkpoint(&args.checkpoint)?;
    let resolution = pick_resolution(args.resolution, &map)?;
    let epoch = map
        .get("train.epoch")
        .and_then(|text| text.parse().ok())
        .unwrap_or(0);

    let mut rows = Vec::new();
    for &accel in &args.accels {
        let report = lib(
            "evaluate",
            score_dataset(&records, &model, &store, accel, resolution),
        )?;
        println!("acceleration {accel}x");
        println!("{report}");
        rows.extend(report.to_metrics_rows(epoch, &args.split));
    }
    if let Some(log) = &args.log {
        append_rows(log, &rows)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Plane {
    /// Noiseless single-coil magnitude target
    Esc,
    /// Root-sum-of-squares target over coils
    Rss,
    /// RSS of the inverse transform of the stored noisy k-space
    Full,
}

#[derive(Args)]
pub struct ExportArgs {
    /// Dataset path
    #[arg(long)]
    pub data: PathBuf,
    /// Record index
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Which magnitude image to export
    #[arg(long, value_enum, default_value_t = Plane::Rss)]
    pub plane: Plane,
    /// Output PGM path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export_image(args: ExportArgs) -> CmdResult {
    let records = lib(
        &format!("reading {}", args.data.display()),
        read_dataset(&args.data),
    )?;
    let Some(record) = records.get(args.index) else {
        return Err(Failure::Usage(format!(
            "--index {} out of range for {} records",
            args.index,
            records.len()
        )));
    };
    let image = match args.plane {
        Plane::Esc => record.target_esc.clone(),
        Plane::Rss => record.target_rss.clone(),
        Plane::Full => {
            let coils: Vec<_> = record.kdata.coils().iter().map(ifft2c).collect();
            rss(&lib("export-image", CoilStack::new(coils))?)
        }
    };
    lib(
        &format!("writing {}", args.out.display()),
        write_pgm(&image, &args.out),
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}
