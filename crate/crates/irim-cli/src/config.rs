//! Flat key=value run configuration: file parsing, precedence between
//! preset defaults, config file, and flags, and the resolved-config listing
//! every training run prints.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use irim::model::ModelConfig;
use irim::train::{OptimConfig, SsimConfig};

use crate::Failure;

/// Every training parameter after precedence resolution, plus the full
/// key=value map it came from for logging.
pub struct Resolved {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub resolution: usize,
    pub accelerations: Vec<u32>,
    pub guard: Option<f64>,
    pub checkpoint_every: usize,
    pub map: BTreeMap<String, String>,
}

/// Flag-level overrides that outrank both preset defaults and the config
/// file. `None` means the flag was not given.
#[derive(Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub accelerations: Option<String>,
    pub guard: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

fn known_key(key: &str) -> bool {
    matches!(
        key,
        "model.steps"
            | "model.scales"
            | "model.latent_channels"
            | "model.layers_per_block"
            | "model.channels_per_scale"
            | "model.coil_count"
            | "model.shared_weights"
            | "optim.lr0"
            | "optim.beta1"
            | "optim.beta2"
            | "optim.eps"
            | "optim.decay_every"
            | "optim.batch_size"
            | "optim.epochs"
            | "train.seed"
            | "train.resolution"
            | "train.accelerations"
            | "train.guard"
            | "train.checkpoint_every"
    )
}

/// Reads a config file of `key=value` lines. Blank lines and `#` comments
/// are skipped; keys outside the schema are errors.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!(
                "config {} line {}: expected key=value, got {raw:?}",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim();
        if !known_key(key) {
            return Err(Failure::Usage(format!(
                "config {} line {}: unknown key {key}",
                path.display(),
                lineno + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, Failure> {
    let text = &map[key];
    text.parse()
        .map_err(|_| Failure::Usage(format!("bad value for {key}: {text}")))
}

/// Merges preset defaults, an optional config file, and flag overrides in
/// that precedence order, then parses the result into typed configs.
pub fn resolve(
    base_model: &ModelConfig,
    base_resolution: usize,
    file: Option<&Path>,
    over: &Overrides,
) -> Result<Resolved, Failure> {
    let mut map = base_model.to_config_map();
    let optim_default = OptimConfig::default();
    map.insert("optim.lr0".into(), optim_default.lr0.to_string());
    map.insert("optim.beta1".into(), optim_default.beta1.to_string());
    map.insert("optim.beta2".into(), optim_default.beta2.to_string());
    map.insert("optim.eps".into(), optim_default.eps.to_string());
    map.insert(
        "optim.decay_every".into(),
        optim_default.decay_every.to_string(),
    );
    map.insert(
        "optim.batch_size".into(),
        optim_default.batch_size.to_string(),
    );
    map.insert("optim.epochs".into(), optim_default.epochs.to_string());
    map.insert("train.seed".into(), "0".into());
    map.insert("train.resolution".into(), base_resolution.to_string());
    map.insert("train.accelerations".into(), "4,8".into());
    map.insert("train.guard".into(), "off".into());
    map.insert("train.checkpoint_every".into(), "1".into());

    if let Some(path) = file {
        for (key, value) in parse_config_file(path)? {
            map.insert(key, value);
        }
    }
    if let Some(v) = over.seed {
        map.insert("train.seed".into(), v.to_string());
    }
    if let Some(v) = over.resolution {
        map.insert("train.resolution".into(), v.to_string());
    }
    if let Some(v) = over.epochs {
        map.insert("optim.epochs".into(), v.to_string());
    }
    if let Some(v) = over.batch_size {
        map.insert("optim.batch_size".into(), v.to_string());
    }
    if let Some(v) = over.lr {
        map.insert("optim.lr0".into(), v.to_string());
    }
    if let Some(v) = &over.accelerations {
        map.insert("train.accelerations".into(), v.clone());
    }
    if let Some(v) = over.guard {
        map.insert("train.guard".into(), v.to_string());
    }
    if let Some(v) = over.checkpoint_every {
        map.insert("train.checkpoint_every".into(), v.to_string());
    }

    let model =
        ModelConfig::from_config_map(&map).map_err(|e| Failure::Usage(e.to_string()))?;
    let optim = OptimConfig {
        lr0: parse_value(&map, "optim.lr0")?,
        beta1: parse_value(&map, "optim.beta1")?,
        beta2: parse_value(&map, "optim.beta2")?,
        eps: parse_value(&map, "optim.eps")?,
        decay_every: parse_value(&map, "optim.decay_every")?,
        batch_size: parse_value(&map, "optim.batch_size")?,
        epochs: parse_value(&map, "optim.epochs")?,
    };
    let accelerations = map["train.accelerations"]
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<u32>().map_err(|_| {
                Failure::Usage(format!("bad value for train.accelerations: {s}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let guard = match map["train.guard"].as_str() {
        "off" => None,
        text => Some(text.parse::<f64>().map_err(|_| {
            Failure::Usage(format!("bad value for train.guard: {text} (number or \"off\")"))
        })?),
    };

    let mut map = map;
    let ssim = SsimConfig::with_data_range(1.0);
    map.insert("ssim.window".into(), ssim.window.to_string());
    map.insert("ssim.k1".into(), ssim.k1.to_string());
    map.insert("ssim.k2".into(), ssim.k2.to_string());

    Ok(Resolved {
        model,
        optim,
        seed: parse_value(&map, "train.seed")?,
        resolution: parse_value(&map, "train.resolution")?,
        accelerations,
        guard,
        checkpoint_every: parse_value(&map, "train.checkpoint_every")?,
        map,
    })
}

/// Prints the fully resolved configuration, one sorted key=value per line.
pub fn print_resolved(map: &BTreeMap<String, String>) {
    println!("resolved-config:");
    for (key, value) in map {
        println!("  {key}={value}");
    }
}
