//! Model architecture configuration and the named presets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture knobs for the invertible machine. Spatial size is not part
/// of the model: every layer is shape-polymorphic, so one checkpoint serves
/// any input whose dims divide by 2^scales.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of update steps T.
    pub steps: usize,
    /// Down-sampling blocks per step (each halves both spatial dims).
    pub scales: usize,
    /// Latent channels D; the first 8 carry the one-hot meta block.
    pub latent_channels: usize,
    /// Conv layers inside each coupling's residual network.
    pub layers_per_block: usize,
    /// Residual hidden width at each scale depth (index 0 = full resolution,
    /// length scales + 1).
    pub channels_per_scale: Vec<usize>,
    /// Coils K; the machine state carries 2K estimate channels.
    pub coil_count: usize,
    /// One parameter set reused by all T steps (recurrent) vs per-step sets.
    pub shared_weights: bool,
}

impl ModelConfig {
    pub fn desk_single() -> Self {
        ModelConfig {
            steps: 4,
            scales: 2,
            latent_channels: 16,
            layers_per_block: 2,
            channels_per_scale: vec![16, 16, 16],
            coil_count: 1,
            shared_weights: true,
        }
    }

    pub fn desk_multi() -> Self {
        ModelConfig {
            coil_count: 4,
            ..Self::desk_single()
        }
    }

    pub fn paper_single() -> Self {
        ModelConfig {
            steps: 8,
            scales: 12,
            latent_channels: 64,
            layers_per_block: 5,
            channels_per_scale: vec![64; 13],
            coil_count: 1,
            shared_weights: true,
        }
    }

    pub fn paper_multi() -> Self {
        ModelConfig {
            latent_channels: 96,
            channels_per_scale: vec![96; 13],
            coil_count: 15,
            ..Self::paper_single()
        }
    }

    /// Total machine-state channels 2K + D at full resolution.
    pub fn state_channels(&self) -> usize {
        2 * self.coil_count + self.latent_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.scales == 0 {
            return Err(Error::Config("scales must be >= 1".into()));
        }
        if self.coil_count == 0 {
            return Err(Error::Config("coil_count must be >= 1".into()));
        }
        if self.latent_channels < 8 {
            return Err(Error::Config(format!(
                "latent_channels {} < 8 (the one-hot block needs 8)",
                self.latent_channels
            )));
        }
        if self.latent_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "latent_channels {} must be even for channel splits",
                self.latent_channels
            )));
        }
        if self.layers_per_block == 0 {
            return Err(Error::Config("layers_per_block must be >= 1".into()));
        }
        if self.channels_per_scale.len() != self.scales + 1 {
            return Err(Error::Config(format!(
                "channels_per_scale has {} entries, need scales + 1 = {}",
                self.channels_per_scale.len(),
                self.scales + 1
            )));
        }
        if self.channels_per_scale.iter().any(|&c| c == 0) {
            return Err(Error::Config("channels_per_scale entries must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial dims must divide by 2^scales for the multiscale stack.
    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let divisor = 1usize << self.scales;
        if height % divisor != 0 || width % divisor != 0 {
            return Err(Error::Config(format!(
                "spatial dims {height}x{width} not divisible by 2^scales = {divisor}"
            )));
        }
        Ok(())
    }

    pub fn to_config_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("model.steps".into(), self.steps.to_string());
        map.insert("model.scales".into(), self.scales.to_string());
        map.insert(
            "model.latent_channels".into(),
            self.latent_channels.to_string(),
        );
        map.insert(
            "model.layers_per_block".into(),
            self.layers_per_block.to_string(),
        );
        map.insert(
            "model.channels_per_scale".into(),
            self.channels_per_scale
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("model.coil_count".into(), self.coil_count.to_string());
        map.insert(
            "model.shared_weights".into(),
            self.shared_weights.to_string(),
        );
        map
    }

    pub fn from_config_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            map.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing config key {key}")))
        }
        fn parse<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {s}")))
        }
        let channels_per_scale = get(map, "model.channels_per_scale")?
            .split(',')
            .map(|s| parse("model.channels_per_scale", s))
            .collect::<Result<Vec<usize>>>()?;
        let cfg = ModelConfig {
            steps: parse("model.steps", get(map, "model.steps")?)?,
            scales: parse("model.scales", get(map, "model.scales")?)?,
            latent_channels: parse(
                "model.latent_channels",
                get(map, "model.latent_channels")?,
            )?,
            layers_per_block: parse(
                "model.layers_per_block",
                get(map, "model.layers_per_block")?,
            )?,
            channels_per_scale,
            coil_count: parse("model.coil_count", get(map, "model.coil_count")?)?,
            shared_weights: parse("model.shared_weights", get(map, "model.shared_weights")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk_single().validate().unwrap();
        ModelConfig::desk_multi().validate().unwrap();
        ModelConfig::paper_single().validate().unwrap();
        ModelConfig::paper_multi().validate().unwrap();
    }

    #[test]
    fn paper_presets_pin_published_constants() {
        let single = ModelConfig::paper_single();
        assert_eq!(single.steps, 8);
        assert_eq!(single.scales, 12);
        assert_eq!(single.latent_channels, 64);
        assert_eq!(single.coil_count, 1);
        let multi = ModelConfig::paper_multi();
        assert_eq!(multi.latent_channels, 96);
        assert_eq!(multi.coil_count, 15);
        assert_eq!(multi.layers_per_block, 5);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::desk_single();
        cfg.latent_channels = 6;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::desk_single();
        cfg.latent_channels = 9;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::desk_single();
        cfg.channels_per_scale = vec![16, 16];
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::desk_single();
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spatial_divisibility_enforced() {
        let cfg = ModelConfig::desk_single();
        cfg.check_spatial(64, 64).unwrap();
        assert!(cfg.check_spatial(64, 66).is_err());
        let paper = ModelConfig::paper_multi();
        assert!(paper.check_spatial(368, 368).is_err());
    }

    #[test]
    fn config_map_round_trip() {
        for cfg in [
            ModelConfig::desk_single(),
            ModelConfig::desk_multi(),
            ModelConfig::paper_multi(),
        ] {
            let map = cfg.to_config_map();
            let back = ModelConfig::from_config_map(&map).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
