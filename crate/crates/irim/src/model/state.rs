//! The machine state and its lossless complex/real reinterpretations.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mri::{zero_filled_init, AcquisitionMeta, CoilStack, ComplexImage, SamplingMask};
use crate::nn::FeatureMap;

use super::ModelConfig;

/// (pₜ, sₜ) as one channel-stacked feature map: channels 0..2K hold the coil
/// estimate (re, im interleaved per coil), channels 2K..2K+D the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    pub map: FeatureMap,
    pub coil_count: usize,
}

impl MachineState {
    pub fn estimate_channels(&self) -> usize {
        2 * self.coil_count
    }

    pub fn latent_channels(&self) -> usize {
        self.map.channels - self.estimate_channels()
    }

    /// The estimate slice as a coil stack (lossless reinterpretation).
    pub fn estimate(&self) -> CoilStack {
        channels_to_stack(&self.map, self.coil_count)
    }

    pub fn latent(&self) -> FeatureMap {
        self.map.slice_channels(self.estimate_channels(), self.map.channels)
    }
}

/// Coil stack → 2K real channels: coil k lands in channels 2k (re), 2k+1 (im).
pub fn stack_to_channels(stack: &CoilStack) -> FeatureMap {
    let (k, h, w) = (stack.coil_count(), stack.height(), stack.width());
    let mut map = FeatureMap::zeros(2 * k, h, w);
    for (ci, coil) in stack.coils().iter().enumerate() {
        let (re, rest) = map.data[2 * ci * h * w..].split_at_mut(h * w);
        let im = &mut rest[..h * w];
        for (j, z) in coil.data.iter().enumerate() {
            re[j] = z.re;
            im[j] = z.im;
        }
    }
    map
}

/// Inverse of [`stack_to_channels`]; reads the first 2K channels.
pub fn channels_to_stack(map: &FeatureMap, coil_count: usize) -> CoilStack {
    assert!(map.channels >= 2 * coil_count);
    let (h, w) = (map.height, map.width);
    let coils = (0..coil_count)
        .map(|ci| {
            let re = map.channel(2 * ci);
            let im = map.channel(2 * ci + 1);
            let data = re
                .iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect();
            ComplexImage::new(h, w, data).unwrap()
        })
        .collect();
    CoilStack::new(coils).unwrap()
}

/// Single complex image ↔ 2-channel map, the K = 1 special case used by the
/// output head.
pub fn image_to_channels(img: &ComplexImage) -> FeatureMap {
    stack_to_channels(&CoilStack::new(vec![img.clone()]).unwrap())
}

pub fn channels_to_image(map: &FeatureMap) -> ComplexImage {
    assert_eq!(map.channels, 2);
    let stack = channels_to_stack(map, 1);
    stack.coil(0).clone()
}

/// p₀ = Aᴴd as the estimate slice; latent = one-hot meta block over the
/// first 8 channels, zeros elsewhere.
pub fn init_state(
    d: &CoilStack,
    mask: &SamplingMask,
    meta: &AcquisitionMeta,
    cfg: &ModelConfig,
) -> Result<MachineState> {
    if d.coil_count() != cfg.coil_count {
        return Err(Error::ShapeMismatch {
            context: "init_state",
            expected: format!("{} coils", cfg.coil_count),
            got: format!("{}", d.coil_count()),
        });
    }
    let index = meta.one_hot_index();
    if index >= 8 {
        return Err(Error::Config(format!("one-hot index {index} out of [0, 7]")));
    }
    let estimate = stack_to_channels(&zero_filled_init(d, mask)?);
    let (h, w) = (estimate.height, estimate.width);
    let mut latent = FeatureMap::zeros(cfg.latent_channels, h, w);
    latent.channel_mut(index).fill(1.0);
    Ok(MachineState {
        map: FeatureMap::concat_channels(&[&estimate, &latent]),
        coil_count: cfg.coil_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{make_mask, forward_a, FieldStrength};
    use crate::rng::Rng;

    fn random_stack(k: usize, h: usize, w: usize, rng: &mut Rng) -> CoilStack {
        CoilStack::new(
            (0..k)
                .map(|_| {
                    ComplexImage::new(
                        h,
                        w,
                        (0..h * w)
                            .map(|_| Complex64::new(rng.normal(), rng.normal()))
                            .collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stack_channel_round_trip_is_bit_exact() {
        let mut rng = Rng::new(31);
        let stack = random_stack(3, 8, 8, &mut rng);
        let map = stack_to_channels(&stack);
        assert_eq!(map.channels, 6);
        let back = channels_to_stack(&map, 3);
        assert_eq!(back, stack);
        let map2 = stack_to_channels(&back);
        assert_eq!(map2, map);
    }

    #[test]
    fn init_places_one_hot_and_zero_fill() {
        let mut rng = Rng::new(32);
        let cfg = ModelConfig::desk_single();
        let p = random_stack(1, 16, 16, &mut rng);
        let mask = make_mask(16, 4, 9).unwrap();
        let d = forward_a(&p, &mask).unwrap();
        let meta = AcquisitionMeta {
            field_strength: FieldStrength::T1_5,
            fat_suppression: false,
            coil_count: 1,
        };
        let state = init_state(&d, &mask, &meta, &cfg).unwrap();
        assert_eq!(state.map.channels, cfg.state_channels());

        let zf = zero_filled_init(&d, &mask).unwrap();
        assert_eq!(state.estimate(), zf);

        let latent = state.latent();
        assert!(latent.channel(0).iter().all(|&v| v == 1.0));
        for c in 1..cfg.latent_channels {
            assert!(latent.channel(c).iter().all(|&v| v == 0.0), "channel {c}");
        }
        let total: f64 = latent.data.iter().sum();
        assert_eq!(total, (16 * 16) as f64);
    }

    #[test]
    fn init_one_hot_index_varies_with_meta() {
        let cfg = ModelConfig::desk_single();
        let d = CoilStack::zeros(1, 16, 16);
        let mask = make_mask(16, 4, 0).unwrap();
        let meta = AcquisitionMeta {
            field_strength: FieldStrength::T3,
            fat_suppression: true,
            coil_count: 1,
        };
        let state = init_state(&d, &mask, &meta, &cfg).unwrap();
        assert!(state.latent().channel(3).iter().all(|&v| v == 1.0));
        assert!(state
            .estimate()
            .coils()
            .iter()
            .all(|c| c.data.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn init_rejects_coil_mismatch() {
        let cfg = ModelConfig::desk_single();
        let d = CoilStack::zeros(2, 16, 16);
        let mask = make_mask(16, 4, 0).unwrap();
        let meta = AcquisitionMeta {
            field_strength: FieldStrength::T1_5,
            fat_suppression: false,
            coil_count: 2,
        };
        assert!(init_state(&d, &mask, &meta, &cfg).is_err());
    }
}
