//! The invertible recurrent inference machine: state initialization, T
//! invertible update steps conditioned on the data-consistency gradient, a
//! non-invertible output head, and magnitude extraction.

pub mod config;
pub mod residual;
pub mod state;
pub mod step;

pub use config::ModelConfig;
pub use residual::{ConvSpec, ResidualSpec, ResidualTape};
pub use state::{
    channels_to_image, channels_to_stack, image_to_channels, init_state, stack_to_channels,
    MachineState,
};
pub use step::{
    aha_vjp, build_step_plan, couple_forward, couple_inverse, dc_condition, op_forward,
    op_inverse, step_forward, step_inverse, CouplingSpec, MicroOp, StepPlan, KERNEL,
};

use crate::error::{Error, Result};
use crate::mri::{AcquisitionMeta, CoilStack, ComplexImage, SamplingMask};
use crate::nn::{FeatureMap, ParamStore};
use crate::rng::Rng;

pub const HEAD_LAYERS: usize = 2;

/// Whether couplings start as exact identities (zeroed final residual
/// layers) or fully random. The head is standard-initialized either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    IdentityCouplings,
    FullRandom,
}

/// A built model: per-step plans (one shared plan when weights are tied)
/// plus the output head. All parameters live in the accompanying store.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub step_plans: Vec<StepPlan>,
    pub head: ResidualSpec,
}

impl Model {
    /// The plan driving step `t` (0-based).
    pub fn plan(&self, t: usize) -> &StepPlan {
        debug_assert!(t < self.cfg.steps);
        if self.cfg.shared_weights {
            &self.step_plans[0]
        } else {
            &self.step_plans[t]
        }
    }
}

pub fn build_model(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    init: InitMode,
    seed: u64,
) -> Result<Model> {
    cfg.validate()?;
    let rng = Rng::new(seed);
    let zero_final = init == InitMode::IdentityCouplings;
    let plan_count = if cfg.shared_weights { 1 } else { cfg.steps };
    let mut step_plans = Vec::with_capacity(plan_count);
    for t in 0..plan_count {
        let prefix = if cfg.shared_weights {
            "step".to_string()
        } else {
            format!("step{t}")
        };
        step_plans.push(build_step_plan(cfg, store, &rng, &prefix, zero_final)?);
    }
    let head = ResidualSpec::build(
        store,
        &rng,
        "head",
        cfg.state_channels(),
        cfg.channels_per_scale[0],
        2,
        HEAD_LAYERS,
        KERNEL,
        false,
    )?;
    Ok(Model {
        cfg: cfg.clone(),
        step_plans,
        head,
    })
}

/// Resolves a model structure against a store that already holds every
/// parameter, e.g. one loaded from a checkpoint. The store must contain
/// exactly the tensors a fresh build would register, in the same order.
pub fn bind_model(cfg: &ModelConfig, store: &ParamStore) -> Result<Model> {
    let mut scratch = ParamStore::new();
    let model = build_model(cfg, &mut scratch, InitMode::IdentityCouplings, 0)?;
    if scratch.tensor_count() != store.tensor_count() {
        return Err(Error::Config(format!(
            "store holds {} tensors, this config needs {}",
            store.tensor_count(),
            scratch.tensor_count()
        )));
    }
    for (want, have) in scratch.ids().zip(store.ids()) {
        if scratch.name(want) != store.name(have) || scratch.dims(want) != store.dims(have) {
            return Err(Error::Config(format!(
                "store tensor {} {:?} does not match expected {} {:?}",
                store.name(have),
                store.dims(have),
                scratch.name(want),
                scratch.dims(want)
            )));
        }
    }
    Ok(model)
}

/// f_θ: all 2K+D state channels → one complex image.
pub fn output_head(state: &MachineState, head: &ResidualSpec, store: &ParamStore) -> Result<ComplexImage> {
    let out = head.forward(&state.map, store)?;
    Ok(channels_to_image(&out))
}

/// m̂ = |p̂| as a single-channel map.
pub fn magnitude(p: &ComplexImage) -> FeatureMap {
    FeatureMap::new(1, p.height, p.width, p.magnitude()).unwrap()
}

/// Pulls a cotangent on |p̂| back to the 2-channel real representation of
/// p̂. d|z|/dre = re/|z|, d|z|/dim = im/|z|; the subgradient at z = 0 is 0.
pub fn magnitude_backward(p: &ComplexImage, g_mag: &FeatureMap) -> FeatureMap {
    debug_assert_eq!(g_mag.channels, 1);
    debug_assert_eq!((g_mag.height, g_mag.width), (p.height, p.width));
    let n = p.height * p.width;
    let mut out = FeatureMap::zeros(2, p.height, p.width);
    for (j, z) in p.data.iter().enumerate() {
        let m = z.norm();
        if m > 0.0 {
            let g = g_mag.data[j] / m;
            out.data[j] = g * z.re;
            out.data[n + j] = g * z.im;
        }
    }
    out
}

/// Full inference: init → T steps → head → magnitude. The final state is
/// returned alongside m̂ so a reverse-mode pass can start from it.
pub fn run_model(
    d: &CoilStack,
    mask: &SamplingMask,
    meta: &AcquisitionMeta,
    model: &Model,
    store: &ParamStore,
) -> Result<(FeatureMap, MachineState)> {
    model.cfg.check_spatial(d.height(), d.width())?;
    let mut state = init_state(d, mask, meta, &model.cfg)?;
    for t in 0..model.cfg.steps {
        step_forward(&mut state, d, mask, model.plan(t), store)?;
    }
    let p_hat = output_head(&state, &model.head, store)?;
    Ok((magnitude(&p_hat), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{forward_a, make_mask, zero_filled_init, FieldStrength};
    use num_complex::Complex64;

    fn desk_cfg() -> ModelConfig {
        ModelConfig {
            steps: 3,
            scales: 2,
            latent_channels: 10,
            layers_per_block: 2,
            channels_per_scale: vec![6; 3],
            coil_count: 1,
            shared_weights: true,
        }
    }

    fn instance(cfg: &ModelConfig, h: usize, w: usize, seed: u64) -> (CoilStack, SamplingMask, AcquisitionMeta) {
        let mut rng = Rng::new(seed);
        let coils = (0..cfg.coil_count)
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
            .collect();
        let p = CoilStack::new(coils).unwrap();
        let mask = make_mask(w, 4, seed).unwrap();
        let d = forward_a(&p, &mask).unwrap();
        let meta = AcquisitionMeta {
            field_strength: FieldStrength::T1_5,
            fat_suppression: false,
            coil_count: cfg.coil_count,
        };
        (d, mask, meta)
    }

    #[test]
    fn magnitude_of_pythagorean_pixel() {
        let img = ComplexImage::new(1, 1, vec![Complex64::new(3.0, 4.0)]).unwrap();
        let m = magnitude(&img);
        assert_eq!(m.data, vec![5.0]);
    }

    #[test]
    fn magnitude_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let data: Vec<Complex64> = (0..12)
            .map(|_| Complex64::new(1.0 + rng.normal(), rng.normal()))
            .collect();
        let img = ComplexImage::new(3, 4, data).unwrap();
        let weights: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let loss = |p: &ComplexImage| -> f64 {
            magnitude(p)
                .data
                .iter()
                .zip(&weights)
                .map(|(m, w)| m * w)
                .sum()
        };
        let g_mag = FeatureMap::new(1, 3, 4, weights.clone()).unwrap();
        let g = magnitude_backward(&img, &g_mag);
        let h = 1e-6;
        for j in 0..12 {
            for part in 0..2 {
                let mut plus = img.clone();
                let mut minus = img.clone();
                if part == 0 {
                    plus.data[j].re += h;
                    minus.data[j].re -= h;
                } else {
                    plus.data[j].im += h;
                    minus.data[j].im -= h;
                }
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = g.data[part * 12 + j];
                let rel = (an - fd).abs() / fd.abs().max(1e-12);
                assert!(rel < 1e-6, "coord ({j},{part}): an {an} fd {fd}");
            }
        }
    }

    #[test]
    fn magnitude_subgradient_is_zero_at_origin() {
        let img = ComplexImage::zeros(2, 2);
        let g_mag = FeatureMap::new(1, 2, 2, vec![1.0; 4]).unwrap();
        let g = magnitude_backward(&img, &g_mag);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn run_model_is_deterministic() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 5).unwrap();
        let (d, mask, meta) = instance(&cfg, 16, 16, 50);
        let (m1, s1) = run_model(&d, &mask, &meta, &model, &store).unwrap();
        let (m2, s2) = run_model(&d, &mask, &meta, &model, &store).unwrap();
        assert_eq!(m1.data, m2.data);
        assert_eq!(s1.map.data, s2.map.data);
    }

    #[test]
    fn identity_init_reduces_to_head_of_initial_state() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::IdentityCouplings, 6).unwrap();
        let (d, mask, meta) = instance(&cfg, 16, 16, 60);
        let (m_hat, final_state) = run_model(&d, &mask, &meta, &model, &store).unwrap();

        let state0 = init_state(&d, &mask, &meta, &cfg).unwrap();
        assert_eq!(final_state.map.data, state0.map.data);
        let direct = magnitude(&output_head(&state0, &model.head, &store).unwrap());
        assert_eq!(m_hat.data, direct.data);

        let zf = stack_to_channels(&zero_filled_init(&d, &mask).unwrap());
        assert_eq!(state0.map.slice_channels(0, 2).data, zf.data);
    }

    #[test]
    fn meta_index_changes_the_reconstruction() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 7).unwrap();
        let (d, mask, meta) = instance(&cfg, 16, 16, 70);
        let other = AcquisitionMeta {
            field_strength: FieldStrength::T3,
            fat_suppression: true,
            coil_count: cfg.coil_count,
        };
        let (m1, _) = run_model(&d, &mask, &meta, &model, &store).unwrap();
        let (m2, _) = run_model(&d, &mask, &other, &model, &store).unwrap();
        assert!(m1.max_abs_diff(&m2) > 1e-9);
    }

    #[test]
    fn zero_state_zero_bias_head_gives_zero_image() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 8).unwrap();
        let state = MachineState {
            map: FeatureMap::zeros(cfg.state_channels(), 16, 16),
            coil_count: cfg.coil_count,
        };
        let img = output_head(&state, &model.head, &store).unwrap();
        assert!(img.data.iter().all(|z| z.norm() == 0.0));
        assert_eq!((img.height, img.width), (16, 16));
    }

    #[test]
    fn full_trajectory_inverts_at_scale_three() {
        let cfg = ModelConfig {
            steps: 8,
            scales: 3,
            latent_channels: 14,
            layers_per_block: 2,
            channels_per_scale: vec![8; 4],
            coil_count: 1,
            shared_weights: true,
        };
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 9).unwrap();
        let (d, mask, meta) = instance(&cfg, 16, 16, 90);
        let state0 = init_state(&d, &mask, &meta, &cfg).unwrap();
        let mut state = state0.clone();
        for t in 0..cfg.steps {
            step_forward(&mut state, &d, &mask, model.plan(t), &store).unwrap();
        }
        for t in (0..cfg.steps).rev() {
            step_inverse(&mut state, &d, &mask, model.plan(t), &store).unwrap();
        }
        let err = state.map.max_abs_diff(&state0.map);
        assert!(err < 1e-8, "drift {err}");
    }

    #[test]
    fn shapes_preserved_across_desk_configs() {
        for cfg in [ModelConfig::desk_single(), ModelConfig::desk_multi()] {
            let mut store = ParamStore::new();
            let model = build_model(&cfg, &mut store, InitMode::FullRandom, 11).unwrap();
            let (d, mask, meta) = instance(&cfg, 16, 16, 110);
            let mut state = init_state(&d, &mask, &meta, &cfg).unwrap();
            let shape = (state.map.channels, state.map.height, state.map.width);
            for t in 0..cfg.steps {
                step_forward(&mut state, &d, &mask, model.plan(t), &store).unwrap();
                assert_eq!(
                    (state.map.channels, state.map.height, state.map.width),
                    shape
                );
            }
        }
    }

    #[test]
    fn untied_weights_build_one_plan_per_step() {
        let mut cfg = desk_cfg();
        cfg.shared_weights = false;
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 13).unwrap();
        assert_eq!(model.step_plans.len(), cfg.steps);
        assert!(!std::ptr::eq(model.plan(0), model.plan(1)));
    }

    #[test]
    fn spatial_divisibility_enforced_at_run_time() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let model = build_model(&cfg, &mut store, InitMode::FullRandom, 14).unwrap();
        let (_, mask, meta) = instance(&cfg, 16, 16, 140);
        let d = CoilStack::zeros(1, 18, 16);
        assert!(run_model(&d, &mask, &meta, &model, &store).is_err());
    }

    #[test]
    fn bound_model_reproduces_the_original_output() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        let built = build_model(&cfg, &mut store, InitMode::FullRandom, 15).unwrap();
        let (d, mask, meta) = instance(&cfg, 16, 16, 150);
        let (m_built, _) = run_model(&d, &mask, &meta, &built, &store).unwrap();

        let bound = bind_model(&cfg, &store).unwrap();
        let (m_bound, _) = run_model(&d, &mask, &meta, &bound, &store).unwrap();
        assert_eq!(m_built.data, m_bound.data);
    }

    #[test]
    fn bind_rejects_a_store_for_a_different_config() {
        let cfg = desk_cfg();
        let mut store = ParamStore::new();
        build_model(&cfg, &mut store, InitMode::FullRandom, 16).unwrap();
        let mut other = cfg.clone();
        other.latent_channels = 12;
        assert!(bind_model(&other, &store).is_err());
    }
}
