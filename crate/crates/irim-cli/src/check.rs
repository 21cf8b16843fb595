//! The `check` subcommand: measures the library's core invariants on the
//! live build and fails loudly when any of them drifts.

use clap::{Args, ValueEnum};

use irim::backprop::{
    backward_reversible, backward_stored, finite_diff_check, random_probes, BackwardOptions,
};
use irim::model::{
    build_model, init_state, run_model, step_forward, step_inverse, InitMode, Model, ModelConfig,
};
use irim::mri::{
    adjoint_ah, forward_a, make_mask, AcquisitionMeta, CoilStack, Complex64, ComplexImage,
    SamplingMask,
};
use irim::nn::{FeatureMap, ParamStore};
use irim::phantom::rss;
use irim::rng::Rng;
use irim::train::{ssim, SsimConfig};

use crate::{CmdResult, Failure};

#[derive(Args)]
pub struct CheckArgs {
    /// Deliberately corrupt one oracle to prove the harness can fail
    #[arg(long, value_enum)]
    pub sabotage: Option<Sabotage>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sabotage {
    /// Tamper with the stored-activation oracle's gradients
    StoreGrad,
}

struct Outcome {
    name: &'static str,
    detail: String,
    extra: Vec<String>,
    pass: bool,
}

fn property(
    name: &'static str,
    body: impl FnOnce() -> irim::Result<(String, Vec<String>, bool)>,
) -> Outcome {
    match body() {
        Ok((detail, extra, pass)) => Outcome {
            name,
            detail,
            extra,
            pass,
        },
        Err(err) => Outcome {
            name,
            detail: format!("errored: {err}"),
            extra: Vec::new(),
            pass: false,
        },
    }
}

pub fn run(args: CheckArgs) -> CmdResult {
    let results = [
        property("adjointness", adjointness),
        property("invertibility", invertibility),
        property("gradient-equivalence", || {
            gradient_equivalence(args.sabotage)
        }),
        property("finite-differences", finite_differences),
        property("memory-counters", memory_counters),
    ];
    let mut failed = 0;
    for result in &results {
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("check {}: {} {}", result.name, result.detail, verdict);
        for line in &result.extra {
            println!("  {line}");
        }
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!(
            "{failed} of {} properties failed",
            results.len()
        )));
    }
    println!("check result: all {} properties hold", results.len());
    Ok(())
}

fn random_image(height: usize, width: usize, rng: &mut Rng) -> ComplexImage {
    let data = (0..height * width)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    ComplexImage::new(height, width, data).unwrap()
}

fn random_stack(coils: usize, height: usize, width: usize, rng: &mut Rng) -> CoilStack {
    let images = (0..coils).map(|_| random_image(height, width, rng)).collect();
    CoilStack::new(images).unwrap()
}

/// <A x, y> must equal <x, Aᴴ y> for random complex inputs and masks.
fn adjointness() -> irim::Result<(String, Vec<String>, bool)> {
    let mut rng = Rng::new(0x41444a);
    let mut worst = 0.0f64;
    for &coils in &[1usize, 3, 15] {
        for _ in 0..20 {
            let (height, width) = (24, 32);
            let x = random_stack(coils, height, width, &mut rng);
            let y = random_stack(coils, height, width, &mut rng);
            let mask = make_mask(width, 4, rng.next_u64())?;
            let lhs = forward_a(&x, &mask)?.dot(&y);
            let rhs = x.dot(&adjoint_ah(&y, &mask)?);
            let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
            worst = worst.max((lhs - rhs).norm() / scale);
        }
    }
    let detail = format!("max_rel_err={worst:.3e} over K in {{1,3,15}}, 20 trials each");
    Ok((detail, Vec::new(), worst < 1e-10))
}

struct Fixture {
    model: Model,
    store: ParamStore,
    d: CoilStack,
    mask: SamplingMask,
    meta: AcquisitionMeta,
    target: FeatureMap,
}

fn fixture(cfg: &ModelConfig, size: usize, seed: u64) -> irim::Result<Fixture> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let model = build_model(cfg, &mut store, InitMode::FullRandom, rng.next_u64())?;
    let truth = random_stack(cfg.coil_count, size, size, &mut rng);
    let mask = make_mask(size, 4, rng.next_u64())?;
    let d = forward_a(&truth, &mask)?;
    let target = rss(&truth);
    let meta = AcquisitionMeta::from_one_hot_index(0, cfg.coil_count)?;
    Ok(Fixture {
        model,
        store,
        d,
        mask,
        meta,
        target,
    })
}

fn tiny_cfg(steps: usize) -> ModelConfig {
    ModelConfig {
        steps,
        scales: 1,
        latent_channels: 8,
        layers_per_block: 2,
        channels_per_scale: vec![4, 4],
        coil_count: 1,
        shared_weights: true,
    }
}

/// Running T steps forward and then T steps inverse must return to the
/// initial machine state up to double-precision roundoff.
fn invertibility() -> irim::Result<(String, Vec<String>, bool)> {
    let cfg = ModelConfig {
        steps: 8,
        scales: 3,
        latent_channels: 16,
        layers_per_block: 2,
        channels_per_scale: vec![16; 4],
        coil_count: 1,
        shared_weights: true,
    };
    let fx = fixture(&cfg, 16, 0x494e56)?;
    let mut state = init_state(&fx.d, &fx.mask, &fx.meta, &cfg)?;
    let start = state.clone();
    for t in 0..cfg.steps {
        step_forward(&mut state, &fx.d, &fx.mask, fx.model.plan(t), &fx.store)?;
    }
    for t in (0..cfg.steps).rev() {
        step_inverse(&mut state, &fx.d, &fx.mask, fx.model.plan(t), &fx.store)?;
    }
    let err = state.map.max_abs_diff(&start.map);
    let detail = format!("round_trip_max_abs_err={err:.3e} at T=8, 3 scales");
    Ok((detail, Vec::new(), err < 1e-8))
}

/// Both reverse-mode engines must produce the same parameter gradients.
fn gradient_equivalence(
    sabotage: Option<Sabotage>,
) -> irim::Result<(String, Vec<String>, bool)> {
    let cfg = tiny_cfg(3);
    let fx = fixture(&cfg, 16, 0x475241)?;
    let initial = init_state(&fx.d, &fx.mask, &fx.meta, &cfg)?;
    let (_, final_state) = run_model(&fx.d, &fx.mask, &fx.meta, &fx.model, &fx.store)?;

    let mut reversible_store = fx.store.clone();
    backward_reversible(
        &final_state,
        &fx.target,
        &fx.d,
        &fx.mask,
        &fx.model,
        &mut reversible_store,
        &BackwardOptions::default(),
    )?;
    let mut stored_store = fx.store.clone();
    backward_stored(
        &initial,
        &fx.target,
        &fx.d,
        &fx.mask,
        &fx.model,
        &mut stored_store,
    )?;
    if let Some(Sabotage::StoreGrad) = sabotage {
        let id = stored_store.ids().next().unwrap();
        let mut bump = vec![0.0; stored_store.grad(id).len()];
        bump[0] = 1.0;
        stored_store.add_grad(id, &bump);
    }

    let ids: Vec<_> = reversible_store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let a = reversible_store.grad(id);
        let b = stored_store.grad(id);
        let scale = a
            .iter()
            .chain(b)
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
            .max(1e-12);
        for (&ga, &gb) in a.iter().zip(b) {
            worst = worst.max((ga - gb).abs() / scale);
        }
    }
    let mut detail = format!("max_rel_dev={worst:.3e} reversible vs stored");
    if sabotage.is_some() {
        detail.push_str(" (sabotaged store-grad)");
    }
    Ok((detail, Vec::new(), worst < 1e-6))
}

/// Analytic gradients of the full loss pipeline must agree with central
/// finite differences.
fn finite_differences() -> irim::Result<(String, Vec<String>, bool)> {
    let cfg = tiny_cfg(2);
    let mut fx = fixture(&cfg, 16, 0x464421)?;
    let (_, final_state) = run_model(&fx.d, &fx.mask, &fx.meta, &fx.model, &fx.store)?;
    backward_reversible(
        &final_state,
        &fx.target,
        &fx.d,
        &fx.mask,
        &fx.model,
        &mut fx.store,
        &BackwardOptions::default(),
    )?;
    let mut rng = Rng::new(0x464422);
    let probes = random_probes(&fx.store, 5, &mut rng);
    let (model, d, mask, meta, target) = (&fx.model, &fx.d, &fx.mask, &fx.meta, &fx.target);
    let ssim_cfg = SsimConfig::for_target(target)?;
    let report = finite_diff_check(&mut fx.store, &probes, 1e-6, |store| {
        let (m_hat, _) = run_model(d, mask, meta, model, store)?;
        Ok(-ssim(&m_hat, target, &ssim_cfg)?)
    })?;
    let extra = format!("{report}").lines().map(str::to_string).collect();
    let detail = format!("max_rel_err={:.3e} over 5 probes, h=1e-6", report.max_rel_err);
    Ok((detail, extra, report.max_rel_err < 1e-5))
}

/// The reversible engine's activation cache must stay constant in T while
/// the stored oracle's grows with it.
fn memory_counters() -> irim::Result<(String, Vec<String>, bool)> {
    let mut extra = Vec::new();
    let mut reversible_peaks = Vec::new();
    let mut stored_peaks = Vec::new();
    for &steps in &[2usize, 16] {
        let cfg = tiny_cfg(steps);
        let fx = fixture(&cfg, 16, 0x4d454d + steps as u64)?;
        let initial = init_state(&fx.d, &fx.mask, &fx.meta, &cfg)?;
        let (_, final_state) = run_model(&fx.d, &fx.mask, &fx.meta, &fx.model, &fx.store)?;

        let mut reversible_store = fx.store.clone();
        let guarded = BackwardOptions { guard: Some(1e-6) };
        let reversible = backward_reversible(
            &final_state,
            &fx.target,
            &fx.d,
            &fx.mask,
            &fx.model,
            &mut reversible_store,
            &guarded,
        )?;
        let mut stored_store = fx.store.clone();
        let stored = backward_stored(
            &initial,
            &fx.target,
            &fx.d,
            &fx.mask,
            &fx.model,
            &mut stored_store,
        )?;
        extra.push(format!(
            "reversible.T{steps}.peak_cached_states={}",
            reversible.peak_cached_states
        ));
        extra.push(format!(
            "reversible.T{steps}.recompute_count={}",
            reversible.recompute_count
        ));
        extra.push(format!(
            "stored.T{steps}.peak_cached_states={}",
            stored.peak_cached_states
        ));
        reversible_peaks.push(reversible.peak_cached_states);
        stored_peaks.push(stored.peak_cached_states);
    }
    let pass = reversible_peaks.iter().all(|&p| p <= 3)
        && reversible_peaks[0] == reversible_peaks[1]
        && stored_peaks[1] > stored_peaks[0];
    let detail = format!(
        "reversible peaks {:?} constant, stored peaks {:?} growing",
        reversible_peaks, stored_peaks
    );
    Ok((detail, extra, pass))
}
