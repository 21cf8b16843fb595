//! Reverse-mode gradients through the step trajectory. The reversible
//! engine never stores intermediate states: walking backwards it rebuilds
//! each micro-op's input by inverting the op, re-derives that op's local
//! tape, and backpropagates through it, keeping only the current state and
//! its cotangent alive (plus one snapshot while the drift guard replays a
//! step). A stored-activation engine with per-coupling snapshots serves as
//! the equivalence oracle and as the contrast case for the memory counters.

use crate::error::{Error, Result};
use crate::model::{
    aha_vjp, channels_to_image, channels_to_stack, magnitude, magnitude_backward, stack_to_channels,
    step_forward, step_inverse, CouplingSpec, MachineState, MicroOp, Model,
};
use crate::mri::{dc_gradient, CoilStack, SamplingMask};
use crate::nn::{depth_to_space, space_to_depth, FeatureMap, ParamId, ParamStore};
use crate::rng::Rng;
use crate::train::ssim::{ssim_with_grad, SsimConfig};

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    /// Per-step drift guard: after inverting a step, replay it forward and
    /// fail if the replay misses the step's incoming state by more than
    /// this. `None` skips the replay.
    pub guard: Option<f64>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions { guard: Some(1e-6) }
    }
}

/// What a backward pass did, besides filling the store's gradient
/// accumulators. `peak_cached_states` counts state-sized buffers alive at
/// once; `recompute_count` counts residual-network forward evaluations
/// performed after the forward pass ended.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub loss: f64,
    pub ssim: f64,
    pub recompute_count: usize,
    pub peak_cached_states: usize,
    pub initial_state_grad: FeatureMap,
}

/// Tracks how many state-sized buffers are alive; `peak` is the claim the
/// memory tests pin down.
struct StateBudget {
    live: usize,
    peak: usize,
}

impl StateBudget {
    fn new() -> Self {
        StateBudget { live: 0, peak: 0 }
    }

    fn acquire(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    fn release(&mut self, n: usize) {
        debug_assert!(self.live >= n);
        self.live -= n;
    }
}

/// ∇D of the estimate carried in the map's first 2K channels.
fn injection_cond(
    map: &FeatureMap,
    coil_count: usize,
    d: &CoilStack,
    mask: &SamplingMask,
) -> Result<FeatureMap> {
    let estimate = channels_to_stack(map, coil_count);
    Ok(stack_to_channels(&dc_gradient(d, mask, &estimate)?))
}

fn build_rin(
    map: &FeatureMap,
    spec: &CouplingSpec,
    cond: Option<&FeatureMap>,
) -> Result<FeatureMap> {
    let passive = map.slice_channels(spec.passive.start, spec.passive.end);
    match (spec.injects_gradient, cond) {
        (true, Some(c)) => Ok(FeatureMap::concat_channels(&[&passive, c])),
        (true, None) => Err(Error::MissingConditioning),
        (false, _) => Ok(passive),
    }
}

/// Routes the residual-input cotangent back onto the state cotangent: the
/// direct slot into the passive slice, plus (for injection couplings) the
/// conditioning path. ∇D is AᴴA·estimate − Aᴴd, complex-linear and
/// self-adjoint in the estimate, so its real-representation transpose is
/// AᴴA again.
fn scatter_rin_grad(
    g: &mut FeatureMap,
    spec: &CouplingSpec,
    g_rin: &FeatureMap,
    coil_count: usize,
    mask: &SamplingMask,
) -> Result<()> {
    let plane = g.plane();
    let passive_channels = spec.passive.end - spec.passive.start;
    let dst = &mut g.data[spec.passive.start * plane..spec.passive.end * plane];
    for (dv, sv) in dst.iter_mut().zip(&g_rin.data[..passive_channels * plane]) {
        *dv += sv;
    }
    if spec.injects_gradient {
        let g_cond = g_rin.slice_channels(passive_channels, g_rin.channels);
        let g_through_dc = aha_vjp(&g_cond, coil_count, mask)?;
        let dst = &mut g.data[spec.passive.start * plane..spec.passive.end * plane];
        for (dv, sv) in dst.iter_mut().zip(&g_through_dc.data) {
            *dv += sv;
        }
    }
    Ok(())
}

/// Taped residual evaluation, cotangent propagation, and parameter-gradient
/// accumulation for one coupling whose input-side map is `input_map`.
fn couple_backward(
    input_map: &FeatureMap,
    spec: &CouplingSpec,
    cond: Option<&FeatureMap>,
    g: &mut FeatureMap,
    coil_count: usize,
    mask: &SamplingMask,
    store: &mut ParamStore,
    recomputes: &mut usize,
) -> Result<FeatureMap> {
    let rin = build_rin(input_map, spec, cond)?;
    let (out, tape) = spec.residual.forward_tape(&rin, store)?;
    *recomputes += 1;
    let g_active = g.slice_channels(spec.active.start, spec.active.end);
    let g_rin = spec.residual.backward(&tape, &g_active, store)?;
    scatter_rin_grad(g, spec, &g_rin, coil_count, mask)?;
    Ok(out)
}

/// Seeds the backward pass: loss = −SSIM(m̂, target) with the data range
/// taken from the target, differentiated through magnitude and the output
/// head. Returns (loss, ssim, cotangent on the state map) and accumulates
/// head parameter gradients.
fn seed_from_loss(
    state: &MachineState,
    target: &FeatureMap,
    model: &Model,
    store: &mut ParamStore,
) -> Result<(f64, f64, FeatureMap)> {
    let (head_out, tape) = model.head.forward_tape(&state.map, store)?;
    let p_hat = channels_to_image(&head_out);
    let m_hat = magnitude(&p_hat);
    let cfg = SsimConfig::for_target(target)?;
    let (ssim_value, mut g_m) = ssim_with_grad(&m_hat, target, &cfg)?;
    g_m.scale(-1.0);
    let g_p = magnitude_backward(&p_hat, &g_m);
    let g_state = model.head.backward(&tape, &g_p, store)?;
    Ok((-ssim_value, ssim_value, g_state))
}

/// max |a − b|, with NaN propagated so the guard comparison fails on
/// non-finite reconstructions.
fn guard_residual(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let dv = (x - y).abs();
        if dv.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(dv);
    }
    worst
}

/// Gradients via inversion: for t = T..1, each micro-op of step t is undone
/// on the live state while its local backward runs, so the state always
/// holds the op's input by the time the cotangent update needs it.
pub fn backward_reversible(
    final_state: &MachineState,
    target: &FeatureMap,
    d: &CoilStack,
    mask: &SamplingMask,
    model: &Model,
    store: &mut ParamStore,
    opts: &BackwardOptions,
) -> Result<GradReport> {
    let mut budget = StateBudget::new();
    let mut recomputes = 0usize;
    let coils = final_state.coil_count;

    let mut state = final_state.clone();
    budget.acquire(1);
    let (loss, ssim_value, mut g) = seed_from_loss(&state, target, model, store)?;
    budget.acquire(1);

    for t in (0..model.cfg.steps).rev() {
        let plan = model.plan(t);
        let snapshot = if opts.guard.is_some() {
            budget.acquire(1);
            Some(state.map.clone())
        } else {
            None
        };

        for op in plan.ops.iter().rev() {
            match op {
                MicroOp::Space2Depth => {
                    state.map = depth_to_space(&state.map, 2)?;
                    g = depth_to_space(&g, 2)?;
                }
                MicroOp::Depth2Space => {
                    state.map = space_to_depth(&state.map, 2)?;
                    g = space_to_depth(&g, 2)?;
                }
                MicroOp::Couple(spec) => {
                    // The residual input depends only on the pass-through
                    // slice, identical on both sides, so one taped
                    // evaluation serves the inversion and the backward.
                    let cond = if spec.injects_gradient {
                        Some(injection_cond(&state.map, coils, d, mask)?)
                    } else {
                        None
                    };
                    let out = couple_backward(
                        &state.map,
                        spec,
                        cond.as_ref(),
                        &mut g,
                        coils,
                        mask,
                        store,
                        &mut recomputes,
                    )?;
                    let plane = state.map.plane();
                    let active =
                        &mut state.map.data[spec.active.start * plane..spec.active.end * plane];
                    for (dv, sv) in active.iter_mut().zip(&out.data) {
                        *dv -= sv;
                    }
                }
            }
        }

        if let (Some(guard), Some(snap)) = (opts.guard, snapshot) {
            step_forward(&mut state, d, mask, plan, store)?;
            let residual = guard_residual(&state.map, &snap);
            step_inverse(&mut state, d, mask, plan, store)?;
            recomputes += 2 * plan.coupling_count();
            budget.release(1);
            if !(residual <= guard) {
                return Err(Error::ReconstructionDiverged {
                    step: t,
                    residual,
                    guard,
                });
            }
        }
    }

    budget.release(2);
    Ok(GradReport {
        loss,
        ssim: ssim_value,
        recompute_count: recomputes,
        peak_cached_states: budget.peak,
        initial_state_grad: g,
    })
}

/// Conventional backprop oracle: the forward pass snapshots every
/// coupling's input state, so the backward pass never inverts anything.
/// Peak state count grows with T × couplings-per-step by construction.
pub fn backward_stored(
    initial_state: &MachineState,
    target: &FeatureMap,
    d: &CoilStack,
    mask: &SamplingMask,
    model: &Model,
    store: &mut ParamStore,
) -> Result<GradReport> {
    let mut budget = StateBudget::new();
    let mut recomputes = 0usize;
    let coils = initial_state.coil_count;

    let mut state = initial_state.clone();
    budget.acquire(1);
    let mut snapshots: Vec<FeatureMap> = Vec::new();
    for t in 0..model.cfg.steps {
        for op in &model.plan(t).ops {
            if matches!(op, MicroOp::Couple(_)) {
                snapshots.push(state.map.clone());
                budget.acquire(1);
            }
            crate::model::op_forward(&mut state, op, d, mask, store)?;
        }
    }

    let (loss, ssim_value, mut g) = seed_from_loss(&state, target, model, store)?;
    budget.acquire(1);

    for t in (0..model.cfg.steps).rev() {
        for op in model.plan(t).ops.iter().rev() {
            match op {
                MicroOp::Space2Depth => {
                    g = depth_to_space(&g, 2)?;
                }
                MicroOp::Depth2Space => {
                    g = space_to_depth(&g, 2)?;
                }
                MicroOp::Couple(spec) => {
                    let input_map = snapshots.pop().expect("one snapshot per coupling");
                    let cond = if spec.injects_gradient {
                        Some(injection_cond(&input_map, coils, d, mask)?)
                    } else {
                        None
                    };
                    couple_backward(
                        &input_map,
                        spec,
                        cond.as_ref(),
                        &mut g,
                        coils,
                        mask,
                        store,
                        &mut recomputes,
                    )?;
                    budget.release(1);
                }
            }
        }
    }

    budget.release(2);
    Ok(GradReport {
        loss,
        ssim: ssim_value,
        recompute_count: recomputes,
        peak_cached_states: budget.peak,
        initial_state_grad: g,
    })
}

/// One probed coordinate of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<28} {:>6} {:>14} {:>14} {:>10}",
            "param", "index", "analytic", "numeric", "rel_err"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<28} {:>6} {:>14.6e} {:>14.6e} {:>10.3e}",
                e.name, e.index, e.analytic, e.numeric, e.rel_err
            )?;
        }
        write!(f, "max rel err: {:.3e}", self.max_rel_err)
    }
}

/// Central differences of `loss_fn` at the probed coordinates, compared
/// against the analytic gradients already accumulated in the store.
pub fn finite_diff_check(
    store: &mut ParamStore,
    probes: &[(ParamId, usize)],
    h: f64,
    mut loss_fn: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<FdReport> {
    assert!(h > 0.0);
    let mut entries = Vec::with_capacity(probes.len());
    let mut max_rel = 0.0f64;
    for &(id, index) in probes {
        let analytic = store.grad(id)[index];
        let original = store.value(id)[index];

        store.value_mut(id)[index] = original + h;
        let up = loss_fn(store)?;
        store.value_mut(id)[index] = original - h;
        let down = loss_fn(store)?;
        store.value_mut(id)[index] = original;

        let numeric = (up - down) / (2.0 * h);
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        max_rel = max_rel.max(rel_err);
        entries.push(FdEntry {
            name: store.name(id).to_string(),
            index,
            analytic,
            numeric,
            rel_err,
        });
    }
    Ok(FdReport {
        entries,
        max_rel_err: max_rel,
    })
}

/// Uniformly sampled (parameter, coordinate) probe list.
pub fn random_probes(store: &ParamStore, count: usize, rng: &mut Rng) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.ids().collect();
    let mut probes = Vec::with_capacity(count);
    while probes.len() < count {
        let id = ids[rng.below(ids.len() as u64) as usize];
        let len = store.value(id).len();
        if len == 0 {
            continue;
        }
        probes.push((id, rng.below(len as u64) as usize));
    }
    probes
}
