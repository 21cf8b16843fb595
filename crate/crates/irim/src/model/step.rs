//! One invertible update step as a flat list of micro-ops: the
//! gradient-injection coupling, then a symmetric space-to-depth descent and
//! depth-to-space ascent with an additive coupling pair at every scale.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::mri::{dc_gradient, CoilStack, SamplingMask};
use crate::nn::{depth_to_space, space_to_depth, FeatureMap, ParamStore};
use crate::rng::Rng;

use super::residual::ResidualSpec;
use super::state::{channels_to_stack, stack_to_channels, MachineState};
use super::ModelConfig;

pub const KERNEL: usize = 3;

/// Additive coupling `y[active] = x[active] + R(x[passive] ⊕ cond)`,
/// `y[passive] = x[passive]`. The gradient-injection variant conditions R on
/// the data-consistency gradient computed from the (pass-through) estimate.
#[derive(Debug, Clone)]
pub struct CouplingSpec {
    pub active: Range<usize>,
    pub passive: Range<usize>,
    pub injects_gradient: bool,
    pub residual: ResidualSpec,
}

#[derive(Debug, Clone)]
pub enum MicroOp {
    Space2Depth,
    Depth2Space,
    Couple(CouplingSpec),
}

/// The ordered micro-ops of one step. Applying them in order is
/// `step_forward`; walking them backwards with each op inverted is
/// `step_inverse`.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub ops: Vec<MicroOp>,
}

pub fn build_step_plan(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    rng: &Rng,
    prefix: &str,
    zero_final: bool,
) -> Result<StepPlan> {
    let twok = 2 * cfg.coil_count;
    let c0 = cfg.state_channels();
    let mut ops = Vec::with_capacity(2 + 5 * cfg.scales);

    ops.push(MicroOp::Couple(CouplingSpec {
        active: twok..c0,
        passive: 0..twok,
        injects_gradient: true,
        residual: ResidualSpec::build(
            store,
            rng,
            &format!("{prefix}.inj"),
            2 * twok,
            cfg.channels_per_scale[0],
            cfg.latent_channels,
            cfg.layers_per_block,
            KERNEL,
            zero_final,
        )?,
    }));

    let pair = |store: &mut ParamStore, name: String, channels: usize, hidden: usize| {
        let half = channels / 2;
        let couple = |store: &mut ParamStore, tag: &str, active, passive| -> Result<MicroOp> {
            Ok(MicroOp::Couple(CouplingSpec {
                active,
                passive,
                injects_gradient: false,
                residual: ResidualSpec::build(
                    store,
                    rng,
                    &format!("{name}.{tag}"),
                    half,
                    hidden,
                    half,
                    cfg.layers_per_block,
                    KERNEL,
                    zero_final,
                )?,
            }))
        };
        Ok::<_, Error>(vec![
            couple(store, "lo", 0..half, half..channels)?,
            couple(store, "hi", half..channels, 0..half)?,
        ])
    };

    let mut channels = c0;
    for j in 1..=cfg.scales {
        ops.push(MicroOp::Space2Depth);
        channels *= 4;
        ops.extend(pair(
            store,
            format!("{prefix}.d{j}"),
            channels,
            cfg.channels_per_scale[j],
        )?);
    }
    for j in (1..=cfg.scales).rev() {
        ops.extend(pair(
            store,
            format!("{prefix}.a{j}"),
            channels,
            cfg.channels_per_scale[j],
        )?);
        ops.push(MicroOp::Depth2Space);
        channels /= 4;
    }
    debug_assert_eq!(channels, c0);
    Ok(StepPlan { ops })
}

impl StepPlan {
    /// Couplings per step; the injection plus a pair per scale per direction.
    pub fn coupling_count(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| matches!(op, MicroOp::Couple(_)))
            .count()
    }
}

/// The conditioning input: ∇D of the current estimate slice as 2K channels.
pub fn dc_condition(
    state: &MachineState,
    d: &CoilStack,
    mask: &SamplingMask,
) -> Result<FeatureMap> {
    debug_assert_eq!(
        state.map.channels,
        2 * state.coil_count + state.latent_channels()
    );
    let grad = dc_gradient(d, mask, &state.estimate())?;
    Ok(stack_to_channels(&grad))
}

/// Aᴴ A applied to a 2K-channel cotangent; the vector-Jacobian product of
/// the conditioning path. Aᴴ A is self-adjoint, so the real-Jacobian
/// transpose of the map e ↦ AᴴA e is AᴴA itself.
pub fn aha_vjp(
    cotangent: &FeatureMap,
    coil_count: usize,
    mask: &SamplingMask,
) -> Result<FeatureMap> {
    let stack = channels_to_stack(cotangent, coil_count);
    let projected = crate::mri::adjoint_ah(&crate::mri::forward_a(&stack, mask)?, mask)?;
    Ok(stack_to_channels(&projected))
}

fn residual_input(
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

fn apply_to_active(map: &mut FeatureMap, spec: &CouplingSpec, r: &FeatureMap, sign: f64) {
    let plane = map.plane();
    let start = spec.active.start * plane;
    let end = spec.active.end * plane;
    debug_assert_eq!(r.data.len(), end - start);
    for (dst, src) in map.data[start..end].iter_mut().zip(&r.data) {
        *dst += sign * src;
    }
}

/// `y[active] = x[active] + R(x[passive] ⊕ cond)`; the passive slice is
/// untouched, bit for bit.
pub fn couple_forward(
    map: &mut FeatureMap,
    spec: &CouplingSpec,
    store: &ParamStore,
    cond: Option<&FeatureMap>,
) -> Result<()> {
    let rin = residual_input(map, spec, cond)?;
    let r = spec.residual.forward(&rin, store)?;
    apply_to_active(map, spec, &r, 1.0);
    Ok(())
}

/// Exact inverse: `x[active] = y[active] − R(y[passive] ⊕ cond)`.
pub fn couple_inverse(
    map: &mut FeatureMap,
    spec: &CouplingSpec,
    store: &ParamStore,
    cond: Option<&FeatureMap>,
) -> Result<()> {
    let rin = residual_input(map, spec, cond)?;
    let r = spec.residual.forward(&rin, store)?;
    apply_to_active(map, spec, &r, -1.0);
    Ok(())
}

fn op_cond(
    state: &MachineState,
    op_injects: bool,
    d: &CoilStack,
    mask: &SamplingMask,
) -> Result<Option<FeatureMap>> {
    if op_injects {
        Ok(Some(dc_condition(state, d, mask)?))
    } else {
        Ok(None)
    }
}

pub fn op_forward(
    state: &mut MachineState,
    op: &MicroOp,
    d: &CoilStack,
    mask: &SamplingMask,
    store: &ParamStore,
) -> Result<()> {
    match op {
        MicroOp::Space2Depth => {
            state.map = space_to_depth(&state.map, 2)?;
        }
        MicroOp::Depth2Space => {
            state.map = depth_to_space(&state.map, 2)?;
        }
        MicroOp::Couple(spec) => {
            let cond = op_cond(state, spec.injects_gradient, d, mask)?;
            couple_forward(&mut state.map, spec, store, cond.as_ref())?;
        }
    }
    Ok(())
}

pub fn op_inverse(
    state: &mut MachineState,
    op: &MicroOp,
    d: &CoilStack,
    mask: &SamplingMask,
    store: &ParamStore,
) -> Result<()> {
    match op {
        MicroOp::Space2Depth => {
            state.map = depth_to_space(&state.map, 2)?;
        }
        MicroOp::Depth2Space => {
            state.map = space_to_depth(&state.map, 2)?;
        }
        MicroOp::Couple(spec) => {
            // The passive slice (which carries the estimate for injection
            // couplings) is identical on both sides of the coupling, so the
            // conditioning recomputed here equals the forward one exactly.
            let cond = op_cond(state, spec.injects_gradient, d, mask)?;
            couple_inverse(&mut state.map, spec, store, cond.as_ref())?;
        }
    }
    Ok(())
}

pub fn step_forward(
    state: &mut MachineState,
    d: &CoilStack,
    mask: &SamplingMask,
    plan: &StepPlan,
    store: &ParamStore,
) -> Result<()> {
    for op in &plan.ops {
        op_forward(state, op, d, mask, store)?;
    }
    Ok(())
}

pub fn step_inverse(
    state: &mut MachineState,
    d: &CoilStack,
    mask: &SamplingMask,
    plan: &StepPlan,
    store: &ParamStore,
) -> Result<()> {
    for op in plan.ops.iter().rev() {
        op_inverse(state, op, d, mask, store)?;
    }
    Ok(())
}
