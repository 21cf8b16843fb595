//! Residual networks living inside couplings and the output head: small
//! stacks of same-padded convolutions with ReLU between them.

use crate::error::Result;
use crate::nn::{conv2d, conv2d_backward, relu, relu_backward, ConvParams, FeatureMap, ParamId, ParamStore};
use crate::rng::Rng;

/// One conv layer's handles into the parameter store.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub w: ParamId,
    pub b: ParamId,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn params<'a>(&self, store: &'a ParamStore) -> ConvParams<'a> {
        ConvParams {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel,
            kernel_w: self.kernel,
            weights: store.value(self.w),
            bias: store.value(self.b),
        }
    }
}

/// conv → relu → … → conv; no activation after the final layer.
#[derive(Debug, Clone)]
pub struct ResidualSpec {
    pub convs: Vec<ConvSpec>,
}

/// Everything the backward pass needs: the input of every conv and every
/// conv's pre-activation output.
pub struct ResidualTape {
    inputs: Vec<FeatureMap>,
    preacts: Vec<FeatureMap>,
}

impl ResidualSpec {
    /// Registers `layers` conv layers named `{prefix}.c{i}.{w,b}` with
    /// uniform ±1/√fan_in weights. With `zero_final` the last layer starts
    /// all-zero so the surrounding coupling is the identity.
    pub fn build(
        store: &mut ParamStore,
        rng: &Rng,
        prefix: &str,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        layers: usize,
        kernel: usize,
        zero_final: bool,
    ) -> Result<Self> {
        assert!(layers >= 1);
        let mut convs = Vec::with_capacity(layers);
        for i in 0..layers {
            let ci = if i == 0 { in_channels } else { hidden };
            let co = if i == layers - 1 { out_channels } else { hidden };
            let fan_in = (ci * kernel * kernel) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let mut layer_rng = rng.derive(prefix, &[i as u64]);
            let weights: Vec<f64> = (0..co * ci * kernel * kernel)
                .map(|_| {
                    if zero_final && i == layers - 1 {
                        0.0
                    } else {
                        layer_rng.uniform(-bound, bound)
                    }
                })
                .collect();
            let w = store.register(
                &format!("{prefix}.c{i}.w"),
                vec![co, ci, kernel, kernel],
                weights,
            )?;
            let b = store.register(&format!("{prefix}.c{i}.b"), vec![co], vec![0.0; co])?;
            convs.push(ConvSpec {
                w,
                b,
                out_channels: co,
                in_channels: ci,
                kernel,
            });
        }
        Ok(ResidualSpec { convs })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().unwrap().out_channels
    }

    pub fn forward(&self, x: &FeatureMap, store: &ParamStore) -> Result<FeatureMap> {
        let mut cur = conv2d(x, &self.convs[0].params(store))?;
        for conv in &self.convs[1..] {
            cur = conv2d(&relu(&cur), &conv.params(store))?;
        }
        Ok(cur)
    }

    pub fn forward_tape(
        &self,
        x: &FeatureMap,
        store: &ParamStore,
    ) -> Result<(FeatureMap, ResidualTape)> {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                cur = relu(&cur);
            }
            let z = conv2d(&cur, &conv.params(store))?;
            inputs.push(cur);
            preacts.push(z.clone());
            cur = z;
        }
        Ok((cur, ResidualTape { inputs, preacts }))
    }

    /// Backpropagates `g_out` through the taped evaluation, accumulating
    /// weight and bias gradients into the store; returns the input gradient.
    pub fn backward(
        &self,
        tape: &ResidualTape,
        g_out: &FeatureMap,
        store: &mut ParamStore,
    ) -> Result<FeatureMap> {
        let mut g = g_out.clone();
        for i in (0..self.convs.len()).rev() {
            let conv = &self.convs[i];
            let (g_in, g_w, g_b) = conv2d_backward(&tape.inputs[i], &conv.params(store), &g)?;
            store.add_grad(conv.w, &g_w);
            store.add_grad(conv.b, &g_b);
            g = if i > 0 {
                relu_backward(&tape.preacts[i - 1], &g_in)
            } else {
                g_in
            };
        }
        Ok(g)
    }
}
