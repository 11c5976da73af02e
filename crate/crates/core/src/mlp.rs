//! Fixed-topology multilayer perceptrons with hand-derived reverse-mode
//! gradients.
//!
//! Every hidden layer is `affine -> layer norm (optional) -> ReLU`; the output
//! layer is affine only, so heads apply their own squashing. A critic may
//! receive the action as an extra input to one layer (`action_insert_layer`),
//! in which case that layer's input is `[previous activation | action]`.
//!
//! All parameters live in one flat `Vec<f64>` so optimizers, soft updates and
//! checkpoints operate on a single slice.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor2, View};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture of an [`MlpParams`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpLayout {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    /// Width of the action appended at `action_insert_layer` (0 when unused).
    pub action_dim: usize,
    pub action_insert_layer: Option<usize>,
    pub layer_norm: bool,
}

impl MlpLayout {
    pub fn new(layer_sizes: Vec<usize>, layer_norm: bool) -> Self {
        MlpLayout {
            layer_sizes,
            action_dim: 0,
            action_insert_layer: None,
            layer_norm,
        }
    }

    pub fn with_action_input(mut self, layer: usize, action_dim: usize) -> Self {
        self.action_insert_layer = Some(layer);
        self.action_dim = action_dim;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated layout")
    }

    /// Input width of layer `l`, including an inserted action.
    pub fn layer_input(&self, l: usize) -> usize {
        let extra = if self.action_insert_layer == Some(l) {
            self.action_dim
        } else {
            0
        };
        self.layer_sizes[l] + extra
    }

    pub fn is_hidden(&self, l: usize) -> bool {
        l + 1 < self.num_layers()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output size".into(),
            ));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer size {i} is zero")));
        }
        match self.action_insert_layer {
            Some(l) if l >= self.num_layers() => Err(Error::Config(format!(
                "action insert layer {l} out of range (network has {} layers)",
                self.num_layers()
            ))),
            Some(_) if self.action_dim == 0 => {
                Err(Error::Config("action insert layer set with zero action dim".into()))
            }
            None if self.action_dim != 0 => Err(Error::Config(
                "action dim set without an insert layer".into(),
            )),
            _ => Ok(()),
        }
    }

    fn slots(&self) -> (Vec<LayerSlots>, usize) {
        let mut off = 0;
        let mut slots = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (input, output) = (self.layer_input(l), self.layer_sizes[l + 1]);
            let weight = off;
            off += input * output;
            let bias = off;
            off += output;
            let norm = if self.layer_norm && self.is_hidden(l) {
                let g = off;
                off += 2 * output;
                Some((g, g + output))
            } else {
                None
            };
            slots.push(LayerSlots {
                input,
                output,
                weight,
                bias,
                norm,
            });
        }
        (slots, off)
    }

    pub fn param_count(&self) -> usize {
        self.slots().1
    }
}

/// Offsets of one layer's parameters inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub input: usize,
    pub output: usize,
    /// `input × output` row-major weight matrix.
    pub weight: usize,
    pub bias: usize,
    /// `(gain, shift)` offsets for layer norm.
    pub norm: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layout: MlpLayout,
    slots: Vec<LayerSlots>,
    data: Vec<f64>,
}

/// Intermediates of one batched forward pass, consumed by [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer (with the action already concatenated).
    inputs: Vec<Tensor2>,
    /// Layer-normalized pre-activations and per-row inverse std, hidden layers only.
    normed: Vec<Option<(Tensor2, Vec<f64>)>>,
    /// Pre-ReLU values of hidden layers.
    pre_relu: Vec<Tensor2>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Reverse-mode gradients: one entry per parameter (same layout as the
/// network) plus gradients with respect to the observation and action inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub params: Vec<f64>,
    pub input: Tensor2,
    pub action: Option<Tensor2>,
}

impl MlpParams {
    pub fn zeros(layout: MlpLayout) -> Result<Self> {
        layout.validate()?;
        let (slots, n) = layout.slots();
        Ok(MlpParams {
            layout,
            slots,
            data: vec![0.0; n],
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases, unit layer-norm gains.
    /// `final_scale` overrides the bound of the output layer.
    pub fn init<R: Rng + ?Sized>(
        layout: MlpLayout,
        final_scale: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(layout)?;
        let last = p.slots.len() - 1;
        for (l, s) in p.slots.clone().into_iter().enumerate() {
            let bound = match final_scale {
                Some(b) if l == last => b,
                _ => 1.0 / (s.input as f64).sqrt(),
            };
            for v in &mut p.data[s.weight..s.bias + s.output] {
                *v = rng.random_range(-bound..=bound);
            }
            if let Some((g, _)) = s.norm {
                p.data[g..g + s.output].fill(1.0);
            }
        }
        Ok(p)
    }

    pub fn from_flat(layout: MlpLayout, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(layout)?;
        if data.len() != p.data.len() {
            return Err(Error::dim("flat parameters", p.data.len(), data.len()));
        }
        p.data = data;
        Ok(p)
    }

    pub fn layout(&self) -> &MlpLayout {
        &self.layout
    }

    pub fn slots(&self) -> &[LayerSlots] {
        &self.slots
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `target ← tau·source + (1 − tau)·target`, elementwise.
    pub fn soft_update_from(&mut self, source: &MlpParams, tau: f64) -> Result<()> {
        if self.layout != source.layout {
            return Err(Error::Dimension {
                context: "soft update layout".into(),
                expected: self.data.len(),
                actual: source.data.len(),
            });
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Contract(format!("soft update tau {tau} outside [0, 1]")));
        }
        for (t, s) in self.data.iter_mut().zip(&source.data) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn forward(&self, obs: &Tensor2, action: Option<&Tensor2>) -> Result<Tensor2> {
        self.forward_cached(obs, action).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        obs: &Tensor2,
        action: Option<&Tensor2>,
    ) -> Result<(Tensor2, ForwardCache)> {
        let lay = &self.layout;
        if obs.cols() != lay.input_dim() {
            return Err(Error::dim("layer 0 input", lay.input_dim(), obs.cols()));
        }
        match (lay.action_insert_layer, action) {
            (Some(l), Some(a)) => {
                if a.cols() != lay.action_dim {
                    return Err(Error::dim(format!("layer {l} action input"), lay.action_dim, a.cols()));
                }
                if a.rows() != obs.rows() {
                    return Err(Error::dim(format!("layer {l} action batch"), obs.rows(), a.rows()));
                }
            }
            (Some(l), None) => {
                return Err(Error::Usage(format!("layer {l} expects an action input")))
            }
            (None, Some(_)) => {
                return Err(Error::Usage("network takes no action input".into()))
            }
            (None, None) => {}
        }

        let batch = obs.rows();
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(self.slots.len()),
            normed: Vec::with_capacity(self.slots.len()),
            pre_relu: Vec::with_capacity(self.slots.len()),
        };
        let mut x = obs.clone();
        for (l, s) in self.slots.iter().enumerate() {
            if lay.action_insert_layer == Some(l) {
                x = x.hcat(action.expect("checked above"))?;
            }
            let mut z = Tensor2::zeros(batch, s.output);
            let bias = &self.data[s.bias..s.bias + s.output];
            for i in 0..batch {
                z.row_mut(i).copy_from_slice(bias);
            }
            gemm(
                batch,
                s.input,
                s.output,
                1.0,
                x.data(),
                View::row_major(s.input),
                &self.data[s.weight..s.bias],
                View::row_major(s.output),
                1.0,
                z.data_mut(),
            );
            if !lay.is_hidden(l) {
                cache.inputs.push(x);
                if let Some(idx) = z.first_non_finite() {
                    return Err(Error::NonFinite {
                        context: "network output",
                        index: idx,
                    });
                }
                return Ok((z, cache));
            }
            let normed = match s.norm {
                Some((g, b)) => {
                    let gain = &self.data[g..g + s.output];
                    let shift = &self.data[b..b + s.output];
                    let mut xhat = Tensor2::zeros(batch, s.output);
                    let mut inv_std = Vec::with_capacity(batch);
                    for i in 0..batch {
                        let istd = normalize_row(z.row(i), xhat.row_mut(i));
                        inv_std.push(istd);
                        for ((zv, &h), (&gv, &bv)) in z
                            .row_mut(i)
                            .iter_mut()
                            .zip(xhat.row(i))
                            .zip(gain.iter().zip(shift))
                        {
                            *zv = h * gv + bv;
                        }
                    }
                    Some((xhat, inv_std))
                }
                None => None,
            };
            let mut h = z.clone();
            for v in h.data_mut() {
                *v = v.max(0.0);
            }
            cache.inputs.push(x);
            cache.normed.push(normed);
            cache.pre_relu.push(z);
            x = h;
        }
        unreachable!("layout has at least one layer")
    }

    /// Gradients of `Σ output ⊙ upstream` with respect to parameters and inputs.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor2) -> Result<GradientBundle> {
        let lay = &self.layout;
        if cache.inputs.len() != self.slots.len() {
            return Err(Error::Usage(
                "forward cache does not belong to this network".into(),
            ));
        }
        if upstream.rows() != cache.batch || upstream.cols() != lay.output_dim() {
            return Err(Error::Usage(format!(
                "upstream gradient is {}x{}, forward pass produced {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.batch,
                lay.output_dim()
            )));
        }
        let batch = cache.batch;
        let mut grads = vec![0.0; self.data.len()];
        let mut action_grad = None;
        let mut dout = upstream.clone();
        for l in (0..self.slots.len()).rev() {
            let s = self.slots[l];
            let mut dz = dout;
            if lay.is_hidden(l) {
                let pre = &cache.pre_relu[l];
                for (d, &p) in dz.data_mut().iter_mut().zip(pre.data()) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let (Some((g, b)), Some((xhat, inv_std))) = (s.norm, &cache.normed[l]) {
                    let gain = &self.data[g..g + s.output];
                    for i in 0..batch {
                        let dy = dz.row_mut(i);
                        let xh = xhat.row(i);
                        for j in 0..s.output {
                            grads[g + j] += dy[j] * xh[j];
                            grads[b + j] += dy[j];
                        }
                        let n = s.output as f64;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..s.output {
                            let dxh = dy[j] * gain[j];
                            mean_d += dxh;
                            mean_dx += dxh * xh[j];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for j in 0..s.output {
                            let dxh = dy[j] * gain[j];
                            dy[j] = inv_std[i] * (dxh - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            let x = &cache.inputs[l];
            gemm(
                s.input,
                batch,
                s.output,
                1.0,
                x.data(),
                View::transposed(s.input),
                dz.data(),
                View::row_major(s.output),
                1.0,
                &mut grads[s.weight..s.bias],
            );
            for i in 0..batch {
                for (gb, d) in grads[s.bias..s.bias + s.output].iter_mut().zip(dz.row(i)) {
                    *gb += d;
                }
            }
            let mut dx = Tensor2::zeros(batch, s.input);
            gemm(
                batch,
                s.output,
                s.input,
                1.0,
                dz.data(),
                View::row_major(s.output),
                &self.data[s.weight..s.bias],
                View::transposed(s.output),
                0.0,
                dx.data_mut(),
            );
            if lay.action_insert_layer == Some(l) {
                let (prev, act) = dx.hsplit(lay.layer_sizes[l]);
                action_grad = Some(act);
                dx = prev;
            }
            dout = dx;
        }
        Ok(GradientBundle {
            params: grads,
            input: dout,
            action: action_grad,
        })
    }
}

/// Writes the normalized row into `out` and returns `1/sqrt(var + eps)`.
fn normalize_row(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

/// `(x − mean) / sqrt(var + 1e-5) ⊙ gain + bias` with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::dim("layer norm input (minimum length)", 2, x.len()));
    }
    if gain.len() != x.len() {
        return Err(Error::dim("layer norm gain", x.len(), gain.len()));
    }
    if bias.len() != x.len() {
        return Err(Error::dim("layer norm bias", x.len(), bias.len()));
    }
    let mut out = vec![0.0; x.len()];
    normalize_row(x, &mut out);
    for ((o, g), b) in out.iter_mut().zip(gain).zip(bias) {
        *o = *o * g + b;
    }
    Ok(out)
}
