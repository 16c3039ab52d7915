//! Convolutional Q-network written from scratch: two-branch forward pass,
//! single-action backpropagation with plain SGD, checkpoints and gradient
//! checking. All arithmetic is f64.

mod arch;
mod checkpoint;
mod gradcheck;
mod kernels;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::rl_core::{ActionId, State, NUM_ACTIONS};

pub use arch::{
    ArchVariant, ConvSpec, FeatureShape, LayerKind, LayerSpec, NetworkArch, DEFAULT_ANGLE_SCALE,
    DEFAULT_VELOCITY_SCALE, HIDDEN_WIDTH, JOINT_INPUTS, JOINT_WIDTH,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, gradient_check_input, GradCheckReport, TensorCheck, FD_STEP, REL_ERROR_FLOOR};

use kernels::ConvDims;

/// Gradients with a larger L2 norm abort the update.
pub const MAX_GRADIENT_NORM: f64 = 1e6;

/// One Q value per action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QValues(pub [f64; NUM_ACTIONS]);

impl QValues {
    pub fn get(&self, a: ActionId) -> f64 {
        self.0[a.index()]
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn argmax(&self) -> ActionId {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        ActionId::ALL[best]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Normalized network input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    /// Channel-major single-channel image, nominally in [0, 1].
    pub image: Vec<f64>,
    pub joints: [f64; JOINT_INPUTS],
}

impl NetInput {
    pub fn from_state(arch: &NetworkArch, s: &State) -> Result<Self> {
        let mut input = Self {
            image: vec![0.0; s.image.pixels().len()],
            joints: [0.0; JOINT_INPUTS],
        };
        input.encode(arch, s)?;
        Ok(input)
    }

    /// Re-encodes `s` into this buffer: pixels ÷ 255, angles ÷ angle scale,
    /// velocities ÷ velocity scale.
    pub fn encode(&mut self, arch: &NetworkArch, s: &State) -> Result<()> {
        let px = s.image.pixels();
        if px.len() != arch.input_height * arch.input_width {
            return Err(Error::shape(
                format!("{}x{} image", arch.input_width, arch.input_height),
                format!("{} pixels", px.len()),
            ));
        }
        self.image.resize(px.len(), 0.0);
        for (d, &p) in self.image.iter_mut().zip(px.iter()) {
            *d = p as f64 / 255.0;
        }
        let j = &s.joints;
        self.joints = [
            j.theta3 / arch.angle_scale,
            j.theta4 / arch.angle_scale,
            j.vel3 / arch.velocity_scale,
            j.vel4 / arch.velocity_scale,
        ];
        Ok(())
    }
}

struct ConvBuffers {
    dims: ConvDims,
    pool: bool,
    /// Post-ReLU activation.
    act: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<u32>,
    /// Gradient w.r.t. the pre-ReLU activation.
    grad_act: Vec<f64>,
    /// Gradient w.r.t. this layer's output (after pooling).
    grad_out: Vec<f64>,
}

impl ConvBuffers {
    fn output(&self) -> &[f64] {
        if self.pool {
            &self.pooled
        } else {
            &self.act
        }
    }
}

/// Reusable activation and gradient buffers for one architecture.
pub struct Workspace {
    convs: Vec<ConvBuffers>,
    flat_len: usize,
    /// Flattened image features followed by the joint-branch activation.
    concat: Vec<f64>,
    grad_concat: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    grad_hidden: Vec<Vec<f64>>,
    out: Vec<f64>,
    grad: Gradient,
}

impl Workspace {
    pub fn new(arch: &NetworkArch) -> Result<Self> {
        let shapes = arch.conv_shapes()?;
        let mut convs = Vec::with_capacity(shapes.len());
        let mut in_shape = arch.input_shape();
        for (spec, shape) in arch.convs.iter().zip(&shapes) {
            let dims = ConvDims {
                in_c: in_shape.channels,
                in_h: in_shape.height,
                in_w: in_shape.width,
                filters: spec.filters,
                k: spec.kernel,
            };
            let out_shape = FeatureShape {
                channels: shape.channels,
                height: if spec.pool_after { shape.height / 2 } else { shape.height },
                width: if spec.pool_after { shape.width / 2 } else { shape.width },
            };
            let pooled_len = if spec.pool_after { out_shape.len() } else { 0 };
            convs.push(ConvBuffers {
                dims,
                pool: spec.pool_after,
                act: vec![0.0; shape.len()],
                pooled: vec![0.0; pooled_len],
                argmax: vec![0; pooled_len],
                grad_act: vec![0.0; shape.len()],
                grad_out: vec![0.0; out_shape.len()],
            });
            in_shape = out_shape;
        }
        let flat_len = arch.flat_len()?;
        let concat_len = flat_len + arch.joint_width;
        Ok(Self {
            convs,
            flat_len,
            concat: vec![0.0; concat_len],
            grad_concat: vec![0.0; concat_len],
            hidden: arch.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            grad_hidden: arch.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            out: vec![0.0; arch.outputs],
            grad: Gradient::zeros(&arch.layers()?),
        })
    }

    /// Gradient left by the most recent backward pass.
    pub fn gradient(&self) -> &Gradient {
        &self.grad
    }
}

/// Gradient of the loss for every parameter. Dense layers keep the two
/// factors of their rank-one weight gradient instead of the full matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
enum LayerGrad {
    Conv { w: Vec<f64>, b: Vec<f64> },
    /// `dW[o][i] = g_out[o]·input[i]`, `db[o] = g_out[o]`
    Dense { g_out: Vec<f64>, input: Vec<f64> },
}

impl Gradient {
    fn zeros(layers: &[LayerSpec]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| match l.kind {
                    LayerKind::Conv => LayerGrad::Conv {
                        w: vec![0.0; l.w_len()],
                        b: vec![0.0; l.n_out],
                    },
                    LayerKind::Dense => LayerGrad::Dense {
                        g_out: vec![0.0; l.n_out],
                        input: vec![0.0; l.fan_in],
                    },
                })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| match g {
                LayerGrad::Conv { w, b } => kernels::sum_sq(w) + kernels::sum_sq(b),
                LayerGrad::Dense { g_out, input } => kernels::sum_sq(g_out) * (kernels::sum_sq(input) + 1.0),
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Partial derivative for one entry of the flat parameter vector.
    pub fn get(&self, layers: &[LayerSpec], index: usize) -> f64 {
        for (spec, g) in layers.iter().zip(&self.layers) {
            if spec.weights().contains(&index) {
                let i = index - spec.w_offset;
                return match g {
                    LayerGrad::Conv { w, .. } => w[i],
                    LayerGrad::Dense { g_out, input } => g_out[i / spec.fan_in] * input[i % spec.fan_in],
                };
            }
            if spec.biases().contains(&index) {
                let i = index - spec.b_offset;
                return match g {
                    LayerGrad::Conv { b, .. } => b[i],
                    LayerGrad::Dense { g_out, .. } => g_out[i],
                };
            }
        }
        panic!("parameter index {index} out of range");
    }

    /// `θ ← θ − lr·g`
    fn apply(&self, layers: &[LayerSpec], params: &mut [f64], lr: f64) {
        for (spec, g) in layers.iter().zip(&self.layers) {
            match g {
                LayerGrad::Conv { w, b } => {
                    kernels::axpy(-lr, w, &mut params[spec.weights()]);
                    kernels::axpy(-lr, b, &mut params[spec.biases()]);
                }
                LayerGrad::Dense { g_out, input } => {
                    let weights = &mut params[spec.weights()];
                    for (o, &go) in g_out.iter().enumerate() {
                        if go != 0.0 {
                            kernels::axpy(-lr * go, input, &mut weights[o * spec.fan_in..(o + 1) * spec.fan_in]);
                        }
                    }
                    kernels::axpy(-lr, g_out, &mut params[spec.biases()]);
                }
            }
        }
    }
}

fn check_finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(layer, "non-finite activation"))
    }
}

/// Q-network: architecture plus flat parameter vector θ.
pub struct QNetwork {
    arch: NetworkArch,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    scratch: Option<Box<(Workspace, NetInput)>>,
}

impl Clone for QNetwork {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            scratch: None,
        }
    }
}

impl PartialEq for QNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl std::fmt::Debug for QNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QNetwork")
            .field("arch", &self.arch)
            .field("params", &self.params.len())
            .finish()
    }
}

impl QNetwork {
    /// He-uniform weights `U(±sqrt(6 / fan_in))` and zero biases.
    pub fn build(arch: NetworkArch, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for spec in &net.layers {
            let limit = (6.0 / spec.fan_in as f64).sqrt();
            for w in &mut net.params[spec.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: NetworkArch) -> Result<Self> {
        let layers = arch.layers()?;
        let n = arch.param_count()?;
        Ok(Self {
            arch,
            layers,
            params: vec![0.0; n],
            scratch: None,
        })
    }

    pub fn from_params(arch: NetworkArch, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::ArchMismatch(format!(
                "architecture needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("parameters", format!("parameter {i} is not finite")));
        }
        net.params = params;
        Ok(net)
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn workspace(&self) -> Result<Workspace> {
        Workspace::new(&self.arch)
    }

    pub fn forward(&self, s: &State) -> Result<QValues> {
        let mut ws = self.workspace()?;
        let input = NetInput::from_state(&self.arch, s)?;
        self.forward_values(&mut ws, &input)
    }

    /// Forward pass of a 9-output network into caller-owned buffers.
    pub fn forward_values(&self, ws: &mut Workspace, input: &NetInput) -> Result<QValues> {
        if self.arch.outputs != NUM_ACTIONS {
            return Err(Error::ArchMismatch(format!(
                "expected {NUM_ACTIONS} outputs, network has {}",
                self.arch.outputs
            )));
        }
        let out = self.forward_input(ws, input)?;
        Ok(QValues(out.try_into().expect("output width checked")))
    }

    /// Forward pass for any output width.
    pub fn forward_input<'w>(&self, ws: &'w mut Workspace, input: &NetInput) -> Result<&'w [f64]> {
        let arch = &self.arch;
        if input.image.len() != arch.input_height * arch.input_width {
            return Err(Error::shape(
                arch.input_height * arch.input_width,
                format!("{} input pixels", input.image.len()),
            ));
        }
        let p = &self.params;
        let n_conv = ws.convs.len();
        for l in 0..n_conv {
            let spec = &self.layers[l];
            let (done, rest) = ws.convs.split_at_mut(l);
            let prev: &[f64] = if l == 0 { &input.image } else { done[l - 1].output() };
            let buf = &mut rest[0];
            kernels::conv_forward(buf.dims, prev, &p[spec.weights()], &p[spec.biases()], &mut buf.act);
            kernels::relu_in_place(&mut buf.act);
            check_finite(&spec.name, &buf.act)?;
            if buf.pool {
                let d = buf.dims;
                kernels::pool_forward(d.filters, d.out_h(), d.out_w(), &buf.act, &mut buf.pooled, &mut buf.argmax);
            }
        }
        let flat = ws.flat_len;
        {
            let img_out: &[f64] = match ws.convs.last() {
                Some(b) => b.output(),
                None => &input.image,
            };
            ws.concat[..flat].copy_from_slice(img_out);
        }
        let joint = &self.layers[n_conv];
        kernels::dense_forward(&p[joint.weights()], &p[joint.biases()], &input.joints, &mut ws.concat[flat..]);
        kernels::relu_in_place(&mut ws.concat[flat..]);
        check_finite(&joint.name, &ws.concat[flat..])?;

        for h in 0..ws.hidden.len() {
            let spec = &self.layers[n_conv + 1 + h];
            let (done, rest) = ws.hidden.split_at_mut(h);
            let prev: &[f64] = if h == 0 { &ws.concat } else { &done[h - 1] };
            kernels::dense_forward(&p[spec.weights()], &p[spec.biases()], prev, &mut rest[0]);
            kernels::relu_in_place(&mut rest[0]);
            check_finite(&spec.name, &rest[0])?;
        }
        let spec = self.layers.last().expect("output layer");
        let prev: &[f64] = ws.hidden.last().unwrap_or(&ws.concat);
        kernels::dense_forward(&p[spec.weights()], &p[spec.biases()], prev, &mut ws.out);
        check_finite(&spec.name, &ws.out)?;
        Ok(&ws.out)
    }

    /// Forward and backward pass for `L = (y − Q(s,a))²`; the gradient is
    /// left in `ws` and the loss is returned.
    pub fn gradient_input(&self, ws: &mut Workspace, input: &NetInput, a: usize, y: f64) -> Result<f64> {
        if a >= self.arch.outputs {
            return Err(Error::shape(format!("action < {}", self.arch.outputs), a));
        }
        if !y.is_finite() {
            return Err(Error::numeric("target", format!("target {y} is not finite")));
        }
        let q = self.forward_input(ws, input)?[a];
        let diff = y - q;
        let dq = -2.0 * diff;
        self.backward(ws, input, a, dq);
        Ok(diff * diff)
    }

    fn backward(&self, ws: &mut Workspace, input: &NetInput, a: usize, dq: f64) {
        let p = &self.params;
        let n_conv = ws.convs.len();
        let n_hidden = ws.hidden.len();
        let grads = &mut ws.grad.layers;

        // output layer: only unit `a` carries gradient
        let out_idx = self.layers.len() - 1;
        let out_spec = &self.layers[out_idx];
        {
            let LayerGrad::Dense { g_out, input: x } = &mut grads[out_idx] else {
                unreachable!("output layer is dense")
            };
            g_out.fill(0.0);
            g_out[a] = dq;
            x.copy_from_slice(ws.hidden.last().unwrap_or(&ws.concat));
        }
        {
            let g_prev = ws.grad_hidden.last_mut().unwrap_or(&mut ws.grad_concat);
            let LayerGrad::Dense { g_out, .. } = &grads[out_idx] else { unreachable!() };
            kernels::dense_backward_input(&p[out_spec.weights()], g_out, g_prev);
        }

        for h in (0..n_hidden).rev() {
            let li = n_conv + 1 + h;
            let spec = &self.layers[li];
            kernels::relu_mask(&mut ws.grad_hidden[h], &ws.hidden[h]);
            let LayerGrad::Dense { g_out, input: x } = &mut grads[li] else { unreachable!() };
            g_out.copy_from_slice(&ws.grad_hidden[h]);
            let (lower, _) = ws.grad_hidden.split_at_mut(h);
            if h == 0 {
                x.copy_from_slice(&ws.concat);
                kernels::dense_backward_input(&p[spec.weights()], g_out, &mut ws.grad_concat);
            } else {
                x.copy_from_slice(&ws.hidden[h - 1]);
                kernels::dense_backward_input(&p[spec.weights()], g_out, &mut lower[h - 1]);
            }
        }

        let flat = ws.flat_len;
        {
            kernels::relu_mask(&mut ws.grad_concat[flat..], &ws.concat[flat..]);
            let LayerGrad::Dense { g_out, input: x } = &mut grads[n_conv] else { unreachable!() };
            g_out.copy_from_slice(&ws.grad_concat[flat..]);
            x.copy_from_slice(&input.joints);
        }

        if let Some(last) = ws.convs.last_mut() {
            last.grad_out.copy_from_slice(&ws.grad_concat[..flat]);
        }
        for l in (0..n_conv).rev() {
            let spec = &self.layers[l];
            let (lower, rest) = ws.convs.split_at_mut(l);
            let buf = &mut rest[0];
            if buf.pool {
                kernels::pool_backward(&buf.grad_out, &buf.argmax, &mut buf.grad_act);
            } else {
                buf.grad_act.copy_from_slice(&buf.grad_out);
            }
            kernels::relu_mask(&mut buf.grad_act, &buf.act);
            let LayerGrad::Conv { w: gw, b: gb } = &mut grads[l] else { unreachable!() };
            let (prev_out, grad_in): (&[f64], Option<&mut [f64]>) = if l == 0 {
                (&input.image, None)
            } else {
                let below = &mut lower[l - 1];
                below.grad_out.fill(0.0);
                let out: &[f64] = if below.pool { &below.pooled } else { &below.act };
                (out, Some(&mut below.grad_out))
            };
            kernels::conv_backward(buf.dims, prev_out, &p[spec.weights()], &buf.grad_act, gw, gb, grad_in);
        }
    }

    /// One SGD step on `L = (y − Q(s,a))²`; returns the pre-update loss.
    pub fn backward_step(&mut self, s: &State, a: ActionId, y: f64, lr: f64) -> Result<f64> {
        let mut scratch = match self.scratch.take() {
            Some(s) => s,
            None => Box::new((self.workspace()?, NetInput::from_state(&self.arch, s)?)),
        };
        let result = scratch
            .1
            .encode(&self.arch, s)
            .and_then(|_| self.step_with(&mut scratch.0, &scratch.1, a.index(), y, lr));
        self.scratch = Some(scratch);
        result
    }

    /// As [`QNetwork::backward_step`] with caller-owned buffers and input.
    pub fn step_with(&mut self, ws: &mut Workspace, input: &NetInput, a: usize, y: f64, lr: f64) -> Result<f64> {
        let loss = self.gradient_input(ws, input, a, y)?;
        let norm = ws.grad.norm();
        if !(norm <= MAX_GRADIENT_NORM) {
            return Err(Error::numeric("gradient", format!("gradient norm {norm:e} exceeds {MAX_GRADIENT_NORM:e}")));
        }
        ws.grad.apply(&self.layers, &mut self.params, lr);
        Ok(loss)
    }

    /// Loss `(y − Q(s,a))²` without touching the parameters.
    pub fn loss_input(&self, ws: &mut Workspace, input: &NetInput, a: usize, y: f64) -> Result<f64> {
        let q = self.forward_input(ws, input)?[a];
        Ok((y - q) * (y - q))
    }
}

/// Copies the source parameters into `target`.
pub fn sync_target(source: &QNetwork, target: &mut QNetwork) -> Result<()> {
    if source.arch != target.arch {
        return Err(Error::ArchMismatch(format!(
            "cannot sync a {} network into a {} network",
            source.arch.variant.name(),
            target.arch.variant.name()
        )));
    }
    target.params.copy_from_slice(&source.params);
    Ok(())
}
