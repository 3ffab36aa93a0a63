//! Small convolutional epsilon-prediction network with analytic gradients.
//!
//! Architecture, for hidden width `C`:
//!
//! ```text
//! [x, depth] -> conv3x3 -> + bias + time_embed[t] -> SiLU
//!         -> conv3x3 (C->C) -> SiLU
//!         -> conv3x3 (C->C) -> SiLU
//!         -> conv3x3 (C->1) -> eps_hat
//! ```
//!
//! `depth` is a constant plane holding each row's normalized depth. All
//! convolutions are stride 1 with zero padding. Weights are drawn from a
//! fan-in scaled normal, biases and the timestep table start at zero, and the
//! output layer is zero-initialized so a fresh network predicts `eps_hat = 0`.

mod adam;
mod conv;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::EpsPredictor;
use crate::error::{dim_err, param_err};
use crate::{Error, ImageGrid, Result, RngStream};

pub use adam::{adam_step, OptimizerState, DEFAULT_LR};
pub use train::{train, train_with_progress, TrainConfig, TrainOutput};

use conv::{conv3x3, conv3x3_backward, silu, silu_grad};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

pub const MIN_SIDE: usize = 8;
/// Image plus a fixed depth-coordinate plane.
pub const IN_CHANNELS: usize = 2;
pub const MIN_HIDDEN: usize = 4;

/// Names of the parameter tensors, in storage order.
pub const TENSOR_NAMES: [&str; 9] = [
    "conv1.weight",
    "conv1.bias",
    "time_embed",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "conv4.weight",
    "conv4.bias",
];

const W1: usize = 0;
const B1: usize = 1;
const EMB: usize = 2;
const W2: usize = 3;
const B2: usize = 4;
const W3: usize = 5;
const B3: usize = 6;
const W4: usize = 7;
const B4: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &'static str, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Network weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    height: usize,
    width: usize,
    hidden: usize,
    steps: usize,
    tensors: Vec<Tensor>,
}

fn tensor_shapes(hidden: usize, steps: usize) -> [Vec<usize>; 9] {
    let c = hidden;
    [
        vec![c, IN_CHANNELS, KERNEL, KERNEL],
        vec![c],
        vec![steps, c],
        vec![c, c, KERNEL, KERNEL],
        vec![c],
        vec![c, c, KERNEL, KERNEL],
        vec![c],
        vec![1, c, KERNEL, KERNEL],
        vec![1],
    ]
}

/// Fresh network for `height x width` inputs and `steps` timesteps.
pub fn denoiser_init(
    height: usize,
    width: usize,
    hidden: usize,
    steps: usize,
    seed: u64,
) -> Result<DenoiserParams> {
    let mut params = DenoiserParams::zeros(height, width, hidden, steps)?;
    let mut rng = RngStream::new(seed, &[0]);
    for idx in [W1, W2, W3] {
        let t = &mut params.tensors[idx];
        let fan_in = (t.shape[1] * TAPS) as f64;
        let std = libm::sqrt(2.0 / fan_in);
        for w in &mut t.data {
            *w = std * rng.standard_normal();
        }
    }
    Ok(params)
}

impl DenoiserParams {
    /// All-zero tensors with the reference shapes.
    pub fn zeros(height: usize, width: usize, hidden: usize, steps: usize) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(dim_err!(
                "denoiser needs at least {MIN_SIDE}x{MIN_SIDE} inputs, got {height}x{width}"
            ));
        }
        if hidden < MIN_HIDDEN {
            return Err(param_err!(
                "hidden width must be >= {MIN_HIDDEN}, got {hidden}"
            ));
        }
        if steps == 0 {
            return Err(param_err!("denoiser needs at least one timestep"));
        }
        let tensors = TENSOR_NAMES
            .iter()
            .zip(tensor_shapes(hidden, steps))
            .map(|(&name, shape)| Tensor::zeros(name, shape))
            .collect();
        Ok(Self {
            height,
            width,
            hidden,
            steps,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_tensors(
        height: usize,
        width: usize,
        hidden: usize,
        steps: usize,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let mut params = Self::zeros(height, width, hidden, steps)?;
        if tensors.len() != params.tensors.len() {
            return Err(dim_err!(
                "expected {} tensors, got {}",
                params.tensors.len(),
                tensors.len()
            ));
        }
        for (slot, t) in params.tensors.iter_mut().zip(tensors) {
            if slot.name != t.name || slot.shape != t.shape || t.data.len() != slot.data.len() {
                return Err(dim_err!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name,
                    t.shape,
                    slot.name,
                    slot.shape
                ));
            }
            slot.data = t.data;
        }
        Ok(params)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Zero tensors shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    pub(crate) fn same_layout(&self, other: &Self) -> Result<()> {
        let same = self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape);
        if !same {
            return Err(dim_err!("parameter layouts differ"));
        }
        Ok(())
    }

    /// Flat view for perturbation probes.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in &self.tensors {
            if index < t.data.len() {
                return t.data[index];
            }
            index -= t.data.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in &mut self.tensors {
            if index < t.data.len() {
                t.data[index] = value;
                return;
            }
            index -= t.data.len();
        }
        panic!("flat parameter index out of range");
    }

    fn check_input(&self, x_t: &ImageGrid, t: usize) -> Result<()> {
        x_t.ensure_shape(self.height, self.width)?;
        if t == 0 || t > self.steps {
            return Err(Error::Index {
                index: t,
                len: self.steps,
            });
        }
        Ok(())
    }

    fn run(&self, x_t: &ImageGrid, t: usize) -> Activations {
        let (h, w, c) = (self.height, self.width, self.hidden);
        let n = h * w;
        let p = &self.tensors;

        let input = with_depth_channel(x_t);
        let mut h1 = conv3x3(&input, IN_CHANNELS, h, w, &p[W1].data, &p[B1].data, c);
        let emb = &p[EMB].data[(t - 1) * c..t * c];
        for (ch, &e) in emb.iter().enumerate() {
            h1[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += e);
        }
        let a1: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();
        let h2 = conv3x3(&a1, c, h, w, &p[W2].data, &p[B2].data, c);
        let a2: Vec<f64> = h2.iter().map(|&v| silu(v)).collect();
        let h3 = conv3x3(&a2, c, h, w, &p[W3].data, &p[B3].data, c);
        let a3: Vec<f64> = h3.iter().map(|&v| silu(v)).collect();
        let out = conv3x3(&a3, c, h, w, &p[W4].data, &p[B4].data, 1);
        Activations {
            h1,
            a1,
            h2,
            a2,
            h3,
            a3,
            out,
        }
    }

    /// Accumulates gradients of `sum(grad_out * eps_hat)` into `grads`.
    fn backprop(
        &self,
        x_t: &ImageGrid,
        t: usize,
        acts: &Activations,
        grad_out: &[f64],
        grads: &mut DenoiserParams,
    ) {
        let (h, w, c) = (self.height, self.width, self.hidden);
        let n = h * w;
        let p = &self.tensors;
        let g = &mut grads.tensors;

        let mut d_a3 = vec![0.0; c * n];
        let (gw, gb) = split_pair(g, W4);
        conv3x3_backward(
            &acts.a3,
            c,
            h,
            w,
            &p[W4].data,
            grad_out,
            1,
            gw,
            gb,
            Some(&mut d_a3),
        );
        let d_h3: Vec<f64> = d_a3
            .iter()
            .zip(&acts.h3)
            .map(|(&d, &z)| d * silu_grad(z))
            .collect();

        let mut d_a2 = vec![0.0; c * n];
        let (gw, gb) = split_pair(g, W3);
        conv3x3_backward(
            &acts.a2,
            c,
            h,
            w,
            &p[W3].data,
            &d_h3,
            c,
            gw,
            gb,
            Some(&mut d_a2),
        );
        let d_h2: Vec<f64> = d_a2
            .iter()
            .zip(&acts.h2)
            .map(|(&d, &z)| d * silu_grad(z))
            .collect();

        let mut d_a1 = vec![0.0; c * n];
        let (gw, gb) = split_pair(g, W2);
        conv3x3_backward(
            &acts.a1,
            c,
            h,
            w,
            &p[W2].data,
            &d_h2,
            c,
            gw,
            gb,
            Some(&mut d_a1),
        );
        let d_h1: Vec<f64> = d_a1
            .iter()
            .zip(&acts.h1)
            .map(|(&d, &z)| d * silu_grad(z))
            .collect();

        let emb_grad = &mut g[EMB].data[(t - 1) * c..t * c];
        for (ch, slot) in emb_grad.iter_mut().enumerate() {
            *slot += d_h1[ch * n..(ch + 1) * n].iter().sum::<f64>();
        }
        let (gw, gb) = split_pair(g, W1);
        let input = with_depth_channel(x_t);
        conv3x3_backward(
            &input,
            IN_CHANNELS,
            h,
            w,
            &p[W1].data,
            &d_h1,
            c,
            gw,
            gb,
            None,
        );
    }
}

/// Stacks `x_t` with a plane holding the normalized row index in `[-1, 1]`,
/// so the first layer sees absolute depth and not just local texture.
fn with_depth_channel(x_t: &ImageGrid) -> Vec<f64> {
    let (h, w) = x_t.shape();
    let mut input = Vec::with_capacity(IN_CHANNELS * h * w);
    input.extend_from_slice(x_t.data());
    for r in 0..h {
        let depth = 2.0 * r as f64 / (h - 1) as f64 - 1.0;
        input.extend(core::iter::repeat_n(depth, w));
    }
    input
}

fn split_pair(tensors: &mut [Tensor], weight: usize) -> (&mut [f64], &mut [f64]) {
    let (left, right) = tensors.split_at_mut(weight + 1);
    (&mut left[weight].data, &mut right[0].data)
}

struct Activations {
    h1: Vec<f64>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    a2: Vec<f64>,
    h3: Vec<f64>,
    a3: Vec<f64>,
    out: Vec<f64>,
}

/// Predicted noise for `x_t` at timestep `t`.
pub fn denoiser_forward(params: &DenoiserParams, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
    params.check_input(x_t, t)?;
    let acts = params.run(x_t, t);
    ImageGrid::new(params.height, params.width, acts.out)
}

impl EpsPredictor for DenoiserParams {
    fn predict_eps(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        denoiser_forward(self, x_t, t)
    }
}

/// One training example: timestep, noised input, and the noise to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub t: usize,
    pub x_t: ImageGrid,
    pub target_eps: ImageGrid,
}

/// Mean squared error over batch and pixels, and its gradient. Batch items are
/// reduced in order.
pub fn loss_and_grads(
    params: &DenoiserParams,
    batch: &[TrainingExample],
) -> Result<(f64, DenoiserParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss needs a non-empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / (batch.len() * params.height * params.width) as f64;
    let mut loss = 0.0;
    for ex in batch {
        params.check_input(&ex.x_t, ex.t)?;
        ex.target_eps.ensure_same_shape(&ex.x_t)?;
        let acts = params.run(&ex.x_t, ex.t);
        let grad_out: Vec<f64> = acts
            .out
            .iter()
            .zip(ex.target_eps.data())
            .map(|(&y, &e)| {
                let d = y - e;
                loss += d * d;
                2.0 * d * scale
            })
            .collect();
        params.backprop(&ex.x_t, ex.t, &acts, &grad_out, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// Largest disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps exactly
/// zero gradients from dividing by zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares [`loss_and_grads`] against central finite differences with step
/// `h` on every parameter.
pub fn gradient_check(
    params: &DenoiserParams,
    batch: &[TrainingExample],
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grads(params, batch)?;
    let count = params.parameter_count();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        parameters: count,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for i in 0..count {
        let base = params.get_flat(i);
        probe.set_flat(i, base + h);
        let (plus, _) = loss_and_grads(&probe, batch)?;
        probe.set_flat(i, base - h);
        let (minus, _) = loss_and_grads(&probe, batch)?;
        probe.set_flat(i, base);
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get_flat(i);
        let abs = (numeric - analytic).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    Ok(report)
}

/// Overwrites every parameter, including the zero-initialized ones, with
/// `scale * N(0, 1)` draws. For gradient checks away from the initial point.
pub fn randomize(params: &mut DenoiserParams, scale: f64, rng: &mut RngStream) {
    for t in &mut params.tensors {
        for v in &mut t.data {
            *v = scale * rng.standard_normal();
        }
    }
}

#[cfg(test)]
mod tests;
