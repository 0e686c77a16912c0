//! Parameterized layers. Each layer only holds parameter handles; values
//! live in a [`ParamStore`] so a model can be cast, saved and optimized as
//! one flat list.

use rand::Rng;

use crate::{Activation, ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};

/// Leaky-ReLU slope used by the fan-in initializer.
pub const INIT_SLOPE: f64 = 0.2;

/// Uniform fan-in initialization bound `sqrt(6 / ((1 + slope^2) * fan_in))`.
pub fn init_bound(fan_in: usize) -> f64 {
    (6.0 / ((1.0 + INIT_SLOPE * INIT_SLOPE) * fan_in as f64)).sqrt()
}

fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    bound: f64,
    rng: &mut R,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(in_channels * kernel * kernel);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[out_channels, in_channels, kernel, kernel], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// Transposed convolution; weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(in_channels * kernel * kernel);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[in_channels, out_channels, kernel, kernel], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        ConvTranspose2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        groups: usize,
        channels: usize,
    ) -> Self {
        let gamma = store.add(
            format!("{name}.weight"),
            Tensor::full(&[channels], T::one()),
        );
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[channels]));
        GroupNorm {
            gamma,
            beta,
            groups,
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.group_norm(x, g, b, self.groups, self.eps)
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

/// Convolution followed by a leaky ReLU, the building block of every
/// encoder/decoder stage.
pub fn conv_leaky<T: Scalar>(
    conv: &Conv2d,
    slope: f64,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
) -> Result<Var> {
    let y = conv.forward(tape, store, x)?;
    tape.activation(y, Activation::LeakyRelu(slope))
}
