//! Convolutional GRU cell.

use pcapae_nn::layers::INIT_SLOPE;
use pcapae_nn::{Activation, Conv2d, GroupNorm, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const HIDDEN_CHANNELS: usize = 4;
pub const GATE_KERNEL: usize = 5;
pub const CELL_DROPOUT: f64 = 0.1;

/// Whether dropout is active, and the generator that drives it.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Phase<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

#[derive(Debug, Clone)]
pub struct CGruCell {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub conv_gates: Conv2d,
    pub gn_gates: GroupNorm,
    pub conv_can: Conv2d,
    pub gn_can: GroupNorm,
    pub dropout: f64,
}

/// Every intermediate of one cell step, kept for relevance propagation.
#[derive(Debug, Clone, Copy)]
pub struct CellStep {
    /// Cell input after dropout.
    pub input: Var,
    pub h_prev: Var,
    pub reset: Var,
    pub update: Var,
    /// `[input; reset ⊙ h_prev]`.
    pub can_input: Var,
    /// Candidate convolution output before normalization.
    pub can_conv: Var,
    pub candidate: Var,
    /// `(1 - update) ⊙ h_prev`.
    pub keep: Var,
    /// `update ⊙ candidate`.
    pub write: Var,
    pub hidden: Var,
}

impl CGruCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_channels: usize,
        rng: &mut R,
    ) -> Self {
        let h = HIDDEN_CHANNELS;
        let cin = input_channels + h;
        let pad = GATE_KERNEL / 2;
        let conv_gates = Conv2d::new(
            store,
            &format!("{name}.conv_gates"),
            cin,
            2 * h,
            GATE_KERNEL,
            1,
            pad,
            rng,
        );
        let gn_gates = GroupNorm::new(store, &format!("{name}.gn_gates"), 2 * h, 2 * h);
        let conv_can = Conv2d::new(
            store,
            &format!("{name}.conv_can"),
            cin,
            h,
            GATE_KERNEL,
            1,
            pad,
            rng,
        );
        let gn_can = GroupNorm::new(store, &format!("{name}.gn_can"), h, h);
        CGruCell {
            input_channels,
            hidden_channels: h,
            conv_gates,
            gn_gates,
            conv_can,
            gn_can,
            dropout: CELL_DROPOUT,
        }
    }

    pub fn num_params(&self) -> usize {
        self.conv_gates.num_params()
            + self.gn_gates.num_params()
            + self.conv_can.num_params()
            + self.gn_can.num_params()
    }

    /// One recurrent step. `h_prev` may be a null map.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        h_prev: Var,
        phase: &mut Phase<'_>,
    ) -> Result<CellStep> {
        let xs = tape.value(x).shape().to_vec();
        let hs = tape.value(h_prev).shape().to_vec();
        if xs.len() != 4 || hs.len() != 4 || xs[0] != hs[0] || xs[2..] != hs[2..] {
            return Err(Error::Shape(format!(
                "cell input {xs:?} does not match hidden state {hs:?}"
            )));
        }
        if xs[1] != self.input_channels || hs[1] != self.hidden_channels {
            return Err(Error::Shape(format!(
                "cell expects {} input and {} hidden channels, got {xs:?} and {hs:?}",
                self.input_channels, self.hidden_channels
            )));
        }
        let input = match phase {
            Phase::Eval => x,
            Phase::Train(rng) => tape.dropout2d(x, self.dropout, true, &mut **rng)?,
        };
        let h = self.hidden_channels;

        let gates_in = tape.concat_channels(&[h_prev, input])?;
        let g = self.conv_gates.forward(tape, store, gates_in)?;
        let g = self.gn_gates.forward(tape, store, g)?;
        let g = tape.activation(g, Activation::Sigmoid)?;
        let reset = tape.slice_channels(g, 0, h)?;
        let update = tape.slice_channels(g, h, 2 * h)?;

        let reset_hidden = tape.mul(reset, h_prev)?;
        let can_input = tape.concat_channels(&[input, reset_hidden])?;
        let can_conv = self.conv_can.forward(tape, store, can_input)?;
        let c = self.gn_can.forward(tape, store, can_conv)?;
        let candidate = tape.activation(c, Activation::Tanh)?;

        let ones = tape.leaf(Tensor::full(tape.value(update).shape(), T::one()));
        let retain = tape.sub(ones, update)?;
        let keep = tape.mul(retain, h_prev)?;
        let write = tape.mul(update, candidate)?;
        let hidden = tape.add(keep, write)?;
        Ok(CellStep {
            input,
            h_prev,
            reset,
            update,
            can_input,
            can_conv,
            candidate,
            keep,
            write,
            hidden,
        })
    }
}

/// Leaky slope used by every stage activation.
pub const STAGE_SLOPE: f64 = INIT_SLOPE;
