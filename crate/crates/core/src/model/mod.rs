//! Convolutional GRU sequence autoencoder.
//!
//! The encoder runs four conv + ConvGRU stages at 32², 16², 8² and 4² and
//! carries each cell's hidden state across the fragments of a sequence. The
//! last 4×4×4 hidden state is the code. The decoder sees only that code and
//! reconstructs the last fragment in one recurrent step.

mod cell;
mod codes;
mod train;

use pcapae_nn::checkpoint::{Checkpoint, TensorData};
use pcapae_nn::{
    Activation, Conv2d, ConvTranspose2d, LossKind, ParamStore, Scalar, Tape, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fragment::{Fragment, FragmentMode, SIDE};
use crate::{Error, Result};

pub use cell::{
    CGruCell, CellStep, Phase, CELL_DROPOUT, GATE_KERNEL, HIDDEN_CHANNELS, STAGE_SLOPE,
};
pub use codes::{
    codes_from_bytes, codes_to_bytes, compress, read_codes, write_codes, Code, CodeSet, CODE_LEN,
    CODE_MAGIC,
};
pub use train::{
    reconstruction_loss, reconstruction_losses, shuffled_reconstruction_losses, train,
    ScheduleKind, TrainConfig, TrainReport,
};

/// Spatial size of each encoder scale.
pub const SCALES: [usize; 4] = [32, 16, 8, 4];
pub const CODE_SIDE: usize = 4;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: [Conv2d; 4],
    pub cells: [CGruCell; 4],
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Finest scale first: `cells[3]` runs at 4×4 and receives the code.
    pub cells: [CGruCell; 4],
    /// `ups[i]` upsamples the output of `cells[i + 1]`.
    pub ups: [ConvTranspose2d; 3],
    pub out_conv: Conv2d,
    pub out_proj: Conv2d,
}

/// Parameter handles of the whole network.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// One stage of one encoder time step.
#[derive(Debug, Clone, Copy)]
pub struct StageTrace {
    /// Stage convolution input.
    pub input: Var,
    /// Convolution output before the leaky ReLU.
    pub conv: Var,
    /// Leaky ReLU output, the cell input.
    pub activated: Var,
    pub cell: CellStep,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub inputs: Vec<Var>,
    /// `steps[t][s]`: time step `t`, scale `s`.
    pub steps: Vec<[StageTrace; 4]>,
    pub code: Var,
    pub output: Var,
}

/// One row of the per-layer parameter census.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    /// `Kind-ordinal`, numbered in forward order starting at 1.
    pub label: String,
    pub path: String,
    pub output_channels: usize,
    pub output_side: usize,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct AutoEncoder<T: Scalar> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

fn stage_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Conv2d {
    Conv2d::new(store, name, cin, HIDDEN_CHANNELS, 3, stride, 1, rng)
}

impl<T: Scalar> AutoEncoder<T> {
    /// Fresh model with fan-in uniform weights drawn from `seed`.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let h = HIDDEN_CHANNELS;
        let stages = [
            Conv2d::new(&mut p, "encoder.stage1.conv", 1, 2, 3, 1, 1, &mut rng),
            stage_conv(&mut p, "encoder.stage2.conv", h, 2, &mut rng),
            stage_conv(&mut p, "encoder.stage3.conv", h, 2, &mut rng),
            stage_conv(&mut p, "encoder.stage4.conv", h, 2, &mut rng),
        ];
        let cells = [
            CGruCell::new(&mut p, "encoder.rnn1", 2, &mut rng),
            CGruCell::new(&mut p, "encoder.rnn2", h, &mut rng),
            CGruCell::new(&mut p, "encoder.rnn3", h, &mut rng),
            CGruCell::new(&mut p, "encoder.rnn4", h, &mut rng),
        ];
        let rnn4 = CGruCell::new(&mut p, "decoder.rnn4", h, &mut rng);
        let up4 = ConvTranspose2d::new(&mut p, "decoder.stage4.deconv", h, h, 4, 2, 1, &mut rng);
        let rnn3 = CGruCell::new(&mut p, "decoder.rnn3", h, &mut rng);
        let up3 = ConvTranspose2d::new(&mut p, "decoder.stage3.deconv", h, h, 4, 2, 1, &mut rng);
        let rnn2 = CGruCell::new(&mut p, "decoder.rnn2", h, &mut rng);
        let up2 = ConvTranspose2d::new(&mut p, "decoder.stage2.deconv", h, h, 4, 2, 1, &mut rng);
        let rnn1 = CGruCell::new(&mut p, "decoder.rnn1", h, &mut rng);
        let out_conv = Conv2d::new(&mut p, "decoder.stage1.conv1", h, 2, 3, 1, 1, &mut rng);
        let out_proj = Conv2d::new(&mut p, "decoder.stage1.conv2", 2, 1, 1, 1, 0, &mut rng);
        AutoEncoder {
            arch: Architecture {
                encoder: Encoder { stages, cells },
                decoder: Decoder {
                    cells: [rnn1, rnn2, rnn3, rnn4],
                    ups: [up2, up3, up4],
                    out_conv,
                    out_proj,
                },
            },
            params: p,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Scalar>(&self) -> AutoEncoder<U> {
        AutoEncoder {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Per-layer trainable parameter counts in forward order.
    pub fn census(&self) -> Vec<LayerInfo> {
        let mut rows: Vec<LayerInfo> = Vec::new();
        let mut push = |kind: &str, path: String, ch: usize, side: usize, params: usize| {
            let label = format!("{kind}-{}", rows.len() + 1);
            rows.push(LayerInfo {
                label,
                path,
                output_channels: ch,
                output_side: side,
                params,
            });
        };
        let cell_rows = |push: &mut dyn FnMut(&str, String, usize, usize, usize),
                         c: &CGruCell,
                         path: &str,
                         side: usize| {
            let h = c.hidden_channels;
            push(
                "Conv2d",
                format!("{path}.conv_gates"),
                2 * h,
                side,
                c.conv_gates.num_params(),
            );
            push(
                "GroupNorm",
                format!("{path}.gn_gates"),
                2 * h,
                side,
                c.gn_gates.num_params(),
            );
            push(
                "Conv2d",
                format!("{path}.conv_can"),
                h,
                side,
                c.conv_can.num_params(),
            );
            push(
                "GroupNorm",
                format!("{path}.gn_can"),
                h,
                side,
                c.gn_can.num_params(),
            );
            push("Dropout2d", format!("{path}.dropout"), h, side, 0);
            push("CGRU_cell", path.to_string(), h, side, 0);
        };
        let enc = &self.arch.encoder;
        for s in 0..4 {
            let side = SCALES[s];
            let conv = &enc.stages[s];
            let path = format!("encoder.stage{}.conv", s + 1);
            push(
                "Conv2d",
                path.clone(),
                conv.out_channels,
                side,
                conv.num_params(),
            );
            push(
                "LeakyReLU",
                format!("{path}.leaky"),
                conv.out_channels,
                side,
                0,
            );
            cell_rows(
                &mut push,
                &enc.cells[s],
                &format!("encoder.rnn{}", s + 1),
                side,
            );
        }
        let dec = &self.arch.decoder;
        for s in (0..4).rev() {
            let side = SCALES[s];
            cell_rows(
                &mut push,
                &dec.cells[s],
                &format!("decoder.rnn{}", s + 1),
                side,
            );
            if s > 0 {
                let up = &dec.ups[s - 1];
                let path = format!("decoder.stage{}.deconv", s + 1);
                push(
                    "ConvTranspose2d",
                    path.clone(),
                    up.out_channels,
                    SCALES[s - 1],
                    up.num_params(),
                );
                push(
                    "LeakyReLU",
                    format!("{path}.leaky"),
                    up.out_channels,
                    SCALES[s - 1],
                    0,
                );
            }
        }
        push(
            "Conv2d",
            "decoder.stage1.conv1".into(),
            2,
            SIDE,
            dec.out_conv.num_params(),
        );
        push("LeakyReLU", "decoder.stage1.conv1.leaky".into(), 2, SIDE, 0);
        push(
            "Conv2d",
            "decoder.stage1.conv2".into(),
            1,
            SIDE,
            dec.out_proj.num_params(),
        );
        push("LeakyReLU", "decoder.stage1.conv2.leaky".into(), 1, SIDE, 0);
        rows
    }

    /// Records the encoder over `inputs` (each `[B, 1, 32, 32]`) and the
    /// decoder on the resulting code.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Var],
        phase: &mut Phase<'_>,
    ) -> Result<Forward> {
        let (steps, code) = self.encode_on(tape, inputs, phase)?;
        let output = self.decode_on(tape, code, phase)?;
        Ok(Forward {
            inputs: inputs.to_vec(),
            steps,
            code,
            output,
        })
    }

    pub fn encode_on(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Var],
        phase: &mut Phase<'_>,
    ) -> Result<(Vec<[StageTrace; 4]>, Var)> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter("empty fragment sequence".into()));
        }
        let batch = tape.value(inputs[0]).shape().first().copied().unwrap_or(0);
        for &x in inputs {
            let s = tape.value(x).shape();
            if s != [batch, 1, SIDE, SIDE] {
                return Err(Error::Shape(format!(
                    "fragment batch {s:?}, expected [{batch}, 1, {SIDE}, {SIDE}]"
                )));
            }
        }
        let enc = &self.arch.encoder;
        let mut hidden: [Var; 4] = std::array::from_fn(|s| {
            tape.leaf(Tensor::zeros(&[
                batch,
                HIDDEN_CHANNELS,
                SCALES[s],
                SCALES[s],
            ]))
        });
        let mut steps = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut cur = x;
            let mut trace = Vec::with_capacity(4);
            for s in 0..4 {
                let conv = enc.stages[s].forward(tape, &self.params, cur)?;
                let activated = tape.activation(conv, Activation::LeakyRelu(STAGE_SLOPE))?;
                let cell = enc.cells[s].step(tape, &self.params, activated, hidden[s], phase)?;
                hidden[s] = cell.hidden;
                trace.push(StageTrace {
                    input: cur,
                    conv,
                    activated,
                    cell,
                });
                cur = cell.hidden;
            }
            steps.push(trace.try_into().expect("four stages"));
        }
        Ok((steps, hidden[3]))
    }

    /// Decoder pass from a `[B, 4, 4, 4]` code.
    pub fn decode_on(&self, tape: &mut Tape<T>, code: Var, phase: &mut Phase<'_>) -> Result<Var> {
        let s = tape.value(code).shape().to_vec();
        if s.len() != 4 || s[1..] != [HIDDEN_CHANNELS, CODE_SIDE, CODE_SIDE] {
            return Err(Error::Shape(format!("code {s:?}, expected [B, 4, 4, 4]")));
        }
        let batch = s[0];
        let dec = &self.arch.decoder;
        let zero_in = tape.leaf(Tensor::zeros(&s));
        let mut cur = dec.cells[3]
            .step(tape, &self.params, zero_in, code, phase)?
            .hidden;
        for scale in (0..3).rev() {
            let up = dec.ups[scale].forward(tape, &self.params, cur)?;
            let up = tape.activation(up, Activation::LeakyRelu(STAGE_SLOPE))?;
            let side = SCALES[scale];
            let null = tape.leaf(Tensor::zeros(&[batch, HIDDEN_CHANNELS, side, side]));
            cur = dec.cells[scale]
                .step(tape, &self.params, up, null, phase)?
                .hidden;
        }
        let y = dec.out_conv.forward(tape, &self.params, cur)?;
        let y = tape.activation(y, Activation::LeakyRelu(STAGE_SLOPE))?;
        let y = dec.out_proj.forward(tape, &self.params, y)?;
        Ok(tape.activation(y, Activation::LeakyRelu(STAGE_SLOPE))?)
    }

    /// Code `[1, 4, 4, 4]` of one sequence, dropout disabled.
    pub fn encode(&self, sequence: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let inputs: Vec<Var> = sequence.iter().map(|t| tape.leaf(t.clone())).collect();
        let (_, code) = self.encode_on(&mut tape, &inputs, &mut Phase::Eval)?;
        Ok(tape.value(code).clone())
    }

    pub fn decode(&self, code: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let c = tape.leaf(code.clone());
        let y = self.decode_on(&mut tape, c, &mut Phase::Eval)?;
        Ok(tape.value(y).clone())
    }

    /// Criterion between the reconstruction of `sequence` and its last
    /// element, dropout disabled.
    pub fn sequence_loss(&self, sequence: &[Tensor<T>], kind: LossKind) -> Result<f64> {
        let mut tape = Tape::new();
        let inputs: Vec<Var> = sequence.iter().map(|t| tape.leaf(t.clone())).collect();
        let fwd = self.forward(&mut tape, &inputs, &mut Phase::Eval)?;
        let target = *inputs.last().expect("non-empty sequence");
        let l = tape.loss(fwd.output, target, kind)?;
        Ok(tape.value(l).data()[0].as_f64())
    }

    pub fn to_checkpoint(&self, meta: &ModelMeta) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("mode", meta.mode.name());
        c.set_meta("n", meta.n);
        c.set_meta("epoch", meta.epoch);
        c.set_meta("seed", meta.seed);
        c.set_meta("loss", meta.loss.name());
        for (_, p) in self.params.iter() {
            c.tensors
                .push((p.name.clone(), TensorData::F32(p.value.cast())));
        }
        c
    }

    /// Rebuilds the architecture and overwrites every parameter from `c`.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<(Self, ModelMeta)> {
        let meta = ModelMeta::from_checkpoint(c)?;
        let mut model = AutoEncoder::<T>::new(meta.seed);
        if c.tensors.len() != model.params.len() {
            return Err(Error::Nn(pcapae_nn::NnError::UnsupportedCheckpoint(
                format!(
                    "{} tensors, model has {} parameters",
                    c.tensors.len(),
                    model.params.len()
                ),
            )));
        }
        for p in model.params.iter_mut() {
            let t = c.tensor(&p.name).ok_or_else(|| {
                Error::Nn(pcapae_nn::NnError::UnsupportedCheckpoint(format!(
                    "missing tensor {}",
                    p.name
                )))
            })?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?}",
                    p.name,
                    t.shape()
                )));
            }
            p.value = t.to_f64().cast();
        }
        Ok((model, meta))
    }
}

/// Training metadata stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelMeta {
    pub mode: FragmentMode,
    pub n: usize,
    pub epoch: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl ModelMeta {
    fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            c.meta(k).ok_or_else(|| {
                Error::Nn(pcapae_nn::NnError::UnsupportedCheckpoint(format!(
                    "missing metadata `{k}`"
                )))
            })
        };
        let bad = |k: &str| {
            Error::Nn(pcapae_nn::NnError::UnsupportedCheckpoint(format!(
                "bad metadata `{k}`"
            )))
        };
        Ok(ModelMeta {
            mode: FragmentMode::parse(get("mode")?).ok_or_else(|| bad("mode"))?,
            n: get("n")?.parse().map_err(|_| bad("n"))?,
            epoch: get("epoch")?.parse().map_err(|_| bad("epoch"))?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            loss: LossKind::parse(get("loss")?).ok_or_else(|| bad("loss"))?,
        })
    }
}

/// `[1, 1, 32, 32]` tensor of normalized cell values.
pub fn fragment_tensor<T: Scalar>(f: &Fragment) -> Tensor<T> {
    let data = f.cells.iter().map(|&v| T::of(v as f64 / 255.0)).collect();
    Tensor::from_vec(&[1, 1, SIDE, SIDE], data).expect("fragment has 1024 cells")
}
