//! Layer-wise relevance propagation from the code back onto the last
//! fragment of a window, and heatmap rendering.
//!
//! Relevance starts at the code activations and walks back through the last
//! time step only. Convolutions redistribute it with the epsilon or z⁺ rule,
//! ignoring biases. Group norms, tanh and leaky ReLUs pass it through
//! unchanged. At each GRU output `h = keep + write` relevance is split in
//! proportion to `|keep|` and `|write|`; gates are held constant, so the
//! `write` share flows into the candidate convolution and everything that
//! reaches the previous hidden state is reported as history relevance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pcapae_nn::{Conv2d, Scalar, Tape, Tensor, Var};

use crate::fragment::{Fragment, CELLS, SIDE};
use crate::model::{AutoEncoder, Phase};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrpRule {
    Epsilon,
    ZPlus,
}

impl LrpRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "epsilon" => Some(LrpRule::Epsilon),
            "z_plus" | "zplus" => Some(LrpRule::ZPlus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrpConfig {
    pub rule: LrpRule,
    pub epsilon: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            rule: LrpRule::Epsilon,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    /// Row-major 32×32 relevance of the last fragment's cells.
    pub values: Vec<f64>,
    pub window: usize,
    /// Relevance seeded at the code layer.
    pub total_relevance: f64,
    /// Relevance that flowed into earlier time steps.
    pub history_relevance: f64,
}

impl RelevanceMap {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * SIDE + col]
    }
}

/// Redistributes output relevance `r` (`[C_out, H_out, W_out]`) of a
/// bias-free convolution onto its input activations `a` (`[C_in, H, W]`).
/// `weight` is `[C_out, C_in, k, k]`.
pub fn conv_relevance(
    a: &Tensor<f64>,
    weight: &Tensor<f64>,
    stride: usize,
    pad: usize,
    r: &Tensor<f64>,
    config: &LrpConfig,
) -> Result<Tensor<f64>> {
    let (&[cin, h, w], &[cout, wcin, k, k2], &[rc, ho, wo]) =
        (a.shape(), weight.shape(), r.shape())
    else {
        return Err(Error::Shape(format!(
            "relevance shapes {:?}, {:?}, {:?}",
            a.shape(),
            weight.shape(),
            r.shape()
        )));
    };
    if wcin != cin || rc != cout || k != k2 {
        return Err(Error::Shape(format!(
            "weight {:?} does not connect input {:?} to output {:?}",
            weight.shape(),
            a.shape(),
            r.shape()
        )));
    }
    let (av, wv, rv) = (a.data(), weight.data(), r.data());
    let z = |ci: usize, y: usize, x: usize, co: usize, ky: usize, kx: usize| {
        let v = av[(ci * h + y) * w + x] * wv[((co * cin + ci) * k + ky) * k + kx];
        match config.rule {
            LrpRule::Epsilon => v,
            LrpRule::ZPlus => v.max(0.0),
        }
    };
    let taps = |oy: usize, ox: usize| {
        (0..k)
            .flat_map(move |ky| (0..k).map(move |kx| (ky, kx)))
            .filter_map(move |(ky, kx)| {
                let y = (oy * stride + ky).checked_sub(pad)?;
                let x = (ox * stride + kx).checked_sub(pad)?;
                (y < h && x < w).then_some((ky, kx, y, x))
            })
    };
    let mut out = vec![0.0; cin * h * w];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let rk = rv[(co * ho + oy) * wo + ox];
                if rk == 0.0 {
                    continue;
                }
                let mut total = 0.0;
                for (ky, kx, y, x) in taps(oy, ox) {
                    for ci in 0..cin {
                        total += z(ci, y, x, co, ky, kx);
                    }
                }
                let stab = match config.rule {
                    LrpRule::Epsilon => config.epsilon * if total >= 0.0 { 1.0 } else { -1.0 },
                    LrpRule::ZPlus => config.epsilon,
                };
                let s = rk / (total + stab);
                for (ky, kx, y, x) in taps(oy, ox) {
                    for ci in 0..cin {
                        out[(ci * h + y) * w + x] += z(ci, y, x, co, ky, kx) * s;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[cin, h, w], out)?)
}

fn unbatched(tape: &Tape<f64>, v: Var) -> Result<Tensor<f64>> {
    let t = tape.value(v);
    if t.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericFault(
            "non-finite activation during relevance propagation".into(),
        ));
    }
    Ok(Tensor::from_vec(&t.shape()[1..], t.data().to_vec())?)
}

fn through_conv(
    tape: &Tape<f64>,
    model: &AutoEncoder<f64>,
    conv: &Conv2d,
    input: Var,
    r: &Tensor<f64>,
    config: &LrpConfig,
) -> Result<Tensor<f64>> {
    let a = unbatched(tape, input)?;
    let weight = &model.params.get(conv.weight).value;
    conv_relevance(&a, weight, conv.stride, conv.pad, r, config)
}

/// Relevance of the last fragment of `window` for the window's code.
pub fn lrp_relevance<T: Scalar>(
    model: &AutoEncoder<T>,
    window: &[Tensor<T>],
    window_id: usize,
    config: &LrpConfig,
) -> Result<RelevanceMap> {
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }
    let model: AutoEncoder<f64> = model.cast();
    let mut tape = Tape::new();
    let inputs: Vec<Var> = window.iter().map(|t| tape.leaf(t.cast())).collect();
    let (steps, code) = model.encode_on(&mut tape, &inputs, &mut Phase::Eval)?;
    let last = steps.last().expect("non-empty window");
    let enc = &model.arch.encoder;

    let seed = unbatched(&tape, code)?;
    let mut r = match config.rule {
        LrpRule::Epsilon => seed.clone(),
        LrpRule::ZPlus => seed.map(f64::abs),
    };
    let total_relevance: f64 = r.data().iter().sum();
    let mut history = 0.0;

    for s in (0..4).rev() {
        let trace = &last[s];
        let cell = &trace.cell;
        let keep = unbatched(&tape, cell.keep)?;
        let write = unbatched(&tape, cell.write)?;
        let mut to_candidate = vec![0.0; r.numel()];
        for (i, out) in to_candidate.iter_mut().enumerate() {
            let (k, w) = (keep.data()[i].abs(), write.data()[i].abs());
            if k + w > 0.0 {
                *out = r.data()[i] * w / (k + w);
                history += r.data()[i] * k / (k + w);
            }
        }
        let r_can = Tensor::from_vec(r.shape(), to_candidate)?;
        let cgru = &enc.cells[s];
        let r_in = through_conv(
            &tape,
            &model,
            &cgru.conv_can,
            cell.can_input,
            &r_can,
            config,
        )?;
        let cin = cgru.input_channels;
        let plane = r_in.numel() / r_in.shape()[0];
        let (to_input, to_history) = r_in.data().split_at(cin * plane);
        history += to_history.iter().sum::<f64>();
        let r_act = Tensor::from_vec(&[cin, r_in.shape()[1], r_in.shape()[2]], to_input.to_vec())?;
        r = through_conv(&tape, &model, &enc.stages[s], trace.input, &r_act, config)?;
    }

    Ok(RelevanceMap {
        values: r.into_data(),
        window: window_id,
        total_relevance,
        history_relevance: history,
    })
}

pub const HEATMAP_SCALE: usize = 8;

/// Binary PGM with the fragment bytes on the left and relevance on the
/// right, mid-gray at zero and saturated at the largest magnitude.
pub fn heatmap_pgm(map: &RelevanceMap, fragment: &Fragment) -> Vec<u8> {
    let scale = HEATMAP_SCALE;
    let (width, height) = (2 * SIDE * scale, SIDE * scale);
    let peak = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let shade = |v: f64| {
        if peak > 0.0 {
            (127.5 + 127.5 * v / peak).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for py in 0..height {
        let row = py / scale;
        for px in 0..width {
            let col = (px / scale) % SIDE;
            out.push(if px < SIDE * scale {
                fragment.cells[row * SIDE + col]
            } else {
                shade(map.at(row, col))
            });
        }
    }
    out
}

/// `row,col,byte,relevance` for all 1024 cells.
pub fn heatmap_csv(map: &RelevanceMap, fragment: &Fragment) -> String {
    let mut out = String::from("row,col,byte,relevance\n");
    for i in 0..CELLS {
        let _ = writeln!(
            out,
            "{},{},{},{:e}",
            i / SIDE,
            i % SIDE,
            fragment.cells[i],
            map.values[i]
        );
    }
    out
}

/// Writes `<stem>.pgm` and `<stem>.csv`, returning the image path.
pub fn render_heatmap(
    map: &RelevanceMap,
    fragment: &Fragment,
    stem: impl AsRef<Path>,
) -> Result<std::path::PathBuf> {
    if map.values.len() != CELLS || fragment.cells.len() != CELLS {
        return Err(Error::Shape(
            "heatmap needs 1024 cells on both panels".into(),
        ));
    }
    let stem = stem.as_ref();
    let pgm = stem.with_extension("pgm");
    fs::write(&pgm, heatmap_pgm(map, fragment))?;
    fs::write(stem.with_extension("csv"), heatmap_csv(map, fragment))?;
    Ok(pgm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_conv_matches_direct_formula() {
        let a = Tensor::from_vec(&[2, 1, 1], vec![1.0, 3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2, 1, 1], vec![2.0, -0.5]).unwrap();
        let r = Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap();
        let cfg = LrpConfig {
            epsilon: 1e-12,
            ..LrpConfig::default()
        };
        let got = conv_relevance(&a, &w, 1, 0, &r, &cfg).unwrap();
        // z = (2, -1.5), Σz = 0.5
        assert!((got.data()[0] - 2.0).abs() < 1e-9);
        assert!((got.data()[1] + 1.5).abs() < 1e-9);
    }

    #[test]
    fn zero_relevance_renders_mid_gray() {
        let map = RelevanceMap {
            values: vec![0.0; CELLS],
            window: 0,
            total_relevance: 0.0,
            history_relevance: 0.0,
        };
        let pgm = heatmap_pgm(&map, &Fragment::zeroed());
        let header = b"P5\n512 256\n255\n".len();
        let body = &pgm[header..];
        assert_eq!(body.len(), 512 * 256);
        assert!(body
            .chunks(512)
            .all(|row| row[256..].iter().all(|&p| p == 128)));
    }

    #[test]
    fn hot_cell_is_brightest() {
        let mut values = vec![0.0; CELLS];
        values[5 * SIDE + 7] = 3.0;
        values[0] = -1.0;
        let map = RelevanceMap {
            values,
            window: 0,
            total_relevance: 2.0,
            history_relevance: 0.0,
        };
        let pgm = heatmap_pgm(&map, &Fragment::zeroed());
        let body = &pgm[b"P5\n512 256\n255\n".len()..];
        let px = |row: usize, col: usize| body[(row * 8) * 512 + 256 + col * 8];
        assert_eq!(px(5, 7), 255);
        let hot: Vec<(usize, usize)> = (0..SIDE)
            .flat_map(|r| (0..SIDE).map(move |c| (r, c)))
            .filter(|&(r, c)| px(r, c) == 255)
            .collect();
        assert_eq!(hot, vec![(5, 7)]);
        assert_eq!(
            heatmap_csv(&map, &Fragment::zeroed()).lines().count(),
            CELLS + 1
        );
    }
}
