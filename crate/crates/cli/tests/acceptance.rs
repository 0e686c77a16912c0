//! Acceptance checks for the whole pipeline.
//!
//! Runs every criterion in turn and prints one `PASS` or `FAIL` line per
//! criterion. The process exits non-zero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pcapae_core::detect::{
    classify, IForestParams, IsolationForest, Lof, LofParams, NaiveThreshold, Ocsvm, OcsvmParams,
    Polarity, LRD_CAP,
};
use pcapae_core::explain::{lrp_relevance, LrpConfig, LrpRule};
use pcapae_core::fragment::{
    byte_fragments, store_from_bytes, store_to_bytes, windows, FragmentStore,
};
use pcapae_core::metrics::{compute_metrics, f1_score, read_report, Confusion};
use pcapae_core::model::{
    codes_from_bytes, codes_to_bytes, compress, reconstruction_losses,
    shuffled_reconstruction_losses, train, AutoEncoder, ModelMeta, Phase, TrainConfig, CODE_LEN,
    SCALES,
};
use pcapae_core::pipeline::{read_alerts, Artifacts};
use pcapae_core::traffic::synth::{cycles_for_fragments, periodic_trace, SynthConfig};
use pcapae_core::traffic::{read_labels, read_pcap, write_labels, write_pcap};
use pcapae_core::Error;
use pcapae_nn::checkpoint::Checkpoint;
use pcapae_nn::gradcheck::check_graph;
use pcapae_nn::{Activation, LossKind, NnError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Byte-mode fragments of the synthetic periodic trace, cut to `count`.
fn synthetic_store(count: usize) -> FragmentStore {
    let config = SynthConfig {
        cycles: cycles_for_fragments(&SynthConfig::default(), count),
        ..SynthConfig::default()
    };
    let mut store = byte_fragments(&periodic_trace(&config));
    store.fragments.truncate(count);
    store
}

// ---------- 1: architecture ----------

/// Expected encoder census rows: (label, channels, side, params).
const ENCODER_ROWS: [(&str, usize, usize, usize); 32] = [
    ("Conv2d-1", 2, 32, 20),
    ("LeakyReLU-2", 2, 32, 0),
    ("Conv2d-3", 8, 32, 1208),
    ("GroupNorm-4", 8, 32, 16),
    ("Conv2d-5", 4, 32, 604),
    ("GroupNorm-6", 4, 32, 8),
    ("Dropout2d-7", 4, 32, 0),
    ("CGRU_cell-8", 4, 32, 0),
    ("Conv2d-9", 4, 16, 148),
    ("LeakyReLU-10", 4, 16, 0),
    ("Conv2d-11", 8, 16, 1608),
    ("GroupNorm-12", 8, 16, 16),
    ("Conv2d-13", 4, 16, 804),
    ("GroupNorm-14", 4, 16, 8),
    ("Dropout2d-15", 4, 16, 0),
    ("CGRU_cell-16", 4, 16, 0),
    ("Conv2d-17", 4, 8, 148),
    ("LeakyReLU-18", 4, 8, 0),
    ("Conv2d-19", 8, 8, 1608),
    ("GroupNorm-20", 8, 8, 16),
    ("Conv2d-21", 4, 8, 804),
    ("GroupNorm-22", 4, 8, 8),
    ("Dropout2d-23", 4, 8, 0),
    ("CGRU_cell-24", 4, 8, 0),
    ("Conv2d-25", 4, 4, 148),
    ("LeakyReLU-26", 4, 4, 0),
    ("Conv2d-27", 8, 4, 1608),
    ("GroupNorm-28", 8, 4, 16),
    ("Conv2d-29", 4, 4, 804),
    ("GroupNorm-30", 4, 4, 8),
    ("Dropout2d-31", 4, 4, 0),
    ("CGRU_cell-32", 4, 4, 0),
];

/// Expected decoder parameter rows: four cells
/// with 8→8 and 8→4 5×5 gate convolutions, three 4→4 4×4 transposed
/// convolutions, then a 4→2 3×3 and a 2→1 1×1 convolution.
const DECODER_PARAMS: [usize; 34] = [
    1608, 16, 804, 8, 0, 0, 260, 0, //
    1608, 16, 804, 8, 0, 0, 260, 0, //
    1608, 16, 804, 8, 0, 0, 260, 0, //
    1608, 16, 804, 8, 0, 0, //
    74, 0, 3, 0,
];

const PARAM_RANGE: std::ops::RangeInclusive<usize> = 19_000..=21_000;
const ARCH_BUDGET: Duration = Duration::from_secs(1);

fn architecture() -> Outcome {
    let start = Instant::now();
    let model = AutoEncoder::<f32>::new(0);
    let census = model.census();
    let mut mismatches = Vec::new();
    for (i, &(label, ch, side, params)) in ENCODER_ROWS.iter().enumerate() {
        let row = &census[i];
        if row.label != label
            || (row.output_channels, row.output_side, row.params) != (ch, side, params)
        {
            mismatches.push(label.to_string());
        }
    }
    let decoder: Vec<usize> = census[ENCODER_ROWS.len()..]
        .iter()
        .map(|r| r.params)
        .collect();
    if decoder != DECODER_PARAMS {
        mismatches.push(format!("decoder {decoder:?}"));
    }
    let total = model.num_params();
    let ladder: Vec<usize> = census
        .iter()
        .filter(|r| r.label.starts_with("CGRU_cell"))
        .take(4)
        .map(|r| r.output_side)
        .collect();
    let code = model.encode(&[Tensor::zeros(&[1, 1, 32, 32])]).unwrap();
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty()
        && PARAM_RANGE.contains(&total)
        && ladder == SCALES
        && code.numel() == CODE_LEN
        && elapsed < ARCH_BUDGET;
    outcome(
        pass,
        format!(
            "{} census rows, mismatches {mismatches:?}, total {total} params, ladder {ladder:?}, code {} values, {:.3}s",
            census.len(),
            code.numel(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- 2: gradients ----------

const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name)
    {
        Some(slot) => slot.1 = slot.1.max(err),
        None => worst.push((name, err)),
    };
    let model = AutoEncoder::<f64>::new(11);
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(stride, pad, k) in &[(1, 2, 5), (2, 1, 3), (1, 1, 3), (1, 0, 1)] {
            let inputs = [
                uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut rng),
                uniform(&[2, 3, k, k], -0.5, 0.5, &mut rng),
                uniform(&[2], -0.5, 0.5, &mut rng),
            ];
            let r = check_graph(&inputs, FD_STEP, &mut rng, |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
            });
            record("conv2d", r.unwrap().max_rel_error);
        }
        let inputs = [
            uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng),
            uniform(&[3, 2, 4, 4], -0.5, 0.5, &mut rng),
            uniform(&[2], -0.5, 0.5, &mut rng),
        ];
        let r = check_graph(&inputs, FD_STEP, &mut rng, |t, v| {
            t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
        });
        record("conv_transpose2d", r.unwrap().max_rel_error);

        let inputs = [
            uniform(&[2, 8, 3, 3], -2.0, 2.0, &mut rng),
            uniform(&[8], -1.5, 1.5, &mut rng),
            uniform(&[8], -1.0, 1.0, &mut rng),
        ];
        for groups in [4, 8] {
            let r = check_graph(&inputs, FD_STEP, &mut rng, |t, v| {
                t.group_norm(v[0], v[1], v[2], groups, 1e-5)
            });
            record("group_norm", r.unwrap().max_rel_error);
        }

        let x = [uniform(&[1, 2, 3, 3], -2.0, 2.0, &mut rng)];
        for (name, act) in [
            ("leaky_relu", Activation::LeakyRelu(0.2)),
            ("sigmoid", Activation::Sigmoid),
            ("tanh", Activation::Tanh),
        ] {
            let r = check_graph(&x, FD_STEP, &mut rng, |t, v| t.activation(v[0], act));
            record(name, r.unwrap().max_rel_error);
        }

        let pair = [
            uniform(&[1, 2, 3, 3], -2.0, 2.0, &mut rng),
            uniform(&[1, 2, 3, 3], -2.0, 2.0, &mut rng),
        ];
        let r = check_graph(&pair, FD_STEP, &mut rng, |t, v| {
            let a = t.mul(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let c = t.add(b, v[0])?;
            let cat = t.concat_channels(&[c, v[0]])?;
            t.slice_channels(cat, 1, 3)
        });
        record("elementwise", r.unwrap().max_rel_error);

        let x = [uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut rng)];
        let r = check_graph(&x, FD_STEP, &mut rng, |t, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            t.dropout2d(v[0], 0.5, true, &mut mask_rng)
        });
        record("dropout2d", r.unwrap().max_rel_error);

        let pair = [
            uniform(&[1, 1, 4, 4], 0.05, 0.95, &mut rng),
            uniform(&[1, 1, 4, 4], 0.0, 1.0, &mut rng),
        ];
        let r = check_graph(&pair, FD_STEP, &mut rng, |t, v| {
            t.loss(v[0], v[1], LossKind::Mse)
        });
        record("mse", r.unwrap().max_rel_error);

        for (cell, side) in [(0usize, 6usize), (1, 5)] {
            let cell = &model.arch.encoder.cells[cell];
            let cin = cell.conv_gates.in_channels - 4;
            let inputs = [
                uniform(&[2, cin, side, side], -1.0, 1.0, &mut rng),
                uniform(&[2, 4, side, side], -1.0, 1.0, &mut rng),
            ];
            let r = check_graph(&inputs, FD_STEP, &mut rng, |tape, v| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                cell.step(
                    tape,
                    &model.params,
                    v[0],
                    v[1],
                    &mut Phase::Train(&mut mask_rng),
                )
                .map(|s| s.hidden)
                .map_err(|e| NnError::Shape(e.to_string()))
            });
            record("cgru_step", r.unwrap().max_rel_error);
        }
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let summary: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        max < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "{GRAD_SEEDS} seeds, h {FD_STEP:e}, worst relative error {max:.2e} [{}], {:.1}s",
            summary.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- 3: convergence ----------

const CONVERGENCE_FRAGMENTS: usize = 2000;
const CONVERGENCE_RATIO: f64 = 0.5;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(600);

fn convergence() -> Outcome {
    let store = synthetic_store(CONVERGENCE_FRAGMENTS);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let (_, report) = pool
        .install(|| train(&TrainConfig::default(), &store))
        .unwrap();
    let elapsed = start.elapsed();
    let losses = &report.epoch_losses;
    let ratio = losses[5] / losses[0];
    outcome(
        ratio <= CONVERGENCE_RATIO && elapsed <= CONVERGENCE_BUDGET,
        format!(
            "{} fragments, epoch losses {:?}, epoch6/epoch1 {ratio:.3} (limit {CONVERGENCE_RATIO}), {:.0}s on one thread",
            store.len(),
            losses.iter().map(|l| format!("{l:.5}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- 4: order sensitivity ----------

const ORDER_FRAGMENTS: usize = 600;
const ORDER_N: usize = 3;
const ORDER_RATIO: f64 = 1.2;
const ORDER_MIN_WINDOWS: usize = 500;

fn order_sensitivity() -> Outcome {
    let store = synthetic_store(ORDER_FRAGMENTS);
    let config = TrainConfig {
        n: ORDER_N,
        ..TrainConfig::default()
    };
    let (model, _) = train(&config, &store).unwrap();
    let in_order = reconstruction_losses(&model, &store, ORDER_N, LossKind::Mse).unwrap();
    let shuffled =
        shuffled_reconstruction_losses(&model, &store, ORDER_N, LossKind::Mse, 77).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&shuffled) / mean(&in_order);
    outcome(
        ratio >= ORDER_RATIO && in_order.len() >= ORDER_MIN_WINDOWS,
        format!(
            "{} windows of n={ORDER_N}, in-order {:.5}, shuffled {:.5}, ratio {ratio:.2} (limit {ORDER_RATIO})",
            in_order.len(),
            mean(&in_order),
            mean(&shuffled)
        ),
    )
}

// ---------- 5: windowing ----------

fn windowing() -> Outcome {
    let law = (1..=40).all(|len| (1..=len).all(|n| windows(len, n).unwrap().len() == len - n + 1));
    let model = AutoEncoder::<f32>::new(2);
    let codes = compress(&model, &synthetic_store(7), 3).unwrap();
    let pass = law && codes.len() == 5 && windows(7, 3).unwrap().len() == 5;
    outcome(
        pass,
        format!(
            "law holds for all len<=40: {law}; 7 fragments with n=3 give {} codes",
            codes.len()
        ),
    )
}

// ---------- 6: metrics ----------

const F1_TARGET: f64 = 0.8452;
const F1_TOL: f64 = 1e-4;

fn metric_constants() -> Outcome {
    let f1 = f1_score(99.19, 73.63);
    let empty = compute_metrics(
        Confusion {
            tp: 0,
            fp: 3,
            tn: 7,
            fn_: 0,
        },
        0.0,
        0.0,
    );
    let pass = (f1 - F1_TARGET).abs() <= F1_TOL && empty.rc == 100.0;
    outcome(
        pass,
        format!(
            "F1(99.19, 73.63) = {f1:.6}, recall with tp+fn=0 is {}",
            empty.rc
        ),
    )
}

// ---------- 7: naive threshold ----------

const NAIVE_SAMPLES: usize = 100_000;
const NAIVE_TAIL: f64 = 0.015;

fn naive_threshold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut draw =
        |n: usize| -> Vec<f64> { (0..n).map(|_| 0.02 + 0.003 * gaussian(&mut rng)).collect() };
    let validation = draw(NAIVE_SAMPLES);
    let t = NaiveThreshold::fit(&validation, NaiveThreshold::DEFAULT_NU).unwrap();
    let fresh = draw(NAIVE_SAMPLES);
    let flagged = classify(&fresh, t.thr, Polarity::HighIsAnomalous)
        .iter()
        .filter(|&&f| f)
        .count();
    let rate = flagged as f64 / NAIVE_SAMPLES as f64;
    let toy = NaiveThreshold::fit(&[-0.004, 0.004], 2.5).unwrap();
    let pass = rate <= NAIVE_TAIL && toy.aml == 0.0 && (toy.thr - 0.01).abs() < 1e-15;
    outcome(
        pass,
        format!(
            "fresh-sample flag rate {:.3}% (limit {:.1}%), thr(0, 0.004, 2.5) = {}",
            100.0 * rate,
            100.0 * NAIVE_TAIL,
            toy.thr
        ),
    )
}

// ---------- 8: detector oracles ----------

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Direct evaluation of k-distance, reachability, lrd and LOF.
struct LofOracle<'a> {
    train: &'a [Vec<f64>],
    k: usize,
}

impl LofOracle<'_> {
    fn hood(&self, x: &[f64], skip: Option<usize>) -> Vec<usize> {
        let mut d: Vec<f64> = (0..self.train.len())
            .filter(|&j| Some(j) != skip)
            .map(|j| dist(x, &self.train[j]))
            .collect();
        d.sort_by(f64::total_cmp);
        let kd = d[self.k - 1];
        (0..self.train.len())
            .filter(|&j| Some(j) != skip && dist(x, &self.train[j]) <= kd)
            .collect()
    }

    fn k_distance(&self, j: usize) -> f64 {
        let x = &self.train[j];
        self.hood(x, Some(j))
            .iter()
            .map(|&b| dist(x, &self.train[b]))
            .fold(0.0, f64::max)
    }

    fn lrd(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let n = self.hood(x, skip);
        let reach = n
            .iter()
            .map(|&b| self.k_distance(b).max(dist(x, &self.train[b])))
            .sum::<f64>()
            / n.len() as f64;
        if reach > 0.0 {
            (1.0 / reach).min(LRD_CAP)
        } else {
            LRD_CAP
        }
    }

    fn lof(&self, x: &[f64]) -> f64 {
        let n = self.hood(x, None);
        let neigh = n
            .iter()
            .map(|&b| self.lrd(&self.train[b], Some(b)))
            .sum::<f64>()
            / n.len() as f64;
        neigh / self.lrd(x, None)
    }
}

/// Euclidean projection onto `{0 <= a <= c, sum a = 1}`.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let total = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    v.iter()
        .map(|x| (x - 0.5 * (lo + hi)).clamp(0.0, c))
        .collect()
}

/// Minimum of `a' K a / 2` over the box-simplex by projected gradient.
fn qp_oracle(gram: &[Vec<f64>], c: f64) -> f64 {
    let m = gram.len();
    let lipschitz = gram
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut a = project(&vec![1.0 / m as f64; m], c);
    for _ in 0..50_000 {
        let next: Vec<f64> = (0..m)
            .map(|i| a[i] - (0..m).map(|j| gram[i][j] * a[j]).sum::<f64>() / lipschitz)
            .collect();
        a = project(&next, c);
    }
    0.5 * (0..m)
        .map(|i| (0..m).map(|j| a[i] * gram[i][j] * a[j]).sum::<f64>())
        .sum::<f64>()
}

const LOF_CASES: usize = 100;
const LOF_TOL: f64 = 1e-9;
const QP_TOL: f64 = 1e-3;
/// SMO stopping tolerance for the oracle comparison.
const QP_SOLVER_TOL: f64 = 1e-4;
const IF_RUNS: u64 = 100;
const IF_WINS: usize = 95;

fn detector_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lof_worst = 0.0f64;
    for case in 0..LOF_CASES {
        let m = rng.gen_range(3..=64);
        let k = rng.gen_range(1..m);
        let dims = rng.gen_range(1..5);
        let grid = case % 2 == 0;
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dims)
                .map(|_| {
                    if grid {
                        rng.gen_range(0..4) as f64
                    } else {
                        gaussian(rng)
                    }
                })
                .collect()
        };
        let data: Vec<Vec<f64>> = (0..m).map(|_| sample(&mut rng)).collect();
        let lof = Lof::fit(
            &data,
            LofParams {
                k,
                contamination: 0.1,
            },
        )
        .unwrap();
        let oracle = LofOracle { train: &data, k };
        for _ in 0..5 {
            let q = sample(&mut rng);
            let want = oracle.lof(&q);
            lof_worst = lof_worst.max((lof.score(&q).unwrap() - want).abs() / want.abs());
        }
    }

    let mut qp_worst = 0.0f64;
    let mut qp_default_tol = 0.0f64;
    for case in 0..12 {
        let m = rng.gen_range(5..=20);
        let data: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..3).map(|_| gaussian(&mut rng)).collect())
            .collect();
        let params = OcsvmParams {
            nu: [0.1, 0.3, 0.5, 0.8][case % 4],
            degree: [2, 3, 4][case % 3],
            tol: QP_SOLVER_TOL,
            ..OcsvmParams::default()
        };
        let model = Ocsvm::fit(&data, params).unwrap();
        let z: Vec<Vec<f64>> = data
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&model.mean)
                    .zip(&model.scale)
                    .map(|((v, mu), s)| (v - mu) / s)
                    .collect()
            })
            .collect();
        let gram: Vec<Vec<f64>> = z
            .iter()
            .map(|a| z.iter().map(|b| model.kernel.eval(a, b).unwrap()).collect())
            .collect();
        let oracle = qp_oracle(&gram, 1.0 / (params.nu * m as f64));
        qp_worst = qp_worst.max((model.objective - oracle).abs());
        let loose = Ocsvm::fit(
            &data,
            OcsvmParams {
                tol: OcsvmParams::default().tol,
                ..params
            },
        )
        .unwrap();
        qp_default_tol = qp_default_tol.max((loose.objective - oracle).abs());
    }

    let mut wins = 0;
    for seed in 0..IF_RUNS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut data: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![0.1 * gaussian(&mut rng), 0.1 * gaussian(&mut rng)])
            .collect();
        data.push(vec![3.0, -3.0]);
        let forest = IsolationForest::fit(&data, IForestParams::default(), seed).unwrap();
        let top = forest.score(&data[200]).unwrap();
        if data[..200].iter().all(|x| forest.score(x).unwrap() < top) {
            wins += 1;
        }
    }

    let pass = lof_worst <= LOF_TOL && qp_worst <= QP_TOL && wins >= IF_WINS;
    outcome(
        pass,
        format!(
            "LOF worst relative error {lof_worst:.1e} over {LOF_CASES} sets, OCSVM objective gap {qp_worst:.1e} \
             at solver tol {QP_SOLVER_TOL:e} ({qp_default_tol:.1e} at the default tol), IF outlier ranked first in {wins}/{IF_RUNS}"
        ),
    )
}

// ---------- 9: LRP conservation ----------

const LRP_TOL: f64 = 1e-3;
const LRP_SEEDS: u64 = 20;

fn lrp_leak(config: &LrpConfig) -> (usize, f64) {
    let mut worst = 0.0f64;
    let mut held = 0;
    for seed in 0..LRP_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = AutoEncoder::<f64>::new(seed);
        let window = [uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng)];
        let map = lrp_relevance(&model, &window, 0, config).unwrap();
        let rel = (map.sum() + map.history_relevance - map.total_relevance).abs()
            / map.total_relevance.abs();
        if rel <= LRP_TOL {
            held += 1;
        }
        worst = worst.max(rel);
    }
    (held, worst)
}

fn lrp_conservation() -> Outcome {
    let default = LrpConfig::default();
    let (held, worst) = lrp_leak(&default);
    let model = AutoEncoder::<f64>::new(1);
    let zero = lrp_relevance(&model, &[Tensor::zeros(&[1, 1, 32, 32])], 0, &default).unwrap();
    let zero_ok = zero.values.iter().all(|&v| v == 0.0);
    let sweep: Vec<String> = [1e-9, 1e-12]
        .iter()
        .map(|&epsilon| {
            let (h, w) = lrp_leak(&LrpConfig {
                rule: LrpRule::Epsilon,
                epsilon,
            });
            format!("eps {epsilon:e}: {h}/{LRP_SEEDS} within tol, worst {w:.1e}")
        })
        .collect();
    outcome(
        held as u64 == LRP_SEEDS && zero_ok,
        format!(
            "default eps {:e}: {held}/{LRP_SEEDS} models conserve within {LRP_TOL:e}, worst {worst:.2e}; zero input gives zero map: {zero_ok}; [{}]",
            default.epsilon,
            sweep.join("; ")
        ),
    )
}

// ---------- 10: end-to-end ----------

const E2E_BUDGET: Duration = Duration::from_secs(900);

fn pcapae(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pcapae"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "pcapae {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn end_to_end_run(dir: &Path) -> Result<Outcome, String> {
    let frames = periodic_trace(&SynthConfig {
        cycles: 20,
        ..SynthConfig::default()
    });
    let benign = dir.join("benign.pcap");
    write_pcap(&frames, &benign).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let arts = Artifacts::new(&out);
    let config = dir.join("run.conf");
    fs::write(
        &config,
        format!(
            "pcap = {}\ndetector = naive\nn = 2\nseed = 3\nattack = dos\ntarget = host:192.168.1.21\nintensity = 2000\n\
             test_pcap = {}\ntest_labels = {}\n",
            benign.display(),
            arts.injected_pcap().display(),
            arts.injected_labels().display()
        ),
    )
    .map_err(|e| e.to_string())?;
    let common = [
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    for stage in [
        "inject", "fragment", "train-ae", "compress", "train-ad", "evaluate",
    ] {
        let mut args = vec![stage];
        args.extend_from_slice(&common);
        pcapae(&args)?;
    }

    let test_frames = read_pcap(arts.injected_pcap()).map_err(|e| e.to_string())?;
    let labels = read_labels(arts.injected_labels()).map_err(|e| e.to_string())?;
    let injected = labels.iter().filter(|&&l| l).count();
    let alerts = read_alerts(arts.alerts()).map_err(|e| e.to_string())?;
    let complete = alerts.iter().all(|a| {
        a.score.is_finite()
            && a.loss.is_finite()
            && a.heatmap.exists()
            && !a.frames.is_empty()
            && a.frames.iter().all(|&f| (f as usize) < test_frames.len())
    });
    let rows = read_report(arts.metrics()).map_err(|e| e.to_string())?;
    let row = rows.first().ok_or("metrics CSV has no rows")?;
    Ok(outcome(
        injected > 0 && !alerts.is_empty() && complete && row.detector == "naive",
        format!(
            "{injected} DoS frames injected into {} frames, {} alerts, every alert complete: {complete}, \
             metrics row pr {:.2} rc {:.2} f1 {:.4}",
            test_frames.len(),
            alerts.len(),
            row.metrics.pr,
            row.metrics.rc,
            row.metrics.f1
        ),
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut result = end_to_end_run(dir.path()).unwrap_or_else(|e| outcome(false, e));
    let elapsed = start.elapsed();
    result.pass &= elapsed <= E2E_BUDGET;
    result.detail = format!("{}, {:.0}s", result.detail, elapsed.as_secs_f64());
    result
}

// ---------- 11: formats ----------

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let frames = periodic_trace(&SynthConfig {
        cycles: 2,
        ..SynthConfig::default()
    });
    let first = dir.path().join("a.pcap");
    let second = dir.path().join("b.pcap");
    write_pcap(&frames, &first).unwrap();
    write_pcap(&read_pcap(&first).unwrap(), &second).unwrap();
    let pcap_ok = fs::read(&first).unwrap() == fs::read(&second).unwrap();

    let store = byte_fragments(&frames);
    let bytes = store_to_bytes(&store).unwrap();
    let store_ok = store_to_bytes(&store_from_bytes(&bytes).unwrap()).unwrap() == bytes;

    let model = AutoEncoder::<f32>::new(4);
    let meta = ModelMeta {
        mode: store.mode,
        n: 2,
        epoch: 6,
        seed: 4,
        loss: LossKind::Mse,
    };
    let ckpt = model.to_checkpoint(&meta).to_bytes().unwrap();
    let (back, back_meta) =
        AutoEncoder::<f32>::from_checkpoint(&Checkpoint::from_bytes(&ckpt).unwrap()).unwrap();
    let ckpt_ok = back.to_checkpoint(&back_meta).to_bytes().unwrap() == ckpt;

    let codes = codes_to_bytes(&compress(&model, &store, 2).unwrap()).unwrap();
    let codes_ok = codes_to_bytes(&codes_from_bytes(&codes).unwrap()).unwrap() == codes;

    let labels = dir.path().join("l.labels");
    write_labels(&[true, false, true], &labels).unwrap();
    let labels_ok = read_labels(&labels).unwrap() == [true, false, true];

    let mut tampered = bytes.clone();
    let mid = tampered.len() / 2;
    tampered[mid] ^= 0x40;
    let corrupt_ok = matches!(store_from_bytes(&tampered), Err(Error::CorruptStore(_)));

    outcome(
        pcap_ok && store_ok && ckpt_ok && codes_ok && labels_ok && corrupt_ok,
        format!(
            "pcap {pcap_ok}, store {store_ok}, checkpoint {ckpt_ok}, codes {codes_ok}, labels {labels_ok}, \
             flipped store byte detected {corrupt_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("architecture fidelity", architecture),
        ("gradient correctness", gradients),
        ("training convergence", convergence),
        ("order sensitivity", order_sensitivity),
        ("windowing law", windowing),
        ("metric constants", metric_constants),
        ("naive threshold", naive_threshold),
        ("detector oracles", detector_oracles),
        ("LRP conservation", lrp_conservation),
        ("end-to-end smoke", end_to_end),
        ("format round-trips", format_round_trips),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
