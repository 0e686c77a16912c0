//! One-class detectors over code vectors (or flat raw fragments) plus the
//! residual-loss threshold.

mod iforest;
mod lof;
mod naive;
mod ocsvm;

use std::path::Path;

use pcapae_nn::checkpoint::{Checkpoint, TensorData};
use pcapae_nn::Tensor;
use rayon::prelude::*;

use crate::{Error, Result};

pub use iforest::{
    average_path_length, IForestParams, IsolationForest, IsolationTree, Node, ThresholdMode,
};
pub use lof::{Lof, LofParams, LRD_CAP};
pub use naive::NaiveThreshold;
pub use ocsvm::{Kernel, Ocsvm, OcsvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    IForest,
    Lof,
    Ocsvm,
    Naive,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::IForest => "if",
            DetectorKind::Lof => "lof",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "if" | "iforest" => Some(DetectorKind::IForest),
            "lof" => Some(DetectorKind::Lof),
            "ocsvm" => Some(DetectorKind::Ocsvm),
            "naive" => Some(DetectorKind::Naive),
            _ => None,
        }
    }
}

/// Which side of the threshold is anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    HighIsAnomalous,
    LowIsAnomalous,
}

/// `score > threshold` (or `<` for low polarity) flags an anomaly.
pub fn classify(scores: &[f64], threshold: f64, polarity: Polarity) -> Vec<bool> {
    scores
        .iter()
        .map(|&s| match polarity {
            Polarity::HighIsAnomalous => s > threshold,
            Polarity::LowIsAnomalous => s < threshold,
        })
        .collect()
}

/// Linear-interpolation quantile of `values` at `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub(crate) fn check_dims(data: &[Vec<f64>]) -> Result<usize> {
    let dims = data.first().map_or(0, Vec::len);
    if let Some((i, row)) = data.iter().enumerate().find(|(_, r)| r.len() != dims) {
        return Err(Error::Shape(format!(
            "sample {i} has {} features, expected {dims}",
            row.len()
        )));
    }
    Ok(dims)
}

#[derive(Debug, Clone)]
pub enum Detector {
    IForest(IsolationForest),
    Lof(Lof),
    Ocsvm(Ocsvm),
    Naive(NaiveThreshold),
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::IForest(_) => DetectorKind::IForest,
            Detector::Lof(_) => DetectorKind::Lof,
            Detector::Ocsvm(_) => DetectorKind::Ocsvm,
            Detector::Naive(_) => DetectorKind::Naive,
        }
    }

    pub fn polarity(&self) -> Polarity {
        match self {
            Detector::Ocsvm(_) => Polarity::LowIsAnomalous,
            _ => Polarity::HighIsAnomalous,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Detector::IForest(m) => m.threshold,
            Detector::Lof(m) => m.threshold,
            Detector::Ocsvm(_) => 0.0,
            Detector::Naive(m) => m.thr,
        }
    }

    /// For the naive detector a sample is a one-element loss vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Detector::IForest(m) => m.score(x),
            Detector::Lof(m) => m.score(x),
            Detector::Ocsvm(m) => m.decision(x),
            Detector::Naive(_) => x
                .first()
                .copied()
                .ok_or_else(|| Error::Shape("naive threshold needs a loss value".into())),
        }
    }

    pub fn score_all(&self, data: &[Vec<f64>]) -> Result<Vec<f64>> {
        data.par_iter().map(|x| self.score(x)).collect()
    }

    pub fn predict(&self, data: &[Vec<f64>]) -> Result<Vec<bool>> {
        Ok(classify(
            &self.score_all(data)?,
            self.threshold(),
            self.polarity(),
        ))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = match self {
            Detector::IForest(m) => m.to_checkpoint(),
            Detector::Lof(m) => m.to_checkpoint(),
            Detector::Ocsvm(m) => m.to_checkpoint(),
            Detector::Naive(m) => m.to_checkpoint(),
        };
        c.metadata
            .insert(0, ("kind".into(), self.kind().name().into()));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let kind = c
            .meta("kind")
            .and_then(DetectorKind::parse)
            .ok_or_else(|| Error::UnsupportedStore("detector file lacks a known `kind`".into()))?;
        Ok(match kind {
            DetectorKind::IForest => Detector::IForest(IsolationForest::from_checkpoint(c)?),
            DetectorKind::Lof => Detector::Lof(Lof::from_checkpoint(c)?),
            DetectorKind::Ocsvm => Detector::Ocsvm(Ocsvm::from_checkpoint(c)?),
            DetectorKind::Naive => Detector::Naive(NaiveThreshold::from_checkpoint(c)?),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().write(path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

pub(crate) fn put(c: &mut Checkpoint, name: &str, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::from_vec(shape, data).expect("shape matches data");
    c.tensors.push((name.to_string(), TensorData::F64(t)));
}

pub(crate) fn get(c: &Checkpoint, name: &str) -> Result<Tensor<f64>> {
    c.tensor(name)
        .map(TensorData::to_f64)
        .ok_or_else(|| Error::UnsupportedStore(format!("detector file lacks tensor `{name}`")))
}

pub(crate) fn get_meta<T: std::str::FromStr>(c: &Checkpoint, key: &str) -> Result<T> {
    c.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::UnsupportedStore(format!("detector file lacks metadata `{key}`")))
}

pub(crate) fn rows(t: &Tensor<f64>) -> Result<Vec<Vec<f64>>> {
    match t.shape() {
        [m, d] => Ok((0..*m)
            .map(|i| t.data()[i * d..(i + 1) * d].to_vec())
            .collect()),
        s => Err(Error::UnsupportedStore(format!(
            "expected a matrix, found shape {s:?}"
        ))),
    }
}

pub(crate) fn flat(data: &[Vec<f64>]) -> Vec<f64> {
    data.iter().flatten().copied().collect()
}
