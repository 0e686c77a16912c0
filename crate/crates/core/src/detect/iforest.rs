//! Isolation Forest.

use pcapae_nn::checkpoint::Checkpoint;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_dims, get, get_meta, put, quantile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// `(1 - contamination)` quantile of the training scores.
    Quantile,
    /// Score at the median training path length.
    MedianHeight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IForestParams {
    pub n_estimators: usize,
    pub max_features: usize,
    pub max_samples: usize,
    pub contamination: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for IForestParams {
    fn default() -> Self {
        IForestParams {
            n_estimators: 150,
            max_features: 16,
            max_samples: 256,
            contamination: 1e-5,
            threshold_mode: ThresholdMode::Quantile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Samples with `x[feature] <= value` go left.
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl IsolationTree {
    /// Grows a tree on `rows` of `data`, splitting only on `features`.
    pub fn grow(
        data: &[Vec<f64>],
        rows: Vec<usize>,
        features: &[usize],
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.build(data, rows, features, 0, max_depth, rng);
        tree
    }

    fn build(
        &mut self,
        data: &[Vec<f64>],
        rows: Vec<usize>,
        features: &[usize],
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= max_depth {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = features
            .iter()
            .filter_map(|&f| {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                        (lo.min(data[r][f]), hi.max(data[r][f]))
                    });
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        let value = lo + (hi - lo) * rng.gen::<f64>();
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| data[i][feature] <= value);
        let left = self.build(data, l, features, depth + 1, max_depth, rng);
        let right = self.build(data, r, features, depth + 1, max_depth, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Depth of the leaf reached by `x` plus the leaf-size credit.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature] <= value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// nodes: `2 H(n-1) - 2 (n-1) / n`, with `c(2) = 1` and `c(n <= 1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
            2.0 * h - 2.0 * (n - 1) as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    pub params: IForestParams,
    /// Subsample size ψ.
    pub psi: usize,
    pub dims: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl IsolationForest {
    pub fn fit(data: &[Vec<f64>], params: IForestParams, seed: u64) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "isolation forest needs at least 2 samples, got {}",
                data.len()
            )));
        }
        if params.n_estimators == 0 || params.max_features == 0 || params.max_samples < 2 {
            return Err(Error::InvalidParameter(
                "isolation forest needs at least one tree, one feature and a subsample of 2".into(),
            ));
        }
        let dims = check_dims(data)?;
        let psi = params.max_samples.min(data.len());
        let max_depth = (psi as f64).log2().ceil() as usize;
        let n_features = params.max_features.min(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_estimators)
            .map(|_| {
                let rows = sample(&mut rng, data.len(), psi).into_vec();
                let mut features = sample(&mut rng, dims, n_features).into_vec();
                features.sort_unstable();
                IsolationTree::grow(data, rows, &features, max_depth, &mut rng)
            })
            .collect();
        let mut model = IsolationForest {
            trees,
            params,
            psi,
            dims,
            seed,
            threshold: f64::INFINITY,
        };
        let train: Vec<f64> = data.iter().map(|x| model.mean_path_length(x)).collect();
        model.threshold = match params.threshold_mode {
            ThresholdMode::Quantile => {
                let scores: Vec<f64> = train.iter().map(|&h| model.normalize(h)).collect();
                quantile(&scores, 1.0 - params.contamination)
            }
            ThresholdMode::MedianHeight => model.normalize(quantile(&train, 0.5)),
        };
        Ok(model)
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    fn normalize(&self, mean_height: f64) -> f64 {
        2f64.powf(-mean_height / average_path_length(self.psi))
    }

    /// `2^(-E[h(x)] / c(ψ))`; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims {
            return Err(Error::Shape(format!(
                "sample has {} features, model expects {}",
                x.len(),
                self.dims
            )));
        }
        Ok(self.normalize(self.mean_path_length(x)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("seed", self.seed);
        c.set_meta("contamination", self.params.contamination);
        c.set_meta("n_estimators", self.params.n_estimators);
        c.set_meta("max_features", self.params.max_features);
        c.set_meta("max_samples", self.params.max_samples);
        c.set_meta(
            "threshold_mode",
            match self.params.threshold_mode {
                ThresholdMode::Quantile => "quantile",
                ThresholdMode::MedianHeight => "median",
            },
        );
        c.set_meta("psi", self.psi);
        c.set_meta("dims", self.dims);
        let mut starts = Vec::with_capacity(self.trees.len());
        let mut nodes = Vec::new();
        for t in &self.trees {
            starts.push((nodes.len() / 5) as f64);
            for n in &t.nodes {
                match *n {
                    Node::Split {
                        feature,
                        value,
                        left,
                        right,
                    } => nodes.extend([feature as f64, value, left as f64, right as f64, 0.0]),
                    Node::Leaf { size } => nodes.extend([-1.0, 0.0, 0.0, 0.0, size as f64]),
                }
            }
        }
        let count = nodes.len() / 5;
        put(&mut c, "tree_starts", &[starts.len()], starts);
        put(&mut c, "nodes", &[count, 5], nodes);
        put(&mut c, "threshold", &[1], vec![self.threshold]);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let starts = get(c, "tree_starts")?;
        let nodes = get(c, "nodes")?;
        let flat = nodes.data();
        let total = flat.len() / 5;
        let mut bounds: Vec<usize> = starts.data().iter().map(|&s| s as usize).collect();
        bounds.push(total);
        let trees = bounds
            .windows(2)
            .map(|w| IsolationTree {
                nodes: (w[0]..w[1])
                    .map(|i| {
                        let r = &flat[i * 5..i * 5 + 5];
                        if r[0] < 0.0 {
                            Node::Leaf {
                                size: r[4] as usize,
                            }
                        } else {
                            Node::Split {
                                feature: r[0] as usize,
                                value: r[1],
                                left: r[2] as usize,
                                right: r[3] as usize,
                            }
                        }
                    })
                    .collect(),
            })
            .collect();
        let threshold_mode = match c.meta("threshold_mode") {
            Some("median") => ThresholdMode::MedianHeight,
            _ => ThresholdMode::Quantile,
        };
        Ok(IsolationForest {
            trees,
            params: IForestParams {
                n_estimators: get_meta(c, "n_estimators")?,
                max_features: get_meta(c, "max_features")?,
                max_samples: get_meta(c, "max_samples")?,
                contamination: get_meta(c, "contamination")?,
                threshold_mode,
            },
            psi: get_meta(c, "psi")?,
            dims: get_meta(c, "dims")?,
            seed: get_meta(c, "seed")?,
            threshold: get(c, "threshold")?.data()[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_length_constants() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2 (1 + 1/2) - 4/3
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn singleton_tree_is_a_leaf() {
        let data = vec![vec![1.0, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = IsolationTree::grow(&data, vec![0], &[0, 1], 8, &mut rng);
        assert_eq!(t.nodes, vec![Node::Leaf { size: 1 }]);
        assert_eq!(t.path_length(&[5.0, 5.0]), 0.0);
    }

    #[test]
    fn default_params() {
        let p = IForestParams::default();
        assert_eq!(
            (p.n_estimators, p.max_features, p.contamination),
            (150, 16, 1e-5)
        );
    }

    #[test]
    fn rejects_single_sample() {
        assert!(matches!(
            IsolationForest::fit(&[vec![1.0]], IForestParams::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
