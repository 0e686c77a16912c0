//! Local Outlier Factor in novelty mode.

use pcapae_nn::checkpoint::Checkpoint;
use rayon::prelude::*;

use super::{check_dims, flat, get, get_meta, put, quantile, rows};
use crate::{Error, Result};

/// Upper bound on local reachability density, reached when at least `k`
/// neighbours coincide with a point.
pub const LRD_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LofParams {
    pub k: usize,
    pub contamination: f64,
}

impl Default for LofParams {
    fn default() -> Self {
        LofParams {
            k: 25,
            contamination: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lof {
    pub params: LofParams,
    pub train: Vec<Vec<f64>>,
    /// Distance to the k-th nearest neighbour of every training point.
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
    pub threshold: f64,
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neighbourhood of `x` among `train` (skipping index `skip`): the k-th
/// smallest distance and every index within it, ties included.
fn neighbourhood(
    train: &[Vec<f64>],
    x: &[f64],
    k: usize,
    skip: Option<usize>,
) -> (f64, Vec<(usize, f64)>) {
    let mut d2: Vec<(usize, f64)> = train
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, t)| (i, squared(x, t)))
        .collect();
    d2.sort_by(|a, b| a.1.total_cmp(&b.1));
    let kth = d2[k - 1].1;
    let members = d2
        .into_iter()
        .take_while(|(_, d)| *d <= kth)
        .map(|(i, d)| (i, d.sqrt()))
        .collect();
    (kth.sqrt(), members)
}

fn density(members: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let reach: f64 = members
        .iter()
        .map(|&(j, d)| k_distance[j].max(d))
        .sum::<f64>()
        / members.len() as f64;
    if reach > 0.0 {
        (1.0 / reach).min(LRD_CAP)
    } else {
        LRD_CAP
    }
}

impl Lof {
    pub fn fit(data: &[Vec<f64>], params: LofParams) -> Result<Self> {
        if params.k == 0 {
            return Err(Error::InvalidParameter("LOF needs k >= 1".into()));
        }
        if data.len() <= params.k {
            return Err(Error::InsufficientData(format!(
                "LOF with k = {} needs more than {} samples, got {}",
                params.k,
                params.k,
                data.len()
            )));
        }
        check_dims(data)?;
        let k = params.k;
        let hoods: Vec<(f64, Vec<(usize, f64)>)> = (0..data.len())
            .into_par_iter()
            .map(|i| neighbourhood(data, &data[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = hoods.iter().map(|h| h.0).collect();
        let lrd: Vec<f64> = hoods.iter().map(|h| density(&h.1, &k_distance)).collect();
        let self_lof: Vec<f64> = hoods
            .iter()
            .enumerate()
            .map(|(i, h)| h.1.iter().map(|&(j, _)| lrd[j]).sum::<f64>() / h.1.len() as f64 / lrd[i])
            .collect();
        Ok(Lof {
            params,
            train: data.to_vec(),
            k_distance,
            threshold: quantile(&self_lof, 1.0 - params.contamination),
            lrd,
        })
    }

    /// LOF of a query that is not part of the training set.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let dims = self.train[0].len();
        if x.len() != dims {
            return Err(Error::Shape(format!(
                "sample has {} features, model expects {dims}",
                x.len()
            )));
        }
        let (_, members) = neighbourhood(&self.train, x, self.params.k, None);
        let own = density(&members, &self.k_distance);
        Ok(members.iter().map(|&(j, _)| self.lrd[j]).sum::<f64>() / members.len() as f64 / own)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("k", self.params.k);
        c.set_meta("contamination", self.params.contamination);
        let m = self.train.len();
        put(
            &mut c,
            "train",
            &[m, self.train[0].len()],
            flat(&self.train),
        );
        put(&mut c, "k_distance", &[m], self.k_distance.clone());
        put(&mut c, "lrd", &[m], self.lrd.clone());
        put(&mut c, "threshold", &[1], vec![self.threshold]);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Lof {
            params: LofParams {
                k: get_meta(c, "k")?,
                contamination: get_meta(c, "contamination")?,
            },
            train: rows(&get(c, "train")?)?,
            k_distance: get(c, "k_distance")?.into_data(),
            lrd: get(c, "lrd")?.into_data(),
            threshold: get(c, "threshold")?.data()[0],
        })
    }
}
