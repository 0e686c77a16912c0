//! One-class SVM with a high-degree polynomial kernel, solved in the ν dual
//! by sequential minimal optimisation.

use pcapae_nn::checkpoint::Checkpoint;
use rayon::prelude::*;

use super::{check_dims, flat, get, get_meta, put, rows};
use crate::{Error, Result};

/// Largest `degree * ln|u|` that still fits in an `f64`.
const LOG_MAX: f64 = 709.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl Kernel {
    /// `(γ⟨a, b⟩ + c₀)^degree`, evaluated as `sign · exp(degree · ln|u|)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let u = self.gamma * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + self.coef0;
        if u == 0.0 {
            return Ok(if self.degree == 0 { 1.0 } else { 0.0 });
        }
        let log = self.degree as f64 * u.abs().ln();
        if log > LOG_MAX {
            return Err(Error::NumericFault(format!(
                "polynomial kernel of degree {} overflows at base {u:.4}; lower the degree",
                self.degree
            )));
        }
        let sign = if u < 0.0 && self.degree % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        Ok(sign * log.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcsvmParams {
    pub nu: f64,
    pub degree: u32,
    /// `None` selects `1 / (dims · variance)` of the standardised data.
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        OcsvmParams {
            nu: 1e-4,
            degree: 40,
            gamma: None,
            coef0: 0.0,
            tol: 1e-2,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ocsvm {
    pub params: OcsvmParams,
    pub kernel: Kernel,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardised support vectors and their dual weights.
    pub support: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// Dual objective `½ αᵀKα` at the solution.
    pub objective: f64,
    pub iterations: usize,
}

fn standardize(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = data.len() as f64;
    let dims = data[0].len();
    let mean: Vec<f64> = (0..dims)
        .map(|j| data.iter().map(|x| x[j]).sum::<f64>() / m)
        .collect();
    let scale = (0..dims)
        .map(|j| {
            let var = data.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / m;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn apply(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

impl Ocsvm {
    pub fn fit(data: &[Vec<f64>], params: OcsvmParams) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InsufficientData(
                "one-class SVM needs at least one sample".into(),
            ));
        }
        if !(params.nu > 0.0 && params.nu <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nu must lie in (0, 1], got {}",
                params.nu
            )));
        }
        if !(params.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                params.tol
            )));
        }
        let dims = check_dims(data)?;
        let (mean, scale) = standardize(data);
        let x: Vec<Vec<f64>> = data.iter().map(|r| apply(r, &mean, &scale)).collect();
        let gamma = match params.gamma {
            Some(g) => g,
            None => {
                let all = flat(&x);
                let mu = all.iter().sum::<f64>() / all.len() as f64;
                let var = all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / all.len() as f64;
                if var > 0.0 {
                    1.0 / (dims as f64 * var)
                } else {
                    1.0 / dims.max(1) as f64
                }
            }
        };
        let kernel = Kernel {
            degree: params.degree,
            gamma,
            coef0: params.coef0,
        };
        let m = x.len();
        let gram: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                (0..m)
                    .map(|j| kernel.eval(&x[i], &x[j]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;

        let c = 1.0 / (params.nu * m as f64);
        let mut alpha = vec![1.0 / m as f64; m];
        let mut grad: Vec<f64> = (0..m)
            .map(|i| gram[i].iter().sum::<f64>() / m as f64)
            .collect();
        let mut iterations = 0;
        while iterations < params.max_iter {
            let mut up = None;
            let mut down = None;
            for t in 0..m {
                if alpha[t] < c && up.map_or(true, |u: usize| grad[t] < grad[u]) {
                    up = Some(t);
                }
                if alpha[t] > 0.0 && down.map_or(true, |d: usize| grad[t] > grad[d]) {
                    down = Some(t);
                }
            }
            let (Some(i), Some(j)) = (up, down) else {
                break;
            };
            if grad[j] - grad[i] < params.tol {
                break;
            }
            let eta = (gram[i][i] + gram[j][j] - 2.0 * gram[i][j]).max(1e-12);
            let delta = ((grad[j] - grad[i]) / eta).min(c - alpha[i]).min(alpha[j]);
            alpha[i] += delta;
            alpha[j] -= delta;
            if alpha[j] < 1e-15 * c {
                alpha[i] += alpha[j];
                alpha[j] = 0.0;
            }
            for (t, g) in grad.iter_mut().enumerate() {
                *g += delta * (gram[t][i] - gram[t][j]);
            }
            iterations += 1;
        }

        let free: Vec<f64> = (0..m)
            .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
            .map(|t| grad[t])
            .collect();
        let rho = if free.is_empty() {
            let lower = (0..m)
                .filter(|&t| alpha[t] >= c)
                .map(|t| grad[t])
                .fold(f64::NEG_INFINITY, f64::max);
            let upper = (0..m)
                .filter(|&t| alpha[t] <= 0.0)
                .map(|t| grad[t])
                .fold(f64::INFINITY, f64::min);
            match (lower.is_finite(), upper.is_finite()) {
                (true, true) => (lower + upper) / 2.0,
                (true, false) => lower,
                _ => upper,
            }
        } else {
            free.iter().sum::<f64>() / free.len() as f64
        };
        let objective = 0.5 * (0..m).map(|t| alpha[t] * grad[t]).sum::<f64>();
        let (support, alpha): (Vec<Vec<f64>>, Vec<f64>) =
            x.into_iter().zip(alpha).filter(|(_, a)| *a > 0.0).unzip();
        Ok(Ocsvm {
            params,
            kernel,
            mean,
            scale,
            support,
            alpha,
            rho,
            objective,
            iterations,
        })
    }

    /// `Σ αᵢ K(svᵢ, x) - ρ`; negative values are outliers.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "sample has {} features, model expects {}",
                x.len(),
                self.mean.len()
            )));
        }
        let z = apply(x, &self.mean, &self.scale);
        let mut sum = 0.0;
        for (sv, a) in self.support.iter().zip(&self.alpha) {
            sum += a * self.kernel.eval(sv, &z)?;
        }
        Ok(sum - self.rho)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("nu", self.params.nu);
        c.set_meta("tol", self.params.tol);
        c.set_meta("max_iter", self.params.max_iter);
        c.set_meta("degree", self.kernel.degree);
        if let Some(g) = self.params.gamma {
            c.set_meta("gamma", g);
        }
        let d = self.mean.len();
        put(
            &mut c,
            "kernel",
            &[2],
            vec![self.kernel.gamma, self.kernel.coef0],
        );
        put(&mut c, "mean", &[d], self.mean.clone());
        put(&mut c, "scale", &[d], self.scale.clone());
        put(
            &mut c,
            "support",
            &[self.support.len(), d],
            flat(&self.support),
        );
        put(&mut c, "alpha", &[self.alpha.len()], self.alpha.clone());
        put(&mut c, "rho", &[2], vec![self.rho, self.objective]);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let k = get(c, "kernel")?.into_data();
        let rho = get(c, "rho")?.into_data();
        let degree = get_meta(c, "degree")?;
        Ok(Ocsvm {
            params: OcsvmParams {
                nu: get_meta(c, "nu")?,
                degree,
                gamma: c.meta("gamma").and_then(|g| g.parse().ok()),
                coef0: k[1],
                tol: get_meta(c, "tol")?,
                max_iter: get_meta(c, "max_iter")?,
            },
            kernel: Kernel {
                degree,
                gamma: k[0],
                coef0: k[1],
            },
            mean: get(c, "mean")?.into_data(),
            scale: get(c, "scale")?.into_data(),
            support: rows(&get(c, "support")?)?,
            alpha: get(c, "alpha")?.into_data(),
            rho: rho[0],
            objective: rho[1],
            iterations: 0,
        })
    }
}
