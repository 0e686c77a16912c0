//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward function, so it is independent of
//! the backward implementation it validates.

use rand::Rng;

use crate::{Result, Tape, Tensor, Var};

/// Largest relative error observed between analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so that near-zero gradients do not
/// blow up the ratio.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn check(x: &[f64], analytic: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> GradCheck {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut max_rel_error: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        max_rel_error = max_rel_error.max(rel_error(analytic[i], numeric));
    }
    GradCheck {
        max_rel_error,
        checked: x.len(),
    }
}

/// Checks every input of a tape-built function `build(tape, inputs) -> y`.
///
/// The scalar objective is `mean(y * r)` for a fixed random projection `r`,
/// so every output coordinate contributes with a distinct weight.
pub fn check_graph<R: Rng + ?Sized>(
    inputs: &[Tensor<f64>],
    h: f64,
    rng: &mut R,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let objective = |vals: &[Tensor<f64>],
                     proj: Option<&Tensor<f64>>|
     -> Result<(Tape<f64>, Vec<Var>, Var, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = build(&mut tape, &vars)?;
        let r = match proj {
            Some(p) => tape.leaf(p.clone()),
            None => tape.leaf(Tensor::full(tape.value(y).shape(), 1.0)),
        };
        let prod = tape.mul(y, r)?;
        let loss = tape.mean(prod)?;
        Ok((tape, vars, y, loss))
    };

    let (probe_tape, _, y, _) = objective(inputs, None)?;
    let yshape = probe_tape.value(y).shape().to_vec();
    let n: usize = yshape.iter().product();
    let proj = Tensor::from_vec(&yshape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let (tape, vars, _, loss) = objective(inputs, Some(&proj))?;
    let grads = tape.backward(loss)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; input.numel()],
        };
        let mut fail = None;
        let res = check(input.data(), &analytic, h, |probe| {
            let mut vals = inputs.to_vec();
            vals[i] = Tensor::from_vec(input.shape(), probe.to_vec()).expect("same shape");
            match objective(&vals, Some(&proj)) {
                Ok((t, _, _, l)) => t.value(l).data()[0],
                Err(e) => {
                    fail.get_or_insert(e);
                    f64::NAN
                }
            }
        });
        if let Some(e) = fail {
            return Err(e);
        }
        worst.max_rel_error = worst.max_rel_error.max(res.max_rel_error);
        worst.checked += res.checked;
    }
    Ok(worst)
}
