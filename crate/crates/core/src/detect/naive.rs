//! Residual-loss threshold `mean + ν·σ`.

use pcapae_nn::checkpoint::Checkpoint;

use super::{get, put};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveThreshold {
    /// Mean training loss.
    pub aml: f64,
    /// Population standard deviation of the training losses.
    pub sigma: f64,
    pub nu: f64,
    pub thr: f64,
}

impl NaiveThreshold {
    pub const DEFAULT_NU: f64 = 2.5;

    pub fn fit(losses: &[f64], nu: f64) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "naive threshold needs at least 2 losses, got {}",
                losses.len()
            )));
        }
        if !nu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nu must be finite, got {nu}"
            )));
        }
        let m = losses.len() as f64;
        let aml = losses.iter().sum::<f64>() / m;
        let sigma = (losses.iter().map(|l| (l - aml).powi(2)).sum::<f64>() / m).sqrt();
        Ok(NaiveThreshold {
            aml,
            sigma,
            nu,
            thr: aml + nu * sigma,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("nu", self.nu);
        put(
            &mut c,
            "stats",
            &[4],
            vec![self.aml, self.sigma, self.nu, self.thr],
        );
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let s = get(c, "stats")?.into_data();
        if s.len() != 4 {
            return Err(Error::UnsupportedStore(
                "naive threshold expects 4 statistics".into(),
            ));
        }
        Ok(NaiveThreshold {
            aml: s[0],
            sigma: s[1],
            nu: s[2],
            thr: s[3],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_from_population_std() {
        let t = NaiveThreshold::fit(&[1.0, 2.0, 3.0, 4.0], 2.5).unwrap();
        assert_eq!(t.aml, 2.5);
        assert!((t.sigma - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((t.thr - (2.5 + 2.5 * 1.25f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn constant_losses_give_zero_sigma() {
        let t = NaiveThreshold::fit(&[0.3; 5], 2.5).unwrap();
        assert_eq!(t.sigma, 0.0);
        assert_eq!(t.thr, 0.3);
    }
}
