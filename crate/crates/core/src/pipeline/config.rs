//! `key=value` pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcapae_nn::{LossKind, OptimizerKind};

use crate::detect::{
    DetectorKind, IForestParams, LofParams, NaiveThreshold, OcsvmParams, ThresholdMode,
};
use crate::explain::{LrpConfig, LrpRule};
use crate::fragment::FragmentMode;
use crate::model::{ScheduleKind, TrainConfig};
use crate::traffic::AttackKind;
use crate::{Error, Result};

pub const DEFAULT_OUT: &str = "pcapae-out";

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "mode",
    "n",
    "batch_size",
    "epochs",
    "lr",
    "optimizer",
    "schedule",
    "loss",
    "shuffle",
    "seed",
    "detector",
    "raw",
    "n_estimators",
    "max_features",
    "max_samples",
    "contamination",
    "if_threshold",
    "lof_k",
    "ocsvm_nu",
    "ocsvm_degree",
    "ocsvm_gamma",
    "ocsvm_tol",
    "naive_nu",
    "lrp_rule",
    "lrp_epsilon",
    "out",
    "pcap",
    "test_pcap",
    "test_labels",
    "attack",
    "target",
    "intensity",
    "start_us",
    "end_us",
    "explain_windows",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: FragmentMode,
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleKind,
    pub loss: LossKind,
    pub shuffle: bool,
    pub seed: u64,
    pub detector: DetectorKind,
    /// Feed normalized fragments to the detector instead of codes.
    pub raw: bool,
    pub iforest: IForestParams,
    pub lof: LofParams,
    pub ocsvm: OcsvmParams,
    pub naive_nu: f64,
    pub lrp: LrpConfig,
    pub out: PathBuf,
    /// Benign training capture.
    pub pcap: Option<PathBuf>,
    pub test_pcap: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub attack: AttackKind,
    /// `host:<ip|mac>` or a flow such as `tcp:10.0.0.1:49152->10.0.0.2:502`.
    pub target: Option<String>,
    pub intensity: f64,
    pub start_us: Option<u64>,
    pub end_us: Option<u64>,
    pub explain_windows: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        PipelineConfig {
            mode: FragmentMode::Byte,
            n: train.n,
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr: train.base_lr,
            optimizer: train.optimizer,
            schedule: train.schedule,
            loss: train.loss,
            shuffle: train.shuffle,
            seed: 0,
            detector: DetectorKind::Naive,
            raw: false,
            iforest: IForestParams::default(),
            lof: LofParams::default(),
            ocsvm: OcsvmParams::default(),
            naive_nu: NaiveThreshold::DEFAULT_NU,
            lrp: LrpConfig::default(),
            out: PathBuf::from(DEFAULT_OUT),
            pcap: None,
            test_pcap: None,
            test_labels: None,
            attack: AttackKind::Dos,
            target: None,
            intensity: 100.0,
            start_us: None,
            end_us: None,
            explain_windows: Vec::new(),
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn typed<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("expected {what}, got `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_err(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

impl PipelineConfig {
    /// Defaults overridden by the lines of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact(format!("config file {}", path.display()))
            }
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, "expected a `key=value` line"))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => {
                self.mode = FragmentMode::parse(value)
                    .ok_or_else(|| config_err(key, "expected byte or flow"))?
            }
            "n" => self.n = typed(key, value, "a positive integer")?,
            "batch_size" => self.batch_size = typed(key, value, "a positive integer")?,
            "epochs" => self.epochs = typed(key, value, "a non-negative integer")?,
            "lr" => self.lr = typed(key, value, "a number")?,
            "optimizer" => {
                self.optimizer = match value {
                    "adamw" => OptimizerKind::adamw(),
                    "sgd" => OptimizerKind::sgd(),
                    _ => {
                        return Err(config_err(
                            key,
                            format!("expected adamw or sgd, got `{value}`"),
                        ))
                    }
                }
            }
            "schedule" => {
                self.schedule = match value {
                    "cycle" => ScheduleKind::Cycle,
                    "step" => ScheduleKind::Step {
                        gamma: 0.1,
                        step_size: 2,
                    },
                    "plateau" => ScheduleKind::Plateau {
                        factor: 0.1,
                        patience: 1,
                    },
                    _ => {
                        return Err(config_err(
                            key,
                            format!("expected cycle, step or plateau, got `{value}`"),
                        ))
                    }
                }
            }
            "loss" => {
                self.loss = LossKind::parse(value)
                    .ok_or_else(|| config_err(key, format!("expected mse or bce, got `{value}`")))?
            }
            "shuffle" => self.shuffle = boolean(key, value)?,
            "seed" => self.seed = typed(key, value, "an unsigned integer")?,
            "detector" => {
                self.detector = DetectorKind::parse(value).ok_or_else(|| {
                    config_err(
                        key,
                        format!("expected if, lof, ocsvm or naive, got `{value}`"),
                    )
                })?
            }
            "raw" => self.raw = boolean(key, value)?,
            "n_estimators" => self.iforest.n_estimators = typed(key, value, "a positive integer")?,
            "max_features" => self.iforest.max_features = typed(key, value, "a positive integer")?,
            "max_samples" => self.iforest.max_samples = typed(key, value, "a positive integer")?,
            "contamination" => {
                let c: f64 = typed(key, value, "a number")?;
                self.iforest.contamination = c;
                self.lof.contamination = c;
            }
            "if_threshold" => {
                self.iforest.threshold_mode = match value {
                    "quantile" => ThresholdMode::Quantile,
                    "median" => ThresholdMode::MedianHeight,
                    _ => {
                        return Err(config_err(
                            key,
                            format!("expected quantile or median, got `{value}`"),
                        ))
                    }
                }
            }
            "lof_k" => self.lof.k = typed(key, value, "a positive integer")?,
            "ocsvm_nu" => self.ocsvm.nu = typed(key, value, "a number")?,
            "ocsvm_degree" => self.ocsvm.degree = typed(key, value, "a non-negative integer")?,
            "ocsvm_gamma" => {
                self.ocsvm.gamma = match value {
                    "scale" => None,
                    v => Some(typed(key, v, "a number or `scale`")?),
                }
            }
            "ocsvm_tol" => self.ocsvm.tol = typed(key, value, "a number")?,
            "naive_nu" => self.naive_nu = typed(key, value, "a number")?,
            "lrp_rule" => {
                self.lrp.rule = LrpRule::parse(value).ok_or_else(|| {
                    config_err(key, format!("expected epsilon or z_plus, got `{value}`"))
                })?
            }
            "lrp_epsilon" => self.lrp.epsilon = typed(key, value, "a number")?,
            "out" => self.out = PathBuf::from(value),
            "pcap" => self.pcap = Some(PathBuf::from(value)),
            "test_pcap" => self.test_pcap = Some(PathBuf::from(value)),
            "test_labels" => self.test_labels = Some(PathBuf::from(value)),
            "attack" => {
                self.attack = AttackKind::parse(value).ok_or_else(|| {
                    config_err(
                        key,
                        format!("expected dos, eavesdrop or drop, got `{value}`"),
                    )
                })?
            }
            "target" => self.target = Some(value.to_string()),
            "intensity" => self.intensity = typed(key, value, "a number")?,
            "start_us" => self.start_us = Some(typed(key, value, "microseconds")?),
            "end_us" => self.end_us = Some(typed(key, value, "microseconds")?),
            "explain_windows" => {
                self.explain_windows = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| typed(key, s.trim(), "a comma-separated list of window indices"))
                    .collect::<Result<_>>()?
            }
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(config_err("n", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(config_err("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.iforest.contamination) {
            return Err(config_err("contamination", "must lie in [0, 1)"));
        }
        if !(self.lrp.epsilon > 0.0) {
            return Err(config_err("lrp_epsilon", "must be positive"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n: self.n,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss,
            optimizer: self.optimizer,
            schedule: self.schedule,
            base_lr: self.lr,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}
