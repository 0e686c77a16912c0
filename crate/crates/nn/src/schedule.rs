//! Learning-rate schedules.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// Triangular wave between `base_lr` and `max_lr`, period `cycle_len` steps.
    Cycle {
        base_lr: f64,
        max_lr: f64,
        cycle_len: u64,
    },
    /// `base_lr * gamma^(t / step_size)`.
    Step {
        base_lr: f64,
        gamma: f64,
        step_size: u64,
    },
    /// Multiply by `factor` after `patience` evaluations without improvement.
    Plateau {
        base_lr: f64,
        factor: f64,
        patience: u32,
    },
}

impl LrSchedule {
    pub fn base_lr(&self) -> f64 {
        match *self {
            LrSchedule::Cycle { base_lr, .. }
            | LrSchedule::Step { base_lr, .. }
            | LrSchedule::Plateau { base_lr, .. } => base_lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Cycle { .. } => "cycle",
            LrSchedule::Step { .. } => "step",
            LrSchedule::Plateau { .. } => "plateau",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_lr() > 0.0) {
            return Err(format!(
                "base learning rate must be positive, got {}",
                self.base_lr()
            ));
        }
        match *self {
            LrSchedule::Cycle {
                base_lr,
                max_lr,
                cycle_len,
            } => {
                if max_lr < base_lr {
                    return Err(format!("max_lr {max_lr} below base_lr {base_lr}"));
                }
                if cycle_len == 0 {
                    return Err("cycle length must be at least 1".into());
                }
            }
            LrSchedule::Step { step_size, .. } if step_size == 0 => {
                return Err("step size must be at least 1".into());
            }
            _ => {}
        }
        Ok(())
    }
}

/// A schedule plus the state the plateau rule needs.
#[derive(Debug, Clone)]
pub struct LrScheduler {
    schedule: LrSchedule,
    best: Option<f64>,
    stale: u32,
    plateau_lr: f64,
}

impl LrScheduler {
    pub fn new(schedule: LrSchedule) -> Self {
        LrScheduler {
            schedule,
            best: None,
            stale: 0,
            plateau_lr: schedule.base_lr(),
        }
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Learning rate at step (or epoch) `t`. `signal` is a validation loss;
    /// only the plateau rule consumes it.
    pub fn value(&mut self, t: u64, signal: Option<f64>) -> f64 {
        match self.schedule {
            LrSchedule::Cycle {
                base_lr,
                max_lr,
                cycle_len,
            } => {
                let pos = (t % cycle_len) as f64 / cycle_len as f64;
                let tri = 1.0 - (2.0 * pos - 1.0).abs();
                base_lr + (max_lr - base_lr) * tri
            }
            LrSchedule::Step {
                base_lr,
                gamma,
                step_size,
            } => base_lr * gamma.powi((t / step_size) as i32),
            LrSchedule::Plateau {
                factor, patience, ..
            } => {
                if let Some(loss) = signal {
                    match self.best {
                        Some(b) if loss >= b => {
                            self.stale += 1;
                            if self.stale > patience {
                                self.plateau_lr *= factor;
                                self.stale = 0;
                            }
                        }
                        _ => {
                            self.best = Some(loss);
                            self.stale = 0;
                        }
                    }
                }
                self.plateau_lr
            }
        }
    }
}
