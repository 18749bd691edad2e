use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Learning rate as a function of the 0-based epoch index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `lr0 * factor^k`, `k` = number of milestones `<= epoch`. Evaluated as
    /// a division by `(1 / factor)^k` when `1 / factor` is a whole number,
    /// so "divide by 10 twice" gives exactly `lr0 / 100`.
    Step {
        lr0: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Half-cosine from `lr0` at epoch 0 to `lr_min` at epoch `t_max`, held
    /// at `lr_min` afterwards.
    Cosine {
        lr0: f64,
        lr_min: f64,
        t_max: usize,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("learning-rate schedule: {m}")));
        match self {
            LrSchedule::Constant { lr } => {
                if !(*lr > 0.0 && lr.is_finite()) {
                    return bad("lr must be positive");
                }
            }
            LrSchedule::Step {
                lr0,
                milestones,
                factor,
            } => {
                if !(*lr0 > 0.0 && lr0.is_finite()) {
                    return bad("lr0 must be positive");
                }
                if !(*factor > 0.0 && *factor < 1.0) {
                    return bad("factor must be in (0, 1)");
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("milestones must be strictly increasing");
                }
            }
            LrSchedule::Cosine { lr0, lr_min, t_max } => {
                if !(*lr0 > 0.0 && lr0.is_finite()) {
                    return bad("lr0 must be positive");
                }
                if !(*lr_min >= 0.0 && lr_min <= lr0) {
                    return bad("lr_min must be in [0, lr0]");
                }
                if *t_max == 0 {
                    return bad("t_max must be at least 1");
                }
            }
        }
        Ok(())
    }

    /// Rate at epoch 0.
    pub fn initial(&self) -> f64 {
        self.lr_at(0)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Step {
                lr0,
                milestones,
                factor,
            } => {
                let k = milestones.iter().filter(|&&m| m <= epoch).count() as f64;
                let divisor = 1.0 / factor;
                let whole = libm::round(divisor);
                if libm::fabs(divisor - whole) < 1e-9 * whole {
                    lr0 / libm::pow(whole, k)
                } else {
                    lr0 * libm::pow(*factor, k)
                }
            }
            LrSchedule::Cosine { lr0, lr_min, t_max } => {
                if epoch >= *t_max {
                    return *lr_min;
                }
                let t = epoch as f64 / *t_max as f64;
                lr_min + 0.5 * (lr0 - lr_min) * (1.0 + libm::cos(core::f64::consts::PI * t))
            }
        }
    }
}
