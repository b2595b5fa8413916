use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A learning-rate drop: from `step` on, the rate is multiplied by
/// `multiplier` (cumulatively with earlier milestones).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub step: u64,
    pub multiplier: f64,
}

/// Learning rate as a function of the absolute training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        rate: f64,
    },
    StepDrop {
        base_rate: f64,
        milestones: Vec<Milestone>,
    },
    /// Linear ramp from 0 to `base_rate` over `warmup_steps`, then step drops.
    WarmupStepDrop {
        base_rate: f64,
        warmup_steps: u64,
        #[serde(default)]
        milestones: Vec<Milestone>,
    },
    /// Linear from `base_rate` at step 0 to `final_rate` at `total_steps`.
    LinearDecay {
        base_rate: f64,
        final_rate: f64,
        total_steps: u64,
    },
}

impl Schedule {
    /// Drops by `factor` at each of `steps`, e.g. `10x at 32K, 48K`.
    pub fn step_drop(base_rate: f64, steps: &[u64], factor: f64) -> Self {
        Schedule::StepDrop {
            base_rate,
            milestones: steps
                .iter()
                .map(|&step| Milestone {
                    step,
                    multiplier: 1.0 / factor,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |r: f64, what: &str| {
            if r.is_finite() && r > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive, got {r}")))
            }
        };
        let increasing = |ms: &[Milestone]| {
            for w in ms.windows(2) {
                if w[1].step <= w[0].step {
                    return Err(Error::InvalidArgument("milestones must be strictly increasing".into()));
                }
            }
            for m in ms {
                positive(m.multiplier, "milestone multiplier")?;
            }
            Ok(())
        };
        match self {
            Schedule::Constant { rate } => positive(*rate, "rate"),
            Schedule::StepDrop { base_rate, milestones } => {
                positive(*base_rate, "base_rate")?;
                increasing(milestones)
            }
            Schedule::WarmupStepDrop {
                base_rate, milestones, ..
            } => {
                positive(*base_rate, "base_rate")?;
                increasing(milestones)
            }
            Schedule::LinearDecay {
                base_rate,
                final_rate,
                total_steps,
            } => {
                positive(*base_rate, "base_rate")?;
                if !(final_rate.is_finite() && *final_rate >= 0.0) {
                    return Err(Error::InvalidArgument("final_rate must be non-negative".into()));
                }
                if *total_steps == 0 {
                    return Err(Error::InvalidArgument("total_steps must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        fn dropped(base: f64, milestones: &[Milestone], step: u64) -> f64 {
            milestones
                .iter()
                .filter(|m| step >= m.step)
                .fold(base, |lr, m| lr * m.multiplier)
        }
        match self {
            Schedule::Constant { rate } => *rate,
            Schedule::StepDrop { base_rate, milestones } => dropped(*base_rate, milestones, step),
            Schedule::WarmupStepDrop {
                base_rate,
                warmup_steps,
                milestones,
            } => {
                let lr = dropped(*base_rate, milestones, step);
                if step < *warmup_steps {
                    lr * step as f64 / *warmup_steps as f64
                } else {
                    lr
                }
            }
            Schedule::LinearDecay {
                base_rate,
                final_rate,
                total_steps,
            } => {
                let t = (step.min(*total_steps)) as f64 / *total_steps as f64;
                base_rate + (final_rate - base_rate) * t
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant() {
        let s = Schedule::Constant { rate: 1.2e-3 };
        assert_eq!(s.lr_at(0), 1.2e-3);
        assert_eq!(s.lr_at(17_000), 1.2e-3);
    }

    #[test]
    fn step_drops_at_milestones() {
        let s = Schedule::step_drop(0.1, &[32_000, 48_000], 10.0);
        assert_eq!(s.lr_at(31_999), 0.1);
        assert!((s.lr_at(40_000) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(48_000) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let s = Schedule::WarmupStepDrop {
            base_rate: 0.03,
            warmup_steps: 30_000,
            milestones: vec![],
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(15_000) - 0.015).abs() < 1e-15);
        assert_eq!(s.lr_at(30_000), 0.03);
        assert_eq!(s.lr_at(60_000), 0.03);
    }

    #[test]
    fn linear_decay_hits_final_rate() {
        let s = Schedule::LinearDecay {
            base_rate: 0.03,
            final_rate: 0.005,
            total_steps: 1000,
        };
        assert_eq!(s.lr_at(0), 0.03);
        assert!((s.lr_at(500) - 0.0175).abs() < 1e-15);
        assert!((s.lr_at(1000) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(Schedule::Constant { rate: 0.0 }.validate().is_err());
        assert!(Schedule::step_drop(0.1, &[10, 10], 10.0).validate().is_err());
        assert!(Schedule::step_drop(0.1, &[20, 10], 10.0).validate().is_err());
        assert!(Schedule::step_drop(0.1, &[10, 20], 10.0).validate().is_ok());
    }

    #[test]
    fn toml_shape() {
        let s: Schedule = toml::from_str(
            "kind = \"step-drop\"\nbase_rate = 0.1\nmilestones = [{ step = 32000, multiplier = 0.1 }]",
        )
        .unwrap();
        assert!(matches!(s, Schedule::StepDrop { .. }));
    }
}
