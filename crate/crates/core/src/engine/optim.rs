use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::pruning::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn momentum(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, what: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must lie in [0, 1), got {v}")))
            }
        };
        match *self {
            OptimizerKind::SgdMomentum { momentum } => unit(momentum, "momentum"),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                unit(beta1, "beta1")?;
                unit(beta2, "beta2")?;
                if eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("eps must be positive".into()))
                }
            }
        }
    }
}

/// Moment buffers for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: ParamSet,
    // Empty for SGD.
    second: Option<ParamSet>,
    steps: u64,
}

impl OptimizerState {
    /// Zeroed moments congruent to `params`.
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let second = matches!(kind, OptimizerKind::Adam { .. }).then(|| params.zeros_like());
        Self {
            kind,
            first: params.zeros_like(),
            second,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &ParamSet {
        &self.first
    }

    pub fn second_moment(&self) -> Option<&ParamSet> {
        self.second.as_ref()
    }
}

/// Applies one update in place.
///
/// With a mask, gradients and moments of pruned entries are zeroed before the
/// update and the pruned weights are set to exactly `0.0` after it.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimizerState,
    lr: f64,
    mask: Option<&Mask>,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be finite and non-negative")));
    }
    params.check_congruent(grads)?;
    params.check_congruent(&state.first)?;
    if let Some(m) = mask {
        m.check_congruent(params)?;
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    state.steps += 1;
    let t = state.steps as i32;

    let mut mask_tensors = mask.map(|m| m.tensors().iter());
    let second = state.second.as_mut().map(|s| s.entries_mut());
    let mut second_iter = second.map(|s| s.iter_mut());
    for ((p, g), m1) in params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .zip(state.first.entries_mut())
    {
        let m2 = second_iter.as_mut().and_then(|it| it.next());
        let keep = if p.prunable {
            mask_tensors.as_mut().and_then(|it| it.next()).map(|t| t.keep())
        } else {
            None
        };
        let w = p.tensor.values_mut();
        let g = g.tensor.values();
        let v1 = m1.tensor.values_mut();
        let mut v2 = m2.map(|m| m.tensor.values_mut());
        match state.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((w, &g), v1) in w.iter_mut().zip(g).zip(v1.iter_mut()) {
                    *v1 = momentum * *v1 + g;
                    *w -= lr * *v1;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let v2 = v2.as_deref_mut().expect("adam state has second moments");
                let step_size = lr / (1.0 - beta1.powi(t));
                let inv_c2 = 1.0 / (1.0 - beta2.powi(t));
                for (((w, &g), v1), v2) in w.iter_mut().zip(g).zip(v1.iter_mut()).zip(v2.iter_mut()) {
                    *v1 = beta1 * *v1 + (1.0 - beta1) * g;
                    *v2 = beta2 * *v2 + (1.0 - beta2) * g * g;
                    *w -= step_size * *v1 / ((*v2 * inv_c2).sqrt() + eps);
                }
            }
        }
        if let Some(keep) = keep {
            for (i, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
                w[i] = 0.0;
                v1[i] = 0.0;
            }
            if let Some(v2) = v2 {
                for (i, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
                    v2[i] = 0.0;
                }
            }
        }
    }
    Ok(())
}
