//! In-place parameter updates.

use log::warn;

use crate::error::{AutodiffError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    /// `p ← p − lr·g`, no momentum.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub const fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Apply one update to every parameter named in `grads`.
///
/// Validation happens before anything is written: an unknown name, a shape
/// mismatch or a non-finite gradient aborts the whole step. Gradients for
/// frozen parameters are ignored with a warning.
pub fn optimizer_step(store: &mut ParamStore, grads: &Gradients, rule: UpdateRule, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(AutodiffError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    for (name, g) in grads {
        let p = store
            .param(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
        if p.value.shape() != g.shape() && p.value.len() != g.len() {
            return Err(AutodiffError::GradientShape {
                name: name.clone(),
                expected: p.value.shape().to_vec(),
                actual: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(AutodiffError::NonFiniteGradient(name.clone()));
        }
    }

    let mut updates: Vec<(&str, Tensor, Option<(Tensor, Tensor)>)> = Vec::with_capacity(grads.len());
    for (name, g) in grads {
        let p = store.param(name).expect("validated above");
        if !p.trainable {
            warn!("gradient supplied for frozen parameter `{name}`; ignored");
            continue;
        }
        let mut value = p.value.clone();
        let moments = match rule {
            UpdateRule::Sgd => {
                for (v, gi) in value.data_mut().iter_mut().zip(g.data()) {
                    *v -= lr * gi;
                }
                None
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = (p.state.step + 1) as f64;
                let mut m = p
                    .state
                    .first_moment
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                let mut s = p
                    .state
                    .second_moment
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                for (((v, mi), si), &gi) in value
                    .data_mut()
                    .iter_mut()
                    .zip(m.data_mut())
                    .zip(s.data_mut())
                    .zip(g.data())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *si = beta2 * *si + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let s_hat = *si / c2;
                    *v -= lr * m_hat / (s_hat.sqrt() + eps);
                }
                Some((m, s))
            }
        };
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteParameter(name.clone()));
        }
        updates.push((name.as_str(), value, moments));
    }

    for (name, value, moments) in updates {
        let p = store.param_mut(name).expect("validated above");
        p.value = value;
        if let Some((m, s)) = moments {
            p.state.step += 1;
            p.state.first_moment = Some(m);
            p.state.second_moment = Some(s);
        }
    }
    Ok(())
}
