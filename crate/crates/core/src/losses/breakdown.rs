use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Cycle-consistency weight.
    pub lambda1: f64,
    /// Gradient-penalty coefficient.
    pub lambda2: f64,
    /// Classification-loss weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            beta: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `((gan_xy + gan_yx) + λ₁·cycle) + β·(cls_y + cls_x)`, in that order.
pub fn combine(weights: &LossWeights, gan_xy: f64, gan_yx: f64, cycle: f64, cls_y: f64, cls_x: f64) -> f64 {
    let adversarial = gan_xy + gan_yx;
    let with_cycle = adversarial + weights.lambda1 * cycle;
    with_cycle + weights.beta * (cls_y + cls_x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub gan_xy: f64,
    pub gan_yx: f64,
    pub cycle: f64,
    pub cls_x: f64,
    pub cls_y: f64,
    pub penalty_x: f64,
    pub penalty_y: f64,
    pub total: f64,
}

impl LossBreakdown {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        step: u64,
        weights: &LossWeights,
        gan_xy: f64,
        gan_yx: f64,
        cycle: f64,
        cls_y: f64,
        cls_x: f64,
        penalty_x: f64,
        penalty_y: f64,
    ) -> Self {
        Self {
            step,
            gan_xy,
            gan_yx,
            cycle,
            cls_x,
            cls_y,
            penalty_x,
            penalty_y,
            total: combine(weights, gan_xy, gan_yx, cycle, cls_y, cls_x),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.gan_xy,
            self.gan_yx,
            self.cycle,
            self.cls_x,
            self.cls_y,
            self.penalty_x,
            self.penalty_y,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric struct")
    }
}

/// One JSON object per line. Non-finite values serialize as `null`.
pub fn write_jsonl(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for b in history {
        writeln!(w, "{}", b.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
