//! Central finite differences, the oracle for every analytic gradient.

use crate::error::{AutodiffError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// `(f(p + ε) − f(p − ε)) / 2ε` for every coordinate of every trainable
/// parameter in `store`.
pub fn finite_diff_grad<F>(mut loss_fn: F, store: &ParamStore, epsilon: f64) -> Result<Gradients>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut work = store.clone();
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    let mut out = Gradients::new();
    for name in names {
        let len = work.get(&name)?.len();
        let mut g = Vec::with_capacity(len);
        for index in 0..len {
            let original = work.get(&name)?.data()[index];
            let value = |w: &mut ParamStore, v: f64| {
                w.param_mut(&name).expect("listed above").value.data_mut()[index] = v;
            };
            value(&mut work, original + epsilon);
            let plus = loss_fn(&work)?;
            value(&mut work, original - epsilon);
            let minus = loss_fn(&work)?;
            value(&mut work, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(AutodiffError::NonFiniteLoss { name, index });
            }
            g.push((plus - minus) / (2.0 * epsilon));
        }
        let shape = store.get(&name)?.shape().to_vec();
        out.insert(name, Tensor::new(shape, g)?);
    }
    Ok(out)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let mut diff = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        diff += (x - y) * (x - y);
    }
    let scale = a.l2_norm().max(b.l2_norm());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Worst [`relative_error`] over all parameters; a name missing on either
/// side counts as infinite error.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, a) in analytic {
        match numeric.get(name) {
            Some(n) if n.len() == a.len() => worst = worst.max(relative_error(a, n)),
            _ => return f64::INFINITY,
        }
    }
    if numeric.keys().any(|k| !analytic.contains_key(k)) {
        return f64::INFINITY;
    }
    worst
}

/// [`relative_error`] of the full gradient vectors, all parameters
/// concatenated in name order. Parameters whose true gradient vanishes
/// (e.g. a bias that cancels out of the loss) make per-parameter ratios
/// meaningless; this measure stays well defined. Mismatched names give
/// infinity.
pub fn global_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    if analytic.len() != numeric.len() {
        return f64::INFINITY;
    }
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (name, a) in analytic {
        let Some(n) = numeric.get(name).filter(|n| n.len() == a.len()) else {
            return f64::INFINITY;
        };
        for (x, y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let scale = na.max(nn).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_error_tolerates_vanishing_parameters() {
        let mut a = Gradients::new();
        a.insert("b".into(), Tensor::scalar(0.0));
        a.insert("w".into(), Tensor::row(vec![3.0, 4.0]));
        let mut n = a.clone();
        n.insert("b".into(), Tensor::scalar(1e-12));
        assert_eq!(max_relative_error(&a, &n), 1.0);
        assert!(global_relative_error(&a, &n) < 1e-12);
        n.remove("b");
        assert_eq!(global_relative_error(&a, &n), f64::INFINITY);
    }

    #[test]
    fn square_derivative() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(3.0), true).unwrap();
        let g = finite_diff_grad(
            |p| {
                let w = p.get("w")?.item();
                Ok(w * w)
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!((g["w"].item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::row(vec![1.0, -2.0]), true).unwrap();
        let g = finite_diff_grad(|_| Ok(2.5), &s, 1e-5).unwrap();
        assert_eq!(g["w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_parameters_skipped() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0), false).unwrap();
        let g = finite_diff_grad(|p| Ok(p.get("w")?.item()), &s, 1e-5).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn non_finite_loss_reported() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0), true).unwrap();
        let err = finite_diff_grad(|p| Ok(1.0 / p.get("w")?.item().max(0.0)), &s, 1e-5).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteLoss { .. }));
    }

    #[test]
    fn bad_epsilon_rejected() {
        let s = ParamStore::new();
        assert!(finite_diff_grad(|_| Ok(0.0), &s, 0.0).is_err());
    }
}
