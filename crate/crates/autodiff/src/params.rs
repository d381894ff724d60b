use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Adam moments for one parameter. Untouched by SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub first_moment: Option<Tensor>,
    pub second_moment: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
    pub state: OptimState,
}

/// Named parameters in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.params.insert(
            name,
            Param {
                value,
                trainable,
                state: OptimState::default(),
            },
        );
        Ok(())
    }

    /// Move every parameter of `other` into this store.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(AutodiffError::DuplicateParameter(name));
            }
            self.params.insert(name, p);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    /// Replace a parameter's value (same shape required). Used for loading
    /// checkpoints and hand-constructing models; optimizer state is reset.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::GradientShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        p.value = value;
        p.state = OptimState::default();
        Ok(())
    }

    /// Restore optimizer moments, e.g. from a checkpoint.
    pub fn set_optim_state(&mut self, name: &str, state: OptimState) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        for m in [&state.first_moment, &state.second_moment].into_iter().flatten() {
            if m.shape() != p.value.shape() {
                return Err(AutodiffError::GradientShape {
                    name: name.to_string(),
                    expected: p.value.shape().to_vec(),
                    actual: m.shape().to_vec(),
                });
            }
        }
        p.state = state;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn freeze_all(&mut self) {
        for p in self.params.values_mut() {
            p.trainable = false;
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries over all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Remove every parameter whose name starts with `prefix`, returning them
    /// as a new store.
    pub fn split_off_prefix(&mut self, prefix: &str) -> ParamStore {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let mut out = ParamStore::new();
        for n in names {
            let p = self.params.remove(&n).expect("listed above");
            out.params.insert(n, p);
        }
        out
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let n: usize = shape.iter().product();
    let denom = (fan_in + fan_out).max(1) as f64;
    let bound = (6.0 / denom).sqrt();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length computed from shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0), true).unwrap();
        assert!(matches!(
            s.insert("w", Tensor::scalar(2.0), true),
            Err(AutodiffError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = glorot_uniform(&mut rng, &[10, 14], 10, 14);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.max_abs() > 0.5 * bound);
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2, 2]), true).unwrap();
        assert!(s.set("w", Tensor::zeros(&[4])).is_err());
        assert!(s.set("w", Tensor::identity(2)).is_ok());
    }
}
