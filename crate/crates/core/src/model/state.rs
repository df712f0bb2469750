use std::collections::{BTreeMap, BTreeSet};

use super::config::{ModelConfig, BACKBONE_PREFIX};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Learnable tensors keyed by parameter path, plus the set of paths the
/// optimizer must leave alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Element = f32> {
    params: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Element> Default for ModelState<T> {
    fn default() -> Self {
        Self {
            params: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }
}

impl<T: Element> ModelState<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases,
    /// drawn in [`ModelConfig::parameter_specs`] order.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut state = Self::default();
        for spec in config.parameter_specs()? {
            let tensor = if spec.is_bias() {
                Tensor::zeros(&spec.shape)?
            } else {
                let bound = (6.0 / spec.fan_in as f64).sqrt();
                Tensor::from_fn(&spec.shape, |_| T::of(rng.uniform_in(-bound, bound)))?
            };
            state.params.insert(spec.name, tensor);
        }
        if config.freeze_backbone {
            state.freeze_backbone(true);
        }
        Ok(state)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::Parameter {
            name: name.into(),
            reason: "missing".into(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::Parameter {
            name: name.into(),
            reason: "missing".into(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        self.get(name)?;
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn unfreeze(&mut self, name: &str) {
        self.frozen.remove(name);
    }

    /// Adds (or removes) every backbone parameter to (from) the frozen set.
    pub fn freeze_backbone(&mut self, frozen: bool) {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|n| n.starts_with(BACKBONE_PREFIX))
            .cloned()
            .collect();
        for name in names {
            if frozen {
                self.frozen.insert(name);
            } else {
                self.frozen.remove(&name);
            }
        }
    }

    pub fn set_frozen(&mut self, frozen: BTreeSet<String>) -> Result<()> {
        if let Some(missing) = frozen.iter().find(|n| !self.params.contains_key(*n)) {
            return Err(Error::Parameter {
                name: missing.clone(),
                reason: "frozen but not present".into(),
            });
        }
        self.frozen = frozen;
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ModelState<U> {
        ModelState {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Fails, naming the first offending path, unless the parameter set
    /// matches `config` exactly in names and shapes.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.parameter_specs()?;
        for spec in &specs {
            match self.params.get(&spec.name) {
                None => {
                    return Err(Error::Parameter {
                        name: spec.name.clone(),
                        reason: "missing".into(),
                    })
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Parameter {
                        name: spec.name.clone(),
                        reason: format!("shape {:?}, expected {:?}", t.shape(), spec.shape),
                    })
                }
                Some(_) => {}
            }
        }
        if self.params.len() != specs.len() {
            let extra = self
                .params
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Parameter {
                name: extra,
                reason: "not part of this configuration".into(),
            });
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values (frozen set ignored).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
    }
}
