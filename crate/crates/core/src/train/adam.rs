use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-3;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl AdamState {
    /// Zero moments mirroring every parameter of `state`.
    pub fn new(state: &ModelState<f32>, lr: f64) -> Result<Self> {
        let zeros = |t: &Tensor<f32>| Tensor::zeros(t.shape());
        let mut m = BTreeMap::new();
        for (name, t) in state.iter() {
            m.insert(name.to_string(), zeros(t)?);
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        })
    }

    /// Checks that the moments mirror `state` exactly.
    pub fn check_against(&self, state: &ModelState<f32>) -> Result<()> {
        for moments in [&self.m, &self.v] {
            if moments.len() != state.len() {
                return Err(Error::Format(format!(
                    "optimizer tracks {} tensors, model has {}",
                    moments.len(),
                    state.len()
                )));
            }
            for (name, t) in state.iter() {
                let mt = moments.get(name).ok_or_else(|| Error::Parameter {
                    name: name.into(),
                    reason: "missing optimizer moment".into(),
                })?;
                if mt.shape() != t.shape() {
                    return Err(Error::Parameter {
                        name: name.into(),
                        reason: format!("moment shape {:?}, parameter shape {:?}", mt.shape(), t.shape()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: &BTreeMap<String, Tensor<f32>>, b: &BTreeMap<String, Tensor<f32>>| {
            a.len() == b.len() && a.iter().zip(b).all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
        };
        self.t == other.t
            && [self.lr, self.beta1, self.beta2, self.eps]
                .iter()
                .zip([other.lr, other.beta1, other.beta2, other.eps])
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && same(&self.m, &other.m)
            && same(&self.v, &other.v)
    }
}

/// One Adam update of every non-frozen parameter. A parameter without an
/// entry in `grads` is treated as having a zero gradient. All gradients are
/// checked for finiteness before anything is modified.
pub fn adam_step(state: &mut ModelState<f32>, grads: &BTreeMap<String, Vec<f32>>, opt: &mut AdamState) -> Result<()> {
    for (name, g) in grads {
        if state.is_frozen(name) {
            continue;
        }
        let p = state.get(name)?;
        if g.len() != p.len() {
            return Err(Error::Parameter {
                name: name.clone(),
                reason: format!("gradient has {} values, parameter {}", g.len(), p.len()),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    opt.t += 1;
    let t = opt.t as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let names: Vec<String> = state.names().map(str::to_string).collect();
    for name in names {
        if state.is_frozen(&name) {
            continue;
        }
        let g = grads.get(&name);
        let m = opt.m.get_mut(&name).ok_or_else(|| Error::Parameter {
            name: name.clone(),
            reason: "no optimizer moment".into(),
        })?;
        let v = opt.v.get_mut(&name).expect("m and v share keys");
        let p = state.get_mut(&name)?;
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| f64::from(g[i]));
            let mi = opt.beta1 * f64::from(m.data()[i]) + (1.0 - opt.beta1) * gi;
            let vi = opt.beta2 * f64::from(v.data()[i]) + (1.0 - opt.beta2) * gi * gi;
            m.data_mut()[i] = mi as f32;
            v.data_mut()[i] = vi as f32;
            let update = opt.lr * (mi / c1) / ((vi / c2).sqrt() + opt.eps);
            if update != 0.0 {
                p.data_mut()[i] = (f64::from(p.data()[i]) - update) as f32;
            }
        }
    }
    Ok(())
}
