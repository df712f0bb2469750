//! Network blocks recorded onto a [`Tape`].

use std::collections::BTreeMap;

use super::config::{BackboneSpec, ConvBlockSpec, ModelConfig, OutputActivation};
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::rng::Rng;
use crate::tape::{Mode, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Resolves parameter paths to tape handles, registering each parameter as
/// a leaf on first use. Frozen parameters are registered without
/// `requires_grad`, so no backward work flows into them.
pub struct ParamBinder<'s, T: Element> {
    state: Option<&'s ModelState<T>>,
    vars: BTreeMap<String, Var>,
    grad_all: bool,
}

impl<'s, T: Element> ParamBinder<'s, T> {
    pub fn new(state: &'s ModelState<T>) -> Self {
        Self {
            state: Some(state),
            vars: BTreeMap::new(),
            grad_all: false,
        }
    }

    /// Tracks gradients for frozen parameters too.
    pub fn grad_all(mut self) -> Self {
        self.grad_all = true;
        self
    }

    /// Binder over handles already placed on the tape.
    pub fn bound(vars: BTreeMap<String, Var>) -> Self {
        Self {
            state: None,
            vars,
            grad_all: false,
        }
    }

    pub fn var(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let state = self.state.ok_or_else(|| Error::Parameter {
            name: name.into(),
            reason: "not bound".into(),
        })?;
        let trainable = self.grad_all || !state.is_frozen(name);
        let v = tape.input(state.get(name)?.clone().with_requires_grad(trainable));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn into_vars(self) -> BTreeMap<String, Var> {
        self.vars
    }
}

fn conv<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamBinder<'_, T>,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = params.var(tape, &format!("{name}.weight"))?;
    let b = params.var(tape, &format!("{name}.bias"))?;
    tape.conv2d(x, w, b, stride, Padding::Same)
}

/// `F(x) + shortcut(x)` with `F = conv3x3 -> ReLU -> conv3x3`. The shortcut
/// is the identity, or a 1x1 projection when `prefix.proj.*` exists (the
/// block changes width or stride).
pub fn residual_block<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamBinder<'_, T>,
    prefix: &str,
    x: Var,
    stride: usize,
    project: bool,
) -> Result<Var> {
    let h = conv(tape, params, &format!("{prefix}.conv1"), x, stride)?;
    let h = tape.relu(h);
    let f = conv(tape, params, &format!("{prefix}.conv2"), h, 1)?;
    let shortcut = if project {
        conv(tape, params, &format!("{prefix}.proj"), x, stride)?
    } else {
        x
    };
    tape.add(f, shortcut)
}

/// Stem convolution + ReLU, then residual stages up to the tap stage.
/// Returns the tap-stage feature map.
pub fn backbone<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamBinder<'_, T>,
    spec: &BackboneSpec,
    x: Var,
) -> Result<Var> {
    let stem = conv(tape, params, "backbone.stem", x, spec.stem_stride)?;
    let mut h = tape.relu(stem);
    let mut channels = spec.stem_channels;
    for (s, stage) in spec.stages[..=spec.tap_stage].iter().enumerate() {
        for b in 0..stage.blocks {
            let stride = if b == 0 && stage.downsample { 2 } else { 1 };
            let project = channels != stage.channels || stride != 1;
            let out = residual_block(tape, params, &format!("backbone.stage{s}.block{b}"), h, stride, project)?;
            h = tape.relu(out);
            channels = stage.channels;
        }
    }
    Ok(h)
}

/// The stacked Conv -> ReLU -> MaxPool blocks followed by dropout.
pub fn enhancement_stack<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamBinder<'_, T>,
    specs: &[ConvBlockSpec],
    x: Var,
    dropout: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    let mut h = x;
    for (i, block) in specs.iter().enumerate() {
        let [_, height, width, _] = tape.value(h).dims4()?;
        if height < block.pool_k || width < block.pool_k {
            return Err(Error::InvalidArgument(format!(
                "spatial collapse: enhancement block {i} receives {height}x{width} maps"
            )));
        }
        let c = conv(tape, params, &format!("stack.block{i}.conv"), h, 1)?;
        let r = tape.relu(c);
        h = tape.maxpool2d(r, block.pool_k, block.pool_s)?;
    }
    tape.dropout(h, dropout, mode, rng)
}

/// Flatten -> dense + ReLU -> dense + ReLU -> dense -> sigmoid/softmax.
/// Returns `(logits, probabilities)`.
pub fn classification_head<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamBinder<'_, T>,
    activation: OutputActivation,
    x: Var,
) -> Result<(Var, Var)> {
    let mut h = tape.flatten(x)?;
    for name in ["head.dense1", "head.dense2"] {
        let w = params.var(tape, &format!("{name}.weight"))?;
        let b = params.var(tape, &format!("{name}.bias"))?;
        let d = tape.dense(h, w, b)?;
        h = tape.relu(d);
    }
    let w = params.var(tape, "head.out.weight")?;
    let b = params.var(tape, "head.out.bias")?;
    let logits = tape.dense(h, w, b)?;
    let probs = match activation {
        OutputActivation::Sigmoid => tape.sigmoid(logits),
        OutputActivation::Softmax => tape.softmax(logits)?,
    };
    Ok((logits, probs))
}

/// Loss matching the head: element-wise binary cross-entropy for sigmoid
/// units, categorical cross-entropy for softmax.
pub fn loss<T: Element>(tape: &mut Tape<T>, activation: OutputActivation, probs: Var, labels: Var) -> Result<Var> {
    match activation {
        OutputActivation::Sigmoid => tape.binary_cross_entropy(probs, labels),
        OutputActivation::Softmax => tape.cross_entropy(probs, labels),
    }
}

/// Row-wise argmax, lowest index on ties.
pub fn predict<T: Element>(probs: &Tensor<T>) -> Result<Vec<usize>> {
    let [_, c] = probs.dims2()?;
    Ok(probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}

/// Handles to the interesting values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub input: Var,
    pub features: Var,
    pub enhanced: Var,
    pub logits: Var,
    pub probs: Var,
    pub params: BTreeMap<String, Var>,
}

/// Backbone -> enhancement stack -> classification head.
pub fn forward<T: Element>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    params: ParamBinder<'_, T>,
    batch: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardPass> {
    let plan = config.validate()?;
    let shape = tape.value(batch).dims4()?;
    if shape[1..] != config.input_shape {
        return Err(Error::shape("model input", &shape[1..], &config.input_shape));
    }
    let mut params = params;
    let features = backbone(tape, &mut params, &config.backbone, batch)?;
    check_plan(tape.value(features), plan.tap(), "backbone output")?;
    let enhanced = enhancement_stack(tape, &mut params, &config.stack, features, config.dropout, mode, rng)?;
    check_plan(tape.value(enhanced), plan.enhanced(), "enhancement output")?;
    let (logits, probs) = classification_head(tape, &mut params, config.output_activation, enhanced)?;
    Ok(ForwardPass {
        input: batch,
        features,
        enhanced,
        logits,
        probs,
        params: params.into_vars(),
    })
}

fn check_plan<T: Element>(t: &Tensor<T>, expected: [usize; 3], what: &'static str) -> Result<()> {
    let dims = t.dims4()?;
    if dims[1..] != expected {
        return Err(Error::shape(what, &dims[1..], &expected));
    }
    Ok(())
}

/// Convenience forward from a state, returning the probability tensor.
pub fn model_forward<T: Element>(
    config: &ModelConfig,
    state: &ModelState<T>,
    batch: Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(batch);
    let pass = forward(config, &mut tape, ParamBinder::new(state), x, mode, rng)?;
    Ok(tape.value(pass.probs).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_argmax_and_ties() {
        let p = Tensor::<f32>::new(&[3, 2], vec![0.2, 0.8, 0.5, 0.5, 0.9, 0.1]).unwrap();
        assert_eq!(predict(&p).unwrap(), vec![1, 0, 0]);
    }
}
