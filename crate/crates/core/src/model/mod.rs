//! Residual backbone, feature enhancement stack and classification head.
//!
//! Parameter paths look like `backbone.stage1.block0.conv1.weight`,
//! `stack.block3.conv.bias` or `head.dense1.weight`. Convolution weights are
//! `[kh, kw, cin, cout]`, dense weights `[din, dout]`.

mod blocks;
mod config;
mod state;
mod weights;

pub use blocks::{
    backbone, classification_head, enhancement_stack, forward, loss, model_forward, predict, residual_block,
    ForwardPass, ParamBinder,
};
pub use config::{
    default_activation, BackboneSpec, ConvBlockSpec, ModelConfig, OutputActivation, ParamSpec, ShapePlan,
    StageSpec, BACKBONE_PREFIX,
};
pub use state::ModelState;
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, write_tensors, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub(crate) use weights::{read_tensors, seal, unseal, write_u32, Cursor};

use std::collections::BTreeMap;

use crate::error::Result;
use crate::gradcheck::{grad_check_faulty, GradCheckOptions, GradCheckReport};
use crate::rng::Rng;
use crate::tape::{Mode, OpKind, Tape};
use crate::tensor::Tensor;

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub state: ModelState<f32>,
}

impl Model {
    /// Initializes parameters and, when configured, loads pretrained
    /// backbone weights.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut state = ModelState::init(&config, rng)?;
        if let Some(path) = &config.backbone.pretrained_weights {
            state.load_backbone(path)?;
        }
        Ok(Self { config, state })
    }
}

/// Finite-difference check of the loss gradient with respect to every
/// parameter, evaluated in `f64` and eval mode.
pub fn gradcheck_model(
    config: &ModelConfig,
    state: &ModelState<f64>,
    batch: &Tensor<f64>,
    labels: &Tensor<f64>,
    options: GradCheckOptions,
    fault: Option<(OpKind, f64)>,
) -> Result<GradCheckReport> {
    let names: Vec<String> = state.names().map(str::to_string).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| state.get(n).cloned()).collect::<Result<_>>()?;
    grad_check_faulty(
        |tape: &mut Tape<f64>, vars| {
            let bound: BTreeMap<String, _> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let x = tape.constant(batch.clone());
            let y = tape.constant(labels.clone());
            let pass = forward(config, tape, ParamBinder::bound(bound), x, Mode::Eval, &mut Rng::new(0))?;
            loss(tape, config.output_activation, pass.probs, y)
        },
        &inputs,
        options,
        fault,
    )
}
