use std::path::PathBuf;

use crate::error::{Error, Result};

/// One Conv(3x3, same) -> ReLU -> MaxPool unit of the enhancement stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub pool_k: usize,
    pub pool_s: usize,
}

impl ConvBlockSpec {
    pub fn new(filters: usize) -> Self {
        Self {
            filters,
            kernel: 3,
            pool_k: 2,
            pool_s: 2,
        }
    }
}

/// A run of residual blocks at one width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Stride-2 entry block (halves height and width).
    pub downsample: bool,
}

impl StageSpec {
    pub fn new(blocks: usize, channels: usize, downsample: bool) -> Self {
        Self {
            blocks,
            channels,
            downsample,
        }
    }
}

/// Residual feature extractor: a strided stem convolution followed by
/// residual stages. Only stages up to and including `tap_stage` are built;
/// the tap stage's output is the feature map handed to the enhancement
/// stack.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageSpec>,
    pub tap_stage: usize,
    pub pretrained_weights: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    /// Independent sigmoid per output unit.
    Sigmoid,
    Softmax,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "softmax" => Ok(OutputActivation::Softmax),
            other => Err(Error::InvalidArgument(format!("unknown output activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input height, width and channels.
    pub input_shape: [usize; 3],
    pub backbone: BackboneSpec,
    pub stack: Vec<ConvBlockSpec>,
    pub head_units: usize,
    /// Dropout rate applied to the last enhancement block's output.
    pub dropout: f64,
    pub num_classes: usize,
    pub output_activation: OutputActivation,
    /// Reserved; batch normalization is not implemented and must stay off.
    pub batch_norm: bool,
    /// Exclude backbone parameters from optimizer updates.
    pub freeze_backbone: bool,
}

/// Static shape arithmetic of a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// `[h, w, c]` after the stem and after each built stage.
    pub backbone: Vec<[usize; 3]>,
    /// `[h, w, c]` after each enhancement block.
    pub stack: Vec<[usize; 3]>,
    pub flat_features: usize,
}

impl ShapePlan {
    pub fn tap(&self) -> [usize; 3] {
        *self.backbone.last().expect("stem always present")
    }

    pub fn enhanced(&self) -> [usize; 3] {
        self.stack.last().copied().unwrap_or_else(|| self.tap())
    }
}

/// Name, shape and fan-in of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>) -> Self {
        let fan_in = shape[..shape.len() - 1].iter().product();
        Self { name, shape, fan_in }
    }

    fn bias(name: String, len: usize) -> Self {
        Self {
            name,
            shape: vec![len],
            fan_in: 0,
        }
    }

    pub fn is_bias(&self) -> bool {
        self.fan_in == 0
    }
}

pub const BACKBONE_PREFIX: &str = "backbone.";

impl ModelConfig {
    /// Full-size network: 224x224x3 input, residual backbone tapped at
    /// 56x56x64, enhancement filters 64/128/256/512/512, two 4096-unit dense
    /// layers.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            input_shape: [224, 224, 3],
            backbone: BackboneSpec {
                stem_channels: 16,
                stem_kernel: 3,
                stem_stride: 2,
                stages: vec![
                    StageSpec::new(2, 32, true),
                    StageSpec::new(2, 64, false),
                    StageSpec::new(2, 128, true),
                ],
                tap_stage: 1,
                pretrained_weights: None,
            },
            stack: [64, 128, 256, 512, 512].map(ConvBlockSpec::new).to_vec(),
            head_units: 4096,
            dropout: 0.5,
            num_classes,
            output_activation: default_activation(num_classes),
            batch_norm: false,
            freeze_backbone: true,
        }
    }

    /// Desk-scale network for gradient checks and synthetic experiments:
    /// 64x64x3 input, backbone widths 4/8 tapped at 32x32, narrow
    /// enhancement stack, 8-unit head.
    pub fn reduced(num_classes: usize) -> Self {
        Self {
            input_shape: [64, 64, 3],
            backbone: BackboneSpec {
                stem_channels: 4,
                stem_kernel: 3,
                stem_stride: 2,
                stages: vec![StageSpec::new(1, 4, false), StageSpec::new(1, 8, false)],
                tap_stage: 1,
                pretrained_weights: None,
            },
            stack: [8, 8, 16, 16, 16].map(ConvBlockSpec::new).to_vec(),
            head_units: 8,
            dropout: 0.5,
            num_classes,
            output_activation: default_activation(num_classes),
            batch_norm: false,
            freeze_backbone: true,
        }
    }

    pub fn validate(&self) -> Result<ShapePlan> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_classes < 2 {
            return invalid(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.output_activation == OutputActivation::Sigmoid && self.num_classes != 2 {
            return invalid("sigmoid output is only defined for 2 classes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_norm {
            return invalid("batch normalization is not supported".into());
        }
        if self.head_units == 0 || self.input_shape.contains(&0) {
            return invalid("head units and input dims must be positive".into());
        }
        let bb = &self.backbone;
        if bb.tap_stage >= bb.stages.len() {
            return invalid(format!(
                "tap_stage {} but only {} stages",
                bb.tap_stage,
                bb.stages.len()
            ));
        }
        if bb.stem_channels == 0 || bb.stem_stride == 0 || bb.stem_kernel % 2 == 0 {
            return invalid("stem needs positive channels/stride and an odd kernel".into());
        }
        let mut prev = bb.stem_channels;
        for (i, stage) in bb.stages.iter().enumerate() {
            if stage.blocks == 0 || stage.channels < prev {
                return invalid(format!(
                    "stage {i}: needs >= 1 block and channels nondecreasing ({} after {prev})",
                    stage.channels
                ));
            }
            prev = stage.channels;
        }
        for (i, block) in self.stack.iter().enumerate() {
            if block.filters == 0 || block.kernel % 2 == 0 || block.pool_k == 0 || block.pool_s == 0 {
                return invalid(format!("enhancement block {i}: invalid spec {block:?}"));
            }
        }

        let [h, w, _] = self.input_shape;
        let mut cur = [
            h.div_ceil(bb.stem_stride),
            w.div_ceil(bb.stem_stride),
            bb.stem_channels,
        ];
        let mut backbone = vec![cur];
        for stage in &bb.stages[..=bb.tap_stage] {
            let s = if stage.downsample { 2 } else { 1 };
            cur = [cur[0].div_ceil(s), cur[1].div_ceil(s), stage.channels];
            backbone.push(cur);
        }
        let mut stack = Vec::with_capacity(self.stack.len());
        for (i, block) in self.stack.iter().enumerate() {
            if cur[0] < block.pool_k || cur[1] < block.pool_k {
                return Err(Error::InvalidArgument(format!(
                    "spatial collapse: enhancement block {i} receives {}x{} maps but pools with a {}x{} window",
                    cur[0], cur[1], block.pool_k, block.pool_k
                )));
            }
            cur = [
                (cur[0] - block.pool_k) / block.pool_s + 1,
                (cur[1] - block.pool_k) / block.pool_s + 1,
                block.filters,
            ];
            stack.push(cur);
        }
        Ok(ShapePlan {
            backbone,
            stack,
            flat_features: cur.iter().product(),
        })
    }

    /// Every learnable tensor in creation order.
    pub fn parameter_specs(&self) -> Result<Vec<ParamSpec>> {
        let plan = self.validate()?;
        let mut specs = Vec::new();
        let bb = &self.backbone;
        let mut conv = |name: String, k: usize, cin: usize, cout: usize| {
            specs.push(ParamSpec::weight(format!("{name}.weight"), vec![k, k, cin, cout]));
            specs.push(ParamSpec::bias(format!("{name}.bias"), cout));
        };
        conv(
            "backbone.stem".into(),
            bb.stem_kernel,
            self.input_shape[2],
            bb.stem_channels,
        );
        let mut cin = bb.stem_channels;
        for (s, stage) in bb.stages[..=bb.tap_stage].iter().enumerate() {
            for b in 0..stage.blocks {
                let prefix = format!("backbone.stage{s}.block{b}");
                let cout = stage.channels;
                let stride = if b == 0 && stage.downsample { 2 } else { 1 };
                conv(format!("{prefix}.conv1"), 3, cin, cout);
                conv(format!("{prefix}.conv2"), 3, cout, cout);
                if cin != cout || stride != 1 {
                    conv(format!("{prefix}.proj"), 1, cin, cout);
                }
                cin = cout;
            }
        }
        for (i, block) in self.stack.iter().enumerate() {
            conv(format!("stack.block{i}.conv"), block.kernel, cin, block.filters);
            cin = block.filters;
        }
        let mut dense = |name: &str, din: usize, dout: usize| {
            specs.push(ParamSpec::weight(format!("head.{name}.weight"), vec![din, dout]));
            specs.push(ParamSpec::bias(format!("head.{name}.bias"), dout));
        };
        dense("dense1", plan.flat_features, self.head_units);
        dense("dense2", self.head_units, self.head_units);
        dense("out", self.head_units, self.num_classes);
        Ok(specs)
    }
}

pub fn default_activation(num_classes: usize) -> OutputActivation {
    if num_classes == 2 {
        OutputActivation::Sigmoid
    } else {
        OutputActivation::Softmax
    }
}
