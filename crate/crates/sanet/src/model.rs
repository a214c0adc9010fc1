//! Whole-network assembly: the two-pipeline parsing model and the FCN
//! variants used by the ablation runner.

use crate::aggregator::Aggregator;
use crate::backbone::{Backbone, BackboneConfig, BackboneOut, StageConfig};
use crate::error::{arg_err, Result};
use crate::head::{FusionMode, Head};
use crate::layers::{ConvLayer, ParamSet};
use crate::ops::conv::ConvParams;
use crate::tape::{Tape, Var};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Aggregation target channel count c'.
    pub hidden_channels: usize,
    pub lstm_kernel: usize,
    pub lstm_dilation: usize,
    pub psp_bins: Vec<(usize, usize)>,
    pub psp_reduce: usize,
    pub fusion: FusionMode,
    pub num_classes: usize,
    /// Hidden width of the two-convolution FCN head used by ablations.
    pub fcn_hidden: usize,
}

impl ModelConfig {
    /// Desk-scale preset: a mini four-stage stem with the same tap topology,
    /// output stride 8 and stage dilations (2, 4).
    pub fn desk(num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 16,
                stages: vec![
                    StageConfig { blocks: 2, channels: 32, cardinality: 8, stride: 1, dilation: 1 },
                    StageConfig { blocks: 2, channels: 64, cardinality: 8, stride: 2, dilation: 1 },
                    StageConfig { blocks: 2, channels: 128, cardinality: 8, stride: 1, dilation: 2 },
                    StageConfig { blocks: 2, channels: 256, cardinality: 8, stride: 1, dilation: 4 },
                ],
            },
            hidden_channels: 32,
            lstm_kernel: 3,
            lstm_dilation: 2,
            psp_bins: vec![(6, 6), (3, 3), (2, 2), (1, 1)],
            psp_reduce: 64,
            fusion: FusionMode::Concat,
            num_classes,
            fcn_hidden: 64,
        }
    }

    /// Full-size preset mirroring the 50-layer stem: for cost accounting
    /// and config plumbing, not for CPU training.
    pub fn paper_scale(num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 64,
                stages: vec![
                    StageConfig { blocks: 3, channels: 256, cardinality: 32, stride: 1, dilation: 1 },
                    StageConfig { blocks: 4, channels: 512, cardinality: 32, stride: 2, dilation: 1 },
                    StageConfig { blocks: 6, channels: 1024, cardinality: 32, stride: 1, dilation: 2 },
                    StageConfig { blocks: 3, channels: 2048, cardinality: 32, stride: 1, dilation: 4 },
                ],
            },
            hidden_channels: 256,
            lstm_kernel: 3,
            lstm_dilation: 2,
            psp_bins: vec![(60, 60), (30, 30), (20, 20), (15, 15), (10, 10)],
            psp_reduce: 512,
            fusion: FusionMode::Concat,
            num_classes,
            fcn_hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes == 0 {
            return arg_err("model: need at least one class");
        }
        if self.hidden_channels == 0 {
            return arg_err("model: hidden channels must be >= 1");
        }
        if self.psp_bins.is_empty() {
            return arg_err("model: psp bin list must be nonempty");
        }
        if self.lstm_kernel % 2 == 0 {
            return arg_err("model: lstm kernel must be odd");
        }
        Ok(())
    }
}

/// Two-pipeline parsing network: dilated stem plus ConvLSTM aggregation,
/// fused into the pyramid-pooling head.
pub struct SaNet {
    pub backbone: Backbone,
    pub aggregator: Aggregator,
    pub head: Head,
    pub config: ModelConfig,
}

impl SaNet {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<SaNet> {
        config.validate()?;
        let backbone = Backbone::new("backbone", config.backbone.clone(), rng)?;
        let aggregator = Aggregator::new(
            "aggregator",
            &config.backbone.tap_channels(),
            config.hidden_channels,
            config.lstm_kernel,
            config.lstm_dilation,
            rng,
        )?;
        let head = Head::new(
            "head",
            config.backbone.final_channels(),
            config.hidden_channels,
            config.fusion,
            &config.psp_bins,
            config.psp_reduce,
            config.num_classes,
            rng,
        )?;
        Ok(SaNet { backbone, aggregator, head, config })
    }

    /// Full-resolution class logits for a batch image tensor.
    pub fn forward(&self, tape: &mut Tape, image: &Tensor) -> Result<Var> {
        let image_var = tape.leaf(image.clone());
        self.forward_var(tape, image_var)
    }

    pub fn forward_var(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let shape = tape.shape(image);
        let out = self.backbone.forward(tape, image)?;
        let fs = tape.shape(out.final_map);
        let aggregated = self.aggregator.aggregate(tape, &out.taps, (fs.h, fs.w))?;
        self.head
            .fuse_and_classify(tape, out.final_map, aggregated, (shape.h, shape.w))
    }
}

impl ParamSet for SaNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(f);
        self.aggregator.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.backbone.visit_mut(f);
        self.aggregator.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Ablation variants: a plain dilated FCN, one skip connection per tap, one
/// auxiliary classifier per tap, and the full aggregation module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Skip(usize),
    Aux(usize),
    Aggregation,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![Variant::Plain];
        v.extend((0..5).map(Variant::Skip));
        v.extend((0..5).map(Variant::Aux));
        v.push(Variant::Aggregation);
        v
    }

    pub fn name(&self) -> String {
        match self {
            Variant::Plain => "plain-fcn".to_string(),
            Variant::Skip(k) => format!("skip-s{k}"),
            Variant::Aux(k) => format!("aux-s{k}"),
            Variant::Aggregation => "aggregation".to_string(),
        }
    }
}

/// FCN for the ablation protocol: the stem plus a two-convolution pixel
/// classifier (3x3 then 1x1). Skip variants concatenate one resized tap,
/// aux variants add a 1x1 classifier on one tap, and the aggregation
/// variant concatenates the ConvLSTM output.
pub struct AblationModel {
    pub variant: Variant,
    pub backbone: Backbone,
    pub aggregator: Option<Aggregator>,
    conv1: ConvLayer,
    conv2: ConvLayer,
    aux_head: Option<ConvLayer>,
    pub num_classes: usize,
}

pub struct AblationOut {
    pub logits: Var,
    pub aux_logits: Option<Var>,
}

impl AblationModel {
    pub fn new(variant: Variant, config: &ModelConfig, rng: &mut SeededRng) -> Result<AblationModel> {
        config.validate()?;
        let backbone = Backbone::new("backbone", config.backbone.clone(), rng)?;
        let tap_channels = config.backbone.tap_channels();
        let final_c = config.backbone.final_channels();
        let (head_in, aggregator, aux_head) = match variant {
            Variant::Plain => (final_c, None, None),
            Variant::Skip(k) => {
                if k >= 5 {
                    return arg_err("skip variant: tap index out of range");
                }
                (final_c + tap_channels[k], None, None)
            }
            Variant::Aux(k) => {
                if k >= 5 {
                    return arg_err("aux variant: tap index out of range");
                }
                let aux = ConvLayer::new(
                    "aux.classifier",
                    tap_channels[k],
                    config.num_classes,
                    1,
                    ConvParams::unit(),
                    true,
                    rng,
                )?;
                (final_c, None, Some(aux))
            }
            Variant::Aggregation => {
                let agg = Aggregator::new(
                    "aggregator",
                    &tap_channels,
                    config.hidden_channels,
                    config.lstm_kernel,
                    config.lstm_dilation,
                    rng,
                )?;
                (final_c + config.hidden_channels, Some(agg), None)
            }
        };
        let conv1 = ConvLayer::new(
            "fcn.conv1",
            head_in,
            config.fcn_hidden,
            3,
            ConvParams::with_padding(1),
            true,
            rng,
        )?;
        let conv2 = ConvLayer::new(
            "fcn.conv2",
            config.fcn_hidden,
            config.num_classes,
            1,
            ConvParams::unit(),
            true,
            rng,
        )?;
        Ok(AblationModel {
            variant,
            backbone,
            aggregator,
            conv1,
            conv2,
            aux_head,
            num_classes: config.num_classes,
        })
    }

    pub fn forward(&self, tape: &mut Tape, image: &Tensor) -> Result<AblationOut> {
        let image_var = tape.leaf(image.clone());
        let shape = tape.shape(image_var);
        let out: BackboneOut = self.backbone.forward(tape, image_var)?;
        let fs = tape.shape(out.final_map);
        let feature = match (&self.variant, &self.aggregator) {
            (Variant::Skip(k), _) => {
                let resized = tape.bilinear_resize(out.taps[*k], fs.h, fs.w)?;
                tape.concat_channels(&[out.final_map, resized])?
            }
            (Variant::Aggregation, Some(agg)) => {
                let y = agg.aggregate(tape, &out.taps, (fs.h, fs.w))?;
                tape.concat_channels(&[out.final_map, y])?
            }
            _ => out.final_map,
        };
        let mut y = self.conv1.forward(tape, feature)?;
        y = tape.relu(y);
        y = self.conv2.forward(tape, y)?;
        let logits = tape.bilinear_resize(y, shape.h, shape.w)?;
        let aux_logits = match (&self.variant, &self.aux_head) {
            (Variant::Aux(k), Some(aux)) => {
                let a = aux.forward(tape, out.taps[*k])?;
                Some(tape.bilinear_resize(a, shape.h, shape.w)?)
            }
            _ => None,
        };
        Ok(AblationOut { logits, aux_logits })
    }
}

impl ParamSet for AblationModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(f);
        if let Some(a) = &self.aggregator {
            a.visit(f);
        }
        self.conv1.visit(f);
        self.conv2.visit(f);
        if let Some(a) = &self.aux_head {
            a.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.backbone.visit_mut(f);
        if let Some(a) = &mut self.aggregator {
            a.visit_mut(f);
        }
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        if let Some(a) = &mut self.aux_head {
            a.visit_mut(f);
        }
    }
}
