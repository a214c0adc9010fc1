//! Dilated fully-convolutional stem in the ResNeXt style, desk scale.
//!
//! Five tap points are exported: s0 after the stem convolution's ReLU
//! (half resolution), then the final ReLU of each of the four stages. The
//! last two stages trade their stride for dilation, so the final map sits
//! at 1/8 of the input resolution.

use crate::error::{arg_err, shape_err, Result};
use crate::layers::{ConvLayer, GroupNormLayer, ParamSet};
use crate::ops::conv::ConvParams;
use crate::tape::{Tape, Var};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub cardinality: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return arg_err("stage: blocks must be >= 1");
        }
        if !(self.stride == 1 || self.stride == 2) {
            return arg_err("stage: stride must be 1 or 2");
        }
        if self.dilation > 1 && self.stride != 1 {
            return arg_err("stage: dilation > 1 requires stride 1");
        }
        if self.channels % 2 != 0 || (self.channels / 2) % self.cardinality != 0 {
            return shape_err(format!(
                "stage: bottleneck width {} not divisible by cardinality {}",
                self.channels / 2,
                self.cardinality
            ));
        }
        Ok(())
    }
}

/// 1x1 reduce, grouped 3x3 (stage dilation), 1x1 expand, residual add, ReLU.
struct Bottleneck {
    reduce: ConvLayer,
    n1: GroupNormLayer,
    grouped: ConvLayer,
    n2: GroupNormLayer,
    expand: ConvLayer,
    n3: GroupNormLayer,
    shortcut: Option<(ConvLayer, GroupNormLayer)>,
}

impl Bottleneck {
    fn new(
        name: &str,
        c_in: usize,
        cfg: StageConfig,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Result<Bottleneck> {
        let mid = cfg.channels / 2;
        let reduce =
            ConvLayer::new(format!("{name}.reduce"), c_in, mid, 1, ConvParams::unit(), false, rng)?;
        let grouped = ConvLayer::new(
            format!("{name}.grouped"),
            mid,
            mid,
            3,
            ConvParams {
                stride,
                padding: cfg.dilation,
                dilation: cfg.dilation,
                groups: cfg.cardinality,
            },
            false,
            rng,
        )?;
        let expand = ConvLayer::new(
            format!("{name}.expand"),
            mid,
            cfg.channels,
            1,
            ConvParams::unit(),
            false,
            rng,
        )?;
        let shortcut = if c_in != cfg.channels || stride != 1 {
            let conv = ConvLayer::new(
                format!("{name}.shortcut"),
                c_in,
                cfg.channels,
                1,
                ConvParams { stride, ..ConvParams::unit() },
                false,
                rng,
            )?;
            let norm = GroupNormLayer::new(format!("{name}.shortcut_norm"), cfg.channels);
            Some((conv, norm))
        } else {
            None
        };
        Ok(Bottleneck {
            reduce,
            n1: GroupNormLayer::new(format!("{name}.n1"), mid),
            grouped,
            n2: GroupNormLayer::new(format!("{name}.n2"), mid),
            expand,
            n3: GroupNormLayer::new(format!("{name}.n3"), cfg.channels),
            shortcut,
        })
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut y = self.reduce.forward(tape, x)?;
        y = self.n1.forward(tape, y)?;
        y = tape.relu(y);
        y = self.grouped.forward(tape, y)?;
        y = self.n2.forward(tape, y)?;
        y = tape.relu(y);
        y = self.expand.forward(tape, y)?;
        y = self.n3.forward(tape, y)?;
        let short = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(tape, x)?;
                norm.forward(tape, s)?
            }
            None => x,
        };
        let sum = tape.add(y, short)?;
        Ok(tape.relu(sum))
    }
}

impl ParamSet for Bottleneck {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.reduce.visit(f);
        self.n1.visit(f);
        self.grouped.visit(f);
        self.n2.visit(f);
        self.expand.visit(f);
        self.n3.visit(f);
        if let Some((c, n)) = &self.shortcut {
            c.visit(f);
            n.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.reduce.visit_mut(f);
        self.n1.visit_mut(f);
        self.grouped.visit_mut(f);
        self.n2.visit_mut(f);
        self.expand.visit_mut(f);
        self.n3.visit_mut(f);
        if let Some((c, n)) = &mut self.shortcut {
            c.visit_mut(f);
            n.visit_mut(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return arg_err("backbone: exactly four stages expected");
        }
        if self.stem_channels == 0 {
            return arg_err("backbone: stem channels must be >= 1");
        }
        for s in &self.stages {
            s.validate()?;
        }
        Ok(())
    }

    /// Channel counts of the five taps, shallow to deep.
    pub fn tap_channels(&self) -> Vec<usize> {
        let mut out = vec![self.stem_channels];
        out.extend(self.stages.iter().map(|s| s.channels));
        out
    }

    pub fn final_channels(&self) -> usize {
        self.stages[3].channels
    }

    /// Input-to-final-map resolution ratio implied by the configured strides.
    pub fn output_stride(&self) -> usize {
        4 * self.stages.iter().map(|s| s.stride).product::<usize>()
    }
}

pub struct Backbone {
    stem: ConvLayer,
    stem_norm: GroupNormLayer,
    down: ConvLayer,
    down_norm: GroupNormLayer,
    stages: Vec<Vec<Bottleneck>>,
    pub config: BackboneConfig,
}

/// The five taps plus the final map (an alias of s4).
pub struct BackboneOut {
    pub taps: [Var; 5],
    pub final_map: Var,
}

impl Backbone {
    pub fn new(name: &str, config: BackboneConfig, rng: &mut SeededRng) -> Result<Backbone> {
        config.validate()?;
        let stem = ConvLayer::new(
            format!("{name}.stem"),
            3,
            config.stem_channels,
            3,
            ConvParams { stride: 2, padding: 1, dilation: 1, groups: 1 },
            false,
            rng,
        )?;
        let stem_norm = GroupNormLayer::new(format!("{name}.stem_norm"), config.stem_channels);
        // stride-2 convolution instead of max pooling after s0
        let down = ConvLayer::new(
            format!("{name}.down"),
            config.stem_channels,
            config.stem_channels,
            3,
            ConvParams { stride: 2, padding: 1, dilation: 1, groups: 1 },
            false,
            rng,
        )?;
        let down_norm = GroupNormLayer::new(format!("{name}.down_norm"), config.stem_channels);

        let mut stages = Vec::with_capacity(4);
        let mut c_in = config.stem_channels;
        for (si, scfg) in config.stages.iter().enumerate() {
            let mut blocks = Vec::with_capacity(scfg.blocks);
            for bi in 0..scfg.blocks {
                // only the first block of a stage changes resolution
                let stride = if bi == 0 { scfg.stride } else { 1 };
                blocks.push(Bottleneck::new(
                    &format!("{name}.stage{}.block{bi}", si + 1),
                    c_in,
                    *scfg,
                    stride,
                    rng,
                )?);
                c_in = scfg.channels;
            }
            stages.push(blocks);
        }
        Ok(Backbone { stem, stem_norm, down, down_norm, stages, config })
    }

    pub fn forward(&self, tape: &mut Tape, image: Var) -> Result<BackboneOut> {
        let shape = tape.shape(image);
        if shape.h % 8 != 0 || shape.w % 8 != 0 {
            return arg_err(format!(
                "backbone: input extents {}x{} must be divisible by 8",
                shape.h, shape.w
            ));
        }
        let mut x = self.stem.forward(tape, image)?;
        x = self.stem_norm.forward(tape, x)?;
        let s0 = tape.relu(x);
        x = self.down.forward(tape, s0)?;
        x = self.down_norm.forward(tape, x)?;
        x = tape.relu(x);
        let mut taps = [s0; 5];
        for (si, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                x = b.forward(tape, x)?;
            }
            taps[si + 1] = x;
        }
        Ok(BackboneOut { taps, final_map: x })
    }
}

impl ParamSet for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit(f);
        self.stem_norm.visit(f);
        self.down.visit(f);
        self.down_norm.visit(f);
        for stage in &self.stages {
            for b in stage {
                b.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_mut(f);
        self.stem_norm.visit_mut(f);
        self.down.visit_mut(f);
        self.down_norm.visit_mut(f);
        for stage in &mut self.stages {
            for b in stage {
                b.visit_mut(f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    pub(crate) fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            stem_channels: 8,
            stages: vec![
                StageConfig { blocks: 1, channels: 8, cardinality: 2, stride: 1, dilation: 1 },
                StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 2, dilation: 1 },
                StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 1, dilation: 2 },
                StageConfig { blocks: 1, channels: 24, cardinality: 2, stride: 1, dilation: 4 },
            ],
        }
    }

    #[test]
    fn tap_resolutions_follow_stride_plan() {
        let mut rng = SeededRng::new(5);
        let bb = Backbone::new("bb", tiny_config(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(Tensor::he_init(Shape::new(1, 3, 64, 64), 2, &mut rng).unwrap());
        let out = bb.forward(&mut tape, img).unwrap();
        let hw = |v: Var| {
            let s = tape.shape(v);
            (s.h, s.w)
        };
        assert_eq!(hw(out.taps[0]), (32, 32));
        assert_eq!(hw(out.taps[1]), (16, 16));
        assert_eq!(hw(out.taps[2]), (8, 8));
        assert_eq!(hw(out.taps[3]), (8, 8));
        assert_eq!(hw(out.taps[4]), (8, 8));
        assert_eq!(tape.shape(out.final_map), tape.shape(out.taps[4]));
        assert_eq!(bb.config.output_stride(), 8);
    }

    #[test]
    fn deterministic_per_seed() {
        let run = || {
            let mut rng = SeededRng::new(77);
            let bb = Backbone::new("bb", tiny_config(), &mut rng).unwrap();
            let mut tape = Tape::new();
            let img =
                tape.leaf(Tensor::he_init(Shape::new(1, 3, 32, 32), 2, &mut rng).unwrap());
            let out = bb.forward(&mut tape, img).unwrap();
            tape.value(out.final_map).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn undilated_stage3_with_stride_restores_os16() {
        let mut cfg = tiny_config();
        cfg.stages[2] = StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 2, dilation: 1 };
        assert_eq!(cfg.output_stride(), 16);
        let mut rng = SeededRng::new(5);
        let bb = Backbone::new("bb", cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(Tensor::he_init(Shape::new(1, 3, 64, 64), 2, &mut rng).unwrap());
        let out = bb.forward(&mut tape, img).unwrap();
        let s = tape.shape(out.final_map);
        assert_eq!((s.h, s.w), (4, 4));
    }

    #[test]
    fn indivisible_extents_rejected() {
        let mut rng = SeededRng::new(5);
        let bb = Backbone::new("bb", tiny_config(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(Tensor::zeros(Shape::new(1, 3, 20, 24)));
        assert!(bb.forward(&mut tape, img).is_err());
    }

    #[test]
    fn dilation_requires_unit_stride() {
        let bad = StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 2, dilation: 2 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_residual_branch_passes_shortcut() {
        let mut rng = SeededRng::new(5);
        let cfg = StageConfig { blocks: 1, channels: 8, cardinality: 2, stride: 1, dilation: 1 };
        let mut block = Bottleneck::new("b", 8, cfg, 1, &mut rng).unwrap();
        block.expand.weight.data_mut().fill(0.0); // kill the residual branch
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::he_init(Shape::new(1, 8, 4, 4), 2, &mut rng).unwrap());
        let y = block.forward(&mut tape, x).unwrap();
        // identity shortcut (no projection): out = relu(x + 0) pointwise
        for (yo, xo) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert_eq!(*yo, xo.max(0.0));
        }
    }

    #[test]
    fn cardinality_one_is_plain_bottleneck() {
        let cfg = StageConfig { blocks: 1, channels: 8, cardinality: 1, stride: 1, dilation: 1 };
        assert!(cfg.validate().is_ok());
        let mut rng = SeededRng::new(5);
        let block = Bottleneck::new("b", 8, cfg, 1, &mut rng).unwrap();
        assert_eq!(block.grouped.params.groups, 1);
    }
}
