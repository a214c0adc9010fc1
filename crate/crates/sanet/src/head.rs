//! Prediction head: fuse the stem's final map with the aggregated map,
//! gather global context through pyramid pooling, and project to
//! full-resolution class logits.

use crate::error::{arg_err, shape_err, Result};
use crate::layers::{ConvLayer, ParamSet};
use crate::ops::conv::ConvParams;
use crate::tape::{Tape, Var};
use crate::tensor::{SeededRng, Tensor};

/// How the two pipelines meet. The default is channel concatenation; `Add`
/// requires matching channel counts, `AggregatedOnly` drops the stem path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Concat,
    Add,
    AggregatedOnly,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<FusionMode> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "add" => Ok(FusionMode::Add),
            "aggregated-only" => Ok(FusionMode::AggregatedOnly),
            other => arg_err(format!("unknown fusion mode '{other}'")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
            FusionMode::AggregatedOnly => "aggregated-only",
        }
    }

    pub fn fused_channels(&self, stem: usize, aggregated: usize) -> Result<usize> {
        match self {
            FusionMode::Concat => Ok(stem + aggregated),
            FusionMode::Add => {
                if stem != aggregated {
                    return shape_err(format!(
                        "fusion 'add' needs matching channels, got {stem} and {aggregated}"
                    ));
                }
                Ok(stem)
            }
            FusionMode::AggregatedOnly => Ok(aggregated),
        }
    }
}

/// Pyramid pooling: per bin, adaptive average pool, 1x1 reduction, bilinear
/// upsample back to the feature extents; all branches concatenate with the
/// input feature. Bins clamp to the feature extents, so the large paper
/// bin lists stay legal on small maps.
pub struct PspModule {
    pub bins: Vec<(usize, usize)>,
    pub reduce_channels: usize,
    branches: Vec<ConvLayer>,
}

impl PspModule {
    pub fn new(
        name: &str,
        c_in: usize,
        bins: &[(usize, usize)],
        reduce_channels: usize,
        rng: &mut SeededRng,
    ) -> Result<PspModule> {
        if bins.is_empty() {
            return arg_err("psp: bin list must be nonempty");
        }
        if reduce_channels == 0 {
            return arg_err("psp: reduce_channels must be >= 1");
        }
        let branches = bins
            .iter()
            .enumerate()
            .map(|(i, _)| ConvLayer::pointwise(format!("{name}.branch{i}"), c_in, reduce_channels, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(PspModule { bins: bins.to_vec(), reduce_channels, branches })
    }

    pub fn out_channels(&self, c_in: usize) -> usize {
        c_in + self.bins.len() * self.reduce_channels
    }

    pub fn forward(&self, tape: &mut Tape, feature: Var) -> Result<Var> {
        let fs = tape.shape(feature);
        let mut parts = vec![feature];
        for ((bh, bw), conv) in self.bins.iter().zip(&self.branches) {
            let bh = (*bh).min(fs.h);
            let bw = (*bw).min(fs.w);
            let pooled = tape.adaptive_avg_pool(feature, bh, bw)?;
            let reduced = conv.forward(tape, pooled)?;
            let up = tape.bilinear_resize(reduced, fs.h, fs.w)?;
            parts.push(up);
        }
        tape.concat_channels(&parts)
    }
}

impl ParamSet for PspModule {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for b in &self.branches {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
    }
}

pub struct Head {
    pub fusion: FusionMode,
    pub psp: PspModule,
    classifier: ConvLayer,
}

impl Head {
    pub fn new(
        name: &str,
        stem_channels: usize,
        aggregated_channels: usize,
        fusion: FusionMode,
        bins: &[(usize, usize)],
        reduce_channels: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Head> {
        if num_classes == 0 {
            return arg_err("head: need at least one class");
        }
        let fused = fusion.fused_channels(stem_channels, aggregated_channels)?;
        let psp = PspModule::new(&format!("{name}.psp"), fused, bins, reduce_channels, rng)?;
        let classifier = ConvLayer::new(
            format!("{name}.classifier"),
            psp.out_channels(fused),
            num_classes,
            3,
            ConvParams::with_padding(1),
            true,
            rng,
        )?;
        Ok(Head { fusion, psp, classifier })
    }

    /// Fuse the two 1/8-resolution pipelines, run pyramid pooling, project
    /// to class logits and upsample to the requested extents.
    pub fn fuse_and_classify(
        &self,
        tape: &mut Tape,
        stem_final: Var,
        aggregated: Var,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let s = tape.shape(stem_final);
        let a = tape.shape(aggregated);
        if (s.h, s.w) != (a.h, a.w) || s.n != a.n {
            return shape_err(format!("head: pipelines disagree, {s} vs {a}"));
        }
        let fused = match self.fusion {
            FusionMode::Concat => tape.concat_channels(&[stem_final, aggregated])?,
            FusionMode::Add => tape.add(stem_final, aggregated)?,
            FusionMode::AggregatedOnly => aggregated,
        };
        let context = self.psp.forward(tape, fused)?;
        let logits = self.classifier.forward(tape, context)?;
        tape.bilinear_resize(logits, out_hw.0, out_hw.1)
    }
}

impl ParamSet for Head {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.psp.visit(f);
        self.classifier.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.psp.visit_mut(f);
        self.classifier.visit_mut(f);
    }
}
