//! The full gradient-verification suite: every differentiable operation,
//! the recurrent cell, the aggregation and head modules, the losses, and a
//! whole micro model, each against central finite differences.

use crate::aggregator::Aggregator;
use crate::convlstm::{CellState, ConvLstmCell};
use crate::error::Result;
use crate::head::{FusionMode, Head};
use crate::model::{ModelConfig, SaNet};
use crate::ops::conv::ConvParams;
use crate::tensor::{SeededRng, Shape, Tensor, IGNORE_INDEX};
use crate::train::loss::{cross_entropy, lovasz_softmax};
use crate::train::Labels;
use crate::verify::gradcheck::{check_model_params, check_tape_op, sample_smooth, CheckReport};

const TOL: f64 = 1e-4;

fn random_labels(n: usize, h: usize, w: usize, k: usize, rng: &mut SeededRng) -> Labels {
    let data = (0..n * h * w).map(|_| rng.below(k) as u8).collect();
    Labels::new(n, h, w, data).expect("sized to fit")
}

/// Run every check; one report per operation.
pub fn run_gradcheck_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = SeededRng::new(seed);
    let mut reports = Vec::new();

    // tensor-core elementwise and activations
    let shape = Shape::new(2, 3, 4, 4);
    let pair = [sample_smooth(shape, &mut rng), sample_smooth(shape, &mut rng)];
    reports.push(check_tape_op(
        "elementwise_add",
        &|t, v| t.add(v[0], v[1]),
        &pair,
        TOL as _,
        &mut rng,
    )?);
    let pair = [sample_smooth(shape, &mut rng), sample_smooth(shape, &mut rng)];
    reports.push(check_tape_op(
        "elementwise_hadamard",
        &|t, v| t.hadamard(v[0], v[1]),
        &pair,
        TOL as _,
        &mut rng,
    )?);
    for (name, kind) in [
        ("activation_sigmoid", crate::tensor::Activation::Sigmoid),
        ("activation_tanh", crate::tensor::Activation::Tanh),
        ("activation_relu", crate::tensor::Activation::Relu),
    ] {
        let x = [sample_smooth(shape, &mut rng)];
        reports.push(check_tape_op(
            name,
            &move |t, v| Ok(t.activation(v[0], kind)),
            &x,
            TOL as _,
            &mut rng,
        )?);
    }
    let x = [sample_smooth(shape, &mut rng)];
    reports.push(check_tape_op("scale", &|t, v| Ok(t.scale(v[0], 0.37)), &x, TOL as _, &mut rng)?);

    // convolution variants
    let conv_cases: [(&str, usize, usize, usize, ConvParams, bool); 6] = [
        ("conv2d_basic", 3, 4, 3, ConvParams::with_padding(1), false),
        ("conv2d_bias_stride2", 3, 4, 3, ConvParams { stride: 2, padding: 1, dilation: 1, groups: 1 }, true),
        ("conv2d_dilated", 3, 4, 3, ConvParams { stride: 1, padding: 2, dilation: 2, groups: 1 }, false),
        ("conv2d_grouped", 4, 4, 3, ConvParams { stride: 1, padding: 1, dilation: 1, groups: 2 }, false),
        ("conv2d_grouped_dilated", 4, 6, 3, ConvParams { stride: 1, padding: 2, dilation: 2, groups: 2 }, true),
        ("conv2d_pointwise", 5, 3, 1, ConvParams::unit(), false),
    ];
    for (name, c_in, c_out, k, p, bias) in conv_cases {
        let x = sample_smooth(Shape::new(2, c_in, 6, 6), &mut rng);
        let w = sample_smooth(Shape::new(c_out, c_in / p.groups, k, k), &mut rng);
        let mut inputs = vec![x, w];
        if bias {
            inputs.push(sample_smooth(Shape::new(1, c_out, 1, 1), &mut rng));
        }
        reports.push(check_tape_op(
            name,
            &move |t, v| t.conv2d(v[0], v[1], if bias { Some(v[2]) } else { None }, p),
            &inputs,
            TOL as _,
            &mut rng,
        )?);
    }

    // resize, pool, concat, norm, softmax
    let x = [sample_smooth(Shape::new(1, 2, 4, 4), &mut rng)];
    reports.push(check_tape_op(
        "bilinear_upsample",
        &|t, v| t.bilinear_resize(v[0], 7, 9),
        &x,
        TOL as _,
        &mut rng,
    )?);
    let x = [sample_smooth(Shape::new(1, 2, 8, 8), &mut rng)];
    reports.push(check_tape_op(
        "bilinear_downsample",
        &|t, v| t.bilinear_resize(v[0], 3, 5),
        &x,
        TOL as _,
        &mut rng,
    )?);
    let x = [sample_smooth(Shape::new(2, 2, 7, 5), &mut rng)];
    reports.push(check_tape_op(
        "adaptive_avg_pool",
        &|t, v| t.adaptive_avg_pool(v[0], 3, 2),
        &x,
        TOL as _,
        &mut rng,
    )?);
    let abc = [
        sample_smooth(Shape::new(1, 2, 3, 3), &mut rng),
        sample_smooth(Shape::new(1, 3, 3, 3), &mut rng),
        sample_smooth(Shape::new(1, 1, 3, 3), &mut rng),
    ];
    reports.push(check_tape_op(
        "concat_channels",
        &|t, v| t.concat_channels(v),
        &abc,
        TOL as _,
        &mut rng,
    )?);
    let gn_inputs = [
        sample_smooth(Shape::new(2, 4, 3, 3), &mut rng),
        sample_smooth(Shape::new(1, 4, 1, 1), &mut rng),
        sample_smooth(Shape::new(1, 4, 1, 1), &mut rng),
    ];
    reports.push(check_tape_op(
        "group_norm",
        &|t, v| t.group_norm(v[0], v[1], v[2], 2, 1e-5),
        &gn_inputs,
        TOL as _,
        &mut rng,
    )?);
    let x = [sample_smooth(Shape::new(1, 4, 3, 3), &mut rng)];
    reports.push(check_tape_op(
        "softmax_channels",
        &|t, v| t.softmax_channels(v[0]),
        &x,
        TOL as _,
        &mut rng,
    )?);

    // recurrent cell: gradients w.r.t. input and previous state...
    let cell = ConvLstmCell::new("cell", 3, 3, 2, &mut rng)?;
    let step_inputs = [
        sample_smooth(Shape::new(1, 3, 5, 5), &mut rng),
        sample_smooth(Shape::new(1, 3, 5, 5), &mut rng),
        sample_smooth(Shape::new(1, 3, 5, 5), &mut rng),
    ];
    {
        let cell_ref = &cell;
        reports.push(check_tape_op(
            "convlstm_step_inputs",
            &move |t, v| {
                let state = CellState { h: v[1], c: v[2] };
                let next = cell_ref.step(t, v[0], &state)?;
                Ok(next.h)
            },
            &step_inputs,
            TOL as _,
            &mut rng,
        )?);
    }
    // ...and w.r.t. every kernel and bias through an m=4 unroll
    {
        let mut cell = ConvLstmCell::new("cell", 2, 3, 2, &mut rng)?;
        let seq: Vec<Tensor> =
            (0..4).map(|_| sample_smooth(Shape::new(1, 2, 4, 4), &mut rng)).collect();
        reports.push(check_model_params(
            "convlstm_unroll4_params",
            &mut cell,
            |cell, tape| {
                let vars: Vec<_> = seq.iter().map(|t| tape.leaf(t.clone())).collect();
                let hs = cell.run_sequence(tape, &vars)?;
                tape.mean_of(&hs)
            },
            TOL as _,
            None,
            &mut rng,
        )?);
    }

    // aggregation: conversion and the full Eq-style mean
    {
        let mut agg = Aggregator::new("agg", &[2, 3, 4], 3, 3, 2, &mut rng)?;
        let taps: Vec<Tensor> = [2usize, 3, 4]
            .iter()
            .enumerate()
            .map(|(i, &c)| sample_smooth(Shape::new(1, c, 4 + 2 * i, 4 + 2 * i), &mut rng))
            .collect();
        let tap0 = taps[0].clone();
        reports.push(check_model_params(
            "convert_tap",
            &mut agg,
            |agg, tape| {
                let x = tape.leaf(tap0.clone());
                agg.convert_tap(tape, x, 0, (4, 4))
            },
            TOL as _,
            None,
            &mut rng,
        )?);
        reports.push(check_model_params(
            "aggregate_m3",
            &mut agg,
            |agg, tape| {
                let vars: Vec<_> = taps.iter().map(|t| tape.leaf(t.clone())).collect();
                agg.aggregate(tape, &vars, (4, 4))
            },
            TOL as _,
            Some(6),
            &mut rng,
        )?);
    }

    // head modules
    {
        let mut psp = crate::head::PspModule::new("psp", 4, &[(2, 2), (1, 1)], 2, &mut rng)?;
        let feature = sample_smooth(Shape::new(1, 4, 4, 4), &mut rng);
        reports.push(check_model_params(
            "psp_forward",
            &mut psp,
            |psp, tape| {
                let f = tape.leaf(feature.clone());
                psp.forward(tape, f)
            },
            TOL as _,
            None,
            &mut rng,
        )?);
        let mut head = Head::new("head", 4, 3, FusionMode::Concat, &[(2, 2), (1, 1)], 2, 3, &mut rng)?;
        let stem = sample_smooth(Shape::new(1, 4, 4, 4), &mut rng);
        let agg = sample_smooth(Shape::new(1, 3, 4, 4), &mut rng);
        reports.push(check_model_params(
            "fuse_and_classify",
            &mut head,
            |head, tape| {
                let s = tape.leaf(stem.clone());
                let a = tape.leaf(agg.clone());
                head.fuse_and_classify(tape, s, a, (8, 8))
            },
            TOL as _,
            None,
            &mut rng,
        )?);
    }

    // losses, differentiated through their logits
    {
        let labels = random_labels(1, 3, 3, 3, &mut rng);
        let logits = [sample_smooth(Shape::new(1, 3, 3, 3), &mut rng)];
        let labels_ce = labels.clone();
        reports.push(check_tape_op(
            "cross_entropy",
            &move |t, v| Ok(cross_entropy(t, v[0], &labels_ce, IGNORE_INDEX)?.var),
            &logits,
            TOL as _,
            &mut rng,
        )?);
        let labels_lv = labels.clone();
        reports.push(check_tape_op(
            "lovasz_softmax",
            &move |t, v| {
                let probs = t.softmax_channels(v[0])?;
                Ok(lovasz_softmax(t, probs, &labels_lv, IGNORE_INDEX)?.var)
            },
            &logits,
            TOL as _,
            &mut rng,
        )?);
    }

    // a whole micro model through the cross-entropy objective
    {
        let cfg = micro_model_config();
        let mut model = SaNet::new(cfg, &mut rng)?;
        let image = sample_smooth(Shape::new(2, 3, 16, 16), &mut rng);
        let labels = random_labels(2, 16, 16, 3, &mut rng);
        reports.push(check_model_params(
            "end_to_end_micro",
            &mut model,
            |model, tape| {
                let logits = model.forward(tape, &image)?;
                Ok(cross_entropy(tape, logits, &labels, IGNORE_INDEX)?.var)
            },
            TOL as _,
            Some(2),
            &mut rng,
        )?);
    }

    Ok(reports)
}

/// 2-image, 16x16, 3-class micro model for the end-to-end check.
pub fn micro_model_config() -> ModelConfig {
    use crate::backbone::{BackboneConfig, StageConfig};
    ModelConfig {
        backbone: BackboneConfig {
            stem_channels: 8,
            stages: vec![
                StageConfig { blocks: 1, channels: 8, cardinality: 2, stride: 1, dilation: 1 },
                StageConfig { blocks: 1, channels: 8, cardinality: 2, stride: 2, dilation: 1 },
                StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 1, dilation: 2 },
                StageConfig { blocks: 1, channels: 16, cardinality: 2, stride: 1, dilation: 4 },
            ],
        },
        hidden_channels: 8,
        lstm_kernel: 3,
        lstm_dilation: 2,
        psp_bins: vec![(2, 2), (1, 1)],
        psp_reduce: 8,
        fusion: FusionMode::Concat,
        num_classes: 3,
        fcn_hidden: 8,
    }
}

pub fn suite_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}
