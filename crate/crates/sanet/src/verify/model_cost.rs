//! Cost accounting for the full parsing model: a dataflow plan is built by
//! shape propagation that mirrors the forward pass, then costed layer by
//! layer.

use crate::error::Result;
use crate::layers::gn_groups;
use crate::model::ModelConfig;
use crate::ops::conv::ConvParams;
use crate::tensor::Shape;
use crate::verify::flops::{plan_report, CostReport, PlanBuilder};

fn gn_step(b: &mut PlanBuilder, name: &str, input: usize) -> usize {
    let s = b.shape(input);
    let _ = gn_groups(s.c); // group arithmetic is shape-neutral
    b.passthrough(format!("{name}"), vec![input], s, 2 * s.c as u64)
}

fn relu_step(b: &mut PlanBuilder, name: &str, input: usize) -> usize {
    let s = b.shape(input);
    b.passthrough(format!("{name}"), vec![input], s, 0)
}

/// Per-layer and total MAC / parameter / activation accounting for a model
/// configuration at the given input shape.
pub fn flops_count(cfg: &ModelConfig, input: Shape) -> Result<CostReport> {
    cfg.validate()?;
    let mut b = PlanBuilder::new(input);
    let bb = &cfg.backbone;

    // stem and the stride-2 conv that replaces pooling
    let p_s2 = ConvParams { stride: 2, padding: 1, dilation: 1, groups: 1 };
    let mut x = b.conv("backbone.stem", 0, bb.stem_channels, 3, p_s2, false)?;
    x = gn_step(&mut b, "backbone.stem_norm", x);
    let s0 = relu_step(&mut b, "backbone.stem_relu(s0)", x);
    x = b.conv("backbone.down", s0, bb.stem_channels, 3, p_s2, false)?;
    x = gn_step(&mut b, "backbone.down_norm", x);
    x = relu_step(&mut b, "backbone.down_relu", x);

    let mut taps = vec![s0];
    for (si, stage) in bb.stages.iter().enumerate() {
        let mid = stage.channels / 2;
        for bi in 0..stage.blocks {
            let name = format!("backbone.stage{}.block{bi}", si + 1);
            let stride = if bi == 0 { stage.stride } else { 1 };
            let block_in = x;
            let mut y = b.conv(format!("{name}.reduce"), block_in, mid, 1, ConvParams::unit(), false)?;
            y = gn_step(&mut b, &format!("{name}.n1"), y);
            y = relu_step(&mut b, &format!("{name}.relu1"), y);
            y = b.conv(
                format!("{name}.grouped"),
                y,
                mid,
                3,
                ConvParams {
                    stride,
                    padding: stage.dilation,
                    dilation: stage.dilation,
                    groups: stage.cardinality,
                },
                false,
            )?;
            y = gn_step(&mut b, &format!("{name}.n2"), y);
            y = relu_step(&mut b, &format!("{name}.relu2"), y);
            y = b.conv(format!("{name}.expand"), y, stage.channels, 1, ConvParams::unit(), false)?;
            y = gn_step(&mut b, &format!("{name}.n3"), y);
            let in_shape = b.shape(block_in);
            let short = if in_shape.c != stage.channels || stride != 1 {
                let s = b.conv(
                    format!("{name}.shortcut"),
                    block_in,
                    stage.channels,
                    1,
                    ConvParams { stride, ..ConvParams::unit() },
                    false,
                )?;
                gn_step(&mut b, &format!("{name}.shortcut_norm"), s)
            } else {
                block_in
            };
            let sum = b.passthrough(format!("{name}.add"), vec![y, short], b.shape(y), 0);
            x = relu_step(&mut b, &format!("{name}.relu_out"), sum);
        }
        taps.push(x);
    }
    let final_map = x;
    let fs = b.shape(final_map);

    // aggregation pipeline
    let c_prime = cfg.hidden_channels;
    let mut converted = Vec::new();
    for (i, &tap) in taps.iter().enumerate() {
        let ts = b.shape(tap);
        let resized = if (ts.h, ts.w) == (fs.h, fs.w) {
            tap
        } else {
            b.passthrough(
                format!("aggregator.resize_s{i}"),
                vec![tap],
                Shape::new(ts.n, ts.c, fs.h, fs.w),
                0,
            )
        };
        converted.push(b.conv(
            format!("aggregator.convert_s{i}"),
            resized,
            c_prime,
            1,
            ConvParams::unit(),
            false,
        )?);
    }
    let lstm_p = ConvParams {
        stride: 1,
        padding: cfg.lstm_dilation * (cfg.lstm_kernel - 1) / 2,
        dilation: cfg.lstm_dilation,
        groups: 1,
    };
    let state_shape = Shape::new(fs.n, c_prime, fs.h, fs.w);
    // the recurrence starts from explicit zero state tensors
    let mut h_prev = b.passthrough("aggregator.cell.h_init", vec![], state_shape, 0);
    let mut c_prev = b.passthrough("aggregator.cell.c_init", vec![], state_shape, 0);
    let mut hidden = Vec::new();
    for (t, &xv) in converted.iter().enumerate() {
        let mut gate_outs = Vec::new();
        for gate in ["i", "f", "o", "g"] {
            // weights are shared across timesteps: count them once
            let name = format!("aggregator.cell.t{t}.w_{gate}x");
            let gx = if t == 0 {
                b.conv(name, xv, c_prime, cfg.lstm_kernel, lstm_p, true)?
            } else {
                b.conv_shared(name, xv, c_prime, cfg.lstm_kernel, lstm_p, true)?
            };
            gate_outs.push(gx);
            let name = format!("aggregator.cell.t{t}.w_{gate}h");
            let gh = if t == 0 {
                b.conv(name, h_prev, c_prime, cfg.lstm_kernel, lstm_p, false)?
            } else {
                b.conv_shared(name, h_prev, c_prime, cfg.lstm_kernel, lstm_p, false)?
            };
            gate_outs.push(gh);
        }
        let mut cell_inputs = gate_outs;
        cell_inputs.push(c_prev);
        let c_t = b.passthrough(format!("aggregator.cell.t{t}.cell"), cell_inputs, state_shape, 0);
        let h_t = b.passthrough(format!("aggregator.cell.t{t}.hidden"), vec![c_t], state_shape, 0);
        c_prev = c_t;
        h_prev = h_t;
        hidden.push(h_t);
    }
    let y = b.passthrough("aggregator.mean", hidden.clone(), state_shape, 0);

    // head: fusion, pyramid pooling, classifier, upsample
    let fused_c = cfg.fusion.fused_channels(fs.c, c_prime)?;
    let fused = b.passthrough(
        "head.fuse",
        vec![final_map, y],
        Shape::new(fs.n, fused_c, fs.h, fs.w),
        0,
    );
    let mut psp_parts = vec![fused];
    for (i, &(bh, bw)) in cfg.psp_bins.iter().enumerate() {
        let (bh, bw) = (bh.min(fs.h), bw.min(fs.w));
        let pooled = b.passthrough(
            format!("head.psp.pool{i}"),
            vec![fused],
            Shape::new(fs.n, fused_c, bh, bw),
            0,
        );
        let reduced = b.conv(
            format!("head.psp.branch{i}"),
            pooled,
            cfg.psp_reduce,
            1,
            ConvParams::unit(),
            false,
        )?;
        let up = b.passthrough(
            format!("head.psp.up{i}"),
            vec![reduced],
            Shape::new(fs.n, cfg.psp_reduce, fs.h, fs.w),
            0,
        );
        psp_parts.push(up);
    }
    let psp_c = fused_c + cfg.psp_bins.len() * cfg.psp_reduce;
    let context = b.passthrough(
        "head.psp.concat",
        psp_parts,
        Shape::new(fs.n, psp_c, fs.h, fs.w),
        0,
    );
    let logits8 = b.conv(
        "head.classifier",
        context,
        cfg.num_classes,
        3,
        ConvParams::with_padding(1),
        true,
    )?;
    b.passthrough(
        "head.upsample",
        vec![logits8],
        Shape::new(fs.n, cfg.num_classes, input.h, input.w),
        0,
    );

    Ok(plan_report(&b.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::collect_params;
    use crate::model::SaNet;
    use crate::tensor::SeededRng;

    #[test]
    fn totals_are_additive() {
        let cfg = ModelConfig::desk(5);
        let rep = flops_count(&cfg, Shape::new(1, 3, 64, 64)).unwrap();
        let sum: u128 = rep.layers.iter().map(|l| l.macs).sum();
        assert_eq!(sum, rep.total_macs);
        assert_eq!(rep.total_flops, 2 * rep.total_macs);
        assert!(rep.peak_activation > 0);
    }

    #[test]
    fn parameter_count_matches_the_real_model() {
        let cfg = ModelConfig::desk(5);
        let rep = flops_count(&cfg, Shape::new(1, 3, 64, 64)).unwrap();
        let mut rng = SeededRng::new(1);
        let model = SaNet::new(cfg, &mut rng).unwrap();
        let live: u64 = collect_params(&model)
            .iter()
            .map(|(_, t)| t.data().len() as u64)
            .sum();
        assert_eq!(rep.total_params, live);
    }

    #[test]
    fn invariant_to_stage_list_identity() {
        let cfg = ModelConfig::desk(3);
        let a = flops_count(&cfg, Shape::new(1, 3, 32, 32)).unwrap();
        let b = flops_count(&cfg.clone(), Shape::new(1, 3, 32, 32)).unwrap();
        assert_eq!(a.total_macs, b.total_macs);
        assert_eq!(a.peak_activation, b.peak_activation);
    }
}
