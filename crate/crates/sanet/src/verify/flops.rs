//! Compute-cost accounting by shape propagation: multiply-accumulate
//! counts, parameter counts, and peak live activation elements under
//! sequential execution. Convention: 2 FLOPs per MAC, stated in reports.

use crate::error::{shape_err, Result};
use crate::ops::conv::{conv_output_shape, ConvParams};
use crate::tensor::Shape;

/// One step of a dataflow plan. `inputs` are ids of earlier steps
/// (0 = the network input; step k produces id k+1).
#[derive(Clone, Debug)]
pub struct PlanStep {
    pub name: String,
    pub inputs: Vec<usize>,
    pub output: Shape,
    pub macs: u128,
    pub params: u64,
}

#[derive(Clone, Debug)]
pub struct Plan {
    pub input: Shape,
    pub steps: Vec<PlanStep>,
}

#[derive(Clone, Debug)]
pub struct LayerCost {
    pub name: String,
    pub output: Shape,
    pub macs: u128,
    pub params: u64,
}

#[derive(Clone, Debug)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_macs: u128,
    pub total_flops: u128,
    pub total_params: u64,
    pub peak_activation: u128,
}

impl CostReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<40} {:>18} {:>14} {:>12}\n",
            "layer", "output", "MACs", "params"
        ));
        for l in &self.layers {
            out.push_str(&format!(
                "{:<40} {:>18} {:>14} {:>12}\n",
                l.name,
                l.output.to_string(),
                l.macs,
                l.params
            ));
        }
        out.push_str(&format!(
            "total: {} MACs ({} FLOPs at 2 per MAC), {} params, peak activation {} elements\n",
            self.total_macs, self.total_flops, self.total_params, self.peak_activation
        ));
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("layer,output,macs,params\n");
        for l in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", l.name, l.output, l.macs, l.params));
        }
        out.push_str(&format!("total,,{},{}\n", self.total_macs, self.total_params));
        out.push_str(&format!("peak_activation,,{},\n", self.peak_activation));
        out
    }
}

/// MACs for one convolution: `c_out * (c_in/groups) * kh * kw * h_out * w_out`
/// per batch item.
pub fn conv_macs(c_in: usize, c_out: usize, kh: usize, kw: usize, groups: usize, out: Shape) -> u128 {
    (c_out as u128)
        * (c_in / groups) as u128
        * (kh * kw) as u128
        * (out.h * out.w) as u128
        * out.n as u128
}

pub fn conv_param_count(c_in: usize, c_out: usize, kh: usize, kw: usize, groups: usize, bias: bool) -> u64 {
    let w = (c_out * (c_in / groups) * kh * kw) as u64;
    if bias {
        w + c_out as u64
    } else {
        w
    }
}

/// Cost report for an arbitrary plan. Peak activation is the maximum, over
/// the sequential step order, of the summed elements of all live tensors; a
/// tensor is live from production until its last consumer.
pub fn plan_report(plan: &Plan) -> CostReport {
    let n_ids = plan.steps.len() + 1;
    let mut last_use = vec![0usize; n_ids]; // step index after which id dies
    for (k, step) in plan.steps.iter().enumerate() {
        for &i in &step.inputs {
            last_use[i] = last_use[i].max(k);
        }
        last_use[k + 1] = k; // at least alive at its own production
    }
    // The final step's output is the result: alive through the end.
    last_use[plan.steps.len()] = plan.steps.len().saturating_sub(1);

    let sizes: Vec<u128> = std::iter::once(plan.input.numel() as u128)
        .chain(plan.steps.iter().map(|s| s.output.numel() as u128))
        .collect();

    let mut peak: u128 = sizes[0];
    for k in 0..plan.steps.len() {
        // ids live during step k: produced at or before k+1, last used at or after k
        let mut live: u128 = 0;
        for id in 0..n_ids {
            let produced_at = if id == 0 { 0 } else { id - 1 }; // id produced by step id-1
            if produced_at <= k && last_use[id] >= k {
                live += sizes[id];
            }
        }
        peak = peak.max(live);
    }

    let layers: Vec<LayerCost> = plan
        .steps
        .iter()
        .map(|s| LayerCost {
            name: s.name.clone(),
            output: s.output,
            macs: s.macs,
            params: s.params,
        })
        .collect();
    let total_macs: u128 = layers.iter().map(|l| l.macs).sum();
    let total_params: u64 = layers.iter().map(|l| l.params).sum();
    CostReport {
        layers,
        total_macs,
        total_flops: 2 * total_macs,
        total_params,
        peak_activation: peak,
    }
}

/// Incremental plan construction. Ids: 0 is the network input; the step
/// pushed k-th produces id k+1.
pub struct PlanBuilder {
    plan: Plan,
    shapes: Vec<Shape>,
}

impl PlanBuilder {
    pub fn new(input: Shape) -> PlanBuilder {
        PlanBuilder { plan: Plan { input, steps: Vec::new() }, shapes: vec![input] }
    }

    pub fn shape(&self, id: usize) -> Shape {
        self.shapes[id]
    }

    fn push(&mut self, name: String, inputs: Vec<usize>, output: Shape, macs: u128, params: u64) -> usize {
        self.plan.steps.push(PlanStep { name, inputs, output, macs, params });
        self.shapes.push(output);
        self.shapes.len() - 1
    }

    pub fn conv(
        &mut self,
        name: impl Into<String>,
        input: usize,
        c_out: usize,
        kernel: usize,
        p: ConvParams,
        bias: bool,
    ) -> Result<usize> {
        let cur = self.shapes[input];
        let name = name.into();
        if cur.c % p.groups != 0 || c_out % p.groups != 0 {
            return Err(crate::error::Error::Config(format!(
                "{name}: groups {} do not divide channels {} -> {c_out}",
                p.groups, cur.c
            )));
        }
        let (oh, ow) = conv_output_shape(cur.h, cur.w, kernel, kernel, p)
            .map_err(|e| crate::error::Error::Config(format!("{name}: {e}")))?;
        let out = Shape::new(cur.n, c_out, oh, ow);
        let macs = conv_macs(cur.c, c_out, kernel, kernel, p.groups, out);
        let params = conv_param_count(cur.c, c_out, kernel, kernel, p.groups, bias);
        Ok(self.push(name, vec![input], out, macs, params))
    }

    /// Convolution applying weights already counted by an earlier step
    /// (recurrent reuse): MACs accrue, parameters do not.
    pub fn conv_shared(
        &mut self,
        name: impl Into<String>,
        input: usize,
        c_out: usize,
        kernel: usize,
        p: ConvParams,
        bias: bool,
    ) -> Result<usize> {
        let id = self.conv(name, input, c_out, kernel, p, bias)?;
        self.plan.steps.last_mut().expect("just pushed").params = 0;
        Ok(id)
    }

    /// MAC-free step (norm, activation, resize, pool, elementwise, concat).
    pub fn passthrough(
        &mut self,
        name: impl Into<String>,
        inputs: Vec<usize>,
        output: Shape,
        params: u64,
    ) -> usize {
        self.push(name.into(), inputs, output, 0, params)
    }

    pub fn finish(self) -> Plan {
        self.plan
    }
}

/// A convolution layer in a plain sequential stack.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn pointwise(c_out: usize) -> ConvSpec {
        ConvSpec { c_out, kernel: 1, stride: 1, padding: 0, dilation: 1, groups: 1, bias: false }
    }
}

/// Cost report for a sequential convolution stack.
pub fn stack_report(input: Shape, convs: &[ConvSpec]) -> Result<CostReport> {
    let mut plan = Plan { input, steps: Vec::new() };
    let mut cur = input;
    for (i, c) in convs.iter().enumerate() {
        if cur.c % c.groups != 0 || c.c_out % c.groups != 0 {
            return shape_err(format!("stack layer {i}: groups {} do not divide channels", c.groups));
        }
        let p = ConvParams {
            stride: c.stride,
            padding: c.padding,
            dilation: c.dilation,
            groups: c.groups,
        };
        let (oh, ow) = conv_output_shape(cur.h, cur.w, c.kernel, c.kernel, p)
            .map_err(|e| crate::error::Error::Config(format!("stack layer {i}: {e}")))?;
        let out = Shape::new(cur.n, c.c_out, oh, ow);
        plan.steps.push(PlanStep {
            name: format!("conv{i}"),
            inputs: vec![i],
            output: out,
            macs: conv_macs(cur.c, c.c_out, c.kernel, c.kernel, c.groups, out),
            params: conv_param_count(cur.c, c.c_out, c.kernel, c.kernel, c.groups, c.bias),
        });
        cur = out;
    }
    Ok(plan_report(&plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_hand_count() {
        // 1x1 conv, c_in=2, c_out=4, 8x8 output: 4*2*1*1*64 = 512 MACs
        let rep = stack_report(
            Shape::new(1, 2, 8, 8),
            &[ConvSpec::pointwise(4)],
        )
        .unwrap();
        assert_eq!(rep.total_macs, 512);
        assert_eq!(rep.total_flops, 1024);
    }

    #[test]
    fn three_by_three_hand_count() {
        // 3x3 conv, c_in=2, c_out=4, groups 1, 8x8 output: 4*2*9*64 = 4608
        let spec = ConvSpec {
            c_out: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
            dilation: 1,
            groups: 1,
            bias: false,
        };
        let rep = stack_report(Shape::new(1, 2, 8, 8), &[spec]).unwrap();
        assert_eq!(rep.total_macs, 4608);
    }

    #[test]
    fn grouped_scaling_law() {
        let base = ConvSpec {
            c_out: 8,
            kernel: 3,
            stride: 1,
            padding: 1,
            dilation: 1,
            groups: 1,
            bias: false,
        };
        let doubled = ConvSpec { groups: 2, ..base };
        let a = stack_report(Shape::new(1, 8, 6, 6), &[base]).unwrap();
        let b = stack_report(Shape::new(1, 8, 6, 6), &[doubled]).unwrap();
        assert_eq!(a.total_macs, 2 * b.total_macs);
    }

    #[test]
    fn additive_over_layers() {
        let l1 = ConvSpec::pointwise(4);
        let l2 = ConvSpec::pointwise(6);
        let a = stack_report(Shape::new(1, 2, 8, 8), &[l1]).unwrap();
        let b = stack_report(Shape::new(1, 4, 8, 8), &[l2]).unwrap();
        let both = stack_report(Shape::new(1, 2, 8, 8), &[l1, l2]).unwrap();
        assert_eq!(both.total_macs, a.total_macs + b.total_macs);
    }

    #[test]
    fn sequential_peak_is_adjacent_pair() {
        // 1x3x8x8 -> conv(4) -> conv(6): peak is input+first output
        // (192 + 256) until conv2, then 256 + 384.
        let rep = stack_report(
            Shape::new(1, 3, 8, 8),
            &[ConvSpec::pointwise(4), ConvSpec::pointwise(6)],
        )
        .unwrap();
        assert_eq!(rep.peak_activation, (4 * 64 + 6 * 64) as u128);
    }
}
