//! Parameterized building blocks and the parameter-visiting contract used
//! by the optimizer and the checkpoint format.

use crate::error::Result;
use crate::ops::conv::ConvParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Elem, SeededRng, Shape, Tensor};

/// Anything holding named, trainable tensors. Visit order is fixed by the
/// module structure, which keeps optimizer updates and checkpoints
/// deterministic.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// Named parameters, cloned (checkpointing).
pub fn collect_params(m: &dyn ParamSet) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

/// Copy each parameter's gradient out of the tape into its grad slot.
pub fn pull_grads(m: &mut dyn ParamSet, tape: &Tape) {
    m.visit_mut(&mut |name, t| {
        if let Some(g) = tape.param_grad(name) {
            t.set_grad(g.to_vec());
        } else {
            t.clear_grad();
        }
    });
}

/// Group-norm group count: 8 channels per group when divisible, otherwise
/// one group over all channels.
pub fn gn_groups(channels: usize) -> usize {
    if channels % 8 == 0 {
        channels / 8
    } else {
        1
    }
}

pub struct ConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub params: ConvParams,
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        params: ConvParams,
        with_bias: bool,
        rng: &mut SeededRng,
    ) -> Result<ConvLayer> {
        let fan_in = (c_in / params.groups) * kernel * kernel;
        let weight = Tensor::he_init(
            Shape::new(c_out, c_in / params.groups, kernel, kernel),
            fan_in,
            rng,
        )?;
        let bias = if with_bias {
            Some(Tensor::zeros(Shape::new(1, c_out, 1, 1)))
        } else {
            None
        };
        Ok(ConvLayer { name: name.into(), weight, bias, params })
    }

    /// 1x1 bias-free channel conversion.
    pub fn pointwise(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        rng: &mut SeededRng,
    ) -> Result<ConvLayer> {
        ConvLayer::new(name, c_in, c_out, 1, ConvParams::unit(), false, rng)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.weight", self.name), &self.weight);
        let b = self
            .bias
            .as_ref()
            .map(|b| tape.param(&format!("{}.bias", self.name), b));
        tape.conv2d(x, w, b, self.params)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }
}

impl ParamSet for ConvLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

pub struct GroupNormLayer {
    pub name: String,
    pub scale: Tensor,
    pub shift: Tensor,
    pub groups: usize,
    pub eps: Elem,
}

impl GroupNormLayer {
    pub fn new(name: impl Into<String>, channels: usize) -> GroupNormLayer {
        GroupNormLayer {
            name: name.into(),
            scale: Tensor::alloc(Shape::new(1, channels, 1, 1), 1.0)
                .expect("small affine parameter"),
            shift: Tensor::zeros(Shape::new(1, channels, 1, 1)),
            groups: gn_groups(channels),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let scale = tape.param(&format!("{}.scale", self.name), &self.scale);
        let shift = tape.param(&format!("{}.shift", self.name), &self.shift);
        tape.group_norm(x, scale, shift, self.groups, self.eps)
    }
}

impl ParamSet for GroupNormLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.scale", self.name), &self.scale);
        f(&format!("{}.shift", self.name), &self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.scale", self.name), &mut self.scale);
        f(&format!("{}.shift", self.name), &mut self.shift);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_layer_binds_once() {
        let mut rng = SeededRng::new(3);
        let layer =
            ConvLayer::new("l", 2, 2, 3, ConvParams::with_padding(1), true, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::he_init(Shape::new(1, 2, 4, 4), 2, &mut rng).unwrap());
        let a = layer.forward(&mut tape, x).unwrap();
        let b = layer.forward(&mut tape, a).unwrap();
        assert_eq!(tape.shape(b).c, 2);
        // weight node registered once even though the layer ran twice
        assert!(tape.param_var("l.weight").is_some());
        let names = {
            let mut v = Vec::new();
            layer.visit(&mut |n, _| v.push(n.to_string()));
            v
        };
        assert_eq!(names, vec!["l.weight", "l.bias"]);
    }

    #[test]
    fn gn_group_policy() {
        assert_eq!(gn_groups(16), 2);
        assert_eq!(gn_groups(8), 1);
        assert_eq!(gn_groups(6), 1);
        assert_eq!(gn_groups(64), 8);
    }
}
