//! Channel-axis concatenation and its gradient slicing.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = match xs.first() {
        Some(t) => t.shape(),
        None => return arg_err("concat_channels: empty input list"),
    };
    let mut c_total = 0;
    for t in xs {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return shape_err(format!("concat_channels: {s} does not match {first}"));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let plane = first.plane();
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in xs {
            let c = t.shape().c;
            out.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Split the upstream gradient back into per-input pieces.
pub fn concat_channels_backward(shapes: &[Shape], grad_out: &Tensor) -> Result<Vec<Tensor>> {
    let gs = grad_out.shape();
    let plane = gs.plane();
    let gd = grad_out.data();
    let mut grads: Vec<Vec<_>> =
        shapes.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    for n in 0..gs.n {
        let mut offset = n * gs.c * plane;
        for (i, s) in shapes.iter().enumerate() {
            let len = s.c * plane;
            grads[i].extend_from_slice(&gd[offset..offset + len]);
            offset += len;
        }
    }
    shapes
        .iter()
        .zip(grads)
        .map(|(s, g)| Tensor::from_vec(*s, g))
        .collect()
}
