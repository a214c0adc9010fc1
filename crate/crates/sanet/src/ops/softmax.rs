//! Per-pixel softmax over the channel axis, computed with max subtraction.

use crate::error::{shape_err, Result};
use crate::exec;
use crate::tensor::{Elem, Tensor};

pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.c == 0 {
        return shape_err("softmax_channels: need at least one channel");
    }
    let plane = xs.plane();
    let sample = xs.c * plane;
    let xd = x.data();
    let mut out = vec![0.0; xs.numel()];
    exec::for_each_chunk(&mut out, sample, |n, seg| {
        let src = &xd[n * sample..][..sample];
        for px in 0..plane {
            let mut max = Elem::NEG_INFINITY;
            for c in 0..xs.c {
                max = max.max(src[c * plane + px]);
            }
            let mut sum: Elem = 0.0;
            for c in 0..xs.c {
                let e = (src[c * plane + px] - max).exp();
                seg[c * plane + px] = e;
                sum += e;
            }
            for c in 0..xs.c {
                seg[c * plane + px] /= sum;
            }
        }
    });
    Tensor::from_vec(xs, out)
}

/// `dx = p * (g - sum_c(g * p))` per pixel, with `p` the forward output.
pub fn softmax_channels_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let xs = probs.shape();
    let plane = xs.plane();
    let sample = xs.c * plane;
    let pd = probs.data();
    let gd = grad_out.data();
    let mut dx = vec![0.0; xs.numel()];
    exec::for_each_chunk(&mut dx, sample, |n, seg| {
        let p = &pd[n * sample..][..sample];
        let g = &gd[n * sample..][..sample];
        for px in 0..plane {
            let mut dot: Elem = 0.0;
            for c in 0..xs.c {
                dot += g[c * plane + px] * p[c * plane + px];
            }
            for c in 0..xs.c {
                let i = c * plane + px;
                seg[i] = p[i] * (g[i] - dot);
            }
        }
    });
    Tensor::from_vec(xs, dx)
}
