//! Bilinear resize with half-pixel centers: source coordinate
//! `s = (d + 0.5) * in/out - 0.5`, clamped to `[0, in-1]`.

use crate::error::{arg_err, Result};
use crate::exec;
use crate::tensor::{Elem, Shape, Tensor};

/// Per-axis sample: two source indices and the blend weight of the second.
fn axis_taps(in_ext: usize, out_ext: usize) -> Vec<(usize, usize, Elem)> {
    let scale = in_ext as Elem / out_ext as Elem;
    (0..out_ext)
        .map(|d| {
            let s = ((d as Elem + 0.5) * scale - 0.5).clamp(0.0, (in_ext - 1) as Elem);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_ext - 1);
            (i0, i1, s - i0 as Elem)
        })
        .collect()
}

pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return arg_err("bilinear_resize: target extents must be >= 1");
    }
    let xs = x.shape();
    if xs.h == 0 || xs.w == 0 {
        return arg_err("bilinear_resize: empty source");
    }
    let out_shape = Shape::new(xs.n, xs.c, out_h, out_w);
    if out_h == xs.h && out_w == xs.w {
        return Ok(x.clone()); // unit scale is exact identity
    }
    let ys = axis_taps(xs.h, out_h);
    let xts = axis_taps(xs.w, out_w);
    let in_plane = xs.plane();
    let xd = x.data();
    let mut out = vec![0.0; out_shape.numel()];
    exec::for_each_chunk(&mut out, out_h * out_w, |idx, plane| {
        let src = &xd[idx * in_plane..][..in_plane];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let r0 = &src[y0 * xs.w..][..xs.w];
            let r1 = &src[y1 * xs.w..][..xs.w];
            let orow = &mut plane[oy * out_w..][..out_w];
            for (o, &(x0, x1, wx)) in orow.iter_mut().zip(xts.iter()) {
                let top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
                let bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
                *o = top * (1.0 - wy) + bot * wy;
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Scatter the four blend weights of every output sample back to the source.
pub fn bilinear_resize_backward(
    in_shape: Shape,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let gs = grad_out.shape();
    if gs.h == in_shape.h && gs.w == in_shape.w {
        return Ok(grad_out.clone());
    }
    let ys = axis_taps(in_shape.h, gs.h);
    let xts = axis_taps(in_shape.w, gs.w);
    let out_plane = gs.plane();
    let gd = grad_out.data();
    let mut dx = vec![0.0; in_shape.numel()];
    exec::for_each_chunk(&mut dx, in_shape.plane(), |idx, plane| {
        let g = &gd[idx * out_plane..][..out_plane];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let grow = &g[oy * gs.w..][..gs.w];
            for (&gv, &(x0, x1, wx)) in grow.iter().zip(xts.iter()) {
                plane[y0 * in_shape.w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                plane[y0 * in_shape.w + x1] += gv * (1.0 - wy) * wx;
                plane[y1 * in_shape.w + x0] += gv * wy * (1.0 - wx);
                plane[y1 * in_shape.w + x1] += gv * wy * wx;
            }
        }
    });
    Tensor::from_vec(in_shape, dx)
}
