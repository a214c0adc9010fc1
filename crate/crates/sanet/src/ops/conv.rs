//! Dilated, grouped 2-D convolution (cross-correlation, zero padding).
//!
//! Forward parallelizes over (batch, out-channel) planes, input-gradient over
//! (batch, in-channel) planes and the kernel gradient over out-channels; each
//! plane is owned by one task, so results do not depend on scheduling.

use crate::error::{shape_err, Result};
use crate::exec;
use crate::tensor::{Elem, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn unit() -> ConvParams {
        ConvParams { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }

    pub fn with_padding(padding: usize) -> ConvParams {
        ConvParams { padding, ..ConvParams::unit() }
    }
}

/// Output extents under `out = floor((in + 2p - d(k-1) - 1)/s) + 1`.
pub fn conv_output_shape(
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    p: ConvParams,
) -> Result<(usize, usize)> {
    let ext = |i: usize, k: usize| -> Result<usize> {
        let num = i as isize + 2 * p.padding as isize
            - (p.dilation * (k - 1)) as isize
            - 1;
        if num < 0 {
            return shape_err(format!(
                "conv output extent below 1 (in={i}, k={k}, pad={}, dil={})",
                p.padding, p.dilation
            ));
        }
        Ok(num as usize / p.stride + 1)
    };
    Ok((ext(in_h, kh)?, ext(in_w, kw)?))
}

pub(crate) fn validate_conv(
    x: Shape,
    kernel: Shape,
    bias: Option<Shape>,
    p: ConvParams,
) -> Result<()> {
    if p.stride < 1 || p.dilation < 1 || p.groups < 1 {
        return shape_err("conv: stride, dilation and groups must be >= 1");
    }
    if kernel.h == 0 || kernel.w == 0 {
        return shape_err("conv: zero-sized kernel");
    }
    if x.c % p.groups != 0 || kernel.n % p.groups != 0 {
        return shape_err(format!(
            "conv: channels not divisible by groups ({} in, {} out, {} groups)",
            x.c, kernel.n, p.groups
        ));
    }
    if kernel.c != x.c / p.groups {
        return shape_err(format!(
            "conv: kernel expects {} input channels per group, input has {}",
            kernel.c,
            x.c / p.groups
        ));
    }
    if let Some(b) = bias {
        if b != Shape::new(1, kernel.n, 1, 1) {
            return shape_err(format!("conv: bias shape {b} != 1x{}x1x1", kernel.n));
        }
    }
    Ok(())
}

/// Valid output-coordinate range for one kernel offset: all `o` with
/// `0 <= o*stride + koff - pad < in_ext`.
#[inline]
fn coord_bounds(in_ext: usize, out_ext: usize, stride: usize, pad: usize, koff: usize) -> (usize, usize) {
    let start = if koff >= pad { 0 } else { (pad - koff).div_ceil(stride) };
    if in_ext + pad <= koff {
        return (0, 0);
    }
    let end = ((in_ext - 1 + pad - koff) / stride + 1).min(out_ext);
    (start.min(end), end)
}

pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    p: ConvParams,
) -> Result<Tensor> {
    validate_conv(x.shape(), kernel.shape(), bias.map(|b| b.shape()), p)?;
    let xs = x.shape();
    let ks = kernel.shape();
    let (oh, ow) = conv_output_shape(xs.h, xs.w, ks.h, ks.w, p)?;
    let c_out = ks.n;
    let c_in_g = ks.c;
    let c_out_g = c_out / p.groups;
    let out_shape = Shape::new(xs.n, c_out, oh, ow);
    let mut out = vec![0.0; out_shape.numel()];

    let in_plane = xs.plane();
    let out_plane = oh * ow;
    let xd = x.data();
    let wd = kernel.data();
    let bd = bias.map(|b| b.data());

    exec::for_each_chunk(&mut out, out_plane, |idx, plane| {
        let n = idx / c_out;
        let oc = idx % c_out;
        let g = oc / c_out_g;
        if let Some(b) = bd {
            plane.fill(b[oc]);
        }
        for ic_l in 0..c_in_g {
            let ic = g * c_in_g + ic_l;
            let x_plane = &xd[(n * xs.c + ic) * in_plane..][..in_plane];
            for ky in 0..ks.h {
                let (oy0, oy1) = coord_bounds(xs.h, oh, p.stride, p.padding, ky * p.dilation);
                for kx in 0..ks.w {
                    let wgt = wd[((oc * c_in_g + ic_l) * ks.h + ky) * ks.w + kx];
                    let (ox0, ox1) = coord_bounds(xs.w, ow, p.stride, p.padding, kx * p.dilation);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * p.stride + ky * p.dilation - p.padding;
                        let o_row = &mut plane[oy * ow..][..ow];
                        let x_row = &x_plane[iy * xs.w..][..xs.w];
                        if p.stride == 1 {
                            let ix0 = ox0 + kx * p.dilation - p.padding;
                            for (o, xv) in o_row[ox0..ox1]
                                .iter_mut()
                                .zip(&x_row[ix0..ix0 + (ox1 - ox0)])
                            {
                                *o += wgt * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * p.stride + kx * p.dilation - p.padding;
                                o_row[ox] += wgt * x_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Gradients of conv2d: input, kernel, and (when requested) bias.
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    has_bias: bool,
    p: ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let xs = x.shape();
    let ks = kernel.shape();
    let (oh, ow) = conv_output_shape(xs.h, xs.w, ks.h, ks.w, p)?;
    let c_out = ks.n;
    if grad_out.shape() != Shape::new(xs.n, c_out, oh, ow) {
        return shape_err(format!(
            "conv backward: upstream gradient {} does not match output {}x{}x{}x{}",
            grad_out.shape(),
            xs.n,
            c_out,
            oh,
            ow
        ));
    }
    let c_in_g = ks.c;
    let c_out_g = c_out / p.groups;
    let in_plane = xs.plane();
    let out_plane = oh * ow;
    let xd = x.data();
    let wd = kernel.data();
    let gd = grad_out.data();

    // d/dx: scatter back through the kernel, one (n, in-channel) plane per task.
    let mut dx = vec![0.0; xs.numel()];
    exec::for_each_chunk(&mut dx, in_plane, |idx, plane| {
        let n = idx / xs.c;
        let ic = idx % xs.c;
        let g = ic / c_in_g;
        let ic_l = ic % c_in_g;
        for oc_l in 0..c_out_g {
            let oc = g * c_out_g + oc_l;
            let g_plane = &gd[(n * c_out + oc) * out_plane..][..out_plane];
            for ky in 0..ks.h {
                let (oy0, oy1) = coord_bounds(xs.h, oh, p.stride, p.padding, ky * p.dilation);
                for kx in 0..ks.w {
                    let wgt = wd[((oc * c_in_g + ic_l) * ks.h + ky) * ks.w + kx];
                    let (ox0, ox1) = coord_bounds(xs.w, ow, p.stride, p.padding, kx * p.dilation);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * p.stride + ky * p.dilation - p.padding;
                        let g_row = &g_plane[oy * ow..][..ow];
                        let x_row = &mut plane[iy * xs.w..][..xs.w];
                        if p.stride == 1 {
                            let ix0 = ox0 + kx * p.dilation - p.padding;
                            for (xg, gv) in x_row[ix0..ix0 + (ox1 - ox0)]
                                .iter_mut()
                                .zip(&g_row[ox0..ox1])
                            {
                                *xg += wgt * gv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * p.stride + kx * p.dilation - p.padding;
                                x_row[ix] += wgt * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });

    // d/dw: one out-channel slice per task, batch accumulated in index order.
    let w_slice = c_in_g * ks.h * ks.w;
    let mut dw = vec![0.0; ks.numel()];
    exec::for_each_chunk(&mut dw, w_slice, |oc, slice| {
        let g = oc / c_out_g;
        for n in 0..xs.n {
            let g_plane = &gd[(n * c_out + oc) * out_plane..][..out_plane];
            for ic_l in 0..c_in_g {
                let ic = g * c_in_g + ic_l;
                let x_plane = &xd[(n * xs.c + ic) * in_plane..][..in_plane];
                for ky in 0..ks.h {
                    let (oy0, oy1) =
                        coord_bounds(xs.h, oh, p.stride, p.padding, ky * p.dilation);
                    for kx in 0..ks.w {
                        let (ox0, ox1) =
                            coord_bounds(xs.w, ow, p.stride, p.padding, kx * p.dilation);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut acc: Elem = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * p.stride + ky * p.dilation - p.padding;
                            let g_row = &g_plane[oy * ow..][..ow];
                            let x_row = &x_plane[iy * xs.w..][..xs.w];
                            if p.stride == 1 {
                                let ix0 = ox0 + kx * p.dilation - p.padding;
                                for (xv, gv) in
                                    x_row[ix0..ix0 + (ox1 - ox0)].iter().zip(&g_row[ox0..ox1])
                                {
                                    acc += xv * gv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * p.stride + kx * p.dilation - p.padding;
                                    acc += x_row[ix] * g_row[ox];
                                }
                            }
                        }
                        slice[(ic_l * ks.h + ky) * ks.w + kx] += acc;
                    }
                }
            }
        }
    });

    let db = if has_bias {
        let vals = exec::map_indexed(c_out, |oc| {
            let mut acc: Elem = 0.0;
            for n in 0..xs.n {
                let g_plane = &gd[(n * c_out + oc) * out_plane..][..out_plane];
                acc += g_plane.iter().sum::<Elem>();
            }
            acc
        });
        Some(Tensor::from_vec(Shape::new(1, c_out, 1, 1), vals)?)
    } else {
        None
    };

    Ok((
        Tensor::from_vec(xs, dx)?,
        Tensor::from_vec(ks, dw)?,
        db,
    ))
}
