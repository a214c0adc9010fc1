//! Definitional cross-correlation: seven nested loops, no layout tricks.
//! The production kernel is checked against this for exact agreement.

use crate::error::Result;
use crate::ops::conv::{conv_output_shape, validate_conv, ConvParams};
use crate::tensor::{Shape, Tensor};

pub fn conv_oracle(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    params: ConvParams,
) -> Result<Tensor> {
    validate_conv(x.shape(), kernel.shape(), bias.map(|b| b.shape()), params)?;
    let xs = x.shape();
    let ks = kernel.shape();
    let (oh, ow) = conv_output_shape(xs.h, xs.w, ks.h, ks.w, params)?;
    let c_out = ks.n;
    let c_in_g = ks.c;
    let c_out_g = c_out / params.groups;
    let out_shape = Shape::new(xs.n, c_out, oh, ow);
    let mut out = vec![0.0; out_shape.numel()];

    for n in 0..xs.n {
        for oc in 0..c_out {
            let g = oc / c_out_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = match bias {
                        Some(b) => b.data()[oc],
                        None => 0.0,
                    };
                    for ic_l in 0..c_in_g {
                        let ic = g * c_in_g + ic_l;
                        for ky in 0..ks.h {
                            for kx in 0..ks.w {
                                let iy = (oy * params.stride + ky * params.dilation) as isize
                                    - params.padding as isize;
                                let ix = (ox * params.stride + kx * params.dilation) as isize
                                    - params.padding as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= xs.h as isize
                                    || ix >= xs.w as isize
                                {
                                    continue; // zero padding
                                }
                                acc += x.at(n, ic, iy as usize, ix as usize)
                                    * kernel.at(oc, ic_l, ky, kx);
                            }
                        }
                    }
                    out[out_shape.at(n, oc, oy, ox)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}
