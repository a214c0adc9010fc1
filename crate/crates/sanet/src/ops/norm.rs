//! Group normalization: per-sample, per-group standardization followed by a
//! per-channel affine transform.

use crate::error::{arg_err, shape_err, Result};
use crate::exec;
use crate::tensor::{Elem, Shape, Tensor};

/// Mean and inverse standard deviation saved per (sample, group) at forward
/// time for the backward pass.
pub type NormStats = Vec<(Elem, Elem)>;

fn validate(xs: Shape, num_groups: usize, scale: Shape, shift: Shape, eps: Elem) -> Result<()> {
    if eps <= 0.0 {
        return arg_err("group_norm: eps must be > 0");
    }
    if num_groups == 0 || xs.c % num_groups != 0 {
        return shape_err(format!(
            "group_norm: {} channels not divisible by {num_groups} groups",
            xs.c
        ));
    }
    let want = Shape::new(1, xs.c, 1, 1);
    if scale != want || shift != want {
        return shape_err(format!("group_norm: affine parameters must be {want}"));
    }
    Ok(())
}

pub fn group_norm(
    x: &Tensor,
    num_groups: usize,
    scale: &Tensor,
    shift: &Tensor,
    eps: Elem,
) -> Result<(Tensor, NormStats)> {
    let xs = x.shape();
    validate(xs, num_groups, scale.shape(), shift.shape(), eps)?;
    let cg = xs.c / num_groups;
    let plane = xs.plane();
    let group_len = cg * plane;
    let xd = x.data();

    let stats: NormStats = exec::map_indexed(xs.n * num_groups, |idx| {
        let seg = &xd[idx * group_len..][..group_len];
        if seg.is_empty() {
            return (0.0, 0.0);
        }
        let m = seg.len() as Elem;
        let mean = seg.iter().sum::<Elem>() / m;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<Elem>() / m;
        (mean, 1.0 / (var + eps).sqrt())
    });

    let sd = scale.data();
    let bd = shift.data();
    let mut out = vec![0.0; xs.numel()];
    exec::for_each_chunk(&mut out, group_len, |idx, seg| {
        let (mean, inv_std) = stats[idx];
        let g = idx % num_groups;
        let src = &xd[idx * group_len..][..group_len];
        for c_l in 0..cg {
            let c = g * cg + c_l;
            let (gamma, beta) = (sd[c], bd[c]);
            for (o, &v) in seg[c_l * plane..][..plane]
                .iter_mut()
                .zip(&src[c_l * plane..][..plane])
            {
                *o = gamma * (v - mean) * inv_std + beta;
            }
        }
    });
    Ok((Tensor::from_vec(xs, out)?, stats))
}

/// Gradients for input, scale and shift.
pub fn group_norm_backward(
    x: &Tensor,
    num_groups: usize,
    scale: &Tensor,
    stats: &NormStats,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let xs = x.shape();
    let cg = xs.c / num_groups;
    let plane = xs.plane();
    let group_len = cg * plane;
    let xd = x.data();
    let gd = grad_out.data();
    let sd = scale.data();

    let mut dx = vec![0.0; xs.numel()];
    exec::for_each_chunk(&mut dx, group_len, |idx, seg| {
        let (mean, inv_std) = stats[idx];
        let g = idx % num_groups;
        let src = &xd[idx * group_len..][..group_len];
        let gout = &gd[idx * group_len..][..group_len];
        let m = group_len as Elem;
        if group_len == 0 {
            return;
        }
        // u = upstream grad through the affine scale; means over the group
        let mut sum_u: Elem = 0.0;
        let mut sum_ux: Elem = 0.0;
        for c_l in 0..cg {
            let gamma = sd[g * cg + c_l];
            for i in 0..plane {
                let u = gout[c_l * plane + i] * gamma;
                let xhat = (src[c_l * plane + i] - mean) * inv_std;
                sum_u += u;
                sum_ux += u * xhat;
            }
        }
        let mean_u = sum_u / m;
        let mean_ux = sum_ux / m;
        for c_l in 0..cg {
            let gamma = sd[g * cg + c_l];
            for i in 0..plane {
                let u = gout[c_l * plane + i] * gamma;
                let xhat = (src[c_l * plane + i] - mean) * inv_std;
                seg[c_l * plane + i] = inv_std * (u - mean_u - xhat * mean_ux);
            }
        }
    });

    // per-channel affine gradients
    let affine = exec::map_indexed(xs.c, |c| {
        let g = c / cg;
        let mut dgamma: Elem = 0.0;
        let mut dbeta: Elem = 0.0;
        for n in 0..xs.n {
            let (mean, inv_std) = stats[n * num_groups + g];
            let base = (n * xs.c + c) * plane;
            for i in 0..plane {
                let go = gd[base + i];
                dgamma += go * (xd[base + i] - mean) * inv_std;
                dbeta += go;
            }
        }
        (dgamma, dbeta)
    });
    let param_shape = Shape::new(1, xs.c, 1, 1);
    let dgamma = Tensor::from_vec(param_shape, affine.iter().map(|a| a.0).collect())?;
    let dbeta = Tensor::from_vec(param_shape, affine.iter().map(|a| a.1).collect())?;
    Ok((Tensor::from_vec(xs, dx)?, dgamma, dbeta))
}
