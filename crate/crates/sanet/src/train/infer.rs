//! Multi-scale inference: run the model at several input scales, average
//! the per-pixel class distributions at full resolution, renormalize.

use crate::error::{arg_err, Result};
use crate::ops::resize::bilinear_resize;
use crate::ops::softmax::softmax_channels;
use crate::tensor::{Elem, Tensor};

/// Snap a scaled extent to the nearest multiple of 8 (minimum 8), keeping
/// the stem's divisibility precondition at every scale.
pub fn scaled_extent(ext: usize, scale: Elem) -> usize {
    let raw = ext as Elem * scale;
    (((raw / 8.0).round() as usize).max(1)) * 8
}

pub fn multi_scale_infer(
    forward: impl Fn(&Tensor) -> Result<Tensor>,
    image: &Tensor,
    scales: &[Elem],
) -> Result<Tensor> {
    if scales.is_empty() {
        return arg_err("multi_scale_infer: scale list must be nonempty");
    }
    if scales.iter().any(|&s| s <= 0.0) {
        return arg_err("multi_scale_infer: scales must be positive");
    }
    let s = image.shape();
    let mut acc: Option<Tensor> = None;
    for &scale in scales {
        let (h, w) = (scaled_extent(s.h, scale), scaled_extent(s.w, scale));
        let scaled = bilinear_resize(image, h, w)?;
        let logits = forward(&scaled)?;
        let probs = softmax_channels(&logits)?;
        let full = bilinear_resize(&probs, s.h, s.w)?;
        acc = Some(match acc {
            None => full,
            Some(mut a) => {
                for (av, fv) in a.data_mut().iter_mut().zip(full.data()) {
                    *av += fv;
                }
                a
            }
        });
    }
    let mut out = acc.expect("at least one scale");
    let inv = 1.0 / scales.len() as Elem;
    for v in out.data_mut() {
        *v *= inv;
    }
    // renormalize per pixel
    let os = out.shape();
    let plane = os.plane();
    for n in 0..os.n {
        for px in 0..plane {
            let mut sum: Elem = 0.0;
            for c in 0..os.c {
                sum += out.data()[(n * os.c + c) * plane + px];
            }
            if sum > 0.0 {
                for c in 0..os.c {
                    out.data_mut()[(n * os.c + c) * plane + px] /= sum;
                }
            }
        }
    }
    Ok(out)
}
