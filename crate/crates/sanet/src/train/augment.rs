//! Training-time augmentation: horizontal flip, uniform random scaling with
//! crop/pad back to the original extents, and contrast jitter about the
//! per-image mean. Images resample bilinearly, labels with nearest
//! neighbour, introduced padding is the ignore value.

use crate::error::{shape_err, Result};
use crate::ops::resize::bilinear_resize;
use crate::tensor::{Elem, SeededRng, Shape, Tensor, IGNORE_INDEX};
use crate::train::Labels;

#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    pub flip_prob: Elem,
    pub scale_prob: Elem,
    pub scale_range: (Elem, Elem),
    pub contrast_prob: Elem,
    pub contrast_range: (Elem, Elem),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            scale_prob: 1.0,
            scale_range: (0.75, 1.25),
            contrast_prob: 1.0,
            contrast_range: (0.75, 1.25),
        }
    }
}

pub fn hflip_image(image: &Tensor) -> Tensor {
    let s = image.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = image.at(n, c, y, s.w - 1 - x);
                    out.data_mut()[s.at(n, c, y, x)] = v;
                }
            }
        }
    }
    out
}

pub fn hflip_labels(labels: &Labels) -> Labels {
    let mut data = Vec::with_capacity(labels.data.len());
    for n in 0..labels.n {
        for y in 0..labels.h {
            for x in 0..labels.w {
                data.push(labels.at(n, y, labels.w - 1 - x));
            }
        }
    }
    Labels { n: labels.n, h: labels.h, w: labels.w, data }
}

/// Nearest-neighbour label resize: `src = floor((d + 0.5) * in/out)`.
pub fn nearest_resize_labels(labels: &Labels, out_h: usize, out_w: usize) -> Labels {
    let mut data = Vec::with_capacity(labels.n * out_h * out_w);
    for n in 0..labels.n {
        for oy in 0..out_h {
            let sy = (((oy as Elem + 0.5) * labels.h as Elem / out_h as Elem) as usize)
                .min(labels.h - 1);
            for ox in 0..out_w {
                let sx = (((ox as Elem + 0.5) * labels.w as Elem / out_w as Elem) as usize)
                    .min(labels.w - 1);
                data.push(labels.at(n, sy, sx));
            }
        }
    }
    Labels { n: labels.n, h: out_h, w: out_w, data }
}

fn crop_or_pad(
    image: &Tensor,
    labels: &Labels,
    out_h: usize,
    out_w: usize,
    rng: &mut SeededRng,
) -> (Tensor, Labels) {
    let s = image.shape();
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut img = Tensor::zeros(out_shape);
    let mut lab = Labels::filled(labels.n, out_h, out_w, IGNORE_INDEX);

    // source/target offsets per axis
    let (sy, ty) = if s.h >= out_h {
        (rng.below(s.h - out_h + 1), 0)
    } else {
        (0, rng.below(out_h - s.h + 1))
    };
    let (sx, tx) = if s.w >= out_w {
        (rng.below(s.w - out_w + 1), 0)
    } else {
        (0, rng.below(out_w - s.w + 1))
    };
    let copy_h = s.h.min(out_h);
    let copy_w = s.w.min(out_w);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..copy_h {
                for x in 0..copy_w {
                    let v = image.at(n, c, sy + y, sx + x);
                    img.data_mut()[out_shape.at(n, c, ty + y, tx + x)] = v;
                }
            }
        }
        for y in 0..copy_h {
            for x in 0..copy_w {
                lab.data[(n * out_h + ty + y) * out_w + tx + x] =
                    labels.at(n, sy + y, sx + x);
            }
        }
    }
    (img, lab)
}

pub fn contrast_jitter(image: &Tensor, gamma: Elem) -> Tensor {
    let mean = image.data().iter().sum::<Elem>() / image.data().len().max(1) as Elem;
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = mean + gamma * (*v - mean);
    }
    out
}

/// Apply the configured augmentations to one sample.
pub fn augment(
    image: &Tensor,
    labels: &Labels,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, Labels)> {
    let s = image.shape();
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return shape_err("augment: image/label extent mismatch");
    }
    let mut img = image.clone();
    let mut lab = labels.clone();

    if rng.chance(cfg.flip_prob) {
        img = hflip_image(&img);
        lab = hflip_labels(&lab);
    }
    if rng.chance(cfg.scale_prob) {
        let factor = rng.range(cfg.scale_range.0, cfg.scale_range.1);
        let nh = ((s.h as Elem * factor).round() as usize).max(1);
        let nw = ((s.w as Elem * factor).round() as usize).max(1);
        if (nh, nw) != (s.h, s.w) {
            img = bilinear_resize(&img, nh, nw)?;
            lab = nearest_resize_labels(&lab, nh, nw);
            let (i2, l2) = crop_or_pad(&img, &lab, s.h, s.w, rng);
            img = i2;
            lab = l2;
        }
    }
    if rng.chance(cfg.contrast_prob) {
        let gamma = rng.range(cfg.contrast_range.0, cfg.contrast_range.1);
        img = contrast_jitter(&img, gamma);
    }
    Ok((img, lab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u64, h: usize, w: usize) -> (Tensor, Labels) {
        let mut rng = SeededRng::new(seed);
        let img = Tensor::he_init(Shape::new(1, 3, h, w), 2, &mut rng).unwrap();
        let data: Vec<u8> = (0..h * w).map(|_| rng.below(4) as u8).collect();
        (img, Labels::new(1, h, w, data).unwrap())
    }

    #[test]
    fn flip_is_an_involution() {
        let (img, lab) = sample(1, 6, 5);
        assert_eq!(hflip_image(&hflip_image(&img)).data(), img.data());
        assert_eq!(hflip_labels(&hflip_labels(&lab)).data, lab.data);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let (img, lab) = sample(2, 8, 8);
        let cfg = AugmentConfig {
            flip_prob: 0.0,
            scale_prob: 0.0,
            contrast_prob: 0.0,
            ..Default::default()
        };
        let mut rng = SeededRng::new(3);
        let (i2, l2) = augment(&img, &lab, &cfg, &mut rng).unwrap();
        assert_eq!(i2.data(), img.data());
        assert_eq!(l2.data, lab.data);
    }

    #[test]
    fn unit_gamma_contrast_is_identity() {
        let (img, _) = sample(4, 4, 4);
        let out = contrast_jitter(&img, 1.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_never_gain_new_values() {
        let cfg = AugmentConfig::default();
        for seed in 0..30 {
            let (img, lab) = sample(seed, 16, 16);
            let mut rng = SeededRng::new(seed + 100);
            let (_, l2) = augment(&img, &lab, &cfg, &mut rng).unwrap();
            let mut allowed: Vec<u8> = lab.data.clone();
            allowed.push(IGNORE_INDEX);
            for v in &l2.data {
                assert!(allowed.contains(v), "value {v} appeared from nowhere");
            }
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let (img, lab) = sample(9, 16, 16);
        let cfg = AugmentConfig::default();
        let run = |seed| {
            let mut rng = SeededRng::new(seed);
            augment(&img, &lab, &cfg, &mut rng).unwrap()
        };
        let (a_img, a_lab) = run(5);
        let (b_img, b_lab) = run(5);
        assert_eq!(a_img.data(), b_img.data());
        assert_eq!(a_lab.data, b_lab.data);
    }
}
