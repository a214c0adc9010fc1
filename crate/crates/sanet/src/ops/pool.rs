//! Adaptive average pooling. Cell (i, j) averages the input window
//! `[floor(i*h/bh), ceil((i+1)*h/bh)) x [floor(j*w/bw), ceil((j+1)*w/bw))`.

use crate::error::{arg_err, Result};
use crate::exec;
use crate::tensor::{Elem, Shape, Tensor};

#[inline]
fn window(i: usize, in_ext: usize, bins: usize) -> (usize, usize) {
    (i * in_ext / bins, ((i + 1) * in_ext).div_ceil(bins))
}

fn validate(xs: Shape, bin_h: usize, bin_w: usize) -> Result<()> {
    if bin_h == 0 || bin_w == 0 {
        return arg_err("adaptive_avg_pool: bin extents must be >= 1");
    }
    if bin_h > xs.h || bin_w > xs.w {
        return arg_err(format!(
            "adaptive_avg_pool: bins {bin_h}x{bin_w} exceed input {}x{}",
            xs.h, xs.w
        ));
    }
    Ok(())
}

pub fn adaptive_avg_pool(x: &Tensor, bin_h: usize, bin_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    validate(xs, bin_h, bin_w)?;
    let out_shape = Shape::new(xs.n, xs.c, bin_h, bin_w);
    let in_plane = xs.plane();
    let xd = x.data();
    let mut out = vec![0.0; out_shape.numel()];
    exec::for_each_chunk(&mut out, bin_h * bin_w, |idx, plane| {
        let src = &xd[idx * in_plane..][..in_plane];
        for i in 0..bin_h {
            let (y0, y1) = window(i, xs.h, bin_h);
            for j in 0..bin_w {
                let (x0, x1) = window(j, xs.w, bin_w);
                let mut acc: Elem = 0.0;
                for y in y0..y1 {
                    acc += src[y * xs.w + x0..y * xs.w + x1].iter().sum::<Elem>();
                }
                plane[i * bin_w + j] = acc / ((y1 - y0) * (x1 - x0)) as Elem;
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

pub fn adaptive_avg_pool_backward(in_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let gs = grad_out.shape();
    let gd = grad_out.data();
    let out_plane = gs.plane();
    let mut dx = vec![0.0; in_shape.numel()];
    exec::for_each_chunk(&mut dx, in_shape.plane(), |idx, plane| {
        let g = &gd[idx * out_plane..][..out_plane];
        for i in 0..gs.h {
            let (y0, y1) = window(i, in_shape.h, gs.h);
            for j in 0..gs.w {
                let (x0, x1) = window(j, in_shape.w, gs.w);
                let share = g[i * gs.w + j] / ((y1 - y0) * (x1 - x0)) as Elem;
                for y in y0..y1 {
                    for v in &mut plane[y * in_shape.w + x0..y * in_shape.w + x1] {
                        *v += share;
                    }
                }
            }
        }
    });
    Tensor::from_vec(in_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    #[test]
    fn bins_equal_extents_is_identity() {
        let mut rng = SeededRng::new(2);
        let x = Tensor::he_init(Shape::new(1, 2, 3, 4), 2, &mut rng).unwrap();
        let y = adaptive_avg_pool(&x, 3, 4).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn single_bin_is_global_mean() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = adaptive_avg_pool(&x, 1, 1).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn quadrant_means() {
        let mut x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        for y in 0..4 {
            for xx in 0..4 {
                let v = match (y < 2, xx < 2) {
                    (true, true) => a,
                    (true, false) => b,
                    (false, true) => c,
                    (false, false) => d,
                };
                let s = x.shape();
                x.data_mut()[s.at(0, 0, y, xx)] = v;
            }
        }
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[a, b, c, d]);
    }

    #[test]
    fn oversized_bins_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(adaptive_avg_pool(&x, 3, 1).is_err());
    }
}
