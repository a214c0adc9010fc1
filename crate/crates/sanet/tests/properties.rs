//! Property tests for the numeric core: finiteness, linearity, gradient
//! accumulation, resize behavior on constants, metric equivariance, and
//! augmentation label safety.

use proptest::prelude::*;

use sanet::ops::conv::{conv2d, ConvParams};
use sanet::ops::{adaptive_avg_pool, bilinear_resize, softmax_channels};
use sanet::tape::Tape;
use sanet::tensor::{activation, elementwise, Activation, Elem, EwKind, Shape, Tensor};
use sanet::train::augment::{augment, AugmentConfig};
use sanet::train::metrics::metrics;
use sanet::train::poly_lr;
use sanet::train::Labels;
use sanet::tensor::{SeededRng, IGNORE_INDEX};

fn small_tensor(max_side: usize) -> impl Strategy<Value = Tensor> {
    (1usize..3, 1usize..4, 1usize..=max_side, 1usize..=max_side).prop_flat_map(
        |(n, c, h, w)| {
            let len = n * c * h * w;
            proptest::collection::vec(-1e4f64..1e4f64, len..=len).prop_map(move |data| {
                Tensor::from_vec(
                    Shape::new(n, c, h, w),
                    data.into_iter().map(|v| v as Elem).collect(),
                )
                .unwrap()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activations_stay_finite(x in small_tensor(6)) {
        for kind in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
            prop_assert!(activation(&x, kind).is_all_finite());
        }
    }

    #[test]
    fn elementwise_stays_finite(x in small_tensor(5)) {
        let y = elementwise(&x, &x, EwKind::Add).unwrap();
        prop_assert!(y.is_all_finite());
        // products of |v| <= 1e4 stay bounded by 1e8
        let p = elementwise(&x, &x, EwKind::Hadamard).unwrap();
        prop_assert!(p.is_all_finite());
    }

    #[test]
    fn softmax_outputs_are_distributions(x in small_tensor(4)) {
        let p = softmax_channels(&x).unwrap();
        prop_assert!(p.is_all_finite());
        let s = p.shape();
        let plane = s.plane();
        for n in 0..s.n {
            for px in 0..plane {
                let mut sum: Elem = 0.0;
                for c in 0..s.c {
                    let v = p.data()[(n * s.c + c) * plane + px];
                    prop_assert!((0.0..=1.0).contains(&v));
                    sum += v;
                }
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resize_of_constants_is_constant(
        fill in -100.0f64..100.0,
        h in 1usize..7,
        w in 1usize..7,
        oh in 1usize..9,
        ow in 1usize..9,
    ) {
        let x = Tensor::alloc(Shape::new(1, 2, h, w), fill as Elem).unwrap();
        let y = bilinear_resize(&x, oh, ow).unwrap();
        for v in y.data() {
            prop_assert!((v - fill as Elem).abs() < 1e-9);
        }
        let p = adaptive_avg_pool(&x, h.min(3), w.min(3)).unwrap();
        for v in p.data() {
            prop_assert!((v - fill as Elem).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_is_linear_in_the_upstream_gradient(seed in 0u64..500, alpha in 0.1f64..4.0) {
        let mut rng = SeededRng::new(seed);
        let xt = Tensor::he_init(Shape::new(1, 2, 3, 3), 2, &mut rng).unwrap();
        let run = |scale: Elem| {
            let mut tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let s = tape.sigmoid(x);
            let t = tape.tanh(s);
            let y = tape.hadamard(t, s).unwrap();
            let g = Tensor::alloc(tape.shape(y), scale).unwrap();
            tape.backward(y, &g).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let base = run(1.0);
        let scaled = run(alpha as Elem);
        for (b, s) in base.iter().zip(&scaled) {
            prop_assert!((b * alpha as Elem - s).abs() <= 1e-10 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn conv_output_stays_finite(seed in 0u64..200) {
        let mut rng = SeededRng::new(seed);
        let mut x = Tensor::he_init(Shape::new(1, 2, 5, 5), 2, &mut rng).unwrap();
        for v in x.data_mut() {
            *v *= 1e4; // stress the magnitude bound
        }
        let k = Tensor::he_init(Shape::new(2, 2, 3, 3), 18, &mut rng).unwrap();
        let y = conv2d(&x, &k, None, ConvParams::with_padding(1)).unwrap();
        prop_assert!(y.is_all_finite());
    }

    #[test]
    fn mean_iou_is_relabeling_equivariant(seed in 0u64..300) {
        let mut rng = SeededRng::new(seed);
        let k = 4usize;
        let n = 24usize;
        let gt: Vec<u8> = (0..n).map(|_| rng.below(k) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.below(k) as u8).collect();
        // a fixed permutation of the class ids
        let perm = [2u8, 0, 3, 1];
        let gt_l = Labels::new(1, 4, 6, gt.clone()).unwrap();
        let pred_l = Labels::new(1, 4, 6, pred.clone()).unwrap();
        let a = metrics(&pred_l, &gt_l, k, IGNORE_INDEX).unwrap();
        let gt_p = Labels::new(1, 4, 6, gt.iter().map(|&v| perm[v as usize]).collect()).unwrap();
        let pred_p =
            Labels::new(1, 4, 6, pred.iter().map(|&v| perm[v as usize]).collect()).unwrap();
        let b = metrics(&pred_p, &gt_p, k, IGNORE_INDEX).unwrap();
        prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
        prop_assert!((a.pixel_accuracy - b.pixel_accuracy).abs() < 1e-12);
        for c in 0..k {
            prop_assert_eq!(a.per_class_iou[c], b.per_class_iou[perm[c] as usize]);
        }
    }

    #[test]
    fn augmentation_never_invents_label_values(seed in 0u64..200) {
        let mut rng = SeededRng::new(seed);
        let img = Tensor::he_init(Shape::new(1, 3, 16, 16), 2, &mut rng).unwrap();
        let data: Vec<u8> = (0..256).map(|_| rng.below(3) as u8).collect();
        let labels = Labels::new(1, 16, 16, data.clone()).unwrap();
        let (_, out) = augment(&img, &labels, &AugmentConfig::default(), &mut rng).unwrap();
        for v in &out.data {
            prop_assert!(data.contains(v) || *v == IGNORE_INDEX);
        }
    }

    #[test]
    fn poly_lr_is_monotone(total in 1u64..500, lr0 in 1e-6f64..1e-2) {
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = poly_lr(step, total, lr0 as Elem, 0.9).unwrap() as f64;
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!(lr >= 0.0);
            prev = lr;
        }
    }
}
