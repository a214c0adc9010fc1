//! Confusion-matrix based IoU and pixel accuracy.

use crate::error::{arg_err, Result};
use crate::tensor::{Elem, Tensor};
use crate::train::Labels;

#[derive(Clone, Debug)]
pub struct MetricReport {
    /// Per-class IoU; `None` for classes absent from both prediction and
    /// ground truth (excluded from the mean).
    pub per_class_iou: Vec<Option<Elem>>,
    pub mean_iou: Elem,
    pub pixel_accuracy: Elem,
    /// Row = ground truth class, column = predicted class.
    pub confusion: Vec<u64>,
}

impl MetricReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("class_id,iou\n");
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => out.push_str(&format!("{c},{v}\n")),
                None => out.push_str(&format!("{c},\n")),
            }
        }
        out.push_str(&format!("mean_iou,{}\n", self.mean_iou));
        out.push_str(&format!("pixel_accuracy,{}\n", self.pixel_accuracy));
        out
    }
}

/// Add one prediction/label pair into a KxK confusion matrix.
pub fn accumulate_confusion(
    confusion: &mut [u64],
    pred: &Labels,
    labels: &Labels,
    num_classes: usize,
    ignore_index: u8,
) -> Result<()> {
    if pred.data.len() != labels.data.len() {
        return arg_err("metrics: prediction and labels disagree in size");
    }
    for (&p, &l) in pred.data.iter().zip(&labels.data) {
        if l == ignore_index {
            continue;
        }
        if l as usize >= num_classes || p as usize >= num_classes {
            return arg_err(format!("metrics: value out of range (pred {p}, label {l})"));
        }
        confusion[l as usize * num_classes + p as usize] += 1;
    }
    Ok(())
}

pub fn report_from_confusion(confusion: &[u64], num_classes: usize) -> MetricReport {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum_iou: Elem = 0.0;
    let mut counted = 0usize;
    for c in 0..num_classes {
        let tp = confusion[c * num_classes + c];
        let row: u64 = (0..num_classes).map(|p| confusion[c * num_classes + p]).sum();
        let col: u64 = (0..num_classes).map(|g| confusion[g * num_classes + c]).sum();
        let denom = row + col - tp; // TP + FP + FN
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as Elem / denom as Elem;
            per_class.push(Some(iou));
            sum_iou += iou;
            counted += 1;
        }
    }
    let total: u64 = confusion.iter().sum();
    let trace: u64 = (0..num_classes).map(|c| confusion[c * num_classes + c]).sum();
    MetricReport {
        per_class_iou: per_class,
        mean_iou: if counted == 0 { 0.0 } else { sum_iou / counted as Elem },
        pixel_accuracy: if total == 0 { 0.0 } else { trace as Elem / total as Elem },
        confusion: confusion.to_vec(),
    }
}

pub fn metrics(
    pred: &Labels,
    labels: &Labels,
    num_classes: usize,
    ignore_index: u8,
) -> Result<MetricReport> {
    let mut confusion = vec![0u64; num_classes * num_classes];
    accumulate_confusion(&mut confusion, pred, labels, num_classes, ignore_index)?;
    Ok(report_from_confusion(&confusion, num_classes))
}

/// Per-pixel argmax over channels; ties go to the lower class index.
pub fn argmax_channels(scores: &Tensor) -> Labels {
    let s = scores.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        for px in 0..plane {
            let mut best = 0usize;
            let mut best_v = Elem::NEG_INFINITY;
            for c in 0..s.c {
                let v = scores.data()[(n * s.c + c) * plane + px];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            data.push(best as u8);
        }
    }
    Labels { n: s.n, h: s.h, w: s.w, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::IGNORE_INDEX;

    #[test]
    fn identical_maps_are_perfect() {
        let l = Labels::new(1, 2, 2, vec![0, 1, 2, 1]).unwrap();
        let r = metrics(&l, &l, 3, IGNORE_INDEX).unwrap();
        assert_eq!(r.pixel_accuracy, 1.0);
        assert_eq!(r.mean_iou, 1.0);
        for iou in r.per_class_iou.iter().flatten() {
            assert_eq!(*iou, 1.0);
        }
    }

    #[test]
    fn disjoint_single_class_maps() {
        let pred = Labels::filled(1, 2, 2, 0);
        let gt = Labels::filled(1, 2, 2, 1);
        let r = metrics(&pred, &gt, 3, IGNORE_INDEX).unwrap();
        assert_eq!(r.mean_iou, 0.0);
        assert_eq!(r.pixel_accuracy, 0.0);
        assert_eq!(r.per_class_iou[2], None); // absent from both
    }

    #[test]
    fn four_pixel_set_arithmetic() {
        // class 1: TP=2, FP=1, FN=1 -> IoU 0.5
        let gt = Labels::new(1, 2, 2, vec![1, 1, 1, 0]).unwrap();
        let pred = Labels::new(1, 2, 2, vec![1, 1, 0, 1]).unwrap();
        let r = metrics(&pred, &gt, 2, IGNORE_INDEX).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.5));
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let gt = Labels::new(1, 1, 3, vec![0, IGNORE_INDEX, 1]).unwrap();
        let pred = Labels::new(1, 1, 3, vec![0, 1, 1]).unwrap();
        let r = metrics(&pred, &gt, 2, IGNORE_INDEX).unwrap();
        assert_eq!(r.pixel_accuracy, 1.0);
        assert_eq!(r.confusion.iter().sum::<u64>(), 2);
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        let t = Tensor::from_vec(
            crate::tensor::Shape::new(1, 3, 1, 2),
            vec![1.0, 0.0, 1.0, 2.0, 0.5, 0.5],
        )
        .unwrap();
        // channels are planes: c0 = [1,0], c1 = [1,2], c2 = [0.5,0.5]
        let l = argmax_channels(&t);
        assert_eq!(l.data, vec![0, 1]);
    }
}
