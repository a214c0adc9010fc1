//! Definition-level Lovász extension of the Jaccard loss: evaluate the
//! discrete loss on every prefix of the descending-sorted error order with
//! explicit sets, and dot the errors with the increments. Test scale only.

use crate::tensor::Elem;

/// Discrete Jaccard loss of a mispredicted set `m_set` against ground truth
/// `gt`: `1 - |G \ M| / |G u M|` (0 when both are empty).
fn jaccard_loss(m_set: &[bool], gt: &[bool]) -> Elem {
    let mut g_minus_m = 0usize;
    let mut g_union_m = 0usize;
    for (&m, &g) in m_set.iter().zip(gt) {
        if g && !m {
            g_minus_m += 1;
        }
        if g || m {
            g_union_m += 1;
        }
    }
    if g_union_m == 0 {
        0.0
    } else {
        1.0 - g_minus_m as Elem / g_union_m as Elem
    }
}

pub fn lovasz_oracle(errors: &[Elem], gt_mask: &[bool]) -> Elem {
    assert_eq!(errors.len(), gt_mask.len());
    let n = errors.len();
    if n == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        errors[b].partial_cmp(&errors[a]).unwrap().then(a.cmp(&b))
    });
    let mut in_prefix = vec![false; n];
    let mut prev = jaccard_loss(&in_prefix, gt_mask); // empty set
    let mut loss = 0.0;
    for &idx in &order {
        in_prefix[idx] = true;
        let cur = jaccard_loss(&in_prefix, gt_mask);
        loss += errors[idx] * (cur - prev);
        prev = cur;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_errors() {
        assert_eq!(lovasz_oracle(&[0.0, 0.0, 0.0], &[true, false, true]), 0.0);
    }

    #[test]
    fn single_pixel_present() {
        // one pixel, gt present, error e: single increment is 1, loss = e
        assert!((lovasz_oracle(&[0.4], &[true]) - 0.4).abs() < 1e-12);
        assert!((lovasz_oracle(&[0.9], &[true]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_input() {
        assert_eq!(lovasz_oracle(&[], &[]), 0.0);
    }

    #[test]
    fn hard_errors_give_one_minus_iou() {
        // errors in {0,1} encode a hard prediction; the extension then
        // equals the discrete Jaccard loss itself.
        let gt = [true, true, false, false, true];
        let m = [false, true, true, false, false]; // mispredicted set
        let errors: Vec<Elem> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        // pred set = (G \ M) u (M \ G) = {0, 4} u {2} -> inter 2, union 4
        let want = 1.0 - 2.0 / 4.0;
        assert!((lovasz_oracle(&errors, &gt) - want).abs() < 1e-12);
    }
}
