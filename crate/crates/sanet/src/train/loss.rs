//! Categorical cross-entropy and the Lovász-softmax Jaccard surrogate.
//! Both compute their gradient at forward time and register it on the tape
//! as a scalar node.

use crate::error::{arg_err, shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Elem, Tensor};
use crate::train::Labels;

/// Scalar loss node. `degenerate` flags the defined-but-warned cases: every
/// pixel ignored, or no class present.
pub struct LossValue {
    pub var: Var,
    pub value: Elem,
    pub degenerate: bool,
}

fn validate_labels(logits: &Tensor, labels: &Labels, ignore_index: u8) -> Result<()> {
    let s = logits.shape();
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return shape_err(format!(
            "loss: labels {}x{}x{} do not match logits {}",
            labels.n, labels.h, labels.w, s
        ));
    }
    if s.c > u8::MAX as usize {
        return arg_err("loss: more than 255 classes are not representable");
    }
    for &l in &labels.data {
        if l != ignore_index && l as usize >= s.c {
            return arg_err(format!(
                "loss: label {l} out of range for {} classes",
                s.c
            ));
        }
    }
    Ok(())
}

/// Mean over non-ignored pixels of `-log softmax(logits)[label]`; the
/// gradient is `(p - onehot)/N` on those pixels and zero elsewhere.
pub fn cross_entropy_raw(
    logits: &Tensor,
    labels: &Labels,
    ignore_index: u8,
) -> Result<(Elem, Vec<Elem>, usize)> {
    validate_labels(logits, labels, ignore_index)?;
    let s = logits.shape();
    let plane = s.plane();
    let ld = logits.data();
    let mut grad = vec![0.0; ld.len()];
    let mut valid = 0usize;
    let mut loss_sum: Elem = 0.0;

    for n in 0..s.n {
        for px in 0..plane {
            let label = labels.data[n * plane + px];
            if label == ignore_index {
                continue;
            }
            valid += 1;
            let base = n * s.c * plane + px;
            let mut max = Elem::NEG_INFINITY;
            for c in 0..s.c {
                max = max.max(ld[base + c * plane]);
            }
            let mut sum: Elem = 0.0;
            for c in 0..s.c {
                sum += (ld[base + c * plane] - max).exp();
            }
            let lse = max + sum.ln();
            loss_sum += lse - ld[base + (label as usize) * plane];
            for c in 0..s.c {
                let p = (ld[base + c * plane] - lse).exp();
                let onehot = if c == label as usize { 1.0 } else { 0.0 };
                grad[base + c * plane] = p - onehot;
            }
        }
    }
    if valid == 0 {
        grad.fill(0.0);
        return Ok((0.0, grad, 0));
    }
    let inv = 1.0 / valid as Elem;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((loss_sum * inv, grad, valid))
}

pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &Labels,
    ignore_index: u8,
) -> Result<LossValue> {
    let (value, grad, valid) = cross_entropy_raw(tape.value(logits), labels, ignore_index)?;
    let var = tape.scalar_with_grad(logits, value, grad)?;
    Ok(LossValue { var, value, degenerate: valid == 0 })
}

/// Per present class: errors are `1 - p(c)` on that class's pixels and
/// `p(c)` elsewhere; sorted descending, the loss is the inner product with
/// the increments of the discrete Jaccard loss along the sorted prefixes.
/// The total is the mean over classes present in the batch.
pub fn lovasz_raw(
    probs: &Tensor,
    labels: &Labels,
    ignore_index: u8,
) -> Result<(Elem, Vec<Elem>, usize)> {
    validate_labels(probs, labels, ignore_index)?;
    let s = probs.shape();
    let plane = s.plane();
    let pd = probs.data();
    let mut grad = vec![0.0; pd.len()];

    // valid pixels, flattened in batch order
    let mut pixels: Vec<(usize, u8)> = Vec::new(); // (n*plane + px, label)
    for n in 0..s.n {
        for px in 0..plane {
            let l = labels.data[n * plane + px];
            if l != ignore_index {
                pixels.push((n * plane + px, l));
            }
        }
    }
    let mut present: Vec<usize> = Vec::new();
    for c in 0..s.c {
        if pixels.iter().any(|&(_, l)| l as usize == c) {
            present.push(c);
        }
    }
    if present.is_empty() {
        return Ok((0.0, grad, 0));
    }

    let mut total: Elem = 0.0;
    for &c in &present {
        let mut errors: Vec<Elem> = Vec::with_capacity(pixels.len());
        let mut gts: Vec<bool> = Vec::with_capacity(pixels.len());
        for &(flat, l) in &pixels {
            let n = flat / plane;
            let px = flat % plane;
            let p = pd[(n * s.c + c) * plane + px];
            let is_gt = l as usize == c;
            errors.push(if is_gt { 1.0 - p } else { p });
            gts.push(is_gt);
        }
        let mut order: Vec<usize> = (0..errors.len()).collect();
        order.sort_by(|&a, &b| errors[b].partial_cmp(&errors[a]).unwrap().then(a.cmp(&b)));

        let g_total = gts.iter().filter(|&&g| g).count() as Elem;
        let mut cum_gt: Elem = 0.0;
        let mut cum_non: Elem = 0.0;
        let mut prev_jac: Elem = 0.0;
        for &idx in &order {
            if gts[idx] {
                cum_gt += 1.0;
            } else {
                cum_non += 1.0;
            }
            let inter = g_total - cum_gt;
            let union = g_total + cum_non;
            let jac = 1.0 - inter / union;
            let delta = jac - prev_jac;
            prev_jac = jac;
            total += errors[idx] * delta;
            // d(loss)/d(error) at this pixel is the increment; map back to p
            let (flat, l) = pixels[idx];
            let n = flat / plane;
            let px = flat % plane;
            let sign = if l as usize == c { -1.0 } else { 1.0 };
            grad[(n * s.c + c) * plane + px] += sign * delta;
        }
    }
    let inv = 1.0 / present.len() as Elem;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((total * inv, grad, present.len()))
}

pub fn lovasz_softmax(
    tape: &mut Tape,
    probs: Var,
    labels: &Labels,
    ignore_index: u8,
) -> Result<LossValue> {
    let (value, grad, present) = lovasz_raw(tape.value(probs), labels, ignore_index)?;
    let var = tape.scalar_with_grad(probs, value, grad)?;
    Ok(LossValue { var, value, degenerate: present == 0 })
}
