//! AdamW with decoupled weight decay, and the polynomial learning-rate
//! schedule.

use std::collections::HashMap;

use crate::error::{arg_err, Result};
use crate::layers::ParamSet;
use crate::tensor::Elem;

#[derive(Clone, Copy, Debug)]
pub struct AdamWParams {
    pub beta1: Elem,
    pub beta2: Elem,
    pub eps: Elem,
    pub weight_decay: Elem,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// One bias-corrected Adam update plus the decoupled decay
/// `p <- p - lr * wd * p`, applied separately from the gradient term.
/// `step` is the post-increment step count (1 on the first update).
pub fn adamw_step(
    param: &mut [Elem],
    grad: &[Elem],
    m: &mut [Elem],
    v: &mut [Elem],
    step: u64,
    lr: Elem,
    hyper: AdamWParams,
) {
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps));
        param[i] -= lr * hyper.weight_decay * param[i];
    }
}

/// Optimizer state: first/second moments per parameter plus a step counter.
pub struct AdamW {
    pub hyper: AdamWParams,
    pub step: u64,
    slots: HashMap<String, (Vec<Elem>, Vec<Elem>)>,
}

impl AdamW {
    pub fn new(hyper: AdamWParams) -> AdamW {
        AdamW { hyper, step: 0, slots: HashMap::new() }
    }

    /// Apply one update to every parameter from its grad slot. Parameters
    /// without a gradient are treated as zero-gradient (decay still applies).
    pub fn step_params(&mut self, model: &mut dyn ParamSet, lr: Elem) {
        self.step += 1;
        let step = self.step;
        let hyper = self.hyper;
        let slots = &mut self.slots;
        model.visit_mut(&mut |name, tensor| {
            let len = tensor.data().len();
            let (m, v) = slots
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
            let zero;
            let grad: &[Elem] = match tensor.grad() {
                Some(g) => g,
                None => {
                    zero = vec![0.0; len];
                    &zero
                }
            };
            // split borrow: update into a scratch copy of the data
            let mut data = tensor.data().to_vec();
            adamw_step(&mut data, grad, m, v, step, lr, hyper);
            tensor.data_mut().copy_from_slice(&data);
        });
    }

    /// Moment slots in the model's visit order, for checkpointing.
    pub fn export_slots(&self, model: &dyn ParamSet) -> Vec<(String, Vec<Elem>, Vec<Elem>)> {
        let mut out = Vec::new();
        model.visit(&mut |name, _| {
            if let Some((m, v)) = self.slots.get(name) {
                out.push((name.to_string(), m.clone(), v.clone()));
            }
        });
        out
    }

    pub fn restore_slot(&mut self, name: &str, m: Vec<Elem>, v: Vec<Elem>) {
        self.slots.insert(name.to_string(), (m, v));
    }
}

/// `lr0 * (1 - step/total)^power`.
pub fn poly_lr(step: u64, total: u64, lr0: Elem, power: Elem) -> Result<Elem> {
    if total == 0 {
        return arg_err("poly_lr: total must be >= 1");
    }
    if step > total {
        return arg_err("poly_lr: step beyond total");
    }
    Ok(lr0 * (1.0 - step as Elem / total as Elem).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        for t in 1..=5 {
            adamw_step(&mut p, &g, &mut m, &mut v, t, 1e-3, AdamWParams::default());
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn zero_gradient_decay_shrinks_geometrically() {
        let hyper = AdamWParams { weight_decay: 0.1, ..Default::default() };
        let lr: Elem = 0.01;
        let steps = 7;
        let mut p = vec![2.0];
        let g = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for t in 1..=steps {
            adamw_step(&mut p, &g, &mut m, &mut v, t, lr, hyper);
        }
        let expect = 2.0 * (1.0 - lr * hyper.weight_decay).powi(steps as i32);
        assert!((p[0] - expect).abs() < 1e-15, "{} vs {expect}", p[0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // g = 1 everywhere, fresh state: bias correction gives m_hat/sqrt(v_hat) = 1
        let mut p = vec![0.0, 3.0];
        let g = vec![1.0, 1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let lr = 1e-2;
        adamw_step(&mut p, &g, &mut m, &mut v, 1, lr, AdamWParams::default());
        assert!((p[0] + lr).abs() < 1e-9);
        assert!((p[1] - (3.0 - lr)).abs() < 1e-9);
    }

    #[test]
    fn poly_schedule_values() {
        assert_eq!(poly_lr(0, 100, 1e-5, 0.9).unwrap(), 1e-5);
        assert_eq!(poly_lr(100, 100, 1e-5, 0.9).unwrap(), 0.0);
        let mid = poly_lr(50, 100, 1.0, 0.9).unwrap();
        assert!((mid - (0.5 as Elem).powf(0.9)).abs() < 1e-12);
        assert!(poly_lr(0, 0, 1e-5, 0.9).is_err());
    }
}
