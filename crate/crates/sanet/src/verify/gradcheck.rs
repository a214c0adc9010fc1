//! Central finite differences against analytic gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Elem, SeededRng, Shape, Tensor};

/// Step for central differences, in double precision.
pub const FD_STEP: Elem = 1e-5;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub worst_rel_err: Elem,
    pub tolerance: Elem,
    pub elements: usize,
    pub passed: bool,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{:<28} {:>12.3e}  tol {:>8.0e}  {:>5} elems  {}",
            self.name,
            self.worst_rel_err,
            self.tolerance,
            self.elements,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn rel_err(a: Elem, n: Elem) -> Elem {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare provided analytic gradients against central differences of
/// `loss` with step `FD_STEP`. The relative error per element is
/// `|a - n| / max(|a|, |n|, 1e-8)`; the report carries the worst one.
pub fn finite_diff_check(
    name: &str,
    loss: &dyn Fn(&[Tensor]) -> Result<Elem>,
    inputs: &[Tensor],
    analytic: &[Vec<Elem>],
    tolerance: Elem,
) -> Result<CheckReport> {
    let mut worst: Elem = 0.0;
    let mut elements = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.data().len() {
            let orig = input.data()[j];
            work[ti].data_mut()[j] = orig + FD_STEP;
            let up = loss(&work)?;
            work[ti].data_mut()[j] = orig - FD_STEP;
            let down = loss(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ti][j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient check '{name}'")));
            }
            worst = worst.max(rel_err(a, numeric));
            elements += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        worst_rel_err: worst,
        tolerance,
        elements,
        passed: worst <= tolerance,
    })
}

/// Check a tape-built operation. Non-scalar outputs are reduced with a
/// fixed random projection `u`, so the scalar objective is `sum(out * u)`;
/// analytic gradients come from `backward` seeded with `u`.
pub fn check_tape_op(
    name: &str,
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    tolerance: Elem,
    rng: &mut SeededRng,
) -> Result<CheckReport> {
    let forward = |xs: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let (mut tape, out, vars) = forward(inputs)?;
    let out_shape = tape.shape(out);
    let mut proj = Tensor::zeros(out_shape);
    if out_shape == Shape::new(1, 1, 1, 1) {
        proj.data_mut()[0] = 1.0;
    } else {
        for v in proj.data_mut() {
            *v = rng.normal();
        }
    }
    if !tape.value(out).is_all_finite() {
        return Err(Error::NonFinite(format!("forward of '{name}'")));
    }
    tape.backward(out, &proj)?;
    let analytic: Vec<Vec<Elem>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.data().len()])
        })
        .collect();

    let loss = |xs: &[Tensor]| -> Result<Elem> {
        let (tape, out, _) = forward(xs)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    finite_diff_check(name, &loss, inputs, &analytic, tolerance)
}

/// Finite-difference check of a module's named parameters. `forward`
/// rebuilds the tape from the model's current parameter values; non-scalar
/// outputs are projected as in `check_tape_op`. With `elems_per_param` set,
/// a seeded subset of each parameter tensor is probed instead of every
/// element (whole-model checks).
pub fn check_model_params<M: crate::layers::ParamSet>(
    name: &str,
    model: &mut M,
    forward: impl Fn(&M, &mut Tape) -> Result<Var>,
    tolerance: Elem,
    elems_per_param: Option<usize>,
    rng: &mut SeededRng,
) -> Result<CheckReport> {
    let mut tape = Tape::new();
    let out = forward(model, &mut tape)?;
    let out_shape = tape.shape(out);
    let mut proj = Tensor::zeros(out_shape);
    if out_shape == Shape::new(1, 1, 1, 1) {
        proj.data_mut()[0] = 1.0;
    } else {
        for v in proj.data_mut() {
            *v = rng.normal();
        }
    }
    tape.backward(out, &proj)?;

    let mut targets: Vec<(String, usize, Elem)> = Vec::new(); // (param, index, analytic)
    {
        let mut collect = |pname: &str, t: &Tensor| {
            let g = tape.param_grad(pname).map(|g| g.to_vec()).unwrap_or_default();
            if g.is_empty() {
                return;
            }
            let len = t.data().len();
            let idxs: Vec<usize> = match elems_per_param {
                None => (0..len).collect(),
                Some(k) => (0..k.min(len)).map(|_| rng.below(len)).collect(),
            };
            for j in idxs {
                targets.push((pname.to_string(), j, g[j]));
            }
        };
        model.visit(&mut |pname, t| collect(pname, t));
    }
    if targets.is_empty() {
        return Err(Error::Check(format!("'{name}': no parameters received gradient")));
    }

    let loss = |model: &M| -> Result<Elem> {
        let mut tape = Tape::new();
        let out = forward(model, &mut tape)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut worst: Elem = 0.0;
    let mut elements = 0;
    for (pname, j, analytic) in &targets {
        let nudge = |delta: Elem, m: &mut M| {
            m.visit_mut(&mut |n, t| {
                if n == pname {
                    t.data_mut()[*j] += delta;
                }
            });
        };
        nudge(FD_STEP, model);
        let up = loss(model)?;
        nudge(-2.0 * FD_STEP, model);
        let down = loss(model)?;
        nudge(FD_STEP, model);
        let numeric = (up - down) / (2.0 * FD_STEP);
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(Error::NonFinite(format!("gradient check '{name}' at {pname}[{j}]")));
        }
        worst = worst.max(rel_err(*analytic, numeric));
        elements += 1;
    }
    Ok(CheckReport {
        name: name.to_string(),
        worst_rel_err: worst,
        tolerance,
        elements,
        passed: worst <= tolerance,
    })
}

/// Inputs for smooth-point checks: magnitudes in [0.2, 1.5] with random
/// sign, keeping clear of relu kinks and activation saturation.
pub fn sample_smooth(shape: Shape, rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.range(0.2, 1.5);
        *v = if rng.chance(0.5) { mag } else { -mag };
    }
    t
}
