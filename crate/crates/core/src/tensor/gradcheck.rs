use serde::Serialize;

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::Result;

/// Coordinates whose perturbation moves an activation input into or across
/// this neighborhood of a kink are skipped.
pub const KINK_RADIUS: f64 = 1e-6;

const DENOM_FLOOR: f64 = 1e-8;

/// Rounding error, in ulps of the function value, allowed per evaluation when
/// forming a central difference.
pub const ROUNDING_ULPS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error after discounting the rounding error of the
    /// central difference itself.
    pub max_rel_err: f64,
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` with no rounding discount.
    pub max_raw_rel_err: f64,
    pub pass: bool,
    pub checked: usize,
    pub skipped: usize,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

struct Eval {
    value: f64,
    kinks: Vec<f64>,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<Eval>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(Eval {
        value: g.value(out).data()[0],
        kinks: g.kink_inputs().to_vec(),
    })
}

fn crosses_kink(plus: &[f64], minus: &[f64]) -> bool {
    plus.len() != minus.len()
        || plus.iter().zip(minus).any(|(&p, &m)| {
            (p > 0.0) != (m > 0.0) || (p != m && (p.abs() < KINK_RADIUS || m.abs() < KINK_RADIUS))
        })
}

/// Compares reverse-mode gradients of a scalar function of several tensors
/// against central differences.
///
/// `stride` checks every `stride`-th coordinate of each input (1 checks all).
/// The relative error of a coordinate is `max(|a - n| - r, 0) / max(|a|, |n|, 1e-8)`
/// where `r = ROUNDING_ULPS * eps * (|f+| + |f-|) / (2 step)` bounds the error
/// that rounding of `f` alone puts into the central difference `n`. Without
/// it, coordinates whose true gradient is zero fail on a single ulp of `f`
/// whenever `|f| eps / step` exceeds `tol * 1e-8`.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor], step: f64, tol: f64, stride: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_raw_rel_err: 0.0,
        pass: true,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut point = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every input requires grad").data().to_vec();
        for ci in (0..inputs[ti].len()).step_by(stride.max(1)) {
            let orig = inputs[ti].data()[ci];
            point[ti].data_mut()[ci] = orig + step;
            let plus = evaluate(&f, &point)?;
            point[ti].data_mut()[ci] = orig - step;
            let minus = evaluate(&f, &point)?;
            point[ti].data_mut()[ci] = orig;
            if crosses_kink(&plus.kinks, &minus.kinks) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * step);
            let a = analytic[ci];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rounding = ROUNDING_ULPS * f64::EPSILON * (plus.value.abs() + minus.value.abs()) / (2.0 * step);
            let raw = (a - numeric).abs();
            let rel = (raw - rounding).max(0.0) / denom;
            report.max_raw_rel_err = report.max_raw_rel_err.max(raw / denom);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((ti, ci));
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

/// Single-input form of [`grad_check_multi`] checking every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step, tol, 1)
}
