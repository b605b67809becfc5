//! Gradient-check catalog shared by the gradient tests and the acceptance run.

use airl_core::model::{AirlConfig, AirlState};
use airl_core::objectives::{coral_inv_loss, cross_entropy, weighted_cls_loss, weighted_covariance, ClassWeightTable};
use airl_core::rng;
use airl_core::tensor::{grad_check_multi, GradCheckReport, Graph, RunningStats, Tensor, Var, LEAKY_SLOPE};
use airl_core::training::sequence_objective;
use airl_core::Result;
use rand::Rng;

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out * R)` with a fixed random `R`, so every output coordinate matters.
pub fn project(g: &mut Graph, out: Var) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let r = g.constant(random(&shape, 999));
    let p = g.mul(out, r)?;
    g.reduce_sum(p)
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase { name: name.into(), inputs, f: Box::new(f) }
}

/// Projected output of a single-input op.
fn unary(name: &str, x: &Tensor, op: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> OpCase {
    case(name, vec![x.clone()], move |g, v| {
        let o = op(g, v[0])?;
        project(g, o)
    })
}

/// Every differentiable graph op and loss, each on random inputs.
pub fn op_catalog() -> Vec<OpCase> {
    let mut cases = vec![
        case("matmul", vec![random(&[3, 4], 1), random(&[4, 5], 2)], |g, v| {
            let o = g.matmul(v[0], v[1])?;
            project(g, o)
        }),
        case("affine", vec![random(&[3, 4], 3), random(&[4, 2], 4), random(&[1, 2], 5)], |g, v| {
            let o = g.affine(v[0], v[1], v[2])?;
            project(g, o)
        }),
        case("add/sub/mul", vec![random(&[2, 3], 6), random(&[2, 3], 7)], |g, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.sub(a, v[1])?;
            let m = g.mul(s, v[1])?;
            project(g, m)
        }),
        unary("scale", &random(&[2, 3], 8), |g, x| g.scale(x, -2.5)),
        case("mul_col", vec![random(&[4, 3], 9), random(&[4, 1], 10)], |g, v| {
            let o = g.mul_col(v[0], v[1])?;
            project(g, o)
        }),
    ];

    let x = random(&[4, 5], 11);
    cases.push(unary("relu", &x, |g, x| g.relu(x)));
    cases.push(unary("leaky_relu", &x, |g, x| g.leaky_relu(x, LEAKY_SLOPE)));
    cases.push(unary("sigmoid", &x, |g, x| g.sigmoid(x)));
    cases.push(unary("tanh", &x, |g, x| g.tanh(x)));
    cases.push(unary("exp", &x, |g, x| g.exp(x)));
    for axis in 0..2 {
        cases.push(unary(&format!("log_softmax axis {axis}"), &x, move |g, x| g.log_softmax(x, axis)));
        cases.push(unary(&format!("softmax axis {axis}"), &x, move |g, x| g.softmax(x, axis)));
    }

    let x = random(&[4, 3], 12);
    cases.push(case("reduce_sum", vec![x.clone()], |g, v| {
        let s = g.reduce_sum(v[0])?;
        g.mul(s, s)
    }));
    cases.push(case("reduce_mean", vec![x.clone()], |g, v| {
        let s = g.reduce_mean(v[0])?;
        g.mul(s, s)
    }));
    for axis in 0..2 {
        cases.push(unary(&format!("sum_axis {axis}"), &x, move |g, x| g.sum_axis(x, axis)));
    }
    cases.push(case("frobenius_norm_squared", vec![x.clone()], |g, v| g.frobenius_norm_squared(v[0])));
    cases.push(case("concat rows", vec![random(&[2, 3], 13), random(&[1, 3], 14)], |g, v| {
        let o = g.concat(&[v[0], v[1], v[0]], 0)?;
        project(g, o)
    }));
    cases.push(case("concat cols", vec![random(&[2, 3], 15), random(&[2, 1], 16)], |g, v| {
        let o = g.concat(&[v[0], v[1]], 1)?;
        project(g, o)
    }));
    cases.push(unary("slice", &x, |g, x| {
        let a = g.slice(x, 0, 1, 2)?;
        g.slice(a, 1, 1, 2)
    }));
    cases.push(unary("reshape", &x, |g, x| g.reshape(x, &[2, 6])));
    cases.push(unary("transpose", &x, |g, x| g.transpose(x)));
    cases.push(unary("gather_rows", &x, |g, x| g.gather_rows(x, &[3, 0, 0, 2, 3])));
    cases.push(unary("pick", &x, |g, x| g.pick(x, &[2, 0, 1, 1])));

    let bn_inputs = vec![random(&[6, 3], 17), random(&[1, 3], 18), random(&[1, 3], 19)];
    cases.push(case("batchnorm train", bn_inputs.clone(), |g, v| {
        let mut rs = RunningStats::new(3);
        let o = g.batchnorm_1d(v[0], v[1], v[2], &mut rs, true)?;
        project(g, o)
    }));
    cases.push(case("batchnorm eval", bn_inputs, |g, v| {
        let mut rs = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
        let o = g.batchnorm_1d(v[0], v[1], v[2], &mut rs, false)?;
        project(g, o)
    }));

    let (n, i, h) = (2, 3, 4);
    let lstm_inputs = vec![
        random(&[n, i], 20),
        random(&[n, h], 21),
        random(&[n, h], 22),
        random(&[i, 4 * h], 23),
        random(&[h, 4 * h], 24),
        random(&[1, 4 * h], 25),
    ];
    cases.push(case("lstm_cell", lstm_inputs, |g, v| {
        let (hn, cn) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
        let both = g.concat(&[hn, cn], 1)?;
        project(g, both)
    }));

    cases.push(unary("bce_with_logits", &random(&[5, 1], 26), |g, x| g.bce_with_logits(x, &[1.0, 0.0, 1.0, 1.0, 0.0])));
    cases.push(unary("cross_entropy binary", &random(&[5, 1], 27), |g, x| cross_entropy(g, x, &[1, 0, 1, 1, 0])));
    cases.push(unary("cross_entropy multiclass", &random(&[5, 3], 28), |g, x| cross_entropy(g, x, &[2, 0, 1, 2, 0])));
    cases.push(case("weighted_cls_loss", vec![random(&[5, 1], 29), random(&[4, 1], 30)], |g, v| {
        weighted_cls_loss(g, v[0], &[1, 0, 1, 1, 0], &[0.7, 1.6], v[1], &[0, 1, 1, 0])
    }));
    cases.push(unary("weighted_covariance", &random(&[5, 3], 31), |g, x| {
        weighted_covariance(g, x, &[1.0, 2.0, 0.5, 1.5, 1.0])
    }));
    cases.push(case("coral_inv_loss", vec![random(&[6, 3], 32), random(&[7, 3], 33)], |g, v| {
        let w = [0.8, 1.3, 1.3, 0.8, 0.8, 1.3];
        Ok(coral_inv_loss(g, v[0], &[0, 1, 1, 0, 0, 1], &w, v[1], &[1, 0, 0, 1, 1, 0, 1], 2)?.loss)
    }));
    cases
}

pub fn check_case(c: &OpCase) -> GradCheckReport {
    grad_check_multi(&c.f, &c.inputs, STEP, TOL, 1).unwrap()
}

/// Reduced model sizes that keep an exhaustive check fast.
pub fn small_config(n_classes: usize) -> AirlConfig {
    AirlConfig { repr_dim: 4, lstm_hidden: 3, classifier_hidden: 3, encoder_layers: 2, ..AirlConfig::new(2, n_classes) }
}

/// Checks the full objective on a 3-domain batch of 6 rows per domain,
/// probing every `stride`-th parameter coordinate.
pub fn objective_check(cfg: AirlConfig, stride: usize, seed: u64, alpha: f64) -> GradCheckReport {
    let classes = cfg.n_classes;
    let state = AirlState::new(cfg, seed).unwrap();
    let x = random(&[18, 2], seed + 100);
    let labels: Vec<Vec<usize>> = (0..3).map(|t| (0..6).map(|j| (j + t) % classes).collect()).collect();
    let priors: Vec<Vec<f64>> = match classes {
        2 => vec![vec![0.5, 0.5], vec![0.4, 0.6], vec![0.55, 0.45]],
        _ => vec![vec![0.3, 0.3, 0.4], vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]],
    };
    let weights = ClassWeightTable::from_priors(&priors).unwrap();
    let inputs: Vec<Tensor> = state.params.ids().map(|id| state.params.get(id).clone()).collect();
    grad_check_multi(
        |g, vars| {
            let mut bn = state.bn.clone();
            Ok(sequence_objective(&state, g, vars, &mut bn, &x, &labels, &weights, alpha)?.0)
        },
        &inputs,
        STEP,
        TOL,
        stride,
    )
    .unwrap()
}
