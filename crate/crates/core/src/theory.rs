//! Exact divergences on finite spaces and randomized checks of the error
//! transfer bound, the label-reweighting decomposition and Pinsker's inequality.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

const SUM_TOL: f64 = 1e-12;
/// Inequality checks count a trial as violated only below this negative slack.
pub const SLACK_TOL: f64 = 1e-12;
pub const PROP1_TOL: f64 = 1e-10;
pub const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDist {
    probs: Vec<f64>,
}

impl FiniteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("distribution needs a nonempty support"));
        }
        if probs.iter().any(|&p| p.is_nan() || p < 0.0 || !p.is_finite()) {
            return Err(Error::param("probabilities must be finite and nonnegative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::param(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Expectation of `f` indexed by support point.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }
}

/// `|X| x |Y|` joint probability table, row-major in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteJoint {
    nx: usize,
    ny: usize,
    p: Vec<f64>,
}

impl FiniteJoint {
    pub fn new(nx: usize, ny: usize, p: Vec<f64>) -> Result<Self> {
        if nx * ny != p.len() {
            return Err(Error::dim("FiniteJoint::new", format!("{} entries for a {nx}x{ny} grid", p.len())));
        }
        FiniteDist::new(p.clone())?;
        Ok(Self { nx, ny, p })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.ny + y]
    }

    pub fn flatten(&self) -> FiniteDist {
        FiniteDist { probs: self.p.clone() }
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.ny).map(|y| (0..self.nx).map(|x| self.at(x, y)).sum()).collect()
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        (0..self.nx).map(|x| (0..self.ny).map(|y| self.at(x, y)).sum()).collect()
    }

    /// `P(X | Y = y)`; errors when `P(Y = y) = 0`.
    pub fn conditional_x(&self, y: usize) -> Result<FiniteDist> {
        let py = self.marginal_y()[y];
        if py <= 0.0 {
            return Err(Error::param(format!("label {y} has zero probability")));
        }
        Ok(FiniteDist {
            probs: (0..self.nx).map(|x| self.at(x, y) / py).collect(),
        })
    }

    /// Importance weighting `w_y P(x, y)`, renormalized by its (ideally unit) mass.
    pub fn reweight(&self, w: &[f64]) -> Result<Self> {
        if w.len() != self.ny {
            return Err(Error::dim("reweight", format!("{} weights for {} labels", w.len(), self.ny)));
        }
        let mut p: Vec<f64> = (0..self.p.len()).map(|i| self.p[i] * w[i % self.ny]).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        Ok(Self { nx: self.nx, ny: self.ny, p })
    }

    /// Push-forward through `m: X -> X` acting on the feature only.
    pub fn push_forward(&self, m: &[usize]) -> Result<Self> {
        if m.len() != self.nx || m.iter().any(|&t| t >= self.nx) {
            return Err(Error::dim("push_forward", format!("map of length {} on {} points", m.len(), self.nx)));
        }
        let mut p = vec![0.0; self.p.len()];
        for x in 0..self.nx {
            for y in 0..self.ny {
                p[m[x] * self.ny + y] += self.at(x, y);
            }
        }
        Ok(Self { nx: self.nx, ny: self.ny, p })
    }
}

/// KL divergence with absolute-continuity violations reported as `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kl {
    pub value: f64,
    pub infinite: bool,
}

fn same_support(op: &'static str, p: &FiniteDist, q: &FiniteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::dim(op, format!("supports of size {} and {}", p.len(), q.len())));
    }
    Ok(())
}

/// Natural-log KL divergence `sum p ln(p/q)`.
pub fn kl(p: &FiniteDist, q: &FiniteDist) -> Result<Kl> {
    same_support("kl", p, q)?;
    let mut s = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(Kl { value: f64::INFINITY, infinite: true });
            }
            s += a * (a / b).ln();
        }
    }
    Ok(Kl { value: s.max(0.0), infinite: false })
}

/// Jensen-Shannon divergence through the midpoint mixture; at most `ln 2`.
pub fn js(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    same_support("js", p, q)?;
    let half = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            a * (a / m).ln()
        } else {
            0.0
        }
    };
    let s: f64 = p.probs.iter().zip(&q.probs).map(|(&a, &b)| half(a, b) + half(b, a)).sum();
    Ok((0.5 * s).clamp(0.0, std::f64::consts::LN_2))
}

pub fn tv(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    same_support("tv", p, q)?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryCheck {
    Lemma1,
    Prop1,
    Pinsker,
}

impl TheoryCheck {
    pub const ALL: [TheoryCheck; 3] = [TheoryCheck::Lemma1, TheoryCheck::Prop1, TheoryCheck::Pinsker];
}

impl fmt::Display for TheoryCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TheoryCheck::Lemma1 => "lemma1",
            TheoryCheck::Prop1 => "prop1",
            TheoryCheck::Pinsker => "pinsker",
        })
    }
}

impl FromStr for TheoryCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::usage(format!("unknown check {s:?}")))
    }
}

/// Grid size limits for random trials: `|X|` in `2..=max_x`, `|Y|` in `1..=max_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub max_x: usize,
    pub max_y: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self { max_x: 6, max_y: 3 }
    }
}

/// Outcome of one randomized check. For the inequality checks `slack` is
/// `rhs - lhs`; for the decomposition it is the negated absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: TheoryCheck,
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    pub min_slack: f64,
    pub max_slack: f64,
    /// Largest `|lhs - rhs|` (decomposition) and label-marginal error.
    pub max_error: f64,
    pub max_marginal_error: f64,
    pub witnesses: Vec<serde_json::Value>,
}

impl CheckReport {
    fn new(check: TheoryCheck, trials: usize, seed: u64) -> Self {
        Self {
            check,
            trials,
            seed,
            violations: 0,
            min_slack: f64::INFINITY,
            max_slack: f64::NEG_INFINITY,
            max_error: 0.0,
            max_marginal_error: 0.0,
            witnesses: Vec::new(),
        }
    }

    fn record(&mut self, slack: f64, violated: bool, witness: impl FnOnce() -> serde_json::Value) {
        self.min_slack = self.min_slack.min(slack);
        self.max_slack = self.max_slack.max(slack);
        if violated {
            self.violations += 1;
            if self.witnesses.len() < 5 {
                self.witnesses.push(witness());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Symmetric Dirichlet(1) draw; with probability 1/4 some entries are zeroed
/// so that support mismatches are exercised too.
fn draw_dist(rng: &mut Rng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    if m > 1 && rng.random_bool(0.25) {
        let keep = rng.random_range(0..m);
        for (i, x) in v.iter_mut().enumerate() {
            if i != keep && rng.random_bool(0.3) {
                *x = 0.0;
            }
        }
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn draw_sizes(rng: &mut Rng, sizes: Sizes) -> (usize, usize) {
    (rng.random_range(2..=sizes.max_x.max(2)), rng.random_range(1..=sizes.max_y.max(1)))
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::usage("need at least one trial"));
    }
    Ok(())
}

/// `E_P[L] <= E_Q[L] + sqrt(2) C sqrt(JS(P, Q))` for random joints and loss tables in `[0, C]`.
pub fn check_lemma1(trials: usize, sizes: Sizes, c: f64, seed: u64) -> Result<CheckReport> {
    check_trials(trials)?;
    if c.is_nan() || c <= 0.0 {
        return Err(Error::param("loss bound C must be positive"));
    }
    let mut rng = rng::stream(seed, streams::THEORY);
    let mut rep = CheckReport::new(TheoryCheck::Lemma1, trials, seed);
    for _ in 0..trials {
        let (nx, ny) = draw_sizes(&mut rng, sizes);
        let p = FiniteDist::new(draw_dist(&mut rng, nx * ny))?;
        let q = FiniteDist::new(draw_dist(&mut rng, nx * ny))?;
        let loss: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.0..=c)).collect();
        let lhs = p.expect(&loss);
        let rhs = q.expect(&loss) + 2f64.sqrt() * c * js(&p, &q)?.sqrt();
        let slack = rhs - lhs;
        rep.record(slack, slack < -SLACK_TOL, || serde_json::json!({ "p": p, "q": q, "loss": loss, "lhs": lhs, "rhs": rhs }));
    }
    Ok(rep)
}

/// `TV(P, Q) <= sqrt(KL(P || Q) / 2)`; infinite KL always satisfies it.
pub fn check_pinsker(trials: usize, sizes: Sizes, seed: u64) -> Result<CheckReport> {
    check_trials(trials)?;
    let mut rng = rng::stream(seed, streams::THEORY);
    let mut rep = CheckReport::new(TheoryCheck::Pinsker, trials, seed);
    for _ in 0..trials {
        let m = rng.random_range(2..=sizes.max_x.max(2) * sizes.max_y.max(1));
        let p = FiniteDist::new(draw_dist(&mut rng, m))?;
        let q = FiniteDist::new(draw_dist(&mut rng, m))?;
        let d = kl(&p, &q)?;
        let lhs = tv(&p, &q)?;
        let rhs = (d.value / 2.0).sqrt();
        let slack = if d.infinite { f64::INFINITY } else { rhs - lhs };
        rep.record(slack, slack < -SLACK_TOL, || serde_json::json!({ "p": p, "q": q, "tv": lhs, "kl": d.value }));
    }
    if rep.max_slack == f64::INFINITY {
        // keep the report serializable as JSON
        rep.max_slack = f64::MAX;
    }
    Ok(rep)
}

/// One decomposition trial: returns `(|lhs - rhs|, label-marginal error)`.
pub fn prop1_gap(prev: &FiniteJoint, cur: &FiniteJoint, m: &[usize]) -> Result<(f64, f64)> {
    let (p_prev, p_cur) = (prev.marginal_y(), cur.marginal_y());
    if p_prev.iter().chain(&p_cur).any(|&v| v <= 0.0) {
        return Err(Error::param("every label needs positive probability in both domains"));
    }
    let w: Vec<f64> = p_cur.iter().zip(&p_prev).map(|(a, b)| a / b).collect();
    let weighted = prev.reweight(&w)?;
    let marginal_err = weighted
        .marginal_y()
        .iter()
        .zip(&p_cur)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pushed = weighted.push_forward(m)?;
    let lhs = js(&cur.flatten(), &pushed.flatten())?;
    let mut rhs = 0.0;
    for (y, &py) in p_cur.iter().enumerate() {
        rhs += py * js(&cur.conditional_x(y)?, &pushed.conditional_x(y)?)?;
    }
    Ok(((lhs - rhs).abs(), marginal_err))
}

/// Joint JS after reweighting and a random label-preserving push-forward
/// equals the label-averaged conditional JS.
pub fn check_prop1(trials: usize, sizes: Sizes, seed: u64) -> Result<CheckReport> {
    check_trials(trials)?;
    let mut rng = rng::stream(seed, streams::THEORY);
    let mut rep = CheckReport::new(TheoryCheck::Prop1, trials, seed);
    for _ in 0..trials {
        let (prev, cur, m) = loop {
            let (nx, ny) = draw_sizes(&mut rng, sizes);
            let prev = FiniteJoint::new(nx, ny, draw_dist(&mut rng, nx * ny))?;
            let cur = FiniteJoint::new(nx, ny, draw_dist(&mut rng, nx * ny))?;
            let m: Vec<usize> = (0..nx).map(|_| rng.random_range(0..nx)).collect();
            if prev.marginal_y().iter().chain(&cur.marginal_y()).all(|&v| v > 0.0) {
                break (prev, cur, m);
            }
        };
        let (err, marg) = prop1_gap(&prev, &cur, &m)?;
        rep.max_error = rep.max_error.max(err);
        rep.max_marginal_error = rep.max_marginal_error.max(marg);
        rep.record(-err, err >= PROP1_TOL || marg >= MARGINAL_TOL, || {
            serde_json::json!({ "prev": prev, "cur": cur, "map": m, "error": err, "marginal_error": marg })
        });
    }
    Ok(rep)
}

pub fn run_check(check: TheoryCheck, trials: usize, seed: u64) -> Result<CheckReport> {
    let sizes = Sizes::default();
    match check {
        TheoryCheck::Lemma1 => check_lemma1(trials, sizes, 1.0, seed),
        TheoryCheck::Prop1 => check_prop1(trials, sizes, seed),
        TheoryCheck::Pinsker => check_pinsker(trials, sizes, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> FiniteDist {
        FiniteDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn js_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(js(&p, &p).unwrap(), 0.0);
        let a = d(&[1.0, 0.0]);
        let b = d(&[0.0, 1.0]);
        assert!((js(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // four-term oracle: 0.5[0.5 ln(0.5/0.625) + 0.5 ln(0.5/0.375)] + 0.5[0.25 ln(0.25/0.375) + 0.75 ln(0.75/0.625)]
        let oracle = 0.5 * (0.5 * (0.5f64 / 0.625).ln() + 0.5 * (0.5f64 / 0.375).ln())
            + 0.5 * (0.25 * (0.25f64 / 0.375).ln() + 0.75 * (0.75f64 / 0.625).ln());
        let got = js(&FiniteDist::bernoulli(0.5).unwrap(), &FiniteDist::bernoulli(0.75).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.0338).abs() < 5e-5);
    }

    #[test]
    fn kl_flags_support_violation() {
        let r = kl(&FiniteDist::bernoulli(0.0).unwrap(), &FiniteDist::bernoulli(1.0).unwrap()).unwrap();
        assert!(r.infinite && r.value.is_infinite());
        let p = d(&[0.4, 0.6]);
        assert_eq!(kl(&p, &p).unwrap(), Kl { value: 0.0, infinite: false });
        assert_eq!(tv(&FiniteDist::bernoulli(0.0).unwrap(), &FiniteDist::bernoulli(1.0).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_supports_are_dimension_errors() {
        assert!(matches!(js(&d(&[1.0]), &d(&[0.5, 0.5])), Err(Error::Dimension { .. })));
        assert!(FiniteDist::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteDist::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn lemma1_disjoint_worst_case() {
        let p = d(&[1.0, 0.0]);
        let q = d(&[0.0, 1.0]);
        let loss = [1.0, 0.0];
        let gap = p.expect(&loss) - q.expect(&loss);
        let bound = 2f64.sqrt() * js(&p, &q).unwrap().sqrt();
        assert_eq!(gap, 1.0);
        assert!((bound - 1.1774).abs() < 1e-4 && gap <= bound);
    }

    #[test]
    fn prop1_identity_map_same_domain_is_zero() {
        let j = FiniteJoint::new(3, 2, vec![0.1, 0.2, 0.05, 0.15, 0.3, 0.2]).unwrap();
        let (err, marg) = prop1_gap(&j, &j, &[0, 1, 2]).unwrap();
        assert_eq!(err, 0.0);
        assert!(marg < 1e-15);
        let pushed = j.push_forward(&[0, 1, 2]).unwrap();
        assert_eq!(js(&j.flatten(), &pushed.flatten()).unwrap(), 0.0);
    }

    #[test]
    fn zero_trials_is_usage_error() {
        for c in TheoryCheck::ALL {
            assert!(matches!(run_check(c, 0, 1), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn check_names_round_trip() {
        for c in TheoryCheck::ALL {
            assert_eq!(c.to_string().parse::<TheoryCheck>().unwrap(), c);
        }
        assert!("lemma2".parse::<TheoryCheck>().is_err());
    }
}
