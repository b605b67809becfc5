//! Target-domain inference, the static and dynamic evaluation protocols, and
//! decision-boundary grids.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DomainSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{accuracy, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    EvalS,
    EvalD,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::EvalS => "eval-s",
            Protocol::EvalD => "eval-d",
        })
    }
}

/// Accuracies of one window: a model trained on domains `1..=t` scored on
/// `t+1..=t+K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t: usize,
    pub accs: Vec<(usize, f64)>,
}

impl Window {
    pub fn mean(&self) -> f64 {
        exact_sum(self.accs.iter().map(|a| a.1)) / self.accs.len() as f64
    }
}

/// Correctly rounded sum of the inputs (Shewchuk's partials), so averages of
/// accuracies do not depend on summation order.
pub fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round-half-even correction on the top partials
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        n -= 1;
        let x = hi;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Result of one protocol run. A single-seed report carries its windows; a
/// multi-seed report carries the per-seed reports, the mean of each metric
/// over seeds and its standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub k: usize,
    pub per_target_acc: Vec<(usize, f64)>,
    pub windows: Vec<Window>,
    pub ood_avg: f64,
    pub ood_wrt: f64,
    pub ood_avg_std: f64,
    pub ood_wrt_std: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalReport>,
}

impl EvalReport {
    /// Single-seed report from its windows: OODAvg is the mean over every
    /// (window, target) entry and OODWrt the worst window mean.
    pub fn from_windows(protocol: Protocol, k: usize, seed: u64, windows: Vec<Window>) -> Result<Self> {
        if windows.is_empty() || windows.iter().any(|w| w.accs.len() != k || k == 0) {
            return Err(Error::usage(format!("every window needs exactly K = {k} > 0 targets")));
        }
        let per_target_acc: Vec<(usize, f64)> = windows.iter().flat_map(|w| w.accs.iter().copied()).collect();
        let ood_avg = exact_sum(per_target_acc.iter().map(|a| a.1)) / per_target_acc.len() as f64;
        let ood_wrt = match protocol {
            Protocol::EvalS => per_target_acc.iter().map(|a| a.1).fold(f64::INFINITY, f64::min),
            Protocol::EvalD => windows.iter().map(Window::mean).fold(f64::INFINITY, f64::min),
        };
        Ok(Self {
            protocol,
            k,
            per_target_acc,
            windows,
            ood_avg,
            ood_wrt,
            ood_avg_std: 0.0,
            ood_wrt_std: 0.0,
            seeds: vec![seed],
            per_seed: Vec::new(),
        })
    }

    /// Combines single-seed reports of the same protocol and K.
    pub fn aggregate(reports: Vec<EvalReport>) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::usage("no reports to aggregate"))?;
        let (protocol, k) = (first.protocol, first.k);
        let targets: Vec<usize> = first.per_target_acc.iter().map(|a| a.0).collect();
        for r in &reports {
            if r.protocol != protocol || r.k != k || r.per_target_acc.iter().map(|a| a.0).ne(targets.iter().copied()) {
                return Err(Error::usage("reports differ in protocol, K or target layout"));
            }
        }
        let n = reports.len() as f64;
        let per_target_acc = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, reports.iter().map(|r| r.per_target_acc[i].1).sum::<f64>() / n))
            .collect();
        let (ood_avg, ood_avg_std) = mean_std(reports.iter().map(|r| r.ood_avg));
        let (ood_wrt, ood_wrt_std) = mean_std(reports.iter().map(|r| r.ood_wrt));
        Ok(Self {
            protocol,
            k,
            per_target_acc,
            windows: Vec::new(),
            ood_avg,
            ood_wrt,
            ood_avg_std,
            ood_wrt_std,
            seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            per_seed: reports,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Rows `seed,window,target,accuracy` for every single-seed report inside.
    pub fn write_accuracy_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "window", "target", "accuracy"])?;
        let singles: Vec<&EvalReport> = if self.per_seed.is_empty() { vec![self] } else { self.per_seed.iter().collect() };
        for r in singles {
            for win in &r.windows {
                for &(t, a) in &win.accs {
                    w.write_record([r.seeds[0].to_string(), win.t.to_string(), t.to_string(), a.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Population mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.collect();
    let n = xs.len() as f64;
    let mean = exact_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Predictions for a target domain `t_target > T_source`: `h_{t-1}(Enc(x))`,
/// rolling the hypernetwork forward as far as needed.
pub fn predict_target(model: &TrainedModel, t_target: usize, x: &Tensor) -> Result<Vec<usize>> {
    if t_target <= model.t_source {
        return Err(Error::usage(format!(
            "target domain {t_target} lies within the {} source domains",
            model.t_source
        )));
    }
    model.predict_domain(t_target, x)
}

/// Accuracies on the full datasets of targets `t+1..=t+k`, computing the
/// classifier roll-out once.
fn score_targets(model: &TrainedModel, seq: &DomainSequence, t: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    let hs = model.state.classifiers(t + k - 1)?;
    (t + 1..=t + k)
        .map(|target| {
            let ds = seq
                .domain(target)
                .ok_or_else(|| Error::param(format!("sequence has no domain {target}")))?;
            let pred = crate::training::decide(&model.state.logits(&hs[target - 2], ds.features())?);
            Ok((target, accuracy(&pred, ds.labels())))
        })
        .collect()
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 || k > available {
        return Err(Error::param(format!("K = {k} but {available} target domains are available")));
    }
    Ok(())
}

/// Trains once on domains `1..=T` (`T = seq.t_source()`) and scores `T+1..=T+K`.
pub fn eval_s<F>(seq: &DomainSequence, k: usize, seed: u64, mut train: F) -> Result<EvalReport>
where
    F: FnMut(&DomainSequence) -> Result<TrainedModel>,
{
    let t = seq.t_source();
    check_k(k, seq.len() - t)?;
    let model = train(&seq.prefix(t)?)?;
    let accs = score_targets(&model, seq, t, k)?;
    EvalReport::from_windows(Protocol::EvalS, k, seed, vec![Window { t, accs }])
}

/// Window start indices `T..=2T-K` of the dynamic protocol.
pub fn eval_d_windows(seq: &DomainSequence, k: usize) -> Result<Vec<usize>> {
    let t = seq.t_source();
    if 2 * t > seq.len() {
        return Err(Error::param(format!(
            "dynamic protocol needs 2T = {} domains, sequence has {}",
            2 * t,
            seq.len()
        )));
    }
    check_k(k, t)?;
    Ok((t..=2 * t - k).collect())
}

/// Retrains from scratch on domains `1..=t` for each window `t` and scores
/// `t+1..=t+K`.
pub fn eval_d<F>(seq: &DomainSequence, k: usize, seed: u64, mut train: F) -> Result<EvalReport>
where
    F: FnMut(&DomainSequence) -> Result<TrainedModel>,
{
    let windows = eval_d_windows(seq, k)?
        .into_iter()
        .map(|t| {
            log::info!("eval-d window t = {t}");
            let model = train(&seq.prefix(t)?)?;
            Ok(Window { t, accs: score_targets(&model, seq, t, k)? })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_windows(Protocol::EvalD, k, seed, windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { x_min: -2.0, x_max: 2.0, y_min: -2.0, y_max: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `pred[i][j]` is the label at `(xs[j], ys[i])`.
    pub pred: Vec<Vec<usize>>,
    pub domain: usize,
    pub model_id: String,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Predictions of the domain-`t` classifier on a `resolution x resolution` grid.
pub fn boundary_grid(model: &TrainedModel, t: usize, bounds: Bounds, resolution: usize, model_id: &str) -> Result<BoundaryGrid> {
    if model.state.config.input_dim != 2 {
        return Err(Error::usage(format!(
            "boundary grids need 2-D features, model takes {}",
            model.state.config.input_dim
        )));
    }
    if resolution == 0 || !(bounds.x_min < bounds.x_max && bounds.y_min < bounds.y_max) {
        return Err(Error::param("grid needs resolution > 0 and increasing bounds"));
    }
    let xs = linspace(bounds.x_min, bounds.x_max, resolution);
    let ys = linspace(bounds.y_min, bounds.y_max, resolution);
    let mut pts = Vec::with_capacity(2 * resolution * resolution);
    for &y in &ys {
        for &x in &xs {
            pts.extend_from_slice(&[x, y]);
        }
    }
    let flat = model.predict_domain(t, &Tensor::new(vec![resolution * resolution, 2], pts)?)?;
    let pred = flat.chunks(resolution).map(<[usize]>::to_vec).collect();
    Ok(BoundaryGrid { xs, ys, pred, domain: t, model_id: model_id.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySidecar {
    pub domain: usize,
    pub model_id: String,
    pub resolution: usize,
    pub bounds: Bounds,
}

impl BoundaryGrid {
    /// Fraction of grid points whose prediction equals `label(x, y)`.
    pub fn agreement(&self, label: impl Fn(f64, f64) -> usize) -> f64 {
        let mut hits = 0;
        for (i, &y) in self.ys.iter().enumerate() {
            for (j, &x) in self.xs.iter().enumerate() {
                hits += usize::from(self.pred[i][j] == label(x, y));
            }
        }
        hits as f64 / (self.xs.len() * self.ys.len()) as f64
    }

    /// Writes `x1,x2,pred` rows and a `<stem>.json` sidecar; returns the sidecar path.
    pub fn write(&self, csv_path: &Path) -> Result<PathBuf> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        writeln!(w, "x1,x2,pred")?;
        for (i, &y) in self.ys.iter().enumerate() {
            for (j, &x) in self.xs.iter().enumerate() {
                writeln!(w, "{x},{y},{}", self.pred[i][j])?;
            }
        }
        w.flush()?;
        let side = BoundarySidecar {
            domain: self.domain,
            model_id: self.model_id.clone(),
            resolution: self.xs.len(),
            bounds: Bounds {
                x_min: self.xs[0],
                x_max: *self.xs.last().expect("nonempty"),
                y_min: self.ys[0],
                y_max: *self.ys.last().expect("nonempty"),
            },
        };
        let side_path = csv_path.with_extension("json");
        std::fs::write(&side_path, serde_json::to_string_pretty(&side)?)?;
        Ok(side_path)
    }
}
