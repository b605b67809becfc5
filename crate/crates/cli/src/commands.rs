use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};
use std::thread;
use std::time::Duration;

use airl_core::data::{gen_circle, gen_circle_hard, load_rmnist_lite, write_sequence, CircleParams, DomainSequence, RmnistOptions};
use airl_core::eval::{boundary_grid, eval_d, eval_d_windows, eval_s, predict_target, Bounds, EvalReport, Protocol};
use airl_core::model::{AirlConfig, AirlState, ClassifierVec};
use airl_core::tensor::{read_checkpoint, write_checkpoint};
use airl_core::theory::run_check;
use airl_core::training::{accuracy, train as fit, Method, TrainLog, TrainedModel};
use airl_core::Error;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{file_digest, ConfigFile, DataSpec, EvalSpec, RunConfig, RunKind, HASH_LEN};
use crate::{Dataset, EvalArgs, ExportArgs, GenerateArgs, RunArgs, TrainArgs, VerifyArgs, RUNS_ENV};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";
pub const ERROR_FILE: &str = "error.txt";

/// Exit status 2 for usage and parameter errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<Error>() {
        Some(Error::Usage(_) | Error::Parameter(_)) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

/// Everything besides the weights needed to rebuild a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub model: AirlConfig,
    pub t_source: usize,
    pub classifiers: Vec<ClassifierVec>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    /// Accuracy on every domain after the sources.
    pub target_acc: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ood_avg: f64,
    pub ood_wrt: f64,
    pub window_means: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: Vec<String>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub methods: Vec<MethodSummary>,
}

pub fn generate(a: &GenerateArgs) -> anyhow::Result<ExitCode> {
    let params = CircleParams {
        n_domains: a.domains,
        n_per_domain: a.per_domain,
        radius: a.radius,
        noise_sigma: a.sigma,
        seed: a.seed,
    };
    let (name, seq) = match a.dataset {
        Dataset::Circle => ("circle", gen_circle(&params)?),
        Dataset::CircleHard => ("circle-hard", gen_circle_hard(&params)?),
        Dataset::Rmnist => {
            let dir = a.mnist_dir.as_deref().ok_or_else(|| usage("rmnist needs --mnist-dir"))?;
            let opts = RmnistOptions {
                n_domains: a.domains,
                step_deg: a.step_deg,
                n_per_domain: a.per_domain,
                seed: a.seed,
                ..RmnistOptions::default()
            };
            ("rmnist", load_rmnist_lite(dir, &opts)?)
        }
    };
    fs::create_dir_all(&a.out)?;
    let path = a.out.join(format!("{name}-s{}.csv", a.seed));
    write_sequence(&seq, &path)?;
    log::info!("{} domains, {} rows", seq.len(), seq.total_instances());
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_root(args: &RunArgs) -> PathBuf {
    args.runs
        .clone()
        .or_else(|| env::var_os(RUNS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn data_spec(args: &RunArgs, seed: u64) -> anyhow::Result<DataSpec> {
    let circle = || CircleParams {
        n_domains: args.domains.unwrap_or(30),
        n_per_domain: args.per_domain.unwrap_or(1000),
        seed,
        ..CircleParams::default()
    };
    Ok(match args.data.as_str() {
        "circle" => DataSpec::Circle { params: circle() },
        "circle-hard" => DataSpec::CircleHard { params: circle() },
        s if s.starts_with("rmnist:") => DataSpec::Rmnist {
            dir: PathBuf::from(&s["rmnist:".len()..]),
            options: RmnistOptions {
                n_domains: args.domains.unwrap_or(30),
                n_per_domain: args.per_domain.unwrap_or(1000),
                seed,
                ..RmnistOptions::default()
            },
        },
        s => {
            let path = PathBuf::from(s);
            if !path.is_file() {
                return Err(usage(format!("--data {s:?} is neither a known dataset nor a file")));
            }
            if args.domains.is_some() || args.per_domain.is_some() {
                return Err(usage("--domains and --per-domain do not apply to data files"));
            }
            let path = path.canonicalize()?;
            let sha256 = file_digest(&path)?;
            DataSpec::File { path, sha256 }
        }
    })
}

/// The resolved configuration of one (method, seed) task and its data.
fn resolve(args: &RunArgs, kind: RunKind, method: Method, seed: u64, eval: Option<EvalSpec>) -> anyhow::Result<(RunConfig, DomainSequence)> {
    let file = match &args.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    let data = data_spec(args, seed)?;
    let mut cfg = RunConfig {
        kind,
        method,
        seed,
        data,
        sources: args.sources,
        model: file.model.unwrap_or_default(),
        train: file.train.unwrap_or_default(),
        eval,
    };
    let seq = cfg.load_data()?;
    cfg.model.input_dim = seq.feature_dim();
    cfg.model.n_classes = seq.n_classes();
    cfg.model.attention_softmax |= args.softmax;
    let t = &mut cfg.train;
    t.seed = seed;
    t.alpha = args.alpha.unwrap_or(t.alpha);
    t.lr = args.lr.unwrap_or(t.lr);
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_per_domain = args.batch.unwrap_or(t.batch_per_domain);
    t.steps_per_epoch = args.steps_per_epoch.or(t.steps_per_epoch);
    t.early_stop_patience = args.patience.unwrap_or(t.early_stop_patience);
    cfg.train.validate()?;
    cfg.model.validate()?;
    if let Some(spec) = eval {
        match spec.protocol {
            Protocol::EvalD => drop(eval_d_windows(&seq, spec.k)?),
            Protocol::EvalS => {
                let available = seq.len() - seq.t_source();
                if spec.k == 0 || spec.k > available {
                    return Err(Error::Parameter(format!("K = {} but {available} target domains are available", spec.k)).into());
                }
            }
        }
    }
    Ok((cfg, seq))
}

fn check_free(dir: &Path, overwrite: bool) -> anyhow::Result<()> {
    if dir.exists() && !overwrite {
        return Err(usage(format!("{} exists; pass --overwrite to replace it", dir.display())));
    }
    Ok(())
}

/// Creates the run directory with its `config.json`.
fn open_run(root: &Path, cfg: &RunConfig, overwrite: bool) -> anyhow::Result<PathBuf> {
    let dir = root.join(cfg.dir_name());
    check_free(&dir, overwrite)?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(dir)
}

/// Runs `body` in `dir`, leaving `error.txt` behind when it fails.
fn guarded(dir: &Path, body: impl FnOnce() -> anyhow::Result<()>) -> anyhow::Result<()> {
    body().map_err(|e| {
        if let Err(io) = fs::write(dir.join(ERROR_FILE), format!("{e:#}\n")) {
            log::error!("could not write diagnostics: {io}");
        }
        e.context(format!("run {} failed", dir.display()))
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn train_run(cfg: &RunConfig, seq: &DomainSequence, dir: &Path) -> anyhow::Result<()> {
    let model = fit(cfg.method, seq, &cfg.model, &cfg.train)?;
    model.log.write_jsonl(&dir.join(LOG_FILE))?;
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &model.state.to_checkpoint())?;
    let meta = ModelMeta {
        model: model.state.config.clone(),
        t_source: model.t_source,
        classifiers: model.classifiers.clone(),
        best_epoch: model.best_epoch,
        best_val_acc: model.best_val_acc,
        epochs_run: model.epochs_run,
    };
    write_json(&dir.join(MODEL_FILE), &meta)?;
    let target_acc = (model.t_source + 1..=seq.len())
        .map(|t| {
            let ds = seq.domain(t).expect("domain in range");
            Ok((t, accuracy(&predict_target(&model, t, ds.features())?, ds.labels())))
        })
        .collect::<airl_core::Result<Vec<_>>>()?;
    let metrics = TrainMetrics {
        best_epoch: model.best_epoch,
        best_val_acc: model.best_val_acc,
        epochs_run: model.epochs_run,
        final_loss: model.log.step_totals().last().copied(),
        target_acc,
    };
    write_json(&dir.join(METRICS_FILE), &metrics)
}

fn eval_run(cfg: &RunConfig, seq: &DomainSequence, dir: &Path) -> anyhow::Result<EvalReport> {
    let spec = cfg.eval.context("eval run without an eval spec")?;
    let mut logs: Vec<(usize, TrainLog)> = Vec::new();
    let trainer = |prefix: &DomainSequence| {
        let m = fit(cfg.method, prefix, &cfg.model, &cfg.train)?;
        logs.push((prefix.len(), m.log.clone()));
        Ok(m)
    };
    let report = match spec.protocol {
        Protocol::EvalS => eval_s(seq, spec.k, cfg.seed, trainer)?,
        Protocol::EvalD => eval_d(seq, spec.k, cfg.seed, trainer)?,
    };
    let log_dir = dir.join("logs");
    fs::create_dir_all(&log_dir)?;
    for (t, log) in &logs {
        log.write_jsonl(&log_dir.join(format!("window-{t}.jsonl")))?;
    }
    report.write_json(&dir.join(REPORT_FILE))?;
    report.write_accuracy_csv(&dir.join("accuracy.csv"))?;
    let metrics = EvalMetrics {
        ood_avg: report.ood_avg,
        ood_wrt: report.ood_wrt,
        window_means: report.windows.iter().map(|w| (w.t, w.mean())).collect(),
    };
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(report)
}

/// Arguments of this process without the given options, for worker processes.
fn worker_args(drop: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    let mut args = env::args().skip(1);
    while let Some(a) = args.next() {
        if drop.contains(&a.as_str()) {
            args.next();
        } else if !drop.iter().any(|d| a.starts_with(&format!("{d}="))) {
            out.push(a);
        }
    }
    out
}

/// Runs one worker process per argument list, at most `jobs` at a time.
fn fan_out(tasks: Vec<(String, Vec<String>)>, jobs: usize) -> anyhow::Result<()> {
    let exe = env::current_exe()?;
    let mut pending = tasks.into_iter();
    let mut running: Vec<(String, Child)> = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < jobs {
            let Some((name, args)) = pending.next() else { break };
            log::info!("starting worker {name}");
            running.push((name, Command::new(&exe).args(&args).spawn()?));
        }
        if running.is_empty() {
            break;
        }
        let mut i = 0;
        while i < running.len() {
            match running[i].1.try_wait()? {
                Some(status) => {
                    let (name, _) = running.swap_remove(i);
                    if !status.success() {
                        failed.push(format!("{name} ({status})"));
                    }
                }
                None => i += 1,
            }
        }
        thread::sleep(Duration::from_millis(50));
    }
    if !failed.is_empty() {
        bail!("worker runs failed: {}", failed.join(", "));
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> anyhow::Result<ExitCode> {
    let root = run_root(&a.run);
    let seeds = &a.run.seed.0;
    if a.run.jobs == 0 {
        return Err(usage("--jobs must be positive"));
    }
    if a.run.jobs > 1 && seeds.len() > 1 {
        let mut tasks = Vec::new();
        for &seed in seeds {
            let (cfg, _) = resolve(&a.run, RunKind::Train, a.method, seed, None)?;
            check_free(&root.join(cfg.dir_name()), a.run.overwrite)?;
            let mut args = worker_args(&["--seed", "--jobs"]);
            args.extend(["--seed".into(), seed.to_string()]);
            tasks.push((cfg.dir_name(), args));
        }
        let names: Vec<String> = tasks.iter().map(|t| t.0.clone()).collect();
        fan_out(tasks, a.run.jobs)?;
        names.iter().for_each(|n| println!("{}", root.join(n).display()));
        return Ok(ExitCode::SUCCESS);
    }
    for &seed in seeds {
        let (cfg, seq) = resolve(&a.run, RunKind::Train, a.method, seed, None)?;
        let dir = open_run(&root, &cfg, a.run.overwrite)?;
        log::info!("training {} seed {seed} into {}", cfg.method, dir.display());
        guarded(&dir, || train_run(&cfg, &seq, &dir))?;
        println!("{}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// `mean (std)` in percent, as in result tables.
fn pct(mean: f64, std: f64) -> String {
    format!("{:.2} ({:.2})", 100.0 * mean, 100.0 * std)
}

fn write_summary(dir: &Path, summary: &Summary) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("summary.json"), summary)?;
    let mut w = String::new();
    let label = &summary.dataset;
    w.push_str(&format!("method,{label} OODAvg,{label} OODWrt\n"));
    for m in &summary.methods {
        let r = &m.report;
        w.push_str(&format!("{},{},{}\n", m.method, pct(r.ood_avg, r.ood_avg_std), pct(r.ood_wrt, r.ood_wrt_std)));
    }
    fs::write(dir.join("summary.csv"), w)?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let root = run_root(&a.run);
    if a.run.jobs == 0 {
        return Err(usage("--jobs must be positive"));
    }
    let spec = EvalSpec { protocol: a.protocol.into(), k: a.k };
    let methods = &a.method.0;
    let seeds = &a.run.seed.0;
    let mut plan: Vec<(Method, RunConfig)> = Vec::new();
    for &m in methods {
        for &seed in seeds {
            plan.push((m, resolve(&a.run, RunKind::Eval, m, seed, Some(spec))?.0));
        }
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    if a.run.jobs > 1 && plan.len() > 1 {
        let mut tasks = Vec::new();
        for (m, cfg) in &plan {
            check_free(&root.join(cfg.dir_name()), a.run.overwrite)?;
            let mut args = worker_args(&["--seed", "--jobs", "--method", "--out"]);
            args.extend(["--seed".into(), cfg.seed.to_string(), "--method".into(), m.name().into(), "--no-summary".into()]);
            tasks.push((cfg.dir_name(), args));
        }
        fan_out(tasks, a.run.jobs)?;
        for (_, cfg) in &plan {
            reports.push(EvalReport::read_json(&root.join(cfg.dir_name()).join(REPORT_FILE))?);
        }
    } else {
        for (_, cfg) in &plan {
            let seq = cfg.load_data()?;
            let dir = open_run(&root, cfg, a.run.overwrite)?;
            log::info!("{} {} seed {} into {}", spec.protocol, cfg.method, cfg.seed, dir.display());
            let mut report = None;
            guarded(&dir, || {
                report = Some(eval_run(cfg, &seq, &dir)?);
                Ok(())
            })?;
            reports.push(report.expect("set on success"));
            println!("{}", dir.display());
        }
    }
    if a.no_summary {
        return Ok(ExitCode::SUCCESS);
    }
    let mut methods_out = Vec::new();
    let mut reports = reports.into_iter();
    for &m in methods {
        let per_seed: Vec<EvalReport> = reports.by_ref().take(seeds.len()).collect();
        let runs = plan.iter().filter(|(pm, _)| *pm == m).map(|(_, c)| c.dir_name()).collect();
        methods_out.push(MethodSummary { method: m, runs, report: EvalReport::aggregate(per_seed)? });
    }
    let summary = Summary { dataset: plan[0].1.data.label(), methods: methods_out };
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            let names: Vec<String> = plan.iter().map(|(_, c)| c.dir_name()).collect();
            let digest = hex::encode(Sha256::digest(names.join("\n").as_bytes()));
            root.join(format!("summary-{}-{}", spec.protocol, &digest[..HASH_LEN]))
        }
    };
    write_summary(&out, &summary)?;
    println!("{}", fs::read_to_string(out.join("summary.csv"))?.trim_end());
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn verify_theory(a: &VerifyArgs) -> anyhow::Result<ExitCode> {
    if a.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let reports = a
        .check
        .checks()
        .into_iter()
        .map(|c| run_check(c, a.trials, a.seed))
        .collect::<airl_core::Result<Vec<_>>>()?;
    for r in &reports {
        eprintln!(
            "{}: {} trials, {} violations, min slack {:.3e}, max slack {:.3e}",
            r.check, r.trials, r.violations, r.min_slack, r.max_slack
        );
    }
    let json = serde_json::to_string_pretty(&reports)?;
    if let Some(out) = &a.out {
        fs::write(out, json.clone() + "\n")?;
    }
    println!("{json}");
    let clean = reports.iter().all(|r| r.violations == 0);
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Rebuilds the model saved by a `train` run.
pub fn load_trained(dir: &Path) -> anyhow::Result<(RunConfig, TrainedModel)> {
    let cfg = RunConfig::read(&dir.join(CONFIG_FILE)).with_context(|| format!("reading {}", dir.display()))?;
    if cfg.kind != RunKind::Train {
        return Err(usage(format!("{} is not a train run", dir.display())));
    }
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)?;
    let state = AirlState::from_checkpoint(meta.model.clone(), &read_checkpoint(&dir.join(CHECKPOINT_FILE))?)?;
    let model = TrainedModel {
        method: cfg.method,
        state,
        classifiers: meta.classifiers,
        t_source: meta.t_source,
        train_config: cfg.train.clone(),
        best_epoch: meta.best_epoch,
        best_val_acc: meta.best_val_acc,
        epochs_run: meta.epochs_run,
        log: TrainLog::default(),
    };
    Ok((cfg, model))
}

pub fn export_boundary(a: &ExportArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_trained(&a.run)?;
    let id = a.run.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let grid = boundary_grid(&model, a.target, Bounds::default(), a.resolution, &id)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let side = grid.write(&a.out)?;
    println!("{}", a.out.display());
    println!("{}", side.display());
    Ok(ExitCode::SUCCESS)
}
