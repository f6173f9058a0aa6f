//! The two benchmark protocols on image-restoration instances, and CSV
//! export of their results.
//!
//! Both methods share `λ = 1/(2L)` and `x¹ = 0`. IPGM uses `ρ_k = Cε_k²`
//! with `ε₁ = r₁ = √(100/𝒞)` and `μ = θ = 1/2`; iFB uses `ω_k = 1/k⁴`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipgm::{compute_constants, run_ifb, run_ipgm, ErrorSchedule, IfbConfig, IpgmConfig};
use crate::linalg::Vector;
use crate::problems::{generate_instance, table1, ImageRestorationInstance};
use crate::weakly_convex::CompositeProblem;
use crate::zero_finder::{Budget, RadiusSchedule, Trace};

pub const RESULT_HEADER: [&str; 9] = ["tn", "method", "iter", "fval", "gnorm", "error", "eps", "time_s", "stop_reason"];
pub const TRACE_HEADER: [&str; 9] = ["k", "fval", "gnorm", "eps", "r", "is_null", "subsolver_iters", "gap", "time_s"];

fn default_max_iter() -> usize {
    2_000_000
}
fn default_time_limit() -> f64 {
    4000.0
}
fn default_tol_gnorm() -> f64 {
    0.1
}
fn default_ifb_budget() -> usize {
    2000
}
fn default_inner_budget() -> usize {
    1_000_000
}

/// One experiment run. `tn` selects a row of [`TABLE1`](crate::problems::TABLE1); explicit `m`, `n`,
/// `gamma` override it (all three must then be given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: u8,
    #[serde(default)]
    pub tn: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_time_limit")]
    pub time_limit_s: f64,
    #[serde(default = "default_tol_gnorm")]
    pub tol_gnorm: f64,
    #[serde(default = "default_ifb_budget")]
    pub ifb_iter_budget: usize,
    /// Inner iteration cap of the dual subsolver.
    #[serde(default = "default_inner_budget")]
    pub inner_budget: usize,
}

impl ExperimentConfig {
    pub fn new(experiment: u8, tn: usize, seed: u64) -> Self {
        Self {
            experiment,
            tn: Some(tn),
            m: None,
            n: None,
            gamma: None,
            seed,
            max_iter: default_max_iter(),
            time_limit_s: default_time_limit(),
            tol_gnorm: default_tol_gnorm(),
            ifb_iter_budget: default_ifb_budget(),
            inner_budget: default_inner_budget(),
        }
    }

    /// Label written to the `tn` column (0 for ad-hoc shapes).
    pub fn label(&self) -> usize {
        self.tn.unwrap_or(0)
    }

    /// `(m, n, γ)` of the instance.
    pub fn shape(&self) -> Result<(usize, usize, f64)> {
        match (self.m, self.n, self.gamma) {
            (Some(m), Some(n), Some(gamma)) => Ok((m, n, gamma)),
            (None, None, None) => {
                let tn = self.tn.ok_or_else(|| Error::config("either tn or (m, n, gamma) is required"))?;
                table1(tn).ok_or_else(|| Error::config(format!("tn must lie in 1..=16, got {tn}")))
            }
            _ => Err(Error::config("m, n and gamma must be given together")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.experiment, 1 | 2) {
            return Err(Error::config(format!("experiment must be 1 or 2, got {}", self.experiment)));
        }
        let (m, n, gamma) = self.shape()?;
        if m == 0 || n == 0 {
            return Err(Error::config("m and n must be positive"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be nonnegative, got {gamma}")));
        }
        if !(self.time_limit_s > 0.0) {
            return Err(Error::config("time_limit_s must be positive"));
        }
        if !(self.tol_gnorm >= 0.0) {
            return Err(Error::config("tol_gnorm must be nonnegative"));
        }
        if self.max_iter == 0 || self.ifb_iter_budget == 0 || self.inner_budget == 0 {
            return Err(Error::config("iteration budgets must be positive"));
        }
        Ok(())
    }

    fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit_s)
    }
}

/// Method constants of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedConstants {
    pub lambda: f64,
    pub l: f64,
    pub cscript: f64,
    pub eps1: f64,
}

impl ResolvedConstants {
    pub fn for_instance(inst: &ImageRestorationInstance) -> Result<Self> {
        let l = inst.loss.lipschitz_l();
        let lambda = 1.0 / (2.0 * l);
        let consts = compute_constants(lambda, l, 0.0)?;
        Ok(Self { lambda, l, cscript: consts.cscript, eps1: (100.0 / consts.cscript).sqrt() })
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub tn: usize,
    pub method: String,
    pub iter: usize,
    pub fval: f64,
    pub gnorm: f64,
    /// Last subproblem tolerance `ω_k`.
    pub error: f64,
    /// Last `ε_k` (IPGM only).
    pub eps: Option<f64>,
    pub time_s: f64,
    pub stop_reason: String,
}

impl ResultRow {
    fn from_trace(tn: usize, method: &str, trace: &Trace, fval: f64, with_eps: bool) -> Self {
        let last = trace.last();
        Self {
            tn,
            method: method.to_string(),
            iter: trace.iterations,
            fval,
            gnorm: last.map_or(f64::NAN, |r| r.gnorm),
            error: last.map_or(f64::NAN, |r| r.omega),
            eps: if with_eps { Some(last.map_or(f64::NAN, |r| r.eps)) } else { None },
            time_s: trace.elapsed.as_secs_f64(),
            stop_reason: trace.stop_reason.as_str().to_string(),
        }
    }

    fn fields(&self) -> [String; 9] {
        [
            self.tn.to_string(),
            self.method.clone(),
            self.iter.to_string(),
            num(self.fval),
            num(self.gnorm),
            num(self.error),
            self.eps.map(num).unwrap_or_default(),
            num(self.time_s),
            self.stop_reason.clone(),
        ]
    }
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub constants: ResolvedConstants,
    pub ifb: Trace,
    pub ipgm: Trace,
}

fn ipgm_config(c: &ResolvedConstants, n: usize, budget: Budget) -> Result<IpgmConfig> {
    let radii = RadiusSchedule::new(c.eps1, c.eps1, 0.5, 0.5)?;
    Ok(IpgmConfig::new(c.lambda, Vector::zeros(n), radii, ErrorSchedule::Proportional, budget))
}

fn prepare(cfg: &ExperimentConfig, expected: u8) -> Result<(ImageRestorationInstance, ResolvedConstants)> {
    cfg.validate()?;
    if cfg.experiment != expected {
        return Err(Error::config(format!("config is for experiment {}, not {expected}", cfg.experiment)));
    }
    let (m, n, gamma) = cfg.shape()?;
    let mut inst = generate_instance(m, n, gamma, cfg.seed)?;
    inst.reg.inner_budget = cfg.inner_budget;
    let constants = ResolvedConstants::for_instance(&inst)?;
    log::info!(
        "tn {} (m = {m}, n = {n}, gamma = {gamma:e}, seed = {}): lambda = {:e}, L = {:e}, C = {:e}, eps1 = {:e}",
        cfg.label(),
        cfg.seed,
        constants.lambda,
        constants.l,
        constants.cscript,
        constants.eps1
    );
    Ok((inst, constants))
}

/// iFB for `ifb_iter_budget` iterations, then IPGM until its objective is
/// strictly below iFB's final value.
pub fn run_experiment_1(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (inst, c) = prepare(cfg, 1)?;
    let problem = CompositeProblem::new(&inst.loss, &inst.reg);
    let n = inst.n();

    let ifb_budget = Budget::iterations(cfg.ifb_iter_budget).with_time_limit(cfg.time_limit());
    let ifb = run_ifb(problem, &inst.reg, &IfbConfig::new(c.lambda, Vector::zeros(n), ifb_budget))?;
    let ifb_fval = inst.objective(&ifb.x);

    let budget = Budget::iterations(cfg.max_iter).with_time_limit(cfg.time_limit()).with_target(ifb_fval);
    let ipgm = run_ipgm(problem, &inst.reg, &ipgm_config(&c, n, budget)?)?;
    let ipgm_fval = inst.objective(&ipgm.x);

    let rows = vec![
        ResultRow::from_trace(cfg.label(), "iFB", &ifb, ifb_fval, false),
        ResultRow::from_trace(cfg.label(), "IPGM", &ipgm, ipgm_fval, true),
    ];
    Ok(ExperimentOutcome { rows, constants: c, ifb, ipgm })
}

/// Both methods until `‖g^k‖ ≤ tol_gnorm` or a limit fires.
pub fn run_experiment_2(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (inst, c) = prepare(cfg, 2)?;
    let problem = CompositeProblem::new(&inst.loss, &inst.reg);
    let n = inst.n();
    let budget = Budget::iterations(cfg.max_iter).with_time_limit(cfg.time_limit()).with_residual_tol(cfg.tol_gnorm);

    let ifb = run_ifb(problem, &inst.reg, &IfbConfig::new(c.lambda, Vector::zeros(n), budget))?;
    let ipgm = run_ipgm(problem, &inst.reg, &ipgm_config(&c, n, budget)?)?;
    let rows = vec![
        ResultRow::from_trace(cfg.label(), "iFB", &ifb, inst.objective(&ifb.x), false),
        ResultRow::from_trace(cfg.label(), "IPGM", &ipgm, inst.objective(&ipgm.x), true),
    ];
    Ok(ExperimentOutcome { rows, constants: c, ifb, ipgm })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    match cfg.experiment {
        1 => run_experiment_1(cfg),
        2 => run_experiment_2(cfg),
        e => Err(Error::config(format!("experiment must be 1 or 2, got {e}"))),
    }
}

/// Runs `configs` on up to `workers` threads and hands each outcome to
/// `emit` in input order as soon as it and all its predecessors are done.
/// Stops emitting at the first error, which is returned.
pub fn run_batch(
    configs: &[ExperimentConfig],
    workers: usize,
    mut emit: impl FnMut(usize, ExperimentOutcome) -> Result<()>,
) -> Result<()> {
    let workers = workers.clamp(1, configs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                if tx.send((i, run_experiment(cfg))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, res) in rx {
            pending.insert(i, res);
            while let Some(res) = pending.remove(&expected) {
                let outcome = match res {
                    Ok(o) => o,
                    Err(e) => {
                        next.store(configs.len(), std::sync::atomic::Ordering::SeqCst);
                        return Err(e);
                    }
                };
                if let Err(e) = emit(expected, outcome) {
                    next.store(configs.len(), std::sync::atomic::Ordering::SeqCst);
                    return Err(e);
                }
                expected += 1;
            }
        }
        Ok(())
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Result CSV that is flushed after every row.
pub struct ResultWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl ResultWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(RESULT_HEADER).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { inner, path: path.to_path_buf() })
    }

    pub fn write_row(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.write_record(row.fields()).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn export_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = ResultWriter::create(path)?;
    rows.iter().try_for_each(|r| w.write_row(r))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RESULT_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let bad = |what: &str| Error::Format(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(RESULT_HEADER[i]));
        rows.push(ResultRow {
            tn: rec[0].parse().map_err(|_| bad("tn"))?,
            method: rec[1].to_string(),
            iter: rec[2].parse().map_err(|_| bad("iter"))?,
            fval: float(3)?,
            gnorm: float(4)?,
            error: float(5)?,
            eps: if rec[6].is_empty() { None } else { Some(float(6)?) },
            time_s: float(7)?,
            stop_reason: rec[8].to_string(),
        });
    }
    Ok(rows)
}

/// Per-iteration CSV of a run.
pub fn export_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            num(r.fval),
            num(r.gnorm),
            num(r.eps),
            num(r.r),
            u8::from(r.is_null).to_string(),
            r.subsolver_iters.to_string(),
            num(r.gap),
            num(r.time_s),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
