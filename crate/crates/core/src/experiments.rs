//! Seeded multi-run sweeps over the two-phase pipeline.
//!
//! Every run draws its own ground truth, data and initialisations from
//! `sub_seed(base_seed, "run", run_id)`, so a run's numbers do not depend on
//! which other runs are executed. Runs are spread over a rayon pool (capped
//! by `DIVLAB_THREADS`) and collected in run order.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Activation, Mlp, OptimizerSettings};
use crate::rng;
use crate::synth::{make_ground_truth, Architecture, GroundTruth, Task};
use crate::transfer::{
    estimate_excess_error, eval_seed, source_data, target_data, train_baseline_on, train_source_on, train_target_on,
    TwoPhaseConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    A,
    B,
    C,
    D,
    Custom,
}

impl Which {
    pub fn tag(self) -> &'static str {
        match self {
            Which::A => "a",
            Which::B => "b",
            Which::C => "c",
            Which::D => "d",
            Which::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Which::A),
            "b" => Ok(Which::B),
            "c" => Ok(Which::C),
            "d" => Ok(Which::D),
            "custom" => Ok(Which::Custom),
            other => Err(Error::contract(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub which: Which,
    pub d_in: usize,
    pub n_u: usize,
    pub p: usize,
    pub k: usize,
    pub k_so: usize,
    pub k_ta: usize,
    pub n_so: usize,
    pub n_ta: usize,
    pub steps: usize,
    pub noise_sigma: f64,
    pub learning_rate: f64,
    pub n_eval: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub output: Option<PathBuf>,
    /// Experiment a.
    pub n_so_grid: Vec<usize>,
    pub n_ta_grid: Vec<usize>,
    /// Experiment b; `k_ta = k + k_ta − K` for each `K`.
    pub k_grid: Vec<usize>,
    /// Experiment c; `n_so = n_so · p / P` for each `P`.
    pub p_grid: Vec<usize>,
    /// Experiment d.
    pub k_so_grid: Vec<usize>,
    /// Explicit run ids; `0..runs` when absent.
    pub run_ids: Option<Vec<u64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            which: Which::A,
            d_in: 4,
            n_u: 4,
            p: 4,
            k: 5,
            k_so: 1,
            k_ta: 1,
            n_so: 1000,
            n_ta: 100,
            steps: 2000,
            noise_sigma: 0.1,
            learning_rate: 1e-3,
            n_eval: 10_000,
            runs: 20,
            base_seed: 0,
            output: None,
            n_so_grid: vec![100, 1000],
            n_ta_grid: vec![10, 100],
            k_grid: vec![1, 2, 3, 4, 5],
            p_grid: vec![1, 2, 4],
            k_so_grid: vec![1, 2, 3],
            run_ids: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_ids().is_empty() {
            return Err(Error::contract("at least one run is required"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::contract("noise_sigma must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        self.architecture().validate()?;
        let grids = [&self.n_so_grid, &self.n_ta_grid, &self.k_grid, &self.p_grid, &self.k_so_grid];
        if grids.iter().any(|g| g.is_empty() || g.contains(&0)) {
            return Err(Error::contract("sweep grids must be non-empty and positive"));
        }
        if self.which == Which::B && self.k_grid.iter().any(|&k| k >= self.k + self.k_ta) {
            return Err(Error::contract("every K in k_grid must leave at least one target layer"));
        }
        if self.which == Which::C {
            let total = self.n_so * self.p;
            if let Some(p) = self.p_grid.iter().find(|&&p| total % p != 0) {
                return Err(Error::contract(format!("n_so * p = {total} is not divisible by {p}")));
            }
        }
        if self.n_so == 0 || self.n_ta == 0 || self.n_eval == 0 {
            return Err(Error::contract("n_so, n_ta and n_eval must be at least 1"));
        }
        Ok(())
    }

    pub fn run_ids(&self) -> Vec<u64> {
        self.run_ids.clone().unwrap_or_else(|| (0..self.runs as u64).collect())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            d_in: self.d_in,
            n_u: self.n_u,
            k: self.k,
            k_so: self.k_so,
            k_ta: self.k_ta,
            p: self.p,
            tasks: 1,
            terminal_relu: false,
            activation: Activation::Relu,
        }
    }

    fn two_phase(&self, model: Architecture, n_so: usize, n_ta: usize) -> TwoPhaseConfig {
        TwoPhaseConfig {
            model,
            n_so,
            n_ta,
            steps: self.steps,
            optimizer: OptimizerSettings::adam(self.learning_rate),
            freeze_representation: true,
            n_eval: self.n_eval,
        }
    }
}

pub fn run_seed(base_seed: u64, run: u64) -> u64 {
    rng::sub_seed(base_seed, "run", run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: u64,
    pub seed: u64,
    /// `None` when training failed numerically.
    pub mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub param: String,
    pub value: String,
    pub baseline: bool,
    pub terminal_activation: Activation,
    pub runs: Vec<RunOutcome>,
    /// Over successful runs only.
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one run.
    pub std: f64,
    pub n_runs: usize,
    pub failed_runs: usize,
    pub base_seed: u64,
}

impl ResultRow {
    pub fn values(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.mse).collect()
    }

    /// `std / √n`.
    pub fn stderr(&self) -> f64 {
        if self.n_runs == 0 {
            f64::NAN
        } else {
            self.std / (self.n_runs as f64).sqrt()
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `√(s₁²/n₁ + s₂²/n₂)`.
pub fn pooled_stderr(a: &ResultRow, b: &ResultRow) -> f64 {
    (a.std * a.std / a.n_runs as f64 + b.std * b.std / b.n_runs as f64).sqrt()
}

struct Cell {
    param: String,
    value: String,
    baseline: bool,
    terminal: Activation,
}

impl Cell {
    fn new(param: &str, value: impl ToString, baseline: bool, terminal: Activation) -> Self {
        Cell {
            param: param.to_string(),
            value: value.to_string(),
            baseline,
            terminal,
        }
    }
}

/// Maps numeric training failures to a missing value; other errors pass.
fn soft<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Numeric { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn target_mse(head: &Mlp, trunk: &Mlp, gt: &GroundTruth, n_eval: usize, seed: u64) -> Result<f64> {
    estimate_excess_error(head, trunk, gt, Task::Target, n_eval, eval_seed(seed))
}

/// Transfer MSE for every `n_ta` on top of one source fit.
fn transfer_cells(gt: &GroundTruth, tp: &TwoPhaseConfig, n_tas: &[usize], seed: u64) -> Result<Vec<Option<f64>>> {
    let data = source_data(gt, tp.n_so, seed)?;
    let Some(fit) = soft(train_source_on(&data, tp, seed))? else {
        return Ok(vec![None; n_tas.len()]);
    };
    n_tas
        .iter()
        .map(|&n_ta| {
            let d = target_data(gt, n_ta, seed)?;
            let head = soft(train_target_on(&fit.trunk, &d, tp, seed))?;
            head.map(|h| target_mse(&h, &fit.trunk, gt, tp.n_eval, seed)).transpose()
        })
        .collect()
}

fn baseline_cell(gt: &GroundTruth, tp: &TwoPhaseConfig, n_ta: usize, seed: u64) -> Result<Option<f64>> {
    let d = target_data(gt, n_ta, seed)?;
    let fitted = soft(train_baseline_on(&d, tp, seed))?;
    fitted.map(|(t, h)| target_mse(&h, &t, gt, tp.n_eval, seed)).transpose()
}

fn truth(cfg: &ExperimentConfig, arch: &Architecture, seed: u64) -> Result<GroundTruth> {
    make_ground_truth(arch, cfg.noise_sigma, rng::sub_seed(seed, "truth", 0))
}

type Job = Box<dyn Fn(u64) -> Result<Vec<Option<f64>>> + Sync>;

fn plan(cfg: &ExperimentConfig) -> (Vec<Cell>, Job) {
    let base = cfg.architecture();
    let relu = Activation::Relu;
    let none = Activation::Identity;
    match cfg.which {
        Which::A => {
            let mut cells = Vec::new();
            for n_so in &cfg.n_so_grid {
                for n_ta in &cfg.n_ta_grid {
                    cells.push(Cell::new("n_so|n_ta", format!("{n_so}|{n_ta}"), false, none));
                }
            }
            for n_ta in &cfg.n_ta_grid {
                cells.push(Cell::new("n_ta", n_ta, true, none));
            }
            let c = cfg.clone();
            let job = move |seed: u64| {
                let gt = truth(&c, &base, seed)?;
                let mut out = Vec::new();
                for &n_so in &c.n_so_grid {
                    let tp = c.two_phase(base.clone(), n_so, c.n_ta);
                    out.extend(transfer_cells(&gt, &tp, &c.n_ta_grid, seed)?);
                }
                let tp = c.two_phase(base.clone(), c.n_so, c.n_ta);
                for &n_ta in &c.n_ta_grid {
                    out.push(baseline_cell(&gt, &tp, n_ta, seed)?);
                }
                Ok(out)
            };
            (cells, Box::new(job))
        }
        Which::B => {
            let mut cells: Vec<Cell> = cfg.k_grid.iter().map(|k| Cell::new("K", k, false, none)).collect();
            cells.push(Cell::new("K", cfg.k, true, none));
            let c = cfg.clone();
            let job = move |seed: u64| {
                let gt = truth(&c, &base, seed)?;
                let total = c.k + c.k_ta;
                let mut out = Vec::new();
                for &k in &c.k_grid {
                    let model = Architecture {
                        k,
                        k_ta: total - k,
                        ..base.clone()
                    };
                    let tp = c.two_phase(model, c.n_so, c.n_ta);
                    out.extend(transfer_cells(&gt, &tp, &[c.n_ta], seed)?);
                }
                out.push(baseline_cell(&gt, &c.two_phase(base.clone(), c.n_so, c.n_ta), c.n_ta, seed)?);
                Ok(out)
            };
            (cells, Box::new(job))
        }
        Which::C => {
            let cells = cfg.p_grid.iter().map(|p| Cell::new("p", p, false, none)).collect();
            let c = cfg.clone();
            let job = move |seed: u64| {
                let total = c.n_so * c.p;
                let mut out = Vec::new();
                for &p in &c.p_grid {
                    let arch = Architecture { p, ..base.clone() };
                    let gt = truth(&c, &arch, seed)?;
                    let tp = c.two_phase(arch, total / p, c.n_ta);
                    out.extend(transfer_cells(&gt, &tp, &[c.n_ta], seed)?);
                }
                Ok(out)
            };
            (cells, Box::new(job))
        }
        Which::D => {
            let mut cells: Vec<Cell> = cfg.k_so_grid.iter().map(|k| Cell::new("K_so", k, false, relu)).collect();
            cells.push(Cell::new("K_so", "none", true, none));
            let c = cfg.clone();
            let job = move |seed: u64| {
                let mut out = Vec::new();
                let mut target_truth = None;
                for &k_so in &c.k_so_grid {
                    let arch = Architecture {
                        k_so,
                        terminal_relu: true,
                        ..base.clone()
                    };
                    let gt = truth(&c, &arch, seed)?;
                    let tp = c.two_phase(arch, c.n_so, c.n_ta);
                    out.extend(transfer_cells(&gt, &tp, &[c.n_ta], seed)?);
                    target_truth.get_or_insert(gt);
                }
                let gt = target_truth.expect("k_so_grid is non-empty");
                out.push(baseline_cell(&gt, &c.two_phase(base.clone(), c.n_so, c.n_ta), c.n_ta, seed)?);
                Ok(out)
            };
            (cells, Box::new(job))
        }
        Which::Custom => {
            let cells = vec![
                Cell::new("n_so|n_ta", format!("{}|{}", cfg.n_so, cfg.n_ta), false, none),
                Cell::new("n_ta", cfg.n_ta, true, none),
            ];
            let c = cfg.clone();
            let job = move |seed: u64| {
                let gt = truth(&c, &base, seed)?;
                let tp = c.two_phase(base.clone(), c.n_so, c.n_ta);
                let mut out = transfer_cells(&gt, &tp, &[c.n_ta], seed)?;
                out.push(baseline_cell(&gt, &tp, c.n_ta, seed)?);
                Ok(out)
            };
            (cells, Box::new(job))
        }
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("DIVLAB_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every configured run and aggregates one row per cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (cells, job) = plan(cfg);
    let ids = cfg.run_ids();
    let work = || -> Result<Vec<(u64, u64, Vec<Option<f64>>)>> {
        ids.par_iter()
            .map(|&run| {
                let seed = run_seed(cfg.base_seed, run);
                job(seed).map(|v| (run, seed, v))
            })
            .collect()
    };
    let per_run = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::contract(format!("cannot build worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let runs: Vec<RunOutcome> = per_run
                .iter()
                .map(|(run, seed, v)| RunOutcome {
                    run: *run,
                    seed: *seed,
                    mse: v[i],
                })
                .collect();
            let ok: Vec<f64> = runs.iter().filter_map(|r| r.mse).collect();
            let (mean, std) = mean_std(&ok);
            ResultRow {
                experiment: cfg.which.tag().to_string(),
                param: cell.param,
                value: cell.value,
                baseline: cell.baseline,
                terminal_activation: cell.terminal,
                failed_runs: runs.len() - ok.len(),
                n_runs: ok.len(),
                runs,
                mean,
                std,
                base_seed: cfg.base_seed,
            }
        })
        .collect())
}

pub fn run_experiment_a(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment(&ExperimentConfig {
        which: Which::A,
        ..cfg.clone()
    })
}

pub fn run_experiment_b(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment(&ExperimentConfig {
        which: Which::B,
        ..cfg.clone()
    })
}

pub fn run_experiment_c(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment(&ExperimentConfig {
        which: Which::C,
        ..cfg.clone()
    })
}

pub fn run_experiment_d(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment(&ExperimentConfig {
        which: Which::D,
        ..cfg.clone()
    })
}

pub const CSV_HEADER: [&str; 11] = [
    "experiment",
    "param",
    "value",
    "run",
    "seed",
    "mse",
    "baseline",
    "std",
    "n_runs",
    "failed_runs",
    "terminal_activation",
];

fn activation_tag(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "none",
    }
}

/// One line per run followed by an `AGG` line per cell. Failed runs carry
/// `failed` in the `mse` column.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io {
        path: PathBuf::from("<csv>"),
        source: std::io::Error::other(e),
    };
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        let base = [row.experiment.as_str(), row.param.as_str(), row.value.as_str()];
        let flag = if row.baseline { "true" } else { "false" };
        let act = activation_tag(row.terminal_activation);
        for r in &row.runs {
            let mse = r.mse.map_or_else(|| "failed".to_string(), |v| v.to_string());
            let rec = [&r.run.to_string(), &r.seed.to_string(), &mse, flag, "", "", "", act];
            w.write_record(base.iter().copied().chain(rec.iter().map(|s| s.as_ref()))).map_err(io)?;
        }
        let rec = [
            "AGG".to_string(),
            row.base_seed.to_string(),
            row.mean.to_string(),
            flag.to_string(),
            row.std.to_string(),
            row.n_runs.to_string(),
            row.failed_runs.to_string(),
            act.to_string(),
        ];
        w.write_record(base.iter().copied().chain(rec.iter().map(String::as_str))).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}
