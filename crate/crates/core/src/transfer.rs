//! Two-phase transfer learning and the from-scratch baseline.
//!
//! Phase one fits a shared trunk and per-task source heads jointly on the
//! source samples. Phase two freezes the trunk and fits a fresh target head
//! on the target samples. The baseline trains a trunk-plus-head network of
//! the same total depth on the target samples alone. All training is
//! full-batch for a fixed number of optimizer steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{glorot_stack, square_loss, Activation, Matrix, Mlp, OptState, OptimizerSettings};
use crate::rng;
use crate::synth::{gaussian_inputs, sample_dataset, Architecture, Dataset, GroundTruth, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    /// Architecture of the networks being trained. The ground truth carries
    /// its own architecture, which may differ.
    pub model: Architecture,
    pub n_so: usize,
    pub n_ta: usize,
    pub steps: usize,
    pub optimizer: OptimizerSettings,
    pub freeze_representation: bool,
    pub n_eval: usize,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        TwoPhaseConfig {
            model: Architecture::default(),
            n_so: 1000,
            n_ta: 100,
            steps: 2000,
            optimizer: OptimizerSettings::adam(1e-3),
            freeze_representation: true,
            n_eval: 10_000,
        }
    }
}

impl TwoPhaseConfig {
    pub fn validate(&self, gt: &GroundTruth) -> Result<()> {
        self.model.validate()?;
        if self.n_so == 0 || self.n_ta == 0 || self.n_eval == 0 {
            return Err(Error::contract("n_so, n_ta and n_eval must be at least 1"));
        }
        if !self.freeze_representation {
            return Err(Error::contract("only frozen-representation transfer is supported"));
        }
        let (m, t) = (&self.model, &gt.arch);
        if m.d_in != t.d_in || m.p != t.p || m.tasks != t.tasks {
            return Err(Error::contract("model and ground truth disagree on d_in, p or the task count"));
        }
        Ok(())
    }
}

/// Output of the source phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFit {
    pub trunk: Mlp,
    pub heads: Vec<Mlp>,
    /// Training loss before each step.
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub seed: u64,
    pub source_loss_trace: Vec<f64>,
    pub source_train_loss: f64,
    pub excess_source: f64,
    pub excess_target: f64,
    pub baseline_mse: Option<f64>,
    pub config: TwoPhaseConfig,
}

impl TransferReport {
    /// Excess target error of the transferred predictor.
    pub fn target_mse(&self) -> f64 {
        self.excess_target
    }
}

fn last_activation(arch: &Architecture) -> Activation {
    if arch.terminal_relu {
        Activation::Relu
    } else {
        Activation::Identity
    }
}

fn init_trunk(arch: &Architecture, seed: u64, label: &str) -> Result<Mlp> {
    let mut r = rng::stream(seed, label, 0);
    glorot_stack(&arch.trunk_widths(), arch.activation, arch.activation, &mut r)
}

fn init_head(arch: &Architecture, depth: usize, out: usize, last: Activation, seed: u64, label: &str, index: u64) -> Result<Mlp> {
    let mut r = rng::stream(seed, label, index);
    glorot_stack(&arch.head_widths(depth, out), arch.activation, last, &mut r)
}

/// Source datasets for every task, drawn from the run seed.
pub fn source_data(gt: &GroundTruth, n_so: usize, seed: u64) -> Result<Vec<Dataset>> {
    (0..gt.arch.tasks)
        .map(|t| sample_dataset(gt, Task::Source(t), n_so, rng::sub_seed(seed, "source-data", 0)))
        .collect()
}

/// Target dataset drawn from the run seed. Smaller `n_ta` gives a prefix.
pub fn target_data(gt: &GroundTruth, n_ta: usize, seed: u64) -> Result<Dataset> {
    sample_dataset(gt, Task::Target, n_ta, rng::sub_seed(seed, "target-data", 0))
}

/// Full-batch training of `trunk` composed with one head per dataset; the
/// objective is the average over datasets of the mean square loss. With a
/// frozen trunk only the heads move and the features are computed once.
fn fit(
    trunk: &mut Mlp,
    heads: &mut [Mlp],
    data: &[(&Matrix, &Matrix)],
    train_trunk: bool,
    steps: usize,
    settings: OptimizerSettings,
) -> Result<(Vec<f64>, f64)> {
    let tasks = data.len() as f64;
    let frozen: Vec<Matrix> = if train_trunk {
        Vec::new()
    } else {
        data.iter().map(|(x, _)| trunk.forward_batch(x)).collect::<Result<_>>()?
    };
    let trunk_len = if train_trunk { trunk.param_count() } else { 0 };
    let head_lens: Vec<usize> = heads.iter().map(Mlp::param_count).collect();
    let mut params: Vec<f64> = Vec::with_capacity(trunk_len + head_lens.iter().sum::<usize>());
    if train_trunk {
        params.extend(trunk.params());
    }
    for h in heads.iter() {
        params.extend(h.params());
    }
    let mut opt = OptState::new(settings, params.len());
    let mut trace = Vec::with_capacity(steps);

    let evaluate = |trunk: &Mlp, heads: &[Mlp], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grad = vec![0.0; if want_grad { trunk_len + head_lens.iter().sum::<usize>() } else { 0 }];
        let mut offset = trunk_len;
        for (t, (x, y)) in data.iter().enumerate() {
            let trunk_cache = if train_trunk { Some(trunk.forward_cached(x)?) } else { None };
            let features = match &trunk_cache {
                Some(c) => c.output(),
                None => &frozen[t],
            };
            let head_cache = heads[t].forward_cached(features)?;
            let (l, upstream) = square_loss(head_cache.output(), y)?;
            loss += l / tasks;
            if want_grad {
                let (hg, d_features) = heads[t].backprop(&head_cache, &upstream)?;
                for (g, v) in grad[offset..offset + head_lens[t]].iter_mut().zip(hg.flatten()) {
                    *g += v / tasks;
                }
                if let Some(c) = &trunk_cache {
                    let (tg, _) = trunk.backprop(c, &d_features)?;
                    for (g, v) in grad[..trunk_len].iter_mut().zip(tg.flatten()) {
                        *g += v / tasks;
                    }
                }
            }
            offset += head_lens[t];
        }
        Ok((loss, grad))
    };

    for step in 0..steps {
        let (loss, grad) = evaluate(trunk, heads, true)?;
        if !loss.is_finite() {
            return Err(Error::numeric(step, "training loss is not finite"));
        }
        trace.push(loss);
        opt.step(&mut params, &grad)?;
        if train_trunk {
            trunk.set_params(&params[..trunk_len])?;
        }
        let mut at = trunk_len;
        for (h, &n) in heads.iter_mut().zip(&head_lens) {
            h.set_params(&params[at..at + n])?;
            at += n;
        }
    }
    let (final_loss, _) = evaluate(trunk, heads, false)?;
    if !final_loss.is_finite() {
        return Err(Error::numeric(steps, "training loss is not finite"));
    }
    Ok((trace, final_loss))
}

pub fn train_source_phase(gt: &GroundTruth, cfg: &TwoPhaseConfig, seed: u64) -> Result<SourceFit> {
    cfg.validate(gt)?;
    let data = source_data(gt, cfg.n_so, seed)?;
    train_source_on(&data, cfg, seed)
}

/// Source phase on caller-supplied datasets (one per source task).
pub fn train_source_on(data: &[Dataset], cfg: &TwoPhaseConfig, seed: u64) -> Result<SourceFit> {
    let m = &cfg.model;
    if data.len() != m.tasks {
        return Err(Error::Shape {
            what: "source datasets",
            expected: m.tasks,
            got: data.len(),
        });
    }
    let mut trunk = init_trunk(m, seed, "init-source-trunk")?;
    let mut heads = (0..m.tasks)
        .map(|t| init_head(m, m.k_so, m.p, last_activation(m), seed, "init-source-head", t as u64))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&Matrix, &Matrix)> = data.iter().map(|d| (&d.inputs, &d.labels)).collect();
    let (loss_trace, final_loss) = fit(&mut trunk, &mut heads, &pairs, true, cfg.steps, cfg.optimizer)?;
    Ok(SourceFit {
        trunk,
        heads,
        loss_trace,
        final_loss,
    })
}

/// Fits a fresh target head on top of the frozen `trunk`.
pub fn train_target_phase(trunk: &Mlp, gt: &GroundTruth, cfg: &TwoPhaseConfig, seed: u64) -> Result<Mlp> {
    cfg.validate(gt)?;
    let data = target_data(gt, cfg.n_ta, seed)?;
    train_target_on(trunk, &data, cfg, seed)
}

pub fn train_target_on(trunk: &Mlp, data: &Dataset, cfg: &TwoPhaseConfig, seed: u64) -> Result<Mlp> {
    let m = &cfg.model;
    if trunk.out_dim() != m.n_u {
        return Err(Error::Shape {
            what: "frozen trunk output",
            expected: m.n_u,
            got: trunk.out_dim(),
        });
    }
    let mut head = vec![init_head(m, m.k_ta, 1, Activation::Identity, seed, "init-target-head", 0)?];
    let mut frozen = trunk.clone();
    fit(
        &mut frozen,
        &mut head,
        &[(&data.inputs, &data.labels)],
        false,
        cfg.steps,
        cfg.optimizer,
    )?;
    Ok(head.pop().expect("one head"))
}

/// Trains a `k + k_ta` layer network from scratch on `data` and returns
/// its trunk and head.
pub fn train_baseline_on(data: &Dataset, cfg: &TwoPhaseConfig, seed: u64) -> Result<(Mlp, Mlp)> {
    let m = &cfg.model;
    let mut trunk = init_trunk(m, seed, "init-baseline-trunk")?;
    let mut head = vec![init_head(m, m.k_ta, 1, Activation::Identity, seed, "init-baseline-head", 0)?];
    fit(
        &mut trunk,
        &mut head,
        &[(&data.inputs, &data.labels)],
        true,
        cfg.steps,
        cfg.optimizer,
    )?;
    Ok((trunk, head.pop().expect("one head")))
}

/// Excess target error of the from-scratch baseline.
pub fn run_baseline(gt: &GroundTruth, cfg: &TwoPhaseConfig, seed: u64) -> Result<f64> {
    cfg.validate(gt)?;
    let data = target_data(gt, cfg.n_ta, seed)?;
    let (trunk, head) = train_baseline_on(&data, cfg, seed)?;
    estimate_excess_error(&head, &trunk, gt, Task::Target, cfg.n_eval, eval_seed(seed))
}

pub fn eval_seed(seed: u64) -> u64 {
    rng::sub_seed(seed, "eval", 0)
}

/// Monte-Carlo estimate of `E‖f(h(X)) − f*(h*(X))‖²` over fresh `N(0, I)`
/// inputs.
pub fn estimate_excess_error(f: &Mlp, h: &Mlp, gt: &GroundTruth, task: Task, n_eval: usize, seed: u64) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::contract("n_eval must be at least 1"));
    }
    let x = gaussian_inputs(gt.arch.d_in, n_eval, seed);
    let pred = f.forward_batch(&h.forward_batch(&x)?)?;
    let truth = gt.mean_function(task, &x)?;
    Ok(mean_sq_distance(&pred, &truth)?)
}

fn mean_sq_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape {
            what: "prediction/truth",
            expected: b.rows() * b.cols(),
            got: a.rows() * a.cols(),
        });
    }
    let total: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(total / a.rows() as f64)
}

/// Source excess averaged over the source tasks.
pub fn source_excess(fit: &SourceFit, gt: &GroundTruth, n_eval: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (t, head) in fit.heads.iter().enumerate() {
        total += estimate_excess_error(head, &fit.trunk, gt, Task::Source(t), n_eval, seed)?;
    }
    Ok(total / fit.heads.len() as f64)
}

/// Source phase, target phase and optionally the baseline for one seed.
pub fn run_two_phase(gt: &GroundTruth, cfg: &TwoPhaseConfig, seed: u64, with_baseline: bool) -> Result<TransferReport> {
    let fit = train_source_phase(gt, cfg, seed)?;
    let head = train_target_phase(&fit.trunk, gt, cfg, seed)?;
    let eval = eval_seed(seed);
    let excess_target = estimate_excess_error(&head, &fit.trunk, gt, Task::Target, cfg.n_eval, eval)?;
    let excess_source = source_excess(&fit, gt, cfg.n_eval, eval)?;
    let baseline_mse = if with_baseline {
        Some(run_baseline(gt, cfg, seed)?)
    } else {
        None
    };
    Ok(TransferReport {
        seed,
        source_train_loss: fit.final_loss,
        source_loss_trace: fit.loss_trace,
        excess_source,
        excess_target,
        baseline_mse,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Dense;
    use crate::synth::make_ground_truth;

    fn linear_arch() -> Architecture {
        Architecture {
            k: 1,
            activation: Activation::Identity,
            ..Architecture::default()
        }
    }

    #[test]
    fn linear_source_fit_reaches_least_squares_optimum() {
        // Least squares attains zero loss on noise-free linear data. Adam at
        // lr 1e-3 from Glorot init needs more than 2000 steps on some seeds,
        // so this runs 4000.
        let cfg = TwoPhaseConfig {
            model: linear_arch(),
            steps: 4000,
            ..TwoPhaseConfig::default()
        };
        for seed in 0..6 {
            let gt = make_ground_truth(&linear_arch(), 0.0, seed).unwrap();
            let fit = train_source_phase(&gt, &cfg, seed + 1).unwrap();
            assert!(fit.final_loss <= 1e-3, "seed {seed}: loss {}", fit.final_loss);
        }
    }

    #[test]
    fn zero_truth_fits_down_to_the_noise_variance() {
        let mut gt = make_ground_truth(&Architecture::default(), 0.1, 1).unwrap();
        for net in std::iter::once(&mut gt.h_star).chain(gt.f_sources.iter_mut()) {
            let mut p = net.params();
            p.iter_mut().for_each(|v| *v = 0.0);
            net.set_params(&p).unwrap();
        }
        let cfg = TwoPhaseConfig::default();
        let fit = train_source_phase(&gt, &cfg, 3).unwrap();
        // The per-row loss sums p = 4 coordinates, each with variance σ².
        let optimum = 4.0 * 0.01;
        assert!((fit.final_loss - optimum).abs() <= 0.1 * optimum, "loss {}", fit.final_loss);
    }

    #[test]
    fn source_phase_is_deterministic() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 1).unwrap();
        let cfg = TwoPhaseConfig {
            steps: 50,
            n_so: 64,
            ..TwoPhaseConfig::default()
        };
        let a = train_source_phase(&gt, &cfg, 9).unwrap();
        let b = train_source_phase(&gt, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn true_representation_makes_the_target_realizable() {
        let gt = make_ground_truth(&Architecture::default(), 0.0, 4).unwrap();
        let cfg = TwoPhaseConfig::default();
        let head = train_target_phase(&gt.h_star, &gt, &cfg, 5).unwrap();
        let excess = estimate_excess_error(&head, &gt.h_star, &gt, Task::Target, 10_000, 6).unwrap();
        assert!(excess <= 1e-3, "excess {excess}");
    }

    #[test]
    fn zero_steps_keep_the_initial_head() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let cfg = TwoPhaseConfig {
            steps: 0,
            ..TwoPhaseConfig::default()
        };
        let head = train_target_phase(&gt.h_star, &gt, &cfg, 5).unwrap();
        let init = init_head(&cfg.model, 1, 1, Activation::Identity, 5, "init-target-head", 0).unwrap();
        assert_eq!(head, init);
    }

    #[test]
    fn target_phase_leaves_the_trunk_untouched() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let cfg = TwoPhaseConfig {
            steps: 100,
            ..TwoPhaseConfig::default()
        };
        let trunk = gt.h_star.clone();
        let before = serde_json::to_vec(&trunk).unwrap();
        train_target_phase(&trunk, &gt, &cfg, 5).unwrap();
        assert_eq!(before, serde_json::to_vec(&trunk).unwrap());
    }

    #[test]
    fn unfrozen_transfer_is_rejected() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let cfg = TwoPhaseConfig {
            freeze_representation: false,
            ..TwoPhaseConfig::default()
        };
        assert!(matches!(train_source_phase(&gt, &cfg, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_reports_the_step() {
        let gt = make_ground_truth(&linear_arch(), 0.1, 4).unwrap();
        let cfg = TwoPhaseConfig {
            model: linear_arch(),
            optimizer: OptimizerSettings::sgd(1e6),
            steps: 500,
            ..TwoPhaseConfig::default()
        };
        match train_source_phase(&gt, &cfg, 1) {
            Err(Error::Numeric { step, .. }) => assert!(step > 0),
            other => panic!("expected a numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn excess_error_closed_forms() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        assert_eq!(
            estimate_excess_error(&gt.f_target, &gt.h_star, &gt, Task::Target, 1000, 1).unwrap(),
            0.0
        );

        // Constant predictors: truth c' = 0.5 and prediction c = 2.
        let arch = Architecture {
            d_in: 1,
            n_u: 1,
            k: 1,
            activation: Activation::Identity,
            ..Architecture::default()
        };
        let mut gt = make_ground_truth(&arch, 0.0, 1).unwrap();
        let constant = |c: f64| Mlp::new(vec![Dense::new(1, 1, vec![0.0], vec![c], Activation::Identity).unwrap()], None).unwrap();
        gt.f_target = constant(0.5);
        let e = estimate_excess_error(&constant(2.0), &gt.h_star, &gt, Task::Target, 100, 1).unwrap();
        assert!((e - 2.25).abs() < 1e-12);

        // f∘h(x) = 2x against the truth x: E[x²] = 1.
        let identity = |w: f64| Mlp::new(vec![Dense::new(1, 1, vec![w], vec![0.0], Activation::Identity).unwrap()], None).unwrap();
        gt.h_star = identity(1.0);
        gt.f_target = identity(1.0);
        let e = estimate_excess_error(&identity(2.0), &identity(1.0), &gt, Task::Target, 100_000, 3).unwrap();
        assert!((e - 1.0).abs() < 0.02, "{e}");
    }
}
