//! Empirical Gaussian and Rademacher complexity, and closed-form bounds.
//!
//! The estimators use the `1/√N` normalization
//! `Ĝ_N(Q) = E_g sup_q (1/√N) Σ_i g_iᵀ q(x_i)`.
//! Draw `j` always uses its own seed-indexed stream, so results do not
//! depend on how draws are scheduled across threads.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{lipschitz_bound, Matrix, Mlp, NormBudget};
use crate::rng;

pub type ClassMember = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FunctionClass {
    Finite(Vec<ClassMember>),
    /// Scalar linear maps `x ↦ ⟨w, x⟩` with `‖w‖₂ ≤ radius`.
    LinearBall { radius: f64 },
    /// Bias-free networks shaped like `template` whose layers satisfy
    /// `max(‖W_k‖_∞, ‖W_k‖₂) ≤ m_k[k]` and whose head has `‖α‖₂ ≤ m_alpha`.
    NetFamily { template: Mlp, budget: NormBudget },
}

impl fmt::Debug for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionClass::Finite(m) => write!(f, "Finite({} members)", m.len()),
            FunctionClass::LinearBall { radius } => write!(f, "LinearBall {{ radius: {radius} }}"),
            FunctionClass::NetFamily { budget, .. } => write!(f, "NetFamily {{ budget: {budget:?} }}"),
        }
    }
}

impl FunctionClass {
    /// Finite class of constant functions.
    pub fn constants(values: &[Vec<f64>]) -> Self {
        FunctionClass::Finite(
            values
                .iter()
                .map(|v| {
                    let v = v.clone();
                    Arc::new(move |_: &[f64]| v.clone()) as ClassMember
                })
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupMethod {
    Enumeration,
    ClosedForm,
    ProjectedAscent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_mc: usize,
    pub sup_method: SupMethod,
    /// Draws on which no ascent restart improved on its starting point.
    pub low_confidence_draws: usize,
}

impl ComplexityEstimate {
    pub fn is_low_confidence(&self) -> bool {
        self.low_confidence_draws > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Weights {
    Gaussian,
    Rademacher,
}

/// Settings of the projected ascent used for network families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentSettings {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for AscentSettings {
    fn default() -> Self {
        AscentSettings {
            restarts: 8,
            steps: 200,
            step_size: 0.5,
        }
    }
}

pub fn gaussian_complexity(class: &FunctionClass, data: &[Vec<f64>], n_mc: usize, seed: u64) -> Result<ComplexityEstimate> {
    estimate(class, data, n_mc, seed, Weights::Gaussian, AscentSettings::default())
}

pub fn rademacher_complexity(class: &FunctionClass, data: &[Vec<f64>], n_mc: usize, seed: u64) -> Result<ComplexityEstimate> {
    estimate(class, data, n_mc, seed, Weights::Rademacher, AscentSettings::default())
}

/// Gaussian complexity with explicit ascent settings for network families.
pub fn gaussian_complexity_with(
    class: &FunctionClass,
    data: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
    ascent: AscentSettings,
) -> Result<ComplexityEstimate> {
    estimate(class, data, n_mc, seed, Weights::Gaussian, ascent)
}

fn estimate(
    class: &FunctionClass,
    data: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
    weights: Weights,
    ascent: AscentSettings,
) -> Result<ComplexityEstimate> {
    if data.is_empty() {
        return Err(Error::contract("complexity needs at least one data point"));
    }
    if n_mc == 0 {
        return Err(Error::contract("n_mc must be at least 1"));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::Shape {
            what: "complexity data point",
            expected: d,
            got: bad.len(),
        });
    }
    let n = data.len();
    let scale = 1.0 / (n as f64).sqrt();
    let label = match weights {
        Weights::Gaussian => "gaussian-draw",
        Weights::Rademacher => "rademacher-draw",
    };
    let draw = |j: usize, r: usize| -> Vec<f64> {
        let mut s = rng::stream(seed, label, j as u64);
        (0..n * r)
            .map(|_| match weights {
                Weights::Gaussian => StandardNormal.sample(&mut s),
                Weights::Rademacher => {
                    if s.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect()
    };

    let (values, method, low): (Vec<f64>, SupMethod, usize) = match class {
        FunctionClass::Finite(members) => {
            if members.is_empty() {
                return Err(Error::contract("finite class is empty"));
            }
            let table: Vec<Vec<Vec<f64>>> = members.iter().map(|f| data.iter().map(|x| f(x)).collect()).collect();
            let r = table[0][0].len();
            if table.iter().flatten().any(|v| v.len() != r) {
                return Err(Error::contract("class members disagree on output dimension"));
            }
            let values = (0..n_mc)
                .into_par_iter()
                .map(|j| {
                    let g = draw(j, r);
                    table
                        .iter()
                        .map(|vals| scale * vals.iter().flatten().zip(&g).map(|(v, w)| v * w).sum::<f64>())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            (values, SupMethod::Enumeration, 0)
        }
        FunctionClass::LinearBall { radius } => {
            if !(*radius >= 0.0) {
                return Err(Error::contract("linear ball radius must be non-negative"));
            }
            let values = (0..n_mc)
                .into_par_iter()
                .map(|j| {
                    let g = draw(j, 1);
                    linear_ball_sup(*radius, data, &g)
                })
                .collect();
            (values, SupMethod::ClosedForm, 0)
        }
        FunctionClass::NetFamily { template, budget } => {
            check_family(template, budget, d)?;
            let x = Matrix::from_rows(data)?;
            let r = template.out_dim();
            let results = (0..n_mc)
                .into_par_iter()
                .map(|j| {
                    let g = Matrix::from_vec(n, r, draw(j, r).into_iter().map(|v| v * scale).collect())?;
                    net_family_sup(template, budget, &x, &g, ascent, rng::sub_seed(seed, "ascent", j as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let low = results.iter().filter(|(_, improved)| !improved).count();
            (results.into_iter().map(|(v, _)| v).collect(), SupMethod::ProjectedAscent, low)
        }
    };

    let (mean, stderr) = mean_and_stderr(&values);
    Ok(ComplexityEstimate {
        mean,
        stderr,
        n_mc,
        sup_method: method,
        low_confidence_draws: low,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `M · ‖(1/√N) Σ_i g_i x_i‖₂`.
pub fn linear_ball_sup(radius: f64, data: &[Vec<f64>], g: &[f64]) -> f64 {
    let d = data.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    for (x, gi) in data.iter().zip(g) {
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += gi * xi;
        }
    }
    let scale = 1.0 / (data.len() as f64).sqrt();
    radius * scale * acc.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_family(template: &Mlp, budget: &NormBudget, d: usize) -> Result<()> {
    budget.validate()?;
    if budget.m_k.len() != template.depth() {
        return Err(Error::Shape {
            what: "norm budget layers",
            expected: template.depth(),
            got: budget.m_k.len(),
        });
    }
    if template.in_dim() != d {
        return Err(Error::Shape {
            what: "network family input",
            expected: template.in_dim(),
            got: d,
        });
    }
    Ok(())
}

/// Rescales every layer and the head into the budget and zeroes the biases.
fn project(net: &mut Mlp, budget: &NormBudget) -> Result<()> {
    for (l, &m) in net.layers_mut().iter_mut().zip(&budget.m_k) {
        l.bias.iter_mut().for_each(|b| *b = 0.0);
        let c = l.infinity_norm().max(l.spectral_norm()?);
        if c > m {
            let s = if c > 0.0 { m / c } else { 0.0 };
            l.weights.iter_mut().for_each(|w| *w *= s);
        }
    }
    if let Some(h) = net.head_mut() {
        h.beta = 0.0;
        let c = h.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        if c > budget.m_alpha {
            let s = budget.m_alpha / c;
            h.alpha.iter_mut().for_each(|a| *a *= s);
        }
    }
    Ok(())
}

fn objective(net: &Mlp, x: &Matrix, g: &Matrix) -> Result<f64> {
    let y = net.forward_batch(x)?;
    Ok(y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
}

/// Best value of `Σ_i g_iᵀ f(x_i)` found by projected normalized-gradient
/// ascent, and whether any restart improved on its starting point.
fn net_family_sup(
    template: &Mlp,
    budget: &NormBudget,
    x: &Matrix,
    g: &Matrix,
    ascent: AscentSettings,
    seed: u64,
) -> Result<(f64, bool)> {
    let mut best = f64::NEG_INFINITY;
    let mut improved = false;
    for restart in 0..ascent.restarts.max(1) {
        let mut r = rng::stream(seed, "restart", restart as u64);
        let mut net = template.clone();
        let init: Vec<f64> = net.params().iter().map(|_| r.random_range(-1.0..1.0)).collect();
        net.set_params(&init)?;
        project(&mut net, budget)?;
        let start = objective(&net, x, g)?;
        best = best.max(start);
        for step in 0..ascent.steps {
            let cache = net.forward_cached(x)?;
            let (grad, _) = net.backprop(&cache, g)?;
            let eta = ascent.step_size / ((step + 1) as f64).sqrt();
            for ((l, lg), &m) in net.layers_mut().iter_mut().zip(&grad.layers).zip(&budget.m_k) {
                let norm = lg.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (w, d) in l.weights.iter_mut().zip(&lg.weights) {
                        *w += eta * m * d / norm;
                    }
                }
            }
            if let (Some(h), Some(hg)) = (net.head_mut(), grad.head.as_ref()) {
                let norm = hg.alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (a, d) in h.alpha.iter_mut().zip(&hg.alpha) {
                        *a += eta * budget.m_alpha * d / norm;
                    }
                }
            }
            project(&mut net, budget)?;
            let value = objective(&net, x, g)?;
            if value > start {
                improved = true;
            }
            best = best.max(value);
        }
    }
    Ok((best, improved))
}

fn require_n(n: f64) -> Result<()> {
    if !(n >= 1.0) {
        return Err(Error::contract("sample size must be at least 1"));
    }
    Ok(())
}

/// `2 D_Z √(K + 2 + ln d) · M(α) Π M(k) / √n`.
pub fn dnn_bound(budget: &NormBudget, k: usize, d_out: usize, n: f64) -> Result<f64> {
    require_n(n)?;
    budget.validate()?;
    if d_out == 0 {
        return Err(Error::contract("output dimension must be at least 1"));
    }
    let depth_term = (k as f64 + 2.0 + (d_out as f64).ln()).sqrt();
    Ok(2.0 * budget.d_z * depth_term * lipschitz_bound(budget) / n.sqrt())
}

/// `4 D_X / (nT)^{3/2} + 128 (L_F G_H + G_F,max) ln(nT)`.
pub fn chain_bound(d_x: f64, l_f: f64, g_h: f64, g_f_max: f64, n: f64, tasks: f64) -> Result<f64> {
    require_n(n)?;
    require_n(tasks)?;
    let nt = n * tasks;
    Ok(4.0 * d_x / nt.powf(1.5) + 128.0 * (l_f * g_h + g_f_max) * nt.ln())
}

/// `√(2π) Ĝ / √n + √(9 ln(2/δ) / (2n))`.
pub fn deviation_term(g_hat: f64, n: f64, delta: f64) -> Result<f64> {
    require_n(n)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::contract(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((2.0 * std::f64::consts::PI).sqrt() * g_hat / n.sqrt() + (9.0 * (2.0 / delta).ln() / (2.0 * n)).sqrt())
}

/// `ν E_so + μ + deviation_term(Ĝ, n_ta, δ)`.
pub fn target_bound(nu: f64, mu: f64, excess_source: f64, g_hat_target: f64, n_ta: f64, delta: f64) -> Result<f64> {
    if !(nu >= 0.0 && mu >= 0.0 && excess_source >= 0.0) {
        return Err(Error::contract("nu, mu and the source excess must be non-negative"));
    }
    Ok(nu * excess_source + mu + deviation_term(g_hat_target, n_ta, delta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, Dense};

    const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

    #[test]
    fn singleton_zero_class_has_zero_complexity() {
        let c = FunctionClass::constants(&[vec![0.0]]);
        let data = vec![vec![1.0], vec![2.0]];
        assert_eq!(gaussian_complexity(&c, &data, 100, 1).unwrap().mean, 0.0);
        assert_eq!(rademacher_complexity(&c, &data, 100, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn half_normal_oracle() {
        assert!((HALF_NORMAL_MEAN - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let data = vec![vec![1.0, 0.0]];
        let ball = gaussian_complexity(&FunctionClass::LinearBall { radius: 1.0 }, &data, 100_000, 3).unwrap();
        assert!((ball.mean - HALF_NORMAL_MEAN).abs() < 0.01, "{}", ball.mean);
        let pm = FunctionClass::constants(&[vec![1.0], vec![-1.0]]);
        let est = gaussian_complexity(&pm, &[vec![0.0]], 100_000, 4).unwrap();
        assert!((est.mean - HALF_NORMAL_MEAN).abs() < 0.01, "{}", est.mean);
    }

    #[test]
    fn rademacher_linear_ball_is_exact() {
        let est = rademacher_complexity(&FunctionClass::LinearBall { radius: 1.0 }, &[vec![1.0]], 500, 1).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn estimates_are_reproducible() {
        let c = FunctionClass::LinearBall { radius: 2.0 };
        let data = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        assert_eq!(
            gaussian_complexity(&c, &data, 1000, 5).unwrap(),
            gaussian_complexity(&c, &data, 1000, 5).unwrap()
        );
    }

    #[test]
    fn ascent_matches_closed_form_on_linear_family() {
        let data = vec![vec![1.0, 0.5, -0.3], vec![0.2, -1.0, 0.7], vec![-0.4, 0.1, 0.9]];
        let family = FunctionClass::NetFamily {
            template: Mlp::head_only(vec![0.0; 3], 0.0),
            budget: NormBudget::new(1.5, vec![], 1.0).unwrap(),
        };
        let a = gaussian_complexity(&family, &data, 20, 8).unwrap();
        let b = gaussian_complexity(&FunctionClass::LinearBall { radius: 1.5 }, &data, 20, 8).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-6, "{} vs {}", a.mean, b.mean);
        assert_eq!(a.sup_method, SupMethod::ProjectedAscent);
    }

    #[test]
    fn network_family_respects_budget_scale() {
        let template = Mlp::new(
            vec![Dense::zeros(3, 2, Activation::Relu)],
            Some(crate::netcore::LinearHead {
                alpha: vec![0.0; 3],
                beta: 0.0,
            }),
        )
        .unwrap();
        let data = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let small = FunctionClass::NetFamily {
            template: template.clone(),
            budget: NormBudget::new(1.0, vec![1.0], 1.0).unwrap(),
        };
        let large = FunctionClass::NetFamily {
            template,
            budget: NormBudget::new(2.0, vec![1.0], 1.0).unwrap(),
        };
        let s = gaussian_complexity(&small, &data, 8, 2).unwrap();
        let l = gaussian_complexity(&large, &data, 8, 2).unwrap();
        assert!(s.mean > 0.0);
        // The true sup doubles with the α budget; ascent only approaches it.
        assert!(l.mean >= s.mean);
        assert!((l.mean / (2.0 * s.mean) - 1.0).abs() < 0.1);
        assert_eq!(s.low_confidence_draws, 0);
    }

    #[test]
    fn bad_inputs_are_contract_errors() {
        let c = FunctionClass::LinearBall { radius: 1.0 };
        assert!(gaussian_complexity(&c, &[], 10, 1).is_err());
        assert!(gaussian_complexity(&c, &[vec![1.0]], 0, 1).is_err());
    }

    #[test]
    fn dnn_bound_values() {
        let b = NormBudget::new(1.0, vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(dnn_bound(&b, 2, 1, 16.0).unwrap(), 1.0);
        let doubled = NormBudget::new(1.0, vec![2.0, 1.0], 1.0).unwrap();
        assert_eq!(dnn_bound(&doubled, 2, 1, 16.0).unwrap(), 2.0);
        assert_eq!(dnn_bound(&b, 2, 1, 64.0).unwrap(), 0.5);
        assert!(dnn_bound(&b, 2, 1, 0.0).is_err());
    }

    #[test]
    fn chain_bound_values() {
        assert_eq!(chain_bound(0.0, 0.0, 0.0, 0.0, 5.0, 3.0).unwrap(), 0.0);
        assert_eq!(chain_bound(1.0, 0.0, 0.0, 0.0, 1.0, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn deviation_and_target_bound_values() {
        let e = std::f64::consts::E;
        assert!((deviation_term(0.0, 18.0, 2.0 / e).unwrap() - 0.5).abs() < 1e-15);
        let two_pi = 2.0 * std::f64::consts::PI;
        let first = deviation_term(1.0, two_pi, 0.5).unwrap() - deviation_term(0.0, two_pi, 0.5).unwrap();
        assert!((first - 1.0).abs() < 1e-15);
        assert!(deviation_term(0.0, 10.0, 1.0).is_err());
        assert!(deviation_term(0.0, 10.0, 0.0).is_err());

        // ν = 2, E_so = 0.1, μ = 0.05, deviation 0.5.
        let t = target_bound(2.0, 0.1 / 2.0, 0.1, 0.0, 18.0, 2.0 / e).unwrap();
        assert!((t - 0.75).abs() < 1e-15);
        let only = target_bound(0.0, 0.0, 0.3, 0.0, 50.0, 0.1).unwrap();
        assert!((only - (9.0 * 20f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!(target_bound(-1.0, 0.0, 0.0, 0.0, 1.0, 0.5).is_err());
    }
}
