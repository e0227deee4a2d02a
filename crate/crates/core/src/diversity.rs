//! Exact transferability and diversity on finite instances.
//!
//! A [`FiniteInstance`] tabulates everything: a weighted input support,
//! representations as maps from support points to feature indices, and
//! source/target prediction functions as tables over features. Excess
//! errors under square loss are then exact weighted sums.
//!
//! For a fixed `μ ≥ 0` the reported `ν` is the smallest value with
//! `inf_f E_ta(f, h) ≤ ν · inf_f⃗ E_so(f⃗, h) + μ` for every `h`, which is
//! the same as bounding `E_ta / (E_so + μ/ν)` by `ν`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratio::Ratio;

/// Tolerance used to decide whether an excess is zero or two excesses tie.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    /// Probability of each support point.
    pub weights: Vec<f64>,
    /// Optional coordinates of the support points, for reference only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Feature vectors; representations and prediction tables index them.
    pub features: Vec<Vec<f64>>,
    /// `representations[h][x]` is the feature index of `h(x)`.
    pub representations: Vec<Vec<usize>>,
    /// `source_functions[f][z]` is the output of `f` on feature `z`.
    pub source_functions: Vec<Vec<Vec<f64>>>,
    pub target_functions: Vec<Vec<Vec<f64>>>,
    /// True source function of each source task.
    pub sources: Vec<usize>,
    /// True target function.
    pub target: usize,
    /// True representation.
    pub true_rep: usize,
}

fn output_dim(table: &[Vec<Vec<f64>>], what: &str, n_features: usize) -> Result<usize> {
    let first = table
        .first()
        .and_then(|f| f.first())
        .ok_or_else(|| Error::contract(format!("{what} class is empty")))?;
    let dim = first.len();
    for f in table {
        if f.len() != n_features {
            return Err(Error::contract(format!("{what} table must have one entry per feature")));
        }
        if f.iter().any(|v| v.len() != dim) {
            return Err(Error::contract(format!("{what} outputs disagree on dimension")));
        }
    }
    Ok(dim)
}

impl FiniteInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 {
            return Err(Error::contract("support is empty"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("weights sum to {total}, not 1")));
        }
        if let Some(p) = &self.points {
            if p.len() != n {
                return Err(Error::contract("points and weights differ in length"));
            }
        }
        let nz = self.features.len();
        if self.representations.is_empty() {
            return Err(Error::contract("representation class is empty"));
        }
        for h in &self.representations {
            if h.len() != n {
                return Err(Error::contract("every representation needs one feature per support point"));
            }
            if h.iter().any(|&z| z >= nz) {
                return Err(Error::contract("representation refers to an unknown feature"));
            }
        }
        output_dim(&self.source_functions, "source", nz)?;
        output_dim(&self.target_functions, "target", nz)?;
        if self.sources.is_empty() {
            return Err(Error::contract("at least one source task is required"));
        }
        if self.sources.iter().any(|&s| s >= self.source_functions.len()) {
            return Err(Error::contract("source truth index out of range"));
        }
        if self.target >= self.target_functions.len() {
            return Err(Error::contract("target truth index out of range"));
        }
        if self.true_rep >= self.representations.len() {
            return Err(Error::contract("true representation index out of range"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let inst: FiniteInstance = serde_json::from_str(text).map_err(|e| e.to_string())?;
        inst.validate().map_err(|e| e.to_string())?;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        FiniteInstance::from_json(&text).map_err(|reason| Error::Parse {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn with_target(&self, target: usize) -> FiniteInstance {
        FiniteInstance {
            target,
            ..self.clone()
        }
    }

    /// `Σ_x P(x) ‖f(h(x)) − f*(h*(x))‖²`.
    fn excess(&self, table: &[Vec<Vec<f64>>], f: usize, h: usize, truth: usize) -> f64 {
        let hs = &self.representations[self.true_rep];
        let hr = &self.representations[h];
        self.weights
            .iter()
            .enumerate()
            .map(|(x, w)| {
                let a = &table[f][hr[x]];
                let b = &table[truth][hs[x]];
                w * a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessTable {
    /// `source[h][t][f]`: excess of source function `f` on task `t`.
    pub source: Vec<Vec<Vec<f64>>>,
    /// `target[h][f]`.
    pub target: Vec<Vec<f64>>,
    /// `inf_f⃗` of the task-averaged source excess, per `h`.
    pub source_inf: Vec<f64>,
    /// `inf_f` of the target excess, per `h`.
    pub target_inf: Vec<f64>,
}

pub fn excess_table(inst: &FiniteInstance) -> Result<ExcessTable> {
    inst.validate()?;
    let tasks = inst.sources.len() as f64;
    let mut source = Vec::with_capacity(inst.representations.len());
    let mut target = Vec::with_capacity(inst.representations.len());
    let mut source_inf = Vec::with_capacity(inst.representations.len());
    let mut target_inf = Vec::with_capacity(inst.representations.len());
    for h in 0..inst.representations.len() {
        let per_task: Vec<Vec<f64>> = inst
            .sources
            .iter()
            .map(|&truth| {
                (0..inst.source_functions.len())
                    .map(|f| inst.excess(&inst.source_functions, f, h, truth))
                    .collect()
            })
            .collect();
        let avg = per_task.iter().map(|row| min(row)).sum::<f64>() / tasks;
        let ta: Vec<f64> = (0..inst.target_functions.len())
            .map(|f| inst.excess(&inst.target_functions, f, h, inst.target))
            .collect();
        source_inf.push(avg);
        target_inf.push(min(&ta));
        source.push(per_task);
        target.push(ta);
    }
    Ok(ExcessTable {
        source,
        target,
        source_inf,
        target_inf,
    })
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityCertificate {
    pub nu_hat: Ratio,
    pub mu: f64,
    pub worst_h: usize,
    pub worst_target: Option<usize>,
    /// `E_ta(h) / (E_so(h) + μ/ν̂)` per representation.
    pub ratios: Vec<Ratio>,
}

const BISECTION_ITERS: usize = 60;
const MAX_DOUBLINGS: usize = 200;

/// Smallest `ν ≥ 0` with `a_h ≤ ν b_h + μ` for every pair, by bisection.
/// `None` when some `b_h = 0` has `a_h > μ`.
fn minimal_nu(a: &[f64], b: &[f64], mu: f64, nu_cap: f64) -> Option<f64> {
    let feasible = |nu: f64| a.iter().zip(b).all(|(&ah, &bh)| ah <= nu * bh + mu);
    if a.iter().zip(b).any(|(&ah, &bh)| bh == 0.0 && ah > mu) {
        return None;
    }
    if feasible(0.0) {
        return Some(0.0);
    }
    let mut hi = nu_cap;
    let mut doublings = 0;
    while !feasible(hi) {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Transfer ratio of the instance's target truth for fixed `μ`. `nu_cap`
/// seeds the bisection bracket and is doubled until it is feasible.
pub fn transfer_ratio(inst: &FiniteInstance, mu: f64, nu_cap: f64) -> Result<DiversityCertificate> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::contract("mu must be finite and non-negative"));
    }
    if !(nu_cap > 0.0) || !nu_cap.is_finite() {
        return Err(Error::contract("nu_cap must be positive and finite"));
    }
    let table = excess_table(inst)?;
    Ok(certificate_from(&table.target_inf, &table.source_inf, mu, nu_cap))
}

fn certificate_from(a: &[f64], b: &[f64], mu: f64, nu_cap: f64) -> DiversityCertificate {
    let nu = minimal_nu(a, b, mu, nu_cap);
    let ratios: Vec<Ratio> = a
        .iter()
        .zip(b)
        .map(|(&ah, &bh)| match nu {
            Some(nu) if nu > 0.0 => Ratio::of(ah, bh + mu / nu),
            // ν = 0 makes μ/ν infinite unless μ = 0.
            Some(_) if mu > 0.0 => Ratio::Finite(0.0),
            _ => Ratio::of(ah, bh),
        })
        .collect();
    let worst_h = ratios
        .iter()
        .enumerate()
        .fold((0, Ratio::Finite(f64::NEG_INFINITY)), |best, (h, r)| {
            if r.as_f64() > best.1.as_f64() {
                (h, *r)
            } else {
                best
            }
        })
        .0;
    DiversityCertificate {
        nu_hat: nu.map_or(Ratio::Infinite, Ratio::Finite),
        mu,
        worst_h,
        worst_target: None,
        ratios,
    }
}

/// Supremum of [`transfer_ratio`] over every target truth in the target
/// class.
pub fn diversity_certificate(inst: &FiniteInstance, mu: f64, nu_cap: f64) -> Result<DiversityCertificate> {
    let mut best: Option<DiversityCertificate> = None;
    for t in 0..inst.target_functions.len() {
        let mut cert = transfer_ratio(&inst.with_target(t), mu, nu_cap)?;
        cert.worst_target = Some(t);
        let better = match &best {
            None => true,
            Some(b) => cert.nu_hat.as_f64() > b.nu_hat.as_f64(),
        };
        if better {
            best = Some(cert);
        }
    }
    best.ok_or_else(|| Error::contract("target class is empty"))
}

/// First source-optimal representation that is strictly suboptimal for the
/// target, if any.
pub fn negative_transfer_witness(inst: &FiniteInstance) -> Result<Option<usize>> {
    let table = excess_table(inst)?;
    let best = min(&table.source_inf);
    Ok((0..table.source_inf.len()).find(|&h| table.source_inf[h] <= best + ZERO_TOL && table.target_inf[h] > ZERO_TOL))
}

/// Source-class size limit for [`stack_multi_output`].
pub const DEFAULT_STACK_CAP: usize = 1 << 20;

/// Combines single-output tasks that share the input distribution, the
/// representation class and both prediction classes into one instance with
/// one source task per input.
pub fn combine_tasks(tasks: &[FiniteInstance]) -> Result<FiniteInstance> {
    let first = tasks.first().ok_or_else(|| Error::contract("no tasks to combine"))?;
    first.validate()?;
    let mut sources = Vec::with_capacity(tasks.len());
    for t in tasks {
        t.validate()?;
        let same = t.weights == first.weights
            && t.features == first.features
            && t.representations == first.representations
            && t.source_functions == first.source_functions
            && t.target_functions == first.target_functions
            && t.target == first.target
            && t.true_rep == first.true_rep;
        if !same {
            return Err(Error::contract("tasks must share the distribution, representations and classes"));
        }
        if t.sources.len() != 1 {
            return Err(Error::contract("each task must have exactly one source"));
        }
        sources.push(t.sources[0]);
    }
    Ok(FiniteInstance {
        sources,
        ..first.clone()
    })
}

/// Stacks the `K` source tasks of `inst` (scalar outputs from one class
/// `M`) into a single `K`-output task over `M^{⊗K}`.
///
/// If the `K` tasks are `(ν, μ)`-transferable, the stacked task is
/// `(ν/K, μ)`-transferable: its source excess is the sum of the `K`
/// per-task excesses, so `a_h ≤ (ν/K) Σ_k b_h^k + μ`. The offset does not
/// shrink with `K` (see `stacked_offset_does_not_shrink` below).
pub fn stack_multi_output(inst: &FiniteInstance, nu: f64, mu: f64, size_cap: usize) -> Result<(FiniteInstance, (f64, f64))> {
    inst.validate()?;
    let k = inst.sources.len();
    let m = inst.source_functions.len();
    if output_dim(&inst.source_functions, "source", inst.features.len())? != 1 {
        return Err(Error::contract("stacking needs single-output source functions"));
    }
    let size = (m as u128).checked_pow(k as u32).filter(|&s| s <= size_cap as u128);
    let size = size.ok_or_else(|| Error::contract(format!("product class |M|^K = {m}^{k} exceeds the cap {size_cap}")))? as usize;
    let mut stacked = Vec::with_capacity(size);
    let mut truth = 0;
    for idx in 0..size {
        // Digit j of idx in base m selects the function for coordinate j.
        let mut rest = idx;
        let choice: Vec<usize> = (0..k)
            .map(|_| {
                let d = rest % m;
                rest /= m;
                d
            })
            .collect();
        if choice == inst.sources {
            truth = idx;
        }
        let table = (0..inst.features.len())
            .map(|z| choice.iter().map(|&f| inst.source_functions[f][z][0]).collect())
            .collect();
        stacked.push(table);
    }
    let out = FiniteInstance {
        source_functions: stacked,
        sources: vec![truth],
        ..inst.clone()
    };
    Ok((out, (nu / k as f64, mu)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlCheck {
    pub kl: Ratio,
    pub lower: f64,
    pub upper: f64,
    pub ok: bool,
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!("{name} must be a non-empty vector of non-negative reals")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Evaluates `½(Σ|p−q|)² ≤ KL(p‖q) ≤ Σ(p−q)²/b²` with slack `1e-12`.
/// `min p ≥ b > 0` is required. When `q_i = 0 < p_i` the divergence is
/// infinite and only the lower leg is checked.
pub fn kl_sandwich_check(p: &[f64], q: &[f64], b: f64) -> Result<KlCheck> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(Error::Shape {
            what: "distribution pair",
            expected: p.len(),
            got: q.len(),
        });
    }
    if !(b > 0.0) || min(p) < b {
        return Err(Error::contract(format!("need min p ≥ b > 0, got b = {b}")));
    }
    let mut kl = 0.0;
    let mut infinite = false;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            infinite = true;
            break;
        }
        kl += pi * (pi / qi).ln();
    }
    let l1: f64 = p.iter().zip(q).map(|(a, c)| (a - c).abs()).sum();
    let lower = 0.5 * l1 * l1;
    let upper = p.iter().zip(q).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / (b * b);
    const SLACK: f64 = 1e-12;
    let (kl, ok) = if infinite {
        (Ratio::Infinite, true)
    } else {
        (Ratio::Finite(kl), lower <= kl + SLACK && kl <= upper + SLACK)
    };
    Ok(KlCheck { kl, lower, upper, ok })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    /// The loss is `c`-strongly convex: divide by `c`.
    StronglyConvex,
    /// The loss is `c`-smooth: multiply by `c`.
    Smooth,
}

pub fn loss_conversion(nu: f64, mu: f64, c: f64, direction: LossDirection) -> Result<(f64, f64)> {
    if !(c > 0.0) {
        return Err(Error::contract("conversion constant must be positive"));
    }
    Ok(match direction {
        LossDirection::StronglyConvex => (nu / c, mu / c),
        LossDirection::Smooth => (nu * c, mu * c),
    })
}

/// `(2 B*² B⁴ ν, B*² μ)`.
pub fn softmax_ce_conversion(nu: f64, mu: f64, b: f64, b_star: f64) -> Result<(f64, f64)> {
    if !(b >= 1.0 && b_star >= 1.0) {
        return Err(Error::contract("B and B* must be at least 1"));
    }
    let bs2 = b_star * b_star;
    Ok((2.0 * bs2 * b.powi(4) * nu, bs2 * mu))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdRankReport {
    pub max_error: f64,
    pub holds: bool,
}

/// Round-off allowance when comparing an evaluated error against `μ`.
const EVAL_SLACK: f64 = 1e-12;

/// Checks `|f(x) − ⟨w(f), φ(x)⟩| ≤ μ` on a grid. `values[f][x]` are the
/// class values, `phi[x]` the embedding and `w[f]` the weights. Norm
/// preconditions `‖φ(x)‖ ≤ 1` and `‖w(f)‖ ≤ R` are checked first.
pub fn idrank_certificate(values: &[Vec<f64>], phi: &[Vec<f64>], w: &[Vec<f64>], r: f64, mu: f64) -> Result<IdRankReport> {
    const NORM_SLACK: f64 = 1e-12;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if values.len() != w.len() {
        return Err(Error::Shape {
            what: "id-rank weights",
            expected: values.len(),
            got: w.len(),
        });
    }
    let dim = phi.first().map_or(0, Vec::len);
    for (x, p) in phi.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Shape {
                what: "id-rank embedding",
                expected: dim,
                got: p.len(),
            });
        }
        if norm(p) > 1.0 + NORM_SLACK {
            return Err(Error::CertificateInvalid(format!("‖φ(x_{x})‖ = {} exceeds 1", norm(p))));
        }
    }
    for (f, wf) in w.iter().enumerate() {
        if wf.len() != dim {
            return Err(Error::Shape {
                what: "id-rank weight vector",
                expected: dim,
                got: wf.len(),
            });
        }
        if norm(wf) > r + NORM_SLACK {
            return Err(Error::CertificateInvalid(format!("‖w(f_{f})‖ = {} exceeds R = {r}", norm(wf))));
        }
    }
    let mut max_error: f64 = 0.0;
    for (vals, wf) in values.iter().zip(w) {
        if vals.len() != phi.len() {
            return Err(Error::Shape {
                what: "id-rank grid",
                expected: phi.len(),
                got: vals.len(),
            });
        }
        for (v, p) in vals.iter().zip(phi) {
            let dot: f64 = wf.iter().zip(p).map(|(a, b)| a * b).sum();
            max_error = max_error.max((v - dot).abs());
        }
    }
    Ok(IdRankReport {
        max_error,
        holds: max_error <= mu + EVAL_SLACK,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisCertificate {
    pub nu: f64,
    pub mu: f64,
    pub rank: usize,
}

/// Tasks whose weight vectors span the `d`-dimensional embedding space are
/// `(d, μ)`-diverse over a class of id-rank `d` with accuracy `μ`.
pub fn basis_task_diversity(w: &[Vec<f64>], mu: f64) -> Result<BasisCertificate> {
    let d = w.first().map_or(0, Vec::len);
    if d == 0 || w.iter().any(|v| v.len() != d) {
        return Err(Error::contract("weight vectors must share a positive dimension"));
    }
    let m = DMatrix::from_fn(w.len(), d, |i, j| w[i][j]);
    let rank = m.rank(1e-10);
    if rank < d {
        return Err(Error::contract(format!("task weights have rank {rank}, need {d}")));
    }
    Ok(BasisCertificate { nu: d as f64, mu, rank })
}
