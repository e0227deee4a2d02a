//! Packing-based lower-bound instances.
//!
//! Every instance shares one skeleton. A packing `U` of unit vectors with
//! pairwise inner products at most `1 − ε` indexes a family `f_w`. The
//! source tasks use parameters `w_t ∈ U` and the vanishing set `V ⊂ U`
//! holds the points away from every source. The true representation sends
//! every input to one `u ∈ V`, the candidate representation is the identity
//! on `V' = V ∖ {u}`, and the input law is uniform on `V'`. The target task
//! uses `f_u`, so the candidate must reproduce `f_u(u)` on points where it
//! can be large on at most one of them.
//!
//! For the ReLU family `[⟨x, w⟩ − (1 − ε/4)]₊` no `w` in the unit ball
//! clears the threshold at two packing points: if it did, both would lie
//! within `√(ε/2)` of `w`, hence within `√(2ε)` of each other, while
//! `‖a − b‖² = 2 − 2⟨a, b⟩ ≥ 2ε`. The best candidate therefore fits one
//! point of `V'` and pays `(ε/4)²` on each of the others.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::FiniteInstance;
use crate::error::{Error, Result};
use crate::netcore::Activation;
use crate::ratio::Ratio;
use crate::rng;

const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packing {
    pub vectors: Vec<Vec<f64>>,
    pub eps: f64,
    /// Size asked of the greedy strategy; `None` for fixed constructions.
    pub requested: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PackingStrategy {
    /// `{±e_1, …, ±e_d}`.
    Axes,
    /// Rejection sampling of uniform directions.
    Greedy { target: usize, budget: usize, seed: u64 },
}

impl Packing {
    pub fn from_vectors(vectors: Vec<Vec<f64>>, eps: f64) -> Result<Self> {
        let p = Packing {
            vectors,
            eps,
            requested: None,
        };
        p.verify()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// True when the greedy strategy stopped short of the requested size.
    pub fn is_partial(&self) -> bool {
        self.requested.is_some_and(|r| r > self.len())
    }

    /// Exhaustive pairwise check of the unit-norm and separation invariants.
    pub fn verify(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::contract(format!("packing eps {} is outside (0, 1]", self.eps)));
        }
        let d = self.dim();
        for (i, u) in self.vectors.iter().enumerate() {
            if u.len() != d || d == 0 {
                return Err(Error::contract("packing vectors must share a positive dimension"));
            }
            if (dot(u, u).sqrt() - 1.0).abs() > UNIT_TOL {
                return Err(Error::contract(format!("packing vector {i} is not a unit vector")));
            }
            for (j, v) in self.vectors.iter().enumerate().skip(i + 1) {
                let ip = dot(u, v);
                if ip > 1.0 - self.eps + UNIT_TOL {
                    return Err(Error::contract(format!(
                        "vectors {i} and {j} have inner product {ip} above {}",
                        1.0 - self.eps
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the vector closest to `v`, if it matches within `1e-9`.
    pub fn index_of(&self, v: &[f64]) -> Option<usize> {
        self.vectors
            .iter()
            .position(|u| u.len() == v.len() && u.iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-9))
    }
}

pub fn make_packing(d: usize, eps: f64, strategy: PackingStrategy) -> Result<Packing> {
    if d == 0 {
        return Err(Error::contract("packing dimension must be at least 1"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::contract(format!("packing eps {eps} is outside (0, 1]")));
    }
    let packing = match strategy {
        PackingStrategy::Axes => Packing {
            vectors: (0..d)
                .flat_map(|i| [axis(d, i, 1.0), axis(d, i, -1.0)])
                .collect(),
            eps,
            requested: None,
        },
        PackingStrategy::Greedy { target, budget, seed } => {
            let mut s = rng::stream(seed, "packing", 0);
            let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(target);
            let mut rejections = 0;
            while vectors.len() < target && rejections < budget {
                let v = random_direction(d, &mut s);
                if vectors.iter().all(|u| dot(u, &v) <= 1.0 - eps) {
                    vectors.push(v);
                } else {
                    rejections += 1;
                }
            }
            Packing {
                vectors,
                eps,
                requested: Some(target),
            }
        }
    };
    packing.verify()?;
    Ok(packing)
}

fn axis(d: usize, i: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = sign;
    v
}

/// Parses `e3` or `-e1` (1-based) into the matching axes-packing index.
pub fn axis_index(d: usize, name: &str) -> Result<usize> {
    let (neg, rest) = match name.trim().strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, name.trim().trim_start_matches('+')),
    };
    let i: usize = rest
        .strip_prefix('e')
        .and_then(|n| n.parse().ok())
        .filter(|&i| i >= 1 && i <= d)
        .ok_or_else(|| Error::contract(format!("`{name}` is not an axis of R^{d}")))?;
    Ok(2 * (i - 1) + usize::from(neg))
}

fn random_direction<R: rand::Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn relu_family_eval(w: &[f64], x: &[f64], eps: f64) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::Shape {
            what: "relu family input",
            expected: w.len(),
            got: x.len(),
        });
    }
    if norm(w) > 1.0 + UNIT_TOL || norm(x) > 1.0 + UNIT_TOL {
        return Err(Error::contract("parameters and inputs must lie in the unit ball"));
    }
    Ok(Family::Relu { eps }.eval(w, x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Family {
    /// `x ↦ [⟨x, w⟩ − (1 − ε/4)]₊`.
    Relu { eps: f64 },
    /// `x ↦ σ(8(x₁ − x₂)⟨x, w⟩ − 7x₁ + 8x₂)`; equals `σ(x₁)` at `⟨x, w⟩ = 1`
    /// and `σ(x₂)` at `⟨x, w⟩ = 7/8`.
    General { sigma: Activation, x1: f64, x2: f64, m: Ratio },
}

impl Family {
    pub fn threshold(&self) -> f64 {
        match *self {
            Family::Relu { eps } => 1.0 - eps / 4.0,
            Family::General { .. } => 7.0 / 8.0,
        }
    }

    pub fn eval(&self, w: &[f64], x: &[f64]) -> f64 {
        let ip = dot(w, x);
        match *self {
            Family::Relu { eps } => (ip - (1.0 - eps / 4.0)).max(0.0),
            Family::General { sigma, x1, x2, .. } => sigma.apply(8.0 * (x1 - x2) * ip - 7.0 * x1 + 8.0 * x2),
        }
    }

    /// Separation the instance must reach: `ε²/32` for ReLU, `(M − 1)²/8`
    /// for the general family.
    pub fn separation(&self) -> f64 {
        match *self {
            Family::Relu { eps } => eps * eps / 32.0,
            Family::General { m, .. } => m.finite().map_or(f64::INFINITY, |m| (m - 1.0).powi(2) / 8.0),
        }
    }
}

/// Lifts `x` to `(x, 1)` so the family's offset becomes a weight.
pub fn homogenize_input(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(1.0);
    v
}

/// Lifts `w` to `(w, −threshold)`; then `[⟨(x, 1), (w, −b)⟩]₊` reproduces
/// the ReLU family without a bias term.
pub fn homogenize_param(w: &[f64], family: &Family) -> Vec<f64> {
    let mut v = w.to_vec();
    v.push(-family.threshold());
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    /// Directions searched on the sphere; exact enumeration when `d = 1`.
    pub directions: usize,
    /// Radii tried along each direction, on top of `w = 0`.
    pub radii: Vec<f64>,
    /// Coordinate-descent sweeps from the best grid point.
    pub refine_sweeps: usize,
    pub seed: u64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            directions: 10_000,
            radii: vec![1.0, 0.75, 0.5, 0.25],
            refine_sweeps: 200,
            seed: 0,
        }
    }
}

/// Deterministic direction set: both signs for `d = 1`, a uniform circle
/// for `d = 2`, a Fibonacci sphere for `d = 3`, seeded Gaussian directions
/// above.
pub fn grid_directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut s = rng::stream(seed, "hardness-grid", d as u64);
            (0..n).map(|_| random_direction(d, &mut s)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    /// Task average of the per-source infima.
    pub source_excess: f64,
    pub target_excess: f64,
    pub ratio: Ratio,
    pub per_source: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardInstance {
    pub family: Family,
    pub packing: Packing,
    pub source_indices: Vec<usize>,
    pub source_params: Vec<Vec<f64>>,
    pub target_param: Vec<f64>,
    /// Support of the input law on `V'`, as points in the packing.
    pub eval_points: Vec<Vec<f64>>,
    pub eval_weights: Vec<f64>,
    /// Common image `u` of the true representation.
    pub rep_image: Vec<f64>,
    pub measured: Measured,
}

/// Indices of packing points at which every source is below the family's
/// threshold.
pub fn vanishing_set(packing: &Packing, family: &Family, sources: &[usize]) -> Vec<usize> {
    let b = family.threshold();
    (0..packing.len())
        .filter(|&i| {
            sources
                .iter()
                .all(|&s| dot(&packing.vectors[s], &packing.vectors[i]) < b)
        })
        .collect()
}

/// First point of `V` that is not the negation of a source.
pub fn default_target(packing: &Packing, family: &Family, sources: &[usize]) -> Option<usize> {
    let v = vanishing_set(packing, family, sources);
    v.iter()
        .copied()
        .find(|&i| {
            sources
                .iter()
                .all(|&s| dot(&packing.vectors[s], &packing.vectors[i]) > -1.0 + 1e-9)
        })
        .or_else(|| v.first().copied())
}

fn skeleton(packing: &Packing, family: Family, sources: &[usize], target: usize, min_support: usize) -> Result<HardInstance> {
    packing.verify()?;
    if sources.is_empty() {
        return Err(Error::contract("at least one source task is required"));
    }
    if sources.iter().chain([&target]).any(|&i| i >= packing.len()) {
        return Err(Error::contract("source or target index outside the packing"));
    }
    let v = vanishing_set(packing, &family, sources);
    if !v.contains(&target) {
        return Err(Error::contract("the target point must lie in the vanishing set of the sources"));
    }
    let support: Vec<usize> = v.into_iter().filter(|&i| i != target).collect();
    if support.len() < min_support {
        return Err(Error::Infeasible(format!(
            "{} source(s) leave {} evaluation point(s); at least {min_support} needed",
            sources.len(),
            support.len()
        )));
    }
    let n = support.len() as f64;
    Ok(HardInstance {
        family,
        packing: packing.clone(),
        source_indices: sources.to_vec(),
        source_params: sources.iter().map(|&s| packing.vectors[s].clone()).collect(),
        target_param: packing.vectors[target].clone(),
        eval_points: support.iter().map(|&i| packing.vectors[i].clone()).collect(),
        eval_weights: vec![1.0 / n; support.len()],
        rep_image: packing.vectors[target].clone(),
        measured: Measured {
            source_excess: 0.0,
            target_excess: 0.0,
            ratio: Ratio::Finite(0.0),
            per_source: Vec::new(),
        },
    })
}

/// ReLU instance; needs at least two evaluation points since a single one
/// can always be fitted.
pub fn build_relu_hard_instance(packing: &Packing, sources: &[usize], target: usize, grid: &GridSettings) -> Result<HardInstance> {
    let family = Family::Relu { eps: packing.eps };
    let mut inst = skeleton(packing, family, sources, target, 2)?;
    inst.measured = evaluate_instance(&inst, grid);
    let m = &inst.measured;
    if m.source_excess > 1e-9 || m.target_excess < family.separation() - 1e-9 {
        return Err(Error::Infeasible(format!(
            "separation not reached: source {}, target {}",
            m.source_excess, m.target_excess
        )));
    }
    Ok(inst)
}

/// Largest `|σ(x)|` over `[x₂ − 1000, x₂]` on a 0.01 grid.
pub fn left_tail_sup(sigma: Activation, x2: f64) -> f64 {
    (0..=100_000)
        .map(|k| sigma.apply(x2 - 0.01 * k as f64).abs())
        .fold(0.0, f64::max)
}

/// General-activation instance at `ε = ½`. `m` defaults to the measured
/// `|σ(x₁)| / sup_{x ≤ x₂} |σ(x)|`.
pub fn build_general_hard_instance(
    sigma: Activation,
    x1: f64,
    x2: f64,
    m: Option<f64>,
    packing: &Packing,
    sources: &[usize],
    target: usize,
    grid: &GridSettings,
) -> Result<HardInstance> {
    if !(x1 > x2) {
        return Err(Error::contract("x1 must exceed x2"));
    }
    if packing.eps < 0.5 {
        return Err(Error::contract("the packing must separate inner products to at most 1/2"));
    }
    let peak = sigma.apply(x1).abs();
    let tail = left_tail_sup(sigma, x2);
    let measured_m = if tail > 0.0 { peak / tail } else { f64::INFINITY };
    let m = m.unwrap_or(measured_m);
    if !(m >= 1.0) || peak < m * tail * (1.0 - 1e-12) {
        return Err(Error::contract(format!(
            "activation precondition fails: |σ(x1)| = {peak}, sup over x <= x2 = {tail}, M = {m}"
        )));
    }
    let family = Family::General {
        sigma,
        x1,
        x2,
        m: if m.is_finite() { Ratio::Finite(m) } else { Ratio::Infinite },
    };
    let mut inst = skeleton(packing, family, sources, target, 1)?;
    inst.measured = evaluate_instance(&inst, grid);
    if !inst.measured.ratio.at_least(family.separation() - 1e-6) {
        return Err(Error::Infeasible(format!(
            "ratio {} below {}",
            inst.measured.ratio,
            family.separation()
        )));
    }
    Ok(inst)
}

impl HardInstance {
    /// `Σ_x P(x) (f_w(x) − y)²`.
    pub fn objective(&self, w: &[f64], y: f64) -> f64 {
        self.eval_points
            .iter()
            .zip(&self.eval_weights)
            .map(|(x, p)| p * (self.family.eval(w, x) - y).powi(2))
            .sum()
    }

    /// Value of the true function with parameter `w` on the true image `u`.
    pub fn truth(&self, w: &[f64]) -> f64 {
        self.family.eval(w, &self.rep_image)
    }

    /// Analytic candidates: the zero parameter and every ± packing vector.
    pub fn candidates(&self) -> Vec<Vec<f64>> {
        let d = self.packing.dim();
        let mut c = vec![vec![0.0; d]];
        for v in &self.packing.vectors {
            c.push(v.clone());
            c.push(v.iter().map(|a| -a).collect());
        }
        c
    }

    /// Exports the instance with the candidate parameters as a finite
    /// class, for checking against exhaustive enumeration. Feature 0 is
    /// `u`, features `1..` are the evaluation points; representation 0 is
    /// the true one.
    pub fn to_finite_instance(&self) -> FiniteInstance {
        let mut params = self.candidates();
        let mut index = |w: &Vec<f64>| -> usize {
            match params.iter().position(|p| p == w) {
                Some(i) => i,
                None => {
                    params.push(w.clone());
                    params.len() - 1
                }
            }
        };
        let sources: Vec<usize> = self.source_params.iter().map(&mut index).collect();
        let target = index(&self.target_param);
        let mut features = vec![self.rep_image.clone()];
        features.extend(self.eval_points.iter().cloned());
        let table: Vec<Vec<Vec<f64>>> = params
            .iter()
            .map(|w| features.iter().map(|z| vec![self.family.eval(w, z)]).collect())
            .collect();
        let n = self.eval_points.len();
        FiniteInstance {
            weights: self.eval_weights.clone(),
            points: Some(self.eval_points.clone()),
            features,
            representations: vec![vec![0; n], (1..=n).collect()],
            source_functions: table.clone(),
            target_functions: table,
            sources,
            target,
            true_rep: 0,
        }
    }
}

fn project_ball(w: &mut [f64]) {
    let n = norm(w);
    if n > 1.0 {
        w.iter_mut().for_each(|a| *a /= n);
    }
}

/// `inf_w` over the unit ball of `objective(w, y)`: candidates and the
/// direction × radius grid, reduced by (value, then lexicographic `w`),
/// followed by coordinate descent from the minimiser.
fn infimum(inst: &HardInstance, y: f64, grid: &GridSettings) -> f64 {
    let d = inst.packing.dim();
    let dirs = grid_directions(d, grid.directions, grid.seed);
    let mut points = inst.candidates();
    for r in &grid.radii {
        points.extend(dirs.iter().map(|u| u.iter().map(|a| a * r).collect::<Vec<f64>>()));
    }
    let best = points
        .par_iter()
        .map(|w| (inst.objective(w, y), w))
        .reduce_with(|a, b| match a.0.total_cmp(&b.0) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.1.iter().zip(b.1).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater) {
                    b
                } else {
                    a
                }
            }
        })
        .expect("the candidate set is never empty");
    let (mut value, w) = best;
    let mut w = w.clone();
    let mut step = 0.05;
    for _ in 0..grid.refine_sweeps {
        let mut improved = false;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut trial = w.clone();
                trial[i] += sign * step;
                project_ball(&mut trial);
                let v = inst.objective(&trial, y);
                if v < value {
                    value = v;
                    w = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
            if step < 1e-12 {
                break;
            }
        }
    }
    value
}

/// Source excess (task average), target excess and their ratio.
pub fn evaluate_instance(inst: &HardInstance, grid: &GridSettings) -> Measured {
    let per_source: Vec<f64> = inst
        .source_params
        .iter()
        .map(|w| infimum(inst, inst.truth(w), grid))
        .collect();
    let source_excess = per_source.iter().sum::<f64>() / per_source.len().max(1) as f64;
    let target_excess = infimum(inst, inst.truth(&inst.target_param), grid);
    Measured {
        source_excess,
        target_excess,
        ratio: Ratio::of(target_excess, source_excess),
        per_source,
    }
}
