//! Eluder dimension of finite function classes.
//!
//! A point `x` is ε-dependent on a sequence when every pair `(f, f̃)` with
//! `Σ_i ‖f(x_i) − f̃(x_i)‖² ≤ ε²` also has `‖f(x) − f̃(x)‖ ≤ ε`. Working with
//! `t = ε'²`, `x` is ε'-independent of a prefix exactly when `t` lies in
//! `[S_p, g_p(x))` for some pair `p`, where `S_p` is the prefix sum of
//! squared gaps and `g_p(x)` the squared gap at `x`. The longest-sequence
//! search tracks the set of feasible `t ≥ ε²` as a union of such
//! intervals, which makes the "for some ε' ≥ ε" quantifier exact.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::ratio::Ratio;

pub const DEFAULT_NODE_CAP: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteClass {
    pub domain: Vec<String>,
    pub functions: Vec<String>,
    /// `table[f][x]`; scalar entries are accepted on input.
    #[serde(deserialize_with = "scalar_or_vector_table")]
    pub table: Vec<Vec<Vec<f64>>>,
}

fn scalar_or_vector_table<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<Vec<f64>>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Scalar(f64),
        Vector(Vec<f64>),
    }
    let raw: Vec<Vec<Entry>> = Vec::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|e| match e {
                    Entry::Scalar(v) => vec![v],
                    Entry::Vector(v) => v,
                })
                .collect()
        })
        .collect())
}

impl FiniteClass {
    /// Class with generated labels `x0, x1, …` and `f0, f1, …`.
    pub fn from_table(table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_x = table.first().map_or(0, Vec::len);
        let c = FiniteClass {
            domain: (0..n_x).map(|i| format!("x{i}")).collect(),
            functions: (0..table.len()).map(|i| format!("f{i}")).collect(),
            table,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_scalars(table: &[Vec<f64>]) -> Result<Self> {
        FiniteClass::from_table(table.iter().map(|r| r.iter().map(|&v| vec![v]).collect()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.table.len() != self.functions.len() {
            return Err(Error::contract("one table row per function label is required"));
        }
        let dim = self.table.first().and_then(|r| r.first()).map_or(0, Vec::len);
        for row in &self.table {
            if row.len() != self.domain.len() {
                return Err(Error::contract("table rows must cover the whole domain"));
            }
            if row.iter().any(|v| v.len() != dim || v.iter().any(|a| !a.is_finite())) {
                return Err(Error::contract("table entries must be finite with a common dimension"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let c: FiniteClass = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        c.validate().map_err(|e| parse(e.to_string()))?;
        Ok(c)
    }

    pub fn n_functions(&self) -> usize {
        self.table.len()
    }

    pub fn n_points(&self) -> usize {
        self.domain.len()
    }

    fn sq_gap(&self, f: usize, g: usize, x: usize) -> f64 {
        self.table[f][x]
            .iter()
            .zip(&self.table[g][x])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `gaps[x][p]` over unordered pairs `p = (f, g)`, `f < g`.
    fn pair_gaps(&self) -> Vec<Vec<f64>> {
        let n = self.n_functions();
        (0..self.n_points())
            .map(|x| {
                let mut row = Vec::with_capacity(n * n.saturating_sub(1) / 2);
                for f in 0..n {
                    for g in f + 1..n {
                        row.push(self.sq_gap(f, g, x));
                    }
                }
                row
            })
            .collect()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::contract("epsilon must be positive and finite"));
    }
    Ok(())
}

/// Whether `x` is `(F, ε)`-dependent on `seq` (indices into the domain).
pub fn is_dependent(x: usize, seq: &[usize], class: &FiniteClass, eps: f64) -> Result<bool> {
    check_eps(eps)?;
    let n_x = class.n_points();
    if x >= n_x || seq.iter().any(|&s| s >= n_x) {
        return Err(Error::contract("point index outside the domain"));
    }
    let e2 = eps * eps;
    let gaps = class.pair_gaps();
    Ok((0..gaps.get(x).map_or(0, Vec::len)).all(|p| {
        let s: f64 = seq.iter().map(|&i| gaps[i][p]).sum();
        s > e2 || gaps[x][p] <= e2
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Longest,
    ShortestCover,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EluderCertificate {
    pub dim: usize,
    pub witness: Vec<usize>,
    pub witness_labels: Vec<String>,
    pub epsilon: f64,
    /// For the longest variant, the smallest `ε' ≥ ε` at which every
    /// witness element is independent of its predecessors.
    pub epsilon_prime: Option<f64>,
    pub variant: Variant,
    pub nodes: u64,
}

/// Sorted, disjoint half-open intervals `[a, b)`.
#[derive(Clone, Debug, PartialEq)]
struct IntervalSet(Vec<(f64, f64)>);

impl IntervalSet {
    fn from_unsorted(mut v: Vec<(f64, f64)>) -> Self {
        v.retain(|(a, b)| a < b);
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        IntervalSet(out)
    }

    fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a1, b1) = self.0[i];
            let (a2, b2) = other.0[j];
            let (a, b) = (a1.max(a2), b1.min(b2));
            if a < b {
                out.push((a, b));
            }
            if b1 < b2 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet(out)
    }

    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn min(&self) -> Option<f64> {
        self.0.first().map(|p| p.0)
    }
}

struct Search<'a> {
    gaps: &'a [Vec<f64>],
    cap: u64,
    nodes: u64,
    best: Vec<usize>,
    best_t: Option<f64>,
}

impl Search<'_> {
    fn independence_set(&self, x: usize, sums: &[f64]) -> IntervalSet {
        IntervalSet::from_unsorted(sums.iter().zip(&self.gaps[x]).map(|(&s, &g)| (s, g)).collect())
    }

    fn dfs(&mut self, seq: &mut Vec<usize>, used: &mut [bool], sums: &mut [f64], feasible: &IntervalSet) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.cap {
            return Err(Error::BudgetExceeded { cap: self.cap });
        }
        if seq.len() > self.best.len() {
            self.best = seq.clone();
            self.best_t = feasible.min();
        }
        let remaining = used.iter().filter(|u| !**u).count();
        if seq.len() + remaining <= self.best.len() {
            return Ok(());
        }
        for x in 0..used.len() {
            if used[x] {
                continue;
            }
            let next = feasible.intersect(&self.independence_set(x, sums));
            if next.is_empty() {
                continue;
            }
            used[x] = true;
            seq.push(x);
            for (s, g) in sums.iter_mut().zip(&self.gaps[x]) {
                *s += g;
            }
            let r = self.dfs(seq, used, sums, &next);
            for (s, g) in sums.iter_mut().zip(&self.gaps[x]) {
                *s -= g;
            }
            seq.pop();
            used[x] = false;
            r?;
        }
        Ok(())
    }
}

/// Length of the longest sequence in which every element is
/// `ε'`-independent of its predecessors for a common `ε' ≥ ε`. Ties go to
/// the lexicographically smallest sequence of domain indices.
pub fn eluder_dimension(class: &FiniteClass, eps: f64, node_cap: u64) -> Result<EluderCertificate> {
    check_eps(eps)?;
    class.validate()?;
    let gaps = class.pair_gaps();
    let n_pairs = gaps.first().map_or(0, Vec::len);
    let mut search = Search {
        gaps: &gaps,
        cap: node_cap,
        nodes: 0,
        best: Vec::new(),
        best_t: None,
    };
    let start = IntervalSet(vec![(eps * eps, f64::INFINITY)]);
    let mut seq = Vec::new();
    let mut used = vec![false; class.n_points()];
    let mut sums = vec![0.0; n_pairs];
    search.dfs(&mut seq, &mut used, &mut sums, &start)?;
    let witness = search.best;
    Ok(EluderCertificate {
        dim: witness.len(),
        witness_labels: witness.iter().map(|&x| class.domain[x].clone()).collect(),
        epsilon_prime: if witness.is_empty() { None } else { search.best_t.map(f64::sqrt) },
        witness,
        epsilon: eps,
        variant: Variant::Longest,
        nodes: search.nodes,
    })
}

/// Length of the shortest sequence on which every domain point is
/// `(F, ε)`-dependent, by breadth-first search over subsets in size order.
pub fn shortest_cover_dimension(class: &FiniteClass, eps: f64, node_cap: u64) -> Result<EluderCertificate> {
    check_eps(eps)?;
    class.validate()?;
    let e2 = eps * eps;
    let gaps = class.pair_gaps();
    let n = class.n_points();
    let n_pairs = gaps.first().map_or(0, Vec::len);
    let mut nodes = 0u64;
    for size in 0..=n {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            nodes += 1;
            if nodes > node_cap {
                return Err(Error::BudgetExceeded { cap: node_cap });
            }
            let sums: Vec<f64> = (0..n_pairs).map(|p| combo.iter().map(|&i| gaps[i][p]).sum()).collect();
            let covers = (0..n).all(|x| (0..n_pairs).all(|p| sums[p] > e2 || gaps[x][p] <= e2));
            if covers {
                return Ok(EluderCertificate {
                    dim: size,
                    witness_labels: combo.iter().map(|&x| class.domain[x].clone()).collect(),
                    witness: combo,
                    epsilon: eps,
                    epsilon_prime: None,
                    variant: Variant::ShortestCover,
                    nodes,
                });
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    unreachable!("the whole domain always covers itself")
}

/// Advances `c` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Swaps the roles of points and functions: the dual of `F` has the
/// functions of `F` as its domain and one function `f ↦ f(x)` per point.
pub fn dual_class(class: &FiniteClass) -> FiniteClass {
    let table = (0..class.n_points())
        .map(|x| (0..class.n_functions()).map(|f| class.table[f][x].clone()).collect())
        .collect();
    FiniteClass {
        domain: class.functions.clone(),
        functions: class.domain.clone(),
        table,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialTask {
    pub next_task: usize,
    pub x1: usize,
    pub x2: usize,
    /// `Σ_i inf_f E_i(f, h)` over the chosen tasks.
    pub source_sum: f64,
    pub source_average: f64,
    pub target_excess: f64,
    pub ratio: Ratio,
}

/// Two-point construction for the chosen tasks `f_1..f_t` (function
/// indices). Finds the first `f_{t+1}` and points `x1 < x2` with
/// `Σ_i ‖f_i(x1) − f_i(x2)‖² ≤ ε²` and `‖f_{t+1}(x1) − f_{t+1}(x2)‖² > ε²`.
/// The input is uniform on two atoms which `h*` sends to `x1` and `x2`,
/// while the candidate `h` sends both to `x1`. Excesses are exact infima
/// over the class.
pub fn adversarial_task(class: &FiniteClass, chosen: &[usize], eps: f64) -> Result<AdversarialTask> {
    check_eps(eps)?;
    class.validate()?;
    if chosen.is_empty() || chosen.iter().any(|&f| f >= class.n_functions()) {
        return Err(Error::contract("chosen tasks must be a non-empty list of function indices"));
    }
    let e2 = eps * eps;
    let n = class.n_points();
    let found = (0..class.n_functions()).find_map(|f| {
        (0..n).find_map(|x1| {
            (x1 + 1..n)
                .find(|&x2| {
                    let s: f64 = chosen.iter().map(|&c| sq_dist(&class.table[c][x1], &class.table[c][x2])).sum();
                    s <= e2 && sq_dist(&class.table[f][x1], &class.table[f][x2]) > e2
                })
                .map(|x2| (f, x1, x2))
        })
    });
    let (next, x1, x2) = found.ok_or_else(|| Error::contract("no function is independent of the chosen tasks"))?;
    let two_point = |truth: usize| -> f64 {
        (0..class.n_functions())
            .map(|f| {
                let pred = &class.table[f][x1];
                0.5 * sq_dist(pred, &class.table[truth][x1]) + 0.5 * sq_dist(pred, &class.table[truth][x2])
            })
            .fold(f64::INFINITY, f64::min)
    };
    let source_sum: f64 = chosen.iter().map(|&c| two_point(c)).sum();
    let t = chosen.len() as f64;
    let target_excess = two_point(next);
    Ok(AdversarialTask {
        next_task: next,
        x1,
        x2,
        source_sum,
        source_average: source_sum / t,
        target_excess,
        ratio: Ratio::of(target_excess, source_sum / t),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}
