//! Synthetic ground truths and noisy regression datasets.
//!
//! A ground truth is a shared trunk `h*` (depth `k`, width `n_u`, ReLU by default),
//! one or more source prediction stacks (depth `k_so`, output `p`) and a
//! scalar target stack (depth `k_ta`). Weights are `N(0, 1/n_u)` (standard
//! deviation `1/√n_u`), biases are zero. A depth-one source head with
//! `p ≤ n_u` gets orthonormal rows instead.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Activation, Dense, Matrix, Mlp};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_in: usize,
    pub n_u: usize,
    pub k: usize,
    pub k_so: usize,
    pub k_ta: usize,
    pub p: usize,
    /// Number of source tasks.
    pub tasks: usize,
    /// ReLU on the last source layer instead of the identity.
    pub terminal_relu: bool,
    /// Activation of the trunk and of hidden head layers.
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            d_in: 4,
            n_u: 4,
            k: 5,
            k_so: 1,
            k_ta: 1,
            p: 4,
            tasks: 1,
            terminal_relu: false,
            activation: Activation::Relu,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_in, self.n_u, self.k, self.k_so, self.k_ta, self.p, self.tasks];
        if dims.contains(&0) {
            return Err(Error::contract("all architecture dimensions must be at least 1"));
        }
        if self.activation == Activation::Sigmoid {
            return Err(Error::contract("training networks use relu or identity activations"));
        }
        Ok(())
    }

    /// Layer widths of the trunk: `d_in → n_u → … → n_u`.
    pub fn trunk_widths(&self) -> Vec<usize> {
        std::iter::once(self.d_in).chain(std::iter::repeat_n(self.n_u, self.k)).collect()
    }

    /// Layer widths of a prediction stack of the given depth and output.
    pub fn head_widths(&self, depth: usize, out: usize) -> Vec<usize> {
        let mut w = vec![self.n_u; depth];
        w.push(out);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Source(usize),
    Target,
}

impl Task {
    fn stream_index(self) -> u64 {
        match self {
            Task::Source(t) => t as u64,
            Task::Target => u64::MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub arch: Architecture,
    pub h_star: Mlp,
    pub f_sources: Vec<Mlp>,
    pub f_target: Mlp,
    pub noise_sigma: f64,
    /// Set when an orthonormal source head was impossible (`p > n_u`).
    pub orthonormal_fallback: bool,
}

impl GroundTruth {
    pub fn prediction(&self, task: Task) -> Result<&Mlp> {
        match task {
            Task::Source(t) => self
                .f_sources
                .get(t)
                .ok_or_else(|| Error::contract(format!("no source task {t}"))),
            Task::Target => Ok(&self.f_target),
        }
    }

    /// Noise-free regression function `f ∘ h*` on a batch.
    pub fn mean_function(&self, task: Task, x: &Matrix) -> Result<Matrix> {
        let z = self.h_star.forward_batch(x)?;
        self.prediction(task)?.forward_batch(&z)
    }
}

pub fn make_ground_truth(arch: &Architecture, noise_sigma: f64, seed: u64) -> Result<GroundTruth> {
    arch.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::contract("noise_sigma must be finite and non-negative"));
    }
    let std = 1.0 / (arch.n_u as f64).sqrt();
    let mut trunk_rng = rng::stream(seed, "truth-trunk", 0);
    let act = arch.activation;
    let h_star = gaussian_stack(&arch.trunk_widths(), act, act, std, &mut trunk_rng)?;

    let mut target_rng = rng::stream(seed, "truth-target", 0);
    let f_target = gaussian_stack(
        &arch.head_widths(arch.k_ta, 1),
        act,
        Activation::Identity,
        std,
        &mut target_rng,
    )?;

    let last = if arch.terminal_relu {
        Activation::Relu
    } else {
        Activation::Identity
    };
    let orthonormal = arch.k_so == 1 && arch.p <= arch.n_u;
    let mut f_sources = Vec::with_capacity(arch.tasks);
    for t in 0..arch.tasks {
        let mut r = rng::stream(seed, "truth-source", t as u64);
        let net = if orthonormal {
            let w = orthonormal_rows(arch.p, arch.n_u, &mut r);
            Mlp::new(vec![Dense::new(arch.p, arch.n_u, w, vec![0.0; arch.p], last)?], None)?
        } else {
            gaussian_stack(&arch.head_widths(arch.k_so, arch.p), act, last, std, &mut r)?
        };
        f_sources.push(net);
    }

    Ok(GroundTruth {
        arch: arch.clone(),
        h_star,
        f_sources,
        f_target,
        noise_sigma,
        orthonormal_fallback: arch.k_so == 1 && !orthonormal,
    })
}

fn gaussian_stack<R: Rng>(widths: &[usize], hidden: Activation, last: Activation, std: f64, rng: &mut R) -> Result<Mlp> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|k| {
            let (i, o) = (widths[k], widths[k + 1]);
            let w = (0..i * o).map(|_| normal.sample(rng)).collect();
            Dense::new(o, i, w, vec![0.0; o], if k + 1 == n { last } else { hidden })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers, None)
}

/// `rows × cols` matrix (row-major) with orthonormal rows, `rows ≤ cols`,
/// from the QR factorization of a Gaussian `cols × rows` matrix.
fn orthonormal_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(cols, rows, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(q[(c, r)]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Matrix,
    pub task: Task,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    /// CSV with header `x_0..x_{d-1},y_0..y_{m-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let to_err = |e: csv::Error| Error::contract(format!("csv export failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.inputs.cols())
            .map(|i| format!("x_{i}"))
            .chain((0..self.labels.cols()).map(|j| format!("y_{j}")))
            .collect();
        w.write_record(&header).map_err(to_err)?;
        for r in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(r)
                .iter()
                .chain(self.labels.row(r))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::contract(format!("csv export failed: {e}")))?;
        Ok(())
    }
}

/// Draws `n` rows `x ~ N(0, I)`, `y = f(h*(x)) + σ g`. Rows are drawn one
/// at a time, so a smaller `n` under the same seed yields a prefix.
pub fn sample_dataset(gt: &GroundTruth, task: Task, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("a dataset needs at least one row"));
    }
    let out_dim = gt.prediction(task)?.out_dim();
    let d = gt.arch.d_in;
    let mut r = rng::stream(seed, "dataset", task.stream_index());
    let mut x = Matrix::zeros(n, d);
    let mut noise = Matrix::zeros(n, out_dim);
    for i in 0..n {
        for v in x.row_mut(i) {
            *v = StandardNormal.sample(&mut r);
        }
        for v in noise.row_mut(i) {
            *v = StandardNormal.sample(&mut r);
        }
    }
    let mut y = gt.mean_function(task, &x)?;
    for i in 0..n {
        for (v, g) in y.row_mut(i).iter_mut().zip(noise.row(i)) {
            *v += gt.noise_sigma * g;
        }
    }
    Ok(Dataset { inputs: x, labels: y, task })
}

/// Fresh `N(0, I)` inputs for Monte-Carlo evaluation.
pub fn gaussian_inputs(d: usize, n: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "eval-inputs", 0);
    let data = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    Matrix::from_vec(n, d, data).expect("sizes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_gram(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut g = vec![0.0; rows * rows];
        for a in 0..rows {
            for b in 0..rows {
                g[a * rows + b] = (0..cols).map(|c| w[a * cols + c] * w[b * cols + c]).sum();
            }
        }
        g
    }

    #[test]
    fn default_source_head_is_orthonormal() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 1).unwrap();
        assert!(!gt.orthonormal_fallback);
        let l = &gt.f_sources[0].layers()[0];
        assert_eq!((l.out_dim, l.in_dim), (4, 4));
        let g = rows_gram(&l.weights, 4, 4);
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g[a * 4 + b] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn narrow_orthonormal_head_has_orthonormal_rows() {
        let arch = Architecture {
            p: 2,
            ..Architecture::default()
        };
        let gt = make_ground_truth(&arch, 0.1, 9).unwrap();
        let l = &gt.f_sources[0].layers()[0];
        let g = rows_gram(&l.weights, 2, 4);
        assert!((g[0] - 1.0).abs() < 1e-10 && (g[3] - 1.0).abs() < 1e-10 && g[1].abs() < 1e-10);
    }

    #[test]
    fn wide_head_falls_back_to_gaussian() {
        let arch = Architecture {
            p: 6,
            ..Architecture::default()
        };
        assert!(make_ground_truth(&arch, 0.1, 1).unwrap().orthonormal_fallback);
    }

    #[test]
    fn deep_source_weights_have_expected_spread() {
        let arch = Architecture {
            k_so: 2,
            ..Architecture::default()
        };
        let mut all = Vec::new();
        let mut seed = 0;
        while all.len() < 10_000 {
            let gt = make_ground_truth(&arch, 0.1, seed).unwrap();
            for l in gt.f_sources[0].layers() {
                all.extend_from_slice(&l.weights);
            }
            seed += 1;
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.5).abs() < 0.025, "std {std}");
    }

    #[test]
    fn ground_truth_is_deterministic_and_source_independent() {
        let a = make_ground_truth(&Architecture::default(), 0.1, 3).unwrap();
        assert_eq!(a, make_ground_truth(&Architecture::default(), 0.1, 3).unwrap());
        let other = Architecture {
            k_so: 3,
            p: 2,
            ..Architecture::default()
        };
        let b = make_ground_truth(&other, 0.1, 3).unwrap();
        assert_eq!(a.h_star, b.h_star);
        assert_eq!(a.f_target, b.f_target);
    }

    #[test]
    fn noise_free_labels_equal_the_mean_function() {
        let gt = make_ground_truth(&Architecture::default(), 0.0, 4).unwrap();
        let ds = sample_dataset(&gt, Task::Source(0), 50, 5).unwrap();
        assert_eq!(ds.labels, gt.mean_function(Task::Source(0), &ds.inputs).unwrap());
        assert_eq!(ds.labels.cols(), 4);
        let ta = sample_dataset(&gt, Task::Target, 5, 5).unwrap();
        assert_eq!(ta.labels.cols(), 1);
    }

    #[test]
    fn residuals_have_the_noise_level_and_are_uncorrelated() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let ds = sample_dataset(&gt, Task::Target, 10_000, 6).unwrap();
        let mean = gt.mean_function(Task::Target, &ds.inputs).unwrap();
        let res: Vec<f64> = ds.labels.data().iter().zip(mean.data()).map(|(y, m)| y - m).collect();
        let n = res.len() as f64;
        let mu = res.iter().sum::<f64>() / n;
        let var = res.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.1).abs() < 0.005);
        for j in 0..4 {
            let xs: Vec<f64> = (0..ds.len()).map(|i| ds.inputs.row(i)[j]).collect();
            let mx = xs.iter().sum::<f64>() / n;
            let cov = xs.iter().zip(&res).map(|(x, r)| (x - mx) * (r - mu)).sum::<f64>() / n;
            let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
            assert!((cov / (sx * var.sqrt())).abs() < 0.05);
        }
    }

    #[test]
    fn smaller_samples_are_prefixes() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let big = sample_dataset(&gt, Task::Target, 30, 2).unwrap();
        let small = sample_dataset(&gt, Task::Target, 10, 2).unwrap();
        assert_eq!(big.inputs.head_rows(10), small.inputs);
        assert_eq!(big.labels.head_rows(10), small.labels);
    }

    #[test]
    fn csv_export_has_named_columns() {
        let gt = make_ground_truth(&Architecture::default(), 0.1, 4).unwrap();
        let ds = sample_dataset(&gt, Task::Target, 3, 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_0,x_1,x_2,x_3,y_0\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn zero_dimensions_are_rejected() {
        let arch = Architecture {
            k: 0,
            ..Architecture::default()
        };
        assert!(make_ground_truth(&arch, 0.1, 1).is_err());
        let gt = make_ground_truth(&Architecture::default(), 0.1, 1).unwrap();
        assert!(sample_dataset(&gt, Task::Target, 0, 1).is_err());
    }
}
