//! Dense feedforward networks.
//!
//! An [`Mlp`] is a chain of [`Dense`] layers `a_k = σ(W_k a_{k-1} + b_k)`
//! optionally followed by a scalar [`LinearHead`] `αᵀ a_K + β`. Batches are
//! row-major [`Matrix`] values with one sample per row. The square loss is
//! the batch mean of `‖ŷ − y‖²` with no ½ factor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Relu | Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-major dense matrix; batches store one sample per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of the first `n` rows.
    pub fn head_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }
}

/// One dense layer, `weights` stored row-major as `[out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(Error::Shape {
                what: "layer weights",
                expected: out_dim * in_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Shape {
                what: "layer bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Dense {
            out_dim,
            in_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize, activation: Activation) -> Self {
        Dense {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    /// Maximum absolute row sum.
    pub fn infinity_norm(&self) -> f64 {
        self.weights
            .chunks(self.in_dim.max(1))
            .map(|r| r.iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm(&self.weights, self.out_dim, self.in_dim)
    }

    fn forward_into(&self, input: &[f64], pre: &mut [f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z = self.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            pre[o] = z;
            out[o] = self.activation.apply(z);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub alpha: Vec<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    head: Option<LinearHead>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>, head: Option<LinearHead>) -> Result<Self> {
        if layers.is_empty() && head.is_none() {
            return Err(Error::contract("a network needs at least one layer or a head"));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(Error::Shape {
                    what: "layer chain",
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if let (Some(last), Some(h)) = (layers.last(), head.as_ref()) {
            if h.alpha.len() != last.out_dim {
                return Err(Error::Shape {
                    what: "head alpha",
                    expected: last.out_dim,
                    got: h.alpha.len(),
                });
            }
        }
        Ok(Mlp { layers, head })
    }

    /// The linear class `x ↦ αᵀx + β` on its own.
    pub fn head_only(alpha: Vec<f64>, beta: f64) -> Self {
        Mlp {
            layers: Vec::new(),
            head: Some(LinearHead { alpha, beta }),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> Option<&LinearHead> {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> Option<&mut LinearHead> {
        self.head.as_mut()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        match (self.layers.first(), &self.head) {
            (Some(l), _) => l.in_dim,
            (None, Some(h)) => h.alpha.len(),
            (None, None) => 0,
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.head.is_some() {
            1
        } else {
            self.layers.last().map_or(0, |l| l.out_dim)
        }
    }

    /// Appends `other` after `self`. `self` must not carry a head.
    pub fn then(&self, other: &Mlp) -> Result<Mlp> {
        if self.head.is_some() {
            return Err(Error::contract("cannot compose after a network with a linear head"));
        }
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Mlp::new(layers, other.head.clone())
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0)
            .max(self.in_dim())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
            + self.head.as_ref().map_or(0, |h| h.alpha.len() + 1)
    }

    /// Flat parameters: per layer the weights then the bias, then α and β.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        if let Some(h) = &self.head {
            out.extend_from_slice(&h.alpha);
            out.push(h.beta);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                what: "flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        if let Some(h) = &mut self.head {
            let n = h.alpha.len();
            h.alpha.copy_from_slice(&flat[at..at + n]);
            h.beta = flat[at + n];
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                what: "network input",
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let width = self.max_width();
        let mut cur = x.to_vec();
        let mut pre = vec![0.0; width];
        let mut next = vec![0.0; width];
        for l in &self.layers {
            l.forward_into(&cur, &mut pre[..l.out_dim], &mut next[..l.out_dim]);
            cur.clear();
            cur.extend_from_slice(&next[..l.out_dim]);
        }
        if let Some(h) = &self.head {
            let y = h.beta + h.alpha.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
            return Ok(vec![y]);
        }
        Ok(cur)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.output().clone())
    }

    /// Forward pass keeping every pre-activation and activation for backprop.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                what: "batch input",
                expected: self.in_dim(),
                got: x.cols(),
            });
        }
        let n = x.rows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 2);
        acts.push(x.clone());
        for l in &self.layers {
            let input = acts.last().expect("activations start with the input");
            let mut z = Matrix::zeros(n, l.out_dim);
            let mut a = Matrix::zeros(n, l.out_dim);
            for r in 0..n {
                let (zr, ar) = (r * l.out_dim, (r + 1) * l.out_dim);
                l.forward_into(input.row(r), &mut z.data[zr..ar], &mut a.data[zr..ar]);
            }
            pre.push(z);
            acts.push(a);
        }
        if let Some(h) = &self.head {
            let last = acts.last().expect("activations start with the input");
            let mut y = Matrix::zeros(n, 1);
            for r in 0..n {
                y.data[r] = h.beta + h.alpha.iter().zip(last.row(r)).map(|(a, b)| a * b).sum::<f64>();
            }
            acts.push(y);
        }
        Ok(ForwardCache { pre, acts })
    }

    /// Backpropagates `upstream = ∂L/∂output` (one row per sample) through a
    /// cached forward pass. Returns parameter gradients and `∂L/∂input`.
    pub fn backprop(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(MlpGrad, Matrix)> {
        let n = cache.acts[0].rows();
        if upstream.rows() != n || upstream.cols() != self.out_dim() {
            return Err(Error::Shape {
                what: "upstream gradient",
                expected: n * self.out_dim(),
                got: upstream.rows() * upstream.cols(),
            });
        }
        let k = self.layers.len();
        let mut head_grad = None;
        let mut delta = match &self.head {
            Some(h) => {
                let feats = &cache.acts[k];
                let mut d_alpha = vec![0.0; h.alpha.len()];
                let mut d_beta = 0.0;
                let mut d_feats = Matrix::zeros(n, h.alpha.len());
                for r in 0..n {
                    let u = upstream.data[r];
                    d_beta += u;
                    for (j, (da, f)) in d_alpha.iter_mut().zip(feats.row(r)).enumerate() {
                        *da += u * f;
                        d_feats.data[r * h.alpha.len() + j] = u * h.alpha[j];
                    }
                }
                head_grad = Some(HeadGrad {
                    alpha: d_alpha,
                    beta: d_beta,
                });
                d_feats
            }
            None => upstream.clone(),
        };

        let mut layer_grads = vec![DenseGrad::default(); k];
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[idx];
            let input = &cache.acts[idx];
            let mut dw = vec![0.0; l.weights.len()];
            let mut db = vec![0.0; l.out_dim];
            let mut d_in = Matrix::zeros(n, l.in_dim);
            for r in 0..n {
                let zr = z.row(r);
                let xr = input.row(r);
                for o in 0..l.out_dim {
                    let dz = delta.data[r * l.out_dim + o] * l.activation.derivative(zr[o]);
                    if dz == 0.0 {
                        continue;
                    }
                    db[o] += dz;
                    let wrow = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    let dwrow = &mut dw[o * l.in_dim..(o + 1) * l.in_dim];
                    let din = &mut d_in.data[r * l.in_dim..(r + 1) * l.in_dim];
                    for i in 0..l.in_dim {
                        dwrow[i] += dz * xr[i];
                        din[i] += dz * wrow[i];
                    }
                }
            }
            layer_grads[idx] = DenseGrad { weights: dw, bias: db };
            delta = d_in;
        }
        Ok((
            MlpGrad {
                layers: layer_grads,
                head: head_grad,
            },
            delta,
        ))
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pre: Vec<Matrix>,
    acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("activations start with the input")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub alpha: Vec<f64>,
    pub beta: f64,
}

/// Gradient shaped like the parameters of an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
    pub head: Option<HeadGrad>,
}

impl MlpGrad {
    /// Same ordering as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        if let Some(h) = &self.head {
            out.extend_from_slice(&h.alpha);
            out.push(h.beta);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= s);
        }
        if let Some(h) = &mut self.head {
            h.alpha.iter_mut().for_each(|g| *g *= s);
            h.beta *= s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Square,
}

/// Mean over rows of `‖ŷ − y‖²` and `∂/∂ŷ` of it.
pub fn square_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::Shape {
            what: "prediction/target",
            expected: target.rows() * target.cols(),
            got: pred.rows() * pred.cols(),
        });
    }
    if pred.rows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    let n = pred.rows() as f64;
    let mut up = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((u, p), t) in up.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let r = p - t;
        loss += r * r;
        *u = 2.0 * r / n;
    }
    Ok((loss / n, up))
}

/// Mean square loss of `net` on a batch and its exact parameter gradient.
pub fn backward(net: &Mlp, inputs: &Matrix, targets: &Matrix, loss: Loss) -> Result<(f64, MlpGrad)> {
    let Loss::Square = loss;
    if inputs.rows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if inputs.rows() != targets.rows() {
        return Err(Error::Shape {
            what: "batch targets",
            expected: inputs.rows(),
            got: targets.rows(),
        });
    }
    let cache = net.forward_cached(inputs)?;
    let (value, up) = square_loss(cache.output(), targets)?;
    let (grad, _) = net.backprop(&cache, &up)?;
    Ok((value, grad))
}

/// Central differences of the mean square loss with respect to the flat
/// parameter vector, in [`Mlp::params`] order.
pub fn numerical_gradient(net: &Mlp, inputs: &Matrix, targets: &Matrix, h: f64) -> Result<Vec<f64>> {
    let base = net.params();
    let mut probe = net.clone();
    let mut loss_at = |params: &[f64]| -> Result<f64> {
        probe.set_params(params)?;
        Ok(square_loss(&probe.forward_batch(inputs)?, targets)?.0)
    };
    let mut out = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + h;
        let up = loss_at(&p)?;
        p[i] = base[i] - h;
        let down = loss_at(&p)?;
        p[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub method: Method,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerSettings {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerSettings {
            method: Method::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerSettings {
            method: Method::Sgd,
            ..Self::adam(learning_rate)
        }
    }
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub settings: OptimizerSettings,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptState {
    pub fn new(settings: OptimizerSettings, n_params: usize) -> Self {
        let moments = match settings.method {
            Method::Adam => n_params,
            Method::Sgd => 0,
        };
        OptState {
            settings,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    /// One descent step in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                what: "optimizer gradient",
                expected: params.len(),
                got: grads.len(),
            });
        }
        let s = self.settings;
        match s.method {
            Method::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= s.learning_rate * g;
                }
            }
            Method::Adam => {
                if self.first.len() != params.len() {
                    return Err(Error::Shape {
                        what: "optimizer moments",
                        expected: self.first.len(),
                        got: params.len(),
                    });
                }
                let t = (self.steps + 1) as i32;
                let c1 = 1.0 - s.beta1.powi(t);
                let c2 = 1.0 - s.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first[i] = s.beta1 * self.first[i] + (1.0 - s.beta1) * g;
                    self.second[i] = s.beta2 * self.second[i] + (1.0 - s.beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= s.learning_rate * m_hat / (v_hat.sqrt() + s.epsilon);
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Norm budget of the class `L ∘ M_K`: `‖α‖₂ ≤ m_alpha`,
/// `max(‖W_k‖_∞, ‖W_k‖₂) ≤ m_k[k]` and inputs bounded by `d_z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    pub m_alpha: f64,
    pub m_k: Vec<f64>,
    pub d_z: f64,
}

impl NormBudget {
    pub fn new(m_alpha: f64, m_k: Vec<f64>, d_z: f64) -> Result<Self> {
        let b = NormBudget { m_alpha, m_k, d_z };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.m_alpha) || !ok(self.d_z) || !self.m_k.iter().all(|&m| ok(m)) {
            return Err(Error::contract("norm budget entries must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn layer_product(&self) -> f64 {
        self.m_k.iter().product()
    }

    pub fn with_d_z(mut self, d_z: f64) -> Self {
        self.d_z = d_z;
        self
    }
}

/// `M(α) · Π_k M(k)`: Lipschitz constant of every member of the budgeted
/// class for 1-Lipschitz activations.
pub fn lipschitz_bound(budget: &NormBudget) -> f64 {
    budget.m_alpha * budget.layer_product()
}

/// `2 · D_Z · M(α) · Π_k M(k)`: bound on `‖f(z) − f'(z')‖` over the class,
/// for bias-free layers with `σ(0) = 0` and inputs with `‖z‖₂ ≤ D_Z`.
pub fn output_bound(budget: &NormBudget) -> f64 {
    2.0 * budget.d_z * lipschitz_bound(budget)
}

/// Per-layer `max(‖W‖_∞, ‖W‖₂)` and `‖α‖₂` (1 when there is no head).
/// `d_z` is set to 1; callers override it with [`NormBudget::with_d_z`].
pub fn measured_norms(net: &Mlp) -> Result<NormBudget> {
    let mut m_k = Vec::with_capacity(net.depth());
    for l in net.layers() {
        m_k.push(l.infinity_norm().max(l.spectral_norm()?));
    }
    let m_alpha = net
        .head()
        .map_or(1.0, |h| h.alpha.iter().map(|a| a * a).sum::<f64>().sqrt());
    Ok(NormBudget { m_alpha, m_k, d_z: 1.0 })
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest singular value of a row-major `[rows × cols]` matrix by power
/// iteration on `WᵀW` from a fixed pseudo-random start vector.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if w.len() != rows * cols {
        return Err(Error::Shape {
            what: "spectral norm input",
            expected: rows * cols,
            got: w.len(),
        });
    }
    if w.iter().all(|&x| x == 0.0) || cols == 0 {
        return Ok(0.0);
    }
    let mut rng = rng::stream(0x5eed_5eed, "power-iteration", cols as u64);
    let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    let mut wv = vec![0.0; rows];
    let apply = |v: &[f64], out: &mut [f64]| {
        for (r, o) in out.iter_mut().enumerate() {
            *o = w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    apply(&v, &mut wv);
    let mut sigma = norm(&wv);
    for _ in 0..POWER_MAX_ITERS {
        // v ← Wᵀ(Wv) / ‖·‖
        let mut next = vec![0.0; cols];
        for (r, &s) in wv.iter().enumerate() {
            for (c, n) in next.iter_mut().enumerate() {
                *n += w[r * cols + c] * s;
            }
        }
        if norm(&next) == 0.0 {
            // Start vector in the null space: restart on a fresh random direction.
            v = (0..cols).map(|_| rng.random::<f64>() - 0.5).collect();
            normalize(&mut v);
            apply(&v, &mut wv);
            continue;
        }
        normalize(&mut next);
        v = next;
        apply(&v, &mut wv);
        let updated = norm(&wv);
        if (updated - sigma).abs() <= POWER_TOL * updated.max(f64::MIN_POSITIVE) {
            return Ok(updated);
        }
        sigma = updated;
    }
    Err(Error::numeric(POWER_MAX_ITERS, "power iteration did not converge"))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Glorot-uniform weights and zero biases for a stack of layers with the
/// given widths; every layer uses `hidden` except the last, which uses `last`.
pub fn glorot_stack<R: Rng>(widths: &[usize], hidden: Activation, last: Activation, rng: &mut R) -> Result<Mlp> {
    if widths.len() < 2 {
        return Err(Error::contract("a layer stack needs at least an input and an output width"));
    }
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|k| {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            let act = if k + 1 == n { last } else { hidden };
            Dense::new(fan_out, fan_in, weights, vec![0.0; fan_out], act)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers, None)
}
