//! Restricted Boltzmann machine with ±1 visible and hidden units.
//!
//! Energy `E(v, h) = -v^T W h - b_v . v - b_h . h`. The conditionals factorize
//! and each unit has conditional mean `tanh(activation)`; a unit is sampled
//! as +1 with probability `(1 + tanh(activation)) / 2`.
//!
//! Training is CD-k. For small instances, [`exact_partition`] and
//! [`exact_kl`] enumerate every visible state and serve as oracles.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, log_sum_exp, Matrix};
use crate::rng::{permutation, seeded, spin_with_mean, standard_normal};

/// Largest `N_v + N_h` the exact routines accept.
pub const MAX_EXACT_UNITS: usize = 20;

/// Standard deviation of the initial weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

/// A ±1 vector for one RBM layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeState(Vec<i8>);

impl NodeState {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidSpin(bad));
        }
        Ok(Self(values))
    }

    pub fn uniform(len: usize, s: i8) -> Result<Self> {
        Self::new(vec![s; len])
    }

    /// State whose unit `i` is +1 iff bit `i` of `code` is set.
    pub fn from_code(code: usize, len: usize) -> Self {
        Self((0..len).map(|i| if code >> i & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn code(&self) -> usize {
        self.0.iter().enumerate().filter(|(_, &s)| s == 1).map(|(i, _)| 1usize << i).sum()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn into_values(self) -> Vec<i8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[i8]> for NodeState {
    fn as_ref(&self) -> &[i8] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `N_v x N_h`, row `i` holds the couplings of visible unit `i`.
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

#[inline]
fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// `ln(2 cosh x)` without overflow.
#[inline]
fn ln_2cosh(x: f64) -> f64 {
    let a = libm::fabs(x);
    a + libm::log1p(libm::exp(-2.0 * a))
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            weights: Matrix::zeros(n_visible, n_hidden),
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        }
    }

    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, std: f64, rng: &mut R) -> Self {
        let weights = Matrix::from_fn(n_visible, n_hidden, |_, _| std * standard_normal(rng));
        Self { weights, visible_bias: vec![0.0; n_visible], hidden_bias: vec![0.0; n_hidden] }
    }

    pub fn from_parts(weights: Matrix, visible_bias: Vec<f64>, hidden_bias: Vec<f64>) -> Result<Self> {
        if visible_bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch { expected: weights.rows(), actual: visible_bias.len() });
        }
        if hidden_bias.len() != weights.cols() {
            return Err(Error::DimensionMismatch { expected: weights.cols(), actual: hidden_bias.len() });
        }
        let p = Self { weights, visible_bias, hidden_bias };
        if !p.is_finite() {
            return Err(Error::InvalidConfig("RBM parameters must be finite"));
        }
        Ok(p)
    }

    #[inline]
    pub fn n_visible(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.weights.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.as_slice().iter().chain(&self.visible_bias).chain(&self.hidden_bias).all(|x| x.is_finite())
    }

    /// `b_h + W^T v` into `out`.
    pub fn hidden_activation(&self, v: &[i8], out: &mut [f64]) {
        out.copy_from_slice(&self.hidden_bias);
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi as f64, self.weights.row(i), out);
        }
    }

    /// `b_v + W h` into `out`.
    pub fn visible_activation(&self, h: &[i8], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.weights.row(i);
            *o = self.visible_bias[i] + row.iter().zip(h).map(|(w, &x)| w * x as f64).sum::<f64>();
        }
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.n_visible() {
            return Err(Error::DimensionMismatch { expected: self.n_visible(), actual: len });
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.n_hidden() {
            return Err(Error::DimensionMismatch { expected: self.n_hidden(), actual: len });
        }
        Ok(())
    }

    pub fn energy(&self, v: &NodeState, h: &NodeState) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        let mut act = vec![0.0; self.n_hidden()];
        self.hidden_activation(v.values(), &mut act);
        // act . h = b_h . h + v^T W h
        let vh_plus_bh: f64 = act.iter().zip(h.values()).map(|(a, &x)| a * x as f64).sum();
        let bv: f64 = self.visible_bias.iter().zip(v.values()).map(|(b, &x)| b * x as f64).sum();
        Ok(-vh_plus_bh - bv)
    }

    /// Conditional means `tanh(b_h + W^T v)` and one sample of `h`.
    pub fn hidden_given_visible<R: Rng + ?Sized>(&self, v: &NodeState, rng: &mut R) -> Result<(Vec<f64>, NodeState)> {
        self.check_visible(v.len())?;
        let mut mean = vec![0.0; self.n_hidden()];
        self.hidden_activation(v.values(), &mut mean);
        mean.iter_mut().for_each(|x| *x = tanh(*x));
        let sample = mean.iter().map(|&m| spin_with_mean(m, rng)).collect();
        Ok((mean, NodeState(sample)))
    }

    /// Conditional means `tanh(b_v + W h)` and one sample of `v`.
    pub fn visible_given_hidden<R: Rng + ?Sized>(&self, h: &NodeState, rng: &mut R) -> Result<(Vec<f64>, NodeState)> {
        self.check_hidden(h.len())?;
        let mut mean = vec![0.0; self.n_visible()];
        self.visible_activation(h.values(), &mut mean);
        mean.iter_mut().for_each(|x| *x = tanh(*x));
        let sample = mean.iter().map(|&m| spin_with_mean(m, rng)).collect();
        Ok((mean, NodeState(sample)))
    }

    /// Sample `h` given `v` into `out`, skipping validation. Means go to `mean`.
    pub fn sample_hidden_into<R: Rng + ?Sized>(&self, v: &[i8], mean: &mut [f64], out: &mut [i8], rng: &mut R) {
        self.hidden_activation(v, mean);
        for (m, o) in mean.iter_mut().zip(out.iter_mut()) {
            *m = tanh(*m);
            *o = spin_with_mean(*m, rng);
        }
    }

    /// Sample `v` given `h` into `out`, skipping validation. Means go to `mean`.
    pub fn sample_visible_into<R: Rng + ?Sized>(&self, h: &[i8], mean: &mut [f64], out: &mut [i8], rng: &mut R) {
        self.visible_activation(h, mean);
        for (m, o) in mean.iter_mut().zip(out.iter_mut()) {
            *m = tanh(*m);
            *o = spin_with_mean(*m, rng);
        }
    }

    /// `ln sum_h exp(-E(v, h))`.
    pub fn log_marginal_weight(&self, v: &[i8]) -> f64 {
        let mut act = vec![0.0; self.n_hidden()];
        self.hidden_activation(v, &mut act);
        let bv: f64 = self.visible_bias.iter().zip(v).map(|(b, &x)| b * x as f64).sum();
        bv + act.iter().map(|&a| ln_2cosh(a)).sum::<f64>()
    }

    fn add_scaled(&mut self, other: &RbmParams, scale: f64) {
        axpy(scale, other.weights.as_slice(), self.weights.as_mut_slice());
        axpy(scale, &other.visible_bias, &mut self.visible_bias);
        axpy(scale, &other.hidden_bias, &mut self.hidden_bias);
    }

    /// All parameters flattened as `W` (row-major), `b_v`, `b_h`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.weights.as_slice().to_vec();
        out.extend_from_slice(&self.visible_bias);
        out.extend_from_slice(&self.hidden_bias);
        out
    }

    pub fn flat_mut(&mut self, k: usize) -> &mut f64 {
        let nw = self.weights.as_slice().len();
        let nv = self.visible_bias.len();
        if k < nw {
            &mut self.weights.as_mut_slice()[k]
        } else if k < nw + nv {
            &mut self.visible_bias[k - nw]
        } else {
            &mut self.hidden_bias[k - nw - nv]
        }
    }
}

/// How hidden units enter the `<v h>` and `<h>` statistics of an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenStats {
    /// Sampled ±1 hidden states.
    #[default]
    Sampled,
    /// Conditional means `tanh(activation)`.
    Expectation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gibbs half-step pairs in the reconstruction chain.
    pub cd_k: usize,
    pub seed: u64,
    pub hidden_stats: HiddenStats,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 30_000, learning_rate: 1e-3, batch_size: 1000, cd_k: 1, seed: 0, hidden_stats: HiddenStats::Sampled }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_data: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive"));
        }
        if self.cd_k == 0 {
            return Err(Error::InvalidConfig("cd_k must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be finite and non-negative"));
        }
        if self.batch_size > n_data {
            return Err(Error::NotEnoughSamples { needed: self.batch_size, got: n_data });
        }
        Ok(())
    }
}

/// Scratch buffers for one CD update.
struct CdScratch {
    grad: RbmParams,
    h_mean: Vec<f64>,
    h_data: Vec<i8>,
    h_stat: Vec<f64>,
    v_mean: Vec<f64>,
    v_model: Vec<i8>,
    h_model: Vec<i8>,
}

impl CdScratch {
    fn new(nv: usize, nh: usize) -> Self {
        Self {
            grad: RbmParams::zeros(nv, nh),
            h_mean: vec![0.0; nh],
            h_data: vec![0; nh],
            h_stat: vec![0.0; nh],
            v_mean: vec![0.0; nv],
            v_model: vec![0; nv],
            h_model: vec![0; nh],
        }
    }
}

/// Adds `sign * v (x) h` to the weight gradient and `sign * v`, `sign * h`
/// to the bias gradients.
fn accumulate(grad: &mut RbmParams, v: &[i8], h: &[f64], sign: f64) {
    for (i, &vi) in v.iter().enumerate() {
        axpy(sign * vi as f64, h, grad.weights.row_mut(i));
        grad.visible_bias[i] += sign * vi as f64;
    }
    axpy(sign, h, &mut grad.hidden_bias);
}

fn hidden_stat(stats: HiddenStats, mean: &[f64], sample: &[i8], out: &mut [f64]) {
    match stats {
        HiddenStats::Sampled => out.iter_mut().zip(sample).for_each(|(o, &s)| *o = s as f64),
        HiddenStats::Expectation => out.copy_from_slice(mean),
    }
}

fn cd_update_with<R: Rng + ?Sized, S: AsRef<[i8]>>(
    batch: &[S],
    params: &mut RbmParams,
    cfg: &TrainConfig,
    scratch: &mut CdScratch,
    rng: &mut R,
) -> f64 {
    let nv = params.n_visible();
    scratch.grad.weights.fill(0.0);
    scratch.grad.visible_bias.iter_mut().for_each(|x| *x = 0.0);
    scratch.grad.hidden_bias.iter_mut().for_each(|x| *x = 0.0);
    let mut recon = 0.0;
    for v in batch {
        let v = v.as_ref();
        params.sample_hidden_into(v, &mut scratch.h_mean, &mut scratch.h_data, rng);
        hidden_stat(cfg.hidden_stats, &scratch.h_mean, &scratch.h_data, &mut scratch.h_stat);
        accumulate(&mut scratch.grad, v, &scratch.h_stat, 1.0);

        let mut first = true;
        for _ in 0..cfg.cd_k {
            let h_in = if first { &scratch.h_data } else { &scratch.h_model };
            params.sample_visible_into(h_in, &mut scratch.v_mean, &mut scratch.v_model, rng);
            if first {
                recon += v.iter().zip(&scratch.v_mean).map(|(&x, m)| (x as f64 - m) * (x as f64 - m)).sum::<f64>();
                first = false;
            }
            params.sample_hidden_into(&scratch.v_model, &mut scratch.h_mean, &mut scratch.h_model, rng);
        }
        hidden_stat(cfg.hidden_stats, &scratch.h_mean, &scratch.h_model, &mut scratch.h_stat);
        accumulate(&mut scratch.grad, &scratch.v_model, &scratch.h_stat, -1.0);
    }
    let b = batch.len() as f64;
    params.add_scaled(&scratch.grad, cfg.learning_rate / b);
    recon / (b * nv as f64)
}

/// One contrastive-divergence step on `batch`:
/// `W += lr (<v h>_data - <v h>_model)` and likewise for both biases.
/// Returns the mean squared reconstruction error of the batch.
pub fn cd_update<R: Rng + ?Sized, S: AsRef<[i8]>>(
    batch: &[S],
    params: &mut RbmParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    if let Some(bad) = batch.iter().find(|v| v.as_ref().len() != params.n_visible()) {
        return Err(Error::DimensionMismatch { expected: params.n_visible(), actual: bad.as_ref().len() });
    }
    let mut scratch = CdScratch::new(params.n_visible(), params.n_hidden());
    Ok(cd_update_with(batch, params, cfg, &mut scratch, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: RbmParams,
    /// Reconstruction error after each step.
    pub trace: Vec<f64>,
}

/// CD-k training from Gaussian-initialized weights, seeded by `cfg.seed`.
pub fn train<S: AsRef<[i8]>>(data: &[S], n_hidden: usize, cfg: &TrainConfig) -> Result<Trained> {
    let nv = data.first().map(|v| v.as_ref().len()).ok_or(Error::NotEnoughSamples { needed: 1, got: 0 })?;
    let mut rng = seeded(cfg.seed);
    let params = RbmParams::random(nv, n_hidden, INIT_WEIGHT_STD, &mut rng);
    train_from(data, params, cfg, &mut rng)
}

/// CD-k training continuing from `params`, over reshuffled mini-batches.
pub fn train_from<S: AsRef<[i8]>, R: Rng + ?Sized>(
    data: &[S],
    mut params: RbmParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Trained> {
    cfg.validate(data.len())?;
    if let Some(bad) = data.iter().find(|v| v.as_ref().len() != params.n_visible()) {
        return Err(Error::DimensionMismatch { expected: params.n_visible(), actual: bad.as_ref().len() });
    }
    let mut scratch = CdScratch::new(params.n_visible(), params.n_hidden());
    let mut order = permutation(data.len(), rng);
    let mut cursor = 0;
    let mut batch: Vec<&[i8]> = Vec::with_capacity(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order = permutation(data.len(), rng);
            cursor = 0;
        }
        batch.clear();
        batch.extend(order[cursor..cursor + cfg.batch_size].iter().map(|&k| data[k].as_ref()));
        cursor += cfg.batch_size;
        trace.push(cd_update_with(&batch, &mut params, cfg, &mut scratch, rng));
    }
    Ok(Trained { params, trace })
}

/// Exact visible marginal of a small RBM.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub n_visible: usize,
    pub log_z: f64,
    /// `p(v)` indexed by [`NodeState::code`].
    pub probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn z(&self) -> f64 {
        libm::exp(self.log_z)
    }

    pub fn prob(&self, v: &NodeState) -> f64 {
        self.probs[v.code()]
    }
}

fn check_exact_size(params: &RbmParams) -> Result<()> {
    let size = params.n_visible() + params.n_hidden();
    if size > MAX_EXACT_UNITS {
        return Err(Error::TooLarge { size, limit: MAX_EXACT_UNITS });
    }
    Ok(())
}

/// `Z` and `p(v)` by enumerating visible states; hidden units are summed
/// analytically.
pub fn exact_partition(params: &RbmParams) -> Result<ExactDistribution> {
    check_exact_size(params)?;
    let nv = params.n_visible();
    let logw: Vec<f64> = (0..1usize << nv)
        .map(|code| params.log_marginal_weight(NodeState::from_code(code, nv).values()))
        .collect();
    let log_z = log_sum_exp(&logw);
    let probs = logw.iter().map(|w| libm::exp(w - log_z)).collect();
    Ok(ExactDistribution { n_visible: nv, log_z, probs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlResult {
    pub kl: f64,
    /// `d KL / d theta`, shaped like the parameters.
    pub grad: RbmParams,
}

/// `<v h>`, `<v>`, `<h>` under `weights(v) p(h | v)`, exactly.
fn exact_moments(params: &RbmParams, weights: &[f64]) -> RbmParams {
    let nv = params.n_visible();
    let mut m = RbmParams::zeros(nv, params.n_hidden());
    let mut act = vec![0.0; params.n_hidden()];
    for (code, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let v = NodeState::from_code(code, nv);
        params.hidden_activation(v.values(), &mut act);
        act.iter_mut().for_each(|a| *a = tanh(*a));
        for (i, &vi) in v.values().iter().enumerate() {
            axpy(w * vi as f64, &act, m.weights.row_mut(i));
            m.visible_bias[i] += w * vi as f64;
        }
        axpy(w, &act, &mut m.hidden_bias);
    }
    m
}

/// `D_KL(q || p)` over visible configurations and its exact gradient.
/// `q` is indexed by [`NodeState::code`] and must sum to 1.
pub fn exact_kl(q: &[f64], params: &RbmParams) -> Result<KlResult> {
    check_exact_size(params)?;
    let nv = params.n_visible();
    if q.len() != 1 << nv {
        return Err(Error::DimensionMismatch { expected: 1 << nv, actual: q.len() });
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || q.iter().any(|&x| x < 0.0) {
        return Err(Error::Unnormalized { sum });
    }
    let dist = exact_partition(params)?;
    let kl = q
        .iter()
        .zip(&dist.probs)
        .filter(|(&qv, _)| qv > 0.0)
        .map(|(&qv, &pv)| qv * (libm::log(qv) - libm::log(pv)))
        .sum();
    let data = exact_moments(params, q);
    let model = exact_moments(params, &dist.probs);
    // d KL / d theta = -(<.>_data - <.>_model)
    let mut grad = model;
    grad.add_scaled(&data, -1.0);
    Ok(KlResult { kl, grad })
}

/// One step of exact gradient descent on `D_KL(q || p)`. Returns the KL
/// before the step.
pub fn exact_gradient_step(q: &[f64], params: &mut RbmParams, learning_rate: f64) -> Result<f64> {
    let r = exact_kl(q, params)?;
    params.add_scaled(&r.grad, -learning_rate);
    Ok(r.kl)
}

/// Empirical distribution of `data` over visible codes.
pub fn empirical_distribution<S: AsRef<[i8]>>(data: &[S], n_visible: usize) -> Result<Vec<f64>> {
    if n_visible > MAX_EXACT_UNITS {
        return Err(Error::TooLarge { size: n_visible, limit: MAX_EXACT_UNITS });
    }
    let mut q = vec![0.0; 1 << n_visible];
    for v in data {
        let v = NodeState::new(v.as_ref().to_vec())?;
        if v.len() != n_visible {
            return Err(Error::DimensionMismatch { expected: n_visible, actual: v.len() });
        }
        q[v.code()] += 1.0;
    }
    let n = data.len() as f64;
    q.iter_mut().for_each(|x| *x /= n);
    Ok(q)
}
