//! Supervised temperature classifier.
//!
//! One hidden layer of tanh units and a softmax over a fixed grid of
//! temperature classes, trained with mini-batch Adam on cross-entropy.
//! Each model is tied to the lattice size it was trained on.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::mcmc::SampleSet;
use crate::rng::{permutation, seeded, standard_normal};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const LABEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ThermometerModel {
    pub classes: Vec<f64>,
    /// `width x input_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `n_classes x width`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermometerConfig {
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of the labeled data held out for accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ThermometerConfig {
    fn default() -> Self {
        Self { width: 64, epochs: 50, learning_rate: 1e-3, batch_size: 32, holdout: 0.1, seed: 0 }
    }
}

/// Ensemble-averaged class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureReading {
    pub probabilities: Vec<f64>,
    /// `sum_k p_k T_k`
    pub mean_temperature: f64,
    pub argmax_temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedThermometer {
    pub model: ThermometerModel,
    pub holdout_accuracy: f64,
    /// Mean training cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Gradient of the mean cross-entropy, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ThermometerModel {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, width: usize, classes: Vec<f64>, rng: &mut R) -> Self {
        let k = classes.len();
        let s1 = 1.0 / libm::sqrt(input_dim as f64);
        let s2 = 1.0 / libm::sqrt(width as f64);
        let w1 = Matrix::from_fn(width, input_dim, |_, _| s1 * standard_normal(rng));
        let w2 = Matrix::from_fn(k, width, |_, _| s2 * standard_normal(rng));
        Self { classes, w1, b1: vec![0.0; width], w2, b2: vec![0.0; k] }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, label: f64) -> Result<usize> {
        self.classes.iter().position(|c| (c - label).abs() < LABEL_TOL).ok_or(Error::UnknownLabel(label))
    }

    fn hidden(&self, x: &[i8], out: &mut [f64]) {
        for (h, o) in out.iter_mut().enumerate() {
            let row = self.w1.row(h);
            let z = self.b1[h] + row.iter().zip(x).map(|(w, &s)| w * s as f64).sum::<f64>();
            *o = libm::tanh(z);
        }
    }

    fn output(&self, hidden: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.b2[k] + dot(self.w2.row(k), hidden);
        }
        softmax_in_place(out);
    }

    /// Class probabilities for one configuration; panics on a size mismatch.
    pub fn probabilities(&self, x: &[i8]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "thermometer input size");
        let mut h = vec![0.0; self.width()];
        let mut p = vec![0.0; self.n_classes()];
        self.hidden(x, &mut h);
        self.output(&h, &mut p);
        p
    }

    pub fn predict(&self, x: &[i8]) -> usize {
        argmax(&self.probabilities(x))
    }

    /// Mean cross-entropy over `batch` (input, class index) and its gradient.
    pub fn loss_and_gradient<S: AsRef<[i8]>>(&self, batch: &[(S, usize)]) -> (f64, Gradient) {
        let mut g = Gradient {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.width()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.n_classes()],
        };
        let mut h = vec![0.0; self.width()];
        let mut p = vec![0.0; self.n_classes()];
        let mut dh = vec![0.0; self.width()];
        let mut loss = 0.0;
        for (x, label) in batch {
            let x = x.as_ref();
            self.hidden(x, &mut h);
            self.output(&h, &mut p);
            loss -= libm::log(p[*label].max(f64::MIN_POSITIVE));
            // dL/dz2 = p - onehot, reused in place
            p[*label] -= 1.0;
            dh.iter_mut().for_each(|d| *d = 0.0);
            for (k, &dz) in p.iter().enumerate() {
                axpy(dz, &h, g.w2.row_mut(k));
                g.b2[k] += dz;
                axpy(dz, self.w2.row(k), &mut dh);
            }
            for (j, d) in dh.iter().enumerate() {
                let dz1 = d * (1.0 - h[j] * h[j]);
                if dz1 == 0.0 {
                    continue;
                }
                let row = g.w1.row_mut(j);
                for (r, &s) in row.iter_mut().zip(x) {
                    *r += dz1 * s as f64;
                }
                g.b1[j] += dz1;
            }
        }
        let n = batch.len() as f64;
        let inv = 1.0 / n;
        g.w1.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        g.w2.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        g.b1.iter_mut().for_each(|x| *x *= inv);
        g.b2.iter_mut().for_each(|x| *x *= inv);
        (loss / n, g)
    }

    fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    /// Number of trainable parameters.
    pub fn n_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }
}

impl Gradient {
    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(model: &ThermometerModel, lr: f64) -> Self {
        let sizes = [model.w1.as_slice().len(), model.b1.len(), model.w2.as_slice().len(), model.b2.len()];
        Self { m: sizes.iter().map(|&n| vec![0.0; n]).collect(), v: sizes.iter().map(|&n| vec![0.0; n]).collect(), t: 0, lr }
    }

    fn step(&mut self, model: &mut ThermometerModel, g: &Gradient) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, self.t as f64);
        for (((p, g), m), v) in model.param_slices_mut().into_iter().zip(g.slices()).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                p[k] -= self.lr * (m[k] / c1) / (libm::sqrt(v[k] / c2) + ADAM_EPS);
            }
        }
    }
}

/// Train on `(configuration, temperature)` pairs whose labels all lie on
/// `classes`. A seeded `holdout` fraction is kept aside for accuracy.
pub fn train_thermometer<S: AsRef<[i8]>>(
    labeled: &[(S, f64)],
    classes: &[f64],
    cfg: &ThermometerConfig,
) -> Result<TrainedThermometer> {
    let input_dim = labeled.first().map(|(x, _)| x.as_ref().len()).ok_or(Error::NotEnoughSamples { needed: 1, got: 0 })?;
    if classes.is_empty() || cfg.width == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("thermometer needs classes, a positive width and batch size"));
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::InvalidConfig("holdout fraction must lie in [0, 1)"));
    }
    let mut rng = seeded(cfg.seed);
    let mut model = ThermometerModel::new(input_dim, cfg.width, classes.to_vec(), &mut rng);
    let mut indexed = Vec::with_capacity(labeled.len());
    for (x, t) in labeled {
        let x = x.as_ref();
        if x.len() != input_dim {
            return Err(Error::DimensionMismatch { expected: input_dim, actual: x.len() });
        }
        indexed.push((x, model.class_of(*t)?));
    }
    let order = permutation(indexed.len(), &mut rng);
    let n_hold = (cfg.holdout * indexed.len() as f64) as usize;
    let held: Vec<(&[i8], usize)> = order[..n_hold].iter().map(|&k| indexed[k]).collect();
    let mut train: Vec<(&[i8], usize)> = order[n_hold..].iter().map(|&k| indexed[k]).collect();
    if train.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }

    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let perm = permutation(train.len(), &mut rng);
        let shuffled: Vec<(&[i8], usize)> = perm.iter().map(|&k| train[k]).collect();
        train = shuffled;
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let (loss, g) = model.loss_and_gradient(batch);
            total += loss * batch.len() as f64;
            adam.step(&mut model, &g);
        }
        epoch_loss.push(total / train.len() as f64);
    }
    let holdout_accuracy = if held.is_empty() {
        f64::NAN
    } else {
        held.iter().filter(|(x, c)| model.predict(x) == *c).count() as f64 / held.len() as f64
    };
    Ok(TrainedThermometer { model, holdout_accuracy, epoch_loss })
}

/// Labeled pairs from temperature-tagged sample sets.
pub fn labeled_from_sets(sets: &[SampleSet]) -> Vec<(&[i8], f64)> {
    sets.iter().flat_map(|s| s.grids().iter().map(move |g| (g.spins(), s.temperature()))).collect()
}

/// Ensemble average of the per-configuration class probabilities.
pub fn measure<S: AsRef<[i8]>>(model: &ThermometerModel, configs: &[S]) -> Result<TemperatureReading> {
    if configs.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let mut probs = vec![0.0; model.n_classes()];
    for x in configs {
        let x = x.as_ref();
        if x.len() != model.input_dim() {
            return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: x.len() });
        }
        axpy(1.0, &model.probabilities(x), &mut probs);
    }
    let n = configs.len() as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    let mean_temperature = probs.iter().zip(&model.classes).map(|(p, t)| p * t).sum();
    let argmax_temperature = model.classes[argmax(&probs)];
    Ok(TemperatureReading { probabilities: probs, mean_temperature, argmax_temperature })
}

pub fn measure_set(model: &ThermometerModel, samples: &SampleSet) -> Result<TemperatureReading> {
    measure(model, samples.grids())
}
