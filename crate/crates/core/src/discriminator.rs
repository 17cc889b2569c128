//! Domain discriminator `x -> q(d|x)` trained by minimizing cross-entropy
//! against the domain index, with early stopping on a validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ObservedView;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{argmax, Scalar};
use crate::simplex::SimplexVec;

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    /// Softmax of an affine map of the (standardized) input.
    Linear,
    /// One rectified hidden layer, then a softmax output layer.
    Mlp { hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    /// Heavy-ball momentum; 0 gives plain mini-batch gradient descent.
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 penalty on weight matrices (biases are not penalized).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            learning_rate: 0.1,
            lr_decay: 0.97,
            momentum: 0.0,
            max_epochs: 100,
            batch_size: 64,
            patience: 10,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

/// Fully connected layer, `out = W x + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Dense<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (o, &b) in self.bias.iter().enumerate() {
            let mut acc = b;
            for (&w, &xi) in self.weights.row(o).iter().zip(x) {
                acc = acc + w * xi;
            }
            out.push(acc);
        }
    }

    fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DiscriminatorModel<T> {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Inputs are mapped to `(x - mean) / scale` before the first layer.
    pub input_mean: Vec<T>,
    pub input_scale: Vec<T>,
    pub layers: Vec<Dense<T>>,
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

impl<T: Scalar> DiscriminatorModel<T> {
    /// All weights and biases zero, identity standardization.
    pub fn zeros(architecture: Architecture, input_dim: usize, output_dim: usize) -> Self {
        let layers = match architecture {
            Architecture::Linear => vec![Dense::zeros(input_dim, output_dim)],
            Architecture::Mlp { hidden } => vec![
                Dense::zeros(input_dim, hidden),
                Dense::zeros(hidden, output_dim),
            ],
        };
        Self {
            architecture,
            input_dim,
            output_dim,
            input_mean: vec![T::zero(); input_dim],
            input_scale: vec![T::one(); input_dim],
            layers,
        }
    }

    /// Gaussian weights scaled by `sqrt(2 / fan_in)`, zero biases.
    pub fn random<R: rand::Rng + ?Sized>(
        architecture: Architecture,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(architecture, input_dim, output_dim);
        for layer in &mut model.layers {
            let fan_in = layer.weights.cols().max(1) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for w in layer.weights.values_mut() {
                *w = T::lit(normal.sample(rng));
            }
        }
        model
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.as_slice().len();
            layer.weights.values_mut().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    /// Forward pass keeping every layer's pre-activation, for backprop.
    fn forward_trace(&self, x: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let input = self.standardize(x);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&current, &mut z);
            current = if li + 1 < self.layers.len() {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        (input, pre)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input of dimension {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let (_, mut pre) = self.forward_trace(x);
        Ok(pre.pop().expect("at least one layer"))
    }

    pub fn predict(&self, x: &[T]) -> Result<SimplexVec<T>> {
        Ok(SimplexVec::from_trusted(softmax(&self.logits(x)?)))
    }

    pub fn predict_batch<P: AsRef<[T]>>(&self, xs: &[P]) -> Result<Vec<SimplexVec<T>>> {
        xs.iter().map(|x| self.predict(x.as_ref())).collect()
    }

    /// Accumulates the cross-entropy gradient of one example into `grad`
    /// (same layout as [`Self::params`]) and returns its loss.
    fn backprop_into(&self, x: &[T], target: usize, grad: &mut [T]) -> T {
        let (input, pre) = self.forward_trace(x);
        let (loss, mut delta) = cross_entropy_logits(pre.last().expect("at least one layer"), target);

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.num_params();
                Some(start)
            })
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act_in: Vec<T> = if li == 0 {
                input.clone()
            } else {
                pre[li - 1].iter().map(|&v| v.max(T::zero())).collect()
            };
            let base = offsets[li];
            let cols = layer.weights.cols();
            for (o, &dz) in delta.iter().enumerate() {
                if dz == T::zero() {
                    continue;
                }
                let row = &mut grad[base + o * cols..base + (o + 1) * cols];
                for (g, &a) in row.iter_mut().zip(&act_in) {
                    *g = *g + dz * a;
                }
            }
            let bias_at = base + layer.weights.as_slice().len();
            for (o, &dz) in delta.iter().enumerate() {
                grad[bias_at + o] = grad[bias_at + o] + dz;
            }
            if li > 0 {
                let below = &pre[li - 1];
                let mut next = vec![T::zero(); cols];
                for (o, &dz) in delta.iter().enumerate() {
                    if dz == T::zero() {
                        continue;
                    }
                    for (n, &w) in next.iter_mut().zip(layer.weights.row(o)) {
                        *n = *n + dz * w;
                    }
                }
                for (n, &z) in next.iter_mut().zip(below) {
                    if z <= T::zero() {
                        *n = T::zero();
                    }
                }
                delta = next;
            }
        }
        loss
    }
}

/// Mean clamped negative log-probability of the true domain.
pub fn cross_entropy<T: Scalar>(predictions: &[SimplexVec<T>], targets: &[usize]) -> Result<T> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    let clamp = T::lit(LOG_CLAMP);
    let mut total = T::zero();
    for (p, &t) in predictions.iter().zip(targets) {
        let pt = *p
            .as_slice()
            .get(t)
            .ok_or_else(|| Error::InvalidInput(format!("target {t} outside 0..{}", p.dim())))?;
        total = total - pt.max(clamp).ln();
    }
    Ok(total / T::lit(predictions.len() as f64))
}

/// Loss of a single logit vector and its gradient with respect to the logits.
pub fn cross_entropy_logits<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let probs = softmax(logits);
    let clamp = T::lit(LOG_CLAMP);
    let loss = -probs[target].max(clamp).ln();
    if probs[target] <= clamp {
        return (loss, vec![T::zero(); logits.len()]);
    }
    let mut grad = probs;
    grad[target] = grad[target] - T::one();
    (loss, grad)
}

/// Mean cross-entropy over `(xs, targets)` and its gradient with respect to
/// every parameter, laid out as in [`DiscriminatorModel::params`].
pub fn loss_and_gradient<T: Scalar, P: AsRef<[T]>>(
    model: &DiscriminatorModel<T>,
    xs: &[P],
    targets: &[usize],
) -> Result<(T, Vec<T>)> {
    if xs.len() != targets.len() || xs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs for {} targets",
            xs.len(),
            targets.len()
        )));
    }
    let mut grad = vec![T::zero(); model.num_params()];
    let mut loss = T::zero();
    for (x, &t) in xs.iter().zip(targets) {
        model.check_input(x.as_ref())?;
        if t >= model.output_dim {
            return Err(Error::InvalidInput(format!("target {t} outside 0..{}", model.output_dim)));
        }
        loss = loss + model.backprop_into(x.as_ref(), t, &mut grad);
    }
    let n = T::lit(xs.len() as f64);
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok((loss / n, grad))
}

fn mean_loss<T: Scalar, P: AsRef<[T]>>(model: &DiscriminatorModel<T>, xs: &[P], targets: &[usize]) -> T {
    let clamp = T::lit(LOG_CLAMP);
    let mut total = T::zero();
    for (x, &t) in xs.iter().zip(targets) {
        let (_, pre) = model.forward_trace(x.as_ref());
        let probs = softmax(pre.last().expect("layer"));
        total = total - probs[t].max(clamp).ln();
    }
    total / T::lit(xs.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossCurves {
    /// Mean training loss per epoch; entry 0 is the initial model.
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
    /// Epoch whose snapshot was returned.
    pub best_epoch: usize,
}

impl LossCurves {
    /// CSV with header `epoch,train_loss,valid_loss`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidInput(format!("writing loss curves: {e}"));
        writeln!(w, "epoch,train_loss,valid_loss").map_err(io)?;
        for (e, (t, v)) in self.train.iter().zip(&self.valid).enumerate() {
            writeln!(w, "{e},{t:?},{v:?}").map_err(io)?;
        }
        Ok(())
    }
}

fn feature_moments<T: Scalar, P: AsRef<[T]>>(xs: &[P], p: usize) -> (Vec<T>, Vec<T>) {
    let n = T::lit(xs.len() as f64);
    let mut mean = vec![T::zero(); p];
    for x in xs {
        for (m, &v) in mean.iter_mut().zip(x.as_ref()) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); p];
    for x in xs {
        for ((s, &v), &m) in var.iter_mut().zip(x.as_ref()).zip(&mean) {
            *s = *s + (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > T::lit(1e-12) {
                sd
            } else {
                T::one()
            }
        })
        .collect();
    (mean, scale)
}

/// Mini-batch gradient descent on cross-entropy. Returns the snapshot with
/// the lowest validation loss among all evaluated epochs (the untrained
/// initialization included) along with the loss curves.
pub fn train_discriminator<T: Scalar, P: AsRef<[T]>>(
    train_x: &[P],
    train_d: &[usize],
    valid_x: &[P],
    valid_d: &[usize],
    r: usize,
    cfg: &TrainConfig,
) -> Result<(DiscriminatorModel<T>, LossCurves)> {
    cfg.validate()?;
    if train_x.is_empty() || valid_x.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    if train_x.len() != train_d.len() || valid_x.len() != valid_d.len() {
        return Err(Error::ShapeMismatch("features and domains differ in length".into()));
    }
    let p = train_x[0].as_ref().len();
    if let Some(bad) = train_x.iter().chain(valid_x).find(|x| x.as_ref().len() != p) {
        return Err(Error::ShapeMismatch(format!(
            "feature dimension {} differs from {p}",
            bad.as_ref().len()
        )));
    }
    if let Some(&d) = train_d.iter().chain(valid_d).find(|&&d| d >= r) {
        return Err(Error::InvalidInput(format!("domain {d} outside 0..{r}")));
    }
    for x in train_x.iter().chain(valid_x) {
        if x.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = if r == 1 {
        DiscriminatorModel::zeros(cfg.architecture, p, r)
    } else {
        DiscriminatorModel::random(cfg.architecture, p, r, &mut rng)
    };
    let (mean, scale) = feature_moments(train_x, p);
    model.input_mean = mean;
    model.input_scale = scale;

    let mut curves = LossCurves::default();
    let train0 = mean_loss(&model, train_x, train_d);
    let valid0 = mean_loss(&model, valid_x, valid_d);
    curves.train.push(train0.to_f64_lossy());
    curves.valid.push(valid0.to_f64_lossy());
    if r == 1 {
        return Ok((model, curves));
    }

    let mut best = model.clone();
    let mut best_valid = valid0;
    let mut since_best = 0;
    let mut lr = cfg.learning_rate;
    let mut params = model.params();
    let mut velocity = vec![T::zero(); params.len()];
    let decay_mask: Vec<bool> = model
        .layers
        .iter()
        .flat_map(|l| {
            std::iter::repeat_n(true, l.weights.as_slice().len()).chain(std::iter::repeat_n(false, l.bias.len()))
        })
        .collect();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut batch_x: Vec<&[T]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_d: Vec<usize> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_d.clear();
            for &i in chunk {
                batch_x.push(train_x[i].as_ref());
                batch_d.push(train_d[i]);
            }
            let (_, grad) = loss_and_gradient(&model, &batch_x, &batch_d)?;
            let step = T::lit(lr);
            let mu = T::lit(cfg.momentum);
            let wd = T::lit(cfg.weight_decay);
            for (((w, g), v), &decay) in params.iter_mut().zip(&grad).zip(&mut velocity).zip(&decay_mask) {
                let g = if decay { *g + wd * *w } else { *g };
                *v = mu * *v + g;
                *w = *w - step * *v;
            }
            model.set_params(&params)?;
        }
        let train_loss = mean_loss(&model, train_x, train_d);
        let valid_loss = mean_loss(&model, valid_x, valid_d);
        let params_finite = params.iter().all(|w| w.is_finite());
        if !params_finite || !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        curves.train.push(train_loss.to_f64_lossy());
        curves.valid.push(valid_loss.to_f64_lossy());
        if valid_loss < best_valid {
            best_valid = valid_loss;
            best = model.clone();
            curves.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        lr *= cfg.lr_decay;
    }
    Ok((best, curves))
}

/// Trains on the observed train and validation views of a dataset.
pub fn train_on_views(
    train: &ObservedView<'_>,
    valid: &ObservedView<'_>,
    r: usize,
    cfg: &TrainConfig,
) -> Result<(DiscriminatorModel<f64>, LossCurves)> {
    train_discriminator(&train.features, &train.domains, &valid.features, &valid.domains, r, cfg)
}

/// `q(d|x)` from a trained model.
pub fn predict_domain_posterior<T: Scalar>(model: &DiscriminatorModel<T>, x: &[T]) -> Result<SimplexVec<T>> {
    model.predict(x)
}

/// Fraction of points whose most probable domain is the true one.
pub fn domain_accuracy<T: Scalar, P: AsRef<[T]>>(
    model: &DiscriminatorModel<T>,
    xs: &[P],
    domains: &[usize],
) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &d) in xs.iter().zip(domains) {
        if argmax(model.predict(x.as_ref())?.as_slice()) == d {
            hits += 1;
        }
    }
    Ok(hits as f64 / xs.len().max(1) as f64)
}
