//! Small feed-forward classifier trained from scratch.
//!
//! Hidden layers are affine + ReLU; the classification layer is affine with
//! softmax cross-entropy. All arithmetic is f64 with a fixed accumulation
//! order, so two runs with the same config and seed produce bit-identical
//! parameters.
//!
//! RNG streams derived from `config.seed`: stream 0 initializes weights,
//! stream `epoch + 1` shuffles that epoch, and [`SUBSAMPLE_STREAM`] picks the
//! low-data subset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::labeler::LabelSet;

pub const SUBSAMPLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, then each hidden width; the last is the penultimate layer.
    pub layer_widths: Vec<usize>,
    pub n_classes: usize,
    pub learning_rate: f64,
    /// Multiply the rate by this every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train on a seeded subset of this many stimuli (low-data regime).
    #[serde(default)]
    pub subsample: Option<usize>,
}

impl MlpConfig {
    /// Toolkit defaults: rate 0.05 halved every 50 epochs, momentum 0.9, batch 64.
    pub fn new(layer_widths: Vec<usize>, n_classes: usize, epochs: usize, seed: u64) -> Self {
        Self {
            layer_widths,
            n_classes,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 50,
            momentum: 0.9,
            batch_size: 64,
            epochs,
            seed,
            subsample: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return bad(format!(
                "layer widths must be >= 1: {:?}",
                self.layer_widths
            ));
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) || self.decay_every == 0 {
            return bad("decay factor must be > 0 and decay_every >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.subsample == Some(0) {
            return bad("subsample must be >= 1".into());
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    fn input_width(&self) -> usize {
        self.layer_widths[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// n_out x n_in, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// `input (rows x n_in) * W^T + b`
    fn affine(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * self.n_out);
        for x in input.chunks_exact(self.n_in).take(rows) {
            for (w, b) in self.weights.chunks_exact(self.n_in).zip(&self.biases) {
                out.push(dot(x, w) + b);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hidden layers followed by the classification layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// He-initialized hidden layers; classification layer and all biases zero.
    pub fn init(config: &MlpConfig) -> Self {
        let mut rng = stream_rng(config.seed, 0);
        let mut layers = Vec::with_capacity(config.layer_widths.len());
        for w in config.layer_widths.windows(2) {
            let mut layer = Layer::zeros(w[0], w[1]);
            let scale = (2.0 / w[0] as f64).sqrt();
            for v in &mut layer.weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
            layers.push(layer);
        }
        let last = *config.layer_widths.last().expect("validated");
        layers.push(Layer::zeros(last, config.n_classes));
        Self { layers }
    }

    /// Every parameter drawn at random (gradient checks want a generic point).
    pub fn random(config: &MlpConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = Self::init(config);
        for layer in &mut params.layers {
            let scale = (2.0 / layer.n_in as f64).sqrt();
            for v in &mut layer.weights {
                let z: f64 = StandardNormal.sample(rng);
                *v = scale * z;
            }
            for v in &mut layer.biases {
                let z: f64 = StandardNormal.sample(rng);
                *v = 0.1 * z;
            }
        }
        params
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    /// Flat index over (weights, biases) of each layer in order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if idx < layer.weights.len() {
                return &mut layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                return &mut layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Activations of every layer for a batch: `acts[0]` is the input,
    /// `acts[l]` the post-ReLU output of hidden layer `l`, and the last
    /// entry the logits. `pre[l]` are hidden pre-activations.
    fn forward(&self, input: &[f64], rows: usize) -> Forward {
        let n_hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(n_hidden);
        acts.push(input.to_vec());
        for layer in &self.layers[..n_hidden] {
            let z = layer.affine(acts.last().unwrap(), rows);
            acts.push(z.iter().map(|&v| v.max(0.0)).collect());
            pre.push(z);
        }
        let logits = self.layers[n_hidden].affine(acts.last().unwrap(), rows);
        acts.push(logits);
        Forward { acts, pre }
    }
}

struct Forward {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Forward {
    fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-row (cross-entropy, argmax == label) from logits.
fn row_losses(logits: &[f64], labels: &[usize], k: usize) -> Vec<(f64, bool)> {
    logits
        .chunks_exact(k)
        .zip(labels)
        .map(|(z, &y)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut best = 0;
            for (c, v) in z.iter().enumerate() {
                if *v > z[best] {
                    best = c;
                }
            }
            (lse - z[y], best == y)
        })
        .collect()
}

/// Parameter gradients, shaped like the layers of [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn get(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            if idx < layer.weights.len() {
                return layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                return layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("gradient index out of range");
    }
}

/// Mean softmax cross-entropy of a batch and its gradient.
pub fn loss_and_gradients(params: &MlpParams, input: &[f64], labels: &[usize]) -> (f64, Gradients) {
    let rows = labels.len();
    let k = params.n_classes();
    let fwd = params.forward(input, rows);
    let logits = fwd.logits();

    let mut loss = 0.0;
    let mut delta = vec![0.0; rows * k];
    for (r, (z, &y)) in logits.chunks_exact(k).zip(labels).enumerate() {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += max + sum.ln() - z[y];
        for c in 0..k {
            let onehot = if c == y { 1.0 } else { 0.0 };
            delta[r * k + c] = (exps[c] / sum - onehot) / rows as f64;
        }
    }
    loss /= rows as f64;

    let mut grads: Vec<Layer> = params
        .layers
        .iter()
        .map(|l| Layer::zeros(l.n_in, l.n_out))
        .collect();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input_act = &fwd.acts[l];
        let g = &mut grads[l];
        for r in 0..rows {
            let a = &input_act[r * layer.n_in..(r + 1) * layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[r * layer.n_out + o];
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    row.iter_mut().zip(a).for_each(|(w, x)| *w += d * x);
                    g.biases[o] += d;
                }
            }
        }
        if l == 0 {
            break;
        }
        // back through layer l into the ReLU of hidden layer l - 1
        let mut prev = vec![0.0; rows * layer.n_in];
        for r in 0..rows {
            let out = &mut prev[r * layer.n_in..(r + 1) * layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[r * layer.n_out + o];
                if d != 0.0 {
                    let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    out.iter_mut().zip(w).for_each(|(p, w)| *p += d * w);
                }
            }
        }
        for (p, z) in prev.iter_mut().zip(&fwd.pre[l - 1]) {
            if *z <= 0.0 {
                *p = 0.0;
            }
        }
        delta = prev;
    }
    (loss, Gradients { layers: grads })
}

/// Mean loss and accuracy over a whole matrix, evaluated in fixed-size
/// chunks so memory stays bounded.
pub fn evaluate(params: &MlpParams, data: &[f64], labels: &[usize]) -> (f64, f64) {
    const CHUNK: usize = 1024;
    let width = params.input_width();
    let k = params.n_classes();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in data.chunks(CHUNK * width).zip(labels.chunks(CHUNK)) {
        let fwd = params.forward(x, y.len());
        for (l, ok) in row_losses(fwd.logits(), y, k) {
            loss += l;
            correct += usize::from(ok);
        }
    }
    let n = labels.len() as f64;
    (loss / n, correct as f64 / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-training-set loss before training (entry 0) and after each epoch.
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub n_train: usize,
    pub seed: u64,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn validate_inputs(
    config: &MlpConfig,
    data: &EmbeddingMatrix,
    labels: &LabelSet,
) -> Result<Vec<usize>> {
    config.validate()?;
    if data.n_cols() != config.input_width() {
        return Err(Error::BadShape(format!(
            "data has {} features, config expects {}",
            data.n_cols(),
            config.input_width()
        )));
    }
    let classes = labels.classes_for(data.ids())?;
    if let Some(&bad) = classes.iter().find(|&&c| c >= config.n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes: config.n_classes,
        });
    }
    Ok(classes)
}

/// Mini-batch SGD with momentum (`v = mu v + g; w -= lr v`) on mean
/// softmax cross-entropy.
pub fn train(
    config: &MlpConfig,
    data: &EmbeddingMatrix,
    labels: &LabelSet,
) -> Result<(MlpParams, TrainReport)> {
    let started = Instant::now();
    let classes = validate_inputs(config, data, labels)?;

    let mut train_rows: Vec<usize> = (0..data.n_rows()).collect();
    if let Some(s) = config.subsample {
        if s < train_rows.len() {
            train_rows.shuffle(&mut stream_rng(config.seed, SUBSAMPLE_STREAM));
            train_rows.truncate(s);
            train_rows.sort_unstable();
        }
    }
    let width = config.input_width();
    let x: Vec<f64> = train_rows
        .iter()
        .flat_map(|&i| data.row(i))
        .copied()
        .collect();
    let y: Vec<usize> = train_rows.iter().map(|&i| classes[i]).collect();
    let n = y.len();

    let mut params = MlpParams::init(config);
    let mut velocity: Vec<Layer> = params
        .layers
        .iter()
        .map(|l| Layer::zeros(l.n_in, l.n_out))
        .collect();

    let (loss0, acc0) = evaluate(&params, &x, &y);
    let mut report = TrainReport {
        loss: vec![loss0],
        accuracy: vec![acc0],
        final_accuracy: acc0,
        n_train: n,
        seed: config.seed,
        wall_clock_secs: 0.0,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut bx = Vec::with_capacity(config.batch_size * width);
    let mut by = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let rate = config.rate_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64 + 1));
        for batch in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&x[i * width..(i + 1) * width]);
                by.push(y[i]);
            }
            let (_, grads) = loss_and_gradients(&params, &bx, &by);
            for ((p, v), g) in params
                .layers
                .iter_mut()
                .zip(&mut velocity)
                .zip(&grads.layers)
            {
                for ((w, vw), gw) in p.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                    *vw = config.momentum * *vw + gw;
                    *w -= rate * *vw;
                }
                for ((b, vb), gb) in p.biases.iter_mut().zip(&mut v.biases).zip(&g.biases) {
                    *vb = config.momentum * *vb + gb;
                    *b -= rate * *vb;
                }
            }
        }
        let (loss, acc) = evaluate(&params, &x, &y);
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        report.loss.push(loss);
        report.accuracy.push(acc);
        report.final_accuracy = acc;
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Post-ReLU activations of the last hidden layer (the input itself when
/// the network has no hidden layer).
pub fn extract_penultimate(params: &MlpParams, data: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if data.n_cols() != params.input_width() {
        return Err(Error::BadShape(format!(
            "data has {} features, network expects {}",
            data.n_cols(),
            params.input_width()
        )));
    }
    let fwd = params.forward(data.data(), data.n_rows());
    let n_hidden = params.layers.len() - 1;
    let width = if n_hidden == 0 {
        params.input_width()
    } else {
        params.layers[n_hidden - 1].n_out
    };
    EmbeddingMatrix::new(
        data.ids().to_vec(),
        width,
        fwd.acts[n_hidden].clone(),
        format!("penultimate of {}", data.source_tag()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// max over parameters of |analytic - fd| / max(1e-8, |fd|)
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// Parameters skipped because +-h crossed a ReLU kink.
    pub n_kinks: usize,
}

pub const FD_STEP: f64 = 1e-5;

fn relu_pattern(params: &MlpParams, input: &[f64], rows: usize) -> Vec<bool> {
    params
        .forward(input, rows)
        .pre
        .iter()
        .flatten()
        .map(|&z| z > 0.0)
        .collect()
}

/// Compare analytic gradients with central differences at a random
/// parameter point drawn from `config.seed`.
pub fn gradient_check(
    config: &MlpConfig,
    input: &[f64],
    labels: &[usize],
) -> Result<GradCheckReport> {
    config.validate()?;
    let rows = labels.len();
    if rows == 0 || input.len() != rows * config.input_width() {
        return Err(Error::BadShape("batch shape does not match config".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= config.n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes: config.n_classes,
        });
    }
    let mut rng = stream_rng(config.seed, 0);
    let mut params = MlpParams::random(config, &mut rng);
    check_at(&mut params, input, labels)
}

/// Same as [`gradient_check`] at a caller-supplied parameter point.
pub fn check_at(
    params: &mut MlpParams,
    input: &[f64],
    labels: &[usize],
) -> Result<GradCheckReport> {
    let rows = labels.len();
    let (_, analytic) = loss_and_gradients(params, input, labels);
    let base_pattern = relu_pattern(params, input, rows);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: 0,
        n_kinks: 0,
    };
    for idx in 0..params.n_params() {
        let original = *params.param_mut(idx);
        *params.param_mut(idx) = original + FD_STEP;
        let plus = evaluate(params, input, labels).0;
        let plus_pattern = relu_pattern(params, input, rows);
        *params.param_mut(idx) = original - FD_STEP;
        let minus = evaluate(params, input, labels).0;
        let minus_pattern = relu_pattern(params, input, rows);
        *params.param_mut(idx) = original;

        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.n_kinks += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let err = (analytic.get(idx) - fd).abs() / fd.abs().max(1e-8);
        report.max_rel_error = report.max_rel_error.max(err);
        report.n_checked += 1;
    }
    Ok(report)
}
