//! Three-layer graph convolution with mean pooling, logistic readout,
//! hand-rolled backward pass and full-batch training.

use super::data::SlipDataset;
use super::graph::{build_graph_window, TactileGraph};
use super::SlipnetError;
use crate::rng::{self, Domain};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Weights of the classifier: three propagation layers and the readout.
/// Persistence uses an explicit dimension-header format (see the CLI crate)
/// rather than a derive, so files stay row-major and tool-agnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    /// `d_{l-1} x d_l` weight matrices.
    pub weights: [DMatrix<f64>; 3],
    pub readout_weights: DVector<f64>,
    pub readout_bias: f64,
}

impl GcnParams {
    /// Seeded initialisation: uniform in `±1/sqrt(fan_in)` per layer, zero
    /// readout (so an untrained model outputs probability 0.5).
    pub fn init(feature_dim: usize, hidden: [usize; 3], seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Slipnet, 0);
        let dims = [feature_dim, hidden[0], hidden[1], hidden[2]];
        let weights = std::array::from_fn(|l| {
            let scale = 1.0 / (dims[l] as f64).sqrt();
            DMatrix::from_fn(dims[l], dims[l + 1], |_, _| rng.gen_range(-scale..scale))
        });
        GcnParams {
            weights,
            readout_weights: DVector::zeros(hidden[2]),
            readout_bias: 0.0,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.weights[0].nrows(),
            self.weights[0].ncols(),
            self.weights[1].ncols(),
            self.weights[2].ncols(),
        ]
    }

    pub fn validate(&self) -> Result<(), SlipnetError> {
        for l in 0..2 {
            if self.weights[l].ncols() != self.weights[l + 1].nrows() {
                return Err(SlipnetError::DimensionMismatch(format!(
                    "layer {} output {} does not match layer {} input {}",
                    l + 1,
                    self.weights[l].ncols(),
                    l + 2,
                    self.weights[l + 1].nrows()
                )));
            }
        }
        if self.readout_weights.len() != self.weights[2].ncols() {
            return Err(SlipnetError::DimensionMismatch(format!(
                "readout expects {} features, layer 3 outputs {}",
                self.readout_weights.len(),
                self.weights[2].ncols()
            )));
        }
        if !self.iter_values().all(f64::is_finite) {
            return Err(SlipnetError::DimensionMismatch(
                "non-finite parameter".into(),
            ));
        }
        Ok(())
    }

    fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.readout_weights.iter().copied())
            .chain(std::iter::once(self.readout_bias))
    }

    /// Visits every parameter as a mutable scalar, in a fixed order.
    fn for_each_param(&mut self, mut f: impl FnMut(&mut f64)) {
        for w in self.weights.iter_mut() {
            for v in w.iter_mut() {
                f(v);
            }
        }
        for v in self.readout_weights.iter_mut() {
            f(v);
        }
        f(&mut self.readout_bias);
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.readout_weights.len() + 1
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Propagated inputs per layer: `A_hat * H_{l-1}`.
    pub propagated: [DMatrix<f64>; 3],
    /// Pre-activation outputs per layer.
    pub pre_activation: [DMatrix<f64>; 3],
    /// Mean-pooled final hidden state.
    pub pooled: DVector<f64>,
    pub logit: f64,
    pub probability: f64,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass: `H_l = relu(A_hat H_{l-1} W_l)`, mean pooling over nodes,
/// logistic readout.
pub fn gcn_forward(params: &GcnParams, graph: &TactileGraph) -> Result<ForwardCache, SlipnetError> {
    if graph.feature_dim() != params.weights[0].nrows() {
        return Err(SlipnetError::DimensionMismatch(format!(
            "graph features have dimension {}, layer 1 expects {}",
            graph.feature_dim(),
            params.weights[0].nrows()
        )));
    }
    params.validate()?;
    let a_hat = graph.a_hat.as_ref();
    let mut h = graph.node_features.clone();
    let mut propagated: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(0, 0));
    let mut pre_activation: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(0, 0));
    for l in 0..3 {
        let p = a_hat * &h;
        let z = &p * &params.weights[l];
        h = relu(&z);
        propagated[l] = p;
        pre_activation[l] = z;
    }
    let n = h.nrows() as f64;
    let pooled = DVector::from_iterator(h.ncols(), h.column_iter().map(|c| c.sum() / n));
    let logit = params.readout_weights.dot(&pooled) + params.readout_bias;
    Ok(ForwardCache {
        propagated,
        pre_activation,
        pooled,
        logit,
        probability: sigmoid(logit),
    })
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Gradient holder mirroring [`GcnParams`].
#[derive(Clone, Debug)]
struct Grads {
    weights: [DMatrix<f64>; 3],
    readout_weights: DVector<f64>,
    readout_bias: f64,
}

impl Grads {
    fn zeros_like(params: &GcnParams) -> Self {
        Grads {
            weights: std::array::from_fn(|l| {
                DMatrix::zeros(params.weights[l].nrows(), params.weights[l].ncols())
            }),
            readout_weights: DVector::zeros(params.readout_weights.len()),
            readout_bias: 0.0,
        }
    }

    fn add_assign(&mut self, other: &Grads) {
        for l in 0..3 {
            self.weights[l] += &other.weights[l];
        }
        self.readout_weights += &other.readout_weights;
        self.readout_bias += other.readout_bias;
    }

    fn scale(&mut self, s: f64) {
        for w in self.weights.iter_mut() {
            *w *= s;
        }
        self.readout_weights *= s;
        self.readout_bias *= s;
    }
}

/// Single-sample loss and analytic parameter gradients (data term only).
fn backward(
    params: &GcnParams,
    graph: &TactileGraph,
    label: f64,
) -> Result<(f64, Grads), SlipnetError> {
    let cache = gcn_forward(params, graph)?;
    let loss = bce_from_logit(cache.logit, label);
    let mut grads = Grads::zeros_like(params);
    let d_logit = cache.probability - label;
    grads.readout_bias = d_logit;
    grads.readout_weights = &cache.pooled * d_logit;
    let n = graph.node_count() as f64;
    // d loss / d H3: mean pooling spreads the readout weight over nodes.
    let mut d_h: DMatrix<f64> = DMatrix::from_fn(
        graph.node_count(),
        params.readout_weights.len(),
        |_, j| params.readout_weights[j] * d_logit / n,
    );
    let a_hat = graph.a_hat.as_ref();
    for l in (0..3).rev() {
        // Through the ReLU.
        let d_z = d_h.zip_map(&cache.pre_activation[l], |g, z| if z > 0.0 { g } else { 0.0 });
        grads.weights[l] = cache.propagated[l].transpose() * &d_z;
        if l > 0 {
            // d loss / d H_{l-1} = A_hat^T dZ W^T; A_hat is symmetric.
            d_h = a_hat * (&d_z * params.weights[l].transpose());
        }
    }
    Ok((loss, grads))
}

/// Full-batch training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    /// Hidden widths of the three layers.
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 3],
    /// Frames stacked per node feature (1 = single filtered frame).
    #[serde(default = "default_window")]
    pub feature_window: usize,
}

fn default_hidden() -> [usize; 3] {
    [16, 16, 16]
}

fn default_window() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2.0,
            epochs: 200,
            l2_penalty: 1e-4,
            seed: 0,
            hidden: default_hidden(),
            feature_window: default_window(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SlipnetError> {
        if !(self.learning_rate >= 0.0) {
            return Err(SlipnetError::InvalidConfig(
                "learning_rate must be non-negative".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(SlipnetError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.l2_penalty < 0.0 {
            return Err(SlipnetError::InvalidConfig(
                "l2_penalty must be non-negative".into(),
            ));
        }
        if self.feature_window == 0 || self.hidden.contains(&0) {
            return Err(SlipnetError::InvalidConfig(
                "hidden widths and feature_window must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trained parameters plus the per-epoch loss history (mean binary
/// cross-entropy before each update; entry 0 is the initial loss).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GcnParams,
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on BCE + l2_penalty * ||W||^2 (weights only,
/// bias excluded). Deterministic given the config seed.
pub fn train(dataset: &SlipDataset, config: &TrainConfig) -> Result<TrainOutcome, SlipnetError> {
    config.validate()?;
    if dataset.samples.is_empty() {
        return Err(SlipnetError::EmptyDataset);
    }
    let graphs: Vec<(TactileGraph, f64)> = dataset
        .samples
        .iter()
        .map(|(frames, label)| (build_graph_window(frames), *label as f64))
        .collect();
    let mut params = GcnParams::init(config.feature_window, config.hidden, config.seed);
    let inv_n = 1.0 / graphs.len() as f64;
    let mut loss_history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        // Parallel per-sample gradients, reduced in a fixed order so the
        // result is independent of thread count.
        let per_sample: Vec<Result<(f64, Grads), SlipnetError>> = graphs
            .par_iter()
            .map(|(graph, label)| backward(&params, graph, *label))
            .collect();
        let mut total = Grads::zeros_like(&params);
        let mut loss_sum = 0.0;
        for r in per_sample {
            let (loss, grads) = r?;
            loss_sum += loss;
            total.add_assign(&grads);
        }
        let mean_loss = loss_sum * inv_n;
        if !mean_loss.is_finite() {
            return Err(SlipnetError::Divergence { epoch });
        }
        loss_history.push(mean_loss);
        total.scale(inv_n);
        for l in 0..3 {
            let step = &total.weights[l] + &params.weights[l] * (2.0 * config.l2_penalty);
            params.weights[l] -= step * config.learning_rate;
        }
        let readout_step =
            &total.readout_weights + &params.readout_weights * (2.0 * config.l2_penalty);
        params.readout_weights -= readout_step * config.learning_rate;
        params.readout_bias -= config.learning_rate * total.readout_bias;
    }
    // Final loss after the last update.
    let final_loss: f64 = graphs
        .par_iter()
        .map(|(graph, label)| {
            gcn_forward(&params, graph).map(|c| bce_from_logit(c.logit, *label))
        })
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .sum::<f64>()
        * inv_n;
    if !final_loss.is_finite() {
        return Err(SlipnetError::Divergence {
            epoch: config.epochs,
        });
    }
    loss_history.push(final_loss);
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter, on the single-sample BCE loss.
pub fn grad_check(
    params: &GcnParams,
    graph: &TactileGraph,
    label: f64,
    epsilon: f64,
) -> Result<f64, SlipnetError> {
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon must lie in [1e-7, 1e-3]"
    );
    let (_, analytic) = backward(params, graph, label)?;
    let mut analytic_flat = Vec::with_capacity(params.parameter_count());
    for l in 0..3 {
        analytic_flat.extend(analytic.weights[l].iter().copied());
    }
    analytic_flat.extend(analytic.readout_weights.iter().copied());
    analytic_flat.push(analytic.readout_bias);

    let mut work = params.clone();
    let count = params.parameter_count();
    let mut max_rel = 0.0f64;
    for k in 0..count {
        let mut probe = |delta: f64| -> Result<f64, SlipnetError> {
            let mut idx = 0;
            work.for_each_param(|v| {
                if idx == k {
                    *v += delta;
                }
                idx += 1;
            });
            let cache = gcn_forward(&work, graph)?;
            let loss = bce_from_logit(cache.logit, label);
            let mut idx = 0;
            work.for_each_param(|v| {
                if idx == k {
                    *v -= delta;
                }
                idx += 1;
            });
            Ok(loss)
        };
        let plus = probe(epsilon)?;
        let minus = probe(-epsilon)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = analytic_flat[k].abs().max(numeric.abs()).max(1e-12);
        max_rel = max_rel.max((analytic_flat[k] - numeric).abs() / denom);
    }
    Ok(max_rel)
}

/// Binary confusion counts at the 0.5 threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Accuracy and confusion matrix on a dataset split. Probability exactly
/// 0.5 predicts class 0.
pub fn evaluate(params: &GcnParams, dataset: &SlipDataset) -> Result<Evaluation, SlipnetError> {
    if dataset.samples.is_empty() {
        return Err(SlipnetError::EmptyDataset);
    }
    let outcomes: Vec<Result<(bool, bool), SlipnetError>> = dataset
        .samples
        .par_iter()
        .map(|(frames, label)| {
            let graph = build_graph_window(frames);
            let cache = gcn_forward(params, &graph)?;
            Ok((cache.probability > 0.5, *label == 1))
        })
        .collect();
    let mut confusion = ConfusionMatrix::default();
    for r in outcomes {
        match r? {
            (true, true) => confusion.true_positive += 1,
            (false, false) => confusion.true_negative += 1,
            (true, false) => confusion.false_positive += 1,
            (false, true) => confusion.false_negative += 1,
        }
    }
    let accuracy =
        (confusion.true_positive + confusion.true_negative) as f64 / confusion.total() as f64;
    Ok(Evaluation {
        accuracy,
        confusion,
    })
}
