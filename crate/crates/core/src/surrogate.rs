//! Feed-forward surrogates for second-stage quantities.
//!
//! A fully connected network maps a feature description of a candidate
//! first-stage decision to estimates of second-stage values: the integral
//! optimum, the relaxed optimum, and the dual reductions used by continuous
//! optimality cuts.  Training minimizes a per-output weighted L1 loss with
//! Adam and early stopping on a validation split; all randomness flows from
//! explicit seeds so runs are reproducible bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::SparseMat;

/// Default Adam step size.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
/// Adam first-moment decay rate.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay rate.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator guard.
pub const ADAM_EPS: f64 = 1e-8;
/// On-disk container version shared by network and dataset files.
pub const FILE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("length mismatch: expected {expected}, got {got} for {what}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("dataset is empty or inconsistent: {0}")]
    BadDataset(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(
        "network shape mismatch: file has {found_in} inputs / {found_out} outputs, \
         expected {expected_in} / {expected_out}"
    )]
    SpecMismatch {
        expected_in: usize,
        expected_out: usize,
        found_in: usize,
        found_out: usize,
    },
}

/// Architecture description: `hidden_layers` fully connected hidden layers of
/// `units_per_layer` units each.  Rectified-linear activations apply to every
/// hidden layer except the last; the last hidden layer and the output layer
/// are linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_len: usize,
    pub output_len: usize,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
}

impl NetworkSpec {
    pub fn new(
        input_len: usize,
        output_len: usize,
        hidden_layers: usize,
        units_per_layer: usize,
    ) -> Result<Self, SurrogateError> {
        if input_len == 0 || output_len == 0 {
            return Err(SurrogateError::BadSpec(
                "input_len and output_len must be positive".into(),
            ));
        }
        if hidden_layers == 0 || units_per_layer == 0 {
            return Err(SurrogateError::BadSpec(
                "hidden_layers and units_per_layer must be at least 1".into(),
            ));
        }
        Ok(NetworkSpec {
            input_len,
            output_len,
            hidden_layers,
            units_per_layer,
        })
    }

    /// Default single-output architecture for desk-scale data volumes.
    pub fn desk_single(input_len: usize) -> Self {
        NetworkSpec {
            input_len,
            output_len: 1,
            hidden_layers: 4,
            units_per_layer: 64,
        }
    }

    /// Default multi-output architecture; deeper and wider than the
    /// single-output default because the targets are harder to fit.
    pub fn desk_multi(input_len: usize, output_len: usize) -> Self {
        NetworkSpec {
            input_len,
            output_len,
            hidden_layers: 6,
            units_per_layer: 80,
        }
    }
}

/// One dense layer: `weights[o][i]` multiplies input `i` into output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(other: &Layer) -> Layer {
        Layer {
            weights: other
                .weights
                .iter()
                .map(|row| vec![0.0; row.len()])
                .collect(),
            bias: vec![0.0; other.bias.len()],
        }
    }
}

/// Per-feature affine rescaling into [0, 1] for the listed indices; features
/// not listed (binary indicators) pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub ranges: Vec<(usize, f64, f64)>,
}

impl FeatureScaling {
    pub fn identity() -> Self {
        FeatureScaling { ranges: Vec::new() }
    }

    fn apply(&self, features: &[f64]) -> Vec<f64> {
        let mut out = features.to_vec();
        for &(idx, lo, hi) in &self.ranges {
            let span = hi - lo;
            out[idx] = if span.abs() > 1e-12 {
                (features[idx] - lo) / span
            } else {
                0.0
            };
        }
        out
    }
}

/// Trained predictor: layer parameters plus the input scaling and per-output
/// L1 weights fixed at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub input_scaling: FeatureScaling,
    pub output_weights: Vec<f64>,
}

impl Network {
    /// Uniform Xavier initialization of all weights; hidden biases start at
    /// zero and output biases at `output_bias` (typically the per-output
    /// label mean, which shortens the distance Adam has to travel).
    pub fn initialize(
        spec: &NetworkSpec,
        input_scaling: FeatureScaling,
        output_weights: Vec<f64>,
        output_bias: Vec<f64>,
        seed: u64,
    ) -> Result<Network, SurrogateError> {
        if output_weights.len() != spec.output_len || output_bias.len() != spec.output_len {
            return Err(SurrogateError::LengthMismatch {
                what: "output weight/bias vectors",
                expected: spec.output_len,
                got: output_weights.len().min(output_bias.len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![spec.input_len];
        dims.extend(std::iter::repeat(spec.units_per_layer).take(spec.hidden_layers));
        dims.push(spec.output_len);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect();
            let bias = if l == dims.len() - 2 {
                output_bias.clone()
            } else {
                vec![0.0; fan_out]
            };
            layers.push(Layer { weights, bias });
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
            input_scaling,
            output_weights,
        })
    }

    /// Deterministic inference: input scaling, dense layers, rectification on
    /// all hidden layers but the last, linear last hidden and output layers.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        if features.len() != self.spec.input_len {
            return Err(SurrogateError::LengthMismatch {
                what: "feature vector",
                expected: self.spec.input_len,
                got: features.len(),
            });
        }
        let mut act = self.input_scaling.apply(features);
        for (l, layer) in self.layers.iter().enumerate() {
            act = affine(layer, &act);
            if l + 1 < self.spec.hidden_layers {
                for v in &mut act {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(act)
    }

    /// Forward pass keeping every post-activation vector (index 0 is the
    /// scaled input); used by backpropagation.
    fn forward_cached(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.input_scaling.apply(features));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = affine(layer, acts.last().unwrap());
            if l + 1 < self.spec.hidden_layers {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(next);
        }
        acts
    }
}

fn affine(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let mut out = layer.bias.clone();
    for (o, row) in layer.weights.iter().enumerate() {
        let mut sum = 0.0;
        for (w, a) in row.iter().zip(input) {
            sum += w * a;
        }
        out[o] += sum;
    }
    out
}

/// Multiplicative down-shift of a prediction; callers compare the shifted
/// value, never the cut coefficients.
pub fn apply_shift(prediction: f64, shift: f64) -> f64 {
    debug_assert!(shift > 0.0 && shift <= 1.0);
    shift * prediction
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

/// Server-location features: capacities concatenated with the binary open
/// indicators.  Capacities are the non-binary block and get rescaled.
pub fn featurize_sslp(capacities: &[f64], x: &[f64]) -> Result<Vec<f64>, SurrogateError> {
    if capacities.len() != x.len() {
        return Err(SurrogateError::LengthMismatch {
            what: "capacity vector vs x",
            expected: x.len(),
            got: capacities.len(),
        });
    }
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend_from_slice(capacities);
    out.extend_from_slice(x);
    Ok(out)
}

/// Indices of the non-binary features produced by [`featurize_sslp`].
pub fn sslp_non_binary(n_servers: usize) -> Vec<usize> {
    (0..n_servers).collect()
}

/// Knapsack-coupling features: the effective right-hand side `h + T x`.
/// Callers choosing the convention `W y >= h - T x` pass the negated
/// technology matrix so the features equal the rhs the subproblem sees.
pub fn featurize_smkp(h: &[f64], t: &SparseMat, x: &[f64]) -> Result<Vec<f64>, SurrogateError> {
    if t.nrows() != h.len() {
        return Err(SurrogateError::LengthMismatch {
            what: "technology matrix rows vs h",
            expected: h.len(),
            got: t.nrows(),
        });
    }
    if t.ncols() != x.len() {
        return Err(SurrogateError::LengthMismatch {
            what: "technology matrix cols vs x",
            expected: x.len(),
            got: t.ncols(),
        });
    }
    let tx = t.mul_vec(x);
    Ok(h.iter().zip(&tx).map(|(hi, ti)| hi + ti).collect())
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Vec<f64>,
}

/// In-memory dataset with fixed feature/label widths.  `non_binary` lists the
/// feature indices that should be rescaled at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_len: usize,
    pub label_len: usize,
    pub non_binary: Vec<usize>,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(feature_len: usize, label_len: usize, non_binary: Vec<usize>) -> Self {
        Dataset {
            feature_len,
            label_len,
            non_binary,
            examples: Vec::new(),
        }
    }

    pub fn push(&mut self, example: LabeledExample) -> Result<(), SurrogateError> {
        if example.features.len() != self.feature_len {
            return Err(SurrogateError::LengthMismatch {
                what: "example features",
                expected: self.feature_len,
                got: example.features.len(),
            });
        }
        if example.label.len() != self.label_len {
            return Err(SurrogateError::LengthMismatch {
                what: "example label",
                expected: self.label_len,
                got: example.label.len(),
            });
        }
        self.examples.push(example);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn with_indices(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_len: self.feature_len,
            label_len: self.label_len,
            non_binary: self.non_binary.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Seeded 64% / 16% / 20% partition into train, validation and test sets.
    /// The three index sets are disjoint and cover the whole dataset.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset, Dataset) {
        let n = self.examples.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 64 / 100;
        let n_val = n * 16 / 100;
        (
            self.with_indices(&idx[..n_train]),
            self.with_indices(&idx[n_train..n_train + n_val]),
            self.with_indices(&idx[n_train + n_val..]),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    feature_len: usize,
    label_len: usize,
    count: usize,
    non_binary: Vec<usize>,
    rows: Vec<(Vec<f64>, Vec<f64>)>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), SurrogateError> {
    let file = DatasetFile {
        version: FILE_VERSION,
        feature_len: dataset.feature_len,
        label_len: dataset.label_len,
        count: dataset.examples.len(),
        non_binary: dataset.non_binary.clone(),
        rows: dataset
            .examples
            .iter()
            .map(|e| (e.features.clone(), e.label.clone()))
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, SurrogateError> {
    let text = std::fs::read_to_string(path)?;
    let file: DatasetFile =
        serde_json::from_str(&text).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
    if file.version != FILE_VERSION {
        return Err(SurrogateError::VersionMismatch {
            found: file.version,
            expected: FILE_VERSION,
        });
    }
    if file.rows.len() != file.count {
        return Err(SurrogateError::Corrupt(format!(
            "row count {} does not match header count {}",
            file.rows.len(),
            file.count
        )));
    }
    let mut ds = Dataset::new(file.feature_len, file.label_len, file.non_binary);
    for (features, label) in file.rows {
        ds.push(LabeledExample { features, label })?;
    }
    Ok(ds)
}

/// Ingests a headerless CSV where each line holds `feature_len` feature
/// values followed by `label_len` label values.
pub fn load_dataset_csv(
    path: &Path,
    feature_len: usize,
    label_len: usize,
    non_binary: Vec<usize>,
) -> Result<Dataset, SurrogateError> {
    let text = std::fs::read_to_string(path)?;
    let mut ds = Dataset::new(feature_len, label_len, non_binary);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse()).collect();
        let values = values.map_err(|e| {
            SurrogateError::Corrupt(format!("line {}: bad number: {e}", lineno + 1))
        })?;
        if values.len() != feature_len + label_len {
            return Err(SurrogateError::Corrupt(format!(
                "line {}: expected {} values, got {}",
                lineno + 1,
                feature_len + label_len,
                values.len()
            )));
        }
        ds.push(LabeledExample {
            features: values[..feature_len].to_vec(),
            label: values[feature_len..].to_vec(),
        })?;
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

fn sign_zero(v: f64) -> f64 {
    // L1 subgradient convention: zero residual contributes zero gradient.
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean weighted L1 loss over a slice of examples.
pub fn weighted_l1_loss(net: &Network, examples: &[LabeledExample]) -> f64 {
    let mut total = 0.0;
    for ex in examples {
        let out = net
            .forward(&ex.features)
            .expect("dataset shape checked at construction");
        for ((p, y), w) in out.iter().zip(&ex.label).zip(&net.output_weights) {
            total += w * (p - y).abs();
        }
    }
    total / examples.len() as f64
}

/// Mean weighted L1 loss and its gradient with respect to every layer
/// parameter, averaged over the batch.
pub fn weighted_l1_gradient(net: &Network, examples: &[LabeledExample]) -> (f64, Vec<Layer>) {
    let mut grads: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
    let mut total = 0.0;
    for ex in examples {
        let acts = net.forward_cached(&ex.features);
        let out = acts.last().unwrap();
        let mut delta: Vec<f64> = out
            .iter()
            .zip(&ex.label)
            .zip(&net.output_weights)
            .map(|((p, y), w)| {
                total += w * (p - y).abs();
                w * sign_zero(p - y)
            })
            .collect();
        for l in (0..net.layers.len()).rev() {
            let input = &acts[l];
            let grad = &mut grads[l];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    let row = &mut grad.weights[o];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grad.bias[o] += d;
            }
            if l == 0 {
                break;
            }
            let layer = &net.layers[l];
            let mut prev = vec![0.0; input.len()];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(&layer.weights[o]) {
                        *p += w * d;
                    }
                }
            }
            // Rectification was applied to acts[l] whenever l < hidden_layers;
            // its subgradient gates the backward signal.
            if l < net.spec.hidden_layers {
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    let scale = 1.0 / examples.len() as f64;
    for layer in &mut grads {
        for row in &mut layer.weights {
            for g in row {
                *g *= scale;
            }
        }
        for b in &mut layer.bias {
            *b *= scale;
        }
    }
    (total * scale, grads)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: DEFAULT_LEARNING_RATE,
            patience: 50,
            max_epochs: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_l1: f64,
    pub final_val_l1: f64,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Adam {
        Adam {
            m: net.layers.iter().map(Layer::zeros_like).collect(),
            v: net.layers.iter().map(Layer::zeros_like).collect(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (l, grad) in grads.iter().enumerate() {
            for (o, row) in grad.weights.iter().enumerate() {
                for (i, g) in row.iter().enumerate() {
                    let m = &mut self.m[l].weights[o][i];
                    let v = &mut self.v[l].weights[o][i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    layers[l].weights[o][i] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                }
            }
            for (o, g) in grad.bias.iter().enumerate() {
                let m = &mut self.m[l].bias[o];
                let v = &mut self.v[l].bias[o];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                layers[l].bias[o] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn check_dataset(ds: &Dataset, spec: &NetworkSpec, what: &str) -> Result<(), SurrogateError> {
    if ds.is_empty() {
        return Err(SurrogateError::BadDataset(format!("{what} set is empty")));
    }
    if ds.feature_len != spec.input_len || ds.label_len != spec.output_len {
        return Err(SurrogateError::BadDataset(format!(
            "{what} set shape ({}, {}) does not match spec ({}, {})",
            ds.feature_len, ds.label_len, spec.input_len, spec.output_len
        )));
    }
    Ok(())
}

/// Per-feature (min, max) of the flagged non-binary features over a dataset.
fn fit_scaling(ds: &Dataset) -> FeatureScaling {
    let mut ranges = Vec::with_capacity(ds.non_binary.len());
    for &idx in &ds.non_binary {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ex in &ds.examples {
            lo = lo.min(ex.features[idx]);
            hi = hi.max(ex.features[idx]);
        }
        ranges.push((idx, lo, hi));
    }
    FeatureScaling { ranges }
}

/// Trains a network and returns the snapshot with the best weighted
/// validation L1 seen, together with a training report.
pub fn train_with_report(
    train_set: &Dataset,
    val_set: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(Network, TrainReport), SurrogateError> {
    check_dataset(train_set, spec, "training")?;
    check_dataset(val_set, spec, "validation")?;
    if config.batch_size == 0 {
        return Err(SurrogateError::BadConfig("batch_size must be >= 1".into()));
    }
    if config.patience == 0 {
        return Err(SurrogateError::BadConfig("patience must be >= 1".into()));
    }

    let n_train = train_set.len() as f64;
    let mut label_mean = vec![0.0; spec.output_len];
    let mut label_abs_mean = vec![0.0; spec.output_len];
    for ex in &train_set.examples {
        for (k, y) in ex.label.iter().enumerate() {
            label_mean[k] += y / n_train;
            label_abs_mean[k] += y.abs() / n_train;
        }
    }
    // Loss weights are inversely proportional to the mean label magnitude so
    // every output contributes comparably; single-output fits stay unweighted.
    let output_weights: Vec<f64> = if spec.output_len == 1 {
        vec![1.0]
    } else {
        label_abs_mean
            .iter()
            .map(|&m| if m > 1e-12 { 1.0 / m } else { 1.0 })
            .collect()
    };

    let scaling = fit_scaling(train_set);
    let mut net = Network::initialize(spec, scaling, output_weights, label_mean, config.seed)?;

    let mut best_layers = net.layers.clone();
    let mut best_val = weighted_l1_loss(&net, &val_set.examples);
    let mut final_val = best_val;
    if config.max_epochs == 0 {
        return Ok((
            net,
            TrainReport {
                epochs_run: 0,
                best_val_l1: best_val,
                final_val_l1: final_val,
                stopped_early: false,
            },
        ));
    }

    // Distinct stream from parameter initialization.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(&net);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<LabeledExample> = chunk
                .iter()
                .map(|&i| train_set.examples[i].clone())
                .collect();
            let (loss, grads) = weighted_l1_gradient(&net, &batch);
            if !loss.is_finite() {
                return Err(SurrogateError::Diverged { epoch });
            }
            adam.step(&mut net.layers, &grads, config.learning_rate);
        }
        let val = weighted_l1_loss(&net, &val_set.examples);
        if !val.is_finite() {
            return Err(SurrogateError::Diverged { epoch });
        }
        epochs_run = epoch;
        final_val = val;
        if val < best_val {
            best_val = val;
            best_layers = net.layers.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    net.layers = best_layers;
    Ok((
        net,
        TrainReport {
            epochs_run,
            best_val_l1: best_val,
            final_val_l1: final_val,
            stopped_early,
        },
    ))
}

pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<Network, SurrogateError> {
    train_with_report(train_set, val_set, spec, config).map(|(net, _)| net)
}

/// Per-output average absolute error divided by the average absolute label,
/// the headline accuracy metric for predictor reports.
pub fn avg_abs_relative_error(net: &Network, test: &Dataset) -> Result<Vec<f64>, SurrogateError> {
    check_dataset(test, &net.spec, "test")?;
    let n = test.len() as f64;
    let mut abs_err = vec![0.0; net.spec.output_len];
    let mut abs_label = vec![0.0; net.spec.output_len];
    for ex in &test.examples {
        let out = net.forward(&ex.features)?;
        for (k, (p, y)) in out.iter().zip(&ex.label).enumerate() {
            abs_err[k] += (p - y).abs() / n;
            abs_label[k] += y.abs() / n;
        }
    }
    Ok(abs_err
        .iter()
        .zip(&abs_label)
        .map(|(e, y)| {
            if *y > 1e-12 {
                e / y
            } else if *e > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    version: u32,
    network: Network,
}

pub fn save_network(net: &Network, path: &Path) -> Result<(), SurrogateError> {
    let file = NetworkFile {
        version: FILE_VERSION,
        network: net.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network, SurrogateError> {
    let text = std::fs::read_to_string(path)?;
    let file: NetworkFile =
        serde_json::from_str(&text).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
    if file.version != FILE_VERSION {
        return Err(SurrogateError::VersionMismatch {
            found: file.version,
            expected: FILE_VERSION,
        });
    }
    Ok(file.network)
}

/// Guards against wiring a predictor to a family with a different
/// featurization shape.
pub fn check_compatible(
    net: &Network,
    input_len: usize,
    output_len: usize,
) -> Result<(), SurrogateError> {
    if net.spec.input_len != input_len || net.spec.output_len != output_len {
        return Err(SurrogateError::SpecMismatch {
            expected_in: input_len,
            expected_out: output_len,
            found_in: net.spec.input_len,
            found_out: net.spec.output_len,
        });
    }
    Ok(())
}
