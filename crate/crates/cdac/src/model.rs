//! The two-part network: MLP feature extractor `G` and bias-free cosine
//! classifier `F`.
//!
//! `G` maps inputs to a feature space through relu layers (no activation
//! after the last layer). `F` l2-normalizes the feature and takes its inner
//! product with an unbiased weight matrix, scaled by an inverse temperature,
//! so decisions live on a spherical feature space. Predictions are the row
//! softmax of those logits.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{DiffError, Graph, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature_dim {feature_dim} is smaller than the rank-statistic depth k={k}")]
    FeatureDimBelowK { feature_dim: usize, k: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("input has dimension {got}, model expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("hidden layer sizes must be positive")]
    EmptyLayer,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {msg}")]
    CheckpointParse { line: usize, msg: String },
}

/// One fully connected layer, weights `[in_dim, out_dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Feature extractor `G`: relu MLP, linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<Linear>,
}

impl FeatureExtractor {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }
}

/// Classifier `F`: unbiased linear layer on l2-normalized features with an
/// inverse-temperature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    /// `[feature_dim, num_classes]` row-major.
    pub weight: Vec<f64>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub temperature: f64,
}

/// The full trainable state: θ_G and θ_F.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub extractor: FeatureExtractor,
    pub classifier: CosineClassifier,
}

/// Layer sizing for [`init_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// All hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Balance of the adversarial clustering term.
    pub lambda: f64,
    /// Pseudo-label confidence threshold, in (0, 1).
    pub tau: f64,
    /// Ramp-up ceiling for the consistency weight.
    pub nu: f64,
    /// Rank-statistic depth for pairwise similarity.
    pub k: usize,
    /// Classifier temperature.
    pub temperature: f64,
    /// Ramp-up horizon in steps; 0 means "half of the total training steps".
    pub ramp_total_steps: usize,
    /// Labeled source samples per step.
    pub batch_source: usize,
    /// Labeled target samples per step.
    pub batch_target: usize,
    /// Unlabeled target samples per step (the mini-batch M).
    pub batch_unlabeled: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Inverse-decay factor: lr(i) = lr0 * (1 + gamma * i)^(-power).
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub momentum: f64,
    /// Learning-rate multiplier for the classifier weights; the classifier
    /// is trained from scratch and conventionally runs hotter than the
    /// feature extractor.
    pub classifier_lr_mult: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 1.0,
            tau: 0.95,
            nu: 30.0,
            k: 5,
            temperature: 0.05,
            ramp_total_steps: 0,
            batch_source: 16,
            batch_target: 16,
            batch_unlabeled: 32,
            lr0: 0.01,
            lr_gamma: 1e-4,
            lr_power: 0.75,
            momentum: 0.9,
            classifier_lr_mult: 1.0,
            seed: 1,
        }
    }
}

/// Xavier-uniform bound for a `fan_in x fan_out` weight matrix.
fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministic parameter initialization: weights uniform in
/// `[-sqrt(6/(fan_in+fan_out)), +...]`, biases zero, classifier columns from
/// the same scheme.
pub fn init_params(
    seed: u64,
    dims: &ModelDims,
    temperature: f64,
    k: usize,
) -> Result<ModelParams, ModelError> {
    if dims.feature_dim < k {
        return Err(ModelError::FeatureDimBelowK {
            feature_dim: dims.feature_dim,
            k,
        });
    }
    if temperature <= 0.0 {
        return Err(ModelError::NonPositiveTemperature(temperature));
    }
    if dims.input_dim == 0
        || dims.feature_dim == 0
        || dims.num_classes == 0
        || dims.hidden_dims.contains(&0)
    {
        return Err(ModelError::EmptyLayer);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![dims.input_dim];
    sizes.extend_from_slice(&dims.hidden_dims);
    sizes.push(dims.feature_dim);

    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = init_bound(fan_in, fan_out);
        let weight: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-a..=a))
            .collect();
        layers.push(Linear {
            weight,
            bias: vec![0.0; fan_out],
            in_dim: fan_in,
            out_dim: fan_out,
        });
    }

    let a = init_bound(dims.feature_dim, dims.num_classes);
    let clf_weight: Vec<f64> = (0..dims.feature_dim * dims.num_classes)
        .map(|_| rng.gen_range(-a..=a))
        .collect();

    Ok(ModelParams {
        extractor: FeatureExtractor { layers },
        classifier: CosineClassifier {
            weight: clf_weight,
            feature_dim: dims.feature_dim,
            num_classes: dims.num_classes,
            temperature,
        },
    })
}

/// Parameter tensors registered on one graph, in a fixed order that matches
/// [`ModelParams::arrays_mut`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub layer_weights: Vec<TensorId>,
    pub layer_biases: Vec<TensorId>,
    pub layer_dims: Vec<(usize, usize)>,
    pub classifier_weight: TensorId,
    pub temperature: f64,
    pub num_classes: usize,
}

impl ModelParams {
    /// Registers every parameter array as a graph variable.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let mut layer_weights = Vec::new();
        let mut layer_biases = Vec::new();
        let mut layer_dims = Vec::new();
        for layer in &self.extractor.layers {
            layer_weights.push(g.variable(layer.weight.clone(), &[layer.in_dim, layer.out_dim]));
            layer_biases.push(g.variable(layer.bias.clone(), &[layer.out_dim]));
            layer_dims.push((layer.in_dim, layer.out_dim));
        }
        let c = &self.classifier;
        let classifier_weight = g.variable(c.weight.clone(), &[c.feature_dim, c.num_classes]);
        BoundModel {
            layer_weights,
            layer_biases,
            layer_dims,
            classifier_weight,
            temperature: c.temperature,
            num_classes: c.num_classes,
        }
    }

    /// Mutable views of all parameter arrays, extractor layers first
    /// (weight then bias per layer), classifier weight last. The optimizer
    /// relies on this order matching [`BoundModel::param_ids`].
    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for layer in &mut self.extractor.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.classifier.weight);
        out
    }

    pub fn arrays(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = Vec::new();
        for layer in &self.extractor.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.classifier.weight);
        out
    }
}

impl BoundModel {
    /// Graph ids in the order of [`ModelParams::arrays_mut`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.push(*w);
            out.push(*b);
        }
        out.push(self.classifier_weight);
        out
    }

    /// `G(x)`: relu between layers, linear last layer.
    pub fn extract(&self, g: &mut Graph, x: TensorId) -> Result<TensorId, ModelError> {
        let batch_dim = g.shape(x).to_vec();
        if batch_dim.len() != 2 || batch_dim[1] != self.layer_dims[0].0 {
            return Err(ModelError::InputDimMismatch {
                got: *batch_dim.last().unwrap_or(&0),
                expected: self.layer_dims[0].0,
            });
        }
        let mut h = x;
        let last = self.layer_weights.len() - 1;
        for (i, (w, b)) in self
            .layer_weights
            .iter()
            .zip(&self.layer_biases)
            .enumerate()
        {
            h = g.matmul(h, *w)?;
            h = g.add_row(h, *b)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Temperature-scaled cosine logits from raw features: the feature rows
    /// are l2-normalized, multiplied by the unbiased weight matrix, and
    /// scaled by `1 / temperature`.
    pub fn cosine_logits(&self, g: &mut Graph, features: TensorId) -> Result<TensorId, ModelError> {
        let normed = g.l2_normalize_rows(features)?;
        let raw = g.matmul(normed, self.classifier_weight)?;
        Ok(g.scale(raw, 1.0 / self.temperature))
    }

    /// Row-probability predictions from raw features.
    pub fn predict_from_features(
        &self,
        g: &mut Graph,
        features: TensorId,
    ) -> Result<TensorId, ModelError> {
        let logits = self.cosine_logits(g, features)?;
        Ok(g.softmax_rows(logits)?)
    }

    /// `p(x) = softmax(F(G(x)))`.
    pub fn predict(&self, g: &mut Graph, x: TensorId) -> Result<TensorId, ModelError> {
        let features = self.extract(g, x)?;
        self.predict_from_features(g, features)
    }
}

/// Flattens a batch of samples into a `[n, dim]` graph constant.
pub fn batch_constant(g: &mut Graph, rows: &[Vec<f64>]) -> TensorId {
    let n = rows.len();
    let dim = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(n * dim);
    for r in rows {
        flat.extend_from_slice(r);
    }
    g.constant(flat, &[n, dim])
}

// ── Checkpointing ────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &str = "cdac-checkpoint v1";

fn write_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // Display for f64 round-trips exactly through parse.
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

/// Serializes all weight arrays with shapes to a versioned text file.
/// Loading the file back is bit-exact.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    writeln!(out, "temperature {}", params.classifier.temperature).unwrap();
    writeln!(out, "layers {}", params.extractor.layers.len()).unwrap();
    for layer in &params.extractor.layers {
        writeln!(out, "layer {} {}", layer.in_dim, layer.out_dim).unwrap();
        write_floats(&mut out, &layer.weight);
        write_floats(&mut out, &layer.bias);
    }
    writeln!(
        out,
        "classifier {} {}",
        params.classifier.feature_dim, params.classifier.num_classes
    )
    .unwrap();
    write_floats(&mut out, &params.classifier.weight);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String), ModelError> {
        lines
            .next()
            .map(|(i, l)| (i + 1, l.to_string()))
            .ok_or_else(|| ModelError::CheckpointParse {
                line: 0,
                msg: format!("unexpected end of file, expected {expect}"),
            })
    };
    let parse_floats = |line: usize, s: &str, n: usize| -> Result<Vec<f64>, ModelError> {
        let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| ModelError::CheckpointParse {
            line,
            msg: format!("bad float: {e}"),
        })?;
        if vals.len() != n {
            return Err(ModelError::CheckpointParse {
                line,
                msg: format!("expected {n} floats, got {}", vals.len()),
            });
        }
        Ok(vals)
    };

    let (line, magic) = next("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::CheckpointParse {
            line,
            msg: "bad magic".into(),
        });
    }
    let (line, temp_line) = next("temperature")?;
    let temperature: f64 = temp_line
        .strip_prefix("temperature ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::CheckpointParse {
            line,
            msg: "bad temperature".into(),
        })?;
    let (line, layers_line) = next("layers")?;
    let n_layers: usize = layers_line
        .strip_prefix("layers ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::CheckpointParse {
            line,
            msg: "bad layer count".into(),
        })?;

    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (line, header) = next("layer header")?;
        let dims: Vec<usize> = header
            .strip_prefix("layer ")
            .map(|s| {
                s.split_whitespace()
                    .filter_map(|t| t.parse().ok())
                    .collect()
            })
            .unwrap_or_default();
        if dims.len() != 2 {
            return Err(ModelError::CheckpointParse {
                line,
                msg: "bad layer header".into(),
            });
        }
        let (wl, wline) = next("weights")?;
        let weight = parse_floats(wl, &wline, dims[0] * dims[1])?;
        let (bl, bline) = next("bias")?;
        let bias = parse_floats(bl, &bline, dims[1])?;
        layers.push(Linear {
            weight,
            bias,
            in_dim: dims[0],
            out_dim: dims[1],
        });
    }

    let (line, header) = next("classifier header")?;
    let dims: Vec<usize> = header
        .strip_prefix("classifier ")
        .map(|s| {
            s.split_whitespace()
                .filter_map(|t| t.parse().ok())
                .collect()
        })
        .unwrap_or_default();
    if dims.len() != 2 {
        return Err(ModelError::CheckpointParse {
            line,
            msg: "bad classifier header".into(),
        });
    }
    let (wl, wline) = next("classifier weights")?;
    let weight = parse_floats(wl, &wline, dims[0] * dims[1])?;

    Ok(ModelParams {
        extractor: FeatureExtractor { layers },
        classifier: CosineClassifier {
            weight,
            feature_dim: dims[0],
            num_classes: dims[1],
            temperature,
        },
    })
}
