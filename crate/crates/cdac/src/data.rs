//! Synthetic two-domain datasets, few-shot splits, and vector augmentation.
//!
//! Generators produce a labeled source pool, an unlabeled target pool, and a
//! held-out labeled target test set, all bit-deterministic under a seed.
//! [`split_shots`] carves the few labeled target samples out of the
//! unlabeled pool. Unlabeled samples carry no label in their type; the
//! ground truth of the pool lives in a parallel `unlabeled_truth` vector
//! that only analysis code may read.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rotation must lie in [0, 180), got {0}")]
    InvalidRotation(f64),
    #[error("need at least {need} samples per domain, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("covariance scale must be positive, got {0}")]
    DegenerateCovariance(f64),
    #[error("need at least 2 classes and 2 dimensions, got {classes} classes, dim {dim}")]
    DegenerateBlobs { classes: usize, dim: usize },
    #[error("class {class} has {got} unlabeled samples, need more than {shots} for a {shots}-shot split")]
    TooFewForShots {
        class: usize,
        got: usize,
        shots: usize,
    },
    #[error("dataset already has labeled target samples; shots were split before")]
    AlreadySplit,
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Generator identity recorded for export and config echoes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub params: Vec<(String, String)>,
}

/// The three training pools plus the held-out target test set.
///
/// `target_unlabeled` holds bare feature vectors; the hidden ground truth in
/// `unlabeled_truth` is index-parallel and is consumed only by the shot
/// split (the annotation step) and by analysis instrumentation, never by a
/// gradient path.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdaDataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub source: Vec<LabeledSample>,
    pub target_labeled: Vec<LabeledSample>,
    pub target_unlabeled: Vec<Vec<f64>>,
    pub unlabeled_truth: Vec<usize>,
    pub target_test: Vec<LabeledSample>,
    pub meta: DatasetMeta,
}

impl SsdaDataset {
    /// Count of unlabeled samples per class according to the hidden truth.
    fn unlabeled_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.unlabeled_truth {
            counts[y] += 1;
        }
        counts
    }
}

// ── Two moons ────────────────────────────────────────────────────────

fn sample_moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let gauss = Normal::new(0.0, noise).unwrap();
    let n0 = n / 2;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (mut x, mut y, label) = if i < n0 {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        if noise > 0.0 {
            x += gauss.sample(rng);
            y += gauss.sample(rng);
        }
        xs.push(vec![x, y]);
        ys.push(label);
    }
    (xs, ys)
}

fn rotate_inplace(points: &mut [Vec<f64>], degrees: f64) {
    let theta = degrees.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    for p in points {
        let (x, y) = (p[0], p[1]);
        p[0] = x * cos - y * sin;
        p[1] = x * sin + y * cos;
    }
}

/// Two-moons source domain plus a target domain rotated about the origin.
/// Source, target pool, and target test each contain `n_per_domain` samples
/// drawn from independent streams of the same seed; labels are preserved
/// under rotation.
pub fn make_two_moons_shift(
    n_per_domain: usize,
    rotation_degrees: f64,
    noise: f64,
    seed: u64,
) -> Result<SsdaDataset, DataError> {
    if !(0.0..180.0).contains(&rotation_degrees) {
        return Err(DataError::InvalidRotation(rotation_degrees));
    }
    if n_per_domain < 4 {
        return Err(DataError::TooFewSamples {
            need: 4,
            got: n_per_domain,
        });
    }
    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    let (source_x, source_y) = sample_moons(n_per_domain, noise, &mut stream(0));
    let (mut pool_x, pool_y) = sample_moons(n_per_domain, noise, &mut stream(1));
    let (mut test_x, test_y) = sample_moons(n_per_domain, noise, &mut stream(2));
    rotate_inplace(&mut pool_x, rotation_degrees);
    rotate_inplace(&mut test_x, rotation_degrees);

    let source = source_x
        .into_iter()
        .zip(source_y)
        .map(|(features, label)| LabeledSample { features, label })
        .collect();
    let target_test = test_x
        .into_iter()
        .zip(test_y)
        .map(|(features, label)| LabeledSample { features, label })
        .collect();

    Ok(SsdaDataset {
        num_classes: 2,
        input_dim: 2,
        source,
        target_labeled: Vec::new(),
        target_unlabeled: pool_x,
        unlabeled_truth: pool_y,
        target_test,
        meta: DatasetMeta {
            generator: "two_moons".into(),
            seed,
            params: vec![
                ("n_per_domain".into(), n_per_domain.to_string()),
                ("rotation_degrees".into(), format!("{rotation_degrees}")),
                ("noise".into(), format!("{noise}")),
            ],
        },
    })
}

// ── Gaussian blobs ───────────────────────────────────────────────────

/// Class-conditional Gaussians per domain. Target class means are all
/// translated by `mean_shift` along one random unit direction and target
/// covariance is scaled by `covariance_scale`.
pub fn make_gaussian_blobs_shift(
    num_classes: usize,
    dim: usize,
    mean_shift: f64,
    covariance_scale: f64,
    n_per_domain: usize,
    seed: u64,
) -> Result<SsdaDataset, DataError> {
    if num_classes < 2 || dim < 2 {
        return Err(DataError::DegenerateBlobs {
            classes: num_classes,
            dim,
        });
    }
    if covariance_scale <= 0.0 {
        return Err(DataError::DegenerateCovariance(covariance_scale));
    }
    if n_per_domain < 2 * num_classes {
        return Err(DataError::TooFewSamples {
            need: 2 * num_classes,
            got: n_per_domain,
        });
    }
    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };

    // Class means and the domain-shift direction come from stream 0.
    let mut setup = stream(0);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| 3.0 * unit.sample(&mut setup)).collect())
        .collect();
    let mut shift_dir: Vec<f64> = (0..dim).map(|_| unit.sample(&mut setup)).collect();
    let norm = shift_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    shift_dir.iter_mut().for_each(|v| *v /= norm);

    let draw = |rng: &mut ChaCha8Rng, shifted: bool, n: usize| {
        let sigma = if shifted { covariance_scale } else { 1.0 };
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % num_classes;
            let x: Vec<f64> = (0..dim)
                .map(|d| {
                    let mut v = means[class][d] + sigma * unit.sample(rng);
                    if shifted {
                        v += mean_shift * shift_dir[d];
                    }
                    v
                })
                .collect();
            xs.push(x);
            ys.push(class);
        }
        (xs, ys)
    };

    let (source_x, source_y) = draw(&mut stream(1), false, n_per_domain);
    let (pool_x, pool_y) = draw(&mut stream(2), true, n_per_domain);
    let (test_x, test_y) = draw(&mut stream(3), true, n_per_domain);

    let source = source_x
        .into_iter()
        .zip(source_y)
        .map(|(features, label)| LabeledSample { features, label })
        .collect();
    let target_test = test_x
        .into_iter()
        .zip(test_y)
        .map(|(features, label)| LabeledSample { features, label })
        .collect();

    Ok(SsdaDataset {
        num_classes,
        input_dim: dim,
        source,
        target_labeled: Vec::new(),
        target_unlabeled: pool_x,
        unlabeled_truth: pool_y,
        target_test,
        meta: DatasetMeta {
            generator: "gaussian_blobs".into(),
            seed,
            params: vec![
                ("classes".into(), num_classes.to_string()),
                ("dim".into(), dim.to_string()),
                ("mean_shift".into(), format!("{mean_shift}")),
                ("covariance_scale".into(), format!("{covariance_scale}")),
                ("n_per_domain".into(), n_per_domain.to_string()),
            ],
        },
    })
}

// ── Shot split ───────────────────────────────────────────────────────

/// Moves exactly `shots` samples per class from the unlabeled pool into the
/// labeled target set, selected by a seeded shuffle. This is the annotation
/// step: the hidden truth of the selected samples becomes their label.
pub fn split_shots(
    mut dataset: SsdaDataset,
    shots: usize,
    seed: u64,
) -> Result<SsdaDataset, DataError> {
    if !dataset.target_labeled.is_empty() {
        return Err(DataError::AlreadySplit);
    }
    let counts = dataset.unlabeled_class_counts();
    for (class, &count) in counts.iter().enumerate() {
        if count <= shots {
            return Err(DataError::TooFewForShots {
                class,
                got: count,
                shots,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(9);
    let mut order: Vec<usize> = (0..dataset.target_unlabeled.len()).collect();
    order.shuffle(&mut rng);

    let mut picked: Vec<usize> = Vec::with_capacity(shots * dataset.num_classes);
    let mut taken = vec![0usize; dataset.num_classes];
    for &idx in &order {
        let class = dataset.unlabeled_truth[idx];
        if taken[class] < shots {
            taken[class] += 1;
            picked.push(idx);
        }
    }
    picked.sort_unstable();
    for &idx in picked.iter().rev() {
        let features = dataset.target_unlabeled.remove(idx);
        let label = dataset.unlabeled_truth.remove(idx);
        dataset
            .target_labeled
            .push(LabeledSample { features, label });
    }
    dataset.target_labeled.reverse();
    Ok(dataset)
}

// ── Augmentation ─────────────────────────────────────────────────────

/// Stochastic vector augmentation: additive Gaussian noise, a multiplicative
/// scale drawn from a range, then independent coordinate dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub gaussian_sigma: f64,
    pub scale_range: (f64, f64),
    pub dropout_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            gaussian_sigma: 0.05,
            scale_range: (0.9, 1.1),
            dropout_prob: 0.05,
        }
    }
}

/// Applies one augmentation draw. Deterministic given the stream state; two
/// consecutive calls yield two independent transformed views.
pub fn augment(x: &[f64], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    if cfg.gaussian_sigma > 0.0 {
        let gauss = Normal::new(0.0, cfg.gaussian_sigma).unwrap();
        for v in &mut out {
            *v += gauss.sample(rng);
        }
    }
    let (lo, hi) = cfg.scale_range;
    if lo != 1.0 || hi != 1.0 {
        let scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        for v in &mut out {
            *v *= scale;
        }
    }
    if cfg.dropout_prob > 0.0 {
        for v in &mut out {
            if rng.gen_range(0.0..1.0) < cfg.dropout_prob {
                *v = 0.0;
            }
        }
    }
    out
}

// ── Export / import ──────────────────────────────────────────────────

const DATASET_MAGIC: &str = "cdac-dataset v1";

fn write_sample(out: &mut String, tag: &str, label: Option<usize>, features: &[f64]) {
    out.push_str(tag);
    if let Some(y) = label {
        write!(out, " {y}").unwrap();
    }
    for f in features {
        write!(out, " {f}").unwrap();
    }
    out.push('\n');
}

/// Writes the dataset as structured text: header (classes, dim, counts,
/// seed, generator params), then one sample per line. `tgt-u` lines carry
/// the hidden ground truth so a round trip is exact.
pub fn export_dataset(ds: &SsdaDataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(DATASET_MAGIC);
    out.push('\n');
    writeln!(out, "generator {}", ds.meta.generator).unwrap();
    writeln!(out, "seed {}", ds.meta.seed).unwrap();
    writeln!(out, "classes {}", ds.num_classes).unwrap();
    writeln!(out, "dim {}", ds.input_dim).unwrap();
    writeln!(
        out,
        "counts source={} target_labeled={} target_unlabeled={} target_test={}",
        ds.source.len(),
        ds.target_labeled.len(),
        ds.target_unlabeled.len(),
        ds.target_test.len()
    )
    .unwrap();
    for (k, v) in &ds.meta.params {
        writeln!(out, "param {k} {v}").unwrap();
    }
    for s in &ds.source {
        write_sample(&mut out, "src", Some(s.label), &s.features);
    }
    for s in &ds.target_labeled {
        write_sample(&mut out, "tgt-l", Some(s.label), &s.features);
    }
    for (x, &y) in ds.target_unlabeled.iter().zip(&ds.unlabeled_truth) {
        write_sample(&mut out, "tgt-u", Some(y), x);
    }
    for s in &ds.target_test {
        write_sample(&mut out, "test", Some(s.label), &s.features);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn import_dataset(path: &Path) -> Result<SsdaDataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut ds = SsdaDataset {
        num_classes: 0,
        input_dim: 0,
        source: Vec::new(),
        target_labeled: Vec::new(),
        target_unlabeled: Vec::new(),
        unlabeled_truth: Vec::new(),
        target_test: Vec::new(),
        meta: DatasetMeta::default(),
    };
    let err = |line: usize, msg: &str| DataError::Parse {
        line,
        msg: msg.to_string(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if line == 1 {
            if raw != DATASET_MAGIC {
                return Err(err(line, "bad magic"));
            }
            continue;
        }
        let mut parts = raw.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "generator" => ds.meta.generator = parts.next().unwrap_or_default().to_string(),
            "seed" => {
                ds.meta.seed = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "bad seed"))?
            }
            "classes" => {
                ds.num_classes = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "bad class count"))?
            }
            "dim" => {
                ds.input_dim = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "bad dim"))?
            }
            "counts" => {} // informative; actual counts come from the lines
            "param" => {
                let k = parts.next().ok_or_else(|| err(line, "missing param key"))?;
                let v: Vec<&str> = parts.collect();
                ds.meta.params.push((k.to_string(), v.join(" ")));
            }
            "src" | "tgt-l" | "tgt-u" | "test" => {
                let label: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "bad label"))?;
                let features: Result<Vec<f64>, _> = parts.map(str::parse).collect();
                let features = features.map_err(|_| err(line, "bad feature value"))?;
                if features.len() != ds.input_dim {
                    return Err(err(line, "feature count does not match dim"));
                }
                match tag {
                    "src" => ds.source.push(LabeledSample { features, label }),
                    "tgt-l" => ds.target_labeled.push(LabeledSample { features, label }),
                    "tgt-u" => {
                        ds.target_unlabeled.push(features);
                        ds.unlabeled_truth.push(label);
                    }
                    _ => ds.target_test.push(LabeledSample { features, label }),
                }
            }
            _ => return Err(err(line, "unknown line tag")),
        }
    }
    Ok(ds)
}
