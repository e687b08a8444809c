//! Cross-domain adaptive clustering (CDAC) for semi-supervised domain
//! adaptation, at desk scale.
//!
//! The crate trains a small feature extractor and a normalized (cosine)
//! classifier on a labeled source domain plus a target domain with a handful
//! of labeled samples per class and a pool of unlabeled samples. Four loss
//! terms drive the adaptation:
//!
//! * supervised cross-entropy on all labeled data,
//! * an adversarial adaptive clustering loss over pairwise prediction
//!   similarities of unlabeled target samples, minimized by the feature
//!   extractor and maximized by the classifier through a gradient-reversal
//!   node,
//! * a confidence-filtered pseudo-labeling loss,
//! * a consistency loss between two stochastic augmentations, weighted by a
//!   ramp-up schedule.
//!
//! Everything runs in pure `f64` on the CPU and is bit-deterministic under a
//! seed. Synthetic two-domain datasets (rotated two-moons, shifted Gaussian
//! blobs) stand in for image benchmarks, and the [`cli`] module exposes a
//! config-driven experiment runner that writes reproducible metrics
//! artifacts.
//!
//! Module map:
//!
//! * [`autodiff`] — minimal define-by-run reverse-mode engine, including the
//!   gradient-reversal op.
//! * [`model`] — MLP feature extractor, cosine classifier, initialization,
//!   checkpointing.
//! * [`losses`] — the four training losses plus pairwise-similarity labels,
//!   pseudo-label batches, and the ramp-up schedule.
//! * [`data`] — synthetic dataset generators, few-shot splits, vector
//!   augmentation, dataset import/export.
//! * [`optim`] — SGD with momentum and inverse-decay learning rate.
//! * [`trainer`] — the minimax training loop, evaluation, cluster-core
//!   distance and pseudo-label instrumentation.
//! * [`config`] — flat `key = value` experiment configuration.
//! * [`cli`] — `run`, `sweep`, and `compare` commands and their artifacts.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod losses;
pub mod model;
pub mod optim;
pub mod trainer;
