//! The minimax training loop and its analysis instrumentation.
//!
//! Every iteration runs two phases. Phase 1 descends the supervised
//! cross-entropy on a labeled batch (source plus the few labeled target
//! samples). Phase 2 draws two augmented views of an unlabeled target batch
//! and applies the adaptation terms: the feature extractor descends
//! `λ·L_AAC + L_PL + L_Con` while the classifier descends
//! `-λ·L_AAC + L_PL + L_Con`, i.e. ascends the clustering term. The sign
//! split is realized with a single backward sweep by scaling the clustering
//! loss with `-λ` and routing the feature branch through a gradient-reversal
//! node, so exactly the classifier parameters receive the negated gradient.
//!
//! Each phase keeps its own momentum state: a phase that produces all-zero
//! gradients leaves the parameters bit-identical, which makes the degenerate
//! configuration (λ = 0, pseudo-labeling and consistency off) reproduce the
//! source-plus-target baseline exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{DiffError, Graph, TensorId};
use crate::data::{augment, AugmentConfig, LabeledSample, SsdaDataset};
use crate::losses::{
    aac_loss, consistency_loss, cross_entropy, make_pseudo_labels, pairwise_similarity,
    prediction_entropy, pseudo_label_loss_from, LossError, RampState, Reduction,
};
use crate::model::{
    batch_constant, init_params, BoundModel, HyperParams, ModelDims, ModelError, ModelParams,
};
use crate::optim::{InverseDecaySchedule, SgdMomentum};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value in {term}")]
    NonFinite { term: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("class {class} has no samples on the {side} side")]
    EmptyClass { class: usize, side: &'static str },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which training arm runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Full adaptive-clustering pipeline.
    Cdac,
    /// Supervised cross-entropy on labeled data only.
    SourcePlusTarget,
    /// Same pipeline with the clustering term replaced by prediction
    /// entropy, minimized by the extractor and maximized by the classifier.
    EntAdversarial,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cdac => "cdac",
            Method::SourcePlusTarget => "s+t",
            Method::EntAdversarial => "ent",
        }
    }
}

/// Whether the few labeled target samples join the supervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Ssda,
    Uda,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Ssda => "ssda",
            Setting::Uda => "uda",
        }
    }
}

/// Ablation switches for the unlabeled-loss terms. For the entropy baseline
/// the `aac` switch governs the entropy term instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub aac: bool,
    pub pl: bool,
    pub con: bool,
}

impl LossToggles {
    pub fn all_on() -> Self {
        LossToggles {
            aac: true,
            pl: true,
            con: true,
        }
    }

    pub fn all_off() -> Self {
        LossToggles {
            aac: false,
            pl: false,
            con: false,
        }
    }

    pub fn any(&self) -> bool {
        self.aac || self.pl || self.con
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub method: Method,
    pub toggles: LossToggles,
    pub setting: Setting,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub eval_every: usize,
    /// Merge both phases into one combined update per iteration.
    pub combined_step: bool,
    pub reduction: Reduction,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: HyperParams::default(),
            method: Method::Cdac,
            toggles: LossToggles::all_on(),
            setting: Setting::Ssda,
            epochs: 10,
            steps_per_epoch: 100,
            eval_every: 100,
            combined_step: false,
            reduction: Reduction::Sum,
            hidden_dims: vec![64, 32],
            feature_dim: 32,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.method == Method::SourcePlusTarget && self.toggles.any() {
            return Err(TrainError::InvalidConfig(
                "the s+t baseline trains with cross-entropy only; disable aac/pl/con".into(),
            ));
        }
        if !(self.hyper.tau > 0.0 && self.hyper.tau < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "tau must lie in (0, 1), got {}",
                self.hyper.tau
            )));
        }
        if self.hyper.lambda < 0.0 {
            return Err(TrainError::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.feature_dim < self.hyper.k {
            return Err(TrainError::InvalidConfig(format!(
                "feature_dim {} must be >= k {}",
                self.feature_dim, self.hyper.k
            )));
        }
        if self.hyper.k == 0 {
            return Err(TrainError::InvalidConfig("k must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig(
                "eval_every must be positive".into(),
            ));
        }
        if self.hyper.batch_source == 0 || self.hyper.batch_unlabeled == 0 {
            return Err(TrainError::InvalidConfig(
                "batch sizes must be positive".into(),
            ));
        }
        let (lo, hi) = self.augment.scale_range;
        if lo > hi {
            return Err(TrainError::InvalidConfig(format!(
                "augmentation scale range is inverted: ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    fn ramp_total(&self) -> usize {
        if self.hyper.ramp_total_steps > 0 {
            self.hyper.ramp_total_steps
        } else {
            (self.total_steps() / 2).max(1)
        }
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub ce: f64,
    /// Adversarial term: clustering loss for CDAC, entropy for the entropy
    /// baseline, absent when the term is off.
    pub aac: Option<f64>,
    pub pl: Option<f64>,
    pub con: Option<f64>,
    pub pl_retained: usize,
}

/// Pseudo-label quality over a pool with hidden ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoStats {
    /// Fraction of the pool whose confidence passes the threshold.
    pub coverage: f64,
    /// Fraction of retained pseudo-labels that match the hidden truth;
    /// reported as 1.0 with `none_retained` set when nothing passes.
    pub precision: f64,
    pub none_retained: bool,
}

/// One instrumentation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Completed training steps at evaluation time.
    pub step: usize,
    pub accuracy: f64,
    /// Losses of the step that preceded this evaluation; absent for the
    /// initial record.
    pub losses: Option<StepLosses>,
    pub coverage: f64,
    pub precision: f64,
    pub none_retained: bool,
    pub ccd_mean: f64,
    pub ccd_per_class: Vec<f64>,
}

/// Trace of a whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EvalRecord>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

/// Metrics plus the trained parameters.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub metrics: RunMetrics,
    pub params: ModelParams,
}

// ── CSV schema ───────────────────────────────────────────────────────

impl EvalRecord {
    /// Header of the metrics CSV, with one trailing cluster-core-distance
    /// column per class.
    pub fn csv_header(num_classes: usize) -> String {
        let mut h = String::from(
            "step,accuracy,loss_ce,loss_aac,loss_pl,loss_con,pl_coverage,pl_precision,ccd_mean",
        );
        for c in 0..num_classes {
            h.push_str(&format!(",ccd_class_{c}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let losses = self.losses.as_ref();
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.accuracy,
            fmt_opt(losses.map(|l| l.ce)),
            fmt_opt(losses.and_then(|l| l.aac)),
            fmt_opt(losses.and_then(|l| l.pl)),
            fmt_opt(losses.and_then(|l| l.con)),
            self.coverage,
            self.precision,
            self.ccd_mean,
        );
        for v in &self.ccd_per_class {
            row.push_str(&format!(",{v}"));
        }
        row
    }
}

// ── Batch sampling ───────────────────────────────────────────────────

/// Cycles through a pool in seeded shuffled order, reshuffling on wrap.
/// Batches larger than the pool repeat samples.
struct CyclingSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclingSampler {
    fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        CyclingSampler { order, pos: 0, rng }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.order.is_empty() {
                break;
            }
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

// ── Finiteness checks ────────────────────────────────────────────────

fn check_finite_value(value: f64, term: &str) -> Result<(), TrainError> {
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            term: term.to_string(),
        });
    }
    Ok(())
}

fn check_finite_grads(g: &Graph, ids: &[TensorId], term: &str) -> Result<(), TrainError> {
    for id in ids {
        if let Some(grad) = g.grad(*id) {
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite {
                    term: format!("{term} gradients"),
                });
            }
        }
    }
    Ok(())
}

// ── The trainer ──────────────────────────────────────────────────────

/// Owns the optimizer state and RNG streams of one run. Parameters are
/// passed in per step so tests can snapshot them between phases.
pub struct Trainer {
    pub cfg: TrainConfig,
    schedule: InverseDecaySchedule,
    opt_labeled: SgdMomentum,
    opt_unlabeled: SgdMomentum,
    aug_rng: ChaCha8Rng,
    ramp_total: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, params: &ModelParams) -> Result<Self, TrainError> {
        cfg.validate()?;
        let sizes: Vec<usize> = params.arrays().iter().map(|a| a.len()).collect();
        let schedule = InverseDecaySchedule {
            eta0: cfg.hyper.lr0,
            gamma: cfg.hyper.lr_gamma,
            power: cfg.hyper.lr_power,
        };
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.hyper.seed);
        aug_rng.set_stream(23);
        let ramp_total = cfg.ramp_total();
        // The classifier weight array is last in parameter order.
        let mut multipliers = vec![1.0; sizes.len()];
        *multipliers.last_mut().unwrap() = cfg.hyper.classifier_lr_mult;
        Ok(Trainer {
            opt_labeled: SgdMomentum::new(cfg.hyper.momentum, &sizes)
                .with_lr_multipliers(multipliers.clone()),
            opt_unlabeled: SgdMomentum::new(cfg.hyper.momentum, &sizes)
                .with_lr_multipliers(multipliers),
            schedule,
            aug_rng,
            ramp_total,
            cfg,
        })
    }

    fn apply_update(
        params: &mut ModelParams,
        g: &Graph,
        bound: &BoundModel,
        opt: &mut SgdMomentum,
        lr: f64,
    ) {
        let ids = bound.param_ids();
        let grads: Vec<&[f64]> = ids
            .iter()
            .map(|id| {
                g.grad(*id)
                    .expect("parameter gradient missing after backward")
            })
            .collect();
        let mut arrays = params.arrays_mut();
        opt.step(&mut arrays, &grads, lr);
    }

    /// Runs one training iteration at step index `t` and returns the loss
    /// values. `labeled` must be nonempty; `unlabeled` may be empty, which
    /// skips the adaptation phase.
    pub fn train_step(
        &mut self,
        params: &mut ModelParams,
        labeled_x: &[Vec<f64>],
        labeled_y: &[usize],
        unlabeled_x: &[Vec<f64>],
        t: usize,
    ) -> Result<StepLosses, TrainError> {
        assert!(!labeled_x.is_empty(), "labeled batch must be nonempty");
        let lr = self.schedule.lr(t);
        if self.cfg.combined_step {
            return self.combined_step(params, labeled_x, labeled_y, unlabeled_x, t, lr);
        }

        // Phase 1: supervised cross-entropy on the labeled batch.
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let x = batch_constant(&mut g, labeled_x);
        let p = bound.predict(&mut g, x)?;
        let ce = cross_entropy(&mut g, p, labeled_y, self.cfg.reduction)?;
        let ce_val = g.scalar(ce);
        check_finite_value(ce_val, "L_CE")?;
        g.backward(ce)?;
        check_finite_grads(&g, &bound.param_ids(), "L_CE")?;
        Self::apply_update(params, &g, &bound, &mut self.opt_labeled, lr);

        // Phase 2: adaptation losses on the unlabeled batch.
        let mut losses = StepLosses {
            ce: ce_val,
            aac: None,
            pl: None,
            con: None,
            pl_retained: 0,
        };
        if self.unlabeled_phase_active() && !unlabeled_x.is_empty() {
            self.unlabeled_phase(params, unlabeled_x, t, lr, &mut losses, None)?;
        }
        Ok(losses)
    }

    fn unlabeled_phase_active(&self) -> bool {
        self.cfg.method != Method::SourcePlusTarget && self.cfg.toggles.any()
    }

    /// Builds the adaptation loss graph and applies one update. When
    /// `extra_supervised` carries a labeled batch (combined-step mode), the
    /// cross-entropy term joins the same update.
    #[allow(clippy::too_many_arguments)]
    fn unlabeled_phase(
        &mut self,
        params: &mut ModelParams,
        unlabeled_x: &[Vec<f64>],
        t: usize,
        lr: f64,
        losses: &mut StepLosses,
        extra_supervised: Option<(&[Vec<f64>], &[usize])>,
    ) -> Result<(), TrainError> {
        let cfg = &self.cfg;
        let m = unlabeled_x.len();
        let c = params.classifier.num_classes;
        let need_first_view = cfg.toggles.aac && cfg.method == Method::Cdac || cfg.toggles.con;
        let need_second_view = cfg.toggles.pl || cfg.toggles.con;

        let first_view: Vec<Vec<f64>> = if need_first_view {
            unlabeled_x
                .iter()
                .map(|x| augment(x, &cfg.augment, &mut self.aug_rng))
                .collect()
        } else {
            Vec::new()
        };
        let second_view: Vec<Vec<f64>> = if need_second_view {
            unlabeled_x
                .iter()
                .map(|x| augment(x, &cfg.augment, &mut self.aug_rng))
                .collect()
        } else {
            Vec::new()
        };

        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xu = batch_constant(&mut g, unlabeled_x);

        let mut terms: Vec<TensorId> = Vec::new();
        let mut originals_pred: Option<Vec<f64>> = None;

        if cfg.toggles.aac {
            let feat_u = bound.extract(&mut g, xu)?;
            let rev_u = g.grad_reverse(feat_u, 1.0);
            match cfg.method {
                Method::Cdac => {
                    let xp = batch_constant(&mut g, &first_view);
                    let feat_p = bound.extract(&mut g, xp)?;
                    let rev_p = g.grad_reverse(feat_p, 1.0);
                    let p_orig = bound.predict_from_features(&mut g, rev_u)?;
                    let p_aug = bound.predict_from_features(&mut g, rev_p)?;
                    let labels = pairwise_similarity(
                        g.value(feat_u),
                        m,
                        params.extractor.feature_dim(),
                        cfg.hyper.k,
                    )?;
                    let raw = aac_loss(&mut g, p_orig, p_aug, &labels, cfg.reduction)?;
                    let raw_val = g.scalar(raw);
                    check_finite_value(raw_val, "L_AAC")?;
                    losses.aac = Some(raw_val);
                    originals_pred = Some(g.value(p_orig).to_vec());
                    terms.push(g.scale(raw, -cfg.hyper.lambda));
                }
                Method::EntAdversarial => {
                    let p_orig = bound.predict_from_features(&mut g, rev_u)?;
                    let raw = prediction_entropy(&mut g, p_orig, cfg.reduction)?;
                    let raw_val = g.scalar(raw);
                    check_finite_value(raw_val, "L_ENT")?;
                    losses.aac = Some(raw_val);
                    originals_pred = Some(g.value(p_orig).to_vec());
                    terms.push(g.scale(raw, -cfg.hyper.lambda));
                }
                Method::SourcePlusTarget => unreachable!("phase gated on method"),
            }
        }

        let second_pred = if need_second_view {
            let xpp = batch_constant(&mut g, &second_view);
            Some(bound.predict(&mut g, xpp)?)
        } else {
            None
        };

        if cfg.toggles.pl {
            let p_values = match &originals_pred {
                Some(v) => v.clone(),
                None => {
                    let p = bound.predict(&mut g, xu)?;
                    g.value(p).to_vec()
                }
            };
            let batch = make_pseudo_labels(&p_values, m, c, cfg.hyper.tau)?;
            let pl = pseudo_label_loss_from(
                &mut g,
                &batch,
                second_pred.expect("second view required for pseudo labeling"),
                cfg.reduction,
            )?;
            let pl_val = g.scalar(pl);
            check_finite_value(pl_val, "L_PL")?;
            losses.pl = Some(pl_val);
            losses.pl_retained = batch.retained();
            terms.push(pl);
        }

        if cfg.toggles.con {
            let xp = batch_constant(&mut g, &first_view);
            let p_first = bound.predict(&mut g, xp)?;
            let ramp = RampState::new(t, self.ramp_total, cfg.hyper.nu);
            let con = consistency_loss(
                &mut g,
                p_first,
                second_pred.expect("second view required for consistency"),
                &ramp,
                cfg.reduction,
            )?;
            let con_val = g.scalar(con);
            check_finite_value(con_val, "L_Con")?;
            losses.con = Some(con_val);
            terms.push(con);
        }

        if let Some((lx, ly)) = extra_supervised {
            let x = batch_constant(&mut g, lx);
            let p = bound.predict(&mut g, x)?;
            let ce = cross_entropy(&mut g, p, ly, cfg.reduction)?;
            let ce_val = g.scalar(ce);
            check_finite_value(ce_val, "L_CE")?;
            losses.ce = ce_val;
            terms.push(ce);
        }

        let Some(mut total) = terms.first().copied() else {
            return Ok(());
        };
        for term in &terms[1..] {
            total = g.add(total, *term)?;
        }
        g.backward(total)?;
        check_finite_grads(&g, &bound.param_ids(), "adaptation-phase")?;
        let opt = if extra_supervised.is_some() {
            &mut self.opt_labeled
        } else {
            &mut self.opt_unlabeled
        };
        Self::apply_update(params, &g, &bound, opt, lr);
        Ok(())
    }

    fn combined_step(
        &mut self,
        params: &mut ModelParams,
        labeled_x: &[Vec<f64>],
        labeled_y: &[usize],
        unlabeled_x: &[Vec<f64>],
        t: usize,
        lr: f64,
    ) -> Result<StepLosses, TrainError> {
        let mut losses = StepLosses {
            ce: 0.0,
            aac: None,
            pl: None,
            con: None,
            pl_retained: 0,
        };
        if self.unlabeled_phase_active() && !unlabeled_x.is_empty() {
            self.unlabeled_phase(
                params,
                unlabeled_x,
                t,
                lr,
                &mut losses,
                Some((labeled_x, labeled_y)),
            )?;
        } else {
            // Nothing but supervision: identical to a phase-1 step.
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let x = batch_constant(&mut g, labeled_x);
            let p = bound.predict(&mut g, x)?;
            let ce = cross_entropy(&mut g, p, labeled_y, self.cfg.reduction)?;
            losses.ce = g.scalar(ce);
            check_finite_value(losses.ce, "L_CE")?;
            g.backward(ce)?;
            check_finite_grads(&g, &bound.param_ids(), "L_CE")?;
            Self::apply_update(params, &g, &bound, &mut self.opt_labeled, lr);
        }
        Ok(losses)
    }
}

// ── Evaluation and instrumentation ───────────────────────────────────

/// Fraction of argmax-correct predictions on a labeled set. Pure read.
pub fn evaluate(params: &ModelParams, test_set: &[LabeledSample]) -> Result<f64, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let xs: Vec<Vec<f64>> = test_set.iter().map(|s| s.features.clone()).collect();
    let probs = predict_values(params, &xs)?;
    let c = params.classifier.num_classes;
    let mut correct = 0usize;
    for (r, sample) in test_set.iter().enumerate() {
        let row = &probs[r * c..(r + 1) * c];
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

/// Row probabilities for a batch of inputs.
pub fn predict_values(params: &ModelParams, xs: &[Vec<f64>]) -> Result<Vec<f64>, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = batch_constant(&mut g, xs);
    let p = bound.predict(&mut g, x)?;
    Ok(g.value(p).to_vec())
}

/// l2-normalized feature rows for a batch of inputs, flat row-major.
pub fn normalized_features(params: &ModelParams, xs: &[Vec<f64>]) -> Result<Vec<f64>, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = batch_constant(&mut g, xs);
    let f = bound.extract(&mut g, x)?;
    let n = g.l2_normalize_rows(f)?;
    Ok(g.value(n).to_vec())
}

/// Euclidean distance between the mean l2-normalized feature of class-`c`
/// source samples and that of class-`c` target samples. Target labels are
/// the hidden ground truth; analysis only.
pub fn cluster_core_distance(
    params: &ModelParams,
    source: &[LabeledSample],
    target_xs: &[Vec<f64>],
    target_labels: &[usize],
    class: usize,
) -> Result<f64, TrainError> {
    assert_eq!(target_xs.len(), target_labels.len());
    let srcs: Vec<Vec<f64>> = source
        .iter()
        .filter(|s| s.label == class)
        .map(|s| s.features.clone())
        .collect();
    if srcs.is_empty() {
        return Err(TrainError::EmptyClass {
            class,
            side: "source",
        });
    }
    let tgts: Vec<Vec<f64>> = target_xs
        .iter()
        .zip(target_labels)
        .filter(|(_, &y)| y == class)
        .map(|(x, _)| x.clone())
        .collect();
    if tgts.is_empty() {
        return Err(TrainError::EmptyClass {
            class,
            side: "target",
        });
    }
    let dim = params.extractor.feature_dim();
    let centroid = |xs: &[Vec<f64>]| -> Result<Vec<f64>, TrainError> {
        let feats = normalized_features(params, xs)?;
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in 0..xs.len() {
            for d in 0..dim {
                mean[d] += feats[r * dim + d] / n;
            }
        }
        Ok(mean)
    };
    let (ms, mt) = (centroid(&srcs)?, centroid(&tgts)?);
    Ok(ms
        .iter()
        .zip(&mt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Coverage and correctness of the confidence filter over a pool with
/// hidden ground truth.
pub fn pseudo_label_stats(
    params: &ModelParams,
    pool: &[Vec<f64>],
    hidden_labels: &[usize],
    tau: f64,
) -> Result<PseudoStats, TrainError> {
    assert_eq!(pool.len(), hidden_labels.len());
    if pool.is_empty() {
        return Ok(PseudoStats {
            coverage: 0.0,
            precision: 1.0,
            none_retained: true,
        });
    }
    let c = params.classifier.num_classes;
    let probs = predict_values(params, pool)?;
    let batch = make_pseudo_labels(&probs, pool.len(), c, tau)?;
    let retained = batch.retained();
    if retained == 0 {
        return Ok(PseudoStats {
            coverage: 0.0,
            precision: 1.0,
            none_retained: true,
        });
    }
    let correct = batch
        .keep_mask
        .iter()
        .zip(&batch.hard_labels)
        .zip(hidden_labels)
        .filter(|((&kept, &pred), &truth)| kept && pred == truth)
        .count();
    Ok(PseudoStats {
        coverage: retained as f64 / pool.len() as f64,
        precision: correct as f64 / retained as f64,
        none_retained: false,
    })
}

// ── Whole runs ───────────────────────────────────────────────────────

fn instrument(
    params: &ModelParams,
    dataset: &SsdaDataset,
    tau: f64,
    step: usize,
    losses: Option<StepLosses>,
) -> Result<EvalRecord, TrainError> {
    let accuracy = evaluate(params, &dataset.target_test)?;
    let stats = pseudo_label_stats(
        params,
        &dataset.target_unlabeled,
        &dataset.unlabeled_truth,
        tau,
    )?;
    let mut ccd_per_class = Vec::with_capacity(dataset.num_classes);
    for class in 0..dataset.num_classes {
        ccd_per_class.push(cluster_core_distance(
            params,
            &dataset.source,
            &dataset.target_unlabeled,
            &dataset.unlabeled_truth,
            class,
        )?);
    }
    let ccd_mean = ccd_per_class.iter().sum::<f64>() / ccd_per_class.len().max(1) as f64;
    Ok(EvalRecord {
        step,
        accuracy,
        losses,
        coverage: stats.coverage,
        precision: stats.precision,
        none_retained: stats.none_retained,
        ccd_mean,
        ccd_per_class,
    })
}

/// Executes a full training run with periodic instrumentation. Deterministic
/// under the config seed: identical configs give identical metric traces and
/// identical trained parameters.
pub fn run_experiment(cfg: &TrainConfig, dataset: &SsdaDataset) -> Result<RunReport, TrainError> {
    cfg.validate()?;
    let dims = ModelDims {
        input_dim: dataset.input_dim,
        hidden_dims: cfg.hidden_dims.clone(),
        feature_dim: cfg.feature_dim,
        num_classes: dataset.num_classes,
    };
    let mut params = init_params(cfg.hyper.seed, &dims, cfg.hyper.temperature, cfg.hyper.k)?;
    let mut trainer = Trainer::new(cfg.clone(), &params)?;

    let use_target_labeled = cfg.setting == Setting::Ssda && !dataset.target_labeled.is_empty();
    let seed = cfg.hyper.seed;
    let mut source_sampler = CyclingSampler::new(dataset.source.len(), seed, 20);
    let mut labeled_sampler = CyclingSampler::new(dataset.target_labeled.len(), seed, 21);
    let mut unlabeled_sampler = CyclingSampler::new(dataset.target_unlabeled.len(), seed, 22);

    let total = cfg.total_steps();
    let mut records = Vec::new();
    records.push(instrument(&params, dataset, cfg.hyper.tau, 0, None)?);

    for t in 0..total {
        let mut lx: Vec<Vec<f64>> = Vec::new();
        let mut ly: Vec<usize> = Vec::new();
        for i in source_sampler.next_batch(cfg.hyper.batch_source) {
            lx.push(dataset.source[i].features.clone());
            ly.push(dataset.source[i].label);
        }
        if use_target_labeled {
            for i in labeled_sampler.next_batch(cfg.hyper.batch_target) {
                lx.push(dataset.target_labeled[i].features.clone());
                ly.push(dataset.target_labeled[i].label);
            }
        }
        let ux: Vec<Vec<f64>> = unlabeled_sampler
            .next_batch(cfg.hyper.batch_unlabeled)
            .into_iter()
            .map(|i| dataset.target_unlabeled[i].clone())
            .collect();

        let losses = trainer.train_step(&mut params, &lx, &ly, &ux, t)?;
        let done = t + 1;
        if done % cfg.eval_every == 0 || done == total {
            records.push(instrument(
                &params,
                dataset,
                cfg.hyper.tau,
                done,
                Some(losses),
            )?);
        }
    }

    let final_accuracy = records.last().map(|r| r.accuracy).unwrap_or(0.0);
    let best_accuracy = records
        .iter()
        .map(|r| r.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RunReport {
        metrics: RunMetrics {
            records,
            final_accuracy,
            best_accuracy,
        },
        params,
    })
}
