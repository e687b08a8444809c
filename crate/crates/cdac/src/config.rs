//! Flat `key = value` experiment configuration with dotted namespaces.
//!
//! A config fully determines a run: dataset generator and split, training
//! method and ablation switches, every hyperparameter, and the output
//! location. Parsing fills documented defaults and rejects unknown keys;
//! serializing materializes every key, so a config echo parses back to an
//! identical config and reproduces its run exactly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{
    make_gaussian_blobs_shift, make_two_moons_shift, split_shots, AugmentConfig, DataError,
    SsdaDataset,
};
use crate::losses::Reduction;
use crate::model::HyperParams;
use crate::trainer::{LossToggles, Method, Setting, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: expected {expected}, got `{got}`")]
    BadValue {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
}

/// Dataset side of an experiment. Generator-specific keys are ignored by the
/// other generator but always carried, so echoes stay complete.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub generator: GeneratorKind,
    pub seed: u64,
    pub n_per_domain: usize,
    pub shots: usize,
    pub rotation_degrees: f64,
    pub noise: f64,
    pub classes: usize,
    pub dim: usize,
    pub mean_shift: f64,
    pub covariance_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    TwoMoons,
    GaussianBlobs,
}

impl GeneratorKind {
    fn name(&self) -> &'static str {
        match self {
            GeneratorKind::TwoMoons => "two_moons",
            GeneratorKind::GaussianBlobs => "gaussian_blobs",
        }
    }
}

impl DataConfig {
    /// Generates the dataset and applies the shot split when `shots > 0`.
    pub fn build_dataset(&self) -> Result<SsdaDataset, DataError> {
        let ds = match self.generator {
            GeneratorKind::TwoMoons => make_two_moons_shift(
                self.n_per_domain,
                self.rotation_degrees,
                self.noise,
                self.seed,
            )?,
            GeneratorKind::GaussianBlobs => make_gaussian_blobs_shift(
                self.classes,
                self.dim,
                self.mean_shift,
                self.covariance_scale,
                self.n_per_domain,
                self.seed,
            )?,
        };
        if self.shots > 0 {
            split_shots(ds, self.shots, self.seed)
        } else {
            Ok(ds)
        }
    }
}

/// Everything one run needs: dataset spec, training config, output location.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output_dir: String,
    pub emit_features: bool,
}

const KNOWN_KEYS: &[&str] = &[
    "data.generator",
    "data.seed",
    "data.n_per_domain",
    "data.shots",
    "data.rotation_degrees",
    "data.noise",
    "data.classes",
    "data.dim",
    "data.mean_shift",
    "data.covariance_scale",
    "augment.sigma",
    "augment.scale_lo",
    "augment.scale_hi",
    "augment.dropout",
    "train.method",
    "train.setting",
    "train.loss.aac",
    "train.loss.pl",
    "train.loss.con",
    "train.lambda",
    "train.tau",
    "train.nu",
    "train.k",
    "train.temperature",
    "train.ramp_steps",
    "train.epochs",
    "train.steps_per_epoch",
    "train.eval_every",
    "train.batch_source",
    "train.batch_target",
    "train.batch_unlabeled",
    "train.lr",
    "train.lr_gamma",
    "train.lr_power",
    "train.momentum",
    "train.classifier_lr_mult",
    "train.seed",
    "train.reduction",
    "train.combined_step",
    "train.hidden_dims",
    "train.feature_dim",
    "output.dir",
    "output.emit_features",
];

struct KeyMap {
    map: BTreeMap<String, String>,
}

impl KeyMap {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn parse_or<T: std::str::FromStr>(
        &self,
        key: &str,
        expected: &'static str,
        default: T,
    ) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                expected,
                got: raw.to_string(),
            }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(raw) => Err(ConfigError::BadValue {
                key: key.to_string(),
                expected: "true or false",
                got: raw.to_string(),
            }),
        }
    }
}

fn split_key_values(text: &str) -> Result<KeyMap, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey(key));
        }
    }
    Ok(KeyMap { map })
}

/// Parses a config text. `data.generator` and `train.method` are required;
/// every other key falls back to its documented default. Unknown keys,
/// duplicates, and malformed values are rejected with the key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let keys = split_key_values(text)?;

    let generator = match keys.required("data.generator")? {
        "two_moons" => GeneratorKind::TwoMoons,
        "gaussian_blobs" => GeneratorKind::GaussianBlobs,
        other => {
            return Err(ConfigError::BadValue {
                key: "data.generator".into(),
                expected: "two_moons or gaussian_blobs",
                got: other.to_string(),
            })
        }
    };
    let data = DataConfig {
        generator,
        seed: keys.parse_or("data.seed", "unsigned integer", 1)?,
        n_per_domain: keys.parse_or("data.n_per_domain", "unsigned integer", 500)?,
        shots: keys.parse_or("data.shots", "unsigned integer", 3)?,
        rotation_degrees: keys.parse_or("data.rotation_degrees", "float", 30.0)?,
        noise: keys.parse_or("data.noise", "float", 0.15)?,
        classes: keys.parse_or("data.classes", "unsigned integer", 4)?,
        dim: keys.parse_or("data.dim", "unsigned integer", 8)?,
        mean_shift: keys.parse_or("data.mean_shift", "float", 2.0)?,
        covariance_scale: keys.parse_or("data.covariance_scale", "float", 1.0)?,
    };

    let method = match keys.required("train.method")? {
        "cdac" => Method::Cdac,
        "s+t" => Method::SourcePlusTarget,
        "ent" => Method::EntAdversarial,
        other => {
            return Err(ConfigError::BadValue {
                key: "train.method".into(),
                expected: "cdac, s+t, or ent",
                got: other.to_string(),
            })
        }
    };
    let setting = match keys.get("train.setting").unwrap_or("ssda") {
        "ssda" => Setting::Ssda,
        "uda" => Setting::Uda,
        other => {
            return Err(ConfigError::BadValue {
                key: "train.setting".into(),
                expected: "ssda or uda",
                got: other.to_string(),
            })
        }
    };
    // Default switches follow the method: the full pipeline enables all
    // terms, the entropy baseline only its adversarial term, s+t none.
    let default_toggles = match method {
        Method::Cdac => LossToggles::all_on(),
        Method::EntAdversarial => LossToggles {
            aac: true,
            pl: false,
            con: false,
        },
        Method::SourcePlusTarget => LossToggles::all_off(),
    };
    let toggles = LossToggles {
        aac: keys.bool_or("train.loss.aac", default_toggles.aac)?,
        pl: keys.bool_or("train.loss.pl", default_toggles.pl)?,
        con: keys.bool_or("train.loss.con", default_toggles.con)?,
    };
    let reduction = match keys.get("train.reduction").unwrap_or("sum") {
        "sum" => Reduction::Sum,
        "mean" => Reduction::Mean,
        other => {
            return Err(ConfigError::BadValue {
                key: "train.reduction".into(),
                expected: "sum or mean",
                got: other.to_string(),
            })
        }
    };
    let hidden_dims = match keys.get("train.hidden_dims") {
        None => vec![64, 32],
        Some(raw) => {
            let dims: Result<Vec<usize>, _> = raw.split(',').map(|p| p.trim().parse()).collect();
            dims.map_err(|_| ConfigError::BadValue {
                key: "train.hidden_dims".into(),
                expected: "comma-separated unsigned integers",
                got: raw.to_string(),
            })?
        }
    };

    let defaults = HyperParams::default();
    let hyper = HyperParams {
        lambda: keys.parse_or("train.lambda", "float", defaults.lambda)?,
        tau: keys.parse_or("train.tau", "float", defaults.tau)?,
        nu: keys.parse_or("train.nu", "float", defaults.nu)?,
        k: keys.parse_or("train.k", "unsigned integer", defaults.k)?,
        temperature: keys.parse_or("train.temperature", "float", defaults.temperature)?,
        ramp_total_steps: keys.parse_or("train.ramp_steps", "unsigned integer", 0)?,
        batch_source: keys.parse_or(
            "train.batch_source",
            "unsigned integer",
            defaults.batch_source,
        )?,
        batch_target: keys.parse_or(
            "train.batch_target",
            "unsigned integer",
            defaults.batch_target,
        )?,
        batch_unlabeled: keys.parse_or(
            "train.batch_unlabeled",
            "unsigned integer",
            defaults.batch_unlabeled,
        )?,
        lr0: keys.parse_or("train.lr", "float", defaults.lr0)?,
        lr_gamma: keys.parse_or("train.lr_gamma", "float", defaults.lr_gamma)?,
        lr_power: keys.parse_or("train.lr_power", "float", defaults.lr_power)?,
        momentum: keys.parse_or("train.momentum", "float", defaults.momentum)?,
        classifier_lr_mult: keys.parse_or(
            "train.classifier_lr_mult",
            "float",
            defaults.classifier_lr_mult,
        )?,
        seed: keys.parse_or("train.seed", "unsigned integer", defaults.seed)?,
    };
    let augment = AugmentConfig {
        gaussian_sigma: keys.parse_or("augment.sigma", "float", 0.05)?,
        scale_range: (
            keys.parse_or("augment.scale_lo", "float", 0.9)?,
            keys.parse_or("augment.scale_hi", "float", 1.1)?,
        ),
        dropout_prob: keys.parse_or("augment.dropout", "float", 0.05)?,
    };
    let train = TrainConfig {
        hyper,
        method,
        toggles,
        setting,
        epochs: keys.parse_or("train.epochs", "unsigned integer", 10)?,
        steps_per_epoch: keys.parse_or("train.steps_per_epoch", "unsigned integer", 100)?,
        eval_every: keys.parse_or("train.eval_every", "unsigned integer", 100)?,
        combined_step: keys.bool_or("train.combined_step", false)?,
        reduction,
        hidden_dims,
        feature_dim: keys.parse_or("train.feature_dim", "unsigned integer", 32)?,
        augment,
    };

    Ok(ExperimentConfig {
        data,
        train,
        output_dir: keys.get("output.dir").unwrap_or("cdac-out").to_string(),
        emit_features: keys.bool_or("output.emit_features", false)?,
    })
}

impl ExperimentConfig {
    /// Canonical text form with every key materialized. Parsing the result
    /// yields an identical config.
    pub fn serialize(&self) -> String {
        let d = &self.data;
        let t = &self.train;
        let h = &t.hyper;
        let a = &t.augment;
        let hidden: Vec<String> = t.hidden_dims.iter().map(usize::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("data.generator", d.generator.name().into()),
            ("data.seed", d.seed.to_string()),
            ("data.n_per_domain", d.n_per_domain.to_string()),
            ("data.shots", d.shots.to_string()),
            ("data.rotation_degrees", d.rotation_degrees.to_string()),
            ("data.noise", d.noise.to_string()),
            ("data.classes", d.classes.to_string()),
            ("data.dim", d.dim.to_string()),
            ("data.mean_shift", d.mean_shift.to_string()),
            ("data.covariance_scale", d.covariance_scale.to_string()),
            ("augment.sigma", a.gaussian_sigma.to_string()),
            ("augment.scale_lo", a.scale_range.0.to_string()),
            ("augment.scale_hi", a.scale_range.1.to_string()),
            ("augment.dropout", a.dropout_prob.to_string()),
            ("train.method", t.method.name().into()),
            ("train.setting", t.setting.name().into()),
            ("train.loss.aac", t.toggles.aac.to_string()),
            ("train.loss.pl", t.toggles.pl.to_string()),
            ("train.loss.con", t.toggles.con.to_string()),
            ("train.lambda", h.lambda.to_string()),
            ("train.tau", h.tau.to_string()),
            ("train.nu", h.nu.to_string()),
            ("train.k", h.k.to_string()),
            ("train.temperature", h.temperature.to_string()),
            ("train.ramp_steps", h.ramp_total_steps.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.steps_per_epoch", t.steps_per_epoch.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.batch_source", h.batch_source.to_string()),
            ("train.batch_target", h.batch_target.to_string()),
            ("train.batch_unlabeled", h.batch_unlabeled.to_string()),
            ("train.lr", h.lr0.to_string()),
            ("train.lr_gamma", h.lr_gamma.to_string()),
            ("train.lr_power", h.lr_power.to_string()),
            ("train.momentum", h.momentum.to_string()),
            ("train.classifier_lr_mult", h.classifier_lr_mult.to_string()),
            ("train.seed", h.seed.to_string()),
            (
                "train.reduction",
                match t.reduction {
                    Reduction::Sum => "sum".into(),
                    Reduction::Mean => "mean".into(),
                },
            ),
            ("train.combined_step", t.combined_step.to_string()),
            ("train.hidden_dims", hidden.join(",")),
            ("train.feature_dim", t.feature_dim.to_string()),
            ("output.dir", self.output_dir.clone()),
            ("output.emit_features", self.emit_features.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Flat key/value view, used by the JSON summary.
    pub fn as_pairs(&self) -> Vec<(String, String)> {
        self.serialize()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "data.generator = two_moons\ntrain.method = cdac\n";

    #[test]
    fn minimal_config_fills_stated_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.train.hyper.lambda, 1.0);
        assert_eq!(cfg.train.hyper.tau, 0.95);
        assert_eq!(cfg.train.hyper.nu, 30.0);
        assert_eq!(cfg.train.hyper.k, 5);
        assert!(cfg.train.toggles.aac && cfg.train.toggles.pl && cfg.train.toggles.con);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config("data.generator = two_moons\nspeed = fast\n").unwrap_err();
        match err {
            ConfigError::UnknownKey(k) => assert_eq!(k, "speed"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn missing_required_key_is_rejected() {
        let err = parse_config("data.generator = two_moons\n").unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey(k) if k == "train.method"));
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let err =
            parse_config("data.generator = two_moons\ntrain.method = cdac\ntrain.epochs = soon\n")
                .unwrap_err();
        match err {
            ConfigError::BadValue { key, .. } => assert_eq!(key, "train.epochs"),
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config(
            "data.generator = two_moons\ndata.generator = two_moons\ntrain.method = cdac\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey(_)));
    }

    #[test]
    fn round_trip_parse_serialize_parse() {
        let cfg = parse_config(MINIMAL).unwrap();
        let text = cfg.serialize();
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.serialize());
    }

    #[test]
    fn method_specific_toggle_defaults() {
        let st = parse_config("data.generator = two_moons\ntrain.method = s+t\n").unwrap();
        assert!(!st.train.toggles.any());
        let ent = parse_config("data.generator = two_moons\ntrain.method = ent\n").unwrap();
        assert!(ent.train.toggles.aac && !ent.train.toggles.pl && !ent.train.toggles.con);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# experiment\n\ndata.generator = two_moons\ntrain.method = cdac\n")
            .unwrap();
        assert_eq!(cfg.data.generator, GeneratorKind::TwoMoons);
    }
}
