//! Experiment configuration: one TOML file plus dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SyntheticTaskSpec;
use crate::error::{Error, Result};
use crate::eval::Condition;
use crate::model::{Architecture, ClassifierSpec, ModelSpec, SensorSpec, Transform};
use crate::nn::Precision;
use crate::noise::{NoiseProfileSpec, WalkConfig};
use crate::train::TrainConfig;

/// Compact model description; input width and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Ignored for `single`.
    pub sensors: usize,
    pub transform: Transform,
    /// Attention GRU width (`stan` only).
    pub attention_units: usize,
    /// All sensors share transform and attention weights.
    pub shared: bool,
    pub classifier_layers: Vec<usize>,
    pub bidirectional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Stan,
            sensors: 2,
            transform: Transform::Identity,
            attention_units: 20,
            shared: false,
            classifier_layers: vec![64],
            bidirectional: false,
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self, feature_dim: usize, num_classes: usize) -> Result<ModelSpec> {
        let classifier = ClassifierSpec {
            layers: self.classifier_layers.clone(),
            bidirectional: self.bidirectional,
            output_dim: num_classes,
        };
        let sensor = SensorSpec::features(feature_dim).with_transform(self.transform);
        let sensors = match self.architecture {
            Architecture::Single => vec![sensor],
            Architecture::Concat => vec![sensor; self.sensors],
            Architecture::Stan => vec![sensor.with_attention(self.attention_units); self.sensors],
        };
        let mut spec = ModelSpec {
            architecture: self.architecture,
            sensors,
            classifier,
        };
        if self.shared {
            spec = spec.shared();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Clean,
    Noisy,
    Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub condition: ConditionKind,
    pub walk: WalkConfig,
    /// One profile per sensor in compact form, e.g. `sweep:0:3`.
    pub profiles: Vec<String>,
    /// Feed a single-input model the mean of this many corrupted copies.
    pub average_copies: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            condition: ConditionKind::Clean,
            walk: WalkConfig::default(),
            profiles: vec!["sweep:0:3".into(), "sweep:3:0".into()],
            average_copies: None,
        }
    }
}

impl EvalConfig {
    pub fn condition(&self) -> Result<Condition> {
        Ok(match self.condition {
            ConditionKind::Clean => Condition::Clean,
            ConditionKind::Noisy => {
                if self.walk.sigma_max != 0.0 {
                    self.walk.validate()?;
                }
                Condition::Noisy(self.walk)
            }
            ConditionKind::Profile => Condition::Profile {
                profiles: self.profiles.iter().map(|p| p.parse()).collect::<Result<_>>()?,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreviewConfig {
    pub length: usize,
    /// Compact profile; `None` previews a random walk with `walk`.
    pub profile: Option<String>,
    pub walk: WalkConfig,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        Self {
            length: 200,
            profile: None,
            walk: WalkConfig::default(),
        }
    }
}

impl PreviewConfig {
    pub fn profile(&self) -> Result<NoiseProfileSpec> {
        match &self.profile {
            Some(p) => p.parse(),
            None => {
                self.walk.validate()?;
                Ok(NoiseProfileSpec {
                    kind: crate::noise::ProfileKind::RandomWalk {
                        gamma_shape: self.walk.gamma_shape,
                        gamma_scale: self.walk.gamma_scale,
                    },
                    sigma_max: self.walk.sigma_max,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// At most `i64::MAX`, the largest TOML integer.
    pub seed: u64,
    pub precision: Precision,
    pub corpus: SyntheticTaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub preview: PreviewConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            corpus: SyntheticTaskSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            preview: PreviewConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// Applies `a.b.c=value`, creating intermediate tables as needed.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses `text`, applies overrides in order, and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.model
            .to_spec(self.corpus.feature_dim, self.corpus.vocabulary_size + 1)?;
        self.eval.condition()?;
        Ok(())
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
