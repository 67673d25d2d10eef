use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{cnn_output_dims, ImageDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Stan,
    Concat,
    Single,
}

/// What one sensor delivers per frame. Images arrive flattened row-major as
/// `height x width x channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modality {
    Features { dim: usize },
    Image { height: usize, width: usize, channels: usize },
}

impl Modality {
    pub fn input_dim(&self) -> usize {
        match *self {
            Modality::Features { dim } => dim,
            Modality::Image { height, width, channels } => height * width * channels,
        }
    }
}

fn default_cnn_features() -> usize {
    8
}
fn default_cnn_layers() -> usize {
    3
}
fn default_cnn_kernel() -> usize {
    5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    /// Per-frame `tanh(xW + b)`.
    Dense { units: usize },
    /// Stacked same-padded convolutions, each followed by ReLU and a 2x2 max
    /// pool, flattened per frame.
    Cnn {
        #[serde(default = "default_cnn_features")]
        features: usize,
        #[serde(default = "default_cnn_layers")]
        layers: usize,
        #[serde(default = "default_cnn_kernel")]
        kernel: usize,
    },
}

impl Transform {
    pub fn cnn() -> Self {
        Transform::Cnn {
            features: default_cnn_features(),
            layers: default_cnn_layers(),
            kernel: default_cnn_kernel(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub modality: Modality,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub attention: Option<AttentionSpec>,
    /// Sensors with the same label use one set of transform and attention
    /// weights, owned by the first member.
    #[serde(default)]
    pub share_group: Option<String>,
}

impl SensorSpec {
    pub fn features(dim: usize) -> Self {
        Self {
            modality: Modality::Features { dim },
            transform: Transform::Identity,
            attention: None,
            share_group: None,
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_attention(mut self, hidden: usize) -> Self {
        self.attention = Some(AttentionSpec { hidden });
        self
    }

    pub fn shared(mut self, group: impl Into<String>) -> Self {
        self.share_group = Some(group.into());
        self
    }

    pub fn image_dims(&self) -> Option<ImageDims> {
        match self.modality {
            Modality::Image { height, width, channels } => Some(ImageDims { height, width, channels }),
            Modality::Features { .. } => None,
        }
    }

    /// Per-frame width after the transformation layer.
    pub fn transformed_dim(&self) -> Result<usize> {
        match self.transform {
            Transform::Identity => Ok(self.modality.input_dim()),
            Transform::Dense { units } => Ok(units),
            Transform::Cnn { features, layers, .. } => {
                let dims = self.image_dims().ok_or_else(|| {
                    Error::InvalidConfig("a cnn transform needs an image modality".into())
                })?;
                Ok(cnn_output_dims(dims, layers, features)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .len())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    /// GRU units per level (per direction when bidirectional).
    pub layers: Vec<usize>,
    #[serde(default)]
    pub bidirectional: bool,
    /// Vocabulary size plus one for the blank.
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub sensors: Vec<SensorSpec>,
    pub classifier: ClassifierSpec,
}

impl ModelSpec {
    /// `sensors` copies of a feature sensor feeding attention of `attention`
    /// units each, merged into a GRU classifier.
    pub fn stan(sensors: usize, dim: usize, attention: usize, classifier: ClassifierSpec) -> Self {
        Self {
            architecture: Architecture::Stan,
            sensors: vec![SensorSpec::features(dim).with_attention(attention); sensors],
            classifier,
        }
    }

    pub fn concat(sensors: usize, dim: usize, classifier: ClassifierSpec) -> Self {
        Self {
            architecture: Architecture::Concat,
            sensors: vec![SensorSpec::features(dim); sensors],
            classifier,
        }
    }

    pub fn single(dim: usize, classifier: ClassifierSpec) -> Self {
        Self {
            architecture: Architecture::Single,
            sensors: vec![SensorSpec::features(dim)],
            classifier,
        }
    }

    /// Applies `transform` to every sensor.
    pub fn with_transform(mut self, transform: Transform) -> Self {
        for s in &mut self.sensors {
            s.transform = transform;
        }
        self
    }

    /// Puts every sensor into one share group.
    pub fn shared(mut self) -> Self {
        for s in &mut self.sensors {
            s.share_group = Some("shared".into());
        }
        self
    }

    /// Width of the merged representation fed to the classifier.
    pub fn merged_dim(&self) -> Result<usize> {
        match self.architecture {
            Architecture::Concat => self.sensors.iter().map(SensorSpec::transformed_dim).sum(),
            _ => self
                .sensors
                .first()
                .ok_or_else(|| Error::InvalidConfig("model has no sensors".into()))?
                .transformed_dim(),
        }
    }

    /// Index of the sensor whose weights sensor `i` uses.
    pub fn weight_owner(&self, i: usize) -> usize {
        match &self.sensors[i].share_group {
            None => i,
            Some(group) => self
                .sensors
                .iter()
                .position(|s| s.share_group.as_ref() == Some(group))
                .unwrap_or(i),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let n = self.sensors.len();
        match self.architecture {
            Architecture::Stan if n < 2 => return bad(format!("stan needs at least 2 sensors, got {n}")),
            Architecture::Concat if n < 2 => return bad(format!("concat needs at least 2 sensors, got {n}")),
            Architecture::Single if n != 1 => return bad(format!("single needs exactly 1 sensor, got {n}")),
            _ => {}
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if s.modality.input_dim() == 0 {
                return bad(format!("sensor {i} has zero input width"));
            }
            match (self.architecture, s.attention) {
                (Architecture::Stan, None) => return bad(format!("stan sensor {i} lacks an attention layer")),
                (Architecture::Stan, Some(a)) if a.hidden == 0 => {
                    return bad(format!("sensor {i} attention has zero units"))
                }
                (Architecture::Concat | Architecture::Single, Some(_)) => {
                    return bad(format!("sensor {i} has attention but the architecture does not merge by attention"))
                }
                _ => {}
            }
            match s.transform {
                Transform::Dense { units: 0 } => return bad(format!("sensor {i} dense transform has zero units")),
                Transform::Cnn { features, layers, kernel } => {
                    if features == 0 || layers == 0 || kernel % 2 == 0 {
                        return bad(format!("sensor {i} cnn needs features, layers > 0 and an odd kernel"));
                    }
                }
                _ => {}
            }
            if s.transformed_dim()? == 0 {
                return bad(format!("sensor {i} transforms to zero width"));
            }
            let owner = self.weight_owner(i);
            if owner != i {
                let o = &self.sensors[owner];
                if (o.modality, o.transform, o.attention) != (s.modality, s.transform, s.attention) {
                    return bad(format!("sensor {i} and sensor {owner} share weights but differ in shape"));
                }
            }
        }
        if self.architecture == Architecture::Stan {
            let d0 = self.sensors[0].transformed_dim()?;
            for (i, s) in self.sensors.iter().enumerate().skip(1) {
                let d = s.transformed_dim()?;
                if d != d0 {
                    return bad(format!("sensor {i} transforms to {d} features but sensor 0 to {d0}"));
                }
            }
        }
        let c = &self.classifier;
        if c.output_dim < 2 {
            return bad(format!(
                "classifier output must cover a blank and at least one symbol, got {}",
                c.output_dim
            ));
        }
        if c.layers.is_empty() || c.layers.contains(&0) {
            return bad("classifier needs at least one non-empty GRU level".into());
        }
        Ok(())
    }
}
