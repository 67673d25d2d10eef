use serde::{Deserialize, Serialize};

use super::spec::{Architecture, ModelSpec, Transform};
use crate::error::Result;
use crate::nn::conv::CnnStack;
use crate::nn::gru::Gru;

/// How recurrent layers are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountConvention {
    /// Exactly the tensors this crate trains: every GRU starts from a zero
    /// state.
    #[default]
    ZeroInitialState,
    /// Adds one learned initial-state vector per GRU (and per direction), as
    /// frameworks with a trainable initial hidden state report it.
    LearnedInitialState,
}

fn gru(d_in: usize, hidden: usize, convention: CountConvention) -> usize {
    Gru::param_count(d_in, hidden)
        + match convention {
            CountConvention::ZeroInitialState => 0,
            CountConvention::LearnedInitialState => hidden,
        }
}

/// Closed-form parameter count of `spec`.
///
/// Under [`CountConvention::ZeroInitialState`] this equals the number of
/// elements in the tree built from `spec`.
pub fn count_params(spec: &ModelSpec, convention: CountConvention) -> Result<usize> {
    spec.validate()?;
    let mut total = 0;
    for (i, s) in spec.sensors.iter().enumerate() {
        if spec.weight_owner(i) != i {
            continue;
        }
        let d_in = s.modality.input_dim();
        total += match s.transform {
            Transform::Identity => 0,
            Transform::Dense { units } => d_in * units + units,
            Transform::Cnn { features, layers, kernel } => {
                CnnStack::param_count(s.image_dims().expect("validated image modality"), layers, features, kernel)
            }
        };
        if let (Architecture::Stan, Some(att)) = (spec.architecture, s.attention) {
            total += gru(s.transformed_dim()?, att.hidden, convention) + att.hidden + 1;
        }
    }
    let c = &spec.classifier;
    let dirs = if c.bidirectional { 2 } else { 1 };
    let mut d = spec.merged_dim()?;
    for &h in &c.layers {
        total += dirs * gru(d, h, convention);
        d = dirs * h;
    }
    total += d * c.output_dim + c.output_dim;
    Ok(total)
}
