use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Class indices of a transcription. Index 0 is the CTC blank and never
/// appears in a label sequence.
pub type Label = u32;

pub const BLANK: Label = 0;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence(pub Vec<Label>);

impl LabelSequence {
    pub fn new(symbols: Vec<Label>) -> Self {
        Self(symbols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    /// Frames needed for a CTC alignment: one per symbol plus a separating
    /// blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        let repeats = self.0.windows(2).filter(|w| w[0] == w[1]).count();
        self.0.len() + repeats
    }
}

/// A `T x D` matrix of per-frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f32>) -> Self {
        Self { frames }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self::new(Array2::zeros((len, dim)))
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.frames.view()
    }
}

/// One labelled example of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: FeatureSequence,
    pub labels: LabelSequence,
}
