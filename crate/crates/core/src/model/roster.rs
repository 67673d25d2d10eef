//! Reference model configurations: the five audio-digit models and the
//! audio/video models with dense and convolutional transforms, together with
//! their published parameter counts.

use super::spec::{ClassifierSpec, Modality, ModelSpec, SensorSpec, Transform};

#[derive(Clone, Debug)]
pub struct RosterEntry {
    pub name: &'static str,
    pub spec: ModelSpec,
    /// Published count, when one is known for this exact configuration.
    pub reference: Option<usize>,
}

const AUDIO_DIM: usize = 39;

fn entry(name: &'static str, spec: ModelSpec, reference: Option<usize>) -> RosterEntry {
    RosterEntry { name, spec, reference }
}

/// Identity transforms, (20)-unit attention, a (150,100) GRU classifier and
/// 12 output classes.
pub fn digits() -> Vec<RosterEntry> {
    let classifier = ClassifierSpec {
        layers: vec![150, 100],
        bidirectional: false,
        output_dim: 12,
    };
    vec![
        entry("Single Audio", ModelSpec::single(AUDIO_DIM, classifier.clone()), Some(162_262)),
        entry("Double Audio STAN", ModelSpec::stan(2, AUDIO_DIM, 20, classifier.clone()), Some(169_544)),
        entry("Triple Audio STAN", ModelSpec::stan(3, AUDIO_DIM, 20, classifier.clone()), Some(173_185)),
        entry("Double Audio Concat", ModelSpec::concat(2, AUDIO_DIM, classifier.clone()), Some(179_812)),
        entry("Triple Audio Concat", ModelSpec::concat(3, AUDIO_DIM, classifier), Some(197_362)),
    ]
}

/// Side length of the grey-level frames used for the video rows; the
/// published frame size is unknown, so those rows carry no reference count.
pub const VIDEO_SIDE: usize = 48;

/// (50)-unit tanh dense transforms or a 3x[5x5x8 conv + pool] CNN, (20)- or
/// (150)-unit attention, a (200,200) bidirectional GRU classifier and 52
/// output classes.
pub fn audio_visual() -> Vec<RosterEntry> {
    let classifier = ClassifierSpec {
        layers: vec![200, 200],
        bidirectional: true,
        output_dim: 52,
    };
    let dense = Transform::Dense { units: 50 };
    let video = SensorSpec {
        modality: Modality::Image {
            height: VIDEO_SIDE,
            width: VIDEO_SIDE,
            channels: 1,
        },
        transform: Transform::cnn(),
        attention: None,
        share_group: None,
    };
    let single_video = ModelSpec {
        architecture: super::Architecture::Single,
        sensors: vec![video.clone()],
        classifier: classifier.clone(),
    };
    let double_video = ModelSpec {
        architecture: super::Architecture::Stan,
        sensors: vec![video.with_attention(150); 2],
        classifier: classifier.clone(),
    }
    .shared();
    vec![
        entry(
            "Single Audio",
            ModelSpec::single(AUDIO_DIM, classifier.clone()).with_transform(dense),
            Some(1_030_012),
        ),
        entry(
            "Double Audio STAN",
            ModelSpec::stan(2, AUDIO_DIM, 20, classifier.clone()).with_transform(dense),
            Some(1_056_654),
        ),
        entry(
            "Triple Audio STAN",
            ModelSpec::stan(3, AUDIO_DIM, 20, classifier.clone()).with_transform(dense),
            Some(1_062_955),
        ),
        entry(
            "Double Audio Concat",
            ModelSpec::concat(2, AUDIO_DIM, classifier.clone()).with_transform(dense),
            Some(1_108_052),
        ),
        entry(
            "Triple Audio Concat",
            ModelSpec::concat(3, AUDIO_DIM, classifier).with_transform(dense),
            Some(1_170_052),
        ),
        entry("Single Video", single_video, None),
        entry("Double Video STAN", double_video, None),
    ]
}
