//! Synthetic multi-symbol sequence corpora.
//!
//! Every class owns a fixed smooth signature over the feature dimensions. A
//! sample is a run of silence gaps and symbols; each symbol renders its
//! class signature under a `sin(pi tau)` envelope over a jittered duration,
//! with per-occurrence amplitude and phase jitter and light frame noise.
//! Features are normalized per dimension with statistics of the whole corpus.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, Prng};
use crate::sequence::{FeatureSequence, Label, LabelSequence, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    /// Symbols, excluding the blank.
    pub vocabulary_size: usize,
    pub feature_dim: usize,
    /// Inclusive frame range of one symbol.
    pub symbol_duration: [usize; 2],
    /// Inclusive range of symbols per sequence.
    pub sequence_length: [usize; 2],
    /// Inclusive frame range of the silences before, between and after symbols.
    pub gap_duration: [usize; 2],
    pub train_samples: usize,
    pub test_samples: usize,
    /// Std of the per-occurrence amplitude and phase jitter.
    pub jitter: f64,
    /// Std of white noise added to every frame before normalization.
    pub frame_noise: f64,
    /// Weight of the class-specific pattern against a pattern shared by all
    /// symbols. `1` makes every symbol an independent pattern; small values
    /// make symbols confusable once noise is added.
    pub class_separation: f64,
    /// Draw class signatures from this seed instead of the corpus seed, so
    /// corpora with different samples can share one symbol inventory.
    pub signature_seed: Option<u64>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            vocabulary_size: 11,
            feature_dim: 39,
            symbol_duration: [28, 46],
            sequence_length: [1, 7],
            gap_duration: [2, 8],
            train_samples: 2000,
            test_samples: 500,
            jitter: 0.1,
            frame_noise: 0.1,
            class_separation: 0.2,
            signature_seed: None,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("corpus: {m}")));
        if self.vocabulary_size < 2 {
            return bad("vocabulary_size must be at least 2");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        let ordered = |r: [usize; 2]| r[0] <= r[1];
        if !ordered(self.symbol_duration) || self.symbol_duration[0] < 3 {
            return bad("symbol_duration must be an ordered range starting at 3 frames or more");
        }
        if !ordered(self.sequence_length) || self.sequence_length[0] == 0 {
            return bad("sequence_length must be an ordered range of at least one symbol");
        }
        if !ordered(self.gap_duration) {
            return bad("gap_duration must be an ordered range");
        }
        if self.train_samples == 0 && self.test_samples == 0 {
            return bad("corpus has no samples");
        }
        if !(self.jitter >= 0.0 && self.frame_noise >= 0.0) {
            return bad("jitter and frame_noise must be non-negative");
        }
        if !(self.class_separation > 0.0 && self.class_separation <= 1.0) {
            return bad("class_separation must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Per-dimension affine map applied to every frame: `(x - mean) / std`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Statistics over all frames of all sequences, accumulated in `f64`.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let seqs: Vec<&FeatureSequence> = sequences.into_iter().collect();
        for s in &seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.dim()];
                sq = vec![0.0; s.dim()];
            }
            if s.dim() != sum.len() {
                return Err(Error::Dimension("sequences differ in feature width".into()));
            }
            for row in s.frames.rows() {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptySequence("normalization over zero frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for s in &seqs {
            for row in s.frames.rows() {
                for (k, &v) in row.iter().enumerate() {
                    sq[k] += (v as f64 - mean[k]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &mut FeatureSequence) {
        for mut row in x.frames.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[k]) / self.std[k]) as f32;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub feature_dim: usize,
    pub vocabulary_size: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub normalization: Option<Normalization>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.vocabulary_size + 1
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }
}

/// Per-class pattern parameters, one entry per feature dimension.
#[derive(Clone, Debug)]
struct Signature {
    offset: Vec<f64>,
    amplitude: Vec<f64>,
    cycles: Vec<f64>,
    phase: Vec<f64>,
}

fn signature(d: usize, prng: &mut Prng) -> Signature {
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| prng.uniform_range(lo, hi)).collect() };
    Signature {
        offset: draw(-1.0, 1.0),
        amplitude: draw(0.5, 1.5),
        cycles: draw(0.5, 2.0),
        phase: draw(0.0, 2.0 * PI),
    }
}

/// Class signatures followed by the shared one.
fn signatures(spec: &SyntheticTaskSpec, prng: &mut Prng) -> (Vec<Signature>, Signature) {
    let classes = (0..spec.vocabulary_size).map(|_| signature(spec.feature_dim, prng)).collect();
    (classes, signature(spec.feature_dim, prng))
}

fn render(spec: &SyntheticTaskSpec, (sigs, shared): &(Vec<Signature>, Signature), id: u64, prng: &mut Prng) -> Sample {
    let d = spec.feature_dim;
    let [lmin, lmax] = spec.sequence_length;
    let len = prng.range_inclusive(lmin, lmax);
    let labels: Vec<Label> = (0..len)
        .map(|_| 1 + prng.below(spec.vocabulary_size as u64) as Label)
        .collect();
    let gap = |p: &mut Prng| p.range_inclusive(spec.gap_duration[0], spec.gap_duration[1]);
    let mut rows: Vec<f64> = Vec::new();
    let silence = |rows: &mut Vec<f64>, frames: usize| rows.extend(std::iter::repeat_n(0.0, frames * d));
    silence(&mut rows, gap(prng));
    for &label in &labels {
        let sig = &sigs[label as usize - 1];
        let dur = prng.range_inclusive(spec.symbol_duration[0], spec.symbol_duration[1]);
        let amp_scale = 1.0 + spec.jitter * prng.normal();
        let phase_shift = spec.jitter * prng.normal();
        let sep = spec.class_separation;
        let pattern = |s: &Signature, k: usize, tau: f64| {
            let wave = (2.0 * PI * s.cycles[k] * tau + s.phase[k] + phase_shift).sin();
            s.offset[k] + amp_scale * s.amplitude[k] * wave
        };
        for j in 0..dur {
            let tau = (j as f64 + 0.5) / dur as f64;
            let env = (PI * tau).sin();
            for k in 0..d {
                let mut v = pattern(sig, k, tau);
                if sep < 1.0 {
                    v = sep * v + (1.0 - sep) * pattern(shared, k, tau);
                }
                rows.push(env * v);
            }
        }
        silence(&mut rows, gap(prng));
    }
    for v in &mut rows {
        *v += spec.frame_noise * prng.normal();
    }
    let frames = rows.len() / d;
    let data: Vec<f32> = rows.into_iter().map(|v| v as f32).collect();
    Sample {
        id,
        features: FeatureSequence::new(Array2::from_shape_vec((frames, d), data).expect("rows are whole frames")),
        labels: LabelSequence(labels),
    }
}

/// Builds a normalized corpus. Train sample `j` has id `j` and test sample
/// `j` has id `train_samples + j`; each sample draws from its own stream.
pub fn generate_corpus(spec: &SyntheticTaskSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let sig_seed = spec.signature_seed.unwrap_or(seed);
    let sigs = signatures(spec, &mut Prng::derive(sig_seed, &[domain::CORPUS_SIGNATURES]));
    let train: Vec<Sample> = (0..spec.train_samples)
        .map(|j| render(spec, &sigs, j as u64, &mut Prng::derive(seed, &[domain::CORPUS_TRAIN, j as u64])))
        .collect();
    let test: Vec<Sample> = (0..spec.test_samples)
        .map(|j| {
            let id = (spec.train_samples + j) as u64;
            render(spec, &sigs, id, &mut Prng::derive(seed, &[domain::CORPUS_TEST, j as u64]))
        })
        .collect();
    let mut corpus = Corpus {
        feature_dim: spec.feature_dim,
        vocabulary_size: spec.vocabulary_size,
        train,
        test,
        normalization: None,
    };
    let norm = Normalization::fit(corpus.samples().map(|s| &s.features))?;
    for s in corpus.train.iter_mut().chain(corpus.test.iter_mut()) {
        norm.apply(&mut s.features);
    }
    corpus.normalization = Some(norm);
    Ok(corpus)
}
