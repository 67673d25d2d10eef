//! On-disk feature files and corpus directories.
//!
//! A feature file is a little-endian header followed by a row-major `T x D`
//! `f32` payload:
//!
//! ```text
//! magic "STANFEAT" | version u32 | D u32 | T u32 | sample id u64 |
//! normalized u8 | L u32 | L x label u32 | T*D x f32
//! ```
//!
//! A corpus directory holds one file per sample plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Normalization};
use crate::error::{Error, Result};
use crate::sequence::{FeatureSequence, LabelSequence, Sample};

pub const MAGIC: &[u8; 8] = b"STANFEAT";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 4 + 4 + 8 + 1 + 4;

pub fn encode_sample(sample: &Sample, normalized: bool) -> Result<Vec<u8>> {
    let (t, d) = sample.features.frames.dim();
    let narrow = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit the header")))
    };
    let mut out = Vec::with_capacity(HEADER + 4 * (sample.labels.len() + t * d));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&narrow(d, "feature width")?.to_le_bytes());
    out.extend_from_slice(&narrow(t, "frame count")?.to_le_bytes());
    out.extend_from_slice(&sample.id.to_le_bytes());
    out.push(u8::from(normalized));
    out.extend_from_slice(&narrow(sample.labels.len(), "label count")?.to_le_bytes());
    for &l in sample.labels.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &v in sample.features.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated feature file while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a feature file; returns the sample and its normalization flag.
pub fn decode_sample(bytes: &[u8]) -> Result<(Sample, bool)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a feature file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let d = r.u32("feature width")? as usize;
    let t = r.u32("frame count")? as usize;
    let id = u64::from_le_bytes(r.take(8, "sample id")?.try_into().expect("8 bytes"));
    let normalized = match r.take(1, "normalization flag")?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("normalization flag {other}"))),
    };
    let l = r.u32("label count")? as usize;
    let labels = (0..l).map(|_| r.u32("labels")).collect::<Result<Vec<_>>>()?;
    let payload = &bytes[r.pos..];
    let expected = t.checked_mul(d).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(Error::Format(format!(
            "payload has {} bytes but header declares {t} x {d} frames",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let frames = Array2::from_shape_vec((t, d), data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((
        Sample {
            id,
            features: FeatureSequence::new(frames),
            labels: LabelSequence(labels),
        },
        normalized,
    ))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_container(path: &Path, sample: &Sample, normalized: bool) -> Result<()> {
    write_atomic(path, &encode_sample(sample, normalized)?)
}

pub fn read_container(path: &Path) -> Result<(Sample, bool)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub id: u64,
    pub frames: usize,
    pub labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub feature_dim: usize,
    pub vocabulary_size: usize,
    pub normalization: Option<Normalization>,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes every sample and a manifest into `dir`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<CorpusManifest> {
    let normalized = corpus.normalization.is_some();
    let mut samples = Vec::new();
    for (split, set) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        let sub = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for s in set.iter() {
            let file = format!("{sub}/{:08}.feat", s.id);
            write_container(&dir.join(&file), s, normalized)?;
            samples.push(ManifestEntry {
                file,
                split,
                id: s.id,
                frames: s.features.len(),
                labels: s.labels.len(),
            });
        }
    }
    let manifest = CorpusManifest {
        format_version: VERSION,
        feature_dim: corpus.feature_dim,
        vocabulary_size: corpus.vocabulary_size,
        normalization: corpus.normalization.clone(),
        samples,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut corpus = Corpus {
        feature_dim: manifest.feature_dim,
        vocabulary_size: manifest.vocabulary_size,
        train: Vec::new(),
        test: Vec::new(),
        normalization: manifest.normalization,
    };
    for entry in &manifest.samples {
        let (sample, _) = read_container(&dir.join(&entry.file))?;
        if sample.features.dim() != corpus.feature_dim {
            return Err(Error::Format(format!(
                "{}: {} features per frame, manifest says {}",
                entry.file,
                sample.features.dim(),
                corpus.feature_dim
            )));
        }
        if let Some(&bad) = sample.labels.as_slice().iter().find(|&&l| l == 0 || l as usize > corpus.vocabulary_size) {
            return Err(Error::Format(format!("{}: label {bad} outside the vocabulary", entry.file)));
        }
        match entry.split {
            Split::Train => corpus.train.push(sample),
            Split::Test => corpus.test.push(sample),
        }
    }
    Ok(corpus)
}
