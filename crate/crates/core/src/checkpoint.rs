//! Model checkpoints and front-end grafting.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "STANCKPT" | version u32 | manifest length u64 | manifest JSON | tensor blob
//! ```
//!
//! The manifest indexes every tensor by name with its shape, byte offset
//! into the blob and byte length. Tensors are stored row-major in the
//! checkpoint's precision, in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StanModel};
use crate::nn::{ParamTree, Precision, Real};

pub const MAGIC: &[u8; 8] = b"STANCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    F32(ParamTree<f32>),
    F64(ParamTree<f64>),
}

impl Params {
    pub fn precision(&self) -> Precision {
        match self {
            Params::F32(_) => Precision::F32,
            Params::F64(_) => Precision::F64,
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Params::F32(t) => t.names().map(str::to_owned).collect(),
            Params::F64(t) => t.names().map(str::to_owned).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelSpec,
    pub precision: Precision,
    pub tensors: Vec<TensorEntry>,
    pub metrics: BTreeMap<String, f64>,
    /// Hash of the resolved configuration that produced the checkpoint.
    pub config_hash: Option<String>,
    /// Source of each parameter subtree, keyed by name prefix.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: Params,
    pub metrics: BTreeMap<String, f64>,
    pub config_hash: Option<String>,
    pub provenance: BTreeMap<String, String>,
}

fn tree_params<F: Real>(tree: ParamTree<F>) -> Params {
    let any: Box<dyn std::any::Any> = Box::new(tree);
    match any.downcast::<ParamTree<f32>>() {
        Ok(t) => Params::F32(*t),
        Err(any) => Params::F64(*any.downcast::<ParamTree<f64>>().expect("f32 or f64 tree")),
    }
}

fn write_tree<F: Real>(tree: &ParamTree<F>, blob: &mut Vec<u8>, entries: &mut Vec<TensorEntry>) {
    for (name, t) in tree.iter() {
        let offset = blob.len();
        for &v in t.iter() {
            v.write_le(blob);
        }
        entries.push(TensorEntry {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            offset,
            length: blob.len() - offset,
        });
    }
}

fn read_tree<F: Real>(entries: &[TensorEntry], blob: &[u8]) -> Result<ParamTree<F>> {
    let width = F::PRECISION.bytes();
    let mut tree = ParamTree::new();
    let mut expected = 0;
    for e in entries {
        let n: usize = e.shape.iter().product();
        if e.offset != expected || e.length != n * width || e.offset + e.length > blob.len() {
            return Err(Error::Format(format!(
                "tensor `{}` index (offset {}, {} bytes, shape {:?}) does not fit the blob",
                e.name, e.offset, e.length, e.shape
            )));
        }
        let bytes = &blob[e.offset..e.offset + e.length];
        let data: Vec<F> = bytes.chunks_exact(width).map(F::read_le).collect();
        let value = ArrayD::from_shape_vec(IxDyn(&e.shape), data).map_err(|err| Error::Format(err.to_string()))?;
        tree.insert(e.name.clone(), value)
            .map_err(|err| Error::Format(format!("tensor index: {err}")))?;
        expected += e.length;
    }
    if expected != blob.len() {
        return Err(Error::Format(format!(
            "blob holds {} bytes, the index accounts for {expected}",
            blob.len()
        )));
    }
    Ok(tree)
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &StanModel<F>) -> Self {
        Self {
            model: model.spec().clone(),
            params: tree_params(model.params().clone()),
            metrics: BTreeMap::new(),
            config_hash: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.params.precision()
    }

    /// The stored model, converted to `F` if the precisions differ.
    pub fn model<F: Real>(&self) -> Result<StanModel<F>> {
        let tree = match &self.params {
            Params::F32(t) => t.cast::<F>(),
            Params::F64(t) => t.cast::<F>(),
        };
        StanModel::from_params(self.model.clone(), tree)
    }

    fn blob(&self) -> (Vec<u8>, Vec<TensorEntry>) {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        match &self.params {
            Params::F32(t) => write_tree(t, &mut blob, &mut entries),
            Params::F64(t) => write_tree(t, &mut blob, &mut entries),
        }
        (blob, entries)
    }

    /// SHA-256 of the tensor blob, hex encoded.
    pub fn blob_hash(&self) -> String {
        hex::encode(Sha256::digest(self.blob().0))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (blob, tensors) = self.blob();
        let manifest = CheckpointManifest {
            model: self.model.clone(),
            precision: self.precision(),
            tensors,
            metrics: self.metrics.clone(),
            config_hash: self.config_hash.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let manifest_len = read_header(bytes)?;
        let json = &bytes[20..20 + manifest_len];
        let manifest: CheckpointManifest =
            serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
        let blob = &bytes[20 + manifest_len..];
        let params = match manifest.precision {
            Precision::F32 => Params::F32(read_tree(&manifest.tensors, blob)?),
            Precision::F64 => Params::F64(read_tree(&manifest.tensors, blob)?),
        };
        let ckpt = Self {
            model: manifest.model,
            params,
            metrics: manifest.metrics,
            config_hash: manifest.config_hash,
            provenance: manifest.provenance,
        };
        ckpt.model::<f64>().map_err(|e| Error::Format(format!("checkpoint does not match its model: {e}")))?;
        Ok(ckpt)
    }

    /// Reads only the manifest.
    pub fn read_manifest(bytes: &[u8]) -> Result<CheckpointManifest> {
        let n = read_header(bytes)?;
        serde_json::from_slice(&bytes[20..20 + n]).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn read_header(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    usize::try_from(n)
        .ok()
        .filter(|&n| n <= bytes.len() - 20)
        .ok_or_else(|| Error::Format(format!("manifest length {n} exceeds the file")))
}

fn graft_tree<F: Real>(front: &ParamTree<F>, body: &ParamTree<F>) -> Result<ParamTree<F>> {
    let mut out = ParamTree::new();
    for (name, t) in front.subtree("sensor.").chain(body.subtree("classifier.")) {
        out.insert(name, t.clone())?;
    }
    Ok(out)
}

/// Combines the sensor and attention layers of `front` with the
/// classification stack of `body`. No parameter is changed.
pub fn graft(front: &Checkpoint, body: &Checkpoint, front_label: &str, body_label: &str) -> Result<Checkpoint> {
    let front_dim = front.model.merged_dim()?;
    let body_dim = body.model.merged_dim()?;
    if front_dim != body_dim {
        return Err(Error::GraftIncompatible { front_dim, body_dim });
    }
    let spec = ModelSpec {
        architecture: front.model.architecture,
        sensors: front.model.sensors.clone(),
        classifier: body.model.classifier.clone(),
    };
    let params = match (&front.params, &body.params) {
        (Params::F32(f), Params::F32(b)) => Params::F32(graft_tree(f, b)?),
        (Params::F64(f), Params::F64(b)) => Params::F64(graft_tree(f, b)?),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "cannot graft a {:?} front onto a {:?} body",
                front.precision(),
                body.precision()
            )))
        }
    };
    let mut provenance = BTreeMap::new();
    provenance.insert("sensor.".to_owned(), front_label.to_owned());
    provenance.insert("classifier.".to_owned(), body_label.to_owned());
    let grafted = Checkpoint {
        model: spec,
        params,
        metrics: BTreeMap::new(),
        config_hash: None,
        provenance,
    };
    grafted.model::<f64>()?;
    Ok(grafted)
}
