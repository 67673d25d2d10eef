use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

use super::Real;
use crate::error::{Error, Result};
use crate::rng::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
}

/// Name, shape and initializer of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn matrix(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![rows, cols],
            init: ParamInit::Glorot {
                fan_in: rows,
                fan_out: cols,
            },
        }
    }

    /// `[k, k, c_in, c_out]` convolution kernel.
    pub fn kernel(name: impl Into<String>, k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![k, k, c_in, c_out],
            init: ParamInit::Glorot {
                fan_in: k * k * c_in,
                fan_out: k * k * c_out,
            },
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![len],
            init: ParamInit::Zeros,
        }
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors in registration order. Gradients live in a second tree
/// built by [`ParamTree::zeros_like`], so ids are valid in both.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<F> {
    names: Vec<String>,
    tensors: Vec<ArrayD<F>>,
    index: BTreeMap<String, usize>,
}

impl<F> Default for ParamTree<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<F: Real> ParamTree<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub(crate) fn expect_id(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, F> {
        self.tensors[id.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is a matrix")
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, F> {
        self.tensors[id.0]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("parameter is a matrix")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, F> {
        self.tensors[id.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("parameter is a vector")
    }

    pub fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, F> {
        self.tensors[id.0]
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("parameter is a vector")
    }

    /// Contiguous row-major data of a parameter.
    pub fn slice(&self, id: ParamId) -> &[F] {
        self.tensors[id.0].as_slice().expect("parameters are contiguous")
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [F] {
        self.tensors[id.0]
            .as_slice_mut()
            .expect("parameters are contiguous")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Tree with identical names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(F::zero());
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// `self += other`, in registration order.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Euclidean norm over all elements, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// First parameter holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subtree<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a ArrayD<F>)> + 'a {
        self.iter().filter(move |(n, _)| n.starts_with(prefix))
    }

    /// Copies every tensor under `prefix` from `source`; names and shapes must match.
    pub fn copy_subtree_from(&mut self, source: &Self, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, value) in source.subtree(prefix) {
            let id = self.expect_id(name)?;
            let dst = self.get_mut(id);
            if dst.shape() != value.shape() {
                return Err(Error::Dimension(format!(
                    "`{name}`: {:?} vs {:?}",
                    dst.shape(),
                    value.shape()
                )));
            }
            dst.assign(value);
            copied += 1;
        }
        Ok(copied)
    }

    pub fn to_f64(&self) -> ParamTree<f64> {
        self.cast()
    }

    pub fn cast<G: Real>(&self) -> ParamTree<G> {
        ParamTree {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|v| G::lit(v.f64())))
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Allocates and initializes a tree from specs, drawing matrices in spec order.
pub fn init_params<F: Real>(specs: &[ParamSpec], prng: &mut Prng) -> Result<ParamTree<F>> {
    let mut tree = ParamTree::new();
    for spec in specs {
        let n = spec.elements();
        let data: Vec<F> = match spec.init {
            ParamInit::Zeros => vec![F::zero(); n],
            ParamInit::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..n)
                    .map(|_| F::lit(prng.uniform_range(-limit, limit)))
                    .collect()
            }
        };
        let value = ArrayD::from_shape_vec(IxDyn(&spec.shape), data)
            .map_err(|e| Error::Dimension(format!("`{}`: {e}", spec.name)))?;
        tree.insert(spec.name.clone(), value)?;
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::matrix("layer.W", 200, 300),
            ParamSpec::bias("layer.b", 300),
        ]
    }

    #[test]
    fn init_is_deterministic() {
        let a: ParamTree<f64> = init_params(&specs(), &mut Prng::new(5)).unwrap();
        let b: ParamTree<f64> = init_params(&specs(), &mut Prng::new(5)).unwrap();
        assert_eq!(a, b);
        let c: ParamTree<f64> = init_params(&specs(), &mut Prng::new(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_start_at_zero() {
        let t: ParamTree<f32> = init_params(&specs(), &mut Prng::new(1)).unwrap();
        assert!(t.by_name("layer.b").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_moments() {
        let t: ParamTree<f64> = init_params(&specs(), &mut Prng::new(2)).unwrap();
        let w = t.by_name("layer.W").unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // U(-l, l) has std l / sqrt(3) = sqrt(2 / (fan_in + fan_out)).
        let expected = (2.0f64 / 500.0).sqrt();
        assert!((std - expected).abs() / expected < 0.1, "{std} vs {expected}");
        let limit = (6.0f64 / 500.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut t = ParamTree::<f64>::new();
        t.insert("a", ArrayD::zeros(IxDyn(&[2]))).unwrap();
        assert!(t.insert("a", ArrayD::zeros(IxDyn(&[2]))).is_err());
    }

    #[test]
    fn zeros_like_matches_layout() {
        let t: ParamTree<f32> = init_params(&specs(), &mut Prng::new(1)).unwrap();
        let g = t.zeros_like();
        assert!(t.same_layout(&g));
        assert_eq!(g.global_norm(), 0.0);
    }
}
