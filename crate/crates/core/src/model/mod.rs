//! Multi-sensor models: per-sensor transformation and attention layers, a
//! softmax sensor merge, and a recurrent classifier with an affine output.
//!
//! Parameters live under `sensor.<i>.transform.*`, `sensor.<i>.attention.*`
//! and `classifier.*`. Sensors in a share group bind to the tensors of the
//! group's first member, so their gradients accumulate into one set.

mod count;
pub mod roster;
mod spec;
mod trace;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::conv::{CnnStack, CnnTrace};
use crate::nn::dense::{Activation, Dense};
use crate::nn::gru::{Gru, GruTrace, RnnStack, RnnTrace};
use crate::nn::ops::{softmax_backward, softmax_unchecked};
use crate::nn::{init_params, ParamSpec, ParamTree, Real};
use crate::rng::Prng;
use crate::sequence::FeatureSequence;

pub use count::{count_params, CountConvention};
pub use spec::{Architecture, AttentionSpec, ClassifierSpec, Modality, ModelSpec, SensorSpec, Transform};
pub use trace::{trace_attention, AttentionTrace};

#[derive(Clone, Debug)]
enum TransformLayer {
    Identity,
    Dense(Dense),
    Cnn(CnnStack),
}

#[derive(Clone, Debug)]
struct AttentionLayer {
    gru: Gru,
    score: Dense,
}

#[derive(Clone, Debug)]
struct SensorLayers {
    transform: TransformLayer,
    attention: Option<AttentionLayer>,
    input_dim: usize,
}

/// Replaces the attention computed by the model at every frame.
#[derive(Clone, Debug)]
pub enum AttentionOverride<F> {
    /// `T x N` raw scores, softmaxed as usual.
    Scores(Array2<F>),
    /// `T x N` merge weights used verbatim.
    Weights(Array2<F>),
}

#[derive(Clone, Debug)]
pub struct StanForwardResult<F> {
    /// `T x classes`.
    pub logits: Array2<F>,
    /// `T x N` merge weights; `None` unless the model merges by attention.
    pub attention: Option<Array2<F>>,
    /// `T x N` raw scores behind `attention`.
    pub scores: Option<Array2<F>>,
    /// `T x merged_dim` classifier input.
    pub merged: Array2<F>,
}

enum TransformTrace<F> {
    Identity,
    Dense { y: Array2<F> },
    Cnn(CnnTrace<F>),
}

struct SensorTape<F> {
    input: Array2<F>,
    transformed: Array2<F>,
    transform: TransformTrace<F>,
    attention: Option<(GruTrace<F>, Array2<F>)>,
}

/// Forward activations kept for the reverse pass.
pub struct Tape<F> {
    sensors: Vec<SensorTape<F>>,
    attention_fixed: bool,
    classifier: RnnTrace<F>,
    result: StanForwardResult<F>,
}

impl<F> Tape<F> {
    pub fn result(&self) -> &StanForwardResult<F> {
        &self.result
    }

    pub fn into_result(self) -> StanForwardResult<F> {
        self.result
    }
}

#[derive(Clone, Debug)]
pub struct StanModel<F> {
    spec: ModelSpec,
    params: ParamTree<F>,
    sensors: Vec<SensorLayers>,
    classifier: RnnStack,
    output: Dense,
}

fn sensor_prefix(i: usize) -> String {
    format!("sensor.{i}")
}

/// Specs of every tensor the model owns, in initialization order.
pub fn param_specs(spec: &ModelSpec) -> Result<Vec<ParamSpec>> {
    spec.validate()?;
    let mut specs = Vec::new();
    for (i, s) in spec.sensors.iter().enumerate() {
        if spec.weight_owner(i) != i {
            continue;
        }
        let prefix = sensor_prefix(i);
        let d_in = s.modality.input_dim();
        match s.transform {
            Transform::Identity => {}
            Transform::Dense { units } => specs.extend(Dense::param_specs(&format!("{prefix}.transform.dense"), d_in, units)),
            Transform::Cnn { features, layers, kernel } => {
                let dims = s.image_dims().expect("validated image modality");
                specs.extend(CnnStack::param_specs(&format!("{prefix}.transform.cnn"), dims, layers, features, kernel));
            }
        }
        if let Some(att) = s.attention {
            let d = s.transformed_dim()?;
            specs.extend(Gru::param_specs(&format!("{prefix}.attention.gru"), d, att.hidden));
            specs.extend(Dense::param_specs(&format!("{prefix}.attention.score"), att.hidden, 1));
        }
    }
    let c = &spec.classifier;
    specs.extend(RnnStack::param_specs("classifier.rnn", spec.merged_dim()?, &c.layers, c.bidirectional));
    let rnn_out = c.layers.last().copied().unwrap_or(0) * if c.bidirectional { 2 } else { 1 };
    specs.extend(Dense::param_specs("classifier.output", rnn_out, c.output_dim));
    Ok(specs)
}

/// Initializes a fresh model.
pub fn build_model<F: Real>(spec: &ModelSpec, prng: &mut Prng) -> Result<StanModel<F>> {
    let params = init_params(&param_specs(spec)?, prng)?;
    StanModel::from_params(spec.clone(), params)
}

fn check_finite<F: Real>(what: &str, x: &Array2<F>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

impl<F: Real> StanModel<F> {
    /// Binds an existing parameter tree, e.g. one loaded from a checkpoint.
    pub fn from_params(spec: ModelSpec, params: ParamTree<F>) -> Result<Self> {
        spec.validate()?;
        let expected = param_specs(&spec)?;
        if expected.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "model expects {} tensors, parameter tree has {}",
                expected.len(),
                params.len()
            )));
        }
        for ps in &expected {
            let t = params
                .by_name(&ps.name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{}`", ps.name)))?;
            if t.shape() != ps.shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    ps.name,
                    t.shape(),
                    ps.shape
                )));
            }
        }
        let mut sensors = Vec::with_capacity(spec.sensors.len());
        for (i, s) in spec.sensors.iter().enumerate() {
            let prefix = sensor_prefix(spec.weight_owner(i));
            let transform = match s.transform {
                Transform::Identity => TransformLayer::Identity,
                Transform::Dense { .. } => {
                    TransformLayer::Dense(Dense::bind(&params, &format!("{prefix}.transform.dense"), Activation::Tanh)?)
                }
                Transform::Cnn { layers, .. } => TransformLayer::Cnn(CnnStack::bind(
                    &params,
                    &format!("{prefix}.transform.cnn"),
                    s.image_dims().expect("validated image modality"),
                    layers,
                )?),
            };
            let attention = match s.attention {
                Some(_) => Some(AttentionLayer {
                    gru: Gru::bind(&params, &format!("{prefix}.attention.gru"))?,
                    score: Dense::bind(&params, &format!("{prefix}.attention.score"), Activation::Identity)?,
                }),
                None => None,
            };
            sensors.push(SensorLayers {
                transform,
                attention,
                input_dim: s.modality.input_dim(),
            });
        }
        let c = &spec.classifier;
        let classifier = RnnStack::bind(&params, "classifier.rnn", c.layers.len(), c.bidirectional)?;
        let output = Dense::bind(&params, "classifier.output", Activation::Identity)?;
        Ok(Self {
            spec,
            params,
            sensors,
            classifier,
            output,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamTree<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTree<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamTree<F> {
        self.params
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classifier.output_dim
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<G: Real>(&self) -> StanModel<G> {
        StanModel::from_params(self.spec.clone(), self.params.cast())
            .expect("layout is unchanged by a cast")
    }

    pub fn forward(&self, inputs: &[ArrayView2<F>]) -> Result<StanForwardResult<F>> {
        Ok(self.forward_with_tape(inputs, None)?.into_result())
    }

    /// Converts `f32` feature sequences to the model precision and runs the
    /// forward pass.
    pub fn forward_features(&self, inputs: &[FeatureSequence]) -> Result<StanForwardResult<F>> {
        let converted = self.convert(inputs);
        let views: Vec<_> = converted.iter().map(|x| x.view()).collect();
        self.forward(&views)
    }

    pub fn convert(&self, inputs: &[FeatureSequence]) -> Vec<Array2<F>> {
        inputs
            .iter()
            .map(|x| x.frames.mapv(|v| F::lit(v as f64)))
            .collect()
    }

    fn check_inputs(&self, inputs: &[ArrayView2<F>]) -> Result<usize> {
        if inputs.len() != self.sensors.len() {
            return Err(Error::Input(format!(
                "model has {} sensors but {} inputs were given",
                self.sensors.len(),
                inputs.len()
            )));
        }
        let frames = inputs[0].nrows();
        if frames == 0 {
            return Err(Error::EmptySequence("sensor input has no frames"));
        }
        for (i, (x, s)) in inputs.iter().zip(&self.sensors).enumerate() {
            if x.nrows() != frames {
                return Err(Error::Input(format!(
                    "sensor {i} has {} frames, sensor 0 has {frames}",
                    x.nrows()
                )));
            }
            if x.ncols() != s.input_dim {
                return Err(Error::Input(format!(
                    "sensor {i} frames have {} features, expected {}",
                    x.ncols(),
                    s.input_dim
                )));
            }
        }
        Ok(frames)
    }

    pub fn forward_with_tape(
        &self,
        inputs: &[ArrayView2<F>],
        attention_override: Option<&AttentionOverride<F>>,
    ) -> Result<Tape<F>> {
        let frames = self.check_inputs(inputs)?;
        let p = &self.params;
        let n = self.sensors.len();
        let mut tapes = Vec::with_capacity(n);
        for (x, layers) in inputs.iter().zip(&self.sensors) {
            let (transformed, transform) = match &layers.transform {
                TransformLayer::Identity => (x.to_owned(), TransformTrace::Identity),
                TransformLayer::Dense(d) => {
                    let y = d.forward(p, *x)?;
                    (y.clone(), TransformTrace::Dense { y })
                }
                TransformLayer::Cnn(c) => {
                    let tr = c.forward(p, *x)?;
                    (tr.output.clone(), TransformTrace::Cnn(tr))
                }
            };
            tapes.push(SensorTape {
                input: x.to_owned(),
                transformed,
                transform,
                attention: None,
            });
        }

        let (merged, attention, scores) = match self.spec.architecture {
            Architecture::Single => (tapes[0].transformed.clone(), None, None),
            Architecture::Concat => {
                let views: Vec<_> = tapes.iter().map(|t| t.transformed.view()).collect();
                let joined = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Dimension(e.to_string()))?;
                (joined, None, None)
            }
            Architecture::Stan => {
                let mut scores = Array2::<F>::zeros((frames, n));
                if attention_override.is_none() {
                    for (i, (tape, layers)) in tapes.iter_mut().zip(&self.sensors).enumerate() {
                        let att = layers.attention.as_ref().expect("stan sensors carry attention");
                        let gt = att.gru.forward_seq(p, tape.transformed.view())?;
                        let z = att.score.forward(p, gt.output())?;
                        scores.column_mut(i).assign(&z.column(0));
                        tape.attention = Some((gt, z));
                    }
                }
                let weights = match attention_override {
                    Some(AttentionOverride::Weights(w)) => {
                        check_override(w, frames, n)?;
                        w.clone()
                    }
                    other => {
                        if let Some(AttentionOverride::Scores(z)) = other {
                            check_override(z, frames, n)?;
                            scores.assign(z);
                        }
                        check_finite("attention scores", &scores)?;
                        let mut w = Array2::zeros((frames, n));
                        for (t, row) in scores.rows().into_iter().enumerate() {
                            let a = softmax_unchecked(row.as_slice().expect("contiguous rows"));
                            w.row_mut(t).iter_mut().zip(a).for_each(|(o, v)| *o = v);
                        }
                        w
                    }
                };
                let dim = tapes[0].transformed.ncols();
                let mut merged = Array2::<F>::zeros((frames, dim));
                for t in 0..frames {
                    let mut out = merged.row_mut(t);
                    for (i, tape) in tapes.iter().enumerate() {
                        out.scaled_add(weights[[t, i]], &tape.transformed.row(t));
                    }
                }
                (merged, Some(weights), Some(scores))
            }
        };

        let classifier = self.classifier.forward(p, merged.view())?;
        let logits = self.output.forward(p, classifier.output.view())?;
        check_finite("logits", &logits)?;
        Ok(Tape {
            sensors: tapes,
            attention_fixed: attention_override.is_some(),
            classifier,
            result: StanForwardResult {
                logits,
                attention,
                scores,
                merged,
            },
        })
    }

    /// Accumulates parameter gradients for `d_logits` into `grads`, which must
    /// have the layout of [`Self::params`].
    pub fn backward(&self, tape: &Tape<F>, d_logits: ArrayView2<F>, grads: &mut ParamTree<F>) {
        let p = &self.params;
        let result = &tape.result;
        let d_rnn = self
            .output
            .backward(p, grads, tape.classifier.output.view(), result.logits.view(), d_logits);
        let d_merged = self.classifier.backward(p, grads, &tape.classifier, d_rnn.view());

        let n = self.sensors.len();
        let mut d_transformed: Vec<Array2<F>> = Vec::with_capacity(n);
        match self.spec.architecture {
            Architecture::Single => d_transformed.push(d_merged),
            Architecture::Concat => {
                let mut col = 0;
                for tape in &tape.sensors {
                    let w = tape.transformed.ncols();
                    d_transformed.push(d_merged.slice(s![.., col..col + w]).to_owned());
                    col += w;
                }
            }
            Architecture::Stan => {
                let weights = result.attention.as_ref().expect("stan forward records weights");
                let frames = d_merged.nrows();
                let mut d_weights = Array2::<F>::zeros((frames, n));
                for (i, st) in tape.sensors.iter().enumerate() {
                    let mut d = d_merged.clone();
                    for (t, mut row) in d.rows_mut().into_iter().enumerate() {
                        row *= weights[[t, i]];
                        d_weights[[t, i]] = d_merged.row(t).dot(&st.transformed.row(t));
                    }
                    d_transformed.push(d);
                }
                if !tape.attention_fixed {
                    let mut d_scores = Array2::<F>::zeros((frames, n));
                    for t in 0..frames {
                        let a = weights.row(t).to_vec();
                        let da = d_weights.row(t).to_vec();
                        let dz = softmax_backward(&a, &da);
                        d_scores.row_mut(t).iter_mut().zip(dz).for_each(|(o, v)| *o = v);
                    }
                    for (i, (st, layers)) in tape.sensors.iter().zip(&self.sensors).enumerate() {
                        let att = layers.attention.as_ref().expect("stan sensors carry attention");
                        let (gt, z) = st.attention.as_ref().expect("attention was computed");
                        let dz = d_scores.slice(s![.., i..i + 1]);
                        let dh = att.score.backward(p, grads, gt.output(), z.view(), dz);
                        let dt = att.gru.backward_seq(p, grads, gt, dh.view());
                        d_transformed[i] += &dt;
                    }
                }
            }
        }

        for ((st, layers), d) in tape.sensors.iter().zip(&self.sensors).zip(&d_transformed) {
            match (&layers.transform, &st.transform) {
                (TransformLayer::Dense(dense), TransformTrace::Dense { y }) => {
                    dense.backward(p, grads, st.input.view(), y.view(), d.view());
                }
                (TransformLayer::Cnn(cnn), TransformTrace::Cnn(tr)) => {
                    cnn.backward(p, grads, tr, d.view());
                }
                _ => {}
            }
        }
    }

    /// CTC negative log-likelihood of one sample; accumulates its gradient
    /// into `grads`.
    pub fn loss_and_grad(
        &self,
        inputs: &[ArrayView2<F>],
        labels: &crate::sequence::LabelSequence,
        grads: &mut ParamTree<F>,
    ) -> Result<f64> {
        let tape = self.forward_with_tape(inputs, None)?;
        let ctc = crate::ctc::ctc_loss(tape.result.logits.view(), labels)?;
        self.backward(&tape, ctc.logit_gradients.view(), grads);
        Ok(ctc.neg_log_likelihood)
    }

    /// CTC negative log-likelihood without gradients.
    pub fn loss(&self, inputs: &[ArrayView2<F>], labels: &crate::sequence::LabelSequence) -> Result<f64> {
        let out = self.forward(inputs)?;
        Ok(crate::ctc::ctc_loss(out.logits.view(), labels)?.neg_log_likelihood)
    }
}

fn check_override<F>(x: &Array2<F>, frames: usize, n: usize) -> Result<()> {
    if x.dim() != (frames, n) {
        return Err(Error::Dimension(format!(
            "attention override is {:?}, expected ({frames}, {n})",
            x.dim()
        )));
    }
    Ok(())
}
