//! Adam optimization with early stopping and per-epoch noise augmentation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::{sensor_copies, SensorNoise};
use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::ser;
use crate::model::StanModel;
use crate::nn::{ParamTree, Real};
use crate::noise::WalkConfig;
use crate::rng::{domain, Prng};
use crate::sequence::{FeatureSequence, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub step: u64,
    pub first: ParamTree<F>,
    pub second: ParamTree<F>,
    pub config: AdamConfig,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamTree<F>, config: AdamConfig) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
            config,
        }
    }
}

/// One bias-corrected Adam update. Refuses non-finite gradients and leaves
/// the parameters untouched in that case.
pub fn adam_step<F: Real>(params: &mut ParamTree<F>, grads: &ParamTree<F>, state: &mut AdamState<F>) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.first) {
        return Err(Error::Dimension("gradient or moment layout differs from parameters".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in `{name}` at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
    let correct1 = F::lit(1.0 - c.beta1.powi(t));
    let correct2 = F::lit(1.0 - c.beta2.powi(t));
    let (lr, eps) = (F::lit(c.learning_rate), F::lit(c.epsilon));
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.slice(id);
        let m = state.first.slice_mut(id);
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (F::one() - b1) * gi;
        }
        let v = state.second.slice_mut(id);
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (F::one() - b2) * gi * gi;
        }
        let (m, v) = (state.first.slice(id), state.second.slice(id));
        for ((p, &mi), &vi) in params.slice_mut(id).iter_mut().zip(m).zip(v) {
            let m_hat = mi / correct1;
            let v_hat = vi / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Training-time corruption. Every sensor gets its own walk unless
/// `independent` is false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainNoise {
    /// `sigma_max == 0` trains on clean copies.
    #[serde(default)]
    pub walk: WalkConfig,
    #[serde(default = "default_true")]
    pub independent: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub validation_fraction: f64,
    /// `None` trains on clean copies.
    pub noise: Option<TrainNoise>,
    /// Validation SER is computed every this many epochs.
    pub eval_every: usize,
    /// Use at most this many training samples (after removing infeasible ones).
    pub max_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            clip_norm: Some(5.0),
            validation_fraction: 0.1,
            noise: Some(TrainNoise {
                walk: WalkConfig::default(),
                independent: true,
            }),
            eval_every: 1,
            max_samples: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train: {m}")));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience >= self.max_epochs {
            return bad(format!("patience {} must be below max_epochs {}", self.patience, self.max_epochs));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.validation_fraction == 0.0 {
            return bad("validation_fraction must lie in (0, 1)".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0 || c.is_nan()) {
            return bad("clip_norm must be positive".into());
        }
        if let Some(n) = self.noise.as_ref().filter(|n| n.walk.sigma_max != 0.0) {
            n.walk.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_ser: Option<f64>,
    pub best: bool,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: StanModel<F>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub excluded_infeasible: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
}

impl<F> TrainOutcome<F> {
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

fn noise_mode(config: &TrainConfig) -> (SensorNoise<'_>, bool) {
    match &config.noise {
        Some(n) => (SensorNoise::Walk(&n.walk), n.independent),
        None => (SensorNoise::Clean, true),
    }
}

fn to_model_inputs<F: Real>(copies: &[FeatureSequence]) -> Vec<ndarray::Array2<F>> {
    copies.iter().map(|c| c.frames.mapv(|v| F::lit(v as f64))).collect()
}

/// Trains `model` on `samples`. A held-out split, carved with the seed,
/// drives early stopping; its corrupted copies are drawn once and frozen,
/// while training copies are redrawn every epoch.
///
/// When `log` is given, each epoch's record is written to it as one JSON
/// line as soon as the epoch ends.
pub fn train<F: Real>(
    mut model: StanModel<F>,
    samples: &[Sample],
    config: &TrainConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let mut usable: Vec<&Sample> = samples
        .iter()
        .filter(|s| !s.features.is_empty() && s.features.len() >= s.labels.min_frames())
        .collect();
    let excluded = samples.len() - usable.len();
    if let Some(max) = config.max_samples {
        usable.truncate(max);
    }
    if usable.len() < 2 {
        let infeasible = samples.iter().find(|s| s.features.len() < s.labels.min_frames().max(1));
        if let (Some(s), true) = (infeasible, excluded > 0) {
            return Err(Error::Infeasible {
                labels: s.labels.len(),
                required: s.labels.min_frames().max(1),
                frames: s.features.len(),
            });
        }
        return Err(Error::Input(format!(
            "need at least two feasible training samples, have {} ({excluded} infeasible)",
            usable.len()
        )));
    }
    Prng::derive(seed, &[domain::SPLIT]).shuffle(&mut usable);
    let n_val = ((usable.len() as f64 * config.validation_fraction).round() as usize).clamp(1, usable.len() - 1);
    let (validation, training) = usable.split_at(n_val);

    let sensors = model.num_sensors();
    let (noise, independent) = noise_mode(config);
    let frozen: Vec<Vec<ndarray::Array2<F>>> = validation
        .iter()
        .map(|s| {
            let (copies, _) = sensor_copies(&s.features, sensors, noise, seed, &[domain::VALIDATION_NOISE, s.id], independent)?;
            Ok(to_model_inputs(&copies))
        })
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(model.params(), config.optimizer);
    let mut grads = model.params().zeros_like();
    let mut batch_grads = model.params().zeros_like();
    let mut best = model.params().clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..training.len()).collect();

    for epoch in 1..=config.max_epochs {
        Prng::derive(seed, &[domain::SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            batch_grads.fill_zero();
            for &idx in chunk {
                let s = training[idx];
                let path = [domain::TRAIN_NOISE, epoch as u64, s.id];
                let (copies, _) = sensor_copies(&s.features, sensors, noise, seed, &path, independent)?;
                let inputs = to_model_inputs::<F>(&copies);
                let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
                grads.fill_zero();
                let nll = model.loss_and_grad(&views, &s.labels, &mut grads)?;
                if !nll.is_finite() {
                    return Err(Error::Numeric(format!("loss {nll} on sample {} in epoch {epoch}", s.id)));
                }
                total += nll;
                batch_grads.add_assign(&grads);
            }
            batch_grads.scale(F::lit(1.0 / chunk.len() as f64));
            let norm = batch_grads.global_norm();
            norm_sum += norm;
            batches += 1;
            if let Some(limit) = config.clip_norm {
                if norm > limit {
                    batch_grads.scale(F::lit(limit / norm));
                }
            }
            adam_step(model.params_mut(), &batch_grads, &mut adam)?;
        }

        let mut val_loss = 0.0;
        let mut hyps = Vec::with_capacity(validation.len());
        for (s, inputs) in validation.iter().zip(&frozen) {
            let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
            let out = model.forward(&views)?;
            val_loss += crate::ctc::ctc_loss(out.logits.view(), &s.labels)?.neg_log_likelihood;
            hyps.push(greedy_decode(out.logits.view()));
        }
        val_loss /= validation.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss {val_loss} in epoch {epoch}")));
        }
        let val_ser = if epoch % config.eval_every == 0 {
            let refs: Vec<_> = validation.iter().map(|s| s.labels.clone()).collect();
            Some(ser(&refs, &hyps)?)
        } else {
            None
        };
        let improved = val_loss < best_loss;
        if improved {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / training.len() as f64,
            validation_loss: val_loss,
            validation_ser: val_ser,
            best: improved,
            grad_norm: norm_sum / batches as f64,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        records.push(record);
        if since_best > config.patience {
            break;
        }
    }

    *model.params_mut() = best;
    Ok(TrainOutcome {
        model,
        log: records,
        best_epoch,
        best_validation_loss: best_loss,
        excluded_infeasible: excluded,
        train_samples: training.len(),
        validation_samples: validation.len(),
    })
}
