//! Test-set evaluation under clean, random-walk and scripted noise, and
//! analysis of how attention follows the noise.

use serde::{Deserialize, Serialize};

use crate::augment::{average, sensor_copies, SensorNoise};
use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::{score, MetricReport};
use crate::model::{AttentionTrace, StanModel};
use crate::nn::Real;
use crate::noise::{NoiseProfileSpec, WalkConfig};
use crate::rng::domain;
use crate::sequence::{LabelSequence, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum Condition {
    /// Every sensor sees the same clean input.
    Clean,
    /// Independent random-walk corruption per sensor.
    Noisy(WalkConfig),
    /// One scripted profile per sensor.
    Profile { profiles: Vec<NoiseProfileSpec> },
}

impl Condition {
    fn noise(&self) -> SensorNoise<'_> {
        match self {
            Condition::Clean => SensorNoise::Clean,
            Condition::Noisy(w) => SensorNoise::Walk(w),
            Condition::Profile { profiles } => SensorNoise::Profiles(profiles),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Feed a single-input model the frame-wise mean of this many corrupted
    /// copies. The copies are the ones a model with that many sensors would
    /// see under the same seed.
    pub average_copies: Option<usize>,
    /// Record attention traces (attention models only).
    pub traces: bool,
}

#[derive(Clone, Debug)]
pub struct SampleTrace {
    pub id: u64,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metrics: MetricReport,
    pub hypotheses: Vec<LabelSequence>,
    pub traces: Vec<SampleTrace>,
}

/// Decodes every sample under `condition`. Sample `id`, sensor `i` draws
/// its noise from stream `(seed, EVAL_NOISE, id, i)`.
pub fn evaluate<F: Real>(
    model: &StanModel<F>,
    samples: &[Sample],
    condition: &Condition,
    seed: u64,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let sensors = model.num_sensors();
    let copies_per_sample = match options.average_copies {
        Some(k) if sensors != 1 => {
            return Err(Error::Input(format!(
                "averaging {k} copies needs a single-input model, this one has {sensors} sensors"
            )))
        }
        Some(0) => return Err(Error::Input("cannot average zero copies".into())),
        Some(k) => k,
        None => sensors,
    };
    let has_attention = model.spec().architecture == crate::model::Architecture::Stan;
    let mut hypotheses = Vec::with_capacity(samples.len());
    let mut traces = Vec::new();
    for s in samples {
        if s.features.dim() != model.spec().sensors[0].modality.input_dim() {
            return Err(Error::Dimension(format!(
                "sample {} has {} features per frame, the model expects {}",
                s.id,
                s.features.dim(),
                model.spec().sensors[0].modality.input_dim()
            )));
        }
        let path = [domain::EVAL_NOISE, s.id];
        let (mut copies, schedules) = sensor_copies(&s.features, copies_per_sample, condition.noise(), seed, &path, true)?;
        if options.average_copies.is_some() {
            copies = vec![average(&copies)?];
        }
        let out = model.forward_features(&copies)?;
        hypotheses.push(greedy_decode(out.logits.view()));
        if options.traces && has_attention {
            let attention = out.attention.expect("attention model").mapv(|v| v.f64());
            let sigma = ndarray::Array2::from_shape_fn(attention.dim(), |(t, i)| schedules[i].sigma[t]);
            traces.push(SampleTrace {
                id: s.id,
                trace: AttentionTrace { sigma, attention },
            });
        }
    }
    let refs: Vec<_> = samples.iter().map(|s| s.labels.clone()).collect();
    Ok(EvalReport {
        metrics: score(&refs, &hypotheses)?,
        hypotheses,
        traces,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionCorrelation {
    /// Pearson r of `sigma_1 - sigma_2` against `a_1 - a_2`; `None` when
    /// either series is constant.
    pub r: Option<f64>,
    /// Median frames from a noise-dominance crossover to the matching
    /// attention crossover; `None` when no crossover was matched.
    pub lag: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let scale = (sxx * syy).sqrt();
    let tiny = 1e-12 * n;
    (sxx > tiny && syy > tiny).then(|| (sxy / scale).clamp(-1.0, 1.0))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Frames where the sign of `series` flips, with the new sign.
fn crossovers(series: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut last = 0.0;
    for (t, &v) in series.iter().enumerate() {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            continue;
        };
        if last != 0.0 && s != last {
            out.push((t, s));
        }
        last = s;
    }
    out
}

pub fn correlate_attention(trace: &AttentionTrace) -> Result<AttentionCorrelation> {
    if trace.sensors() != 2 {
        return Err(Error::Input(format!("correlation needs 2 sensors, trace has {}", trace.sensors())));
    }
    let d_sigma: Vec<f64> = trace.sigma.rows().into_iter().map(|r| r[0] - r[1]).collect();
    let d_attn: Vec<f64> = trace.attention.rows().into_iter().map(|r| r[0] - r[1]).collect();
    let noise_x = crossovers(&d_sigma);
    let attn_x = crossovers(&d_attn);
    // Sensor 1 becoming noisier (sign +) should be followed by its attention
    // dropping below sensor 2's (sign -), before the noise flips back.
    let mut lags: Vec<f64> = noise_x
        .iter()
        .enumerate()
        .filter_map(|(k, &(t, s))| {
            let until = noise_x.get(k + 1).map_or(usize::MAX, |n| n.0);
            attn_x
                .iter()
                .find(|&&(ta, sa)| ta >= t && ta < until && sa == -s)
                .map(|&(ta, _)| (ta - t) as f64)
        })
        .collect();
    Ok(AttentionCorrelation {
        r: pearson(&d_sigma, &d_attn),
        lag: median(&mut lags),
    })
}

/// A stretch of at least the requested length where one sensor's noise is
/// lower than every other sensor's by at least the requested margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuietInterval {
    pub start: usize,
    pub end: usize,
    pub sensor: usize,
    /// Mean attention on `sensor` over `start..end`.
    pub mean_attention: f64,
}

pub fn quiet_intervals(trace: &AttentionTrace, margin: f64, min_frames: usize) -> Vec<QuietInterval> {
    let quiet_at = |t: usize| -> Option<usize> {
        let row = trace.sigma.row(t);
        (0..row.len()).find(|&i| (0..row.len()).all(|j| j == i || row[j] - row[i] >= margin))
    };
    let mut out = Vec::new();
    let mut t = 0;
    while t < trace.frames() {
        let Some(i) = quiet_at(t) else {
            t += 1;
            continue;
        };
        let start = t;
        while t < trace.frames() && quiet_at(t) == Some(i) {
            t += 1;
        }
        if t - start >= min_frames {
            let mean = trace.attention.column(i).slice(ndarray::s![start..t]).mean().unwrap_or(0.0);
            out.push(QuietInterval {
                start,
                end: t,
                sensor: i,
                mean_attention: mean,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SyntheticTaskSpec};
    use crate::model::{build_model, ClassifierSpec, ModelSpec};
    use crate::rng::Prng;
    use ndarray::Array2;

    fn classifier() -> ClassifierSpec {
        ClassifierSpec {
            layers: vec![8],
            bidirectional: false,
            output_dim: 12,
        }
    }

    fn test_set() -> Vec<Sample> {
        let spec = SyntheticTaskSpec {
            train_samples: 1,
            test_samples: 12,
            sequence_length: [1, 3],
            ..Default::default()
        };
        generate_corpus(&spec, 4).unwrap().test
    }

    #[test]
    fn zero_sigma_noise_equals_clean() {
        let model = build_model::<f64>(&ModelSpec::stan(2, 39, 4, classifier()), &mut Prng::new(2)).unwrap();
        let data = test_set();
        let opts = EvalOptions::default();
        let clean = evaluate(&model, &data, &Condition::Clean, 3, &opts).unwrap();
        let zero = evaluate(&model, &data, &Condition::Noisy(WalkConfig::with_sigma_max(0.0)), 3, &opts).unwrap();
        assert_eq!(clean.hypotheses, zero.hypotheses);
        assert_eq!(clean.metrics, zero.metrics);
    }

    #[test]
    fn shared_stan_matches_single_on_clean_input() {
        let stan = build_model::<f64>(&ModelSpec::stan(3, 39, 4, classifier()).shared(), &mut Prng::new(5)).unwrap();
        let mut single_params = build_model::<f64>(&ModelSpec::single(39, classifier()), &mut Prng::new(9))
            .unwrap()
            .into_params();
        single_params.copy_subtree_from(stan.params(), "classifier.").unwrap();
        let single = StanModel::from_params(ModelSpec::single(39, classifier()), single_params).unwrap();
        let data = test_set();
        let opts = EvalOptions::default();
        let a = evaluate(&stan, &data, &Condition::Clean, 1, &opts).unwrap();
        let b = evaluate(&single, &data, &Condition::Clean, 1, &opts).unwrap();
        assert_eq!(a.hypotheses, b.hypotheses);
        assert_eq!(a.metrics.ser, b.metrics.ser);
    }

    #[test]
    fn averaged_copies_match_the_sensor_draws() {
        let single = build_model::<f64>(&ModelSpec::single(39, classifier()), &mut Prng::new(5)).unwrap();
        let data = test_set();
        let cond = Condition::Noisy(WalkConfig::default());
        let opts = EvalOptions {
            average_copies: Some(2),
            traces: false,
        };
        let report = evaluate(&single, &data, &cond, 8, &opts).unwrap();
        let s = &data[0];
        let (copies, _) = sensor_copies(&s.features, 2, cond.noise(), 8, &[domain::EVAL_NOISE, s.id], true).unwrap();
        let out = single.forward_features(&[average(&copies).unwrap()]).unwrap();
        assert_eq!(report.hypotheses[0], greedy_decode(out.logits.view()));
        let stan = build_model::<f64>(&ModelSpec::stan(2, 39, 4, classifier()), &mut Prng::new(5)).unwrap();
        assert!(evaluate(&stan, &data, &cond, 8, &opts).is_err());
    }

    #[test]
    fn traces_pair_schedules_with_attention() {
        let model = build_model::<f64>(&ModelSpec::stan(2, 39, 4, classifier()), &mut Prng::new(2)).unwrap();
        let data = test_set();
        let cond = Condition::Profile {
            profiles: vec![NoiseProfileSpec::sweep(0.0, 3.0), NoiseProfileSpec::constant(1.0)],
        };
        let opts = EvalOptions {
            average_copies: None,
            traces: true,
        };
        let report = evaluate(&model, &data, &cond, 2, &opts).unwrap();
        assert_eq!(report.traces.len(), data.len());
        let tr = &report.traces[0].trace;
        assert_eq!(tr.frames(), data[0].features.len());
        assert_eq!(tr.sigma[[0, 0]], 0.0);
        assert_eq!(tr.sigma[[tr.frames() - 1, 0]], 3.0);
        assert!(tr.sigma.column(1).iter().all(|&v| v == 1.0));
        for row in tr.attention.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    fn softmax_trace(sigma: Array2<f64>) -> AttentionTrace {
        let mut attention = sigma.mapv(|s| (-s).exp());
        for mut row in attention.rows_mut() {
            let z = row.sum();
            row /= z;
        }
        AttentionTrace { sigma, attention }
    }

    #[test]
    fn softmax_of_negative_noise_correlates_perfectly() {
        let sigma = Array2::from_shape_fn((60, 2), |(t, i)| {
            let x = 1.5 + 1.2 * (t as f64 / 7.0).sin();
            if i == 0 {
                x
            } else {
                3.0 - x
            }
        });
        // With two sensors a_1 - a_2 = tanh((sigma_2 - sigma_1) / 2): monotone
        // but not linear, so a smooth schedule gets r close to -1.
        let c = correlate_attention(&softmax_trace(sigma)).unwrap();
        assert!(c.r.unwrap() < -0.97, "{c:?}");
        assert_eq!(c.lag, Some(0.0));
        let switching = Array2::from_shape_fn((60, 2), |(t, i)| if (t / 9 + i) % 2 == 0 { 0.4 } else { 2.6 });
        let c = correlate_attention(&softmax_trace(switching)).unwrap();
        assert!((c.r.unwrap() + 1.0).abs() < 1e-12, "{c:?}");
        assert_eq!(c.lag, Some(0.0));
    }

    #[test]
    fn constant_noise_is_undefined() {
        let c = correlate_attention(&softmax_trace(Array2::from_elem((30, 2), 1.0))).unwrap();
        assert_eq!(c.r, None);
        assert_eq!(c.lag, None);
        let three = softmax_trace(Array2::from_elem((5, 3), 1.0));
        assert!(correlate_attention(&three).is_err());
    }

    #[test]
    fn delayed_attention_reports_lag() {
        let sigma = Array2::from_shape_fn((40, 2), |(t, i)| match (t < 20, i) {
            (true, 0) | (false, 1) => 0.5,
            _ => 2.5,
        });
        let mut trace = softmax_trace(sigma);
        let shifted = Array2::from_shape_fn((40, 2), |(t, i)| trace.attention[[t.saturating_sub(3), i]]);
        trace.attention = shifted;
        assert_eq!(correlate_attention(&trace).unwrap().lag, Some(3.0));
    }

    #[test]
    fn quiet_intervals_need_margin_and_length() {
        let sigma = Array2::from_shape_fn((50, 2), |(t, i)| match (t, i) {
            (0..=24, 0) => 0.5,
            (0..=24, 1) => 2.0,
            (25..=34, 0) => 2.0,
            (25..=34, 1) => 0.5,
            _ => 1.0,
        });
        let iv = quiet_intervals(&softmax_trace(sigma), 1.0, 20);
        assert_eq!(iv.len(), 1);
        assert_eq!((iv[0].start, iv[0].end, iv[0].sensor), (0, 25, 0));
        assert!(iv[0].mean_attention > 0.5);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
