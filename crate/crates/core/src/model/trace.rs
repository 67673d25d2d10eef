use std::fmt::Write as _;

use ndarray::Array2;

use super::StanModel;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::noise::{apply_noise, NoiseSchedule};
use crate::rng::Prng;
use crate::sequence::FeatureSequence;

/// Per-frame noise levels and attention weights of every sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// `T x N` noise standard deviations.
    pub sigma: Array2<f64>,
    /// `T x N` merge weights.
    pub attention: Array2<f64>,
}

impl AttentionTrace {
    pub fn frames(&self) -> usize {
        self.attention.nrows()
    }

    pub fn sensors(&self) -> usize {
        self.attention.ncols()
    }

    /// `frame,sigma_1..N,attn_1..N`.
    pub fn to_csv(&self) -> String {
        let n = self.sensors();
        let mut out = String::from("frame");
        for i in 1..=n {
            let _ = write!(out, ",sigma_{i}");
        }
        for i in 1..=n {
            let _ = write!(out, ",attn_{i}");
        }
        out.push('\n');
        for t in 0..self.frames() {
            let _ = write!(out, "{t}");
            for v in self.sigma.row(t).iter().chain(self.attention.row(t).iter()) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Corrupts each sensor's copy of its input with its schedule, runs the
/// model, and pairs the resulting attention with the noise levels. Sensor
/// `i` draws its noise from `prng.child(i)`.
pub fn trace_attention<F: Real>(
    model: &StanModel<F>,
    inputs: &[FeatureSequence],
    schedules: &[NoiseSchedule],
    prng: &Prng,
) -> Result<AttentionTrace> {
    if schedules.len() != inputs.len() {
        return Err(Error::Input(format!(
            "{} schedules for {} sensors",
            schedules.len(),
            inputs.len()
        )));
    }
    let noisy = inputs
        .iter()
        .zip(schedules)
        .enumerate()
        .map(|(i, (x, sched))| apply_noise(&mut prng.child(i as u64), x, sched))
        .collect::<Result<Vec<_>>>()?;
    let out = model.forward_features(&noisy)?;
    let attention = out
        .attention
        .ok_or_else(|| Error::Input("model does not merge sensors by attention".into()))?
        .mapv(|v| v.f64());
    let frames = attention.nrows();
    let mut sigma = Array2::zeros((frames, schedules.len()));
    for (i, sched) in schedules.iter().enumerate() {
        sigma.column_mut(i).iter_mut().zip(&sched.sigma).for_each(|(o, &s)| *o = s);
    }
    Ok(AttentionTrace { sigma, attention })
}
