//! Time-varying Gaussian corruption.
//!
//! Training noise follows a bounded random walk: the noise standard
//! deviation starts at `sigma0 ~ U(0, sigma_max / 2)` and moves every frame
//! by a gamma-distributed step with a random sign. The walk is folded back
//! into `[0, sigma_max]` by a triangular-wave reflection, so it has no
//! settle-in time and never jumps at the boundaries. Evaluation additionally
//! uses deterministic profiles (sweeps, bursts, sinusoids).

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::sequence::FeatureSequence;

/// Triangular-wave fold of `a` into `[0, sigma_max]`.
///
/// Uses the floored modulus, so the map is continuous, even about zero and
/// periodic with period `2 * sigma_max`.
pub fn reflect(a: f64, sigma_max: f64) -> Result<f64> {
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sigma_max must be positive and finite, got {sigma_max}"
        )));
    }
    let period = 2.0 * sigma_max;
    let m = a - period * (a / period).floor();
    Ok((sigma_max - (m - sigma_max).abs()).clamp(0.0, sigma_max))
}

/// One draw from `Gamma(shape, scale)` by the Marsaglia-Tsang squeeze method.
/// Shapes below one draw from `Gamma(shape + 1)` and scale by `U^(1/shape)`.
pub fn sample_gamma(prng: &mut Prng, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gamma parameters must be positive, got shape={shape} scale={scale}"
        )));
    }
    if shape < 1.0 {
        let g = gamma_shape_ge_one(prng, shape + 1.0);
        let u = prng.uniform();
        return Ok(scale * g * u.powf(1.0 / shape));
    }
    Ok(scale * gamma_shape_ge_one(prng, shape))
}

fn gamma_shape_ge_one(prng: &mut Prng, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = prng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = prng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn default_sigma_max() -> f64 {
    3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "WalkConfig::default_shape")]
    pub gamma_shape: f64,
    #[serde(default = "WalkConfig::default_scale")]
    pub gamma_scale: f64,
    /// Upper end of the initial level draw; `None` means `sigma_max / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0_upper: Option<f64>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            sigma_max: 3.0,
            gamma_shape: 0.8,
            gamma_scale: 0.2,
            sigma0_upper: None,
        }
    }
}

impl WalkConfig {
    fn default_shape() -> f64 {
        0.8
    }

    fn default_scale() -> f64 {
        0.2
    }

    pub fn with_sigma_max(sigma_max: f64) -> Self {
        Self {
            sigma_max,
            ..Self::default()
        }
    }

    pub fn sigma0_upper(&self) -> f64 {
        self.sigma0_upper.unwrap_or(self.sigma_max / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.sigma_max) || !ok(self.gamma_shape) || !ok(self.gamma_scale) {
            return Err(Error::InvalidConfig(format!(
                "walk parameters must be positive: {self:?}"
            )));
        }
        let s0 = self.sigma0_upper();
        if !(0.0..=self.sigma_max).contains(&s0) {
            return Err(Error::InvalidConfig(format!(
                "sigma0_upper {s0} outside [0, {}]",
                self.sigma_max
            )));
        }
        Ok(())
    }
}

/// Per-frame noise standard deviations for one sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub sigma: Vec<f64>,
    /// `(seed, stream)` of the generator that produced a random schedule.
    pub provenance: Option<(u64, u64)>,
}

impl NoiseSchedule {
    pub fn constant(level: f64, length: usize) -> Self {
        Self {
            sigma: vec![level; length],
            provenance: None,
        }
    }

    pub fn zeros(length: usize) -> Self {
        Self::constant(0.0, length)
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `frame,sigma` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,sigma\n");
        for (t, s) in self.sigma.iter().enumerate() {
            let _ = writeln!(out, "{t},{s}");
        }
        out
    }
}

/// One signed walk increment `sgn(s) * n` with `s ~ U(-1, 1)`, `n ~ Gamma(k, theta)`.
/// `sgn(0)` is taken as `+1`.
pub fn walk_increment(prng: &mut Prng, config: &WalkConfig) -> Result<f64> {
    let s = prng.uniform_range(-1.0, 1.0);
    let n = sample_gamma(prng, config.gamma_shape, config.gamma_scale)?;
    Ok(if s >= 0.0 { n } else { -n })
}

pub fn walk_schedule(prng: &mut Prng, config: &WalkConfig, length: usize) -> Result<NoiseSchedule> {
    config.validate()?;
    if length == 0 {
        return Err(Error::EmptySequence("noise schedule length must be at least 1"));
    }
    let provenance = Some((prng.seed(), prng.stream()));
    let mut level = prng.uniform_range(0.0, config.sigma0_upper());
    let mut sigma = Vec::with_capacity(length);
    sigma.push(reflect(level, config.sigma_max)?);
    for _ in 1..length {
        level += walk_increment(prng, config)?;
        sigma.push(reflect(level, config.sigma_max)?);
    }
    Ok(NoiseSchedule { sigma, provenance })
}

/// Returns a corrupted copy of `x`: every element at frame `t` receives an
/// independent `N(0, sigma(t)^2)` draw. Frames with `sigma(t) == 0` are
/// copied bit-exactly and consume no randomness.
pub fn apply_noise(prng: &mut Prng, x: &FeatureSequence, schedule: &NoiseSchedule) -> Result<FeatureSequence> {
    if schedule.len() != x.len() {
        return Err(Error::Dimension(format!(
            "schedule has {} frames, sequence has {}",
            schedule.len(),
            x.len()
        )));
    }
    let mut out = x.frames.clone();
    for (mut row, &sigma) in out.rows_mut().into_iter().zip(&schedule.sigma) {
        if sigma == 0.0 {
            continue;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 + sigma * prng.normal()) as f32;
        }
    }
    Ok(FeatureSequence::new(out))
}

/// Shape of a noise profile. Frame parameters are absolute frame indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    RandomWalk {
        #[serde(default = "WalkConfig::default_shape")]
        gamma_shape: f64,
        #[serde(default = "WalkConfig::default_scale")]
        gamma_scale: f64,
    },
    LinearSweep {
        start: f64,
        end: f64,
    },
    Burst {
        onset: usize,
        duration: usize,
        level: f64,
        #[serde(default)]
        base: f64,
    },
    Sinusoid {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        offset: f64,
    },
    Constant {
        level: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfileSpec {
    #[serde(flatten)]
    pub kind: ProfileKind,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
}

impl NoiseProfileSpec {
    pub fn new(kind: ProfileKind) -> Self {
        Self {
            kind,
            sigma_max: default_sigma_max(),
        }
    }

    pub fn sweep(start: f64, end: f64) -> Self {
        Self::new(ProfileKind::LinearSweep { start, end })
    }

    pub fn burst(onset: usize, duration: usize, level: f64, base: f64) -> Self {
        Self::new(ProfileKind::Burst {
            onset,
            duration,
            level,
            base,
        })
    }

    pub fn sinusoid(amplitude: f64, period: f64, phase: f64, offset: f64) -> Self {
        Self::new(ProfileKind::Sinusoid {
            amplitude,
            period,
            phase,
            offset,
        })
    }

    pub fn constant(level: f64) -> Self {
        Self::new(ProfileKind::Constant { level })
    }

    pub fn walk_config(&self) -> Option<WalkConfig> {
        match self.kind {
            ProfileKind::RandomWalk {
                gamma_shape,
                gamma_scale,
            } => Some(WalkConfig {
                sigma_max: self.sigma_max,
                gamma_shape,
                gamma_scale,
                sigma0_upper: None,
            }),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let max = self.sigma_max;
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_max must be positive, got {max}")));
        }
        let within = |name: &str, v: f64| {
            if (0.0..=max).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name}={v} outside [0, {max}]")))
            }
        };
        match self.kind {
            ProfileKind::RandomWalk { .. } => Ok(()),
            ProfileKind::LinearSweep { start, end } => {
                within("start", start)?;
                within("end", end)
            }
            ProfileKind::Burst { level, base, .. } => {
                within("level", level)?;
                within("base", base)
            }
            ProfileKind::Sinusoid {
                amplitude,
                period,
                phase,
                offset,
            } => {
                within("offset", offset)?;
                if !(amplitude >= 0.0) || !(period > 0.0) || !phase.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "sinusoid needs amplitude >= 0 and period > 0, got {amplitude}, {period}"
                    )));
                }
                Ok(())
            }
            ProfileKind::Constant { level } => within("level", level),
        }
    }

    /// Realizes any profile, drawing from `prng` only for random walks.
    pub fn realize(&self, prng: &mut Prng, length: usize) -> Result<NoiseSchedule> {
        match self.walk_config() {
            Some(walk) => walk_schedule(prng, &walk, length),
            None => profile_schedule(self, length),
        }
    }
}

/// Compact text form used on the command line:
/// `random_walk`, `sweep:START:END`, `burst:ONSET:DURATION:LEVEL[:BASE]`,
/// `sinusoid:AMPLITUDE:PERIOD:PHASE:OFFSET`, `constant:LEVEL`.
impl FromStr for NoiseProfileSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::InvalidConfig(format!("malformed noise profile `{s}`"));
        let num = |i: usize| -> Result<f64> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let frames = |i: usize| -> Result<usize> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let spec = match kind {
            "random_walk" if args.is_empty() => Self::new(ProfileKind::RandomWalk {
                gamma_shape: WalkConfig::default_shape(),
                gamma_scale: WalkConfig::default_scale(),
            }),
            "sweep" | "linear_sweep" if args.len() == 2 => Self::sweep(num(0)?, num(1)?),
            "burst" if args.len() == 3 || args.len() == 4 => Self::burst(
                frames(0)?,
                frames(1)?,
                num(2)?,
                if args.len() == 4 { num(3)? } else { 0.0 },
            ),
            "sinusoid" if args.len() == 4 => Self::sinusoid(num(0)?, num(1)?, num(2)?, num(3)?),
            "constant" if args.len() == 1 => Self::constant(num(0)?),
            "random_walk" | "sweep" | "linear_sweep" | "burst" | "sinusoid" | "constant" => return Err(bad()),
            other => return Err(Error::InvalidConfig(format!("unknown noise profile kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Deterministic schedule of the requested shape, clamped to `[0, sigma_max]`.
pub fn profile_schedule(spec: &NoiseProfileSpec, length: usize) -> Result<NoiseSchedule> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::EmptySequence("noise schedule length must be at least 1"));
    }
    let max = spec.sigma_max;
    let sigma = (0..length)
        .map(|t| {
            let v = match spec.kind {
                ProfileKind::RandomWalk { .. } => {
                    return Err(Error::InvalidConfig(
                        "random_walk is stochastic; realize it with a generator".into(),
                    ))
                }
                ProfileKind::LinearSweep { start, end } => {
                    if length == 1 {
                        start
                    } else {
                        start + (end - start) * t as f64 / (length - 1) as f64
                    }
                }
                ProfileKind::Burst {
                    onset,
                    duration,
                    level,
                    base,
                } => {
                    if t >= onset && t < onset + duration {
                        level
                    } else {
                        base
                    }
                }
                ProfileKind::Sinusoid {
                    amplitude,
                    period,
                    phase,
                    offset,
                } => offset + amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin(),
                ProfileKind::Constant { level } => level,
            };
            Ok(v.clamp(0.0, max))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSchedule {
        sigma,
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::domain;
    use ndarray::Array2;

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(0.0, 3.0).unwrap(), 0.0);
        assert!((reflect(4.5, 3.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((reflect(-1.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((reflect(3.0, 3.0).unwrap() - 3.0).abs() < 1e-15);
        assert!(matches!(reflect(1.0, 0.0), Err(Error::InvalidConfig(_))));
        assert!(reflect(1.0, -2.0).is_err());
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut p = Prng::new(0);
        assert!(sample_gamma(&mut p, 0.0, 1.0).is_err());
        assert!(sample_gamma(&mut p, 1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_moments_small_shape() {
        let mut p = Prng::new(11);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gamma(&mut p, 0.8, 0.2).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.16).abs() < 0.002, "mean {mean}");
        assert!((var - 0.032).abs() < 0.001, "var {var}");
    }

    #[test]
    fn gamma_shape_one_is_exponential() {
        let mut p = Prng::new(12);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_gamma(&mut p, 1.0, 1.0).unwrap()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-x).exp();
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn walk_is_bounded_and_reproducible() {
        let cfg = WalkConfig::default();
        let mut a = Prng::derive(1, &[domain::TRAIN_NOISE, 0]);
        let mut b = Prng::derive(1, &[domain::TRAIN_NOISE, 0]);
        let s = walk_schedule(&mut a, &cfg, 10_000).unwrap();
        let t = walk_schedule(&mut b, &cfg, 10_000).unwrap();
        assert_eq!(s, t);
        assert!(s.sigma.iter().all(|v| (0.0..=3.0).contains(v)));
        assert!(s.sigma[0] <= 1.5);
    }

    #[test]
    fn walk_degenerates_for_tiny_scale() {
        let cfg = WalkConfig {
            gamma_scale: 1e-9,
            ..WalkConfig::default()
        };
        let s = walk_schedule(&mut Prng::new(4), &cfg, 500).unwrap();
        let first = s.sigma[0];
        assert!(s.sigma.iter().all(|v| (v - first).abs() < 1e-5));
    }

    #[test]
    fn walk_rejects_empty() {
        let r = walk_schedule(&mut Prng::new(0), &WalkConfig::default(), 0);
        assert!(matches!(r, Err(Error::EmptySequence(_))));
    }

    #[test]
    fn increments_are_sign_symmetric() {
        let cfg = WalkConfig::default();
        let mut p = Prng::new(99);
        let n = 100_000;
        let positive = (0..n).filter(|_| walk_increment(&mut p, &cfg).unwrap() >= 0.0).count();
        let frac = positive as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn zero_schedule_is_identity() {
        let mut p = Prng::new(0);
        let x = FeatureSequence::new(Array2::from_shape_fn((20, 5), |(t, k)| (t as f32 - 3.5) * (k as f32 + 0.25)));
        let y = apply_noise(&mut p, &x, &NoiseSchedule::zeros(20)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn unit_noise_has_unit_std() {
        let mut p = Prng::new(21);
        let x = FeatureSequence::zeros(10_000, 64);
        let y = apply_noise(&mut p, &x, &NoiseSchedule::constant(1.0, 10_000)).unwrap();
        let n = y.frames.len() as f64;
        let var = y.frames.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn noise_ratio_tracks_sigma_ratio() {
        let x = FeatureSequence::new(Array2::from_elem((2_000, 16), 0.7));
        let dev = |sigma: f64, seed| {
            let y = apply_noise(&mut Prng::new(seed), &x, &NoiseSchedule::constant(sigma, 2_000)).unwrap();
            let d: f64 = (&y.frames - &x.frames).iter().map(|&v| (v as f64).powi(2)).sum();
            (d / x.frames.len() as f64).sqrt()
        };
        let ratio = dev(3.0, 1) / dev(0.1, 2);
        assert!((ratio - 30.0).abs() < 3.0, "{ratio}");
    }

    #[test]
    fn noise_length_mismatch() {
        let x = FeatureSequence::zeros(5, 2);
        let r = apply_noise(&mut Prng::new(0), &x, &NoiseSchedule::zeros(4));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn sweep_profile() {
        let s = profile_schedule(&NoiseProfileSpec::sweep(0.0, 3.0), 300).unwrap();
        assert_eq!(s.sigma[0], 0.0);
        assert!((s.sigma[299] - 3.0).abs() < 1e-12);
        assert!(s.sigma.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn burst_profile() {
        let s = profile_schedule(&NoiseProfileSpec::burst(100, 50, 2.0, 0.0), 300).unwrap();
        for (t, &v) in s.sigma.iter().enumerate() {
            let want = if (100..150).contains(&t) { 2.0 } else { 0.0 };
            assert_eq!(v, want, "frame {t}");
        }
    }

    #[test]
    fn sinusoid_profile() {
        let s = profile_schedule(&NoiseProfileSpec::sinusoid(1.5, 100.0, 0.0, 1.5), 300).unwrap();
        let min = s.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = s.sigma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min < 1e-3 && (max - 3.0).abs() < 1e-3);
        for t in 0..200 {
            assert!((s.sigma[t] - s.sigma[t + 100]).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_parsing() {
        assert_eq!(
            "burst:10:5:2".parse::<NoiseProfileSpec>().unwrap(),
            NoiseProfileSpec::burst(10, 5, 2.0, 0.0)
        );
        assert!(matches!("zigzag:1".parse::<NoiseProfileSpec>(), Err(Error::InvalidConfig(_))));
        assert!("sweep:0".parse::<NoiseProfileSpec>().is_err());
        assert!("constant:4".parse::<NoiseProfileSpec>().is_err());
        let walk = "random_walk".parse::<NoiseProfileSpec>().unwrap();
        assert!(profile_schedule(&walk, 10).is_err());
        assert_eq!(walk.realize(&mut Prng::new(1), 10).unwrap().len(), 10);
    }

    #[test]
    fn profile_spec_from_toml() {
        let spec: NoiseProfileSpec = toml::from_str("kind = \"burst\"\nonset = 3\nduration = 4\nlevel = 2.5\n").unwrap();
        assert_eq!(spec, NoiseProfileSpec::burst(3, 4, 2.5, 0.0));
        assert!(toml::from_str::<NoiseProfileSpec>("kind = \"zigzag\"").is_err());
    }

    #[test]
    fn schedule_csv() {
        let csv = NoiseSchedule {
            sigma: vec![0.0, 1.5],
            provenance: None,
        }
        .to_csv();
        assert_eq!(csv, "frame,sigma\n0,0\n1,1.5\n");
    }
}
