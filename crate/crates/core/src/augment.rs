//! Per-sensor corrupted copies of one clean sample.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::noise::{apply_noise, walk_schedule, NoiseProfileSpec, NoiseSchedule, WalkConfig};
use crate::rng::Prng;
use crate::sequence::FeatureSequence;

#[derive(Clone, Copy, Debug)]
pub enum SensorNoise<'a> {
    Clean,
    /// Independent random walks; `sigma_max == 0` means no noise.
    Walk(&'a WalkConfig),
    /// One profile per sensor.
    Profiles(&'a [NoiseProfileSpec]),
}

/// `sensors` copies of `x`, copy `i` corrupted from stream
/// `(seed, path..., i)`. With `independent == false` every copy uses stream
/// `(seed, path..., 0)` and the copies are identical.
pub fn sensor_copies(
    x: &FeatureSequence,
    sensors: usize,
    noise: SensorNoise,
    seed: u64,
    path: &[u64],
    independent: bool,
) -> Result<(Vec<FeatureSequence>, Vec<NoiseSchedule>)> {
    let len = x.len();
    if let SensorNoise::Profiles(p) = noise {
        if p.len() != sensors {
            return Err(Error::InvalidConfig(format!(
                "{} noise profiles for {sensors} sensors",
                p.len()
            )));
        }
    }
    let mut copies = Vec::with_capacity(sensors);
    let mut schedules = Vec::with_capacity(sensors);
    let mut full = path.to_vec();
    full.push(0);
    for i in 0..sensors {
        *full.last_mut().expect("non-empty path") = if independent { i as u64 } else { 0 };
        let mut prng = Prng::derive(seed, &full);
        let schedule = match noise {
            SensorNoise::Clean => NoiseSchedule::zeros(len),
            SensorNoise::Walk(w) if w.sigma_max == 0.0 => NoiseSchedule::zeros(len),
            SensorNoise::Walk(w) => walk_schedule(&mut prng, w, len)?,
            SensorNoise::Profiles(p) => p[i].realize(&mut prng, len)?,
        };
        copies.push(apply_noise(&mut prng, x, &schedule)?);
        schedules.push(schedule);
    }
    Ok((copies, schedules))
}

/// Frame-wise mean of several equally shaped sequences.
pub fn average(copies: &[FeatureSequence]) -> Result<FeatureSequence> {
    let first = copies.first().ok_or(Error::EmptySequence("nothing to average"))?;
    let mut acc = Array2::<f64>::zeros(first.frames.dim());
    for c in copies {
        if c.frames.dim() != first.frames.dim() {
            return Err(Error::Dimension("averaged copies differ in shape".into()));
        }
        acc.zip_mut_with(&c.frames, |a, &v| *a += v as f64);
    }
    let n = copies.len() as f64;
    Ok(FeatureSequence::new(acc.mapv(|v| (v / n) as f32)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FeatureSequence {
        FeatureSequence::new(Array2::from_shape_fn((50, 3), |(t, k)| (t * 3 + k) as f32 * 0.01))
    }

    #[test]
    fn clean_and_zero_walk_copies_are_exact() {
        let x = ramp();
        let (clean, _) = sensor_copies(&x, 2, SensorNoise::Clean, 1, &[8, 3], true).unwrap();
        let zero = WalkConfig::with_sigma_max(0.0);
        let (flat, s) = sensor_copies(&x, 2, SensorNoise::Walk(&zero), 1, &[8, 3], true).unwrap();
        assert!(clean.iter().chain(&flat).all(|c| *c == x));
        assert!(s.iter().all(|s| s.sigma.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn independence_flag() {
        let x = ramp();
        let w = WalkConfig::default();
        let (ind, _) = sensor_copies(&x, 2, SensorNoise::Walk(&w), 1, &[6], true).unwrap();
        assert_ne!(ind[0], ind[1]);
        let (same, _) = sensor_copies(&x, 2, SensorNoise::Walk(&w), 1, &[6], false).unwrap();
        assert_eq!(same[0], same[1]);
        assert_eq!(same[0], ind[0]);
    }

    #[test]
    fn profile_count_must_match() {
        let p = [NoiseProfileSpec::constant(1.0)];
        assert!(sensor_copies(&ramp(), 2, SensorNoise::Profiles(&p), 1, &[1], true).is_err());
    }

    #[test]
    fn average_of_copies() {
        let a = FeatureSequence::new(Array2::from_elem((2, 2), 1.0));
        let b = FeatureSequence::new(Array2::from_elem((2, 2), 3.0));
        assert_eq!(average(&[a, b]).unwrap().frames, Array2::from_elem((2, 2), 2.0));
    }
}
