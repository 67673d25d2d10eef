use ndarray::Array2;
use proptest::prelude::*;
use stan_core::checkpoint::Checkpoint;
use stan_core::config::ExperimentConfig;
use stan_core::container::{decode_sample, encode_sample};
use stan_core::ctc::ctc_loss;
use stan_core::model::{build_model, ClassifierSpec, ModelSpec, StanModel};
use stan_core::noise::{reflect, walk_schedule, WalkConfig};
use stan_core::{FeatureSequence, LabelSequence, Prng, Sample};

fn matrix(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut p = Prng::new(seed);
    Array2::from_shape_fn((rows, cols), |_| p.normal() as f32)
}

fn small_stan(sensors: usize, dim: usize, seed: u64) -> StanModel<f64> {
    let spec = ModelSpec::stan(
        sensors,
        dim,
        4,
        ClassifierSpec {
            layers: vec![5],
            bidirectional: false,
            output_dim: 4,
        },
    );
    build_model(&spec, &mut Prng::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_bounded_even_periodic_and_contracting(
        a in -100.0f64..100.0,
        b in -100.0f64..100.0,
        max in 0.05f64..20.0,
    ) {
        let fa = reflect(a, max).unwrap();
        prop_assert!((0.0..=max).contains(&fa));
        prop_assert!((reflect(-a, max).unwrap() - fa).abs() < 1e-9);
        prop_assert!((reflect(a + 2.0 * max, max).unwrap() - fa).abs() < 1e-9);
        prop_assert!((fa - reflect(b, max).unwrap()).abs() <= (a - b).abs() + 1e-9);
    }

    #[test]
    fn walks_stay_inside_the_band(seed in any::<u64>(), max in 0.1f64..8.0, len in 1usize..300) {
        let cfg = WalkConfig::with_sigma_max(max);
        let s = walk_schedule(&mut Prng::new(seed), &cfg, len).unwrap();
        prop_assert_eq!(s.len(), len);
        prop_assert!(s.sigma.iter().all(|v| (0.0..=max).contains(v)));
    }

    #[test]
    fn attention_is_a_convex_merge(seed in any::<u64>(), sensors in 2usize..4, frames in 1usize..12) {
        let model = small_stan(sensors, 3, seed);
        let inputs: Vec<FeatureSequence> =
            (0..sensors).map(|i| FeatureSequence::new(matrix(frames, 3, seed ^ (i as u64 + 1)))).collect();
        let out = model.forward_features(&inputs).unwrap();
        let attention = out.attention.unwrap();
        for t in 0..frames {
            let row = attention.row(t);
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&a| a > 0.0));
            for d in 0..3 {
                let expected: f64 = (0..sensors).map(|i| row[i] * inputs[i].frames[[t, d]] as f64).sum();
                prop_assert!((out.merged[[t, d]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), sensors in 2usize..4) {
        let model = small_stan(sensors, 3, seed);
        let ckpt = Checkpoint::from_model(&model);
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.blob_hash(), ckpt.blob_hash());
        let restored = back.model::<f64>().unwrap();
        let inputs: Vec<FeatureSequence> = (0..sensors).map(|i| FeatureSequence::new(matrix(4, 3, i as u64))).collect();
        prop_assert_eq!(
            restored.forward_features(&inputs).unwrap().logits,
            model.forward_features(&inputs).unwrap().logits
        );
    }

    #[test]
    fn sample_containers_round_trip(
        id in any::<u64>(),
        frames in 0usize..20,
        dim in 1usize..8,
        labels in proptest::collection::vec(1u32..30, 0..10),
        normalized in any::<bool>(),
    ) {
        let sample = Sample {
            id,
            features: FeatureSequence::new(matrix(frames, dim, id)),
            labels: LabelSequence(labels),
        };
        let (back, flag) = decode_sample(&encode_sample(&sample, normalized).unwrap()).unwrap();
        prop_assert_eq!(back, sample);
        prop_assert_eq!(flag, normalized);
    }

    #[test]
    fn ctc_feasibility_and_gradient_rows(
        frames in 1usize..10,
        labels in proptest::collection::vec(1u32..4, 0..6),
        seed in any::<u64>(),
    ) {
        let labels = LabelSequence(labels);
        let logits = matrix(frames, 4, seed).mapv(f64::from);
        match ctc_loss(logits.view(), &labels) {
            Ok(r) => {
                prop_assert!(frames >= labels.min_frames());
                prop_assert!(r.neg_log_likelihood >= 0.0);
                for row in r.logit_gradients.rows() {
                    prop_assert!(row.sum().abs() < 1e-12);
                }
            }
            Err(_) => prop_assert!(frames < labels.min_frames()),
        }
    }

    #[test]
    fn resolved_configs_reparse_to_themselves(
        seed in 0..=i64::MAX as u64,
        layers in proptest::collection::vec(1usize..128, 1..4),
        patience in 1usize..20,
        sigma in 0.5f64..6.0,
    ) {
        let overrides = vec![
            format!("seed={seed}"),
            format!("model.classifier_layers={layers:?}"),
            format!("train.patience={patience}"),
            format!("train.noise.walk.sigma_max={sigma:?}"),
        ];
        let cfg = ExperimentConfig::from_toml("", &overrides).unwrap();
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(&cfg.model.classifier_layers, &layers);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}
