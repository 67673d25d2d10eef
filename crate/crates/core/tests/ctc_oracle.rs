//! CTC loss against exhaustive path enumeration.

use ndarray::Array2;
use stan_core::ctc::{collapse, ctc_loss, greedy_decode};
use stan_core::{Label, LabelSequence, Prng};

/// -log of the summed probability of every frame path collapsing to `labels`.
fn brute_force_nll(logits: &Array2<f64>, labels: &LabelSequence) -> f64 {
    let (frames, classes) = logits.dim();
    let probs: Vec<Vec<f64>> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(|v| v.exp() / z).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut path = vec![0 as Label; frames];
    for code in 0..classes.pow(frames as u32) {
        let mut c = code;
        let mut p = 1.0;
        for t in 0..frames {
            path[t] = (c % classes) as Label;
            c /= classes;
            p *= probs[t][path[t] as usize];
        }
        if collapse(&path) == *labels {
            total += p;
        }
    }
    -total.ln()
}

fn random_instance(prng: &mut Prng) -> (Array2<f64>, LabelSequence) {
    let classes = 2 + prng.below(3) as usize;
    let frames = 1 + prng.below(6) as usize;
    loop {
        let len = prng.below(4) as usize;
        let labels = LabelSequence((0..len).map(|_| 1 + prng.below(classes as u64 - 1) as Label).collect());
        if labels.min_frames() <= frames {
            let logits = Array2::from_shape_fn((frames, classes), |_| prng.uniform_range(-3.0, 3.0));
            return (logits, labels);
        }
    }
}

#[test]
fn dynamic_program_matches_enumeration() {
    let mut prng = Prng::new(2024);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 400 {
        let (logits, labels) = random_instance(&mut prng);
        let dp = ctc_loss(logits.view(), &labels).unwrap().neg_log_likelihood;
        let oracle = brute_force_nll(&logits, &labels);
        worst = worst.max((dp - oracle).abs());
        assert!((dp - oracle).abs() < 1e-9, "{labels:?} T={} dp={dp} oracle={oracle}", logits.nrows());
        checked += 1;
    }
    assert!(worst < 1e-9);
}

#[test]
fn gradients_match_finite_differences() {
    let mut prng = Prng::new(77);
    let h = 1e-5;
    for _ in 0..100 {
        let (logits, labels) = random_instance(&mut prng);
        let analytic = ctc_loss(logits.view(), &labels).unwrap().logit_gradients;
        for row in analytic.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
        for ((t, k), &g) in analytic.indexed_iter() {
            let mut plus = logits.clone();
            plus[[t, k]] += h;
            let mut minus = logits.clone();
            minus[[t, k]] -= h;
            let numeric = (brute_force_nll(&plus, &labels) - brute_force_nll(&minus, &labels)) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-6, "({t},{k}) analytic {g} numeric {numeric}");
        }
    }
}

#[test]
fn large_logits_never_produce_nan() {
    let mut prng = Prng::new(5);
    for _ in 0..50 {
        let frames = 20 + prng.below(100) as usize;
        let logits = Array2::from_shape_fn((frames, 12), |_| prng.uniform_range(-1000.0, 1000.0));
        let labels = LabelSequence((0..5).map(|i| 1 + (i * 3 % 11) as Label).collect());
        let r = ctc_loss(logits.view(), &labels).unwrap();
        assert!(r.neg_log_likelihood.is_finite() && r.neg_log_likelihood >= 0.0);
        assert!(r.logit_gradients.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn collapse_is_idempotent_on_random_paths() {
    let mut prng = Prng::new(9);
    for _ in 0..500 {
        let path: Vec<Label> = (0..1 + prng.below(20)).map(|_| prng.below(4) as Label).collect();
        let once = collapse(&path);
        assert!(collapse(once.as_slice()).len() <= once.len());
        let again = collapse(collapse(once.as_slice()).as_slice());
        assert_eq!(again, collapse(once.as_slice()));
        // decoding one-hot logits of a path equals collapsing the path
        let mut logits = Array2::<f64>::zeros((path.len(), 4));
        for (t, &k) in path.iter().enumerate() {
            logits[[t, k as usize]] = 1.0;
        }
        assert_eq!(greedy_decode(logits.view()), once);
    }
}
