//! Connectionist temporal classification: loss, exact gradients, and
//! best-path decoding.
//!
//! The loss marginalizes over every frame-level path that collapses to the
//! target (merge repeats, then drop blanks). It is computed with the
//! forward-backward recursions over the blank-augmented target
//! `[blank, l1, blank, l2, ..., blank]`, entirely in log space and in `f64`
//! regardless of the model precision.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::ops::log_softmax_rows;
use crate::nn::Real;
use crate::sequence::{Label, LabelSequence, BLANK};

#[derive(Clone, Debug)]
pub struct CtcResult<F> {
    pub neg_log_likelihood: f64,
    /// `dNLL / dlogits`, `T x classes`; every row sums to zero.
    pub logit_gradients: Array2<F>,
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_labels(labels: &LabelSequence, classes: usize) -> Result<()> {
    if let Some(&bad) = labels.as_slice().iter().find(|&&l| l == BLANK || l as usize >= classes) {
        return Err(Error::Input(format!(
            "label {bad} outside 1..{} (0 is the blank)",
            classes.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Negative log-likelihood of `labels` under per-frame softmax(`logits`),
/// with its gradient with respect to the logits.
pub fn ctc_loss<F: Real>(logits: ArrayView2<F>, labels: &LabelSequence) -> Result<CtcResult<F>> {
    let (frames, classes) = logits.dim();
    if frames == 0 {
        return Err(Error::EmptySequence("CTC input has no frames"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    check_labels(labels, classes)?;
    let required = labels.min_frames();
    if frames < required {
        return Err(Error::Infeasible {
            labels: labels.len(),
            required,
            frames,
        });
    }

    let logp = log_softmax_rows(logits.mapv(|v| v.f64()).view());
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(labels.as_slice().iter().flat_map(|&l| [l, BLANK]))
        .map(|l| l as usize)
        .collect();
    let states = ext.len();
    // Skipping the preceding blank is allowed into a label that differs from
    // the label two states back.
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK as usize && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((frames, states), neg);
    alpha[[0, 0]] = logp[[0, ext[0]]];
    if states > 1 {
        alpha[[0, 1]] = logp[[0, ext[1]]];
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != neg {
                alpha[[t, s]] = acc + logp[[t, ext[s]]];
            }
        }
    }
    let mut log_prob = alpha[[frames - 1, states - 1]];
    if states > 1 {
        log_prob = log_add(log_prob, alpha[[frames - 1, states - 2]]);
    }
    if !log_prob.is_finite() {
        return Err(Error::Numeric(format!("CTC log-likelihood is {log_prob}")));
    }

    // beta[t][s]: log-probability of emitting the rest of the target after
    // frame t, given state s at frame t (frame t's emission excluded).
    let mut beta = Array2::from_elem((frames, states), neg);
    beta[[frames - 1, states - 1]] = 0.0;
    if states > 1 {
        beta[[frames - 1, states - 2]] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]] + logp[[t + 1, ext[s]]];
            if s + 1 < states {
                acc = log_add(acc, beta[[t + 1, s + 1]] + logp[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_add(acc, beta[[t + 1, s + 2]] + logp[[t + 1, ext[s + 2]]]);
            }
            beta[[t, s]] = acc;
        }
    }

    let mut grad = Array2::<F>::zeros((frames, classes));
    let mut occupancy = vec![0.0f64; classes];
    for t in 0..frames {
        occupancy.fill(0.0);
        for s in 0..states {
            let a = alpha[[t, s]];
            let b = beta[[t, s]];
            if a != neg && b != neg {
                occupancy[ext[s]] += (a + b - log_prob).exp();
            }
        }
        for k in 0..classes {
            grad[[t, k]] = F::lit(logp[[t, k]].exp() - occupancy[k]);
        }
    }
    Ok(CtcResult {
        neg_log_likelihood: -log_prob,
        logit_gradients: grad,
    })
}

/// Merges repeated symbols, then removes blanks.
pub fn collapse(path: &[Label]) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    LabelSequence(out)
}

/// Frame-wise argmax (lowest class index wins ties), then [`collapse`].
pub fn greedy_decode<F: Real>(logits: ArrayView2<F>) -> LabelSequence {
    let path: Vec<Label> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as Label
        })
        .collect();
    collapse(&path)
}
