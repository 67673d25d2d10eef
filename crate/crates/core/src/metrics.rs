//! Sequence and word error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::LabelSequence;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub distance: usize,
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.distance += o.distance;
    }
}

/// Unit-cost Levenshtein alignment of `hypothesis` against `reference`.
///
/// The backtrace prefers substitutions, then deletions, then insertions, so
/// the split of the distance into operation counts is deterministic.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = EditOps {
        distance: d[n][m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let differs = reference[i - 1] != hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(differs) {
                ops.substitutions += usize::from(differs);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

fn check_pairs(refs: usize, hyps: usize) -> Result<()> {
    if refs != hyps {
        return Err(Error::Input(format!("{refs} references but {hyps} hypotheses")));
    }
    if refs == 0 {
        return Err(Error::Input("empty evaluation set".into()));
    }
    Ok(())
}

/// Percentage of sequences not transcribed exactly.
pub fn ser(refs: &[LabelSequence], hyps: &[LabelSequence]) -> Result<f64> {
    check_pairs(refs.len(), hyps.len())?;
    let correct = refs.iter().zip(hyps).filter(|(r, h)| r == h).count();
    Ok(100.0 * (refs.len() - correct) as f64 / refs.len() as f64)
}

/// Pooled `(S + D + I) / N` over the corpus, in percent.
pub fn wer(refs: &[LabelSequence], hyps: &[LabelSequence]) -> Result<f64> {
    Ok(score(refs, hyps)?.wer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ser: f64,
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_sequences: usize,
    pub n_words: usize,
}

pub fn score(refs: &[LabelSequence], hyps: &[LabelSequence]) -> Result<MetricReport> {
    check_pairs(refs.len(), hyps.len())?;
    let n_words: usize = refs.iter().map(LabelSequence::len).sum();
    if n_words == 0 {
        return Err(Error::Input("reference set has no words".into()));
    }
    let mut total = EditOps::default();
    for (r, h) in refs.iter().zip(hyps) {
        total += edit_distance(r.as_slice(), h.as_slice());
    }
    Ok(MetricReport {
        ser: ser(refs, hyps)?,
        wer: 100.0 * total.distance as f64 / n_words as f64,
        substitutions: total.substitutions,
        deletions: total.deletions,
        insertions: total.insertions,
        n_sequences: refs.len(),
        n_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(v: &[u32]) -> LabelSequence {
        LabelSequence(v.to_vec())
    }

    #[test]
    fn edit_examples() {
        let e = edit_distance(b"", b"abc");
        assert_eq!((e.insertions, e.distance), (3, 3));
        assert_eq!(edit_distance(b"abc", b"abc").distance, 0);
        let k = edit_distance(b"kitten", b"sitting");
        assert_eq!(k, EditOps { substitutions: 2, deletions: 0, insertions: 1, distance: 3 });
        let d = edit_distance(b"abc", b"");
        assert_eq!((d.deletions, d.distance), (3, 3));
    }

    #[test]
    fn ser_examples() {
        let refs = vec![seq(&[1]), seq(&[2, 3]), seq(&[4]), seq(&[5])];
        assert_eq!(ser(&refs, &refs).unwrap(), 0.0);
        let wrong: Vec<_> = refs.iter().map(|_| seq(&[9])).collect();
        assert_eq!(ser(&refs, &wrong).unwrap(), 100.0);
        let mut three = refs.clone();
        three[1] = seq(&[2]);
        assert_eq!(ser(&refs, &three).unwrap(), 25.0);
        assert!(ser(&[], &[]).is_err());
        assert!(ser(&refs, &refs[..2]).is_err());
    }

    #[test]
    fn wer_examples() {
        let r = vec![seq(&[1, 2, 3, 4])];
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        assert_eq!(wer(&r, &[seq(&[1, 9, 3])]).unwrap(), 50.0);
        assert_eq!(wer(&r, &[seq(&[1, 2, 7, 3, 4, 8])]).unwrap(), 50.0);
        assert!(wer(&[seq(&[])], &[seq(&[1])]).is_err());
    }

    #[test]
    fn report_counts() {
        let refs = vec![seq(&[1, 2, 3, 4]), seq(&[5, 6])];
        let hyps = vec![seq(&[1, 9, 3]), seq(&[5, 6])];
        let rep = score(&refs, &hyps).unwrap();
        assert_eq!((rep.substitutions, rep.deletions, rep.insertions), (1, 1, 0));
        assert_eq!((rep.n_sequences, rep.n_words), (2, 6));
        assert_eq!(rep.ser, 50.0);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["ser", "wer", "substitutions", "deletions", "insertions", "n_sequences", "n_words"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in proptest::collection::vec(0u8..4, 0..8),
            b in proptest::collection::vec(0u8..4, 0..8),
            c in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab.distance, edit_distance(&b, &a).distance);
            prop_assert_eq!(ab.distance, ab.substitutions + ab.deletions + ab.insertions);
            prop_assert!(ab.distance <= edit_distance(&a, &c).distance + edit_distance(&c, &b).distance);
            prop_assert_eq!(edit_distance(&a, &a).distance, 0);
            prop_assert_eq!(ab.deletions as isize - ab.insertions as isize, a.len() as isize - b.len() as isize);
        }
    }
}
