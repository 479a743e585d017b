//! Candidate scoring and action selection over the panoramic action space.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::encoders::AttentionParams;
use crate::error::{Error, Result};
use crate::math;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct ActionDistribution {
    /// `f̂ᶜ_t`, one logit per candidate.
    pub logits: Var,
    pub log_probs: Var,
    /// `p_t`
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Scores the rows of `candidates` (`(k+1) × (D_v+4)`, stop last) against the
/// cross-modal context: `logit_j = c_j · (W_c f̂_t)`.
pub fn score_candidates(
    attn: &AttentionParams,
    tape: &mut Tape,
    store: &ParamStore,
    candidates: Var,
    cross_modal: Var,
) -> Result<ActionDistribution> {
    let att = attn.attend_matrix(tape, store, candidates, cross_modal)?;
    if tape.value(att.logits).iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN candidate logit".into()));
    }
    let log_probs = tape.log_softmax(att.logits);
    Ok(ActionDistribution {
        logits: att.logits,
        log_probs,
        probs: tape.value(att.weights).to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    /// Follow the teacher regardless of `p_t`.
    Teacher,
    /// Draw from `p_t`.
    Sample,
    /// Highest probability, lowest index on ties.
    Argmax,
}

impl SelectMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectMode::Teacher => "teacher",
            SelectMode::Sample => "sample",
            SelectMode::Argmax => "argmax",
        }
    }
}

pub fn select_action<R: Rng + ?Sized>(
    probs: &[f64],
    mode: SelectMode,
    teacher: Option<usize>,
    rng: &mut R,
) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::Empty("action distribution"));
    }
    match mode {
        SelectMode::Teacher => {
            let t = teacher.ok_or(Error::MissingTeacherActions)?;
            if t >= probs.len() {
                return Err(Error::InvalidArgument("teacher index out of range".into()));
            }
            Ok(t)
        }
        SelectMode::Argmax => Ok(math::argmax(probs)),
        SelectMode::Sample => {
            let dist = WeightedIndex::new(probs)
                .map_err(|e| Error::InvalidArgument(alloc::format!("bad distribution: {e}")))?;
            Ok(dist.sample(rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn setup(feature_dim: usize, query_dim: usize) -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let attn = AttentionParams::new(&mut store, "c", feature_dim, query_dim, &mut stream(9, 9));
        (store, attn)
    }

    #[test]
    fn stop_only_is_certain() {
        let (store, attn) = setup(3, 2);
        let mut tape = Tape::new();
        let c = tape.matrix(1, 3, alloc::vec![0.0; 3]);
        let q = tape.vector(alloc::vec![0.4, -0.2]);
        let d = score_candidates(&attn, &mut tape, &store, c, q).unwrap();
        assert_eq!(d.probs, alloc::vec![1.0]);
    }

    #[test]
    fn identical_candidates_split_evenly() {
        let (store, attn) = setup(3, 2);
        let mut tape = Tape::new();
        let c = tape.matrix(2, 3, alloc::vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
        let q = tape.vector(alloc::vec![0.4, -0.2]);
        let d = score_candidates(&attn, &mut tape, &store, c, q).unwrap();
        assert_eq!(d.probs, alloc::vec![0.5, 0.5]);
    }

    #[test]
    fn four_candidates_match_softmax_oracle() {
        let (store, attn) = setup(3, 2);
        let feats = [[0.3, -0.1, 0.8], [1.0, 0.5, -0.5], [-0.7, 0.2, 0.1], [0.0, 0.0, 0.0]];
        let query = [0.6, -1.3];
        let mut tape = Tape::new();
        let c = tape.matrix(4, 3, feats.iter().flatten().copied().collect());
        let q = tape.vector(query.to_vec());
        let d = score_candidates(&attn, &mut tape, &store, c, q).unwrap();

        let w = &store.get(attn.w).data;
        let proj: Vec<f64> = (0..3).map(|r| w[r * 2] * query[0] + w[r * 2 + 1] * query[1]).collect();
        let logits: Vec<f64> = feats
            .iter()
            .map(|f| f.iter().zip(&proj).map(|(a, b)| a * b).sum())
            .collect();
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        for (p, l) in d.probs.iter().zip(&logits) {
            assert!((p - l.exp() / z).abs() < 1e-6);
        }
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn selection_modes() {
        let mut rng = stream(1, 2);
        let p = [0.1, 0.7, 0.2];
        assert_eq!(select_action(&p, SelectMode::Argmax, None, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[0.1, 0.2, 0.3, 0.4], SelectMode::Teacher, Some(3), &mut rng).unwrap(), 3);
        assert_eq!(select_action(&[0.9, 0.05, 0.03, 0.02], SelectMode::Teacher, Some(3), &mut rng).unwrap(), 3);
        assert_eq!(
            select_action(&p, SelectMode::Teacher, None, &mut rng),
            Err(Error::MissingTeacherActions)
        );
        assert_eq!(select_action(&[0.4, 0.4, 0.2], SelectMode::Argmax, None, &mut rng).unwrap(), 0);
    }

    #[test]
    fn sampling_frequencies_follow_probabilities() {
        let mut rng = stream(5, 5);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| select_action(&[0.25, 0.75], SelectMode::Sample, None, &mut rng).unwrap() == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let p = [0.2, 0.3, 0.5];
        let draw = |seed| {
            let mut rng = stream(seed, 0);
            (0..50)
                .map(|_| select_action(&p, SelectMode::Sample, None, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }
}
