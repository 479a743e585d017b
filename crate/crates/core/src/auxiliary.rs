//! Self-supervised reasoning losses: trajectory retelling, progress
//! estimation, cross-modal matching and angle prediction, plus their
//! weighted total.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoders::{AttentionParams, LanguageEncoder, Lstm};
use crate::error::{Error, Result};
use crate::graphworld::{vocab, Instruction};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// `-[t log σ(z) + (1-t) log σ(-z)]` for a scalar logit node.
pub fn bce_with_logit(tape: &mut Tape, logit: Var, target: f64) -> Var {
    let pos = tape.log_sigmoid(logit);
    let neg_logit = tape.neg(logit);
    let neg = tape.log_sigmoid(neg_logit);
    let a = tape.scale(pos, -target);
    let b = tape.scale(neg, -(1.0 - target));
    let s = tape.add(a, b);
    tape.sum(s)
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Var {
    let s = tape.sum_n(terms);
    tape.scale(s, 1.0 / terms.len() as f64)
}

/// Trajectory retelling decoder: `LSTM_s` over ground-truth word embeddings,
/// `Attn_s` over the vision history, then a vocabulary projection of the
/// attended context.
#[derive(Clone, Copy, Debug)]
pub struct SpeakerHead {
    pub lstm: Lstm,
    pub attn: AttentionParams,
    /// `vocab × hidden`
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl SpeakerHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            lstm: Lstm::new(store, "speaker.lstm_s", embed_dim, hidden, rng),
            attn: AttentionParams::new(store, "speaker.attn_s", hidden, hidden, rng),
            out_w: store.uniform("speaker.out.w", vocab_size, hidden, hidden, rng),
            out_b: store.uniform("speaker.out.b", vocab_size, 1, hidden, rng),
        }
    }

    pub fn params(&self) -> [ParamId; 6] {
        [
            self.lstm.wx,
            self.lstm.wh,
            self.lstm.b,
            self.attn.w,
            self.out_w,
            self.out_b,
        ]
    }

    /// Log-distribution over the next word given the previous word's
    /// embedding; returns `(log_probs, h, c)`.
    fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        history: Var,
        input: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var, Var)> {
        let (h, c) = self.lstm.step(tape, store, input, h, c);
        let ctx = self.attn.attend_matrix(tape, store, history, h)?;
        let w = tape.param(store, self.out_w);
        let b = tape.param(store, self.out_b);
        let logits = tape.affine(w, ctx.fused, b);
        Ok((tape.log_softmax(logits), h, c))
    }
}

/// `-(1/l) Σ_{i=1..l} log p(w_i | f̂ˢ_i)` with teacher forcing: position `i`
/// consumes the embedding of `w_{i-1}`.
pub fn speaker_loss(
    head: &SpeakerHead,
    language: &LanguageEncoder,
    tape: &mut Tape,
    store: &ParamStore,
    instruction: &Instruction,
    history: &[Var],
) -> Result<Var> {
    if history.is_empty() {
        return Err(Error::Empty("vision history"));
    }
    if instruction.tokens.len() < 2 {
        return Err(Error::Empty("instruction"));
    }
    instruction.check_vocab(language.vocab_size)?;
    let hist = tape.stack(history);
    let (mut h, mut c) = head.lstm.zero_state(tape);
    let mut terms = Vec::with_capacity(instruction.len());
    for pair in instruction.tokens.windows(2) {
        let x = language.embed(tape, store, pair[0])?;
        let (lp, h2, c2) = head.step(tape, store, hist, x, h, c)?;
        (h, c) = (h2, c2);
        let picked = tape.pick(lp, pair[1] as usize);
        terms.push(tape.neg(picked));
    }
    Ok(mean(tape, &terms))
}

/// Greedy decoding from BOS until EOS or `max_len` generated tokens. The
/// returned instruction starts with BOS and may lack EOS when truncated.
pub fn speaker_generate(
    head: &SpeakerHead,
    language: &LanguageEncoder,
    store: &ParamStore,
    history: &[Vec<f64>],
    max_len: usize,
) -> Result<Instruction> {
    if history.is_empty() {
        return Err(Error::Empty("vision history"));
    }
    let mut tape = Tape::new();
    let dim = history[0].len();
    let hist = tape.matrix(history.len(), dim, history.concat());
    let (mut h, mut c) = head.lstm.zero_state(&mut tape);
    let mut tokens = vec![vocab::BOS];
    let mut prev = vocab::BOS;
    for _ in 0..max_len {
        let x = language.embed(&mut tape, store, prev)?;
        let (lp, h2, c2) = head.step(&mut tape, store, hist, x, h, c)?;
        (h, c) = (h2, c2);
        let next = math::argmax(tape.value(lp)) as u32;
        tokens.push(next);
        if next == vocab::EOS {
            break;
        }
        prev = next;
    }
    Ok(Instruction::new(tokens))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProgressLoss {
    /// Soft-target binary cross entropy on `{t/T, 1 - t/T}`.
    #[default]
    Bce,
    /// Squared error `(r_t - σ)²`.
    Mse,
}

impl ProgressLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            ProgressLoss::Bce => "bce",
            ProgressLoss::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(ProgressLoss::Bce),
            "mse" => Ok(ProgressLoss::Mse),
            other => Err(Error::InvalidArgument(format!("unknown progress loss {other}"))),
        }
    }
}

/// `σ(W_r f̂_t + b)`
#[derive(Clone, Copy, Debug)]
pub struct ProgressHead {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub loss: Var,
    /// Per-step sigmoid outputs.
    pub predictions: Vec<f64>,
}

impl ProgressHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: store.uniform("progress.w", 1, hidden, hidden, rng),
            b: store.zeros("progress.b", 1, 1),
        }
    }

    pub fn logit(&self, tape: &mut Tape, store: &ParamStore, context: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(w, context, b)
    }
}

/// Progress label `r_t = t/T` for 1-based step `t`.
pub fn progress_label(t: usize, total: usize) -> f64 {
    t as f64 / total as f64
}

pub fn progress_loss(
    head: &ProgressHead,
    tape: &mut Tape,
    store: &ParamStore,
    contexts: &[Var],
    kind: ProgressLoss,
) -> Result<HeadOutput> {
    let total = contexts.len();
    if total == 0 {
        return Err(Error::Empty("trajectory"));
    }
    let mut terms = Vec::with_capacity(total);
    let mut predictions = Vec::with_capacity(total);
    for (i, &ctx) in contexts.iter().enumerate() {
        let r = progress_label(i + 1, total);
        let z = head.logit(tape, store, ctx);
        predictions.push(math::sigmoid(tape.scalar_value(z)));
        let term = match kind {
            ProgressLoss::Bce => bce_with_logit(tape, z, r),
            ProgressLoss::Mse => {
                let s = tape.sigmoid(z);
                let diff = tape.add_const(s, -r);
                let sq = tape.square(diff);
                tape.sum(sq)
            }
        };
        terms.push(term);
    }
    Ok(HeadOutput {
        loss: mean(tape, &terms),
        predictions,
    })
}

/// `σ(W_m [f̂_t, f̄′ʷ] + b)`
#[derive(Clone, Copy, Debug)]
pub struct MatchingHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl MatchingHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: store.uniform("matching.w", 1, 2 * hidden, 2 * hidden, rng),
            b: store.zeros("matching.b", 1, 1),
        }
    }
}

/// One episode's contribution to the matching task.
#[derive(Clone, Debug)]
pub struct MatchingInput {
    pub contexts: Vec<Var>,
    pub global: Var,
}

#[derive(Clone, Debug)]
pub struct MatchingOutput {
    /// Mean over episodes of the per-episode loss.
    pub loss: Var,
    /// `m` per episode: true when the instruction feature is the episode's own.
    pub labels: Vec<bool>,
    /// Per episode, per step matching probability.
    pub probabilities: Vec<Vec<f64>>,
}

/// Chooses, for every episode of a batch, whose global language feature it
/// receives. Each episode is selected with probability 0.5; selected
/// episodes rotate their features by one position so that each receives a
/// different one. A lone selected episode borrows from a random partner.
pub fn shuffle_plan<R: Rng + ?Sized>(batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall);
    }
    let selected: Vec<usize> = (0..batch_size).filter(|_| rng.random_bool(0.5)).collect();
    let mut plan: Vec<usize> = (0..batch_size).collect();
    match selected.len() {
        0 => {}
        1 => {
            let i = selected[0];
            let mut j = rng.random_range(0..batch_size - 1);
            if j >= i {
                j += 1;
            }
            plan[i] = j;
        }
        n => {
            for k in 0..n {
                plan[selected[k]] = selected[(k + 1) % n];
            }
        }
    }
    Ok(plan)
}

pub fn matching_loss<R: Rng + ?Sized>(
    head: &MatchingHead,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[MatchingInput],
    rng: &mut R,
) -> Result<MatchingOutput> {
    let plan = shuffle_plan(batch.len(), rng)?;
    matching_loss_with_plan(head, tape, store, batch, &plan)
}

/// Matching loss for an explicit source assignment (`plan[i] == i` keeps
/// episode `i`'s own feature).
pub fn matching_loss_with_plan(
    head: &MatchingHead,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[MatchingInput],
    plan: &[usize],
) -> Result<MatchingOutput> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall);
    }
    if plan.len() != batch.len() {
        return Err(Error::LengthMismatch("shuffle plan"));
    }
    let w = tape.param(store, head.w);
    let b = tape.param(store, head.b);
    let mut episode_losses = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    let mut probabilities = Vec::with_capacity(batch.len());
    for (i, item) in batch.iter().enumerate() {
        if item.contexts.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        let matched = plan[i] == i;
        let target = if matched { 1.0 } else { 0.0 };
        let global = batch[plan[i]].global;
        let mut terms = Vec::with_capacity(item.contexts.len());
        let mut probs = Vec::with_capacity(item.contexts.len());
        for &ctx in &item.contexts {
            let cat = tape.concat(&[ctx, global]);
            let z = tape.affine(w, cat, b);
            probs.push(math::sigmoid(tape.scalar_value(z)));
            terms.push(bce_with_logit(tape, z, target));
        }
        episode_losses.push(mean(tape, &terms));
        labels.push(matched);
        probabilities.push(probs);
    }
    Ok(MatchingOutput {
        loss: mean(tape, &episode_losses),
        labels,
        probabilities,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AngleNorm {
    #[default]
    L2,
    L1,
}

impl AngleNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            AngleNorm::L2 => "l2",
            AngleNorm::L1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(AngleNorm::L2),
            "l1" => Ok(AngleNorm::L1),
            other => Err(Error::InvalidArgument(format!("unknown angle norm {other}"))),
        }
    }
}

/// `W_e f̂_t + b`, regressing the teacher candidate's orientation quad.
#[derive(Clone, Copy, Debug)]
pub struct AngleHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl AngleHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: store.uniform("angle.w", 4, hidden, hidden, rng),
            b: store.zeros("angle.b", 4, 1),
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// `(1/T) Σ_t ‖e_t - (W_e f̂_t + b)‖`
pub fn angle_loss(
    head: &AngleHead,
    tape: &mut Tape,
    store: &ParamStore,
    contexts: &[Var],
    targets: &[[f64; 4]],
    norm: AngleNorm,
) -> Result<Var> {
    if contexts.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if targets.len() != contexts.len() {
        return Err(Error::MissingTeacherActions);
    }
    let w = tape.param(store, head.w);
    let b = tape.param(store, head.b);
    let mut terms = Vec::with_capacity(contexts.len());
    for (&ctx, e) in contexts.iter().zip(targets) {
        let pred = tape.affine(w, ctx, b);
        let target = tape.vector(e.to_vec());
        let diff = tape.sub(target, pred);
        terms.push(match norm {
            AngleNorm::L2 => tape.norm2(diff),
            AngleNorm::L1 => tape.norm1(diff),
        });
    }
    Ok(mean(tape, &terms))
}

/// Per-task weights of the auxiliary total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxWeights {
    pub speaker: f64,
    pub progress: f64,
    pub matching: f64,
    pub angle: f64,
}

impl Default for AuxWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl AuxWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            speaker: w,
            progress: w,
            matching: w,
            angle: w,
        }
    }

    pub fn none() -> Self {
        Self::uniform(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.as_array() {
            if !(w >= 0.0) {
                return Err(Error::NegativeWeight(w));
            }
        }
        Ok(())
    }

    /// Order: speaker, progress, matching, angle.
    pub fn as_array(&self) -> [f64; 4] {
        [self.speaker, self.progress, self.matching, self.angle]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            speaker: self.speaker * k,
            progress: self.progress * k,
            matching: self.matching * k,
            angle: self.angle * k,
        }
    }
}

/// Which rollout a loss is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    TeacherForced,
    StudentForced,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AuxTerms {
    pub speaker: Option<Var>,
    pub progress: Option<Var>,
    pub matching: Option<Var>,
    pub angle: Option<Var>,
}

/// Weighted sum of the available auxiliary terms. Speaker and angle terms
/// never contribute on student-forced passes; zero-weighted terms are left
/// off the tape entirely. Returns `None` when nothing contributes.
pub fn total_aux_loss(
    tape: &mut Tape,
    terms: &AuxTerms,
    weights: &AuxWeights,
    pass: Pass,
) -> Result<Option<Var>> {
    weights.validate()?;
    let teacher_only = pass == Pass::TeacherForced;
    let candidates = [
        (terms.speaker.filter(|_| teacher_only), weights.speaker),
        (terms.progress, weights.progress),
        (terms.matching, weights.matching),
        (terms.angle.filter(|_| teacher_only), weights.angle),
    ];
    let parts: Vec<Var> = candidates
        .into_iter()
        .filter_map(|(t, w)| t.filter(|_| w > 0.0).map(|t| (t, w)))
        .map(|(t, w)| tape.scale(t, w))
        .collect();
    Ok(if parts.is_empty() {
        None
    } else {
        Some(tape.sum_n(&parts))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn speaker_with_uniform_output_costs_ln2() {
        let mut store = ParamStore::new();
        let mut rng = stream(1, 1);
        let language = LanguageEncoder::new(&mut store, 2, 3, 4, &mut rng);
        let head = SpeakerHead::new(&mut store, 2, 3, 4, &mut rng);
        for id in [head.out_w, head.out_b] {
            store.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let hist: Vec<Var> = (0..3).map(|k| tape.vector(vec![0.1 * k as f64; 4])).collect();
        let ins = Instruction::new(vec![0, 1, 1, 0]);
        let loss = speaker_loss(&head, &language, &mut tape, &store, &ins, &hist).unwrap();
        assert!((tape.scalar_value(loss) - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn speaker_matches_per_token_oracle() {
        let mut store = ParamStore::new();
        let mut rng = stream(2, 3);
        let language = LanguageEncoder::new(&mut store, 8, 3, 4, &mut rng);
        let head = SpeakerHead::new(&mut store, 8, 3, 4, &mut rng);
        let ins = Instruction::new(vec![1, 5, 2]);
        let mut tape = Tape::new();
        let hist: Vec<Var> = (0..2).map(|k| tape.vector(vec![0.3 - k as f64, 0.2, -0.1, 0.5])).collect();
        let loss = speaker_loss(&head, &language, &mut tape, &store, &ins, &hist).unwrap();

        // Oracle: recompute each position's distribution separately and
        // average -log p over the two predicted tokens.
        let mut t2 = Tape::new();
        let h2: Vec<Var> = (0..2).map(|k| t2.vector(vec![0.3 - k as f64, 0.2, -0.1, 0.5])).collect();
        let hm = t2.stack(&h2);
        let (mut h, mut c) = head.lstm.zero_state(&mut t2);
        let mut nll = 0.0;
        for pair in ins.tokens.windows(2) {
            let x = language.embed(&mut t2, &store, pair[0]).unwrap();
            let (lp, hh, cc) = head.step(&mut t2, &store, hm, x, h, c).unwrap();
            h = hh;
            c = cc;
            let probs = math::softmax(t2.value(lp));
            nll -= probs[pair[1] as usize].ln();
        }
        assert!((tape.scalar_value(loss) - nll / 2.0).abs() < 1e-8);
    }

    #[test]
    fn speaker_rejects_empty_inputs() {
        let mut store = ParamStore::new();
        let mut rng = stream(2, 3);
        let language = LanguageEncoder::new(&mut store, 8, 3, 4, &mut rng);
        let head = SpeakerHead::new(&mut store, 8, 3, 4, &mut rng);
        let mut tape = Tape::new();
        let v = tape.vector(vec![0.0; 4]);
        let ins = Instruction::new(vec![1, 2]);
        assert!(speaker_loss(&head, &language, &mut tape, &store, &ins, &[]).is_err());
        let short = Instruction::new(vec![1]);
        assert!(speaker_loss(&head, &language, &mut tape, &store, &short, &[v]).is_err());
    }

    #[test]
    fn speaker_generation_is_greedy_and_bounded() {
        let mut store = ParamStore::new();
        let mut rng = stream(4, 4);
        let language = LanguageEncoder::new(&mut store, vocab::SIZE, 6, 4, &mut rng);
        let head = SpeakerHead::new(&mut store, vocab::SIZE, 6, 4, &mut rng);
        let hist = vec![vec![0.2, -0.3, 0.5, 0.1], vec![0.0, 0.4, -0.2, 0.3]];
        let one = speaker_generate(&head, &language, &store, &hist, 1).unwrap();
        assert_eq!(one.tokens.len(), 2);
        assert_eq!(one.tokens[0], vocab::BOS);
        let a = speaker_generate(&head, &language, &store, &hist, 12).unwrap();
        let b = speaker_generate(&head, &language, &store, &hist, 12).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= 13);
        assert!(speaker_generate(&head, &language, &store, &[], 5).is_err());
    }

    fn progress_fixture(preds: &[f64]) -> (ParamStore, ProgressHead, Tape, Vec<Var>) {
        // Contexts are scalars (hidden = 1) with w = 1, b = 0, so the logit is
        // the context itself.
        let mut store = ParamStore::new();
        let head = ProgressHead {
            w: store.insert("progress.w", 1, 1, vec![1.0]),
            b: store.insert("progress.b", 1, 1, vec![0.0]),
        };
        let mut tape = Tape::new();
        let ctx = preds
            .iter()
            .map(|&p: &f64| tape.vector(vec![(p / (1.0 - p)).ln()]))
            .collect();
        (store, head, tape, ctx)
    }

    #[test]
    fn progress_at_label_equals_label_entropy() {
        // Labels for T = 3 are 1/3, 2/3, 1; predicting them exactly leaves
        // only the binary entropy of each label.
        let r = [1.0 / 3.0, 2.0 / 3.0];
        let (store, head, mut tape, ctx) = progress_fixture(&[r[0], r[1], 1.0 - 1e-12]);
        let out = progress_loss(&head, &mut tape, &store, &ctx, ProgressLoss::Bce).unwrap();
        let entropy: f64 =
            r.iter().map(|&x: &f64| -(x * x.ln() + (1.0 - x) * (1.0 - x).ln())).sum::<f64>() / 3.0;
        assert!((tape.scalar_value(out.loss) - entropy).abs() < 1e-8);
        assert!(tape.scalar_value(out.loss) > 0.0);
    }

    #[test]
    fn progress_single_step_perfect_prediction_is_free() {
        let (store, head, mut tape, ctx) = progress_fixture(&[1.0 - 1e-12]);
        let out = progress_loss(&head, &mut tape, &store, &ctx, ProgressLoss::Bce).unwrap();
        assert!(tape.scalar_value(out.loss) < 1e-10);
        let err = progress_loss(&head, &mut tape, &store, &[], ProgressLoss::Bce).unwrap_err();
        assert_eq!(err, Error::Empty("trajectory"));
    }

    #[test]
    fn progress_variants_match_formula_oracle() {
        let preds = [0.2, 0.6, 0.3, 0.9];
        let labels = [0.25, 0.5, 0.75, 1.0];
        let (store, head, mut tape, ctx) = progress_fixture(&preds);
        let bce = progress_loss(&head, &mut tape, &store, &ctx, ProgressLoss::Bce).unwrap();
        let mse = progress_loss(&head, &mut tape, &store, &ctx, ProgressLoss::Mse).unwrap();
        let oracle_bce: f64 = preds
            .iter()
            .zip(&labels)
            .map(|(&p, &r): (&f64, &f64)| -(r * p.ln() + (1.0 - r) * (1.0 - p).ln()))
            .sum::<f64>()
            / 4.0;
        let oracle_mse: f64 =
            preds.iter().zip(&labels).map(|(p, r)| (r - p) * (r - p)).sum::<f64>() / 4.0;
        assert!((tape.scalar_value(bce.loss) - oracle_bce).abs() < 1e-8);
        assert!((tape.scalar_value(mse.loss) - oracle_mse).abs() < 1e-8);
        for (a, b) in bce.predictions.iter().zip(&preds) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn matching_fixture(logit: f64) -> (ParamStore, MatchingHead, Tape, Vec<MatchingInput>) {
        let mut store = ParamStore::new();
        let head = MatchingHead {
            w: store.insert("matching.w", 1, 2, vec![1.0, 0.0]),
            b: store.insert("matching.b", 1, 1, vec![0.0]),
        };
        let mut tape = Tape::new();
        let batch = (0..3)
            .map(|k| MatchingInput {
                contexts: vec![tape.vector(vec![logit]), tape.vector(vec![logit])],
                global: tape.vector(vec![k as f64]),
            })
            .collect();
        (store, head, tape, batch)
    }

    #[test]
    fn matching_at_half_probability_costs_ln2() {
        let (store, head, mut tape, batch) = matching_fixture(0.0);
        let out = matching_loss(&head, &mut tape, &store, &batch, &mut stream(1, 1)).unwrap();
        assert!((tape.scalar_value(out.loss) - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn matching_perfect_classifier_is_free_and_identity_plan_keeps_labels() {
        let (store, head, mut tape, batch) = matching_fixture(60.0);
        let out = matching_loss_with_plan(&head, &mut tape, &store, &batch, &[0, 1, 2]).unwrap();
        assert!(out.labels.iter().all(|&m| m));
        assert!(tape.scalar_value(out.loss) < 1e-20);
        assert!(matches!(
            matching_loss_with_plan(&head, &mut tape, &store, &batch[..1], &[0]),
            Err(Error::BatchTooSmall)
        ));
    }

    #[test]
    fn shuffled_episodes_always_receive_another_feature() {
        let mut rng = stream(8, 8);
        for size in 2..9 {
            for _ in 0..200 {
                let plan = shuffle_plan(size, &mut rng).unwrap();
                assert!(plan.iter().all(|&p| p < size));
                let mut sources = plan.clone();
                sources.sort_unstable();
                // Rotation among the selected subset is a permutation unless a
                // lone episode borrowed a partner's feature.
                let moved = plan.iter().enumerate().filter(|(i, &p)| *i != p).count();
                if moved != 1 {
                    sources.dedup();
                    assert_eq!(sources.len(), size);
                }
            }
        }
        assert_eq!(shuffle_plan(1, &mut rng), Err(Error::BatchTooSmall));
    }

    #[test]
    fn angle_loss_cases() {
        let mut store = ParamStore::new();
        let head = AngleHead {
            w: store.insert("angle.w", 4, 1, vec![0.0; 4]),
            b: store.insert("angle.b", 4, 1, vec![0.0; 4]),
        };
        let mut tape = Tape::new();
        let ctx = tape.vector(vec![1.0]);
        let loss = angle_loss(&head, &mut tape, &store, &[ctx], &[[0.0, 1.0, 0.0, 1.0]], AngleNorm::L2).unwrap();
        assert!((tape.scalar_value(loss) - 2f64.sqrt()).abs() < 1e-15);

        let head = AngleHead {
            w: store.insert("angle2.w", 4, 1, vec![0.6, 0.8, 0.0, 1.0]),
            b: store.insert("angle2.b", 4, 1, vec![0.0; 4]),
        };
        let loss = angle_loss(&head, &mut tape, &store, &[ctx], &[[0.6, 0.8, 0.0, 1.0]], AngleNorm::L2).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
        assert_eq!(
            angle_loss(&head, &mut tape, &store, &[ctx, ctx], &[[0.0; 4]], AngleNorm::L2),
            Err(Error::MissingTeacherActions)
        );
    }

    #[test]
    fn angle_loss_matches_norm_oracle() {
        let mut store = ParamStore::new();
        let head = AngleHead::new(&mut store, 3, &mut stream(3, 3));
        let mut tape = Tape::new();
        let ctxs = [[0.1, -0.4, 0.9], [0.5, 0.5, -0.2], [-0.3, 0.0, 0.7]];
        let targets = [[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0], [0.0; 4]];
        let vars: Vec<Var> = ctxs.iter().map(|c| tape.vector(c.to_vec())).collect();
        let w = &store.get(head.w).data;
        for norm in [AngleNorm::L2, AngleNorm::L1] {
            let loss = angle_loss(&head, &mut tape, &store, &vars, &targets, norm).unwrap();
            let mut total = 0.0;
            for (c, e) in ctxs.iter().zip(&targets) {
                let diffs: Vec<f64> = (0..4)
                    .map(|r| e[r] - (0..3).map(|k| w[r * 3 + k] * c[k]).sum::<f64>())
                    .collect();
                total += match norm {
                    AngleNorm::L2 => diffs.iter().map(|d| d * d).sum::<f64>().sqrt(),
                    AngleNorm::L1 => diffs.iter().map(|d| d.abs()).sum::<f64>(),
                };
            }
            assert!((tape.scalar_value(loss) - total / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn total_aux_weighting() {
        let mut tape = Tape::new();
        let terms = AuxTerms {
            speaker: Some(tape.scalar(0.1)),
            progress: Some(tape.scalar(0.2)),
            matching: Some(tape.scalar(0.3)),
            angle: Some(tape.scalar(0.4)),
        };
        let all = |t: &mut Tape, w: AuxWeights, pass| {
            total_aux_loss(t, &terms, &w, pass).unwrap().map_or(0.0, |v| t.scalar_value(v))
        };
        assert_eq!(all(&mut tape, AuxWeights::none(), Pass::TeacherForced), 0.0);
        assert!((all(&mut tape, AuxWeights::uniform(1.0), Pass::TeacherForced) - 1.0).abs() < 1e-15);
        assert!((all(&mut tape, AuxWeights::uniform(1.0).scaled(0.5), Pass::TeacherForced) - 0.5).abs() < 1e-15);
        assert!((all(&mut tape, AuxWeights::uniform(1.0), Pass::StudentForced) - 0.5).abs() < 1e-15);
        let mut neg = AuxWeights::uniform(1.0);
        neg.angle = -1.0;
        assert_eq!(
            total_aux_loss(&mut tape, &terms, &neg, Pass::TeacherForced),
            Err(Error::NegativeWeight(-1.0))
        );
    }
}
