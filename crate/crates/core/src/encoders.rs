//! Cross-modal forward pass: bilinear attention, the trajectory-long vision
//! history, the bidirectional instruction encoder and vision-language fusion.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphworld::{Instruction, NUM_VIEWS};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Bilinear attention site: `αᵢ = softmax_i(fᵢ · (W q))`, fused `Σ αᵢ fᵢ`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// `feature_dim × query_dim`
    pub w: ParamId,
    pub feature_dim: usize,
    pub query_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub fused: Var,
    pub weights: Var,
    pub logits: Var,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        feature_dim: usize,
        query_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.uniform(&format!("{name}.w"), feature_dim, query_dim, query_dim, rng),
            feature_dim,
            query_dim,
        }
    }

    /// Attends over the rows of `features` (`n × feature_dim`).
    pub fn attend_matrix(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        query: Var,
    ) -> Result<Attended> {
        let (n, d) = tape.shape(features);
        if n == 0 {
            return Err(Error::Empty("attention features"));
        }
        if d != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: d,
            });
        }
        if tape.dim(query) != self.query_dim {
            return Err(Error::DimensionMismatch {
                expected: self.query_dim,
                found: tape.dim(query),
            });
        }
        let w = tape.param(store, self.w);
        let projected = tape.matvec(w, query);
        let logits = tape.matvec(features, projected);
        let weights = tape.softmax(logits);
        let fused = tape.tmatvec(features, weights);
        Ok(Attended {
            fused,
            weights,
            logits,
        })
    }

    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &[Var],
        query: Var,
    ) -> Result<Attended> {
        if features.is_empty() {
            return Err(Error::Empty("attention features"));
        }
        if let Some(&bad) = features.iter().find(|&&f| tape.dim(f) != self.feature_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: tape.dim(bad),
            });
        }
        let m = tape.stack(features);
        self.attend_matrix(tape, store, m, query)
    }
}

/// Single-layer LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_dim + hidden;
        Self {
            wx: store.uniform(&format!("{name}.wx"), 4 * hidden, input_dim, fan_in, rng),
            wh: store.uniform(&format!("{name}.wh"), 4 * hidden, hidden, fan_in, rng),
            b: store.uniform(&format!("{name}.b"), 4 * hidden, 1, fan_in, rng),
            input_dim,
            hidden,
        }
    }

    /// One step; returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let (wx, wh, b) = (
            tape.param(store, self.wx),
            tape.param(store, self.wh),
            tape.param(store, self.b),
        );
        let gx = tape.matvec(wx, x);
        let gh = tape.matvec(wh, h);
        let pre = tape.sum_n(&[gx, gh, b]);
        let n = self.hidden;
        let i = tape.slice(pre, 0, n);
        let f = tape.slice(pre, n, n);
        let g = tape.slice(pre, 2 * n, n);
        let o = tape.slice(pre, 3 * n, n);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc);
        (h_next, c_next)
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        (
            tape.vector(alloc::vec![0.0; self.hidden]),
            tape.vector(alloc::vec![0.0; self.hidden]),
        )
    }
}

/// Which context queries the panorama attention at step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VisionQuery {
    /// The previous cross-modal context `f̂_{t-1}`.
    #[default]
    CrossModal,
    /// The previous vision-history state `h_{t-1}`.
    VisionHistory,
}

impl VisionQuery {
    pub fn as_str(self) -> &'static str {
        match self {
            VisionQuery::CrossModal => "cross_modal",
            VisionQuery::VisionHistory => "vision_history",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross_modal" => Ok(VisionQuery::CrossModal),
            "vision_history" => Ok(VisionQuery::VisionHistory),
            other => Err(Error::InvalidArgument(format!("unknown vision query {other}"))),
        }
    }
}

/// Panorama attention followed by the trajectory-long `LSTM_v`.
#[derive(Clone, Copy, Debug)]
pub struct VisionEncoder {
    pub attn: AttentionParams,
    pub lstm: Lstm,
    /// Learned initial `h_{-1}`, `c_{-1}` and `f̂_{-1}`, zero at init.
    pub init_h: ParamId,
    pub init_c: ParamId,
    pub init_context: ParamId,
    pub query: VisionQuery,
}

/// Recurrent state carried across a whole trajectory.
#[derive(Clone, Copy, Debug)]
pub struct VisionHistory {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct VisionStep {
    /// `f̂ᵒ_t`
    pub attended: Var,
    pub weights: Var,
    /// `f̃ᵒ_t = h_t`
    pub context: Var,
    pub state: VisionHistory,
}

impl VisionEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        hidden: usize,
        query: VisionQuery,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: AttentionParams::new(store, "vision.attn_o", feature_dim, hidden, rng),
            lstm: Lstm::new(store, "vision.lstm_v", feature_dim, hidden, rng),
            init_h: store.zeros("vision.init_h", hidden, 1),
            init_c: store.zeros("vision.init_c", hidden, 1),
            init_context: store.zeros("vision.init_context", hidden, 1),
            query,
        }
    }

    /// `(h_{-1}, c_{-1})` and `f̂_{-1}`.
    pub fn initial(&self, tape: &mut Tape, store: &ParamStore) -> (VisionHistory, Var) {
        let h = tape.param(store, self.init_h);
        let c = tape.param(store, self.init_c);
        let ctx = tape.param(store, self.init_context);
        (VisionHistory { h, c }, ctx)
    }

    /// One step of the vision history. `views` is the `36 × (D_v+4)` panorama.
    pub fn embed_vision_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        views: Var,
        prev_cross_modal: Var,
        prev: VisionHistory,
    ) -> Result<VisionStep> {
        let (n, _) = tape.shape(views);
        if n != NUM_VIEWS {
            return Err(Error::DimensionMismatch {
                expected: NUM_VIEWS,
                found: n,
            });
        }
        let query = match self.query {
            VisionQuery::CrossModal => prev_cross_modal,
            VisionQuery::VisionHistory => prev.h,
        };
        let att = self.attn.attend_matrix(tape, store, views, query)?;
        let (h, c) = self.lstm.step(tape, store, att.fused, prev.h, prev.c);
        Ok(VisionStep {
            attended: att.fused,
            weights: att.weights,
            context: h,
            state: VisionHistory { h, c },
        })
    }
}

/// Word embeddings, a bidirectional LSTM and a projection back to `D_h`.
#[derive(Clone, Copy, Debug)]
pub struct LanguageEncoder {
    /// `vocab × embed_dim`
    pub embedding: ParamId,
    pub forward: Lstm,
    pub backward: Lstm,
    /// `hidden × 2·hidden`
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub vocab_size: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct LanguageEncoding {
    /// `fʷ_i`
    pub embeddings: Vec<Var>,
    /// `f̃ʷ_i`, one per token.
    pub features: Vec<Var>,
    /// Rows are `features`.
    pub matrix: Var,
    /// `f̄ʷ`
    pub global: Var,
}

impl LanguageEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            embedding: store.uniform("language.embedding", vocab_size, embed_dim, embed_dim, rng),
            forward: Lstm::new(store, "language.lstm_fwd", embed_dim, hidden, rng),
            backward: Lstm::new(store, "language.lstm_bwd", embed_dim, hidden, rng),
            proj_w: store.uniform("language.proj.w", hidden, 2 * hidden, 2 * hidden, rng),
            proj_b: store.uniform("language.proj.b", hidden, 1, 2 * hidden, rng),
            vocab_size,
            hidden,
        }
    }

    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, token: u32) -> Result<Var> {
        if token as usize >= self.vocab_size {
            return Err(Error::OutOfVocabulary {
                token,
                vocab: self.vocab_size,
            });
        }
        let e = tape.param(store, self.embedding);
        Ok(tape.row(e, token as usize))
    }

    pub fn encode_instruction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        instruction: &Instruction,
    ) -> Result<LanguageEncoding> {
        instruction.check_vocab(self.vocab_size)?;
        let embeddings = instruction
            .tokens
            .iter()
            .map(|&t| self.embed(tape, store, t))
            .collect::<Result<Vec<_>>>()?;
        let n = embeddings.len();

        let mut fwd = Vec::with_capacity(n);
        let (mut h, mut c) = self.forward.zero_state(tape);
        for &x in &embeddings {
            (h, c) = self.forward.step(tape, store, x, h, c);
            fwd.push(h);
        }
        let mut bwd = alloc::vec![h; n];
        let (mut h, mut c) = self.backward.zero_state(tape);
        for i in (0..n).rev() {
            (h, c) = self.backward.step(tape, store, embeddings[i], h, c);
            bwd[i] = h;
        }

        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let features: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b_)| {
                let cat = tape.concat(&[f, b_]);
                tape.affine(w, cat, b)
            })
            .collect();
        let matrix = tape.stack(&features);
        let global = tape.mean_n(&features);
        Ok(LanguageEncoding {
            embeddings,
            features,
            matrix,
            global,
        })
    }
}

/// `f̂_t = Attn_w({f̃ʷ_i}, f̃ᵒ_t)`
#[derive(Clone, Copy, Debug)]
pub struct CrossModalContext {
    pub context: Var,
    /// Attention over instruction tokens, logged for heatmaps.
    pub weights: Var,
}

pub fn fuse_cross_modal(
    attn: &AttentionParams,
    tape: &mut Tape,
    store: &ParamStore,
    lang: &LanguageEncoding,
    vision_context: Var,
) -> Result<CrossModalContext> {
    let att = attn.attend_matrix(tape, store, lang.matrix, vision_context)?;
    Ok(CrossModalContext {
        context: att.fused,
        weights: att.weights,
    })
}
