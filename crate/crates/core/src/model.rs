//! The full agent: encoders, policy, critic and auxiliary heads over one
//! parameter store, plus the episode rollout loop.

use alloc::vec::Vec;

use rand::Rng;

use crate::auxiliary::{AngleHead, MatchingHead, ProgressHead, SpeakerHead};
use crate::encoders::{
    fuse_cross_modal, AttentionParams, LanguageEncoder, LanguageEncoding, VisionEncoder,
    VisionQuery,
};
use crate::error::{Error, Result};
use crate::graphworld::{vocab, Instruction, NavGraph, INITIAL_HEADING, NUM_VIEWS, QUAD_DIM, T_MAX};
use crate::params::{ParamId, ParamStore};
use crate::policy::{score_candidates, select_action, ActionDistribution, SelectMode};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Per-view input width, `D_v + 4`.
    pub feature_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            feature_dim: crate::graphworld::DEFAULT_VIEW_DIM + QUAD_DIM,
            hidden: 64,
            embed: 32,
            vocab: vocab::SIZE,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AuxRn {
    pub dims: ModelDims,
    pub language: LanguageEncoder,
    pub vision: VisionEncoder,
    /// `Attn_w`: instruction tokens queried by the vision context.
    pub attn_w: AttentionParams,
    /// `Attn_c`: candidates queried by the cross-modal context.
    pub attn_c: AttentionParams,
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub speaker: SpeakerHead,
    pub progress: ProgressHead,
    pub matching: MatchingHead,
    pub angle: AngleHead,
}

impl AuxRn {
    /// Registers every parameter in `store`. Registration order is fixed, so
    /// the same rng state always yields the same initial weights.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: ModelDims,
        query: VisionQuery,
        rng: &mut R,
    ) -> Self {
        let h = dims.hidden;
        let language = LanguageEncoder::new(store, dims.vocab, dims.embed, h, rng);
        let vision = VisionEncoder::new(store, dims.feature_dim, h, query, rng);
        let attn_w = AttentionParams::new(store, "cross.attn_w", h, h, rng);
        let attn_c = AttentionParams::new(store, "policy.attn_c", dims.feature_dim, h, rng);
        let value_w = store.uniform("critic.w", 1, h, h, rng);
        let value_b = store.zeros("critic.b", 1, 1);
        let speaker = SpeakerHead::new(store, dims.vocab, dims.embed, h, rng);
        let progress = ProgressHead::new(store, h, rng);
        let matching = MatchingHead::new(store, h, rng);
        let angle = AngleHead::new(store, h, rng);
        Self {
            dims,
            language,
            vision,
            attn_w,
            attn_c,
            value_w,
            value_b,
            speaker,
            progress,
            matching,
            angle,
        }
    }

    /// `V_t = w · f̂_t + b`
    pub fn value(&self, tape: &mut Tape, store: &ParamStore, context: Var) -> Var {
        let w = tape.param(store, self.value_w);
        let b = tape.param(store, self.value_b);
        tape.affine(w, context, b)
    }

    pub fn critic_params(&self) -> [ParamId; 2] {
        [self.value_w, self.value_b]
    }
}

/// What the agent is asked to do.
#[derive(Clone, Copy, Debug)]
pub struct Task<'a> {
    pub start: usize,
    pub goal: usize,
    pub instruction: &'a Instruction,
}

#[derive(Clone, Debug)]
pub struct StepTrace {
    pub node: usize,
    pub heading: f64,
    /// Destination of each candidate; `None` is stop.
    pub targets: Vec<Option<usize>>,
    pub dist: ActionDistribution,
    pub teacher: usize,
    pub action: usize,
    /// `f̂_t`
    pub cross_modal: Var,
    /// `f̃ᵒ_t`
    pub vision: Var,
    pub value: Option<Var>,
    /// Orientation quad of the teacher's candidate.
    pub teacher_quad: [f64; 4],
    pub word_weights: Vec<f64>,
    pub view_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Visited nodes, starting at the task start.
    pub nodes: Vec<usize>,
    pub stopped: bool,
    pub steps: Vec<StepTrace>,
}

impl Trajectory {
    pub fn contexts(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.cross_modal).collect()
    }

    pub fn vision_history(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.vision).collect()
    }

    pub fn teacher_quads(&self) -> Vec<[f64; 4]> {
        self.steps.iter().map(|s| s.teacher_quad).collect()
    }

    pub fn log_probs(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.dist.log_probs).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn teacher_actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.teacher).collect()
    }

    pub fn final_node(&self) -> usize {
        *self.nodes.last().expect("trajectory holds its start node")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    pub mode: SelectMode,
    /// Evaluate the critic at every step.
    pub with_value: bool,
    pub max_steps: usize,
}

impl RolloutOptions {
    pub fn new(mode: SelectMode) -> Self {
        Self {
            mode,
            with_value: mode == SelectMode::Sample,
            max_steps: T_MAX,
        }
    }
}

/// Runs one episode on `tape`. Each decision observes the panorama, updates
/// the vision history, attends over the instruction and scores the
/// candidates; the episode ends on stop or after `max_steps` decisions.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    model: &AuxRn,
    tape: &mut Tape,
    store: &ParamStore,
    graph: &NavGraph,
    lang: &LanguageEncoding,
    task: Task<'_>,
    opts: RolloutOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    graph.node(task.start)?;
    graph.node(task.goal)?;
    let fd = graph.view_dim() + QUAD_DIM;
    if fd != model.dims.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.dims.feature_dim,
            found: fd,
        });
    }
    let (mut state, mut prev_cm) = model.vision.initial(tape, store);
    let mut node = task.start;
    let mut heading = INITIAL_HEADING;
    let mut nodes = alloc::vec![node];
    let mut steps = Vec::new();
    let mut stopped = false;

    for _ in 0..opts.max_steps {
        let obs = graph.observe(node, heading)?;
        let views = tape.matrix(NUM_VIEWS, fd, obs.matrix());
        let v = model
            .vision
            .embed_vision_step(tape, store, views, prev_cm, state)?;
        let cm = fuse_cross_modal(&model.attn_w, tape, store, lang, v.context)?;

        let cands = graph.candidates(node, heading)?;
        let flat: Vec<f64> = cands.iter().flat_map(|c| c.vector()).collect();
        let cmat = tape.matrix(cands.len(), fd, flat);
        let dist = score_candidates(&model.attn_c, tape, store, cmat, cm.context)?;
        let teacher = graph.teacher_action(task.goal, node)?;
        let action = select_action(&dist.probs, opts.mode, Some(teacher), rng)?;
        let value = opts
            .with_value
            .then(|| model.value(tape, store, cm.context));

        steps.push(StepTrace {
            node,
            heading,
            targets: cands.iter().map(|c| c.target).collect(),
            teacher,
            action,
            cross_modal: cm.context,
            vision: v.context,
            value,
            teacher_quad: cands[teacher].quad,
            word_weights: tape.value(cm.weights).to_vec(),
            view_weights: tape.value(v.weights).to_vec(),
            dist,
        });
        state = v.state;
        prev_cm = cm.context;

        match cands[action].target {
            None => {
                stopped = true;
                break;
            }
            Some(next) => {
                heading = graph.heading_after(node, next);
                node = next;
                nodes.push(node);
            }
        }
    }
    Ok(Trajectory {
        nodes,
        stopped,
        steps,
    })
}

/// Greedy evaluation rollout on a scratch tape.
pub fn navigate<R: Rng + ?Sized>(
    model: &AuxRn,
    store: &ParamStore,
    graph: &NavGraph,
    task: Task<'_>,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut tape = Tape::new();
    let lang = model
        .language
        .encode_instruction(&mut tape, store, task.instruction)?;
    let mut opts = RolloutOptions::new(SelectMode::Argmax);
    opts.with_value = false;
    rollout(model, &mut tape, store, graph, &lang, task, opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphworld::{generate_world, synth_instruction};
    use crate::rng::stream;

    fn small_dims() -> ModelDims {
        ModelDims {
            hidden: 8,
            embed: 6,
            ..ModelDims::default()
        }
    }

    #[test]
    fn teacher_rollout_follows_shortest_path() {
        let g = generate_world(5, 10, 3.0).unwrap();
        let mut store = ParamStore::new();
        let model = AuxRn::new(&mut store, small_dims(), VisionQuery::CrossModal, &mut stream(1, 1));
        let path = g.shortest_path(0, 7).unwrap();
        let ins = synth_instruction(&path, &g, 3).unwrap();
        let mut tape = Tape::new();
        let lang = model.language.encode_instruction(&mut tape, &store, &ins).unwrap();
        let task = Task {
            start: 0,
            goal: 7,
            instruction: &ins,
        };
        let traj = rollout(
            &model,
            &mut tape,
            &store,
            &g,
            &lang,
            task,
            RolloutOptions::new(SelectMode::Teacher),
            &mut stream(2, 2),
        )
        .unwrap();
        assert_eq!(traj.nodes, path);
        assert!(traj.stopped);
        assert_eq!(traj.steps.len(), path.len());
        assert_eq!(traj.steps.last().unwrap().teacher_quad, [0.0; 4]);
        for s in &traj.steps {
            assert_eq!(s.dist.len(), g.degree(s.node) + 1);
            assert!(s.value.is_none());
        }
    }

    #[test]
    fn student_rollout_is_bounded_and_reproducible() {
        let g = generate_world(6, 10, 3.0).unwrap();
        let mut store = ParamStore::new();
        let model = AuxRn::new(&mut store, small_dims(), VisionQuery::VisionHistory, &mut stream(1, 1));
        let ins = Instruction::new(alloc::vec![vocab::BOS, 5, 20, vocab::EOS]);
        let task = Task {
            start: 2,
            goal: 9,
            instruction: &ins,
        };
        let run = |seed| {
            let mut tape = Tape::new();
            let lang = model.language.encode_instruction(&mut tape, &store, &ins).unwrap();
            let t = rollout(
                &model,
                &mut tape,
                &store,
                &g,
                &lang,
                task,
                RolloutOptions::new(SelectMode::Sample),
                &mut stream(seed, 0),
            )
            .unwrap();
            assert!(t.steps.len() <= T_MAX);
            assert!(t.steps.iter().all(|s| s.value.is_some()));
            t.nodes
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn mismatched_feature_width_is_rejected() {
        let g = crate::graphworld::generate_world_with(5, 6, 2.0, 8).unwrap();
        let mut store = ParamStore::new();
        let model = AuxRn::new(&mut store, small_dims(), VisionQuery::CrossModal, &mut stream(1, 1));
        let ins = Instruction::new(alloc::vec![vocab::BOS, vocab::EOS]);
        let task = Task {
            start: 0,
            goal: 1,
            instruction: &ins,
        };
        assert!(matches!(
            navigate(&model, &store, &g, task, &mut stream(0, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
