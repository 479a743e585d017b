//! The three-stage recipe (pretraining, back-translation augmentation,
//! pre-explore finetuning), evaluation, diagnostics and the ablation harness.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::auxiliary::{
    angle_loss, matching_loss, progress_label, progress_loss, speaker_generate, speaker_loss,
    total_aux_loss, AuxTerms, AuxWeights, MatchingInput, Pass, ProgressLoss,
};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graphworld::{
    make_dataset, sample_episode, vocab, Dataset, Episode, Instruction, NavGraph, Split, T_MAX,
};
use crate::math;
use crate::metrics::{evaluate, summarize, EpisodeMetrics, MetricSummary};
use crate::model::{navigate, rollout, AuxRn, RolloutOptions, Task};
use crate::objectives::{check_finite, compute_rewards, il_loss, joint_update, rl_loss, AdvantageEstimate};
use crate::params::{ParamGrads, ParamStore, Sgd};
use crate::policy::SelectMode;
use crate::rng::{mix, stream};
use crate::tape::{Tape, Var};

const INIT: u64 = 1;
const BATCH: u64 = 2;
const TEACHER: u64 = 3;
const STUDENT: u64 = 4;
const EVAL: u64 = 5;
const AUGMENT: u64 = 6;
const RANDOM: u64 = 7;

/// Builds the dataset described by the config.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Dataset> {
    make_dataset(&cfg.world_seeds(), cfg.episodes_per_world, cfg.fractions, cfg.world)
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeRef<'a> {
    pub graph: &'a NavGraph,
    pub episode: &'a Episode,
}

impl<'a> EpisodeRef<'a> {
    pub fn task(&self) -> Task<'a> {
        Task {
            start: self.episode.start,
            goal: self.episode.goal,
            instruction: &self.episode.instruction,
        }
    }
}

pub fn resolve<'a>(dataset: &'a Dataset, episodes: &[&'a Episode]) -> Result<Vec<EpisodeRef<'a>>> {
    episodes
        .iter()
        .map(|&e| {
            Ok(EpisodeRef {
                graph: dataset.graph(e.world_seed)?,
                episode: e,
            })
        })
        .collect()
}

/// Per-episode mean of each loss term; `total` is the optimized objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub il: f64,
    pub policy: f64,
    pub value: f64,
    pub speaker: f64,
    pub progress: f64,
    pub matching: f64,
    pub angle: f64,
    pub total: f64,
}

impl LossValues {
    pub const NAMES: [&'static str; 8] = [
        "il", "policy", "value", "speaker", "progress", "matching", "angle", "total",
    ];

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.il,
            self.policy,
            self.value,
            self.speaker,
            self.progress,
            self.matching,
            self.angle,
            self.total,
        ]
    }

    fn add(&mut self, o: &LossValues) {
        self.il += o.il;
        self.policy += o.policy;
        self.value += o.value;
        self.speaker += o.speaker;
        self.progress += o.progress;
        self.matching += o.matching;
        self.angle += o.angle;
        self.total += o.total;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PassOutput {
    pub loss: Var,
    pub values: LossValues,
}

fn mean_over(tape: &mut Tape, terms: &[Var]) -> Var {
    let s = tape.sum_n(terms);
    tape.scale(s, 1.0 / terms.len() as f64)
}

fn matching_term<R: Rng + ?Sized>(
    model: &AuxRn,
    tape: &mut Tape,
    store: &ParamStore,
    inputs: &[MatchingInput],
    weight: f64,
    rng: &mut R,
) -> Result<Option<Var>> {
    if weight <= 0.0 {
        return Ok(None);
    }
    Ok(Some(matching_loss(&model.matching, tape, store, inputs, rng)?.loss))
}

/// Teacher-forced pass: imitation loss plus every auxiliary loss.
pub fn teacher_pass<R: Rng + ?Sized>(
    model: &AuxRn,
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &TrainConfig,
    batch: &[EpisodeRef<'_>],
    weights: &AuxWeights,
    rng: &mut R,
) -> Result<PassOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut totals = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    let mut values = LossValues::default();
    for item in batch {
        let lang = model
            .language
            .encode_instruction(tape, store, &item.episode.instruction)?;
        let traj = rollout(
            model,
            tape,
            store,
            item.graph,
            &lang,
            item.task(),
            RolloutOptions::new(SelectMode::Teacher),
            rng,
        )?;
        let contexts = traj.contexts();
        let il = il_loss(tape, &traj.log_probs(), &traj.teacher_actions())?;
        let mut terms = AuxTerms::default();
        if weights.speaker > 0.0 {
            let history = traj.vision_history();
            terms.speaker = Some(speaker_loss(
                &model.speaker,
                &model.language,
                tape,
                store,
                &item.episode.instruction,
                &history,
            )?);
        }
        if weights.progress > 0.0 {
            terms.progress =
                Some(progress_loss(&model.progress, tape, store, &contexts, cfg.progress_loss)?.loss);
        }
        if weights.angle > 0.0 {
            terms.angle = Some(angle_loss(
                &model.angle,
                tape,
                store,
                &contexts,
                &traj.teacher_quads(),
                cfg.angle_norm,
            )?);
        }
        let v = |t: Option<Var>| t.map_or(0.0, |x| tape.scalar_value(x));
        values.il += tape.scalar_value(il);
        values.speaker += v(terms.speaker);
        values.progress += v(terms.progress);
        values.angle += v(terms.angle);
        let total = match total_aux_loss(tape, &terms, weights, Pass::TeacherForced)? {
            Some(aux) => tape.add(il, aux),
            None => il,
        };
        totals.push(total);
        inputs.push(MatchingInput {
            contexts,
            global: lang.global,
        });
    }
    finish_pass(model, tape, store, totals, &inputs, weights, values, rng)
}

#[allow(clippy::too_many_arguments)]
fn finish_pass<R: Rng + ?Sized>(
    model: &AuxRn,
    tape: &mut Tape,
    store: &ParamStore,
    totals: Vec<Var>,
    inputs: &[MatchingInput],
    weights: &AuxWeights,
    mut values: LossValues,
    rng: &mut R,
) -> Result<PassOutput> {
    let n = totals.len() as f64;
    for x in [
        &mut values.il,
        &mut values.policy,
        &mut values.value,
        &mut values.speaker,
        &mut values.progress,
        &mut values.angle,
    ] {
        *x /= n;
    }
    let mut loss = mean_over(tape, &totals);
    if let Some(m) = matching_term(model, tape, store, inputs, weights.matching, rng)? {
        values.matching = tape.scalar_value(m);
        let wm = tape.scale(m, weights.matching);
        loss = tape.add(loss, wm);
    }
    values.total = tape.scalar_value(loss);
    Ok(PassOutput { loss, values })
}

/// Student-forced pass: sampled actions, actor-critic loss, and the
/// progress and matching losses. Speaker and angle never enter here.
pub fn student_pass<R: Rng + ?Sized>(
    model: &AuxRn,
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &TrainConfig,
    batch: &[EpisodeRef<'_>],
    weights: &AuxWeights,
    rng: &mut R,
) -> Result<PassOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut totals = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    let mut values = LossValues::default();
    for item in batch {
        let lang = model
            .language
            .encode_instruction(tape, store, &item.episode.instruction)?;
        let traj = rollout(
            model,
            tape,
            store,
            item.graph,
            &lang,
            item.task(),
            RolloutOptions::new(SelectMode::Sample),
            rng,
        )?;
        let contexts = traj.contexts();
        let rewards = compute_rewards(
            item.graph,
            &traj.nodes,
            traj.stopped,
            item.episode.goal,
            &cfg.reward,
        )?;
        let value_vars: Vec<Var> = traj
            .steps
            .iter()
            .map(|s| s.value.expect("sampled rollouts carry values"))
            .collect();
        let value_now: Vec<f64> = value_vars.iter().map(|&v| tape.scalar_value(v)).collect();
        let adv = AdvantageEstimate::compute(&rewards, &value_now, cfg.gamma)?;
        let rl = rl_loss(tape, &traj.log_probs(), &traj.actions(), &value_vars, &adv)?;
        let mut terms = AuxTerms::default();
        if weights.progress > 0.0 {
            terms.progress =
                Some(progress_loss(&model.progress, tape, store, &contexts, cfg.progress_loss)?.loss);
        }
        values.policy += tape.scalar_value(rl.policy);
        values.value += tape.scalar_value(rl.value);
        values.progress += terms.progress.map_or(0.0, |x| tape.scalar_value(x));
        let scaled_value = tape.scale(rl.value, cfg.value_weight);
        let mut total = tape.add(rl.policy, scaled_value);
        if let Some(aux) = total_aux_loss(tape, &terms, weights, Pass::StudentForced)? {
            total = tape.add(total, aux);
        }
        totals.push(total);
        inputs.push(MatchingInput {
            contexts,
            global: lang.global,
        });
    }
    finish_pass(model, tape, store, totals, &inputs, weights, values, rng)
}

/// Parameters, optimizer state and iteration counter at one point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub store: ParamStore,
    pub velocity: Vec<Vec<f64>>,
    /// Val-unseen SPL measured at this iteration, when evaluated.
    pub val_unseen_spl: Option<f64>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: AuxRn,
    pub store: ParamStore,
    pub opt: Sgd,
    /// Number of updates applied so far; also keys every per-step rng.
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = AuxRn::new(
            &mut store,
            config.dims(),
            config.vision_query,
            &mut stream(config.seed, INIT),
        );
        let opt = Sgd::new(&store, config.learning_rate, config.momentum);
        Ok(Self {
            config,
            model,
            store,
            opt,
            iteration: 0,
        })
    }

    /// Rebuilds the model layout for `config` and loads `snapshot` into it.
    pub fn from_snapshot(config: TrainConfig, snapshot: &Snapshot) -> Result<Self> {
        let mut t = Self::new(config)?;
        t.restore(snapshot)?;
        Ok(t)
    }

    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.store.load_from(&snapshot.store)?;
        self.opt.set_velocity(snapshot.velocity.clone())?;
        self.iteration = snapshot.iteration;
        Ok(())
    }

    pub fn snapshot(&self, val_unseen_spl: Option<f64>) -> Snapshot {
        Snapshot {
            iteration: self.iteration,
            store: self.store.clone(),
            velocity: self.opt.velocity().to_vec(),
            val_unseen_spl,
        }
    }

    fn step_seed(&self) -> u64 {
        mix(self.config.seed, self.iteration as u64)
    }

    /// Gradients of the joint objective for one batch at the current
    /// iteration, without updating anything.
    pub fn gradients(
        &self,
        batch: &[EpisodeRef<'_>],
        weights: &AuxWeights,
    ) -> Result<(ParamGrads, LossValues)> {
        let seed = self.step_seed();
        let mut tape = Tape::new();
        let t = teacher_pass(
            &self.model,
            &mut tape,
            &self.store,
            &self.config,
            batch,
            weights,
            &mut stream(seed, TEACHER),
        )?;
        let mut values = t.values;
        let mut loss = t.loss;
        if self.config.use_rl {
            let s = student_pass(
                &self.model,
                &mut tape,
                &self.store,
                &self.config,
                batch,
                weights,
                &mut stream(seed, STUDENT),
            )?;
            values.add(&s.values);
            loss = tape.add(loss, s.loss);
        }
        let named: Vec<(&str, f64)> = LossValues::NAMES
            .iter()
            .copied()
            .zip(values.as_array())
            .collect();
        check_finite(&named, self.iteration)?;
        Ok((tape.backward(loss, &self.store), values))
    }

    /// One joint update on `batch`.
    pub fn step(&mut self, batch: &[EpisodeRef<'_>], weights: &AuxWeights) -> Result<LossValues> {
        let (grads, values) = self.gradients(batch, weights)?;
        let clip = (self.config.clip_norm > 0.0).then_some(self.config.clip_norm);
        joint_update(&mut self.store, &mut self.opt, &[&grads], clip, self.iteration)?;
        self.iteration += 1;
        Ok(values)
    }

    /// Draws a batch without replacement from `pool`, keyed by the current
    /// iteration.
    pub fn sample_batch<'a>(&self, pool: &[&'a Episode]) -> Result<Vec<&'a Episode>> {
        if pool.len() < 2 {
            return Err(Error::BatchTooSmall);
        }
        let k = self.config.batch_size.min(pool.len());
        let mut rng = stream(self.step_seed(), BATCH);
        Ok(index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub nodes: Vec<usize>,
    pub metrics: EpisodeMetrics,
}

fn eval_pool<'a>(cfg: &TrainConfig, dataset: &'a Dataset, split: Split) -> Vec<&'a Episode> {
    let mut pool = dataset.split(split);
    if cfg.eval_episodes > 0 {
        pool.truncate(cfg.eval_episodes);
    }
    pool
}

/// Greedy rollouts over a split.
pub fn evaluate_split(
    model: &AuxRn,
    store: &ParamStore,
    cfg: &TrainConfig,
    dataset: &Dataset,
    split: Split,
) -> Result<(MetricSummary, Vec<EpisodeResult>)> {
    let mut results = Vec::new();
    let mut rng = stream(cfg.seed, EVAL);
    for ep in eval_pool(cfg, dataset, split) {
        let graph = dataset.graph(ep.world_seed)?;
        let r = EpisodeRef { graph, episode: ep };
        let traj = navigate(model, store, graph, r.task(), &mut rng)?;
        let metrics = evaluate(
            graph,
            &traj.nodes,
            ep.start,
            ep.goal,
            cfg.reward.success_radius,
            cfg.distance,
        )?;
        results.push(EpisodeResult {
            episode_id: ep.id,
            nodes: traj.nodes,
            metrics,
        });
    }
    let per: Vec<EpisodeMetrics> = results.iter().map(|r| r.metrics).collect();
    Ok((summarize(&per), results))
}

/// Mean `|σ - t/T|` of the progress head along teacher-forced rollouts.
pub fn progress_error(
    model: &AuxRn,
    store: &ParamStore,
    cfg: &TrainConfig,
    dataset: &Dataset,
    split: Split,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut rng = stream(cfg.seed, EVAL);
    for ep in eval_pool(cfg, dataset, split) {
        let graph = dataset.graph(ep.world_seed)?;
        let r = EpisodeRef { graph, episode: ep };
        let mut tape = Tape::new();
        let lang = model.language.encode_instruction(&mut tape, store, &ep.instruction)?;
        let mut opts = RolloutOptions::new(SelectMode::Teacher);
        opts.with_value = false;
        let traj = rollout(model, &mut tape, store, graph, &lang, r.task(), opts, &mut rng)?;
        let len = traj.steps.len();
        for (i, s) in traj.steps.iter().enumerate() {
            let z = model.progress.logit(&mut tape, store, s.cross_modal);
            let p = math::sigmoid(tape.scalar_value(z));
            total += libm::fabs(p - progress_label(i + 1, len));
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Everything the plot emitter needs about one greedy episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDiagnostic {
    pub episode_id: u64,
    pub nodes: Vec<usize>,
    pub actions: Vec<usize>,
    pub action_probs: Vec<Vec<f64>>,
    /// Attention over instruction tokens, one row per step.
    pub word_attention: Vec<Vec<f64>>,
    pub view_attention: Vec<Vec<f64>>,
    pub progress: Vec<f64>,
    /// Probability that the episode's own instruction matches.
    pub matching: Vec<f64>,
}

pub fn diagnose(
    model: &AuxRn,
    store: &ParamStore,
    graph: &NavGraph,
    episode: &Episode,
) -> Result<EpisodeDiagnostic> {
    let mut tape = Tape::new();
    let lang = model
        .language
        .encode_instruction(&mut tape, store, &episode.instruction)?;
    let task = EpisodeRef { graph, episode }.task();
    let mut opts = RolloutOptions::new(SelectMode::Argmax);
    opts.with_value = false;
    let traj = rollout(model, &mut tape, store, graph, &lang, task, opts, &mut stream(0, EVAL))?;
    let mw = tape.param(store, model.matching.w);
    let mb = tape.param(store, model.matching.b);
    let mut progress = Vec::new();
    let mut matching = Vec::new();
    for s in &traj.steps {
        let z = model.progress.logit(&mut tape, store, s.cross_modal);
        progress.push(math::sigmoid(tape.scalar_value(z)));
        let cat = tape.concat(&[s.cross_modal, lang.global]);
        let m = tape.affine(mw, cat, mb);
        matching.push(math::sigmoid(tape.scalar_value(m)));
    }
    Ok(EpisodeDiagnostic {
        episode_id: episode.id,
        actions: traj.actions(),
        action_probs: traj.steps.iter().map(|s| s.dist.probs.clone()).collect(),
        word_attention: traj.steps.iter().map(|s| s.word_weights.clone()).collect(),
        view_attention: traj.steps.iter().map(|s| s.view_weights.clone()).collect(),
        nodes: traj.nodes,
        progress,
        matching,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub losses: LossValues,
    /// Val-seen SR when this iteration was evaluated.
    pub probe_sr: Option<f64>,
    pub episode_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub split: Split,
    pub summary: MetricSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Highest val-unseen SPL seen during the stage, earliest on ties.
    pub best: Snapshot,
    pub last: Snapshot,
}

/// One source of batches and the auxiliary weights applied to it.
#[derive(Clone, Debug)]
pub struct BatchSource<'a> {
    pub pool: Vec<&'a Episode>,
    pub weights: AuxWeights,
}

fn eval_both(trainer: &Trainer, dataset: &Dataset) -> Result<[MetricSummary; 2]> {
    let seen = evaluate_split(&trainer.model, &trainer.store, &trainer.config, dataset, Split::ValSeen)?.0;
    let unseen = evaluate_split(&trainer.model, &trainer.store, &trainer.config, dataset, Split::ValUnseen)?.0;
    Ok([seen, unseen])
}

/// Runs `iterations` updates cycling through `sources`, evaluating both
/// validation splits at the start, every `eval_every` updates and at the end.
pub fn run_stage(
    trainer: &mut Trainer,
    dataset: &Dataset,
    sources: &[BatchSource<'_>],
    iterations: usize,
) -> Result<StageReport> {
    if sources.is_empty() {
        return Err(Error::Empty("batch sources"));
    }
    let mut steps = Vec::with_capacity(iterations);
    let mut evals = Vec::new();
    let record = |trainer: &Trainer, evals: &mut Vec<EvalRecord>| -> Result<[MetricSummary; 2]> {
        let [seen, unseen] = eval_both(trainer, dataset)?;
        for (split, summary) in [(Split::ValSeen, seen), (Split::ValUnseen, unseen)] {
            evals.push(EvalRecord {
                iteration: trainer.iteration,
                split,
                summary,
            });
        }
        Ok([seen, unseen])
    };

    let [_, unseen] = record(trainer, &mut evals)?;
    let mut best = trainer.snapshot(Some(unseen.spl));
    for k in 0..iterations {
        let source = &sources[k % sources.len()];
        let episodes = trainer.sample_batch(&source.pool)?;
        let batch = resolve(dataset, &episodes)?;
        let losses = trainer.step(&batch, &source.weights)?;
        let mut rec = StepRecord {
            iteration: trainer.iteration,
            losses,
            probe_sr: None,
            episode_ids: episodes.iter().map(|e| e.id).collect(),
        };
        if (k + 1) % trainer.config.eval_every == 0 || k + 1 == iterations {
            let [seen, unseen] = record(trainer, &mut evals)?;
            rec.probe_sr = Some(seen.sr);
            if unseen.spl > best.val_unseen_spl.unwrap_or(f64::NEG_INFINITY) {
                best = trainer.snapshot(Some(unseen.spl));
            }
        }
        steps.push(rec);
    }
    let last_spl = evals.last().map(|e| e.summary.spl);
    Ok(StageReport {
        steps,
        evals,
        best,
        last: trainer.snapshot(last_spl),
    })
}

/// Stage 1: labeled training-world episodes with the configured weights.
pub fn pretrain(trainer: &mut Trainer, dataset: &Dataset) -> Result<StageReport> {
    let source = BatchSource {
        pool: dataset.split(Split::TrainSeen),
        weights: trainer.config.aux,
    };
    let n = trainer.config.iterations;
    run_stage(trainer, dataset, &[source], n)
}

/// Labels random shortest paths in `worlds` with the speaker. Each path's
/// vision history comes from a teacher-forced pass under an empty
/// instruction, so the label depends on the route alone.
pub fn augment_backtranslate(
    model: &AuxRn,
    store: &ParamStore,
    dataset: &Dataset,
    worlds: &[u64],
    samples: usize,
    seed: u64,
    first_id: u64,
) -> Result<Vec<Episode>> {
    let present = model.speaker.params().iter().all(|&id| {
        id.index() < store.len()
            && store.get(id).name.starts_with("speaker.")
            && store.get(id).data.iter().all(|x| x.is_finite())
    });
    if !present {
        return Err(Error::MissingSpeaker);
    }
    if samples == 0 {
        return Ok(Vec::new());
    }
    if worlds.is_empty() {
        return Err(Error::Empty("augmentation worlds"));
    }
    let split_of: BTreeMap<u64, Split> = dataset
        .episodes
        .iter()
        .map(|e| (e.world_seed, e.split))
        .collect();
    let null = Instruction::new(alloc::vec![vocab::BOS, vocab::EOS]);
    let mut rng = stream(seed, AUGMENT);
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let world_seed = worlds[k % worlds.len()];
        let graph = dataset.graph(world_seed)?;
        let (start, goal, path) = sample_episode(graph, mix(seed, k as u64))?;
        let mut tape = Tape::new();
        let lang = model.language.encode_instruction(&mut tape, store, &null)?;
        let task = Task {
            start,
            goal,
            instruction: &null,
        };
        let mut opts = RolloutOptions::new(SelectMode::Teacher);
        opts.with_value = false;
        let traj = rollout(model, &mut tape, store, graph, &lang, task, opts, &mut rng)?;
        let history: Vec<Vec<f64>> = traj
            .vision_history()
            .iter()
            .map(|&v| tape.value(v).to_vec())
            .collect();
        let mut instruction =
            speaker_generate(&model.speaker, &model.language, store, &history, vocab::MAX_LEN - 2)?;
        if instruction.tokens.last() != Some(&vocab::EOS) {
            instruction.tokens.push(vocab::EOS);
        }
        out.push(Episode {
            id: first_id + k as u64,
            world_seed,
            start,
            goal,
            path,
            instruction,
            split: split_of.get(&world_seed).copied().unwrap_or(Split::TrainSeen),
            augmented: true,
        });
    }
    Ok(out)
}

fn next_id(dataset: &Dataset) -> u64 {
    dataset.episodes.iter().map(|e| e.id + 1).max().unwrap_or(0)
}

/// World seeds hosting labeled training episodes.
pub fn train_worlds(dataset: &Dataset) -> Vec<u64> {
    dataset.world_seeds(&[Split::TrainSeen]).into_iter().collect()
}

/// World seeds held out from training.
pub fn unseen_worlds(dataset: &Dataset) -> Vec<u64> {
    dataset
        .world_seeds(&[Split::ValUnseen, Split::TestUnseen])
        .into_iter()
        .collect()
}

/// Stage 2: alternate labeled and speaker-labeled training-world batches
/// with halved auxiliary weights; returns the best checkpoint's report.
pub fn finetune_augmented(
    trainer: &mut Trainer,
    dataset: &Dataset,
    augmented: &[Episode],
) -> Result<StageReport> {
    if augmented.is_empty() {
        return Err(Error::Empty("augmented episodes"));
    }
    let half = trainer.config.aux.scaled(0.5);
    let mut sources: Vec<BatchSource<'_>> = (0..trainer.config.labeled_per_augmented)
        .map(|_| BatchSource {
            pool: dataset.split(Split::TrainSeen),
            weights: half,
        })
        .collect();
    sources.push(BatchSource {
        pool: augmented.iter().collect(),
        weights: half,
    });
    let n = trainer.config.finetune_iterations;
    run_stage(trainer, dataset, &sources, n)
}

/// Stage 3: finetune on speaker-labeled paths from unseen worlds only; the
/// caller keeps the last checkpoint.
pub fn pre_explore(
    trainer: &mut Trainer,
    dataset: &Dataset,
    unseen_augmented: &[Episode],
) -> Result<StageReport> {
    if unseen_augmented.is_empty() {
        return Err(Error::Empty("augmented episodes"));
    }
    let unseen = unseen_worlds(dataset);
    if let Some(e) = unseen_augmented
        .iter()
        .find(|e| !unseen.contains(&e.world_seed))
    {
        return Err(Error::InvalidArgument(alloc::format!(
            "episode {} comes from a training world",
            e.id
        )));
    }
    let source = BatchSource {
        pool: unseen_augmented.iter().collect(),
        weights: trainer.config.aux.scaled(0.5),
    };
    let n = trainer.config.pre_explore_iterations;
    run_stage(trainer, dataset, &[source], n)
}

/// Back-translated episodes for stage 2 (training worlds) or stage 3
/// (unseen worlds).
pub fn augment_for(
    trainer: &Trainer,
    dataset: &Dataset,
    unseen: bool,
) -> Result<Vec<Episode>> {
    // Unseen-world ids start after the training-world block so the two
    // augmented sets never share an id.
    let base = next_id(dataset);
    let (worlds, n, tag, first) = if unseen {
        let first = base + trainer.config.augment_samples as u64;
        (unseen_worlds(dataset), trainer.config.pre_explore_samples, 2, first)
    } else {
        (train_worlds(dataset), trainer.config.augment_samples, 1, base)
    };
    augment_backtranslate(
        &trainer.model,
        &trainer.store,
        dataset,
        &worlds,
        n,
        mix(trainer.config.seed, tag),
        first,
    )
}

/// Success rate of a policy that picks uniformly among the candidates for
/// up to `T_MAX` decisions, estimated over `trials` episodes of `split`.
pub fn random_policy_success(
    dataset: &Dataset,
    split: Split,
    trials: usize,
    seed: u64,
    success_radius: f64,
) -> Result<f64> {
    let pool = dataset.split(split);
    if pool.is_empty() {
        return Err(Error::Empty("split"));
    }
    let mut rng = stream(seed, RANDOM);
    let mut hits = 0usize;
    for _ in 0..trials {
        let ep = pool[rng.random_range(0..pool.len())];
        let g = dataset.graph(ep.world_seed)?;
        let mut node = ep.start;
        for _ in 0..T_MAX {
            let nb = g.neighbours(node)?;
            let a = rng.random_range(0..=nb.len());
            if a == nb.len() {
                break;
            }
            node = nb[a];
        }
        if g.distance(node, ep.goal) <= success_radius {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub weights: AuxWeights,
    pub progress_loss: ProgressLoss,
    pub seen: MetricSummary,
    pub unseen: MetricSummary,
    /// Mean progress-head error on val-unseen teacher rollouts.
    pub progress_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    /// Baseline, each single auxiliary loss, all four.
    pub rows: Vec<AblationRow>,
    /// Progress-only training with squared error, then cross entropy.
    pub progress_variants: Vec<AblationRow>,
}

pub fn ablation_variants() -> Vec<(&'static str, AuxWeights)> {
    let only = |i: usize| {
        let mut w = [0.0; 4];
        w[i] = 1.0;
        AuxWeights {
            speaker: w[0],
            progress: w[1],
            matching: w[2],
            angle: w[3],
        }
    };
    alloc::vec![
        ("baseline", AuxWeights::none()),
        ("+speaker", only(0)),
        ("+progress", only(1)),
        ("+matching", only(2)),
        ("+angle", only(3)),
        ("+total", AuxWeights::uniform(1.0)),
    ]
}

/// Pretrains one model per variant from the same initialization and
/// reports the selected checkpoint on both validation splits.
pub fn train_variant(
    base: &TrainConfig,
    dataset: &Dataset,
    name: &str,
    weights: AuxWeights,
    progress: ProgressLoss,
) -> Result<AblationRow> {
    let mut cfg = base.clone();
    cfg.aux = weights;
    cfg.progress_loss = progress;
    let mut trainer = Trainer::new(cfg)?;
    let report = pretrain(&mut trainer, dataset)?;
    trainer.restore(&report.best)?;
    let [seen, unseen] = eval_both(&trainer, dataset)?;
    let progress_error = progress_error(
        &trainer.model,
        &trainer.store,
        &trainer.config,
        dataset,
        Split::ValUnseen,
    )?;
    Ok(AblationRow {
        name: name.to_string(),
        weights,
        progress_loss: progress,
        seen,
        unseen,
        progress_error,
    })
}

pub fn run_ablation(config: &TrainConfig, dataset: &Dataset) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, w) in ablation_variants() {
        rows.push(train_variant(config, dataset, name, w, config.progress_loss)?);
    }
    let progress_only = ablation_variants()[2].1;
    let mut progress_variants = Vec::new();
    for (name, kind) in [("step-wise+mse", ProgressLoss::Mse), ("step-wise+bce", ProgressLoss::Bce)] {
        let reuse = rows
            .iter()
            .find(|r| r.weights == progress_only && r.progress_loss == kind);
        let row = match reuse {
            Some(r) => AblationRow {
                name: name.to_string(),
                ..r.clone()
            },
            None => train_variant(config, dataset, name, progress_only, kind)?,
        };
        progress_variants.push(row);
    }
    Ok(AblationTable {
        rows,
        progress_variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphworld::WorldParams;

    pub(crate) fn tiny() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            embed: 6,
            n_worlds: 4,
            world: WorldParams {
                n_nodes: 8,
                avg_degree: 3.0,
                view_dim: 8,
            },
            episodes_per_world: 8,
            fractions: crate::graphworld::SplitFractions([0.5, 0.1, 0.2, 0.2]),
            iterations: 3,
            batch_size: 3,
            eval_every: 2,
            augment_samples: 4,
            finetune_iterations: 2,
            pre_explore_samples: 3,
            pre_explore_iterations: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_parameters() {
        let mut cfg = tiny();
        cfg.iterations = 0;
        let ds = dataset_for(&cfg).unwrap();
        let mut t = Trainer::new(cfg).unwrap();
        let init = t.store.clone();
        let r = pretrain(&mut t, &ds).unwrap();
        assert_eq!(r.best.store, init);
        assert_eq!(r.evals.len(), 2);
        assert!(r.steps.is_empty());
    }

    #[test]
    fn pretraining_is_deterministic_and_selects_best() {
        let cfg = tiny();
        let ds = dataset_for(&cfg).unwrap();
        let run = || {
            let mut t = Trainer::new(cfg.clone()).unwrap();
            pretrain(&mut t, &ds).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.steps.len(), 3);
        let best = a
            .evals
            .iter()
            .filter(|e| e.split == Split::ValUnseen)
            .map(|e| e.summary.spl)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.best.val_unseen_spl, Some(best));
        assert!(a.steps.iter().all(|s| s.losses.total.is_finite()));
    }

    #[test]
    fn augmentation_and_pre_explore() {
        let cfg = tiny();
        let ds = dataset_for(&cfg).unwrap();
        let mut t = Trainer::new(cfg).unwrap();
        let aug = augment_for(&t, &ds, false).unwrap();
        assert_eq!(aug.len(), 4);
        for e in &aug {
            assert!(e.augmented);
            e.instruction.validate(vocab::SIZE, vocab::MAX_LEN).unwrap();
            let g = ds.graph(e.world_seed).unwrap();
            assert_eq!(g.path_length(&e.path), g.distance(e.start, e.goal));
        }
        finetune_augmented(&mut t, &ds, &aug).unwrap();

        let unseen = augment_for(&t, &ds, true).unwrap();
        let before = t.iteration;
        let r = pre_explore(&mut t, &ds, &unseen).unwrap();
        assert_eq!(t.iteration, before + 2);
        let ids: Vec<u64> = unseen.iter().map(|e| e.id).collect();
        assert!(r.steps.iter().flat_map(|s| &s.episode_ids).all(|i| ids.contains(i)));
        assert!(pre_explore(&mut t, &ds, &aug).is_err());
        assert!(pre_explore(&mut t, &ds, &[]).is_err());
        assert!(augment_backtranslate(&t.model, &t.store, &ds, &[], 0, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn random_baseline_is_a_rate() {
        let cfg = tiny();
        let ds = dataset_for(&cfg).unwrap();
        let sr = random_policy_success(&ds, Split::ValSeen, 500, 3, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&sr));
        assert_eq!(sr, random_policy_success(&ds, Split::ValSeen, 500, 3, 1.0).unwrap());
    }

    #[test]
    fn diagnostics_are_normalized() {
        let cfg = tiny();
        let ds = dataset_for(&cfg).unwrap();
        let t = Trainer::new(cfg).unwrap();
        let ep = ds.split(Split::ValSeen)[0];
        let d = diagnose(&t.model, &t.store, ds.graph(ep.world_seed).unwrap(), ep).unwrap();
        for row in d.word_attention.iter().chain(&d.view_attention).chain(&d.action_probs) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(d.progress.len(), d.actions.len());
    }
}
