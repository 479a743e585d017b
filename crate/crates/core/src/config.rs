//! Run configuration with a flat `key = value` representation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::auxiliary::{AngleNorm, AuxWeights, ProgressLoss};
use crate::encoders::VisionQuery;
use crate::error::{Error, Result};
use crate::graphworld::{SplitFractions, WorldParams};
use crate::metrics::DistanceMode;
use crate::model::ModelDims;
use crate::objectives::RewardConfig;
use crate::rng::mix;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: usize,
    pub embed: usize,
    pub n_worlds: usize,
    pub world: WorldParams,
    pub episodes_per_world: usize,
    pub fractions: SplitFractions,

    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Cap on episodes per split during evaluation; 0 evaluates all.
    pub eval_episodes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub gamma: f64,
    pub value_weight: f64,
    pub use_rl: bool,

    pub aux: AuxWeights,
    pub progress_loss: ProgressLoss,
    pub angle_norm: AngleNorm,
    pub vision_query: VisionQuery,

    pub reward: RewardConfig,
    pub distance: DistanceMode,

    /// Labeled batches per augmented batch in the augmentation stage.
    pub labeled_per_augmented: usize,
    pub augment_samples: usize,
    pub finetune_iterations: usize,
    pub pre_explore_samples: usize,
    pub pre_explore_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: 64,
            embed: 32,
            n_worlds: 12,
            world: WorldParams::default(),
            episodes_per_world: 50,
            fractions: SplitFractions::default(),
            iterations: 2000,
            batch_size: 8,
            eval_every: 200,
            eval_episodes: 0,
            learning_rate: 1e-2,
            momentum: 0.9,
            clip_norm: 0.0,
            gamma: 0.9,
            value_weight: 0.5,
            use_rl: true,
            aux: AuxWeights::default(),
            progress_loss: ProgressLoss::Bce,
            angle_norm: AngleNorm::L2,
            vision_query: VisionQuery::CrossModal,
            reward: RewardConfig::default(),
            distance: DistanceMode::Geodesic,
            labeled_per_augmented: 1,
            augment_samples: 400,
            finetune_iterations: 500,
            pre_explore_samples: 200,
            pre_explore_iterations: 300,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {value}")))
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let items: Vec<f64> = value
        .split(',')
        .map(|v| parse(key, v))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("{key} expects {N} comma-separated numbers")))
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// Parses `speaker,progress,matching,angle`.
pub fn parse_aux_weights(value: &str) -> Result<AuxWeights> {
    let [speaker, progress, matching, angle] = parse_list::<4>("aux_weights", value)?;
    let w = AuxWeights {
        speaker,
        progress,
        matching,
        angle,
    };
    w.validate()?;
    Ok(w)
}

impl TrainConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.world.feature_dim(),
            hidden: self.hidden,
            embed: self.embed,
            vocab: crate::graphworld::vocab::SIZE,
        }
    }

    /// World seeds derived from the run seed; the last ones are held out.
    pub fn world_seeds(&self) -> Vec<u64> {
        (0..self.n_worlds as u64).map(|k| mix(self.seed, 1000 + k)).collect()
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "embed" => self.embed = parse(key, v)?,
            "n_worlds" => self.n_worlds = parse(key, v)?,
            "nodes_per_world" => self.world.n_nodes = parse(key, v)?,
            "avg_degree" => self.world.avg_degree = parse(key, v)?,
            "view_dim" => self.world.view_dim = parse(key, v)?,
            "episodes_per_world" => self.episodes_per_world = parse(key, v)?,
            "split_fractions" => self.fractions = SplitFractions(parse_list::<4>(key, v)?),
            "iterations" => self.iterations = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "value_weight" => self.value_weight = parse(key, v)?,
            "use_rl" => self.use_rl = parse(key, v)?,
            "aux_weights" => self.aux = parse_aux_weights(v)?,
            "progress_loss" => self.progress_loss = ProgressLoss::parse(v)?,
            "angle_norm" => self.angle_norm = AngleNorm::parse(v)?,
            "vision_query" => self.vision_query = VisionQuery::parse(v)?,
            "success_radius" => self.reward.success_radius = parse(key, v)?,
            "success_bonus" => self.reward.success_bonus = parse(key, v)?,
            "failure_penalty" => self.reward.failure_penalty = parse(key, v)?,
            "distance" => {
                self.distance = match v {
                    "geodesic" => DistanceMode::Geodesic,
                    "euclidean" => DistanceMode::Euclidean,
                    _ => return Err(Error::InvalidArgument(format!("bad value for distance: {v}"))),
                }
            }
            "labeled_per_augmented" => self.labeled_per_augmented = parse(key, v)?,
            "augment_samples" => self.augment_samples = parse(key, v)?,
            "finetune_iterations" => self.finetune_iterations = parse(key, v)?,
            "pre_explore_samples" => self.pre_explore_samples = parse(key, v)?,
            "pre_explore_iterations" => self.pre_explore_iterations = parse(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a fixed order; feeding these back
    /// through [`TrainConfig::set`] reproduces the config exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.aux;
        alloc::vec![
            ("seed", self.seed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("embed", self.embed.to_string()),
            ("n_worlds", self.n_worlds.to_string()),
            ("nodes_per_world", self.world.n_nodes.to_string()),
            ("avg_degree", format!("{:?}", self.world.avg_degree)),
            ("view_dim", self.world.view_dim.to_string()),
            ("episodes_per_world", self.episodes_per_world.to_string()),
            ("split_fractions", list(&self.fractions.0)),
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("momentum", format!("{:?}", self.momentum)),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("gamma", format!("{:?}", self.gamma)),
            ("value_weight", format!("{:?}", self.value_weight)),
            ("use_rl", self.use_rl.to_string()),
            ("aux_weights", list(&[a.speaker, a.progress, a.matching, a.angle])),
            ("progress_loss", self.progress_loss.as_str().to_string()),
            ("angle_norm", self.angle_norm.as_str().to_string()),
            ("vision_query", self.vision_query.as_str().to_string()),
            ("success_radius", format!("{:?}", self.reward.success_radius)),
            ("success_bonus", format!("{:?}", self.reward.success_bonus)),
            ("failure_penalty", format!("{:?}", self.reward.failure_penalty)),
            (
                "distance",
                match self.distance {
                    DistanceMode::Geodesic => "geodesic",
                    DistanceMode::Euclidean => "euclidean",
                }
                .to_string()
            ),
            ("labeled_per_augmented", self.labeled_per_augmented.to_string()),
            ("augment_samples", self.augment_samples.to_string()),
            ("finetune_iterations", self.finetune_iterations.to_string()),
            ("pre_explore_samples", self.pre_explore_samples.to_string()),
            ("pre_explore_iterations", self.pre_explore_iterations.to_string()),
        ]
    }

    /// Canonical text form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Overrides fields from `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.aux.validate()?;
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall);
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.n_worlds < 2 {
            return Err(Error::InvalidArgument("need at least two worlds".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("bad optimizer settings".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::InvalidArgument("clip_norm must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.seed = 99;
        c.aux = AuxWeights {
            speaker: 0.0,
            progress: 1.5,
            matching: 0.25,
            angle: 1.0,
        };
        c.learning_rate = 0.1 + 0.2;
        c.progress_loss = ProgressLoss::Mse;
        c.vision_query = VisionQuery::VisionHistory;
        let mut back = TrainConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut c = TrainConfig::default();
        assert!(c.apply_text("itrations = 5").is_err());
        assert!(c.apply_text("iterations = five").is_err());
        assert!(c.apply_text("aux_weights = 1,1,1").is_err());
        assert!(c.apply_text("aux_weights = 1,1,-1,1").is_err());
        assert!(c.apply_text("just words").is_err());
        c.apply_text("# comment\n\niterations = 7 # trailing\n").unwrap();
        assert_eq!(c.iterations, 7);
    }

    #[test]
    fn world_seeds_are_distinct() {
        let c = TrainConfig::default();
        let mut s = c.world_seeds();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), c.n_worlds);
    }
}
