//! Imitation and advantage actor-critic losses, the reward stand-in and the
//! summed-gradient update.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graphworld::NavGraph;
use crate::params::{ParamGrads, ParamStore, Sgd};
use crate::tape::{Tape, Var};

/// `Σ_t -log p_t(a*_t)`
pub fn il_loss(tape: &mut Tape, log_probs: &[Var], teacher: &[usize]) -> Result<Var> {
    if log_probs.is_empty() {
        return Err(Error::Empty("rollout"));
    }
    if teacher.len() != log_probs.len() {
        return Err(Error::MissingTeacherActions);
    }
    let picked: Vec<Var> = log_probs
        .iter()
        .zip(teacher)
        .map(|(&lp, &a)| tape.pick(lp, a))
        .collect();
    let s = tape.sum_n(&picked);
    Ok(tape.neg(s))
}

/// Discounted Monte Carlo returns and advantages against the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl AdvantageEstimate {
    pub fn compute(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Self> {
        if rewards.len() != values.len() {
            return Err(Error::LengthMismatch("rewards and values"));
        }
        let mut returns = alloc::vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for t in (0..rewards.len()).rev() {
            acc = rewards[t] + gamma * acc;
            returns[t] = acc;
        }
        let advantages = returns.iter().zip(values).map(|(g, v)| g - v).collect();
        Ok(Self {
            returns,
            advantages,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RlLoss {
    pub policy: Var,
    pub value: Var,
}

/// Policy term `-Σ log p_t(a_t) A_t` with `A_t` frozen, and value term
/// `Σ (G_t - V_t)²` which only reaches the critic through `V_t`.
pub fn rl_loss(
    tape: &mut Tape,
    log_probs: &[Var],
    actions: &[usize],
    values: &[Var],
    adv: &AdvantageEstimate,
) -> Result<RlLoss> {
    let n = log_probs.len();
    if n == 0 {
        return Err(Error::Empty("rollout"));
    }
    if actions.len() != n || values.len() != n || adv.advantages.len() != n {
        return Err(Error::LengthMismatch("rollout and advantages"));
    }
    let mut policy_terms = Vec::with_capacity(n);
    let mut value_terms = Vec::with_capacity(n);
    for t in 0..n {
        let lp = tape.pick(log_probs[t], actions[t]);
        policy_terms.push(tape.scale(lp, -adv.advantages[t]));
        let d = tape.add_const(values[t], -adv.returns[t]);
        let sq = tape.square(d);
        value_terms.push(tape.sum(sq));
    }
    Ok(RlLoss {
        policy: tape.sum_n(&policy_terms),
        value: tape.sum_n(&value_terms),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    pub success_radius: f64,
    pub success_bonus: f64,
    pub failure_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            success_radius: 1.0,
            success_bonus: 2.0,
            failure_penalty: -2.0,
        }
    }
}

/// One reward per decision. A move earns the decrease in geodesic distance to
/// the goal; the final decision also receives the terminal bonus or penalty
/// depending on where the agent ends. Without a stop the trajectory has one
/// decision per move.
pub fn compute_rewards(
    graph: &NavGraph,
    nodes: &[usize],
    stopped: bool,
    goal: usize,
    cfg: &RewardConfig,
) -> Result<Vec<f64>> {
    if nodes.is_empty() || (!stopped && nodes.len() < 2) {
        return Err(Error::Empty("trajectory"));
    }
    for &n in nodes {
        graph.node(n)?;
    }
    graph.node(goal)?;
    let mut rewards: Vec<f64> = nodes
        .windows(2)
        .map(|w| graph.distance(w[0], goal) - graph.distance(w[1], goal))
        .collect();
    if stopped {
        rewards.push(0.0);
    }
    let end = *nodes.last().unwrap();
    let terminal = if graph.distance(end, goal) <= cfg.success_radius {
        cfg.success_bonus
    } else {
        cfg.failure_penalty
    };
    *rewards.last_mut().unwrap() += terminal;
    Ok(rewards)
}

/// Named scalar loss values checked before backpropagation.
pub fn check_finite(terms: &[(&str, f64)], iteration: usize) -> Result<()> {
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                iteration,
            });
        }
    }
    Ok(())
}

/// Adds the gradient sets and applies one optimizer step. A non-finite
/// gradient aborts before any parameter changes and names the parameter.
pub fn joint_update(
    store: &mut ParamStore,
    opt: &mut Sgd,
    parts: &[&ParamGrads],
    clip: Option<f64>,
    iteration: usize,
) -> Result<ParamGrads> {
    let mut total = ParamGrads::zeros_like(store);
    for g in parts {
        total.add_assign(g);
    }
    if let Some(id) = total.first_non_finite() {
        return Err(Error::NonFinite {
            term: store.get(id).name.clone(),
            iteration,
        });
    }
    if let Some(max) = clip {
        let norm = total.global_norm();
        if norm > max {
            total.scale(max / norm);
        }
    }
    opt.step(store, &total);
    Ok(total)
}
