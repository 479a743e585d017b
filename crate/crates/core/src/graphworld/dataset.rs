//! Episode sampling and seen/unseen split allocation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use super::{synth_instruction, Instruction, NavGraph, WorldParams, T_MAX};
use crate::error::{Error, Result};
use crate::rng::{mix, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    TrainSeen,
    ValSeen,
    ValUnseen,
    TestUnseen,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::TrainSeen,
        Split::ValSeen,
        Split::ValUnseen,
        Split::TestUnseen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainSeen => "train-seen",
            Split::ValSeen => "val-seen",
            Split::ValUnseen => "val-unseen",
            Split::TestUnseen => "test-unseen",
        }
    }

    pub fn is_unseen(self) -> bool {
        matches!(self, Split::ValUnseen | Split::TestUnseen)
    }

    fn tag(self) -> u64 {
        self as u64 + 101
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown split {s}")))
    }
}

/// Fractions of episodes per split, in [`Split::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions(pub [f64; 4]);

impl Default for SplitFractions {
    fn default() -> Self {
        Self([0.7, 0.1, 0.1, 0.1])
    }
}

impl SplitFractions {
    pub fn get(&self, split: Split) -> f64 {
        self.0[split as usize]
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidArgument("split fractions must be nonnegative".into()));
        }
        let total: f64 = self.0.iter().sum();
        if libm::fabs(total - 1.0) > 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// Largest-remainder rounding of `total` episodes over the splits.
    pub fn counts(&self, total: usize) -> [usize; 4] {
        let raw: Vec<f64> = self.0.iter().map(|f| f * total as f64).collect();
        let mut counts = [0usize; 4];
        for (c, r) in counts.iter_mut().zip(&raw) {
            *c = libm::floor(*r) as usize;
        }
        let mut rest = total - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            (raw[b] - libm::floor(raw[b]))
                .total_cmp(&(raw[a] - libm::floor(raw[a])))
                .then(a.cmp(&b))
        });
        for i in order {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub world_seed: u64,
    pub start: usize,
    pub goal: usize,
    pub path: Vec<usize>,
    pub instruction: Instruction,
    pub split: Split,
    /// Instruction produced by the speaker rather than the template grammar.
    pub augmented: bool,
}

impl Episode {
    /// Number of nodes on the teacher path.
    pub fn path_len(&self) -> usize {
        self.path.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub world: WorldParams,
    pub graphs: BTreeMap<u64, NavGraph>,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn graph(&self, seed: u64) -> Result<&NavGraph> {
        self.graphs
            .get(&seed)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("no world with seed {seed}")))
    }

    pub fn split(&self, split: Split) -> Vec<&Episode> {
        self.episodes
            .iter()
            .filter(|e| e.split == split && !e.augmented)
            .collect()
    }

    /// World seeds hosting at least one episode of the given splits.
    pub fn world_seeds(&self, splits: &[Split]) -> BTreeSet<u64> {
        self.episodes
            .iter()
            .filter(|e| splits.contains(&e.split))
            .map(|e| e.world_seed)
            .collect()
    }
}

/// Samples one episode in `graph` with a start/goal pair whose teacher path
/// has at least one hop and at most [`T_MAX`] nodes.
pub fn sample_episode(graph: &NavGraph, seed: u64) -> Result<(usize, usize, Vec<usize>)> {
    let mut rng = stream(seed, 1);
    let n = graph.num_nodes();
    let start = rng.random_range(0..n);
    let mut goals = Vec::new();
    let mut paths = Vec::new();
    for goal in (0..n).filter(|&g| g != start) {
        let path = graph.shortest_path(start, goal)?;
        if path.len() <= T_MAX {
            goals.push(goal);
            paths.push(path);
        }
    }
    // Any neighbour of start is reachable in one hop, so this is never empty.
    let pick = rng.random_range(0..goals.len());
    Ok((start, goals[pick], paths.swap_remove(pick)))
}

pub fn make_dataset(
    world_seeds: &[u64],
    episodes_per_world: usize,
    fractions: SplitFractions,
    world: WorldParams,
) -> Result<Dataset> {
    if world_seeds.is_empty() {
        return Err(Error::Empty("world seed list"));
    }
    fractions.validate()?;
    let mut seen_seeds = BTreeSet::new();
    for &s in world_seeds {
        if !seen_seeds.insert(s) {
            return Err(Error::OverlappingSeeds(s));
        }
    }

    let n = world_seeds.len();
    let f = |s| fractions.get(s);
    let seen_frac = f(Split::TrainSeen) + f(Split::ValSeen);
    let unseen_frac = f(Split::ValUnseen) + f(Split::TestUnseen);
    let mut n_unseen = libm::round(n as f64 * unseen_frac) as usize;
    if unseen_frac > 0.0 {
        n_unseen = n_unseen.max(1);
    }
    if seen_frac > 0.0 {
        n_unseen = n_unseen.min(n.saturating_sub(1));
    }
    if (unseen_frac > 0.0 && n_unseen == 0) || (seen_frac > 0.0 && n_unseen >= n) {
        return Err(Error::InvalidArgument(
            "not enough worlds to keep seen and unseen splits disjoint".into(),
        ));
    }
    let (seen_pool, unseen_pool) = world_seeds.split_at(n - n_unseen);

    // Unseen worlds are divided between val-unseen and test-unseen when there
    // are enough of them; a single unseen world is shared.
    let (vu_pool, te_pool) = if n_unseen >= 2 && f(Split::ValUnseen) > 0.0 && f(Split::TestUnseen) > 0.0 {
        let share = f(Split::ValUnseen) / unseen_frac;
        let k = (libm::round(n_unseen as f64 * share) as usize).clamp(1, n_unseen - 1);
        unseen_pool.split_at(k)
    } else {
        (unseen_pool, unseen_pool)
    };

    let mut graphs = BTreeMap::new();
    for &s in world_seeds {
        graphs.insert(s, world.generate(s)?);
    }

    let counts = fractions.counts(n * episodes_per_world);
    let mut episodes = Vec::new();
    let mut next_id = 0u64;
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        let pool = match split {
            Split::TrainSeen | Split::ValSeen => seen_pool,
            Split::ValUnseen => vu_pool,
            Split::TestUnseen => te_pool,
        };
        for k in 0..count {
            let world_seed = pool[k % pool.len()];
            let graph = &graphs[&world_seed];
            let sub = mix(mix(world_seed, split.tag()), k as u64);
            let (start, goal, path) = sample_episode(graph, sub)?;
            let instruction = synth_instruction(&path, graph, mix(sub, 2))?;
            episodes.push(Episode {
                id: next_id,
                world_seed,
                start,
                goal,
                path,
                instruction,
                split: *split,
                augmented: false,
            });
            next_id += 1;
        }
    }
    Ok(Dataset {
        world,
        graphs,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphworld::vocab;

    fn small() -> WorldParams {
        WorldParams {
            n_nodes: 10,
            avg_degree: 3.0,
            view_dim: 32,
        }
    }

    #[test]
    fn unseen_episodes_live_on_held_out_worlds() {
        let ds = make_dataset(
            &[10, 11, 12, 13],
            20,
            SplitFractions([0.5, 0.1, 0.2, 0.2]),
            small(),
        )
        .unwrap();
        let train = ds.world_seeds(&[Split::TrainSeen, Split::ValSeen]);
        let unseen = ds.world_seeds(&[Split::ValUnseen, Split::TestUnseen]);
        assert!(train.is_disjoint(&unseen));
        assert_eq!(unseen.len(), 2);
    }

    #[test]
    fn empty_and_duplicate_seed_lists_are_rejected() {
        let fr = SplitFractions::default();
        assert_eq!(make_dataset(&[], 5, fr, small()), Err(Error::Empty("world seed list")));
        assert_eq!(make_dataset(&[1, 2, 1], 5, fr, small()), Err(Error::OverlappingSeeds(1)));
        assert!(make_dataset(&[1, 2], 5, SplitFractions([0.5, 0.5, 0.5, 0.0]), small()).is_err());
    }

    #[test]
    fn split_counts_match_fractions() {
        let fr = SplitFractions([0.5, 0.1, 0.2, 0.2]);
        let ds = make_dataset(&[1, 2, 3, 4, 5], 13, fr, small()).unwrap();
        let total = ds.episodes.len();
        assert_eq!(total, 65);
        for sp in Split::ALL {
            let c = ds.split(sp).len() as f64;
            // Counting oracle: requested share of the total, within one episode.
            assert!((c - fr.get(sp) * total as f64).abs() <= 1.0, "{sp}: {c}");
        }
    }

    #[test]
    fn replaying_teacher_reaches_goal() {
        let ds = make_dataset(&[3, 4, 5], 10, SplitFractions::default(), small()).unwrap();
        for ep in &ds.episodes {
            let g = ds.graph(ep.world_seed).unwrap();
            assert!(ep.path.len() >= 2 && ep.path.len() <= T_MAX);
            assert_eq!(g.path_length(&ep.path), g.distance(ep.start, ep.goal));
            let mut cur = ep.start;
            let mut moves = 0;
            loop {
                let a = g.teacher_action(ep.goal, cur).unwrap();
                let c = g.candidates(cur, 0.0).unwrap();
                match c[a].target {
                    None => break,
                    Some(n) => {
                        cur = n;
                        moves += 1;
                    }
                }
            }
            assert_eq!(cur, ep.goal);
            assert_eq!(moves, ep.path.len() - 1);
            ep.instruction.validate(vocab::SIZE, vocab::MAX_LEN).unwrap();
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = make_dataset(&[1, 2, 3, 4], 6, SplitFractions::default(), small()).unwrap();
        let b = make_dataset(&[1, 2, 3, 4], 6, SplitFractions::default(), small()).unwrap();
        assert_eq!(a, b);
    }
}
