//! Line-delimited episode files and graph JSON.

use std::fs;
use std::path::Path;

use auxrn_core::graphworld::{vocab, Dataset, Episode, Instruction, NavGraph, Split};
use serde::{Deserialize, Serialize};

use crate::error::{io, json, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub world_seed: u64,
    pub start: usize,
    pub goal: usize,
    pub path: Vec<usize>,
    pub token_ids: Vec<u32>,
    pub split: String,
    #[serde(default)]
    pub augmented: bool,
}

impl From<&Episode> for EpisodeRecord {
    fn from(e: &Episode) -> Self {
        Self {
            episode_id: e.id,
            world_seed: e.world_seed,
            start: e.start,
            goal: e.goal,
            path: e.path.clone(),
            token_ids: e.instruction.tokens.clone(),
            split: e.split.to_string(),
            augmented: e.augmented,
        }
    }
}

impl EpisodeRecord {
    pub fn into_episode(self) -> Result<Episode> {
        let split: Split = self.split.parse()?;
        let instruction = Instruction::new(self.token_ids);
        instruction.validate(vocab::SIZE, vocab::MAX_LEN)?;
        if self.path.first() != Some(&self.start) || self.path.last() != Some(&self.goal) {
            return Err(Error::Invalid(format!(
                "episode {}: path does not join start and goal",
                self.episode_id
            )));
        }
        Ok(Episode {
            id: self.episode_id,
            world_seed: self.world_seed,
            start: self.start,
            goal: self.goal,
            path: self.path,
            instruction,
            split,
            augmented: self.augmented,
        })
    }
}

pub fn episodes_to_jsonl<'a>(episodes: impl IntoIterator<Item = &'a Episode>) -> Result<String> {
    let mut out = String::new();
    for e in episodes {
        out.push_str(&serde_json::to_string(&EpisodeRecord::from(e)).map_err(json("episode"))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_episodes(text: &str) -> Result<Vec<Episode>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: EpisodeRecord =
                serde_json::from_str(l).map_err(json(format!("episode line {}", i + 1)))?;
            rec.into_episode()
        })
        .collect()
}

/// Reads episodes and checks that each refers to a valid node sequence of a
/// world in `dataset`.
pub fn read_episodes(path: &Path, dataset: &Dataset) -> Result<Vec<Episode>> {
    let episodes = parse_episodes(&read_text(path)?)?;
    for e in &episodes {
        let g = dataset.graph(e.world_seed)?;
        for w in e.path.windows(2) {
            if !g.has_edge(w[0], w[1]) {
                return Err(Error::Invalid(format!(
                    "episode {}: {} and {} are not adjacent",
                    e.id, w[0], w[1]
                )));
            }
        }
    }
    Ok(episodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeXY {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub seed: u64,
    pub nodes: Vec<NodeXY>,
    pub edges: Vec<[usize; 2]>,
}

impl From<&NavGraph> for GraphRecord {
    fn from(g: &NavGraph) -> Self {
        Self {
            seed: g.seed,
            nodes: g
                .nodes()
                .iter()
                .map(|n| NodeXY {
                    id: n.id,
                    x: n.pos[0],
                    y: n.pos[1],
                })
                .collect(),
            edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl GraphRecord {
    /// Whether `graph` has exactly this layout.
    pub fn matches(&self, graph: &NavGraph) -> bool {
        *self == GraphRecord::from(graph)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, text).map_err(io(path))
}

pub fn to_json<T: Serialize>(value: &T, context: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(json(context))?;
    s.push('\n');
    Ok(s)
}

/// Writes the dataset as `episodes.jsonl` plus one `graphs/<seed>.json` per
/// world.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    write_text(&dir.join("episodes.jsonl"), &episodes_to_jsonl(&dataset.episodes)?)?;
    for (seed, g) in &dataset.graphs {
        let path = dir.join("graphs").join(format!("{seed}.json"));
        write_text(&path, &to_json(&GraphRecord::from(g), "graph")?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use auxrn_core::graphworld::{make_dataset, SplitFractions, WorldParams};

    #[test]
    fn episodes_round_trip() {
        let ds = make_dataset(&[1, 2, 3], 4, SplitFractions::default(), WorldParams::default()).unwrap();
        let text = episodes_to_jsonl(&ds.episodes).unwrap();
        assert_eq!(parse_episodes(&text).unwrap(), ds.episodes);
        assert!(text.lines().next().unwrap().contains("\"token_ids\""));
    }

    #[test]
    fn malformed_records_are_rejected() {
        let bad_split = r#"{"episode_id":0,"world_seed":1,"start":0,"goal":1,"path":[0,1],"token_ids":[1,2],"split":"train"}"#;
        assert!(parse_episodes(bad_split).is_err());
        let bad_tokens = r#"{"episode_id":0,"world_seed":1,"start":0,"goal":1,"path":[0,1],"token_ids":[1,99,2],"split":"train-seen"}"#;
        assert!(parse_episodes(bad_tokens).is_err());
        let bad_path = r#"{"episode_id":0,"world_seed":1,"start":0,"goal":1,"path":[0,2],"token_ids":[1,2],"split":"train-seen"}"#;
        assert!(parse_episodes(bad_path).is_err());
    }

    #[test]
    fn graph_record_matches_its_graph() {
        let g = WorldParams::default().generate(5).unwrap();
        let rec = GraphRecord::from(&g);
        assert!(rec.matches(&g));
        let back: GraphRecord = serde_json::from_str(&to_json(&rec, "g").unwrap()).unwrap();
        assert_eq!(back, rec);
        assert!(!rec.matches(&WorldParams::default().generate(6).unwrap()));
    }
}
