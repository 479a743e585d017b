//! Navigation metrics: trajectory length, navigation error, oracle success,
//! success and success weighted by path length.

use crate::error::{Error, Result};
use crate::graphworld::NavGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Shortest-path distance through the graph.
    #[default]
    Geodesic,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub tl: f64,
    pub ne: f64,
    pub oracle: bool,
    pub success: bool,
    pub spl: f64,
}

/// Means over a set of episodes; success flags become rates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MetricSummary {
    pub ne: f64,
    pub or: f64,
    pub sr: f64,
    pub spl: f64,
    pub tl: f64,
    pub episodes: usize,
}

impl MetricSummary {
    pub const COLUMNS: [&'static str; 5] = ["NE", "OR", "SR", "SPL", "TL"];

    pub fn values(&self) -> [f64; 5] {
        [self.ne, self.or, self.sr, self.spl, self.tl]
    }
}

fn dist(graph: &NavGraph, a: usize, b: usize, mode: DistanceMode) -> f64 {
    match mode {
        DistanceMode::Geodesic => graph.distance(a, b),
        DistanceMode::Euclidean => graph.euclidean(a, b),
    }
}

pub fn evaluate(
    graph: &NavGraph,
    trajectory: &[usize],
    start: usize,
    goal: usize,
    success_radius: f64,
    mode: DistanceMode,
) -> Result<EpisodeMetrics> {
    let first = *trajectory.first().ok_or(Error::Empty("trajectory"))?;
    if first != start {
        return Err(Error::InvalidArgument(alloc::format!(
            "trajectory starts at {first}, episode at {start}"
        )));
    }
    for &n in trajectory {
        graph.node(n)?;
    }
    graph.node(goal)?;
    let tl = graph.path_length(trajectory);
    let end = *trajectory.last().unwrap();
    let ne = dist(graph, end, goal, mode);
    let success = ne <= success_radius;
    let oracle = trajectory
        .iter()
        .any(|&n| dist(graph, n, goal, mode) <= success_radius);
    let shortest = graph.distance(start, goal);
    let spl = if !success {
        0.0
    } else if shortest == 0.0 && tl == 0.0 {
        1.0
    } else {
        shortest / tl.max(shortest)
    };
    Ok(EpisodeMetrics {
        tl,
        ne,
        oracle,
        success,
        spl,
    })
}

pub fn summarize(per_episode: &[EpisodeMetrics]) -> MetricSummary {
    let n = per_episode.len();
    if n == 0 {
        return MetricSummary::default();
    }
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| per_episode.iter().map(f).sum::<f64>() / n as f64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    MetricSummary {
        ne: mean(&|m| m.ne),
        or: mean(&|m| flag(m.oracle)),
        sr: mean(&|m| flag(m.success)),
        spl: mean(&|m| m.spl),
        tl: mean(&|m| m.tl),
        episodes: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphworld::NodeRecord;

    /// Square 0-1-2-3 with unit sides plus a long spur 3-4.
    fn square() -> NavGraph {
        let pos = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 4.0]];
        let nodes = pos
            .iter()
            .enumerate()
            .map(|(id, &p)| NodeRecord {
                id,
                pos: p,
                latent: alloc::vec![0.0; 4],
            })
            .collect();
        NavGraph::from_parts(0, nodes, &[(0, 1), (1, 2), (2, 3), (3, 0), (3, 4)]).unwrap()
    }

    #[test]
    fn shortest_path_is_perfect() {
        let g = square();
        let m = evaluate(&g, &[0, 3, 4], 0, 4, 1.0, DistanceMode::Geodesic).unwrap();
        assert_eq!(m.tl, 4.0);
        assert_eq!(m.ne, 0.0);
        assert!(m.success && m.oracle);
        assert_eq!(m.spl, 1.0);
    }

    #[test]
    fn immediate_stop_far_away_fails() {
        let g = square();
        let m = evaluate(&g, &[0], 0, 4, 1.0, DistanceMode::Geodesic).unwrap();
        assert!(!m.success && !m.oracle);
        assert_eq!(m.spl, 0.0);
        assert_eq!(m.tl, 0.0);
    }

    #[test]
    fn doubled_length_halves_spl() {
        let g = square();
        // Goal 2 is 2 m away and 0-1-0-1-2 walks 4 m.
        let m = evaluate(&g, &[0, 1, 0, 1, 2], 0, 2, 0.5, DistanceMode::Geodesic).unwrap();
        assert!(m.success);
        assert_eq!(m.tl, 4.0);
        assert_eq!(m.spl, 0.5);
    }

    #[test]
    fn oracle_success_without_success() {
        let g = square();
        let m = evaluate(&g, &[0, 3, 4], 0, 3, 0.5, DistanceMode::Geodesic).unwrap();
        assert!(m.oracle && !m.success);
        assert_eq!(m.spl, 0.0);
    }

    #[test]
    fn euclidean_mode_uses_straight_lines() {
        let g = square();
        let geo = evaluate(&g, &[0, 1], 0, 2, 0.5, DistanceMode::Geodesic).unwrap();
        let euc = evaluate(&g, &[0, 1], 0, 2, 0.5, DistanceMode::Euclidean).unwrap();
        assert_eq!(geo.ne, 1.0);
        assert_eq!(euc.ne, 1.0);
        let euc = evaluate(&g, &[0], 0, 2, 0.5, DistanceMode::Euclidean).unwrap();
        assert!((euc.ne - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bad_start_is_rejected() {
        let g = square();
        assert!(evaluate(&g, &[1, 2], 0, 2, 1.0, DistanceMode::Geodesic).is_err());
        assert!(evaluate(&g, &[], 0, 2, 1.0, DistanceMode::Geodesic).is_err());
    }

    #[test]
    fn summary_is_exact_mean() {
        let ms = [
            EpisodeMetrics { tl: 1.0, ne: 0.5, oracle: true, success: true, spl: 0.75 },
            EpisodeMetrics { tl: 3.0, ne: 2.5, oracle: true, success: false, spl: 0.0 },
        ];
        let s = summarize(&ms);
        assert_eq!(s.values(), [1.5, 1.0, 0.5, 0.375, 2.0]);
        assert_eq!(summarize(&[]).episodes, 0);
    }
}
