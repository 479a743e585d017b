//! Deterministic synthetic navigation worlds.
//!
//! A world is a random geometric graph on a 10 m square. Every node carries a
//! Gaussian appearance latent; panoramic views and candidate features are
//! direction-dependent blends of those latents, so both landmarks and turn
//! directions are recoverable from what the agent sees. Everything here is a
//! pure function of the seed.

mod dataset;
mod instruction;

pub use dataset::{make_dataset, sample_episode, Dataset, Episode, Split, SplitFractions};
pub use instruction::{synth_instruction, vocab, Direction, Instruction};

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::mix;

/// Views in a panorama: 12 headings at 30° times 3 elevations.
pub const NUM_VIEWS: usize = 36;
pub const HEADINGS_PER_ELEVATION: usize = 12;
pub const ELEVATIONS: [f64; 3] = [-PI / 6.0, 0.0, PI / 6.0];
pub const DEFAULT_VIEW_DIM: usize = 32;
/// Side of the square the nodes are scattered over, in meters.
pub const WORLD_SIZE: f64 = 10.0;
/// Maximum number of nodes on a teacher path.
pub const T_MAX: usize = 10;
/// Orientation quad width appended to every view and candidate feature.
pub const QUAD_DIM: usize = 4;
/// Heading every episode starts with.
pub const INITIAL_HEADING: f64 = 0.0;

const EDGE_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;
const HEADING_QUANTUM: f64 = 1.0 / (1u64 << 32) as f64;

const STREAM_POSITIONS: u64 = 1;
const STREAM_LATENTS: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    /// Position in meters.
    pub pos: [f64; 2],
    pub latent: Vec<f64>,
}

/// Connected undirected navigation graph with precomputed geodesics.
#[derive(Clone, Debug, PartialEq)]
pub struct NavGraph {
    pub seed: u64,
    nodes: Vec<NodeRecord>,
    /// Sorted neighbour lists.
    adjacency: Vec<Vec<usize>>,
    /// Row-major all-pairs shortest path lengths.
    dist: Vec<f64>,
}

/// Generation parameters shared by every world in a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldParams {
    pub n_nodes: usize,
    pub avg_degree: f64,
    pub view_dim: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_nodes: 10,
            avg_degree: 3.0,
            view_dim: DEFAULT_VIEW_DIM,
        }
    }
}

impl WorldParams {
    pub fn generate(&self, seed: u64) -> Result<NavGraph> {
        generate_world_with(seed, self.n_nodes, self.avg_degree, self.view_dim)
    }

    /// Width of a candidate or view vector: appearance plus orientation quad.
    pub fn feature_dim(&self) -> usize {
        self.view_dim + QUAD_DIM
    }
}

/// Builds a world with the default appearance dimension.
pub fn generate_world(seed: u64, n_nodes: usize, avg_degree: f64) -> Result<NavGraph> {
    generate_world_with(seed, n_nodes, avg_degree, DEFAULT_VIEW_DIM)
}

pub fn generate_world_with(
    seed: u64,
    n_nodes: usize,
    avg_degree: f64,
    view_dim: usize,
) -> Result<NavGraph> {
    if n_nodes < 2 {
        return Err(Error::InvalidArgument("a world needs at least 2 nodes".into()));
    }
    if !(avg_degree >= 1.0) || !avg_degree.is_finite() {
        return Err(Error::InvalidArgument("avg_degree must be >= 1".into()));
    }
    if view_dim == 0 {
        return Err(Error::InvalidArgument("view_dim must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, STREAM_POSITIONS));
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(n_nodes);
    while positions.len() < n_nodes {
        let p = [
            rng.random::<f64>() * WORLD_SIZE,
            rng.random::<f64>() * WORLD_SIZE,
        ];
        // Coincident nodes would give a zero-length edge.
        if positions.iter().all(|q| euclid(*q, p) > 1e-3) {
            positions.push(p);
        }
    }

    let k = (libm::round(avg_degree) as usize).clamp(1, n_nodes - 1);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..n_nodes {
        let mut others: Vec<usize> = (0..n_nodes).filter(|&b| b != a).collect();
        others.sort_by(|&x, &y| {
            euclid(positions[a], positions[x])
                .total_cmp(&euclid(positions[a], positions[y]))
                .then(x.cmp(&y))
        });
        for &b in others.iter().take(k) {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    edges.dedup();

    // Connectivity repair: join the component of node 0 to its nearest outsider
    // until everything is reachable.
    loop {
        let reach = reachable(n_nodes, &edges, 0);
        if reach.iter().all(|&r| r) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..n_nodes).filter(|&a| reach[a]) {
            for b in (0..n_nodes).filter(|&b| !reach[b]) {
                let d = euclid(positions[a], positions[b]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("disconnected graph has an outsider");
        edges.push((a.min(b), a.max(b)));
        edges.sort_unstable();
    }

    let mut lrng = ChaCha8Rng::seed_from_u64(mix(seed, STREAM_LATENTS));
    let nodes = positions
        .into_iter()
        .enumerate()
        .map(|(id, pos)| NodeRecord {
            id,
            pos,
            latent: (0..view_dim)
                .map(|_| lrng.sample::<f64, _>(StandardNormal))
                .collect(),
        })
        .collect();
    NavGraph::from_parts(seed, nodes, &edges)
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn reachable(n: usize, edges: &[(usize, usize)], from: usize) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Canonical heading in `[0, 2π)` on a fixed dyadic grid, so that headings
/// differing by whole turns map to the same value.
pub fn canonical_heading(heading: f64) -> f64 {
    let mut h = libm::fmod(heading, TAU);
    if h < 0.0 {
        h += TAU;
    }
    let q = libm::round(h / HEADING_QUANTUM) * HEADING_QUANTUM;
    if q >= TAU {
        0.0
    } else {
        q
    }
}

/// `(sin θ, cos θ, sin φ, cos φ)`
pub fn orientation_quad(theta: f64, phi: f64) -> [f64; 4] {
    [libm::sin(theta), libm::cos(theta), libm::sin(phi), libm::cos(phi)]
}

/// Direction-dependent appearance: the latent blended with a fixed
/// sinusoidal embedding of the world-frame direction.
fn appearance(latent: &[f64], world_angle: f64, elevation: f64) -> Vec<f64> {
    latent
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let freq = 1.0 + (j % 3) as f64;
            let phase = 0.37 * j as f64;
            let tilt = if j % 2 == 0 { 0.8 } else { -0.8 };
            0.7 * z + 0.5 * libm::cos(freq * world_angle + phase + tilt * elevation)
        })
        .collect()
}

/// One panoramic view: appearance features plus orientation quad.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub feature: Vec<f64>,
    pub quad: [f64; 4],
}

impl View {
    /// Feature concatenated with the orientation quad.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.feature.clone();
        v.extend_from_slice(&self.quad);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanoramicObservation {
    pub node_id: usize,
    pub views: Vec<View>,
}

impl PanoramicObservation {
    /// Row-major `36 × (D_v + 4)` matrix of view vectors.
    pub fn matrix(&self) -> Vec<f64> {
        self.views.iter().flat_map(|v| v.vector()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// `None` for the stop action.
    pub target: Option<usize>,
    pub feature: Vec<f64>,
    pub quad: [f64; 4],
}

impl Candidate {
    pub fn is_stop(&self) -> bool {
        self.target.is_none()
    }

    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.feature.clone();
        v.extend_from_slice(&self.quad);
        v
    }
}

impl NavGraph {
    /// Assembles a graph from explicit nodes and undirected edges. Edge
    /// lengths are Euclidean distances rounded to a 2⁻²⁰ m grid, which keeps
    /// every path sum exact in `f64`.
    pub fn from_parts(seed: u64, nodes: Vec<NodeRecord>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return Err(Error::InvalidArgument("a world needs at least 2 nodes".into()));
        }
        if nodes.iter().enumerate().any(|(i, nd)| nd.id != i) {
            return Err(Error::InvalidArgument("node ids must be 0..n in order".into()));
        }
        if nodes.iter().any(|nd| !nd.pos.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument("node positions must be finite".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n {
                return Err(Error::UnknownNode(a));
            }
            if b >= n {
                return Err(Error::UnknownNode(b));
            }
            if a == b {
                return Err(Error::InvalidArgument("self loops are not allowed".into()));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let mut graph = Self {
            seed,
            nodes,
            adjacency,
            dist: Vec::new(),
        };
        if (0..n).any(|a| graph.adjacency[a].iter().any(|&b| graph.edge_length(a, b) <= 0.0)) {
            return Err(Error::InvalidArgument("edges must have positive length".into()));
        }
        graph.dist = (0..n).flat_map(|s| graph.dijkstra(s)).collect();
        if graph.dist.iter().any(|d| d.is_infinite()) {
            return Err(Error::InvalidArgument("graph is not connected".into()));
        }
        Ok(graph)
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let Some(u) = (0..n)
                .filter(|&u| !done[u] && dist[u].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
            else {
                break;
            };
            done[u] = true;
            for &v in &self.adjacency[u] {
                let alt = dist[u] + self.edge_length(u, v);
                if alt < dist[v] {
                    dist[v] = alt;
                }
            }
        }
        dist
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&NodeRecord> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn view_dim(&self) -> usize {
        self.nodes[0].latent.len()
    }

    pub fn neighbours(&self, id: usize) -> Result<&[usize]> {
        self.adjacency
            .get(id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn degree(&self, id: usize) -> usize {
        self.adjacency[id].len()
    }

    /// Undirected edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            for &b in adj {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|adj| adj.binary_search(&b).is_ok())
    }

    /// Euclidean distance between two nodes, quantized to the edge grid.
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let d = euclid(self.nodes[a].pos, self.nodes[b].pos);
        (libm::round(d / EDGE_QUANTUM) * EDGE_QUANTUM).max(0.0)
    }

    /// Straight-line distance (unquantized).
    pub fn euclidean(&self, a: usize, b: usize) -> f64 {
        euclid(self.nodes[a].pos, self.nodes[b].pos)
    }

    /// Geodesic (shortest path) distance.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.nodes.len() + b]
    }

    /// World-frame direction of travel from `a` to `b`.
    pub fn bearing(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.nodes[a].pos, self.nodes[b].pos);
        libm::atan2(pb[1] - pa[1], pb[0] - pa[0])
    }

    /// Next node on the teacher route from `current` toward `goal`: the
    /// neighbour minimizing edge length plus remaining geodesic, lowest id on
    /// ties. `None` when already at the goal.
    pub fn next_hop(&self, current: usize, goal: usize) -> Option<usize> {
        if current == goal {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        for &n in &self.adjacency[current] {
            let via = self.edge_length(current, n) + self.distance(n, goal);
            if best.is_none_or(|(b, _)| via < b) {
                best = Some((via, n));
            }
        }
        best.map(|(_, n)| n)
    }

    /// Teacher route from `start` to `goal`, inclusive of both ends.
    pub fn shortest_path(&self, start: usize, goal: usize) -> Result<Vec<usize>> {
        self.node(start)?;
        self.node(goal)?;
        let mut path = vec![start];
        let mut cur = start;
        while let Some(next) = self.next_hop(cur, goal) {
            path.push(next);
            cur = next;
        }
        Ok(path)
    }

    /// Sum of edge lengths along a node sequence. Consecutive repeats count 0.
    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2)
            .map(|w| if w[0] == w[1] { 0.0 } else { self.edge_length(w[0], w[1]) })
            .sum()
    }

    /// Panorama at `node` for an agent facing `heading`. View `i` sits at
    /// heading-relative yaw `(i mod 12)·30°` and elevation `ELEVATIONS[i / 12]`.
    /// A horizontal view whose 30° sector contains a neighbour shows that
    /// neighbour's appearance blended with the node's own.
    pub fn observe(&self, node: usize, heading: f64) -> Result<PanoramicObservation> {
        let rec = self.node(node)?;
        let heading = canonical_heading(heading);
        let sector = TAU / HEADINGS_PER_ELEVATION as f64;
        let mut views = Vec::with_capacity(NUM_VIEWS);
        for (e, &phi) in ELEVATIONS.iter().enumerate() {
            for h in 0..HEADINGS_PER_ELEVATION {
                let theta = h as f64 * sector;
                let world = heading + theta;
                let mut latent = rec.latent.clone();
                if e == 1 {
                    let visible = self.adjacency[node].iter().find(|&&n| {
                        libm::fabs(crate::math::wrap_angle(self.bearing(node, n) - world))
                            < sector / 2.0
                    });
                    if let Some(&n) = visible {
                        for (z, &o) in latent.iter_mut().zip(&self.nodes[n].latent) {
                            *z = 0.5 * *z + 0.5 * o;
                        }
                    }
                }
                views.push(View {
                    feature: appearance(&latent, world, phi),
                    quad: orientation_quad(theta, phi),
                });
            }
        }
        Ok(PanoramicObservation {
            node_id: node,
            views,
        })
    }

    /// Navigable candidates at `node`: one per neighbour in ascending id
    /// order, then the stop action.
    pub fn candidates(&self, node: usize, heading: f64) -> Result<Vec<Candidate>> {
        self.node(node)?;
        let heading = canonical_heading(heading);
        let mut out: Vec<Candidate> = self.adjacency[node]
            .iter()
            .map(|&n| {
                let bearing = self.bearing(node, n);
                Candidate {
                    target: Some(n),
                    feature: appearance(&self.nodes[n].latent, bearing, 0.0),
                    quad: orientation_quad(bearing - heading, 0.0),
                }
            })
            .collect();
        out.push(Candidate {
            target: None,
            feature: vec![0.0; self.view_dim()],
            quad: [0.0; 4],
        });
        Ok(out)
    }

    /// Index into [`NavGraph::candidates`] of the teacher's choice at
    /// `current` for an episode ending at `goal`.
    pub fn teacher_action(&self, goal: usize, current: usize) -> Result<usize> {
        self.node(current)?;
        self.node(goal)?;
        Ok(match self.next_hop(current, goal) {
            None => self.degree(current),
            Some(n) => self.adjacency[current]
                .binary_search(&n)
                .expect("next hop is a neighbour"),
        })
    }

    /// Heading after moving from `a` to `b`.
    pub fn heading_after(&self, a: usize, b: usize) -> f64 {
        canonical_heading(self.bearing(a, b))
    }
}

/// Convenience: teacher action for an episode.
pub fn teacher_action(graph: &NavGraph, episode: &Episode, current: usize) -> Result<usize> {
    graph.teacher_action(episode.goal, current)
}
