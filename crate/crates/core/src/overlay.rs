//! P2P overlay graphs.
//!
//! Two generators are provided: uniform random graphs with a fixed number of
//! nodes and edges, and Watts-Strogatz small-world graphs (ring lattice plus
//! probabilistic rewiring). Both produce simple connected undirected graphs;
//! a draw that comes out disconnected is regenerated with a deterministically
//! advanced seed, so a given `(args, seed)` pair always yields the same graph.
//!
//! Node ids are dense integers `0..n`, and neighbor lists are sorted
//! ascending so that iteration order (and therefore random-stream
//! consumption) is canonical.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::rng::{SimRng, StreamPurpose};

/// Dense node identifier in `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline(always)]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("edge count {m} is below the connectivity minimum {min} for {n} nodes")]
    TooFewEdges { n: u32, m: u64, min: u64 },
    #[error("edge count {m} exceeds the complete-graph bound {max} for {n} nodes")]
    TooManyEdges { n: u32, m: u64, max: u64 },
    #[error("node count {0} is below the minimum of 2")]
    TooFewNodes(u32),
    #[error("base degree {0} must be even")]
    OddBaseDegree(u32),
    #[error("base degree {k} must satisfy 2 <= k < n (n = {n})")]
    BaseDegreeOutOfRange { k: u32, n: u32 },
    #[error("rewire probability {0} must lie in [0,1]")]
    BetaOutOfRange(f64),
    #[error("no connected graph found after {0} attempts")]
    Disconnected(u32),
    #[error("node id {id} out of range for {n} nodes")]
    NodeOutOfRange { id: u32, n: u32 },
}

const MAX_ATTEMPTS: u32 = 1000;

/// An immutable undirected P2P overlay.
///
/// Invariants held by construction: simple graph (no self-loops or duplicate
/// edges), connected, adjacency lists sorted ascending and consistent with
/// the edge set in both directions.
#[derive(Debug, Clone)]
pub struct Overlay {
    node_count: u32,
    /// Normalized `(u, v)` with `u < v`, sorted lexicographically.
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
    seed: u64,
}

impl Overlay {
    /// Uniform random graph with exactly `n` nodes and `m` distinct edges.
    ///
    /// Edges are drawn uniformly without replacement; the graph is
    /// regenerated (with an advanced seed) until connected.
    pub fn generate_random_graph(n: u32, m: u64, seed: u64) -> Result<Overlay, OverlayError> {
        if n < 2 {
            return Err(OverlayError::TooFewNodes(n));
        }
        let min = n as u64 - 1;
        let max = n as u64 * (n as u64 - 1) / 2;
        if m < min {
            return Err(OverlayError::TooFewEdges { n, m, min });
        }
        if m > max {
            return Err(OverlayError::TooManyEdges { n, m, max });
        }

        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = SimRng::derive(seed, StreamPurpose::Topology, &[attempt as u64]);
            let mut set: HashSet<(u32, u32)> = HashSet::with_capacity(m as usize);
            while (set.len() as u64) < m {
                let u = rng.index(n as usize) as u32;
                let v = rng.index(n as usize) as u32;
                if u == v {
                    continue;
                }
                set.insert((u.min(v), u.max(v)));
            }
            let overlay = Overlay::from_edge_set(n, &set, seed);
            if overlay.is_connected() {
                return Ok(overlay);
            }
        }
        Err(OverlayError::Disconnected(MAX_ATTEMPTS))
    }

    /// Watts-Strogatz small-world graph: a ring lattice joining each node to
    /// its `k` nearest ring neighbors, with every lattice edge rewired with
    /// probability `beta`. The edge count is exactly `n * k / 2`, so node and
    /// edge totals can be matched against the random-graph experiments.
    pub fn generate_small_world(
        n: u32,
        k: u32,
        beta: f64,
        seed: u64,
    ) -> Result<Overlay, OverlayError> {
        if n < 2 {
            return Err(OverlayError::TooFewNodes(n));
        }
        if k % 2 != 0 {
            return Err(OverlayError::OddBaseDegree(k));
        }
        if k < 2 || k >= n {
            return Err(OverlayError::BaseDegreeOutOfRange { k, n });
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(OverlayError::BetaOutOfRange(beta));
        }

        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = SimRng::derive(seed, StreamPurpose::Topology, &[attempt as u64]);
            let mut set: HashSet<(u32, u32)> = HashSet::with_capacity((n * k / 2) as usize);
            for j in 1..=(k / 2) {
                for i in 0..n {
                    let v = (i + j) % n;
                    set.insert((i.min(v), i.max(v)));
                }
            }
            // Rewire pass in the same canonical (offset, node) order.
            for j in 1..=(k / 2) {
                for i in 0..n {
                    if !rng.coin(beta) {
                        continue;
                    }
                    let v = (i + j) % n;
                    let old = (i.min(v), i.max(v));
                    if !set.contains(&old) {
                        continue; // already rewired away by an earlier pass
                    }
                    // A node adjacent to everyone has nowhere to rewire to.
                    let degree_i = set.iter().filter(|&&(a, b)| a == i || b == i).count();
                    if degree_i as u32 >= n - 1 {
                        continue;
                    }
                    let w = loop {
                        let w = rng.index(n as usize) as u32;
                        let cand = (i.min(w), i.max(w));
                        if w != i && !set.contains(&cand) {
                            break w;
                        }
                    };
                    set.remove(&old);
                    set.insert((i.min(w), i.max(w)));
                }
            }
            let overlay = Overlay::from_edge_set(n, &set, seed);
            if overlay.is_connected() {
                return Ok(overlay);
            }
        }
        Err(OverlayError::Disconnected(MAX_ATTEMPTS))
    }

    /// Build an overlay directly from an edge list. Intended for tests and
    /// hand-crafted topologies; edges are normalized and deduplicated, and
    /// the result is not required to be connected.
    pub fn from_edges(n: u32, edges: &[(u32, u32)]) -> Overlay {
        let set: HashSet<(u32, u32)> = edges
            .iter()
            .filter(|&&(u, v)| u != v)
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        Overlay::from_edge_set(n, &set, 0)
    }

    fn from_edge_set(n: u32, set: &HashSet<(u32, u32)>, seed: u64) -> Overlay {
        let mut edges: Vec<(NodeId, NodeId)> = set
            .iter()
            .map(|&(u, v)| (NodeId(u), NodeId(v)))
            .collect();
        edges.sort_unstable();
        let mut adjacency = vec![Vec::new(); n as usize];
        for &(u, v) in &edges {
            adjacency[u.index()].push(v);
            adjacency[v.index()].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Overlay {
            node_count: n,
            edges,
            adjacency,
            seed,
        }
    }

    pub fn node_count(&self) -> u32 {
        self.node_count
    }

    pub fn edge_count(&self) -> u64 {
        self.edges.len() as u64
    }

    /// Normalized edge list, sorted ascending.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId], OverlayError> {
        self.adjacency
            .get(v.index())
            .map(|l| l.as_slice())
            .ok_or(OverlayError::NodeOutOfRange {
                id: v.0,
                n: self.node_count,
            })
    }

    /// Unchecked neighbor access for the simulation hot path; `v` must be a
    /// valid id of this overlay.
    #[inline(always)]
    pub(crate) fn adj(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.index()]
    }

    pub fn degree(&self, v: NodeId) -> Result<usize, OverlayError> {
        self.neighbors(v).map(|l| l.len())
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        let mut seen = vec![false; self.node_count as usize];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut count = 1u32;
        while let Some(u) = stack.pop() {
            for &w in &self.adjacency[u as usize] {
                if !seen[w.index()] {
                    seen[w.index()] = true;
                    count += 1;
                    stack.push(w.0);
                }
            }
        }
        count == self.node_count
    }

    /// Write the edge list as text: a header line followed by one `u v` pair
    /// per line in ascending order.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "# nodes={} edges={} seed={}",
            self.node_count,
            self.edges.len(),
            self.seed
        )?;
        for &(u, v) in &self.edges {
            writeln!(w, "{} {}", u, v)?;
        }
        Ok(())
    }
}
