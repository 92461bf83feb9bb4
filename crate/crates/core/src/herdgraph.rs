//! Undirected herd neighbour graph and its network covariates.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Undirected simple graph over herds.
///
/// Adjacency lists are sorted and symmetric; self-loops are rejected and
/// repeated edges collapse to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    node_ids: Vec<i64>,
    adjacency: Vec<Vec<usize>>,
}

/// Network covariates of a single node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centrality {
    pub degree: usize,
    pub betweenness: f64,
    pub closeness: f64,
}

impl NeighborGraph {
    /// Builds a graph from node identifiers and edges given as node positions.
    pub fn new(node_ids: Vec<i64>, edges: &[(usize, usize)]) -> Result<Self> {
        if node_ids.is_empty() {
            return Err(invalid("graph must have at least one node"));
        }
        let n = node_ids.len();
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(invalid(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(invalid(format!("self-loop on node {}", node_ids[a])));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Self {
            node_ids,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Builds a graph from edges between herd identifiers.
    ///
    /// Nodes are `extra_ids` followed by any id first seen in `edges`, in order
    /// of first appearance.
    pub fn from_id_edges(extra_ids: &[i64], edges: &[(i64, i64)]) -> Result<Self> {
        let mut ids = Vec::new();
        let mut index = HashMap::new();
        let mut intern = |id: i64, ids: &mut Vec<i64>| {
            *index.entry(id).or_insert_with(|| {
                ids.push(id);
                ids.len() - 1
            })
        };
        for &id in extra_ids {
            intern(id, &mut ids);
        }
        let pos: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| (intern(a, &mut ids), intern(b, &mut ids)))
            .collect();
        Self::new(ids, &pos)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[i64] {
        &self.node_ids
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(a, b)` position pairs with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn position_of(&self, id: i64) -> Option<usize> {
        self.node_ids.iter().position(|&x| x == id)
    }
}

/// Single-source BFS pass of Brandes' algorithm.
///
/// Returns the dependency of the source on every node, plus the number of
/// reachable nodes and their total distance.
fn single_source(graph: &NeighborGraph, s: usize) -> (Vec<f64>, usize, usize) {
    let n = graph.len();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in graph.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                preds[w].push(v);
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    for &w in order.iter().rev() {
        for &v in &preds[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
    }
    delta[s] = 0.0;
    let reachable = order.len() - 1;
    let total: usize = order.iter().map(|&v| dist[v]).sum();
    (delta, reachable, total)
}

/// Degree, betweenness and closeness for every node.
///
/// Betweenness is unnormalized with each unordered pair counted once.
/// Closeness is `reachable / Σ distance` over reachable nodes and 0 for an
/// isolated node.
pub fn centralities(graph: &NeighborGraph) -> Result<Vec<Centrality>> {
    if graph.is_empty() {
        return Err(invalid("centralities of an empty graph"));
    }
    let n = graph.len();
    let passes: Vec<(Vec<f64>, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|s| single_source(graph, s))
        .collect();
    let mut betweenness = vec![0.0f64; n];
    for (delta, _, _) in &passes {
        for (b, d) in betweenness.iter_mut().zip(delta) {
            *b += d;
        }
    }
    Ok(passes
        .iter()
        .enumerate()
        .map(|(v, &(_, reach, total))| Centrality {
            degree: graph.degree(v),
            betweenness: betweenness[v] / 2.0,
            closeness: if total == 0 {
                0.0
            } else {
                reach as f64 / total as f64
            },
        })
        .collect())
}

/// Fraction of each node's neighbours that are positive; 0 for isolated nodes.
pub fn local_density(graph: &NeighborGraph, statuses: &[u8]) -> Result<Vec<f64>> {
    if statuses.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            got: statuses.len(),
        });
    }
    Ok((0..graph.len())
        .map(|v| {
            let nb = graph.neighbors(v);
            if nb.is_empty() {
                0.0
            } else {
                let pos = nb.iter().filter(|&&w| statuses[w] != 0).count();
                pos as f64 / nb.len() as f64
            }
        })
        .collect())
}
