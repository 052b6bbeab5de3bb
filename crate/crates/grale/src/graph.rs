//! Output graphs over the label set: random spanning trees, their unions,
//! and the structural bookkeeping (connectivity, diameter) the inference
//! routines rely on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected graph whose nodes are the k microlabels.
///
/// Edges are stored as `(j, j')` with `j < j'`, sorted lexicographically.
/// Construction validates the edge list and requires the graph to be
/// connected, so `diameter` is always defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct OutputGraph {
    k: usize,
    edges: Vec<(usize, usize)>,
    is_tree: bool,
    diameter: usize,
}

/// On-disk form: just the node count and edge list.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSpec {
    k: usize,
    edges: Vec<(usize, usize)>,
}

impl From<OutputGraph> for GraphSpec {
    fn from(g: OutputGraph) -> Self {
        GraphSpec {
            k: g.k,
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphSpec> for OutputGraph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        OutputGraph::new(spec.k, spec.edges)
    }
}

impl OutputGraph {
    /// Builds a graph over `k` nodes, normalizing each edge to `(min, max)`
    /// order and sorting the list. Rejects self-loops, duplicates, node
    /// indices `>= k`, and disconnected graphs.
    pub fn new(k: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("graph needs at least one node (k = 0)"));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on node {a}")));
            }
            if a >= k || b >= k {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) references a node outside 0..{k}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let diameter = diameter_of(k, &normalized)?;
        let is_tree = normalized.len() == k - 1;
        Ok(OutputGraph {
            k,
            edges: normalized,
            is_tree,
            diameter,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// True when the graph is a spanning tree (connected with k-1 edges).
    pub fn is_tree(&self) -> bool {
        self.is_tree
    }

    /// Longest shortest path between any two nodes, in edges.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Neighbor lists annotated with the index of the connecting edge.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.k];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        adj
    }

    /// Position of `(a, b)` in the sorted edge list, if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).ok()
    }
}

/// Union of the edge sets of several graphs over the same node set.
pub fn consensus_union(graphs: &[&OutputGraph]) -> Result<OutputGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::invalid("consensus of an empty graph list"))?;
    let k = first.k;
    let mut edges = Vec::new();
    for g in graphs {
        if g.k != k {
            return Err(Error::dimensions("consensus node counts", k, g.k));
        }
        edges.extend_from_slice(&g.edges);
    }
    edges.sort_unstable();
    edges.dedup();
    OutputGraph::new(k, edges)
}

/// Breadth-first distances from `start`; `usize::MAX` marks unreachable nodes.
fn bfs_distances(k: usize, adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; k];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

fn diameter_of(k: usize, edges: &[(usize, usize)]) -> Result<usize> {
    let mut adj = vec![Vec::new(); k];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let from_zero = bfs_distances(k, &adj, 0);
    if from_zero.contains(&usize::MAX) {
        let component: Vec<usize> = (0..k).filter(|&v| from_zero[v] != usize::MAX).collect();
        return Err(Error::Disconnected { component });
    }
    let mut diameter = 0;
    for start in 0..k {
        let dist = bfs_distances(k, &adj, start);
        diameter = diameter.max(*dist.iter().max().unwrap());
    }
    Ok(diameter)
}

/// Disjoint-set forest with union by rank and path halving.
struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Number of unordered node pairs, which is also the length of the weight
/// vector expected by [`max_weight_spanning_tree`].
pub fn n_pairs(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Maximum-weight spanning tree over the complete graph on `k` nodes.
///
/// `weights` holds one entry per unordered pair `(j, j')`, `j < j'`, in
/// lexicographic order. Ties are broken toward the lexicographically
/// smaller pair, so equal-weight inputs still produce a unique tree.
pub fn max_weight_spanning_tree(k: usize, weights: &[f64]) -> Result<OutputGraph> {
    if k == 0 {
        return Err(Error::invalid("spanning tree over zero nodes (k = 0)"));
    }
    if weights.len() != n_pairs(k) {
        return Err(Error::dimensions("pair weights", n_pairs(k), weights.len()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("non-finite pair weight {w}")));
    }
    let mut pairs = Vec::with_capacity(weights.len());
    let mut idx = 0;
    for a in 0..k {
        for b in (a + 1)..k {
            pairs.push((weights[idx], (a, b)));
            idx += 1;
        }
    }
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let mut uf = UnionFind::new(k);
    let mut edges = Vec::with_capacity(k - 1);
    for (_, (a, b)) in pairs {
        if uf.union(a, b) {
            edges.push((a, b));
            if edges.len() == k - 1 {
                break;
            }
        }
    }
    OutputGraph::new(k, edges)
}

/// Spanning tree of a symmetric random pair-weight matrix with i.i.d.
/// uniform [0, 1) entries. A fixed seed reproduces the tree exactly.
pub fn random_spanning_tree<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<OutputGraph> {
    if k == 0 {
        return Err(Error::invalid("spanning tree over zero nodes (k = 0)"));
    }
    let weights: Vec<f64> = (0..n_pairs(k)).map(|_| rng.random::<f64>()).collect();
    max_weight_spanning_tree(k, &weights)
}
