//! Max-sum inference over edge potential tables.
//!
//! Trees get exact treatment: a two-pass sweep computes all max-marginals,
//! and MAP decoding conditions node by node so that score ties always
//! resolve to the lexicographically smallest multilabel, matching the
//! brute-force oracle's rule. Graphs with cycles fall back to synchronous
//! flooding message passing run for exactly `diameter` iterations, whose
//! beliefs are approximate by contract.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::OutputGraph;
use crate::kernel::Alphabet;

/// Score tables, one per edge of an output graph, indexed by flat edge
/// label. Tables are validated against the graph and alphabet at
/// construction, so inference can consume them without re-checking.
#[derive(Debug, Clone)]
pub struct EdgePotentials {
    graph: OutputGraph,
    alphabet: Alphabet,
    tables: Vec<Vec<f64>>,
    /// Identifier of the input the tables were built for, if any.
    pub input_id: Option<usize>,
}

impl EdgePotentials {
    pub fn new(graph: &OutputGraph, alphabet: &Alphabet, tables: Vec<Vec<f64>>) -> Result<Self> {
        if alphabet.k() != graph.k() {
            return Err(Error::dimensions("alphabet nodes", graph.k(), alphabet.k()));
        }
        if tables.len() != graph.n_edges() {
            return Err(Error::dimensions(
                "edge potential tables",
                graph.n_edges(),
                tables.len(),
            ));
        }
        for (e, table) in tables.iter().enumerate() {
            let (a, b) = graph.edges()[e];
            let expect = alphabet.pair_count(a, b);
            if table.len() != expect {
                return Err(Error::dimensions(
                    format!("potential table for edge ({a}, {b})"),
                    expect,
                    table.len(),
                ));
            }
            if let Some(v) = table.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite potential {v} on edge ({a}, {b})"
                )));
            }
        }
        Ok(EdgePotentials {
            graph: graph.clone(),
            alphabet: alphabet.clone(),
            tables,
            input_id: None,
        })
    }

    pub fn graph(&self) -> &OutputGraph {
        &self.graph
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    /// Total score of a full multilabel: the sum of its edge entries.
    pub fn score_of(&self, labeling: &[usize]) -> f64 {
        let mut total = 0.0;
        for (e, &(a, b)) in self.graph.edges().iter().enumerate() {
            let idx = self.alphabet.pair_index(b, labeling[a], labeling[b]);
            total += self.tables[e][idx];
        }
        total
    }
}

/// Max-marginal scores per (node, label). Rows are padded with negative
/// infinity past each node's alphabet size; `exact` is false when the
/// values come from loopy propagation.
#[derive(Debug, Clone)]
pub struct MaxMarginals {
    pub values: Array2<f64>,
    pub sizes: Vec<usize>,
    pub exact: bool,
}

impl MaxMarginals {
    fn from_rows(rows: Vec<Vec<f64>>, exact: bool) -> Self {
        let sizes: Vec<usize> = rows.iter().map(|r| r.len()).collect();
        let width = sizes.iter().copied().max().unwrap_or(0);
        let mut values = Array2::from_elem((rows.len(), width), f64::NEG_INFINITY);
        for (j, row) in rows.iter().enumerate() {
            for (u, &v) in row.iter().enumerate() {
                values[(j, u)] = v;
            }
        }
        MaxMarginals {
            values,
            sizes,
            exact,
        }
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Smallest label attaining the row maximum.
    pub fn argmax_row(&self, j: usize) -> usize {
        argmax_smallest((0..self.sizes[j]).map(|u| self.values[(j, u)]))
    }

    pub fn row_max(&self, j: usize) -> f64 {
        (0..self.sizes[j])
            .map(|u| self.values[(j, u)])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// First index attaining the maximum, so equal scores pick the smallest
/// label.
pub fn argmax_smallest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (u, v) in values.enumerate() {
        if v > best {
            best = v;
            arg = u;
        }
    }
    arg
}

/// BFS orientation of a tree rooted at node 0.
pub(crate) struct TreeOrder {
    /// Nodes in visit order; the root comes first.
    order: Vec<usize>,
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
}

const NO_PARENT: usize = usize::MAX;

pub(crate) fn tree_order(g: &OutputGraph) -> TreeOrder {
    let adj = g.adjacency();
    let k = g.k();
    let mut order = Vec::with_capacity(k);
    let mut parent = vec![NO_PARENT; k];
    let mut parent_edge = vec![NO_PARENT; k];
    let mut seen = vec![false; k];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, e) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = v;
                parent_edge[w] = e;
                queue.push_back(w);
            }
        }
    }
    TreeOrder {
        order,
        parent,
        parent_edge,
    }
}

/// Label range a node may take under an optional clamp.
#[inline]
fn allowed(clamp: Option<usize>, size: usize) -> std::ops::Range<usize> {
    match clamp {
        Some(c) => c..c + 1,
        None => 0..size,
    }
}

/// Exact max-marginals on a tree with some nodes optionally clamped to a
/// fixed label. One upward and one downward sweep; clamped nodes report
/// negative infinity outside their fixed label.
pub(crate) fn tree_max_marginals_clamped(
    g: &OutputGraph,
    al: &Alphabet,
    topo: &TreeOrder,
    tables: &[Vec<f64>],
    clamp: &[Option<usize>],
) -> Vec<Vec<f64>> {
    let edges = g.edges();
    let k = g.k();

    // up[j][u]: best total score of the subtree below j when j takes u.
    let mut up: Vec<Vec<f64>> = (0..k).map(|j| vec![0.0; al.size(j)]).collect();
    // msg_up[c][v]: up-message from c to its parent, indexed by parent label.
    let mut msg_up: Vec<Vec<f64>> = vec![Vec::new(); k];

    for &c in topo.order.iter().skip(1).rev() {
        let p = topo.parent[c];
        let e = topo.parent_edge[c];
        let (a, b) = edges[e];
        let l_b = al.size(b);
        let mut msg = vec![f64::NEG_INFINITY; al.size(p)];
        for v in 0..al.size(p) {
            let mut best = f64::NEG_INFINITY;
            for u in allowed(clamp[c], al.size(c)) {
                // Table index with c's label in the slot matching the
                // edge's stored orientation.
                let idx = if a == c { u * l_b + v } else { v * l_b + u };
                let s = tables[e][idx] + up[c][u];
                if s > best {
                    best = s;
                }
            }
            msg[v] = best;
        }
        for v in 0..al.size(p) {
            up[p][v] += msg[v];
        }
        msg_up[c] = msg;
    }

    // down[j][u]: best total score of everything outside j's subtree when j
    // takes u. Zero at the root.
    let mut down: Vec<Vec<f64>> = (0..k).map(|j| vec![0.0; al.size(j)]).collect();
    for &c in topo.order.iter().skip(1) {
        let p = topo.parent[c];
        let e = topo.parent_edge[c];
        let (a, b) = edges[e];
        let l_b = al.size(b);
        for u in 0..al.size(c) {
            let mut best = f64::NEG_INFINITY;
            for v in allowed(clamp[p], al.size(p)) {
                let idx = if a == c { u * l_b + v } else { v * l_b + u };
                let s = tables[e][idx] + down[p][v] + up[p][v] - msg_up[c][v];
                if s > best {
                    best = s;
                }
            }
            down[c][u] = best;
        }
    }

    let mut mm: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            (0..al.size(j))
                .map(|u| up[j][u] + down[j][u])
                .collect::<Vec<_>>()
        })
        .collect();
    for j in 0..k {
        if let Some(c) = clamp[j] {
            for u in 0..al.size(j) {
                if u != c {
                    mm[j][u] = f64::NEG_INFINITY;
                }
            }
        }
    }
    mm
}

/// One round of synchronous flooding: every directed message recomputed
/// from the previous iteration's messages. The sum over a sender's other
/// neighbors is formed directly rather than by subtracting the reverse
/// message from a running total, so message values from already-converged
/// subtrees are reproduced bit for bit in later rounds.
fn flood_round(
    pot: &EdgePotentials,
    incoming: &[Vec<(usize, usize)>],
    old: &[Vec<f64>],
    new: &mut [Vec<f64>],
) {
    let g = pot.graph();
    let al = pot.alphabet();

    let mut others = Vec::new();
    let mut send = |from: usize, to: usize, table: &[f64], from_is_lower: bool, out: &mut Vec<f64>| {
        let l_from = al.size(from);
        let l_to = al.size(to);
        others.clear();
        others.resize(l_from, 0.0);
        for &(mi, nb) in &incoming[from] {
            if nb != to {
                for (u, o) in others.iter_mut().enumerate() {
                    *o += old[mi][u];
                }
            }
        }
        for (v, slot) in out.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (u, o) in others.iter().enumerate() {
                let idx = if from_is_lower {
                    u * l_to + v
                } else {
                    v * l_from + u
                };
                let s = table[idx] + o;
                if s > best {
                    best = s;
                }
            }
            *slot = best;
        }
    };

    let edges = g.edges();
    let mut out = vec![0.0; 0];
    for (e, &(a, b)) in edges.iter().enumerate() {
        out.resize(al.size(b), 0.0);
        send(a, b, &pot.tables()[e], true, &mut out);
        new[2 * e].copy_from_slice(&out);
        out.resize(al.size(a), 0.0);
        send(b, a, &pot.tables()[e], false, &mut out);
        new[2 * e + 1].copy_from_slice(&out);
    }
}

/// Directed messages after `iterations` rounds of synchronous flooding.
/// Message `2e` travels from the lower to the higher endpoint of edge `e`,
/// message `2e + 1` the other way, each indexed by the receiver's label.
pub fn flood_messages(pot: &EdgePotentials, iterations: usize) -> Vec<Vec<f64>> {
    let g = pot.graph();
    let al = pot.alphabet();
    let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.k()];
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        incoming[b].push((2 * e, a));
        incoming[a].push((2 * e + 1, b));
    }
    let mut msgs: Vec<Vec<f64>> = g
        .edges()
        .iter()
        .flat_map(|&(a, b)| [vec![0.0; al.size(b)], vec![0.0; al.size(a)]])
        .collect();
    let mut scratch = msgs.clone();
    for _ in 0..iterations {
        flood_round(pot, &incoming, &msgs, &mut scratch);
        std::mem::swap(&mut msgs, &mut scratch);
    }
    msgs
}

fn flood_beliefs(pot: &EdgePotentials, iterations: usize) -> Vec<Vec<f64>> {
    let g = pot.graph();
    let al = pot.alphabet();
    let msgs = flood_messages(pot, iterations);
    let mut beliefs: Vec<Vec<f64>> = (0..g.k()).map(|j| vec![0.0; al.size(j)]).collect();
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        for u in 0..al.size(b) {
            beliefs[b][u] += msgs[2 * e][u];
        }
        for u in 0..al.size(a) {
            beliefs[a][u] += msgs[2 * e + 1][u];
        }
    }
    beliefs
}

/// Exact MAP decode on a tree, ties resolved to the lexicographically
/// smallest maximizer by conditioning one node at a time on exact
/// max-marginals.
pub(crate) fn tree_decode_lex(
    g: &OutputGraph,
    al: &Alphabet,
    topo: &TreeOrder,
    tables: &[Vec<f64>],
) -> Vec<usize> {
    let k = g.k();
    let mut clamp: Vec<Option<usize>> = vec![None; k];
    for j in 0..k {
        let mm = tree_max_marginals_clamped(g, al, topo, tables, &clamp);
        clamp[j] = Some(argmax_smallest(mm[j].iter().copied()));
    }
    clamp.into_iter().map(Option::unwrap).collect()
}

/// Highest-scoring multilabel and its score.
///
/// On trees the result is the exact maximizer, with ties resolved to the
/// lexicographically smallest multilabel by conditioning one node at a
/// time on exact max-marginals. On cyclic graphs the result comes from
/// flooding for `diameter` iterations and decoding the final beliefs per
/// node, smallest label first on ties.
pub fn map_decode(pot: &EdgePotentials) -> (Vec<usize>, f64) {
    let g = pot.graph();
    let labeling = if g.is_tree() {
        let topo = tree_order(g);
        tree_decode_lex(g, pot.alphabet(), &topo, pot.tables())
    } else {
        let beliefs = flood_beliefs(pot, g.diameter());
        beliefs
            .iter()
            .map(|row| argmax_smallest(row.iter().copied()))
            .collect()
    };
    let score = pot.score_of(&labeling);
    (labeling, score)
}

/// Max-marginals for every (node, label) pair: exact via a single two-pass
/// sweep on trees, flooded approximations on cyclic graphs.
pub fn max_marginals(pot: &EdgePotentials) -> MaxMarginals {
    let g = pot.graph();
    if g.is_tree() {
        let topo = tree_order(g);
        let clamp = vec![None; g.k()];
        let rows = tree_max_marginals_clamped(g, pot.alphabet(), &topo, pot.tables(), &clamp);
        MaxMarginals::from_rows(rows, true)
    } else {
        let rows = flood_beliefs(pot, g.diameter());
        MaxMarginals::from_rows(rows, false)
    }
}

/// Largest multilabel space the enumeration oracles accept.
pub const ENUMERATION_LIMIT: u64 = 1 << 20;

fn check_enumerable(al: &Alphabet) -> Result<u64> {
    let mut total: u64 = 1;
    for &l in al.sizes() {
        total = total.saturating_mul(l as u64);
        if total > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                size: total,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(total)
}

/// Calls `f` for every multilabel in lexicographic order (last node varies
/// fastest).
fn for_each_labeling(al: &Alphabet, mut f: impl FnMut(&[usize])) {
    let k = al.k();
    let mut current = vec![0usize; k];
    loop {
        f(&current);
        let mut j = k;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            current[j] += 1;
            if current[j] < al.size(j) {
                break;
            }
            current[j] = 0;
        }
    }
}

/// Exhaustive MAP oracle: scores every multilabel, keeping the first (hence
/// lexicographically smallest) maximizer. Refuses label spaces larger than
/// [`ENUMERATION_LIMIT`].
pub fn brute_force_decode(pot: &EdgePotentials) -> Result<(Vec<usize>, f64)> {
    check_enumerable(pot.alphabet())?;
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Vec<usize> = Vec::new();
    for_each_labeling(pot.alphabet(), |y| {
        let s = pot.score_of(y);
        if s > best_score {
            best_score = s;
            best = y.to_vec();
        }
    });
    Ok((best, best_score))
}

/// Exhaustive max-marginal oracle, same enumeration guard as
/// [`brute_force_decode`].
pub fn brute_force_max_marginals(pot: &EdgePotentials) -> Result<MaxMarginals> {
    check_enumerable(pot.alphabet())?;
    let al = pot.alphabet();
    let mut rows: Vec<Vec<f64>> = (0..al.k())
        .map(|j| vec![f64::NEG_INFINITY; al.size(j)])
        .collect();
    for_each_labeling(al, |y| {
        let s = pot.score_of(y);
        for (j, &u) in y.iter().enumerate() {
            if s > rows[j][u] {
                rows[j][u] = s;
            }
        }
    });
    Ok(MaxMarginals::from_rows(rows, true))
}
