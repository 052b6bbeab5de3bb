//! Training of tree-structured base models.
//!
//! The learner maximizes the factorized dual of the max-margin problem: one
//! marginal dual block per training example, holding a value per (edge,
//! edge label). Optimization is block-coordinate conditional gradient
//! ascent. For each example in turn, the steepest feasible vertex is found
//! by MAP-decoding the gradient tables on the tree, an exact line search
//! picks the step size, and a cached linear operator keeps per-step cost
//! linear in the training set size.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::OutputGraph;
use crate::inference::{self, EdgePotentials, MaxMarginals};
use crate::kernel::{Alphabet, KernelKind, KernelMatrix};

/// Flat addressing of per-example dual blocks: one contiguous slot per
/// (edge, edge label), edges in graph order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(g: &OutputGraph, al: &Alphabet) -> Self {
        let mut offsets = Vec::with_capacity(g.n_edges() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &(a, b) in g.edges() {
            acc += al.pair_count(a, b);
            offsets.push(acc);
        }
        BlockLayout { offsets }
    }

    pub fn n_edges(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Slots in one example's block.
    pub fn stride(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, e: usize) -> usize {
        self.offsets[e]
    }

    pub fn width(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }
}

/// Marginal dual variables, stored per example and only for examples that
/// have received mass; everything absent is zero.
#[derive(Debug, Clone)]
pub struct MarginalDuals {
    layout: BlockLayout,
    blocks: Vec<Option<Vec<f64>>>,
}

impl MarginalDuals {
    pub fn new(m: usize, layout: BlockLayout) -> Self {
        MarginalDuals {
            layout,
            blocks: vec![None; m],
        }
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self, i: usize) -> Option<&[f64]> {
        self.blocks[i].as_deref()
    }

    /// Mutable access to example i's block, materializing zeros on first
    /// touch.
    pub fn block_mut(&mut self, i: usize) -> &mut Vec<f64> {
        let stride = self.layout.stride();
        self.blocks[i].get_or_insert_with(|| vec![0.0; stride])
    }

    pub fn get(&self, i: usize, e: usize, u: usize) -> f64 {
        match &self.blocks[i] {
            Some(b) => b[self.layout.offset(e) + u],
            None => 0.0,
        }
    }

    /// Total mass example i places on edge e.
    pub fn edge_mass(&self, i: usize, e: usize) -> f64 {
        match &self.blocks[i] {
            Some(b) => {
                let off = self.layout.offset(e);
                b[off..off + self.layout.width(e)].iter().sum()
            }
            None => 0.0,
        }
    }

    pub fn active_examples(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|_| i))
    }
}

/// Per-example edge label indices of a label matrix, used to address loss
/// and dual entries. Validates labels against the alphabet.
pub fn edge_label_indices(
    labels: &Array2<usize>,
    g: &OutputGraph,
    al: &Alphabet,
) -> Result<Array2<usize>> {
    if labels.ncols() != g.k() {
        return Err(Error::dimensions("label columns", g.k(), labels.ncols()));
    }
    for ((i, j), &y) in labels.indexed_iter() {
        if y >= al.size(j) {
            return Err(Error::invalid(format!(
                "label {y} for node {j} of example {i} exceeds alphabet size {}",
                al.size(j)
            )));
        }
    }
    let mut idx = Array2::zeros((labels.nrows(), g.n_edges()));
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        for i in 0..labels.nrows() {
            idx[(i, e)] = al.pair_index(b, labels[(i, a)], labels[(i, b)]);
        }
    }
    Ok(idx)
}

/// Dense per-(example, edge, edge label) loss table: 1 everywhere except at
/// the example's own edge label.
#[derive(Debug, Clone)]
pub struct EdgeLoss {
    stride: usize,
    data: Vec<f64>,
}

impl EdgeLoss {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }
}

pub fn edge_losses(edge_idx: &Array2<usize>, layout: &BlockLayout) -> EdgeLoss {
    let m = edge_idx.nrows();
    let stride = layout.stride();
    let mut data = vec![1.0; m * stride];
    for i in 0..m {
        for e in 0..layout.n_edges() {
            data[i * stride + layout.offset(e) + edge_idx[(i, e)]] = 0.0;
        }
    }
    EdgeLoss { stride, data }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value of the factorized dual objective, recomputed from scratch.
pub fn dual_objective(
    duals: &MarginalDuals,
    loss: &EdgeLoss,
    kernel: &KernelMatrix,
    edge_idx: &Array2<usize>,
) -> f64 {
    let layout = duals.layout();
    let active: Vec<usize> = duals.active_examples().collect();
    let mut linear = 0.0;
    for &i in &active {
        linear += dot(duals.block(i).unwrap(), loss.row(i));
    }
    let mut quad = 0.0;
    for &i in &active {
        let bi = duals.block(i).unwrap();
        for &j in &active {
            let kij = kernel.get(i, j);
            if kij == 0.0 {
                continue;
            }
            let bj = duals.block(j).unwrap();
            let mut s = 0.0;
            for e in 0..layout.n_edges() {
                let off = layout.offset(e);
                let w = layout.width(e);
                let yi = edge_idx[(i, e)];
                let yj = edge_idx[(j, e)];
                let ai: f64 = bi[off..off + w].iter().sum();
                let aj: f64 = bj[off..off + w].iter().sum();
                let same = (yi == yj) as u8 as f64;
                let mut prod = 0.0;
                for u in 0..w {
                    prod += bi[off + u] * bj[off + u];
                }
                s += same * ai * aj - ai * bj[off + yi] - bi[off + yj] * aj + prod;
            }
            quad += kij * s;
        }
    }
    linear - 0.5 * quad
}

/// Gradient of the dual objective with respect to example i's block,
/// recomputed from scratch.
pub fn gradient_block(
    duals: &MarginalDuals,
    i: usize,
    loss: &EdgeLoss,
    kernel: &KernelMatrix,
    edge_idx: &Array2<usize>,
) -> Vec<f64> {
    let layout = duals.layout();
    let mut g = loss.row(i).to_vec();
    for j in duals.active_examples() {
        let kij = kernel.get(i, j);
        if kij == 0.0 {
            continue;
        }
        let bj = duals.block(j).unwrap();
        for e in 0..layout.n_edges() {
            let off = layout.offset(e);
            let w = layout.width(e);
            let yi = edge_idx[(i, e)];
            let yj = edge_idx[(j, e)];
            let aj: f64 = bj[off..off + w].iter().sum();
            let base = ((yi == yj) as u8 as f64) * aj - bj[off + yi];
            for u in 0..w {
                let same_u = ((u == yj) as u8 as f64) * aj;
                g[off + u] -= kij * (base - same_u + bj[off + u]);
            }
        }
    }
    g
}

/// A vertex of one example's feasible set: either the origin or `C` times
/// the indicator marginals of a single multilabel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vertex {
    Zero,
    Indicator(Vec<usize>),
}

/// Vertex maximizing the inner product with the gradient block: the
/// indicator marginals of the gradient's MAP multilabel when that scores
/// positive, the origin otherwise.
pub fn steepest_vertex(
    gradient: &[f64],
    g: &OutputGraph,
    al: &Alphabet,
    layout: &BlockLayout,
    c: f64,
) -> Vertex {
    let tables: Vec<Vec<f64>> = (0..layout.n_edges())
        .map(|e| gradient[layout.offset(e)..layout.offset(e) + layout.width(e)].to_vec())
        .collect();
    let topo = inference::tree_order(g);
    let y_star = inference::tree_decode_lex(g, al, &topo, &tables);
    let score: f64 = g
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(a, b))| gradient[layout.offset(e) + al.pair_index(b, y_star[a], y_star[b])])
        .sum();
    if c * score > 0.0 {
        Vertex::Indicator(y_star)
    } else {
        Vertex::Zero
    }
}

/// Writes `vertex - mu_i` into `out`.
fn fill_direction(
    duals: &MarginalDuals,
    i: usize,
    vertex: &Vertex,
    c: f64,
    g: &OutputGraph,
    al: &Alphabet,
    out: &mut [f64],
) {
    out.fill(0.0);
    if let Vertex::Indicator(y) = vertex {
        let layout = duals.layout();
        for (e, &(a, b)) in g.edges().iter().enumerate() {
            out[layout.offset(e) + al.pair_index(b, y[a], y[b])] = c;
        }
    }
    if let Some(block) = duals.block(i) {
        for (o, v) in out.iter_mut().zip(block) {
            *o -= v;
        }
    }
}

/// Curvature of the objective along a direction confined to one example's
/// block: `d' K d` restricted to that diagonal block.
pub fn direction_curvature(
    d: &[f64],
    k_ii: f64,
    layout: &BlockLayout,
    edge_idx_row: &[usize],
) -> f64 {
    let mut total = 0.0;
    for e in 0..layout.n_edges() {
        let off = layout.offset(e);
        let w = layout.width(e);
        let de = &d[off..off + w];
        let s: f64 = de.iter().sum();
        let norm: f64 = de.iter().map(|v| v * v).sum();
        total += s * s - 2.0 * s * de[edge_idx_row[e]] + norm;
    }
    k_ii * total
}

/// Clipped exact line search step for ascent `num` and curvature `den`.
fn clip_tau(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else if den <= 0.0 {
        1.0
    } else {
        (num / den).min(1.0)
    }
}

fn apply_step(duals: &mut MarginalDuals, i: usize, d: &[f64], tau: f64) {
    let block = duals.block_mut(i);
    for (b, v) in block.iter_mut().zip(d) {
        *b += tau * v;
        // Exact arithmetic keeps entries non-negative; tiny negative
        // rounding residue is snapped away so feasibility stays exact.
        if *b < 0.0 {
            *b = 0.0;
        }
    }
}

/// Outcome of one line-searched update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineStep {
    pub tau: f64,
    /// Objective improvement predicted by the quadratic model; exact for
    /// this objective.
    pub gain: f64,
}

/// Moves example i's block toward `vertex` with the exact line-search step
/// and returns it. `gradient` must be the current gradient of that block.
pub fn line_search_update(
    duals: &mut MarginalDuals,
    i: usize,
    vertex: &Vertex,
    gradient: &[f64],
    k_ii: f64,
    edge_idx_row: &[usize],
    c: f64,
    g: &OutputGraph,
    al: &Alphabet,
) -> LineStep {
    let mut d = vec![0.0; duals.layout().stride()];
    fill_direction(duals, i, vertex, c, g, al, &mut d);
    let num = dot(gradient, &d);
    let den = direction_curvature(&d, k_ii, duals.layout(), edge_idx_row);
    let tau = clip_tau(num, den);
    let gain = tau * num - 0.5 * tau * tau * den;
    if tau > 0.0 {
        apply_step(duals, i, &d, tau);
    }
    LineStep { tau, gain }
}

/// Worst-case violations of the dual feasible set.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FeasibilityReport {
    /// Largest negative entry, as a magnitude.
    pub negativity: f64,
    /// Largest per-edge mass disagreement or excess over the slack bound.
    pub mass: f64,
    /// Largest disagreement between node marginals of edges sharing a node.
    pub consistency: f64,
}

impl FeasibilityReport {
    pub fn within(&self, tol: f64) -> bool {
        self.negativity <= tol && self.mass <= tol && self.consistency <= tol
    }
}

pub fn feasibility_report(
    duals: &MarginalDuals,
    c: f64,
    g: &OutputGraph,
    al: &Alphabet,
) -> FeasibilityReport {
    let layout = duals.layout();
    let mut negativity: f64 = 0.0;
    let mut mass: f64 = 0.0;
    let mut consistency: f64 = 0.0;

    for i in duals.active_examples() {
        let block = duals.block(i).unwrap();
        for &v in block {
            negativity = negativity.max(-v);
        }

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in 0..layout.n_edges() {
            let a = duals.edge_mass(i, e);
            lo = lo.min(a);
            hi = hi.max(a);
        }
        if layout.n_edges() > 0 {
            mass = mass.max(hi - lo).max(hi - c);
        }

        // Node marginals must agree across every edge touching the node.
        for j in 0..g.k() {
            let incident: Vec<usize> = g
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, &(a, b))| a == j || b == j)
                .map(|(e, _)| e)
                .collect();
            if incident.len() < 2 {
                continue;
            }
            for u in 0..al.size(j) {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &e in &incident {
                    let (a, b) = g.edges()[e];
                    let off = layout.offset(e);
                    let l_b = al.size(b);
                    let marg: f64 = if a == j {
                        (0..l_b).map(|ub| block[off + u * l_b + ub]).sum()
                    } else {
                        (0..al.size(a)).map(|ua| block[off + ua * l_b + u]).sum()
                    };
                    lo = lo.min(marg);
                    hi = hi.max(marg);
                }
                consistency = consistency.max(hi - lo);
            }
        }
    }
    FeasibilityReport {
        negativity,
        mass: mass.max(0.0),
        consistency,
    }
}

/// Solver settings for one base model.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Slack bound on each example's total dual mass.
    pub c: f64,
    pub max_outer_passes: usize,
    /// A pass that improves no example's block by more than this stops
    /// training.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            max_outer_passes: 100,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// One accepted solver step, reported to observers.
pub struct StepEvent<'a> {
    pub example: usize,
    pub vertex: &'a Vertex,
    pub tau: f64,
}

/// A trained base model: the tree, the dual state, and enough training
/// metadata to score new inputs against the training set.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub graph: OutputGraph,
    pub alphabet: Alphabet,
    pub c: f64,
    pub duals: MarginalDuals,
    pub train_labels: Array2<usize>,
    pub edge_idx: Array2<usize>,
    pub kernel_kind: KernelKind,
    pub kernel_normalized: bool,
    /// Objective value after each outer pass, starting at zero.
    pub objective_log: Vec<f64>,
}

impl BaseModel {
    pub fn m(&self) -> usize {
        self.train_labels.nrows()
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }

    /// Total dual mass per training example (each edge carries the same
    /// mass; the first edge is reported).
    pub fn masses(&self) -> Vec<f64> {
        (0..self.m())
            .map(|i| {
                if self.graph.n_edges() == 0 {
                    0.0
                } else {
                    self.duals.edge_mass(i, 0)
                }
            })
            .collect()
    }

    /// Edge potential tables for an input given its kernel values against
    /// the training examples.
    pub fn edge_potentials(&self, kernel_row: &[f64]) -> Result<EdgePotentials> {
        if kernel_row.len() != self.m() {
            return Err(Error::dimensions(
                "kernel row length",
                self.m(),
                kernel_row.len(),
            ));
        }
        let layout = self.duals.layout();
        let mut tables: Vec<Vec<f64>> = (0..layout.n_edges())
            .map(|e| vec![0.0; layout.width(e)])
            .collect();
        for i in self.duals.active_examples() {
            let kr = kernel_row[i];
            if kr == 0.0 {
                continue;
            }
            let block = self.duals.block(i).unwrap();
            for e in 0..layout.n_edges() {
                let off = layout.offset(e);
                let w = layout.width(e);
                let a_ie: f64 = block[off..off + w].iter().sum();
                tables[e][self.edge_idx[(i, e)]] += kr * a_ie;
                for u in 0..w {
                    tables[e][u] -= kr * block[off + u];
                }
            }
        }
        EdgePotentials::new(&self.graph, &self.alphabet, tables)
    }

    /// MAP prediction for an input given its kernel row.
    pub fn predict(&self, kernel_row: &[f64]) -> Result<(Vec<usize>, f64)> {
        Ok(inference::map_decode(&self.edge_potentials(kernel_row)?))
    }

    /// Exact max-marginals for an input given its kernel row.
    pub fn max_marginals_for(&self, kernel_row: &[f64]) -> Result<MaxMarginals> {
        Ok(inference::max_marginals(&self.edge_potentials(kernel_row)?))
    }
}

/// Trains a base model on a tree. See [`train_base_observed`].
pub fn train_base(
    kernel: &KernelMatrix,
    labels: &Array2<usize>,
    graph: &OutputGraph,
    al: &Alphabet,
    cfg: &TrainConfig,
) -> Result<BaseModel> {
    train_base_observed(kernel, labels, graph, al, cfg, |_| {})
}

/// Trains a base model, reporting every accepted solver step to `observe`.
///
/// Sweeps examples in index order. Each sweep ends by logging the
/// objective; training stops after `max_outer_passes` sweeps or once no
/// block improves by more than `tolerance` within a sweep.
pub fn train_base_observed(
    kernel: &KernelMatrix,
    labels: &Array2<usize>,
    graph: &OutputGraph,
    al: &Alphabet,
    cfg: &TrainConfig,
    mut observe: impl FnMut(StepEvent),
) -> Result<BaseModel> {
    if !graph.is_tree() {
        return Err(Error::invalid(format!(
            "training graph must be a spanning tree, got {} edges over {} nodes",
            graph.n_edges(),
            graph.k()
        )));
    }
    if !(cfg.c > 0.0) || !cfg.c.is_finite() {
        return Err(Error::invalid(format!(
            "slack bound must be positive and finite, got {}",
            cfg.c
        )));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be non-negative, got {}",
            cfg.tolerance
        )));
    }
    let m = labels.nrows();
    if kernel.n() != m {
        return Err(Error::dimensions("kernel size", m, kernel.n()));
    }
    if al.k() != graph.k() {
        return Err(Error::dimensions("alphabet nodes", graph.k(), al.k()));
    }
    let edge_idx = edge_label_indices(labels, graph, al)?;
    let layout = BlockLayout::new(graph, al);
    let stride = layout.stride();
    let n_edges = layout.n_edges();
    let loss = edge_losses(&edge_idx, &layout);
    let topo = inference::tree_order(graph);

    let mut duals = MarginalDuals::new(m, layout.clone());
    // Cached linear operator applied to the current duals, one row per
    // example; the gradient of block i is loss row i minus row i of this.
    let mut f_cache = vec![0.0; m * stride];
    let mut grad = vec![0.0; stride];
    let mut dbuf = vec![0.0; stride];
    let mut tables: Vec<Vec<f64>> = (0..n_edges).map(|e| vec![0.0; layout.width(e)]).collect();
    let mut q_tabs = tables.clone();

    let mut objective = 0.0;
    let mut log = vec![0.0];

    let eidx = edge_idx.as_slice().expect("row-major edge indices");
    let kvals = kernel.values();

    for _pass in 0..cfg.max_outer_passes {
        let mut best_gain: f64 = 0.0;
        for i in 0..m {
            let lrow = loss.row(i);
            let frow = &f_cache[i * stride..(i + 1) * stride];
            for u in 0..stride {
                grad[u] = lrow[u] - frow[u];
            }
            for (e, t) in tables.iter_mut().enumerate() {
                t.copy_from_slice(&grad[layout.offset(e)..layout.offset(e + 1)]);
            }
            let y_star = inference::tree_decode_lex(graph, al, &topo, &tables);
            let mut score = 0.0;
            for (e, &(a, b)) in graph.edges().iter().enumerate() {
                score += grad[layout.offset(e) + al.pair_index(b, y_star[a], y_star[b])];
            }
            let vertex = if cfg.c * score > 0.0 {
                Vertex::Indicator(y_star)
            } else {
                Vertex::Zero
            };

            fill_direction(&duals, i, &vertex, cfg.c, graph, al, &mut dbuf);
            let num = dot(&grad, &dbuf);
            if num <= 0.0 {
                continue;
            }
            let eidx_row = &eidx[i * n_edges..(i + 1) * n_edges];
            let den = direction_curvature(&dbuf, kernel.get(i, i), &layout, eidx_row);
            let tau = clip_tau(num, den);
            if tau == 0.0 {
                continue;
            }
            let gain = tau * num - 0.5 * tau * tau * den;
            best_gain = best_gain.max(gain);
            observe(StepEvent {
                example: i,
                vertex: &vertex,
                tau,
            });
            apply_step(&mut duals, i, &dbuf, tau);
            objective += gain;

            // Refresh the cached operator rows: the change of block i
            // shifts every example's row by kernel(p, i) times a per-edge
            // profile of the block delta.
            for e in 0..n_edges {
                let off = layout.offset(e);
                let w = layout.width(e);
                let q = &mut q_tabs[e];
                let mut delta_mass = 0.0;
                for u in 0..w {
                    q[u] = tau * dbuf[off + u];
                    delta_mass += q[u];
                }
                q[eidx_row[e]] -= delta_mass;
            }
            let krow = kvals.row(i);
            let krow = krow.as_slice().expect("row-major kernel");
            for (p, &kp) in krow.iter().enumerate() {
                if kp == 0.0 {
                    continue;
                }
                let frow = &mut f_cache[p * stride..(p + 1) * stride];
                let erow = &eidx[p * n_edges..(p + 1) * n_edges];
                for e in 0..n_edges {
                    let off = layout.offset(e);
                    let q = &q_tabs[e];
                    let sub = q[erow[e]];
                    for (u, &qv) in q.iter().enumerate() {
                        frow[off + u] += kp * (qv - sub);
                    }
                }
            }
        }
        log.push(objective);
        if best_gain < cfg.tolerance {
            break;
        }
    }

    Ok(BaseModel {
        graph: graph.clone(),
        alphabet: al.clone(),
        c: cfg.c,
        duals,
        train_labels: labels.clone(),
        edge_idx,
        kernel_kind: kernel.kind(),
        kernel_normalized: kernel.normalized(),
        objective_log: log,
    })
}
