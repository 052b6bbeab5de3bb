//! Ensembles of tree base models and their aggregation strategies.
//!
//! An ensemble draws independent random spanning trees, trains one base
//! model per tree on the shared training set, and combines their outputs
//! in one of three ways: majority vote over predictions (MVE), argmax of
//! averaged max-marginals (AMM), or MAP decoding on the consensus graph
//! under averaged marginal duals (MAM).

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{self, OutputGraph};
use crate::inference::{argmax_smallest, EdgePotentials, MaxMarginals};
use crate::kernel::{Alphabet, KernelMatrix};
use crate::learner::{
    self, edge_label_indices, train_base, BaseModel, BlockLayout, MarginalDuals, TrainConfig,
};

/// How base-model outputs are combined into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Majority vote per microlabel over base predictions.
    Mve,
    /// Argmax of averaged per-node max-marginals.
    Amm,
    /// MAP decoding on the consensus graph under averaged duals.
    Mam,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Mve => "mve",
            Strategy::Amm => "amm",
            Strategy::Mam => "mam",
        };
        f.write_str(s)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mve" => Ok(Strategy::Mve),
            "amm" => Ok(Strategy::Amm),
            "mam" => Ok(Strategy::Mam),
            other => Err(Error::invalid(format!(
                "unknown aggregation strategy {other:?}, expected mve, amm, or mam"
            ))),
        }
    }
}

/// Strategy selection for a trained ensemble: one aggregator or all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Mve,
    Amm,
    Mam,
    All,
}

impl StrategyChoice {
    pub fn strategies(self) -> &'static [Strategy] {
        match self {
            StrategyChoice::Mve => &[Strategy::Mve],
            StrategyChoice::Amm => &[Strategy::Amm],
            StrategyChoice::Mam => &[Strategy::Mam],
            StrategyChoice::All => &[Strategy::Mve, Strategy::Amm, Strategy::Mam],
        }
    }

    pub fn needs_consensus(self) -> bool {
        matches!(self, StrategyChoice::Mam | StrategyChoice::All)
    }
}

impl fmt::Display for StrategyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyChoice::Mve => "mve",
            StrategyChoice::Amm => "amm",
            StrategyChoice::Mam => "mam",
            StrategyChoice::All => "all",
        };
        f.write_str(s)
    }
}

impl FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mve" => Ok(StrategyChoice::Mve),
            "amm" => Ok(StrategyChoice::Amm),
            "mam" => Ok(StrategyChoice::Mam),
            "all" => Ok(StrategyChoice::All),
            other => Err(Error::invalid(format!(
                "unknown aggregation strategy {other:?}, expected mve, amm, mam, or all"
            ))),
        }
    }
}

/// A trained ensemble: the base models, the strategy it was built for, and,
/// when that strategy decodes on the consensus graph, the averaged duals
/// packaged as a model over that graph.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub models: Vec<BaseModel>,
    pub strategy: StrategyChoice,
    pub seed: u64,
    pub consensus: Option<BaseModel>,
}

impl Ensemble {
    pub fn assemble(
        models: Vec<BaseModel>,
        strategy: StrategyChoice,
        seed: u64,
    ) -> Result<Ensemble> {
        let consensus = if strategy.needs_consensus() {
            Some(consensus_model(&models)?)
        } else {
            check_shared_training(&models)?;
            None
        };
        Ok(Ensemble {
            models,
            strategy,
            seed,
            consensus,
        })
    }

    pub fn t(&self) -> usize {
        self.models.len()
    }

    pub fn k(&self) -> usize {
        self.models[0].k()
    }

    pub fn m(&self) -> usize {
        self.models[0].m()
    }

    pub fn consensus(&self) -> Result<&BaseModel> {
        self.consensus.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "ensemble was built for strategy {} and has no consensus graph",
                self.strategy
            ))
        })
    }

    pub fn predict(&self, strategy: Strategy, kernel_row: &[f64]) -> Result<Vec<usize>> {
        match strategy {
            Strategy::Mve => self.predict_mve(kernel_row),
            Strategy::Amm => self.predict_amm(kernel_row),
            Strategy::Mam => self.predict_mam(kernel_row),
        }
    }

    /// Majority vote per microlabel over the base predictions.
    pub fn predict_mve(&self, kernel_row: &[f64]) -> Result<Vec<usize>> {
        let predictions: Vec<Vec<usize>> = self
            .models
            .iter()
            .map(|m| m.predict(kernel_row).map(|(y, _)| y))
            .collect::<Result<_>>()?;
        majority_vote(&predictions, &self.models[0].alphabet)
    }

    /// Per-node argmax of the base models' averaged max-marginals.
    pub fn predict_amm(&self, kernel_row: &[f64]) -> Result<Vec<usize>> {
        let per_model: Vec<MaxMarginals> = self
            .models
            .iter()
            .map(|m| m.max_marginals_for(kernel_row))
            .collect::<Result<_>>()?;
        let avg = average_max_marginals(&per_model)?;
        Ok((0..avg.k()).map(|j| avg.argmax_row(j)).collect())
    }

    /// MAP decoding on the consensus graph under the averaged duals.
    pub fn predict_mam(&self, kernel_row: &[f64]) -> Result<Vec<usize>> {
        Ok(self.consensus()?.predict(kernel_row)?.0)
    }
}

/// Trains `t` base models on independently drawn random spanning trees.
/// Tree `i` is drawn from a generator seeded with `cfg.seed + i`, so
/// ensembles are reproducible and extending `t` keeps earlier trees.
pub fn train_ensemble(
    kernel: &KernelMatrix,
    labels: &Array2<usize>,
    al: &Alphabet,
    t: usize,
    strategy: StrategyChoice,
    cfg: &TrainConfig,
) -> Result<Ensemble> {
    if t == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    let k = al.k();
    let models: Vec<BaseModel> = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let tree = graph::random_spanning_tree(k, &mut rng)?;
            train_base(kernel, labels, &tree, al, cfg)
        })
        .collect::<Result<_>>()?;
    Ensemble::assemble(models, strategy, cfg.seed)
}

use rand::SeedableRng as _;

/// Majority vote per microlabel; ties go to the smallest label.
pub fn majority_vote(predictions: &[Vec<usize>], al: &Alphabet) -> Result<Vec<usize>> {
    if predictions.is_empty() {
        return Err(Error::invalid("majority vote needs at least one prediction"));
    }
    let k = al.k();
    let mut result = Vec::with_capacity(k);
    for j in 0..k {
        let mut votes = vec![0usize; al.size(j)];
        for (t, p) in predictions.iter().enumerate() {
            if p.len() != k {
                return Err(Error::dimensions(format!("prediction {t} length"), k, p.len()));
            }
            votes[p[j]] += 1;
        }
        result.push(argmax_smallest(votes.iter().map(|&v| v as f64)));
    }
    Ok(result)
}

/// Entrywise mean of per-model max-marginals; the result is exact only if
/// every input was.
pub fn average_max_marginals(per_model: &[MaxMarginals]) -> Result<MaxMarginals> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::invalid("averaging needs at least one set of max-marginals"))?;
    let mut values = first.values.clone();
    let mut exact = first.exact;
    for (t, mm) in per_model.iter().enumerate().skip(1) {
        if mm.sizes != first.sizes {
            return Err(Error::invalid(format!(
                "max-marginals {t} have node sizes {:?}, expected {:?}",
                mm.sizes, first.sizes
            )));
        }
        values += &mm.values;
        exact &= mm.exact;
    }
    values /= per_model.len() as f64;
    Ok(MaxMarginals {
        values,
        sizes: first.sizes.clone(),
        exact,
    })
}

fn check_shared_training(models: &[BaseModel]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("ensemble needs at least one base model"))?;
    for (t, m) in models.iter().enumerate().skip(1) {
        if m.alphabet.sizes() != first.alphabet.sizes() {
            return Err(Error::invalid(format!(
                "base model {t} uses a different label alphabet"
            )));
        }
        if m.train_labels != first.train_labels {
            return Err(Error::invalid(format!(
                "base model {t} was trained on a different label matrix"
            )));
        }
        if m.c != first.c {
            return Err(Error::invalid(format!(
                "base model {t} was trained with slack {} but model 0 used {}",
                m.c, first.c
            )));
        }
        if m.kernel_kind != first.kernel_kind || m.kernel_normalized != first.kernel_normalized {
            return Err(Error::invalid(format!(
                "base model {t} was trained under a different kernel"
            )));
        }
    }
    Ok(())
}

/// Averages the models' marginal duals on the union of their trees.
///
/// An edge a tree lacks receives that tree's full example mass on the
/// example's observed edge label. In the score form such mass cancels the
/// matching loss-augmentation term exactly, so a tree contributes nothing
/// to the potentials of edges it never trained and the consensus score of
/// any multilabel is the plain average of the trees' own scores. Trees
/// whose own node marginals disagree beyond 1e-9 are rejected.
pub fn average_marginals(models: &[BaseModel]) -> Result<(OutputGraph, MarginalDuals)> {
    check_shared_training(models)?;
    let first = &models[0];
    let graphs: Vec<&OutputGraph> = models.iter().map(|m| &m.graph).collect();
    let union = graph::consensus_union(&graphs)?;
    let al = &first.alphabet;
    let layout = BlockLayout::new(&union, al);
    let union_idx = edge_label_indices(&first.train_labels, &union, al)?;
    let mut avg = MarginalDuals::new(first.m(), layout.clone());

    for (t, model) in models.iter().enumerate() {
        let report = learner::feasibility_report(&model.duals, model.c, &model.graph, al);
        if report.consistency > 1e-9 {
            return Err(Error::integrity(format!(
                "base model {t} has inconsistent node marginals (violation {:.3e})",
                report.consistency
            )));
        }
        let tree_layout = model.duals.layout().clone();
        let active: Vec<usize> = model.duals.active_examples().collect();
        for i in active {
            let mass = if model.graph.n_edges() > 0 {
                model.duals.edge_mass(i, 0)
            } else {
                0.0
            };
            let block = model.duals.block(i).unwrap();
            let out = avg.block_mut(i);
            for (ue, &(a, b)) in union.edges().iter().enumerate() {
                let off = layout.offset(ue);
                match model.graph.edge_index(a, b) {
                    Some(te) => {
                        let toff = tree_layout.offset(te);
                        for u in 0..layout.width(ue) {
                            out[off + u] += block[toff + u];
                        }
                    }
                    None => {
                        out[off + union_idx[(i, ue)]] += mass;
                    }
                }
            }
        }
    }

    let scale = 1.0 / models.len() as f64;
    let active: Vec<usize> = avg.active_examples().collect();
    for i in active {
        for v in avg.block_mut(i).iter_mut() {
            *v *= scale;
        }
    }
    Ok((union, avg))
}

/// Packages the averaged duals as a model over the consensus graph, so the
/// usual potential construction and decoding apply unchanged.
pub fn consensus_model(models: &[BaseModel]) -> Result<BaseModel> {
    let (union, duals) = average_marginals(models)?;
    let first = &models[0];
    let edge_idx = edge_label_indices(&first.train_labels, &union, &first.alphabet)?;
    Ok(BaseModel {
        graph: union,
        alphabet: first.alphabet.clone(),
        c: first.c,
        duals,
        train_labels: first.train_labels.clone(),
        edge_idx,
        kernel_kind: first.kernel_kind,
        kernel_normalized: first.kernel_normalized,
        objective_log: Vec::new(),
    })
}

/// Splits a scored labeling's edge potentials evenly onto the endpoints:
/// each node receives half of every incident edge's potential, so node
/// scores sum back to the full score.
pub fn node_score_shares(pot: &EdgePotentials, y: &[usize]) -> Result<Vec<f64>> {
    let g = pot.graph();
    let al = pot.alphabet();
    if y.len() != g.k() {
        return Err(Error::dimensions("labeling length", g.k(), y.len()));
    }
    let mut shares = vec![0.0; g.k()];
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        let val = pot.tables()[e][al.pair_index(b, y[a], y[b])];
        shares[a] += 0.5 * val;
        shares[b] += 0.5 * val;
    }
    Ok(shares)
}

/// Variance decomposition of per-tree ensemble scores at one labeling.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScoreDiagnostics {
    /// Mean squared deviation of the per-tree scores from the reference.
    pub delta_individual: f64,
    /// Squared deviation of the averaged score from the reference.
    pub delta_ensemble: f64,
    /// `delta_individual - delta_ensemble`; equals the variance and is
    /// independent of the reference score.
    pub gap: f64,
    /// Population variance of the per-tree total scores.
    pub variance: f64,
    /// Summed per-node score variances.
    pub diversity: f64,
    /// Summed cross-node score covariances.
    pub coherence: f64,
}

/// Computes the variance decomposition from per-tree node score shares.
/// `node_scores[t][j]` is tree t's node-j share of its score at the
/// evaluated labeling; `psi_star` is the reference score, default zero.
pub fn score_diagnostics(node_scores: &[Vec<f64>], psi_star: Option<f64>) -> Result<ScoreDiagnostics> {
    let t = node_scores.len();
    if t == 0 {
        return Err(Error::invalid("diagnostics need at least one model's scores"));
    }
    let k = node_scores[0].len();
    for (idx, row) in node_scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::dimensions(
                format!("node scores of model {idx}"),
                k,
                row.len(),
            ));
        }
    }
    let reference = psi_star.unwrap_or(0.0);
    let tf = t as f64;

    let totals: Vec<f64> = node_scores.iter().map(|row| row.iter().sum()).collect();
    let mean_total: f64 = totals.iter().sum::<f64>() / tf;

    let delta_individual =
        totals.iter().map(|&s| (reference - s) * (reference - s)).sum::<f64>() / tf;
    let delta_ensemble = (reference - mean_total) * (reference - mean_total);
    let variance = totals
        .iter()
        .map(|&s| (s - mean_total) * (s - mean_total))
        .sum::<f64>()
        / tf;

    let node_means: Vec<f64> = (0..k)
        .map(|j| node_scores.iter().map(|row| row[j]).sum::<f64>() / tf)
        .collect();
    let mut diversity = 0.0;
    let mut coherence = 0.0;
    for p in 0..k {
        for q in 0..k {
            let cov = node_scores
                .iter()
                .map(|row| (row[p] - node_means[p]) * (row[q] - node_means[q]))
                .sum::<f64>()
                / tf;
            if p == q {
                diversity += cov;
            } else {
                coherence += cov;
            }
        }
    }

    Ok(ScoreDiagnostics {
        delta_individual,
        delta_ensemble,
        gap: delta_individual - delta_ensemble,
        variance,
        diversity,
        coherence,
    })
}
