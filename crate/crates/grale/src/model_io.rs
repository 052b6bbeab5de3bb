//! Model persistence.
//!
//! A base model is one JSON file; an ensemble is a directory of base-model
//! files plus a manifest. Dual variables are stored sparsely as
//! `[example, edge, label, value]` entries. Loading rebuilds the dense
//! state and cross-checks the stored per-example masses and, for
//! ensembles, the stored consensus against a recomputation.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::ensemble::{consensus_model, Ensemble, StrategyChoice};
use crate::error::{Error, Result};
use crate::graph::OutputGraph;
use crate::kernel::{Alphabet, KernelKind};
use crate::learner::{edge_label_indices, BaseModel, BlockLayout, MarginalDuals};

const MASS_TOL: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct KernelMeta {
    kind: KernelKind,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    edges: Vec<(usize, usize)>,
    #[serde(rename = "C")]
    c: f64,
    /// Per-example total dual mass, kept for readability and integrity
    /// checking; it is implied by the entries of `mu`.
    #[serde(rename = "A")]
    a: Vec<f64>,
    mu: Vec<(usize, usize, usize, f64)>,
    train_label_matrix: Vec<Vec<usize>>,
    kernel: KernelMeta,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(rename = "T")]
    t: usize,
    strategy: StrategyChoice,
    seed: u64,
    consensus_edges: Vec<(usize, usize)>,
    mu_bar: Vec<(usize, usize, usize, f64)>,
}

fn sparse_entries(duals: &MarginalDuals) -> Vec<(usize, usize, usize, f64)> {
    let layout = duals.layout();
    let mut entries = Vec::new();
    for i in duals.active_examples() {
        let block = duals.block(i).unwrap();
        for e in 0..layout.n_edges() {
            let off = layout.offset(e);
            for u in 0..layout.width(e) {
                let v = block[off + u];
                if v != 0.0 {
                    entries.push((i, e, u, v));
                }
            }
        }
    }
    entries
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::integrity(format!("serialization failed: {e}")))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_model(path: &Path, model: &BaseModel) -> Result<()> {
    if model.alphabet.sizes().iter().any(|&s| s != 2) {
        return Err(Error::invalid(
            "only binary label alphabets can be serialized",
        ));
    }
    let file = ModelFile {
        k: model.k(),
        edges: model.graph.edges().to_vec(),
        c: model.c,
        a: model.masses(),
        mu: sparse_entries(&model.duals),
        train_label_matrix: (0..model.m())
            .map(|i| model.train_labels.row(i).to_vec())
            .collect(),
        kernel: KernelMeta {
            kind: model.kernel_kind,
            normalized: model.kernel_normalized,
        },
    };
    write_json(path, &file)
}

fn model_from_file(file: ModelFile) -> Result<BaseModel> {
    let graph = OutputGraph::new(file.k, file.edges)?;
    let al = Alphabet::binary(file.k);
    let m = file.train_label_matrix.len();
    if m == 0 {
        return Err(Error::invalid("model has an empty training label matrix"));
    }
    for (i, row) in file.train_label_matrix.iter().enumerate() {
        if row.len() != file.k {
            return Err(Error::dimensions(
                format!("training label row {i}"),
                file.k,
                row.len(),
            ));
        }
    }
    let labels = Array2::from_shape_fn((m, file.k), |(i, j)| file.train_label_matrix[i][j]);
    let edge_idx = edge_label_indices(&labels, &graph, &al)?;
    if file.a.len() != m {
        return Err(Error::dimensions("stored mass vector", m, file.a.len()));
    }
    if !(file.c > 0.0) || !file.c.is_finite() {
        return Err(Error::invalid(format!(
            "stored slack bound must be positive, got {}",
            file.c
        )));
    }

    let layout = BlockLayout::new(&graph, &al);
    let mut duals = MarginalDuals::new(m, layout.clone());
    for &(i, e, u, v) in &file.mu {
        if i >= m {
            return Err(Error::invalid(format!(
                "dual entry references example {i}, but the model has {m}"
            )));
        }
        if e >= layout.n_edges() {
            return Err(Error::invalid(format!(
                "dual entry references edge {e}, but the graph has {}",
                layout.n_edges()
            )));
        }
        if u >= layout.width(e) {
            return Err(Error::invalid(format!(
                "dual entry references edge label {u}, but edge {e} has {}",
                layout.width(e)
            )));
        }
        if !v.is_finite() || v < 0.0 {
            return Err(Error::integrity(format!(
                "dual entry ({i}, {e}, {u}) has invalid value {v}"
            )));
        }
        let slot = &mut duals.block_mut(i)[layout.offset(e) + u];
        if *slot != 0.0 {
            return Err(Error::integrity(format!(
                "duplicate dual entry ({i}, {e}, {u})"
            )));
        }
        *slot = v;
    }

    for (i, &a) in file.a.iter().enumerate() {
        if graph.n_edges() == 0 {
            if a != 0.0 {
                return Err(Error::integrity(format!(
                    "example {i} stores mass {a} but the graph has no edges"
                )));
            }
            continue;
        }
        for e in 0..graph.n_edges() {
            let mass = duals.edge_mass(i, e);
            if (mass - a).abs() > MASS_TOL {
                return Err(Error::integrity(format!(
                    "example {i}, edge {e}: dual mass {mass} disagrees with stored mass {a}"
                )));
            }
        }
    }

    Ok(BaseModel {
        graph,
        alphabet: al,
        c: file.c,
        duals,
        train_labels: labels,
        edge_idx,
        kernel_kind: file.kernel.kind,
        kernel_normalized: file.kernel.normalized,
        objective_log: Vec::new(),
    })
}

pub fn load_model(path: &Path) -> Result<BaseModel> {
    model_from_file(read_json(path)?)
}

fn model_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("model_{t:03}.json"))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn save_ensemble(dir: &Path, ensemble: &Ensemble) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, model) in ensemble.models.iter().enumerate() {
        save_model(&model_path(dir, t), model)?;
    }
    let (consensus_edges, mu_bar) = match &ensemble.consensus {
        Some(c) => (c.graph.edges().to_vec(), sparse_entries(&c.duals)),
        None => (Vec::new(), Vec::new()),
    };
    let manifest = ManifestFile {
        t: ensemble.t(),
        strategy: ensemble.strategy,
        seed: ensemble.seed,
        consensus_edges,
        mu_bar,
    };
    write_json(&manifest_path(dir), &manifest)
}

fn verify_consensus(
    stored_edges: &[(usize, usize)],
    stored_mu: &[(usize, usize, usize, f64)],
    computed: &BaseModel,
) -> Result<()> {
    if stored_edges != computed.graph.edges() {
        return Err(Error::integrity(
            "manifest consensus edges disagree with the union of the base trees",
        ));
    }
    let recomputed = sparse_entries(&computed.duals);
    if stored_mu.len() != recomputed.len() {
        return Err(Error::integrity(format!(
            "manifest stores {} averaged dual entries, recomputation gives {}",
            stored_mu.len(),
            recomputed.len()
        )));
    }
    for (&(si, se, su, sv), &(ri, re, ru, rv)) in stored_mu.iter().zip(&recomputed) {
        if (si, se, su) != (ri, re, ru) || (sv - rv).abs() > 1e-12 {
            return Err(Error::integrity(format!(
                "manifest averaged dual entry ({si}, {se}, {su}) disagrees with recomputation"
            )));
        }
    }
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let manifest: ManifestFile = read_json(&manifest_path(dir))?;
    if manifest.t == 0 {
        return Err(Error::invalid("manifest declares an empty ensemble"));
    }
    let models: Vec<BaseModel> = (0..manifest.t)
        .map(|t| load_model(&model_path(dir, t)))
        .collect::<Result<_>>()?;

    let has_stored = !manifest.consensus_edges.is_empty() || !manifest.mu_bar.is_empty();
    if manifest.strategy.needs_consensus() && !has_stored && models[0].graph.n_edges() > 0 {
        return Err(Error::integrity(format!(
            "manifest strategy {} requires a stored consensus",
            manifest.strategy
        )));
    }
    let consensus = if has_stored {
        let computed = consensus_model(&models)?;
        verify_consensus(&manifest.consensus_edges, &manifest.mu_bar, &computed)?;
        Some(computed)
    } else if manifest.strategy.needs_consensus() {
        Some(consensus_model(&models)?)
    } else {
        crate::ensemble::average_marginals(&models)?;
        None
    };
    Ok(Ensemble {
        models,
        strategy: manifest.strategy,
        seed: manifest.seed,
        consensus,
    })
}
