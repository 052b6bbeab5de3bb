//! Config-driven experiment runs.
//!
//! One flat JSON config describes the dataset (files or the synthetic
//! generator), the kernel, and the training protocol. The entry points
//! mirror the CLI commands: data generation, ensemble training,
//! prediction, stratified cross validation with a learning curve, and
//! ensemble score diagnostics. Every artifact is a pure function of the
//! config, so reruns reproduce outputs byte for byte.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{
    self, evaluate, generate_circle, stratified_folds, CircleGeometry, Inputs, MetricsReport,
    MultilabelDataset,
};
use crate::ensemble::{
    node_score_shares, score_diagnostics, train_ensemble, Ensemble, Strategy, StrategyChoice,
};
use crate::error::{Error, Result};
use crate::kernel::{compute_cross, Alphabet, KernelKind, KernelMatrix};
use crate::learner::{BaseModel, TrainConfig};
use crate::model_io::{load_ensemble, save_ensemble};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Training features CSV; requires `labels_path`.
    pub features_path: Option<String>,
    pub labels_path: Option<String>,
    /// Precomputed training Gram matrix CSV; requires `labels_path` and
    /// kernel "precomputed".
    pub gram_path: Option<String>,
    /// Synthetic circle data; set together with `synthetic_k`.
    pub synthetic_m: Option<usize>,
    pub synthetic_k: Option<usize>,
    pub center_low: f64,
    pub center_high: f64,
    pub radius: f64,
    pub kernel: KernelKind,
    pub normalize_kernel: bool,
    pub slack: f64,
    pub slack_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub strategy: StrategyChoice,
    pub n_folds: usize,
    pub max_outer_passes: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Select the slack bound on a held-out 10% sample before cross
    /// validating on the remainder.
    pub tune: bool,
    pub out_dir: String,
    /// Where `train` writes and `predict`/`diag` read the ensemble;
    /// defaults to `<out_dir>/model`.
    pub model_dir: Option<String>,
    /// Test inputs for `predict`/`diag`: features, or kernel rows against
    /// the training set when the model kernel is precomputed.
    pub test_features_path: Option<String>,
    /// How many inputs `diag` samples when no explicit input is given.
    pub diag_samples: usize,
    pub diag_input: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let geometry = CircleGeometry::default();
        ExperimentConfig {
            name: "experiment".into(),
            features_path: None,
            labels_path: None,
            gram_path: None,
            synthetic_m: None,
            synthetic_k: None,
            center_low: geometry.center_low,
            center_high: geometry.center_high,
            radius: geometry.radius,
            kernel: KernelKind::Linear,
            normalize_kernel: true,
            slack: 1.0,
            slack_grid: vec![0.01, 0.1, 0.5, 1.0, 5.0, 10.0],
            ensemble_size: 16,
            strategy: StrategyChoice::All,
            n_folds: 5,
            max_outer_passes: 100,
            tolerance: 1e-6,
            seed: 0,
            tune: false,
            out_dir: "out".into(),
            model_dir: None,
            test_features_path: None,
            diag_samples: 10,
            diag_input: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 1 {
            return Err(Error::invalid("ensemble_size must be at least 1"));
        }
        if self.n_folds < 2 {
            return Err(Error::invalid("n_folds must be at least 2"));
        }
        if !(self.slack > 0.0) || !self.slack.is_finite() {
            return Err(Error::invalid(format!(
                "slack must be positive, got {}",
                self.slack
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        if self.tune {
            if self.slack_grid.is_empty() {
                return Err(Error::invalid("slack_grid must not be empty when tuning"));
            }
            for &c in &self.slack_grid {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::invalid(format!(
                        "slack_grid entries must be positive, got {c}"
                    )));
                }
            }
        }
        if self.synthetic_m.is_some() != self.synthetic_k.is_some() {
            return Err(Error::invalid(
                "synthetic_m and synthetic_k must be set together",
            ));
        }
        if self.features_path.is_some() && self.labels_path.is_none() {
            return Err(Error::invalid("features_path requires labels_path"));
        }
        if self.gram_path.is_some() && self.labels_path.is_none() {
            return Err(Error::invalid("gram_path requires labels_path"));
        }
        if self.gram_path.is_some() && self.kernel != KernelKind::Precomputed {
            return Err(Error::invalid("gram_path requires kernel \"precomputed\""));
        }
        if self.gram_path.is_some() && self.features_path.is_some() {
            return Err(Error::invalid(
                "gram_path and features_path are mutually exclusive",
            ));
        }
        if self.synthetic_m.is_some()
            && (self.features_path.is_some() || self.gram_path.is_some())
        {
            return Err(Error::invalid(
                "config sets both a synthetic dataset and dataset files",
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> CircleGeometry {
        CircleGeometry {
            center_low: self.center_low,
            center_high: self.center_high,
            radius: self.radius,
        }
    }

    pub fn model_dir(&self) -> PathBuf {
        match &self.model_dir {
            Some(dir) => PathBuf::from(dir),
            None => Path::new(&self.out_dir).join("model"),
        }
    }

    fn train_config(&self, seed: u64, slack: f64) -> TrainConfig {
        TrainConfig {
            c: slack,
            max_outer_passes: self.max_outer_passes,
            tolerance: self.tolerance,
            seed,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let body = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
}

/// Seeds for independent deterministic streams derived from the run seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const TUNE_SPLIT_STREAM: u64 = 1_000_003;
const TUNE_TRAIN_STREAM: u64 = 2_000_003;

fn load_training_data(cfg: &ExperimentConfig) -> Result<MultilabelDataset> {
    if let (Some(m), Some(k)) = (cfg.synthetic_m, cfg.synthetic_k) {
        return generate_circle(m, k, cfg.seed, cfg.geometry());
    }
    let labels = cfg.labels_path.as_deref();
    if let Some(gram) = &cfg.gram_path {
        let labels = labels.ok_or_else(|| Error::invalid("labels_path is required"))?;
        return data::load_gram_dataset(&cfg.name, Path::new(gram), Path::new(labels));
    }
    if let Some(features) = &cfg.features_path {
        let labels = labels.ok_or_else(|| Error::invalid("labels_path is required"))?;
        return data::load_dataset(&cfg.name, Path::new(features), Path::new(labels));
    }
    Err(Error::invalid(
        "config must specify a dataset: synthetic_m/synthetic_k, \
         features_path/labels_path, or gram_path/labels_path",
    ))
}

fn training_kernel(cfg: &ExperimentConfig, ds: &MultilabelDataset) -> Result<KernelMatrix> {
    match &ds.inputs {
        Inputs::Features(f) => {
            if cfg.kernel == KernelKind::Precomputed {
                return Err(Error::invalid("kernel \"precomputed\" requires gram_path"));
            }
            KernelMatrix::from_features(f, cfg.kernel, cfg.normalize_kernel)
        }
        Inputs::Gram(g) => KernelMatrix::from_gram(g.clone(), cfg.normalize_kernel),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::integrity(format!("serialization failed: {e}")))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GenDataSummary {
    pub m: usize,
    pub k: usize,
    pub cardinality: f64,
    pub density: f64,
    pub features_path: String,
    pub labels_path: String,
}

/// Generates the synthetic dataset and writes `features.csv` and
/// `labels.csv` into the output directory.
pub fn run_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    cfg.validate()?;
    let (m, k) = match (cfg.synthetic_m, cfg.synthetic_k) {
        (Some(m), Some(k)) => (m, k),
        _ => {
            return Err(Error::invalid(
                "gen-data requires synthetic_m and synthetic_k",
            ))
        }
    };
    let ds = generate_circle(m, k, cfg.seed, cfg.geometry())?;
    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    let features_path = out.join("features.csv");
    let labels_path = out.join("labels.csv");
    match &ds.inputs {
        Inputs::Features(f) => data::write_features_csv(&features_path, f)?,
        Inputs::Gram(_) => unreachable!("circle data is feature-based"),
    }
    data::write_labels_csv(&labels_path, &ds.labels)?;
    Ok(GenDataSummary {
        m: ds.m(),
        k: ds.k(),
        cardinality: ds.cardinality(),
        density: ds.density(),
        features_path: features_path.display().to_string(),
        labels_path: labels_path.display().to_string(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub t: usize,
    pub strategy: String,
    pub slack: f64,
    pub seed: u64,
    pub model_dir: String,
    /// Final dual objective of each base model.
    pub final_objectives: Vec<f64>,
}

/// Trains an ensemble on the full configured dataset and saves it.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = load_training_data(cfg)?;
    let kernel = training_kernel(cfg, &ds)?;
    let al = Alphabet::binary(ds.k());
    let tcfg = cfg.train_config(cfg.seed, cfg.slack);
    let ens = train_ensemble(
        &kernel,
        &ds.labels,
        &al,
        cfg.ensemble_size,
        cfg.strategy,
        &tcfg,
    )?;
    let dir = cfg.model_dir();
    save_ensemble(&dir, &ens)?;
    Ok(TrainSummary {
        t: ens.t(),
        strategy: cfg.strategy.to_string(),
        slack: cfg.slack,
        seed: cfg.seed,
        model_dir: dir.display().to_string(),
        final_objectives: ens
            .models
            .iter()
            .map(|m| *m.objective_log.last().unwrap_or(&0.0))
            .collect(),
    })
}

/// Kernel rows of the configured test inputs against the model's training
/// set, honoring the kernel the model was trained under.
fn test_cross_rows(cfg: &ExperimentConfig, model: &BaseModel, path: &str) -> Result<Array2<f64>> {
    if model.kernel_kind == KernelKind::Precomputed {
        if model.kernel_normalized {
            return Err(Error::invalid(
                "the model expects normalized precomputed kernel rows, which cannot be \
                 reconstructed from raw rows; train with normalize_kernel = false",
            ));
        }
        let rows = data::read_gram_csv(Path::new(path))?;
        if rows.nrows() > 0 && rows.ncols() != model.m() {
            return Err(Error::dimensions("kernel row length", model.m(), rows.ncols()));
        }
        return Ok(rows);
    }
    let test = data::read_features_csv(Path::new(path))?;
    if test.nrows() == 0 {
        return Ok(Array2::zeros((0, model.m())));
    }
    let ds = load_training_data(cfg)?;
    let train = match &ds.inputs {
        Inputs::Features(f) => f,
        Inputs::Gram(_) => {
            return Err(Error::invalid(
                "config provides a Gram matrix but the model expects feature vectors",
            ))
        }
    };
    if ds.m() != model.m() {
        return Err(Error::dimensions("training examples", model.m(), ds.m()));
    }
    if test.ncols() != train.ncols() {
        return Err(Error::dimensions(
            "feature dimension",
            train.ncols(),
            test.ncols(),
        ));
    }
    compute_cross(&test, train, model.kernel_kind, model.kernel_normalized)
}

fn predict_block(ens: &Ensemble, strategy: Strategy, cross: &Array2<f64>) -> Result<Array2<usize>> {
    let k = ens.k();
    let mut preds = Array2::zeros((cross.nrows(), k));
    for (i, row) in cross.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("contiguous kernel row");
        let y = ens.predict(strategy, row)?;
        for (j, &u) in y.iter().enumerate() {
            preds[(i, j)] = u;
        }
    }
    Ok(preds)
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictSummary {
    pub n_test: usize,
    pub strategies: Vec<String>,
    pub files: Vec<String>,
}

/// Loads the saved ensemble and writes one prediction CSV per requested
/// strategy.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<PredictSummary> {
    cfg.validate()?;
    let ens = load_ensemble(&cfg.model_dir())?;
    let path = cfg
        .test_features_path
        .as_ref()
        .ok_or_else(|| Error::invalid("predict requires test_features_path"))?;
    let cross = test_cross_rows(cfg, &ens.models[0], path)?;
    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    let mut strategies = Vec::new();
    let mut files = Vec::new();
    for &strategy in cfg.strategy.strategies() {
        if strategy == Strategy::Mam {
            ens.consensus()?;
        }
        let preds = predict_block(&ens, strategy, &cross)?;
        let file = out.join(format!("predictions_{strategy}.csv"));
        data::write_labels_csv(&file, &preds)?;
        strategies.push(strategy.to_string());
        files.push(file.display().to_string());
    }
    Ok(PredictSummary {
        n_test: cross.nrows(),
        strategies,
        files,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AggregateMetric {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> AggregateMetric {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    AggregateMetric {
        mean,
        std: var.sqrt(),
    }
}

/// Aggregated micro-F1, or the "-" sentinel when undefined on every fold.
#[derive(Debug, Clone, Copy)]
pub enum F1Aggregate {
    Defined(AggregateMetric),
    Undefined,
}

impl Serialize for F1Aggregate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            F1Aggregate::Defined(a) => a.serialize(serializer),
            F1Aggregate::Undefined => serializer.serialize_str("-"),
        }
    }
}

fn aggregate_f1(folds: &[Option<f64>]) -> F1Aggregate {
    let defined: Vec<f64> = folds.iter().flatten().copied().collect();
    if defined.is_empty() {
        F1Aggregate::Undefined
    } else {
        F1Aggregate::Defined(aggregate(&defined))
    }
}

/// Kendall rank correlation over all pairs; ties count as discordance
/// zero.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0i64;
    let mut pairs = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let sx = (x[j] - x[i]).partial_cmp(&0.0).unwrap() as i64;
            let sy = (y[j] - y[i]).partial_cmp(&0.0).unwrap() as i64;
            sum += sx * sy;
            pairs += 1;
        }
    }
    sum as f64 / pairs as f64
}

/// Ensemble sizes evaluated for the learning curve: powers of two below
/// the configured size, then the size itself.
pub fn t_schedule(t: usize) -> Vec<usize> {
    let mut schedule = Vec::new();
    let mut p = 1;
    while p < t {
        schedule.push(p);
        p *= 2;
    }
    schedule.push(t);
    schedule
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub m: usize,
    pub k: usize,
    pub cardinality: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSummary {
    pub kind: String,
    pub normalized: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningSummary {
    pub held_out: usize,
    pub strategy: String,
    pub grid: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub selected_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub microlabel_accuracy: AggregateMetric,
    pub multilabel_accuracy: AggregateMetric,
    pub micro_f1: F1Aggregate,
    /// Rank correlation between ensemble size and mean microlabel
    /// accuracy along the learning curve.
    pub learning_curve_kendall_tau: f64,
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub t: usize,
    pub strategy: Strategy,
    pub microlabel_accuracy: AggregateMetric,
    pub multilabel_accuracy: AggregateMetric,
    pub micro_f1: F1Aggregate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub name: String,
    pub dataset: DatasetSummary,
    pub kernel: KernelSummary,
    pub slack: f64,
    pub ensemble_size: usize,
    pub n_folds: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSummary>,
    /// Mean over folds of the mean per-model microlabel accuracy.
    pub base_models: AggregateMetric,
    pub strategies: Vec<StrategyReport>,
    #[serde(skip)]
    pub learning_curve: Vec<CurvePoint>,
}

fn tune_slack(
    cfg: &ExperimentConfig,
    labels: &Array2<usize>,
    kernel: &KernelMatrix,
) -> Result<(TuningSummary, Array2<usize>, KernelMatrix)> {
    let m = labels.nrows();
    let held_n = (m / 10).max(1);
    if m.saturating_sub(held_n) < cfg.n_folds {
        return Err(Error::invalid(format!(
            "tuning holds out {held_n} of {m} examples, leaving too few for {} folds",
            cfg.n_folds
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TUNE_SPLIT_STREAM));
    order.shuffle(&mut rng);
    let mut held = order[..held_n].to_vec();
    let mut rest = order[held_n..].to_vec();
    held.sort_unstable();
    rest.sort_unstable();

    let sub = kernel.square_submatrix(&rest)?;
    let cross = kernel.submatrix(&held, &rest)?;
    let labels_rest = labels.select(Axis(0), &rest);
    let truth_held = labels.select(Axis(0), &held);
    let al = Alphabet::binary(labels.ncols());

    let mut grid = cfg.slack_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tune_strategy = *cfg.strategy.strategies().last().unwrap();
    let seed = derive_seed(cfg.seed, TUNE_TRAIN_STREAM);

    let mut accuracies = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let tcfg = cfg.train_config(seed, c);
        let ens = train_ensemble(&sub, &labels_rest, &al, cfg.ensemble_size, cfg.strategy, &tcfg)?;
        let preds = predict_block(&ens, tune_strategy, &cross)?;
        let acc = evaluate(&preds, &truth_held)?.microlabel_accuracy;
        accuracies.push(acc);
        if best.is_none_or(|(b, _)| acc > b) {
            best = Some((acc, c));
        }
    }
    let selected = best.unwrap().1;
    Ok((
        TuningSummary {
            held_out: held_n,
            strategy: tune_strategy.to_string(),
            grid,
            accuracies,
            selected_slack: selected,
        },
        labels_rest,
        sub,
    ))
}

/// Stratified cross validation with a learning curve over ensemble sizes.
/// Writes `report.json` and `learning_curve.csv` into the output
/// directory and returns the report.
pub fn run_cv(cfg: &ExperimentConfig) -> Result<CvReport> {
    cfg.validate()?;
    let ds = load_training_data(cfg)?;
    let dataset = DatasetSummary {
        m: ds.m(),
        k: ds.k(),
        cardinality: ds.cardinality(),
        density: ds.density(),
    };
    let full_kernel = training_kernel(cfg, &ds)?;

    let mut labels = ds.labels.clone();
    let mut kernel = full_kernel;
    let mut slack = cfg.slack;
    let mut tuning = None;
    if cfg.tune {
        let (summary, labels_rest, kernel_rest) = tune_slack(cfg, &labels, &kernel)?;
        slack = summary.selected_slack;
        tuning = Some(summary);
        labels = labels_rest;
        kernel = kernel_rest;
    }

    let al = Alphabet::binary(labels.ncols());
    let folds = stratified_folds(&labels, cfg.n_folds, cfg.seed)?;
    let schedule = t_schedule(cfg.ensemble_size);
    let requested = cfg.strategy.strategies();

    let mut base_fold_means = Vec::with_capacity(cfg.n_folds);
    let mut cells: Vec<Vec<Vec<MetricsReport>>> =
        vec![vec![Vec::with_capacity(cfg.n_folds); requested.len()]; schedule.len()];

    for fold in 0..cfg.n_folds {
        let train_idx = folds.train_indices(fold);
        let test_idx = folds.test_indices(fold);
        let sub = kernel.square_submatrix(&train_idx)?;
        let cross = kernel.submatrix(&test_idx, &train_idx)?;
        let labels_train = labels.select(Axis(0), &train_idx);
        let truth = labels.select(Axis(0), &test_idx);

        let tcfg = cfg.train_config(derive_seed(cfg.seed, 1 + fold as u64), slack);
        let full = train_ensemble(
            &sub,
            &labels_train,
            &al,
            cfg.ensemble_size,
            cfg.strategy,
            &tcfg,
        )?;

        let mut model_accs = Vec::with_capacity(full.t());
        for model in &full.models {
            let mut preds = Array2::zeros((test_idx.len(), al.k()));
            for (i, row) in cross.rows().into_iter().enumerate() {
                let row = row.as_slice().expect("contiguous kernel row");
                let (y, _) = model.predict(row)?;
                for (j, &u) in y.iter().enumerate() {
                    preds[(i, j)] = u;
                }
            }
            model_accs.push(evaluate(&preds, &truth)?.microlabel_accuracy);
        }
        base_fold_means.push(model_accs.iter().sum::<f64>() / model_accs.len() as f64);

        for (ti, &t) in schedule.iter().enumerate() {
            let prefix = Ensemble::assemble(full.models[..t].to_vec(), cfg.strategy, full.seed)?;
            for (si, &strategy) in requested.iter().enumerate() {
                let preds = predict_block(&prefix, strategy, &cross)?;
                cells[ti][si].push(evaluate(&preds, &truth)?);
            }
        }
    }

    let mut learning_curve = Vec::new();
    for (ti, &t) in schedule.iter().enumerate() {
        for (si, &strategy) in requested.iter().enumerate() {
            let reports = &cells[ti][si];
            let micro: Vec<f64> = reports.iter().map(|r| r.microlabel_accuracy).collect();
            let multi: Vec<f64> = reports.iter().map(|r| r.multilabel_accuracy).collect();
            let f1: Vec<Option<f64>> = reports.iter().map(|r| r.micro_f1).collect();
            learning_curve.push(CurvePoint {
                t,
                strategy,
                microlabel_accuracy: aggregate(&micro),
                multilabel_accuracy: aggregate(&multi),
                micro_f1: aggregate_f1(&f1),
            });
        }
    }

    let strategies = requested
        .iter()
        .enumerate()
        .map(|(si, &strategy)| {
            let final_reports = &cells[schedule.len() - 1][si];
            let micro: Vec<f64> = final_reports.iter().map(|r| r.microlabel_accuracy).collect();
            let multi: Vec<f64> = final_reports.iter().map(|r| r.multilabel_accuracy).collect();
            let f1: Vec<Option<f64>> = final_reports.iter().map(|r| r.micro_f1).collect();
            let curve_means: Vec<f64> = (0..schedule.len())
                .map(|ti| {
                    let reports = &cells[ti][si];
                    reports.iter().map(|r| r.microlabel_accuracy).sum::<f64>()
                        / reports.len() as f64
                })
                .collect();
            let ts: Vec<f64> = schedule.iter().map(|&t| t as f64).collect();
            StrategyReport {
                strategy: strategy.to_string(),
                microlabel_accuracy: aggregate(&micro),
                multilabel_accuracy: aggregate(&multi),
                micro_f1: aggregate_f1(&f1),
                learning_curve_kendall_tau: kendall_tau(&ts, &curve_means),
            }
        })
        .collect();

    let report = CvReport {
        name: cfg.name.clone(),
        dataset,
        kernel: KernelSummary {
            kind: cfg.kernel.to_string(),
            normalized: cfg.normalize_kernel,
        },
        slack,
        ensemble_size: cfg.ensemble_size,
        n_folds: cfg.n_folds,
        seed: cfg.seed,
        tuning,
        base_models: aggregate(&base_fold_means),
        strategies,
        learning_curve,
    };

    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_learning_curve(&out.join("learning_curve.csv"), &report.learning_curve)?;
    Ok(report)
}

fn write_learning_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record([
            "t",
            "strategy",
            "microlabel_accuracy_mean",
            "microlabel_accuracy_std",
            "multilabel_accuracy_mean",
            "multilabel_accuracy_std",
            "micro_f1_mean",
            "micro_f1_std",
        ])
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
    for point in curve {
        let (f1_mean, f1_std) = match point.micro_f1 {
            F1Aggregate::Defined(a) => (a.mean.to_string(), a.std.to_string()),
            F1Aggregate::Undefined => ("-".into(), "-".into()),
        };
        writer
            .write_record([
                point.t.to_string(),
                point.strategy.to_string(),
                point.microlabel_accuracy.mean.to_string(),
                point.microlabel_accuracy.std.to_string(),
                point.multilabel_accuracy.mean.to_string(),
                point.multilabel_accuracy.std.to_string(),
                f1_mean,
                f1_std,
            ])
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagRecord {
    pub input: usize,
    pub prediction: Vec<usize>,
    pub delta_individual: f64,
    pub delta_ensemble: f64,
    pub gap: f64,
    pub variance: f64,
    pub diversity: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagReport {
    pub t: usize,
    pub records: Vec<DiagRecord>,
}

/// Evaluates the score variance decomposition of the saved ensemble at its
/// consensus predictions, over sampled inputs, and writes
/// `diagnostics.json`.
pub fn run_diag(cfg: &ExperimentConfig) -> Result<DiagReport> {
    cfg.validate()?;
    let ens = load_ensemble(&cfg.model_dir())?;
    let consensus = ens.consensus()?;
    let cross = match &cfg.test_features_path {
        Some(path) => test_cross_rows(cfg, &ens.models[0], path)?,
        None => {
            let ds = load_training_data(cfg)?;
            let kernel = training_kernel(cfg, &ds)?;
            if kernel.n() != ens.m() {
                return Err(Error::dimensions("training examples", ens.m(), kernel.n()));
            }
            kernel.values().clone()
        }
    };
    let n = cross.nrows();
    if n == 0 {
        return Err(Error::invalid("diag has no inputs to evaluate"));
    }
    let chosen: Vec<usize> = match cfg.diag_input {
        Some(i) => {
            if i >= n {
                return Err(Error::invalid(format!(
                    "diag_input {i} is out of range for {n} inputs"
                )));
            }
            vec![i]
        }
        None => (0..n.min(cfg.diag_samples.max(1))).collect(),
    };
    let mut records = Vec::with_capacity(chosen.len());
    for &idx in &chosen {
        let row = cross.row(idx);
        let row = row.as_slice().expect("contiguous kernel row");
        let (prediction, _) = consensus.predict(row)?;
        let shares: Vec<Vec<f64>> = ens
            .models
            .iter()
            .map(|m| {
                m.edge_potentials(row)
                    .and_then(|pot| node_score_shares(&pot, &prediction))
            })
            .collect::<Result<_>>()?;
        let d = score_diagnostics(&shares, None)?;
        records.push(DiagRecord {
            input: idx,
            prediction,
            delta_individual: d.delta_individual,
            delta_ensemble: d.delta_ensemble,
            gap: d.gap,
            variance: d.variance,
            diversity: d.diversity,
            coherence: d.coherence,
        });
    }
    let report = DiagReport {
        t: ens.t(),
        records,
    };
    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}
