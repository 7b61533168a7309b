//! Sector-level training, evaluation and frozen forward backtests.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::committee::{error_rate, fit_committee, predict_all, Classifier, CommitteeModel, LearnerKind, TrainedLearner};
use crate::dataset::{
    default_schema, load_csv, partition_by_sector, split_train_test, Dataset, Label, Quarter, Sector,
    Standardization, DEFAULT_CRITICAL_MASS,
};
use crate::error::{Error, Result};
use crate::forest::{select_tree_count, train_forest, ForestConfig};
use crate::knn::{select_k, train_committee_with, KSelection, KnnConfig};
use crate::modelsel::{grid_search_gamma, selection_frequency, GridResult, DEFAULT_CV_FOLDS, DEFAULT_GAMMA_GRID};
use crate::relief::{default_iterations, normalize, relieff, select_features, ReliefWeights, SelectionPolicy, DEFAULT_NEIGHBORS};
use crate::rvm::{train_rvm_with, RvmConfig, DEFAULT_THRESHOLD};
use crate::seed;
use crate::svm::{train_svm, DEFAULT_C};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const OVERFIT_TRAIN_ERROR: f64 = 0.02;
pub const OVERFIT_KNN_TRAIN_ERROR: f64 = 0.01;

/// Committee and k-NN both (nearly) reproduce their training labels.
pub fn is_overfit(committee_train: f64, knn_train: f64) -> bool {
    committee_train < OVERFIT_TRAIN_ERROR && knn_train < OVERFIT_KNN_TRAIN_ERROR
}

const STREAM_SPLIT: u64 = 0;
const STREAM_RELIEF: u64 = 1;
const STREAM_FOREST: u64 = 2;
const STREAM_SVM_CV: u64 = 3;
const STREAM_RVM_CV: u64 = 4;
const STREAM_KNN_CV: u64 = 5;
const STREAM_KNN_COMMITTEE: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PerSector,
    Aggregated,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "per_sector" => Ok(Mode::PerSector),
            "aggregated" => Ok(Mode::Aggregated),
            _ => Err(format!("unknown mode `{s}`, expected per_sector or aggregated")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Mode,
    pub train_fraction: f64,
    pub gamma_grid: Vec<f64>,
    pub cv_folds: usize,
    pub svm_c: f64,
    pub rvm_threshold: f64,
    /// Per-sector overrides of `rvm_threshold`.
    pub rvm_thresholds: BTreeMap<Sector, f64>,
    pub relief_policy: SelectionPolicy,
    pub relief_neighbors: usize,
    pub relief_iterations: Option<usize>,
    pub max_trees: usize,
    pub knn: KnnConfig,
    pub min_sector_size: usize,
    pub seed: u64,
    /// Worker threads for sector runs; 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            mode: Mode::PerSector,
            train_fraction: 0.10,
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            cv_folds: DEFAULT_CV_FOLDS,
            svm_c: DEFAULT_C,
            rvm_threshold: DEFAULT_THRESHOLD,
            rvm_thresholds: BTreeMap::new(),
            relief_policy: SelectionPolicy::default(),
            relief_neighbors: DEFAULT_NEIGHBORS,
            relief_iterations: None,
            max_trees: 200,
            knn: KnnConfig::default(),
            min_sector_size: DEFAULT_CRITICAL_MASS,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.train_fraction) {
            return bad(format!("train_fraction must lie in (0,1), got {}", self.train_fraction));
        }
        if !unit(self.rvm_threshold) {
            return bad(format!("rvm_threshold must lie in (0,1), got {}", self.rvm_threshold));
        }
        if let Some((s, t)) = self.rvm_thresholds.iter().find(|(_, t)| !unit(**t)) {
            return bad(format!("threshold for {s} must lie in (0,1), got {t}"));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("gamma_grid must be a nonempty list of positive values".into());
        }
        if !(self.svm_c.is_finite() && self.svm_c > 0.0) {
            return bad(format!("svm_c must be positive, got {}", self.svm_c));
        }
        if self.cv_folds < 2 || self.knn.folds < 2 {
            return bad("cross-validation needs at least two folds".into());
        }
        if self.max_trees == 0 || self.knn.members == 0 || self.knn.max_k == 0 || self.relief_neighbors == 0 {
            return bad("max_trees, knn members, knn max_k and relief_neighbors must be positive".into());
        }
        if !(self.knn.subset_fraction > 0.0 && self.knn.subset_fraction <= 1.0) {
            return bad(format!("knn subset_fraction must lie in (0,1], got {}", self.knn.subset_fraction));
        }
        match self.relief_policy {
            SelectionPolicy::TopM(0) => bad("relief top_m must be positive".into()),
            SelectionPolicy::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                bad(format!("relief threshold must lie in [0,1], got {t}"))
            }
            _ => Ok(()),
        }
    }

    pub fn threshold_for(&self, sector: Sector) -> f64 {
        self.rvm_thresholds.get(&sector).copied().unwrap_or(self.rvm_threshold)
    }

    pub fn sector_seed(&self, sector: Sector) -> u64 {
        seed::derive(self.seed, u64::from(sector.code()))
    }

    /// Seed of the train/test split for `sector`.
    pub fn split_seed(&self, sector: Sector) -> u64 {
        seed::derive(self.sector_seed(sector), STREAM_SPLIT)
    }
}

/// Everything learned from one sector's training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedSector {
    pub sector: Sector,
    pub standardization: Standardization,
    pub relief: ReliefWeights,
    pub selected_features: Vec<usize>,
    pub tree_count: usize,
    pub oob_curve: Vec<f64>,
    pub svm_grid: GridResult,
    pub rvm_grid: GridResult,
    pub k_selection: KSelection,
    pub committee: CommitteeModel,
}

impl FittedSector {
    /// Standardizes and projects raw records onto the selected features.
    pub fn prepare(&self, raw: &Dataset) -> Dataset {
        self.standardization.apply(raw).project(&self.selected_features)
    }

    /// SHA-256 over the serialized model state.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Standardize, select features, train the four learners with their own
/// model-selection procedures and weight them into a committee.
pub fn fit_sector_models(sector: Sector, train: &Dataset, config: &RunConfig, seed: u64) -> Result<FittedSector> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if !train.has_both_classes() {
        return Err(Error::InsufficientClassData(format!(
            "{sector}: training sample holds a single class"
        )));
    }
    let standardization = Standardization::fit(train);
    let std_train = standardization.apply(train);

    let iterations = config.relief_iterations.unwrap_or_else(|| default_iterations(train.len()));
    let relief = normalize(&relieff(
        &std_train,
        config.relief_neighbors,
        iterations,
        seed::derive(seed, STREAM_RELIEF),
    )?);
    let selected_features = select_features(&relief, config.relief_policy);
    let fit = std_train.project(&selected_features);

    let mut forest = train_forest(&fit, config.max_trees, seed::derive(seed, STREAM_FOREST), &ForestConfig::default())?;
    let oob_curve = forest.oob_curve.clone();
    let tree_count = select_tree_count(&oob_curve);
    forest.truncate(tree_count);

    let c = config.svm_c;
    let svm_grid = grid_search_gamma(
        |d, g| train_svm(d, g, c),
        &fit,
        &config.gamma_grid,
        config.cv_folds,
        seed::derive(seed, STREAM_SVM_CV),
    )?;
    let svm = train_svm(&fit, svm_grid.chosen, c)?;

    let rvm_config = RvmConfig {
        threshold: config.threshold_for(sector),
        ..RvmConfig::default()
    };
    let rvm_grid = grid_search_gamma(
        |d, g| train_rvm_with(d, g, &rvm_config).map(|f| f.model),
        &fit,
        &config.gamma_grid,
        config.cv_folds,
        seed::derive(seed, STREAM_RVM_CV),
    )?;
    let rvm = train_rvm_with(&fit, rvm_grid.chosen, &rvm_config)?.model;

    let k_selection = select_k(&fit, config.knn.max_k, config.knn.folds, seed::derive(seed, STREAM_KNN_CV))?;
    let knn = train_committee_with(
        &fit,
        config.knn.members,
        config.knn.subset_fraction,
        k_selection.k_star,
        seed::derive(seed, STREAM_KNN_COMMITTEE),
    )?;

    let learners = vec![
        TrainedLearner::Forest(forest),
        TrainedLearner::Svm(svm),
        TrainedLearner::Rvm(rvm),
        TrainedLearner::Knn(knn),
    ];
    let committee = fit_committee(learners, &fit)?;
    Ok(FittedSector {
        sector,
        standardization,
        relief,
        selected_features,
        tree_count,
        oob_curve,
        svm_grid,
        rvm_grid,
        k_selection,
        committee,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerReport {
    pub kind: LearnerKind,
    pub train_error: f64,
    pub test_error: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stock_id: String,
    pub quarter: Quarter,
    pub truth: Label,
    pub committee: Label,
    /// `sum(alpha_i y_i) / sum(|alpha_i|)`.
    pub committee_margin: f64,
    pub rvm_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub sector: Sector,
    pub records: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub learners: Vec<LearnerReport>,
    pub committee: ErrorPair,
    pub overfit_warning: bool,
    pub selected_features: Vec<String>,
    pub relief: ReliefWeights,
    pub tree_count: usize,
    pub oob_curve: Vec<f64>,
    pub svm_grid: GridResult,
    pub rvm_grid: GridResult,
    pub rvm_threshold: f64,
    pub relevance_vectors: usize,
    pub support_vectors: usize,
    pub k_star: usize,
    pub k_curve: Vec<(usize, f64)>,
    pub fingerprint: String,
    pub seconds: f64,
    pub predictions: Vec<Prediction>,
}

impl SectorReport {
    pub fn learner(&self, kind: LearnerKind) -> Option<&LearnerReport> {
        self.learners.iter().find(|l| l.kind == kind)
    }

    pub fn best_constituent_test_error(&self) -> f64 {
        self.learners.iter().map(|l| l.test_error).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSector {
    pub sector: Sector,
    pub records: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFrequency {
    pub svm: Vec<(f64, usize)>,
    pub rvm: Vec<(f64, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardEntry {
    pub quarter: Quarter,
    /// `None` when the quarter has no records.
    pub error: Option<f64>,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardSector {
    pub sector: Sector,
    pub train_quarter: Quarter,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
    pub series: Vec<ForwardEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub train_quarter: Quarter,
    pub horizon_end: Quarter,
    pub sectors: Vec<ForwardSector>,
    pub skipped: Vec<SkippedSector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub mode: Mode,
    pub config: RunConfig,
    pub rejected_rows: usize,
    pub sectors: Vec<SectorReport>,
    pub skipped: Vec<SkippedSector>,
    pub gamma_selection: GammaFrequency,
    pub total_seconds: f64,
    pub forward: Option<ForwardReport>,
}

impl EvaluationReport {
    pub fn sector(&self, sector: Sector) -> Option<&SectorReport> {
        self.sectors.iter().find(|s| s.sector == sector)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Splits the input into the units that get their own models, dropping
/// sectors below the critical-mass floor.
fn units(data: &Dataset, config: &RunConfig) -> (Vec<(Sector, Dataset)>, Vec<SkippedSector>) {
    let parts: Vec<(Sector, Dataset)> = match config.mode {
        Mode::PerSector => partition_by_sector(data).into_iter().collect(),
        Mode::Aggregated => vec![(Sector::Aggregated, data.aggregated())],
    };
    let mut kept = vec![];
    let mut skipped = vec![];
    for (sector, part) in parts {
        if part.below_critical_mass(config.min_sector_size) {
            log::warn!("{sector}: {} records is below the critical mass of {}", part.len(), config.min_sector_size);
            skipped.push(SkippedSector {
                sector,
                records: part.len(),
                reason: format!("below critical mass ({} < {})", part.len(), config.min_sector_size),
            });
        } else {
            kept.push((sector, part));
        }
    }
    (kept, skipped)
}

fn errors_of<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> Result<f64> {
    error_rate(&predict_all(model, data)?, &data.labels())
}

fn evaluate_sector(sector: Sector, data: &Dataset, config: &RunConfig) -> Result<SectorReport> {
    let start = Instant::now();
    let seed = config.sector_seed(sector);
    let (train, test) = split_train_test(data, config.train_fraction, config.split_seed(sector))?;
    let fitted = fit_sector_models(sector, &train, config, seed)?;
    let fit = fitted.prepare(&train);
    let held = fitted.prepare(&test);
    let c = &fitted.committee;

    let learners = c
        .learners
        .iter()
        .zip(c.alphas.iter().zip(&c.training_errors))
        .map(|(l, (&alpha, &epsilon))| {
            let gamma = match l {
                TrainedLearner::Svm(m) => Some(m.kernel.gamma),
                TrainedLearner::Rvm(m) => Some(m.kernel.gamma),
                _ => None,
            };
            Ok(LearnerReport {
                kind: l.kind(),
                train_error: epsilon,
                test_error: errors_of(l, &held)?,
                epsilon,
                alpha,
                gamma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let committee = ErrorPair {
        train_error: errors_of(c, &fit)?,
        test_error: errors_of(c, &held)?,
    };
    let knn_train = learners
        .iter()
        .find(|l| l.kind == LearnerKind::Knn)
        .map_or(f64::INFINITY, |l| l.train_error);
    let overfit_warning = is_overfit(committee.train_error, knn_train);
    if overfit_warning {
        log::warn!(
            "{sector}: committee train error {:.4} with knn train error {:.4} suggests memorization",
            committee.train_error,
            knn_train
        );
    }

    let rvm = c.rvm().ok_or_else(|| Error::NumericalFailure("committee lacks an rvm".into()))?;
    let predictions = test
        .records
        .iter()
        .zip(&held.records)
        .map(|(raw, x)| {
            Ok(Prediction {
                stock_id: raw.stock_id.clone(),
                quarter: raw.quarter,
                truth: raw.label,
                committee: c.decide(&x.features)?,
                committee_margin: c.margin(&x.features)?,
                rvm_probability: rvm.probability(&x.features)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let support_vectors = c
        .learners
        .iter()
        .find_map(|l| match l {
            TrainedLearner::Svm(m) => Some(m.support_vectors.len()),
            _ => None,
        })
        .unwrap_or(0);

    Ok(SectorReport {
        sector,
        records: data.len(),
        train_size: train.len(),
        test_size: test.len(),
        learners,
        committee,
        overfit_warning,
        selected_features: fitted.selected_features.iter().map(|&j| data.schema[j].clone()).collect(),
        relief: fitted.relief.clone(),
        tree_count: fitted.tree_count,
        oob_curve: fitted.oob_curve.clone(),
        svm_grid: fitted.svm_grid.clone(),
        rvm_grid: fitted.rvm_grid.clone(),
        rvm_threshold: rvm.threshold,
        relevance_vectors: rvm.relevance_vectors.len(),
        support_vectors,
        k_star: fitted.k_selection.k_star,
        k_curve: fitted.k_selection.curve.clone(),
        fingerprint: fitted.fingerprint()?,
        seconds: start.elapsed().as_secs_f64(),
        predictions,
    })
}

/// A sector whose failure is reported rather than fatal.
fn soft_failure(e: &Error) -> bool {
    !matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_))
}

/// Runs the full protocol on an in-memory dataset.
pub fn run_on_dataset(data: &Dataset, config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let start = Instant::now();
    let (units, mut skipped) = units(data, config);
    let outcomes: Vec<(Sector, usize, Result<SectorReport>)> = pool(config.workers)?.install(|| {
        units
            .par_iter()
            .map(|(sector, part)| (*sector, part.len(), evaluate_sector(*sector, part, config)))
            .collect()
    });
    let mut sectors = vec![];
    for (sector, records, outcome) in outcomes {
        match outcome {
            Ok(r) => sectors.push(r),
            Err(e) if soft_failure(&e) => {
                log::warn!("{sector} skipped: {e}");
                skipped.push(SkippedSector {
                    sector,
                    records,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    skipped.sort_by_key(|s| s.sector);
    let svm: Vec<GridResult> = sectors.iter().map(|s| s.svm_grid.clone()).collect();
    let rvm: Vec<GridResult> = sectors.iter().map(|s| s.rvm_grid.clone()).collect();
    Ok(EvaluationReport {
        format_version: REPORT_FORMAT_VERSION,
        mode: config.mode,
        config: config.clone(),
        rejected_rows: 0,
        sectors,
        skipped,
        gamma_selection: GammaFrequency {
            svm: selection_frequency(&svm, &config.gamma_grid),
            rvm: selection_frequency(&rvm, &config.gamma_grid),
        },
        total_seconds: start.elapsed().as_secs_f64(),
        forward: None,
    })
}

fn load_input(config: &RunConfig) -> Result<(Dataset, usize)> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("no input file configured".into()))?;
    let loaded = load_csv(path, &default_schema())?;
    for issue in &loaded.rejected {
        log::warn!("line {} rejected: {}", issue.line, issue.reason);
    }
    Ok((loaded.dataset, loaded.rejected.len()))
}

/// Loads `config.input` and runs the full protocol.
pub fn run_pipeline(config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let (data, rejected) = load_input(config)?;
    let mut report = run_on_dataset(&data, config)?;
    report.rejected_rows = rejected;
    Ok(report)
}

/// Fits each unit once on `train_quarter` and scores the frozen models on
/// every later quarter through `horizon_end`.
pub fn backtest_on_dataset(
    data: &Dataset,
    config: &RunConfig,
    train_quarter: Quarter,
    horizon_end: Quarter,
) -> Result<ForwardReport> {
    config.validate()?;
    if horizon_end <= train_quarter {
        return Err(Error::InvalidParameter(format!(
            "horizon end {horizon_end} must follow the training quarter {train_quarter}"
        )));
    }
    let horizon = train_quarter.next().through(horizon_end);
    let (units, mut skipped) = units(data, config);
    let outcomes: Vec<(Sector, usize, Result<ForwardSector>)> = pool(config.workers)?.install(|| {
        units
            .par_iter()
            .map(|(sector, part)| {
                let run = || -> Result<ForwardSector> {
                    let seed = config.sector_seed(*sector);
                    let first = part.filter_quarter(train_quarter);
                    if first.is_empty() {
                        return Err(Error::InsufficientClassData(format!(
                            "{sector}: no records in training quarter {train_quarter}"
                        )));
                    }
                    let (train, _) = split_train_test(&first, config.train_fraction, config.split_seed(*sector))?;
                    let fitted = fit_sector_models(*sector, &train, config, seed)?;
                    let fingerprint_before = fitted.fingerprint()?;
                    let series = horizon
                        .iter()
                        .map(|&q| {
                            let slice = part.filter_quarter(q);
                            if slice.is_empty() {
                                log::warn!("{sector}: quarter {q} missing from the input");
                                return Ok(ForwardEntry {
                                    quarter: q,
                                    error: None,
                                    records: 0,
                                });
                            }
                            Ok(ForwardEntry {
                                quarter: q,
                                error: Some(errors_of(&fitted.committee, &fitted.prepare(&slice))?),
                                records: slice.len(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ForwardSector {
                        sector: *sector,
                        train_quarter,
                        fingerprint_after: fitted.fingerprint()?,
                        fingerprint_before,
                        series,
                    })
                };
                (*sector, part.len(), run())
            })
            .collect()
    });
    let mut sectors = vec![];
    for (sector, records, outcome) in outcomes {
        match outcome {
            Ok(s) => sectors.push(s),
            Err(e) if soft_failure(&e) => {
                log::warn!("{sector} skipped: {e}");
                skipped.push(SkippedSector {
                    sector,
                    records,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    skipped.sort_by_key(|s| s.sector);
    Ok(ForwardReport {
        train_quarter,
        horizon_end,
        sectors,
        skipped,
    })
}

/// Loads `config.input` and runs a frozen forward backtest.
pub fn backtest_forward(config: &RunConfig, train_quarter: Quarter, horizon_end: Quarter) -> Result<ForwardReport> {
    config.validate()?;
    let (data, _) = load_input(config)?;
    backtest_on_dataset(&data, config, train_quarter, horizon_end)
}
