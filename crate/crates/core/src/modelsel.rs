//! k-fold splitting and cross-validated selection of the RBF width.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::committee::{error_rate, Classifier};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_CV_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    /// Indices outside fold `f`, ascending.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles `0..n` and deals it round-robin into `k` folds; each fold is
/// returned in ascending order.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { folds, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub gamma: f64,
    /// Mean held-out error over the folds that could be evaluated.
    pub mean_cv_error: Option<f64>,
    pub folds_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub candidates: Vec<GridCandidate>,
    pub chosen: f64,
}

impl GridResult {
    pub fn min_error(&self) -> Option<f64> {
        self.candidates
            .iter()
            .filter_map(|c| c.mean_cv_error)
            .min_by(f64::total_cmp)
    }
}

/// Evaluates every γ in `grid` by `folds`-fold CV using `trainer` and picks
/// the lowest mean error, ties going to the smaller γ. Folds whose training
/// complement holds one class are skipped; so are folds on which the trainer
/// fails numerically.
pub fn grid_search_gamma<F, M>(trainer: F, train: &Dataset, grid: &[f64], folds: usize, seed: u64) -> Result<GridResult>
where
    F: Fn(&Dataset, f64) -> Result<M> + Sync,
    M: Classifier,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty gamma grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
    }
    let plan = kfold_split(train.len(), folds, seed)?;
    let usable: Vec<(Dataset, Dataset)> = (0..plan.folds.len())
        .filter_map(|f| {
            let fit = train.subset(&plan.complement(f));
            if !fit.has_both_classes() {
                log::warn!("fold {f} skipped: training complement holds a single class");
                return None;
            }
            Some((fit, train.subset(&plan.folds[f])))
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::DegenerateFold);
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..usable.len()).map(move |f| (g, f)))
        .collect();
    let outcomes: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (fit, held) = &usable[f];
            let model = match trainer(fit, grid[g]) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("gamma {} fold {f} skipped: {e}", grid[g]);
                    return Ok(None);
                }
            };
            let pred = held
                .records
                .iter()
                .map(|r| model.decide(&r.features))
                .collect::<Result<Vec<_>>>()?;
            error_rate(&pred, &held.labels()).map(Some)
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<GridCandidate> = grid
        .iter()
        .enumerate()
        .map(|(g, &gamma)| {
            let errs: Vec<f64> = outcomes[g * usable.len()..(g + 1) * usable.len()]
                .iter()
                .flatten()
                .copied()
                .collect();
            GridCandidate {
                gamma,
                mean_cv_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                folds_used: errs.len(),
            }
        })
        .collect();

    let mut chosen: Option<&GridCandidate> = None;
    for c in &candidates {
        let Some(e) = c.mean_cv_error else { continue };
        let better = match chosen {
            None => true,
            Some(b) => {
                let be = b.mean_cv_error.unwrap_or(f64::INFINITY);
                e < be || (e == be && c.gamma < b.gamma)
            }
        };
        if better {
            chosen = Some(c);
        }
    }
    let chosen = chosen
        .ok_or_else(|| Error::NumericalFailure("no gamma candidate could be trained".into()))?
        .gamma;
    Ok(GridResult { candidates, chosen })
}

/// How often each γ of `grid` was chosen across repeated searches.
pub fn selection_frequency(results: &[GridResult], grid: &[f64]) -> Vec<(f64, usize)> {
    grid.iter()
        .map(|&g| (g, results.iter().filter(|r| r.chosen == g).count()))
        .collect()
}
