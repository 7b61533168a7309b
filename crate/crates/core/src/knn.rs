//! k-nearest-neighbor posterior, cross-validated choice of k, and a bagged
//! committee of weak k-NN members sharing one k.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::modelsel::kfold_split;
use crate::seed;
use crate::svm::sq_dist;

pub const DEFAULT_MAX_K: usize = 100;
pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_MEMBERS: usize = 100;
pub const DEFAULT_SUBSET_FRACTION: f64 = 0.632;

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Fraction of positives among the `k` nearest of `candidates` (distance
/// ties resolved toward the lower index). `candidates` is reordered.
fn posterior_from(candidates: &mut [(f64, usize)], y: &[Label], k: usize) -> f64 {
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, by_distance);
    }
    let pos = candidates[..k].iter().filter(|(_, i)| y[*i].is_positive()).count();
    pos as f64 / k as f64
}

fn decide(posterior: f64) -> Label {
    if posterior > 0.5 {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// `K_+ / K` over the `k` Euclidean-nearest records of `reference`.
pub fn knn_posterior(reference: &Dataset, x: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > reference.len() {
        return Err(Error::KTooLarge {
            k,
            available: reference.len(),
        });
    }
    if x.len() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: x.len(),
        });
    }
    let mut cand: Vec<(f64, usize)> = reference
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (sq_dist(x, &r.features), i))
        .collect();
    Ok(posterior_from(&mut cand, &reference.labels(), k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k_star: usize,
    /// `(k, mean held-out error)` for every evaluated k.
    pub curve: Vec<(usize, f64)>,
}

/// Position of the first minimum of `errors`.
pub fn first_minimum(errors: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &e) in errors.iter().enumerate() {
        if best.is_none_or(|b| e < errors[b]) {
            best = Some(i);
        }
    }
    best
}

/// Chooses k in `1..=min(max_k, floor(9n/10))` by `folds`-fold CV and
/// returns the smallest k attaining the minimum mean error.
pub fn select_k(train: &Dataset, max_k: usize, folds: usize, seed: u64) -> Result<KSelection> {
    let n = train.len();
    if n < folds.max(10) {
        return Err(Error::TooFewRecords {
            needed: folds.max(10),
            got: n,
        });
    }
    let k_max = max_k.min(9 * n / 10).max(1);
    let plan = kfold_split(n, folds, seed)?;
    let x: Vec<&[f64]> = train.records.iter().map(|r| r.features.as_slice()).collect();
    let y = train.labels();

    let mut sum_err = vec![0.0; k_max];
    let mut in_fold = vec![false; n];
    for fold in &plan.folds {
        in_fold.iter_mut().for_each(|f| *f = false);
        fold.iter().for_each(|&i| in_fold[i] = true);
        let mut wrong = vec![0usize; k_max];
        for &i in fold {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| !in_fold[j])
                .map(|j| (sq_dist(x[i], x[j]), j))
                .collect();
            cand.sort_by(by_distance);
            let mut pos = 0;
            for k in 1..=k_max.min(cand.len()) {
                if y[cand[k - 1].1].is_positive() {
                    pos += 1;
                }
                if decide(pos as f64 / k as f64) != y[i] {
                    wrong[k - 1] += 1;
                }
            }
        }
        for (s, w) in sum_err.iter_mut().zip(&wrong) {
            *s += *w as f64 / fold.len() as f64;
        }
    }
    let errors: Vec<f64> = sum_err.iter().map(|s| s / plan.folds.len() as f64).collect();
    let best = first_minimum(&errors).unwrap_or(0);
    Ok(KSelection {
        k_star: best + 1,
        curve: errors.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnMember {
    /// Indices into the committee's shared reference matrix, ascending.
    pub reference: Vec<usize>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnCommittee {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
    pub members: Vec<KnnMember>,
    pub k_star: usize,
}

impl KnnCommittee {
    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn member_votes(&self, x: &[f64]) -> Result<Vec<Label>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let dist: Vec<f64> = self.x.iter().map(|r| sq_dist(x, r)).collect();
        let mut cand = Vec::new();
        Ok(self
            .members
            .iter()
            .map(|m| {
                cand.clear();
                cand.extend(m.reference.iter().map(|&i| (dist[i], i)));
                decide(posterior_from(&mut cand, &self.y, m.k))
            })
            .collect())
    }

    /// Unweighted majority of member decisions; a tie goes to `Negative`.
    pub fn decide(&self, x: &[f64]) -> Result<Label> {
        Ok(crate::forest::vote(self.member_votes(x)?.into_iter()))
    }
}

pub fn committee_predict(committee: &KnnCommittee, x: &[f64]) -> Result<Label> {
    committee.decide(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub max_k: usize,
    pub folds: usize,
    pub members: usize,
    pub subset_fraction: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            max_k: DEFAULT_MAX_K,
            folds: DEFAULT_FOLDS,
            members: DEFAULT_MEMBERS,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
        }
    }
}

pub fn train_committee(train: &Dataset, members: usize, k_star: usize, seed: u64) -> Result<KnnCommittee> {
    train_committee_with(train, members, DEFAULT_SUBSET_FRACTION, k_star, seed)
}

/// Each member draws `ceil(subset_fraction * n)` records without
/// replacement; its k is `k_star` clamped to that size.
pub fn train_committee_with(
    train: &Dataset,
    members: usize,
    subset_fraction: f64,
    k_star: usize,
    seed: u64,
) -> Result<KnnCommittee> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if members == 0 || k_star == 0 {
        return Err(Error::InvalidParameter("members and k must be positive".into()));
    }
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subset fraction must lie in (0,1], got {subset_fraction}"
        )));
    }
    let n = train.len();
    let size = ((subset_fraction * n as f64).ceil() as usize).clamp(1, n);
    let members = (0..members as u64)
        .map(|m| {
            let mut rng = seed::rng_for(seed, m);
            let mut reference = index::sample(&mut rng, n, size).into_vec();
            reference.sort_unstable();
            KnnMember {
                reference,
                k: k_star.min(size),
            }
        })
        .collect();
    Ok(KnnCommittee {
        x: train.features(),
        y: train.labels(),
        members,
        k_star,
    })
}
