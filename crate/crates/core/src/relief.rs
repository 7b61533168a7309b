//! Relief-F feature weighting for binary labels.
//!
//! For each sampled instance the `k` nearest hits (same class) and `k`
//! nearest misses (other class) are found under the range-normalized
//! Manhattan distance, and every feature is credited by how much more it
//! differs on the misses than on the hits. Raw weights live in `[-1, 1]`.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_NEIGHBORS: usize = 10;
pub const MAX_DEFAULT_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliefWeights {
    pub schema: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// How many features survive selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    TopM(usize),
    Threshold(f64),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::TopM(10)
    }
}

pub fn default_iterations(n: usize) -> usize {
    n.min(MAX_DEFAULT_ITERATIONS)
}

/// Runs Relief-F with `iterations` instances drawn uniformly (with
/// replacement) from a seeded stream.
pub fn relieff(data: &Dataset, k_neighbors: usize, iterations: usize, seed: u64) -> Result<ReliefWeights> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be positive".into()));
    }
    check_classes(data)?;
    let mut rng = seed::rng(seed);
    let samples: Vec<usize> = (0..iterations).map(|_| rng.random_range(0..data.len())).collect();
    relieff_with_samples(data, k_neighbors, &samples)
}

fn check_classes(data: &Dataset) -> Result<()> {
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::InsufficientClassData(format!(
            "Relief-F needs both classes ({neg} negative, {pos} positive)"
        )));
    }
    Ok(())
}

/// Relief-F over an explicit sequence of sampled record indices.
///
/// When a class offers fewer than `k_neighbors` candidates all of them are
/// used; an empty hit set contributes nothing.
pub fn relieff_with_samples(data: &Dataset, k_neighbors: usize, samples: &[usize]) -> Result<ReliefWeights> {
    if k_neighbors == 0 {
        return Err(Error::InvalidParameter("k_neighbors must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no sampled instances".into()));
    }
    check_classes(data)?;
    let d = data.dim();
    let x: Vec<&[f64]> = data.records.iter().map(|r| r.features.as_slice()).collect();
    let y: Vec<Label> = data.labels();

    let mut inv_range = vec![0.0; d];
    for (j, inv) in inv_range.iter_mut().enumerate() {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[j]), hi.max(r[j]))
        });
        if hi > lo {
            *inv = 1.0 / (hi - lo);
        }
    }
    let diff = |a: &[f64], b: &[f64], j: usize| (a[j] - b[j]).abs() * inv_range[j];

    let mut weights = vec![0.0; d];
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for &i in samples {
        let xi = x[i];
        dist.clear();
        dist.extend(
            x.iter()
                .enumerate()
                .filter(|&(r, _)| r != i)
                .map(|(r, xr)| ((0..d).map(|j| diff(xi, xr, j)).sum::<f64>(), r)),
        );
        dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

        let hits: Vec<usize> = dist
            .iter()
            .filter(|(_, r)| y[*r] == y[i])
            .take(k_neighbors)
            .map(|&(_, r)| r)
            .collect();
        let misses: Vec<usize> = dist
            .iter()
            .filter(|(_, r)| y[*r] != y[i])
            .take(k_neighbors)
            .map(|&(_, r)| r)
            .collect();

        for (j, w) in weights.iter_mut().enumerate() {
            let mean_over = |set: &[usize]| {
                if set.is_empty() {
                    0.0
                } else {
                    set.iter().map(|&r| diff(xi, x[r], j)).sum::<f64>() / set.len() as f64
                }
            };
            *w += mean_over(&misses) - mean_over(&hits);
        }
    }
    let m = samples.len() as f64;
    let raw: Vec<f64> = weights.into_iter().map(|w| w / m).collect();
    Ok(ReliefWeights {
        schema: data.schema.clone(),
        normalized: normalize_raw(&raw),
        raw,
    })
}

fn normalize_raw(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|w| (w - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; raw.len()]
    }
}

/// Recomputes the `[0,1]` min-max scaling of the raw weights.
pub fn normalize(weights: &ReliefWeights) -> ReliefWeights {
    ReliefWeights {
        normalized: normalize_raw(&weights.raw),
        ..weights.clone()
    }
}

/// Indices of retained features in ascending order. Never empty.
pub fn select_features(weights: &ReliefWeights, policy: SelectionPolicy) -> Vec<usize> {
    let w = &weights.normalized;
    // Descending weight, ascending index.
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = match policy {
        SelectionPolicy::TopM(m) => order.iter().copied().take(m.clamp(1, w.len())).collect(),
        SelectionPolicy::Threshold(t) => (0..w.len()).filter(|&j| w[j] >= t).collect(),
    };
    if chosen.is_empty() {
        chosen.extend(order.first());
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn weights(normalized: Vec<f64>) -> ReliefWeights {
        ReliefWeights {
            schema: (0..normalized.len()).map(|j| format!("f{j}")).collect(),
            raw: normalized.clone(),
            normalized,
        }
    }

    /// Relief-F with a literal transcription of the update: every candidate
    /// neighbor is ranked by a full sort, hits and misses collected in one
    /// pass, differences recomputed from scratch.
    fn brute_relief(x: &[Vec<f64>], y: &[Label], k: usize, samples: &[usize]) -> Vec<f64> {
        let d = x[0].len();
        let range: Vec<f64> = (0..d)
            .map(|j| {
                let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
                col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min)
            })
            .collect();
        let diff = |a: &[f64], b: &[f64], j: usize| {
            if range[j] == 0.0 {
                0.0
            } else {
                (a[j] - b[j]).abs() / range[j]
            }
        };
        let mut w = vec![0.0; d];
        for &i in samples {
            let mut all: Vec<(f64, usize)> = (0..x.len())
                .filter(|&r| r != i)
                .map(|r| ((0..d).map(|j| diff(&x[i], &x[r], j)).sum(), r))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut hits = vec![];
            let mut misses = vec![];
            for (_, r) in all {
                if y[r] == y[i] && hits.len() < k {
                    hits.push(r);
                } else if y[r] != y[i] && misses.len() < k {
                    misses.push(r);
                }
            }
            for (j, wj) in w.iter_mut().enumerate() {
                let h: f64 = if hits.is_empty() {
                    0.0
                } else {
                    hits.iter().map(|&r| diff(&x[i], &x[r], j)).sum::<f64>() / hits.len() as f64
                };
                let m: f64 = misses.iter().map(|&r| diff(&x[i], &x[r], j)).sum::<f64>() / misses.len() as f64;
                *wj += (m - h) / samples.len() as f64;
            }
        }
        w
    }

    fn planted(n: usize, noise_features: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let mut row = vec![label.sign() + 0.1 * noise.sample(&mut rng)];
            row.extend((0..noise_features).map(|_| noise.sample(&mut rng)));
            x.push(row);
            y.push(label);
        }
        Dataset::from_xy(x, y).unwrap()
    }

    #[test]
    fn planted_feature_dominates_and_matches_oracle() {
        let data = planted(200, 4, 3);
        let w = relieff(&data, 10, 200, 11).unwrap();
        let best = w.raw[0];
        assert!(w.raw[1..].iter().all(|&v| v < best), "{:?}", w.raw);

        let mut rng = seed::rng(11);
        let samples: Vec<usize> = (0..200).map(|_| rng.random_range(0..200)).collect();
        let oracle = brute_relief(&data.features(), &data.labels(), 10, &samples);
        for (a, b) in w.raw.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_records_give_zero_weights() {
        let x = vec![vec![1.0, 2.0, 3.0]; 6];
        let y = vec![Label::Positive, Label::Negative, Label::Positive, Label::Negative, Label::Positive, Label::Negative];
        let w = relieff(&Dataset::from_xy(x, y).unwrap(), 2, 6, 0).unwrap();
        assert!(w.raw.iter().all(|&v| v == 0.0));
        assert!(w.normalized.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_records_one_per_class() {
        let data = Dataset::from_xy(vec![vec![0.0], vec![1.0]], vec![Label::Negative, Label::Positive]).unwrap();
        let w = relieff_with_samples(&data, 1, &[0, 1]).unwrap();
        assert_eq!(w.raw, vec![1.0]);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = Dataset::from_xy(vec![vec![0.0], vec![1.0]], vec![Label::Positive; 2]).unwrap();
        assert!(matches!(relieff(&data, 1, 2, 0), Err(Error::InsufficientClassData(_))));
    }

    #[test]
    fn normalization_examples() {
        let n = |raw: Vec<f64>| normalize(&weights(raw)).normalized;
        assert_eq!(n(vec![-1.0, 0.0, 1.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(n(vec![0.3, 0.3, 0.3]), vec![0.5, 0.5, 0.5]);
        assert_eq!(n(vec![0.2, 0.6]), vec![0.0, 1.0]);
    }

    #[test]
    fn selection_examples() {
        let w = weights(vec![0.9, 0.1, 0.5]);
        assert_eq!(select_features(&w, SelectionPolicy::TopM(2)), vec![0, 2]);
        assert_eq!(select_features(&w, SelectionPolicy::Threshold(0.95)), vec![0]);
        assert_eq!(select_features(&w, SelectionPolicy::Threshold(0.5)), vec![0, 2]);
        assert_eq!(select_features(&w, SelectionPolicy::TopM(3)), vec![0, 1, 2]);
        let tied = weights(vec![0.4, 0.7, 0.7, 0.7]);
        assert_eq!(select_features(&tied, SelectionPolicy::TopM(2)), vec![1, 2]);
    }

    #[test]
    fn permuting_records_with_replayed_samples() {
        let data = planted(60, 3, 5);
        let mut rng = seed::rng(99);
        let samples: Vec<usize> = (0..60).map(|_| rng.random_range(0..60)).collect();
        let base = relieff_with_samples(&data, 5, &samples).unwrap();

        // reverse the record order; sample i maps to n-1-i
        let perm: Vec<usize> = (0..60).rev().collect();
        let permuted = data.subset(&perm);
        let replayed: Vec<usize> = samples.iter().map(|&s| 59 - s).collect();
        let again = relieff_with_samples(&permuted, 5, &replayed).unwrap();
        for (a, b) in base.raw.iter().zip(&again.raw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_a_column_leaves_its_weight() {
        let data = planted(80, 3, 8);
        let base = relieff(&data, 5, 80, 1).unwrap();
        let mut scaled = data.clone();
        scaled.records.iter_mut().for_each(|r| r.features[2] *= 10.0);
        let again = relieff(&scaled, 5, 80, 1).unwrap();
        assert!((base.raw[2] - again.raw[2]).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn raw_weights_bounded(
                rows in proptest::collection::vec(proptest::collection::vec(-50f64..50.0, 4), 4..40),
                flips in proptest::collection::vec(any::<bool>(), 40),
                k in 1usize..6,
                seed in any::<u64>(),
            ) {
                let n = rows.len();
                let mut y: Vec<Label> = flips[..n].iter().map(|&b| if b { Label::Positive } else { Label::Negative }).collect();
                y[0] = Label::Positive;
                y[1] = Label::Negative;
                let data = Dataset::from_xy(rows, y).unwrap();
                let w = relieff(&data, k, n, seed).unwrap();
                prop_assert!(w.raw.iter().all(|v| (-1.0..=1.0).contains(v)));
                prop_assert!(w.normalized.iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn top_all_is_identity(ws in proptest::collection::vec(0f64..1.0, 1..20)) {
                let d = ws.len();
                prop_assert_eq!(select_features(&weights(ws), SelectionPolicy::TopM(d)), (0..d).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn label_copy_beats_noise_over_seeds() {
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut wins = 0;
        for s in 0..100u64 {
            let mut rng = seed::rng(1000 + s);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for _ in 0..60 {
                let label = if rng.random::<bool>() { Label::Positive } else { Label::Negative };
                let mut row = vec![label.sign()];
                row.extend((0..5).map(|_| noise.sample(&mut rng)));
                x.push(row);
                y.push(label);
            }
            y[0] = Label::Positive;
            x[0][0] = 1.0;
            y[1] = Label::Negative;
            x[1][0] = -1.0;
            let w = relieff(&Dataset::from_xy(x, y).unwrap(), 10, 60, s).unwrap();
            if w.raw[1..].iter().all(|&v| w.raw[0] > v) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "label copy won {wins}/100");
    }
}
