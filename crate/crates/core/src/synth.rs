//! Synthetic quarterly cross-sections with planted informative features.
//!
//! Each record draws a latent score `u ~ N(0, 1)`; the teacher label is the
//! sign of `u`. A sector's informative columns carry `u + noise * e`, the
//! remaining columns carry pure noise, and every column is then mapped to
//! its own location and scale. Each teacher label is flipped independently
//! with probability `label_noise`, and from the optional shift quarter
//! onward the teacher is inverted.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_schema, Dataset, Label, Quarter, Sector, StockRecord, FEATURE_SCHEMA};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sectors: usize,
    pub records_per_sector: usize,
    pub informative: usize,
    pub noise: f64,
    pub label_noise: f64,
    pub start: Quarter,
    pub end: Quarter,
    pub shift: Option<Quarter>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sectors: 4,
            records_per_sector: 300,
            informative: 5,
            noise: 1.0,
            label_noise: 0.0,
            start: Quarter { year: 2009, index: 1 },
            end: Quarter { year: 2009, index: 1 },
            shift: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.sectors == 0 || self.sectors > Sector::GICS.len() {
            return bad(format!("sector count must lie in 1..={}", Sector::GICS.len()));
        }
        if self.records_per_sector == 0 {
            return bad("records per sector must be positive".into());
        }
        if self.informative == 0 || self.informative > FEATURE_SCHEMA.len() {
            return bad(format!("informative count must lie in 1..={}", FEATURE_SCHEMA.len()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return bad(format!("label noise must lie in [0, 0.5], got {}", self.label_noise));
        }
        if self.end < self.start {
            return bad(format!("quarter range {}..{} is empty", self.start, self.end));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Planted column indices per sector, ascending.
    pub informative: BTreeMap<Sector, Vec<usize>>,
}

fn column_location(j: usize) -> f64 {
    100.0 * (j + 1) as f64
}

fn column_scale(j: usize) -> f64 {
    10f64.powi((j % 4) as i32)
}

/// Inverse of the per-column location/scale map.
pub fn unscale(j: usize, value: f64) -> f64 {
    (value - column_location(j)) / column_scale(j)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = FEATURE_SCHEMA.len();
    let quarters = spec.start.through(spec.end);
    let mut records = Vec::with_capacity(spec.sectors * spec.records_per_sector);
    let mut informative = BTreeMap::new();
    for &sector in &Sector::GICS[..spec.sectors] {
        let mut rng = seed::rng_for(spec.seed, u64::from(sector.code()));
        let mut planted = index::sample(&mut rng, d, spec.informative).into_vec();
        planted.sort_unstable();
        let mut is_planted = vec![false; d];
        planted.iter().for_each(|&j| is_planted[j] = true);
        for i in 0..spec.records_per_sector {
            let quarter = quarters[i % quarters.len()];
            let u: f64 = rng.sample(StandardNormal);
            let features = (0..d)
                .map(|j| {
                    let e: f64 = rng.sample(StandardNormal);
                    let z = if is_planted[j] { u + spec.noise * e } else { e };
                    column_location(j) + column_scale(j) * z
                })
                .collect();
            let mut teacher = if u > 0.0 { Label::Positive } else { Label::Negative };
            if rng.random::<f64>() < spec.label_noise {
                teacher = teacher.flipped();
            }
            let shifted = spec.shift.is_some_and(|s| quarter >= s);
            records.push(StockRecord {
                stock_id: format!("S{}-{i:05}", sector.code()),
                sector,
                quarter,
                features,
                label: if shifted { teacher.flipped() } else { teacher },
            });
        }
        informative.insert(sector, planted);
    }
    Ok(SyntheticData {
        dataset: Dataset::new(default_schema(), records)?,
        informative,
    })
}
