//! CSV extracts and the versioned JSON model envelope.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::committee::TrainedLearner;
use crate::dataset::{Dataset, Sector};
use crate::error::{Error, Result};
use crate::knn::KSelection;
use crate::modelsel::GridResult;
use crate::pipeline::ForwardEntry;
use crate::relief::ReliefWeights;
use crate::rvm::RvmModel;
use crate::svm::SvmModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes records in the ingestion layout with a `label` column.
pub fn write_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["stock_id".to_string(), "gics_sector".into(), "year".into(), "quarter".into()];
    header.extend(data.schema.iter().cloned());
    header.push("label".into());
    w.write_record(&header)?;
    for r in &data.records {
        let sector = match r.sector {
            Sector::Aggregated => "aggregated".to_string(),
            s => s.code().to_string(),
        };
        let mut row = vec![r.stock_id.clone(), sector, r.quarter.year.to_string(), r.quarter.index.to_string()];
        row.extend(r.features.iter().map(f64::to_string));
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_relief_csv(weights: &ReliefWeights, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["feature", "raw_weight", "normalized_weight"])?;
    for ((name, raw), norm) in weights.schema.iter().zip(&weights.raw).zip(&weights.normalized) {
        w.write_record([name.clone(), raw.to_string(), norm.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oob_csv(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["trees", "oob_error"])?;
    for (t, e) in curve.iter().enumerate() {
        w.write_record([(t + 1).to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_k_curve_csv(selection: &KSelection, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["k", "cv_error"])?;
    for (k, e) in &selection.curve {
        w.write_record([k.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_csv(grid: &GridResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["gamma", "mean_cv_error", "chosen"])?;
    for c in &grid.candidates {
        let err = c.mean_cv_error.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([c.gamma.to_string(), err, (c.gamma == grid.chosen).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per quarter; an absent quarter leaves `error` blank.
pub fn write_forward_csv(series: &[ForwardEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["year", "quarter", "error", "records"])?;
    for e in series {
        w.write_record([
            e.quarter.year.to_string(),
            e.quarter.index.to_string(),
            e.error.map(|v| v.to_string()).unwrap_or_default(),
            e.records.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Svm { model: SvmModel },
    Rvm { threshold: f64, model: RvmModel },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: ModelBody,
}

impl ModelEnvelope {
    pub fn wrap(learner: &TrainedLearner) -> Result<ModelEnvelope> {
        let body = match learner {
            TrainedLearner::Svm(m) => ModelBody::Svm { model: m.clone() },
            TrainedLearner::Rvm(m) => ModelBody::Rvm {
                threshold: m.threshold,
                model: m.clone(),
            },
            other => return Err(Error::UnsupportedModel(other.kind().name().into())),
        };
        Ok(ModelEnvelope {
            format_version: MODEL_FORMAT_VERSION,
            body,
        })
    }

    pub fn unwrap_learner(self) -> TrainedLearner {
        match self.body {
            ModelBody::Svm { model } => TrainedLearner::Svm(model),
            ModelBody::Rvm { threshold, mut model } => {
                model.threshold = threshold;
                TrainedLearner::Rvm(model)
            }
        }
    }
}

pub fn model_to_json(learner: &TrainedLearner) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelEnvelope::wrap(learner)?)?)
}

pub fn model_from_json(text: &str) -> Result<TrainedLearner> {
    let env: ModelEnvelope = serde_json::from_str(text)?;
    if env.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedModel(format!("format version {}", env.format_version)));
    }
    Ok(env.unwrap_learner())
}
