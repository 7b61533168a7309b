//! Weighted sign vote over the four constituent learners.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::knn::KnnCommittee;
use crate::rvm::RvmModel;
use crate::svm::SvmModel;

/// Largest boosting weight magnitude, `log(1e6)`.
pub fn alpha_max() -> f64 {
    1e6f64.ln()
}

/// Anything that maps a feature vector to a hard ±1 decision.
pub trait Classifier: Send + Sync {
    fn decide(&self, x: &[f64]) -> Result<Label>;
}

impl Classifier for ForestModel {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        ForestModel::decide(self, x)
    }
}

impl Classifier for SvmModel {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        SvmModel::decide(self, x)
    }
}

impl Classifier for RvmModel {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        RvmModel::decide(self, x)
    }
}

impl Classifier for KnnCommittee {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        KnnCommittee::decide(self, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Forest,
    Svm,
    Rvm,
    Knn,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [LearnerKind::Forest, LearnerKind::Svm, LearnerKind::Rvm, LearnerKind::Knn];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Forest => "forest",
            LearnerKind::Svm => "svm",
            LearnerKind::Rvm => "rvm",
            LearnerKind::Knn => "knn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum TrainedLearner {
    Forest(ForestModel),
    Svm(SvmModel),
    Rvm(RvmModel),
    Knn(KnnCommittee),
}

impl TrainedLearner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            TrainedLearner::Forest(_) => LearnerKind::Forest,
            TrainedLearner::Svm(_) => LearnerKind::Svm,
            TrainedLearner::Rvm(_) => LearnerKind::Rvm,
            TrainedLearner::Knn(_) => LearnerKind::Knn,
        }
    }
}

impl Classifier for TrainedLearner {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        match self {
            TrainedLearner::Forest(m) => m.decide(x),
            TrainedLearner::Svm(m) => m.decide(x),
            TrainedLearner::Rvm(m) => m.decide(x),
            TrainedLearner::Knn(m) => m.decide(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeModel {
    pub learners: Vec<TrainedLearner>,
    pub alphas: Vec<f64>,
    pub training_errors: Vec<f64>,
}

/// `log((1 - eps) / eps)` clamped to `±alpha_max()`.
pub fn alpha_from_error(eps: f64) -> f64 {
    let cap = alpha_max();
    if eps <= 0.0 {
        cap
    } else if eps >= 1.0 {
        -cap
    } else {
        ((1.0 - eps) / eps).ln().clamp(-cap, cap)
    }
}

/// `1 - correct / total`.
pub fn error_rate(predictions: &[Label], truth: &[Label]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty);
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(1.0 - correct as f64 / truth.len() as f64)
}

pub fn predict_all<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> Result<Vec<Label>> {
    data.records.iter().map(|r| model.decide(&r.features)).collect()
}

/// Weighted sign of `votes`; a non-positive sum gives `Negative`.
pub fn weighted_vote(alphas: &[f64], votes: &[Label]) -> Label {
    let sum: f64 = alphas.iter().zip(votes).map(|(a, v)| a * v.sign()).sum();
    if sum > 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Scores every learner on `train` and derives its weight from the training
/// error under unit example weights.
pub fn fit_committee(models: Vec<TrainedLearner>, train: &Dataset) -> Result<CommitteeModel> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let truth = train.labels();
    let training_errors = models
        .iter()
        .map(|m| error_rate(&predict_all(m, train)?, &truth))
        .collect::<Result<Vec<_>>>()?;
    let alphas = training_errors.iter().map(|&e| alpha_from_error(e)).collect();
    Ok(CommitteeModel {
        learners: models,
        alphas,
        training_errors,
    })
}

impl CommitteeModel {
    pub fn votes(&self, x: &[f64]) -> Result<Vec<Label>> {
        self.learners.iter().map(|l| l.decide(x)).collect()
    }

    /// `sum(alpha_i * y_i) / sum(|alpha_i|)`, or 0 when every weight is 0.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        let votes = self.votes(x)?;
        let total: f64 = self.alphas.iter().map(|a| a.abs()).sum();
        if total == 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = self.alphas.iter().zip(&votes).map(|(a, v)| a * v.sign()).sum();
        Ok(sum / total)
    }

    pub fn rvm(&self) -> Option<&RvmModel> {
        self.learners.iter().find_map(|l| match l {
            TrainedLearner::Rvm(m) => Some(m),
            _ => None,
        })
    }
}

impl Classifier for CommitteeModel {
    fn decide(&self, x: &[f64]) -> Result<Label> {
        Ok(weighted_vote(&self.alphas, &self.votes(x)?))
    }
}

pub fn committee_decide(model: &CommitteeModel, x: &[f64]) -> Result<Label> {
    model.decide(x)
}
