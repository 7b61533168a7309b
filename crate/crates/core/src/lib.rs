//! Ensemble committee for binary stock-return classification.
//!
//! Four constituent learners (a Gini random forest, an RBF soft-margin SVM,
//! a relevance vector machine and a bagged k-NN committee) are trained per
//! GICS sector on Relief-F selected features and combined by a weighted sign
//! vote whose weights are the log-odds of each learner's training accuracy.
//!
//! The [`pipeline`] module drives whole runs (per-sector or aggregated) and
//! frozen-model forward backtests; [`synth`] produces planted datasets in the
//! same CSV layout as real quarterly data.

pub mod committee;
pub mod dataset;
pub mod error;
pub mod export;
pub mod forest;
pub mod knn;
pub mod modelsel;
pub mod pipeline;
pub mod relief;
pub mod rvm;
pub mod seed;
pub mod svm;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use committee::{Classifier, CommitteeModel, TrainedLearner};
pub use dataset::{Dataset, Label, Quarter, Sector, StockRecord};
pub use error::{Error, Result};
