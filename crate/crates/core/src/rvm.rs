//! Relevance vector machine for binary classification.
//!
//! The model is `P(y = +1 | x) = sigmoid(sum_i w_i k(x, x_i) + b)` with an
//! independent zero-mean Gaussian prior of precision `alpha_i` on every
//! kernel weight. Training alternates a Laplace approximation of the weight
//! posterior (Newton/IRLS on the penalized log-likelihood) with the
//! evidence re-estimate `alpha_i <- gamma_i / w_i^2`,
//! `gamma_i = 1 - alpha_i * Sigma_ii`. Bases whose precision passes the
//! pruning cap are removed. The bias carries a fixed weak prior and is
//! never pruned.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::svm::KernelParams;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_PRUNE_CAP: f64 = 1e12;

const ALPHA_FLOOR: f64 = 1e-10;
const ALPHA_CEILING: f64 = 1e200;
const LOGIT_CLIP: f64 = 700.0;
const MAX_DAMPING: usize = 12;
const EVIDENCE_SLACK: f64 = 1e-10;

/// Logistic sigmoid, evaluated without overflow for either sign.
pub fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// `+1` iff `p > threshold`.
pub fn decide_probability(p: f64, threshold: f64) -> Label {
    if p > threshold {
        Label::Positive
    } else {
        Label::Negative
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvmConfig {
    pub threshold: f64,
    pub prune_cap: f64,
    /// Convergence when `max |delta log alpha|` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_newton_steps: usize,
    pub initial_alpha: f64,
    pub bias_precision: f64,
    pub jitter: f64,
}

impl Default for RvmConfig {
    fn default() -> Self {
        RvmConfig {
            threshold: DEFAULT_THRESHOLD,
            prune_cap: DEFAULT_PRUNE_CAP,
            tolerance: 1e-3,
            max_iterations: 1000,
            max_newton_steps: 50,
            initial_alpha: 1.0,
            bias_precision: 1e-6,
            jitter: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub x: Vec<f64>,
    pub weight: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvmModel {
    pub relevance_vectors: Vec<RelevanceVector>,
    pub bias: f64,
    pub kernel: KernelParams,
    pub threshold: f64,
    pub dim: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl RvmModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.bias
            + self
                .relevance_vectors
                .iter()
                .map(|rv| rv.weight * self.kernel.eval(x, &rv.x))
                .sum::<f64>())
    }

    /// Probability of the positive class, kept strictly inside (0, 1).
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        let p = sigmoid(self.score(x)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    /// Decision at the model's own threshold.
    pub fn decide(&self, x: &[f64]) -> Result<Label> {
        rvm_predict(self, x, self.threshold)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<RvmModel> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(self)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "threshold must lie in (0,1), got {threshold}"
        )))
    }
}

pub fn rvm_probability(model: &RvmModel, x: &[f64]) -> Result<f64> {
    model.probability(x)
}

pub fn rvm_predict(model: &RvmModel, x: &[f64], threshold: f64) -> Result<Label> {
    check_threshold(threshold)?;
    Ok(decide_probability(model.probability(x)?, threshold))
}

/// Fitted model plus the per-iteration Laplace log-evidence.
#[derive(Clone, Debug)]
pub struct RvmFit {
    pub model: RvmModel,
    pub log_evidence: Vec<f64>,
}

pub fn train_rvm(train: &Dataset, gamma: f64) -> Result<RvmModel> {
    train_rvm_with(train, gamma, &RvmConfig::default()).map(|fit| fit.model)
}

struct Mode {
    w: DVector<f64>,
    /// Cholesky factor of the Hessian at the mode.
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_joint: f64,
    log_det_h: f64,
}

impl Mode {
    /// Laplace approximation of the log marginal likelihood, up to a constant.
    fn log_evidence(&self, alpha: &[f64]) -> f64 {
        self.log_joint - 0.5 * self.log_det_h + 0.5 * alpha.iter().map(|a| a.ln()).sum::<f64>()
    }

    /// Diagonal of the posterior covariance `H^-1`.
    fn sigma_diagonal(&self) -> Vec<f64> {
        let l = self.chol.l();
        let m = l.nrows();
        let inv = l
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .unwrap_or_else(|| DMatrix::from_element(m, m, f64::NAN));
        inv.column_iter().map(|c| c.norm_squared()).collect()
    }
}

fn penalized(phi: &DMatrix<f64>, t: &DVector<f64>, w: &DVector<f64>, alpha: &[f64]) -> f64 {
    let a = phi * w;
    let mut ll = 0.0;
    for (ai, ti) in a.iter().zip(t.iter()) {
        let z = ai.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        // log sigma(z) = -log(1 + e^-z)
        let log_p = -softplus(-z);
        let log_q = -softplus(z);
        ll += ti * log_p + (1.0 - ti) * log_q;
    }
    ll - 0.5 * w.iter().zip(alpha).map(|(wi, ai)| ai * wi * wi).sum::<f64>()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn factor(h: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let mut ridge = jitter;
    for _ in 0..8 {
        let mut hj = h.clone();
        for i in 0..hj.nrows() {
            hj[(i, i)] += ridge * hj[(i, i)].abs().max(1.0);
        }
        if let Some(ch) = Cholesky::new(hj) {
            return Ok(ch);
        }
        ridge *= 100.0;
    }
    Err(Error::NumericalFailure(
        "posterior Hessian is not positive definite after jitter escalation".into(),
    ))
}

fn hessian(phi: &DMatrix<f64>, w: &DVector<f64>, alpha: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let a = phi * w;
    let p = a.map(|z| sigmoid(z.clamp(-LOGIT_CLIP, LOGIT_CLIP)));
    let b = p.map(|pi| pi * (1.0 - pi));
    let mut weighted = phi.clone();
    for (mut row, bi) in weighted.row_iter_mut().zip(b.iter()) {
        row *= *bi;
    }
    let mut h = phi.transpose() * weighted;
    for (i, ai) in alpha.iter().enumerate() {
        h[(i, i)] += ai;
    }
    (h, p)
}

/// Newton ascent on the penalized log-likelihood, warm-started at `w`.
fn find_mode(phi: &DMatrix<f64>, t: &DVector<f64>, mut w: DVector<f64>, alpha: &[f64], cfg: &RvmConfig) -> Result<Mode> {
    let mut current = penalized(phi, t, &w, alpha);
    for _ in 0..cfg.max_newton_steps {
        let (h, p) = hessian(phi, &w, alpha);
        let mut g = phi.tr_mul(&(t - &p));
        for (i, ai) in alpha.iter().enumerate() {
            g[i] -= ai * w[i];
        }
        let step = factor(&h, cfg.jitter)?.solve(&g);
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite Newton step".into()));
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &w + &step * scale;
            let value = penalized(phi, t, &candidate, alpha);
            if value >= current - 1e-12 * current.abs().max(1.0) {
                w = candidate;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let moved = step.amax() * scale;
        if !accepted || moved < 1e-9 {
            break;
        }
    }
    let (h, _) = hessian(phi, &w, alpha);
    let chol = factor(&h, cfg.jitter)?;
    let log_det_h = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Mode {
        w,
        chol,
        log_joint: current,
        log_det_h,
    })
}

/// Type-II maximum likelihood fit. Fails with `NumericalFailure` when the
/// posterior cannot be factorized.
pub fn train_rvm_with(train: &Dataset, gamma: f64, config: &RvmConfig) -> Result<RvmFit> {
    let kernel = KernelParams::new(gamma)?;
    check_threshold(config.threshold)?;
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClassTraining);
    }
    let x = train.features();
    let n = x.len();
    let t = DVector::from_iterator(
        n,
        train.labels().iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }),
    );
    let full = {
        let mut m = DMatrix::zeros(n, n + 1);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = kernel.eval(&x[r], &x[c]);
            }
            m[(r, n)] = 1.0;
        }
        m
    };

    // Column `n` is the bias and always stays last in `active`.
    let mut active: Vec<usize> = (0..=n).collect();
    let mut alpha: Vec<f64> = (0..n)
        .map(|_| config.initial_alpha)
        .chain([config.bias_precision])
        .collect();
    let mut mode = find_mode(&full, &t, DVector::zeros(n + 1), &alpha, config)?;
    let mut evidence = mode.log_evidence(&alpha);
    let mut log_evidence = vec![evidence];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        if !mode.w.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite weights".into()));
        }
        let m = active.len();
        // Proposed log-precision moves; `None` marks a basis to prune.
        let mut moves: Vec<Option<f64>> = Vec::with_capacity(m - 1);
        let mut max_change = 0.0f64;
        let sigma = mode.sigma_diagonal();
        for k in 0..m - 1 {
            let wk = mode.w[k];
            let g = (1.0 - alpha[k] * sigma[k]).max(0.0);
            let updated = if wk * wk > 0.0 {
                (g / (wk * wk)).clamp(ALPHA_FLOOR, ALPHA_CEILING)
            } else {
                ALPHA_CEILING
            };
            if updated > config.prune_cap {
                moves.push(None);
                max_change = f64::INFINITY;
                continue;
            }
            let delta = updated.ln() - alpha[k].ln();
            if alpha[k] < DEFAULT_PRUNE_CAP || updated < DEFAULT_PRUNE_CAP {
                max_change = max_change.max(delta.abs());
            }
            moves.push(Some(delta));
        }
        if max_change < config.tolerance {
            converged = true;
            break;
        }

        // Damp the move until the evidence does not fall.
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..MAX_DAMPING {
            let keep: Vec<usize> = (0..m).filter(|&k| k == m - 1 || moves[k].is_some()).collect();
            let next_alpha: Vec<f64> = keep
                .iter()
                .map(|&k| match moves.get(k) {
                    Some(Some(d)) => (alpha[k].ln() + step * d).exp().clamp(ALPHA_FLOOR, ALPHA_CEILING),
                    _ => alpha[k],
                })
                .collect();
            let next_active: Vec<usize> = keep.iter().map(|&k| active[k]).collect();
            let warm = DVector::from_iterator(keep.len(), keep.iter().map(|&k| mode.w[k]));
            let phi = full.select_columns(&next_active);
            let next = find_mode(&phi, &t, warm, &next_alpha, config)?;
            let next_evidence = next.log_evidence(&next_alpha);
            if next_evidence >= evidence - EVIDENCE_SLACK * evidence.abs().max(1.0) {
                accepted = Some((next_active, next_alpha, next, next_evidence));
                break;
            }
            step *= 0.5;
        }
        let Some((next_active, next_alpha, next, next_evidence)) = accepted else {
            // No damped move improves the evidence: a stationary point.
            converged = true;
            break;
        };
        active = next_active;
        alpha = next_alpha;
        mode = next;
        evidence = next_evidence;
        log_evidence.push(evidence);
        // The applied change is the damped one.
        if step * max_change < config.tolerance {
            converged = true;
            break;
        }
    }

    let m = active.len();
    let relevance_vectors = (0..m - 1)
        .map(|k| RelevanceVector {
            x: x[active[k]].clone(),
            weight: mode.w[k],
            precision: alpha[k],
        })
        .collect();
    if !converged {
        log::warn!("RVM stopped after {iterations} iterations without converging");
    }
    Ok(RvmFit {
        model: RvmModel {
            relevance_vectors,
            bias: mode.w[m - 1],
            kernel,
            threshold: config.threshold,
            dim: train.dim(),
            converged,
            iterations,
        },
        log_evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussians;
    use approx::assert_abs_diff_eq;

    fn empty_model(bias: f64) -> RvmModel {
        RvmModel {
            relevance_vectors: vec![],
            bias,
            kernel: KernelParams { gamma: 1.0 },
            threshold: 0.8,
            dim: 2,
            converged: true,
            iterations: 0,
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_abs_diff_eq!(sigmoid(4f64.ln()), 0.8, epsilon = 1e-15);
        for th in [0.1, 1.0, 10.0] {
            assert_abs_diff_eq!(sigmoid(th) + sigmoid(-th), 1.0, epsilon = 1e-15);
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn probability_of_empty_model() {
        assert_eq!(empty_model(0.0).probability(&[1.0, 2.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(empty_model(4f64.ln()).probability(&[0.0, 0.0]).unwrap(), 0.8, epsilon = 1e-15);
        let mut last = 0.0;
        for b in -20..=20 {
            let p = empty_model(b as f64 * 0.5).probability(&[0.0, 0.0]).unwrap();
            assert!(p > last);
            last = p;
        }
        let huge = empty_model(1e4).probability(&[0.0, 0.0]).unwrap();
        assert!(huge > 0.0 && huge < 1.0);
        assert!(empty_model(0.0).probability(&[0.0]).is_err());
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(decide_probability(0.81, 0.8), Label::Positive);
        assert_eq!(decide_probability(0.80, 0.8), Label::Negative);
        assert_eq!(decide_probability(0.6, 0.5), Label::Positive);
        assert!(rvm_predict(&empty_model(0.0), &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn sparse_on_separable_data() {
        let train = gaussians(200, 4.0, 2, 21);
        let test = gaussians(1000, 4.0, 2, 22);
        let model = train_rvm(&train, 0.5).unwrap();
        assert!(model.relevance_vectors.len() <= 50, "{} relevance vectors", model.relevance_vectors.len());
        let wrong = test
            .records
            .iter()
            .filter(|r| rvm_predict(&model, &r.features, 0.5).unwrap() != r.label)
            .count();
        assert!(wrong as f64 / 1000.0 <= 0.10, "test error {}", wrong as f64 / 1000.0);
    }

    #[test]
    fn xor_never_crashes() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![Label::Positive, Label::Positive, Label::Negative, Label::Negative];
        let data = Dataset::from_xy(x, y).unwrap();
        match train_rvm(&data, 1.0) {
            Ok(model) => {
                for r in &data.records {
                    let p = model.probability(&r.features).unwrap();
                    assert!((p - 0.5).abs() < 0.2, "p = {p}");
                }
            }
            Err(Error::NumericalFailure(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn deterministic() {
        let train = gaussians(80, 2.0, 3, 5);
        let a = train_rvm(&train, 1.0).unwrap();
        let b = train_rvm(&train, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lower_threshold_never_loses_positives() {
        let train = gaussians(100, 2.0, 2, 8);
        let model = train_rvm(&train, 1.0).unwrap();
        let probe = gaussians(300, 0.0, 2, 9);
        for r in &probe.records {
            for (lo, hi) in [(0.3, 0.5), (0.5, 0.8), (0.8, 0.95)] {
                if rvm_predict(&model, &r.features, hi).unwrap().is_positive() {
                    assert!(rvm_predict(&model, &r.features, lo).unwrap().is_positive());
                }
            }
        }
    }

    #[test]
    fn evidence_does_not_decrease() {
        for s in 0..5 {
            let train = gaussians(30, 2.0, 2, 300 + s);
            let fit = train_rvm_with(&train, 1.0, &RvmConfig::default()).unwrap();
            for w in fit.log_evidence.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "evidence fell {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn pruning_does_not_change_predictions() {
        let train = gaussians(20, 2.0, 2, 41);
        let pruned = train_rvm(&train, 1.0).unwrap();
        let unpruned = train_rvm_with(
            &train,
            1.0,
            &RvmConfig {
                prune_cap: f64::INFINITY,
                ..RvmConfig::default()
            },
        )
        .unwrap()
        .model;
        for i in -6..=6 {
            for j in -6..=6 {
                let p = [i as f64 * 0.5, j as f64 * 0.5];
                let diff = pruned.probability(&p).unwrap() - unpruned.probability(&p).unwrap();
                assert!(diff.abs() < 1e-3, "probabilities differ by {diff} at {p:?}");
            }
        }
    }
}
