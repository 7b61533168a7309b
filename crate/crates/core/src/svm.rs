//! Soft-margin SVM with an RBF kernel, trained by SMO.
//!
//! The dual is solved with maximal-violating-pair working set selection.
//! Only points with a strictly positive dual coefficient are kept in the
//! fitted model.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 2.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
}

impl KernelParams {
    pub fn new(gamma: f64) -> Result<KernelParams> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        Ok(KernelParams { gamma })
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        rbf_unchecked(x, z, self.gamma)
    }
}

pub(crate) fn sq_dist(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn rbf_unchecked(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(x, z)).exp()
}

/// `exp(-gamma * |x - z|^2)`.
pub fn rbf(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    Ok(rbf_unchecked(x, z, gamma))
}

/// Dense symmetric RBF Gram matrix.
pub fn gram(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        k[i][i] = 1.0;
        for j in 0..i {
            let v = rbf_unchecked(&x[i], &x[j], gamma);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    pub c: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Record the dual objective after every pair update.
    pub record_objective: bool,
}

impl Default for SmoConfig {
    fn default() -> Self {
        SmoConfig {
            c: DEFAULT_C,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            record_objective: false,
        }
    }
}

/// Full dual solution over every training point.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `sum(alpha) - 1/2 alpha' Q alpha`, one entry per update
    /// (empty unless requested).
    pub objective_trace: Vec<f64>,
}

/// Solves the C-SVM dual for a precomputed kernel matrix and ±1 targets.
pub fn smo_solve(kernel: &[Vec<f64>], y: &[f64], config: &SmoConfig) -> DualSolution {
    let n = y.len();
    let c = config.c;
    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = kernel[i][i] + kernel[j][j] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kernel[i][i] + kernel[j][j] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
        if config.record_objective {
            let f: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() * 0.5;
            trace.push(-f);
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else {
        0.0
    };

    DualSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
        objective_trace: trace,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub x: Vec<f64>,
    pub label: Label,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<SupportVector>,
    pub bias: f64,
    pub kernel: KernelParams,
    pub c: f64,
    pub dim: usize,
    /// False when SMO hit its iteration cap; the model is then best-so-far.
    pub converged: bool,
}

impl SvmModel {
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.bias
            + self
                .support_vectors
                .iter()
                .map(|sv| sv.alpha * sv.label.sign() * self.kernel.eval(x, &sv.x))
                .sum::<f64>())
    }

    pub fn decide(&self, x: &[f64]) -> Result<Label> {
        self.decision_value(x).map(Label::from_sign)
    }
}

pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<Label> {
    model.decide(x)
}

/// Trains with `C` and default solver settings.
pub fn train_svm(train: &Dataset, gamma: f64, c: f64) -> Result<SvmModel> {
    let config = SmoConfig {
        c,
        ..SmoConfig::default()
    };
    train_svm_with(train, gamma, &config).map(|(model, _)| model)
}

/// Trains and also returns the full dual solution.
pub fn train_svm_with(train: &Dataset, gamma: f64, config: &SmoConfig) -> Result<(SvmModel, DualSolution)> {
    let kernel = KernelParams::new(gamma)?;
    if config.c.is_nan() || config.c <= 0.0 {
        return Err(Error::InvalidParameter(format!("C must be positive, got {}", config.c)));
    }
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClassTraining);
    }
    let x = train.features();
    let y: Vec<f64> = train.labels().iter().map(|l| l.sign()).collect();
    let solution = smo_solve(&gram(&x, gamma), &y, config);
    if !solution.converged {
        log::warn!(
            "SMO stopped at the iteration cap ({}) before reaching tolerance {}",
            config.max_iterations,
            config.tolerance
        );
    }
    let support_vectors = x
        .into_iter()
        .zip(train.labels())
        .zip(&solution.alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|((x, label), &alpha)| SupportVector { x, label, alpha })
        .collect();
    let model = SvmModel {
        support_vectors,
        bias: solution.bias,
        kernel,
        c: config.c,
        dim: train.dim(),
        converged: solution.converged,
    };
    Ok((model, solution))
}
