//! Least-squares fitting of path-loss samples against implant depth.
//!
//! Two regressors are supported: the linear depth model used by the embedded
//! table (`x = d / d0`) and the log-distance model common in the literature
//! (`x = 10 log10(d / d0)`, slope = path-loss exponent `n`). Both are solved
//! in closed form; the linear model also has a full-batch gradient-descent
//! solver so convergence behaviour can be compared.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::REFERENCE_DEPTH_MM;

/// Two parameters plus one residual degree of freedom.
pub const MIN_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("all samples share one depth; slope is not identifiable")]
    DegenerateDesign,
    #[error("sample {index} is invalid: depth {depth_mm} mm, path loss {path_loss_db} dB")]
    InvalidSample {
        index: usize,
        depth_mm: f64,
        path_loss_db: f64,
    },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("no convergence after {iterations} iterations (last MSE improvement {last_improvement:e} dB^2)")]
    NonConvergence {
        iterations: u64,
        last_improvement: f64,
    },
}

impl FitError {
    pub fn kind(&self) -> &'static str {
        match self {
            FitError::InsufficientSamples { .. } => "InsufficientSamples",
            FitError::DegenerateDesign => "DegenerateDesign",
            FitError::InvalidSample { .. } => "InvalidSample",
            FitError::InvalidStep(_) => "InvalidStep",
            FitError::NonConvergence { .. } => "NonConvergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub depth_mm: f64,
    pub path_loss_db: f64,
}

impl DepthSample {
    pub fn new(depth_mm: f64, path_loss_db: f64) -> Self {
        Self {
            depth_mm,
            path_loss_db,
        }
    }

    fn is_valid(&self) -> bool {
        self.depth_mm.is_finite() && self.depth_mm >= REFERENCE_DEPTH_MM && self.path_loss_db.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    LogDistance,
}

impl ModelKind {
    /// Regressor value for a depth.
    pub fn regressor(self, depth_mm: f64) -> f64 {
        let ratio = depth_mm / REFERENCE_DEPTH_MM;
        match self {
            ModelKind::Linear => ratio,
            ModelKind::LogDistance => 10.0 * ratio.log10(),
        }
    }

    /// Fitted path loss at `depth_mm` for an intercept/slope pair.
    pub fn predict(self, intercept_db: f64, slope: f64, depth_mm: f64) -> f64 {
        intercept_db + slope * self.regressor(depth_mm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Linear => f.write_str("Linear"),
            ModelKind::LogDistance => f.write_str("LogDistance"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_kind: ModelKind,
    pub intercept_db: f64,
    /// `m` for the linear model, path-loss exponent `n` for log-distance.
    pub slope: f64,
    /// Residual standard deviation, denominator `n - 2`.
    pub sigma_db: f64,
    pub mse_db2: f64,
    pub n_samples: usize,
    /// Gradient-descent iterations; absent for closed-form fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
}

impl FitResult {
    pub fn predict(&self, depth_mm: f64) -> f64 {
        self.model_kind.predict(self.intercept_db, self.slope, depth_mm)
    }
}

/// Settings for [`fit_linear_gd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDescent {
    pub lr: f64,
    pub max_iters: u64,
    /// Stop once one iteration lowers the MSE by less than this, dB^2.
    pub tol: f64,
}

impl Default for GradientDescent {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_iters: 100_000,
            tol: 1e-10,
        }
    }
}

/// Validated regressor/response columns.
struct Design {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Design {
    fn new(samples: &[DepthSample], kind: ModelKind) -> Result<Self, FitError> {
        if samples.len() < MIN_SAMPLES {
            return Err(FitError::InsufficientSamples {
                needed: MIN_SAMPLES,
                got: samples.len(),
            });
        }
        if let Some((index, s)) = samples.iter().enumerate().find(|(_, s)| !s.is_valid()) {
            return Err(FitError::InvalidSample {
                index,
                depth_mm: s.depth_mm,
                path_loss_db: s.path_loss_db,
            });
        }
        let first = samples[0].depth_mm;
        if samples.iter().all(|s| s.depth_mm == first) {
            return Err(FitError::DegenerateDesign);
        }
        Ok(Self {
            x: samples.iter().map(|s| kind.regressor(s.depth_mm)).collect(),
            y: samples.iter().map(|s| s.path_loss_db).collect(),
        })
    }

    fn len(&self) -> usize {
        self.x.len()
    }

    fn x_mean(&self) -> f64 {
        mean(&self.x)
    }

    fn y_mean(&self) -> f64 {
        mean(&self.y)
    }

    fn sxx(&self) -> f64 {
        let xm = self.x_mean();
        self.x.iter().map(|x| (x - xm).powi(2)).sum()
    }

    fn into_result(self, kind: ModelKind, intercept_db: f64, slope: f64, iterations: Option<u64>) -> FitResult {
        let sse: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| (y - intercept_db - slope * x).powi(2))
            .sum();
        let n = self.len();
        FitResult {
            model_kind: kind,
            intercept_db,
            slope,
            sigma_db: (sse / (n - 2) as f64).sqrt(),
            mse_db2: sse / n as f64,
            n_samples: n,
            iterations,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Closed-form least squares for either regressor.
pub fn fit_ols(samples: &[DepthSample], kind: ModelKind) -> Result<FitResult, FitError> {
    let design = Design::new(samples, kind)?;
    let xm = design.x_mean();
    let ym = design.y_mean();
    let sxx = design.sxx();
    if sxx == 0.0 {
        return Err(FitError::DegenerateDesign);
    }
    let sxy: f64 = design
        .x
        .iter()
        .zip(&design.y)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    Ok(design.into_result(kind, intercept, slope, None))
}

/// Ordinary least squares of path loss on `d / d0`.
pub fn fit_linear(samples: &[DepthSample]) -> Result<FitResult, FitError> {
    fit_ols(samples, ModelKind::Linear)
}

/// Ordinary least squares of path loss on `10 log10(d / d0)`.
pub fn fit_log_distance(samples: &[DepthSample]) -> Result<FitResult, FitError> {
    fit_ols(samples, ModelKind::LogDistance)
}

/// Linear depth model solved by full-batch gradient descent on the MSE.
pub fn fit_linear_gd(samples: &[DepthSample], settings: GradientDescent) -> Result<FitResult, FitError> {
    fit_gd(samples, ModelKind::Linear, settings)
}

/// Gradient descent for either regressor.
///
/// The regressor is standardized to zero mean and unit variance, which makes
/// the Hessian of the MSE exactly `2 I`; the iteration is stable for
/// `0 < lr < 1` and the per-step MSE decrease is `lr (1 - lr) |g|^2`. That
/// closed form is used for the stopping test, so it does not suffer from
/// cancellation between two nearly equal MSE values.
pub fn fit_gd(samples: &[DepthSample], kind: ModelKind, settings: GradientDescent) -> Result<FitResult, FitError> {
    let GradientDescent { lr, max_iters, tol } = settings;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(FitError::InvalidStep(lr));
    }
    let design = Design::new(samples, kind)?;
    let n = design.len() as f64;
    let xm = design.x_mean();
    let scale = (design.sxx() / n).sqrt();
    if scale == 0.0 {
        return Err(FitError::DegenerateDesign);
    }
    let z: Vec<f64> = design.x.iter().map(|x| (x - xm) / scale).collect();

    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut last_improvement = f64::INFINITY;
    let mut converged_at = None;
    for iter in 1..=max_iters {
        let (mut ga, mut gb) = (0.0, 0.0);
        for (zi, yi) in z.iter().zip(&design.y) {
            let r = yi - a - b * zi;
            ga += r;
            gb += r * zi;
        }
        ga *= -2.0 / n;
        gb *= -2.0 / n;
        let g2 = ga * ga + gb * gb;
        let improvement = lr * (1.0 - lr) * g2;
        if !improvement.is_finite() || (improvement <= 0.0 && g2 > 0.0) {
            // lr >= 1 never decreases the objective
            return Err(FitError::NonConvergence {
                iterations: iter,
                last_improvement: improvement,
            });
        }
        a -= lr * ga;
        b -= lr * gb;
        last_improvement = improvement;
        if improvement < tol {
            converged_at = Some(iter);
            break;
        }
    }
    let Some(iterations) = converged_at else {
        return Err(FitError::NonConvergence {
            iterations: max_iters,
            last_improvement,
        });
    };
    let slope = b / scale;
    let intercept = a - slope * xm;
    Ok(design.into_result(kind, intercept, slope, Some(iterations)))
}

/// Fits both models and returns them ordered by ascending MSE; on an exact
/// tie the linear fit comes first.
pub fn compare_models(samples: &[DepthSample]) -> Result<[FitResult; 2], FitError> {
    let mut fits = [fit_linear(samples)?, fit_log_distance(samples)?];
    if fits[1].mse_db2.total_cmp(&fits[0].mse_db2) == Ordering::Less {
        fits.swap(0, 1);
    }
    Ok(fits)
}
