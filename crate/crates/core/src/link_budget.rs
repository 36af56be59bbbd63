//! Link budgets over the depth path-loss model.
//!
//! A link is in outage when the shadowed received power drops below the
//! receiver sensitivity plus the required margin, i.e. when the path loss
//! exceeds the budget `PLmax = Ptx + Gtx + Grx - Srx - margin`.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

use crate::model::{
    lookup_params, mean_path_loss, sample_path_loss, BodyArea, FieldZone, ModelError, PathLossParams,
    MAX_GRID_DEPTH_MM, REFERENCE_DEPTH_MM,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BudgetError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid link budget: {0}")]
    InvalidSpec(String),
    #[error("target outage must lie in (0, 1), got {0}")]
    InvalidTarget(f64),
    #[error("Monte Carlo needs at least one sample")]
    NoSamples,
    #[error("no depth in [10, 100] mm meets the target; outage at 10 mm is {outage_at_min:.4}")]
    NoFeasibleDepth { outage_at_min: f64 },
}

impl BudgetError {
    pub fn kind(&self) -> &'static str {
        match self {
            BudgetError::Model(e) => e.kind(),
            BudgetError::InvalidSpec(_) => "InvalidSpec",
            BudgetError::InvalidTarget(_) => "InvalidTarget",
            BudgetError::NoSamples => "NoSamples",
            BudgetError::NoFeasibleDepth { .. } => "NoFeasibleDepth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetSpec {
    pub tx_power_dbm: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub rx_sensitivity_dbm: f64,
    pub required_margin_db: f64,
    /// Optional ceiling on transmit power (tissue exposure); absent by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_cap_dbm: Option<f64>,
}

impl LinkBudgetSpec {
    pub fn new(
        tx_power_dbm: f64,
        tx_gain_dbi: f64,
        rx_gain_dbi: f64,
        rx_sensitivity_dbm: f64,
        required_margin_db: f64,
    ) -> Result<Self, BudgetError> {
        let spec = Self {
            tx_power_dbm,
            tx_gain_dbi,
            rx_gain_dbi,
            rx_sensitivity_dbm,
            required_margin_db,
            tx_power_cap_dbm: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A budget expressed directly as the largest tolerable path loss.
    pub fn from_path_loss_budget(max_path_loss_db: f64) -> Result<Self, BudgetError> {
        Self::new(0.0, 0.0, 0.0, -max_path_loss_db, 0.0)
    }

    pub fn with_tx_power_cap(mut self, cap_dbm: f64) -> Result<Self, BudgetError> {
        self.tx_power_cap_dbm = Some(cap_dbm);
        self.validate()?;
        Ok(self)
    }

    /// Transmit power may be `+inf` (unbounded source); every other field
    /// must be finite.
    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.tx_power_dbm.is_nan() || self.tx_power_dbm == f64::NEG_INFINITY {
            return Err(BudgetError::InvalidSpec(format!("tx power {} dBm", self.tx_power_dbm)));
        }
        for (name, v) in [
            ("tx gain", self.tx_gain_dbi),
            ("rx gain", self.rx_gain_dbi),
            ("rx sensitivity", self.rx_sensitivity_dbm),
        ] {
            if !v.is_finite() {
                return Err(BudgetError::InvalidSpec(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.required_margin_db >= 0.0) || !self.required_margin_db.is_finite() {
            return Err(BudgetError::InvalidSpec(format!(
                "required margin must be finite and >= 0, got {}",
                self.required_margin_db
            )));
        }
        if let Some(cap) = self.tx_power_cap_dbm {
            if !cap.is_finite() {
                return Err(BudgetError::InvalidSpec(format!("tx power cap must be finite, got {cap}")));
            }
        }
        Ok(())
    }

    pub fn effective_tx_power_dbm(&self) -> f64 {
        match self.tx_power_cap_dbm {
            Some(cap) => self.tx_power_dbm.min(cap),
            None => self.tx_power_dbm,
        }
    }

    /// Received power that still meets sensitivity plus margin.
    pub fn threshold_dbm(&self) -> f64 {
        self.rx_sensitivity_dbm + self.required_margin_db
    }

    /// Largest path loss that keeps the link out of outage.
    pub fn max_path_loss_db(&self) -> f64 {
        self.effective_tx_power_dbm() + self.tx_gain_dbi + self.rx_gain_dbi - self.threshold_dbm()
    }
}

/// `Ptx + Gtx + Grx - PL`, with the transmit power cap applied.
pub fn received_power(spec: &LinkBudgetSpec, path_loss_db: f64) -> f64 {
    spec.effective_tx_power_dbm() + spec.tx_gain_dbi + spec.rx_gain_dbi - path_loss_db
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutageMethod {
    Analytic,
    MonteCarlo { samples: u64, seed: u64 },
}

/// Upper tail of the standard normal, `P[Z > z]`.
pub fn gaussian_q(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `z` such that `P[Z > z] = p`, polished with Newton steps so that
/// `gaussian_q(gaussian_q_inv(p))` reproduces `p` to rounding.
pub fn gaussian_q_inv(p: f64) -> f64 {
    let mut z = SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let density = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        if density == 0.0 {
            break;
        }
        z += (gaussian_q(z) - p) / density;
    }
    z
}

/// Probability that shadowing pushes received power below sensitivity plus
/// margin at `depth_mm`.
pub fn outage_probability(
    spec: &LinkBudgetSpec,
    area: BodyArea,
    zone: FieldZone,
    depth_mm: f64,
    method: OutageMethod,
) -> Result<f64, BudgetError> {
    outage_probability_for(spec, lookup_params(area, zone), depth_mm, method)
}

pub fn outage_probability_for(
    spec: &LinkBudgetSpec,
    params: PathLossParams,
    depth_mm: f64,
    method: OutageMethod,
) -> Result<f64, BudgetError> {
    spec.validate()?;
    let mean = mean_path_loss(params, depth_mm)?;
    let threshold = spec.threshold_dbm();
    match method {
        OutageMethod::Analytic => {
            // margin of the mean link above the threshold, dB
            let margin = received_power(spec, mean) - threshold;
            if params.sigma_db == 0.0 {
                return Ok(if margin < 0.0 { 1.0 } else { 0.0 });
            }
            Ok(gaussian_q(margin / params.sigma_db))
        }
        OutageMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(BudgetError::NoSamples);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut failures = 0u64;
            for _ in 0..samples {
                let pl = sample_path_loss(params, depth_mm, &mut rng)?;
                if received_power(spec, pl) < threshold {
                    failures += 1;
                }
            }
            Ok(failures as f64 / samples as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLimit {
    pub max_depth_mm: f64,
    /// The target still holds at the deepest grid depth; the true limit may be deeper.
    pub saturated: bool,
}

/// Deepest implant position in `[10, 100]` mm whose analytic outage does not
/// exceed `target_outage`.
pub fn max_reliable_depth(
    spec: &LinkBudgetSpec,
    area: BodyArea,
    zone: FieldZone,
    target_outage: f64,
) -> Result<DepthLimit, BudgetError> {
    max_reliable_depth_for(spec, lookup_params(area, zone), target_outage)
}

/// Inverts the analytic outage in closed form: the mean path loss is affine
/// in depth, so `outage(d) <= p` iff
/// `PL0 + m d / d0 <= PLmax - sigma * Qinv(p)`.
pub fn max_reliable_depth_for(
    spec: &LinkBudgetSpec,
    params: PathLossParams,
    target_outage: f64,
) -> Result<DepthLimit, BudgetError> {
    spec.validate()?;
    if !(target_outage > 0.0 && target_outage < 1.0) {
        return Err(BudgetError::InvalidTarget(target_outage));
    }
    if !(params.m > 0.0) {
        return Err(BudgetError::InvalidSpec(format!("decay rate must be positive, got {}", params.m)));
    }
    let outage = |d: f64| outage_probability_for(spec, params, d, OutageMethod::Analytic);
    let backoff = if params.sigma_db == 0.0 {
        0.0
    } else {
        params.sigma_db * gaussian_q_inv(target_outage)
    };
    let depth = REFERENCE_DEPTH_MM * (spec.max_path_loss_db() - backoff - params.pl0_db) / params.m;

    if depth >= MAX_GRID_DEPTH_MM && outage(MAX_GRID_DEPTH_MM)? <= target_outage {
        return Ok(DepthLimit {
            max_depth_mm: MAX_GRID_DEPTH_MM,
            saturated: true,
        });
    }
    let outage_at_min = outage(REFERENCE_DEPTH_MM)?;
    if outage_at_min > target_outage {
        return Err(BudgetError::NoFeasibleDepth { outage_at_min });
    }
    let mut depth = depth.clamp(REFERENCE_DEPTH_MM, MAX_GRID_DEPTH_MM);
    // rounding can leave the closed-form root a hair past the boundary
    let mut steps = 0;
    while outage(depth)? > target_outage && steps < 64 {
        depth = depth.next_down().max(REFERENCE_DEPTH_MM);
        steps += 1;
    }
    if outage(depth)? > target_outage {
        depth = bisect_feasible(REFERENCE_DEPTH_MM, depth, |d| Ok(outage(d)? <= target_outage))?;
    }
    Ok(DepthLimit {
        max_depth_mm: depth,
        saturated: false,
    })
}

/// Largest `d` in `[lo, hi]` with `feasible(d)`, given `feasible(lo)`.
fn bisect_feasible<F>(mut lo: f64, mut hi: f64, feasible: F) -> Result<f64, BudgetError>
where
    F: Fn(f64) -> Result<bool, BudgetError>,
{
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedPowerReport {
    pub received_power_dbm: f64,
    pub path_loss_db: f64,
    pub spec: LinkBudgetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageReport {
    pub outage: f64,
    pub area: BodyArea,
    pub zone: FieldZone,
    pub depth_mm: f64,
    pub method: OutageMethod,
    pub spec: LinkBudgetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub max_depth_mm: f64,
    pub saturated: bool,
    pub area: BodyArea,
    pub zone: FieldZone,
    /// `None` when shadowing was ignored.
    pub target_outage: Option<f64>,
    pub spec: LinkBudgetSpec,
}
