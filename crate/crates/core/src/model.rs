//! Depth-based statistical path-loss model for implant-to-external links at 915 MHz.
//!
//! The mean path loss grows linearly with the normalized implant depth:
//!
//! ```text
//! PL(d) = PL0 + m * (d / d0) + S      (d >= d0, d0 = 10 mm)
//! ```
//!
//! where `S ~ Normal(0, sigma^2)` is the shadowing term in dB. Parameters are
//! tabulated per body area (four anatomical regions, four sides and the whole
//! torso) and per receiver zone (near: 5 cm, far: 30 cm from the skin).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference depth `d0` in millimeters.
pub const REFERENCE_DEPTH_MM: f64 = 10.0;
/// Deepest implant position covered by the measurement grid.
pub const MAX_GRID_DEPTH_MM: f64 = 100.0;
/// Angular spacing of the measurement grid, in degrees.
pub const ANGLE_STEP_DEG: f64 = 22.5;
/// Number of angles around the torso.
pub const GRID_ANGLES: usize = 16;
/// Speed of light used for antenna sizing, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 2.9979e8;
/// Carrier frequency the embedded parameters were derived at.
pub const CARRIER_FREQ_HZ: f64 = 915.0e6;

const ANGLE_TOL_DEG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("depth {depth_mm} mm is below the reference depth d >= d0 = {REFERENCE_DEPTH_MM} mm")]
    DepthBelowReference { depth_mm: f64 },
    #[error("depth {depth_mm} mm exceeds {MAX_GRID_DEPTH_MM} mm; extrapolation must be enabled explicitly")]
    ExtrapolationRequired { depth_mm: f64 },
    #[error("angle {angle_deg} deg is not a multiple of {ANGLE_STEP_DEG} in [0, 360)")]
    InvalidAngle { angle_deg: f64 },
    #[error("relative permittivity must be >= 1, got {0}")]
    InvalidPermittivity(f64),
    #[error("frequency must be positive, got {0} Hz")]
    InvalidFrequency(f64),
    #[error("unknown body area '{0}'")]
    UnknownArea(String),
    #[error("unknown field zone '{0}'")]
    UnknownZone(String),
    #[error("angle {angle_deg} deg does not belong to side {side}")]
    AngleOutsideSide { angle_deg: f64, side: BodyArea },
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::DepthBelowReference { .. } => "DepthBelowReference",
            ModelError::ExtrapolationRequired { .. } => "ExtrapolationRequired",
            ModelError::InvalidAngle { .. } => "InvalidAngle",
            ModelError::InvalidPermittivity(_) => "InvalidPermittivity",
            ModelError::InvalidFrequency(_) => "InvalidFrequency",
            ModelError::UnknownArea(_) => "UnknownArea",
            ModelError::UnknownZone(_) => "UnknownZone",
            ModelError::AngleOutsideSide { .. } => "AngleOutsideSide",
        }
    }
}

/// Body area keys of the parameter table.
///
/// `Region1`..`Region4` are anatomical subregions of the torso (shoulders to
/// heart, heart, stomach and kidneys, intestine). The four sides and
/// `OverallTorso` aggregate measurements across regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyArea {
    Region1,
    Region2,
    Region3,
    Region4,
    Anterior,
    Posterior,
    LeftLateral,
    RightLateral,
    OverallTorso,
}

impl BodyArea {
    pub const ALL: [BodyArea; 9] = [
        BodyArea::Region1,
        BodyArea::Region2,
        BodyArea::Region3,
        BodyArea::Region4,
        BodyArea::Anterior,
        BodyArea::Posterior,
        BodyArea::LeftLateral,
        BodyArea::RightLateral,
        BodyArea::OverallTorso,
    ];

    pub const REGIONS: [BodyArea; 4] = [
        BodyArea::Region1,
        BodyArea::Region2,
        BodyArea::Region3,
        BodyArea::Region4,
    ];

    pub const SIDES: [BodyArea; 4] = [
        BodyArea::Anterior,
        BodyArea::LeftLateral,
        BodyArea::Posterior,
        BodyArea::RightLateral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodyArea::Region1 => "Region1",
            BodyArea::Region2 => "Region2",
            BodyArea::Region3 => "Region3",
            BodyArea::Region4 => "Region4",
            BodyArea::Anterior => "Anterior",
            BodyArea::Posterior => "Posterior",
            BodyArea::LeftLateral => "LeftLateral",
            BodyArea::RightLateral => "RightLateral",
            BodyArea::OverallTorso => "OverallTorso",
        }
    }

    pub fn is_region(self) -> bool {
        matches!(
            self,
            BodyArea::Region1 | BodyArea::Region2 | BodyArea::Region3 | BodyArea::Region4
        )
    }

    pub fn is_side(self) -> bool {
        matches!(
            self,
            BodyArea::Anterior | BodyArea::Posterior | BodyArea::LeftLateral | BodyArea::RightLateral
        )
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BodyArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyArea {
    type Err = ModelError;

    /// Case-insensitive; `-`, `_` and spaces are ignored, so `left-lateral`
    /// and `LeftLateral` both parse. `overall` and `torso` alias `OverallTorso`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        let area = match key.as_str() {
            "region1" => BodyArea::Region1,
            "region2" => BodyArea::Region2,
            "region3" => BodyArea::Region3,
            "region4" => BodyArea::Region4,
            "anterior" => BodyArea::Anterior,
            "posterior" => BodyArea::Posterior,
            "leftlateral" => BodyArea::LeftLateral,
            "rightlateral" => BodyArea::RightLateral,
            "overalltorso" | "overall" | "torso" => BodyArea::OverallTorso,
            _ => return Err(ModelError::UnknownArea(s.to_string())),
        };
        Ok(area)
    }
}

/// Receiver placement relative to the body surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldZone {
    Near,
    Far,
}

impl FieldZone {
    pub const ALL: [FieldZone; 2] = [FieldZone::Near, FieldZone::Far];

    /// Distance of the external antenna from the skin.
    pub fn receiver_distance_cm(self) -> f64 {
        match self {
            FieldZone::Near => 5.0,
            FieldZone::Far => 30.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldZone::Near => "Near",
            FieldZone::Far => "Far",
        }
    }
}

impl fmt::Display for FieldZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldZone {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "near" => Ok(FieldZone::Near),
            "far" => Ok(FieldZone::Far),
            _ => Err(ModelError::UnknownZone(s.to_string())),
        }
    }
}

/// Whether depths beyond the measured grid may be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extrapolation {
    #[default]
    Forbid,
    Allow,
}

/// One row of the parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    /// Intercept `PL0` in dB.
    pub pl0_db: f64,
    /// Decay rate `m`, dB per reference-depth unit.
    pub m: f64,
    /// Standard deviation of the shadowing term, dB.
    pub sigma_db: f64,
}

impl PathLossParams {
    pub const fn new(pl0_db: f64, m: f64, sigma_db: f64) -> Self {
        Self { pl0_db, m, sigma_db }
    }

    /// Mean path loss (shadowing set to zero) at `depth_mm`.
    pub fn mean_db(&self, depth_mm: f64, extrapolation: Extrapolation) -> Result<f64, ModelError> {
        check_depth(depth_mm, extrapolation)?;
        Ok(self.pl0_db + self.m * (depth_mm / REFERENCE_DEPTH_MM))
    }

    /// One shadowed draw at `depth_mm`.
    pub fn sample_db<R: Rng + ?Sized>(
        &self,
        depth_mm: f64,
        extrapolation: Extrapolation,
        rng: &mut R,
    ) -> Result<f64, ModelError> {
        let mean = self.mean_db(depth_mm, extrapolation)?;
        Ok(mean + shadowing(self.sigma_db, rng))
    }

    /// Same parameters with the shadowing switched off.
    pub fn without_shadowing(self) -> Self {
        Self { sigma_db: 0.0, ..self }
    }
}

/// Draws `S ~ Normal(0, sigma^2)`. A zero sigma consumes no randomness.
pub(crate) fn shadowing<R: Rng + ?Sized>(sigma_db: f64, rng: &mut R) -> f64 {
    if sigma_db == 0.0 {
        return 0.0;
    }
    // sigma is validated non-negative and finite by every caller
    Normal::new(0.0, sigma_db)
        .expect("shadowing deviation must be finite and non-negative")
        .sample(rng)
}

pub(crate) fn check_depth(depth_mm: f64, extrapolation: Extrapolation) -> Result<(), ModelError> {
    if depth_mm.is_nan() || depth_mm < REFERENCE_DEPTH_MM {
        return Err(ModelError::DepthBelowReference { depth_mm });
    }
    if depth_mm > MAX_GRID_DEPTH_MM && extrapolation == Extrapolation::Forbid {
        return Err(ModelError::ExtrapolationRequired { depth_mm });
    }
    Ok(())
}

const fn p(pl0_db: f64, m: f64, sigma_db: f64) -> PathLossParams {
    PathLossParams::new(pl0_db, m, sigma_db)
}

// [near, far] per area, in `BodyArea` declaration order.
const PARAMETER_TABLE: [[PathLossParams; 2]; 9] = [
    [p(24.75, 2.30, 3.73), p(41.07, 1.46, 2.84)],
    [p(22.70, 1.96, 2.38), p(39.37, 1.48, 3.04)],
    [p(22.56, 2.55, 1.79), p(39.09, 2.14, 3.02)],
    [p(24.23, 2.31, 3.47), p(41.05, 1.82, 3.90)],
    [p(23.83, 2.46, 3.51), p(40.57, 1.88, 4.08)],
    [p(23.76, 2.21, 1.92), p(40.53, 1.76, 2.34)],
    [p(23.34, 2.28, 3.67), p(39.57, 1.68, 3.62)],
    [p(23.22, 2.27, 3.51), p(39.43, 1.69, 3.52)],
    [p(23.56, 2.28, 3.38), p(40.14, 1.73, 3.62)],
];

/// Embedded parameters for `area` in `zone`.
pub fn lookup_params(area: BodyArea, zone: FieldZone) -> PathLossParams {
    let column = match zone {
        FieldZone::Near => 0,
        FieldZone::Far => 1,
    };
    PARAMETER_TABLE[area.index()][column]
}

/// Mean path loss within the measured depth range `[10, 100]` mm.
pub fn mean_path_loss(params: PathLossParams, depth_mm: f64) -> Result<f64, ModelError> {
    params.mean_db(depth_mm, Extrapolation::Forbid)
}

/// Shadowed path loss within the measured depth range, drawn from `rng`.
pub fn sample_path_loss<R: Rng + ?Sized>(
    params: PathLossParams,
    depth_mm: f64,
    rng: &mut R,
) -> Result<f64, ModelError> {
    params.sample_db(depth_mm, Extrapolation::Forbid, rng)
}

/// One of the 16 angular positions around the torso, stored as a step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridAngle(u8);

impl GridAngle {
    pub fn all() -> impl Iterator<Item = GridAngle> {
        (0..GRID_ANGLES as u8).map(GridAngle)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < GRID_ANGLES).then_some(GridAngle(index as u8))
    }

    pub fn from_degrees(angle_deg: f64) -> Result<Self, ModelError> {
        let steps = angle_deg / ANGLE_STEP_DEG;
        let rounded = steps.round();
        if !angle_deg.is_finite()
            || (steps - rounded).abs() * ANGLE_STEP_DEG > ANGLE_TOL_DEG
            || rounded < 0.0
            || rounded >= GRID_ANGLES as f64
        {
            return Err(ModelError::InvalidAngle { angle_deg });
        }
        Ok(GridAngle(rounded as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 * ANGLE_STEP_DEG
    }

    /// Side owning this angle. 0 deg is the anterior axis and angles grow
    /// toward the subject's left; each side spans a half-open 90 deg
    /// quadrant centred on its axis.
    pub fn side(self) -> BodyArea {
        match ((self.0 as usize + 2) / 4) % 4 {
            0 => BodyArea::Anterior,
            1 => BodyArea::LeftLateral,
            2 => BodyArea::Posterior,
            _ => BodyArea::RightLateral,
        }
    }
}

impl fmt::Display for GridAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.degrees())
    }
}

/// Maps a grid angle to the side of the torso it belongs to.
pub fn side_of_angle(angle_deg: f64) -> Result<BodyArea, ModelError> {
    GridAngle::from_degrees(angle_deg).map(GridAngle::side)
}

/// Implant or receiver position the model is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyLocation {
    pub area: BodyArea,
    pub zone: FieldZone,
    pub angle: Option<GridAngle>,
    pub depth_mm: f64,
}

impl BodyLocation {
    pub fn new(
        area: BodyArea,
        zone: FieldZone,
        angle: Option<GridAngle>,
        depth_mm: f64,
        extrapolation: Extrapolation,
    ) -> Result<Self, ModelError> {
        check_depth(depth_mm, extrapolation)?;
        if let Some(angle) = angle {
            if area.is_side() && angle.side() != area {
                return Err(ModelError::AngleOutsideSide {
                    angle_deg: angle.degrees(),
                    side: area,
                });
            }
        }
        Ok(Self {
            area,
            zone,
            angle,
            depth_mm,
        })
    }

    pub fn params(&self) -> PathLossParams {
        lookup_params(self.area, self.zone)
    }

    pub fn mean_path_loss(&self) -> f64 {
        // depth validated at construction
        self.params().pl0_db + self.params().m * (self.depth_mm / REFERENCE_DEPTH_MM)
    }
}

/// Estimated average relative permittivity of an anatomical region.
/// Aggregate areas have no single value.
pub fn region_permittivity(area: BodyArea) -> Option<f64> {
    match area {
        BodyArea::Region1 | BodyArea::Region2 => Some(16.0),
        BodyArea::Region3 => Some(27.0),
        BodyArea::Region4 => Some(29.0),
        _ => None,
    }
}

/// Resonant half-wave dipole length `c / (2 f sqrt(eps_r))` in millimeters.
pub fn half_wave_dipole_length_mm(freq_hz: f64, eps_r: f64) -> Result<f64, ModelError> {
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(ModelError::InvalidFrequency(freq_hz));
    }
    if !(eps_r >= 1.0) || !eps_r.is_finite() {
        return Err(ModelError::InvalidPermittivity(eps_r));
    }
    Ok(SPEED_OF_LIGHT_M_S / (2.0 * freq_hz * eps_r.sqrt()) * 1e3)
}

/// Flattened table row used for export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub area: BodyArea,
    pub zone: FieldZone,
    pub pl0_db: f64,
    pub m: f64,
    pub sigma_db: f64,
}

/// All 18 rows, ordered by area then zone (near before far).
pub fn parameter_table() -> Vec<ParamRow> {
    BodyArea::ALL
        .iter()
        .flat_map(|&area| {
            FieldZone::ALL.iter().map(move |&zone| {
                let p = lookup_params(area, zone);
                ParamRow {
                    area,
                    zone,
                    pl0_db: p.pl0_db,
                    m: p.m,
                    sigma_db: p.sigma_db,
                }
            })
        })
        .collect()
}

pub fn parameter_table_json() -> String {
    serde_json::to_string_pretty(&parameter_table()).expect("table rows always serialize")
}
