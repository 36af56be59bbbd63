//! Measurement-grid datasets.
//!
//! The grid covers 4 regions x 2 receiver zones x 16 angles (22.5 deg steps)
//! x 10 implant depths (10..=100 mm), 1280 points in total. This module holds
//! the record types, CSV interchange, return-loss screening, the per-angle
//! power-domain averaging across regions, the across-angle variance per
//! depth, and a seeded synthetic generator with per-angle slope spread.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::DepthSample;
use crate::units::{db_to_linear, linear_to_db};
use crate::model::{
    lookup_params, BodyArea, FieldZone, GridAngle, PathLossParams, MAX_GRID_DEPTH_MM, REFERENCE_DEPTH_MM,
};

/// Antennas whose return loss is above this were discarded, dB.
pub const DEFAULT_RETURN_LOSS_THRESHOLD_DB: f64 = -7.0;
/// Default spread of the per-angle decay rate in the synthetic generator.
pub const DEFAULT_SIGMA_M: f64 = 0.2;
/// Number of implant depths on the grid.
pub const GRID_DEPTHS: usize = 10;

const CSV_COLUMNS: [&str; 6] = ["region", "zone", "angle_deg", "depth_mm", "path_loss_db", "return_loss_db"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: unknown region '{value}' (expected Region1..Region4)")]
    UnknownRegion { line: u64, value: String },
    #[error("line {line}: unknown zone '{value}' (expected Near or Far)")]
    UnknownZone { line: u64, value: String },
    #[error("duplicate grid point {point}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicatePoint { point: GridPoint, line: Option<u64> },
    #[error("missing cells: {}", cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "))]
    MissingCell { cells: Vec<MissingCell> },
    #[error("{region} {zone} at depth {depth_mm} mm has {count} angle(s); need at least 2")]
    InsufficientAngles {
        region: BodyArea,
        zone: FieldZone,
        depth_mm: f64,
        count: usize,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::Parse { .. } => "ParseError",
            DatasetError::UnknownRegion { .. } => "UnknownRegion",
            DatasetError::UnknownZone { .. } => "UnknownZone",
            DatasetError::DuplicatePoint { .. } => "DuplicatePoint",
            DatasetError::MissingCell { .. } => "MissingCell",
            DatasetError::InsufficientAngles { .. } => "InsufficientAngles",
            DatasetError::InvalidRecord(_) => "InvalidRecord",
            DatasetError::InvalidConfig(_) => "InvalidConfig",
            DatasetError::Io(_) => "IoError",
        }
    }
}

/// Depth in millimeters with a total order, usable as a map key.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DepthMm(pub f64);

impl PartialEq for DepthMm {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DepthMm {}

impl PartialOrd for DepthMm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DepthMm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for DepthMm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridPoint {
    pub region: BodyArea,
    pub zone: FieldZone,
    pub angle: GridAngle,
    pub depth_mm: DepthMm,
}

impl GridPoint {
    pub fn new(region: BodyArea, zone: FieldZone, angle: GridAngle, depth_mm: f64) -> Self {
        Self {
            region,
            zone,
            angle,
            depth_mm: DepthMm(depth_mm),
        }
    }

    pub fn depth(&self) -> f64 {
        self.depth_mm.0
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {} deg, {} mm)",
            self.region, self.zone, self.angle, self.depth_mm
        )
    }
}

/// All 1280 grid points ordered by (region, zone, angle, depth).
pub fn enumerate_grid() -> Vec<GridPoint> {
    let mut points = Vec::with_capacity(BodyArea::REGIONS.len() * 2 * 16 * GRID_DEPTHS);
    for region in BodyArea::REGIONS {
        for zone in FieldZone::ALL {
            for angle in GridAngle::all() {
                for depth in grid_depths() {
                    points.push(GridPoint::new(region, zone, angle, depth));
                }
            }
        }
    }
    points
}

/// 10, 20, ..., 100 mm.
pub fn grid_depths() -> impl Iterator<Item = f64> {
    (1..=GRID_DEPTHS).map(|k| k as f64 * REFERENCE_DEPTH_MM)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub point: GridPoint,
    pub path_loss_db: f64,
    pub return_loss_db: Option<f64>,
}

impl SampleRecord {
    /// False when the antenna's return loss was measured above `threshold_db`.
    pub fn passes_return_loss(&self, threshold_db: f64) -> bool {
        self.return_loss_db.is_none_or(|rl| rl <= threshold_db)
    }

    pub fn is_valid(&self) -> bool {
        self.passes_return_loss(DEFAULT_RETURN_LOSS_THRESHOLD_DB)
    }
}

/// Per (region, zone) parameters for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub region: BodyArea,
    pub zone: FieldZone,
    pub params: PathLossParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub regions: Vec<RegionParams>,
    /// Standard deviation of the per-angle decay rate.
    pub sigma_m: f64,
}

impl Default for SyntheticConfig {
    /// Embedded table rows for Region1..Region4 in both zones.
    fn default() -> Self {
        let regions = BodyArea::REGIONS
            .iter()
            .flat_map(|&region| {
                FieldZone::ALL.iter().map(move |&zone| RegionParams {
                    region,
                    zone,
                    params: lookup_params(region, zone),
                })
            })
            .collect();
        Self {
            regions,
            sigma_m: DEFAULT_SIGMA_M,
        }
    }
}

impl SyntheticConfig {
    pub fn with_sigma_m(mut self, sigma_m: f64) -> Self {
        self.sigma_m = sigma_m;
        self
    }

    /// Sets every shadowing deviation to zero.
    pub fn without_shadowing(mut self) -> Self {
        for r in &mut self.regions {
            r.params = r.params.without_shadowing();
        }
        self
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if !(self.sigma_m >= 0.0) || !self.sigma_m.is_finite() {
            return Err(DatasetError::InvalidConfig(format!(
                "sigma_m must be finite and >= 0, got {}",
                self.sigma_m
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.regions {
            if !r.region.is_region() {
                return Err(DatasetError::InvalidConfig(format!("{} is not a grid region", r.region)));
            }
            let p = r.params;
            if !(p.sigma_db >= 0.0) || !p.sigma_db.is_finite() || !p.pl0_db.is_finite() || !p.m.is_finite() {
                return Err(DatasetError::InvalidConfig(format!("bad parameters for {} {}: {p:?}", r.region, r.zone)));
            }
            if !seen.insert((r.region, r.zone)) {
                return Err(DatasetError::InvalidConfig(format!("{} {} listed twice", r.region, r.zone)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Synthetic { seed: u64, config: SyntheticConfig },
}

/// Immutable collection of grid samples with unique grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLossDataset {
    records: Vec<SampleRecord>,
    provenance: Provenance,
}

impl PathLossDataset {
    pub fn new(records: Vec<SampleRecord>, provenance: Provenance) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            check_record(r)?;
            if !seen.insert(r.point) {
                return Err(DatasetError::DuplicatePoint {
                    point: r.point,
                    line: None,
                });
            }
        }
        Ok(Self { records, provenance })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Zones present, in order.
    pub fn zones(&self) -> BTreeSet<FieldZone> {
        self.records.iter().map(|r| r.point.zone).collect()
    }

    /// (region, zone) pairs present, in order.
    pub fn region_zones(&self) -> BTreeSet<(BodyArea, FieldZone)> {
        self.records.iter().map(|r| (r.point.region, r.point.zone)).collect()
    }

    /// Depth/path-loss pairs for fitting, optionally restricted.
    pub fn depth_samples(&self, region: Option<BodyArea>, zone: Option<FieldZone>) -> Vec<DepthSample> {
        self.records
            .iter()
            .filter(|r| region.is_none_or(|g| r.point.region == g))
            .filter(|r| zone.is_none_or(|z| r.point.zone == z))
            .map(|r| DepthSample::new(r.point.depth(), r.path_loss_db))
            .collect()
    }
}

fn check_record(r: &SampleRecord) -> Result<(), DatasetError> {
    if !r.point.region.is_region() {
        return Err(DatasetError::InvalidRecord(format!("{} is not a grid region", r.point.region)));
    }
    let d = r.point.depth();
    if !d.is_finite() || d < REFERENCE_DEPTH_MM {
        return Err(DatasetError::InvalidRecord(format!("depth {d} mm is below {REFERENCE_DEPTH_MM} mm")));
    }
    if !r.path_loss_db.is_finite() {
        return Err(DatasetError::InvalidRecord(format!("path loss at {} is not finite", r.point)));
    }
    if r.return_loss_db.is_some_and(|rl| !rl.is_finite()) {
        return Err(DatasetError::InvalidRecord(format!("return loss at {} is not finite", r.point)));
    }
    Ok(())
}

/// Parses the CSV interchange format. Empty input yields an empty dataset.
pub fn ingest_csv<R: Read>(reader: R) -> Result<PathLossDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    let mut with_return_loss = None;
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(str::is_empty) {
            continue;
        }
        let Some(has_rl) = with_return_loss else {
            with_return_loss = Some(parse_header(&row, line)?);
            continue;
        };
        let expected = if has_rl { 6 } else { 5 };
        if row.len() != expected {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected {expected} fields, found {}", row.len()),
            });
        }
        let region: BodyArea = row[0]
            .parse()
            .ok()
            .filter(|a: &BodyArea| a.is_region())
            .ok_or_else(|| DatasetError::UnknownRegion {
                line,
                value: row[0].to_string(),
            })?;
        let zone: FieldZone = row[1].parse().map_err(|_| DatasetError::UnknownZone {
            line,
            value: row[1].to_string(),
        })?;
        let angle_deg = parse_number(&row[2], "angle_deg", line)?;
        let angle = GridAngle::from_degrees(angle_deg).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        let depth_mm = parse_number(&row[3], "depth_mm", line)?;
        if depth_mm < REFERENCE_DEPTH_MM {
            return Err(DatasetError::Parse {
                line,
                message: format!("depth_mm {depth_mm} is below the reference depth {REFERENCE_DEPTH_MM} mm"),
            });
        }
        let path_loss_db = parse_number(&row[4], "path_loss_db", line)?;
        let return_loss_db = match row.get(5) {
            Some(s) if !s.is_empty() => Some(parse_number(s, "return_loss_db", line)?),
            _ => None,
        };
        let point = GridPoint::new(region, zone, angle, depth_mm);
        if !seen.insert(point) {
            return Err(DatasetError::DuplicatePoint {
                point,
                line: Some(line),
            });
        }
        records.push(SampleRecord {
            point,
            path_loss_db,
            return_loss_db,
        });
    }
    Ok(PathLossDataset {
        records,
        provenance: Provenance::Measured,
    })
}

fn parse_header(row: &csv::StringRecord, line: u64) -> Result<bool, DatasetError> {
    let fields: Vec<&str> = row.iter().collect();
    if fields == CSV_COLUMNS[..5] {
        Ok(false)
    } else if fields == CSV_COLUMNS {
        Ok(true)
    } else {
        Err(DatasetError::Parse {
            line,
            message: format!("header must be '{}' with optional ',return_loss_db'", CSV_COLUMNS[..5].join(",")),
        })
    }
}

fn parse_number(field: &str, name: &str, line: u64) -> Result<f64, DatasetError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::Parse {
            line,
            message: format!("{name}: '{field}' is not a finite number"),
        })
}

/// Writes the CSV interchange format. The return-loss column is only
/// emitted when at least one record carries a value.
pub fn export_csv<W: Write>(ds: &PathLossDataset, mut out: W) -> std::io::Result<()> {
    let with_rl = ds.records.iter().any(|r| r.return_loss_db.is_some());
    let columns = if with_rl { &CSV_COLUMNS[..] } else { &CSV_COLUMNS[..5] };
    writeln!(out, "{}", columns.join(","))?;
    for r in &ds.records {
        write!(
            out,
            "{},{},{},{},{:.4}",
            r.point.region, r.point.zone, r.point.angle, r.point.depth_mm, r.path_loss_db
        )?;
        if with_rl {
            match r.return_loss_db {
                Some(rl) => write!(out, ",{rl:.4}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn export_csv_string(ds: &PathLossDataset) -> String {
    let mut buf = Vec::new();
    export_csv(ds, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

/// Drops records whose measured return loss exceeds `threshold_db`.
/// Records without a return-loss value are kept.
pub fn filter_by_return_loss(ds: &PathLossDataset, threshold_db: f64) -> PathLossDataset {
    PathLossDataset {
        records: ds
            .records
            .iter()
            .filter(|r| r.passes_return_loss(threshold_db))
            .copied()
            .collect(),
        provenance: ds.provenance.clone(),
    }
}

/// An (angle, depth) position within one zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub angle: GridAngle,
    pub depth_mm: DepthMm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissingCell {
    /// Region lacking the cell; `None` when no region has it.
    pub region: Option<BodyArea>,
    pub zone: FieldZone,
    pub angle_deg: f64,
    pub depth_mm: f64,
}

impl fmt::Display for MissingCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.region {
            Some(region) => write!(f, "{region} {} {:.1} deg {} mm", self.zone, self.angle_deg, self.depth_mm),
            None => write!(f, "{} {:.1} deg {} mm", self.zone, self.angle_deg, self.depth_mm),
        }
    }
}

/// How complete each cell must be before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coverage {
    /// Every region present in the zone must contribute to every cell.
    #[default]
    AllRegions,
    /// At least one region per cell.
    AnyRegion,
}

/// Average across regions in the power domain: each path loss is turned into
/// the attenuation factor `10^(PL/10)`, those are averaged arithmetically and
/// the mean is converted back to dB.
///
/// Cells span all 16 grid angles at every depth present in the zone. A zone
/// without records gives an empty map.
pub fn average_over_regions_linear(
    ds: &PathLossDataset,
    zone: FieldZone,
    coverage: Coverage,
) -> Result<BTreeMap<Cell, f64>, DatasetError> {
    let in_zone: Vec<&SampleRecord> = ds.records.iter().filter(|r| r.point.zone == zone).collect();
    let depths: BTreeSet<DepthMm> = in_zone.iter().map(|r| r.point.depth_mm).collect();
    let regions: BTreeSet<BodyArea> = in_zone.iter().map(|r| r.point.region).collect();

    let mut cells: BTreeMap<Cell, Vec<(BodyArea, f64)>> = BTreeMap::new();
    for r in &in_zone {
        cells
            .entry(Cell {
                angle: r.point.angle,
                depth_mm: r.point.depth_mm,
            })
            .or_default()
            .push((r.point.region, r.path_loss_db));
    }

    let mut missing = Vec::new();
    for angle in GridAngle::all() {
        for &depth_mm in &depths {
            let cell = Cell { angle, depth_mm };
            let present = cells.get(&cell).map(Vec::as_slice).unwrap_or(&[]);
            let gap = |region| MissingCell {
                region,
                zone,
                angle_deg: angle.degrees(),
                depth_mm: depth_mm.0,
            };
            if present.is_empty() {
                missing.push(gap(None));
            } else if coverage == Coverage::AllRegions {
                for &region in &regions {
                    if !present.iter().any(|(g, _)| *g == region) {
                        missing.push(gap(Some(region)));
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingCell { cells: missing });
    }

    Ok(cells
        .into_iter()
        .map(|(cell, values)| {
            let pl: Vec<f64> = values.into_iter().map(|(_, v)| v).collect();
            (cell, linear_mean_db(&pl))
        })
        .collect())
}

/// `10 log10(mean(10^(v/10)))`, computed relative to the largest value so
/// that large losses do not overflow.
pub fn linear_mean_db(values_db: &[f64]) -> f64 {
    let peak = values_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values_db.iter().map(|v| db_to_linear(v - peak)).sum::<f64>() / values_db.len() as f64;
    peak + linear_to_db(mean)
}

/// Sample variance (n - 1) of path loss across angles, per depth, for one
/// region and zone.
pub fn variance_by_depth(
    ds: &PathLossDataset,
    region: BodyArea,
    zone: FieldZone,
) -> Result<BTreeMap<DepthMm, f64>, DatasetError> {
    let mut by_depth: BTreeMap<DepthMm, Vec<f64>> = BTreeMap::new();
    for r in ds
        .records
        .iter()
        .filter(|r| r.point.region == region && r.point.zone == zone)
    {
        by_depth.entry(r.point.depth_mm).or_default().push(r.path_loss_db);
    }
    by_depth
        .into_iter()
        .map(|(depth, values)| {
            if values.len() < 2 {
                return Err(DatasetError::InsufficientAngles {
                    region,
                    zone,
                    depth_mm: depth.0,
                    count: values.len(),
                });
            }
            Ok((depth, sample_variance(&values)))
        })
        .collect()
}

pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Seeded synthetic grid.
///
/// For each (region, zone, angle) one decay rate `m_a ~ Normal(m, sigma_m^2)`
/// is drawn, then every depth on that angle gets
/// `PL = PL0 + m_a (d / d0) + S` with a fresh `S ~ Normal(0, sigma^2)`.
/// Points are emitted in grid order for every configured (region, zone).
pub fn generate_synthetic_grid(config: &SyntheticConfig, seed: u64) -> Result<PathLossDataset, DatasetError> {
    config.validate()?;
    let params: BTreeMap<(BodyArea, FieldZone), PathLossParams> =
        config.regions.iter().map(|r| ((r.region, r.zone), r.params)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(params.len() * 16 * GRID_DEPTHS);
    for (&(region, zone), p) in &params {
        for angle in GridAngle::all() {
            let z: f64 = rng.sample(StandardNormal);
            let m_angle = p.m + config.sigma_m * z;
            for depth in grid_depths() {
                debug_assert!(depth <= MAX_GRID_DEPTH_MM);
                let s: f64 = rng.sample(StandardNormal);
                records.push(SampleRecord {
                    point: GridPoint::new(region, zone, angle, depth),
                    path_loss_db: p.pl0_db + m_angle * (depth / REFERENCE_DEPTH_MM) + p.sigma_db * s,
                    return_loss_db: None,
                });
            }
        }
    }
    Ok(PathLossDataset {
        records,
        provenance: Provenance::Synthetic {
            seed,
            config: config.clone(),
        },
    })
}
