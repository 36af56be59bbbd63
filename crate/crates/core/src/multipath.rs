//! Power delay profiles and delay-dispersion statistics.
//!
//! Profiles are stored in dB and reduced in the linear power domain. The
//! synthesizer produces exponentially decaying tapped delay lines, one decay
//! constant per anatomical direction, with the lateral sides decaying slowest.

use std::f64::consts::LN_10;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BodyArea;
use crate::units::{db_to_linear, linear_to_db};

/// Taps whose mean power sits within this of the floor are kept.
const FLOOR_EPS_DB: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MultipathError {
    #[error("{0} is not an anatomical side (expected Anterior, Posterior, LeftLateral or RightLateral)")]
    NotASide(BodyArea),
    #[error("profile has no taps")]
    Empty,
    #[error("tap {index}: delays must start at >= 0 ns and strictly increase")]
    BadDelay { index: usize },
    #[error("tap {index}: power is not finite")]
    BadPower { index: usize },
    #[error("invalid profile configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MultipathError {
    pub fn kind(&self) -> &'static str {
        match self {
            MultipathError::NotASide(_) => "NotASide",
            MultipathError::Empty => "EmptyProfile",
            MultipathError::BadDelay { .. } => "BadDelay",
            MultipathError::BadPower { .. } => "BadPower",
            MultipathError::InvalidConfig(_) => "InvalidConfig",
            MultipathError::Parse { .. } => "ParseError",
            MultipathError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_ns: f64,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    direction: BodyArea,
    taps: Vec<Tap>,
}

impl PowerDelayProfile {
    pub fn new(direction: BodyArea, taps: Vec<Tap>) -> Result<Self, MultipathError> {
        if !direction.is_side() {
            return Err(MultipathError::NotASide(direction));
        }
        if taps.is_empty() {
            return Err(MultipathError::Empty);
        }
        let mut previous = None;
        for (index, tap) in taps.iter().enumerate() {
            let ordered = match previous {
                None => tap.delay_ns >= 0.0,
                Some(prev) => tap.delay_ns > prev,
            };
            if !ordered || !tap.delay_ns.is_finite() {
                return Err(MultipathError::BadDelay { index });
            }
            if !tap.power_db.is_finite() {
                return Err(MultipathError::BadPower { index });
            }
            previous = Some(tap.delay_ns);
        }
        Ok(Self { direction, taps })
    }

    pub fn direction(&self) -> BodyArea {
        self.direction
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn stats(&self) -> DispersionStats {
        dispersion_stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub mean_excess_delay_ns: f64,
    pub rms_delay_spread_ns: f64,
    pub total_power_db: f64,
}

/// Power-weighted first and central second moments of the tap delays.
pub fn dispersion_stats(pdp: &PowerDelayProfile) -> DispersionStats {
    // normalize to the strongest tap so the weights stay in (0, 1]
    let peak = pdp.taps.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = pdp.taps.iter().map(|t| db_to_linear(t.power_db - peak)).collect();
    let total: f64 = weights.iter().sum();
    let mean = pdp
        .taps
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * t.delay_ns)
        .sum::<f64>()
        / total;
    let spread = pdp
        .taps
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * (t.delay_ns - mean).powi(2))
        .sum::<f64>()
        / total;
    DispersionStats {
        mean_excess_delay_ns: mean,
        rms_delay_spread_ns: spread.sqrt(),
        total_power_db: peak + linear_to_db(total),
    }
}

/// Exponential tapped-delay-line settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdpConfig {
    /// Tap spacing, ns.
    pub spacing_ns: f64,
    /// Power decay constant, ns: mean linear power of tap k is exp(-k spacing / decay).
    pub decay_ns: f64,
    /// Dynamic range below tap 0, dB. Synthesis stops at the first tap below it.
    pub floor_db: f64,
    /// Per-tap log-normal fading deviation, dB.
    pub sigma_tap_db: f64,
    /// Hard cap on the profile length.
    pub max_taps: usize,
}

impl PdpConfig {
    /// Default settings for a side. The decay constants only encode that the
    /// lateral sides disperse more than the front and back.
    pub fn default_for(direction: BodyArea) -> Result<Self, MultipathError> {
        let decay_ns = match direction {
            BodyArea::Anterior => 3.0,
            BodyArea::Posterior => 4.0,
            BodyArea::LeftLateral | BodyArea::RightLateral => 8.0,
            other => return Err(MultipathError::NotASide(other)),
        };
        Ok(Self {
            spacing_ns: 1.0,
            decay_ns,
            floor_db: 30.0,
            sigma_tap_db: 0.0,
            max_taps: 1024,
        })
    }

    fn validate(&self) -> Result<(), MultipathError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.spacing_ns) {
            return Err(MultipathError::InvalidConfig(format!("tap spacing must be > 0, got {}", self.spacing_ns)));
        }
        if !positive(self.decay_ns) {
            return Err(MultipathError::InvalidConfig(format!("decay constant must be > 0, got {}", self.decay_ns)));
        }
        if !positive(self.floor_db) {
            return Err(MultipathError::InvalidConfig(format!("floor must be > 0 dB, got {}", self.floor_db)));
        }
        if !(self.sigma_tap_db >= 0.0) || !self.sigma_tap_db.is_finite() {
            return Err(MultipathError::InvalidConfig(format!(
                "tap fading deviation must be >= 0, got {}",
                self.sigma_tap_db
            )));
        }
        if self.max_taps == 0 {
            return Err(MultipathError::InvalidConfig("max_taps must be at least 1".into()));
        }
        Ok(())
    }

    /// Mean power of tap `k` relative to tap 0, dB.
    pub fn mean_tap_db(&self, k: usize) -> f64 {
        -10.0 * (k as f64 * self.spacing_ns / self.decay_ns) / LN_10
    }
}

/// Builds an exponentially decaying profile for `direction`. Randomness is
/// only consumed when `sigma_tap_db > 0`.
pub fn synthesize_pdp<R: Rng + ?Sized>(
    direction: BodyArea,
    config: &PdpConfig,
    rng: &mut R,
) -> Result<PowerDelayProfile, MultipathError> {
    if !direction.is_side() {
        return Err(MultipathError::NotASide(direction));
    }
    config.validate()?;
    let mut taps = Vec::new();
    for k in 0..config.max_taps {
        let mean_db = config.mean_tap_db(k);
        if mean_db < -config.floor_db - FLOOR_EPS_DB {
            break;
        }
        let fading = if config.sigma_tap_db > 0.0 {
            config.sigma_tap_db * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        taps.push(Tap {
            delay_ns: k as f64 * config.spacing_ns,
            power_db: mean_db + fading,
        });
    }
    PowerDelayProfile::new(direction, taps)
}

/// `# direction=<side>` comment, `delay_ns,power_db` header, one row per tap.
pub fn write_pdp_csv<W: Write>(pdp: &PowerDelayProfile, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# direction={}", pdp.direction)?;
    writeln!(out, "delay_ns,power_db")?;
    for tap in &pdp.taps {
        writeln!(out, "{},{:.4}", tap.delay_ns, tap.power_db)?;
    }
    Ok(())
}

pub fn pdp_csv_string(pdp: &PowerDelayProfile) -> String {
    let mut buf = Vec::new();
    write_pdp_csv(pdp, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

pub fn read_pdp_csv<R: BufRead>(input: R) -> Result<PowerDelayProfile, MultipathError> {
    let mut direction = None;
    let mut header_seen = false;
    let mut taps = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| MultipathError::Parse { line: line_no, message };
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("direction=") {
                let area: BodyArea = value.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
                direction = Some(area);
            }
            continue;
        }
        if !header_seen {
            if line != "delay_ns,power_db" {
                return Err(parse_err("expected header 'delay_ns,power_db'".into()));
            }
            header_seen = true;
            continue;
        }
        let (delay, power) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected 'delay_ns,power_db'".into()))?;
        let number = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(format!("'{}' is not a number", s.trim())))
        };
        taps.push(Tap {
            delay_ns: number(delay)?,
            power_db: number(power)?,
        });
    }
    let direction = direction.ok_or_else(|| MultipathError::Parse {
        line: 1,
        message: "missing '# direction=<side>' comment".into(),
    })?;
    PowerDelayProfile::new(direction, taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(taps: &[(f64, f64)]) -> PowerDelayProfile {
        PowerDelayProfile::new(
            BodyArea::Anterior,
            taps.iter().map(|&(delay_ns, power_db)| Tap { delay_ns, power_db }).collect(),
        )
        .unwrap()
    }

    fn deterministic(direction: BodyArea) -> PowerDelayProfile {
        let config = PdpConfig::default_for(direction).unwrap();
        synthesize_pdp(direction, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn single_tap_has_no_spread() {
        let s = dispersion_stats(&profile(&[(7.0, -3.0)]));
        assert_eq!(s.mean_excess_delay_ns, 7.0);
        assert_eq!(s.rms_delay_spread_ns, 0.0);
        assert!((s.total_power_db + 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_equal_taps() {
        let s = dispersion_stats(&profile(&[(0.0, 0.0), (10.0, 0.0)]));
        assert!((s.mean_excess_delay_ns - 5.0).abs() < 1e-9);
        assert!((s.rms_delay_spread_ns - 5.0).abs() < 1e-9);
        assert!((s.total_power_db - 10.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn three_to_one_taps() {
        let s = dispersion_stats(&profile(&[(0.0, 0.0), (4.0, -10.0 * 3f64.log10())]));
        assert!((s.mean_excess_delay_ns - 1.0).abs() < 1e-9);
        assert!((s.rms_delay_spread_ns - 3f64.sqrt()).abs() < 1e-9);
        // the rounded -4.771 dB only gets within 1e-4
        let rounded = dispersion_stats(&profile(&[(0.0, 0.0), (4.0, -4.771)]));
        assert!((rounded.rms_delay_spread_ns - 3f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn profile_validation() {
        let tap = |delay_ns, power_db| Tap { delay_ns, power_db };
        assert!(matches!(PowerDelayProfile::new(BodyArea::Anterior, vec![]), Err(MultipathError::Empty)));
        assert!(matches!(
            PowerDelayProfile::new(BodyArea::Region1, vec![tap(0.0, 0.0)]),
            Err(MultipathError::NotASide(BodyArea::Region1))
        ));
        assert!(matches!(
            PowerDelayProfile::new(BodyArea::Anterior, vec![tap(-1.0, 0.0)]),
            Err(MultipathError::BadDelay { index: 0 })
        ));
        assert!(matches!(
            PowerDelayProfile::new(BodyArea::Anterior, vec![tap(0.0, 0.0), tap(0.0, -1.0)]),
            Err(MultipathError::BadDelay { index: 1 })
        ));
        assert!(matches!(
            PowerDelayProfile::new(BodyArea::Anterior, vec![tap(0.0, f64::NAN)]),
            Err(MultipathError::BadPower { index: 0 })
        ));
    }

    #[test]
    fn two_db_per_tap_profile() {
        // decay constant giving exactly -2 dB per 1 ns tap
        let config = PdpConfig {
            spacing_ns: 1.0,
            decay_ns: 10.0 / (2.0 * LN_10),
            floor_db: 30.0,
            sigma_tap_db: 0.0,
            max_taps: 1024,
        };
        let pdp = synthesize_pdp(BodyArea::Anterior, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pdp.taps().len(), 16);
        for (k, tap) in pdp.taps().iter().enumerate() {
            assert!((tap.power_db + 2.0 * k as f64).abs() < 1e-9);
            assert_eq!(tap.delay_ns, k as f64);
        }
        // 2.171 ns rounds the slope to -2.0004 dB, pushing tap 15 below the floor
        let rounded = PdpConfig { decay_ns: 2.171, ..config };
        let pdp = synthesize_pdp(BodyArea::Anterior, &rounded, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pdp.taps().len(), 15);
    }

    #[test]
    fn slow_decay_is_capped() {
        let config = PdpConfig {
            decay_ns: 1e9,
            max_taps: 64,
            ..PdpConfig::default_for(BodyArea::Posterior).unwrap()
        };
        let pdp = synthesize_pdp(BodyArea::Posterior, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pdp.taps().len(), 64);
        assert!(pdp.taps().iter().all(|t| t.power_db > -1e-6));
    }

    #[test]
    fn invalid_configs() {
        let base = PdpConfig::default_for(BodyArea::Anterior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [
            PdpConfig { spacing_ns: 0.0, ..base },
            PdpConfig { decay_ns: -1.0, ..base },
            PdpConfig { floor_db: 0.0, ..base },
            PdpConfig { sigma_tap_db: -0.5, ..base },
            PdpConfig { max_taps: 0, ..base },
        ] {
            assert!(matches!(
                synthesize_pdp(BodyArea::Anterior, &bad, &mut rng),
                Err(MultipathError::InvalidConfig(_))
            ));
        }
        assert!(matches!(PdpConfig::default_for(BodyArea::Region2), Err(MultipathError::NotASide(_))));
    }

    #[test]
    fn sides_disperse_more_than_front_and_back() {
        let anterior = deterministic(BodyArea::Anterior).stats().rms_delay_spread_ns;
        let posterior = deterministic(BodyArea::Posterior).stats().rms_delay_spread_ns;
        for side in [BodyArea::LeftLateral, BodyArea::RightLateral] {
            let lateral = deterministic(side).stats().rms_delay_spread_ns;
            assert!(lateral > anterior && lateral > posterior, "{lateral} {anterior} {posterior}");
        }
    }

    #[test]
    fn rms_grows_with_decay_constant() {
        let base = PdpConfig::default_for(BodyArea::Anterior).unwrap();
        let mut last = -1.0;
        for step in 1..=40 {
            let config = PdpConfig { decay_ns: 0.5 * step as f64, ..base };
            let rms = synthesize_pdp(BodyArea::Anterior, &config, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
                .stats()
                .rms_delay_spread_ns;
            assert!(rms > last, "decay {}: {rms} <= {last}", config.decay_ns);
            last = rms;
        }
    }

    #[test]
    fn fading_is_seeded() {
        let config = PdpConfig {
            sigma_tap_db: 2.0,
            ..PdpConfig::default_for(BodyArea::LeftLateral).unwrap()
        };
        let a = synthesize_pdp(BodyArea::LeftLateral, &config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = synthesize_pdp(BodyArea::LeftLateral, &config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.taps().iter().enumerate().any(|(k, t)| (t.power_db - config.mean_tap_db(k)).abs() > 1e-6));
    }

    #[test]
    fn csv_round_trip() {
        let pdp = deterministic(BodyArea::RightLateral);
        let text = pdp_csv_string(&pdp);
        assert!(text.starts_with("# direction=RightLateral\ndelay_ns,power_db\n0,0.0000\n"));
        let mut written = Vec::new();
        write_pdp_csv(&pdp, &mut written).unwrap();
        assert_eq!(String::from_utf8(written).unwrap(), text);
        let back = read_pdp_csv(text.as_bytes()).unwrap();
        assert_eq!(back.direction(), BodyArea::RightLateral);
        assert_eq!(back.taps().len(), pdp.taps().len());
        assert!(read_pdp_csv("delay_ns,power_db\n0,0\n".as_bytes()).is_err());
    }

    fn arb_profile() -> impl Strategy<Value = PowerDelayProfile> {
        prop::collection::vec((0.01f64..5.0, -40.0f64..0.0), 1..20).prop_map(|v| {
            let mut delay = 0.0;
            let taps = v
                .into_iter()
                .map(|(gap, power_db)| {
                    let tap = Tap { delay_ns: delay, power_db };
                    delay += gap;
                    tap
                })
                .collect();
            PowerDelayProfile::new(BodyArea::Posterior, taps).unwrap()
        })
    }

    proptest! {
        #[test]
        fn rms_ignores_power_offset(pdp in arb_profile(), offset in -60.0f64..60.0) {
            let base = pdp.stats();
            let shifted = PowerDelayProfile::new(
                pdp.direction(),
                pdp.taps().iter().map(|t| Tap { delay_ns: t.delay_ns, power_db: t.power_db + offset }).collect(),
            ).unwrap();
            let s = shifted.stats();
            prop_assert!((s.rms_delay_spread_ns - base.rms_delay_spread_ns).abs() < 1e-9);
            prop_assert!((s.mean_excess_delay_ns - base.mean_excess_delay_ns).abs() < 1e-9);
            prop_assert!((s.total_power_db - base.total_power_db - offset).abs() < 1e-9);
        }

        #[test]
        fn delay_shift_moves_mean_only(pdp in arb_profile(), shift in 0.0f64..100.0) {
            let base = pdp.stats();
            let shifted = PowerDelayProfile::new(
                pdp.direction(),
                pdp.taps().iter().map(|t| Tap { delay_ns: t.delay_ns + shift, power_db: t.power_db }).collect(),
            ).unwrap();
            let s = shifted.stats();
            prop_assert!((s.mean_excess_delay_ns - base.mean_excess_delay_ns - shift).abs() < 1e-9);
            prop_assert!((s.rms_delay_spread_ns - base.rms_delay_spread_ns).abs() < 1e-9);
            prop_assert!(s.rms_delay_spread_ns >= 0.0);
        }
    }
}
