//! dB / linear power conversions.

/// `10^(db / 10)`.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `10 log10(power)`.
#[inline]
pub fn linear_to_db(power: f64) -> f64 {
    10.0 * power.log10()
}
