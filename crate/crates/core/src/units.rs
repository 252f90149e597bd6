//! Unit conversions. Everything internal is in atomic units (hbar = 1).

/// Atomic unit of time in seconds.
pub const AU_TIME_SECONDS: f64 = 2.418_884_326_5e-17;

/// Atomic time units per picosecond (about 41341.374).
pub const AU_PER_PS: f64 = 1.0e-12 / AU_TIME_SECONDS;

pub fn ps_to_au(ps: f64) -> f64 {
    ps * AU_PER_PS
}

pub fn au_to_ps(au: f64) -> f64 {
    au / AU_PER_PS
}

/// Rate in atomic units for a lifetime given in picoseconds.
pub fn rate_from_lifetime_ps(lifetime_ps: f64) -> f64 {
    1.0 / ps_to_au(lifetime_ps)
}
