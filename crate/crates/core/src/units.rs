//! Unit conventions and conversions.
//!
//! Lengths are carried in nm, optical rates in 1/ns, photon timestamps in ps.
//! The FDTD solver runs in normalized units with c = 1, so its time unit is
//! "nm of light travel"; the helpers below convert between the two.

use std::f64::consts::PI;

/// Speed of light in vacuum, nm/s.
pub const C_NM_PER_S: f64 = 2.997_924_58e17;

/// Speed of light in vacuum, nm/ps.
pub const C_NM_PER_PS: f64 = 2.997_924_58e5;

/// Converts a normalized FDTD time (nm of light travel) to seconds.
pub fn light_nm_to_seconds(t_nm: f64) -> f64 {
    t_nm / C_NM_PER_S
}

/// Converts seconds to normalized FDTD time (nm of light travel).
pub fn seconds_to_light_nm(t_s: f64) -> f64 {
    t_s * C_NM_PER_S
}

/// Free-space angular wavenumber 2π/λ in rad/nm.
pub fn wavenumber(lambda_nm: f64) -> f64 {
    2.0 * PI / lambda_nm
}

/// Angular frequency in normalized units (rad per nm of light travel); equal to
/// the free-space wavenumber because c = 1.
pub fn angular_frequency(lambda_nm: f64) -> f64 {
    wavenumber(lambda_nm)
}

pub fn wavelength_from_angular(omega: f64) -> f64 {
    2.0 * PI / omega
}

/// Cavity photon (energy) lifetime Qλ/(2πc) in ps.
pub fn cavity_photon_lifetime_ps(q: f64, lambda_nm: f64) -> f64 {
    q * lambda_nm / (2.0 * PI * C_NM_PER_PS)
}

pub fn rate_per_ns_from_lifetime_ps(tau_ps: f64) -> f64 {
    1000.0 / tau_ps
}

pub fn lifetime_ps_from_rate_per_ns(rate: f64) -> f64 {
    1000.0 / rate
}
