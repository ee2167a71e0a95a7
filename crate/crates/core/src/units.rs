//! Physical constants (exact SI values) and the conversions used at module
//! boundaries.
//!
//! Public frequencies are ordinary frequencies in GHz and times are in ns, so
//! a phase accumulated over `t` ns at `f` GHz is `2π·f·t`.

use std::f64::consts::PI;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Magnetic flux quantum h/2e, Wb.
pub const FLUX_QUANTUM: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);
/// Superconducting resistance quantum h/(2e)², Ω.
pub const RESISTANCE_QUANTUM: f64 = PLANCK / (4.0 * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE);

/// GHz to Hz.
pub fn ghz_to_hz(f: f64) -> f64 {
    f * 1e9
}

/// Ordinary frequency (GHz) to angular frequency (rad/ns).
pub fn ghz_to_rad_per_ns(f: f64) -> f64 {
    2.0 * PI * f
}

/// Ordinary frequency (MHz) to angular rate (rad/µs).
pub fn mhz_to_rad_per_us(f: f64) -> f64 {
    2.0 * PI * f
}

/// Reduced peak drive φ̄ = 2π·Φ/Φ₀ from a flux amplitude in units of Φ₀.
pub fn phi_bar(amplitude: f64) -> f64 {
    2.0 * PI * amplitude
}

/// Photon energy over thermal energy, h·f/(k_B·T), with `f` in GHz and `t` in K.
pub fn reduced_energy(f: f64, t: f64) -> f64 {
    PLANCK * ghz_to_hz(f) / (BOLTZMANN * t)
}

/// Wrap an angle to (−π, π].
pub fn wrap_phase(theta: f64) -> f64 {
    let mut x = theta.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}
