//! Flux-drive pulses and their envelopes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, invalid, Result};
use crate::numerics::integrate;

/// Gaussian edges are cut at this many widths.
pub const EDGE_WIDTHS: f64 = 2.5;

/// Pulse envelope, normalized to a peak value of 1.
///
/// Gaussian pieces are offset so that they reach exactly zero where they are
/// cut: `E = (g − g_cut)/(1 − g_cut)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    /// Gaussian ramps of width `sigma` (ns) cut at `±2.5σ`, joined by a
    /// plateau. Pulses shorter than `5σ` get proportionally narrower ramps.
    FlatTopGaussian { sigma: f64 },
    /// Single Gaussian of width `sigma` (ns) centred in the pulse.
    Gaussian { sigma: f64 },
    Rectangular,
}

impl Default for Envelope {
    fn default() -> Self {
        Envelope::FlatTopGaussian { sigma: 5.0 }
    }
}

fn offset_gaussian(x: f64, sigma: f64, cut: f64) -> f64 {
    let b = 0.5 * (x / sigma).powi(2);
    let a = 0.5 * (cut / sigma).powi(2);
    if b >= a {
        return 0.0;
    }
    // (e^{-b} − e^{-a}) / (1 − e^{-a}), written to stay accurate for small a
    let num = -(-b).exp() * (b - a).exp_m1();
    let den = -(-a).exp_m1();
    (num / den).clamp(0.0, 1.0)
}

impl Envelope {
    pub fn validate(&self) -> Result<()> {
        match self {
            Envelope::FlatTopGaussian { sigma } | Envelope::Gaussian { sigma } => ensure_positive("sigma", *sigma),
            Envelope::Rectangular => Ok(()),
        }
    }

    /// Length of each ramp, ns.
    pub fn edge(&self, t_pulse: f64) -> f64 {
        match *self {
            Envelope::FlatTopGaussian { sigma } => (EDGE_WIDTHS * sigma).min(0.5 * t_pulse),
            Envelope::Gaussian { .. } => 0.5 * t_pulse,
            Envelope::Rectangular => 0.0,
        }
    }

    /// Interval `[start, end]` on which `E = 1`.
    pub fn plateau(&self, t_pulse: f64) -> (f64, f64) {
        let e = self.edge(t_pulse);
        (e, t_pulse - e)
    }

    /// `E(t)` for a pulse of length `t_pulse`; zero outside `[0, t_pulse]`.
    pub fn value(&self, t: f64, t_pulse: f64) -> f64 {
        if !(0.0..=t_pulse).contains(&t) {
            return 0.0;
        }
        match *self {
            Envelope::Rectangular => 1.0,
            Envelope::Gaussian { sigma } => {
                let half = 0.5 * t_pulse;
                offset_gaussian(t - half, sigma, half)
            }
            Envelope::FlatTopGaussian { .. } => {
                let edge = self.edge(t_pulse);
                let width = edge / EDGE_WIDTHS;
                if t < edge {
                    offset_gaussian(edge - t, width, edge)
                } else if t > t_pulse - edge {
                    offset_gaussian(t - (t_pulse - edge), width, edge)
                } else {
                    1.0
                }
            }
        }
    }

    /// `(1/t_pulse)∫₀^{t_pulse} E(t)^k dt`.
    pub fn moment(&self, t_pulse: f64, k: u32) -> Result<f64> {
        ensure_positive("t_pulse", t_pulse)?;
        if k == 0 {
            return Ok(1.0);
        }
        let edge = self.edge(t_pulse);
        let ramp = |t: f64| self.value(t, t_pulse).powi(k as i32);
        let total = match self {
            Envelope::Rectangular => t_pulse,
            Envelope::Gaussian { .. } => 2.0 * integrate(ramp, 0.0, edge, 1e-15 * t_pulse),
            Envelope::FlatTopGaussian { .. } => {
                (t_pulse - 2.0 * edge) + 2.0 * integrate(ramp, 0.0, edge, 1e-15 * t_pulse)
            }
        };
        Ok(total / t_pulse)
    }
}

/// `(1/t_pulse)∫E^k dt`; see [`Envelope::moment`].
pub fn envelope_moment(envelope: &Envelope, t_pulse: f64, k: u32) -> Result<f64> {
    envelope.moment(t_pulse, k)
}

/// Flux drive `Φ(t)/Φ₀ = amplitude · E(t) · cos(2π·omega_d·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivePulse {
    /// Peak flux amplitude, units of Φ₀.
    pub amplitude: f64,
    /// Drive frequency ω_d/2π, GHz.
    pub omega_d: f64,
    /// Duration, ns.
    pub t_pulse: f64,
    pub envelope: Envelope,
    /// Carrier phase at `t = 0`, rad.
    #[serde(default)]
    pub phase: f64,
}

impl DrivePulse {
    pub fn new(amplitude: f64, omega_d: f64, t_pulse: f64, envelope: Envelope) -> Self {
        Self {
            amplitude,
            omega_d,
            t_pulse,
            envelope,
            phase: 0.0,
        }
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self { phase, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("amplitude", self.amplitude)?;
        ensure_positive("omega_d", self.omega_d)?;
        ensure_positive("t_pulse", self.t_pulse)?;
        if !self.phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        self.envelope.validate()
    }

    /// Peak reduced drive `φ̄ = 2π·amplitude`.
    pub fn phi_bar(&self) -> f64 {
        2.0 * PI * self.amplitude
    }

    /// Reduced flux displacement `φ(t) = φ̄ E(t) cos(2π f t + phase)`.
    pub fn phi(&self, t: f64) -> f64 {
        self.phi_bar()
            * self.envelope.value(t, self.t_pulse)
            * (2.0 * PI * self.omega_d * t + self.phase).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: Envelope = Envelope::FlatTopGaussian { sigma: 5.0 };

    #[test]
    fn flat_top_vanishes_at_endpoints() {
        for t_pulse in [5.0, 12.5, 25.0, 100.0] {
            assert!(FLAT.value(0.0, t_pulse) < 1e-3);
            assert!(FLAT.value(t_pulse, t_pulse) < 1e-3);
        }
        assert_eq!(FLAT.value(50.0, 100.0), 1.0);
    }

    #[test]
    fn flat_top_peak_is_one() {
        let g = Envelope::Gaussian { sigma: 5.0 };
        assert!((g.value(20.0, 40.0) - 1.0).abs() < 1e-15);
        assert!((FLAT.value(12.5, 25.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn short_pulse_has_no_plateau() {
        let (a, b) = FLAT.plateau(10.0);
        assert_eq!(a, 5.0);
        assert_eq!(b, 5.0);
    }

    #[test]
    fn rectangular_moments_are_one() {
        for k in 1..=5 {
            assert_eq!(Envelope::Rectangular.moment(37.0, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn moments_decrease_with_order() {
        for t_pulse in [10.0, 30.0, 200.0] {
            let m: Vec<f64> = (1..=5).map(|k| FLAT.moment(t_pulse, k).unwrap()).collect();
            for w in m.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn pulse_validation() {
        let p = DrivePulse::new(0.01, 0.44, 100.0, FLAT);
        assert!(p.validate().is_ok());
        assert!(DrivePulse::new(-0.01, 0.44, 100.0, FLAT).validate().is_err());
        assert!(DrivePulse::new(0.01, 0.44, 0.0, FLAT).validate().is_err());
        assert!(DrivePulse::new(0.01, 0.44, 10.0, Envelope::Gaussian { sigma: 0.0 })
            .validate()
            .is_err());
    }
}
