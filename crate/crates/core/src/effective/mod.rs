//! Perturbative effective models of the sub-harmonic drive.
//!
//! The closed forms cover the three-photon drive up to fifth order in
//! `1/ω_d`. Everything is expressed in GHz. With `H_eff` written in the
//! two-level subspace as `(Δ + δ₃) b†b + Ω₃ (b† + b)`, the qubit completes
//! a full population cycle in `1/(2|Ω₃|)` at resonance.

pub mod floquet;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::circuit::ThreeLevelReduction;
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::numerics::fit_line;
pub use crate::pulse::envelope_moment;
use crate::pulse::Envelope;

pub use floquet::{
    floquet_magnus_generic, ladder_frame_n3, nearest_harmonic_frame, solve_resonance_generic,
    stark_shift_generic, FourierHamiltonian,
};

/// Highest printed order of the three-photon expansion.
pub const MAX_CLOSED_ORDER: usize = 5;

/// Residual of the resonance condition at which the solver stops, GHz (1 Hz).
const ROOT_TOLERANCE: f64 = 1e-9;

/// A small parameter of the expansion that is not small.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ratio", content = "value", rename_all = "snake_case")]
pub enum ValidityWarning {
    /// `|Δ|/(2ω_d)`.
    Detuning(f64),
    /// `|α|/(4ω_d)`.
    Anharmonicity(f64),
    /// `max(|β₁|, |β₂|)·|φ̄|/(2ω_d)`.
    Drive(f64),
}

impl fmt::Display for ValidityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidityWarning::Detuning(r) => write!(f, "|Δ|/(2ω_d) = {r:.3} is not small"),
            ValidityWarning::Anharmonicity(r) => write!(f, "|α|/(4ω_d) = {r:.3} is not small"),
            ValidityWarning::Drive(r) => write!(f, "|β φ̄|/(2ω_d) = {r:.3} is not small"),
        }
    }
}

/// Expansion parameters at or above 1.
pub fn validity_warnings(
    reduction: &ThreeLevelReduction,
    delta_cap: f64,
    omega_d: f64,
    phi_bar: f64,
) -> Vec<ValidityWarning> {
    let beta = reduction.beta_1.abs().max(reduction.beta_2.abs());
    let ratios = [
        ValidityWarning::Detuning(delta_cap.abs() / (2.0 * omega_d)),
        ValidityWarning::Anharmonicity(reduction.alpha.abs() / (4.0 * omega_d)),
        ValidityWarning::Drive(beta * phi_bar.abs() / (2.0 * omega_d)),
    ];
    ratios
        .into_iter()
        .filter(|w| match *w {
            ValidityWarning::Detuning(r) | ValidityWarning::Anharmonicity(r) | ValidityWarning::Drive(r) => {
                !(r < 1.0)
            }
        })
        .collect()
}

/// Coefficients of one order of `H_eff`, GHz.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OrderTerm {
    pub order: usize,
    /// Coefficient of `b†b`.
    pub number: f64,
    /// Coefficient of `b†b†bb`.
    pub kerr: f64,
    /// Coefficient of `b† + b`.
    pub drive: f64,
}

/// Orders 1 to 5 of the three-photon effective Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeffTerms {
    pub terms: [OrderTerm; MAX_CLOSED_ORDER],
    pub warnings: Vec<ValidityWarning>,
}

impl HeffTerms {
    /// Term of the given order (1-based).
    pub fn order(&self, order: usize) -> &OrderTerm {
        &self.terms[order - 1]
    }

    /// Sum of the `b†b` coefficients from order 2 up to `max_order`.
    pub fn stark_shift(&self, max_order: usize) -> f64 {
        self.terms[1..max_order.min(MAX_CLOSED_ORDER)].iter().map(|t| t.number).sum()
    }

    /// Sum of the `b† + b` coefficients up to `max_order`.
    pub fn drive(&self, max_order: usize) -> f64 {
        self.terms[..max_order.min(MAX_CLOSED_ORDER)].iter().map(|t| t.drive).sum()
    }
}

/// Per-order prefactors of the three-photon series; powers of `Eφ̄` are
/// applied by the caller.
#[derive(Debug, Clone, Copy)]
struct Series {
    /// `b†b` coefficients of `(Eφ̄)²` and `(Eφ̄)⁴`.
    number: [(f64, f64); MAX_CLOSED_ORDER],
    /// `b† + b` coefficients of `(Eφ̄)³` and `(Eφ̄)⁵`.
    drive: [(f64, f64); MAX_CLOSED_ORDER],
}

fn series(r: &ThreeLevelReduction, delta: f64, w: f64) -> Series {
    let (b1, b2, al, d) = (r.beta_1, r.beta_2, r.alpha, delta);
    let a = al * (b1 + b2).powi(2);
    let b = b2 * (2.0 * b1 + b2);
    let quartic = b2 * b2 * (7.0 * b1 * b1 + 10.0 * b1 * b2 + 4.0 * b2 * b2);
    let (w2, w3, w4) = (w * w, w.powi(3), w.powi(4));

    let number = [
        (0.0, 0.0),
        (-3.0 * b / (8.0 * w), 0.0),
        (5.0 * (a + b * d) / (32.0 * w2), 0.0),
        (
            -9.0 * (a * (al + 2.0 * d) + b * d * d) / (128.0 * w3),
            -21.0 * quartic / (512.0 * w3),
        ),
        (
            17.0 * (a * (al * al + 3.0 * al * d + 3.0 * d * d) + b * d.powi(3)) / (512.0 * w4),
            (al * b2 * (313.0 * b1 + 527.0 * b2) * (b1 + b2).powi(2) + 107.0 * quartic * d) / (2048.0 * w4),
        ),
    ];
    let drive = [
        (0.0, 0.0),
        (0.0, 0.0),
        (b1 * b / (32.0 * w2), 0.0),
        (-b1 * (6.0 * a + 13.0 * b * d) / (768.0 * w3), 0.0),
        (
            b1 * (29.0 * b * d * d + 6.0 * a * (al + 3.0 * d)) / (3072.0 * w4),
            b1 * b2 * b2 * (29.0 * b1 * b1 + 38.0 * b1 * b2 + 14.0 * b2 * b2) / (1024.0 * w4),
        ),
    ];
    Series { number, drive }
}

/// Orders 1 to 5 of `H_eff` for the three-photon drive at instantaneous
/// envelope value `envelope_value`.
///
/// `delta_cap = ω_eg − 3ω_d`. The result is returned even when the expansion
/// parameters are large; see [`HeffTerms::warnings`].
pub fn heff_n3_terms(
    reduction: &ThreeLevelReduction,
    delta_cap: f64,
    omega_d: f64,
    phi_bar: f64,
    envelope_value: f64,
) -> Result<HeffTerms> {
    ensure_positive("omega_d", omega_d)?;
    let s = series(reduction, delta_cap, omega_d);
    let p = envelope_value * phi_bar;
    let mut terms = [OrderTerm::default(); MAX_CLOSED_ORDER];
    for (k, term) in terms.iter_mut().enumerate() {
        let (n2, n4) = s.number[k];
        let (d3, d5) = s.drive[k];
        *term = OrderTerm {
            order: k + 1,
            number: n2 * p.powi(2) + n4 * p.powi(4),
            kerr: 0.0,
            drive: d3 * p.powi(3) + d5 * p.powi(5),
        };
    }
    terms[0].number = delta_cap;
    terms[0].kerr = 0.5 * reduction.alpha;
    Ok(HeffTerms {
        terms,
        warnings: validity_warnings(reduction, delta_cap, omega_d, phi_bar),
    })
}

/// Time averages `(1/t)∫E^k dt` for `k = 2..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMoments {
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub e5: f64,
}

impl EnvelopeMoments {
    /// All moments equal to one.
    pub const UNIT: Self = Self {
        e2: 1.0,
        e3: 1.0,
        e4: 1.0,
        e5: 1.0,
    };

    pub fn of(envelope: &Envelope, t_pulse: f64) -> Result<Self> {
        Ok(Self {
            e2: envelope.moment(t_pulse, 2)?,
            e3: envelope.moment(t_pulse, 3)?,
            e4: envelope.moment(t_pulse, 4)?,
            e5: envelope.moment(t_pulse, 5)?,
        })
    }
}

/// Three-photon Stark shift `δ₃`, GHz.
///
/// The `E²` and `E⁴` weights are time averages of the envelope; pass
/// [`EnvelopeMoments::UNIT`] for the steady-state value.
pub fn stark_shift_n3(
    reduction: &ThreeLevelReduction,
    omega_d: f64,
    delta_cap: f64,
    phi_bar: f64,
    moments: &EnvelopeMoments,
) -> Result<f64> {
    ensure_positive("omega_d", omega_d)?;
    let s = series(reduction, delta_cap, omega_d);
    let (p2, p4) = (phi_bar.powi(2), phi_bar.powi(4));
    Ok(s.number
        .iter()
        .map(|&(n2, n4)| moments.e2 * n2 * p2 + moments.e4 * n4 * p4)
        .sum())
}

/// Three-photon Rabi rate `Ω₃`, GHz, for a pulse of length `t_pulse`.
///
/// Signed: odd in `φ̄`.
pub fn rabi_rate_n3(
    reduction: &ThreeLevelReduction,
    omega_d: f64,
    delta_cap: f64,
    phi_bar: f64,
    envelope: &Envelope,
    t_pulse: f64,
) -> Result<f64> {
    let moments = EnvelopeMoments::of(envelope, t_pulse)?;
    rabi_rate_n3_with(reduction, omega_d, delta_cap, phi_bar, &moments)
}

/// [`rabi_rate_n3`] with precomputed envelope moments.
pub fn rabi_rate_n3_with(
    reduction: &ThreeLevelReduction,
    omega_d: f64,
    delta_cap: f64,
    phi_bar: f64,
    moments: &EnvelopeMoments,
) -> Result<f64> {
    ensure_positive("omega_d", omega_d)?;
    let s = series(reduction, delta_cap, omega_d);
    let (p3, p5) = (phi_bar.powi(3), phi_bar.powi(5));
    Ok(s.drive
        .iter()
        .map(|&(d3, d5)| moments.e3 * d3 * p3 + moments.e5 * d5 * p5)
        .sum())
}

/// Root of `Δ + δ(Δ) = 0`.
///
/// `f(Δ)` must return `Δ + δ(Δ)`. The bracket is `±5|f(0)|`, capped at
/// `±limit`; bisection narrows it and a secant step finishes.
pub(crate) fn solve_detuning(f: &dyn Fn(f64) -> Result<f64>, limit: f64) -> Result<f64> {
    let f0 = f(0.0)?;
    if f0 == 0.0 {
        return Ok(0.0);
    }
    let half = (5.0 * f0.abs()).min(limit);
    let (mut lo, mut hi) = (-half, half);
    let (mut f_lo, f_hi) = (f(lo)?, f(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoResonance(format!(
            "Δ + δ(Δ) keeps its sign on [{lo:e}, {hi:e}] GHz ({f_lo:e}, {f_hi:e})"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() < ROOT_TOLERANCE {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let (mut x0, mut x1) = (lo, hi);
    let (mut y0, mut y1) = (f(x0)?, f(x1)?);
    for _ in 0..50 {
        if y1.abs() < ROOT_TOLERANCE {
            return Ok(x1);
        }
        if y1 == y0 {
            break;
        }
        let x2 = x1 - y1 * (x1 - x0) / (y1 - y0);
        (x0, y0) = (x1, y1);
        x1 = x2;
        y1 = f(x1)?;
    }
    if y1.abs() < ROOT_TOLERANCE {
        Ok(x1)
    } else {
        Err(Error::NoConvergence {
            what: "resonance condition",
            iterations: 90,
            last: format!("Δ = {x1:e} GHz, residual {y1:e} GHz"),
        })
    }
}

/// Drive frequency `ω_d*` (GHz) solving `Δ + δ_n(Δ) = 0` with the plateau
/// value `E = 1`.
///
/// Only `n = 3` has closed forms; other orders go through
/// [`solve_resonance_generic`].
pub fn solve_resonance(reduction: &ThreeLevelReduction, n: u32, phi_bar: f64) -> Result<f64> {
    if n != 3 {
        return Err(invalid("n", format!("closed forms exist for n = 3 only, got {n}")));
    }
    ensure_positive("omega_eg", reduction.omega_eg)?;
    if !phi_bar.is_finite() {
        return Err(invalid("phi_bar", "must be finite"));
    }
    if phi_bar == 0.0 {
        return Ok(reduction.omega_eg / 3.0);
    }
    let nf = n as f64;
    let residual = |d: f64| -> Result<f64> {
        let w = (reduction.omega_eg - d) / nf;
        Ok(d + stark_shift_n3(reduction, w, d, phi_bar, &EnvelopeMoments::UNIT)?)
    };
    let d = solve_detuning(&residual, 0.5 * reduction.omega_eg)?;
    Ok((reduction.omega_eg - d) / nf)
}

/// Two-level effective model of an `n`-photon drive at resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDriveModel {
    pub n: u32,
    /// GHz.
    pub omega_d: f64,
    /// `ω_eg − n·ω_d`, GHz.
    pub delta_cap: f64,
    /// Stark shift, GHz.
    pub delta_n: f64,
    /// Drive-induced anharmonicity shift, GHz. Not derived; never used.
    pub alpha_n: Option<f64>,
    /// Rabi rate, GHz.
    pub omega_rabi: f64,
    pub phi_bar: f64,
    pub reduction: ThreeLevelReduction,
}

impl EffectiveDriveModel {
    /// Three-photon model at the solved resonance for a pulse of length
    /// `t_pulse`.
    pub fn n3(reduction: &ThreeLevelReduction, phi_bar: f64, envelope: &Envelope, t_pulse: f64) -> Result<Self> {
        let omega_d = solve_resonance(reduction, 3, phi_bar)?;
        let delta_cap = reduction.omega_eg - 3.0 * omega_d;
        let moments = EnvelopeMoments::of(envelope, t_pulse)?;
        Ok(Self {
            n: 3,
            omega_d,
            delta_cap,
            delta_n: stark_shift_n3(reduction, omega_d, delta_cap, phi_bar, &EnvelopeMoments::UNIT)?,
            alpha_n: None,
            omega_rabi: rabi_rate_n3_with(reduction, omega_d, delta_cap, phi_bar, &moments)?,
            phi_bar,
            reduction: *reduction,
        })
    }

    /// Excited population after `t` ns of constant drive, starting in `|g⟩`.
    pub fn excited_population(&self, t: f64) -> f64 {
        let detuning = self.delta_cap + self.delta_n;
        let omega = self.omega_rabi;
        let gen = (0.25 * detuning * detuning + omega * omega).sqrt();
        if gen == 0.0 {
            return 0.0;
        }
        (omega / gen).powi(2) * (2.0 * std::f64::consts::PI * gen * t).sin().powi(2)
    }

    /// Duration of a π rotation at resonance, ns.
    pub fn t_pi(&self) -> f64 {
        1.0 / (4.0 * self.omega_rabi.abs())
    }
}

/// `value = prefactor · amplitude^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub prefactor: f64,
}

/// Least-squares fit of `log(value)` against `log(amplitude)`.
pub fn fit_power_law(amplitudes: &[f64], values: &[f64]) -> Result<PowerLaw> {
    if amplitudes.len() != values.len() || amplitudes.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "power-law fit needs at least 4 paired points, got {} and {}",
            amplitudes.len(),
            values.len()
        )));
    }
    if amplitudes.iter().chain(values).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("power-law fit needs positive finite data".into()));
    }
    let x: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let line = fit_line(&x, &y)?;
    Ok(PowerLaw {
        exponent: line.slope,
        exponent_stderr: line.slope_stderr,
        prefactor: line.intercept.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn reference() -> ThreeLevelReduction {
        ThreeLevelReduction {
            omega_eg: 1.33237726071,
            alpha: 0.81310957401,
            beta_1: 1.50514984564,
            beta_2: -0.31629791064,
        }
    }

    #[test]
    fn undriven_keeps_only_first_order() {
        let h = heff_n3_terms(&reference(), 0.01, 0.44, 0.0, 1.0).unwrap();
        assert_eq!(h.order(1).number, 0.01);
        assert_eq!(h.order(1).kerr, 0.5 * reference().alpha);
        for k in 2..=5 {
            assert_eq!(h.order(k).number, 0.0);
            assert_eq!(h.order(k).drive, 0.0);
        }
    }

    #[test]
    fn linear_ladder_keeps_alpha_mediated_drive() {
        let r = ThreeLevelReduction { beta_2: 0.0, ..reference() };
        let (w, p) = (0.44, 0.1);
        let h = heff_n3_terms(&r, 0.0, w, p, 1.0).unwrap();
        assert_eq!(h.order(2).number, 0.0);
        assert_eq!(h.order(3).drive, 0.0);
        let expected = -r.beta_1 * 6.0 * r.alpha * r.beta_1.powi(2) / (768.0 * w.powi(3)) * p.powi(3);
        assert!((h.order(4).drive - expected).abs() < 1e-15);
    }

    #[test]
    fn leading_stark_coefficient() {
        let r = reference();
        let w = r.omega_eg / 3.0;
        let p = 1e-4;
        let d = stark_shift_n3(&r, w, 0.0, p, &EnvelopeMoments::UNIT).unwrap();
        let b = r.beta_2 * (2.0 * r.beta_1 + r.beta_2);
        let lead = -3.0 * b / (8.0 * w) + 5.0 * r.alpha * (r.beta_1 + r.beta_2).powi(2) / (32.0 * w * w)
            - 9.0 * r.alpha.powi(2) * (r.beta_1 + r.beta_2).powi(2) / (128.0 * w.powi(3))
            + 17.0 * r.alpha.powi(3) * (r.beta_1 + r.beta_2).powi(2) / (512.0 * w.powi(4));
        assert!((d / (p * p) - lead).abs() < 1e-6 * lead.abs());
        assert!(d > 0.0);
    }

    #[test]
    fn stark_shift_matches_term_sum() {
        let r = reference();
        let h = heff_n3_terms(&r, 0.003, 0.443, 0.2, 1.0).unwrap();
        let d = stark_shift_n3(&r, 0.443, 0.003, 0.2, &EnvelopeMoments::UNIT).unwrap();
        assert!((h.stark_shift(5) - d).abs() < 1e-15);
        let o = rabi_rate_n3_with(&r, 0.443, 0.003, 0.2, &EnvelopeMoments::UNIT).unwrap();
        assert!((h.drive(5) - o).abs() < 1e-15);
    }

    #[test]
    fn resonance_undriven_is_third_of_qubit() {
        let r = reference();
        assert_eq!(solve_resonance(&r, 3, 0.0).unwrap(), r.omega_eg / 3.0);
    }

    #[test]
    fn resonance_satisfies_condition() {
        let r = reference();
        for a in [0.005, 0.01, 0.02, 0.04] {
            let p = 2.0 * PI * a;
            let w = solve_resonance(&r, 3, p).unwrap();
            let d = r.omega_eg - 3.0 * w;
            let f = d + stark_shift_n3(&r, w, d, p, &EnvelopeMoments::UNIT).unwrap();
            assert!(f.abs() < 1e-6, "residual {f}");
        }
    }

    #[test]
    fn resonance_rises_with_drive() {
        let r = reference();
        let ws: Vec<f64> = (1..=8).map(|i| solve_resonance(&r, 3, 2.0 * PI * 0.005 * i as f64).unwrap()).collect();
        for w in ws.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn rejects_other_orders() {
        assert!(solve_resonance(&reference(), 5, 0.1).is_err());
    }

    #[test]
    fn rabi_rate_is_cubic_at_small_drive() {
        let r = reference();
        let w = r.omega_eg / 3.0;
        let o1 = rabi_rate_n3(&r, w, 0.0, 1e-4, &Envelope::Rectangular, 50.0).unwrap();
        let o2 = rabi_rate_n3(&r, w, 0.0, 2e-4, &Envelope::Rectangular, 50.0).unwrap();
        assert!((o2 / o1 - 8.0).abs() < 1e-6);
    }

    #[test]
    fn warnings_flag_large_ratios() {
        let r = reference();
        assert!(validity_warnings(&r, 0.0, 0.44, 0.1).is_empty());
        let w = validity_warnings(&r, 0.0, 0.15, 0.1);
        assert!(w.iter().any(|w| matches!(w, ValidityWarning::Anharmonicity(_))));
        assert!(heff_n3_terms(&r, 0.0, 0.15, 0.1, 1.0).unwrap().warnings.len() == 1);
    }

    #[test]
    fn model_flops_fully_at_resonance() {
        let r = reference();
        let m = EffectiveDriveModel::n3(&r, 2.0 * PI * 0.03, &Envelope::Rectangular, 100.0).unwrap();
        assert!((m.excited_population(m.t_pi()) - 1.0).abs() < 1e-12);
        assert!(m.alpha_n.is_none());
    }

    #[test]
    fn power_law_recovers_cubic() {
        let x = [0.01, 0.02, 0.03, 0.04, 0.05];
        let y: Vec<f64> = x.iter().map(|v| 7.0 * v * v * v).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.exponent - 3.0).abs() < 1e-9);
        assert!((f.prefactor - 7.0).abs() < 1e-7);
    }

    #[test]
    fn power_law_rejects_bad_data() {
        assert!(fit_power_law(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
