//! Decoherence arithmetic for the flux line and the readout resonator.
//!
//! Interfaces take frequencies in GHz (or MHz for resonator linewidths),
//! times in µs and temperatures in K. Internally everything is SI.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::circuit::EigenSystem;
use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};
use crate::units::{ghz_to_hz, reduced_energy, BOLTZMANN, FLUX_QUANTUM, HBAR, PLANCK, RESISTANCE_QUANTUM};

/// A rate, stored in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rate(f64);

impl Rate {
    pub const ZERO: Rate = Rate(0.0);

    pub fn per_s(r: f64) -> Self {
        Rate(r)
    }

    pub fn per_us(r: f64) -> Self {
        Rate(r * 1e6)
    }

    pub fn per_ms(r: f64) -> Self {
        Rate(r * 1e3)
    }

    /// `1/t` for `t` in µs.
    pub fn from_time_us(t: f64) -> Self {
        Rate(1e6 / t)
    }

    /// `1/t` for `t` in ms.
    pub fn from_time_ms(t: f64) -> Self {
        Rate(1e3 / t)
    }

    pub fn as_per_s(self) -> f64 {
        self.0
    }

    pub fn as_per_us(self) -> f64 {
        self.0 * 1e-6
    }

    pub fn as_per_ms(self) -> f64 {
        self.0 * 1e-3
    }

    /// Characteristic time, µs.
    pub fn time_us(self) -> f64 {
        1e6 / self.0
    }

    /// Characteristic time, ms.
    pub fn time_ms(self) -> f64 {
        1e3 / self.0
    }
}

impl std::ops::Add for Rate {
    type Output = Rate;
    fn add(self, o: Rate) -> Rate {
        Rate(self.0 + o.0)
    }
}

impl std::ops::Mul<f64> for Rate {
    type Output = Rate;
    fn mul(self, k: f64) -> Rate {
        Rate(self.0 * k)
    }
}

impl std::iter::Sum for Rate {
    fn sum<I: Iterator<Item = Rate>>(iter: I) -> Rate {
        Rate(iter.map(|r| r.0).sum())
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} 1/s", self.0)
    }
}

/// `R(f)` and `|Z(f)|` of the line, Ω.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Impedance {
    /// Purely resistive, `R = |Z| = ohms`.
    Matched { ohms: f64 },
    /// Frequency-independent `R` and `|Z|`.
    Fixed { re: f64, abs: f64 },
    /// Arbitrary `f (GHz) → (R, |Z|)`.
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for Impedance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Impedance::Matched { ohms } => write!(f, "Matched {{ ohms: {ohms} }}"),
            Impedance::Fixed { re, abs } => write!(f, "Fixed {{ re: {re}, abs: {abs} }}"),
            Impedance::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Default for Impedance {
    fn default() -> Self {
        Impedance::Matched { ohms: 50.0 }
    }
}

impl Impedance {
    pub fn at(&self, f: f64) -> (f64, f64) {
        match self {
            Impedance::Matched { ohms } => (*ohms, *ohms),
            Impedance::Fixed { re, abs } => (*re, *abs),
            Impedance::Custom(z) => z(f),
        }
    }

    /// `R/|Z|²` at `f` GHz, 1/Ω.
    pub fn conductance(&self, f: f64) -> Result<f64> {
        let (re, abs) = self.at(f);
        ensure_non_negative("impedance real part", re)?;
        ensure_positive("impedance magnitude", abs)?;
        if re > abs * (1.0 + 1e-12) {
            return Err(invalid("impedance", format!("R = {re} Ω exceeds |Z| = {abs} Ω")));
        }
        Ok(re / (abs * abs))
    }
}

/// Electromagnetic environment of the flux line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEnvironment {
    #[serde(default)]
    pub impedance: Impedance,
    /// Bath temperature, K. Zero means the zero-temperature limit.
    pub temperature: f64,
    /// Power transmission of the filter at the qubit frequency; 1 without a
    /// filter.
    #[serde(default = "unit")]
    pub filter_power_attenuation: f64,
}

fn unit() -> f64 {
    1.0
}

impl NoiseEnvironment {
    /// Unfiltered matched 50 Ω line at `temperature`.
    pub fn matched_line(temperature: f64) -> Self {
        Self {
            impedance: Impedance::default(),
            temperature,
            filter_power_attenuation: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("temperature", self.temperature)?;
        let a = self.filter_power_attenuation;
        if !(a > 0.0 && a <= 1.0) {
            return Err(invalid("filter_power_attenuation", format!("must lie in (0, 1], got {a}")));
        }
        Ok(())
    }
}

/// `1 + coth(hf/2k_BT)`; 2 at zero temperature.
fn thermal_bracket(f: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 2.0;
    }
    let x = 0.5 * reduced_energy(f, t);
    1.0 + 1.0 / x.tanh()
}

/// Current-noise spectral density `ħω·(R/|Z|²)·[1 + coth(ħω/2k_BT)]`, A²/Hz.
pub fn psd(env: &NoiseEnvironment, f: f64) -> Result<f64> {
    ensure_positive("f", f)?;
    env.validate()?;
    let omega = 2.0 * PI * ghz_to_hz(f);
    Ok(HBAR * omega * env.impedance.conductance(f)? * thermal_bracket(f, env.temperature))
}

/// Golden-rule rate `|⟨g|Â|e⟩|²·S/ħ²`.
///
/// `element` couples to the noise with spectral density `s`; with the
/// current noise of [`psd`], `element` is a flux in Wb.
pub fn relaxation_rate(element: f64, s: f64) -> Result<Rate> {
    ensure_non_negative("spectral density", s)?;
    Ok(Rate::per_s(element * element * s / (HBAR * HBAR)))
}

/// Inductive coupling of the qubit to the flux line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingGeometry {
    /// Mutual inductance `M`, pH.
    pub mutual_inductance: f64,
    /// Qubit inductance `L`, pH.
    pub qubit_inductance: f64,
    /// `|⟨g|φ̂|e⟩|`.
    pub phase_matrix_element: f64,
}

/// Inductance (pH) of an inductive energy `e_l` (GHz).
pub fn inductance_from_energy(e_l: f64) -> f64 {
    let phi0 = FLUX_QUANTUM / (2.0 * PI);
    phi0 * phi0 / (PLANCK * ghz_to_hz(e_l)) * 1e12
}

impl CouplingGeometry {
    /// Geometry of a diagonalized circuit with mutual inductance `m` pH.
    pub fn from_circuit(eigs: &EigenSystem, m: f64) -> Self {
        Self {
            mutual_inductance: m,
            qubit_inductance: inductance_from_energy(eigs.params.e_l),
            phase_matrix_element: eigs.phase_elements[(0, 1)].abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("mutual_inductance", self.mutual_inductance)?;
        ensure_positive("qubit_inductance", self.qubit_inductance)?;
        ensure_non_negative("phase_matrix_element", self.phase_matrix_element)
    }

    /// `⟨g|M Î|e⟩` with `Î = (Φ₀/2π)φ̂/L`, Wb.
    pub fn flux_element(&self) -> f64 {
        self.mutual_inductance / self.qubit_inductance * FLUX_QUANTUM / (2.0 * PI) * self.phase_matrix_element
    }
}

/// Decay rate through the flux line at `f_eg` GHz,
/// `f·(R_Q R/|Z|²)·(M/L)²·|⟨g|φ̂|e⟩|²·[1 + coth(hf/2k_BT)]`, scaled by the
/// filter transmission.
pub fn flux_line_decay(geom: &CouplingGeometry, env: &NoiseEnvironment, f_eg: f64) -> Result<Rate> {
    geom.validate()?;
    env.validate()?;
    ensure_positive("f_eg", f_eg)?;
    let ratio = geom.mutual_inductance / geom.qubit_inductance;
    let g = env.impedance.conductance(f_eg)?;
    Ok(Rate::per_s(
        ghz_to_hz(f_eg)
            * RESISTANCE_QUANTUM
            * g
            * ratio
            * ratio
            * geom.phase_matrix_element.powi(2)
            * thermal_bracket(f_eg, env.temperature)
            * env.filter_power_attenuation,
    ))
}

/// Mutual inductance (pH) at which [`flux_line_decay`] equals `target`.
pub fn infer_mutual_inductance(
    target: Rate,
    geom: &CouplingGeometry,
    env: &NoiseEnvironment,
    f_eg: f64,
) -> Result<f64> {
    let probe = CouplingGeometry {
        mutual_inductance: 1.0,
        ..*geom
    };
    let unit_rate = flux_line_decay(&probe, env, f_eg)?;
    if unit_rate.as_per_s() == 0.0 {
        return Err(Error::Degenerate("the line does not couple to the qubit".into()));
    }
    ensure_non_negative("target rate", target.as_per_s())?;
    Ok((target.as_per_s() / unit_rate.as_per_s()).sqrt())
}

/// Thermal occupation `1/(exp(hf/k_BT) − 1)`; zero at zero temperature.
pub fn bose_einstein(f: f64, t: f64) -> Result<f64> {
    ensure_positive("f", f)?;
    ensure_non_negative("temperature", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / reduced_energy(f, t).exp_m1())
}

/// `Σ_i γ_i (2 n_th(f, T_i) + 1)`.
pub fn thermal_decay(couplings: &[(Rate, f64)], f_eg: f64) -> Result<Rate> {
    couplings
        .iter()
        .map(|&(g, t)| {
            ensure_non_negative("coupling rate", g.as_per_s())?;
            Ok(g * (2.0 * bose_einstein(f_eg, t)? + 1.0))
        })
        .sum()
}

/// Bath coupling `γ₀` from `T₁` with and without a filter of power
/// transmission `a`, using `1/T₁,LP − 1/T₁,UF = γ₀(A − 1)(2n_th + 1)`.
pub fn infer_bath_coupling(t1_filtered: f64, t1_unfiltered: f64, a: f64, t_bath: f64, f_eg: f64) -> Result<Rate> {
    ensure_positive("t1_filtered", t1_filtered)?;
    ensure_positive("t1_unfiltered", t1_unfiltered)?;
    if t1_filtered == t1_unfiltered {
        return Err(Error::Degenerate("filtered and unfiltered T1 are equal".into()));
    }
    if t1_unfiltered > t1_filtered {
        return Err(Error::Precondition(format!(
            "filtered T1 ({t1_filtered} µs) must exceed unfiltered T1 ({t1_unfiltered} µs)"
        )));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(invalid("a", format!("must lie in (0, 1), got {a}")));
    }
    if 1.0 - a < 1e-12 {
        return Err(Error::Degenerate("filter transmission is 1; the T1 difference carries no information".into()));
    }
    let n = bose_einstein(f_eg, t_bath)?;
    let diff = 1.0 / t1_filtered - 1.0 / t1_unfiltered;
    Ok(Rate::per_us(diff / ((a - 1.0) * (2.0 * n + 1.0))))
}

/// `T = −(hf/k_B)/ln(p_e/p_g)`, K.
pub fn effective_temperature(p_e: f64, p_g: f64, f_eg: f64) -> Result<f64> {
    ensure_positive("f_eg", f_eg)?;
    if !(p_e > 0.0 && p_g > 0.0) {
        return Err(invalid("populations", format!("must be positive, got p_e = {p_e}, p_g = {p_g}")));
    }
    if p_e >= p_g {
        return Err(Error::Precondition(format!(
            "p_e = {p_e} ≥ p_g = {p_g} implies a non-positive temperature"
        )));
    }
    Ok(-(PLANCK * ghz_to_hz(f_eg) / BOLTZMANN) / (p_e / p_g).ln())
}

/// Ratio `p_e/p_g` of a thermal qubit at temperature `t`.
pub fn thermal_population_ratio(f_eg: f64, t: f64) -> Result<f64> {
    ensure_positive("temperature", t)?;
    Ok((-reduced_energy(f_eg, t)).exp())
}

/// Photon-shot dephasing `κ(2χ)²/(κ² + (2χ)²)·n_th`; linewidths in MHz.
pub fn resonator_dephasing(kappa: f64, two_chi: f64, n_th: f64) -> Result<Rate> {
    ensure_positive("kappa", kappa)?;
    ensure_non_negative("n_th", n_th)?;
    let k = 2.0 * PI * kappa;
    let c = 2.0 * PI * two_chi;
    Ok(Rate::per_us(k * c * c / (k * k + c * c) * n_th))
}

/// Temperature at which a mode at `f` GHz holds `n_th` photons, K.
pub fn temperature_from_occupation(f: f64, n_th: f64) -> Result<f64> {
    ensure_positive("f", f)?;
    ensure_positive("n_th", n_th)?;
    Ok(PLANCK * ghz_to_hz(f) / (BOLTZMANN * (1.0 / n_th).ln_1p()))
}

/// Outcome of [`infer_resonator_temperature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorTemperature {
    /// K.
    pub temperature: f64,
    pub n_th: f64,
    /// µs.
    pub t_phi: f64,
}

/// Resonator temperature explaining the dephasing left after
/// `1/T₂ = 1/(2T₁) + 1/T_φ`.
pub fn infer_resonator_temperature(t1: f64, t2: f64, kappa: f64, two_chi: f64, f_res: f64) -> Result<ResonatorTemperature> {
    ensure_positive("t1", t1)?;
    ensure_positive("t2", t2)?;
    let gamma_phi = 1.0 / t2 - 1.0 / (2.0 * t1);
    if !(gamma_phi > 0.0) {
        return Err(Error::Precondition(format!(
            "T2 = {t2} µs ≥ 2·T1 = {} µs leaves no dephasing budget",
            2.0 * t1
        )));
    }
    let per_photon = resonator_dephasing(kappa, two_chi, 1.0)?.as_per_us();
    if per_photon == 0.0 {
        return Err(Error::Degenerate("resonator photons do not dephase the qubit (χ = 0)".into()));
    }
    let n_th = gamma_phi / per_photon;
    Ok(ResonatorTemperature {
        temperature: temperature_from_occupation(f_res, n_th)?,
        n_th,
        t_phi: 1.0 / gamma_phi,
    })
}

/// Pure dephasing time `T_φ` (µs) from `1/T₂ = 1/(2T₁) + 1/T_φ`.
pub fn pure_dephasing_time(t1: f64, t2: f64) -> Result<f64> {
    ensure_positive("t1", t1)?;
    ensure_positive("t2", t2)?;
    let g = 1.0 / t2 - 1.0 / (2.0 * t1);
    if g <= 0.0 {
        return Err(Error::Precondition(format!("T2 = {t2} µs ≥ 2·T1 = {} µs", 2.0 * t1)));
    }
    Ok(1.0 / g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_conversions() {
        let r = Rate::from_time_ms(3.6);
        assert!((r.time_us() - 3600.0).abs() < 1e-9);
        assert!((r.as_per_ms() - 1.0 / 3.6).abs() < 1e-15);
    }

    #[test]
    fn occupation_of_ln_two() {
        let t = PLANCK * 1e9 / (BOLTZMANN * 2f64.ln());
        assert!((bose_einstein(1.0, t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bose_einstein(1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_temperature_psd_is_spontaneous() {
        let env = NoiseEnvironment::matched_line(0.0);
        let s = psd(&env, 1.0).unwrap();
        assert!((s - 2.0 * HBAR * 2.0 * PI * 1e9 / 50.0).abs() < 1e-12 * s);
    }

    #[test]
    fn johnson_limit() {
        let env = NoiseEnvironment::matched_line(300.0);
        let s = psd(&env, 0.001).unwrap();
        // ħω(1 + coth x) → 2k_BT as x → 0
        let classical = 2.0 * BOLTZMANN * 300.0 / 50.0;
        assert!((s / classical - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bracket_is_twice_occupation_plus_one() {
        for t in [0.01, 0.1, 3.0] {
            let b = thermal_bracket(1.32, t);
            let n = bose_einstein(1.32, t).unwrap();
            assert!((0.5 * b - (n + 1.0)).abs() < 1e-12 * (n + 1.0));
        }
    }

    #[test]
    fn rejects_bad_impedance() {
        let env = NoiseEnvironment {
            impedance: Impedance::Fixed { re: 60.0, abs: 50.0 },
            temperature: 1.0,
            filter_power_attenuation: 1.0,
        };
        assert!(psd(&env, 1.0).is_err());
    }

    #[test]
    fn relaxation_scales_quadratically() {
        let a = relaxation_rate(1e-18, 1e-20).unwrap();
        let b = relaxation_rate(2e-18, 1e-20).unwrap();
        assert!((b.as_per_s() / a.as_per_s() - 4.0).abs() < 1e-12);
        assert_eq!(relaxation_rate(0.0, 1e-20).unwrap(), Rate::ZERO);
    }

    #[test]
    fn thermal_decay_limits() {
        assert_eq!(thermal_decay(&[], 1.32).unwrap(), Rate::ZERO);
        let g = [(Rate::per_ms(1.0), 0.0), (Rate::per_ms(2.0), 0.0)];
        assert!((thermal_decay(&g, 1.32).unwrap().as_per_ms() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn effective_temperature_of_unit_exponent() {
        let t = effective_temperature((-1.0f64).exp(), 1.0, 1.0).unwrap();
        assert!((t - PLANCK * 1e9 / BOLTZMANN).abs() < 1e-15);
        assert!(effective_temperature(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn dephasing_limits() {
        assert_eq!(resonator_dephasing(1.2, 5.3, 0.0).unwrap(), Rate::ZERO);
        let strong = resonator_dephasing(1.0, 1e6, 0.01).unwrap();
        assert!((strong.as_per_us() / (2.0 * PI * 0.01) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_dephasing_budget() {
        assert!(infer_resonator_temperature(100.0, 200.0, 1.2, 5.3, 6.9).is_err());
    }

    #[test]
    fn bath_coupling_guards() {
        assert!(infer_bath_coupling(31.0, 31.0, 1e-3, 3.0, 1.32).is_err());
        assert!(infer_bath_coupling(168.0, 31.0, 1.0, 3.0, 1.32).is_err());
        assert!(infer_bath_coupling(31.0, 168.0, 1e-3, 3.0, 1.32).is_err());
    }
}
