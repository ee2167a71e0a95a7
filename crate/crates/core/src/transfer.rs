//! Flux-line transfer function and amplitude referencing.
//!
//! The line attenuates a drive at `f_d` by `1 + a₀√f_d` (with `f_d` in Hz).
//! Amplitudes at the source are "source-referred"; after the line they are
//! "qubit-referred".

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::ThreeLevelReduction;
use crate::effective::solve_resonance;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::units::ghz_to_hz;

/// Skin-effect attenuation coefficient `a₀`, Hz^(−1/2).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferModel {
    pub a0: f64,
}

impl TransferModel {
    pub fn new(a0: f64) -> Result<Self> {
        ensure_non_negative("a0", a0)?;
        Ok(Self { a0 })
    }

    /// Qubit-referred over source-referred amplitude at `f_d` GHz.
    pub fn amplitude_ratio(&self, f_d: f64) -> f64 {
        1.0 / (1.0 + self.a0 * ghz_to_hz(f_d.max(0.0)).sqrt())
    }

    /// Line loss at `f_d` GHz in both dB conventions.
    pub fn loss(&self, f_d: f64) -> LossReport {
        LossReport::from_amplitude_ratio(self.amplitude_ratio(f_d))
    }
}

/// Qubit-referred amplitude for a source amplitude `phi_source` at `f_d` GHz.
pub fn attenuate(phi_source: f64, f_d: f64, model: &TransferModel) -> f64 {
    phi_source * model.amplitude_ratio(f_d)
}

/// Source amplitude that reaches the qubit as `phi_qubit`.
pub fn unattenuate(phi_qubit: f64, f_d: f64, model: &TransferModel) -> f64 {
    phi_qubit / model.amplitude_ratio(f_d)
}

/// Which quantity a ratio or dB value describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbMode {
    Amplitude,
    Power,
}

/// `10·log₁₀` of a power ratio or `20·log₁₀` of an amplitude ratio.
pub fn to_db(ratio: f64, mode: DbMode) -> Result<f64> {
    ensure_positive("ratio", ratio)?;
    Ok(match mode {
        DbMode::Power => 10.0 * ratio.log10(),
        DbMode::Amplitude => 20.0 * ratio.log10(),
    })
}

/// Inverse of [`to_db`].
pub fn from_db(db: f64, mode: DbMode) -> f64 {
    match mode {
        DbMode::Power => 10f64.powf(db / 10.0),
        DbMode::Amplitude => 10f64.powf(db / 20.0),
    }
}

/// Power ratio carried by an amplitude ratio.
pub fn amplitude_to_power_ratio(amplitude_ratio: f64) -> f64 {
    amplitude_ratio * amplitude_ratio
}

/// A loss quoted both ways.
///
/// `power_db` is the standard `20·log₁₀(amplitude ratio)`. `halved_db` is
/// `10·log₁₀(amplitude ratio)`, the figure obtained when the amplitude ratio
/// is read as a power ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub amplitude_ratio: f64,
    pub power_db: f64,
    pub halved_db: f64,
}

impl LossReport {
    pub fn from_amplitude_ratio(r: f64) -> Self {
        Self {
            amplitude_ratio: r,
            power_db: 20.0 * r.log10(),
            halved_db: 10.0 * r.log10(),
        }
    }
}

/// One measured resonance: source amplitude (Φ/Φ₀) and drive frequency (GHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub amplitude: f64,
    pub omega_d: f64,
}

/// Resonant drive frequency (GHz) predicted for a source amplitude.
///
/// The attenuation depends on the drive frequency, which depends on the
/// attenuated amplitude; the two are iterated to a fixed point.
pub fn predict_resonance(
    reduction: &ThreeLevelReduction,
    n: u32,
    phi_source: f64,
    model: &TransferModel,
) -> Result<f64> {
    let mut f = reduction.omega_eg / n as f64;
    for _ in 0..100 {
        let phi_bar = 2.0 * PI * attenuate(phi_source, f, model);
        let next = solve_resonance(reduction, n, phi_bar)?;
        if (next - f).abs() < 1e-13 {
            return Ok(next);
        }
        f = next;
    }
    Err(Error::NoConvergence {
        what: "attenuation fixed point",
        iterations: 100,
        last: format!("{f} GHz"),
    })
}

/// Result of [`fit_a0`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFit {
    pub model: TransferModel,
    /// Standard error of `a0`, Hz^(−1/2).
    pub a0_stderr: f64,
    /// Root-mean-square frequency residual, GHz.
    pub rms_residual: f64,
    pub iterations: usize,
}

/// Least-squares fit of `a₀` to measured three-photon resonances.
pub fn fit_a0(data: &[ShiftPoint], reduction: &ThreeLevelReduction) -> Result<TransferFit> {
    if data.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "a0 fit needs at least 3 points, got {}",
            data.len()
        )));
    }
    for p in data {
        ensure_positive("amplitude", p.amplitude)?;
        ensure_positive("omega_d", p.omega_d)?;
    }
    let residuals = |a0: f64| -> Result<Vec<f64>> {
        let m = TransferModel { a0: a0.max(0.0) };
        data.iter()
            .map(|p| Ok(predict_resonance(reduction, 3, p.amplitude, &m)? - p.omega_d))
            .collect()
    };
    let ssr = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    // Gauss–Newton on a single parameter, started where the line halves
    // the amplitude at the mean frequency.
    let mean_f = data.iter().map(|p| p.omega_d).sum::<f64>() / data.len() as f64;
    let mut a0 = 1.0 / ghz_to_hz(mean_f).sqrt();
    let mut r = residuals(a0)?;
    let mut trace = vec![a0];
    for iter in 1..=100 {
        let h = 1e-6 * a0.max(1e-9);
        let rp = residuals(a0 + h)?;
        let jac: Vec<f64> = rp.iter().zip(&r).map(|(p, q)| (p - q) / h).collect();
        let jtj: f64 = jac.iter().map(|j| j * j).sum();
        if jtj == 0.0 {
            return Err(Error::Degenerate("resonances do not depend on a0".into()));
        }
        let step = -jac.iter().zip(&r).map(|(j, v)| j * v).sum::<f64>() / jtj;
        let mut scale = 1.0;
        let (next, r_next) = loop {
            let cand = (a0 + scale * step).max(0.0);
            let rc = residuals(cand)?;
            if ssr(&rc) <= ssr(&r) || scale < 1e-6 {
                break (cand, rc);
            }
            scale *= 0.5;
        };
        let moved = (next - a0).abs();
        a0 = next;
        r = r_next;
        trace.push(a0);
        if moved <= 1e-10 * a0.max(1e-12) || moved < 1e-16 {
            let dof = (data.len() - 1) as f64;
            let s2 = ssr(&r) / dof;
            return Ok(TransferFit {
                model: TransferModel { a0 },
                a0_stderr: (s2 / jtj).sqrt(),
                rms_residual: (ssr(&r) / data.len() as f64).sqrt(),
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "a0 fit",
        iterations: 100,
        last: format!("{trace:?}"),
    })
}
