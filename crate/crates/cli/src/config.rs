//! Run configuration: one JSON document, every section optional.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use subharmonic::benchmarking::{Generator, DEFAULT_LENGTHS, DEFAULT_SEQUENCES};
use subharmonic::calibration::{CalibrationOptions, Shots, TwoLevelBackend, DEFAULT_SAMPLING_TIME, DEFAULT_SCHEDULE};
use subharmonic::circuit::{CircuitParams, MIN_BASIS_DIM};
use subharmonic::noise::NoiseEnvironment;
use subharmonic::propagation::{Integrator, ResonanceOptions, SweepSettings, DEFAULT_DT};
use subharmonic::pulse::Envelope;
use subharmonic::transfer::{ShiftPoint, TransferModel};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for every stochastic component.
    pub seed: u64,
    pub circuit: CircuitParams,
    pub simulation: Simulation,
    pub drive: Drive,
    pub transfer: TransferModel,
    pub noise: NoiseEnvironment,
    pub flux_sweep: FluxGrid,
    pub spectroscopy: Spectroscopy,
    pub chevron: ChevronGrid,
    pub stark: Stark,
    pub rabi_scaling: RabiScaling,
    pub transfer_fit: TransferFitConfig,
    pub calibration: CalibrationConfig,
    pub rb: RbConfig,
    pub noise_budget: NoiseBudgetConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            circuit: CircuitParams::reference_device(),
            simulation: Simulation::default(),
            drive: Drive::default(),
            transfer: TransferModel { a0: 9.49e-5 },
            noise: NoiseEnvironment::matched_line(0.0),
            flux_sweep: FluxGrid::default(),
            spectroscopy: Spectroscopy::default(),
            chevron: ChevronGrid::default(),
            stark: Stark::default(),
            rabi_scaling: RabiScaling::default(),
            transfer_fit: TransferFitConfig::default(),
            calibration: CalibrationConfig::default(),
            rb: RbConfig::default(),
            noise_budget: NoiseBudgetConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulation {
    pub basis_dim: usize,
    pub n_levels: usize,
    /// ns.
    pub dt: f64,
    pub integrator: Integrator,
}

impl Default for Simulation {
    fn default() -> Self {
        Self {
            basis_dim: 80,
            n_levels: 20,
            dt: DEFAULT_DT,
            integrator: Integrator::default(),
        }
    }
}

/// Pulse defaults shared by the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Drive {
    /// Φ/Φ₀ at the qubit.
    pub amplitude: f64,
    /// ns.
    pub t_pulse: f64,
    pub envelope: Envelope,
}

impl Default for Drive {
    fn default() -> Self {
        Self {
            amplitude: 0.02,
            t_pulse: 200.0,
            envelope: Envelope::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxGrid {
    /// rad.
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Default for FluxGrid {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 2.0 * PI,
            points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Spectroscopy {
    /// GHz.
    pub f_start: f64,
    pub f_stop: f64,
    pub points: usize,
    pub amplitudes: Vec<f64>,
}

impl Default for Spectroscopy {
    fn default() -> Self {
        Self {
            f_start: 0.3,
            f_stop: 1.4,
            points: 221,
            amplitudes: vec![0.01, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChevronGrid {
    /// Full width of the drive-frequency axis, MHz.
    pub detuning_span: f64,
    pub detuning_points: usize,
    /// Longest pulse, ns.
    pub t_max: f64,
    pub t_points: usize,
}

impl Default for ChevronGrid {
    fn default() -> Self {
        Self {
            detuning_span: 4.0,
            detuning_points: 41,
            t_max: 400.0,
            t_points: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stark {
    pub amplitudes: Vec<f64>,
    /// Order of the generic engine for `n ≠ 3`.
    pub order: usize,
    /// Levels kept by the generic engine.
    pub levels: usize,
}

impl Default for Stark {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.01, 0.02, 0.03, 0.04],
            order: 3,
            levels: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiScaling {
    /// Amplitudes per sub-harmonic order.
    pub amplitudes: BTreeMap<u32, Vec<f64>>,
}

impl Default for RabiScaling {
    fn default() -> Self {
        Self {
            amplitudes: BTreeMap::from([
                (3, vec![0.01, 0.02, 0.03, 0.04]),
                (5, vec![0.04, 0.05, 0.06, 0.07]),
                (7, vec![0.05, 0.06, 0.07, 0.08]),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferFitConfig {
    /// Measured (source amplitude, resonance) pairs. When empty, noise-free
    /// data are generated from `transfer.a0` at `synthetic_amplitudes`.
    pub points: Vec<ShiftPoint>,
    pub synthetic_amplitudes: Vec<f64>,
}

impl Default for TransferFitConfig {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            synthetic_amplitudes: vec![0.02, 0.04, 0.06, 0.08, 0.10, 0.12],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Two-level model with quadratic Stark shift and cubic Rabi rate.
    TwoLevel,
    /// Full fluxonium propagation from `circuit` and `simulation`.
    Fluxonium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub backend: Backend,
    /// Φ/Φ₀.
    pub amplitude: f64,
    /// Two-level backend: qubit frequency, GHz.
    pub f_eg: f64,
    /// Two-level backend: `δ = stark_coefficient·(2πA)²`, GHz.
    pub stark_coefficient: f64,
    /// Two-level backend: `Ω = rabi_coefficient·(2πA)³`, GHz.
    pub rabi_coefficient: f64,
    /// Levels kept by the fluxonium backend.
    pub levels: usize,
    pub envelope: Envelope,
    pub sampling_time: f64,
    pub shots: Shots,
    pub max_rounds: usize,
    pub schedule: Vec<u32>,
    pub angle_tolerance: f64,
    pub frequency_tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let b = TwoLevelBackend::reference();
        let o = CalibrationOptions::default();
        Self {
            backend: Backend::TwoLevel,
            amplitude: 0.0415,
            f_eg: b.f_eg,
            stark_coefficient: b.stark_coefficient,
            rabi_coefficient: b.rabi_coefficient,
            levels: 10,
            envelope: Envelope::default(),
            sampling_time: DEFAULT_SAMPLING_TIME,
            shots: o.shots,
            max_rounds: o.max_rounds,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            angle_tolerance: o.angle_tolerance,
            frequency_tolerance: o.frequency_tolerance,
        }
    }
}

impl CalibrationConfig {
    pub fn options(&self, seed: u64) -> CalibrationOptions {
        CalibrationOptions {
            envelope: self.envelope,
            sampling_time: self.sampling_time,
            shots: self.shots,
            seed,
            max_rounds: self.max_rounds,
            schedule: self.schedule.clone(),
            angle_tolerance: self.angle_tolerance,
            frequency_tolerance: self.frequency_tolerance,
            omega_d_guess: None,
            t_pi_guess: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub sequences: usize,
    /// Gate length, ns.
    pub t_g: f64,
    /// µs.
    pub t1: f64,
    /// Ramsey `T₂`, µs; `T_φ` follows from `1/T₂ = 1/(2T₁) + 1/T_φ`.
    pub t2: f64,
    pub interleaved: Option<Generator>,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            sequences: DEFAULT_SEQUENCES,
            t_g: 64.0,
            t1: 168.0,
            t2: 75.0,
            interleaved: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBudgetConfig {
    /// µs, with the low-pass filter.
    pub t1_filtered: f64,
    pub t2_filtered: f64,
    /// µs, without the filter.
    pub t1_unfiltered: f64,
    pub t2_unfiltered: f64,
    /// Resonator linewidth κ/2π, MHz.
    pub kappa: f64,
    /// Dispersive shift 2χ/2π, MHz.
    pub two_chi: f64,
    /// Resonator frequency, GHz.
    pub f_res: f64,
    /// Filter power transmission at the qubit frequency, dB.
    pub filter_db: f64,
    /// K.
    pub bath_temperature: f64,
    /// Design mutual inductance, pH.
    pub mutual_inductance: f64,
    /// Gate length for the coherence limits, ns.
    pub t_g: f64,
}

impl Default for NoiseBudgetConfig {
    fn default() -> Self {
        Self {
            t1_filtered: 168.0,
            t2_filtered: 75.0,
            t1_unfiltered: 31.0,
            t2_unfiltered: 22.0,
            kappa: 1.2,
            two_chi: 5.3,
            f_res: 6.9,
            filter_db: -35.5,
            bath_temperature: 3.0,
            mutual_inductance: 3.2,
            t_g: 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub pretty_json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            pretty_json: true,
        }
    }
}

fn config_error(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {e}"))
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_error(path, format!("must be positive and finite, got {v}")))
    }
}

fn amplitudes(path: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(config_error(path, "must not be empty"));
    }
    for (i, a) in v.iter().enumerate() {
        positive(&format!("{path}[{i}]"), *a)?;
    }
    Ok(())
}

impl RunConfig {
    /// Parse a JSON document, then apply `key=value` overrides with dotted
    /// keys. Values are read as JSON and fall back to plain strings.
    pub fn from_json(text: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let value = match text {
            Some(t) => serde_json::from_str::<Value>(t).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?,
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(CliError::Config("config must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(RunConfig::default())?;
        merge(&mut merged, value);
        let mut value = merged;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        Ok(config)
    }

    /// Check every section before any computation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.circuit.validate().map_err(|e| config_error("circuit", e))?;
        let s = &self.simulation;
        if s.basis_dim < MIN_BASIS_DIM {
            return Err(config_error("simulation.basis_dim", format!("must be at least {MIN_BASIS_DIM}")));
        }
        if s.n_levels < 3 || 3 * s.n_levels > s.basis_dim {
            return Err(config_error(
                "simulation.n_levels",
                format!("must lie in 3..={}", s.basis_dim / 3),
            ));
        }
        positive("simulation.dt", s.dt)?;
        positive("drive.amplitude", self.drive.amplitude)?;
        positive("drive.t_pulse", self.drive.t_pulse)?;
        self.drive.envelope.validate().map_err(|e| config_error("drive.envelope", e))?;
        TransferModel::new(self.transfer.a0).map_err(|e| config_error("transfer", e))?;
        self.noise.validate().map_err(|e| config_error("noise", e))?;

        let f = &self.flux_sweep;
        if f.points == 0 {
            return Err(config_error("flux_sweep.points", "flux grid is empty"));
        }
        if !(f.start.is_finite() && f.stop.is_finite()) {
            return Err(config_error("flux_sweep", "bounds must be finite"));
        }

        let sp = &self.spectroscopy;
        if sp.points == 0 {
            return Err(config_error("spectroscopy.points", "frequency grid is empty"));
        }
        positive("spectroscopy.f_start", sp.f_start)?;
        positive("spectroscopy.f_stop", sp.f_stop)?;
        amplitudes("spectroscopy.amplitudes", &sp.amplitudes)?;

        let c = &self.chevron;
        positive("chevron.detuning_span", c.detuning_span)?;
        positive("chevron.t_max", c.t_max)?;
        if c.detuning_points == 0 || c.t_points == 0 {
            return Err(config_error("chevron", "grid is empty"));
        }

        amplitudes("stark.amplitudes", &self.stark.amplitudes)?;
        if !(1..=3).contains(&self.stark.order) {
            return Err(config_error("stark.order", "must be 1, 2 or 3"));
        }
        if self.stark.levels < 2 || self.stark.levels > s.n_levels {
            return Err(config_error("stark.levels", format!("must lie in 2..={}", s.n_levels)));
        }

        for (n, a) in &self.rabi_scaling.amplitudes {
            if n % 2 == 0 {
                return Err(config_error("rabi_scaling.amplitudes", format!("order {n} is even")));
            }
            amplitudes(&format!("rabi_scaling.amplitudes.{n}"), a)?;
        }

        for (i, p) in self.transfer_fit.points.iter().enumerate() {
            positive(&format!("transfer_fit.points[{i}].amplitude"), p.amplitude)?;
            positive(&format!("transfer_fit.points[{i}].omega_d"), p.omega_d)?;
        }
        if self.transfer_fit.points.is_empty() {
            amplitudes("transfer_fit.synthetic_amplitudes", &self.transfer_fit.synthetic_amplitudes)?;
        }

        let cal = &self.calibration;
        positive("calibration.amplitude", cal.amplitude)?;
        positive("calibration.f_eg", cal.f_eg)?;
        if cal.levels < 2 || cal.levels > s.n_levels {
            return Err(config_error("calibration.levels", format!("must lie in 2..={}", s.n_levels)));
        }
        cal.options(self.seed).validate().map_err(|e| config_error("calibration", e))?;

        let rb = &self.rb;
        if rb.lengths.is_empty() || rb.lengths.contains(&0) {
            return Err(config_error("rb.lengths", "need at least one length, all ≥ 1"));
        }
        if rb.sequences == 0 {
            return Err(config_error("rb.sequences", "must be at least 1"));
        }
        positive("rb.t_g", rb.t_g)?;
        positive("rb.t1", rb.t1)?;
        positive("rb.t2", rb.t2)?;
        if rb.t2 >= 2.0 * rb.t1 {
            return Err(config_error("rb.t2", "must be below 2·t1"));
        }

        let nb = &self.noise_budget;
        for (name, v) in [
            ("t1_filtered", nb.t1_filtered),
            ("t2_filtered", nb.t2_filtered),
            ("t1_unfiltered", nb.t1_unfiltered),
            ("t2_unfiltered", nb.t2_unfiltered),
            ("kappa", nb.kappa),
            ("f_res", nb.f_res),
            ("t_g", nb.t_g),
        ] {
            positive(&format!("noise_budget.{name}"), v)?;
        }
        if !(nb.filter_db < 0.0) {
            return Err(config_error("noise_budget.filter_db", "must be negative"));
        }
        Ok(())
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            envelope: self.drive.envelope,
            dt: self.simulation.dt,
            integrator: self.simulation.integrator,
        }
    }

    pub fn resonance_options(&self) -> ResonanceOptions {
        ResonanceOptions {
            envelope: self.drive.envelope,
            dt: self.simulation.dt,
            integrator: self.simulation.integrator,
            ..ResonanceOptions::default()
        }
    }

    /// SHA-256 of the compact JSON form, without the `output` section.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output");
        }
        let bytes = serde_json::to_vec(&v).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set: malformed key `{key}`")));
    }
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json(Some("{}"), &[]).unwrap();
        assert_eq!(c.circuit, CircuitParams::reference_device());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_json(Some(r#"{"circuit": {"e_j": 1.0, "e_c": 1.0, "e_l": 1.0, "phi_ext": 3.0, "ej": 2}}"#), &[])
            .unwrap_err();
        assert!(err.to_string().contains("circuit"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::from_json(None, &["rb.t1=31".into(), "calibration.backend=fluxonium".into()]).unwrap();
        assert_eq!(c.rb.t1, 31.0);
        assert_eq!(c.calibration.backend, Backend::Fluxonium);
    }

    #[test]
    fn override_needs_equals_sign() {
        assert!(RunConfig::from_json(None, &["rb.t1".into()]).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_json(Some(r#"{"circuit": {"e_j": 4.0}}"#), &["circuit.e_l=1.0".into()]).unwrap();
        let d = RunConfig::default();
        assert_eq!(c.circuit.e_j, 4.0);
        assert_eq!(c.circuit.e_l, 1.0);
        assert_eq!(c.circuit.e_c, d.circuit.e_c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.output.directory = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
