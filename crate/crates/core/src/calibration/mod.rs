//! Two-pass gate tune-up.
//!
//! A [`CalibratedGate`] holds one π and one π/2 pulse at a fixed flux
//! amplitude. Pulses are referenced to a software qubit frame at
//! `frame_frequency`, and a pulse with qubit-frame axis `ψ` starting at `t`
//! gets the carrier phase `(ψ + F + 2π f_frame t)/n`. After each pulse the
//! frame offset `F` drops by `n·virtual_z`, so an `X → Y` change is a carrier
//! phase step of `π/(2n)`.
//!
//! [`rough_calibrate`] finds the drive frequency, pulse lengths, qubit frame
//! and virtual-Z angles from scans. [`fine_calibrate`] then runs five error
//! amplification trains, fits all five error parameters jointly against an
//! ideal two-level model, and corrects them until they fall below tolerance.
//!
//! | train | sequence | sensitive to |
//! |---|---|---|
//! | π amplitude | `X90 · X180^N` | π rotation angle |
//! | π/2 amplitude | `X90 · (X90 X90)^N` | π/2 rotation angle |
//! | frequency | `Y90 · (X180 −X180)^N` | drive detuning |
//! | π/2 phase | `(X90 −X90)^N · Y90` | frame error after π/2 |
//! | π phase | `X90 · (X90 X90 X180)^N · Y90` | frame error after π |

mod executor;

pub use executor::{ExperimentExecutor, FluxoniumBackend, Instruction, ResonanceGuess, Shots, TwoLevelBackend};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::ThreeLevelReduction;
use crate::effective::{stark_shift_n3, EnvelopeMoments};
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::numerics::{integrate, minimize_scalar};
use crate::propagation::first_maximum;
use crate::pulse::{DrivePulse, Envelope};
use crate::units::wrap_phase;

/// AWG sample spacing, ns.
pub const DEFAULT_SAMPLING_TIME: f64 = 0.5;

/// Repetition counts of the amplification trains.
pub const DEFAULT_SCHEDULE: [u32; 5] = [1, 2, 4, 8, 16];

/// A tuned-up gate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedGate {
    pub n: u32,
    /// Drive frequency, GHz.
    pub omega_d: f64,
    /// Source-referred flux amplitude, Φ/Φ₀.
    pub amplitude: f64,
    /// π pulse length, ns.
    pub t_pulse: f64,
    /// π/2 pulse length, ns.
    pub t_pulse_pi_2: f64,
    pub envelope: Envelope,
    /// Carrier phase advance after a π pulse, rad.
    pub virtual_z_pi: f64,
    /// Carrier phase advance after a π/2 pulse, rad.
    pub virtual_z_pi_2: f64,
    /// Zero-amplitude fill after the π pulse, ns.
    pub padding: f64,
    /// Zero-amplitude fill after the π/2 pulse, ns.
    pub padding_pi_2: f64,
    /// Software qubit frame, GHz.
    pub frame_frequency: f64,
    /// ns.
    pub sampling_time: f64,
}

/// Fill needed to bring `t` up to the next multiple of `ts`.
pub fn padding_to_grid(t: f64, ts: f64) -> f64 {
    let k = (t / ts - 1e-9).ceil().max(0.0);
    (k * ts - t).max(0.0)
}

fn on_grid(t: f64, ts: f64) -> bool {
    let k = t / ts;
    (k - k.round()).abs() < 1e-6
}

impl CalibratedGate {
    /// Set both pulse lengths and recompute their padding.
    pub fn with_durations(mut self, t_pi: f64, t_pi_2: f64) -> Self {
        self.t_pulse = t_pi;
        self.t_pulse_pi_2 = t_pi_2;
        self.padding = padding_to_grid(t_pi, self.sampling_time);
        self.padding_pi_2 = padding_to_grid(t_pi_2, self.sampling_time);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        ensure_positive("omega_d", self.omega_d)?;
        ensure_positive("amplitude", self.amplitude)?;
        ensure_positive("t_pulse", self.t_pulse)?;
        ensure_positive("t_pulse_pi_2", self.t_pulse_pi_2)?;
        ensure_positive("frame_frequency", self.frame_frequency)?;
        ensure_positive("sampling_time", self.sampling_time)?;
        self.envelope.validate()?;
        for (name, t, p) in [
            ("padding", self.t_pulse, self.padding),
            ("padding_pi_2", self.t_pulse_pi_2, self.padding_pi_2),
        ] {
            if !(p >= 0.0) || !on_grid(t + p, self.sampling_time) {
                return Err(invalid(
                    name,
                    format!("{t} + {p} ns is not a multiple of {} ns", self.sampling_time),
                ));
            }
        }
        for (name, z) in [("virtual_z_pi", self.virtual_z_pi), ("virtual_z_pi_2", self.virtual_z_pi_2)] {
            if !(z > -PI && z <= PI) {
                return Err(invalid(name, format!("must lie in (−π, π], got {z}")));
            }
        }
        Ok(())
    }

    fn parts(&self, kind: GateKind) -> (f64, f64, f64) {
        match kind {
            GateKind::Pi => (self.t_pulse, self.padding, self.virtual_z_pi),
            GateKind::HalfPi => (self.t_pulse_pi_2, self.padding_pi_2, self.virtual_z_pi_2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Pi,
    HalfPi,
}

/// A step of a logical sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Rotation about the qubit-frame axis at angle `axis` from x.
    Rotation { kind: GateKind, axis: f64 },
    Delay { duration: f64 },
    /// Frame rotation of the qubit by `angle`.
    VirtualZ { angle: f64 },
}

impl Op {
    pub const X180: Op = Op::Rotation { kind: GateKind::Pi, axis: 0.0 };
    pub const X90: Op = Op::Rotation { kind: GateKind::HalfPi, axis: 0.0 };
    pub const Y180: Op = Op::Rotation { kind: GateKind::Pi, axis: PI / 2.0 };
    pub const Y90: Op = Op::Rotation { kind: GateKind::HalfPi, axis: PI / 2.0 };
    pub const MINUS_X180: Op = Op::Rotation { kind: GateKind::Pi, axis: PI };
    pub const MINUS_X90: Op = Op::Rotation { kind: GateKind::HalfPi, axis: PI };
}

/// Translate a logical sequence into a pulse program.
pub fn compile(gate: &CalibratedGate, ops: &[Op]) -> Result<Vec<Instruction>> {
    let nf = gate.n as f64;
    let mut t = 0.0;
    let mut frame = 0.0;
    let mut out = Vec::with_capacity(2 * ops.len());
    for op in ops {
        match *op {
            Op::Rotation { kind, axis } => {
                let (duration, padding, vz) = gate.parts(kind);
                let cycles = (gate.frame_frequency * t).fract();
                let phase = ((axis + frame + 2.0 * PI * cycles) / nf).rem_euclid(2.0 * PI);
                let pulse = DrivePulse::new(gate.amplitude, gate.omega_d, duration, gate.envelope).with_phase(phase);
                out.push(Instruction::Pulse { pulse });
                if padding > 0.0 {
                    out.push(Instruction::Delay { duration: padding });
                }
                t += duration + padding;
                frame -= nf * vz;
            }
            Op::Delay { duration } => {
                if !(duration >= 0.0 && duration.is_finite()) {
                    return Err(invalid("duration", format!("must be non-negative, got {duration}")));
                }
                out.push(Instruction::Delay { duration });
                t += duration;
            }
            Op::VirtualZ { angle } => frame -= angle,
        }
    }
    Ok(out)
}

/// Frame correction `(1/n)·2π∫₀^{t_pulse} δ(t) dt`, wrapped to (−π, π].
///
/// `delta` is the qubit frequency shift in GHz and `t` is in ns.
pub fn virtual_z_phase(delta: &dyn Fn(f64) -> f64, t_pulse: f64, n: u32) -> Result<f64> {
    ensure_positive("t_pulse", t_pulse)?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let integral = integrate(delta, 0.0, t_pulse, 1e-13);
    Ok(wrap_phase(2.0 * PI * integral / n as f64))
}

/// Instantaneous three-photon Stark shift `δ₃(E(t))`, GHz, for
/// [`virtual_z_phase`].
pub fn stark_trajectory_n3(
    reduction: &ThreeLevelReduction,
    omega_d: f64,
    phi_bar: f64,
    envelope: Envelope,
    t_pulse: f64,
) -> Result<impl Fn(f64) -> f64> {
    envelope.validate()?;
    ensure_positive("t_pulse", t_pulse)?;
    let delta_cap = reduction.omega_eg - 3.0 * omega_d;
    let only = |e2: f64, e4: f64| EnvelopeMoments { e2, e3: 0.0, e4, e5: 0.0 };
    let c2 = stark_shift_n3(reduction, omega_d, delta_cap, phi_bar, &only(1.0, 0.0))?;
    let c4 = stark_shift_n3(reduction, omega_d, delta_cap, phi_bar, &only(0.0, 1.0))?;
    Ok(move |t: f64| {
        let e2 = envelope.value(t, t_pulse).powi(2);
        c2 * e2 + c4 * e2 * e2
    })
}

/// One measured scan, kept for the calibration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub step: String,
    pub parameter: String,
    pub x: Vec<f64>,
    pub p_e: Vec<f64>,
}

/// Error parameters fitted in one fine round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateErrors {
    /// π rotation-angle error, rad.
    pub angle_pi: f64,
    /// π/2 rotation-angle error, rad.
    pub angle_pi_2: f64,
    /// Axis tilt, detuning over twice the Rabi rate.
    pub tilt: f64,
    /// Frame error after a π/2 pulse, rad.
    pub phase_pi_2: f64,
    /// Frame error after a π pulse, rad.
    pub phase_pi: f64,
}

impl GateErrors {
    fn from_slice(v: &[f64]) -> Self {
        Self {
            angle_pi: v[0],
            angle_pi_2: v[1],
            tilt: v[2],
            phase_pi_2: v[3],
            phase_pi: v[4],
        }
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.angle_pi, self.angle_pi_2, self.tilt, self.phase_pi_2, self.phase_pi]
    }
}

/// Summary of one fine-calibration round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub errors: GateErrors,
    pub stderr: GateErrors,
    /// Qubit-frequency error implied by the tilt, GHz.
    pub frequency_error: f64,
    pub converged: bool,
    /// Gate after this round's corrections.
    pub gate: CalibratedGate,
}

/// A calibrated gate with the measurements that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub gate: CalibratedGate,
    pub scans: Vec<ScanRecord>,
    pub rounds: Vec<RoundRecord>,
}

/// Calibration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub envelope: Envelope,
    pub sampling_time: f64,
    pub shots: Shots,
    pub seed: u64,
    pub max_rounds: usize,
    pub schedule: Vec<u32>,
    /// Rotation-angle and frame tolerance, rad.
    pub angle_tolerance: f64,
    /// Qubit-frequency tolerance, GHz.
    pub frequency_tolerance: f64,
    /// Overrides the executor's prior, GHz.
    pub omega_d_guess: Option<f64>,
    /// Overrides the executor's prior, ns.
    pub t_pi_guess: Option<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            envelope: Envelope::default(),
            sampling_time: DEFAULT_SAMPLING_TIME,
            shots: Shots::default(),
            seed: 0,
            max_rounds: 10,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            angle_tolerance: 1e-4,
            frequency_tolerance: 1e-6,
            omega_d_guess: None,
            t_pi_guess: None,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("sampling_time", self.sampling_time)?;
        ensure_positive("angle_tolerance", self.angle_tolerance)?;
        ensure_positive("frequency_tolerance", self.frequency_tolerance)?;
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds", "must be at least 1"));
        }
        if self.schedule.len() < 2 || self.schedule.contains(&0) {
            return Err(invalid("schedule", "need at least two repetition counts, all ≥ 1"));
        }
        self.envelope.validate()
    }
}

/// Sequential measurement context of one calibration.
struct Session<'a> {
    exec: &'a dyn ExperimentExecutor,
    shots: Shots,
    rng: ChaCha8Rng,
    scans: Vec<ScanRecord>,
}

impl<'a> Session<'a> {
    fn new(exec: &'a dyn ExperimentExecutor, options: &CalibrationOptions) -> Self {
        Self {
            exec,
            shots: options.shots,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            scans: Vec::new(),
        }
    }

    fn measure(&mut self, step: &str, parameter: &str, x: &[f64], programs: &[Vec<Instruction>]) -> Result<Vec<f64>> {
        let seeds: Vec<u64> = programs.iter().map(|_| self.rng.next_u64()).collect();
        let exec = self.exec;
        let shots = self.shots;
        let p: Vec<f64> = programs
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(prog, &seed)| exec.run(prog, shots, seed))
            .collect::<Result<_>>()?;
        self.scans.push(ScanRecord {
            step: step.to_string(),
            parameter: parameter.to_string(),
            x: x.to_vec(),
            p_e: p.clone(),
        });
        Ok(p)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Vertex of a least-squares parabola through the points around the maximum.
fn peak_position(x: &[f64], y: &[f64]) -> Option<f64> {
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let cut = ymin + 0.6 * (ymax - ymin);
    let (mut lo, mut hi) = (imax, imax);
    while lo > 0 && y[lo - 1] >= cut {
        lo -= 1;
    }
    while hi + 1 < y.len() && y[hi + 1] >= cut {
        hi += 1;
    }
    lo = lo.min(imax.saturating_sub(1));
    hi = hi.max((imax + 1).min(y.len() - 1));
    if hi - lo < 2 {
        return Some(x[imax]);
    }
    let x0 = x[imax];
    let a = DMatrix::from_fn(hi - lo + 1, 3, |i, j| (x[lo + i] - x0).powi(j as i32));
    let b = DVector::from_iterator(hi - lo + 1, y[lo..=hi].iter().copied());
    let c = a.svd(true, true).solve(&b, 1e-14).ok()?;
    if c[2] >= 0.0 {
        return Some(x0);
    }
    let v = x0 - c[1] / (2.0 * c[2]);
    (v >= x[lo] && v <= x[hi]).then_some(v).or(Some(x0))
}

/// Least squares `y ≈ c₀ + c₁cos(ωx) + c₂sin(ωx)`; returns coefficients and SSR.
fn fit_sinusoid(x: &[f64], y: &[f64], omega: f64) -> Option<([f64; 3], f64)> {
    let a = DMatrix::from_fn(x.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (omega * x[i]).cos(),
        _ => (omega * x[i]).sin(),
    });
    let b = DVector::from_column_slice(y);
    let c = a.clone().svd(true, true).solve(&b, 1e-14).ok()?;
    let ssr = (a * &c - b).norm_squared();
    Some(([c[0], c[1], c[2]], ssr))
}

/// Frequency (cycles per unit of `x`) of a sinusoid, searched in `[lo, hi]`.
fn fit_frequency(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let ssr = |f: f64| fit_sinusoid(x, y, 2.0 * PI * f).map(|r| r.1).unwrap_or(f64::INFINITY);
    let grid = linspace(lo, hi, 200);
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| ssr(*a).total_cmp(&ssr(*b)))
        .ok_or_else(|| Error::FitFailure("empty frequency grid".into()))?;
    let step = (hi - lo) / 199.0;
    let (f, _) = minimize_scalar(&ssr, (best - step).max(lo), (best + step).min(hi), 1e-12 * hi)?;
    Ok(f)
}

/// Rough pass with default options.
pub fn rough_calibrate(exec: &dyn ExperimentExecutor, n: u32, amplitude: f64) -> Result<CalibratedGate> {
    Ok(rough_calibrate_with(exec, n, amplitude, &CalibrationOptions::default())?.gate)
}

/// Rabi time and frequency scans until the drive frequency settles, then a
/// Ramsey scan for the qubit frame and virtual-Z scans for both pulses.
pub fn rough_calibrate_with(
    exec: &dyn ExperimentExecutor,
    n: u32,
    amplitude: f64,
    options: &CalibrationOptions,
) -> Result<CalibrationRun> {
    options.validate()?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    ensure_positive("amplitude", amplitude)?;
    let nf = n as f64;
    let mut session = Session::new(exec, options);
    let prior = exec.resonance_guess(n, amplitude)?;
    let mut omega_d = options.omega_d_guess.unwrap_or(prior.omega_d);
    let mut t_guess = options.t_pi_guess.unwrap_or(prior.t_pi);
    ensure_positive("omega_d guess", omega_d)?;
    ensure_positive("t_pi guess", t_guess)?;
    let single = |f: f64, t: f64| {
        vec![Instruction::Pulse {
            pulse: DrivePulse::new(amplitude, f, t, options.envelope),
        }]
    };

    let mut t_pi = t_guess;
    let mut t_pi_2 = 0.5 * t_guess;
    let mut settled = false;
    for iteration in 0..8 {
        let times = linspace(0.05 * t_guess, 3.0 * t_guess, 60);
        let progs: Vec<_> = times.iter().map(|&t| single(omega_d, t)).collect();
        let p = session.measure("rabi_time", "t_pulse_ns", &times, &progs)?;
        let Some(t_max) = first_maximum(&times, &p) else {
            // no oscillation at this frequency: search a wider band
            let span = 3.0 / (nf * t_guess);
            let freqs = linspace(omega_d - span, omega_d + span, 41);
            let progs: Vec<_> = freqs.iter().map(|&f| single(f, t_guess)).collect();
            let q = session.measure("frequency_search", "omega_d_ghz", &freqs, &progs)?;
            let (i, &best) = q
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty scan");
            if best < 0.5 || iteration > 2 {
                return Err(Error::AmplitudeOutOfRange(format!(
                    "no Rabi oscillation at amplitude {amplitude} (best P_e = {best:.3})"
                )));
            }
            omega_d = freqs[i];
            continue;
        };
        t_pi = t_max;
        let rise = p.iter().position(|&v| v >= 0.5).unwrap_or(0);
        t_pi_2 = if rise > 0 {
            let (x0, x1, y0, y1) = (times[rise - 1], times[rise], p[rise - 1], p[rise]);
            x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0)
        } else {
            0.5 * t_pi
        };
        t_guess = t_pi;

        let span = 0.8 / (nf * t_pi);
        let freqs = linspace(omega_d - span, omega_d + span, 31);
        let progs: Vec<_> = freqs.iter().map(|&f| single(f, t_pi)).collect();
        let p = session.measure("rabi_frequency", "omega_d_ghz", &freqs, &progs)?;
        let f_new = peak_position(&freqs, &p).ok_or_else(|| Error::FitFailure("frequency scan".into()))?;
        let moved = (f_new - omega_d).abs();
        omega_d = f_new;
        if moved < 0.005 / (nf * t_pi) {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::NoConvergence {
            what: "rough drive-frequency calibration",
            iterations: 8,
            last: format!("{omega_d} GHz"),
        });
    }

    let times = linspace(0.7 * t_pi, 1.3 * t_pi, 31);
    let progs: Vec<_> = times.iter().map(|&t| single(omega_d, t)).collect();
    let p = session.measure("rabi_time_fine", "t_pulse_ns", &times, &progs)?;
    t_pi = peak_position(&times, &p).unwrap_or(t_pi);
    let rate = PI / 2.0 / (t_pi - t_pi_2).max(1e-3 * t_pi);

    let mut gate = CalibratedGate {
        n,
        omega_d,
        amplitude,
        t_pulse: t_pi,
        t_pulse_pi_2: t_pi_2,
        envelope: options.envelope,
        virtual_z_pi: 0.0,
        virtual_z_pi_2: 0.0,
        padding: 0.0,
        padding_pi_2: 0.0,
        frame_frequency: exec.qubit_frequency(),
        sampling_time: options.sampling_time,
    }
    .with_durations(t_pi, t_pi_2);

    // Ramsey with an artificial detuning of the software frame
    let f_art = (rate / (2.0 * PI) / 8.0).max(2e-4);
    let probe = CalibratedGate {
        frame_frequency: gate.frame_frequency + f_art,
        ..gate.clone()
    };
    let delays = linspace(0.0, 3.0 / f_art, 61);
    let progs: Vec<_> = delays
        .iter()
        .map(|&d| compile(&probe, &[Op::X90, Op::Delay { duration: d }, Op::X90]))
        .collect::<Result<_>>()?;
    let p = session.measure("ramsey", "delay_ns", &delays, &progs)?;
    let f_osc = fit_frequency(&delays, &p, 0.3 * f_art, 1.7 * f_art)?;
    gate.frame_frequency += f_art - f_osc;

    // virtual-Z scans: X90·X90 and X90·X180·(−X90) both end in |e⟩
    let angles = linspace(-PI, PI, 17)[..16].to_vec();
    for (kind, ops, step) in [
        (GateKind::HalfPi, vec![Op::X90, Op::X90], "phase_pi_2"),
        (GateKind::Pi, vec![Op::X90, Op::X180, Op::MINUS_X90], "phase_pi"),
    ] {
        let progs: Vec<_> = angles
            .iter()
            .map(|&a| {
                let mut g = gate.clone();
                match kind {
                    GateKind::HalfPi => g.virtual_z_pi_2 = wrap_phase(a / nf),
                    GateKind::Pi => g.virtual_z_pi = wrap_phase(a / nf),
                }
                compile(&g, &ops)
            })
            .collect::<Result<_>>()?;
        let p = session.measure(step, "qubit_frame_angle_rad", &angles, &progs)?;
        let (c, _) = fit_sinusoid(&angles, &p, 1.0).ok_or_else(|| Error::FitFailure(step.into()))?;
        let best = wrap_phase(c[2].atan2(c[1]) / nf);
        match kind {
            GateKind::HalfPi => gate.virtual_z_pi_2 = best,
            GateKind::Pi => gate.virtual_z_pi = best,
        }
    }
    gate.validate()?;
    Ok(CalibrationRun {
        gate,
        scans: session.scans,
        rounds: Vec::new(),
    })
}

/// The five amplification trains, in parameter order.
fn trains(n_rep: u32) -> [Vec<Op>; 5] {
    let rep = |prefix: Vec<Op>, body: &[Op], suffix: &[Op]| {
        let mut v = prefix;
        for _ in 0..n_rep {
            v.extend_from_slice(body);
        }
        v.extend_from_slice(suffix);
        v
    };
    [
        rep(vec![Op::X90], &[Op::X180], &[]),
        rep(vec![Op::X90], &[Op::X90, Op::X90], &[]),
        rep(vec![Op::Y90], &[Op::X180, Op::MINUS_X180], &[]),
        rep(vec![], &[Op::X90, Op::MINUS_X90], &[Op::Y90]),
        rep(vec![Op::X90], &[Op::X90, Op::X90, Op::X180], &[Op::Y90]),
    ]
}

/// Excited population of `ops` for an ideal two-level gate set with the
/// given errors.
fn model_population(ops: &[Op], e: &[f64]) -> f64 {
    let i = Complex64::i();
    let mut psi = nalgebra::Vector2::new(Complex64::from(1.0), Complex64::from(0.0));
    let mut frame = 0.0;
    for op in ops {
        match *op {
            Op::Rotation { kind, axis } => {
                let (angle, slip) = match kind {
                    GateKind::Pi => (PI + e[0], e[4]),
                    GateKind::HalfPi => (PI / 2.0 + e[1], e[3]),
                };
                let a = axis + frame;
                let norm = (1.0 + e[2] * e[2]).sqrt();
                let (nx, ny, nz) = (a.cos() / norm, a.sin() / norm, e[2] / norm);
                let half = 0.5 * angle * norm;
                let (c, s) = (half.cos(), half.sin());
                let u = Matrix2::new(
                    Complex64::from(c) - i * s * nz,
                    -i * s * Complex64::new(nx, -ny),
                    -i * s * Complex64::new(nx, ny),
                    Complex64::from(c) + i * s * nz,
                );
                psi = u * psi;
                frame += slip;
            }
            Op::Delay { .. } => {}
            Op::VirtualZ { angle } => frame += angle,
        }
    }
    psi[1].norm_sqr()
}

struct TrainData {
    ops: Vec<Vec<Op>>,
    p: Vec<f64>,
    sigma: Vec<f64>,
    /// Index into the schedule, for progressive fitting.
    depth: Vec<usize>,
}

/// Gauss–Newton fit of the error vector, adding longer trains one step at a
/// time so that large errors are unwrapped before they alias.
fn fit_errors(data: &TrainData, schedule_len: usize, free: &[bool; 5], start: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut e = start.to_vec();
    let idx: Vec<usize> = (0..5).filter(|&k| free[k]).collect();
    let mut cov_diag = vec![0.0; 5];
    for depth in 1..schedule_len {
        let rows: Vec<usize> = (0..data.p.len()).filter(|&r| data.depth[r] <= depth).collect();
        for _ in 0..30 {
            let r: Vec<f64> = rows.iter().map(|&k| model_population(&data.ops[k], &e) - data.p[k]).collect();
            let jac = DMatrix::from_fn(rows.len(), idx.len(), |ri, ci| {
                let h = 1e-7;
                let mut ep = e.clone();
                ep[idx[ci]] += h;
                let mut em = e.clone();
                em[idx[ci]] -= h;
                (model_population(&data.ops[rows[ri]], &ep) - model_population(&data.ops[rows[ri]], &em)) / (2.0 * h)
            });
            let jtj = jac.transpose() * &jac;
            let scale = jtj.diagonal().max().max(1e-300);
            let lhs = &jtj + DMatrix::identity(idx.len(), idx.len()) * (1e-12 * scale);
            let rhs = -(jac.transpose() * DVector::from_vec(r.clone()));
            let Some(step) = lhs.clone().lu().solve(&rhs) else {
                return Err(Error::FitFailure("singular amplification Jacobian".into()));
            };
            let ssr: f64 = r.iter().map(|v| v * v).sum();
            let mut t = 1.0;
            loop {
                let mut cand = e.clone();
                for (ci, &k) in idx.iter().enumerate() {
                    cand[k] += t * step[ci];
                }
                let s: f64 = rows
                    .iter()
                    .map(|&k| (model_population(&data.ops[k], &cand) - data.p[k]).powi(2))
                    .sum();
                if s <= ssr || t < 1e-4 {
                    e = cand;
                    break;
                }
                t *= 0.5;
            }
            if step.amax() * t < 1e-13 {
                break;
            }
            if depth + 1 == schedule_len {
                if let Some(inv) = lhs.try_inverse() {
                    let jt = jac.transpose();
                    let w = DMatrix::from_diagonal(&DVector::from_iterator(
                        rows.len(),
                        rows.iter().map(|&k| data.sigma[k].powi(2)),
                    ));
                    let cov = &inv * (&jt * w * jt.transpose()) * &inv;
                    for (ci, &k) in idx.iter().enumerate() {
                        cov_diag[k] = cov[(ci, ci)].max(0.0);
                    }
                }
            }
        }
    }
    Ok((e, cov_diag.iter().map(|v| v.sqrt()).collect()))
}

fn measure_trains(
    session: &mut Session,
    gate: &CalibratedGate,
    schedule: &[u32],
    which: &[usize],
    label: &str,
) -> Result<TrainData> {
    let mut data = TrainData {
        ops: Vec::new(),
        p: Vec::new(),
        sigma: Vec::new(),
        depth: Vec::new(),
    };
    for &k in which {
        let ops: Vec<Vec<Op>> = schedule.iter().map(|&n| trains(n)[k].clone()).collect();
        let progs: Vec<_> = ops.iter().map(|o| compile(gate, o)).collect::<Result<_>>()?;
        let x: Vec<f64> = schedule.iter().map(|&n| n as f64).collect();
        let names = ["amplitude_pi", "amplitude_pi_2", "frequency", "phase_pi_2", "phase_pi"];
        let p = session.measure(&format!("{label}{}", names[k]), "repetitions", &x, &progs)?;
        for (d, (o, v)) in ops.into_iter().zip(p).enumerate() {
            data.sigma.push(session.shots.sigma(v).max(if session.shots == Shots::Exact { 0.0 } else { 1e-3 }));
            data.ops.push(o);
            data.p.push(v);
            data.depth.push(d);
        }
    }
    Ok(data)
}

/// Fine pass with default options and `max_rounds`.
pub fn fine_calibrate(exec: &dyn ExperimentExecutor, gate: &CalibratedGate, max_rounds: usize) -> Result<CalibratedGate> {
    let options = CalibrationOptions {
        max_rounds,
        ..CalibrationOptions::default()
    };
    Ok(fine_calibrate_with(exec, gate, &options)?.gate)
}

/// Finite-difference response of the five fitted errors to the controls
/// (t_π, t_π/2, ω_d, vz_π/2, vz_π).
fn probe_jacobian(
    session: &mut Session<'_>,
    g: &CalibratedGate,
    schedule: &[u32],
    e: &[f64],
    round: usize,
) -> Result<DMatrix<f64>> {
    let nf = g.n as f64;
    let rate = PI / 2.0 / (g.t_pulse - g.t_pulse_pi_2);
    let mut jac = DMatrix::zeros(5, 5);
    jac[(3, 3)] = -nf;
    jac[(4, 4)] = -nf;
    let all = [true; 5];
    for c in 0..3 {
        let (shifted, h) = match c {
            0 => {
                let h = 0.02 / rate;
                (g.clone().with_durations(g.t_pulse + h, g.t_pulse_pi_2), h)
            }
            1 => {
                let h = 0.02 / rate;
                (g.clone().with_durations(g.t_pulse, g.t_pulse_pi_2 + h), h)
            }
            _ => {
                let h = 0.02 / (nf * g.t_pulse);
                (
                    CalibratedGate {
                        omega_d: g.omega_d + h,
                        ..g.clone()
                    },
                    h,
                )
            }
        };
        let data = measure_trains(session, &shifted, schedule, &[0, 1, 2, 3, 4], &format!("round{round}_probe{c}_"))?;
        let (ep, _) = fit_errors(&data, schedule.len(), &all, e)?;
        for k in 0..5 {
            jac[(k, c)] = (ep[k] - e[k]) / h;
        }
    }
    if !jac.iter().all(|v| v.is_finite()) || jac[(2, 2)] == 0.0 {
        return Err(Error::Degenerate("frequency train does not respond to the drive frequency".into()));
    }
    Ok(jac)
}

/// Error-amplification rounds until every fitted error is below tolerance
/// or below twice its shot-noise standard error.
///
/// Pulse lengths move on a continuous grid (padding keeps the total on the
/// sampling grid), the drive frequency by a secant step whose slope is
/// probed in the first round, and virtual-Z angles directly.
pub fn fine_calibrate_with(
    exec: &dyn ExperimentExecutor,
    gate: &CalibratedGate,
    options: &CalibrationOptions,
) -> Result<CalibrationRun> {
    options.validate()?;
    gate.validate()?;
    if gate.t_pulse <= gate.t_pulse_pi_2 {
        return Err(Error::Precondition(format!(
            "π pulse ({} ns) must be longer than π/2 pulse ({} ns)",
            gate.t_pulse, gate.t_pulse_pi_2
        )));
    }
    let nf = gate.n as f64;
    let schedule = &options.schedule;
    let mut session = Session::new(exec, options);
    let mut g = gate.clone();
    let mut rounds = Vec::new();
    let mut jacobian: Option<DMatrix<f64>> = None;
    let mut trace: Vec<f64> = Vec::new();
    let all = [true; 5];

    for round in 1..=options.max_rounds {
        let data = measure_trains(&mut session, &g, schedule, &[0, 1, 2, 3, 4], &format!("round{round}_"))?;
        let (e, se) = fit_errors(&data, schedule.len(), &all, &[0.0; 5])?;
        if e[0].abs() > 0.3 || e[1].abs() > 0.3 || e[3].abs() > 1.0 || e[4].abs() > 1.0 {
            trace.push(f64::INFINITY);
            return Err(Error::Instability {
                reason: format!("fitted errors {e:?} exceed the amplification capture range"),
                trace,
            });
        }

        let jac = match &jacobian {
            Some(j) => j.clone(),
            None => {
                let j = probe_jacobian(&mut session, &g, schedule, &e, round)?;
                jacobian = Some(j.clone());
                j
            }
        };
        let Some(step) = jac.clone().lu().solve(&-DVector::from_column_slice(&e)) else {
            return Err(Error::Degenerate("control Jacobian is singular".into()));
        };
        let Some(jinv) = jac.try_inverse() else {
            return Err(Error::Degenerate("control Jacobian is singular".into()));
        };
        let freq_sd = nf * (0..5).map(|k| (jinv[(2, k)] * se[k]).powi(2)).sum::<f64>().sqrt();
        let freq_error = (nf * step[2]).abs();
        let below = |x: f64, sd: f64, tol: f64| x.abs() < tol.max(2.0 * sd);
        let converged = below(e[0], se[0], options.angle_tolerance)
            && below(e[1], se[1], options.angle_tolerance)
            && below(freq_error, freq_sd, options.frequency_tolerance)
            && below(e[3], se[3], options.angle_tolerance)
            && below(e[4], se[4], options.angle_tolerance);
        let norm = (e[0].powi(2) + e[1].powi(2) + e[3].powi(2) + e[4].powi(2)).sqrt()
            + freq_error / options.frequency_tolerance * options.angle_tolerance;
        trace.push(norm);

        if !converged {
            let t_pi = g.t_pulse + step[0];
            let t_pi_2 = g.t_pulse_pi_2 + step[1];
            if !(t_pi > t_pi_2 && t_pi_2 > 0.0) {
                return Err(Error::Instability {
                    reason: format!("pulse lengths left the valid range ({t_pi} ns, {t_pi_2} ns)"),
                    trace,
                });
            }
            g = g.with_durations(t_pi, t_pi_2);
            g.omega_d += step[2];
            g.virtual_z_pi_2 = wrap_phase(g.virtual_z_pi_2 + step[3]);
            g.virtual_z_pi = wrap_phase(g.virtual_z_pi + step[4]);
        }
        rounds.push(RoundRecord {
            round,
            errors: GateErrors::from_slice(&e),
            stderr: GateErrors::from_slice(&se),
            frequency_error: freq_error,
            converged,
            gate: g.clone(),
        });
        if converged {
            g.validate()?;
            return Ok(CalibrationRun {
                gate: g,
                scans: session.scans,
                rounds,
            });
        }
        let n = trace.len();
        if n >= 3 && trace[n - 1] > 2.0 * trace[n - 2] && trace[n - 2] > 2.0 * trace[n - 3] {
            return Err(Error::Instability {
                reason: "corrections diverge".into(),
                trace,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "fine calibration",
        iterations: options.max_rounds,
        last: format!("{:?}", rounds.last().map(|r: &RoundRecord| r.errors.to_vec())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact() -> CalibrationOptions {
        CalibrationOptions {
            shots: Shots::Exact,
            ..CalibrationOptions::default()
        }
    }

    #[test]
    fn padding_reaches_grid() {
        assert!((padding_to_grid(10.2, 0.5) - 0.3).abs() < 1e-12);
        assert_eq!(padding_to_grid(10.0, 0.5), 0.0);
    }

    #[test]
    fn zero_shift_gives_zero_phase() {
        assert_eq!(virtual_z_phase(&|_| 0.0, 100.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_phase() {
        let v = virtual_z_phase(&|_| 1e-3, 200.0, 3).unwrap();
        assert!((v - 1e-3 * 200.0 * 2.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flat_top_phase_lies_between_bounds() {
        let env = Envelope::default();
        let t = 120.0;
        let d = 2e-3;
        let v = virtual_z_phase(&|s| d * env.value(s, t).powi(2), t, 3).unwrap();
        let (a, b) = env.plateau(t);
        let lo = 2.0 * PI * d * (b - a) / 3.0;
        let hi = 2.0 * PI * d * t / 3.0;
        assert!(v > lo && v < hi);
    }

    #[test]
    fn model_is_ideal_without_errors() {
        for k in 0..5 {
            for n in DEFAULT_SCHEDULE {
                let p = model_population(&trains(n)[k], &[0.0; 5]);
                assert!((p - 0.5).abs() < 1e-12, "train {k} N={n}: {p}");
            }
        }
    }

    #[test]
    fn amplification_design_is_well_conditioned() {
        let rows: Vec<Vec<Op>> = DEFAULT_SCHEDULE
            .iter()
            .flat_map(|&n| trains(n).into_iter())
            .collect();
        let jac = DMatrix::from_fn(rows.len(), 5, |r, c| {
            let mut e = [0.0; 5];
            e[c] = 1e-6;
            let mut m = [0.0; 5];
            m[c] = -1e-6;
            (model_population(&rows[r], &e) - model_population(&rows[r], &m)) / 2e-6
        });
        let sv = jac.singular_values();
        assert!(sv.min() > 0.05 * sv.max(), "{sv}");
    }

    #[test]
    fn compile_shifts_phase_by_quarter_turn_over_n() {
        let b = TwoLevelBackend::reference();
        let gate = CalibratedGate {
            n: 3,
            omega_d: b.resonant_frequency(0.03),
            amplitude: 0.03,
            t_pulse: 100.0,
            t_pulse_pi_2: 50.0,
            envelope: Envelope::default(),
            virtual_z_pi: 0.0,
            virtual_z_pi_2: 0.0,
            padding: 0.0,
            padding_pi_2: 0.0,
            frame_frequency: b.f_eg,
            sampling_time: 0.5,
        };
        let phase = |op: Op| match compile(&gate, &[op]).unwrap()[0] {
            Instruction::Pulse { pulse } => pulse.phase,
            _ => unreachable!(),
        };
        assert!((phase(Op::Y90) - phase(Op::X90) - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rough_then_fine_on_two_level_model() {
        let b = TwoLevelBackend::reference();
        let run = rough_calibrate_with(&b, 3, 0.03, &exact()).unwrap();
        let f_true = b.resonant_frequency(0.03);
        assert!((run.gate.omega_d - f_true).abs() < 5e-5, "{} vs {f_true}", run.gate.omega_d);
        assert!((run.gate.frame_frequency - b.f_eg).abs() < 1e-5);
        let fine = fine_calibrate_with(&b, &run.gate, &exact()).unwrap();
        assert!(fine.rounds.len() <= 5, "{:#?}", fine.rounds);
        let again = fine_calibrate_with(&b, &fine.gate, &exact()).unwrap();
        assert_eq!(again.rounds.len(), 1);
    }

    #[test]
    fn one_photon_calibration_lands_on_qubit_frequency() {
        let b = TwoLevelBackend::new(1, 0.8, 0.0, 0.5).unwrap();
        let run = rough_calibrate_with(&b, 1, 0.002, &exact()).unwrap();
        assert!((run.gate.omega_d - 0.8).abs() < 1e-5);
    }

    #[test]
    fn too_weak_drive_is_out_of_range() {
        let b = TwoLevelBackend::reference();
        let options = CalibrationOptions {
            t_pi_guess: Some(50.0),
            ..exact()
        };
        let err = rough_calibrate_with(&b, 3, 1e-4, &options).unwrap_err();
        assert!(matches!(err, Error::AmplitudeOutOfRange(_)), "{err}");
    }
}
