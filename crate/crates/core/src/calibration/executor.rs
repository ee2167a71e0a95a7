//! Experiment executors: anything that turns a pulse program into an
//! excited-state population.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::circuit::EigenSystem;
use crate::effective::{floquet_magnus_generic, nearest_harmonic_frame, solve_resonance_generic};
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::propagation::{DrivenQubit, DEFAULT_DT};
use crate::pulse::DrivePulse;

/// One element of a pulse program. Programs start in the ground state at
/// `t = 0` and run back to back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instruction {
    /// `pulse.phase` is the carrier phase at the start of this pulse.
    Pulse { pulse: DrivePulse },
    /// Zero-amplitude wait, ns.
    Delay { duration: f64 },
}

impl Instruction {
    pub fn duration(&self) -> f64 {
        match self {
            Instruction::Pulse { pulse } => pulse.t_pulse,
            Instruction::Delay { duration } => *duration,
        }
    }
}

/// Number of single-shot readouts per estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    /// Return the exact population.
    Exact,
    Count(u64),
}

impl Default for Shots {
    fn default() -> Self {
        Shots::Count(1024)
    }
}

impl Shots {
    /// Binomial estimate of `p`, or `p` itself for [`Shots::Exact`].
    pub fn sample(self, p: f64, seed: u64) -> Result<f64> {
        match self {
            Shots::Exact => Ok(p),
            Shots::Count(0) => Err(invalid("shots", "must be at least 1")),
            Shots::Count(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Binomial::new(n, p.clamp(0.0, 1.0))
                    .map_err(|e| Error::InvalidInput(format!("binomial sampling: {e}")))?;
                Ok(dist.sample(&mut rng) as f64 / n as f64)
            }
        }
    }

    /// Standard deviation of the estimate at population `p`.
    pub fn sigma(self, p: f64) -> f64 {
        match self {
            Shots::Exact => 0.0,
            Shots::Count(n) => (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / n.max(1) as f64).sqrt(),
        }
    }
}

/// Model-based starting point for a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceGuess {
    /// GHz.
    pub omega_d: f64,
    /// ns.
    pub t_pi: f64,
}

/// The device under calibration.
///
/// Implementations take `&self` and hold no per-run state, so independent
/// calibration sessions can share one executor across threads.
pub trait ExperimentExecutor: Send + Sync {
    /// Exact excited-state population at the end of `program`.
    fn excited_population(&self, program: &[Instruction]) -> Result<f64>;

    /// Qubit frequency known before calibration (from spectroscopy), GHz.
    fn qubit_frequency(&self) -> f64;

    /// Prior estimate of the `n`-photon resonance at source amplitude
    /// `amplitude` (Φ/Φ₀).
    fn resonance_guess(&self, n: u32, amplitude: f64) -> Result<ResonanceGuess>;

    /// Estimated population with shot noise; deterministic in `seed`.
    fn run(&self, program: &[Instruction], shots: Shots, seed: u64) -> Result<f64> {
        shots.sample(self.excited_population(program)?, seed)
    }
}

fn validate_program(program: &[Instruction]) -> Result<()> {
    for ins in program {
        match ins {
            Instruction::Pulse { pulse } => pulse.validate()?,
            Instruction::Delay { duration } => {
                if !(duration.is_finite() && *duration >= 0.0) {
                    return Err(invalid("duration", format!("must be non-negative, got {duration}")));
                }
            }
        }
    }
    Ok(())
}

type U2 = Matrix2<Complex64>;

/// Effective two-level model of an `n`-photon drive.
///
/// In the frame rotating at `f_eg`, a pulse of reduced amplitude `φ̄E(t)`
/// gives `H/h = δ(t)|e⟩⟨e| + Ω(t)(e^{−iχ(t)}|e⟩⟨g| + h.c.)` with
/// `δ = stark_coefficient·(φ̄E)²`, `Ω = rabi_coefficient·(φ̄E)ⁿ` and
/// `χ(t) = n·(carrier phase) − 2π f_eg t`. Delays are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelBackend {
    pub n: u32,
    /// GHz.
    pub f_eg: f64,
    /// GHz per φ̄².
    pub stark_coefficient: f64,
    /// GHz per φ̄ⁿ.
    pub rabi_coefficient: f64,
    /// Qubit frequency reported to the calibration, GHz.
    pub reported_f_eg: f64,
    /// Edge step, ns.
    pub dt: f64,
}

impl TwoLevelBackend {
    pub fn new(n: u32, f_eg: f64, stark_coefficient: f64, rabi_coefficient: f64) -> Result<Self> {
        let b = Self {
            n,
            f_eg,
            stark_coefficient,
            rabi_coefficient,
            reported_f_eg: f_eg,
            dt: 0.05,
        };
        b.validate()?;
        Ok(b)
    }

    /// Three-photon coefficients close to the reference fluxonium.
    pub fn reference() -> Self {
        Self {
            n: 3,
            f_eg: 1.332_377_260_71,
            stark_coefficient: 1.2246,
            rabi_coefficient: -0.31,
            reported_f_eg: 1.332_377_260_71,
            dt: 0.05,
        }
    }

    pub fn with_reported_frequency(self, f: f64) -> Self {
        Self { reported_f_eg: f, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        ensure_positive("f_eg", self.f_eg)?;
        ensure_positive("reported_f_eg", self.reported_f_eg)?;
        ensure_positive("dt", self.dt)?;
        if !self.stark_coefficient.is_finite() || !self.rabi_coefficient.is_finite() || self.rabi_coefficient == 0.0 {
            return Err(invalid("rabi_coefficient", "must be finite and non-zero"));
        }
        Ok(())
    }

    /// Plateau Stark shift, GHz.
    pub fn stark_shift(&self, amplitude: f64) -> f64 {
        self.stark_coefficient * (2.0 * PI * amplitude).powi(2)
    }

    /// Plateau Rabi rate, GHz.
    pub fn rabi_rate(&self, amplitude: f64) -> f64 {
        self.rabi_coefficient * (2.0 * PI * amplitude).powi(self.n as i32)
    }

    /// Drive frequency resonant on the plateau, GHz.
    pub fn resonant_frequency(&self, amplitude: f64) -> f64 {
        (self.f_eg + self.stark_shift(amplitude)) / self.n as f64
    }

    /// `exp(−2πi(a|e⟩⟨e| + w σ_x)τ)`.
    fn step(a: f64, w: f64, tau: f64) -> U2 {
        let g = (0.25 * a * a + w * w).sqrt();
        let theta = 2.0 * PI * g * tau;
        let (c, s) = (theta.cos(), theta.sin());
        let global = Complex64::from_polar(1.0, -PI * a * tau);
        let i = Complex64::i();
        let (nz, nx) = if g > 0.0 { (-0.5 * a / g, w / g) } else { (0.0, 0.0) };
        let m = U2::new(
            Complex64::from(c) - i * s * nz,
            -i * s * nx,
            -i * s * nx,
            Complex64::from(c) + i * s * nz,
        );
        m * global
    }

    fn frame(chi: f64) -> U2 {
        U2::new(
            Complex64::from(1.0),
            Complex64::from(0.0),
            Complex64::from(0.0),
            Complex64::from_polar(1.0, -chi),
        )
    }

    fn pulse_unitary(&self, pulse: &DrivePulse, t0: f64) -> U2 {
        let nf = self.n as f64;
        let t = pulse.t_pulse;
        let phi_bar = pulse.phi_bar();
        let detuning = nf * pulse.omega_d - self.f_eg;
        let chi = |s: f64| nf * (2.0 * PI * pulse.omega_d * s + pulse.phase) - 2.0 * PI * self.f_eg * (t0 + s);
        let coeffs = |s: f64| {
            let x = phi_bar * pulse.envelope.value(s, t);
            (
                self.stark_coefficient * x * x - detuning,
                self.rabi_coefficient * x.powi(self.n as i32),
            )
        };
        let (a, b) = pulse.envelope.plateau(t);
        let mut u = U2::identity();
        let walk = |from: f64, to: f64, u: &mut U2| {
            if to <= from {
                return;
            }
            let steps = ((to - from) / self.dt).ceil().max(1.0) as usize;
            let h = (to - from) / steps as f64;
            for j in 0..steps {
                let (ca, cw) = coeffs(from + (j as f64 + 0.5) * h);
                *u = Self::step(ca, cw, h) * *u;
            }
        };
        walk(0.0, a, &mut u);
        if b > a {
            let (ca, cw) = coeffs(0.5 * (a + b));
            u = Self::step(ca, cw, b - a) * u;
        }
        walk(b.max(a), t, &mut u);
        Self::frame(chi(t)) * u * Self::frame(chi(0.0)).adjoint()
    }

    /// Propagator of `program` in the frame rotating at `f_eg`.
    pub fn program_unitary(&self, program: &[Instruction]) -> Result<U2> {
        validate_program(program)?;
        let mut u = U2::identity();
        let mut t0 = 0.0;
        for ins in program {
            if let Instruction::Pulse { pulse } = ins {
                if pulse.amplitude > 0.0 {
                    u = self.pulse_unitary(pulse, t0) * u;
                }
            }
            t0 += ins.duration();
        }
        Ok(u)
    }
}

impl ExperimentExecutor for TwoLevelBackend {
    fn excited_population(&self, program: &[Instruction]) -> Result<f64> {
        let psi = self.program_unitary(program)? * Vector2::new(Complex64::from(1.0), Complex64::from(0.0));
        Ok(psi[1].norm_sqr())
    }

    fn qubit_frequency(&self) -> f64 {
        self.reported_f_eg
    }

    fn resonance_guess(&self, n: u32, amplitude: f64) -> Result<ResonanceGuess> {
        if n != self.n {
            return Err(invalid("n", format!("backend models n = {}, got {n}", self.n)));
        }
        ensure_positive("amplitude", amplitude)?;
        let omega = self.rabi_rate(amplitude).abs();
        Ok(ResonanceGuess {
            omega_d: (self.reported_f_eg + self.stark_shift(amplitude)) / n as f64,
            t_pi: 1.0 / (4.0 * omega),
        })
    }
}

/// The full multi-level fluxonium propagated in the lab frame.
#[derive(Debug, Clone)]
pub struct FluxoniumBackend {
    qubit: DrivenQubit,
    eigs: EigenSystem,
    pub dt: f64,
}

impl FluxoniumBackend {
    /// Propagate with the lowest `levels` states.
    pub fn new(eigs: &EigenSystem, levels: usize) -> Result<Self> {
        let eigs = eigs.truncated(levels)?;
        Ok(Self {
            qubit: DrivenQubit::new(&eigs),
            eigs,
            dt: DEFAULT_DT,
        })
    }

    pub fn qubit(&self) -> &DrivenQubit {
        &self.qubit
    }
}

impl ExperimentExecutor for FluxoniumBackend {
    fn excited_population(&self, program: &[Instruction]) -> Result<f64> {
        validate_program(program)?;
        let n = self.qubit.levels();
        let mut psi = DMatrix::<Complex64>::zeros(n, 1);
        psi[(0, 0)] = Complex64::from(1.0);
        for ins in program {
            match ins {
                Instruction::Pulse { pulse } if pulse.amplitude > 0.0 => {
                    self.qubit.evolve(pulse, self.dt, &mut psi, None)?
                }
                other => self.qubit.idle(other.duration(), &mut psi),
            }
        }
        Ok(psi[(1, 0)].norm_sqr())
    }

    fn qubit_frequency(&self) -> f64 {
        self.eigs.f_ge()
    }

    fn resonance_guess(&self, n: u32, amplitude: f64) -> Result<ResonanceGuess> {
        ensure_positive("amplitude", amplitude)?;
        let levels = self.eigs.n_levels.min(10);
        let phi_bar = 2.0 * PI * amplitude;
        let omega_d = if n == 1 {
            self.eigs.f_ge()
        } else {
            solve_resonance_generic(&self.eigs, n, phi_bar, 3, levels)?
        };
        let rate = if n == 1 {
            0.5 * self.eigs.params.e_l * phi_bar * self.eigs.phase_elements[(0, 1)].abs()
        } else {
            let fh = nearest_harmonic_frame(&self.eigs, n, omega_d, phi_bar, levels)?;
            floquet_magnus_generic(&fh, 3)?[(1, 0)].norm()
        };
        let t_pi = if rate > 1e-9 { 1.0 / (4.0 * rate) } else { 1000.0 };
        Ok(ResonanceGuess { omega_d, t_pi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::Envelope;

    #[test]
    fn exact_shots_return_population() {
        assert_eq!(Shots::Exact.sample(0.3, 1).unwrap(), 0.3);
        let a = Shots::Count(1024).sample(0.3, 7).unwrap();
        let b = Shots::Count(1024).sample(0.3, 7).unwrap();
        assert_eq!(a, b);
        assert!((a - 0.3).abs() < 0.07);
    }

    #[test]
    fn rectangular_resonant_pi_pulse() {
        let b = TwoLevelBackend::reference();
        let amp = 0.03;
        let t = 1.0 / (4.0 * b.rabi_rate(amp).abs());
        let pulse = DrivePulse::new(amp, b.resonant_frequency(amp), t, Envelope::Rectangular);
        let p = b.excited_population(&[Instruction::Pulse { pulse }]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delays_are_free_and_unitary() {
        let b = TwoLevelBackend::reference();
        let pulse = DrivePulse::new(0.03, b.resonant_frequency(0.03), 40.0, Envelope::default());
        let prog = [
            Instruction::Pulse { pulse },
            Instruction::Delay { duration: 100.0 },
            Instruction::Pulse { pulse },
        ];
        let u = b.program_unitary(&prog).unwrap();
        assert!((u.adjoint() * u - U2::identity()).norm() < 1e-12);
        assert!(b.program_unitary(&[Instruction::Delay { duration: -1.0 }]).is_err());
    }

    #[test]
    fn fluxonium_backend_excites_at_one_photon() {
        let eigs = EigenSystem::with_defaults(&crate::circuit::CircuitParams::reference_device()).unwrap();
        let b = FluxoniumBackend::new(&eigs, 6).unwrap();
        let g = b.resonance_guess(1, 1e-4).unwrap();
        let pulse = DrivePulse::new(1e-4, g.omega_d, g.t_pi, Envelope::Rectangular);
        let p = b.excited_population(&[Instruction::Pulse { pulse }]).unwrap();
        assert!(p > 0.95, "{p}");
    }
}
