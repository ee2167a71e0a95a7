//! Single-qubit Clifford compilation and randomized benchmarking.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::numerics::minimize_scalar;

type U2 = Matrix2<Complex64>;

/// Number of single-qubit Cliffords.
pub const CLIFFORD_COUNT: usize = 24;

/// Default RB sequence lengths.
pub const DEFAULT_LENGTHS: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];

/// Default number of random sequences per length.
pub const DEFAULT_SEQUENCES: usize = 30;

/// The nine native gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Generator {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "X")]
    X,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "Y")]
    Y,
    #[serde(rename = "-Y")]
    MinusY,
    #[serde(rename = "X/2")]
    X90,
    #[serde(rename = "-X/2")]
    MinusX90,
    #[serde(rename = "Y/2")]
    Y90,
    #[serde(rename = "-Y/2")]
    MinusY90,
}

impl Generator {
    pub const ALL: [Generator; 9] = [
        Generator::I,
        Generator::X,
        Generator::MinusX,
        Generator::Y,
        Generator::MinusY,
        Generator::X90,
        Generator::MinusX90,
        Generator::Y90,
        Generator::MinusY90,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::I => "I",
            Generator::X => "X",
            Generator::MinusX => "-X",
            Generator::Y => "Y",
            Generator::MinusY => "-Y",
            Generator::X90 => "X/2",
            Generator::MinusX90 => "-X/2",
            Generator::Y90 => "Y/2",
            Generator::MinusY90 => "-Y/2",
        }
    }

    /// Rotation axis (0 = none, 1 = x, 2 = y) and angle.
    fn rotation(self) -> (u8, f64) {
        match self {
            Generator::I => (0, 0.0),
            Generator::X => (1, PI),
            Generator::MinusX => (1, -PI),
            Generator::Y => (2, PI),
            Generator::MinusY => (2, -PI),
            Generator::X90 => (1, PI / 2.0),
            Generator::MinusX90 => (1, -PI / 2.0),
            Generator::Y90 => (2, PI / 2.0),
            Generator::MinusY90 => (2, -PI / 2.0),
        }
    }

    /// `exp(−iθσ/2)`.
    pub fn unitary(self) -> U2 {
        let (axis, theta) = self.rotation();
        let c = Complex64::from((theta / 2.0).cos());
        let s = (theta / 2.0).sin();
        let z = Complex64::from(0.0);
        match axis {
            0 => U2::identity(),
            1 => U2::new(c, Complex64::new(0.0, -s), Complex64::new(0.0, -s), c),
            _ => U2::new(c, Complex64::from(-s), Complex64::from(s), c),
        }
        .map(|v| if v.norm() < 1e-17 { z } else { v })
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown gate `{s}`; expected one of I, X, -X, Y, -Y, X/2, -X/2, Y/2, -Y/2")))
    }
}

/// Native gates sharing one duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSet {
    /// Gate duration, ns.
    pub t_g: f64,
}

/// Key identifying a unitary up to global phase.
fn phase_key(u: &U2) -> [i64; 8] {
    let pivot = u.iter().find(|z| z.norm() > 1e-6).copied().unwrap_or(Complex64::from(1.0));
    let phase = pivot.conj() / pivot.norm();
    let mut key = [0i64; 8];
    for (i, z) in u.iter().enumerate() {
        let w = z * phase;
        key[2 * i] = (w.re * 1e6).round() as i64;
        key[2 * i + 1] = (w.im * 1e6).round() as i64;
    }
    key
}

/// The 24 Cliffords, their shortest decompositions and the group table.
#[derive(Debug, Clone)]
pub struct CliffordGroup {
    words: Vec<Vec<Generator>>,
    unitaries: Vec<U2>,
    /// `table[a][b]`: index of "`a` then `b`".
    table: Vec<[usize; CLIFFORD_COUNT]>,
    inverse: [usize; CLIFFORD_COUNT],
}

/// Shortest decomposition of every Clifford into the gate set.
///
/// Words are searched breadth-first in generator order, so ties go to the
/// lexicographically first word. The identity is the single gate `I`.
pub fn compile_cliffords() -> &'static CliffordGroup {
    static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
    GROUP.get_or_init(build_group)
}

fn build_group() -> CliffordGroup {
    let mut words: Vec<Vec<Generator>> = Vec::new();
    let mut unitaries: Vec<U2> = Vec::new();
    let mut index: HashMap<[i64; 8], usize> = HashMap::new();
    let mut frontier: Vec<(Vec<Generator>, U2)> = Vec::new();
    for g in Generator::ALL {
        let u = g.unitary();
        let key = phase_key(&u);
        if !index.contains_key(&key) {
            index.insert(key, words.len());
            words.push(vec![g]);
            unitaries.push(u);
        }
        if g != Generator::I {
            frontier.push((vec![g], u));
        }
    }
    while words.len() < CLIFFORD_COUNT {
        let mut next = Vec::new();
        for (word, u) in &frontier {
            for g in Generator::ALL.into_iter().filter(|g| *g != Generator::I) {
                let v = g.unitary() * u;
                let key = phase_key(&v);
                if !index.contains_key(&key) {
                    index.insert(key, words.len());
                    let mut w = word.clone();
                    w.push(g);
                    words.push(w.clone());
                    unitaries.push(v);
                    next.push((w, v));
                }
            }
        }
        frontier = next;
    }
    let lookup = |u: &U2| -> usize {
        *index
            .get(&phase_key(u))
            .expect("Clifford products stay in the group")
    };
    let mut table = vec![[0usize; CLIFFORD_COUNT]; CLIFFORD_COUNT];
    let mut inverse = [0usize; CLIFFORD_COUNT];
    for a in 0..CLIFFORD_COUNT {
        for b in 0..CLIFFORD_COUNT {
            table[a][b] = lookup(&(unitaries[b] * unitaries[a]));
        }
        inverse[a] = lookup(&unitaries[a].adjoint());
    }
    CliffordGroup {
        words,
        unitaries,
        table,
        inverse,
    }
}

impl CliffordGroup {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, c: usize) -> &[Generator] {
        &self.words[c]
    }

    pub fn unitary(&self, c: usize) -> U2 {
        self.unitaries[c]
    }

    /// Index of "`a` then `b`".
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn inverse(&self, c: usize) -> usize {
        self.inverse[c]
    }

    /// Index of the Clifford equal to `u` up to phase, if any.
    pub fn find(&self, u: &U2) -> Option<usize> {
        let key = phase_key(u);
        self.unitaries.iter().position(|v| phase_key(v) == key)
    }

    /// Mean number of generators per Clifford.
    pub fn mean_length(&self) -> f64 {
        self.words.iter().map(|w| w.len()).sum::<usize>() as f64 / self.len() as f64
    }
}

/// Amplitude damping followed by pure dephasing, once per generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannel {
    /// µs; infinite for no relaxation.
    pub t1: f64,
    /// µs; infinite for no dephasing.
    pub t_phi: f64,
    /// ns.
    pub t_g: f64,
}

impl NoiseChannel {
    /// No decoherence.
    pub fn ideal(t_g: f64) -> Self {
        Self {
            t1: f64::INFINITY,
            t_phi: f64::INFINITY,
            t_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t1", self.t1), ("t_phi", self.t_phi)] {
            if !(v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.t_g >= 0.0 && self.t_g.is_finite()) {
            return Err(invalid("t_g", format!("must be non-negative, got {}", self.t_g)));
        }
        Ok(())
    }

    /// `1 − exp(−t_g/T₁)`.
    pub fn p1(&self) -> f64 {
        -(-self.t_g * 1e-3 / self.t1).exp_m1()
    }

    /// `1 − exp(−t_g/T_φ)`; coherences shrink by `1 − p_φ`.
    pub fn p_phi(&self) -> f64 {
        -(-self.t_g * 1e-3 / self.t_phi).exp_m1()
    }

    /// Kraus operators of the composed channel.
    pub fn kraus(&self) -> Vec<U2> {
        let p1 = self.p1();
        let coherence = 1.0 - self.p_phi();
        let lambda = 1.0 - coherence * coherence;
        let c = |x: f64| Complex64::from(x);
        let ad = [
            U2::new(c(1.0), c(0.0), c(0.0), c((1.0 - p1).sqrt())),
            U2::new(c(0.0), c(p1.sqrt()), c(0.0), c(0.0)),
        ];
        let pd = [
            U2::new(c(1.0), c(0.0), c(0.0), c((1.0 - lambda).sqrt())),
            U2::new(c(0.0), c(0.0), c(0.0), c(lambda.sqrt())),
        ];
        pd.iter().flat_map(|b| ad.iter().map(move |a| b * a)).collect()
    }

    fn apply(&self, rho: &mut U2, p1: f64, coherence: f64) {
        let ee = rho[(1, 1)];
        rho[(0, 0)] += ee * p1;
        rho[(1, 1)] = ee * (1.0 - p1);
        let f = (1.0 - p1).sqrt() * coherence;
        rho[(0, 1)] *= f;
        rho[(1, 0)] *= f;
    }
}

/// `1 − (t_g/3)(1/T_φ + 1/T₁)` with `t_g` in ns and times in µs.
pub fn coherence_limit(t_g: f64, t1: f64, t_phi: f64) -> Result<f64> {
    ensure_positive("t1", t1)?;
    ensure_positive("t_phi", t_phi)?;
    if !(t_g >= 0.0) {
        return Err(invalid("t_g", format!("must be non-negative, got {t_g}")));
    }
    Ok(1.0 - t_g * 1e-3 / 3.0 * (1.0 / t_phi + 1.0 / t1))
}

/// Mean ground-state population at one sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbPoint {
    pub length: usize,
    pub mean: f64,
    pub stderr: f64,
    pub sequences: usize,
}

/// Output of [`run_rb`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub points: Vec<RbPoint>,
    pub interleaved: Option<Generator>,
    pub seed: u64,
    /// Largest `|Tr ρ − 1|` seen.
    pub max_trace_error: f64,
}

/// RB settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbSettings {
    pub lengths: Vec<usize>,
    pub sequences: usize,
    pub interleaved: Option<Generator>,
    pub seed: u64,
}

impl Default for RbSettings {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            sequences: DEFAULT_SEQUENCES,
            interleaved: None,
            seed: 0,
        }
    }
}

fn apply_gate(rho: &mut U2, u: &U2, noise: &NoiseChannel, p1: f64, coherence: f64) {
    *rho = u * *rho * u.adjoint();
    noise.apply(rho, p1, coherence);
}

/// Simulate `sequences` random Clifford sequences per length, each followed
/// by its recovery Clifford, and record the ground-state population.
///
/// Sequence `j` of length index `i` draws from its own ChaCha stream derived
/// from `seed`, so results do not depend on the thread count.
pub fn run_rb(settings: &RbSettings, noise: &NoiseChannel) -> Result<DecayTable> {
    noise.validate()?;
    if settings.lengths.is_empty() || settings.lengths.contains(&0) {
        return Err(invalid("lengths", "need at least one length, all ≥ 1"));
    }
    if settings.sequences == 0 {
        return Err(invalid("sequences", "must be at least 1"));
    }
    let group = compile_cliffords();
    let p1 = noise.p1();
    let coherence = 1.0 - noise.p_phi();
    let interleaved = settings
        .interleaved
        .map(|g| group.find(&g.unitary()).expect("generators are Cliffords"));

    let run_one = |length_index: usize, sequence: usize| -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream((length_index * settings.sequences + sequence) as u64);
        let length = settings.lengths[length_index];
        let mut rho = U2::new(
            Complex64::from(1.0),
            Complex64::from(0.0),
            Complex64::from(0.0),
            Complex64::from(0.0),
        );
        let mut total = 0usize;
        let run = |c: usize, rho: &mut U2| {
            for g in group.word(c) {
                apply_gate(rho, &g.unitary(), noise, p1, coherence);
            }
        };
        for _ in 0..length {
            let c = rng.random_range(0..CLIFFORD_COUNT);
            run(c, &mut rho);
            total = group.compose(total, c);
            if let Some(i) = interleaved {
                let g = settings.interleaved.expect("set with index");
                apply_gate(&mut rho, &g.unitary(), noise, p1, coherence);
                total = group.compose(total, i);
            }
        }
        run(group.inverse(total), &mut rho);
        let trace = (rho[(0, 0)] + rho[(1, 1)]).re;
        (rho[(0, 0)].re, (trace - 1.0).abs())
    };

    let jobs: Vec<(usize, usize)> = (0..settings.lengths.len())
        .flat_map(|i| (0..settings.sequences).map(move |j| (i, j)))
        .collect();
    let results: Vec<(f64, f64)> = jobs.par_iter().map(|&(i, j)| run_one(i, j)).collect();

    let mut points = Vec::with_capacity(settings.lengths.len());
    let mut max_trace_error: f64 = 0.0;
    for (i, chunk) in results.chunks(settings.sequences).enumerate() {
        let n = chunk.len() as f64;
        let mean = chunk.iter().map(|r| r.0).sum::<f64>() / n;
        let var = if chunk.len() > 1 {
            chunk.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        max_trace_error = chunk.iter().map(|r| r.1).fold(max_trace_error, f64::max);
        points.push(RbPoint {
            length: settings.lengths[i],
            mean,
            stderr: (var / n).sqrt(),
            sequences: chunk.len(),
        });
    }
    Ok(DecayTable {
        points,
        interleaved: settings.interleaved,
        seed: settings.seed,
        max_trace_error,
    })
}

/// Fit of `A·p^m + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub p_stderr: f64,
    /// `1 − (1 − p)(d − 1)/d`.
    pub clifford_fidelity: f64,
    /// Clifford error divided by the mean generator count.
    pub gate_fidelity: f64,
    pub gate_fidelity_stderr: f64,
}

fn linear_ab(m: &[f64], y: &[f64], p: f64) -> (f64, f64, f64) {
    let x: Vec<f64> = m.iter().map(|&m| p.powf(m)).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let ssr = x.iter().zip(y).map(|(xv, yv)| (yv - a * xv - b).powi(2)).sum();
    (a, b, ssr)
}

/// Least-squares fit of the decay, with dimension `d`.
pub fn fit_rb(table: &DecayTable, d: usize) -> Result<RbFit> {
    if table.points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "RB fit needs at least 3 lengths, got {}",
            table.points.len()
        )));
    }
    let m: Vec<f64> = table.points.iter().map(|p| p.length as f64).collect();
    let y: Vec<f64> = table.points.iter().map(|p| p.mean).collect();
    let df = d as f64;

    let cost = |p: f64| linear_ab(&m, &y, p).2;
    // search on q = 1 − p, log-spaced, so tiny decays are resolved
    let lo = (1e-12f64).ln();
    let hi = (0.999f64).ln();
    let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| cost(1.0 - a.exp()).total_cmp(&cost(1.0 - b.exp())))
        .unwrap_or(lo);
    let step = (hi - lo) / 200.0;
    let (lq, _) = minimize_scalar(
        &|lq: f64| cost(1.0 - lq.exp()),
        (best - step).max(lo),
        (best + step).min(hi),
        1e-10,
    )?;
    let mut p = 1.0 - lq.exp();
    let (mut a, mut b, mut ssr) = linear_ab(&m, &y, p);
    let (a1, b1, ssr1) = linear_ab(&m, &y, 1.0 - 1e-15);
    if ssr1 <= ssr {
        p = 1.0;
        (a, b, ssr) = (a1, b1, ssr1);
    }
    if !(p > 0.0 && p <= 1.0) || !a.is_finite() {
        return Err(Error::FitFailure(format!("decay parameter p = {p} outside (0, 1]")));
    }

    let n = m.len();
    let jac = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => p.powf(m[i]),
        1 => 1.0,
        _ => a * m[i] * p.powf(m[i] - 1.0),
    });
    let p_stderr = if n > 3 {
        let s2 = ssr / (n - 3) as f64;
        (jac.transpose() * &jac)
            .try_inverse()
            .map(|c| (s2 * c[(2, 2)]).max(0.0).sqrt())
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };

    let r_clifford = (1.0 - p) * (df - 1.0) / df;
    let mean_len = compile_cliffords().mean_length();
    Ok(RbFit {
        a,
        b,
        p,
        p_stderr,
        clifford_fidelity: 1.0 - r_clifford,
        gate_fidelity: 1.0 - r_clifford / mean_len,
        gate_fidelity_stderr: p_stderr * (df - 1.0) / df / mean_len,
    })
}

/// Fidelity of the interleaved gate from reference and interleaved fits,
/// `1 − (1 − p_int/p_ref)(d − 1)/d`, with its standard error.
pub fn interleaved_fidelity(reference: &RbFit, interleaved: &RbFit, d: usize) -> (f64, f64) {
    let df = d as f64;
    let ratio = interleaved.p / reference.p;
    let f = 1.0 - (1.0 - ratio) * (df - 1.0) / df;
    let rel = ((interleaved.p_stderr / interleaved.p).powi(2) + (reference.p_stderr / reference.p).powi(2)).sqrt();
    (f, ratio * rel * (df - 1.0) / df)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_has_24_elements_and_mean_length() {
        let g = compile_cliffords();
        assert_eq!(g.len(), 24);
        assert!((g.mean_length() - 1.875).abs() < 1e-15);
        assert_eq!(g.word(0), &[Generator::I]);
    }

    #[test]
    fn hadamard_like_needs_two_gates() {
        let g = compile_cliffords();
        let u = Generator::Y90.unitary() * Generator::X.unitary();
        let c = g.find(&u).unwrap();
        assert_eq!(g.word(c).len(), 2);
    }

    #[test]
    fn words_reproduce_unitaries() {
        let g = compile_cliffords();
        for c in 0..24 {
            let u = g.word(c).iter().fold(U2::identity(), |acc, gen| gen.unitary() * acc);
            assert_eq!(g.find(&u), Some(c));
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let g = compile_cliffords();
        for c in 0..24 {
            assert_eq!(g.compose(c, g.inverse(c)), 0);
        }
    }

    #[test]
    fn kraus_operators_are_trace_preserving() {
        let n = NoiseChannel {
            t1: 31.0,
            t_phi: 40.0,
            t_g: 64.0,
        };
        let sum = n.kraus().iter().fold(U2::zeros(), |acc, k| acc + k.adjoint() * k);
        assert!((sum - U2::identity()).norm() < 1e-14);
    }

    #[test]
    fn direct_channel_matches_kraus() {
        let n = NoiseChannel {
            t1: 10.0,
            t_phi: 7.0,
            t_g: 500.0,
        };
        let c = Complex64::new;
        let rho = U2::new(c(0.3, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.7, 0.0));
        let via_kraus = n.kraus().iter().fold(U2::zeros(), |acc, k| acc + k * rho * k.adjoint());
        let mut direct = rho;
        n.apply(&mut direct, n.p1(), 1.0 - n.p_phi());
        assert!((via_kraus - direct).norm() < 1e-14);
    }

    #[test]
    fn coherence_limit_values() {
        assert_eq!(coherence_limit(0.0, 10.0, 10.0).unwrap(), 1.0);
        let f = coherence_limit(64.0, 168.0, 96.55).unwrap();
        assert!((f - 0.99965).abs() < 2e-5);
    }

    #[test]
    fn noise_free_rb_recovers_ground_state() {
        let s = RbSettings {
            lengths: vec![1, 5, 20],
            sequences: 5,
            ..Default::default()
        };
        let t = run_rb(&s, &NoiseChannel::ideal(64.0)).unwrap();
        for p in &t.points {
            assert!((p.mean - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_decay_fit() {
        let points = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512]
            .iter()
            .map(|&m| RbPoint {
                length: m,
                mean: 0.5 * 0.999f64.powi(m as i32) + 0.5,
                stderr: 0.0,
                sequences: 1,
            })
            .collect();
        let t = DecayTable {
            points,
            interleaved: None,
            seed: 0,
            max_trace_error: 0.0,
        };
        let f = fit_rb(&t, 2).unwrap();
        assert!((f.p - 0.999).abs() < 1e-6);
        assert!((f.a - 0.5).abs() < 1e-4);
    }

    #[test]
    fn parses_generator_names() {
        for g in Generator::ALL {
            assert_eq!(g.name().parse::<Generator>().unwrap(), g);
        }
        assert!("Z".parse::<Generator>().is_err());
    }
}
