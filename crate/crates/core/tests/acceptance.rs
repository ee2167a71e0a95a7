//! Acceptance criteria for the reference device.
//!
//! Prints one line per criterion. Checks listed in `OPEN` are reported but do
//! not fail the run; any other failing check does.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use subharmonic::benchmarking::{
    coherence_limit, compile_cliffords, fit_rb, run_rb, NoiseChannel, RbSettings, CLIFFORD_COUNT,
};
use subharmonic::calibration::{
    fine_calibrate_with, rough_calibrate_with, CalibratedGate, CalibrationOptions, Shots, TwoLevelBackend,
};
use subharmonic::circuit::{build_hamiltonian, three_level_reduction, CircuitParams, EigenSystem};
use subharmonic::effective::{fit_power_law, rabi_rate_n3, solve_resonance, solve_resonance_generic};
use subharmonic::noise::{
    flux_line_decay, infer_bath_coupling, infer_mutual_inductance, infer_resonator_temperature,
    pure_dephasing_time, CouplingGeometry, NoiseEnvironment,
};
use subharmonic::propagation::{find_subharmonic_resonance, DrivenQubit, Resonance, ResonanceOptions};
use subharmonic::pulse::{DrivePulse, Envelope};
use subharmonic::transfer::{fit_a0, predict_resonance, unattenuate, ShiftPoint, TransferModel};

const OPEN: &[&str] = &["2.shift", "3.exponent"];
const AMPLITUDES: [f64; 4] = [0.01, 0.02, 0.03, 0.04];
const A0: f64 = 9.49e-5;

struct Check {
    key: String,
    pass: bool,
    detail: String,
}

struct Criterion {
    number: usize,
    title: &'static str,
    checks: Vec<Check>,
    elapsed: Duration,
}

impl Criterion {
    fn new(number: usize, title: &'static str) -> Self {
        Self {
            number,
            title,
            checks: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            key: format!("{}.{name}", self.number),
            pass,
            detail,
        });
    }

    fn within(&mut self, limit: Duration) {
        let e = self.elapsed;
        self.check("runtime", e < limit, format!("{:.1} s < {:.0} s", e.as_secs_f64(), limit.as_secs_f64()));
    }

    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn timed(number: usize, title: &'static str, body: impl FnOnce(&mut Criterion)) -> Criterion {
    let mut c = Criterion::new(number, title);
    let t = Instant::now();
    body(&mut c);
    c.elapsed = t.elapsed();
    c
}

fn reference() -> EigenSystem {
    EigenSystem::with_defaults(&CircuitParams::reference_device()).unwrap()
}

fn spectrum() -> Criterion {
    timed(1, "spectrum", |c| {
        let e = EigenSystem::with_defaults(&CircuitParams::new(1.69, 0.68, 1.07, PI).unwrap()).unwrap();
        let f = e.f_ge();
        c.check("f_ge", (f - 1.32).abs() <= 0.02, format!("f_ge = {f:.5} GHz"));
    })
}

fn resonances(eigs: &EigenSystem) -> Vec<Resonance> {
    AMPLITUDES
        .iter()
        .map(|&a| find_subharmonic_resonance(eigs, 3, a, &ResonanceOptions::default()).unwrap())
        .collect()
}

fn stark(eigs: &EigenSystem, res: &[Resonance]) -> Criterion {
    timed(2, "three-photon Stark shift", |c| {
        let r = three_level_reduction(eigs).unwrap();
        let prop: Vec<f64> = res.iter().map(|x| r.omega_eg - 3.0 * x.omega_d).collect();
        let eff: Vec<f64> = AMPLITUDES
            .iter()
            .map(|&a| r.omega_eg - 3.0 * solve_resonance(&r, 3, 2.0 * PI * a).unwrap())
            .collect();
        let errors: Vec<f64> = eff.iter().zip(&prop).map(|(e, p)| (e - p).abs() / p.abs()).collect();
        let worst = errors.iter().cloned().fold(0.0, f64::max);
        let listed: Vec<String> = errors.iter().map(|e| format!("{:.1}%", 100.0 * e)).collect();
        c.check("shift", worst < 0.05, format!("relative error {} (< 5%)", listed.join(" ")));
        let rp = prop[1] / prop[0];
        let re = eff[1] / eff[0];
        c.check("ratio", (3.6..=4.0).contains(&rp), format!("propagated δ(2Φ)/δ(Φ) = {rp:.3}"));
        c.check("ratio.model", (3.6..=4.0).contains(&re), format!("model δ(2Φ)/δ(Φ) = {re:.3}"));
    })
}

fn rabi(eigs: &EigenSystem, res: &[Resonance]) -> Criterion {
    timed(3, "three-photon Rabi rate", |c| {
        let r = three_level_reduction(eigs).unwrap();
        let env = Envelope::default();
        let mut worst: f64 = 0.0;
        let mut measured = Vec::new();
        for (&a, x) in AMPLITUDES.iter().zip(res) {
            let p = 2.0 * PI * a;
            let w = solve_resonance(&r, 3, p).unwrap();
            let model = rabi_rate_n3(&r, w, r.omega_eg - 3.0 * w, p, &env, x.t_pi).unwrap().abs();
            let chevron = 1.0 / (4.0 * x.t_pi);
            worst = worst.max((model - chevron).abs() / chevron);
            measured.push(chevron);
        }
        c.check("rate", worst < 0.10, format!("worst relative error {:.1}% (< 10%)", 100.0 * worst));
        let fit = fit_power_law(&AMPLITUDES, &measured).unwrap();
        c.check(
            "exponent",
            (2.8..=3.0).contains(&fit.exponent),
            format!("exponent {:.3} ± {:.3} in [2.8, 3.0]", fit.exponent, fit.exponent_stderr),
        );
        let model = TransferModel::new(A0).unwrap();
        let source: Vec<f64> = AMPLITUDES
            .iter()
            .zip(res)
            .map(|(&a, x)| unattenuate(a, x.omega_d, &model))
            .collect();
        let biased = fit_power_law(&source, &measured).unwrap();
        c.check(
            "source.bias",
            biased.exponent <= fit.exponent,
            format!("source-referred exponent {:.3}", biased.exponent),
        );
    })
}

fn higher_orders(eigs: &EigenSystem) -> Criterion {
    timed(4, "five- and seven-photon drives", |c| {
        let f_ge = eigs.f_ge();
        for (n, a) in [(5u32, 0.04), (7, 0.04)] {
            let x = find_subharmonic_resonance(eigs, n, a, &ResonanceOptions::default()).unwrap();
            c.check(
                &format!("contrast.{n}"),
                x.p_e > 0.99,
                format!("n = {n}: P_e = {:.4} at t_π = {:.0} ns", x.p_e, x.t_pi),
            );
            if n == 5 {
                let prop = f_ge - 5.0 * x.omega_d;
                let w = solve_resonance_generic(eigs, 5, 2.0 * PI * a, 3, 10).unwrap();
                let model = f_ge - 5.0 * w;
                let err = (model - prop).abs() / prop.abs();
                c.check("stark.5", err < 0.15, format!("n = 5 shift error {:.1}% (< 15%)", 100.0 * err));
            }
        }
    })
}

fn noise_budget(eigs: &EigenSystem) -> Criterion {
    timed(5, "noise budget", |c| {
        let t = infer_resonator_temperature(168.0, 75.0, 1.2, 5.3, 6.9).unwrap().temperature * 1e3;
        c.check("resonator", (t - 51.0).abs() <= 1.0, format!("T_res = {t:.1} mK"));
        let g0 = infer_bath_coupling(168.0, 31.0, 10f64.powf(-3.55), 3.0, 1.32).unwrap();
        let inv = g0.time_ms();
        c.check("bath", (inv - 3.6).abs() <= 0.5, format!("1/γ₀ = {inv:.2} ms"));
        let env = NoiseEnvironment::matched_line(0.0);
        let geom = CouplingGeometry::from_circuit(eigs, 3.2);
        let m = infer_mutual_inductance(g0, &geom, &env, eigs.f_ge()).unwrap();
        c.check("mutual", (m - 3.1).abs() <= 0.2, format!("M = {m:.2} pH"));
        let fwd = flux_line_decay(&geom, &env, eigs.f_ge()).unwrap().time_ms();
        c.check("forward", (fwd - 3.4).abs() <= 0.2, format!("design 1/γ₀ = {fwd:.2} ms"));
    })
}

fn channel(t1: f64, t2: f64) -> NoiseChannel {
    NoiseChannel {
        t1,
        t_phi: pure_dephasing_time(t1, t2).unwrap(),
        t_g: 64.0,
    }
}

fn coherence() -> Criterion {
    timed(6, "coherence limit", |c| {
        for (t1, t2, target, tol) in [(168.0, 75.0, 99.965, 0.002), (31.0, 22.0, 99.87, 0.02)] {
            let ch = channel(t1, t2);
            let f = 100.0 * coherence_limit(ch.t_g, ch.t1, ch.t_phi).unwrap();
            c.check(
                &format!("T1={t1}"),
                (f - target).abs() <= tol,
                format!("T₁ = {t1} µs: {f:.4}%"),
            );
        }
    })
}

fn benchmarking() -> Criterion {
    timed(7, "randomized benchmarking", |c| {
        let ch = channel(168.0, 75.0);
        let table = run_rb(&RbSettings::default(), &ch).unwrap();
        let fit = fit_rb(&table, 2).unwrap();
        let limit = coherence_limit(ch.t_g, ch.t1, ch.t_phi).unwrap();
        let diff = fit.gate_fidelity - limit;
        c.check(
            "fidelity",
            diff.abs() < 5e-5,
            format!(
                "F = {:.5}% vs limit {:.5}% (Δ = {:.1e}, seed 0)",
                100.0 * fit.gate_fidelity,
                100.0 * limit,
                diff
            ),
        );
        let ideal = run_rb(&RbSettings::default(), &NoiseChannel::ideal(64.0)).unwrap();
        let worst = ideal.points.iter().map(|p| (p.mean - 1.0).abs()).fold(0.0, f64::max);
        c.check("ideal", worst < 1e-10, format!("noise-free max |P_g − 1| = {worst:.1e}"));
    })
}

fn calibration() -> Criterion {
    timed(8, "calibration robustness", |c| {
        let b = TwoLevelBackend::reference();
        let n = b.n as f64;
        let opts = CalibrationOptions {
            shots: Shots::Exact,
            ..CalibrationOptions::default()
        };
        let rough = rough_calibrate_with(&b, 3, 0.0415, &opts).unwrap();
        let p = fine_calibrate_with(&b, &rough.gate, &opts).unwrap().gate;
        let fixed = fine_calibrate_with(&b, &p, &opts).unwrap();
        c.check(
            "fixed",
            fixed.rounds.len() == 1 && fixed.gate == p,
            format!("perfect gate accepted after {} round(s)", fixed.rounds.len()),
        );
        let faults: Vec<(&str, CalibratedGate)> = vec![
            ("+1%", p.clone().with_durations(p.t_pulse * 1.01, p.t_pulse_pi_2 * 1.01)),
            ("-1%", p.clone().with_durations(p.t_pulse * 0.99, p.t_pulse_pi_2 * 0.99)),
            ("+20kHz", CalibratedGate { omega_d: p.omega_d + 20e-6 / n, ..p.clone() }),
            ("-20kHz", CalibratedGate { omega_d: p.omega_d - 20e-6 / n, ..p.clone() }),
            (
                "+0.05rad",
                CalibratedGate {
                    virtual_z_pi: p.virtual_z_pi + 0.05 / n,
                    virtual_z_pi_2: p.virtual_z_pi_2 + 0.05 / n,
                    ..p.clone()
                },
            ),
            (
                "-0.05rad",
                CalibratedGate {
                    virtual_z_pi: p.virtual_z_pi - 0.05 / n,
                    virtual_z_pi_2: p.virtual_z_pi_2 - 0.05 / n,
                    ..p.clone()
                },
            ),
        ];
        for (name, g) in faults {
            let run = fine_calibrate_with(&b, &g, &opts).unwrap();
            let q = run.gate;
            let dt = (q.t_pulse / p.t_pulse - 1.0).abs().max((q.t_pulse_pi_2 / p.t_pulse_pi_2 - 1.0).abs());
            let df = (n * (q.omega_d - p.omega_d)).abs() * 1e6;
            let dz = (n * (q.virtual_z_pi - p.virtual_z_pi))
                .abs()
                .max((n * (q.virtual_z_pi_2 - p.virtual_z_pi_2)).abs());
            let rounds = run.rounds.len();
            c.check(
                name,
                dt < 2e-4 && df < 1.0 && dz < 5e-3 && rounds <= 3,
                format!(
                    "{name}: {rounds} rounds, |Δt/t| = {dt:.1e}, |Δf| = {df:.1e} kHz, |Δφ| = {dz:.1e} rad"
                ),
            );
        }
    })
}

fn transfer(eigs: &EigenSystem) -> Criterion {
    timed(9, "transfer fit", |c| {
        let r = three_level_reduction(eigs).unwrap();
        let model = TransferModel::new(A0).unwrap();
        let data: Vec<ShiftPoint> = [0.02, 0.04, 0.06, 0.08, 0.10, 0.12]
            .iter()
            .map(|&a| ShiftPoint {
                amplitude: a,
                omega_d: predict_resonance(&r, 3, a, &model).unwrap(),
            })
            .collect();
        let fit = fit_a0(&data, &r).unwrap();
        let err = (fit.model.a0 / A0 - 1.0).abs();
        c.check("a0", err < 0.01, format!("a₀ = {:.4e} ({:.1e} relative)", fit.model.a0, err));
        let ratio = model.amplitude_ratio(1.0);
        c.check("ratio", (ratio - 0.250).abs() <= 0.001, format!("amplitude ratio at 1 GHz = {ratio:.4}"));
    })
}

fn unitary_defect(u: &DMatrix<Complex64>) -> f64 {
    (u.adjoint() * u - DMatrix::identity(u.nrows(), u.ncols())).norm()
}

fn properties(eigs: &EigenSystem) -> Criterion {
    timed(10, "property checks", |c| {
        let q = DrivenQubit::with_levels(eigs, 10).unwrap();
        let mut worst: f64 = 0.0;
        for (a, f, t) in [(0.01, 0.44, 40.0), (0.04, 0.45, 120.0), (0.02, 0.3, 77.7)] {
            worst = worst.max(unitary_defect(&q.unitary(&DrivePulse::new(a, f, t, Envelope::default()), 0.1).unwrap()));
        }
        c.check("unitarity", worst < 1e-9, format!("‖U†U − 1‖ ≤ {worst:.1e}"));

        let h = build_hamiltonian(&CircuitParams::reference_device(), 80).unwrap();
        let asym = (&h.matrix - h.matrix.transpose()).amax();
        c.check("hermiticity", asym < 1e-12, format!("max |H − Hᵀ| = {asym:.1e}"));

        let mut parity: f64 = 0.0;
        for m in 0..eigs.n_levels {
            for k in 0..eigs.n_levels {
                if (m + k) % 2 == 0 {
                    parity = parity.max(eigs.phase_elements[(m, k)].abs());
                }
            }
        }
        c.check("parity", parity < 1e-8, format!("max same-parity |⟨m|φ|k⟩| = {parity:.1e}"));

        let full = DrivenQubit::new(eigs);
        let pulse = DrivePulse::new(0.03, eigs.f_ge() / 3.0, 150.0, Envelope::default());
        let dp = (full.excited_population(&pulse, 0.1).unwrap() - full.excited_population(&pulse, 0.05).unwrap()).abs();
        c.check("dt", dp < 1e-3, format!("halving dt moves P_e by {dp:.1e}"));

        let big = EigenSystem::solve(&eigs.params, 120, 30).unwrap();
        let de = (0..6).map(|m| (big.energies[m] - eigs.energies[m]).abs()).fold(0.0, f64::max);
        c.check("basis", de < 1e-4, format!("80/20 vs 120/30 levels: {de:.1e} GHz"));

        let g = compile_cliffords();
        let mut closed = g.len() == CLIFFORD_COUNT;
        for a in 0..g.len() {
            for b in 0..g.len() {
                closed &= g.find(&(g.unitary(b) * g.unitary(a))) == Some(g.compose(a, b));
            }
        }
        c.check("clifford", closed, format!("{} elements, mean length {:.3}", g.len(), g.mean_length()));

        let mut tp: f64 = 0.0;
        for (t1, t_phi, t_g) in [(168.0, 96.55, 64.0), (31.0, 40.0, 64.0), (1.0, 2.0, 500.0)] {
            let sum = NoiseChannel { t1, t_phi, t_g }
                .kraus()
                .iter()
                .fold(Matrix2::<Complex64>::zeros(), |acc, k| acc + k.adjoint() * k);
            tp = tp.max((sum - Matrix2::identity()).norm());
        }
        c.check("cptp", tp < 1e-12, format!("‖ΣK†K − 1‖ ≤ {tp:.1e}"));
    })
}

fn main() -> ExitCode {
    let eigs = reference();
    let mut results = Vec::new();

    let mut c1 = spectrum();
    c1.within(Duration::from_secs(1));
    results.push(c1);

    let t = Instant::now();
    let res = resonances(&eigs);
    let search = t.elapsed();
    let mut c2 = stark(&eigs, &res);
    c2.elapsed += search;
    c2.within(Duration::from_secs(600));
    results.push(c2);
    results.push(rabi(&eigs, &res));

    let mut c4 = higher_orders(&eigs);
    c4.within(Duration::from_secs(1800));
    results.push(c4);

    let mut c5 = noise_budget(&eigs);
    c5.within(Duration::from_secs(1));
    results.push(c5);

    let mut c6 = coherence();
    c6.within(Duration::from_secs(1));
    results.push(c6);

    let mut c7 = benchmarking();
    c7.within(Duration::from_secs(120));
    results.push(c7);

    let mut c8 = calibration();
    c8.within(Duration::from_secs(600));
    results.push(c8);

    results.push(transfer(&eigs));
    results.push(properties(&eigs));

    let mut unexpected = Vec::new();
    for c in &results {
        let status = if c.pass() { "PASS" } else { "FAIL" };
        let shown: Vec<String> = c
            .checks
            .iter()
            .map(|k| if k.pass { k.detail.clone() } else { format!("[fail] {}", k.detail) })
            .collect();
        println!(
            "criterion {:>2} {status} {} ({:.1} s): {}",
            c.number,
            c.title,
            c.elapsed.as_secs_f64(),
            shown.join("; ")
        );
        for k in c.checks.iter().filter(|k| !k.pass) {
            if !OPEN.contains(&k.key.as_str()) {
                unexpected.push(k.key.clone());
            }
        }
    }
    let passed = results.iter().filter(|c| c.pass()).count();
    println!("{passed}/{} criteria pass", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
