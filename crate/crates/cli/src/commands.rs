use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use subharmonic::benchmarking::{
    coherence_limit, fit_rb, interleaved_fidelity, run_rb, DecayTable, Generator, NoiseChannel, RbFit, RbSettings,
};
use subharmonic::calibration::{
    fine_calibrate_with, rough_calibrate_with, CalibratedGate, ExperimentExecutor, FluxoniumBackend, RoundRecord,
    TwoLevelBackend,
};
use subharmonic::circuit::{flux_sweep, three_level_reduction, EigenSystem};
use subharmonic::effective::{fit_power_law, solve_resonance, solve_resonance_generic, PowerLaw};
use subharmonic::noise::{
    bose_einstein, flux_line_decay, infer_bath_coupling, infer_mutual_inductance, infer_resonator_temperature,
    pure_dephasing_time, CouplingGeometry,
};
use subharmonic::propagation::{chevron, find_subharmonic_resonance, spectroscopy_sweep};
use subharmonic::transfer::{fit_a0, predict_resonance, LossReport, ShiftPoint, TransferFit};

use crate::config::{Backend, RunConfig};
use crate::output::Sink;
use crate::CliError;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn eigensystem(config: &RunConfig) -> Result<EigenSystem, CliError> {
    Ok(EigenSystem::solve(
        &config.circuit,
        config.simulation.basis_dim,
        config.simulation.n_levels,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: usize,
    #[serde(rename = "energy_GHz")]
    pub energy: f64,
    #[serde(rename = "transition_GHz")]
    pub transition: f64,
}

pub fn spectrum(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let e = eigensystem(config)?;
    let rows: Vec<LevelRow> = (0..e.n_levels)
        .map(|m| LevelRow {
            level: m,
            energy: e.energies[m],
            transition: e.transition(0, m),
        })
        .collect();
    sink.csv("spectrum.csv", &rows)?;
    Ok(vec![
        format!("f_ge = {:.6} GHz", e.f_ge()),
        format!("f_ef = {:.6} GHz", e.f_ef()),
        format!("anharmonicity = {:.6} GHz", e.anharmonicity()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRow {
    pub phi_ext_rad: f64,
    #[serde(rename = "f_ge_GHz")]
    pub f_ge: f64,
    #[serde(rename = "f_ef_GHz")]
    pub f_ef: f64,
}

pub fn flux(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let g = &config.flux_sweep;
    let grid = linspace(g.start, g.stop, g.points);
    let points = flux_sweep(&config.circuit, &grid, 3)?;
    let rows: Vec<FluxRow> = points
        .iter()
        .map(|p| FluxRow {
            phi_ext_rad: p.phi_ext,
            f_ge: p.f_ge,
            f_ef: p.f_ef,
        })
        .collect();
    sink.csv("flux_sweep.csv", &rows)?;
    let lo = rows.iter().map(|r| r.f_ge).fold(f64::INFINITY, f64::min);
    Ok(vec![format!("{} flux points, minimum f_ge = {lo:.6} GHz", rows.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyRow {
    pub amplitude_phi0: f64,
    #[serde(rename = "f_d_GHz")]
    pub f_d: f64,
    pub p_e: f64,
}

pub fn spectroscopy(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let e = eigensystem(config)?;
    let s = &config.spectroscopy;
    let freqs = linspace(s.f_start, s.f_stop, s.points);
    let mut rows = Vec::new();
    for &a in &s.amplitudes {
        for p in spectroscopy_sweep(&e, &freqs, a, config.drive.t_pulse, &config.sweep_settings())? {
            rows.push(SpectroscopyRow {
                amplitude_phi0: a,
                f_d: p.f_d,
                p_e: p.p_e,
            });
        }
    }
    sink.csv("spectroscopy.csv", &rows)?;
    Ok(vec![format!(
        "{} amplitudes × {} frequencies, {} ns pulses",
        s.amplitudes.len(),
        freqs.len(),
        config.drive.t_pulse
    )])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChevronRow {
    #[serde(rename = "detuning_MHz")]
    pub detuning: f64,
    #[serde(rename = "f_d_GHz")]
    pub f_d: f64,
    pub t_ns: f64,
    pub p_e: f64,
}

pub fn chevron_map(config: &RunConfig, sink: &mut Sink, n: u32) -> Result<Vec<String>, CliError> {
    let e = eigensystem(config)?;
    let amp = config.drive.amplitude;
    let res = find_subharmonic_resonance(&e, n, amp, &config.resonance_options())?;
    let c = &config.chevron;
    let half = 0.5 * c.detuning_span;
    let detunings = linspace(-half, half, c.detuning_points);
    let times: Vec<f64> = (1..=c.t_points).map(|i| c.t_max * i as f64 / c.t_points as f64).collect();
    let map = chevron(&e, amp, res.omega_d, &detunings, &times, &config.sweep_settings())?;
    let mut rows = Vec::with_capacity(detunings.len() * times.len());
    for (i, &d) in map.detunings.iter().enumerate() {
        for (j, &t) in map.times.iter().enumerate() {
            rows.push(ChevronRow {
                detuning: d,
                f_d: map.center + d * 1e-3,
                t_ns: t,
                p_e: map.p_e[i][j],
            });
        }
    }
    sink.csv("chevron.csv", &rows)?;
    Ok(vec![format!(
        "n = {n}, amplitude {amp}: resonance {:.9} GHz, t_π = {:.2} ns, P_e = {:.4}",
        res.omega_d, res.t_pi, res.p_e
    )])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkRow {
    pub amplitude_phi0: f64,
    #[serde(rename = "omega_d_propagation_GHz")]
    pub omega_d_propagation: f64,
    #[serde(rename = "shift_propagation_GHz")]
    pub shift_propagation: f64,
    #[serde(rename = "omega_d_model_GHz")]
    pub omega_d_model: f64,
    #[serde(rename = "shift_model_GHz")]
    pub shift_model: f64,
}

pub fn stark(config: &RunConfig, sink: &mut Sink, n: u32) -> Result<Vec<String>, CliError> {
    let e = eigensystem(config)?;
    let r = three_level_reduction(&e)?;
    let nf = n as f64;
    let f_ge = e.f_ge();
    let opts = config.resonance_options();
    let s = &config.stark;
    let rows = s
        .amplitudes
        .par_iter()
        .map(|&a| {
            let prop = find_subharmonic_resonance(&e, n, a, &opts)?;
            let p = 2.0 * PI * a;
            let model = if n == 3 {
                solve_resonance(&r, 3, p)?
            } else {
                solve_resonance_generic(&e, n, p, s.order, s.levels)?
            };
            Ok(StarkRow {
                amplitude_phi0: a,
                omega_d_propagation: prop.omega_d,
                shift_propagation: nf * prop.omega_d - f_ge,
                omega_d_model: model,
                shift_model: nf * model - f_ge,
            })
        })
        .collect::<Result<Vec<_>, subharmonic::Error>>()?;
    sink.csv("stark.csv", &rows)?;
    Ok(rows
        .iter()
        .map(|x| {
            format!(
                "A = {}: shift {:.4} MHz (propagation), {:.4} MHz (model)",
                x.amplitude_phi0,
                1e3 * x.shift_propagation,
                1e3 * x.shift_model
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiRow {
    pub n: u32,
    pub amplitude_phi0: f64,
    #[serde(rename = "omega_d_GHz")]
    pub omega_d: f64,
    pub t_pi_ns: f64,
    #[serde(rename = "rabi_GHz")]
    pub rabi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub n: u32,
    pub fit: PowerLaw,
}

pub fn rabi_scaling(config: &RunConfig, sink: &mut Sink, orders: &[u32]) -> Result<Vec<String>, CliError> {
    let mut jobs = Vec::new();
    for &n in orders {
        let amps = config
            .rabi_scaling
            .amplitudes
            .get(&n)
            .ok_or_else(|| CliError::Config(format!("rabi_scaling.amplitudes: no amplitudes for n = {n}")))?;
        if amps.len() < 4 {
            return Err(CliError::Config(format!(
                "rabi_scaling.amplitudes.{n}: a power-law fit needs at least 4 amplitudes"
            )));
        }
        jobs.extend(amps.iter().map(|&a| (n, a)));
    }
    let e = eigensystem(config)?;
    let opts = config.resonance_options();
    let rows = jobs
        .par_iter()
        .map(|&(n, a)| {
            let r = find_subharmonic_resonance(&e, n, a, &opts)?;
            Ok(RabiRow {
                n,
                amplitude_phi0: a,
                omega_d: r.omega_d,
                t_pi_ns: r.t_pi,
                rabi: 1.0 / (4.0 * r.t_pi),
            })
        })
        .collect::<Result<Vec<_>, subharmonic::Error>>()?;
    let mut fits = Vec::new();
    for &n in orders {
        let (a, w): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.n == n).map(|r| (r.amplitude_phi0, r.rabi)).unzip();
        fits.push(ScalingFit {
            n,
            fit: fit_power_law(&a, &w)?,
        });
    }
    sink.csv("rabi_scaling.csv", &rows)?;
    sink.json("rabi_scaling.json", &fits)?;
    Ok(fits
        .iter()
        .map(|f| format!("n = {}: Ω ∝ A^{:.3} (± {:.3})", f.n, f.fit.exponent, f.fit.exponent_stderr))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub synthetic: bool,
    pub points: Vec<ShiftPoint>,
    pub fit: TransferFit,
    pub loss_at_1ghz: LossReport,
}

pub fn transfer_fit(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let e = eigensystem(config)?;
    let r = three_level_reduction(&e)?;
    let t = &config.transfer_fit;
    let synthetic = t.points.is_empty();
    let points = if synthetic {
        t.synthetic_amplitudes
            .iter()
            .map(|&a| {
                Ok(ShiftPoint {
                    amplitude: a,
                    omega_d: predict_resonance(&r, 3, a, &config.transfer)?,
                })
            })
            .collect::<Result<Vec<_>, subharmonic::Error>>()?
    } else {
        t.points.clone()
    };
    let fit = fit_a0(&points, &r)?;
    let report = TransferReport {
        synthetic,
        loss_at_1ghz: fit.model.loss(1.0),
        points,
        fit,
    };
    sink.json("transfer_fit.json", &report)?;
    Ok(vec![
        format!("a0 = {:.4e} ± {:.1e} Hz^-1/2", report.fit.model.a0, report.fit.a0_stderr),
        format!("amplitude ratio at 1 GHz = {:.4}", report.loss_at_1ghz.amplitude_ratio),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub scan: usize,
    pub step: String,
    pub parameter: String,
    pub x: f64,
    pub p_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub gate: CalibratedGate,
    pub rough: CalibratedGate,
    pub rounds: Vec<RoundRecord>,
}

pub fn calibrate(config: &RunConfig, sink: &mut Sink, n: u32) -> Result<Vec<String>, CliError> {
    let cal = &config.calibration;
    let opts = cal.options(config.seed);
    let exec: Box<dyn ExperimentExecutor> = match cal.backend {
        Backend::TwoLevel => Box::new(TwoLevelBackend::new(n, cal.f_eg, cal.stark_coefficient, cal.rabi_coefficient)?),
        Backend::Fluxonium => Box::new(FluxoniumBackend::new(&eigensystem(config)?, cal.levels)?),
    };
    let rough = rough_calibrate_with(exec.as_ref(), n, cal.amplitude, &opts)?;
    let fine = fine_calibrate_with(exec.as_ref(), &rough.gate, &opts)?;
    let mut rows = Vec::new();
    for (k, s) in rough.scans.iter().chain(&fine.scans).enumerate() {
        for (&x, &p) in s.x.iter().zip(&s.p_e) {
            rows.push(ScanRow {
                scan: k,
                step: s.step.clone(),
                parameter: s.parameter.clone(),
                x,
                p_e: p,
            });
        }
    }
    let g = fine.gate.clone();
    sink.json(
        "gate.json",
        &CalibrationReport {
            gate: fine.gate,
            rough: rough.gate,
            rounds: fine.rounds.clone(),
        },
    )?;
    sink.csv("scans.csv", &rows)?;
    Ok(vec![
        format!("ω_d = {:.9} GHz, t_π = {:.3} ns, t_π/2 = {:.3} ns", g.omega_d, g.t_pulse, g.t_pulse_pi_2),
        format!("virtual Z: π {:.5} rad, π/2 {:.5} rad", g.virtual_z_pi, g.virtual_z_pi_2),
        format!("fine calibration converged in {} round(s)", fine.rounds.len()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub sequence: String,
    pub length: usize,
    pub mean_p_g: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterleavedReport {
    pub gate: Generator,
    pub fit: RbFit,
    pub gate_fidelity: f64,
    pub gate_fidelity_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbReport {
    pub channel: NoiseChannel,
    pub coherence_limit: f64,
    pub reference: RbFit,
    pub interleaved: Option<InterleavedReport>,
}

fn decay_rows(label: &str, t: &DecayTable) -> Vec<DecayRow> {
    t.points
        .iter()
        .map(|p| DecayRow {
            sequence: label.to_string(),
            length: p.length,
            mean_p_g: p.mean,
            stderr: p.stderr,
        })
        .collect()
}

pub fn rb(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let c = &config.rb;
    let channel = NoiseChannel {
        t1: c.t1,
        t_phi: pure_dephasing_time(c.t1, c.t2)?,
        t_g: c.t_g,
    };
    let settings = RbSettings {
        lengths: c.lengths.clone(),
        sequences: c.sequences,
        interleaved: None,
        seed: config.seed,
    };
    let table = run_rb(&settings, &channel)?;
    let reference = fit_rb(&table, 2)?;
    let mut rows = decay_rows("reference", &table);
    let interleaved = match c.interleaved {
        Some(gate) => {
            let t = run_rb(
                &RbSettings {
                    interleaved: Some(gate),
                    ..settings.clone()
                },
                &channel,
            )?;
            let fit = fit_rb(&t, 2)?;
            let (f, se) = interleaved_fidelity(&reference, &fit, 2);
            rows.extend(decay_rows("interleaved", &t));
            Some(InterleavedReport {
                gate,
                fit,
                gate_fidelity: f,
                gate_fidelity_stderr: se,
            })
        }
        None => None,
    };
    let report = RbReport {
        coherence_limit: coherence_limit(channel.t_g, channel.t1, channel.t_phi)?,
        channel,
        reference,
        interleaved,
    };
    sink.csv("rb_decay.csv", &rows)?;
    sink.json("rb_fidelities.json", &report)?;
    let mut lines = vec![
        format!(
            "average gate fidelity {:.5}% ± {:.5}%",
            100.0 * report.reference.gate_fidelity,
            100.0 * report.reference.gate_fidelity_stderr
        ),
        format!("coherence limit {:.5}%", 100.0 * report.coherence_limit),
    ];
    if let Some(i) = &report.interleaved {
        lines.push(format!(
            "interleaved {}: {:.5}% ± {:.5}%",
            i.gate,
            100.0 * i.gate_fidelity,
            100.0 * i.gate_fidelity_stderr
        ));
    }
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseBudget {
    #[serde(rename = "f_ge_GHz")]
    pub f_ge: f64,
    #[serde(rename = "resonator_temperature_mK")]
    pub resonator_temperature: f64,
    pub resonator_n_th: f64,
    pub t_phi_filtered_us: f64,
    pub t_phi_unfiltered_us: f64,
    pub filter_power_transmission: f64,
    pub bath_n_th: f64,
    pub bath_coupling_time_ms: f64,
    #[serde(rename = "inferred_mutual_inductance_pH")]
    pub inferred_mutual_inductance: f64,
    pub design_coupling_time_ms: f64,
    pub coherence_limit_filtered: f64,
    pub coherence_limit_unfiltered: f64,
}

pub fn noise_budget(config: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, CliError> {
    let b = &config.noise_budget;
    let e = eigensystem(config)?;
    let f = e.f_ge();
    let res = infer_resonator_temperature(b.t1_filtered, b.t2_filtered, b.kappa, b.two_chi, b.f_res)?;
    let a = 10f64.powf(b.filter_db / 10.0);
    let g0 = infer_bath_coupling(b.t1_filtered, b.t1_unfiltered, a, b.bath_temperature, f)?;
    let geom = CouplingGeometry::from_circuit(&e, b.mutual_inductance);
    let m = infer_mutual_inductance(g0, &geom, &config.noise, f)?;
    let design = flux_line_decay(&geom, &config.noise, f)?;
    let tf = pure_dephasing_time(b.t1_filtered, b.t2_filtered)?;
    let tu = pure_dephasing_time(b.t1_unfiltered, b.t2_unfiltered)?;
    let report = NoiseBudget {
        f_ge: f,
        resonator_temperature: res.temperature * 1e3,
        resonator_n_th: res.n_th,
        t_phi_filtered_us: tf,
        t_phi_unfiltered_us: tu,
        filter_power_transmission: a,
        bath_n_th: bose_einstein(f, b.bath_temperature)?,
        bath_coupling_time_ms: g0.time_ms(),
        inferred_mutual_inductance: m,
        design_coupling_time_ms: design.time_ms(),
        coherence_limit_filtered: coherence_limit(b.t_g, b.t1_filtered, tf)?,
        coherence_limit_unfiltered: coherence_limit(b.t_g, b.t1_unfiltered, tu)?,
    };
    sink.json("noise_budget.json", &report)?;
    Ok(vec![
        format!("resonator temperature   {:>10.2} mK", report.resonator_temperature),
        format!("bath coupling 1/γ₀      {:>10.3} ms", report.bath_coupling_time_ms),
        format!("mutual inductance       {:>10.3} pH", report.inferred_mutual_inductance),
        format!("design 1/γ₀ at M        {:>10.3} ms", report.design_coupling_time_ms),
        format!("coherence limit (LP)    {:>10.4} %", 100.0 * report.coherence_limit_filtered),
        format!("coherence limit (UF)    {:>10.4} %", 100.0 * report.coherence_limit_unfiltered),
    ])
}
