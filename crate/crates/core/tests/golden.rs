//! Reference-device spectrum against values from an independent
//! finite-difference (sinc-DVR) diagonalization on an 801-point phase grid.

use std::f64::consts::PI;

use subharmonic::circuit::{flux_sweep, three_level_reduction, CircuitParams, EigenSystem};

const E0: f64 = 1.99543686749;
const F01: f64 = 1.33237726071;
const F12: f64 = 2.14548683472;
const ALPHA: f64 = 0.81310957401;
const BETA_1: f64 = 1.50514984564;
const BETA_2: f64 = -0.31629791064;
const PHI_03: f64 = 0.119697020287;
const PHI_23: f64 = 1.84162237341;

fn reference() -> EigenSystem {
    EigenSystem::with_defaults(&CircuitParams::reference_device()).unwrap()
}

#[test]
fn energies_match_grid_solver() {
    let e = reference();
    assert!((e.energies[0] - E0).abs() < 1e-8, "{}", e.energies[0]);
    assert!((e.f_ge() - F01).abs() < 1e-8, "{}", e.f_ge());
    assert!((e.f_ef() - F12).abs() < 1e-8, "{}", e.f_ef());
    assert!((e.anharmonicity() - ALPHA).abs() < 1e-8);
}

#[test]
fn ladder_parameters_match_grid_solver() {
    let r = three_level_reduction(&reference()).unwrap();
    assert!((r.omega_eg - F01).abs() < 1e-8);
    assert!((r.alpha - ALPHA).abs() < 1e-8);
    assert!((r.beta_1 - BETA_1).abs() < 1e-7, "{}", r.beta_1);
    assert!((r.beta_2 - BETA_2).abs() < 1e-7, "{}", r.beta_2);
}

#[test]
fn higher_phase_elements_match_grid_solver() {
    let e = reference();
    assert!((e.phase_elements[(0, 3)].abs() - PHI_03).abs() < 1e-7);
    assert!((e.phase_elements[(2, 3)].abs() - PHI_23).abs() < 1e-7);
}

#[test]
fn flux_sweep_matches_golden_table() {
    let text = include_str!("data/flux_sweep_golden.csv");
    let rows: Vec<[f64; 3]> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.trim().parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    assert!(rows.len() > 50);
    let grid: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let sweep = flux_sweep(&CircuitParams::reference_device(), &grid, 3).unwrap();
    for (row, p) in rows.iter().zip(&sweep) {
        assert!((p.f_ge - row[1]).abs() < 1e-8, "φ = {}: {} vs {}", row[0], p.f_ge, row[1]);
        assert!((p.f_ef - row[2]).abs() < 1e-8, "φ = {}: {} vs {}", row[0], p.f_ef, row[2]);
    }
}

#[test]
fn spectrum_is_flux_periodic() {
    let params = CircuitParams::reference_device();
    for phi in [0.3, 1.1, PI, 4.0] {
        let a = EigenSystem::solve(&params.with_phi_ext(phi), 80, 6).unwrap();
        let b = EigenSystem::solve(&params.with_phi_ext(phi + 2.0 * PI), 80, 6).unwrap();
        for m in 0..6 {
            assert!((a.energies[m] - b.energies[m]).abs() < 1e-9);
        }
    }
}

#[test]
fn retained_levels_do_not_move_the_qubit() {
    let params = CircuitParams::reference_device();
    let a = EigenSystem::solve(&params, 80, 20).unwrap();
    let b = EigenSystem::solve(&params, 120, 30).unwrap();
    for m in 0..6 {
        assert!((a.energies[m] - b.energies[m]).abs() < 1e-4);
    }
}
