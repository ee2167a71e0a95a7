//! Fluxonium circuit model: Hamiltonian construction, diagonalization and the
//! three-level reduction used by the effective drive model.
//!
//! The Hamiltonian `H/h = 4E_C n̂² − E_J cos φ̂ + E_L/2 (φ̂ − φ_ext)²` is
//! written in the eigenbasis of the `E_L`/`E_C` oscillator centred on the
//! bias point, i.e. in terms of `θ̂ = φ̂ − φ_ext`. The external flux then
//! enters only through `cos φ_ext` and `sin φ_ext`, so spectra are exactly
//! `2π` periodic.
//!
//! ```
//! use subharmonic::circuit::{CircuitParams, EigenSystem};
//!
//! let eigs = EigenSystem::solve(&CircuitParams::reference_device(), 80, 20).unwrap();
//! assert!((eigs.f_ge() - 1.3324).abs() < 1e-4);
//! ```

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, invalid, Error, Result};

/// Default oscillator basis size.
pub const DEFAULT_BASIS_DIM: usize = 80;
/// Default number of retained eigenstates.
pub const DEFAULT_LEVELS: usize = 20;
/// Smallest accepted oscillator basis.
pub const MIN_BASIS_DIM: usize = 20;

/// Circuit energies in GHz and the reduced external flux in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    pub e_j: f64,
    pub e_c: f64,
    pub e_l: f64,
    pub phi_ext: f64,
}

impl CircuitParams {
    pub fn new(e_j: f64, e_c: f64, e_l: f64, phi_ext: f64) -> Result<Self> {
        let p = Self {
            e_j,
            e_c,
            e_l,
            phi_ext,
        };
        p.validate()?;
        Ok(p)
    }

    /// The device of the reference experiment, biased at the sweet spot.
    pub fn reference_device() -> Self {
        Self {
            e_j: 1.69,
            e_c: 0.68,
            e_l: 1.07,
            phi_ext: PI,
        }
    }

    /// `E_J = 0` is accepted and gives the harmonic oscillator.
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("e_j", self.e_j)?;
        ensure_positive("e_c", self.e_c)?;
        ensure_positive("e_l", self.e_l)?;
        if !self.phi_ext.is_finite() {
            return Err(invalid("phi_ext", "must be finite"));
        }
        Ok(())
    }

    pub fn with_phi_ext(self, phi_ext: f64) -> Self {
        Self { phi_ext, ..self }
    }

    /// Plasma frequency `√(8 E_C E_L)` of the linear part, GHz.
    pub fn plasma_frequency(&self) -> f64 {
        (8.0 * self.e_c * self.e_l).sqrt()
    }

    /// Zero-point phase fluctuation `(2E_C/E_L)^{1/4}`.
    pub fn phase_zpf(&self) -> f64 {
        (2.0 * self.e_c / self.e_l).powf(0.25)
    }

    /// Zero-point charge fluctuation `(E_L/32E_C)^{1/4}`.
    pub fn charge_zpf(&self) -> f64 {
        (self.e_l / (32.0 * self.e_c)).powf(0.25)
    }
}

/// Hamiltonian matrix in the oscillator basis together with the phase
/// operator `φ̂ − φ_ext` in the same basis.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub params: CircuitParams,
    pub basis_dim: usize,
    pub matrix: DMatrix<f64>,
    pub phase: DMatrix<f64>,
}

/// Build `H/h` (GHz) in an oscillator basis of size `basis_dim`.
pub fn build_hamiltonian(params: &CircuitParams, basis_dim: usize) -> Result<Hamiltonian> {
    params.validate()?;
    if basis_dim < MIN_BASIS_DIM {
        return Err(invalid(
            "basis_dim",
            format!("must be at least {MIN_BASIS_DIM}, got {basis_dim}"),
        ));
    }
    let zpf = params.phase_zpf();
    let phase = DMatrix::from_fn(basis_dim, basis_dim, |i, j| {
        if i + 1 == j {
            zpf * (j as f64).sqrt()
        } else if j + 1 == i {
            zpf * (i as f64).sqrt()
        } else {
            0.0
        }
    });

    let wp = params.plasma_frequency();
    let mut matrix = DMatrix::from_diagonal(&DVector::from_fn(basis_dim, |k, _| {
        wp * (k as f64 + 0.5)
    }));
    if params.e_j != 0.0 {
        // cos(θ̂ + φ_ext) = cos θ̂ cos φ_ext − sin θ̂ sin φ_ext
        let eig = SymmetricEigen::new(phase.clone());
        let (c, s) = (params.phi_ext.cos(), params.phi_ext.sin());
        let diag = eig.eigenvalues.map(|x| c * x.cos() - s * x.sin());
        let v = &eig.eigenvectors;
        let cos_total = v * DMatrix::from_diagonal(&diag) * v.transpose();
        matrix -= cos_total * params.e_j;
    }
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(Hamiltonian {
        params: *params,
        basis_dim,
        matrix,
        phase,
    })
}

/// Retained low-energy eigenbasis.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub params: CircuitParams,
    pub basis_dim: usize,
    pub n_levels: usize,
    /// Absolute eigenenergies, GHz, ascending.
    pub energies: Vec<f64>,
    /// `⟨m|φ̂ − φ_ext|m′⟩` in the retained basis.
    pub phase_elements: DMatrix<f64>,
    /// Eigenvectors in the oscillator basis, one per column.
    pub eigenvectors: DMatrix<f64>,
}

/// Diagonalize and keep the `n_levels` lowest states.
///
/// Eigenvectors are real, with signs chosen so that `⟨m−1|φ̂|m⟩ ≥ 0`.
pub fn diagonalize(h: &Hamiltonian, n_levels: usize) -> Result<EigenSystem> {
    if n_levels == 0 || n_levels * 3 > h.basis_dim {
        return Err(Error::Precondition(format!(
            "n_levels = {n_levels} must be between 1 and basis_dim/3 = {}",
            h.basis_dim / 3
        )));
    }
    let eig = SymmetricEigen::new(h.matrix.clone());
    let mut order: Vec<usize> = (0..h.basis_dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let order = &order[..n_levels];

    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if n_levels >= 2 && energies[1] - energies[0] < 1e-9 {
        return Err(Error::Degenerate(format!(
            "lowest levels split by {:e} GHz",
            energies[1] - energies[0]
        )));
    }

    let mut vecs = DMatrix::from_fn(h.basis_dim, n_levels, |i, m| eig.eigenvectors[(i, order[m])]);
    let first = vecs.column(0).iamax();
    if vecs[(first, 0)] < 0.0 {
        vecs.column_mut(0).neg_mut();
    }
    for m in 1..n_levels {
        let coupling = vecs.column(m - 1).dot(&(&h.phase * vecs.column(m)));
        let flip = if coupling.abs() > 1e-12 {
            coupling < 0.0
        } else {
            vecs[(vecs.column(m).iamax(), m)] < 0.0
        };
        if flip {
            vecs.column_mut(m).neg_mut();
        }
    }
    let p = vecs.transpose() * &h.phase * &vecs;
    let phase_elements = (&p + p.transpose()) * 0.5;
    Ok(EigenSystem {
        params: h.params,
        basis_dim: h.basis_dim,
        n_levels,
        energies,
        phase_elements,
        eigenvectors: vecs,
    })
}

impl EigenSystem {
    /// Build and diagonalize in one call.
    pub fn solve(params: &CircuitParams, basis_dim: usize, n_levels: usize) -> Result<Self> {
        diagonalize(&build_hamiltonian(params, basis_dim)?, n_levels)
    }

    /// Default basis size and truncation.
    pub fn with_defaults(params: &CircuitParams) -> Result<Self> {
        Self::solve(params, DEFAULT_BASIS_DIM, DEFAULT_LEVELS)
    }

    /// `E_to − E_from`, GHz.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.energies[to] - self.energies[from]
    }

    pub fn f_ge(&self) -> f64 {
        self.transition(0, 1)
    }

    pub fn f_ef(&self) -> f64 {
        self.transition(1, 2)
    }

    /// `(E₂ − E₁) − (E₁ − E₀)`, GHz.
    pub fn anharmonicity(&self) -> f64 {
        self.f_ef() - self.f_ge()
    }

    /// Keep only the lowest `levels` states.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.n_levels {
            return Err(Error::Precondition(format!(
                "cannot truncate {} levels to {levels}",
                self.n_levels
            )));
        }
        Ok(Self {
            params: self.params,
            basis_dim: self.basis_dim,
            n_levels: levels,
            energies: self.energies[..levels].to_vec(),
            phase_elements: self.phase_elements.view((0, 0), (levels, levels)).into_owned(),
            eigenvectors: self.eigenvectors.columns(0, levels).into_owned(),
        })
    }
}

/// Parameters of the three-level ladder model, GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelReduction {
    pub omega_eg: f64,
    pub alpha: f64,
    pub beta_1: f64,
    pub beta_2: f64,
}

impl ThreeLevelReduction {
    /// `⟨0|E_L φ̂|1⟩`.
    pub fn coupling_01(&self) -> f64 {
        self.beta_1
    }

    /// `⟨1|E_L φ̂|2⟩ = √2 (β₁ + β₂)`.
    pub fn coupling_12(&self) -> f64 {
        SQRT_2 * (self.beta_1 + self.beta_2)
    }
}

/// Reduce to the ladder model `E_L φ̂ → β₁(b + b†) + β₂(b†bb + b†b†b)`.
///
/// Matching this operator to the exact matrix elements gives
/// `β₁ = E_L⟨0|φ̂|1⟩` and `β₁ + β₂ = E_L⟨1|φ̂|2⟩/√2`, so `β₂` measures the
/// departure of the 1–2 element from the harmonic `√2` ratio and vanishes in
/// the linear limit.
pub fn three_level_reduction(eigs: &EigenSystem) -> Result<ThreeLevelReduction> {
    if eigs.n_levels < 3 {
        return Err(Error::Precondition(format!(
            "three-level reduction needs at least 3 levels, got {}",
            eigs.n_levels
        )));
    }
    let e_l = eigs.params.e_l;
    let beta_1 = e_l * eigs.phase_elements[(0, 1)];
    let beta_2 = e_l * eigs.phase_elements[(1, 2)] / SQRT_2 - beta_1;
    Ok(ThreeLevelReduction {
        omega_eg: eigs.f_ge(),
        alpha: eigs.anharmonicity(),
        beta_1,
        beta_2,
    })
}

/// One row of a flux sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    pub phi_ext: f64,
    pub f_ge: f64,
    pub f_ef: f64,
}

/// Lowest two transitions over a grid of external flux values.
pub fn flux_sweep(params: &CircuitParams, phi_grid: &[f64], n_levels: usize) -> Result<Vec<FluxPoint>> {
    if phi_grid.is_empty() {
        return Err(Error::InvalidInput("flux grid is empty".into()));
    }
    let basis_dim = DEFAULT_BASIS_DIM.max(3 * n_levels);
    phi_grid
        .par_iter()
        .map(|&phi| {
            let eigs = EigenSystem::solve(&params.with_phi_ext(phi), basis_dim, n_levels.max(3))?;
            Ok(FluxPoint {
                phi_ext: phi,
                f_ge: eigs.f_ge(),
                f_ef: eigs.f_ef(),
            })
        })
        .collect()
}
