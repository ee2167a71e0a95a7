//! Floquet–Magnus expansion of a periodically driven operator to third order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::solve_detuning;
use crate::circuit::{EigenSystem, ThreeLevelReduction};
use crate::error::{ensure_positive, invalid, Error, Result};

type CMatrix = DMatrix<Complex64>;

const HERMITICITY_TOLERANCE: f64 = 1e-10;

/// `H(τ) = Σ_k e^{ikτ} H_k` with `τ = base_frequency · 2πt`.
///
/// Components are in GHz.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierHamiltonian {
    base_frequency: f64,
    dim: usize,
    components: BTreeMap<i32, CMatrix>,
}

impl FourierHamiltonian {
    /// Checks that all components are square of one size and that
    /// `H_{−k} = H_k†`.
    pub fn new(base_frequency: f64, components: BTreeMap<i32, CMatrix>) -> Result<Self> {
        ensure_positive("base_frequency", base_frequency)?;
        let dim = match components.values().next() {
            Some(m) => m.nrows(),
            None => return Err(Error::InvalidInput("no Fourier components".into())),
        };
        let scale = components.values().map(|m| m.norm()).fold(1.0, f64::max);
        for (&k, m) in &components {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::InvalidInput(format!(
                    "component {k} is {}×{}, expected {dim}×{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput(format!("component {k} is not finite")));
            }
            let partner = match components.get(&-k) {
                Some(p) => (p - m.adjoint()).norm(),
                None => m.norm(),
            };
            if partner > HERMITICITY_TOLERANCE * scale {
                return Err(Error::InvalidInput(format!(
                    "H_{} differs from H_{k}† by {partner:e}",
                    -k
                )));
            }
        }
        Ok(Self {
            base_frequency,
            dim,
            components,
        })
    }

    pub fn base_frequency(&self) -> f64 {
        self.base_frequency
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &BTreeMap<i32, CMatrix> {
        &self.components
    }

    /// Static component `H_0`, zero if absent.
    pub fn static_part(&self) -> CMatrix {
        self.components
            .get(&0)
            .cloned()
            .unwrap_or_else(|| CMatrix::zeros(self.dim, self.dim))
    }

    fn oscillating(&self) -> impl Iterator<Item = (i32, &CMatrix)> {
        self.components.iter().filter(|(k, _)| **k != 0).map(|(k, m)| (*k, m))
    }

    /// `(k, H_k, H_{−k})` for every oscillating `k` whose partner is stored.
    fn pairs(&self) -> impl Iterator<Item = (i32, &CMatrix, &CMatrix)> {
        self.oscillating()
            .filter_map(|(k, m)| self.components.get(&-k).map(|p| (k, m, p)))
    }
}

fn comm(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Effective Hamiltonian (GHz) summed through `order ∈ {1, 2, 3}`.
pub fn floquet_magnus_generic(fh: &FourierHamiltonian, order: usize) -> Result<CMatrix> {
    if !(1..=3).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let w = fh.base_frequency;
    let h0 = fh.static_part();
    let mut h = h0.clone();
    if order >= 2 {
        for (k, hk, hmk) in fh.pairs() {
            h += comm(hk, hmk) * Complex64::from(1.0 / (2.0 * k as f64 * w));
        }
    }
    if order >= 3 {
        let w2 = w * w;
        for (k, hk, hmk) in fh.pairs() {
            let kf = k as f64;
            h += comm(&comm(hk, &h0), hmk) * Complex64::from(1.0 / (2.0 * kf * kf * w2));
            for (kp, hkp) in fh.oscillating() {
                if kp == k {
                    continue;
                }
                let Some(hdiff) = fh.components.get(&(k - kp)) else {
                    continue;
                };
                let kpf = kp as f64;
                let c = (1.0 / kpf + 1.0 / (3.0 * (kpf - kf))) / (4.0 * kf * w2);
                h += comm(&comm(hkp, hdiff), hmk) * Complex64::from(c);
            }
        }
    }
    Ok((&h + h.adjoint()) * Complex64::from(0.5))
}

fn ladder(dim: usize) -> (CMatrix, CMatrix) {
    let b = CMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            Complex64::from((j as f64).sqrt())
        } else {
            Complex64::from(0.0)
        }
    });
    let n = b.adjoint() * &b;
    (b, n)
}

/// Ladder model of the three-photon drive in the frame rotating at `3ω_d`,
/// truncated to `dim` oscillator levels, with base frequency `2ω_d`.
pub fn ladder_frame_n3(
    reduction: &ThreeLevelReduction,
    delta_cap: f64,
    omega_d: f64,
    phi_bar: f64,
    envelope_value: f64,
    dim: usize,
) -> Result<FourierHamiltonian> {
    ensure_positive("omega_d", omega_d)?;
    if dim < 3 {
        return Err(invalid("dim", format!("need at least 3 levels, got {dim}")));
    }
    let (b, n) = ladder(dim);
    let bd = b.adjoint();
    let h0 = &n * Complex64::from(delta_cap) + &bd * &bd * &b * &b * Complex64::from(0.5 * reduction.alpha);
    let lower = (&b * Complex64::from(reduction.beta_1) + &n * &b * Complex64::from(reduction.beta_2))
        * Complex64::from(0.5 * phi_bar * envelope_value);
    let raise = lower.adjoint();
    let mut c = BTreeMap::new();
    c.insert(0, h0);
    for k in [1, 2] {
        c.insert(-k, lower.clone());
        c.insert(k, raise.clone());
    }
    FourierHamiltonian::new(2.0 * omega_d, c)
}

/// Frame of the full level structure for an `n`-photon drive, base
/// frequency `ω_d`.
///
/// Level `m` rotates at `r_m·ω_d` with `r_0 = 0`, `r_1 = n` and `r_m` the
/// nearest integer to `(E_m − E_0)/ω_d` otherwise.
pub fn nearest_harmonic_frame(
    eigs: &EigenSystem,
    n: u32,
    omega_d: f64,
    phi_bar: f64,
    levels: usize,
) -> Result<FourierHamiltonian> {
    ensure_positive("omega_d", omega_d)?;
    if levels < 2 || levels > eigs.n_levels {
        return Err(invalid(
            "levels",
            format!("must lie in 2..={}, got {levels}", eigs.n_levels),
        ));
    }
    let e0 = eigs.energies[0];
    let r: Vec<i32> = (0..levels)
        .map(|m| match m {
            0 => 0,
            1 => n as i32,
            _ => ((eigs.energies[m] - e0) / omega_d).round() as i32,
        })
        .collect();
    let zero = || CMatrix::zeros(levels, levels);
    let mut c: BTreeMap<i32, CMatrix> = BTreeMap::new();
    let h0 = c.entry(0).or_insert_with(zero);
    for m in 0..levels {
        h0[(m, m)] = Complex64::from(eigs.energies[m] - e0 - r[m] as f64 * omega_d);
    }
    let half = 0.5 * phi_bar * eigs.params.e_l;
    for m in 0..levels {
        for mp in 0..levels {
            let v = half * eigs.phase_elements[(m, mp)];
            if v == 0.0 {
                continue;
            }
            for s in [-1, 1] {
                let k = r[m] - r[mp] + s;
                c.entry(k).or_insert_with(zero)[(m, mp)] += Complex64::from(v);
            }
        }
    }
    FourierHamiltonian::new(omega_d, c)
}

/// Drive-induced shift of the `g–e` splitting at order `order`, GHz.
///
/// Diagonal of the effective Hamiltonian minus its undriven value.
pub fn stark_shift_generic(
    eigs: &EigenSystem,
    n: u32,
    omega_d: f64,
    phi_bar: f64,
    order: usize,
    levels: usize,
) -> Result<f64> {
    let fh = nearest_harmonic_frame(eigs, n, omega_d, phi_bar, levels)?;
    let h = floquet_magnus_generic(&fh, order)?;
    let h0 = fh.static_part();
    Ok((h[(1, 1)].re - h[(0, 0)].re) - (h0[(1, 1)].re - h0[(0, 0)].re))
}

/// Drive frequency (GHz) solving `Δ + δ(Δ) = 0` with the generic engine.
pub fn solve_resonance_generic(
    eigs: &EigenSystem,
    n: u32,
    phi_bar: f64,
    order: usize,
    levels: usize,
) -> Result<f64> {
    if n == 0 || n % 2 == 0 {
        return Err(invalid("n", format!("must be odd, got {n}")));
    }
    if !(1..=3).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let f_eg = eigs.f_ge();
    let nf = n as f64;
    if phi_bar == 0.0 {
        return Ok(f_eg / nf);
    }
    let residual = |d: f64| -> Result<f64> {
        let w = (f_eg - d) / nf;
        Ok(d + stark_shift_generic(eigs, n, w, phi_bar, order, levels)?)
    };
    let d = solve_detuning(&residual, 0.5 * f_eg)?;
    Ok((f_eg - d) / nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{three_level_reduction, CircuitParams};
    use crate::effective::heff_n3_terms;

    fn reference() -> ThreeLevelReduction {
        ThreeLevelReduction {
            omega_eg: 1.33237726071,
            alpha: 0.81310957401,
            beta_1: 1.50514984564,
            beta_2: -0.31629791064,
        }
    }

    #[test]
    fn static_hamiltonian_is_unchanged() {
        let h0 = CMatrix::from_fn(3, 3, |i, j| Complex64::new((i + j) as f64, 0.0));
        let fh = FourierHamiltonian::new(1.0, BTreeMap::from([(0, h0.clone())])).unwrap();
        for order in 1..=3 {
            assert!((floquet_magnus_generic(&fh, order).unwrap() - &h0).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_order_four() {
        let fh = FourierHamiltonian::new(1.0, BTreeMap::from([(0, CMatrix::identity(2, 2))])).unwrap();
        assert_eq!(floquet_magnus_generic(&fh, 4), Err(Error::UnsupportedOrder(4)));
        assert_eq!(floquet_magnus_generic(&fh, 0), Err(Error::UnsupportedOrder(0)));
    }

    #[test]
    fn rejects_non_hermitian_components() {
        let a = CMatrix::from_element(2, 2, Complex64::new(0.0, 1.0));
        let c = BTreeMap::from([(1, a.clone()), (-1, a)]);
        assert!(FourierHamiltonian::new(1.0, c).is_err());
    }

    #[test]
    fn ladder_frame_matches_closed_forms() {
        let r = reference();
        let (w, d, p) = (0.444, 0.01, 0.1);
        let fh = ladder_frame_n3(&r, d, w, p, 1.0, 6).unwrap();
        let closed = heff_n3_terms(&r, d, w, p, 1.0).unwrap();
        let h1 = floquet_magnus_generic(&fh, 1).unwrap();
        let h2 = floquet_magnus_generic(&fh, 2).unwrap();
        let h3 = floquet_magnus_generic(&fh, 3).unwrap();
        let split = |h: &CMatrix| h[(1, 1)].re - h[(0, 0)].re;
        assert!((split(&h1) - d).abs() < 1e-12);
        assert!((split(&h2) - split(&h1) - closed.order(2).number).abs() < 1e-10);
        assert!((split(&h3) - split(&h2) - closed.order(3).number).abs() < 1e-10);
        assert!((h3[(0, 1)].re - closed.order(3).drive).abs() < 1e-10);
        assert!(h2[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn effective_operator_is_hermitian() {
        let eigs = EigenSystem::solve(&CircuitParams::reference_device(), 60, 8).unwrap();
        let fh = nearest_harmonic_frame(&eigs, 5, eigs.f_ge() / 5.0, 0.3, 8).unwrap();
        let h = floquet_magnus_generic(&fh, 3).unwrap();
        assert!((&h - h.adjoint()).norm() < 1e-10);
    }

    #[test]
    fn generic_three_photon_shift_is_positive() {
        let eigs = EigenSystem::solve(&CircuitParams::reference_device(), 60, 8).unwrap();
        let r = three_level_reduction(&eigs).unwrap();
        let w = solve_resonance_generic(&eigs, 3, 0.1, 2, 3).unwrap();
        assert!(w > r.omega_eg / 3.0);
    }
}
