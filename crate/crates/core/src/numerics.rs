//! Small numerical helpers shared by several modules.

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;

use crate::error::{Error, Result};

/// `∫_a^b f` by double-exponential quadrature.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    quadrature::double_exponential::integrate(f, a, b, abs_tol).integral
}

struct Scalar<'a>(&'a dyn Fn(f64) -> f64);

impl CostFunction for Scalar<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok((self.0)(*x))
    }
}

/// Brent minimization of `f` on `[lo, hi]`; returns `(x, f(x))`.
///
/// `abs_tol` is the absolute tolerance on `x`.
pub fn minimize_scalar(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, abs_tol: f64) -> Result<(f64, f64)> {
    let solver = BrentOpt::new(lo, hi).set_tolerance(f64::EPSILON.sqrt() * 1e-2, abs_tol);
    let res = Executor::new(Scalar(f), solver)
        .configure(|s| s.max_iters(200))
        .run()
        .map_err(|e| Error::FitFailure(format!("scalar minimization: {e}")))?;
    let x = res
        .state
        .best_param
        .ok_or_else(|| Error::FitFailure("scalar minimization returned no point".into()))?;
    Ok((x, res.state.best_cost))
}

/// Brent maximization; returns `(x, f(x))`.
pub fn maximize_scalar(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, abs_tol: f64) -> Result<(f64, f64)> {
    let neg = |x: f64| -f(x);
    minimize_scalar(&neg, lo, hi, abs_tol).map(|(x, v)| (x, -v))
}

/// Ordinary least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InvalidInput(format!(
            "line fit needs two equal-length series with at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_stderr, intercept_stderr) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - slope * a - intercept).powi(2))
            .sum();
        let s2 = rss / (nf - 2.0);
        let se = (s2 / sxx).sqrt();
        (se, (s2 * (1.0 / nf + mx * mx / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        intercept_stderr,
    })
}

/// Vertex of the parabola through three points; `None` if they are collinear.
pub fn parabolic_vertex(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2]);
    let a = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / d;
    let b = (x[2] * x[2] * (y[0] - y[1]) + x[1] * x[1] * (y[2] - y[0]) + x[0] * x[0] * (y[1] - y[2])) / d;
    if a == 0.0 || !a.is_finite() {
        None
    } else {
        Some(-b / (2.0 * a))
    }
}

/// Indices of local maxima above `threshold`, each refined by a parabola
/// through its neighbours. Returns `(x, y)` pairs.
pub fn find_peaks(x: &[f64], y: &[f64], threshold: f64) -> Vec<(f64, f64)> {
    let mut peaks = Vec::new();
    for i in 0..y.len() {
        if y[i] < threshold {
            continue;
        }
        let left = i == 0 || y[i] > y[i - 1];
        let right = i + 1 == y.len() || y[i] >= y[i + 1];
        if !(left && right) {
            continue;
        }
        if i > 0 && i + 1 < y.len() {
            let xs = [x[i - 1], x[i], x[i + 1]];
            let ys = [y[i - 1], y[i], y[i + 1]];
            match parabolic_vertex(xs, ys) {
                Some(xv) if xv > xs[0] && xv < xs[2] => peaks.push((xv, lagrange3(xs, ys, xv))),
                _ => peaks.push((x[i], y[i])),
            }
        } else {
            peaks.push((x[i], y[i]));
        }
    }
    peaks
}

fn lagrange3(x: [f64; 3], y: [f64; 3], t: f64) -> f64 {
    let l0 = (t - x[1]) * (t - x[2]) / ((x[0] - x[1]) * (x[0] - x[2]));
    let l1 = (t - x[0]) * (t - x[2]) / ((x[1] - x[0]) * (x[1] - x[2]));
    let l2 = (t - x[0]) * (t - x[1]) / ((x[2] - x[0]) * (x[2] - x[1]));
    y[0] * l0 + y[1] * l1 + y[2] * l2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 8.0).abs() < 1e-10);
    }

    #[test]
    fn brent_finds_minimum() {
        let (x, fx) = minimize_scalar(&|x: f64| (x - 0.3).powi(2) + 1.0, -1.0, 2.0, 1e-10).unwrap();
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_fit_exact() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn peak_refinement() {
        let x: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - (v - 1.03).powi(2)).collect();
        let p = find_peaks(&x, &y, 0.5);
        assert_eq!(p.len(), 1);
        assert!((p[0].0 - 1.03).abs() < 1e-12);
        assert!((p[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peaks_below_threshold_ignored() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 0.05, 0.0];
        assert!(find_peaks(&x, &y, 0.1).is_empty());
    }
}
