//! First-order propagation of correlated uncertainties.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Propagated {
    pub value: f64,
    pub sigma: f64,
}

fn check_inputs(values: &[f64], sigmas: &[f64], corr: &DMatrix<f64>) -> Result<()> {
    let n = values.len();
    if sigmas.len() != n || corr.nrows() != n || corr.ncols() != n {
        return Err(invalid("values, sigmas and correlation matrix differ in size"));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("uncertainties must be non-negative"));
    }
    for i in 0..n {
        for j in 0..n {
            let r = corr[(i, j)];
            if !(r.abs() <= 1.0) || (r - corr[(j, i)]).abs() > 1e-12 {
                return Err(invalid("correlations must be symmetric with |ρ| ≤ 1"));
            }
        }
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(invalid("correlation matrix must have a unit diagonal"));
        }
    }
    Ok(())
}

fn gradient<F: Fn(&[f64]) -> f64>(values: &[f64], sigmas: &[f64], f: &F) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let h = (values[i].abs() * 1e-6).max(sigmas[i] * 1e-4).max(1e-12);
            let mut hi = values.to_vec();
            let mut lo = values.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// σ_f² = Σᵢⱼ ∂ᵢf ∂ⱼf ρᵢⱼ σᵢ σⱼ with central-difference gradients.
///
/// Rejects correlation matrices that are not positive semidefinite.
pub fn propagate<F: Fn(&[f64]) -> f64>(
    values: &[f64],
    sigmas: &[f64],
    correlations: &DMatrix<f64>,
    f: F,
) -> Result<Propagated> {
    check_inputs(values, sigmas, correlations)?;
    let eig = correlations.clone().symmetric_eigen();
    let tol = 1e-12 * values.len() as f64;
    if eig.eigenvalues.iter().any(|&e| e < -tol) {
        return Err(Error::InvalidInput(format!(
            "correlation matrix is not positive semidefinite (smallest eigenvalue {:.4})",
            eig.eigenvalues.min()
        )));
    }
    propagate_unchecked(values, sigmas, correlations, f)
}

/// As [`propagate`] without the semidefiniteness check. Fails only if the
/// resulting variance is negative.
pub fn propagate_unchecked<F: Fn(&[f64]) -> f64>(
    values: &[f64],
    sigmas: &[f64],
    correlations: &DMatrix<f64>,
    f: F,
) -> Result<Propagated> {
    check_inputs(values, sigmas, correlations)?;
    let g = gradient(values, sigmas, &f);
    let n = values.len();
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += g[i] * g[j] * correlations[(i, j)] * sigmas[i] * sigmas[j];
        }
    }
    if var < -1e-12 * var.abs().max(1e-300) {
        return Err(invalid(format!("propagated variance is negative ({var:.3e})")));
    }
    Ok(Propagated {
        value: f(values),
        sigma: var.max(0.0).sqrt(),
    })
}
