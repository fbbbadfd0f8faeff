//! Weighted nonlinear least squares.
//!
//! [`minimize`] is a Levenberg–Marquardt solver over an arbitrary residual
//! vector ([`Problem`]). [`fit`] wraps it for curve models from the
//! [`models`] registry with Poisson or σ weights. Bounded parameters are
//! optimized in an unbounded internal coordinate; reported estimates and
//! covariances are always in the original parameters.

pub mod models;
mod propagate;
pub mod quad;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub use models::{arcsine_lorentzian_density, model_by_name, model_registry, FitModel, ParamSpec};
pub use propagate::{propagate, propagate_unchecked, Propagated};

/// Admissible range of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bound {
    Free,
    /// Strictly positive, optimized on a log scale.
    Positive,
    /// Open interval, optimized through a logistic map.
    Interval {
        lower: f64,
        upper: f64,
    },
}

impl Bound {
    pub fn contains(self, value: f64) -> bool {
        match self {
            Bound::Free => value.is_finite(),
            Bound::Positive => value > 0.0 && value.is_finite(),
            Bound::Interval { lower, upper } => value > lower && value < upper,
        }
    }

    fn to_internal(self, value: f64) -> f64 {
        match self {
            Bound::Free => value,
            Bound::Positive => value.ln(),
            Bound::Interval { lower, upper } => {
                let s = (value - lower) / (upper - lower);
                (s / (1.0 - s)).ln()
            }
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Bound::Free => u,
            Bound::Positive => u.exp(),
            Bound::Interval { lower, upper } => lower + (upper - lower) / (1.0 + (-u).exp()),
        }
    }

    /// d(external)/d(internal).
    fn slope(self, u: f64) -> f64 {
        match self {
            Bound::Free => 1.0,
            Bound::Positive => u.exp(),
            Bound::Interval { lower, upper } => {
                let s = 1.0 / (1.0 + (-u).exp());
                (upper - lower) * s * (1.0 - s)
            }
        }
    }
}

/// A residual vector to be driven to zero in the least-squares sense.
///
/// Residuals are expected to be weighted already, so the objective is the
/// plain sum of squares.
pub trait Problem {
    fn n_residuals(&self) -> usize;

    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Fills `jac` (n_residuals × n_params) with d(residual)/d(param) and
    /// returns true, or returns false to request finite differences.
    fn jacobian(&self, _params: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }

    /// Names used in error messages; defaults to `p0`, `p1`, ...
    fn param_name(&self, index: usize) -> String {
        format!("p{index}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    Singular,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative tolerance for the gradient, step and objective tests.
    pub tolerance: f64,
    /// Parameters held at their initial value. Empty means none.
    pub fixed: Vec<bool>,
    /// Multiply the covariance by the reduced chi-square.
    pub scale_covariance: bool,
    /// Relative step for finite-difference Jacobians.
    pub fd_step: f64,
    /// Return `MaxIterations`/`Singular` results instead of errors.
    pub allow_partial: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            fixed: Vec::new(),
            scale_covariance: false,
            fd_step: 1e-6,
            allow_partial: false,
        }
    }
}

impl FitOptions {
    pub fn with_fixed(mut self, fixed: Vec<bool>) -> Self {
        self.fixed = fixed;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Covariance of all parameters; rows and columns of fixed ones are zero.
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
    pub chi_square: f64,
    pub dof: usize,
    pub reduced_chi_square: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Weighted residuals at the optimum.
    pub residuals: Vec<f64>,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl FitResult {
    pub fn sigma(&self, index: usize) -> f64 {
        self.covariance[(index, index)].max(0.0).sqrt()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.sigma(i)).collect()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let d = self.sigma(i) * self.sigma(j);
        if d > 0.0 {
            self.covariance[(i, j)] / d
        } else {
            0.0
        }
    }
}

struct Workspace<'a, P: Problem + ?Sized> {
    problem: &'a P,
    bounds: &'a [Bound],
    free: Vec<usize>,
    base: Vec<f64>,
    fd_scale: Vec<f64>,
    fd_step: f64,
}

impl<P: Problem + ?Sized> Workspace<'_, P> {
    fn external(&self, u: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            p[i] = self.bounds[i].to_external(u[k]);
        }
        p
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let mut r = DVector::zeros(self.problem.n_residuals());
        self.problem.residuals(p, r.as_mut_slice());
        r
    }

    /// Jacobian with respect to the free external parameters.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let m = self.problem.n_residuals();
        let mut full = DMatrix::zeros(m, p.len());
        let analytic = self.problem.jacobian(p, &mut full);
        let mut jac = DMatrix::zeros(m, self.free.len());
        for (k, &i) in self.free.iter().enumerate() {
            if analytic {
                jac.set_column(k, &full.column(i));
                continue;
            }
            let h = self.fd_step * p[i].abs().max(self.fd_scale[i]);
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[i] += h;
            lo[i] -= h;
            // One-sided differences when the central stencil would leave the domain.
            let (rh, rl, span) = if self.bounds[i].contains(lo[i]) && self.bounds[i].contains(hi[i]) {
                (self.residuals(&hi), self.residuals(&lo), 2.0 * h)
            } else if self.bounds[i].contains(hi[i]) {
                (self.residuals(&hi), self.residuals(p), h)
            } else {
                (self.residuals(p), self.residuals(&lo), h)
            };
            jac.set_column(k, &((rh - rl) / span));
        }
        jac
    }
}

/// Floor for finite-difference steps: a parameter starting at zero borrows
/// the typical magnitude of the others.
fn fd_scales(init: &[f64]) -> Vec<f64> {
    let nonzero: Vec<f64> = init.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    let typical = if nonzero.is_empty() {
        1.0
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    };
    init.iter()
        .map(|v| if *v != 0.0 { v.abs() * 1e-3 } else { typical })
        .collect()
}

/// Minimizes the sum of squared residuals of `problem` starting at `init`.
pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    init: &[f64],
    bounds: &[Bound],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = init.len();
    if bounds.len() != n {
        return Err(invalid(format!("{} bounds for {n} parameters", bounds.len())));
    }
    if !opts.fixed.is_empty() && opts.fixed.len() != n {
        return Err(invalid("fixed mask length differs from parameter count"));
    }
    for (i, (&v, &b)) in init.iter().zip(bounds).enumerate() {
        if !b.contains(v) {
            return Err(invalid(format!(
                "initial value {v} of {} outside its bound {b:?}",
                problem.param_name(i)
            )));
        }
    }
    let free: Vec<usize> = (0..n)
        .filter(|&i| !opts.fixed.get(i).copied().unwrap_or(false))
        .collect();
    let m = problem.n_residuals();
    if m < free.len() {
        return Err(Error::RankDeficient(format!(
            "{m} residuals for {} free parameters",
            free.len()
        )));
    }
    let ws = Workspace {
        problem,
        bounds,
        free: free.clone(),
        base: init.to_vec(),
        fd_scale: fd_scales(init),
        fd_step: opts.fd_step,
    };

    let mut u: Vec<f64> = free.iter().map(|&i| bounds[i].to_internal(init[i])).collect();
    let mut p = ws.external(&u);
    let mut r = ws.residuals(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(invalid("residuals are not finite at the initial point"));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let tol = opts.tolerance;
    let mut status = FitStatus::MaxIterations;

    if free.is_empty() {
        status = FitStatus::Converged;
    }
    while status != FitStatus::Converged && iterations < opts.max_iterations {
        iterations += 1;
        if cost <= f64::MIN_POSITIVE {
            status = FitStatus::Converged;
            break;
        }
        let mut jac = ws.jacobian(&p);
        for (k, &i) in free.iter().enumerate() {
            let s = bounds[i].slope(u[k]);
            jac.column_mut(k).scale_mut(s);
        }
        let normal = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let gscale = grad
            .iter()
            .enumerate()
            .map(|(k, g)| g.abs() / (normal[(k, k)].sqrt() * cost.sqrt()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if gscale <= tol {
            status = FitStatus::Converged;
            break;
        }
        let dmax = normal.diagonal().max().max(f64::MIN_POSITIVE);
        let diag: Vec<f64> = normal.diagonal().iter().map(|d| d.max(1e-12 * dmax)).collect();

        // Inner loop: raise the damping until a step lowers the cost.
        loop {
            let mut a = normal.clone();
            for (k, d) in diag.iter().enumerate() {
                a[(k, k)] += lambda * d;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        status = FitStatus::Converged;
                        break;
                    }
                    continue;
                }
            };
            let trial_u: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_p = ws.external(&trial_u);
            let trial_r = ws.residuals(&trial_p);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let unorm = trial_u.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_step = step.norm() <= tol * (unorm + tol);
                let small_gain = (cost - trial_cost) <= tol * cost;
                u = trial_u;
                p = trial_p;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                if small_step || small_gain {
                    status = FitStatus::Converged;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // No descent direction left at working precision.
                status = FitStatus::Converged;
                break;
            }
        }
    }

    let dof = m - free.len();
    let residuals = r.as_slice().to_vec();
    if status == FitStatus::MaxIterations && !opts.allow_partial {
        return Err(Error::NotConverged {
            iterations,
            chi_square: cost,
            residuals,
        });
    }

    // Covariance in the original parameters.
    let jac = ws.jacobian(&p);
    let normal = jac.transpose() * &jac;
    let mut covariance = DMatrix::zeros(n, n);
    let mut singular_param = None;
    let d: Vec<f64> = normal.diagonal().iter().map(|v| v.sqrt()).collect();
    if let Some(k) = d.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
        singular_param = Some(k);
    } else {
        let scaled = DMatrix::from_fn(free.len(), free.len(), |i, j| normal[(i, j)] / (d[i] * d[j]));
        let eig = scaled.clone().symmetric_eigen();
        let emin = eig.eigenvalues.min();
        let emax = eig.eigenvalues.max();
        if emin <= 1e-14 * emax {
            let k = eig.eigenvalues.imin();
            let v = eig.eigenvectors.column(k);
            singular_param = Some(v.iamax());
        } else if let Some(inv) = scaled.try_inverse() {
            let factor = if opts.scale_covariance && dof > 0 {
                cost / dof as f64
            } else {
                1.0
            };
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    covariance[(i, j)] = factor * inv[(a, b)] / (d[a] * d[b]);
                }
            }
        } else {
            singular_param = Some(0);
        }
    }
    if let Some(k) = singular_param {
        if !opts.allow_partial {
            return Err(Error::Singular {
                parameter: problem.param_name(free[k]),
            });
        }
        status = FitStatus::Singular;
        covariance.fill(f64::NAN);
    }

    Ok(FitResult {
        params: p,
        covariance,
        chi_square: cost,
        dof,
        reduced_chi_square: if dof > 0 { cost / dof as f64 } else { 0.0 },
        status,
        iterations,
        residuals,
    })
}

/// Per-point weights of curve data.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Uniform,
    /// Poisson counts; weight 1/√(N + 1).
    Counts(Vec<f64>),
    /// Standard deviations; weight 1/σ.
    Sigma(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weights: Weights,
}

impl CurveData {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            x,
            y,
            weights: Weights::Uniform,
        }
    }

    /// Count data weighted by its own counts.
    pub fn counts(x: Vec<f64>, y: Vec<f64>) -> Self {
        let w = Weights::Counts(y.clone());
        Self { x, y, weights: w }
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Self {
        self.weights = Weights::Sigma(sigma);
        self
    }

    pub fn weight_vector(&self) -> Result<Vec<f64>> {
        let n = self.x.len();
        let w: Vec<f64> = match &self.weights {
            Weights::Uniform => vec![1.0; n],
            Weights::Counts(c) => c.iter().map(|&c| 1.0 / (c + 1.0).sqrt()).collect(),
            Weights::Sigma(s) => s.iter().map(|&s| 1.0 / s).collect(),
        };
        if w.len() != n {
            return Err(invalid("weight vector length differs from data length"));
        }
        if w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be positive and finite"));
        }
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(invalid("x and y differ in length"));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(invalid("data contain non-finite values"));
        }
        Ok(())
    }
}

struct CurveProblem<'a> {
    model: &'a dyn FitModel,
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl Problem for CurveProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.w[k] * (self.model.eval(self.x[k], params) - self.y[k]);
        }
    }

    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) -> bool {
        if !self.model.has_analytic_jacobian() {
            return false;
        }
        let mut g = vec![0.0; params.len()];
        for k in 0..self.x.len() {
            self.model.gradient(self.x[k], params, &mut g);
            for (j, gj) in g.iter().enumerate() {
                jac[(k, j)] = self.w[k] * gj;
            }
        }
        true
    }

    fn param_name(&self, index: usize) -> String {
        self.model.params()[index].name.to_string()
    }
}

/// Fits a registry model to curve data. Without `init` the model's own
/// initial-guess heuristic is used.
pub fn fit(model: &dyn FitModel, data: &CurveData, init: Option<&[f64]>, opts: &FitOptions) -> Result<FitResult> {
    data.validate()?;
    let w = data.weight_vector()?;
    let guess;
    let start = match init {
        Some(p) => p,
        None => {
            guess = model.guess(&data.x, &data.y);
            &guess
        }
    };
    if start.len() != model.params().len() {
        return Err(invalid(format!(
            "{} expects {} parameters, got {}",
            model.name(),
            model.params().len(),
            start.len()
        )));
    }
    let bounds: Vec<Bound> = model.params().iter().map(|p| p.bound).collect();
    let problem = CurveProblem {
        model,
        x: &data.x,
        y: &data.y,
        w,
    };
    let mut result = minimize(&problem, start, &bounds, opts)?;
    model.canonicalize(&mut result.params);
    Ok(result)
}
