use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A parametric curve y = f(x; θ) with an analytic gradient in θ.
pub trait Model {
    /// Parameter names, in the order used by `eval` and `gradient`.
    fn names(&self) -> &'static [&'static str];

    fn eval(&self, x: f64, p: &[f64]) -> f64;

    /// ∂f/∂θ at (x, θ), written into `grad` (length = number of parameters).
    fn gradient(&self, x: f64, p: &[f64], grad: &mut [f64]);

    fn n_params(&self) -> usize {
        self.names().len()
    }
}

/// Stopping rules of [`least_squares_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Largest cosine between the residual vector and any Jacobian column.
    pub gradient_tol: f64,
    /// Step size relative to the parameter norm.
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-10,
            step_tol: 1e-10,
            max_iterations: 200,
        }
    }
}

/// A step-size stop only counts as convergence if the gradient is at least this small.
const STALL_GRADIENT_TOL: f64 = 1e-6;
/// Residual norm, relative to the weighted data norm, treated as an exact fit.
const EXACT_FIT_RESIDUAL: f64 = 1e-12;
/// Scaled normal-matrix eigenvalues below this make the Jacobian rank deficient.
const SINGULAR_EIGENVALUE: f64 = 1e-13;

pub const FLAG_SINGULAR: &str = "singular_jacobian";
pub const FLAG_MAX_ITER: &str = "max_iterations";
pub const FLAG_STALLED: &str = "stalled";

/// Parameter estimates with 1σ uncertainties.
///
/// The covariance is (JᵀJ)⁻¹ times the residual variance rss/(n − p), with J the
/// (weighted) Jacobian at the solution. Quantities derived after the fit (such as
/// g²(0) = b − a) are appended as extra named entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major covariance of the fitted (not derived) parameters.
    pub covariance: Vec<f64>,
    pub rss: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Largest residual–Jacobian-column cosine at the solution.
    pub gradient_cosine: f64,
    pub flags: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn sigma_of(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.sigma[i])
    }

    /// Covariance between two fitted parameters.
    pub fn covariance_of(&self, a: &str, b: &str) -> Option<f64> {
        let n = (self.covariance.len() as f64).sqrt() as usize;
        let (i, j) = (self.index(a)?, self.index(b)?);
        (i < n && j < n).then(|| self.covariance[i * n + j])
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn flag(&mut self, flag: &str) {
        if !self.has_flag(flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn push_derived(&mut self, name: &str, value: f64, sigma: f64) {
        self.names.push(name.to_string());
        self.values.push(value);
        self.sigma.push(sigma);
    }

    /// `{params, sigma, rss, converged, iterations, flags}` with non-finite
    /// uncertainties written as `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let num = |v: f64| {
            serde_json::Number::from_f64(v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null)
        };
        let params: BTreeMap<&str, serde_json::Value> =
            self.names.iter().map(String::as_str).zip(self.values.iter().map(|&v| num(v))).collect();
        let sigma: BTreeMap<&str, serde_json::Value> =
            self.names.iter().map(String::as_str).zip(self.sigma.iter().map(|&v| num(v))).collect();
        serde_json::json!({
            "params": params,
            "sigma": sigma,
            "rss": num(self.rss),
            "converged": self.converged,
            "iterations": self.iterations,
            "n_points": self.n_points,
            "flags": self.flags,
        })
    }
}

struct Problem<'a, M: Model + ?Sized> {
    model: &'a M,
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl<M: Model + ?Sized> Problem<'_, M> {
    /// Weighted residuals (y − f)/σ.
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(self.y).zip(&self.w).map(|((&x, &y), &w)| (y - self.model.eval(x, p)) * w),
        )
    }

    /// Weighted Jacobian of f.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let np = p.len();
        let mut j = DMatrix::zeros(self.x.len(), np);
        let mut g = vec![0.0; np];
        for (i, (&x, &w)) in self.x.iter().zip(&self.w).enumerate() {
            self.model.gradient(x, p, &mut g);
            for k in 0..np {
                j[(i, k)] = g[k] * w;
            }
        }
        j
    }
}

fn gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|k| {
            let cn = j.column(k).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[k].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Inverse of JᵀJ via a Jacobi-scaled eigen-decomposition; `None` if rank deficient.
fn normal_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let scale: Vec<f64> = (0..n).map(|i| a[(i, i)].sqrt()).collect();
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (scale[i] * scale[j]));
    let eig = scaled.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| !(e > SINGULAR_EIGENVALUE)) {
        return None;
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (scale[i] * scale[j])))
}

/// Levenberg–Marquardt minimisation of Σ((y − f(x; θ))/σ)².
///
/// Uses Marquardt's diagonal scaling with Nielsen's damping update; trial steps
/// that produce non-finite residuals are rejected. The fit is converged when the
/// largest residual–Jacobian-column cosine drops below `gradient_tol`, or when the
/// relative step drops below `step_tol` with the cosine already small. A
/// rank-deficient Jacobian at the solution returns the best point with infinite
/// uncertainties, flagged and not converged.
pub fn least_squares_fit<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    sigma_y: Option<&[f64]>,
    initial: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    let np = model.n_params();
    if initial.len() != np {
        return Err(invalid(format!("model has {np} parameters, initial guess has {}", initial.len())));
    }
    if x.len() != y.len() {
        return Err(invalid("x and y lengths differ"));
    }
    if x.len() < np {
        return Err(invalid(format!("{} data points cannot constrain {np} parameters", x.len())));
    }
    if x.iter().chain(y).chain(initial).any(|v| !v.is_finite()) {
        return Err(invalid("data and initial guess must be finite"));
    }
    let w: Vec<f64> = match sigma_y {
        Some(s) => {
            if s.len() != x.len() {
                return Err(invalid("σ_y length differs from the data"));
            }
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid("σ_y must be positive and finite"));
            }
            s.iter().map(|v| 1.0 / v).collect()
        }
        None => vec![1.0; x.len()],
    };
    let prob = Problem { model, x, y, w };

    let mut p = initial.to_vec();
    let mut r = prob.residuals(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(invalid("model is not finite at the initial guess"));
    }
    let mut rss = r.norm_squared();
    let mut j = prob.jacobian(&p);
    let mut a = j.transpose() * &j;
    let mut g = j.transpose() * &r;
    let mut d: Vec<f64> = (0..np).map(|k| a[(k, k)].sqrt()).collect();
    let mut mu = 1e-3 * (0..np).map(|k| a[(k, k)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut flags = Vec::new();
    let mut gcos = gradient_cosine(&j, &r);
    // residuals this small relative to the data are rounding noise, whose direction
    // (and hence gradient cosine) is meaningless
    let y_norm = y.iter().zip(&prob.w).map(|(y, w)| (y * w).powi(2)).sum::<f64>().sqrt();
    let exact = |rss: f64| rss.sqrt() <= EXACT_FIT_RESIDUAL * y_norm;

    loop {
        if gcos <= options.gradient_tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            flags.push(FLAG_MAX_ITER.to_string());
            break;
        }
        if !(mu < 1e300) {
            if exact(rss) {
                converged = true;
            } else {
                flags.push(FLAG_STALLED.to_string());
            }
            break;
        }
        iterations += 1;
        for k in 0..np {
            d[k] = d[k].max(a[(k, k)].sqrt());
        }
        let dsq: Vec<f64> = d.iter().map(|&v| if v > 0.0 { v * v } else { 1.0 }).collect();
        let mut damped = a.clone();
        for k in 0..np {
            damped[(k, k)] += mu * dsq[k];
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&g);
        let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small_step = step.norm() <= options.step_tol * (pnorm + options.step_tol);
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let r_trial = prob.residuals(&trial);
        let rss_trial = r_trial.norm_squared();
        let predicted = step.dot(&(&g + DVector::from_fn(np, |k, _| mu * dsq[k] * step[k])));
        let gain = if rss_trial.is_finite() && predicted > 0.0 {
            (rss - rss_trial) / predicted
        } else {
            -1.0
        };
        if gain > 0.0 {
            p = trial;
            r = r_trial;
            rss = rss_trial;
            j = prob.jacobian(&p);
            a = j.transpose() * &j;
            g = j.transpose() * &r;
            gcos = gradient_cosine(&j, &r);
            mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
        }
        if small_step {
            if gcos <= STALL_GRADIENT_TOL || exact(rss) {
                converged = true;
            } else {
                flags.push(FLAG_STALLED.to_string());
            }
            break;
        }
    }

    let n = x.len();
    let variance = rss / (n.saturating_sub(np).max(1)) as f64;
    let (sigma, covariance) = match normal_inverse(&a) {
        Some(inv) => {
            let cov = inv * variance;
            ((0..np).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(), cov.transpose().iter().copied().collect())
        }
        None => {
            flags.push(FLAG_SINGULAR.to_string());
            converged = false;
            (vec![f64::INFINITY; np], vec![f64::INFINITY; np * np])
        }
    };
    Ok(FitResult {
        names: model.names().iter().map(|s| s.to_string()).collect(),
        values: p,
        sigma,
        covariance,
        rss,
        n_points: n,
        iterations,
        converged,
        gradient_cosine: gcos,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear;

    impl Model for Linear {
        fn names(&self) -> &'static [&'static str] {
            &["slope"]
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * x
        }
        fn gradient(&self, x: f64, _p: &[f64], g: &mut [f64]) {
            g[0] = x;
        }
    }

    struct Exponential;

    impl Model for Exponential {
        fn names(&self) -> &'static [&'static str] {
            &["amplitude", "rate"]
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * (-p[1] * x).exp()
        }
        fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
            let e = (-p[1] * x).exp();
            g[0] = e;
            g[1] = -p[0] * x * e;
        }
    }

    #[test]
    fn linear_closed_form() {
        let fit = least_squares_fit(&Linear, &[1.0, 2.0], &[2.0, 4.0], None, &[0.5], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.values[0] - 2.0).abs() < 1e-14, "{fit:?}");
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn exact_guess_is_a_fixed_point() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| Exponential.eval(x, &[3.0, 1.5])).collect();
        let fit = least_squares_fit(&Exponential, &x, &y, None, &[3.0, 1.5], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.values, vec![3.0, 1.5]);
        assert_eq!(fit.rss, 0.0);
    }

    #[test]
    fn nonlinear_recovery_from_far_guess() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| Exponential.eval(x, &[3.0, 1.5])).collect();
        let fit = least_squares_fit(&Exponential, &x, &y, None, &[1.0, 0.2], &FitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.values[0] - 3.0).abs() < 1e-9 && (fit.values[1] - 1.5).abs() < 1e-9);
        assert!(fit.sigma.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn singular_jacobian_is_flagged() {
        // the rate is unidentifiable when every x is zero
        let x = vec![0.0; 5];
        let y = vec![2.0; 5];
        let fit = least_squares_fit(&Exponential, &x, &y, None, &[1.0, 1.0], &FitOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.has_flag(FLAG_SINGULAR));
        assert!((fit.values[0] - 2.0).abs() < 1e-8);
        assert!(fit.sigma[1].is_infinite());
        let json = fit.to_json();
        assert!(json["sigma"]["rate"].is_null());
    }

    #[test]
    fn weighted_fit_and_errors() {
        let x = [1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 10.0];
        let loose = [1.0, 1.0, 1e6];
        let fit = least_squares_fit(&Linear, &x, &y, Some(&loose), &[1.0], &FitOptions::default()).unwrap();
        assert!((fit.values[0] - 1.0).abs() < 1e-6);
        assert!(least_squares_fit(&Linear, &[], &[], None, &[1.0], &FitOptions::default()).is_err());
        assert!(least_squares_fit(&Linear, &[1.0], &[f64::NAN], None, &[1.0], &FitOptions::default()).is_err());
        assert!(least_squares_fit(&Linear, &[1.0], &[1.0], Some(&[0.0]), &[1.0], &FitOptions::default()).is_err());
        assert!(least_squares_fit(&Linear, &[1.0], &[1.0], None, &[1.0, 2.0], &FitOptions::default()).is_err());
    }

    #[test]
    fn covariance_matches_linear_theory() {
        // y = θx with unit residual variance: var(θ) = s²/Σx²
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 1.9, 3.2, 3.9];
        let fit = least_squares_fit(&Linear, &x, &y, None, &[1.0], &FitOptions::default()).unwrap();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let theta = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sxx;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - theta * a).powi(2)).sum();
        assert!((fit.values[0] - theta).abs() < 1e-10);
        assert!((fit.sigma[0] / (rss / 3.0 / sxx).sqrt() - 1.0).abs() < 1e-8);
    }
}
