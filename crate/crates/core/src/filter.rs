//! Kalman filter for the hidden colored noise and the exact likelihood.
//!
//! With ξ_0 drawn from its stationary law the filter gain is constant:
//!
//! ```text
//! ξ̂_j = b ξ̂_{j-1} + c (X_j − f(X_{j-1}, θ)),   b = a/(1+γ),  c = aγ/(1+γ)
//! ```
//!
//! where γ is the positive root of γ = a²γ + 1 − a²γ²/(1+γ). The one-step
//! prediction errors X_j − f(X_{j-1}, θ) − ξ̂_{j-1} are i.i.d. N(0, 1+γ) at
//! the true θ, which gives the log-likelihood in a single pass.

use std::f64::consts::PI;
use std::io::Write;

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{drift, TarParams};

/// Steady-state filtering error variance and the constant filter coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub a: f64,
    pub gamma: f64,
    pub b: f64,
    pub c: f64,
}

/// Closed-form positive root of γ² − a²γ − 1 = 0.
pub fn solve_gamma(a: f64) -> Result<SteadyState> {
    if !(a.abs() < 1.0) {
        return Err(Error::param("a", format!("|a| must be < 1, got {a}")));
    }
    let a2 = a * a;
    let gamma = 0.5 * (a2 + (a2 * a2 + 4.0).sqrt());
    let b = a / (1.0 + gamma);
    let c = a * gamma / (1.0 + gamma);
    Ok(SteadyState { a, gamma, b, c })
}

/// Trajectory γ_0..γ_steps of the Riccati recursion
/// γ_j = a²γ_{j−1} + 1 − a²γ²_{j−1}/(1+γ_{j−1}).
pub fn riccati_iterate(a: f64, gamma0: f64, steps: usize) -> Vec<f64> {
    let a2 = a * a;
    let mut out = Vec::with_capacity(steps + 1);
    let mut g = gamma0;
    out.push(g);
    for _ in 0..steps {
        g = a2 * g + 1.0 - a2 * g * g / (1.0 + g);
        out.push(g);
    }
    out
}

/// Output of a filter pass at a fixed θ.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// ξ̂_0..ξ̂_n with ξ̂_0 = 0.
    pub xi_hat: Vec<f64>,
    /// Standardized innovations ε̂_1..ε̂_n.
    pub residuals: Vec<f64>,
    pub log_lik: f64,
}

impl FilterRun {
    /// `j,xi_hat,residual`; the residual column is empty at j = 0.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "xi_hat", "residual"])?;
        for (j, xh) in self.xi_hat.iter().enumerate() {
            let res = if j == 0 {
                String::new()
            } else {
                csvio::fmt(self.residuals[j - 1])
            };
            wtr.write_record([j.to_string(), csvio::fmt(*xh), res])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_len(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 observations, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Single pass of the constant-gain filter. `visit(j, ξ̂_{j-1}, prediction_error)`
/// is called for j = 1..n. Returns (Σ prediction_error², ξ̂_n).
#[inline(always)]
fn filter_pass<F: FnMut(usize, f64, f64)>(
    x: &[f64],
    theta: f64,
    params: &TarParams,
    ss: &SteadyState,
    mut visit: F,
) -> (f64, f64) {
    let mut xi_hat = 0.0;
    let mut sum_sq = 0.0;
    for j in 1..x.len() {
        let d = x[j] - drift(x[j - 1], theta, params);
        let e = d - xi_hat;
        visit(j, xi_hat, e);
        sum_sq += e * e;
        xi_hat = ss.b * xi_hat + ss.c * d;
    }
    (sum_sq, xi_hat)
}

#[inline]
fn assemble_log_lik(x0: f64, n: usize, sum_sq: f64, gamma: f64) -> f64 {
    let s = 1.0 + gamma;
    -0.5 * x0 * x0
        - 0.5 * (2.0 * PI).ln()
        - 0.5 * n as f64 * (2.0 * PI * s).ln()
        - sum_sq / (2.0 * s)
}

/// Full filter pass storing ξ̂ and the standardized innovations.
pub fn run_filter(x: &[f64], theta: f64, params: &TarParams) -> Result<FilterRun> {
    check_len(x)?;
    let ss = solve_gamma(params.a())?;
    let n = x.len() - 1;
    let scale = (1.0 + ss.gamma).sqrt();
    let mut xi_hat = Vec::with_capacity(n + 1);
    let mut residuals = Vec::with_capacity(n);
    let (sum_sq, last) = filter_pass(x, theta, params, &ss, |_, xh, e| {
        xi_hat.push(xh);
        residuals.push(e / scale);
    });
    xi_hat.push(last);
    Ok(FilterRun {
        xi_hat,
        residuals,
        log_lik: assemble_log_lik(x[0], n, sum_sq, ss.gamma),
    })
}

/// ln L_n(Xⁿ; θ) in O(n) time and O(1) memory; bit-identical to
/// [`run_filter`]'s `log_lik`.
pub fn log_likelihood(x: &[f64], theta: f64, params: &TarParams, ss: &SteadyState) -> Result<f64> {
    check_len(x)?;
    let (sum_sq, _) = filter_pass(x, theta, params, ss, |_, _, _| {});
    Ok(assemble_log_lik(x[0], x.len() - 1, sum_sq, ss.gamma))
}

/// Time-varying filter with the Riccati variance started at `gamma0`.
///
/// Verification path only: with `gamma0 = γ` it coincides with the
/// constant-gain filter.
pub fn run_filter_time_varying(
    x: &[f64],
    theta: f64,
    params: &TarParams,
    gamma0: f64,
) -> Result<FilterRun> {
    check_len(x)?;
    let a = params.a();
    let n = x.len() - 1;
    let mut xi_hat = vec![0.0; n + 1];
    let mut residuals = Vec::with_capacity(n);
    let mut g = gamma0;
    let mut ll = -0.5 * x[0] * x[0] - 0.5 * (2.0 * PI).ln();
    for j in 1..=n {
        let s = 1.0 + g;
        let d = x[j] - drift(x[j - 1], theta, params);
        let e = d - xi_hat[j - 1];
        residuals.push(e / s.sqrt());
        ll -= 0.5 * (2.0 * PI * s).ln() + e * e / (2.0 * s);
        xi_hat[j] = a * xi_hat[j - 1] + a * g / s * e;
        g = a * a * g + 1.0 - a * a * g * g / s;
    }
    Ok(FilterRun {
        xi_hat,
        residuals,
        log_lik: ll,
    })
}
