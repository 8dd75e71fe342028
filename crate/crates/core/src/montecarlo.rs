//! Monte Carlo orchestration: finite-sample RMSE curves, the limit
//! experiment, their distributional comparison, and ergodicity diagnostics.
//!
//! Each trial draws from its own stream keyed by (experiment, n, trial), runs
//! on a rayon pool of the requested size, and results are folded in trial
//! order, so every summary is bit-identical for any worker count.

use std::io::Write;

use rayon::prelude::*;

use crate::csvio;
use crate::error::{Error, Result};
use crate::estimators::{
    bayes_estimate, build_profile, build_pseudo_profile, central_mle, EstimatorKind,
    LikelihoodProfile, Prior,
};
use crate::limit::{simulate_z, u_hat, u_tilde, LimitLaw};
use crate::model::{simulate_with_rng, SimOptions, TarParams};
use crate::rng::{self, tag};

/// Sample sizes used when none are given.
pub const DEFAULT_SAMPLE_SIZES: [usize; 5] = [250, 500, 1000, 2000, 4000];

/// Pairwise summation in a fixed recursion order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))
}

/// √(mean s²) and its delta-method standard error.
fn rmse_with_se(scaled: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = scaled.iter().map(|s| s * s).collect();
    let mse = mean(&sq);
    let rmse = mse.sqrt();
    let m = sq.len() as f64;
    if sq.len() < 2 || rmse == 0.0 {
        return (rmse, 0.0);
    }
    let dev: Vec<f64> = sq.iter().map(|v| (v - mse) * (v - mse)).collect();
    let var = pairwise_sum(&dev) / (m - 1.0);
    (rmse, var.sqrt() / m.sqrt() / (2.0 * rmse))
}

/// RMSE after clamping both tails at the given two-sided quantile level.
pub fn winsorized_rmse(samples: &[f64], level: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let tail = (1.0 - level) / 2.0;
    let lo_idx = ((m as f64 * tail).floor() as usize).min(m - 1);
    let hi_idx = m - 1 - lo_idx;
    let (lo, hi) = (sorted[lo_idx], sorted[hi_idx]);
    let sq: Vec<f64> = samples
        .iter()
        .map(|s| {
            let c = s.clamp(lo, hi);
            c * c
        })
        .collect();
    mean(&sq).sqrt()
}

/// Finite-sample experiment configuration.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub params: TarParams,
    pub prior: Prior,
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub kinds: Vec<EstimatorKind>,
    pub workers: usize,
}

impl McConfig {
    pub fn new(params: TarParams, trials: usize, master_seed: u64) -> Self {
        Self {
            params,
            prior: Prior::Uniform,
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            trials,
            master_seed,
            kinds: EstimatorKind::ALL.to_vec(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::param("trials", "need at least one trial"));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::param("n", "need at least one sample size"));
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return Err(Error::param(
                "n",
                format!("sample sizes must be >= 2, got {n}"),
            ));
        }
        if self.kinds.is_empty() {
            return Err(Error::param("estimator", "no estimators requested"));
        }
        if !self.params.is_identifiable() {
            return Err(Error::param(
                "rho_plus",
                "finite-sample estimation needs rho_plus != rho_minus and 0 outside Θ",
            ));
        }
        self.prior.validate_on(self.params.theta_space())
    }
}

/// One (n, estimator) row of the finite-sample summary.
#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub n: usize,
    pub kind: EstimatorKind,
    /// n·√(mean (θ̂ − θ₀)²).
    pub normalized_rmse: f64,
    pub std_err: f64,
    pub trials: usize,
    /// Trials whose estimate fell in the first or last interval of Θ.
    pub boundary_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub rows: Vec<McRow>,
}

impl McSummary {
    pub fn row(&self, n: usize, kind: EstimatorKind) -> Option<&McRow> {
        self.rows.iter().find(|r| r.n == n && r.kind == kind)
    }

    /// `n,estimator,normalized_rmse,std_err,trials`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "estimator", "normalized_rmse", "std_err", "trials"])?;
        for r in &self.rows {
            wtr.write_record([
                r.n.to_string(),
                r.kind.as_str().to_string(),
                csvio::fmt(r.normalized_rmse),
                csvio::fmt(r.std_err),
                r.trials.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `n,estimator,boundary_hits`.
    pub fn write_boundary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "estimator", "boundary_hits"])?;
        for r in &self.rows {
            wtr.write_record([
                r.n.to_string(),
                r.kind.as_str().to_string(),
                r.boundary_hits.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Scaled errors n(θ̂ − θ₀) in trial order for one (n, estimator).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledErrors {
    pub n: usize,
    pub kind: EstimatorKind,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMcResult {
    pub summary: McSummary,
    pub errors: Vec<ScaledErrors>,
}

impl FiniteMcResult {
    pub fn errors_for(&self, n: usize, kind: EstimatorKind) -> Option<&[f64]> {
        self.errors
            .iter()
            .find(|e| e.n == n && e.kind == kind)
            .map(|e| e.errors.as_slice())
    }

    /// `n,estimator,trial,scaled_error`.
    pub fn write_errors_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "estimator", "trial", "scaled_error"])?;
        for e in &self.errors {
            for (t, v) in e.errors.iter().enumerate() {
                wtr.write_record([
                    e.n.to_string(),
                    e.kind.as_str().to_string(),
                    t.to_string(),
                    csvio::fmt(*v),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn in_edge_interval(profile: &LikelihoodProfile, estimate: f64) -> bool {
    let bp = profile.breakpoints();
    let k = bp.len();
    estimate <= bp[1] || estimate > bp[k - 2]
}

/// (estimate, boundary hit) per requested kind for one trial.
fn finite_trial(config: &McConfig, n: usize, trial: usize) -> Result<Vec<(f64, bool)>> {
    let params = &config.params;
    let mut stream = rng::stream(config.master_seed, &[tag::FINITE, n as u64, trial as u64]);
    let path = simulate_with_rng(params, n, trial as u64, SimOptions::default(), &mut stream)?;
    let x = path.x();
    let needs_exact = config
        .kinds
        .iter()
        .any(|k| matches!(k, EstimatorKind::Bayes | EstimatorKind::CentralMle));
    let exact = needs_exact.then(|| build_profile(x, params)).transpose()?;
    let pseudo = config
        .kinds
        .contains(&EstimatorKind::PseudoMle)
        .then(|| build_pseudo_profile(x, params))
        .transpose()?;
    config
        .kinds
        .iter()
        .map(|kind| {
            let (profile, est) = match kind {
                EstimatorKind::Bayes => {
                    let p = exact.as_ref().expect("built");
                    (p, bayes_estimate(p, &config.prior)?.estimate)
                }
                EstimatorKind::CentralMle => {
                    let p = exact.as_ref().expect("built");
                    (p, central_mle(p).estimate)
                }
                EstimatorKind::PseudoMle => {
                    let p = pseudo.as_ref().expect("built");
                    (p, central_mle(p).estimate)
                }
            };
            Ok((est, in_edge_interval(profile, est)))
        })
        .collect()
}

/// Normalized RMSE of each estimator at each sample size.
pub fn run_finite_mc(config: &McConfig) -> Result<FiniteMcResult> {
    config.validate()?;
    let pool = pool(config.workers)?;
    let theta0 = config.params.theta();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &n in &config.sample_sizes {
        let trials: Vec<Vec<(f64, bool)>> = pool.install(|| {
            (0..config.trials)
                .into_par_iter()
                .map(|t| finite_trial(config, n, t))
                .collect::<Result<Vec<_>>>()
        })?;
        for (k, &kind) in config.kinds.iter().enumerate() {
            let scaled: Vec<f64> = trials
                .iter()
                .map(|t| n as f64 * (t[k].0 - theta0))
                .collect();
            let hits = trials.iter().filter(|t| t[k].1).count();
            let (rmse, se) = rmse_with_se(&scaled);
            rows.push(McRow {
                n,
                kind,
                normalized_rmse: rmse,
                std_err: se,
                trials: config.trials,
                boundary_hits: hits,
            });
            errors.push(ScaledErrors {
                n,
                kind,
                errors: scaled,
            });
        }
    }
    Ok(FiniteMcResult {
        summary: McSummary { rows },
        errors,
    })
}

/// Summary of m draws of (ũ, û).
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSummary {
    pub m: usize,
    pub rmse_u_tilde: f64,
    pub rmse_u_hat: f64,
    pub se_u_tilde: f64,
    pub se_u_hat: f64,
    pub winsorized_u_tilde: f64,
    pub winsorized_u_hat: f64,
    pub u_tilde: Vec<f64>,
    pub u_hat: Vec<f64>,
}

/// Two-sided quantile level for the winsorized diagnostic.
pub const WINSOR_LEVEL: f64 = 0.999;

impl LimitSummary {
    /// `m,rmse_u_tilde,rmse_u_hat`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["m", "rmse_u_tilde", "rmse_u_hat"])?;
        wtr.write_record([
            self.m.to_string(),
            csvio::fmt(self.rmse_u_tilde),
            csvio::fmt(self.rmse_u_hat),
        ])?;
        wtr.flush()?;
        Ok(())
    }

    /// `statistic,u_tilde,u_hat` with standard errors and winsorized RMSEs.
    pub fn write_detail_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["statistic", "u_tilde", "u_hat"])?;
        for (name, a, b) in [
            ("rmse", self.rmse_u_tilde, self.rmse_u_hat),
            ("std_err", self.se_u_tilde, self.se_u_hat),
            (
                "winsorized_rmse",
                self.winsorized_u_tilde,
                self.winsorized_u_hat,
            ),
        ] {
            wtr.write_record([name.to_string(), csvio::fmt(a), csvio::fmt(b)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `u_tilde,u_hat` raw draws.
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .u_tilde
            .iter()
            .zip(&self.u_hat)
            .map(|(a, b)| vec![*a, *b])
            .collect();
        csvio::write_table(w, &["u_tilde", "u_hat"], &rows)
    }
}

/// Seed of limit path `i` under `master_seed`.
pub fn limit_path_seed(master_seed: u64, i: usize) -> u64 {
    rng::derive_seed(master_seed, &[tag::LIMIT, i as u64])
}

pub fn run_limit_mc(
    law: &LimitLaw,
    m: usize,
    master_seed: u64,
    stop_depth: f64,
    workers: usize,
) -> Result<LimitSummary> {
    if m < 1 {
        return Err(Error::param("trials", "need at least one limit draw"));
    }
    let pool = pool(workers)?;
    let draws: Vec<(f64, f64)> = pool.install(|| {
        (0..m)
            .into_par_iter()
            .map(|i| {
                let path = simulate_z(law, limit_path_seed(master_seed, i), stop_depth)?;
                Ok((u_tilde(&path), u_hat(&path)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (ut, uh): (Vec<f64>, Vec<f64>) = draws.into_iter().unzip();
    if ut.iter().chain(&uh).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite limit draw".into()));
    }
    let (rt, st) = rmse_with_se(&ut);
    let (rh, sh) = rmse_with_se(&uh);
    Ok(LimitSummary {
        m,
        rmse_u_tilde: rt,
        rmse_u_hat: rh,
        se_u_tilde: st,
        se_u_hat: sh,
        winsorized_u_tilde: winsorized_rmse(&ut, WINSOR_LEVEL),
        winsorized_u_hat: winsorized_rmse(&uh, WINSOR_LEVEL),
        u_tilde: ut,
        u_hat: uh,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F₁ − F₂|.
pub fn ks_compare(first: &[f64], second: &[f64]) -> Result<f64> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::Input(
            "KS comparison needs two nonempty samples".into(),
        ));
    }
    if first.iter().chain(second).any(|v| v.is_nan()) {
        return Err(Error::Input("KS comparison got NaN".into()));
    }
    let mut a = first.to_vec();
    let mut b = second.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Empirical check of P(X_j ∈ [θ₀, θ₀ + v/n]) ≤ v/n at one j.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBoundRow {
    pub j: usize,
    pub frequency: f64,
    pub bound: f64,
    pub std_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBoundReport {
    pub n: usize,
    pub v: f64,
    pub trials: usize,
    pub rows: Vec<IntervalBoundRow>,
}

impl IntervalBoundReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "frequency", "bound", "std_err", "pass"])?;
        for r in &self.rows {
            wtr.write_record([
                r.j.to_string(),
                csvio::fmt(r.frequency),
                csvio::fmt(r.bound),
                csvio::fmt(r.std_err),
                r.pass.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "interval bound P(X_j in [theta0, theta0 + v/n]) <= v/n: n = {}, v = {}, trials = {}\n",
            self.n, self.v, self.trials
        );
        for r in &self.rows {
            s.push_str(&format!(
                "  j = {:>5}  freq = {:.6}  bound = {:.6}  +3se = {:.6}  {}\n",
                r.j,
                r.frequency,
                r.bound,
                r.bound + 3.0 * r.std_err,
                if r.pass { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

pub const DEFAULT_J_GRID: [usize; 10] = [0, 1, 2, 5, 10, 20, 50, 100, 200, 500];

pub fn diag_interval_bound(
    params: &TarParams,
    n: usize,
    v: f64,
    trials: usize,
    master_seed: u64,
    j_grid: &[usize],
    workers: usize,
) -> Result<IntervalBoundReport> {
    if n < 1 {
        return Err(Error::param("n", "need n >= 1"));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::param("v", "need v >= 0"));
    }
    if trials < 1 || j_grid.is_empty() {
        return Err(Error::param(
            "trials",
            "need trials >= 1 and a nonempty j grid",
        ));
    }
    let max_j = *j_grid.iter().max().expect("nonempty");
    let lo = params.theta();
    let hi = lo + v / n as f64;
    let pool = pool(workers)?;
    let hits: Vec<Vec<bool>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut stream = rng::stream(master_seed, &[tag::DIAG_BOUND, t as u64]);
                let path = simulate_with_rng(
                    params,
                    max_j.max(1),
                    t as u64,
                    SimOptions::default(),
                    &mut stream,
                )?;
                Ok(j_grid
                    .iter()
                    .map(|&j| {
                        let x = path.x()[j];
                        x >= lo && x <= hi
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let bound = v / n as f64;
    let se = (bound * (1.0 - bound).max(0.0) / trials as f64).sqrt();
    let rows = j_grid
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let count = hits.iter().filter(|h| h[k]).count();
            let frequency = count as f64 / trials as f64;
            IntervalBoundRow {
                j,
                frequency,
                bound,
                std_err: se,
                pass: frequency <= bound + 3.0 * se,
            }
        })
        .collect();
    Ok(IntervalBoundReport { n, v, trials, rows })
}

/// Bounded functional of the chain used by the mixing diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// sign(X_j − θ₀)
    SignAboveThreshold,
    /// 1{X_j ∈ Θ}
    InThetaSpace,
}

impl Functional {
    pub fn name(&self) -> &'static str {
        match self {
            Functional::SignAboveThreshold => "sign",
            Functional::InThetaSpace => "in_theta",
        }
    }

    fn apply(&self, x: f64, params: &TarParams) -> f64 {
        match self {
            Functional::SignAboveThreshold => {
                let d = x - params.theta();
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Functional::InThetaSpace => {
                if params.theta_space().contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingRow {
    pub lag: usize,
    pub autocov: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMixing {
    pub functional: Functional,
    pub rows: Vec<MixingRow>,
    /// Half-width of the sampling band around zero for a single autocovariance.
    pub noise_band: f64,
    /// exp(slope) of the least-squares fit of ln|cov| on lag, over lags
    /// whose covariance clears the noise band.
    pub rate: f64,
    /// Envelope C·r^lag fitted on the first half of the grid.
    pub envelope_scale: f64,
    pub envelope_rate: f64,
    pub envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub traj_len: usize,
    pub functionals: Vec<FunctionalMixing>,
}

impl MixingReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["functional", "lag", "autocov", "noise_band", "envelope"])?;
        for f in &self.functionals {
            for r in &f.rows {
                wtr.write_record([
                    f.functional.name().to_string(),
                    r.lag.to_string(),
                    csvio::fmt(r.autocov),
                    csvio::fmt(f.noise_band),
                    csvio::fmt(f.envelope_scale * f.envelope_rate.powi(r.lag as i32)),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "geometric mixing diagnostic: trajectory length {}\n",
            self.traj_len
        );
        for f in &self.functionals {
            s.push_str(&format!(
                "  {}: fitted rate {:.6}, envelope {:.4e}*{:.6}^lag, noise band {:.3e}, {}\n",
                f.functional.name(),
                f.rate,
                f.envelope_scale,
                f.envelope_rate,
                f.noise_band,
                if f.envelope_ok { "ok" } else { "FAIL" }
            ));
            for r in &f.rows {
                s.push_str(&format!(
                    "    lag {:>5}  autocov {:+.6e}\n",
                    r.lag, r.autocov
                ));
            }
        }
        s
    }
}

pub const DEFAULT_LAG_GRID: [usize; 10] = [0, 1, 2, 3, 5, 10, 20, 50, 100, 200];

/// Least-squares slope and intercept of ln|cov| on lag.
fn log_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn autocovariances(g: &[f64], max_lag: usize) -> Vec<f64> {
    let n = g.len();
    let mean = pairwise_sum(g) / n as f64;
    let c: Vec<f64> = g.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .into_par_iter()
        .map(|k| {
            let prods: Vec<f64> = (0..n - k).map(|t| c[t] * c[t + k]).collect();
            pairwise_sum(&prods) / n as f64
        })
        .collect()
}

fn analyse_functional(
    functional: Functional,
    x: &[f64],
    params: &TarParams,
    lag_grid: &[usize],
) -> FunctionalMixing {
    let g: Vec<f64> = x.iter().map(|&v| functional.apply(v, params)).collect();
    let max_lag = *lag_grid.iter().max().expect("nonempty");
    let acov = autocovariances(&g, max_lag);
    let var = acov[0];
    let n = g.len() as f64;
    // Bartlett: var(ρ̂_k) ≈ (1 + 2 Σ ρ_i²)/N; three such standard errors
    let bartlett = if var > 0.0 {
        1.0 + 2.0 * acov[1..].iter().map(|c| (c / var) * (c / var)).sum::<f64>()
    } else {
        1.0
    };
    let noise_band = 3.0 * var * (bartlett / n).sqrt();
    let rows: Vec<MixingRow> = lag_grid
        .iter()
        .map(|&lag| MixingRow {
            lag,
            autocov: acov[lag],
        })
        .collect();
    let signal = |rs: &[MixingRow]| -> Vec<(f64, f64)> {
        rs.iter()
            .filter(|r| r.autocov.abs() > noise_band)
            .map(|r| (r.lag as f64, r.autocov.abs().ln()))
            .collect()
    };
    let positive: Vec<MixingRow> = rows.iter().filter(|r| r.lag > 0).copied().collect();
    let rate = log_fit(&signal(&positive)).map_or(0.0, |(s, _)| s.exp());
    let half: Vec<MixingRow> = rows
        .iter()
        .filter(|r| r.lag > 0 && 2 * r.lag <= max_lag)
        .copied()
        .collect();
    let envelope_rate = log_fit(&signal(&half)).map_or(0.0, |(s, _)| s.exp().min(1.0));
    let envelope_scale = half
        .iter()
        .filter(|r| r.autocov.abs() > noise_band)
        .map(|r| r.autocov.abs() / envelope_rate.powi(r.lag as i32))
        .filter(|v| v.is_finite())
        .fold(var, f64::max);
    let envelope_ok = envelope_rate < 1.0
        && rows.iter().all(|r| {
            r.autocov.abs() <= envelope_scale * envelope_rate.powi(r.lag as i32) + noise_band
        });
    FunctionalMixing {
        functional,
        rows,
        noise_band,
        rate,
        envelope_scale,
        envelope_rate,
        envelope_ok,
    }
}

pub fn diag_mixing(
    params: &TarParams,
    lag_grid: &[usize],
    traj_len: usize,
    seed: u64,
) -> Result<MixingReport> {
    let max_lag = lag_grid
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::param("lags", "empty lag grid"))?;
    if traj_len < 10 * max_lag.max(1) {
        return Err(Error::param(
            "traj_len",
            format!("trajectory of {traj_len} is too short for lag {max_lag}"),
        ));
    }
    let mut stream = rng::stream(seed, &[tag::DIAG_MIX]);
    let path = simulate_with_rng(params, traj_len, seed, SimOptions::default(), &mut stream)?;
    let x = path.x();
    let functionals = [Functional::SignAboveThreshold, Functional::InThetaSpace]
        .into_iter()
        .map(|f| analyse_functional(f, x, params, lag_grid))
        .collect();
    Ok(MixingReport {
        traj_len,
        functionals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThetaSpace;

    #[test]
    fn ks_identical_is_zero() {
        let a = [0.3, -1.0, 2.0, 2.0, 5.0];
        assert_eq!(ks_compare(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ks_disjoint_is_one() {
        assert_eq!(ks_compare(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap(), 1.0);
        assert_eq!(ks_compare(&[4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn ks_brute_force_agreement() {
        // sup over all sample points of |F1 − F2|, computed directly
        let a = [0.1, 0.5, 0.5, 0.9, 1.3, 2.0];
        let b = [0.2, 0.5, 1.0, 1.0, 3.0];
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        let brute = a
            .iter()
            .chain(&b)
            .map(|&x| (cdf(&a, x) - cdf(&b, x)).abs())
            .fold(0.0, f64::max);
        assert!((ks_compare(&a, &b).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn ks_rejects_empty() {
        assert!(matches!(ks_compare(&[], &[1.0]), Err(Error::Input(_))));
        assert!(ks_compare(&[1.0], &[]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn winsorized_clamps_outlier() {
        let mut v = vec![1.0; 9999];
        v.push(1e6);
        assert!(winsorized_rmse(&v, 0.999) < 1.0 + 1e-12);
        assert!((winsorized_rmse(&[2.0, -2.0], 0.999) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_trial_rmse_is_absolute_error() {
        let p = TarParams::reference();
        let mut config = McConfig::new(p, 1, 99);
        config.sample_sizes = vec![300];
        let out = run_finite_mc(&config).unwrap();
        for kind in EstimatorKind::ALL {
            let row = out.summary.row(300, kind).unwrap();
            let err = out.errors_for(300, kind).unwrap();
            assert_eq!(err.len(), 1);
            assert_eq!(row.normalized_rmse, err[0].abs());
            assert_eq!(row.std_err, 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = McConfig::new(TarParams::reference(), 0, 1);
        assert!(c.validate().is_err());
        c.trials = 3;
        c.sample_sizes = vec![1];
        assert!(c.validate().is_err());
        c.sample_sizes = vec![10];
        assert!(c.validate().is_ok());
        let sym =
            TarParams::simulation_only(1.5, 0.3, 0.3, 0.0, ThetaSpace::new(1.0, 2.0).unwrap())
                .unwrap();
        assert!(McConfig::new(sym, 3, 1).validate().is_err());
    }

    #[test]
    fn interval_bound_v_zero_is_zero() {
        let p = TarParams::reference();
        let r = diag_interval_bound(&p, 100, 0.0, 500, 3, &[1, 5], 2).unwrap();
        assert!(r.rows.iter().all(|row| row.frequency == 0.0 && row.pass));
    }

    #[test]
    fn mixing_lag_zero_is_sample_variance() {
        let p = TarParams::reference();
        let r = diag_mixing(&p, &[0, 1, 5], 20_000, 8).unwrap();
        let mut stream = rng::stream(8, &[tag::DIAG_MIX]);
        let path = simulate_with_rng(&p, 20_000, 8, SimOptions::default(), &mut stream).unwrap();
        let g: Vec<f64> = path
            .x()
            .iter()
            .map(|&v| {
                if p.theta_space().contains(v) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let m = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / g.len() as f64;
        let f = &r.functionals[1];
        assert_eq!(f.functional, Functional::InThetaSpace);
        assert!((f.rows[0].autocov - var).abs() < 1e-12);
        assert!(diag_mixing(&p, &[0, 1000], 5000, 1).is_err());
        assert!(diag_mixing(&p, &[], 5000, 1).is_err());
    }

    #[test]
    fn limit_mc_is_reproducible() {
        let law = LimitLaw::new(2.3663, 0.0576).unwrap();
        let a = run_limit_mc(&law, 200, 5, 40.0, 1).unwrap();
        let b = run_limit_mc(&law, 200, 5, 40.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(run_limit_mc(&law, 0, 5, 40.0, 1).is_err());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let rows = csvio::read_table(&buf[..], &["m", "rmse_u_tilde", "rmse_u_hat"]).unwrap();
        assert_eq!(rows[0].values, vec![200.0, a.rmse_u_tilde, a.rmse_u_hat]);
    }
}
