//! Threshold estimators built on the piecewise-constant likelihood.
//!
//! As a function of θ, ln L_n(Xⁿ; θ) only changes when θ crosses one of the
//! conditioning values X_0..X_{n-1}. Between consecutive order statistics
//! inside Θ the likelihood is constant on the left-open interval
//! (X_(j-1), X_(j)], so one filter pass per interval recovers the whole
//! profile and the Bayes estimator has a closed form per interval.

use std::fmt;
use std::io::Write;

use crate::csvio;
use crate::error::{Error, Result};
use crate::filter::{log_likelihood, solve_gamma};
use crate::model::{drift, TarParams, ThetaSpace};

/// ln L_n on each interval between consecutive breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodProfile {
    breakpoints: Vec<f64>,
    log_values: Vec<f64>,
    filter_passes: usize,
}

impl LikelihoodProfile {
    /// Builds a profile from explicit parts; used for tests and external data.
    pub fn from_parts(breakpoints: Vec<f64>, log_values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Input(
                "profile needs at least two breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Input(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if log_values.len() != breakpoints.len() - 1 {
            return Err(Error::Input(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                log_values.len()
            )));
        }
        if log_values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN in profile".into()));
        }
        Ok(Self {
            breakpoints,
            log_values,
            filter_passes: 0,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn intervals(&self) -> usize {
        self.log_values.len()
    }

    /// Likelihood evaluations spent building the profile.
    pub fn filter_passes(&self) -> usize {
        self.filter_passes
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    /// Index of the interval (l, r] containing θ; the first interval is also
    /// closed on the left.
    pub fn locate(&self, theta: f64) -> Option<usize> {
        let bp = &self.breakpoints;
        if theta < bp[0] || theta > bp[bp.len() - 1] {
            return None;
        }
        let idx = bp.partition_point(|&b| b < theta);
        Some(idx.saturating_sub(1).min(self.intervals() - 1))
    }

    /// `left,right,log_lik`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.intervals())
            .map(|i| {
                let (l, r) = self.interval(i);
                vec![l, r, self.log_values[i]]
            })
            .collect();
        csvio::write_table(w, &["left", "right", "log_lik"], &rows)
    }
}

/// The sorted, deduplicated sample values X_0..X_{n-1} lying in Θ, framed by
/// the endpoints of Θ.
fn breakpoints(x: &[f64], space: ThetaSpace) -> Vec<f64> {
    let n = x.len() - 1;
    let mut bp: Vec<f64> = x[..n]
        .iter()
        .copied()
        .filter(|&v| space.contains(v))
        .collect();
    bp.sort_by(f64::total_cmp);
    bp.dedup();
    bp.insert(0, space.lo());
    bp.push(space.hi());
    bp
}

/// θ at which interval i is evaluated: its right endpoint, except for the
/// last interval whose right endpoint is the open boundary of Θ.
fn representative(bp: &[f64], i: usize) -> f64 {
    if i + 2 < bp.len() {
        bp[i + 1]
    } else {
        0.5 * (bp[i] + bp[i + 1])
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

fn build_with<F: Fn(f64) -> Result<f64>>(
    x: &[f64],
    space: ThetaSpace,
    eval: F,
) -> Result<LikelihoodProfile> {
    check_len(x)?;
    let bp = breakpoints(x, space);
    let k = bp.len() - 1;
    let mut values = Vec::with_capacity(k);
    for i in 0..k {
        values.push(eval(representative(&bp, i))?);
    }
    Ok(LikelihoodProfile {
        breakpoints: bp,
        log_values: values,
        filter_passes: k,
    })
}

/// Exact Kalman log-likelihood profile over Θ.
pub fn build_profile(x: &[f64], params: &TarParams) -> Result<LikelihoodProfile> {
    let ss = solve_gamma(params.a())?;
    build_with(x, params.theta_space(), |theta| {
        log_likelihood(x, theta, params, &ss)
    })
}

/// Variance 1 + 1/(1 − a²) assumed by the pseudo-likelihood.
pub fn pseudo_variance(a: f64) -> f64 {
    1.0 + 1.0 / (1.0 - a * a)
}

/// −(1/(2v)) Σ (X_j − f(X_{j-1}, θ))²: the likelihood of a model with
/// independent innovations of variance v, up to θ-free terms.
pub fn pseudo_log_likelihood(x: &[f64], theta: f64, params: &TarParams, v: f64) -> f64 {
    let mut s = 0.0;
    for j in 1..x.len() {
        let d = x[j] - drift(x[j - 1], theta, params);
        s += d * d;
    }
    -s / (2.0 * v)
}

/// Pseudo-likelihood profile with an explicit variance.
pub fn build_pseudo_profile_with_variance(
    x: &[f64],
    params: &TarParams,
    v: f64,
) -> Result<LikelihoodProfile> {
    if !(v > 0.0) {
        return Err(Error::param("v", "pseudo variance must be positive"));
    }
    build_with(x, params.theta_space(), |theta| {
        Ok(pseudo_log_likelihood(x, theta, params, v))
    })
}

pub fn build_pseudo_profile(x: &[f64], params: &TarParams) -> Result<LikelihoodProfile> {
    build_pseudo_profile_with_variance(x, params, pseudo_variance(params.a()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Bayes,
    CentralMle,
    PseudoMle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Bayes,
        EstimatorKind::CentralMle,
        EstimatorKind::PseudoMle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Bayes => "bayes",
            EstimatorKind::CentralMle => "central_mle",
            EstimatorKind::PseudoMle => "pseudo_mle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(EstimatorKind::Bayes),
            "central_mle" | "mle" => Ok(EstimatorKind::CentralMle),
            "pseudo_mle" | "pseudo" => Ok(EstimatorKind::PseudoMle),
            other => Err(Error::param(
                "estimator",
                format!("unknown estimator `{other}`"),
            )),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub kind: EstimatorKind,
    pub profile_size: usize,
}

/// `kind,estimate,profile_size`.
pub fn write_estimates_csv<W: Write>(w: W, results: &[EstimatorResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["kind", "estimate", "profile_size"])?;
    for r in results {
        wtr.write_record([
            r.kind.as_str().to_string(),
            csvio::fmt(r.estimate),
            r.profile_size.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Continuous positive density tabulated on a grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    grid: Vec<f64>,
    density: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::param(
                "prior",
                "tabulated prior needs at least two (theta, density) points",
            ));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param(
                "prior",
                "prior grid must be strictly increasing",
            ));
        }
        if density.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::param(
                "prior",
                "prior density must be finite and positive",
            ));
        }
        Ok(Self { grid, density })
    }

    /// Reads a `theta,density` CSV.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let rows = csvio::read_table(r, &["theta", "density"])?;
        let (grid, density) = rows.iter().map(|r| (r.values[0], r.values[1])).unzip();
        Self::new(grid, density)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let g = &self.grid;
        let i = g.partition_point(|&v| v <= t).clamp(1, g.len() - 1);
        let (x0, x1) = (g[i - 1], g[i]);
        let (y0, y1) = (self.density[i - 1], self.density[i]);
        y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    }

    fn covers(&self, space: ThetaSpace) -> bool {
        self.grid[0] <= space.lo() && self.grid[self.grid.len() - 1] >= space.hi()
    }
}

/// Prior density on Θ (not necessarily normalized).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Prior {
    #[default]
    Uniform,
    Tabulated(TabulatedDensity),
}

const PRIOR_QUAD_TOL: f64 = 1e-10;

impl Prior {
    /// Checks the prior is defined over all of Θ.
    pub fn validate_on(&self, space: ThetaSpace) -> Result<()> {
        match self {
            Prior::Uniform => Ok(()),
            Prior::Tabulated(t) if t.covers(space) => Ok(()),
            Prior::Tabulated(_) => Err(Error::param("prior", "tabulated prior must cover Θ")),
        }
    }

    /// (mass, first moment) of the prior over [l, r].
    pub fn moments(&self, l: f64, r: f64) -> (f64, f64) {
        match self {
            Prior::Uniform => {
                let w = r - l;
                (w, w * 0.5 * (l + r))
            }
            Prior::Tabulated(t) => (
                adaptive_simpson(&|s| t.eval(s), l, r, PRIOR_QUAD_TOL),
                adaptive_simpson(&|s| s * t.eval(s), l, r, PRIOR_QUAD_TOL),
            ),
        }
    }
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Posterior mean of θ under `prior`, with the per-interval integrals in
/// closed form (uniform) or by quadrature, and max-subtracted weights.
pub fn bayes_estimate(profile: &LikelihoodProfile, prior: &Prior) -> Result<EstimatorResult> {
    let max = profile
        .log_values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..profile.intervals() {
        let (l, r) = profile.interval(i);
        let (mass, moment) = prior.moments(l, r);
        let w = (profile.log_values[i] - max).exp();
        num += w * moment;
        den += w * mass;
    }
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::Numeric(format!("posterior normalizer is {den}")));
    }
    Ok(EstimatorResult {
        estimate: num / den,
        kind: EstimatorKind::Bayes,
        profile_size: profile.intervals(),
    })
}

/// Index of the maximal interval, first (smallest midpoint) on ties.
fn argmax_interval(profile: &LikelihoodProfile) -> usize {
    let mut best = 0;
    for (i, &v) in profile.log_values.iter().enumerate().skip(1) {
        if v > profile.log_values[best] {
            best = i;
        }
    }
    best
}

/// Midpoint of the interval maximizing the profile.
pub fn central_mle(profile: &LikelihoodProfile) -> EstimatorResult {
    let (l, r) = profile.interval(argmax_interval(profile));
    EstimatorResult {
        estimate: 0.5 * (l + r),
        kind: EstimatorKind::CentralMle,
        profile_size: profile.intervals(),
    }
}

/// Central maximizer of the pseudo-likelihood that ignores the colored noise.
pub fn pseudo_mle(x: &[f64], params: &TarParams) -> Result<EstimatorResult> {
    let profile = build_pseudo_profile(x, params)?;
    Ok(EstimatorResult {
        kind: EstimatorKind::PseudoMle,
        ..central_mle(&profile)
    })
}

/// Builds what `kinds` needs and returns the estimates in the order given.
pub fn estimate(
    x: &[f64],
    params: &TarParams,
    prior: &Prior,
    kinds: &[EstimatorKind],
) -> Result<Vec<EstimatorResult>> {
    let needs_exact = kinds
        .iter()
        .any(|k| matches!(k, EstimatorKind::Bayes | EstimatorKind::CentralMle));
    let profile = if needs_exact {
        Some(build_profile(x, params)?)
    } else {
        None
    };
    kinds
        .iter()
        .map(|k| match k {
            EstimatorKind::Bayes => bayes_estimate(profile.as_ref().expect("built"), prior),
            EstimatorKind::CentralMle => Ok(central_mle(profile.as_ref().expect("built"))),
            EstimatorKind::PseudoMle => pseudo_mle(x, params),
        })
        .collect()
}
