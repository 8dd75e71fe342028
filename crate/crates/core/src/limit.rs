//! Limit experiment for the scaled threshold error n(θ − θ₀).
//!
//! The likelihood ratio converges to Z(u) with
//!
//! ```text
//! ln Z(u) = Σ_{j ≤ Π⁺(u)}  (β ε⁺_j − β²/2)   u ≥ 0
//! ln Z(u) = Σ_{j ≤ Π⁻(|u|)} (β ε⁻_j − β²/2)   u < 0
//! ```
//!
//! where Π± are independent Poisson processes of rate ϖ (the stationary
//! density of X at θ₀) and ε± are standard normal marks. ũ is the posterior
//! mean of u under Z, û the midpoint of the highest segment.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::csvio;
use crate::error::{Error, Result};
use crate::filter::SteadyState;
use crate::model::{simulate_with_rng, SimOptions, TarParams};
use crate::rng::{self, tag};

/// θ₀²(ρ⁺−ρ⁻)² (1+γ³) / ((1+γ)(1+γ²)).
pub fn beta_squared(params: &TarParams, ss: &SteadyState) -> f64 {
    let g = ss.gamma;
    let jump = params.theta() * (params.rho_plus() - params.rho_minus());
    jump * jump * (1.0 + g * g * g) / ((1.0 + g) * (1.0 + g * g))
}

/// (θ₀(ρ⁺−ρ⁻)/√(1+γ))² (1 + c² Σ_{j≥0} b^{2j}), summed term by term.
///
/// The filter error after a threshold crossing decays geometrically at rate
/// b; each term is the squared contribution of one later innovation.
pub fn beta_squared_series(params: &TarParams, ss: &SteadyState) -> f64 {
    let lead = params.theta() * (params.rho_plus() - params.rho_minus());
    let lead = lead * lead / (1.0 + ss.gamma);
    let b2 = ss.b * ss.b;
    let mut sum = 0.0f64;
    let mut term = 1.0;
    while term > f64::EPSILON * 1e-3 * sum.max(1.0) {
        sum += term;
        term *= b2;
    }
    lead * (1.0 + ss.c * ss.c * sum)
}

/// Jump scale β² and Poisson intensity ϖ of the limit experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitLaw {
    beta2: f64,
    varpi: f64,
}

impl LimitLaw {
    pub fn new(beta2: f64, varpi: f64) -> Result<Self> {
        if !(beta2 > 0.0 && beta2.is_finite()) {
            return Err(Error::param(
                "beta2",
                format!("must be positive, got {beta2}"),
            ));
        }
        if !(varpi > 0.0 && varpi.is_finite()) {
            return Err(Error::param(
                "varpi",
                format!("must be positive, got {varpi}"),
            ));
        }
        Ok(Self { beta2, varpi })
    }

    /// β² from the model parameters with a supplied intensity.
    pub fn from_params(params: &TarParams, ss: &SteadyState, varpi: f64) -> Result<Self> {
        Self::new(beta_squared(params, ss), varpi)
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn beta(&self) -> f64 {
        self.beta2.sqrt()
    }

    pub fn varpi(&self) -> f64 {
        self.varpi
    }
}

/// Kernel estimate of the stationary marginal density of X.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub sample_size: usize,
}

impl DensityEstimate {
    pub fn trapezoid_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
            .sum()
    }

    /// `x,density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .grid
            .iter()
            .zip(&self.values)
            .map(|(x, d)| vec![*x, *d])
            .collect();
        csvio::write_table(w, &["x", "density"], &rows)
    }
}

/// Silverman's rule of thumb 1.06 σ̂ m^{-1/5}.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    let m = data.len() as f64;
    let mean = data.iter().sum::<f64>() / m;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    1.06 * var.sqrt() * m.powf(-0.2)
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Kernel support used on the grid; exp(−KDE_CUTOFF²/2) is below 1e-17.
const KDE_CUTOFF: f64 = 9.0;
pub const DENSITY_GRID_POINTS: usize = 1024;

/// Gaussian KDE at one point, summing over all observations.
pub fn kde_at(data: &[f64], bandwidth: f64, x: f64) -> f64 {
    let s: f64 = data
        .iter()
        .map(|&v| {
            let z = (x - v) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum();
    s * INV_SQRT_2PI / (data.len() as f64 * bandwidth)
}

/// Gaussian KDE on a uniform grid over [min − 3h, max + 3h].
pub fn kde_grid(data: &[f64], bandwidth: f64, points: usize) -> DensityEstimate {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0] - 3.0 * bandwidth;
    let hi = sorted[sorted.len() - 1] + 3.0 * bandwidth;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = INV_SQRT_2PI / (sorted.len() as f64 * bandwidth);
    let reach = KDE_CUTOFF * bandwidth;
    let mut grid = Vec::with_capacity(points);
    let mut values = Vec::with_capacity(points);
    for i in 0..points {
        let x = lo + step * i as f64;
        let start = sorted.partition_point(|&v| v < x - reach);
        let end = sorted.partition_point(|&v| v <= x + reach);
        let s: f64 = sorted[start..end]
            .iter()
            .map(|&v| {
                let z = (x - v) / bandwidth;
                (-0.5 * z * z).exp()
            })
            .sum();
        grid.push(x);
        values.push(s * norm);
    }
    DensityEstimate {
        grid,
        values,
        bandwidth,
        sample_size: sorted.len(),
    }
}

pub const MIN_VARPI_TRAJ_LEN: usize = 100_000;
pub const MIN_VARPI_BURN_IN: usize = 1_000;

/// ϖ = stationary density of X at θ₀, estimated from one long trajectory.
pub fn estimate_varpi(
    params: &TarParams,
    traj_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(f64, DensityEstimate)> {
    if traj_len < MIN_VARPI_TRAJ_LEN {
        return Err(Error::Input(format!(
            "traj_len must be at least {MIN_VARPI_TRAJ_LEN}, got {traj_len}"
        )));
    }
    if burn_in < MIN_VARPI_BURN_IN {
        return Err(Error::Input(format!(
            "burn_in must be at least {MIN_VARPI_BURN_IN}, got {burn_in}"
        )));
    }
    let mut stream = rng::stream(seed, &[tag::VARPI]);
    let path = simulate_with_rng(
        params,
        traj_len,
        seed,
        SimOptions {
            keep_noise: false,
            burn_in,
        },
        &mut stream,
    )?;
    let x = path.into_x();
    let h = silverman_bandwidth(&x);
    let varpi = kde_at(&x, h, params.theta());
    Ok((varpi, kde_grid(&x, h, DENSITY_GRID_POINTS)))
}

/// One side of Z: jump times on (0, ∞) with their log-increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSide {
    jump_times: Vec<f64>,
    log_increments: Vec<f64>,
    truncation_u: f64,
}

impl ZSide {
    pub fn new(jump_times: Vec<f64>, log_increments: Vec<f64>, truncation_u: f64) -> Result<Self> {
        if jump_times.len() != log_increments.len() {
            return Err(Error::Input(
                "jump times and increments differ in length".into(),
            ));
        }
        if jump_times.first().is_some_and(|&t| !(t > 0.0)) {
            return Err(Error::Input("jump times must be positive".into()));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Input(
                "jump times must be strictly increasing".into(),
            ));
        }
        if !(truncation_u > 0.0) || jump_times.last().is_some_and(|&t| t > truncation_u) {
            return Err(Error::Input(
                "truncation must be positive and not precede the last jump".into(),
            ));
        }
        Ok(Self {
            jump_times,
            log_increments,
            truncation_u,
        })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn log_increments(&self) -> &[f64] {
        &self.log_increments
    }

    pub fn truncation_u(&self) -> f64 {
        self.truncation_u
    }

    /// Constant segments `(start, end, ln Z)` covering [0, truncation_u),
    /// zero-width ones dropped.
    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let k = self.jump_times.len();
        let mut level = 0.0;
        (0..=k).filter_map(move |i| {
            let start = if i == 0 { 0.0 } else { self.jump_times[i - 1] };
            let end = if i < k {
                self.jump_times[i]
            } else {
                self.truncation_u
            };
            if i > 0 {
                level += self.log_increments[i - 1];
            }
            (end > start).then_some((start, end, level))
        })
    }

    fn first_jump_or_end(&self) -> f64 {
        self.jump_times
            .first()
            .copied()
            .unwrap_or(self.truncation_u)
    }

    /// ln Z at distance `u ≥ 0` from the origin, `None` past truncation.
    fn log_z(&self, u: f64) -> Option<f64> {
        if u > self.truncation_u {
            return None;
        }
        let jumps = self.jump_times.partition_point(|&t| t <= u);
        Some(self.log_increments[..jumps].iter().sum())
    }
}

/// One realization of the two-sided process, each side simulated until it
/// has fallen `stop_depth` below its running maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ZPath {
    pub pos: ZSide,
    pub neg: ZSide,
}

impl ZPath {
    /// ln Z(u), `None` outside the simulated range.
    pub fn log_z(&self, u: f64) -> Option<f64> {
        if u >= 0.0 {
            self.pos.log_z(u)
        } else {
            self.neg.log_z(-u)
        }
    }

    /// Same path with the sides exchanged, i.e. u ↦ −u.
    pub fn mirrored(&self) -> ZPath {
        ZPath {
            pos: self.neg.clone(),
            neg: self.pos.clone(),
        }
    }

    /// `side,jump_time,log_increment`; `pos_end`/`neg_end` rows carry the
    /// truncation point with an empty increment.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["side", "jump_time", "log_increment"])?;
        for (name, side) in [("pos", &self.pos), ("neg", &self.neg)] {
            for (t, l) in side.jump_times.iter().zip(&side.log_increments) {
                wtr.write_record([name.to_string(), csvio::fmt(*t), csvio::fmt(*l)])?;
            }
            wtr.write_record([
                format!("{name}_end"),
                csvio::fmt(side.truncation_u),
                String::new(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["side", "jump_time", "log_increment"] {
            return Err(Error::Parse {
                line: 1,
                reason: "expected header `side,jump_time,log_increment`".into(),
            });
        }
        let mut parts: [(Vec<f64>, Vec<f64>, Option<f64>); 2] = Default::default();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    reason: format!("`{s}` is not a number"),
                })
            };
            let (idx, end) = match &rec[0] {
                "pos" => (0, false),
                "neg" => (1, false),
                "pos_end" => (0, true),
                "neg_end" => (1, true),
                other => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("unknown side `{other}`"),
                    })
                }
            };
            if end {
                parts[idx].2 = Some(num(&rec[1])?);
            } else {
                parts[idx].0.push(num(&rec[1])?);
                parts[idx].1.push(num(&rec[2])?);
            }
        }
        let [p, n] = parts;
        let missing = || Error::Input("missing truncation row".into());
        Ok(ZPath {
            pos: ZSide::new(p.0, p.1, p.2.ok_or_else(missing)?)?,
            neg: ZSide::new(n.0, n.1, n.2.ok_or_else(missing)?)?,
        })
    }
}

pub const DEFAULT_STOP_DEPTH: f64 = 40.0;
pub const MIN_STOP_DEPTH: f64 = 20.0;

fn simulate_side(law: &LimitLaw, seed: u64, side_tag: u64, stop_depth: f64) -> ZSide {
    let mut rng = rng::stream(seed, &[tag::LIMIT, side_tag]);
    let beta = law.beta();
    let drift = -0.5 * law.beta2;
    let mut t = 0.0;
    let mut level = 0.0;
    let mut peak = 0.0f64;
    let mut times = Vec::new();
    let mut incs = Vec::new();
    loop {
        let gap: f64 = rng.sample(Exp1);
        let g: f64 = rng.sample(StandardNormal);
        t += gap / law.varpi;
        let inc = beta * g + drift;
        level += inc;
        times.push(t);
        incs.push(inc);
        peak = peak.max(level);
        if level <= peak - stop_depth {
            break;
        }
    }
    ZSide {
        jump_times: times,
        log_increments: incs,
        truncation_u: t,
    }
}

/// Simulates both sides of Z from independent sub-streams of `seed`.
pub fn simulate_z(law: &LimitLaw, seed: u64, stop_depth: f64) -> Result<ZPath> {
    if !(stop_depth >= MIN_STOP_DEPTH) {
        return Err(Error::param(
            "stop_depth",
            format!("must be at least {MIN_STOP_DEPTH}, got {stop_depth}"),
        ));
    }
    Ok(ZPath {
        pos: simulate_side(law, seed, tag::LIMIT_POS, stop_depth),
        neg: simulate_side(law, seed, tag::LIMIT_NEG, stop_depth),
    })
}

/// ũ = ∫ u Z(u) du / ∫ Z(u) du, integrated exactly segment by segment.
pub fn u_tilde(path: &ZPath) -> f64 {
    let peak = path
        .pos
        .segments()
        .chain(path.neg.segments())
        .map(|s| s.2)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut first = 0.0;
    let mut mass = 0.0;
    for (sign, side) in [(1.0, &path.pos), (-1.0, &path.neg)] {
        for (start, end, level) in side.segments() {
            let z = (level - peak).exp();
            let width = end - start;
            mass += z * width;
            first += sign * z * width * 0.5 * (start + end);
        }
    }
    first / mass
}

/// Midpoint of the highest segment of Z; the segment around the origin
/// (ln Z = 0) is one segment spanning both sides. Ties go to the smallest
/// |midpoint|.
pub fn u_hat(path: &ZPath) -> f64 {
    let right = path.pos.first_jump_or_end();
    let left = path.neg.first_jump_or_end();
    let mut best_level = 0.0;
    let mut best_mid = 0.5 * (right - left);
    for (sign, side) in [(1.0, &path.pos), (-1.0, &path.neg)] {
        for (start, end, level) in side.segments().skip(1) {
            let mid = sign * 0.5 * (start + end);
            if level > best_level || (level == best_level && mid.abs() < best_mid.abs()) {
                best_level = level;
                best_mid = mid;
            }
        }
    }
    best_mid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::solve_gamma;
    use crate::model::ThetaSpace;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn beta_squared_white_noise() {
        let p = TarParams::new(1.5, 0.9, -0.5, 0.0, ThetaSpace::new(1.0, 2.0).unwrap()).unwrap();
        let ss = solve_gamma(0.0).unwrap();
        let expected = 1.5f64.powi(2) * 1.4f64.powi(2) / 2.0;
        assert!(rel(beta_squared(&p, &ss), expected) < 1e-14);
        assert!(rel(beta_squared_series(&p, &ss), expected) < 1e-14);
    }

    #[test]
    fn beta_squared_reference() {
        let p = TarParams::reference();
        let ss = solve_gamma(p.a()).unwrap();
        let b2 = beta_squared(&p, &ss);
        assert!((b2 - 2.3663).abs() < 1e-3, "{b2}");
        assert!(rel(b2, beta_squared_series(&p, &ss)) < 1e-12);
    }

    #[test]
    fn law_validation() {
        assert!(LimitLaw::new(0.0, 1.0).is_err());
        assert!(LimitLaw::new(1.0, 0.0).is_err());
        assert!(LimitLaw::new(1.0, f64::NAN).is_err());
        assert!(LimitLaw::new(2.0, 0.05).is_ok());
    }

    #[test]
    fn kde_of_gaussian_sample() {
        // N(0,1) sample via a deterministic quantile grid
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (1..20_000)
            .map(|i| n.inverse_cdf(i as f64 / 20_000.0))
            .collect();
        let h = silverman_bandwidth(&data);
        let d0 = kde_at(&data, h, 0.0);
        // smoothing by h gives N(0, 1 + h²) at 0
        let expected = INV_SQRT_2PI / (1.0 + h * h).sqrt();
        assert!(rel(d0, expected) < 1e-3, "{d0} vs {expected}");
        let est = kde_grid(&data, h, 512);
        let mass = est.trapezoid_mass();
        assert!(mass > 0.97 && mass <= 1.0 + 1e-9, "{mass}");
        assert!(est.values.iter().all(|v| *v >= 0.0));
        let mid = est.grid.partition_point(|&x| x < 0.0);
        let direct = kde_at(&data, h, est.grid[mid]);
        assert!(rel(est.values[mid], direct) < 1e-12);
    }

    #[test]
    fn varpi_rejects_short_runs() {
        let p = TarParams::reference();
        assert!(matches!(
            estimate_varpi(&p, 1000, 1000, 1),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            estimate_varpi(&p, 100_000, 10, 1),
            Err(Error::Input(_))
        ));
    }

    fn side(times: &[f64], incs: &[f64], trunc: f64) -> ZSide {
        ZSide::new(times.to_vec(), incs.to_vec(), trunc).unwrap()
    }

    #[test]
    fn no_jumps_is_symmetric() {
        let p = ZPath {
            pos: side(&[], &[], 50.0),
            neg: side(&[], &[], 50.0),
        };
        assert_eq!(u_tilde(&p), 0.0);
        assert_eq!(u_hat(&p), 0.0);
    }

    #[test]
    fn single_jump_against_riemann_sum() {
        let (t1, g, trunc) = (3.0, 0.7, 10.0);
        let p = ZPath {
            pos: side(&[t1], &[g], trunc),
            neg: side(&[], &[], trunc),
        };
        let ez = g.exp();
        let hand = (ez * (trunc * trunc - t1 * t1) / 2.0 + t1 * t1 / 2.0 - trunc * trunc / 2.0)
            / (2.0 * trunc + (ez - 1.0) * (trunc - t1));
        // midpoint rule on 1e6 cells over [−trunc, trunc]
        let cells = 1_000_000;
        let du = 2.0 * trunc / cells as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..cells {
            let u = -trunc + (i as f64 + 0.5) * du;
            let z = p.log_z(u).unwrap().exp();
            num += u * z * du;
            den += z * du;
        }
        let ut = u_tilde(&p);
        assert!(rel(ut, hand) < 1e-12);
        assert!(rel(ut, num / den) < 1e-6, "{ut} vs {}", num / den);
        assert!((u_hat(&p) - 6.5).abs() < 1e-12);
    }

    #[test]
    fn u_hat_prefers_origin_when_all_jumps_down() {
        let p = ZPath {
            pos: side(&[2.0, 5.0], &[-0.5, -1.0], 5.0),
            neg: side(&[1.0, 4.0], &[-0.2, -3.0], 4.0),
        };
        assert!((u_hat(&p) - 0.5).abs() < 1e-15);
        assert!((u_hat(&p.mirrored()) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn mirror_negates_estimators() {
        let law = LimitLaw::new(2.3663, 0.0576).unwrap();
        for seed in 0..50 {
            let p = simulate_z(&law, seed, DEFAULT_STOP_DEPTH).unwrap();
            let m = p.mirrored();
            assert_eq!(u_hat(&m), -u_hat(&p));
            assert!((u_tilde(&m) + u_tilde(&p)).abs() <= 1e-9 * u_tilde(&p).abs().max(1.0));
        }
    }

    #[test]
    fn log_z_is_right_continuous_step() {
        let p = ZPath {
            pos: side(&[2.0], &[0.5], 5.0),
            neg: side(&[1.0], &[-0.3], 4.0),
        };
        assert_eq!(p.log_z(0.0), Some(0.0));
        assert_eq!(p.log_z(1.999), Some(0.0));
        assert_eq!(p.log_z(2.0), Some(0.5));
        assert_eq!(p.log_z(-0.999), Some(0.0));
        assert_eq!(p.log_z(-1.0), Some(-0.3));
        assert_eq!(p.log_z(-4.5), None);
        assert_eq!(p.log_z(6.0), None);
    }

    #[test]
    fn simulated_paths_terminate_and_have_valid_form() {
        let law = LimitLaw::new(2.3663, 0.0576).unwrap();
        let p = simulate_z(&law, 9, DEFAULT_STOP_DEPTH).unwrap();
        for side in [&p.pos, &p.neg] {
            assert!(!side.jump_times().is_empty());
            assert_eq!(side.truncation_u(), *side.jump_times().last().unwrap());
            let mut level = 0.0;
            let mut peak = 0.0f64;
            for &inc in side.log_increments() {
                level += inc;
                peak = peak.max(level);
            }
            assert!(level <= peak - DEFAULT_STOP_DEPTH);
        }
        assert!(u_tilde(&p).is_finite());
        assert!(u_hat(&p).is_finite());
        assert_eq!(p, simulate_z(&law, 9, DEFAULT_STOP_DEPTH).unwrap());
        assert!(simulate_z(&law, 9, 10.0).is_err());
    }

    #[test]
    fn zpath_csv_round_trip() {
        let law = LimitLaw::new(2.3663, 0.0576).unwrap();
        let p = simulate_z(&law, 4, DEFAULT_STOP_DEPTH).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(ZPath::read_csv(&buf[..]).unwrap(), p);
        assert!(ZPath::read_csv("side,jump_time,log_increment\nup,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn zside_validation() {
        assert!(ZSide::new(vec![2.0, 1.0], vec![0.0, 0.0], 3.0).is_err());
        assert!(ZSide::new(vec![0.0], vec![0.0], 3.0).is_err());
        assert!(ZSide::new(vec![1.0], vec![0.0], 0.5).is_err());
        assert!(ZSide::new(vec![1.0], vec![], 3.0).is_err());
    }

    #[test]
    fn density_csv_layout() {
        let est = DensityEstimate {
            grid: vec![0.0, 1.0],
            values: vec![0.5, 0.25],
            bandwidth: 0.1,
            sample_size: 2,
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let rows = csvio::read_table(&buf[..], &["x", "density"]).unwrap();
        assert_eq!(rows[1].values, vec![1.0, 0.25]);
    }
}
