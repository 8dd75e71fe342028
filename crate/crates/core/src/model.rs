//! TAR(1) process driven by white noise plus a hidden AR(1) colored noise.
//!
//! ```text
//! X_j  = f(X_{j-1}, θ) + ξ_{j-1} + ε_j
//! ξ_j  = a ξ_{j-1} + ζ_j
//! f(x, θ) = (ρ⁺ 1{x ≥ θ} + ρ⁻ 1{x < θ}) x
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::csvio;
use crate::error::{Error, Result};
use crate::filter::solve_gamma;
use crate::rng::{self, StreamRng};

/// Open, bounded parameter set Θ = (lo, hi) for the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSpace {
    lo: f64,
    hi: f64,
}

impl ThetaSpace {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::param("theta_space", "bounds must be finite"));
        }
        if lo >= hi {
            return Err(Error::param(
                "theta_space",
                format!("need theta_lo < theta_hi, got ({lo}, {hi})"),
            ));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Strict membership in the open interval.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// Model parameters (θ, ρ⁺, ρ⁻, a) with the threshold space Θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TarParams {
    theta: f64,
    rho_plus: f64,
    rho_minus: f64,
    a: f64,
    theta_space: ThetaSpace,
}

impl TarParams {
    /// Fully validated parameters, suitable for threshold estimation.
    ///
    /// Besides stability (|ρ±| < 1, |a| < 1) this requires ρ⁺ ≠ ρ⁻ and 0 ∉ Θ,
    /// without which the threshold is not identifiable.
    pub fn new(
        theta: f64,
        rho_plus: f64,
        rho_minus: f64,
        a: f64,
        theta_space: ThetaSpace,
    ) -> Result<Self> {
        let p = Self::simulation_only(theta, rho_plus, rho_minus, a, theta_space)?;
        if rho_plus == rho_minus {
            return Err(Error::param(
                "rho_plus",
                "rho_plus must differ from rho_minus",
            ));
        }
        if theta_space.lo <= 0.0 && theta_space.hi >= 0.0 {
            return Err(Error::param(
                "theta_space",
                format!(
                    "0 must lie outside ({}, {})",
                    theta_space.lo, theta_space.hi
                ),
            ));
        }
        Ok(p)
    }

    /// Parameters that only need to drive the simulator: stability and a
    /// threshold inside Θ, but ρ⁺ = ρ⁻ and 0 ∈ Θ are allowed.
    pub fn simulation_only(
        theta: f64,
        rho_plus: f64,
        rho_minus: f64,
        a: f64,
        theta_space: ThetaSpace,
    ) -> Result<Self> {
        for (field, v) in [("rho_plus", rho_plus), ("rho_minus", rho_minus), ("a", a)] {
            if !(v.abs() < 1.0) {
                return Err(Error::param(
                    field,
                    format!("|{field}| must be < 1, got {v}"),
                ));
            }
        }
        if !theta_space.contains(theta) {
            return Err(Error::param(
                "theta",
                format!(
                    "theta = {theta} must lie in ({}, {})",
                    theta_space.lo, theta_space.hi
                ),
            ));
        }
        Ok(Self {
            theta,
            rho_plus,
            rho_minus,
            a,
            theta_space,
        })
    }

    /// θ₀ = 1.5, ρ⁺ = 0.9, ρ⁻ = −0.5, a = 0.9 on Θ = (1, 2).
    pub fn reference() -> Self {
        Self::new(1.5, 0.9, -0.5, 0.9, ThetaSpace { lo: 1.0, hi: 2.0 }).expect("valid")
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rho_plus(&self) -> f64 {
        self.rho_plus
    }

    pub fn rho_minus(&self) -> f64 {
        self.rho_minus
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn theta_space(&self) -> ThetaSpace {
        self.theta_space
    }

    pub fn is_identifiable(&self) -> bool {
        self.rho_plus != self.rho_minus
            && !(self.theta_space.lo <= 0.0 && self.theta_space.hi >= 0.0)
    }

    /// Same coefficients with a different true threshold.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::simulation_only(
            theta,
            self.rho_plus,
            self.rho_minus,
            self.a,
            self.theta_space,
        )
    }

    #[inline]
    pub fn drift(&self, x: f64, theta: f64) -> f64 {
        drift(x, theta, self)
    }
}

/// f(x, θ) = (ρ⁺ 1{x ≥ θ} + ρ⁻ 1{x < θ}) x. The upper branch is taken at x = θ.
#[inline]
pub fn drift(x: f64, theta: f64, params: &TarParams) -> f64 {
    if x >= theta {
        params.rho_plus * x
    } else {
        params.rho_minus * x
    }
}

/// Driving noises ε_j, ζ_j for j = 1..n.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub eps: Vec<f64>,
    pub zeta: Vec<f64>,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    x: Vec<f64>,
    xi: Vec<f64>,
    seed: u64,
    noise: Option<NoiseRecord>,
}

impl PathSample {
    pub fn new(x: Vec<f64>, xi: Vec<f64>, seed: u64) -> Result<Self> {
        if x.is_empty() || x.len() != xi.len() {
            return Err(Error::Input(format!(
                "x and xi must have equal nonzero length, got {} and {}",
                x.len(),
                xi.len()
            )));
        }
        Ok(Self {
            x,
            xi,
            seed,
            noise: None,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise(&self) -> Option<&NoiseRecord> {
        self.noise.as_ref()
    }

    /// Number of transitions n (the path holds n + 1 points).
    pub fn n(&self) -> usize {
        self.x.len() - 1
    }

    pub fn into_x(self) -> Vec<f64> {
        self.x
    }

    /// Recomputes the path from (X_0, ξ_0) and the stored noises.
    pub fn replay(&self, params: &TarParams) -> Result<PathSample> {
        let noise = self
            .noise
            .as_ref()
            .ok_or_else(|| Error::Input("path was simulated without keep_noise".into()))?;
        replay(self.x[0], self.xi[0], noise, params, self.seed)
    }

    /// Writes `j,x,xi` rows at full double precision.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "x", "xi"])?;
        for (j, (x, xi)) in self.x.iter().zip(&self.xi).enumerate() {
            wtr.write_record([j.to_string(), csvio::fmt(*x), csvio::fmt(*xi)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `j,eps,zeta` for j = 1..n; fails when no noise was kept.
    pub fn write_noise_csv<W: Write>(&self, w: W) -> Result<()> {
        let noise = self
            .noise
            .as_ref()
            .ok_or_else(|| Error::Input("path was simulated without keep_noise".into()))?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "eps", "zeta"])?;
        for (j, (e, z)) in noise.eps.iter().zip(&noise.zeta).enumerate() {
            wtr.write_record([(j + 1).to_string(), csvio::fmt(*e), csvio::fmt(*z)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses a `j,x,xi` file. Indices must run 0, 1, 2, ...
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let rows = csvio::read_table(r, &["j", "x", "xi"])?;
        let mut x = Vec::with_capacity(rows.len());
        let mut xi = Vec::with_capacity(rows.len());
        for (expected, row) in rows.iter().enumerate() {
            if row.values[0] != expected as f64 {
                return Err(Error::Parse {
                    line: row.line,
                    reason: format!("expected j = {expected}, found {}", row.values[0]),
                });
            }
            x.push(row.values[1]);
            xi.push(row.values[2]);
        }
        Self::new(x, xi, seed)
    }

    /// Parses the noise file written by [`PathSample::write_noise_csv`] and attaches it.
    pub fn attach_noise_csv<R: Read>(&mut self, r: R) -> Result<()> {
        let rows = csvio::read_table(r, &["j", "eps", "zeta"])?;
        if rows.len() != self.n() {
            return Err(Error::Input(format!(
                "noise file has {} rows, path needs {}",
                rows.len(),
                self.n()
            )));
        }
        let eps = rows.iter().map(|r| r.values[1]).collect();
        let zeta = rows.iter().map(|r| r.values[2]).collect();
        self.noise = Some(NoiseRecord { eps, zeta });
        Ok(())
    }
}

/// Simulation switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Retain ε and ζ for replay.
    pub keep_noise: bool,
    /// Steps discarded before X_0 of the returned path.
    pub burn_in: usize,
}

/// Simulates X_0..X_n with X_0 ~ N(0,1) and stationary ξ_0 ~ N(0, γ).
pub fn simulate_path(params: &TarParams, n: usize, seed: u64) -> Result<PathSample> {
    simulate_path_with(params, n, seed, SimOptions::default())
}

pub fn simulate_path_with(
    params: &TarParams,
    n: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathSample> {
    let mut rng = rng::stream(seed, &[rng::tag::PATH]);
    simulate_with_rng(params, n, seed, opts, &mut rng)
}

/// Simulation core for callers that manage their own stream.
pub fn simulate_with_rng(
    params: &TarParams,
    n: usize,
    seed: u64,
    opts: SimOptions,
    rng: &mut StreamRng,
) -> Result<PathSample> {
    if n < 1 {
        return Err(Error::param("n", "need n >= 1"));
    }
    let ss = solve_gamma(params.a)?;
    let theta = params.theta;
    let a = params.a;

    let mut x_prev: f64 = rng.sample(StandardNormal);
    let z0: f64 = rng.sample(StandardNormal);
    let mut xi_prev = ss.gamma.sqrt() * z0;
    for _ in 0..opts.burn_in {
        let eps: f64 = rng.sample(StandardNormal);
        let zeta: f64 = rng.sample(StandardNormal);
        let x = drift(x_prev, theta, params) + xi_prev + eps;
        xi_prev = a * xi_prev + zeta;
        x_prev = x;
    }

    let mut x = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n + 1);
    x.push(x_prev);
    xi.push(xi_prev);
    let mut noise = opts.keep_noise.then(|| NoiseRecord {
        eps: Vec::with_capacity(n),
        zeta: Vec::with_capacity(n),
    });
    for _ in 0..n {
        let eps: f64 = rng.sample(StandardNormal);
        let zeta: f64 = rng.sample(StandardNormal);
        let xj = drift(x_prev, theta, params) + xi_prev + eps;
        let xij = a * xi_prev + zeta;
        x.push(xj);
        xi.push(xij);
        if let Some(rec) = noise.as_mut() {
            rec.eps.push(eps);
            rec.zeta.push(zeta);
        }
        x_prev = xj;
        xi_prev = xij;
    }
    Ok(PathSample { x, xi, seed, noise })
}

/// Runs the recursions forward from given initial values and noises.
pub fn replay(
    x0: f64,
    xi0: f64,
    noise: &NoiseRecord,
    params: &TarParams,
    seed: u64,
) -> Result<PathSample> {
    if noise.eps.len() != noise.zeta.len() {
        return Err(Error::Input("eps and zeta lengths differ".into()));
    }
    let n = noise.eps.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n + 1);
    x.push(x0);
    xi.push(xi0);
    for j in 0..n {
        let xj = drift(x[j], params.theta, params) + xi[j] + noise.eps[j];
        let xij = params.a * xi[j] + noise.zeta[j];
        x.push(xj);
        xi.push(xij);
    }
    Ok(PathSample {
        x,
        xi,
        seed,
        noise: Some(noise.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ThetaSpace {
        ThetaSpace::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn drift_at_zero_is_zero() {
        let p = TarParams::reference();
        assert_eq!(drift(0.0, 1.5, &p), 0.0);
        assert_eq!(drift(0.0, -3.0, &p), 0.0);
    }

    #[test]
    fn drift_symmetric_coefficients() {
        let p = TarParams::simulation_only(1.5, 0.4, 0.4, 0.0, space()).unwrap();
        for x in [-3.0, 0.2, 1.5, 7.0] {
            assert_eq!(drift(x, 1.5, &p), 0.4 * x);
        }
    }

    #[test]
    fn drift_boundary_uses_upper_branch() {
        let p = TarParams::reference();
        assert!((drift(1.5, 1.5, &p) - 1.35).abs() < 1e-15);
        assert!((drift(1.4999, 1.5, &p) - (-0.5 * 1.4999)).abs() < 1e-15);
    }

    #[test]
    fn constructor_rejects_invalid() {
        let s = space();
        assert!(TarParams::new(1.5, 1.0, -0.5, 0.9, s).is_err());
        assert!(TarParams::new(1.5, 0.9, -1.2, 0.9, s).is_err());
        assert!(TarParams::new(1.5, 0.9, -0.5, 1.0, s).is_err());
        assert!(TarParams::new(1.5, 0.9, -0.5, f64::NAN, s).is_err());
        assert!(TarParams::new(1.5, 0.5, 0.5, 0.9, s).is_err());
        assert!(TarParams::new(2.5, 0.9, -0.5, 0.9, s).is_err());
        assert!(TarParams::new(2.0, 0.9, -0.5, 0.9, s).is_err());
        let with_zero = ThetaSpace::new(-1.0, 2.0).unwrap();
        assert!(TarParams::new(1.5, 0.9, -0.5, 0.9, with_zero).is_err());
        assert!(ThetaSpace::new(2.0, 1.0).is_err());
        assert!(ThetaSpace::new(1.0, f64::INFINITY).is_err());
        assert!(TarParams::simulation_only(1.5, 0.5, 0.5, 0.9, s).is_ok());
    }

    #[test]
    fn simulate_is_deterministic() {
        let p = TarParams::reference();
        let a = simulate_path(&p, 500, 42).unwrap();
        let b = simulate_path(&p, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&p, 500, 43).unwrap();
        assert_ne!(a.x(), c.x());
        assert_eq!(a.x().len(), 501);
    }

    #[test]
    fn simulate_rejects_zero_length() {
        assert!(simulate_path(&TarParams::reference(), 0, 1).is_err());
    }

    #[test]
    fn keep_noise_replays_exactly() {
        let p = TarParams::reference();
        let opts = SimOptions {
            keep_noise: true,
            burn_in: 17,
        };
        let path = simulate_path_with(&p, 2000, 5, opts).unwrap();
        let again = path.replay(&p).unwrap();
        assert_eq!(path.x(), again.x());
        assert_eq!(path.xi(), again.xi());
        // keep_noise does not change the draws
        let plain = simulate_path_with(
            &p,
            2000,
            5,
            SimOptions {
                keep_noise: false,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(plain.x(), path.x());
        assert!(plain.noise().is_none());
        assert!(plain.replay(&p).is_err());
    }

    #[test]
    fn white_noise_variance_is_two() {
        // ρ± = 0, a = 0: X_j = ξ_{j-1} + ε_j with ξ i.i.d. N(0,1)
        let p = TarParams::simulation_only(1.5, 0.0, 0.0, 0.0, space()).unwrap();
        let path = simulate_path(&p, 200_000, 11).unwrap();
        let xs = &path.x()[1..];
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        // sd of the sample variance ≈ 2·sqrt(2/n) ≈ 0.0063
        assert!((v - 2.0).abs() < 0.03, "variance {v}");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let p = TarParams::reference();
        let path = simulate_path_with(
            &p,
            300,
            9,
            SimOptions {
                keep_noise: true,
                burn_in: 0,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let mut nbuf = Vec::new();
        path.write_noise_csv(&mut nbuf).unwrap();
        let mut back = PathSample::read_csv(&buf[..], 9).unwrap();
        back.attach_noise_csv(&nbuf[..]).unwrap();
        assert_eq!(back, path);
        assert_eq!(back.replay(&p).unwrap().x(), path.x());
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let text = "j,x,xi\n0,1.0,0.5\n1,abc,0.2\n";
        match PathSample::read_csv(text.as_bytes(), 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let gap = "j,x,xi\n0,1.0,0.5\n2,1.0,0.2\n";
        assert!(matches!(
            PathSample::read_csv(gap.as_bytes(), 0),
            Err(Error::Parse { line: 3, .. })
        ));
        let header = "i,x,xi\n0,1.0,0.5\n";
        assert!(PathSample::read_csv(header.as_bytes(), 0).is_err());
    }
}
