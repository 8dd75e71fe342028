//! Acceptance criteria. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use tar_threshold::estimators::build_profile;
use tar_threshold::limit::{ZPath, DEFAULT_STOP_DEPTH};
use tar_threshold::montecarlo::{limit_path_seed, run_limit_mc, DEFAULT_J_GRID};
use tar_threshold::*;

const WORKERS: usize = 8;
const REFERENCE_VARPI: f64 = 0.0576;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_law(varpi: f64) -> LimitLaw {
    let p = TarParams::reference();
    LimitLaw::from_params(&p, &solve_gamma(p.a()).unwrap(), varpi).unwrap()
}

fn gamma_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let a = -0.999 + 1.998 * (i as f64 + 0.5) / 1000.0;
        let closed = solve_gamma(a).unwrap().gamma;
        let iterated = *riccati_iterate(a, 0.0, 200).last().unwrap();
        worst = worst.max((closed - iterated).abs());
    }
    let g = solve_gamma(0.9).unwrap().gamma;
    check(
        worst < 1e-10 && (g - 1.48390).abs() < 1e-5,
        format!("max |closed - riccati| = {worst:.2e}, gamma(0.9) = {g:.6}"),
    )
}

fn beta_dual_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let lo = rng.random_range(0.1..3.0);
        let hi = lo + rng.random_range(0.1..3.0);
        let theta = rng.random_range(lo..hi);
        let plus = rng.random_range(-0.99..0.99);
        let mut minus = rng.random_range(-0.99..0.99);
        if minus == plus {
            minus = -plus;
        }
        let a = rng.random_range(-0.99..0.99);
        let p = TarParams::new(theta, plus, minus, a, ThetaSpace::new(lo, hi).unwrap()).unwrap();
        let ss = solve_gamma(a).unwrap();
        let (c, s) = (beta_squared(&p, &ss), beta_squared_series(&p, &ss));
        worst = worst.max((c - s).abs() / c);
    }
    let p = TarParams::reference();
    let b2 = beta_squared(&p, &solve_gamma(p.a()).unwrap());
    check(
        worst < 1e-10 && (b2 - 2.3663).abs() < 1e-3,
        format!("max rel |series - closed| = {worst:.2e}, beta^2 = {b2:.5}"),
    )
}

fn innovation_whiteness() -> Outcome {
    let p = TarParams::reference();
    let path = simulate_path(&p, 100_000, 20_240).unwrap();
    let e = run_filter(path.x(), p.theta(), &p).unwrap().residuals;
    let n = e.len() as f64;
    let m = e.iter().sum::<f64>() / n;
    let c = |k: usize| {
        (0..e.len() - k)
            .map(|t| (e[t] - m) * (e[t + k] - m))
            .sum::<f64>()
            / n
    };
    let var = c(0);
    let acf: Vec<f64> = (1..=5).map(|k| c(k) / var).collect();
    let worst = acf.iter().fold(0.0f64, |w, r| w.max(r.abs()));
    check(
        m.abs() < 0.02 && (var - 1.0).abs() < 0.02 && worst < 0.02,
        format!("mean {m:+.4}, variance {var:.4}, max |acf 1..5| {worst:.4}"),
    )
}

fn varpi_reproduction() -> Outcome {
    let (varpi, _) = estimate_varpi(&TarParams::reference(), 1_000_000, 10_000, 2024).unwrap();
    let rel = (varpi - REFERENCE_VARPI) / REFERENCE_VARPI;
    check(
        rel.abs() <= 0.15,
        format!("varpi {varpi:.5} ({:+.1}%)", 100.0 * rel),
    )
}

fn limit_rmse() -> Outcome {
    let s = run_limit_mc(
        &reference_law(REFERENCE_VARPI),
        100_000,
        7,
        DEFAULT_STOP_DEPTH,
        WORKERS,
    )
    .unwrap();
    let (rt, rh) = (
        (s.rmse_u_tilde - 38.64) / 38.64,
        (s.rmse_u_hat - 46.88) / 46.88,
    );
    check(
        rt.abs() <= 0.10 && rh.abs() <= 0.10,
        format!(
            "rmse u_tilde {:.2} ({:+.1}%), u_hat {:.2} ({:+.1}%), winsorized {:.2} / {:.2}",
            s.rmse_u_tilde,
            100.0 * rt,
            s.rmse_u_hat,
            100.0 * rh,
            s.winsorized_u_tilde,
            s.winsorized_u_hat
        ),
    )
}

fn finite_mc() -> montecarlo::FiniteMcResult {
    let mut c = McConfig::new(TarParams::reference(), 2000, 11);
    c.sample_sizes = vec![500, 1000, 2000];
    c.workers = WORKERS;
    run_finite_mc(&c).unwrap()
}

fn ordering(result: &montecarlo::FiniteMcResult) -> Outcome {
    let s = &result.summary;
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [500, 1000, 2000] {
        let r = |k| s.row(n, k).unwrap().normalized_rmse;
        let (be, mle, ps) = (
            r(EstimatorKind::Bayes),
            r(EstimatorKind::CentralMle),
            r(EstimatorKind::PseudoMle),
        );
        ok &= be < mle && mle < ps;
        detail.push(format!("n={n}: {be:.1} < {mle:.1} < {ps:.1}"));
    }
    let be = s.row(2000, EstimatorKind::Bayes).unwrap().normalized_rmse;
    ok &= (30.0..=50.0).contains(&be);
    check(ok, detail.join(", "))
}

fn weak_convergence(result: &montecarlo::FiniteMcResult) -> Outcome {
    let (varpi, _) = estimate_varpi(&TarParams::reference(), 1_000_000, 10_000, 2024).unwrap();
    let limit = run_limit_mc(&reference_law(varpi), 100_000, 13, DEFAULT_STOP_DEPTH, WORKERS).unwrap();
    let finite = result.errors_for(2000, EstimatorKind::Bayes).unwrap();
    let d = ks_compare(finite, &limit.u_tilde).unwrap();
    check(d <= 0.05, format!("KS = {d:.4} (varpi {varpi:.5})"))
}

fn interval_bound() -> Outcome {
    let r = diag_interval_bound(
        &TarParams::reference(),
        100,
        1.0,
        100_000,
        5,
        &DEFAULT_J_GRID,
        WORKERS,
    )
    .unwrap();
    let worst = r
        .rows
        .iter()
        .map(|row| row.frequency - row.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        r.all_pass(),
        format!(
            "{} lags, max (frequency - bound) = {worst:+.2e}",
            r.rows.len()
        ),
    )
}

fn property_suite() -> Outcome {
    let p = TarParams::reference();
    let mut failures = Vec::new();

    let path = simulate_path(&p, 2000, 99).unwrap();
    let prof = build_profile(path.x(), &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let constant = (0..100).all(|_| {
        let i = rng.random_range(0..prof.intervals());
        let (l, r) = prof.interval(i);
        let theta = l + (r - l) * rng.random_range(0.01..1.0);
        (run_filter(path.x(), theta, &p).unwrap().log_lik - prof.log_values()[i]).abs() < 1e-9
    });
    if !constant {
        failures.push("piecewise constancy");
    }

    let base = bayes_estimate(&prof, &Prior::Uniform).unwrap().estimate;
    let shifted_values: Vec<f64> = prof.log_values().iter().map(|v| v + 1234.5).collect();
    let shifted =
        LikelihoodProfile::from_parts(prof.breakpoints().to_vec(), shifted_values).unwrap();
    if (bayes_estimate(&shifted, &Prior::Uniform).unwrap().estimate - base).abs() > 1e-12 {
        failures.push("prior-shift invariance");
    }

    let law = reference_law(REFERENCE_VARPI);
    let z: Vec<f64> = (0..100_000)
        .map(|i| {
            simulate_z(&law, limit_path_seed(77, i), DEFAULT_STOP_DEPTH)
                .unwrap()
                .log_z(5.0)
                .unwrap()
                .exp()
        })
        .collect();
    let m = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (z.len() - 1) as f64;
    if (m - 1.0).abs() >= 4.0 * (var / z.len() as f64).sqrt() {
        failures.push("martingale normalization");
    }

    let run = |w| {
        let mut c = McConfig::new(p, 64, 3);
        c.sample_sizes = vec![200, 400];
        c.workers = w;
        run_finite_mc(&c).unwrap()
    };
    let lim = |w| run_limit_mc(&law, 500, 8, DEFAULT_STOP_DEPTH, w).unwrap();
    let (f1, l1) = (run(1), lim(1));
    if [4, 16].iter().any(|&w| run(w) != f1 || lim(w) != l1) {
        failures.push("worker determinism");
    }

    let mut buf = Vec::new();
    path.write_csv(&mut buf).unwrap();
    let path_ok = PathSample::read_csv(&buf[..], path.seed()).unwrap().x() == path.x();
    let zp = simulate_z(&law, 31, DEFAULT_STOP_DEPTH).unwrap();
    let mut zbuf = Vec::new();
    zp.write_csv(&mut zbuf).unwrap();
    let z_ok = ZPath::read_csv(&zbuf[..]).unwrap() == zp;
    if !(path_ok && z_ok) {
        failures.push("CSV round-trips");
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("5 properties, martingale mean {m:.4}")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "acceptance {id} {name:<24} {status}  {detail}  [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "gamma oracle", &mut gamma_oracle);
    report(2, "beta^2 dual form", &mut beta_dual_form);
    report(3, "innovation whiteness", &mut innovation_whiteness);
    report(4, "varpi reproduction", &mut varpi_reproduction);
    report(5, "limit rmse", &mut limit_rmse);
    let finite = finite_mc();
    report(6, "estimator ordering", &mut || ordering(&finite));
    report(7, "weak convergence", &mut || weak_convergence(&finite));
    report(8, "interval bound", &mut interval_bound);
    report(9, "property suite", &mut property_suite);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
