//! Acceptance suite: runs every criterion at its stated size and tolerance and
//! prints one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::time::Instant;

use uld_core::analysis::{
    check_perturbation, check_separation, check_trapping, dimension_scaling, estimate_from_extrema,
    estimate_probability, fit_order, sample_extrema, strong_error, weak_error_order, FamilySetup,
    StrongErrorConfig,
};
use uld_core::dynamics::{decay_rates, exact_moments, exact_quadratic, RunOptions, SolverKind};
use uld_core::lattice::{
    binomial, binomial_variance_identity, class_experiment, scd, upsilon, ClassConfig,
    ReducedIndex,
};
use uld_core::noise::{plan_grid, sample_noise, weighted_covariance, ExponentSet};
use uld_core::par::map_trials;
use uld_core::potentials::{FunctionClass, Quadratic};
use uld_core::stats::variance_and_se;
use uld_core::RngSpec;

type Verdict = Result<(bool, String), String>;

fn family() -> FamilySetup {
    FamilySetup {
        ell: 1.0,
        lip: 4.0,
        u: 2.5,
        u_r: 3.0,
        cx: 0.02,
        cv: 3.0,
        horizon: 1.0,
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

type Mat2 = [[f64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// `exp(H t)` by scaling, Taylor series and squaring.
fn expm_oracle(u: f64, lip: f64, t: f64) -> Mat2 {
    let s = t / 1024.0;
    let h = [[0.0, s], [-u / lip * s, -2.0 * s]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..=20 {
        term = mul(&term, &h);
        for i in 0..2 {
            for j in 0..2 {
                term[i][j] /= k as f64;
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..10 {
        sum = mul(&sum, &sum);
    }
    sum
}

/// `Var X_T = (4/L) ∫_0^T (exp(Hs)_{01})² ds` by composite Simpson.
fn variance_oracle(u: f64, lip: f64, t: f64) -> f64 {
    let panels = 4000;
    let h = t / (2 * panels) as f64;
    let f = |s: f64| expm_oracle(u, lip, s)[0][1].powi(2);
    let mut acc = f(0.0) + f(t);
    for i in 1..2 * panels {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    4.0 / lip * acc * h / 3.0
}

fn strong_order(solver: SolverKind, lo: f64, hi: f64) -> Result<(bool, String, f64), String> {
    let cfg = StrongErrorConfig {
        solver,
        lip: 4.0,
        horizon: 1.0,
        steps: vec![16, 32, 64, 128, 256],
        trials: 2000,
        seed: 7,
        reference_factor: 8,
    };
    let p = Quadratic::new(1.0, 1).map_err(err)?;
    let curve = strong_error(&cfg, &p, None).map_err(err)?;
    let fit = fit_order(&curve).map_err(err)?;
    let pass = (lo..=hi).contains(&fit.slope) && fit.r2 >= 0.98 && fit.used.len() == 5;
    Ok((
        pass,
        format!(
            "slope {:.4} ± {:.4} (target [{lo}, {hi}]), R² {:.5}, {} points",
            fit.slope,
            fit.slope_se,
            fit.r2,
            fit.used.len()
        ),
        fit.slope,
    ))
}

fn criterion_1() -> Verdict {
    let (pass, detail, _) = strong_order(SolverKind::Rmm, -1.65, -1.35)?;
    Ok((pass, format!("RMM strong order: {detail}")))
}

fn criterion_2() -> Verdict {
    let (pass, detail, em) = strong_order(SolverKind::Em, -1.15, -0.85)?;
    let (_, _, rmm) = strong_order(SolverKind::Rmm, f64::NEG_INFINITY, f64::INFINITY)?;
    let separated = rmm <= em - 0.3;
    Ok((
        pass && separated,
        format!("EM strong order: {detail}; RMM steeper by {:.3}", em - rmm),
    ))
}

fn criterion_3() -> Verdict {
    let class = FunctionClass::new(1.0, 4.0).map_err(err)?;
    let entries = dimension_scaling(SolverKind::Rmm, &class, 1.0, 64, &[1, 4, 16, 64], 4000, 5, None)
        .map_err(err)?;
    let worst = entries
        .iter()
        .map(|e| (e.ratio / e.expected_ratio - 1.0).abs())
        .fold(0.0, f64::max);
    let ratios: Vec<String> = entries
        .iter()
        .map(|e| format!("d={}: {:.3}", e.dim, e.ratio / e.expected_ratio))
        .collect();
    Ok((
        worst <= 0.12,
        format!("rmse(d)/(rmse(1) √d): {} (max deviation {worst:.4}, limit 0.12)", ratios.join(", ")),
    ))
}

fn exact_variance(u: f64, lip: f64, horizon: f64, runs: u64, seed: u64) -> Result<(f64, f64), String> {
    let (lm, lp) = decay_rates(u, lip).map_err(err)?;
    let thetas = ExponentSet::new(&[lm, lp]).map_err(err)?;
    let grid = plan_grid(1, horizon, &[], &[]).map_err(err)?;
    let xs: Vec<f64> = map_trials(runs, None, |trial| {
        let nr = sample_noise(grid.clone(), 1, &thetas, &RngSpec::new(seed, trial))?;
        Ok(exact_quadratic(u, lip, &nr, RunOptions::FINAL_ONLY)?.final_state.x[0])
    })
    .into_iter()
    .collect::<uld_core::Result<_>>()
    .map_err(err)?;
    Ok(variance_and_se(&xs))
}

fn criterion_4() -> Verdict {
    let (var, se) = exact_variance(1.0, 4.0, 1.0, 100_000, 41)?;
    let oracle = variance_oracle(1.0, 4.0, 1.0);
    let closed = exact_moments(1.0, 4.0, 1.0).map_err(err)?.cov[0][0];
    let z = (var - oracle) / se;
    let (long_var, long_se) = exact_variance(3.0, 4.0, 30.0, 100_000, 43)?;
    let z_long = (long_var - 1.0 / 3.0) / long_se;
    Ok((
        z.abs() <= 4.0 && z_long.abs() <= 4.0 && (closed - oracle).abs() < 1e-10,
        format!(
            "T=1: {var:.6} vs quadrature {oracle:.6} ({z:+.2} SE); T=30, u=3: {long_var:.5} vs 1/u ({z_long:+.2} SE)"
        ),
    ))
}

fn criterion_5() -> Verdict {
    let (lm, lp) = decay_rates(1.0, 4.0).map_err(err)?;
    let thetas = ExponentSet::new(&[lm, lp]).map_err(err)?;
    let vals = thetas.values().to_vec();
    let m = vals.len();
    let delta = 0.37;
    let draws = 100_000u64;
    let grid = plan_grid(1, delta, &[], &[]).map_err(err)?;
    let samples: Vec<Vec<f64>> = map_trials(draws, None, |trial| {
        let nr = sample_noise(grid.clone(), 1, &thetas, &RngSpec::new(53, trial))?;
        Ok((0..m).map(|k| nr.increment(0, k)[0]).collect())
    })
    .into_iter()
    .collect::<uld_core::Result<_>>()
    .map_err(err)?;
    let mut worst: f64 = 0.0;
    for a in 0..m {
        for b in a..m {
            let prods: Vec<f64> = samples.iter().map(|s| s[a] * s[b]).collect();
            let (mean, se) = uld_core::stats::mean_and_se(&prods);
            let z = (mean - weighted_covariance(vals[a], vals[b], delta)) / se;
            worst = worst.max(z.abs());
        }
    }
    Ok((
        worst <= 4.0,
        format!(
            "θ ∈ {{{}}}: max |z| {worst:.2} over {} pairs, {draws} draws",
            vals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            m * (m + 1) / 2
        ),
    ))
}

fn criterion_6() -> Verdict {
    let hs: Vec<f64> = (3..=8).map(|k| 0.5f64.powi(k)).collect();
    let r = weak_error_order(1.0, 4.0, 1.0, &hs, 32).map_err(err)?;
    Ok((
        r.cov_fit.slope >= 2.7,
        format!(
            "covariance-error slope {:.4} (min 2.7); entries xx {:.3}, xv {:.3}, vv {:.3}",
            r.cov_fit.slope, r.slope_xx, r.slope_xv, r.slope_vv
        ),
    ))
}

fn criterion_7() -> Verdict {
    let r = check_perturbation(&family(), &[8, 16], 5000, 4096, 0.05, 61, None).map_err(err)?;
    let usage = r
        .levels
        .iter()
        .map(|l| format!("N={}: {:.3}", l.n, l.max_dx / l.bound_x))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        r.violations() == 0,
        format!(
            "{} violations over {} paths; max |ΔX|/bound {usage}",
            r.violations(),
            r.trials * r.levels.len() as u64
        ),
    ))
}

fn criterion_8() -> Verdict {
    let r = check_trapping(&family(), 8, 10_000, 4096, 1e-9, 71, None).map_err(err)?;
    Ok((
        r.violations == 0,
        format!(
            "{} violations over {} paths; max ΔX {:.2e}, max ΔV+ΔX {:.2e}",
            r.violations, r.trials, r.max_dx, r.max_dv_plus_dx
        ),
    ))
}

fn criterion_9() -> Verdict {
    let r = check_separation(&family(), 8, &[1, 2, 4, 8, 16], 3000, 4096, 0.9, 81, None)
        .map_err(err)?;
    let slope = r.bump_slope.unwrap_or(f64::NAN);
    Ok((
        r.violations() == 0 && r.event_hits > 0 && (slope - 1.0).abs() <= 0.1,
        format!(
            "{} violations on {} event paths, min gap/bound {:.1}; bump-count slope {slope:.4}",
            r.violations(),
            r.event_hits,
            r.min_ratio
        ),
    ))
}

fn criterion_10() -> Verdict {
    let mut failures = 0;
    let mut pairs = 0;
    let mut distinct = 0;
    for solver in [SolverKind::Em, SolverKind::Rmm] {
        for n in [4, 8] {
            let cfg = ClassConfig {
                solver,
                setup: family(),
                n,
                trials: 100,
                reference_steps: 0,
                spread_samples: 0,
                separation_factor: 0.9,
                seed: 91,
            };
            let r = class_experiment(&cfg, None).map_err(err)?;
            failures += r.equivalence_failures;
            distinct += r.distinct_pairs;
            pairs += r.trials;
        }
    }
    Ok((
        failures == 0 && distinct == pairs,
        format!("{failures} of {pairs} replayed pairs differed (EM and RMM, N ∈ {{4, 8}})"),
    ))
}

fn criterion_11() -> Verdict {
    let mut problems = Vec::new();
    for n in 1..=16usize {
        let dec = scd(n).map_err(err)?;
        let mut seen = vec![false; 1 << n];
        for chain in dec.chains() {
            let lo = chain[0].count_ones() as usize;
            let hi = chain[chain.len() - 1].count_ones() as usize;
            if lo + hi != n {
                problems.push(format!("N={n}: asymmetric chain"));
            }
            if !chain
                .windows(2)
                .all(|w| w[1] & w[0] == w[0] && (w[1] ^ w[0]).count_ones() == 1)
            {
                problems.push(format!("N={n}: non-covering step"));
            }
            for &m in chain {
                if std::mem::replace(&mut seen[m as usize], true) {
                    problems.push(format!("N={n}: vector in two chains"));
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            problems.push(format!("N={n}: vector not covered"));
        }
        if dec.chains().len() as u128 != binomial(n as u32, n as u32 / 2) {
            problems.push(format!("N={n}: wrong chain count"));
        }
        if n % 2 == 0 {
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize * 2 == n {
                    let r = ReducedIndex::from_mask(mask, n);
                    if upsilon(&r).map_err(err)? != r {
                        problems.push(format!("N={n}: Υ moves a middle-rank vector"));
                        break;
                    }
                }
            }
        }
    }
    for n in 0..=30u32 {
        let (lhs, rhs) = binomial_variance_identity(n);
        if lhs != rhs {
            problems.push(format!("identity fails at N={n}"));
        }
    }
    Ok((
        problems.is_empty(),
        if problems.is_empty() {
            "SCD valid for N ≤ 16, Υ fixes rank N/2, identity exact for N ≤ 30".into()
        } else {
            problems.join("; ")
        },
    ))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn criterion_12() -> Verdict {
    let ext = sample_extrema(2.0, 4.0, 1.0, 100_000, 1024, 121, None).map_err(err)?;
    let forbidden = [(1.0, 0.1), (0.1, 1.0), (0.09, 1.0), (0.05, 0.5)];
    let hits: u64 = forbidden
        .iter()
        .map(|&(cx, cv)| {
            let e = estimate_from_extrema(&ext, cx, cv, 1.0);
            assert!(e.travel_forbidden);
            e.hits
        })
        .sum();

    let path = repo_root().join("results/clow/clow.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
    let best = &json["results"]["best_certified"];
    let get = |k: &str| best[k].as_f64().ok_or(format!("recorded point lacks `{k}`"));
    let (cx, cv, u) = (get("cx")?, get("cv")?, get("u")?);
    let recorded_lo = get("p_lo")?;
    let again = estimate_probability(cx, cv, u, 4.0, 1.0, 20_000, 1024, 122, None).map_err(err)?;
    Ok((
        hits == 0 && recorded_lo > 0.0 && again.ci_lo > 0.0,
        format!(
            "{hits} hits at {} forbidden points over 10^5 paths; recorded point Cx={cx}, Cv={cv}, u={u}: P ≥ {recorded_lo:.2e}, fresh estimate {:.2e} [{:.2e}, {:.2e}]",
            forbidden.len(),
            again.p,
            again.ci_lo,
            again.ci_hi
        ),
    ))
}

fn run_cli(args: &[&str], workers: &str) -> Result<Vec<u8>, String> {
    let dir = std::env::temp_dir().join(format!(
        "uld-acceptance-{}-{}-{workers}",
        std::process::id(),
        args[0]
    ));
    let mut full = vec!["uld"];
    full.extend_from_slice(args);
    let out = dir.to_str().unwrap().to_string();
    full.extend_from_slice(&["--workers", workers, "--out-dir", &out]);
    let code = uld_cli::main_with_args(full);
    if code == uld_cli::EXIT_CONFIG {
        return Err(format!("`{}` exited with {code}", args.join(" ")));
    }
    let csv = std::fs::read(dir.join(format!("{}.csv", args[0]))).map_err(err)?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(csv)
}

fn criterion_13() -> Verdict {
    let experiments: [&[&str]; 5] = [
        &[
            "converge", "--solver", "rmm", "--potential", "smooth:ell=1,L=4,d=3", "--ns",
            "8,16,32,64", "--trials", "200", "--reference-factor", "32", "--seed", "131",
        ],
        &["dimscale", "--d", "1,4", "--ns", "16", "--trials", "200", "--seed", "132"],
        &["trap", "--trials", "100", "--grid", "1024", "--seed", "133"],
        &["lattice", "--n", "4,8", "--trials", "60", "--grid", "512", "--seed", "134"],
        &["clow", "--cx", "0.02,0.05", "--cv", "2,3", "--u", "2", "--ur", "3", "--trials", "2000", "--seed", "135"],
    ];
    let mut differing = Vec::new();
    for args in experiments {
        let base = run_cli(args, "1")?;
        for workers in ["4", "8"] {
            if run_cli(args, workers)? != base {
                differing.push(format!("{} ({workers} workers)", args[0]));
            }
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            "converge, dimscale, trap, lattice, clow: identical CSV bytes with 1, 4 and 8 workers"
                .into()
        } else {
            format!("CSV differs: {}", differing.join(", "))
        },
    ))
}

fn main() {
    // Let `cargo test -- <filter>` skip the suite unless it names it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let criteria: [(u32, fn() -> Verdict); 13] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        let start = Instant::now();
        let (pass, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!(
            "criterion {id:>2}: {} {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 13 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
