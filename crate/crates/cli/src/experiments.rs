use serde::Serialize;
use serde_json::{json, Value};

use uld_core::analysis::{
    c_up, check_perturbation, check_separation, check_trapping, clow_search, dimension_scaling,
    fit_order, strong_error, weak_error_order, ClowGrid, StrongErrorConfig, MIN_FIT_POINTS,
};
use uld_core::dynamics::SolverKind;
use uld_core::lattice::{
    binomial, binomial_variance_identity, class_experiment, scd, spread_slope, upsilon,
    ClassConfig, ReducedIndex, MAX_CHAIN_N,
};
use uld_core::potentials::FunctionClass;
use uld_core::stats::fit_loglog;

use crate::args::*;
use crate::output::{num, Check, Outcome, Table, ERROR_COLUMNS, VERSION};
use crate::potential::parse_potential;
use crate::CliError;

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn increasing(key: &str, list: &[usize]) -> Result<(), CliError> {
    if list.is_empty() {
        return Err(CliError::Config(format!("`{key}` must not be empty")));
    }
    if list[0] == 0 || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(format!(
            "`{key}` must be positive and strictly increasing, got {list:?}"
        )));
    }
    Ok(())
}

fn positive(key: &str, x: f64) -> Result<f64, CliError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(CliError::Config(format!("`{key}` must be positive, got {x}")))
    }
}

fn at_least(key: &str, x: u64, min: u64) -> Result<u64, CliError> {
    if x >= min {
        Ok(x)
    } else {
        Err(CliError::Config(format!("`{key}` must be at least {min}, got {x}")))
    }
}

/// Resolve the configuration file and run the selected experiment.
pub fn run_command(command: Command) -> Result<(Outcome, std::path::PathBuf), CliError> {
    Ok(match command {
        Command::Converge(a) => {
            let a = a.resolve()?;
            (converge(&a)?, a.out_dir())
        }
        Command::Dimscale(a) => {
            let a = a.resolve()?;
            (dimscale(&a)?, a.out_dir())
        }
        Command::Weak(a) => {
            let a = a.resolve()?;
            (weak(&a)?, a.out_dir())
        }
        Command::Prob(a) => {
            let a = a.resolve()?;
            (prob(&a)?, a.out_dir())
        }
        Command::Clow(a) => {
            let a = a.resolve()?;
            (clow(&a)?, a.out_dir())
        }
        Command::Perturb(a) => {
            let a = a.resolve()?;
            (perturb(&a)?, a.out_dir())
        }
        Command::Trap(a) => {
            let a = a.resolve()?;
            (trap(&a)?, a.out_dir())
        }
        Command::Separate(a) => {
            let a = a.resolve()?;
            (separate(&a)?, a.out_dir())
        }
        Command::Lattice(a) => {
            let a = a.resolve()?;
            (lattice(&a)?, a.out_dir())
        }
        Command::ScdCheck(a) => {
            let a = a.resolve()?;
            (scd_check(&a)?, a.out_dir())
        }
    })
}

pub fn converge(a: &ConvergeArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let solver = require(a.solver, "solver")?;
    let spec = parse_potential(&require(a.potential.clone(), "potential")?)?;
    let steps = require(a.ns.clone(), "ns")?;
    increasing("ns", &steps)?;
    let trials = at_least("trials", a.trials.unwrap_or(1000), 2)?;
    let horizon = positive("T", a.horizon.unwrap_or(1.0))?;
    let reference_factor = a.reference_factor.unwrap_or(8);
    if reference_factor == 0 {
        return Err(CliError::Config("`reference_factor` must be positive".into()));
    }
    if solver == SolverKind::Exact && spec.potential.quadratic_curvatures().is_none() {
        return Err(CliError::Config(
            "`solver` exact needs a quadratic or separable potential".into(),
        ));
    }

    let cfg = StrongErrorConfig {
        solver,
        lip: spec.lip,
        horizon,
        steps,
        trials,
        seed,
        reference_factor,
    };
    let curve = strong_error(&cfg, &*spec.potential, workers)?;
    let fit = if curve.entries.len() >= MIN_FIT_POINTS {
        fit_order(&curve).ok()
    } else {
        None
    };

    let mut checks = Vec::new();
    checks.push(Check::new(
        "fit",
        fit.is_some() || curve.entries.len() < MIN_FIT_POINTS,
        match &fit {
            Some(f) => format!(
                "slope {:.4} ± {:.4}, r2 {:.5}, {} points",
                f.slope,
                f.slope_se,
                f.r2,
                f.used.len()
            ),
            None => format!("no fit (need {MIN_FIT_POINTS} usable step counts)"),
        },
    ));
    if solver == SolverKind::Rmm {
        let class = FunctionClass::new(spec.ell(), spec.lip)?;
        let cu = c_up(&class, horizon);
        let sqrt_d = (spec.dim() as f64).sqrt();
        let worst = curve
            .entries
            .iter()
            .map(|e| e.rmse() / (cu * sqrt_d * (2.0 * e.steps as f64).powf(-1.5)))
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "prefactor",
            worst <= 10.0,
            format!("max rmse / (C_up sqrt(d) (2Ns)^-1.5) = {worst:.4} (limit 10)"),
        ));
    }

    let mut table = Table::new(&ERROR_COLUMNS);
    let (slope, slope_se) = fit
        .as_ref()
        .map_or((String::new(), String::new()), |f| (num(f.slope), num(f.slope_se)));
    for e in &curve.entries {
        table.push(vec![
            "converge".into(),
            solver.name().into(),
            spec.text.clone(),
            spec.dim().to_string(),
            e.steps.to_string(),
            num(horizon),
            e.trials.to_string(),
            num(e.mse),
            num(e.se),
            slope.clone(),
            slope_se.clone(),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "converge",
        params: json!({
            "solver": solver, "potential": spec.text, "ns": cfg.steps, "trials": trials,
            "T": horizon, "reference_factor": reference_factor, "seed": seed,
        }),
        results: json!({ "curve": curve, "fit": fit, "potential": spec.text }),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn dimscale(a: &DimscaleArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let solver = a.solver.unwrap_or(SolverKind::Rmm);
    let class = FunctionClass::new(a.ell.unwrap_or(1.0), a.lip.unwrap_or(4.0))?;
    let dims = a.dims.clone().unwrap_or_else(|| vec![1, 4, 16, 64]);
    increasing("d", &dims)?;
    let steps = a.ns.unwrap_or(64);
    let trials = at_least("trials", a.trials.unwrap_or(1000), 2)?;
    let horizon = positive("T", a.horizon.unwrap_or(1.0))?;

    let entries = dimension_scaling(solver, &class, horizon, steps, &dims, trials, seed, workers)?;
    let fit = if entries.len() >= 2 {
        let d: Vec<f64> = entries.iter().map(|e| e.dim as f64).collect();
        let r: Vec<f64> = entries.iter().map(|e| e.rmse).collect();
        fit_loglog(&d, &r).ok()
    } else {
        None
    };
    let worst = entries
        .iter()
        .map(|e| (e.ratio / e.expected_ratio - 1.0).abs())
        .fold(0.0, f64::max);
    let checks = vec![Check::new(
        "sqrt_d_scaling",
        worst <= 0.12,
        format!("max |rmse(d)/rmse(1) / sqrt(d) - 1| = {worst:.4} (limit 0.12)"),
    )];

    let u = 0.5 * (class.ell + class.lip);
    let label = format!("quadratic:u={u},L={}", class.lip);
    let (slope, slope_se) = fit
        .as_ref()
        .map_or((String::new(), String::new()), |f| (num(f.slope), num(f.slope_se)));
    let mut table = Table::new(&ERROR_COLUMNS);
    for e in &entries {
        table.push(vec![
            "dimscale".into(),
            solver.name().into(),
            label.clone(),
            e.dim.to_string(),
            steps.to_string(),
            num(horizon),
            trials.to_string(),
            num(e.mse),
            num(e.se),
            slope.clone(),
            slope_se.clone(),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "dimscale",
        params: json!({
            "solver": solver, "ell": class.ell, "L": class.lip, "d": dims,
            "ns": steps, "trials": trials, "T": horizon, "seed": seed,
        }),
        results: json!({ "entries": entries, "dimension_slope": fit.map(|f| f.slope) }),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn weak(a: &WeakArgs) -> Result<Outcome, CliError> {
    let u = positive("u", a.u.unwrap_or(1.0))?;
    let lip = positive("L", a.lip.unwrap_or(4.0))?;
    let horizon = positive("T", a.horizon.unwrap_or(1.0))?;
    let hs = a
        .hs
        .clone()
        .unwrap_or_else(|| (3..=8).map(|k| 0.5f64.powi(k)).collect());
    let nodes = a.nodes.unwrap_or(32);
    let min_slope = a.min_slope.unwrap_or(2.7);

    let report = weak_error_order(u, lip, horizon, &hs, nodes)?;
    let checks = vec![Check::new(
        "weak_order",
        report.cov_fit.slope >= min_slope,
        format!(
            "covariance-error slope {:.4} (minimum {min_slope}); per entry xx {:.4}, xv {:.4}, vv {:.4}",
            report.cov_fit.slope, report.slope_xx, report.slope_xv, report.slope_vv
        ),
    )];
    let mut table = Table::new(&[
        "experiment", "u", "L", "T", "h", "Ns", "err_mean", "err_xx", "err_xv", "err_vv",
        "err_cov", "slope", "version",
    ]);
    for e in &report.entries {
        table.push(vec![
            "weak".into(),
            num(u),
            num(lip),
            num(horizon),
            num(e.h),
            e.steps.to_string(),
            num(e.err_mean),
            num(e.err_xx),
            num(e.err_xv),
            num(e.err_vv),
            num(e.err_cov()),
            num(report.cov_fit.slope),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "weak",
        params: json!({ "u": u, "L": lip, "T": horizon, "h": hs, "nodes": nodes, "min_slope": min_slope }),
        results: to_value(&report),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn prob(a: &ProbArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let cx = positive("cx", require(a.cx, "cx")?)?;
    let cv = positive("cv", require(a.cv, "cv")?)?;
    let u = positive("u", require(a.u, "u")?)?;
    let lip = positive("L", a.lip.unwrap_or(4.0))?;
    let horizon = positive("T", a.horizon.unwrap_or(1.0))?;
    let trials = at_least("trials", a.trials.unwrap_or(10_000), 1)?;
    let grid = a.grid.unwrap_or(1024);

    let est = uld_core::analysis::estimate_probability(
        cx, cv, u, lip, horizon, trials, grid, seed, workers,
    )?;
    let checks = vec![Check::new(
        "travel_bound",
        !est.travel_forbidden || est.hits == 0,
        if est.travel_forbidden {
            format!("12 Cx/Cv = {} > T: {} hits", 12.0 * cx / cv, est.hits)
        } else {
            "12 Cx/Cv <= T: no constraint".to_string()
        },
    )];
    let mut table = Table::new(&[
        "experiment", "cx", "cv", "u", "L", "T", "trials", "hits", "p", "ci_lo", "ci_hi",
        "travel_forbidden", "seed", "version",
    ]);
    table.push(vec![
        "prob".into(),
        num(cx),
        num(cv),
        num(u),
        num(lip),
        num(horizon),
        trials.to_string(),
        est.hits.to_string(),
        num(est.p),
        num(est.ci_lo),
        num(est.ci_hi),
        est.travel_forbidden.to_string(),
        seed.to_string(),
        VERSION.into(),
    ]);
    Ok(Outcome {
        experiment: "prob",
        params: json!({
            "cx": cx, "cv": cv, "u": u, "L": lip, "T": horizon,
            "trials": trials, "grid": grid, "seed": seed,
        }),
        results: to_value(&est),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn clow(a: &ClowArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let class = FunctionClass::new(a.ell.unwrap_or(1.0), a.lip.unwrap_or(4.0))?;
    let horizon = positive("T", a.horizon.unwrap_or(1.0))?;
    let grid = ClowGrid {
        cx: a.cx.clone().unwrap_or_else(|| vec![0.01, 0.02, 0.05]),
        cv: a.cv.clone().unwrap_or_else(|| vec![1.0, 2.0, 3.0, 4.0]),
        u: a.u.clone().unwrap_or_else(|| vec![1.5, 2.0, 2.5, 3.0, 3.5]),
        u_r: a.u_r.clone().unwrap_or_else(|| vec![3.0, 4.0]),
    };
    let trials = at_least("trials", a.trials.unwrap_or(20_000), 1)?;
    let grid_steps = a.grid.unwrap_or(1024);

    let res = clow_search(&class, horizon, &grid, trials, grid_steps, seed, workers)?;
    let forbidden_hits: u64 = res
        .points
        .iter()
        .filter(|p| 12.0 * p.cx / p.cv > horizon)
        .map(|p| p.hits)
        .sum();
    let checks = vec![
        Check::new(
            "travel_bound",
            forbidden_hits == 0,
            format!("{forbidden_hits} hits at points with 12 Cx/Cv > T"),
        ),
        Check::new(
            "certified_point",
            res.best_certified.is_some(),
            match &res.best_certified {
                Some(p) => format!(
                    "Cx={} Cv={} u={} uR={}: P in [{:.3e}, {:.3e}], objective >= {:.3e}",
                    p.cx, p.cv, p.u, p.u_r, p.p_lo, p.p_hi, p.objective_lo
                ),
                None => "no point with a probability interval excluding zero".into(),
            },
        ),
    ];
    let mut table = Table::new(&[
        "experiment", "cx", "cv", "u", "ur", "T", "trials", "hits", "p", "p_lo", "p_hi", "cbar",
        "objective", "objective_lo", "seed", "version",
    ]);
    for p in &res.points {
        table.push(vec![
            "clow".into(),
            num(p.cx),
            num(p.cv),
            num(p.u),
            num(p.u_r),
            num(horizon),
            p.trials.to_string(),
            p.hits.to_string(),
            num(p.p),
            num(p.p_lo),
            num(p.p_hi),
            num(p.cbar),
            num(p.objective),
            num(p.objective_lo),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "clow",
        params: json!({
            "ell": class.ell, "L": class.lip, "T": horizon, "grid": grid,
            "trials": trials, "grid_steps": grid_steps, "seed": seed,
        }),
        results: to_value(&res),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn perturb(a: &PerturbArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let setup = a.setup();
    let n_list = a.n_list.clone().unwrap_or_else(|| vec![4, 8, 16]);
    increasing("n", &n_list)?;
    let trials = at_least("trials", a.trials.unwrap_or(1000), 1)?;
    let grid = a.grid.unwrap_or(4096);
    let slack = a.slack.unwrap_or(0.05);

    let report = check_perturbation(&setup, &n_list, trials, grid, slack, seed, workers)?;
    let checks = vec![Check::new(
        "perturbation_bound",
        report.violations() == 0,
        format!("{} violations over {} paths per level", report.violations(), trials),
    )];
    let mut table = Table::new(&[
        "experiment", "N", "epsilon", "epsilon_bar", "bound_x", "bound_v", "max_dx", "max_dv",
        "mean_max_dx", "discretization", "violations", "trials", "seed", "version",
    ]);
    for l in &report.levels {
        table.push(vec![
            "perturb".into(),
            l.n.to_string(),
            num(l.epsilon),
            num(l.epsilon_bar),
            num(l.bound_x),
            num(l.bound_v),
            num(l.max_dx),
            num(l.max_dv),
            num(l.mean_max_dx),
            num(l.discretization),
            l.violations.to_string(),
            trials.to_string(),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "perturb",
        params: json!({
            "setup": setup, "n": n_list, "trials": trials, "grid": grid,
            "slack": slack, "seed": seed,
        }),
        results: to_value(&report),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn trap(a: &TrapArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let setup = a.setup();
    let n = a.n.unwrap_or(8);
    let trials = at_least("trials", a.trials.unwrap_or(1000), 1)?;
    let grid = a.grid.unwrap_or(4096);
    let tolerance = a.tolerance.unwrap_or(1e-9);

    let r = check_trapping(&setup, n, trials, grid, tolerance, seed, workers)?;
    let checks = vec![Check::new(
        "ordering",
        r.violations == 0,
        format!(
            "{} violations; max dX {:.3e}, max dV+dX {:.3e} (tolerance {tolerance:e})",
            r.violations, r.max_dx, r.max_dv_plus_dx
        ),
    )];
    let mut table = Table::new(&[
        "experiment", "N", "trials", "grid", "max_dx", "max_dv_plus_dx", "coarse_max_dx",
        "coarse_max_dv_plus_dx", "mean_final_dx", "violations", "seed", "version",
    ]);
    table.push(vec![
        "trap".into(),
        n.to_string(),
        trials.to_string(),
        grid.to_string(),
        num(r.max_dx),
        num(r.max_dv_plus_dx),
        num(r.coarse_max_dx),
        num(r.coarse_max_dv_plus_dx),
        num(r.mean_final_dx),
        r.violations.to_string(),
        seed.to_string(),
        VERSION.into(),
    ]);
    Ok(Outcome {
        experiment: "trap",
        params: json!({
            "setup": setup, "n": n, "trials": trials, "grid": grid,
            "tolerance": tolerance, "seed": seed,
        }),
        results: to_value(&r),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn separate(a: &SeparateArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let setup = a.setup();
    let n = a.n.unwrap_or(8);
    let bumps = a.bumps.clone().unwrap_or_else(|| vec![1, 2, 4, 8, 16]);
    increasing("bumps", &bumps)?;
    let trials = at_least("trials", a.trials.unwrap_or(2000), 1)?;
    let grid = a.grid.unwrap_or(4096);
    let factor = a.factor.unwrap_or(0.9);

    let r = check_separation(&setup, n, &bumps, trials, grid, factor, seed, workers)?;
    let slope_ok = r.bump_slope.is_some_and(|s| (s - 1.0).abs() <= 0.1);
    let checks = vec![
        Check::new(
            "separation",
            r.violations() == 0 && !r.inconclusive(),
            format!(
                "{} violations on {} event paths; min gap/bound {:.3}",
                r.violations(),
                r.event_hits,
                r.min_ratio
            ),
        ),
        Check::new(
            "linear_in_bumps",
            slope_ok,
            match r.bump_slope {
                Some(s) => format!("gap slope in bump count {s:.4} (target 1 ± 0.1)"),
                None => "no slope (too few levels or no event paths)".into(),
            },
        ),
    ];
    let mut table = Table::new(&[
        "experiment", "N", "bumps", "bound", "mean_gap", "min_gap", "violations", "event_hits",
        "trials", "slope", "seed", "version",
    ]);
    let slope = r.bump_slope.map(num).unwrap_or_default();
    for l in &r.levels {
        table.push(vec![
            "separate".into(),
            n.to_string(),
            l.bumps.to_string(),
            num(l.bound),
            num(l.mean_gap),
            num(l.min_gap),
            l.violations.to_string(),
            r.event_hits.to_string(),
            trials.to_string(),
            slope.clone(),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "separate",
        params: json!({
            "setup": setup, "n": n, "bumps": bumps, "trials": trials,
            "grid": grid, "factor": factor, "seed": seed,
        }),
        results: to_value(&r),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn lattice(a: &LatticeArgs) -> Result<Outcome, CliError> {
    let seed = a.seed()?;
    let workers = a.workers()?;
    let setup = a.setup();
    let solver = a.solver.unwrap_or(SolverKind::Rmm);
    let n_list = a.n_list.clone().unwrap_or_else(|| vec![8, 16, 32]);
    increasing("n", &n_list)?;
    let trials = at_least("trials", a.trials.unwrap_or(300), 1)?;
    let grid = a.grid.unwrap_or(1024);
    let samples = a.samples.unwrap_or(4);
    let factor = a.factor.unwrap_or(0.9);

    let mut reports = Vec::new();
    for &n in &n_list {
        let cfg = ClassConfig {
            solver,
            setup: setup.clone(),
            n,
            trials,
            reference_steps: grid,
            spread_samples: samples,
            separation_factor: factor,
            seed,
        };
        reports.push(class_experiment(&cfg, workers)?);
    }
    let slope = spread_slope(&reports);
    let failures: u64 = reports.iter().map(|r| r.equivalence_failures).sum();
    let violations: u64 = reports.iter().map(|r| r.separation_violations).sum();
    let mut checks = vec![Check::new(
        "equivalence",
        failures == 0,
        format!(
            "{failures} of {} paired reruns differed",
            trials * n_list.len() as u64
        ),
    )];
    if samples > 0 {
        let checked: u64 = reports.iter().map(|r| r.separation_checked).sum();
        checks.push(Check::new(
            "chain_separation",
            violations == 0,
            format!("{violations} violations over {checked} chain pairs"),
        ));
        let below = reports
            .iter()
            .filter(|r| r.event_hits > 0 && r.spread < r.spread_floor)
            .count();
        checks.push(Check::new(
            "spread_floor",
            below == 0,
            format!(
                "{below} budgets below Cx^4 C^2 xi^2 / N^3; spread slope in N {}",
                slope.map_or("n/a".into(), |s| format!("{s:.3}"))
            ),
        ));
    }
    let mut table = Table::new(&[
        "experiment", "solver", "N", "trials", "reference_steps", "equivalence_failures",
        "distinct_pairs",
        "event_hits", "separation_checked", "separation_violations", "min_separation_ratio",
        "spread", "spread_se", "spread_floor", "seed", "version",
    ]);
    for r in &reports {
        table.push(vec![
            "lattice".into(),
            solver.name().into(),
            r.n.to_string(),
            r.trials.to_string(),
            r.reference_steps.to_string(),
            r.equivalence_failures.to_string(),
            r.distinct_pairs.to_string(),
            r.event_hits.to_string(),
            r.separation_checked.to_string(),
            r.separation_violations.to_string(),
            num(r.min_separation_ratio),
            num(r.spread),
            num(r.spread_se),
            num(r.spread_floor),
            seed.to_string(),
            VERSION.into(),
        ]);
    }
    Ok(Outcome {
        experiment: "lattice",
        params: json!({
            "setup": setup, "solver": solver, "n": n_list, "trials": trials,
            "grid": grid, "samples": samples, "factor": factor, "seed": seed,
        }),
        results: json!({ "reports": reports, "spread_slope": slope }),
        checks,
        table,
        extra: Vec::new(),
    })
}

pub fn scd_check(a: &ScdCheckArgs) -> Result<Outcome, CliError> {
    let n = require(a.n, "n")?;
    if !(1..=MAX_CHAIN_N).contains(&n) {
        return Err(CliError::Config(format!(
            "`n` must lie in 1..={MAX_CHAIN_N}, got {n}"
        )));
    }
    let dec = scd(n)?;
    let total = 1usize << n;
    let mut seen = vec![false; total];
    let mut partition = true;
    let mut symmetric = true;
    let mut covering = true;
    for chain in dec.chains() {
        let lo = chain[0].count_ones() as usize;
        let hi = chain[chain.len() - 1].count_ones() as usize;
        symmetric &= lo + hi == n;
        covering &= chain
            .windows(2)
            .all(|w| w[1] & w[0] == w[0] && (w[1] ^ w[0]).count_ones() == 1);
        for &m in chain {
            partition &= !std::mem::replace(&mut seen[m as usize], true);
        }
    }
    partition &= seen.iter().all(|&s| s);
    let expected = binomial(n as u32, n as u32 / 2);
    let chains = dec.chains().len() as u128;

    let at = dec.locate_all();
    let mut hit = vec![false; total];
    let mut upsilon_ok = true;
    for mask in 0..total as u32 {
        let k = mask.count_ones() as usize;
        if 2 * k > n {
            continue;
        }
        let r = ReducedIndex::from_mask(mask, n);
        let up = upsilon(&r)?;
        let m = up.to_mask();
        upsilon_ok &= m == dec.upsilon_lookup(mask, &at)?
            && r.precedes(&up)
            && up.weight() == n - k
            && (2 * k != n || m == mask)
            && !std::mem::replace(&mut hit[m as usize], true);
    }
    let (lhs, rhs) = binomial_variance_identity(n as u32);

    let checks = vec![
        Check::new("partition", partition, format!("{total} vectors covered once")),
        Check::new("symmetric", symmetric, "bottom and top weights sum to N"),
        Check::new("covering", covering, "consecutive elements differ in one bit"),
        Check::new(
            "chain_count",
            chains == expected,
            format!("{chains} chains, binom({n},{}) = {expected}", n / 2),
        ),
        Check::new(
            "upsilon",
            upsilon_ok,
            "direct map agrees with chain lookup, is injective, dominates, fixes k = N/2",
        ),
        Check::new(
            "binomial_identity",
            lhs == rhs,
            format!("sum binom(N,k)(N-2k)^2 = {lhs}, N 2^N = {rhs}"),
        ),
    ];
    let mut table = Table::new(&["experiment", "N", "chains", "expected_chains", "vectors", "version"]);
    table.push(vec![
        "scd-check".into(),
        n.to_string(),
        chains.to_string(),
        expected.to_string(),
        total.to_string(),
        VERSION.into(),
    ]);
    let extra = if a.print.unwrap_or(false) {
        vec![(format!("scd-{n}.txt"), dec.to_string())]
    } else {
        Vec::new()
    };
    Ok(Outcome {
        experiment: "scd-check",
        params: json!({ "n": n }),
        results: json!({ "chains": chains as u64, "expected": expected as u64, "identity": [lhs.to_string(), rhs.to_string()] }),
        checks,
        table,
        extra,
    })
}
