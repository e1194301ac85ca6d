use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uld_core::dynamics::*;
use uld_core::noise::*;
use uld_core::potentials::*;
use uld_core::RngSpec;

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

/// `exp(H t)` by scaling, a 20-term Taylor series and repeated squaring.
fn expm_oracle(u: f64, lip: f64, t: f64) -> Mat2 {
    let squarings = 10;
    let s = t / f64::from(1 << squarings);
    let h = [[0.0, s], [-u / lip * s, -2.0 * s]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..=20 {
        term = mul(&term, &h);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        sum = mul(&sum, &sum);
    }
    sum
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / (2 * panels) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..2 * panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn semigroup_matches_series_oracle() {
    for &(u, lip) in &[(1.0, 4.0), (2.5, 4.0), (0.1, 1.0), (3.999, 4.0), (4.0, 4.0)] {
        for &t in &[0.0, 0.01, 0.5, 1.0, 3.0] {
            let got = semigroup(u, lip, t).unwrap();
            let want = expm_oracle(u, lip, t);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (got[i][j] - want[i][j]).abs() < 1e-10,
                        "u={u} t={t} ({i},{j}): {} vs {}",
                        got[i][j],
                        want[i][j]
                    );
                }
            }
        }
    }
}

#[test]
fn exact_moments_match_quadrature_of_impulse_response() {
    for &(u, lip, t) in &[(1.0, 4.0, 1.0), (3.0, 4.0, 5.0), (0.5, 1.0, 2.0)] {
        let resp = |s: f64| {
            let m = expm_oracle(u, lip, s);
            (m[0][1], m[1][1])
        };
        let scale = 4.0 / lip;
        let xx = scale * simpson(|s| resp(s).0.powi(2), 0.0, t, 4000);
        let xv = scale * simpson(|s| resp(s).0 * resp(s).1, 0.0, t, 4000);
        let vv = scale * simpson(|s| resp(s).1.powi(2), 0.0, t, 4000);
        let m = exact_moments(u, lip, t).unwrap();
        for (got, want) in [(m.cov[0][0], xx), (m.cov[0][1], xv), (m.cov[1][1], vv)] {
            assert!((got - want).abs() < 1e-9 * want.abs().max(1e-3), "{got} vs {want}");
        }
    }
}

#[test]
fn weighted_covariance_matches_quadrature() {
    for &(a, b, d) in &[(0.0, 0.0, 0.3), (2.0, 0.5, 1.0), (3.7, 0.02, 0.01), (1e-14, 0.0, 2.0)] {
        let want = simpson(|s| ((a + b) * (s - d)).exp(), 0.0, d, 4000);
        let got = weighted_covariance(a, b, d);
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn affine_step_noise_covariance_matches_quadrature() {
    let h = 0.3;
    for &tau in &[0.0, 0.05, 0.17, 0.3] {
        let step = rmm_affine_step(1.5, 4.0, h, tau);
        let mid = |s: f64| if s <= tau { 1.0 - (2.0 * (s - tau)).exp() } else { 0.0 };
        let full = |s: f64| 1.0 - (2.0 * (s - h)).exp();
        let weighted = |s: f64| (2.0 * (s - h)).exp();
        let kernels: [&dyn Fn(f64) -> f64; 3] = [&mid, &full, &weighted];
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == 0 || j == 0 {
                    simpson(|s| kernels[i](s) * kernels[j](s), 0.0, tau, 400)
                } else {
                    simpson(|s| kernels[i](s) * kernels[j](s), 0.0, h, 400)
                };
                assert!(
                    (step.q[i][j] - want).abs() < 1e-11,
                    "tau={tau} ({i},{j}) {} vs {want}",
                    step.q[i][j]
                );
            }
        }
    }
}

#[test]
fn exact_endpoint_matches_closed_form_integrals() {
    let (u, lip, horizon) = (1.0, 4.0, 1.0);
    let (lm, lp) = decay_rates(u, lip).unwrap();
    let grid = plan_grid(37, horizon, &[], &[0.123, 0.5, 0.777]).unwrap();
    let thetas = ExponentSet::new(&[lm, lp]).unwrap();
    let nr = sample_noise(grid, 2, &thetas, &RngSpec::new(11, 0)).unwrap();
    let run = exact_quadratic(u, lip, &nr, RunOptions::FINAL_ONLY).unwrap();
    let jm = nr.weighted_integral(0.0, horizon, lm, horizon).unwrap();
    let jp = nr.weighted_integral(0.0, horizon, lp, horizon).unwrap();
    let k = 1.0 / (lip - u).sqrt();
    for i in 0..2 {
        let x = k * (jm[i] - jp[i]);
        let v = k * (lp * jp[i] - lm * jm[i]);
        assert!((run.final_state.x[i] - x).abs() < 1e-12);
        assert!((run.final_state.v[i] - v).abs() < 1e-12);
    }
}

#[test]
fn exact_second_moment_monte_carlo() {
    let (u, lip, horizon) = (2.0, 4.0, 1.5);
    let (lm, lp) = decay_rates(u, lip).unwrap();
    let thetas = ExponentSet::new(&[lm, lp]).unwrap();
    let want = exact_moments(u, lip, horizon).unwrap();
    let samples = 20_000;
    let mut sx = Vec::with_capacity(samples);
    let mut sv = Vec::with_capacity(samples);
    for trial in 0..samples as u64 {
        let grid = plan_grid(4, horizon, &[], &[]).unwrap();
        let nr = sample_noise(grid, 1, &thetas, &RngSpec::new(5, trial)).unwrap();
        let s = exact_quadratic(u, lip, &nr, RunOptions::FINAL_ONLY).unwrap().final_state;
        sx.push(s.x[0] * s.x[0]);
        sv.push(s.v[0] * s.v[0]);
    }
    for (vals, target) in [(sx, want.cov[0][0]), (sv, want.cov[1][1])] {
        let (m, se) = uld_core::stats::mean_and_se(&vals);
        assert!((m - target).abs() < 5.0 * se, "{m} ± {se} vs {target}");
    }
}

#[test]
fn rmm_moments_match_propagated_oracle() {
    let (u, lip, horizon, steps) = (1.0, 4.0, 1.0, 4);
    let h = horizon / steps as f64;
    let want = moment_propagate_rmm_quadratic(u, lip, h, steps, 32).unwrap();
    let p = Quadratic::new(u, 1).unwrap();
    let thetas = ExponentSet::new(&[]).unwrap();
    let samples = 20_000;
    let mut xx = Vec::with_capacity(samples);
    let mut vv = Vec::with_capacity(samples);
    for trial in 0..samples as u64 {
        let rng = RngSpec::new(9, trial);
        let etas = uld_core::analysis::draw_etas(&rng, uld_core::StreamPurpose::Eta(0), steps);
        let grid = plan_grid(steps, horizon, &etas, &[]).unwrap();
        let nr = sample_noise(grid, 1, &thetas, &rng).unwrap();
        let s = rmm_integrate(&p, lip, steps, &nr, &etas, RunOptions::FINAL_ONLY)
            .unwrap()
            .final_state;
        xx.push(s.x[0] * s.x[0]);
        vv.push(s.v[0] * s.v[0]);
    }
    for (vals, target) in [(xx, want.cov[0][0]), (vv, want.cov[1][1])] {
        let (m, se) = uld_core::stats::mean_and_se(&vals);
        assert!((m - target).abs() < 5.0 * se, "{m} ± {se} vs {target}");
    }
}

#[test]
fn increments_have_target_covariance() {
    let thetas = ExponentSet::new(&[0.4, 1.6]).unwrap();
    let vals = thetas.values().to_vec();
    let m = vals.len();
    let delta = 0.7;
    let samples = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut acc = vec![0.0; m * m];
    let mut sq = vec![0.0; m * m];
    for _ in 0..samples {
        let grid = plan_grid(1, delta, &[], &[]).unwrap();
        let nr = sample_noise_with(grid, 1, &thetas, &mut rng).unwrap();
        for a in 0..m {
            for b in 0..m {
                let p = nr.increment(0, a)[0] * nr.increment(0, b)[0];
                acc[a * m + b] += p;
                sq[a * m + b] += p * p;
            }
        }
    }
    for a in 0..m {
        for b in 0..m {
            let mean = acc[a * m + b] / samples as f64;
            let var = sq[a * m + b] / samples as f64 - mean * mean;
            let se = (var / samples as f64).sqrt();
            let want = weighted_covariance(vals[a], vals[b], delta);
            assert!((mean - want).abs() < 5.0 * se, "({a},{b}) {mean} vs {want}");
        }
    }
}

#[test]
fn bump_peak_and_hessian_bounds() {
    let class = FunctionClass::new(1.0, 4.0).unwrap();
    let fam = AdversarialFamily::with_upper_curvature(&class, 2.5, 3.0, 0.02, 8).unwrap();
    let bump = fam.bump();
    let peak = (0..=10_000)
        .map(|i| bump.value(bump.width() * i as f64 / 10_000.0))
        .fold(0.0, f64::max);
    assert!((peak - fam.epsilon()).abs() < 1e-15);
    let (p0, p1) = bump.plateau();
    assert!(bump.value(p0) >= fam.epsilon() / 2.0 - 1e-18);
    assert!(bump.value(p1) >= fam.epsilon() / 2.0 - 1e-18);

    let p = fam.potential(BetaIndex::ones(8)).unwrap();
    let (lo, hi) = p.hessian_bounds();
    assert!(class.contains_bounds((lo, hi)));
    let h = 1e-7;
    for i in 0..4000 {
        let x = -0.012 + 0.024 * i as f64 / 4000.0;
        let d = (p.grad(&[x + h])[0] - p.grad(&[x - h])[0]) / (2.0 * h);
        assert!(d >= lo - 1e-5 && d <= hi + 1e-5, "x={x} d={d}");
    }

    let smooth = SmoothNonQuadratic::new(1.0, 4.0, 2, SmoothProfile::Sine).unwrap();
    let (lo, hi) = smooth.hessian_bounds();
    assert!(class.contains_bounds((lo, hi)));
    for i in 0..2000 {
        let x = -10.0 + 20.0 * i as f64 / 2000.0;
        let d = (smooth.grad(&[x + 1e-6, 0.0])[0] - smooth.grad(&[x - 1e-6, 0.0])[0]) / 2e-6;
        assert!(d >= lo - 1e-6 && d <= hi + 1e-6);
    }
}
