//! Acceptance criteria 1–10, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::time::Instant;

use complex_time::counterexample::{
    lower_bound_experiment, omega_measure_exact, omega_star_lower, params_for, residue_error,
    sample_omega_star, select_time, BudgetPolicy, ExperimentConfig,
};
use complex_time::fit::loglog_fit;
use complex_time::maximal::{exponent_sweep, Family, Grids};
use complex_time::numbertheory::{
    abel_sum_identity, gauss_law_exhaustive, vitali_scaled_union, weyl_calibration, Cube, CubeFamily,
};
use complex_time::profiles::{CounterexampleParams, ModelParams};
use complex_time::propagator::{evaluate_p_gamma, factorized_evaluate, SpaceTimePoint};
use complex_time::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn gauss() -> Outcome {
    let s = gauss_law_exhaustive(256);
    Ok((
        s.failures == 0 && s.cases > 0,
        format!("{} cases, {} failures, max deviation {:.2e}", s.cases, s.failures, s.max_deviation),
    ))
}

fn weyl() -> Outcome {
    let short = weyl_calibration(64, 256).map_err(|e| e.to_string())?;
    let long = weyl_calibration(64, 4096).map_err(|e| e.to_string())?;
    Ok((
        long.rho_star < 2.0 * short.rho_star,
        format!("ρ*(N ≤ 4096) = {:.4}, ρ*(N ≤ 256) = {:.4}", long.rho_star, short.rho_star),
    ))
}

fn abel() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..300);
        let m = rng.gen_range(-500..500);
        let a: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let (w, k) = (rng.gen_range(0.0..0.2), rng.gen_range(-1.0..1.0));
        let sides = abel_sum_identity(&a, |u| C64::from_polar((-w * (u - m as f64) / n as f64).exp(), k * u), m)
            .map_err(|e| e.to_string())?;
        worst = worst.max((sides.lhs - sides.rhs).norm());
    }
    Ok((worst <= 1e-12, format!("max |lhs − rhs| = {worst:.2e}")))
}

fn vitali() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for i in 0..1000 {
        let k = 1 + i % 2;
        let count = rng.gen_range(1..25);
        let cubes = (0..count)
            .map(|_| Cube {
                center: (0..k).map(|_| rng.gen_range(0.0..10.0)).collect(),
                side: rng.gen_range(0.05..3.0),
            })
            .collect();
        let fam = CubeFamily {
            cubes,
            c: rng.gen_range(0.01..0.99),
        };
        let out = vitali_scaled_union(&fam).map_err(|e| e.to_string())?;
        if !out.holds {
            violations += 1;
        }
        tightest = tightest.min(out.scaled_union_measure / out.bound);
    }
    Ok((
        violations == 0,
        format!("{violations} violations, smallest scaled/bound = {tightest:.3}"),
    ))
}

fn oracle() -> Outcome {
    let cp = CounterexampleParams::with_defaults(ModelParams::new(2, 2.0, 256.0, 0.0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let f = cp.descriptor().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let (lo, hi) = cp.x1_window();
    let c1 = cp.constants.c1;
    let tau = cp.constants.c2 * cp.r().powf(-1.5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x1 = rng.gen_range(lo..hi);
        let x = vec![x1, rng.gen_range(-c1..c1)];
        let t = -x1 / (2.0 * cp.comb.height) + rng.gen_range(-tau..tau);
        let p = SpaceTimePoint::new(x, t).map_err(|e| e.to_string())?;
        let fe = factorized_evaluate(&cp, &p).map_err(|e| e.to_string())?;
        let direct = evaluate_p_gamma(&f, 2.0, &p).map_err(|e| e.to_string())?.norm() * (2.0 * PI).powi(2);
        worst = worst.max((fe.product_modulus - direct).abs() / direct);
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e} over 20 points")))
}

fn sobolev() -> Outcome {
    let ladder: Vec<f64> = (0..6).map(|k| 2f64.powi(12 + 2 * k)).collect();
    let (d, gamma) = (2.0, 2.0);
    let mut parts = Vec::new();
    let mut pass = true;
    for s in [0.0, 0.5] {
        let norms = ladder
            .iter()
            .map(|&r| {
                params_for(2, gamma, r, s, None)
                    .and_then(|cp| cp.descriptor())
                    .and_then(|f| f.sobolev_norm(s))
            })
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| e.to_string())?;
        let slope = loglog_fit(&ladder, &norms).map_err(|e| e.to_string())?.slope;
        let predicted = -0.25 + (d - 1.0) / 2.0 * (gamma / 2.0 - (d + gamma) / (2.0 * (d + 1.0))) + gamma * s / 2.0;
        pass &= (slope - predicted).abs() <= 0.02;
        parts.push(format!("s = {s}: slope {slope:.4} vs {predicted:.4}"));
    }
    Ok((pass, parts.join("; ")))
}

fn experiment(s: f64) -> Result<complex_time::counterexample::LowerBoundReport, String> {
    let cfg = ExperimentConfig {
        d: 2,
        gamma: 2.0,
        s,
        ladder: (16..=24).map(|k| 2f64.powi(k)).collect(),
        n_samples: 10_000,
        seed: 7,
        constants: None,
        c_delta0: None,
        budget: BudgetPolicy::Record,
    };
    let rep = lower_bound_experiment(&cfg).map_err(|e| e.to_string())?;
    if let Some(f) = &rep.failure {
        return Err(f.clone());
    }
    Ok(rep)
}

fn lower_bound() -> Outcome {
    let rep = experiment(0.0)?;
    let ratio_ok = rep.ratio_slope >= rep.ratio_target - 0.1;
    let modulus_ok = (rep.modulus_slope - rep.modulus_target).abs() <= 0.1;
    let admissible = rep.records.iter().filter(|r| r.admissible).count();
    Ok((
        ratio_ok && modulus_ok,
        format!(
            "ratio slope {:.4} (≥ {:.4}), modulus slope {:.4} (1/4 ± 0.1); error budget admissible at {admissible}/{} R",
            rep.ratio_slope,
            rep.ratio_target - 0.1,
            rep.modulus_slope,
            rep.records.len()
        ),
    ))
}

fn threshold() -> Outcome {
    let rep = experiment(1.0 / 3.0)?;
    Ok((rep.ratio_slope <= 0.1, format!("ratio slope {:.4} at s = 1/3", rep.ratio_slope)))
}

fn upper_bound() -> Outcome {
    let ladder: Vec<f64> = (4..=7).map(|k| 2f64.powi(k)).collect();
    let rep = exponent_sweep(Family::Case1, 2, 0.5, &ladder, Grids::for_scale).map_err(|e| e.to_string())?;
    let ratios: Vec<String> = rep.entries.iter().map(|e| format!("{:.4}", e.ratio)).collect();
    Ok((
        rep.fitted_slope <= 0.1 && rep.failure.is_none(),
        format!("slope {:.4}, ratios [{}]", rep.fitted_slope, ratios.join(", ")),
    ))
}

fn measure_chain() -> Outcome {
    let cp = params_for(2, 2.0, 2f64.powi(16), 0.0, None).map_err(|e| e.to_string())?;
    let draw = sample_omega_star(&cp, 10_000, 13).map_err(|e| e.to_string())?;
    let dd = cp.spacing();
    let mut worst: f64 = 0.0;
    for s in &draw.samples {
        worst = worst.max(s.check(&cp).map_err(|e| e.to_string())?);
        let t = select_time(&cp, s).map_err(|e| e.to_string())?.t;
        worst = worst.max(residue_error(dd * dd * t, s.anchor.centers()[0]));
    }
    let bound = omega_star_lower(&cp, omega_measure_exact(&cp).map_err(|e| e.to_string())?);
    let upper = draw.measure_estimate + draw.measure_ci95;
    Ok((
        draw.samples.len() == 10_000 && worst <= 1e-9 && upper >= bound,
        format!(
            "max residue {worst:.1e}; |Ω*| ≈ {:.3e} ± {:.1e} vs bound {bound:.3e}",
            draw.measure_estimate, draw.measure_ci95
        ),
    ))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("Gauss-sum law", 10.0, gauss),
        ("Weyl-sum shape", 60.0, weyl),
        ("Abel identity", 5.0, abel),
        ("Vitali bound", 60.0, vitali),
        ("Oracle equivalence", 600.0, oracle),
        ("Sobolev scaling", 60.0, sobolev),
        ("Counterexample lower bound", 900.0, lower_bound),
        ("Threshold neutralization", 900.0, threshold),
        ("Upper-bound sanity", 1800.0, upper_bound),
        ("Congruence/measure chain", 300.0, measure_chain),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs <= *limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {n:>2}. {name}: {detail} [{secs:.1} s, limit {limit:.0} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
