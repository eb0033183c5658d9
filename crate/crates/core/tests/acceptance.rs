//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use hfactor::estimator::{contrast, contrast_grad, ParamBounds, RealisedCov, Weighting};
use hfactor::matrixcalc::{duplication, duplication_pinv, vec, vech, SymMatrix};
use hfactor::mc_harness::{
    figure_data, run, theoretical_sd_table, write_outputs, Aggregate, Execution, Experiment,
    InitChoice, Outputs, TableKind,
};
use hfactor::model::{sigma_of_theta, ParamVector, Regime};
use hfactor::two_factor_design;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, p: usize) -> SymMatrix {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-10.0..10.0));
    SymMatrix::from_lower(&(&m + m.transpose()))
}

fn matrix_calculus() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for p in 1..=8 {
        let d = duplication(p);
        let dp = d.matrix();
        let pinv = duplication_pinv(&d);
        let eye = DMatrix::<f64>::identity(dp.ncols(), dp.ncols());
        worst = worst.max((&pinv * dp - eye).amax());
        for _ in 0..100 {
            let a = random_symmetric(&mut rng, p);
            let (va, vha) = (vec(a.as_matrix()), vech(&a));
            worst = worst.max((dp * &vha - &va).amax());
            worst = worst.max((&pinv * &va - &vha).amax());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 1.0,
        format!("max error {worst:.1e}, {secs:.3} s"),
    )
}

fn sigma_golden() -> Outcome {
    let sigma = sigma_of_theta(&two_factor_design(1000, 1e-3, Regime::NonErgodic, 0).truth());
    let expected = [
        [17.0, 13.0, 52.0, 78.0, 39.0, -13.0],
        [13.0, 42.0, 65.0, 143.0, -13.0, 13.0],
        [52.0, 65.0, 246.0, 377.0, 104.0, -26.0],
        [78.0, 143.0, 377.0, 794.0, -26.0, 52.0],
        [39.0, -13.0, 104.0, -26.0, 334.0, -143.0],
        [-13.0, 13.0, -26.0, 52.0, -143.0, 69.0],
    ];
    let worst = (0..6)
        .flat_map(|i| (0..6).map(move |j| (i, j)))
        .map(|(i, j)| (sigma[(i, j)] - expected[i][j]).abs())
        .fold(0.0f64, f64::max);
    check(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn theoretical_sd_column() -> Outcome {
    let published = [
        0.024, 0.030, 0.083, 0.140, 0.085, 0.037, 0.059, 0.121, 0.232, 0.119, 0.055, 0.348, 0.581,
        0.305, 0.133, 1.123, 0.516, 0.240, 0.472, 0.209, 0.098,
    ];
    let cfg = two_factor_design(1_000_000, 1e-4, Regime::Ergodic, 0);
    let (qxx, _) = theoretical_sd_table(&cfg.truth(), &cfg.spec).map_err(|e| e.to_string())?;
    let rounded = |x: f64| (x * 1000.0).round() / 1000.0;
    let mismatches: Vec<String> = qxx
        .iter()
        .zip(published)
        .filter(|(row, value)| (row.theoretical_sd - value).abs() > 0.0005 + 1e-9)
        .map(|(row, value)| format!("{} {:.4} vs {value}", row.statistic, row.theoretical_sd))
        .collect();
    let headline =
        rounded(qxx[0].theoretical_sd) == 0.024 && rounded(qxx[1].theoretical_sd) == 0.030;
    check(
        headline && mismatches.is_empty() && qxx.len() == 21,
        format!(
            "Q_11 {:.4}, Q_21 {:.4}, {} of 21 outside rounding {:?}",
            qxx[0].theoretical_sd,
            qxx[1].theoretical_sd,
            mismatches.len(),
            mismatches
        ),
    )
}

fn random_interior(rng: &mut ChaCha8Rng, p: usize, k: usize) -> ParamVector {
    let a = DMatrix::from_fn(p - k, k, |_, _| rng.random_range(-3.0..3.0));
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let ff = SymMatrix::from_lower(
        &(&g * g.transpose() + DMatrix::identity(k, k) * rng.random_range(0.5..3.0)),
    );
    let ee = DVector::from_fn(p, |_, _| rng.random_range(0.5..4.0));
    ParamVector::new(a, ff, ee).expect("valid parameter")
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (p, k) in [(3, 1), (6, 2)] {
        for _ in 0..20 {
            let truth = random_interior(&mut rng, p, k);
            let noise = random_symmetric(&mut rng, p).into_matrix() * 0.05;
            let q = RealisedCov {
                q: SymMatrix::from_lower(&(sigma_of_theta(&truth).into_matrix() + noise)),
                n: 1000,
                h: 1e-3,
            };
            let theta = random_interior(&mut rng, p, k);
            let x = theta.pack();
            let g = contrast_grad(&q, &theta).map_err(|e| e.to_string())?;
            let f =
                |v: &DVector<f64>| contrast(&q, &ParamVector::unpack(v, p, k).unwrap()).unwrap();
            let fd = DVector::from_fn(x.len(), |j, _| {
                let step = 1e-5 * x[j].abs().max(1.0);
                let mut up = x.clone();
                let mut down = x.clone();
                up[j] += step;
                down[j] -= step;
                (f(&up) - f(&down)) / (2.0 * step)
            });
            worst = worst.max((&g - &fd).norm() / g.norm().max(1e-12));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-5 && secs < 10.0,
        format!("max relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn reference_experiment(replications: usize) -> Experiment {
    Experiment {
        name: "non-ergodic reference".into(),
        sim: two_factor_design(1000, 1e-3, Regime::NonErgodic, 0).to_doc(),
        replications,
        seed_base: 20_240_601,
        k_grid: vec![1, 2],
        alphas: vec![0.05],
        init: InitChoice::Truth,
        bounds: ParamBounds::default(),
        weighting: Weighting::Iterated,
        df_override: BTreeMap::new(),
        outputs: Outputs {
            tables: TableKind::ALL.to_vec(),
            figures: vec!["theta_1".into(), "T_2".into()],
        },
        retain_draws: true,
    }
}

fn non_ergodic_replication(agg: &Aggregate, secs: f64) -> Outcome {
    let q11 = agg.summary("Q_11").ok_or("Q_11 missing")?;
    let th1 = agg.summary("theta_1").ok_or("theta_1 missing")?;
    let within_se = |r: &hfactor::mc_harness::SummaryRow| {
        (r.sample_mean - r.true_value).abs() <= 3.0 * r.sample_sd / (r.count as f64).sqrt()
    };
    let sd_ok = |r: &hfactor::mc_harness::SummaryRow, published: f64| {
        (r.theoretical_sd - published).abs() <= 1e-3
            && (r.sample_sd / published - 1.0).abs() <= 0.10
    };
    let ok =
        within_se(q11) && within_se(th1) && sd_ok(q11, 0.760) && sd_ok(th1, 0.109) && secs < 600.0;
    check(
        ok,
        format!(
            "Q_11 mean {:.3} sd {:.3} (theory {:.3}); theta_1 mean {:.4} sd {:.4} (theory {:.4}) over {} fits; {secs:.1} s",
            q11.sample_mean,
            q11.sample_sd,
            q11.theoretical_sd,
            th1.sample_mean,
            th1.sample_sd,
            th1.theoretical_sd,
            th1.count
        ),
    )
}

fn test_calibration(agg: &Aggregate) -> Outcome {
    let t = agg.summary("T_2").ok_or("T_2 missing")?;
    let rej = agg
        .rejections
        .iter()
        .find(|r| r.k == 2 && r.alpha == 0.05)
        .ok_or("no k=2 rejections")?;
    let rate = rej.rejections as f64 / rej.used as f64;
    let excl = agg
        .exclusions
        .iter()
        .find(|e| e.k == 2)
        .ok_or("no k=2 exclusions")?;
    check(
        (t.sample_mean - 4.0).abs() <= 0.27 && (t.sample_sd - 2.828).abs() <= 0.3 && (0.03..=0.07).contains(&rate),
        format!(
            "mean {:.3}, sd {:.3}, rejections {}/{} = {rate:.3}; excluded {} non-converged, {} failed",
            t.sample_mean, t.sample_sd, rej.rejections, rej.used, excl.non_converged, excl.failed
        ),
    )
}

fn test_consistency(agg: &Aggregate) -> Outcome {
    let rej = agg
        .rejections
        .iter()
        .find(|r| r.k == 1)
        .ok_or("no k=1 rejections")?;
    let median = agg
        .quartiles
        .iter()
        .find(|q| q.statistic == "T_1")
        .ok_or("no T_1 quartiles")?
        .values[2];
    check(
        rej.rejections == agg.replications && median > 1000.0,
        format!(
            "{}/{} rejections, median T_1 {median:.0}",
            rej.rejections, agg.replications
        ),
    )
}

fn distributional_shape(agg: &Aggregate) -> Outcome {
    let theta = figure_data(agg, "theta_1").map_err(|e| e.to_string())?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sorted = hfactor::stats::sorted(&theta.standardized);
    let r = sorted.len() as f64;
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = normal.cdf(z);
            (f - i as f64 / r).abs().max((f - (i + 1) as f64 / r).abs())
        })
        .fold(0.0f64, f64::max);
    let band = 1.63 / r.sqrt();
    let t2 = figure_data(agg, "T_2").map_err(|e| e.to_string())?;
    let slope = t2.qq_slope();
    check(
        ks < band && (0.9..=1.1).contains(&slope),
        format!("KS {ks:.4} (band {band:.4}), T_2 QQ slope {slope:.3}"),
    )
}

fn ergodic_scaling() -> Outcome {
    let sizes = [625usize, 2500, 10_000];
    let mut sds = Vec::new();
    for &n in &sizes {
        let exp = Experiment {
            name: format!("ergodic n={n}"),
            sim: two_factor_design(n, 1e-2, Regime::Ergodic, 0).to_doc(),
            replications: 500,
            seed_base: 77 + n as u64,
            k_grid: vec![2],
            alphas: vec![0.05],
            init: InitChoice::Truth,
            bounds: ParamBounds::default(),
            weighting: Weighting::Iterated,
            df_override: BTreeMap::new(),
            outputs: Outputs::default(),
            retain_draws: false,
        };
        let agg = run(&exp, Execution::Parallel { threads: None }).map_err(|e| e.to_string())?;
        sds.push(agg.theta.iter().map(|r| r.sample_sd).collect::<Vec<f64>>());
    }
    let mut failures = Vec::new();
    let mut ratios = Vec::new();
    for w in 0..sizes.len() - 1 {
        let expected = (sizes[w + 1] as f64 / sizes[w] as f64).sqrt();
        for (j, (small, large)) in sds[w].iter().zip(&sds[w + 1]).enumerate() {
            let ratio = small / large;
            ratios.push(ratio / expected);
            if !(large < small && (ratio / expected - 1.0).abs() <= 0.20) {
                failures.push(format!(
                    "theta_{} n={}->{}: ratio {ratio:.3}",
                    j + 1,
                    sizes[w],
                    sizes[w + 1]
                ));
            }
        }
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    check(
        failures.is_empty(),
        format!(
            "n = {sizes:?}, R = 500; SD ratio / sqrt(n ratio) in [{lo:.3}, {hi:.3}] over all 17 parameters {failures:?}"
        ),
    )
}

fn determinism(exp: &Experiment, serial: &Aggregate) -> Outcome {
    let parallel = run(exp, Execution::Parallel { threads: Some(4) }).map_err(|e| e.to_string())?;
    let rerun = run(exp, Execution::Parallel { threads: None }).map_err(|e| e.to_string())?;
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut files = Vec::new();
    for (dir, agg) in dirs.iter().zip([serial, &parallel, &rerun]) {
        files = write_outputs(exp, agg, dir.path()).map_err(|e| e.to_string())?;
    }
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            (1..3).any(|d| std::fs::read(dirs[d].path().join(f)).unwrap() != a)
        })
        .collect();
    check(
        differing.is_empty(),
        format!("{} files compared across serial, 4-thread and default-pool runs; differing {differing:?}", files.len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "matrix calculus identities", matrix_calculus()),
        (2, "Sigma(theta_0) golden values", sigma_golden()),
        (3, "theoretical SD column of Q_XX", theoretical_sd_column()),
        (
            4,
            "contrast gradient vs finite differences",
            gradient_check(),
        ),
    ];

    let exp = reference_experiment(1000);
    let start = Instant::now();
    let agg = run(&exp, Execution::Serial);
    let secs = start.elapsed().as_secs_f64();
    match &agg {
        Ok(agg) => {
            results.push((
                5,
                "non-ergodic replication, Q_11 and theta_1",
                non_ergodic_replication(agg, secs),
            ));
            results.push((
                6,
                "calibration of T_2 under the null",
                test_calibration(agg),
            ));
            results.push((
                7,
                "consistency of T_1 under the alternative",
                test_consistency(agg),
            ));
            results.push((
                8,
                "normality of theta_1 and chi-squared shape of T_2",
                distributional_shape(agg),
            ));
        }
        Err(e) => {
            for (i, name) in [
                (5, "non-ergodic replication"),
                (6, "calibration"),
                (7, "consistency"),
                (8, "shape"),
            ] {
                results.push((i, name, Err(format!("experiment failed: {e}"))));
            }
        }
    }
    results.push((
        9,
        "sqrt(n) shrinkage in the ergodic regime",
        ergodic_scaling(),
    ));
    results.push((
        10,
        "byte-identical outputs, serial and parallel",
        agg.as_ref()
            .map_err(|e| e.to_string())
            .and_then(|a| determinism(&exp, a)),
    ));

    let mut failed = 0;
    for (i, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS [{i:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{i:>2}] {name}: {detail}")
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
