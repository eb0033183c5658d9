use std::fmt::Write as _;
use std::path::Path;

use hfactor::estimator::{fit, fit_quasi_likelihood, realised_cov, FitResult, RealisedCov};
use hfactor::hypothesis_test::{select_k, test_k, TestOptions, TrailEntry};
use hfactor::mc_harness::{self, Execution, Experiment};
use hfactor::model::{ModelSpec, ParamVector};
use hfactor::sde_sim::{io, simulate, DriftRegistry, SimConfig, SimConfigDoc};
use hfactor::{Error, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{self, EstimationConfig, Method};
use crate::manifest::{FileRecord, Manifest};
use crate::{exit, Cli, Command, Common, DataArgs, Format};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::UnknownDrift(_) => exit::CONFIG,
        Error::Untestable { .. } => exit::UNTESTABLE,
        Error::Optimizer(_) => exit::NOT_CONVERGED,
        _ => exit::FAILURE,
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate => cmd_simulate(c),
        Command::Rcov(d) => cmd_rcov(c, d),
        Command::Fit(d) => cmd_fit(c, d),
        Command::Test(d) => cmd_test(c, d),
        Command::Select(d) => cmd_select(c, d),
        Command::Experiment => cmd_experiment(c),
    }
}

fn set(doc: &mut Value, key: &str, value: impl Serialize) -> Result<()> {
    match doc {
        Value::Object(map) => {
            map.insert(key.to_string(), serde_json::to_value(value)?);
            Ok(())
        }
        _ => Err(Error::Config("config must be a JSON object".into())),
    }
}

fn required_out<'a>(c: &'a Common, command: &str) -> Result<&'a Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{command} needs --out")))
}

/// Writes `body` to `--out` with a sidecar manifest, or prints it to stdout.
/// On stdout a JSON body is wrapped together with the manifest; a CSV body
/// is printed as is and the manifest goes to stderr.
fn emit(c: &Common, mut manifest: Manifest, result: &impl Serialize, csv: String) -> Result<()> {
    let body = match c.format {
        Format::Json => serde_json::to_string_pretty(result)? + "\n",
        Format::Csv => csv,
    };
    match &c.out {
        Some(out) => {
            std::fs::write(out, &body)?;
            manifest.outputs.push(FileRecord::of(out)?);
            std::fs::write(Manifest::sidecar(out), manifest.to_json()?)?;
            log::info!("wrote {}", out.display());
        }
        None => match c.format {
            Format::Json => {
                let wrapped = serde_json::json!({ "result": result, "manifest": manifest });
                println!("{}", serde_json::to_string_pretty(&wrapped)?);
            }
            Format::Csv => {
                print!("{body}");
                eprint!("{}", manifest.to_json()?);
            }
        },
    }
    Ok(())
}

fn cmd_simulate(c: &Common) -> Result<u8> {
    let mut doc = config::resolve(c.config.as_deref(), &c.overrides)?;
    if let Some(seed) = c.seed {
        set(&mut doc, "seed", seed)?;
    }
    let sim: SimConfigDoc = config::parse(&doc, "simulation config")?;
    let cfg = SimConfig::from_doc(&sim, &DriftRegistry::default())?;
    let out = required_out(c, "simulate")?;
    let path = simulate(&cfg)?;
    io::save(&path, out)?;
    let mut manifest = Manifest::new("simulate", serde_json::to_value(&sim)?, Some(cfg.seed));
    manifest.outputs.push(FileRecord::of(out)?);
    std::fs::write(Manifest::sidecar(out), manifest.to_json()?)?;
    println!(
        "simulated n={} h={} T={} p={} ({} rows, seed {}) -> {}",
        cfg.spec.n,
        cfg.spec.h,
        cfg.spec.horizon(),
        cfg.spec.p,
        path.times.len(),
        cfg.seed,
        out.display()
    );
    Ok(exit::SUCCESS)
}

fn load_rcov(data: &Path, manifest: &mut Manifest) -> Result<RealisedCov> {
    let path = io::load(data)?;
    manifest.inputs.push(FileRecord::of(data)?);
    log::info!(
        "loaded {} observations of {} coordinates",
        path.times.len(),
        path.p()
    );
    realised_cov(&path)
}

fn cmd_rcov(c: &Common, d: &DataArgs) -> Result<u8> {
    let mut manifest = Manifest::new("rcov", Value::Null, None);
    let rc = load_rcov(&d.data, &mut manifest)?;
    let p = rc.dim();
    let mut csv = (1..=p)
        .map(|i| format!("x{i}"))
        .collect::<Vec<_>>()
        .join(",")
        + "\n";
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| format!("{:?}", rc.q[(i, j)])).collect();
        csv += &(row.join(",") + "\n");
    }
    emit(c, manifest, &rc, csv)?;
    Ok(exit::SUCCESS)
}

struct Prepared {
    est: EstimationConfig,
    spec: ModelSpec,
    rc: RealisedCov,
    init: Option<ParamVector>,
    manifest: Manifest,
}

fn prepare(c: &Common, d: &DataArgs, command: &'static str, needs_k: bool) -> Result<Prepared> {
    let mut doc = config::resolve(c.config.as_deref(), &c.overrides)?;
    if let Some(k) = d.k {
        set(&mut doc, "k", k)?;
    }
    let est: EstimationConfig = config::parse(&doc, "estimation config")?;
    let mut manifest = Manifest::new(command, serde_json::to_value(&est)?, None);
    let rc = load_rcov(&d.data, &mut manifest)?;
    let p = rc.dim();
    let k = match est.k {
        Some(k) => k,
        None if needs_k => {
            return Err(Error::Config(
                "missing field `k` (set it in the config or pass --k)".into(),
            ))
        }
        None => 1,
    };
    if command == "test" && (k == 0 || k >= p || formula_df(p, k) < 1) {
        return Err(Error::Untestable {
            k,
            df: formula_df(p, k),
        });
    }
    let spec = ModelSpec::new(p, k, est.regime, rc.n, rc.h)?;
    let init = est.init.as_ref().map(|i| i.to_params(p, k)).transpose()?;
    Ok(Prepared {
        est,
        spec,
        rc,
        init,
        manifest,
    })
}

/// `p(p+1)/2 - q_k` in signed arithmetic, meaningful for any `k`.
fn formula_df(p: usize, k: usize) -> i64 {
    let (p, k) = (p as i64, k as i64);
    p * (p + 1) / 2 - ((p - k) * k + k * (k + 1) / 2 + p)
}

fn fit_csv(f: &FitResult) -> String {
    let mut out = String::from("parameter,estimate,se\n");
    let theta = f.theta_hat.pack();
    for j in 0..theta.len() {
        let se = f.se.as_ref().map_or(f64::NAN, |s| s[j]);
        writeln!(out, "theta_{},{:?},{:?}", j + 1, theta[j], se).expect("writing to a String");
    }
    out
}

fn cmd_fit(c: &Common, d: &DataArgs) -> Result<u8> {
    let Prepared {
        est,
        spec,
        rc,
        init,
        manifest,
    } = prepare(c, d, "fit", true)?;
    let result = match est.method {
        Method::Contrast => fit(&rc, &spec, init.as_ref(), &est.fit)?,
        Method::QuasiLikelihood => fit_quasi_likelihood(&rc, &spec, init.as_ref(), &est.fit)?,
    };
    emit(c, manifest, &result.to_json(), fit_csv(&result))?;
    if !result.converged {
        eprintln!("fit did not converge: {}", result.message);
        return Ok(exit::NOT_CONVERGED);
    }
    Ok(exit::SUCCESS)
}

fn test_options(est: &EstimationConfig) -> TestOptions {
    TestOptions {
        alpha: est.alpha,
        df_override: est.df_override,
        fit: est.fit,
    }
}

const TEST_HEADER: &str = "k,statistic,df,alpha,critical,p_value,reject,converged\n";

fn test_row(t: &hfactor::hypothesis_test::TestResult) -> String {
    format!(
        "{},{:?},{},{:?},{:?},{:?},{},{}\n",
        t.k_star, t.statistic, t.df, t.alpha, t.critical, t.p_value, t.reject, t.fit.converged
    )
}

fn cmd_test(c: &Common, d: &DataArgs) -> Result<u8> {
    let Prepared {
        est,
        spec,
        rc,
        init,
        manifest,
    } = prepare(c, d, "test", true)?;
    let result = test_k(&rc, &spec, spec.k, init.as_ref(), &test_options(&est))?;
    emit(
        c,
        manifest,
        &result.to_json(),
        format!("{TEST_HEADER}{}", test_row(&result)),
    )?;
    log::info!(
        "T = {:.4}, critical {:.4}, reject = {}",
        result.statistic,
        result.critical,
        result.reject
    );
    if !result.fit.converged {
        eprintln!("fit did not converge: {}", result.fit.message);
        return Ok(exit::NOT_CONVERGED);
    }
    Ok(exit::SUCCESS)
}

fn cmd_select(c: &Common, d: &DataArgs) -> Result<u8> {
    let Prepared {
        est,
        spec,
        rc,
        manifest,
        ..
    } = prepare(c, d, "select", false)?;
    let result = select_k(&rc, &spec, &test_options(&est))?;
    let mut csv = String::from(TEST_HEADER);
    for entry in &result.trail {
        match entry {
            TrailEntry::Tested(t) => csv += &test_row(t),
            TrailEntry::Failed { k, .. } => csv += &format!("{k},,,,,,,false\n"),
        }
    }
    emit(c, manifest, &result.to_json(), csv)?;
    match result.chosen_k {
        Some(k) => log::info!("selected k = {k}"),
        None => log::info!("every testable k rejected: no factor structure"),
    }
    let decisive_converged = match result.trail.last() {
        Some(TrailEntry::Tested(t)) => t.fit.converged,
        _ => false,
    };
    Ok(if decisive_converged {
        exit::SUCCESS
    } else {
        exit::NOT_CONVERGED
    })
}

fn cmd_experiment(c: &Common) -> Result<u8> {
    let mut doc = config::resolve(c.config.as_deref(), &c.overrides)?;
    if let Some(seed) = c.seed {
        set(&mut doc, "seed_base", seed)?;
    }
    let exp: Experiment = config::parse(&doc, "experiment config")?;
    let out = required_out(c, "experiment")?;
    if c.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    log::info!(
        "running {} replications of `{}`",
        exp.replications,
        exp.name
    );
    let agg = mc_harness::run(&exp, Execution::Parallel { threads: c.threads })?;
    let files = mc_harness::write_outputs(&exp, &agg, out)?;
    for e in &agg.exclusions {
        if e.non_converged + e.failed > 0 {
            eprintln!(
                "k={}: excluded {} non-converged and {} failed fits",
                e.k, e.non_converged, e.failed
            );
        }
    }
    if !agg.failures.is_empty() {
        eprintln!("{} replications failed to simulate", agg.failures.len());
    }
    println!(
        "{} replications -> {} ({})",
        agg.replications,
        out.display(),
        files.join(", ")
    );
    Ok(exit::SUCCESS)
}
