//! Monte Carlo replication: simulate, estimate and test `R` times, then
//! aggregate into tables and figure data.
//!
//! Replication `r` is simulated with seed `replication_seed(seed_base, r)`,
//! so results do not depend on scheduling. Draws are kept in replication
//! order and reduced with pairwise summation, which makes serial and
//! parallel runs bit-identical.
//!
//! CSV floats use Rust's shortest round-trip form, switching to exponent
//! notation for very large or small magnitudes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chi2::{chi2_cdf, chi2_inverse_cdf, chi2_quantile};
use crate::error::{Error, Result};
use crate::estimator::{realised_cov, FitOptions, ParamBounds, RealisedCov, Weighting};
use crate::hypothesis_test::{test_df, test_k, TestOptions};
use crate::matrixcalc::{vech, vech_pair, SymMatrix};
use crate::model::{weight_matrix, CovStructure, ModelSpec, ParamVector};
use crate::sde_sim::{rng::replication_seed, simulate, DriftRegistry, SimConfig, SimConfigDoc};
use crate::stats;

/// Starting point of the fits for the generating factor count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    /// The generating parameter.
    #[default]
    Truth,
    /// The data-driven default start.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Qxx,
    Theta,
    Statistics,
    Rejections,
    Quartiles,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        TableKind::Qxx,
        TableKind::Theta,
        TableKind::Statistics,
        TableKind::Rejections,
        TableKind::Quartiles,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            TableKind::Qxx => "qxx.csv",
            TableKind::Theta => "theta.csv",
            TableKind::Statistics => "statistics.csv",
            TableKind::Rejections => "rejections.csv",
            TableKind::Quartiles => "quartiles.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Outputs {
    pub tables: Vec<TableKind>,
    /// Statistic names (`Q_ij`, `theta_j`, `T_k`) to export as figure data.
    pub figures: Vec<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            tables: TableKind::ALL.to_vec(),
            figures: Vec::new(),
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    #[serde(default)]
    pub name: String,
    /// Simulation template; its `seed` is replaced per replication.
    pub sim: SimConfigDoc,
    pub replications: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Factor counts to test; defaults to the generating `k`.
    #[serde(default)]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub init: InitChoice,
    #[serde(default)]
    pub bounds: ParamBounds,
    #[serde(default)]
    pub weighting: Weighting,
    /// Reference degrees of freedom per tested `k`.
    #[serde(default)]
    pub df_override: BTreeMap<usize, u32>,
    #[serde(default)]
    pub outputs: Outputs,
    /// Keep every draw in the aggregate (always on when figures are requested).
    #[serde(default)]
    pub retain_draws: bool,
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn k_grid(&self) -> Vec<usize> {
        if self.k_grid.is_empty() {
            vec![self.sim.model.k]
        } else {
            self.k_grid.clone()
        }
    }

    /// Checks everything that can be checked before simulating.
    pub fn validate(&self, registry: &DriftRegistry) -> Result<SimConfig> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be ≥ 1".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config(
                "alphas must be non-empty and lie in (0, 1)".into(),
            ));
        }
        let cfg = SimConfig::from_doc(&self.sim, registry)?;
        for k in self.k_grid() {
            if k == 0 || k >= cfg.spec.p {
                return Err(Error::Config(format!(
                    "k_grid entry {k} outside 1..{}",
                    cfg.spec.p
                )));
            }
            test_df(cfg.spec.p, k, None).map_err(|e| Error::Config(e.to_string()))?;
        }
        for k in self.df_override.keys() {
            if !self.k_grid().contains(k) {
                return Err(Error::Config(format!(
                    "df_override given for k={k}, which is not in k_grid"
                )));
            }
        }
        for name in &self.outputs.figures {
            let known = reference_for(name, &cfg.spec, &self.df_override).is_some();
            if !known {
                return Err(Error::Config(format!("unknown figure statistic `{name}`")));
            }
        }
        Ok(cfg)
    }

    fn test_options(&self, k: usize) -> TestOptions {
        TestOptions {
            alpha: self.alphas[0],
            df_override: self.df_override.get(&k).copied(),
            fit: FitOptions {
                bounds: self.bounds,
                weighting: self.weighting,
                ..FitOptions::default()
            },
        }
    }
}

/// Serial or parallel execution of the replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// Rayon; `None` uses the global pool.
    Parallel {
        threads: Option<usize>,
    },
}

/// Test outcome of one replication for one `k`.
#[derive(Debug, Clone)]
struct KOutcome {
    statistic: f64,
    converged: bool,
    theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct ReplicationOutcome {
    qxx: Vec<f64>,
    per_k: Vec<std::result::Result<KOutcome, String>>,
}

fn replicate(
    exp: &Experiment,
    base: &SimConfig,
    ks: &[usize],
    r: usize,
) -> std::result::Result<ReplicationOutcome, String> {
    let cfg = base.with_seed(replication_seed(exp.seed_base, r as u64));
    let path = simulate(&cfg).map_err(|e| e.to_string())?;
    let q = realised_cov(&path).map_err(|e| e.to_string())?;
    let truth = cfg.truth();
    let per_k = ks
        .iter()
        .map(|&k| one_test(exp, &cfg.spec, &truth, &q, k).map_err(|e| e.to_string()))
        .collect();
    Ok(ReplicationOutcome {
        qxx: vech(&q.q).iter().copied().collect(),
        per_k,
    })
}

fn one_test(
    exp: &Experiment,
    spec: &ModelSpec,
    truth: &ParamVector,
    q: &RealisedCov,
    k: usize,
) -> Result<KOutcome> {
    let generating = k == spec.k;
    let init = (generating && exp.init == InitChoice::Truth).then_some(truth);
    let t = test_k(q, spec, k, init, &exp.test_options(k))?;
    Ok(KOutcome {
        statistic: t.statistic,
        converged: t.fit.converged,
        theta: generating.then(|| t.fit.theta_hat.pack().iter().copied().collect()),
    })
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub statistic: String,
    pub sample_mean: f64,
    pub true_value: f64,
    pub sample_sd: f64,
    pub theoretical_sd: f64,
    /// Number of draws behind the sample moments.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub k: usize,
    pub alpha: f64,
    pub df: u32,
    pub critical: f64,
    pub rejections: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub statistic: String,
    /// Min, first quartile, median, third quartile, max.
    pub values: [f64; 5],
}

/// Per-`k` bookkeeping of excluded replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub k: usize,
    pub non_converged: usize,
    pub failed: usize,
}

/// Reference law of a statistic, used to standardize figure data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Reference {
    Normal { mean: f64, sd: f64 },
    ChiSquared { df: u32 },
}

impl Reference {
    pub fn mean(&self) -> f64 {
        match *self {
            Reference::Normal { mean, .. } => mean,
            Reference::ChiSquared { df } => df as f64,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Reference::Normal { sd, .. } => sd,
            Reference::ChiSquared { df } => (2.0 * df as f64).sqrt(),
        }
    }
}

/// Aggregated Monte Carlo results.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub replications: usize,
    /// Replications whose simulation failed, with the reason.
    pub failures: Vec<(usize, String)>,
    pub qxx: Vec<SummaryRow>,
    pub theta: Vec<SummaryRow>,
    pub statistics: Vec<SummaryRow>,
    pub rejections: Vec<RejectionRow>,
    pub quartiles: Vec<QuartileRow>,
    pub exclusions: Vec<Exclusions>,
    /// Draws by statistic name, in replication order.
    pub draws: BTreeMap<String, Vec<f64>>,
    pub references: BTreeMap<String, Reference>,
}

pub fn qxx_name(i: usize, j: usize) -> String {
    format!("Q_{}{}", i + 1, j + 1)
}

pub fn theta_name(j: usize) -> String {
    format!("theta_{}", j + 1)
}

pub fn statistic_name(k: usize) -> String {
    format!("T_{k}")
}

/// Theoretical standard deviations at sample size `spec.n`: `sqrt(W_ii / n)`
/// for `vech Q_XX` and `sqrt(avar_jj / n)` for `theta_hat`.
pub fn theoretical_sd_table(
    truth: &ParamVector,
    spec: &ModelSpec,
) -> Result<(Vec<SummaryRow>, Vec<SummaryRow>)> {
    let sigma = truth.sigma();
    let w = weight_matrix(&sigma)?;
    let avar = CovStructure::at(truth)?.asymptotic_covariance()?;
    Ok(sd_rows(truth, spec, Some(&w), Some(&avar)))
}

/// Like [`theoretical_sd_table`], but a truth on the boundary (singular
/// `Sigma` or Jacobian) yields NaN theoretical SDs instead of an error.
fn summary_templates(truth: &ParamVector, spec: &ModelSpec) -> (Vec<SummaryRow>, Vec<SummaryRow>) {
    let w = weight_matrix(&truth.sigma()).ok();
    let avar = CovStructure::at(truth)
        .and_then(|c| c.asymptotic_covariance())
        .ok();
    sd_rows(truth, spec, w.as_ref(), avar.as_ref())
}

fn sd_rows(
    truth: &ParamVector,
    spec: &ModelSpec,
    w: Option<&SymMatrix>,
    avar: Option<&SymMatrix>,
) -> (Vec<SummaryRow>, Vec<SummaryRow>) {
    let n = spec.n as f64;
    let sd = |m: Option<&SymMatrix>, i: usize| m.map_or(f64::NAN, |m| (m[(i, i)] / n).sqrt());
    let row = |statistic: String, true_value: f64, theoretical_sd: f64| SummaryRow {
        statistic,
        sample_mean: f64::NAN,
        true_value,
        sample_sd: f64::NAN,
        theoretical_sd,
        count: 0,
    };
    let s_vech = vech(&truth.sigma());
    let qxx = (0..s_vech.len())
        .map(|pos| {
            let (i, j) = vech_pair(pos, spec.p);
            row(qxx_name(i, j), s_vech[pos], sd(w, pos))
        })
        .collect();
    let theta0 = truth.pack();
    let theta = (0..theta0.len())
        .map(|j| row(theta_name(j), theta0[j], sd(avar, j)))
        .collect();
    (qxx, theta)
}

fn reference_for(
    name: &str,
    spec: &ModelSpec,
    df_override: &BTreeMap<usize, u32>,
) -> Option<Reference> {
    if let Some(k) = name
        .strip_prefix("T_")
        .and_then(|s| s.parse::<usize>().ok())
    {
        return test_df(spec.p, k, df_override.get(&k).copied())
            .ok()
            .map(|df| Reference::ChiSquared { df });
    }
    // Normal references need the truth; only the name is validated here.
    let in_range = |s: &str, max: usize| s.parse::<usize>().is_ok_and(|j| (1..=max).contains(&j));
    if let Some(j) = name.strip_prefix("theta_") {
        return in_range(j, spec.q()).then_some(Reference::Normal { mean: 0.0, sd: 1.0 });
    }
    if let Some(ij) = name.strip_prefix("Q_") {
        let ok = ij.len() == 2 && {
            let (a, b) = ij.split_at(1);
            in_range(a, spec.p.min(9)) && in_range(b, spec.p.min(9)) && a >= b
        };
        return ok.then_some(Reference::Normal { mean: 0.0, sd: 1.0 });
    }
    None
}

fn summarize(template: &SummaryRow, draws: &[f64]) -> SummaryRow {
    SummaryRow {
        sample_mean: stats::mean(draws),
        sample_sd: stats::sample_sd(draws),
        count: draws.len(),
        ..template.clone()
    }
}

/// Runs the experiment with the built-in drift registry.
pub fn run(exp: &Experiment, exec: Execution) -> Result<Aggregate> {
    run_with_registry(exp, &DriftRegistry::default(), exec)
}

pub fn run_with_registry(
    exp: &Experiment,
    registry: &DriftRegistry,
    exec: Execution,
) -> Result<Aggregate> {
    let base = exp.validate(registry)?;
    let ks = exp.k_grid();
    let job = |r: usize| replicate(exp, &base, &ks, r);
    let outcomes: Vec<_> = match exec {
        Execution::Serial => (0..exp.replications).map(job).collect(),
        Execution::Parallel { threads: None } => {
            (0..exp.replications).into_par_iter().map(job).collect()
        }
        Execution::Parallel { threads: Some(t) } => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a pool of {t} threads: {e}")))?
            .install(|| (0..exp.replications).into_par_iter().map(job).collect()),
    };
    aggregate(exp, &base, &ks, outcomes)
}

fn aggregate(
    exp: &Experiment,
    base: &SimConfig,
    ks: &[usize],
    outcomes: Vec<std::result::Result<ReplicationOutcome, String>>,
) -> Result<Aggregate> {
    let spec = base.spec;
    let truth = base.truth();
    let (qxx_rows, theta_rows) = summary_templates(&truth, &spec);

    let mut failures = Vec::new();
    let mut qxx_draws = vec![Vec::new(); qxx_rows.len()];
    let mut theta_draws = vec![Vec::new(); theta_rows.len()];
    let mut stat_draws = vec![Vec::new(); ks.len()];
    let mut exclusions: Vec<Exclusions> = ks
        .iter()
        .map(|&k| Exclusions {
            k,
            non_converged: 0,
            failed: 0,
        })
        .collect();

    for (r, outcome) in outcomes.into_iter().enumerate() {
        let rep = match outcome {
            Ok(rep) => rep,
            Err(e) => {
                failures.push((r, e));
                continue;
            }
        };
        for (d, v) in qxx_draws.iter_mut().zip(&rep.qxx) {
            d.push(*v);
        }
        for (ki, res) in rep.per_k.into_iter().enumerate() {
            match res {
                Err(_) => exclusions[ki].failed += 1,
                Ok(o) if !o.converged => exclusions[ki].non_converged += 1,
                Ok(o) => {
                    stat_draws[ki].push(o.statistic);
                    if let Some(theta) = o.theta {
                        for (d, v) in theta_draws.iter_mut().zip(theta) {
                            d.push(v);
                        }
                    }
                }
            }
        }
    }

    let qxx: Vec<SummaryRow> = qxx_rows
        .iter()
        .zip(&qxx_draws)
        .map(|(t, d)| summarize(t, d))
        .collect();
    let theta: Vec<SummaryRow> = if ks.contains(&spec.k) {
        theta_rows
            .iter()
            .zip(&theta_draws)
            .map(|(t, d)| summarize(t, d))
            .collect()
    } else {
        Vec::new()
    };

    let mut statistics = Vec::new();
    let mut rejections = Vec::new();
    let mut quartiles = Vec::new();
    let mut references = BTreeMap::new();
    let mut draws = BTreeMap::new();
    for (ki, &k) in ks.iter().enumerate() {
        let df = test_df(spec.p, k, exp.df_override.get(&k).copied())?;
        let name = statistic_name(k);
        let d = &stat_draws[ki];
        let reference = Reference::ChiSquared { df };
        statistics.push(SummaryRow {
            statistic: name.clone(),
            sample_mean: stats::mean(d),
            true_value: reference.mean(),
            sample_sd: stats::sample_sd(d),
            theoretical_sd: reference.sd(),
            count: d.len(),
        });
        for &alpha in &exp.alphas {
            let critical = chi2_quantile(df as f64, alpha)?;
            rejections.push(RejectionRow {
                k,
                alpha,
                df,
                critical,
                rejections: d.iter().filter(|&&t| t > critical).count(),
                used: d.len(),
            });
        }
        if !d.is_empty() {
            quartiles.push(QuartileRow {
                statistic: name.clone(),
                values: stats::five_numbers(d),
            });
        }
        references.insert(name.clone(), reference);
        draws.insert(name, stat_draws[ki].clone());
    }
    for (row, d) in qxx.iter().zip(&qxx_draws) {
        references.insert(
            row.statistic.clone(),
            Reference::Normal {
                mean: row.true_value,
                sd: row.theoretical_sd,
            },
        );
        draws.insert(row.statistic.clone(), d.clone());
    }
    for (row, d) in theta.iter().zip(&theta_draws) {
        references.insert(
            row.statistic.clone(),
            Reference::Normal {
                mean: row.true_value,
                sd: row.theoretical_sd,
            },
        );
        draws.insert(row.statistic.clone(), d.clone());
    }
    if !(exp.retain_draws || !exp.outputs.figures.is_empty()) {
        draws.clear();
    }

    Ok(Aggregate {
        replications: exp.replications,
        failures,
        qxx,
        theta,
        statistics,
        rejections,
        quartiles,
        exclusions,
        draws,
        references,
    })
}

/// Columns for histogram, QQ plot and empirical CDF of one statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub statistic: String,
    pub reference: Reference,
    /// Draws in replication order.
    pub draws: Vec<f64>,
    /// `(draw - mean) / sd` under the reference law, replication order.
    pub standardized: Vec<f64>,
    /// Sorted draws on the QQ scale: standardized for a normal reference,
    /// raw for a chi-squared one.
    pub qq_sample: Vec<f64>,
    /// Reference quantiles at `(i - 1/2) / R` on the same scale.
    pub qq_reference: Vec<f64>,
    /// `i / R` at each sorted draw.
    pub ecdf: Vec<f64>,
    /// Reference CDF at each sorted draw.
    pub reference_cdf: Vec<f64>,
}

impl FigureData {
    /// Kolmogorov-Smirnov distance to the reference law.
    pub fn ks_distance(&self) -> f64 {
        self.ecdf
            .iter()
            .zip(&self.reference_cdf)
            .enumerate()
            .fold(0.0f64, |d, (i, (&e, &f))| {
                d.max((e - f).abs())
                    .max((f - i as f64 / self.ecdf.len() as f64).abs())
            })
    }

    /// Least-squares slope of the QQ plot.
    pub fn qq_slope(&self) -> f64 {
        stats::ls_slope(&self.qq_reference, &self.qq_sample)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out =
            String::from("rank,value,standardized,qq_sample,qq_reference,ecdf,reference_cdf\n");
        let order = sort_order(&self.draws);
        for (i, &idx) in order.iter().enumerate() {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                i + 1,
                self.draws[idx],
                self.standardized[idx],
                self.qq_sample[i],
                self.qq_reference[i],
                self.ecdf[i],
                self.reference_cdf[i]
            )
            .expect("writing to a String");
        }
        Ok(out)
    }
}

fn sort_order(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    idx
}

/// Figure data for `statistic`; fails when no draws were retained.
pub fn figure_data(agg: &Aggregate, statistic: &str) -> Result<FigureData> {
    let draws = agg
        .draws
        .get(statistic)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| Error::NoDraws(statistic.into()))?;
    let reference = *agg
        .references
        .get(statistic)
        .ok_or_else(|| Error::NoDraws(statistic.into()))?;
    let (mean, sd) = (reference.mean(), reference.sd());
    let standardized: Vec<f64> = draws.iter().map(|x| (x - mean) / sd).collect();
    let r = draws.len() as f64;
    let probs: Vec<f64> = (1..=draws.len()).map(|i| (i as f64 - 0.5) / r).collect();
    let ecdf: Vec<f64> = (1..=draws.len()).map(|i| i as f64 / r).collect();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal law");
    let (qq_sample, qq_reference, reference_cdf) = match reference {
        Reference::Normal { .. } => {
            let s = stats::sorted(&standardized);
            let cdf = s.iter().map(|&z| std_normal.cdf(z)).collect();
            (
                s,
                probs.iter().map(|&u| std_normal.inverse_cdf(u)).collect(),
                cdf,
            )
        }
        Reference::ChiSquared { df } => {
            let s = stats::sorted(draws);
            let cdf = s
                .iter()
                .map(|&x| chi2_cdf(df as f64, x.max(0.0)))
                .collect::<Result<Vec<_>>>()?;
            let q = probs
                .iter()
                .map(|&u| chi2_inverse_cdf(df as f64, u))
                .collect::<Result<Vec<_>>>()?;
            (s, q, cdf)
        }
    };
    Ok(FigureData {
        statistic: statistic.to_string(),
        reference,
        draws: draws.clone(),
        standardized,
        qq_sample,
        qq_reference,
        ecdf,
        reference_cdf,
    })
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("statistic,sample_mean,true,sample_sd,theoretical_sd,count\n");
    for r in rows {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{}",
            r.statistic, r.sample_mean, r.true_value, r.sample_sd, r.theoretical_sd, r.count
        )
        .expect("writing to a String");
    }
    out
}

impl Aggregate {
    pub fn table_csv(&self, kind: TableKind) -> String {
        match kind {
            TableKind::Qxx => summary_csv(&self.qxx),
            TableKind::Theta => summary_csv(&self.theta),
            TableKind::Statistics => summary_csv(&self.statistics),
            TableKind::Rejections => {
                let mut out = String::from("k,alpha,df,critical,rejections,used\n");
                for r in &self.rejections {
                    writeln!(
                        out,
                        "{},{:?},{},{:?},{},{}",
                        r.k, r.alpha, r.df, r.critical, r.rejections, r.used
                    )
                    .expect("writing to a String");
                }
                out
            }
            TableKind::Quartiles => {
                let mut out = String::from("statistic,min,q1,median,q3,max\n");
                for r in &self.quartiles {
                    let [a, b, c, d, e] = r.values;
                    writeln!(out, "{},{a:?},{b:?},{c:?},{d:?},{e:?}", r.statistic)
                        .expect("writing to a String");
                }
                out
            }
        }
    }

    pub fn summary(&self, statistic: &str) -> Option<&SummaryRow> {
        self.qxx
            .iter()
            .chain(&self.theta)
            .chain(&self.statistics)
            .find(|r| r.statistic == statistic)
    }
}

/// Run record written next to the outputs. Contains no timestamps, so
/// reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: Experiment,
    pub seed_rule: String,
    pub replications: usize,
    pub failures: Vec<(usize, String)>,
    pub exclusions: Vec<Exclusions>,
    pub files: Vec<String>,
}

/// Writes the requested tables, figure CSVs and `manifest.json` into `dir`.
/// Returns the written file names.
pub fn write_outputs(exp: &Experiment, agg: &Aggregate, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut tables = exp.outputs.tables.clone();
    tables.sort();
    tables.dedup();
    for kind in tables {
        std::fs::write(dir.join(kind.file_name()), agg.table_csv(kind))?;
        files.push(kind.file_name().to_string());
    }
    for name in &exp.outputs.figures {
        let fig = figure_data(agg, name)?;
        let file = format!("figure_{name}.csv");
        std::fs::write(dir.join(&file), fig.to_csv()?)?;
        files.push(file);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: exp.clone(),
        seed_rule: "replication r uses splitmix64(seed_base + r * 0x9E3779B97F4A7C15)".into(),
        replications: agg.replications,
        failures: agg.failures.clone(),
        exclusions: agg.exclusions.clone(),
        files: files.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    files.push("manifest.json".into());
    Ok(files)
}
