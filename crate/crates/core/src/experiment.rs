//! Running a matrix of conditions and replications, and calibrating the
//! receiver threshold.
//!
//! Output layout under the plan's directory:
//!
//! ```text
//! scenario.toml                     the resolved scenario
//! summary.csv                       one row per condition
//! per_sg.csv                        one row per condition and signal group
//! <condition>/rep-<i>/summary.json  digest of replication i
//! <condition>/rep-<i>/*.csv         traces, depending on the trace level
//! ```
//!
//! Replication `i` uses seed `base_seed + i` under every condition, so
//! conditions are compared on paired seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::analytics::{self, ConditionSummary, RunSummary, SgSummary};
use crate::channel::{CommsCounters, Scope};
use crate::engine::{self, RunConfig, TraceLevel};
use crate::error::SimError;
use crate::scenario::{Condition, Scenario};

pub const DEFAULT_REPLICATIONS: u32 = 10;
pub const DEFAULT_BASE_SEED: u64 = 1;

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub conditions: Vec<Condition>,
    pub replications: u32,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub trace: TraceLevel,
    /// Upper bound on concurrently executing runs; all cores when absent.
    pub jobs: Option<usize>,
}

impl ExperimentPlan {
    /// Every condition listed in the scenario, ten replications from seed 1.
    pub fn new(scenario: Scenario, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            conditions: scenario.conditions.clone(),
            scenario,
            replications: DEFAULT_REPLICATIONS,
            base_seed: DEFAULT_BASE_SEED,
            out_dir: out_dir.into(),
            trace: TraceLevel::Summary,
            jobs: None,
        }
    }

    /// Conditions actually executed: the requested ones without duplicates,
    /// with the baseline added in front when missing, since every delay is
    /// reported relative to it.
    pub fn executed_conditions(&self) -> Vec<Condition> {
        let mut out: Vec<Condition> = Vec::new();
        if !self.conditions.iter().any(is_reference) {
            out.push(Condition::baseline());
        }
        for c in &self.conditions {
            if !out.iter().any(|o| o.name() == c.name()) {
                out.push(*c);
            }
        }
        out
    }
}

fn is_reference(c: &Condition) -> bool {
    c.is_lossless() && !c.correction
}

pub fn replication_seed(base_seed: u64, replication: u32) -> u64 {
    base_seed.wrapping_add(u64::from(replication))
}

pub fn run_dir(out_dir: &Path, condition: &Condition, replication: u32) -> PathBuf {
    out_dir.join(condition.name()).join(format!("rep-{replication}"))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Replication digests per condition name, in execution order.
    pub runs: BTreeMap<String, Vec<RunSummary>>,
    pub conditions: Vec<ConditionSummary>,
    pub signal_groups: Vec<SgSummary>,
}

fn create_dir(path: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(path).map_err(|e| SimError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), SimError> {
    std::fs::write(path, text).map_err(|e| SimError::io(path, e))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, SimError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| SimError::Analysis(format!("cannot start worker threads: {e}")))
}

fn execute_one(plan: &ExperimentPlan, condition: &Condition, replication: u32) -> Result<RunSummary, SimError> {
    let seed = replication_seed(plan.base_seed, replication);
    let mut cfg = RunConfig::new(plan.scenario.clone(), *condition, seed);
    cfg.trace = plan.trace;
    let out = engine::run(&cfg);
    let x = plan.scenario.intersection();
    let summary = analytics::summarize_run(condition, replication, seed, &out.metrics, &x, &plan.scenario.control);

    let dir = run_dir(&plan.out_dir, condition, replication);
    create_dir(&dir)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| SimError::Analysis(e.to_string()))?;
    write_text(&dir.join("summary.json"), &(json + "\n"))?;
    if plan.trace >= TraceLevel::Decisions {
        analytics::write_csv(&dir.join("decisions.csv"), &out.decisions)?;
    }
    if plan.trace >= TraceLevel::Messages {
        analytics::write_csv(&dir.join("messages.csv"), &out.messages)?;
    }
    if plan.trace >= TraceLevel::Trajectories {
        analytics::write_csv(&dir.join("trajectories.csv"), &out.trajectories)?;
    }
    info!("{} rep {} done", condition.name(), replication);
    Ok(summary)
}

/// Execute every run of the plan, then write the condition and signal group
/// summaries.
pub fn execute(plan: &ExperimentPlan) -> Result<ExperimentResult, SimError> {
    let conditions = plan.executed_conditions();
    create_dir(&plan.out_dir)?;
    write_text(&plan.out_dir.join("scenario.toml"), &plan.scenario.to_toml_string())?;

    let jobs: Vec<(Condition, u32)> = conditions
        .iter()
        .flat_map(|c| (0..plan.replications).map(move |r| (*c, r)))
        .collect();
    let summaries: Vec<RunSummary> = pool(plan.jobs)?.install(|| {
        jobs.par_iter()
            .map(|(c, r)| execute_one(plan, c, *r))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut runs: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    for s in summaries {
        runs.entry(s.condition.clone()).or_default().push(s);
    }
    let baseline = conditions.iter().find(|c| is_reference(c)).and_then(|c| runs.get(&c.name())).cloned();
    let x = plan.scenario.intersection();
    let mut rows = Vec::new();
    let mut sg_rows = Vec::new();
    for c in &conditions {
        let rs = &runs[&c.name()];
        rows.push(analytics::summarize_condition(c, rs, baseline.as_deref()));
        sg_rows.extend(analytics::summarize_signal_groups(c, rs, baseline.as_deref(), &x));
    }
    analytics::write_csv(&plan.out_dir.join("summary.csv"), &rows)?;
    analytics::write_csv(&plan.out_dir.join("per_sg.csv"), &sg_rows)?;
    Ok(ExperimentResult { runs, conditions: rows, signal_groups: sg_rows })
}

/// Search settings for the receiver threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub lower_db: f64,
    pub upper_db: f64,
    /// Accepted distance between achieved and target loss ratio.
    pub tolerance: f64,
    pub warmup_s: u32,
    pub evaluation_s: u32,
    pub seeds: u32,
    pub base_seed: u64,
    pub max_iterations: u32,
    pub jobs: Option<usize>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            lower_db: 0.0,
            upper_db: 40.0,
            tolerance: 0.01,
            warmup_s: 300,
            evaluation_s: 900,
            seeds: 4,
            base_seed: DEFAULT_BASE_SEED,
            max_iterations: 40,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold_db: f64,
    pub mlr: f64,
    /// The target lies below what the lower bound achieves.
    pub clamped_to_lower_bound: bool,
}

/// Whole-intersection loss ratio of the homogeneous 0 dB condition at the
/// given threshold, pooled over short runs.
pub fn short_run_mlr(scenario: &Scenario, threshold_db: f64, opts: &CalibrationOptions) -> f64 {
    let mut sc = scenario.clone();
    sc.channel.snr_threshold_db = threshold_db;
    sc.run.warmup_s = opts.warmup_s;
    sc.run.evaluation_s = opts.evaluation_s;
    let counters: Vec<CommsCounters> = (0..opts.seeds)
        .into_par_iter()
        .map(|i| {
            let mut cfg = RunConfig::new(sc.clone(), Condition::homogeneous(0.0, false), replication_seed(opts.base_seed, i));
            cfg.shadow = false;
            engine::run(&cfg).metrics.counters
        })
        .collect();
    let mut total = CommsCounters::default();
    counters.iter().for_each(|c| total.merge(c));
    analytics::mlr(&total, Scope::All).unwrap_or(0.0)
}

/// Bisect the threshold until the short-run loss ratio is within tolerance of
/// `target`. Loss grows with the threshold.
pub fn calibrate(scenario: &Scenario, target: f64, opts: &CalibrationOptions) -> Result<Calibration, SimError> {
    pool(opts.jobs)?.install(|| bisect(scenario, target, opts))
}

fn bisect(scenario: &Scenario, target: f64, opts: &CalibrationOptions) -> Result<Calibration, SimError> {
    let measure = |th: f64| short_run_mlr(scenario, th, opts);
    let (mut lo, mut hi) = (opts.lower_db, opts.upper_db);
    let m_lo = measure(lo);
    if target <= m_lo + opts.tolerance {
        let clamped = target < m_lo - opts.tolerance;
        if clamped {
            warn!("target MLR {target:.3} lies below {m_lo:.3}, reached at the lower bound {lo} dB");
        }
        return Ok(Calibration { threshold_db: lo, mlr: m_lo, clamped_to_lower_bound: clamped });
    }
    let m_hi = measure(hi);
    if target > m_hi + opts.tolerance {
        return Err(SimError::Unreachable { target, low: m_lo, high: m_hi });
    }
    if target >= m_hi - opts.tolerance {
        return Ok(Calibration { threshold_db: hi, mlr: m_hi, clamped_to_lower_bound: false });
    }
    let mut best = Calibration { threshold_db: hi, mlr: m_hi, clamped_to_lower_bound: false };
    for _ in 0..opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let m = measure(mid);
        if (m - target).abs() < (best.mlr - target).abs() {
            best = Calibration { threshold_db: mid, mlr: m, clamped_to_lower_bound: false };
        }
        if (m - target).abs() <= opts.tolerance {
            break;
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
