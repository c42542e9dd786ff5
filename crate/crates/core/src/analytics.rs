//! Turning run logs into measurables: loss ratios, delay statistics with
//! significance, and per-signal-group counts of the three ways lost messages
//! hurt the controller (late or early green, lost green time, vehicles left
//! waiting after a premature gap-out).

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

use crate::channel::{CommsCounters, Scope};
use crate::controller::{TerminateReason, GAP_SPEED_FLOOR_MPS};
use crate::engine::{Divergence, DivergenceKind, RunMetrics, TerminationRecord};
use crate::error::SimError;
use crate::scenario::{Condition, ControlParams, Intersection, StageIndex};
use crate::traffic::TruthEntry;

/// Message loss ratio over `scope`, absent when nothing was sent.
pub fn mlr(counters: &CommsCounters, scope: Scope) -> Option<f64> {
    let sent = counters.sent_in(scope);
    (sent > 0).then(|| 1.0 - counters.received_in(scope) as f64 / sent as f64)
}

/// Mean and sample standard deviation of replication-level values. The
/// deviation is absent below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: Option<f64>,
    pub n: usize,
}

impl MeanSd {
    pub fn of(samples: &[f64]) -> Option<MeanSd> {
        if samples.is_empty() {
            return None;
        }
        let sd = (samples.len() >= 2).then(|| samples.std_dev());
        Some(MeanSd { mean: samples.mean(), sd, n: samples.len() })
    }
}

/// Relative change in percent.
pub fn pct_delta(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (value - baseline) / baseline)
}

/// Two-sided Welch's t-test p-value for a difference in means.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<f64, SimError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(SimError::Analysis(format!(
            "Welch's test needs at least 2 replications per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (a.mean(), b.mean());
    let (qa, qb) = (a.variance() / na, b.variance() / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| SimError::Analysis(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Ground-truth vehicles per signal group of `stage` that would reach the
/// stop line within `max_gap` seconds, i.e. the vehicles a premature
/// termination leaves behind.
pub fn delayed_vehicles_at(truth: &[TruthEntry], x: &Intersection, stage: StageIndex, max_gap: f64) -> Vec<u32> {
    let mut out = vec![0; x.num_signal_groups()];
    for e in truth.iter().filter(|e| x.in_stage(e.sg, stage)) {
        if e.d.max(0.0) / e.v.max(GAP_SPEED_FLOOR_MPS) <= max_gap {
            out[e.sg] += 1;
        }
    }
    out
}

/// Late and early green events of one switch divergence, per signal group.
pub fn late_early(div: &Divergence, x: &Intersection) -> (Vec<u32>, Vec<u32>) {
    let n = x.num_signal_groups();
    let (mut late, mut early) = (vec![0; n], vec![0; n]);
    if let (DivergenceKind::Switch, Some(a), Some(s)) = (div.kind, div.actual_next, div.shadow_next) {
        for g in 0..n {
            match (x.in_stage(g, s), x.in_stage(g, a)) {
                (true, false) => late[g] += 1,
                (false, true) => early[g] += 1,
                _ => {}
            }
        }
    }
    (late, early)
}

/// Green seconds a termination cost its stage: only when the stage was cut
/// at a maximum shorter than the lossless one while vehicles were still
/// arriving.
pub fn green_time_loss(rec: &TerminationRecord, max_gap: f64) -> f64 {
    let capped_short = rec.reason == TerminateReason::MaxGreen && rec.max_green_actual < rec.max_green_shadow;
    if !capped_short || rec.truth_min_gap_s >= max_gap {
        return 0.0;
    }
    let deserved = rec.max_green_shadow.min(rec.green_s + rec.truth_extension_s);
    (deserved - rec.green_s).max(0.0)
}

/// Green seconds a stage ran beyond its lossless maximum.
pub fn green_time_gain(rec: &TerminationRecord) -> f64 {
    (rec.green_s - rec.max_green_shadow).max(0.0)
}

/// Per signal group event counts of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonCounts {
    pub late: Vec<u32>,
    pub early: Vec<u32>,
    pub green_loss_s: Vec<f64>,
    pub green_gain_s: Vec<f64>,
    pub delayed_vehicles: Vec<u32>,
}

impl PhenomenonCounts {
    pub fn zeros(n: usize) -> Self {
        PhenomenonCounts {
            late: vec![0; n],
            early: vec![0; n],
            green_loss_s: vec![0.0; n],
            green_gain_s: vec![0.0; n],
            delayed_vehicles: vec![0; n],
        }
    }

    pub fn late_minus_early(&self) -> Vec<i64> {
        self.late.iter().zip(&self.early).map(|(&l, &e)| i64::from(l) - i64::from(e)).collect()
    }

    /// Total number of events over all signal groups and kinds, loss and
    /// gain counted in seconds.
    pub fn total(&self) -> f64 {
        let count = |v: &[u32]| v.iter().map(|&c| f64::from(c)).sum::<f64>();
        count(&self.late)
            + count(&self.early)
            + count(&self.delayed_vehicles)
            + self.green_loss_s.iter().sum::<f64>()
            + self.green_gain_s.iter().sum::<f64>()
    }
}

pub fn phenomenon_events(metrics: &RunMetrics, x: &Intersection, params: &ControlParams) -> Result<PhenomenonCounts, SimError> {
    if !metrics.shadow {
        return Err(SimError::Analysis("run was executed without shadow evaluation".into()));
    }
    let mut out = PhenomenonCounts::zeros(x.num_signal_groups());
    for div in &metrics.divergences {
        match div.kind {
            DivergenceKind::Switch => {
                let (late, early) = late_early(div, x);
                for g in 0..late.len() {
                    out.late[g] += late[g];
                    out.early[g] += early[g];
                }
            }
            DivergenceKind::WrongfulTermination => {
                for (acc, n) in out.delayed_vehicles.iter_mut().zip(&div.delayed_vehicles) {
                    *acc += n;
                }
            }
            DivergenceKind::WrongfulExtension => {}
        }
    }
    for rec in &metrics.terminations {
        let (loss, gain) = (green_time_loss(rec, params.max_gap_s), green_time_gain(rec));
        for g in x.stage_signal_groups(rec.stage) {
            out.green_loss_s[g] += loss;
            out.green_gain_s[g] += gain;
        }
    }
    Ok(out)
}

/// Digest of one run, written as its `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub condition: String,
    pub replication: u32,
    pub seed: u64,
    pub counters: CommsCounters,
    pub mlr_all: Option<f64>,
    pub mlr_west: Option<f64>,
    pub mlr_others: Option<f64>,
    pub vehicles: usize,
    pub delay_mean_s: Option<f64>,
    pub sg_vehicles: Vec<usize>,
    pub sg_delay_mean_s: Vec<Option<f64>>,
    pub cycles: u32,
    pub switch_divergences: usize,
    pub wrongful_terminations: usize,
    pub wrongful_extensions: usize,
    pub events: Option<PhenomenonCounts>,
}

pub fn summarize_run(
    condition: &Condition,
    replication: u32,
    seed: u64,
    metrics: &RunMetrics,
    x: &Intersection,
    params: &ControlParams,
) -> RunSummary {
    let n = x.num_signal_groups();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for d in &metrics.delays {
        sums[d.sg] += d.delay_s;
        counts[d.sg] += 1;
    }
    let all: Vec<f64> = metrics.delays.iter().map(|d| d.delay_s).collect();
    let kind_count = |k: DivergenceKind| metrics.divergences.iter().filter(|d| d.kind == k).count();
    RunSummary {
        condition: condition.name(),
        replication,
        seed,
        counters: metrics.counters,
        mlr_all: mlr(&metrics.counters, Scope::All),
        mlr_west: mlr(&metrics.counters, Scope::West),
        mlr_others: mlr(&metrics.counters, Scope::Others),
        vehicles: all.len(),
        delay_mean_s: (!all.is_empty()).then(|| all.as_slice().mean()),
        sg_delay_mean_s: sums.iter().zip(&counts).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect(),
        sg_vehicles: counts,
        cycles: metrics.cycles,
        switch_divergences: kind_count(DivergenceKind::Switch),
        wrongful_terminations: kind_count(DivergenceKind::WrongfulTermination),
        wrongful_extensions: kind_count(DivergenceKind::WrongfulExtension),
        events: phenomenon_events(metrics, x, params).ok(),
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub environment: String,
    pub snr_penalty_db: f64,
    pub correction: bool,
    pub replications: usize,
    pub mlr_all_mean: Option<f64>,
    pub mlr_all_sd: Option<f64>,
    pub mlr_west_mean: Option<f64>,
    pub mlr_west_sd: Option<f64>,
    pub mlr_others_mean: Option<f64>,
    pub mlr_others_sd: Option<f64>,
    pub delay_mean_s: Option<f64>,
    pub delay_sd_s: Option<f64>,
    pub delay_delta_pct: Option<f64>,
    pub p_value: Option<f64>,
    pub switch_divergences: Option<f64>,
    pub wrongful_terminations: Option<f64>,
    pub wrongful_extensions: Option<f64>,
    pub late_minus_early: Option<f64>,
    pub green_loss_s: Option<f64>,
    pub green_gain_s: Option<f64>,
    pub delayed_vehicles: Option<f64>,
}

/// One row of `per_sg.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgSummary {
    pub condition: String,
    pub sg: String,
    pub delay_mean_s: Option<f64>,
    pub delay_sd_s: Option<f64>,
    pub delay_delta_pct: Option<f64>,
    pub p_value: Option<f64>,
    pub late_minus_early: Option<f64>,
    pub green_loss_s: Option<f64>,
    pub green_gain_s: Option<f64>,
    pub delayed_vehicles: Option<f64>,
}

fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    MeanSd::of(&v).map(|m| m.mean)
}

fn mean_sd(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    MeanSd::of(&v).map_or((None, None), |m| (Some(m.mean), m.sd))
}

fn compare(cond: &[f64], base: Option<&[f64]>) -> (Option<f64>, Option<f64>) {
    let Some(base) = base else { return (None, None) };
    let delta = match (MeanSd::of(cond), MeanSd::of(base)) {
        (Some(c), Some(b)) => pct_delta(c.mean, b.mean),
        _ => None,
    };
    (delta, welch_t(base, cond).ok())
}

/// Aggregate one condition's replications, comparing delays with `baseline`
/// when given.
pub fn summarize_condition(condition: &Condition, runs: &[RunSummary], baseline: Option<&[RunSummary]>) -> ConditionSummary {
    let delays = |rs: &[RunSummary]| rs.iter().filter_map(|r| r.delay_mean_s).collect::<Vec<f64>>();
    let cond_delays = delays(runs);
    let base_delays = baseline.map(delays);
    let (delay_mean_s, delay_sd_s) = mean_sd(cond_delays.iter().copied().map(Some));
    let (delay_delta_pct, p_value) = compare(&cond_delays, base_delays.as_deref());
    let mlr = |f: fn(&RunSummary) -> Option<f64>| {
        if condition.is_lossless() {
            (None, None)
        } else {
            mean_sd(runs.iter().map(f))
        }
    };
    let (mlr_all_mean, mlr_all_sd) = mlr(|r| r.mlr_all);
    let (mlr_west_mean, mlr_west_sd) = mlr(|r| r.mlr_west);
    let (mlr_others_mean, mlr_others_sd) = mlr(|r| r.mlr_others);
    let evented: Vec<&PhenomenonCounts> = runs.iter().filter_map(|r| r.events.as_ref()).collect();
    let per_run = |f: &dyn Fn(&PhenomenonCounts) -> f64| {
        if evented.len() == runs.len() {
            mean_of(evented.iter().map(|e| f(e)))
        } else {
            None
        }
    };
    ConditionSummary {
        condition: condition.name(),
        environment: condition.environment.name().to_string(),
        snr_penalty_db: condition.snr_penalty_db,
        correction: condition.correction,
        replications: runs.len(),
        mlr_all_mean,
        mlr_all_sd,
        mlr_west_mean,
        mlr_west_sd,
        mlr_others_mean,
        mlr_others_sd,
        delay_mean_s,
        delay_sd_s,
        delay_delta_pct,
        p_value,
        switch_divergences: mean_of(runs.iter().map(|r| r.switch_divergences as f64)),
        wrongful_terminations: mean_of(runs.iter().map(|r| r.wrongful_terminations as f64)),
        wrongful_extensions: mean_of(runs.iter().map(|r| r.wrongful_extensions as f64)),
        late_minus_early: per_run(&|e| e.late_minus_early().iter().sum::<i64>() as f64),
        green_loss_s: per_run(&|e| e.green_loss_s.iter().sum()),
        green_gain_s: per_run(&|e| e.green_gain_s.iter().sum()),
        delayed_vehicles: per_run(&|e| e.delayed_vehicles.iter().map(|&v| f64::from(v)).sum()),
    }
}

/// Per signal group rows for one condition; event columns are means per
/// replication.
pub fn summarize_signal_groups(
    condition: &Condition,
    runs: &[RunSummary],
    baseline: Option<&[RunSummary]>,
    x: &Intersection,
) -> Vec<SgSummary> {
    let evented: Vec<&PhenomenonCounts> = runs.iter().filter_map(|r| r.events.as_ref()).collect();
    let complete = !runs.is_empty() && evented.len() == runs.len();
    (0..x.num_signal_groups())
        .map(|g| {
            let sg_delays = |rs: &[RunSummary]| rs.iter().filter_map(|r| r.sg_delay_mean_s.get(g).copied().flatten()).collect::<Vec<f64>>();
            let cond = sg_delays(runs);
            let base = baseline.map(sg_delays);
            let (delay_mean_s, delay_sd_s) = mean_sd(cond.iter().copied().map(Some));
            let (delay_delta_pct, p_value) = compare(&cond, base.as_deref());
            let event = |f: &dyn Fn(&PhenomenonCounts) -> f64| if complete { mean_of(evented.iter().map(|e| f(e))) } else { None };
            SgSummary {
                condition: condition.name(),
                sg: x.signal_groups[g].name.clone(),
                delay_mean_s,
                delay_sd_s,
                delay_delta_pct,
                p_value,
                late_minus_early: event(&|e| e.late_minus_early()[g] as f64),
                green_loss_s: event(&|e| e.green_loss_s[g]),
                green_gain_s: event(&|e| e.green_gain_s[g]),
                delayed_vehicles: event(&|e| f64::from(e.delayed_vehicles[g])),
            }
        })
        .collect()
}

/// Write serializable rows as a headed CSV file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SimError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| SimError::csv(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| SimError::csv(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| SimError::csv(path, e))
}
