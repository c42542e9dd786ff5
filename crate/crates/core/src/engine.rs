//! The closed loop. Each one-second control step:
//!
//! 1. the controller acts on the registry formed from the previous step's
//!    receptions, and the shadow evaluation repeats the decision on everything
//!    that was transmitted in the previous step;
//! 2. traffic advances in sub-steps under the resulting indication, and every
//!    vehicle due to send a CAM does so with its state at that instant;
//! 3. the channel decides which messages arrive;
//! 4. the estimator fills gaps left by lost messages (when enabled), giving
//!    the registry for the next step.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::channel::{self, CamMessage, CommsCounters, MessageRecord};
use crate::controller::{self, Decision, ExtendReason, Origin, Phase, ReportRegistry, TerminateReason, GAP_SPEED_FLOOR_MPS};
use crate::estimator::{self, EstimatorConfig};
use crate::rng::{substream, Substream};
use crate::scenario::{Condition, ControlParams, Intersection, Scenario, SgIndex, StageIndex};
use crate::traffic::{delay_of, TrafficState, TruthEntry, VehicleId};

/// How much per-run detail to keep beyond the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    #[default]
    Summary,
    Decisions,
    Messages,
    Trajectories,
}

impl std::str::FromStr for TraceLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summary" => Ok(TraceLevel::Summary),
            "decisions" => Ok(TraceLevel::Decisions),
            "messages" => Ok(TraceLevel::Messages),
            "trajectories" => Ok(TraceLevel::Trajectories),
            other => Err(format!("unknown trace level '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub condition: Condition,
    pub seed: u64,
    pub trace: TraceLevel,
    /// Evaluate every decision a second time on lossless data.
    pub shadow: bool,
}

impl RunConfig {
    pub fn new(scenario: Scenario, condition: Condition, seed: u64) -> Self {
        RunConfig { scenario, condition, seed, trace: TraceLevel::Summary, shadow: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub vehicle: VehicleId,
    pub sg: SgIndex,
    pub crossing_time: f64,
    pub delay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// Both terminate but choose different next stages.
    Switch,
    /// Gap-out on the received picture while the lossless picture extends.
    WrongfulTermination,
    /// Gap extension on the received picture while the lossless picture terminates.
    WrongfulExtension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub t: f64,
    pub kind: DivergenceKind,
    pub stage: StageIndex,
    pub actual_next: Option<StageIndex>,
    pub shadow_next: Option<StageIndex>,
    /// Ground-truth vehicles per signal group close enough to the line to
    /// have justified another extension.
    pub delayed_vehicles: Vec<u32>,
}

/// Everything known about one green termination of the real controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationRecord {
    pub t: f64,
    pub stage: StageIndex,
    pub green_s: f64,
    pub reason: TerminateReason,
    pub max_green_actual: f64,
    pub max_green_shadow: f64,
    pub truth_min_gap_s: f64,
    /// Further seconds the green would have run on ground truth alone.
    pub truth_extension_s: f64,
}

/// One row of the decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub kind: String,
    pub stage: Option<StageIndex>,
    pub chosen: Option<StageIndex>,
    pub shadow_kind: Option<String>,
    pub shadow_chosen: Option<StageIndex>,
    pub reports: usize,
    pub estimated: usize,
    pub scores: String,
    pub max_green: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub vehicle: VehicleId,
    pub sg: SgIndex,
    pub lane: usize,
    pub d: f64,
    pub v: f64,
}

/// Raw outcome of one run, restricted to the evaluation window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub counters: CommsCounters,
    pub delays: Vec<DelayRecord>,
    pub terminations: Vec<TerminationRecord>,
    pub divergences: Vec<Divergence>,
    pub cycles: u32,
    /// Whether decisions were also evaluated on lossless data.
    pub shadow: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub metrics: RunMetrics,
    pub decisions: Vec<DecisionRecord>,
    pub messages: Vec<MessageRecord>,
    pub trajectories: Vec<TrajectoryRecord>,
    /// Indication per second, one entry per control step.
    pub indications: Vec<Vec<bool>>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(";")
}

/// Seconds of further green ground truth would have earned: the controller
/// keeps extending while some active lane has a vehicle projected to reach
/// the line within `max_gap` of the current instant.
pub fn projected_extension(truth: &[TruthEntry], x: &Intersection, stage: StageIndex, params: &ControlParams, horizon: f64) -> f64 {
    let mut arrivals: Vec<f64> = truth
        .iter()
        .filter(|e| x.in_stage(e.sg, stage))
        .map(|e| e.d.max(0.0) / e.v.max(GAP_SPEED_FLOOR_MPS))
        .collect();
    arrivals.sort_by(f64::total_cmp);
    let mut tau = 0.0;
    while tau < horizon {
        let next = arrivals.iter().find(|&&a| a >= tau);
        match next {
            Some(a) if a - tau < params.max_gap_s => tau += 1.0,
            _ => break,
        }
    }
    tau
}

fn truth_min_gap(truth: &[TruthEntry], x: &Intersection, stage: StageIndex) -> f64 {
    truth
        .iter()
        .filter(|e| x.in_stage(e.sg, stage))
        .map(|e| e.d.max(0.0) / e.v.max(GAP_SPEED_FLOOR_MPS))
        .fold(f64::INFINITY, f64::min)
}

fn next_of(d: &Decision) -> Option<StageIndex> {
    match d {
        Decision::Terminate { next, .. } => Some(*next),
        _ => None,
    }
}

/// Execute one run from its configuration.
pub fn run(cfg: &RunConfig) -> RunOutputs {
    let sc = &cfg.scenario;
    let x = sc.intersection();
    let cp = &sc.control;
    let ch = &sc.channel;
    let tp = &sc.traffic;
    let warmup = f64::from(sc.run.warmup_s);
    let end = warmup + f64::from(sc.run.evaluation_s);
    let total_steps = sc.run.warmup_s + sc.run.evaluation_s;
    let substeps = (1.0 / tp.substep_s).round().max(1.0) as usize;
    let dt = 1.0 / substeps as f64;
    let est_cfg = EstimatorConfig::new(tp.min_spacing_m, &sc.estimator);
    let in_window = |t: f64| t >= warmup && t < end;

    let mut traffic = TrafficState::new(&x, tp, cfg.seed);
    let mut cam_rng = substream(cfg.seed, Substream::CamPhase);
    let mut fading_rng = substream(cfg.seed, Substream::Fading);
    let mut next_tx: HashMap<VehicleId, f64> = HashMap::new();

    let mut state = controller::ControllerState::new(&x, cp);
    let mut registry = ReportRegistry::new();
    let mut shadow_registry = ReportRegistry::new();
    let mut shadow_max_green = state.max_green.clone();
    let mut shadow_stored = vec![0.0; x.num_stages()];
    let mut prev_green = state.indication(&x);

    let mut out = RunOutputs::default();
    out.metrics.shadow = cfg.shadow;
    let keep_messages = cfg.trace >= TraceLevel::Messages;
    let keep_trajectories = cfg.trace >= TraceLevel::Trajectories;

    for step in 0..total_steps {
        let t = f64::from(step);
        let truth = traffic.ground_truth_snapshot();

        // 1. Control on last step's picture.
        let phase_before = state.phase;
        let decision = controller::decide(&state, &registry, &x, cp);
        let shadow = cfg.shadow.then(|| {
            let mut s = state.clone();
            s.max_green = shadow_max_green.clone();
            controller::decide(&s, &shadow_registry, &x, cp)
        });
        if let (Phase::Green { stage, elapsed }, Some(sh)) = (phase_before, shadow.as_ref()) {
            record_shadow(&mut out.metrics, t, in_window(t), &decision, sh, stage, elapsed, &truth, &x, cp, &state, &shadow_max_green);
        }
        if let Decision::Terminate { next, reset, .. } = &decision {
            if cfg.shadow {
                if reset.is_some() {
                    shadow_max_green = controller::end_of_cycle_update(&shadow_stored, cp);
                    shadow_stored.iter_mut().for_each(|w| *w = 0.0);
                }
                let truth_scores = controller::stage_scores(
                    &controller::group_scores(&shadow_registry, x.num_signal_groups(), cp.detection_range_m),
                    &x,
                );
                shadow_stored[*next] = truth_scores[*next];
            }
            if reset.is_some() && in_window(t) {
                out.metrics.cycles += 1;
            }
        }
        if cfg.trace >= TraceLevel::Decisions && !matches!(decision, Decision::Clearance) {
            let (scores, chosen) = match &decision {
                Decision::Terminate { scores, next, .. } => (join(scores), Some(*next)),
                Decision::Activate { stage } => (String::new(), Some(*stage)),
                _ => (String::new(), None),
            };
            out.decisions.push(DecisionRecord {
                t,
                kind: decision.kind().to_string(),
                stage: match phase_before {
                    Phase::Green { stage, .. } => Some(stage),
                    Phase::Interstage { .. } => None,
                },
                chosen,
                shadow_kind: shadow.as_ref().map(|s| s.kind().to_string()),
                shadow_chosen: shadow.as_ref().and_then(next_of),
                reports: registry.len(),
                estimated: registry.iter().filter(|r| r.origin == Origin::Estimated).count(),
                scores,
                max_green: join(&state.max_green),
            });
        }
        let green = controller::apply(&mut state, &decision, &x, cp);
        out.indications.push(green.clone());

        // 2. Traffic and transmissions.
        let mut sent: Vec<CamMessage> = Vec::new();
        for j in 0..substeps {
            let ts = t + j as f64 * dt;
            for id in traffic.spawn_arrivals(ts) {
                next_tx.insert(id, ts + channel::schedule_cam(&mut cam_rng, ch.cam_period_s));
            }
            let crossed = traffic.step(ts, &green, dt);
            let t_end = ts + dt;
            for veh in traffic.vehicles().chain(crossed.iter()) {
                let Some(due) = next_tx.get_mut(&veh.id) else { continue };
                if *due >= t_end {
                    continue;
                }
                let at = *due;
                *due += ch.cam_period_s;
                if veh.crossing_time.is_some_and(|c| c <= at) {
                    continue;
                }
                let (d, v) = veh.interpolate(at, t_end, dt);
                if d > ch.transmission_range_m {
                    continue;
                }
                sent.push(CamMessage { vehicle: veh.id, timestamp: at, d: d.max(0.0), v: v.max(0.0), lane: veh.lane, sg: veh.sg, approach: veh.approach });
            }
            for veh in &crossed {
                next_tx.remove(&veh.id);
                if veh.crossing_time.is_some_and(in_window) {
                    out.metrics.delays.push(DelayRecord {
                        vehicle: veh.id,
                        sg: veh.sg,
                        crossing_time: veh.crossing_time.unwrap_or_default(),
                        delay_s: delay_of(veh).expect("crossed vehicles have a crossing time"),
                    });
                }
            }
        }

        // 3. Channel.
        let delivery = channel::deliver(&sent, ch, &cfg.condition, &mut fading_rng);
        for (msg, rec) in sent.iter().zip(&delivery.log) {
            if in_window(msg.timestamp) {
                out.metrics.counters.record(msg.approach, rec.delivered);
            }
        }
        if keep_messages {
            out.messages.extend(delivery.log.iter().copied());
        }

        // 4. Next step's picture.
        let measured = ReportRegistry::from_messages(&delivery.received);
        registry = if cfg.condition.correction {
            let recent: Vec<bool> = green.iter().zip(&prev_green).map(|(a, b)| *a || *b).collect();
            estimator::correct(&measured, &registry, &recent, x.lanes.len(), &est_cfg)
        } else {
            measured
        };
        if cfg.shadow {
            shadow_registry = ReportRegistry::from_messages(&sent);
        }
        prev_green = green;

        if keep_trajectories {
            let te = t + 1.0;
            out.trajectories.extend(traffic.vehicles().map(|v| TrajectoryRecord { t: te, vehicle: v.id, sg: v.sg, lane: v.lane, d: v.d, v: v.v }));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn record_shadow(
    m: &mut RunMetrics,
    t: f64,
    counted: bool,
    actual: &Decision,
    shadow: &Decision,
    stage: StageIndex,
    elapsed: f64,
    truth: &[TruthEntry],
    x: &Intersection,
    cp: &ControlParams,
    state: &controller::ControllerState,
    shadow_max_green: &[f64],
) {
    if !counted {
        return;
    }
    let divergence = |kind, delayed: Vec<u32>| Divergence {
        t,
        kind,
        stage,
        actual_next: next_of(actual),
        shadow_next: next_of(shadow),
        delayed_vehicles: delayed,
    };
    match (actual, shadow) {
        (Decision::Terminate { next: a, .. }, Decision::Terminate { next: s, .. }) if a != s => {
            m.divergences.push(divergence(DivergenceKind::Switch, vec![0; x.num_signal_groups()]));
        }
        (Decision::Terminate { reason: TerminateReason::GapOut, .. }, Decision::Extend { reason: ExtendReason::Gap }) => {
            let delayed = analytics::delayed_vehicles_at(truth, x, stage, cp.max_gap_s);
            m.divergences.push(divergence(DivergenceKind::WrongfulTermination, delayed));
        }
        (Decision::Extend { reason: ExtendReason::Gap }, Decision::Terminate { .. }) => {
            m.divergences.push(divergence(DivergenceKind::WrongfulExtension, vec![0; x.num_signal_groups()]));
        }
        _ => {}
    }
    if let Decision::Terminate { reason, .. } = actual {
        let shadow_cap = shadow_max_green[stage];
        m.terminations.push(TerminationRecord {
            t,
            stage,
            green_s: elapsed,
            reason: *reason,
            max_green_actual: state.max_green[stage],
            max_green_shadow: shadow_cap,
            truth_min_gap_s: truth_min_gap(truth, x, stage),
            truth_extension_s: projected_extension(truth, x, stage, cp, (shadow_cap - elapsed).max(0.0).ceil()),
        });
    }
}
