//! Adaptive stage-based signal control: distance-weighted demand scores,
//! gap-out extension, stage selection with once-per-cycle activation, and
//! proportional reallocation of maximum green times at the end of each cycle.
//!
//! The controller is a pure state machine. [`decide`] looks at a registry and
//! a state and returns what would happen this second; [`apply`] commits that
//! decision. Splitting the two lets the engine evaluate a counterfactual
//! decision on another registry without touching the real state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::CamMessage;
use crate::scenario::{Approach, ControlParams, Intersection, LaneIndex, SgIndex, StageIndex};
use crate::traffic::VehicleId;

/// Speed floor used when turning a distance into a projected arrival time.
pub const GAP_SPEED_FLOOR_MPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Measured,
    Estimated,
}

/// What the intersection knows about one vehicle at one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub vehicle: VehicleId,
    pub sg: SgIndex,
    pub lane: LaneIndex,
    pub approach: Approach,
    pub d: f64,
    pub v: f64,
    pub origin: Origin,
    /// Control steps since the last received message; 0 for measured reports.
    pub age: u32,
}

impl Report {
    pub fn measured(msg: &CamMessage) -> Self {
        Report {
            vehicle: msg.vehicle,
            sg: msg.sg,
            lane: msg.lane,
            approach: msg.approach,
            d: msg.d.max(0.0),
            v: msg.v.max(0.0),
            origin: Origin::Measured,
            age: 0,
        }
    }
}

/// The set of reports the controller acts on in one step, keyed by vehicle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportRegistry {
    reports: BTreeMap<VehicleId, Report>,
}

impl ReportRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry of measured reports. A later message from the same vehicle
    /// replaces an earlier one.
    pub fn from_messages<'a>(msgs: impl IntoIterator<Item = &'a CamMessage>) -> Self {
        let mut r = Self::new();
        for m in msgs {
            r.insert(Report::measured(m));
        }
        r
    }

    pub fn insert(&mut self, report: Report) {
        self.reports.insert(report.vehicle, report);
    }

    pub fn remove(&mut self, id: VehicleId) -> Option<Report> {
        self.reports.remove(&id)
    }

    pub fn get(&self, id: VehicleId) -> Option<&Report> {
        self.reports.get(&id)
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.reports.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Report> {
        self.reports.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.reports.keys().copied()
    }

    /// Reports on one lane, nearest to the stop line first. Ties keep id order.
    pub fn lane_order(&self, lane: LaneIndex) -> Vec<Report> {
        let mut v: Vec<Report> = self.reports.values().filter(|r| r.lane == lane).copied().collect();
        v.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.vehicle.cmp(&b.vehicle)));
        v
    }

    /// Signal groups with at least one report.
    pub fn demand_bearing(&self, num_sgs: usize) -> Vec<bool> {
        let mut out = vec![false; num_sgs];
        for r in self.reports.values() {
            out[r.sg] = true;
        }
        out
    }
}

/// Score of a single vehicle at distance `d` from the stop line.
///
/// # Panics
/// If `d` is negative or `d_max` is not positive; callers clamp crossed
/// vehicles to the stop line.
pub fn vehicle_score(d: f64, d_max: f64) -> f64 {
    assert!(d >= 0.0, "vehicle_score: negative distance {d}");
    assert!(d_max > 0.0, "vehicle_score: non-positive range {d_max}");
    (1.0 - d / d_max).max(0.0)
}

/// Summed vehicle scores per signal group.
pub fn group_scores(registry: &ReportRegistry, num_sgs: usize, d_max: f64) -> Vec<f64> {
    let mut w = vec![0.0; num_sgs];
    for r in registry.iter() {
        w[r.sg] += vehicle_score(r.d, d_max);
    }
    w
}

/// Summed signal-group scores per stage.
pub fn stage_scores(group: &[f64], x: &Intersection) -> Vec<f64> {
    (0..x.num_stages()).map(|s| x.stage_signal_groups(s).map(|g| group[g]).sum()).collect()
}

/// Projected arrival time at the stop line of the nearest reported vehicle on
/// `lane`; infinite when nobody is reported there.
pub fn gap_time(registry: &ReportRegistry, lane: LaneIndex) -> f64 {
    registry
        .iter()
        .filter(|r| r.lane == lane)
        .map(|r| r.d / r.v.max(GAP_SPEED_FLOOR_MPS))
        .fold(f64::INFINITY, f64::min)
}

/// Maximum green per stage after a completed cycle, proportional to the
/// scores stored when each stage was chosen.
pub fn end_of_cycle_update(stored: &[f64], params: &ControlParams) -> Vec<f64> {
    let total: f64 = stored.iter().sum();
    if total > 0.0 {
        stored.iter().map(|w| params.min_green_s + w / total * params.green_extension_s).collect()
    } else {
        default_max_green(stored.len(), params)
    }
}

/// Maximum green of every stage before any cycle has completed.
pub fn default_max_green(num_stages: usize, params: &ControlParams) -> Vec<f64> {
    vec![params.min_green_s + params.green_extension_s / num_stages as f64; num_stages]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum Phase {
    Green { stage: StageIndex, elapsed: f64 },
    Interstage { next: StageIndex, elapsed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub served: Vec<bool>,
    pub activated: Vec<bool>,
    pub max_green: Vec<f64>,
    /// Score stored for each stage chosen in the current cycle.
    pub stored_scores: Vec<f64>,
    pub cycle: u32,
}

impl ControllerState {
    /// Stage 0 green from time zero with first-cycle maximum greens.
    pub fn new(x: &Intersection, params: &ControlParams) -> Self {
        let mut st = ControllerState {
            phase: Phase::Green { stage: 0, elapsed: 0.0 },
            served: vec![false; x.num_signal_groups()],
            activated: vec![false; x.num_stages()],
            max_green: default_max_green(x.num_stages(), params),
            stored_scores: vec![0.0; x.num_stages()],
            cycle: 0,
        };
        st.mark(x, 0, 0.0);
        st
    }

    fn mark(&mut self, x: &Intersection, stage: StageIndex, score: f64) {
        assert!(!self.activated[stage], "stage {stage} activated twice in cycle {}", self.cycle);
        self.activated[stage] = true;
        self.stored_scores[stage] = score;
        for g in x.stage_signal_groups(stage) {
            self.served[g] = true;
        }
    }

    pub fn green_stage(&self) -> Option<StageIndex> {
        match self.phase {
            Phase::Green { stage, .. } => Some(stage),
            Phase::Interstage { .. } => None,
        }
    }

    /// Per-SG indication for the current phase.
    pub fn indication(&self, x: &Intersection) -> Vec<bool> {
        match self.phase {
            Phase::Green { stage, .. } => (0..x.num_signal_groups()).map(|g| x.in_stage(g, stage)).collect(),
            Phase::Interstage { .. } => vec![false; x.num_signal_groups()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendReason {
    MinGreen,
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminateReason {
    GapOut,
    MaxGreen,
}

/// One second of control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    /// All-red continues.
    Clearance,
    /// The pending stage turns green.
    Activate { stage: StageIndex },
    Extend { reason: ExtendReason },
    /// Termination was due but nobody is reported anywhere.
    Hold,
    Terminate {
        reason: TerminateReason,
        next: StageIndex,
        next_score: f64,
        /// New maximum greens when this termination completes a cycle.
        reset: Option<Vec<f64>>,
        /// Stage scores the choice was made on.
        scores: Vec<f64>,
    },
}

impl Decision {
    pub fn kind(&self) -> &'static str {
        match self {
            Decision::Clearance => "clearance",
            Decision::Activate { .. } => "activate",
            Decision::Extend { reason: ExtendReason::MinGreen } => "extend_min",
            Decision::Extend { reason: ExtendReason::Gap } => "extend_gap",
            Decision::Hold => "hold",
            Decision::Terminate { reason: TerminateReason::GapOut, .. } => "terminate_gap",
            Decision::Terminate { reason: TerminateReason::MaxGreen, .. } => "terminate_max",
        }
    }
}

/// Indication plus the decision that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalCommand {
    pub green: Vec<bool>,
    pub decision: Decision,
}

/// Choose the stage that follows a termination, given whether a cycle reset
/// clears the bookkeeping first.
///
/// Eligible stages have not been activated this cycle and contain at least
/// one unserved signal group. The highest score wins, ties to the lower index.
/// When every eligible score is zero, the first eligible stage holding an
/// unserved signal group with reports is taken instead.
pub fn select_next_stage(
    scores: &[f64],
    activated: &[bool],
    served: &[bool],
    demand: &[bool],
    x: &Intersection,
) -> Option<StageIndex> {
    let eligible: Vec<StageIndex> = (0..x.num_stages())
        .filter(|&s| !activated[s] && x.stage_signal_groups(s).any(|g| !served[g]))
        .collect();
    let mut best: Option<StageIndex> = None;
    for &s in &eligible {
        if best.is_none_or(|b| scores[s] > scores[b]) {
            best = Some(s);
        }
    }
    match best {
        Some(b) if scores[b] > 0.0 => Some(b),
        _ => eligible
            .iter()
            .copied()
            .find(|&s| x.stage_signal_groups(s).any(|g| !served[g] && demand[g]))
            .or(best),
    }
}

/// What the controller would do this second on `registry`, without changing `state`.
pub fn decide(state: &ControllerState, registry: &ReportRegistry, x: &Intersection, params: &ControlParams) -> Decision {
    let (stage, elapsed) = match state.phase {
        Phase::Interstage { next, elapsed } => {
            return if elapsed < params.interstage_s { Decision::Clearance } else { Decision::Activate { stage: next } };
        }
        Phase::Green { stage, elapsed } => (stage, elapsed),
    };
    if elapsed < params.min_green_s {
        return Decision::Extend { reason: ExtendReason::MinGreen };
    }
    let reason = if elapsed + 1.0 > state.max_green[stage] {
        TerminateReason::MaxGreen
    } else {
        let gap = active_lanes(x, stage).map(|l| gap_time(registry, l)).fold(f64::INFINITY, f64::min);
        if gap < params.max_gap_s {
            return Decision::Extend { reason: ExtendReason::Gap };
        }
        TerminateReason::GapOut
    };
    let n = x.num_signal_groups();
    let demand = registry.demand_bearing(n);
    if !demand.iter().any(|&d| d) {
        return Decision::Hold;
    }
    let scores = stage_scores(&group_scores(registry, n, params.detection_range_m), x);
    let all_served = (0..n).all(|g| !demand[g] || state.served[g]);
    let (reset, activated, served) = if all_served {
        (Some(end_of_cycle_update(&state.stored_scores, params)), vec![false; x.num_stages()], vec![false; n])
    } else {
        (None, state.activated.clone(), state.served.clone())
    };
    let next = select_next_stage(&scores, &activated, &served, &demand, x)
        .expect("an eligible stage exists whenever some signal group is unserved");
    Decision::Terminate { reason, next, next_score: scores[next], reset, scores }
}

/// Commit a decision and return the indication for the coming second.
pub fn apply(state: &mut ControllerState, decision: &Decision, x: &Intersection, params: &ControlParams) -> Vec<bool> {
    match (*decision).clone() {
        Decision::Clearance => match &mut state.phase {
            Phase::Interstage { elapsed, .. } => *elapsed += 1.0,
            Phase::Green { .. } => panic!("clearance outside interstage"),
        },
        Decision::Activate { stage } => {
            state.phase = Phase::Green { stage, elapsed: 1.0 };
        }
        Decision::Extend { .. } => match &mut state.phase {
            Phase::Green { elapsed, .. } => *elapsed += 1.0,
            Phase::Interstage { .. } => panic!("extension during interstage"),
        },
        Decision::Hold => match &mut state.phase {
            Phase::Green { elapsed, .. } => *elapsed = elapsed.min(params.min_green_s),
            Phase::Interstage { .. } => panic!("hold during interstage"),
        },
        Decision::Terminate { next, next_score, reset, .. } => {
            if let Some(table) = reset {
                state.max_green = table;
                state.activated.iter_mut().for_each(|a| *a = false);
                state.served.iter_mut().for_each(|s| *s = false);
                state.stored_scores.iter_mut().for_each(|w| *w = 0.0);
                state.cycle += 1;
            }
            state.mark(x, next, next_score);
            state.phase = if params.interstage_s > 0.0 {
                Phase::Interstage { next, elapsed: 1.0 }
            } else {
                Phase::Green { stage: next, elapsed: 1.0 }
            };
            if params.interstage_s > 0.0 {
                return vec![false; x.num_signal_groups()];
            }
        }
    }
    state.indication(x)
}

/// Decide and apply in one call.
pub fn control_tick(state: &mut ControllerState, registry: &ReportRegistry, x: &Intersection, params: &ControlParams) -> SignalCommand {
    let decision = decide(state, registry, x, params);
    let green = apply(state, &decision, x, params);
    SignalCommand { green, decision }
}

/// Lanes belonging to the signal groups of `stage`.
pub fn active_lanes(x: &Intersection, stage: StageIndex) -> impl Iterator<Item = LaneIndex> + '_ {
    x.stage_signal_groups(stage).flat_map(move |g| x.signal_groups[g].lanes.iter().copied())
}
