//! Compensation for lost messages: vehicles that were known last step but sent
//! nothing this step are carried forward at constant speed on their lane,
//! never closer than the minimum spacing behind the vehicle ahead.
//!
//! On green, the first vehicle of a lane moves at least at the speed floor
//! the controller applies when computing gaps. A vehicle last heard at rest
//! at the head of a queue therefore still reaches the stop line and leaves
//! the picture, instead of holding the green as a ghost.

use std::collections::BTreeSet;

use crate::controller::{Origin, Report, ReportRegistry, GAP_SPEED_FLOOR_MPS};
use crate::scenario::{EstimatorParams, LaneIndex};
use crate::traffic::VehicleId;

/// Control interval over which estimates are projected.
pub const STEP_S: f64 = 1.0;

/// Settings the estimator needs from the rest of the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub min_spacing_m: f64,
    pub max_age_steps: Option<u32>,
}

impl EstimatorConfig {
    pub fn new(min_spacing_m: f64, params: &EstimatorParams) -> Self {
        EstimatorConfig { min_spacing_m, max_age_steps: params.max_age_steps }
    }
}

/// Vehicles known in the previous registry with no measured report now.
pub fn detect_missing(measured: &ReportRegistry, previous: &ReportRegistry) -> BTreeSet<VehicleId> {
    previous.ids().filter(|id| !measured.contains(*id)).collect()
}

/// Carry one missing vehicle forward.
///
/// `leader_d` is the current position of the nearest vehicle ahead on the same
/// lane, if any. Returns `None` when the vehicle is taken to have crossed: its
/// group is green and the projection passes the stop line. On red the
/// estimate waits at the stop line instead.
pub fn extrapolate(prev: &Report, leader_d: Option<f64>, green: bool, cfg: &EstimatorConfig) -> Option<Report> {
    let age = prev.age + 1;
    if cfg.max_age_steps.is_some_and(|m| age > m) {
        return None;
    }
    let d = match leader_d {
        Some(ld) => (prev.d - prev.v * STEP_S).max(ld + cfg.min_spacing_m).min(prev.d),
        None => {
            let speed = if green { prev.v.max(GAP_SPEED_FLOOR_MPS) } else { prev.v };
            let projected = prev.d - speed * STEP_S;
            if green && projected < 0.0 {
                return None;
            }
            projected.max(0.0)
        }
    };
    Some(Report { d, age, origin: Origin::Estimated, ..*prev })
}

/// Measured reports plus estimates, measured entries taking precedence.
pub fn merge(measured: &ReportRegistry, estimates: impl IntoIterator<Item = Report>) -> ReportRegistry {
    let mut out = measured.clone();
    for e in estimates {
        if !out.contains(e.vehicle) {
            out.insert(e);
        }
    }
    out
}

/// Corrected registry for this step from this step's measured reports and
/// last step's corrected registry. `green[g]` tells whether signal group `g`
/// showed green at any time since the previous registry was formed.
pub fn correct(
    measured: &ReportRegistry,
    previous: &ReportRegistry,
    green: &[bool],
    num_lanes: usize,
    cfg: &EstimatorConfig,
) -> ReportRegistry {
    let missing = detect_missing(measured, previous);
    if missing.is_empty() {
        return measured.clone();
    }
    let mut current = measured.clone();
    let lanes: BTreeSet<LaneIndex> = missing.iter().filter_map(|id| previous.get(*id)).map(|r| r.lane).collect();
    for lane in lanes.into_iter().filter(|&l| l < num_lanes) {
        // Walk last step's lane order from the stop line backwards so every
        // leader is resolved before its follower.
        let mut leader_d: Option<f64> = None;
        for prev in previous.lane_order(lane) {
            if missing.contains(&prev.vehicle) {
                if let Some(est) = extrapolate(&prev, leader_d, green[prev.sg], cfg) {
                    leader_d = Some(est.d);
                    current.insert(est);
                }
            } else if let Some(now) = current.get(prev.vehicle) {
                leader_d = Some(now.d);
            }
        }
    }
    current
}
