//! Ground-truth microscopic traffic: Poisson arrivals, bounded-acceleration
//! car following, stop-line discharge and delay accounting.
//!
//! Each lane is a single-file queue ordered from the stop line backwards.
//! Distances `d` are measured to the stop line; a vehicle crosses when `d`
//! reaches 0 under a green indication.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::rng::{substream, Substream};
use crate::scenario::{Approach, Intersection, LaneIndex, SgIndex, TrafficParams};

pub type VehicleId = u64;

/// Ground-truth kinematic state of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub sg: SgIndex,
    pub lane: LaneIndex,
    pub approach: Approach,
    /// Distance to the stop line (m).
    pub d: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Time the vehicle arrived at the link entrance (s). Includes any hold-back.
    pub entry_time: f64,
    pub crossing_time: Option<f64>,
    pub free_flow_time: f64,
    /// State at the start of the last sub-step, for interpolation.
    pub prev_d: f64,
    pub prev_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotCrossed(pub VehicleId);

impl std::fmt::Display for NotCrossed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "vehicle {} has not crossed the stop line", self.0)
    }
}

impl std::error::Error for NotCrossed {}

impl Vehicle {
    /// Position and speed at absolute time `at`, which must fall inside the
    /// last sub-step `[t_end - dt, t_end]`.
    pub fn interpolate(&self, at: f64, t_end: f64, dt: f64) -> (f64, f64) {
        let frac = ((at - (t_end - dt)) / dt).clamp(0.0, 1.0);
        (self.prev_d + (self.d - self.prev_d) * frac, self.prev_v + (self.v - self.prev_v) * frac)
    }
}

/// Time lost relative to free-flow travel over the link.
pub fn delay_of(vehicle: &Vehicle) -> Result<f64, NotCrossed> {
    let crossed = vehicle.crossing_time.ok_or(NotCrossed(vehicle.id))?;
    Ok(crossed - vehicle.entry_time - vehicle.free_flow_time)
}

/// One row of a ground-truth snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEntry {
    pub id: VehicleId,
    pub sg: SgIndex,
    pub lane: LaneIndex,
    pub d: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
struct LaneState {
    sg: SgIndex,
    approach: Approach,
    link_length: f64,
    vehicles: VecDeque<Vehicle>,
    /// Nominal arrival times of vehicles waiting for space at the entrance.
    pending: VecDeque<f64>,
    next_arrival: f64,
    interarrival: Option<Exp<f64>>,
    rng: ChaCha8Rng,
    last_crossing: f64,
}

impl LaneState {
    fn draw_interarrival(&mut self) -> f64 {
        match &self.interarrival {
            Some(exp) => exp.sample(&mut self.rng),
            None => f64::INFINITY,
        }
    }
}

/// Speed that still allows stopping behind an obstacle `gap` metres ahead
/// moving at `lead_speed`, after a reaction time.
fn safe_speed(gap: f64, lead_speed: f64, decel: f64, reaction: f64) -> f64 {
    let br = decel * reaction;
    -br + (br * br + lead_speed * lead_speed + 2.0 * decel * gap.max(0.0)).sqrt()
}

#[derive(Debug, Clone)]
pub struct TrafficState {
    params: TrafficParams,
    lanes: Vec<LaneState>,
    next_id: VehicleId,
    entered: u64,
    exited: u64,
}

impl TrafficState {
    pub fn new(intersection: &Intersection, params: &TrafficParams, seed: u64) -> Self {
        let lanes = intersection
            .lanes
            .iter()
            .enumerate()
            .map(|(i, lane)| {
                let rate = lane.flow_veh_h / 3600.0;
                let mut state = LaneState {
                    sg: lane.sg,
                    approach: lane.approach,
                    link_length: lane.link_length_m,
                    vehicles: VecDeque::new(),
                    pending: VecDeque::new(),
                    next_arrival: 0.0,
                    interarrival: (rate > 0.0).then(|| Exp::new(rate).expect("positive rate")),
                    rng: substream(seed, Substream::Arrivals(i)),
                    last_crossing: f64::NEG_INFINITY,
                };
                state.next_arrival = state.draw_interarrival();
                state
            })
            .collect();
        TrafficState { params: params.clone(), lanes, next_id: 0, entered: 0, exited: 0 }
    }

    pub fn params(&self) -> &TrafficParams {
        &self.params
    }

    pub fn entered(&self) -> u64 {
        self.entered
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn active(&self) -> usize {
        self.lanes.iter().map(|l| l.vehicles.len()).sum()
    }

    /// Vehicles waiting to enter because their lane entrance is blocked.
    pub fn held_back(&self) -> usize {
        self.lanes.iter().map(|l| l.pending.len()).sum()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flat_map(|l| l.vehicles.iter())
    }

    pub fn lane_vehicles(&self, lane: LaneIndex) -> impl Iterator<Item = &Vehicle> {
        self.lanes[lane].vehicles.iter()
    }

    /// Place a vehicle directly, bypassing the arrival process. The lane must
    /// have room at distance `d` behind its current last vehicle.
    pub fn insert_vehicle(&mut self, lane: LaneIndex, d: f64, v: f64, entry_time: f64) -> VehicleId {
        let id = self.next_id;
        self.next_id += 1;
        let ls = &mut self.lanes[lane];
        if let Some(last) = ls.vehicles.back() {
            assert!(d - last.d >= self.params.min_spacing_m - 1e-9, "insert would violate spacing");
        }
        ls.vehicles.push_back(Vehicle {
            id,
            sg: ls.sg,
            lane,
            approach: ls.approach,
            d,
            v,
            entry_time,
            crossing_time: None,
            free_flow_time: ls.link_length / self.params.free_speed_mps,
            prev_d: d,
            prev_v: v,
        });
        self.entered += 1;
        id
    }

    /// Draw Poisson arrivals up to time `t` and let waiting vehicles enter
    /// where the lane entrance has room. Vehicles enter at the start of the
    /// coming sub-step, so none starts moving before its arrival time.
    /// Returns the ids of vehicles that entered.
    pub fn spawn_arrivals(&mut self, t: f64) -> Vec<VehicleId> {
        let p = self.params.clone();
        let mut entered = Vec::new();
        for lane in 0..self.lanes.len() {
            let ls = &mut self.lanes[lane];
            while ls.next_arrival <= t {
                let at = ls.next_arrival;
                ls.pending.push_back(at);
                ls.next_arrival = at + ls.draw_interarrival();
            }
            let Some(&arrival) = ls.pending.front() else { continue };
            let length = ls.link_length;
            let speed = match ls.vehicles.back() {
                None => p.free_speed_mps,
                Some(last) => {
                    let gap = length - last.d - p.min_spacing_m;
                    if gap < 0.0 {
                        continue;
                    }
                    p.free_speed_mps.min(safe_speed(gap, last.v, p.max_decel_mps2, p.reaction_time_s))
                }
            };
            ls.pending.pop_front();
            entered.push(self.insert_vehicle(lane, length, speed, arrival));
        }
        entered
    }

    /// Advance all vehicles by one sub-step `dt` starting at time `t` under
    /// the given per-signal-group indication (`true` = green). Returns the
    /// vehicles that crossed the stop line during the sub-step.
    pub fn step(&mut self, t: f64, green: &[bool], dt: f64) -> Vec<Vehicle> {
        assert!(dt > 0.0 && dt <= 1.0);
        let p = &self.params;
        let (a, b, tau) = (p.max_accel_mps2, p.max_decel_mps2, p.reaction_time_s);
        let mut crossed = Vec::new();
        for ls in &mut self.lanes {
            let is_green = green[ls.sg];
            let opens_at = ls.last_crossing + p.saturation_headway_s;
            let gate_open = is_green && t >= opens_at - 1e-9;
            let mut leader: Option<(f64, f64)> = None;
            for veh in ls.vehicles.iter_mut() {
                let v_old = veh.v;
                let mut v_new = (v_old + a * dt).min(p.free_speed_mps);
                // Red is a hard wall at the stop line for the front vehicle. On
                // green a closed discharge gate makes it pace itself to reach
                // the line no earlier than the gate opens.
                let wall = leader.is_none() && !gate_open;
                match leader {
                    Some((ld, lv)) => {
                        v_new = v_new.min(safe_speed(veh.d - ld - p.min_spacing_m, lv, b, tau));
                    }
                    None if !is_green => v_new = v_new.min(safe_speed(veh.d, 0.0, b, tau)),
                    None if wall => {
                        let pace = veh.d.max(0.0) / (opens_at - t).max(dt);
                        v_new = v_new.min(pace.max(safe_speed(veh.d, 0.0, b, tau).min(v_old)));
                    }
                    None => {}
                }
                v_new = v_new.max(0.0);
                let mut d_new = veh.d - v_new * dt;
                if let Some((ld, _)) = leader {
                    let floor = ld + p.min_spacing_m;
                    if d_new < floor {
                        d_new = floor.min(veh.d);
                        v_new = (veh.d - d_new) / dt;
                    }
                } else if wall && d_new < 0.0 {
                    d_new = 0.0_f64.min(veh.d);
                    v_new = (veh.d - d_new) / dt;
                }
                veh.prev_d = veh.d;
                veh.prev_v = v_old;
                veh.d = d_new;
                veh.v = v_new;
                leader = Some((d_new, v_new));
            }
            while gate_open && ls.vehicles.front().is_some_and(|v| v.d < 0.0 || (v.d <= 0.0 && v.prev_d > 0.0)) {
                let mut veh = ls.vehicles.pop_front().expect("front exists");
                let frac = if veh.prev_d > veh.d { (veh.prev_d / (veh.prev_d - veh.d)).clamp(0.0, 1.0) } else { 0.0 };
                let at = t + frac * dt;
                veh.crossing_time = Some(at);
                ls.last_crossing = at;
                self.exited += 1;
                crossed.push(veh);
            }
        }
        crossed
    }

    /// Exact copy of every active vehicle's state.
    pub fn ground_truth_snapshot(&self) -> Vec<TruthEntry> {
        self.vehicles()
            .map(|v| TruthEntry { id: v.id, sg: v.sg, lane: v.lane, d: v.d, v: v.v })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn single_lane(flow: f64) -> (Intersection, TrafficParams) {
        let mut s = Scenario::default_case_study();
        for f in s.demand.flow_veh_h.values_mut() {
            *f = 0.0;
        }
        s.demand.flow_veh_h.insert("north_tr".into(), flow);
        (s.intersection(), s.traffic.clone())
    }

    fn run(state: &mut TrafficState, from: f64, to: f64, green: &[bool], log: &mut Vec<Vehicle>) {
        let dt = state.params().substep_s;
        let mut t = from;
        while t < to - 1e-9 {
            state.spawn_arrivals(t);
            log.extend(state.step(t, green, dt));
            t += dt;
        }
    }

    #[test]
    fn zero_flow_never_spawns() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        for k in 0..36_000 {
            assert!(s.spawn_arrivals(k as f64 * 0.1).is_empty());
        }
        assert_eq!(s.entered(), 0);
    }

    #[test]
    fn free_flow_single_vehicle() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        s.insert_vehicle(0, 200.0, p.free_speed_mps, 0.0);
        let green = vec![true; 8];
        s.step(0.0, &green, 0.1);
        let v = s.vehicles().next().unwrap();
        assert!((v.d - (200.0 - p.free_speed_mps * 0.1)).abs() < 1e-12);
        assert_eq!(v.v, p.free_speed_mps);
    }

    #[test]
    fn stopped_at_red_stays() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        s.insert_vehicle(0, 0.0, 0.0, 0.0);
        let red = vec![false; 8];
        let mut log = Vec::new();
        run(&mut s, 0.0, 30.0, &red, &mut log);
        let v = s.vehicles().next().unwrap();
        assert_eq!((v.d, v.v), (0.0, 0.0));
        assert!(log.is_empty());
    }

    #[test]
    fn unimpeded_vehicle_has_no_delay() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        s.insert_vehicle(0, 400.0, p.free_speed_mps, 0.0);
        let mut log = Vec::new();
        run(&mut s, 0.0, 60.0, &[true; 8], &mut log);
        assert_eq!(log.len(), 1);
        let delay = delay_of(&log[0]).unwrap();
        assert!(delay.abs() <= 0.5, "delay {delay}");
    }

    #[test]
    fn held_at_red_for_thirty_seconds() {
        // Red until 30 s after the vehicle's free-flow arrival at the line.
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        s.insert_vehicle(0, 400.0, p.free_speed_mps, 0.0);
        let free_arrival = 400.0 / p.free_speed_mps;
        let switch = (free_arrival + 30.0) * 10.0;
        let mut log = Vec::new();
        let mut t = 0.0;
        for k in 0..1200 {
            let green = k as f64 >= switch.round();
            log.extend(s.step(t, &[green; 8], 0.1));
            t += 0.1;
        }
        let delay = delay_of(&log[0]).unwrap();
        assert!((delay - 30.0).abs() <= 1.0, "delay {delay}");
    }

    #[test]
    fn delay_requires_crossing() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        s.insert_vehicle(0, 100.0, 0.0, 0.0);
        let v = s.vehicles().next().unwrap();
        assert_eq!(delay_of(v), Err(NotCrossed(v.id)));
    }

    #[test]
    fn queue_discharges_at_saturation_headway() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        for i in 0..5 {
            s.insert_vehicle(0, i as f64 * p.min_spacing_m, 0.0, 0.0);
        }
        let mut log = Vec::new();
        run(&mut s, 0.0, 40.0, &[true; 8], &mut log);
        assert_eq!(log.len(), 5);
        let times: Vec<f64> = log.iter().map(|v| v.crossing_time.unwrap()).collect();
        for w in times.windows(2).skip(1) {
            let h = w[1] - w[0];
            assert!((h - p.saturation_headway_s).abs() <= 0.1 * p.saturation_headway_s, "headways {times:?}");
        }
    }

    #[test]
    fn snapshot_is_exact_and_pure() {
        let (x, p) = single_lane(0.0);
        let mut s = TrafficState::new(&x, &p, 1);
        assert!(s.ground_truth_snapshot().is_empty());
        s.insert_vehicle(0, 120.0, 5.0, 0.0);
        let a = s.ground_truth_snapshot();
        assert_eq!(a[0].d, 120.0);
        assert_eq!(a, s.ground_truth_snapshot());
    }
}
