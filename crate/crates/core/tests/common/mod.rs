#![allow(dead_code)]

use std::collections::BTreeSet;

use crossflux::controller::{self, ControllerState, Decision, Origin, Report, ReportRegistry};
use crossflux::estimator::{self, EstimatorConfig};
use crossflux::scenario::{Approach, Scenario};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent evaluation of the two-ray closed form in complex arithmetic.
pub fn two_ray_oracle(d: f64, h_t: f64, h_r: f64, freq_hz: f64, eps_r: f64) -> f64 {
    let lambda = 299_792_458.0 / freq_hz;
    let d_los = d.hypot(h_t - h_r);
    let d_ref = d.hypot(h_t + h_r);
    let sin_t = Complex64::new((h_t + h_r) / d_ref, 0.0);
    let cos_t = d / d_ref;
    let root = Complex64::new(eps_r - cos_t * cos_t, 0.0).sqrt();
    let gamma = (sin_t - root) / (sin_t + root);
    let phi = 2.0 * std::f64::consts::PI * (4.0 * h_t * h_r / (d_ref + d_los)) / lambda;
    let sum = Complex64::new(1.0, 0.0) + gamma * Complex64::from_polar(1.0, phi);
    20.0 * (4.0 * std::f64::consts::PI * d / lambda).log10() - 20.0 * sum.norm().log10()
}

pub fn short_scenario(warmup_s: u32, evaluation_s: u32) -> Scenario {
    let mut s = Scenario::default_case_study();
    s.run.warmup_s = warmup_s;
    s.run.evaluation_s = evaluation_s;
    s
}

fn random_registry(rng: &mut ChaCha8Rng, x: &crossflux::Intersection) -> ReportRegistry {
    let mut reg = ReportRegistry::new();
    for id in 0..rng.random_range(1..12u64) {
        let sg = rng.random_range(0..x.num_signal_groups());
        let lanes = &x.signal_groups[sg].lanes;
        reg.insert(Report {
            vehicle: id,
            sg,
            lane: lanes[rng.random_range(0..lanes.len())],
            approach: x.signal_groups[sg].approach,
            d: rng.random_range(0.0..400.0),
            v: rng.random_range(0.0..14.0),
            origin: Origin::Measured,
            age: 0,
        });
    }
    reg
}

/// Outcome of driving the controller with random, never-empty registries.
#[derive(Debug, Default)]
pub struct FuzzReport {
    pub steps: usize,
    pub cycles: u32,
    pub greens: usize,
    pub violations: Vec<String>,
}

/// Drive the controller for `steps` seconds and check safety, green bounds,
/// interstage length, single activation per cycle, cycle service and the
/// green budget after every reset.
pub fn controller_fuzz(steps: usize, seed: u64) -> FuzzReport {
    let sc = Scenario::default_case_study();
    let x = sc.intersection();
    let cp = sc.control.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ControllerState::new(&x, &cp);
    let mut reg = random_registry(&mut rng, &x);
    let mut out = FuzzReport { steps, ..Default::default() };

    let mut shown: BTreeSet<usize> = x.stage_signal_groups(0).collect();
    let mut activated_this_cycle: BTreeSet<usize> = BTreeSet::from([0]);
    // (stage, seconds green so far, cap at activation)
    let mut green_run: Option<(usize, u32, f64)> = Some((0, 0, state.max_green[0]));
    let mut red_run: u32 = 0;
    let mut seen_green = false;

    for k in 0..steps {
        if rng.random_bool(0.3) {
            reg = random_registry(&mut rng, &x);
        }
        let decision = controller::decide(&state, &reg, &x, &cp);
        if let Decision::Terminate { next, reset, .. } = &decision {
            if let Some(table) = reset {
                let demand = reg.demand_bearing(x.num_signal_groups());
                for g in (0..demand.len()).filter(|&g| demand[g]) {
                    if !shown.contains(&g) {
                        out.violations.push(format!("t={k}: signal group {g} had demand but no green this cycle"));
                    }
                }
                let budget: f64 = table.iter().map(|l| l - cp.min_green_s).sum();
                if (budget - cp.green_extension_s).abs() > 1e-9 {
                    out.violations.push(format!("t={k}: green budget {budget} after reset"));
                }
                shown.clear();
                activated_this_cycle.clear();
                out.cycles += 1;
            }
            if !activated_this_cycle.insert(*next) {
                out.violations.push(format!("t={k}: stage {next} chosen twice in one cycle"));
            }
        }
        if matches!(decision, Decision::Hold) {
            out.violations.push(format!("t={k}: hold with demand present"));
        }
        let green = controller::apply(&mut state, &decision, &x, &cp);
        let on: BTreeSet<usize> = (0..green.len()).filter(|&g| green[g]).collect();

        if on.is_empty() {
            if let Some((stage, secs, cap)) = green_run.take() {
                out.greens += 1;
                if f64::from(secs) < cp.min_green_s || f64::from(secs) > cap + 1e-9 {
                    out.violations.push(format!("t={k}: stage {stage} green for {secs} s, bounds [{}, {cap}]", cp.min_green_s));
                }
            }
            red_run += 1;
            continue;
        }
        let Some(stage) = (0..x.num_stages()).find(|&s| x.stage_signal_groups(s).collect::<BTreeSet<_>>() == on) else {
            out.violations.push(format!("t={k}: green set {on:?} is not a stage"));
            continue;
        };
        shown.extend(on.iter().copied());
        match &mut green_run {
            Some((s, secs, _)) if *s == stage => *secs += 1,
            Some((s, ..)) => out.violations.push(format!("t={k}: stage {s} went straight to stage {stage}")),
            None => {
                if seen_green && f64::from(red_run) != cp.interstage_s {
                    out.violations.push(format!("t={k}: all-red lasted {red_run} s"));
                }
                green_run = Some((stage, 1, state.max_green[stage]));
            }
        }
        seen_green = true;
        red_run = 0;
    }
    out
}

/// A three-vehicle lane on green over five steps of correction. Vehicle 1
/// is always measured until the last step; vehicle 2 is lost throughout and
/// vehicle 3 from the second step on.
pub fn estimator_fixture() -> Vec<[Option<f64>; 3]> {
    let cfg = EstimatorConfig { min_spacing_m: 7.0, max_age_steps: None };
    let rep = |id: u64, d: f64, v: f64| Report {
        vehicle: id,
        sg: 0,
        lane: 0,
        approach: Approach::North,
        d,
        v,
        origin: Origin::Measured,
        age: 0,
    };
    let reg = |items: &[Report]| {
        let mut r = ReportRegistry::new();
        items.iter().for_each(|i| r.insert(*i));
        r
    };
    let mut previous = reg(&[rep(1, 20.0, 5.0), rep(2, 35.0, 8.0), rep(3, 60.0, 10.0)]);
    let measured = [
        reg(&[rep(1, 15.0, 5.0), rep(3, 50.0, 10.0)]),
        reg(&[rep(1, 10.0, 5.0)]),
        reg(&[rep(1, 6.0, 3.0)]),
        reg(&[rep(1, 3.0, 3.0)]),
        reg(&[]),
    ];
    let mut out = Vec::new();
    for m in &measured {
        previous = estimator::correct(m, &previous, &[true; 8], 16, &cfg);
        out.push([1, 2, 3].map(|id| previous.get(id).map(|r| r.d)));
    }
    out
}

/// Hand-computed positions for [`estimator_fixture`]. Each estimate is
/// max(d - v, leader + 7), never above its previous position; the front
/// vehicle on green is dropped once its projection passes the line.
pub const ESTIMATOR_EXPECTED: [[Option<f64>; 3]; 5] = [
    [Some(15.0), Some(27.0), Some(50.0)],
    [Some(10.0), Some(19.0), Some(40.0)],
    [Some(6.0), Some(13.0), Some(30.0)],
    [Some(3.0), Some(10.0), Some(20.0)],
    [Some(0.0), Some(7.0), Some(14.0)],
];
