//! V2I link: CAM scheduling, two-ray interference path loss and the SNR
//! threshold delivery rule at the per-approach RSU antennas.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::{Approach, ChannelParams, Condition, Fading, LaneIndex, SgIndex};
use crate::traffic::VehicleId;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Horizontal distances below this are evaluated at this value; a vehicle
/// waiting at the stop line sits almost under the antenna.
pub const MIN_HORIZONTAL_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonPositiveDistance(pub f64);

impl std::fmt::Display for NonPositiveDistance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "path loss needs a positive distance, got {}", self.0)
    }
}

impl std::error::Error for NonPositiveDistance {}

/// Two-ray interference path loss (dB) over flat ground with relative
/// permittivity `eps_r`, for horizontal distance `d` between antennas at
/// heights `h_t` and `h_r`.
///
/// The ground-reflected ray is weighted by the Fresnel reflection
/// coefficient and combined coherently with the line-of-sight ray; the
/// result is the free-space loss over `d` divided by the magnitude of that
/// sum.
pub fn two_ray_path_loss(d: f64, h_t: f64, h_r: f64, freq_hz: f64, eps_r: f64) -> Result<f64, NonPositiveDistance> {
    if d.is_nan() || d <= 0.0 {
        return Err(NonPositiveDistance(d));
    }
    let lambda = SPEED_OF_LIGHT / freq_hz;
    let d_los = (d * d + (h_t - h_r).powi(2)).sqrt();
    let d_ref = (d * d + (h_t + h_r).powi(2)).sqrt();
    let sin_t = (h_t + h_r) / d_ref;
    let cos_t = d / d_ref;
    let root = (eps_r - cos_t * cos_t).sqrt();
    let gamma = (sin_t - root) / (sin_t + root);
    // Path difference written without cancellation; d_ref - d_los loses
    // most of its digits at long range.
    let delta = 4.0 * h_t * h_r / (d_ref + d_los);
    let phi = 2.0 * std::f64::consts::PI * delta / lambda;
    // |1 + gamma e^{j phi}|, gamma real.
    let sum = (1.0 + 2.0 * gamma * phi.cos() + gamma * gamma).sqrt();
    Ok(20.0 * (4.0 * std::f64::consts::PI * d / lambda / sum).log10())
}

/// First-transmission offset of a newly entered vehicle, uniform on `[0, period)`.
pub fn schedule_cam<R: Rng + ?Sized>(rng: &mut R, period: f64) -> f64 {
    rng.random::<f64>() * period
}

/// Fading gain (dB) of one message. Draws nothing when fading is off.
pub fn fading_gain_db<R: Rng + ?Sized>(rng: &mut R, model: Fading, sigma_db: f64) -> f64 {
    match model {
        Fading::None => 0.0,
        Fading::Rayleigh => {
            let power: f64 = Exp1.sample(rng);
            10.0 * power.max(f64::MIN_POSITIVE).log10()
        }
        Fading::Lognormal => {
            let z: f64 = StandardNormal.sample(rng);
            sigma_db * z
        }
    }
}

/// Cooperative awareness message as sent by a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamMessage {
    pub vehicle: VehicleId,
    pub timestamp: f64,
    pub d: f64,
    pub v: f64,
    pub lane: LaneIndex,
    pub sg: SgIndex,
    pub approach: Approach,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub distance_m: f64,
    pub path_loss_db: f64,
    pub received_power_dbm: f64,
    pub snr_db: f64,
    pub penalty_db: f64,
    pub fading_db: f64,
    pub delivered: bool,
}

/// Link budget for one message to its approach antenna, with `fading_db`
/// added to the received power.
pub fn link_budget(
    distance_to_stop_line: f64,
    approach: Approach,
    params: &ChannelParams,
    condition: &Condition,
    fading_db: f64,
) -> LinkBudget {
    let distance_m = distance_to_stop_line.max(MIN_HORIZONTAL_DISTANCE_M);
    let path_loss_db = two_ray_path_loss(
        distance_m,
        params.rsu_antenna_height_m,
        params.vehicle_antenna_height_m,
        params.carrier_frequency_hz,
        params.asphalt_permittivity,
    )
    .expect("distance clamped positive");
    let received_power_dbm = params.tx_power_dbm - path_loss_db + fading_db;
    let (penalty_db, delivered_by_snr);
    let snr_db;
    if condition.is_lossless() {
        penalty_db = 0.0;
        snr_db = received_power_dbm - params.background_noise_dbm;
        delivered_by_snr = true;
    } else {
        penalty_db = condition.penalty_for(approach) + params.approach_penalty_db.get(approach);
        snr_db = received_power_dbm - penalty_db - params.background_noise_dbm;
        delivered_by_snr = snr_db >= params.snr_threshold_db;
    }
    LinkBudget { distance_m, path_loss_db, received_power_dbm, snr_db, penalty_db, fading_db, delivered: delivered_by_snr }
}

/// Sent/received message counts per approach.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommsCounters {
    pub sent: [u64; 4],
    pub received: [u64; 4],
}

/// Grouping of approaches for loss ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    All,
    West,
    Others,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::All, Scope::West, Scope::Others];

    pub fn contains(self, approach: Approach) -> bool {
        match self {
            Scope::All => true,
            Scope::West => approach == Approach::West,
            Scope::Others => approach != Approach::West,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::West => "west",
            Scope::Others => "others",
        }
    }
}

impl CommsCounters {
    pub fn record(&mut self, approach: Approach, delivered: bool) {
        self.sent[approach.index()] += 1;
        if delivered {
            self.received[approach.index()] += 1;
        }
    }

    pub fn sent_in(&self, scope: Scope) -> u64 {
        Approach::ALL.iter().filter(|a| scope.contains(**a)).map(|a| self.sent[a.index()]).sum()
    }

    pub fn received_in(&self, scope: Scope) -> u64 {
        Approach::ALL.iter().filter(|a| scope.contains(**a)).map(|a| self.received[a.index()]).sum()
    }

    pub fn merge(&mut self, other: &CommsCounters) {
        for i in 0..4 {
            self.sent[i] += other.sent[i];
            self.received[i] += other.received[i];
        }
    }
}

/// One row of the per-message loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub t: f64,
    pub vehicle: VehicleId,
    pub approach: Approach,
    pub distance_m: f64,
    pub snr_db: f64,
    pub delivered: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Delivery {
    pub received: Vec<CamMessage>,
    pub log: Vec<MessageRecord>,
    pub counters: CommsCounters,
}

/// Pass a batch of transmitted messages through the channel.
///
/// One fading value is drawn per message whatever the condition, so runs that
/// share a seed see the same fades and differ only in penalty.
pub fn deliver<R: Rng + ?Sized>(msgs: &[CamMessage], params: &ChannelParams, condition: &Condition, rng: &mut R) -> Delivery {
    let mut out = Delivery::default();
    for msg in msgs {
        let fading = fading_gain_db(rng, params.fading, params.fading_sigma_db);
        let budget = link_budget(msg.d, msg.approach, params, condition, fading);
        out.counters.record(msg.approach, budget.delivered);
        out.log.push(MessageRecord {
            t: msg.timestamp,
            vehicle: msg.vehicle,
            approach: msg.approach,
            distance_m: budget.distance_m,
            snr_db: budget.snr_db,
            delivered: budget.delivered,
        });
        if budget.delivered {
            out.received.push(*msg);
        }
    }
    out
}
