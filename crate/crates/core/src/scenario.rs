//! Experiment description: intersection layout, demand, control, channel and
//! traffic parameters, plus the condition matrix.
//!
//! Scenario files are TOML documents. Every key is optional: a file is merged
//! key-by-key onto [`Scenario::default_case_study`], so an empty file yields
//! the full default case study. Arrays (signal groups, stages, conflicts,
//! conditions) replace the default array wholesale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;

/// Version written to and required from scenario files.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    North,
    South,
    East,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::South, Approach::East, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::North => "north",
            Approach::South => "south",
            Approach::East => "east",
            Approach::West => "west",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Through-and-right or protected left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Tr,
    L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalGroupSpec {
    pub name: String,
    pub approach: Approach,
    pub movement: Movement,
    pub lanes: u32,
    pub link_length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub signal_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionLayout {
    pub signal_groups: Vec<SignalGroupSpec>,
    pub stages: Vec<StageSpec>,
    /// Pairs of signal groups that may never be green together.
    pub conflicts: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Hourly flow per signal group name. Missing groups carry no traffic.
    pub flow_veh_h: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub min_green_s: f64,
    /// Total green extension shared among stages each cycle.
    pub green_extension_s: f64,
    pub max_gap_s: f64,
    pub interstage_s: f64,
    pub detection_range_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerApproach {
    pub north: f64,
    pub south: f64,
    pub east: f64,
    pub west: f64,
}

impl PerApproach {
    pub fn get(&self, approach: Approach) -> f64 {
        match approach {
            Approach::North => self.north,
            Approach::South => self.south,
            Approach::East => self.east,
            Approach::West => self.west,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    pub tx_power_dbm: f64,
    pub background_noise_dbm: f64,
    pub asphalt_permittivity: f64,
    pub rsu_antenna_height_m: f64,
    pub vehicle_antenna_height_m: f64,
    pub snr_threshold_db: f64,
    /// Site-specific penalty per approach, added on top of the condition's penalty.
    pub approach_penalty_db: PerApproach,
    pub cam_period_s: f64,
    pub message_length_bytes: u32,
    pub data_rate_mbps: f64,
    pub bandwidth_mhz: f64,
    pub transmission_range_m: f64,
    /// Random variation applied to each message on top of path loss.
    pub fading: Fading,
    /// Standard deviation of the log-normal variation.
    pub fading_sigma_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    /// Received power follows path loss exactly.
    #[default]
    None,
    /// Received power scaled by an exponential(1) draw per message.
    Rayleigh,
    /// Zero-mean Gaussian offset in dB with standard deviation `fading_sigma_db`.
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficParams {
    pub free_speed_mps: f64,
    pub max_accel_mps2: f64,
    pub max_decel_mps2: f64,
    /// Front-to-front spacing of stopped vehicles.
    pub min_spacing_m: f64,
    /// Minimum time between two crossings of the stop line on one lane.
    pub saturation_headway_s: f64,
    /// Driver reaction time used in the safe-speed rule.
    pub reaction_time_s: f64,
    pub substep_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorParams {
    /// Drop estimates older than this many steps. `None` keeps them until discarded.
    pub max_age_steps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunWindow {
    pub warmup_s: u32,
    pub evaluation_s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    /// Lossless delivery.
    Baseline,
    /// Same penalty on every approach.
    Homogeneous,
    /// Penalty on the West approach only.
    Heterogeneous,
}

impl Environment {
    pub fn name(self) -> &'static str {
        match self {
            Environment::Baseline => "baseline",
            Environment::Homogeneous => "homogeneous",
            Environment::Heterogeneous => "heterogeneous",
        }
    }
}

impl std::str::FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Environment::Baseline),
            "homogeneous" => Ok(Environment::Homogeneous),
            "heterogeneous" => Ok(Environment::Heterogeneous),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub environment: Environment,
    pub snr_penalty_db: f64,
    pub correction: bool,
}

impl Condition {
    pub fn baseline() -> Self {
        Condition { environment: Environment::Baseline, snr_penalty_db: 0.0, correction: false }
    }

    pub fn homogeneous(snr_penalty_db: f64, correction: bool) -> Self {
        Condition { environment: Environment::Homogeneous, snr_penalty_db, correction }
    }

    pub fn heterogeneous(snr_penalty_db: f64, correction: bool) -> Self {
        Condition { environment: Environment::Heterogeneous, snr_penalty_db, correction }
    }

    /// Penalty applied to messages arriving at the antenna of `approach`.
    pub fn penalty_for(&self, approach: Approach) -> f64 {
        match self.environment {
            Environment::Baseline => 0.0,
            Environment::Homogeneous => self.snr_penalty_db,
            Environment::Heterogeneous if approach == Approach::West => self.snr_penalty_db,
            Environment::Heterogeneous => 0.0,
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.environment == Environment::Baseline
    }

    /// Directory-safe name, e.g. `baseline`, `homogeneous-30db`, `heterogeneous-20db-corr`.
    pub fn name(&self) -> String {
        let mut name = match self.environment {
            Environment::Baseline => "baseline".to_string(),
            env => format!("{}-{}db", env.name(), format_penalty(self.snr_penalty_db)),
        };
        if self.correction {
            name.push_str("-corr");
        }
        name
    }

    pub fn parse_name(name: &str) -> Result<Self, String> {
        let (body, correction) = match name.strip_suffix("-corr") {
            Some(body) => (body, true),
            None => (name, false),
        };
        if body == "baseline" {
            return Ok(Condition { correction, ..Condition::baseline() });
        }
        let (env, penalty) = body
            .rsplit_once('-')
            .ok_or_else(|| format!("malformed condition name `{name}`"))?;
        let environment: Environment = env.parse()?;
        if environment == Environment::Baseline {
            return Err(format!("malformed condition name `{name}`"));
        }
        let snr_penalty_db = penalty
            .strip_suffix("db")
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| format!("malformed SNR penalty in `{name}`"))?;
        Ok(Condition { environment, snr_penalty_db, correction })
    }

    /// The 15 conditions of the case study: baseline, homogeneous at
    /// {0, 20, 25, 30} dB and heterogeneous at {20, 25, 30} dB, each of the
    /// latter with and without correction.
    pub fn case_study_matrix() -> Vec<Condition> {
        let mut out = vec![Condition::baseline()];
        for correction in [false, true] {
            for p in [0.0, 20.0, 25.0, 30.0] {
                out.push(Condition::homogeneous(p, correction));
            }
            for p in [20.0, 25.0, 30.0] {
                out.push(Condition::heterogeneous(p, correction));
            }
        }
        out
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn format_penalty(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub layout: IntersectionLayout,
    pub demand: DemandSpec,
    pub control: ControlParams,
    pub channel: ChannelParams,
    pub traffic: TrafficParams,
    pub estimator: EstimatorParams,
    pub run: RunWindow,
    pub conditions: Vec<Condition>,
}

/// One rule broken by a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

const SG_NAMES: [(&str, Approach, Movement); 8] = [
    ("north_tr", Approach::North, Movement::Tr),
    ("north_l", Approach::North, Movement::L),
    ("south_tr", Approach::South, Movement::Tr),
    ("south_l", Approach::South, Movement::L),
    ("east_tr", Approach::East, Movement::Tr),
    ("east_l", Approach::East, Movement::L),
    ("west_tr", Approach::West, Movement::Tr),
    ("west_l", Approach::West, Movement::L),
];

const FLOWS: [f64; 8] = [213.0, 137.0, 640.0, 160.0, 648.0, 252.0, 748.0, 102.0];

const STAGES: [(&str, [&str; 2]); 8] = [
    ("ns_through", ["north_tr", "south_tr"]),
    ("ns_left", ["north_l", "south_l"]),
    ("ew_through", ["east_tr", "west_tr"]),
    ("ew_left", ["east_l", "west_l"]),
    ("north_all", ["north_tr", "north_l"]),
    ("south_all", ["south_tr", "south_l"]),
    ("east_all", ["east_tr", "east_l"]),
    ("west_all", ["west_tr", "west_l"]),
];

fn axis(a: Approach) -> u8 {
    match a {
        Approach::North | Approach::South => 0,
        Approach::East | Approach::West => 1,
    }
}

/// Standard conflict table for a four-leg intersection with protected lefts:
/// every cross-axis pair conflicts, and a through movement conflicts with the
/// opposing left.
fn default_conflicts() -> Vec<[String; 2]> {
    let mut out = Vec::new();
    for (i, &(ni, ai, mi)) in SG_NAMES.iter().enumerate() {
        for &(nj, aj, mj) in &SG_NAMES[i + 1..] {
            let conflict = if axis(ai) != axis(aj) {
                true
            } else {
                ai != aj && mi != mj
            };
            if conflict {
                out.push([ni.to_string(), nj.to_string()]);
            }
        }
    }
    out
}

impl Default for IntersectionLayout {
    fn default() -> Self {
        IntersectionLayout {
            signal_groups: SG_NAMES
                .iter()
                .map(|&(name, approach, movement)| SignalGroupSpec {
                    name: name.to_string(),
                    approach,
                    movement,
                    lanes: 2,
                    link_length_m: 400.0,
                })
                .collect(),
            stages: STAGES
                .iter()
                .map(|(name, sgs)| StageSpec {
                    name: name.to_string(),
                    signal_groups: sgs.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            conflicts: default_conflicts(),
        }
    }
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            flow_veh_h: SG_NAMES.iter().zip(FLOWS).map(|(&(n, _, _), f)| (n.to_string(), f)).collect(),
        }
    }
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            min_green_s: 6.0,
            green_extension_s: 56.0,
            max_gap_s: 3.0,
            interstage_s: 10.0,
            detection_range_m: 300.0,
        }
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_frequency_hz: 5.9e9,
            tx_power_dbm: 20.0,
            background_noise_dbm: -86.0,
            asphalt_permittivity: 4.75,
            rsu_antenna_height_m: 5.897,
            vehicle_antenna_height_m: 1.895,
            snr_threshold_db: DEFAULT_SNR_THRESHOLD_DB,
            approach_penalty_db: PerApproach::default(),
            cam_period_s: 1.0,
            message_length_bytes: 300,
            data_rate_mbps: 6.0,
            bandwidth_mhz: 10.0,
            transmission_range_m: 400.0,
            fading: Fading::Lognormal,
            fading_sigma_db: DEFAULT_FADING_SIGMA_DB,
        }
    }
}

/// Receiver decision threshold used unless a scenario overrides it. Found by
/// `crossflux calibrate` for a 20.3% whole-intersection loss ratio at 0 dB
/// penalty.
pub const DEFAULT_SNR_THRESHOLD_DB: f64 = 7.5;

/// Spread of the per-message log-normal variation, fitted together with the
/// threshold to the loss ratios observed across penalty levels.
pub const DEFAULT_FADING_SIGMA_DB: f64 = 20.0;

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            free_speed_mps: 13.89,
            max_accel_mps2: 2.5,
            max_decel_mps2: 4.5,
            min_spacing_m: 7.0,
            saturation_headway_s: 2.0,
            reaction_time_s: 0.5,
            substep_s: 0.1,
        }
    }
}

impl Default for RunWindow {
    fn default() -> Self {
        RunWindow { warmup_s: 600, evaluation_s: 1800 }
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::default_case_study()
    }
}

impl Scenario {
    /// The four-leg, eight-signal-group, eight-stage case study.
    pub fn default_case_study() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            layout: IntersectionLayout::default(),
            demand: DemandSpec::default(),
            control: ControlParams::default(),
            channel: ChannelParams::default(),
            traffic: TrafficParams::default(),
            estimator: EstimatorParams::default(),
            run: RunWindow::default(),
            conditions: Condition::case_study_matrix(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        if let Some(version) = overrides.get("schema_version") {
            match version.as_integer() {
                Some(v) if v == SCHEMA_VERSION as i64 => {}
                _ => {
                    return Err(ScenarioError::Schema(format!(
                        "schema_version must be {SCHEMA_VERSION}, found {version}"
                    )))
                }
            }
        }
        let mut merged = toml::Table::try_from(Scenario::default_case_study())
            .map_err(|e| ScenarioError::Schema(e.to_string()))?;
        merge_tables(&mut merged, overrides);
        let scenario: Scenario = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Schema(e.to_string()))?;
        let violations = scenario.validate();
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Every rule the scenario breaks. Empty means valid.
    // Negated comparisons so that NaN fails every rule.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: String, rule: &str| out.push(Violation { field, rule: rule.to_string() });

        if self.schema_version != SCHEMA_VERSION {
            bad("schema_version".into(), "must equal the supported schema version");
        }

        let layout = &self.layout;
        let mut sg_names = BTreeSet::new();
        if layout.signal_groups.is_empty() {
            bad("layout.signal_groups".into(), "at least one signal group is required");
        }
        for (i, sg) in layout.signal_groups.iter().enumerate() {
            if !sg_names.insert(sg.name.as_str()) {
                bad(format!("layout.signal_groups[{i}].name"), "signal group names must be unique");
            }
            if sg.lanes == 0 {
                bad(format!("layout.signal_groups[{i}].lanes"), "must be at least 1");
            }
            if !(sg.link_length_m > 0.0) {
                bad(format!("layout.signal_groups[{i}].link_length_m"), "must be > 0");
            }
        }
        let mut stage_names = BTreeSet::new();
        if layout.stages.is_empty() {
            bad("layout.stages".into(), "at least one stage is required");
        }
        for (i, st) in layout.stages.iter().enumerate() {
            if !stage_names.insert(st.name.as_str()) {
                bad(format!("layout.stages[{i}].name"), "stage names must be unique");
            }
            if st.signal_groups.is_empty() {
                bad(format!("layout.stages[{i}].signal_groups"), "a stage must contain at least one signal group");
            }
            for g in &st.signal_groups {
                if !sg_names.contains(g.as_str()) {
                    bad(format!("layout.stages[{i}].signal_groups"), "references an unknown signal group");
                }
            }
            for [a, b] in &layout.conflicts {
                if st.signal_groups.contains(a) && st.signal_groups.contains(b) {
                    bad(format!("layout.stages[{i}]"), "stage contains a conflicting pair of signal groups");
                }
            }
        }
        for sg in &layout.signal_groups {
            if !layout.stages.iter().any(|s| s.signal_groups.contains(&sg.name)) {
                bad(format!("layout.signal_groups.{}", sg.name), "every signal group must belong to a stage");
            }
        }
        for (i, [a, b]) in layout.conflicts.iter().enumerate() {
            if !sg_names.contains(a.as_str()) || !sg_names.contains(b.as_str()) {
                bad(format!("layout.conflicts[{i}]"), "references an unknown signal group");
            }
        }

        for (name, flow) in &self.demand.flow_veh_h {
            if !sg_names.contains(name.as_str()) {
                bad(format!("demand.flow_veh_h.{name}"), "unknown signal group");
            }
            if !(*flow >= 0.0) || !flow.is_finite() {
                bad(format!("demand.flow_veh_h.{name}"), "flow must be >= 0");
            }
        }

        let c = &self.control;
        if !(c.min_green_s > 0.0) {
            bad("control.min_green_s".into(), "must be > 0");
        }
        if !(c.green_extension_s >= 0.0) {
            bad("control.green_extension_s".into(), "must be >= 0");
        }
        if !(c.max_gap_s > 0.0) {
            bad("control.max_gap_s".into(), "must be > 0");
        }
        if !(c.interstage_s >= 0.0) {
            bad("control.interstage_s".into(), "must be >= 0");
        }
        if !(c.detection_range_m > 0.0) {
            bad("control.detection_range_m".into(), "must be > 0");
        }

        let ch = &self.channel;
        if !(ch.carrier_frequency_hz > 0.0) {
            bad("channel.carrier_frequency_hz".into(), "must be > 0");
        }
        if !(ch.rsu_antenna_height_m > 0.0) {
            bad("channel.rsu_antenna_height_m".into(), "must be > 0");
        }
        if !(ch.vehicle_antenna_height_m > 0.0) {
            bad("channel.vehicle_antenna_height_m".into(), "must be > 0");
        }
        if !(ch.asphalt_permittivity > 1.0) {
            bad("channel.asphalt_permittivity".into(), "must be > 1");
        }
        if !(ch.cam_period_s > 0.0) {
            bad("channel.cam_period_s".into(), "must be > 0");
        }
        if !(ch.fading_sigma_db >= 0.0) {
            bad("channel.fading_sigma_db".into(), "must be >= 0");
        }
        if !(ch.transmission_range_m > 0.0) {
            bad("channel.transmission_range_m".into(), "must be > 0");
        }
        for a in Approach::ALL {
            if !(ch.approach_penalty_db.get(a) >= 0.0) {
                bad(format!("channel.approach_penalty_db.{a}"), "penalty must be >= 0");
            }
        }

        let t = &self.traffic;
        for (field, value) in [
            ("traffic.free_speed_mps", t.free_speed_mps),
            ("traffic.max_accel_mps2", t.max_accel_mps2),
            ("traffic.max_decel_mps2", t.max_decel_mps2),
            ("traffic.min_spacing_m", t.min_spacing_m),
            ("traffic.saturation_headway_s", t.saturation_headway_s),
        ] {
            if !(value > 0.0) {
                bad(field.into(), "must be > 0");
            }
        }
        if !(t.reaction_time_s >= 0.0) {
            bad("traffic.reaction_time_s".into(), "must be >= 0");
        }
        if !(t.substep_s > 0.0 && t.substep_s <= 1.0) {
            bad("traffic.substep_s".into(), "must be in (0, 1]");
        }

        if self.run.warmup_s == 0 {
            bad("run.warmup_s".into(), "must be > 0");
        }
        if self.run.evaluation_s == 0 {
            bad("run.evaluation_s".into(), "must be > 0");
        }
        for (i, cond) in self.conditions.iter().enumerate() {
            if !(cond.snr_penalty_db >= 0.0) {
                bad(format!("conditions[{i}].snr_penalty_db"), "penalty must be >= 0");
            }
        }
        out
    }

    /// Resolve names into the indexed form the simulation runs on.
    pub fn intersection(&self) -> Intersection {
        Intersection::from_scenario(self)
    }
}

/// Load a scenario file, apply defaults and validate it.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ScenarioError::Io(path.as_ref().display().to_string(), e))?;
    Scenario::from_toml_str(&text)
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Index of a signal group within [`Intersection::signal_groups`].
pub type SgIndex = usize;
/// Index of a stage within [`Intersection::stages`].
pub type StageIndex = usize;
/// Global lane index.
pub type LaneIndex = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalGroup {
    pub name: String,
    pub approach: Approach,
    pub movement: Movement,
    pub lanes: Vec<LaneIndex>,
    pub link_length_m: f64,
    pub flow_veh_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub sg: SgIndex,
    pub approach: Approach,
    pub link_length_m: f64,
    /// Share of the signal group's flow that arrives on this lane.
    pub flow_veh_h: f64,
}

/// Indexed intersection: signal groups, stages, incidence and lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub signal_groups: Vec<SignalGroup>,
    pub stage_names: Vec<String>,
    /// `incidence[g][s]` is true when signal group `g` belongs to stage `s`.
    pub incidence: Vec<Vec<bool>>,
    pub lanes: Vec<Lane>,
}

impl Intersection {
    fn from_scenario(s: &Scenario) -> Self {
        let mut signal_groups = Vec::new();
        let mut lanes = Vec::new();
        for (g, spec) in s.layout.signal_groups.iter().enumerate() {
            let flow = s.demand.flow_veh_h.get(&spec.name).copied().unwrap_or(0.0);
            let n = spec.lanes.max(1);
            let mut lane_ids = Vec::new();
            for _ in 0..n {
                lane_ids.push(lanes.len());
                lanes.push(Lane {
                    sg: g,
                    approach: spec.approach,
                    link_length_m: spec.link_length_m,
                    flow_veh_h: flow / n as f64,
                });
            }
            signal_groups.push(SignalGroup {
                name: spec.name.clone(),
                approach: spec.approach,
                movement: spec.movement,
                lanes: lane_ids,
                link_length_m: spec.link_length_m,
                flow_veh_h: flow,
            });
        }
        let incidence = s
            .layout
            .signal_groups
            .iter()
            .map(|sg| s.layout.stages.iter().map(|st| st.signal_groups.contains(&sg.name)).collect())
            .collect();
        Intersection {
            signal_groups,
            stage_names: s.layout.stages.iter().map(|st| st.name.clone()).collect(),
            incidence,
            lanes,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_names.len()
    }

    pub fn num_signal_groups(&self) -> usize {
        self.signal_groups.len()
    }

    pub fn stage_signal_groups(&self, stage: StageIndex) -> impl Iterator<Item = SgIndex> + '_ {
        (0..self.signal_groups.len()).filter(move |&g| self.incidence[g][stage])
    }

    pub fn in_stage(&self, sg: SgIndex, stage: StageIndex) -> bool {
        self.incidence[sg][stage]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_values() {
        let s = Scenario::default_case_study();
        assert_eq!(s.demand.flow_veh_h["south_tr"], 640.0);
        assert_eq!(s.demand.flow_veh_h["west_l"], 102.0);
        let total: f64 = s.demand.flow_veh_h.values().sum();
        assert_eq!(total, 350.0 + 800.0 + 900.0 + 850.0);
        assert_eq!(s.control.min_green_s, 6.0);
        assert_eq!(s.control.green_extension_s, 56.0);
        assert_eq!(s.control.max_gap_s, 3.0);
        assert_eq!(s.control.interstage_s, 10.0);
        assert_eq!(s.control.detection_range_m, 300.0);
        assert_eq!(s.channel.tx_power_dbm, 20.0);
        assert_eq!(s.channel.background_noise_dbm, -86.0);
        assert_eq!(s.channel.asphalt_permittivity, 4.75);
        assert_eq!(s.channel.rsu_antenna_height_m, 5.897);
        assert_eq!(s.channel.vehicle_antenna_height_m, 1.895);
        assert_eq!(s.run.warmup_s, 600);
        assert_eq!(s.run.evaluation_s, 1800);
        assert_eq!(s.layout.signal_groups.len(), 8);
        assert_eq!(s.layout.stages.len(), 8);
        assert_eq!(s.conditions.len(), 15);
    }

    #[test]
    fn default_is_valid_and_idempotent() {
        assert_eq!(Scenario::default_case_study().validate(), vec![]);
        assert_eq!(Scenario::default_case_study(), Scenario::default_case_study());
    }

    #[test]
    fn empty_stage_is_one_violation() {
        let mut s = Scenario::default_case_study();
        s.layout.stages.push(StageSpec { name: "empty".into(), signal_groups: vec![] });
        let v = s.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("stages[8]"));
    }

    #[test]
    fn zero_max_gap_is_one_violation() {
        let mut s = Scenario::default_case_study();
        s.control.max_gap_s = 0.0;
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "control.max_gap_s");
    }

    #[test]
    fn conflicting_stage_rejected() {
        let mut s = Scenario::default_case_study();
        s.layout.stages[0].signal_groups.push("east_tr".into());
        assert!(s.validate().iter().any(|v| v.rule.contains("conflicting")));
    }

    #[test]
    fn orphan_signal_group_rejected() {
        let mut s = Scenario::default_case_study();
        for st in &mut s.layout.stages {
            st.signal_groups.retain(|g| g != "west_l");
        }
        // "ew_left" still holds east_l; "west_all" keeps west_tr.
        let v = s.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.ends_with("west_l"));
    }

    #[test]
    fn default_stages_are_conflict_free_and_cover_all_groups() {
        let x = Scenario::default_case_study().intersection();
        assert_eq!(x.num_stages(), 8);
        for g in 0..8 {
            assert!((0..8).any(|s| x.in_stage(g, s)));
        }
        // Opposing through movements share a stage, crossing ones never do.
        assert!(x.in_stage(0, 0) && x.in_stage(2, 0));
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Scenario::from_toml_str("").unwrap(), Scenario::default_case_study());
    }

    #[test]
    fn override_single_key() {
        let s = Scenario::from_toml_str("[channel.approach_penalty_db]\nwest = 5.0\n").unwrap();
        let mut expected = Scenario::default_case_study();
        expected.channel.approach_penalty_db.west = 5.0;
        assert_eq!(s, expected);
    }

    #[test]
    fn negative_flow_is_validation_error() {
        let err = Scenario::from_toml_str("[demand.flow_veh_h]\nnorth_tr = -5.0\n").unwrap_err();
        match err {
            ScenarioError::Invalid(v) => assert_eq!(v[0].field, "demand.flow_veh_h.north_tr"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_wrong_unit_are_schema_errors() {
        assert!(matches!(
            Scenario::from_toml_str("[control]\nmin_green_min = 1.0\n"),
            Err(ScenarioError::Schema(_))
        ));
        assert!(matches!(Scenario::from_toml_str("bogus = 1\n"), Err(ScenarioError::Schema(_))));
        assert!(matches!(Scenario::from_toml_str("schema_version = 9\n"), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(Scenario::from_toml_str("[control\n"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::case_study_matrix() {
            assert_eq!(Condition::parse_name(&c.name()).unwrap(), c);
        }
        assert_eq!(Condition::homogeneous(30.0, true).name(), "homogeneous-30db-corr");
        assert!(Condition::parse_name("sideways-3db").is_err());
    }

    #[test]
    fn heterogeneous_penalises_west_only() {
        let c = Condition::heterogeneous(25.0, false);
        assert_eq!(c.penalty_for(Approach::West), 25.0);
        assert_eq!(c.penalty_for(Approach::North), 0.0);
        assert_eq!(Condition::baseline().penalty_for(Approach::West), 0.0);
    }
}
