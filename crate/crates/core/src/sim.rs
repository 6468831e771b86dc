//! Discrete-time simulator of a DeltaIoT-style mote network.
//!
//! The simulator does not model radio physics. Its capability model is read
//! off the ODD boxes: at interference `c` a configuration sustains at most the
//! highest utility bound among its boxes spanning `c`. Delivered throughput is
//! the demand capped at that bound, minus a small seeded noise term.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::odd::{ConfigurationOdd, Interval, OddModel, Region, WorkingPoint};

/// Upper bound of the subtractive throughput noise, packets/sec.
pub const MAX_NOISE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown configuration `{0}`")]
    UnknownConfig(String),
    #[error("element `{element}` is incompatible with platform tags {platform:?}")]
    Incompatible {
        element: String,
        platform: Vec<String>,
    },
    #[error("configuration `{0}` is already installed")]
    AlreadyInstalled(String),
    #[error("element `{element}` could not be installed: {reason}")]
    InstallFailed { element: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSetting {
    Minimum,
    Medium,
    Maximum,
}

impl fmt::Display for PowerSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerSetting::Minimum => "minimum",
            PowerSetting::Medium => "medium",
            PowerSetting::Maximum => "maximum",
        })
    }
}

/// Per-mote energy drawn each tick, in mJ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    pub minimum: f64,
    pub medium: f64,
    pub maximum: f64,
}

impl EnergyTable {
    pub fn per_tick(&self, power: PowerSetting) -> f64 {
        match power {
            PowerSetting::Minimum => self.minimum,
            PowerSetting::Medium => self.medium,
            PowerSetting::Maximum => self.maximum,
        }
    }

    fn validate(&self, problems: &mut Vec<String>) {
        if !(self.minimum > 0.0 && self.minimum < self.medium && self.medium < self.maximum) {
            problems.push("energy_mj_per_tick: require 0 < minimum < medium < maximum".into());
        }
    }
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            minimum: 1.0,
            medium: 2.0,
            maximum: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mote {
    pub id: String,
    pub battery_mj: f64,
    pub power: PowerSetting,
    pub parent: String,
    pub installed_elements: Vec<String>,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoteSpec {
    pub id: String,
    pub parent: String,
}

/// Everything needed to bring up a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub gateway: String,
    pub motes: Vec<MoteSpec>,
    pub battery_capacity_mj: f64,
    pub energy: EnergyTable,
    pub loss_goal: f64,
    pub platform_tags: BTreeSet<String>,
    /// Power setting each ODD configuration runs at.
    pub config_power: BTreeMap<String, PowerSetting>,
    pub initial_config: String,
}

/// A change of environment taking effect at `tick` and holding until the
/// next entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub tick: u64,
    pub interference: f64,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentTrace {
    schedule: Vec<TraceEntry>,
}

impl EnvironmentTrace {
    pub fn new(schedule: Vec<TraceEntry>) -> Result<Self, SimError> {
        let mut problems = Vec::new();
        if schedule.is_empty() {
            problems.push("trace: at least one entry required".to_string());
        }
        for (i, e) in schedule.iter().enumerate() {
            if i > 0 && e.tick <= schedule[i - 1].tick {
                problems.push(format!("trace[{i}]: ticks must be strictly increasing"));
            }
            if let Err(err) = WorkingPoint::new(e.demand, e.interference) {
                problems.push(format!("trace[{i}]: {err}"));
            }
        }
        if problems.is_empty() {
            Ok(Self { schedule })
        } else {
            Err(SimError::Validation(problems))
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.schedule
    }

    /// Environment in force at `tick`.
    pub fn at(&self, tick: u64) -> WorkingPoint {
        let entry = self
            .schedule
            .iter()
            .rev()
            .find(|e| e.tick <= tick)
            .unwrap_or(&self.schedule[0]);
        WorkingPoint::new(entry.demand, entry.interference).expect("validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    pub config: String,
    pub demand: f64,
    pub interference: f64,
    pub achieved_throughput: f64,
    pub packet_loss_fraction: f64,
    pub energy_used_mj: f64,
    pub lifetime_estimate_years: Interval,
}

impl Telemetry {
    pub fn working_point(&self) -> WorkingPoint {
        WorkingPoint::new(self.demand, self.interference).expect("telemetry mirrors a valid env")
    }
}

/// Loss fraction for a delivered/demanded pair; zero when nothing is demanded.
pub fn loss_fraction(achieved: f64, demand: f64) -> f64 {
    if demand > 0.0 {
        (1.0 - achieved / demand).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Aggregate loss over a window of telemetry.
pub fn window_loss(window: &[Telemetry]) -> f64 {
    let demand: f64 = window.iter().map(|t| t.demand).sum();
    let achieved: f64 = window.iter().map(|t| t.achieved_throughput).sum();
    loss_fraction(achieved, demand)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityEntry {
    pub regions: Vec<Region>,
    pub power: PowerSetting,
    pub lifetime_years: Interval,
}

/// Per-configuration throughput ceilings and energy draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityModel {
    entries: BTreeMap<String, CapabilityEntry>,
    energy: EnergyTable,
}

impl CapabilityModel {
    pub fn contains(&self, config_id: &str) -> bool {
        self.entries.contains_key(config_id)
    }

    pub fn config_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, config_id: &str) -> Result<&CapabilityEntry, SimError> {
        self.entries
            .get(config_id)
            .ok_or_else(|| SimError::UnknownConfig(config_id.to_string()))
    }

    /// Max sustainable throughput of a configuration at interference `c`;
    /// zero where the configuration claims no region.
    pub fn t_max(&self, config_id: &str, c: f64) -> Result<f64, SimError> {
        Ok(self
            .entry(config_id)?
            .regions
            .iter()
            .filter(|r| r.context.contains(c))
            .map(|r| r.utility.hi())
            .fold(0.0, f64::max))
    }

    pub fn energy_per_tick(&self, config_id: &str) -> Result<f64, SimError> {
        Ok(self.energy.per_tick(self.entry(config_id)?.power))
    }
}

/// An element ready to be installed on the motes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstallableElement {
    pub element_id: String,
    pub version: String,
    pub config_id: String,
    pub regions: Vec<Region>,
    pub power: PowerSetting,
    pub lifetime_years: Interval,
    pub platform_tags: BTreeSet<String>,
}

impl InstallableElement {
    pub fn configuration(&self) -> Result<ConfigurationOdd, crate::odd::OddError> {
        ConfigurationOdd::new(
            self.config_id.clone(),
            self.regions.clone(),
            self.lifetime_years,
        )
    }
}

/// Anything a managing system can reconfigure.
pub trait ManagedSystem {
    fn set_configuration(&mut self, config_id: &str) -> Result<(), SimError>;
    fn current_config(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    motes: Vec<Mote>,
    gateway_id: String,
    parents: BTreeMap<String, String>,
    tick: u64,
    rng_seed: u64,
    rng: ChaCha8Rng,
    current_config: String,
    capability: CapabilityModel,
    platform_tags: BTreeSet<String>,
    battery_capacity_mj: f64,
    loss_goal: f64,
}

impl NetworkState {
    /// Validates the configuration and brings the network up at tick 0 with
    /// full batteries and every mote at the initial configuration's power.
    pub fn init(config: &SimConfig, odd: &OddModel) -> Result<Self, SimError> {
        let mut problems = Vec::new();
        if config.motes.is_empty() {
            problems.push("motes: at least one mote required".to_string());
        }
        if config.gateway.is_empty() {
            problems.push("gateway: id must be non-empty".to_string());
        }
        let mut seen = HashSet::new();
        for m in &config.motes {
            if !seen.insert(m.id.as_str()) {
                problems.push(format!("motes: duplicate id `{}`", m.id));
            }
            if m.id == config.gateway {
                problems.push(format!("motes: `{}` collides with the gateway id", m.id));
            }
        }
        let parents: BTreeMap<String, String> = config
            .motes
            .iter()
            .map(|m| (m.id.clone(), m.parent.clone()))
            .collect();
        for m in &config.motes {
            if m.parent != config.gateway && !parents.contains_key(&m.parent) {
                problems.push(format!(
                    "motes: `{}` has unknown parent `{}`",
                    m.id, m.parent
                ));
                continue;
            }
            // Walk toward the gateway; a walk longer than the mote count is a cycle.
            let mut cursor = m.parent.as_str();
            let mut steps = 0;
            while cursor != config.gateway {
                steps += 1;
                match parents.get(cursor) {
                    Some(p) if steps <= parents.len() => cursor = p,
                    Some(_) => {
                        problems.push(format!("motes: `{}` is part of a cycle", m.id));
                        break;
                    }
                    None => break,
                }
            }
        }
        if !(config.battery_capacity_mj.is_finite() && config.battery_capacity_mj > 0.0) {
            problems.push("battery_capacity_mj: must be positive".to_string());
        }
        config.energy.validate(&mut problems);
        if !(config.loss_goal > 0.0 && config.loss_goal < 1.0) {
            problems.push("loss_goal: must lie in (0, 1)".to_string());
        }
        if config.platform_tags.is_empty() {
            problems.push("platform_tags: at least one tag required".to_string());
        }
        let mut entries = BTreeMap::new();
        for cfg in odd.configurations() {
            match config.config_power.get(cfg.id()) {
                Some(&power) => {
                    entries.insert(
                        cfg.id().to_string(),
                        CapabilityEntry {
                            regions: cfg.regions().to_vec(),
                            power,
                            lifetime_years: cfg.lifetime_years(),
                        },
                    );
                }
                None => problems.push(format!(
                    "configurations: no power setting for ODD configuration `{}`",
                    cfg.id()
                )),
            }
        }
        if !entries.contains_key(&config.initial_config) {
            problems.push(format!(
                "initial_config: `{}` is not an ODD configuration",
                config.initial_config
            ));
        }
        if !problems.is_empty() {
            return Err(SimError::Validation(problems));
        }

        let power = entries[&config.initial_config].power;
        let motes = config
            .motes
            .iter()
            .map(|m| Mote {
                id: m.id.clone(),
                battery_mj: config.battery_capacity_mj,
                power,
                parent: m.parent.clone(),
                installed_elements: Vec::new(),
                alive: true,
            })
            .collect();
        Ok(Self {
            motes,
            gateway_id: config.gateway.clone(),
            parents,
            tick: 0,
            rng_seed: config.seed,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            current_config: config.initial_config.clone(),
            capability: CapabilityModel {
                entries,
                energy: config.energy,
            },
            platform_tags: config.platform_tags.clone(),
            battery_capacity_mj: config.battery_capacity_mj,
            loss_goal: config.loss_goal,
        })
    }

    pub fn motes(&self) -> &[Mote] {
        &self.motes
    }

    pub fn gateway_id(&self) -> &str {
        &self.gateway_id
    }

    pub fn parent_of(&self, mote: &str) -> Option<&str> {
        self.parents.get(mote).map(String::as_str)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn capability(&self) -> &CapabilityModel {
        &self.capability
    }

    pub fn platform_tags(&self) -> &BTreeSet<String> {
        &self.platform_tags
    }

    pub fn loss_goal(&self) -> f64 {
        self.loss_goal
    }

    /// Restarts the noise stream, used to give sandbox clones independent seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Mean remaining battery fraction over all motes (dead motes count as 0).
    pub fn battery_fraction(&self) -> f64 {
        let total: f64 = self.motes.iter().map(|m| m.battery_mj).sum();
        total / (self.battery_capacity_mj * self.motes.len() as f64)
    }

    pub fn alive_count(&self) -> usize {
        self.motes.iter().filter(|m| m.alive).count()
    }

    /// Advances one tick under `env` (utility = demand, context =
    /// interference) running `config_id`.
    pub fn step(&mut self, env: WorkingPoint, config_id: &str) -> Result<Telemetry, SimError> {
        if config_id != self.current_config {
            self.set_configuration(config_id)?;
        }
        let t_max = self.capability.t_max(config_id, env.context())?;
        let per_mote = self.capability.energy_per_tick(config_id)?;

        let mut energy_used = 0.0;
        for mote in self.motes.iter_mut().filter(|m| m.alive) {
            let draw = per_mote.min(mote.battery_mj);
            mote.battery_mj -= draw;
            energy_used += draw;
            if mote.battery_mj <= 0.0 {
                mote.battery_mj = 0.0;
                mote.alive = false;
            }
        }

        let demand = env.utility();
        let alive_share = self.alive_count() as f64 / self.motes.len() as f64;
        let served = demand.min(t_max) * alive_share;
        // The noise never exceeds the loss goal's share of what is served, so
        // in-ODD points meet the goal even at low demand.
        let amplitude = MAX_NOISE.min(self.loss_goal * served);
        let draw: f64 = self.rng.random();
        let achieved = (served - draw * amplitude).max(0.0);

        let telemetry = Telemetry {
            tick: self.tick,
            config: config_id.to_string(),
            demand,
            interference: env.context(),
            achieved_throughput: achieved,
            packet_loss_fraction: loss_fraction(achieved, demand),
            energy_used_mj: energy_used,
            lifetime_estimate_years: self.lifetime_estimate(config_id)?,
        };
        self.tick += 1;
        Ok(telemetry)
    }

    /// The configuration's lifetime interval scaled by the remaining battery.
    pub fn lifetime_estimate(&self, config_id: &str) -> Result<Interval, SimError> {
        Ok(self
            .capability
            .entry(config_id)?
            .lifetime_years
            .scale(self.battery_fraction()))
    }

    /// Extends the capability model with an element's configuration. Leaves
    /// the state untouched on error.
    pub fn install_element(&mut self, element: &InstallableElement) -> Result<(), SimError> {
        if element.platform_tags.is_disjoint(&self.platform_tags) {
            return Err(SimError::Incompatible {
                element: element.element_id.clone(),
                platform: self.platform_tags.iter().cloned().collect(),
            });
        }
        if self.capability.contains(&element.config_id) {
            return Err(SimError::AlreadyInstalled(element.config_id.clone()));
        }
        if element.regions.is_empty() {
            return Err(SimError::InstallFailed {
                element: element.element_id.clone(),
                reason: "element claims no operating region".into(),
            });
        }
        self.capability.entries.insert(
            element.config_id.clone(),
            CapabilityEntry {
                regions: element.regions.clone(),
                power: element.power,
                lifetime_years: element.lifetime_years,
            },
        );
        for mote in &mut self.motes {
            mote.installed_elements.push(element.element_id.clone());
        }
        Ok(())
    }
}

impl ManagedSystem for NetworkState {
    fn set_configuration(&mut self, config_id: &str) -> Result<(), SimError> {
        let power = self.capability.entry(config_id)?.power;
        self.current_config = config_id.to_string();
        for mote in &mut self.motes {
            mote.power = power;
        }
        Ok(())
    }

    fn current_config(&self) -> &str {
        &self.current_config
    }
}

/// Telemetry rows as CSV: `tick,demand,interference,achieved,loss,config`.
pub fn telemetry_csv(rows: &[Telemetry]) -> String {
    let mut out = String::from("tick,demand,interference,achieved,loss,config\n");
    for t in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.tick,
            t.demand,
            t.interference,
            t.achieved_throughput,
            t.packet_loss_fraction,
            t.config
        ));
    }
    out
}

/// Power settings of the canonical three-configuration model.
pub fn canonical_config_power() -> BTreeMap<String, PowerSetting> {
    [
        ("power-min", PowerSetting::Minimum),
        ("power-medium", PowerSetting::Medium),
        ("power-max", PowerSetting::Maximum),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn canonical_sim_config(seed: u64) -> SimConfig {
        let mut motes: Vec<MoteSpec> = (1..=15)
            .map(|i| MoteSpec {
                id: format!("mote-{i:02}"),
                parent: "gateway".into(),
            })
            .collect();
        // a few multi-hop links
        for (child, parent) in [(4, 1), (5, 1), (9, 4), (12, 9)] {
            motes[child - 1].parent = format!("mote-{parent:02}");
        }
        SimConfig {
            seed,
            gateway: "gateway".into(),
            motes,
            battery_capacity_mj: 100_000.0,
            energy: EnergyTable::default(),
            loss_goal: 0.05,
            platform_tags: ["deltaiot-mote".to_string()].into(),
            config_power: canonical_config_power(),
            initial_config: "power-min".into(),
        }
    }

    fn wp(u: f64, c: f64) -> WorkingPoint {
        WorkingPoint::new(u, c).unwrap()
    }

    fn init(seed: u64) -> NetworkState {
        NetworkState::init(&canonical_sim_config(seed), &OddModel::canonical()).unwrap()
    }

    fn radio() -> InstallableElement {
        InstallableElement {
            element_id: "radio-module".into(),
            version: "1.0.0".into(),
            config_id: "radio-module".into(),
            regions: vec![Region::new(-30.0, 0.0, 0.0, 50.0).unwrap()],
            power: PowerSetting::Maximum,
            lifetime_years: Interval::new(1.0, 3.0).unwrap(),
            platform_tags: ["deltaiot-mote".to_string()].into(),
        }
    }

    #[test]
    fn init_canonical() {
        let s = init(1);
        assert_eq!(s.motes().len(), 15);
        assert_eq!(s.tick(), 0);
        assert!(s.motes().iter().all(|m| m.power == PowerSetting::Minimum));
        assert!(s.motes().iter().all(|m| m.battery_mj == 100_000.0));
        assert_eq!(s.parent_of("mote-12"), Some("mote-09"));
    }

    #[test]
    fn init_rejects_bad_topologies() {
        let odd = OddModel::canonical();
        let mut cfg = canonical_sim_config(1);
        cfg.motes.clear();
        assert!(matches!(
            NetworkState::init(&cfg, &odd),
            Err(SimError::Validation(_))
        ));

        let mut cfg = canonical_sim_config(1);
        cfg.motes[3].id = "mote-01".into();
        let Err(SimError::Validation(p)) = NetworkState::init(&cfg, &odd) else {
            panic!("duplicate accepted");
        };
        assert!(p.iter().any(|m| m.contains("duplicate id `mote-01`")));

        let mut cfg = canonical_sim_config(1);
        cfg.motes[0].parent = "mote-02".into();
        cfg.motes[1].parent = "mote-01".into();
        let Err(SimError::Validation(p)) = NetworkState::init(&cfg, &odd) else {
            panic!("cycle accepted");
        };
        assert!(p.iter().any(|m| m.contains("cycle")));

        let mut cfg = canonical_sim_config(1);
        cfg.energy.medium = 0.5;
        cfg.config_power.remove("power-max");
        let Err(SimError::Validation(p)) = NetworkState::init(&cfg, &odd) else {
            panic!("bad energy accepted");
        };
        assert_eq!(p.len(), 2, "{p:?}");
    }

    #[test]
    fn loss_inside_min_region() {
        let mut s = init(3);
        for _ in 0..100 {
            let t = s.step(wp(5.0, -5.0), "power-min").unwrap();
            assert!(t.packet_loss_fraction <= 0.05);
        }
    }

    #[test]
    fn loss_when_demand_exceeds_ceiling() {
        let mut s = init(3);
        let t = s.step(wp(20.0, -5.0), "power-min").unwrap();
        assert!(t.packet_loss_fraction >= 0.45);
    }

    #[test]
    fn zero_demand_has_no_loss() {
        let mut s = init(3);
        let t = s.step(wp(0.0, -5.0), "power-max").unwrap();
        assert_eq!(t.packet_loss_fraction, 0.0);
        assert_eq!(t.achieved_throughput, 0.0);
    }

    #[test]
    fn unknown_config_is_an_error() {
        let mut s = init(3);
        assert_eq!(
            s.step(wp(1.0, -1.0), "nope"),
            Err(SimError::UnknownConfig("nope".into()))
        );
        assert!(s.set_configuration("nope").is_err());
        assert!(s.lifetime_estimate("nope").is_err());
    }

    #[test]
    fn set_configuration_switches_every_mote() {
        let mut s = init(3);
        s.set_configuration("power-medium").unwrap();
        assert!(s.motes().iter().all(|m| m.power == PowerSetting::Medium));
        let before = s.clone();
        s.set_configuration("power-medium").unwrap();
        assert_eq!(s.motes(), before.motes());
        assert_eq!(s.current_config(), "power-medium");
    }

    #[test]
    fn install_radio_element() {
        let mut s = init(3);
        s.install_element(&radio()).unwrap();
        assert_eq!(s.capability().t_max("radio-module", -15.0).unwrap(), 50.0);
        s.set_configuration("radio-module").unwrap();
        let tel: Vec<_> = (0..100)
            .map(|_| s.step(wp(35.0, -15.0), "radio-module").unwrap())
            .collect();
        assert!(window_loss(&tel) <= 0.05);
        assert!(s
            .motes()
            .iter()
            .all(|m| m.installed_elements == ["radio-module"]));
    }

    #[test]
    fn incompatible_element_leaves_state_alone() {
        let mut s = init(3);
        let mut e = radio();
        e.platform_tags = ["other-board".to_string()].into();
        let before = s.clone();
        assert!(matches!(
            s.install_element(&e),
            Err(SimError::Incompatible { .. })
        ));
        assert_eq!(s.capability(), before.capability());
        assert_eq!(s.motes(), before.motes());
    }

    #[test]
    fn lifetime_scales_with_battery() {
        let mut cfg = canonical_sim_config(9);
        cfg.battery_capacity_mj = 4.0;
        let mut s = NetworkState::init(&cfg, &OddModel::canonical()).unwrap();
        assert_eq!(
            s.lifetime_estimate("power-min").unwrap(),
            Interval::new(5.0, 8.0).unwrap()
        );
        assert_eq!(
            s.lifetime_estimate("power-max").unwrap(),
            Interval::new(1.0, 3.0).unwrap()
        );
        s.step(wp(1.0, -1.0), "power-medium").unwrap();
        assert_eq!(s.battery_fraction(), 0.5);
        assert_eq!(
            s.lifetime_estimate("power-medium").unwrap(),
            Interval::new(1.5, 2.5).unwrap()
        );
    }

    #[test]
    fn depleted_motes_die_and_stop_delivering() {
        let mut cfg = canonical_sim_config(9);
        cfg.battery_capacity_mj = 6.0;
        let mut s = NetworkState::init(&cfg, &OddModel::canonical()).unwrap();
        let t1 = s.step(wp(5.0, -5.0), "power-max").unwrap();
        assert_eq!(t1.energy_used_mj, 60.0);
        let t2 = s.step(wp(5.0, -5.0), "power-max").unwrap();
        // only 2 mJ left per mote
        assert_eq!(t2.energy_used_mj, 30.0);
        assert_eq!(s.alive_count(), 0);
        assert!(s.motes().iter().all(|m| m.battery_mj == 0.0));
        let t3 = s.step(wp(5.0, -5.0), "power-max").unwrap();
        assert_eq!(t3.achieved_throughput, 0.0);
        assert_eq!(t3.packet_loss_fraction, 1.0);
        assert_eq!(t3.energy_used_mj, 0.0);
    }

    #[test]
    fn energy_ordering_over_a_trace() {
        let total = |cfg: &str| {
            let mut s = init(5);
            (0..200)
                .map(|i| {
                    s.step(wp((i % 10) as f64, -5.0), cfg)
                        .unwrap()
                        .energy_used_mj
                })
                .sum::<f64>()
        };
        let (min, med, max) = (
            total("power-min"),
            total("power-medium"),
            total("power-max"),
        );
        assert!(max >= med && med >= min);
    }

    #[test]
    fn capability_consistency_inside_every_region() {
        let odd = OddModel::canonical();
        for cfg in odd.configurations() {
            for region in cfg.regions() {
                for p in region.grid(6, 6) {
                    let mut s = init(11);
                    let tel: Vec<_> = (0..100).map(|_| s.step(p, cfg.id()).unwrap()).collect();
                    assert!(window_loss(&tel) <= 0.05, "{} at {p}", cfg.id());
                }
            }
        }
    }

    #[test]
    fn trace_lookup_holds_last_value() {
        let trace = EnvironmentTrace::new(vec![
            TraceEntry {
                tick: 0,
                interference: -5.0,
                demand: 5.0,
            },
            TraceEntry {
                tick: 10,
                interference: -5.0,
                demand: 20.0,
            },
        ])
        .unwrap();
        assert_eq!(trace.at(9), wp(5.0, -5.0));
        assert_eq!(trace.at(10), wp(20.0, -5.0));
        assert_eq!(trace.at(1_000), wp(20.0, -5.0));
        assert!(EnvironmentTrace::new(vec![
            TraceEntry {
                tick: 3,
                interference: -5.0,
                demand: 5.0
            },
            TraceEntry {
                tick: 3,
                interference: 1.0,
                demand: -2.0
            },
        ])
        .is_err());
    }

    #[test]
    fn csv_export_header_and_rows() {
        let mut s = init(2);
        let rows = vec![s.step(wp(5.0, -5.0), "power-min").unwrap()];
        let csv = telemetry_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("tick,demand,interference,achieved,loss,config")
        );
        assert!(lines.next().unwrap().starts_with("0,5,-5,"));
    }
}
