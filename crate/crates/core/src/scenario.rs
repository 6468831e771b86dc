//! Scenario files (TOML): topology, seeds, energy table, loss goal,
//! environment trace, scripted commands, and references to the ODD model and
//! warehouse catalogue.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::evo::{EngineConfig, SandboxSettings, TargetMargin};
use crate::guidance::GuidanceCommand;
use crate::mape::{DEFAULT_DEBOUNCE, DEFAULT_SAFE_CONFIG};
use crate::odd::OddModel;
use crate::sim::{EnergyTable, EnvironmentTrace, MoteSpec, PowerSetting, SimConfig, TraceEntry};
use crate::warehouse::Catalogue;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    seed: u64,
    ticks: u64,
    #[serde(default = "default_loss_goal")]
    loss_goal: f64,
    battery_capacity_mj: f64,
    platform_tags: BTreeSet<String>,
    #[serde(default = "default_initial")]
    initial_config: String,
    #[serde(default = "default_safe")]
    safe_config: String,
    #[serde(default = "default_canonical")]
    odd: String,
    #[serde(default = "default_canonical")]
    catalogue: String,
    #[serde(default)]
    approval_gate: bool,
    #[serde(default)]
    energy_mj_per_tick: EnergyTable,
    #[serde(default)]
    configurations: Option<BTreeMap<String, PowerSetting>>,
    topology: Topology,
    trace: Vec<TraceEntry>,
    #[serde(default)]
    commands: Vec<ScriptedCommand>,
    #[serde(default)]
    evolution: EvolutionSection,
}

fn default_loss_goal() -> f64 {
    0.05
}
fn default_initial() -> String {
    "power-min".into()
}
fn default_safe() -> String {
    DEFAULT_SAFE_CONFIG.into()
}
fn default_canonical() -> String {
    "canonical".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Topology {
    gateway: String,
    motes: Vec<MoteSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCommand {
    pub tick: u64,
    pub command: GuidanceCommand,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvolutionSection {
    acceptance_threshold: f64,
    debounce: usize,
    margin_utility: f64,
    margin_context: f64,
    sandbox_runs: usize,
    sandbox_grid: usize,
    sandbox_ticks: usize,
    max_retries: u32,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            acceptance_threshold: e.acceptance_threshold,
            debounce: DEFAULT_DEBOUNCE,
            margin_utility: e.margin.utility,
            margin_context: e.margin.context,
            sandbox_runs: e.sandbox.runs,
            sandbox_grid: e.sandbox.grid,
            sandbox_ticks: e.sandbox.ticks,
            max_retries: e.max_retries,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub ticks: u64,
    pub sim: SimConfig,
    pub odd: OddModel,
    pub catalogue: Catalogue,
    pub trace: EnvironmentTrace,
    pub commands: Vec<ScriptedCommand>,
    pub engine: EngineConfig,
    pub debounce: usize,
    pub safe_config: String,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses scenario text; relative file references resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let mut problems = Vec::new();

        let odd = match file.odd.as_str() {
            "canonical" => Some(OddModel::canonical()),
            rel => read(base, rel, &mut problems, "odd").and_then(|t| {
                OddModel::from_json(&t)
                    .map_err(|e| problems.push(format!("odd: {e}")))
                    .ok()
            }),
        };
        let catalogue = match file.catalogue.as_str() {
            "canonical" => Some(Catalogue::canonical()),
            "empty" => Some(Catalogue::new()),
            rel => read(base, rel, &mut problems, "catalogue").and_then(|t| {
                Catalogue::from_json(&t)
                    .map_err(|e| problems.push(format!("catalogue: {e}")))
                    .ok()
            }),
        };
        let trace = EnvironmentTrace::new(file.trace)
            .map_err(|e| problems.push(e.to_string()))
            .ok();
        if file.ticks == 0 {
            problems.push("ticks: must be positive".into());
        }
        if file.name.trim().is_empty() {
            problems.push("name: must be non-empty".into());
        }
        let ev = &file.evolution;
        if !(0.0..=1.0).contains(&ev.acceptance_threshold) {
            problems.push("evolution.acceptance_threshold: must lie in [0, 1]".into());
        }
        if ev.debounce == 0 || ev.sandbox_runs == 0 || ev.sandbox_grid < 2 || ev.sandbox_ticks == 0
        {
            problems.push(
                "evolution: debounce, sandbox_runs, sandbox_ticks >= 1 and sandbox_grid >= 2"
                    .into(),
            );
        }
        let mut commands = file.commands;
        commands.sort_by_key(|c| c.tick);

        let config_power = file
            .configurations
            .unwrap_or_else(crate::sim::canonical_config_power);
        let sim = SimConfig {
            seed: file.seed,
            gateway: file.topology.gateway,
            motes: file.topology.motes,
            battery_capacity_mj: file.battery_capacity_mj,
            energy: file.energy_mj_per_tick,
            loss_goal: file.loss_goal,
            platform_tags: file.platform_tags,
            config_power,
            initial_config: file.initial_config,
        };
        if let Some(odd) = &odd {
            if odd.get(&file.safe_config).is_none() {
                problems.push(format!(
                    "safe_config: `{}` is not an ODD configuration",
                    file.safe_config
                ));
            }
            // Surface simulator validation problems now rather than at run time.
            if let Err(crate::sim::SimError::Validation(p)) =
                crate::sim::NetworkState::init(&sim, odd)
            {
                problems.extend(p);
            }
        }
        if !problems.is_empty() {
            return Err(ScenarioError::Invalid(problems));
        }
        let engine = EngineConfig {
            margin: TargetMargin {
                utility: ev.margin_utility,
                context: ev.margin_context,
            },
            sandbox: SandboxSettings {
                runs: ev.sandbox_runs,
                grid: ev.sandbox_grid,
                ticks: ev.sandbox_ticks,
                seed: 0,
            },
            acceptance_threshold: ev.acceptance_threshold,
            approval_gate: file.approval_gate,
            max_retries: ev.max_retries,
        };
        Ok(Scenario {
            name: file.name,
            ticks: file.ticks,
            sim,
            odd: odd.expect("checked"),
            catalogue: catalogue.expect("checked"),
            trace: trace.expect("checked"),
            commands,
            engine,
            debounce: ev.debounce,
            safe_config: file.safe_config,
        })
    }
}

fn read(base: &Path, rel: &str, problems: &mut Vec<String>, field: &str) -> Option<String> {
    let path = base.join(rel);
    std::fs::read_to_string(&path)
        .map_err(|e| problems.push(format!("{field}: cannot read {}: {e}", path.display())))
        .ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
seed = 1
ticks = 10
battery_capacity_mj = 1000.0
platform_tags = ["deltaiot-mote"]

[topology]
gateway = "gw"
motes = [{ id = "m1", parent = "gw" }, { id = "m2", parent = "m1" }]

[[trace]]
tick = 0
interference = -5.0
demand = 5.0
"#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_toml(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(s.sim.loss_goal, 0.05);
        assert_eq!(s.sim.energy, EnergyTable::default());
        assert_eq!(s.catalogue.len(), 3);
        assert_eq!(s.odd, OddModel::canonical());
        assert_eq!(s.debounce, 3);
        assert_eq!(s.engine.acceptance_threshold, 1.0);
        assert!(!s.engine.approval_gate);
    }

    #[test]
    fn validation_lists_every_problem() {
        let text = MINIMAL
            .replace("ticks = 10", "ticks = 0")
            .replace(
                r#"{ id = "m2", parent = "m1" }"#,
                r#"{ id = "m1", parent = "gw" }"#,
            )
            .replace(r#"platform_tags = ["deltaiot-mote"]"#, "platform_tags = []");
        let Err(ScenarioError::Invalid(p)) = Scenario::from_toml(&text, Path::new(".")) else {
            panic!("accepted invalid scenario");
        };
        assert!(p.iter().any(|m| m.starts_with("ticks")), "{p:?}");
        assert!(p.iter().any(|m| m.contains("duplicate id")), "{p:?}");
        assert!(p.iter().any(|m| m.starts_with("platform_tags")), "{p:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("colour = \"blue\"\n{MINIMAL}");
        assert!(matches!(
            Scenario::from_toml(&text, Path::new(".")),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn missing_files_are_reported() {
        let text = format!("odd = \"nope.json\"\n{MINIMAL}");
        let Err(ScenarioError::Invalid(p)) = Scenario::from_toml(&text, Path::new("/nonexistent"))
        else {
            panic!("accepted missing file");
        };
        assert!(p[0].starts_with("odd: cannot read"));
    }

    #[test]
    fn scripted_commands_parse() {
        let text = format!(
            "{MINIMAL}\n[[commands]]\ntick = 4\ncommand = {{ kind = \"add_evolution_target\", regions = [{{ context = [-20.0, 0.0], utility = [20.0, 40.0] }}] }}\n"
        );
        let s = Scenario::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(s.commands.len(), 1);
        assert_eq!(s.commands[0].command.kind(), "add_evolution_target");
    }
}
