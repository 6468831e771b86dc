//! Drives a scenario: simulator, MAPE loop, evolution engine and guidance
//! commands, one tick at a time, writing everything to the event log.
//!
//! Per tick: scripted commands are injected into the hub, queued commands
//! are applied, pending warehouse retries run, the simulator advances, the
//! MAPE loop decides, any trigger runs the evolution pipeline, and finally
//! a snapshot is published for readers.

use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::events::{EventKind, EventLog, EventRecord};
use crate::evo::{EngineEvent, EvolutionEngine, EvolutionTrigger, PipelineReport};
use crate::guidance::{GuidanceCommand, GuidanceHub, QueuedCommand, StateSnapshot, Verdict};
use crate::mape::{self, AdaptationGoals, Knowledge, MapeEvent};
use crate::odd::{OddModel, WorkingPoint};
use crate::scenario::Scenario;
use crate::sim::{telemetry_csv, EnvironmentTrace, NetworkState, SimError, Telemetry};
use crate::warehouse::{WarehouseClient, WarehouseService};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Engine = EvolutionEngine<Arc<WarehouseService>>;

pub struct Runner {
    name: String,
    ticks: u64,
    trace: EnvironmentTrace,
    commands: Vec<crate::scenario::ScriptedCommand>,
    next_command: usize,
    sim: NetworkState,
    knowledge: Knowledge,
    engine: Engine,
    warehouse: Arc<WarehouseService>,
    odd: Arc<OddModel>,
    log: EventLog,
    telemetry: Vec<Telemetry>,
    hub: Arc<GuidanceHub>,
    published: usize,
    tick: u64,
    last_point: Option<WorkingPoint>,
}

/// Files a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub event_log: String,
    pub telemetry_csv: String,
    pub final_odd: OddModel,
}

impl Runner {
    pub fn new(scenario: Scenario) -> Result<Self, RunError> {
        let sim = NetworkState::init(&scenario.sim, &scenario.odd)?;
        let odd = Arc::new(scenario.odd);
        let knowledge = Knowledge::new(
            odd.clone(),
            scenario.sim.initial_config.clone(),
            AdaptationGoals {
                loss_threshold: scenario.sim.loss_goal,
            },
        )
        .with_safe_config(scenario.safe_config)
        .with_debounce(scenario.debounce);
        let warehouse = Arc::new(WarehouseService::new(scenario.catalogue));
        let engine = EvolutionEngine::new(
            scenario.engine,
            WarehouseClient::new(warehouse.clone()),
            scenario.sim.platform_tags.clone(),
        );
        let hub = Arc::new(GuidanceHub::new(odd.clone(), StateSnapshot::default()));
        let mut runner = Runner {
            name: scenario.name,
            ticks: scenario.ticks,
            trace: scenario.trace,
            commands: scenario.commands,
            next_command: 0,
            sim,
            knowledge,
            engine,
            warehouse,
            odd,
            log: EventLog::new(),
            telemetry: Vec::new(),
            hub,
            published: 0,
            tick: 0,
            last_point: None,
        };
        runner.publish();
        Ok(runner)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hub(&self) -> Arc<GuidanceHub> {
        self.hub.clone()
    }

    pub fn warehouse(&self) -> Arc<WarehouseService> {
        self.warehouse.clone()
    }

    pub fn odd(&self) -> &Arc<OddModel> {
        &self.odd
    }

    pub fn sim(&self) -> &NetworkState {
        &self.sim
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn telemetry(&self) -> &[Telemetry] {
        &self.telemetry
    }

    /// Next tick to execute.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.ticks
    }

    pub fn set_approval_gate(&mut self, on: bool) {
        self.engine.set_approval_gate(on);
    }

    /// Executes one tick. Returns `false` once the scenario is over.
    pub fn step(&mut self) -> bool {
        if self.finished() {
            return false;
        }
        let tick = self.tick;

        while let Some(cmd) = self.commands.get(self.next_command) {
            if cmd.tick > tick {
                break;
            }
            if let Err(e) = self.hub.submit(cmd.command.clone()) {
                let v = self.odd.version();
                self.log.append(
                    tick,
                    EventKind::Warning,
                    v,
                    json!({ "message": format!("scripted command rejected: {}", e.message) }),
                );
            }
            self.next_command += 1;
        }
        for queued in self.hub.drain() {
            self.apply_command(tick, queued);
        }
        if let Some(report) = self.engine.retry_due(&mut self.sim, &self.odd) {
            self.absorb(tick, report);
        }

        let env = self.trace.at(tick);
        let config = self.knowledge.current_config().to_string();
        match self.sim.step(env, &config) {
            Ok(t) => {
                self.log.append(
                    tick,
                    EventKind::Telemetry,
                    self.odd.version(),
                    serde_json::to_value(&t).expect("telemetry serializes"),
                );
                self.last_point = Some(t.working_point());
                let (_, events) = mape::mape_tick(&mut self.knowledge, &t, &mut self.sim);
                self.telemetry.push(t);
                for event in events {
                    self.log_mape(event);
                }
            }
            Err(e) => {
                let v = self.odd.version();
                self.log.append(
                    tick,
                    EventKind::Warning,
                    v,
                    json!({ "message": format!("simulator step failed: {e}") }),
                );
            }
        }
        self.tick += 1;
        self.publish();
        true
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts {
            event_log: self.log.to_jsonl(),
            telemetry_csv: telemetry_csv(&self.telemetry),
            final_odd: (*self.odd).clone(),
        }
    }

    fn apply_command(&mut self, tick: u64, queued: QueuedCommand) {
        let v = self.odd.version();
        self.log.append(
            tick,
            EventKind::Command,
            v,
            json!({
                "id": queued.id,
                "issued_at": queued.issued_at,
                "command": queued.command,
                "ack": true,
            }),
        );
        match queued.command {
            GuidanceCommand::AddGoal { regions, .. }
            | GuidanceCommand::AddEvolutionTarget { regions } => {
                let trigger = EvolutionTrigger::stakeholder_goal(regions, tick);
                self.run_trigger(tick, trigger);
            }
            GuidanceCommand::Approve => match self.engine.approve(&mut self.sim, &self.odd) {
                Some(report) => self.absorb(tick, report),
                None => {
                    self.log.append(
                        tick,
                        EventKind::Warning,
                        v,
                        json!({ "message": "approve: nothing awaiting approval" }),
                    );
                }
            },
            GuidanceCommand::Feedback { verdict, note, .. } => {
                if verdict == Verdict::Reject {
                    let reason = if note.is_empty() {
                        "rejected by operator".to_string()
                    } else {
                        note
                    };
                    if let Some(report) = self.engine.reject_pending(&reason) {
                        self.absorb(tick, report);
                    }
                }
            }
        }
    }

    fn run_trigger(&mut self, tick: u64, trigger: EvolutionTrigger) {
        let v = self.odd.version();
        self.log.append(
            tick,
            EventKind::Trigger,
            v,
            serde_json::to_value(&trigger).expect("trigger serializes"),
        );
        let report = self
            .engine
            .handle_trigger(&trigger, &mut self.sim, &self.odd);
        self.absorb(tick, report);
    }

    fn log_mape(&mut self, event: MapeEvent) {
        let v = self.odd.version();
        match event {
            MapeEvent::Decision {
                tick,
                point,
                decision,
            } => {
                self.log.append(
                    tick,
                    EventKind::Decision,
                    v,
                    json!({
                        "point": point,
                        "options": decision.options,
                        "chosen": decision.chosen,
                        "reason": decision.reason,
                        "lifetime_years": decision.chosen_lifetime(),
                        "safe_state": self.knowledge.in_safe_state(),
                    }),
                );
            }
            MapeEvent::StaleTelemetry { tick, last_seen } => {
                self.log.append(
                    tick,
                    EventKind::Warning,
                    v,
                    json!({ "message": "stale telemetry ignored", "last_seen": last_seen }),
                );
            }
            MapeEvent::SafeState { tick, config } => {
                self.log.append(
                    tick,
                    EventKind::Warning,
                    v,
                    json!({ "message": "working point outside the ODD; safe state entered", "safe_state": true, "config": config }),
                );
            }
            MapeEvent::ExecutionFailure {
                tick,
                config,
                reason,
            } => {
                self.log.append(
                    tick,
                    EventKind::Warning,
                    v,
                    json!({ "message": format!("cannot switch to {config}: {reason}") }),
                );
            }
            MapeEvent::Trigger(trigger) => {
                let tick = trigger.tick;
                self.run_trigger(tick, trigger);
            }
        }
    }

    /// Logs a pipeline report and installs any new ODD snapshot.
    fn absorb(&mut self, tick: u64, report: PipelineReport) {
        let mut version = self.odd.version();
        for event in report.events {
            let (kind, payload) = match event {
                EngineEvent::Target(t) => (
                    EventKind::Evolution,
                    json!({ "stage": "target", "target": t }),
                ),
                EngineEvent::Candidates(c) => (
                    EventKind::Evolution,
                    json!({ "stage": "match", "candidates": c }),
                ),
                EngineEvent::Evidence(e) => (
                    EventKind::Evolution,
                    json!({ "stage": "evidence", "evidence": e }),
                ),
                EngineEvent::Outcome(o) => {
                    let mut p = serde_json::to_value(&o).expect("outcome serializes");
                    p["stage"] = Value::from("outcome");
                    (EventKind::Evolution, p)
                }
                EngineEvent::Enacted {
                    element_id,
                    version: element_version,
                    configuration,
                    odd_version,
                } => {
                    version = odd_version;
                    (
                        EventKind::Enactment,
                        json!({
                            "element_id": element_id,
                            "version": element_version,
                            "configuration": configuration,
                        }),
                    )
                }
                EngineEvent::Warning { message, retriable } => (
                    EventKind::Warning,
                    json!({ "message": message, "retriable": retriable }),
                ),
                EngineEvent::Coalesced { tick } => (
                    EventKind::Evolution,
                    json!({ "stage": "coalesced", "trigger_tick": tick }),
                ),
            };
            self.log.append(tick, kind, version, payload);
        }
        if let Some(odd) = report.new_odd {
            self.knowledge.replace_odd(odd.clone());
            self.odd = odd;
        }
    }

    fn publish(&mut self) {
        let new: Vec<EventRecord> = self.log.records()[self.published..].to_vec();
        self.published = self.log.len();
        let snapshot = StateSnapshot {
            tick: self.tick,
            working_point: self.last_point,
            config: self.knowledge.current_config().to_string(),
            safe_state: self.knowledge.in_safe_state(),
            odd_version: self.odd.version(),
            pending_approval: self.engine.awaiting_approval(),
            last_seq: self.log.records().last().map(|r| r.seq),
            finished: self.finished(),
        };
        self.hub.publish(snapshot, &self.odd, &new);
    }
}
