//! The managing system: a monitor-analyze-plan-execute loop over ODD knowledge.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::evo::{self, EvolutionTrigger};
use crate::odd::{Interval, OddModel, WorkingPoint};
use crate::sim::{ManagedSystem, Telemetry};

pub const HISTORY_CAPACITY: usize = 100;
pub const DEFAULT_DEBOUNCE: usize = 3;
pub const DEFAULT_SAFE_CONFIG: &str = "power-max";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationGoals {
    pub loss_threshold: f64,
}

impl Default for AdaptationGoals {
    fn default() -> Self {
        Self {
            loss_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub tick: u64,
    pub point: WorkingPoint,
    pub config: String,
}

/// Knowledge of the managing system.
#[derive(Debug, Clone)]
pub struct Knowledge {
    current_point: Option<WorkingPoint>,
    current_config: String,
    odd: Arc<OddModel>,
    goals: AdaptationGoals,
    history: VecDeque<HistoryEntry>,
    last_tick: Option<u64>,
    safe_state: bool,
    escalated: bool,
    safe_config: String,
    debounce: usize,
}

impl Knowledge {
    pub fn new(
        odd: Arc<OddModel>,
        initial_config: impl Into<String>,
        goals: AdaptationGoals,
    ) -> Self {
        Self {
            current_point: None,
            current_config: initial_config.into(),
            odd,
            goals,
            history: VecDeque::with_capacity(HISTORY_CAPACITY),
            last_tick: None,
            safe_state: false,
            escalated: false,
            safe_config: DEFAULT_SAFE_CONFIG.to_string(),
            debounce: DEFAULT_DEBOUNCE,
        }
    }

    pub fn with_safe_config(mut self, id: impl Into<String>) -> Self {
        self.safe_config = id.into();
        self
    }

    pub fn with_debounce(mut self, k: usize) -> Self {
        self.debounce = k.max(1);
        self
    }

    pub fn current_point(&self) -> Option<WorkingPoint> {
        self.current_point
    }

    pub fn current_config(&self) -> &str {
        &self.current_config
    }

    pub fn odd(&self) -> &Arc<OddModel> {
        &self.odd
    }

    pub fn goals(&self) -> AdaptationGoals {
        self.goals
    }

    pub fn history(&self) -> &VecDeque<HistoryEntry> {
        &self.history
    }

    pub fn in_safe_state(&self) -> bool {
        self.safe_state
    }

    pub fn safe_config(&self) -> &str {
        &self.safe_config
    }

    pub fn debounce(&self) -> usize {
        self.debounce
    }

    /// Installs a newer ODD snapshot, e.g. after an enactment.
    pub fn replace_odd(&mut self, odd: Arc<OddModel>) {
        self.odd = odd;
    }

    /// Most recent points, oldest first.
    pub fn recent_points(&self) -> Vec<WorkingPoint> {
        self.history.iter().map(|h| h.point).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationOption {
    pub config_id: String,
    pub lifetime_years: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Stay,
    Switch,
    OutOfOdd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDecision {
    pub options: Vec<AdaptationOption>,
    pub chosen: Option<String>,
    pub reason: DecisionReason,
}

impl AdaptationDecision {
    pub fn chosen_lifetime(&self) -> Option<Interval> {
        let chosen = self.chosen.as_deref()?;
        self.options
            .iter()
            .find(|o| o.config_id == chosen)
            .map(|o| o.lifetime_years)
    }
}

/// Outcomes of one loop iteration, logged by the runner.
#[derive(Debug, Clone, PartialEq)]
pub enum MapeEvent {
    Decision {
        tick: u64,
        point: WorkingPoint,
        decision: AdaptationDecision,
    },
    StaleTelemetry {
        tick: u64,
        last_seen: u64,
    },
    SafeState {
        tick: u64,
        config: String,
    },
    Trigger(EvolutionTrigger),
    ExecutionFailure {
        tick: u64,
        config: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaleTick {
    pub tick: u64,
    pub last_seen: u64,
}

/// Records the current working point. Telemetry older than or equal to the
/// last seen tick is rejected.
pub fn monitor(knowledge: &mut Knowledge, telemetry: &Telemetry) -> Result<(), StaleTick> {
    if let Some(last) = knowledge.last_tick {
        if telemetry.tick <= last {
            return Err(StaleTick {
                tick: telemetry.tick,
                last_seen: last,
            });
        }
    }
    let point = telemetry.working_point();
    knowledge.last_tick = Some(telemetry.tick);
    knowledge.current_point = Some(point);
    if knowledge.history.len() == HISTORY_CAPACITY {
        knowledge.history.pop_front();
    }
    knowledge.history.push_back(HistoryEntry {
        tick: telemetry.tick,
        point,
        config: telemetry.config.clone(),
    });
    Ok(())
}

/// Every configuration whose ODD part contains the current working point.
pub fn analyze(knowledge: &Knowledge) -> Vec<AdaptationOption> {
    let Some(point) = knowledge.current_point else {
        return Vec::new();
    };
    knowledge
        .odd
        .satisfying_configs(&point)
        .into_iter()
        .map(|id| AdaptationOption {
            config_id: id.to_string(),
            lifetime_years: knowledge
                .odd
                .get(id)
                .expect("id from model")
                .lifetime_years(),
        })
        .collect()
}

/// Ranks `a` before `b` when it promises a longer network lifetime.
fn compare_options(a: &AdaptationOption, b: &AdaptationOption, incumbent: &str) -> Ordering {
    b.lifetime_years
        .lo()
        .total_cmp(&a.lifetime_years.lo())
        .then(b.lifetime_years.hi().total_cmp(&a.lifetime_years.hi()))
        .then((b.config_id == incumbent).cmp(&(a.config_id == incumbent)))
        .then(a.config_id.cmp(&b.config_id))
}

/// Picks the option with the best lifetime; ties go to the upper bound, then
/// to the incumbent configuration, then to the lexicographically smaller id.
pub fn plan(options: Vec<AdaptationOption>, current_config: &str) -> AdaptationDecision {
    let chosen = options
        .iter()
        .min_by(|a, b| compare_options(a, b, current_config))
        .map(|o| o.config_id.clone());
    let reason = match &chosen {
        None => DecisionReason::OutOfOdd,
        Some(id) if id == current_config => DecisionReason::Stay,
        Some(_) => DecisionReason::Switch,
    };
    AdaptationDecision {
        options,
        chosen,
        reason,
    }
}

/// Applies a decision to the managed system. Out-of-ODD decisions move the
/// system to its safe configuration.
pub fn execute(
    decision: &AdaptationDecision,
    knowledge: &mut Knowledge,
    system: &mut dyn ManagedSystem,
    tick: u64,
) -> Vec<MapeEvent> {
    let mut events = Vec::new();
    let target = match decision.reason {
        DecisionReason::Stay => {
            knowledge.safe_state = false;
            return events;
        }
        DecisionReason::Switch => decision.chosen.clone().expect("switch carries a choice"),
        DecisionReason::OutOfOdd => {
            if knowledge.safe_state {
                return events;
            }
            knowledge.safe_config.clone()
        }
    };
    match system.set_configuration(&target) {
        Ok(()) => {
            knowledge.current_config = target.clone();
            let entering_safe = decision.reason == DecisionReason::OutOfOdd;
            knowledge.safe_state = entering_safe;
            if entering_safe {
                events.push(MapeEvent::SafeState {
                    tick,
                    config: target,
                });
            }
        }
        Err(e) => events.push(MapeEvent::ExecutionFailure {
            tick,
            config: target,
            reason: e.to_string(),
        }),
    }
    events
}

/// One full loop iteration. Never aborts: problems surface as events.
pub fn mape_tick(
    knowledge: &mut Knowledge,
    telemetry: &Telemetry,
    system: &mut dyn ManagedSystem,
) -> (Option<AdaptationDecision>, Vec<MapeEvent>) {
    if let Err(stale) = monitor(knowledge, telemetry) {
        return (
            None,
            vec![MapeEvent::StaleTelemetry {
                tick: stale.tick,
                last_seen: stale.last_seen,
            }],
        );
    }
    let point = knowledge.current_point.expect("set by monitor");
    let options = analyze(knowledge);
    let decision = plan(options, &knowledge.current_config);
    let mut events = vec![MapeEvent::Decision {
        tick: telemetry.tick,
        point,
        decision: decision.clone(),
    }];
    events.extend(execute(&decision, knowledge, system, telemetry.tick));

    if decision.reason == DecisionReason::OutOfOdd {
        if !knowledge.escalated {
            let recent = knowledge.recent_points();
            if let Some(trigger) =
                evo::detect(&recent, &knowledge.odd, knowledge.debounce, telemetry.tick)
            {
                knowledge.escalated = true;
                events.push(MapeEvent::Trigger(trigger));
            }
        }
    } else {
        knowledge.escalated = false;
    }
    (Some(decision), events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimError;

    struct Recorder {
        config: String,
        calls: Vec<String>,
        reject: bool,
    }

    impl Recorder {
        fn new(config: &str) -> Self {
            Self {
                config: config.into(),
                calls: vec![],
                reject: false,
            }
        }
    }

    impl ManagedSystem for Recorder {
        fn set_configuration(&mut self, id: &str) -> Result<(), SimError> {
            if self.reject {
                return Err(SimError::UnknownConfig(id.into()));
            }
            self.calls.push(id.into());
            self.config = id.into();
            Ok(())
        }

        fn current_config(&self) -> &str {
            &self.config
        }
    }

    fn telemetry(tick: u64, demand: f64, interference: f64) -> Telemetry {
        Telemetry {
            tick,
            config: "power-min".into(),
            demand,
            interference,
            achieved_throughput: demand,
            packet_loss_fraction: 0.0,
            energy_used_mj: 0.0,
            lifetime_estimate_years: Interval::new(1.0, 2.0).unwrap(),
        }
    }

    fn knowledge() -> Knowledge {
        Knowledge::new(
            Arc::new(OddModel::canonical()),
            "power-min",
            AdaptationGoals::default(),
        )
    }

    fn opt(id: &str, lo: f64, hi: f64) -> AdaptationOption {
        AdaptationOption {
            config_id: id.into(),
            lifetime_years: Interval::new(lo, hi).unwrap(),
        }
    }

    #[test]
    fn monitor_records_point_and_rejects_stale() {
        let mut k = knowledge();
        monitor(&mut k, &telemetry(0, 5.0, -5.0)).unwrap();
        assert_eq!(
            k.current_point(),
            Some(WorkingPoint::new(5.0, -5.0).unwrap())
        );
        assert_eq!(
            monitor(&mut k, &telemetry(0, 5.0, -5.0)),
            Err(StaleTick {
                tick: 0,
                last_seen: 0
            })
        );
        assert_eq!(k.history().len(), 1);
    }

    #[test]
    fn history_is_a_bounded_ring() {
        let mut k = knowledge();
        for t in 0..1_000 {
            monitor(&mut k, &telemetry(t, 5.0, -5.0)).unwrap();
        }
        assert_eq!(k.history().len(), HISTORY_CAPACITY);
        assert_eq!(k.history().front().unwrap().tick, 900);
        assert_eq!(k.history().back().unwrap().tick, 999);
    }

    #[test]
    fn analyze_lists_satisfying_configs_with_lifetimes() {
        let mut k = knowledge();
        monitor(&mut k, &telemetry(0, 20.0, -5.0)).unwrap();
        assert_eq!(
            analyze(&k),
            vec![opt("power-max", 1.0, 3.0), opt("power-medium", 3.0, 5.0)]
        );
        monitor(&mut k, &telemetry(1, 35.0, -15.0)).unwrap();
        assert!(analyze(&k).is_empty());
        monitor(&mut k, &telemetry(2, 5.0, -5.0)).unwrap();
        assert_eq!(analyze(&k).len(), 3);
    }

    #[test]
    fn plan_prefers_longest_lifetime() {
        let d = plan(
            vec![opt("power-medium", 3.0, 5.0), opt("power-max", 1.0, 3.0)],
            "power-min",
        );
        assert_eq!(d.chosen.as_deref(), Some("power-medium"));
        assert_eq!(d.reason, DecisionReason::Switch);

        let d = plan(
            vec![
                opt("power-min", 5.0, 8.0),
                opt("power-medium", 3.0, 5.0),
                opt("power-max", 1.0, 3.0),
            ],
            "power-medium",
        );
        assert_eq!(d.chosen.as_deref(), Some("power-min"));

        let d = plan(vec![opt("power-max", 1.0, 3.0)], "power-max");
        assert_eq!(d.chosen.as_deref(), Some("power-max"));
        assert_eq!(d.reason, DecisionReason::Stay);
    }

    #[test]
    fn plan_tie_breaks() {
        // upper bound
        let d = plan(vec![opt("a", 1.0, 2.0), opt("b", 1.0, 3.0)], "a");
        assert_eq!(d.chosen.as_deref(), Some("b"));
        // incumbent
        let d = plan(vec![opt("a", 1.0, 3.0), opt("b", 1.0, 3.0)], "b");
        assert_eq!(d.chosen.as_deref(), Some("b"));
        assert_eq!(d.reason, DecisionReason::Stay);
        // lexicographic
        let d = plan(vec![opt("b", 1.0, 3.0), opt("a", 1.0, 3.0)], "z");
        assert_eq!(d.chosen.as_deref(), Some("a"));
    }

    #[test]
    fn plan_without_options_is_out_of_odd() {
        let d = plan(vec![], "power-min");
        assert_eq!(d.reason, DecisionReason::OutOfOdd);
        assert!(d.chosen.is_none());
    }

    #[test]
    fn execute_paths() {
        let mut k = knowledge();
        let mut sys = Recorder::new("power-min");
        let stay = plan(vec![opt("power-min", 5.0, 8.0)], "power-min");
        assert!(execute(&stay, &mut k, &mut sys, 0).is_empty());
        assert!(sys.calls.is_empty());

        let switch = plan(vec![opt("power-medium", 3.0, 5.0)], "power-min");
        execute(&switch, &mut k, &mut sys, 1);
        assert_eq!(sys.calls, ["power-medium"]);
        assert_eq!(k.current_config(), "power-medium");

        let out = plan(vec![], "power-medium");
        let ev = execute(&out, &mut k, &mut sys, 2);
        assert_eq!(
            ev,
            vec![MapeEvent::SafeState {
                tick: 2,
                config: "power-max".into()
            }]
        );
        assert!(k.in_safe_state());
        // already safe: no further calls
        assert!(execute(&out, &mut k, &mut sys, 3).is_empty());
        assert_eq!(sys.calls.len(), 2);
    }

    #[test]
    fn execute_reports_rejection() {
        let mut k = knowledge();
        let mut sys = Recorder::new("power-min");
        sys.reject = true;
        let switch = plan(vec![opt("power-medium", 3.0, 5.0)], "power-min");
        let ev = execute(&switch, &mut k, &mut sys, 4);
        assert!(matches!(ev[0], MapeEvent::ExecutionFailure { tick: 4, .. }));
        assert_eq!(k.current_config(), "power-min");
    }

    #[test]
    fn constant_environment_reaches_fixpoint() {
        let mut k = knowledge();
        let mut sys = Recorder::new("power-min");
        let mut reasons = vec![];
        for t in 0..20 {
            let (d, _) = mape_tick(&mut k, &telemetry(t, 20.0, -5.0), &mut sys);
            reasons.push(d.unwrap().reason);
        }
        assert_eq!(reasons[0], DecisionReason::Switch);
        assert!(reasons[1..].iter().all(|r| *r == DecisionReason::Stay));
    }

    #[test]
    fn one_trigger_after_debounce() {
        let mut k = knowledge();
        let mut sys = Recorder::new("power-min");
        let mut triggers = vec![];
        let points = [
            (5.0, -5.0),
            (35.0, -15.0),
            (35.0, -15.0),
            (35.0, -15.0),
            (35.0, -15.0),
            (35.0, -15.0),
        ];
        for (t, (u, c)) in points.iter().enumerate() {
            let (_, ev) = mape_tick(&mut k, &telemetry(t as u64, *u, *c), &mut sys);
            triggers.extend(ev.into_iter().filter_map(|e| match e {
                MapeEvent::Trigger(tr) => Some(tr),
                _ => None,
            }));
        }
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0].tick, 3);
        assert_eq!(sys.calls, ["power-max"]);
        assert!(k.in_safe_state());
    }

    #[test]
    fn stale_telemetry_yields_warning_only() {
        let mut k = knowledge();
        let mut sys = Recorder::new("power-min");
        mape_tick(&mut k, &telemetry(5, 5.0, -5.0), &mut sys);
        let (d, ev) = mape_tick(&mut k, &telemetry(5, 20.0, -5.0), &mut sys);
        assert!(d.is_none());
        assert_eq!(
            ev,
            vec![MapeEvent::StaleTelemetry {
                tick: 5,
                last_seen: 5
            }]
        );
    }
}
