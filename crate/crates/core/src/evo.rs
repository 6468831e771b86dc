//! Evolutionary engine: from a trigger to an enacted ODD extension.
//!
//! The pipeline is detect → derive target → search the warehouse → evaluate
//! candidates in a sandboxed clone of the simulator → assess → enact.
//! Enactment installs the element on the live network and replaces the ODD
//! with `ODD_Si ∪ ODD_e`.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::odd::{
    ConfigurationRecord, EvolutionTarget, OddError, OddModel, Region, TargetOrigin, WorkingPoint,
    CONTEXT_FLOOR_DB, DEFAULT_COVERAGE_GRID,
};
use crate::sim::{window_loss, InstallableElement, ManagedSystem, NetworkState, PowerSetting};
use crate::warehouse::{
    CatalogueEntry, FetchedElement, MatchResult, ParamSpec, WarehouseClient, WarehouseError,
    WarehouseTransport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvoError {
    #[error("element `{element}`: {reason}")]
    BadElement { element: String, reason: String },
    #[error(transparent)]
    Odd(#[from] OddError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Anomaly,
    Novelty,
    StakeholderGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrigger {
    pub kind: TriggerKind,
    /// Out-of-ODD working points that caused the trigger.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<WorkingPoint>,
    /// Regions submitted with a stakeholder goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<Region>>,
    pub tick: u64,
}

impl EvolutionTrigger {
    pub fn stakeholder_goal(regions: Vec<Region>, tick: u64) -> Self {
        Self {
            kind: TriggerKind::StakeholderGoal,
            evidence: Vec::new(),
            goal: Some(regions),
            tick,
        }
    }
}

/// Looks at the most recent working points (oldest first) for a reason to
/// evolve.
///
/// A point whose context lies outside the context span of every region is a
/// novelty and triggers at once. Otherwise the last `debounce` points must
/// all be outside the ODD for an anomaly.
pub fn detect(
    recent: &[WorkingPoint],
    odd: &OddModel,
    debounce: usize,
    tick: u64,
) -> Option<EvolutionTrigger> {
    let last = recent.last()?;
    if !odd.contains(last) && !odd.spans_context(last.context()) {
        return Some(EvolutionTrigger {
            kind: TriggerKind::Novelty,
            evidence: vec![*last],
            goal: None,
            tick,
        });
    }
    let k = debounce.max(1);
    if recent.len() < k {
        return None;
    }
    let window = &recent[recent.len() - k..];
    window
        .iter()
        .all(|p| !odd.contains(p))
        .then(|| EvolutionTrigger {
            kind: TriggerKind::Anomaly,
            evidence: window.to_vec(),
            goal: None,
            tick,
        })
}

/// Inflation applied around anomaly evidence when deriving a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMargin {
    pub utility: f64,
    pub context: f64,
}

impl Default for TargetMargin {
    fn default() -> Self {
        Self {
            utility: 2.0,
            context: 2.0,
        }
    }
}

/// Stakeholder goals pass through verbatim. Anomaly and novelty evidence
/// becomes its bounding box grown by `margin`, clipped to the working-point
/// domain.
pub fn derive_target(
    trigger: &EvolutionTrigger,
    margin: TargetMargin,
) -> Result<EvolutionTarget, OddError> {
    let origin = match trigger.kind {
        TriggerKind::StakeholderGoal => {
            let regions = trigger.goal.clone().unwrap_or_default();
            return EvolutionTarget::new(regions, TargetOrigin::StakeholderGoal, trigger.tick);
        }
        TriggerKind::Anomaly => TargetOrigin::Anomaly,
        TriggerKind::Novelty => TargetOrigin::Novelty,
    };
    let Some(first) = trigger.evidence.first() else {
        return Err(OddError::EmptyTarget);
    };
    let (mut u_lo, mut u_hi, mut c_lo, mut c_hi) = (
        first.utility(),
        first.utility(),
        first.context(),
        first.context(),
    );
    for p in &trigger.evidence[1..] {
        u_lo = u_lo.min(p.utility());
        u_hi = u_hi.max(p.utility());
        c_lo = c_lo.min(p.context());
        c_hi = c_hi.max(p.context());
    }
    let region = Region::new(
        (c_lo - margin.context).max(CONTEXT_FLOOR_DB),
        (c_hi + margin.context).min(0.0),
        (u_lo - margin.utility).max(0.0),
        u_hi + margin.utility,
    )?;
    EvolutionTarget::new(vec![region], origin, trigger.tick)
}

/// A matched catalogue entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entry: CatalogueEntry,
    pub matched: MatchResult,
}

/// Every matching entry, tightest fit first (smallest total margin), then by
/// element id and version.
pub fn search<T: WarehouseTransport>(
    target: &EvolutionTarget,
    warehouse: &WarehouseClient<T>,
    platform: &BTreeSet<String>,
) -> Result<Vec<Candidate>, WarehouseError> {
    let mut out = Vec::new();
    for entry in warehouse.list()? {
        let matched = warehouse.match_entry(&entry.element_id, &entry.version, target, platform)?;
        if matched.matched {
            out.push(Candidate { entry, matched });
        }
    }
    out.sort_by(|a, b| {
        a.matched
            .total_margin()
            .total_cmp(&b.matched.total_margin())
            .then_with(|| a.entry.element_id.cmp(&b.entry.element_id))
            .then_with(|| a.entry.version.cmp(&b.entry.version))
    });
    Ok(out)
}

#[derive(Deserialize)]
struct ElementPayload {
    element_id: String,
    version: String,
    config_id: String,
}

/// Turns a fetched element plus its data sheet into something the network
/// can install, applying the usage guide's default settings.
pub fn installable(
    entry: &CatalogueEntry,
    fetched: &FetchedElement,
) -> Result<InstallableElement, EvoError> {
    let bad = |reason: String| EvoError::BadElement {
        element: entry.element_id.clone(),
        reason,
    };
    let payload: ElementPayload =
        serde_json::from_str(&fetched.payload).map_err(|e| bad(format!("payload: {e}")))?;
    if payload.element_id != entry.element_id || payload.version != entry.version {
        return Err(bad(format!(
            "payload describes {}@{}",
            payload.element_id, payload.version
        )));
    }
    let region = entry
        .odd_contribution()
        .ok_or_else(|| bad("data sheet lacks throughput or interference range".into()))?;
    let configure = &fetched.usage_guide.configure;
    let power = match configure.get("power_setting") {
        Some(ParamSpec::Choice { default, .. }) => match default.as_str() {
            "minimum" => PowerSetting::Minimum,
            "medium" => PowerSetting::Medium,
            "maximum" => PowerSetting::Maximum,
            other => return Err(bad(format!("unknown power setting `{other}`"))),
        },
        _ => return Err(bad("usage guide lacks a power_setting choice".into())),
    };
    let lifetime_years = match configure.get("lifetime_years") {
        Some(ParamSpec::Interval { default, .. }) => *default,
        _ => return Err(bad("usage guide lacks a lifetime_years interval".into())),
    };
    Ok(InstallableElement {
        element_id: entry.element_id.clone(),
        version: entry.version.clone(),
        config_id: payload.config_id,
        regions: vec![region],
        power,
        lifetime_years,
        platform_tags: fetched.usage_guide.platform_tags.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandboxSettings {
    pub runs: usize,
    /// Samples per axis of each target region.
    pub grid: usize,
    pub ticks: usize,
    pub seed: u64,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            runs: 5,
            grid: 5,
            ticks: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxEvidence {
    pub element_id: String,
    pub sampled_points: Vec<WorkingPoint>,
    pub runs: usize,
    pub pass_fraction: f64,
    /// Worst window loss over all runs, aligned with `sampled_points`.
    pub worst_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn sandbox_seed(base: u64, run: usize, point: usize) -> u64 {
    let mut x = base ^ ((run as u64) << 32) ^ point as u64;
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Installs the element in a clone of `base` and drives every sampled target
/// point for `ticks` ticks, `runs` times with independent seeds. A (point,
/// run) pair passes when its window loss meets the network's loss goal.
/// The live network is never touched.
pub fn sandbox_evaluate(
    element: &InstallableElement,
    target: &EvolutionTarget,
    base: &NetworkState,
    settings: &SandboxSettings,
) -> SandboxEvidence {
    let runs = settings.runs.max(1);
    let grid = settings.grid.max(2);
    let sampled_points: Vec<WorkingPoint> = target
        .regions()
        .iter()
        .flat_map(|r| r.grid(grid, grid))
        .collect();
    let failed = |reason: String| SandboxEvidence {
        element_id: element.element_id.clone(),
        sampled_points: sampled_points.clone(),
        runs,
        pass_fraction: 0.0,
        worst_loss: vec![1.0; sampled_points.len()],
        failure: Some(reason),
    };

    let mut installed = base.clone();
    if let Some(p) = sampled_points
        .iter()
        .find(|p| WorkingPoint::new(p.utility(), p.context()).is_err())
    {
        return failed(format!(
            "target sample {p} lies outside the working-point domain"
        ));
    }
    if let Err(e) = installed.install_element(element) {
        return failed(e.to_string());
    }
    let goal = installed.loss_goal();
    let mut worst_loss = vec![0.0f64; sampled_points.len()];
    let mut passes = 0usize;
    for run in 0..runs {
        for (i, p) in sampled_points.iter().enumerate() {
            let mut sim = installed.clone();
            sim.reseed(sandbox_seed(settings.seed, run, i));
            if let Err(e) = sim.set_configuration(&element.config_id) {
                return failed(e.to_string());
            }
            let mut window = Vec::with_capacity(settings.ticks);
            for _ in 0..settings.ticks.max(1) {
                match sim.step(*p, &element.config_id) {
                    Ok(t) => window.push(t),
                    Err(e) => return failed(e.to_string()),
                }
            }
            let loss = window_loss(&window);
            worst_loss[i] = worst_loss[i].max(loss);
            if loss <= goal {
                passes += 1;
            }
        }
    }
    let total = runs * sampled_points.len();
    SandboxEvidence {
        element_id: element.element_id.clone(),
        sampled_points,
        runs,
        pass_fraction: if total == 0 {
            0.0
        } else {
            passes as f64 / total as f64
        },
        worst_loss,
        failure: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assessment {
    Accept,
    Reject,
}

pub fn assess(evidence: &SandboxEvidence, threshold: f64) -> Assessment {
    if evidence.failure.is_none() && evidence.pass_fraction >= threshold {
        Assessment::Accept
    } else {
        Assessment::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionStatus {
    Enacted,
    Rejected,
    AwaitingApproval,
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOutcome {
    pub status: EvolutionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odd_version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl EvolutionOutcome {
    fn new(status: EvolutionStatus) -> Self {
        Self {
            status,
            element_id: None,
            odd_version: None,
            reason: None,
        }
    }

    fn element(mut self, id: &str) -> Self {
        self.element_id = Some(id.to_string());
        self
    }

    fn reason(mut self, r: impl Into<String>) -> Self {
        self.reason = Some(r.into());
        self
    }
}

/// Installs the element on the live network and extends the ODD.
///
/// The union and the coverage check are computed before the network is
/// touched; any failure leaves both the network and the ODD as they were.
pub fn enact(
    element: &InstallableElement,
    target: &EvolutionTarget,
    sim: &mut NetworkState,
    odd: &OddModel,
) -> (EvolutionOutcome, Option<OddModel>) {
    let rejected = |r: String| {
        (
            EvolutionOutcome::new(EvolutionStatus::Rejected)
                .element(&element.element_id)
                .reason(r),
            None,
        )
    };
    let extended = match element.configuration().and_then(|cfg| odd.union(vec![cfg])) {
        Ok(m) => m,
        Err(e) => return rejected(e.to_string()),
    };
    match extended.coverage(target, DEFAULT_COVERAGE_GRID) {
        Ok(report) if report.is_complete() => {}
        Ok(report) => {
            return rejected(format!(
                "extended ODD covers only {:.3} of the target",
                report.fraction
            ))
        }
        Err(e) => return rejected(e.to_string()),
    }
    if let Err(e) = sim.install_element(element) {
        return rejected(e.to_string());
    }
    let mut outcome = EvolutionOutcome::new(EvolutionStatus::Enacted).element(&element.element_id);
    outcome.odd_version = Some(extended.version());
    (outcome, Some(extended))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub margin: TargetMargin,
    pub sandbox: SandboxSettings,
    pub acceptance_threshold: f64,
    pub approval_gate: bool,
    pub max_retries: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            margin: TargetMargin::default(),
            sandbox: SandboxSettings::default(),
            acceptance_threshold: 1.0,
            approval_gate: false,
            max_retries: 3,
        }
    }
}

/// Pipeline stages surfaced to the event log.
#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    Target(EvolutionTarget),
    Candidates(Vec<MatchResult>),
    Evidence(SandboxEvidence),
    Outcome(EvolutionOutcome),
    Enacted {
        element_id: String,
        version: String,
        configuration: ConfigurationRecord,
        odd_version: u64,
    },
    Warning {
        message: String,
        retriable: bool,
    },
    Coalesced {
        tick: u64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub events: Vec<EngineEvent>,
    /// Set when an enactment produced a new ODD snapshot.
    pub new_odd: Option<Arc<OddModel>>,
}

impl PipelineReport {
    pub fn outcome(&self) -> Option<&EvolutionOutcome> {
        self.events.iter().rev().find_map(|e| match e {
            EngineEvent::Outcome(o) => Some(o),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
struct PendingEnactment {
    target: EvolutionTarget,
    element: InstallableElement,
}

#[derive(Debug, Clone)]
struct PendingRetry {
    target: EvolutionTarget,
    attempts: u32,
}

/// Runs evolution pipelines against a warehouse. At most one pipeline is in
/// flight; repeated triggers for the same area are coalesced.
pub struct EvolutionEngine<T> {
    config: EngineConfig,
    warehouse: WarehouseClient<T>,
    platform: BTreeSet<String>,
    awaiting: Option<PendingEnactment>,
    retry: Option<PendingRetry>,
}

impl<T: WarehouseTransport> EvolutionEngine<T> {
    pub fn new(
        config: EngineConfig,
        warehouse: WarehouseClient<T>,
        platform: BTreeSet<String>,
    ) -> Self {
        Self {
            config,
            warehouse,
            platform,
            awaiting: None,
            retry: None,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_approval_gate(&mut self, on: bool) {
        self.config.approval_gate = on;
    }

    pub fn awaiting_approval(&self) -> bool {
        self.awaiting.is_some()
    }

    pub fn in_flight(&self) -> Option<&EvolutionTarget> {
        self.awaiting
            .as_ref()
            .map(|p| &p.target)
            .or(self.retry.as_ref().map(|r| &r.target))
    }

    pub fn handle_trigger(
        &mut self,
        trigger: &EvolutionTrigger,
        sim: &mut NetworkState,
        odd: &OddModel,
    ) -> PipelineReport {
        let mut report = PipelineReport::default();
        let target = match derive_target(trigger, self.config.margin) {
            Ok(t) => t,
            Err(e) => {
                report.events.push(EngineEvent::Warning {
                    message: format!("cannot derive evolution target: {e}"),
                    retriable: false,
                });
                return report;
            }
        };
        if let Some(current) = self.in_flight() {
            if current.same_area(&target) {
                report
                    .events
                    .push(EngineEvent::Coalesced { tick: trigger.tick });
            } else {
                report.events.push(EngineEvent::Warning {
                    message: "another evolution is in flight; trigger dropped".into(),
                    retriable: true,
                });
            }
            return report;
        }
        report.events.push(EngineEvent::Target(target.clone()));
        self.run(target, 0, sim, odd, &mut report);
        report
    }

    /// Re-runs a search that failed on an unreachable warehouse.
    pub fn retry_due(&mut self, sim: &mut NetworkState, odd: &OddModel) -> Option<PipelineReport> {
        let pending = self.retry.take()?;
        let mut report = PipelineReport::default();
        self.run(pending.target, pending.attempts, sim, odd, &mut report);
        Some(report)
    }

    /// Enacts the element waiting for approval.
    pub fn approve(&mut self, sim: &mut NetworkState, odd: &OddModel) -> Option<PipelineReport> {
        let pending = self.awaiting.take()?;
        let mut report = PipelineReport::default();
        self.finish(&pending.element, &pending.target, sim, odd, &mut report);
        Some(report)
    }

    /// Drops the element waiting for approval.
    pub fn reject_pending(&mut self, reason: &str) -> Option<PipelineReport> {
        let pending = self.awaiting.take()?;
        let mut report = PipelineReport::default();
        report.events.push(EngineEvent::Outcome(
            EvolutionOutcome::new(EvolutionStatus::Rejected)
                .element(&pending.element.element_id)
                .reason(reason),
        ));
        Some(report)
    }

    fn run(
        &mut self,
        target: EvolutionTarget,
        attempts: u32,
        sim: &mut NetworkState,
        odd: &OddModel,
        report: &mut PipelineReport,
    ) {
        let candidates = match search(&target, &self.warehouse, &self.platform) {
            Ok(c) => c,
            Err(e) if e.is_retriable() && attempts < self.config.max_retries => {
                report.events.push(EngineEvent::Warning {
                    message: e.to_string(),
                    retriable: true,
                });
                self.retry = Some(PendingRetry {
                    target,
                    attempts: attempts + 1,
                });
                return;
            }
            Err(e) => {
                report.events.push(EngineEvent::Outcome(
                    EvolutionOutcome::new(EvolutionStatus::Rejected).reason(e.to_string()),
                ));
                return;
            }
        };
        report.events.push(EngineEvent::Candidates(
            candidates.iter().map(|c| c.matched.clone()).collect(),
        ));
        if candidates.is_empty() {
            report
                .events
                .push(EngineEvent::Outcome(EvolutionOutcome::new(
                    EvolutionStatus::NoCandidate,
                )));
            return;
        }

        let mut sandbox = self.config.sandbox;
        sandbox.seed ^= sim.rng_seed();
        let mut chosen = None;
        for candidate in &candidates {
            let fetched = match self
                .warehouse
                .fetch(&candidate.entry.element_id, &candidate.entry.version)
            {
                Ok(f) => f,
                Err(e) => {
                    report.events.push(EngineEvent::Warning {
                        message: e.to_string(),
                        retriable: e.is_retriable(),
                    });
                    continue;
                }
            };
            let element = match installable(&candidate.entry, &fetched) {
                Ok(el) => el,
                Err(e) => {
                    report.events.push(EngineEvent::Warning {
                        message: e.to_string(),
                        retriable: false,
                    });
                    continue;
                }
            };
            let evidence = sandbox_evaluate(&element, &target, sim, &sandbox);
            let verdict = assess(&evidence, self.config.acceptance_threshold);
            report.events.push(EngineEvent::Evidence(evidence));
            if verdict == Assessment::Accept {
                chosen = Some(element);
                break;
            }
        }
        let Some(element) = chosen else {
            report.events.push(EngineEvent::Outcome(
                EvolutionOutcome::new(EvolutionStatus::Rejected)
                    .reason("no candidate met the evolution target in the sandbox"),
            ));
            return;
        };
        if self.config.approval_gate {
            report.events.push(EngineEvent::Outcome(
                EvolutionOutcome::new(EvolutionStatus::AwaitingApproval)
                    .element(&element.element_id),
            ));
            self.awaiting = Some(PendingEnactment { target, element });
            return;
        }
        self.finish(&element, &target, sim, odd, report);
    }

    fn finish(
        &mut self,
        element: &InstallableElement,
        target: &EvolutionTarget,
        sim: &mut NetworkState,
        odd: &OddModel,
        report: &mut PipelineReport,
    ) {
        let (outcome, extended) = enact(element, target, sim, odd);
        if let Some(model) = extended {
            let cfg = model.get(&element.config_id).expect("just added");
            report.events.push(EngineEvent::Enacted {
                element_id: element.element_id.clone(),
                version: element.version.clone(),
                configuration: ConfigurationRecord::from_config(cfg),
                odd_version: model.version(),
            });
            report.new_odd = Some(Arc::new(model));
        }
        report.events.push(EngineEvent::Outcome(outcome));
    }
}
