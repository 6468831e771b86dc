//! Append-only event log, golden-trace verification and replay.
//!
//! The log is line-delimited JSON, one [`EventRecord`] per line, with a
//! contiguous `seq` starting at zero.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::odd::{ConfigurationRecord, Interval, OddError, OddModel, WorkingPoint};

pub const EVENT_SCHEMA: u32 = 1;
pub const EXPECTATION_SCHEMA: &str = "expectation/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Telemetry,
    Decision,
    Trigger,
    Evolution,
    Enactment,
    Command,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub schema: u32,
    pub seq: u64,
    pub tick: u64,
    pub kind: EventKind,
    pub odd_version: u64,
    pub payload: Value,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Label used when matching evolution pipelines against expectations.
    pub fn stage(&self) -> Option<String> {
        match self.kind {
            EventKind::Trigger => Some("trigger".into()),
            EventKind::Enactment => Some("enactment".into()),
            EventKind::Evolution => self.payload.get("stage")?.as_str().map(str::to_string),
            _ => None,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &mut self,
        tick: u64,
        kind: EventKind,
        odd_version: u64,
        payload: Value,
    ) -> &EventRecord {
        let seq = self.records.len() as u64;
        self.records.push(EventRecord {
            schema: EVENT_SCHEMA,
            seq,
            tick,
            kind,
            odd_version,
            payload,
        });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn since(&self, seq: u64) -> &[EventRecord] {
        let start = (seq as usize).min(self.records.len());
        &self.records[start..]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

/// Parses a JSONL log and checks schema and seq contiguity.
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, LogParseError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(line).map_err(|e| LogParseError {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.schema != EVENT_SCHEMA {
            return Err(LogParseError {
                line: i + 1,
                message: format!("unsupported record schema {}", record.schema),
            });
        }
        if record.seq != out.len() as u64 {
            return Err(LogParseError {
                line: i + 1,
                message: format!("expected seq {}, found {}", out.len(), record.seq),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// A configuration decision as it appears in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDecision {
    pub seq: u64,
    pub tick: u64,
    pub point: WorkingPoint,
    pub reason: String,
    pub chosen: Option<String>,
    pub lifetime_years: Option<Interval>,
}

fn observed(record: &EventRecord) -> Result<ObservedDecision, String> {
    #[derive(Deserialize)]
    struct Payload {
        point: WorkingPoint,
        reason: String,
        chosen: Option<String>,
        #[serde(default)]
        lifetime_years: Option<Interval>,
    }
    let p: Payload = serde_json::from_value(record.payload.clone()).map_err(|e| e.to_string())?;
    Ok(ObservedDecision {
        seq: record.seq,
        tick: record.tick,
        point: p.point,
        reason: p.reason,
        chosen: p.chosen,
        lifetime_years: p.lifetime_years,
    })
}

/// Decisions whose (reason class, chosen configuration) differ from the
/// previous decision: the points where the system actually changed course.
pub fn decision_changes(records: &[EventRecord]) -> Result<Vec<ObservedDecision>, (u64, String)> {
    let mut out: Vec<ObservedDecision> = Vec::new();
    for r in records.iter().filter(|r| r.kind == EventKind::Decision) {
        let d = observed(r).map_err(|e| (r.seq, e))?;
        let changed = match out.last() {
            None => true,
            Some(prev) => {
                prev.chosen != d.chosen
                    || (prev.reason == "out_of_odd") != (d.reason == "out_of_odd")
            }
        };
        if changed {
            out.push(d);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedDecision {
    /// `None` expects an out-of-ODD decision.
    pub config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<WorkingPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime_years: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    #[serde(default = "default_expectation_schema")]
    pub schema: String,
    #[serde(default)]
    pub decisions: Vec<ExpectedDecision>,
    /// Ordered stage labels that must appear as a subsequence.
    #[serde(default)]
    pub evolution: Vec<String>,
}

fn default_expectation_schema() -> String {
    EXPECTATION_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyFailure {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VerifyReport {
    pub failures: Vec<VerifyFailure>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, seq: Option<u64>, message: impl Into<String>) {
        self.failures.push(VerifyFailure {
            seq,
            line: None,
            message: message.into(),
        });
    }
}

/// Compares the decision and evolution subsequences of a log against an
/// expectation document.
pub fn verify(log_text: &str, expectation_text: &str) -> VerifyReport {
    let mut report = VerifyReport::default();
    let records = match parse_log(log_text) {
        Ok(r) => r,
        Err(e) => {
            report.failures.push(VerifyFailure {
                seq: None,
                line: Some(e.line),
                message: format!("log: {}", e.message),
            });
            return report;
        }
    };
    let expectation: Expectation = match serde_json::from_str(expectation_text) {
        Ok(x) => x,
        Err(e) => {
            report.failures.push(VerifyFailure {
                seq: None,
                line: Some(e.line()),
                message: format!("expectation: {e}"),
            });
            return report;
        }
    };
    if expectation.schema != EXPECTATION_SCHEMA {
        report.fail(
            None,
            format!("expectation: unsupported schema `{}`", expectation.schema),
        );
        return report;
    }
    if expectation.decisions.is_empty() && expectation.evolution.is_empty() {
        report
            .warnings
            .push("expectation is empty; nothing checked".into());
        return report;
    }
    check_decisions(&records, &expectation.decisions, &mut report);
    check_stages(&records, &expectation.evolution, &mut report);
    report
}

fn check_decisions(
    records: &[EventRecord],
    expected: &[ExpectedDecision],
    report: &mut VerifyReport,
) {
    if expected.is_empty() {
        return;
    }
    let actual = match decision_changes(records) {
        Ok(a) => a,
        Err((seq, e)) => {
            report.fail(Some(seq), format!("malformed decision payload: {e}"));
            return;
        }
    };
    for (i, want) in expected.iter().enumerate() {
        let Some(got) = actual.get(i) else {
            report.fail(
                None,
                format!(
                    "decision #{i}: expected {:?}, log has only {} decisions",
                    want.config,
                    actual.len()
                ),
            );
            return;
        };
        let got_config = if got.reason == "out_of_odd" {
            None
        } else {
            got.chosen.clone()
        };
        if got_config != want.config {
            report.fail(
                Some(got.seq),
                format!(
                    "decision #{i}: expected {:?}, found {:?}",
                    want.config, got_config
                ),
            );
            return;
        }
        if let Some(p) = want.point {
            if p != got.point {
                report.fail(
                    Some(got.seq),
                    format!("decision #{i}: expected point {p}, found {}", got.point),
                );
                return;
            }
        }
        if let Some(l) = want.lifetime_years {
            if Some(l) != got.lifetime_years {
                report.fail(
                    Some(got.seq),
                    format!(
                        "decision #{i}: expected lifetime {l}, found {:?}",
                        got.lifetime_years
                    ),
                );
                return;
            }
        }
    }
    if let Some(extra) = actual.get(expected.len()) {
        report.fail(
            Some(extra.seq),
            format!("unexpected extra decision {:?}", extra.chosen),
        );
    }
}

fn check_stages(records: &[EventRecord], expected: &[String], report: &mut VerifyReport) {
    let mut it = records.iter().filter_map(|r| r.stage().map(|s| (r.seq, s)));
    let mut last_seq = None;
    for want in expected {
        match it.find(|(_, s)| s == want) {
            Some((seq, _)) => last_seq = Some(seq),
            None => {
                report.fail(
                    last_seq,
                    format!("evolution stage `{want}` not found after seq {last_seq:?}"),
                );
                return;
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("seq {seq}: {message}")]
    Inconsistent { seq: u64, message: String },
    #[error(transparent)]
    Odd(#[from] OddError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Every ODD version in the order it became current.
    pub odd_versions: Vec<u64>,
    pub decisions: Vec<ObservedDecision>,
    pub final_odd: OddModel,
}

/// Rebuilds the ODD history from the initial model plus the enactment
/// records, checking every record's `odd_version` along the way.
pub fn replay(initial: &OddModel, records: &[EventRecord]) -> Result<Replay, ReplayError> {
    let mut odd = initial.clone();
    let mut versions = vec![odd.version()];
    let mut decisions = Vec::new();
    for r in records {
        if r.kind == EventKind::Enactment {
            let cfg: ConfigurationRecord =
                serde_json::from_value(r.payload["configuration"].clone()).map_err(|e| {
                    ReplayError::Inconsistent {
                        seq: r.seq,
                        message: e.to_string(),
                    }
                })?;
            odd = odd.union(vec![cfg.into_config()?])?;
            versions.push(odd.version());
        }
        if r.odd_version != odd.version() {
            return Err(ReplayError::Inconsistent {
                seq: r.seq,
                message: format!(
                    "record claims ODD v{}, replay is at v{}",
                    r.odd_version,
                    odd.version()
                ),
            });
        }
        if r.kind == EventKind::Decision {
            decisions.push(observed(r).map_err(|message| ReplayError::Inconsistent {
                seq: r.seq,
                message,
            })?);
        }
    }
    Ok(Replay {
        odd_versions: versions,
        decisions,
        final_odd: odd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn decision(log: &mut EventLog, tick: u64, u: f64, c: f64, chosen: Option<&str>, reason: &str) {
        log.append(
            tick,
            EventKind::Decision,
            1,
            json!({"point": {"utility": u, "context": c}, "chosen": chosen, "reason": reason}),
        );
    }

    #[test]
    fn seq_is_contiguous() {
        let mut log = EventLog::new();
        for t in 0..5 {
            log.append(t, EventKind::Warning, 1, json!({}));
        }
        let seqs: Vec<_> = log.records().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, [0, 1, 2, 3, 4]);
        assert_eq!(log.since(3).len(), 2);
        assert!(log.since(99).is_empty());
        assert_eq!(parse_log(&log.to_jsonl()).unwrap(), log.records());
    }

    #[test]
    fn parse_rejects_gaps() {
        let mut log = EventLog::new();
        log.append(0, EventKind::Warning, 1, json!({}));
        log.append(0, EventKind::Warning, 1, json!({}));
        let text = log.to_jsonl().replace("\"seq\":1", "\"seq\":2");
        assert_eq!(parse_log(&text).unwrap_err().line, 2);
    }

    #[test]
    fn decision_changes_collapse_stays() {
        let mut log = EventLog::new();
        decision(&mut log, 0, 5.0, -5.0, Some("a"), "stay");
        decision(&mut log, 1, 5.0, -5.0, Some("a"), "stay");
        decision(&mut log, 2, 20.0, -5.0, Some("b"), "switch");
        decision(&mut log, 3, 35.0, -15.0, None, "out_of_odd");
        decision(&mut log, 4, 35.0, -15.0, None, "out_of_odd");
        let d = decision_changes(log.records()).unwrap();
        let seqs: Vec<_> = d.iter().map(|x| x.seq).collect();
        assert_eq!(seqs, [0, 2, 3]);
    }

    #[test]
    fn verify_reports_mismatch_location() {
        let mut log = EventLog::new();
        decision(&mut log, 0, 5.0, -5.0, Some("a"), "stay");
        decision(&mut log, 1, 20.0, -5.0, Some("b"), "switch");
        let expect = r#"{"decisions":[{"config":"a"},{"config":"c"}]}"#;
        let r = verify(&log.to_jsonl(), expect);
        assert!(!r.passed());
        assert_eq!(r.failures[0].seq, Some(1));
    }

    #[test]
    fn verify_empty_expectation_is_vacuous() {
        let r = verify("", "{}");
        assert!(r.passed());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn verify_schema_errors_carry_location() {
        let r = verify("{\"nope\":1}\n", "{}");
        assert_eq!(r.failures[0].line, Some(1));
        let r = verify("", r#"{"decisions": 3}"#);
        assert!(r.failures[0].line.is_some());
    }

    #[test]
    fn verify_stage_subsequence() {
        let mut log = EventLog::new();
        log.append(0, EventKind::Trigger, 1, json!({}));
        log.append(0, EventKind::Evolution, 1, json!({"stage": "target"}));
        log.append(0, EventKind::Evolution, 1, json!({"stage": "match"}));
        let text = log.to_jsonl();
        assert!(verify(&text, r#"{"evolution":["trigger","match"]}"#).passed());
        let r = verify(&text, r#"{"evolution":["match","trigger"]}"#);
        assert!(!r.passed());
    }

    #[test]
    fn replay_detects_version_drift() {
        let mut log = EventLog::new();
        log.append(0, EventKind::Warning, 2, json!({}));
        let err = replay(&OddModel::canonical(), log.records()).unwrap_err();
        assert!(matches!(err, ReplayError::Inconsistent { seq: 0, .. }));
    }
}
