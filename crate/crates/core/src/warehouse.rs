//! Computing warehouse: a catalogue of auto-evolution-enabled elements, each
//! described by a data sheet and a usage guide.
//!
//! Matching is containment over a fixed capability vocabulary. A data sheet
//! range must cover the corresponding target interval on every axis the
//! target constrains, and the element's platform tags must intersect the
//! platform's.
//!
//! The same operations are served over a request/response text protocol
//! ([`WarehouseRequest`] / [`WarehouseResponse`]) so the catalogue can live
//! in-process or behind a remote endpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::odd::{EvolutionTarget, Interval, Region};

pub const THROUGHPUT: &str = "throughput";
pub const INTERFERENCE: &str = "interference";
pub const FREQUENCY: &str = "frequency";
pub const MODULATION: &str = "modulation";

/// Capability names the matcher understands, with the unit each range must carry.
pub const VOCABULARY: &[(&str, Option<&str>)] = &[
    (THROUGHPUT, Some("packets/sec")),
    (INTERFERENCE, Some("dB")),
    (FREQUENCY, Some("MHz")),
    (MODULATION, None),
];

pub const CATALOGUE_SCHEMA: &str = "catalogue/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WarehouseError {
    #[error("entry {element_id}@{version} already published")]
    Conflict { element_id: String, version: String },
    #[error("invalid entry: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("no entry {element_id}@{version}")]
    NotFound { element_id: String, version: String },
    #[error("payload checksum mismatch for {element_id}@{version}")]
    Integrity { element_id: String, version: String },
    #[error("warehouse unreachable: {0}")]
    Unreachable(String),
    #[error("malformed message: {0}")]
    Protocol(String),
}

impl WarehouseError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, WarehouseError::Unreachable(_))
    }

    fn code(&self) -> &'static str {
        match self {
            WarehouseError::Conflict { .. } => "conflict",
            WarehouseError::Validation(_) => "validation",
            WarehouseError::NotFound { .. } => "not_found",
            WarehouseError::Integrity { .. } => "integrity",
            WarehouseError::Unreachable(_) => "unreachable",
            WarehouseError::Protocol(_) => "protocol",
        }
    }
}

/// A data sheet value: a closed numeric range with a unit, or an
/// enumerated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Capability {
    Range { range: Interval, unit: String },
    Set { set: BTreeSet<String> },
}

impl Capability {
    pub fn range(lo: f64, hi: f64, unit: &str) -> Self {
        Capability::Range {
            range: Interval::new(lo, hi).expect("well-ordered range"),
            unit: unit.to_string(),
        }
    }

    pub fn set<I: IntoIterator<Item = S>, S: Into<String>>(values: I) -> Self {
        Capability::Set {
            set: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn as_range(&self) -> Option<Interval> {
        match self {
            Capability::Range { range, .. } => Some(*range),
            Capability::Set { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataSheet {
    pub capabilities: BTreeMap<String, Capability>,
}

impl DataSheet {
    pub fn get(&self, name: &str) -> Option<&Capability> {
        self.capabilities.get(name)
    }

    pub fn with(mut self, name: &str, cap: Capability) -> Self {
        self.capabilities.insert(name.to_string(), cap);
        self
    }

    fn validate(&self, problems: &mut Vec<String>) {
        for (name, cap) in &self.capabilities {
            match cap {
                Capability::Range { unit, .. } if unit.trim().is_empty() => {
                    problems.push(format!("data_sheet.{name}: unit missing"));
                }
                Capability::Set { set } if set.is_empty() => {
                    problems.push(format!("data_sheet.{name}: empty set"));
                }
                _ => {}
            }
            if let Some((_, Some(expected))) = VOCABULARY.iter().find(|(n, _)| n == name) {
                match cap {
                    Capability::Range { unit, .. } if unit != expected => problems.push(format!(
                        "data_sheet.{name}: unit `{unit}`, expected `{expected}`"
                    )),
                    Capability::Set { .. } => {
                        problems.push(format!("data_sheet.{name}: expected a range"))
                    }
                    _ => {}
                }
            }
        }
    }
}

/// Configuration parameter schema with its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamSpec {
    Choice {
        options: Vec<String>,
        default: String,
    },
    Interval {
        min: f64,
        max: f64,
        default: Interval,
    },
}

impl ParamSpec {
    fn default_is_valid(&self) -> bool {
        match self {
            ParamSpec::Choice { options, default } => options.contains(default),
            ParamSpec::Interval { min, max, default } => {
                *min <= default.lo() && default.hi() <= *max
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsageGuide {
    pub platform_tags: BTreeSet<String>,
    /// Payload reference.
    pub obtain: String,
    pub integrate: Vec<String>,
    pub configure: BTreeMap<String, ParamSpec>,
}

impl UsageGuide {
    fn validate(&self, problems: &mut Vec<String>) {
        if self.platform_tags.is_empty() {
            problems.push("usage_guide.platform_tags: at least one tag required".into());
        }
        for (name, spec) in &self.configure {
            if !spec.default_is_valid() {
                problems.push(format!(
                    "usage_guide.configure.{name}: default violates schema"
                ));
            }
        }
    }
}

/// One record of the catalogue file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogueEntry {
    pub element_id: String,
    pub version: String,
    pub data_sheet: DataSheet,
    pub usage_guide: UsageGuide,
    pub payload: String,
    pub payload_checksum: String,
}

impl CatalogueEntry {
    /// Builds an entry and records the payload checksum.
    pub fn new(
        element_id: impl Into<String>,
        version: impl Into<String>,
        data_sheet: DataSheet,
        usage_guide: UsageGuide,
        payload: impl Into<String>,
    ) -> Self {
        let payload = payload.into();
        Self {
            element_id: element_id.into(),
            version: version.into(),
            data_sheet,
            usage_guide,
            payload_checksum: checksum(&payload),
            payload,
        }
    }

    pub fn validate(&self) -> Result<(), WarehouseError> {
        let mut problems = Vec::new();
        if self.element_id.trim().is_empty() {
            problems.push("element_id: must be non-empty".into());
        }
        if self.version.trim().is_empty() {
            problems.push("version: must be non-empty".into());
        }
        self.data_sheet.validate(&mut problems);
        self.usage_guide.validate(&mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(WarehouseError::Validation(problems))
        }
    }

    /// The ODD box this element claims: interference range × throughput range.
    pub fn odd_contribution(&self) -> Option<Region> {
        let c = self.data_sheet.get(INTERFERENCE)?.as_range()?;
        let u = self.data_sheet.get(THROUGHPUT)?.as_range()?;
        Some(Region {
            context: c,
            utility: u,
            knowledge: Default::default(),
        })
    }

    fn key(&self) -> (String, String) {
        (self.element_id.clone(), self.version.clone())
    }
}

pub fn checksum(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))
}

/// A capability predicate used by [`Catalogue::query`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapabilityPredicate {
    /// Sheet range ⊇ `[lo, hi]`.
    Covers { capability: String, range: Interval },
    /// Sheet set contains `value`.
    Includes { capability: String, value: String },
}

impl CapabilityPredicate {
    fn capability(&self) -> &str {
        match self {
            CapabilityPredicate::Covers { capability, .. }
            | CapabilityPredicate::Includes { capability, .. } => capability,
        }
    }

    fn holds(&self, sheet: &DataSheet) -> bool {
        match (self, sheet.get(self.capability())) {
            (
                CapabilityPredicate::Covers { range, .. },
                Some(Capability::Range { range: r, .. }),
            ) => r.covers(range),
            (CapabilityPredicate::Includes { value, .. }, Some(Capability::Set { set })) => {
                set.contains(value)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub entries: Vec<CatalogueEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchFailure {
    pub capability: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub element_id: String,
    pub version: String,
    pub matched: bool,
    /// Slack per capability: how far the sheet range extends past the
    /// target hull on both sides together.
    pub margin: BTreeMap<String, f64>,
    pub failures: Vec<MatchFailure>,
}

impl MatchResult {
    pub fn total_margin(&self) -> f64 {
        self.margin.values().sum()
    }
}

/// Checks an entry against an evolution target and the platform tags of the
/// running system.
pub fn match_entry(
    entry: &CatalogueEntry,
    target: &EvolutionTarget,
    platform: &BTreeSet<String>,
) -> MatchResult {
    let mut failures = Vec::new();
    let mut margin = BTreeMap::new();
    type Axis = fn(&Region) -> Interval;
    let axes: [(&str, Axis); 2] = [(THROUGHPUT, |r| r.utility), (INTERFERENCE, |r| r.context)];
    for (name, axis) in axes {
        match entry.data_sheet.get(name).and_then(Capability::as_range) {
            None => failures.push(MatchFailure {
                capability: name.into(),
                reason: "not listed in the data sheet".into(),
            }),
            Some(sheet) => {
                let mut uncovered = None;
                for region in target.regions() {
                    let want = axis(region);
                    if !sheet.covers(&want) {
                        uncovered = Some(want);
                        break;
                    }
                }
                match uncovered {
                    Some(want) => failures.push(MatchFailure {
                        capability: name.into(),
                        reason: format!("sheet range {sheet} does not cover {want}"),
                    }),
                    None => {
                        let hull = axis(&target.hull());
                        margin.insert(
                            name.to_string(),
                            (hull.lo() - sheet.lo()) + (sheet.hi() - hull.hi()),
                        );
                    }
                }
            }
        }
    }
    if entry.usage_guide.platform_tags.is_disjoint(platform) {
        failures.push(MatchFailure {
            capability: "platform".into(),
            reason: format!(
                "usage guide supports {:?}, platform is {:?}",
                entry.usage_guide.platform_tags, platform
            ),
        });
    }
    MatchResult {
        element_id: entry.element_id.clone(),
        version: entry.version.clone(),
        matched: failures.is_empty(),
        margin,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchedElement {
    pub element_id: String,
    pub version: String,
    pub payload: String,
    pub payload_checksum: String,
    pub usage_guide: UsageGuide,
}

/// Append-only catalogue. Entries are kept sorted by (element id, version).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalogue {
    entries: BTreeMap<(String, String), CatalogueEntry>,
    revision: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogueFile {
    schema: String,
    revision: u64,
    entries: Vec<CatalogueEntry>,
}

impl Catalogue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogueEntry> {
        self.entries.values()
    }

    pub fn get(&self, element_id: &str, version: &str) -> Option<&CatalogueEntry> {
        self.entries
            .get(&(element_id.to_string(), version.to_string()))
    }

    pub fn publish(&mut self, entry: CatalogueEntry) -> Result<(), WarehouseError> {
        entry.validate()?;
        let key = entry.key();
        if self.entries.contains_key(&key) {
            return Err(WarehouseError::Conflict {
                element_id: key.0,
                version: key.1,
            });
        }
        self.entries.insert(key, entry);
        self.revision += 1;
        Ok(())
    }

    /// Entries satisfying every predicate, ordered by element id. A predicate
    /// over a capability outside the vocabulary yields an empty result and a
    /// warning.
    pub fn query(&self, filter: &[CapabilityPredicate]) -> QueryResult {
        let unknown: Vec<String> = filter
            .iter()
            .map(CapabilityPredicate::capability)
            .filter(|name| !VOCABULARY.iter().any(|(v, _)| v == name))
            .map(|name| format!("unknown capability `{name}` in filter"))
            .collect();
        if !unknown.is_empty() {
            return QueryResult {
                entries: Vec::new(),
                warnings: unknown,
            };
        }
        QueryResult {
            entries: self
                .entries
                .values()
                .filter(|e| filter.iter().all(|p| p.holds(&e.data_sheet)))
                .cloned()
                .collect(),
            warnings: Vec::new(),
        }
    }

    pub fn fetch(&self, element_id: &str, version: &str) -> Result<FetchedElement, WarehouseError> {
        let entry = self
            .get(element_id, version)
            .ok_or_else(|| WarehouseError::NotFound {
                element_id: element_id.into(),
                version: version.into(),
            })?;
        if checksum(&entry.payload) != entry.payload_checksum {
            return Err(WarehouseError::Integrity {
                element_id: element_id.into(),
                version: version.into(),
            });
        }
        Ok(FetchedElement {
            element_id: entry.element_id.clone(),
            version: entry.version.clone(),
            payload: entry.payload.clone(),
            payload_checksum: entry.payload_checksum.clone(),
            usage_guide: entry.usage_guide.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let file = CatalogueFile {
            schema: CATALOGUE_SCHEMA.into(),
            revision: self.revision,
            entries: self.entries.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("catalogue serializes")
    }

    /// Loads a catalogue file. Checksums are not verified here; `fetch` does.
    pub fn from_json(text: &str) -> Result<Self, WarehouseError> {
        let file: CatalogueFile =
            serde_json::from_str(text).map_err(|e| WarehouseError::Protocol(e.to_string()))?;
        if file.schema != CATALOGUE_SCHEMA {
            return Err(WarehouseError::Protocol(format!(
                "unsupported schema `{}`",
                file.schema
            )));
        }
        let mut entries = BTreeMap::new();
        for entry in file.entries {
            entry.validate()?;
            let key = entry.key();
            if entries.insert(key.clone(), entry).is_some() {
                return Err(WarehouseError::Conflict {
                    element_id: key.0,
                    version: key.1,
                });
            }
        }
        Ok(Self {
            entries,
            revision: file.revision,
        })
    }

    /// The example catalogue: the two-frequency radio module and a few
    /// elements that fail it for different reasons.
    pub fn canonical() -> Self {
        let mut cat = Catalogue::new();
        for entry in canonical_entries() {
            cat.publish(entry).expect("canonical entries are valid");
        }
        cat
    }
}

/// Usage guide shared by the canonical elements, differing only in tags.
fn guide(
    element_id: &str,
    version: &str,
    tags: &[&str],
    power: &str,
    lifetime: (f64, f64),
) -> UsageGuide {
    UsageGuide {
        platform_tags: tags.iter().map(|s| s.to_string()).collect(),
        obtain: format!("warehouse://{element_id}/{version}"),
        integrate: vec![
            "stop-the-world".into(),
            "flash-firmware-module".into(),
            "register-configuration".into(),
        ],
        configure: BTreeMap::from([
            (
                "power_setting".to_string(),
                ParamSpec::Choice {
                    options: vec!["minimum".into(), "medium".into(), "maximum".into()],
                    default: power.into(),
                },
            ),
            (
                "lifetime_years".to_string(),
                ParamSpec::Interval {
                    min: 0.1,
                    max: 20.0,
                    default: Interval::new(lifetime.0, lifetime.1).unwrap(),
                },
            ),
        ]),
    }
}

fn payload(element_id: &str, version: &str) -> String {
    format!(r#"{{"element_id":"{element_id}","version":"{version}","config_id":"{element_id}"}}"#)
}

pub fn radio_module_entry() -> CatalogueEntry {
    CatalogueEntry::new(
        "radio-module",
        "1.0.0",
        DataSheet::default()
            .with(FREQUENCY, Capability::range(415.0, 868.0, "MHz"))
            .with(MODULATION, Capability::set(["FM"]))
            .with(THROUGHPUT, Capability::range(0.0, 50.0, "packets/sec"))
            .with(INTERFERENCE, Capability::range(-30.0, 0.0, "dB")),
        guide(
            "radio-module",
            "1.0.0",
            &["deltaiot-mote", "contiki-ng"],
            "maximum",
            (1.0, 3.0),
        ),
        payload("radio-module", "1.0.0"),
    )
}

pub fn canonical_entries() -> Vec<CatalogueEntry> {
    vec![
        radio_module_entry(),
        CatalogueEntry::new(
            "low-rate-radio",
            "1.0.0",
            DataSheet::default()
                .with(FREQUENCY, Capability::range(433.0, 433.0, "MHz"))
                .with(MODULATION, Capability::set(["FSK"]))
                .with(THROUGHPUT, Capability::range(0.0, 15.0, "packets/sec"))
                .with(INTERFERENCE, Capability::range(-40.0, 0.0, "dB")),
            guide(
                "low-rate-radio",
                "1.0.0",
                &["deltaiot-mote"],
                "medium",
                (2.0, 4.0),
            ),
            payload("low-rate-radio", "1.0.0"),
        ),
        CatalogueEntry::new(
            "mesh-booster",
            "2.1.0",
            DataSheet::default()
                .with(FREQUENCY, Capability::range(2400.0, 2480.0, "MHz"))
                .with(MODULATION, Capability::set(["O-QPSK"]))
                .with(THROUGHPUT, Capability::range(0.0, 60.0, "packets/sec"))
                .with(INTERFERENCE, Capability::range(-25.0, 0.0, "dB")),
            guide(
                "mesh-booster",
                "2.1.0",
                &["lorawan-gateway"],
                "maximum",
                (1.0, 2.0),
            ),
            payload("mesh-booster", "2.1.0"),
        ),
    ]
}

/// Requests of the warehouse wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WarehouseRequest {
    List,
    Query {
        filter: Vec<CapabilityPredicate>,
    },
    Match {
        element_id: String,
        version: String,
        target: EvolutionTarget,
        platform: BTreeSet<String>,
    },
    Fetch {
        element_id: String,
        version: String,
    },
    Publish {
        entry: CatalogueEntry,
    },
}

impl WarehouseRequest {
    pub fn op(&self) -> &'static str {
        match self {
            WarehouseRequest::List => "list",
            WarehouseRequest::Query { .. } => "query",
            WarehouseRequest::Match { .. } => "match",
            WarehouseRequest::Fetch { .. } => "fetch",
            WarehouseRequest::Publish { .. } => "publish",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResponseBody {
    Entries { entries: Vec<CatalogueEntry> },
    Query { result: QueryResult },
    Match { result: MatchResult },
    Fetched { element: FetchedElement },
    Published { element_id: String, version: String },
    Error { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarehouseResponse {
    pub revision: u64,
    #[serde(flatten)]
    pub body: ResponseBody,
}

/// Serves a catalogue to concurrent clients. Publishes are serialized by the
/// write lock.
#[derive(Debug, Default)]
pub struct WarehouseService {
    catalogue: RwLock<Catalogue>,
}

impl WarehouseService {
    pub fn new(catalogue: Catalogue) -> Self {
        Self {
            catalogue: RwLock::new(catalogue),
        }
    }

    pub fn snapshot(&self) -> Catalogue {
        self.catalogue.read().expect("catalogue lock").clone()
    }

    pub fn handle(&self, request: WarehouseRequest) -> WarehouseResponse {
        if let WarehouseRequest::Publish { entry } = request {
            let mut cat = self.catalogue.write().expect("catalogue lock");
            let key = (entry.element_id.clone(), entry.version.clone());
            let body = match cat.publish(entry) {
                Ok(()) => ResponseBody::Published {
                    element_id: key.0,
                    version: key.1,
                },
                Err(e) => error_body(&e),
            };
            return WarehouseResponse {
                revision: cat.revision(),
                body,
            };
        }
        let cat = self.catalogue.read().expect("catalogue lock");
        let body = match request {
            WarehouseRequest::List => ResponseBody::Entries {
                entries: cat.entries().cloned().collect(),
            },
            WarehouseRequest::Query { filter } => ResponseBody::Query {
                result: cat.query(&filter),
            },
            WarehouseRequest::Match {
                element_id,
                version,
                target,
                platform,
            } => match cat.get(&element_id, &version) {
                Some(entry) => ResponseBody::Match {
                    result: match_entry(entry, &target, &platform),
                },
                None => error_body(&WarehouseError::NotFound {
                    element_id,
                    version,
                }),
            },
            WarehouseRequest::Fetch {
                element_id,
                version,
            } => match cat.fetch(&element_id, &version) {
                Ok(element) => ResponseBody::Fetched { element },
                Err(e) => error_body(&e),
            },
            WarehouseRequest::Publish { .. } => unreachable!("handled above"),
        };
        WarehouseResponse {
            revision: cat.revision(),
            body,
        }
    }

    /// Text-in, text-out entry point used by every transport.
    pub fn handle_text(&self, request: &str) -> String {
        let response = match serde_json::from_str::<WarehouseRequest>(request) {
            Ok(req) => self.handle(req),
            Err(e) => WarehouseResponse {
                revision: self.catalogue.read().expect("catalogue lock").revision(),
                body: error_body(&WarehouseError::Protocol(e.to_string())),
            },
        };
        serde_json::to_string(&response).expect("response serializes")
    }
}

fn error_body(e: &WarehouseError) -> ResponseBody {
    ResponseBody::Error {
        code: e.code().into(),
        message: e.to_string(),
    }
}

/// Moves request text to a warehouse and returns the response text.
pub trait WarehouseTransport: Send + Sync {
    fn round_trip(&self, request: &str) -> Result<String, WarehouseError>;
}

impl WarehouseTransport for WarehouseService {
    fn round_trip(&self, request: &str) -> Result<String, WarehouseError> {
        Ok(self.handle_text(request))
    }
}

impl<T: WarehouseTransport + ?Sized> WarehouseTransport for std::sync::Arc<T> {
    fn round_trip(&self, request: &str) -> Result<String, WarehouseError> {
        (**self).round_trip(request)
    }
}

/// Typed client over any transport.
pub struct WarehouseClient<T> {
    transport: T,
}

impl<T: WarehouseTransport> WarehouseClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }

    fn call(&self, request: &WarehouseRequest) -> Result<WarehouseResponse, WarehouseError> {
        let text = serde_json::to_string(request).expect("request serializes");
        let reply = self.transport.round_trip(&text)?;
        let response: WarehouseResponse =
            serde_json::from_str(&reply).map_err(|e| WarehouseError::Protocol(e.to_string()))?;
        if let ResponseBody::Error { code, message } = &response.body {
            return Err(decode_error(code, message, request));
        }
        Ok(response)
    }

    pub fn list(&self) -> Result<Vec<CatalogueEntry>, WarehouseError> {
        match self.call(&WarehouseRequest::List)?.body {
            ResponseBody::Entries { entries } => Ok(entries),
            other => Err(unexpected(other)),
        }
    }

    pub fn query(&self, filter: Vec<CapabilityPredicate>) -> Result<QueryResult, WarehouseError> {
        match self.call(&WarehouseRequest::Query { filter })?.body {
            ResponseBody::Query { result } => Ok(result),
            other => Err(unexpected(other)),
        }
    }

    pub fn match_entry(
        &self,
        element_id: &str,
        version: &str,
        target: &EvolutionTarget,
        platform: &BTreeSet<String>,
    ) -> Result<MatchResult, WarehouseError> {
        let req = WarehouseRequest::Match {
            element_id: element_id.into(),
            version: version.into(),
            target: target.clone(),
            platform: platform.clone(),
        };
        match self.call(&req)?.body {
            ResponseBody::Match { result } => Ok(result),
            other => Err(unexpected(other)),
        }
    }

    /// Fetches an element and re-verifies its checksum on the client side.
    pub fn fetch(&self, element_id: &str, version: &str) -> Result<FetchedElement, WarehouseError> {
        let req = WarehouseRequest::Fetch {
            element_id: element_id.into(),
            version: version.into(),
        };
        match self.call(&req)?.body {
            ResponseBody::Fetched { element } => {
                if checksum(&element.payload) != element.payload_checksum {
                    return Err(WarehouseError::Integrity {
                        element_id: element_id.into(),
                        version: version.into(),
                    });
                }
                Ok(element)
            }
            other => Err(unexpected(other)),
        }
    }

    pub fn publish(&self, entry: CatalogueEntry) -> Result<u64, WarehouseError> {
        let response = self.call(&WarehouseRequest::Publish { entry })?;
        match response.body {
            ResponseBody::Published { .. } => Ok(response.revision),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(body: ResponseBody) -> WarehouseError {
    WarehouseError::Protocol(format!("unexpected response body: {body:?}"))
}

fn decode_error(code: &str, message: &str, request: &WarehouseRequest) -> WarehouseError {
    let (element_id, version) = match request {
        WarehouseRequest::Fetch {
            element_id,
            version,
        }
        | WarehouseRequest::Match {
            element_id,
            version,
            ..
        } => (element_id.clone(), version.clone()),
        WarehouseRequest::Publish { entry } => (entry.element_id.clone(), entry.version.clone()),
        _ => (String::new(), String::new()),
    };
    match code {
        "conflict" => WarehouseError::Conflict {
            element_id,
            version,
        },
        "not_found" => WarehouseError::NotFound {
            element_id,
            version,
        },
        "integrity" => WarehouseError::Integrity {
            element_id,
            version,
        },
        "validation" => WarehouseError::Validation(vec![message.to_string()]),
        "unreachable" => WarehouseError::Unreachable(message.to_string()),
        _ => WarehouseError::Protocol(message.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odd::TargetOrigin;

    fn odd_e() -> EvolutionTarget {
        EvolutionTarget::new(
            vec![Region::new(-20.0, 0.0, 20.0, 40.0).unwrap()],
            TargetOrigin::StakeholderGoal,
            0,
        )
        .unwrap()
    }

    fn platform() -> BTreeSet<String> {
        ["deltaiot-mote".to_string()].into()
    }

    fn with_sheet(id: &str, throughput: (f64, f64), interference: (f64, f64)) -> CatalogueEntry {
        let mut e = radio_module_entry();
        e.element_id = id.into();
        e.data_sheet = e
            .data_sheet
            .with(
                THROUGHPUT,
                Capability::range(throughput.0, throughput.1, "packets/sec"),
            )
            .with(
                INTERFERENCE,
                Capability::range(interference.0, interference.1, "dB"),
            );
        e
    }

    #[test]
    fn publish_then_conflict() {
        let mut cat = Catalogue::new();
        cat.publish(radio_module_entry()).unwrap();
        assert_eq!(cat.len(), 1);
        assert_eq!(cat.revision(), 1);
        assert!(matches!(
            cat.publish(radio_module_entry()),
            Err(WarehouseError::Conflict { .. })
        ));
        assert_eq!(cat.revision(), 1);
    }

    #[test]
    fn publish_requires_platform_tags() {
        let mut e = radio_module_entry();
        e.usage_guide.platform_tags.clear();
        let Err(WarehouseError::Validation(p)) = Catalogue::new().publish(e) else {
            panic!("accepted entry without tags");
        };
        assert!(p[0].contains("platform_tags"));
    }

    #[test]
    fn publish_checks_units_and_defaults() {
        let mut e = radio_module_entry();
        e.data_sheet = e
            .data_sheet
            .with(THROUGHPUT, Capability::range(0.0, 50.0, "kbps"));
        e.usage_guide.configure.insert(
            "power_setting".into(),
            ParamSpec::Choice {
                options: vec!["minimum".into()],
                default: "turbo".into(),
            },
        );
        let Err(WarehouseError::Validation(p)) = Catalogue::new().publish(e) else {
            panic!("accepted invalid entry");
        };
        assert_eq!(p.len(), 2, "{p:?}");
    }

    #[test]
    fn query_examples() {
        let cat = Catalogue::canonical();
        let covers = |cap: &str, lo, hi| CapabilityPredicate::Covers {
            capability: cap.into(),
            range: Interval::new(lo, hi).unwrap(),
        };
        let r = cat.query(&[covers(THROUGHPUT, 20.0, 40.0)]);
        assert!(r.entries.iter().any(|e| e.element_id == "radio-module"));
        assert_eq!(cat.query(&[]).entries.len(), cat.len());
        let r = cat.query(&[covers(INTERFERENCE, -40.0, 0.0)]);
        assert!(r.entries.iter().all(|e| e.element_id != "radio-module"));
        assert_eq!(r.entries.len(), 1);
        let r = cat.query(&[CapabilityPredicate::Includes {
            capability: MODULATION.into(),
            value: "FM".into(),
        }]);
        assert_eq!(r.entries.len(), 1);
    }

    #[test]
    fn query_results_are_ordered_by_id() {
        let r = Catalogue::canonical().query(&[]);
        let ids: Vec<_> = r.entries.iter().map(|e| e.element_id.as_str()).collect();
        assert_eq!(ids, ["low-rate-radio", "mesh-booster", "radio-module"]);
    }

    #[test]
    fn query_with_unknown_capability_warns() {
        let r = Catalogue::canonical().query(&[CapabilityPredicate::Covers {
            capability: "latency".into(),
            range: Interval::new(0.0, 1.0).unwrap(),
        }]);
        assert!(r.entries.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn radio_module_matches_odd_e() {
        let m = match_entry(&radio_module_entry(), &odd_e(), &platform());
        assert!(m.matched, "{:?}", m.failures);
        // throughput: (20-0)+(50-40) = 30; interference: (-20+30)+(0-0) = 10
        assert_eq!(m.margin[THROUGHPUT], 30.0);
        assert_eq!(m.margin[INTERFERENCE], 10.0);
    }

    #[test]
    fn narrow_throughput_fails() {
        let m = match_entry(
            &with_sheet("x", (0.0, 15.0), (-30.0, 0.0)),
            &odd_e(),
            &platform(),
        );
        assert!(!m.matched);
        assert_eq!(m.failures.len(), 1);
        assert_eq!(m.failures[0].capability, THROUGHPUT);
    }

    #[test]
    fn disjoint_platform_fails() {
        let other: BTreeSet<String> = ["lorawan-gateway".to_string()].into();
        let m = match_entry(&radio_module_entry(), &odd_e(), &other);
        assert!(!m.matched);
        assert_eq!(m.failures[0].capability, "platform");
    }

    #[test]
    fn missing_capability_fails() {
        let mut e = radio_module_entry();
        e.data_sheet.capabilities.remove(INTERFERENCE);
        let m = match_entry(&e, &odd_e(), &platform());
        assert_eq!(m.failures[0].capability, INTERFERENCE);
    }

    #[test]
    fn contribution_is_one_box() {
        let r = radio_module_entry().odd_contribution().unwrap();
        assert_eq!(r, Region::new(-30.0, 0.0, 0.0, 50.0).unwrap());
    }

    #[test]
    fn fetch_paths() {
        let mut cat = Catalogue::canonical();
        let f = cat.fetch("radio-module", "1.0.0").unwrap();
        assert_eq!(checksum(&f.payload), f.payload_checksum);
        assert!(matches!(
            cat.fetch("nope", "1.0.0"),
            Err(WarehouseError::NotFound { .. })
        ));
        assert!(matches!(
            cat.fetch("radio-module", "9.9.9"),
            Err(WarehouseError::NotFound { .. })
        ));
        cat.entries
            .get_mut(&("radio-module".to_string(), "1.0.0".to_string()))
            .unwrap()
            .payload
            .push(' ');
        assert!(matches!(
            cat.fetch("radio-module", "1.0.0"),
            Err(WarehouseError::Integrity { .. })
        ));
    }

    #[test]
    fn catalogue_file_round_trip() {
        let cat = Catalogue::canonical();
        let text = cat.to_json();
        let back = Catalogue::from_json(&text).unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn wire_protocol_through_client() {
        let svc = std::sync::Arc::new(WarehouseService::new(Catalogue::canonical()));
        let client = WarehouseClient::new(svc.clone());
        assert_eq!(client.list().unwrap().len(), 3);
        let m = client
            .match_entry("radio-module", "1.0.0", &odd_e(), &platform())
            .unwrap();
        assert!(m.matched);
        assert!(client.fetch("radio-module", "1.0.0").is_ok());
        assert!(matches!(
            client.fetch("radio-module", "2.0.0"),
            Err(WarehouseError::NotFound { .. })
        ));
        let mut e = radio_module_entry();
        e.version = "1.1.0".into();
        assert_eq!(client.publish(e.clone()).unwrap(), 4);
        assert!(matches!(
            client.publish(e),
            Err(WarehouseError::Conflict { .. })
        ));
    }

    #[test]
    fn every_response_carries_revision() {
        let svc = WarehouseService::new(Catalogue::canonical());
        for req in [
            r#"{"op":"list"}"#,
            r#"{"op":"query","filter":[]}"#,
            r#"{"op":"fetch","element_id":"x","version":"1"}"#,
            r#"{"op":"bogus"}"#,
        ] {
            let v: serde_json::Value = serde_json::from_str(&svc.handle_text(req)).unwrap();
            assert_eq!(v["revision"], 3, "{req}");
        }
    }

    #[test]
    fn malformed_request_is_a_protocol_error() {
        let svc = WarehouseService::new(Catalogue::new());
        let v: serde_json::Value = serde_json::from_str(&svc.handle_text("not json")).unwrap();
        assert_eq!(v["status"], "error");
        assert_eq!(v["code"], "protocol");
    }
}
