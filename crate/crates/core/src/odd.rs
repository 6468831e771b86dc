//! Operational design domain model.
//!
//! An ODD is represented extensionally: every configuration of the managed
//! system claims a finite set of axis-aligned boxes over (context, utility),
//! and the system ODD is the union of those boxes. All intervals are closed,
//! so a working point sitting exactly on a boundary is inside.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest interference level a working point may carry, in dB.
pub const CONTEXT_FLOOR_DB: f64 = -60.0;

/// Default coverage grid per target region.
pub const DEFAULT_COVERAGE_GRID: (usize, usize) = (21, 21);

pub const ODD_SCHEMA: &str = "odd-model/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OddError {
    #[error("invalid working point (u={utility}, c={context}): {reason}")]
    InvalidPoint {
        utility: f64,
        context: f64,
        reason: &'static str,
    },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("configuration `{0}` has no regions")]
    EmptyConfiguration(String),
    #[error("configuration `{0}` must have a positive lifetime lower bound")]
    InvalidLifetime(String),
    #[error("configuration id `{0}` already exists in the model")]
    Conflict(String),
    #[error("evolution target has no regions")]
    EmptyTarget,
    #[error("coverage resolution must be at least 2x2, got {0}x{1}")]
    Resolution(usize, usize),
    #[error("malformed ODD document: {0}")]
    Document(String),
}

/// A closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, OddError> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(OddError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `self ⊇ other`.
    pub fn covers(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Multiplies both bounds by a non-negative factor.
    pub fn scale(&self, factor: f64) -> Interval {
        debug_assert!(factor >= 0.0);
        Interval {
            lo: self.lo * factor,
            hi: self.hi * factor,
        }
    }

    /// `n` evenly spaced samples including both endpoints.
    ///
    /// Samples are computed as `lo + (hi - lo) * k / (n - 1)` so that any
    /// sample that is mathematically an integer comes out exactly integral
    /// when the bounds are integers.
    pub fn samples(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let last = n.saturating_sub(1);
        (0..n).map(move |k| {
            if k == last {
                self.hi
            } else {
                self.lo + self.width() * k as f64 / last as f64
            }
        })
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = OddError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// A (utility, context) pair: throughput demand in packets/sec under a
/// network interference level in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct WorkingPoint {
    utility: f64,
    context: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    utility: f64,
    context: f64,
}

impl WorkingPoint {
    pub fn new(utility: f64, context: f64) -> Result<Self, OddError> {
        let err = |reason| OddError::InvalidPoint {
            utility,
            context,
            reason,
        };
        if !utility.is_finite() || !context.is_finite() {
            return Err(err("coordinates must be finite"));
        }
        if utility < 0.0 {
            return Err(err("utility must be non-negative"));
        }
        if !(CONTEXT_FLOOR_DB..=0.0).contains(&context) {
            return Err(err("context must lie in [-60, 0] dB"));
        }
        Ok(Self { utility, context })
    }

    /// Grid samples may come from regions outside the working-point domain.
    pub(crate) fn unchecked(utility: f64, context: f64) -> Self {
        Self { utility, context }
    }

    pub fn utility(&self) -> f64 {
        self.utility
    }

    pub fn context(&self) -> f64 {
        self.context
    }
}

impl TryFrom<RawPoint> for WorkingPoint {
    type Error = OddError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        WorkingPoint::new(raw.utility, raw.context)
    }
}

impl From<WorkingPoint> for RawPoint {
    fn from(p: WorkingPoint) -> Self {
        RawPoint {
            utility: p.utility,
            context: p.context,
        }
    }
}

impl fmt::Display for WorkingPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.utility, self.context)
    }
}

/// Degree of knowledge about a region. Reported, never acted upon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    #[default]
    KnownKnown,
    KnownUnknown,
    UnknownUnknown,
}

/// A closed box `[c_lo, c_hi] × [u_lo, u_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub context: Interval,
    pub utility: Interval,
    #[serde(default)]
    pub knowledge: Knowledge,
}

impl Region {
    pub fn new(c_lo: f64, c_hi: f64, u_lo: f64, u_hi: f64) -> Result<Self, OddError> {
        Ok(Self {
            context: Interval::new(c_lo, c_hi)?,
            utility: Interval::new(u_lo, u_hi)?,
            knowledge: Knowledge::KnownKnown,
        })
    }

    pub fn with_knowledge(mut self, knowledge: Knowledge) -> Self {
        self.knowledge = knowledge;
        self
    }

    pub fn contains(&self, p: &WorkingPoint) -> bool {
        self.context.contains(p.context) && self.utility.contains(p.utility)
    }

    /// `self ⊇ other` on both axes.
    pub fn covers(&self, other: &Region) -> bool {
        self.context.covers(&other.context) && self.utility.covers(&other.utility)
    }

    pub fn corners(&self) -> [WorkingPoint; 4] {
        let (c, u) = (self.context, self.utility);
        [
            WorkingPoint::unchecked(u.lo, c.lo),
            WorkingPoint::unchecked(u.lo, c.hi),
            WorkingPoint::unchecked(u.hi, c.lo),
            WorkingPoint::unchecked(u.hi, c.hi),
        ]
    }

    /// Row-major grid of `n_utility × n_context` sample points.
    pub fn grid(&self, n_utility: usize, n_context: usize) -> Vec<WorkingPoint> {
        let us: Vec<f64> = self.utility.samples(n_utility).collect();
        let cs: Vec<f64> = self.context.samples(n_context).collect();
        us.iter()
            .flat_map(|&u| cs.iter().map(move |&c| WorkingPoint::unchecked(u, c)))
            .collect()
    }

    fn as_box(&self) -> [f64; 4] {
        [
            self.context.lo,
            self.context.hi,
            self.utility.lo,
            self.utility.hi,
        ]
    }
}

/// Membership of a point in a union of regions.
pub fn contains(regions: &[Region], p: &WorkingPoint) -> bool {
    regions.iter().any(|r| r.contains(p))
}

/// The part of the ODD claimed by one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationOdd {
    id: String,
    regions: Vec<Region>,
    lifetime_years: Interval,
}

impl ConfigurationOdd {
    pub fn new(
        id: impl Into<String>,
        regions: Vec<Region>,
        lifetime_years: Interval,
    ) -> Result<Self, OddError> {
        let id = id.into();
        if regions.is_empty() {
            return Err(OddError::EmptyConfiguration(id));
        }
        if lifetime_years.lo() <= 0.0 {
            return Err(OddError::InvalidLifetime(id));
        }
        Ok(Self {
            id,
            regions,
            lifetime_years,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn lifetime_years(&self) -> Interval {
        self.lifetime_years
    }

    pub fn contains(&self, p: &WorkingPoint) -> bool {
        contains(&self.regions, p)
    }

    /// Highest utility this configuration claims at context `c`, or `None`
    /// when no region spans `c`.
    pub fn max_utility_at(&self, c: f64) -> Option<f64> {
        self.regions
            .iter()
            .filter(|r| r.context.contains(c))
            .map(|r| r.utility.hi)
            .fold(None, |acc, u| Some(acc.map_or(u, |a: f64| a.max(u))))
    }
}

/// Immutable, versioned snapshot of the system ODD.
#[derive(Debug, Clone, PartialEq)]
pub struct OddModel {
    configurations: BTreeMap<String, ConfigurationOdd>,
    version: u64,
}

impl OddModel {
    pub fn new(configurations: Vec<ConfigurationOdd>, version: u64) -> Result<Self, OddError> {
        let mut map = BTreeMap::new();
        for cfg in configurations {
            if map.contains_key(&cfg.id) {
                return Err(OddError::Conflict(cfg.id));
            }
            map.insert(cfg.id.clone(), cfg);
        }
        Ok(Self {
            configurations: map,
            version,
        })
    }

    /// The three power settings of the example IoT network.
    pub fn canonical() -> Self {
        let r = |c_lo, c_hi, u_lo, u_hi| Region::new(c_lo, c_hi, u_lo, u_hi).unwrap();
        let years = |lo, hi| Interval::new(lo, hi).unwrap();
        let configs = vec![
            ConfigurationOdd::new("power-min", vec![r(-12.0, 0.0, 0.0, 10.0)], years(5.0, 8.0)),
            ConfigurationOdd::new(
                "power-medium",
                vec![r(-12.0, 0.0, 0.0, 20.0), r(-22.0, -12.0, 0.0, 10.0)],
                years(3.0, 5.0),
            ),
            ConfigurationOdd::new(
                "power-max",
                vec![
                    r(-10.0, 0.0, 0.0, 30.0),
                    r(-22.0, -10.0, 0.0, 20.0),
                    r(-30.0, -22.0, 0.0, 10.0),
                ],
                years(1.0, 3.0),
            ),
        ];
        Self::new(configs.into_iter().map(Result::unwrap).collect(), 1).unwrap()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn configurations(&self) -> impl Iterator<Item = &ConfigurationOdd> {
        self.configurations.values()
    }

    pub fn get(&self, id: &str) -> Option<&ConfigurationOdd> {
        self.configurations.get(id)
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.configurations.values().flat_map(|c| c.regions.iter())
    }

    pub fn contains(&self, p: &WorkingPoint) -> bool {
        self.configurations.values().any(|c| c.contains(p))
    }

    /// Ids of every configuration whose regions contain `p`, in
    /// lexicographic order.
    pub fn satisfying_configs(&self, p: &WorkingPoint) -> Vec<&str> {
        self.configurations
            .values()
            .filter(|c| c.contains(p))
            .map(|c| c.id.as_str())
            .collect()
    }

    /// True when `c` falls inside the context span of at least one region.
    pub fn spans_context(&self, c: f64) -> bool {
        self.regions().any(|r| r.context.contains(c))
    }

    /// `ODD_Se = ODD_Si ∪ ODD_e`: a new snapshot holding every configuration
    /// of `self` plus `extension`, with the version bumped by one.
    pub fn union(&self, extension: Vec<ConfigurationOdd>) -> Result<OddModel, OddError> {
        let mut configurations = self.configurations.clone();
        for cfg in extension {
            if configurations.contains_key(&cfg.id) {
                return Err(OddError::Conflict(cfg.id));
            }
            configurations.insert(cfg.id.clone(), cfg);
        }
        Ok(OddModel {
            configurations,
            version: self.version + 1,
        })
    }

    /// Fraction of the target's grid points that fall inside this model.
    /// Each target region is sampled on its own `n_utility × n_context` grid.
    pub fn coverage(
        &self,
        target: &EvolutionTarget,
        resolution: (usize, usize),
    ) -> Result<CoverageReport, OddError> {
        let (nu, nc) = resolution;
        if nu < 2 || nc < 2 {
            return Err(OddError::Resolution(nu, nc));
        }
        let mut total = 0usize;
        let mut uncovered = Vec::new();
        for region in &target.regions {
            for p in region.grid(nu, nc) {
                total += 1;
                if !self.contains(&p) {
                    uncovered.push(p);
                }
            }
        }
        let fraction = if uncovered.is_empty() {
            1.0
        } else {
            (total - uncovered.len()) as f64 / total as f64
        };
        Ok(CoverageReport {
            fraction,
            uncovered_samples: uncovered,
            grid_resolution: resolution,
        })
    }

    pub fn to_document(&self) -> OddDocument {
        OddDocument {
            schema: ODD_SCHEMA.to_string(),
            version: self.version,
            configurations: self
                .configurations
                .values()
                .map(ConfigurationRecord::from_config)
                .collect(),
        }
    }

    pub fn from_document(doc: OddDocument) -> Result<Self, OddError> {
        if doc.schema != ODD_SCHEMA {
            return Err(OddError::Document(format!(
                "unsupported schema `{}`",
                doc.schema
            )));
        }
        let configs = doc
            .configurations
            .into_iter()
            .map(ConfigurationRecord::into_config)
            .collect::<Result<Vec<_>, _>>()?;
        OddModel::new(configs, doc.version)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("ODD document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OddError> {
        let doc: OddDocument =
            serde_json::from_str(text).map_err(|e| OddError::Document(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// Serialized form of an [`OddModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddDocument {
    pub schema: String,
    pub version: u64,
    pub configurations: Vec<ConfigurationRecord>,
}

/// One configuration in an [`OddDocument`]. Boxes are `[c_lo, c_hi, u_lo, u_hi]`.
/// `box_knowledge` is only present when the boxes carry differing tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigurationRecord {
    pub id: String,
    pub boxes: Vec<[f64; 4]>,
    pub lifetime_years: Interval,
    pub knowledge: Knowledge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_knowledge: Option<Vec<Knowledge>>,
}

impl ConfigurationRecord {
    pub fn from_config(cfg: &ConfigurationOdd) -> Self {
        let tags: Vec<Knowledge> = cfg.regions.iter().map(|r| r.knowledge).collect();
        let knowledge = tags.first().copied().unwrap_or_default();
        let uniform = tags.iter().all(|&t| t == knowledge);
        Self {
            id: cfg.id.clone(),
            boxes: cfg.regions.iter().map(Region::as_box).collect(),
            lifetime_years: cfg.lifetime_years,
            knowledge,
            box_knowledge: (!uniform).then_some(tags),
        }
    }

    pub fn into_config(self) -> Result<ConfigurationOdd, OddError> {
        if let Some(tags) = &self.box_knowledge {
            if tags.len() != self.boxes.len() {
                return Err(OddError::Document(format!(
                    "configuration `{}`: {} boxes but {} knowledge tags",
                    self.id,
                    self.boxes.len(),
                    tags.len()
                )));
            }
        }
        let regions = self
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let tag = self
                    .box_knowledge
                    .as_ref()
                    .map_or(self.knowledge, |tags| tags[i]);
                Region::new(b[0], b[1], b[2], b[3]).map(|r| r.with_knowledge(tag))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ConfigurationOdd::new(self.id, regions, self.lifetime_years)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOrigin {
    StakeholderGoal,
    Anomaly,
    Novelty,
}

/// Region set the evolved system must additionally cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTarget {
    regions: Vec<Region>,
    origin: TargetOrigin,
    created_at: u64,
}

impl EvolutionTarget {
    pub fn new(
        regions: Vec<Region>,
        origin: TargetOrigin,
        created_at: u64,
    ) -> Result<Self, OddError> {
        if regions.is_empty() {
            return Err(OddError::EmptyTarget);
        }
        Ok(Self {
            regions,
            origin,
            created_at,
        })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn origin(&self) -> TargetOrigin {
        self.origin
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    /// Bounding box of every target region.
    pub fn hull(&self) -> Region {
        let first = self.regions[0];
        self.regions.iter().skip(1).fold(first, |acc, r| Region {
            context: acc.context.hull(&r.context),
            utility: acc.utility.hull(&r.utility),
            knowledge: acc.knowledge,
        })
    }

    /// Two targets describe the same area regardless of origin or time.
    pub fn same_area(&self, other: &EvolutionTarget) -> bool {
        self.regions.len() == other.regions.len()
            && self
                .regions
                .iter()
                .zip(&other.regions)
                .all(|(a, b)| a.context == b.context && a.utility == b.utility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub fraction: f64,
    pub uncovered_samples: Vec<WorkingPoint>,
    pub grid_resolution: (usize, usize),
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.uncovered_samples.is_empty()
    }
}
