//! Human guidance: operator commands and the shared read model behind the
//! service endpoints.
//!
//! Commands are validated on submission and queued; the runner drains the
//! queue at the next tick boundary. Readers only ever take short read locks
//! on snapshots the runner publishes once per tick.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::EventRecord;
use crate::odd::{OddModel, Region, WorkingPoint};

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[error("invalid command: {message}")]
pub struct ValidationError {
    pub message: String,
}

impl ValidationError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSubject {
    Trigger,
    Enactment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceCommand {
    AddGoal {
        description: String,
        regions: Vec<Region>,
    },
    AddEvolutionTarget {
        regions: Vec<Region>,
    },
    Approve,
    Feedback {
        subject: FeedbackSubject,
        verdict: Verdict,
        #[serde(default)]
        note: String,
    },
}

impl GuidanceCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            GuidanceCommand::AddGoal { .. } => "add_goal",
            GuidanceCommand::AddEvolutionTarget { .. } => "add_evolution_target",
            GuidanceCommand::Approve => "approve",
            GuidanceCommand::Feedback { .. } => "feedback",
        }
    }

    /// Regions of a goal or evolution target command.
    pub fn target_regions(&self) -> Option<&[Region]> {
        match self {
            GuidanceCommand::AddGoal { regions, .. }
            | GuidanceCommand::AddEvolutionTarget { regions } => Some(regions),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedCommand {
    pub id: u64,
    pub issued_at: u64,
    pub command: GuidanceCommand,
}

/// What the read endpoints report about the running system.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// Next tick to execute.
    pub tick: u64,
    pub working_point: Option<WorkingPoint>,
    pub config: String,
    pub safe_state: bool,
    pub odd_version: u64,
    pub pending_approval: bool,
    pub last_seq: Option<u64>,
    pub finished: bool,
}

#[derive(Debug)]
pub struct GuidanceHub {
    snapshot: RwLock<StateSnapshot>,
    odd: RwLock<Arc<OddModel>>,
    events: RwLock<Vec<EventRecord>>,
    queue: Mutex<VecDeque<QueuedCommand>>,
    next_id: AtomicU64,
    paused: AtomicBool,
}

impl GuidanceHub {
    pub fn new(odd: Arc<OddModel>, snapshot: StateSnapshot) -> Self {
        Self {
            snapshot: RwLock::new(snapshot),
            odd: RwLock::new(odd),
            events: RwLock::new(Vec::new()),
            queue: Mutex::new(VecDeque::new()),
            next_id: AtomicU64::new(0),
            paused: AtomicBool::new(false),
        }
    }

    /// Validates and queues a command, returning its id. Nothing changes on
    /// a validation error.
    pub fn submit(&self, command: GuidanceCommand) -> Result<u64, ValidationError> {
        let snapshot = self.state();
        match &command {
            GuidanceCommand::AddGoal {
                regions,
                description,
            } => {
                if description.trim().is_empty() {
                    return Err(ValidationError::new(
                        "add_goal: description must be non-empty",
                    ));
                }
                if regions.is_empty() {
                    return Err(ValidationError::new(
                        "add_goal: at least one region required",
                    ));
                }
            }
            GuidanceCommand::AddEvolutionTarget { regions } => {
                if regions.is_empty() {
                    return Err(ValidationError::new(
                        "add_evolution_target: at least one region required",
                    ));
                }
            }
            GuidanceCommand::Approve => {
                if !snapshot.pending_approval {
                    return Err(ValidationError::new(
                        "approve: no enactment is awaiting approval",
                    ));
                }
            }
            GuidanceCommand::Feedback { .. } => {}
        }
        let mut queue = self.queue.lock().expect("command queue");
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        queue.push_back(QueuedCommand {
            id,
            issued_at: snapshot.tick,
            command,
        });
        Ok(id)
    }

    /// Parses a command body and submits it.
    pub fn submit_json(&self, body: &str) -> Result<u64, ValidationError> {
        let command: GuidanceCommand =
            serde_json::from_str(body).map_err(|e| ValidationError::new(e.to_string()))?;
        self.submit(command)
    }

    /// Takes every queued command, oldest first.
    pub fn drain(&self) -> Vec<QueuedCommand> {
        self.queue
            .lock()
            .expect("command queue")
            .drain(..)
            .collect()
    }

    pub fn pending_commands(&self) -> usize {
        self.queue.lock().expect("command queue").len()
    }

    pub fn state(&self) -> StateSnapshot {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn odd(&self) -> Arc<OddModel> {
        self.odd.read().expect("odd lock").clone()
    }

    /// Records with `seq >= from`, in order.
    pub fn events_from(&self, from: u64) -> Vec<EventRecord> {
        let events = self.events.read().expect("events lock");
        let start = (from as usize).min(events.len());
        events[start..].to_vec()
    }

    pub fn event_count(&self) -> u64 {
        self.events.read().expect("events lock").len() as u64
    }

    pub fn pause(&self) {
        self.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.paused.store(false, Ordering::SeqCst);
    }

    pub fn is_paused(&self) -> bool {
        self.paused.load(Ordering::SeqCst)
    }

    /// Called by the runner once per tick boundary.
    pub fn publish(
        &self,
        snapshot: StateSnapshot,
        odd: &Arc<OddModel>,
        new_events: &[EventRecord],
    ) {
        if !new_events.is_empty() {
            self.events
                .write()
                .expect("events lock")
                .extend_from_slice(new_events);
        }
        {
            let mut current = self.odd.write().expect("odd lock");
            if current.version() != odd.version() {
                *current = odd.clone();
            }
        }
        *self.snapshot.write().expect("snapshot lock") = snapshot;
    }
}
