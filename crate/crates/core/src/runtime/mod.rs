//! Runtime isolation enforcement: the IPC broker, isolated/ephemeral
//! process lifecycle, the TTL-bounded ephemeral store, and user/app control
//! toggles.
//!
//! The runtime is one logical state machine per simulated device; callers
//! serialize through it. Time is simulated and advanced only by the fleet
//! scheduler.

pub mod process;
pub mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{AssociationSet, DataDescriptor, PackageId, PackageManifest, Permission};

pub use process::{IsolatedProcessSpec, ProcessHandle, ProcessTable};
pub use store::{EphemeralRecord, EphemeralStore, RecordId, TimeRange, DEFAULT_TTL_MS};

/// Platform-proxied calls per package per simulated minute.
pub const FRAMEWORK_API_RATE_LIMIT: u32 = 100;
const RATE_WINDOW_MS: u64 = 60_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("record {0:?} not found")]
    NotFound(RecordId),
    #[error("record {0:?} has expired")]
    Expired(RecordId),
    #[error("ttl must be positive")]
    NonPositiveTtl,
    #[error("locus id presence does not match source {data_source:?}")]
    LocusMismatch { data_source: crate::policy::DataSource },
    #[error("locus id must be non-empty")]
    EmptyLocus,
    #[error("inverted interval [{start}, {end}]")]
    InvertedInterval { start: u64, end: u64 },
    #[error("ephemeral process with zero lifetime")]
    DegenerateLifetime,
    #[error("stale or unknown process handle")]
    InvalidHandle,
    #[error("clock may not move backwards")]
    ClockRegression,
    #[error("package {0} is not registered")]
    UnregisteredPackage(PackageId),
    #[error("{0}")]
    CategoryDiscipline(String),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IpcKind {
    BindService,
    ContentProvider,
    BroadcastIntent,
    /// Calls proxied by the platform: bypass association checks but are
    /// rate limited.
    FrameworkApi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpcRequest {
    pub src: PackageId,
    pub dst: PackageId,
    pub kind: IpcKind,
    pub payload_descriptor: Option<DataDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IpcDenyReason {
    UnknownPackage,
    NoAssociation,
    RateLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpcDecision {
    Allow,
    Deny(IpcDenyReason),
}

/// User and admin control toggles for one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlState {
    pub personalize_using_app_data: bool,
    pub mic_enabled: bool,
    pub camera_enabled: bool,
    pub revoked_runtime_permissions: BTreeSet<Permission>,
    pub screen_capture_policy_disabled: bool,
}

impl Default for ControlState {
    fn default() -> Self {
        ControlState {
            personalize_using_app_data: true,
            mic_enabled: true,
            camera_enabled: true,
            revoked_runtime_permissions: BTreeSet::new(),
            screen_capture_policy_disabled: false,
        }
    }
}

/// One adjudicated boundary crossing, in audit-log field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpcAuditEvent {
    pub t: u64,
    pub kind: IpcKind,
    pub src: PackageId,
    pub dst: PackageId,
    pub decision: String,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IpcAuditLog {
    events: Vec<IpcAuditEvent>,
}

impl IpcAuditLog {
    pub fn events(&self) -> &[IpcAuditEvent] {
        &self.events
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("audit event serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Default)]
struct RateWindow {
    window_start: u64,
    count: u32,
}

/// The per-device runtime mediator.
#[derive(Debug, Default)]
pub struct Runtime {
    now: u64,
    manifests: BTreeMap<PackageId, PackageManifest>,
    assoc: AssociationSet,
    pub store: EphemeralStore,
    pub processes: ProcessTable,
    pub controls: ControlState,
    audit: IpcAuditLog,
    rate: HashMap<PackageId, RateWindow>,
}

impl Runtime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Advances simulated time, rotating ephemeral processes on the way.
    pub fn advance_to(&mut self, t: u64) -> Result<(), RuntimeError> {
        if t < self.now {
            return Err(RuntimeError::ClockRegression);
        }
        self.now = t;
        self.processes.rotate(t);
        Ok(())
    }

    pub fn register_package(&mut self, manifest: PackageManifest) {
        self.manifests.insert(manifest.package.clone(), manifest);
    }

    pub fn manifest(&self, pkg: &PackageId) -> Option<&PackageManifest> {
        self.manifests.get(pkg)
    }

    pub fn set_association_rules(&mut self, assoc: AssociationSet) {
        self.assoc = assoc;
    }

    pub fn audit(&self) -> &IpcAuditLog {
        &self.audit
    }

    /// Adjudicates an IPC request. Every decision, allow or deny, appends
    /// exactly one audit event.
    pub fn adjudicate_ipc(&mut self, req: &IpcRequest) -> IpcDecision {
        let decision = self.decide_ipc(req);
        let (decision_str, reason) = match decision {
            IpcDecision::Allow => ("Allow".to_string(), None),
            IpcDecision::Deny(r) => ("Deny".to_string(), Some(format!("{r:?}"))),
        };
        self.audit.events.push(IpcAuditEvent {
            t: self.now,
            kind: req.kind,
            src: req.src.clone(),
            dst: req.dst.clone(),
            decision: decision_str,
            reason,
        });
        decision
    }

    fn decide_ipc(&mut self, req: &IpcRequest) -> IpcDecision {
        if !self.manifests.contains_key(&req.src) || !self.manifests.contains_key(&req.dst) {
            return IpcDecision::Deny(IpcDenyReason::UnknownPackage);
        }
        if req.kind == IpcKind::FrameworkApi {
            let window = self.rate.entry(req.src.clone()).or_default();
            if self.now >= window.window_start + RATE_WINDOW_MS {
                window.window_start = self.now - self.now % RATE_WINDOW_MS;
                window.count = 0;
            }
            if window.count >= FRAMEWORK_API_RATE_LIMIT {
                return IpcDecision::Deny(IpcDenyReason::RateLimited);
            }
            window.count += 1;
            return IpcDecision::Allow;
        }
        if self.assoc.allows(&req.src, &req.dst) {
            IpcDecision::Allow
        } else {
            IpcDecision::Deny(IpcDenyReason::NoAssociation)
        }
    }

    pub fn spawn_isolated(
        &mut self,
        spec: IsolatedProcessSpec,
    ) -> Result<ProcessHandle, RuntimeError> {
        if !self.manifests.contains_key(&spec.owner) {
            return Err(RuntimeError::UnregisteredPackage(spec.owner));
        }
        self.processes.spawn(spec, self.now)
    }
}
