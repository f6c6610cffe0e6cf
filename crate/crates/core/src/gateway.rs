//! The sandbox's sole egress boundary: a policy-checked gate in front of
//! three network channels (federated compute, private retrieval, and a
//! digest-pinned download-only transport) plus the device-local framework
//! surface. Every decision is audited; raw-category data never passes a
//! network channel no matter what any policy file says.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{DataCategory, DataDescriptor, DataSource, PackageId, PackageManifest};
use crate::runtime::{ControlState, EphemeralStore};
use crate::secagg::{
    run_session, Round, SecAggConfig, SecAggError, SessionOutcome,
};
use crate::crypto::KxGroup;

/// Default anonymity cohort minimum; individual policies may override.
pub const DEFAULT_K: u64 = 100;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("bad policy document: {0}")]
    BadPolicy(String),
    #[error("bad download manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    FederatedCompute,
    PirQuery,
    DownloadOnly,
    /// Device-local presentation to the user; never leaves the device.
    FrameworkSurface,
}

impl Channel {
    pub fn is_network(self) -> bool {
        !matches!(self, Channel::FrameworkSurface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    UnknownPolicy,
    NotSandboxed,
    NoInternet,
    Category,
    Channel,
    KAnonymity,
    NotAllowlisted,
    DigestMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Allow,
    Deny(DenyReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgressRequest {
    pub requester: PackageId,
    pub descriptor: DataDescriptor,
    pub channel: Channel,
    pub payload: Vec<u8>,
    pub policy_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressPolicy {
    pub policy_id: String,
    pub allowed_categories: Vec<DataCategory>,
    pub allowed_channels: Vec<Channel>,
    #[serde(default = "default_k")]
    pub k: u64,
    #[serde(default)]
    pub notes: String,
}

fn default_k() -> u64 {
    DEFAULT_K
}

impl EgressPolicy {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::BadPolicy(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub uri: String,
    /// Lowercase hex sha256 of the expected bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DownloadManifest {
    entries: Vec<ManifestEntry>,
}

impl DownloadManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DownloadManifest { entries }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(text).map_err(|e| GatewayError::BadManifest(e.to_string()))?;
        Ok(DownloadManifest { entries })
    }

    /// Exact-string uri lookup; no normalization, so query strings and
    /// fragments never smuggle parameters past the allowlist.
    pub fn digest_for(&self, uri: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.uri == uri).map(|e| e.sha256.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayAuditEvent {
    pub t: u64,
    pub requester: PackageId,
    pub channel: Channel,
    /// Data category of the gated payload; absent for download fetches,
    /// which carry no sandbox data at all.
    #[serde(default)]
    pub category: Option<DataCategory>,
    pub decision: String,
    pub reason: Option<DenyReason>,
    pub bytes_out: u64,
    pub bytes_in: u64,
    /// Set when the user explicitly authorized this release.
    #[serde(default)]
    pub user_action: bool,
}

/// True iff at least `k` cohort members share `value`.
pub fn check_k_anonymity(value: &[u8], histogram: &BTreeMap<Vec<u8>, u64>, k: u64) -> bool {
    histogram.get(value).copied().unwrap_or(0) >= k
}

#[derive(Debug, Default)]
pub struct Gateway {
    policies: BTreeMap<String, EgressPolicy>,
    pub download_manifest: DownloadManifest,
    audit: Vec<GatewayAuditEvent>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install_policy(&mut self, policy: EgressPolicy) {
        self.policies.insert(policy.policy_id.clone(), policy);
    }

    pub fn policy(&self, id: &str) -> Option<&EgressPolicy> {
        self.policies.get(id)
    }

    pub fn audit(&self) -> &[GatewayAuditEvent] {
        &self.audit
    }

    pub fn audit_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.audit {
            out.push_str(&serde_json::to_string(e).expect("audit event serializes"));
            out.push('\n');
        }
        out
    }

    fn record(
        &mut self,
        t: u64,
        requester: &PackageId,
        channel: Channel,
        category: Option<DataCategory>,
        decision: GateDecision,
        bytes_out: u64,
        bytes_in: u64,
    ) -> GateDecision {
        let (d, reason, out, inn) = match decision {
            GateDecision::Allow => ("Allow".to_string(), None, bytes_out, bytes_in),
            GateDecision::Deny(r) => ("Deny".to_string(), Some(r), 0, 0),
        };
        self.audit.push(GatewayAuditEvent {
            t,
            requester: requester.clone(),
            channel,
            category,
            decision: d,
            reason,
            bytes_out: out,
            bytes_in: inn,
            user_action: false,
        });
        decision
    }

    /// Adjudicates one egress request. `cohort` is the fleet's ground-truth
    /// population histogram used for the k-anonymity check on metadata.
    pub fn gate(
        &mut self,
        request: &EgressRequest,
        manifests: &BTreeMap<PackageId, PackageManifest>,
        cohort: &BTreeMap<Vec<u8>, u64>,
        now: u64,
    ) -> GateDecision {
        let decision = self.decide(request, manifests, cohort);
        self.record(
            now,
            &request.requester,
            request.channel,
            Some(request.descriptor.category),
            decision,
            request.payload.len() as u64,
            0,
        )
    }

    /// Like [`Gateway::gate`] but marks the audit event as an explicit
    /// user-authorized release (a tap on a rendered suggestion).
    pub fn gate_user_action(
        &mut self,
        request: &EgressRequest,
        manifests: &BTreeMap<PackageId, PackageManifest>,
        cohort: &BTreeMap<Vec<u8>, u64>,
        now: u64,
    ) -> GateDecision {
        let decision = self.gate(request, manifests, cohort, now);
        if decision == GateDecision::Allow {
            self.audit.last_mut().expect("gate just audited").user_action = true;
        }
        decision
    }

    fn decide(
        &self,
        request: &EgressRequest,
        manifests: &BTreeMap<PackageId, PackageManifest>,
        cohort: &BTreeMap<Vec<u8>, u64>,
    ) -> GateDecision {
        let Some(policy) = self.policies.get(&request.policy_id) else {
            return GateDecision::Deny(DenyReason::UnknownPolicy);
        };
        let Some(manifest) = manifests.get(&request.requester) else {
            return GateDecision::Deny(DenyReason::NotSandboxed);
        };
        if !manifest.in_pcc {
            return GateDecision::Deny(DenyReason::NotSandboxed);
        }
        if manifest.permissions.iter().any(|p| p.name == crate::policy::INTERNET_PERMISSION) {
            return GateDecision::Deny(DenyReason::NoInternet);
        }
        // The raw-category rule is code, not configuration.
        if request.channel.is_network() && request.descriptor.category == DataCategory::Raw {
            return GateDecision::Deny(DenyReason::Category);
        }
        if !policy.allowed_categories.contains(&request.descriptor.category) {
            return GateDecision::Deny(DenyReason::Category);
        }
        if !policy.allowed_channels.contains(&request.channel) {
            return GateDecision::Deny(DenyReason::Channel);
        }
        if request.channel.is_network()
            && request.descriptor.category == DataCategory::Metadata
            && !check_k_anonymity(&request.payload, cohort, policy.k)
        {
            return GateDecision::Deny(DenyReason::KAnonymity);
        }
        GateDecision::Allow
    }

    /// Downloads an allowlisted resource. The interface carries no request
    /// body: the uri is the entire outbound message, so nothing from the
    /// sandbox can ride along.
    pub fn fetch_model(
        &mut self,
        requester: &PackageId,
        uri: &str,
        server: &BTreeMap<String, Vec<u8>>,
        now: u64,
    ) -> Result<Vec<u8>, DenyReason> {
        let Some(expected) = self.download_manifest.digest_for(uri).map(str::to_owned) else {
            self.record(
                now,
                requester,
                Channel::DownloadOnly,
                None,
                GateDecision::Deny(DenyReason::NotAllowlisted),
                0,
                0,
            );
            return Err(DenyReason::NotAllowlisted);
        };
        let served = server.get(uri).cloned().unwrap_or_default();
        if sha256_hex(&served) != expected {
            self.record(
                now,
                requester,
                Channel::DownloadOnly,
                None,
                GateDecision::Deny(DenyReason::DigestMismatch),
                0,
                0,
            );
            return Err(DenyReason::DigestMismatch);
        }
        self.record(
            now,
            requester,
            Channel::DownloadOnly,
            None,
            GateDecision::Allow,
            uri.len() as u64,
            served.len() as u64,
        );
        Ok(served)
    }
}

/// A federated analytics task over app-launch histograms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaTask {
    pub task_id: String,
    /// Histogram dimension: app slots 0..d.
    pub d: usize,
    /// An app column participates only if at least this many contributing
    /// devices launched it.
    pub popularity_threshold: u64,
    pub policy_id: String,
    /// Secure aggregation reconstruction threshold.
    pub secagg_t: usize,
    pub seed: u64,
    pub group: KxGroup,
    /// Devices (by participant index) whose messages are lost from the
    /// given round onward.
    pub drops: BTreeMap<u32, Round>,
}

/// One device offered to an FA task.
pub struct FaParticipant<'a> {
    pub index: u32,
    pub package: PackageId,
    pub store: &'a EphemeralStore,
    pub controls: &'a ControlState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaOutcome {
    Aggregate(Vec<u64>),
    Aborted { survivors: usize, need: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaReport {
    pub task_id: String,
    pub included: Vec<u32>,
    pub excluded: Vec<(u32, String)>,
    /// Which app columns met the popularity threshold.
    pub popular: Vec<bool>,
    pub outcome: FaOutcome,
    pub dropout_reconstructions: usize,
    /// Constructive check that no raw per-device vector appears in the
    /// protocol transcript.
    pub per_device_isolated: bool,
}

fn local_vector(store: &EphemeralStore, d: usize, now: u64) -> Vec<u64> {
    let mut v = vec![0u64; d];
    for record in store.live_records(now) {
        if record.descriptor.source != DataSource::AppLaunches || record.payload.len() < 4 {
            continue;
        }
        let slot = u32::from_le_bytes(record.payload[..4].try_into().unwrap()) as usize;
        if slot < d {
            v[slot] += 1;
        }
    }
    v
}

fn encode_vector(v: &[u64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

impl Gateway {
    /// Runs a federated analytics round: gates each device's participation,
    /// restricts columns to popular apps, aggregates through secure
    /// aggregation, and reports only the aggregate.
    pub fn run_fa_task(
        &mut self,
        task: &FaTask,
        participants: &[FaParticipant],
        manifests: &BTreeMap<PackageId, PackageManifest>,
        now: u64,
    ) -> Result<FaReport, GatewayError> {
        let mut included: Vec<u32> = Vec::new();
        let mut excluded: Vec<(u32, String)> = Vec::new();
        let mut vectors: Vec<Vec<u64>> = Vec::new();
        let cohort = BTreeMap::new();
        for p in participants {
            if !p.controls.personalize_using_app_data {
                excluded.push((p.index, "UserControl".to_string()));
                continue;
            }
            let descriptor = DataDescriptor::new(
                DataCategory::Derived,
                crate::policy::DataClass::Structured,
                DataSource::AppLaunches,
                p.package.clone(),
            )
            .expect("taxonomy row");
            let vector = local_vector(p.store, task.d, now);
            let request = EgressRequest {
                requester: p.package.clone(),
                descriptor,
                channel: Channel::FederatedCompute,
                payload: encode_vector(&vector),
                policy_id: task.policy_id.clone(),
            };
            match self.gate(&request, manifests, &cohort, now) {
                GateDecision::Allow => {
                    included.push(p.index);
                    vectors.push(vector);
                }
                GateDecision::Deny(reason) => {
                    excluded.push((p.index, format!("{reason:?}")));
                }
            }
        }

        // Popularity is measured across contributing devices: a column
        // stays only if enough of them launched that app at all.
        let mut popular = vec![false; task.d];
        for (col, flag) in popular.iter_mut().enumerate() {
            let devices_with_app = vectors.iter().filter(|v| v[col] > 0).count() as u64;
            *flag = devices_with_app >= task.popularity_threshold;
        }
        for v in &mut vectors {
            for (col, x) in v.iter_mut().enumerate() {
                if !popular[col] {
                    *x = 0;
                }
            }
        }

        let n = included.len();
        let mut cfg = SecAggConfig::new(n.max(1), task.secagg_t.min(n.max(1)), task.d)
            .map_err(GatewayError::SecAgg)?;
        cfg.t = task.secagg_t;
        cfg.group = task.group;
        if task.secagg_t > n {
            return Ok(FaReport {
                task_id: task.task_id.clone(),
                included,
                excluded,
                popular,
                outcome: FaOutcome::Aborted { survivors: n, need: task.secagg_t },
                dropout_reconstructions: 0,
                per_device_isolated: true,
            });
        }
        cfg.n = n;
        let drops: BTreeMap<u32, Round> = task
            .drops
            .iter()
            .filter_map(|(device, round)| {
                included.iter().position(|&i| i == *device).map(|pos| (pos as u32, *round))
            })
            .collect();
        let session = run_session(&cfg, &vectors, &drops, task.seed)?;
        let per_device_isolated = vectors
            .iter()
            .all(|v| {
                let needle = encode_vector(v);
                v.iter().all(|&x| x == 0)
                    || !session
                        .transcript
                        .windows(needle.len())
                        .any(|w| w == needle.as_slice())
            });
        let outcome = match session.outcome {
            SessionOutcome::Sum(sum) => FaOutcome::Aggregate(sum),
            SessionOutcome::Aborted { survivors, need, .. } => {
                FaOutcome::Aborted { survivors, need }
            }
        };
        Ok(FaReport {
            task_id: task.task_id.clone(),
            included,
            excluded,
            popular,
            outcome,
            dropout_reconstructions: session.dropout_reconstructions,
            per_device_isolated,
        })
    }
}
