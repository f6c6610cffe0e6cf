//! Deterministic fleet simulator: loads a scenario document, replays its
//! event timeline over a set of simulated devices sharing one gateway,
//! runs the scheduled federated analytics tasks, and evaluates the
//! scenario's assertions into a run report.
//!
//! Two runs of the same scenario with the same seed produce byte-identical
//! reports. All randomness is derived from the scenario seed via labeled
//! SHA-256 domains; all maps are ordered.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{he_keygen, HeKeypair, KxGroup};
use crate::features::{
    delegated_render, keystroke_filter, live_caption, screen_attention, smart_reply_suggest,
    DimOutcome, KeystrokeFilterState, DEFAULT_FREEZE_THRESHOLD,
};
use crate::gateway::{
    sha256_hex, Channel, DenyReason, DownloadManifest, EgressPolicy, EgressRequest, FaParticipant,
    FaReport, FaTask, GateDecision, Gateway, GatewayAuditEvent, GatewayError, ManifestEntry,
};
use crate::pir::{answer, build_query, decode, PirDatabase, PirError, DEFAULT_LIMB_SIZE};
use crate::policy::{
    parse_association_config, AssociationSet, DataCategory, DataClass, DataDescriptor, DataSource,
    PackageId, PackageManifest, PolicyError,
};
use crate::runtime::{ControlState, Runtime, RuntimeError};
use crate::secagg::Round;
use crate::sources::{
    ingest_ambient, ingest_content_capture, ingest_share_data, AudioFrame, CameraFrame,
    ContentCaptureEvent,
};

/// Package id of the simulated sandbox apk, registered on every device
/// that does not ship its own in-sandbox package.
pub const SANDBOX_PACKAGE: &str = "com.google.android.as";

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("scenario load failed: {0}")]
    Load(String),
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pir(#[from] PirError),
}

/// One user-control knob, addressable from scenario events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKnob {
    PersonalizeUsingAppData,
    MicEnabled,
    CameraEnabled,
    ScreenCapturePolicyDisabled,
}

fn default_freeze() -> usize {
    DEFAULT_FREEZE_THRESHOLD
}

/// A timestamped device action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ContentCapture {
        event: ContentCaptureEvent,
    },
    ShareData {
        app: PackageId,
        locus_id: String,
        #[serde(with = "crate::b64")]
        payload: Vec<u8>,
    },
    AppLaunch {
        app: PackageId,
        slot: u32,
    },
    SetControl {
        control: ControlKnob,
        value: bool,
    },
    SmartReply {
        allowlist: Vec<PackageId>,
        #[serde(default = "default_freeze")]
        freeze_threshold: usize,
        #[serde(default)]
        keystrokes: String,
        #[serde(default)]
        taps: Vec<usize>,
        policy_id: String,
    },
    LiveCaption {
        enabled: bool,
        frames: Vec<AudioFrame>,
        #[serde(default)]
        model_uri: Option<String>,
    },
    ScreenAttention {
        opted_in: bool,
        frames: Vec<CameraFrame>,
        dim_time: u64,
    },
    PirFetch {
        record: String,
        policy_id: String,
    },
    FetchModel {
        uri: String,
    },
    EgressAttempt {
        category: DataCategory,
        class: DataClass,
        data_source: DataSource,
        app: PackageId,
        channel: Channel,
        #[serde(with = "crate::b64")]
        payload: Vec<u8>,
        policy_id: String,
    },
    DeleteLocus {
        locus_id: String,
    },
    ClearData {
        #[serde(default)]
        start: Option<u64>,
        #[serde(default)]
        end: Option<u64>,
    },
}

impl EventKind {
    fn policy_id(&self) -> Option<&str> {
        match self {
            EventKind::SmartReply { policy_id, .. }
            | EventKind::PirFetch { policy_id, .. }
            | EventKind::EgressAttempt { policy_id, .. } => Some(policy_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    #[serde(default)]
    pub packages: Vec<PackageManifest>,
    #[serde(default)]
    pub controls: ControlState,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl DeviceSpec {
    fn events(&self) -> &[Event] {
        &self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupSpec {
    Modp2048,
    Fast61,
}

impl From<GroupSpec> for KxGroup {
    fn from(g: GroupSpec) -> KxGroup {
        match g {
            GroupSpec::Modp2048 => KxGroup::Modp2048,
            GroupSpec::Fast61 => KxGroup::Fast61,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundSpec {
    Advertise,
    ShareKeys,
    MaskedInput,
    Unmask,
}

impl From<RoundSpec> for Round {
    fn from(r: RoundSpec) -> Round {
        match r {
            RoundSpec::Advertise => Round::Advertise,
            RoundSpec::ShareKeys => Round::ShareKeys,
            RoundSpec::MaskedInput => Round::MaskedInput,
            RoundSpec::Unmask => Round::Unmask,
        }
    }
}

/// A federated analytics task scheduled after the event timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaTaskSpec {
    pub task_id: String,
    pub d: usize,
    pub popularity_threshold: u64,
    pub policy_id: String,
    pub secagg_t: usize,
    #[serde(default = "default_group")]
    pub group: GroupSpec,
    /// Participant index -> the round from which its messages are lost.
    #[serde(default)]
    pub drops: BTreeMap<u32, RoundSpec>,
}

fn default_group() -> GroupSpec {
    GroupSpec::Fast61
}

fn default_pir_bits() -> u32 {
    crate::crypto::paillier::DEFAULT_MODULUS_BITS
}

/// Server-side configuration: installed policies, the download allowlist
/// and file contents, the PIR database, and scheduled FA tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    #[serde(default)]
    pub policies: Vec<EgressPolicy>,
    #[serde(default)]
    pub download_manifest: Vec<ManifestEntry>,
    /// uri -> base64 file bytes actually served.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    /// Allow-association config document text.
    #[serde(default)]
    pub associations: String,
    /// PIR record name -> base64 payload.
    #[serde(default)]
    pub pir_records: BTreeMap<String, String>,
    #[serde(default = "default_pir_bits")]
    pub pir_modulus_bits: u32,
    /// Extra population counts (base64 payload -> count) merged into the
    /// k-anonymity cohort histogram on top of the scenario's own attempts.
    #[serde(default)]
    pub cohort: BTreeMap<String, u64>,
    #[serde(default)]
    pub fa_tasks: Vec<FaTaskSpec>,
}

impl Default for ServerSpec {
    fn default() -> Self {
        ServerSpec {
            policies: Vec::new(),
            download_manifest: Vec::new(),
            files: BTreeMap::new(),
            associations: String::new(),
            pir_records: BTreeMap::new(),
            pir_modulus_bits: default_pir_bits(),
            cohort: BTreeMap::new(),
            fa_tasks: Vec::new(),
        }
    }
}

/// A checkable claim about the finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Assertion {
    /// No raw-category payload was allowed out on any network channel.
    NoRawEgress,
    FaAggregate { task_id: String, expected: Vec<u64> },
    FaAborted { task_id: String },
    ReplyCandidates { device: usize, expected: Vec<String> },
    CaptionLines { device: usize, expected: Vec<String> },
    /// expected is "Postpone" or "Dim".
    DimOutcome { device: usize, expected: String },
    DenyCount { reason: DenyReason, expected: u64 },
    /// expected is the base64 record payload.
    PirResult { device: usize, record: String, expected: String },
    NoGatewayEventsFrom { package: PackageId },
}

/// One injected message loss: the device's FA messages are withheld from
/// the given round onward, for one task or (task_id omitted) all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub device: u32,
    pub round: RoundSpec,
    #[serde(default)]
    pub task_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub server: ServerSpec,
    #[serde(default)]
    pub dropout_schedule: Vec<DropoutSpec>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    /// SHA-256 of the source document; set by the loader, not the document.
    #[serde(skip)]
    pub config_hash: String,
}

fn b64_decode(field: &str, text: &str) -> Result<Vec<u8>, FleetError> {
    BASE64
        .decode(text.as_bytes())
        .map_err(|e| FleetError::Invalid(format!("{field}: bad base64: {e}")))
}

/// Parses and validates a scenario document. Deserialization errors carry
/// the JSON pointer of the offending field.
pub fn load_scenario(text: &str) -> Result<Scenario, FleetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de)
        .map_err(|e| FleetError::Load(format!("{}: {}", e.path(), e.inner())))?;
    scenario.config_hash = sha256_hex(text.as_bytes());
    validate(&scenario)?;
    Ok(scenario)
}

fn validate(scenario: &Scenario) -> Result<(), FleetError> {
    if scenario.devices.is_empty() {
        return Err(FleetError::Invalid("scenario has no devices".into()));
    }
    if scenario.server.pir_modulus_bits < 64 {
        return Err(FleetError::Invalid(format!(
            "pir_modulus_bits {} below minimum 64",
            scenario.server.pir_modulus_bits
        )));
    }
    let policy_ids: Vec<&str> =
        scenario.server.policies.iter().map(|p| p.policy_id.as_str()).collect();
    let mut task_ids: Vec<&str> = Vec::new();
    for task in &scenario.server.fa_tasks {
        if task_ids.contains(&task.task_id.as_str()) {
            return Err(FleetError::Invalid(format!("duplicate fa task id {:?}", task.task_id)));
        }
        task_ids.push(&task.task_id);
        if !policy_ids.contains(&task.policy_id.as_str()) {
            return Err(FleetError::Invalid(format!(
                "fa task {:?} references unknown policy {:?}",
                task.task_id, task.policy_id
            )));
        }
        if task.d == 0 {
            return Err(FleetError::Invalid(format!("fa task {:?} has d = 0", task.task_id)));
        }
    }
    for (i, drop) in scenario.dropout_schedule.iter().enumerate() {
        if let Some(id) = &drop.task_id {
            if !task_ids.contains(&id.as_str()) {
                return Err(FleetError::Invalid(format!(
                    "dropout_schedule[{i}] references unknown fa task {id:?}"
                )));
            }
        }
        if drop.device as usize >= scenario.devices.len() {
            return Err(FleetError::Invalid(format!(
                "dropout_schedule[{i}] references unknown device {}",
                drop.device
            )));
        }
    }
    for (uri, b64) in &scenario.server.files {
        b64_decode(&format!("server.files[{uri:?}]"), b64)?;
    }
    for (name, b64) in &scenario.server.pir_records {
        b64_decode(&format!("server.pir_records[{name:?}]"), b64)?;
    }
    for b64 in scenario.server.cohort.keys() {
        b64_decode("server.cohort key", b64)?;
    }
    if !scenario.server.associations.is_empty() {
        parse_association_config(&scenario.server.associations)?;
    }
    for (i, device) in scenario.devices.iter().enumerate() {
        let mut last = 0u64;
        for (j, event) in device.events().iter().enumerate() {
            if event.t < last {
                return Err(FleetError::Invalid(format!(
                    "devices[{i}].events[{j}] goes backwards in time ({} after {last})",
                    event.t
                )));
            }
            last = event.t;
            if let Some(id) = event.kind.policy_id() {
                if !policy_ids.contains(&id) {
                    return Err(FleetError::Invalid(format!(
                        "devices[{i}].events[{j}] references unknown policy {id:?}"
                    )));
                }
            }
            if let EventKind::PirFetch { record, .. } = &event.kind {
                if !scenario.server.pir_records.contains_key(record) {
                    return Err(FleetError::Invalid(format!(
                        "devices[{i}].events[{j}] fetches unknown pir record {record:?}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Domain-separated u64 seed derivation: different labels never collide.
fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PirFetchResult {
    pub device: usize,
    pub record: String,
    /// Base64 decoded record payload.
    pub payload: String,
}

/// Per-device feature outputs; replies/captions/dim reflect the device's
/// last invocation of each feature, taps accumulate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub replies: Vec<String>,
    pub taps: Vec<String>,
    pub captions: Vec<String>,
    pub dim: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
    pub devices: Vec<DeviceReport>,
    pub fa: Vec<FaReport>,
    pub pir: Vec<PirFetchResult>,
    pub deny_counts: BTreeMap<String, u64>,
    /// Raw-on-network allows observed by the engine; always empty unless
    /// the gateway's hard rule is broken.
    pub violations: Vec<String>,
    pub audit_digest: String,
    /// The gateway audit log as a JSON Lines string, one event per line.
    pub audit_jsonl: String,
}

impl RunReport {
    /// Parses the embedded audit log back into events.
    pub fn audit_events(&self) -> Result<Vec<GatewayAuditEvent>, FleetError> {
        self.audit_jsonl
            .lines()
            .map(|line| {
                serde_json::from_str(line)
                    .map_err(|e| FleetError::Load(format!("audit line: {e}")))
            })
            .collect()
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FleetError> {
        serde_json::from_str(text).map_err(|e| FleetError::Load(e.to_string()))
    }
}

struct DeviceState {
    runtime: Runtime,
    sandbox: PackageId,
    report: DeviceReport,
}

/// Executes a loaded scenario. `seed_override` replaces the document's
/// seed without editing it.
pub fn run(scenario: &Scenario, seed_override: Option<u64>) -> Result<RunReport, FleetError> {
    let seed = seed_override.unwrap_or(scenario.seed);

    let mut gateway = Gateway::new();
    for policy in &scenario.server.policies {
        gateway.install_policy(policy.clone());
    }
    gateway.download_manifest = DownloadManifest::new(scenario.server.download_manifest.clone());

    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (uri, b64) in &scenario.server.files {
        files.insert(uri.clone(), b64_decode("server.files", b64)?);
    }

    let pir_db = if scenario.server.pir_records.is_empty() {
        None
    } else {
        let records = scenario
            .server
            .pir_records
            .iter()
            .map(|(name, b64)| Ok((name.clone(), b64_decode("server.pir_records", b64)?)))
            .collect::<Result<Vec<_>, FleetError>>()?;
        Some(PirDatabase::new(records, DEFAULT_LIMB_SIZE)?)
    };
    let mut pir_keys: Option<HeKeypair> = None;

    let assoc = if scenario.server.associations.is_empty() {
        AssociationSet::default()
    } else {
        AssociationSet::new(parse_association_config(&scenario.server.associations)?)
    };

    // The k-anonymity ground truth: how many fleet members would report
    // each metadata value, padded by the configured server counts.
    let mut cohort: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for device in &scenario.devices {
        for event in device.events() {
            if let EventKind::EgressAttempt { payload, .. } = &event.kind {
                *cohort.entry(payload.clone()).or_insert(0) += 1;
            }
        }
    }
    for (b64, count) in &scenario.server.cohort {
        *cohort.entry(b64_decode("server.cohort", b64)?).or_insert(0) += count;
    }

    let sandbox_default = PackageId::new(SANDBOX_PACKAGE).expect("constant package id");
    let mut manifests: BTreeMap<PackageId, PackageManifest> = BTreeMap::new();
    let mut devices: Vec<DeviceState> = Vec::new();
    for spec in &scenario.devices {
        let mut runtime = Runtime::new();
        runtime.controls = spec.controls.clone();
        runtime.set_association_rules(assoc.clone());
        let mut sandbox = None;
        for manifest in &spec.packages {
            if manifest.in_pcc && sandbox.is_none() {
                sandbox = Some(manifest.package.clone());
            }
            manifests.insert(manifest.package.clone(), manifest.clone());
            runtime.register_package(manifest.clone());
        }
        let sandbox = sandbox.unwrap_or_else(|| {
            let manifest = PackageManifest {
                package: sandbox_default.clone(),
                permissions: Default::default(),
                roles: Default::default(),
                in_pcc: true,
                trusted_signature: true,
                egress_channels: Vec::new(),
            };
            manifests.entry(sandbox_default.clone()).or_insert_with(|| manifest.clone());
            runtime.register_package(manifest);
            sandbox_default.clone()
        });
        devices.push(DeviceState { runtime, sandbox, report: DeviceReport::default() });
    }

    // Merged timeline, ordered by (t, device, document order).
    let mut timeline: Vec<(u64, usize, &Event)> = Vec::new();
    for (i, spec) in scenario.devices.iter().enumerate() {
        for event in spec.events() {
            timeline.push((event.t, i, event));
        }
    }
    timeline.sort_by_key(|&(t, i, _)| (t, i));
    let end_time = timeline.iter().map(|&(t, _, _)| t).max().unwrap_or(0);

    let mut violations: Vec<String> = Vec::new();
    let mut pir_results: Vec<PirFetchResult> = Vec::new();
    let mut pir_seq = 0u64;

    for (t, dev, event) in timeline {
        let state = &mut devices[dev];
        state.runtime.advance_to(t)?;
        match &event.kind {
            EventKind::ContentCapture { event } => {
                ingest_content_capture(&mut state.runtime.store, event, &state.runtime.controls, t)?;
            }
            EventKind::ShareData { app, locus_id, payload } => {
                ingest_share_data(
                    &mut state.runtime.store,
                    app,
                    payload.clone(),
                    locus_id,
                    &state.runtime.controls,
                    t,
                )?;
            }
            EventKind::AppLaunch { app, slot } => {
                ingest_ambient(
                    &mut state.runtime.store,
                    DataClass::Structured,
                    DataSource::AppLaunches,
                    app,
                    slot.to_le_bytes().to_vec(),
                    &state.runtime.controls,
                    t,
                )?;
            }
            EventKind::SetControl { control, value } => {
                let c = &mut state.runtime.controls;
                match control {
                    ControlKnob::PersonalizeUsingAppData => c.personalize_using_app_data = *value,
                    ControlKnob::MicEnabled => c.mic_enabled = *value,
                    ControlKnob::CameraEnabled => c.camera_enabled = *value,
                    ControlKnob::ScreenCapturePolicyDisabled => {
                        c.screen_capture_policy_disabled = *value
                    }
                }
            }
            EventKind::SmartReply { allowlist, freeze_threshold, keystrokes, taps, policy_id } => {
                let candidates = smart_reply_suggest(&state.runtime.store, allowlist, t);
                let mut filter = KeystrokeFilterState::new(*freeze_threshold);
                let mut visible: Vec<_> = candidates.clone();
                for key in keystrokes.chars() {
                    visible = keystroke_filter(&mut filter, key, &candidates);
                }
                state.report.replies = visible.iter().map(|c| c.text.clone()).collect();
                let mut surface = delegated_render(pir_seq, candidates);
                for &index in taps {
                    if let Some(text) = surface.tap(
                        index,
                        &state.sandbox,
                        policy_id,
                        &mut gateway,
                        &manifests,
                        t,
                    ) {
                        state.report.taps.push(text);
                    }
                }
            }
            EventKind::LiveCaption { enabled, frames, model_uri } => {
                let overlay = live_caption(
                    &mut state.runtime.store,
                    frames,
                    &state.runtime.controls.clone(),
                    *enabled,
                    &state.sandbox.clone(),
                    model_uri.as_deref(),
                    &files,
                    &mut gateway,
                    t,
                );
                if let Some(overlay) = overlay {
                    state.report.captions = overlay.lines;
                }
            }
            EventKind::ScreenAttention { opted_in, frames, dim_time } => {
                let decision = screen_attention(
                    &mut state.runtime.store,
                    frames,
                    *dim_time,
                    &state.runtime.controls.clone(),
                    *opted_in,
                    &state.sandbox.clone(),
                );
                state.report.dim = Some(
                    match decision.outcome {
                        DimOutcome::Postpone => "Postpone",
                        DimOutcome::Dim => "Dim",
                    }
                    .to_string(),
                );
            }
            EventKind::PirFetch { record, policy_id } => {
                let db = pir_db
                    .as_ref()
                    .ok_or_else(|| FleetError::Invalid("pir_fetch without pir_records".into()))?;
                let keys = match &pir_keys {
                    Some(k) => k,
                    None => {
                        let mut rng =
                            ChaCha20Rng::seed_from_u64(derive_seed(seed, "pir-keys"));
                        pir_keys = Some(he_keygen(&mut rng, scenario.server.pir_modulus_bits));
                        pir_keys.as_ref().unwrap()
                    }
                };
                let index = db
                    .index_of(record)
                    .ok_or_else(|| FleetError::Invalid(format!("unknown pir record {record:?}")))?;
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                    seed,
                    &format!("pir-query-{dev}-{pir_seq}"),
                ));
                pir_seq += 1;
                let query = build_query(index, db.len(), &keys.public, &mut rng)?;
                let descriptor = DataDescriptor::new(
                    DataCategory::Derived,
                    DataClass::Structured,
                    DataSource::AppSearchIndexed,
                    state.sandbox.clone(),
                )?;
                let request = EgressRequest {
                    requester: state.sandbox.clone(),
                    descriptor,
                    channel: Channel::PirQuery,
                    payload: query.to_bytes(),
                    policy_id: policy_id.clone(),
                };
                if gateway.gate(&request, &manifests, &cohort, t) == GateDecision::Allow {
                    let (response, _) = answer(&query, db)?;
                    let payload =
                        decode(&response, &keys.secret, db.record_size(), db.limb_size())?;
                    pir_results.push(PirFetchResult {
                        device: dev,
                        record: record.clone(),
                        payload: BASE64.encode(payload),
                    });
                }
            }
            EventKind::FetchModel { uri } => {
                let _ = gateway.fetch_model(&state.sandbox, uri, &files, t);
            }
            EventKind::EgressAttempt { category, class, data_source, app, channel, payload, policy_id } => {
                let descriptor =
                    DataDescriptor::new(*category, *class, *data_source, app.clone())?;
                let request = EgressRequest {
                    requester: state.sandbox.clone(),
                    descriptor,
                    channel: *channel,
                    payload: payload.clone(),
                    policy_id: policy_id.clone(),
                };
                let decision = gateway.gate(&request, &manifests, &cohort, t);
                if decision == GateDecision::Allow
                    && channel.is_network()
                    && *category == DataCategory::Raw
                {
                    violations.push(format!(
                        "raw payload allowed out on {channel:?} at t={t} (device {dev})"
                    ));
                }
            }
            EventKind::DeleteLocus { locus_id } => {
                state.runtime.store.delete_by_locus(locus_id);
            }
            EventKind::ClearData { start, end } => {
                let range = match (start, end) {
                    (None, None) => crate::runtime::TimeRange::All,
                    (s, e) => crate::runtime::TimeRange::Between(
                        s.unwrap_or(0),
                        e.unwrap_or(u64::MAX),
                    ),
                };
                state.runtime.store.clear_data(range)?;
            }
        }
    }

    let mut fa_reports: Vec<FaReport> = Vec::new();
    for spec in &scenario.server.fa_tasks {
        let mut drops: BTreeMap<u32, Round> =
            spec.drops.iter().map(|(&i, &r)| (i, r.into())).collect();
        for drop in &scenario.dropout_schedule {
            if drop.task_id.as_deref().is_none_or(|id| id == spec.task_id) {
                drops.insert(drop.device, drop.round.into());
            }
        }
        let task = FaTask {
            task_id: spec.task_id.clone(),
            d: spec.d,
            popularity_threshold: spec.popularity_threshold,
            policy_id: spec.policy_id.clone(),
            secagg_t: spec.secagg_t,
            seed: derive_seed(seed, &format!("fa-{}", spec.task_id)),
            group: spec.group.into(),
            drops,
        };
        let participants: Vec<FaParticipant> = devices
            .iter()
            .enumerate()
            .map(|(i, d)| FaParticipant {
                index: i as u32,
                package: d.sandbox.clone(),
                store: &d.runtime.store,
                controls: &d.runtime.controls,
            })
            .collect();
        fa_reports.push(gateway.run_fa_task(&task, &participants, &manifests, end_time)?);
    }

    let mut deny_counts: BTreeMap<String, u64> = BTreeMap::new();
    for event in gateway.audit() {
        if let Some(reason) = event.reason {
            *deny_counts.entry(format!("{reason:?}")).or_insert(0) += 1;
        }
    }

    let device_reports: Vec<DeviceReport> = devices.iter().map(|d| d.report.clone()).collect();
    let assertions = evaluate(
        &scenario.assertions,
        &device_reports,
        &fa_reports,
        &pir_results,
        &deny_counts,
        &violations,
        gateway.audit(),
    );
    let passed = assertions.iter().all(|a| a.pass);

    Ok(RunReport {
        scenario: scenario.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: scenario.config_hash.clone(),
        seed,
        passed,
        assertions,
        devices: device_reports,
        fa: fa_reports,
        pir: pir_results,
        deny_counts,
        violations,
        audit_digest: sha256_hex(gateway.audit_jsonl().as_bytes()),
        audit_jsonl: gateway.audit_jsonl(),
    })
}

fn evaluate(
    assertions: &[Assertion],
    devices: &[DeviceReport],
    fa: &[FaReport],
    pir: &[PirFetchResult],
    deny_counts: &BTreeMap<String, u64>,
    violations: &[String],
    audit: &[GatewayAuditEvent],
) -> Vec<AssertionResult> {
    let fa_by_id = |id: &str| fa.iter().find(|r| r.task_id == id);
    assertions
        .iter()
        .map(|assertion| {
            let (pass, detail) = match assertion {
                Assertion::NoRawEgress => {
                    if violations.is_empty() {
                        (true, "no raw-on-network allows".to_string())
                    } else {
                        (false, violations.join("; "))
                    }
                }
                Assertion::FaAggregate { task_id, expected } => match fa_by_id(task_id) {
                    Some(report) => match &report.outcome {
                        crate::gateway::FaOutcome::Aggregate(sum) if sum == expected => {
                            (true, format!("aggregate {sum:?}"))
                        }
                        outcome => (false, format!("got {outcome:?}")),
                    },
                    None => (false, format!("no fa report for {task_id:?}")),
                },
                Assertion::FaAborted { task_id } => match fa_by_id(task_id) {
                    Some(report) => match &report.outcome {
                        crate::gateway::FaOutcome::Aborted { survivors, need } => {
                            (true, format!("aborted with {survivors} survivors, needed {need}"))
                        }
                        outcome => (false, format!("got {outcome:?}")),
                    },
                    None => (false, format!("no fa report for {task_id:?}")),
                },
                Assertion::ReplyCandidates { device, expected } => match devices.get(*device) {
                    Some(d) if d.replies == *expected => (true, format!("{:?}", d.replies)),
                    Some(d) => (false, format!("got {:?}", d.replies)),
                    None => (false, format!("no device {device}")),
                },
                Assertion::CaptionLines { device, expected } => match devices.get(*device) {
                    Some(d) if d.captions == *expected => (true, format!("{:?}", d.captions)),
                    Some(d) => (false, format!("got {:?}", d.captions)),
                    None => (false, format!("no device {device}")),
                },
                Assertion::DimOutcome { device, expected } => match devices.get(*device) {
                    Some(d) if d.dim.as_deref() == Some(expected.as_str()) => {
                        (true, expected.clone())
                    }
                    Some(d) => (false, format!("got {:?}", d.dim)),
                    None => (false, format!("no device {device}")),
                },
                Assertion::DenyCount { reason, expected } => {
                    let got = deny_counts.get(&format!("{reason:?}")).copied().unwrap_or(0);
                    (got == *expected, format!("{reason:?} denied {got} times"))
                }
                Assertion::PirResult { device, record, expected } => {
                    match pir
                        .iter()
                        .rev()
                        .find(|r| r.device == *device && r.record == *record)
                    {
                        Some(r) if r.payload == *expected => {
                            (true, format!("{record:?} retrieved"))
                        }
                        Some(r) => (false, format!("got payload {:?}", r.payload)),
                        None => (false, format!("no pir result for device {device}")),
                    }
                }
                Assertion::NoGatewayEventsFrom { package } => {
                    let count = audit.iter().filter(|e| e.requester == *package).count();
                    (count == 0, format!("{count} gateway events from {package}"))
                }
            };
            AssertionResult { assertion: assertion.clone(), pass, detail }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy_json(id: &str, categories: &str, channels: &str, k: u64) -> String {
        format!(
            r#"{{"policy_id": "{id}", "allowed_categories": [{categories}],
                 "allowed_channels": [{channels}], "k": {k}}}"#
        )
    }

    fn base_scenario() -> String {
        let policy = policy_json(
            "default",
            r#""Derived", "Metadata""#,
            r#""FederatedCompute", "PirQuery", "FrameworkSurface""#,
            2,
        );
        format!(
            r#"{{
                "name": "unit",
                "seed": 7,
                "server": {{"policies": [{policy}]}},
                "devices": [
                    {{"events": [
                        {{"t": 0, "kind": "content_capture", "event": {{
                            "app": "com.example.chat",
                            "view_text": "dinner at seven?",
                            "structured_fields": {{"entity0": "Sounds good!", "entity1": "Sorry, busy"}},
                            "locus_id": "thread-1"
                        }}}},
                        {{"t": 5, "kind": "smart_reply",
                          "allowlist": ["com.example.chat"],
                          "taps": [0],
                          "policy_id": "default"}}
                    ]}}
                ],
                "assertions": [
                    {{"check": "no_raw_egress"}},
                    {{"check": "reply_candidates", "device": 0,
                      "expected": ["Sounds good!", "Sorry, busy"]}}
                ]
            }}"#
        )
    }

    #[test]
    fn loads_and_runs_base_scenario() {
        let scenario = load_scenario(&base_scenario()).unwrap();
        let report = run(&scenario, None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
        assert_eq!(report.devices[0].taps, vec!["Sounds good!"]);
        assert_eq!(report.seed, 7);
        assert_eq!(report.config_hash.len(), 64);
    }

    #[test]
    fn report_is_byte_identical_across_runs() {
        let scenario = load_scenario(&base_scenario()).unwrap();
        let a = run(&scenario, None).unwrap().to_json();
        let b = run(&scenario, None).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_override_lands_in_report() {
        let scenario = load_scenario(&base_scenario()).unwrap();
        let report = run(&scenario, Some(99)).unwrap();
        assert_eq!(report.seed, 99);
    }

    #[test]
    fn load_error_names_json_pointer() {
        let err = load_scenario(r#"{"name": "x", "seed": "not a number", "devices": []}"#)
            .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("seed"), "{text}");
    }

    #[test]
    fn rejects_unknown_policy_reference() {
        let bad = base_scenario().replace(r#""policy_id": "default"}"#, r#""policy_id": "nope"}"#);
        let err = load_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("unknown policy"), "{err}");
    }

    #[test]
    fn rejects_backwards_timeline() {
        let bad = base_scenario().replace(r#""t": 5"#, r#""t": 0"#).replace(
            r#""t": 0, "kind": "content_capture""#,
            r#""t": 3, "kind": "content_capture""#,
        );
        let err = load_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("backwards"), "{err}");
    }

    #[test]
    fn rejects_empty_device_list() {
        let err = load_scenario(r#"{"name": "x", "seed": 1, "devices": []}"#).unwrap_err();
        assert!(err.to_string().contains("no devices"), "{err}");
    }

    #[test]
    fn raw_egress_attempt_is_denied_and_counted() {
        let policy = policy_json(
            "open",
            r#""Raw", "Derived""#,
            r#""FederatedCompute""#,
            1,
        );
        let text = format!(
            r#"{{
                "name": "raw",
                "seed": 1,
                "server": {{"policies": [{policy}]}},
                "devices": [
                    {{"events": [
                        {{"t": 0, "kind": "egress_attempt",
                          "category": "Raw", "class": "Text", "data_source": "ScreenCapture",
                          "app": "com.example.chat", "channel": "FederatedCompute",
                          "payload": "c2VjcmV0", "policy_id": "open"}}
                    ]}}
                ],
                "assertions": [
                    {{"check": "no_raw_egress"}},
                    {{"check": "deny_count", "reason": "Category", "expected": 1}}
                ]
            }}"#
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn k_anonymity_uses_fleet_cohort() {
        // Two devices report the same metadata value, a third is unique.
        // With k=2 the shared value passes, the unique one is denied.
        let policy = policy_json(
            "metrics",
            r#""Metadata""#,
            r#""FederatedCompute""#,
            2,
        );
        let attempt = |payload: &str| {
            format!(
                r#"{{"t": 0, "kind": "egress_attempt",
                    "category": "Metadata", "class": "Structured", "data_source": "AppLaunches",
                    "app": "com.example.chat", "channel": "FederatedCompute",
                    "payload": "{payload}", "policy_id": "metrics"}}"#
            )
        };
        let text = format!(
            r#"{{
                "name": "kanon",
                "seed": 1,
                "server": {{"policies": [{policy}]}},
                "devices": [
                    {{"events": [{}]}},
                    {{"events": [{}]}},
                    {{"events": [{}]}}
                ],
                "assertions": [
                    {{"check": "deny_count", "reason": "KAnonymity", "expected": 1}}
                ]
            }}"#,
            attempt("cG9wdWxhcg=="),
            attempt("cG9wdWxhcg=="),
            attempt("dW5pcXVl")
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
    }

    #[test]
    fn fa_task_aggregates_app_launches() {
        let policy = policy_json("fa", r#""Derived""#, r#""FederatedCompute""#, 1);
        let launch = |slot: u32| {
            format!(
                r#"{{"t": 0, "kind": "app_launch", "app": "com.example.chat", "slot": {slot}}}"#
            )
        };
        let text = format!(
            r#"{{
                "name": "fa",
                "seed": 3,
                "server": {{
                    "policies": [{policy}],
                    "fa_tasks": [{{
                        "task_id": "launches",
                        "d": 4,
                        "popularity_threshold": 2,
                        "policy_id": "fa",
                        "secagg_t": 2
                    }}]
                }},
                "devices": [
                    {{"events": [{}, {}]}},
                    {{"events": [{}]}},
                    {{"events": [{}]}}
                ],
                "assertions": [
                    {{"check": "fa_aggregate", "task_id": "launches",
                      "expected": [3, 0, 0, 0]}}
                ]
            }}"#,
            launch(0),
            launch(1),
            launch(0),
            launch(0)
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
        assert!(report.fa[0].per_device_isolated);
    }

    #[test]
    fn pir_fetch_roundtrips_record() {
        let policy = policy_json("pir", r#""Derived""#, r#""PirQuery""#, 1);
        let text = format!(
            r#"{{
                "name": "pir",
                "seed": 11,
                "server": {{
                    "policies": [{policy}],
                    "pir_records": {{"pack.a": "aGVsbG8=", "pack.b": "d29ybGQ="}},
                    "pir_modulus_bits": 256
                }},
                "devices": [
                    {{"events": [
                        {{"t": 0, "kind": "pir_fetch", "record": "pack.b", "policy_id": "pir"}}
                    ]}}
                ],
                "assertions": [
                    {{"check": "pir_result", "device": 0, "record": "pack.b",
                      "expected": "d29ybGQ="}}
                ]
            }}"#
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
    }

    #[test]
    fn control_toggle_stops_capture() {
        let policy = policy_json("p", r#""Derived""#, r#""FrameworkSurface""#, 1);
        let text = format!(
            r#"{{
                "name": "controls",
                "seed": 2,
                "server": {{"policies": [{policy}]}},
                "devices": [
                    {{"events": [
                        {{"t": 0, "kind": "set_control",
                          "control": "personalize_using_app_data", "value": false}},
                        {{"t": 1, "kind": "content_capture", "event": {{
                            "app": "com.example.chat",
                            "view_text": "hi",
                            "structured_fields": {{"entity0": "hello"}},
                            "locus_id": "l1"
                        }}}},
                        {{"t": 2, "kind": "smart_reply",
                          "allowlist": ["com.example.chat"], "policy_id": "p"}}
                    ]}}
                ],
                "assertions": [
                    {{"check": "reply_candidates", "device": 0, "expected": []}}
                ]
            }}"#
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
    }

    #[test]
    fn delete_locus_removes_candidates() {
        let policy = policy_json("p", r#""Derived""#, r#""FrameworkSurface""#, 1);
        let text = format!(
            r#"{{
                "name": "locus",
                "seed": 2,
                "server": {{"policies": [{policy}]}},
                "devices": [
                    {{"events": [
                        {{"t": 0, "kind": "content_capture", "event": {{
                            "app": "com.example.chat",
                            "view_text": "hi",
                            "structured_fields": {{"entity0": "hello"}},
                            "locus_id": "l1"
                        }}}},
                        {{"t": 1, "kind": "delete_locus", "locus_id": "l1"}},
                        {{"t": 2, "kind": "smart_reply",
                          "allowlist": ["com.example.chat"], "policy_id": "p"}}
                    ]}}
                ],
                "assertions": [
                    {{"check": "reply_candidates", "device": 0, "expected": []}}
                ]
            }}"#
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert!(report.passed, "{:#?}", report.assertions);
    }

    #[test]
    fn minimal_scenario_runs_to_empty_report() {
        let scenario =
            load_scenario(r#"{"name": "min", "seed": 0, "devices": [{}]}"#).unwrap();
        let report = run(&scenario, None).unwrap();
        assert!(report.passed);
        assert!(report.assertions.is_empty());
        assert!(report.audit_jsonl.is_empty());
    }

    fn fa_scenario(extra: &str) -> String {
        let policy = policy_json("fa", r#""Derived""#, r#""FederatedCompute""#, 1);
        let launch =
            r#"{"t": 0, "kind": "app_launch", "app": "com.example.chat", "slot": 0}"#;
        format!(
            r#"{{
                "name": "fa",
                "seed": 5,
                "server": {{
                    "policies": [{policy}],
                    "fa_tasks": [{{
                        "task_id": "launches",
                        "d": 2,
                        "popularity_threshold": 1,
                        "policy_id": "fa",
                        "secagg_t": 2
                    }}]
                }},
                {extra}
                "devices": [
                    {{"events": [{launch}]}},
                    {{"events": [{launch}]}},
                    {{"events": [{launch}]}}
                ]
            }}"#
        )
    }

    #[test]
    fn dropout_schedule_applies_to_fa_tasks() {
        // Device 2 delivers its key shares but never its masked input, so
        // the server must reconstruct its agreement key; its contribution
        // is lost from the aggregate.
        let text = fa_scenario(
            r#""dropout_schedule": [{"device": 2, "round": "MaskedInput"}],"#,
        );
        let report = run(&load_scenario(&text).unwrap(), None).unwrap();
        assert_eq!(report.fa[0].dropout_reconstructions, 1);
        assert_eq!(
            report.fa[0].outcome,
            crate::gateway::FaOutcome::Aggregate(vec![2, 0])
        );
    }

    #[test]
    fn dropout_schedule_rejects_unknown_task() {
        let text = fa_scenario(
            r#""dropout_schedule": [{"device": 0, "round": "Unmask", "task_id": "nope"}],"#,
        );
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("unknown fa task"), "{err}");
    }

    #[test]
    fn seed_changes_transcript_not_aggregate() {
        let scenario = load_scenario(&fa_scenario("")).unwrap();
        let a = run(&scenario, Some(1)).unwrap();
        let b = run(&scenario, Some(2)).unwrap();
        assert_eq!(a.fa[0].outcome, b.fa[0].outcome);
        assert_ne!(a.to_json(), b.to_json());
    }

    #[test]
    fn report_json_roundtrips() {
        let scenario = load_scenario(&base_scenario()).unwrap();
        let report = run(&scenario, None).unwrap();
        let back = RunReport::from_json(&report.to_json()).unwrap();
        assert_eq!(report, back);
    }
}
