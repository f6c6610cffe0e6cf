//! The three reference in-sandbox features: smart reply over captured app
//! content, live captioning of device audio, and camera-driven screen
//! attention. Each one exercises a different slice of the control surface:
//! allowlists and TTLs, sensor gates and the download-only channel, and
//! the no-egress-at-all case.

use std::collections::BTreeMap;

use crate::gateway::{Channel, EgressRequest, GateDecision, Gateway};
use crate::policy::{
    DataCategory, DataClass, DataDescriptor, DataSource, PackageId, PackageManifest,
};
use crate::runtime::{ControlState, EphemeralStore};
use crate::sources::{capture_audio, capture_camera, AudioFrame, CameraFrame, CapturedAudio, CapturedContent, Ingest};

/// How stale a face-present frame may be and still postpone dimming.
pub const ATTENTION_WINDOW_MS: u64 = 2_000;

/// Default keystroke count after which candidate filtering freezes.
pub const DEFAULT_FREEZE_THRESHOLD: usize = 3;

/// Structured-field keys carrying extracted entities start with this.
const ENTITY_KEY_PREFIX: &str = "entity";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyCandidate {
    pub text: String,
    pub source_locus: String,
    pub source_app: PackageId,
    pub created_at: u64,
}

/// Extracts reply candidates from unexpired captured content of
/// allowlisted apps. The mock extractor reads pre-tagged entities out of
/// the structured fields; anything FLAG_SECURE never got stored, so it can
/// never surface here.
pub fn smart_reply_suggest(
    store: &EphemeralStore,
    allowlist: &[PackageId],
    now: u64,
) -> Vec<ReplyCandidate> {
    let mut out = Vec::new();
    for record in store.live_records(now) {
        if record.descriptor.source != DataSource::ScreenCapture
            || record.descriptor.category != DataCategory::Raw
        {
            continue;
        }
        if !allowlist.contains(&record.descriptor.origin_package) {
            continue;
        }
        let Ok(content) = serde_json::from_slice::<CapturedContent>(&record.payload) else {
            continue;
        };
        for (key, value) in &content.structured_fields {
            if !key.starts_with(ENTITY_KEY_PREFIX) {
                continue;
            }
            out.push(ReplyCandidate {
                text: value.clone(),
                source_locus: record.locus_id.clone().unwrap_or_default(),
                source_app: record.descriptor.origin_package.clone(),
                created_at: record.created_at,
            });
        }
    }
    out
}

/// Candidates rendered by the sandbox into another app's window. The
/// target app sees a count; text crosses only on an explicit tap.
#[derive(Debug)]
pub struct DelegatedSurface {
    pub surface_id: u64,
    candidates: Vec<ReplyCandidate>,
}

pub fn delegated_render(surface_id: u64, candidates: Vec<ReplyCandidate>) -> DelegatedSurface {
    DelegatedSurface { surface_id, candidates }
}

impl DelegatedSurface {
    /// Everything the target app can observe: how many candidates remain.
    pub fn target_observe(&self) -> usize {
        self.candidates.len()
    }

    /// A user tap on candidate `index`: releases exactly that candidate's
    /// text through the gateway as a user-authorized framework-surface
    /// egress. Returns the text the target app now holds.
    pub fn tap(
        &mut self,
        index: usize,
        requester: &PackageId,
        policy_id: &str,
        gateway: &mut Gateway,
        manifests: &BTreeMap<PackageId, PackageManifest>,
        now: u64,
    ) -> Option<String> {
        if index >= self.candidates.len() {
            return None;
        }
        let candidate = &self.candidates[index];
        let descriptor = DataDescriptor::new(
            DataCategory::Derived,
            DataClass::Text,
            DataSource::ScreenCapture,
            candidate.source_app.clone(),
        )
        .expect("taxonomy row");
        let request = EgressRequest {
            requester: requester.clone(),
            descriptor,
            channel: Channel::FrameworkSurface,
            payload: candidate.text.clone().into_bytes(),
            policy_id: policy_id.to_string(),
        };
        match gateway.gate_user_action(&request, manifests, &BTreeMap::new(), now) {
            GateDecision::Allow => Some(self.candidates.remove(index).text),
            GateDecision::Deny(_) => None,
        }
    }
}

/// Per-surface filter state. Once `keystrokes_seen` reaches the threshold
/// the output list freezes for the rest of the session, so typing can no
/// longer probe the candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeystrokeFilterState {
    pub keystrokes_seen: usize,
    pub frozen: bool,
    pub freeze_threshold: usize,
    typed: String,
    last_output: Option<Vec<ReplyCandidate>>,
}

impl KeystrokeFilterState {
    pub fn new(freeze_threshold: usize) -> Self {
        KeystrokeFilterState {
            keystrokes_seen: 0,
            frozen: false,
            freeze_threshold,
            typed: String::new(),
            last_output: None,
        }
    }
}

/// Feeds one keystroke through the filter. Active filtering matches
/// candidates by typed prefix; at the threshold the list freezes.
pub fn keystroke_filter(
    state: &mut KeystrokeFilterState,
    key: char,
    candidates: &[ReplyCandidate],
) -> Vec<ReplyCandidate> {
    if !state.frozen && state.keystrokes_seen >= state.freeze_threshold {
        state.frozen = true;
        if state.last_output.is_none() {
            state.last_output = Some(candidates.to_vec());
        }
    }
    if state.frozen {
        return state.last_output.clone().unwrap_or_default();
    }
    state.typed.push(key);
    state.keystrokes_seen += 1;
    let filtered: Vec<ReplyCandidate> = candidates
        .iter()
        .filter(|c| c.text.starts_with(&state.typed))
        .cloned()
        .collect();
    if state.keystrokes_seen >= state.freeze_threshold {
        state.frozen = true;
    }
    state.last_output = Some(filtered.clone());
    filtered
}

/// Marker for a window-manager overlay owned by the system, not by any
/// app package.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemOverlay;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionOverlay {
    pub lines: Vec<String>,
    pub surface: SystemOverlay,
}

/// Runs the caption feature over a frame sequence: fetches the model over
/// the download-only channel, admits frames through the audio gates, and
/// echoes each admitted frame's label into the overlay.
#[allow(clippy::too_many_arguments)]
pub fn live_caption(
    store: &mut EphemeralStore,
    frames: &[AudioFrame],
    controls: &ControlState,
    enabled: bool,
    package: &PackageId,
    model_uri: Option<&str>,
    server: &BTreeMap<String, Vec<u8>>,
    gateway: &mut Gateway,
    now: u64,
) -> Option<CaptionOverlay> {
    if !enabled {
        return None;
    }
    if let Some(uri) = model_uri {
        // Model update failure leaves the previously shipped model in
        // place; captioning proceeds either way.
        let _ = gateway.fetch_model(package, uri, server, now);
    }
    let mut lines = Vec::new();
    for frame in frames {
        let ingest = capture_audio(store, frame, package, controls, now)
            .expect("audio descriptor is a taxonomy row");
        let Ingest::Stored(id) = ingest else { continue };
        let record = store.get(id, now).expect("just stored");
        let audio: CapturedAudio =
            serde_json::from_slice(&record.payload).expect("payload written by capture_audio");
        if let Some(label) = audio.label {
            lines.push(label);
        }
    }
    Some(CaptionOverlay { lines, surface: SystemOverlay })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimOutcome {
    Postpone,
    Dim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimDecision {
    pub outcome: DimOutcome,
    pub at: u64,
}

/// Decides at the scheduled dim time whether to keep the screen on. The
/// feature takes no gateway handle at all: it has no way to egress
/// anything.
pub fn screen_attention(
    store: &mut EphemeralStore,
    frames: &[CameraFrame],
    scheduled_dim_time: u64,
    controls: &ControlState,
    opted_in: bool,
    package: &PackageId,
) -> DimDecision {
    if !opted_in {
        return DimDecision { outcome: DimOutcome::Dim, at: scheduled_dim_time };
    }
    let mut latest: Option<&CameraFrame> = None;
    for frame in frames {
        let ingest = capture_camera(store, frame, package, controls, frame.timestamp)
            .expect("camera descriptor is a taxonomy row");
        if !matches!(ingest, Ingest::Stored(_)) {
            continue;
        }
        let fresh = frame.timestamp <= scheduled_dim_time
            && frame.timestamp + ATTENTION_WINDOW_MS >= scheduled_dim_time;
        if fresh && latest.is_none_or(|best| frame.timestamp >= best.timestamp) {
            latest = Some(frame);
        }
    }
    let outcome = match latest {
        Some(frame) if frame.face_present => DimOutcome::Postpone,
        _ => DimOutcome::Dim,
    };
    DimDecision { outcome, at: scheduled_dim_time }
}
