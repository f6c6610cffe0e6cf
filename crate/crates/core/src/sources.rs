//! Simulated framework data sources feeding the sandbox: content capture,
//! app-pushed share data, the AppSearch index, audio, camera, and the
//! remaining ambient feeds. Every source applies its gates before anything
//! touches the ephemeral store; a gated-off source leaves no trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::{DataCategory, DataClass, DataDescriptor, DataSource, PackageId};
use crate::runtime::{ControlState, EphemeralStore, RecordId, RuntimeError, DEFAULT_TTL_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// The surfacing window opted out via FLAG_SECURE.
    FlagSecure,
    /// The app opted out of the capture path.
    AppOptOut,
    /// A user-facing toggle disables this source.
    UserControl,
    /// A device-policy admin disabled screen capture.
    PolicyDisabled,
    /// The mic or camera hardware toggle is off.
    SensorToggle,
}

/// Outcome of feeding one datum to a source: stored, or dropped before the
/// sandbox ever saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Stored(RecordId),
    Dropped(DropReason),
}

impl Ingest {
    pub fn record_id(&self) -> Option<RecordId> {
        match self {
            Ingest::Stored(id) => Some(*id),
            Ingest::Dropped(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentCaptureEvent {
    pub app: PackageId,
    pub view_text: String,
    #[serde(default)]
    pub structured_fields: BTreeMap<String, String>,
    pub locus_id: String,
    #[serde(default)]
    pub flag_secure: bool,
    #[serde(default)]
    pub app_opt_out: bool,
}

/// The payload persisted for a content-capture record; features parse this
/// back out of the ephemeral store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapturedContent {
    pub view_text: String,
    pub structured_fields: BTreeMap<String, String>,
}

pub fn ingest_content_capture(
    store: &mut EphemeralStore,
    event: &ContentCaptureEvent,
    controls: &ControlState,
    now: u64,
) -> Result<Ingest, RuntimeError> {
    if event.locus_id.is_empty() {
        return Err(RuntimeError::EmptyLocus);
    }
    if event.flag_secure {
        return Ok(Ingest::Dropped(DropReason::FlagSecure));
    }
    if event.app_opt_out {
        return Ok(Ingest::Dropped(DropReason::AppOptOut));
    }
    if !controls.personalize_using_app_data {
        return Ok(Ingest::Dropped(DropReason::UserControl));
    }
    if controls.screen_capture_policy_disabled {
        return Ok(Ingest::Dropped(DropReason::PolicyDisabled));
    }
    let descriptor = DataDescriptor::new(
        DataCategory::Raw,
        DataClass::Text,
        DataSource::ScreenCapture,
        event.app.clone(),
    )?;
    let payload = serde_json::to_vec(&CapturedContent {
        view_text: event.view_text.clone(),
        structured_fields: event.structured_fields.clone(),
    })
    .expect("captured content serializes");
    let id = store.put_source(
        descriptor,
        payload,
        Some(event.locus_id.clone()),
        now,
        DEFAULT_TTL_MS,
    )?;
    Ok(Ingest::Stored(id))
}

pub fn ingest_share_data(
    store: &mut EphemeralStore,
    app: &PackageId,
    payload: Vec<u8>,
    locus_id: &str,
    controls: &ControlState,
    now: u64,
) -> Result<Ingest, RuntimeError> {
    if locus_id.is_empty() {
        return Err(RuntimeError::EmptyLocus);
    }
    if !controls.personalize_using_app_data {
        return Ok(Ingest::Dropped(DropReason::UserControl));
    }
    if controls.screen_capture_policy_disabled {
        return Ok(Ingest::Dropped(DropReason::PolicyDisabled));
    }
    let descriptor = DataDescriptor::new(
        DataCategory::Raw,
        DataClass::Structured,
        DataSource::AppPushed,
        app.clone(),
    )?;
    let id = store.put_source(descriptor, payload, Some(locus_id.to_string()), now, DEFAULT_TTL_MS)?;
    Ok(Ingest::Stored(id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSearchDoc {
    pub app: PackageId,
    pub doc_id: String,
    pub body: BTreeMap<String, String>,
    pub share_with_pcc: bool,
}

/// Who is asking: sandbox features see only docs shared with the sandbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryCaller {
    SandboxFeature,
    OwningApp,
}

/// On-device index over app-published documents. Matching is
/// case-sensitive whole-token containment over body values.
#[derive(Debug, Default)]
pub struct AppSearchIndex {
    docs: BTreeMap<(PackageId, String), AppSearchDoc>,
}

impl AppSearchIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a document, replacing any previous (app, doc_id) entry.
    pub fn put(&mut self, doc: AppSearchDoc) {
        self.docs.insert((doc.app.clone(), doc.doc_id.clone()), doc);
    }

    pub fn query(&self, term: &str, caller: QueryCaller) -> Vec<&AppSearchDoc> {
        self.docs
            .values()
            .filter(|d| d.share_with_pcc || caller == QueryCaller::OwningApp)
            .filter(|d| {
                d.body
                    .values()
                    .any(|v| v.split_whitespace().any(|token| token == term))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AudioOrigin {
    FrameworkAudio,
    Microphone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapturePolicy {
    AllowAll,
    AllowCaptureByNone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioFrame {
    pub origin: AudioOrigin,
    #[serde(with = "crate::b64")]
    pub samples: Vec<u8>,
    /// Consulted only for FrameworkAudio frames.
    pub capture_policy: CapturePolicy,
    /// Drives the mock recognizer; no signal processing happens here.
    pub label: Option<String>,
}

/// The payload persisted for an audio record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapturedAudio {
    #[serde(with = "crate::b64")]
    pub samples: Vec<u8>,
    pub label: Option<String>,
}

pub fn capture_audio(
    store: &mut EphemeralStore,
    frame: &AudioFrame,
    app: &PackageId,
    controls: &ControlState,
    now: u64,
) -> Result<Ingest, RuntimeError> {
    let source = match frame.origin {
        AudioOrigin::FrameworkAudio => {
            if frame.capture_policy == CapturePolicy::AllowCaptureByNone {
                return Ok(Ingest::Dropped(DropReason::AppOptOut));
            }
            DataSource::FrameworkAudio
        }
        AudioOrigin::Microphone => {
            if !controls.mic_enabled {
                return Ok(Ingest::Dropped(DropReason::SensorToggle));
            }
            DataSource::Microphone
        }
    };
    let descriptor =
        DataDescriptor::new(DataCategory::Raw, DataClass::Audio, source, app.clone())?;
    let payload = serde_json::to_vec(&CapturedAudio {
        samples: frame.samples.clone(),
        label: frame.label.clone(),
    })
    .expect("captured audio serializes");
    let id = store.put_source(descriptor, payload, None, now, DEFAULT_TTL_MS)?;
    Ok(Ingest::Stored(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub face_present: bool,
    pub timestamp: u64,
}

pub fn capture_camera(
    store: &mut EphemeralStore,
    frame: &CameraFrame,
    app: &PackageId,
    controls: &ControlState,
    now: u64,
) -> Result<Ingest, RuntimeError> {
    if !controls.camera_enabled {
        return Ok(Ingest::Dropped(DropReason::SensorToggle));
    }
    let descriptor = DataDescriptor::new(
        DataCategory::Raw,
        DataClass::Image,
        DataSource::Camera,
        app.clone(),
    )?;
    let payload = serde_json::to_vec(frame).expect("camera frame serializes");
    let id = store.put_source(descriptor, payload, None, now, DEFAULT_TTL_MS)?;
    Ok(Ingest::Stored(id))
}

/// Gate-then-store for the remaining ambient feeds (notifications,
/// contacts, app launches, shortcuts, location). They share one gate: the
/// personalization toggle.
pub fn ingest_ambient(
    store: &mut EphemeralStore,
    class: DataClass,
    source: DataSource,
    app: &PackageId,
    payload: Vec<u8>,
    controls: &ControlState,
    now: u64,
) -> Result<Ingest, RuntimeError> {
    if !controls.personalize_using_app_data {
        return Ok(Ingest::Dropped(DropReason::UserControl));
    }
    let descriptor = DataDescriptor::new(DataCategory::Raw, class, source, app.clone())?;
    let id = store.put_source(descriptor, payload, None, now, DEFAULT_TTL_MS)?;
    Ok(Ingest::Stored(id))
}
