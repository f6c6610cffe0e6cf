//! Static policy universe: package identifiers, manifests, roles, the
//! allow-association rule set, the data taxonomy, and the compatibility
//! verifier.

pub mod assoc;
pub mod cdd;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assoc::{parse_association_config, serialize_association_config, AssociationSet};
pub use cdd::{verify_cdd, CddPartnerConfig, CddReport, CddViolation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid package id {0:?}")]
    InvalidPackageId(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("duplicate permission {0:?}")]
    DuplicatePermission(String),
    #[error("manifest is not valid JSON: {0}")]
    Json(String),
    #[error("({class:?}, {data_source:?}) is not a recognized data category row")]
    InvalidDescriptor { class: DataClass, data_source: DataSource },
}

/// Reverse-dot package identifier, e.g. `com.google.android.as`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PackageId(String);

impl PackageId {
    pub fn new(name: &str) -> Result<Self, PolicyError> {
        // [a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)+
        let segments: Vec<&str> = name.split('.').collect();
        let seg_ok = |s: &&str| {
            let mut chars = s.chars();
            matches!(chars.next(), Some('a'..='z'))
                && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
        };
        if segments.len() < 2 || !segments.iter().all(seg_ok) {
            return Err(PolicyError::InvalidPackageId(name.to_string()));
        }
        Ok(PackageId(name.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for PackageId {
    type Error = PolicyError;
    fn try_from(s: String) -> Result<Self, PolicyError> {
        PackageId::new(&s)
    }
}

impl From<PackageId> for String {
    fn from(p: PackageId) -> String {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PermissionKind {
    Install,
    Runtime,
    Signature,
}

/// A permission as declared in a manifest. The kind is classified from the
/// permission name; it matters only for runtime-revocation controls.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permission {
    pub name: String,
    pub kind: PermissionKind,
}

/// Permissions the platform treats as user-revocable at runtime.
const RUNTIME_PERMISSIONS: &[&str] = &[
    "android.permission.ACCESS_BACKGROUND_LOCATION",
    "android.permission.ACCESS_COARSE_LOCATION",
    "android.permission.ACCESS_FINE_LOCATION",
    "android.permission.CAMERA",
    "android.permission.READ_CALL_LOG",
    "android.permission.READ_CONTACTS",
    "android.permission.READ_EXTERNAL_STORAGE",
    "android.permission.READ_PHONE_STATE",
    "android.permission.READ_SMS",
    "android.permission.RECORD_AUDIO",
];

impl Permission {
    pub fn new(name: &str) -> Self {
        let kind = if RUNTIME_PERMISSIONS.contains(&name) {
            PermissionKind::Runtime
        } else if name.contains("CAPTURE_") || name.contains("MANAGE_") || name.contains("SYSTEM_")
        {
            PermissionKind::Signature
        } else {
            PermissionKind::Install
        };
        Permission { name: name.to_string(), kind }
    }
}

pub const INTERNET_PERMISSION: &str = "android.permission.INTERNET";

/// The six intelligence roles; each held by at most one package per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum Role {
    SYSTEM_UI_INTELLIGENCE,
    SYSTEM_AMBIENT_AUDIO_INTELLIGENCE,
    SYSTEM_AUDIO_INTELLIGENCE,
    SYSTEM_NOTIFICATION_INTELLIGENCE,
    SYSTEM_TEXT_INTELLIGENCE,
    SYSTEM_VISUAL_INTELLIGENCE,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::SYSTEM_UI_INTELLIGENCE,
        Role::SYSTEM_AMBIENT_AUDIO_INTELLIGENCE,
        Role::SYSTEM_AUDIO_INTELLIGENCE,
        Role::SYSTEM_NOTIFICATION_INTELLIGENCE,
        Role::SYSTEM_TEXT_INTELLIGENCE,
        Role::SYSTEM_VISUAL_INTELLIGENCE,
    ];

    pub fn parse(s: &str) -> Result<Role, PolicyError> {
        match s {
            "SYSTEM_UI_INTELLIGENCE" => Ok(Role::SYSTEM_UI_INTELLIGENCE),
            "SYSTEM_AMBIENT_AUDIO_INTELLIGENCE" => Ok(Role::SYSTEM_AMBIENT_AUDIO_INTELLIGENCE),
            "SYSTEM_AUDIO_INTELLIGENCE" => Ok(Role::SYSTEM_AUDIO_INTELLIGENCE),
            "SYSTEM_NOTIFICATION_INTELLIGENCE" => Ok(Role::SYSTEM_NOTIFICATION_INTELLIGENCE),
            "SYSTEM_TEXT_INTELLIGENCE" => Ok(Role::SYSTEM_TEXT_INTELLIGENCE),
            "SYSTEM_VISUAL_INTELLIGENCE" => Ok(Role::SYSTEM_VISUAL_INTELLIGENCE),
            other => Err(PolicyError::UnknownRole(other.to_string())),
        }
    }
}

/// Static package declaration. For in-sandbox packages the manifest is the
/// authority for every later permission check; there are no dynamic grants.
///
/// The serde form is the external JSON interface: permissions and roles as
/// arrays of strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawManifest", into = "RawManifest")]
pub struct PackageManifest {
    pub package: PackageId,
    pub permissions: BTreeSet<Permission>,
    pub roles: BTreeSet<Role>,
    pub in_pcc: bool,
    pub trusted_signature: bool,
    /// Declared egress channel packages, if any. Anything other than the
    /// gateway package is a compatibility violation for role holders.
    pub egress_channels: Vec<PackageId>,
}

/// JSON wire form of a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    package: String,
    #[serde(default)]
    permissions: Vec<String>,
    #[serde(default)]
    roles: Vec<String>,
    #[serde(default)]
    in_pcc: bool,
    #[serde(default)]
    trusted_signature: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    egress_channels: Vec<String>,
}

impl TryFrom<RawManifest> for PackageManifest {
    type Error = PolicyError;

    fn try_from(raw: RawManifest) -> Result<Self, PolicyError> {
        let package = PackageId::new(&raw.package)?;
        let mut permissions = BTreeSet::new();
        for name in &raw.permissions {
            if !permissions.insert(Permission::new(name)) {
                return Err(PolicyError::DuplicatePermission(name.clone()));
            }
        }
        // Duplicate roles collapse with set semantics.
        let mut roles = BTreeSet::new();
        for role in &raw.roles {
            roles.insert(Role::parse(role)?);
        }
        let egress_channels = raw
            .egress_channels
            .iter()
            .map(|p| PackageId::new(p))
            .collect::<Result<_, _>>()?;
        Ok(PackageManifest {
            package,
            permissions,
            roles,
            in_pcc: raw.in_pcc,
            trusted_signature: raw.trusted_signature,
            egress_channels,
        })
    }
}

impl From<PackageManifest> for RawManifest {
    fn from(m: PackageManifest) -> RawManifest {
        RawManifest {
            package: m.package.0,
            permissions: m.permissions.into_iter().map(|p| p.name).collect(),
            roles: m.roles.into_iter().map(|r| format!("{r:?}")).collect(),
            in_pcc: m.in_pcc,
            trusted_signature: m.trusted_signature,
            egress_channels: m.egress_channels.into_iter().map(|p| p.0).collect(),
        }
    }
}

impl PackageManifest {
    pub fn has_permission(&self, name: &str) -> bool {
        self.permissions.iter().any(|p| p.name == name)
    }

    pub fn has_intelligence_role(&self) -> bool {
        !self.roles.is_empty()
    }
}

/// Parses a manifest from its JSON document form.
pub fn parse_manifest(text: &str) -> Result<PackageManifest, PolicyError> {
    let raw: RawManifest =
        serde_json::from_str(text).map_err(|e| PolicyError::Json(e.to_string()))?;
    PackageManifest::try_from(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataCategory {
    Raw,
    Derived,
    Metadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataClass {
    Audio,
    Image,
    Text,
    Structured,
    Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataSource {
    FrameworkAudio,
    Screenshot,
    ScreenCapture,
    NotificationContent,
    AppSearchIndexed,
    AppPushed,
    Contacts,
    AppLaunches,
    Shortcuts,
    Microphone,
    Camera,
    LocationProvider,
}

/// The recognized (class, source) pairs of ambient and OS-level data.
pub const DATA_TAXONOMY: &[(DataClass, DataSource)] = &[
    (DataClass::Audio, DataSource::FrameworkAudio),
    (DataClass::Image, DataSource::Screenshot),
    (DataClass::Text, DataSource::ScreenCapture),
    (DataClass::Text, DataSource::NotificationContent),
    (DataClass::Structured, DataSource::AppSearchIndexed),
    (DataClass::Structured, DataSource::AppPushed),
    (DataClass::Structured, DataSource::Contacts),
    (DataClass::Structured, DataSource::AppLaunches),
    (DataClass::Structured, DataSource::Shortcuts),
    (DataClass::Audio, DataSource::Microphone),
    (DataClass::Image, DataSource::Camera),
    (DataClass::Location, DataSource::LocationProvider),
];

/// Describes a datum: its category, class, source, and originating package.
///
/// Construction is the validation point: only taxonomy rows are accepted.
/// Raw descriptors are created by data sources, Derived ones by in-sandbox
/// computation; the ephemeral store enforces that discipline.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataDescriptor {
    pub category: DataCategory,
    pub class: DataClass,
    pub source: DataSource,
    pub origin_package: PackageId,
}

impl DataDescriptor {
    pub fn new(
        category: DataCategory,
        class: DataClass,
        source: DataSource,
        origin_package: PackageId,
    ) -> Result<Self, PolicyError> {
        if !DATA_TAXONOMY.contains(&(class, source)) {
            return Err(PolicyError::InvalidDescriptor { class, data_source: source });
        }
        Ok(DataDescriptor { category, class, source, origin_package })
    }
}

/// A single directional allow-association entry as written in config.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssociationRule {
    pub target: PackageId,
    pub allowed: PackageId,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn package_id_grammar() {
        assert!(PackageId::new("com.google.android.as").is_ok());
        assert!(PackageId::new("a.b_c.d0").is_ok());
        assert!(PackageId::new("single").is_err());
        assert!(PackageId::new("Com.upper").is_err());
        assert!(PackageId::new("com.9bad").is_err());
        assert!(PackageId::new("").is_err());
        assert!(PackageId::new("a..b").is_err());
    }

    #[test]
    fn manifest_with_permission() {
        let m = parse_manifest(
            r#"{"package": "com.google.android.as",
                "permissions": ["android.permission.RECORD_AUDIO"],
                "in_pcc": true}"#,
        )
        .unwrap();
        assert!(m.has_permission("android.permission.RECORD_AUDIO"));
        assert_eq!(
            m.permissions.iter().next().unwrap().kind,
            PermissionKind::Runtime
        );
    }

    #[test]
    fn manifest_defaults_empty() {
        let m = parse_manifest(r#"{"package": "com.example.app"}"#).unwrap();
        assert!(m.permissions.is_empty());
        assert!(m.roles.is_empty());
        assert!(!m.in_pcc);
        assert!(!m.trusted_signature);
    }

    #[test]
    fn duplicate_role_collapses_duplicate_permission_errors() {
        let m = parse_manifest(
            r#"{"package": "com.example.app",
                "roles": ["SYSTEM_TEXT_INTELLIGENCE", "SYSTEM_TEXT_INTELLIGENCE"]}"#,
        )
        .unwrap();
        assert_eq!(m.roles.len(), 1);

        let err = parse_manifest(
            r#"{"package": "com.example.app",
                "permissions": ["android.permission.VIBRATE", "android.permission.VIBRATE"]}"#,
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::DuplicatePermission("android.permission.VIBRATE".into()));
    }

    #[test]
    fn unknown_role_is_an_error() {
        let err = parse_manifest(
            r#"{"package": "com.example.app", "roles": ["SYSTEM_PSYCHIC_INTELLIGENCE"]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::UnknownRole(_)));
    }

    #[test]
    fn taxonomy_rejects_unknown_pairs() {
        let pkg = PackageId::new("com.example.app").unwrap();
        assert!(DataDescriptor::new(
            DataCategory::Raw,
            DataClass::Audio,
            DataSource::Camera,
            pkg.clone()
        )
        .is_err());
        for &(class, source) in DATA_TAXONOMY {
            DataDescriptor::new(DataCategory::Raw, class, source, pkg.clone()).unwrap();
        }
    }
}
