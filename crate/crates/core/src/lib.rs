//! Desk-scale simulator of a private compute sandbox architecture.
//!
//! The simulator models an OS-level isolated compute region whose only
//! network egress is a narrow gateway offering three channels: federated
//! compute backed by a masked-sum secure aggregation protocol, private
//! information retrieval over additively homomorphic encryption, and a
//! digest-pinned download-only transport. Reference features (smart reply,
//! live captioning, screen attention) exercise every control path.
//!
//! Everything is deterministic: time is simulated, and all randomness is
//! derived from a scenario seed.

pub mod crypto;

/// Base64 (standard alphabet) serde adapter for binary payload fields.
pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        STANDARD.decode(s.as_bytes()).map_err(serde::de::Error::custom)
    }
}
pub mod features;
pub mod fleet;
pub mod gateway;
pub mod pir;
pub mod policy;
pub mod runtime;
pub mod secagg;
pub mod sources;
