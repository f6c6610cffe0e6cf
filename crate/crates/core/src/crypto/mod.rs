//! Crypto primitives shared by the secure aggregation and PIR protocols:
//! prime-field arithmetic, Shamir threshold sharing, Diffie-Hellman key
//! agreement, deterministic seed expansion, and an additively homomorphic
//! public-key scheme (Paillier).
//!
//! Parameter sizes are desk-scale and deliberately non-production; the key
//! size is a config knob.

pub mod codec;
pub mod field;
pub mod kx;
pub mod paillier;
pub mod prf;
pub mod shamir;

pub use field::FieldElement;
pub use kx::{agree, kx_keygen, KxGroup, KxPrivate, KxPublic};
pub use paillier::{
    he_add, he_dec, he_enc, he_enc_u64, he_keygen, he_scalar_mul, he_scalar_mul_u64, HeCiphertext,
    HeKeypair, HePublicKey, HeSecretKey,
};
pub use prf::{expand, expand_bytes, Seed};
pub use shamir::{reconstruct, reconstruct_bytes, share, share_bytes, ByteShare, SecretShare};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid threshold: t={t}, n={n}")]
    InvalidThreshold { t: usize, n: usize },
    #[error("need at least {need} shares, got {got}")]
    NotEnoughShares { need: usize, got: usize },
    #[error("duplicate share evaluation point")]
    DuplicateShare,
    #[error("share evaluation point must be nonzero")]
    ZeroSharePoint,
    #[error("inconsistent share set: {0}")]
    InconsistentShares(String),
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("key group mismatch")]
    GroupMismatch,
    #[error("malformed encoding: {0}")]
    Codec(String),
    #[error("plaintext out of range")]
    PlaintextRange,
}
