//! Single-server private information retrieval: the client sends an
//! encrypted one-hot selection vector, the server folds the database into
//! one response per record limb using only ciphertext additions, and never
//! learns which record was selected.
//!
//! Records are padded to a common block size B with a 4-byte length prefix
//! inside the block, so variable-length resources round-trip. The server's
//! work per limb is a fixed double-and-add schedule over the database's
//! limb bits, so its operation trace is a function of the database alone,
//! never of the query.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::RngCore;
use rug::Integer;
use thiserror::Error;

use crate::crypto::codec::{Reader, Writer};
use crate::crypto::paillier::HeCiphertext;
use crate::crypto::{he_add, he_dec, he_enc_u64, CryptoError, HePublicKey, HeSecretKey};

/// Default bytes per plaintext limb; 16-bit limbs sit far below the
/// plaintext modulus of any reasonable key.
pub const DEFAULT_LIMB_SIZE: usize = 2;

const LENGTH_PREFIX: usize = 4;

#[derive(Debug, Error)]
pub enum PirError {
    #[error("index {index} out of range for {n} records")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("query has {got} ciphertexts, database has {expected} records")]
    LengthMismatch { expected: usize, got: usize },
    #[error("response corrupt: {0}")]
    Corrupt(String),
    #[error("bad database: {0}")]
    BadDatabase(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("database load failed: {0}")]
    Load(String),
}

/// An ordered, padded record set plus the public name directory fixing
/// each record's index.
#[derive(Debug, Clone)]
pub struct PirDatabase {
    blocks: Vec<Vec<u8>>,
    record_size: usize,
    limb_size: usize,
    directory: Vec<String>,
}

impl PirDatabase {
    /// Builds a database from named records; names fix the index order
    /// lexicographically.
    pub fn new(records: Vec<(String, Vec<u8>)>, limb_size: usize) -> Result<Self, PirError> {
        if records.is_empty() {
            return Err(PirError::BadDatabase("no records".into()));
        }
        if limb_size == 0 || limb_size > 7 {
            return Err(PirError::BadDatabase(format!("limb size {limb_size}")));
        }
        let mut records = records;
        records.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in records.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(PirError::BadDatabase(format!("duplicate name {:?}", pair[0].0)));
            }
        }
        let longest = records.iter().map(|(_, r)| r.len()).max().unwrap();
        if longest > u32::MAX as usize {
            return Err(PirError::BadDatabase("record too large".into()));
        }
        let record_size = (LENGTH_PREFIX + longest).div_ceil(limb_size) * limb_size;
        let mut directory = Vec::with_capacity(records.len());
        let mut blocks = Vec::with_capacity(records.len());
        for (name, payload) in records {
            let mut block = Vec::with_capacity(record_size);
            block.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            block.extend_from_slice(&payload);
            block.resize(record_size, 0);
            directory.push(name);
            blocks.push(block);
        }
        Ok(PirDatabase { blocks, record_size, limb_size, directory })
    }

    /// Loads a JSON object mapping record name to base64 payload.
    pub fn from_json(text: &str, limb_size: usize) -> Result<Self, PirError> {
        let map: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| PirError::Load(e.to_string()))?;
        let records = map
            .into_iter()
            .map(|(name, b64)| {
                match BASE64.decode(b64.as_bytes()) {
                    Ok(payload) => Ok((name, payload)),
                    Err(e) => Err(PirError::Load(format!("record {name:?}: {e}"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(records, limb_size)
    }

    /// Loads every regular file in a directory as one record named after
    /// the file.
    pub fn from_dir(path: &Path, limb_size: usize) -> Result<Self, PirError> {
        let mut records = Vec::new();
        let entries = std::fs::read_dir(path).map_err(|e| PirError::Load(e.to_string()))?;
        for entry in entries {
            let entry = entry.map_err(|e| PirError::Load(e.to_string()))?;
            if !entry.file_type().map_err(|e| PirError::Load(e.to_string()))?.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let payload =
                std::fs::read(entry.path()).map_err(|e| PirError::Load(e.to_string()))?;
            records.push((name, payload));
        }
        Self::new(records, limb_size)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Padded block size B.
    pub fn record_size(&self) -> usize {
        self.record_size
    }

    pub fn limb_size(&self) -> usize {
        self.limb_size
    }

    pub fn limbs_per_record(&self) -> usize {
        self.record_size / self.limb_size
    }

    /// The public name directory, in index order.
    pub fn directory(&self) -> &[String] {
        &self.directory
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.directory.binary_search_by(|d| d.as_str().cmp(name)).ok()
    }

    fn limb(&self, record: usize, limb: usize) -> u64 {
        let bytes = &self.blocks[record][limb * self.limb_size..(limb + 1) * self.limb_size];
        let mut buf = [0u8; 8];
        buf[..bytes.len()].copy_from_slice(bytes);
        u64::from_le_bytes(buf)
    }
}

#[derive(Debug, Clone)]
pub struct PirQuery {
    pub public: HePublicKey,
    pub ciphertexts: Vec<HeCiphertext>,
}

#[derive(Debug, Clone)]
pub struct PirResponse {
    pub ciphertexts: Vec<HeCiphertext>,
}

/// Server-side operation counts; equal for every query against the same
/// database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerTrace {
    pub ciphertext_adds: usize,
}

/// Encrypts the one-hot selection vector for `index`.
pub fn build_query(
    index: usize,
    n: usize,
    pk: &HePublicKey,
    rng: &mut dyn RngCore,
) -> Result<PirQuery, PirError> {
    if index >= n {
        return Err(PirError::IndexOutOfRange { index, n });
    }
    let ciphertexts = (0..n)
        .map(|j| he_enc_u64(pk, u64::from(j == index), rng))
        .collect::<Result<_, _>>()?;
    Ok(PirQuery { public: pk.clone(), ciphertexts })
}

/// Folds the database into one ciphertext per limb position:
/// response_l encrypts the selected record's limb l. Pure ciphertext
/// additions on a schedule fixed by the database's limb bits.
pub fn answer(query: &PirQuery, db: &PirDatabase) -> Result<(PirResponse, AnswerTrace), PirError> {
    if query.ciphertexts.len() != db.len() {
        return Err(PirError::LengthMismatch {
            expected: db.len(),
            got: query.ciphertexts.len(),
        });
    }
    let pk = &query.public;
    if Integer::from(1) << (db.limb_size as u32 * 8) > *pk.plaintext_modulus() {
        return Err(PirError::BadDatabase("limb exceeds plaintext space".into()));
    }
    let limb_bits = db.limb_size * 8;
    let mut adds = 0usize;
    let mut ciphertexts = Vec::with_capacity(db.limbs_per_record());
    for l in 0..db.limbs_per_record() {
        // Interleaved double-and-add over all records at once: after the
        // loop acc encrypts sum_j query_j * limb(j, l).
        let mut acc = HeCiphertext(Integer::from(1));
        for bit in (0..limb_bits).rev() {
            acc = he_add(pk, &acc, &acc);
            adds += 1;
            for (j, c) in query.ciphertexts.iter().enumerate() {
                if db.limb(j, l) >> bit & 1 == 1 {
                    acc = he_add(pk, &acc, c);
                    adds += 1;
                }
            }
        }
        ciphertexts.push(acc);
    }
    Ok((PirResponse { ciphertexts }, AnswerTrace { ciphertext_adds: adds }))
}

/// Decrypts and unpads a response. The stored length prefix bounds-checks
/// the result, so tampering surfaces as a corruption error.
pub fn decode(
    response: &PirResponse,
    sk: &HeSecretKey,
    record_size: usize,
    limb_size: usize,
) -> Result<Vec<u8>, PirError> {
    if response.ciphertexts.len() * limb_size != record_size {
        return Err(PirError::Corrupt(format!(
            "{} limbs cannot form a {record_size}-byte record",
            response.ciphertexts.len()
        )));
    }
    let mut block = Vec::with_capacity(record_size);
    let limit = Integer::from(1) << (limb_size as u32 * 8);
    for c in &response.ciphertexts {
        let m = he_dec(sk, c);
        if m >= limit {
            return Err(PirError::Corrupt("limb outside byte range".into()));
        }
        let v = m.to_u64().expect("limb fits u64");
        block.extend_from_slice(&v.to_le_bytes()[..limb_size]);
    }
    let len = u32::from_le_bytes(block[..LENGTH_PREFIX].try_into().unwrap()) as usize;
    if len > record_size - LENGTH_PREFIX {
        return Err(PirError::Corrupt(format!("length prefix {len} exceeds block")));
    }
    Ok(block[LENGTH_PREFIX..LENGTH_PREFIX + len].to_vec())
}

impl PirQuery {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_block(&self.public.to_bytes());
        w.put_u32(self.ciphertexts.len() as u32);
        for c in &self.ciphertexts {
            w.put_block(&c.to_bytes(&self.public));
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, PirError> {
        let mut r = Reader::new(buf)?;
        let public = HePublicKey::from_bytes(r.get_block()?)?;
        let n = r.get_u32()?;
        let ciphertexts = (0..n)
            .map(|_| Ok(HeCiphertext::from_bytes(r.get_block()?, &public)?))
            .collect::<Result<_, PirError>>()?;
        r.expect_end()?;
        Ok(PirQuery { public, ciphertexts })
    }
}

impl PirResponse {
    pub fn to_bytes(&self, pk: &HePublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u32(self.ciphertexts.len() as u32);
        for c in &self.ciphertexts {
            w.put_block(&c.to_bytes(pk));
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8], pk: &HePublicKey) -> Result<Self, PirError> {
        let mut r = Reader::new(buf)?;
        let n = r.get_u32()?;
        let ciphertexts = (0..n)
            .map(|_| Ok(HeCiphertext::from_bytes(r.get_block()?, pk)?))
            .collect::<Result<_, PirError>>()?;
        r.expect_end()?;
        Ok(PirResponse { ciphertexts })
    }
}
