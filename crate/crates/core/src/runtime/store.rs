//! TTL-bounded in-memory record store with provenance tracking.
//!
//! Records become unreadable the instant their TTL elapses (the boundary
//! itself is inclusive: a record with ttl T is readable at created_at + T).
//! Derived records carry the ids of their inputs so locus-id deletion
//! cascades over the full provenance cone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::{DataCategory, DataDescriptor, DataSource};

use super::RuntimeError;

/// Default record TTL: 15 simulated minutes.
pub const DEFAULT_TTL_MS: u64 = 900_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EphemeralRecord {
    pub id: RecordId,
    pub descriptor: DataDescriptor,
    pub payload: Vec<u8>,
    pub locus_id: Option<String>,
    pub created_at: u64,
    pub ttl_ms: u64,
    /// Input record ids for Derived records; empty for Raw/Metadata.
    pub parents: Vec<RecordId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRange {
    All,
    /// Inclusive on both ends.
    Between(u64, u64),
}

/// Sources whose records are tied to an app-supplied locus id.
fn source_carries_locus(source: DataSource) -> bool {
    matches!(source, DataSource::ScreenCapture | DataSource::AppPushed)
}

#[derive(Debug, Default)]
pub struct EphemeralStore {
    records: BTreeMap<RecordId, EphemeralRecord>,
    next_id: u64,
}

impl EphemeralStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(
        &mut self,
        descriptor: DataDescriptor,
        payload: Vec<u8>,
        locus_id: Option<String>,
        created_at: u64,
        ttl_ms: u64,
        parents: Vec<RecordId>,
    ) -> Result<RecordId, RuntimeError> {
        if ttl_ms == 0 {
            return Err(RuntimeError::NonPositiveTtl);
        }
        let wants_locus = source_carries_locus(descriptor.source);
        if wants_locus != locus_id.is_some() {
            return Err(RuntimeError::LocusMismatch { data_source: descriptor.source });
        }
        let id = RecordId(self.next_id);
        self.next_id += 1;
        self.records.insert(
            id,
            EphemeralRecord { id, descriptor, payload, locus_id, created_at, ttl_ms, parents },
        );
        Ok(id)
    }

    /// Stores a record produced by a data source (category Raw or Metadata).
    pub fn put_source(
        &mut self,
        descriptor: DataDescriptor,
        payload: Vec<u8>,
        locus_id: Option<String>,
        created_at: u64,
        ttl_ms: u64,
    ) -> Result<RecordId, RuntimeError> {
        if descriptor.category == DataCategory::Derived {
            return Err(RuntimeError::CategoryDiscipline(
                "Derived records are created by in-sandbox computation, not sources".into(),
            ));
        }
        self.insert(descriptor, payload, locus_id, created_at, ttl_ms, Vec::new())
    }

    /// Stores the result of in-sandbox computation over existing records.
    pub fn put_derived(
        &mut self,
        descriptor: DataDescriptor,
        payload: Vec<u8>,
        parents: &[RecordId],
        created_at: u64,
        ttl_ms: u64,
    ) -> Result<RecordId, RuntimeError> {
        if descriptor.category != DataCategory::Derived {
            return Err(RuntimeError::CategoryDiscipline(
                "computation output must be category Derived".into(),
            ));
        }
        if parents.is_empty() {
            return Err(RuntimeError::CategoryDiscipline(
                "Derived records must name their inputs".into(),
            ));
        }
        // Inherit the locus of the first locus-bearing parent when the
        // derived source itself is locus-bound.
        let locus = if source_carries_locus(descriptor.source) {
            parents.iter().find_map(|p| self.records.get(p).and_then(|r| r.locus_id.clone()))
        } else {
            None
        };
        self.insert(descriptor, payload, locus, created_at, ttl_ms, parents.to_vec())
    }

    fn expired(record: &EphemeralRecord, now: u64) -> bool {
        now > record.created_at + record.ttl_ms
    }

    pub fn get(&self, id: RecordId, now: u64) -> Result<&EphemeralRecord, RuntimeError> {
        let record = self.records.get(&id).ok_or(RuntimeError::NotFound(id))?;
        if Self::expired(record, now) {
            return Err(RuntimeError::Expired(id));
        }
        Ok(record)
    }

    /// All unexpired records, in insertion order.
    pub fn live_records(&self, now: u64) -> impl Iterator<Item = &EphemeralRecord> {
        self.records.values().filter(move |r| !Self::expired(r, now))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Removes every expired record, returning how many were dropped.
    pub fn purge_expired(&mut self, now: u64) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| !Self::expired(r, now));
        before - self.records.len()
    }

    /// Deletes every record tagged with the locus id plus the full
    /// provenance cone derived from those records. Unknown locus: 0.
    pub fn delete_by_locus(&mut self, locus_id: &str) -> usize {
        let mut doomed: Vec<RecordId> = self
            .records
            .values()
            .filter(|r| r.locus_id.as_deref() == Some(locus_id))
            .map(|r| r.id)
            .collect();
        // Fixpoint over parent edges: a record dies if any ancestor died.
        loop {
            let grown: Vec<RecordId> = self
                .records
                .values()
                .filter(|r| !doomed.contains(&r.id) && r.parents.iter().any(|p| doomed.contains(p)))
                .map(|r| r.id)
                .collect();
            if grown.is_empty() {
                break;
            }
            doomed.extend(grown);
        }
        for id in &doomed {
            self.records.remove(id);
        }
        doomed.len()
    }

    /// Deletes records created inside the range; total over valid input.
    pub fn clear_data(&mut self, range: TimeRange) -> Result<usize, RuntimeError> {
        let (start, end) = match range {
            TimeRange::All => (0, u64::MAX),
            TimeRange::Between(s, e) => {
                if s > e {
                    return Err(RuntimeError::InvertedInterval { start: s, end: e });
                }
                (s, e)
            }
        };
        let before = self.records.len();
        self.records.retain(|_, r| r.created_at < start || r.created_at > end);
        Ok(before - self.records.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PackageId;

    fn descriptor(category: DataCategory, source: DataSource) -> DataDescriptor {
        let class = crate::policy::DATA_TAXONOMY
            .iter()
            .find(|(_, s)| *s == source)
            .map(|(c, _)| *c)
            .unwrap();
        DataDescriptor::new(category, class, source, PackageId::new("com.example.app").unwrap())
            .unwrap()
    }

    fn text_raw() -> DataDescriptor {
        descriptor(DataCategory::Raw, DataSource::ScreenCapture)
    }

    #[test]
    fn ttl_boundary_is_inclusive() {
        let mut store = EphemeralStore::new();
        let id = store
            .put_source(text_raw(), b"hello".to_vec(), Some("msg-1".into()), 0, DEFAULT_TTL_MS)
            .unwrap();
        assert_eq!(store.get(id, DEFAULT_TTL_MS).unwrap().payload, b"hello");
        assert_eq!(store.get(id, DEFAULT_TTL_MS + 1), Err(RuntimeError::Expired(id)));
    }

    #[test]
    fn unknown_id_is_not_found() {
        let store = EphemeralStore::new();
        assert_eq!(store.get(RecordId(5), 0), Err(RuntimeError::NotFound(RecordId(5))));
    }

    #[test]
    fn purge_counts_only_expired() {
        let mut store = EphemeralStore::new();
        store
            .put_source(text_raw(), vec![1], Some("a".into()), 0, DEFAULT_TTL_MS)
            .unwrap();
        store
            .put_source(text_raw(), vec![2], Some("b".into()), 500_000, DEFAULT_TTL_MS)
            .unwrap();
        assert_eq!(store.purge_expired(DEFAULT_TTL_MS + 1), 1);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn locus_cascade_includes_derived_records() {
        let mut store = EphemeralStore::new();
        let a = store.put_source(text_raw(), vec![1], Some("msg-42".into()), 0, 1000).unwrap();
        let b = store.put_source(text_raw(), vec![2], Some("msg-42".into()), 0, 1000).unwrap();
        let derived = descriptor(DataCategory::Derived, DataSource::ScreenCapture);
        store.put_derived(derived, vec![3], &[a, b], 0, 1000).unwrap();
        // unrelated record survives
        store.put_source(text_raw(), vec![4], Some("other".into()), 0, 1000).unwrap();
        assert_eq!(store.delete_by_locus("msg-42"), 3);
        assert_eq!(store.len(), 1);
        assert_eq!(store.delete_by_locus("nope"), 0);
    }

    #[test]
    fn locus_free_records_never_match() {
        let mut store = EphemeralStore::new();
        let audio = descriptor(DataCategory::Raw, DataSource::FrameworkAudio);
        store.put_source(audio, vec![1], None, 0, 1000).unwrap();
        assert_eq!(store.delete_by_locus("anything"), 0);
    }

    #[test]
    fn clear_data_ranges() {
        let mut store = EphemeralStore::new();
        for t in [0u64, 10, 20, 30, 40] {
            store
                .put_source(text_raw(), vec![t as u8], Some(format!("l{t}")), t, 1000)
                .unwrap();
        }
        assert_eq!(store.clear_data(TimeRange::Between(0, 20)).unwrap(), 3);
        assert_eq!(store.clear_data(TimeRange::Between(25, 25)).unwrap(), 0);
        assert_eq!(
            store.clear_data(TimeRange::Between(9, 3)),
            Err(RuntimeError::InvertedInterval { start: 9, end: 3 })
        );
        assert_eq!(store.clear_data(TimeRange::All).unwrap(), 2);
        assert!(store.is_empty());
    }

    #[test]
    fn locus_invariant_enforced() {
        let mut store = EphemeralStore::new();
        // Screen capture without a locus: rejected.
        assert!(store.put_source(text_raw(), vec![], None, 0, 1000).is_err());
        // Audio with a locus: rejected.
        let audio = descriptor(DataCategory::Raw, DataSource::FrameworkAudio);
        assert!(store.put_source(audio, vec![], Some("x".into()), 0, 1000).is_err());
    }

    #[test]
    fn category_discipline() {
        let mut store = EphemeralStore::new();
        let derived = descriptor(DataCategory::Derived, DataSource::ScreenCapture);
        assert!(store.put_source(derived.clone(), vec![], Some("x".into()), 0, 1000).is_err());
        assert!(store.put_derived(derived, vec![], &[], 0, 1000).is_err());
        assert!(store.put_derived(text_raw(), vec![], &[RecordId(0)], 0, 1000).is_err());
    }
}
