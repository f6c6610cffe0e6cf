//! Isolated process simulation: per-process private state, and ephemeral
//! processes that rotate to a fresh empty successor when their lifetime
//! elapses.

use std::collections::HashMap;

use crate::policy::PackageId;

use super::RuntimeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsolatedProcessSpec {
    pub owner: PackageId,
    pub ephemeral: bool,
    pub max_lifetime_ms: u64,
}

/// Handle to a process incarnation. Rotation invalidates old handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProcessHandle {
    pub slot: u64,
    pub generation: u64,
}

#[derive(Debug)]
struct ProcessSlot {
    spec: IsolatedProcessSpec,
    generation: u64,
    spawned_at: u64,
    state: HashMap<String, Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct ProcessTable {
    slots: HashMap<u64, ProcessSlot>,
    next_slot: u64,
}

impl ProcessTable {
    pub fn spawn(
        &mut self,
        spec: IsolatedProcessSpec,
        now: u64,
    ) -> Result<ProcessHandle, RuntimeError> {
        if spec.ephemeral && spec.max_lifetime_ms == 0 {
            return Err(RuntimeError::DegenerateLifetime);
        }
        let slot = self.next_slot;
        self.next_slot += 1;
        self.slots.insert(
            slot,
            ProcessSlot { spec, generation: 0, spawned_at: now, state: HashMap::new() },
        );
        Ok(ProcessHandle { slot, generation: 0 })
    }

    /// Rotates every ephemeral process whose lifetime has elapsed. The
    /// successor starts with empty state; old handles become invalid.
    pub fn rotate(&mut self, now: u64) {
        for slot in self.slots.values_mut() {
            if !slot.spec.ephemeral {
                continue;
            }
            while slot.spawned_at + slot.spec.max_lifetime_ms < now {
                slot.spawned_at += slot.spec.max_lifetime_ms;
                slot.generation += 1;
                slot.state.clear();
            }
        }
    }

    /// The live handle for a slot (its current incarnation).
    pub fn current(&self, handle: ProcessHandle) -> Option<ProcessHandle> {
        self.slots
            .get(&handle.slot)
            .map(|s| ProcessHandle { slot: handle.slot, generation: s.generation })
    }

    fn live_slot(&mut self, handle: ProcessHandle) -> Result<&mut ProcessSlot, RuntimeError> {
        let slot = self.slots.get_mut(&handle.slot).ok_or(RuntimeError::InvalidHandle)?;
        if slot.generation != handle.generation {
            return Err(RuntimeError::InvalidHandle);
        }
        Ok(slot)
    }

    pub fn write_state(
        &mut self,
        handle: ProcessHandle,
        key: &str,
        value: Vec<u8>,
    ) -> Result<(), RuntimeError> {
        self.live_slot(handle)?.state.insert(key.to_string(), value);
        Ok(())
    }

    pub fn read_state(
        &mut self,
        handle: ProcessHandle,
        key: &str,
    ) -> Result<Option<Vec<u8>>, RuntimeError> {
        Ok(self.live_slot(handle)?.state.get(key).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ephemeral: bool, lifetime: u64) -> IsolatedProcessSpec {
        IsolatedProcessSpec {
            owner: PackageId::new("com.google.android.as").unwrap(),
            ephemeral,
            max_lifetime_ms: lifetime,
        }
    }

    #[test]
    fn ephemeral_rotation_invalidates_and_clears() {
        let mut table = ProcessTable::default();
        let h = table.spawn(spec(true, 60_000), 0).unwrap();
        table.write_state(h, "k", vec![1, 2, 3]).unwrap();
        table.rotate(60_000);
        // Boundary: still the same incarnation at exactly the lifetime.
        assert_eq!(table.read_state(h, "k").unwrap(), Some(vec![1, 2, 3]));
        table.rotate(60_001);
        assert_eq!(table.read_state(h, "k"), Err(RuntimeError::InvalidHandle));
        let successor = table.current(h).unwrap();
        assert_eq!(successor.generation, 1);
        assert_eq!(table.read_state(successor, "k").unwrap(), None);
    }

    #[test]
    fn persistent_process_survives_any_advance() {
        let mut table = ProcessTable::default();
        let h = table.spawn(spec(false, 0), 0).unwrap();
        table.write_state(h, "k", vec![9]).unwrap();
        table.rotate(u64::MAX);
        assert_eq!(table.read_state(h, "k").unwrap(), Some(vec![9]));
    }

    #[test]
    fn spawns_are_disjoint() {
        let mut table = ProcessTable::default();
        let a = table.spawn(spec(true, 1000), 0).unwrap();
        let b = table.spawn(spec(true, 1000), 0).unwrap();
        assert_ne!(a, b);
        table.write_state(a, "k", vec![1]).unwrap();
        assert_eq!(table.read_state(b, "k").unwrap(), None);
    }

    #[test]
    fn degenerate_lifetime_rejected() {
        let mut table = ProcessTable::default();
        assert_eq!(table.spawn(spec(true, 0), 0), Err(RuntimeError::DegenerateLifetime));
    }

    #[test]
    fn rotation_never_exposes_prior_state() {
        // Writes before a rotation are unreadable after it, across many
        // random schedules.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut table = ProcessTable::default();
            let mut now = 0u64;
            let mut h = table.spawn(spec(true, 1000), 0).unwrap();
            let mut wrote_this_gen = false;
            for _ in 0..100 {
                match rng.random_range(0..3) {
                    0 => {
                        if table.write_state(h, "k", vec![1]).is_ok() {
                            wrote_this_gen = true;
                        }
                    }
                    1 => {
                        now += rng.random_range(0..1500);
                        table.rotate(now);
                        let cur = table.current(h).unwrap();
                        if cur != h {
                            h = cur;
                            wrote_this_gen = false;
                        }
                    }
                    _ => {
                        let got = table.read_state(h, "k").unwrap();
                        assert_eq!(got.is_some(), wrote_this_gen);
                    }
                }
            }
        }
    }
}
