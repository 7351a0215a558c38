//! Versioned signals.
//!
//! A signal is a sequence of immutable versions of a sorted record set. Each
//! publish creates a new version atomically. A reader remembers the version it
//! last saw and asks for the changes since then; the cost is proportional to
//! the number of changed keys, not to the size of the set.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{cmp_key_bound, Bound, KeyInterval};
use crate::pstore::{Key, PMap, PredId, Row, Value};

pub type VersionId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Delta,
    Sens,
    Corr,
}

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("sensitivity signals may not drop coverage (interval {0:?})")]
    SensRemoval(KeyInterval),
    #[error("version {0} is unknown (latest is {1})")]
    UnknownVersion(VersionId, VersionId),
}

/// One change between two versions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Change<K, V> {
    Removed(K, V),
    Inserted(K, V),
}

impl<K, V> Change<K, V> {
    pub fn key(&self) -> &K {
        match self {
            Change::Removed(k, _) | Change::Inserted(k, _) => k,
        }
    }
}

struct Version<K, V> {
    snapshot: PMap<K, V>,
    touched: Arc<Vec<K>>,
}

/// A signal over a sorted map from `K` to `V`. Version 0 is empty.
pub struct VersionedSignal<K, V> {
    versions: Vec<Version<K, V>>,
}

impl<K: Ord + Clone, V: Clone + Eq> Default for VersionedSignal<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Ord + Clone, V: Clone + Eq> VersionedSignal<K, V> {
    pub fn new() -> Self {
        VersionedSignal { versions: vec![Version { snapshot: PMap::new(), touched: Arc::new(vec![]) }] }
    }

    pub fn latest_version(&self) -> VersionId {
        (self.versions.len() - 1) as VersionId
    }

    pub fn latest(&self) -> &PMap<K, V> {
        &self.versions.last().expect("version 0 exists").snapshot
    }

    pub fn snapshot(&self, v: VersionId) -> Result<&PMap<K, V>, SignalError> {
        self.versions
            .get(v as usize)
            .map(|x| &x.snapshot)
            .ok_or(SignalError::UnknownVersion(v, self.latest_version()))
    }

    /// Apply `(key, Some(value))` upserts and `(key, None)` removals as one new
    /// version. Returns `None` if nothing actually changed.
    pub fn publish(&mut self, changes: impl IntoIterator<Item = (K, Option<V>)>) -> Option<VersionId> {
        let mut snap = self.latest().clone();
        let mut touched = Vec::new();
        for (k, v) in changes {
            let changed = match v {
                Some(v) => match snap.get(&k) {
                    Some(old) if *old == v => false,
                    _ => {
                        snap.insert(k.clone(), v);
                        true
                    }
                },
                None => snap.remove(&k).is_some(),
            };
            if changed {
                touched.push(k);
            }
        }
        if touched.is_empty() {
            return None;
        }
        self.versions.push(Version { snapshot: snap, touched: Arc::new(touched) });
        Some(self.latest_version())
    }

    /// Remove every record as one new version.
    pub fn reset(&mut self) -> Option<VersionId> {
        let keys: Vec<K> = self.latest().iter().map(|(k, _)| k.clone()).collect();
        self.publish(keys.into_iter().map(|k| (k, None)))
    }

    /// Records that differ between versions `a` and `b` (`a <= b`), in key
    /// order with removals before insertions for the same key.
    pub fn changes(&self, a: VersionId, b: VersionId) -> Result<Vec<Change<K, V>>, SignalError> {
        let latest = self.latest_version();
        if a > latest || b > latest {
            return Err(SignalError::UnknownVersion(a.max(b), latest));
        }
        if a >= b {
            return Ok(vec![]);
        }
        let mut keys: Vec<&K> = Vec::new();
        for v in &self.versions[a as usize + 1..=b as usize] {
            keys.extend(v.touched.iter());
        }
        keys.sort();
        keys.dedup();
        let (old, new) = (&self.versions[a as usize].snapshot, &self.versions[b as usize].snapshot);
        let mut out = Vec::new();
        for k in keys {
            let (o, n) = (old.get(k), new.get(k));
            if o == n {
                continue;
            }
            if let Some(o) = o {
                out.push(Change::Removed(k.clone(), o.clone()));
            }
            if let Some(n) = n {
                out.push(Change::Inserted(k.clone(), n.clone()));
            }
        }
        Ok(out)
    }

    /// Keys touched between `a` and `b`, deduplicated and sorted.
    pub fn touched_keys(&self, a: VersionId, b: VersionId) -> Vec<K> {
        let mut keys: Vec<K> = Vec::new();
        if a < b {
            for v in &self.versions[a as usize + 1..=b as usize] {
                keys.extend(v.touched.iter().cloned());
            }
        }
        keys.sort();
        keys.dedup();
        keys
    }

    /// Drop the stored snapshots of versions below `keep_from` that are no
    /// longer needed. Their change lists are kept so later versions still
    /// compose, but `changes` may only start at or after `keep_from`.
    pub fn compact(&mut self, keep_from: VersionId) {
        for v in self.versions.iter_mut().take(keep_from as usize) {
            v.snapshot = PMap::new();
        }
    }
}

impl<K: Ord + Clone + Serialize, V: Clone + Eq + Serialize> VersionedSignal<K, V> {
    /// Debug dump: one JSON object per version listing its records.
    pub fn dump_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a, K, V> {
            version: VersionId,
            records: Vec<(&'a K, &'a V)>,
        }
        let mut out = String::new();
        for (i, v) in self.versions.iter().enumerate() {
            let line = Line { version: i as VersionId, records: v.snapshot.iter().collect() };
            out.push_str(&serde_json::to_string(&line).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Value of a delta or correction record.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
pub enum DeltaVal {
    Upsert(Row),
    Retract,
}

impl fmt::Debug for DeltaVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaVal::Upsert(r) => write!(f, "+{r:?}"),
            DeltaVal::Retract => write!(f, "-"),
        }
    }
}

pub type DeltaKey = (PredId, Key);
pub type DeltaSignal = VersionedSignal<DeltaKey, DeltaVal>;
pub type DeltaMap = PMap<DeltaKey, DeltaVal>;

/// Sensitivity sets are stored coalesced: disjoint closed intervals keyed by
/// `(pred, lo)` with `hi` as the value.
pub type SensKey = (PredId, Bound);
pub type SensSignal = VersionedSignal<SensKey, Bound>;
pub type SensMap = PMap<SensKey, Bound>;

pub fn interval_of(k: &SensKey, hi: &Bound) -> KeyInterval {
    KeyInterval { pred: k.0, lo: k.1.clone(), hi: hi.clone() }
}

/// The interval of a coalesced set that contains `(pred, key)`, if any.
pub fn sens_lookup<'a>(set: &'a SensMap, pred: PredId, key: &[Value]) -> Option<(&'a SensKey, &'a Bound)> {
    let (k, hi) = set.upper_floor_by(|(p, lo)| {
        p.cmp(&pred).then_with(|| cmp_key_bound(key, &lo.0).reverse())
    })?;
    (k.0 == pred && cmp_key_bound(key, &hi.0) != Ordering::Greater).then_some((k, hi))
}

/// True if the coalesced set covers all of `iv`.
pub fn sens_covers(set: &SensMap, iv: &KeyInterval) -> bool {
    match set.upper_floor_by(|(p, lo)| p.cmp(&iv.pred).then_with(|| lo.cmp(&iv.lo))) {
        Some((k, hi)) => k.0 == iv.pred && *hi >= iv.hi,
        None => false,
    }
}

/// Intervals of the coalesced set that touch `iv`, in order.
pub fn sens_touching(set: &SensMap, iv: &KeyInterval) -> Vec<KeyInterval> {
    let mut out = Vec::new();
    if let Some((k, hi)) = set.upper_floor_by(|(p, lo)| p.cmp(&iv.pred).then_with(|| lo.cmp(&iv.lo))) {
        if k.0 == iv.pred && *hi >= iv.lo && k.1 < iv.lo {
            out.push(interval_of(k, hi));
        }
    }
    for (k, hi) in set.iter_from(|(p, lo)| p.cmp(&iv.pred).then_with(|| lo.cmp(&iv.lo))) {
        if k.0 != iv.pred || k.1 > iv.hi {
            break;
        }
        out.push(interval_of(k, hi));
    }
    out
}

/// Changes that add `iv` to a coalesced set: intervals to remove and the
/// single replacement to insert. Empty if `iv` is already covered.
pub fn sens_add(set: &SensMap, iv: &KeyInterval) -> (Vec<KeyInterval>, Option<KeyInterval>) {
    if iv.is_empty() || sens_covers(set, iv) {
        return (vec![], None);
    }
    let touching = sens_touching(set, iv);
    let mut merged = iv.clone();
    for t in &touching {
        if t.lo < merged.lo {
            merged.lo = t.lo.clone();
        }
        if t.hi > merged.hi {
            merged.hi = t.hi.clone();
        }
    }
    (touching, Some(merged))
}

/// Coalesce a list of intervals into disjoint, non-touching ones.
pub fn sens_coalesce(mut ivs: Vec<KeyInterval>) -> Vec<KeyInterval> {
    ivs.retain(|i| !i.is_empty());
    ivs.sort_by(|a, b| a.pred.cmp(&b.pred).then_with(|| a.lo.cmp(&b.lo)));
    let mut out: Vec<KeyInterval> = Vec::with_capacity(ivs.len());
    for iv in ivs {
        match out.last_mut() {
            Some(last) if last.touches(&iv) => {
                if iv.hi > last.hi {
                    last.hi = iv.hi;
                }
            }
            _ => out.push(iv),
        }
    }
    out
}

/// A coalesced sensitivity set together with the changes accumulated since it
/// was last drained.
#[derive(Clone, Debug, Default)]
pub struct SensBuilder {
    set: SensMap,
    pending: Vec<(SensKey, Option<Bound>)>,
}

impl SensBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self) -> &SensMap {
        &self.set
    }

    pub fn add(&mut self, iv: &KeyInterval) {
        let (removed, inserted) = sens_add(&self.set, iv);
        for r in removed {
            self.set.remove(&(r.pred, r.lo.clone()));
            self.pending.push(((r.pred, r.lo), None));
        }
        if let Some(i) = inserted {
            self.set.insert((i.pred, i.lo.clone()), i.hi.clone());
            self.pending.push(((i.pred, i.lo), Some(i.hi)));
        }
    }

    /// Changes since the last drain, suitable for [`publish_sens`].
    pub fn drain(&mut self) -> Vec<(SensKey, Option<Bound>)> {
        std::mem::take(&mut self.pending)
    }

    pub fn intervals(&self) -> Vec<KeyInterval> {
        self.set.iter().map(|(k, h)| interval_of(k, h)).collect()
    }
}

/// Publish to a sensitivity signal, rejecting any change that would leave a
/// previously covered point uncovered.
pub fn publish_sens(
    sig: &mut SensSignal,
    changes: Vec<(SensKey, Option<Bound>)>,
) -> Result<Option<VersionId>, SignalError> {
    let mut next = sig.latest().clone();
    let mut removed = Vec::new();
    for (k, v) in &changes {
        match v {
            Some(hi) => {
                next.insert(k.clone(), hi.clone());
            }
            None => {
                if let Some(hi) = next.remove(k) {
                    removed.push(interval_of(k, &hi));
                }
            }
        }
    }
    for r in removed {
        if !sens_covers(&next, &r) {
            return Err(SignalError::SensRemoval(r));
        }
    }
    Ok(sig.publish(changes))
}
