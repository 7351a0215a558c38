//! The merge and corr operator kernels, over snapshots of their inputs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{cmp_key_bound, Bound, DomainPoint, KeyInterval};
use crate::pstore::{PredId, Value};
use crate::signal::{interval_of, sens_coalesce, sens_lookup, sens_touching, DeltaKey, DeltaMap, DeltaVal, SensKey, SensMap};

pub type DeltaChanges = Vec<(DeltaKey, Option<DeltaVal>)>;
pub type SensChanges = Vec<(SensKey, Option<Bound>)>;

/// Which side of `split` a record falls on: `false` below, `true` at or above.
pub fn side_of(split: &DomainPoint, pred: PredId, key: &[Value]) -> bool {
    split.cmp_record(pred, key) != Ordering::Less
}

/// Revisit the merge at `keys`: the later input wins, a retraction included.
pub fn merge_delta<'a>(
    left: &DeltaMap,
    right: &DeltaMap,
    split: &DomainPoint,
    keys: impl IntoIterator<Item = &'a DeltaKey>,
) -> [DeltaChanges; 2] {
    let mut out: [DeltaChanges; 2] = [Vec::new(), Vec::new()];
    for k in keys {
        let v = right.get(k).or_else(|| left.get(k)).cloned();
        out[side_of(split, k.0, &k.1) as usize].push((k.clone(), v));
    }
    out
}

fn hull(a: &mut KeyInterval, b: &KeyInterval) -> bool {
    let mut grew = false;
    if b.lo < a.lo {
        a.lo = b.lo.clone();
        grew = true;
    }
    if b.hi > a.hi {
        a.hi = b.hi.clone();
        grew = true;
    }
    grew
}

/// Recompute a sensitivity merge around the changed `spans`.
///
/// Each span is widened until nothing in the inputs or outputs straddles its
/// edge; inside it the outputs are rebuilt from the coalesced inputs.
pub fn merge_sens(inputs: [&SensMap; 2], outputs: [&SensMap; 2], split: &DomainPoint, spans: Vec<KeyInterval>) -> [SensChanges; 2] {
    let mut out: [SensChanges; 2] = [Vec::new(), Vec::new()];
    let mut done: Vec<KeyInterval> = Vec::new();
    for span in sens_coalesce(spans) {
        if done.iter().any(|d| d.covers(&span)) {
            continue;
        }
        let mut r = span;
        loop {
            let mut grew = false;
            for m in inputs.iter().chain(outputs.iter()) {
                for t in sens_touching(m, &r) {
                    grew |= hull(&mut r, &t);
                }
            }
            if !grew {
                break;
            }
        }
        let mut ins = Vec::new();
        for m in inputs {
            ins.extend(sens_touching(m, &r));
        }
        let mut new: [BTreeMap<SensKey, Bound>; 2] = [BTreeMap::new(), BTreeMap::new()];
        for iv in sens_coalesce(ins) {
            let (a, b) = iv.split(split);
            for (i, part) in [a, b].into_iter().enumerate() {
                if let Some(p) = part {
                    new[i].insert((p.pred, p.lo), p.hi);
                }
            }
        }
        for i in 0..2 {
            let old: BTreeMap<SensKey, Bound> = sens_touching(outputs[i], &r).into_iter().map(|t| ((t.pred, t.lo), t.hi)).collect();
            for (k, hi) in &old {
                if !new[i].contains_key(k) {
                    out[i].push((k.clone(), None));
                } else if new[i][k] != *hi {
                    out[i].push((k.clone(), Some(new[i][k].clone())));
                }
            }
            for (k, hi) in &new[i] {
                if !old.contains_key(k) {
                    out[i].push((k.clone(), Some(hi.clone())));
                }
            }
        }
        done.push(r);
    }
    out
}

/// The inputs of one corr operator.
#[derive(Clone, Copy)]
pub struct CorrInputs<'a> {
    pub sens: &'a SensMap,
    pub corr: [Option<&'a DeltaMap>; 2],
    pub delta: Option<&'a DeltaMap>,
}

impl<'a> CorrInputs<'a> {
    fn sources(&self) -> impl Iterator<Item = &'a DeltaMap> {
        self.delta.into_iter().chain(self.corr[0]).chain(self.corr[1])
    }

    /// What the output holds at `k`: the delta before the corrections, and
    /// only if some sensitivity interval contains the key.
    pub fn value(&self, k: &DeltaKey) -> Option<DeltaVal> {
        sens_lookup(self.sens, k.0, &k.1)?;
        self.sources().find_map(|m| m.get(k)).cloned()
    }
}

/// A range of keys of one predicate, each end open or closed.
#[derive(Clone, Debug)]
struct Piece {
    pred: PredId,
    lo: Bound,
    lo_open: bool,
    hi: Bound,
    hi_open: bool,
}

/// Parts of `iv` not covered by any of `cut` (sorted, same predicate or not).
fn uncovered(iv: &KeyInterval, cut: &[KeyInterval]) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut cur = Piece { pred: iv.pred, lo: iv.lo.clone(), lo_open: false, hi: iv.hi.clone(), hi_open: false };
    for c in cut.iter().filter(|c| c.touches(iv)) {
        if c.lo > cur.lo {
            out.push(Piece { hi: c.lo.clone(), hi_open: true, ..cur.clone() });
        }
        if c.hi >= cur.hi {
            return out;
        }
        if c.hi >= cur.lo {
            cur.lo = c.hi.clone();
            cur.lo_open = true;
        }
    }
    out.push(cur);
    out
}

fn keys_in(m: &DeltaMap, p: &Piece, into: &mut BTreeSet<DeltaKey>) {
    let probe = |(q, k): &DeltaKey| {
        q.cmp(&p.pred).then_with(|| match cmp_key_bound(k, &p.lo.0) {
            Ordering::Equal if p.lo_open => Ordering::Less,
            o => o,
        })
    };
    for ((q, k), _) in m.iter_from(probe) {
        if *q != p.pred {
            break;
        }
        match cmp_key_bound(k, &p.hi.0) {
            Ordering::Greater => break,
            Ordering::Equal if p.hi_open => break,
            _ => {}
        }
        into.insert((*q, k.clone()));
    }
}

/// Keys whose coverage may differ after the sensitivity set lost `removed`
/// and gained `inserted`.
pub fn corr_candidates(inp: &CorrInputs, removed: &[KeyInterval], inserted: &[KeyInterval], into: &mut BTreeSet<DeltaKey>) {
    let mut sorted_r = removed.to_vec();
    let mut sorted_i = inserted.to_vec();
    sorted_r.sort_by(|a, b| (a.pred, &a.lo).cmp(&(b.pred, &b.lo)));
    sorted_i.sort_by(|a, b| (a.pred, &a.lo).cmp(&(b.pred, &b.lo)));
    for (ivs, cut) in [(&sorted_i, &sorted_r), (&sorted_r, &sorted_i)] {
        for iv in ivs.iter() {
            for piece in uncovered(iv, cut) {
                for m in inp.sources() {
                    keys_in(m, &piece, into);
                }
            }
        }
    }
}

/// Output changes for the candidate keys, against the current output.
pub fn corr_revisit<'a>(inp: &CorrInputs, output: &DeltaMap, keys: impl IntoIterator<Item = &'a DeltaKey>) -> DeltaChanges {
    let mut out = Vec::new();
    for k in keys {
        let v = inp.value(k);
        if output.get(k) != v.as_ref() {
            out.push((k.clone(), v));
        }
    }
    out
}

/// Intervals removed and inserted between two versions of a sensitivity set.
pub fn sens_diff(changes: &[crate::signal::Change<SensKey, Bound>]) -> (Vec<KeyInterval>, Vec<KeyInterval>) {
    use crate::signal::Change;
    let mut removed = Vec::new();
    let mut inserted = Vec::new();
    for c in changes {
        match c {
            Change::Removed(k, hi) => removed.push(interval_of(k, hi)),
            Change::Inserted(k, hi) => inserted.push(interval_of(k, hi)),
        }
    }
    (removed, inserted)
}
