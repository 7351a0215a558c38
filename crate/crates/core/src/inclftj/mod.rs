//! Incremental maintenance of a single rule.
//!
//! A full run records, for every iterator lookup, the key range it inspected
//! and the bindings that led there. These records go into a sensitivity
//! index: one interval tree per (atom, column, key prefix), with subtree
//! maxima of the upper endpoints so stabbing queries can prune.
//!
//! When input tuples change, each changed tuple is stabbed at every column.
//! The matching records name regions of the search (fixed leading bindings
//! plus one clamped level). Those regions are re-run on both the old and the
//! new inputs, and the difference in satisfying assignments is the change in
//! derivations. Records from the new runs are added to the index.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::domain::{Bound, Elem, KeyInterval};
use crate::lftj::{run, tuple_of, Plan, Region, RegionKind, SensRecord, Tuple, View};
use crate::pstore::{PredId, Value};

/// Intervals over one column with attached payloads.
///
/// Entries are kept in a sorted prefix organized as an implicit balanced tree
/// (node `m` of range `[l, r)` is its midpoint) plus an unsorted tail that is
/// merged in once it grows past half the sorted part.
#[derive(Clone, Debug)]
pub struct IntervalIndex<T> {
    items: Vec<(Elem, Elem, T)>,
    sorted: usize,
    /// For the node at index `m`, the position of the largest `hi` in its range.
    max_at: Vec<usize>,
}

impl<T> Default for IntervalIndex<T> {
    fn default() -> Self {
        IntervalIndex { items: Vec::new(), sorted: 0, max_at: Vec::new() }
    }
}

impl<T> IntervalIndex<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn insert(&mut self, lo: Elem, hi: Elem, payload: T) {
        self.items.push((lo, hi, payload));
        let tail = self.items.len() - self.sorted;
        if tail > 16 && tail > self.sorted / 2 {
            self.rebuild();
        }
    }

    fn rebuild(&mut self) {
        self.items.sort_by(|a, b| a.0.cmp(&b.0));
        self.sorted = self.items.len();
        self.max_at = vec![0; self.sorted];
        self.build(0, self.sorted);
    }

    fn build(&mut self, l: usize, r: usize) -> Option<usize> {
        if l >= r {
            return None;
        }
        let m = (l + r) / 2;
        let mut best = m;
        for c in [self.build(l, m), self.build(m + 1, r)].into_iter().flatten() {
            if self.items[c].1 > self.items[best].1 {
                best = c;
            }
        }
        self.max_at[m] = best;
        Some(best)
    }

    /// Every entry whose interval contains `p`.
    pub fn stab<'a>(&'a self, p: &Elem, out: &mut Vec<(&'a Elem, &'a Elem, &'a T)>) {
        self.stab_range(0, self.sorted, p, out, false);
        for (lo, hi, t) in &self.items[self.sorted..] {
            if lo <= p && p <= hi {
                out.push((lo, hi, t));
            }
        }
    }

    /// Whether any entry contains `p`; stops at the first hit.
    pub fn any_contains(&self, p: &Elem) -> bool {
        let mut out = Vec::new();
        if self.stab_range(0, self.sorted, p, &mut out, true) {
            return true;
        }
        self.items[self.sorted..].iter().any(|(lo, hi, _)| lo <= p && p <= hi)
    }

    fn stab_range<'a>(
        &'a self,
        l: usize,
        r: usize,
        p: &Elem,
        out: &mut Vec<(&'a Elem, &'a Elem, &'a T)>,
        first_only: bool,
    ) -> bool {
        if l >= r {
            return false;
        }
        let m = (l + r) / 2;
        if self.items[self.max_at[m]].1.cmp(p) == Ordering::Less {
            return false;
        }
        if self.stab_range(l, m, p, out, first_only) && first_only {
            return true;
        }
        let (lo, hi, t) = &self.items[m];
        if lo > p {
            return false;
        }
        if p <= hi {
            out.push((lo, hi, t));
            if first_only {
                return true;
            }
        }
        self.stab_range(m + 1, r, p, out, first_only)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Elem, &Elem, &T)> {
        self.items.iter().map(|(l, h, t)| (l, h, t))
    }
}

/// The payload of an index entry: which region to re-run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ctx {
    pub kind: RegionKind,
    pub ctx: Vec<Value>,
}

/// Sensitivity records of one rule, indexed for stabbing.
#[derive(Clone, Debug, Default)]
pub struct SensIndex {
    trees: HashMap<(usize, usize), HashMap<Vec<Value>, IntervalIndex<Ctx>>>,
    len: usize,
}

impl SensIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn add(&mut self, r: SensRecord) {
        self.len += 1;
        self.trees
            .entry((r.atom, r.depth))
            .or_default()
            .entry(r.prefix)
            .or_default()
            .insert(r.lo, r.hi, Ctx { kind: r.kind, ctx: r.ctx });
    }

    /// Records of `atom` whose interval contains `tuple` at column `depth`.
    /// A zero-column tuple meets every whole-range record at column 0.
    pub fn stab(&self, atom: usize, depth: usize, tuple: &[Value]) -> Vec<SensRecord> {
        self.hits(atom, depth, tuple)
            .into_iter()
            .map(|(lo, hi, c)| SensRecord {
                atom,
                depth,
                prefix: tuple[..depth.min(tuple.len())].to_vec(),
                lo: lo.clone(),
                hi: hi.clone(),
                kind: c.kind,
                ctx: c.ctx.clone(),
            })
            .collect()
    }

    fn hits(&self, atom: usize, depth: usize, tuple: &[Value]) -> Vec<(&Elem, &Elem, &Ctx)> {
        let mut out = Vec::new();
        let Some(by_prefix) = self.trees.get(&(atom, depth)) else { return out };
        if tuple.is_empty() {
            if let Some(t) = by_prefix.get(&Vec::new()) {
                out.extend(t.iter());
            }
            return out;
        }
        if depth >= tuple.len() {
            return out;
        }
        if let Some(tree) = by_prefix.get(&tuple[..depth]) {
            tree.stab(&Elem::Val(tuple[depth].clone()), &mut out);
        }
        out
    }

    /// All regions that a change of `tuple` in `atom` may affect.
    pub fn regions_for(&self, atom: usize, tuple: &[Value], out: &mut BTreeSet<Region>) {
        for d in 0..tuple.len().max(1) {
            for (lo, hi, c) in self.hits(atom, d, tuple) {
                out.insert(region(lo, hi, c));
            }
        }
    }

    pub fn records(&self) -> Vec<SensRecord> {
        let mut out = Vec::new();
        for ((atom, depth), by_prefix) in &self.trees {
            for (prefix, tree) in by_prefix {
                for (lo, hi, c) in tree.iter() {
                    out.push(record(*atom, *depth, prefix.clone(), lo.clone(), hi.clone(), c));
                }
            }
        }
        out.sort();
        out
    }
}

fn record(atom: usize, depth: usize, prefix: Vec<Value>, lo: Elem, hi: Elem, c: &Ctx) -> SensRecord {
    SensRecord { atom, depth, prefix, lo, hi, kind: c.kind, ctx: c.ctx.clone() }
}

fn region(lo: &Elem, hi: &Elem, c: &Ctx) -> Region {
    match c.kind {
        RegionKind::Var(_) => Region { kind: c.kind, ctx: c.ctx.clone(), lo: lo.clone(), hi: hi.clone() },
        RegionKind::Check(_) => Region { kind: c.kind, ctx: c.ctx.clone(), lo: Elem::NegInf, hi: Elem::PosInf },
    }
}

/// The union of regions to re-run, usable as a filter over assignments.
#[derive(Clone, Debug, Default)]
pub struct ChangeOracle {
    pub regions: BTreeSet<Region>,
}

impl ChangeOracle {
    /// Whether the assignment falls inside some region.
    pub fn contains(&self, assignment: &[Value]) -> bool {
        self.regions.iter().any(|r| {
            let n = r.kind.ctx_len();
            if assignment.len() < n || assignment[..n] != r.ctx[..] {
                return false;
            }
            match r.kind {
                RegionKind::Var(l) => {
                    let e = Elem::Val(assignment[l].clone());
                    r.lo <= e && e <= r.hi
                }
                RegionKind::Check(_) => true,
            }
        })
    }
}

/// A change in the derivations of one head.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeadChange {
    pub head: usize,
    pub tuple: Tuple,
    pub inserted: bool,
}

/// One changed input tuple of an atom (present in the old or new view).
pub type AtomChange = (usize, Tuple);

/// The old and new tuples at `keys` that differ between two views.
pub fn changed_tuples<'a>(old: &View, new: &View, keys: impl IntoIterator<Item = &'a Vec<Value>>) -> Vec<Tuple> {
    let mut out = Vec::new();
    for k in keys {
        let (o, n) = (old.get(k), new.get(k));
        if o == n {
            continue;
        }
        if let Some(r) = o {
            out.push(tuple_of(k, r));
        }
        if let Some(r) = n {
            out.push(tuple_of(k, r));
        }
    }
    out
}

/// A rule under incremental maintenance.
#[derive(Clone, Debug)]
pub struct RuleState {
    pub plan: Plan,
    pub index: SensIndex,
    counts: HashMap<(usize, Tuple), usize>,
    /// Number of region runs performed, for instrumentation.
    pub region_runs: usize,
}

impl RuleState {
    pub fn new(plan: Plan) -> Self {
        RuleState { plan, index: SensIndex::new(), counts: HashMap::new(), region_runs: 0 }
    }

    /// Current derivations.
    pub fn derived(&self) -> impl Iterator<Item = &(usize, Tuple)> {
        self.counts.keys()
    }

    /// Evaluate from scratch. Returns the derivations (all inserted) and the
    /// records collected.
    pub fn evaluate(&mut self, views: &[&View]) -> (Vec<HeadChange>, Vec<SensRecord>) {
        assert!(self.counts.is_empty(), "evaluate runs once, then maintain");
        let out = run(&self.plan, views, &Region::all(), true);
        self.region_runs += 1;
        let mut changes = Vec::new();
        for a in &out.assignments {
            self.bump(a, true, &mut changes);
        }
        for r in &out.sens {
            self.index.add(r.clone());
        }
        changes.sort();
        (changes, out.sens)
    }

    /// The regions a set of changes may affect.
    pub fn oracle(&self, changed: &[AtomChange]) -> ChangeOracle {
        let mut regions = BTreeSet::new();
        for (atom, t) in changed {
            self.index.regions_for(*atom, t, &mut regions);
        }
        if regions.iter().any(|r| r.kind == RegionKind::Check(-1)) {
            regions = BTreeSet::from([Region::all()]);
        }
        ChangeOracle { regions }
    }

    /// Bring derivations from `old` inputs to `new` inputs, given every tuple
    /// that differs between them. Returns the net derivation changes and the
    /// newly collected records.
    pub fn maintain(
        &mut self,
        old: &[&View],
        new: &[&View],
        changed: &[AtomChange],
    ) -> (Vec<HeadChange>, Vec<SensRecord>) {
        let oracle = self.oracle(changed);
        let mut before = BTreeSet::new();
        let mut after = BTreeSet::new();
        let mut sens = Vec::new();
        for r in &oracle.regions {
            before.extend(run(&self.plan, old, r, false).assignments);
            let o = run(&self.plan, new, r, true);
            after.extend(o.assignments);
            sens.extend(o.sens);
            self.region_runs += 2;
        }
        sens.sort();
        sens.dedup();
        let mut changes = Vec::new();
        for a in before.difference(&after) {
            self.bump(a, false, &mut changes);
        }
        for a in after.difference(&before) {
            self.bump(a, true, &mut changes);
        }
        for r in &sens {
            self.index.add(r.clone());
        }
        // A tuple can lose one derivation and gain another; net it out.
        let mut net: HashMap<(usize, Tuple), i32> = HashMap::new();
        for c in changes {
            *net.entry((c.head, c.tuple)).or_default() += if c.inserted { 1 } else { -1 };
        }
        let mut changes: Vec<HeadChange> = net
            .into_iter()
            .filter(|(_, n)| *n != 0)
            .map(|((head, tuple), n)| HeadChange { head, tuple, inserted: n > 0 })
            .collect();
        changes.sort();
        (changes, sens)
    }

    fn bump(&mut self, assignment: &[Value], up: bool, changes: &mut Vec<HeadChange>) {
        for (head, tuple) in self.plan.heads_of(assignment) {
            let key = (head, tuple);
            if up {
                let c = self.counts.entry(key.clone()).or_insert(0);
                *c += 1;
                if *c == 1 {
                    changes.push(HeadChange { head: key.0, tuple: key.1, inserted: true });
                }
            } else {
                let c = self.counts.get_mut(&key).expect("removed derivation was counted");
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(&key);
                    changes.push(HeadChange { head: key.0, tuple: key.1, inserted: false });
                }
            }
        }
    }
}

/// The stored-key interval a record covers, without its context.
///
/// Records on key columns become ranges of keys sharing the prefix; records
/// on the value column of a function become the point of its key.
pub fn export_interval(r: &SensRecord, pred: PredId, key_arity: usize) -> KeyInterval {
    if r.depth >= key_arity {
        let key = &r.prefix[..key_arity];
        return KeyInterval::point(pred, key);
    }
    let base: Vec<Elem> = r.prefix.iter().cloned().map(Elem::Val).collect();
    let mut lo = base.clone();
    lo.push(r.lo.clone());
    let mut hi = base;
    hi.push(r.hi.clone());
    if matches!(r.hi, Elem::Val(_)) && r.depth + 1 < key_arity {
        hi.push(Elem::PosInf);
    }
    KeyInterval::new(pred, Bound(lo), Bound(hi))
}

#[cfg(test)]
mod tests;
