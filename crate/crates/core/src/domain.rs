//! The ordered domain of database keys and its binary decomposition.
//!
//! Every stored record lives at a point `(pred, key)`. Points are ordered by
//! predicate id and then lexicographically by key, with `-inf` and `+inf` at
//! the ends. Bounds may end in a sentinel, which lets one value stand for
//! "just below every key with this prefix" or "just above" it.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pstore::{PredId, Value};

/// One element of a bound.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Elem {
    NegInf,
    Val(Value),
    PosInf,
}

impl fmt::Debug for Elem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Elem::NegInf => write!(f, "-inf"),
            Elem::Val(v) => write!(f, "{v:?}"),
            Elem::PosInf => write!(f, "+inf"),
        }
    }
}

fn elem_rank(e: Option<&Elem>) -> u8 {
    match e {
        Some(Elem::NegInf) => 0,
        None => 1,
        Some(Elem::Val(_)) => 2,
        Some(Elem::PosInf) => 3,
    }
}

/// Compare two element sequences. A sequence that runs out compares as an
/// implicit end marker ordered `-inf < end < value < +inf`, so `[5]` sits
/// below every key starting with 5 and `[5, +inf]` above all of them.
pub fn cmp_elems(a: &[Elem], b: &[Elem]) -> Ordering {
    let n = a.len().max(b.len());
    for i in 0..n {
        let (x, y) = (a.get(i), b.get(i));
        match (x, y) {
            (Some(Elem::Val(u)), Some(Elem::Val(v))) => match u.cmp(v) {
                Ordering::Equal => continue,
                o => return o,
            },
            _ => {
                let (rx, ry) = (elem_rank(x), elem_rank(y));
                // Equal ranks here mean both ended or both hold the same
                // sentinel, which is always the last element.
                return rx.cmp(&ry);
            }
        }
    }
    Ordering::Equal
}

/// Compare a plain key against a bound.
pub fn cmp_key_bound(key: &[Value], b: &[Elem]) -> Ordering {
    let n = key.len().max(b.len());
    for i in 0..n {
        match (key.get(i), b.get(i)) {
            (Some(u), Some(Elem::Val(v))) => match u.cmp(v) {
                Ordering::Equal => continue,
                o => return o,
            },
            (Some(_), Some(Elem::NegInf)) => return Ordering::Greater,
            (Some(_), Some(Elem::PosInf)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (None, Some(Elem::NegInf)) => return Ordering::Greater,
            (None, Some(_)) => return Ordering::Less,
            (None, None) => return Ordering::Equal,
        }
    }
    Ordering::Equal
}

/// A position in key space, possibly ending in a sentinel.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bound(pub Vec<Elem>);

impl Bound {
    pub fn key(key: &[Value]) -> Bound {
        Bound(key.iter().cloned().map(Elem::Val).collect())
    }

    /// The bound just below every key that has `prefix` as a prefix.
    pub fn below(prefix: &[Value]) -> Bound {
        Bound::key(prefix)
    }

    /// The bound just above every key that has `prefix` as a prefix.
    pub fn above(prefix: &[Value]) -> Bound {
        let mut b = Bound::key(prefix);
        b.0.push(Elem::PosInf);
        b
    }

    /// Just below this bound, assuming it is a plain key.
    pub fn just_below(&self) -> Bound {
        let mut b = self.clone();
        b.0.push(Elem::NegInf);
        b
    }

    pub fn min() -> Bound {
        Bound(vec![Elem::NegInf])
    }

    pub fn max() -> Bound {
        Bound(vec![Elem::PosInf])
    }

    pub fn is_plain_key(&self) -> bool {
        self.0.iter().all(|e| matches!(e, Elem::Val(_)))
    }

    pub fn contains_key(lo: &Bound, hi: &Bound, key: &[Value]) -> bool {
        cmp_key_bound(key, &lo.0) != Ordering::Less && cmp_key_bound(key, &hi.0) != Ordering::Greater
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_elems(&self.0, &other.0)
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A point of the whole domain.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainPoint {
    NegInf,
    At(PredId, Bound),
    PosInf,
}

impl fmt::Debug for DomainPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainPoint::NegInf => write!(f, "-inf"),
            DomainPoint::At(p, b) => write!(f, "({p},{b:?})"),
            DomainPoint::PosInf => write!(f, "+inf"),
        }
    }
}

impl DomainPoint {
    pub fn key(pred: PredId, key: &[Value]) -> DomainPoint {
        DomainPoint::At(pred, Bound::key(key))
    }

    /// Order of the record point `(pred, key)` relative to this point.
    pub fn cmp_record(&self, pred: PredId, key: &[Value]) -> Ordering {
        match self {
            DomainPoint::NegInf => Ordering::Greater,
            DomainPoint::PosInf => Ordering::Less,
            DomainPoint::At(p, b) => pred.cmp(p).then_with(|| cmp_key_bound(key, &b.0)),
        }
    }
}

/// A closed interval of keys within one predicate.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyInterval {
    pub pred: PredId,
    pub lo: Bound,
    pub hi: Bound,
}

impl fmt::Debug for KeyInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{:?},{:?}]", self.pred, self.lo, self.hi)
    }
}

impl KeyInterval {
    pub fn new(pred: PredId, lo: Bound, hi: Bound) -> Self {
        KeyInterval { pred, lo, hi }
    }

    pub fn point(pred: PredId, key: &[Value]) -> Self {
        KeyInterval { pred, lo: Bound::key(key), hi: Bound::key(key) }
    }

    pub fn whole(pred: PredId) -> Self {
        KeyInterval { pred, lo: Bound::min(), hi: Bound::max() }
    }

    pub fn contains(&self, pred: PredId, key: &[Value]) -> bool {
        pred == self.pred && Bound::contains_key(&self.lo, &self.hi, key)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    /// True if the intervals overlap or share an endpoint.
    pub fn touches(&self, other: &KeyInterval) -> bool {
        self.pred == other.pred && self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn covers(&self, other: &KeyInterval) -> bool {
        self.pred == other.pred && self.lo <= other.lo && other.hi <= self.hi
    }

    /// Split at a domain point: the part strictly below `s` and the part at or
    /// above it. Straddling intervals are cut at `s`.
    pub fn split(&self, s: &DomainPoint) -> (Option<KeyInterval>, Option<KeyInterval>) {
        match s {
            DomainPoint::NegInf => (None, Some(self.clone())),
            DomainPoint::PosInf => (Some(self.clone()), None),
            DomainPoint::At(p, sb) => {
                if self.pred < *p {
                    (Some(self.clone()), None)
                } else if self.pred > *p {
                    (None, Some(self.clone()))
                } else if self.hi < *sb {
                    (Some(self.clone()), None)
                } else if self.lo >= *sb {
                    (None, Some(self.clone()))
                } else {
                    let left = KeyInterval { pred: self.pred, lo: self.lo.clone(), hi: sb.just_below() };
                    let right = KeyInterval { pred: self.pred, lo: sb.clone(), hi: self.hi.clone() };
                    (Some(left), Some(right))
                }
            }
        }
    }
}

/// A node label in the decomposition: a string of bits, root is empty.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Label {
    bits: u64,
    len: u8,
}

impl Label {
    pub const ROOT: Label = Label { bits: 0, len: 0 };

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn child(&self, bit: bool) -> Label {
        assert!(self.len < 63, "label too long");
        Label { bits: (self.bits << 1) | bit as u64, len: self.len + 1 }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len as usize);
        (self.bits >> (self.len as usize - 1 - i)) & 1 == 1
    }

    pub fn parent(&self) -> Option<Label> {
        (self.len > 0).then(|| Label { bits: self.bits >> 1, len: self.len - 1 })
    }

    pub fn last_bit(&self) -> Option<bool> {
        (self.len > 0).then(|| self.bits & 1 == 1)
    }

    /// All labels of exactly `len` bits, in order.
    pub fn all(len: usize) -> impl Iterator<Item = Label> {
        (0..1u64 << len).map(move |bits| Label { bits, len: len as u8 })
    }

    /// Position among labels of the same length.
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    pub fn from_index(index: usize, len: usize) -> Label {
        Label { bits: index as u64, len: len as u8 }
    }

    pub fn parse(s: &str) -> Option<Label> {
        let mut l = Label::ROOT;
        for c in s.chars() {
            l = l.child(match c {
                '0' => false,
                '1' => true,
                _ => return None,
            });
        }
        Some(l)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", if self.bit(i) { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{self}'")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("split point for `{0}` must be a plain key or an infinity")]
    BadSplit(String),
    #[error("split for `{0}` lies outside its parent interval")]
    SplitOutOfRange(String),
    #[error("decomposition json: {0}")]
    Json(String),
}

/// Binary decomposition of the domain. The node with label `d` splits its
/// interval `[lo, hi)` at `split(d)` into `d0 = [lo, s)` and `d1 = [s, hi)`.
/// Nodes without an explicit split behave as if `s = hi`, so `d1` is empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Decomposition {
    splits: BTreeMap<Label, DomainPoint>,
}

#[derive(Serialize, Deserialize)]
struct DecompositionJson {
    splits: Vec<(String, DomainPoint)>,
}

impl Decomposition {
    /// The trivial decomposition: one interval covering everything.
    pub fn trivial() -> Self {
        Decomposition::default()
    }

    /// Split at sample medians down to `height` levels.
    pub fn from_samples(mut samples: Vec<DomainPoint>, height: usize) -> Self {
        samples.sort();
        let mut splits = BTreeMap::new();
        fn rec(s: &[DomainPoint], label: Label, left: usize, splits: &mut BTreeMap<Label, DomainPoint>) {
            if left == 0 || s.is_empty() {
                return;
            }
            let mid = s.len() / 2;
            let point = s[mid].clone();
            let cut = s.partition_point(|p| *p < point);
            splits.insert(label, point);
            rec(&s[..cut], label.child(false), left - 1, splits);
            rec(&s[cut..], label.child(true), left - 1, splits);
        }
        rec(&samples, Label::ROOT, height, &mut splits);
        Decomposition { splits }
    }

    /// Build from explicit split points; each must fall inside its interval.
    pub fn from_splits(splits: impl IntoIterator<Item = (Label, DomainPoint)>) -> Result<Self, DomainError> {
        let d = Decomposition { splits: splits.into_iter().collect() };
        for (label, s) in &d.splits {
            if let DomainPoint::At(_, b) = s {
                if !b.is_plain_key() {
                    return Err(DomainError::BadSplit(label.to_string()));
                }
            }
            let (lo, hi) = d.interval(*label);
            if *s < lo || *s > hi {
                return Err(DomainError::SplitOutOfRange(label.to_string()));
            }
        }
        Ok(d)
    }

    pub fn height(&self) -> usize {
        self.splits.keys().map(|l| l.len() + 1).max().unwrap_or(0)
    }

    /// Half-open interval `[lo, hi)` of the node labelled `d`.
    pub fn interval(&self, d: Label) -> (DomainPoint, DomainPoint) {
        let mut lo = DomainPoint::NegInf;
        let mut hi = DomainPoint::PosInf;
        let mut cur = Label::ROOT;
        for i in 0..d.len() {
            let s = self.split_within(cur, &hi);
            if d.bit(i) {
                lo = s;
            } else {
                hi = s;
            }
            cur = cur.child(d.bit(i));
        }
        (lo, hi)
    }

    fn split_within(&self, d: Label, hi: &DomainPoint) -> DomainPoint {
        self.splits.get(&d).cloned().unwrap_or_else(|| hi.clone())
    }

    /// Split point of node `d`.
    pub fn split(&self, d: Label) -> DomainPoint {
        match self.splits.get(&d) {
            Some(s) => s.clone(),
            None => self.interval(d).1,
        }
    }

    /// Which child of node `d` holds the record `(pred, key)`.
    pub fn route(&self, d: Label, pred: PredId, key: &[Value]) -> bool {
        self.split(d).cmp_record(pred, key) != Ordering::Less
    }

    /// Label of length `len` whose interval contains the record.
    pub fn locate(&self, pred: PredId, key: &[Value], len: usize) -> Label {
        let mut d = Label::ROOT;
        for _ in 0..len {
            d = d.child(self.route(d, pred, key));
        }
        d
    }

    pub fn contains(&self, d: Label, pred: PredId, key: &[Value]) -> bool {
        let (lo, hi) = self.interval(d);
        lo.cmp_record(pred, key) != Ordering::Less && hi.cmp_record(pred, key) == Ordering::Less
    }

    pub fn to_json(&self) -> String {
        let j = DecompositionJson { splits: self.splits.iter().map(|(l, p)| (l.to_string(), p.clone())).collect() };
        serde_json::to_string(&j).expect("decomposition serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DomainError> {
        let j: DecompositionJson = serde_json::from_str(s).map_err(|e| DomainError::Json(e.to_string()))?;
        let mut splits = Vec::new();
        for (l, p) in j.splits {
            splits.push((Label::parse(&l).ok_or_else(|| DomainError::Json(format!("bad label {l}")))?, p));
        }
        Decomposition::from_splits(splits)
    }
}
