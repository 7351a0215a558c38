use std::collections::BTreeMap;

use proptest::prelude::*;
use txrepair::domain::{Bound, KeyInterval};
use txrepair::pstore::{PMap, Value};
use txrepair::signal::{interval_of, publish_sens, sens_coalesce, Change, SensBuilder, SensSignal, SignalError, VersionedSignal};

use super::{check, Outcome};

type Batch = Vec<(u8, Option<u8>)>;

fn batches() -> impl Strategy<Value = Vec<Batch>> {
    prop::collection::vec(prop::collection::vec((0..10u8, proptest::option::weighted(0.7, 0..4u8)), 0..6), 1..12)
}

fn build(batches: &[Batch]) -> (VersionedSignal<u8, u8>, Vec<BTreeMap<u8, u8>>) {
    let mut sig = VersionedSignal::new();
    let mut seen = vec![BTreeMap::new()];
    for b in batches {
        if sig.publish(b.iter().cloned()).is_some() {
            seen.push(contents(sig.latest()));
        }
    }
    (sig, seen)
}

fn contents(m: &PMap<u8, u8>) -> BTreeMap<u8, u8> {
    m.iter().map(|(k, v)| (*k, *v)).collect()
}

fn patch(mut m: BTreeMap<u8, u8>, ch: &[Change<u8, u8>]) -> BTreeMap<u8, u8> {
    for c in ch {
        match c {
            Change::Removed(k, _) => {
                m.remove(k);
            }
            Change::Inserted(k, v) => {
                m.insert(*k, *v);
            }
        }
    }
    m
}

/// A version reads back the same after any number of later publishes.
pub fn immutability(cases: u32) -> Outcome {
    check(cases, batches(), |b| {
        let (sig, seen) = build(&b);
        prop_assert_eq!(sig.latest_version() as usize + 1, seen.len());
        for (v, want) in seen.iter().enumerate() {
            prop_assert_eq!(&contents(sig.snapshot(v as u64).unwrap()), want);
        }
        Ok(())
    })
}

/// `changes(a, b)` carries `a` to `b`, and two steps net out to one.
pub fn composition(cases: u32) -> Outcome {
    check(cases, (batches(), any::<[prop::sample::Index; 3]>()), |(b, idx)| {
        let (sig, seen) = build(&b);
        let n = seen.len();
        let mut v: Vec<usize> = idx.iter().map(|i| i.index(n)).collect();
        v.sort();
        let (a, m, c) = (v[0] as u64, v[1] as u64, v[2] as u64);
        let ab = sig.changes(a, m).unwrap();
        let bc = sig.changes(m, c).unwrap();
        let ac = sig.changes(a, c).unwrap();
        prop_assert_eq!(&patch(seen[a as usize].clone(), &ab), &seen[m as usize]);
        let two = patch(patch(seen[a as usize].clone(), &ab), &bc);
        prop_assert_eq!(&two, &patch(seen[a as usize].clone(), &ac));
        prop_assert_eq!(&two, &seen[c as usize]);
        // Net changes mention only keys that actually differ.
        for ch in &ac {
            let k = ch.key();
            prop_assert!(seen[a as usize].get(k) != seen[c as usize].get(k));
        }
        Ok(())
    })
}

fn iv() -> impl Strategy<Value = KeyInterval> {
    (0..2u32, 0..20i64, 0..5i64)
        .prop_map(|(p, lo, w)| KeyInterval::new(p, Bound::key(&[Value::Int(lo)]), Bound::key(&[Value::Int(lo + w)])))
}

fn member(ivs: &[KeyInterval], p: u32, k: i64) -> bool {
    ivs.iter().any(|i| i.contains(p, &[Value::Int(k)]))
}

/// Coalescing keeps membership and yields sorted, separated intervals.
pub fn coalescing(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(iv(), 0..12), |ivs| {
        let out = sens_coalesce(ivs.clone());
        for p in 0..2 {
            for k in -1..27 {
                prop_assert_eq!(member(&out, p, k), member(&ivs, p, k), "{}/{}", p, k);
            }
        }
        for w in out.windows(2) {
            prop_assert!((w[0].pred, &w[0].lo) < (w[1].pred, &w[1].lo));
            prop_assert!(!w[0].touches(&w[1]));
        }
        Ok(())
    })
}

fn covered(sig: &SensSignal, v: u64, p: u32, k: i64) -> bool {
    sig.snapshot(v).unwrap().iter().any(|(key, hi)| interval_of(key, hi).contains(p, &[Value::Int(k)]))
}

/// Publishing a growing set never loses coverage, and a publish that would
/// is rejected without creating a version.
pub fn sens_monotone(cases: u32) -> Outcome {
    let s = (prop::collection::vec(prop::collection::vec(iv(), 1..4), 1..8), any::<prop::sample::Index>());
    check(cases, s, |(rounds, pick)| {
        let mut sig = SensSignal::new();
        let mut b = SensBuilder::new();
        for r in &rounds {
            for i in r {
                b.add(i);
            }
            publish_sens(&mut sig, b.drain()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        }
        let last = sig.latest_version();
        for v in 0..last {
            for p in 0..2 {
                for k in -1..27 {
                    if covered(&sig, v, p, k) {
                        prop_assert!(covered(&sig, v + 1, p, k));
                    }
                }
            }
        }
        let items: Vec<_> = sig.latest().iter().map(|(k, _)| k.clone()).collect();
        if !items.is_empty() {
            let victim = items[pick.index(items.len())].clone();
            let r = publish_sens(&mut sig, vec![(victim, None)]);
            prop_assert!(matches!(r, Err(SignalError::SensRemoval(_))));
            prop_assert_eq!(sig.latest_version(), last);
        }
        Ok(())
    })
}
