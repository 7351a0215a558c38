use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use txrepair::circuit::{corr_revisit, merge_delta, side_of, Circuit, CorrInputs};
use txrepair::domain::{Bound, Decomposition, DomainPoint, KeyInterval};
use txrepair::pstore::{DbVersion, Key, PMap, PredId, PredicateSig, Row, Schema, Value, ValueType::Int};
use txrepair::signal::{sens_coalesce, DeltaKey, DeltaMap, DeltaVal, SensMap};
use txrepair::txn::TxnSpec;

use super::{check, Outcome};

fn int(i: i64) -> Vec<Value> {
    vec![Value::Int(i)]
}

fn delta_val() -> impl Strategy<Value = DeltaVal> {
    prop_oneof![1 => Just(DeltaVal::Retract), 2 => (0..5i64).prop_map(|v| DeltaVal::Upsert(int(v)))]
}

/// Over two predicates and six keys, so the two sides share keys often.
fn delta_map() -> impl Strategy<Value = BTreeMap<DeltaKey, DeltaVal>> {
    prop::collection::btree_map((0..2u32, (0..6i64).prop_map(int)), delta_val(), 0..8)
}

fn pmap(m: &BTreeMap<DeltaKey, DeltaVal>) -> DeltaMap {
    m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

fn split() -> impl Strategy<Value = DomainPoint> {
    prop_oneof![
        Just(DomainPoint::NegInf),
        Just(DomainPoint::PosInf),
        (0..2u32, 0..7i64).prop_map(|(p, k)| DomainPoint::key(p, &int(k))),
    ]
}

fn merged(left: &DeltaMap, right: &DeltaMap, s: &DomainPoint) -> [BTreeMap<DeltaKey, DeltaVal>; 2] {
    let keys: BTreeSet<&DeltaKey> = left.iter().chain(right.iter()).map(|(k, _)| k).collect();
    let mut out = [BTreeMap::new(), BTreeMap::new()];
    for (i, part) in merge_delta(left, right, s, keys).into_iter().enumerate() {
        for (k, v) in part {
            if let Some(v) = v {
                out[i].insert(k, v);
            }
        }
    }
    out
}

/// Each key lands in exactly the side the split assigns it, carrying the
/// right input's record when both sides have one.
pub fn merge_partition(cases: u32) -> Outcome {
    check(cases, (delta_map(), delta_map(), split()), |(l, r, s)| {
        let out = merged(&pmap(&l), &pmap(&r), &s);
        let keys: BTreeSet<&DeltaKey> = l.keys().chain(r.keys()).collect();
        prop_assert_eq!(out[0].len() + out[1].len(), keys.len());
        for k in keys {
            let side = side_of(&s, k.0, &k.1) as usize;
            prop_assert!(!out[1 - side].contains_key(k));
            let want = r.get(k).or_else(|| l.get(k)).unwrap();
            prop_assert_eq!(out[side].get(k), Some(want));
            if matches!(r.get(k), Some(DeltaVal::Retract)) {
                prop_assert_eq!(out[side].get(k), Some(&DeltaVal::Retract));
            }
        }
        Ok(())
    })
}

type State = BTreeMap<DeltaKey, Row>;

fn apply(mut st: State, d: &BTreeMap<DeltaKey, DeltaVal>) -> State {
    for (k, v) in d {
        match v {
            DeltaVal::Upsert(r) => st.insert(k.clone(), r.clone()),
            DeltaVal::Retract => st.remove(k),
        };
    }
    st
}

/// Applying the merged output to any state equals applying the left input
/// and then the right.
pub fn merge_conservation(cases: u32) -> Outcome {
    let base = prop::collection::btree_map((0..2u32, (0..6i64).prop_map(int)), (0..5i64).prop_map(int), 0..8);
    check(cases, (delta_map(), delta_map(), split(), base), |(l, r, s, base)| {
        let out = merged(&pmap(&l), &pmap(&r), &s);
        let mut both = out[0].clone();
        both.extend(out[1].clone());
        prop_assert_eq!(apply(base.clone(), &both), apply(apply(base, &l), &r));
        Ok(())
    })
}

fn sens() -> impl Strategy<Value = SensMap> {
    prop::collection::vec((0..2u32, 0..6i64, 0..3i64), 0..4).prop_map(|ivs| {
        let ivs = ivs.into_iter().map(|(p, lo, w)| KeyInterval::new(p, Bound::key(&int(lo)), Bound::key(&int(lo + w))));
        let mut m = SensMap::new();
        for i in sens_coalesce(ivs.collect()) {
            m.insert((i.pred, i.lo), i.hi);
        }
        m
    })
}

/// A refresh on unchanged inputs publishes nothing, and the output is the
/// sibling delta, then the parent corrections, filtered by sensitivity.
pub fn corr_idempotence(cases: u32) -> Outcome {
    check(cases, (sens(), delta_map(), delta_map(), delta_map()), |(s, c0, c1, d)| {
        let (c0, c1, d) = (pmap(&c0), pmap(&c1), pmap(&d));
        let inp = CorrInputs { sens: &s, corr: [Some(&c0), Some(&c1)], delta: Some(&d) };
        let keys: BTreeSet<DeltaKey> = [&d, &c0, &c1].iter().flat_map(|m| m.iter().map(|(k, _)| k.clone())).collect();
        let mut out = DeltaMap::new();
        for (k, v) in corr_revisit(&inp, &out, keys.iter()) {
            if let Some(v) = v {
                out.insert(k, v);
            }
        }
        prop_assert!(corr_revisit(&inp, &out, keys.iter()).is_empty());
        for k in &keys {
            let covered = s.iter().any(|(lo, hi)| txrepair::signal::interval_of(lo, hi).contains(k.0, &k.1));
            let want = if covered { d.get(k).or_else(|| c0.get(k)).or_else(|| c1.get(k)) } else { None };
            prop_assert_eq!(out.get(k), want);
        }
        Ok(())
    })
}

/// `A(x)` and `F[x]=y` over ints.
pub fn schema() -> Arc<Schema> {
    Arc::new(Schema::new(vec![PredicateSig::relation("A", &[Int]), PredicateSig::function("F", &[Int], Int)]).unwrap())
}

pub const KEYS: i64 = 6;

pub fn db() -> DbVersion {
    let mut db = DbVersion::empty(schema());
    for k in 0..KEYS {
        db.upsert(1, int(k), int(k % 3)).unwrap();
        if k % 2 == 0 {
            db.upsert(0, int(k), vec![]).unwrap();
        }
    }
    db
}

pub fn decomposition(h: usize) -> Arc<Decomposition> {
    let pts = (0..KEYS).flat_map(|k| [DomainPoint::key(0, &int(k)), DomainPoint::key(1, &int(k))]).collect();
    Arc::new(Decomposition::from_samples(pts, h))
}

const TEMPLATES: [&str; 6] = [
    "^F[$a]=y <- F@start[$b]=z, y = z + 1.",
    "^A($a) <- F@start[$b]=z, z > 2.",
    "-A($a) <- A@start($b).",
    "false <- F@start[$a]=z, z > 5.",
    "^F[$a]=y <- F@start[$a]=z, A($b), y = z * 2.",
    "t(x) <- A@start(x), F@start[x]=z, z < $a.",
];

pub fn spec() -> impl Strategy<Value = Arc<TxnSpec>> {
    (0..TEMPLATES.len(), 0..KEYS, 0..KEYS).prop_map(|(t, a, b)| {
        let params = HashMap::from([("a".to_string(), Value::Int(a)), ("b".to_string(), Value::Int(b))]);
        Arc::new(TxnSpec::compile(schema(), TEMPLATES[t], &params).unwrap().labeled(format!("{t}/{a}/{b}")))
    })
}

/// Admit every spec and refresh to quiescence, earliest positions first.
pub fn settle(specs: &[Arc<TxnSpec>], h: usize) -> Circuit {
    let mut c = Circuit::new(decomposition(h), db());
    let mut queue = BTreeSet::new();
    for (i, s) in specs.iter().enumerate() {
        for (o, p) in c.admit(s.clone(), i as u64).unwrap() {
            queue.insert((p.serves, p.txn, p.level, o));
        }
    }
    while let Some((_, _, _, o)) = queue.pop_first() {
        for (o, p) in c.refresh(o).wake {
            queue.insert((p.serves, p.txn, p.level, o));
        }
    }
    c
}

/// Replacing the last transaction never changes what an earlier one
/// computes.
pub fn information_flow(cases: u32) -> Outcome {
    check(cases, (prop::collection::vec(spec(), 1..7), spec(), 0..3usize), |(mut specs, other, h)| {
        let a = settle(&specs, h);
        *specs.last_mut().unwrap() = other;
        let b = settle(&specs, h);
        for i in 0..specs.len() as u64 - 1 {
            let (x, y) = (a.txn_delta(i).unwrap(), b.txn_delta(i).unwrap());
            prop_assert_eq!(as_vec(&x), as_vec(&y), "transaction {}", i);
        }
        Ok(())
    })
}

fn as_vec(m: &PMap<(PredId, Key), DeltaVal>) -> Vec<(DeltaKey, DeltaVal)> {
    m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}
