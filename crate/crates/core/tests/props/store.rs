use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use txrepair::pstore::{DbVersion, Key, PredId, PredicateSig, Row, Schema, Value, ValueType};

use super::{check, Outcome};

fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            PredicateSig::relation("R", &[ValueType::Int, ValueType::Int]),
            PredicateSig::function("F", &[ValueType::Int], ValueType::Int),
            PredicateSig::function("S", &[ValueType::Str], ValueType::Bool),
        ])
        .unwrap(),
    )
}

/// `(pred, key, value)`; no value means retract.
type Op = (PredId, Key, Option<Row>);

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..6i64, 0..6i64, any::<bool>()).prop_map(|(a, b, up)| (0, vec![Value::Int(a), Value::Int(b)], up.then(Vec::new))),
        (0..8i64, proptest::option::weighted(0.7, -5..5i64))
            .prop_map(|(k, v)| (1, vec![Value::Int(k)], v.map(|v| vec![Value::Int(v)]))),
        ("[a-c]{0,2}", proptest::option::weighted(0.7, any::<bool>()))
            .prop_map(|(k, v)| (2, vec![Value::str(&k)], v.map(|v| vec![Value::Bool(v)]))),
    ]
}

fn apply(db: &mut DbVersion, (p, k, v): &Op) {
    match v {
        Some(v) => {
            db.upsert(*p, k.clone(), v.clone()).unwrap();
        }
        None => {
            db.retract(*p, k).unwrap();
        }
    }
}

fn scan(db: &DbVersion) -> Vec<(PredId, Key, Row)> {
    db.records().map(|(p, k, r)| (p, k.clone(), r.clone())).collect()
}

/// Every version taken along the way still scans as it did when taken.
pub fn persistence(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(op(), 0..40), |ops| {
        let mut db = DbVersion::empty(schema());
        let mut kept = Vec::new();
        for o in &ops {
            kept.push((db.branch(), scan(&db)));
            apply(&mut db, o);
        }
        for (v, s) in &kept {
            prop_assert_eq!(&scan(v), s);
        }
        Ok(())
    })
}

pub fn scan_order(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(op(), 0..60), |ops| {
        let mut db = DbVersion::empty(schema());
        for o in &ops {
            apply(&mut db, o);
        }
        let s = scan(&db);
        for w in s.windows(2) {
            prop_assert!((w[0].0, &w[0].1) < (w[1].0, &w[1].1), "{:?}", w);
        }
        Ok(())
    })
}

/// Applying changes to a branch equals patching the base's scan by hand,
/// and leaves the base alone.
pub fn branch_equivalence(cases: u32) -> Outcome {
    let s = (prop::collection::vec(op(), 0..30), prop::collection::vec(op(), 0..30));
    check(cases, s, |(base_ops, delta)| {
        let mut base = DbVersion::empty(schema());
        for o in &base_ops {
            apply(&mut base, o);
        }
        let before = scan(&base);
        let mut want: BTreeMap<(PredId, Key), Row> = before.iter().map(|(p, k, r)| ((*p, k.clone()), r.clone())).collect();
        let mut b = base.branch();
        for o in &delta {
            apply(&mut b, o);
            match &o.2 {
                Some(v) => want.insert((o.0, o.1.clone()), v.clone()),
                None => want.remove(&(o.0, o.1.clone())),
            };
        }
        let want: Vec<_> = want.into_iter().map(|((p, k), r)| (p, k, r)).collect();
        prop_assert_eq!(scan(&b), want);
        prop_assert_eq!(scan(&base), before);
        Ok(())
    })
}

/// Within a type values order like their host type; across types they do
/// not compare.
pub fn value_order(cases: u32) -> Outcome {
    let s = (any::<i64>(), any::<i64>(), ".{0,4}", ".{0,4}", any::<bool>(), any::<bool>());
    check(cases, s, |(a, b, s, t, x, y)| {
        prop_assert_eq!(Value::Int(a).try_cmp(&Value::Int(b)).unwrap(), a.cmp(&b));
        prop_assert_eq!(Value::str(&s).try_cmp(&Value::str(&t)).unwrap(), s.as_bytes().cmp(t.as_bytes()));
        prop_assert_eq!(Value::Bool(x).try_cmp(&Value::Bool(y)).unwrap(), x.cmp(&y));
        prop_assert!(Value::Int(a).try_cmp(&Value::str(&s)).is_err());
        prop_assert!(Value::Bool(x).try_cmp(&Value::Int(b)).is_err());
        Ok(())
    })
}
