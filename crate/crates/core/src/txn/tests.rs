use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::pstore::{PredicateSig, ValueType::*};
use crate::signal::{sens_covers, sens_lookup};
use crate::testkit::{random_views, schema, READ};

fn bank() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            PredicateSig::function("account_by_name", &[Str], Int),
            PredicateSig::function("acct_balance", &[Int], Int),
        ])
        .unwrap(),
    )
}

const TRANSFER: &str = r#"
^acct_balance[n1]=a, ^acct_balance[n2]=b <-
    account_by_name["Alice"]=n1, account_by_name["Bob"]=n2,
    a = acct_balance@start[n1] - 100, b = acct_balance@start[n2] + 100.
false <- account_by_name["Alice"]=n1, acct_balance[n1] < 0.
"#;

fn bank_db(alice: i64, bob: i64) -> DbVersion {
    let mut db = DbVersion::empty(bank());
    let names = db.pred_id("account_by_name").unwrap();
    let acct = db.pred_id("acct_balance").unwrap();
    db.upsert(names, vec![Value::str("Alice")], vec![Value::Int(1)]).unwrap();
    db.upsert(names, vec![Value::str("Bob")], vec![Value::Int(2)]).unwrap();
    db.upsert(acct, vec![Value::Int(1)], vec![Value::Int(alice)]).unwrap();
    db.upsert(acct, vec![Value::Int(2)], vec![Value::Int(bob)]).unwrap();
    db
}

fn transfer() -> Txn {
    Txn::new(Arc::new(TxnSpec::compile(bank(), TRANSFER, &HashMap::new()).unwrap())).unwrap()
}

fn balances(d: &DeltaMap) -> Vec<(i64, i64)> {
    d.iter()
        .map(|((_, k), v)| match v {
            DeltaVal::Upsert(r) => (k[0].as_int().unwrap(), r[0].as_int().unwrap()),
            DeltaVal::Retract => panic!("unexpected retraction"),
        })
        .collect()
}

fn set_balance(corr: &DeltaMap, acct: PredId, id: i64, bal: i64) -> (DeltaMap, DeltaKey) {
    let k = (acct, vec![Value::Int(id)]);
    (corr.with(k.clone(), DeltaVal::Upsert(vec![Value::Int(bal)])), k)
}

#[test]
fn transfer_moves_money() {
    let db = bank_db(250, 100);
    let mut t = transfer();
    let out = t.evaluate(&db, &DeltaMap::new());
    assert_eq!(t.status(), TxnStatus::Evaluated);
    assert_eq!(balances(t.delta()), vec![(1, 150), (2, 200)]);
    assert_eq!(out.delta.len(), 2);
    let acct = db.pred_id("acct_balance").unwrap();
    let names = db.pred_id("account_by_name").unwrap();
    for (p, k) in [(acct, Value::Int(1)), (acct, Value::Int(2)), (names, Value::str("Alice")), (names, Value::str("Bob"))] {
        assert!(sens_lookup(t.sens(), p, &[k.clone()]).is_some(), "{k:?} not covered");
    }
    assert!(sens_lookup(t.sens(), acct, &[Value::Int(3)]).is_none());
}

#[test]
fn overdraft_fails_with_empty_delta() {
    let db = bank_db(50, 100);
    let mut t = transfer();
    let out = t.evaluate(&db, &DeltaMap::new());
    assert_eq!(t.status(), TxnStatus::Failed);
    assert!(out.delta.is_empty() && t.delta().is_empty());
    // The rules still derived the writes; they are just not published.
    assert_eq!(t.derived_delta().len(), 2);
    assert!(!t.sens().is_empty());
}

#[test]
fn read_only_txn_has_no_delta() {
    let spec = TxnSpec::compile(bank(), "Rich(n) <- acct_balance[n]=b, b > 200.", &HashMap::new()).unwrap();
    assert!(spec.is_read_only());
    let mut t = Txn::new(Arc::new(spec)).unwrap();
    let out = t.evaluate(&bank_db(250, 100), &DeltaMap::new());
    assert!(out.delta.is_empty());
    assert!(!out.sens.is_empty());
    assert_eq!(t.local("Rich"), vec![vec![Value::Int(1)]]);
}

#[test]
fn correction_inside_sens_is_repaired() {
    let db = bank_db(250, 100);
    let acct = db.pred_id("acct_balance").unwrap();
    let mut t = transfer();
    t.evaluate(&db, &DeltaMap::new());
    let (corr, k) = set_balance(&DeltaMap::new(), acct, 1, 300);
    let out = t.repair(&db, &corr, &[k.clone()]);
    assert_eq!(balances(t.delta()), vec![(1, 200), (2, 200)]);
    assert_eq!(out.delta, vec![(k, Some(DeltaVal::Upsert(vec![Value::Int(200)])))]);
    assert_eq!(t.refreshes, 2);
}

#[test]
fn correction_outside_sens_changes_nothing() {
    let db = bank_db(250, 100);
    let acct = db.pred_id("acct_balance").unwrap();
    let mut t = transfer();
    t.evaluate(&db, &DeltaMap::new());
    let runs = t.region_runs();
    let (corr, k) = set_balance(&DeltaMap::new(), acct, 7, 1);
    assert!(sens_lookup(t.sens(), acct, &k.1).is_none());
    let out = t.repair(&db, &corr, &[k]);
    assert!(out.is_empty());
    assert_eq!(t.region_runs(), runs);
    assert_eq!(balances(t.delta()), vec![(1, 150), (2, 200)]);
}

#[test]
fn failed_txn_recovers_after_correction() {
    let db = bank_db(50, 100);
    let acct = db.pred_id("acct_balance").unwrap();
    let mut t = transfer();
    t.evaluate(&db, &DeltaMap::new());
    assert_eq!(t.status(), TxnStatus::Failed);
    let (corr, k) = set_balance(&DeltaMap::new(), acct, 1, 500);
    let out = t.repair(&db, &corr, &[k]);
    assert_eq!(t.status(), TxnStatus::Evaluated);
    assert_eq!(balances(t.delta()), vec![(1, 400), (2, 200)]);
    assert_eq!(out.delta.len(), 2);
    // And back again.
    let (corr, k) = set_balance(&corr, acct, 1, 10);
    let out = t.repair(&db, &corr, &[k]);
    assert_eq!(t.status(), TxnStatus::Failed);
    assert!(t.delta().is_empty());
    assert_eq!(out.delta.len(), 2);
    assert!(out.delta.iter().all(|(_, v)| v.is_none()));
}

#[test]
fn two_rules_upserting_one_predicate_union() {
    let src = "^D(x, 0) <- A(x).\n^D(x, 1) <- C(x).";
    let spec = TxnSpec::compile(schema(), src, &HashMap::new()).unwrap();
    let mut db = DbVersion::empty(schema());
    let a = db.pred_id("A").unwrap();
    let c = db.pred_id("C").unwrap();
    db.upsert(a, vec![Value::Int(1)], vec![]).unwrap();
    db.upsert(c, vec![Value::Int(2)], vec![]).unwrap();
    let mut t = Txn::new(Arc::new(spec)).unwrap();
    t.evaluate(&db, &DeltaMap::new());
    let keys: Vec<Key> = t.delta().iter().map(|((_, k), _)| k.clone()).collect();
    assert_eq!(keys, vec![vec![Value::Int(1), Value::Int(0)], vec![Value::Int(2), Value::Int(1)]]);
}

#[test]
fn conflicting_function_writes_fail() {
    let spec = TxnSpec::compile(schema(), "^F[x]=y <- B(x, y).", &HashMap::new()).unwrap();
    let mut db = DbVersion::empty(schema());
    let b = db.pred_id("B").unwrap();
    db.upsert(b, vec![Value::Int(1), Value::Int(2)], vec![]).unwrap();
    db.upsert(b, vec![Value::Int(1), Value::Int(3)], vec![]).unwrap();
    let mut t = Txn::new(Arc::new(spec)).unwrap();
    t.evaluate(&db, &DeltaMap::new());
    assert_eq!(t.status(), TxnStatus::Failed);
    // Removing one of the two writes resolves the conflict.
    let k = (b, vec![Value::Int(1), Value::Int(3)]);
    let corr = DeltaMap::new().with(k.clone(), DeltaVal::Retract);
    t.repair(&db, &corr, &[k]);
    assert_eq!(t.status(), TxnStatus::Evaluated);
    assert_eq!(t.delta().len(), 1);
}

#[test]
fn null_txn_emits_nothing() {
    let mut t = Txn::null();
    assert!(t.refresh(&bank_db(1, 1), &DeltaMap::new(), &[]).is_empty());
    assert!(t.is_null());
}

const PROGRAMS: [&str; 5] = [
    "^D(x, y) <- A(x), B(x, y), !C(y).",
    "T(x) <- A(x), C(x).\n^F[x]=y <- T(x), B(x, z), y = z + 1.",
    "-C(x) <- A(x), C@start(x).\nfalse <- C(x), F[x]=y, y > 3.",
    "^F[x]=y <- F@start[x]=z, A(x), y = z + 1.\nfalse <- F[x]=y, y > 5.",
    "U(x, y) <- B@start(x, y), !A(y).\n-B(x, y) <- U(x, y), C(x).\n^D(y, x) <- B(x, y).",
];

fn random_db(rng: &mut StdRng) -> DbVersion {
    let mut db = DbVersion::empty(schema());
    for (name, v) in READ.iter().zip(random_views(rng, 5, 8)) {
        db.set_pred(db.pred_id(name).unwrap(), v);
    }
    db
}

/// Random corrections over the read predicates, with the keys that changed.
fn random_corr(rng: &mut StdRng, db: &DbVersion, corr: &DeltaMap) -> (DeltaMap, Vec<DeltaKey>) {
    let mut next = corr.clone();
    let mut keys = Vec::new();
    for _ in 0..rng.gen_range(1..4) {
        let name = READ[rng.gen_range(0..READ.len())];
        let p = db.pred_id(name).unwrap();
        let sig = db.schema().sig(p);
        let key: Key = (0..sig.key_arity()).map(|_| Value::Int(rng.gen_range(0..5))).collect();
        let k = (p, key);
        match rng.gen_range(0..3) {
            0 => next.remove(&k),
            1 => next.insert(k.clone(), DeltaVal::Retract),
            _ => {
                let row = (0..sig.value_types.len()).map(|_| Value::Int(rng.gen_range(0..7))).collect();
                next.insert(k.clone(), DeltaVal::Upsert(row))
            }
        };
        keys.push(k);
    }
    (next, keys)
}

#[test]
fn repair_matches_fresh_evaluation() {
    let mut rng = StdRng::seed_from_u64(23);
    for case in 0..300 {
        let src = PROGRAMS[case % PROGRAMS.len()];
        let spec = Arc::new(TxnSpec::compile(schema(), src, &HashMap::new()).unwrap());
        let db = random_db(&mut rng);
        let mut corr = DeltaMap::new();
        let mut t = Txn::new(spec.clone()).unwrap();
        let mut seen = DeltaMap::new();
        let mut sens = SensMap::new();
        let absorb = |out: TxnOutput, seen: &mut DeltaMap, sens: &mut SensMap| {
            for (k, v) in out.delta {
                match v {
                    Some(v) => seen.insert(k, v),
                    None => seen.remove(&k),
                };
            }
            for (k, v) in out.sens {
                match v {
                    Some(v) => sens.insert(k, v),
                    None => sens.remove(&k),
                };
            }
        };
        absorb(t.evaluate(&db, &corr), &mut seen, &mut sens);
        for _ in 0..4 {
            let before = t.sens().clone();
            let prev = t.delta().clone();
            let prev_status = t.status();
            let (next, keys) = random_corr(&mut rng, &db, &corr);
            let untouched = keys.iter().all(|(p, k)| sens_lookup(t.sens(), *p, k).is_none());
            corr = next;
            absorb(t.repair(&db, &corr, &keys), &mut seen, &mut sens);

            let mut fresh = Txn::new(spec.clone()).unwrap();
            fresh.evaluate(&db, &corr);
            assert_eq!(t.status(), fresh.status(), "{src}");
            assert_eq!(t.delta(), fresh.delta(), "{src}");
            assert_eq!(t.delta(), &seen, "published changes do not add up: {src}");
            assert_eq!(t.sens(), &sens, "{src}");
            for (k, hi) in before.iter() {
                let iv = crate::signal::interval_of(k, hi);
                assert!(sens_covers(t.sens(), &iv), "sensitivity shrank: {src}");
            }
            if untouched {
                assert_eq!(t.delta(), &prev, "{src}");
                assert_eq!(t.status(), prev_status, "{src}");
            }
        }
    }
}
