//! Shared helpers for unit tests: a small schema and random rules over it.

use std::collections::HashMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::Rng;

use crate::domain::{Decomposition, DomainPoint};
use crate::lftj::{Plan, View};
use crate::pstore::{DbVersion, Key, PredicateSig, Row, Schema, Value, ValueType::*};
use crate::signal::{DeltaMap, DeltaVal};
use crate::txn::{Txn, TxnSpec, TxnStatus};
use crate::rulelang::{Program, Slot};

/// `A(x)`, `B(x,y)`, `C(x)`, `D(x,y)` and `F[x]=y`, all over ints.
pub fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            PredicateSig::relation("A", &[Int]),
            PredicateSig::relation("B", &[Int, Int]),
            PredicateSig::relation("C", &[Int]),
            PredicateSig::relation("D", &[Int, Int]),
            PredicateSig::function("F", &[Int], Int),
        ])
        .unwrap(),
    )
}

pub const READ: [&str; 4] = ["A", "B", "C", "F"];

pub fn random_body(rng: &mut StdRng) -> String {
    let vars = ["x", "y", "z"];
    let term = |rng: &mut StdRng| {
        if rng.gen_bool(0.15) {
            rng.gen_range(0..4).to_string()
        } else {
            vars[rng.gen_range(0..3)].to_string()
        }
    };
    let mut lits = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        lits.push(match rng.gen_range(0..4) {
            0 => format!("A({})", term(rng)),
            1 => format!("B({}, {})", term(rng), term(rng)),
            2 => format!("C({})", term(rng)),
            _ => format!("F[{}] = {}", term(rng), term(rng)),
        });
    }
    match rng.gen_range(0..5) {
        0 => lits.push(format!("!C({})", vars[rng.gen_range(0..3)])),
        1 => lits.push(format!("{} < {}", vars[rng.gen_range(0..3)], vars[rng.gen_range(0..3)])),
        2 => lits.push(format!("w = {} + 1", vars[rng.gen_range(0..3)])),
        _ => {}
    }
    lits.join(", ")
}

pub fn random_views(rng: &mut StdRng, keys: i64, rows: usize) -> Vec<View> {
    let pick = |rng: &mut StdRng, arity: usize| -> View {
        (0..rng.gen_range(0..=rows))
            .map(|_| ((0..arity).map(|_| Value::Int(rng.gen_range(0..keys))).collect::<Key>(), Row::new()))
            .collect()
    };
    let a = pick(rng, 1);
    let b = pick(rng, 2);
    let c = pick(rng, 1);
    let mut f = View::new();
    for k in 0..keys {
        if rng.gen_bool(0.6) {
            f.insert(vec![Value::Int(k)], vec![Value::Int(rng.gen_range(0..keys))]);
        }
    }
    vec![a, b, c, f]
}

pub fn views_for<'a>(plan: &Plan, p: &Program, all: &'a [View]) -> Vec<&'a View> {
    plan.slots
        .iter()
        .map(|s| &all[read_index(p, *s)])
        .collect()
}


/// Apply 1 to 5 random inserts, deletes or value updates. Returns the new
/// views and the changed keys of each.
pub fn random_changes(rng: &mut StdRng, views: &[View], keys: i64) -> (Vec<View>, Vec<Vec<Key>>) {
    let mut new = views.to_vec();
    let mut changed: Vec<Vec<Key>> = vec![Vec::new(); views.len()];
    for _ in 0..rng.gen_range(1..=5) {
        let i = rng.gen_range(0..views.len());
        let arity = match READ[i] {
            "B" => 2,
            _ => 1,
        };
        let existing: Vec<Key> = new[i].iter().map(|(k, _)| k.clone()).collect();
        let key: Key = if !existing.is_empty() && rng.gen_bool(0.5) {
            existing[rng.gen_range(0..existing.len())].clone()
        } else {
            (0..arity).map(|_| Value::Int(rng.gen_range(0..keys))).collect()
        };
        let row: Row = if READ[i] == "F" { vec![Value::Int(rng.gen_range(0..keys))] } else { Row::new() };
        if new[i].contains_key(&key) && rng.gen_bool(0.6) {
            new[i].remove(&key);
        } else {
            new[i].insert(key.clone(), row);
        }
        if !changed[i].contains(&key) {
            changed[i].push(key);
        }
    }
    (new, changed)
}

/// Index into [`READ`] of the predicate an atom reads.
pub fn read_index(p: &Program, s: Slot) -> usize {
    match s {
        Slot::End(id) | Slot::Start(id) => {
            let name = &p.schema.sig(id).name;
            READ.iter().position(|n| n == name).unwrap()
        }
        Slot::Temp(_) => unreachable!(),
    }
}

/// Compile `body` under a local head listing all its named variables.
pub fn rule_with_vars_head(body: &str) -> Option<(Program, Plan)> {
    let probe = Program::compile(schema(), &format!("false <- {body}."), &Default::default()).ok()?;
    let vars: Vec<&String> =
        probe.rules[0].vars.iter().filter(|v| !v.starts_with('_') && !v.starts_with('%')).collect();
    let head = format!("Out({})", vars.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", "));
    let p = Program::compile(schema(), &format!("{head} <- {body}."), &Default::default()).ok()?;
    let plan = Plan::new(&p.rules[0], |s| p.key_arity(s)).ok()?;
    Some((p, plan))
}

/// `A(x)` and `F[x]=y` over ints, for whole-circuit runs.
pub fn counters() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![PredicateSig::relation("A", &[Int]), PredicateSig::function("F", &[Int], Int)]).unwrap(),
    )
}


pub fn counter_db(n: i64) -> DbVersion {
    let mut db = DbVersion::empty(counters());
    let f = db.pred_id("F").unwrap();
    let a = db.pred_id("A").unwrap();
    for i in 0..n {
        db.upsert(f, int(i), int(i)).unwrap();
        if i % 2 == 0 {
            db.upsert(a, int(i), vec![]).unwrap();
        }
    }
    db
}

pub const TEMPLATES: [&str; 5] = [
    "^F[$a]=y <- F@start[$a]=z, y = z + 1.",
    "^F[$b]=y <- F@start[$a]=z, F@start[$b]=w, y = z + w.",
    "-A($a) <- A@start($a), F@start[$b]=z, z > 3.",
    "^A($a) <- F@start[$b]=z, z < 4.",
    "^F[$a]=y <- F@start[$a]=z, y = z - 3.\nfalse <- F[$a]=y, y < 0.",
];

pub fn random_spec(rng: &mut StdRng, n: i64) -> Arc<TxnSpec> {
    let mut params = HashMap::new();
    params.insert("a".to_string(), Value::Int(rng.gen_range(0..n)));
    params.insert("b".to_string(), Value::Int(rng.gen_range(0..n)));
    let src = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    Arc::new(TxnSpec::compile(counters(), src, &params).unwrap())
}

pub fn serial(db: &DbVersion, specs: &[Arc<TxnSpec>]) -> (DbVersion, Vec<TxnStatus>) {
    let mut db = db.clone();
    let mut st = Vec::new();
    for s in specs {
        let mut t = Txn::new(s.clone()).unwrap();
        t.evaluate(&db, &DeltaMap::new());
        st.push(t.status());
        for ((p, k), v) in t.delta().iter() {
            match v {
                DeltaVal::Upsert(r) => db.upsert(*p, k.clone(), r.clone()).unwrap(),
                DeltaVal::Retract => db.retract(*p, k).unwrap(),
            };
        }
    }
    (db, st)
}


pub fn domain(n: i64, h: usize) -> Arc<Decomposition> {
    let schema = counters();
    let f = schema.id("F").unwrap();
    let a = schema.id("A").unwrap();
    let pts = (0..n).flat_map(|i| [DomainPoint::key(f, &int(i)), DomainPoint::key(a, &int(i))]).collect();
    Arc::new(Decomposition::from_samples(pts, h))
}

fn int(i: i64) -> Vec<Value> {
    vec![Value::Int(i)]
}
