use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use txrepair::inclftj::{changed_tuples, AtomChange, HeadChange, RuleState};
use txrepair::lftj::{eval_rule_full, leapfrog_join, Plan, View};
use txrepair::pstore::{Key, PredicateSig, Row, Schema, Value, ValueType::Int};
use txrepair::rulelang::{Program, Slot};

use super::{check, Outcome};

/// Keys and values range over `0..K`.
const K: i64 = 4;
const VARS: [&str; 3] = ["x", "y", "z"];

fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            PredicateSig::relation("A", &[Int]),
            PredicateSig::relation("B", &[Int, Int]),
            PredicateSig::relation("C", &[Int]),
            PredicateSig::function("F", &[Int], Int),
        ])
        .unwrap(),
    )
}

#[derive(Clone, Copy, Debug)]
enum T {
    Var(usize),
    Const(i64),
}

#[derive(Clone, Debug)]
enum Lit {
    A(T),
    B(T, T),
    C(T),
    F(T, T),
    NotC(usize),
    Lt(usize, usize),
    /// `w = v + 1`
    Succ(usize),
}

fn t() -> impl Strategy<Value = T> {
    prop_oneof![5 => (0..3usize).prop_map(T::Var), 1 => (0..K).prop_map(T::Const)]
}

fn lits(arith: bool) -> impl Strategy<Value = Vec<Lit>> {
    let pos = prop_oneof![
        t().prop_map(Lit::A),
        (t(), t()).prop_map(|(a, b)| Lit::B(a, b)),
        t().prop_map(Lit::C),
        (t(), t()).prop_map(|(a, b)| Lit::F(a, b)),
    ];
    let mut extra = prop_oneof![
        2 => Just(None),
        1 => (0..3usize).prop_map(|v| Some(Lit::NotC(v))),
        1 => (0..3usize, 0..3usize).prop_map(|(a, b)| Some(Lit::Lt(a, b))),
    ]
    .boxed();
    if arith {
        extra = prop_oneof![3 => extra, 1 => (0..3usize).prop_map(|v| Some(Lit::Succ(v)))].boxed();
    }
    (prop::collection::vec(pos, 1..4), extra).prop_map(|(mut v, e)| {
        v.extend(e);
        v
    })
}

fn show(t: T) -> String {
    match t {
        T::Var(i) => VARS[i].to_string(),
        T::Const(c) => c.to_string(),
    }
}

/// Variables bound by positive atoms, in name order.
fn head_vars(body: &[Lit]) -> Vec<usize> {
    let mut vs = BTreeSet::new();
    for l in body {
        let ts = match l {
            Lit::A(a) | Lit::C(a) => vec![*a],
            Lit::B(a, b) | Lit::F(a, b) => vec![*a, *b],
            _ => vec![],
        };
        for t in ts {
            if let T::Var(i) = t {
                vs.insert(i);
            }
        }
    }
    vs.into_iter().collect()
}

fn text(body: &[Lit]) -> Option<String> {
    let vars = head_vars(body);
    if vars.is_empty() {
        return None;
    }
    let mut head: Vec<String> = vars.iter().map(|i| VARS[*i].to_string()).collect();
    let parts: Vec<String> = body
        .iter()
        .map(|l| match l {
            Lit::A(a) => format!("A({})", show(*a)),
            Lit::B(a, b) => format!("B({}, {})", show(*a), show(*b)),
            Lit::C(a) => format!("C({})", show(*a)),
            Lit::F(a, b) => format!("F[{}] = {}", show(*a), show(*b)),
            Lit::NotC(v) => format!("!C({})", VARS[*v]),
            Lit::Lt(a, b) => format!("{} < {}", VARS[*a], VARS[*b]),
            Lit::Succ(v) => format!("w = {} + 1", VARS[*v]),
        })
        .collect();
    if body.iter().any(|l| matches!(l, Lit::Succ(_))) {
        head.push("w".into());
    }
    Some(format!("Out({}) <- {}.", head.join(", "), parts.join(", ")))
}

fn compile(body: &[Lit]) -> Option<(Program, Plan)> {
    let src = text(body)?;
    let p = Program::compile(schema(), &src, &HashMap::new()).ok()?;
    let plan = Plan::new(&p.rules[0], |s| p.key_arity(s)).ok()?;
    Some((p, plan))
}

/// `A`, `B`, `C` and `F`, indexed by predicate id.
fn views() -> impl Strategy<Value = Vec<View>> {
    let keys1 = prop::collection::btree_set(0..K, 0..=K as usize);
    let keys2 = prop::collection::btree_set((0..K, 0..K), 0..8);
    let f = prop::collection::btree_map(0..K, 0..K, 0..=K as usize);
    (keys1.clone(), keys2, keys1, f).prop_map(|(a, b, c, f)| {
        let rel = |ks: Vec<Key>| -> View { ks.into_iter().map(|k| (k, Row::new())).collect() };
        vec![
            rel(a.into_iter().map(|x| vec![Value::Int(x)]).collect()),
            rel(b.into_iter().map(|(x, y)| vec![Value::Int(x), Value::Int(y)]).collect()),
            rel(c.into_iter().map(|x| vec![Value::Int(x)]).collect()),
            f.into_iter().map(|(k, v)| (vec![Value::Int(k)], vec![Value::Int(v)])).collect(),
        ]
    })
}

/// Edits as `(pred, key, row)`; an existing key with no row is deleted.
fn edits() -> impl Strategy<Value = Vec<(usize, Key, Option<Row>)>> {
    let one = prop_oneof![
        (0..K, any::<bool>()).prop_map(|(x, on)| (0, vec![Value::Int(x)], on.then(Row::new))),
        (0..K, 0..K, any::<bool>()).prop_map(|(x, y, on)| (1, vec![Value::Int(x), Value::Int(y)], on.then(Row::new))),
        (0..K, any::<bool>()).prop_map(|(x, on)| (2, vec![Value::Int(x)], on.then(Row::new))),
        (0..K, proptest::option::of(0..K)).prop_map(|(k, v)| (3, vec![Value::Int(k)], v.map(|v| vec![Value::Int(v)]))),
    ];
    prop::collection::vec(one, 1..=5)
}

fn pred_of(s: Slot) -> usize {
    match s {
        Slot::Start(p) | Slot::End(p) => p as usize,
        Slot::Temp(_) => unreachable!("bodies read stored predicates only"),
    }
}

fn views_for<'a>(plan: &Plan, all: &'a [View]) -> Vec<&'a View> {
    plan.slots.iter().map(|s| &all[pred_of(*s)]).collect()
}

fn full(p: &Program, plan: &Plan, all: &[View]) -> BTreeSet<(usize, Vec<Value>)> {
    eval_rule_full(plan, &views_for(plan, all), |t| p.target_key_arity(t)).unwrap()
}

fn int(v: &View, k: i64) -> Option<i64> {
    v.get(&vec![Value::Int(k)]).map(|r| r[0].as_int().unwrap())
}

/// The body over every assignment of its variables.
fn naive(body: &[Lit], all: &[View]) -> BTreeSet<Vec<Value>> {
    let vars = head_vars(body);
    let mut out = BTreeSet::new();
    let n = vars.len() as u32;
    for code in 0..K.pow(n) {
        let mut env = [0i64; 3];
        for (i, v) in vars.iter().enumerate() {
            env[*v] = code / K.pow(i as u32) % K;
        }
        let val = |t: T| match t {
            T::Var(i) => env[i],
            T::Const(c) => c,
        };
        let has = |p: usize, k: Vec<i64>| all[p].contains_key(&k.into_iter().map(Value::Int).collect::<Key>());
        let ok = body.iter().all(|l| match l {
            Lit::A(a) => has(0, vec![val(*a)]),
            Lit::B(a, b) => has(1, vec![val(*a), val(*b)]),
            Lit::C(a) => has(2, vec![val(*a)]),
            Lit::F(a, b) => int(&all[3], val(*a)) == Some(val(*b)),
            Lit::NotC(v) => !has(2, vec![env[*v]]),
            Lit::Lt(a, b) => env[*a] < env[*b],
            Lit::Succ(_) => unreachable!(),
        });
        if ok {
            out.insert(vars.iter().map(|v| Value::Int(env[*v])).collect());
        }
    }
    out
}

/// Leapfrog join against enumeration of all assignments, and its output
/// order.
pub fn naive_equivalence(cases: u32) -> Outcome {
    check(cases, (lits(false), views()), |(body, all)| {
        let Some((p, plan)) = compile(&body) else { return Err(TestCaseError::reject("not a valid rule")) };
        let got: BTreeSet<Vec<Value>> = full(&p, &plan, &all).into_iter().map(|(_, t)| t).collect();
        prop_assert_eq!(got, naive(&body, &all), "{}", text(&body).unwrap());
        let stream = leapfrog_join(&plan, &views_for(&plan, &all));
        for w in stream.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        Ok(())
    })
}

fn apply(all: &[View], edits: &[(usize, Key, Option<Row>)]) -> (Vec<View>, Vec<Vec<Key>>) {
    let mut new = all.to_vec();
    let mut keys = vec![Vec::new(); all.len()];
    for (p, k, r) in edits {
        match r {
            Some(r) => new[*p].insert(k.clone(), r.clone()),
            None => new[*p].remove(k),
        };
        if !keys[*p].contains(k) {
            keys[*p].push(k.clone());
        }
    }
    (new, keys)
}

fn atom_changes(plan: &Plan, old: &[View], new: &[View], keys: &[Vec<Key>]) -> Vec<AtomChange> {
    let mut out = Vec::new();
    for (i, s) in plan.slots.iter().enumerate() {
        let j = pred_of(*s);
        for t in changed_tuples(&old[j], &new[j], &keys[j]) {
            out.push((i, t));
        }
    }
    out
}

/// Several rounds of maintenance each match the diff of full evaluations;
/// records are only ever added.
pub fn maintenance(cases: u32) -> Outcome {
    check(cases, (lits(true), views(), prop::collection::vec(edits(), 1..4)), |(body, all, rounds)| {
        let Some((p, plan)) = compile(&body) else { return Err(TestCaseError::reject("not a valid rule")) };
        let src = text(&body).unwrap();
        let mut st = RuleState::new(plan.clone());
        st.evaluate(&views_for(&plan, &all));
        let mut cur = all;
        for e in &rounds {
            let (next, keys) = apply(&cur, e);
            let before_records: BTreeSet<_> = st.index.records().into_iter().collect();
            let changes = atom_changes(&plan, &cur, &next, &keys);
            let (got, _) = st.maintain(&views_for(&plan, &cur), &views_for(&plan, &next), &changes);
            let (b, a) = (full(&p, &plan, &cur), full(&p, &plan, &next));
            let mut want: Vec<HeadChange> = b
                .difference(&a)
                .map(|(h, t)| HeadChange { head: *h, tuple: t.clone(), inserted: false })
                .chain(a.difference(&b).map(|(h, t)| HeadChange { head: *h, tuple: t.clone(), inserted: true }))
                .collect();
            want.sort();
            prop_assert_eq!(got, want, "{}", src);
            let derived: BTreeSet<_> = st.derived().cloned().collect();
            prop_assert_eq!(derived, a, "{}", src);
            let after_records: BTreeSet<_> = st.index.records().into_iter().collect();
            prop_assert!(before_records.is_subset(&after_records));
            cur = next;
        }
        Ok(())
    })
}

/// A change that no record covers cannot change the result.
pub fn soundness(cases: u32) -> Outcome {
    check(cases, (lits(true), views(), edits()), |(body, all, e)| {
        let Some((p, plan)) = compile(&body) else { return Err(TestCaseError::reject("not a valid rule")) };
        let mut st = RuleState::new(plan.clone());
        st.evaluate(&views_for(&plan, &all));
        let (next, keys) = apply(&all, &e);
        let changes = atom_changes(&plan, &all, &next, &keys);
        if !st.oracle(&changes).regions.is_empty() {
            return Err(TestCaseError::reject("change touches a record"));
        }
        prop_assert_eq!(full(&p, &plan, &all), full(&p, &plan, &next), "{}", text(&body).unwrap());
        Ok(())
    })
}
