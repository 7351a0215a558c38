use std::collections::{BTreeSet, HashMap};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::lftj::eval_rule_full;
use crate::pstore::{Key, Row};
use crate::rulelang::Program;
use crate::testkit::{random_body, random_changes, random_views, read_index, rule_with_vars_head, schema, views_for};

fn rel(rows: &[&[i64]]) -> View {
    rows.iter().map(|r| (r.iter().map(|v| Value::Int(*v)).collect::<Key>(), Row::new())).collect()
}

fn ints(v: &[i64]) -> Vec<Value> {
    v.iter().map(|x| Value::Int(*x)).collect()
}

fn abc() -> (Program, Plan) {
    let p = Program::compile(schema(), "^D(x,y) <- A(x), B(x,y), C(y).", &HashMap::new()).unwrap();
    let plan = Plan::new(&p.rules[0], |s| p.key_arity(s)).unwrap();
    (p, plan)
}

fn sample() -> (View, View, View) {
    (
        rel(&[&[1], &[3], &[4], &[5], &[6], &[7]]),
        rel(&[&[2, 100], &[5, 101], &[5, 102], &[5, 106], &[7, 110]]),
        rel(&[&[101], &[104], &[108], &[111]]),
    )
}

fn v(i: i64) -> Elem {
    Elem::Val(Value::Int(i))
}

#[test]
fn stab_finds_matching_record_only() {
    let (_, plan) = abc();
    let (a, b, c) = sample();
    let mut st = RuleState::new(plan);
    st.evaluate(&[&a, &b, &c]);
    let hits = st.index.stab(2, 0, &ints(&[102]));
    let expect = SensRecord {
        atom: 2,
        depth: 0,
        prefix: vec![],
        lo: v(102),
        hi: v(104),
        kind: RegionKind::Var(1),
        ctx: ints(&[5]),
    };
    assert_eq!(hits, vec![expect]);
    assert!(st.index.stab(2, 0, &ints(&[105])).is_empty());
}

#[test]
fn inserting_102_derives_one_tuple() {
    let (_, plan) = abc();
    let (a, b, c) = sample();
    let mut st = RuleState::new(plan);
    let (init, _) = st.evaluate(&[&a, &b, &c]);
    assert_eq!(init, vec![HeadChange { head: 0, tuple: ints(&[5, 101]), inserted: true }]);
    let c2 = c.with(ints(&[102]), Row::new());
    let (d, _) = st.maintain(&[&a, &b, &c], &[&a, &b, &c2], &[(2, ints(&[102]))]);
    assert_eq!(d, vec![HeadChange { head: 0, tuple: ints(&[5, 102]), inserted: true }]);
}

#[test]
fn inserting_105_changes_nothing() {
    let (_, plan) = abc();
    let (a, b, c) = sample();
    let mut st = RuleState::new(plan);
    st.evaluate(&[&a, &b, &c]);
    let c2 = c.with(ints(&[105]), Row::new());
    let oracle = st.oracle(&[(2, ints(&[105]))]);
    assert!(oracle.regions.is_empty());
    let (d, _) = st.maintain(&[&a, &b, &c], &[&a, &b, &c2], &[(2, ints(&[105]))]);
    assert!(d.is_empty());
    assert_eq!(st.region_runs, 1);
}

#[test]
fn empty_change_set_is_identity() {
    let (_, plan) = abc();
    let (a, b, c) = sample();
    let mut st = RuleState::new(plan);
    st.evaluate(&[&a, &b, &c]);
    let (d, s) = st.maintain(&[&a, &b, &c], &[&a, &b, &c], &[]);
    assert!(d.is_empty() && s.is_empty());
}

#[test]
fn interval_index_matches_linear_scan() {
    let mut rng = StdRng::seed_from_u64(3);
    for round in 0..50 {
        let mut idx = IntervalIndex::new();
        let mut all = Vec::new();
        for i in 0..rng.gen_range(0..300) {
            let lo = rng.gen_range(0..100);
            let hi = lo + rng.gen_range(0..20);
            let (lo, hi) = match rng.gen_range(0..10) {
                0 => (Elem::NegInf, v(hi)),
                1 => (v(lo), Elem::PosInf),
                _ => (v(lo), v(hi)),
            };
            idx.insert(lo.clone(), hi.clone(), i);
            all.push((lo, hi, i));
        }
        for p in -2..125 {
            let p = v(p);
            let mut got = Vec::new();
            idx.stab(&p, &mut got);
            let mut got: Vec<usize> = got.into_iter().map(|(_, _, i)| *i).collect();
            got.sort();
            let want: Vec<usize> = all.iter().filter(|(l, h, _)| *l <= p && p <= *h).map(|(_, _, i)| *i).collect();
            assert_eq!(got, want, "round {round}");
            assert_eq!(idx.any_contains(&p), !want.is_empty());
        }
    }
}

fn atom_changes(plan: &Plan, p: &Program, old: &[View], new: &[View], keys: &[Vec<Key>]) -> Vec<AtomChange> {
    let mut out = Vec::new();
    for (i, s) in plan.slots.iter().enumerate() {
        let j = read_index(p, *s);
        for t in changed_tuples(&old[j], &new[j], &keys[j]) {
            out.push((i, t));
        }
    }
    out
}

fn full(plan: &Plan, p: &Program, views: &[View]) -> BTreeSet<(usize, Vec<Value>)> {
    eval_rule_full(plan, &views_for(plan, p, views), |_| None).unwrap()
}

#[test]
fn maintenance_equals_reevaluation_diff() {
    let mut rng = StdRng::seed_from_u64(11);
    let mut cases = 0;
    while cases < 400 {
        let body = random_body(&mut rng);
        let Some((p, plan)) = rule_with_vars_head(&body) else { continue };
        let keys = if cases % 4 == 0 { 12 } else { 4 };
        let mut cur = random_views(&mut rng, keys, 10);
        let mut st = RuleState::new(plan.clone());
        st.evaluate(&views_for(&plan, &p, &cur));
        // Several rounds, so records from earlier maintenance are exercised.
        for _ in 0..3 {
            let (next, keys_changed) = random_changes(&mut rng, &cur, keys);
            let changes = atom_changes(&plan, &p, &cur, &next, &keys_changed);
            let (got, _) = st.maintain(&views_for(&plan, &p, &cur), &views_for(&plan, &p, &next), &changes);
            let before = full(&plan, &p, &cur);
            let after = full(&plan, &p, &next);
            let mut want: Vec<HeadChange> = before
                .difference(&after)
                .map(|(h, t)| HeadChange { head: *h, tuple: t.clone(), inserted: false })
                .chain(after.difference(&before).map(|(h, t)| HeadChange { head: *h, tuple: t.clone(), inserted: true }))
                .collect();
            want.sort();
            assert_eq!(got, want, "{body}");
            let mut derived: Vec<_> = st.derived().cloned().collect();
            derived.sort();
            assert_eq!(derived, after.into_iter().collect::<Vec<_>>(), "{body}");
            cur = next;
            cases += 1;
        }
    }
}

#[test]
fn untouched_sensitivities_mean_unchanged_result() {
    let mut rng = StdRng::seed_from_u64(19);
    let mut cases = 0;
    while cases < 300 {
        let body = random_body(&mut rng);
        let Some((p, plan)) = rule_with_vars_head(&body) else { continue };
        let cur = random_views(&mut rng, 6, 10);
        let mut st = RuleState::new(plan.clone());
        st.evaluate(&views_for(&plan, &p, &cur));
        let (next, keys_changed) = random_changes(&mut rng, &cur, 6);
        let changes = atom_changes(&plan, &p, &cur, &next, &keys_changed);
        if !st.oracle(&changes).regions.is_empty() {
            continue;
        }
        assert_eq!(full(&plan, &p, &cur), full(&plan, &p, &next), "{body}");
        cases += 1;
    }
}

#[test]
fn exported_intervals() {
    let r = SensRecord {
        atom: 0,
        depth: 1,
        prefix: ints(&[5]),
        lo: v(102),
        hi: v(104),
        kind: RegionKind::Var(1),
        ctx: ints(&[5]),
    };
    let iv = export_interval(&r, 1, 2);
    assert!(iv.contains(1, &ints(&[5, 102])) && iv.contains(1, &ints(&[5, 104])));
    assert!(!iv.contains(1, &ints(&[5, 105])) && !iv.contains(1, &ints(&[4, 103])));
    // A shallower column covers every key under the found value.
    let r = SensRecord { depth: 0, prefix: vec![], ..r };
    let iv = export_interval(&r, 1, 2);
    assert!(iv.contains(1, &ints(&[104, 999])) && iv.contains(1, &ints(&[102, -5])));
    assert!(!iv.contains(1, &ints(&[105, 0])));
    // Value column of a function: the key itself.
    let r = SensRecord { depth: 1, prefix: ints(&[7]), lo: Elem::NegInf, hi: Elem::PosInf, ..r };
    assert_eq!(export_interval(&r, 4, 1), KeyInterval::point(4, &ints(&[7])));
    let r = SensRecord { depth: 0, prefix: vec![], lo: v(3), hi: Elem::PosInf, ..r };
    let iv = export_interval(&r, 4, 1);
    assert!(iv.contains(4, &ints(&[3])) && iv.contains(4, &ints(&[1000])) && !iv.contains(4, &ints(&[2])));
}
