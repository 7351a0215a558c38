//! One-at-a-time execution with a deliberately simple evaluator.
//!
//! Rule bodies are matched by nested loops over fully materialized views,
//! with a direct lookup when an atom's key is already bound. It shares the
//! compiled rule form with the engine and nothing else.

use std::collections::{BTreeMap, BTreeSet};

use txrepair::pstore::{DbVersion, Key, PredId, Row, Value};
use txrepair::rulelang::{Arg, ArithOp, CmpOp, NAtom, NRule, Prim, Program, Slot, Target};
use txrepair::txn::TxnSpec;

type Table = BTreeMap<Key, Row>;

/// Result of running one transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleTxn {
    pub failed: bool,
    /// Net changes: `None` retracts.
    pub writes: BTreeMap<(PredId, Key), Option<Row>>,
}

struct State<'a> {
    program: &'a Program,
    start: BTreeMap<PredId, Table>,
    end: BTreeMap<PredId, Table>,
    temps: Vec<BTreeMap<Key, BTreeSet<Row>>>,
}

impl State<'_> {
    fn table(&self, slot: Slot) -> Table {
        match slot {
            Slot::Start(p) => self.start[&p].clone(),
            Slot::End(p) => self.end[&p].clone(),
            Slot::Temp(t) => self.temps[t as usize]
                .iter()
                .flat_map(|(k, rows)| rows.iter().map(move |r| (k.clone(), r.clone())))
                .collect(),
        }
    }
}

fn cmp(op: CmpOp, a: &Value, b: &Value) -> bool {
    use std::cmp::Ordering::*;
    if op == CmpOp::Eq {
        return a == b;
    }
    if op == CmpOp::Ne {
        return a != b;
    }
    let same_type = std::mem::discriminant(a) == std::mem::discriminant(b);
    if !same_type {
        return false;
    }
    let o = a.cmp(b);
    match op {
        CmpOp::Lt => o == Less,
        CmpOp::Le => o != Greater,
        CmpOp::Gt => o == Greater,
        CmpOp::Ge => o != Less,
        CmpOp::Eq | CmpOp::Ne => unreachable!(),
    }
}

fn arith(op: ArithOp, a: &Value, b: &Value) -> Option<Value> {
    let (Value::Int(x), Value::Int(y)) = (a, b) else { return None };
    Some(Value::Int(match op {
        ArithOp::Add => x.checked_add(*y)?,
        ArithOp::Sub => x.checked_sub(*y)?,
        ArithOp::Mul => x.checked_mul(*y)?,
    }))
}

type Binding = Vec<Option<Value>>;

fn val(a: &Arg, b: &Binding) -> Option<Value> {
    match a {
        Arg::Const(c) => Some(c.clone()),
        Arg::Var(v) => b[*v].clone(),
    }
}

/// Try to unify `args` with a stored tuple.
fn unify(args: &[Arg], tuple: &[Value], b: &Binding) -> Option<Binding> {
    let mut out = b.clone();
    for (a, v) in args.iter().zip(tuple) {
        match a {
            Arg::Const(c) if c != v => return None,
            Arg::Const(_) => {}
            Arg::Var(x) => match &out[*x] {
                Some(bound) if bound != v => return None,
                Some(_) => {}
                None => out[*x] = Some(v.clone()),
            },
        }
    }
    Some(out)
}

fn matches(atom: &NAtom, key_arity: usize, table: &Table, b: &Binding) -> Vec<Binding> {
    let key: Option<Key> = atom.args[..key_arity].iter().map(|a| val(a, b)).collect();
    let candidates: Vec<(Key, Row)> = match key {
        Some(k) => table.get(&k).map(|r| vec![(k, r.clone())]).unwrap_or_default(),
        None => table.iter().map(|(k, r)| (k.clone(), r.clone())).collect(),
    };
    candidates
        .into_iter()
        .filter_map(|(k, r)| {
            let tuple: Vec<Value> = k.into_iter().chain(r).collect();
            unify(&atom.args, &tuple, b)
        })
        .collect()
}

/// Apply arithmetic and filters until nothing more can be decided.
fn prims(rule: &NRule, mut b: Binding) -> Option<Binding> {
    let mut done = vec![false; rule.prims.len()];
    loop {
        let mut progress = false;
        for (i, p) in rule.prims.iter().enumerate() {
            if done[i] || p.inputs().iter().any(|v| b[*v].is_none()) {
                continue;
            }
            done[i] = true;
            progress = true;
            match p {
                Prim::Cmp { op, a, b: c } => {
                    if !cmp(*op, &val(a, &b)?, &val(c, &b)?) {
                        return None;
                    }
                }
                Prim::Arith { out, op, a, b: c } => {
                    let v = arith(*op, &val(a, &b)?, &val(c, &b)?)?;
                    match &b[*out] {
                        Some(x) if *x != v => return None,
                        Some(_) => {}
                        None => b[*out] = Some(v),
                    }
                }
                Prim::Assign { out, a } => {
                    let v = val(a, &b)?;
                    match &b[*out] {
                        Some(x) if *x != v => return None,
                        Some(_) => {}
                        None => b[*out] = Some(v),
                    }
                }
            }
        }
        if !progress {
            break;
        }
    }
    done.iter().all(|d| *d).then_some(b)
}

fn solutions(st: &State, rule: &NRule) -> Vec<Binding> {
    let mut partial: Vec<Binding> = vec![vec![None; rule.vars.len()]];
    for atom in &rule.atoms {
        let table = st.table(atom.slot);
        let ka = st.program.key_arity(atom.slot);
        partial = partial.iter().flat_map(|b| matches(atom, ka, &table, b)).collect();
    }
    partial
        .into_iter()
        .filter_map(|b| prims(rule, b))
        .filter(|b| {
            rule.negs.iter().all(|n| {
                let table = st.table(n.slot);
                let ka = st.program.key_arity(n.slot);
                matches(n, ka, &table, b).is_empty()
            })
        })
        .collect()
}

/// Run one transaction against `db`.
pub fn run_txn(db: &DbVersion, spec: &TxnSpec) -> OracleTxn {
    let program = &spec.program;
    let schema = db.schema();
    let mut st = State { program, start: BTreeMap::new(), end: BTreeMap::new(), temps: vec![BTreeMap::new(); program.temps.len()] };
    for (p, _) in schema.iter() {
        let t: Table = db.pred(p).iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        st.start.insert(p, t.clone());
        st.end.insert(p, t);
    }
    for (t, tuple) in program.facts.iter().chain(spec.facts.iter()) {
        let ka = program.temps[*t as usize].key_arity;
        st.temps[*t as usize].entry(tuple[..ka].to_vec()).or_default().insert(tuple[ka..].to_vec());
    }
    let mut failed = false;
    let mut ups: BTreeMap<(PredId, Key), BTreeSet<Row>> = BTreeMap::new();
    let mut rets: BTreeSet<(PredId, Key)> = BTreeSet::new();
    for rule in &program.rules {
        for b in solutions(&st, rule) {
            for h in &rule.heads {
                let tuple: Vec<Value> = h.args.iter().map(|a| val(a, &b).expect("head variables are bound")).collect();
                match h.target {
                    Target::Fail => failed = true,
                    Target::Temp(t) => {
                        let ka = program.temps[t as usize].key_arity;
                        st.temps[t as usize].entry(tuple[..ka].to_vec()).or_default().insert(tuple[ka..].to_vec());
                    }
                    Target::Upsert(p) => {
                        let ka = schema.sig(p).key_arity();
                        ups.entry((p, tuple[..ka].to_vec())).or_default().insert(tuple[ka..].to_vec());
                    }
                    Target::Retract(p) => {
                        rets.insert((p, tuple));
                    }
                }
            }
        }
        // Later rules reading the end state see everything written so far.
        for (p, t) in st.end.iter_mut() {
            *t = st.start[p].clone();
            for ((q, k), rows) in &ups {
                if q == p {
                    t.insert(k.clone(), rows.iter().next().expect("nonempty").clone());
                }
            }
            for (q, k) in &rets {
                if q == p {
                    t.remove(k);
                }
            }
        }
    }
    for (t, sig) in program.temps.iter().enumerate() {
        if sig.func && st.temps[t].values().any(|rows| rows.len() > 1) {
            failed = true;
        }
    }
    let mut writes = BTreeMap::new();
    for ((p, k), rows) in &ups {
        if rows.len() > 1 || rets.contains(&(*p, k.clone())) {
            failed = true;
        }
        let row = rows.iter().next().expect("nonempty");
        if schema.validate(*p, k, row).is_err() {
            failed = true;
        }
        writes.insert((*p, k.clone()), Some(row.clone()));
    }
    for r in rets {
        writes.insert(r, None);
    }
    if failed {
        writes.clear();
    }
    OracleTxn { failed, writes }
}

/// Final database and per-transaction failure flags of serial execution.
pub fn run_serial_oracle(db: &DbVersion, specs: &[&TxnSpec]) -> (DbVersion, Vec<bool>) {
    let mut db = db.clone();
    let mut failed = Vec::with_capacity(specs.len());
    for s in specs {
        let r = run_txn(&db, s);
        for ((p, k), v) in r.writes {
            match v {
                Some(row) => {
                    db.upsert(p, k, row).expect("validated");
                }
                None => {
                    db.retract(p, &k).expect("known predicate");
                }
            }
        }
        failed.push(r.failed);
    }
    (db, failed)
}
