//! Leapfrog triejoin over persistent maps.
//!
//! Each atom is read as a trie: its key columns in order, then the value
//! column for functions. A plan assigns every variable a level. Join levels
//! leapfrog the iterators of all atoms whose next column is that variable;
//! computed levels evaluate arithmetic. Constant or repeated columns,
//! negations and comparisons run as checks between levels.
//!
//! Runs can collect sensitivity records: every lookup remembers the key
//! range `[requested, found]` it inspected together with the bindings that
//! led there, so a later change can be matched against them. Runs can also be
//! restricted to a region (fixed leading bindings, one level clamped) to
//! re-evaluate only what a change may affect.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::domain::Elem;
use crate::pstore::{Key, Row, Value};
use crate::pstore::PMap;
use crate::rulelang::{variable_order, Arg, ArithOp, CmpOp, NRule, Prim, RuleError, Slot, Target, VarId};

pub type View = PMap<Key, Row>;
pub type Tuple = Vec<Value>;

/// The tuple an entry of a view stands for: key columns, then value columns.
pub fn tuple_of(key: &Key, row: &Row) -> Tuple {
    key.iter().chain(row.iter()).cloned().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Level {
    /// Leapfrog over `(atom, column)` iterators.
    Join(Vec<(usize, usize)>),
    /// Evaluate `prims[i]`.
    Compute(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckOp {
    /// Filter with `prims[i]`.
    Cmp(usize),
    /// Exact lookup of a constant or repeated column.
    Bound { atom: usize, col: usize },
    /// Presence test of a whole tuple; `negated` for `!atom`.
    Lookup { atom: usize, negated: bool },
}

/// Which part of a run a sensitivity record belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKind {
    /// The leapfrog at this level, under the bindings of earlier levels.
    Var(usize),
    /// The checks after this level (-1: before the first level).
    Check(isize),
}

impl RegionKind {
    /// Number of leading bindings that identify the region.
    pub fn ctx_len(&self) -> usize {
        match *self {
            RegionKind::Var(l) => l,
            RegionKind::Check(c) => (c + 1) as usize,
        }
    }
}

/// One inspected range: at column `depth` of `atom`, under `prefix`, keys
/// in `[lo, hi]` were examined.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensRecord {
    pub atom: usize,
    pub depth: usize,
    pub prefix: Vec<Value>,
    pub lo: Elem,
    pub hi: Elem,
    pub kind: RegionKind,
    pub ctx: Vec<Value>,
}

impl SensRecord {
    pub fn contains(&self, v: &Value) -> bool {
        let e = Elem::Val(v.clone());
        self.lo <= e && e <= self.hi
    }
}

/// A region of the search: bindings `ctx` fixed for the leading levels and,
/// for `Var(l)`, level `l` restricted to `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region {
    pub kind: RegionKind,
    pub ctx: Vec<Value>,
    pub lo: Elem,
    pub hi: Elem,
}

impl Region {
    pub fn of(r: &SensRecord) -> Region {
        match r.kind {
            RegionKind::Var(_) => Region { kind: r.kind, ctx: r.ctx.clone(), lo: r.lo.clone(), hi: r.hi.clone() },
            RegionKind::Check(_) => Region { kind: r.kind, ctx: r.ctx.clone(), lo: Elem::NegInf, hi: Elem::PosInf },
        }
    }

    /// The whole search space.
    pub fn all() -> Region {
        Region { kind: RegionKind::Check(-1), ctx: vec![], lo: Elem::NegInf, hi: Elem::PosInf }
    }
}

/// Functional dependency violation: one key derived with two outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct FdViolation {
    pub head: usize,
    pub key: Vec<Value>,
}

/// An executable join plan for one normalized rule.
#[derive(Clone, Debug)]
pub struct Plan {
    pub rule: NRule,
    pub order: Vec<VarId>,
    pub level_of: Vec<usize>,
    pub levels: Vec<Level>,
    /// `checks[c + 1]` runs after level `c` is bound.
    pub checks: Vec<Vec<CheckOp>>,
    /// Columns of positive atoms followed by negated atoms.
    pub cols: Vec<Vec<Arg>>,
    pub slots: Vec<Slot>,
    pub key_arity: Vec<usize>,
    pub n_pos: usize,
}

impl Plan {
    /// Build a plan. `key_arity` gives the number of key columns of a slot.
    pub fn new(rule: &NRule, key_arity: impl Fn(Slot) -> usize) -> Result<Plan, RuleError> {
        let order = variable_order(rule)?;
        let mut level_of = vec![usize::MAX; rule.vars.len()];
        for (l, v) in order.iter().enumerate() {
            level_of[*v] = l;
        }
        let atoms: Vec<_> = rule.atoms.iter().chain(rule.negs.iter()).collect();
        let cols: Vec<Vec<Arg>> = atoms.iter().map(|a| a.args.clone()).collect();
        let slots: Vec<Slot> = atoms.iter().map(|a| a.slot).collect();
        let n = order.len();
        let mut levels: Vec<Level> = Vec::with_capacity(n);
        for v in &order {
            match rule.prims.iter().position(|p| p.output() == Some(*v)) {
                Some(i) => levels.push(Level::Compute(i)),
                None => levels.push(Level::Join(Vec::new())),
            }
        }
        let mut checks: Vec<Vec<CheckOp>> = vec![Vec::new(); n + 1];
        let cp = |args: &[Arg]| -> isize {
            args.iter().filter_map(Arg::var).map(|v| level_of[v] as isize).max().unwrap_or(-1)
        };
        for (i, p) in rule.prims.iter().enumerate() {
            if p.output().is_none() {
                let c = p.inputs().iter().map(|v| level_of[*v] as isize).max().unwrap_or(-1);
                checks[(c + 1) as usize].push(CheckOp::Cmp(i));
            }
        }
        let mut bound: Vec<(isize, usize, usize)> = Vec::new();
        for (a, args) in cols.iter().enumerate().take(rule.atoms.len()) {
            if args.is_empty() {
                checks[0].push(CheckOp::Lookup { atom: a, negated: false });
            }
            let mut seen: Vec<VarId> = Vec::new();
            for (j, arg) in args.iter().enumerate() {
                match arg {
                    Arg::Var(v) if !seen.contains(v) => {
                        seen.push(*v);
                        match &mut levels[level_of[*v]] {
                            Level::Join(parts) => parts.push((a, j)),
                            Level::Compute(_) => unreachable!("atom variables are never computed"),
                        }
                    }
                    _ => bound.push((cp(&args[..=j]), a, j)),
                }
            }
        }
        bound.sort();
        for (c, atom, col) in bound {
            checks[(c + 1) as usize].push(CheckOp::Bound { atom, col });
        }
        for (i, neg) in rule.negs.iter().enumerate() {
            let c = cp(&neg.args);
            checks[(c + 1) as usize].push(CheckOp::Lookup { atom: rule.atoms.len() + i, negated: true });
        }
        let key_arity = slots.iter().map(|s| key_arity(*s)).collect();
        Ok(Plan { rule: rule.clone(), order, level_of, levels, checks, cols, slots, key_arity, n_pos: rule.atoms.len() })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn var_names(&self) -> Vec<&str> {
        self.order.iter().map(|v| self.rule.vars[*v].as_str()).collect()
    }

    fn arg_val(&self, a: &Arg, bind: &[Value]) -> Value {
        match a {
            Arg::Const(c) => c.clone(),
            Arg::Var(v) => bind[self.level_of[*v]].clone(),
        }
    }

    /// Head tuples produced by one assignment.
    pub fn heads_of(&self, assignment: &[Value]) -> Vec<(usize, Tuple)> {
        self.rule
            .heads
            .iter()
            .enumerate()
            .map(|(i, h)| (i, h.args.iter().map(|a| self.arg_val(a, assignment)).collect()))
            .collect()
    }
}

/// Least value `>= target` (or `> target` if `strict`) at column
/// `prefix.len()` among tuples extending `prefix`.
pub fn lub(view: &View, key_arity: usize, prefix: &[Value], target: Option<&Value>, strict: bool) -> Option<Value> {
    let d = prefix.len();
    if d >= key_arity {
        let row = view.get(&prefix[..key_arity])?;
        let v = row.get(d - key_arity)?;
        let ok = match target {
            None => true,
            Some(t) => match v.cmp(t) {
                Ordering::Greater => true,
                Ordering::Equal => !strict,
                Ordering::Less => false,
            },
        };
        return ok.then(|| v.clone());
    }
    let probe = |k: &Key| -> Ordering {
        match k[..d].cmp(prefix) {
            Ordering::Equal => {}
            o => return o,
        }
        match target {
            None => Ordering::Equal,
            Some(t) => match k[d].cmp(t) {
                Ordering::Equal if strict => Ordering::Less,
                Ordering::Equal => Ordering::Equal,
                o => o,
            },
        }
    };
    let (k, _) = view.lower_bound_by(probe)?;
    (k[..d] == *prefix).then(|| k[d].clone())
}

/// Whether the view holds exactly this tuple.
pub fn holds(view: &View, key_arity: usize, tuple: &[Value]) -> bool {
    if tuple.len() < key_arity {
        return false;
    }
    match view.get(&tuple[..key_arity]) {
        Some(row) => row.as_slice() == &tuple[key_arity..],
        None => false,
    }
}

pub fn eval_arith(op: ArithOp, a: &Value, b: &Value) -> Option<Value> {
    let (x, y) = (a.as_int()?, b.as_int()?);
    let r = match op {
        ArithOp::Add => x.checked_add(y)?,
        ArithOp::Sub => x.checked_sub(y)?,
        ArithOp::Mul => x.checked_mul(y)?,
    };
    Some(Value::Int(r))
}

pub fn eval_cmp(op: CmpOp, a: &Value, b: &Value) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        _ => match a.try_cmp(b) {
            Ok(o) => match op {
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o != Ordering::Greater,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ge => o != Ordering::Less,
                CmpOp::Eq | CmpOp::Ne => unreachable!(),
            },
            Err(_) => false,
        },
    }
}

/// Output of one run.
#[derive(Debug, Default)]
pub struct RunOutput {
    /// Satisfying assignments in variable order, ascending.
    pub assignments: Vec<Vec<Value>>,
    pub sens: Vec<SensRecord>,
    /// Iterator operations per atom.
    pub seeks: Vec<usize>,
}

struct Exec<'a> {
    plan: &'a Plan,
    views: &'a [&'a View],
    region: &'a Region,
    fixed: usize,
    collect: bool,
    bind: Vec<Value>,
    out: RunOutput,
}

impl<'a> Exec<'a> {
    fn record(&mut self, atom: usize, depth: usize, prefix: &[Value], lo: Elem, hi: Elem, kind: RegionKind) {
        if self.collect {
            let ctx = self.bind[..kind.ctx_len()].to_vec();
            self.out.sens.push(SensRecord { atom, depth, prefix: prefix.to_vec(), lo, hi, kind, ctx });
        }
    }

    fn prefix(&self, atom: usize, col: usize) -> Vec<Value> {
        self.plan.cols[atom][..col].iter().map(|a| self.plan.arg_val(a, &self.bind)).collect()
    }

    fn seek(&mut self, atom: usize, prefix: &[Value], target: Option<&Value>, strict: bool) -> Option<Value> {
        self.out.seeks[atom] += 1;
        lub(self.views[atom], self.plan.key_arity[atom], prefix, target, strict)
    }

    fn checks(&mut self, c: isize) -> bool {
        let plan = self.plan;
        let kind = RegionKind::Check(c);
        for op in &plan.checks[(c + 1) as usize] {
            match *op {
                CheckOp::Cmp(i) => {
                    let Prim::Cmp { op, a, b } = &plan.rule.prims[i] else { unreachable!() };
                    if !eval_cmp(*op, &plan.arg_val(a, &self.bind), &plan.arg_val(b, &self.bind)) {
                        return false;
                    }
                }
                CheckOp::Bound { atom, col } => {
                    let prefix = self.prefix(atom, col);
                    let v = plan.arg_val(&plan.cols[atom][col], &self.bind);
                    let found = self.seek(atom, &prefix, Some(&v), false);
                    self.record(atom, col, &prefix, Elem::Val(v.clone()), Elem::Val(v.clone()), kind);
                    if found.as_ref() != Some(&v) {
                        return false;
                    }
                }
                CheckOp::Lookup { atom, negated } => {
                    let tuple = self.prefix(atom, plan.cols[atom].len());
                    self.out.seeks[atom] += 1;
                    let present = holds(self.views[atom], plan.key_arity[atom], &tuple);
                    match tuple.split_last() {
                        Some((last, init)) => {
                            self.record(atom, init.len(), init, Elem::Val(last.clone()), Elem::Val(last.clone()), kind)
                        }
                        None => self.record(atom, 0, &[], Elem::NegInf, Elem::PosInf, kind),
                    }
                    if present == negated {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn compute(&self, i: usize) -> Option<Value> {
        match &self.plan.rule.prims[i] {
            Prim::Arith { op, a, b, .. } => {
                eval_arith(*op, &self.plan.arg_val(a, &self.bind), &self.plan.arg_val(b, &self.bind))
            }
            Prim::Assign { a, .. } => Some(self.plan.arg_val(a, &self.bind)),
            Prim::Cmp { .. } => unreachable!("filters are checks"),
        }
    }

    fn descend(&mut self, l: usize, v: Value) {
        self.bind.push(v);
        if self.checks(l as isize) {
            self.level(l + 1);
        }
        self.bind.pop();
    }

    fn level(&mut self, l: usize) {
        let plan = self.plan;
        if l == plan.levels.len() {
            self.out.assignments.push(self.bind.clone());
            return;
        }
        if l < self.fixed {
            let c = self.region.ctx[l].clone();
            match &plan.levels[l] {
                Level::Compute(i) => {
                    if self.compute(*i).as_ref() != Some(&c) {
                        return;
                    }
                }
                Level::Join(parts) => {
                    for &(atom, col) in parts {
                        let prefix = self.prefix(atom, col);
                        let found = self.seek(atom, &prefix, Some(&c), false);
                        self.record(atom, col, &prefix, Elem::Val(c.clone()), Elem::Val(c.clone()), RegionKind::Var(l));
                        if found.as_ref() != Some(&c) {
                            return;
                        }
                    }
                }
            }
            self.descend(l, c);
            return;
        }
        let (lo, hi) = match self.region.kind {
            RegionKind::Var(r) if r == l => (self.region.lo.clone(), self.region.hi.clone()),
            _ => (Elem::NegInf, Elem::PosInf),
        };
        match &plan.levels[l] {
            Level::Compute(i) => {
                if let Some(v) = self.compute(*i) {
                    let e = Elem::Val(v.clone());
                    if lo <= e && e <= hi {
                        self.descend(l, v);
                    }
                }
            }
            Level::Join(parts) => self.leapfrog(l, parts, lo, hi),
        }
    }

    fn leapfrog(&mut self, l: usize, parts: &[(usize, usize)], lo: Elem, hi: Elem) {
        let kind = RegionKind::Var(l);
        let k = parts.len();
        let prefixes: Vec<Vec<Value>> = parts.iter().map(|&(a, c)| self.prefix(a, c)).collect();
        let mut xs: Vec<Value> = Vec::with_capacity(k);
        let mut ended = false;
        for (i, &(atom, col)) in parts.iter().enumerate() {
            let found = match &lo {
                Elem::Val(v) => self.seek(atom, &prefixes[i], Some(v), false),
                Elem::NegInf => self.seek(atom, &prefixes[i], None, false),
                Elem::PosInf => None,
            };
            let fe = found.clone().map_or(Elem::PosInf, Elem::Val);
            self.record(atom, col, &prefixes[i], lo.clone(), fe, kind);
            match found {
                Some(v) => xs.push(v),
                None => ended = true,
            }
        }
        if ended {
            return;
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|a, b| xs[*a].cmp(&xs[*b]));
        let mut p = 0;
        loop {
            let max = xs[order[(p + k - 1) % k]].clone();
            if Elem::Val(max.clone()) > hi {
                return;
            }
            let i = order[p];
            let (atom, col) = parts[i];
            let strict = xs[i] == max;
            if strict {
                self.descend(l, max.clone());
            }
            let found = self.seek(atom, &prefixes[i], Some(&max), strict);
            let fe = found.clone().map_or(Elem::PosInf, Elem::Val);
            self.record(atom, col, &prefixes[i], Elem::Val(max), fe, kind);
            match found {
                Some(v) => xs[i] = v,
                None => return,
            }
            p = (p + 1) % k;
        }
    }
}

/// Run `plan` over `views` (one per atom, positive atoms then negations)
/// within `region`, optionally collecting sensitivity records.
pub fn run(plan: &Plan, views: &[&View], region: &Region, collect: bool) -> RunOutput {
    assert_eq!(views.len(), plan.cols.len(), "one view per atom");
    let fixed = region.kind.ctx_len();
    let mut ex = Exec {
        plan,
        views,
        region,
        fixed,
        collect,
        bind: Vec::with_capacity(plan.levels.len()),
        out: RunOutput { seeks: vec![0; plan.cols.len()], ..Default::default() },
    };
    if ex.checks(-1) {
        ex.level(0);
    }
    ex.out
}

/// All satisfying assignments, in ascending variable order.
pub fn leapfrog_join(plan: &Plan, views: &[&View]) -> Vec<Vec<Value>> {
    run(plan, views, &Region::all(), false).assignments
}

/// Evaluate a rule fully: the set of `(head index, tuple)` it derives.
///
/// `target_key_arity` gives the key arity of each head's target, so function
/// heads can be checked for conflicting values.
pub fn eval_rule_full(
    plan: &Plan,
    views: &[&View],
    target_key_arity: impl Fn(Target) -> Option<usize>,
) -> Result<BTreeSet<(usize, Tuple)>, FdViolation> {
    let mut out = BTreeSet::new();
    for a in leapfrog_join(plan, views) {
        out.extend(plan.heads_of(&a));
    }
    check_fd(plan, &out, target_key_arity)?;
    Ok(out)
}

fn check_fd(
    plan: &Plan,
    derived: &BTreeSet<(usize, Tuple)>,
    target_key_arity: impl Fn(Target) -> Option<usize>,
) -> Result<(), FdViolation> {
    // Heads writing the same target share one key space.
    let mut seen: BTreeMap<(Target, Vec<Value>), (usize, &[Value])> = BTreeMap::new();
    for (h, t) in derived {
        let target = plan.rule.heads[*h].target;
        let Some(k) = target_key_arity(target) else { continue };
        if t.len() <= k {
            continue;
        }
        let key = t[..k].to_vec();
        match seen.get(&(target, key.clone())) {
            Some((_, v)) if *v != &t[k..] => return Err(FdViolation { head: *h, key }),
            Some(_) => {}
            None => {
                seen.insert((target, key), (*h, &t[k..]));
            }
        }
    }
    Ok(())
}
