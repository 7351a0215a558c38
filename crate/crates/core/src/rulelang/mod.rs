//! The transaction rule language.
//!
//! A transaction is a set of rules:
//!
//! ```text
//! ^acct_balance[n1]=a, ^acct_balance[n2]=b <-
//!     account_by_name["Alice"]=n1, account_by_name["Bob"]=n2,
//!     a = acct_balance@start[n1] - 100, b = acct_balance@start[n2] + 100.
//! false <- account_by_name["Alice"]=n1, acct_balance[n1] < 0.
//! ```
//!
//! `^` heads upsert stored records, `-` heads retract them, `false` heads make
//! the transaction fail, and other heads define transaction-local predicates.
//! `@start` reads the state the transaction started from; an undecorated
//! stored predicate reads the state after the transaction's own changes.
//!
//! Compilation flattens nested expressions, resolves predicates against the
//! schema and orders the rules so each one runs after everything it reads.
//! Upsert heads write to a per-predicate delta, and end-state reads see the
//! start state overlaid with that delta.

pub mod ast;
mod order;
mod parser;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::pstore::{PredId, Schema, StoreError, Value};

pub use ast::{ArithOp, Atom, CmpOp, Expr, Head, Literal, Rule, Term, Ver};
pub use order::variable_order;
pub use parser::parse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("`{pred}`: {msg}")]
    BadAtom { pred: String, msg: String },
    #[error("unbound parameter `${0}`")]
    UnboundParam(String),
    #[error("variable `{var}` in rule `{rule}` is not bound by a positive atom")]
    RangeRestriction { var: String, rule: String },
    #[error("negation in rule `{0}` has unbound variables (quantified negation is not supported)")]
    QuantifiedNegation(String),
    #[error("rules depend on each other cyclically: {0}")]
    Cyclic(String),
    #[error("no valid variable order for rule `{0}`")]
    NoVarOrder(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(String),
}

pub type VarId = usize;
pub type TempId = u32;

/// A column of a normalized atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Arg {
    Var(VarId),
    Const(Value),
}

impl Arg {
    pub fn var(&self) -> Option<VarId> {
        match self {
            Arg::Var(v) => Some(*v),
            Arg::Const(_) => None,
        }
    }
}

/// A readable view inside a transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// Stored predicate as of the transaction start (corrected).
    Start(PredId),
    /// Start state overlaid with the transaction's own delta.
    End(PredId),
    /// Transaction-local predicate.
    Temp(TempId),
}

/// Where a head writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Upsert(PredId),
    Retract(PredId),
    Temp(TempId),
    Fail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NAtom {
    pub slot: Slot,
    /// Key columns followed by the value column, if any.
    pub args: Vec<Arg>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    /// `out = a op b`.
    Arith { out: VarId, op: ArithOp, a: Arg, b: Arg },
    /// `out = a`.
    Assign { out: VarId, a: Arg },
    /// A filter.
    Cmp { op: CmpOp, a: Arg, b: Arg },
}

impl Prim {
    pub fn inputs(&self) -> Vec<VarId> {
        match self {
            Prim::Arith { a, b, .. } | Prim::Cmp { a, b, .. } => a.var().into_iter().chain(b.var()).collect(),
            Prim::Assign { a, .. } => a.var().into_iter().collect(),
        }
    }

    pub fn output(&self) -> Option<VarId> {
        match self {
            Prim::Arith { out, .. } | Prim::Assign { out, .. } => Some(*out),
            Prim::Cmp { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NHead {
    pub target: Target,
    pub args: Vec<Arg>,
}

/// A flattened rule ready for planning.
#[derive(Clone, Debug, PartialEq)]
pub struct NRule {
    pub vars: Vec<String>,
    pub atoms: Vec<NAtom>,
    pub negs: Vec<NAtom>,
    pub prims: Vec<Prim>,
    pub heads: Vec<NHead>,
    pub text: String,
}

impl NRule {
    pub fn reads(&self) -> impl Iterator<Item = Slot> + '_ {
        self.atoms.iter().chain(self.negs.iter()).map(|a| a.slot)
    }

    /// Variables that appear in positive atoms.
    pub fn atom_bound(&self) -> HashSet<VarId> {
        self.atoms.iter().flat_map(|a| a.args.iter().filter_map(Arg::var)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TempSig {
    pub name: String,
    pub key_arity: usize,
    pub func: bool,
}

impl TempSig {
    pub fn arity(&self) -> usize {
        self.key_arity + self.func as usize
    }
}

/// A compiled transaction program.
#[derive(Clone, Debug)]
pub struct Program {
    pub schema: Arc<Schema>,
    /// Rules in dependency order.
    pub rules: Vec<NRule>,
    pub temps: Vec<TempSig>,
    /// Ground local tuples given as bodiless rules.
    pub facts: Vec<(TempId, Vec<Value>)>,
}

impl Program {
    /// Parse and compile rule text with parameter bindings.
    pub fn compile(schema: Arc<Schema>, src: &str, params: &HashMap<String, Value>) -> Result<Program, RuleError> {
        let rules = parse(src)?;
        Program::from_rules(schema, &rules, params)
    }

    /// Like [`Program::compile`], with local predicates whose tuples are
    /// supplied per transaction rather than derived.
    pub fn compile_with_inputs(
        schema: Arc<Schema>,
        src: &str,
        params: &HashMap<String, Value>,
        inputs: &[TempSig],
    ) -> Result<Program, RuleError> {
        let rules = parse(src)?;
        Program::build(schema, &rules, params, inputs.to_vec())
    }

    pub fn from_rules(
        schema: Arc<Schema>,
        rules: &[Rule],
        params: &HashMap<String, Value>,
    ) -> Result<Program, RuleError> {
        Program::build(schema, rules, params, Vec::new())
    }

    fn build(
        schema: Arc<Schema>,
        rules: &[Rule],
        params: &HashMap<String, Value>,
        inputs: Vec<TempSig>,
    ) -> Result<Program, RuleError> {
        let temps = collect_temps(&schema, rules, inputs)?;
        let mut nrules = Vec::with_capacity(rules.len());
        let mut facts = Vec::new();
        for r in rules {
            let n = normalize(&schema, &temps, params, r)?;
            if let Some(f) = as_facts(&n) {
                facts.extend(f);
                continue;
            }
            variable_order(&n)?;
            nrules.push(n);
        }
        let rules = topo_sort(nrules, &temps, &schema)?;
        Ok(Program { schema, rules, temps, facts })
    }

    pub fn temp_id(&self, name: &str) -> Option<TempId> {
        self.temps.iter().position(|t| t.name == name).map(|i| i as TempId)
    }

    /// Stored predicates read or written by the program.
    pub fn stored_preds(&self) -> Vec<PredId> {
        let mut out: Vec<PredId> = self
            .rules
            .iter()
            .flat_map(|r| {
                r.reads()
                    .filter_map(|s| match s {
                        Slot::Start(p) | Slot::End(p) => Some(p),
                        Slot::Temp(_) => None,
                    })
                    .chain(r.heads.iter().filter_map(|h| match h.target {
                        Target::Upsert(p) | Target::Retract(p) => Some(p),
                        _ => None,
                    }))
                    .collect::<Vec<_>>()
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Number of key columns of a readable slot.
    pub fn key_arity(&self, s: Slot) -> usize {
        match s {
            Slot::Start(p) | Slot::End(p) => self.schema.sig(p).key_arity(),
            Slot::Temp(t) => self.temps[t as usize].key_arity,
        }
    }

    /// Key arity of a head target, if it is keyed.
    pub fn target_key_arity(&self, t: Target) -> Option<usize> {
        match t {
            Target::Upsert(p) | Target::Retract(p) => Some(self.schema.sig(p).key_arity()),
            Target::Temp(t) => Some(self.temps[t as usize].key_arity),
            Target::Fail => None,
        }
    }

    pub fn slot_name(&self, s: Slot) -> String {
        match s {
            Slot::Start(p) => format!("{}@start", self.schema.sig(p).name),
            Slot::End(p) => format!("{}@end", self.schema.sig(p).name),
            Slot::Temp(t) => self.temps[t as usize].name.clone(),
        }
    }

    /// The rules after rewriting upserts into delta predicates, one per line.
    pub fn rewritten_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            let name = |v: &Arg| match v {
                Arg::Var(i) if r.vars[*i].starts_with("_#") => "_".to_string(),
                Arg::Var(i) => r.vars[*i].clone(),
                Arg::Const(c) => c.to_string(),
            };
            let args = |a: &[Arg]| a.iter().map(name).collect::<Vec<_>>().join(", ");
            let heads: Vec<String> = r
                .heads
                .iter()
                .map(|h| match h.target {
                    Target::Upsert(p) => format!("+δ{}({})", self.schema.sig(p).name, args(&h.args)),
                    Target::Retract(p) => format!("-δ{}({})", self.schema.sig(p).name, args(&h.args)),
                    Target::Temp(t) => format!("{}({})", self.temps[t as usize].name, args(&h.args)),
                    Target::Fail => "false".into(),
                })
                .collect();
            let mut body: Vec<String> = Vec::new();
            for a in &r.atoms {
                let s = match a.slot {
                    Slot::End(p) => format!("({0}@start ⊕ δ{0})", self.schema.sig(p).name),
                    other => self.slot_name(other),
                };
                body.push(format!("{s}({})", args(&a.args)));
            }
            for a in &r.negs {
                body.push(format!("!{}({})", self.slot_name(a.slot), args(&a.args)));
            }
            for p in &r.prims {
                body.push(match p {
                    Prim::Arith { out, op, a, b } => format!("{} = {} {op} {}", r.vars[*out], name(a), name(b)),
                    Prim::Assign { out, a } => format!("{} = {}", r.vars[*out], name(a)),
                    Prim::Cmp { op, a, b } => format!("{} {op} {}", name(a), name(b)),
                });
            }
            out.push_str(&heads.join(", "));
            if !body.is_empty() {
                out.push_str(" <- ");
                out.push_str(&body.join(", "));
            }
            out.push_str(".\n");
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{}", r.text)?;
        }
        Ok(())
    }
}

/// Load a `.lql` rule file and the schema in its `.schema.json` sidecar.
pub fn load_lql(path: &Path) -> Result<(Arc<Schema>, Vec<Rule>), RuleError> {
    let src = std::fs::read_to_string(path).map_err(|e| RuleError::Io(format!("{}: {e}", path.display())))?;
    let sidecar = path.with_extension("schema.json");
    let schema_text =
        std::fs::read_to_string(&sidecar).map_err(|e| RuleError::Io(format!("{}: {e}", sidecar.display())))?;
    let schema = Arc::new(Schema::from_json(&schema_text)?);
    Ok((schema, parse(&src)?))
}

fn as_facts(n: &NRule) -> Option<Vec<(TempId, Vec<Value>)>> {
    if !(n.atoms.is_empty() && n.negs.is_empty() && n.prims.is_empty()) {
        return None;
    }
    n.heads
        .iter()
        .map(|h| match h.target {
            Target::Temp(t) => {
                h.args.iter().map(|a| match a {
                    Arg::Const(c) => Some(c.clone()),
                    Arg::Var(_) => None,
                })
                .collect::<Option<Vec<_>>>()
                .map(|vals| (t, vals))
            }
            _ => None,
        })
        .collect()
}

fn collect_temps(schema: &Schema, rules: &[Rule], inputs: Vec<TempSig>) -> Result<Vec<TempSig>, RuleError> {
    let mut temps: Vec<TempSig> = inputs;
    for r in rules {
        for h in &r.heads {
            if let Head::Derive(a) = h {
                if schema.id(&a.pred).is_some() {
                    return Err(RuleError::BadAtom {
                        pred: a.pred.clone(),
                        msg: "stored predicates are changed with `^` or `-` heads".into(),
                    });
                }
                if a.version != Ver::Default {
                    return Err(RuleError::BadAtom { pred: a.pred.clone(), msg: "local predicates have no versions".into() });
                }
                if a.func && a.value.is_none() {
                    return Err(RuleError::BadAtom { pred: a.pred.clone(), msg: "function head needs `= value`".into() });
                }
                let sig = TempSig { name: a.pred.clone(), key_arity: a.args.len(), func: a.func };
                match temps.iter().find(|t| t.name == a.pred) {
                    Some(t) if *t != sig => {
                        return Err(RuleError::BadAtom { pred: a.pred.clone(), msg: "inconsistent arity or kind".into() })
                    }
                    Some(_) => {}
                    None => temps.push(sig),
                }
            }
        }
    }
    Ok(temps)
}

struct Norm<'a> {
    schema: &'a Schema,
    temps: &'a [TempSig],
    params: &'a HashMap<String, Value>,
    vars: Vec<String>,
    ids: HashMap<String, VarId>,
    atoms: Vec<NAtom>,
    negs: Vec<NAtom>,
    prims: Vec<Prim>,
    pending_eq: Vec<(Arg, Arg)>,
    pending_arith: Vec<(VarId, ArithOp, Arg, Arg)>,
    fresh: usize,
}

impl<'a> Norm<'a> {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(v) = self.ids.get(name) {
            return *v;
        }
        let id = self.vars.len();
        self.vars.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    fn fresh(&mut self) -> VarId {
        self.fresh += 1;
        let name = format!("%t{}", self.fresh);
        self.var(&name)
    }

    fn arg(&mut self, t: &Term) -> Result<Arg, RuleError> {
        Ok(match t {
            Term::Var(v) => Arg::Var(self.var(v)),
            Term::Const(c) => Arg::Const(c.clone()),
            Term::Param(p) => Arg::Const(self.params.get(p).cloned().ok_or_else(|| RuleError::UnboundParam(p.clone()))?),
        })
    }

    fn resolve(&self, pred: &str, version: Ver, func: bool, nargs: usize) -> Result<Slot, RuleError> {
        let bad = |msg: &str| RuleError::BadAtom { pred: pred.to_string(), msg: msg.to_string() };
        if let Some(p) = self.schema.id(pred) {
            let sig = self.schema.sig(p);
            if sig.value_types.len() > 1 {
                return Err(bad("functions with more than one value column cannot be used in rules"));
            }
            if sig.is_function() != func {
                return Err(bad(if func { "is a relation, use (..)" } else { "is a function, use [..]=v" }));
            }
            if sig.key_arity() != nargs {
                return Err(bad(&format!("expects {} key columns, got {nargs}", sig.key_arity())));
            }
            return Ok(match version {
                Ver::Start => Slot::Start(p),
                Ver::End | Ver::Default => Slot::End(p),
            });
        }
        if let Some(t) = self.temps.iter().position(|t| t.name == pred) {
            let sig = &self.temps[t];
            if version != Ver::Default {
                return Err(bad("local predicates have no versions"));
            }
            if sig.func != func || sig.key_arity != nargs {
                return Err(bad("inconsistent arity or kind"));
            }
            return Ok(Slot::Temp(t as TempId));
        }
        Err(RuleError::UnknownPredicate(pred.to_string()))
    }

    fn atom(&mut self, a: &Atom) -> Result<NAtom, RuleError> {
        let slot = self.resolve(&a.pred, a.version, a.func, a.args.len())?;
        let mut args = a.args.iter().map(|t| self.arg(t)).collect::<Result<Vec<_>, _>>()?;
        if let Some(v) = &a.value {
            args.push(self.arg(v)?);
        }
        Ok(NAtom { slot, args })
    }

    fn expr(&mut self, e: &Expr) -> Result<Arg, RuleError> {
        match e {
            Expr::Term(t) => self.arg(t),
            Expr::App { pred, version, args } => {
                let slot = self.resolve(pred, *version, true, args.len())?;
                let mut cols = args.iter().map(|t| self.arg(t)).collect::<Result<Vec<_>, _>>()?;
                let t = self.fresh();
                cols.push(Arg::Var(t));
                self.atoms.push(NAtom { slot, args: cols });
                Ok(Arg::Var(t))
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.expr(a)?, self.expr(b)?);
                let t = self.fresh();
                self.prims.push(Prim::Arith { out: t, op: *op, a, b });
                Ok(Arg::Var(t))
            }
        }
    }

    fn literal(&mut self, l: &Literal) -> Result<(), RuleError> {
        match l {
            Literal::Pos(a) => {
                let n = self.atom(a)?;
                self.atoms.push(n);
            }
            Literal::Neg(a) => {
                let n = self.atom(a)?;
                self.negs.push(n);
            }
            Literal::Cmp(CmpOp::Eq, lhs, rhs) => {
                // `F[k] = v` is a function atom.
                if let (Expr::App { pred, version, args }, Expr::Term(t)) | (Expr::Term(t), Expr::App { pred, version, args }) =
                    (lhs, rhs)
                {
                    let atom = Atom { pred: pred.clone(), version: *version, args: args.clone(), value: Some(t.clone()), func: true };
                    let n = self.atom(&atom)?;
                    self.atoms.push(n);
                    return Ok(());
                }
                // `v = a op b` computes `v` directly when possible.
                if let (Expr::Term(Term::Var(v)), Expr::Bin(op, a, b)) | (Expr::Bin(op, a, b), Expr::Term(Term::Var(v))) =
                    (lhs, rhs)
                {
                    let v = self.var(v);
                    let (a, b) = (self.expr(a)?, self.expr(b)?);
                    self.pending_arith.push((v, *op, a, b));
                    return Ok(());
                }
                let (a, b) = (self.expr(lhs)?, self.expr(rhs)?);
                self.pending_eq.push((a, b));
            }
            Literal::Cmp(op, lhs, rhs) => {
                let (a, b) = (self.expr(lhs)?, self.expr(rhs)?);
                self.prims.push(Prim::Cmp { op: *op, a, b });
            }
        }
        Ok(())
    }
}

fn normalize(
    schema: &Schema,
    temps: &[TempSig],
    params: &HashMap<String, Value>,
    rule: &Rule,
) -> Result<NRule, RuleError> {
    let text = rule.to_string();
    let mut n = Norm {
        schema,
        temps,
        params,
        vars: vec![],
        ids: HashMap::new(),
        atoms: vec![],
        negs: vec![],
        prims: vec![],
        pending_eq: vec![],
        pending_arith: vec![],
        fresh: 0,
    };
    for l in &rule.body {
        n.literal(l)?;
    }
    let atom_bound: HashSet<VarId> = n.atoms.iter().flat_map(|a| a.args.iter().filter_map(Arg::var)).collect();
    let mut assigned: HashSet<VarId> = n.prims.iter().filter_map(Prim::output).collect();
    for (v, op, a, b) in std::mem::take(&mut n.pending_arith) {
        if !atom_bound.contains(&v) && !assigned.contains(&v) {
            assigned.insert(v);
            n.prims.push(Prim::Arith { out: v, op, a, b });
        } else {
            let t = n.fresh();
            assigned.insert(t);
            n.prims.push(Prim::Arith { out: t, op, a, b });
            n.prims.push(Prim::Cmp { op: CmpOp::Eq, a: Arg::Var(v), b: Arg::Var(t) });
        }
    }
    for (a, b) in std::mem::take(&mut n.pending_eq) {
        let free = |x: &Arg| matches!(x, Arg::Var(v) if !atom_bound.contains(v) && !assigned.contains(v));
        if free(&a) {
            let out = a.var().expect("var");
            assigned.insert(out);
            n.prims.push(Prim::Assign { out, a: b });
        } else if free(&b) {
            let out = b.var().expect("var");
            assigned.insert(out);
            n.prims.push(Prim::Assign { out, a });
        } else {
            n.prims.push(Prim::Cmp { op: CmpOp::Eq, a, b });
        }
    }

    let mut heads = Vec::new();
    for h in &rule.heads {
        let bad = |pred: &str, msg: &str| RuleError::BadAtom { pred: pred.to_string(), msg: msg.to_string() };
        let nh = match h {
            Head::False => NHead { target: Target::Fail, args: vec![] },
            Head::Derive(a) => {
                let atom = n.atom(a)?;
                let Slot::Temp(t) = atom.slot else { unreachable!("derive heads are local") };
                NHead { target: Target::Temp(t), args: atom.args }
            }
            Head::Upsert(a) | Head::Retract(a) => {
                let p = schema.id(&a.pred).ok_or_else(|| RuleError::UnknownPredicate(a.pred.clone()))?;
                let sig = schema.sig(p);
                if a.version != Ver::Default {
                    return Err(bad(&a.pred, "heads have no versions"));
                }
                if sig.is_function() != a.func {
                    return Err(bad(&a.pred, "relation/function mismatch in head"));
                }
                if sig.key_arity() != a.args.len() {
                    return Err(bad(&a.pred, "wrong number of key columns"));
                }
                let mut args = a.args.iter().map(|t| n.arg(t)).collect::<Result<Vec<_>, _>>()?;
                if matches!(h, Head::Upsert(_)) {
                    if a.func {
                        let v = a.value.as_ref().ok_or_else(|| bad(&a.pred, "upsert needs `= value`"))?;
                        args.push(n.arg(v)?);
                    }
                    NHead { target: Target::Upsert(p), args }
                } else {
                    if a.value.is_some() {
                        return Err(bad(&a.pred, "retractions name only the key"));
                    }
                    NHead { target: Target::Retract(p), args }
                }
            }
        };
        heads.push(nh);
    }

    let generated: HashSet<VarId> = atom_bound.union(&assigned).copied().collect();
    for neg in &n.negs {
        if neg.args.iter().filter_map(Arg::var).any(|v| !generated.contains(&v)) {
            return Err(RuleError::QuantifiedNegation(text));
        }
    }
    let needs = n
        .prims
        .iter()
        .flat_map(|p| p.inputs())
        .chain(heads.iter().flat_map(|h| h.args.iter().filter_map(Arg::var)));
    for v in needs {
        if !generated.contains(&v) {
            return Err(RuleError::RangeRestriction { var: n.vars[v].clone(), rule: text });
        }
    }
    Ok(NRule { vars: n.vars, atoms: n.atoms, negs: n.negs, prims: n.prims, heads, text })
}

fn writes_slot(t: Target, s: Slot) -> bool {
    match (t, s) {
        (Target::Upsert(p) | Target::Retract(p), Slot::End(q)) => p == q,
        (Target::Temp(a), Slot::Temp(b)) => a == b,
        _ => false,
    }
}

fn topo_sort(rules: Vec<NRule>, _temps: &[TempSig], _schema: &Schema) -> Result<Vec<NRule>, RuleError> {
    let n = rules.len();
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (i, w) in rules.iter().enumerate() {
        for (j, r) in rules.iter().enumerate() {
            let dep = w.heads.iter().any(|h| r.reads().any(|s| writes_slot(h.target, s)));
            if dep {
                succ[i].push(j);
                indeg[j] += 1;
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
    ready.reverse();
    while let Some(i) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(j);
                ready.sort_by(|a, b| b.cmp(a));
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<String> = (0..n).filter(|i| indeg[*i] > 0).map(|i| rules[i].text.clone()).collect();
        return Err(RuleError::Cyclic(stuck.join(" | ")));
    }
    let mut slots: Vec<Option<NRule>> = rules.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().expect("each rule once")).collect())
}
