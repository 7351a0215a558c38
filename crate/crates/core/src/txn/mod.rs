//! A transaction as a repairable operator.
//!
//! A transaction reads the database version it started from, patched with
//! the corrections routed to it, and emits two signals: its delta (the
//! records it upserts or retracts) and its sensitivities (the key ranges its
//! outcome depends on). When the corrections change, the transaction is
//! repaired: changed inputs are pushed through its rules in dependency order,
//! each rule maintained incrementally, and the revised outputs published as
//! net changes.
//!
//! A failed transaction publishes an empty delta but keeps its
//! sensitivities, so a later correction can still make it succeed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::inclftj::{changed_tuples, export_interval, AtomChange, HeadChange, RuleState};
use crate::lftj::{Plan, SensRecord, Tuple, View};
use crate::pstore::{DbVersion, Key, PredId, Row, Schema, Value};
use crate::rulelang::{Program, RuleError, Slot, Target, TempId, TempSig};
use crate::signal::{DeltaKey, DeltaMap, DeltaVal, SensBuilder, SensKey, SensMap};
use crate::domain::Bound;

/// What a transaction runs: a compiled program plus its own input tuples.
#[derive(Clone, Debug)]
pub struct TxnSpec {
    pub program: Arc<Program>,
    pub facts: Vec<(TempId, Tuple)>,
    pub label: String,
}

impl TxnSpec {
    pub fn compile(schema: Arc<Schema>, src: &str, params: &HashMap<String, Value>) -> Result<TxnSpec, RuleError> {
        let program = Program::compile(schema, src, params)?;
        Ok(TxnSpec { program: Arc::new(program), facts: Vec::new(), label: String::new() })
    }

    /// A shared program with per-transaction input tuples for local predicates.
    pub fn with_facts(program: Arc<Program>, facts: Vec<(TempId, Tuple)>) -> TxnSpec {
        TxnSpec { program, facts, label: String::new() }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> TxnSpec {
        self.label = label.into();
        self
    }

    /// Whether the transaction can never write.
    pub fn is_read_only(&self) -> bool {
        self.program
            .rules
            .iter()
            .all(|r| r.heads.iter().all(|h| matches!(h.target, Target::Temp(_) | Target::Fail)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TxnStatus {
    Unevaluated,
    Evaluated,
    Failed,
    Null,
}

/// Changes to publish on the two output signals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TxnOutput {
    pub delta: Vec<(DeltaKey, Option<DeltaVal>)>,
    pub sens: Vec<(SensKey, Option<Bound>)>,
}

impl TxnOutput {
    pub fn is_empty(&self) -> bool {
        self.delta.is_empty() && self.sens.is_empty()
    }
}

/// The protocol by which the transaction drives one unit of its graph.
pub trait ExecutionUnit {
    /// Starts a maintenance round; `changed` lists the inputs that differ.
    fn begin_maintenance(&mut self, changed: &BTreeSet<Slot>);
    fn input_changed(&mut self, slot: Slot, old: &View, new: &View, keys: &BTreeSet<Key>);
    fn input_not_changed(&mut self, slot: Slot, view: &View);
    /// Ends the round: the unit's derivation changes and new records.
    fn end_maintenance(&mut self) -> (Vec<HeadChange>, Vec<SensRecord>);
}

/// A rule as an execution unit.
#[derive(Clone, Debug)]
pub struct RuleUnit {
    pub state: RuleState,
    old: Vec<Option<View>>,
    new: Vec<Option<View>>,
    pending: Vec<AtomChange>,
}

impl RuleUnit {
    pub fn new(plan: Plan) -> Self {
        let n = plan.slots.len();
        RuleUnit { state: RuleState::new(plan), old: vec![None; n], new: vec![None; n], pending: Vec::new() }
    }

    pub fn evaluate(&mut self, views: &[&View]) -> (Vec<HeadChange>, Vec<SensRecord>) {
        self.state.evaluate(views)
    }
}

impl ExecutionUnit for RuleUnit {
    fn begin_maintenance(&mut self, _changed: &BTreeSet<Slot>) {
        self.old.iter_mut().for_each(|v| *v = None);
        self.new.iter_mut().for_each(|v| *v = None);
        self.pending.clear();
    }

    fn input_changed(&mut self, slot: Slot, old: &View, new: &View, keys: &BTreeSet<Key>) {
        let tuples = changed_tuples(old, new, keys);
        for (i, s) in self.state.plan.slots.iter().enumerate() {
            if *s == slot {
                self.old[i] = Some(old.clone());
                self.new[i] = Some(new.clone());
                self.pending.extend(tuples.iter().map(|t| (i, t.clone())));
            }
        }
    }

    fn input_not_changed(&mut self, slot: Slot, view: &View) {
        for (i, s) in self.state.plan.slots.iter().enumerate() {
            if *s == slot {
                self.old[i] = Some(view.clone());
                self.new[i] = Some(view.clone());
            }
        }
    }

    fn end_maintenance(&mut self) -> (Vec<HeadChange>, Vec<SensRecord>) {
        if self.pending.is_empty() {
            return (vec![], vec![]);
        }
        let old: Vec<&View> = self.old.iter().map(|v| v.as_ref().expect("every input reported")).collect();
        let new: Vec<&View> = self.new.iter().map(|v| v.as_ref().expect("every input reported")).collect();
        let pending = std::mem::take(&mut self.pending);
        self.state.maintain(&old, &new, &pending)
    }
}

/// A transaction operator.
#[derive(Clone, Debug)]
pub struct Txn {
    spec: Option<Arc<TxnSpec>>,
    status: TxnStatus,
    units: Vec<RuleUnit>,
    start: BTreeMap<PredId, View>,
    end: BTreeMap<PredId, View>,
    temps: Vec<View>,
    upserts: HashMap<PredId, BTreeMap<Tuple, usize>>,
    retracts: HashMap<PredId, BTreeMap<Key, usize>>,
    temp_counts: Vec<BTreeMap<Tuple, usize>>,
    fails: usize,
    /// Keys with conflicting or ill-typed writes.
    bad: BTreeSet<(Target, Key)>,
    delta: DeltaMap,
    published: DeltaMap,
    sens: SensBuilder,
    pub refreshes: usize,
}

fn bump<K: Ord + Clone>(m: &mut BTreeMap<K, usize>, k: &K, up: bool) {
    if up {
        *m.entry(k.clone()).or_insert(0) += 1;
    } else if let Some(c) = m.get_mut(k) {
        *c -= 1;
        if *c == 0 {
            m.remove(k);
        }
    }
}

/// Tuples in `m` made of `key` plus exactly `extra` more columns.
fn with_prefix<'a>(m: &'a BTreeMap<Tuple, usize>, key: &'a [Value], extra: usize) -> impl Iterator<Item = &'a Tuple> {
    m.range(key.to_vec()..)
        .map(|(t, _)| t)
        .take_while(move |t| t.starts_with(key))
        .filter(move |t| t.len() == key.len() + extra)
}

type SlotChanges = BTreeMap<Slot, BTreeSet<Key>>;

impl Txn {
    pub fn new(spec: Arc<TxnSpec>) -> Result<Txn, RuleError> {
        let p = &spec.program;
        let units = p
            .rules
            .iter()
            .map(|r| Plan::new(r, |s| p.key_arity(s)).map(RuleUnit::new))
            .collect::<Result<Vec<_>, _>>()?;
        let n_temps = p.temps.len();
        Ok(Txn {
            spec: Some(spec),
            status: TxnStatus::Unevaluated,
            units,
            start: BTreeMap::new(),
            end: BTreeMap::new(),
            temps: vec![View::new(); n_temps],
            upserts: HashMap::new(),
            retracts: HashMap::new(),
            temp_counts: vec![BTreeMap::new(); n_temps],
            fails: 0,
            bad: BTreeSet::new(),
            delta: DeltaMap::new(),
            published: DeltaMap::new(),
            sens: SensBuilder::new(),
            refreshes: 0,
        })
    }

    /// A placeholder that emits nothing.
    pub fn null() -> Txn {
        Txn {
            spec: None,
            status: TxnStatus::Null,
            units: Vec::new(),
            start: BTreeMap::new(),
            end: BTreeMap::new(),
            temps: Vec::new(),
            upserts: HashMap::new(),
            retracts: HashMap::new(),
            temp_counts: Vec::new(),
            fails: 0,
            bad: BTreeSet::new(),
            delta: DeltaMap::new(),
            published: DeltaMap::new(),
            sens: SensBuilder::new(),
            refreshes: 0,
        }
    }

    pub fn spec(&self) -> Option<&Arc<TxnSpec>> {
        self.spec.as_ref()
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn is_null(&self) -> bool {
        self.spec.is_none()
    }

    /// The published delta.
    pub fn delta(&self) -> &DeltaMap {
        &self.published
    }

    /// The delta the rules derive, published or not.
    pub fn derived_delta(&self) -> &DeltaMap {
        &self.delta
    }

    /// The coalesced sensitivity set published so far.
    pub fn sens(&self) -> &SensMap {
        self.sens.set()
    }

    /// Contents of a local predicate.
    pub fn local(&self, name: &str) -> Vec<Tuple> {
        let Some(t) = self.spec.as_ref().and_then(|s| s.program.temp_id(name)) else { return vec![] };
        self.temp_counts[t as usize].keys().cloned().collect()
    }

    pub fn region_runs(&self) -> usize {
        self.units.iter().map(|u| u.state.region_runs).sum()
    }

    /// Evaluate against `base` patched with `corr`, from scratch.
    pub fn evaluate(&mut self, base: &DbVersion, corr: &DeltaMap) -> TxnOutput {
        assert_eq!(self.status, TxnStatus::Unevaluated, "evaluate runs once");
        self.refresh(base, corr, &[])
    }

    /// Repair after `base` or `corr` changed at `changed` keys.
    pub fn repair(&mut self, base: &DbVersion, corr: &DeltaMap, changed: &[DeltaKey]) -> TxnOutput {
        assert!(matches!(self.status, TxnStatus::Evaluated | TxnStatus::Failed), "repair needs an evaluated txn");
        self.refresh(base, corr, changed)
    }

    /// Evaluate on first use, repair afterwards.
    pub fn refresh(&mut self, base: &DbVersion, corr: &DeltaMap, changed: &[DeltaKey]) -> TxnOutput {
        match self.status {
            TxnStatus::Null => TxnOutput::default(),
            TxnStatus::Unevaluated => {
                self.refreshes += 1;
                self.full(base, corr)
            }
            TxnStatus::Evaluated | TxnStatus::Failed => {
                self.refreshes += 1;
                self.incremental(base, corr, changed)
            }
        }
    }

    fn program(&self) -> Arc<Program> {
        self.spec.as_ref().expect("not null").program.clone()
    }

    fn preds(&self) -> Vec<PredId> {
        self.spec.as_ref().map(|s| s.program.stored_preds()).unwrap_or_default()
    }

    fn view(&self, s: Slot) -> &View {
        match s {
            Slot::Start(p) => &self.start[&p],
            Slot::End(p) => &self.end[&p],
            Slot::Temp(t) => &self.temps[t as usize],
        }
    }

    fn corrected(base: &DbVersion, corr: &DeltaMap, p: PredId, key: &Key) -> Option<Row> {
        match corr.get(&(p, key.clone())) {
            Some(DeltaVal::Upsert(r)) => Some(r.clone()),
            Some(DeltaVal::Retract) => None,
            None => base.lookup(p, key).cloned(),
        }
    }

    fn full(&mut self, base: &DbVersion, corr: &DeltaMap) -> TxnOutput {
        let program = self.program();
        for p in self.preds() {
            let mut v = base.pred(p).clone();
            for ((q, k), d) in corr.iter_from(|(q, _)| q.cmp(&p)) {
                if *q != p {
                    break;
                }
                match d {
                    DeltaVal::Upsert(r) => v.insert(k.clone(), r.clone()),
                    DeltaVal::Retract => v.remove(k),
                };
            }
            self.end.insert(p, v.clone());
            self.start.insert(p, v);
        }
        let spec = self.spec.clone().expect("not null");
        let mut touched_temps: BTreeSet<(TempId, Key)> = BTreeSet::new();
        for (t, tuple) in program.facts.iter().chain(spec.facts.iter()) {
            bump(&mut self.temp_counts[*t as usize], tuple, true);
            touched_temps.insert((*t, tuple[..program.temps[*t as usize].key_arity].to_vec()));
        }
        let mut changed = SlotChanges::new();
        for (t, k) in touched_temps {
            self.resolve_temp(&program, t, &k, &mut changed);
        }
        let mut touched = BTreeSet::new();
        for i in 0..self.units.len() {
            let slots = self.units[i].state.plan.slots.clone();
            let views: Vec<View> = slots.iter().map(|s| self.view(*s).clone()).collect();
            let refs: Vec<&View> = views.iter().collect();
            let (changes, sens) = self.units[i].evaluate(&refs);
            self.apply(&program, base.schema(), i, changes, &mut changed, &mut touched);
            self.export(i, &sens);
        }
        self.finish(touched)
    }

    fn incremental(&mut self, base: &DbVersion, corr: &DeltaMap, keys: &[DeltaKey]) -> TxnOutput {
        let program = self.program();
        let old_start = self.start.clone();
        let old_end = self.end.clone();
        let old_temps = self.temps.clone();
        let mut changed = SlotChanges::new();
        for (p, k) in keys {
            let Some(view) = self.start.get_mut(p) else { continue };
            let row = Txn::corrected(base, corr, *p, k);
            if view.get(k) == row.as_ref() {
                continue;
            }
            match &row {
                Some(r) => view.insert(k.clone(), r.clone()),
                None => view.remove(k),
            };
            changed.entry(Slot::Start(*p)).or_default().insert(k.clone());
            if self.delta.get(&(*p, k.clone())).is_none() {
                let end = self.end.get_mut(p).expect("end view exists");
                match row {
                    Some(r) => end.insert(k.clone(), r),
                    None => end.remove(k),
                };
                changed.entry(Slot::End(*p)).or_default().insert(k.clone());
            }
        }
        let mut touched = BTreeSet::new();
        for i in 0..self.units.len() {
            let slots = self.units[i].state.plan.slots.clone();
            let hit: BTreeSet<Slot> = slots.iter().copied().filter(|s| changed.contains_key(s)).collect();
            if hit.is_empty() {
                continue;
            }
            self.units[i].begin_maintenance(&hit);
            for s in &slots {
                let cur = self.view(*s).clone();
                match changed.get(s) {
                    Some(keys) => {
                        let old = match s {
                            Slot::Start(p) => &old_start[p],
                            Slot::End(p) => &old_end[p],
                            Slot::Temp(t) => &old_temps[*t as usize],
                        };
                        self.units[i].input_changed(*s, old, &cur, keys);
                    }
                    None => self.units[i].input_not_changed(*s, &cur),
                }
            }
            let (changes, sens) = self.units[i].end_maintenance();
            self.apply(&program, base.schema(), i, changes, &mut changed, &mut touched);
            self.export(i, &sens);
        }
        self.finish(touched)
    }

    fn apply(
        &mut self,
        program: &Program,
        schema: &Schema,
        unit: usize,
        changes: Vec<HeadChange>,
        changed: &mut SlotChanges,
        touched: &mut BTreeSet<DeltaKey>,
    ) {
        let mut temps: BTreeSet<(TempId, Key)> = BTreeSet::new();
        let mut keys: BTreeSet<DeltaKey> = BTreeSet::new();
        for c in changes {
            let target = self.units[unit].state.plan.rule.heads[c.head].target;
            match target {
                Target::Upsert(p) => {
                    let k = schema.sig(p).key_arity();
                    bump(self.upserts.entry(p).or_default(), &c.tuple, c.inserted);
                    keys.insert((p, c.tuple[..k].to_vec()));
                }
                Target::Retract(p) => {
                    bump(self.retracts.entry(p).or_default(), &c.tuple, c.inserted);
                    keys.insert((p, c.tuple));
                }
                Target::Temp(t) => {
                    let k = program.temps[t as usize].key_arity;
                    bump(&mut self.temp_counts[t as usize], &c.tuple, c.inserted);
                    temps.insert((t, c.tuple[..k].to_vec()));
                }
                Target::Fail => {
                    if c.inserted {
                        self.fails += 1;
                    } else {
                        self.fails -= 1;
                    }
                }
            }
        }
        for (t, k) in temps {
            self.resolve_temp(program, t, &k, changed);
        }
        for (p, k) in &keys {
            self.resolve_delta(schema, *p, k, changed);
        }
        touched.extend(keys);
    }

    fn resolve_temp(&mut self, program: &Program, t: TempId, key: &Key, changed: &mut SlotChanges) {
        let sig: &TempSig = &program.temps[t as usize];
        let vals: Vec<&Tuple> = with_prefix(&self.temp_counts[t as usize], key, sig.func as usize).collect();
        let row: Option<Row> = vals.first().map(|t| t[key.len()..].to_vec());
        let bad = (Target::Temp(t), key.clone());
        if vals.len() > 1 {
            self.bad.insert(bad);
        } else {
            self.bad.remove(&bad);
        }
        let view = &mut self.temps[t as usize];
        if view.get(key) != row.as_ref() {
            match row {
                Some(r) => view.insert(key.clone(), r),
                None => view.remove(key),
            };
            changed.entry(Slot::Temp(t)).or_default().insert(key.clone());
        }
    }

    fn resolve_delta(&mut self, schema: &Schema, p: PredId, key: &Key, changed: &mut SlotChanges) {
        let sig = schema.sig(p);
        let ups: Vec<Row> = self
            .upserts
            .get(&p)
            .map(|m| with_prefix(m, key, sig.value_types.len()).map(|t| t[key.len()..].to_vec()).collect())
            .unwrap_or_default();
        let retract = self.retracts.get(&p).is_some_and(|m| m.contains_key(key));
        let conflict = (retract && !ups.is_empty()) || ups.len() > 1;
        let ill_typed = ups.iter().any(|r| schema.validate(p, key, r).is_err());
        let bad = (Target::Upsert(p), key.clone());
        if conflict || ill_typed {
            self.bad.insert(bad);
        } else {
            self.bad.remove(&bad);
        }
        let d = if retract {
            Some(DeltaVal::Retract)
        } else {
            ups.into_iter().next().map(DeltaVal::Upsert)
        };
        let dk = (p, key.clone());
        if self.delta.get(&dk) == d.as_ref() {
            return;
        }
        match &d {
            Some(v) => self.delta.insert(dk, v.clone()),
            None => self.delta.remove(&dk),
        };
        let end_row = match d {
            Some(DeltaVal::Upsert(r)) => Some(r),
            Some(DeltaVal::Retract) => None,
            None => self.start.get(&p).and_then(|v| v.get(key)).cloned(),
        };
        if let Some(end) = self.end.get_mut(&p) {
            if end.get(key) != end_row.as_ref() {
                match end_row {
                    Some(r) => end.insert(key.clone(), r),
                    None => end.remove(key),
                };
                changed.entry(Slot::End(p)).or_default().insert(key.clone());
            }
        }
    }

    fn export(&mut self, unit: usize, sens: &[SensRecord]) {
        let plan = &self.units[unit].state.plan;
        for r in sens {
            if let Slot::Start(p) | Slot::End(p) = plan.slots[r.atom] {
                let iv = export_interval(r, p, plan.key_arity[r.atom]);
                self.sens.add(&iv);
            }
        }
    }

    fn finish(&mut self, touched: BTreeSet<DeltaKey>) -> TxnOutput {
        let was_failed = self.status == TxnStatus::Failed;
        let failed = self.fails > 0 || !self.bad.is_empty();
        self.status = if failed { TxnStatus::Failed } else { TxnStatus::Evaluated };
        let mut delta = Vec::new();
        if failed {
            delta.extend(self.published.iter().map(|(k, _)| (k.clone(), None)));
            self.published = DeltaMap::new();
        } else if was_failed {
            let mut keys: BTreeSet<DeltaKey> = self.published.iter().map(|(k, _)| k.clone()).collect();
            keys.extend(self.delta.iter().map(|(k, _)| k.clone()));
            delta = self.diff(keys);
        } else {
            delta = self.diff(touched);
        }
        TxnOutput { delta, sens: self.sens.drain() }
    }

    fn diff(&mut self, keys: BTreeSet<DeltaKey>) -> Vec<(DeltaKey, Option<DeltaVal>)> {
        let mut out = Vec::new();
        for k in keys {
            let new = self.delta.get(&k).cloned();
            if self.published.get(&k) != new.as_ref() {
                match &new {
                    Some(v) => self.published.insert(k.clone(), v.clone()),
                    None => self.published.remove(&k),
                };
                out.push((k, new));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
