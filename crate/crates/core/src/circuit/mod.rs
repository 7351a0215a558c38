//! The repair circuit.
//!
//! Transactions sit at the leaves of a binary tree, filled left to right in
//! serialization order. A group node of height `h` carries `2^h` delta,
//! sensitivity and correction signals, one per subdomain of the domain
//! decomposition at depth `h`. Its operators are
//!
//! ```text
//! merge([δ_t0^d, δ_t1^d])          => [δ_t^d0, δ_t^d1]
//! merge([s_t0^d, s_t1^d])          => [s_t^d0, s_t^d1]
//! corr(s_t0^d, [c_t^d0, c_t^d1], ∅)      => c_t0^d
//! corr(s_t1^d, [c_t^d0, c_t^d1], δ_t0^d) => c_t1^d
//! ```
//!
//! for every label `d` of length `h - 1`. The right child's corr reads the
//! left sibling's delta in the same subdomain.
//!
//! Above the root sits one more corr stage. Its delta input is the net effect
//! of every group committed since the oldest transaction still in the tree
//! started, so a transaction keeps the database version it started from and
//! sees later commits as corrections. For transactions started after a commit
//! those corrections are already part of their base, and applying them again
//! changes nothing.

mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;

pub use ops::*;

use crate::domain::{Decomposition, DomainPoint, KeyInterval, Label};
use crate::pstore::DbVersion;
use crate::rulelang::RuleError;
use crate::signal::{
    publish_sens, DeltaKey, DeltaMap, DeltaSignal, DeltaVal, SensMap, SensSignal, SignalKind, VersionId,
};
use crate::txn::{Txn, TxnSpec, TxnStatus};

pub type NodeId = usize;
pub type SigId = usize;
pub type OpId = usize;
pub type TxnId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OpKind {
    Txn,
    MergeDelta,
    MergeSens,
    Corr,
    RootCorr,
}

/// Static scheduling facts about an operator.
///
/// `serves` is the position of the earliest transaction whose inputs the
/// operator's output can affect; for a transaction it is its own position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpPrio {
    pub serves: u64,
    pub txn: bool,
    pub level: u32,
}

pub enum SignalData {
    Delta(DeltaSignal),
    Sens(SensSignal),
}

pub struct Signal {
    pub kind: SignalKind,
    pub node: Option<NodeId>,
    pub d: Label,
    pub readers: Vec<OpId>,
    data: Mutex<SignalData>,
}

impl Signal {
    fn lock(&self) -> MutexGuard<'_, SignalData> {
        self.data.lock().expect("signal lock")
    }
}

struct TxnSlot {
    txn: Txn,
    base: Option<DbVersion>,
    cursor: VersionId,
}

enum OpState {
    Txn(Box<TxnSlot>),
    Merge { cursors: [VersionId; 2] },
    Corr { cursors: [VersionId; 4], fresh: bool },
}

pub struct Operator {
    pub kind: OpKind,
    pub node: Option<NodeId>,
    pub d: Label,
    /// Merges: both children's signals. Corr: sensitivity, the two parent
    /// corrections, the sibling delta. Txn: the correction signal.
    pub inputs: Vec<Option<SigId>>,
    pub outputs: Vec<SigId>,
    pub prio: OpPrio,
    state: Mutex<OpState>,
}

#[derive(Clone, Debug)]
pub struct Leaf {
    pub op: OpId,
    pub occupied: bool,
    pub txn: Option<TxnId>,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub kids: Option<[NodeId; 2]>,
    pub height: usize,
    /// Positions of the leftmost and rightmost leaves below.
    pub first: u64,
    pub last: u64,
    pub delta: Vec<SigId>,
    pub sens: Vec<SigId>,
    pub corr: Vec<SigId>,
    pub ops: Vec<OpId>,
    pub leaf: Option<Leaf>,
}

/// What one refresh did.
#[derive(Debug, Default)]
pub struct Refreshed {
    pub changed: Vec<SigId>,
    /// Readers of the changed signals.
    pub wake: Vec<(OpId, OpPrio)>,
    /// A live transaction was evaluated or repaired.
    pub txn: bool,
}

/// Outcome of one transaction as seen from the circuit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeafState {
    pub pos: u64,
    pub op: OpId,
    pub txn: Option<TxnId>,
    pub status: TxnStatus,
    pub refreshes: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Commit {
    pub txns: Vec<(TxnId, TxnStatus)>,
    pub delta: DeltaMap,
    /// Operators to enqueue after the structural change.
    pub wake: Vec<(OpId, OpPrio)>,
}

const CORR_LEVEL: u32 = 1 << 16;

pub struct Circuit {
    decomp: Arc<Decomposition>,
    tip: DbVersion,
    nodes: Vec<Option<Node>>,
    signals: Vec<Option<Signal>>,
    ops: Vec<Option<Operator>>,
    root: NodeId,
    next_pos: u64,
    /// Net committed delta not yet in every live transaction's base.
    acc: DeltaMap,
    acc_sigs: Vec<SigId>,
    root_ops: Vec<OpId>,
}

impl Circuit {
    pub fn new(decomp: Arc<Decomposition>, tip: DbVersion) -> Circuit {
        let mut c = Circuit {
            decomp,
            tip,
            nodes: Vec::new(),
            signals: Vec::new(),
            ops: Vec::new(),
            root: 0,
            next_pos: 0,
            acc: DeltaMap::new(),
            acc_sigs: Vec::new(),
            root_ops: Vec::new(),
        };
        c.root = c.build(0);
        c.wire_root();
        c
    }

    pub fn tip(&self) -> &DbVersion {
        &self.tip
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomp
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, n: NodeId) -> &Node {
        self.nodes[n].as_ref().expect("live node")
    }

    fn node_mut(&mut self, n: NodeId) -> &mut Node {
        self.nodes[n].as_mut().expect("live node")
    }

    pub fn op(&self, op: OpId) -> Option<&Operator> {
        self.ops.get(op).and_then(|o| o.as_ref())
    }

    pub fn signal(&self, s: SigId) -> &Signal {
        self.signals[s].as_ref().expect("live signal")
    }

    pub fn height(&self) -> usize {
        self.node(self.root).height
    }

    pub fn live_ops(&self) -> impl Iterator<Item = (OpId, &Operator)> {
        self.ops.iter().enumerate().filter_map(|(i, o)| o.as_ref().map(|o| (i, o)))
    }

    /// Latest contents of a delta signal.
    pub fn delta_of(&self, s: SigId) -> DeltaMap {
        match &*self.signal(s).lock() {
            SignalData::Delta(d) => d.latest().clone(),
            SignalData::Sens(_) => panic!("not a delta signal"),
        }
    }

    pub fn sens_of(&self, s: SigId) -> SensMap {
        match &*self.signal(s).lock() {
            SignalData::Sens(d) => d.latest().clone(),
            SignalData::Delta(_) => panic!("not a sensitivity signal"),
        }
    }

    fn add_signal(&mut self, kind: SignalKind, node: Option<NodeId>, d: Label) -> SigId {
        let data = match kind {
            SignalKind::Sens => SignalData::Sens(SensSignal::new()),
            _ => SignalData::Delta(DeltaSignal::new()),
        };
        self.signals.push(Some(Signal { kind, node, d, readers: Vec::new(), data: Mutex::new(data) }));
        self.signals.len() - 1
    }

    fn add_op(&mut self, kind: OpKind, node: Option<NodeId>, d: Label, inputs: Vec<Option<SigId>>, outputs: Vec<SigId>, prio: OpPrio) -> OpId {
        let id = self.ops.len();
        for s in inputs.iter().flatten() {
            self.signals[*s].as_mut().expect("live signal").readers.push(id);
        }
        let state = match kind {
            OpKind::Txn => OpState::Txn(Box::new(TxnSlot { txn: Txn::null(), base: None, cursor: 0 })),
            OpKind::MergeDelta | OpKind::MergeSens => OpState::Merge { cursors: [0; 2] },
            OpKind::Corr | OpKind::RootCorr => OpState::Corr { cursors: [0; 4], fresh: true },
        };
        self.ops.push(Some(Operator { kind, node, d, inputs, outputs, prio, state: Mutex::new(state) }));
        if let Some(n) = node {
            self.node_mut(n).ops.push(id);
        }
        id
    }

    fn remove_op(&mut self, id: OpId) {
        if let Some(op) = self.ops[id].take() {
            for s in op.inputs.iter().flatten() {
                if let Some(sig) = self.signals[*s].as_mut() {
                    sig.readers.retain(|r| *r != id);
                }
            }
        }
    }

    /// A subtree of null leaves of the given height, wired internally.
    fn build(&mut self, height: usize) -> NodeId {
        let id = self.nodes.len();
        if height == 0 {
            let pos = self.next_pos;
            self.next_pos += 1;
            self.nodes.push(Some(Node {
                parent: None,
                kids: None,
                height: 0,
                first: pos,
                last: pos,
                delta: vec![],
                sens: vec![],
                corr: vec![],
                ops: vec![],
                leaf: None,
            }));
            let delta = self.add_signal(SignalKind::Delta, Some(id), Label::ROOT);
            let sens = self.add_signal(SignalKind::Sens, Some(id), Label::ROOT);
            let corr = self.add_signal(SignalKind::Corr, Some(id), Label::ROOT);
            let prio = OpPrio { serves: pos, txn: true, level: 0 };
            let op = self.add_op(OpKind::Txn, None, Label::ROOT, vec![Some(corr)], vec![delta, sens], prio);
            let n = self.node_mut(id);
            n.delta = vec![delta];
            n.sens = vec![sens];
            n.corr = vec![corr];
            n.ops = vec![op];
            n.leaf = Some(Leaf { op, occupied: false, txn: None });
            let o = self.ops[op].as_mut().expect("just added");
            o.node = Some(id);
            return id;
        }
        let l = self.build(height - 1);
        let r = self.build(height - 1);
        self.nodes.push(None);
        let id = self.nodes.len() - 1;
        let (first, last) = (self.node(l).first, self.node(r).last);
        self.nodes[id] = Some(Node {
            parent: None,
            kids: Some([l, r]),
            height,
            first,
            last,
            delta: vec![],
            sens: vec![],
            corr: vec![],
            ops: vec![],
            leaf: None,
        });
        self.node_mut(l).parent = Some(id);
        self.node_mut(r).parent = Some(id);
        self.wire_group(id);
        id
    }

    /// Signals and operators of a group node whose children exist.
    fn wire_group(&mut self, t: NodeId) {
        let n = self.node(t).clone();
        let [l, r] = n.kids.expect("group");
        let h = n.height;
        let labels: Vec<Label> = Label::all(h).collect();
        let delta: Vec<SigId> = labels.iter().map(|d| self.add_signal(SignalKind::Delta, Some(t), *d)).collect();
        let sens: Vec<SigId> = labels.iter().map(|d| self.add_signal(SignalKind::Sens, Some(t), *d)).collect();
        let corr: Vec<SigId> = labels.iter().map(|d| self.add_signal(SignalKind::Corr, Some(t), *d)).collect();
        {
            let node = self.node_mut(t);
            node.delta = delta.clone();
            node.sens = sens.clone();
            node.corr = corr.clone();
        }
        let (ln, rn) = (self.node(l).clone(), self.node(r).clone());
        for d in Label::all(h - 1) {
            let i = d.index();
            let (o0, o1) = (d.child(false).index(), d.child(true).index());
            let merge = |serves| OpPrio { serves, txn: false, level: h as u32 };
            self.add_op(OpKind::MergeDelta, Some(t), d, vec![Some(ln.delta[i]), Some(rn.delta[i])], vec![delta[o0], delta[o1]], merge(n.last + 1));
            self.add_op(OpKind::MergeSens, Some(t), d, vec![Some(ln.sens[i]), Some(rn.sens[i])], vec![sens[o0], sens[o1]], merge(n.first));
            let level = CORR_LEVEL - h as u32;
            self.add_op(
                OpKind::Corr,
                Some(t),
                d,
                vec![Some(ln.sens[i]), Some(corr[o0]), Some(corr[o1]), None],
                vec![ln.corr[i]],
                OpPrio { serves: ln.first, txn: false, level },
            );
            self.add_op(
                OpKind::Corr,
                Some(t),
                d,
                vec![Some(rn.sens[i]), Some(corr[o0]), Some(corr[o1]), Some(ln.delta[i])],
                vec![rn.corr[i]],
                OpPrio { serves: rn.first, txn: false, level },
            );
        }
    }

    /// The corr stage above the root, fed by the committed delta.
    fn wire_root(&mut self) {
        for op in std::mem::take(&mut self.root_ops) {
            self.remove_op(op);
        }
        for s in std::mem::take(&mut self.acc_sigs) {
            self.signals[s] = None;
        }
        let root = self.node(self.root).clone();
        let h = root.height;
        let mut parts: Vec<Vec<(DeltaKey, Option<DeltaVal>)>> = vec![Vec::new(); 1 << h];
        for (k, v) in self.acc.iter() {
            parts[self.decomp.locate(k.0, &k.1, h).index()].push((k.clone(), Some(v.clone())));
        }
        for (i, d) in Label::all(h).enumerate() {
            let s = self.add_signal(SignalKind::Delta, None, d);
            if let SignalData::Delta(sig) = &mut *self.signal(s).lock() {
                sig.publish(std::mem::take(&mut parts[i]));
            }
            self.acc_sigs.push(s);
            let prio = OpPrio { serves: root.first, txn: false, level: CORR_LEVEL - h as u32 - 1 };
            let op = self.add_op(OpKind::RootCorr, None, d, vec![Some(root.sens[i]), None, None, Some(s)], vec![root.corr[i]], prio);
            self.root_ops.push(op);
        }
    }

    /// Leaves in serialization order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            match self.node(n).kids {
                Some([l, r]) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(n),
            }
        }
        out
    }

    fn subtree_nodes(&self, n: NodeId, out: &mut Vec<NodeId>) {
        out.push(n);
        if let Some([l, r]) = self.node(n).kids {
            self.subtree_nodes(l, out);
            self.subtree_nodes(r, out);
        }
    }

    pub fn leaf_states(&self) -> Vec<LeafState> {
        self.leaves()
            .into_iter()
            .filter_map(|n| {
                let node = self.node(n);
                let leaf = node.leaf.as_ref()?;
                let st = self.ops[leaf.op].as_ref()?.state.lock().expect("op lock");
                let OpState::Txn(slot) = &*st else { return None };
                Some(LeafState { pos: node.first, op: leaf.op, txn: leaf.txn, status: slot.txn.status(), refreshes: slot.txn.refreshes })
            })
            .collect()
    }

    /// Place a transaction in the leftmost unoccupied leaf, growing the tree
    /// by one level if it is full. Returns the operators to enqueue.
    pub fn admit(&mut self, spec: Arc<TxnSpec>, id: TxnId) -> Result<Vec<(OpId, OpPrio)>, RuleError> {
        let txn = Txn::new(spec)?;
        let (leaf, mut wake) = self.place();
        let tip = self.tip.clone();
        let l = self.node_mut(leaf).leaf.as_mut().expect("leaf");
        l.occupied = true;
        l.txn = Some(id);
        let op = l.op;
        if let OpState::Txn(slot) = &mut *self.ops[op].as_ref().expect("leaf op").state.lock().expect("op lock") {
            slot.txn = txn;
            slot.base = Some(tip);
            slot.cursor = 0;
        }
        wake.push((op, self.ops[op].as_ref().expect("leaf op").prio));
        Ok(wake)
    }

    /// Take a leaf position with a null transaction.
    pub fn admit_null(&mut self) -> Vec<(OpId, OpPrio)> {
        let (leaf, wake) = self.place();
        self.node_mut(leaf).leaf.as_mut().expect("leaf").occupied = true;
        wake
    }

    fn free_leaf(&self) -> Option<NodeId> {
        self.leaves().into_iter().find(|n| !self.node(*n).leaf.as_ref().expect("leaf").occupied)
    }

    fn place(&mut self) -> (NodeId, Vec<(OpId, OpPrio)>) {
        match self.free_leaf() {
            Some(n) => (n, Vec::new()),
            None => {
                let wake = self.grow();
                (self.free_leaf().expect("room after growth"), wake)
            }
        }
    }

    /// Whether a transaction can be admitted without growing the tree.
    pub fn has_room(&self) -> bool {
        self.free_leaf().is_some()
    }

    /// Live transactions in serialization order.
    pub fn live_txns(&self) -> Vec<(u64, TxnId, TxnStatus)> {
        self.leaves().into_iter().filter_map(|n| self.status_of(n).map(|(id, s)| (self.node(n).first, id, s))).collect()
    }

    /// Check that every cycle of the operator graph passes through a
    /// transaction, so the non-transaction operators form a DAG.
    pub fn check_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<OpId, usize> = BTreeMap::new();
        let mut succ: BTreeMap<OpId, Vec<OpId>> = BTreeMap::new();
        for (id, op) in self.live_ops().filter(|(_, o)| o.kind != OpKind::Txn) {
            indeg.entry(id).or_insert(0);
            for s in &op.outputs {
                for r in &self.signal(*s).readers {
                    if self.op(*r).is_some_and(|o| o.kind != OpKind::Txn) {
                        succ.entry(id).or_default().push(*r);
                        *indeg.entry(*r).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut ready: Vec<OpId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(o, _)| *o).collect();
        let mut seen = 0;
        while let Some(o) = ready.pop() {
            seen += 1;
            for r in succ.get(&o).into_iter().flatten() {
                let d = indeg.get_mut(r).expect("counted");
                *d -= 1;
                if *d == 0 {
                    ready.push(*r);
                }
            }
        }
        seen == indeg.len()
    }

    /// Add a level: the old root becomes the left child of a new root whose
    /// right subtree is all null leaves.
    fn grow(&mut self) -> Vec<(OpId, OpPrio)> {
        let old = self.root;
        let h = self.node(old).height;
        let right = self.build(h);
        self.nodes.push(None);
        let id = self.nodes.len() - 1;
        let (first, last) = (self.node(old).first, self.node(right).last);
        self.nodes[id] = Some(Node {
            parent: None,
            kids: Some([old, right]),
            height: h + 1,
            first,
            last,
            delta: vec![],
            sens: vec![],
            corr: vec![],
            ops: vec![],
            leaf: None,
        });
        self.node_mut(old).parent = Some(id);
        self.node_mut(right).parent = Some(id);
        self.root = id;
        self.wire_group(id);
        self.wire_root();
        let ops = self.node(id).ops.clone();
        let mut order: Vec<OpId> = ops.into_iter().chain(self.root_ops.clone()).collect();
        order.sort_by_key(|o| self.ops[*o].as_ref().expect("live").prio.level);
        self.settle(&order)
    }

    /// Refresh operators in order right away, returning readers of whatever
    /// changed outside the list.
    fn settle(&self, order: &[OpId]) -> Vec<(OpId, OpPrio)> {
        let mut wake = Vec::new();
        for op in order {
            let r = self.refresh(*op);
            wake.extend(r.wake.into_iter().filter(|(o, _)| !order.contains(o)));
        }
        wake
    }

    /// Refresh one operator from its inputs.
    pub fn refresh(&self, id: OpId) -> Refreshed {
        let Some(op) = self.op(id) else { return Refreshed::default() };
        let mut st = op.state.lock().expect("op lock");
        let mut out = Refreshed::default();
        match &mut *st {
            OpState::Txn(slot) => {
                if slot.txn.is_null() {
                    return out;
                }
                let (v, corr, keys) = self.read_delta(op.inputs[0].expect("corr input"), slot.cursor);
                slot.cursor = v;
                let base = slot.base.as_ref().expect("admitted txn has a base");
                let res = slot.txn.refresh(base, &corr, &keys);
                out.txn = true;
                if self.publish_delta(op.outputs[0], res.delta) {
                    out.changed.push(op.outputs[0]);
                }
                let changed = match &mut *self.signal(op.outputs[1]).lock() {
                    SignalData::Sens(s) => publish_sens(s, res.sens).expect("transaction sensitivities only grow").is_some(),
                    SignalData::Delta(_) => unreachable!(),
                };
                if changed {
                    out.changed.push(op.outputs[1]);
                }
            }
            OpState::Merge { cursors } => {
                let split = self.decomp.split(op.d);
                if op.kind == OpKind::MergeDelta {
                    let (v0, left, k0) = self.read_delta(op.inputs[0].expect("input"), cursors[0]);
                    let (v1, right, k1) = self.read_delta(op.inputs[1].expect("input"), cursors[1]);
                    *cursors = [v0, v1];
                    let keys: BTreeSet<&DeltaKey> = k0.iter().chain(k1.iter()).collect();
                    let parts = merge_delta(&left, &right, &split, keys);
                    for (i, p) in parts.into_iter().enumerate() {
                        if self.publish_delta(op.outputs[i], p) {
                            out.changed.push(op.outputs[i]);
                        }
                    }
                } else {
                    let (v0, s0, c0) = self.read_sens(op.inputs[0].expect("input"), cursors[0]);
                    let (v1, s1, c1) = self.read_sens(op.inputs[1].expect("input"), cursors[1]);
                    *cursors = [v0, v1];
                    let mut spans: Vec<KeyInterval> = Vec::new();
                    for c in [c0, c1] {
                        let (r, i) = sens_diff(&c);
                        spans.extend(r);
                        spans.extend(i);
                    }
                    if !spans.is_empty() {
                        let o0 = self.sens_of(op.outputs[0]);
                        let o1 = self.sens_of(op.outputs[1]);
                        let parts = merge_sens([&s0, &s1], [&o0, &o1], &split, spans);
                        for (i, p) in parts.into_iter().enumerate() {
                            let changed = match &mut *self.signal(op.outputs[i]).lock() {
                                SignalData::Sens(s) => s.publish(p).is_some(),
                                SignalData::Delta(_) => unreachable!(),
                            };
                            if changed {
                                out.changed.push(op.outputs[i]);
                            }
                        }
                    }
                }
            }
            OpState::Corr { cursors, fresh } => {
                let (vs, sens, sc) = self.read_sens(op.inputs[0].expect("sens input"), cursors[0]);
                let mut maps: [Option<DeltaMap>; 3] = [None, None, None];
                let mut keys: BTreeSet<DeltaKey> = BTreeSet::new();
                for j in 0..3 {
                    if let Some(s) = op.inputs[j + 1] {
                        let (v, m, k) = self.read_delta(s, cursors[j + 1]);
                        cursors[j + 1] = v;
                        keys.extend(k);
                        maps[j] = Some(m);
                    }
                }
                cursors[0] = vs;
                let inp = CorrInputs { sens: &sens, corr: [maps[0].as_ref(), maps[1].as_ref()], delta: maps[2].as_ref() };
                let (removed, inserted) = sens_diff(&sc);
                corr_candidates(&inp, &removed, &inserted, &mut keys);
                let current = self.delta_of(op.outputs[0]);
                if *fresh {
                    keys.extend(current.iter().map(|(k, _)| k.clone()));
                    *fresh = false;
                }
                let changes = corr_revisit(&inp, &current, keys.iter());
                if self.publish_delta(op.outputs[0], changes) {
                    out.changed.push(op.outputs[0]);
                }
            }
        }
        drop(st);
        for s in &out.changed {
            for r in &self.signal(*s).readers {
                if let Some(o) = self.op(*r).filter(|o| self.live_reader(o)) {
                    out.wake.push((*r, o.prio));
                }
            }
        }
        out
    }

    fn read_delta(&self, s: SigId, from: VersionId) -> (VersionId, DeltaMap, Vec<DeltaKey>) {
        match &*self.signal(s).lock() {
            SignalData::Delta(d) => {
                let v = d.latest_version();
                (v, d.latest().clone(), d.touched_keys(from, v))
            }
            SignalData::Sens(_) => panic!("not a delta signal"),
        }
    }

    fn read_sens(&self, s: SigId, from: VersionId) -> (VersionId, SensMap, Vec<crate::signal::Change<crate::signal::SensKey, crate::domain::Bound>>) {
        match &*self.signal(s).lock() {
            SignalData::Sens(d) => {
                let v = d.latest_version();
                (v, d.latest().clone(), d.changes(from, v).expect("cursor is a known version"))
            }
            SignalData::Delta(_) => panic!("not a sensitivity signal"),
        }
    }

    fn publish_delta(&self, s: SigId, changes: Vec<(DeltaKey, Option<DeltaVal>)>) -> bool {
        if changes.is_empty() {
            return false;
        }
        match &mut *self.signal(s).lock() {
            SignalData::Delta(d) => d.publish(changes).is_some(),
            SignalData::Sens(_) => panic!("not a delta signal"),
        }
    }

    /// Empty a signal as a structural change, bypassing the monotone check.
    fn reset(&self, s: SigId) -> bool {
        match &mut *self.signal(s).lock() {
            SignalData::Delta(d) => d.reset().is_some(),
            SignalData::Sens(d) => d.reset().is_some(),
        }
    }

    /// With nothing committed the root corr stage emits nothing whatever the
    /// sensitivities, so there is no point waking it.
    fn live_reader(&self, o: &Operator) -> bool {
        o.kind != OpKind::RootCorr || !self.acc.is_empty()
    }

    fn readers_of(&self, sigs: &[SigId]) -> Vec<(OpId, OpPrio)> {
        let mut out = Vec::new();
        for s in sigs {
            for r in &self.signal(*s).readers {
                let o = self.ops[*r].as_ref().expect("reader is live");
                if self.live_reader(o) {
                    out.push((*r, o.prio));
                }
            }
        }
        out
    }

    /// Replace a transaction by a null one. Its outputs are emptied so its
    /// effects drain out of the circuit. Returns the spec and the operators
    /// to enqueue.
    pub fn bump(&mut self, id: TxnId) -> Option<(Arc<TxnSpec>, Vec<(OpId, OpPrio)>)> {
        let leaf = self.leaves().into_iter().find(|n| self.node(*n).leaf.as_ref().is_some_and(|l| l.txn == Some(id)))?;
        let spec = self.nullify(leaf)?;
        self.node_mut(leaf).leaf.as_mut().expect("leaf").txn = None;
        let n = self.node(leaf);
        let sigs: Vec<SigId> = [n.delta[0], n.sens[0]].into_iter().filter(|s| self.reset(*s)).collect();
        Some((spec, self.readers_of(&sigs)))
    }

    fn nullify(&self, leaf: NodeId) -> Option<Arc<TxnSpec>> {
        let op = self.node(leaf).leaf.as_ref()?.op;
        let mut st = self.ops[op].as_ref()?.state.lock().expect("op lock");
        let OpState::Txn(slot) = &mut *st else { return None };
        let spec = slot.txn.spec()?.clone();
        slot.txn = Txn::null();
        slot.base = None;
        Some(spec)
    }

    /// Apply a delta to the tip and fold it into the committed corrections.
    fn apply(&mut self, delta: &DeltaMap) {
        for ((p, k), v) in delta.iter() {
            match v {
                DeltaVal::Upsert(row) => {
                    self.tip.upsert(*p, k.clone(), row.clone()).expect("transaction output was validated");
                }
                DeltaVal::Retract => {
                    self.tip.retract(*p, k).expect("transaction output was validated");
                }
            }
            self.acc.insert((*p, k.clone()), v.clone());
        }
    }

    fn status_of(&self, leaf: NodeId) -> Option<(TxnId, TxnStatus)> {
        let l = self.node(leaf).leaf.as_ref()?;
        let id = l.txn?;
        let st = self.ops[l.op].as_ref()?.state.lock().expect("op lock");
        let OpState::Txn(slot) = &*st else { return None };
        Some((id, slot.txn.status()))
    }

    fn has_live_txns(&self) -> bool {
        self.leaves().into_iter().any(|n| self.status_of(n).is_some())
    }

    /// Drop every node outside `keep`, which becomes the root.
    fn reroot(&mut self, keep: NodeId) {
        let mut doomed = Vec::new();
        self.subtree_nodes(self.root, &mut doomed);
        let mut kept = Vec::new();
        self.subtree_nodes(keep, &mut kept);
        let kept: BTreeSet<NodeId> = kept.into_iter().collect();
        for n in doomed.into_iter().filter(|n| !kept.contains(n)) {
            let node = self.nodes[n].take().expect("live node");
            for op in node.ops {
                self.remove_op(op);
            }
            for s in node.delta.into_iter().chain(node.sens).chain(node.corr) {
                self.signals[s] = None;
            }
        }
        self.node_mut(keep).parent = None;
        self.root = keep;
        if !self.has_live_txns() {
            self.acc = DeltaMap::new();
        }
        self.wire_root();
    }

    /// Commit the root's left subtree: apply its subdomain deltas to the tip
    /// and make the right child the root.
    pub fn commit_left(&mut self) -> Commit {
        let [l, r] = self.node(self.root).kids.expect("root is a group");
        let mut delta = DeltaMap::new();
        for s in self.node(l).delta.clone() {
            for (k, v) in self.delta_of(s).iter() {
                delta.insert(k.clone(), v.clone());
            }
        }
        let mut leaves = Vec::new();
        self.subtree_nodes(l, &mut leaves);
        let txns: Vec<(TxnId, TxnStatus)> = leaves.into_iter().filter_map(|n| self.status_of(n)).collect();
        self.apply(&delta);
        self.reroot(r);
        let wake = self.settle(&self.root_ops.clone());
        Commit { txns, delta, wake }
    }

    /// Commit a single-leaf or fully finalized tree as a whole.
    pub fn commit_all(&mut self) -> Commit {
        let txns: Vec<(TxnId, TxnStatus)> = self.leaves().into_iter().filter_map(|n| self.status_of(n)).collect();
        let mut delta = DeltaMap::new();
        for s in self.node(self.root).delta.clone() {
            for (k, v) in self.delta_of(s).iter() {
                delta.insert(k.clone(), v.clone());
            }
        }
        self.apply(&delta);
        let fresh = self.build(0);
        self.reroot(fresh);
        Commit { txns, delta, wake: Vec::new() }
    }

    /// Commit every transaction before position `cut`.
    ///
    /// The committed delta is what the tree's top-level deltas converge to
    /// with every later transaction replaced by a null one. The live tree
    /// shrinks to the smallest subtree holding the remaining transactions,
    /// with the committed ones inside it replaced by nulls.
    pub fn commit_prefix(&mut self, cut: u64) -> Commit {
        let delta = self.prefix_delta(self.root, cut);
        let leaves = self.leaves();
        let mut txns = Vec::new();
        let mut rest = Vec::new();
        for n in &leaves {
            if let Some(s) = self.status_of(*n) {
                if self.node(*n).first < cut {
                    txns.push((*n, s));
                } else {
                    rest.push(*n);
                }
            }
        }
        self.apply(&delta);
        if rest.is_empty() {
            let fresh = self.build(0);
            self.reroot(fresh);
            return Commit { txns: txns.into_iter().map(|(_, s)| s).collect(), delta, wake: Vec::new() };
        }
        let mut keep = rest[0];
        let hi = self.node(*rest.last().expect("nonempty")).first;
        while self.node(keep).last < hi {
            keep = self.node(keep).parent.expect("an ancestor spans both");
        }
        let mut wake_sigs = Vec::new();
        for (n, _) in &txns {
            if self.node(keep).first <= self.node(*n).first && self.node(*n).first <= self.node(keep).last {
                self.nullify(*n);
                self.node_mut(*n).leaf.as_mut().expect("leaf").txn = None;
                let node = self.node(*n);
                wake_sigs.extend([node.delta[0], node.sens[0]].into_iter().filter(|s| self.reset(*s)));
            }
        }
        self.reroot(keep);
        let mut wake = self.readers_of(&wake_sigs);
        wake.retain(|(o, _)| self.op(*o).is_some());
        wake.extend(self.settle(&self.root_ops.clone()));
        Commit { txns: txns.into_iter().map(|(_, s)| s).collect(), delta, wake }
    }

    fn prefix_delta(&self, n: NodeId, cut: u64) -> DeltaMap {
        let node = self.node(n);
        if node.first >= cut {
            return DeltaMap::new();
        }
        match node.kids {
            None => {
                if self.status_of(n).is_some() {
                    self.delta_of(node.delta[0])
                } else {
                    DeltaMap::new()
                }
            }
            Some([l, r]) => {
                let mut out = self.prefix_delta(l, cut);
                for (k, v) in self.prefix_delta(r, cut).iter() {
                    out.insert(k.clone(), v.clone());
                }
                out
            }
        }
    }

    /// Operators in the subtree of `n`.
    pub fn ops_below(&self, n: NodeId) -> Vec<OpId> {
        let mut nodes = Vec::new();
        self.subtree_nodes(n, &mut nodes);
        nodes.into_iter().flat_map(|m| self.node(m).ops.clone()).collect()
    }

    /// Positions of the leaves of a transaction tree label, for display.
    pub fn label_of(&self, mut n: NodeId) -> String {
        let mut bits = Vec::new();
        while let Some(p) = self.node(n).parent {
            bits.push(if self.node(p).kids.expect("group")[1] == n { '1' } else { '0' });
            n = p;
        }
        bits.iter().rev().collect()
    }

    /// Topology in DOT format: operators as ellipses, signals as boxes.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph circuit {\n  rankdir=BT;\n");
        for (i, sig) in self.signals.iter().enumerate() {
            let Some(sig) = sig else { continue };
            let t = sig.node.map(|n| self.label_of(n)).unwrap_or_else(|| "^".into());
            let name = match sig.kind {
                SignalKind::Delta => "δ",
                SignalKind::Sens => "s",
                SignalKind::Corr => "c",
            };
            let _ = writeln!(s, "  s{i} [shape=box,label=\"{name}_{t}^{}\"];", sig.d);
        }
        for (i, op) in self.live_ops() {
            let t = op.node.map(|n| self.label_of(n)).unwrap_or_else(|| "^".into());
            let name = match op.kind {
                OpKind::Txn => "txn",
                OpKind::MergeDelta => "merge δ",
                OpKind::MergeSens => "merge s",
                OpKind::Corr | OpKind::RootCorr => "corr",
            };
            let _ = writeln!(s, "  o{i} [label=\"{name} t={t} d={}\"];", op.d);
            for inp in op.inputs.iter().flatten() {
                let _ = writeln!(s, "  s{inp} -> o{i};");
            }
            for o in &op.outputs {
                let _ = writeln!(s, "  o{i} -> s{o};");
            }
        }
        s.push_str("}\n");
        s
    }

    /// The split point a merge at group height `h` uses for subdomain `d`.
    pub fn split_for(&self, d: Label) -> DomainPoint {
        self.decomp.split(d)
    }

    /// Published delta of a leaf's transaction.
    pub fn txn_delta(&self, id: TxnId) -> Option<DeltaMap> {
        let leaf = self.leaves().into_iter().find(|n| self.node(*n).leaf.as_ref().is_some_and(|l| l.txn == Some(id)))?;
        Some(self.delta_of(self.node(leaf).delta[0]))
    }

    /// Root-level delta, all subdomains together.
    pub fn root_delta(&self) -> DeltaMap {
        let mut out = DeltaMap::new();
        for s in &self.node(self.root).delta {
            for (k, v) in self.delta_of(*s).iter() {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }

    pub fn committed_corrections(&self) -> &DeltaMap {
        &self.acc
    }

    /// Number of (delta merge, sens merge, corr) operators at a node.
    pub fn op_census(&self, n: NodeId) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for o in &self.node(n).ops {
            let name = match self.ops[*o].as_ref().expect("live").kind {
                OpKind::Txn => "txn",
                OpKind::MergeDelta => "merge_delta",
                OpKind::MergeSens => "merge_sens",
                OpKind::Corr | OpKind::RootCorr => "corr",
            };
            *m.entry(name).or_insert(0) += 1;
        }
        m
    }
}
