//! Scheduling, finalization and commit.
//!
//! Workers repeatedly take the highest-priority operator off a shared queue
//! and refresh it; readers of whatever changed are queued in turn. When the
//! queue runs dry a worker does structural work instead: commit a finalized
//! group, or admit a transaction from the holding queue.
//!
//! Refreshes share a read lock on the circuit. Admission, commit and bumping
//! take the write lock, so they never see an operator mid-refresh. The
//! scheduler lock may be taken while holding the circuit lock, never the
//! other way round.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::circuit::{Circuit, OpId, OpKind, OpPrio, TxnId};
use crate::domain::Decomposition;
use crate::pstore::DbVersion;
use crate::rulelang::RuleError;
use crate::txn::{TxnSpec, TxnStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CommitStrategy {
    /// Commit the root's left subtree once it is finalized.
    Simple,
    /// Commit any finalized prefix, padding the rest with null transactions.
    Padded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Intake {
    /// Admit only when no operator is queued, one transaction per worker.
    WhenIdle,
    /// Admit everything in the holding queue as soon as there is room.
    Eager,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PriorityOrder {
    EarliestFirst,
    /// Latest transaction first. Correct but quadratic on conflict chains.
    Inverted,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub workers: usize,
    pub max_height: usize,
    pub decomposition: Arc<Decomposition>,
    pub commit: CommitStrategy,
    pub intake: Intake,
    pub order: PriorityOrder,
    /// Break priority ties randomly with this seed instead of FIFO.
    pub random_ties: Option<u64>,
    /// Put read-only transactions at the head of the holding queue.
    pub read_only_first: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 1,
            max_height: 12,
            decomposition: Arc::new(Decomposition::trivial()),
            commit: CommitStrategy::Simple,
            intake: Intake::WhenIdle,
            order: PriorityOrder::EarliestFirst,
            random_ties: None,
            read_only_first: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Accepted,
    Aborted,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Metrics {
    pub txn_refreshes: u64,
    pub op_refreshes: BTreeMap<String, u64>,
    pub max_queue_depth: usize,
    pub admissions: u64,
    pub commits: u64,
    pub committed_txns: u64,
    pub bumps: u64,
    pub max_height: usize,
}

impl Metrics {
    pub fn total_op_refreshes(&self) -> u64 {
        self.op_refreshes.values().sum()
    }
}

/// The result of a run.
#[derive(Clone, Debug)]
pub struct Report {
    pub tip: DbVersion,
    pub outcomes: BTreeMap<TxnId, Outcome>,
    /// Transactions in serialization order.
    pub order: Vec<TxnId>,
    pub metrics: Metrics,
}

type QKey = (u64, bool, u32, u64, OpId);

struct Sched {
    queue: BTreeSet<QKey>,
    member: HashMap<OpId, QKey>,
    /// How many queued operators serve each position.
    serves: BTreeMap<u64, usize>,
    serves_of: HashMap<OpId, u64>,
    seq: u64,
    rng: Option<StdRng>,
    holding: VecDeque<(TxnId, Arc<TxnSpec>)>,
    next_id: TxnId,
    outcomes: BTreeMap<TxnId, Outcome>,
    order: Vec<TxnId>,
    /// Try a commit once every position up to this one is finalized.
    commit_at: Option<u64>,
    metrics: Metrics,
}

impl Sched {
    fn push(&mut self, op: OpId, p: OpPrio, order: PriorityOrder) {
        if self.member.contains_key(&op) {
            return;
        }
        let major = match order {
            PriorityOrder::EarliestFirst => p.serves,
            PriorityOrder::Inverted => u64::MAX - p.serves,
        };
        let tie = match &mut self.rng {
            Some(r) => r.gen(),
            None => {
                self.seq += 1;
                self.seq
            }
        };
        let key = (major, p.txn, p.level, tie, op);
        self.queue.insert(key);
        self.member.insert(op, key);
        *self.serves.entry(p.serves).or_insert(0) += 1;
        self.serves_of.insert(op, p.serves);
        self.metrics.max_queue_depth = self.metrics.max_queue_depth.max(self.queue.len());
    }

    fn forget(&mut self, op: OpId) {
        self.member.remove(&op);
        if let Some(s) = self.serves_of.remove(&op) {
            let n = self.serves.get_mut(&s).expect("counted");
            *n -= 1;
            if *n == 0 {
                self.serves.remove(&s);
            }
        }
    }

    fn pop(&mut self) -> Option<OpId> {
        let key = self.queue.pop_first()?;
        self.forget(key.4);
        Some(key.4)
    }

    fn remove(&mut self, op: OpId) {
        if let Some(key) = self.member.get(&op).copied() {
            self.queue.remove(&key);
            self.forget(op);
        }
    }

    /// Positions below this are finalized: nothing queued can affect them.
    fn cut(&self) -> u64 {
        self.serves.keys().next().copied().unwrap_or(u64::MAX)
    }

    fn wants_commit(&self) -> bool {
        self.commit_at.is_some_and(|p| self.cut() > p)
    }
}

/// What a structural step did.
#[derive(Debug, PartialEq, Eq)]
enum Step {
    Progress,
    Nothing,
    Done,
}

pub struct Engine {
    cfg: EngineConfig,
    circuit: RwLock<Circuit>,
    sched: Mutex<Sched>,
}

impl Engine {
    pub fn new(cfg: EngineConfig, db: DbVersion) -> Engine {
        let circuit = Circuit::new(cfg.decomposition.clone(), db);
        let sched = Sched {
            queue: BTreeSet::new(),
            member: HashMap::new(),
            serves: BTreeMap::new(),
            serves_of: HashMap::new(),
            seq: 0,
            rng: cfg.random_ties.map(StdRng::seed_from_u64),
            holding: VecDeque::new(),
            next_id: 0,
            outcomes: BTreeMap::new(),
            order: Vec::new(),
            commit_at: None,
            metrics: Metrics::default(),
        };
        Engine { cfg, circuit: RwLock::new(circuit), sched: Mutex::new(sched) }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn sched(&self) -> MutexGuard<'_, Sched> {
        self.sched.lock().expect("scheduler lock")
    }

    /// Put a transaction in the holding queue.
    pub fn submit(&self, spec: Arc<TxnSpec>) -> TxnId {
        let mut s = self.sched();
        let id = s.next_id;
        s.next_id += 1;
        if self.cfg.read_only_first && spec.is_read_only() {
            s.holding.push_front((id, spec));
        } else {
            s.holding.push_back((id, spec));
        }
        id
    }

    /// Inspect the circuit.
    pub fn with_circuit<R>(&self, f: impl FnOnce(&Circuit) -> R) -> R {
        f(&self.circuit.read().expect("circuit lock"))
    }

    pub fn tip(&self) -> DbVersion {
        self.with_circuit(|c| c.tip().clone())
    }

    pub fn outcomes(&self) -> BTreeMap<TxnId, Outcome> {
        self.sched().outcomes.clone()
    }

    pub fn metrics(&self) -> Metrics {
        let mut m = self.sched().metrics.clone();
        m.max_height = m.max_height.max(self.with_circuit(|c| c.height()));
        m
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string(&self.metrics()).expect("metrics serialize")
    }

    /// Refresh one queued operator, if any. Returns whether one ran.
    fn refresh_one(&self) -> bool {
        let c = self.circuit.read().expect("circuit lock");
        let Some(op) = self.sched().pop() else { return false };
        let kind = c.op(op).map(|o| o.kind);
        let r = c.refresh(op);
        let mut s = self.sched();
        if let Some(kind) = kind {
            *s.metrics.op_refreshes.entry(kind_name(kind).into()).or_insert(0) += 1;
        }
        s.metrics.txn_refreshes += r.txn as u64;
        for (o, p) in r.wake {
            s.push(o, p, self.cfg.order);
        }
        true
    }

    /// Record outcomes of transactions that can no longer change.
    fn finalize_scan(&self, c: &Circuit, s: &mut Sched) {
        let cut = s.cut();
        for (pos, id, st) in c.live_txns() {
            if pos >= cut {
                break;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = s.outcomes.entry(id) {
                e.insert(if st == TxnStatus::Failed { Outcome::Aborted } else { Outcome::Accepted });
            }
        }
    }

    fn try_commit(&self, c: &mut Circuit, s: &mut Sched) -> bool {
        let cut = s.cut();
        let live = c.live_txns();
        if live.is_empty() || live[0].0 >= cut {
            return false;
        }
        let all = live.last().expect("nonempty").0 < cut && s.queue.is_empty();
        let root = c.root();
        let cm = if all || c.node(root).kids.is_none() {
            if !all {
                return false;
            }
            c.commit_all()
        } else {
            match self.cfg.commit {
                CommitStrategy::Simple => {
                    let [l, _] = c.node(root).kids.expect("group");
                    if c.node(l).last >= cut || live[0].0 > c.node(l).last {
                        return false;
                    }
                    let busy = c
                        .ops_below(l)
                        .into_iter()
                        .any(|o| s.member.contains_key(&o) && c.op(o).is_some_and(|op| op.kind == OpKind::MergeDelta));
                    if busy {
                        return false;
                    }
                    c.commit_left()
                }
                CommitStrategy::Padded => c.commit_prefix(cut),
            }
        };
        let dead: Vec<OpId> = s.member.keys().copied().filter(|o| c.op(*o).is_none()).collect();
        for o in dead {
            s.remove(o);
        }
        for (o, p) in cm.wake {
            if c.op(o).is_some() {
                s.push(o, p, self.cfg.order);
            }
        }
        s.metrics.commits += 1;
        s.metrics.committed_txns += cm.txns.len() as u64;
        for (id, st) in cm.txns {
            s.outcomes.entry(id).or_insert(if st == TxnStatus::Failed { Outcome::Aborted } else { Outcome::Accepted });
            s.order.push(id);
        }
        true
    }

    fn admit_one(&self, c: &mut Circuit, s: &mut Sched) -> Result<bool, RuleError> {
        if !c.has_room() && c.height() >= self.cfg.max_height {
            return Ok(false);
        }
        let Some((id, spec)) = s.holding.pop_front() else { return Ok(false) };
        let wake = c.admit(spec, id)?;
        s.metrics.admissions += 1;
        s.metrics.max_height = s.metrics.max_height.max(c.height());
        for (o, p) in wake {
            s.push(o, p, self.cfg.order);
        }
        Ok(true)
    }

    fn structural(&self) -> Result<Step, RuleError> {
        let mut c = self.circuit.write().expect("circuit lock");
        let mut s = self.sched();
        self.finalize_scan(&c, &mut s);
        let mut step = Step::Nothing;
        if self.try_commit(&mut c, &mut s) {
            step = Step::Progress;
        }
        let admit = match self.cfg.intake {
            Intake::WhenIdle => s.queue.is_empty(),
            Intake::Eager => true,
        };
        if admit {
            // An idle queue takes one transaction per worker.
            let mut budget = match self.cfg.intake {
                Intake::WhenIdle => self.cfg.workers.max(1),
                Intake::Eager => usize::MAX,
            };
            while budget > 0 && self.admit_one(&mut c, &mut s)? {
                step = Step::Progress;
                budget -= 1;
            }
        }
        let live = c.live_txns();
        s.commit_at = match (self.cfg.commit, c.node(c.root()).kids) {
            _ if live.is_empty() => None,
            (CommitStrategy::Simple, Some([l, _])) => Some(c.node(l).last.max(live[0].0)),
            (CommitStrategy::Simple, None) => Some(live[0].0),
            (CommitStrategy::Padded, _) => Some(live[0].0),
        };
        if step == Step::Nothing && s.queue.is_empty() && s.holding.is_empty() && live.is_empty() {
            step = Step::Done;
        }
        Ok(step)
    }

    /// One unit of single-threaded work. Returns false once everything
    /// submitted has been committed.
    pub fn step(&self) -> Result<bool, RuleError> {
        let hint = self.sched().wants_commit();
        if !hint && self.refresh_one() {
            return Ok(true);
        }
        match self.structural()? {
            Step::Done => Ok(false),
            Step::Progress => Ok(true),
            Step::Nothing => Ok(self.refresh_one() || !self.sched().queue.is_empty()),
        }
    }

    /// Drive everything submitted to completion with the configured number
    /// of workers.
    pub fn run(&self) -> Result<Report, RuleError> {
        let workers = self.cfg.workers.max(1);
        if workers == 1 {
            while self.step()? {}
        } else {
            let failed: Mutex<Option<RuleError>> = Mutex::new(None);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        if failed.lock().expect("error slot").is_some() {
                            return;
                        }
                        match self.step() {
                            Ok(true) => {}
                            Ok(false) => return,
                            Err(e) => {
                                *failed.lock().expect("error slot") = Some(e);
                                return;
                            }
                        }
                    });
                }
            });
            if let Some(e) = failed.into_inner().expect("error slot") {
                return Err(e);
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> Report {
        let tip = self.tip();
        let metrics = self.metrics();
        let s = self.sched();
        Report { tip, outcomes: s.outcomes.clone(), order: s.order.clone(), metrics }
    }

    /// Replace a transaction in the tree with a null one and send it back
    /// to the holding queue. False if it is not in the tree.
    pub fn bump(&self, id: TxnId) -> bool {
        let mut c = self.circuit.write().expect("circuit lock");
        if self.sched().outcomes.contains_key(&id) {
            return false;
        }
        let Some((spec, wake)) = c.bump(id) else { return false };
        let mut s = self.sched();
        for (o, p) in wake {
            s.push(o, p, self.cfg.order);
        }
        s.holding.push_back((id, spec));
        s.metrics.bumps += 1;
        true
    }

    /// Take the next leaf position with a null transaction.
    pub fn admit_null(&self) {
        let mut c = self.circuit.write().expect("circuit lock");
        let wake = c.admit_null();
        let mut s = self.sched();
        for (o, p) in wake {
            s.push(o, p, self.cfg.order);
        }
    }

    /// Admit everything in the holding queue now, room permitting.
    pub fn admit_all(&self) -> Result<usize, RuleError> {
        let mut c = self.circuit.write().expect("circuit lock");
        let mut s = self.sched();
        let mut n = 0;
        while self.admit_one(&mut c, &mut s)? {
            n += 1;
        }
        Ok(n)
    }

    /// Transactions the circuit currently holds, with their positions.
    pub fn in_tree(&self) -> Vec<(u64, TxnId, TxnStatus)> {
        self.with_circuit(|c| c.live_txns())
    }

    /// Whether a transaction's outcome can no longer change.
    pub fn is_finalized(&self, id: TxnId) -> bool {
        let c = self.circuit.read().expect("circuit lock");
        let s = self.sched();
        if s.outcomes.contains_key(&id) {
            return true;
        }
        let cut = s.cut();
        c.live_txns().iter().any(|(pos, t, _)| *t == id && *pos < cut)
    }

    pub fn queue_len(&self) -> usize {
        self.sched().queue.len()
    }
}

fn kind_name(k: OpKind) -> &'static str {
    match k {
        OpKind::Txn => "txn",
        OpKind::MergeDelta => "merge_delta",
        OpKind::MergeSens => "merge_sens",
        OpKind::Corr => "corr",
        OpKind::RootCorr => "root_corr",
    }
}
