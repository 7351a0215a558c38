//! Driving the engine over a workload and checking it against the oracle.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use txrepair::engine::{CommitStrategy, Engine, EngineConfig, Intake, Metrics, Outcome, PriorityOrder};
use txrepair::pstore::DbVersion;
use txrepair::rulelang::RuleError;
use txrepair::txn::TxnSpec;

use crate::oracle::run_serial_oracle;
use crate::workload::Workload;

pub fn state_hash(db: &DbVersion) -> String {
    hex::encode(Sha256::digest(db.export_snapshot().as_bytes()))
}

/// Hash of per-transaction aborted flags in serialization order.
pub fn outcome_hash(aborted: &[bool]) -> String {
    let s: String = aborted.iter().map(|a| if *a { 'A' } else { 'C' }).collect();
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub alpha: f64,
    pub workers: usize,
    pub txns: usize,
    pub seconds: f64,
    pub throughput: f64,
    pub speedup: f64,
    pub txn_refreshes: u64,
    pub op_refreshes: u64,
    pub aborted: usize,
    pub state_hash: String,
    pub outcome_hash: String,
    pub verified: Option<bool>,
    pub metrics: Option<Metrics>,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "workload,alpha,workers,txns,seconds,throughput,speedup,txn_refreshes,op_refreshes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.2},{:.3},{},{}",
            self.workload,
            self.alpha,
            self.workers,
            self.txns,
            self.seconds,
            self.throughput,
            self.speedup,
            self.txn_refreshes,
            self.op_refreshes
        )
    }
}

#[derive(Clone, Debug)]
pub struct RepairOptions {
    pub workers: usize,
    pub commit: CommitStrategy,
    pub decomposition_height: usize,
    pub max_height: usize,
    pub intake: Intake,
    pub order: PriorityOrder,
    pub random_ties: Option<u64>,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            workers: 1,
            commit: CommitStrategy::Simple,
            decomposition_height: 2,
            max_height: 12,
            intake: Intake::WhenIdle,
            order: PriorityOrder::EarliestFirst,
            random_ties: None,
        }
    }
}

/// What the engine produced for a workload.
pub struct RepairRun {
    pub db: DbVersion,
    /// Aborted flag per transaction, in submission order.
    pub aborted: Vec<bool>,
    pub seconds: f64,
    pub metrics: Metrics,
}

pub fn run_repair(w: &Workload, opt: &RepairOptions) -> Result<RepairRun, RuleError> {
    let cfg = EngineConfig {
        workers: opt.workers,
        max_height: opt.max_height,
        decomposition: Arc::new(w.decomposition(opt.decomposition_height)),
        commit: opt.commit,
        intake: opt.intake,
        order: opt.order,
        random_ties: opt.random_ties,
        read_only_first: false,
    };
    let engine = Engine::new(cfg, w.db.clone());
    for t in &w.txns {
        engine.submit(t.spec.clone());
    }
    let start = Instant::now();
    let report = engine.run()?;
    let seconds = start.elapsed().as_secs_f64();
    let aborted = (0..w.txns.len() as u64).map(|i| report.outcomes.get(&i) == Some(&Outcome::Aborted)).collect();
    Ok(RepairRun { db: report.tip, aborted, seconds, metrics: report.metrics })
}

/// Serial oracle over the workload in submission order.
pub fn oracle(w: &Workload) -> (DbVersion, Vec<bool>) {
    let specs: Vec<&TxnSpec> = w.txns.iter().map(|t| t.spec.as_ref()).collect();
    run_serial_oracle(&w.db, &specs)
}

/// First difference between two databases, for diagnostics.
pub fn first_divergence(a: &DbVersion, b: &DbVersion) -> Option<String> {
    let (x, y) = (a.export_snapshot(), b.export_snapshot());
    let mut lx = x.lines();
    let mut ly = y.lines();
    loop {
        match (lx.next(), ly.next()) {
            (None, None) => return None,
            (p, q) if p == q => continue,
            (p, q) => return Some(format!("engine: {p:?}\noracle: {q:?}")),
        }
    }
}
