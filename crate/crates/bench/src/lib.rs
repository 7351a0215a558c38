//! Workloads, a serial oracle, a row-locking baseline, and the harness that
//! runs the repair engine against them.

pub mod locks;
pub mod oracle;
pub mod run;
pub mod workload;

pub use locks::{run_lock_baseline, LockRun};
pub use oracle::{run_serial_oracle, run_txn, OracleTxn};
pub use run::{first_divergence, oracle, outcome_hash, run_repair, state_hash, RepairOptions, RepairRun, RunReport};
pub use workload::{gen_workload, mean_common_skus, Workload, WorkloadConfig, WorkloadKind};
