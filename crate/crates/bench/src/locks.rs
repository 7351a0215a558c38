//! Row-level locking baseline for the sku workload.
//!
//! Each transaction takes exclusive locks on its skus in ascending order
//! (so no deadlock can form), reads, writes, and releases everything at the
//! end: strict two-phase locking.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use txrepair::pstore::{DbVersion, Value};

use crate::workload::Workload;

pub struct LockRun {
    pub db: DbVersion,
    pub seconds: f64,
}

pub fn run_lock_baseline(w: &Workload, workers: usize) -> LockRun {
    let inv = w.db.pred_id("inventory").expect("sku schema");
    let rows: Vec<Mutex<i64>> = (0..w.config.n as i64)
        .map(|s| Mutex::new(w.db.lookup(inv, &[Value::Int(s)]).and_then(|r| r[0].as_int()).unwrap_or(0)))
        .collect();
    let mut plans: Vec<Vec<(usize, i64)>> = w
        .txns
        .iter()
        .map(|t| t.adjust.iter().map(|(s, d)| (*s as usize, *d)).collect())
        .collect();
    for p in &mut plans {
        p.sort_unstable();
    }
    let next = AtomicUsize::new(0);
    let start = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(plan) = plans.get(i) else { return };
                let mut held: Vec<_> = plan.iter().map(|(s, _)| rows[*s].lock().expect("row lock")).collect();
                for (g, (_, d)) in held.iter_mut().zip(plan) {
                    **g += d;
                }
                drop(held);
            });
        }
    });
    let seconds = start.elapsed().as_secs_f64();
    let mut db = w.db.clone();
    for (s, m) in rows.into_iter().enumerate() {
        let v = m.into_inner().expect("row lock");
        db.upsert(inv, vec![Value::Int(s as i64)], vec![Value::Int(v)]).expect("valid row");
    }
    LockRun { db, seconds }
}
