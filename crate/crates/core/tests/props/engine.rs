use std::sync::Arc;

use proptest::prelude::*;
use txrepair::circuit::Circuit;
use txrepair::engine::{CommitStrategy, Engine, EngineConfig, Intake, Outcome as TxnOutcome, PriorityOrder};
use txrepair::pstore::DbVersion;
use txrepair::signal::{DeltaMap, DeltaVal};
use txrepair::txn::{Txn, TxnSpec, TxnStatus};

use super::circuit::{db, decomposition, spec};
use super::{check, Outcome};

/// One transaction at a time against the latest state.
fn serial(specs: &[Arc<TxnSpec>]) -> (DbVersion, Vec<TxnOutcome>) {
    let mut db = db();
    let mut out = Vec::new();
    for s in specs {
        let mut t = Txn::new(s.clone()).unwrap();
        t.evaluate(&db, &DeltaMap::new());
        out.push(if t.status() == TxnStatus::Failed { TxnOutcome::Aborted } else { TxnOutcome::Accepted });
        for ((p, k), v) in t.delta().iter() {
            match v {
                DeltaVal::Upsert(r) => db.upsert(*p, k.clone(), r.clone()).unwrap(),
                DeltaVal::Retract => db.retract(*p, k).unwrap(),
            };
        }
    }
    (db, out)
}

fn config() -> impl Strategy<Value = EngineConfig> {
    (
        1..4usize,
        0..3usize,
        1..5usize,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        proptest::option::of(any::<u64>()),
    )
        .prop_map(|(workers, h, max_height, padded, eager, inverted, random_ties)| EngineConfig {
            workers,
            max_height,
            decomposition: decomposition(h),
            commit: if padded { CommitStrategy::Padded } else { CommitStrategy::Simple },
            intake: if eager { Intake::Eager } else { Intake::WhenIdle },
            order: if inverted { PriorityOrder::Inverted } else { PriorityOrder::EarliestFirst },
            random_ties,
            read_only_first: false,
        })
}

/// Any configuration commits the serial result, and every submitted
/// transaction gets an outcome.
pub fn serial_equivalence(cases: u32) -> Outcome {
    check(cases, (prop::collection::vec(spec(), 0..16), config()), |(specs, cfg)| {
        let e = Engine::new(cfg, db());
        for s in &specs {
            e.submit(s.clone());
        }
        let r = e.run().map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (want, outcomes) = serial(&specs);
        prop_assert!(r.tip.same_contents(&want), "{}\nvs\n{}", r.tip.export_snapshot(), want.export_snapshot());
        let got: Vec<TxnOutcome> = r.outcomes.values().copied().collect();
        prop_assert_eq!(got, outcomes);
        prop_assert_eq!(r.order, (0..specs.len() as u64).collect::<Vec<_>>());
        Ok(())
    })
}

/// Operator priorities stay well founded as the tree grows.
pub fn acyclic_priorities(cases: u32) -> Outcome {
    check(cases, (prop::collection::vec(spec(), 1..20), 0..4usize), |(specs, h)| {
        let mut c = Circuit::new(decomposition(h), db());
        for (i, s) in specs.iter().enumerate() {
            c.admit(s.clone(), i as u64).unwrap();
            prop_assert!(c.check_acyclic(), "after {} admissions", i + 1);
        }
        Ok(())
    })
}
