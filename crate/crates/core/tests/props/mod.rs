//! Randomized invariant suites. The `properties` test target runs each one;
//! the acceptance run in the bench crate includes this module too.

#![allow(dead_code)]

use std::fmt::Debug;

use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub mod circuit;
pub mod domain;
pub mod engine;
pub mod join;
pub mod rules;
pub mod signal;
pub mod store;

pub type Outcome = Result<(), String>;

/// Run `test` on `cases` generated inputs with a fixed seed.
pub fn check<S>(cases: u32, strat: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S: Strategy,
    S::Value: Debug,
{
    let cfg = Config { cases, failure_persistence: None, max_global_rejects: cases * 50, ..Config::default() };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(cfg, rng);
    runner.run(&strat, test).map_err(|e| e.to_string())
}

pub struct Suite {
    pub name: &'static str,
    pub run: fn(u32) -> Outcome,
}

pub fn all() -> Vec<Suite> {
    vec![
        Suite { name: "store persistence", run: store::persistence },
        Suite { name: "store scan order", run: store::scan_order },
        Suite { name: "store branch equivalence", run: store::branch_equivalence },
        Suite { name: "value order", run: store::value_order },
        Suite { name: "domain partition", run: domain::partition },
        Suite { name: "domain monotone labels", run: domain::monotone_labels },
        Suite { name: "signal version immutability", run: signal::immutability },
        Suite { name: "signal version composition", run: signal::composition },
        Suite { name: "sens coalescing membership", run: signal::coalescing },
        Suite { name: "sens monotonicity", run: signal::sens_monotone },
        Suite { name: "parse/print round trip", run: rules::round_trip },
        Suite { name: "join vs naive", run: join::naive_equivalence },
        Suite { name: "maintenance vs re-evaluation", run: join::maintenance },
        Suite { name: "untouched sensitivities", run: join::soundness },
        Suite { name: "merge partition and precedence", run: circuit::merge_partition },
        Suite { name: "merge conservation", run: circuit::merge_conservation },
        Suite { name: "corr idempotence", run: circuit::corr_idempotence },
        Suite { name: "information flow", run: circuit::information_flow },
        Suite { name: "engine serial equivalence", run: engine::serial_equivalence },
        Suite { name: "engine acyclic priorities", run: engine::acyclic_priorities },
    ]
}
