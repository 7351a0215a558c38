//! Transaction repair: serializable execution of many concurrent transactions
//! without locks.
//!
//! Every transaction runs against a corrected view of the database. When an
//! earlier transaction changes something a later one read, the later one is
//! incrementally repaired instead of aborted. The pieces, bottom up:
//!
//! - [`pstore`]: persistent ordered maps and database versions.
//! - [`domain`]: the ordered key domain and its binary decomposition.
//! - [`signal`]: versioned record sets with cheap change enumeration.
//! - [`rulelang`]: the rule language transactions are written in.
//! - [`lftj`]: leapfrog triejoin evaluation of rule bodies.
//! - [`inclftj`]: sensitivity indices and incremental rule maintenance.
//! - [`txn`]: a transaction as a repairable operator.
//! - [`circuit`]: the merge and correction operators wiring transactions.
//! - [`engine`]: scheduling, finalization and commit.

pub mod circuit;
pub mod domain;
pub mod engine;
pub mod inclftj;
pub mod lftj;
pub mod pstore;
pub mod rulelang;
pub mod signal;
pub mod txn;

#[cfg(any(test, feature = "testkit"))]
#[doc(hidden)]
pub mod testkit;
