//! Seeded workload generators.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use txrepair::domain::{Decomposition, DomainPoint};
use txrepair::pstore::{DbVersion, PredicateSig, Schema, Value, ValueType::*};
use txrepair::rulelang::{Program, RuleError, TempSig};
use txrepair::txn::TxnSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WorkloadKind {
    /// Inventory adjustments over random subsets of skus.
    Sku,
    /// Transaction `i` reads counter `i` and writes counter `i + 1`.
    CounterChain,
    /// Every transaction increments the same counter.
    SharedCounter,
    /// Transfers, read-only checks and constraints over a small schema.
    RandomRules,
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sku" => WorkloadKind::Sku,
            "counter_chain" => WorkloadKind::CounterChain,
            "shared_counter" => WorkloadKind::SharedCounter,
            "random_rules" => WorkloadKind::RandomRules,
            _ => return Err(format!("unknown workload `{s}`")),
        })
    }
}

impl WorkloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::Sku => "sku",
            WorkloadKind::CounterChain => "counter_chain",
            WorkloadKind::SharedCounter => "shared_counter",
            WorkloadKind::RandomRules => "random_rules",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    /// Number of skus, counters or accounts.
    pub n: usize,
    /// Conflict intensity: each sku is in a transaction with probability
    /// `alpha / sqrt(n)`.
    pub alpha: f64,
    pub txns: usize,
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn sku_probability(&self) -> f64 {
        (self.alpha / (self.n as f64).sqrt()).min(1.0)
    }
}

/// One generated transaction.
#[derive(Clone, Debug)]
pub struct TxnSource {
    pub spec: Arc<TxnSpec>,
    /// Sku adjustments, for workloads that have them.
    pub adjust: Vec<(i64, i64)>,
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub config: WorkloadConfig,
    pub schema: Arc<Schema>,
    pub db: DbVersion,
    pub txns: Vec<TxnSource>,
}

impl Workload {
    pub fn specs(&self) -> Vec<Arc<TxnSpec>> {
        self.txns.iter().map(|t| t.spec.clone()).collect()
    }

    /// A decomposition of height `h` from the initial database's keys.
    pub fn decomposition(&self, h: usize) -> Decomposition {
        let pts = self.db.records().map(|(p, k, _)| DomainPoint::key(p, k)).collect();
        Decomposition::from_samples(pts, h)
    }
}

pub const SKU_RULES: &str = "^inventory[s]=q <- adj(s, d), inventory@start[s]=p, q = p + d.";

pub fn sku_schema() -> Arc<Schema> {
    Arc::new(Schema::new(vec![PredicateSig::function("inventory", &[Int], Int)]).expect("valid schema"))
}

pub fn counter_schema() -> Arc<Schema> {
    Arc::new(Schema::new(vec![PredicateSig::function("counter", &[Int], Int)]).expect("valid schema"))
}

pub fn bank_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            PredicateSig::function("bal", &[Int], Int),
            PredicateSig::function("lim", &[Int], Int),
            PredicateSig::relation("flag", &[Int]),
            PredicateSig::relation("audit", &[Int, Int]),
        ])
        .expect("valid schema"),
    )
}

pub fn gen_workload(cfg: &WorkloadConfig) -> Result<Workload, RuleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.kind {
        WorkloadKind::Sku => gen_sku(cfg, &mut rng),
        WorkloadKind::CounterChain | WorkloadKind::SharedCounter => gen_counters(cfg),
        WorkloadKind::RandomRules => gen_random(cfg, &mut rng),
    }
}

fn gen_sku(cfg: &WorkloadConfig, rng: &mut ChaCha8Rng) -> Result<Workload, RuleError> {
    let schema = sku_schema();
    let mut db = DbVersion::empty(schema.clone());
    let inv = db.pred_id("inventory")?;
    for s in 0..cfg.n as i64 {
        db.upsert(inv, vec![Value::Int(s)], vec![Value::Int(1000)])?;
    }
    let adj = TempSig { name: "adj".into(), key_arity: 2, func: false };
    let program = Arc::new(Program::compile_with_inputs(schema.clone(), SKU_RULES, &HashMap::new(), &[adj])?);
    let tid = program.temp_id("adj").expect("declared input");
    let p = cfg.sku_probability();
    let mut txns = Vec::with_capacity(cfg.txns);
    for _ in 0..cfg.txns {
        let mut adjust = Vec::new();
        for s in 0..cfg.n as i64 {
            if p > 0.0 && rng.gen_bool(p) {
                adjust.push((s, rng.gen_range(-3..=3)));
            }
        }
        let facts = adjust.iter().map(|(s, d)| (tid, vec![Value::Int(*s), Value::Int(*d)])).collect();
        txns.push(TxnSource { spec: Arc::new(TxnSpec::with_facts(program.clone(), facts)), adjust });
    }
    Ok(Workload { config: cfg.clone(), schema, db, txns })
}

pub const CHAIN_RULES: &str = "^counter[$next]=y <- counter@start[$cur]=z, y = z + 1.";

fn gen_counters(cfg: &WorkloadConfig) -> Result<Workload, RuleError> {
    let schema = counter_schema();
    let mut db = DbVersion::empty(schema.clone());
    let c = db.pred_id("counter")?;
    let slots = cfg.txns.max(cfg.n) as i64 + 1;
    for i in 0..slots {
        db.upsert(c, vec![Value::Int(i)], vec![Value::Int(0)])?;
    }
    let mut txns = Vec::with_capacity(cfg.txns);
    for i in 0..cfg.txns as i64 {
        let (cur, next) = match cfg.kind {
            WorkloadKind::CounterChain => (i, i + 1),
            _ => (0, 0),
        };
        let params = HashMap::from([("cur".to_string(), Value::Int(cur)), ("next".to_string(), Value::Int(next))]);
        let spec = TxnSpec::compile(schema.clone(), CHAIN_RULES, &params)?;
        txns.push(TxnSource { spec: Arc::new(spec), adjust: Vec::new() });
    }
    Ok(Workload { config: cfg.clone(), schema, db, txns })
}

/// Transaction templates for the mixed workload. `$a`, `$b` are accounts,
/// `$m` an amount.
pub const TEMPLATES: [&str; 9] = [
    // transfer with overdraft constraint
    "^bal[$a]=x, ^bal[$b]=y <- bal@start[$a]=p, bal@start[$b]=q, x = p - $m, y = q + $m.\n\
     false <- bal[$a]=x, x < 0.",
    // deposit bounded by the account limit
    "^bal[$a]=y <- bal@start[$a]=x, y = x + $m.\nfalse <- bal[$a]=y, lim@start[$a]=l, y > l.",
    // read-only constraint check
    "false <- bal@start[$a]=x, x < $m.",
    // read-only local query over a range
    "rich(a) <- bal@start[a]=x, x > $m.",
    // flag every account under a threshold
    "^flag(a) <- bal@start[a]=x, x < $m.",
    // clear a flag if the other account is funded
    "-flag($a) <- flag@start($a), bal@start[$b]=x, x > $m.",
    // audit unflagged accounts
    "^audit($a, x) <- bal@start[$a]=x, !flag@start($a).",
    // raise a limit from the end state of the balance
    "^lim[$a]=l <- lim@start[$a]=k, bal[$a]=x, l = k + x, l > k.",
    // move a balance into the smallest-numbered flagged account
    "^bal[a]=y, -flag(a) <- flag@start(a), a < $a, bal@start[a]=x, y = x + $m.",
];

fn gen_random(cfg: &WorkloadConfig, rng: &mut ChaCha8Rng) -> Result<Workload, RuleError> {
    let schema = bank_schema();
    let mut db = DbVersion::empty(schema.clone());
    let n = cfg.n.clamp(2, 64) as i64;
    let (bal, lim, flag) = (db.pred_id("bal")?, db.pred_id("lim")?, db.pred_id("flag")?);
    for a in 0..n {
        if rng.gen_bool(0.9) {
            db.upsert(bal, vec![Value::Int(a)], vec![Value::Int(rng.gen_range(0..20))])?;
        }
        db.upsert(lim, vec![Value::Int(a)], vec![Value::Int(rng.gen_range(10..40))])?;
        if rng.gen_bool(0.2) {
            db.upsert(flag, vec![Value::Int(a)], vec![])?;
        }
    }
    let accounts: Vec<i64> = (0..n).collect();
    let mut txns = Vec::with_capacity(cfg.txns);
    for _ in 0..cfg.txns {
        let src = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let pick: Vec<&i64> = accounts.choose_multiple(rng, 2).collect();
        let params = HashMap::from([
            ("a".to_string(), Value::Int(*pick[0])),
            ("b".to_string(), Value::Int(*pick[1])),
            ("m".to_string(), Value::Int(rng.gen_range(1..12))),
        ]);
        let spec = TxnSpec::compile(schema.clone(), src, &params)?;
        txns.push(TxnSource { spec: Arc::new(spec), adjust: Vec::new() });
    }
    Ok(Workload { config: cfg.clone(), schema, db, txns })
}

/// Mean number of skus shared by `pairs` random pairs of transactions.
pub fn mean_common_skus(w: &Workload, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<std::collections::BTreeSet<i64>> =
        w.txns.iter().map(|t| t.adjust.iter().map(|(s, _)| *s).collect()).collect();
    let mut total = 0usize;
    for _ in 0..pairs {
        let i = rng.gen_range(0..sets.len());
        let mut j = rng.gen_range(0..sets.len() - 1);
        if j >= i {
            j += 1;
        }
        total += sets[i].intersection(&sets[j]).count();
    }
    total as f64 / pairs as f64
}
