use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use txrepair::engine::CommitStrategy;
use txrepair_bench::{
    gen_workload, oracle, outcome_hash, run_lock_baseline, run_repair, state_hash, first_divergence, RepairOptions,
    RunReport, WorkloadConfig, WorkloadKind,
};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Strategy {
    Simple,
    Padded,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Executor {
    Repair,
    Locks,
    Both,
}

/// Run a workload through the repair engine and/or the row-locking baseline.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// sku, counter_chain, shared_counter or random_rules.
    #[arg(long, default_value = "sku")]
    workload: WorkloadKind,
    /// Number of skus / counters / accounts.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    txns: usize,
    /// Comma-separated worker counts; speedup is relative to the first.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "simple")]
    commit_strategy: Strategy,
    /// Height of the domain decomposition.
    #[arg(long, default_value_t = 2)]
    height: usize,
    /// Largest transaction tree height.
    #[arg(long, default_value_t = 12)]
    max_tree_height: usize,
    #[arg(long, value_enum, default_value = "repair")]
    executor: Executor,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<std::path::PathBuf>,
    /// Check every run against the serial oracle.
    #[arg(long)]
    verify: bool,
    /// Print engine metrics as JSON lines on stderr.
    #[arg(long)]
    metrics_json: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = WorkloadConfig { kind: args.workload, n: args.n, alpha: args.alpha, txns: args.txns, seed: args.seed };
    let w = match gen_workload(&cfg) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("workload: {e}");
            return ExitCode::from(2);
        }
    };
    let expected = args.verify.then(|| oracle(&w));
    let mut rows: Vec<RunReport> = Vec::new();
    let mut ok = true;
    let mut run = |label: &str, workers: usize, seconds: f64, db: &txrepair::pstore::DbVersion, aborted: &[bool], refreshes: (u64, u64), base: &mut Option<f64>| {
        let throughput = w.txns.len() as f64 / seconds.max(1e-9);
        let speedup = throughput / *base.get_or_insert(throughput);
        let verified = expected.as_ref().map(|(want, want_ab)| {
            let same = db.same_contents(want) && (label.ends_with("locks") || aborted == want_ab.as_slice());
            if !same {
                eprintln!("{label} with {workers} workers diverges from the serial oracle");
                if let Some(d) = first_divergence(db, want) {
                    eprintln!("{d}");
                }
            }
            same
        });
        ok &= verified.unwrap_or(true);
        rows.push(RunReport {
            workload: label.to_string(),
            alpha: cfg.alpha,
            workers,
            txns: w.txns.len(),
            seconds,
            throughput,
            speedup,
            txn_refreshes: refreshes.0,
            op_refreshes: refreshes.1,
            aborted: aborted.iter().filter(|a| **a).count(),
            state_hash: state_hash(db),
            outcome_hash: outcome_hash(aborted),
            verified,
            metrics: None,
        });
    };
    let name = cfg.kind.name();
    if args.executor != Executor::Locks {
        let mut base = None;
        for &workers in &args.workers {
            let opt = RepairOptions {
                workers,
                commit: match args.commit_strategy {
                    Strategy::Simple => CommitStrategy::Simple,
                    Strategy::Padded => CommitStrategy::Padded,
                },
                decomposition_height: args.height,
                max_height: args.max_tree_height,
                ..RepairOptions::default()
            };
            let r = match run_repair(&w, &opt) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("engine: {e}");
                    return ExitCode::from(2);
                }
            };
            if args.metrics_json {
                eprintln!("{}", serde_json::to_string(&r.metrics).expect("metrics serialize"));
            }
            let refreshes = (r.metrics.txn_refreshes, r.metrics.total_op_refreshes());
            run(name, workers, r.seconds, &r.db, &r.aborted, refreshes, &mut base);
        }
    }
    if args.executor != Executor::Repair {
        if cfg.kind != WorkloadKind::Sku {
            eprintln!("the locking baseline only runs the sku workload");
            return ExitCode::from(2);
        }
        let mut base = None;
        for &workers in &args.workers {
            let r = run_lock_baseline(&w, workers);
            let aborted = vec![false; w.txns.len()];
            run(&format!("{name}:locks"), workers, r.seconds, &r.db, &aborted, (0, 0), &mut base);
        }
    }
    let mut out = String::from(RunReport::CSV_HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    match &args.csv {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &out) {
                eprintln!("{}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => {
            let _ = std::io::stdout().write_all(out.as_bytes());
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
