use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use codir::config::{Method, RunConfig};
use codir::pipeline::{self, RunDir};
use codir::retrieval::Query;
use codir::Error;

#[derive(Parser)]
#[command(name = "codir", version, about = "Composable distance-based representations from Fisher IPM critics")]
struct Cli {
    /// Run configuration (`key = value` lines); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory holding artifacts and reports.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Codir,
    Bxent,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Train the critic (codir) or the cross-entropy baseline (bxent).
    Train {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Fit templates and per-class thresholds.
    Fit,
    /// Evaluate classification on the test split.
    Eval,
    /// Write the representation of every sample.
    DumpReps,
    /// Nearest-neighbour and modified nearest-neighbour retrieval.
    Retrieve,
    /// Apply the class swap of every retrieval query; optionally report one
    /// swap in full.
    Compose {
        #[arg(long, requires_all = ["c_plus", "c_minus"])]
        ref_id: Option<usize>,
        #[arg(long)]
        c_plus: Option<usize>,
        #[arg(long)]
        c_minus: Option<usize>,
    },
    /// Compress test representations to rank k.
    Compress {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Rank of the stacked test representations.
    Rank {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Logistic probes for a held-out context label.
    Probe {
        #[arg(long)]
        label: Option<usize>,
    },
    /// Finite-difference gradient checks on tiny models.
    Gradcheck,
    /// Every step from gen to probe.
    All,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Dependency { .. } => 3,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let dir = RunDir::new(&cli.run_dir);
    match &cli.command {
        Command::Gen => {
            let ds = pipeline::gen(&cfg, &dir)?;
            println!("generated {} samples -> {}", ds.len(), dir.dataset().display());
        }
        Command::Train { method } => {
            let method = match method {
                Some(MethodArg::Codir) => Method::Codir,
                Some(MethodArg::Bxent) => Method::Bxent,
                None => cfg.method,
            };
            let s = pipeline::train(&cfg, &dir, method)?;
            println!("trained {}: final epoch loss {:.6}", method.name(), s.final_loss);
            if let Some((before, after)) = s.val_numerator {
                println!("validation IPM numerator {before:.6} -> {after:.6}");
            }
        }
        Command::Fit => {
            let s = pipeline::fit(&cfg, &dir)?;
            println!(
                "templates from {} samples, thresholds from {}",
                s.template_samples, s.threshold_samples
            );
            if !s.absent_classes.is_empty() {
                println!("classes without positives in the threshold split: {:?}", s.absent_classes);
            }
        }
        Command::Eval => {
            let s = pipeline::eval(&cfg, &dir)?;
            println!("codir       F1 {:.4}", s.codir.f1);
            println!("c-codir({}) F1 {:.4}", s.k, s.compressed.f1);
            println!("all-labels  F1 {:.4}", s.all_labels.f1);
            if let Some(b) = &s.bxent {
                println!("bxent       F1 {:.4}", b.f1);
            }
        }
        Command::DumpReps => {
            let n = pipeline::dump_reps(&cfg, &dir)?;
            println!("wrote {n} representations -> {}", dir.reps().display());
        }
        Command::Retrieve => {
            let s = pipeline::retrieve(&cfg, &dir)?;
            println!("{} queries", s.queries);
            println!("{}", codir::retrieval::RetrievalReport::CSV_HEADER);
            println!("{}", s.codir.csv_row("codir"));
            println!("{}", s.random.csv_row("random"));
            if let Some(sem) = &s.sem {
                println!("{}", sem.csv_row("bxent-sem"));
            }
        }
        Command::Compose { ref_id, c_plus, c_minus } => {
            let demo = ref_id.map(|ref_id| Query {
                ref_id,
                c_plus: c_plus.expect("required by clap"),
                c_minus: c_minus.expect("required by clap"),
            });
            let s = pipeline::compose(&cfg, &dir, demo)?;
            println!(
                "{} swaps: mean change of cos to T[c-] {:+.4}, to T[c+] {:+.4}",
                s.swaps, s.mean_minus_delta, s.mean_plus_delta
            );
            if let Some(e) = s.demo {
                println!("class,cos_before,cos_after");
                for (i, (b, a)) in e.before.iter().zip(&e.after).enumerate() {
                    println!("{i},{b:.4},{a:.4}");
                }
            }
        }
        Command::Compress { k } => {
            let s = pipeline::compress_step(&cfg, &dir, k.unwrap_or(cfg.k))?;
            println!(
                "k={} storage {:.2}% ({} values), relative error {:.3e}, F1 {:.4} (uncompressed {:.4})",
                s.k,
                100.0 * s.storage_ratio,
                s.storage_count,
                s.mean_rel_error,
                s.f1,
                s.f1_uncompressed
            );
        }
        Command::Rank { rows, cols } => {
            let s = pipeline::rank(&cfg, &dir, rows.unwrap_or(cfg.rank_rows), cols.unwrap_or(cfg.rank_cols))?;
            println!(
                "rank of {} representations stacked {}x{}: {} (rows+cols = {})",
                s.samples,
                s.rows,
                s.cols,
                s.rank,
                s.rows + s.cols
            );
        }
        Command::Probe { label } => {
            let s = pipeline::probe_step(&cfg, &dir, *label)?;
            println!("context label {}", s.label);
            for (name, _) in &s.results {
                println!("{name:<16} F1 {:.4}", s.mean_f1(name).unwrap_or(f64::NAN));
            }
            for (name, c) in &s.chance {
                println!("{:<16} chance F1 {c:.4}", name);
            }
        }
        Command::Gradcheck => {
            let rows = pipeline::gradcheck(&cfg, &dir)?;
            let mut failed = false;
            for r in &rows {
                println!(
                    "{:<24} checked {:>4} max rel error {:.3e} (tol {:.0e}) {}",
                    r.name,
                    r.checked,
                    r.max_rel_error,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                failed |= !r.passed();
            }
            if failed {
                return Err(Error::NonFinite("gradient check exceeded its tolerance".into()));
            }
        }
        Command::All => {
            pipeline::run_all(&cfg, &dir)?;
            println!("pipeline complete -> {}", dir.root().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
