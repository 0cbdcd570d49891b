//! Command-line front end: run one solver, compare several on a shared
//! instance, execute benchmark suites, or run the verification suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lowrank::checks;
use lowrank::driver::{
    self, Alpha0Policy, Implementation, OutputSpec, RunConfig, Solver, StopRule,
};
use lowrank::problems::{InstanceSpec, StartPoint};
use lowrank::LineSearchParamsF64;

#[derive(Parser)]
#[command(
    name = "lowrank",
    version,
    about = "First-order optimization over bounded-rank matrix varieties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver configuration and write trace/summary artifacts.
    Solve {
        /// Path to a JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configurations on one shared instance side by side.
    Compare {
        /// Paths to JSON run configurations (at least two).
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Directory for the comparison artifacts.
        #[arg(long, default_value = "compare-out")]
        out: PathBuf,
    },
    /// Run a named benchmark suite (table1, completion, apocalypse).
    Bench {
        #[arg(long)]
        suite: String,
        /// Instance seed; the apocalypse suite is deterministic and
        /// ignores it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional directory for the suite's artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites; `invariants` runs all of them.
    Check {
        #[arg(long, default_value = "invariants")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Solve { config, out } => solve(&config, out.as_deref()),
        Command::Compare { configs, out } => compare(&configs, &out),
        Command::Bench { suite, seed, out } => bench(&suite, seed, out.as_deref()),
        Command::Check { suite, seed } => check(&suite, seed),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn print_run(config: &RunConfig, summary: &driver::RunSummary) {
    println!(
        "{}/{:?}: {:?} after {} iterations, f = {:.6e}, stationarity = {:.3e} (eps {:.3e})",
        config.solver.name(),
        config.implementation,
        summary.termination,
        summary.iterations,
        summary.final_f,
        summary.final_stationarity,
        summary.eps_stationarity,
    );
}

fn solve(config_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let mut config = load_config(config_path)?;
    if let Some(dir) = out {
        config.output.dir = Some(dir.to_string_lossy().into_owned());
    }
    if config.output.dir.is_none() {
        config.output.dir = Some("run-out".into());
    }
    let outcome = driver::execute(&config)?;
    let summary = driver::summarize(&config, &outcome);
    if config.output.verbosity >= 2 {
        for rec in &outcome.records {
            println!(
                "  i={:<5} f={:.9e} s={:.3e} rank={} alpha={:.3} backtracks={}{}",
                rec.i,
                rec.f_value,
                rec.stationarity,
                rec.rank,
                rec.accepted_alpha,
                rec.backtracks,
                if rec.rank_reduction_taken { " [rank-]" } else { "" },
            );
        }
    }
    print_run(&config, &summary);
    println!("artifacts in {}", config.output.dir.as_deref().unwrap());
    Ok(ExitCode::SUCCESS)
}

fn compare(config_paths: &[PathBuf], out: &Path) -> Result<ExitCode> {
    let mut configs = Vec::new();
    for path in config_paths {
        let mut config = load_config(path)?;
        // Artifacts are centralized under the comparison directory.
        config.output = OutputSpec::default();
        configs.push(config);
    }
    let outcomes = driver::execute_compare(&configs, out)?;
    let summaries: Vec<driver::RunSummary> = configs
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| driver::summarize(c, o))
        .collect();
    for (config, summary) in configs.iter().zip(&summaries) {
        print_run(config, summary);
    }
    let rows: Vec<(&RunConfig, &driver::RunSummary)> =
        configs.iter().zip(summaries.iter()).collect();
    print!("{}", driver::table1_csv(&rows));
    println!("artifacts in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn base_config(solver: Solver, instance: InstanceSpec, max_iters: usize) -> RunConfig {
    RunConfig {
        solver,
        implementation: Implementation::Reference,
        params: LineSearchParamsF64::default(),
        alpha0: Alpha0Policy::Constant,
        stop: StopRule {
            eps_stationarity: None,
            max_iters,
            max_wall_time: None,
        },
        instance,
        output: OutputSpec::default(),
    }
}

fn bench(suite: &str, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let configs: Vec<RunConfig> = match suite {
        // Every solver on one ill-conditioned instance whose trailing
        // singular values sit below the rank-reduction threshold, so the
        // guarded branches and their operation counts all come into play.
        "table1" => {
            let instance = InstanceSpec::TargetLeastSquares {
                m: 30,
                n: 30,
                target_rank: 3,
                rank_bound: 3,
                seed,
                spectrum: Some(vec![1.0, 0.08, 0.05]),
                start: StartPoint::RandomRankR,
            };
            [Solver::Rfd, Solver::Rfdr, Solver::P2gd, Solver::P2gdr]
                .into_iter()
                .map(|s| {
                    let mut c = base_config(s, instance.clone(), 300);
                    c.implementation = Implementation::Detailed;
                    c
                })
                .collect()
        }
        // Planted matrix completion at moderate scale.
        "completion" => {
            let instance = InstanceSpec::MatrixCompletion {
                m: 60,
                n: 60,
                planted_rank: 4,
                rank_bound: 4,
                mask_density: 0.5,
                seed,
                spectrum: None,
                start: StartPoint::Zero,
            };
            vec![
                base_config(Solver::Rfdr, instance.clone(), 5000),
                base_config(Solver::P2gdr, instance, 5000),
            ]
        }
        // The stalling construction: plain descent flatlines while the
        // rank-reducing variant escapes.
        "apocalypse" => {
            let instance = InstanceSpec::Apocalypse {
                rank_bound: 2,
                initial_scale: 0.5,
            };
            vec![
                base_config(Solver::Rfd, instance.clone(), 2000),
                base_config(Solver::Rfdr, instance, 2000),
            ]
        }
        other => bail!("unknown bench suite {other:?}; available: table1, completion, apocalypse"),
    };

    let outcomes = match out {
        Some(dir) => driver::execute_compare(&configs, dir)?,
        None => driver::compare::<f64>(&configs)?,
    };
    let summaries: Vec<driver::RunSummary> = configs
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| driver::summarize(c, o))
        .collect();
    for (config, summary) in configs.iter().zip(&summaries) {
        print_run(config, summary);
    }
    let rows: Vec<(&RunConfig, &driver::RunSummary)> =
        configs.iter().zip(summaries.iter()).collect();
    print!("{}", driver::table1_csv(&rows));

    if suite == "apocalypse" {
        let trailing = |records: &[driver::IterationRecord]| {
            records
                .iter()
                .rev()
                .take(100)
                .map(|r| r.stationarity)
                .fold(f64::INFINITY, f64::min)
        };
        let rfd_tail = trailing(&outcomes[0].records);
        let rfdr_tail = trailing(&outcomes[1].records);
        let reductions = outcomes[1]
            .records
            .iter()
            .filter(|r| r.rank_reduction_taken)
            .count();
        println!(
            "trailing stationarity: rfd {rfd_tail:.3e}, rfdr {rfdr_tail:.3e} \
             (ratio {:.1e}), rank reductions taken: {reductions}",
            rfd_tail / rfdr_tail.max(f64::MIN_POSITIVE),
        );
    }
    if let Some(dir) = out {
        println!("artifacts in {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn check(suite: &str, seed: u64) -> Result<ExitCode> {
    let reports = match suite {
        "invariants" => checks::run_all(seed),
        "projections" => vec![checks::check_projections(500, seed)],
        "inequalities" => vec![checks::check_inequalities(10_000, seed)],
        "linesearch" => vec![checks::check_line_search(1_000, seed)],
        "gradients" => vec![checks::check_gradients(seed)],
        "optimality" => vec![checks::check_restricted_optimality(20, 500, seed)],
        other => bail!(
            "unknown check suite {other:?}; available: invariants, projections, \
             inequalities, linesearch, gradients, optimality"
        ),
    };
    let mut ok = true;
    for report in &reports {
        println!("{}", report.summary_line());
        for note in &report.notes {
            println!("    {note}");
        }
        ok &= report.passed();
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
