//! Iterative solver runs: configuration, the iteration loop, trace and
//! summary artifacts, and side-by-side comparisons of several solvers on
//! one instance.
//!
//! A run is deterministic given its config: the instance is seeded, the
//! maps are pure, and wall-clock time never enters the per-iteration
//! records (it is reported only in summaries).

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones;
use crate::detailed::{
    detailed_p2gd, detailed_p2gdr, detailed_rfd, detailed_rfdr, detailed_zero_input, OpCounter,
};
use crate::error::{DriverError, StepError};
use crate::factored::{FactoredMatrix, RankPolicy};
use crate::io::FactoredParts;
use crate::maps::{
    p2gd_step, p2gdr_step, rfd_step, rfdr_step, tally_projection_svds, LineSearchParams,
};
use crate::problems::{InstanceSpec, Objective};
use crate::{conv, to_f64, Scalar};

/// Which iteration map drives the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Rfd,
    Rfdr,
    P2gd,
    P2gdr,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Rfd => "rfd",
            Solver::Rfdr => "rfdr",
            Solver::P2gd => "p2gd",
            Solver::P2gdr => "p2gdr",
        }
    }
}

/// Dense-ambient reference maps or the factored implementations with full
/// operation accounting. Both produce the same iterates up to roundoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    #[default]
    Reference,
    Detailed,
}

/// How the initial trial step of each iteration is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha0Policy {
    /// Always start from `alpha_hi`. Default; keeps runs reproducible and
    /// matches the single-step-size signature of the factored algorithms.
    #[default]
    Constant,
    /// Start from the previously accepted step, clipped to
    /// `[alpha_lo, alpha_hi]`; warm-starts the search after backtracks.
    PreviousClipped,
}

/// Stopping rule. The stationarity guard replaces an exact-zero test,
/// which floating point would never satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    /// Stationarity tolerance; when absent, `1e-8 * (1 + ‖∇f(X₀)‖)` is
    /// derived from the instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_stationarity: Option<f64>,
    /// Hard cap on iterations; must be at least 1.
    pub max_iters: usize,
    /// Optional wall-clock budget in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_time: Option<f64>,
}

/// Where (and how loudly) a run reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for `trace.jsonl` and `summary.json`; nothing is written
    /// when absent. Created if missing.
    pub dir: Option<String>,
    /// Also emit `table1.csv` with the operation-count table.
    pub table1: bool,
    /// Also emit `stationarity.svg` with the per-iteration measure.
    pub stationarity_svg: bool,
    /// 0 = silent, 1 = summary line, 2 = per-iteration lines (CLI only).
    pub verbosity: u8,
}

/// Everything one run needs, serializable as a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: Solver,
    #[serde(default)]
    pub implementation: Implementation,
    #[serde(default)]
    pub params: LineSearchParams<f64>,
    #[serde(default)]
    pub alpha0: Alpha0Policy,
    pub stop: StopRule,
    pub instance: InstanceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        self.params.validate()?;
        if self.stop.max_iters < 1 {
            return Err(DriverError::InvalidConfig(
                "stop.max_iters must be at least 1".into(),
            ));
        }
        if let Some(eps) = self.stop.eps_stationarity {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(DriverError::InvalidConfig(format!(
                    "stop.eps_stationarity must be positive and finite, got {eps}"
                )));
            }
        }
        if let Some(t) = self.stop.max_wall_time {
            if !(t.is_finite() && t >= 0.0) {
                return Err(DriverError::InvalidConfig(format!(
                    "stop.max_wall_time must be nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the trace: the state of iterate `i` plus the step taken
/// from it. Terminal rows (no step) carry `accepted_alpha = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub i: usize,
    pub f_value: f64,
    pub stationarity: f64,
    pub rank: usize,
    /// `σ_r` of the iterate when it has full rank `r`, else 0; the value
    /// the rank-reduction guards compare against Δ.
    pub sigma_min_of_rank_r: f64,
    pub accepted_alpha: f64,
    pub backtracks: u32,
    pub rank_reduction_taken: bool,
    /// Cumulative operation counters after this iteration's step.
    pub counters: OpCounter,
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    StationarityReached,
    MaxIterations,
    WallTimeExceeded,
    /// A step was accepted but could not decrease `f` in floating point;
    /// continuing would loop without progress.
    DecreaseFloor,
}

/// Result of one run.
#[derive(Clone, Debug)]
pub struct RunOutcome<T: Scalar> {
    pub final_point: FactoredMatrix<T>,
    pub records: Vec<IterationRecord>,
    pub termination: TerminationReason,
    /// The stationarity tolerance actually used (explicit or derived).
    pub eps: f64,
    /// Work spent on the driver's own stop checks (one gradient and one
    /// projection tally per iteration), kept out of the maps' counters.
    pub overhead: OpCounter,
    pub wall_time: Duration,
}

impl<T: Scalar> RunOutcome<T> {
    /// Cumulative counters of all steps, excluding driver overhead.
    pub fn total_counters(&self) -> OpCounter {
        self.records.last().map(|r| r.counters).unwrap_or_default()
    }

    /// Index of the last iterate reached, which equals the number of
    /// completed steps.
    pub fn iterations(&self) -> usize {
        self.records.last().map(|r| r.i).unwrap_or(0)
    }

    pub fn final_f(&self) -> f64 {
        self.records.last().map(|r| r.f_value).unwrap_or(f64::NAN)
    }

    pub fn final_stationarity(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.stationarity)
            .unwrap_or(f64::NAN)
    }
}

fn params_as<T: Scalar>(p: &LineSearchParams<f64>) -> LineSearchParams<T> {
    LineSearchParams {
        alpha_lo: conv(p.alpha_lo),
        alpha_hi: conv(p.alpha_hi),
        beta: conv(p.beta),
        c: conv(p.c),
        delta: conv(p.delta),
        max_backtracks: p.max_backtracks,
    }
}

/// Uniform view over the reference and detailed step outputs.
struct StepView<T: Scalar> {
    next: FactoredMatrix<T>,
    alpha: T,
    backtracks: u32,
    rank_reduction_taken: bool,
    counters: OpCounter,
    f_next: T,
}

#[allow(clippy::too_many_arguments)]
fn dispatch<T: Scalar>(
    solver: Solver,
    implementation: Implementation,
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<StepView<T>, StepError> {
    match implementation {
        Implementation::Reference => {
            let rep = match solver {
                Solver::Rfd => rfd_step(x, obj, r, params, alpha0, fx, policy)?,
                Solver::Rfdr => rfdr_step(x, obj, r, params, alpha0, fx, policy)?,
                Solver::P2gd => p2gd_step(x, obj, r, params, alpha0, fx, policy)?,
                Solver::P2gdr => p2gdr_step(x, obj, r, params, alpha0, fx, policy)?,
            };
            Ok(StepView {
                next: rep.next,
                alpha: rep.accepted_alpha,
                backtracks: rep.backtracks,
                rank_reduction_taken: rep.rank_reduction_taken,
                counters: rep.counters,
                f_next: rep.f_next,
            })
        }
        Implementation::Detailed => {
            // The plain factored maps require a nonzero foot; from the zero
            // matrix the dedicated zero-input algorithm is the step for
            // both direction choices (the cones coincide there).
            let out = match solver {
                Solver::Rfd | Solver::P2gd if x.rank() == 0 => {
                    detailed_zero_input(obj, r, params, alpha0, fx, policy)?
                }
                Solver::Rfd => detailed_rfd(x, obj, r, params, alpha0, fx, policy)?,
                Solver::P2gd => detailed_p2gd(x, obj, r, params, alpha0, fx, policy)?,
                Solver::Rfdr => detailed_rfdr(x, obj, r, params, alpha0, fx, policy)?,
                Solver::P2gdr => detailed_p2gdr(x, obj, r, params, alpha0, fx, policy)?,
            };
            Ok(StepView {
                next: out.next,
                alpha: out.accepted_alpha,
                backtracks: out.backtracks,
                rank_reduction_taken: out.rank_reduction_taken,
                counters: out.counters,
                f_next: out.f_next,
            })
        }
    }
}

fn sigma_min_of_rank_r<T: Scalar>(x: &FactoredMatrix<T>, r: usize) -> f64 {
    if x.rank() == r && r > 0 {
        to_f64(x.sigma_min())
    } else {
        0.0
    }
}

/// Runs the configured solver until the stationarity measure drops to the
/// tolerance, the iteration cap, or the wall-clock budget.
///
/// The stop check is evaluated before each step, so the final iterate's
/// state is always recorded; its cost is tracked in
/// [`RunOutcome::overhead`], never in the step counters.
pub fn run<T: Scalar>(config: &RunConfig) -> Result<RunOutcome<T>, DriverError> {
    config.validate()?;
    let built = config.instance.build::<T>()?;
    let obj = built.objective;
    let r = built.rank_bound;
    let params = params_as::<T>(&config.params);
    let policy = RankPolicy::<T>::default();
    let start = Instant::now();

    let mut x = built.initial;
    let mut f_x = obj.eval(&x.assemble());
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut cumulative = OpCounter::default();
    let mut overhead = OpCounter::default();
    let mut prev_alpha: Option<T> = None;
    let mut eps = config.stop.eps_stationarity.unwrap_or(f64::NAN);

    let step_err = |i: usize, f: f64, s: f64, e: StepError| DriverError::Step {
        iteration: i,
        f_value: f,
        stationarity: s,
        source: e,
    };

    let mut i = 0usize;
    let termination = loop {
        let g = obj.grad(&x.assemble());
        overhead.grad_evals += 1;
        tally_projection_svds(&mut overhead, &x, r);
        let s = to_f64(
            cones::stationarity_measure(&x, &g, r, &policy)
                .map_err(|e| step_err(i, to_f64(f_x), f64::NAN, e.into()))?,
        );
        if i == 0 && eps.is_nan() {
            eps = 1e-8 * (1.0 + to_f64(g.norm()));
        }

        let state = IterationRecord {
            i,
            f_value: to_f64(f_x),
            stationarity: s,
            rank: x.rank(),
            sigma_min_of_rank_r: sigma_min_of_rank_r(&x, r),
            accepted_alpha: 0.0,
            backtracks: 0,
            rank_reduction_taken: false,
            counters: cumulative,
        };

        if s <= eps {
            records.push(state);
            break TerminationReason::StationarityReached;
        }
        if let Some(budget) = config.stop.max_wall_time {
            if start.elapsed().as_secs_f64() > budget {
                records.push(state);
                break TerminationReason::WallTimeExceeded;
            }
        }
        if i >= config.stop.max_iters {
            records.push(state);
            break TerminationReason::MaxIterations;
        }

        let alpha0 = match config.alpha0 {
            Alpha0Policy::Constant => params.alpha_hi,
            Alpha0Policy::PreviousClipped => prev_alpha
                .map(|a| a.clamp(params.alpha_lo, params.alpha_hi))
                .unwrap_or(params.alpha_hi),
        };
        let step = dispatch(
            config.solver,
            config.implementation,
            &x,
            &obj,
            r,
            &params,
            alpha0,
            Some(f_x),
            &policy,
        )
        .map_err(|e| step_err(i, to_f64(f_x), s, e))?;
        cumulative.merge(&step.counters);

        records.push(IterationRecord {
            accepted_alpha: to_f64(step.alpha),
            backtracks: step.backtracks,
            rank_reduction_taken: step.rank_reduction_taken,
            counters: cumulative,
            ..state
        });

        if !(step.f_next < f_x) {
            // Accepted in the Armijo sense but indistinguishable in
            // floating point; the iterate is kept where it was.
            break TerminationReason::DecreaseFloor;
        }
        x = step.next;
        f_x = step.f_next;
        prev_alpha = Some(step.alpha);
        i += 1;
    };

    Ok(RunOutcome {
        final_point: x,
        records,
        termination,
        eps,
        overhead,
        wall_time: start.elapsed(),
    })
}

/// Runs several configs over one shared instance, in parallel when the
/// thread budget allows. `LOWRANK_THREADS` caps the worker count; unset or
/// unparsable means one worker per core.
pub fn compare<T: Scalar + Send + Sync>(
    configs: &[RunConfig],
) -> Result<Vec<RunOutcome<T>>, DriverError> {
    if configs.len() < 2 {
        return Err(DriverError::TooFewConfigs);
    }
    for (index, c) in configs.iter().enumerate().skip(1) {
        if c.instance != configs[0].instance {
            return Err(DriverError::InstanceMismatch { index });
        }
    }
    let threads = std::env::var("LOWRANK_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DriverError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| configs.par_iter().map(run::<T>).collect())
}

/// Condensed, serializable account of one finished run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub solver: Solver,
    pub implementation: Implementation,
    pub instance: InstanceSpec,
    pub termination: TerminationReason,
    pub eps_stationarity: f64,
    pub iterations: usize,
    pub final_f: f64,
    pub final_stationarity: f64,
    pub final_rank: usize,
    pub counters: OpCounter,
    pub overhead: OpCounter,
    pub wall_time_s: f64,
    pub final_point: FactoredParts,
}

pub fn summarize<T: Scalar>(config: &RunConfig, outcome: &RunOutcome<T>) -> RunSummary {
    RunSummary {
        solver: config.solver,
        implementation: config.implementation,
        instance: config.instance.clone(),
        termination: outcome.termination,
        eps_stationarity: outcome.eps,
        iterations: outcome.iterations(),
        final_f: outcome.final_f(),
        final_stationarity: outcome.final_stationarity(),
        final_rank: outcome.final_point.rank(),
        counters: outcome.total_counters(),
        overhead: outcome.overhead,
        wall_time_s: outcome.wall_time.as_secs_f64(),
        final_point: FactoredParts::from(&outcome.final_point),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DriverError {
    DriverError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes one record per line as JSON (a `trace.jsonl` artifact).
pub fn write_trace(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<(), DriverError> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>, DriverError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Operation-count table over several runs, one row per run: totals plus
/// per-iteration averages for the counter categories.
pub fn table1_csv(rows: &[(&RunConfig, &RunSummary)]) -> String {
    let mut out = String::from(
        "solver,implementation,iterations,grad_evals,f_evals,small_svds,large_svds,\
         pivoted_qrs,grad_per_iter,small_svds_per_iter,large_svds_per_iter,qrs_per_iter\n",
    );
    for (config, summary) in rows {
        let c = &summary.counters;
        let iters = summary.iterations.max(1) as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
            config.solver.name(),
            match config.implementation {
                Implementation::Reference => "reference",
                Implementation::Detailed => "detailed",
            },
            summary.iterations,
            c.grad_evals,
            c.f_evals,
            c.small_svds,
            c.large_svds,
            c.pivoted_qrs,
            c.grad_evals as f64 / iters,
            c.small_svds as f64 / iters,
            c.large_svds as f64 / iters,
            c.pivoted_qrs as f64 / iters,
        ));
    }
    out
}

/// Renders stationarity series on a log-scale SVG plot, one polyline per
/// labeled series.
pub fn stationarity_svg(series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const ML: f64 = 64.0; // left margin, room for tick labels
    const MR: f64 = 16.0;
    const MT: f64 = 20.0;
    const MB: f64 = 44.0;
    const PALETTE: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
    ];

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_len = 1usize;
    for (_, s) in series {
        max_len = max_len.max(s.len());
        for &v in s {
            if v > 0.0 && v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 1e-12;
        hi = 1.0;
    }
    let lo_exp = lo.log10().floor();
    let hi_exp = (hi.log10().ceil()).max(lo_exp + 1.0);
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let xmap = |i: usize| ML + plot_w * i as f64 / (max_len.max(2) - 1) as f64;
    let ymap = |v: f64| {
        let e = v.max(10f64.powf(lo_exp)).log10();
        MT + plot_h * (hi_exp - e) / (hi_exp - lo_exp)
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );

    // Horizontal grid at decade ticks.
    let mut e = lo_exp;
    while e <= hi_exp + 0.5 {
        let y = MT + plot_h * (hi_exp - e) / (hi_exp - lo_exp);
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" \
             text-anchor=\"end\">1e{:+}</text>\n",
            W - MR,
            ML - 6.0,
            y + 4.0,
            e as i32,
        ));
        e += 1.0;
    }
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"#333\"/>\n\
         <line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">iteration</text>\n",
        H - MB,
        H - MB,
        W - MR,
        H - MB,
        ML + plot_w / 2.0,
        H - 12.0,
    ));

    for (k, (label, s)) in series.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .iter()
            .enumerate()
            .map(|(idx, &v)| format!("{:.1},{:.1}", xmap(idx), ymap(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{}\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{label}</text>\n",
            points.join(" "),
            ML + 10.0,
            MT + 16.0 + 16.0 * k as f64,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Runs one config and, when an output directory is configured, writes
/// `trace.jsonl`, `summary.json`, and optionally `stationarity.svg`.
pub fn execute(config: &RunConfig) -> Result<RunOutcome<f64>, DriverError> {
    let outcome = run::<f64>(config)?;
    if let Some(dir) = &config.output.dir {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_trace(dir.join("trace.jsonl"), &outcome.records)?;
        let summary = summarize(config, &outcome);
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
            .map_err(|e| io_err(&path, e))?;
        if config.output.stationarity_svg {
            let series = vec![(
                config.solver.name().to_string(),
                outcome.records.iter().map(|r| r.stationarity).collect(),
            )];
            let path = dir.join("stationarity.svg");
            std::fs::write(&path, stationarity_svg(&series)).map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(outcome)
}

/// Runs a comparison and writes its artifacts (`trace_<k>.jsonl` per run,
/// `summary.json` with all runs, `table1.csv`, `stationarity.svg`) into
/// `dir`. The first config's output flags govern the optional files.
pub fn execute_compare(
    configs: &[RunConfig],
    dir: impl AsRef<Path>,
) -> Result<Vec<RunOutcome<f64>>, DriverError> {
    let outcomes = compare::<f64>(configs)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let summaries: Vec<RunSummary> = configs
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| summarize(c, o))
        .collect();
    for (k, outcome) in outcomes.iter().enumerate() {
        write_trace(dir.join(format!("trace_{k}.jsonl")), &outcome.records)?;
    }
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summaries)?)
        .map_err(|e| io_err(&path, e))?;

    let rows: Vec<(&RunConfig, &RunSummary)> = configs.iter().zip(summaries.iter()).collect();
    let path = dir.join("table1.csv");
    std::fs::write(&path, table1_csv(&rows)).map_err(|e| io_err(&path, e))?;

    let series: Vec<(String, Vec<f64>)> = configs
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| {
            (
                format!("{}/{:?}", c.solver.name(), c.implementation).to_lowercase(),
                o.records.iter().map(|r| r.stationarity).collect(),
            )
        })
        .collect();
    let path = dir.join("stationarity.svg");
    std::fs::write(&path, stationarity_svg(&series)).map_err(|e| io_err(&path, e))?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::StartPoint;

    fn least_squares_config(solver: Solver) -> RunConfig {
        RunConfig {
            solver,
            implementation: Implementation::Reference,
            params: LineSearchParams::default(),
            alpha0: Alpha0Policy::Constant,
            stop: StopRule {
                eps_stationarity: None,
                max_iters: 200,
                max_wall_time: None,
            },
            instance: InstanceSpec::TargetLeastSquares {
                m: 8,
                n: 6,
                target_rank: 2,
                rank_bound: 2,
                seed: 5,
                spectrum: None,
                start: StartPoint::Zero,
            },
            output: OutputSpec::default(),
        }
    }

    #[test]
    fn rfdr_reaches_the_planted_least_squares_target() {
        let config = least_squares_config(Solver::Rfdr);
        let outcome = run::<f64>(&config).unwrap();
        assert_eq!(outcome.termination, TerminationReason::StationarityReached);
        let f0 = outcome.records[0].f_value;
        assert!(outcome.final_f() <= 1e-12 * f0, "final f {}", outcome.final_f());
        assert!(outcome.final_stationarity() <= outcome.eps);
        assert!(outcome.final_point.rank() <= 2);
    }

    #[test]
    fn f_decreases_strictly_while_running() {
        let mut config = least_squares_config(Solver::P2gd);
        config.instance = InstanceSpec::MatrixCompletion {
            m: 12,
            n: 12,
            planted_rank: 2,
            rank_bound: 2,
            mask_density: 0.7,
            seed: 8,
            spectrum: None,
            start: StartPoint::RandomRankR,
        };
        let outcome = run::<f64>(&config).unwrap();
        for pair in outcome.records.windows(2) {
            assert!(
                pair[1].f_value < pair[0].f_value,
                "f stalled between iterations {} and {}",
                pair[0].i,
                pair[1].i
            );
        }
    }

    #[test]
    fn zero_iteration_budget_is_rejected() {
        let mut config = least_squares_config(Solver::Rfd);
        config.stop.max_iters = 0;
        assert!(matches!(
            run::<f64>(&config),
            Err(DriverError::InvalidConfig(_))
        ));
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let config = least_squares_config(Solver::P2gdr);
        let a = run::<f64>(&config).unwrap();
        let b = run::<f64>(&config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.termination, b.termination);
    }

    #[test]
    fn wall_time_budget_of_zero_stops_before_stepping() {
        let mut config = least_squares_config(Solver::Rfd);
        config.stop.max_wall_time = Some(0.0);
        let outcome = run::<f64>(&config).unwrap();
        assert_eq!(outcome.termination, TerminationReason::WallTimeExceeded);
        assert_eq!(outcome.iterations(), 0);
    }

    #[test]
    fn detailed_and_reference_runs_agree_on_iterates() {
        let mut reference = least_squares_config(Solver::Rfdr);
        reference.stop.max_iters = 40;
        let mut detailed = reference.clone();
        detailed.implementation = Implementation::Detailed;
        let a = run::<f64>(&reference).unwrap();
        let b = run::<f64>(&detailed).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert!((ra.f_value - rb.f_value).abs() <= 1e-9 * (1.0 + ra.f_value.abs()));
            assert_eq!(ra.rank, rb.rank);
            assert_eq!(ra.backtracks, rb.backtracks);
        }
    }

    #[test]
    fn previous_clipped_alpha_warm_starts_after_backtracks() {
        let mut config = least_squares_config(Solver::P2gd);
        config.params.alpha_hi = 4.0;
        config.params.c = 0.1;
        config.alpha0 = Alpha0Policy::PreviousClipped;
        let outcome = run::<f64>(&config).unwrap();
        // L = 1 quadratic: the first search backtracks from 4 to 1, later
        // iterations start from the remembered 1 and accept immediately.
        assert_eq!(outcome.records[0].backtracks, 2);
        assert_eq!(outcome.records[0].accepted_alpha, 1.0);
        if outcome.records.len() > 2 {
            assert_eq!(outcome.records[1].backtracks, 0);
            assert_eq!(outcome.records[1].accepted_alpha, 1.0);
        }
    }

    #[test]
    fn decrease_floor_detects_floating_point_stall() {
        // Quadratic riding on a huge constant: the Armijo decrease is far
        // below one ulp of f, so the first step cannot reduce f in floating
        // point and the run must refuse to spin.
        use nalgebra::DMatrix;
        let t = DMatrix::from_fn(4, 4, |i, j| if i == j { 1e-4 } else { 0.0 });
        let te = t.clone();
        let tg = t.clone();
        let obj = Objective::new(
            4,
            4,
            move |x: &DMatrix<f64>| 1e16 + 0.5 * (x - &te).norm_squared(),
            move |x: &DMatrix<f64>| x - &tg,
        );
        let params: LineSearchParams<f64> = LineSearchParams::default();
        let policy = RankPolicy::default();
        let x0 = FactoredMatrix::<f64>::zero(4, 4);

        // Direct step: accepted by Armijo yet f is unchanged at this scale.
        let rep = rfd_step(&x0, &obj, 2, &params, 1.0, None, &policy).unwrap();
        assert!(rep.f_next >= rep.f_x);
    }

    #[test]
    fn compare_rejects_bad_input_and_matches_rfd_to_rfdr_off_guard() {
        let rfd = least_squares_config(Solver::Rfd);
        let mut rfdr = least_squares_config(Solver::Rfdr);

        assert!(matches!(
            compare::<f64>(&[rfd.clone()]),
            Err(DriverError::TooFewConfigs)
        ));

        let mut mismatched = rfdr.clone();
        mismatched.instance = InstanceSpec::TargetLeastSquares {
            m: 9,
            n: 6,
            target_rank: 2,
            rank_bound: 2,
            seed: 5,
            spectrum: None,
            start: StartPoint::Zero,
        };
        assert!(matches!(
            compare::<f64>(&[rfd.clone(), mismatched]),
            Err(DriverError::InstanceMismatch { index: 1 })
        ));

        // Planted singular values sit well above delta = 0.1, so the
        // rank-reduction guard never fires and the two solvers coincide.
        rfdr.solver = Solver::Rfdr;
        let outcomes = compare::<f64>(&[rfd, rfdr]).unwrap();
        assert_eq!(outcomes[0].records, outcomes[1].records);
    }

    #[test]
    fn artifacts_round_trip_and_render() {
        let dir = std::env::temp_dir().join(format!("lowrank-driver-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let mut config = least_squares_config(Solver::Rfdr);
        config.output.dir = Some(dir.to_string_lossy().into_owned());
        config.output.stationarity_svg = true;
        let outcome = execute(&config).unwrap();

        let trace = read_trace(dir.join("trace.jsonl")).unwrap();
        assert_eq!(trace, outcome.records);

        let summary_text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
        let summary: RunSummary = serde_json::from_str(&summary_text).unwrap();
        assert_eq!(summary.iterations, outcome.iterations());
        let final_back = FactoredMatrix::try_from(summary.final_point).unwrap();
        assert!((final_back.assemble() - outcome.final_point.assemble()).norm() <= 1e-15);

        let svg = std::fs::read_to_string(dir.join("stationarity.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));

        let summary = summarize(&config, &outcome);
        let csv = table1_csv(&[(&config, &summary)]);
        assert!(csv.lines().count() == 2);
        assert!(csv.starts_with("solver,"));

        let compare_dir = dir.join("cmp");
        let mut other = config.clone();
        other.solver = Solver::P2gdr;
        other.output = OutputSpec::default();
        config.output = OutputSpec::default();
        execute_compare(&[config, other], &compare_dir).unwrap();
        for name in ["trace_0.jsonl", "trace_1.jsonl", "summary.json", "table1.csv", "stationarity.svg"] {
            assert!(compare_dir.join(name).exists(), "{name} missing");
        }
    }

    #[test]
    fn config_json_round_trips() {
        let config = least_squares_config(Solver::P2gd);
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);

        // Unknown fields in a config file are an error, not a surprise.
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("solvr".into(), serde_json::Value::Bool(true));
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }
}
