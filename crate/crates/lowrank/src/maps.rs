//! Reference implementations of the step maps, working on dense ambient
//! matrices throughout.
//!
//! Four maps share one Armijo backtracking skeleton:
//!
//! * `rfd_step` walks along the restricted tangent cone, so `X + αG` stays
//!   inside the variety for free and no retraction is ever applied.
//! * `rfdr_step` wraps `rfd_step` with a rank-reduction safeguard: when the
//!   iterate uses its full rank budget but the smallest singular value has
//!   fallen to `delta` or below, it also tries a step from the rank-(r−1)
//!   truncation and keeps the better point. At most one reduction attempt
//!   per call.
//! * `p2gd_step` walks along the full tangent cone and retracts every trial
//!   point back onto the variety by rank-`r` truncation.
//! * `p2gdr_step` wraps `p2gd_step` with up to `rank(X)` reduction attempts,
//!   one for every singular value at or below `delta`.
//!
//! These maps favor clarity over cost: directions and iterates are assembled
//! densely, and each projection refactorizes through ambient SVDs. The
//! factored implementations that avoid ambient work live in
//! [`crate::detailed`]; their outputs agree with these maps and the test
//! suite holds them to that.
//!
//! Counter conventions: `f_evals` tallies trial-point evaluations only (the
//! baseline `f(X)` is threaded by the caller or computed silently);
//! `grad_evals` tallies gradient calls; SVD tallies mirror the dense code
//! path (one ambient SVD to truncate the residual block when the rank
//! budget has room, one to factor the projection value, one per retraction
//! or accepted-point refactorization).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cones::{project_restricted, project_tangent, project_zero_foot, ConeProjection};
use crate::detailed::OpCounter;
use crate::error::{ParamError, StepError};
use crate::factored::{FactoredMatrix, RankPolicy};
use crate::linalg::truncated_svd;
use crate::problems::Objective;
use crate::{conv, to_f64, Scalar};

/// Backtracking line-search hyperparameters shared by every step map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchParams<T: Scalar> {
    /// Smallest admissible initial step `α̲`.
    pub alpha_lo: T,
    /// Largest admissible initial step `ᾱ`; also the default `α₀`.
    pub alpha_hi: T,
    /// Backtracking shrink factor `β ∈ (0, 1)`.
    pub beta: T,
    /// Sufficient-decrease constant `c ∈ (0, 1)`.
    pub c: T,
    /// Rank-reduction trigger `Δ`: a reduction is attempted only when the
    /// relevant singular values are at or below this threshold.
    pub delta: T,
    /// Safety cap converting parameter bugs into errors instead of hangs.
    pub max_backtracks: u32,
}

impl<T: Scalar> Default for LineSearchParams<T> {
    fn default() -> Self {
        Self {
            alpha_lo: conv(1e-6),
            alpha_hi: T::one(),
            beta: conv(0.5),
            c: conv(1e-4),
            delta: conv(0.1),
            max_backtracks: 100,
        }
    }
}

impl<T: Scalar> LineSearchParams<T> {
    pub fn validate(&self) -> Result<(), ParamError> {
        let fin = |x: T| to_f64(x).is_finite();
        if !(fin(self.alpha_lo) && fin(self.alpha_hi))
            || self.alpha_lo <= T::zero()
            || self.alpha_lo > self.alpha_hi
        {
            return Err(ParamError::OutOfRange(format!(
                "need 0 < alpha_lo <= alpha_hi < inf, got [{}, {}]",
                to_f64(self.alpha_lo),
                to_f64(self.alpha_hi)
            )));
        }
        if self.beta <= T::zero() || self.beta >= T::one() || !fin(self.beta) {
            return Err(ParamError::OutOfRange(format!(
                "beta must lie in (0, 1), got {}",
                to_f64(self.beta)
            )));
        }
        if self.c <= T::zero() || self.c >= T::one() || !fin(self.c) {
            return Err(ParamError::OutOfRange(format!(
                "c must lie in (0, 1), got {}",
                to_f64(self.c)
            )));
        }
        if self.delta <= T::zero() || !fin(self.delta) {
            return Err(ParamError::OutOfRange(format!(
                "delta must be positive, got {}",
                to_f64(self.delta)
            )));
        }
        if self.max_backtracks == 0 {
            return Err(ParamError::OutOfRange(
                "max_backtracks must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// What one invocation of a step map did.
#[derive(Clone, Debug)]
pub struct StepReport<T: Scalar> {
    pub next: FactoredMatrix<T>,
    pub accepted_alpha: T,
    pub backtracks: u32,
    /// `f(X) − f(next)`, always measured from the input point even when a
    /// rank-reduced branch produced `next`.
    pub decrease: T,
    /// Norm of the projected direction of the branch that produced `next`.
    pub direction_norm: T,
    pub rank_reduction_taken: bool,
    pub counters: OpCounter,
    /// Baseline `f(X)` the Armijo tests compared against.
    pub f_x: T,
    /// Objective value at the accepted candidate, reusable as the next
    /// baseline so a run's decrease chain stays exactly consistent.
    pub f_next: T,
}

/// Directions smaller than this, relative to the gradient, are treated as
/// zero: the point is numerically stationary and stepping would only churn
/// floating-point noise.
pub(crate) fn zero_cutoff<T: Scalar>(grad_norm: T) -> T {
    conv::<T>(1e-12) * (T::one() + grad_norm)
}

fn check_shape<T: Scalar>(x: &FactoredMatrix<T>, obj: &Objective<T>) -> Result<(), StepError> {
    if x.shape() != obj.shape() {
        return Err(StepError::ShapeMismatch {
            expected: obj.shape(),
            actual: x.shape(),
        });
    }
    Ok(())
}

/// Ambient SVDs the dense projection path performs: one to truncate the
/// residual block whenever the budget has room, one to factor the value.
pub(crate) fn tally_projection_svds<T: Scalar>(
    counters: &mut OpCounter,
    x: &FactoredMatrix<T>,
    r: usize,
) {
    let (m, n) = x.shape();
    if x.rank() == 0 {
        counters.record_svd(m, n, r);
        return;
    }
    if r > x.rank() {
        counters.record_svd(m, n, r);
    }
    counters.record_svd(m, n, r);
}

struct Accepted<T: Scalar> {
    alpha: T,
    backtracks: u32,
    f_candidate: T,
    candidate: FactoredMatrix<T>,
}

/// Shared Armijo loop. `retract` decides whether trial points are truncated
/// back to rank `r` before evaluation (the projected-gradient maps) or used
/// as-is (the retraction-free maps, whose directions guarantee feasibility).
#[allow(clippy::too_many_arguments)]
fn backtrack<T: Scalar>(
    obj: &Objective<T>,
    x_dense: &DMatrix<T>,
    f_x: T,
    direction: &ConeProjection<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    retract: bool,
    policy: &RankPolicy<T>,
    counters: &mut OpCounter,
) -> Result<Accepted<T>, StepError> {
    let (m, n) = x_dense.shape();
    let g_dense = direction.value.assemble();
    let s_sq = direction.norm * direction.norm;
    let mut alpha = alpha0;
    let mut backtracks = 0u32;
    let mut best_seen = T::from_subset(&f64::INFINITY);
    loop {
        let trial = x_dense + &g_dense * alpha;
        let (retracted, f_candidate) = if retract {
            let t = truncated_svd(&trial, r, policy);
            counters.record_svd(m, n, r);
            let f = obj.eval(&t.assemble());
            (Some(t), f)
        } else {
            // trial point is feasible by construction; factored only on acceptance
            (None, obj.eval(&trial))
        };
        counters.f_evals += 1;
        if f_candidate < best_seen {
            best_seen = f_candidate;
        }
        if f_candidate <= f_x - params.c * alpha * s_sq {
            let candidate = retracted.unwrap_or_else(|| {
                let t = truncated_svd(&trial, r, policy);
                counters.record_svd(m, n, r);
                t
            });
            return Ok(Accepted {
                alpha,
                backtracks,
                f_candidate,
                candidate,
            });
        }
        if backtracks >= params.max_backtracks {
            return Err(StepError::BacktrackCapExceeded {
                max_backtracks: params.max_backtracks,
                last_alpha: to_f64(alpha),
                f_x: to_f64(f_x),
                best_candidate: to_f64(best_seen),
                spent: counters.clone(),
            });
        }
        alpha *= params.beta;
        backtracks += 1;
    }
}

/// One retraction-free descent step: project the negative gradient onto the
/// restricted tangent cone at `x` (whole variety at a rank-0 foot) and
/// backtrack along `X + αG`, which stays inside the variety for every `α`.
///
/// `fx` lets the caller pass a known `f(x)` so consecutive steps share one
/// exact value chain; when absent it is computed silently (trial-point
/// evaluations are what `f_evals` counts).
///
/// Errors: a numerically zero direction means `x` is stationary for the
/// chosen tolerance; exceeding the backtrack cap signals a wrong gradient
/// or broken parameters.
pub fn rfd_step<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<StepReport<T>, StepError> {
    check_shape(x, obj)?;
    let mut counters = OpCounter::default();
    let x_dense = x.assemble();
    let f_x = fx.unwrap_or_else(|| obj.eval(&x_dense));
    let g = obj.grad(&x_dense);
    counters.grad_evals += 1;
    let neg = -&g;
    let proj = if x.rank() == 0 {
        project_zero_foot(&neg, r, policy)
    } else {
        project_restricted(&neg, x, r, policy)?
    };
    tally_projection_svds(&mut counters, x, r);
    let cutoff = zero_cutoff(g.norm());
    if proj.norm <= cutoff {
        return Err(StepError::ZeroDirection {
            norm: to_f64(proj.norm),
            cutoff: to_f64(cutoff),
            spent: counters,
        });
    }
    let acc = backtrack(
        obj, &x_dense, f_x, &proj, r, params, alpha0, false, policy, &mut counters,
    )?;
    Ok(StepReport {
        next: acc.candidate,
        accepted_alpha: acc.alpha,
        backtracks: acc.backtracks,
        decrease: f_x - acc.f_candidate,
        direction_norm: proj.norm,
        rank_reduction_taken: false,
        counters,
        f_x,
        f_next: acc.f_candidate,
    })
}

/// One projected-gradient step: project the negative gradient onto the full
/// tangent cone, then backtrack on the retracted trial points
/// `truncate_r(X + αG)`.
pub fn p2gd_step<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<StepReport<T>, StepError> {
    check_shape(x, obj)?;
    let mut counters = OpCounter::default();
    let x_dense = x.assemble();
    let f_x = fx.unwrap_or_else(|| obj.eval(&x_dense));
    let g = obj.grad(&x_dense);
    counters.grad_evals += 1;
    let neg = -&g;
    let proj = project_tangent(&neg, x, r, policy)?;
    tally_projection_svds(&mut counters, x, r);
    let cutoff = zero_cutoff(g.norm());
    if proj.norm <= cutoff {
        return Err(StepError::ZeroDirection {
            norm: to_f64(proj.norm),
            cutoff: to_f64(cutoff),
            spent: counters,
        });
    }
    let acc = backtrack(
        obj, &x_dense, f_x, &proj, r, params, alpha0, true, policy, &mut counters,
    )?;
    Ok(StepReport {
        next: acc.candidate,
        accepted_alpha: acc.alpha,
        backtracks: acc.backtracks,
        decrease: f_x - acc.f_candidate,
        direction_norm: proj.norm,
        rank_reduction_taken: false,
        counters,
        f_x,
        f_next: acc.f_candidate,
    })
}

/// Outcome of one rank-reduced side attempt.
enum Attempt<T: Scalar> {
    Improved(StepReport<T>),
    NotBetter(OpCounter),
    /// The attempt aborted (zero direction or cap); its work is still billed.
    Failed(OpCounter),
}

fn try_reduced<T: Scalar>(
    step: impl Fn(&FactoredMatrix<T>, Option<T>) -> Result<StepReport<T>, StepError>,
    obj: &Objective<T>,
    x_hat: &FactoredMatrix<T>,
    f_to_beat: T,
) -> Attempt<T> {
    let f_hat = obj.eval(&x_hat.assemble());
    match step(x_hat, Some(f_hat)) {
        Ok(report) => {
            if report.f_next < f_to_beat {
                Attempt::Improved(report)
            } else {
                Attempt::NotBetter(report.counters)
            }
        }
        Err(e) => Attempt::Failed(e.spent().cloned().unwrap_or_default()),
    }
}

/// One safeguarded retraction-free step. Runs [`rfd_step`]; when the iterate
/// has full rank `r` and its smallest singular value is at most
/// `params.delta`, additionally tries an [`rfd_step`] from the rank-(r−1)
/// truncation of `x` and returns whichever candidate has strictly smaller
/// objective value (ties keep the unreduced step). At most one reduction
/// attempt is ever made; this cap is what keeps the map's worst-case cost a
/// constant multiple of a plain step.
///
/// A reduced branch that aborts (numerically stationary truncation, or cap
/// exceeded) is skipped rather than fatal; its spent work still lands in the
/// returned counters.
pub fn rfdr_step<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<StepReport<T>, StepError> {
    let main = rfd_step(x, obj, r, params, alpha0, fx, policy)?;
    let guard = r >= 1 && x.rank() == r && x.sigma_min() <= params.delta;
    if !guard {
        return Ok(main);
    }
    let x_hat = x.truncate_to(r - 1);
    let step =
        |xh: &FactoredMatrix<T>, fh: Option<T>| rfd_step(xh, obj, r, params, alpha0, fh, policy);
    match try_reduced(step, obj, &x_hat, main.f_next) {
        Attempt::Improved(mut reduced) => {
            reduced.rank_reduction_taken = true;
            reduced.f_x = main.f_x;
            reduced.decrease = main.f_x - reduced.f_next;
            let mut counters = main.counters;
            counters.merge(&reduced.counters);
            reduced.counters = counters;
            Ok(reduced)
        }
        Attempt::NotBetter(spent) | Attempt::Failed(spent) => {
            let mut main = main;
            main.counters.merge(&spent);
            Ok(main)
        }
    }
}

/// One safeguarded projected-gradient step. Runs [`p2gd_step`] from `x` and
/// from every truncation dropping the `j` smallest singular values, for
/// `j = 1..=(rank(x) − #{σ > delta})`; the rank-0 truncation steps from the
/// zero matrix. Returns the candidate with the smallest objective value
/// (ties keep the earliest, so the unreduced step wins them). Worst case,
/// this is `rank(x) + 1` full line searches per call.
pub fn p2gdr_step<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<StepReport<T>, StepError> {
    let main = p2gd_step(x, obj, r, params, alpha0, fx, policy)?;
    let r_lo = x.rank();
    let r_delta = x.sigma().iter().filter(|&&s| s > params.delta).count();
    let f_x = main.f_x;
    let mut counters = main.counters.clone();
    let mut best = main;
    let step =
        |xh: &FactoredMatrix<T>, fh: Option<T>| p2gd_step(xh, obj, r, params, alpha0, fh, policy);
    for j in 1..=(r_lo - r_delta) {
        let x_hat = x.truncate_to(r_lo - j);
        match try_reduced(&step, obj, &x_hat, best.f_next) {
            Attempt::Improved(reduced) => {
                counters.merge(&reduced.counters);
                best = reduced;
                best.rank_reduction_taken = true;
            }
            Attempt::NotBetter(spent) | Attempt::Failed(spent) => counters.merge(&spent),
        }
    }
    best.f_x = f_x;
    best.decrease = f_x - best.f_next;
    best.counters = counters;
    Ok(best)
}
