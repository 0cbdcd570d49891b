//! Factored-form step maps and the operation counters that compare them.
//!
//! The maps in [`crate::maps`] assemble dense m×n matrices at every turn and
//! serve as the readable reference. The functions here produce the same
//! iterates (up to floating-point reordering) while keeping the linear
//! algebra at the scale of the rank bound: the gradient enters only through
//! the sketches `Ĝ₁ = Uᵀ∇f` and `Ĝ₂ = ∇f·V`, accepted points are
//! refactored from stacked blocks whose short side is at most `2r`, and the
//! one unavoidable ambient-size decomposition is the truncation of the
//! residual block when the foot has rank strictly below the bound.
//!
//! Counting conventions, shared with the reference maps so the two remain
//! comparable:
//!
//! * `f_evals` counts candidate evaluations inside the Armijo loop only.
//!   Baseline values `f(X)` and `f(X̂)` are either passed in by the caller
//!   or computed silently.
//! * an SVD is small when the decomposed matrix has `min(rows, cols) ≤ 2r`,
//!   large otherwise; the classification looks at dimensions alone.
//! * `matmul_flops` is a coarse `2·m·k·n` tally of the explicit products in
//!   the factored pipelines. The reference maps leave it at zero since their
//!   dense arithmetic is not the object of study.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ConeError, StepError};
use crate::factored::{FactoredMatrix, RankPolicy};
use crate::linalg::{hcat, pivoted_qr, truncated_svd, vcat};
use crate::maps::{zero_cutoff, LineSearchParams};
use crate::problems::Objective;
use crate::{conv, to_f64, Scalar};

/// Tally of the operations a step (or a whole run) performed.
///
/// Plain additive counters; merge them across steps to get run totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    /// Objective evaluations at trial candidates.
    pub f_evals: u64,
    /// Gradient evaluations.
    pub grad_evals: u64,
    /// Column-pivoted QR factorizations.
    pub pivoted_qrs: u64,
    /// SVDs of matrices with `min(rows, cols) ≤ 2r`.
    pub small_svds: u64,
    /// SVDs of matrices with both dimensions above `2r`.
    pub large_svds: u64,
    /// Coarse flop tally (`2·m·k·n` per recorded product) of the explicit
    /// products in the factored pipelines; the reference maps leave it 0.
    pub matmul_flops: u64,
}

impl OpCounter {
    pub fn merge(&mut self, other: &OpCounter) {
        self.f_evals += other.f_evals;
        self.grad_evals += other.grad_evals;
        self.pivoted_qrs += other.pivoted_qrs;
        self.small_svds += other.small_svds;
        self.large_svds += other.large_svds;
        self.matmul_flops += other.matmul_flops;
    }

    /// Records one SVD of a `rows × cols` matrix under rank bound `r`.
    pub fn record_svd(&mut self, rows: usize, cols: usize, r: usize) {
        if rows.min(cols) <= 2 * r {
            self.small_svds += 1;
        } else {
            self.large_svds += 1;
        }
    }

    /// Records one `(m×k)(k×n)` product as `2·m·k·n` flops.
    pub fn record_matmul(&mut self, m: usize, k: usize, n: usize) {
        self.matmul_flops += 2 * (m as u64) * (k as u64) * (n as u64);
    }
}

/// What one factored step produced.
#[derive(Clone, Debug)]
pub struct DetailedOutcome<T: Scalar> {
    pub next: FactoredMatrix<T>,
    pub counters: OpCounter,
    pub accepted_alpha: T,
    pub backtracks: u32,
    pub rank_reduction_taken: bool,
    /// Squared norm of the projected direction of the branch that produced
    /// `next`; the Armijo tests compare against `c·α` times this value.
    pub direction_norm_sq: T,
    /// Baseline `f(X)` of the unreduced input point.
    pub f_x: T,
    /// Objective value at the accepted candidate.
    pub f_next: T,
}

/// `scale · diag(σ) Vᵀ` as a dense `r̲ × n` block.
fn scaled_vt<T: Scalar>(f: &FactoredMatrix<T>, scale: T) -> DMatrix<T> {
    let mut out = f.v().transpose();
    for i in 0..f.rank() {
        let s = f.sigma()[i] * scale;
        out.row_mut(i).apply(|x| *x *= s);
    }
    out
}

/// `scale · U diag(σ)` as a dense `m × r̲` block.
fn scaled_u<T: Scalar>(f: &FactoredMatrix<T>, scale: T) -> DMatrix<T> {
    let mut out = f.u().clone();
    for j in 0..f.rank() {
        let s = f.sigma()[j] * scale;
        out.column_mut(j).apply(|x| *x *= s);
    }
    out
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

fn check_rank<T: Scalar>(x: &FactoredMatrix<T>, r: usize) -> Result<(), StepError> {
    if x.rank() > r {
        return Err(StepError::Cone(ConeError::RankExceedsBound {
            rank: x.rank(),
            bound: r,
        }));
    }
    Ok(())
}

/// Truncates the residual block and drops it when it is numerically zero
/// relative to the gradient, so no spurious rank-1 noise directions appear.
/// Returns `None` exactly when the direction has no component outside the
/// row and column spaces of the foot.
fn residual_factor<T: Scalar>(
    d_res: &DMatrix<T>,
    grad_norm: T,
    budget: usize,
    r: usize,
    policy: &RankPolicy<T>,
    counters: &mut OpCounter,
) -> Option<FactoredMatrix<T>> {
    if d_res.norm() <= conv::<T>(1e-12) * grad_norm {
        return None;
    }
    let d = truncated_svd(d_res, budget, policy);
    counters.record_svd(d_res.nrows(), d_res.ncols(), r);
    if d.rank() == 0 {
        None
    } else {
        Some(d)
    }
}

/// One descent step from the zero matrix: the direction is the best
/// rank-`r` approximation of the negative gradient, and scaling it only
/// rescales the singular values, so every trial point is already factored.
///
/// `fx` is `f(0)` when the caller knows it; otherwise it is computed
/// silently. The counters bill one gradient, one SVD of the ambient
/// gradient, and one objective evaluation per Armijo trial.
pub fn detailed_zero_input<T: Scalar>(
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<DetailedOutcome<T>, StepError> {
    let (m, n) = obj.shape();
    let mut counters = OpCounter::default();
    let f_x = fx.unwrap_or_else(|| obj.eval(&DMatrix::zeros(m, n)));
    let g = obj.grad(&DMatrix::zeros(m, n));
    counters.grad_evals += 1;
    let gt = truncated_svd(&(-&g), r, policy);
    counters.record_svd(m, n, r);
    let s = gt.norm_squared();
    let cutoff = zero_cutoff(g.norm());
    if s.sqrt() <= cutoff {
        return Err(StepError::ZeroDirection {
            norm: to_f64(s.sqrt()),
            cutoff: to_f64(cutoff),
            spent: counters,
        });
    }
    let mut alpha = alpha0;
    let mut backtracks = 0u32;
    loop {
        let cand = gt.scale(alpha);
        let fc = obj.eval(&cand.assemble());
        counters.f_evals += 1;
        if fc <= f_x - params.c * alpha * s {
            return Ok(DetailedOutcome {
                next: cand,
                counters,
                accepted_alpha: alpha,
                backtracks,
                rank_reduction_taken: false,
                direction_norm_sq: s,
                f_x,
                f_next: fc,
            });
        }
        if backtracks >= params.max_backtracks {
            return Err(StepError::BacktrackCapExceeded {
                max_backtracks: params.max_backtracks,
                last_alpha: to_f64(alpha),
                f_x: to_f64(f_x),
                best_candidate: to_f64(fc),
                spent: counters,
            });
        }
        alpha *= params.beta;
        backtracks += 1;
    }
}

/// Factored retraction-free descent step.
///
/// Works entirely through the sketches `Ĝ₁ = −Uᵀ∇f` and `Ĝ₂ = −∇f·V`: the
/// side with the larger sketch norm decides which normal-space block the
/// restricted projection keeps (ties keep the row-space side), trial points
/// are assembled as `U·(small block)` plus the truncated residual, and the
/// accepted point is refactored through one SVD of a stacked block with
/// short side at most `r`. A rank-0 foot is an error; step from the zero
/// matrix with [`detailed_zero_input`] instead.
pub fn detailed_rfd<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<DetailedOutcome<T>, StepError> {
    check_shape(x, obj)?;
    check_rank(x, r)?;
    let r_lo = x.rank();
    if r_lo == 0 {
        return Err(StepError::Cone(ConeError::ZeroFoot));
    }
    let (m, n) = x.shape();
    let mut counters = OpCounter::default();
    let x_dense = x.assemble();
    let f_x = fx.unwrap_or_else(|| obj.eval(&x_dense));
    let g = obj.grad(&x_dense);
    counters.grad_evals += 1;
    let z = -&g;

    let g1 = x.u().tr_mul(&z);
    counters.record_matmul(r_lo, m, n);
    let g2 = &z * x.v();
    counters.record_matmul(m, n, r_lo);
    let s1 = g1.norm_squared();
    let s2 = g2.norm_squared();

    let d = if r_lo < r {
        let a = &g1 * x.v();
        counters.record_matmul(r_lo, n, r_lo);
        let c_block = &g2 - x.u() * &a;
        counters.record_matmul(m, r_lo, r_lo);
        let inside = x.u() * &g1 + &c_block * x.v().transpose();
        counters.record_matmul(m, r_lo, n);
        counters.record_matmul(m, r_lo, n);
        let d_res = &z - inside;
        residual_factor(&d_res, g.norm(), r - r_lo, r, policy, &mut counters)
    } else {
        None
    };
    let d_sq = d.as_ref().map_or(T::zero(), |d| d.norm_squared());
    let s = if s1 >= s2 { s1 } else { s2 } + d_sq;

    let cutoff = zero_cutoff(g.norm());
    if s.sqrt() <= cutoff {
        return Err(StepError::ZeroDirection {
            norm: to_f64(s.sqrt()),
            cutoff: to_f64(cutoff),
            spent: counters,
        });
    }

    let d_dense = d.as_ref().map(|d| d.assemble());
    let rho = d.as_ref().map_or(0, |d| d.rank());
    let keep_row_side = s1 >= s2;
    // Row-space branch: X + αG = U(ΣVᵀ + αĜ₁) + αD̲. Column-space branch is
    // the transpose picture with Ĝ₂ glued onto UΣ.
    let x2 = if keep_row_side {
        scaled_vt(x, T::one())
    } else {
        scaled_u(x, T::one())
    };

    let mut alpha = alpha0;
    let mut backtracks = 0u32;
    loop {
        let (w_inner, cand_dense) = if keep_row_side {
            let w = &x2 + &g1 * alpha;
            let mut cd = x.u() * &w;
            counters.record_matmul(m, r_lo, n);
            if let Some(dd) = &d_dense {
                cd += dd * alpha;
            }
            (w, cd)
        } else {
            let w = &x2 + &g2 * alpha;
            let mut cd = &w * x.v().transpose();
            counters.record_matmul(m, r_lo, n);
            if let Some(dd) = &d_dense {
                cd += dd * alpha;
            }
            (w, cd)
        };
        let fc = obj.eval(&cand_dense);
        counters.f_evals += 1;
        if fc <= f_x - params.c * alpha * s {
            let next = if keep_row_side {
                let d_rows = d.as_ref().map(|d| scaled_vt(d, alpha));
                let w_full = match &d_rows {
                    Some(dr) => vcat(&[&w_inner, dr]),
                    None => w_inner,
                };
                let wf = truncated_svd(&w_full, r, policy);
                counters.record_svd(w_full.nrows(), n, r);
                let u_basis = match &d {
                    Some(d) => hcat(&[x.u(), d.u()]),
                    None => x.u().clone(),
                };
                let u_new = &u_basis * wf.u();
                counters.record_matmul(m, r_lo + rho, wf.rank());
                FactoredMatrix::from_parts_unchecked(u_new, wf.sigma().clone(), wf.v().clone())
            } else {
                let d_cols = d.as_ref().map(|d| scaled_u(d, alpha));
                let w_full = match &d_cols {
                    Some(dc) => hcat(&[&w_inner, dc]),
                    None => w_inner,
                };
                let wf = truncated_svd(&w_full, r, policy);
                counters.record_svd(m, w_full.ncols(), r);
                let v_basis = match &d {
                    Some(d) => hcat(&[x.v(), d.v()]),
                    None => x.v().clone(),
                };
                let v_new = &v_basis * wf.v();
                counters.record_matmul(n, r_lo + rho, wf.rank());
                FactoredMatrix::from_parts_unchecked(wf.u().clone(), wf.sigma().clone(), v_new)
            };
            debug_assert!(next.validate().is_ok(), "refactored point invalid");
            return Ok(DetailedOutcome {
                next,
                counters,
                accepted_alpha: alpha,
                backtracks,
                rank_reduction_taken: false,
                direction_norm_sq: s,
                f_x,
                f_next: fc,
            });
        }
        if backtracks >= params.max_backtracks {
            return Err(StepError::BacktrackCapExceeded {
                max_backtracks: params.max_backtracks,
                last_alpha: to_f64(alpha),
                f_x: to_f64(f_x),
                best_candidate: to_f64(fc),
                spent: counters,
            });
        }
        alpha *= params.beta;
        backtracks += 1;
    }
}

/// Factored projected-gradient step.
///
/// Orthonormal bases for the pieces of the tangent direction outside the
/// row and column spaces of the foot come from column-pivoted QRs, so every
/// trial point is `[U U⊥ Ū⊥] · M(α) · [V V⊥ V̄⊥]ᵀ` for a small block matrix
/// `M(α)` whose dimensions never exceed `r + r̲`. The retraction then only
/// needs the SVD of `M(α)`, one per Armijo trial. A rank-0 foot is an
/// error; step from the zero matrix with [`detailed_zero_input`] instead.
pub fn detailed_p2gd<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<DetailedOutcome<T>, StepError> {
    check_shape(x, obj)?;
    check_rank(x, r)?;
    let r_lo = x.rank();
    if r_lo == 0 {
        return Err(StepError::Cone(ConeError::ZeroFoot));
    }
    let (m, n) = x.shape();
    let mut counters = OpCounter::default();
    let x_dense = x.assemble();
    let f_x = fx.unwrap_or_else(|| obj.eval(&x_dense));
    let g = obj.grad(&x_dense);
    counters.grad_evals += 1;
    let z = -&g;

    let g1 = x.u().tr_mul(&z);
    counters.record_matmul(r_lo, m, n);
    let g2 = &z * x.v();
    counters.record_matmul(m, n, r_lo);
    let ghat = &g1 * x.v();
    counters.record_matmul(r_lo, n, r_lo);

    // Column-space residual Ĝ₂ − U·Ĝ = U⊥R₁ and row-space residual
    // (Ĝ₁ − Ĝ·Vᵀ)ᵀ = V⊥R₂, both through pivoted QR so rank deficiency just
    // shrinks the bases.
    let c_block = &g2 - x.u() * &ghat;
    counters.record_matmul(m, r_lo, r_lo);
    let qr1 = pivoted_qr(&c_block, policy);
    counters.pivoted_qrs += 1;
    let r1 = qr1.r_in_original_order();
    let u_perp = qr1.q;

    let b_block = &g1 - &ghat * x.v().transpose();
    counters.record_matmul(r_lo, r_lo, n);
    let qr2 = pivoted_qr(&b_block.transpose(), policy);
    counters.pivoted_qrs += 1;
    let r2 = qr2.r_in_original_order();
    let v_perp = qr2.q;

    let mut s = ghat.norm_squared() + r1.norm_squared() + r2.norm_squared();

    let d = if r_lo < r {
        let inside = x.u() * &g1 + &c_block * x.v().transpose();
        counters.record_matmul(m, r_lo, n);
        counters.record_matmul(m, r_lo, n);
        let d_res = &z - inside;
        residual_factor(&d_res, g.norm(), r - r_lo, r, policy, &mut counters)
    } else {
        None
    };
    s += d.as_ref().map_or(T::zero(), |d| d.norm_squared());

    let cutoff = zero_cutoff(g.norm());
    if s.sqrt() <= cutoff {
        return Err(StepError::ZeroDirection {
            norm: to_f64(s.sqrt()),
            cutoff: to_f64(cutoff),
            spent: counters,
        });
    }

    let rho1 = u_perp.ncols();
    let rho2 = v_perp.ncols();

    // The residual factor U̲Σ̲V̲ᵀ is orthogonal to U and V but not to U⊥ or
    // V⊥, so split it as U̲ = U⊥R₁₁ + Ū⊥R₁₂ (and mirrored for V̲) to extend
    // the bases; with no residual the extension blocks are simply empty.
    let (u_bar, m22, m23, m32, m33) = match &d {
        Some(d) => {
            let rho0 = d.rank();
            let r11 = u_perp.tr_mul(d.u());
            counters.record_matmul(rho1, m, rho0);
            let resid_u = d.u() - &u_perp * &r11;
            counters.record_matmul(m, rho1, rho0);
            let qr3 = pivoted_qr(&resid_u, policy);
            counters.pivoted_qrs += 1;
            let r12 = qr3.r_in_original_order();
            let u_bar = qr3.q;

            let r21 = v_perp.tr_mul(d.v());
            counters.record_matmul(rho2, n, rho0);
            let resid_v = d.v() - &v_perp * &r21;
            counters.record_matmul(n, rho2, rho0);
            let qr4 = pivoted_qr(&resid_v, policy);
            counters.pivoted_qrs += 1;
            let r22 = qr4.r_in_original_order();
            let v_bar = qr4.q;

            let scale_cols = |mat: &DMatrix<T>| {
                let mut out = mat.clone();
                for j in 0..rho0 {
                    let s = d.sigma()[j];
                    out.column_mut(j).apply(|x| *x *= s);
                }
                out
            };
            let r11s = scale_cols(&r11);
            let r12s = scale_cols(&r12);
            let m22 = &r11s * r21.transpose();
            let m23 = &r11s * r22.transpose();
            let m32 = &r12s * r21.transpose();
            let m33 = &r12s * r22.transpose();
            ((u_bar, v_bar), m22, m23, m32, m33)
        }
        None => (
            (DMatrix::zeros(m, 0), DMatrix::zeros(n, 0)),
            DMatrix::zeros(rho1, rho2),
            DMatrix::zeros(rho1, 0),
            DMatrix::zeros(0, rho2),
            DMatrix::zeros(0, 0),
        ),
    };
    let (u_bar, v_bar) = u_bar;
    let rho12 = u_bar.ncols();
    let rho22 = v_bar.ncols();

    let u_basis = hcat(&[x.u(), &u_perp, &u_bar]);
    let v_basis = hcat(&[x.v(), &v_perp, &v_bar]);
    let sigma_mat = DMatrix::from_diagonal(x.sigma());
    let rows = r_lo + rho1 + rho12;
    let cols = r_lo + rho2 + rho22;

    let mut alpha = alpha0;
    let mut backtracks = 0u32;
    loop {
        let top = hcat(&[&(&sigma_mat + &ghat * alpha), &(r2.transpose() * alpha)]);
        let mid = hcat(&[&(&r1 * alpha), &(&m22 * alpha), &(&m23 * alpha)]);
        let bot = hcat(&[&DMatrix::zeros(rho12, r_lo), &(&m32 * alpha), &(&m33 * alpha)]);
        let m_alpha = vcat(&[
            &hcat(&[&top, &DMatrix::zeros(r_lo, rho22)]),
            &mid,
            &bot,
        ]);
        let mf = truncated_svd(&m_alpha, r, policy);
        counters.record_svd(rows, cols, r);
        let u_new = &u_basis * mf.u();
        counters.record_matmul(m, rows, mf.rank());
        let v_new = &v_basis * mf.v();
        counters.record_matmul(n, cols, mf.rank());
        let cand = FactoredMatrix::from_parts_unchecked(u_new, mf.sigma().clone(), v_new);
        let fc = obj.eval(&cand.assemble());
        counters.f_evals += 1;
        if fc <= f_x - params.c * alpha * s {
            debug_assert!(cand.validate().is_ok(), "refactored point invalid");
            return Ok(DetailedOutcome {
                next: cand,
                counters,
                accepted_alpha: alpha,
                backtracks,
                rank_reduction_taken: false,
                direction_norm_sq: s,
                f_x,
                f_next: fc,
            });
        }
        if backtracks >= params.max_backtracks {
            return Err(StepError::BacktrackCapExceeded {
                max_backtracks: params.max_backtracks,
                last_alpha: to_f64(alpha),
                f_x: to_f64(f_x),
                best_candidate: to_f64(fc),
                spent: counters,
            });
        }
        alpha *= params.beta;
        backtracks += 1;
    }
}

enum Attempt<T: Scalar> {
    Improved(DetailedOutcome<T>),
    NotBetter(OpCounter),
    Failed(OpCounter),
}

fn try_reduced<T: Scalar>(
    step: impl Fn(&FactoredMatrix<T>, Option<T>) -> Result<DetailedOutcome<T>, StepError>,
    obj: &Objective<T>,
    x_hat: &FactoredMatrix<T>,
    f_to_beat: T,
) -> Attempt<T> {
    let f_hat = obj.eval(&x_hat.assemble());
    match step(x_hat, Some(f_hat)) {
        Ok(out) => {
            if out.f_next < f_to_beat {
                Attempt::Improved(out)
            } else {
                Attempt::NotBetter(out.counters)
            }
        }
        Err(e) => Attempt::Failed(e.spent().copied().unwrap_or_default()),
    }
}

/// Factored retraction-free step with the rank-reduction safeguard.
///
/// Runs [`detailed_rfd`] (or [`detailed_zero_input`] at a rank-0 foot);
/// when the iterate sits at full rank `r` with `σ_r ≤ delta`, one extra
/// attempt starts from the rank-(r−1) truncation and wins only on a
/// strictly smaller objective value. At most one reduction attempt keeps
/// the worst case at two line searches.
pub fn detailed_rfdr<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<DetailedOutcome<T>, StepError> {
    if x.rank() == 0 {
        check_shape(x, obj)?;
        return detailed_zero_input(obj, r, params, alpha0, fx, policy);
    }
    let main = detailed_rfd(x, obj, r, params, alpha0, fx, policy)?;
    if !(x.rank() == r && x.sigma_min() <= params.delta) {
        return Ok(main);
    }
    let x_hat = x.truncate_to(r - 1);
    let step = |xh: &FactoredMatrix<T>, fh: Option<T>| {
        if xh.rank() == 0 {
            detailed_zero_input(obj, r, params, alpha0, fh, policy)
        } else {
            detailed_rfd(xh, obj, r, params, alpha0, fh, policy)
        }
    };
    match try_reduced(step, obj, &x_hat, main.f_next) {
        Attempt::Improved(mut reduced) => {
            reduced.rank_reduction_taken = true;
            reduced.f_x = main.f_x;
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

/// Factored projected-gradient step with the rank-reduction safeguard.
///
/// Runs [`detailed_p2gd`] from `x` and from every truncation dropping the
/// `j` smallest singular values, `j = 1..=(rank(x) − #{σ > delta})`; the
/// rank-0 truncation steps through [`detailed_zero_input`]. The candidate
/// with the strictly smallest objective value wins, earliest first, so the
/// unreduced step keeps ties.
pub fn detailed_p2gdr<T: Scalar>(
    x: &FactoredMatrix<T>,
    obj: &Objective<T>,
    r: usize,
    params: &LineSearchParams<T>,
    alpha0: T,
    fx: Option<T>,
    policy: &RankPolicy<T>,
) -> Result<DetailedOutcome<T>, StepError> {
    if x.rank() == 0 {
        check_shape(x, obj)?;
        return detailed_zero_input(obj, r, params, alpha0, fx, policy);
    }
    let main = detailed_p2gd(x, obj, r, params, alpha0, fx, policy)?;
    let r_lo = x.rank();
    let r_delta = x.sigma().iter().filter(|&&s| s > params.delta).count();
    let f_x = main.f_x;
    let mut counters = main.counters;
    let mut best = main;
    let step = |xh: &FactoredMatrix<T>, fh: Option<T>| {
        if xh.rank() == 0 {
            detailed_zero_input(obj, r, params, alpha0, fh, policy)
        } else {
            detailed_p2gd(xh, obj, r, params, alpha0, fh, policy)
        }
    };
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
    best.counters = counters;
    Ok(best)
}
