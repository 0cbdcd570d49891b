//! Self-contained verification suites: brute-force projection oracles,
//! inequality checks, line-search certificates, and finite-difference
//! gradient tests.
//!
//! Everything here deliberately avoids the compact-form code paths the
//! library uses for real work. Orthogonal complements are materialized with
//! full QR factorizations, block formulas are evaluated verbatim, and the
//! small SVDs run on a one-sided Jacobi routine that shares nothing with
//! the production truncation pipeline. A bug in the fast path cannot hide
//! in its own oracle.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cones;
use crate::factored::{FactoredMatrix, RankPolicy};
use crate::linalg::jacobi_svd;
use crate::maps::{rfd_step, LineSearchParams};
use crate::problems::{self, generators, Objective};

/// Outcome of one verification suite.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Worst violation margin observed (negative margins are comfortable
    /// passes; anything positive is a failure).
    pub worst_margin: f64,
    /// First few failure descriptions, for diagnosis.
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            worst_margin: f64::NEG_INFINITY,
            notes: Vec::new(),
        }
    }

    /// Records one assertion: `margin` must be ≤ 0 to pass.
    fn record(&mut self, margin: f64, note: impl FnOnce() -> String) {
        self.trials += 1;
        if margin > self.worst_margin {
            self.worst_margin = margin;
        }
        if margin > 0.0 {
            self.failures += 1;
            if self.notes.len() < 8 {
                self.notes.push(note());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// One-line human summary, stable enough to grep in CI logs.
    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} ({} checks, {} failures, worst margin {:+.3e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.worst_margin,
        )
    }
}

/// Orthonormal basis of the orthogonal complement of `basis`'s column
/// space, built from a full Householder QR of `[basis | I]`. The first
/// `k` columns of Q span the basis columns, so the rest span the
/// complement.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let m = basis.nrows();
    let k = basis.ncols();
    let mut aug = DMatrix::zeros(m, k + m);
    aug.view_mut((0, 0), (m, k)).copy_from(basis);
    aug.view_mut((0, k), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let q = aug.qr().q();
    q.columns(k, m - k).into_owned()
}

/// Best rank-`k` approximation via the Jacobi SVD, assembled dense.
/// Independent of the production truncation code.
fn jacobi_best_rank(z: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (m, n) = z.shape();
    let mut out = DMatrix::zeros(m, n);
    if k == 0 {
        return out;
    }
    let (u, sigma, v_t) = jacobi_svd(z);
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    for &idx in order.iter().take(k) {
        let s = sigma[idx];
        if s > 0.0 {
            out += u.column(idx) * v_t.row(idx) * s;
        }
    }
    out
}

/// Dense blocks of `z` at the foot point `x`, with complements
/// materialized: `(a, b, c, d, u_perp, v_perp)` where `a = Uᵀ z V`,
/// `b = Uᵀ z V⊥`, `c = U⊥ᵀ z V`, `d = U⊥ᵀ z V⊥`.
#[allow(clippy::type_complexity)]
pub fn dense_blocks(
    z: &DMatrix<f64>,
    x: &FactoredMatrix<f64>,
) -> (
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
) {
    let u_perp = orthogonal_complement(x.u());
    let v_perp = orthogonal_complement(x.v());
    let a = x.u().tr_mul(z) * x.v();
    let b = x.u().tr_mul(z) * &v_perp;
    let c = u_perp.tr_mul(z) * x.v();
    let d = u_perp.tr_mul(z) * &v_perp;
    (a, b, c, d, u_perp, v_perp)
}

/// Tangent-cone projection evaluated the slow way: every block built with
/// explicit complement bases, the trailing block truncated by the Jacobi
/// SVD. `r` is the ambient rank bound.
pub fn brute_force_tangent(z: &DMatrix<f64>, x: &FactoredMatrix<f64>, r: usize) -> DMatrix<f64> {
    if x.rank() == 0 {
        return jacobi_best_rank(z, r);
    }
    let (a, b, c, d, u_perp, v_perp) = dense_blocks(z, x);
    let d_kept = jacobi_best_rank(&d, r - x.rank());
    x.u() * a * x.v().transpose()
        + x.u() * b * v_perp.transpose()
        + &u_perp * c * x.v().transpose()
        + &u_perp * d_kept * v_perp.transpose()
}

/// Restricted-cone projection evaluated the slow way. Returns the dense
/// value and `true` when the B block (row-space side) was kept; an exact
/// tie keeps B.
pub fn brute_force_restricted(
    z: &DMatrix<f64>,
    x: &FactoredMatrix<f64>,
    r: usize,
) -> (DMatrix<f64>, bool) {
    if x.rank() == 0 {
        return (jacobi_best_rank(z, r), false);
    }
    let (a, b, c, d, u_perp, v_perp) = dense_blocks(z, x);
    let d_kept = jacobi_best_rank(&d, r - x.rank());
    let keep_b = b.norm() >= c.norm();
    let mut out = x.u() * a * x.v().transpose() + &u_perp * d_kept * v_perp.transpose();
    if keep_b {
        out += x.u() * b * v_perp.transpose();
    } else {
        out += &u_perp * c * x.v().transpose();
    }
    (out, keep_b)
}

/// Draws a random foot point and ambient direction with the dimensions the
/// projection suites use: `m, n ∈ [2, 6]`, `1 ≤ r̲ ≤ r ≤ min(m, n) − 1`.
fn random_pair(rng: &mut ChaCha8Rng) -> (FactoredMatrix<f64>, DMatrix<f64>, usize) {
    use rand::Rng;
    let m = rng.random_range(2..=6);
    let n = rng.random_range(2..=6);
    let r = rng.random_range(1..=(m.min(n) - 1).max(1));
    let rank = rng.random_range(1..=r);
    let x = generators::in_variety::<f64>(m, n, rank, rng);
    let z = generators::gaussian::<f64>(m, n, rng);
    (x, z, r)
}

/// Compares both projections against the brute-force oracles on random
/// small instances; elementwise deviation above `1e-10` fails.
pub fn check_projections(trials: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport::new("projection oracle equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = RankPolicy::default();
    for t in 0..trials {
        let (x, z, r) = random_pair(&mut rng);
        let tangent = cones::project_tangent(&z, &x, r, &policy).unwrap();
        let oracle_t = brute_force_tangent(&z, &x, r);
        let dev_t = (tangent.value.assemble() - &oracle_t).amax();
        report.record(dev_t - 1e-10, || {
            format!("trial {t}: tangent deviates by {dev_t:.3e} at shape {:?}", z.shape())
        });
        report.record((tangent.norm - oracle_t.norm()).abs() - 1e-10, || {
            format!("trial {t}: tangent norm {:.12} vs oracle {:.12}", tangent.norm, oracle_t.norm())
        });

        let restricted = cones::project_restricted(&z, &x, r, &policy).unwrap();
        let (oracle_r, _) = brute_force_restricted(&z, &x, r);
        let dev_r = (restricted.value.assemble() - &oracle_r).amax();
        report.record(dev_r - 1e-10, || {
            format!("trial {t}: restricted deviates by {dev_r:.3e} at shape {:?}", z.shape())
        });
        report.record((restricted.norm - oracle_r.norm()).abs() - 1e-10, || {
            format!(
                "trial {t}: restricted norm {:.12} vs oracle {:.12}",
                restricted.norm,
                oracle_r.norm()
            )
        });
    }
    report
}

/// The √2 sandwich between the two projections, the inner-product identity
/// of the restricted projection, and the norm bounds of the tangent
/// projection, each with `1e-9` slack.
pub fn check_inequalities(trials: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport::new("projection inequality suite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = RankPolicy::default();
    for t in 0..trials {
        let (x, z, r) = random_pair(&mut rng);
        let tangent = cones::project_tangent(&z, &x, r, &policy).unwrap();
        let restricted = cones::project_restricted(&z, &x, r, &policy).unwrap();
        let tn = tangent.norm;
        let rn = restricted.norm;
        let scale = 1.0 + z.norm();

        // Full projection dominates, restricted recovers at least 1/√2.
        report.record(rn - tn - 1e-9 * scale, || {
            format!("trial {t}: restricted norm {rn:.12} exceeds tangent norm {tn:.12}")
        });
        report.record(tn / 2f64.sqrt() - rn - 1e-9 * scale, || {
            format!("trial {t}: sandwich fails, tangent {tn:.12}, restricted {rn:.12}")
        });

        // The restricted projection is self-aligned with its input.
        let inner = z.dot(&restricted.value.assemble());
        report.record(
            (inner - rn * rn).abs() - 1e-9 * (1.0 + z.norm_squared()),
            || format!("trial {t}: <Z, proj> = {inner:.12} vs norm^2 = {:.12}", rn * rn),
        );

        // Tangent norm is sandwiched by the ambient norm from above and a
        // dimension-dependent fraction of it from below.
        let zn = z.norm();
        report.record(tn - zn - 1e-9 * scale, || {
            format!("trial {t}: tangent norm {tn:.12} exceeds ambient norm {zn:.12}")
        });
        let min_dim = x.nrows().min(x.ncols());
        if x.rank() < min_dim {
            let frac = ((r - x.rank()) as f64 / (min_dim - x.rank()) as f64).sqrt();
            report.record(frac * zn - tn - 1e-9 * scale, || {
                format!("trial {t}: lower bound {:.12} exceeds tangent norm {tn:.12}", frac * zn)
            });
        }
    }
    report
}

/// On quadratics with unit Lipschitz constant, accepted steps must satisfy
/// the sufficient-decrease certificate and stay within the closed-form
/// backtrack budget.
pub fn check_line_search(starts: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport::new("line-search certificates");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = RankPolicy::default();
    let params: LineSearchParams<f64> = LineSearchParams {
        alpha_hi: 4.0,
        ..LineSearchParams::default()
    };
    let (beta, c) = (params.beta, params.c);
    let alpha0 = params.alpha_hi;
    // With L = 1: the search accepts as soon as alpha <= 2(1-c), so it can
    // never pass below beta*2(1-c), and the backtrack count is bounded by
    // the log-ratio below.
    let alpha_floor = alpha0.min(2.0 * beta * (1.0 - c));
    let bound = ((2.0 * beta * (1.0 - c) / alpha0).ln() / beta.ln()).floor().max(0.0) as u32;

    for t in 0..starts {
        use rand::Rng;
        let m = rng.random_range(5..=10);
        let n = rng.random_range(5..=10);
        let r = rng.random_range(1..=3.min(m.min(n) - 1));
        let rank = rng.random_range(1..=r);
        let x = generators::in_variety::<f64>(m, n, rank, &mut rng);
        let target = generators::gaussian::<f64>(m, n, &mut rng);
        let obj = problems::make_least_squares(target);

        let g = obj.grad(&x.assemble());
        let s = cones::stationarity_measure(&x, &g, r, &policy).unwrap();
        let report_step = match rfd_step(&x, &obj, r, &params, alpha0, None, &policy) {
            Ok(rep) => rep,
            Err(e) => {
                report.record(1.0, || format!("trial {t}: step failed: {e}"));
                continue;
            }
        };

        let f_x = obj.eval(&x.assemble());
        let f_next = obj.eval(&report_step.next.assemble());
        let alpha = report_step.accepted_alpha;

        // Certificate in terms of the stationarity measure: the restricted
        // direction carries at least half the squared tangent mass.
        let promised = f_x - 0.5 * c * alpha * s * s;
        report.record(f_next - promised - 1e-9 * (1.0 + f_x.abs()), || {
            format!("trial {t}: f(next) = {f_next:.12e} above certificate {promised:.12e}")
        });
        report.record(alpha_floor - alpha - 1e-12, || {
            format!("trial {t}: accepted alpha {alpha:.6} under floor {alpha_floor:.6}")
        });
        report.record(report_step.backtracks as f64 - bound as f64, || {
            format!("trial {t}: {} backtracks, budget {bound}", report_step.backtracks)
        });
    }
    report
}

/// Central-difference directional derivative of `obj` at `x` along `h`.
pub fn fd_directional(obj: &Objective<f64>, x: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let step = 1e-6 * (1.0 + x.norm());
    let plus = obj.eval(&(x + h * step));
    let minus = obj.eval(&(x - h * step));
    (plus - minus) / (2.0 * step)
}

/// Finite-difference gradient consistency for one objective: `points`
/// random evaluation points, one random direction each, `1e-5` relative
/// tolerance.
pub fn check_gradient_of(
    obj: &Objective<f64>,
    points: usize,
    rng: &mut ChaCha8Rng,
    report: &mut CheckReport,
) {
    let (m, n) = obj.shape();
    for p in 0..points {
        let x = generators::gaussian::<f64>(m, n, rng);
        let h_raw = generators::gaussian::<f64>(m, n, rng);
        let h = &h_raw / h_raw.norm();
        let analytic = obj.grad(&x).dot(&h);
        let numeric = fd_directional(obj, &x, &h);
        let tol = 1e-5 * analytic.abs().max(numeric.abs()).max(1.0);
        report.record((analytic - numeric).abs() - tol, || {
            format!(
                "{} point {p}: directional derivative {analytic:.9e} vs FD {numeric:.9e}",
                obj.descriptor()
            )
        });
    }
}

/// Gradient consistency across one instance of every shipped objective.
pub fn check_gradients(seed: u64) -> CheckReport {
    let mut report = CheckReport::new("finite-difference gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let target = generators::gaussian::<f64>(7, 5, &mut rng);
    check_gradient_of(&problems::make_least_squares(target), 10, &mut rng, &mut report);

    let target = generators::gaussian::<f64>(6, 8, &mut rng);
    let mask = generators::mask(6, 8, 0.5, &mut rng);
    check_gradient_of(&problems::make_completion(target, mask), 10, &mut rng, &mut report);

    let ops: Vec<DMatrix<f64>> = (0..9).map(|_| generators::gaussian(5, 4, &mut rng)).collect();
    let planted = generators::in_variety::<f64>(5, 4, 2, &mut rng).assemble();
    let b: Vec<f64> = ops.iter().map(|a| a.dot(&planted)).collect();
    let obj = problems::make_sensing(ops, nalgebra::DVector::from_vec(b)).unwrap();
    check_gradient_of(&obj, 10, &mut rng, &mut report);

    let (obj, _, _) = problems::make_apocalypse::<f64>(2, 0.5).unwrap();
    check_gradient_of(&obj, 10, &mut rng, &mut report);

    report
}

/// The restricted projection must be at least as close to `Z` as any other
/// member of the restricted cone at `X`. Competitors are sampled from both
/// branches, centered on each branch's own best candidate so the test is
/// sharp rather than a far-field formality.
pub fn check_restricted_optimality(trials: usize, samples: usize, seed: u64) -> CheckReport {
    use rand::Rng;
    let mut report = CheckReport::new("restricted projection optimality");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = RankPolicy::default();
    for t in 0..trials {
        let (x, z, r) = random_pair(&mut rng);
        let restricted = cones::project_restricted(&z, &x, r, &policy).unwrap();
        let dist = (&z - restricted.value.assemble()).norm();

        let (a, b, c, d, u_perp, v_perp) = dense_blocks(&z, &x);
        let d_budget = r - x.rank();
        let d_best = jacobi_best_rank(&d, d_budget);

        for s in 0..samples {
            let keep_b = rng.random_bool(0.5);
            let scale = [0.0, 0.03, 0.3, 3.0][rng.random_range(0..4)];
            let noisy = |block: &DMatrix<f64>, rng: &mut ChaCha8Rng| -> DMatrix<f64> {
                if scale == 0.0 {
                    block.clone()
                } else {
                    block + generators::gaussian::<f64>(block.nrows(), block.ncols(), rng) * scale
                }
            };
            let a_w = noisy(&a, &mut rng);
            // D competitor keeps the rank budget by construction.
            let d_w = if d_budget == 0 {
                DMatrix::zeros(d.nrows(), d.ncols())
            } else {
                let left = noisy(&d_best, &mut rng);
                jacobi_best_rank(&left, d_budget)
            };
            let mut w = x.u() * a_w * x.v().transpose() + &u_perp * d_w * v_perp.transpose();
            if keep_b {
                w += x.u() * noisy(&b, &mut rng) * v_perp.transpose();
            } else {
                w += &u_perp * noisy(&c, &mut rng) * x.v().transpose();
            }
            let dist_w = (&z - w).norm();
            report.record(dist - dist_w - 1e-9, || {
                format!(
                    "trial {t} sample {s}: projection at distance {dist:.12} beaten by \
                     competitor at {dist_w:.12}"
                )
            });
        }
    }
    report
}

/// Runs every suite at its standard budget. The CLI's `check` subcommand
/// prints one line per report.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![
        check_projections(500, seed),
        check_inequalities(10_000, seed.wrapping_add(1)),
        check_line_search(1_000, seed.wrapping_add(2)),
        check_gradients(seed.wrapping_add(3)),
        check_restricted_optimality(20, 500, seed.wrapping_add(4)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = generators::orthonormal::<f64>(7, 3, &mut rng);
        let p = orthogonal_complement(&u);
        assert_eq!(p.shape(), (7, 4));
        assert!((p.tr_mul(&p) - DMatrix::identity(4, 4)).norm() <= 1e-12);
        assert!(u.tr_mul(&p).norm() <= 1e-12);

        // Square basis has an empty complement.
        let full = generators::orthonormal::<f64>(4, 4, &mut rng);
        assert_eq!(orthogonal_complement(&full).shape(), (4, 0));
    }

    #[test]
    fn oracle_matches_hand_worked_case() {
        // Foot e1 e1ᵀ in 2x2, Z = [[1,2],[3,4]]: tangent at r = 1 keeps
        // A, B, C and drops D; the restricted projection keeps C (3 > 2).
        let x = FactoredMatrix::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            nalgebra::DVector::from_vec(vec![1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap();
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let t = brute_force_tangent(&z, &x, 1);
        assert!((t - DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 0.0])).amax() <= 1e-12);
        let (rst, keep_b) = brute_force_restricted(&z, &x, 1);
        assert!(!keep_b);
        assert!((rst - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 0.0])).amax() <= 1e-12);
    }

    #[test]
    fn suites_pass_at_reduced_budgets() {
        let reports = [
            check_projections(60, 11),
            check_inequalities(300, 12),
            check_line_search(60, 13),
            check_gradients(14),
            check_restricted_optimality(6, 80, 15),
        ];
        for r in &reports {
            assert!(r.passed(), "{}\n{}", r.summary_line(), r.notes.join("\n"));
        }
    }
}
