//! Cross-module properties over randomized inputs: whatever the strategies
//! produce must stay inside the variety, decrease the objective, and survive
//! every serialization round trip bit for bit.

use std::sync::atomic::{AtomicUsize, Ordering};

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lowrank::cones;
use lowrank::driver::{
    read_trace, run, write_trace, Alpha0Policy, Implementation, OutputSpec, RunConfig, RunOutcome,
    Solver, StopRule,
};
use lowrank::io;
use lowrank::linalg::truncated_svd;
use lowrank::maps::{p2gd_step, p2gdr_step, rfd_step, rfdr_step};
use lowrank::problems::{self, generators, InstanceSpec, StartPoint};
use lowrank::{LineSearchParamsF64, RankPolicyF64};

/// Fresh path in the target tmp dir; unique across parallel test binaries
/// and across proptest cases within one.
fn scratch_path(tag: &str, ext: &str) -> std::path::PathBuf {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let k = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!(
        "lowrank-inv-{}-{tag}-{k}.{ext}",
        std::process::id()
    ))
}

/// Shapes small enough to keep dense oracles instant but big enough to have
/// nontrivial complements on both sides.
fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2..=12usize, 2..=12usize)
}

proptest! {
    /// Exact-rank points factor through the truncation without loss, and
    /// truncating at (or past) the full spectrum is the identity.
    #[test]
    fn truncation_recovers_variety_points(seed in any::<u64>(), (m, n) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1 + (seed as usize) % m.min(n);
        let x = generators::in_variety::<f64>(m, n, r, &mut rng);
        let z = x.assemble();
        let policy = RankPolicyF64::default();

        let t = truncated_svd(&z, r, &policy);
        t.validate().unwrap();
        prop_assert_eq!(t.rank(), r);
        let err = (t.assemble() - &z).norm();
        prop_assert!(err <= 1e-10 * (1.0 + z.norm()), "rank-{r} loss {err:.3e}");

        let full = truncated_svd(&z, m.min(n), &policy);
        let err = (full.assemble() - &z).norm();
        prop_assert!(err <= 1e-10 * (1.0 + z.norm()), "full-rank loss {err:.3e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every iteration map keeps the iterate inside the rank-r variety,
    /// strictly decreases the objective, reports a decrease that matches
    /// its own endpoint values, and prices its accepted step as
    /// `β^backtracks · α₀`.
    #[test]
    fn steps_stay_feasible_and_decrease(
        seed in any::<u64>(),
        which in 0..4usize,
        (m, n) in (3..=12usize, 3..=12usize),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1 + (seed as usize) % 3.min(m.min(n) - 1);
        let foot = 1 + (seed as usize >> 8) % r;
        let target = generators::gaussian::<f64>(m, n, &mut rng);
        let obj = problems::make_least_squares(target);
        let x = generators::in_variety::<f64>(m, n, foot, &mut rng);

        let mut params = LineSearchParamsF64::default();
        params.alpha_hi = 4.0; // force the backtracking path to exercise
        let policy = RankPolicyF64::default();
        let step = match which {
            0 => rfd_step(&x, &obj, r, &params, params.alpha_hi, None, &policy),
            1 => p2gd_step(&x, &obj, r, &params, params.alpha_hi, None, &policy),
            2 => rfdr_step(&x, &obj, r, &params, params.alpha_hi, None, &policy),
            _ => p2gdr_step(&x, &obj, r, &params, params.alpha_hi, None, &policy),
        }.unwrap();

        step.next.validate().unwrap();
        prop_assert!(step.next.rank() <= r, "rank {} escaped the bound {r}", step.next.rank());
        prop_assert!(step.f_next < step.f_x, "no strict decrease: {} -> {}", step.f_x, step.f_next);
        assert_relative_eq!(step.decrease, step.f_x - step.f_next, max_relative = 1e-9, epsilon = 1e-12);
        prop_assert!(step.direction_norm > 0.0);
        let priced = params.beta.powi(step.backtracks as i32) * params.alpha_hi;
        assert_relative_eq!(step.accepted_alpha, priced, max_relative = 1e-12);
        prop_assert!(step.accepted_alpha >= params.alpha_lo);
    }

    /// The tangent-cone projection never has smaller norm than the
    /// restricted one, and the tangent norm is exactly the stationarity
    /// measure the driver reports.
    #[test]
    fn tangent_dominates_restricted_and_prices_stationarity(
        seed in any::<u64>(),
        (m, n) in (3..=12usize, 3..=12usize),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1 + (seed as usize) % 3.min(m.min(n) - 1);
        let foot = 1 + (seed as usize >> 8) % r;
        let target = generators::gaussian::<f64>(m, n, &mut rng);
        let obj = problems::make_least_squares(target);
        let x = generators::in_variety::<f64>(m, n, foot, &mut rng);
        let params = LineSearchParamsF64::default();
        let policy = RankPolicyF64::default();

        let restricted = rfd_step(&x, &obj, r, &params, 1.0, None, &policy).unwrap();
        let tangent = p2gd_step(&x, &obj, r, &params, 1.0, None, &policy).unwrap();
        prop_assert!(
            tangent.direction_norm >= restricted.direction_norm * (1.0 - 1e-12),
            "tangent {:.17e} < restricted {:.17e}",
            tangent.direction_norm,
            restricted.direction_norm
        );

        let grad = obj.grad(&x.assemble());
        let s = cones::stationarity_measure(&x, &grad, r, &policy).unwrap();
        assert_relative_eq!(s, tangent.direction_norm, max_relative = 1e-10);
    }
}

proptest! {
    /// Dense MatrixMarket files reproduce every finite double exactly,
    /// including negative zero and subnormals.
    #[test]
    fn matrix_market_round_trip_is_bitwise(
        (m, n) in (1..=8usize, 1..=8usize),
        bits in prop::collection::vec(
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            64,
        ),
    ) {
        let z = DMatrix::from_fn(m, n, |i, j| bits[(j * m + i) % bits.len()]);
        let path = scratch_path("mm", "mtx");
        io::write_matrix_market(&path, &z).unwrap();
        let back = io::read_matrix_market(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back.shape(), z.shape());
        for (a, b) in z.iter().zip(back.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits(), "{:?} reread as {:?}", a, b);
        }
    }

    /// Headerless CSV behaves the same way.
    #[test]
    fn csv_round_trip_is_bitwise(
        (m, n) in (1..=8usize, 1..=8usize),
        bits in prop::collection::vec(
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            64,
        ),
    ) {
        let z = DMatrix::from_fn(m, n, |i, j| bits[(j * m + i) % bits.len()]);
        let path = scratch_path("csv", "csv");
        io::write_csv(&path, &z).unwrap();
        let back = io::read_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back.shape(), z.shape());
        for (a, b) in z.iter().zip(back.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits(), "{:?} reread as {:?}", a, b);
        }
    }

    /// Pattern files carry a boolean mask as exact zeros and ones.
    #[test]
    fn pattern_round_trip_marks_the_same_entries(
        seed in any::<u64>(),
        (m, n) in dims(),
        density in 0.0..=1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = generators::mask(m, n, density, &mut rng);
        let path = scratch_path("pat", "mtx");
        io::write_matrix_market_pattern(&path, &mask).unwrap();
        let back = io::read_matrix_market(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back.shape(), (m, n));
        for j in 0..n {
            for i in 0..m {
                let expect = if mask[(i, j)] { 1.0 } else { 0.0 };
                prop_assert_eq!(back[(i, j)], expect, "entry ({}, {})", i, j);
            }
        }
    }

    /// The factored JSON format reproduces all three factors bit for bit.
    #[test]
    fn factored_json_round_trip_is_bitwise(seed in any::<u64>(), (m, n) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = (seed as usize) % (m.min(n) + 1);
        let x = generators::in_variety::<f64>(m, n, r, &mut rng);
        let path = scratch_path("fac", "json");
        io::write_factored_json(&path, &x).unwrap();
        let back = io::read_factored_json(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back.rank(), x.rank());
        for (a, b) in x.u().iter().zip(back.u().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in x.sigma().iter().zip(back.sigma().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in x.v().iter().zip(back.v().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

/// Two runs of the same config produce identical records, and the JSONL
/// trace carries them losslessly.
#[test]
fn runs_are_deterministic_and_traces_round_trip() {
    for solver in [Solver::Rfd, Solver::Rfdr, Solver::P2gd, Solver::P2gdr] {
        let config = RunConfig {
            solver,
            implementation: Implementation::Reference,
            params: LineSearchParamsF64::default(),
            alpha0: Alpha0Policy::Constant,
            stop: StopRule {
                eps_stationarity: None,
                max_iters: 60,
                max_wall_time: None,
            },
            instance: InstanceSpec::TargetLeastSquares {
                m: 7,
                n: 6,
                target_rank: 2,
                rank_bound: 2,
                seed: 9,
                spectrum: None,
                start: StartPoint::Zero,
            },
            output: OutputSpec::default(),
        };
        let first: RunOutcome<f64> = run(&config).unwrap();
        let second: RunOutcome<f64> = run(&config).unwrap();
        assert_eq!(first.records, second.records, "{solver:?} diverged between runs");
        assert_eq!(first.termination, second.termination);

        let path = scratch_path("trace", "jsonl");
        write_trace(&path, &first.records).unwrap();
        let back = read_trace(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(first.records, back, "{solver:?} trace not lossless");
    }
}
