//! Projections onto the tangent cone of the bounded-rank variety and onto
//! its restricted subcones.
//!
//! At a point `X = U Σ Vᵀ` of rank `r̲ ≤ r`, an ambient direction `Z` splits
//! against the subspaces spanned by `U` and `V` into four blocks:
//!
//! ```text
//!   A = Uᵀ Z V                (inside both row and column space)
//!   B = Uᵀ Z (I − V Vᵀ)       (new column directions for existing rows)
//!   C = (I − U Uᵀ) Z V        (new row directions for existing columns)
//!   D = (I − U Uᵀ) Z (I − V Vᵀ)
//! ```
//!
//! The tangent cone keeps A, B, C in full plus the best rank-`(r − r̲)`
//! part of D. The restricted cones give up either B or C, which is the
//! price for directions along which a step stays inside the variety without
//! any retraction. Everything here works on the compact products
//! `Ĝ₁ = Uᵀ Z` and `Ĝ₂ = Z V`; orthogonal complements are never formed.

use nalgebra::DMatrix;

use crate::error::ConeError;
use crate::factored::{FactoredMatrix, RankPolicy};
use crate::linalg::truncated_svd;
use crate::Scalar;

/// Block decomposition of an ambient direction at a foot point of rank ≥ 1.
#[derive(Clone, Debug)]
pub struct TangentDecomposition<T: Scalar> {
    /// `Uᵀ Z V`, shape `r̲ × r̲`.
    pub a: DMatrix<T>,
    /// `Ĝ₁ = Uᵀ Z`, shape `r̲ × n`. Contains A and the B block.
    pub g1: DMatrix<T>,
    /// `Ĝ₂ = Z V`, shape `m × r̲`. Contains A and the C block.
    pub g2: DMatrix<T>,
    /// `(I − U Uᵀ) Z (I − V Vᵀ)` in ambient coordinates, shape `m × n`.
    pub d_residual: DMatrix<T>,
    /// `‖Ĝ₁ − A Vᵀ‖`, the mass of the B block.
    pub norm_b: T,
    /// `‖Ĝ₂ − U A‖`, the mass of the C block.
    pub norm_c: T,
}

/// Which part of the direction a projection kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionBranch {
    /// Restricted projection kept the B block (column space fixed).
    BKept,
    /// Restricted projection kept the C block (row space fixed).
    CKept,
    /// Tangent-cone projection; nothing was given up.
    FullTangent,
    /// Foot point has rank zero; the cone is the whole variety and the
    /// projection is a plain truncated SVD.
    ZeroFoot,
}

/// Result of projecting an ambient direction.
#[derive(Clone, Debug)]
pub struct ConeProjection<T: Scalar> {
    /// The projected matrix in factored form. Rank ≤ r for the restricted
    /// and zero-foot branches; the full tangent cone can reach r + r̲.
    pub value: FactoredMatrix<T>,
    /// `‖value‖`, accumulated from the block norms rather than re-measured.
    pub norm: T,
    pub branch: ProjectionBranch,
}

fn check_shapes<T: Scalar>(
    x: &FactoredMatrix<T>,
    z: &DMatrix<T>,
    r: usize,
) -> Result<(), ConeError> {
    if x.shape() != z.shape() {
        return Err(ConeError::ShapeMismatch {
            lhs: x.shape(),
            rhs: z.shape(),
        });
    }
    if x.rank() > r {
        return Err(ConeError::RankExceedsBound {
            rank: x.rank(),
            bound: r,
        });
    }
    Ok(())
}

/// Splits `z` into its blocks at the foot point `x`, which must have rank
/// at least 1 (at rank 0 there are no subspaces to split against; use
/// [`project_zero_foot`]).
pub fn decompose<T: Scalar>(
    z: &DMatrix<T>,
    x: &FactoredMatrix<T>,
) -> Result<TangentDecomposition<T>, ConeError> {
    check_shapes(x, z, x.rank())?;
    if x.rank() == 0 {
        return Err(ConeError::ZeroFoot);
    }
    let u = x.u();
    let v = x.v();
    let g1 = u.transpose() * z;
    let g2 = z * v;
    let a = &g1 * v;
    let norm_b = (&g1 - &a * v.transpose()).norm();
    let norm_c = (&g2 - u * &a).norm();
    // U Ĝ₁ + (Ĝ₂ − U A) Vᵀ covers everything except the D block.
    let inside = u * &g1 + (&g2 - u * &a) * v.transpose();
    let d_residual = z - inside;
    Ok(TangentDecomposition {
        a,
        g1,
        g2,
        d_residual,
        norm_b,
        norm_c,
    })
}

/// Sum of the kept singular values squared, plus the truncation itself.
fn truncate_d<T: Scalar>(
    d_residual: &DMatrix<T>,
    budget: usize,
    policy: &RankPolicy<T>,
) -> (FactoredMatrix<T>, T) {
    if budget == 0 {
        let (m, n) = d_residual.shape();
        return (FactoredMatrix::zero(m, n), T::zero());
    }
    let t = truncated_svd(d_residual, budget, policy);
    let ns = t.norm_squared();
    (t, ns)
}

/// Factors the assembled dense value so downstream code can keep working
/// with thin SVD triples.
fn finish<T: Scalar>(
    mut value: DMatrix<T>,
    trunc: &FactoredMatrix<T>,
    norm_sq: T,
    branch: ProjectionBranch,
    policy: &RankPolicy<T>,
) -> ConeProjection<T> {
    if trunc.rank() > 0 {
        value += trunc.assemble();
    }
    let budget = value.nrows().min(value.ncols());
    ConeProjection {
        value: truncated_svd(&value, budget, policy),
        norm: norm_sq.sqrt(),
        branch,
    }
}

/// Projects `z` onto the tangent cone of the rank-`r` variety at `x`.
///
/// Keeps all of A, B, C plus the best rank-`(r − r̲)` approximation of the
/// D block. At a smooth point (`r̲ = r`) this is the classical tangent-space
/// projection; at a rank-0 foot the cone is the whole variety. The returned
/// norm is the stationarity measure when `z` is the negative gradient.
pub fn project_tangent<T: Scalar>(
    z: &DMatrix<T>,
    x: &FactoredMatrix<T>,
    r: usize,
    policy: &RankPolicy<T>,
) -> Result<ConeProjection<T>, ConeError> {
    check_shapes(x, z, r)?;
    if x.rank() == 0 {
        return Ok(project_zero_foot(z, r, policy));
    }
    let dec = decompose(z, x)?;
    let (trunc, d_sq) = truncate_d(&dec.d_residual, r - x.rank(), policy);
    let u = x.u();
    let vt = x.v().transpose();
    let inside = u * &dec.g1 + (&dec.g2 - u * &dec.a) * vt;
    let norm_sq =
        dec.a.norm_squared() + dec.norm_b * dec.norm_b + dec.norm_c * dec.norm_c + d_sq;
    Ok(finish(
        inside,
        &trunc,
        norm_sq,
        ProjectionBranch::FullTangent,
        policy,
    ))
}

/// Projects `z` onto the restricted tangent cone at `x`, the subcone along
/// which `X + α G` stays inside the variety for every step size.
///
/// Keeps A, the larger of the B and C blocks (B on a tie), and the best
/// rank-`(r − r̲)` part of D. Its norm is never smaller than the full
/// tangent projection divided by √2. The foot must have rank ≥ 1; at rank 0
/// use [`project_zero_foot`], where nothing is given up.
pub fn project_restricted<T: Scalar>(
    z: &DMatrix<T>,
    x: &FactoredMatrix<T>,
    r: usize,
    policy: &RankPolicy<T>,
) -> Result<ConeProjection<T>, ConeError> {
    check_shapes(x, z, r)?;
    if x.rank() == 0 {
        return Err(ConeError::ZeroFoot);
    }
    let dec = decompose(z, x)?;
    let (trunc, d_sq) = truncate_d(&dec.d_residual, r - x.rank(), policy);
    let a_sq = dec.a.norm_squared();
    if dec.norm_b >= dec.norm_c {
        // A and B together collapse to U Ĝ₁.
        let value = x.u() * &dec.g1;
        let norm_sq = a_sq + dec.norm_b * dec.norm_b + d_sq;
        Ok(finish(value, &trunc, norm_sq, ProjectionBranch::BKept, policy))
    } else {
        // A and C together collapse to Ĝ₂ Vᵀ.
        let value = &dec.g2 * x.v().transpose();
        let norm_sq = a_sq + dec.norm_c * dec.norm_c + d_sq;
        Ok(finish(value, &trunc, norm_sq, ProjectionBranch::CKept, policy))
    }
}

/// Projection onto the variety's tangent cone at the zero matrix, which is
/// the variety itself: the best rank-`r` approximation of `z`.
pub fn project_zero_foot<T: Scalar>(
    z: &DMatrix<T>,
    r: usize,
    policy: &RankPolicy<T>,
) -> ConeProjection<T> {
    let t = truncated_svd(z, r, policy);
    let norm = t.norm();
    ConeProjection {
        value: t,
        norm,
        branch: ProjectionBranch::ZeroFoot,
    }
}

/// Stationarity measure at `x`: the norm of the tangent-cone projection of
/// the negative gradient. Zero exactly at the points admitting no feasible
/// first-order descent direction. Computed from the block norms alone; the
/// projected matrix is never assembled.
pub fn stationarity_measure<T: Scalar>(
    x: &FactoredMatrix<T>,
    grad: &DMatrix<T>,
    r: usize,
    policy: &RankPolicy<T>,
) -> Result<T, ConeError> {
    check_shapes(x, grad, r)?;
    let neg = -grad;
    if x.rank() == 0 {
        return Ok(truncated_svd(&neg, r, policy).norm());
    }
    let dec = decompose(&neg, x)?;
    let budget = r - x.rank();
    let d_sq = if budget == 0 {
        T::zero()
    } else {
        truncated_svd(&dec.d_residual, budget, policy).norm_squared()
    };
    let s_sq = dec.a.norm_squared() + dec.norm_b * dec.norm_b + dec.norm_c * dec.norm_c + d_sq;
    Ok(s_sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::generators;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e11_foot() -> FactoredMatrix<f64> {
        FactoredMatrix::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn hand_worked_two_by_two() {
        let x = e11_foot();
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let policy = RankPolicy::default();

        let dec = decompose(&z, &x).unwrap();
        assert_relative_eq!(dec.a[(0, 0)], 1.0);
        assert_relative_eq!(dec.norm_b, 2.0);
        assert_relative_eq!(dec.norm_c, 3.0);
        let d_expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0]);
        assert_relative_eq!((dec.d_residual - d_expect).norm(), 0.0, epsilon = 1e-14);

        // r = 1: no room for the D block
        let pt = project_tangent(&z, &x, 1, &policy).unwrap();
        let t_expect = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 0.0]);
        assert_relative_eq!((pt.value.assemble() - t_expect).norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!(pt.norm, 14.0_f64.sqrt(), epsilon = 1e-14);
        assert_eq!(pt.branch, ProjectionBranch::FullTangent);

        let pr = project_restricted(&z, &x, 1, &policy).unwrap();
        let r_expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 0.0]);
        assert_relative_eq!((pr.value.assemble() - r_expect).norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!(pr.norm, 10.0_f64.sqrt(), epsilon = 1e-14);
        assert_eq!(pr.branch, ProjectionBranch::CKept);
        assert!(pr.value.rank() <= 1);

        // sandwich: restricted norm within factor √2 of the tangent norm
        assert!(pr.norm >= pt.norm / 2.0_f64.sqrt());

        // r = 2: the D block fits entirely
        let pt2 = project_tangent(&z, &x, 2, &policy).unwrap();
        assert_relative_eq!((pt2.value.assemble() - &z).norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!(pt2.norm, 30.0_f64.sqrt(), epsilon = 1e-14);

        let pr2 = project_restricted(&z, &x, 2, &policy).unwrap();
        let r2_expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 4.0]);
        assert_relative_eq!((pr2.value.assemble() - r2_expect).norm(), 0.0, epsilon = 1e-13);
        assert_relative_eq!(pr2.norm, 26.0_f64.sqrt(), epsilon = 1e-14);
        assert!(pr2.value.rank() <= 2);
    }

    #[test]
    fn direction_equal_to_foot_has_only_a_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = generators::in_variety::<f64>(6, 5, 2, &mut rng);
        let dec = decompose(&x.assemble(), &x).unwrap();
        assert!(dec.norm_b <= 1e-12);
        assert!(dec.norm_c <= 1e-12);
        assert!(dec.d_residual.norm() <= 1e-12);
        // A recovers Σ in the factor basis
        let mut sig = DMatrix::zeros(2, 2);
        sig[(0, 0)] = x.sigma()[0];
        sig[(1, 1)] = x.sigma()[1];
        assert!((dec.a - sig).norm() <= 1e-12);

        // with B = C = 0 either restricted branch reproduces the direction
        let pr = project_restricted(&x.assemble(), &x, 2, &RankPolicy::default()).unwrap();
        assert!((pr.value.assemble() - x.assemble()).norm() <= 1e-12);
    }

    #[test]
    fn tie_between_b_and_c_keeps_b() {
        let x = e11_foot();
        // symmetric direction: ‖B‖ = ‖C‖ = 2
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 0.0]);
        let pr = project_restricted(&z, &x, 1, &RankPolicy::default()).unwrap();
        assert_eq!(pr.branch, ProjectionBranch::BKept);
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        assert_relative_eq!((pr.value.assemble() - expect).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn decomposition_blocks_are_orthogonal_pieces_of_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let policy = RankPolicy::default();
        for trial in 0..50 {
            let (m, n) = (4 + trial % 5, 3 + trial % 6);
            let rk = 1 + trial % 3.min(m.min(n) - 1);
            let x = generators::in_variety::<f64>(m, n, rk, &mut rng);
            let z = generators::gaussian(m, n, &mut rng);
            let dec = decompose(&z, &x).unwrap();

            // the four blocks rebuild z
            let u = x.u();
            let rebuilt =
                u * &dec.g1 + (&dec.g2 - u * &dec.a) * x.v().transpose() + &dec.d_residual;
            assert!((rebuilt - &z).norm() <= 1e-12 * (1.0 + z.norm()));

            // Pythagoras across the orthogonal split
            let total = dec.a.norm_squared()
                + dec.norm_b * dec.norm_b
                + dec.norm_c * dec.norm_c
                + dec.d_residual.norm_squared();
            assert!((total - z.norm_squared()).abs() <= 1e-8 * (1.0 + z.norm_squared()));

            // D lives in the orthogonal complements on both sides
            assert!((u.transpose() * &dec.d_residual).norm() <= 1e-10 * (1.0 + z.norm()));
            assert!((&dec.d_residual * x.v()).norm() <= 1e-10 * (1.0 + z.norm()));

            // full tangent projection with maximal budget returns z itself
            let full = project_tangent(&z, &x, m.min(n), &policy).unwrap();
            assert!((full.value.assemble() - &z).norm() <= 1e-10 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn projection_norms_match_assembled_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let policy = RankPolicy::default();
        for trial in 0..60 {
            let (m, n) = (5 + trial % 4, 4 + trial % 5);
            let r = 1 + trial % 3;
            let rk = 1 + trial % r.max(1);
            let x = generators::in_variety::<f64>(m, n, rk, &mut rng);
            let z = generators::gaussian(m, n, &mut rng);
            let pt = project_tangent(&z, &x, r, &policy).unwrap();
            let pr = project_restricted(&z, &x, r, &policy).unwrap();
            assert!((pt.norm - pt.value.norm()).abs() <= 1e-10 * (1.0 + pt.norm));
            assert!((pr.norm - pr.value.norm()).abs() <= 1e-10 * (1.0 + pr.norm));
            assert!(pr.value.rank() <= r, "restricted projection is feasible");

            let s = stationarity_measure(&x, &(-&z), r, &policy).unwrap();
            assert!((s - pt.norm).abs() <= 1e-10 * (1.0 + pt.norm));
        }
    }

    #[test]
    fn projections_are_cone_projections() {
        // projection onto a closed cone K satisfies ⟨z, P z⟩ = ‖P z‖²
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let policy = RankPolicy::default();
        for trial in 0..60 {
            let (m, n) = (6, 5);
            let r = 1 + trial % 3;
            let rk = 1 + trial % r.max(1);
            let x = generators::in_variety::<f64>(m, n, rk, &mut rng);
            let z = generators::gaussian(m, n, &mut rng);
            for proj in [
                project_tangent(&z, &x, r, &policy).unwrap(),
                project_restricted(&z, &x, r, &policy).unwrap(),
            ] {
                let inner = z.dot(&proj.value.assemble());
                let nsq = proj.norm * proj.norm;
                assert!(
                    (inner - nsq).abs() <= 1e-9 * (1.0 + nsq),
                    "⟨z, Pz⟩ = {inner} vs ‖Pz‖² = {nsq}"
                );
                // projections never grow the norm
                assert!(proj.norm <= z.norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn zero_foot_matches_truncated_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let policy = RankPolicy::default();
        let z = generators::gaussian::<f64>(7, 6, &mut rng);
        let x = FactoredMatrix::zero(7, 6);

        // restricted projection refuses rank-0 feet and says where to go
        assert!(matches!(
            project_restricted(&z, &x, 3, &policy),
            Err(ConeError::ZeroFoot)
        ));
        assert!(matches!(decompose(&z, &x), Err(ConeError::ZeroFoot)));

        let via_tangent = project_tangent(&z, &x, 3, &policy).unwrap();
        let direct = project_zero_foot(&z, 3, &policy);
        assert_eq!(via_tangent.branch, ProjectionBranch::ZeroFoot);
        assert!((via_tangent.value.assemble() - direct.value.assemble()).norm() <= 1e-12);
        assert!((via_tangent.norm - direct.norm).abs() <= 1e-12);
        assert_eq!(direct.value.rank(), 3);

        let s = stationarity_measure(&x, &(-&z), 3, &policy).unwrap();
        assert!((s - direct.norm).abs() <= 1e-12);
    }

    #[test]
    fn zero_direction_projects_to_zero() {
        let x = e11_foot();
        let z = DMatrix::<f64>::zeros(2, 2);
        let policy = RankPolicy::default();
        let pt = project_tangent(&z, &x, 1, &policy).unwrap();
        assert_eq!(pt.norm, 0.0);
        assert_eq!(pt.value.rank(), 0);
        let s = stationarity_measure(&x, &z, 1, &policy).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn shape_and_rank_errors() {
        let x = e11_foot();
        let z = DMatrix::<f64>::zeros(3, 2);
        let policy = RankPolicy::default();
        assert!(matches!(
            project_tangent(&z, &x, 1, &policy),
            Err(ConeError::ShapeMismatch { .. })
        ));
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            project_tangent(&z, &x, 0, &policy),
            Err(ConeError::RankExceedsBound { .. })
        ));
    }
}
