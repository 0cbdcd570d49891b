//! Thin-SVD representation of low-rank matrices and numerical-rank policies.
//!
//! A matrix of rank `r̲` is stored as `U diag(σ) Vᵀ` with `U` (m×r̲) and `V`
//! (n×r̲) holding orthonormal columns and `σ` strictly positive and
//! nonincreasing. The zero matrix is canonically represented with rank 0 and
//! empty factors. Keeping iterates in this form is what lets the cone
//! projections and the factored step maps work on small matrices instead of
//! dense m×n arrays.

use nalgebra::{DMatrix, DVector};

use crate::error::{FactorError, PolicyError};
use crate::{conv, to_f64, Scalar};

/// Thresholds deciding which singular values count as numerically nonzero.
///
/// A singular value σ_i is treated as zero when
/// `σ_i <= max(abs_tol, rel_tol * σ_1)`. The default keeps everything above
/// `1e-12 * σ_1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankPolicy<T: Scalar> {
    pub abs_tol: T,
    pub rel_tol: T,
}

impl<T: Scalar> Default for RankPolicy<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::zero(),
            rel_tol: conv(1e-12),
        }
    }
}

impl<T: Scalar> RankPolicy<T> {
    pub fn new(abs_tol: T, rel_tol: T) -> Result<Self, PolicyError> {
        let bad = |x: T| !x.is_finite() || x < T::zero();
        if bad(abs_tol) || bad(rel_tol) {
            return Err(PolicyError {
                abs_tol: to_f64(abs_tol),
                rel_tol: to_f64(rel_tol),
            });
        }
        Ok(Self { abs_tol, rel_tol })
    }

    /// Cut-off below which a singular value is treated as zero, given the
    /// largest singular value of the matrix at hand.
    pub fn threshold(&self, sigma_max: T) -> T {
        let rel = self.rel_tol * sigma_max;
        if self.abs_tol > rel {
            self.abs_tol
        } else {
            rel
        }
    }

    /// Numerical rank of a nonincreasing singular-value sequence.
    pub fn numerical_rank(&self, sigma: &[T]) -> usize {
        if sigma.is_empty() {
            return 0;
        }
        let cut = self.threshold(sigma[0]);
        sigma.iter().take_while(|&&s| s > cut).count()
    }
}

/// A matrix held in thin-SVD form `U diag(σ) Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredMatrix<T: Scalar> {
    u: DMatrix<T>,
    sigma: DVector<T>,
    v: DMatrix<T>,
}

impl<T: Scalar> FactoredMatrix<T> {
    /// The zero matrix of the given shape: rank 0, empty factors.
    pub fn zero(m: usize, n: usize) -> Self {
        Self {
            u: DMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        }
    }

    /// Builds a factored matrix after validating the representation
    /// invariants: consistent shapes, rank at most `min(m, n)`, orthonormal
    /// columns, and strictly positive nonincreasing singular values.
    pub fn new(u: DMatrix<T>, sigma: DVector<T>, v: DMatrix<T>) -> Result<Self, FactorError> {
        let r = sigma.len();
        if u.ncols() != r || v.ncols() != r {
            return Err(FactorError::DimensionMismatch {
                u_rows: u.nrows(),
                u_cols: u.ncols(),
                sigma_len: r,
                v_rows: v.nrows(),
                v_cols: v.ncols(),
            });
        }
        let limit = u.nrows().min(v.nrows());
        if r > limit {
            return Err(FactorError::RankTooLarge { rank: r, limit });
        }
        if u.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(FactorError::NonFinite);
        }
        for i in 0..r {
            let s = sigma[i];
            if !s.is_finite() || s <= T::zero() || (i > 0 && s > sigma[i - 1]) {
                return Err(FactorError::InvalidSigma {
                    index: i,
                    value: to_f64(s),
                });
            }
        }
        let out = Self { u, sigma, v };
        out.check_orthonormal()?;
        Ok(out)
    }

    /// Internal constructor for factors already known to satisfy the
    /// invariants (products of orthonormal matrices, canonicalized SVDs).
    pub(crate) fn from_parts_unchecked(u: DMatrix<T>, sigma: DVector<T>, v: DMatrix<T>) -> Self {
        debug_assert_eq!(u.ncols(), sigma.len());
        debug_assert_eq!(v.ncols(), sigma.len());
        Self { u, sigma, v }
    }

    fn check_orthonormal(&self) -> Result<(), FactorError> {
        let r = self.rank();
        if r == 0 {
            return Ok(());
        }
        // 1e-12 * r̲ is the contract for f64; wider types fall back to a
        // machine-epsilon multiple so f32 factors remain constructible.
        let eps_floor = T::default_epsilon() * conv::<T>(64.0) * conv::<T>(r as f64);
        let contract = conv::<T>(1e-12) * conv::<T>(r as f64);
        let tol = if contract > eps_floor { contract } else { eps_floor };
        for (which, f) in [("U", &self.u), ("V", &self.v)] {
            let gram = f.tr_mul(f);
            let resid = (gram - DMatrix::<T>::identity(r, r)).norm();
            if resid > tol {
                return Err(FactorError::NotOrthonormal {
                    which,
                    residual: to_f64(resid),
                    tolerance: to_f64(tol),
                });
            }
        }
        Ok(())
    }

    /// Re-checks all representation invariants. Used by tests and debug paths.
    pub fn validate(&self) -> Result<(), FactorError> {
        Self::new(self.u.clone(), self.sigma.clone(), self.v.clone()).map(|_| ())
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    /// Exact rank of the represented matrix.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<T> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    /// Smallest retained singular value; zero for the rank-0 matrix.
    pub fn sigma_min(&self) -> T {
        if self.rank() == 0 {
            T::zero()
        } else {
            self.sigma[self.rank() - 1]
        }
    }

    /// Largest singular value; zero for the rank-0 matrix.
    pub fn sigma_max(&self) -> T {
        if self.rank() == 0 {
            T::zero()
        } else {
            self.sigma[0]
        }
    }

    /// Frobenius norm, computed from the singular values.
    pub fn norm(&self) -> T {
        self.sigma.norm()
    }

    pub fn norm_squared(&self) -> T {
        self.sigma.norm_squared()
    }

    /// Densifies to `U diag(σ) Vᵀ`.
    pub fn assemble(&self) -> DMatrix<T> {
        if self.rank() == 0 {
            return DMatrix::zeros(self.nrows(), self.ncols());
        }
        let mut us = self.u.clone();
        for j in 0..self.rank() {
            let s = self.sigma[j];
            us.column_mut(j).apply(|x| *x *= s);
        }
        us * self.v.transpose()
    }

    /// Metric projection onto the matrices of rank at most `k`: keeps the `k`
    /// leading singular triples. Among equal singular values the
    /// lowest-indexed triples of the stored factorization are kept, which
    /// makes the choice deterministic.
    pub fn truncate_to(&self, k: usize) -> Self {
        if k >= self.rank() {
            return self.clone();
        }
        Self {
            u: self.u.columns(0, k).clone_owned(),
            sigma: self.sigma.rows(0, k).clone_owned(),
            v: self.v.columns(0, k).clone_owned(),
        }
    }

    /// Scales the matrix by `alpha > 0` without touching the factors.
    ///
    /// Only the singular values are multiplied, so a positive `alpha`
    /// preserves the sorted-positive invariant. Callers needing a sign flip
    /// should negate one factor instead.
    pub fn scale(&self, alpha: T) -> Self {
        Self::from_parts_unchecked(self.u.clone(), &self.sigma * alpha, self.v.clone())
    }

    /// Largest residual of `‖UᵀU − I‖` and `‖VᵀV − I‖`.
    pub fn orthonormality_residual(&self) -> T {
        let r = self.rank();
        if r == 0 {
            return T::zero();
        }
        let id = DMatrix::<T>::identity(r, r);
        let ru = (self.u.tr_mul(&self.u) - &id).norm();
        let rv = (self.v.tr_mul(&self.v) - &id).norm();
        if ru > rv {
            ru
        } else {
            rv
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> FactoredMatrix<f64> {
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let v = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = DVector::from_vec(vec![3.0, 1.0]);
        FactoredMatrix::new(u, s, v).unwrap()
    }

    #[test]
    fn zero_matrix_is_rank_zero_with_empty_factors() {
        let z = FactoredMatrix::<f64>::zero(4, 3);
        assert_eq!(z.rank(), 0);
        assert_eq!(z.shape(), (4, 3));
        assert_eq!(z.sigma_min(), 0.0);
        assert_eq!(z.norm(), 0.0);
        assert_eq!(z.assemble(), DMatrix::zeros(4, 3));
        z.validate().unwrap();
    }

    #[test]
    fn assemble_matches_triple_loop_oracle() {
        // Oracle: entry-wise sum over the singular triples.
        let x = example();
        let dense = x.assemble();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..x.rank() {
                    acc += x.u()[(i, k)] * x.sigma()[k] * x.v()[(j, k)];
                }
                assert!((dense[(i, j)] - acc).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn rank_one_assembles_to_outer_product() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DVector::from_vec(vec![2.5]);
        let x = FactoredMatrix::new(u, s, v).unwrap();
        let d = x.assemble();
        assert_eq!(d[(0, 0)], 2.5);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(1, 0)], 0.0);
        assert_eq!(d[(1, 1)], 0.0);
    }

    #[test]
    fn constructor_rejects_bad_factors() {
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let v = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        // not orthonormal: repeated column
        let err = FactoredMatrix::new(
            DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            DVector::from_vec(vec![2.0, 1.0]),
            v.clone(),
        )
        .unwrap_err();
        assert!(matches!(err, FactorError::NotOrthonormal { .. }));

        // unsorted sigma
        let u2 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let err = FactoredMatrix::new(u2.clone(), DVector::from_vec(vec![1.0, 2.0]), v.clone())
            .unwrap_err();
        assert!(matches!(err, FactorError::InvalidSigma { index: 1, .. }));

        // nonpositive sigma
        let err =
            FactoredMatrix::new(u2.clone(), DVector::from_vec(vec![1.0, 0.0]), v.clone())
                .unwrap_err();
        assert!(matches!(err, FactorError::InvalidSigma { index: 1, .. }));

        // rank exceeding min(m, n)
        let err = FactoredMatrix::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_column_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, FactorError::RankTooLarge { .. }));
        let _ = u;
    }

    #[test]
    fn truncate_keeps_leading_triples() {
        let x = example();
        let t = x.truncate_to(1);
        assert_eq!(t.rank(), 1);
        assert_eq!(t.sigma()[0], 3.0);
        let full = x.truncate_to(5);
        assert_eq!(full, x);
    }

    #[test]
    fn policy_thresholds() {
        let p = RankPolicy::<f64>::default();
        assert_eq!(p.abs_tol, 0.0);
        assert_eq!(p.rel_tol, 1e-12);
        assert_eq!(p.numerical_rank(&[3.0, 2.0, 1e-15]), 2);
        assert_eq!(p.numerical_rank(&[0.0]), 0);
        assert_eq!(p.numerical_rank(&[]), 0);
        let p = RankPolicy::new(0.5, 0.0).unwrap();
        assert_eq!(p.numerical_rank(&[3.0, 0.4]), 1);
        assert!(RankPolicy::new(-1.0, 0.0).is_err());
        assert!(RankPolicy::new(f64::NAN, 0.0).is_err());
    }
}
