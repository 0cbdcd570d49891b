//! Test objectives over matrix space, reproducible instance generation, and
//! the stall instance used to separate the safeguarded solvers from the
//! plain descent maps.
//!
//! All randomness flows through ChaCha8 seeded from the instance seed, with a
//! fixed draw order per instance kind, so an [`InstanceSpec`] builds
//! bit-identical data on every run and platform.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::factored::FactoredMatrix;
use crate::{conv, Scalar};

/// A smooth objective `f : R^{m×n} -> R` with an analytic gradient and an
/// optional gradient-Lipschitz estimate on Frobenius balls.
pub struct Objective<T: Scalar> {
    m: usize,
    n: usize,
    eval: Box<dyn Fn(&DMatrix<T>) -> T>,
    grad: Box<dyn Fn(&DMatrix<T>) -> DMatrix<T>>,
    lipschitz: Option<Box<dyn Fn(&DMatrix<T>, T) -> T>>,
    descriptor: String,
}

impl<T: Scalar> std::fmt::Debug for Objective<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Objective({}, {}x{})", self.descriptor, self.m, self.n)
    }
}

impl<T: Scalar> Objective<T> {
    pub fn new(
        m: usize,
        n: usize,
        eval: impl Fn(&DMatrix<T>) -> T + 'static,
        grad: impl Fn(&DMatrix<T>) -> DMatrix<T> + 'static,
    ) -> Self {
        Self {
            m,
            n,
            eval: Box::new(eval),
            grad: Box::new(grad),
            lipschitz: None,
            descriptor: String::from("custom"),
        }
    }

    pub fn with_lipschitz(mut self, l: impl Fn(&DMatrix<T>, T) -> T + 'static) -> Self {
        self.lipschitz = Some(Box::new(l));
        self
    }

    pub fn with_descriptor(mut self, d: impl Into<String>) -> Self {
        self.descriptor = d.into();
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn eval(&self, x: &DMatrix<T>) -> T {
        debug_assert_eq!(x.shape(), (self.m, self.n));
        (self.eval)(x)
    }

    pub fn grad(&self, x: &DMatrix<T>) -> DMatrix<T> {
        debug_assert_eq!(x.shape(), (self.m, self.n));
        let g = (self.grad)(x);
        debug_assert_eq!(g.shape(), (self.m, self.n));
        g
    }

    /// Upper bound on the gradient's Lipschitz constant over the closed
    /// Frobenius ball of the given center and radius, when known.
    pub fn lipschitz_on_ball(&self, center: &DMatrix<T>, radius: T) -> Option<T> {
        self.lipschitz.as_ref().map(|l| l(center, radius))
    }
}

/// `f(X) = ½‖X − target‖²`. Gradient `X − target`, Lipschitz constant 1.
pub fn make_least_squares<T: Scalar>(target: DMatrix<T>) -> Objective<T> {
    let (m, n) = target.shape();
    let t_eval = target.clone();
    let t_grad = target;
    Objective::new(
        m,
        n,
        move |x| (x - &t_eval).norm_squared() * conv(0.5),
        move |x| x - &t_grad,
    )
    .with_lipschitz(|_, _| T::one())
    .with_descriptor(format!("least_squares({m}x{n})"))
}

/// `f(X) = ½ Σ_{(i,j) observed} (X_ij − target_ij)²`. Gradient is the masked
/// residual, Lipschitz constant 1.
pub fn make_completion<T: Scalar>(target: DMatrix<T>, mask: DMatrix<bool>) -> Objective<T> {
    assert_eq!(target.shape(), mask.shape(), "mask must match target");
    let (m, n) = target.shape();
    let te = target.clone();
    let me = mask.clone();
    let tg = target;
    let mg = mask;
    Objective::new(
        m,
        n,
        move |x| {
            let mut acc = T::zero();
            for j in 0..n {
                for i in 0..m {
                    if me[(i, j)] {
                        let d = x[(i, j)] - te[(i, j)];
                        acc += d * d;
                    }
                }
            }
            acc * conv(0.5)
        },
        move |x| {
            DMatrix::from_fn(m, n, |i, j| {
                if mg[(i, j)] {
                    x[(i, j)] - tg[(i, j)]
                } else {
                    T::zero()
                }
            })
        },
    )
    .with_lipschitz(|_, _| T::one())
    .with_descriptor(format!("completion({m}x{n})"))
}

/// `f(X) = ½ Σ_i (⟨ops_i, X⟩ − b_i)²`. Gradient `Σ_i residual_i ops_i`;
/// the Lipschitz constant is the largest eigenvalue of the Gram matrix
/// `⟨ops_i, ops_j⟩`, computed once at construction.
pub fn make_sensing<T: Scalar>(
    ops: Vec<DMatrix<T>>,
    b: DVector<T>,
) -> Result<Objective<T>, ProblemError> {
    if ops.is_empty() {
        return Err(ProblemError::InvalidParameter(
            "sensing needs at least one measurement operator".into(),
        ));
    }
    if ops.len() != b.len() {
        return Err(ProblemError::InvalidParameter(format!(
            "got {} operators but {} measurements",
            ops.len(),
            b.len()
        )));
    }
    let (m, n) = ops[0].shape();
    if ops.iter().any(|a| a.shape() != (m, n)) {
        return Err(ProblemError::InvalidParameter(
            "all measurement operators must share one shape".into(),
        ));
    }
    let q = ops.len();
    let mut gram = DMatrix::<T>::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let v = ops[i].dot(&ops[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let lmax = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(T::zero(), |a, b| if b > a { b } else { a });

    let ops_e = ops.clone();
    let b_e = b.clone();
    let ops_g = ops;
    let b_g = b;
    Ok(Objective::new(
        m,
        n,
        move |x| {
            let mut acc = T::zero();
            for (a, bi) in ops_e.iter().zip(b_e.iter()) {
                let r = a.dot(x) - *bi;
                acc += r * r;
            }
            acc * conv(0.5)
        },
        move |x| {
            let mut g = DMatrix::zeros(m, n);
            for (a, bi) in ops_g.iter().zip(b_g.iter()) {
                let r = a.dot(x) - *bi;
                g += a * r;
            }
            g
        },
    )
    .with_lipschitz(move |_, _| lmax)
    .with_descriptor(format!("sensing({m}x{n}, q={q})")))
}

/// Instance on which plain projected or retraction-free descent stalls.
///
/// On `(r+1)×(r+1)` matrices with rank bound `r`, take the corner target
/// `E = e_{r+1} e_{r+1}ᵀ` and
///
/// `f(X) = ¼ ‖X_A‖⁴ + ½ ‖X_B − E_B‖² + ½ ‖X_A‖² ‖X_B‖²`,
///
/// where `X_A` is the leading r×r block and `X_B` the remaining entries.
/// Starting from `X₀ = scale · (I_r ⊕ 0)`, the unsafeguarded maps shrink the
/// leading block forever: the negative gradient at every iterate splits into
/// a vanishing component inside the current row and column spaces and a
/// unit-size component that is only reachable after giving up a rank. The
/// limit is the zero matrix, where the true stationarity measure equals 1.
/// One rank reduction escapes to the corner and from there the iterates
/// reach the global minimizer `E`.
///
/// The product term is inert on the stalling trajectory (`X_B` stays zero
/// there, so neither the iterates nor the measured stationarity change), but
/// once the corner entry is active it makes the basin around `E` strongly
/// convex: the leftover leading-block coordinate then contracts geometrically
/// instead of creeping along the flat quartic, so a safeguarded run certifies
/// stationarity shortly after the reduction instead of decaying at the same
/// polynomial rate as the stalled one.
///
/// Along the scaled-identity trajectory the gradient has no coupling blocks,
/// so the tangent-cone projection and its restricted variant coincide
/// exactly; the test suite checks this property rather than assuming it.
///
/// Returns the objective, the start point, and the global minimizer.
pub fn make_apocalypse<T: Scalar>(
    r: usize,
    initial_scale: f64,
) -> Result<(Objective<T>, FactoredMatrix<T>, DMatrix<T>), ProblemError> {
    if r < 1 {
        return Err(ProblemError::UnsupportedRank {
            r,
            supported: "any r >= 1 (instance lives on (r+1)x(r+1) matrices)".into(),
        });
    }
    if !(initial_scale.is_finite() && initial_scale > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "initial_scale must be positive and finite, got {initial_scale}"
        )));
    }
    let d = r + 1;
    let mut target = DMatrix::<T>::zeros(d, d);
    target[(r, r)] = T::one();

    let quarter: T = conv(0.25);
    let half: T = conv(0.5);
    let te = target.clone();
    let tg = target.clone();
    let obj = Objective::new(
        d,
        d,
        move |x: &DMatrix<T>| {
            let a = x.view((0, 0), (r, r)).norm_squared();
            let mut quad = T::zero();
            let mut b = T::zero();
            for j in 0..d {
                for i in 0..d {
                    if i < r && j < r {
                        continue;
                    }
                    let xb = x[(i, j)];
                    let v = xb - te[(i, j)];
                    quad += v * v;
                    b += xb * xb;
                }
            }
            quarter * a * a + half * quad + half * a * b
        },
        move |x: &DMatrix<T>| {
            let a = x.view((0, 0), (r, r)).norm_squared();
            let mut b = T::zero();
            for j in 0..d {
                for i in 0..d {
                    if i < r && j < r {
                        continue;
                    }
                    let xb = x[(i, j)];
                    b += xb * xb;
                }
            }
            DMatrix::from_fn(d, d, |i, j| {
                if i < r && j < r {
                    (a + b) * x[(i, j)]
                } else {
                    x[(i, j)] - tg[(i, j)] + a * x[(i, j)]
                }
            })
        },
    )
    .with_lipschitz(move |center: &DMatrix<T>, radius: T| {
        // Block Hessian at Y: the AA block is (‖Y_A‖² + ‖Y_B‖²)I + 2 y_A y_Aᵀ,
        // the BB block (1 + ‖Y_A‖²)I, the cross block 2 y_B y_Aᵀ. With
        // s = ‖Y‖² the operator norm is at most max(3s, 1 + s) + s <= 1 + 4s.
        let reach = center.norm() + radius;
        let four: T = conv(4.0);
        T::one() + four * reach * reach
    })
    .with_descriptor(format!("apocalypse(r={r})"));

    let scale: T = conv(initial_scale);
    let mut u = DMatrix::<T>::zeros(d, r);
    let mut v = DMatrix::<T>::zeros(d, r);
    for i in 0..r {
        u[(i, i)] = T::one();
        v[(i, i)] = T::one();
    }
    let x0 = FactoredMatrix::from_parts_unchecked(u, DVector::from_element(r, scale), v);
    Ok((obj, x0, target))
}

/// Reproducible sampling primitives. Draw order is part of each generator's
/// contract: entries are filled column by column, row fastest.
pub mod generators {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Dense matrix of i.i.d. standard normal entries.
    pub fn gaussian<T: Scalar>(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<T> {
        let mut out = DMatrix::zeros(m, n);
        for j in 0..n {
            for i in 0..m {
                let g: f64 = StandardNormal.sample(rng);
                out[(i, j)] = conv(g);
            }
        }
        out
    }

    /// `rows × k` matrix with orthonormal columns (thin QR of a Gaussian draw).
    pub fn orthonormal<T: Scalar>(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<T> {
        assert!(k <= rows, "cannot fit {k} orthonormal columns in R^{rows}");
        if k == 0 {
            return DMatrix::zeros(rows, 0);
        }
        gaussian::<T>(rows, k, rng).qr().q()
    }

    /// Factored matrix with the given singular spectrum and random singular
    /// subspaces. The spectrum must be positive and nonincreasing.
    pub fn with_spectrum<T: Scalar>(
        m: usize,
        n: usize,
        spectrum: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> FactoredMatrix<T> {
        let k = spectrum.len();
        let u = orthonormal::<T>(m, k, rng);
        let v = orthonormal::<T>(n, k, rng);
        let sigma = DVector::from_iterator(k, spectrum.iter().map(|&s| conv::<T>(s)));
        FactoredMatrix::from_parts_unchecked(u, sigma, v)
    }

    /// Random point of exact rank `r` with singular values in roughly
    /// `[0.5, 3]`, sorted nonincreasing.
    pub fn in_variety<T: Scalar>(
        m: usize,
        n: usize,
        r: usize,
        rng: &mut ChaCha8Rng,
    ) -> FactoredMatrix<T> {
        if r == 0 {
            return FactoredMatrix::zero(m, n);
        }
        let mut sigma: Vec<f64> = (0..r)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                0.5 + g.abs()
            })
            .collect();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        with_spectrum(m, n, &sigma, rng)
    }

    /// Bernoulli mask with the given density of observed entries.
    pub fn mask(m: usize, n: usize, density: f64, rng: &mut ChaCha8Rng) -> DMatrix<bool> {
        let mut out = DMatrix::from_element(m, n, false);
        for j in 0..n {
            for i in 0..m {
                out[(i, j)] = rng.random::<f64>() < density;
            }
        }
        out
    }
}

fn default_initial_scale() -> f64 {
    0.5
}

/// Where an instance starts its iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    /// The zero matrix (rank 0).
    #[default]
    Zero,
    /// A seeded random point of rank `rank_bound`.
    RandomRankR,
    /// The planted ground truth itself.
    Planted,
}

/// Serializable description of a problem instance. Together with the seed it
/// fully determines the objective, the ground truth, and the start point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    TargetLeastSquares {
        m: usize,
        n: usize,
        /// Rank of the planted target matrix.
        target_rank: usize,
        /// Rank bound handed to the solver.
        rank_bound: usize,
        seed: u64,
        /// Singular values of the target; defaults to `target_rank, …, 2, 1`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
        #[serde(default)]
        start: StartPoint,
    },
    MatrixCompletion {
        m: usize,
        n: usize,
        planted_rank: usize,
        rank_bound: usize,
        /// Probability that an entry is observed.
        mask_density: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
        #[serde(default)]
        start: StartPoint,
    },
    MatrixSensing {
        m: usize,
        n: usize,
        planted_rank: usize,
        rank_bound: usize,
        num_measurements: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
        #[serde(default)]
        start: StartPoint,
    },
    Apocalypse {
        rank_bound: usize,
        #[serde(default = "default_initial_scale")]
        initial_scale: f64,
    },
}

/// The materialized pieces of an [`InstanceSpec`].
pub struct BuiltInstance<T: Scalar> {
    pub objective: Objective<T>,
    pub initial: FactoredMatrix<T>,
    pub rank_bound: usize,
    /// Planted solution when the construction has one.
    pub ground_truth: Option<DMatrix<T>>,
}

impl InstanceSpec {
    pub fn rank_bound(&self) -> usize {
        match self {
            InstanceSpec::TargetLeastSquares { rank_bound, .. }
            | InstanceSpec::MatrixCompletion { rank_bound, .. }
            | InstanceSpec::MatrixSensing { rank_bound, .. }
            | InstanceSpec::Apocalypse { rank_bound, .. } => *rank_bound,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InstanceSpec::TargetLeastSquares { .. } => "target_least_squares",
            InstanceSpec::MatrixCompletion { .. } => "matrix_completion",
            InstanceSpec::MatrixSensing { .. } => "matrix_sensing",
            InstanceSpec::Apocalypse { .. } => "apocalypse",
        }
    }

    fn check_common(
        m: usize,
        n: usize,
        planted: usize,
        rank_bound: usize,
    ) -> Result<(), ProblemError> {
        let lim = m.min(n);
        if m == 0 || n == 0 {
            return Err(ProblemError::InvalidParameter("empty matrix shape".into()));
        }
        if planted > lim {
            return Err(ProblemError::InvalidParameter(format!(
                "planted rank {planted} exceeds min(m, n) = {lim}"
            )));
        }
        if rank_bound == 0 || rank_bound > lim {
            return Err(ProblemError::InvalidParameter(format!(
                "rank bound {rank_bound} must lie in 1..={lim}"
            )));
        }
        Ok(())
    }

    fn resolve_spectrum(planted: usize, spectrum: &Option<Vec<f64>>) -> Result<Vec<f64>, ProblemError> {
        match spectrum {
            None => Ok((0..planted).map(|i| (planted - i) as f64).collect()),
            Some(s) => {
                if s.len() != planted {
                    return Err(ProblemError::InvalidParameter(format!(
                        "spectrum has {} entries for planted rank {planted}",
                        s.len()
                    )));
                }
                let ok = s.iter().all(|x| x.is_finite() && *x > 0.0)
                    && s.windows(2).all(|w| w[0] >= w[1]);
                if !ok {
                    return Err(ProblemError::InvalidParameter(
                        "spectrum must be positive and nonincreasing".into(),
                    ));
                }
                Ok(s.clone())
            }
        }
    }

    fn start_point<T: Scalar>(
        start: StartPoint,
        m: usize,
        n: usize,
        rank_bound: usize,
        planted: &FactoredMatrix<T>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> FactoredMatrix<T> {
        match start {
            StartPoint::Zero => FactoredMatrix::zero(m, n),
            StartPoint::RandomRankR => generators::in_variety(m, n, rank_bound, rng),
            StartPoint::Planted => planted.truncate_to(rank_bound),
        }
    }

    /// Builds the objective, start point, and ground truth. Draw order per
    /// kind: planted factors first, then kind-specific data (mask or
    /// operators), then the start point if it is random.
    pub fn build<T: Scalar>(&self) -> Result<BuiltInstance<T>, ProblemError> {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        match self {
            InstanceSpec::TargetLeastSquares {
                m,
                n,
                target_rank,
                rank_bound,
                seed,
                spectrum,
                start,
            } => {
                Self::check_common(*m, *n, *target_rank, *rank_bound)?;
                let spec = Self::resolve_spectrum(*target_rank, spectrum)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let planted = generators::with_spectrum::<T>(*m, *n, &spec, &mut rng);
                let dense = planted.assemble();
                let initial =
                    Self::start_point(*start, *m, *n, *rank_bound, &planted, &mut rng);
                Ok(BuiltInstance {
                    objective: make_least_squares(dense.clone())
                        .with_descriptor(format!("least_squares({m}x{n}, rank {target_rank})")),
                    initial,
                    rank_bound: *rank_bound,
                    ground_truth: Some(dense),
                })
            }
            InstanceSpec::MatrixCompletion {
                m,
                n,
                planted_rank,
                rank_bound,
                mask_density,
                seed,
                spectrum,
                start,
            } => {
                Self::check_common(*m, *n, *planted_rank, *rank_bound)?;
                if !(0.0..=1.0).contains(mask_density) {
                    return Err(ProblemError::InvalidParameter(format!(
                        "mask density {mask_density} outside [0, 1]"
                    )));
                }
                let spec = Self::resolve_spectrum(*planted_rank, spectrum)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let planted = generators::with_spectrum::<T>(*m, *n, &spec, &mut rng);
                let mask = generators::mask(*m, *n, *mask_density, &mut rng);
                let dense = planted.assemble();
                let initial =
                    Self::start_point(*start, *m, *n, *rank_bound, &planted, &mut rng);
                Ok(BuiltInstance {
                    objective: make_completion(dense.clone(), mask).with_descriptor(format!(
                        "completion({m}x{n}, rank {planted_rank}, density {mask_density})"
                    )),
                    initial,
                    rank_bound: *rank_bound,
                    ground_truth: Some(dense),
                })
            }
            InstanceSpec::MatrixSensing {
                m,
                n,
                planted_rank,
                rank_bound,
                num_measurements,
                seed,
                spectrum,
                start,
            } => {
                Self::check_common(*m, *n, *planted_rank, *rank_bound)?;
                if *num_measurements == 0 {
                    return Err(ProblemError::InvalidParameter(
                        "sensing needs at least one measurement".into(),
                    ));
                }
                let spec = Self::resolve_spectrum(*planted_rank, spectrum)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let planted = generators::with_spectrum::<T>(*m, *n, &spec, &mut rng);
                let dense = planted.assemble();
                let ops: Vec<DMatrix<T>> = (0..*num_measurements)
                    .map(|_| generators::gaussian(*m, *n, &mut rng))
                    .collect();
                let b = DVector::from_iterator(
                    *num_measurements,
                    ops.iter().map(|a| a.dot(&dense)),
                );
                let initial =
                    Self::start_point(*start, *m, *n, *rank_bound, &planted, &mut rng);
                Ok(BuiltInstance {
                    objective: make_sensing(ops, b)?.with_descriptor(format!(
                        "sensing({m}x{n}, rank {planted_rank}, q={num_measurements})"
                    )),
                    initial,
                    rank_bound: *rank_bound,
                    ground_truth: Some(dense),
                })
            }
            InstanceSpec::Apocalypse {
                rank_bound,
                initial_scale,
            } => {
                let (objective, initial, target) =
                    make_apocalypse::<T>(*rank_bound, *initial_scale)?;
                Ok(BuiltInstance {
                    objective,
                    initial,
                    rank_bound: *rank_bound,
                    ground_truth: Some(target),
                })
            }
        }
    }
}
