//! Static mixed (saddle-point) problems on finite-dimensional spaces.
//!
//! A problem couples a strongly monotone primal operator `A` on `R^n` with a
//! Lagrange multiplier constrained to a closed convex box `Λ ⊂ R^m` through a
//! bilinear coupling `b(v, μ) = μ' B v`:
//!
//! ```text
//!   A(u) + η + B'λ = g_rhs,
//!   b(u − k, μ − λ) ≤ 0          for all μ in Λ.
//! ```
//!
//! Vectors on the equality side (`η`, `g_rhs`, `A(u)`) live in the assembled
//! dual representation; `u` and `k` are primal coordinate vectors. The
//! inequality is enforced through its fixed-point characterization
//! `λ = P_Λ(λ + ρ diag(w) B(u − k))`, which drives the projection-Uzawa
//! iteration in [`uzawa_solve`]. The box projection is a componentwise clamp
//! and is the exact projection in every diagonal dual metric, so the pairing
//! weights `w` only tune the per-coordinate ascent step.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for structural invariant checks.
const STRUCT_TOL: f64 = 1e-10;

/// Per-coordinate scalar nonlinearity with its analytic derivative.
#[derive(Clone)]
pub struct DiagonalNonlinearity {
    map: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl DiagonalNonlinearity {
    pub fn new(
        map: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            map: Arc::new(map),
            derivative: Arc::new(derivative),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.map)(x)
    }

    pub fn slope(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }
}

/// Strongly monotone, Lipschitz primal operator `A(u) = K u + φ.(u)` with a
/// symmetric linear part `K` and an optional monotone diagonal nonlinearity.
///
/// The declared constants are measured in the X-norm induced by the Gram
/// matrix (Euclidean when absent): `⟨A(u)−A(v), u−v⟩ ≥ m_A ‖u−v‖_X²` and
/// `‖A(u)−A(v)‖_{X'} ≤ L_A ‖u−v‖_X`.
#[derive(Clone)]
pub struct PrimalOperator {
    linear: DMatrix<f64>,
    nonlinearity: Option<DiagonalNonlinearity>,
    gram: Option<DMatrix<f64>>,
    m_a: f64,
    l_a: f64,
    linear_factor: OnceLock<Option<Cholesky<f64, Dyn>>>,
    gram_factor: OnceLock<Option<Cholesky<f64, Dyn>>>,
}

impl PrimalOperator {
    /// Linear SPD operator; the constants are the extreme generalized
    /// eigenvalues of `(K, G)`.
    pub fn linear_spd(linear: DMatrix<f64>, gram: Option<DMatrix<f64>>) -> Result<Self> {
        let (m_a, l_a) = linalg::gen_eig_range(&linear, gram.as_ref())?;
        Self::with_declared(linear, gram, m_a, l_a)
    }

    /// Linear operator with caller-declared constants.
    pub fn with_declared(
        linear: DMatrix<f64>,
        gram: Option<DMatrix<f64>>,
        m_a: f64,
        l_a: f64,
    ) -> Result<Self> {
        Self::build(linear, None, gram, m_a, l_a)
    }

    /// Operator with a monotone diagonal nonlinearity added to the linear part.
    pub fn with_nonlinearity(
        linear: DMatrix<f64>,
        nonlinearity: DiagonalNonlinearity,
        gram: Option<DMatrix<f64>>,
        m_a: f64,
        l_a: f64,
    ) -> Result<Self> {
        Self::build(linear, Some(nonlinearity), gram, m_a, l_a)
    }

    fn build(
        linear: DMatrix<f64>,
        nonlinearity: Option<DiagonalNonlinearity>,
        gram: Option<DMatrix<f64>>,
        m_a: f64,
        l_a: f64,
    ) -> Result<Self> {
        if !linear.is_square() {
            return Err(Error::InvalidArgument("linear part must be square".into()));
        }
        if !linalg::is_symmetric(&linear, STRUCT_TOL) {
            return Err(Error::Validation("linear part is not symmetric".into()));
        }
        if let Some(g) = &gram {
            if g.nrows() != linear.nrows() {
                return Err(Error::dim("gram matrix", linear.nrows(), g.nrows()));
            }
            if !linalg::is_symmetric(g, STRUCT_TOL) {
                return Err(Error::Validation("gram matrix is not symmetric".into()));
            }
        }
        if !(m_a.is_finite() && l_a.is_finite()) || l_a + STRUCT_TOL < m_a {
            return Err(Error::Validation(format!(
                "operator constants must satisfy m_A <= L_A (got {m_a}, {l_a})"
            )));
        }
        // The linear part must be PSD; with a plain linear operator its
        // smallest generalized eigenvalue is the monotonicity constant.
        let (lo, _) = linalg::gen_eig_range(&linear, gram.as_ref())?;
        let scale = 1.0 + linalg::max_abs(&linear);
        if lo < -STRUCT_TOL * scale {
            return Err(Error::Validation(format!(
                "linear part is not positive semidefinite (min eigenvalue {lo:.3e})"
            )));
        }
        Ok(Self {
            linear,
            nonlinearity,
            gram,
            m_a,
            l_a,
            linear_factor: OnceLock::new(),
            gram_factor: OnceLock::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.linear.nrows()
    }

    pub fn monotonicity(&self) -> f64 {
        self.m_a
    }

    pub fn lipschitz(&self) -> f64 {
        self.l_a
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }

    pub fn linear_part(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }

    /// Applies the operator: `K u + φ.(u)`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.linear * u;
        if let Some(nl) = &self.nonlinearity {
            for (o, ui) in out.iter_mut().zip(u.iter()) {
                *o += nl.eval(*ui);
            }
        }
        out
    }

    /// Returns a new operator `K + c M` over the same space. The constants
    /// shift by the generalized eigenvalue range of `(M, G)` scaled by `c`.
    pub fn augmented(&self, matrix: &DMatrix<f64>, c: f64) -> Result<Self> {
        if matrix.nrows() != self.dimension() {
            return Err(Error::dim("augmenting matrix", self.dimension(), matrix.nrows()));
        }
        let (lo, hi) = if self.gram.as_ref() == Some(matrix) {
            (1.0, 1.0)
        } else {
            linalg::gen_eig_range(matrix, self.gram.as_ref())?
        };
        let shift_lo = (c * lo).min(c * hi);
        let shift_hi = (c * lo).max(c * hi);
        Self::build(
            &self.linear + c * matrix,
            self.nonlinearity.clone(),
            self.gram.clone(),
            self.m_a + shift_lo,
            self.l_a + shift_hi.max(shift_hi.abs()),
        )
    }

    pub fn x_norm(&self, v: &DVector<f64>) -> f64 {
        linalg::x_norm(self.gram.as_ref(), v)
    }

    /// Norm of an assembled (dual) vector: `sqrt(d' G^-1 d)`, Euclidean
    /// without a Gram.
    pub fn dual_norm(&self, d: &DVector<f64>) -> f64 {
        match self.gram_cholesky() {
            Some(chol) => chol.solve(d).dot(d).max(0.0).sqrt(),
            None => d.norm(),
        }
    }

    fn linear_cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.linear_factor
            .get_or_init(|| Cholesky::new(self.linear.clone()))
            .as_ref()
    }

    /// Forces the cached factorization so that clones of this operator
    /// carry it instead of factoring again.
    pub(crate) fn warm_factorization(&self) {
        let _ = self.linear_cholesky();
    }

    fn gram_cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.gram_factor
            .get_or_init(|| self.gram.as_ref().and_then(|g| Cholesky::new(g.clone())))
            .as_ref()
    }
}

/// Coupling form `b(v, μ) = μ' B v` with positive dual-pairing weights.
///
/// `B` is the full discrete coupling (any boundary measures are already
/// folded into its rows); the weights define the Y-norm
/// `‖μ‖_Y² = Σ w_i μ_i²` and scale the dual ascent step.
#[derive(Clone)]
pub struct CouplingForm {
    matrix: DMatrix<f64>,
    weights: DVector<f64>,
    m_b: f64,
    alpha_b: f64,
}

impl CouplingForm {
    pub fn new(
        matrix: DMatrix<f64>,
        weights: DVector<f64>,
        m_b: f64,
        alpha_b: f64,
    ) -> Result<Self> {
        if weights.len() != matrix.nrows() {
            return Err(Error::dim("pairing weights", matrix.nrows(), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Validation("pairing weights must be positive".into()));
        }
        if matrix.nrows() > 0 && !(alpha_b > 0.0) {
            return Err(Error::Validation("inf-sup constant must be positive".into()));
        }
        Ok(Self {
            matrix,
            weights,
            m_b,
            alpha_b,
        })
    }

    /// Degenerate coupling with no multipliers (`m = 0`); the inf-sup
    /// condition is vacuous.
    pub fn empty(primal_dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(0, primal_dim),
            weights: DVector::zeros(0),
            m_b: 0.0,
            alpha_b: 0.0,
        }
    }

    /// Builds a coupling whose constants are the measured extreme singular
    /// values in the declared norms.
    pub fn with_measured_constants(
        matrix: DMatrix<f64>,
        weights: DVector<f64>,
        gram: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let (alpha, m_b) = linalg::coupling_singular_range(&matrix, &weights, gram, -0.5)?;
        if matrix.nrows() > 0 && alpha <= 0.0 {
            return Err(Error::Validation(
                "coupling matrix is rank deficient (inf-sup constant vanishes)".into(),
            ));
        }
        Self::new(matrix, weights, m_b, alpha)
    }

    pub fn multiplier_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn primal_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn continuity(&self) -> f64 {
        self.m_b
    }

    pub fn inf_sup(&self) -> f64 {
        self.alpha_b
    }

    /// `b(v, μ)`.
    pub fn pair(&self, v: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        if self.multiplier_dim() == 0 {
            return 0.0;
        }
        mu.dot(&(&self.matrix * v))
    }

    pub fn y_norm(&self, mu: &DVector<f64>) -> f64 {
        linalg::y_norm(&self.weights, mu)
    }

    /// Verifies full row rank and that the declared constants bracket the
    /// measured singular values.
    pub fn validate(&self, gram: Option<&DMatrix<f64>>) -> Result<()> {
        if self.multiplier_dim() == 0 {
            return Ok(());
        }
        let (lo, hi) = linalg::coupling_singular_range(&self.matrix, &self.weights, gram, -0.5)?;
        if lo <= STRUCT_TOL * hi.max(1.0) {
            return Err(Error::Validation(format!(
                "coupling matrix is rank deficient (sigma_min {lo:.3e})"
            )));
        }
        if self.alpha_b > lo * (1.0 + STRUCT_TOL) + STRUCT_TOL {
            return Err(Error::Validation(format!(
                "declared inf-sup constant {} exceeds measured {lo:.6e}",
                self.alpha_b
            )));
        }
        if self.m_b * (1.0 + STRUCT_TOL) + STRUCT_TOL < hi {
            return Err(Error::Validation(format!(
                "declared continuity constant {} is below measured {hi:.6e}",
                self.m_b
            )));
        }
        Ok(())
    }
}

/// Closed convex box `Λ = { μ : |μ_i| ≤ g_i }` with nonnegative bounds; it
/// always contains the zero vector, and `g_i = 0` degenerates that
/// coordinate to `{0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierSet {
    bounds: DVector<f64>,
}

impl MultiplierSet {
    pub fn box_bounds(bounds: DVector<f64>) -> Result<Self> {
        if bounds.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Validation(
                "multiplier bounds must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { bounds })
    }

    pub fn uniform(dim: usize, bound: f64) -> Result<Self> {
        Self::box_bounds(DVector::from_element(dim, bound))
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &DVector<f64> {
        &self.bounds
    }

    /// Scales the box by a positive factor (`Λ_n = (g_n / g) Λ`).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) {
            return Err(Error::InvalidArgument("scale factor must be nonnegative".into()));
        }
        Self::box_bounds(factor * &self.bounds)
    }

    pub fn contains(&self, mu: &DVector<f64>, tol: f64) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.bounds.iter())
                .all(|(m, g)| m.abs() <= g + tol)
    }
}

/// Euclidean projection onto the box: componentwise clamp to `[-g_i, g_i]`.
pub fn project_multiplier(mu: &DVector<f64>, set: &MultiplierSet) -> Result<DVector<f64>> {
    if mu.len() != set.dim() {
        return Err(Error::dim("project_multiplier", set.dim(), mu.len()));
    }
    Ok(DVector::from_iterator(
        mu.len(),
        mu.iter()
            .zip(set.bounds().iter())
            .map(|(m, g)| m.clamp(-*g, *g)),
    ))
}

/// One static instance of the mixed problem. `history_offset` and `load` are
/// assembled dual vectors; `constraint` is the primal datum `k` entering the
/// inequality side.
#[derive(Clone)]
pub struct StaticMixedInstance {
    pub(crate) operator: PrimalOperator,
    pub(crate) history_offset: DVector<f64>,
    pub(crate) coupling: CouplingForm,
    pub(crate) multipliers: MultiplierSet,
    pub(crate) load: DVector<f64>,
    pub(crate) constraint: DVector<f64>,
}

impl StaticMixedInstance {
    pub fn new(
        operator: PrimalOperator,
        history_offset: DVector<f64>,
        coupling: CouplingForm,
        multipliers: MultiplierSet,
        load: DVector<f64>,
        constraint: DVector<f64>,
    ) -> Result<Self> {
        let n = operator.dimension();
        if coupling.primal_dim() != n {
            return Err(Error::dim("coupling columns", n, coupling.primal_dim()));
        }
        if multipliers.dim() != coupling.multiplier_dim() {
            return Err(Error::dim(
                "multiplier set",
                coupling.multiplier_dim(),
                multipliers.dim(),
            ));
        }
        for (name, v) in [
            ("history offset", &history_offset),
            ("load", &load),
            ("constraint datum", &constraint),
        ] {
            if v.len() != n {
                return Err(Error::dim(name, n, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("{name} contains non-finite entries")));
            }
        }
        Ok(Self {
            operator,
            history_offset,
            coupling,
            multipliers,
            load,
            constraint,
        })
    }

    pub fn operator(&self) -> &PrimalOperator {
        &self.operator
    }

    pub fn coupling(&self) -> &CouplingForm {
        &self.coupling
    }

    pub fn multipliers(&self) -> &MultiplierSet {
        &self.multipliers
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    pub fn history_offset(&self) -> &DVector<f64> {
        &self.history_offset
    }

    pub fn constraint(&self) -> &DVector<f64> {
        &self.constraint
    }

    /// Checks the solvability preconditions: strong monotonicity and, with
    /// multipliers present, full row rank of the coupling.
    pub fn validate(&self) -> Result<()> {
        if !(self.operator.monotonicity() > 0.0) {
            return Err(Error::Validation(format!(
                "operator is not strongly monotone (m_A = {})",
                self.operator.monotonicity()
            )));
        }
        self.coupling.validate(self.operator.gram())
    }

    /// Right-hand side of the primal subproblem for a fixed multiplier.
    fn primal_rhs(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut rhs = &self.load - &self.history_offset;
        if self.coupling.multiplier_dim() > 0 {
            rhs -= self.coupling.matrix().transpose() * lambda;
        }
        rhs
    }
}

/// Dual step-size selection for the projection-Uzawa iteration.
#[derive(Clone, Copy, Debug)]
pub enum StepRule {
    /// Linear operators: `ρ = 2 / (σ_min + σ_max)` of the weighted dual Schur
    /// complement `W^1/2 B K^-1 B' W^1/2` (computed once per solve).
    /// Nonlinear operators: the provably safe bound
    /// `ρ = m_A / σ_max(W^1/2 B G^-1/2)²`.
    Auto,
    Fixed(f64),
}

/// Uzawa iteration controls. `tol` drives the multiplier increment test,
/// `inner_tol` the primal subproblem residual.
#[derive(Clone, Copy, Debug)]
pub struct UzawaParams {
    pub step: StepRule,
    pub tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
}

impl Default for UzawaParams {
    fn default() -> Self {
        Self {
            step: StepRule::Auto,
            tol: 1e-10,
            inner_tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Solution pair with solver statistics.
#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub primal: DVector<f64>,
    pub multiplier: DVector<f64>,
    pub iterations: usize,
    /// Final fixed-point increment `‖λ_{j+1} − λ_j‖_Y`.
    pub residual: f64,
}

/// Solves the primal subproblem `A(u) = rhs` to `tol · (1 + ‖rhs‖)`.
///
/// Linear operators use the cached Cholesky factorization with iterative
/// refinement; nonlinear operators run damped Newton with the analytic
/// diagonal derivative, halving the step on residual increase.
pub fn inner_solve_primal(
    op: &PrimalOperator,
    rhs: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    if rhs.len() != op.dimension() {
        return Err(Error::dim("inner_solve_primal", op.dimension(), rhs.len()));
    }
    if !(op.monotonicity() > 0.0) {
        return Err(Error::Validation(
            "primal solve requires a strongly monotone operator".into(),
        ));
    }
    let target = tol * (1.0 + rhs.norm());
    if op.is_linear() {
        let chol = op.linear_cholesky().ok_or_else(|| Error::Solver {
            context: "Cholesky factorization of the primal operator failed".into(),
            residual: f64::NAN,
        })?;
        let mut u = chol.solve(rhs);
        let mut residual = (rhs - op.linear_part() * &u).norm();
        // One or two refinement passes push the residual to rounding level.
        for _ in 0..3 {
            if residual <= target {
                break;
            }
            let r = rhs - op.linear_part() * &u;
            u += chol.solve(&r);
            residual = (rhs - op.linear_part() * &u).norm();
        }
        if residual > target {
            return Err(Error::Solver {
                context: "primal refinement stalled".into(),
                residual,
            });
        }
        Ok(u)
    } else {
        let n = op.dimension();
        let mut u = DVector::zeros(n);
        let mut residual_vec = op.apply(&u) - rhs;
        let mut residual = residual_vec.norm();
        for _ in 0..100 {
            if residual <= target {
                return Ok(u);
            }
            let mut jac = op.linear_part().clone();
            if let Some(nl) = &op.nonlinearity {
                for i in 0..n {
                    jac[(i, i)] += nl.slope(u[i]);
                }
            }
            let step = Cholesky::new(jac)
                .ok_or(Error::Solver {
                    context: "Newton Jacobian factorization failed".into(),
                    residual,
                })?
                .solve(&residual_vec);
            // Damping: halve until the residual stops increasing.
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let candidate = &u - scale * &step;
                let cand_res = op.apply(&candidate) - rhs;
                if cand_res.norm() < residual || cand_res.norm() <= target {
                    u = candidate;
                    residual_vec = cand_res;
                    residual = residual_vec.norm();
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::Solver {
                    context: "Newton damping exhausted".into(),
                    residual,
                });
            }
        }
        if residual <= target {
            Ok(u)
        } else {
            Err(Error::Solver {
                context: "Newton did not converge within 100 iterations".into(),
                residual,
            })
        }
    }
}

fn auto_step(inst: &StaticMixedInstance, inner_tol: f64) -> Result<f64> {
    let coupling = &inst.coupling;
    let op = &inst.operator;
    if op.is_linear() {
        // Exact extreme eigenvalues of the weighted dual operator; one primal
        // solve per multiplier dof.
        let m = coupling.multiplier_dim();
        let bt = coupling.matrix().transpose();
        let mut schur = DMatrix::zeros(m, m);
        for j in 0..m {
            let col = bt.column(j).into_owned();
            let sol = inner_solve_primal(op, &col, inner_tol)?;
            let image = coupling.matrix() * sol;
            for i in 0..m {
                schur[(i, j)] = image[i];
            }
        }
        for i in 0..m {
            for j in 0..m {
                let w = (coupling.weights()[i] * coupling.weights()[j]).sqrt();
                schur[(i, j)] *= w;
            }
        }
        // Symmetrize against rounding before the eigenvalue sweep.
        let sym = 0.5 * (&schur + schur.transpose());
        let (lo, hi) = linalg::sym_eig_range(&sym);
        if !(hi > 0.0) {
            return Err(Error::Validation(
                "dual operator is singular; cannot select a step size".into(),
            ));
        }
        // A relative floor keeps the step strictly inside the stability
        // interval even when rounding drives the smallest eigenvalue to 0.
        let lo = lo.max(1e-12 * hi);
        Ok(2.0 / (lo + hi))
    } else {
        let (_, sigma_max) = linalg::coupling_singular_range(
            coupling.matrix(),
            coupling.weights(),
            op.gram(),
            0.5,
        )?;
        if !(sigma_max > 0.0) {
            return Err(Error::Validation(
                "coupling matrix vanishes; cannot select a step size".into(),
            ));
        }
        Ok(op.monotonicity() / (sigma_max * sigma_max))
    }
}

/// Projection-Uzawa iteration from a zero multiplier start.
pub fn uzawa_solve(inst: &StaticMixedInstance, params: &UzawaParams) -> Result<SaddleSolution> {
    let start = DVector::zeros(inst.coupling.multiplier_dim());
    uzawa_solve_warm(inst, params, &start)
}

/// Projection-Uzawa iteration warm-started at `lambda0` (projected onto Λ).
///
/// Iterates `u_j = A^-1(g − η − B'λ_j)`, `λ_{j+1} = P_Λ(λ_j + ρ w ∘ B(u_j − k))`
/// until `‖λ_{j+1} − λ_j‖_Y ≤ tol (1 + ‖λ_j‖_Y)`; the returned primal solves
/// the equality exactly for the final multiplier. The step is halved (at most
/// 20 times) when the increment grows over 10 consecutive iterations.
pub fn uzawa_solve_warm(
    inst: &StaticMixedInstance,
    params: &UzawaParams,
    lambda0: &DVector<f64>,
) -> Result<SaddleSolution> {
    if !(params.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    inst.validate()?;
    let m = inst.coupling.multiplier_dim();
    if m == 0 {
        let primal = inner_solve_primal(&inst.operator, &inst.primal_rhs(lambda0), params.inner_tol)?;
        return Ok(SaddleSolution {
            primal,
            multiplier: DVector::zeros(0),
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut rho = match params.step {
        StepRule::Fixed(r) if r > 0.0 => r,
        StepRule::Fixed(r) => {
            return Err(Error::InvalidArgument(format!("step size must be positive (got {r})")))
        }
        StepRule::Auto => auto_step(inst, params.inner_tol)?,
    };

    let weights = inst.coupling.weights();
    let mut lambda = project_multiplier(lambda0, &inst.multipliers)?;
    let mut prev_increment = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut halvings = 0usize;

    for iter in 0..params.max_iter {
        let u = inner_solve_primal(&inst.operator, &inst.primal_rhs(&lambda), params.inner_tol)?;
        let slack = inst.coupling.matrix() * (&u - &inst.constraint);
        let mut next = lambda.clone();
        for i in 0..m {
            next[i] = (lambda[i] + rho * weights[i] * slack[i])
                .clamp(-inst.multipliers.bounds()[i], inst.multipliers.bounds()[i]);
        }
        let increment = inst.coupling.y_norm(&(&next - &lambda));
        if increment <= params.tol * (1.0 + inst.coupling.y_norm(&lambda)) {
            let primal =
                inner_solve_primal(&inst.operator, &inst.primal_rhs(&next), params.inner_tol)?;
            return Ok(SaddleSolution {
                primal,
                multiplier: next,
                iterations: iter + 1,
                residual: increment,
            });
        }
        if increment > prev_increment {
            growth_streak += 1;
            if growth_streak > 10 {
                if halvings >= 20 {
                    return Err(Error::Solver {
                        context: "Uzawa step halving exhausted".into(),
                        residual: increment,
                    });
                }
                rho *= 0.5;
                halvings += 1;
                growth_streak = 0;
            }
        } else {
            growth_streak = 0;
        }
        prev_increment = increment;
        lambda = next;
    }
    Err(Error::Solver {
        context: format!("Uzawa did not converge within {} iterations", params.max_iter),
        residual: prev_increment,
    })
}

/// KKT residuals of a candidate pair.
#[derive(Clone, Debug)]
pub struct KktReport {
    /// `‖A(u) + η + B'λ − g_rhs‖ / (1 + ‖g_rhs‖)`.
    pub equality_residual: f64,
    /// Worst excess of `|λ_i|` over its bound.
    pub max_bound_violation: f64,
    /// Worst per-coordinate sign-consistency defect of the inequality side.
    pub max_consistency_violation: f64,
}

/// Evaluates the discrete KKT system at `(u, λ)`. Coordinates with slack
/// `|B(u−k)|_i > classify_tol` must sit at the matching signed bound; the
/// rest only need feasibility.
pub fn kkt_report(
    inst: &StaticMixedInstance,
    u: &DVector<f64>,
    lambda: &DVector<f64>,
    classify_tol: f64,
) -> KktReport {
    let eq = inst.operator.apply(u) + &inst.history_offset
        + inst.coupling.matrix().transpose() * lambda
        - &inst.load;
    let equality_residual = eq.norm() / (1.0 + inst.load.norm());
    let slack = inst.coupling.matrix() * (u - &inst.constraint);
    let mut bound: f64 = 0.0;
    let mut consistency: f64 = 0.0;
    for i in 0..inst.coupling.multiplier_dim() {
        let g = inst.multipliers.bounds()[i];
        bound = bound.max(lambda[i].abs() - g);
        if slack[i] > classify_tol {
            consistency = consistency.max((lambda[i] - g).abs());
        } else if slack[i] < -classify_tol {
            consistency = consistency.max((lambda[i] + g).abs());
        }
    }
    KktReport {
        equality_residual,
        max_bound_violation: bound.max(0.0),
        max_consistency_violation: consistency,
    }
}

/// Empirical and exact estimates of the structural constants.
#[derive(Clone, Debug)]
pub struct ConstantsReport {
    pub m_a_empirical: f64,
    pub l_a_empirical: f64,
    /// Extreme generalized eigenvalues of the linear part (linear operators).
    pub m_a_exact: Option<f64>,
    pub l_a_exact: Option<f64>,
    pub alpha_b: f64,
    pub m_b: f64,
    pub declared_m_a: f64,
    pub declared_l_a: f64,
    pub declared_alpha_b: f64,
    pub declared_m_b: f64,
    /// Declared constants contradicted by an observation.
    pub violations: Vec<String>,
}

/// Samples random pairs to bound the operator constants and computes the
/// exact singular values of the coupling in the declared norms.
pub fn verify_constants(
    op: &PrimalOperator,
    coupling: &CouplingForm,
    samples: usize,
    seed: u64,
) -> Result<ConstantsReport> {
    use rand::Rng;
    use rand::SeedableRng;
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample required".into()));
    }
    let n = op.dimension();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m_emp = f64::INFINITY;
    let mut l_emp: f64 = 0.0;
    for _ in 0..samples {
        let u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let diff = &u - &v;
        let dx = op.x_norm(&diff);
        if dx < 1e-14 {
            continue;
        }
        let image = op.apply(&u) - op.apply(&v);
        m_emp = m_emp.min(image.dot(&diff) / (dx * dx));
        l_emp = l_emp.max(op.dual_norm(&image) / dx);
    }
    let (m_exact, l_exact) = if op.is_linear() {
        let (lo, hi) = linalg::gen_eig_range(op.linear_part(), op.gram())?;
        m_emp = m_emp.min(lo);
        l_emp = l_emp.max(hi);
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    let (alpha, m_b) =
        linalg::coupling_singular_range(coupling.matrix(), coupling.weights(), op.gram(), -0.5)?;

    let mut violations = Vec::new();
    let slack = STRUCT_TOL * (1.0 + op.lipschitz().abs());
    if m_emp < op.monotonicity() - slack {
        violations.push(format!(
            "observed monotonicity {m_emp:.6e} below declared {}",
            op.monotonicity()
        ));
    }
    if l_emp > op.lipschitz() + slack {
        violations.push(format!(
            "observed Lipschitz {l_emp:.6e} above declared {}",
            op.lipschitz()
        ));
    }
    if coupling.multiplier_dim() > 0 {
        let cslack = STRUCT_TOL * (1.0 + coupling.continuity().abs());
        if alpha < coupling.inf_sup() - cslack {
            violations.push(format!(
                "measured inf-sup {alpha:.6e} below declared {}",
                coupling.inf_sup()
            ));
        }
        if m_b > coupling.continuity() + cslack {
            violations.push(format!(
                "measured continuity {m_b:.6e} above declared {}",
                coupling.continuity()
            ));
        }
    }
    Ok(ConstantsReport {
        m_a_empirical: m_emp,
        l_a_empirical: l_emp,
        m_a_exact: m_exact,
        l_a_exact: l_exact,
        alpha_b: alpha,
        m_b,
        declared_m_a: op.monotonicity(),
        declared_l_a: op.lipschitz(),
        declared_alpha_b: coupling.inf_sup(),
        declared_m_b: coupling.continuity(),
        violations,
    })
}
