//! Memory-kernel time stepping for the evolution mixed problem.
//!
//! The history term `∫_0^t κ(t, s) G u(s) ds` is discretized on a uniform
//! grid by the trapezoid rule. The implicit scheme folds the current-node
//! half-weight into the primal operator, so every step is a static
//! saddle-point instance with a history offset built from past nodes;
//! exponential kernels update that offset by an O(1) recursion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::saddle::{
    uzawa_solve_warm, CouplingForm, MultiplierSet, PrimalOperator, StaticMixedInstance,
    UzawaParams,
};

/// Scalar kernel shape.
#[derive(Clone)]
pub enum KernelKind {
    /// `κ(t, s) = exp(-rate (t − s))` with `rate ≥ 0`.
    Exponential { rate: f64 },
    /// Arbitrary scalar kernel `κ(t, s)`; direct summation only.
    General(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

/// Memory kernel: scalar shape times a symmetric PSD spatial matrix.
#[derive(Clone)]
pub struct MemoryKernel {
    kind: KernelKind,
    spatial: DMatrix<f64>,
    /// History Lipschitz constant bound; 1 for normalized kernels.
    s_bound: f64,
}

impl MemoryKernel {
    pub fn exponential(rate: f64, spatial: DMatrix<f64>) -> Result<Self> {
        if !(rate >= 0.0) {
            return Err(Error::Validation(format!("relaxation rate must be >= 0 (got {rate})")));
        }
        Self::build(KernelKind::Exponential { rate }, spatial, 1.0)
    }

    pub fn general(
        kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        spatial: DMatrix<f64>,
        s_bound: f64,
    ) -> Result<Self> {
        Self::build(KernelKind::General(Arc::new(kernel)), spatial, s_bound)
    }

    fn build(kind: KernelKind, spatial: DMatrix<f64>, s_bound: f64) -> Result<Self> {
        if !spatial.is_square() {
            return Err(Error::InvalidArgument("spatial matrix must be square".into()));
        }
        if !linalg::is_symmetric(&spatial, 1e-10) {
            return Err(Error::Validation("spatial matrix is not symmetric".into()));
        }
        let (lo, _) = linalg::sym_eig_range(&spatial);
        if lo < -1e-10 * (1.0 + linalg::max_abs(&spatial)) {
            return Err(Error::Validation(format!(
                "spatial matrix is not positive semidefinite (min eigenvalue {lo:.3e})"
            )));
        }
        Ok(Self {
            kind,
            spatial,
            s_bound,
        })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn spatial(&self) -> &DMatrix<f64> {
        &self.spatial
    }

    pub fn s_bound(&self) -> f64 {
        self.s_bound
    }

    pub fn dimension(&self) -> usize {
        self.spatial.nrows()
    }

    /// Scalar kernel value `κ(t, s)` for `s ≤ t`.
    pub fn scalar(&self, t: f64, s: f64) -> f64 {
        match &self.kind {
            KernelKind::Exponential { rate } => (-rate * (t - s)).exp(),
            KernelKind::General(k) => k(t, s),
        }
    }
}

/// Uniform grid `t_k = k Δt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive (got {dt})")));
        }
        Ok(Self { dt, steps })
    }

    /// Grid covering `[0, horizon]` with `steps` intervals.
    pub fn with_horizon(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("at least one step required".into()));
        }
        Self::new(horizon / steps as f64, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node_count(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    /// Index of a node coinciding with `t`, if any.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= 1e-9 * (1.0 + t.abs())).then_some(k)
    }

    /// Grid truncated after node `k`.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            dt: self.dt,
            steps: k.min(self.steps),
        }
    }
}

type TimeVector = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Time-dependent mixed problem over a uniform grid.
#[derive(Clone)]
pub struct EvolutionProblem {
    pub(crate) operator: PrimalOperator,
    pub(crate) kernel: MemoryKernel,
    pub(crate) coupling: CouplingForm,
    pub(crate) multipliers: MultiplierSet,
    load: TimeVector,
    constraint: TimeVector,
    grid: TimeGrid,
}

impl EvolutionProblem {
    pub fn new(
        operator: PrimalOperator,
        kernel: MemoryKernel,
        coupling: CouplingForm,
        multipliers: MultiplierSet,
        load: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        constraint: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        grid: TimeGrid,
    ) -> Result<Self> {
        let n = operator.dimension();
        if kernel.dimension() != n {
            return Err(Error::dim("kernel spatial matrix", n, kernel.dimension()));
        }
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
        let problem = Self {
            operator,
            kernel,
            coupling,
            multipliers,
            load: Arc::new(load),
            constraint: Arc::new(constraint),
            grid,
        };
        for k in 0..problem.grid.node_count() {
            let t = problem.grid.time(k);
            if problem.load_at(t).len() != n || problem.constraint_at(t).len() != n {
                return Err(Error::Validation(format!(
                    "load/constraint dimension mismatch at t = {t}"
                )));
            }
        }
        Ok(problem)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn operator(&self) -> &PrimalOperator {
        &self.operator
    }

    pub fn kernel(&self) -> &MemoryKernel {
        &self.kernel
    }

    pub fn load_at(&self, t: f64) -> DVector<f64> {
        (self.load)(t)
    }

    pub fn constraint_at(&self, t: f64) -> DVector<f64> {
        (self.constraint)(t)
    }

    /// Same problem on a grid truncated after node `k`.
    pub fn truncated(&self, k: usize) -> Self {
        let mut shorter = self.clone();
        shorter.grid = self.grid.truncated(k);
        shorter
    }
}

/// Quadrature treatment of the history integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    /// Trapezoid rule; current-node half-weight folded into the operator.
    ImplicitTrapezoid,
    /// Left-rectangle rule over past nodes only; first-order cross-check.
    ExplicitRectangle,
}

/// Per-node solver statistics.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Discrete solution path.
#[derive(Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub primal: Vec<DVector<f64>>,
    pub multiplier: Vec<DVector<f64>>,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn node_count(&self) -> usize {
        self.times.len()
    }
}

/// Running history accumulator for the exponential-kernel recursion.
/// `running` equals the full trapezoid sum through the last seen node.
#[derive(Clone, Debug)]
pub struct HistoryState {
    running: DVector<f64>,
    last_index: usize,
}

impl HistoryState {
    pub fn initial(dim: usize) -> Self {
        Self {
            running: DVector::zeros(dim),
            last_index: 0,
        }
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.running
    }

    pub fn last_index(&self) -> usize {
        self.last_index
    }
}

/// Trapezoid-rule history `Δt Σ'' κ(t_k, t_j) G u_j` over `j = 0..=k` with
/// half-weights at both ends; zero for `k = 0`.
///
/// `prefix` holds `u_0..u_{k-1}` (only the first `k` entries are read) and
/// `current` is `u_k`.
pub fn eval_history_direct(
    prefix: &[DVector<f64>],
    current: &DVector<f64>,
    kernel: &MemoryKernel,
    grid: &TimeGrid,
    k: usize,
) -> Result<DVector<f64>> {
    if prefix.len() < k {
        return Err(Error::InvalidArgument(format!(
            "history prefix holds {} nodes, need {k}",
            prefix.len()
        )));
    }
    let n = kernel.dimension();
    let mut sum = DVector::zeros(n);
    if k == 0 {
        return Ok(sum);
    }
    let t_k = grid.time(k);
    let dt = grid.dt();
    for (j, u) in prefix.iter().enumerate().take(k) {
        let weight = if j == 0 { 0.5 } else { 1.0 };
        sum.axpy(weight * dt * kernel.scalar(t_k, grid.time(j)), u, 1.0);
    }
    sum.axpy(0.5 * dt, current, 1.0);
    Ok(kernel.spatial() * sum)
}

/// Advances the exponential-kernel trapezoid sum by one node:
/// `H_k = e^{-ωΔt} (H_{k-1} + (Δt/2) G u_{k-1}) + (Δt/2) G u_k`.
pub fn advance_recursive(
    state: &HistoryState,
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
    kernel: &MemoryKernel,
    dt: f64,
) -> Result<HistoryState> {
    let rate = match kernel.kind() {
        KernelKind::Exponential { rate } => *rate,
        KernelKind::General(_) => {
            return Err(Error::UnsupportedKernel(
                "recursive history update requires an exponential kernel",
            ))
        }
    };
    if state.running.len() != kernel.dimension() {
        return Err(Error::dim("history state", kernel.dimension(), state.running.len()));
    }
    let decay = (-rate * dt).exp();
    let half = 0.5 * dt;
    let carried = (&state.running + kernel.spatial() * (half * u_prev)) * decay;
    let running = carried + kernel.spatial() * (half * u_curr);
    Ok(HistoryState {
        running,
        last_index: state.last_index + 1,
    })
}

/// History treatment shared by both schemes: weight applied to the newest
/// past node when it leaves the "current" slot.
fn past_weight(scheme: TimeScheme, k: usize) -> f64 {
    match scheme {
        // Trapezoid: node 0 carries the half end-weight, interior nodes 1.
        TimeScheme::ImplicitTrapezoid => {
            if k == 0 {
                0.5
            } else {
                1.0
            }
        }
        TimeScheme::ExplicitRectangle => 1.0,
    }
}

/// Drives the evolution problem node by node through static saddle solves.
///
/// Implicit scheme: at every node `k ≥ 1` the operator is `A + (Δt/2) κ(t_k, t_k) G`
/// and the offset is the past-node part of the trapezoid sum. The `k = 0`
/// instance has an empty history (`η_0 = 0`, bare `A`), matching the exact
/// zero value of the integral at `t = 0`. The multiplier warm-starts from the
/// previous node.
pub fn solve_evolution(problem: &EvolutionProblem, params: &UzawaParams) -> Result<Trajectory> {
    solve_evolution_with(problem, params, TimeScheme::ImplicitTrapezoid)
}

/// [`solve_evolution`] with an explicit scheme choice.
pub fn solve_evolution_with(
    problem: &EvolutionProblem,
    params: &UzawaParams,
    scheme: TimeScheme,
) -> Result<Trajectory> {
    let grid = problem.grid();
    let n = problem.operator.dimension();
    let node_count = grid.node_count();
    let dt = grid.dt();
    let exponential_decay = match problem.kernel.kind() {
        KernelKind::Exponential { rate } => Some((-rate * dt).exp()),
        KernelKind::General(_) => None,
    };

    let mut times = Vec::with_capacity(node_count);
    let mut primal: Vec<DVector<f64>> = Vec::with_capacity(node_count);
    let mut multiplier = Vec::with_capacity(node_count);
    let mut stats = Vec::with_capacity(node_count);

    if problem.operator.is_linear() {
        problem.operator.warm_factorization();
    }

    // Operator with the implicit current-node weight; for exponential
    // kernels κ(t,t) = 1 so one augmented operator serves every node.
    let implicit_op = |kappa_tt: f64| -> Result<PrimalOperator> {
        problem
            .operator
            .augmented(problem.kernel.spatial(), 0.5 * dt * kappa_tt)
    };
    let uniform_implicit = match (scheme, exponential_decay) {
        (TimeScheme::ImplicitTrapezoid, Some(_)) => {
            let op = implicit_op(1.0)?;
            // Clones reuse the factorization across all time steps.
            if op.is_linear() {
                op.warm_factorization();
            }
            Some(op)
        }
        _ => None,
    };

    // Past-part accumulator (dual vector); exponential kernels update it by
    // the same recursion as the full trapezoid sum.
    let mut past = DVector::zeros(n);
    let mut warm = DVector::zeros(problem.coupling.multiplier_dim());

    for k in 0..node_count {
        let t = grid.time(k);
        let offset = if exponential_decay.is_some() {
            past.clone()
        } else {
            // General kernel: direct summation over past nodes.
            let mut sum = DVector::zeros(n);
            for j in 0..k {
                let w = match scheme {
                    TimeScheme::ImplicitTrapezoid => {
                        if j == 0 {
                            0.5
                        } else {
                            1.0
                        }
                    }
                    TimeScheme::ExplicitRectangle => 1.0,
                };
                sum.axpy(w * dt * problem.kernel.scalar(t, grid.time(j)), &primal[j], 1.0);
            }
            problem.kernel.spatial() * sum
        };

        let op = match scheme {
            TimeScheme::ExplicitRectangle => problem.operator.clone(),
            TimeScheme::ImplicitTrapezoid => {
                if k == 0 {
                    problem.operator.clone()
                } else if let Some(ref op) = uniform_implicit {
                    op.clone()
                } else {
                    implicit_op(problem.kernel.scalar(t, t))?
                }
            }
        };

        let instance = StaticMixedInstance::new(
            op,
            offset,
            problem.coupling.clone(),
            problem.multipliers.clone(),
            problem.load_at(t),
            problem.constraint_at(t),
        )
        .map_err(|e| annotate(e, k))?;

        let sol = uzawa_solve_warm(&instance, params, &warm).map_err(|e| annotate(e, k))?;
        warm = sol.multiplier.clone();

        if let Some(decay) = exponential_decay {
            let weight = past_weight(scheme, k) * dt;
            past = (&past + problem.kernel.spatial() * (weight * &sol.primal)) * decay;
        }

        times.push(t);
        primal.push(sol.primal);
        multiplier.push(sol.multiplier);
        stats.push(StepStats {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }

    Ok(Trajectory {
        times,
        primal,
        multiplier,
        stats,
    })
}

fn annotate(e: Error, node: usize) -> Error {
    match e {
        Error::Solver { context, residual } => Error::Solver {
            context: format!("node {node}: {context}"),
            residual,
        },
        Error::Validation(msg) => Error::Validation(format!("node {node}: {msg}")),
        other => other,
    }
}

/// Worst observed ratio of the discrete history Lipschitz bound.
#[derive(Clone, Copy, Debug)]
pub struct LipschitzReport {
    pub worst_ratio: f64,
    pub trials: usize,
}

/// Verifies `‖S u_1(t_k) − S u_2(t_k)‖_G ≤ s Δt Σ_{j≤k} ‖u_1(t_j) − u_2(t_j)‖_G`
/// on random trajectory pairs, where the left side is the trapezoid
/// discretization of the history operator. Reports the worst ratio observed.
pub fn history_lipschitz_check(
    kernel: &MemoryKernel,
    grid: &TimeGrid,
    trials: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    use rand::Rng;
    use rand::SeedableRng;
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial required".into()));
    }
    let n = kernel.dimension();
    let g = kernel.spatial();
    let g_norm = |v: &DVector<f64>| (g * v).dot(v).max(0.0).sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let diff: Vec<DVector<f64>> = (0..grid.node_count())
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut rhs_running = 0.0;
        for k in 0..grid.node_count() {
            rhs_running += g_norm(&diff[k]);
            if k == 0 {
                continue;
            }
            // X-representation of the discrete history difference.
            let mut acc = DVector::zeros(n);
            let t_k = grid.time(k);
            for (j, d) in diff.iter().enumerate().take(k + 1) {
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                acc.axpy(w * grid.dt() * kernel.scalar(t_k, grid.time(j)), d, 1.0);
            }
            let lhs = g_norm(&acc);
            let rhs = kernel.s_bound() * grid.dt() * rhs_running;
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
        }
    }
    Ok(LipschitzReport {
        worst_ratio: worst,
        trials,
    })
}

/// Maximum recursive-vs-direct history gap per unit data norm over random
/// exponential-kernel trajectories.
pub fn recursion_consistency_check(
    kernel: &MemoryKernel,
    grid: &TimeGrid,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    if !matches!(kernel.kind(), KernelKind::Exponential { .. }) {
        return Err(Error::UnsupportedKernel(
            "recursion consistency check requires an exponential kernel",
        ));
    }
    let n = kernel.dimension();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let traj: Vec<DVector<f64>> = (0..grid.node_count())
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let scale = 1.0
            + traj
                .iter()
                .map(|u| (kernel.spatial() * u).norm())
                .fold(0.0, f64::max);
        let mut state = HistoryState::initial(n);
        for k in 1..grid.node_count() {
            state = advance_recursive(&state, &traj[k - 1], &traj[k], kernel, grid.dt())?;
            let direct = eval_history_direct(&traj[..k], &traj[k], kernel, grid, k)?;
            worst = worst.max((state.value() - direct).norm() / scale);
        }
    }
    Ok(worst)
}

/// Observed convergence orders on the scalar benchmark
/// `u(t) + ∫_0^t u ds = 1` (exact solution `e^{-t}`), as `log2` ratios of
/// max-node errors between successive step sizes.
pub fn volterra_convergence_orders(dts: &[f64], scheme: TimeScheme) -> Result<Vec<f64>> {
    if dts.len() < 2 {
        return Err(Error::InvalidArgument("need at least two step sizes".into()));
    }
    let params = UzawaParams {
        tol: 1e-13,
        inner_tol: 1e-14,
        ..UzawaParams::default()
    };
    let mut errors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let steps = (1.0 / dt).round() as usize;
        let grid = TimeGrid::new(dt, steps)?;
        let op = PrimalOperator::linear_spd(DMatrix::from_element(1, 1, 1.0), None)?;
        let kernel = MemoryKernel::exponential(0.0, DMatrix::from_element(1, 1, 1.0))?;
        let problem = EvolutionProblem::new(
            op,
            kernel,
            CouplingForm::empty(1),
            MultiplierSet::uniform(0, 0.0)?,
            |_t| DVector::from_element(1, 1.0),
            |_t| DVector::zeros(1),
            grid,
        )?;
        let traj = solve_evolution_with(&problem, &params, scheme)?;
        let mut err: f64 = 0.0;
        for (k, u) in traj.primal.iter().enumerate() {
            err = err.max((u[0] - (-grid.time(k)).exp()).abs());
        }
        errors.push(err);
    }
    Ok(errors
        .windows(2)
        .map(|pair| (pair[0] / pair[1]).log2())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_kernel(rate: f64, n: usize) -> MemoryKernel {
        MemoryKernel::exponential(rate, DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn direct_history_is_exact_for_constants() {
        // Rate 0 and constant data: trapezoid integrates exactly to t_k G c.
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let kernel = MemoryKernel::exponential(0.0, g.clone()).unwrap();
        let grid = TimeGrid::new(0.25, 8).unwrap();
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let traj: Vec<DVector<f64>> = (0..9).map(|_| c.clone()).collect();
        for k in 1..=8 {
            let h = eval_history_direct(&traj[..k], &traj[k], &kernel, &grid, k).unwrap();
            let expected = &g * &c * grid.time(k);
            assert!((h - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn direct_history_is_zero_at_start() {
        let kernel = unit_kernel(1.0, 3);
        let grid = TimeGrid::new(0.1, 5).unwrap();
        let u0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let h = eval_history_direct(&[], &u0, &kernel, &grid, 0).unwrap();
        assert_eq!(h, DVector::zeros(3));
    }

    #[test]
    fn direct_history_matches_refined_riemann_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        // Piecewise-linear data integrated on a 100x finer midpoint grid.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let kernel = unit_kernel(2.0, 1);
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let traj: Vec<DVector<f64>> = (0..11)
            .map(|_| DVector::from_element(1, rng.gen_range(-1.0..1.0)))
            .collect();
        let k = 10;
        let h = eval_history_direct(&traj[..k], &traj[k], &kernel, &grid, k).unwrap();
        let refine = 100;
        let fine_dt = grid.dt() / refine as f64;
        let t_k = grid.time(k);
        let mut oracle = 0.0;
        for cell in 0..(k * refine) {
            let s = (cell as f64 + 0.5) * fine_dt;
            let j = s / grid.dt();
            let (lo, frac) = (j.floor() as usize, j.fract());
            let value = traj[lo][0] * (1.0 - frac) + traj[lo + 1][0] * frac;
            oracle += fine_dt * (-2.0 * (t_k - s)).exp() * value;
        }
        // Trapezoid on piecewise-linear data vs refined midpoint: O(dt^2).
        assert!((h[0] - oracle).abs() < 5e-3);
    }

    #[test]
    fn recursion_single_step_formula() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let kernel = MemoryKernel::exponential(1.3, g.clone()).unwrap();
        let dt = 0.2;
        let u0 = DVector::from_vec(vec![1.0, -1.0]);
        let u1 = DVector::from_vec(vec![0.5, 2.0]);
        let state = advance_recursive(&HistoryState::initial(2), &u0, &u1, &kernel, dt).unwrap();
        let expected = &g * (0.5 * dt * ((-1.3f64 * dt).exp() * &u0 + &u1));
        assert!((state.value() - expected).norm() < 1e-14);
    }

    #[test]
    fn recursion_rejects_general_kernel() {
        let kernel =
            MemoryKernel::general(|_, _| 1.0, DMatrix::identity(1, 1), 1.0).unwrap();
        let state = HistoryState::initial(1);
        let u = DVector::zeros(1);
        assert!(matches!(
            advance_recursive(&state, &u, &u, &kernel, 0.1),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn recursion_matches_direct_sum() {
        let kernel = unit_kernel(0.7, 2);
        let grid = TimeGrid::new(0.05, 50).unwrap();
        let worst = recursion_consistency_check(&kernel, &grid, 5, 42).unwrap();
        assert!(worst < 1e-12, "worst gap {worst:.3e}");
    }

    #[test]
    fn rate_zero_recursion_is_running_trapezoid() {
        let kernel = unit_kernel(0.0, 1);
        let grid = TimeGrid::new(0.5, 4).unwrap();
        let traj: Vec<DVector<f64>> =
            [1.0, 2.0, 4.0, 0.0, 1.0].iter().map(|v| DVector::from_element(1, *v)).collect();
        let mut state = HistoryState::initial(1);
        for k in 1..5 {
            state = advance_recursive(&state, &traj[k - 1], &traj[k], &kernel, grid.dt()).unwrap();
        }
        // Trapezoid of [1,2,4,0,1] with dt = 1/2.
        let expected = 0.5 * (0.5 + 2.0 + 4.0 + 0.0 + 0.5);
        assert!((state.value()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn volterra_orders_meet_scheme_targets() {
        let dts = [0.1, 0.05, 0.025];
        let implicit = volterra_convergence_orders(&dts, TimeScheme::ImplicitTrapezoid).unwrap();
        assert!(implicit.iter().all(|o| *o >= 1.9), "implicit orders {implicit:?}");
        let explicit = volterra_convergence_orders(&dts, TimeScheme::ExplicitRectangle).unwrap();
        assert!(explicit.iter().all(|o| *o >= 0.9), "explicit orders {explicit:?}");
    }

    #[test]
    fn general_kernel_matches_exponential_path() {
        // The same exponential law passed as a general callable must give
        // the same trajectory through the direct-summation branch.
        let op = PrimalOperator::linear_spd(DMatrix::identity(2, 2), None).unwrap();
        let coupling = CouplingForm::with_measured_constants(
            DMatrix::from_row_slice(1, 2, &[1.0, -0.5]),
            DVector::from_element(1, 1.2),
            None,
        )
        .unwrap();
        let rate = 0.9;
        let build = |kernel: MemoryKernel| {
            EvolutionProblem::new(
                op.clone(),
                kernel,
                coupling.clone(),
                MultiplierSet::uniform(1, 0.3).unwrap(),
                |t| DVector::from_vec(vec![1.0 + t, (2.0 * t).cos()]),
                |_| DVector::zeros(2),
                TimeGrid::new(0.1, 12).unwrap(),
            )
            .unwrap()
        };
        let params = UzawaParams::default();
        let exp_traj = solve_evolution(
            &build(MemoryKernel::exponential(rate, DMatrix::identity(2, 2)).unwrap()),
            &params,
        )
        .unwrap();
        let gen_traj = solve_evolution(
            &build(
                MemoryKernel::general(
                    move |t, s| (-rate * (t - s)).exp(),
                    DMatrix::identity(2, 2),
                    1.0,
                )
                .unwrap(),
            ),
            &params,
        )
        .unwrap();
        for k in 0..exp_traj.node_count() {
            assert!((&exp_traj.primal[k] - &gen_traj.primal[k]).norm() < 1e-11, "node {k}");
            assert!(
                (&exp_traj.multiplier[k] - &gen_traj.multiplier[k]).norm() < 1e-11,
                "node {k}"
            );
        }
    }

    #[test]
    fn zero_data_evolution_stays_zero() {
        let op = PrimalOperator::linear_spd(DMatrix::identity(2, 2), None).unwrap();
        let kernel = unit_kernel(1.0, 2);
        let coupling = CouplingForm::with_measured_constants(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        let problem = EvolutionProblem::new(
            op,
            kernel,
            coupling,
            MultiplierSet::uniform(1, 2.0).unwrap(),
            |_| DVector::zeros(2),
            |_| DVector::zeros(2),
            TimeGrid::new(0.1, 10).unwrap(),
        )
        .unwrap();
        let traj = solve_evolution(&problem, &UzawaParams::default()).unwrap();
        for (u, l) in traj.primal.iter().zip(traj.multiplier.iter()) {
            assert!(u.norm() < 1e-12);
            assert!(l.norm() < 1e-12);
        }
    }

    #[test]
    fn fast_relaxation_approaches_memoryless_solution() {
        // The continuous history term is O(1/rate); the discrete trapezoid
        // adds an O(dt) current-node weight, so compare on a fine grid.
        let op = PrimalOperator::linear_spd(DMatrix::from_element(1, 1, 2.0), None).unwrap();
        let kernel = unit_kernel(1.0e4, 1);
        let problem = EvolutionProblem::new(
            op.clone(),
            kernel,
            CouplingForm::empty(1),
            MultiplierSet::uniform(0, 0.0).unwrap(),
            |_| DVector::from_element(1, 3.0),
            |_| DVector::zeros(1),
            TimeGrid::new(0.001, 50).unwrap(),
        )
        .unwrap();
        let traj = solve_evolution(&problem, &UzawaParams::default()).unwrap();
        let static_u = 3.0 / 2.0;
        let last = traj.primal.last().unwrap()[0];
        assert!((last - static_u).abs() < 1e-3, "got {last}");
    }

    #[test]
    fn truncated_solve_reproduces_prefix_bitwise() {
        let op = PrimalOperator::linear_spd(DMatrix::identity(2, 2), None).unwrap();
        let kernel = unit_kernel(0.5, 2);
        let coupling = CouplingForm::with_measured_constants(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_element(1, 1.5),
            None,
        )
        .unwrap();
        let problem = EvolutionProblem::new(
            op,
            kernel,
            coupling,
            MultiplierSet::uniform(1, 0.4).unwrap(),
            |t| DVector::from_vec(vec![t.sin(), 1.0 + t]),
            |_| DVector::zeros(2),
            TimeGrid::new(0.1, 12).unwrap(),
        )
        .unwrap();
        let full = solve_evolution(&problem, &UzawaParams::default()).unwrap();
        let cut = solve_evolution(&problem.truncated(7), &UzawaParams::default()).unwrap();
        for k in 0..=7 {
            assert_eq!(full.primal[k], cut.primal[k], "node {k}");
            assert_eq!(full.multiplier[k], cut.multiplier[k], "node {k}");
        }
    }

    #[test]
    fn lipschitz_single_node_ratio_is_trapezoid_weight() {
        // Difference concentrated at one interior node with rate 0: the
        // ratio equals that node's trapezoid weight relative to the plain sum.
        let grid = TimeGrid::new(0.2, 4).unwrap();
        let mut diff: Vec<DVector<f64>> = (0..5).map(|_| DVector::zeros(1)).collect();
        diff[0] = DVector::from_element(1, 3.0);
        let k = 3;
        let mut acc = 0.0;
        for (j, d) in diff.iter().enumerate().take(k + 1) {
            let w = if j == 0 || j == k { 0.5 } else { 1.0 };
            acc += w * grid.dt() * d[0];
        }
        let rhs: f64 = grid.dt() * diff.iter().take(k + 1).map(|d| d[0].abs()).sum::<f64>();
        assert!((acc.abs() / rhs - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        let kernel = unit_kernel(1.0, 3);
        let grid = TimeGrid::new(0.1, 15).unwrap();
        let report = history_lipschitz_check(&kernel, &grid, 100, 9).unwrap();
        assert!(report.worst_ratio <= 1.0 + 1e-12, "ratio {}", report.worst_ratio);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn recursive_equals_direct_on_random_trajectories(
            seed in 0u64..1000,
            rate in 0.0f64..3.0,
        ) {
            let kernel = unit_kernel(rate, 2);
            let grid = TimeGrid::new(0.07, 30).unwrap();
            let worst = recursion_consistency_check(&kernel, &grid, 2, seed).unwrap();
            prop_assert!(worst < 1e-12);
        }
    }
}
