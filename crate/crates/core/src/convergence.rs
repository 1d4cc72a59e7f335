//! Perturbation families, paired-solve error tables, Mosco-set checks and
//! the data-stability ratio.
//!
//! A family indexes perturbed copies of a base contact model by
//! `n ∈ {n_1, ..., n_K}`; the default law scales every datum by
//! `(1 + 1/n)`, so the operator gap `F_n = 2|β_n − β| + d|η_n − η|` and the
//! kernel gap `m |ω_n − ω|` both vanish like `1/n`. Errors are measured
//! against a reference solve of the base model at a tighter tolerance.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem2d::{assemble, ContactModel};
use crate::history::{solve_evolution, TimeGrid};
use crate::linalg;
use crate::saddle::{
    project_multiplier, uzawa_solve, MultiplierSet, StaticMixedInstance, UzawaParams,
};

const SPACE_DIM: f64 = 2.0;

/// Per-parameter perturbation law.
#[derive(Clone)]
pub enum ScheduleRule {
    /// `x_n = x (1 + 1/n)`, the default.
    Reciprocal,
    /// `x_n = x`.
    Constant,
    /// `x_n = factor(n) · x`.
    Factor(Arc<dyn Fn(u32) -> f64 + Send + Sync>),
}

impl ScheduleRule {
    fn apply(&self, x: f64, n: u32) -> f64 {
        match self {
            ScheduleRule::Reciprocal => x * (1.0 + 1.0 / n as f64),
            ScheduleRule::Constant => x,
            ScheduleRule::Factor(f) => x * f(n),
        }
    }
}

/// Rules for each perturbed datum.
#[derive(Clone)]
pub struct FamilyOverrides {
    pub beta: ScheduleRule,
    pub eta: ScheduleRule,
    pub omega: ScheduleRule,
    pub g: ScheduleRule,
    pub body: ScheduleRule,
    pub traction: ScheduleRule,
}

impl Default for FamilyOverrides {
    fn default() -> Self {
        Self {
            beta: ScheduleRule::Reciprocal,
            eta: ScheduleRule::Reciprocal,
            omega: ScheduleRule::Reciprocal,
            g: ScheduleRule::Reciprocal,
            body: ScheduleRule::Reciprocal,
            traction: ScheduleRule::Reciprocal,
        }
    }
}

/// One indexed member with its gap bookkeeping.
#[derive(Clone)]
pub struct IndexEntry {
    pub n: u32,
    pub model: ContactModel,
    /// Operator gap `2|β_n − β| + d|η_n − η|`.
    pub f_n: f64,
    /// Kernel-rate gap `|ω_n − ω|`; the windowed constant is `m` times this.
    pub omega_gap: f64,
    pub g_n: f64,
}

/// Uniform structural bounds witnessed across the family.
#[derive(Clone, Copy, Debug)]
pub struct UniformWitnesses {
    pub m0: f64,
    pub l0: f64,
    pub s0: f64,
    pub alpha0: f64,
    pub m_b0: f64,
}

#[derive(Clone)]
pub struct PerturbationFamily {
    pub base: ContactModel,
    pub entries: Vec<IndexEntry>,
    pub witnesses: UniformWitnesses,
}

/// Materializes the indexed models and records the uniform witnesses
/// (`m0 = 2 min β_n`, `L0 = max(2β_n + 2η_n)`, `s0 = 1`, coupling constants
/// from the shared assembled coupling).
pub fn build_family(
    base: &ContactModel,
    schedule: &[u32],
    overrides: &FamilyOverrides,
) -> Result<PerturbationFamily> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("schedule must not be empty".into()));
    }
    if schedule[0] < 1 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "schedule must be strictly increasing with indices >= 1".into(),
        ));
    }
    let mut entries = Vec::with_capacity(schedule.len());
    let mut min_beta = f64::INFINITY;
    let mut max_lip: f64 = 0.0;
    for &n in schedule {
        let mut model = base.clone();
        let beta_n = overrides.beta.apply(base.material.beta, n);
        let eta_n = overrides.eta.apply(base.material.eta, n);
        let omega_n = overrides.omega.apply(base.material.omega, n);
        let g_n = overrides.g.apply(base.friction_bound, n);
        if !(beta_n > 0.0) {
            return Err(Error::Validation(format!(
                "member n = {n} has beta_n = {beta_n}; the uniform monotonicity bound vanishes"
            )));
        }
        if g_n < 0.0 || (g_n == 0.0) != (base.friction_bound == 0.0) {
            return Err(Error::Validation(format!(
                "member n = {n} has friction bound {g_n}; scaling against {} is ill-posed",
                base.friction_bound
            )));
        }
        model.material = crate::fem2d::Material::new(beta_n, eta_n, omega_n)?;
        model.friction_bound = g_n;
        let body_factor = overrides.body.apply(1.0, n);
        let traction_factor = overrides.traction.apply(1.0, n);
        for v in model.loads.body.iter_mut() {
            v[0] *= body_factor;
            v[1] *= body_factor;
        }
        for v in model.loads.traction.iter_mut() {
            v[0] *= traction_factor;
            v[1] *= traction_factor;
        }
        min_beta = min_beta.min(beta_n);
        max_lip = max_lip.max(2.0 * beta_n + SPACE_DIM * eta_n);
        entries.push(IndexEntry {
            n,
            f_n: 2.0 * (beta_n - base.material.beta).abs()
                + SPACE_DIM * (eta_n - base.material.eta).abs(),
            omega_gap: (omega_n - base.material.omega).abs(),
            g_n,
            model,
        });
    }
    // The coupling form is shared across the family; its constants are the
    // measured singular values of the base assembly.
    let assembled = assemble(base)?;
    let witnesses = UniformWitnesses {
        m0: 2.0 * min_beta.min(base.material.beta),
        l0: max_lip.max(2.0 * base.material.beta + SPACE_DIM * base.material.eta),
        s0: 1.0,
        alpha0: assembled.coupling().inf_sup(),
        m_b0: assembled.coupling().continuity(),
    };
    Ok(PerturbationFamily {
        base: base.clone(),
        entries,
        witnesses,
    })
}

/// One table row per (index, probe time).
#[derive(Clone, Copy, Debug)]
pub struct TableRow {
    pub n: u32,
    pub t: f64,
    pub e_u: f64,
    pub e_lambda: f64,
    pub f_n: f64,
    pub f_n_m: f64,
    pub g_n: f64,
}

/// Error table with fitted log-log slopes per probe time.
#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub rows: Vec<TableRow>,
    /// `(t, slope of e_u, slope of e_lambda)`; `NaN` when a fit degenerates.
    pub slopes: Vec<(f64, f64, f64)>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("n, t, e_u, e_lambda, F_n, F_n_m, g_n\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}",
                r.n, r.t, r.e_u, r.e_lambda, r.f_n, r.f_n_m, r.g_n
            );
        }
        out
    }

    pub fn errors_at(&self, t: f64) -> Vec<(u32, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| (r.t - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .map(|r| (r.n, r.e_u, r.e_lambda))
            .collect()
    }
}

/// Solves the base model at `ref_tol` and every member at `member_tol` on
/// the same grid, and tabulates `e_u(n, t) = ‖u_n(t) − u(t)‖_G`,
/// `e_λ(n, t) = ‖λ_n(t) − λ(t)‖_w` at the probe times. Family members solve
/// concurrently.
pub fn run_convergence_study(
    family: &PerturbationFamily,
    grid: TimeGrid,
    probe_times: &[f64],
    ref_tol: f64,
    member_tol: f64,
) -> Result<ConvergenceTable> {
    let probe_nodes: Vec<usize> = probe_times
        .iter()
        .map(|t| {
            grid.node_at(*t).ok_or_else(|| {
                Error::InvalidArgument(format!("probe time {t} is not a grid node"))
            })
        })
        .collect::<Result<_>>()?;

    let base_assembled = assemble(&family.base)?;
    let gram = base_assembled.gram().clone();
    let weights = base_assembled.coupling().weights().clone();
    let ref_params = UzawaParams {
        tol: ref_tol,
        inner_tol: (ref_tol * 1e-2).min(1e-12),
        max_iter: 200_000,
        ..UzawaParams::default()
    };
    let member_params = UzawaParams {
        tol: member_tol,
        inner_tol: (member_tol * 1e-2).min(1e-12),
        max_iter: 200_000,
        ..UzawaParams::default()
    };
    let reference = solve_evolution(&base_assembled.to_evolution_problem(grid)?, &ref_params)?;

    // Window constant for the kernel gap: smallest integer horizon cover.
    let window = grid.horizon().ceil().max(1.0);

    let member_results: Vec<Result<Vec<TableRow>>> = family
        .entries
        .par_iter()
        .map(|entry| {
            let assembled = assemble(&entry.model)?;
            let problem = assembled.to_evolution_problem(grid)?;
            let traj = solve_evolution(&problem, &member_params).map_err(|e| match e {
                Error::Solver { context, residual } => Error::Solver {
                    context: format!("family member n = {}: {context}", entry.n),
                    residual,
                },
                other => other,
            })?;
            Ok(probe_nodes
                .iter()
                .map(|&k| {
                    let du = &traj.primal[k] - &reference.primal[k];
                    let dl = &traj.multiplier[k] - &reference.multiplier[k];
                    TableRow {
                        n: entry.n,
                        t: grid.time(k),
                        e_u: linalg::x_norm(Some(&gram), &du),
                        e_lambda: linalg::y_norm(&weights, &dl),
                        f_n: entry.f_n,
                        f_n_m: window * entry.omega_gap,
                        g_n: entry.g_n,
                    }
                })
                .collect())
        })
        .collect();

    let mut rows = Vec::new();
    for r in member_results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (a.n, a.t).partial_cmp(&(b.n, b.t)).unwrap());

    let mut slopes = Vec::new();
    for (&t, &k) in probe_times.iter().zip(probe_nodes.iter()) {
        let at_t: Vec<&TableRow> = rows
            .iter()
            .filter(|r| (r.t - grid.time(k)).abs() <= 1e-12 * (1.0 + t.abs()))
            .collect();
        let ns: Vec<f64> = at_t.iter().map(|r| r.n as f64).collect();
        let eus: Vec<f64> = at_t.iter().map(|r| r.e_u).collect();
        let els: Vec<f64> = at_t.iter().map(|r| r.e_lambda).collect();
        slopes.push((
            t,
            linalg::log_log_slope(&ns, &eus).unwrap_or(f64::NAN),
            linalg::log_log_slope(&ns, &els).unwrap_or(f64::NAN),
        ));
    }
    Ok(ConvergenceTable { rows, slopes })
}

/// Mosco-condition diagnostics for scaled boxes `Λ_n = (g_n / g) Λ`.
#[derive(Clone, Debug)]
pub struct MoscoRow {
    pub g_n: f64,
    /// Worst `‖μ_n − μ‖` over recovery samples `μ_n = (g_n/g) μ`.
    pub recovery_max: f64,
    /// Worst deviation of the recovery error from `|g_n/g − 1| ‖μ‖`.
    pub recovery_defect: f64,
    /// Worst `‖P_{Λ_n}(μ) − P_Λ(μ)‖` over all samples.
    pub projection_max: f64,
    /// Box Hausdorff distance `|g_n/g − 1| ‖bounds‖`.
    pub hausdorff: f64,
}

#[derive(Clone, Debug)]
pub struct MoscoReport {
    pub rows: Vec<MoscoRow>,
}

/// Verifies the two Mosco conditions for the scaling family at the discrete
/// level: recovery sequences `μ_n = (g_n/g) μ ∈ Λ_n` converge strongly with
/// the closed-form error `|g_n/g − 1|·‖μ‖`, and box projections converge
/// pointwise for samples inside and outside the sets.
pub fn mosco_check(
    g_schedule: &[f64],
    g: f64,
    set: &MultiplierSet,
    samples: &[DVector<f64>],
) -> Result<MoscoReport> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument("base bound g must be positive".into()));
    }
    if g_schedule.iter().any(|gn| !(*gn > 0.0)) {
        return Err(Error::InvalidArgument("all g_n must be positive".into()));
    }
    let bounds_norm = set.bounds().norm();
    let mut rows = Vec::with_capacity(g_schedule.len());
    for &g_n in g_schedule {
        let factor = g_n / g;
        let scaled = set.scaled(factor)?;
        let mut recovery_max: f64 = 0.0;
        let mut recovery_defect: f64 = 0.0;
        let mut projection_max: f64 = 0.0;
        for mu in samples {
            if mu.len() != set.dim() {
                return Err(Error::dim("mosco sample", set.dim(), mu.len()));
            }
            let inside = project_multiplier(mu, set)?;
            // Recovery from within the base set.
            let mu_n = factor * &inside;
            if !scaled.contains(&mu_n, 1e-12 * (1.0 + mu_n.norm())) {
                return Err(Error::Validation(
                    "recovery element escaped the scaled set".into(),
                ));
            }
            let err = (&mu_n - &inside).norm();
            recovery_max = recovery_max.max(err);
            recovery_defect = recovery_defect.max((err - (factor - 1.0).abs() * inside.norm()).abs());
            // Projection convergence for the raw sample.
            let p_n = project_multiplier(mu, &scaled)?;
            projection_max = projection_max.max((&p_n - project_multiplier(mu, set)?).norm());
        }
        rows.push(MoscoRow {
            g_n,
            recovery_max,
            recovery_defect,
            projection_max,
            hausdorff: (factor - 1.0).abs() * bounds_norm,
        });
    }
    Ok(MoscoReport { rows })
}

/// Sampled evidence for the sequential upper-limit condition of a coupling
/// family `b_n(v, μ) = μ' B_n v` with `B_n = B + (1/n) E`.
#[derive(Clone, Debug)]
pub struct CouplingFamilyReport {
    /// `(n, worst gap b_n(w - z_n, μ_n) - b(w - z, μ))` over the samples.
    pub rows: Vec<(u32, f64)>,
}

impl CouplingFamilyReport {
    pub fn final_gap(&self) -> f64 {
        self.rows.last().map(|r| r.1).unwrap_or(0.0)
    }
}

/// Samples sequences `z_n = z + ξ/n`, `μ_n = μ + ψ/n` and reports the worst
/// gap `b_n(w − z_n, μ_n) − b(w − z, μ)` per index. The gaps must shrink to
/// zero along the schedule; the check is necessary evidence only, not a
/// proof of the limit condition.
pub fn coupling_family_check(
    base: &crate::saddle::CouplingForm,
    direction: &nalgebra::DMatrix<f64>,
    schedule: &[u32],
    trials: usize,
    seed: u64,
) -> Result<CouplingFamilyReport> {
    use rand::Rng;
    use rand::SeedableRng;
    let (m, n) = (base.multiplier_dim(), base.primal_dim());
    if direction.nrows() != m || direction.ncols() != n {
        return Err(Error::dim("coupling direction", m * n, direction.nrows() * direction.ncols()));
    }
    if schedule.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument("need a schedule and at least one trial".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |len: usize| DVector::from_fn(len, |_, _| rng.gen_range(-1.0f64..1.0));
    let mut rows: Vec<(u32, f64)> = schedule.iter().map(|&k| (k, f64::NEG_INFINITY)).collect();
    for _ in 0..trials {
        let w = sample(n);
        let z = sample(n);
        let mu = sample(m);
        let xi = sample(n);
        let psi = sample(m);
        let limit = base.pair(&(&w - &z), &mu);
        for (idx, &k) in schedule.iter().enumerate() {
            let s = 1.0 / k as f64;
            let b_n = base.matrix() + s * direction;
            let z_n = &z + s * &xi;
            let mu_n = &mu + s * &psi;
            let gap = mu_n.dot(&(&b_n * (&w - &z_n))) - limit;
            rows[idx].1 = rows[idx].1.max(gap);
        }
    }
    Ok(CouplingFamilyReport { rows })
}

/// Result of one paired stability solve.
#[derive(Clone, Copy, Debug)]
pub struct StabilityPair {
    /// `‖u_1 − u_2‖_X + ‖λ_1 − λ_2‖_Y`.
    pub lhs: f64,
    /// `‖η_1 − η_2‖ + ‖f_1 − f_2‖ + ‖k_1 − k_2‖` in the dual/dual/primal norms.
    pub rhs: f64,
    /// `lhs / rhs`, zero-guarded.
    pub ratio: f64,
}

/// Solves both instances and reports the data-stability ratio. The
/// instances must share the operator, coupling and multiplier set. A zero
/// data difference with a solution difference above `uniqueness_tol` is a
/// uniqueness violation and fails loudly.
pub fn stability_pair(
    a: &StaticMixedInstance,
    b: &StaticMixedInstance,
    params: &UzawaParams,
    uniqueness_tol: f64,
) -> Result<StabilityPair> {
    if a.operator().linear_part() != b.operator().linear_part()
        || a.coupling().matrix() != b.coupling().matrix()
        || a.multipliers() != b.multipliers()
    {
        return Err(Error::InvalidArgument(
            "stability pair must share operator, coupling and multiplier set".into(),
        ));
    }
    let sol_a = uzawa_solve(a, params)?;
    let sol_b = uzawa_solve(b, params)?;
    let op = a.operator();
    let lhs = op.x_norm(&(&sol_a.primal - &sol_b.primal))
        + a.coupling().y_norm(&(&sol_a.multiplier - &sol_b.multiplier));
    let rhs = op.dual_norm(&(a.history_offset() - b.history_offset()))
        + op.dual_norm(&(a.load() - b.load()))
        + op.x_norm(&(a.constraint() - b.constraint()));
    if rhs == 0.0 && lhs > uniqueness_tol {
        return Err(Error::Validation(format!(
            "uniqueness violation: identical data produced solutions {lhs:.3e} apart"
        )));
    }
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(StabilityPair { lhs, rhs, ratio })
}

/// Scale sweep of the stability ratio along a fixed perturbation direction.
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub median_ratio: f64,
    /// Ratio at the first (coarsest) scale.
    pub coarsest_ratio: f64,
}

/// Applies `(scale · δη, scale · δf, scale · δk)` for each scale and collects
/// the ratios of [`stability_pair`].
pub fn stability_sweep(
    base: &StaticMixedInstance,
    delta_offset: &DVector<f64>,
    delta_load: &DVector<f64>,
    delta_constraint: &DVector<f64>,
    scales: &[f64],
    params: &UzawaParams,
) -> Result<StabilityReport> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("scale sweep must not be empty".into()));
    }
    let mut ratios = Vec::with_capacity(scales.len());
    for &scale in scales {
        let perturbed = StaticMixedInstance::new(
            base.operator().clone(),
            base.history_offset() + scale * delta_offset,
            base.coupling().clone(),
            base.multipliers().clone(),
            base.load() + scale * delta_load,
            base.constraint() + scale * delta_constraint,
        )?;
        let pair = stability_pair(base, &perturbed, params, 2.0 * params.tol)?;
        ratios.push(pair.ratio);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = sorted[sorted.len() / 2];
    Ok(StabilityReport {
        scales: scales.to_vec(),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        coarsest_ratio: ratios[0],
        ratios,
        median_ratio,
    })
}

/// Spot check of the zero-load bound: the solution of the homogeneous
/// problem (zero data) has vanishing norm. Returns `‖u‖_X + ‖λ‖_Y`.
pub fn zero_load_norm(
    operator: &crate::saddle::PrimalOperator,
    coupling: &crate::saddle::CouplingForm,
    multipliers: &MultiplierSet,
    params: &UzawaParams,
) -> Result<f64> {
    let n = operator.dimension();
    let inst = StaticMixedInstance::new(
        operator.clone(),
        DVector::zeros(n),
        coupling.clone(),
        multipliers.clone(),
        DVector::zeros(n),
        DVector::zeros(n),
    )?;
    let sol = uzawa_solve(&inst, params)?;
    Ok(operator.x_norm(&sol.primal) + coupling.y_norm(&sol.multiplier))
}
