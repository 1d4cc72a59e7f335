//! Derivative-free parameter optimization over a closed box by forward
//! solves: coarse grid scan followed by box-clipped Nelder-Mead.
//!
//! A parameter point `(β, η, ω, a0, a2, g)` instantiates the contact model
//! of a fixed template; `a0` and `a2` scale the template's reference load
//! fields, so the search space is a 6-dimensional box. The physical scalars
//! `β, η, ω, g` keep a positive floor `δ0`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem2d::{assemble, ContactModel};
use crate::history::{solve_evolution, TimeGrid};
use crate::linalg;
use crate::saddle::UzawaParams;

pub const PARAM_DIM: usize = 6;
pub const PARAM_NAMES: [&str; PARAM_DIM] = ["beta", "eta", "omega", "a0", "a2", "g"];

/// Point in the parameter space `(β, η, ω, a0, a2, g)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterPoint {
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
    pub a0: f64,
    pub a2: f64,
    pub g: f64,
}

impl ParameterPoint {
    pub fn as_array(&self) -> [f64; PARAM_DIM] {
        [self.beta, self.eta, self.omega, self.a0, self.a2, self.g]
    }

    pub fn from_array(a: [f64; PARAM_DIM]) -> Self {
        Self {
            beta: a[0],
            eta: a[1],
            omega: a[2],
            a0: a[3],
            a2: a[4],
            g: a[5],
        }
    }

    /// Weighted norm on the parameter space.
    pub fn weighted_norm(&self, weights: &[f64; PARAM_DIM]) -> f64 {
        self.as_array()
            .iter()
            .zip(weights.iter())
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Closed box with a positive floor `δ0` on the four physical scalars.
#[derive(Clone, Copy, Debug)]
pub struct ParameterBox {
    lo: [f64; PARAM_DIM],
    hi: [f64; PARAM_DIM],
    delta0: f64,
}

impl ParameterBox {
    pub fn new(lo: [f64; PARAM_DIM], hi: [f64; PARAM_DIM], delta0: f64) -> Result<Self> {
        if !(delta0 > 0.0) {
            return Err(Error::Validation(format!("delta0 must be positive (got {delta0})")));
        }
        for i in 0..PARAM_DIM {
            if !(lo[i] <= hi[i]) {
                return Err(Error::Validation(format!(
                    "empty box: {} has lo {} > hi {}",
                    PARAM_NAMES[i], lo[i], hi[i]
                )));
            }
        }
        // β, η, ω, g sit at indices 0, 1, 2, 5.
        for i in [0usize, 1, 2, 5] {
            if lo[i] < delta0 {
                return Err(Error::Validation(format!(
                    "lower bound of {} must be at least delta0 = {delta0} (got {})",
                    PARAM_NAMES[i], lo[i]
                )));
            }
        }
        Ok(Self { lo, hi, delta0 })
    }

    pub fn lo(&self) -> &[f64; PARAM_DIM] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64; PARAM_DIM] {
        &self.hi
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        let a = p.as_array();
        (0..PARAM_DIM).all(|i| a[i] >= self.lo[i] - 1e-12 && a[i] <= self.hi[i] + 1e-12)
    }

    pub fn clip(&self, p: &ParameterPoint) -> ParameterPoint {
        let mut a = p.as_array();
        for i in 0..PARAM_DIM {
            a[i] = a[i].clamp(self.lo[i], self.hi[i]);
        }
        ParameterPoint::from_array(a)
    }

    pub fn center(&self) -> ParameterPoint {
        let mut a = [0.0; PARAM_DIM];
        for i in 0..PARAM_DIM {
            a[i] = 0.5 * (self.lo[i] + self.hi[i]);
        }
        ParameterPoint::from_array(a)
    }

    fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    fn free_axes(&self) -> Vec<usize> {
        (0..PARAM_DIM).filter(|i| self.width(*i) > 0.0).collect()
    }
}

/// Cost functional evaluated on the state at a fixed time.
#[derive(Clone)]
pub enum CostKind {
    /// `c1 ‖u − u0‖_X² + c2 ‖λ − λ0‖_Y² + c3 ‖p‖_W²`.
    Tracking {
        c1: f64,
        c2: f64,
        c3: f64,
        u_target: DVector<f64>,
        lambda_target: DVector<f64>,
    },
    /// Lumped `∫_{Γ3} ‖u − u0‖² da` with a tangential target per contact dof.
    BoundaryMisfit { target: DVector<f64> },
}

#[derive(Clone)]
pub struct CostSpec {
    pub kind: CostKind,
    /// Evaluation time; must be a grid node of the template.
    pub time: f64,
    /// Diagonal weights of the parameter-space norm.
    pub w_weights: [f64; PARAM_DIM],
}

impl CostSpec {
    pub fn tracking(
        c1: f64,
        c2: f64,
        c3: f64,
        u_target: DVector<f64>,
        lambda_target: DVector<f64>,
        time: f64,
    ) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0 && c3 >= 0.0) {
            return Err(Error::Validation("cost weights must be nonnegative".into()));
        }
        Ok(Self {
            kind: CostKind::Tracking {
                c1,
                c2,
                c3,
                u_target,
                lambda_target,
            },
            time,
            w_weights: [1.0; PARAM_DIM],
        })
    }

    pub fn boundary_misfit(target: DVector<f64>, time: f64) -> Self {
        Self {
            kind: CostKind::BoundaryMisfit { target },
            time,
            w_weights: [1.0; PARAM_DIM],
        }
    }
}

/// Fixed forward-problem data: mesh, reference load fields, modulations,
/// time grid and solver tolerances.
#[derive(Clone)]
pub struct CostTemplate {
    pub model: ContactModel,
    pub grid: TimeGrid,
    pub solver: UzawaParams,
}

/// Instantiates the template at `p` and returns the state `(u, λ)` at
/// `time`; the workhorse behind cost evaluation and recovery targets.
pub fn forward_state(
    p: &ParameterPoint,
    time: f64,
    template: &CostTemplate,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let node = template.grid.node_at(time).ok_or_else(|| {
        Error::InvalidArgument(format!("evaluation time {time} is not a grid node"))
    })?;
    let mut model = template.model.clone();
    model.material = crate::fem2d::Material::new(p.beta, p.eta, p.omega)
        .map_err(|e| Error::CostEvaluation(e.to_string()))?;
    model.friction_bound = p.g;
    for v in model.loads.body.iter_mut() {
        v[0] *= p.a0;
        v[1] *= p.a0;
    }
    for v in model.loads.traction.iter_mut() {
        v[0] *= p.a2;
        v[1] *= p.a2;
    }
    // Causality: solving the truncated grid reproduces the prefix exactly.
    let assembled = assemble(&model).map_err(|e| Error::CostEvaluation(e.to_string()))?;
    let problem = assembled
        .to_evolution_problem(template.grid.truncated(node))
        .map_err(|e| Error::CostEvaluation(e.to_string()))?;
    let traj = solve_evolution(&problem, &template.solver)
        .map_err(|e| Error::CostEvaluation(e.to_string()))?;
    Ok((
        traj.primal[node].clone(),
        traj.multiplier[node].clone(),
    ))
}

/// Evaluates the cost at `p` through a forward solve up to `spec.time`.
pub fn evaluate_cost(p: &ParameterPoint, spec: &CostSpec, template: &CostTemplate) -> Result<f64> {
    let (u, lambda) = forward_state(p, spec.time, template)?;
    let assembled =
        assemble(&template.model).map_err(|e| Error::CostEvaluation(e.to_string()))?;
    match &spec.kind {
        CostKind::Tracking {
            c1,
            c2,
            c3,
            u_target,
            lambda_target,
        } => {
            if u_target.len() != u.len() || lambda_target.len() != lambda.len() {
                return Err(Error::dim("tracking targets", u.len(), u_target.len()));
            }
            let du = &u - u_target;
            let dl = &lambda - lambda_target;
            let eu = linalg::x_norm(Some(assembled.gram()), &du);
            let el = linalg::y_norm(assembled.coupling().weights(), &dl);
            Ok(c1 * eu * eu + c2 * el * el + c3 * p.weighted_norm(&spec.w_weights).powi(2))
        }
        CostKind::BoundaryMisfit { target } => {
            let u_tau = assembled.tangential_displacements(&u);
            if target.len() != u_tau.len() {
                return Err(Error::dim("boundary target", u_tau.len(), target.len()));
            }
            let weights = assembled.coupling().weights();
            Ok((0..u_tau.len())
                .map(|i| weights[i] * (u_tau[i] - target[i]).powi(2))
                .sum())
        }
    }
}

/// One recorded evaluation.
#[derive(Clone, Copy, Debug)]
pub struct TraceEntry {
    pub eval_id: usize,
    pub point: ParameterPoint,
    pub cost: f64,
    pub feasible: bool,
}

/// Writes a trace in the interchange format
/// `eval_id, beta, eta, omega, a0, a2, g, cost, feasible`.
pub fn trace_to_csv(trace: &[TraceEntry]) -> String {
    use std::fmt::Write;
    let mut out = String::from("eval_id, beta, eta, omega, a0, a2, g, cost, feasible\n");
    for e in trace {
        let p = e.point.as_array();
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}, {}, {}",
            e.eval_id, p[0], p[1], p[2], p[3], p[4], p[5], e.cost, e.feasible
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub best: ParameterPoint,
    pub cost: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Failed forward solves, recorded and treated as infinite cost.
    pub incidents: Vec<String>,
}

/// Search controls. The Nelder-Mead coefficients follow the classical
/// choice: reflection 1, expansion 2, contraction 0.5, shrink 0.5; the
/// initial simplex offsets each free axis by 5% of the box width from the
/// best scanned point.
#[derive(Clone, Copy, Debug)]
pub struct MinimizeStrategy {
    pub grid_resolution: usize,
    pub offset_fraction: f64,
}

impl Default for MinimizeStrategy {
    fn default() -> Self {
        Self {
            grid_resolution: 4,
            offset_fraction: 0.05,
        }
    }
}

struct Evaluator<'a> {
    spec: &'a CostSpec,
    template: &'a CostTemplate,
    trace: Vec<TraceEntry>,
    incidents: Vec<String>,
    budget: usize,
    boxref: &'a ParameterBox,
}

impl<'a> Evaluator<'a> {
    fn budget_left(&self) -> usize {
        self.budget.saturating_sub(self.trace.len())
    }

    fn eval(&mut self, p: ParameterPoint) -> f64 {
        let cost = match evaluate_cost(&p, self.spec, self.template) {
            Ok(c) => c,
            Err(e) => {
                self.incidents.push(e.to_string());
                f64::INFINITY
            }
        };
        self.trace.push(TraceEntry {
            eval_id: self.trace.len(),
            point: p,
            cost,
            feasible: self.boxref.contains(&p),
        });
        cost
    }
}

fn axis_values(boxref: &ParameterBox, axis: usize, resolution: usize) -> Vec<f64> {
    if boxref.width(axis) == 0.0 || resolution <= 1 {
        return vec![boxref.lo()[axis]];
    }
    (0..resolution)
        .map(|i| {
            boxref.lo()[axis] + boxref.width(axis) * i as f64 / (resolution - 1) as f64
        })
        .collect()
}

fn cartesian_points(boxref: &ParameterBox, resolution: usize) -> Vec<ParameterPoint> {
    let axes: Vec<Vec<f64>> = (0..PARAM_DIM)
        .map(|i| axis_values(boxref, i, resolution))
        .collect();
    let mut points = vec![[0.0; PARAM_DIM]];
    for (axis, values) in axes.iter().enumerate() {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = *p;
                q[axis] = *v;
                next.push(q);
            }
        }
        points = next;
    }
    points.into_iter().map(ParameterPoint::from_array).collect()
}

/// Full factorial cost table in deterministic lexicographic order
/// (`beta` outermost, `g` innermost). Evaluations run concurrently.
pub fn grid_scan(
    spec: &CostSpec,
    boxref: &ParameterBox,
    template: &CostTemplate,
    resolution: usize,
) -> Result<Vec<TraceEntry>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    let points = cartesian_points(boxref, resolution);
    if points.len() > 100_000 {
        return Err(Error::InvalidArgument(format!(
            "grid scan of {} points exceeds the 1e5 cap",
            points.len()
        )));
    }
    let costs: Vec<f64> = points
        .par_iter()
        .map(|p| evaluate_cost(p, spec, template).unwrap_or(f64::INFINITY))
        .collect();
    Ok(points
        .into_iter()
        .zip(costs)
        .enumerate()
        .map(|(eval_id, (point, cost))| TraceEntry {
            eval_id,
            point,
            cost,
            feasible: boxref.contains(&point),
        })
        .collect())
}

/// Minimizes the cost over the box: a coarse scan seeds a box-clipped
/// Nelder-Mead refinement. The scan resolution degrades below
/// `strategy.grid_resolution` until the scan fits into half the budget.
/// Runs out of budget with `converged = false` rather than erroring.
pub fn minimize(
    spec: &CostSpec,
    boxref: &ParameterBox,
    template: &CostTemplate,
    strategy: &MinimizeStrategy,
    budget: usize,
) -> Result<MinimizeResult> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let free = boxref.free_axes();
    let mut ev = Evaluator {
        spec,
        template,
        trace: Vec::new(),
        incidents: Vec::new(),
        budget,
        boxref,
    };

    // Coarse scan, degraded to fit half the budget.
    let mut resolution = strategy.grid_resolution.max(1);
    while resolution > 1 {
        let count = resolution
            .checked_pow(free.len() as u32)
            .unwrap_or(usize::MAX);
        if count <= (budget / 2).max(1) {
            break;
        }
        resolution -= 1;
    }
    let mut scan_points = if resolution > 1 {
        cartesian_points(boxref, resolution)
    } else {
        Vec::new()
    };
    // The box center seeds the simplex when the scan misses the basin.
    scan_points.insert(0, boxref.center());
    let mut best = (boxref.center(), f64::INFINITY);
    for p in scan_points {
        if ev.budget_left() == 0 {
            break;
        }
        let c = ev.eval(p);
        if c < best.1 {
            best = (p, c);
        }
    }

    // Nelder-Mead over the free axes, clipped to the box; a converged
    // simplex restarts around the incumbent with shrinking offsets while
    // budget remains.
    let mut converged = free.is_empty();
    let mut offset_fraction = strategy.offset_fraction;
    let spread_tol = 1e-14;
    let max_restarts = 8;
    'restarts: for _restart in 0..=max_restarts {
        let mut simplex: Vec<(ParameterPoint, f64)> = vec![best];
        for &axis in &free {
            if ev.budget_left() == 0 {
                break 'restarts;
            }
            let mut a = best.0.as_array();
            let offset = offset_fraction * boxref.width(axis);
            // Step away from the nearer bound so clipping cannot collapse
            // the simplex.
            a[axis] = if a[axis] + offset <= boxref.hi()[axis] {
                a[axis] + offset
            } else {
                a[axis] - offset
            };
            let p = boxref.clip(&ParameterPoint::from_array(a));
            let c = ev.eval(p);
            simplex.push((p, c));
        }
        let dim = simplex.len() - 1;
        if dim == 0 {
            break;
        }

        loop {
            if ev.budget_left() == 0 {
                break 'restarts;
            }
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            if simplex[0].1 < best.1 {
                best = simplex[0];
            }
            let best_cost = simplex[0].1;
            let worst_cost = simplex[dim].1;
            if worst_cost.is_finite()
                && (worst_cost - best_cost).abs() <= spread_tol * (1.0 + best_cost.abs())
            {
                converged = true;
                break;
            }
            // Centroid of all but the worst point.
            let mut centroid = [0.0; PARAM_DIM];
            for (p, _) in simplex.iter().take(dim) {
                let a = p.as_array();
                for i in 0..PARAM_DIM {
                    centroid[i] += a[i] / dim as f64;
                }
            }
            let worst = simplex[dim].0.as_array();
            let blend = |t: f64| {
                let mut a = [0.0; PARAM_DIM];
                for i in 0..PARAM_DIM {
                    a[i] = centroid[i] + t * (centroid[i] - worst[i]);
                }
                boxref.clip(&ParameterPoint::from_array(a))
            };

            let reflected = blend(1.0);
            let f_reflected = ev.eval(reflected);
            if f_reflected < simplex[0].1 {
                if ev.budget_left() > 0 {
                    let expanded = blend(2.0);
                    let f_expanded = ev.eval(expanded);
                    simplex[dim] = if f_expanded < f_reflected {
                        (expanded, f_expanded)
                    } else {
                        (reflected, f_reflected)
                    };
                } else {
                    simplex[dim] = (reflected, f_reflected);
                }
            } else if f_reflected < simplex[dim - 1].1 {
                simplex[dim] = (reflected, f_reflected);
            } else if ev.budget_left() > 0 {
                // Outside contraction against a merely-bad reflection,
                // inside contraction against a worst-case one.
                let (candidate, reference) = if f_reflected < simplex[dim].1 {
                    (blend(0.5), f_reflected)
                } else {
                    (blend(-0.5), simplex[dim].1)
                };
                let f_candidate = ev.eval(candidate);
                if f_candidate <= reference {
                    simplex[dim] = (candidate, f_candidate);
                } else {
                    // Shrink toward the best vertex.
                    let anchor = simplex[0].0.as_array();
                    for idx in 1..=dim {
                        if ev.budget_left() == 0 {
                            break 'restarts;
                        }
                        let a = simplex[idx].0.as_array();
                        let mut s = [0.0; PARAM_DIM];
                        for i in 0..PARAM_DIM {
                            s[i] = anchor[i] + 0.5 * (a[i] - anchor[i]);
                        }
                        let p = boxref.clip(&ParameterPoint::from_array(s));
                        let c = ev.eval(p);
                        simplex[idx] = (p, c);
                    }
                }
            } else {
                break 'restarts;
            }
        }
        // Converged: restart tighter around the incumbent if budget allows.
        if ev.budget_left() <= free.len() {
            break;
        }
        offset_fraction *= 0.25;
    }

    let Evaluator {
        trace, incidents, ..
    } = ev;
    let best_entry = trace
        .iter()
        .filter(|e| e.cost.is_finite())
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
        .ok_or_else(|| Error::CostEvaluation("every evaluation failed".into()))?;
    Ok(MinimizeResult {
        best: best_entry.point,
        cost: best_entry.cost,
        trace: trace.clone(),
        converged,
        incidents,
    })
}

/// Running best-so-far costs of a trace; nonincreasing by construction.
pub fn best_so_far(trace: &[TraceEntry]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trace
        .iter()
        .map(|e| {
            best = best.min(e.cost);
            best
        })
        .collect()
}
