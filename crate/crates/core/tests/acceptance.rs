//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its runtime. Run with `cargo test --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use hdmix_core::convergence::{
    build_family, mosco_check, run_convergence_study, stability_pair, stability_sweep,
    FamilyOverrides,
};
use hdmix_core::fem2d::{
    assemble, check_friction_kkt, manufactured_energy_errors, patch_test,
};
use hdmix_core::history::{
    history_lipschitz_check, recursion_consistency_check, solve_evolution,
    volterra_convergence_orders, MemoryKernel, TimeScheme,
};
use hdmix_core::linalg;
use hdmix_core::mesh::generate_rect_mesh;
use hdmix_core::optim::{forward_state, minimize, CostSpec, CostTemplate, MinimizeStrategy};
use hdmix_core::saddle::{uzawa_solve, UzawaParams};
use hdmix_core::{Material, MultiplierSet, ParameterBox, ParameterPoint, TimeGrid};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Criterion {
    id: usize,
    name: &'static str,
    start: Instant,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn begin(id: usize, name: &'static str) -> Self {
        Self {
            id,
            name,
            start: Instant::now(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, pass: bool, detail: impl Into<String>) {
        self.checks.push((detail.into(), pass));
    }

    fn finish(self, limit_secs: f64) {
        let elapsed = self.start.elapsed().as_secs_f64();
        let failed: Vec<&(String, bool)> = self.checks.iter().filter(|(_, p)| !p).collect();
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "criterion {} [{}]: {verdict} ({elapsed:.2}s, limit {limit_secs}s)",
            self.id, self.name
        );
        for (detail, pass) in &self.checks {
            if !pass {
                println!("  failed: {detail}");
            }
        }
        assert!(
            failed.is_empty(),
            "criterion {} [{}] failed: {:?}",
            self.id,
            self.name,
            failed.iter().map(|(d, _)| d.as_str()).collect::<Vec<_>>()
        );
        assert!(
            elapsed <= limit_secs,
            "criterion {} exceeded its runtime limit ({elapsed:.2}s > {limit_secs}s)",
            self.id
        );
    }
}

#[test]
fn criterion_1_saddle_oracle_equivalence() {
    let mut c = Criterion::begin(1, "saddle oracle equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = UzawaParams {
        tol: 1e-12,
        max_iter: 200_000,
        ..UzawaParams::default()
    };
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let inst = common::random_instance(&mut rng);
        let sol = uzawa_solve(&inst, &params)
            .unwrap_or_else(|e| panic!("trial {trial}: solver failed: {e}"));
        let (u_ref, l_ref) = active_set_reference(&inst, trial);
        let gap = (&sol.primal - &u_ref).norm() + (&sol.multiplier - &l_ref).norm();
        worst = worst.max(gap);
    }
    c.check(
        worst <= 1e-8,
        format!("worst Uzawa-vs-enumeration gap {worst:.3e} <= 1e-8"),
    );
    c.finish(10.0);
}

fn active_set_reference(
    inst: &hdmix_core::StaticMixedInstance,
    trial: usize,
) -> (DVector<f64>, DVector<f64>) {
    common::active_set_solve(inst)
        .unwrap_or_else(|| panic!("trial {trial}: no feasible active-set pattern"))
}

#[test]
fn criterion_2_coercivity_constants() {
    let mut c = Criterion::begin(2, "coercivity eigenvalue sandwich");
    for (beta, eta) in [(1.0, 0.0), (1.0, 0.5), (0.5, 2.0)] {
        for res in [4usize, 8, 16] {
            let mut model = common::demo_contact_model(res, res);
            model.material = Material::new(beta, eta, 1.0).unwrap();
            let inst = assemble(&model).unwrap();
            let (lo, hi) = inst.coercivity_range().unwrap();
            c.check(
                lo >= 2.0 * beta - 1e-10 && hi <= 2.0 * beta + 2.0 * eta + 1e-10,
                format!(
                    "mesh {res}x{res}, beta {beta}, eta {eta}: eigenvalues [{lo:.12}, {hi:.12}] within [{}, {}]",
                    2.0 * beta,
                    2.0 * beta + 2.0 * eta
                ),
            );
        }
    }
    c.finish(30.0);
}

#[test]
fn criterion_3_history_operator() {
    let mut c = Criterion::begin(3, "history operator");
    let kernel = MemoryKernel::exponential(0.8, nalgebra::DMatrix::identity(3, 3)).unwrap();
    let grid = TimeGrid::new(0.05, 40).unwrap();
    let worst_gap = recursion_consistency_check(&kernel, &grid, 50, 7).unwrap();
    c.check(
        worst_gap <= 1e-12,
        format!("recursive vs direct gap {worst_gap:.3e} <= 1e-12 over 50 trajectories"),
    );
    let report = history_lipschitz_check(&kernel, &grid, 100, 11).unwrap();
    c.check(
        report.worst_ratio <= 1.0 + 1e-12,
        format!("history Lipschitz ratio {:.15} <= 1 + 1e-12 over 100 pairs", report.worst_ratio),
    );
    let dts = [0.1, 0.05, 0.025];
    let implicit = volterra_convergence_orders(&dts, TimeScheme::ImplicitTrapezoid).unwrap();
    c.check(
        implicit.iter().all(|o| *o >= 1.9),
        format!("implicit orders {implicit:?} all >= 1.9"),
    );
    let explicit = volterra_convergence_orders(&dts, TimeScheme::ExplicitRectangle).unwrap();
    c.check(
        explicit.iter().all(|o| *o >= 0.9),
        format!("explicit orders {explicit:?} all >= 0.9"),
    );
    c.finish(10.0);
}

#[test]
fn criterion_4_convergence_study() {
    let mut c = Criterion::begin(4, "data-perturbation convergence study");
    let base = common::demo_contact_model(8, 8);
    let family = build_family(&base, &[1, 2, 4, 8, 16, 32], &FamilyOverrides::default()).unwrap();
    let grid = TimeGrid::new(0.05, 20).unwrap();
    let table = run_convergence_study(&family, grid, &[0.5, 1.0], 1e-12, 1e-10).unwrap();
    for &t in &[0.5, 1.0] {
        let errs = table.errors_at(t);
        let e_u: Vec<f64> = errs.iter().map(|e| e.1).collect();
        let e_l: Vec<f64> = errs.iter().map(|e| e.2).collect();
        let decreasing = |v: &[f64]| v.windows(2).skip(1).all(|w| w[1] < w[0]);
        c.check(
            decreasing(&e_u) && e_u[1] < e_u[0],
            format!("t = {t}: e_u strictly decreasing {e_u:?}"),
        );
        c.check(
            decreasing(&e_l) && e_l[1] < e_l[0],
            format!("t = {t}: e_lambda strictly decreasing {e_l:?}"),
        );
        let (slope_u, slope_l) = table
            .slopes
            .iter()
            .find(|(st, _, _)| (st - t).abs() < 1e-12)
            .map(|(_, su, sl)| (*su, *sl))
            .unwrap();
        c.check(
            slope_u <= -0.9,
            format!("t = {t}: fitted e_u slope {slope_u:.3} <= -0.9"),
        );
        c.check(
            slope_l <= -0.9,
            format!("t = {t}: fitted e_lambda slope {slope_l:.3} <= -0.9"),
        );
        let last = e_u.last().unwrap();
        c.check(
            *last <= 1e-4 * e_u[0],
            format!(
                "t = {t}: e_u(32) = {last:.6e} <= 1e-4 * e_u(1) = {:.6e} (ratio {:.3e})",
                1e-4 * e_u[0],
                last / e_u[0]
            ),
        );
    }
    c.finish(120.0);
}

#[test]
fn criterion_5_stability_ratio() {
    let mut c = Criterion::begin(5, "data-stability ratio sweep");
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let params = UzawaParams {
        tol: 1e-11,
        max_iter: 200_000,
        ..UzawaParams::default()
    };
    let scales = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let mut worst_excess: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for _ in 0..20 {
        let inst = common::random_instance(&mut rng);
        let n = inst.operator().dimension();
        let d_eta = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let d_load = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let d_k = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let report = stability_sweep(&inst, &d_eta, &d_load, &d_k, &scales, &params).unwrap();
        if report.coarsest_ratio > 0.0 {
            worst_excess = worst_excess.max(report.max_ratio / report.coarsest_ratio);
        }
        let zero = stability_pair(&inst, &inst.clone(), &params, 2.0 * params.tol).unwrap();
        worst_zero = worst_zero.max(zero.lhs);
    }
    c.check(
        worst_excess <= 2.0,
        format!("max ratio within 2x of the coarsest-scale ratio (worst factor {worst_excess:.3})"),
    );
    c.check(
        worst_zero <= 2.0 * params.tol,
        format!("zero-perturbation solution gap {worst_zero:.3e} <= 2x solver tolerance"),
    );
    c.finish(30.0);
}

#[test]
fn criterion_6_mosco_scaling() {
    let mut c = Criterion::begin(6, "Mosco set scaling");
    let g = 0.1;
    let schedule: Vec<f64> = [1u32, 2, 4, 8, 16, 32]
        .iter()
        .map(|n| g * (1.0 + 1.0 / *n as f64))
        .collect();
    let set = MultiplierSet::uniform(6, g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut samples: Vec<DVector<f64>> = (0..12)
        .map(|_| DVector::from_fn(6, |_, _| rng.gen_range(-0.4..0.4)))
        .collect();
    samples.push(DVector::zeros(6));
    let report = mosco_check(&schedule, g, &set, &samples).unwrap();
    let defect = report
        .rows
        .iter()
        .map(|r| r.recovery_defect)
        .fold(0.0, f64::max);
    c.check(
        defect <= 1e-12,
        format!("recovery error matches |g_n/g - 1| ||mu|| to {defect:.3e}"),
    );
    let projections: Vec<f64> = report.rows.iter().map(|r| r.projection_max).collect();
    let monotone = projections.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    c.check(
        monotone && projections.last().unwrap() <= &(projections[0] / 16.0),
        format!("projection gaps monotone to 0 along the schedule: {projections:?}"),
    );
    c.finish(1.0);
}

#[test]
fn criterion_7_friction_kkt_demo() {
    let mut c = Criterion::begin(7, "friction KKT on the contact demo");
    // Friction bound chosen so the final state mixes stick and slip.
    let mut model = common::demo_contact_model(8, 8);
    model.friction_bound = 0.7;
    let inst = assemble(&model).unwrap();
    let grid = TimeGrid::new(0.05, 20).unwrap();
    let problem = inst.to_evolution_problem(grid).unwrap();
    let params = UzawaParams::default();
    let traj = solve_evolution(&problem, &params).unwrap();
    let weights = inst.coupling().weights().clone();
    let mut worst_bound: f64 = 0.0;
    let mut worst_slip: f64 = 0.0;
    for k in 0..traj.node_count() {
        let u_tau = inst.tangential_displacements(&traj.primal[k]);
        let report =
            check_friction_kkt(&u_tau, &traj.multiplier[k], model.friction_bound, &weights, 1e-7)
                .unwrap();
        worst_bound = worst_bound.max(report.max_bound_residual);
        worst_slip = worst_slip.max(report.max_slip_residual);
    }
    c.check(
        worst_bound <= 1e-6,
        format!("bound residual {worst_bound:.3e} <= 1e-6 at every node"),
    );
    c.check(
        worst_slip <= 1e-6,
        format!("slip-consistency residual {worst_slip:.3e} <= 1e-6 at every node"),
    );
    let final_u_tau = inst.tangential_displacements(traj.primal.last().unwrap());
    let final_report = check_friction_kkt(
        &final_u_tau,
        traj.multiplier.last().unwrap(),
        model.friction_bound,
        &weights,
        1e-7,
    )
    .unwrap();
    c.check(
        !final_report.stick.is_empty() && !final_report.slip.is_empty(),
        format!(
            "both regimes present at the final node ({} stick, {} slip)",
            final_report.stick.len(),
            final_report.slip.len()
        ),
    );
    // Reconstructed normal displacement on the contact boundary is exact zero.
    let mut worst_normal: f64 = 0.0;
    for u in &traj.primal {
        let nodal = inst.dof_map().expand(u);
        for (i, node) in inst.dof_map().contact_nodes().iter().enumerate() {
            let t = inst.dof_map().tangent(i);
            let normal = [t[1], -t[0]];
            worst_normal =
                worst_normal.max((nodal[*node][0] * normal[0] + nodal[*node][1] * normal[1]).abs());
        }
    }
    c.check(worst_normal == 0.0, format!("u_nu identically {worst_normal:.3e} (exact zero)"));
    c.finish(60.0);
}

#[test]
fn criterion_8_optimization_recovery() {
    let mut c = Criterion::begin(8, "parameter recovery");
    let template = CostTemplate {
        model: common::demo_contact_model(8, 8),
        grid: TimeGrid::new(0.05, 20).unwrap(),
        solver: UzawaParams::default(),
    };
    let boxref = ParameterBox::new(
        [0.5, 0.2, 0.5, 0.2, 0.2, 0.05],
        [2.0, 1.0, 2.0, 2.0, 2.0, 0.3],
        1e-3,
    )
    .unwrap();
    let p_hat = ParameterPoint::from_array([1.2, 0.4, 0.8, 1.1, 0.9, 0.12]);
    assert!(boxref.contains(&p_hat));
    let (u_target, l_target) = forward_state(&p_hat, 0.5, &template).unwrap();
    let spec = CostSpec::tracking(1.0, 1.0, 0.0, u_target, l_target, 0.5).unwrap();
    let result = minimize(&spec, &boxref, &template, &MinimizeStrategy::default(), 300).unwrap();
    c.check(
        result.cost <= 1e-6,
        format!("recovered cost {:.3e} <= 1e-6 within {} evaluations", result.cost, result.trace.len()),
    );
    c.check(result.trace.len() <= 300, format!("{} evaluations <= 300", result.trace.len()));
    c.check(
        boxref.contains(&result.best),
        format!("returned point {:?} lies in the box", result.best.as_array()),
    );
    let best = hdmix_core::optim::best_so_far(&result.trace);
    c.check(
        best.windows(2).all(|w| w[1] <= w[0]),
        "best-so-far trace is nonincreasing".to_string(),
    );
    c.finish(300.0);
}

#[test]
fn criterion_9_fem_verification() {
    let mut c = Criterion::begin(9, "finite-element verification");
    let material = Material::new(1.0, 0.5, 0.0).unwrap();
    let mesh = generate_rect_mesh(6, 5, 2.0, 1.0, hdmix_core::BoundaryTags::default()).unwrap();
    let err = patch_test(&mesh, &material).unwrap();
    c.check(err <= 1e-12, format!("patch test error {err:.3e} <= 1e-12"));
    let errors = manufactured_energy_errors(&material, &[4, 8, 16]).unwrap();
    let rates: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    c.check(
        rates.iter().all(|r| *r >= 0.9),
        format!("manufactured-solution energy rates {rates:?} all >= 0.9"),
    );
    let slope = linalg::log_log_slope(
        &[4.0, 8.0, 16.0],
        &errors,
    )
    .unwrap();
    c.check(slope <= -0.9, format!("fitted error-vs-resolution slope {slope:.3} <= -0.9"));
    c.finish(60.0);
}
