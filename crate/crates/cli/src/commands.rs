//! Command execution: builds the model from a config, runs the requested
//! study and writes CSV artifacts plus a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hdmix_core::convergence::{build_family, run_convergence_study, FamilyOverrides};
use hdmix_core::fem2d::{assemble, check_friction_kkt, patch_test, AssembledInstance};
use hdmix_core::history::{
    recursion_consistency_check, solve_evolution, volterra_convergence_orders,
    history_lipschitz_check, MemoryKernel, TimeScheme,
};
use hdmix_core::mesh::{generate_rect_mesh, BoundaryTags, Mesh};
use hdmix_core::optim::{
    forward_state, minimize, trace_to_csv, CostSpec, CostTemplate, MinimizeStrategy,
    ParameterPoint,
};
use hdmix_core::saddle::verify_constants;
use hdmix_core::{
    ContactModel, Loads, Material, ParameterBox, TimeGrid, Trajectory, UzawaParams,
};
use nalgebra::DVector;

use crate::config::{Command, CostChoice, MeshSource, RunConfig};

/// Fatal run failure mapped to an exit code.
#[derive(Debug)]
pub struct RunError {
    pub exit_code: i32,
    pub message: String,
}

impl RunError {
    fn solver(message: impl Into<String>) -> Self {
        Self {
            exit_code: 3,
            message: message.into(),
        }
    }
}

impl From<hdmix_core::Error> for RunError {
    fn from(e: hdmix_core::Error) -> Self {
        RunError::solver(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::solver(format!("i/o failure: {e}"))
    }
}

fn build_mesh(config: &RunConfig) -> Result<Mesh, RunError> {
    match &config.mesh {
        MeshSource::Generate {
            nx,
            ny,
            width,
            height,
        } => Ok(generate_rect_mesh(*nx, *ny, *width, *height, BoundaryTags::default())?),
        MeshSource::File(path) => Ok(Mesh::from_file(path)?),
    }
}

fn build_model(config: &RunConfig) -> Result<ContactModel, RunError> {
    let mesh = build_mesh(config)?;
    let n = mesh.node_count();
    let theta = config.theta;
    let zeta = config.zeta;
    let loads = Loads::constant_fields(n, config.body_force, config.traction)
        .with_modulations(move |t| theta.eval(t), move |t| zeta.eval(t));
    let material = Material::new(config.beta, config.eta, config.omega)?;
    Ok(ContactModel::new(mesh, material, loads, config.g)?)
}

fn solver_params(config: &RunConfig) -> UzawaParams {
    UzawaParams {
        tol: config.uzawa_tol,
        inner_tol: config.inner_tol,
        max_iter: config.max_iter,
        ..UzawaParams::default()
    }
}

fn grid(config: &RunConfig) -> Result<TimeGrid, RunError> {
    Ok(TimeGrid::with_horizon(config.horizon, config.steps)?)
}

fn write(out_dir: &Path, name: &str, content: &str) -> Result<PathBuf, RunError> {
    let path = out_dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

fn displacement_csv(inst: &AssembledInstance, traj: &Trajectory) -> String {
    use std::fmt::Write;
    let mut out = String::from("t, node_id, ux, uy\n");
    for (k, u) in traj.primal.iter().enumerate() {
        let nodal = inst.dof_map().expand(u);
        for (node, value) in nodal.iter().enumerate() {
            let _ = writeln!(out, "{}, {}, {}, {}", traj.times[k], node, value[0], value[1]);
        }
    }
    out
}

fn multiplier_csv(traj: &Trajectory) -> String {
    use std::fmt::Write;
    let mut out = String::from("t, mult_id, lambda\n");
    for (k, lambda) in traj.multiplier.iter().enumerate() {
        for (i, value) in lambda.iter().enumerate() {
            let _ = writeln!(out, "{}, {}, {}", traj.times[k], i, value);
        }
    }
    out
}

/// Records the verified structural constants so output claims are auditable.
fn manifest(
    config: &RunConfig,
    inst: &AssembledInstance,
    seed: u64,
) -> Result<String, RunError> {
    use std::fmt::Write;
    let op = inst.primal_operator()?;
    let report = verify_constants(&op, inst.coupling(), 50, seed)?;
    let c0 = inst.trace_constant()?;
    let mut out = String::from("# resolved configuration\n");
    out.push_str(&crate::config::echo(config));
    out.push_str("# verified structural constants\n");
    let _ = writeln!(out, "m_hat_A = {}", report.m_a_empirical);
    let _ = writeln!(out, "L_hat_A = {}", report.l_a_empirical);
    let _ = writeln!(out, "alpha_hat_b = {}", report.alpha_b);
    let _ = writeln!(out, "M_hat_b = {}", report.m_b);
    let _ = writeln!(out, "c0_hat = {c0}");
    let _ = writeln!(out, "declared_m_A = {}", report.declared_m_a);
    let _ = writeln!(out, "declared_L_A = {}", report.declared_l_a);
    for violation in &report.violations {
        let _ = writeln!(out, "# WARNING: {violation}");
    }
    Ok(out)
}

/// Executes the configured command; returns the produced artifact paths.
pub fn run(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(out_dir)?;
    let model = build_model(config)?;
    let inst = assemble(&model)?;
    let params = solver_params(config);
    let mut artifacts = vec![write(out_dir, "manifest.txt", &manifest(config, &inst, seed)?)?];

    match config.command {
        Command::Solve | Command::DemoContact => {
            let problem = inst.to_evolution_problem(grid(config)?)?;
            let traj = solve_evolution(&problem, &params)?;
            artifacts.push(write(out_dir, "displacement.csv", &displacement_csv(&inst, &traj))?);
            artifacts.push(write(out_dir, "multiplier.csv", &multiplier_csv(&traj))?);
            if config.command == Command::DemoContact {
                use std::fmt::Write;
                let mut kkt = String::from("t, bound_residual, slip_residual, stick, slip\n");
                let mut worst: f64 = 0.0;
                for k in 0..traj.node_count() {
                    let u_tau = inst.tangential_displacements(&traj.primal[k]);
                    let report = check_friction_kkt(
                        &u_tau,
                        &traj.multiplier[k],
                        model.friction_bound,
                        inst.coupling().weights(),
                        config.kkt_tol,
                    )?;
                    worst = worst
                        .max(report.max_bound_residual)
                        .max(report.max_slip_residual);
                    let _ = writeln!(
                        kkt,
                        "{}, {}, {}, {}, {}",
                        traj.times[k],
                        report.max_bound_residual,
                        report.max_slip_residual,
                        report.stick.len(),
                        report.slip.len()
                    );
                }
                artifacts.push(write(out_dir, "kkt.csv", &kkt)?);
                println!("friction KKT: max residual {worst:.3e} over {} nodes", traj.node_count());
            }
            let stats = traj.stats.iter().map(|s| s.iterations).sum::<usize>();
            println!(
                "solved {} nodes ({} total dual iterations)",
                traj.node_count(),
                stats
            );
        }
        Command::StudyConvergence => {
            let family = build_family(&model, &config.schedule, &FamilyOverrides::default())?;
            let table = run_convergence_study(
                &family,
                grid(config)?,
                &config.probe_times,
                (config.uzawa_tol * 1e-2).max(1e-13),
                config.uzawa_tol,
            )?;
            artifacts.push(write(out_dir, "convergence.csv", &table.to_csv())?);
            for (t, slope_u, slope_l) in &table.slopes {
                println!("t = {t}: e_u slope {slope_u:.3}, e_lambda slope {slope_l:.3}");
            }
        }
        Command::Optimize => {
            let template = CostTemplate {
                model: model.clone(),
                grid: grid(config)?,
                solver: params,
            };
            let boxref = ParameterBox::new(config.box_lo, config.box_hi, config.delta0)
                .map_err(RunError::from)?;
            let spec = match config.cost {
                CostChoice::Tracking => {
                    let (u_target, l_target) = match config.target_point {
                        Some(arr) => {
                            let p_hat = ParameterPoint::from_array(arr);
                            forward_state(&p_hat, config.eval_time, &template)?
                        }
                        None => (
                            DVector::zeros(inst.reduced_dim()),
                            DVector::zeros(inst.multiplier_dim()),
                        ),
                    };
                    CostSpec::tracking(
                        config.c1,
                        config.c2,
                        config.c3,
                        u_target,
                        l_target,
                        config.eval_time,
                    )?
                }
                CostChoice::BoundaryMisfit => {
                    let target = match config.target_point {
                        Some(arr) => {
                            let p_hat = ParameterPoint::from_array(arr);
                            let (u, _) = forward_state(&p_hat, config.eval_time, &template)?;
                            inst.tangential_displacements(&u)
                        }
                        None => DVector::zeros(inst.multiplier_dim()),
                    };
                    CostSpec::boundary_misfit(target, config.eval_time)
                }
            };
            let result = minimize(
                &spec,
                &boxref,
                &template,
                &MinimizeStrategy::default(),
                config.budget,
            )?;
            artifacts.push(write(out_dir, "optimization.csv", &trace_to_csv(&result.trace))?);
            let p = result.best.as_array();
            println!(
                "best cost {:.6e} at (beta {}, eta {}, omega {}, a0 {}, a2 {}, g {}) after {} evaluations (converged: {})",
                result.cost, p[0], p[1], p[2], p[3], p[4], p[5],
                result.trace.len(),
                result.converged
            );
            for incident in &result.incidents {
                eprintln!("warning: {incident}");
            }
        }
        Command::Verify => {
            let mut all_ok = true;
            let mut report_line = |name: &str, pass: bool, detail: String| {
                println!("{}: {} ({detail})", name, if pass { "PASS" } else { "FAIL" });
                all_ok &= pass;
            };
            let op = inst.primal_operator()?;
            let constants = verify_constants(&op, inst.coupling(), 100, seed)?;
            report_line(
                "structural constants",
                constants.violations.is_empty(),
                format!(
                    "m_hat {:.6}, L_hat {:.6}, alpha_hat {:.6}",
                    constants.m_a_empirical, constants.l_a_empirical, constants.alpha_b
                ),
            );
            let (lo, hi) = inst.coercivity_range()?;
            let lo_bound = 2.0 * config.beta - 1e-10;
            let hi_bound = 2.0 * config.beta + 2.0 * config.eta + 1e-10;
            report_line(
                "coercivity eigenvalue sandwich",
                lo >= lo_bound && hi <= hi_bound,
                format!("[{lo:.6}, {hi:.6}] within [{lo_bound:.6}, {hi_bound:.6}]"),
            );
            let kernel = MemoryKernel::exponential(config.omega, inst.gram().clone())?;
            let check_grid = TimeGrid::with_horizon(config.horizon, config.steps)?;
            let recursion = recursion_consistency_check(&kernel, &check_grid, 10, seed)?;
            report_line(
                "history recursion equality",
                recursion <= 1e-12,
                format!("max gap {recursion:.3e}"),
            );
            let lipschitz = history_lipschitz_check(&kernel, &check_grid, 50, seed)?;
            report_line(
                "history Lipschitz bound",
                lipschitz.worst_ratio <= 1.0 + 1e-12,
                format!("worst ratio {:.12}", lipschitz.worst_ratio),
            );
            let dts = [0.1, 0.05, 0.025];
            let implicit = volterra_convergence_orders(&dts, TimeScheme::ImplicitTrapezoid)?;
            let explicit = volterra_convergence_orders(&dts, TimeScheme::ExplicitRectangle)?;
            report_line(
                "memory benchmark time orders",
                implicit.iter().all(|o| *o >= 1.9) && explicit.iter().all(|o| *o >= 0.9),
                format!("implicit {implicit:?}, explicit {explicit:?}"),
            );
            let patch = patch_test(&model.mesh, &model.material)?;
            report_line("patch test", patch <= 1e-12, format!("max error {patch:.3e}"));
            if !all_ok {
                return Err(RunError::solver("verification suite reported failures"));
            }
        }
    }
    Ok(artifacts)
}
