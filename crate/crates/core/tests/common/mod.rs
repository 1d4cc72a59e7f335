//! Shared test oracles. Everything here stays independent of the library's
//! solver path: the saddle oracle enumerates active-set patterns and solves
//! each KKT system by full-pivot LU.

use hdmix_core::mesh::{generate_rect_mesh, BoundaryTags};
use hdmix_core::saddle::{CouplingForm, MultiplierSet, PrimalOperator, StaticMixedInstance};
use hdmix_core::{ContactModel, Loads, Material};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Brute-force saddle solve: try all 3^m activity patterns (inactive, upper
/// bound, lower bound per coordinate), solve the equality-constrained KKT
/// system with LU, and keep the feasible pattern with the smallest equality
/// residual.
pub fn active_set_solve(inst: &StaticMixedInstance) -> Option<(DVector<f64>, DVector<f64>)> {
    let k_mat = inst.operator().linear_part();
    let b = inst.coupling().matrix();
    let bounds = inst.multipliers().bounds();
    let n = k_mat.nrows();
    let m = b.nrows();
    let rhs_base = inst.load() - inst.history_offset();
    let feas_tol = 1e-9;

    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    let patterns = 3usize.pow(m as u32);
    for code in 0..patterns {
        let mut digits = Vec::with_capacity(m);
        let mut rest = code;
        for _ in 0..m {
            digits.push(rest % 3);
            rest /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|i| digits[*i] == 0).collect();
        let nf = free.len();
        let mut lam = DVector::zeros(m);
        for i in 0..m {
            match digits[i] {
                1 => lam[i] = bounds[i],
                2 => lam[i] = -bounds[i],
                _ => {}
            }
        }
        let mut sys = DMatrix::zeros(n + nf, n + nf);
        let mut rhs = DVector::zeros(n + nf);
        sys.view_mut((0, 0), (n, n)).copy_from(k_mat);
        let fixed_pull = b.transpose() * &lam;
        for r in 0..n {
            rhs[r] = rhs_base[r] - fixed_pull[r];
        }
        for (slot, &i) in free.iter().enumerate() {
            for c in 0..n {
                sys[(c, n + slot)] = b[(i, c)];
                sys[(n + slot, c)] = b[(i, c)];
            }
            rhs[n + slot] = b.row(i).transpose().dot(inst.constraint());
        }
        let lu = sys.full_piv_lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        let u = sol.rows(0, n).into_owned();
        for (slot, &i) in free.iter().enumerate() {
            lam[i] = sol[n + slot];
        }
        // Feasibility: slack signs on active coordinates, bounds on free ones.
        let slack = b * (&u - inst.constraint());
        let mut feasible = true;
        for i in 0..m {
            match digits[i] {
                1 if slack[i] < -feas_tol => feasible = false,
                2 if slack[i] > feas_tol => feasible = false,
                0 if lam[i].abs() > bounds[i] + feas_tol => feasible = false,
                _ => {}
            }
        }
        if !feasible {
            continue;
        }
        let residual =
            (k_mat * &u + inst.history_offset() + b.transpose() * &lam - inst.load()).norm();
        // Uniqueness forbids genuinely distinct feasible patterns; warn if
        // one shows up and keep the smaller equality residual.
        if let Some((bu, bl, prev)) = &best {
            if (bu - &u).norm() + (bl - &lam).norm() > 1e-6 {
                eprintln!(
                    "active-set oracle: distinct feasible patterns (residuals {prev:.3e} vs {residual:.3e})"
                );
            }
            if *prev <= residual {
                continue;
            }
        }
        best = Some((u, lam.clone(), residual));
    }
    best.map(|(u, lam, _)| (u, lam))
}

/// Random small saddle instance with linear SPD operator and box multiplier
/// set, matching the acceptance-scale envelope (n <= 6, m <= 3).
pub fn random_instance(rng: &mut ChaCha8Rng) -> StaticMixedInstance {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=n.min(3));
    let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let spd: DMatrix<f64> = &q * q.transpose() + (n as f64) * DMatrix::identity(n, n);
    let b = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let weights = DVector::from_fn(m, |_, _| rng.gen_range(0.5..2.0));
    let bounds = DVector::from_fn(m, |_, _| rng.gen_range(0.0..2.0));
    let operator = PrimalOperator::linear_spd(spd, None).unwrap();
    let coupling = CouplingForm::with_measured_constants(b, weights, None).unwrap();
    StaticMixedInstance::new(
        operator,
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
        coupling,
        MultiplierSet::box_bounds(bounds).unwrap(),
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
    )
    .unwrap()
}

/// The desk-scale contact demo: rectangle 2 x 1, left edge clamped, bottom
/// in bilateral contact, traction pulling along the top and right edges with
/// a ramping modulation.
pub fn demo_contact_model(nx: usize, ny: usize) -> ContactModel {
    let mesh = generate_rect_mesh(nx, ny, 2.0, 1.0, BoundaryTags::default()).unwrap();
    let n = mesh.node_count();
    let loads = Loads::constant_fields(n, [0.0, -0.3], [0.5, -0.1])
        .with_modulations(|_| 1.0, |t| 0.5 + t);
    ContactModel::new(mesh, Material::new(1.0, 0.5, 1.0).unwrap(), loads, 0.1).unwrap()
}
