//! P1 finite elements for the 2D viscoelastic bilateral-contact model.
//!
//! Displacements are vector P1 fields. Clamped nodes lose both dofs; every
//! free contact node keeps a single tangential dof (the normal component is
//! eliminated exactly, enforcing bilateral contact by construction) and
//! carries one Tresca multiplier. The X-inner product is the strain Gram
//! form `∫ ε(u)·ε(v) dx`, so the stiffness splits as
//! `A = 2β G + η D` with `D = ∫ div(u) div(v) dx`.
//!
//! Plane-strain reduction: `tr ε` is the 2D trace, keeping `d = 2` in the
//! Lipschitz constant `L_A = 2β + dη`.
//!
//! Node precedence at boundary-part corners: clamped beats contact beats
//! traction. Contact tangents follow the counterclockwise boundary
//! orientation; outward normals are the tangents rotated by -90 degrees.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::history::{EvolutionProblem, MemoryKernel, TimeGrid};
use crate::linalg;
use crate::mesh::{Mesh, TAG_CLAMPED, TAG_CONTACT, TAG_TRACTION};
use crate::saddle::{CouplingForm, MultiplierSet, PrimalOperator, StaticMixedInstance};

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Isotropic viscoelastic material: Lamé-type coefficients and the
/// relaxation rate of the exponential memory kernel.
#[derive(Clone, Copy, Debug)]
pub struct Material {
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
}

impl Material {
    pub fn new(beta: f64, eta: f64, omega: f64) -> Result<Self> {
        if !(beta >= 0.0 && eta >= 0.0 && omega >= 0.0) {
            return Err(Error::Validation(format!(
                "material coefficients must be nonnegative (beta {beta}, eta {eta}, omega {omega})"
            )));
        }
        Ok(Self { beta, eta, omega })
    }

    pub fn monotonicity(&self) -> f64 {
        2.0 * self.beta
    }

    pub fn lipschitz(&self) -> f64 {
        2.0 * self.beta + 2.0 * self.eta
    }
}

/// Nodal load fields with scalar time modulations.
#[derive(Clone)]
pub struct Loads {
    /// Body force density per mesh node.
    pub body: Vec<[f64; 2]>,
    /// Traction density per mesh node; only traction-boundary nodes matter.
    pub traction: Vec<[f64; 2]>,
    pub theta: TimeFn,
    pub zeta: TimeFn,
}

impl Loads {
    pub fn constant_fields(node_count: usize, body: [f64; 2], traction: [f64; 2]) -> Self {
        Self {
            body: vec![body; node_count],
            traction: vec![traction; node_count],
            theta: Arc::new(|_| 1.0),
            zeta: Arc::new(|_| 1.0),
        }
    }

    pub fn with_modulations(
        mut self,
        theta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        zeta: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.theta = Arc::new(theta);
        self.zeta = Arc::new(zeta);
        self
    }
}

/// Full model instance: geometry, material, loads and the friction bound.
#[derive(Clone)]
pub struct ContactModel {
    pub mesh: Mesh,
    pub material: Material,
    pub loads: Loads,
    pub friction_bound: f64,
}

impl ContactModel {
    pub fn new(mesh: Mesh, material: Material, loads: Loads, friction_bound: f64) -> Result<Self> {
        if !(friction_bound >= 0.0) {
            return Err(Error::Validation(format!(
                "friction bound must be nonnegative (got {friction_bound})"
            )));
        }
        if loads.body.len() != mesh.node_count() || loads.traction.len() != mesh.node_count() {
            return Err(Error::dim("load fields", mesh.node_count(), loads.body.len()));
        }
        Ok(Self {
            mesh,
            material,
            loads,
            friction_bound,
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum NodeKind {
    Clamped,
    /// Two free dofs starting at `dof`.
    Standard { dof: usize },
    /// Single tangential dof.
    Contact {
        dof: usize,
        tangent: [f64; 2],
        weight: f64,
    },
}

/// Reduction map between per-node displacements and solver coordinates.
#[derive(Clone, Debug)]
pub struct DofMap {
    kinds: Vec<NodeKind>,
    reduced_dim: usize,
    contact_nodes: Vec<usize>,
}

impl DofMap {
    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    pub fn multiplier_dim(&self) -> usize {
        self.contact_nodes.len()
    }

    /// Mesh node carrying multiplier dof `i`.
    pub fn contact_node(&self, i: usize) -> usize {
        self.contact_nodes[i]
    }

    pub fn contact_nodes(&self) -> &[usize] {
        &self.contact_nodes
    }

    pub fn tangent(&self, i: usize) -> [f64; 2] {
        match self.kinds[self.contact_nodes[i]] {
            NodeKind::Contact { tangent, .. } => tangent,
            _ => unreachable!("contact node list is consistent"),
        }
    }

    pub fn contact_weight(&self, i: usize) -> f64 {
        match self.kinds[self.contact_nodes[i]] {
            NodeKind::Contact { weight, .. } => weight,
            _ => unreachable!("contact node list is consistent"),
        }
    }

    /// Reduced dof of contact multiplier `i`.
    pub fn contact_dof(&self, i: usize) -> usize {
        match self.kinds[self.contact_nodes[i]] {
            NodeKind::Contact { dof, .. } => dof,
            _ => unreachable!("contact node list is consistent"),
        }
    }

    /// Expansion coefficient of full dof `(node, comp)` into reduced space.
    fn expand_entry(&self, node: usize, comp: usize) -> Option<(usize, f64)> {
        match self.kinds[node] {
            NodeKind::Clamped => None,
            NodeKind::Standard { dof } => Some((dof + comp, 1.0)),
            NodeKind::Contact { dof, tangent, .. } => Some((dof, tangent[comp])),
        }
    }

    /// Reconstructs per-node displacements; clamped nodes are zero and
    /// contact nodes have an exactly zero normal component.
    pub fn expand(&self, reduced: &DVector<f64>) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0, 0.0]; self.kinds.len()];
        for (node, kind) in self.kinds.iter().enumerate() {
            match kind {
                NodeKind::Clamped => {}
                NodeKind::Standard { dof } => {
                    out[node] = [reduced[*dof], reduced[*dof + 1]];
                }
                NodeKind::Contact { dof, tangent, .. } => {
                    out[node] = [reduced[*dof] * tangent[0], reduced[*dof] * tangent[1]];
                }
            }
        }
        out
    }
}

fn node_kinds(mesh: &Mesh) -> Result<DofMap> {
    let n = mesh.node_count();
    let mut has = vec![[false; 4]; n];
    // Oriented tangent accumulation and lumped measure per contact node.
    let mut tangent_acc = vec![[0.0f64; 2]; n];
    let mut weight_acc = vec![0.0f64; n];
    for edge in mesh.boundary() {
        for v in edge.nodes {
            has[v][edge.tag as usize] = true;
        }
        if edge.tag == TAG_CONTACT {
            let a = mesh.nodes()[edge.nodes[0]];
            let b = mesh.nodes()[edge.nodes[1]];
            let len = mesh.edge_length(edge);
            let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            for v in edge.nodes {
                tangent_acc[v][0] += dir[0];
                tangent_acc[v][1] += dir[1];
                weight_acc[v] += 0.5 * len;
            }
        }
    }
    let mut kinds = Vec::with_capacity(n);
    let mut contact_nodes = Vec::new();
    let mut dof = 0usize;
    for node in 0..n {
        if has[node][TAG_CLAMPED as usize] {
            kinds.push(NodeKind::Clamped);
        } else if has[node][TAG_CONTACT as usize] {
            let t = tangent_acc[node];
            let norm = (t[0] * t[0] + t[1] * t[1]).sqrt();
            if norm < 1e-14 {
                return Err(Error::Validation(format!(
                    "contact node {node} has no usable tangent direction"
                )));
            }
            kinds.push(NodeKind::Contact {
                dof,
                tangent: [t[0] / norm, t[1] / norm],
                weight: weight_acc[node],
            });
            contact_nodes.push(node);
            dof += 1;
        } else {
            kinds.push(NodeKind::Standard { dof });
            dof += 2;
        }
    }
    if !kinds.iter().any(|k| matches!(k, NodeKind::Clamped)) {
        return Err(Error::Validation(
            "no clamped nodes: coercivity of the elastic form is lost".into(),
        ));
    }
    Ok(DofMap {
        kinds,
        reduced_dim: dof,
        contact_nodes,
    })
}

/// Full-space P1 matrices (dimension `2 * node_count`).
struct FullAssembly {
    gram: DMatrix<f64>,
    div_form: DMatrix<f64>,
    mass_volume: DMatrix<f64>,
    mass_traction: DMatrix<f64>,
}

fn assemble_full(mesh: &Mesh) -> FullAssembly {
    let n = mesh.node_count();
    let dim = 2 * n;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut div_form = DMatrix::zeros(dim, dim);
    let mut mass_volume = DMatrix::zeros(dim, dim);
    for tri in mesh.triangles() {
        let [p0, p1, p2] = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
        let det = mesh.double_area(tri);
        let area = 0.5 * det;
        // Constant barycentric gradients.
        let grads = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        for (i, gi) in grads.iter().enumerate() {
            for (j, gj) in grads.iter().enumerate() {
                let dot = gi[0] * gj[0] + gi[1] * gj[1];
                for a in 0..2 {
                    for b in 0..2 {
                        let row = 2 * tri[i] + a;
                        let col = 2 * tri[j] + b;
                        // ε(φ_i e_a) : ε(φ_j e_b) = (δ_ab ∇φ_i·∇φ_j + ∂_b φ_i ∂_a φ_j) / 2
                        let strain =
                            0.5 * (if a == b { dot } else { 0.0 } + gi[b] * gj[a]);
                        gram[(row, col)] += area * strain;
                        div_form[(row, col)] += area * gi[a] * gj[b];
                        if a == b {
                            mass_volume[(row, col)] += area / 12.0 * if i == j { 2.0 } else { 1.0 };
                        }
                    }
                }
            }
        }
    }
    let mut mass_traction = DMatrix::zeros(dim, dim);
    for edge in mesh.boundary() {
        if edge.tag != TAG_TRACTION {
            continue;
        }
        let len = mesh.edge_length(edge);
        for (i, ni) in edge.nodes.iter().enumerate() {
            for (j, nj) in edge.nodes.iter().enumerate() {
                let value = len / 6.0 * if i == j { 2.0 } else { 1.0 };
                for a in 0..2 {
                    mass_traction[(2 * ni + a, 2 * nj + a)] += value;
                }
            }
        }
    }
    FullAssembly {
        gram,
        div_form,
        mass_volume,
        mass_traction,
    }
}

fn reduce_matrix(full: &DMatrix<f64>, map: &DofMap) -> DMatrix<f64> {
    let n_nodes = map.kinds.len();
    let mut reduced = DMatrix::zeros(map.reduced_dim(), map.reduced_dim());
    let entries: Vec<Option<(usize, f64)>> = (0..2 * n_nodes)
        .map(|fd| map.expand_entry(fd / 2, fd % 2))
        .collect();
    for (fd1, e1) in entries.iter().enumerate() {
        let Some((r1, c1)) = e1 else { continue };
        for (fd2, e2) in entries.iter().enumerate() {
            let Some((r2, c2)) = e2 else { continue };
            let v = full[(fd1, fd2)];
            if v != 0.0 {
                reduced[(*r1, *r2)] += c1 * c2 * v;
            }
        }
    }
    reduced
}

fn reduce_vector(full: &DVector<f64>, map: &DofMap) -> DVector<f64> {
    let mut reduced = DVector::zeros(map.reduced_dim());
    for node in 0..map.kinds.len() {
        for comp in 0..2 {
            if let Some((r, c)) = map.expand_entry(node, comp) {
                reduced[r] += c * full[2 * node + comp];
            }
        }
    }
    reduced
}

fn field_to_vector(field: &[[f64; 2]]) -> DVector<f64> {
    DVector::from_iterator(2 * field.len(), field.iter().flat_map(|v| v.iter().copied()))
}

/// Assembled discrete instance over the reduced dof space.
#[derive(Clone)]
pub struct AssembledInstance {
    dof_map: DofMap,
    gram: DMatrix<f64>,
    div_form: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    pi_mass: DMatrix<f64>,
    coupling: CouplingForm,
    bounds: MultiplierSet,
    body_load: DVector<f64>,
    traction_load: DVector<f64>,
    material: Material,
    friction_bound: f64,
    theta: TimeFn,
    zeta: TimeFn,
}

/// Standard P1 assembly with exact element/edge quadrature for P1 data.
pub fn assemble(model: &ContactModel) -> Result<AssembledInstance> {
    let map = node_kinds(&model.mesh)?;
    let full = assemble_full(&model.mesh);
    let gram = reduce_matrix(&full.gram, &map);
    let div_form = reduce_matrix(&full.div_form, &map);
    let stiffness = 2.0 * model.material.beta * &gram + model.material.eta * &div_form;
    let pi_mass = reduce_matrix(&(&full.mass_volume + &full.mass_traction), &map);
    let body_load = reduce_vector(&(&full.mass_volume * field_to_vector(&model.loads.body)), &map);
    let traction_load =
        reduce_vector(&(&full.mass_traction * field_to_vector(&model.loads.traction)), &map);

    let m = map.multiplier_dim();
    let coupling = if m == 0 {
        CouplingForm::empty(map.reduced_dim())
    } else {
        let mut b = DMatrix::zeros(m, map.reduced_dim());
        let mut weights = DVector::zeros(m);
        for i in 0..m {
            let w = map.contact_weight(i);
            b[(i, map.contact_dof(i))] = w;
            weights[i] = w;
        }
        CouplingForm::with_measured_constants(b, weights, Some(&gram))?
    };
    let bounds = MultiplierSet::uniform(m, model.friction_bound)?;

    Ok(AssembledInstance {
        dof_map: map,
        gram,
        div_form,
        stiffness,
        pi_mass,
        coupling,
        bounds,
        body_load,
        traction_load,
        material: model.material,
        friction_bound: model.friction_bound,
        theta: model.loads.theta.clone(),
        zeta: model.loads.zeta.clone(),
    })
}

impl AssembledInstance {
    pub fn dof_map(&self) -> &DofMap {
        &self.dof_map
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn div_form(&self) -> &DMatrix<f64> {
        &self.div_form
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn coupling(&self) -> &CouplingForm {
        &self.coupling
    }

    pub fn bounds(&self) -> &MultiplierSet {
        &self.bounds
    }

    pub fn material(&self) -> Material {
        self.material
    }

    pub fn friction_bound(&self) -> f64 {
        self.friction_bound
    }

    pub fn body_load(&self) -> &DVector<f64> {
        &self.body_load
    }

    pub fn traction_load(&self) -> &DVector<f64> {
        &self.traction_load
    }

    pub fn reduced_dim(&self) -> usize {
        self.dof_map.reduced_dim()
    }

    pub fn multiplier_dim(&self) -> usize {
        self.dof_map.multiplier_dim()
    }

    /// Assembled load `θ(t)·body + ζ(t)·traction`.
    pub fn load_at(&self, t: f64) -> DVector<f64> {
        (self.theta)(t) * &self.body_load + (self.zeta)(t) * &self.traction_load
    }

    pub fn primal_operator(&self) -> Result<PrimalOperator> {
        PrimalOperator::with_declared(
            self.stiffness.clone(),
            Some(self.gram.clone()),
            self.material.monotonicity(),
            self.material.lipschitz(),
        )
    }

    /// Static instance at time `t` with zero history offset (`h ≡ 0`).
    pub fn static_instance(&self, t: f64) -> Result<StaticMixedInstance> {
        let n = self.reduced_dim();
        StaticMixedInstance::new(
            self.primal_operator()?,
            DVector::zeros(n),
            self.coupling.clone(),
            self.bounds.clone(),
            self.load_at(t),
            DVector::zeros(n),
        )
    }

    /// Packages the instance as an evolution problem with the exponential
    /// kernel acting through the Gram matrix; the constraint datum vanishes.
    pub fn to_evolution_problem(&self, grid: TimeGrid) -> Result<EvolutionProblem> {
        let kernel = MemoryKernel::exponential(self.material.omega, self.gram.clone())?;
        let n = self.reduced_dim();
        let body = self.body_load.clone();
        let traction = self.traction_load.clone();
        let theta = self.theta.clone();
        let zeta = self.zeta.clone();
        EvolutionProblem::new(
            self.primal_operator()?,
            kernel,
            self.coupling.clone(),
            self.bounds.clone(),
            move |t| theta(t) * &body + zeta(t) * &traction,
            move |_| DVector::zeros(n),
            grid,
        )
    }

    /// Tangential displacement at each contact multiplier dof.
    pub fn tangential_displacements(&self, reduced: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.multiplier_dim(),
            (0..self.multiplier_dim()).map(|i| reduced[self.dof_map.contact_dof(i)]),
        )
    }

    /// Extreme generalized eigenvalues of `(A, G)`.
    pub fn coercivity_range(&self) -> Result<(f64, f64)> {
        linalg::gen_eig_range(&self.stiffness, Some(&self.gram))
    }

    /// Numerical trace constant: `sqrt` of the largest generalized
    /// eigenvalue of the π-image mass form against the Gram matrix.
    pub fn trace_constant(&self) -> Result<f64> {
        let (_, hi) = linalg::gen_eig_range(&self.pi_mass, Some(&self.gram))?;
        Ok(hi.max(0.0).sqrt())
    }
}

/// Friction-law diagnostics at the contact nodes.
#[derive(Clone, Debug)]
pub struct FrictionKktReport {
    /// Worst excess of `|λ_i|` over the bound.
    pub max_bound_residual: f64,
    /// Worst `|λ_i − g sign(u_τ,i)|` over sliding nodes.
    pub max_slip_residual: f64,
    /// Lumped boundary-integral residual `sqrt(Σ w_i r_i²)` combining both
    /// defects.
    pub integrated_residual: f64,
    pub stick: Vec<usize>,
    pub slip: Vec<usize>,
}

/// Classifies contact dofs into stick (`|u_τ| ≤ tol`) and slip, and measures
/// the Tresca-law residuals: feasibility everywhere, and on sliding dofs the
/// multiplier must equal the signed bound. `weights` are the lumped edge
/// measures used for the integrated residual.
pub fn check_friction_kkt(
    u_tangential: &DVector<f64>,
    multiplier: &DVector<f64>,
    bound: f64,
    weights: &DVector<f64>,
    tol: f64,
) -> Result<FrictionKktReport> {
    let m = u_tangential.len();
    if multiplier.len() != m || weights.len() != m {
        return Err(Error::dim("friction kkt", m, multiplier.len().max(weights.len())));
    }
    let mut report = FrictionKktReport {
        max_bound_residual: 0.0,
        max_slip_residual: 0.0,
        integrated_residual: 0.0,
        stick: Vec::new(),
        slip: Vec::new(),
    };
    let mut integrated = 0.0;
    for i in 0..m {
        let bound_residual = (multiplier[i].abs() - bound).max(0.0);
        report.max_bound_residual = report.max_bound_residual.max(bound_residual);
        let mut residual = bound_residual;
        if u_tangential[i].abs() > tol {
            report.slip.push(i);
            let slip_residual = (multiplier[i] - bound * u_tangential[i].signum()).abs();
            report.max_slip_residual = report.max_slip_residual.max(slip_residual);
            residual = residual.max(slip_residual);
        } else {
            report.stick.push(i);
        }
        integrated += weights[i] * residual * residual;
    }
    report.integrated_residual = integrated.sqrt();
    Ok(report)
}

/// Pure elasticity solve with prescribed nodal displacements
/// (`prescribed[node] = Some(value)`), exact P1 quadrature of the nodal
/// body-force field, and no contact reduction. Returns nodal displacements.
pub fn solve_dirichlet(
    mesh: &Mesh,
    material: &Material,
    prescribed: &[Option<[f64; 2]>],
    body: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>> {
    let n = mesh.node_count();
    if prescribed.len() != n || body.len() != n {
        return Err(Error::dim("solve_dirichlet fields", n, prescribed.len()));
    }
    let full = assemble_full(mesh);
    let stiffness = 2.0 * material.beta * &full.gram + material.eta * &full.div_form;
    let load = &full.mass_volume * field_to_vector(body);

    let mut free = Vec::new();
    let mut fixed_value = vec![0.0; 2 * n];
    for node in 0..n {
        match prescribed[node] {
            Some(v) => {
                fixed_value[2 * node] = v[0];
                fixed_value[2 * node + 1] = v[1];
            }
            None => {
                free.push(2 * node);
                free.push(2 * node + 1);
            }
        }
    }
    let nf = free.len();
    let mut k_ff = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (r, &fd1) in free.iter().enumerate() {
        let mut v = load[fd1];
        for fd2 in 0..2 * n {
            let entry = stiffness[(fd1, fd2)];
            if entry != 0.0 {
                v -= entry * fixed_value[fd2];
            }
        }
        rhs[r] = v;
        for (c, &fd2) in free.iter().enumerate() {
            k_ff[(r, c)] = stiffness[(fd1, fd2)];
        }
    }
    let chol = linalg::cholesky(&k_ff, "Dirichlet elasticity solve")?;
    let u_free = chol.solve(&rhs);
    let mut out = vec![[0.0, 0.0]; n];
    for node in 0..n {
        out[node] = [fixed_value[2 * node], fixed_value[2 * node + 1]];
    }
    for (r, &fd) in free.iter().enumerate() {
        out[fd / 2][fd % 2] = u_free[r];
    }
    Ok(out)
}

/// Constant-strain patch test: a linear displacement field prescribed on all
/// boundary nodes must be reproduced exactly at interior nodes. Returns the
/// maximum nodal error.
pub fn patch_test(mesh: &Mesh, material: &Material) -> Result<f64> {
    let field = |p: [f64; 2]| -> [f64; 2] {
        [
            0.3 + 0.7 * p[0] - 0.2 * p[1],
            -0.1 + 0.4 * p[0] + 0.5 * p[1],
        ]
    };
    let n = mesh.node_count();
    let mut on_boundary = vec![false; n];
    for edge in mesh.boundary() {
        for v in edge.nodes {
            on_boundary[v] = true;
        }
    }
    let prescribed: Vec<Option<[f64; 2]>> = (0..n)
        .map(|i| on_boundary[i].then(|| field(mesh.nodes()[i])))
        .collect();
    let body = vec![[0.0, 0.0]; n];
    let solution = solve_dirichlet(mesh, material, &prescribed, &body)?;
    let mut err: f64 = 0.0;
    for i in 0..n {
        let exact = field(mesh.nodes()[i]);
        err = err.max((solution[i][0] - exact[0]).abs());
        err = err.max((solution[i][1] - exact[1]).abs());
    }
    Ok(err)
}

/// Energy-norm errors of the manufactured smooth solution
/// `u = (sin πx sin πy, sin πx sin πy)` on the unit square with the body
/// force `f = -(β Δu + (β+η) ∇ div u)`, one entry per resolution.
pub fn manufactured_energy_errors(material: &Material, resolutions: &[usize]) -> Result<Vec<f64>> {
    use std::f64::consts::PI;
    let exact_strain = |p: [f64; 2]| -> [f64; 3] {
        let (sx, cx) = (PI * p[0]).sin_cos();
        let (sy, cy) = (PI * p[1]).sin_cos();
        let du_dx = PI * cx * sy;
        let du_dy = PI * sx * cy;
        // Both components share the same shape.
        [du_dx, du_dy, 0.5 * (du_dy + du_dx)]
    };
    let body_force = |p: [f64; 2], m: &Material| -> [f64; 2] {
        let (sx, cx) = (PI * p[0]).sin_cos();
        let (sy, cy) = (PI * p[1]).sin_cos();
        let laplace = -2.0 * PI * PI * sx * sy;
        let grad_div = PI * PI * (cx * cy - sx * sy);
        let value = -(m.beta * laplace + (m.beta + m.eta) * grad_div);
        [value, value]
    };

    let all_clamped = crate::mesh::BoundaryTags {
        left: TAG_CLAMPED,
        right: TAG_CLAMPED,
        bottom: TAG_CLAMPED,
        top: TAG_CLAMPED,
    };
    let mut errors = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let mesh = crate::mesh::generate_rect_mesh(res, res, 1.0, 1.0, all_clamped)?;
        let n = mesh.node_count();
        let mut on_boundary = vec![false; n];
        for edge in mesh.boundary() {
            for v in edge.nodes {
                on_boundary[v] = true;
            }
        }
        let prescribed: Vec<Option<[f64; 2]>> = (0..n)
            .map(|i| on_boundary[i].then_some([0.0, 0.0]))
            .collect();
        let body: Vec<[f64; 2]> = (0..n).map(|i| body_force(mesh.nodes()[i], material)).collect();
        let solution = solve_dirichlet(&mesh, material, &prescribed, &body)?;

        // Energy error by edge-midpoint quadrature of the strain defect.
        let mut err_sq = 0.0;
        for tri in mesh.triangles() {
            let [i0, i1, i2] = *tri;
            let [p0, p1, p2] = [mesh.nodes()[i0], mesh.nodes()[i1], mesh.nodes()[i2]];
            let det = mesh.double_area(tri);
            let area = 0.5 * det;
            let grads = [
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ];
            let mut eh = [0.0f64; 3];
            for (local, node) in tri.iter().enumerate() {
                let u = solution[*node];
                let g = grads[local];
                eh[0] += u[0] * g[0];
                eh[1] += u[1] * g[1];
                eh[2] += 0.5 * (u[0] * g[1] + u[1] * g[0]);
            }
            for (a, b) in [(p0, p1), (p1, p2), (p2, p0)] {
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                let ex = exact_strain(mid);
                let d = [eh[0] - ex[0], eh[1] - ex[1], eh[2] - ex[2]];
                err_sq += area / 3.0 * (d[0] * d[0] + d[1] * d[1] + 2.0 * d[2] * d[2]);
            }
        }
        errors.push(err_sq.sqrt());
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_rect_mesh, BoundaryTags};
    use crate::saddle::{uzawa_solve, UzawaParams};

    fn demo_model(nx: usize, ny: usize, beta: f64, eta: f64, g: f64) -> ContactModel {
        let mesh = generate_rect_mesh(nx, ny, 2.0, 1.0, BoundaryTags::default()).unwrap();
        let n = mesh.node_count();
        let loads = Loads::constant_fields(n, [0.0, -0.5], [0.4, 0.0]);
        ContactModel::new(mesh, Material::new(beta, eta, 1.0).unwrap(), loads, g).unwrap()
    }

    #[test]
    fn assembled_matrices_are_symmetric() {
        let inst = assemble(&demo_model(4, 2, 1.0, 0.5, 0.1)).unwrap();
        assert_eq!(linalg::max_abs(&(inst.gram() - inst.gram().transpose())), 0.0);
        assert_eq!(
            linalg::max_abs(&(inst.stiffness() - inst.stiffness().transpose())),
            0.0
        );
    }

    #[test]
    fn rigid_translation_has_zero_strain_energy() {
        // ε of a constant field vanishes, so the full stiffness kills it.
        let mesh = generate_rect_mesh(3, 3, 1.0, 1.0, BoundaryTags::default()).unwrap();
        let full = assemble_full(&mesh);
        let stiffness = 2.0 * &full.gram + 0.5 * &full.div_form;
        let translation =
            field_to_vector(&vec![[1.0, -2.0]; mesh.node_count()]);
        assert!((stiffness * translation).norm() < 1e-12);
    }

    #[test]
    fn coercivity_sandwich_matches_material() {
        for (beta, eta) in [(1.0, 0.0), (1.0, 0.5), (0.5, 2.0)] {
            let inst = assemble(&demo_model(4, 4, beta, eta, 0.1)).unwrap();
            let (lo, hi) = inst.coercivity_range().unwrap();
            assert!(lo >= 2.0 * beta - 1e-10, "lo {lo} for beta {beta}");
            assert!(hi <= 2.0 * beta + 2.0 * eta + 1e-10, "hi {hi} for eta {eta}");
        }
    }

    #[test]
    fn patch_test_is_exact() {
        let mesh = generate_rect_mesh(5, 4, 2.0, 1.0, BoundaryTags::default()).unwrap();
        let err = patch_test(&mesh, &Material::new(1.0, 0.5, 0.0).unwrap()).unwrap();
        assert!(err < 1e-12, "patch error {err:.3e}");
    }

    #[test]
    fn manufactured_solution_converges_at_first_order() {
        let errs =
            manufactured_energy_errors(&Material::new(1.0, 0.5, 0.0).unwrap(), &[4, 8, 16])
                .unwrap();
        for pair in errs.windows(2) {
            let rate = (pair[0] / pair[1]).log2();
            assert!(rate >= 0.9, "rate {rate} from errors {errs:?}");
        }
    }

    #[test]
    fn load_vector_is_linear_in_fields_and_modulations() {
        let model = demo_model(3, 2, 1.0, 0.5, 0.1);
        let inst = assemble(&model).unwrap();
        let mut scaled = model.clone();
        for v in scaled.loads.body.iter_mut() {
            v[0] *= 2.0;
            v[1] *= 2.0;
        }
        let inst2 = assemble(&scaled).unwrap();
        assert!((inst2.body_load() - 2.0 * inst.body_load()).norm() < 1e-13);
        assert!((inst2.traction_load() - inst.traction_load()).norm() == 0.0);
        // Modulations scale the assembled parts exactly.
        let t = 0.7;
        let expected = (model.loads.theta)(t) * inst.body_load()
            + (model.loads.zeta)(t) * inst.traction_load();
        assert_eq!(inst.load_at(t), expected);
    }

    #[test]
    fn contact_normal_displacement_is_exactly_zero() {
        let inst = assemble(&demo_model(4, 2, 1.0, 0.5, 0.05)).unwrap();
        let static_inst = inst.static_instance(0.0).unwrap();
        let sol = uzawa_solve(&static_inst, &UzawaParams::default()).unwrap();
        let nodal = inst.dof_map().expand(&sol.primal);
        for (i, node) in inst.dof_map().contact_nodes().iter().enumerate() {
            let t = inst.dof_map().tangent(i);
            let normal = [t[1], -t[0]];
            let u = nodal[*node];
            assert_eq!(u[0] * normal[0] + u[1] * normal[1], 0.0);
        }
    }

    #[test]
    fn large_bound_reproduces_fully_stuck_elasticity() {
        // A huge friction bound forces u_τ = 0, so contact nodes behave as
        // pinned; compare with an independent Dirichlet solve.
        let mesh = generate_rect_mesh(4, 2, 2.0, 1.0, BoundaryTags::default()).unwrap();
        let n = mesh.node_count();
        let loads = Loads::constant_fields(n, [0.3, -1.0], [0.0, 0.0]);
        let material = Material::new(1.0, 0.5, 0.0).unwrap();
        let model = ContactModel::new(mesh.clone(), material, loads, 1.0e6).unwrap();
        let inst = assemble(&model).unwrap();
        let sol = uzawa_solve(&inst.static_instance(0.0).unwrap(), &UzawaParams::default()).unwrap();
        let nodal = inst.dof_map().expand(&sol.primal);

        let mut prescribed: Vec<Option<[f64; 2]>> = vec![None; n];
        for node in mesh.tagged_nodes(TAG_CLAMPED) {
            prescribed[node] = Some([0.0, 0.0]);
        }
        for node in mesh.tagged_nodes(TAG_CONTACT) {
            if prescribed[node].is_none() {
                prescribed[node] = Some([0.0, 0.0]);
            }
        }
        let oracle = solve_dirichlet(&mesh, &material, &prescribed, &vec![[0.3, -1.0]; n]).unwrap();
        for i in 0..n {
            assert!((nodal[i][0] - oracle[i][0]).abs() < 1e-8, "node {i}");
            assert!((nodal[i][1] - oracle[i][1]).abs() < 1e-8, "node {i}");
        }
    }

    #[test]
    fn zero_modulations_give_zero_trajectory() {
        let mut model = demo_model(3, 2, 1.0, 0.5, 0.1);
        model.loads = model.loads.with_modulations(|_| 0.0, |_| 0.0);
        let inst = assemble(&model).unwrap();
        let problem = inst.to_evolution_problem(TimeGrid::new(0.1, 5).unwrap()).unwrap();
        let traj = crate::history::solve_evolution(&problem, &UzawaParams::default()).unwrap();
        for u in &traj.primal {
            assert!(u.norm() < 1e-12);
        }
        // The constraint datum vanishes identically.
        for k in 0..=5 {
            assert_eq!(problem.constraint_at(0.1 * k as f64), DVector::zeros(inst.reduced_dim()));
        }
    }

    #[test]
    fn friction_kkt_classifies_stick_and_slip() {
        let u = DVector::from_vec(vec![0.0, 0.2, -0.3]);
        let lam = DVector::from_vec(vec![0.05, 0.1, -0.1]);
        let w = DVector::from_element(3, 1.0);
        let report = check_friction_kkt(&u, &lam, 0.1, &w, 1e-9).unwrap();
        assert_eq!(report.stick, vec![0]);
        assert_eq!(report.slip, vec![1, 2]);
        assert!(report.max_bound_residual == 0.0);
        assert!(report.max_slip_residual < 1e-12);
    }

    #[test]
    fn slanted_contact_boundary_keeps_normal_component_at_rounding_level() {
        // Quadrilateral with a slanted contact edge: the tangential-dof
        // reduction must handle non-axis-aligned tangents.
        use crate::mesh::BoundaryEdge;
        let mesh = crate::mesh::Mesh::new(
            vec![[0.0, 0.0], [2.0, 1.0], [2.0, 2.0], [0.0, 2.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![
                BoundaryEdge { nodes: [0, 1], tag: TAG_CONTACT },
                BoundaryEdge { nodes: [1, 2], tag: TAG_TRACTION },
                BoundaryEdge { nodes: [2, 3], tag: TAG_TRACTION },
                BoundaryEdge { nodes: [3, 0], tag: TAG_CLAMPED },
            ],
        )
        .unwrap();
        let n = mesh.node_count();
        let loads = Loads::constant_fields(n, [0.0, -1.0], [0.2, 0.0]);
        let model =
            ContactModel::new(mesh, Material::new(1.0, 0.5, 0.0).unwrap(), loads, 0.05).unwrap();
        let inst = assemble(&model).unwrap();
        // Node 0 is a clamped/contact corner and stays clamped; node 1 keeps
        // one tangential dof along the slanted edge.
        assert_eq!(inst.multiplier_dim(), 1);
        let t = inst.dof_map().tangent(0);
        assert!((t[0] * t[0] + t[1] * t[1] - 1.0).abs() < 1e-15);
        assert!((t[1] / t[0] - 0.5).abs() < 1e-15, "tangent {t:?}");
        let sol = uzawa_solve(&inst.static_instance(0.0).unwrap(), &UzawaParams::default()).unwrap();
        let nodal = inst.dof_map().expand(&sol.primal);
        let node = inst.dof_map().contact_node(0);
        let normal = [t[1], -t[0]];
        let u_n = nodal[node][0] * normal[0] + nodal[node][1] * normal[1];
        assert!(u_n.abs() < 1e-15, "normal displacement {u_n:.3e}");
    }

    #[test]
    fn largest_demo_mesh_solves_with_mixed_regime() {
        let model = demo_model(16, 16, 1.0, 0.5, 0.7);
        let inst = assemble(&model).unwrap();
        let sol = uzawa_solve(&inst.static_instance(1.0).unwrap(), &UzawaParams::default()).unwrap();
        let report = check_friction_kkt(
            &inst.tangential_displacements(&sol.primal),
            &sol.multiplier,
            model.friction_bound,
            inst.coupling().weights(),
            1e-7,
        )
        .unwrap();
        assert!(report.max_bound_residual <= 1e-9);
        assert!(report.max_slip_residual <= 1e-9);
        assert_eq!(report.stick.len() + report.slip.len(), inst.multiplier_dim());
    }

    #[test]
    fn gamma3_empty_gives_pure_elasticity_instance() {
        let tags = BoundaryTags {
            left: TAG_CLAMPED,
            right: TAG_TRACTION,
            bottom: TAG_TRACTION,
            top: TAG_TRACTION,
        };
        let mesh = generate_rect_mesh(3, 2, 1.0, 1.0, tags).unwrap();
        let n = mesh.node_count();
        let model = ContactModel::new(
            mesh,
            Material::new(1.0, 0.0, 0.0).unwrap(),
            Loads::constant_fields(n, [0.0, -1.0], [0.0, 0.0]),
            0.1,
        )
        .unwrap();
        let inst = assemble(&model).unwrap();
        assert_eq!(inst.multiplier_dim(), 0);
        assert!(uzawa_solve(&inst.static_instance(0.0).unwrap(), &UzawaParams::default()).is_ok());
    }
}
