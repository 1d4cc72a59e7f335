use criterion::{criterion_group, criterion_main, Criterion};

use hdmix_core::fem2d::{assemble, Loads};
use hdmix_core::history::solve_evolution;
use hdmix_core::mesh::{generate_rect_mesh, BoundaryTags};
use hdmix_core::saddle::uzawa_solve;
use hdmix_core::{ContactModel, Material, TimeGrid, UzawaParams};

fn demo_model(nx: usize, ny: usize) -> ContactModel {
    let mesh = generate_rect_mesh(nx, ny, 2.0, 1.0, BoundaryTags::default()).unwrap();
    let n = mesh.node_count();
    let loads = Loads::constant_fields(n, [0.0, -0.3], [0.5, -0.1])
        .with_modulations(|_| 1.0, |t| 0.5 + t);
    ContactModel::new(mesh, Material::new(1.0, 0.5, 1.0).unwrap(), loads, 0.1).unwrap()
}

fn bench_assemble(c: &mut Criterion) {
    let model = demo_model(16, 16);
    c.bench_function("assemble 16x16", |b| b.iter(|| assemble(&model).unwrap()));
}

fn bench_static_uzawa(c: &mut Criterion) {
    let inst = assemble(&demo_model(8, 8)).unwrap();
    let static_inst = inst.static_instance(1.0).unwrap();
    let params = UzawaParams::default();
    c.bench_function("uzawa static 8x8", |b| {
        b.iter(|| uzawa_solve(&static_inst, &params).unwrap())
    });
}

fn bench_evolution(c: &mut Criterion) {
    let inst = assemble(&demo_model(8, 8)).unwrap();
    let problem = inst.to_evolution_problem(TimeGrid::new(0.05, 20).unwrap()).unwrap();
    let params = UzawaParams::default();
    c.bench_function("evolution 8x8 x20 steps", |b| {
        b.iter(|| solve_evolution(&problem, &params).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_assemble, bench_static_uzawa, bench_evolution
}
criterion_main!(benches);
