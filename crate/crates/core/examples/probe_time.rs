use triflow::darcy::{solve_darcy, DarcyInput, DarcyOptions};
use triflow::field::{ElementField, SkeletonField, VectorField};
use triflow::fluid::FluidModel;
use triflow::geom::GeometryCache;
use triflow::mesh::*;
use triflow::nonlinear::NewtonSystem;
use triflow::ref_element::ReferenceElement;
use triflow::transport::*;
use triflow::verify::exact;
use std::time::Instant;

fn main() {
    let k = 2; let n = 32;
    let bc = BoundarySpec::uniform(&[(1, BcKind::Dirichlet),(2, BcKind::Dirichlet),(3, BcKind::Dirichlet),(4, BcKind::Dirichlet)]);
    let mesh = structured_mesh(n, 1.0, 1.0).unwrap();
    let mesh = assign_rock(mesh, &RockScenario::Constant { perm: exact::PERM }, exact::PORO).unwrap();
    let skel = build_skeleton(&mesh, &bc).unwrap();
    let refel = ReferenceElement::build(k).unwrap();
    let geom = GeometryCache::build(&mesh, &skel, &refel);
    let fluid = FluidModel::manufactured();
    let t = 0.0;
    let wet = TransportState::project(&mesh, &skel, &geom, &refel,
        |x| exact::exact(x[0], x[1], t).s_w, |x| exact::exact(x[0], x[1], t).grad_s_w);
    let gas = TransportState::project(&mesh, &skel, &geom, &refel,
        |x| exact::exact(x[0], x[1], t).s_g, |x| exact::exact(x[0], x[1], t).grad_s_g);
    let dirichlet_p = SkeletonField::project(&mesh, &skel, &refel, |x| exact::exact(x[0], x[1], t).p_o);
    let src = |x: [f64;2]| exact::source_pressure(x[0], x[1], t);
    let di = DarcyInput { mesh: &mesh, skel: &skel, refel: &refel, geom: &geom, fluid: &fluid,
        s_w: &wet.s, s_g: &gas.s, q_w: &wet.q, q_g: &gas.q, dirichlet: &dirichlet_p,
        source: Some(&src), options: DarcyOptions::default() };
    let t0 = Instant::now(); let dsol = solve_darcy(&di).unwrap(); println!("darcy solve total: {:?}", t0.elapsed());

    let dirichlet_w = SkeletonField::project(&mesh, &skel, &refel, |x| exact::exact(x[0], x[1], t).s_w);
    let prob = TransportProblem { mesh: &mesh, skel: &skel, refel: &refel, geom: &geom, fluid: &fluid,
        phase: Phase::Wetting, prev: &wet, prev_flux: None, u_t: &dsol.u, uhat_n: &dsol.uhat_n,
        s_other: &gas.s, q_other: &gas.q, s_hat_other: &gas.s_hat, dt: 0.01, theta: 1.0,
        dirichlet: dirichlet_w, source: None, tau: TransportTau::default() };
    let mut op = TransportOperator::new(prob);
    let x = op.pack(&wet);
    let t0 = Instant::now(); let _r = op.residual(&x).unwrap(); println!("transport residual: {:?}", t0.elapsed());
    let t0 = Instant::now(); let _d = op.newton_step(&x).unwrap(); println!("transport newton step (assemble J + condense + solve + recover): {:?}", t0.elapsed());
    let t0 = Instant::now(); let _s = op.flux_snapshot(&wet).unwrap(); println!("flux snapshot: {:?}", t0.elapsed());
    println!("threads: {}", rayon::current_num_threads());
    triflow::bench_probe::time_newton_pieces(&op, &wet);
    triflow::bench_probe::time_darcy_pieces(&di);
    let t0 = Instant::now();
    let mut op2 = op; op2.refresh_tau(&wet);
    println!("  refresh_tau: {:?}", t0.elapsed());
}
