//! HDG discretization of the pressure / total-velocity system: per-element
//! block assembly, static condensation onto the skeleton pressure trace,
//! global solve, and element-local recovery.

use crate::condense::{
    condense_element, CondensedElement, ElementSystem, TraceDofMap, TraceSolveCache, TraceSystem,
};
use crate::error::{Error, Result};
use crate::field::{ElementField, SkeletonField, VectorField};
use crate::fluid::FluidModel;
use crate::geom::{trace_row, GeometryCache};
use crate::mesh::{Field, Mesh, Skeleton};
use crate::ref_element::ReferenceElement;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Stabilization overrides. The default is tau = lambda_t (n.K n) / ell per
/// element edge with ell the domain diagonal.
#[derive(Debug, Clone, Copy)]
pub struct DarcyOptions {
    pub tau_scale: f64,
    pub tau_override: Option<f64>,
}

impl Default for DarcyOptions {
    fn default() -> Self {
        DarcyOptions {
            tau_scale: 1.0,
            tau_override: None,
        }
    }
}

/// Everything the Darcy solve reads. Saturations and their stored gradients
/// come from the previous time level; `dirichlet` is the edgewise projected
/// Dirichlet pressure trace at the solve time; `source` is the
/// manufactured-forcing divergence.
pub struct DarcyInput<'a> {
    pub mesh: &'a Mesh,
    pub skel: &'a Skeleton,
    pub refel: &'a ReferenceElement,
    pub geom: &'a GeometryCache,
    pub fluid: &'a FluidModel,
    pub s_w: &'a ElementField,
    pub s_g: &'a ElementField,
    pub q_w: &'a VectorField,
    pub q_g: &'a VectorField,
    pub dirichlet: &'a SkeletonField,
    pub source: Option<&'a (dyn Fn([f64; 2]) -> f64 + Sync)>,
    pub options: DarcyOptions,
    /// Optional reusable factorization state for repeated solves.
    pub solver_cache: Option<&'a TraceSolveCache>,
}

/// Dense per-element blocks of the saddle system
/// `[A -B^T C^T; B D E; C G H] [U; P; Lam] = [R_u; R_p; R_lam]`,
/// with trace columns only on non-Dirichlet edges.
pub struct DarcyLocalBlocks {
    pub a: DMatrix<f64>,
    pub bt: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r_u: DVector<f64>,
    pub r_p: DVector<f64>,
    pub r_lambda: DVector<f64>,
    /// Global trace dofs of the local trace columns.
    pub trace_dofs: Vec<usize>,
    /// Local edges (indices into 0..3) carrying trace unknowns.
    pub free_edges: Vec<usize>,
}

impl DarcyLocalBlocks {
    /// Assemble into the generic condensation layout.
    pub fn element_system(&self) -> ElementSystem {
        let n2 = self.a.nrows();
        let n = self.d.nrows();
        let nt = self.trace_dofs.len();
        let mut volume = DMatrix::zeros(n2 + n, n2 + n);
        volume.view_mut((0, 0), (n2, n2)).copy_from(&self.a);
        volume.view_mut((0, n2), (n2, n)).copy_from(&(-&self.bt));
        volume.view_mut((n2, 0), (n, n2)).copy_from(&self.b);
        volume.view_mut((n2, n2), (n, n)).copy_from(&self.d);
        let mut coupling_vt = DMatrix::zeros(n2 + n, nt);
        coupling_vt
            .view_mut((0, 0), (n2, nt))
            .copy_from(&self.c.transpose());
        coupling_vt.view_mut((n2, 0), (n, nt)).copy_from(&self.e);
        let mut coupling_tv = DMatrix::zeros(nt, n2 + n);
        coupling_tv.view_mut((0, 0), (nt, n2)).copy_from(&self.c);
        coupling_tv.view_mut((0, n2), (nt, n)).copy_from(&self.g);
        let mut rhs_volume = DVector::zeros(n2 + n);
        rhs_volume.rows_mut(0, n2).copy_from(&self.r_u);
        rhs_volume.rows_mut(n2, n).copy_from(&self.r_p);
        ElementSystem {
            volume,
            coupling_vt,
            coupling_tv,
            trace: self.h.clone(),
            rhs_volume,
            rhs_trace: self.r_lambda.clone(),
            trace_dofs: self.trace_dofs.clone(),
        }
    }
}

/// Assembled and condensed Darcy system, ready for the trace solve.
pub struct DarcyAssembly {
    pub blocks: Vec<DarcyLocalBlocks>,
    pub condensed: Vec<CondensedElement>,
    pub trace_system: TraceSystem,
    pub dof_map: TraceDofMap,
    /// L2-projected Dirichlet pressure data on every edge (used on Dirichlet ones).
    pub dirichlet: SkeletonField,
    /// Stabilization per (element, local edge).
    pub tau: Vec<[f64; 3]>,
}

/// Solution fields of one Darcy solve.
pub struct DarcySolution {
    pub p: ElementField,
    pub u: VectorField,
    /// Pressure trace on every edge: solved values on free edges, projected
    /// data on Dirichlet edges.
    pub lambda: SkeletonField,
    /// Numerical-trace normal velocity at the global edge quadrature points,
    /// per (element, local edge); single-valued across interior edges.
    pub uhat_n: Vec<[DVector<f64>; 3]>,
    pub tau: Vec<[f64; 3]>,
}

/// Stabilization per (element, local edge).
fn compute_tau(input: &DarcyInput) -> Vec<[f64; 3]> {
    let ell = input.geom.diagonal;
    (0..input.mesh.n_elements())
        .map(|el| {
            let mut out = [0.0; 3];
            let sw = input.s_w.element_mean(el);
            let sg = input.s_g.element_mean(el);
            let lam_t = input
                .fluid
                .mobilities(sw, sg)
                .map(|m| m.lam_t)
                .unwrap_or(1.0);
            for le in 0..3 {
                let tau = match input.options.tau_override {
                    Some(t) => t,
                    None => {
                        let kn = input.mesh.element_perm[el]
                            .normal_component(input.geom.elements[el].normal[le]);
                        lam_t * kn / ell
                    }
                };
                out[le] = tau * input.options.tau_scale;
            }
            out
        })
        .collect()
}

pub fn assemble_darcy(input: &DarcyInput) -> Result<DarcyAssembly> {
    let refel = input.refel;
    let k1 = refel.degree + 1;
    let dof_map = TraceDofMap::build(input.skel, Field::Pressure, k1);
    let dirichlet = input.dirichlet.clone();
    let tau = compute_tau(input);

    let results: Vec<Result<(DarcyLocalBlocks, CondensedElement)>> = (0..input.mesh.n_elements())
        .into_par_iter()
        .map(|el| {
            let blocks = assemble_element(input, &dof_map, &dirichlet, &tau, el)?;
            let ce = condense_element(blocks.element_system(), el)?;
            Ok((blocks, ce))
        })
        .collect();

    let mut blocks = Vec::with_capacity(results.len());
    let mut condensed = Vec::with_capacity(results.len());
    for r in results {
        let (b, c) = r?;
        blocks.push(b);
        condensed.push(c);
    }

    let mut trace_system = TraceSystem::new(dof_map.n_dofs);
    for ce in &condensed {
        trace_system.add_element(ce);
    }
    Ok(DarcyAssembly {
        blocks,
        condensed,
        trace_system,
        dof_map,
        dirichlet,
        tau,
    })
}

fn assemble_element(
    input: &DarcyInput,
    dof_map: &TraceDofMap,
    dirichlet: &SkeletonField,
    tau_all: &[[f64; 3]],
    el: usize,
) -> Result<DarcyLocalBlocks> {
    let refel = input.refel;
    let n = refel.n_modes;
    let k1 = refel.degree + 1;
    let nq = refel.volume_quadrature.points.len();
    let nq1 = refel.edge_quadrature.points.len();
    let g = &input.geom.elements[el];
    let det_j = g.det_j;
    let kinv = input.mesh.element_perm[el].inverse();
    let tau = tau_all[el];

    // previous-step fields at volume quadrature
    let sw = input.s_w.values_at(el, &refel.phi_q);
    let sg = input.s_g.values_at(el, &refel.phi_q);
    let (qwx, qwy) = input.q_w.values_at(el, &refel.phi_q);
    let (qgx, qgy) = input.q_g.values_at(el, &refel.phi_q);

    let mut inv_lam_t: DVector<f64> = DVector::zeros(nq);
    let mut cap_force_x: DVector<f64> = DVector::zeros(nq);
    let mut cap_force_y: DVector<f64> = DVector::zeros(nq);
    for q in 0..nq {
        let mob = input.fluid.mobilities(sw[q], sg[q]).map_err(|e| Error::Assembly {
            element: el,
            msg: format!("mobility evaluation failed: {e}"),
        })?;
        if !(mob.lam_t > 0.0) {
            return Err(Error::Assembly {
                element: el,
                msg: format!("total mobility collapsed ({})", mob.lam_t),
            });
        }
        inv_lam_t[q] = 1.0 / mob.lam_t;
        let ff = input.fluid.fractional_flow(sw[q], sg[q]).map_err(|e| Error::Assembly {
            element: el,
            msg: format!("fractional flow failed: {e}"),
        })?;
        let pcw = input
            .fluid
            .capillary(crate::fluid::CapPhase::WettingOil, sw[q])
            .map_err(|e| Error::Assembly {
                element: el,
                msg: format!("capillary failed: {e}"),
            })?;
        let pcg = input
            .fluid
            .capillary(crate::fluid::CapPhase::GasOil, sg[q])
            .map_err(|e| Error::Assembly {
                element: el,
                msg: format!("capillary failed: {e}"),
            })?;
        cap_force_x[q] = ff.f_w * pcw.d1 * qwx[q] + ff.f_g * pcg.d1 * qgx[q];
        cap_force_y[q] = ff.f_w * pcw.d1 * qwy[q] + ff.f_g * pcg.d1 * qgy[q];
    }

    let w = &refel.volume_quadrature.weights;

    // A = det_j * kinv[d][e] * (phi^T diag(w / lam_t) phi)
    let mut phi_scaled = refel.phi_q.clone();
    for q in 0..nq {
        let wq = w[q] * inv_lam_t[q] * det_j;
        for j in 0..n {
            phi_scaled[(q, j)] *= wq;
        }
    }
    let mut m_lam: DMatrix<f64> = DMatrix::zeros(n, n);
    m_lam.gemm_tr(1.0, &refel.phi_q, &phi_scaled, 0.0);
    let mut a: DMatrix<f64> = DMatrix::zeros(2 * n, 2 * n);
    for d in 0..2 {
        for e2 in 0..2 {
            let kde = kinv[d][e2];
            if kde != 0.0 {
                for i in 0..n {
                    for j in 0..n {
                        a[(d * n + i, e2 * n + j)] += kde * m_lam[(i, j)];
                    }
                }
            }
        }
    }

    // B^T[(d i), j] = int phi_j d(phi_i)/dx_d
    phi_scaled.copy_from(&refel.phi_q);
    for q in 0..nq {
        let wq = w[q] * det_j;
        for j in 0..n {
            phi_scaled[(q, j)] *= wq;
        }
    }
    let mut bt: DMatrix<f64> = DMatrix::zeros(2 * n, n);
    bt.view_mut((0, 0), (n, n)).gemm_tr(1.0, &g.gx, &phi_scaled, 0.0);
    bt.view_mut((n, 0), (n, n)).gemm_tr(1.0, &g.gy, &phi_scaled, 0.0);

    // B[i, (d j)] = -int phi_j d(phi_i)/dx_d + sum_edges int phi_j n_d phi_i;
    // the volume part equals -Bt blockwise (same (i, j) order).
    let mut b: DMatrix<f64> = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = -bt[(i, j)];
            b[(i, n + j)] = -bt[(n + i, j)];
        }
    }
    let w1 = &refel.edge_quadrature.weights;
    for le in 0..3 {
        let len = g.edge_length[le];
        let nrm = g.normal[le];
        let tr = &refel.edge_phi_q[le];
        for q in 0..nq1 {
            let wq = w1[q] * len;
            for i in 0..n {
                let pi = tr[(q, i)] * wq;
                for j in 0..n {
                    let pj = tr[(q, j)];
                    b[(i, j)] += pi * pj * nrm[0];
                    b[(i, n + j)] += pi * pj * nrm[1];
                }
            }
        }
    }

    // D = sum_edges tau int phi_i phi_j
    let mut d_stab: DMatrix<f64> = DMatrix::zeros(n, n);
    for le in 0..3 {
        let len = g.edge_length[le];
        let tr = &refel.edge_phi_q[le];
        for q in 0..nq1 {
            let wq = w1[q] * len * tau[le];
            for i in 0..n {
                let pi = tr[(q, i)] * wq;
                for j in 0..n {
                    d_stab[(i, j)] += pi * tr[(q, j)];
                }
            }
        }
    }

    // trace couplings on free (non-Dirichlet) edges
    let mut free_edges = Vec::new();
    let mut trace_dofs = Vec::new();
    for le in 0..3 {
        let ge = input.skel.element_edges[el][le];
        if let Some(base) = dof_map.edge_base[ge] {
            free_edges.push(le);
            for m in 0..k1 {
                trace_dofs.push(base + m);
            }
        }
    }
    let nt = trace_dofs.len();
    let mut c: DMatrix<f64> = DMatrix::zeros(nt, 2 * n);
    let mut e_coup: DMatrix<f64> = DMatrix::zeros(n, nt);
    let mut g_coup: DMatrix<f64> = DMatrix::zeros(nt, n);
    let mut h: DMatrix<f64> = DMatrix::zeros(nt, nt);
    let mut r_u: DVector<f64> = DVector::zeros(2 * n);
    let mut r_p: DVector<f64> = DVector::zeros(n);
    let r_lambda: DVector<f64> = DVector::zeros(nt);

    for (fe, &le) in free_edges.iter().enumerate() {
        let ge = input.skel.element_edges[el][le];
        let inc = edge_incidence(input.skel, ge, el, le);
        let len = g.edge_length[le];
        let nrm = g.normal[le];
        let tr = &refel.edge_phi_q[le];
        for q in 0..nq1 {
            let row = trace_row(q, nq1, inc);
            let wq = w1[q] * len;
            for m in 0..k1 {
                let lm = refel.edge_legendre_q[(q, m)] * wq;
                let ti = fe * k1 + m;
                for j in 0..n {
                    let pj = tr[(row, j)];
                    // C[(e m), (d j)] = <L_m, phi_j n_d>
                    c[(ti, j)] += lm * pj * nrm[0];
                    c[(ti, n + j)] += lm * pj * nrm[1];
                    // E[j, (e m)] = -tau <L_m, phi_j>
                    e_coup[(j, ti)] -= tau[le] * lm * pj;
                    // G[(e m), j] = tau <phi_j, L_m>
                    g_coup[(ti, j)] += tau[le] * lm * pj;
                }
            }
        }
        // H[(e m), (e m)] = -tau <L_m, L_m> = -tau len (orthonormal modes)
        for m in 0..k1 {
            let ti = fe * k1 + m;
            h[(ti, ti)] = -tau[le] * len;
        }
    }

    // Dirichlet edges: data terms into r_u (velocity eq) and r_p (stabilization)
    for le in 0..3 {
        let ge = input.skel.element_edges[el][le];
        if dof_map.edge_base[ge].is_some() {
            continue;
        }
        let inc = edge_incidence(input.skel, ge, el, le);
        let len = g.edge_length[le];
        let nrm = g.normal[le];
        let tr = &refel.edge_phi_q[le];
        let pbar = dirichlet.values_at(ge, &refel.edge_legendre_q);
        for q in 0..nq1 {
            let row = trace_row(q, nq1, inc);
            let wq = w1[q] * len * pbar[q];
            for i in 0..n {
                let pi = tr[(row, i)];
                // velocity eq: + <P pbar, v.n> moved to rhs
                r_u[i] -= wq * pi * nrm[0];
                r_u[n + i] -= wq * pi * nrm[1];
                // mass eq: - <tau P pbar, w> moved to rhs
                r_p[i] += tau[le] * wq * pi;
            }
        }
    }

    // capillary volume forcing and source
    for q in 0..nq {
        let wq = w[q] * det_j;
        for i in 0..n {
            r_u[i] -= wq * cap_force_x[q] * refel.phi_q[(q, i)];
            r_u[n + i] -= wq * cap_force_y[q] * refel.phi_q[(q, i)];
        }
    }
    if let Some(src) = input.source {
        for q in 0..nq {
            let xp = g.to_physical(refel.volume_quadrature.points[q]);
            let sv = src(xp) * w[q] * det_j;
            for i in 0..n {
                r_p[i] += sv * refel.phi_q[(q, i)];
            }
        }
    }

    Ok(DarcyLocalBlocks {
        a,
        bt,
        b,
        d: d_stab,
        c,
        e: e_coup,
        g: g_coup,
        h,
        r_u,
        r_p,
        r_lambda,
        trace_dofs,
        free_edges,
    })
}

/// Orientation flag of (element, local edge) with respect to the global edge.
fn edge_incidence(skel: &Skeleton, ge: usize, el: usize, le: usize) -> bool {
    let (first, second) = &skel.edge_to_elements[ge];
    if first.element == el && first.local_edge == le {
        first.orientation_matches
    } else {
        second
            .as_ref()
            .expect("incidence must exist")
            .orientation_matches
    }
}

/// Solve the condensed trace system. With no Dirichlet pressure edge the
/// nullspace is pinned by a zero-mean constraint on the trace.
pub fn solve_trace(assembly: &DarcyAssembly, skel: &Skeleton) -> Result<DVector<f64>> {
    solve_trace_cached(assembly, skel, None)
}

pub fn solve_trace_cached(
    assembly: &DarcyAssembly,
    skel: &Skeleton,
    cache: Option<&TraceSolveCache>,
) -> Result<DVector<f64>> {
    let any_dirichlet = (0..skel.n_edges()).any(|e| skel.is_dirichlet(e, Field::Pressure));
    if any_dirichlet {
        match cache {
            Some(c) => assembly.trace_system.solve_cached(c),
            None => assembly.trace_system.solve(),
        }
    } else {
        let mut w = DVector::zeros(assembly.dof_map.n_dofs);
        for e in 0..skel.n_edges() {
            if let Some(base) = assembly.dof_map.edge_base[e] {
                w[base] = skel.edge_lengths[e];
            }
        }
        assembly.trace_system.solve_with_mean_constraint(&w)
    }
}

/// Element-local recovery of (u_t, p_o) from the trace solution.
pub fn recover_volume(
    assembly: &DarcyAssembly,
    refel: &ReferenceElement,
    trace: &DVector<f64>,
) -> (VectorField, ElementField) {
    let n = refel.n_modes;
    let ne = assembly.blocks.len();
    let mut u = VectorField::zeros(ne, n);
    let mut p = ElementField::zeros(ne, n);
    let sols: Vec<DVector<f64>> = assembly
        .condensed
        .par_iter()
        .map(|ce| ce.recover(trace))
        .collect();
    for (el, x) in sols.iter().enumerate() {
        u.coeffs_mut(el).copy_from_slice(x.as_slice().split_at(2 * n).0);
        p.coeffs_mut(el).copy_from_slice(&x.as_slice()[2 * n..]);
    }
    (u, p)
}

/// Assemble, solve, and recover; returns the full solution with the cached
/// numerical-trace normal velocity.
pub fn solve_darcy(input: &DarcyInput) -> Result<DarcySolution> {
    let assembly = assemble_darcy(input)?;
    let trace = solve_trace_cached(&assembly, input.skel, input.solver_cache)?;
    let (u, p) = recover_volume(&assembly, input.refel, &trace);

    let k1 = input.refel.degree + 1;
    let mut lambda = SkeletonField::zeros(input.skel.n_edges(), k1);
    for e in 0..input.skel.n_edges() {
        match assembly.dof_map.edge_base[e] {
            Some(base) => {
                for m in 0..k1 {
                    lambda.coeffs_mut(e)[m] = trace[base + m];
                }
            }
            None => lambda
                .coeffs_mut(e)
                .copy_from_slice(assembly.dirichlet.coeffs(e)),
        }
    }

    let uhat_n = compute_uhat_n(input, &u, &p, &lambda, &assembly.tau);
    Ok(DarcySolution {
        p,
        u,
        lambda,
        uhat_n,
        tau: assembly.tau,
    })
}

/// u_t.n + tau (p_o - p_hat) at the global edge quadrature points of each
/// (element, local edge).
fn compute_uhat_n(
    input: &DarcyInput,
    u: &VectorField,
    p: &ElementField,
    lambda: &SkeletonField,
    tau: &[[f64; 3]],
) -> Vec<[DVector<f64>; 3]> {
    let refel = input.refel;
    let nq1 = refel.edge_quadrature.points.len();
    let n = refel.n_modes;
    (0..input.mesh.n_elements())
        .map(|el| {
            let g = &input.geom.elements[el];
            let mut out: [DVector<f64>; 3] =
                [DVector::zeros(nq1), DVector::zeros(nq1), DVector::zeros(nq1)];
            for le in 0..3 {
                let ge = input.skel.element_edges[el][le];
                let inc = edge_incidence(input.skel, ge, el, le);
                let nrm = g.normal[le];
                let tr = &refel.edge_phi_q[le];
                let lam = lambda.values_at(ge, &refel.edge_legendre_q);
                let cu = u.coeffs(el);
                let cp = p.coeffs(el);
                for q in 0..nq1 {
                    let row = trace_row(q, nq1, inc);
                    let (mut un, mut pv) = (0.0, 0.0);
                    for m in 0..n {
                        let ph = tr[(row, m)];
                        un += ph * (cu[m] * nrm[0] + cu[n + m] * nrm[1]);
                        pv += ph * cp[m];
                    }
                    out[le][q] = un + tau[el][le] * (pv - lam[q]);
                }
            }
            out
        })
        .collect()
}

/// Per-element boundary-flux imbalance of a solved state:
/// `max_el | oint uhat.n ds - int g_p dx |`, with the mean edge-integral
/// scale for relative bounds.
pub struct ConservationReport {
    pub max_imbalance: f64,
    pub mean_flux_scale: f64,
    pub total_boundary_flux: f64,
}

pub fn local_conservation_report(
    input: &DarcyInput,
    sol: &DarcySolution,
) -> ConservationReport {
    let refel = input.refel;
    let nq1 = refel.edge_quadrature.points.len();
    let w1 = &refel.edge_quadrature.weights;
    let mut max_imbalance: f64 = 0.0;
    let mut flux_scale = 0.0;
    let mut total_boundary = 0.0;
    for el in 0..input.mesh.n_elements() {
        let g = &input.geom.elements[el];
        let mut net = 0.0;
        for le in 0..3 {
            let len = g.edge_length[le];
            let ge = input.skel.element_edges[el][le];
            let is_boundary = input.skel.boundary_tag[ge].is_some();
            for q in 0..nq1 {
                let f = w1[q] * len * sol.uhat_n[el][le][q];
                net += f;
                flux_scale += (w1[q] * len * sol.uhat_n[el][le][q]).abs();
                if is_boundary {
                    total_boundary += f;
                }
            }
        }
        if let Some(src) = input.source {
            let nq = refel.volume_quadrature.points.len();
            for q in 0..nq {
                let xp = g.to_physical(refel.volume_quadrature.points[q]);
                net -= refel.volume_quadrature.weights[q] * g.det_j * src(xp);
            }
        }
        max_imbalance = max_imbalance.max(net.abs());
    }
    let ne = input.mesh.n_elements() as f64;
    ConservationReport {
        max_imbalance,
        mean_flux_scale: flux_scale / (3.0 * ne),
        total_boundary_flux: total_boundary,
    }
}

/// Dense monolithic solve of the full (U, P, Lambda) block system; the
/// independent oracle for the Schur-complement path on small meshes.
pub fn monolithic_solve(
    input: &DarcyInput,
) -> Result<(VectorField, ElementField, DVector<f64>)> {
    let assembly = assemble_darcy(input)?;
    let refel = input.refel;
    let n = refel.n_modes;
    let ne = input.mesh.n_elements();
    let nvol = 3 * n;
    let ntr = assembly.dof_map.n_dofs;
    let dim = ne * nvol + ntr;
    let mut full: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut rhs: DVector<f64> = DVector::zeros(dim);
    for (el, bl) in assembly.blocks.iter().enumerate() {
        let sys = bl.element_system();
        let base = el * nvol;
        for i in 0..nvol {
            rhs[base + i] += sys.rhs_volume[i];
            for j in 0..nvol {
                full[(base + i, base + j)] += sys.volume[(i, j)];
            }
            for (tj, &gd) in sys.trace_dofs.iter().enumerate() {
                full[(base + i, ne * nvol + gd)] += sys.coupling_vt[(i, tj)];
            }
        }
        for (ti, &gi) in sys.trace_dofs.iter().enumerate() {
            rhs[ne * nvol + gi] += sys.rhs_trace[ti];
            for j in 0..nvol {
                full[(ne * nvol + gi, base + j)] += sys.coupling_tv[(ti, j)];
            }
            for (tj, &gj) in sys.trace_dofs.iter().enumerate() {
                full[(ne * nvol + gi, ne * nvol + gj)] += sys.trace[(ti, tj)];
            }
        }
    }
    let x = full
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("monolithic Darcy matrix is singular".into()))?;
    let mut u = VectorField::zeros(ne, n);
    let mut p = ElementField::zeros(ne, n);
    for el in 0..ne {
        let base = el * nvol;
        for m in 0..2 * n {
            u.coeffs_mut(el)[m] = x[base + m];
        }
        for m in 0..n {
            p.coeffs_mut(el)[m] = x[base + 2 * n + m];
        }
    }
    let lam = DVector::from_iterator(ntr, (0..ntr).map(|i| x[ne * nvol + i]));
    Ok((u, p, lam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_skeleton, structured_mesh, BcKind, BoundarySpec};

    fn all_dirichlet() -> BoundarySpec {
        BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Dirichlet),
            (4, BcKind::Dirichlet),
        ])
    }

    fn flow_bc() -> BoundarySpec {
        BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ])
    }

    struct Setup {
        mesh: Mesh,
        skel: Skeleton,
        refel: ReferenceElement,
        geom: GeometryCache,
        fluid: FluidModel,
        s_w: ElementField,
        s_g: ElementField,
        q_w: VectorField,
        q_g: VectorField,
    }

    fn setup(n: usize, k: usize, bc: &BoundarySpec, perm: f64) -> Setup {
        let mesh = structured_mesh(n, 1.0, 1.0).unwrap();
        let mesh =
            crate::mesh::assign_rock(mesh, &crate::mesh::RockScenario::Constant { perm }, 0.2)
                .unwrap();
        let skel = build_skeleton(&mesh, bc).unwrap();
        let refel = ReferenceElement::build(k).unwrap();
        let geom = GeometryCache::build(&mesh, &skel, &refel);
        let fluid = FluidModel::manufactured();
        let s_w = ElementField::project(&mesh, &geom, &refel, |_| 0.3);
        let s_g = ElementField::project(&mesh, &geom, &refel, |_| 0.2);
        let q_w = VectorField::zeros(mesh.n_elements(), refel.n_modes);
        let q_g = VectorField::zeros(mesh.n_elements(), refel.n_modes);
        Setup {
            mesh,
            skel,
            refel,
            geom,
            fluid,
            s_w,
            s_g,
            q_w,
            q_g,
        }
    }

    fn input<'a>(s: &'a Setup, dirichlet: &'a SkeletonField) -> DarcyInput<'a> {
        DarcyInput {
            mesh: &s.mesh,
            skel: &s.skel,
            refel: &s.refel,
            geom: &s.geom,
            fluid: &s.fluid,
            s_w: &s.s_w,
            s_g: &s.s_g,
            q_w: &s.q_w,
            q_g: &s.q_g,
            dirichlet,
            source: None,
            options: DarcyOptions::default(),
            solver_cache: None,
        }
    }

    fn project_data(s: &Setup, f: impl Fn([f64; 2]) -> f64) -> SkeletonField {
        SkeletonField::project(&s.mesh, &s.skel, &s.refel, f)
    }

    #[test]
    fn local_block_dimensions() {
        let s = setup(1, 1, &all_dirichlet(), 1.0);
        let data = project_data(&s, |_x| 1.0);
        let asm = assemble_darcy(&input(&s, &data)).unwrap();
        // k=1: volume block is 9x9 = 3 * 3
        let sys = asm.blocks[0].element_system();
        assert_eq!(sys.volume.nrows(), 9);
        assert_eq!(sys.volume.ncols(), 9);
    }

    #[test]
    fn constant_dirichlet_gives_constant_trace_and_zero_velocity() {
        for k in [1, 3] {
            let s = setup(2, k, &all_dirichlet(), 1.0);
            let data = project_data(&s, |_x| 2.5);
            let sol = solve_darcy(&input(&s, &data)).unwrap();
            for e in 0..s.skel.n_edges() {
                let vals = sol.lambda.values_at(e, &s.refel.edge_legendre_q);
                for q in 0..vals.len() {
                    assert!((vals[q] - 2.5).abs() < 1e-10, "k={k} edge {e}");
                }
            }
            for el in 0..s.mesh.n_elements() {
                let (ux, uy) = sol.u.values_at(el, &s.refel.phi_q);
                for q in 0..ux.len() {
                    assert!(ux[q].abs() < 1e-10 && uy[q].abs() < 1e-10);
                }
                let pv = sol.p.values_at(el, &s.refel.phi_q);
                for q in 0..pv.len() {
                    assert!((pv[q] - 2.5).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn linear_pressure_is_reproduced_exactly() {
        // constant saturations, zero gradient fields, homogeneous K: linear
        // Dirichlet data must be reproduced with constant velocity.
        for k in [1usize, 2] {
            let s = setup(2, k, &all_dirichlet(), 1.0);
            let data_fn = |x: [f64; 2]| 2.0 - x[0] - 0.5 * x[1];
            let data = project_data(&s, data_fn);
            let sol = solve_darcy(&input(&s, &data)).unwrap();
            // u = -K lam_t grad p = (1, 0.5)
            for el in 0..s.mesh.n_elements() {
                let (ux, uy) = sol.u.values_at(el, &s.refel.phi_q);
                let pv = sol.p.values_at(el, &s.refel.phi_q);
                for (q, &pt) in s.refel.volume_quadrature.points.iter().enumerate() {
                    let xp = s.geom.elements[el].to_physical(pt);
                    assert!((ux[q] - 1.0).abs() < 1e-10, "k={k}: {}", ux[q]);
                    assert!((uy[q] - 0.5).abs() < 1e-10);
                    assert!((pv[q] - data_fn(xp)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn condensed_matches_monolithic_small_meshes() {
        for k in [1usize, 2, 3] {
            let s = setup(1, k, &flow_bc(), 1.0);
            let data = project_data(&s, |x| 1.0 + x[0] * x[0] - 0.3 * x[1]);
            let inp = input(&s, &data);
            let asm = assemble_darcy(&inp).unwrap();
            let tr = solve_trace(&asm, &s.skel).unwrap();
            let (u_c, p_c) = recover_volume(&asm, &s.refel, &tr);
            let (u_m, p_m, lam_m) = monolithic_solve(&inp).unwrap();
            let scale = lam_m.amax().max(1.0);
            for i in 0..tr.len() {
                assert!(
                    (tr[i] - lam_m[i]).abs() < 1e-10 * scale,
                    "k={k} trace dof {i}: {} vs {}",
                    tr[i],
                    lam_m[i]
                );
            }
            for el in 0..s.mesh.n_elements() {
                for m in 0..2 * s.refel.n_modes {
                    assert!((u_c.coeffs(el)[m] - u_m.coeffs(el)[m]).abs() < 1e-10 * scale);
                }
                for m in 0..s.refel.n_modes {
                    assert!((p_c.coeffs(el)[m] - p_m.coeffs(el)[m]).abs() < 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn interior_normal_trace_is_single_valued() {
        let s = setup(3, 2, &flow_bc(), 1.0);
        let data = project_data(&s, |x| (x[0] * 3.1).sin() + x[1]);
        let sol = solve_darcy(&input(&s, &data)).unwrap();
        let mut scale: f64 = 0.0;
        let mut max_jump: f64 = 0.0;
        for (first, second) in &s.skel.edge_to_elements {
            let Some(sec) = second else { continue };
            // both sides are stored at the same global quadrature points with
            // opposite outward normals, so the jump is the plain sum
            let a = &sol.uhat_n[first.element][first.local_edge];
            let b = &sol.uhat_n[sec.element][sec.local_edge];
            for q in 0..a.len() {
                max_jump = max_jump.max((a[q] + b[q]).abs());
                scale = scale.max(a[q].abs());
            }
        }
        assert!(max_jump <= 1e-9 * scale.max(1e-30), "jump {max_jump} scale {scale}");
    }

    #[test]
    fn no_flow_edges_have_zero_normal_trace() {
        let s = setup(3, 2, &flow_bc(), 1.0);
        let data = project_data(&s, |x| 1.0 - x[0]);
        let sol = solve_darcy(&input(&s, &data)).unwrap();
        let mut scale: f64 = 0.0;
        for el in 0..s.mesh.n_elements() {
            for le in 0..3 {
                scale = scale.max(sol.uhat_n[el][le].amax());
            }
        }
        for (e, tag) in s.skel.boundary_tag.iter().enumerate() {
            if matches!(tag, Some(3) | Some(4)) {
                let inc = &s.skel.edge_to_elements[e].0;
                let v = &sol.uhat_n[inc.element][inc.local_edge];
                for q in 0..v.len() {
                    assert!(v[q].abs() <= 1e-9 * scale, "edge {e}: {}", v[q]);
                }
            }
        }
    }

    #[test]
    fn closed_box_total_flux_vanishes() {
        // all-Neumann pressure with zero source: mean-constrained solve,
        // total boundary outflux zero.
        let bc = BoundarySpec::uniform(&[
            (1, BcKind::Neumann),
            (2, BcKind::Neumann),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ]);
        let s = setup(2, 1, &bc, 1.0);
        let data = project_data(&s, |_x| 0.0);
        let inp = input(&s, &data);
        let sol = solve_darcy(&inp).unwrap();
        let rep = local_conservation_report(&inp, &sol);
        assert!(rep.total_boundary_flux.abs() < 1e-12);
        assert!(rep.max_imbalance < 1e-12);
    }

    #[test]
    fn conservation_on_solved_state() {
        let s = setup(4, 2, &flow_bc(), 1.0);
        let data = project_data(&s, |x| 1.0 - x[0] + 0.2 * (x[1] * 2.0).cos());
        let inp = input(&s, &data);
        let sol = solve_darcy(&inp).unwrap();
        let rep = local_conservation_report(&inp, &sol);
        assert!(
            rep.max_imbalance <= 1e-9 * rep.mean_flux_scale.max(1e-30),
            "imbalance {} scale {}",
            rep.max_imbalance,
            rep.mean_flux_scale
        );
    }
}
