//! HDG discretization of one saturation equation in first-order form, with
//! Lax-Friedrichs convective and LDG diffusive numerical fluxes.
//!
//! The phase equation is solved implicitly per time step with a theta scheme
//! (theta = 1 backward Euler, theta = 1/2 Crank–Nicolson applied to the phase
//! variable with lagged coefficients). The linearized systems are statically
//! condensed onto the skeleton trace, exactly as in the Darcy solve.

use crate::condense::{
    condense_element, CondensedElement, ElementSystem, TraceDofMap, TraceSolveCache, TraceSystem,
};
use crate::error::{Error, Result};
use crate::field::{ElementField, SkeletonField, VectorField};
use crate::fluid::{CapPhase, FluidModel};
use crate::geom::{trace_row, GeometryCache};
use crate::mesh::{Field, Mesh, Skeleton};
use crate::nonlinear::{
    anderson_picard, newton, IterationRecord, NewtonSystem, NonlinearConfig,
};
use crate::ref_element::ReferenceElement;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::ops::Range;

/// Which saturation equation is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Wetting,
    LightOil,
}

impl Phase {
    pub fn field(self) -> Field {
        match self {
            Phase::Wetting => Field::Wetting,
            Phase::LightOil => Field::LightOil,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Wetting => "wetting",
            Phase::LightOil => "light_oil",
        }
    }
}

/// Volume and skeleton coefficients of one saturation field at a time level.
#[derive(Debug, Clone)]
pub struct TransportState {
    pub s: ElementField,
    pub q: VectorField,
    pub s_hat: SkeletonField,
}

impl TransportState {
    /// Project initial data: saturation, its gradient, and the edge trace.
    /// Dirichlet edges receive the same projected data.
    pub fn project(
        mesh: &Mesh,
        skel: &Skeleton,
        geom: &GeometryCache,
        refel: &ReferenceElement,
        s: impl Fn([f64; 2]) -> f64 + Copy,
        grad_s: impl Fn([f64; 2]) -> [f64; 2] + Copy,
    ) -> Self {
        TransportState {
            s: ElementField::project(mesh, geom, refel, s),
            q: VectorField::project(mesh, geom, refel, grad_s),
            s_hat: SkeletonField::project(mesh, skel, refel, s),
        }
    }
}

/// Coefficient bundle of one phase at a single evaluation point:
/// convective fraction f, cross-capillary coefficient a (multiplies the
/// frozen other-phase capillary gradient), own-diffusion coefficient b
/// (multiplies K q), and their derivatives with respect to the own
/// saturation.
#[derive(Debug, Clone, Copy)]
struct PhaseCoeffs {
    f: f64,
    df: f64,
    a: f64,
    da: f64,
    b: f64,
    db: f64,
}

fn phase_coeffs(
    fluid: &FluidModel,
    phase: Phase,
    s_own: f64,
    s_other: f64,
) -> Result<PhaseCoeffs> {
    let (s_w, s_g) = match phase {
        Phase::Wetting => (s_own, s_other),
        Phase::LightOil => (s_other, s_own),
    };
    let mob = fluid.mobilities(s_w, s_g)?;
    let ff = fluid.fractional_flow(s_w, s_g)?;
    // derivative index with respect to the own saturation
    let d = match phase {
        Phase::Wetting => 0,
        Phase::LightOil => 1,
    };
    let lt = mob.lam_t;
    let dlt = mob.d_lam_t[d];
    // a = lam_w lam_g / lam_t for both phases
    let num = mob.lam_w * mob.lam_g;
    let dnum = mob.d_lam_w[d] * mob.lam_g + mob.lam_w * mob.d_lam_g[d];
    let a = num / lt;
    let da = (dnum * lt - num * dlt) / (lt * lt);
    // beta = lam_own (lam_o + lam_other) / lam_t; b = beta * p_c_own'
    let (lam_own, dlam_own, lam_cross, dlam_cross, cap_phase, f, df) = match phase {
        Phase::Wetting => (
            mob.lam_w,
            mob.d_lam_w[0],
            mob.lam_o + mob.lam_g,
            mob.d_lam_o[0] + mob.d_lam_g[0],
            CapPhase::WettingOil,
            ff.f_w,
            ff.d_f_w[0],
        ),
        Phase::LightOil => (
            mob.lam_g,
            mob.d_lam_g[1],
            mob.lam_o + mob.lam_w,
            mob.d_lam_o[1] + mob.d_lam_w[1],
            CapPhase::GasOil,
            ff.f_g,
            ff.d_f_g[1],
        ),
    };
    let beta_num = lam_own * lam_cross;
    let dbeta_num = dlam_own * lam_cross + lam_own * dlam_cross;
    let beta = beta_num / lt;
    let dbeta = (dbeta_num * lt - beta_num * dlt) / (lt * lt);
    let cap = fluid.capillary(cap_phase, s_own)?;
    // The own-phase capillary derivative enters the diffusion coefficient as
    // a magnitude (the sign-folded form of the weak formulation), keeping the
    // principal part dissipative for every closure convention.
    let sgn = if cap.d1 < 0.0 { -1.0 } else { 1.0 };
    let b = beta * cap.d1 * sgn;
    let db = dbeta * cap.d1 * sgn + beta * cap.d2 * sgn;
    Ok(PhaseCoeffs {
        f,
        df,
        a,
        da,
        b,
        db,
    })
}

/// Capillary-derivative of the other phase (enters the frozen gradient term).
fn cross_cap_d1(fluid: &FluidModel, phase: Phase, s_other: f64) -> Result<f64> {
    let cp = match phase {
        Phase::Wetting => CapPhase::GasOil,
        Phase::LightOil => CapPhase::WettingOil,
    };
    Ok(fluid.capillary(cp, s_other)?.d1)
}

/// Stabilization overrides for the transport fluxes.
#[derive(Debug, Clone, Copy)]
pub struct TransportTau {
    pub floor: f64,
    pub c_override: Option<f64>,
    pub v_override: Option<f64>,
}

impl Default for TransportTau {
    fn default() -> Self {
        TransportTau {
            floor: 1e-10,
            c_override: None,
            v_override: None,
        }
    }
}

/// Converged flux evaluation of one accepted step, reused as the explicit
/// leg of the next theta step. The edge values satisfy the step's own
/// single-valuedness constraint, so the theta-weighted interface flux stays
/// single valued and mass stays conserved.
#[derive(Debug, Clone)]
pub struct FluxSnapshot {
    /// Volume flux (x and y components) at the volume quadrature points.
    pub volume: Vec<[DVector<f64>; 2]>,
    /// Numerical-trace normal flux at the edge quadrature points (global
    /// parametrization), per (element, local edge).
    pub edge: Vec<[DVector<f64>; 3]>,
}

/// One phase solve within one time step. Frozen inputs are captured here:
/// the fresh total velocity and its numerical trace, and the other phase's
/// saturation/gradient/trace (lagged for the wetting step, current for the
/// light-oil step).
pub struct TransportProblem<'a> {
    pub mesh: &'a Mesh,
    pub skel: &'a Skeleton,
    pub refel: &'a ReferenceElement,
    pub geom: &'a GeometryCache,
    pub fluid: &'a FluidModel,
    pub phase: Phase,
    pub prev: &'a TransportState,
    /// Converged flux of the previous step; required when theta < 1.
    pub prev_flux: Option<&'a FluxSnapshot>,
    pub u_t: &'a VectorField,
    pub uhat_n: &'a [[DVector<f64>; 3]],
    pub s_other: &'a ElementField,
    pub q_other: &'a VectorField,
    pub s_hat_other: &'a SkeletonField,
    /// Time step in seconds (f64::INFINITY drops the time term).
    pub dt: f64,
    /// 1.0 = backward Euler, 0.5 = Crank–Nicolson.
    pub theta: f64,
    /// Dirichlet trace data at the new time level, projected edgewise.
    pub dirichlet: SkeletonField,
    /// Combined theta-weighted source at quadrature points, if any.
    pub source: Option<&'a (dyn Fn([f64; 2]) -> f64 + Sync)>,
    pub tau: TransportTau,
    /// Optional reusable factorization state for repeated solves.
    pub solver_cache: Option<&'a TraceSolveCache>,
    /// Honor saturation Dirichlet data only on inflow portions of the
    /// boundary; on outflow edges the trace follows the interior (upwind).
    /// Classified per step from the fresh velocity trace.
    pub outflow_switch: bool,
}

/// Assembled element blocks of the linearized (Jacobian) system, in the
/// spec's naming. Trace columns exist only on non-Dirichlet edges.
pub struct JacobianBlocks {
    pub j_qq: DMatrix<f64>,
    pub j_qs: DMatrix<f64>,
    pub j_qsh: DMatrix<f64>,
    pub j_sq: DMatrix<f64>,
    pub j_ss: DMatrix<f64>,
    pub j_ssh: DMatrix<f64>,
    pub j_shq: DMatrix<f64>,
    pub j_shs: DMatrix<f64>,
    pub j_shsh: DMatrix<f64>,
    pub r_q: DVector<f64>,
    pub r_s: DVector<f64>,
    pub r_sh: DVector<f64>,
    pub trace_dofs: Vec<usize>,
}

impl JacobianBlocks {
    pub fn element_system(&self) -> ElementSystem {
        let n2 = self.j_qq.nrows();
        let n = self.j_ss.nrows();
        let nt = self.trace_dofs.len();
        let mut volume = DMatrix::zeros(n2 + n, n2 + n);
        volume.view_mut((0, 0), (n2, n2)).copy_from(&self.j_qq);
        volume.view_mut((0, n2), (n2, n)).copy_from(&self.j_qs);
        volume.view_mut((n2, 0), (n, n2)).copy_from(&self.j_sq);
        volume.view_mut((n2, n2), (n, n)).copy_from(&self.j_ss);
        let mut coupling_vt = DMatrix::zeros(n2 + n, nt);
        coupling_vt.view_mut((0, 0), (n2, nt)).copy_from(&self.j_qsh);
        coupling_vt.view_mut((n2, 0), (n, nt)).copy_from(&self.j_ssh);
        let mut coupling_tv = DMatrix::zeros(nt, n2 + n);
        coupling_tv.view_mut((0, 0), (nt, n2)).copy_from(&self.j_shq);
        coupling_tv.view_mut((0, n2), (nt, n)).copy_from(&self.j_shs);
        let mut rhs_volume = DVector::zeros(n2 + n);
        rhs_volume.rows_mut(0, n2).copy_from(&(-&self.r_q));
        rhs_volume.rows_mut(n2, n).copy_from(&(-&self.r_s));
        ElementSystem {
            volume,
            coupling_vt,
            coupling_tv,
            trace: self.j_shsh.clone(),
            rhs_volume,
            rhs_trace: -self.r_sh.clone(),
            trace_dofs: self.trace_dofs.clone(),
        }
    }
}

/// Stateful operator: implements the Newton-system contract over a flattened
/// unknown vector `[Q | S | S_hat(free)]`. The stabilization is evaluated
/// once per step from the warm-start state and held fixed through the
/// nonlinear iteration.
pub struct TransportOperator<'a> {
    pub prob: TransportProblem<'a>,
    pub dof_map: TraceDofMap,
    edge_kind: Vec<EdgeKind>,
    tau: Vec<[f64; 3]>,
    /// Single-valued trace of the frozen other-phase gradient per global
    /// edge at the global quadrature points (averaged across sides, so the
    /// frozen capillary term cancels exactly in interface jumps).
    q_other_edge: Vec<[DVector<f64>; 2]>,
    n_q: usize,
    n_s: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum AssembleMode {
    ResidualOnly,
    WithJacobian,
    PicardJacobian,
}

/// Per-edge treatment of the trace unknowns for one phase.
#[derive(Clone, Copy, PartialEq, Debug)]
enum EdgeKind {
    /// Interior or no-flow boundary: flux-continuity trace equation.
    FluxContinuity,
    /// Dirichlet data on an inflow edge: trace eliminated.
    DirichletData,
    /// Dirichlet-tagged edge currently in outflow: the trace matches the
    /// interior element trace (upwind), keeping the boundary layer free.
    OutflowUpwind,
}

/// Bounds of |df/ds_own| and |b| over the clamped saturation simplex,
/// sampled on a grid (the convective wave-speed and diffusion magnitudes the
/// stabilization must dominate).
fn simplex_coefficient_bounds(fluid: &FluidModel, phase: Phase) -> (f64, f64) {
    const N: usize = 40;
    let mut df_max: f64 = 0.0;
    let mut b_max: f64 = 0.0;
    for i in 0..=N {
        let s_own = i as f64 / N as f64;
        for j in 0..=(N - i) {
            let s_other = j as f64 / N as f64;
            if let Ok(c) = phase_coeffs(fluid, phase, s_own, s_other) {
                df_max = df_max.max(c.df.abs());
                b_max = b_max.max(c.b.abs());
            }
        }
    }
    (df_max, b_max)
}

/// Single-valued edge traces of a vector field: the average of the two
/// element-side traces at the global edge quadrature points.
fn average_edge_traces(
    skel: &Skeleton,
    refel: &ReferenceElement,
    field: &VectorField,
) -> Vec<[DVector<f64>; 2]> {
    let n = refel.n_modes;
    let nq1 = refel.edge_quadrature.points.len();
    (0..skel.n_edges())
        .map(|ge| {
            let mut vx = DVector::zeros(nq1);
            let mut vy = DVector::zeros(nq1);
            let (first, second) = &skel.edge_to_elements[ge];
            let sides: Vec<&crate::mesh::EdgeIncidence> = match second {
                Some(s) => vec![first, s],
                None => vec![first],
            };
            let weight = 1.0 / sides.len() as f64;
            for inc in sides {
                let tr = &refel.edge_phi_q[inc.local_edge];
                let c = field.coeffs(inc.element);
                for q in 0..nq1 {
                    let row = trace_row(q, nq1, inc.orientation_matches);
                    let (mut sx, mut sy) = (0.0, 0.0);
                    for m in 0..n {
                        let ph = tr[(row, m)];
                        sx += ph * c[m];
                        sy += ph * c[n + m];
                    }
                    vx[q] += weight * sx;
                    vy[q] += weight * sy;
                }
            }
            [vx, vy]
        })
        .collect()
}

impl<'a> TransportOperator<'a> {
    pub fn new(prob: TransportProblem<'a>) -> Self {
        let k1 = prob.refel.degree + 1;
        let nq1 = prob.refel.edge_quadrature.points.len();
        let field = prob.phase.field();
        let edge_kind: Vec<EdgeKind> = (0..prob.skel.n_edges())
            .map(|ge| {
                if !prob.skel.is_dirichlet(ge, field) {
                    return EdgeKind::FluxContinuity;
                }
                if prob.outflow_switch {
                    let inc = &prob.skel.edge_to_elements[ge].0;
                    let mut mean_un = 0.0;
                    for q in 0..nq1 {
                        mean_un += prob.refel.edge_quadrature.weights[q]
                            * prob.uhat_n[inc.element][inc.local_edge][q];
                    }
                    if mean_un > 0.0 {
                        return EdgeKind::OutflowUpwind;
                    }
                }
                EdgeKind::DirichletData
            })
            .collect();
        let dof_map = {
            let mut edge_base = vec![None; prob.skel.n_edges()];
            let mut next = 0;
            for e in 0..prob.skel.n_edges() {
                if edge_kind[e] != EdgeKind::DirichletData {
                    edge_base[e] = Some(next);
                    next += k1;
                }
            }
            TraceDofMap {
                edge_base,
                modes_per_edge: k1,
                n_dofs: next,
            }
        };
        let ne = prob.mesh.n_elements();
        let n = prob.refel.n_modes;
        let tau = vec![[0.0; 3]; ne];
        let q_other_edge = average_edge_traces(
            prob.skel,
            prob.refel,
            prob.q_other,
        );
        let mut op = TransportOperator {
            prob,
            dof_map,
            edge_kind,
            tau,
            q_other_edge,
            n_q: 2 * n * ne,
            n_s: n * ne,
        };
        let x0 = op.pack(op.prob.prev);
        let st = op.unpack(&x0);
        op.refresh_tau(&st);
        op
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_q + self.n_s + self.dof_map.n_dofs
    }

    /// Flatten a state (ignores Dirichlet-edge trace entries).
    pub fn pack(&self, st: &TransportState) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_unknowns());
        let n = self.prob.refel.n_modes;
        let ne = self.prob.mesh.n_elements();
        for el in 0..ne {
            let c = st.q.coeffs(el);
            for m in 0..2 * n {
                x[el * 2 * n + m] = c[m];
            }
            let c = st.s.coeffs(el);
            for m in 0..n {
                x[self.n_q + el * n + m] = c[m];
            }
        }
        let k1 = self.dof_map.modes_per_edge;
        for e in 0..self.prob.skel.n_edges() {
            if let Some(base) = self.dof_map.edge_base[e] {
                for m in 0..k1 {
                    x[self.n_q + self.n_s + base + m] = st.s_hat.coeffs(e)[m];
                }
            }
        }
        x
    }

    /// Rebuild a state from the flattened vector; Dirichlet edges carry the
    /// projected boundary data of the new time level.
    pub fn unpack(&self, x: &DVector<f64>) -> TransportState {
        let n = self.prob.refel.n_modes;
        let ne = self.prob.mesh.n_elements();
        let k1 = self.dof_map.modes_per_edge;
        let mut st = TransportState {
            s: ElementField::zeros(ne, n),
            q: VectorField::zeros(ne, n),
            s_hat: self.prob.dirichlet.clone(),
        };
        for el in 0..ne {
            let c = st.q.coeffs_mut(el);
            for m in 0..2 * n {
                c[m] = x[el * 2 * n + m];
            }
            let c = st.s.coeffs_mut(el);
            for m in 0..n {
                c[m] = x[self.n_q + el * n + m];
            }
        }
        for e in 0..self.prob.skel.n_edges() {
            if let Some(base) = self.dof_map.edge_base[e] {
                for m in 0..k1 {
                    st.s_hat.coeffs_mut(e)[m] = x[self.n_q + self.n_s + base + m];
                }
            }
        }
        st
    }

    /// Lax-Friedrichs + LDG stabilization per (element, local edge): the
    /// global bound of |df/ds| over the saturation simplex times the local
    /// normal trace velocity, plus the bounded diffusion coefficient scaled
    /// by n.K n / ell. State independent given the step's velocity, so it is
    /// exact to freeze through the nonlinear iteration.
    ///
    /// Edges with vanishing normal velocity and negligible capillary
    /// diffusion would leave the trace equation nearly singular, so the
    /// per-edge value is floored at a fraction of the global stabilization
    /// scale; on such edges the penalty only ties the trace to the element
    /// values.
    pub fn refresh_tau(&mut self, _st: &TransportState) {
        let p = &self.prob;
        let refel = p.refel;
        let nq1 = refel.edge_quadrature.points.len();
        let ell = p.geom.diagonal;
        let (df_max, b_max) = simplex_coefficient_bounds(p.fluid, p.phase);
        let mut tau: Vec<[f64; 3]> = (0..p.mesh.n_elements())
            .map(|el| {
                let mut out = [0.0; 3];
                for le in 0..3 {
                    let kn = p.mesh.element_perm[el]
                        .normal_component(p.geom.elements[el].normal[le]);
                    let mut un_max: f64 = 0.0;
                    for q in 0..nq1 {
                        un_max = un_max.max(p.uhat_n[el][le][q].abs());
                    }
                    let tc = p.tau.c_override.unwrap_or(df_max * un_max);
                    let tv = p.tau.v_override.unwrap_or(b_max * kn / ell);
                    out[le] = tc + tv;
                }
                out
            })
            .collect();
        let global_max = tau
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, &v| m.max(v));
        let floor = p.tau.floor.max(1e-6 * global_max);
        for t in tau.iter_mut() {
            for v in t.iter_mut() {
                *v = v.max(floor);
            }
        }
        self.tau = tau;
    }

    /// Assemble residual blocks and (optionally) Jacobian blocks for every
    /// element at the given state.
    pub(crate) fn assemble_jacobian_blocks(&self, st: &TransportState) -> Result<Vec<JacobianBlocks>> {
        self.assemble(st, AssembleMode::WithJacobian)
    }

    fn assemble(&self, st: &TransportState, mode: AssembleMode) -> Result<Vec<JacobianBlocks>> {
        let results: Vec<Result<JacobianBlocks>> = (0..self.prob.mesh.n_elements())
            .into_par_iter()
            .map(|el| self.assemble_element(st, el, mode))
            .collect();
        results.into_iter().collect()
    }

    fn assemble_element(
        &self,
        st: &TransportState,
        el: usize,
        mode: AssembleMode,
    ) -> Result<JacobianBlocks> {
        let p = &self.prob;
        let refel = p.refel;
        let n = refel.n_modes;
        let k1 = refel.degree + 1;
        let nq = refel.volume_quadrature.points.len();
        let nq1 = refel.edge_quadrature.points.len();
        let g = &p.geom.elements[el];
        let det_j = g.det_j;
        let w = &refel.volume_quadrature.weights;
        let w1 = &refel.edge_quadrature.weights;
        let kt = p.mesh.element_perm[el].tensor();
        let phi = &refel.phi_q;
        let with_jac = mode != AssembleMode::ResidualOnly;
        let picard = mode == AssembleMode::PicardJacobian;
        let theta = p.theta;
        let inv_dt = if p.dt.is_finite() { 1.0 / p.dt } else { 0.0 };
        let poro = p.mesh.element_poro[el];

        let wrap = |e: Error| Error::Assembly {
            element: el,
            msg: format!("closure evaluation failed: {e}"),
        };

        if theta < 1.0 && p.prev_flux.is_none() {
            return Err(Error::Assembly {
                element: el,
                msg: "theta scheme requires the previous step's flux snapshot".into(),
            });
        }

        // ---- volume data at quadrature points ----
        let s_v = st.s.values_at(el, phi);
        let (qx, qy) = st.q.values_at(el, phi);
        let s_prev = p.prev.s.values_at(el, phi);
        let s_oth = p.s_other.values_at(el, phi);
        let (qox, qoy) = p.q_other.values_at(el, phi);
        let (ux, uy) = p.u_t.values_at(el, phi);

        let free_edges: Vec<usize> = (0..3)
            .filter(|&le| self.dof_map.edge_base[p.skel.element_edges[el][le]].is_some())
            .collect();
        let nt = free_edges.len() * k1;

        let mut j_qq = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut j_qs = DMatrix::<f64>::zeros(2 * n, n);
        let mut j_qsh = DMatrix::<f64>::zeros(2 * n, nt);
        let mut j_sq = DMatrix::<f64>::zeros(n, 2 * n);
        let mut j_ss = DMatrix::<f64>::zeros(n, n);
        let mut j_ssh = DMatrix::<f64>::zeros(n, nt);
        let mut j_shq = DMatrix::<f64>::zeros(nt, 2 * n);
        let mut j_shs = DMatrix::<f64>::zeros(nt, n);
        let mut j_shsh = DMatrix::<f64>::zeros(nt, nt);
        let mut r_q = DVector::<f64>::zeros(2 * n);
        let mut r_s = DVector::<f64>::zeros(n);
        let mut r_sh = DVector::<f64>::zeros(nt);

        // ---- gradient relation: (q, v) + (s, div v) - <s_hat, v.n> ----
        for q in 0..nq {
            let wq = w[q] * det_j;
            for i in 0..n {
                let pi = phi[(q, i)] * wq;
                r_q[i] += pi * qx[q];
                r_q[n + i] += pi * qy[q];
            }
            for i in 0..n {
                let (gxi, gyi) = (g.gx[(q, i)] * wq, g.gy[(q, i)] * wq);
                r_q[i] += gxi * s_v[q];
                r_q[n + i] += gyi * s_v[q];
            }
        }
        if with_jac {
            for i in 0..2 * n {
                j_qq[(i, i)] = det_j;
            }
            // j_qs = [Gx; Gy]^T diag(w det_j) phi
            let mut phi_w = phi.clone();
            for q in 0..nq {
                let wq = w[q] * det_j;
                for j in 0..n {
                    phi_w[(q, j)] *= wq;
                }
            }
            j_qs.view_mut((0, 0), (n, n)).gemm_tr(1.0, &g.gx, &phi_w, 0.0);
            j_qs.view_mut((n, 0), (n, n)).gemm_tr(1.0, &g.gy, &phi_w, 0.0);
        }

        // ---- mass balance: time term and volume flux ----
        // per-point coefficients first, then a few small matrix products
        let mut flux_x = DVector::<f64>::zeros(nq);
        let mut flux_y = DVector::<f64>::zeros(nq);
        let mut rs_point = DVector::<f64>::zeros(nq);
        let mut dfds_x = DVector::<f64>::zeros(nq);
        let mut dfds_y = DVector::<f64>::zeros(nq);
        let mut bcoef = DVector::<f64>::zeros(nq);
        for q in 0..nq {
            let time_term = poro * inv_dt * (s_v[q] - s_prev[q]);
            let src = match p.source {
                Some(f) => f(g.to_physical(refel.volume_quadrature.points[q])),
                None => 0.0,
            };
            // new-time flux
            let c_new = phase_coeffs(p.fluid, p.phase, s_v[q], s_oth[q]).map_err(wrap)?;
            let pc_cross = cross_cap_d1(p.fluid, p.phase, s_oth[q]).map_err(wrap)?;
            let phi_frozen = [pc_cross * qox[q], pc_cross * qoy[q]];
            let kphi = [
                kt[0][0] * phi_frozen[0] + kt[0][1] * phi_frozen[1],
                kt[1][0] * phi_frozen[0] + kt[1][1] * phi_frozen[1],
            ];
            let kq = [
                kt[0][0] * qx[q] + kt[0][1] * qy[q],
                kt[1][0] * qx[q] + kt[1][1] * qy[q],
            ];
            let f_new = [
                c_new.f * ux[q] + c_new.a * kphi[0] - c_new.b * kq[0],
                c_new.f * uy[q] + c_new.a * kphi[1] - c_new.b * kq[1],
            ];
            // explicit leg: the previous step's converged flux, frozen
            let (fox, foy) = match p.prev_flux {
                Some(snap) if theta < 1.0 => (snap.volume[el][0][q], snap.volume[el][1][q]),
                _ => (0.0, 0.0),
            };
            flux_x[q] = theta * f_new[0] + (1.0 - theta) * fox;
            flux_y[q] = theta * f_new[1] + (1.0 - theta) * foy;
            rs_point[q] = time_term - src;
            if with_jac {
                let (df, da, db) = if picard {
                    (0.0, 0.0, 0.0)
                } else {
                    (c_new.df, c_new.da, c_new.db)
                };
                dfds_x[q] = df * ux[q] + da * kphi[0] - db * kq[0];
                dfds_y[q] = df * uy[q] + da * kphi[1] - db * kq[1];
                bcoef[q] = c_new.b;
            }
        }
        for q in 0..nq {
            let wq = w[q] * det_j;
            for i in 0..n {
                r_s[i] += wq
                    * (rs_point[q] * phi[(q, i)]
                        - flux_x[q] * g.gx[(q, i)]
                        - flux_y[q] * g.gy[(q, i)]);
            }
        }
        if with_jac {
            // j_ss += phi^T diag(w det_j poro/dt) phi
            //       - theta [Gx^T diag(w det_j dfds_x) + Gy^T diag(..y)] phi
            let mut scaled = phi.clone();
            for q in 0..nq {
                let c = w[q] * det_j * poro * inv_dt;
                for j in 0..n {
                    scaled[(q, j)] *= c;
                }
            }
            j_ss.gemm_tr(1.0, phi, &scaled, 1.0);
            scaled.copy_from(&g.gx);
            for q in 0..nq {
                let c = w[q] * det_j * theta * dfds_x[q];
                for j in 0..n {
                    scaled[(q, j)] *= c;
                }
            }
            j_ss.gemm_tr(-1.0, &scaled, phi, 1.0);
            scaled.copy_from(&g.gy);
            for q in 0..nq {
                let c = w[q] * det_j * theta * dfds_y[q];
                for j in 0..n {
                    scaled[(q, j)] *= c;
                }
            }
            j_ss.gemm_tr(-1.0, &scaled, phi, 1.0);
            // j_sq(:, d-block) += theta [K Grad]_d^T diag(w det_j b) phi
            let mut kgrad = g.gx.clone();
            for q in 0..nq {
                let c = w[q] * det_j * theta * bcoef[q];
                for j in 0..n {
                    kgrad[(q, j)] =
                        c * (kt[0][0] * g.gx[(q, j)] + kt[1][0] * g.gy[(q, j)]);
                }
            }
            j_sq.view_mut((0, 0), (n, n)).gemm_tr(1.0, &kgrad, phi, 1.0);
            for q in 0..nq {
                let c = w[q] * det_j * theta * bcoef[q];
                for j in 0..n {
                    kgrad[(q, j)] =
                        c * (kt[0][1] * g.gx[(q, j)] + kt[1][1] * g.gy[(q, j)]);
                }
            }
            j_sq.view_mut((0, n), (n, n)).gemm_tr(1.0, &kgrad, phi, 1.0);
        }

        // ---- edge terms ----
        let tau = &self.tau[el];
        for le in 0..3 {
            let ge = p.skel.element_edges[el][le];
            let kind = self.edge_kind[ge];
            let free_pos = free_edges.iter().position(|&f| f == le);
            let inc = {
                let (first, second) = &p.skel.edge_to_elements[ge];
                if first.element == el && first.local_edge == le {
                    first.orientation_matches
                } else {
                    second.as_ref().unwrap().orientation_matches
                }
            };
            let len = g.edge_length[le];
            let nrm = g.normal[le];
            let tr = &refel.edge_phi_q[le];
            let kn_vec = [
                kt[0][0] * nrm[0] + kt[0][1] * nrm[1],
                kt[1][0] * nrm[0] + kt[1][1] * nrm[1],
            ];
            // edge values at global quadrature order
            let shat = st.s_hat.values_at(ge, &refel.edge_legendre_q);
            let shat_oth = p.s_hat_other.values_at(ge, &refel.edge_legendre_q);

            let qoth = &self.q_other_edge[ge];
            for q in 0..nq1 {
                let row = trace_row(q, nq1, inc);
                let wq = w1[q] * len;
                // traces of the element-side fields
                let (mut s_e, mut qxe, mut qye) = (0.0, 0.0, 0.0);
                {
                    let cs = st.s.coeffs(el);
                    let cq = st.q.coeffs(el);
                    for m in 0..n {
                        let ph = tr[(row, m)];
                        s_e += ph * cs[m];
                        qxe += ph * cq[m];
                        qye += ph * cq[n + m];
                    }
                }
                let un = p.uhat_n[el][le][q];
                let pc_cross = cross_cap_d1(p.fluid, p.phase, shat_oth[q]).map_err(wrap)?;
                let kphi_n = pc_cross * (kn_vec[0] * qoth[0][q] + kn_vec[1] * qoth[1][q]);
                let kq_n = kn_vec[0] * qxe + kn_vec[1] * qye;

                let c_new = phase_coeffs(p.fluid, p.phase, shat[q], shat_oth[q]).map_err(wrap)?;
                // full numerical flux of the new time level; the trace
                // constraint holds on this quantity alone
                let g_new = c_new.f * un + c_new.a * kphi_n - c_new.b * kq_n
                    + tau[le] * (s_e - shat[q]);
                let g_old = match p.prev_flux {
                    Some(snap) if theta < 1.0 => snap.edge[el][le][q],
                    _ => 0.0,
                };
                let g_n = theta * g_new + (1.0 - theta) * g_old;

                // gradient relation edge term: -<s_hat, v.n> (data on Dirichlet edges)
                for i in 0..n {
                    let pi = tr[(row, i)];
                    r_q[i] -= wq * shat[q] * pi * nrm[0];
                    r_q[n + i] -= wq * shat[q] * pi * nrm[1];
                    r_s[i] += wq * g_n * pi;
                }
                if let Some(fe) = free_pos {
                    match kind {
                        EdgeKind::OutflowUpwind => {
                            for m in 0..k1 {
                                r_sh[fe * k1 + m] +=
                                    wq * (shat[q] - s_e) * refel.edge_legendre_q[(q, m)];
                            }
                        }
                        _ => {
                            for m in 0..k1 {
                                r_sh[fe * k1 + m] +=
                                    wq * g_new * refel.edge_legendre_q[(q, m)];
                            }
                        }
                    }
                }

                if with_jac {
                    let (df, da, db) = if picard {
                        (0.0, 0.0, 0.0)
                    } else {
                        (c_new.df, c_new.da, c_new.db)
                    };
                    let dflux_dsh = df * un + da * kphi_n - db * kq_n;
                    for i in 0..n {
                        let pi = tr[(row, i)];
                        // d r_s / d s (tau term) and / d q (diffusive edge flux)
                        for j in 0..n {
                            let pj = tr[(row, j)];
                            j_ss[(i, j)] += wq * theta * tau[le] * pj * pi;
                            j_sq[(i, j)] +=
                                wq * theta * (-c_new.b) * pj * kn_vec[0] * pi;
                            j_sq[(i, n + j)] +=
                                wq * theta * (-c_new.b) * pj * kn_vec[1] * pi;
                        }
                    }
                    if let Some(fe) = free_pos {
                        for m in 0..k1 {
                            let lm = refel.edge_legendre_q[(q, m)];
                            let ti = fe * k1 + m;
                            for i in 0..n {
                                let pi = tr[(row, i)];
                                // gradient eq: -<s_hat, v.n>
                                j_qsh[(i, ti)] -= wq * lm * pi * nrm[0];
                                j_qsh[(n + i, ti)] -= wq * lm * pi * nrm[1];
                                // mass eq: theta (dF(s_hat) - tau)
                                j_ssh[(i, ti)] +=
                                    wq * theta * (dflux_dsh - tau[le]) * lm * pi;
                            }
                            match kind {
                                EdgeKind::OutflowUpwind => {
                                    // trace matches the interior: <s_hat - s, mu> = 0
                                    for i in 0..n {
                                        j_shs[(ti, i)] -= wq * tr[(row, i)] * lm;
                                    }
                                    for m2 in 0..k1 {
                                        let lm2 = refel.edge_legendre_q[(q, m2)];
                                        j_shsh[(ti, fe * k1 + m2)] += wq * lm2 * lm;
                                    }
                                }
                                _ => {
                                    for i in 0..n {
                                        let pi = tr[(row, i)];
                                        j_shs[(ti, i)] += wq * tau[le] * pi * lm;
                                        j_shq[(ti, i)] +=
                                            wq * (-c_new.b) * pi * kn_vec[0] * lm;
                                        j_shq[(ti, n + i)] +=
                                            wq * (-c_new.b) * pi * kn_vec[1] * lm;
                                    }
                                    for m2 in 0..k1 {
                                        let lm2 = refel.edge_legendre_q[(q, m2)];
                                        j_shsh[(ti, fe * k1 + m2)] +=
                                            wq * (dflux_dsh - tau[le]) * lm2 * lm;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut trace_dofs = Vec::with_capacity(nt);
        for &le in &free_edges {
            let base = self.dof_map.edge_base[p.skel.element_edges[el][le]].unwrap();
            for m in 0..k1 {
                trace_dofs.push(base + m);
            }
        }

        Ok(JacobianBlocks {
            j_qq,
            j_qs,
            j_qsh,
            j_sq,
            j_ss,
            j_ssh,
            j_shq,
            j_shs,
            j_shsh,
            r_q,
            r_s,
            r_sh,
            trace_dofs,
        })
    }

    /// Evaluate the full numerical flux of a state with the operator's
    /// current stabilization: the volume flux at volume quadrature points and
    /// the numerical-trace normal flux at edge quadrature points. For a
    /// converged state this is the single-valued flux the step enforced.
    pub fn flux_snapshot(&self, st: &TransportState) -> Result<FluxSnapshot> {
        let p = &self.prob;
        let refel = p.refel;
        let n = refel.n_modes;
        let nq = refel.volume_quadrature.points.len();
        let nq1 = refel.edge_quadrature.points.len();
        let phi = &refel.phi_q;
        let mut volume = Vec::with_capacity(p.mesh.n_elements());
        let mut edge = Vec::with_capacity(p.mesh.n_elements());
        for el in 0..p.mesh.n_elements() {
            let g = &p.geom.elements[el];
            let kt = p.mesh.element_perm[el].tensor();
            let s_v = st.s.values_at(el, phi);
            let (qx, qy) = st.q.values_at(el, phi);
            let s_oth = p.s_other.values_at(el, phi);
            let (qox, qoy) = p.q_other.values_at(el, phi);
            let (ux, uy) = p.u_t.values_at(el, phi);
            let mut fx = DVector::zeros(nq);
            let mut fy = DVector::zeros(nq);
            for q in 0..nq {
                let c = phase_coeffs(p.fluid, p.phase, s_v[q], s_oth[q])?;
                let pc_cross = cross_cap_d1(p.fluid, p.phase, s_oth[q])?;
                let phi_frozen = [pc_cross * qox[q], pc_cross * qoy[q]];
                let kphi = [
                    kt[0][0] * phi_frozen[0] + kt[0][1] * phi_frozen[1],
                    kt[1][0] * phi_frozen[0] + kt[1][1] * phi_frozen[1],
                ];
                let kq = [
                    kt[0][0] * qx[q] + kt[0][1] * qy[q],
                    kt[1][0] * qx[q] + kt[1][1] * qy[q],
                ];
                fx[q] = c.f * ux[q] + c.a * kphi[0] - c.b * kq[0];
                fy[q] = c.f * uy[q] + c.a * kphi[1] - c.b * kq[1];
            }
            volume.push([fx, fy]);

            let tau = &self.tau[el];
            let mut edges: [DVector<f64>; 3] =
                [DVector::zeros(nq1), DVector::zeros(nq1), DVector::zeros(nq1)];
            for le in 0..3 {
                let ge = p.skel.element_edges[el][le];
                let inc = {
                    let (first, second) = &p.skel.edge_to_elements[ge];
                    if first.element == el && first.local_edge == le {
                        first.orientation_matches
                    } else {
                        second.as_ref().unwrap().orientation_matches
                    }
                };
                let nrm = g.normal[le];
                let tr = &refel.edge_phi_q[le];
                let kn_vec = [
                    kt[0][0] * nrm[0] + kt[0][1] * nrm[1],
                    kt[1][0] * nrm[0] + kt[1][1] * nrm[1],
                ];
                let shat = st.s_hat.values_at(ge, &refel.edge_legendre_q);
                let shat_oth = p.s_hat_other.values_at(ge, &refel.edge_legendre_q);
                let qoth = &self.q_other_edge[ge];
                for q in 0..nq1 {
                    let row = trace_row(q, nq1, inc);
                    let (mut s_e, mut qxe, mut qye) = (0.0, 0.0, 0.0);
                    let cs = st.s.coeffs(el);
                    let cq = st.q.coeffs(el);
                    for m in 0..n {
                        let ph = tr[(row, m)];
                        s_e += ph * cs[m];
                        qxe += ph * cq[m];
                        qye += ph * cq[n + m];
                    }
                    let un = p.uhat_n[el][le][q];
                    let pc_cross = cross_cap_d1(p.fluid, p.phase, shat_oth[q])?;
                    let kphi_n = pc_cross * (kn_vec[0] * qoth[0][q] + kn_vec[1] * qoth[1][q]);
                    let kq_n = kn_vec[0] * qxe + kn_vec[1] * qye;
                    let c = phase_coeffs(p.fluid, p.phase, shat[q], shat_oth[q])?;
                    edges[le][q] = c.f * un + c.a * kphi_n - c.b * kq_n
                        + tau[le] * (s_e - shat[q]);
                }
            }
            edge.push(edges);
        }
        Ok(FluxSnapshot { volume, edge })
    }

    /// Global stacked residual `[R_Q | R_S | R_Shat]` at a state.
    pub fn residual_vec(&self, st: &TransportState) -> Result<DVector<f64>> {
        let blocks = self.assemble(st, AssembleMode::ResidualOnly)?;
        Ok(self.stack_residual(&blocks))
    }

    fn stack_residual(&self, blocks: &[JacobianBlocks]) -> DVector<f64> {
        let n = self.prob.refel.n_modes;
        let mut r = DVector::zeros(self.n_unknowns());
        for (el, b) in blocks.iter().enumerate() {
            for m in 0..2 * n {
                r[el * 2 * n + m] = b.r_q[m];
            }
            for m in 0..n {
                r[self.n_q + el * n + m] = b.r_s[m];
            }
            for (ti, &gd) in b.trace_dofs.iter().enumerate() {
                r[self.n_q + self.n_s + gd] += b.r_sh[ti];
            }
        }
        r
    }

    /// Solve the condensed linearization `J delta = -R`; returns the stacked
    /// increment.
    fn linear_step(&self, st: &TransportState, mode: AssembleMode) -> Result<DVector<f64>> {
        let blocks = self.assemble(st, mode)?;
        let condensed: Vec<CondensedElement> = blocks
            .par_iter()
            .enumerate()
            .map(|(el, b)| condense_element(b.element_system(), el))
            .collect::<Result<Vec<_>>>()?;
        let mut ts = TraceSystem::new(self.dof_map.n_dofs);
        for ce in &condensed {
            ts.add_element(ce);
        }
        let dtr = match self.prob.solver_cache {
            Some(c) => ts.solve_cached(c)?,
            None => ts.solve()?,
        };
        let n = self.prob.refel.n_modes;
        let mut delta = DVector::zeros(self.n_unknowns());
        let recovered: Vec<DVector<f64>> =
            condensed.par_iter().map(|ce| ce.recover(&dtr)).collect();
        for (el, x) in recovered.iter().enumerate() {
            for m in 0..2 * n {
                delta[el * 2 * n + m] = x[m];
            }
            for m in 0..n {
                delta[self.n_q + el * n + m] = x[2 * n + m];
            }
        }
        for d in 0..self.dof_map.n_dofs {
            delta[self.n_q + self.n_s + d] = dtr[d];
        }
        Ok(delta)
    }

    /// Dense monolithic Newton step (oracle for the condensed path).
    pub fn monolithic_step(&self, st: &TransportState) -> Result<DVector<f64>> {
        let blocks = self.assemble(st, AssembleMode::WithJacobian)?;
        let n = self.prob.refel.n_modes;
        let ne = self.prob.mesh.n_elements();
        let nvol = 3 * n;
        let ntr = self.dof_map.n_dofs;
        let dim = ne * nvol + ntr;
        let mut full = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (el, b) in blocks.iter().enumerate() {
            let sys = b.element_system();
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
            .ok_or_else(|| Error::Solver("monolithic transport Jacobian is singular".into()))?;
        // reorder into [Q | S | S_hat]
        let mut delta = DVector::zeros(self.n_unknowns());
        for el in 0..ne {
            for m in 0..2 * n {
                delta[el * 2 * n + m] = x[el * nvol + m];
            }
            for m in 0..n {
                delta[self.n_q + el * n + m] = x[el * nvol + 2 * n + m];
            }
        }
        for d in 0..ntr {
            delta[self.n_q + self.n_s + d] = x[ne * nvol + d];
        }
        Ok(delta)
    }
}

impl<'a> NewtonSystem for TransportOperator<'a> {
    fn residual(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let st = self.unpack(x);
        self.residual_vec(&st)
    }

    fn newton_step(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        // tau stays frozen over the whole step (set once at construction from
        // the warm-start state) so Newton sees a fixed nonlinear system and
        // converges quadratically
        let st = self.unpack(x);
        self.linear_step(&st, AssembleMode::WithJacobian)
    }

    fn picard_map(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let st = self.unpack(x);
        let delta = self.linear_step(&st, AssembleMode::PicardJacobian)?;
        Ok(x + delta)
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        vec![
            0..self.n_q,
            self.n_q..self.n_q + self.n_s,
            self.n_q + self.n_s..self.n_unknowns(),
        ]
    }
}

/// Outcome of one implicit phase solve.
pub struct StepOutcome {
    pub state: TransportState,
    /// Converged flux evaluation, the explicit leg of the next theta step.
    pub flux: FluxSnapshot,
    pub records: Vec<IterationRecord>,
    pub newton_iterations: usize,
    pub final_residual: f64,
}

impl FluxSnapshot {
    pub fn zeros(n_elements: usize, nq: usize, nq1: usize) -> Self {
        FluxSnapshot {
            volume: (0..n_elements)
                .map(|_| [DVector::zeros(nq), DVector::zeros(nq)])
                .collect(),
            edge: (0..n_elements)
                .map(|_| [DVector::zeros(nq1), DVector::zeros(nq1), DVector::zeros(nq1)])
                .collect(),
        }
    }
}

/// Advance one phase by one implicit step. The first time step is seeded by
/// Anderson-accelerated Picard iteration; later steps start from the
/// previous solution.
pub fn step_phase(
    prob: TransportProblem,
    cfg: &NonlinearConfig,
    first_step: bool,
) -> Result<StepOutcome> {
    let mut op = TransportOperator::new(prob);
    let mut records = Vec::new();
    let mut x0 = op.pack(op.prob.prev);
    // Residual scale of the step: the time-term magnitude of the previous
    // state (what the residual of an O(1)-wrong iterate looks like). Guards
    // against false convergence without breaking equilibrium steps whose
    // true residual starts at the round-off floor. The Newton kernel takes
    // the max of this and its own initial residual.
    let mut res_ref = if op.prob.dt.is_finite() {
        let mut acc = 0.0;
        for el in 0..op.prob.mesh.n_elements() {
            let c = op.prob.prev.s.coeffs(el);
            let scale = op.prob.mesh.element_poro[el] * op.prob.geom.elements[el].det_j
                / op.prob.dt;
            acc += scale * scale * c.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    } else {
        0.0
    };
    if first_step {
        // the warm start may converge past the point where Newton's own
        // initial residual is a usable scale; keep the pre-warm-start one
        res_ref = res_ref.max(op.residual(&x0)?.norm());
        // a fixed-point pass to pull the initial guess into the Newton basin
        let out = {
            let op_cell = std::cell::RefCell::new(&mut op);
            anderson_picard(
                |x| op_cell.borrow_mut().picard_map(x),
                x0.clone(),
                cfg,
            )?
        };
        records.extend(out.trace.iter().copied());
        x0 = out.x;
    }
    let out = newton(&mut op, x0, cfg, Some(res_ref))?;
    records.extend(out.trace.iter().copied());
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            last_residual: out.final_residual,
            last_increment: out.final_increment,
        });
    }
    let state = op.unpack(&out.x);
    // the snapshot must use the stabilization the converged residual used,
    // so no tau refresh here
    let flux = op.flux_snapshot(&state)?;
    Ok(StepOutcome {
        state,
        flux,
        records,
        newton_iterations: out.iterations,
        final_residual: out.final_residual,
    })
}

/// Per-element mass balance of a converged step:
/// `phi (s_new - s_old)/dt + boundary flux - source`, reported as the largest
/// element imbalance together with the flux scale.
pub fn conservation_check(
    op: &TransportOperator,
    st_new: &TransportState,
) -> Result<(f64, f64)> {
    // With w = 1 on one element, the mass-balance residual row reduces to the
    // element balance; the constant is carried by mode 0 with value sqrt(2).
    let blocks = op.assemble(st_new, AssembleMode::ResidualOnly)?;
    let mut max_imbalance: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (el, b) in blocks.iter().enumerate() {
        let imbalance = b.r_s[0] * std::f64::consts::SQRT_2;
        max_imbalance = max_imbalance.max(imbalance.abs());
        let poro = op.prob.mesh.element_poro[el];
        let area = op.prob.geom.elements[el].area;
        let inv_dt = if op.prob.dt.is_finite() {
            1.0 / op.prob.dt
        } else {
            0.0
        };
        scale = scale.max(poro * inv_dt * area * st_new.s.element_mean(el).abs());
    }
    Ok((max_imbalance, scale))
}

/// Total saturated mass `int phi s dx` over the mesh.
pub fn total_mass(
    mesh: &Mesh,
    geom: &GeometryCache,
    _refel: &ReferenceElement,
    s: &ElementField,
) -> f64 {
    (0..mesh.n_elements())
        .map(|el| mesh.element_poro[el] * geom.elements[el].area * s.element_mean(el))
        .sum()
}
