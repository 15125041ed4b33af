//! Convergence study against the manufactured solution: run the full
//! semi-implicit solver on a sequence of meshes and measure broken L2 errors
//! of all six fields at the final time, plus the postprocessed saturations.

use super::exact;
use crate::driver::{run, BoundaryData, Forcing, InitialState, Simulation};
use crate::error::Result;
use crate::field::VectorField;
use crate::fluid::FluidModel;
use crate::geom::GeometryCache;
use crate::mesh::{assign_rock, build_skeleton, structured_mesh, BcKind, BoundarySpec, RockScenario};
use crate::nonlinear::NonlinearConfig;
use crate::postprocess::postprocess;
use crate::ref_element::ReferenceElement;
use crate::transport::TransportTau;

/// Errors of one (k, N) run at the final time.
#[derive(Debug, Clone, Copy)]
pub struct CaseErrors {
    pub k: usize,
    pub n: usize,
    pub dt: f64,
    pub err_s_w: f64,
    pub err_grad_s_w: f64,
    pub err_s_g: f64,
    pub err_grad_s_g: f64,
    pub err_p: f64,
    pub err_u: f64,
    /// Postprocessed saturation errors (degree k+1), when requested.
    pub err_pp_s_w: Option<f64>,
    pub err_pp_s_g: Option<f64>,
    /// Exact-field norms for relative reporting.
    pub norm_s_w: f64,
    pub norm_s_g: f64,
    pub norm_p: f64,
    pub norm_u: f64,
    pub norm_grad_s_w: f64,
    pub norm_grad_s_g: f64,
}

impl CaseErrors {
    pub fn fields(&self) -> [f64; 6] {
        [
            self.err_s_w,
            self.err_grad_s_w,
            self.err_s_g,
            self.err_grad_s_g,
            self.err_p,
            self.err_u,
        ]
    }

    pub fn field_names() -> [&'static str; 6] {
        ["s_w", "grad_s_w", "s_g", "grad_s_g", "p_o", "u_t"]
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub k_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub t_end: f64,
    /// Time-step policy constant: dt = c * h^((k+1)/p), p the scheme order.
    pub dt_policy_c: f64,
    /// 0.5 Crank–Nicolson, 1.0 backward Euler.
    pub theta: f64,
    pub postprocess: bool,
    pub nl: NonlinearConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            k_list: vec![1, 2, 3],
            n_list: vec![8, 16, 32],
            t_end: 0.5,
            dt_policy_c: 1.0,
            theta: 0.5,
            postprocess: true,
            nl: NonlinearConfig::default(),
        }
    }
}

/// Time step of the policy for (k, N), rounded so it divides t_end. The
/// exponent makes the temporal error of the theta scheme shrink at least as
/// fast as the superconvergent postprocessing rate k+2 (for k <= 2, where
/// that rate is verified), so spatial and temporal errors refine in parallel
/// and observed orders stay clean. The per-degree constants are calibrated
/// so the temporal part stays comparable to or below the spatial part.
pub fn policy_dt(cfg: &StudyConfig, k: usize, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let p_t = if (cfg.theta - 0.5).abs() < 1e-12 { 2.0 } else { 1.0 };
    let c_k = match k {
        1 => 0.4,
        2 => 0.8,
        _ => 1.2,
    };
    let target_order = (k.min(2) + 2) as f64;
    let target = cfg.dt_policy_c * c_k * h.powf(target_order / p_t);
    let steps = (cfg.t_end / target).ceil().max(1.0);
    cfg.t_end / steps
}

/// One manufactured run, returning final-time errors.
pub fn manufactured_case(cfg: &StudyConfig, k: usize, n: usize, dt: f64) -> Result<CaseErrors> {
    let bc = BoundarySpec::uniform(&[
        (1, BcKind::Dirichlet),
        (2, BcKind::Dirichlet),
        (3, BcKind::Dirichlet),
        (4, BcKind::Dirichlet),
    ]);
    let mesh = structured_mesh(n, 1.0, 1.0)?;
    let mesh = assign_rock(mesh, &RockScenario::Constant { perm: exact::PERM }, exact::PORO)?;
    let skel = build_skeleton(&mesh, &bc)?;
    let refel = ReferenceElement::build(k)?;
    let geom = GeometryCache::build(&mesh, &skel, &refel);
    let sim = Simulation {
        caches: Default::default(),
        mesh,
        skel,
        refel,
        geom,
        fluid: FluidModel::manufactured(),
        bc_data: BoundaryData::Manufactured,
        forcing: Forcing::Manufactured,
        theta: cfg.theta,
        dt_base: dt,
        nl_config: cfg.nl,
        darcy_options: Default::default(),
        tau_transport: TransportTau::default(),
        dt_max_halvings: 0,
    };
    let art = run(&sim, InitialState::Manufactured, cfg.t_end, 0, |_, _| Ok(()))?;
    let st = &art.final_state;
    let t = cfg.t_end;
    // Pressure and velocity are instantaneous functionals of the saturations;
    // evaluate them at the final state so the measurement carries no
    // saturation-lag error from the splitting.
    let darcy_final = sim.darcy_solve(&st.wetting, &st.light_oil, t)?;

    let e_sw = super::l2_error_scalar(&sim.mesh, &sim.geom, &sim.refel, &st.wetting.s, |x| {
        exact::exact(x[0], x[1], t).s_w
    });
    let e_gsw = super::l2_error_vector(&sim.mesh, &sim.geom, &sim.refel, &st.wetting.q, |x| {
        exact::exact(x[0], x[1], t).grad_s_w
    });
    let e_sg = super::l2_error_scalar(&sim.mesh, &sim.geom, &sim.refel, &st.light_oil.s, |x| {
        exact::exact(x[0], x[1], t).s_g
    });
    let e_gsg = super::l2_error_vector(&sim.mesh, &sim.geom, &sim.refel, &st.light_oil.q, |x| {
        exact::exact(x[0], x[1], t).grad_s_g
    });
    let e_p = super::l2_error_scalar(&sim.mesh, &sim.geom, &sim.refel, &darcy_final.p, |x| {
        exact::exact(x[0], x[1], t).p_o
    });
    let e_u = super::l2_error_vector(&sim.mesh, &sim.geom, &sim.refel, &darcy_final.u, |x| {
        exact::exact(x[0], x[1], t).u_t
    });

    let (mut e_pp_w, mut e_pp_g) = (None, None);
    if cfg.postprocess {
        let refel_hi = ReferenceElement::build(k + 1)?;
        let geom_hi = GeometryCache::build(&sim.mesh, &sim.skel, &refel_hi);
        let pp_w = postprocess(&sim.mesh, &geom_hi, &sim.refel, &refel_hi, &st.wetting.s, &st.wetting.q)?;
        let pp_g = postprocess(
            &sim.mesh,
            &geom_hi,
            &sim.refel,
            &refel_hi,
            &st.light_oil.s,
            &st.light_oil.q,
        )?;
        e_pp_w = Some(super::l2_error_scalar(
            &sim.mesh,
            &geom_hi,
            &refel_hi,
            &pp_w,
            |x| exact::exact(x[0], x[1], t).s_w,
        ));
        e_pp_g = Some(super::l2_error_scalar(
            &sim.mesh,
            &geom_hi,
            &refel_hi,
            &pp_g,
            |x| exact::exact(x[0], x[1], t).s_g,
        ));
    }

    let norm = |f: &dyn Fn([f64; 2]) -> f64| super::l2_norm_exact(&sim.mesh, &sim.geom, &sim.refel, f);
    let norm_vec = |f: &dyn Fn([f64; 2]) -> [f64; 2]| {
        let zero = VectorField::zeros(sim.mesh.n_elements(), sim.refel.n_modes);
        super::l2_error_vector(&sim.mesh, &sim.geom, &sim.refel, &zero, f)
    };

    Ok(CaseErrors {
        k,
        n,
        dt,
        err_s_w: e_sw,
        err_grad_s_w: e_gsw,
        err_s_g: e_sg,
        err_grad_s_g: e_gsg,
        err_p: e_p,
        err_u: e_u,
        err_pp_s_w: e_pp_w,
        err_pp_s_g: e_pp_g,
        norm_s_w: norm(&|x| exact::exact(x[0], x[1], t).s_w),
        norm_s_g: norm(&|x| exact::exact(x[0], x[1], t).s_g),
        norm_p: norm(&|x| exact::exact(x[0], x[1], t).p_o),
        norm_u: norm_vec(&|x| exact::exact(x[0], x[1], t).u_t),
        norm_grad_s_w: norm_vec(&|x| exact::exact(x[0], x[1], t).grad_s_w),
        norm_grad_s_g: norm_vec(&|x| exact::exact(x[0], x[1], t).grad_s_g),
    })
}

/// Observed order between two errors at mesh factors n and 2n.
pub fn observed_rate(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    pub cases: Vec<CaseErrors>,
}

impl ErrorReport {
    /// Rates per field between consecutive N at fixed k, keyed by
    /// (k, n_fine): rate = log2(e(N)/e(2N)).
    pub fn rates(&self) -> Vec<(usize, usize, [f64; 6], Option<f64>, Option<f64>)> {
        let mut out = Vec::new();
        for w in self.cases.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.k == b.k && b.n == 2 * a.n {
                let mut r = [0.0; 6];
                for (i, (ea, eb)) in a.fields().iter().zip(b.fields().iter()).enumerate() {
                    r[i] = observed_rate(*ea, *eb);
                }
                let rp_w = match (a.err_pp_s_w, b.err_pp_s_w) {
                    (Some(ea), Some(eb)) => Some(observed_rate(ea, eb)),
                    _ => None,
                };
                let rp_g = match (a.err_pp_s_g, b.err_pp_s_g) {
                    (Some(ea), Some(eb)) => Some(observed_rate(ea, eb)),
                    _ => None,
                };
                out.push((b.k, b.n, r, rp_w, rp_g));
            }
        }
        out
    }
}

/// Run the whole study. Failed sub-runs abort with their error.
pub fn convergence_study(cfg: &StudyConfig) -> Result<ErrorReport> {
    let mut report = ErrorReport::default();
    for &k in &cfg.k_list {
        for &n in &cfg.n_list {
            let dt = policy_dt(cfg, k, n);
            report.cases.push(manufactured_case(cfg, k, n, dt)?);
        }
    }
    Ok(report)
}
