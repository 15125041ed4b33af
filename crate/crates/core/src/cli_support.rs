//! Glue between configurations and runnable simulations: mesh construction,
//! boundary wiring, and the full run orchestration used by the command line.

use crate::config::{RunConfig, Scenario};
use crate::driver::{
    run, BoundaryData, Forcing, InitialState, RunArtifacts, Simulation, SimCaches,
};
use crate::error::Result;
use crate::geom::GeometryCache;
use crate::mesh::{
    assign_rock, build_skeleton, load_mesh, structured_mesh_rect, BcKind, BoundarySpec,
};
use crate::output::{self, SnapshotWriter};
use crate::ref_element::ReferenceElement;
use crate::transport::TransportTau;
use std::collections::BTreeMap;

/// Boundary classification per scenario: the manufactured case is Dirichlet
/// on every side for every field; the flow scenarios drive left to right
/// with no-flow top and bottom.
pub fn boundary_spec(cfg: &RunConfig) -> BoundarySpec {
    match cfg.scenario {
        Scenario::Manufactured => BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Dirichlet),
            (4, BcKind::Dirichlet),
        ]),
        _ => BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ]),
    }
}

pub fn build_simulation(cfg: &RunConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mesh = match &cfg.mesh_path {
        Some(path) => load_mesh(path, cfg.mesh_auto_reorient)?,
        None => structured_mesh_rect(cfg.mesh_nx, cfg.mesh_ny, cfg.domain_lx, cfg.domain_ly)?,
    };
    let mesh = assign_rock(mesh, &cfg.rock_scenario()?, cfg.porosity)?;
    let bc = boundary_spec(cfg);
    let skel = build_skeleton(&mesh, &bc)?;
    let refel = ReferenceElement::build(cfg.k)?;
    let geom = GeometryCache::build(&mesh, &skel, &refel);
    let bc_data = match cfg.scenario {
        Scenario::Manufactured => BoundaryData::Manufactured,
        _ => {
            let mut map = BTreeMap::new();
            map.insert(1, cfg.bc_left);
            map.insert(2, cfg.bc_right);
            map.insert(3, [0.0; 3]);
            map.insert(4, [0.0; 3]);
            BoundaryData::TaggedConstant(map)
        }
    };
    let forcing = match cfg.scenario {
        Scenario::Manufactured => Forcing::Manufactured,
        _ => Forcing::None,
    };
    Ok(Simulation {
        caches: SimCaches::default(),
        mesh,
        skel,
        refel,
        geom,
        fluid: cfg.fluid_model()?,
        bc_data,
        forcing,
        theta: cfg.time_scheme.theta(),
        dt_base: cfg.dt_seconds,
        nl_config: cfg.nonlinear_config(),
        darcy_options: crate::darcy::DarcyOptions {
            tau_scale: cfg.tau_scale,
            tau_override: cfg.tau_override,
        },
        tau_transport: TransportTau {
            floor: cfg.tau_floor,
            c_override: cfg.tau_c_override,
            v_override: cfg.tau_v_override,
        },
        dt_max_halvings: cfg.dt_max_halvings,
    })
}

pub fn initial_condition(cfg: &RunConfig) -> InitialState {
    match cfg.scenario {
        Scenario::Manufactured => InitialState::Manufactured,
        _ => InitialState::Uniform {
            s_w: cfg.init_sw,
            s_g: cfg.init_sg,
        },
    }
}

/// Full `run` verb: simulate, write snapshots and the profile at the end,
/// and the run log. Returns the artifacts for further inspection.
pub fn run_from_config(cfg: &RunConfig) -> Result<RunArtifacts> {
    let sim = build_simulation(cfg)?;
    let writer = SnapshotWriter::new(cfg, &sim)?;
    let art = run(
        &sim,
        initial_condition(cfg),
        cfg.t_end_seconds,
        cfg.snapshot_every,
        |sim, state| writer.write(cfg, sim, state),
    )?;
    if cfg.profile_y.is_some() || cfg.profile_x.is_some() {
        let csv = output::profile_csv(
            cfg,
            &sim,
            &art.final_state,
            cfg.profile_y,
            cfg.profile_x,
            cfg.profile_samples,
        )?;
        output::emit(cfg, "profile.csv", &csv)?;
    }
    output::emit(cfg, "run_log.csv", &output::run_log_csv(cfg, &art.reports))?;
    Ok(art)
}
