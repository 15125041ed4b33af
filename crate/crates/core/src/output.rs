//! Run artifacts: field snapshots, line profiles, run logs, and convergence
//! reports. CSV numbers use 17 significant digits and LF endings so outputs
//! are bit-reproducible.

use crate::config::RunConfig;
use crate::driver::{AdvanceReport, Simulation, SimulationState};
use crate::error::{Error, Result};
use crate::field::ElementField;
use crate::geom::GeometryCache;
use crate::postprocess::postprocess;
use crate::ref_element::ReferenceElement;
use crate::verify::study::ErrorReport;
use crate::SECONDS_PER_DAY;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Header line carried by every output file: version, config hash, scenario,
/// and discretization parameters.
pub fn file_header(cfg: &RunConfig) -> String {
    format!(
        "# triflow {} config_hash={:016x} scenario={} k={} mesh={}x{} dt_s={:.17e} scheme={} seed={}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.scenario.name(),
        cfg.k,
        cfg.mesh_nx,
        cfg.mesh_ny,
        cfg.dt_seconds,
        cfg.time_scheme.name(),
        cfg.seed
    )
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Nodal CSV of one scalar field: rows `x,y,value` per element node.
pub fn field_csv(
    cfg: &RunConfig,
    geom: &GeometryCache,
    refel: &ReferenceElement,
    field: &ElementField,
) -> String {
    let mut out = file_header(cfg);
    out.push_str("x,y,value\n");
    for el in 0..field.n_elements {
        let vals = field.values_at(el, &refel.vandermonde);
        for (i, &(rx, ry)) in refel.nodes.iter().enumerate() {
            let p = geom.elements[el].to_physical((rx, ry));
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", p[0], p[1], vals[i]);
        }
    }
    out
}

/// Write the snapshot files of a state: s_w, s_g, p_o (and postprocessed
/// saturations with a `_pp` suffix when enabled).
pub struct SnapshotWriter {
    pub dir: PathBuf,
    pub refel_hi: Option<(ReferenceElement, GeometryCache)>,
}

impl SnapshotWriter {
    pub fn new(cfg: &RunConfig, sim: &Simulation) -> Result<Self> {
        let refel_hi = if cfg.postprocess {
            let r = ReferenceElement::build(sim.refel.degree + 1)?;
            let g = GeometryCache::build(&sim.mesh, &sim.skel, &r);
            Some((r, g))
        } else {
            None
        };
        Ok(SnapshotWriter {
            dir: cfg.out_dir.clone(),
            refel_hi,
        })
    }

    pub fn write(
        &self,
        cfg: &RunConfig,
        sim: &Simulation,
        state: &SimulationState,
    ) -> Result<()> {
        let t_days = sim.time_of(state.ticks) / SECONDS_PER_DAY;
        let tag = format!("step{:05}", state.step);
        let fields: [(&str, &ElementField); 3] = [
            ("s_w", &state.wetting.s),
            ("s_g", &state.light_oil.s),
            ("p_o", &state.darcy.p),
        ];
        for (name, field) in fields {
            let csv = field_csv(cfg, &sim.geom, &sim.refel, field);
            self.write_one(&format!("{tag}_{name}.csv"), &csv)?;
            if cfg.vtk {
                let vtk = field_vtk(name, &sim.geom, &sim.refel, field);
                self.write_one(&format!("{tag}_{name}.vtk"), &vtk)?;
            }
        }
        if let Some((refel_hi, geom_hi)) = &self.refel_hi {
            for (name, st) in [("s_w", &state.wetting), ("s_g", &state.light_oil)] {
                let pp = postprocess(&sim.mesh, geom_hi, &sim.refel, refel_hi, &st.s, &st.q)?;
                let csv = field_csv(cfg, geom_hi, refel_hi, &pp);
                self.write_one(&format!("{tag}_{name}_pp.csv"), &csv)?;
            }
        }
        let _ = t_days;
        Ok(())
    }

    fn write_one(&self, name: &str, content: &str) -> Result<()> {
        write_file(&self.dir.join(name), content)
    }
}

/// Legacy-ASCII VTK point cloud of nodal values (informational output).
pub fn field_vtk(
    name: &str,
    geom: &GeometryCache,
    refel: &ReferenceElement,
    field: &ElementField,
) -> String {
    let n_pts = field.n_elements * refel.nodes.len();
    let mut pts = String::new();
    let mut vals = String::new();
    for el in 0..field.n_elements {
        let v = field.values_at(el, &refel.vandermonde);
        for (i, &(rx, ry)) in refel.nodes.iter().enumerate() {
            let p = geom.elements[el].to_physical((rx, ry));
            let _ = writeln!(pts, "{:.16e} {:.16e} 0.0", p[0], p[1]);
            let _ = writeln!(vals, "{:.16e}", v[i]);
        }
    }
    format!(
        "# vtk DataFile Version 3.0\ntriflow field {name}\nASCII\nDATASET UNSTRUCTURED_GRID\n\
         POINTS {n_pts} double\n{pts}POINT_DATA {n_pts}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n{vals}"
    )
}

/// Line profile (x = c or y = c) sampled from the volume expansions at
/// uniform points; element ownership ties break toward the lower element id.
pub fn profile_csv(
    cfg: &RunConfig,
    sim: &Simulation,
    state: &SimulationState,
    axis_y: Option<f64>,
    axis_x: Option<f64>,
    n_samples: usize,
) -> Result<String> {
    let (lx, ly) = domain_extent(sim);
    let line: Vec<[f64; 2]> = if let Some(y) = axis_y {
        if y < 0.0 || y > ly {
            return Err(Error::config(format!("profile line y = {y} outside the domain")));
        }
        (0..n_samples)
            .map(|i| [lx * i as f64 / (n_samples - 1) as f64, y])
            .collect()
    } else if let Some(x) = axis_x {
        if x < 0.0 || x > lx {
            return Err(Error::config(format!("profile line x = {x} outside the domain")));
        }
        (0..n_samples)
            .map(|i| [x, ly * i as f64 / (n_samples - 1) as f64])
            .collect()
    } else {
        return Err(Error::config("profile needs a line (profile_x or profile_y)"));
    };

    let mut out = file_header(cfg);
    out.push_str("coord,s_w,s_g,p_o\n");
    for p in line {
        let el = locate_element(sim, p)?;
        let g = &sim.geom.elements[el];
        let r = g.to_reference(p);
        let (phi, _, _) = sim.refel.eval_basis_with_grad(&[r]);
        let sw = state.wetting.s.values_at(el, &phi)[0];
        let sg = state.light_oil.s.values_at(el, &phi)[0];
        let po = state.darcy.p.values_at(el, &phi)[0];
        let coord = if axis_y.is_some() { p[0] } else { p[1] };
        let _ = writeln!(out, "{coord:.16e},{sw:.16e},{sg:.16e},{po:.16e}");
    }
    Ok(out)
}

fn domain_extent(sim: &Simulation) -> (f64, f64) {
    let mut lx: f64 = 0.0;
    let mut ly: f64 = 0.0;
    for v in &sim.mesh.vertices {
        lx = lx.max(v[0]);
        ly = ly.max(v[1]);
    }
    (lx, ly)
}

/// Containing element of a point, lowest element id on ties.
pub fn locate_element(sim: &Simulation, p: [f64; 2]) -> Result<usize> {
    const TOL: f64 = 1e-9;
    for el in 0..sim.mesh.n_elements() {
        let g = &sim.geom.elements[el];
        let (r, s) = g.to_reference(p);
        if r >= -TOL && s >= -TOL && r + s <= 1.0 + TOL {
            return Ok(el);
        }
    }
    Err(Error::Domain(format!(
        "point ({}, {}) lies outside the mesh",
        p[0], p[1]
    )))
}

/// Run-log CSV: one line per nonlinear iteration.
pub fn run_log_csv(cfg: &RunConfig, reports: &[AdvanceReport]) -> String {
    let mut out = file_header(cfg);
    out.push_str("step,phase,stage,iter,res_norm,inc_norm\n");
    for rep in reports {
        for (phase, rec) in &rep.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.16e},{:.16e}",
                rep.step, phase, rec.stage, rec.iter, rec.res_norm, rec.inc_norm
            );
        }
    }
    out
}

/// Convergence report CSV mirroring the study data.
pub fn convergence_csv(cfg: &RunConfig, report: &ErrorReport) -> String {
    let mut out = file_header(cfg);
    out.push_str(
        "k,N,dt,err_sw,err_gsw,err_sg,err_gsg,err_p,err_u,err_sw_pp,err_sg_pp,\
         rate_sw,rate_gsw,rate_sg,rate_gsg,rate_p,rate_u,rate_sw_pp,rate_sg_pp\n",
    );
    let rates = report.rates();
    for c in &report.cases {
        let rate = rates.iter().find(|(k, n, ..)| *k == c.k && *n == c.n);
        let fmt_rate = |i: usize| -> String {
            match rate {
                Some((_, _, r, _, _)) => format!("{:.16e}", r[i]),
                None => String::new(),
            }
        };
        let fmt_pp_rate = |wet: bool| -> String {
            match rate {
                Some((_, _, _, rw, rg)) => {
                    let v = if wet { rw } else { rg };
                    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
                }
                None => String::new(),
            }
        };
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{},{},{},{},{}",
            c.k,
            c.n,
            c.dt,
            c.err_s_w,
            c.err_grad_s_w,
            c.err_s_g,
            c.err_grad_s_g,
            c.err_p,
            c.err_u,
            c.err_pp_s_w.map(|e| format!("{e:.16e}")).unwrap_or_default(),
            c.err_pp_s_g.map(|e| format!("{e:.16e}")).unwrap_or_default(),
            fmt_rate(0),
            fmt_rate(1),
            fmt_rate(2),
            fmt_rate(3),
            fmt_rate(4),
            fmt_rate(5),
            fmt_pp_rate(true),
            fmt_pp_rate(false),
        );
    }
    out
}

/// Plain-text convergence table: one block per degree, one row per mesh.
pub fn convergence_table(report: &ErrorReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>2} {:>4} | {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} | {:>9} {:>9}",
        "k", "N", "s_w", "grad_s_w", "s_g", "grad_s_g", "p_o", "u_t", "s_w*", "s_g*"
    );
    let rates = report.rates();
    let mut last_k = usize::MAX;
    for c in &report.cases {
        if c.k != last_k {
            let _ = writeln!(out, "{}", "-".repeat(96));
            last_k = c.k;
        }
        let _ = writeln!(
            out,
            "{:>2} {:>4} | {:>9.2e} {:>9.2e} {:>9.2e} {:>9.2e} {:>9.2e} {:>9.2e} | {:>9} {:>9}",
            c.k,
            c.n,
            c.err_s_w,
            c.err_grad_s_w,
            c.err_s_g,
            c.err_grad_s_g,
            c.err_p,
            c.err_u,
            c.err_pp_s_w.map(|e| format!("{e:.2e}")).unwrap_or_default(),
            c.err_pp_s_g.map(|e| format!("{e:.2e}")).unwrap_or_default(),
        );
        if let Some((_, _, r, rw, rg)) = rates.iter().find(|(k, n, ..)| *k == c.k && *n == c.n) {
            let _ = writeln!(
                out,
                "{:>2} {:>4} | {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} | {:>9} {:>9}",
                "",
                "rate",
                r[0],
                r[1],
                r[2],
                r[3],
                r[4],
                r[5],
                rw.map(|x| format!("{x:.2}")).unwrap_or_default(),
                rg.map(|x| format!("{x:.2}")).unwrap_or_default(),
            );
        }
    }
    out
}

/// Emit a full text artifact under the configured output directory.
pub fn emit(cfg: &RunConfig, name: &str, content: &str) -> Result<()> {
    write_file(&cfg.out_dir.join(name), content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config_str, Scenario};
    use crate::driver::{run, InitialState};

    fn tiny_sim() -> (RunConfig, Simulation) {
        let mut cfg = RunConfig::preset(Scenario::Homogeneous);
        cfg.k = 1;
        cfg.mesh_nx = 2;
        cfg.mesh_ny = 2;
        cfg.snapshot_every = 0;
        cfg.postprocess = false;
        let sim = crate::cli_support::build_simulation(&cfg).unwrap();
        (cfg, sim)
    }

    #[test]
    fn snapshot_row_count_matches_contract() {
        let (cfg, sim) = tiny_sim();
        let art = run(
            &sim,
            InitialState::Uniform {
                s_w: cfg.init_sw,
                s_g: cfg.init_sg,
            },
            0.0,
            0,
            |_, _| Ok(()),
        )
        .unwrap();
        let csv = field_csv(&cfg, &sim.geom, &sim.refel, &art.final_state.wetting.s);
        let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(data_rows, sim.mesh.n_elements() * sim.refel.nodes.len());
        // constant field: all values equal to projection round-off
        let values: Vec<f64> = csv
            .lines()
            .skip(2)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(values
            .iter()
            .all(|v| (v - values[0]).abs() < 1e-12 * (1.0 + values[0].abs())));
    }

    #[test]
    fn csv_round_trips_nodal_values_bit_identically() {
        let (cfg, sim) = tiny_sim();
        let art = run(
            &sim,
            InitialState::Uniform { s_w: 0.37, s_g: 0.21 },
            0.0,
            0,
            |_, _| Ok(()),
        )
        .unwrap();
        let field = &art.final_state.darcy.p;
        let csv = field_csv(&cfg, &sim.geom, &sim.refel, field);
        let parsed: Vec<f64> = csv
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        let mut idx = 0;
        for el in 0..sim.mesh.n_elements() {
            let vals = field.values_at(el, &sim.refel.vandermonde);
            for i in 0..sim.refel.nodes.len() {
                assert_eq!(parsed[idx].to_bits(), vals[i].to_bits());
                idx += 1;
            }
        }
    }

    #[test]
    fn profile_has_requested_rows_and_constant_values() {
        let (cfg, sim) = tiny_sim();
        let art = run(
            &sim,
            InitialState::Uniform { s_w: 0.3, s_g: 0.54 },
            0.0,
            0,
            |_, _| Ok(()),
        )
        .unwrap();
        let csv = profile_csv(&cfg, &sim, &art.final_state, Some(500.0), None, 1000).unwrap();
        let rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(rows, 1000);
        let sw: Vec<f64> = csv
            .lines()
            .skip(2)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(sw.iter().all(|v| (v - sw[0]).abs() < 1e-12));
        // line outside the domain errors
        assert!(profile_csv(&cfg, &sim, &art.final_state, Some(2000.0), None, 10).is_err());
    }

    #[test]
    fn config_header_appears_in_outputs() {
        let cfg = parse_config_str("scenario = lens\nk = 1\nmesh_n = 2\n", "t").unwrap();
        let hdr = file_header(&cfg);
        assert!(hdr.contains("scenario=lens"));
        assert!(hdr.contains("config_hash="));
    }
}
