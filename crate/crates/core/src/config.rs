//! Run configuration: flat `key = value` files, scenario presets, and
//! validation. Every run artifact records the resolved configuration and its
//! hash.

use crate::error::{Error, Result};
use crate::fluid::{CapillaryModel, FluidModel, MobilityModel};
use crate::mesh::RockScenario;
use crate::nonlinear::NonlinearConfig;
use crate::SECONDS_PER_DAY;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Manufactured,
    Homogeneous,
    Lens,
    Disk,
    RandomPerm,
    Checkerboard,
    FromFiles,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Manufactured => "manufactured",
            Scenario::Homogeneous => "homogeneous",
            Scenario::Lens => "lens",
            Scenario::Disk => "disk",
            Scenario::RandomPerm => "random_perm",
            Scenario::Checkerboard => "checkerboard",
            Scenario::FromFiles => "from_files",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "manufactured" => Scenario::Manufactured,
            "homogeneous" => Scenario::Homogeneous,
            "lens" => Scenario::Lens,
            "disk" => Scenario::Disk,
            "random_perm" => Scenario::RandomPerm,
            "checkerboard" => Scenario::Checkerboard,
            "from_files" => Scenario::FromFiles,
            other => {
                return Err(Error::config(format!(
                    "unknown scenario `{other}` (expected one of manufactured, homogeneous, \
                     lens, disk, random_perm, checkerboard, from_files)"
                )))
            }
        })
    }

    pub fn all() -> [Scenario; 6] {
        [
            Scenario::Manufactured,
            Scenario::Homogeneous,
            Scenario::Lens,
            Scenario::Disk,
            Scenario::RandomPerm,
            Scenario::Checkerboard,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    BackwardEuler,
    CrankNicolson,
}

impl TimeScheme {
    pub fn theta(&self) -> f64 {
        match self {
            TimeScheme::BackwardEuler => 1.0,
            TimeScheme::CrankNicolson => 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeScheme::BackwardEuler => "backward_euler",
            TimeScheme::CrankNicolson => "crank_nicolson",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub k: usize,
    /// Structured mesh cells per direction (nx, ny), or an external mesh.
    pub mesh_nx: usize,
    pub mesh_ny: usize,
    pub mesh_path: Option<PathBuf>,
    pub mesh_auto_reorient: bool,
    pub domain_lx: f64,
    pub domain_ly: f64,
    pub dt_seconds: f64,
    pub t_end_seconds: f64,
    pub time_scheme: TimeScheme,
    pub mobility_model: String,
    pub a_g: f64,
    pub capillary_model: String,
    pub cap_eps: f64,
    /// Viscosities in centipoise.
    pub mu_w_cp: f64,
    pub mu_o_cp: f64,
    pub mu_g_cp: f64,
    pub s_wr: f64,
    pub s_or: f64,
    pub porosity: f64,
    pub perm: f64,
    pub lens_box: [f64; 4],
    pub lens_perm: f64,
    pub disk_center: [f64; 2],
    pub disk_radius: f64,
    pub disk_perm: f64,
    pub rand_k_min: f64,
    pub rand_k_max: f64,
    pub checker_mask_path: Option<PathBuf>,
    pub checker_perm_low: f64,
    pub checker_perm_high: f64,
    /// Left/right Dirichlet values: [s_w, s_g, p (Pa)].
    pub bc_left: [f64; 3],
    pub bc_right: [f64; 3],
    pub init_sw: f64,
    pub init_sg: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub anderson_depth: usize,
    pub anderson_max_iter: usize,
    pub anderson_tol: f64,
    pub backtracking: bool,
    pub max_halvings: usize,
    pub dt_max_halvings: usize,
    pub tau_scale: f64,
    pub tau_override: Option<f64>,
    pub tau_c_override: Option<f64>,
    pub tau_v_override: Option<f64>,
    pub tau_floor: f64,
    pub out_dir: PathBuf,
    pub snapshot_every: usize,
    pub profile_y: Option<f64>,
    pub profile_x: Option<f64>,
    pub profile_samples: usize,
    pub postprocess: bool,
    pub vtk: bool,
    pub seed: u64,
    pub conv_k_list: Vec<usize>,
    pub conv_n_list: Vec<usize>,
    pub conv_t_end: f64,
    pub conv_dt_c: f64,
}

impl RunConfig {
    /// Built-in preset for a scenario, with every paper-derived parameter.
    pub fn preset(scenario: Scenario) -> RunConfig {
        let mut c = RunConfig {
            scenario,
            k: 4,
            mesh_nx: 16,
            mesh_ny: 16,
            mesh_path: None,
            mesh_auto_reorient: false,
            domain_lx: 1000.0,
            domain_ly: 1000.0,
            dt_seconds: SECONDS_PER_DAY,
            t_end_seconds: 100.0 * SECONDS_PER_DAY,
            time_scheme: TimeScheme::CrankNicolson,
            mobility_model: "brooks_corey".into(),
            a_g: 0.0,
            capillary_model: "leverett".into(),
            cap_eps: 1e-3,
            mu_w_cp: 0.5,
            mu_o_cp: 1.0,
            mu_g_cp: 0.3,
            s_wr: 0.0,
            s_or: 0.0,
            porosity: 0.2,
            perm: 1e-10,
            lens_box: [250.0, 500.0, 250.0, 500.0],
            lens_perm: 1e-13,
            disk_center: [100.0, 100.0],
            disk_radius: 50.0,
            disk_perm: 1e-13,
            rand_k_min: 1e-16,
            rand_k_max: 1e-7,
            checker_mask_path: None,
            checker_perm_low: 1e-15,
            checker_perm_high: 1e-10,
            bc_left: [0.82, 0.11, 19e6],
            bc_right: [0.3, 0.54, 15e6],
            init_sw: 0.3,
            init_sg: 0.54,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            anderson_depth: 5,
            anderson_max_iter: 30,
            anderson_tol: 1e-6,
            backtracking: true,
            max_halvings: 8,
            dt_max_halvings: 4,
            tau_scale: 1.0,
            tau_override: None,
            tau_c_override: None,
            tau_v_override: None,
            tau_floor: 1e-10,
            out_dir: PathBuf::from("out"),
            snapshot_every: 25,
            profile_y: None,
            profile_x: None,
            profile_samples: 1000,
            postprocess: true,
            vtk: false,
            seed: 42,
            conv_k_list: vec![1, 2, 3],
            conv_n_list: vec![8, 16, 32],
            conv_t_end: 0.5,
            conv_dt_c: 1.0,
        };
        match scenario {
            Scenario::Manufactured => {
                c.k = 2;
                c.domain_lx = 1.0;
                c.domain_ly = 1.0;
                c.perm = 1e-4;
                c.mobility_model = "linear".into();
                c.capillary_model = "linear".into();
                c.mu_w_cp = 1000.0; // 1 Pa.s, unit viscosity
                c.mu_o_cp = 1000.0;
                c.mu_g_cp = 1000.0;
                c.dt_seconds = 0.0125;
                c.t_end_seconds = 0.5;
                c.snapshot_every = 0;
            }
            Scenario::Homogeneous => {
                c.profile_y = Some(500.0);
            }
            Scenario::Lens => {
                c.profile_y = Some(375.0);
            }
            Scenario::Disk => {
                c.mesh_nx = 20;
                c.mesh_ny = 16;
                c.domain_lx = 300.0;
                c.domain_ly = 200.0;
                c.perm = 1e-9;
                c.disk_perm = 1e-13;
                c.mu_w_cp = 1.0;
                c.mu_o_cp = 1.0;
                c.mu_g_cp = 1.0;
                c.capillary_model = "logarithmic".into();
                c.cap_eps = 0.01;
                c.bc_left = [0.82, 0.11, 3e6];
                c.bc_right = [0.3, 0.54, 1e6];
                c.t_end_seconds = 50.0 * SECONDS_PER_DAY;
                c.snapshot_every = 13; // t = 12.5, 25, 37.5, 50 days at dt = 1 day
            }
            Scenario::RandomPerm => {
                c.k = 5;
                c.mesh_nx = 23;
                c.mesh_ny = 23;
                c.mu_w_cp = 1.0;
                c.mu_o_cp = 0.8;
                c.mu_g_cp = 0.9;
                c.t_end_seconds = 65.0 * SECONDS_PER_DAY;
            }
            Scenario::Checkerboard => {
                c.k = 8;
                c.t_end_seconds = 500.0 * SECONDS_PER_DAY;
            }
            Scenario::FromFiles => {}
        }
        c
    }

    pub fn fluid_model(&self) -> Result<FluidModel> {
        let mobility = match self.mobility_model.as_str() {
            "quadratic_chen" => MobilityModel::QuadraticChen,
            "linear" => MobilityModel::LinearManufactured,
            "brooks_corey" => MobilityModel::BrooksCorey { a_g: self.a_g },
            other => {
                return Err(Error::config(format!(
                    "unknown mobility_model `{other}` (quadratic_chen, linear, brooks_corey)"
                )))
            }
        };
        let capillary = match self.capillary_model.as_str() {
            "linear" => CapillaryModel::LinearManufactured,
            "leverett" => CapillaryModel::Leverett { eps: self.cap_eps },
            "logarithmic" => CapillaryModel::Logarithmic { eps: self.cap_eps },
            other => {
                return Err(Error::config(format!(
                    "unknown capillary_model `{other}` (linear, leverett, logarithmic)"
                )))
            }
        };
        FluidModel::new(
            mobility,
            capillary,
            self.mu_w_cp * 1e-3,
            self.mu_o_cp * 1e-3,
            self.mu_g_cp * 1e-3,
            self.s_wr,
            self.s_or,
        )
    }

    pub fn nonlinear_config(&self) -> NonlinearConfig {
        NonlinearConfig {
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            anderson_depth: self.anderson_depth,
            anderson_max_iter: self.anderson_max_iter,
            anderson_tol: self.anderson_tol,
            backtracking: self.backtracking,
            max_halvings: self.max_halvings,
            residual_guard: 1e-9,
        }
    }

    pub fn rock_scenario(&self) -> Result<RockScenario> {
        Ok(match self.scenario {
            Scenario::Manufactured | Scenario::Homogeneous | Scenario::FromFiles => {
                RockScenario::Constant { perm: self.perm }
            }
            Scenario::Lens => RockScenario::Lens {
                x0: self.lens_box[0],
                x1: self.lens_box[1],
                y0: self.lens_box[2],
                y1: self.lens_box[3],
                k_in: self.lens_perm,
                k_out: self.perm,
            },
            Scenario::Disk => RockScenario::Disk {
                cx: self.disk_center[0],
                cy: self.disk_center[1],
                radius: self.disk_radius,
                k_in: self.disk_perm,
                k_out: self.perm,
            },
            Scenario::RandomPerm => RockScenario::Random {
                k_min: self.rand_k_min,
                k_max: self.rand_k_max,
                seed: self.seed,
            },
            Scenario::Checkerboard => {
                let mask = match &self.checker_mask_path {
                    Some(path) => load_mask(path)?,
                    None => default_checker_mask(),
                };
                RockScenario::Checkerboard {
                    mask,
                    lx: self.domain_lx,
                    ly: self.domain_ly,
                    k_low: self.checker_perm_low,
                    k_high: self.checker_perm_high,
                }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k > crate::ref_element::MAX_DEGREE {
            return Err(Error::config(format!("k = {} outside 1..=16", self.k)));
        }
        if self.mesh_path.is_none() && (self.mesh_nx < 1 || self.mesh_ny < 1) {
            return Err(Error::config("mesh_n must be at least 1"));
        }
        if !(self.domain_lx > 0.0 && self.domain_ly > 0.0) {
            return Err(Error::config("domain dimensions must be positive"));
        }
        if !(self.dt_seconds > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.t_end_seconds < 0.0 {
            return Err(Error::config("t_end must be nonnegative"));
        }
        for (name, v) in [("init_sw", self.init_sw), ("init_sg", self.init_sg)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for bc in [&self.bc_left, &self.bc_right] {
            if !(0.0..=1.0).contains(&bc[0]) || !(0.0..=1.0).contains(&bc[1]) {
                return Err(Error::config("boundary saturations must lie in [0, 1]"));
            }
        }
        if self.profile_samples < 2 {
            return Err(Error::config("profile_samples must be at least 2"));
        }
        self.fluid_model()?;
        self.rock_scenario()?;
        self.nonlinear_config().validate()?;
        Ok(())
    }

    /// Canonical flat serialization (also the config-hash input).
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("scenario", self.scenario.name().into());
        kv("k", self.k.to_string());
        match &self.mesh_path {
            Some(p) => kv("mesh_path", p.display().to_string()),
            None => {
                kv("mesh_nx", self.mesh_nx.to_string());
                kv("mesh_ny", self.mesh_ny.to_string());
            }
        }
        kv("mesh_auto_reorient", self.mesh_auto_reorient.to_string());
        kv("domain_lx", format!("{:.17e}", self.domain_lx));
        kv("domain_ly", format!("{:.17e}", self.domain_ly));
        kv("dt_seconds", format!("{:.17e}", self.dt_seconds));
        kv("t_end_seconds", format!("{:.17e}", self.t_end_seconds));
        kv("time_scheme", self.time_scheme.name().into());
        kv("mobility_model", self.mobility_model.clone());
        kv("a_g", format!("{:.17e}", self.a_g));
        kv("capillary_model", self.capillary_model.clone());
        kv("cap_eps", format!("{:.17e}", self.cap_eps));
        kv("mu_w_cp", format!("{:.17e}", self.mu_w_cp));
        kv("mu_o_cp", format!("{:.17e}", self.mu_o_cp));
        kv("mu_g_cp", format!("{:.17e}", self.mu_g_cp));
        kv("s_wr", format!("{:.17e}", self.s_wr));
        kv("s_or", format!("{:.17e}", self.s_or));
        kv("porosity", format!("{:.17e}", self.porosity));
        kv("perm", format!("{:.17e}", self.perm));
        match self.scenario {
            Scenario::Lens => {
                kv(
                    "lens_box",
                    format!(
                        "{:.17e} {:.17e} {:.17e} {:.17e}",
                        self.lens_box[0], self.lens_box[1], self.lens_box[2], self.lens_box[3]
                    ),
                );
                kv("lens_perm", format!("{:.17e}", self.lens_perm));
            }
            Scenario::Disk => {
                kv(
                    "disk_center",
                    format!("{:.17e} {:.17e}", self.disk_center[0], self.disk_center[1]),
                );
                kv("disk_radius", format!("{:.17e}", self.disk_radius));
                kv("disk_perm", format!("{:.17e}", self.disk_perm));
            }
            Scenario::RandomPerm => {
                kv("rand_k_min", format!("{:.17e}", self.rand_k_min));
                kv("rand_k_max", format!("{:.17e}", self.rand_k_max));
            }
            Scenario::Checkerboard => {
                if let Some(p) = &self.checker_mask_path {
                    kv("checker_mask_path", p.display().to_string());
                }
                kv("checker_perm_low", format!("{:.17e}", self.checker_perm_low));
                kv(
                    "checker_perm_high",
                    format!("{:.17e}", self.checker_perm_high),
                );
            }
            _ => {}
        }
        kv(
            "bc_left",
            format!(
                "{:.17e} {:.17e} {:.17e}",
                self.bc_left[0], self.bc_left[1], self.bc_left[2]
            ),
        );
        kv(
            "bc_right",
            format!(
                "{:.17e} {:.17e} {:.17e}",
                self.bc_right[0], self.bc_right[1], self.bc_right[2]
            ),
        );
        kv("init_sw", format!("{:.17e}", self.init_sw));
        kv("init_sg", format!("{:.17e}", self.init_sg));
        kv("newton_tol", format!("{:.17e}", self.newton_tol));
        kv("newton_max_iter", self.newton_max_iter.to_string());
        kv("anderson_depth", self.anderson_depth.to_string());
        kv("anderson_max_iter", self.anderson_max_iter.to_string());
        kv("anderson_tol", format!("{:.17e}", self.anderson_tol));
        kv("backtracking", self.backtracking.to_string());
        kv("max_halvings", self.max_halvings.to_string());
        kv("dt_max_halvings", self.dt_max_halvings.to_string());
        kv("tau_scale", format!("{:.17e}", self.tau_scale));
        if let Some(t) = self.tau_override {
            kv("tau_override", format!("{t:.17e}"));
        }
        if let Some(t) = self.tau_c_override {
            kv("tau_c_override", format!("{t:.17e}"));
        }
        if let Some(t) = self.tau_v_override {
            kv("tau_v_override", format!("{t:.17e}"));
        }
        kv("tau_floor", format!("{:.17e}", self.tau_floor));
        kv("out_dir", self.out_dir.display().to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        if let Some(y) = self.profile_y {
            kv("profile_y", format!("{y:.17e}"));
        }
        if let Some(x) = self.profile_x {
            kv("profile_x", format!("{x:.17e}"));
        }
        kv("profile_samples", self.profile_samples.to_string());
        kv("postprocess", self.postprocess.to_string());
        kv("vtk", self.vtk.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "conv_k_list",
            self.conv_k_list
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        kv(
            "conv_n_list",
            self.conv_n_list
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        kv("conv_t_end", format!("{:.17e}", self.conv_t_end));
        kv("conv_dt_c", format!("{:.17e}", self.conv_dt_c));
        s
    }

    /// FNV-1a hash of the canonical serialization.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.serialize().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

fn default_checker_mask() -> Vec<Vec<bool>> {
    // Scattered low-permeability squares on a 10x10 grid.
    const ROWS: [&str; 10] = [
        "0101000110",
        "0010011000",
        "1100100101",
        "0011010010",
        "0100101100",
        "1010010011",
        "0101100100",
        "0010011010",
        "1100100001",
        "0011010110",
    ];
    ROWS.iter()
        .map(|r| r.chars().map(|c| c == '1').collect())
        .collect()
}

/// ASCII 0/1 grid, one row per line, row 0 at the top of the domain.
pub fn load_mask(path: &Path) -> Result<Vec<Vec<bool>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut mask = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<bool>> = line
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("mask characters must be 0 or 1, found `{other}`"),
                }),
            })
            .collect();
        mask.push(row?);
    }
    if mask.is_empty() {
        return Err(Error::config("checkerboard mask file is empty"));
    }
    Ok(mask)
}

/// Parse a flat `key = value` file. Unknown keys and malformed values are
/// errors carrying the file location. The `scenario` key selects the preset
/// defaults; any other key overrides the preset.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.into(),
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            });
        };
        pairs.push((
            i + 1,
            key.trim().to_string(),
            value.split('#').next().unwrap_or("").trim().to_string(),
        ));
    }

    let scenario_value = pairs
        .iter()
        .find(|(_, k, _)| k == "scenario")
        .map(|(_, _, v)| v.clone());
    let Some(scenario_value) = scenario_value else {
        return Err(Error::config(
            "missing required key `scenario` (one of manufactured, homogeneous, lens, disk, \
             random_perm, checkerboard, from_files); all other keys have preset defaults",
        ));
    };
    let scenario = Scenario::parse(&scenario_value)?;
    let mut cfg = RunConfig::preset(scenario);

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (line, key, value) in &pairs {
        if let Some(prev) = seen.insert(key.clone(), *line) {
            return Err(Error::Parse {
                path: origin.into(),
                line: *line,
                msg: format!("key `{key}` already set on line {prev}"),
            });
        }
        apply_key(&mut cfg, key, value).map_err(|e| Error::Parse {
            path: origin.into(),
            line: *line,
            msg: e.to_string(),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let f = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|e| Error::config(format!("bad number `{v}`: {e}")))
    };
    let u = |v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|e| Error::config(format!("bad integer `{v}`: {e}")))
    };
    let b = |v: &str| -> Result<bool> {
        v.parse::<bool>()
            .map_err(|_| Error::config(format!("bad boolean `{v}` (true/false)")))
    };
    let f_list = |v: &str, n: usize| -> Result<Vec<f64>> {
        let out: Result<Vec<f64>> = v.split_whitespace().map(f).collect();
        let out = out?;
        if out.len() != n {
            return Err(Error::config(format!("expected {n} numbers, found {}", out.len())));
        }
        Ok(out)
    };
    match key {
        "scenario" => {}
        "k" => cfg.k = u(value)?,
        "mesh_n" => {
            cfg.mesh_nx = u(value)?;
            cfg.mesh_ny = cfg.mesh_nx;
        }
        "mesh_nx" => cfg.mesh_nx = u(value)?,
        "mesh_ny" => cfg.mesh_ny = u(value)?,
        "mesh_path" => cfg.mesh_path = Some(PathBuf::from(value)),
        "mesh_auto_reorient" => cfg.mesh_auto_reorient = b(value)?,
        "domain_lx" => cfg.domain_lx = f(value)?,
        "domain_ly" => cfg.domain_ly = f(value)?,
        "dt_days" => cfg.dt_seconds = f(value)? * SECONDS_PER_DAY,
        "dt_seconds" => cfg.dt_seconds = f(value)?,
        "t_end_days" => cfg.t_end_seconds = f(value)? * SECONDS_PER_DAY,
        "t_end_seconds" => cfg.t_end_seconds = f(value)?,
        "time_scheme" => {
            cfg.time_scheme = match value {
                "backward_euler" => TimeScheme::BackwardEuler,
                "crank_nicolson" => TimeScheme::CrankNicolson,
                other => {
                    return Err(Error::config(format!(
                        "unknown time_scheme `{other}` (backward_euler, crank_nicolson)"
                    )))
                }
            }
        }
        "mobility_model" => cfg.mobility_model = value.into(),
        "a_g" => cfg.a_g = f(value)?,
        "capillary_model" => cfg.capillary_model = value.into(),
        "cap_eps" => cfg.cap_eps = f(value)?,
        "mu_w_cp" => cfg.mu_w_cp = f(value)?,
        "mu_o_cp" => cfg.mu_o_cp = f(value)?,
        "mu_g_cp" => cfg.mu_g_cp = f(value)?,
        "s_wr" => cfg.s_wr = f(value)?,
        "s_or" => cfg.s_or = f(value)?,
        "porosity" => cfg.porosity = f(value)?,
        "perm" => cfg.perm = f(value)?,
        "lens_box" => {
            let v = f_list(value, 4)?;
            cfg.lens_box = [v[0], v[1], v[2], v[3]];
        }
        "lens_perm" => cfg.lens_perm = f(value)?,
        "disk_center" => {
            let v = f_list(value, 2)?;
            cfg.disk_center = [v[0], v[1]];
        }
        "disk_radius" => cfg.disk_radius = f(value)?,
        "disk_perm" => cfg.disk_perm = f(value)?,
        "rand_k_min" => cfg.rand_k_min = f(value)?,
        "rand_k_max" => cfg.rand_k_max = f(value)?,
        "checker_mask_path" => cfg.checker_mask_path = Some(PathBuf::from(value)),
        "checker_perm_low" => cfg.checker_perm_low = f(value)?,
        "checker_perm_high" => cfg.checker_perm_high = f(value)?,
        "bc_left" => {
            let v = f_list(value, 3)?;
            cfg.bc_left = [v[0], v[1], v[2]];
        }
        "bc_right" => {
            let v = f_list(value, 3)?;
            cfg.bc_right = [v[0], v[1], v[2]];
        }
        "init_sw" => cfg.init_sw = f(value)?,
        "init_sg" => cfg.init_sg = f(value)?,
        "newton_tol" => cfg.newton_tol = f(value)?,
        "newton_max_iter" => cfg.newton_max_iter = u(value)?,
        "anderson_depth" => cfg.anderson_depth = u(value)?,
        "anderson_max_iter" => cfg.anderson_max_iter = u(value)?,
        "anderson_tol" => cfg.anderson_tol = f(value)?,
        "backtracking" => cfg.backtracking = b(value)?,
        "max_halvings" => cfg.max_halvings = u(value)?,
        "dt_max_halvings" => cfg.dt_max_halvings = u(value)?,
        "tau_scale" => cfg.tau_scale = f(value)?,
        "tau_override" => cfg.tau_override = Some(f(value)?),
        "tau_c_override" => cfg.tau_c_override = Some(f(value)?),
        "tau_v_override" => cfg.tau_v_override = Some(f(value)?),
        "tau_floor" => cfg.tau_floor = f(value)?,
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        "snapshot_every" => cfg.snapshot_every = u(value)?,
        "profile_y" => cfg.profile_y = Some(f(value)?),
        "profile_x" => cfg.profile_x = Some(f(value)?),
        "profile_samples" => cfg.profile_samples = u(value)?,
        "postprocess" => cfg.postprocess = b(value)?,
        "vtk" => cfg.vtk = b(value)?,
        "seed" => {
            cfg.seed = value
                .parse::<u64>()
                .map_err(|e| Error::config(format!("bad seed `{value}`: {e}")))?
        }
        "conv_k_list" => {
            cfg.conv_k_list = value
                .split_whitespace()
                .map(u)
                .collect::<Result<Vec<_>>>()?
        }
        "conv_n_list" => {
            cfg.conv_n_list = value
                .split_whitespace()
                .map(u)
                .collect::<Result<Vec<_>>>()?
        }
        "conv_t_end" => cfg.conv_t_end = f(value)?,
        "conv_dt_c" => cfg.conv_dt_c = f(value)?,
        other => {
            return Err(Error::config(format!("unknown key `{other}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_lists_required_keys() {
        let err = parse_config_str("", "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scenario"), "{msg}");
    }

    #[test]
    fn unknown_key_is_error_with_location() {
        let err = parse_config_str("scenario = lens\nbogus_key = 3\n", "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key") && msg.contains(":2"), "{msg}");
    }

    #[test]
    fn homogeneous_preset_values() {
        let c = RunConfig::preset(Scenario::Homogeneous);
        assert_eq!(c.perm, 1e-10);
        assert_eq!(c.porosity, 0.2);
        assert_eq!(c.mu_w_cp, 0.5);
        assert_eq!(c.mu_o_cp, 1.0);
        assert_eq!(c.mu_g_cp, 0.3);
        assert_eq!(c.bc_left, [0.82, 0.11, 19e6]);
        assert_eq!(c.bc_right, [0.3, 0.54, 15e6]);
        assert_eq!(c.dt_seconds, SECONDS_PER_DAY);
    }

    #[test]
    fn disk_preset_values() {
        let c = RunConfig::preset(Scenario::Disk);
        assert_eq!(c.domain_lx, 300.0);
        assert_eq!(c.domain_ly, 200.0);
        assert_eq!(c.disk_center, [100.0, 100.0]);
        assert_eq!(c.disk_radius, 50.0);
        assert_eq!(c.perm / c.disk_perm, 1e4);
        assert_eq!(c.mu_w_cp, 1.0);
        assert_eq!(c.mesh_nx * c.mesh_ny * 2, 640);
        assert_eq!(c.t_end_seconds, 50.0 * SECONDS_PER_DAY);
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = "scenario = lens\nk = 2\nmesh_n = 8\ndt_days = 0.5\nseed = 7\n";
        let c = parse_config_str(text, "test").unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.mesh_nx, 8);
        assert_eq!(c.dt_seconds, 0.5 * SECONDS_PER_DAY);
        assert_eq!(c.seed, 7);
        // serialize -> parse is idempotent
        let ser = c.serialize();
        let c2 = parse_config_str(&ser, "round").unwrap();
        assert_eq!(c2.serialize(), ser);
        assert_eq!(c2.hash(), c.hash());
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config_str("scenario = lens\nk = 2\nk = 3\n", "t").unwrap_err();
        assert!(err.to_string().contains("already set"));
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(parse_config_str("scenario = lens\nk = 0\n", "t").is_err());
        assert!(parse_config_str("scenario = lens\nk = 17\n", "t").is_err());
        assert!(parse_config_str("scenario = lens\ninit_sw = 1.5\n", "t").is_err());
        assert!(parse_config_str("scenario = lens\ndt_days = -1\n", "t").is_err());
    }

    #[test]
    fn mask_parsing() {
        let dir = std::env::temp_dir().join("triflow_mask");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("mask.txt");
        std::fs::write(&p, "# comment\n0101\n1010\n").unwrap();
        let m = load_mask(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0], vec![false, true, false, true]);
        std::fs::write(&p, "01x1\n").unwrap();
        assert!(load_mask(&p).is_err());
    }
}
