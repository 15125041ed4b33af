//! Command line for the triflow simulator.
//!
//! Verbs: `run <config>`, `converge <config>`, `mesh-info <mesh>`, `presets`.
//! A config argument is either a preset name or a path to a flat
//! `key = value` file. Exit codes: 0 success, 2 configuration error,
//! 3 solver failure.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use triflow::config::{parse_config, RunConfig, Scenario};
use triflow::error::Error;
use triflow::output;
use triflow::verify::study::{convergence_study, StudyConfig};
use triflow::SECONDS_PER_DAY;

#[derive(Parser)]
#[command(name = "triflow", version, about = "High-order HDG three-phase porous-media flow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file or preset name
    Run {
        /// Path to a config file, or a preset name (see `presets`)
        config: String,
    },
    /// Run the manufactured-solution convergence study
    Converge {
        /// Path to a config file, or a preset name
        config: String,
    },
    /// Print counts and degree-of-freedom figures for a mesh file
    MeshInfo {
        /// Path to a mesh in the plain-text format
        mesh: PathBuf,
        /// Polynomial degrees to tabulate
        #[arg(long, default_values_t = vec![1usize, 2, 4, 8])]
        degrees: Vec<usize>,
    },
    /// List the built-in scenario presets with their parameters
    Presets,
}

fn load_config(arg: &str) -> Result<RunConfig, Error> {
    if let Ok(scenario) = Scenario::parse(arg) {
        let mut cfg = RunConfig::preset(scenario);
        cfg.out_dir = PathBuf::from("out").join(scenario.name());
        cfg.validate()?;
        return Ok(cfg);
    }
    parse_config(Path::new(arg))
}

fn cmd_run(arg: &str) -> Result<(), Error> {
    let cfg = load_config(arg)?;
    println!("# resolved configuration");
    print!("{}", cfg.serialize());
    let t0 = std::time::Instant::now();
    let art = triflow::cli_support::run_from_config(&cfg)?;
    println!(
        "completed {} steps to t = {:.6} days in {:.1?}; outputs in {}",
        art.final_state.step,
        art.final_state.ticks as f64 * cfg.dt_seconds
            / (1u64 << triflow::driver::MAX_DT_HALVINGS) as f64
            / SECONDS_PER_DAY,
        t0.elapsed(),
        cfg.out_dir.display()
    );
    println!(
        "saturation ranges over snapshots: s_w [{:.4}, {:.4}], s_g [{:.4}, {:.4}]",
        art.s_w_range.0, art.s_w_range.1, art.s_g_range.0, art.s_g_range.1
    );
    Ok(())
}

fn cmd_converge(arg: &str) -> Result<(), Error> {
    let cfg = load_config(arg)?;
    let study = StudyConfig {
        k_list: cfg.conv_k_list.clone(),
        n_list: cfg.conv_n_list.clone(),
        t_end: cfg.conv_t_end,
        dt_policy_c: cfg.conv_dt_c,
        theta: cfg.time_scheme.theta(),
        postprocess: cfg.postprocess,
        nl: cfg.nonlinear_config(),
    };
    let t0 = std::time::Instant::now();
    let report = convergence_study(&study)?;
    let table = output::convergence_table(&report);
    println!("{table}");
    println!("study completed in {:.1?}", t0.elapsed());
    output::emit(&cfg, "convergence.csv", &output::convergence_csv(&cfg, &report))?;
    output::emit(&cfg, "convergence.txt", &table)?;
    println!("reports in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_mesh_info(path: &Path, degrees: &[usize]) -> Result<(), Error> {
    use triflow::mesh::{build_skeleton, dof_counts, load_mesh, BcKind, BoundarySpec};
    let mesh = load_mesh(path, false)?;
    let tags: std::collections::BTreeSet<u32> =
        mesh.boundary_edges.iter().map(|(_, t)| *t).collect();
    let bc = BoundarySpec::uniform(
        &tags
            .iter()
            .map(|&t| (t, BcKind::Dirichlet))
            .collect::<Vec<_>>(),
    );
    let skel = build_skeleton(&mesh, &bc)?;
    let area: f64 = (0..mesh.n_elements()).map(|e| mesh.element_area(e)).sum();
    println!("vertices:        {}", mesh.vertices.len());
    println!("triangles:       {}", mesh.n_elements());
    println!("unique edges:    {}", skel.n_edges());
    println!("boundary edges:  {}", skel.n_boundary_edges());
    println!("boundary tags:   {tags:?}");
    println!("total area:      {area:.6e}");
    println!("{:>4} {:>12} {:>12} {:>8}", "k", "dg_dofs", "hdg_dofs", "ratio");
    for &k in degrees {
        let d = dof_counts(&mesh, &skel, k);
        println!(
            "{:>4} {:>12} {:>12} {:>8.3}",
            k, d.dg_dofs, d.hdg_trace_dofs, d.ratio
        );
    }
    Ok(())
}

fn cmd_presets() {
    for scenario in Scenario::all() {
        let cfg = RunConfig::preset(scenario);
        println!("### {}", scenario.name());
        print!("{}", cfg.serialize());
        println!();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Converge { config } => cmd_converge(config),
        Command::MeshInfo { mesh, degrees } => cmd_mesh_info(mesh, degrees),
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
