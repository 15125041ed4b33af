use triflow::cli_support::{build_simulation, initial_condition};
use triflow::config::parse_config_str;
use triflow::driver::run;

fn main() {
    let cfg = parse_config_str(
        "scenario = homogeneous\nk = 2\nmesh_n = 8\nt_end_days = 100\nsnapshot_every = 0\npostprocess = false\nnewton_max_iter = 30\n",
        "inline",
    )
    .unwrap();
    let sim = build_simulation(&cfg).unwrap();
    match run(&sim, initial_condition(&cfg), cfg.t_end_seconds, 0, |_, _| Ok(())) {
        Ok(art) => {
            println!("completed {} steps", art.final_state.step);
            for rep in art.reports.iter().rev().take(3) {
                for (ph, r) in &rep.records {
                    println!("step {} {} {} iter {}: res {:.3e} inc {:.3e}", rep.step, ph, r.stage, r.iter, r.res_norm, r.inc_norm);
                }
            }
        }
        Err(e) => println!("FAILED: {e}"),
    }
}
