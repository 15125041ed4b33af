use triflow::cli_support::{build_simulation, initial_condition};
use triflow::config::parse_config_str;
use triflow::driver::run;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = parse_config_str(&args[1], "inline").unwrap();
    let sim = build_simulation(&cfg).unwrap();
    match run(&sim, initial_condition(&cfg), cfg.t_end_seconds, 10, |sim, st| {
        let mut max_v = f64::NEG_INFINITY;
        let mut max_el = 0;
        let mut min_v = f64::INFINITY;
        let mut min_el = 0;
        for el in 0..sim.mesh.n_elements() {
            for v in st.wetting.s.values_at(el, &sim.refel.vandermonde).iter() {
                if *v > max_v { max_v = *v; max_el = el; }
                if *v < min_v { min_v = *v; min_el = el; }
            }
        }
        let cmax = sim.mesh.centroid(max_el);
        let cmin = sim.mesh.centroid(min_el);
        let pmax = sim.mesh.element_perm[max_el];
        println!("t={:6.1}d s_w max {:+.3} at el {} ({:.0},{:.0}) perm {:?} | min {:+.3} at ({:.0},{:.0})",
            sim.time_of(st.ticks)/86400.0, max_v, max_el, cmax[0], cmax[1], pmax, min_v, cmin[0], cmin[1]);
        Ok(())
    }) {
        Ok(_) => println!("done"),
        Err(e) => println!("FAILED: {e}"),
    }
}
