use triflow::cli_support::{build_simulation, initial_condition};
use triflow::config::parse_config_str;
use triflow::driver::run;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg_text = &args[1];
    let cfg = parse_config_str(cfg_text, "inline").unwrap();
    let sim = build_simulation(&cfg).unwrap();
    let mut step = 0;
    match run(&sim, initial_condition(&cfg), cfg.t_end_seconds, 1, |sim, st| {
        let mut swr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sgr = (f64::INFINITY, f64::NEG_INFINITY);
        for el in 0..sim.mesh.n_elements() {
            for v in st.wetting.s.values_at(el, &sim.refel.vandermonde).iter() {
                swr.0 = swr.0.min(*v); swr.1 = swr.1.max(*v);
            }
            for v in st.light_oil.s.values_at(el, &sim.refel.vandermonde).iter() {
                sgr.0 = sgr.0.min(*v); sgr.1 = sgr.1.max(*v);
            }
        }
        if step % 5 == 0 || swr.0 < -0.05 || swr.1 > 1.05 {
            println!("step {:3} t={:6.1}d  s_w [{:+.3}, {:+.3}]  s_g [{:+.3}, {:+.3}]",
                st.step, sim.time_of(st.ticks)/86400.0, swr.0, swr.1, sgr.0, sgr.1);
        }
        step += 1;
        Ok(())
    }) {
        Ok(_) => println!("completed"),
        Err(e) => println!("FAILED: {e}"),
    }
}
