use triflow::verify::study::{manufactured_case, StudyConfig};
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args[1].parse().unwrap();
    let n: usize = args[2].parse().unwrap();
    let theta: f64 = args[3].parse().unwrap();
    let mut cfg = StudyConfig::default();
    cfg.theta = theta;
    cfg.postprocess = false;
    for dt in args[4..].iter().map(|s| s.parse::<f64>().unwrap()) {
        let c = manufactured_case(&cfg, k, n, dt).unwrap();
        println!(
            "k={} N={} th={} dt={:.3e} steps={} gsw {:.3e} gsg {:.3e} s_g {:.3e}",
            k, n, theta, dt, (0.5 / dt).round() as usize, c.err_grad_s_w, c.err_grad_s_g, c.err_s_g
        );
    }
}
