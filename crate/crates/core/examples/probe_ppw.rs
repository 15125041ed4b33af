use triflow::verify::study::{manufactured_case, StudyConfig};
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args[1].parse().unwrap();
    let n: usize = args[2].parse().unwrap();
    let theta: f64 = args[3].parse().unwrap();
    let mut cfg = StudyConfig::default();
    cfg.theta = theta;
    for dt in args[4..].iter().map(|s| s.parse::<f64>().unwrap()) {
        let c = manufactured_case(&cfg, k, n, dt).unwrap();
        println!(
            "k={} N={} th={} steps={:4} ppw {:.4e} ppg {:.4e} gsw {:.4e} s_w {:.4e}",
            k, n, theta, (0.5_f64 / dt).round() as usize,
            c.err_pp_s_w.unwrap(), c.err_pp_s_g.unwrap(), c.err_grad_s_w, c.err_s_w
        );
    }
}
