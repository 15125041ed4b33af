// probe: full convergence study with rates
use triflow::verify::study::{convergence_study, StudyConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kmax: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let nmax: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(16);
    let mut cfg = StudyConfig::default();
    cfg.k_list = (1..=kmax).collect();
    cfg.n_list = (0..).map(|i| 8 << i).take_while(|&n| n <= nmax).collect();
    let t0 = std::time::Instant::now();
    let rep = convergence_study(&cfg).unwrap();
    for c in &rep.cases {
        println!(
            "k={} N={:2} dt={:.3e} s_w {:.3e} gsw {:.3e} s_g {:.3e} gsg {:.3e} p {:.3e} u {:.3e} ppw {:.3e} ppg {:.3e}",
            c.k, c.n, c.dt, c.err_s_w, c.err_grad_s_w, c.err_s_g, c.err_grad_s_g, c.err_p, c.err_u,
            c.err_pp_s_w.unwrap(), c.err_pp_s_g.unwrap()
        );
    }
    println!("--- rates (k, fine N): s_w gsw s_g gsg p u | pp_w pp_g");
    for (k, n, r, rpw, rpg) in rep.rates() {
        println!(
            "k={} N={:2}: {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} | {:.2} {:.2}",
            k, n, r[0], r[1], r[2], r[3], r[4], r[5],
            rpw.unwrap(), rpg.unwrap()
        );
    }
    println!("total {:.1?}", t0.elapsed());
}
