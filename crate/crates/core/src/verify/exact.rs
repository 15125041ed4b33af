//! Manufactured exact solution on the unit square and the closed-form source
//! terms it induces in the pressure and saturation equations.
//!
//! The closures are the linear family (lam_w = s_w, lam_g = s_g,
//! lam_o = 1 - s_w - s_g, p_cwo = s_w - 1, p_cgo = 1 - s_g), so lam_t = 1
//! identically. Sources were differentiated by hand once and are pinned by
//! finite-difference oracles in the tests.

/// Homogeneous permeability of the manufactured case.
pub const PERM: f64 = 1e-4;
/// Porosity of the manufactured case.
pub const PORO: f64 = 0.2;

const C: f64 = std::f64::consts::PI / 8.0;

/// All exact fields and the derivatives the solvers and sources need,
/// evaluated at one space-time point.
#[derive(Debug, Clone, Copy)]
pub struct ExactPoint {
    pub p_o: f64,
    pub grad_p: [f64; 2],
    pub lap_p: f64,
    pub s_w: f64,
    pub grad_s_w: [f64; 2],
    pub lap_s_w: f64,
    pub ds_w_dt: f64,
    pub s_g: f64,
    pub grad_s_g: [f64; 2],
    pub lap_s_g: f64,
    pub u_t: [f64; 2],
}

pub fn exact(x: f64, y: f64, t: f64) -> ExactPoint {
    let psi = C * (x + y + t);
    let (sin_p, cos_p) = psi.sin_cos();

    let p_o = cos_p;
    let grad_p = [-C * sin_p, -C * sin_p];
    let lap_p = -2.0 * C * C * cos_p;

    let s_w = 0.125 * (1.0 - sin_p);
    let gsw = -0.125 * C * cos_p;
    let grad_s_w = [gsw, gsw];
    let lap_s_w = 0.25 * C * C * sin_p;
    let ds_w_dt = -0.125 * C * cos_p;

    // s_g = 0.125 (1 + mu(x) nu(y) e^{-x^2-y^2}), time independent
    let mu = x - x * x;
    let dmu = 1.0 - 2.0 * x;
    let nu = y - y * y;
    let dnu = 1.0 - 2.0 * y;
    let e = (-x * x - y * y).exp();
    let g = mu * nu * e;
    let g_x = nu * e * (dmu - 2.0 * x * mu);
    let g_y = mu * e * (dnu - 2.0 * y * nu);
    // d/dx [e (mu' - 2 x mu)] = e [-2x(mu' - 2x mu) + mu'' - 2 mu - 2 x mu']
    let g_xx = nu * e * (-2.0 - 2.0 * mu - 4.0 * x * dmu + 4.0 * x * x * mu);
    let g_yy = mu * e * (-2.0 - 2.0 * nu - 4.0 * y * dnu + 4.0 * y * y * nu);

    let s_g = 0.125 * (1.0 + g);
    let grad_s_g = [0.125 * g_x, 0.125 * g_y];
    let lap_s_g = 0.125 * (g_xx + g_yy);

    // u_t = -K (grad p + s_w grad s_w - s_g grad s_g)
    let u_t = [
        -PERM * (grad_p[0] + s_w * grad_s_w[0] - s_g * grad_s_g[0]),
        -PERM * (grad_p[1] + s_w * grad_s_w[1] - s_g * grad_s_g[1]),
    ];

    ExactPoint {
        p_o,
        grad_p,
        lap_p,
        s_w,
        grad_s_w,
        lap_s_w,
        ds_w_dt,
        s_g,
        grad_s_g,
        lap_s_g,
        u_t,
    }
}

/// Source of the incompressibility equation: g_p = div u_t.
pub fn source_pressure(x: f64, y: f64, t: f64) -> f64 {
    let e = exact(x, y, t);
    let gsw2 = e.grad_s_w[0] * e.grad_s_w[0] + e.grad_s_w[1] * e.grad_s_w[1];
    let gsg2 = e.grad_s_g[0] * e.grad_s_g[0] + e.grad_s_g[1] * e.grad_s_g[1];
    -PERM * (e.lap_p + gsw2 + e.s_w * e.lap_s_w - gsg2 - e.s_g * e.lap_s_g)
}

/// Source of the wetting saturation equation:
/// g_w = phi d_t s_w + div(F_c + F_v) at the exact solution.
pub fn source_wetting(x: f64, y: f64, t: f64) -> f64 {
    let e = exact(x, y, t);
    let g_p = source_pressure(x, y, t);
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    // F_v = -K [ s_w s_g grad s_g + s_w (1 - s_w) grad s_w ]
    let grad_swsg = [
        e.s_g * e.grad_s_w[0] + e.s_w * e.grad_s_g[0],
        e.s_g * e.grad_s_w[1] + e.s_w * e.grad_s_g[1],
    ];
    let div_fv = -PERM
        * (dot(grad_swsg, e.grad_s_g)
            + e.s_w * e.s_g * e.lap_s_g
            + (1.0 - 2.0 * e.s_w) * dot(e.grad_s_w, e.grad_s_w)
            + e.s_w * (1.0 - e.s_w) * e.lap_s_w);
    PORO * e.ds_w_dt + dot(e.grad_s_w, e.u_t) + e.s_w * g_p + div_fv
}

/// Source of the light-oil saturation equation. The own-phase capillary
/// derivative enters the discretized diffusive flux as a magnitude
/// (|p_cgo'| = 1 here), so the source matches that sign-folded form.
pub fn source_light_oil(x: f64, y: f64, t: f64) -> f64 {
    let e = exact(x, y, t);
    let g_p = source_pressure(x, y, t);
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    // F_v = K [ s_w s_g grad s_w - s_g (1 - s_g) grad s_g ]
    let grad_swsg = [
        e.s_g * e.grad_s_w[0] + e.s_w * e.grad_s_g[0],
        e.s_g * e.grad_s_w[1] + e.s_w * e.grad_s_g[1],
    ];
    let div_fv = PERM
        * (dot(grad_swsg, e.grad_s_w) + e.s_w * e.s_g * e.lap_s_w
            - (1.0 - 2.0 * e.s_g) * dot(e.grad_s_g, e.grad_s_g)
            - e.s_g * (1.0 - e.s_g) * e.lap_s_g);
    // s_g is time independent
    dot(e.grad_s_g, e.u_t) + e.s_g * g_p + div_fv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points(n: usize) -> Vec<(f64, f64, f64)> {
        let mut u = 0.6180339887_f64;
        (0..n)
            .map(|_| {
                u = (u * 147.33).fract();
                let x = 0.05 + 0.9 * u;
                u = (u * 147.33).fract();
                let y = 0.05 + 0.9 * u;
                u = (u * 147.33).fract();
                let t = 0.5 * u;
                (x, y, t)
            })
            .collect()
    }

    #[test]
    fn values_at_origin() {
        let e = exact(0.0, 0.0, 0.0);
        assert_eq!(e.p_o, 1.0);
        assert_eq!(e.s_w, 0.125);
        assert_eq!(e.s_g, 0.125);
    }

    #[test]
    fn s_g_at_center_time_independent() {
        for t in [0.0, 0.2, 0.5] {
            let e = exact(0.5, 0.5, t);
            let expect = 0.125 * (1.0 + 0.0625 * (-0.5_f64).exp());
            assert!((e.s_g - expect).abs() < 1e-15);
            assert!((e.s_g - 0.129_738_5).abs() < 1e-6);
        }
    }

    #[test]
    fn saturation_bounds_on_dense_sample() {
        // 0 < s_w, s_g and s_w + s_g < 1 on the unit square x [0, 0.5]
        for i in 0..100 {
            for j in 0..100 {
                let (x, y) = (i as f64 / 99.0, j as f64 / 99.0);
                for t in [0.0, 0.25, 0.5] {
                    let e = exact(x, y, t);
                    assert!(e.s_w > 0.0 && e.s_w <= 0.25);
                    assert!(e.s_g > 0.0);
                    assert!(e.s_w + e.s_g < 1.0);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for (x, y, t) in sample_points(30) {
            let e = exact(x, y, t);
            let fdx = (exact(x + h, y, t).p_o - exact(x - h, y, t).p_o) / (2.0 * h);
            assert!((fdx - e.grad_p[0]).abs() < 1e-8);
            let fdy = (exact(x, y + h, t).s_w - exact(x, y - h, t).s_w) / (2.0 * h);
            assert!((fdy - e.grad_s_w[1]).abs() < 1e-8);
            let fgx = (exact(x + h, y, t).s_g - exact(x - h, y, t).s_g) / (2.0 * h);
            assert!((fgx - e.grad_s_g[0]).abs() < 1e-8);
            let ft = (exact(x, y, t + h).s_w - exact(x, y, t - h).s_w) / (2.0 * h);
            assert!((ft - e.ds_w_dt).abs() < 1e-8);
            let lap_fd = (exact(x + h, y, t).s_g + exact(x - h, y, t).s_g
                + exact(x, y + h, t).s_g
                + exact(x, y - h, t).s_g
                - 4.0 * e.s_g)
                / (h * h);
            assert!((lap_fd - e.lap_s_g).abs() < 1e-4, "{lap_fd} vs {}", e.lap_s_g);
        }
    }

    #[test]
    fn pressure_source_matches_fd_divergence_of_u() {
        let h = 1e-5;
        for (x, y, t) in sample_points(50) {
            let div_fd = (exact(x + h, y, t).u_t[0] - exact(x - h, y, t).u_t[0]) / (2.0 * h)
                + (exact(x, y + h, t).u_t[1] - exact(x, y - h, t).u_t[1]) / (2.0 * h);
            let g = source_pressure(x, y, t);
            assert!((div_fd - g).abs() < 1e-7, "({x},{y},{t}): {div_fd} vs {g}");
        }
    }

    fn flux_wetting(x: f64, y: f64, t: f64) -> [f64; 2] {
        let e = exact(x, y, t);
        [
            e.s_w * e.u_t[0]
                - PERM * (e.s_w * e.s_g * e.grad_s_g[0] + e.s_w * (1.0 - e.s_w) * e.grad_s_w[0]),
            e.s_w * e.u_t[1]
                - PERM * (e.s_w * e.s_g * e.grad_s_g[1] + e.s_w * (1.0 - e.s_w) * e.grad_s_w[1]),
        ]
    }

    fn flux_light_oil(x: f64, y: f64, t: f64) -> [f64; 2] {
        let e = exact(x, y, t);
        [
            e.s_g * e.u_t[0]
                + PERM * (e.s_w * e.s_g * e.grad_s_w[0] - e.s_g * (1.0 - e.s_g) * e.grad_s_g[0]),
            e.s_g * e.u_t[1]
                + PERM * (e.s_w * e.s_g * e.grad_s_w[1] - e.s_g * (1.0 - e.s_g) * e.grad_s_g[1]),
        ]
    }

    #[test]
    fn saturation_sources_match_fd_residuals() {
        let h = 1e-5;
        for (x, y, t) in sample_points(50) {
            let dsw_dt = (exact(x, y, t + h).s_w - exact(x, y, t - h).s_w) / (2.0 * h);
            let div_w = (flux_wetting(x + h, y, t)[0] - flux_wetting(x - h, y, t)[0]) / (2.0 * h)
                + (flux_wetting(x, y + h, t)[1] - flux_wetting(x, y - h, t)[1]) / (2.0 * h);
            let gw = source_wetting(x, y, t);
            assert!(
                (PORO * dsw_dt + div_w - gw).abs() < 1e-7,
                "wetting source at ({x},{y},{t})"
            );

            let div_g =
                (flux_light_oil(x + h, y, t)[0] - flux_light_oil(x - h, y, t)[0]) / (2.0 * h)
                    + (flux_light_oil(x, y + h, t)[1] - flux_light_oil(x, y - h, t)[1]) / (2.0 * h);
            let gg = source_light_oil(x, y, t);
            assert!((div_g - gg).abs() < 1e-7, "light-oil source at ({x},{y},{t})");
        }
    }

    #[test]
    fn light_oil_source_time_dependence_only_through_coupling() {
        // s_g itself is steady; g_g varies in t only through u_t and s_w.
        let (x, y) = (0.3, 0.7);
        let e1 = exact(x, y, 0.1);
        let e2 = exact(x, y, 0.4);
        assert_eq!(e1.s_g, e2.s_g);
        assert_eq!(e1.grad_s_g, e2.grad_s_g);
    }
}
