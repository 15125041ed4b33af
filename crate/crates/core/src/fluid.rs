//! Constitutive closures: phase mobilities, fractional flows, capillary
//! pressures, and their analytic derivatives.
//!
//! All quantities are SI internally (Pa, Pa.s); psi-based coefficients are
//! converted at evaluation. Saturation inputs are clamped to the physical
//! simplex before any closure is evaluated, and the reported derivatives are
//! the exact derivatives of the clamped-input expressions.

use crate::error::{Error, Result};
use crate::PA_PER_PSI;

/// Width of the clamping band guarding simplex boundaries.
pub const CLAMP_DELTA: f64 = 1e-8;

/// Relative floor applied to the total mobility in fractional flows.
pub const LAMBDA_T_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityModel {
    /// lam_w = s_w^2/mu_w, lam_g = s_g^2/mu_g,
    /// lam_o = (1-s_w)(1-s_g)(1-s_w-s_g)/mu_o.
    QuadraticChen,
    /// lam_w = s_w, lam_g = s_g, lam_o = 1 - s_w - s_g (unit viscosities).
    LinearManufactured,
    /// Generalized Brooks–Corey with oil-linearity weight a_g in [0, 1].
    BrooksCorey { a_g: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapillaryModel {
    /// p_cwo = s_w - 1, p_cgo = 1 - s_g.
    LinearManufactured,
    /// p_cwo = 5 eps (2-s_w)(1-s_w), p_cgo = eps (2-s_g)(1-s_g).
    Leverett { eps: f64 },
    /// Logarithmic closures with 6.3 / 3.9 psi prefactors.
    Logarithmic { eps: f64 },
}

/// Capillary-pressure pair selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapPhase {
    /// p_cwo(s_w)
    WettingOil,
    /// p_cgo(s_g)
    GasOil,
}

#[derive(Debug, Clone)]
pub struct FluidModel {
    pub mobility: MobilityModel,
    pub capillary: CapillaryModel,
    /// Viscosities in Pa.s.
    pub mu_w: f64,
    pub mu_o: f64,
    pub mu_g: f64,
    /// Residual saturations.
    pub s_wr: f64,
    pub s_or: f64,
}

impl FluidModel {
    pub fn new(
        mobility: MobilityModel,
        capillary: CapillaryModel,
        mu_w: f64,
        mu_o: f64,
        mu_g: f64,
        s_wr: f64,
        s_or: f64,
    ) -> Result<Self> {
        if !(mu_w > 0.0 && mu_o > 0.0 && mu_g > 0.0) {
            return Err(Error::config("viscosities must be positive"));
        }
        if let MobilityModel::BrooksCorey { a_g } = mobility {
            if !(0.0..=1.0).contains(&a_g) {
                return Err(Error::config(format!("a_g = {a_g} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&s_wr) || !(0.0..1.0).contains(&s_or) {
            return Err(Error::config("residual saturations must lie in [0, 1)"));
        }
        Ok(FluidModel {
            mobility,
            capillary,
            mu_w,
            mu_o,
            mu_g,
            s_wr,
            s_or,
        })
    }

    /// Linear closures as used by the manufactured verification case.
    pub fn manufactured() -> Self {
        FluidModel {
            mobility: MobilityModel::LinearManufactured,
            capillary: CapillaryModel::LinearManufactured,
            mu_w: 1.0,
            mu_o: 1.0,
            mu_g: 1.0,
            s_wr: 0.0,
            s_or: 0.0,
        }
    }

    /// Scale of the total mobility, used for the fractional-flow floor.
    pub fn lambda_t_scale(&self) -> f64 {
        match self.mobility {
            MobilityModel::LinearManufactured => 1.0,
            _ => 1.0 / self.mu_w.min(self.mu_o).min(self.mu_g),
        }
    }
}

/// Saturations clamped onto the physical simplex along with the 2x2 Jacobian
/// of the clamping map (the a.e. derivative of clamped values with respect to
/// raw inputs).
#[derive(Debug, Clone, Copy)]
pub struct ClampedSaturations {
    pub s_w: f64,
    pub s_g: f64,
    /// d(clamped s_w, s_g) / d(raw s_w, s_g), row-major.
    pub jac: [[f64; 2]; 2],
}

/// Clamp to [delta, 1-delta] per component, then project radially so that
/// s_w + s_g <= 1 - delta.
pub fn clamp_saturations(s_w: f64, s_g: f64) -> Result<ClampedSaturations> {
    if !s_w.is_finite() || !s_g.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite saturation input ({s_w}, {s_g})"
        )));
    }
    let d = CLAMP_DELTA;
    let clamp1 = |s: f64| -> (f64, f64) {
        if s < d {
            (d, 0.0)
        } else if s > 1.0 - d {
            (1.0 - d, 0.0)
        } else {
            (s, 1.0)
        }
    };
    let (cw, jw) = clamp1(s_w);
    let (cg, jg) = clamp1(s_g);
    let mut jac = [[jw, 0.0], [0.0, jg]];
    let (mut s_w, mut s_g) = (cw, cg);
    let total = s_w + s_g;
    if total > 1.0 - d {
        let scale = (1.0 - d) / total;
        // Jacobian of s~ = (1-d) s / (s_w + s_g), composed with the
        // interval-clamp factors.
        let jr = [
            [scale * cg / total, -scale * cw / total],
            [-scale * cg / total, scale * cw / total],
        ];
        s_w = scale * cw;
        s_g = scale * cg;
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = jr[r][0] * jac[0][c] + jr[r][1] * jac[1][c];
            }
        }
        jac = out;
    }
    Ok(ClampedSaturations { s_w, s_g, jac })
}

/// Phase mobilities and total mobility with partial derivatives with respect
/// to the raw (unclamped) saturations.
#[derive(Debug, Clone, Copy)]
pub struct MobilityEval {
    pub lam_w: f64,
    pub lam_g: f64,
    pub lam_o: f64,
    pub lam_t: f64,
    /// Gradients [d/ds_w, d/ds_g].
    pub d_lam_w: [f64; 2],
    pub d_lam_g: [f64; 2],
    pub d_lam_o: [f64; 2],
    pub d_lam_t: [f64; 2],
}

impl FluidModel {
    pub fn mobilities(&self, s_w: f64, s_g: f64) -> Result<MobilityEval> {
        let c = clamp_saturations(s_w, s_g)?;
        let (sw, sg) = (c.s_w, c.s_g);
        // Derivatives with respect to the clamped saturations first.
        let (lw, lg, lo, dw, dg, doil): (f64, f64, f64, [f64; 2], [f64; 2], [f64; 2]) =
            match self.mobility {
                MobilityModel::QuadraticChen => {
                    let lw = sw * sw / self.mu_w;
                    let lg = sg * sg / self.mu_g;
                    let lo = (1.0 - sw) * (1.0 - sg) * (1.0 - sw - sg) / self.mu_o;
                    let dlo_dw = -(1.0 - sg) * ((1.0 - sw - sg) + (1.0 - sw)) / self.mu_o;
                    let dlo_dg = -(1.0 - sw) * ((1.0 - sw - sg) + (1.0 - sg)) / self.mu_o;
                    (
                        lw,
                        lg,
                        lo,
                        [2.0 * sw / self.mu_w, 0.0],
                        [0.0, 2.0 * sg / self.mu_g],
                        [dlo_dw, dlo_dg],
                    )
                }
                MobilityModel::LinearManufactured => (
                    sw,
                    sg,
                    1.0 - sw - sg,
                    [1.0, 0.0],
                    [0.0, 1.0],
                    [-1.0, -1.0],
                ),
                MobilityModel::BrooksCorey { a_g } => {
                    let so = 1.0 - sw - sg;
                    let lw = sw * sw / self.mu_w;
                    let lg = sg * sg / self.mu_g;
                    let lo = ((1.0 - a_g) * so * so + a_g * so) / self.mu_o;
                    let dlo = (-2.0 * (1.0 - a_g) * so - a_g) / self.mu_o;
                    (
                        lw,
                        lg,
                        lo,
                        [2.0 * sw / self.mu_w, 0.0],
                        [0.0, 2.0 * sg / self.mu_g],
                        [dlo, dlo],
                    )
                }
            };
        // Chain through the clamping map.
        let chain = |g: [f64; 2]| {
            [
                g[0] * c.jac[0][0] + g[1] * c.jac[1][0],
                g[0] * c.jac[0][1] + g[1] * c.jac[1][1],
            ]
        };
        let d_lam_w = chain(dw);
        let d_lam_g = chain(dg);
        let d_lam_o = chain(doil);
        let d_lam_t = [
            d_lam_w[0] + d_lam_g[0] + d_lam_o[0],
            d_lam_w[1] + d_lam_g[1] + d_lam_o[1],
        ];
        Ok(MobilityEval {
            lam_w: lw,
            lam_g: lg,
            lam_o: lo,
            lam_t: lw + lg + lo,
            d_lam_w,
            d_lam_g,
            d_lam_o,
            d_lam_t,
        })
    }
}

/// Capillary pressure with first and second derivatives with respect to the
/// raw saturation input.
#[derive(Debug, Clone, Copy)]
pub struct CapillaryEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl FluidModel {
    pub fn capillary(&self, phase: CapPhase, s: f64) -> Result<CapillaryEval> {
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite saturation input {s}")));
        }
        let d = CLAMP_DELTA;
        let (sc, jc) = if s < d {
            (d, 0.0)
        } else if s > 1.0 - d {
            (1.0 - d, 0.0)
        } else {
            (s, 1.0)
        };
        let (v, d1, d2) = match (self.capillary, phase) {
            (CapillaryModel::LinearManufactured, CapPhase::WettingOil) => (sc - 1.0, 1.0, 0.0),
            (CapillaryModel::LinearManufactured, CapPhase::GasOil) => (1.0 - sc, -1.0, 0.0),
            (CapillaryModel::Leverett { eps }, CapPhase::WettingOil) => (
                5.0 * eps * (2.0 - sc) * (1.0 - sc),
                5.0 * eps * (2.0 * sc - 3.0),
                10.0 * eps,
            ),
            (CapillaryModel::Leverett { eps }, CapPhase::GasOil) => (
                eps * (2.0 - sc) * (1.0 - sc),
                eps * (2.0 * sc - 3.0),
                2.0 * eps,
            ),
            (CapillaryModel::Logarithmic { eps }, CapPhase::WettingOil) => {
                let denom = (eps / (1.0 - self.s_wr)).ln();
                let a = 6.3 * PA_PER_PSI / denom;
                let arg = sc - self.s_wr + eps;
                if arg <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "logarithmic p_cwo evaluated at or beyond its singularity (s = {sc})"
                    )));
                }
                (
                    a * (arg / (1.0 - self.s_wr)).ln(),
                    a / arg,
                    -a / (arg * arg),
                )
            }
            (CapillaryModel::Logarithmic { eps }, CapPhase::GasOil) => {
                let denom = (eps / (1.0 - self.s_wr - self.s_or)).ln();
                let a = 3.9 * PA_PER_PSI / denom;
                let u = 1.0 - sc - self.s_or - self.s_wr + eps;
                if u <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "logarithmic p_cgo evaluated at or beyond its singularity (s = {sc})"
                    )));
                }
                (
                    a * (u / (1.0 - self.s_or - self.s_wr)).ln(),
                    -a / u,
                    -a / (u * u),
                )
            }
        };
        Ok(CapillaryEval {
            value: v,
            d1: d1 * jc,
            d2: d2 * jc * jc,
        })
    }
}

/// Fractional flows with gradients [d/ds_w, d/ds_g].
#[derive(Debug, Clone, Copy)]
pub struct FractionalFlow {
    pub f_w: f64,
    pub f_g: f64,
    pub d_f_w: [f64; 2],
    pub d_f_g: [f64; 2],
}

impl FluidModel {
    pub fn fractional_flow(&self, s_w: f64, s_g: f64) -> Result<FractionalFlow> {
        let m = self.mobilities(s_w, s_g)?;
        let floor = LAMBDA_T_FLOOR_REL * self.lambda_t_scale();
        if m.lam_t <= floor {
            return Err(Error::Numerical(format!(
                "total mobility {:.3e} at or below its floor {:.3e}",
                m.lam_t, floor
            )));
        }
        let f_w = m.lam_w / m.lam_t;
        let f_g = m.lam_g / m.lam_t;
        let lt2 = m.lam_t * m.lam_t;
        let d_f_w = [
            (m.d_lam_w[0] * m.lam_t - m.lam_w * m.d_lam_t[0]) / lt2,
            (m.d_lam_w[1] * m.lam_t - m.lam_w * m.d_lam_t[1]) / lt2,
        ];
        let d_f_g = [
            (m.d_lam_g[0] * m.lam_t - m.lam_g * m.d_lam_t[0]) / lt2,
            (m.d_lam_g[1] * m.lam_t - m.lam_g * m.d_lam_t[1]) / lt2,
        ];
        Ok(FractionalFlow {
            f_w,
            f_g,
            d_f_w,
            d_f_g,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chen(mu_w: f64, mu_o: f64, mu_g: f64) -> FluidModel {
        FluidModel::new(
            MobilityModel::QuadraticChen,
            CapillaryModel::Logarithmic { eps: 0.01 },
            mu_w,
            mu_o,
            mu_g,
            0.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_chen_oil_mobility_example() {
        let m = chen(5e-4, 1e-3, 3e-4);
        let e = m.mobilities(0.3, 0.54).unwrap();
        // 0.7 * 0.46 * 0.16 / 1e-3
        assert!((e.lam_o - 51.52).abs() < 1e-10 * 51.52, "{}", e.lam_o);
    }

    #[test]
    fn linear_total_mobility_is_one() {
        let m = FluidModel::manufactured();
        for (sw, sg) in [(0.1, 0.2), (0.5, 0.3), (0.02, 0.9)] {
            let e = m.mobilities(sw, sg).unwrap();
            assert!((e.lam_t - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn brooks_corey_limits() {
        // a_g = 0 reduces to a quadratic oil mobility, a_g = 1 to linear.
        let mk = |a_g| {
            FluidModel::new(
                MobilityModel::BrooksCorey { a_g },
                CapillaryModel::Leverett { eps: 1e-3 },
                5e-4,
                1e-3,
                3e-4,
                0.0,
                0.0,
            )
            .unwrap()
        };
        let m0 = mk(0.0);
        let m1 = mk(1.0);
        let mut state = 0.123_f64;
        for _ in 0..20 {
            state = (state * 997.0).fract();
            let sw = 0.05 + 0.6 * state;
            state = (state * 997.0).fract();
            let sg = 0.05 + 0.8 * (1.0 - sw) * state;
            let so = 1.0 - sw - sg;
            let e0 = m0.mobilities(sw, sg).unwrap();
            let e1 = m1.mobilities(sw, sg).unwrap();
            assert!((e0.lam_o - so * so / 1e-3).abs() < 1e-12 * (1.0 + e0.lam_o.abs()));
            assert!((e1.lam_o - so / 1e-3).abs() < 1e-12 * (1.0 + e1.lam_o.abs()));
        }
    }

    #[test]
    fn log_capillary_at_residual_saturation() {
        let m = FluidModel::new(
            MobilityModel::QuadraticChen,
            CapillaryModel::Logarithmic { eps: 0.01 },
            1e-3,
            1e-3,
            1e-3,
            0.1,
            0.05,
        )
        .unwrap();
        let c = m.capillary(CapPhase::WettingOil, 0.1).unwrap();
        // ratio of identical logarithms: 6.3 psi exactly
        assert!((c.value - 43436.9691).abs() < 1e-3, "{}", c.value);
    }

    #[test]
    fn leverett_pcgo_vanishes_at_unit_saturation() {
        let m = FluidModel::new(
            MobilityModel::QuadraticChen,
            CapillaryModel::Leverett { eps: 1e-3 },
            1e-3,
            1e-3,
            1e-3,
            0.0,
            0.0,
        )
        .unwrap();
        let c = m.capillary(CapPhase::GasOil, 1.0).unwrap();
        assert!(c.value.abs() < 1e-10);
    }

    #[test]
    fn linear_capillary_derivative_is_one() {
        let m = FluidModel::manufactured();
        for s in [0.1, 0.4, 0.9] {
            let c = m.capillary(CapPhase::WettingOil, s).unwrap();
            assert!((c.value - (s - 1.0)).abs() < 1e-15);
            assert_eq!(c.d1, 1.0);
        }
    }

    #[test]
    fn log_capillary_base_invariance() {
        // ln-based evaluation equals an independently coded log10 version.
        let m = FluidModel::new(
            MobilityModel::QuadraticChen,
            CapillaryModel::Logarithmic { eps: 0.01 },
            1e-3,
            1e-3,
            1e-3,
            0.05,
            0.02,
        )
        .unwrap();
        for s in [0.1, 0.3, 0.6, 0.9] {
            let c = m.capillary(CapPhase::WettingOil, s).unwrap();
            let a10 = 6.3 * PA_PER_PSI / (0.01f64 / (1.0 - 0.05)).log10();
            let v10 = a10 * ((s - 0.05 + 0.01) / (1.0 - 0.05)).log10();
            assert!(
                (c.value - v10).abs() <= 1e-14 * (1.0 + c.value.abs()),
                "s={s}: {} vs {}",
                c.value,
                v10
            );
        }
    }

    #[test]
    fn fractional_flow_corners_and_symmetry() {
        let m = chen(1e-3, 1e-3, 1e-3);
        let f = m.fractional_flow(1.0, 0.0).unwrap();
        // s_w is clamped to 1 - delta; the wetting phase still dominates.
        assert!((f.f_w - 1.0).abs() < 1e-6);
        assert!(f.f_g.abs() < 1e-15);
        // symmetric point with equal viscosities
        let f = m.fractional_flow(0.3, 0.3).unwrap();
        assert!((f.f_w - f.f_g).abs() < 1e-14);
    }

    #[test]
    fn mobilities_nonnegative_on_simplex() {
        for model in [
            MobilityModel::QuadraticChen,
            MobilityModel::LinearManufactured,
            MobilityModel::BrooksCorey { a_g: 0.37 },
        ] {
            let m = FluidModel::new(
                model,
                CapillaryModel::Leverett { eps: 1e-3 },
                5e-4,
                1e-3,
                3e-4,
                0.0,
                0.0,
            )
            .unwrap();
            let mut u = 0.37_f64;
            for _ in 0..200 {
                u = (u * 97.31).fract();
                let sw = u;
                u = (u * 97.31).fract();
                let sg = (1.0 - sw) * u;
                let e = m.mobilities(sw, sg).unwrap();
                assert!(e.lam_w >= 0.0 && e.lam_g >= 0.0 && e.lam_o >= -1e-15);
                assert!(e.lam_t > 0.0);
            }
        }
    }

    #[test]
    fn non_finite_input_is_error() {
        let m = FluidModel::manufactured();
        assert!(m.mobilities(f64::NAN, 0.2).is_err());
        assert!(m.capillary(CapPhase::GasOil, f64::INFINITY).is_err());
    }

    /// Central finite differences vs analytic derivatives for every family at
    /// simplex-interior points.
    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        let models: Vec<FluidModel> = vec![
            FluidModel::manufactured(),
            FluidModel::new(
                MobilityModel::QuadraticChen,
                CapillaryModel::Logarithmic { eps: 0.01 },
                5e-4,
                1e-3,
                3e-4,
                0.05,
                0.03,
            )
            .unwrap(),
            FluidModel::new(
                MobilityModel::BrooksCorey { a_g: 0.42 },
                CapillaryModel::Leverett { eps: 1e-3 },
                5e-4,
                1e-3,
                3e-4,
                0.0,
                0.0,
            )
            .unwrap(),
        ];
        let mut u = 0.918_f64;
        for m in &models {
            for _ in 0..100 {
                u = (u * 913.77).fract();
                let sw = 0.1 + 0.6 * u;
                u = (u * 913.77).fract();
                let sg = 0.05 + 0.8 * (0.95 - sw) * u;

                let e = m.mobilities(sw, sg).unwrap();
                for (i, (dsw, dsg)) in [(h, 0.0), (0.0, h)].iter().enumerate() {
                    let ep = m.mobilities(sw + dsw, sg + dsg).unwrap();
                    let em = m.mobilities(sw - dsw, sg - dsg).unwrap();
                    for (an, fp, fm) in [
                        (e.d_lam_w[i], ep.lam_w, em.lam_w),
                        (e.d_lam_g[i], ep.lam_g, em.lam_g),
                        (e.d_lam_o[i], ep.lam_o, em.lam_o),
                        (e.d_lam_t[i], ep.lam_t, em.lam_t),
                    ] {
                        let fd = (fp - fm) / (2.0 * h);
                        let scale = 1.0 + an.abs().max(fd.abs());
                        assert!(
                            (fd - an).abs() <= 1e-6 * scale,
                            "mobility d[{i}] at ({sw},{sg}): fd={fd} an={an}"
                        );
                    }
                }

                let f = m.fractional_flow(sw, sg).unwrap();
                for (i, (dsw, dsg)) in [(h, 0.0), (0.0, h)].iter().enumerate() {
                    let fp = m.fractional_flow(sw + dsw, sg + dsg).unwrap();
                    let fm = m.fractional_flow(sw - dsw, sg - dsg).unwrap();
                    let fdw = (fp.f_w - fm.f_w) / (2.0 * h);
                    let fdg = (fp.f_g - fm.f_g) / (2.0 * h);
                    assert!((fdw - f.d_f_w[i]).abs() <= 1e-6 * (1.0 + fdw.abs()));
                    assert!((fdg - f.d_f_g[i]).abs() <= 1e-6 * (1.0 + fdg.abs()));
                }

                for phase in [CapPhase::WettingOil, CapPhase::GasOil] {
                    let s = if phase == CapPhase::WettingOil { sw } else { sg };
                    let c = m.capillary(phase, s).unwrap();
                    let cp = m.capillary(phase, s + h).unwrap();
                    let cm = m.capillary(phase, s - h).unwrap();
                    let fd1 = (cp.value - cm.value) / (2.0 * h);
                    let fd2 = (cp.d1 - cm.d1) / (2.0 * h);
                    assert!(
                        (fd1 - c.d1).abs() <= 1e-6 * (1.0 + fd1.abs().max(c.d1.abs())),
                        "capillary {phase:?} d1"
                    );
                    assert!(
                        (fd2 - c.d2).abs() <= 1e-5 * (1.0 + fd2.abs().max(c.d2.abs())),
                        "capillary {phase:?} d2"
                    );
                }
            }
        }
    }

    #[test]
    fn clamp_jacobian_matches_fd_in_projection_region() {
        // A point driven outside the simplex exercises the radial branch.
        let (sw, sg) = (0.7, 0.6);
        let c = clamp_saturations(sw, sg).unwrap();
        assert!(c.s_w + c.s_g <= 1.0 - CLAMP_DELTA + 1e-15);
        let h = 1e-7;
        for (col, (dw, dg)) in [(h, 0.0), (0.0, h)].iter().enumerate() {
            let p = clamp_saturations(sw + dw, sg + dg).unwrap();
            let m = clamp_saturations(sw - dw, sg - dg).unwrap();
            let fd_w = (p.s_w - m.s_w) / (2.0 * h);
            let fd_g = (p.s_g - m.s_g) / (2.0 * h);
            assert!((fd_w - c.jac[0][col]).abs() < 1e-6);
            assert!((fd_g - c.jac[1][col]).abs() < 1e-6);
        }
    }
}
