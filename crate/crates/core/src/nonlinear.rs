//! Nonlinear solution kernels: Newton–Raphson converged on per-block
//! increment infinity norms, and Anderson-accelerated Picard iteration used
//! to seed the first time step.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;
use std::ops::Range;

#[derive(Debug, Clone, Copy)]
pub struct NonlinearConfig {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub anderson_depth: usize,
    pub anderson_max_iter: usize,
    pub anderson_tol: f64,
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Residual must also drop below this fraction of the initial residual
    /// (guard against false convergence on increments alone).
    pub residual_guard: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            anderson_depth: 5,
            anderson_max_iter: 30,
            anderson_tol: 1e-6,
            backtracking: true,
            max_halvings: 8,
            residual_guard: 1e-9,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.anderson_tol > 0.0 && self.residual_guard > 0.0) {
            return Err(Error::config("nonlinear tolerances must be positive"));
        }
        if self.newton_max_iter < 1 || self.anderson_max_iter < 1 {
            return Err(Error::config("iteration caps must be at least 1"));
        }
        Ok(())
    }
}

/// What a nonlinear system must provide to the Newton kernel.
pub trait NewtonSystem {
    /// Residual at `x`.
    fn residual(&mut self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// Solve `J(x) delta = -residual(x)` for the Newton increment.
    fn newton_step(&mut self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// One lagged-coefficient (Picard) update `x -> g(x)`.
    fn picard_map(&mut self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// Unknown blocks whose increment infinity norms are checked separately.
    fn blocks(&self) -> Vec<Range<usize>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Picard,
    Newton,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Picard => write!(f, "picard"),
            Stage::Newton => write!(f, "newton"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iter: usize,
    pub res_norm: f64,
    pub inc_norm: f64,
}

#[derive(Debug)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub final_residual: f64,
    pub final_increment: f64,
}

fn block_inf_norm(v: &DVector<f64>, blocks: &[Range<usize>]) -> f64 {
    blocks
        .iter()
        .map(|r| {
            v.rows(r.start, r.end - r.start)
                .iter()
                .fold(0.0f64, |m, &x| m.max(x.abs()))
        })
        .fold(0.0, f64::max)
}

fn blocks_below(v: &DVector<f64>, blocks: &[Range<usize>], tol: f64) -> bool {
    blocks.iter().all(|r| {
        v.rows(r.start, r.end - r.start)
            .iter()
            .all(|&x| x.abs() <= tol)
    })
}

/// Newton iteration with optional residual backtracking. Convergence requires
/// the increment infinity norm of every block at or below `newton_tol` and
/// the residual below `residual_guard` times the reference residual (the
/// initial residual unless the caller passes the residual of an earlier
/// stage, e.g. before a Picard warm start).
pub fn newton<S: NewtonSystem>(
    sys: &mut S,
    x0: DVector<f64>,
    cfg: &NonlinearConfig,
    reference_residual: Option<f64>,
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let blocks = sys.blocks();
    let mut x = x0;
    let mut r = sys.residual(&x)?;
    let mut res = r.norm();
    let res0 = match reference_residual {
        Some(r0) if r0 > 0.0 => r0.max(res),
        _ => res,
    };
    let mut trace = Vec::new();
    if res == 0.0 {
        return Ok(NewtonOutcome {
            x,
            converged: true,
            iterations: 0,
            trace,
            final_residual: 0.0,
            final_increment: 0.0,
        });
    }
    let mut last_inc = f64::INFINITY;
    for iter in 1..=cfg.newton_max_iter {
        let delta = sys.newton_step(&x)?;
        let mut alpha = 1.0;
        let mut x_trial = &x + &delta;
        let mut r_trial = sys.residual(&x_trial)?;
        if cfg.backtracking {
            let mut halvings = 0;
            while r_trial.norm() > res && halvings < cfg.max_halvings {
                alpha *= 0.5;
                halvings += 1;
                x_trial = &x + &(alpha * &delta);
                r_trial = sys.residual(&x_trial)?;
            }
        }
        let accepted = alpha * &delta;
        x = x_trial;
        r = r_trial;
        res = r.norm();
        last_inc = block_inf_norm(&accepted, &blocks);
        if std::env::var_os("TRIFLOW_NEWTON_DEBUG").is_some() {
            let per_block: Vec<String> = blocks
                .iter()
                .map(|b| {
                    format!(
                        "{:.2e}",
                        accepted
                            .rows(b.start, b.end - b.start)
                            .iter()
                            .fold(0.0f64, |m, &v| m.max(v.abs()))
                    )
                })
                .collect();
            eprintln!(
                "    newton iter {iter}: res {res:.3e} alpha {alpha} inc per block [{}]",
                per_block.join(", ")
            );
        }
        trace.push(IterationRecord {
            stage: Stage::Newton,
            iter,
            res_norm: res,
            inc_norm: last_inc,
        });
        if blocks_below(&accepted, &blocks, cfg.newton_tol) && res <= cfg.residual_guard * res0 {
            return Ok(NewtonOutcome {
                x,
                converged: true,
                iterations: iter,
                trace,
                final_residual: res,
                final_increment: last_inc,
            });
        }
    }
    Ok(NewtonOutcome {
        x,
        converged: false,
        iterations: cfg.newton_max_iter,
        trace,
        final_residual: res,
        final_increment: last_inc,
    })
}

#[derive(Debug)]
pub struct PicardOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub best_residual: f64,
    pub trace: Vec<IterationRecord>,
}

/// Anderson-accelerated Picard iteration on the fixed-point map `g`. With
/// depth 0 this is plain Picard. Returns the iterate with the smallest map
/// residual seen within the caps.
pub fn anderson_picard(
    mut g: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    x0: DVector<f64>,
    cfg: &NonlinearConfig,
) -> Result<PicardOutcome> {
    cfg.validate()?;
    let m = cfg.anderson_depth;
    let n = x0.len();
    let mut x = x0;
    let mut dx_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(m.max(1));
    let mut dr_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(m.max(1));
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None; // (x, r)
    let mut best_x = x.clone();
    let mut best_res = f64::INFINITY;
    let mut trace = Vec::new();

    for iter in 1..=cfg.anderson_max_iter {
        let gx = g(&x)?;
        let r = &gx - &x;
        let res = r.norm();
        if res < best_res {
            best_res = res;
            best_x = x.clone();
        }
        trace.push(IterationRecord {
            stage: Stage::Picard,
            iter,
            res_norm: res,
            inc_norm: r.amax(),
        });
        if r.amax() <= cfg.anderson_tol {
            return Ok(PicardOutcome {
                x,
                iterations: iter,
                best_residual: res,
                trace,
            });
        }

        if let Some((px, pr)) = prev.take() {
            if dx_hist.len() == m && m > 0 {
                dx_hist.pop_front();
                dr_hist.pop_front();
            }
            if m > 0 {
                dx_hist.push_back(&x - &px);
                dr_hist.push_back(&r - &pr);
            }
        }

        let x_next = if dx_hist.is_empty() {
            gx.clone()
        } else {
            // gamma = argmin |r - dR gamma| with a small ridge
            let mk = dr_hist.len();
            let mut f = DMatrix::<f64>::zeros(n, mk);
            let mut xm = DMatrix::<f64>::zeros(n, mk);
            for (c, (dr, dx)) in dr_hist.iter().zip(dx_hist.iter()).enumerate() {
                f.set_column(c, dr);
                xm.set_column(c, dx);
            }
            let ftf = f.transpose() * &f;
            let scale = (0..mk).map(|i| ftf[(i, i)]).fold(0.0f64, f64::max);
            let mut reg = ftf;
            for i in 0..mk {
                reg[(i, i)] += 1e-12 * scale.max(1e-300);
            }
            let rhs = f.transpose() * &r;
            match reg.lu().solve(&rhs) {
                Some(gamma) if gamma.iter().all(|v| v.is_finite()) => {
                    &x + &r - (&xm + &f) * gamma
                }
                // least-squares breakdown: plain Picard step
                _ => gx.clone(),
            }
        };
        prev = Some((x.clone(), r));
        x = x_next;
    }

    // evaluate the final iterate so `best` reflects it
    let gx = g(&x)?;
    let res = (&gx - &x).norm();
    if res < best_res {
        best_res = res;
        best_x = x;
    }
    Ok(PicardOutcome {
        x: best_x,
        iterations: cfg.anderson_max_iter,
        best_residual: best_res,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar system f(x) = x^2 - 4.
    struct Quad;
    impl NewtonSystem for Quad {
        fn residual(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![x[0] * x[0] - 4.0]))
        }
        fn newton_step(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![-(x[0] * x[0] - 4.0) / (2.0 * x[0])]))
        }
        fn picard_map(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
        fn blocks(&self) -> Vec<Range<usize>> {
            vec![0..1]
        }
    }

    #[test]
    fn newton_scalar_quadratic() {
        let cfg = NonlinearConfig::default();
        let out = newton(&mut Quad, DVector::from_vec(vec![3.0]), &cfg, None).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 7, "{} iterations", out.iterations);
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_at_root_returns_immediately() {
        let cfg = NonlinearConfig::default();
        let out = newton(&mut Quad, DVector::from_vec(vec![2.0]), &cfg, None).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 1);
        assert_eq!(out.final_increment, 0.0);
    }

    #[test]
    fn newton_quadratic_convergence_rate() {
        let cfg = NonlinearConfig {
            backtracking: false,
            ..Default::default()
        };
        let out = newton(&mut Quad, DVector::from_vec(vec![3.0]), &cfg, None).unwrap();
        assert!(out.converged);
        // increments of the last iterations contract quadratically
        let incs: Vec<f64> = out.trace.iter().map(|t| t.inc_norm).collect();
        let tail = &incs[incs.len().saturating_sub(4)..];
        for w in tail.windows(2) {
            if w[0] > 1e-14 && w[1] > 0.0 {
                assert!(
                    w[1] <= 2.0 * w[0] * w[0],
                    "not quadratic: {} then {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn newton_never_converges_with_large_block_increment() {
        // Converged outcomes must have final increment below tolerance.
        let cfg = NonlinearConfig {
            newton_max_iter: 3,
            ..Default::default()
        };
        let out = newton(&mut Quad, DVector::from_vec(vec![100.0]), &cfg, None).unwrap();
        assert!(!out.converged);
        assert!(out.final_increment > cfg.newton_tol);
    }

    #[test]
    fn anderson_affine_map_exact_in_three_iterations() {
        // g(x) = 0.5 x + 1, fixed point 2.
        let cfg = NonlinearConfig {
            anderson_tol: 1e-12,
            ..Default::default()
        };
        let g = |x: &DVector<f64>| Ok(DVector::from_vec(vec![0.5 * x[0] + 1.0]));
        let out = anderson_picard(g, DVector::from_vec(vec![0.0]), &cfg).unwrap();
        assert!(out.iterations <= 3, "{}", out.iterations);
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn anderson_depth_zero_is_plain_picard() {
        let cfg = NonlinearConfig {
            anderson_depth: 0,
            anderson_max_iter: 10,
            anderson_tol: 1e-30,
            ..Default::default()
        };
        let g = |x: &DVector<f64>| Ok(DVector::from_vec(vec![0.5 * x[0] + 1.0]));
        let out = anderson_picard(g, DVector::from_vec(vec![0.0]), &cfg).unwrap();
        // plain Picard from 0: x_k = 2 (1 - 2^{-k}); residuals 2^{-k}
        for (i, rec) in out.trace.iter().enumerate() {
            let xk = 2.0 * (1.0 - 0.5f64.powi(i as i32));
            let expect = (0.5 * xk + 1.0) - xk;
            assert_eq!(rec.res_norm, expect.abs(), "iter {i}");
        }
    }

    #[test]
    fn anderson_2d_linear_contraction() {
        let a = [[0.3, 0.1], [-0.2, 0.4]];
        let b = [1.0, -0.5];
        // fixed point of x = A x + b
        let g = move |x: &DVector<f64>| {
            Ok(DVector::from_vec(vec![
                a[0][0] * x[0] + a[0][1] * x[1] + b[0],
                a[1][0] * x[0] + a[1][1] * x[1] + b[1],
            ]))
        };
        let cfg = NonlinearConfig {
            anderson_tol: 1e-10,
            ..Default::default()
        };
        let out = anderson_picard(g, DVector::zeros(2), &cfg).unwrap();
        // exact fixed point: solve (I - A) x = b
        let m = DMatrix::from_row_slice(2, 2, &[0.7, -0.1, 0.2, 0.6]);
        let xs = m.lu().solve(&DVector::from_vec(vec![1.0, -0.5])).unwrap();
        assert!((out.x[0] - xs[0]).abs() < 1e-8);
        assert!((out.x[1] - xs[1]).abs() < 1e-8);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let cfg = NonlinearConfig::default();
        let g = |x: &DVector<f64>| {
            Ok(DVector::from_vec(vec![
                (0.5 * x[0] + 0.1 * x[1].sin() + 1.0),
                0.3 * x[1] + 0.2 * x[0],
            ]))
        };
        let o1 = anderson_picard(g, DVector::zeros(2), &cfg).unwrap();
        let o2 = anderson_picard(g, DVector::zeros(2), &cfg).unwrap();
        assert_eq!(o1.x, o2.x);
        assert_eq!(o1.iterations, o2.iterations);
    }
}
