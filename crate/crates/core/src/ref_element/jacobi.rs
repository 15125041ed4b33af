//! Orthonormal Jacobi polynomials and Gauss-type quadrature rules.
//!
//! Polynomials are normalized so that
//! `int_{-1}^{1} P_m(x) P_n(x) (1-x)^a (1+x)^b dx = delta_mn`,
//! which keeps high-degree evaluations well conditioned.

use nalgebra::{DMatrix, SymmetricEigen};

fn gamma_int(n: usize) -> f64 {
    // Gamma(n) for positive integer n
    (1..n).map(|i| i as f64).product()
}

/// Evaluate the orthonormal Jacobi polynomial of degree `n` with integer
/// weights `(a, b)` at `x`.
pub fn jacobi(n: usize, a: usize, b: usize, x: f64) -> f64 {
    let (af, bf) = (a as f64, b as f64);
    let gamma0 = 2f64.powf(af + bf + 1.0) / (af + bf + 1.0) * gamma_int(a + 1) * gamma_int(b + 1)
        / gamma_int(a + b + 1);
    let p0 = 1.0 / gamma0.sqrt();
    if n == 0 {
        return p0;
    }
    let gamma1 = (af + 1.0) * (bf + 1.0) / (af + bf + 3.0) * gamma0;
    let p1 = ((af + bf + 2.0) * x / 2.0 + (af - bf) / 2.0) / gamma1.sqrt();
    if n == 1 {
        return p1;
    }
    let mut aold = 2.0 / (2.0 + af + bf) * ((af + 1.0) * (bf + 1.0) / (af + bf + 3.0)).sqrt();
    let (mut pm1, mut p) = (p0, p1);
    for i in 1..n {
        let i = i as f64;
        let h1 = 2.0 * i + af + bf;
        let anew = 2.0 / (h1 + 2.0)
            * ((i + 1.0) * (i + 1.0 + af + bf) * (i + 1.0 + af) * (i + 1.0 + bf)
                / ((h1 + 1.0) * (h1 + 3.0)))
                .sqrt();
        let bnew = -(af * af - bf * bf) / (h1 * (h1 + 2.0));
        let pnew = ((x - bnew) * p - aold * pm1) / anew;
        pm1 = p;
        p = pnew;
        aold = anew;
    }
    p
}

/// Derivative of the orthonormal Jacobi polynomial.
pub fn grad_jacobi(n: usize, a: usize, b: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    (nf * (nf + a as f64 + b as f64 + 1.0)).sqrt() * jacobi(n - 1, a + 1, b + 1, x)
}

/// Orthonormal Legendre polynomial on [0, 1]: `L_m(t) = sqrt(2) P_m(2t - 1)`.
pub fn legendre_unit(m: usize, t: f64) -> f64 {
    std::f64::consts::SQRT_2 * jacobi(m, 0, 0, 2.0 * t - 1.0)
}

/// Gauss–Jacobi rule with `n` points on [-1, 1] for the weight
/// `(1-x)^a (1+x)^b`, computed by Golub–Welsch.
pub fn gauss_jacobi(n: usize, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let (af, bf) = (a as f64, b as f64);
    // mu0 = int (1-x)^a (1+x)^b dx
    let mu0 =
        2f64.powf(af + bf + 1.0) * gamma_int(a + 1) * gamma_int(b + 1) / gamma_int(a + b + 2);
    if n == 1 {
        let d0 = if a + b == 0 {
            0.0
        } else {
            (bf - af) / (af + bf + 2.0)
        };
        return (vec![d0], vec![mu0]);
    }
    // Recurrence coefficients of the monic Jacobi polynomials.
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for (k, d) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        let denom = (2.0 * kf + af + bf) * (2.0 * kf + af + bf + 2.0);
        *d = if denom == 0.0 {
            (bf - af) / (af + bf + 2.0)
        } else {
            (bf * bf - af * af) / denom
        };
    }
    for (k, o) in off.iter_mut().enumerate() {
        let kf = (k + 1) as f64;
        let num = 4.0 * kf * (kf + af) * (kf + bf) * (kf + af + bf);
        let den = (2.0 * kf + af + bf - 1.0)
            * (2.0 * kf + af + bf).powi(2)
            * (2.0 * kf + af + bf + 1.0);
        *o = (num / den).sqrt();
    }
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
        if i + 1 < n {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (x, mu0 * v0 * v0)
        })
        .collect();
    rule.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    rule.into_iter().unzip()
}

/// Gauss–Legendre rule with `n` points on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_jacobi(n, 0, 0);
    (
        x.iter().map(|xi| 0.5 * (xi + 1.0)).collect(),
        w.iter().map(|wi| 0.5 * wi).collect(),
    )
}

/// Gauss–Lobatto–Legendre points on [-1, 1] (n points, n >= 2).
pub fn gauss_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut pts = Vec::with_capacity(n);
    pts.push(-1.0);
    if n > 2 {
        let (interior, _) = gauss_jacobi(n - 2, 1, 1);
        pts.extend(interior);
    }
    pts.push(1.0);
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_orthonormality_under_quadrature() {
        for &(a, b) in &[(0usize, 0usize), (1, 0), (5, 0), (1, 1)] {
            let (x, w) = gauss_jacobi(20, a, b);
            for m in 0..=8 {
                for n in 0..=8 {
                    let s: f64 = x
                        .iter()
                        .zip(&w)
                        .map(|(&xi, &wi)| wi * jacobi(m, a, b, xi) * jacobi(n, a, b, xi))
                        .sum();
                    let expect = if m == n { 1.0 } else { 0.0 };
                    assert!(
                        (s - expect).abs() < 1e-13,
                        "a={a} b={b} m={m} n={n}: {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_jacobi_matches_finite_difference() {
        let h = 1e-6;
        for n in 1..=10 {
            for &x in &[-0.7, -0.2, 0.0, 0.3, 0.9] {
                let fd = (jacobi(n, 2, 0, x + h) - jacobi(n, 2, 0, x - h)) / (2.0 * h);
                let an = grad_jacobi(n, 2, 0, x);
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        // n points integrate monomials up to degree 2n-1 on [0,1]
        for n in 1..=12 {
            let (x, w) = gauss_legendre_unit(n);
            for p in 0..(2 * n) {
                let s: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&xi, &wi)| wi * xi.powi(p as i32))
                    .sum();
                let exact = 1.0 / (p as f64 + 1.0);
                assert!((s - exact).abs() < 1e-14, "n={n} p={p}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn lobatto_endpoints_and_count() {
        for n in 2..=17 {
            let pts = gauss_lobatto(n);
            assert_eq!(pts.len(), n);
            assert_eq!(pts[0], -1.0);
            assert_eq!(pts[n - 1], 1.0);
            for i in 1..n {
                assert!(pts[i] > pts[i - 1]);
            }
        }
    }
}
