//! Interpolation nodes on the reference triangle.
//!
//! Warp-and-blend nodes: vertices plus Gauss–Lobatto distributed edge points,
//! with interior points warped for a well-conditioned Vandermonde matrix up to
//! degree 16. Fekete-grade conditioning is verified by the construction-time
//! mass-identity check in the parent module.

use super::jacobi::{gauss_lobatto, jacobi};
use nalgebra::DMatrix;

/// Blend parameter per degree, tuned to minimize the Lebesgue constant.
fn alpha_opt(n: usize) -> f64 {
    const ALP: [f64; 15] = [
        0.0000, 0.0000, 1.4152, 0.1001, 0.2751, 0.9800, 1.0999, 1.2832, 1.3648, 1.4773, 1.4959,
        1.5743, 1.5770, 1.6223, 1.6258,
    ];
    if n >= 1 && n <= 15 {
        ALP[n - 1]
    } else {
        5.0 / 3.0
    }
}

/// One-dimensional warp: displacement from equidistant to Gauss–Lobatto
/// nodes, interpolated at the coordinates `rout` in [-1, 1].
fn warp_factor(n: usize, rout: &[f64]) -> Vec<f64> {
    let np = n + 1;
    let lgl = gauss_lobatto(np);
    let req: Vec<f64> = (0..np)
        .map(|i| -1.0 + 2.0 * i as f64 / n as f64)
        .collect();
    // Lagrange interpolation through the orthonormal Legendre basis.
    let veq = DMatrix::from_fn(np, np, |r, c| jacobi(c, 0, 0, req[r]));
    let pmat = DMatrix::from_fn(np, rout.len(), |r, c| jacobi(r, 0, 0, rout[c]));
    let lmat = veq
        .transpose()
        .lu()
        .solve(&pmat)
        .expect("equidistant Vandermonde is invertible");
    let mut warp = vec![0.0; rout.len()];
    for (j, wj) in warp.iter_mut().enumerate() {
        for i in 0..np {
            *wj += lmat[(i, j)] * (lgl[i] - req[i]);
        }
    }
    for (j, wj) in warp.iter_mut().enumerate() {
        let r = rout[j];
        if r.abs() < 1.0 - 1e-10 {
            *wj /= 1.0 - r * r;
        } else {
            *wj = 0.0;
        }
    }
    warp
}

/// Warp-and-blend nodes for degree `n` on the unit triangle (0,0),(1,0),(0,1),
/// returned as (x, y) pairs. The layout puts n+1 Gauss–Lobatto points on each
/// edge, vertices included.
pub fn warp_blend_nodes(n: usize) -> Vec<(f64, f64)> {
    let np = (n + 1) * (n + 2) / 2;
    let alpha = alpha_opt(n);
    let nf = n as f64;

    // Equidistributed barycentric coordinates.
    let mut l1 = Vec::with_capacity(np);
    let mut l3 = Vec::with_capacity(np);
    for row in 0..=n {
        for col in 0..=(n - row) {
            l1.push(row as f64 / nf);
            l3.push(col as f64 / nf);
        }
    }
    let l2: Vec<f64> = l1.iter().zip(&l3).map(|(a, c)| 1.0 - a - c).collect();

    // Equilateral-triangle coordinates.
    let mut x: Vec<f64> = l2.iter().zip(&l3).map(|(b, c)| -b + c).collect();
    let mut y: Vec<f64> = l1
        .iter()
        .zip(l2.iter().zip(&l3))
        .map(|(a, (b, c))| (-b - c + 2.0 * a) / 3f64.sqrt())
        .collect();

    let d1: Vec<f64> = l3.iter().zip(&l2).map(|(c, b)| c - b).collect();
    let d2: Vec<f64> = l1.iter().zip(&l3).map(|(a, c)| a - c).collect();
    let d3: Vec<f64> = l2.iter().zip(&l1).map(|(b, a)| b - a).collect();
    let w1 = warp_factor(n, &d1);
    let w2 = warp_factor(n, &d2);
    let w3 = warp_factor(n, &d3);

    for i in 0..np {
        let blend1 = 4.0 * l2[i] * l3[i];
        let blend2 = 4.0 * l1[i] * l3[i];
        let blend3 = 4.0 * l1[i] * l2[i];
        let warp1 = blend1 * w1[i] * (1.0 + (alpha * l1[i]).powi(2));
        let warp2 = blend2 * w2[i] * (1.0 + (alpha * l2[i]).powi(2));
        let warp3 = blend3 * w3[i] * (1.0 + (alpha * l3[i]).powi(2));
        let (c23, s23) = ((2.0 * std::f64::consts::PI / 3.0).cos(), (2.0 * std::f64::consts::PI / 3.0).sin());
        let (c43, s43) = ((4.0 * std::f64::consts::PI / 3.0).cos(), (4.0 * std::f64::consts::PI / 3.0).sin());
        x[i] += warp1 + c23 * warp2 + c43 * warp3;
        y[i] += s23 * warp2 + s43 * warp3;
    }

    // Back to barycentric, then onto the unit triangle: (x, y) = (L3, L1).
    (0..np)
        .map(|i| {
            let lam1 = (3f64.sqrt() * y[i] + 1.0) / 3.0;
            let lam2 = (-3.0 * x[i] - 3f64.sqrt() * y[i] + 2.0) / 6.0;
            let lam3 = (3.0 * x[i] - 3f64.sqrt() * y[i] + 2.0) / 6.0;
            debug_assert!((lam1 + lam2 + lam3 - 1.0).abs() < 1e-12);
            (lam3, lam1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts_and_vertices() {
        for n in 1..=16 {
            let nodes = warp_blend_nodes(n);
            assert_eq!(nodes.len(), (n + 1) * (n + 2) / 2);
            for v in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
                assert!(
                    nodes
                        .iter()
                        .any(|p| (p.0 - v.0).abs() < 1e-12 && (p.1 - v.1).abs() < 1e-12),
                    "degree {n} missing vertex {v:?}"
                );
            }
        }
    }

    #[test]
    fn nodes_inside_closed_triangle() {
        for n in 1..=16 {
            for (x, y) in warp_blend_nodes(n) {
                assert!(x >= -1e-12 && y >= -1e-12 && x + y <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn edges_carry_k_plus_one_nodes() {
        for n in 1..=16 {
            let nodes = warp_blend_nodes(n);
            let on_bottom = nodes.iter().filter(|p| p.1.abs() < 1e-10).count();
            let on_left = nodes.iter().filter(|p| p.0.abs() < 1e-10).count();
            let on_hyp = nodes
                .iter()
                .filter(|p| (p.0 + p.1 - 1.0).abs() < 1e-10)
                .count();
            assert_eq!(on_bottom, n + 1);
            assert_eq!(on_left, n + 1);
            assert_eq!(on_hyp, n + 1);
        }
    }
}
