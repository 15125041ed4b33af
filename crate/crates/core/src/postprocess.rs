//! Element-local superconvergent postprocessing: reconstruct a degree-(k+1)
//! saturation from the degree-k scalar and its gradient by matching weak
//! gradients and the element mean.

use crate::error::{Error, Result};
use crate::field::{ElementField, VectorField};
use crate::geom::GeometryCache;
use crate::mesh::Mesh;
use crate::ref_element::ReferenceElement;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Degree-(k+1) reconstruction of `s` from `(s, q)`. `geom_hi` must be built
/// with `refel_hi` (degree k+1); `refel_lo` is the source degree k.
pub fn postprocess(
    mesh: &Mesh,
    geom_hi: &GeometryCache,
    refel_lo: &ReferenceElement,
    refel_hi: &ReferenceElement,
    s: &ElementField,
    q: &VectorField,
) -> Result<ElementField> {
    if refel_hi.degree != refel_lo.degree + 1 {
        return Err(Error::config(format!(
            "postprocessing needs degree {} reference data, got {}",
            refel_lo.degree + 1,
            refel_hi.degree
        )));
    }
    let n_hi = refel_hi.n_modes;
    let nq = refel_hi.volume_quadrature.points.len();
    // degree-k basis tabulated at the degree-(k+1) quadrature points
    let (phi_lo, _, _) = refel_lo.eval_basis_with_grad(&refel_hi.volume_quadrature.points);
    let w = &refel_hi.volume_quadrature.weights;

    let results: Vec<Result<Vec<f64>>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|el| {
            let g = &geom_hi.elements[el];
            // local stiffness on the mean-zero complement (constant mode is
            // the nullspace and is fixed by the mean constraint)
            let m = n_hi - 1;
            let mut stiff = DMatrix::<f64>::zeros(m, m);
            for qp in 0..nq {
                let wq = w[qp] * g.det_j;
                for i in 0..m {
                    let (gxi, gyi) = (g.gx[(qp, i + 1)], g.gy[(qp, i + 1)]);
                    for j in 0..m {
                        stiff[(i, j)] +=
                            wq * (gxi * g.gx[(qp, j + 1)] + gyi * g.gy[(qp, j + 1)]);
                    }
                }
            }
            let (qx, qy) = q.values_at(el, &phi_lo);
            let mut rhs = DVector::<f64>::zeros(m);
            for qp in 0..nq {
                let wq = w[qp] * g.det_j;
                for i in 0..m {
                    rhs[i] += wq * (qx[qp] * g.gx[(qp, i + 1)] + qy[qp] * g.gy[(qp, i + 1)]);
                }
            }
            let sol = match stiff.clone().cholesky() {
                Some(ch) => Some(ch.solve(&rhs)),
                None => stiff.lu().solve(&rhs),
            }
            .ok_or(Error::Assembly {
                element: el,
                msg: "singular local postprocessing system".into(),
            })?;
            let mut coeffs = vec![0.0; n_hi];
            // the constant mode matches the source mean exactly (both bases
            // share the constant sqrt(2) mode)
            coeffs[0] = s.coeffs(el)[0];
            coeffs[1..].copy_from_slice(sol.as_slice());
            Ok(coeffs)
        })
        .collect();

    let mut out = ElementField::zeros(mesh.n_elements(), n_hi);
    for (el, r) in results.into_iter().enumerate() {
        out.coeffs_mut(el).copy_from_slice(&r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_skeleton, structured_mesh, BcKind, BoundarySpec};

    struct Setup {
        mesh: Mesh,
        geom_lo: GeometryCache,
        geom_hi: GeometryCache,
        refel_lo: ReferenceElement,
        refel_hi: ReferenceElement,
    }

    fn setup(n: usize, k: usize) -> Setup {
        let mesh = structured_mesh(n, 1.0, 1.0).unwrap();
        let bc = BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ]);
        let skel = build_skeleton(&mesh, &bc).unwrap();
        let refel_lo = ReferenceElement::build(k).unwrap();
        let refel_hi = ReferenceElement::build(k + 1).unwrap();
        let geom_lo = GeometryCache::build(&mesh, &skel, &refel_lo);
        let geom_hi = GeometryCache::build(&mesh, &skel, &refel_hi);
        Setup {
            mesh,
            geom_lo,
            geom_hi,
            refel_lo,
            refel_hi,
        }
    }

    #[test]
    fn constant_field_is_reproduced() {
        let s = setup(2, 2);
        let field = ElementField::project(&s.mesh, &s.geom_lo, &s.refel_lo, |_| 0.7);
        let q = VectorField::zeros(s.mesh.n_elements(), s.refel_lo.n_modes);
        let pp = postprocess(&s.mesh, &s.geom_hi, &s.refel_lo, &s.refel_hi, &field, &q).unwrap();
        for el in 0..s.mesh.n_elements() {
            let vals = pp.values_at(el, &s.refel_hi.phi_q);
            for v in vals.iter() {
                assert!((v - 0.7).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn degree_k_plus_one_polynomial_recovered_exactly() {
        // s quadratic, k = 1: project s to P1, supply q = grad s exactly;
        // the reconstruction must reproduce the quadratic.
        let s = setup(2, 1);
        let f = |x: [f64; 2]| 0.3 + x[0] - 0.5 * x[1] + 0.8 * x[0] * x[1] - 0.2 * x[0] * x[0];
        let grad = |x: [f64; 2]| [1.0 + 0.8 * x[1] - 0.4 * x[0], -0.5 + 0.8 * x[0]];
        let s_lo = ElementField::project(&s.mesh, &s.geom_lo, &s.refel_lo, f);
        let q = VectorField::project(&s.mesh, &s.geom_lo, &s.refel_lo, grad);
        let pp = postprocess(&s.mesh, &s.geom_hi, &s.refel_lo, &s.refel_hi, &s_lo, &q).unwrap();
        for el in 0..s.mesh.n_elements() {
            let vals = pp.values_at(el, &s.refel_hi.phi_q);
            for (qp, &pt) in s.refel_hi.volume_quadrature.points.iter().enumerate() {
                let xp = s.geom_hi.elements[el].to_physical(pt);
                assert!(
                    (vals[qp] - f(xp)).abs() < 1e-11,
                    "el {el}: {} vs {}",
                    vals[qp],
                    f(xp)
                );
            }
        }
    }

    #[test]
    fn element_means_preserved() {
        let s = setup(3, 2);
        let f = |x: [f64; 2]| 0.5 + 0.3 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos();
        let grad = |x: [f64; 2]| {
            [
                0.9 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos(),
                -0.6 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin(),
            ]
        };
        let s_lo = ElementField::project(&s.mesh, &s.geom_lo, &s.refel_lo, f);
        let q = VectorField::project(&s.mesh, &s.geom_lo, &s.refel_lo, grad);
        let pp = postprocess(&s.mesh, &s.geom_hi, &s.refel_lo, &s.refel_hi, &s_lo, &q).unwrap();
        for el in 0..s.mesh.n_elements() {
            let m_lo = s_lo.element_mean(el);
            let m_hi = pp.element_mean(el);
            assert!(
                (m_lo - m_hi).abs() <= 1e-12 * (1.0 + m_lo.abs()),
                "el {el}"
            );
        }
    }

    #[test]
    fn reconstruction_is_element_local() {
        // postprocessing one element in isolation gives the same answer as
        // within the full mesh
        let s = setup(2, 1);
        let f = |x: [f64; 2]| 0.2 + x[0] * x[1];
        let grad = |x: [f64; 2]| [x[1], x[0]];
        let s_lo = ElementField::project(&s.mesh, &s.geom_lo, &s.refel_lo, f);
        let q = VectorField::project(&s.mesh, &s.geom_lo, &s.refel_lo, grad);
        let pp_full =
            postprocess(&s.mesh, &s.geom_hi, &s.refel_lo, &s.refel_hi, &s_lo, &q).unwrap();

        // single-element mesh carved out of element 3
        let tri = s.mesh.triangles[3];
        let verts: Vec<[f64; 2]> = tri.iter().map(|&v| s.mesh.vertices[v]).collect();
        let single = Mesh {
            vertices: verts,
            triangles: vec![[0, 1, 2]],
            element_perm: vec![crate::mesh::Permeability::Scalar(1.0)],
            element_poro: vec![0.2],
            boundary_edges: vec![([0, 1], 1), ([1, 2], 1), ([0, 2], 1)],
        };
        let bc = BoundarySpec::uniform(&[(1, BcKind::Dirichlet)]);
        let skel1 = build_skeleton(&single, &bc).unwrap();
        let geom1_hi = GeometryCache::build(&single, &skel1, &s.refel_hi);
        let geom1_lo = GeometryCache::build(&single, &skel1, &s.refel_lo);
        let s1 = ElementField::project(&single, &geom1_lo, &s.refel_lo, f);
        let q1 = VectorField::project(&single, &geom1_lo, &s.refel_lo, grad);
        let pp1 = postprocess(&single, &geom1_hi, &s.refel_lo, &s.refel_hi, &s1, &q1).unwrap();
        for m in 0..s.refel_hi.n_modes {
            assert!(
                (pp_full.coeffs(3)[m] - pp1.coeffs(0)[m]).abs() < 1e-13,
                "mode {m}"
            );
        }
    }
}
