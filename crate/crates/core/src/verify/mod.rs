//! Manufactured-solution machinery and error measurement.

pub mod exact;
pub mod study;

use crate::field::{ElementField, VectorField};
use crate::geom::GeometryCache;
use crate::mesh::Mesh;
use crate::ref_element::ReferenceElement;

/// Broken L2 error of a scalar expansion against a callable exact field.
pub fn l2_error_scalar(
    mesh: &Mesh,
    geom: &GeometryCache,
    refel: &ReferenceElement,
    field: &ElementField,
    exact: impl Fn([f64; 2]) -> f64,
) -> f64 {
    let nq = refel.volume_quadrature.points.len();
    let mut acc = 0.0;
    for el in 0..mesh.n_elements() {
        let g = &geom.elements[el];
        let vals = field.values_at(el, &refel.phi_q);
        for q in 0..nq {
            let xp = g.to_physical(refel.volume_quadrature.points[q]);
            let d = vals[q] - exact(xp);
            acc += refel.volume_quadrature.weights[q] * g.det_j * d * d;
        }
    }
    acc.sqrt()
}

/// Broken L2 error of a vector expansion (pointwise Euclidean norm).
pub fn l2_error_vector(
    mesh: &Mesh,
    geom: &GeometryCache,
    refel: &ReferenceElement,
    field: &VectorField,
    exact: impl Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let nq = refel.volume_quadrature.points.len();
    let mut acc = 0.0;
    for el in 0..mesh.n_elements() {
        let g = &geom.elements[el];
        let (vx, vy) = field.values_at(el, &refel.phi_q);
        for q in 0..nq {
            let xp = g.to_physical(refel.volume_quadrature.points[q]);
            let e = exact(xp);
            let (dx, dy) = (vx[q] - e[0], vy[q] - e[1]);
            acc += refel.volume_quadrature.weights[q] * g.det_j * (dx * dx + dy * dy);
        }
    }
    acc.sqrt()
}

/// L2 norm of a callable field over the mesh (reference for relative errors).
pub fn l2_norm_exact(
    mesh: &Mesh,
    geom: &GeometryCache,
    refel: &ReferenceElement,
    exact: impl Fn([f64; 2]) -> f64,
) -> f64 {
    let nq = refel.volume_quadrature.points.len();
    let mut acc = 0.0;
    for el in 0..mesh.n_elements() {
        let g = &geom.elements[el];
        for q in 0..nq {
            let xp = g.to_physical(refel.volume_quadrature.points[q]);
            let v = exact(xp);
            acc += refel.volume_quadrature.weights[q] * g.det_j * v * v;
        }
    }
    acc.sqrt()
}
