//! Modal field storage: per-element volume expansions and per-edge skeleton
//! expansions, with L2 projection helpers.

use crate::geom::GeometryCache;
use crate::mesh::{Mesh, Skeleton};
use crate::ref_element::ReferenceElement;
use nalgebra::DVector;

/// Scalar field: one modal coefficient block per element, orthonormal basis
/// on the reference triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub n_elements: usize,
    pub n_modes: usize,
    pub data: Vec<f64>,
}

impl ElementField {
    pub fn zeros(n_elements: usize, n_modes: usize) -> Self {
        ElementField {
            n_elements,
            n_modes,
            data: vec![0.0; n_elements * n_modes],
        }
    }

    pub fn coeffs(&self, el: usize) -> &[f64] {
        &self.data[el * self.n_modes..(el + 1) * self.n_modes]
    }

    pub fn coeffs_mut(&mut self, el: usize) -> &mut [f64] {
        &mut self.data[el * self.n_modes..(el + 1) * self.n_modes]
    }

    /// Values at the reference points whose basis table is `phi` (rows =
    /// points, columns = modes).
    pub fn values_at(&self, el: usize, phi: &nalgebra::DMatrix<f64>) -> DVector<f64> {
        let c = self.coeffs(el);
        let mut out = DVector::zeros(phi.nrows());
        for q in 0..phi.nrows() {
            let mut s = 0.0;
            for m in 0..self.n_modes {
                s += phi[(q, m)] * c[m];
            }
            out[q] = s;
        }
        out
    }

    /// Element mean value (the constant mode carries the mean).
    pub fn element_mean(&self, el: usize) -> f64 {
        // constant mode value is sqrt(2); mean = c0 * sqrt(2) on any element
        self.coeffs(el)[0] * std::f64::consts::SQRT_2
    }

    /// L2 projection of a function given in physical coordinates.
    pub fn project(
        mesh: &Mesh,
        geom: &GeometryCache,
        refel: &ReferenceElement,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Self {
        let mut field = ElementField::zeros(mesh.n_elements(), refel.n_modes);
        let nq = refel.volume_quadrature.points.len();
        for el in 0..mesh.n_elements() {
            let g = &geom.elements[el];
            let c = field.coeffs_mut(el);
            for q in 0..nq {
                let xp = g.to_physical(refel.volume_quadrature.points[q]);
                let w = refel.volume_quadrature.weights[q] * f(xp);
                for m in 0..refel.n_modes {
                    c[m] += w * refel.phi_q[(q, m)];
                }
            }
        }
        field
    }
}

/// Two-component vector field; per element the x-modes are stored first,
/// then the y-modes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub n_elements: usize,
    pub n_modes: usize,
    pub data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(n_elements: usize, n_modes: usize) -> Self {
        VectorField {
            n_elements,
            n_modes,
            data: vec![0.0; 2 * n_elements * n_modes],
        }
    }

    pub fn coeffs(&self, el: usize) -> &[f64] {
        &self.data[2 * el * self.n_modes..2 * (el + 1) * self.n_modes]
    }

    pub fn coeffs_mut(&mut self, el: usize) -> &mut [f64] {
        &mut self.data[2 * el * self.n_modes..2 * (el + 1) * self.n_modes]
    }

    pub fn component(&self, el: usize, d: usize) -> &[f64] {
        let base = 2 * el * self.n_modes + d * self.n_modes;
        &self.data[base..base + self.n_modes]
    }

    /// Values of both components at reference points tabulated in `phi`.
    pub fn values_at(&self, el: usize, phi: &nalgebra::DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let cx = self.component(el, 0);
        let cy = self.component(el, 1);
        let mut vx = DVector::zeros(phi.nrows());
        let mut vy = DVector::zeros(phi.nrows());
        for q in 0..phi.nrows() {
            let (mut sx, mut sy) = (0.0, 0.0);
            for m in 0..self.n_modes {
                sx += phi[(q, m)] * cx[m];
                sy += phi[(q, m)] * cy[m];
            }
            vx[q] = sx;
            vy[q] = sy;
        }
        (vx, vy)
    }

    pub fn project(
        mesh: &Mesh,
        geom: &GeometryCache,
        refel: &ReferenceElement,
        f: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Self {
        let mut field = VectorField::zeros(mesh.n_elements(), refel.n_modes);
        let nq = refel.volume_quadrature.points.len();
        let nm = refel.n_modes;
        for el in 0..mesh.n_elements() {
            let g = &geom.elements[el];
            let c = field.coeffs_mut(el);
            for q in 0..nq {
                let xp = g.to_physical(refel.volume_quadrature.points[q]);
                let v = f(xp);
                let w = refel.volume_quadrature.weights[q];
                for m in 0..nm {
                    c[m] += w * v[0] * refel.phi_q[(q, m)];
                    c[nm + m] += w * v[1] * refel.phi_q[(q, m)];
                }
            }
        }
        field
    }
}

/// Skeleton field: orthonormal Legendre coefficients per edge in the global
/// (low to high vertex id) parametrization. Dirichlet edges hold projected
/// boundary data.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonField {
    pub n_edges: usize,
    pub n_modes: usize,
    pub data: Vec<f64>,
}

impl SkeletonField {
    pub fn zeros(n_edges: usize, n_modes: usize) -> Self {
        SkeletonField {
            n_edges,
            n_modes,
            data: vec![0.0; n_edges * n_modes],
        }
    }

    pub fn coeffs(&self, edge: usize) -> &[f64] {
        &self.data[edge * self.n_modes..(edge + 1) * self.n_modes]
    }

    pub fn coeffs_mut(&mut self, edge: usize) -> &mut [f64] {
        &mut self.data[edge * self.n_modes..(edge + 1) * self.n_modes]
    }

    /// Values at the 1D quadrature points (global parametrization) whose
    /// Legendre table is `leg`.
    pub fn values_at(&self, edge: usize, leg: &nalgebra::DMatrix<f64>) -> DVector<f64> {
        let c = self.coeffs(edge);
        let mut out = DVector::zeros(leg.nrows());
        for q in 0..leg.nrows() {
            let mut s = 0.0;
            for m in 0..self.n_modes {
                s += leg[(q, m)] * c[m];
            }
            out[q] = s;
        }
        out
    }

    /// Edgewise L2 projection of boundary/trace data given in physical
    /// coordinates (the L2 projection onto the trace space).
    pub fn project(
        mesh: &Mesh,
        skel: &Skeleton,
        refel: &ReferenceElement,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Self {
        let k1 = refel.degree + 1;
        let mut field = SkeletonField::zeros(skel.n_edges(), k1);
        for e in 0..skel.n_edges() {
            let pts =
                crate::geom::edge_quad_physical(mesh, skel, e, &refel.edge_quadrature.points);
            let c = field.coeffs_mut(e);
            for (q, xp) in pts.iter().enumerate() {
                let w = refel.edge_quadrature.weights[q] * f(*xp);
                for m in 0..k1 {
                    c[m] += w * refel.edge_legendre_q[(q, m)];
                }
            }
        }
        field
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_skeleton, structured_mesh, BcKind, BoundarySpec};

    #[test]
    fn projection_reproduces_polynomials() {
        let mesh = structured_mesh(2, 1.0, 1.0).unwrap();
        let bc = BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ]);
        let skel = build_skeleton(&mesh, &bc).unwrap();
        let refel = ReferenceElement::build(2).unwrap();
        let geom = GeometryCache::build(&mesh, &skel, &refel);
        let f = |x: [f64; 2]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let field = ElementField::project(&mesh, &geom, &refel, f);
        for el in 0..mesh.n_elements() {
            let vals = field.values_at(el, &refel.phi_q);
            for (q, &p) in refel.volume_quadrature.points.iter().enumerate() {
                let xp = geom.elements[el].to_physical(p);
                assert!((vals[q] - f(xp)).abs() < 1e-12);
            }
            // element mean via constant mode
            let area = geom.elements[el].area;
            let mut mean = 0.0;
            for (q, &p) in refel.volume_quadrature.points.iter().enumerate() {
                let xp = geom.elements[el].to_physical(p);
                mean += refel.volume_quadrature.weights[q] * f(xp) * geom.elements[el].det_j;
            }
            mean /= area;
            assert!((field.element_mean(el) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn skeleton_projection_reproduces_traces() {
        let mesh = structured_mesh(3, 2.0, 1.0).unwrap();
        let bc = BoundarySpec::uniform(&[
            (1, BcKind::Dirichlet),
            (2, BcKind::Dirichlet),
            (3, BcKind::Neumann),
            (4, BcKind::Neumann),
        ]);
        let skel = build_skeleton(&mesh, &bc).unwrap();
        let refel = ReferenceElement::build(3).unwrap();
        let f = |x: [f64; 2]| 0.3 + x[0] * x[0] - 0.2 * x[1];
        let field = SkeletonField::project(&mesh, &skel, &refel, f);
        for e in 0..skel.n_edges() {
            let vals = field.values_at(e, &refel.edge_legendre_q);
            let pts =
                crate::geom::edge_quad_physical(&mesh, &skel, e, &refel.edge_quadrature.points);
            for (q, xp) in pts.iter().enumerate() {
                assert!((vals[q] - f(*xp)).abs() < 1e-12);
            }
        }
    }
}
