//! Per-element affine geometry and precomputed physical basis gradients.

use crate::mesh::{Mesh, Skeleton};
use crate::ref_element::ReferenceElement;
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Affine map data and quadrature-point basis gradients for one element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Columns of the affine map: [v1 - v0 | v2 - v0].
    pub jac: [[f64; 2]; 2],
    pub inv_jac_t: [[f64; 2]; 2],
    pub det_j: f64,
    pub area: f64,
    pub v0: [f64; 2],
    pub edge_length: [f64; 3],
    pub normal: [[f64; 2]; 3],
    /// Physical x-derivatives of all modes at the volume quadrature points.
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

impl ElementGeometry {
    /// Map a reference point to physical coordinates.
    pub fn to_physical(&self, p: (f64, f64)) -> [f64; 2] {
        [
            self.v0[0] + self.jac[0][0] * p.0 + self.jac[0][1] * p.1,
            self.v0[1] + self.jac[1][0] * p.0 + self.jac[1][1] * p.1,
        ]
    }

    /// Map a physical point to reference coordinates.
    pub fn to_reference(&self, x: [f64; 2]) -> (f64, f64) {
        let (dx, dy) = (x[0] - self.v0[0], x[1] - self.v0[1]);
        let det = self.det_j;
        (
            (self.jac[1][1] * dx - self.jac[0][1] * dy) / det,
            (-self.jac[1][0] * dx + self.jac[0][0] * dy) / det,
        )
    }
}

#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub elements: Vec<ElementGeometry>,
    /// Domain bounding-box diagonal, the diffusive length scale of the
    /// stabilization parameters.
    pub diagonal: f64,
}

impl GeometryCache {
    pub fn build(mesh: &Mesh, skel: &Skeleton, refel: &ReferenceElement) -> Self {
        let elements: Vec<ElementGeometry> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|el| {
                let [a, b, c] = mesh.triangle_vertices(el);
                let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
                let det_j = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let inv_jac_t = [
                    [jac[1][1] / det_j, -jac[1][0] / det_j],
                    [-jac[0][1] / det_j, jac[0][0] / det_j],
                ];
                let nq = refel.volume_quadrature.points.len();
                let nm = refel.n_modes;
                let mut gx = DMatrix::zeros(nq, nm);
                let mut gy = DMatrix::zeros(nq, nm);
                for q in 0..nq {
                    for m in 0..nm {
                        let dr = refel.dphi_dx_q[(q, m)];
                        let ds = refel.dphi_dy_q[(q, m)];
                        gx[(q, m)] = inv_jac_t[0][0] * dr + inv_jac_t[0][1] * ds;
                        gy[(q, m)] = inv_jac_t[1][0] * dr + inv_jac_t[1][1] * ds;
                    }
                }
                let edge_length = [
                    skel.edge_lengths[skel.element_edges[el][0]],
                    skel.edge_lengths[skel.element_edges[el][1]],
                    skel.edge_lengths[skel.element_edges[el][2]],
                ];
                ElementGeometry {
                    jac,
                    inv_jac_t,
                    det_j,
                    area: det_j / 2.0,
                    v0: a,
                    edge_length,
                    normal: skel.normals[el],
                    gx,
                    gy,
                }
            })
            .collect();

        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &mesh.vertices {
            xmin = xmin.min(v[0]);
            xmax = xmax.max(v[0]);
            ymin = ymin.min(v[1]);
            ymax = ymax.max(v[1]);
        }
        let diagonal = ((xmax - xmin).powi(2) + (ymax - ymin).powi(2)).sqrt();
        GeometryCache { elements, diagonal }
    }
}

/// Physical coordinates of the points of a global edge at the 1D quadrature
/// parameters (global orientation: low vertex id to high vertex id).
pub fn edge_quad_physical(mesh: &Mesh, skel: &Skeleton, edge: usize, ts: &[f64]) -> Vec<[f64; 2]> {
    let [a, b] = skel.edges[edge];
    let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
    ts.iter()
        .map(|&t| [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])])
        .collect()
}

/// Row index of the reference edge-trace tables corresponding to global
/// quadrature point `q` when the local edge direction agrees (or not) with
/// the global direction. Gauss points are symmetric, so a flip is a
/// row reversal.
#[inline]
pub fn trace_row(q: usize, n_q: usize, orientation_matches: bool) -> usize {
    if orientation_matches {
        q
    } else {
        n_q - 1 - q
    }
}
