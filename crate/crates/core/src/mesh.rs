//! Triangulation, mesh skeleton, boundary tagging, rock properties, and
//! degree-of-freedom bookkeeping.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Per-element permeability, scalar or symmetric 2x2 tensor (SI, m^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Permeability {
    Scalar(f64),
    Tensor { kxx: f64, kxy: f64, kyy: f64 },
}

impl Permeability {
    pub fn tensor(&self) -> [[f64; 2]; 2] {
        match *self {
            Permeability::Scalar(k) => [[k, 0.0], [0.0, k]],
            Permeability::Tensor { kxx, kxy, kyy } => [[kxx, kxy], [kxy, kyy]],
        }
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, d]] = self.tensor();
        let det = a * d - b * b;
        [[d / det, -b / det], [-b / det, a / det]]
    }

    /// n . K n for a unit vector n.
    pub fn normal_component(&self, n: [f64; 2]) -> f64 {
        let k = self.tensor();
        n[0] * (k[0][0] * n[0] + k[0][1] * n[1]) + n[1] * (k[1][0] * n[0] + k[1][1] * n[1])
    }

    pub fn is_spd(&self) -> bool {
        let [[a, b], [_, d]] = self.tensor();
        a > 0.0 && a * d - b * b > 0.0
    }
}

/// Triangulation with per-element rock properties. Vertices in meters,
/// triangles counter-clockwise.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub element_perm: Vec<Permeability>,
    pub element_poro: Vec<f64>,
    /// Tagged boundary edges as (sorted vertex pair, tag).
    pub boundary_edges: Vec<([usize; 2], u32)>,
}

pub fn signed_area(v0: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> f64 {
    0.5 * ((v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]))
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(e);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.triangle_vertices(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::config(format!(
                    "triangle {i} references vertex out of range"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::config(format!("triangle {i} repeats a vertex")));
            }
            if self.element_area(i) <= 0.0 {
                return Err(Error::config(format!(
                    "triangle {i} is degenerate or clockwise (area {})",
                    self.element_area(i)
                )));
            }
        }
        for (i, p) in self.element_perm.iter().enumerate() {
            if !p.is_spd() {
                return Err(Error::config(format!(
                    "element {i} permeability is not positive definite"
                )));
            }
        }
        for (i, &phi) in self.element_poro.iter().enumerate() {
            if !(phi > 0.0 && phi <= 1.0) {
                return Err(Error::config(format!(
                    "element {i} porosity {phi} not in (0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform mesh of an Lx x Ly rectangle: N x N squares, each split by the
/// lower-left to upper-right diagonal, 2 N^2 elements. Boundary tags:
/// 1 = left, 2 = right, 3 = bottom, 4 = top.
pub fn structured_mesh(n: usize, lx: f64, ly: f64) -> Result<Mesh> {
    structured_mesh_rect(n, n, lx, ly)
}

/// Uniform mesh with independent cell counts per direction: 2 nx ny elements.
pub fn structured_mesh_rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh> {
    if nx < 1 || ny < 1 {
        return Err(Error::config("structured mesh needs at least 1 cell per direction"));
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::config("domain dimensions must be positive"));
    }
    let np = nx + 1;
    let mut vertices = Vec::with_capacity(np * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let vid = |i: usize, j: usize| j * np + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for j in 0..ny {
        boundary_edges.push((sorted_pair(vid(0, j), vid(0, j + 1)), 1));
        boundary_edges.push((sorted_pair(vid(nx, j), vid(nx, j + 1)), 2));
    }
    for i in 0..nx {
        boundary_edges.push((sorted_pair(vid(i, 0), vid(i + 1, 0)), 3));
        boundary_edges.push((sorted_pair(vid(i, ny), vid(i + 1, ny)), 4));
    }
    let ne = triangles.len();
    Ok(Mesh {
        vertices,
        triangles,
        element_perm: vec![Permeability::Scalar(1.0); ne],
        element_poro: vec![0.2; ne],
        boundary_edges,
    })
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Boundary-condition kind of one edge for one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// Fields that carry their own boundary partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Pressure,
    Wetting,
    LightOil,
}

/// Per-field map from boundary tag to BC kind. Every tag present in the mesh
/// must be classified for every field.
#[derive(Debug, Clone, Default)]
pub struct BoundarySpec {
    pub pressure: BTreeMap<u32, BcKind>,
    pub wetting: BTreeMap<u32, BcKind>,
    pub light_oil: BTreeMap<u32, BcKind>,
}

impl BoundarySpec {
    pub fn field(&self, f: Field) -> &BTreeMap<u32, BcKind> {
        match f {
            Field::Pressure => &self.pressure,
            Field::Wetting => &self.wetting,
            Field::LightOil => &self.light_oil,
        }
    }

    /// Same kind for every field, per tag list.
    pub fn uniform(tags: &[(u32, BcKind)]) -> Self {
        let map: BTreeMap<u32, BcKind> = tags.iter().copied().collect();
        BoundarySpec {
            pressure: map.clone(),
            wetting: map.clone(),
            light_oil: map,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeIncidence {
    pub element: usize,
    pub local_edge: usize,
    /// True when the local edge direction (vertex e to vertex (e+1)%3) agrees
    /// with the global edge direction (low vertex id to high vertex id).
    pub orientation_matches: bool,
}

/// Unique-edge structure of the triangulation with boundary classification.
#[derive(Debug, Clone)]
pub struct Skeleton {
    /// Unique edges as ascending vertex-id pairs.
    pub edges: Vec<[usize; 2]>,
    /// One or two incidences per edge, in element-discovery order.
    pub edge_to_elements: Vec<(EdgeIncidence, Option<EdgeIncidence>)>,
    /// Global edge index of each local edge, per element.
    pub element_edges: Vec<[usize; 3]>,
    /// Outward unit normal per (element, local edge).
    pub normals: Vec<[[f64; 2]; 3]>,
    /// Edge lengths, per global edge.
    pub edge_lengths: Vec<f64>,
    /// Boundary tag per edge (None on interior edges).
    pub boundary_tag: Vec<Option<u32>>,
    pub bc: BoundarySpec,
}

impl Skeleton {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary(&self, edge: usize) -> bool {
        self.boundary_tag[edge].is_some()
    }

    pub fn is_dirichlet(&self, edge: usize, field: Field) -> bool {
        match self.boundary_tag[edge] {
            None => false,
            Some(tag) => matches!(self.bc.field(field).get(&tag), Some(BcKind::Dirichlet)),
        }
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.boundary_tag.iter().filter(|t| t.is_some()).count()
    }
}

/// Build the skeleton: unique edges, incidences, normals, and the per-field
/// boundary classification.
pub fn build_skeleton(mesh: &Mesh, bc: &BoundarySpec) -> Result<Skeleton> {
    mesh.validate()?;
    let mut edge_ids: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut incid: Vec<(EdgeIncidence, Option<EdgeIncidence>)> = Vec::new();
    let mut element_edges = vec![[usize::MAX; 3]; mesh.n_elements()];
    let mut normals = vec![[[0.0; 2]; 3]; mesh.n_elements()];

    for (el, tri) in mesh.triangles.iter().enumerate() {
        let coords = mesh.triangle_vertices(el);
        for le in 0..3 {
            let (a, b) = (tri[le], tri[(le + 1) % 3]);
            let key = sorted_pair(a, b);
            let id = match edge_ids.get(&key) {
                Some(&id) => {
                    if incid[id].1.is_some() {
                        return Err(Error::config(format!(
                            "edge {}-{} is shared by more than two elements",
                            key[0], key[1]
                        )));
                    }
                    incid[id].1 = Some(EdgeIncidence {
                        element: el,
                        local_edge: le,
                        orientation_matches: a == key[0],
                    });
                    id
                }
                None => {
                    edges.push(key);
                    incid.push((
                        EdgeIncidence {
                            element: el,
                            local_edge: le,
                            orientation_matches: a == key[0],
                        },
                        None,
                    ));
                    let id = edges.len() - 1;
                    edge_ids.insert(key, id);
                    id
                }
            };
            element_edges[el][le] = id;
            // Outward normal of a CCW triangle along the directed edge a->b.
            let (pa, pb) = (coords[le], coords[(le + 1) % 3]);
            let (ex, ey) = (pb[0] - pa[0], pb[1] - pa[1]);
            let len = (ex * ex + ey * ey).sqrt();
            normals[el][le] = [ey / len, -ex / len];
        }
    }

    let edge_lengths: Vec<f64> = edges
        .iter()
        .map(|&[a, b]| {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
        })
        .collect();

    let tag_map: BTreeMap<[usize; 2], u32> = mesh.boundary_edges.iter().copied().collect();
    let mut boundary_tag = vec![None; edges.len()];
    for (id, e) in edges.iter().enumerate() {
        if incid[id].1.is_none() {
            match tag_map.get(e) {
                Some(&tag) => boundary_tag[id] = Some(tag),
                None => {
                    return Err(Error::config(format!(
                        "boundary edge {}-{} carries no tag",
                        e[0], e[1]
                    )))
                }
            }
        }
    }

    // Every boundary tag must be classified for every field.
    let tags: std::collections::BTreeSet<u32> = boundary_tag.iter().flatten().copied().collect();
    for (name, map) in [
        ("pressure", &bc.pressure),
        ("s_w", &bc.wetting),
        ("s_g", &bc.light_oil),
    ] {
        for tag in &tags {
            if !map.contains_key(tag) {
                return Err(Error::config(format!(
                    "boundary tag {tag} has no {name} boundary condition"
                )));
            }
        }
    }

    Ok(Skeleton {
        edges,
        edge_to_elements: incid,
        element_edges,
        normals,
        edge_lengths,
        boundary_tag,
        bc: bc.clone(),
    })
}

/// Degree-of-freedom comparison between a classical DG discretization and
/// the condensed HDG trace system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofCounts {
    pub dg_dofs: usize,
    pub hdg_trace_dofs: usize,
    pub ratio: f64,
}

pub fn dof_counts(mesh: &Mesh, skeleton: &Skeleton, k: usize) -> DofCounts {
    let dg = mesh.n_elements() * (k + 2) * (k + 1) / 2;
    let tr = skeleton.n_edges() * (k + 1);
    DofCounts {
        dg_dofs: dg,
        hdg_trace_dofs: tr,
        ratio: dg as f64 / tr as f64,
    }
}

/// Scenario descriptor for per-element rock assignment. Membership is decided
/// by the element centroid.
#[derive(Debug, Clone)]
pub enum RockScenario {
    Constant {
        perm: f64,
    },
    Lens {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        k_in: f64,
        k_out: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        radius: f64,
        k_in: f64,
        k_out: f64,
    },
    Random {
        k_min: f64,
        k_max: f64,
        seed: u64,
    },
    /// Mask rows run top to bottom over the domain, columns left to right.
    Checkerboard {
        mask: Vec<Vec<bool>>,
        lx: f64,
        ly: f64,
        k_low: f64,
        k_high: f64,
    },
}

/// Assign permeability and porosity per scenario. Returns the updated mesh.
pub fn assign_rock(mut mesh: Mesh, scenario: &RockScenario, porosity: f64) -> Result<Mesh> {
    if !(porosity > 0.0 && porosity <= 1.0) {
        return Err(Error::config(format!("porosity {porosity} not in (0,1]")));
    }
    let ne = mesh.n_elements();
    let perms: Vec<Permeability> = match scenario {
        RockScenario::Constant { perm } => {
            if *perm <= 0.0 {
                return Err(Error::config("constant permeability must be positive"));
            }
            vec![Permeability::Scalar(*perm); ne]
        }
        RockScenario::Lens {
            x0,
            x1,
            y0,
            y1,
            k_in,
            k_out,
        } => {
            if x1 <= x0 || y1 <= y0 {
                return Err(Error::config("lens box is empty"));
            }
            (0..ne)
                .map(|e| {
                    let c = mesh.centroid(e);
                    let inside = c[0] >= *x0 && c[0] <= *x1 && c[1] >= *y0 && c[1] <= *y1;
                    Permeability::Scalar(if inside { *k_in } else { *k_out })
                })
                .collect()
        }
        RockScenario::Disk {
            cx,
            cy,
            radius,
            k_in,
            k_out,
        } => {
            if *radius <= 0.0 {
                return Err(Error::config("disk radius must be positive"));
            }
            (0..ne)
                .map(|e| {
                    let c = mesh.centroid(e);
                    let r2 = (c[0] - cx).powi(2) + (c[1] - cy).powi(2);
                    Permeability::Scalar(if r2 <= radius * radius { *k_in } else { *k_out })
                })
                .collect()
        }
        RockScenario::Random { k_min, k_max, seed } => {
            if !(*k_min > 0.0 && *k_max > *k_min) {
                return Err(Error::config("random permeability needs 0 < k_min < k_max"));
            }
            // Log-uniform because permeability spans many decades.
            let (lo, hi) = (k_min.log10(), k_max.log10());
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..ne)
                .map(|_| {
                    let u: f64 = rng.random();
                    Permeability::Scalar(10f64.powf(lo + u * (hi - lo)))
                })
                .collect()
        }
        RockScenario::Checkerboard {
            mask,
            lx,
            ly,
            k_low,
            k_high,
        } => {
            if mask.is_empty() || mask[0].is_empty() {
                return Err(Error::config("checkerboard mask is empty"));
            }
            let rows = mask.len();
            let cols = mask[0].len();
            if mask.iter().any(|r| r.len() != cols) {
                return Err(Error::config("checkerboard mask rows have unequal lengths"));
            }
            (0..ne)
                .map(|e| {
                    let c = mesh.centroid(e);
                    let col = ((c[0] / lx * cols as f64) as usize).min(cols - 1);
                    // Row 0 of the mask is the top of the domain.
                    let row_from_bottom = ((c[1] / ly * rows as f64) as usize).min(rows - 1);
                    let row = rows - 1 - row_from_bottom;
                    Permeability::Scalar(if mask[row][col] { *k_low } else { *k_high })
                })
                .collect()
        }
    };
    mesh.element_perm = perms;
    mesh.element_poro = vec![porosity; ne];
    Ok(mesh)
}

/// Write the mesh in the plain-text format:
/// line 1 `nv nt nb`; nv lines `x y`; nt lines `v0 v1 v2`; nb lines `v0 v1 tag`.
pub fn save_mesh(mesh: &Mesh, path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.boundary_edges.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.16e} {:.16e}", v[0], v[1]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    for (e, tag) in &mesh.boundary_edges {
        let _ = writeln!(out, "{} {} {}", e[0], e[1], tag);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a mesh from the text format. Clockwise triangles are reoriented when
/// `auto_reorient` is set, otherwise they are an error.
pub fn load_mesh(path: &std::path::Path, auto_reorient: bool) -> Result<Mesh> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pstr = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse {
        path: pstr.clone(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty mesh file".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(hline, format!("bad header: {e}")))?;
    if counts.len() != 3 {
        return Err(perr(hline, "header must be `nv nt nb`".into()));
    }
    let (nv, nt, nb) = (counts[0], counts[1], counts[2]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, "unexpected end of file in vertex block".into()))?;
        let xy: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(ln, format!("bad vertex: {e}")))?;
        if xy.len() != 2 {
            return Err(perr(ln, "vertex line must be `x y`".into()));
        }
        vertices.push([xy[0], xy[1]]);
    }

    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, "unexpected end of file in triangle block".into()))?;
        let ids: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(ln, format!("bad triangle: {e}")))?;
        if ids.len() != 3 {
            return Err(perr(ln, "triangle line must be `v0 v1 v2`".into()));
        }
        if ids.iter().any(|&v| v >= nv) {
            return Err(perr(ln, "triangle vertex id out of range".into()));
        }
        if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
            return Err(perr(ln, "triangle repeats a vertex id".into()));
        }
        let mut t = [ids[0], ids[1], ids[2]];
        let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        if area == 0.0 {
            return Err(perr(ln, "triangle has zero area".into()));
        }
        if area < 0.0 {
            if auto_reorient {
                t.swap(1, 2);
            } else {
                return Err(perr(
                    ln,
                    "triangle is clockwise (set auto-reorient to fix)".into(),
                ));
            }
        }
        triangles.push(t);
    }

    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, "unexpected end of file in boundary block".into()))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(perr(ln, "boundary line must be `v0 v1 tag`".into()));
        }
        let a: usize = toks[0]
            .parse()
            .map_err(|e| perr(ln, format!("bad boundary vertex: {e}")))?;
        let b: usize = toks[1]
            .parse()
            .map_err(|e| perr(ln, format!("bad boundary vertex: {e}")))?;
        let tag: u32 = toks[2]
            .parse()
            .map_err(|e| perr(ln, format!("bad boundary tag: {e}")))?;
        if a >= nv || b >= nv {
            return Err(perr(ln, "boundary vertex id out of range".into()));
        }
        boundary_edges.push((sorted_pair(a, b), tag));
    }

    let ne = triangles.len();
    let mesh = Mesh {
        vertices,
        triangles,
        element_perm: vec![Permeability::Scalar(1.0); ne],
        element_poro: vec![0.2; ne],
        boundary_edges,
    };
    mesh.validate()?;
    Ok(mesh)
}
