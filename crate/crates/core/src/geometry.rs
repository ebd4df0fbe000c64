//! Spatial domain: shapes, triangulation, boundary data and rotational symmetry.
//!
//! Meshes are built in raw coordinates (unit square `[0,1]²`, unit disk, annulus
//! with outer radius 1, L-shape made of three unit squares, or a user polygon)
//! and then mapped by [`normalize_domain`] to unit area and zero centroid.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// The rotation generator `[[0,-1],[1,0]]`.
pub const J: [[f64; 2]; 2] = [[0.0, -1.0], [1.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    UnitSquare,
    Disk,
    Annulus { r_inner: f64 },
    LShape,
    Polygon { vertices: Vec<Point> },
}

/// Accommodation coefficient as a function of the boundary arclength fraction `s ∈ [0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaProfile {
    Constant { value: f64 },
    /// `values[i]` holds on `[breaks[i-1], breaks[i])` with implicit end points 0 and 1.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    /// Smooth compactly supported bump around `center` of half-width `width`.
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
}

impl AlphaProfile {
    pub fn constant(value: f64) -> Self {
        AlphaProfile::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |a: f64| (0.0..=1.0).contains(&a);
        match self {
            AlphaProfile::Constant { value } => {
                if !in_unit(*value) {
                    return invalid(format!("accommodation coefficient {value} outside [0,1]"));
                }
            }
            AlphaProfile::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return invalid("piecewise profile needs one more value than breaks");
                }
                if values.iter().any(|a| !in_unit(*a)) {
                    return invalid("piecewise accommodation values must lie in [0,1]");
                }
                let mut last = 0.0;
                for &b in breaks {
                    if !(b > last && b < 1.0) {
                        return invalid("piecewise breaks must increase strictly inside (0,1)");
                    }
                    last = b;
                }
            }
            AlphaProfile::Bump {
                base,
                peak,
                center,
                width,
            } => {
                if !in_unit(*base) || !in_unit(*peak) {
                    return invalid("bump accommodation values must lie in [0,1]");
                }
                if !(0.0..1.0).contains(center) || !(*width > 0.0 && *width <= 0.5) {
                    return invalid("bump needs center in [0,1) and width in (0,0.5]");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            AlphaProfile::Constant { value } => *value,
            AlphaProfile::Piecewise { breaks, values } => {
                let i = breaks.iter().take_while(|&&b| s >= b).count();
                values[i]
            }
            AlphaProfile::Bump {
                base,
                peak,
                center,
                width,
            } => {
                let d = (s - center).rem_euclid(1.0);
                let d = d.min(1.0 - d) / width;
                let b = if d < 1.0 {
                    (1.0 - 1.0 / (1.0 - d * d)).exp()
                } else {
                    0.0
                };
                base + (peak - base) * b
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: Shape,
    pub alpha: AlphaProfile,
}

impl DomainSpec {
    pub fn new(shape: Shape, alpha: AlphaProfile) -> Self {
        Self { shape, alpha }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    /// Vertex pair, ordered so the domain lies on the left.
    pub v: [usize; 2],
    /// Outward unit normal (analytic on curved boundaries).
    pub normal: Point,
    pub length: f64,
    pub midpoint: Point,
    /// Arclength of the midpoint, measured along the loops in order.
    pub arclength: f64,
    pub alpha: f64,
    /// Cell adjacent to this edge.
    pub cell: usize,
}

/// Interior edge shared by two cells; `normal` points from `cells[0]` to `cells[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub v: [usize; 2],
    pub cells: [usize; 2],
    pub normal: Point,
    pub length: f64,
    pub midpoint: Point,
}

/// One of the three edges of a cell, seen from that cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellEdge {
    Interior {
        face: usize,
        neighbor: usize,
        /// Outward with respect to the owning cell.
        normal: Point,
        length: f64,
    },
    Boundary {
        edge: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
    pub faces: Vec<Face>,
    pub cell_edges: Vec<[CellEdge; 3]>,
    pub cell_areas: Vec<f64>,
    pub cell_centroids: Vec<Point>,
    /// Inscribed radius `2A/P` of each cell.
    pub inradius: Vec<f64>,
    pub total_area: f64,
    pub centroid: Point,
    pub boundary_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidFieldBasis {
    /// Frobenius-orthonormal skew matrices; in 2-D either empty or `J/√2`.
    pub basis: Vec<[[f64; 2]; 2]>,
    pub tolerance_used: f64,
    /// Largest `|(Jx)·n|` over boundary midpoints.
    pub max_normal_component: f64,
}

impl RigidFieldBasis {
    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Value of the field `A x` for basis element `i`.
    pub fn field(&self, i: usize, x: Point) -> Point {
        let a = &self.basis[i];
        [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn signed_area(p: Point, q: Point, r: Point) -> f64 {
    0.5 * cross(sub(q, p), sub(r, p))
}

pub fn build_mesh(spec: &DomainSpec, target_edge_length: f64) -> Result<Mesh> {
    let h = target_edge_length;
    if !(h > 0.0 && h.is_finite()) {
        return invalid("target edge length must be positive");
    }
    spec.alpha.validate()?;
    match &spec.shape {
        Shape::UnitSquare => {
            let n = (1.0 / h).ceil().max(1.0) as usize;
            let (v, t) = structured_grid(n, n, |_, _| true, 1.0 / n as f64);
            Mesh::assemble(v, t, &spec.alpha, None)
        }
        Shape::LShape => {
            let n = (1.0 / h).ceil().max(1.0) as usize;
            let (v, t) = structured_grid(2 * n, 2 * n, |i, j| i < n || j < n, 1.0 / n as f64);
            Mesh::assemble(v, t, &spec.alpha, None)
        }
        Shape::Disk => {
            let (v, t) = ring_mesh(0.0, 1.0, h);
            let radial = |m: Point| [m[0] / norm(m), m[1] / norm(m)];
            Mesh::assemble(v, t, &spec.alpha, Some(&radial))
        }
        Shape::Annulus { r_inner } => {
            if !(*r_inner > 0.0 && *r_inner < 1.0) {
                return invalid(format!(
                    "annulus inner radius {r_inner} must lie strictly between 0 and the outer radius 1"
                ));
            }
            let (v, t) = ring_mesh(*r_inner, 1.0, h);
            let radial = |m: Point| [m[0] / norm(m), m[1] / norm(m)];
            Mesh::assemble(v, t, &spec.alpha, Some(&radial))
        }
        Shape::Polygon { vertices } => {
            validate_polygon(vertices)?;
            let (v, t) = polygon_mesh(vertices, h);
            Mesh::assemble(v, t, &spec.alpha, None)
        }
    }
}

/// Structured grid of `nx × ny` squares of side `a`; `keep(i,j)` selects squares.
/// Diagonals alternate so neighbouring cells are mirror images of each other.
fn structured_grid(
    nx: usize,
    ny: usize,
    keep: impl Fn(usize, usize) -> bool,
    a: f64,
) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut id = |i: usize, j: usize, vertices: &mut Vec<Point>| {
        let k = j * (nx + 1) + i;
        if index[k] == usize::MAX {
            index[k] = vertices.len();
            vertices.push([i as f64 * a, j as f64 * a]);
        }
        index[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let p = id(i, j, &mut vertices);
            let q = id(i + 1, j, &mut vertices);
            let r = id(i + 1, j + 1, &mut vertices);
            let s = id(i, j + 1, &mut vertices);
            if (i + j) % 2 == 0 {
                triangles.push([p, q, r]);
                triangles.push([p, r, s]);
            } else {
                triangles.push([p, q, s]);
                triangles.push([q, r, s]);
            }
        }
    }
    (vertices, triangles)
}

/// Concentric-ring triangulation of `r0 ≤ |x| ≤ r1` (a disk when `r0 = 0`).
fn ring_mesh(r0: f64, r1: f64, h: f64) -> (Vec<Point>, Vec<[usize; 3]>) {
    let rings = ((r1 - r0) / h).ceil().max(1.0) as usize;
    let mut vertices: Vec<Point> = Vec::new();
    let mut ring_ids: Vec<Vec<usize>> = Vec::new();
    for k in 0..=rings {
        let r = r0 + (r1 - r0) * k as f64 / rings as f64;
        let count = if r == 0.0 {
            1
        } else if r0 == 0.0 {
            6 * k
        } else {
            ((2.0 * PI * r / h).round() as usize).max(6)
        };
        // Half-step twist between consecutive rings improves the triangle shapes.
        let shift = if r0 == 0.0 { 0.0 } else { 0.5 * (k % 2) as f64 };
        let ids = (0..count)
            .map(|j| {
                let t = 2.0 * PI * (j as f64 + shift) / count as f64;
                vertices.push(if r == 0.0 { [0.0, 0.0] } else { [r * t.cos(), r * t.sin()] });
                vertices.len() - 1
            })
            .collect();
        ring_ids.push(ids);
    }
    let mut triangles = Vec::new();
    for k in 1..=rings {
        let inner = &ring_ids[k - 1];
        let outer = &ring_ids[k];
        let (ni, no) = (inner.len(), outer.len());
        if ni == 1 {
            for j in 0..no {
                triangles.push([inner[0], outer[j], outer[(j + 1) % no]]);
            }
            continue;
        }
        let shift_in = if r0 == 0.0 { 0.0 } else { 0.5 * ((k - 1) % 2) as f64 };
        let shift_out = if r0 == 0.0 { 0.0 } else { 0.5 * (k % 2) as f64 };
        let angle_in = |i: usize| (i as f64 + shift_in) / ni as f64;
        let angle_out = |j: usize| (j as f64 + shift_out) / no as f64;
        // Merge the two angular sequences; start both at their first nodes.
        let (mut i, mut j) = (0usize, 0usize);
        while i < ni || j < no {
            let advance_outer = if i == ni {
                true
            } else if j == no {
                false
            } else {
                angle_out(j + 1) <= angle_in(i + 1)
            };
            if advance_outer {
                triangles.push([inner[i % ni], outer[j % no], outer[(j + 1) % no]]);
                j += 1;
            } else {
                triangles.push([inner[i % ni], outer[j % no], inner[(i + 1) % ni]]);
                i += 1;
            }
        }
    }
    (vertices, triangles)
}

fn validate_polygon(p: &[Point]) -> Result<()> {
    let n = p.len();
    if n < 3 {
        return invalid("polygon needs at least three vertices");
    }
    if p.iter().flatten().any(|c| !c.is_finite()) {
        return invalid("polygon has non-finite coordinates");
    }
    let scale = p.iter().map(|q| norm(*q)).fold(1.0, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            if norm(sub(p[i], p[j])) <= 1e-12 * scale {
                return invalid(format!("polygon repeats vertex {i} at index {j}"));
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return invalid("polygon is not simple");
            }
        }
    }
    let area: f64 = (0..n).map(|i| cross(p[i], p[(i + 1) % n])).sum::<f64>() * 0.5;
    if area <= 0.0 {
        return invalid("polygon must be positively oriented");
    }
    Ok(())
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| cross(sub(q, p), sub(r, p));
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| {
        o(p, q, r) == 0.0
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    on(c, d, a) || on(c, d, b) || on(a, b, c) || on(a, b, d)
}

/// Coarse triangulation (fan from the vertex average for convex polygons,
/// ear clipping otherwise) followed by uniform `N²` subdivision.
fn polygon_mesh(p: &[Point], h: f64) -> (Vec<Point>, Vec<[usize; 3]>) {
    let n = p.len();
    let convex = (0..n).all(|i| signed_area(p[i], p[(i + 1) % n], p[(i + 2) % n]) > 0.0);
    let mut coarse_v: Vec<Point> = p.to_vec();
    let mut coarse_t: Vec<[usize; 3]> = Vec::new();
    if convex {
        let c = [
            p.iter().map(|q| q[0]).sum::<f64>() / n as f64,
            p.iter().map(|q| q[1]).sum::<f64>() / n as f64,
        ];
        coarse_v.push(c);
        for i in 0..n {
            coarse_t.push([n, i, (i + 1) % n]);
        }
    } else {
        let mut ring: Vec<usize> = (0..n).collect();
        while ring.len() > 3 {
            let m = ring.len();
            let ear = (0..m)
                .find(|&k| {
                    let (a, b, c) = (ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]);
                    signed_area(p[a], p[b], p[c]) > 0.0
                        && ring.iter().all(|&q| {
                            q == a || q == b || q == c || !point_in_triangle(p[q], p[a], p[b], p[c])
                        })
                })
                .expect("simple polygon always has an ear");
            let (a, b, c) = (ring[(ear + m - 1) % m], ring[ear], ring[(ear + 1) % m]);
            coarse_t.push([a, b, c]);
            ring.remove(ear);
        }
        coarse_t.push([ring[0], ring[1], ring[2]]);
    }
    let longest = coarse_t
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
        .map(|(a, b)| norm(sub(coarse_v[a], coarse_v[b])))
        .fold(0.0, f64::max);
    let div = (longest / h).ceil().max(1.0) as usize;
    subdivide(&coarse_v, &coarse_t, div)
}

fn point_in_triangle(q: Point, a: Point, b: Point, c: Point) -> bool {
    signed_area(a, b, q) >= 0.0 && signed_area(b, c, q) >= 0.0 && signed_area(c, a, q) >= 0.0
}

#[derive(Hash, PartialEq, Eq)]
enum SubKey {
    Corner(usize),
    Edge(usize, usize, usize),
    Inner(usize, usize, usize),
}

fn subdivide(cv: &[Point], ct: &[[usize; 3]], div: usize) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut map: HashMap<SubKey, usize> = HashMap::new();
    let mut vertices: Vec<Point> = Vec::new();
    let mut triangles = Vec::new();
    let nd = div as f64;
    for (ti, t) in ct.iter().enumerate() {
        // Local lattice point (i, j) = A + i/N (B − A) + j/N (C − A).
        let mut local = vec![vec![0usize; div + 1]; div + 1];
        for i in 0..=div {
            for j in 0..=div - i {
                let k = div - i - j;
                let key = if i == div {
                    SubKey::Corner(t[1])
                } else if j == div {
                    SubKey::Corner(t[2])
                } else if k == div {
                    SubKey::Corner(t[0])
                } else if j == 0 {
                    edge_key(t[0], t[1], i, div)
                } else if i == 0 {
                    edge_key(t[0], t[2], j, div)
                } else if k == 0 {
                    edge_key(t[1], t[2], j, div)
                } else {
                    SubKey::Inner(ti, i, j)
                };
                let coords = match key {
                    SubKey::Corner(c) => cv[c],
                    SubKey::Edge(a, b, s) => {
                        let f = s as f64 / nd;
                        [
                            cv[a][0] + f * (cv[b][0] - cv[a][0]),
                            cv[a][1] + f * (cv[b][1] - cv[a][1]),
                        ]
                    }
                    SubKey::Inner(..) => {
                        let (a, b, c) = (cv[t[0]], cv[t[1]], cv[t[2]]);
                        let (fi, fj) = (i as f64 / nd, j as f64 / nd);
                        [
                            a[0] + fi * (b[0] - a[0]) + fj * (c[0] - a[0]),
                            a[1] + fi * (b[1] - a[1]) + fj * (c[1] - a[1]),
                        ]
                    }
                };
                let id = *map.entry(key).or_insert_with(|| {
                    vertices.push(coords);
                    vertices.len() - 1
                });
                local[i][j] = id;
            }
        }
        for i in 0..div {
            for j in 0..div - i {
                triangles.push([local[i][j], local[i + 1][j], local[i][j + 1]]);
                if i + j + 1 < div {
                    triangles.push([local[i + 1][j], local[i + 1][j + 1], local[i][j + 1]]);
                }
            }
        }
    }
    (vertices, triangles)
}

fn edge_key(a: usize, b: usize, s: usize, div: usize) -> SubKey {
    if a < b {
        SubKey::Edge(a, b, s)
    } else {
        SubKey::Edge(b, a, div - s)
    }
}

impl Mesh {
    /// Builds topology and geometry from raw vertices and triangles. Triangles are
    /// reoriented counter-clockwise. `analytic_normal` overrides the polyline normal
    /// (its sign is aligned with the outward polyline normal).
    pub fn assemble(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        alpha: &AlphaProfile,
        analytic_normal: Option<&dyn Fn(Point) -> Point>,
    ) -> Result<Mesh> {
        for t in triangles.iter_mut() {
            if t.iter().any(|&k| k >= vertices.len()) {
                return invalid("triangle references a missing vertex");
            }
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a < 0.0 {
                t.swap(1, 2);
            } else if a == 0.0 {
                return invalid("degenerate triangle");
            }
        }
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (c, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                if owner.insert((t[k], t[(k + 1) % 3]), c).is_some() {
                    return invalid("non-manifold or duplicated triangle edge");
                }
            }
        }
        // Boundary edges: directed edges with no reverse twin, domain on the left.
        let mut bnd: Vec<([usize; 2], usize)> = Vec::new();
        for (c, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if !owner.contains_key(&(b, a)) {
                    bnd.push(([a, b], c));
                }
            }
        }
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (i, (v, _)) in bnd.iter().enumerate() {
            if next.insert(v[0], i).is_some() {
                return invalid("boundary is not a union of simple closed loops");
            }
        }
        // Chain boundary edges into loops, each starting at its lowest vertex.
        let mut visited = vec![false; bnd.len()];
        let mut loops: Vec<Vec<usize>> = Vec::new();
        let key = |i: usize| {
            let p = vertices[bnd[i].0[0]];
            (p[1], p[0])
        };
        let mut order: Vec<usize> = (0..bnd.len()).collect();
        order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
        for &start in &order {
            if visited[start] {
                continue;
            }
            let mut lp = Vec::new();
            let mut e = start;
            loop {
                if visited[e] {
                    if e != start {
                        return invalid("boundary loop does not close");
                    }
                    break;
                }
                visited[e] = true;
                lp.push(e);
                let end = bnd[e].0[1];
                e = match next.get(&end) {
                    Some(&n) => n,
                    None => return invalid("boundary loop does not close"),
                };
            }
            loops.push(lp);
        }
        let loop_len = |lp: &Vec<usize>| -> f64 {
            lp.iter()
                .map(|&e| norm(sub(vertices[bnd[e].0[1]], vertices[bnd[e].0[0]])))
                .sum()
        };
        loops.sort_by(|a, b| loop_len(b).partial_cmp(&loop_len(a)).unwrap());

        let mut boundary = Vec::with_capacity(bnd.len());
        let mut s = 0.0;
        for lp in &loops {
            for &e in lp {
                let ([a, b], cell) = bnd[e];
                let d = sub(vertices[b], vertices[a]);
                let length = norm(d);
                let poly = [d[1] / length, -d[0] / length];
                let midpoint = [
                    0.5 * (vertices[a][0] + vertices[b][0]),
                    0.5 * (vertices[a][1] + vertices[b][1]),
                ];
                let normal = match analytic_normal {
                    Some(f) => {
                        let n = f(midpoint);
                        let l = norm(n);
                        let n = [n[0] / l, n[1] / l];
                        if n[0] * poly[0] + n[1] * poly[1] < 0.0 {
                            [-n[0], -n[1]]
                        } else {
                            n
                        }
                    }
                    None => poly,
                };
                boundary.push(BoundaryEdge {
                    v: [a, b],
                    normal,
                    length,
                    midpoint,
                    arclength: s + 0.5 * length,
                    alpha: 0.0,
                    cell,
                });
                s += length;
            }
        }
        let total = s;
        for e in boundary.iter_mut() {
            e.alpha = alpha.eval(e.arclength / total);
        }
        let mut mesh = Mesh {
            vertices,
            triangles,
            boundary,
            faces: Vec::new(),
            cell_edges: Vec::new(),
            cell_areas: Vec::new(),
            cell_centroids: Vec::new(),
            inradius: Vec::new(),
            total_area: 0.0,
            centroid: [0.0, 0.0],
            boundary_length: 0.0,
        };
        mesh.rebuild_geometry();
        Ok(mesh)
    }

    /// Recomputes every derived geometric quantity from vertices, triangles and
    /// boundary connectivity. Boundary normals and α values are kept.
    fn rebuild_geometry(&mut self) {
        let nc = self.triangles.len();
        let v = &self.vertices;
        self.cell_areas = self
            .triangles
            .iter()
            .map(|t| signed_area(v[t[0]], v[t[1]], v[t[2]]))
            .collect();
        self.cell_centroids = self
            .triangles
            .iter()
            .map(|t| {
                [
                    (v[t[0]][0] + v[t[1]][0] + v[t[2]][0]) / 3.0,
                    (v[t[0]][1] + v[t[1]][1] + v[t[2]][1]) / 3.0,
                ]
            })
            .collect();
        self.total_area = self.cell_areas.iter().sum();
        let mut c = [0.0, 0.0];
        for (a, x) in self.cell_areas.iter().zip(&self.cell_centroids) {
            c[0] += a * x[0];
            c[1] += a * x[1];
        }
        self.centroid = [c[0] / self.total_area, c[1] / self.total_area];

        let mut bmap: HashMap<(usize, usize), usize> = HashMap::new();
        let mut s = 0.0;
        for (i, e) in self.boundary.iter_mut().enumerate() {
            let (a, b) = (v[e.v[0]], v[e.v[1]]);
            e.length = norm(sub(b, a));
            e.midpoint = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            e.arclength = s + 0.5 * e.length;
            s += e.length;
            bmap.insert((e.v[0], e.v[1]), i);
        }
        self.boundary_length = s;

        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (ci, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                owner.insert((t[k], t[(k + 1) % 3]), ci);
            }
        }
        self.faces.clear();
        let mut face_of: HashMap<(usize, usize), usize> = HashMap::new();
        let placeholder = CellEdge::Boundary { edge: usize::MAX };
        self.cell_edges = vec![[placeholder; 3]; nc];
        self.inradius = vec![0.0; nc];
        for ci in 0..nc {
            let t = self.triangles[ci];
            let mut perimeter = 0.0;
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let d = sub(v[b], v[a]);
                let length = norm(d);
                perimeter += length;
                let normal = [d[1] / length, -d[0] / length];
                self.cell_edges[ci][k] = if let Some(&be) = bmap.get(&(a, b)) {
                    CellEdge::Boundary { edge: be }
                } else {
                    let neighbor = owner[&(b, a)];
                    let face = *face_of.entry((a.min(b), a.max(b))).or_insert_with(|| {
                        self.faces.push(Face {
                            v: [a, b],
                            cells: [ci, neighbor],
                            normal,
                            length,
                            midpoint: [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])],
                        });
                        self.faces.len() - 1
                    });
                    CellEdge::Interior {
                        face,
                        neighbor,
                        normal,
                        length,
                    }
                };
            }
            self.inradius[ci] = 2.0 * self.cell_areas[ci] / perimeter;
        }
    }

    pub fn n_cells(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn h_min(&self) -> f64 {
        self.inradius.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Longest edge length.
    pub fn h_max(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| norm(sub(self.vertices[a], self.vertices[b])))
            .fold(0.0, f64::max)
    }

    /// True when every boundary edge is purely specular.
    pub fn alpha_is_zero(&self) -> bool {
        self.boundary.iter().all(|e| e.alpha == 0.0)
    }

    /// Replaces the accommodation samples using a new profile.
    pub fn with_alpha(&self, alpha: &AlphaProfile) -> Result<Mesh> {
        alpha.validate()?;
        let mut m = self.clone();
        for e in m.boundary.iter_mut() {
            e.alpha = alpha.eval(e.arclength / self.boundary_length);
        }
        Ok(m)
    }

    /// Sum over boundary edges of `(b·n) |e|` for each coordinate direction `b`.
    pub fn normal_flux_balance(&self) -> Point {
        let mut s = [0.0, 0.0];
        for e in &self.boundary {
            s[0] += e.normal[0] * e.length;
            s[1] += e.normal[1] * e.length;
        }
        s
    }

    pub fn to_json(&self) -> MeshJson {
        MeshJson {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary: self
                .boundary
                .iter()
                .map(|e| BoundaryJson {
                    v: e.v,
                    n: e.normal,
                    alpha: e.alpha,
                })
                .collect(),
        }
    }

    pub fn from_json(json: &MeshJson) -> Result<Mesh> {
        let lookup: HashMap<(usize, usize), (Point, f64)> = json
            .boundary
            .iter()
            .map(|b| ((b.v[0], b.v[1]), (b.n, b.alpha)))
            .collect();
        let mut mesh = Mesh::assemble(
            json.vertices.clone(),
            json.triangles.clone(),
            &AlphaProfile::constant(0.0),
            None,
        )?;
        if lookup.len() != mesh.boundary.len() {
            return invalid("boundary list does not match the triangulation");
        }
        for e in mesh.boundary.iter_mut() {
            let (n, a) = lookup
                .get(&(e.v[0], e.v[1]))
                .ok_or_else(|| Error::Invalid(format!("missing boundary edge {:?}", e.v)))?;
            if !(0.0..=1.0).contains(a) {
                return invalid("accommodation coefficient outside [0,1]");
            }
            let l = norm(*n);
            if (l - 1.0).abs() > 1e-9 {
                return invalid("boundary normal is not a unit vector");
            }
            e.normal = [n[0] / l, n[1] / l];
            e.alpha = *a;
        }
        Ok(mesh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryJson {
    pub v: [usize; 2],
    pub n: Point,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshJson {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryJson>,
}

/// Scales by `1/√|Ω|` and translates the centroid to the origin.
pub fn normalize_domain(mesh: &Mesh) -> Mesh {
    let s = 1.0 / mesh.total_area.sqrt();
    let c = mesh.centroid;
    let mut out = mesh.clone();
    for p in out.vertices.iter_mut() {
        *p = [(p[0] - c[0]) * s, (p[1] - c[1]) * s];
    }
    out.rebuild_geometry();
    out
}

/// Convenience: build and normalize.
pub fn build_normalized(spec: &DomainSpec, target_edge_length: f64) -> Result<Mesh> {
    Ok(normalize_domain(&build_mesh(spec, target_edge_length)?))
}

/// Detects the rotation generator as a rigid field tangent to the boundary.
pub fn rigid_fields(mesh: &Mesh, tol: f64) -> RigidFieldBasis {
    let worst = mesh
        .boundary
        .iter()
        .map(|e| {
            let x = e.midpoint;
            let jx = [-x[1], x[0]];
            (jx[0] * e.normal[0] + jx[1] * e.normal[1]).abs()
        })
        .fold(0.0, f64::max);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let basis = if worst <= tol {
        vec![[[0.0, -r], [r, 0.0]]]
    } else {
        Vec::new()
    };
    RigidFieldBasis {
        basis,
        tolerance_used: tol,
        max_normal_component: worst,
    }
}

/// [`rigid_fields`] with the default tolerance `1e-10 · |∂Ω|`.
pub fn rigid_fields_default(mesh: &Mesh) -> RigidFieldBasis {
    rigid_fields(mesh, 1e-10 * mesh.boundary_length)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: f64) -> Mesh {
        build_mesh(
            &DomainSpec::new(Shape::UnitSquare, AlphaProfile::constant(1.0)),
            h,
        )
        .unwrap()
    }

    #[test]
    fn square_half_has_eight_triangles() {
        let m = square(0.5);
        assert_eq!(m.n_cells(), 8);
        assert!((m.boundary_length - 4.0).abs() < 1e-14);
        assert_eq!(m.boundary.len(), 8);
        assert_eq!(m.boundary[0].v, [0, 1]);
    }

    #[test]
    fn disk_normals_are_radial() {
        let m = build_mesh(
            &DomainSpec::new(Shape::Disk, AlphaProfile::constant(0.0)),
            0.2,
        )
        .unwrap();
        for e in &m.boundary {
            let r = norm(e.midpoint);
            assert!((e.normal[0] - e.midpoint[0] / r).abs() < 1e-12);
            assert!((e.normal[1] - e.midpoint[1] / r).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_polygon_vertex_rejected() {
        let spec = DomainSpec::new(
            Shape::Polygon {
                vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            },
            AlphaProfile::constant(1.0),
        );
        assert!(build_mesh(&spec, 0.3).is_err());
    }

    #[test]
    fn clockwise_and_self_intersecting_polygons_rejected() {
        let cw = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        for v in [cw, bow] {
            let spec = DomainSpec::new(Shape::Polygon { vertices: v }, AlphaProfile::constant(1.0));
            assert!(build_mesh(&spec, 0.3).is_err());
        }
    }

    #[test]
    fn degenerate_annulus_rejected() {
        for r in [1.0, 1.5, 0.0] {
            let spec = DomainSpec::new(Shape::Annulus { r_inner: r }, AlphaProfile::constant(1.0));
            assert!(build_mesh(&spec, 0.2).is_err());
        }
    }

    #[test]
    fn normalized_square_is_centered() {
        let m = normalize_domain(&square(0.25));
        let lo = m.vertices.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = m.vertices.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 0.5).abs() < 1e-14 && (hi - 0.5).abs() < 1e-14);
        assert!((m.total_area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_disk_radius() {
        let m = build_normalized(&DomainSpec::new(Shape::Disk, AlphaProfile::constant(0.0)), 0.1)
            .unwrap();
        // Polygonal area differs from π; compare with the inscribed polygon radius.
        let rmax = m.vertices.iter().map(|p| norm(*p)).fold(0.0, f64::max);
        let nb = m.boundary.len() as f64;
        let poly_area = 0.5 * nb * (2.0 * PI / nb).sin();
        assert!((rmax - 1.0 / poly_area.sqrt()).abs() < 1e-12);
        assert!((rmax - 1.0 / PI.sqrt()).abs() < 2e-3);
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = build_normalized(
            &DomainSpec::new(Shape::LShape, AlphaProfile::constant(0.5)),
            0.2,
        )
        .unwrap();
        let m2 = normalize_domain(&m);
        for (p, q) in m.vertices.iter().zip(&m2.vertices) {
            assert!(norm(sub(*p, *q)) < 1e-12);
        }
    }

    #[test]
    fn rigid_detection() {
        let disk = build_normalized(&DomainSpec::new(Shape::Disk, AlphaProfile::constant(0.0)), 0.1)
            .unwrap();
        let ann = build_normalized(
            &DomainSpec::new(Shape::Annulus { r_inner: 0.4 }, AlphaProfile::constant(0.0)),
            0.1,
        )
        .unwrap();
        let sq = normalize_domain(&square(0.1));
        assert_eq!(rigid_fields_default(&disk).basis.len(), 1);
        assert_eq!(rigid_fields_default(&ann).basis.len(), 1);
        let r = rigid_fields_default(&sq);
        assert!(r.is_empty());
        // Square oracle: on the edge x₂ = −1/2 the quantity is −x₁, largest at the corner edges.
        let n = 10.0;
        let expect = 0.5 - 0.5 / n;
        assert!((r.max_normal_component - expect).abs() < 1e-12);
    }

    #[test]
    fn alpha_profiles() {
        let pw = AlphaProfile::Piecewise {
            breaks: vec![0.25, 0.5],
            values: vec![0.0, 1.0, 0.3],
        };
        pw.validate().unwrap();
        assert_eq!(pw.eval(0.1), 0.0);
        assert_eq!(pw.eval(0.3), 1.0);
        assert_eq!(pw.eval(0.9), 0.3);
        let b = AlphaProfile::Bump {
            base: 0.2,
            peak: 0.9,
            center: 0.95,
            width: 0.1,
        };
        b.validate().unwrap();
        assert!((b.eval(0.95) - 0.9).abs() < 1e-15);
        assert!(b.eval(0.02) > 0.2 && b.eval(0.02) < 0.9);
        assert_eq!(b.eval(0.5), 0.2);
        assert!(AlphaProfile::constant(1.5).validate().is_err());
    }

    #[test]
    fn polygon_meshes_conform() {
        let hex: Vec<Point> = (0..6)
            .map(|k| {
                let t = PI / 3.0 * k as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        let l = vec![
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ];
        for (v, area) in [(hex, 1.5 * 3f64.sqrt()), (l, 3.0)] {
            let m = build_mesh(
                &DomainSpec::new(Shape::Polygon { vertices: v }, AlphaProfile::constant(1.0)),
                0.2,
            )
            .unwrap();
            assert!((m.total_area - area).abs() < 1e-12);
            assert!(m.cell_areas.iter().all(|&a| a > 0.0));
            assert!(m.h_max() <= 0.2 + 1e-12);
        }
    }
}
