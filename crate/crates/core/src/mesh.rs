//! Conforming triangular meshes.
//!
//! - Cells are vertex triples in counter-clockwise order. Local edge `i` is
//!   the one opposite local vertex `i`, traversed from vertex `i+1` to `i+2`.
//! - Boundary edges carry a tag; periodic edges come in pairs sharing an id
//!   and are glued into a single interior-like edge.
//! - Both sides of an edge traverse it in opposite directions, so edge node
//!   `nu` on one side is node `Q-1-nu` on the other.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology: {0}")]
    Topology(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("reading mesh file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Periodic(u32),
    Inflow,
    Outflow,
    Wall,
    Exact,
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryTag::Periodic(k) => write!(f, "P{k}"),
            BoundaryTag::Inflow => write!(f, "IN"),
            BoundaryTag::Outflow => write!(f, "OUT"),
            BoundaryTag::Wall => write!(f, "WALL"),
            BoundaryTag::Exact => write!(f, "EXACT"),
        }
    }
}

impl std::str::FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "IN" => Ok(BoundaryTag::Inflow),
            "OUT" => Ok(BoundaryTag::Outflow),
            "WALL" => Ok(BoundaryTag::Wall),
            "EXACT" => Ok(BoundaryTag::Exact),
            _ => s
                .strip_prefix('P')
                .and_then(|k| k.parse().ok())
                .map(BoundaryTag::Periodic)
                .ok_or_else(|| format!("unknown boundary tag {s:?}")),
        }
    }
}

/// Per-cell geometry.
#[derive(Debug, Clone)]
pub struct CellGeom {
    pub vertices: [[f64; 2]; 3],
    pub area: f64,
    /// Length of local edge i.
    pub lengths: [f64; 3],
    /// Outward unit normal of local edge i.
    pub normals: [[f64; 2]; 3],
    /// Height onto local edge i: 2|K| / l_i.
    pub heights: [f64; 3],
    /// x - v0 = jac * (xi, eta).
    pub jac: [[f64; 2]; 2],
    pub jac_inv: [[f64; 2]; 2],
    pub centroid: [f64; 2],
    /// Local edge indices sorted by decreasing length, ties by index.
    pub sorted: [usize; 3],
}

impl CellGeom {
    pub fn from_vertices(v: [[f64; 2]; 3]) -> CellGeom {
        let jac = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let area = 0.5 * det;
        let jac_inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        let mut lengths = [0.0; 3];
        let mut normals = [[0.0; 2]; 3];
        for i in 0..3 {
            let a = v[(i + 1) % 3];
            let b = v[(i + 2) % 3];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l = dx.hypot(dy);
            lengths[i] = l;
            normals[i] = [dy / l, -dx / l];
        }
        let heights = std::array::from_fn(|i| 2.0 * area / lengths[i]);
        let mut sorted = [0, 1, 2];
        sorted.sort_by(|&a, &b| lengths[b].total_cmp(&lengths[a]));
        CellGeom {
            vertices: v,
            area,
            lengths,
            normals,
            heights,
            jac,
            jac_inv,
            centroid: [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0],
            sorted,
        }
    }

    /// Physical point of reference coordinates (xi, eta).
    pub fn map(&self, xi: f64, eta: f64) -> [f64; 2] {
        [
            self.vertices[0][0] + self.jac[0][0] * xi + self.jac[0][1] * eta,
            self.vertices[0][1] + self.jac[1][0] * xi + self.jac[1][1] * eta,
        ]
    }

    pub fn perimeter(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// The far side of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Cell { cell: usize, local: usize },
    Boundary(BoundaryTag),
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Owning cell and its local edge index; the normal points out of it.
    pub cell: usize,
    pub local: usize,
    pub neighbor: Neighbor,
    /// Set for glued periodic pairs.
    pub periodic: bool,
}

/// A tagged boundary edge as it appears in a mesh file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
    pub geom: Vec<CellGeom>,
    pub edges: Vec<Edge>,
    /// Edge index of each local edge.
    pub cell_edges: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_area(&self) -> f64 {
        self.geom.iter().map(|g| g.area).sum()
    }

    /// Builds topology and geometry, validating orientation, conformity and tags.
    pub fn from_parts(
        vertices: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        boundary: Vec<BoundaryEdge>,
    ) -> Result<Mesh, MeshError> {
        let nv = vertices.len();
        for (c, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&v| v >= nv) {
                return Err(MeshError::Topology(format!("cell {c} references a missing vertex")));
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(MeshError::Topology(format!("cell {c} repeats a vertex")));
            }
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let bbox_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let geom: Vec<CellGeom> =
            cells.iter().map(|c| CellGeom::from_vertices([vertices[c[0]], vertices[c[1]], vertices[c[2]]])).collect();
        for (c, g) in geom.iter().enumerate() {
            if g.area.is_nan() || g.area <= 0.0 {
                return Err(MeshError::Geometry(format!(
                    "cell {c} has non-positive area {:e} (clockwise or degenerate)",
                    g.area
                )));
            }
            if g.area < 1e-14 * bbox_area {
                return Err(MeshError::Geometry(format!("cell {c} is degenerate (area {:e})", g.area)));
            }
        }

        let mut directed: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (c, cell) in cells.iter().enumerate() {
            for i in 0..3 {
                let key = (cell[(i + 1) % 3], cell[(i + 2) % 3]);
                if directed.insert(key, (c, i)).is_some() {
                    return Err(MeshError::Topology(format!(
                        "directed edge {key:?} appears twice (duplicate cell or non-manifold edge)"
                    )));
                }
            }
        }
        let mut tags: HashMap<(usize, usize), (usize, BoundaryTag)> = HashMap::new();
        for (b, be) in boundary.iter().enumerate() {
            let key = (be.v[0].min(be.v[1]), be.v[0].max(be.v[1]));
            if tags.insert(key, (b, be.tag)).is_some() {
                return Err(MeshError::Topology(format!("boundary edge {key:?} tagged twice")));
            }
        }

        let mut cell_edges = vec![[usize::MAX; 3]; cells.len()];
        let mut edges = Vec::new();
        let mut used_tags = vec![false; boundary.len()];
        // periodic id -> half edges (cell, local)
        let mut periodic: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for (c, cell) in cells.iter().enumerate() {
            for i in 0..3 {
                if cell_edges[c][i] != usize::MAX {
                    continue;
                }
                let (a, b) = (cell[(i + 1) % 3], cell[(i + 2) % 3]);
                if let Some(&(nc, ni)) = directed.get(&(b, a)) {
                    if tags.contains_key(&(a.min(b), a.max(b))) {
                        return Err(MeshError::Topology(format!("interior edge ({a}, {b}) carries a boundary tag")));
                    }
                    cell_edges[c][i] = edges.len();
                    cell_edges[nc][ni] = edges.len();
                    edges.push(Edge {
                        cell: c,
                        local: i,
                        neighbor: Neighbor::Cell { cell: nc, local: ni },
                        periodic: false,
                    });
                    continue;
                }
                let Some(&(bi, tag)) = tags.get(&(a.min(b), a.max(b))) else {
                    return Err(MeshError::Topology(format!("boundary edge ({a}, {b}) has no tag")));
                };
                used_tags[bi] = true;
                if let BoundaryTag::Periodic(id) = tag {
                    periodic.entry(id).or_default().push((c, i));
                    continue;
                }
                cell_edges[c][i] = edges.len();
                edges.push(Edge { cell: c, local: i, neighbor: Neighbor::Boundary(tag), periodic: false });
            }
        }
        if let Some(b) = used_tags.iter().position(|u| !u) {
            return Err(MeshError::Topology(format!(
                "tagged edge {:?} is not a boundary edge of any cell",
                boundary[b].v
            )));
        }
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        for (id, halves) in periodic {
            let [(ca, ia), (cb, ib)] = halves[..] else {
                return Err(MeshError::Topology(format!("periodic id P{id} has {} edges, expected 2", halves.len())));
            };
            let ga = &geom[ca];
            let gb = &geom[cb];
            if (ga.lengths[ia] - gb.lengths[ib]).abs() > 1e-10 * scale {
                return Err(MeshError::Topology(format!("periodic pair P{id} has mismatched lengths")));
            }
            // a0 -> a1 must map onto b1 -> b0 by a single translation
            let a0 = ga.vertices[(ia + 1) % 3];
            let a1 = ga.vertices[(ia + 2) % 3];
            let b0 = gb.vertices[(ib + 1) % 3];
            let b1 = gb.vertices[(ib + 2) % 3];
            let t = [b1[0] - a0[0], b1[1] - a0[1]];
            let miss = (a1[0] + t[0] - b0[0]).hypot(a1[1] + t[1] - b0[1]);
            if miss > 1e-10 * scale {
                return Err(MeshError::Topology(format!("periodic pair P{id} is not a translation")));
            }
            cell_edges[ca][ia] = edges.len();
            cell_edges[cb][ib] = edges.len();
            edges.push(Edge { cell: ca, local: ia, neighbor: Neighbor::Cell { cell: cb, local: ib }, periodic: true });
        }
        Ok(Mesh { vertices, cells, boundary, geom, edges, cell_edges })
    }

    /// Builds a mesh whose open edges are tagged by `tag(midpoint)`. Unused
    /// vertices are dropped.
    pub fn from_cells(
        vertices: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        tag: impl Fn([f64; 2]) -> BoundaryTag,
    ) -> Result<Mesh, MeshError> {
        let mut map = vec![usize::MAX; vertices.len()];
        let mut kept = Vec::new();
        let mut cells = cells;
        for c in cells.iter_mut() {
            for v in c.iter_mut() {
                let old = *v;
                if old >= map.len() {
                    return Err(MeshError::Topology(format!("cell references missing vertex {old}")));
                }
                if map[old] == usize::MAX {
                    map[old] = kept.len();
                    kept.push(vertices[old]);
                }
                *v = map[old];
            }
        }
        let directed: HashSet<(usize, usize)> =
            cells.iter().flat_map(|c| (0..3).map(move |i| (c[(i + 1) % 3], c[(i + 2) % 3]))).collect();
        let mut boundary = Vec::new();
        for c in &cells {
            for i in 0..3 {
                let (a, b) = (c[(i + 1) % 3], c[(i + 2) % 3]);
                if !directed.contains(&(b, a)) {
                    let mid = [0.5 * (kept[a][0] + kept[b][0]), 0.5 * (kept[a][1] + kept[b][1])];
                    boundary.push(BoundaryEdge { v: [a, b], tag: tag(mid) });
                }
            }
        }
        Mesh::from_parts(kept, cells, boundary)
    }

    pub fn parse(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| MeshError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
        };
        let (ln, header) = next("header")?;
        let counts = parse_fields::<usize>(header, 3, ln)?;
        let (nv, nc, nb) = (counts[0], counts[1], counts[2]);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertex")?;
            let f = parse_fields::<f64>(l, 2, ln)?;
            if !f.iter().all(|x| x.is_finite()) {
                return Err(MeshError::Parse { line: ln, msg: "non-finite coordinate".into() });
            }
            vertices.push([f[0], f[1]]);
        }
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = next("cell")?;
            let f = parse_fields::<usize>(l, 3, ln)?;
            cells.push([f[0], f[1], f[2]]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, l) = next("boundary edge")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(MeshError::Parse { line: ln, msg: format!("expected `iv0 iv1 TAG`, got {l:?}") });
            }
            let p = |s: &str| s.parse::<usize>().map_err(|e| MeshError::Parse { line: ln, msg: e.to_string() });
            let tag = f[2].parse().map_err(|msg| MeshError::Parse { line: ln, msg })?;
            boundary.push(BoundaryEdge { v: [p(f[0])?, p(f[1])?], tag });
        }
        if let Some((ln, l)) = lines.next() {
            return Err(MeshError::Parse { line: ln, msg: format!("trailing content {l:?}") });
        }
        Mesh::from_parts(vertices, cells, boundary)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
        Mesh::parse(&std::fs::read_to_string(path)?)
    }

    /// Serialises to the text format accepted by [`Mesh::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.vertices.len(), self.cells.len(), self.boundary.len());
        for v in &self.vertices {
            s += &format!("{:.17e} {:.17e}\n", v[0], v[1]);
        }
        for c in &self.cells {
            s += &format!("{} {} {}\n", c[0], c[1], c[2]);
        }
        for b in &self.boundary {
            s += &format!("{} {} {}\n", b.v[0], b.v[1], b.tag);
        }
        s
    }

    /// Splits every cell into four through its edge midpoints.
    pub fn refine_uniform(&self) -> Result<Mesh, MeshError> {
        let mut vertices = self.vertices.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut cells = Vec::with_capacity(4 * self.cells.len());
        for &[a, b, c] in &self.cells {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            cells.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        let mut boundary = Vec::with_capacity(2 * self.boundary.len());
        let mut pairs: BTreeMap<u32, Vec<BoundaryEdge>> = BTreeMap::new();
        for be in &self.boundary {
            match be.tag {
                BoundaryTag::Periodic(id) => pairs.entry(id).or_default().push(*be),
                tag => {
                    let m = mid(be.v[0], be.v[1], &mut vertices);
                    boundary.push(BoundaryEdge { v: [be.v[0], m], tag });
                    boundary.push(BoundaryEdge { v: [m, be.v[1]], tag });
                }
            }
        }
        let mut next_id = 0u32;
        for (id, pair) in pairs {
            let [a, b] = pair[..] else {
                return Err(MeshError::Topology(format!("periodic id P{id} is not a pair")));
            };
            let ma = mid(a.v[0], a.v[1], &mut vertices);
            let mb = mid(b.v[0], b.v[1], &mut vertices);
            // which endpoint of b is the image of a.v[0]
            let (pa, pb) = (vertices[ma], vertices[mb]);
            let img = [vertices[a.v[0]][0] + pb[0] - pa[0], vertices[a.v[0]][1] + pb[1] - pa[1]];
            let d0 = (img[0] - vertices[b.v[0]][0]).hypot(img[1] - vertices[b.v[0]][1]);
            let d1 = (img[0] - vertices[b.v[1]][0]).hypot(img[1] - vertices[b.v[1]][1]);
            let (b_first, b_second) = if d0 <= d1 { (b.v[0], b.v[1]) } else { (b.v[1], b.v[0]) };
            for (ea, eb) in [((a.v[0], ma), (b_first, mb)), ((ma, a.v[1]), (mb, b_second))] {
                let tag = BoundaryTag::Periodic(next_id);
                next_id += 1;
                boundary.push(BoundaryEdge { v: [ea.0, ea.1], tag });
                boundary.push(BoundaryEdge { v: [eb.0, eb.1], tag });
            }
        }
        Mesh::from_parts(vertices, cells, boundary)
    }

    /// Same connectivity with every vertex mapped by `x -> m x`.
    pub fn transformed(&self, m: [[f64; 2]; 2]) -> Result<Mesh, MeshError> {
        let vertices =
            self.vertices.iter().map(|v| [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]).collect();
        Mesh::from_parts(vertices, self.cells.clone(), self.boundary.clone())
    }

    /// Moves vertices that touch no boundary edge by up to `amplitude` times
    /// the local spacing in each direction, with a seeded generator.
    pub fn jittered(&self, amplitude: f64, seed: u64) -> Result<Mesh, MeshError> {
        let mut on_boundary = vec![false; self.vertices.len()];
        for b in &self.boundary {
            on_boundary[b.v[0]] = true;
            on_boundary[b.v[1]] = true;
        }
        let mut spacing = vec![f64::INFINITY; self.vertices.len()];
        for (c, g) in self.cells.iter().zip(&self.geom) {
            let hmin = g.lengths.iter().cloned().fold(f64::INFINITY, f64::min);
            for &v in c {
                spacing[v] = spacing[v].min(hmin);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = self.vertices.clone();
        for (i, v) in vertices.iter_mut().enumerate() {
            let dx: f64 = rng.gen_range(-1.0..1.0);
            let dy: f64 = rng.gen_range(-1.0..1.0);
            if !on_boundary[i] {
                v[0] += amplitude * spacing[i] * dx;
                v[1] += amplitude * spacing[i] * dy;
            }
        }
        Mesh::from_parts(vertices, self.cells.clone(), self.boundary.clone())
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, n: usize, ln: usize) -> Result<Vec<T>, MeshError>
where
    T::Err: fmt::Display,
{
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(MeshError::Parse { line: ln, msg: format!("expected {n} fields, got {}", f.len()) });
    }
    f.iter().map(|s| s.parse::<T>().map_err(|e| MeshError::Parse { line: ln, msg: format!("{s:?}: {e}") })).collect()
}

/// Direction of the diagonal splitting each rectangle of a structured mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    /// From lower-left to upper-right.
    Forward,
    /// From upper-left to lower-right.
    Backward,
    /// Alternates in a checkerboard pattern.
    Alternating,
}

/// Boundary rule for one side of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideBc {
    Tag(BoundaryTag),
    /// Glued to the opposite side.
    Periodic,
}

#[derive(Debug, Clone)]
pub struct RectSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub diagonal: Diagonal,
    /// Left, right, bottom, top.
    pub sides: [SideBc; 4],
}

impl RectSpec {
    pub fn new(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> RectSpec {
        RectSpec { x, y, nx, ny, diagonal: Diagonal::Forward, sides: [SideBc::Periodic; 4] }
    }

    pub fn diagonal(mut self, d: Diagonal) -> RectSpec {
        self.diagonal = d;
        self
    }

    pub fn all_sides(mut self, bc: SideBc) -> RectSpec {
        self.sides = [bc; 4];
        self
    }

    pub fn sides(mut self, left: SideBc, right: SideBc, bottom: SideBc, top: SideBc) -> RectSpec {
        self.sides = [left, right, bottom, top];
        self
    }
}

/// Triangulates a rectangle with `2 nx ny` cells.
pub fn generate_structured(spec: &RectSpec) -> Result<Mesh, MeshError> {
    let (nx, ny) = (spec.nx, spec.ny);
    if nx == 0 || ny == 0 {
        return Err(MeshError::Geometry("structured mesh needs nx, ny >= 1".into()));
    }
    let [left, right, bottom, top] = spec.sides;
    if (left == SideBc::Periodic) != (right == SideBc::Periodic)
        || (bottom == SideBc::Periodic) != (top == SideBc::Periodic)
    {
        return Err(MeshError::Topology("periodic sides must come in opposite pairs".into()));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                spec.x[0] + (spec.x[1] - spec.x[0]) * i as f64 / nx as f64,
                spec.y[0] + (spec.y[1] - spec.y[0]) * j as f64 / ny as f64,
            ]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let forward = match spec.diagonal {
                Diagonal::Forward => true,
                Diagonal::Backward => false,
                Diagonal::Alternating => (i + j) % 2 == 0,
            };
            if forward {
                cells.extend([[a, b, c], [a, c, d]]);
            } else {
                cells.extend([[a, b, d], [b, c, d]]);
            }
        }
    }
    let mut boundary = Vec::new();
    let mut next_id = 0u32;
    let mut side = |lo: Vec<[usize; 2]>, hi: Vec<[usize; 2]>, bl: SideBc, bh: SideBc, out: &mut Vec<BoundaryEdge>| {
        for (el, eh) in lo.into_iter().zip(hi) {
            match (bl, bh) {
                (SideBc::Periodic, _) => {
                    let tag = BoundaryTag::Periodic(next_id);
                    next_id += 1;
                    out.push(BoundaryEdge { v: el, tag });
                    out.push(BoundaryEdge { v: eh, tag });
                }
                (SideBc::Tag(tl), SideBc::Tag(th)) => {
                    out.push(BoundaryEdge { v: el, tag: tl });
                    out.push(BoundaryEdge { v: eh, tag: th });
                }
                _ => unreachable!("checked above"),
            }
        }
    };
    side(
        (0..ny).map(|j| [id(0, j), id(0, j + 1)]).collect(),
        (0..ny).map(|j| [id(nx, j), id(nx, j + 1)]).collect(),
        left,
        right,
        &mut boundary,
    );
    side(
        (0..nx).map(|i| [id(i, 0), id(i + 1, 0)]).collect(),
        (0..nx).map(|i| [id(i, ny), id(i + 1, ny)]).collect(),
        bottom,
        top,
        &mut boundary,
    );
    Mesh::from_parts(vertices, cells, boundary)
}

/// Triangulates the tensor grid `xs` x `ys` (both increasing), keeping cells
/// whose centroid satisfies `keep`; open edges are tagged by midpoint.
pub fn generate_grid(
    xs: &[f64],
    ys: &[f64],
    diagonal: Diagonal,
    keep: impl Fn([f64; 2]) -> bool,
    tag: impl Fn([f64; 2]) -> BoundaryTag,
) -> Result<Mesh, MeshError> {
    let (nx, ny) = (xs.len().saturating_sub(1), ys.len().saturating_sub(1));
    if nx == 0 || ny == 0 {
        return Err(MeshError::Geometry("grid needs at least two breakpoints per axis".into()));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let vertices: Vec<[f64; 2]> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let forward = match diagonal {
                Diagonal::Forward => true,
                Diagonal::Backward => false,
                Diagonal::Alternating => (i + j) % 2 == 0,
            };
            let pair = if forward { [[a, b, c], [a, c, d]] } else { [[a, b, d], [b, c, d]] };
            for t in pair {
                let cx = (vertices[t[0]][0] + vertices[t[1]][0] + vertices[t[2]][0]) / 3.0;
                let cy = (vertices[t[0]][1] + vertices[t[1]][1] + vertices[t[2]][1]) / 3.0;
                if keep([cx, cy]) {
                    cells.push(t);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(MeshError::Geometry("grid mask removed every cell".into()));
    }
    Mesh::from_cells(vertices, cells, tag)
}

/// `n` uniform intervals between each pair of consecutive breakpoints.
pub fn breakpoints(points: &[f64], n: &[usize]) -> Vec<f64> {
    assert_eq!(points.len(), n.len() + 1);
    let mut out = vec![points[0]];
    for (w, &m) in points.windows(2).zip(n) {
        out.extend((1..=m).map(|i| w[0] + (w[1] - w[0]) * i as f64 / m as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nx: usize, ny: usize) -> RectSpec {
        RectSpec::new([0.0, 1.0], [0.0, 1.0], nx, ny)
    }

    #[test]
    fn structured_counts() {
        let m = generate_structured(&unit(2, 2).all_sides(SideBc::Tag(BoundaryTag::Outflow))).unwrap();
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.edges.len(), 16);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let p = generate_structured(&unit(2, 2)).unwrap();
        // four periodic pairs glue into four edges
        assert_eq!(p.edges.len(), 12);
        assert!(p.edges.iter().all(|e| matches!(e.neighbor, Neighbor::Cell { .. })));
    }

    #[test]
    fn sorted_edges_stable() {
        let g = CellGeom::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        // lengths (sqrt2, 1, 1)
        assert_eq!(g.sorted, [0, 1, 2]);
        let g = CellGeom::from_vertices([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]]);
        // lengths (1, sqrt2, 1)
        assert_eq!(g.sorted, [1, 0, 2]);
    }

    #[test]
    fn normals_are_outward_and_close() {
        let g = CellGeom::from_vertices([[0.1, 0.2], [1.3, 0.1], [0.4, 0.9]]);
        let mut s = [0.0; 2];
        for i in 0..3 {
            s[0] += g.lengths[i] * g.normals[i][0];
            s[1] += g.lengths[i] * g.normals[i][1];
            let a = g.vertices[(i + 1) % 3];
            let out = [a[0] - g.centroid[0], a[1] - g.centroid[1]];
            assert!(out[0] * g.normals[i][0] + out[1] * g.normals[i][1] > 0.0);
        }
        assert!(s[0].abs() < 1e-15 && s[1].abs() < 1e-15);
    }

    #[test]
    fn parse_roundtrip_and_comments() {
        let text =
            "# two triangles\n4 2 4\n0 0\n1 0\n1 1\n0 1 # v3\n0 1 2\n0 2 3\n0 1 OUT\n1 2 IN\n2 3 WALL\n3 0 EXACT\n";
        let m = Mesh::parse(text).unwrap();
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.edges.len(), 5);
        let again = Mesh::parse(&m.to_text()).unwrap();
        assert_eq!(again.cells, m.cells);
        assert_eq!(again.boundary, m.boundary);
    }

    #[test]
    fn rejects_bad_meshes() {
        let cw = "3 1 3\n0 0\n1 0\n0 1\n0 2 1\n0 1 OUT\n1 2 OUT\n2 0 OUT\n";
        assert!(matches!(Mesh::parse(cw), Err(MeshError::Geometry(_))));
        let flat = "4 1 3\n0 0\n1 0\n2 1e-20\n0 1\n0 1 2\n0 1 OUT\n1 2 OUT\n2 0 OUT\n";
        assert!(matches!(Mesh::parse(flat), Err(MeshError::Geometry(_))));
        let untagged = "3 1 2\n0 0\n1 0\n0 1\n0 1 2\n0 1 OUT\n1 2 OUT\n";
        assert!(matches!(Mesh::parse(untagged), Err(MeshError::Topology(_))));
        let dup = "3 2 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 2\n0 1 OUT\n1 2 OUT\n2 0 OUT\n";
        assert!(matches!(Mesh::parse(dup), Err(MeshError::Topology(_))));
        let lonely = "3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 P0\n1 2 OUT\n2 0 OUT\n";
        assert!(matches!(Mesh::parse(lonely), Err(MeshError::Topology(_))));
        assert!(matches!(Mesh::parse("3 1\n"), Err(MeshError::Parse { .. })));
        assert!(matches!(
            Mesh::parse("3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 XX\n1 2 OUT\n2 0 OUT\n"),
            Err(MeshError::Parse { .. })
        ));
    }

    #[test]
    fn refine_quadruples_and_keeps_periodicity() {
        let m = generate_structured(&unit(3, 2).diagonal(Diagonal::Alternating)).unwrap();
        let r = m.refine_uniform().unwrap();
        assert_eq!(r.num_cells(), 4 * m.num_cells());
        assert!((r.total_area() - 1.0).abs() < 1e-14);
        assert!(r.edges.iter().all(|e| matches!(e.neighbor, Neighbor::Cell { .. })));
        let open = generate_structured(&unit(3, 2).all_sides(SideBc::Tag(BoundaryTag::Wall))).unwrap();
        let r = open.refine_uniform().unwrap();
        assert_eq!(r.boundary.len(), 2 * open.boundary.len());
    }

    #[test]
    fn edge_sides_share_points() {
        let m = generate_structured(&unit(3, 3).diagonal(Diagonal::Alternating)).unwrap().jittered(0.2, 7).unwrap();
        for e in &m.edges {
            if let Neighbor::Cell { cell, local } = e.neighbor {
                let g = &m.geom[e.cell];
                let h = &m.geom[cell];
                let a = g.vertices[(e.local + 1) % 3];
                let b = h.vertices[(local + 2) % 3];
                if !e.periodic {
                    assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
                }
                assert!((g.lengths[e.local] - h.lengths[local]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn masked_grid_tags_the_step() {
        let xs = breakpoints(&[0.0, 0.6, 3.0], &[3, 12]);
        let ys = breakpoints(&[0.0, 0.2, 1.0], &[1, 4]);
        let m = generate_grid(
            &xs,
            &ys,
            Diagonal::Forward,
            |c| !(c[0] > 0.6 && c[1] < 0.2),
            |p| {
                if p[0] < 1e-12 {
                    BoundaryTag::Inflow
                } else if p[0] > 3.0 - 1e-12 {
                    BoundaryTag::Outflow
                } else {
                    BoundaryTag::Wall
                }
            },
        )
        .unwrap();
        assert!((m.total_area() - (3.0 - 2.4 * 0.2)).abs() < 1e-12);
        let walls = m.boundary.iter().filter(|b| b.tag == BoundaryTag::Wall).count();
        // bottom 3 + step face 1 + step top 12 + ceiling 15
        assert_eq!(walls, 31);
    }
}
