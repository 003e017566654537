//! Periodic unit cell `[0,1]²` with an optional disk hole.
//!
//! The disk mesh is a polar-to-square map: rings interpolate linearly between
//! the hole circle and the cell boundary, quads are split along diagonals that
//! alternate per octant. With the default centred hole the triangulation is
//! invariant under the full symmetry group of the square, which the kernel
//! isotropy checks rely on.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Minimum distance between the hole and the cell boundary.
pub const HOLE_MARGIN: f64 = 0.05;
const MIN_ANGLE_DEG: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoleShape {
    Disk,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    pub shape: HoleShape,
    pub center: Vec2,
    pub radius: f64,
}

impl Default for HoleSpec {
    fn default() -> Self {
        HoleSpec::disk(Vec2::new(0.5, 0.5), 0.25)
    }
}

impl HoleSpec {
    pub fn disk(center: Vec2, radius: f64) -> Self {
        HoleSpec {
            shape: HoleShape::Disk,
            center,
            radius,
        }
    }

    pub fn none() -> Self {
        HoleSpec {
            shape: HoleShape::None,
            center: Vec2::new(0.5, 0.5),
            radius: 0.0,
        }
    }

    pub fn has_hole(&self) -> bool {
        self.shape == HoleShape::Disk
    }

    pub fn validate(&self) -> Result<()> {
        match self.shape {
            HoleShape::None => {
                if self.radius != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "shape none requires radius 0, got {}",
                        self.radius
                    )));
                }
                Ok(())
            }
            HoleShape::Disk => {
                let r = self.radius;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidArgument(format!("disk radius {r} must be positive")));
                }
                let c = self.center;
                let lo = HOLE_MARGIN;
                let hi = 1.0 - HOLE_MARGIN;
                for v in [c.x - r, c.y - r, c.x + r, c.y + r] {
                    if !(lo..=hi).contains(&v) {
                        return Err(Error::HoleTouchesBoundary(format!(
                            "disk at ({}, {}) with radius {r} leaves margin below {HOLE_MARGIN}",
                            c.x, c.y
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Exact fluid area of the cell.
    pub fn exact_area(&self) -> f64 {
        match self.shape {
            HoleShape::Disk => 1.0 - PI * self.radius * self.radius,
            HoleShape::None => 1.0,
        }
    }
}

/// A straight edge of the discrete hole boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoleEdge {
    pub a: usize,
    pub b: usize,
    /// Unit normal pointing from the fluid into the hole.
    pub normal: Vec2,
    /// `normal` rotated by +90°.
    pub tangent: Vec2,
    pub length: f64,
    /// The fluid triangle owning this edge.
    pub triangle: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub midpoint: Vec2,
    pub normal: Vec2,
    pub tangent: Vec2,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct CellMesh {
    pub hole: HoleSpec,
    pub target_h: f64,
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub hole_edges: Vec<HoleEdge>,
    /// Opposite-side vertex pairs; as a map this is an involution.
    pub periodic_pairs: Vec<(usize, usize)>,
    pub area: f64,
    /// Representative vertex of each periodic equivalence class.
    periodic_master: Vec<usize>,
}

fn rot90(v: Vec2) -> Vec2 {
    v.rot90()
}

fn signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * (b - a).cross(c - a)
}

fn min_angle_deg(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let angle = |p: Vec2, q: Vec2, r: Vec2| {
        let u = q - p;
        let v = r - p;
        (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
    };
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b)).to_degrees()
}

/// Point on the unit-square perimeter for parameter `num / den`, measured
/// counter-clockwise in units of a side starting at `(1, 0)`.
fn perimeter_point(num: usize, den: usize) -> Vec2 {
    let num = num % (4 * den);
    let side = num / den;
    let k = num % den;
    let f = k as f64 / den as f64;
    let g = (den - k) as f64 / den as f64;
    match side {
        0 => Vec2::new(1.0, f),
        1 => Vec2::new(g, 1.0),
        2 => Vec2::new(0.0, g),
        _ => Vec2::new(f, 0.0),
    }
}

pub fn build_cell_mesh(hole: HoleSpec, target_h: f64) -> Result<CellMesh> {
    if !(target_h > 0.0 && target_h <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "target_h = {target_h} outside (0, 0.5]"
        )));
    }
    hole.validate()?;
    let (vertices, triangles, ring) = match hole.shape {
        HoleShape::Disk => disk_mesh(&hole, target_h),
        HoleShape::None => square_mesh(target_h),
    };
    finish_mesh(hole, target_h, vertices, triangles, ring)
}

fn disk_mesh(hole: &HoleSpec, h: f64) -> (Vec<Vec2>, Vec<[usize; 3]>, Vec<usize>) {
    let r = hole.radius;
    let c = hole.center;
    let min_edges = ((4.0 / h).ceil() as usize)
        .max((2.0 * PI * r / h).ceil() as usize)
        .max(16);
    let n = min_edges.div_ceil(8) * 8;
    let far = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0)]
        .iter()
        .map(|p| (*p - c).norm())
        .fold(0.0_f64, f64::max);
    let layers = (((far - r) / h).ceil() as usize).max(2);

    let mut vertices = Vec::with_capacity(n * (layers + 1));
    for l in 0..=layers {
        let t = l as f64 / layers as f64;
        for j in 0..n {
            let theta = 2.0 * PI * j as f64 / n as f64;
            let circ = c + Vec2::new(theta.cos(), theta.sin()) * r;
            let sq = perimeter_point(4 * j + n / 2, n);
            let p = if l == layers { sq } else { circ + (sq - circ) * t };
            vertices.push(p);
        }
    }
    let id = |l: usize, j: usize| l * n + (j % n);
    let mut triangles = Vec::with_capacity(2 * n * layers);
    for l in 0..layers {
        for j in 0..n {
            let octant = 8 * j / n;
            let (a, b, cc, d) = (id(l, j), id(l, j + 1), id(l + 1, j + 1), id(l + 1, j));
            if octant.is_multiple_of(2) {
                triangles.push([a, d, cc]);
                triangles.push([a, cc, b]);
            } else {
                triangles.push([a, d, b]);
                triangles.push([d, cc, b]);
            }
        }
    }
    for t in triangles.iter_mut() {
        if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
    let ring: Vec<usize> = (0..n).map(|j| id(0, j)).collect();
    (vertices, triangles, ring)
}

fn square_mesh(h: f64) -> (Vec<Vec2>, Vec<[usize; 3]>, Vec<usize>) {
    let m = ((1.0 / h).ceil() as usize).max(1);
    let mut vertices = Vec::with_capacity((m + 1) * (m + 1));
    for iy in 0..=m {
        for ix in 0..=m {
            vertices.push(Vec2::new(ix as f64 / m as f64, iy as f64 / m as f64));
        }
    }
    let id = |ix: usize, iy: usize| iy * (m + 1) + ix;
    let mut triangles = Vec::with_capacity(2 * m * m);
    for iy in 0..m {
        for ix in 0..m {
            let (a, b, c, d) = (id(ix, iy), id(ix + 1, iy), id(ix + 1, iy + 1), id(ix, iy + 1));
            if (ix + iy) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    (vertices, triangles, Vec::new())
}

/// Canonical key of a point modulo the unit lattice.
fn periodic_key(p: Vec2) -> (i64, i64) {
    let wrap = |v: f64| {
        let k = (v * 1e9).round() as i64;
        k.rem_euclid(1_000_000_000)
    };
    (wrap(p.x), wrap(p.y))
}

fn on_outer(p: Vec2) -> bool {
    p.x == 0.0 || p.x == 1.0 || p.y == 0.0 || p.y == 1.0
}

fn finish_mesh(
    hole: HoleSpec,
    target_h: f64,
    vertices: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    ring: Vec<usize>,
) -> Result<CellMesh> {
    let mut area = 0.0;
    for (k, t) in triangles.iter().enumerate() {
        let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        let s = signed_area(a, b, c);
        if s <= 0.0 {
            return Err(Error::DegenerateMesh(format!("triangle {k} has non-positive area {s}")));
        }
        let ang = min_angle_deg(a, b, c);
        if ang < MIN_ANGLE_DEG {
            return Err(Error::DegenerateMesh(format!(
                "triangle {k} has minimum angle {ang:.2}°"
            )));
        }
        area += s;
    }

    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (k, t) in triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            edge_owner.insert((a.min(b), a.max(b)), k);
        }
    }
    let mut hole_edges = Vec::with_capacity(ring.len());
    for j in 0..ring.len() {
        let a = ring[j];
        let b = ring[(j + 1) % ring.len()];
        let d = vertices[b] - vertices[a];
        let length = d.norm();
        // Ring runs counter-clockwise around the hole, so the left normal of
        // the edge points into it.
        let normal = rot90(d) * (1.0 / length);
        let tangent = rot90(normal);
        let triangle = *edge_owner
            .get(&(a.min(b), a.max(b)))
            .ok_or_else(|| Error::DegenerateMesh(format!("hole edge {a}-{b} has no triangle")))?;
        hole_edges.push(HoleEdge {
            a,
            b,
            normal,
            tangent,
            length,
            triangle,
        });
    }

    let (periodic_pairs, periodic_master) = periodic_identification(&vertices)?;
    Ok(CellMesh {
        hole,
        target_h,
        vertices,
        triangles,
        hole_edges,
        periodic_pairs,
        area,
        periodic_master,
    })
}

fn periodic_identification(vertices: &[Vec2]) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    let mut classes: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in vertices.iter().enumerate() {
        if on_outer(*p) {
            classes.entry(periodic_key(*p)).or_default().push(i);
        }
    }
    let mut master: Vec<usize> = (0..vertices.len()).collect();
    let mut pairs = Vec::new();
    for members in classes.values() {
        let rep = *members.iter().min().unwrap();
        for &m in members {
            master[m] = rep;
        }
        for &i in members {
            let p = vertices[i];
            // Partner: reflect through the cell centre along each boundary axis
            // the vertex lies on.
            let target = Vec2::new(
                if p.x == 0.0 { 1.0 } else if p.x == 1.0 { 0.0 } else { p.x },
                if p.y == 0.0 { 1.0 } else if p.y == 1.0 { 0.0 } else { p.y },
            );
            let partner = members
                .iter()
                .copied()
                .find(|&m| vertices[m] == target)
                .ok_or_else(|| {
                    Error::DegenerateMesh(format!(
                        "outer vertex {i} at ({}, {}) has no periodic partner",
                        p.x, p.y
                    ))
                })?;
            pairs.push((i, partner));
        }
    }
    pairs.sort_unstable();
    Ok((pairs, master))
}

/// Per-edge frames of the hole boundary.
pub fn boundary_frames(mesh: &CellMesh) -> Vec<Frame> {
    mesh.hole_edges
        .iter()
        .map(|e| Frame {
            midpoint: (mesh.vertices[e.a] + mesh.vertices[e.b]) * 0.5,
            normal: e.normal,
            tangent: e.tangent,
            length: e.length,
        })
        .collect()
}

impl CellMesh {
    pub fn periodic_master(&self) -> &[usize] {
        &self.periodic_master
    }

    pub fn hole_length(&self) -> f64 {
        self.hole_edges.iter().map(|e| e.length).sum()
    }

    pub fn min_angle_deg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| min_angle_deg(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest edge length.
    pub fn h_min(&self) -> f64 {
        let mut h = f64::INFINITY;
        for t in &self.triangles {
            for e in 0..3 {
                h = h.min((self.vertices[t[e]] - self.vertices[t[(e + 1) % 3]]).norm());
            }
        }
        h
    }

    /// Apply the pairing once.
    pub fn partner(&self, v: usize) -> Option<usize> {
        self.periodic_pairs
            .binary_search_by_key(&v, |p| p.0)
            .ok()
            .map(|k| self.periodic_pairs[k].1)
    }

    /// `Σ n·length` over the hole boundary.
    pub fn normal_sum(&self) -> Vec2 {
        self.hole_edges
            .iter()
            .fold(Vec2::ZERO, |acc, e| acc + e.normal * e.length)
    }

    /// SHA-256 of the geometry, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|{}", self.hole, self.target_h).as_bytes());
        for v in &self.vertices {
            hasher.update(v.x.to_le_bytes());
            hasher.update(v.y.to_le_bytes());
        }
        for t in &self.triangles {
            for i in t {
                hasher.update((*i as u64).to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hole = match self.hole.shape {
            HoleShape::Disk => format!(
                "disk {} {} {}",
                self.hole.center.x, self.hole.center.y, self.hole.radius
            ),
            HoleShape::None => "none".to_string(),
        };
        let _ = writeln!(s, "cellmesh 1 {} {}", self.target_h, hole);
        let _ = writeln!(
            s,
            "{} {} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.hole_edges.len(),
            self.periodic_pairs.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{} {}", v.x, v.y);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.hole_edges {
            let _ = writeln!(s, "{} {} {} {}", e.a, e.b, e.normal.x, e.normal.y);
        }
        for (a, b) in &self.periodic_pairs {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<CellMesh> {
        let perr = |m: &str| Error::Parse(format!("mesh file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<&str> = lines
            .next()
            .ok_or_else(|| perr("empty"))?
            .split_whitespace()
            .collect();
        if head.len() < 4 || head[0] != "cellmesh" || head[1] != "1" {
            return Err(perr("bad header"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(&format!("bad number '{s}'")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| perr(&format!("bad index '{s}'")));
        let target_h = num(head[2])?;
        let hole = match head[3] {
            "disk" if head.len() == 7 => HoleSpec::disk(Vec2::new(num(head[4])?, num(head[5])?), num(head[6])?),
            "none" => HoleSpec::none(),
            _ => return Err(perr("bad hole description")),
        };
        let counts: Vec<usize> = lines
            .next()
            .ok_or_else(|| perr("missing counts"))?
            .split_whitespace()
            .map(idx)
            .collect::<Result<_>>()?;
        if counts.len() != 4 {
            return Err(perr("counts line needs four entries"));
        }
        let mut take = |n: usize, width: usize| -> Result<Vec<Vec<&str>>> {
            (0..n)
                .map(|_| {
                    let f: Vec<&str> = lines
                        .next()
                        .ok_or_else(|| perr("truncated"))?
                        .split_whitespace()
                        .collect();
                    if f.len() != width {
                        return Err(perr("wrong field count"));
                    }
                    Ok(f)
                })
                .collect()
        };
        let vertices = take(counts[0], 2)?
            .iter()
            .map(|f| Ok(Vec2::new(num(f[0])?, num(f[1])?)))
            .collect::<Result<Vec<_>>>()?;
        let triangles = take(counts[1], 3)?
            .iter()
            .map(|f| Ok([idx(f[0])?, idx(f[1])?, idx(f[2])?]))
            .collect::<Result<Vec<_>>>()?;
        let edges = take(counts[2], 4)?;
        let pairs_in = take(counts[3], 2)?
            .iter()
            .map(|f| Ok((idx(f[0])?, idx(f[1])?)))
            .collect::<Result<Vec<_>>>()?;
        let nv = vertices.len();
        if triangles.iter().flatten().any(|&i| i >= nv) {
            return Err(perr("triangle index out of range"));
        }
        let mut ring = Vec::with_capacity(edges.len());
        for f in &edges {
            let a = idx(f[0])?;
            if a >= nv {
                return Err(perr("edge index out of range"));
            }
            ring.push(a);
        }
        let mesh = finish_mesh(hole, target_h, vertices, triangles, ring)?;
        if mesh.periodic_pairs != pairs_in {
            return Err(perr("pairing does not match geometry"));
        }
        Ok(mesh)
    }
}
