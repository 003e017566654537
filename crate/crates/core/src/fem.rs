//! Quadratic (P2) velocity / linear (P1) pressure elements on triangles.

use std::collections::HashMap;

use crate::linalg::Vec2;

/// Seven-point rule on the reference triangle, exact for degree 5.
/// Entries are barycentric coordinates and weights summing to 1.
pub const TRI_RULE: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    const C: f64 = 1.0 / 3.0;
    [
        ([C, C, C], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Three-point Gauss rule on `[0, 1]`: (parameter, weight).
pub const EDGE_RULE: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Local P2 node pairs for the midpoints, in the order m01, m12, m20.
pub const EDGE_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Geometry of one affine triangle.
#[derive(Clone, Copy, Debug)]
pub struct Element {
    pub p: [Vec2; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_l: [Vec2; 3],
}

impl Element {
    pub fn new(p0: Vec2, p1: Vec2, p2: Vec2) -> Self {
        let area = 0.5 * (p1 - p0).cross(p2 - p0);
        let inv = 1.0 / (2.0 * area);
        let g = |a: Vec2, b: Vec2| Vec2::new(a.y - b.y, b.x - a.x) * inv;
        Element {
            p: [p0, p1, p2],
            area,
            grad_l: [g(p1, p2), g(p2, p0), g(p0, p1)],
        }
    }

    pub fn point(&self, l: [f64; 3]) -> Vec2 {
        self.p[0] * l[0] + self.p[1] * l[1] + self.p[2] * l[2]
    }

    /// Gradients of the six P2 basis functions at barycentric point `l`.
    pub fn p2_grads(&self, l: [f64; 3]) -> [Vec2; 6] {
        let g = &self.grad_l;
        let mut out = [Vec2::ZERO; 6];
        for i in 0..3 {
            out[i] = g[i] * (4.0 * l[i] - 1.0);
        }
        for (k, &(a, b)) in EDGE_PAIRS.iter().enumerate() {
            out[3 + k] = (g[b] * l[a] + g[a] * l[b]) * 4.0;
        }
        out
    }

    /// P2 mass, stiffness and basis integrals.
    pub fn p2_matrices(&self) -> ([[f64; 6]; 6], [[f64; 6]; 6], [f64; 6]) {
        let mut mass = [[0.0; 6]; 6];
        let mut stiff = [[0.0; 6]; 6];
        let mut integ = [0.0; 6];
        for (l, w) in TRI_RULE {
            let phi = p2_values(l);
            let dphi = self.p2_grads(l);
            let wa = w * self.area;
            for i in 0..6 {
                integ[i] += wa * phi[i];
                for j in 0..6 {
                    mass[i][j] += wa * phi[i] * phi[j];
                    stiff[i][j] += wa * dphi[i].dot(dphi[j]);
                }
            }
        }
        (mass, stiff, integ)
    }

    /// `div[c][k][j] = −∫ ψ_k ∂_c φ_j` for P1 `ψ` and P2 `φ`.
    pub fn divergence(&self) -> [[[f64; 6]; 3]; 2] {
        let mut d = [[[0.0; 6]; 3]; 2];
        for (l, w) in TRI_RULE {
            let dphi = self.p2_grads(l);
            let wa = w * self.area;
            for k in 0..3 {
                for j in 0..6 {
                    d[0][k][j] -= wa * l[k] * dphi[j].x;
                    d[1][k][j] -= wa * l[k] * dphi[j].y;
                }
            }
        }
        d
    }

    /// P1 mass matrix and basis integrals.
    pub fn p1_mass(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let mut m = [[self.area / 12.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = self.area / 6.0;
        }
        (m, [self.area / 3.0; 3])
    }
}

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// 1D quadratic basis on an edge in the order (a, b, midpoint), at parameter s.
pub fn edge_values(s: f64) -> [f64; 3] {
    [
        (1.0 - s) * (1.0 - 2.0 * s),
        s * (2.0 * s - 1.0),
        4.0 * s * (1.0 - s),
    ]
}

/// Exact edge mass matrix for the quadratic trace, order (a, b, midpoint).
pub fn edge_mass(length: f64) -> [[f64; 3]; 3] {
    let c = length / 30.0;
    [
        [4.0 * c, -c, 2.0 * c],
        [-c, 4.0 * c, 2.0 * c],
        [2.0 * c, 2.0 * c, 16.0 * c],
    ]
}

/// Integrals of the edge basis, order (a, b, midpoint).
pub fn edge_integrals(length: f64) -> [f64; 3] {
    [length / 6.0, length / 6.0, 2.0 * length / 3.0]
}

/// Global numbering of P2 nodes. Vertex nodes come first so that the P1
/// pressure unknowns are simply `0..n_vertex_nodes`.
#[derive(Clone, Debug)]
pub struct P2Layout {
    pub n_nodes: usize,
    pub n_vertex_nodes: usize,
    /// Per triangle: [v0, v1, v2, m01, m12, m20].
    pub elem_nodes: Vec<[usize; 6]>,
    /// One representative position per node.
    pub node_coords: Vec<Vec2>,
    /// Mesh vertex -> vertex node.
    pub vertex_node: Vec<usize>,
    edge_node: HashMap<(usize, usize), usize>,
}

impl P2Layout {
    /// `vertex_class[v]` gives the representative of the vertex's equivalence
    /// class (identity for non-periodic meshes). With `periodic` set, edge
    /// midpoints are identified modulo the unit lattice.
    pub fn new(vertices: &[Vec2], triangles: &[[usize; 3]], vertex_class: &[usize], periodic: bool) -> Self {
        let mut vertex_node = vec![usize::MAX; vertices.len()];
        let mut node_coords = Vec::new();
        let mut n = 0;
        for v in 0..vertices.len() {
            let c = vertex_class[v];
            if vertex_node[c] == usize::MAX {
                vertex_node[c] = n;
                node_coords.push(vertices[c]);
                n += 1;
            }
            vertex_node[v] = vertex_node[c];
        }
        let n_vertex_nodes = n;
        let mut by_key: HashMap<(i64, i64), usize> = HashMap::new();
        let mut edge_node = HashMap::new();
        let mut elem_nodes = Vec::with_capacity(triangles.len());
        let key = |p: Vec2| {
            let q = |v: f64| {
                let k = (v * 1e9).round() as i64;
                if periodic {
                    k.rem_euclid(1_000_000_000)
                } else {
                    k
                }
            };
            (q(p.x), q(p.y))
        };
        for t in triangles {
            let mut nodes = [0; 6];
            for i in 0..3 {
                nodes[i] = vertex_node[t[i]];
            }
            for (k, &(a, b)) in EDGE_PAIRS.iter().enumerate() {
                let (va, vb) = (t[a], t[b]);
                let id = *edge_node.entry((va.min(vb), va.max(vb))).or_insert_with(|| {
                    let mid = (vertices[va] + vertices[vb]) * 0.5;
                    *by_key.entry(key(mid)).or_insert_with(|| {
                        node_coords.push(mid);
                        n += 1;
                        n - 1
                    })
                });
                nodes[3 + k] = id;
            }
            elem_nodes.push(nodes);
        }
        P2Layout {
            n_nodes: n,
            n_vertex_nodes,
            elem_nodes,
            node_coords,
            vertex_node,
            edge_node,
        }
    }

    /// Node of the midpoint of mesh edge (a, b).
    pub fn midpoint_node(&self, a: usize, b: usize) -> usize {
        self.edge_node[&(a.min(b), a.max(b))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_quintic_exactly() {
        // ∫_T λ0^2 λ1^2 λ2 = 2|T| 2!2!1!/7! = |T|/630
        let e = Element::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 1.0));
        let v: f64 = TRI_RULE
            .iter()
            .map(|(l, w)| w * e.area * l[0] * l[0] * l[1] * l[1] * l[2])
            .sum();
        assert!((v - e.area / 630.0).abs() < 1e-15);
    }

    #[test]
    fn p2_partition_of_unity() {
        let e = Element::new(Vec2::new(0.1, 0.0), Vec2::new(1.0, 0.3), Vec2::new(0.2, 0.8));
        let (m, k, integ) = e.p2_matrices();
        let total: f64 = m.iter().flatten().sum();
        assert!((total - e.area).abs() < 1e-14);
        assert!((integ.iter().sum::<f64>() - e.area).abs() < 1e-14);
        for row in k {
            assert!(row.iter().sum::<f64>().abs() < 1e-13);
        }
        // vertex integrals vanish for P2
        assert!(integ[0].abs() < 1e-15);
    }

    #[test]
    fn edge_mass_matches_gauss() {
        let l = 0.7;
        let m = edge_mass(l);
        for i in 0..3 {
            for j in 0..3 {
                let q: f64 = EDGE_RULE
                    .iter()
                    .map(|&(s, w)| w * l * edge_values(s)[i] * edge_values(s)[j])
                    .sum();
                assert!((q - m[i][j]).abs() < 1e-15);
            }
        }
    }
}
