//! Constrained P2 velocity space and assembly of the full-DOF blocks.

use std::collections::HashMap;

use crate::fem::{edge_integrals, edge_mass, edge_values, Element, P2Layout, EDGE_RULE};
use crate::linalg::{Csr, TripletBuilder, Vec2};

/// A straight slip-boundary edge: endpoints, unit normal into the obstacle,
/// length.
#[derive(Clone, Copy, Debug)]
pub struct SlipEdge {
    pub a: usize,
    pub b: usize,
    pub normal: Vec2,
    pub length: f64,
}

impl SlipEdge {
    pub fn tangent(&self) -> Vec2 {
        self.normal.rot90()
    }
}

/// Minimal geometric input for assembling a Stokes space.
pub struct FluidMesh<'a> {
    pub vertices: &'a [Vec2],
    pub triangles: &'a [[usize; 3]],
    pub vertex_class: &'a [usize],
    pub periodic: bool,
    pub slip_edges: &'a [SlipEdge],
    /// Mesh vertices carrying a no-slip condition (their incident boundary
    /// edges' midpoints are fixed as well).
    pub dirichlet_edges: &'a [(usize, usize)],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    Free,
    /// Only the tangential component along `tangent` is free.
    Slip { tangent: Vec2 },
    Fixed,
}

/// Reduced velocity space: each full (node, component) DOF is either zero or
/// a multiple of exactly one reduced DOF.
#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    pub layout: P2Layout,
    pub kinds: Vec<NodeKind>,
    /// Slip edges translated to node indices: (node a, node b, node mid).
    pub slip_edge_nodes: Vec<[usize; 3]>,
    pub slip_edges: Vec<SlipEdge>,
    map: Vec<Option<(usize, f64)>>,
    pub n_reduced: usize,
    /// Reduced DOFs of the slip nodes, i.e. the tangential trace.
    pub trace_dofs: Vec<(usize, usize)>,
}

impl DiscreteSpace {
    pub fn n_full(&self) -> usize {
        2 * self.layout.n_nodes
    }

    pub fn n_pressure(&self) -> usize {
        self.layout.n_vertex_nodes
    }

    pub fn has_slip_boundary(&self) -> bool {
        !self.slip_edges.is_empty()
    }

    pub fn prolong(&self, red: &[f64]) -> Vec<f64> {
        self.map
            .iter()
            .map(|m| m.map_or(0.0, |(r, c)| c * red[r]))
            .collect()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut red = vec![0.0; self.n_reduced];
        for (f, m) in self.map.iter().enumerate() {
            if let Some((r, c)) = m {
                red[*r] += c * full[f];
            }
        }
        red
    }

    /// Galerkin reduction `Tᵀ (I₂ ⊗ S) T` of a scalar node matrix.
    pub fn reduce_vector(&self, scalar: &Csr) -> Csr {
        let mut t = TripletBuilder::new(self.n_reduced, self.n_reduced);
        for (i, j, v) in scalar.triplets() {
            for c in 0..2 {
                if let (Some((ri, ci)), Some((rj, cj))) = (self.map[2 * i + c], self.map[2 * j + c]) {
                    t.add(ri, rj, ci * cj * v);
                }
            }
        }
        t.build()
    }

    /// `B T` for a full-DOF pressure-velocity block.
    pub fn reduce_columns(&self, b: &Csr) -> Csr {
        let mut t = TripletBuilder::new(b.n_rows, self.n_reduced);
        for (i, j, v) in b.triplets() {
            if let Some((rj, cj)) = self.map[j] {
                t.add(i, rj, cj * v);
            }
        }
        t.build()
    }

    /// Nodal values of a constant field.
    pub fn full_constant(&self, f: Vec2) -> Vec<f64> {
        let mut v = vec![0.0; self.n_full()];
        for k in 0..self.layout.n_nodes {
            v[2 * k] = f.x;
            v[2 * k + 1] = f.y;
        }
        v
    }

    /// Full-DOF load `∫_Γ h(e, s) τ_e · φ dσ` of scalar tangential data on the
    /// slip boundary. `h` receives the edge index and the edge parameter.
    pub fn tangential_load(&self, h: &dyn Fn(usize, f64) -> f64) -> Vec<f64> {
        let mut f = vec![0.0; self.n_full()];
        for (e, (edge, nodes)) in self.slip_edges.iter().zip(&self.slip_edge_nodes).enumerate() {
            let tau = edge.tangent();
            let mut loc = [0.0; 3];
            for &(s, w) in &EDGE_RULE {
                let hv = h(e, s);
                let phi = edge_values(s);
                for i in 0..3 {
                    loc[i] += w * edge.length * hv * phi[i];
                }
            }
            for i in 0..3 {
                f[2 * nodes[i]] += loc[i] * tau.x;
                f[2 * nodes[i] + 1] += loc[i] * tau.y;
            }
        }
        f
    }
}

/// Scalar (per-component) blocks assembled over all nodes.
#[derive(Clone, Debug)]
pub struct FullBlocks {
    pub mass_bulk: Csr,
    pub stiffness: Csr,
    pub mass_bdry: Csr,
    pub robin: Csr,
    /// `B_kj = −∫ ψ_k div φ_j`, pressure rows, full velocity columns.
    pub div: Csr,
    pub pressure_mass: Csr,
    pub p2_integrals: Vec<f64>,
    pub p1_integrals: Vec<f64>,
    pub alpha_min: f64,
}

pub fn build_space(mesh: &FluidMesh) -> DiscreteSpace {
    let layout = P2Layout::new(mesh.vertices, mesh.triangles, mesh.vertex_class, mesh.periodic);
    let nn = layout.n_nodes;
    let mut kinds = vec![NodeKind::Free; nn];

    // Consistent normals: n_i ∝ Σ_e n_e ∫_e φ_i.
    let mut acc: HashMap<usize, Vec2> = HashMap::new();
    let mut slip_edge_nodes = Vec::with_capacity(mesh.slip_edges.len());
    for e in mesh.slip_edges {
        let nodes = [
            layout.vertex_node[e.a],
            layout.vertex_node[e.b],
            layout.midpoint_node(e.a, e.b),
        ];
        let w = edge_integrals(e.length);
        for i in 0..3 {
            *acc.entry(nodes[i]).or_insert(Vec2::ZERO) += e.normal * w[i];
        }
        slip_edge_nodes.push(nodes);
    }
    for (node, n) in acc {
        let n = n.normalized();
        kinds[node] = NodeKind::Slip { tangent: n.rot90() };
    }
    for &(a, b) in mesh.dirichlet_edges {
        kinds[layout.vertex_node[a]] = NodeKind::Fixed;
        kinds[layout.vertex_node[b]] = NodeKind::Fixed;
        kinds[layout.midpoint_node(a, b)] = NodeKind::Fixed;
    }

    let mut map = vec![None; 2 * nn];
    let mut n_reduced = 0;
    let mut trace_dofs = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        match kind {
            NodeKind::Free => {
                map[2 * k] = Some((n_reduced, 1.0));
                map[2 * k + 1] = Some((n_reduced + 1, 1.0));
                n_reduced += 2;
            }
            NodeKind::Slip { tangent } => {
                map[2 * k] = Some((n_reduced, tangent.x));
                map[2 * k + 1] = Some((n_reduced, tangent.y));
                trace_dofs.push((k, n_reduced));
                n_reduced += 1;
            }
            NodeKind::Fixed => {}
        }
    }
    DiscreteSpace {
        layout,
        kinds,
        slip_edge_nodes,
        slip_edges: mesh.slip_edges.to_vec(),
        map,
        n_reduced,
        trace_dofs,
    }
}

/// Assemble all scalar blocks. `alpha` is evaluated at boundary quadrature
/// points in mesh coordinates.
pub fn assemble_blocks(
    space: &DiscreteSpace,
    mesh: &FluidMesh,
    alpha: &dyn Fn(Vec2) -> f64,
) -> FullBlocks {
    let layout = &space.layout;
    let nn = layout.n_nodes;
    let np = layout.n_vertex_nodes;
    let mut mb = TripletBuilder::new(nn, nn);
    let mut kk = TripletBuilder::new(nn, nn);
    let mut bb = TripletBuilder::new(np, 2 * nn);
    let mut qq = TripletBuilder::new(np, np);
    let mut p2_int = vec![0.0; nn];
    let mut p1_int = vec![0.0; np];
    for (t, nodes) in mesh.triangles.iter().zip(&layout.elem_nodes) {
        let el = Element::new(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let (m, k, integ) = el.p2_matrices();
        let d = el.divergence();
        let (pm, pint) = el.p1_mass();
        for i in 0..6 {
            p2_int[nodes[i]] += integ[i];
            for j in 0..6 {
                mb.add(nodes[i], nodes[j], m[i][j]);
                kk.add(nodes[i], nodes[j], k[i][j]);
            }
        }
        for a in 0..3 {
            p1_int[nodes[a]] += pint[a];
            for b in 0..3 {
                qq.add(nodes[a], nodes[b], pm[a][b]);
            }
            for j in 0..6 {
                bb.add(nodes[a], 2 * nodes[j], d[0][a][j]);
                bb.add(nodes[a], 2 * nodes[j] + 1, d[1][a][j]);
            }
        }
    }

    let mut mg = TripletBuilder::new(nn, nn);
    let mut rr = TripletBuilder::new(nn, nn);
    let mut alpha_min = f64::INFINITY;
    for (e, nodes) in space.slip_edges.iter().zip(&space.slip_edge_nodes) {
        let em = edge_mass(e.length);
        let pa = mesh.vertices[e.a];
        let pb = mesh.vertices[e.b];
        let mut rl = [[0.0; 3]; 3];
        for &(s, w) in &EDGE_RULE {
            let a = alpha(pa + (pb - pa) * s);
            alpha_min = alpha_min.min(a);
            let phi = edge_values(s);
            for i in 0..3 {
                for j in 0..3 {
                    rl[i][j] += w * e.length * a * phi[i] * phi[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                mg.add(nodes[i], nodes[j], em[i][j]);
                rr.add(nodes[i], nodes[j], rl[i][j]);
            }
        }
    }
    FullBlocks {
        mass_bulk: mb.build(),
        stiffness: kk.build(),
        mass_bdry: mg.build(),
        robin: rr.build(),
        div: bb.build(),
        pressure_mass: qq.build(),
        p2_integrals: p2_int,
        p1_integrals: p1_int,
        alpha_min,
    }
}
