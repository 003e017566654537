//! Periodic scalar Neumann problems on the cell:
//! `−Δw = −(1/|Y*|) ∮ h` in `Y*`, `∂w/∂n = h` on the hole, `∫ w = 0`.

use crate::cell_geometry::CellMesh;
use crate::error::{Error, Result};
use crate::fem::{edge_values, Element, P2Layout, EDGE_RULE};
use crate::linalg::{dot, Csr, DirectSolver, TripletBuilder, Vec2};

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub layout: P2Layout,
    /// P2 nodal values.
    pub values: Vec<f64>,
    stiffness: Csr,
    integrals: Vec<f64>,
    boundary_load: Vec<f64>,
    /// `∮ h dσ`.
    pub data_integral: f64,
    triangles: Vec<[usize; 3]>,
    vertices: Vec<Vec2>,
    hole: Vec<(usize, usize, Vec2, f64, usize)>,
}

impl ScalarField {
    pub fn mean(&self) -> f64 {
        dot(&self.integrals, &self.values) / self.integrals.iter().sum::<f64>()
    }

    /// `∫_{Y*} (−Δ_h w)` in the weak sense, `(K w − b, 1)`.
    pub fn interior_source(&self) -> f64 {
        let kw = self.stiffness.matvec(&self.values);
        kw.iter().sum::<f64>() - self.boundary_load.iter().sum::<f64>()
    }

    /// `∮ ∇w·n dσ` from element gradients on the hole edges.
    pub fn boundary_flux(&self) -> f64 {
        let mut flux = 0.0;
        for &(a, b, normal, length, tri) in &self.hole {
            let t = self.triangles[tri];
            let el = Element::new(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let ia = t.iter().position(|&v| v == a).unwrap();
            let ib = t.iter().position(|&v| v == b).unwrap();
            let nodes = self.layout.elem_nodes[tri];
            for &(s, w) in &EDGE_RULE {
                let mut l = [0.0; 3];
                l[ia] = 1.0 - s;
                l[ib] = s;
                let g = el.p2_grads(l);
                let grad = (0..6).fold(Vec2::ZERO, |acc, j| acc + g[j] * self.values[nodes[j]]);
                flux += w * length * grad.dot(normal);
            }
        }
        flux
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Solve with Neumann data `h(edge, s)` on the hole edges.
pub fn solve_scalar_neumann(mesh: &CellMesh, h: &dyn Fn(usize, f64) -> f64) -> Result<ScalarField> {
    let layout = P2Layout::new(&mesh.vertices, &mesh.triangles, mesh.periodic_master(), true);
    let nn = layout.n_nodes;
    let mut kk = TripletBuilder::new(nn, nn);
    let mut integrals = vec![0.0; nn];
    for (t, nodes) in mesh.triangles.iter().zip(&layout.elem_nodes) {
        let el = Element::new(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        let (_, k, integ) = el.p2_matrices();
        for i in 0..6 {
            integrals[nodes[i]] += integ[i];
            for j in 0..6 {
                kk.add(nodes[i], nodes[j], k[i][j]);
            }
        }
    }
    let stiffness = kk.build();

    let mut load = vec![0.0; nn];
    let mut data_integral = 0.0;
    for (e, edge) in mesh.hole_edges.iter().enumerate() {
        let nodes = [
            layout.vertex_node[edge.a],
            layout.vertex_node[edge.b],
            layout.midpoint_node(edge.a, edge.b),
        ];
        for &(s, w) in &EDGE_RULE {
            let hv = h(e, s);
            data_integral += w * edge.length * hv;
            let phi = edge_values(s);
            for i in 0..3 {
                load[nodes[i]] += w * edge.length * hv * phi[i];
            }
        }
    }
    if !mesh.hole.has_hole() {
        // Without a hole the data must vanish; nothing to solve.
        if data_integral != 0.0 {
            return Err(Error::NoHole);
        }
    }
    let area: f64 = integrals.iter().sum();
    let c = data_integral / area;
    let mut rhs: Vec<f64> = load.iter().zip(&integrals).map(|(b, m)| b - c * m).collect();
    rhs.push(0.0);

    let values = if rhs.iter().all(|v| *v == 0.0) {
        vec![0.0; nn]
    } else {
        // Bordered system [K m; mᵀ 0]; the multiplier vanishes by compatibility.
        let mat = bordered(&stiffness, &integrals);
        let x = DirectSolver::new(mat)?.solve(&rhs)?;
        x[..nn].to_vec()
    };
    Ok(ScalarField {
        layout,
        values,
        stiffness,
        integrals,
        boundary_load: load,
        data_integral,
        triangles: mesh.triangles.clone(),
        vertices: mesh.vertices.clone(),
        hole: mesh
            .hole_edges
            .iter()
            .map(|e| (e.a, e.b, e.normal, e.length, e.triangle))
            .collect(),
    })
}

fn bordered(k: &Csr, w: &[f64]) -> Csr {
    let nn = k.n_rows;
    let mut t = TripletBuilder::new(nn + 1, nn + 1);
    for (i, j, v) in k.triplets() {
        t.add(i, j, v);
    }
    for (i, v) in w.iter().enumerate() {
        t.add(i, nn, *v);
        t.add(nn, i, *v);
    }
    t.build()
}
