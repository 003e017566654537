use memdarcy::cell_geometry::*;
use memdarcy::linalg::Vec2;
use memdarcy::Error;

#[test]
fn default_disk_area() {
    let m = build_cell_mesh(HoleSpec::default(), 0.05).unwrap();
    let exact = 1.0 - std::f64::consts::PI * 0.0625;
    assert!((m.area - exact).abs() <= 0.01 * exact, "{}", m.area);
    let sum: f64 = m
        .triangles
        .iter()
        .map(|t| {
            let (a, b, c) = (m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
            0.5 * (b - a).cross(c - a)
        })
        .sum();
    assert!((sum - m.area).abs() < 1e-12);
}

#[test]
fn no_hole_is_the_full_square() {
    let m = build_cell_mesh(HoleSpec::none(), 0.25).unwrap();
    assert!((m.area - 1.0).abs() < 1e-14);
    assert!(m.hole_edges.is_empty());
    assert!(boundary_frames(&m).is_empty());
}

#[test]
fn oversized_hole_is_rejected() {
    let r = build_cell_mesh(HoleSpec::disk(Vec2::new(0.5, 0.5), 0.48), 0.1);
    assert!(matches!(r, Err(Error::HoleTouchesBoundary(_))));
    let off = build_cell_mesh(HoleSpec::disk(Vec2::new(0.25, 0.5), 0.22), 0.1);
    assert!(matches!(off, Err(Error::HoleTouchesBoundary(_))));
}

#[test]
fn frames_are_orthonormal_and_close() {
    let m = build_cell_mesh(HoleSpec::default(), 0.05).unwrap();
    let frames = boundary_frames(&m);
    for f in &frames {
        assert!((f.normal.norm() - 1.0).abs() < 1e-12);
        assert!(f.normal.dot(f.tangent).abs() < 1e-12);
        assert!((f.tangent - f.normal.rot90()).norm() < 1e-12);
    }
    assert!(m.normal_sum().norm() < 1e-10);
    let nearest = frames
        .iter()
        .min_by(|a, b| {
            let p = Vec2::new(0.75, 0.5);
            (a.midpoint - p).norm().total_cmp(&(b.midpoint - p).norm())
        })
        .unwrap();
    assert!((nearest.normal - Vec2::new(-1.0, 0.0)).norm() < 0.05);
}

#[test]
fn periodic_pairing_is_a_bijection_on_the_outer_boundary() {
    for hole in [HoleSpec::default(), HoleSpec::none()] {
        let m = build_cell_mesh(hole, 0.1).unwrap();
        for (v, p) in m.vertices.iter().enumerate() {
            let on_side = p.x.abs() < 1e-12 || p.y.abs() < 1e-12 || (p.x - 1.0).abs() < 1e-12 || (p.y - 1.0).abs() < 1e-12;
            assert_eq!(on_side, m.partner(v).is_some(), "vertex {v} at {p:?}");
            if let Some(q) = m.partner(v) {
                assert_eq!(m.partner(q), Some(v));
                let d = m.vertices[q] - *p;
                let shift = |x: f64| x.abs() < 1e-12 || (x.abs() - 1.0).abs() < 1e-12;
                assert!(shift(d.x) && shift(d.y));
            }
        }
    }
}

#[test]
fn text_round_trip_preserves_hash() {
    let m = build_cell_mesh(HoleSpec::default(), 0.1).unwrap();
    let back = CellMesh::from_text(&m.to_text()).unwrap();
    assert_eq!(back.hash(), m.hash());
    assert_eq!(back.hole_edges.len(), m.hole_edges.len());
    assert!(matches!(CellMesh::from_text("nonsense"), Err(Error::Parse(_))));
}

#[test]
fn quality_holds_across_resolutions() {
    for h in [0.2, 0.1, 0.05] {
        let m = build_cell_mesh(HoleSpec::default(), h).unwrap();
        assert!(m.min_angle_deg() > 5.0);
        let circ = 2.0 * std::f64::consts::PI * 0.25;
        assert!((m.hole_length() - circ).abs() < 0.02 * circ);
    }
}
