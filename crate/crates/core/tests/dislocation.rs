use incompat::dislocation::{
    check_divergence_free, mollify, mollify_periodic_line, total_variation, DislocationLoop, GridMeasure,
    LineMeasure, PaddedGrid,
};
use incompat::HexMesh;
use proptest::prelude::*;

fn square(side: f64, b: [f64; 3]) -> DislocationLoop {
    DislocationLoop::square([0.5, 0.5, 0.5], side, [0, 1], b)
}

#[test]
fn total_variation_examples() {
    let one = LineMeasure::new(vec![square(1.0, [1.0, 0.0, 0.0])]);
    assert_eq!(total_variation(&one).unwrap(), 4.0);

    let l = square(0.5, [0.0, 0.6, 0.8]);
    let single = total_variation(&LineMeasure::new(vec![l.clone()])).unwrap();
    let pair = total_variation(&LineMeasure::new(vec![l.clone(), l.scaled(2.0)])).unwrap();
    assert!((pair - 3.0 * single).abs() < 1e-15);

    let hex = DislocationLoop::regular_polygon([0.5; 3], 0.3, 6, [0, 2], [0.0, 0.0, 1.0]);
    let tv = total_variation(&LineMeasure::new(vec![hex])).unwrap();
    assert!((tv - 1.8).abs() < 1e-14);
}

#[test]
fn empty_measure_rasterizes_to_zero() {
    let mesh = HexMesh::unit_cube(8);
    let grid = PaddedGrid::around(&mesh, 0.5);
    let m = mollify(&LineMeasure::empty(), &grid, 0.5).unwrap();
    assert!(m.is_zero());
    assert_eq!(check_divergence_free(&m), 0.0);
}

#[test]
fn closed_loop_is_divergence_free_with_zero_means() {
    let mesh = HexMesh::unit_cube(16);
    let h = 1.0 / 16.0;
    let grid = PaddedGrid::around(&mesh, 3.0 * h);
    let hex = DislocationLoop::regular_polygon([0.47, 0.52, 0.5], 0.3, 6, [0, 1], [0.3, -0.2, 1.0]);
    let m = mollify(&LineMeasure::new(vec![hex]), &grid, 3.0 * h).unwrap();
    assert!(check_divergence_free(&m) < 1e-10);
    assert!(m.mean_correction() < 1e-12);
    for row in m.means() {
        assert!(row.iter().all(|v| v.abs() < 1e-12));
    }
}

/// Total variation of the rasterized density, by brute-force kernel
/// convolution at cell centers of a straight periodic line: the deposit
/// must integrate to one per unit length.
#[test]
fn periodic_line_is_translation_invariant_and_unit_mass() {
    let h = 1.0 / 8.0;
    let grid = PaddedGrid::periodic_box([0.0; 3], [h; 3], [16, 16, 16]);
    let m = mollify_periodic_line(&grid, [1.03, 0.97, 0.0], 2, [0.0, 0.0, 1.0], 2.0 * h).unwrap();
    let comp = m.component(2, 2);
    for k in 1..16 {
        for j in 0..16 {
            for i in 0..16 {
                let a = comp[grid.index([i, j, 0])];
                let b = comp[grid.index([i, j, k])];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
    // per z-layer the face values plus the removed background integrate to one
    let layer: f64 = (0..256).map(|n| comp[n]).sum::<f64>() * h * h;
    let background = 1.0 / 4.0;
    assert!((layer + background * 4.0 - 1.0).abs() < 1e-12);
    assert!(check_divergence_free(&m) < 1e-10);
}

/// Corner overlap costs mass proportional to δ over the side length, so the
/// loop spans many cells of a thin slab.
#[test]
fn mass_approaches_total_variation() {
    let mesh = HexMesh::new([0.0; 3], [2.0, 2.0, 0.25], [128, 128, 16]).unwrap();
    let h = 1.0 / 64.0;
    let loop_ = DislocationLoop::square([1.0, 1.0, 0.125], 1.6, [0, 1], [1.0, 0.0, 0.0]);
    let m = LineMeasure::new(vec![loop_]);
    let tv = total_variation(&m).unwrap();
    assert!((tv - 6.4).abs() < 1e-14);
    let mut errors = Vec::new();
    for cells in [4.0, 2.0] {
        let delta = cells * h;
        let g = mollify(&m, &PaddedGrid::around(&mesh, delta), delta).unwrap();
        errors.push((g.mass() - tv).abs() / tv);
    }
    assert!(errors.iter().all(|e| *e < 0.02), "{errors:?}");
    assert!(errors[1] < errors[0], "{errors:?}");
}

#[test]
fn too_close_to_boundary_is_rejected() {
    let grid = PaddedGrid::periodic_box([0.0; 3], [0.1; 3], [10, 10, 10]);
    let l = DislocationLoop::square([0.5, 0.5, 0.5], 0.8, [0, 1], [1.0, 0.0, 0.0]);
    let err = mollify(&LineMeasure::new(vec![l]), &grid, 0.2).unwrap_err();
    assert_eq!(err.kind(), "LoopTooCloseToBoundary");
    assert_eq!(err.loop_index(), Some(0));
}

#[test]
fn grid_measure_file_round_trip() {
    let mesh = HexMesh::unit_cube(6);
    let delta = 2.0 / 6.0;
    let grid = PaddedGrid::around(&mesh, delta);
    let l = DislocationLoop::square([0.5; 3], 0.4, [1, 2], [1.0, 2.0, 0.5]);
    let m = mollify(&LineMeasure::new(vec![l]), &grid, delta).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.write(dir.path(), "mu").unwrap();
    let back = GridMeasure::read(&dir.path().join("mu.json")).unwrap();
    assert_eq!(back.components(), m.components());
    assert_eq!(back.grid(), m.grid());
}

fn random_polygon() -> impl Strategy<Value = DislocationLoop> {
    (
        prop::collection::vec((0.3f64..0.7, 0.3f64..0.7, 0.3f64..0.7), 3..7),
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
    )
        .prop_map(|(pts, b)| {
            let mut v: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            v.push(v[0]);
            DislocationLoop::new(v, [b.0, b.1, b.2])
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_polygons_rasterize_divergence_free(l in random_polygon()) {
        let mesh = HexMesh::unit_cube(8);
        let delta = 2.0 / 8.0;
        let grid = PaddedGrid::around(&mesh, delta);
        let m = mollify(&LineMeasure::new(vec![l]), &grid, delta).unwrap();
        prop_assert!(check_divergence_free(&m) < 1e-10);
        for row in m.means() {
            prop_assert!(row.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn mollify_is_linear(a in random_polygon(), b in random_polygon()) {
        let mesh = HexMesh::unit_cube(6);
        let delta = 2.0 / 6.0;
        let grid = PaddedGrid::around(&mesh, delta);
        let ma = LineMeasure::new(vec![a]);
        let mb = LineMeasure::new(vec![b]);
        let sum = mollify(&ma, &grid, delta).unwrap().add(&mollify(&mb, &grid, delta).unwrap()).unwrap();
        let joint = mollify(&ma.union(&mb), &grid, delta).unwrap();
        let diff = joint.components().iter().flatten().zip(sum.components().iter().flatten())
            .map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * joint.max_abs().max(1.0));
    }

    #[test]
    fn total_variation_additive_and_homogeneous(a in random_polygon(), b in random_polygon(), s in 0.1f64..4.0) {
        let ma = LineMeasure::new(vec![a]);
        let mb = LineMeasure::new(vec![b]);
        let ta = total_variation(&ma).unwrap();
        let tb = total_variation(&mb).unwrap();
        prop_assert!((total_variation(&ma.union(&mb)).unwrap() - ta - tb).abs() < 1e-12);
        prop_assert!((total_variation(&ma.scaled(s)).unwrap() - s * ta).abs() < 1e-12 * (1.0 + ta));
    }
}
