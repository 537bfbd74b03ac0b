use proptest::prelude::*;

use seaice_core::mesh::{region_partition, uniform_mesh, QuadMesh, Rect, RefinementMarks};

fn refine_by(mesh: &QuadMesh, picks: &[usize]) -> QuadMesh {
    let mut marks = RefinementMarks::none(mesh.n_elements());
    for &p in picks {
        marks.set(p % mesh.n_elements());
    }
    mesh.refine(&marks).unwrap()
}

fn leaf_set(mesh: &QuadMesh) -> Vec<[u64; 4]> {
    let mut v: Vec<[u64; 4]> = (0..mesh.n_elements())
        .map(|e| {
            let r = mesh.element_rect(e);
            [r.x0, r.y0, r.x1, r.y1].map(f64::to_bits)
        })
        .collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn refinement_keeps_area_and_balance(rounds in prop::collection::vec(prop::collection::vec(0usize..1000, 1..6), 1..4)) {
        let domain = Rect::square(500e3);
        let mut mesh = uniform_mesh(domain, 4).unwrap();
        for picks in &rounds {
            mesh = refine_by(&mesh, picks);
        }
        let area: f64 = (0..mesh.n_elements()).map(|e| mesh.element_area(e)).sum();
        prop_assert!((area - domain.area()).abs() <= 1e-12 * domain.area());
        for (a, b) in mesh.edge_neighbor_pairs() {
            prop_assert!(mesh.level(a).abs_diff(mesh.level(b)) <= 1);
        }
        prop_assert!(mesh.has_patches());
    }

    #[test]
    fn constraints_are_a_projection(picks in prop::collection::vec(0usize..1000, 1..6), seed in 0u64..1000) {
        let mesh = refine_by(&uniform_mesh(Rect::square(1.0), 4).unwrap(), &picks);
        let mut v: Vec<f64> = (0..mesh.n_nodes()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64).collect();
        mesh.apply_constraints(&mut v);
        let once = v.clone();
        mesh.apply_constraints(&mut v);
        prop_assert_eq!(once, v);
    }

    #[test]
    fn refining_in_two_passes_matches_one(a in prop::collection::vec(0usize..16, 1..4), b in prop::collection::vec(0usize..16, 1..4)) {
        let base = uniform_mesh(Rect::square(1.0), 4).unwrap();
        let a: Vec<usize> = a.into_iter().filter(|x| !b.contains(x)).collect();
        let mut merged = RefinementMarks::none(16);
        for &x in a.iter().chain(&b) {
            merged.set(x);
        }
        let once = base.refine(&merged).unwrap();
        // Second-pass marks are located on the first-pass mesh by position.
        let first = refine_by(&base, &a);
        let mut second = RefinementMarks::none(first.n_elements());
        for &x in &b {
            let c = base.element_center(x);
            let e = (0..first.n_elements()).find(|&e| first.element_rect(e).contains(c)).unwrap();
            if first.level(e) == 0 {
                second.set(e);
            }
        }
        let twice = first.refine(&second).unwrap();
        prop_assert_eq!(leaf_set(&once), leaf_set(&twice));
    }
}

#[test]
fn regions_split_elements_evenly() {
    for (n, per) in [(4, 1), (8, 4), (16, 16)] {
        let mesh = uniform_mesh(Rect::square(500e3), n).unwrap();
        let ids = region_partition(&mesh, 4, 4).unwrap();
        for r in 0..16 {
            assert_eq!(ids.iter().filter(|&&i| i == r).count(), per);
        }
    }
}
