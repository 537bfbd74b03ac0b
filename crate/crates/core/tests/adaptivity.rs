use std::sync::Arc;

use seaice_core::adaptivity::{feedback_loop, AdaptPlan, Decision, Strategy};
use seaice_core::mesh::uniform_mesh;
use seaice_core::scenario::{Scenario, HOUR};
use seaice_core::solver::SolverSettings;

fn plan(strategy: Strategy, iterations: usize) -> AdaptPlan {
    AdaptPlan { strategy, max_iterations: iterations, ..AdaptPlan::default() }
}

#[test]
fn uniform_loop_quadruples_elements_and_halves_steps() {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 4).unwrap());
    let h = feedback_loop(&sc, mesh, 8.0 * HOUR, &plan(Strategy::Uniform, 3), &sc.goal, &SolverSettings::default()).unwrap();
    assert!(h.error.is_none());
    assert_eq!(h.iterations.len(), 3);
    for w in h.iterations.windows(2) {
        assert_eq!(w[1].mesh.n_elements(), 4 * w[0].mesh.n_elements());
        assert_eq!(w[1].k, 0.5 * w[0].k);
        assert!(w[1].unknowns > w[0].unknowns);
    }
    assert!(h.iterations.last().unwrap().marked.is_none());
}

#[test]
fn regional_marks_are_unions_of_regions() {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 8).unwrap());
    let p = AdaptPlan { regions: (2, 2), ..plan(Strategy::Regional, 2) };
    let h = feedback_loop(&sc, mesh, 8.0 * HOUR, &p, &sc.goal, &SolverSettings::default()).unwrap();
    let first = &h.iterations[0];
    let marks = first.marked.as_ref().unwrap();
    assert!(marks.count() > 0);
    let ids = first.mesh.region_ids();
    for e in 0..first.mesh.n_elements() {
        for f in 0..first.mesh.n_elements() {
            if ids[e] == ids[f] {
                assert_eq!(marks.is_marked(e), marks.is_marked(f));
            }
        }
    }
    assert_eq!(h.iterations[1].k, first.k);
}

#[test]
fn met_tolerance_stops_after_one_pass() {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 4).unwrap());
    let p = AdaptPlan { tolerance: Some(1e3), ..plan(Strategy::Local, 5) };
    let h = feedback_loop(&sc, mesh, 8.0 * HOUR, &p, &sc.goal, &SolverSettings::default()).unwrap();
    assert_eq!(h.iterations.len(), 1);
    assert!(h.iterations[0].decision.is_none() && h.iterations[0].marked.is_none());
}

#[test]
fn local_refinement_respects_the_level_cap() {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 4).unwrap());
    let p = AdaptPlan { gamma: 0.5, max_level: Some(1), ..plan(Strategy::Local, 3) };
    let h = feedback_loop(&sc, mesh, 8.0 * HOUR, &p, &sc.goal, &SolverSettings::default()).unwrap();
    assert!(h.iterations.iter().all(|it| it.mesh.max_level() <= 1));
    assert!(h.iterations.iter().all(|it| it.k == 8.0 * HOUR));
}

#[test]
fn balance_loop_records_decisions() {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 4).unwrap());
    let h = feedback_loop(&sc, mesh, 8.0 * HOUR, &plan(Strategy::Balance, 2), &sc.goal, &SolverSettings::default()).unwrap();
    let (a, b) = (&h.iterations[0], &h.iterations[1]);
    match a.decision.unwrap() {
        Decision::RefineTime => assert_eq!((b.k, b.mesh.n_elements()), (0.5 * a.k, a.mesh.n_elements())),
        Decision::RefineSpace => assert_eq!((b.k, b.mesh.n_elements()), (a.k, 4 * a.mesh.n_elements())),
        Decision::RefineBoth => assert_eq!((b.k, b.mesh.n_elements()), (0.5 * a.k, 4 * a.mesh.n_elements())),
    }
}
