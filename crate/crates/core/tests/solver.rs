use std::sync::Arc;

use seaice_core::fem::{LocalField, QuadratureRule};
use seaice_core::mesh::{uniform_mesh, QuadMesh, RefinementMarks};
use seaice_core::model::forms::{FieldSet, Form, FormContext, SpaceTimeFn};
use seaice_core::scenario::{Scenario, DAY, HOUR};
use seaice_core::solver::{simulate, SolverSettings, Trajectory};

fn run(sc: &Scenario, mesh: QuadMesh, k_hours: f64) -> Trajectory {
    simulate(sc, Arc::new(mesh), k_hours * HOUR, &SolverSettings::default()).unwrap()
}

fn assert_mass_conserved(tr: &Trajectory) {
    let m0 = tr.states[0].h.integral();
    for (n, s) in tr.states.iter().enumerate() {
        let drift = (s.h.integral() - m0).abs() / m0;
        assert!(drift <= 1e-9, "step {n}: relative mass drift {drift:e}");
    }
}

#[test]
fn thickness_mass_is_conserved() {
    let sc = Scenario::benchmark_1day();
    assert_mass_conserved(&run(&sc, uniform_mesh(sc.domain, 8).unwrap(), 8.0));
    let sc2 = Scenario::benchmark_33day().with_horizon(DAY);
    assert_mass_conserved(&run(&sc2, uniform_mesh(sc2.domain, 8).unwrap(), 4.0));
}

#[test]
fn mass_is_conserved_with_hanging_nodes() {
    let sc = Scenario::benchmark_1day();
    let base = uniform_mesh(sc.domain, 8).unwrap();
    let flags: Vec<bool> = (0..base.n_elements()).map(|e| base.element_center(e)[0] > 300e3).collect();
    let mesh = base.refine(&RefinementMarks::from_flags(flags)).unwrap();
    assert!(!mesh.hanging_nodes().is_empty());
    let tr = run(&sc, mesh, 8.0);
    assert_mass_conserved(&tr);
    for s in &tr.states {
        let mut h = s.h.values().to_vec();
        tr.mesh.apply_constraints(&mut h);
        assert_eq!(h, s.h.values());
    }
}

#[test]
fn node_numbering_does_not_change_the_solution() {
    let sc = Scenario::benchmark_1day();
    let mesh = uniform_mesh(sc.domain, 8).unwrap();
    let nn = mesh.n_nodes();
    let perm: Vec<usize> = (0..nn).map(|i| (i * 37 + 11) % nn).collect();
    assert_eq!(nn % 37, 7, "37 must be invertible modulo the node count");
    let renumbered = mesh.renumbered(&perm).unwrap();
    let a = run(&sc, mesh, 8.0);
    let b = run(&sc, renumbered, 8.0);
    let ja = a.goal_value(&sc.goal);
    assert!((ja - b.goal_value(&sc.goal)).abs() <= 1e-12 * ja);
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let scale = sa.v.x.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (old, &new) in perm.iter().enumerate() {
            assert!((sa.a.values()[old] - sb.a.values()[new]).abs() <= 1e-9);
            assert!((sa.v.x.values()[old] - sb.v.x.values()[new]).abs() <= 1e-6 * scale);
        }
    }
}

#[test]
fn discrete_solution_satisfies_the_split_form() {
    // B_s(U)(Z) vanishes for every discrete dG(0) test function once the
    // step equations are solved.
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, 8).unwrap());
    let tr = simulate(&sc, mesh.clone(), 8.0 * HOUR, &SolverSettings::default()).unwrap();
    let ctx = FormContext::new(mesh.clone(), &sc, tr.times.clone(), QuadratureRule::gauss2()).unwrap();
    let u = SpaceTimeFn::from_states(&tr.states);
    let frozen = SpaceTimeFn::from_states(&vec![tr.states[0].clone(); tr.states.len()]);
    let nn = mesh.n_nodes();
    let mut seed = 7u64;
    let mut rnd = || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut levels = Vec::new();
    for _ in 0..tr.n_steps() {
        let mut vals = |s: f64| {
            let mut v: Vec<f64> = (0..nn).map(|_| s * rnd()).collect();
            for (i, p) in mesh.nodes().iter().enumerate() {
                if mesh.is_boundary(i) && s == 1.0 {
                    let _ = p;
                    v[i] = 0.0;
                }
            }
            LocalField::from_q1(&mesh, &v)
        };
        levels.push(FieldSet { v: [vals(1.0), vals(1.0)], a: vals(0.5), h: vals(0.5) });
    }
    let z = SpaceTimeFn::dg0(FieldSet::zeros(mesh.n_elements()), levels);
    let at_solution = ctx.form(Form::Split, &u, &z).unwrap().total();
    let off_solution = ctx.form(Form::Split, &frozen, &z).unwrap().total();
    assert!(
        at_solution.abs() <= 1e-8 * off_solution.abs(),
        "B_s(U)(Z) = {at_solution:e} against {off_solution:e} off the solution"
    );
}

#[test]
fn step_count_follows_the_horizon() {
    let sc = Scenario::benchmark_1day();
    let tr = run(&sc, uniform_mesh(sc.domain, 4).unwrap(), 8.0);
    assert_eq!(tr.n_steps(), 3);
    assert_eq!(tr.times, vec![0.0, 8.0 * HOUR, 16.0 * HOUR, 24.0 * HOUR]);
    assert_eq!(tr.diagnostics.len(), 4);
    assert!(tr.diagnostics[1..].iter().all(|d| d.newton_iterations > 0));
    assert!(simulate(&sc, tr.mesh.clone(), 5.0 * HOUR, &SolverSettings::default()).is_err());
}
