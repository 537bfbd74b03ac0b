use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seaice_core::adjoint::{dual_forms, dual_simulate, linearize_step, DualTrajectory};
use seaice_core::linalg::{dot, CsrMatrix};
use seaice_core::mesh::uniform_mesh;
use seaice_core::model::GoalSpec;
use seaice_core::scenario::{Scenario, HOUR};
use seaice_core::solver::{simulate, Discretization, SolverSettings, Trajectory};

fn run(n: usize, k_hours: f64) -> (Scenario, Trajectory) {
    let sc = Scenario::benchmark_1day();
    let mesh = Arc::new(uniform_mesh(sc.domain, n).unwrap());
    let tr = simulate(&sc, mesh, k_hours * HOUR, &SolverSettings::default()).unwrap();
    (sc, tr)
}

fn flat(d: &DualTrajectory) -> Vec<f64> {
    d.states
        .iter()
        .flat_map(|s| [&s.z.x, &s.z.y, &s.qa, &s.qh].into_iter().flat_map(|f| f.values().to_vec()))
        .collect()
}

#[test]
fn dual_is_linear_in_the_goal_window() {
    let (sc, tr) = run(8, 8.0);
    let t_end = sc.t_end;
    let ta = 8.0 * HOUR;
    let g = |t1, t2| GoalSpec::new(sc.goal.region, t1, t2).unwrap();
    let s = SolverSettings::default();
    let full = flat(&dual_simulate(&sc, &tr, &g(0.0, t_end), &s).unwrap());
    let early = flat(&dual_simulate(&sc, &tr, &g(0.0, ta), &s).unwrap());
    let late = flat(&dual_simulate(&sc, &tr, &g(ta, t_end), &s).unwrap());
    let (we, wl) = (ta / t_end, 1.0 - ta / t_end);
    let scale = full.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = full
        .iter()
        .zip(early.iter().zip(&late))
        .map(|(f, (e, l))| (f - we * e - wl * l).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8 * scale, "superposition defect {worst:e} of {scale:e}");
}

fn random_pairs(dual: &CsrMatrix, primal: &CsrMatrix, rng: &mut ChaCha8Rng) {
    for _ in 0..100 {
        let a: Vec<f64> = (0..dual.n_cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dual.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // <D a, b> = <a, P b> when D = P^T.
        let lhs = dot(&dual.matvec(&a), &b);
        let rhs = dot(&a, &primal.matvec(&b));
        let scale = dual.max_abs() * (a.len() as f64).sqrt() * (b.len() as f64).sqrt();
        assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs:e} vs {rhs:e}");
    }
}

#[test]
fn dual_operators_pass_random_inner_product_tests() {
    let (sc, tr) = run(4, 8.0);
    let disc = Discretization::new(tr.mesh.clone(), &sc);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in 1..=tr.n_steps() {
        let lin = linearize_step(&disc, &sc, &tr, n).unwrap();
        let d = dual_forms::assemble(&sc, &tr, n).unwrap();
        random_pairs(&d.momentum, &lin.momentum, &mut rng);
        random_pairs(&d.transport_a, &lin.transport_a, &mut rng);
        random_pairs(&d.couple_h, &lin.couple_h, &mut rng);
        if let (Some(dn), Some(ln)) = (&d.next, &lin.next) {
            random_pairs(&dn.0, &ln.0, &mut rng);
            random_pairs(&dn.2, &ln.2, &mut rng);
        }
    }
}

#[test]
fn single_step_dual() {
    let (sc, tr) = run(4, 24.0);
    assert_eq!(tr.n_steps(), 1);
    let d = dual_simulate(&sc, &tr, &sc.goal, &SolverSettings::default()).unwrap();
    assert_eq!(d.n_steps(), 1);
    assert_eq!(d.times, tr.times);
    assert!(d.get(1).unwrap().qa.values().iter().any(|x| *x != 0.0));
    assert!(d.get(2).unwrap().qa.values().iter().all(|x| *x == 0.0));
    assert!(dual_forms::assemble(&sc, &tr, 1).unwrap().next.is_none());
    assert!(dual_forms::assemble(&sc, &tr, 2).is_err());
}
