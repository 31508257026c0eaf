use std::sync::Arc;

use brachx_core::bvp::{cost_c, residual_cost, solve_multistart, BvpProblem};
use brachx_core::decomposition::make_pseudo_cartan;
use brachx_core::dynamics::{integrate, uniform_grid};
use brachx_core::fixtures;
use brachx_core::integrable::{type1_a_of_t, type1_unitary};
use brachx_core::seeding::{child_rng, isotropic_vec};
use brachx_core::{ABDecomposition, Brachistochrone, PhaseState, UnitaryMatrix};
use proptest::prelude::*;

fn state(dec: &ABDecomposition, seed: u64, norm: f64) -> PhaseState {
    let x = isotropic_vec(&mut child_rng(seed, "pipeline", 0), dec.dim(), norm);
    let (a, lambda) = dec.split(&x);
    PhaseState::new(a, lambda)
}

#[test]
fn decomposition_survives_json() {
    for name in fixtures::NAMES {
        let dec = fixtures::by_name(name).unwrap();
        let text = serde_json::to_string(&*dec).unwrap();
        let back: ABDecomposition = serde_json::from_str(&text).unwrap();
        assert_eq!(back.content_hash(), dec.content_hash(), "{name}");
        assert_eq!(back.kind(), dec.kind());
    }
}

#[test]
fn forward_target_has_zero_cost_and_the_solver_finds_a_root() {
    let dec = Arc::new(make_pseudo_cartan(2, 1).unwrap().ab());
    let sys = Brachistochrone::from_arc(dec.clone());
    let x = state(&dec, 3, 0.8);
    let (_, u) = sys.propagate(&sys.full_coords(&x), 1.0, 1e-12).unwrap();
    assert!(cost_c(&sys, &x, &u, 1e-12).unwrap() < 1e-9);
    let mut prob = BvpProblem::new(dec, u, 4);
    prob.n_starts = 4;
    let res = solve_multistart(&prob).unwrap();
    assert!(res.best_cost < 1e-6, "{:e}", res.best_cost);
    assert_eq!(res.final_costs.len(), 4);
}

#[test]
fn type1_closed_form_agrees_with_the_integrator() {
    let dec = fixtures::by_name("su4_type1").unwrap();
    let sys = Arc::new(Brachistochrone::from_arc(dec.clone()));
    let x = state(&dec, 8, 1.5);
    let traj = integrate(&sys, &x, 1.0, 1e-12, &uniform_grid(1.0, 10)).unwrap();
    let a1 = type1_a_of_t(&dec, &x, 1.0).unwrap();
    let err = a1.iter().zip(&traj.last().a).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err:e}");
    let (_, u) = sys.propagate(&sys.full_coords(&x), 1.0, 1e-12).unwrap();
    assert!(residual_cost(&type1_unitary(&dec, &x, 1.0).unwrap(), &u) < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn su3_flow_conserves_monitors(seed in any::<u64>(), norm in 0.2f64..3.0) {
        let dec = fixtures::by_name("su3_appendix").unwrap();
        let sys = Arc::new(Brachistochrone::from_arc(dec.clone()));
        let x = state(&dec, seed, norm);
        let traj = integrate(&sys, &x, 1.0, 1e-11, &uniform_grid(1.0, 20)).unwrap();
        prop_assert!(traj.drift().max_invariant() < 1e-8);
    }

    #[test]
    fn targets_keep_their_shape_through_json(seed in any::<u64>()) {
        let u = fixtures::haar_unitary(3, seed);
        let back: UnitaryMatrix = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        prop_assert!(back.distance(&u) < 1e-15);
        prop_assert!(u.unitarity_defect() < 1e-12);
    }
}
