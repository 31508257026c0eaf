//! Shared inputs for the benchmarks.

use std::sync::Arc;

use brachx_core::fixtures;
use brachx_core::{Brachistochrone, PhaseState, UnitaryMatrix};

/// A fixture system with its stored generic solution and the target it reaches.
pub fn solved_fixture(name: &str) -> (Arc<Brachistochrone>, PhaseState, UnitaryMatrix) {
    let sys = Arc::new(Brachistochrone::from_arc(fixtures::by_name(name).expect("known fixture")));
    let x = fixtures::generic_solution(name).expect("stored solution");
    (sys, x, fixtures::generic_target())
}
