//! Named decompositions used by the experiments and figure pipelines.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::decomposition::{
    block_diagonal_p, build_type_ab, centralizer_split, make_pseudo_cartan, make_rotated_ab, ABDecomposition,
};
use crate::dynamics::PhaseState;
use crate::error::{Error, Result};
use crate::lie_algebra::{gell_mann_basis, CMatrix, UnitaryMatrix, C64};
use crate::seeding::{child_rng, standard_normal_vec};

/// Seed of the random basis rotation behind `su4_chaotic`.
pub const CHAOTIC_SEED: u64 = 20_240_611;
/// Dimension of 𝔸 in `su4_chaotic`, equal to dim 𝔭 of the (4, 2) split.
pub const CHAOTIC_DIM_A: usize = 8;

pub const NAMES: [&str; 4] = ["su4_type1", "su4_type2", "su4_chaotic", "su3_appendix"];

/// 𝔸 = 𝔭, 𝔹 = 𝔩 of the block split su(4) ⊃ s(u(2) ⊕ u(2)).
pub fn su4_type1() -> ABDecomposition {
    make_pseudo_cartan(4, 2).expect("valid split").ab()
}

/// Type II on the same split, centred on `â` with off-diagonal block `𝕀/2`.
pub fn su4_type2() -> ABDecomposition {
    let pc = make_pseudo_cartan(4, 2).expect("valid split");
    let p = block_diagonal_p(4, 2, &[0.5, 0.5]).expect("fits the block");
    // spectrum ±½, each twice: Q = 2
    let cs = centralizer_split(&pc, &p, 2).expect("centralizer");
    build_type_ab(&cs)
}

/// su(3) ⊃ s(u(2) ⊕ u(1)) with `â = E13 + E31` and 𝔞 = 𝔭 ⊕ 𝔩_a.
pub fn su3_appendix() -> ABDecomposition {
    let pc = make_pseudo_cartan(3, 2).expect("valid split");
    let p = block_diagonal_p(3, 2, &[1.0]).expect("fits the block");
    build_type_ab(&centralizer_split(&pc, &p, 3).expect("centralizer"))
}

/// Haar-random orthogonal matrix from a seeded Gaussian via QR with sign fix.
pub fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let g = DMatrix::from_vec(dim, dim, standard_normal_vec(&mut child_rng(seed, "rotation", 0), dim * dim));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            for v in q.column_mut(c).iter_mut() {
                *v = -*v;
            }
        }
    }
    q
}

/// A generic su(4) decomposition: 𝔸 spanned by the first `CHAOTIC_DIM_A`
/// columns of a pinned random rotation of the Gell-Mann basis.
pub fn su4_chaotic() -> ABDecomposition {
    chaotic(4, CHAOTIC_DIM_A, CHAOTIC_SEED).expect("pinned fixture is controllable")
}

pub fn chaotic(n: usize, dim_a: usize, seed: u64) -> Result<ABDecomposition> {
    let basis = gell_mann_basis(n)?;
    let rot = random_rotation(basis.len(), seed);
    let a: Vec<usize> = (0..dim_a).collect();
    let dec = make_rotated_ab(basis, rot, &a)?;
    if !dec.verify_controllability() {
        return Err(Error::invalid("random decomposition is not controllable"));
    }
    Ok(dec)
}

/// Seed of the generic (Haar-random) su(4) target.
pub const GENERIC_TARGET_SEED: u64 = 7_311;

/// Haar-random element of SU(n): QR of a complex Gaussian matrix with the
/// phases of R moved into Q, then the determinant divided out.
pub fn haar_unitary(n: usize, seed: u64) -> UnitaryMatrix {
    let g = standard_normal_vec(&mut child_rng(seed, "haar", 0), 2 * n * n);
    let m = CMatrix::from_fn(n, n, |r, c| C64::new(g[2 * (r * n + c)], g[2 * (r * n + c) + 1]) / 2f64.sqrt());
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        let d = r[(c, c)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for v in q.column_mut(c).iter_mut() {
            *v *= ph;
        }
    }
    let det = q.determinant();
    let root = C64::from_polar(1.0, -det.arg() / n as f64);
    UnitaryMatrix::nearest(&(q * root))
}

/// The pinned generic target used by the stability experiments.
pub fn generic_target() -> UnitaryMatrix {
    haar_unitary(4, GENERIC_TARGET_SEED)
}

/// Lowest-cost solutions of `U(1) = generic_target()` found by damped Newton
/// shooting from 12 starts per fixture (start norms 1.5, 2.5, 3.5), stored in
/// adapted coordinates `(a, λ)`.
const SOLUTION_TYPE1: [f64; 15] = [
    5.515123129871753, 2.027717347419564, -2.5754938871346447, -0.16106441422283835, -0.4767229368424643,
    0.48670337065927083, -0.47913378160450354, -3.8309358096316837, 1.6907181228409645, -0.9688681385021366,
    -1.1739945896921928, -0.8662296355622262, 0.16673972186832733, -0.6152506764810342, -0.9510003863060145,
];
const SOLUTION_TYPE2: [f64; 15] = [
    -1.3979345844419655, -1.956627690209849, -3.017495202625179, -0.12424552512138616, -1.0776479114464195,
    0.9945908872749711, 0.15054429236801498, -1.4784570016498924, -1.223602400232945, -0.3905676646787944,
    1.0532836043342735, 2.93804229373929, 0.5907919268069242, -0.2262856808430851, 1.5196343181602705,
];
const SOLUTION_CHAOTIC: [f64; 15] = [
    -0.5146082922545014, 0.2652482800646057, -2.515781371330121, -0.9588357888028846, -2.866163628120003,
    0.3075786484682884, -0.8047553951820402, 1.715261434393137, 2.0494065121281997, -3.409088499988256,
    -8.745773936862381, -3.2203186246876885, 0.5458448812372042, 2.162380368404333, 3.0418787932616724,
];

/// Initial data solving the generic target on one of the su(4) fixtures.
pub fn generic_solution(name: &str) -> Result<PhaseState> {
    let x: &[f64] = match name {
        "su4_type1" => &SOLUTION_TYPE1,
        "su4_type2" => &SOLUTION_TYPE2,
        "su4_chaotic" => &SOLUTION_CHAOTIC,
        _ => return Err(Error::invalid(format!("no stored generic solution for '{name}'"))),
    };
    let dec = by_name(name)?;
    let (a, lambda) = dec.split(x);
    Ok(PhaseState::new(a, lambda))
}

pub fn by_name(name: &str) -> Result<Arc<ABDecomposition>> {
    Ok(Arc::new(match name {
        "su4_type1" => su4_type1(),
        "su4_type2" => su4_type2(),
        "su4_chaotic" => su4_chaotic(),
        "su3_appendix" => su3_appendix(),
        _ => {
            return Err(Error::invalid(format!(
                "unknown fixture '{name}'; expected one of {}",
                NAMES.join(", ")
            )))
        }
    }))
}
