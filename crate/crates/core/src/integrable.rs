//! Closed-form and reduced solutions of the integrable families, and the
//! Euler–Arnold Lax flow whose ε → 0 limit reproduces them.
//!
//! Everything here works in the Hermitian frame: `T = H + D` is split over a
//! pseudo-Cartan decomposition as `T = L + S` with `L ∈ 𝔩`, `S ∈ 𝔭`, and the
//! brachistochrone flow reads `dT/dt = −i[T, P_B T]`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::decomposition::{ABDecomposition, CentralizerSplit};
use crate::dynamics::{monitor_for, write_trajectory_csv, Brachistochrone, PhaseState};
use crate::error::{Error, Result};
use crate::lie_algebra::{
    bracket, exp_hermitian, expm, time_ordered_exp_on_grid, CMatrix, HermitianMatrix, UnitaryMatrix, C64,
};
use crate::ode::{self, OdeOptions};
use crate::policy::NumericPolicy;

// ---------------------------------------------------------------------------
// Type I
// ---------------------------------------------------------------------------

fn require_type1(dec: &ABDecomposition) -> Result<()> {
    let r = dec.b_closure_residual();
    if r > NumericPolicy::current().closure {
        return Err(Error::invalid(format!(
            "decomposition is not Type I: 𝔹 fails to close under the bracket (residual {r:e})"
        )));
    }
    Ok(())
}

/// Generator `Ĉ` of `ȧ = Ĉ a` for constant multipliers: `Ĉ_ab = −Σ_j f_{a j b} λ_j`
/// in the adapted basis (antisymmetric).
pub fn type1_generator(dec: &ABDecomposition, lambda: &[f64]) -> DMatrix<f64> {
    let d = dec.dim();
    let f = dec.adapted_structure_constants();
    let na = dec.dim_a();
    let mut c = DMatrix::zeros(na, na);
    for (p, &ia) in dec.a_indices().iter().enumerate() {
        for (r, &ib) in dec.a_indices().iter().enumerate() {
            let mut acc = 0.0;
            for (&jb, &lj) in dec.b_indices().iter().zip(lambda) {
                acc -= f[(ia * d + jb) * d + ib] * lj;
            }
            c[(p, r)] = acc;
        }
    }
    c
}

/// `exp(Ĉ t)` for real antisymmetric `Ĉ`, via the Hermitian matrix `iĈ`.
fn exp_antisymmetric(c: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let h = c.map(|v| C64::new(0.0, v));
    exp_hermitian(&h, t).map(|z| z.re)
}

/// `a(t) = exp(Ĉ t) a(0)` on a Type I decomposition.
pub fn type1_a_of_t(dec: &ABDecomposition, state0: &PhaseState, t: f64) -> Result<Vec<f64>> {
    require_type1(dec)?;
    let c = type1_generator(dec, &state0.lambda);
    let a = exp_antisymmetric(&c, t) * DVector::from_column_slice(&state0.a);
    Ok(a.as_slice().to_vec())
}

/// `U(t) = exp(iD(0)t)·exp(−i(H(0)+D(0))t)` on a Type I decomposition.
pub fn type1_unitary(dec: &ABDecomposition, state0: &PhaseState, t: f64) -> Result<UnitaryMatrix> {
    require_type1(dec)?;
    Ok(type1_unitary_unchecked(dec, &state0.a, &state0.lambda, t))
}

pub(crate) fn type1_unitary_unchecked(dec: &ABDecomposition, a: &[f64], lambda: &[f64], t: f64) -> UnitaryMatrix {
    let h = dec.assemble_a(a).into_matrix();
    let d = dec.assemble_b(lambda).into_matrix();
    let k = &h + &d;
    UnitaryMatrix::from_raw(exp_hermitian(&d, -t) * exp_hermitian(&k, t))
}

/// Closed-form Type I trajectory exported on the dynamics CSV schema with a
/// `closed_form` provenance column.
pub fn write_type1_csv<W: Write>(w: W, dec: &ABDecomposition, state0: &PhaseState, times: &[f64]) -> Result<()> {
    require_type1(dec)?;
    let c = type1_generator(dec, &state0.lambda);
    let mut samples = Vec::with_capacity(times.len());
    let mut monitors = Vec::with_capacity(times.len());
    for &t in times {
        let a = exp_antisymmetric(&c, t) * DVector::from_column_slice(&state0.a);
        let s = PhaseState {
            a: a.as_slice().to_vec(),
            lambda: state0.lambda.clone(),
            t,
        };
        monitors.push(monitor_for(dec, &dec.join(&s.a, &s.lambda)));
        samples.push(s);
    }
    write_trajectory_csv(w, dec.n(), &samples, &monitors, Some("closed_form"))
}

/// Solves the BVP for `U_d` and for `exp(iX) U_d exp(−iX)` and returns both costs.
pub fn conjugation_invariance_check<S>(
    dec: &ABDecomposition,
    u_d: &UnitaryMatrix,
    x: &HermitianMatrix,
    solver: S,
) -> Result<(f64, f64)>
where
    S: Fn(&UnitaryMatrix) -> Result<f64>,
{
    let a_part = dec.project_a(x).frobenius_norm();
    if a_part > NumericPolicy::current().closure * x.frobenius_norm().max(1.0) {
        return Err(Error::invalid(format!("X is not in 𝔹 (𝔸-component norm {a_part:e})")));
    }
    let primed = conjugate_target(u_d, x);
    Ok((solver(u_d)?, solver(&primed)?))
}

/// `exp(iX) U exp(−iX)`.
pub fn conjugate_target(u: &UnitaryMatrix, x: &HermitianMatrix) -> UnitaryMatrix {
    let left = expm(x, -1.0);
    let right = expm(x, 1.0);
    &(&left * u) * &right
}

// ---------------------------------------------------------------------------
// Type II
// ---------------------------------------------------------------------------

/// Reduced Type II solution: `L_a` constant, `L⊥(t) = e^{−iL_a t} L⊥(0) e^{iL_a t}`,
/// `S(t) = V(t) S(0) V(t)†` with `dV/dt = i L⊥(t) V`.
#[derive(Debug, Clone)]
pub struct Type2Solution {
    dec: Arc<ABDecomposition>,
    /// Coordinates of `L_a` on the orthonormal 𝔩_a basis (constants of motion).
    pub l_a_const: Vec<f64>,
    l_a: CMatrix,
    l_perp0: CMatrix,
    s0: CMatrix,
}

pub fn type2_reduce(dec: &Arc<ABDecomposition>, state0: &PhaseState) -> Result<Type2Solution> {
    if !dec.is_type2() {
        return Err(Error::invalid("decomposition is not Type II (𝔟 must equal 𝔩⊥)"));
    }
    let cs = dec.cartan().expect("Type II decompositions carry a centralizer split");
    let t = dec.assemble(&dec.join(&state0.a, &state0.lambda)).into_matrix();
    let basis = cs.parent().basis();
    let coords = basis.coordinates(&t);
    let mut s_coords = vec![0.0; coords.len()];
    for &i in cs.parent().p_indices() {
        s_coords[i] = coords[i];
    }
    let s0 = basis.assemble(&s_coords).into_matrix();
    let la_basis = cs.l_a_basis();
    let l_a_const: Vec<f64> = la_basis
        .iter()
        .map(|y| crate::lie_algebra::trace_product_re(&t, y.matrix()))
        .collect();
    let mut l_a = CMatrix::zeros(t.nrows(), t.ncols());
    for (y, &c) in la_basis.iter().zip(&l_a_const) {
        l_a += y.matrix() * C64::new(c, 0.0);
    }
    let l_perp0 = &t - &s0 - &l_a;
    Ok(Type2Solution {
        dec: dec.clone(),
        l_a_const,
        l_a,
        l_perp0,
        s0,
    })
}

impl Type2Solution {
    pub fn l_perp_at(&self, t: f64) -> HermitianMatrix {
        let w = exp_hermitian(&self.l_a, t);
        HermitianMatrix::project(&(&w * &self.l_perp0 * w.adjoint()))
    }

    /// `T(t) = S(t) + L_a + L⊥(t)` at each grid time (increasing, starting at 0).
    pub fn on_grid(&self, times: &[f64]) -> Result<Vec<HermitianMatrix>> {
        if times.first() != Some(&0.0) {
            return Err(Error::invalid("Type II grid must start at t = 0"));
        }
        let l_a = self.l_a.clone();
        let lp0 = self.l_perp0.clone();
        let gen = move |t: f64| {
            let w = exp_hermitian(&l_a, t);
            -(&w * &lp0 * w.adjoint())
        };
        let vs = time_ordered_exp_on_grid(gen, times, NumericPolicy::current().time_ordering)?;
        Ok(times
            .iter()
            .zip(vs)
            .map(|(&t, v)| {
                let s = &v * &self.s0 * v.adjoint();
                HermitianMatrix::project(&(s + &self.l_a + self.l_perp_at(t).matrix()))
            })
            .collect())
    }

    pub fn states_on_grid(&self, times: &[f64]) -> Result<Vec<PhaseState>> {
        Ok(self
            .on_grid(times)?
            .iter()
            .zip(times)
            .map(|(m, &t)| {
                let (a, lambda) = self.dec.split(&self.dec.coordinates(m.matrix()));
                PhaseState { a, lambda, t }
            })
            .collect())
    }

    /// Closed form of `S(t)`: in the frame rotating with `L_a`, `S` evolves by the
    /// constant generator `L⊥(0) + L_a`. Used to cross-check the ordered product.
    pub fn s_closed_form(&self, t: f64) -> HermitianMatrix {
        let w = exp_hermitian(&self.l_a, t);
        let k = &self.l_perp0 + &self.l_a;
        let e = exp_hermitian(&k, -t);
        let st = &e * &self.s0 * e.adjoint();
        HermitianMatrix::project(&(&w * st * w.adjoint()))
    }

    pub fn s0(&self) -> &CMatrix {
        &self.s0
    }
}

/// Coordinates of `x` on the 𝔩_a basis of a centralizer split.
pub fn l_a_projection(cs: &CentralizerSplit, x: &CMatrix) -> Vec<f64> {
    cs.l_a_basis()
        .iter()
        .map(|y| crate::lie_algebra::trace_product_re(x, y.matrix()))
        .collect()
}

// ---------------------------------------------------------------------------
// su(3) worked example
// ---------------------------------------------------------------------------

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Antisymmetric `M̂(m)` of the linear `a`-block, rows as in the worked example.
pub fn su3_example_m(m1: f64, m2: f64, m3: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, -m2, -2.0 * m3, -m1, //
            m2, 0.0, -m1, -m3, //
            2.0 * m3, m1, 0.0, -m2, //
            m1, m3, m2, 0.0,
        ],
    )
}

/// Elements `P₁..P₄, X, Y₁, Y₂, Y₃` of the worked su(3) example, in the order of
/// its coordinates `(a₁..a₄, l, m₁, m₂, m₃)`.
pub fn su3_example_elements() -> Vec<CMatrix> {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let m = |v: [C64; 9]| CMatrix::from_row_slice(3, 3, &v);
    let r3 = 3f64.sqrt();
    vec![
        m([z, z, o, z, z, z, o, z, z]),
        m([z, z, z, z, z, o, z, o, z]),
        m([z, z, -i, z, z, z, i, z, z]),
        m([z, z, z, z, z, -i, z, i, z]),
        m([o / r3, z, z, z, -o * 2.0 / r3, z, z, z, o / r3]),
        m([z, o, z, o, z, z, z, z, z]),
        m([z, -i, z, i, z, z, z, z, z]),
        m([o, z, z, z, z, z, z, z, -o]),
    ]
}

/// Worked-example coordinates of `T`: `y_i = −Tr(T P_i)/2`.
pub fn su3_example_coords(t: &CMatrix) -> [f64; 8] {
    let el = su3_example_elements();
    std::array::from_fn(|i| -crate::lie_algebra::trace_product_re(t, &el[i]) / 2.0)
}

/// Right-hand side of the su(3) example in the order `(a₁..a₄, l, m₁, m₂, m₃)`.
pub fn su3_example_rhs(y: &[f64; 8]) -> [f64; 8] {
    let m = su3_example_m(y[5], y[6], y[7]);
    let a = m * DVector::from_column_slice(&y[..4]);
    [a[0], a[1], a[2], a[3], 0.0, SQRT3 * y[4] * y[6], -SQRT3 * y[4] * y[5], 0.0]
}

/// Solution of the su(3) example at time `t ≥ 0`: `m₁, m₂` rotate at angular
/// frequency `√3·l`, `a(t)` is the ordered exponential of `M̂(t)`.
pub fn su3_example_solution(y0: &[f64; 8], t: f64) -> Result<[f64; 8]> {
    if t < 0.0 {
        return Err(Error::invalid("su3_example_solution needs t >= 0"));
    }
    let (l, m10, m20, m3) = (y0[4], y0[5], y0[6], y0[7]);
    let w = SQRT3 * l;
    let m_at = move |s: f64| {
        let (sn, cs) = (w * s).sin_cos();
        (m10 * cs + m20 * sn, -m10 * sn + m20 * cs)
    };
    let a = if t == 0.0 {
        DVector::from_column_slice(&y0[..4])
    } else {
        let gen = move |s: f64| {
            let (m1, m2) = m_at(s);
            // dA/dt = M̂A = −i(iM̂)A
            su3_example_m(m1, m2, m3).map(|v| C64::new(0.0, v))
        };
        let grid: Vec<f64> = (0..=16).map(|k| t * k as f64 / 16.0).collect();
        let prop = time_ordered_exp_on_grid(gen, &grid, 1e-11)?.pop().unwrap();
        prop.map(|z| z.re) * DVector::from_column_slice(&y0[..4])
    };
    let (m1, m2) = m_at(t);
    Ok([a[0], a[1], a[2], a[3], l, m1, m2, m3])
}

// ---------------------------------------------------------------------------
// Polynomials and the φ construction
// ---------------------------------------------------------------------------

/// Real polynomial, coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Self(vec![c])
    }

    /// `z − r`.
    fn linear_root(r: f64) -> Self {
        Self(vec![-r, 1.0])
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        if self.0.len() <= 1 {
            return Self(vec![0.0]);
        }
        Self(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn mul(&self, o: &Polynomial) -> Self {
        let mut out = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self(out)
    }

    pub fn add(&self, o: &Polynomial) -> Self {
        let mut out = vec![0.0; self.0.len().max(o.0.len())];
        for (i, a) in self.0.iter().enumerate() {
            out[i] += a;
        }
        for (i, b) in o.0.iter().enumerate() {
            out[i] += b;
        }
        Self(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|c| c * s).collect())
    }
}

/// `φ(z) = z²/2 + ψ(z) Π_s (z − a_s)² / 2` with
/// `ψ(z) = −Σ_{k ≤ q} Π_{s≠k} (z − a_s)/(a_k − a_s)³` (k counted from 1).
///
/// Then `φ'(a_i) = a_i` for every `i`, `φ''(a_i) = 0` for `i ≤ q` and
/// `φ''(a_i) = 1` for `i > q`.
pub fn build_phi(spectrum: &[f64], q: usize) -> Result<Polynomial> {
    if q > spectrum.len() {
        return Err(Error::invalid(format!("q = {q} exceeds the number of eigenvalues {}", spectrum.len())));
    }
    for (i, a) in spectrum.iter().enumerate() {
        for b in &spectrum[i + 1..] {
            if (a - b).abs() < NumericPolicy::current().eigen_cluster {
                return Err(Error::invalid(format!("coincident eigenvalues {a} and {b}")));
            }
        }
    }
    let mut psi = Polynomial::constant(0.0);
    for k in 0..q {
        let mut term = Polynomial::constant(-1.0);
        for (s, &a_s) in spectrum.iter().enumerate() {
            if s != k {
                let denom = (spectrum[k] - a_s).powi(3);
                term = term.mul(&Polynomial::linear_root(a_s).scale(1.0 / denom));
            }
        }
        psi = psi.add(&term);
    }
    let mut prod = Polynomial::constant(1.0);
    for &a_s in spectrum {
        let r = Polynomial::linear_root(a_s);
        prod = prod.mul(&r).mul(&r);
    }
    let half_z2 = Polynomial(vec![0.0, 0.0, 0.5]);
    Ok(half_z2.add(&psi.mul(&prod).scale(0.5)))
}

// ---------------------------------------------------------------------------
// Lax matrices and the Euler–Arnold flow
// ---------------------------------------------------------------------------

/// `L(λ) = λA + L + S/λ`, `M(λ) = λB + ω(L)` for a centralizer split.
#[derive(Debug, Clone)]
pub struct LaxMatrices {
    pub a_hat: HermitianMatrix,
    pub b_hat: HermitianMatrix,
    /// ω as a matrix on the 𝔩 coordinates (canonical basis restricted to the 𝔩 indices).
    pub omega: DMatrix<f64>,
    pub phi: Polynomial,
    pub epsilon: f64,
    split: CentralizerSplit,
}

/// `f(X)` for Hermitian `X` via its eigen-decomposition.
fn poly_of_hermitian(p: &Polynomial, x: &CMatrix) -> CMatrix {
    let eig = x.clone().symmetric_eigen();
    let n = x.nrows();
    let mut v = eig.eigenvectors.clone();
    for c in 0..n {
        let w = p.eval(eig.eigenvalues[c]);
        for r in 0..n {
            v[(r, c)] *= C64::new(w, 0.0);
        }
    }
    v * eig.eigenvectors.adjoint()
}

/// Builds the Lax data at `â = ε p̂`. At ε = 0 the map ω and φ are taken from
/// the limit (computed at ε = 1, where both are ε-independent) while `â = b̂ = 0`.
pub fn lax_from_split(cs: &CentralizerSplit, epsilon: f64) -> Result<LaxMatrices> {
    let policy = NumericPolicy::current();
    let parent = cs.parent();
    let basis = parent.basis();
    let unit = cs.a_element().matrix();
    let eps_eff = if epsilon == 0.0 { 1.0 } else { epsilon };
    let a_eff = unit * C64::new(eps_eff, 0.0);
    let spectrum: Vec<f64> = cs.eigenvalues().iter().map(|v| v * eps_eff).collect();
    let phi = build_phi(&spectrum, cs.q())?;
    let b_eff = poly_of_hermitian(&phi.derivative(), &a_eff);

    let l_idx = parent.l_indices();
    let p_idx = parent.p_indices();
    let nl = l_idx.len();

    // ad_a : 𝔭 → 𝔩 and ad_b : 𝔭 → 𝔩 as matrices on coordinates
    let mut ad_a = DMatrix::zeros(nl, p_idx.len());
    let mut ad_b = DMatrix::zeros(nl, p_idx.len());
    for (c, &pi) in p_idx.iter().enumerate() {
        let e = basis.element(pi).matrix();
        let ca = basis.coordinates(&bracket(&a_eff, e));
        let cb = basis.coordinates(&bracket(&b_eff, e));
        for (r, &li) in l_idx.iter().enumerate() {
            ad_a[(r, c)] = ca[li];
            ad_b[(r, c)] = cb[li];
        }
    }
    let pinv = ad_a
        .clone()
        .pseudo_inverse(policy.pinv_threshold * ad_a.norm().max(1.0))
        .map_err(|e| Error::InternalConsistency(format!("pseudo-inverse failed: {e}")))?;
    let omega_perp = &ad_b * pinv;

    // restrict to 𝔩⊥ and add Σ φ''(a_i) P^(i) on 𝔩_a
    let to_l = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(nl, m.ncols());
        for (r, &li) in l_idx.iter().enumerate() {
            out.set_row(r, &m.row(li));
        }
        out
    };
    let perp = to_l(cs.l_perp_coords());
    let mut omega = &omega_perp * &perp * perp.transpose();
    let phi2 = phi.derivative().derivative();
    for (comp, &ev) in cs.component_coords().iter().zip(&spectrum) {
        if comp.ncols() > 0 {
            let c = to_l(comp);
            omega += c.clone() * c.transpose() * phi2.eval(ev);
        }
    }

    let (a_hat, b_hat) = if epsilon == 0.0 {
        (HermitianMatrix::zeros(basis.n()), HermitianMatrix::zeros(basis.n()))
    } else {
        (HermitianMatrix::project(&a_eff), HermitianMatrix::project(&b_eff))
    };
    let lax = LaxMatrices {
        a_hat,
        b_hat,
        omega,
        phi,
        epsilon,
        split: cs.clone(),
    };
    lax.verify(&a_eff, &b_eff)?;
    Ok(lax)
}

impl LaxMatrices {
    fn verify(&self, a: &CMatrix, b: &CMatrix) -> Result<()> {
        let ab = bracket(a, b).norm();
        if ab > 1e-10 {
            return Err(Error::InternalConsistency(format!("[â, b̂] = {ab:e}")));
        }
        for y in self.split.l_perp_basis() {
            let w = self.apply_omega(y.matrix());
            let r = (bracket(a, &w) - bracket(b, y.matrix())).norm();
            if r > 1e-9 {
                return Err(Error::InternalConsistency(format!("ω compatibility residual {r:e}")));
            }
        }
        Ok(())
    }

    pub fn split(&self) -> &CentralizerSplit {
        &self.split
    }

    /// ω applied to the 𝔩-component of a Hermitian matrix.
    pub fn apply_omega(&self, x: &CMatrix) -> CMatrix {
        let parent = self.split.parent();
        let basis = parent.basis();
        let c = basis.coordinates(x);
        let lc = DVector::from_iterator(parent.l_indices().len(), parent.l_indices().iter().map(|&i| c[i]));
        let w = &self.omega * lc;
        let mut full = vec![0.0; basis.len()];
        for (r, &li) in parent.l_indices().iter().enumerate() {
            full[li] = w[r];
        }
        basis.assemble(&full).into_matrix()
    }

    /// `L(λ) = λA + L + S/λ`.
    pub fn lax_matrix(&self, tl: &TLSplit, lambda: f64) -> CMatrix {
        let (l, s) = tl.matrices(&self.split);
        self.a_hat.matrix() * C64::new(lambda, 0.0) + l + s * C64::new(1.0 / lambda, 0.0)
    }

    /// `Tr(L(λ)^k)` for k = 2..n.
    pub fn invariants(&self, tl: &TLSplit, lambda: f64) -> Vec<f64> {
        let m = self.lax_matrix(tl, lambda);
        let n = m.nrows();
        let eig = HermitianMatrix::project(&m).into_matrix().symmetric_eigen();
        (2..=n).map(|k| eig.eigenvalues.iter().map(|v| v.powi(k as i32)).sum()).collect()
    }
}

/// `T = L + S`, stored as canonical coordinates on the 𝔩 and 𝔭 index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TLSplit {
    pub l: Vec<f64>,
    pub s: Vec<f64>,
}

impl TLSplit {
    pub fn from_state(dec: &ABDecomposition, state: &PhaseState) -> Result<Self> {
        let cs = dec
            .cartan()
            .ok_or_else(|| Error::invalid("decomposition has no pseudo-Cartan annotation"))?;
        let c = dec.to_canonical(&dec.join(&state.a, &state.lambda));
        Ok(Self::from_canonical(cs, &c))
    }

    pub fn from_canonical(cs: &CentralizerSplit, c: &[f64]) -> Self {
        let p = cs.parent();
        Self {
            l: p.l_indices().iter().map(|&i| c[i]).collect(),
            s: p.p_indices().iter().map(|&i| c[i]).collect(),
        }
    }

    pub fn to_canonical(&self, cs: &CentralizerSplit) -> Vec<f64> {
        let p = cs.parent();
        let mut c = vec![0.0; p.basis().len()];
        for (&i, &v) in p.l_indices().iter().zip(&self.l) {
            c[i] = v;
        }
        for (&i, &v) in p.p_indices().iter().zip(&self.s) {
            c[i] = v;
        }
        c
    }

    pub fn to_state(&self, dec: &ABDecomposition, t: f64) -> Result<PhaseState> {
        let cs = dec
            .cartan()
            .ok_or_else(|| Error::invalid("decomposition has no pseudo-Cartan annotation"))?;
        let (a, lambda) = dec.split(&dec.from_canonical(&self.to_canonical(cs)));
        Ok(PhaseState { a, lambda, t })
    }

    fn matrices(&self, cs: &CentralizerSplit) -> (CMatrix, CMatrix) {
        let p = cs.parent();
        let basis = p.basis();
        let mut lc = vec![0.0; basis.len()];
        let mut sc = vec![0.0; basis.len()];
        for (&i, &v) in p.l_indices().iter().zip(&self.l) {
            lc[i] = v;
        }
        for (&i, &v) in p.p_indices().iter().zip(&self.s) {
            sc[i] = v;
        }
        (basis.assemble(&lc).into_matrix(), basis.assemble(&sc).into_matrix())
    }
}

/// Integrates `L̇ = −i[L, ω(L)] − i[S, B]`, `Ṡ = −i[S, ω(L)]` and returns the
/// split at each sample time (within `[0, t_end]`).
pub fn euler_arnold_flow(
    tl: &TLSplit,
    lax: &LaxMatrices,
    t_end: f64,
    tol: f64,
    sample_times: &[f64],
) -> Result<Vec<TLSplit>> {
    let cs = &lax.split;
    let basis = cs.parent().basis().clone();
    let b = lax.b_hat.matrix().clone();
    let p_idx = cs.parent().p_indices().to_vec();
    let rhs = |_: f64, c: &[f64], dc: &mut [f64]| {
        let t = basis.assemble(c).into_matrix();
        let mut sc = vec![0.0; c.len()];
        for &i in &p_idx {
            sc[i] = c[i];
        }
        let s = basis.assemble(&sc).into_matrix();
        let w = lax.apply_omega(&t);
        let d = -(bracket(&t, &w) + bracket(&s, &b));
        dc.copy_from_slice(&basis.coordinates(&d));
    };
    let c0 = tl.to_canonical(cs);
    let sol = ode::solve(rhs, 0.0, &c0, t_end, &OdeOptions::with_tol(tol))?;
    sample_times
        .iter()
        .map(|&t| Ok(TLSplit::from_canonical(cs, &sol.eval(t)?)))
        .collect()
}

/// Brachistochrone trajectory of the decomposition built from the same split,
/// returned as 𝔩/𝔭 splits for comparison with [`euler_arnold_flow`].
pub fn brachistochrone_as_splits(
    sys: &Brachistochrone,
    tl: &TLSplit,
    t_end: f64,
    tol: f64,
    sample_times: &[f64],
) -> Result<Vec<TLSplit>> {
    let dec = sys.dec();
    let cs = dec
        .cartan()
        .ok_or_else(|| Error::invalid("decomposition has no pseudo-Cartan annotation"))?;
    let x0 = dec.from_canonical(&tl.to_canonical(cs));
    let sol = sys.integrate_dense(&x0, 0.0, t_end, tol)?;
    sample_times
        .iter()
        .map(|&t| Ok(TLSplit::from_canonical(cs, &dec.to_canonical(&sol.eval(t)?))))
        .collect()
}

/// Euclidean distance between two splits.
pub fn split_distance(a: &TLSplit, b: &TLSplit) -> f64 {
    a.l.iter()
        .zip(&b.l)
        .chain(a.s.iter().zip(&b.s))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{block_diagonal_p, build_type_ab, centralizer_split, make_pseudo_cartan};
    use crate::dynamics::{evolve_unitary, integrate, uniform_grid};
    use crate::seeding::{child_rng, isotropic_vec, standard_normal_vec};

    fn random_state(dec: &ABDecomposition, seed: u64, norm: f64) -> PhaseState {
        let x = isotropic_vec(&mut child_rng(seed, "state", 0), dec.dim(), norm);
        let (a, lambda) = dec.split(&x);
        PhaseState::new(a, lambda)
    }

    fn appendix_p() -> HermitianMatrix {
        block_diagonal_p(3, 2, &[1.0]).unwrap()
    }

    fn appendix_type2() -> Arc<ABDecomposition> {
        let pc = make_pseudo_cartan(3, 2).unwrap();
        Arc::new(build_type_ab(&centralizer_split(&pc, &appendix_p(), 3).unwrap()))
    }

    #[test]
    fn type1_trivial_cases() {
        let dec = make_pseudo_cartan(3, 2).unwrap().ab();
        let mut s = random_state(&dec, 1, 1.0);
        let at0 = type1_a_of_t(&dec, &s, 0.0).unwrap();
        assert!(at0.iter().zip(&s.a).all(|(p, q)| (p - q).abs() < 1e-14));
        let a0 = s.a.clone();
        s.lambda.iter_mut().for_each(|v| *v = 0.0);
        let a1 = type1_a_of_t(&dec, &s, 0.7).unwrap();
        assert!(a1.iter().zip(&a0).all(|(p, q)| (p - q).abs() < 1e-14));
        let h = dec.assemble_a(&s.a);
        assert!(type1_unitary(&dec, &s, 0.7).unwrap().distance(&expm(&h, 0.7)) < 1e-12);
        let s0 = PhaseState::new(vec![0.0; dec.dim_a()], vec![0.3; dec.dim_b()]);
        assert!(type1_unitary(&dec, &s0, 1.3).unwrap().distance(&UnitaryMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn type1_rejects_non_closed_b() {
        let dec = appendix_type2();
        let s = random_state(&dec, 1, 1.0);
        assert!(matches!(type1_a_of_t(&dec, &s, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn type1_closed_form_matches_integration() {
        for (n, seed) in [(3, 3u64), (4, 4), (4, 5)] {
            let dec = make_pseudo_cartan(n, 2).unwrap().ab();
            let s = random_state(&dec, seed, 1.5);
            let a = type1_a_of_t(&dec, &s, 1.0).unwrap();
            let norm0: f64 = s.a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm1: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm0 - norm1).abs() < 1e-12);
            let sys = Arc::new(Brachistochrone::new(dec.clone()));
            let tr = evolve_unitary(&integrate(&sys, &s, 1.0, 1e-11, &uniform_grid(1.0, 4)).unwrap()).unwrap();
            assert!(tr.last().a.iter().zip(&a).all(|(p, q)| (p - q).abs() < 1e-7));
            let u = type1_unitary(&dec, &s, 1.0).unwrap();
            assert!(u.distance(tr.unitaries.last().unwrap()) < 1e-6);
        }
    }

    #[test]
    fn type1_csv_carries_provenance() {
        let dec = make_pseudo_cartan(3, 2).unwrap().ab();
        let s = random_state(&dec, 2, 1.0);
        let mut buf = Vec::new();
        write_type1_csv(&mut buf, &dec, &s, &[0.0, 0.5, 1.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",provenance"));
        assert!(text.lines().skip(1).all(|l| l.ends_with(",closed_form")));
    }

    #[test]
    fn conjugated_initial_data_solves_primed_problem() {
        let dec = make_pseudo_cartan(4, 2).unwrap().ab();
        let s = random_state(&dec, 7, 1.0);
        let u = type1_unitary(&dec, &s, 1.0).unwrap();
        let xl = isotropic_vec(&mut child_rng(7, "x", 0), dec.dim_b(), 0.8);
        let x = dec.assemble_b(&xl);
        let g = expm(&x, -1.0);
        let conj = |m: &HermitianMatrix| HermitianMatrix::project(&(g.matrix() * m.matrix() * g.matrix().adjoint()));
        let h2 = conj(&dec.assemble_a(&s.a));
        let d2 = conj(&dec.assemble_b(&s.lambda));
        let (a2, _) = dec.split(&dec.coordinates(h2.matrix()));
        let (_, l2) = dec.split(&dec.coordinates(d2.matrix()));
        let s2 = PhaseState::new(a2.clone(), l2);
        assert!((crate::dynamics::cost(&s2) - crate::dynamics::cost(&s)).abs() < 1e-12);
        let u2 = type1_unitary(&dec, &s2, 1.0).unwrap();
        assert!(u2.distance(&conjugate_target(&u, &x)) < 1e-12);
        let (c1, c2) = conjugation_invariance_check(&dec, &u, &HermitianMatrix::zeros(4), |_| Ok(0.25)).unwrap();
        assert_eq!(c1, c2);
        assert!(conjugation_invariance_check(&dec, &u, &dec.assemble_a(&a2), |_| Ok(0.0)).is_err());
    }

    #[test]
    fn type2_matches_integration_and_conserves_l_a() {
        let dec = appendix_type2();
        let sys = Arc::new(Brachistochrone::from_arc(dec.clone()));
        let s = random_state(&dec, 11, 1.2);
        let red = type2_reduce(&dec, &s).unwrap();
        let times = uniform_grid(1.0, 10);
        let tr = integrate(&sys, &s, 1.0, 1e-12, &times).unwrap();
        let cs = dec.cartan().unwrap();
        let states = red.states_on_grid(&times).unwrap();
        for (smp, st) in tr.samples.iter().zip(&states) {
            let t_ode = dec.assemble(&sys.full_coords(smp)).into_matrix();
            let la = l_a_projection(cs, &t_ode);
            assert!(la.iter().zip(&red.l_a_const).all(|(p, q)| (p - q).abs() < 1e-9));
            let x = sys.full_coords(st);
            let y = sys.full_coords(smp);
            assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-7));
        }
        let grid = red.on_grid(&[0.0, 0.4, 1.0]).unwrap();
        let s_cf = red.s_closed_form(1.0);
        let s_grid = &grid[2] - &(&red.l_perp_at(1.0) + &HermitianMatrix::project(&red.l_a));
        assert!((s_cf.matrix() - s_grid.matrix()).norm() < 1e-8);
    }

    #[test]
    fn type2_commuting_l_perp_is_constant() {
        // su(2): 𝔩_a is trivial, so L⊥ does not rotate
        let pc = make_pseudo_cartan(2, 1).unwrap();
        let p = pc.basis().element(0).clone();
        let dec = Arc::new(build_type_ab(&centralizer_split(&pc, &p, 2).unwrap()));
        let s = random_state(&dec, 2, 1.0);
        let red = type2_reduce(&dec, &s).unwrap();
        assert!((red.l_perp_at(0.9).matrix() - red.l_perp_at(0.0).matrix()).norm() < 1e-14);
        let t1 = make_pseudo_cartan(3, 2).unwrap().ab();
        assert!(type2_reduce(&Arc::new(t1.clone()), &random_state(&t1, 1, 1.0)).is_err());
    }


    #[test]
    fn su3_example_structural_zeros() {
        let y = [0.3, -1.2, 0.5, 0.8, 0.9, 0.0, 0.0, 0.0];
        assert_eq!(su3_example_rhs(&y), [0.0; 8]);
        let mut rng = child_rng(3, "y", 0);
        for _ in 0..20 {
            let v = standard_normal_vec(&mut rng, 8);
            let y: [f64; 8] = v.try_into().unwrap();
            let r = su3_example_rhs(&y);
            assert_eq!(r[4], 0.0);
            assert_eq!(r[7], 0.0);
        }
        let m = su3_example_m(0.3, -0.7, 1.1);
        assert!((&m + m.transpose()).norm() == 0.0);
    }

    #[test]
    fn su3_example_matches_generic_rhs() {
        // The worked example's coordinates are y = −(trace-form coordinates on the
        // elements above)/2; the quadratic field is invariant under y → −y.
        let dec = appendix_type2();
        let sys = Brachistochrone::from_arc(dec.clone());
        let el = su3_example_elements();
        let mut rng = child_rng(5, "y", 0);
        for _ in 0..10 {
            let y: [f64; 8] = standard_normal_vec(&mut rng, 8).try_into().unwrap();
            let mut t = CMatrix::zeros(3, 3);
            for (e, &c) in el.iter().zip(&y) {
                t -= e * C64::new(c, 0.0);
            }
            let x = dec.coordinates(&t);
            let mut dx = vec![0.0; 8];
            sys.rhs_full(&x, &mut dx);
            let dt = dec.assemble(&dx).into_matrix();
            let want = su3_example_rhs(&y);
            for (e, w) in el.iter().zip(&want) {
                let got = -crate::lie_algebra::trace_product_re(&dt, e) / 2.0;
                assert!((got - w).abs() < 1e-12, "{got} vs {w}");
            }
        }
    }

    #[test]
    fn su3_example_solution_matches_ode() {
        let y0 = [0.4, -0.3, 0.7, 0.2, 1.1, 0.5, -0.6, 0.3];
        let sol = ode::solve(
            |_, y, dy| {
                let r = su3_example_rhs(&y.try_into().unwrap());
                dy.copy_from_slice(&r);
            },
            0.0,
            &y0,
            1.0,
            &OdeOptions::with_tol(1e-12),
        )
        .unwrap();
        let cf = su3_example_solution(&y0, 1.0).unwrap();
        for (p, q) in cf.iter().zip(sol.last()) {
            assert!((p - q).abs() < 1e-7);
        }
        let n0: f64 = y0[..4].iter().map(|v| v * v).sum();
        let n1: f64 = cf[..4].iter().map(|v| v * v).sum();
        assert!((n0.sqrt() - n1.sqrt()).abs() < 1e-10);
        // l = 0: autonomous case
        let y1 = [0.4, -0.3, 0.7, 0.2, 0.0, 0.5, -0.6, 0.3];
        let a = exp_antisymmetric(&su3_example_m(0.5, -0.6, 0.3).map(|v| -v), 0.8).transpose()
            * DVector::from_column_slice(&y1[..4]);
        let cf = su3_example_solution(&y1, 0.8).unwrap();
        assert!((0..4).all(|k| (cf[k] - a[k]).abs() < 1e-9));
        assert_eq!(&cf[4..], &y1[4..]);
    }

    #[test]
    fn build_phi_properties() {
        let phi = build_phi(&[1.0], 1).unwrap();
        let d2 = phi.derivative().derivative();
        assert!(d2.eval(1.0).abs() < 1e-12);
        // empty sum: φ = z²/2
        let phi = build_phi(&[2.0, 0.0, -2.0], 0).unwrap();
        assert!(phi.0.iter().enumerate().all(|(k, c)| (c - if k == 2 { 0.5 } else { 0.0 }).abs() < 1e-15));
        // Q = 2, spectrum {+c, −c}, q = 1
        let c = 0.7;
        let phi = build_phi(&[c, -c], 1).unwrap();
        let d1 = phi.derivative();
        let d2 = d1.derivative();
        assert!(d2.eval(c).abs() < 1e-9 && (d2.eval(-c) - 1.0).abs() < 1e-9);
        assert!((d1.eval(c) - c).abs() < 1e-9 && (d1.eval(-c) + c).abs() < 1e-9);
        // independent check of φ'' by central differences of φ'
        let h = 1e-5;
        let fd = (d1.eval(c + h) - d1.eval(c - h)) / (2.0 * h);
        assert!(fd.abs() < 1e-6);
        assert!(build_phi(&[1.0, 1.0], 0).is_err());
        assert!(build_phi(&[1.0], 2).is_err());
    }

    #[test]
    fn build_phi_general_spectrum() {
        let spec = [1.3, 0.4, -0.2, -1.5];
        for q in 0..=4 {
            let phi = build_phi(&spec, q).unwrap();
            let d1 = phi.derivative();
            let d2 = d1.derivative();
            for (i, &a) in spec.iter().enumerate() {
                assert!((d1.eval(a) - a).abs() < 1e-9);
                let want = if i < q { 0.0 } else { 1.0 };
                assert!((d2.eval(a) - want).abs() < 1e-9);
            }
        }
    }

    fn su4_split(q: usize) -> CentralizerSplit {
        let pc = make_pseudo_cartan(4, 2).unwrap();
        let p = block_diagonal_p(4, 2, &[1.0, 0.55]).unwrap();
        centralizer_split(&pc, &p, q).unwrap()
    }

    #[test]
    fn omega_is_projector_onto_b() {
        for cs in [su4_split(0), su4_split(2), su4_split(4)] {
            let dec = build_type_ab(&cs);
            for eps in [1.0, 1e-2, 0.0] {
                let lax = lax_from_split(&cs, eps).unwrap();
                for k in 0..dec.dim() {
                    let e = dec.elements()[k].matrix();
                    if cs.parent().l_component_norm(&dec.elements()[k]) < 1e-12 {
                        continue;
                    }
                    let w = lax.apply_omega(e);
                    let pb = dec.project_b(&dec.elements()[k]);
                    assert!((w - pb.matrix()).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn euler_arnold_limit_and_invariants() {
        let cs = su4_split(2);
        let dec = build_type_ab(&cs);
        let sys = Brachistochrone::new(dec.clone());
        let s = random_state(&dec, 21, 1.0);
        let tl = TLSplit::from_state(&dec, &s).unwrap();
        let back = tl.to_state(&dec, 0.0).unwrap();
        assert!(back.a.iter().zip(&s.a).all(|(p, q)| (p - q).abs() < 1e-12));
        let times = [0.0, 0.5, 1.0];
        let reference = brachistochrone_as_splits(&sys, &tl, 1.0, 1e-12, &times).unwrap();
        let zero = euler_arnold_flow(&tl, &lax_from_split(&cs, 0.0).unwrap(), 1.0, 1e-12, &times).unwrap();
        assert!(split_distance(&zero[2], &reference[2]) < 1e-7);

        let lax = lax_from_split(&cs, 0.05).unwrap();
        let fine: Vec<f64> = uniform_grid(1.0, 10);
        let flow = euler_arnold_flow(&tl, &lax, 1.0, 1e-12, &fine).unwrap();
        for lam in [0.5, 1.0, 2.0] {
            let i0 = lax.invariants(&flow[0], lam);
            for tl_t in &flow {
                let it = lax.invariants(tl_t, lam);
                for (p, q) in it.iter().zip(&i0) {
                    assert!((p - q).abs() < 1e-6 * q.abs().max(1.0));
                }
            }
        }
        let d1 = split_distance(&euler_arnold_flow(&tl, &lax_from_split(&cs, 1e-2).unwrap(), 1.0, 1e-12, &[1.0]).unwrap()[0], &reference[2]);
        let d2 = split_distance(&euler_arnold_flow(&tl, &lax_from_split(&cs, 5e-3).unwrap(), 1.0, 1e-12, &[1.0]).unwrap()[0], &reference[2]);
        let ratio = d1 / d2;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }
}
