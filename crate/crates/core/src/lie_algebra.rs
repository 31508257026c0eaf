//! Finite-dimensional su(n) machinery.
//!
//! Observables are traceless Hermitian matrices; the Lie algebra element of an
//! observable `γ` is `e = −iγ`. With the trace-orthonormal generalized
//! Gell-Mann basis, the structure constants are defined by
//! `[e_i, e_j] = Σ_k f_ijk e_k`, equivalently `f_ijk = −i Tr([γ_i, γ_j] γ_k)`.
//! They are real and totally antisymmetric. For n = 2 the basis is
//! `(σx, σy, σz)/√2` and `f_012 = √2`.
//!
//! [`commutator`] returns the Hermitian bracket `i[X, Y]`, so
//! `i[γ_i, γ_j] = −Σ_k f_ijk γ_k`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::NumericPolicy;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const I: C64 = C64::new(0.0, 1.0);

// ---------------------------------------------------------------------------
// Matrix newtypes
// ---------------------------------------------------------------------------

/// Row-major JSON form shared by all matrix types: `{n, re, im}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                re.push(m[(r, c)].re);
                im.push(m[(r, c)].im);
            }
        }
        Self { n, re, im }
    }

    fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.n;
        if self.re.len() != n * n || self.im.len() != n * n {
            return Err(Error::invalid(format!(
                "matrix json: expected {} entries for n = {n}, got re = {}, im = {}",
                n * n,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(CMatrix::from_fn(n, n, |r, c| {
            C64::new(self.re[r * n + c], self.im[r * n + c])
        }))
    }
}

fn scale_of(m: &CMatrix) -> f64 {
    m.norm().max(1.0)
}

/// Traceless Hermitian n×n matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates hermiticity and tracelessness within the default algebraic tolerance
    /// (relative to the matrix scale).
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::new_with_tol(m, NumericPolicy::current().algebraic)
    }

    pub fn new_with_tol(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() || m.nrows() < 1 {
            return Err(Error::invalid(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = scale_of(&m);
        let defect = (&m - m.adjoint()).norm();
        if defect > tol * scale {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian (defect {defect:e})"
            )));
        }
        let tr = m.trace();
        if tr.norm() > tol * scale {
            return Err(Error::invalid(format!("matrix is not traceless (trace {tr})")));
        }
        Ok(Self(m))
    }

    /// Hermitian part with the trace removed; used to clean up rounding.
    pub fn project(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut h = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let shift = h.trace() / C64::new(n as f64, 0.0);
        for k in 0..n {
            h[(k, k)] -= shift;
        }
        Self(h)
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).norm()
    }

    /// `U X U†`.
    pub fn conjugate_by(&self, u: &UnitaryMatrix) -> Self {
        Self(&u.0 * &self.0 * u.0.adjoint())
    }
}

impl TryFrom<MatrixJson> for HermitianMatrix {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        Self::new(j.to_matrix()?)
    }
}

impl From<HermitianMatrix> for MatrixJson {
    fn from(h: HermitianMatrix) -> Self {
        MatrixJson::from_matrix(&h.0)
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, s: f64) -> HermitianMatrix {
        HermitianMatrix(&self.0 * C64::new(s, 0.0))
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        HermitianMatrix(-&self.0)
    }
}

/// n×n unitary matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::new_with_tol(m, NumericPolicy::current().unitarity)
    }

    pub fn new_with_tol(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("unitary matrix must be square"));
        }
        let u = Self(m);
        let defect = u.unitarity_defect();
        if defect > tol {
            return Err(Error::invalid(format!(
                "matrix is not unitary (defect {defect:e})"
            )));
        }
        let det = u.0.determinant().norm();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!("|det U| = {det} differs from 1")));
        }
        Ok(u)
    }

    pub(crate) fn from_raw(m: CMatrix) -> Self {
        Self(m)
    }

    /// Nearest unitary matrix (polar factor), used after non-geometric integration.
    pub fn nearest(m: &CMatrix) -> Self {
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        Self(u * vt)
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn unitarity_defect(&self) -> f64 {
        let n = self.0.nrows();
        (&self.0 * self.0.adjoint() - CMatrix::identity(n, n)).norm()
    }

    pub fn distance(&self, other: &UnitaryMatrix) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

impl Mul for &UnitaryMatrix {
    type Output = UnitaryMatrix;
    fn mul(self, rhs: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix(&self.0 * &rhs.0)
    }
}

impl TryFrom<MatrixJson> for UnitaryMatrix {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        Self::new(j.to_matrix()?)
    }
}

impl From<UnitaryMatrix> for MatrixJson {
    fn from(u: UnitaryMatrix) -> Self {
        MatrixJson::from_matrix(&u.0)
    }
}

// ---------------------------------------------------------------------------
// Basis and structure constants
// ---------------------------------------------------------------------------

/// Canonical ordering tag written into serialized bases.
pub const GELL_MANN_ORDERING: &str = "gell-mann:sym,antisym,diag";

/// Trace-orthonormal basis of the traceless Hermitian n×n matrices.
///
/// Order: symmetric off-diagonal pairs `(E_jk + E_kj)/√2` for `j < k` in
/// lexicographic order, then antisymmetric pairs `(−iE_jk + iE_kj)/√2` in the
/// same order, then the diagonal elements
/// `diag(1, …, 1, −l, 0, …)/√(l(l+1))` for `l = 1..n−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisJson", into = "BasisJson")]
pub struct LieBasis {
    n: usize,
    elements: Vec<HermitianMatrix>,
    f: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisJson {
    n: usize,
    ordering: String,
}

impl TryFrom<BasisJson> for LieBasis {
    type Error = Error;
    fn try_from(j: BasisJson) -> Result<Self> {
        if j.ordering != GELL_MANN_ORDERING {
            return Err(Error::invalid(format!("unknown basis ordering '{}'", j.ordering)));
        }
        gell_mann_basis(j.n)
    }
}

impl From<LieBasis> for BasisJson {
    fn from(b: LieBasis) -> Self {
        BasisJson {
            n: b.n,
            ordering: GELL_MANN_ORDERING.to_string(),
        }
    }
}

impl LieBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of elements, n² − 1.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    pub fn element(&self, k: usize) -> &HermitianMatrix {
        &self.elements[k]
    }

    /// Structure constant `f_ijk`.
    pub fn f(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.len();
        self.f[(i * d + j) * d + k]
    }

    pub fn structure_constants(&self) -> &[f64] {
        &self.f
    }

    /// Coordinates `x_k = Tr(X γ_k)`.
    pub fn coordinates(&self, x: &CMatrix) -> Vec<f64> {
        coordinates_in(&self.elements, x)
    }

    pub fn assemble(&self, coords: &[f64]) -> HermitianMatrix {
        assemble_in(&self.elements, coords)
    }

    /// Largest error of `[e_i, e_j] = Σ f_ijk e_k` over all pairs.
    pub fn reconstruction_error(&self) -> f64 {
        let d = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let ei = self.elements[i].matrix() * C64::new(0.0, -1.0);
                let ej = self.elements[j].matrix() * C64::new(0.0, -1.0);
                let lhs = &ei * &ej - &ej * &ei;
                let mut rhs = CMatrix::zeros(self.n, self.n);
                for k in 0..d {
                    rhs += self.elements[k].matrix() * C64::new(0.0, -self.f(i, j, k));
                }
                worst = worst.max((lhs - rhs).norm());
            }
        }
        worst
    }
}

pub(crate) fn coordinates_in(elements: &[HermitianMatrix], x: &CMatrix) -> Vec<f64> {
    elements.iter().map(|e| trace_product_re(x, e.matrix())).collect()
}

pub(crate) fn assemble_in(elements: &[HermitianMatrix], coords: &[f64]) -> HermitianMatrix {
    let n = elements.first().map_or(0, HermitianMatrix::dim);
    let mut m = CMatrix::zeros(n, n);
    for (e, &c) in elements.iter().zip(coords) {
        if c != 0.0 {
            m += e.matrix() * C64::new(c, 0.0);
        }
    }
    HermitianMatrix(m)
}

/// Re Tr(XY) for square matrices, without forming the product.
pub(crate) fn trace_product_re(x: &CMatrix, y: &CMatrix) -> f64 {
    let n = x.nrows();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            let p = x[(r, c)] * y[(c, r)];
            acc += p.re;
        }
    }
    acc
}

pub fn gell_mann_basis(n: usize) -> Result<LieBasis> {
    if n < 2 {
        return Err(Error::invalid(format!("su(n) basis needs n >= 2, got {n}")));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut elements = Vec::with_capacity(n * n - 1);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| ((j + 1)..n).map(move |k| (j, k)))
        .collect();
    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = C64::new(s, 0.0);
        m[(k, j)] = C64::new(s, 0.0);
        elements.push(HermitianMatrix(m));
    }
    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = C64::new(0.0, -s);
        m[(k, j)] = C64::new(0.0, s);
        elements.push(HermitianMatrix(m));
    }
    for l in 1..n {
        let norm = ((l * (l + 1)) as f64).sqrt();
        let mut m = CMatrix::zeros(n, n);
        for d in 0..l {
            m[(d, d)] = C64::new(1.0 / norm, 0.0);
        }
        m[(l, l)] = C64::new(-(l as f64) / norm, 0.0);
        elements.push(HermitianMatrix(m));
    }
    let f = structure_constants_of(&elements);
    Ok(LieBasis { n, elements, f })
}

/// `f_ijk = −i Tr([γ_i, γ_j] γ_k)` for an orthonormal family.
pub(crate) fn structure_constants_of(elements: &[HermitianMatrix]) -> Vec<f64> {
    let d = elements.len();
    let mut f = vec![0.0; d * d * d];
    for i in 0..d {
        for j in (i + 1)..d {
            let a = elements[i].matrix();
            let b = elements[j].matrix();
            // i[γ_i, γ_j] = −Σ f_ijk γ_k
            let c = (a * b - b * a) * I;
            for k in 0..d {
                let v = -trace_product_re(&c, elements[k].matrix());
                f[(i * d + j) * d + k] = v;
                f[(j * d + i) * d + k] = -v;
            }
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

fn check_dims(x: &HermitianMatrix, y: &HermitianMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Trace form `Tr(XY)`.
pub fn trace_inner(x: &HermitianMatrix, y: &HermitianMatrix) -> Result<f64> {
    check_dims(x, y)?;
    Ok(trace_product_re(x.matrix(), y.matrix()))
}

/// Hermitian bracket `i[X, Y]`.
pub fn commutator(x: &HermitianMatrix, y: &HermitianMatrix) -> Result<HermitianMatrix> {
    check_dims(x, y)?;
    Ok(HermitianMatrix(bracket(x.matrix(), y.matrix())))
}

/// `i[X, Y]` on raw matrices.
pub(crate) fn bracket(x: &CMatrix, y: &CMatrix) -> CMatrix {
    (x * y - y * x) * I
}

// ---------------------------------------------------------------------------
// Exponential and logarithm
// ---------------------------------------------------------------------------

/// `exp(−i s X)` for any Hermitian matrix (not necessarily traceless), via its
/// eigendecomposition.
pub(crate) fn exp_hermitian(x: &CMatrix, s: f64) -> CMatrix {
    let n = x.nrows();
    let sym = (x + x.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for c in 0..n {
        let phase = C64::from_polar(1.0, -s * eig.eigenvalues[c]);
        for r in 0..n {
            scaled[(r, c)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// `exp(−i s X)`.
pub fn expm(x: &HermitianMatrix, s: f64) -> UnitaryMatrix {
    UnitaryMatrix(exp_hermitian(x.matrix(), s))
}

/// Principal logarithm of a unitary, split as `U = exp(−i (generator + phase·𝕀))`.
///
/// The eigenphases of `generator + phase·𝕀` all lie in (−π, π]; `phase` is
/// their mean, removed so that `generator` is traceless.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalLog {
    pub generator: HermitianMatrix,
    pub phase: f64,
    /// Eigenphases θ_j in (−π, π], ascending.
    pub eigenphases: Vec<f64>,
}

impl PrincipalLog {
    /// ‖Log U‖_F of the full principal logarithm, `√Σθ_j²`.
    pub fn norm(&self) -> f64 {
        self.eigenphases.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// Full Hermitian logarithm `generator + phase·𝕀`.
    pub fn full(&self) -> CMatrix {
        let n = self.generator.dim();
        self.generator.matrix() + CMatrix::identity(n, n) * C64::new(self.phase, 0.0)
    }
}

/// Eigenphases and eigenvectors of a unitary matrix via complex Schur form.
pub(crate) fn unitary_eigen(u: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = u.nrows();
    // shifting by the mean eigenvalue keeps QR iterations fast when the
    // spectrum is clustered (U near a multiple of 𝕀)
    let c = u.trace() / C64::new(n as f64, 0.0);
    let schur = nalgebra::linalg::Schur::new(u - CMatrix::identity(n, n) * c);
    let (q, t) = schur.unpack();
    // U = exp(−iH): eigenvalue μ = e^{−iθ}
    let phases = (0..n).map(|k| -(t[(k, k)] + c).arg()).collect();
    (phases, q)
}

pub fn logm_principal(u: &UnitaryMatrix) -> Result<PrincipalLog> {
    logm_principal_with_tol(u, NumericPolicy::current().branch_cut)
}

pub fn logm_principal_with_tol(u: &UnitaryMatrix, branch_tol: f64) -> Result<PrincipalLog> {
    let n = u.dim();
    let (mut phases, q) = unitary_eigen(u.matrix());
    for p in &mut phases {
        // −arg ∈ [−π, π); move −π onto the closed end of the branch
        if *p <= -std::f64::consts::PI {
            *p += 2.0 * std::f64::consts::PI;
        }
        if std::f64::consts::PI - p.abs() < branch_tol {
            return Err(Error::BranchAmbiguity {
                phase: *p,
                tol: branch_tol,
            });
        }
    }
    let mean = phases.iter().sum::<f64>() / n as f64;
    let mut d = q.clone();
    for c in 0..n {
        let w = C64::new(phases[c] - mean, 0.0);
        for r in 0..n {
            d[(r, c)] *= w;
        }
    }
    let gen = HermitianMatrix::project(&(d * q.adjoint()));
    let mut sorted = phases;
    sorted.sort_by(f64::total_cmp);
    Ok(PrincipalLog {
        generator: gen,
        phase: mean,
        eigenphases: sorted,
    })
}

/// ‖Log U‖_F of the principal logarithm, or `None` on the branch cut.
pub fn log_norm(u: &CMatrix, branch_tol: f64) -> Option<f64> {
    let (phases, _) = unitary_eigen(u);
    let mut acc = 0.0;
    for mut p in phases {
        if p <= -std::f64::consts::PI {
            p += 2.0 * std::f64::consts::PI;
        }
        if std::f64::consts::PI - p.abs() < branch_tol {
            return None;
        }
        acc += p * p;
    }
    Some(acc.sqrt())
}

/// Traceless Hermitian `H` with `exp(−iH) = U` exactly, for `U ∈ SU(n)`.
///
/// Starts from the principal branch; when its eigenphases do not sum to zero
/// (they sum to a multiple of 2π), the phases closest to the cut are moved to
/// the neighbouring branch until they do.
pub fn traceless_log(u: &UnitaryMatrix) -> Result<HermitianMatrix> {
    let n = u.dim();
    let (mut phases, q) = unitary_eigen(u.matrix());
    for p in &mut phases {
        if *p <= -std::f64::consts::PI {
            *p += 2.0 * std::f64::consts::PI;
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let total: f64 = phases.iter().sum();
    let winding = (total / two_pi).round() as i64;
    if (total - winding as f64 * two_pi).abs() > 1e-6 {
        return Err(Error::invalid("traceless_log needs det U = 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if winding > 0 {
        order.sort_by(|&a, &b| phases[b].total_cmp(&phases[a]));
        for &k in order.iter().take(winding as usize) {
            phases[k] -= two_pi;
        }
    } else if winding < 0 {
        order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]));
        for &k in order.iter().take((-winding) as usize) {
            phases[k] += two_pi;
        }
    }
    let mut d = q.clone();
    for c in 0..n {
        for r in 0..n {
            d[(r, c)] *= C64::new(phases[c], 0.0);
        }
    }
    Ok(HermitianMatrix::project(&(d * q.adjoint())))
}

// ---------------------------------------------------------------------------
// Time-ordered exponentials
// ---------------------------------------------------------------------------

/// One fourth-order commutator-free Magnus step of `dV/dt = −i G(t) V`:
/// a product of two Hermitian exponentials, so unitarity is exact.
pub(crate) fn magnus4_step<G: Fn(f64) -> CMatrix>(gen: &G, t: f64, h: f64) -> CMatrix {
    let r3 = 3f64.sqrt();
    let g1 = gen(t + h * (0.5 - r3 / 6.0));
    let g2 = gen(t + h * (0.5 + r3 / 6.0));
    let wa = 0.25 + r3 / 6.0;
    let wb = 0.25 - r3 / 6.0;
    let first = &g1 * C64::new(wa, 0.0) + &g2 * C64::new(wb, 0.0);
    let second = &g1 * C64::new(wb, 0.0) + &g2 * C64::new(wa, 0.0);
    exp_hermitian(&second, h) * exp_hermitian(&first, h)
}

fn propagate_on_grid<G: Fn(f64) -> CMatrix>(gen: &G, times: &[f64], substeps: usize, n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(times.len());
    let mut v = CMatrix::identity(n, n);
    out.push(v.clone());
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            v = magnus4_step(gen, w[0] + s as f64 * h, h) * v;
        }
        out.push(v.clone());
    }
    out
}

/// Propagator of `dV/dt = −i G(t) V`, `V(times[0]) = 𝕀`, at every grid time.
///
/// Each grid interval is split into substeps which are doubled until two
/// successive refinements agree to `tol` (max Frobenius distance over the grid).
pub fn time_ordered_exp_on_grid<G: Fn(f64) -> CMatrix>(
    gen: G,
    times: &[f64],
    tol: f64,
) -> Result<Vec<CMatrix>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    let n = gen(times[0]).nrows();
    let mut substeps = 1;
    let mut coarse = propagate_on_grid(&gen, times, substeps, n);
    loop {
        substeps *= 2;
        let fine = propagate_on_grid(&gen, times, substeps, n);
        let diff = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if diff < tol {
            return Ok(fine);
        }
        if substeps > (1 << 16) {
            return Err(Error::Integration {
                t_reached: *times.last().unwrap(),
                reason: format!("time-ordered exponential did not settle (last change {diff:e})"),
            });
        }
        coarse = fine;
    }
}

/// Propagator over `[t0, t1]` (see [`time_ordered_exp_on_grid`]).
pub fn time_ordered_exp<G: Fn(f64) -> CMatrix>(gen: G, t0: f64, t1: f64, tol: f64) -> Result<CMatrix> {
    if t1 == t0 {
        let n = gen(t0).nrows();
        return Ok(CMatrix::identity(n, n));
    }
    let grid: Vec<f64> = (0..=8).map(|k| t0 + (t1 - t0) * k as f64 / 8.0).collect();
    Ok(time_ordered_exp_on_grid(gen, &grid, tol)?.pop().unwrap())
}

// ---------------------------------------------------------------------------
// Generated subalgebra
// ---------------------------------------------------------------------------

/// Orthonormalizes `candidate` against `span` under the trace form; returns the
/// new unit vector if the residual is above `tol` (relative to the candidate).
pub(crate) fn gram_schmidt_push(span: &mut Vec<CMatrix>, candidate: &CMatrix, tol: f64) -> bool {
    let scale = candidate.norm();
    if scale == 0.0 {
        return false;
    }
    let mut r = candidate.clone();
    // two passes for numerical orthogonality
    for _ in 0..2 {
        for b in span.iter() {
            let c = trace_product_re(&r, b);
            r -= b * C64::new(c, 0.0);
        }
    }
    let res = r.norm();
    if res > tol * scale.max(1.0) {
        span.push(r / C64::new(res, 0.0));
        true
    } else {
        false
    }
}

/// Dimension of the real Lie algebra generated by `set` under `i[·,·]`.
pub fn generated_dimension(set: &[HermitianMatrix]) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid("generated_dimension needs a non-empty set"))?;
    let n = first.dim();
    if set.iter().any(|x| x.dim() != n) {
        return Err(Error::invalid("generated_dimension: mixed dimensions"));
    }
    let full = n * n - 1;
    let tol = 1e-9;
    let mut span: Vec<CMatrix> = Vec::new();
    for x in set {
        gram_schmidt_push(&mut span, x.matrix(), tol);
    }
    let mut frontier = 0;
    while frontier < span.len() && span.len() < full {
        let end = span.len();
        for i in frontier..end {
            for j in 0..i {
                let c = bracket(&span[i], &span[j]);
                gram_schmidt_push(&mut span, &c, tol);
                if span.len() == full {
                    return Ok(full);
                }
            }
        }
        frontier = end;
    }
    Ok(span.len())
}
