//! AB decompositions of su(n): generic splits, pseudo-Cartan splits, centralizers
//! and the Type I / Type II families built from them.
//!
//! A decomposition stores an orthonormal *adapted* basis (columns of
//! `basis_rotation`, expressed in canonical Gell-Mann coordinates) and the
//! index sets of 𝔸 and 𝔹 within that adapted basis. Phase-space vectors
//! `x = (a, λ)` are always coordinates in the adapted basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lie_algebra::{
    assemble_in, bracket, coordinates_in, generated_dimension, gell_mann_basis, structure_constants_of,
    trace_product_re, CMatrix, HermitianMatrix, LieBasis, C64,
};
use crate::policy::NumericPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionKind {
    Generic,
    PseudoCartan,
    Type1,
    Type2,
}

impl DecompositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecompositionKind::Generic => "generic",
            DecompositionKind::PseudoCartan => "pseudo_cartan",
            DecompositionKind::Type1 => "type1",
            DecompositionKind::Type2 => "type2",
        }
    }
}

// ---------------------------------------------------------------------------
// Linear-algebra helpers
// ---------------------------------------------------------------------------

/// Orthonormal basis of the null space of `m` (columns of the result).
fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("svd v_t");
    let scale = svd.singular_values.max().max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= tol * scale)
        .collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(k).transpose());
    }
    out
}

/// Orthonormal basis (columns) of the complement of `sub` inside the span of
/// the orthonormal columns of `whole`.
fn complement_within(whole: &DMatrix<f64>, sub: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    // coefficients of sub in the whole basis; the complement is their null space
    let coeffs = sub.transpose() * whole;
    let ns = null_space(&coeffs, tol);
    whole * ns
}

fn hermitian_from_coords(basis: &LieBasis, v: &[f64]) -> HermitianMatrix {
    basis.assemble(v)
}

// ---------------------------------------------------------------------------
// Pseudo-Cartan split
// ---------------------------------------------------------------------------

/// 𝔤 = 𝔩 + 𝔭 with 𝔩 block-diagonal for ℂⁿ = ℂᵏ ⊕ ℂⁿ⁻ᵏ and 𝔭 off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCartanSplit {
    basis: LieBasis,
    k: usize,
    l_indices: Vec<usize>,
    p_indices: Vec<usize>,
}

/// Largest structure-constant violation of `[𝔩,𝔩] ⊆ 𝔩`, `[𝔭,𝔭] ⊆ 𝔩`, `[𝔩,𝔭] ⊆ 𝔭`.
pub fn pseudo_cartan_residual(basis: &LieBasis, l: &[usize], p: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in l {
        for &j in l {
            for &k in p {
                worst = worst.max(basis.f(i, j, k).abs());
            }
        }
    }
    for &i in p {
        for &j in p {
            for &k in p {
                worst = worst.max(basis.f(i, j, k).abs());
            }
        }
    }
    for &i in l {
        for &j in p {
            for &k in l {
                worst = worst.max(basis.f(i, j, k).abs());
            }
        }
    }
    worst
}

pub fn make_pseudo_cartan(n: usize, k: usize) -> Result<PseudoCartanSplit> {
    if k < 1 || k >= n {
        return Err(Error::invalid(format!("block size k = {k} must satisfy 1 <= k < n = {n}")));
    }
    let basis = gell_mann_basis(n)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| ((j + 1)..n).map(move |c| (j, c)))
        .collect();
    let np = pairs.len();
    let mut l_indices = Vec::new();
    let mut p_indices = Vec::new();
    for (idx, &(j, c)) in pairs.iter().enumerate() {
        let off_block = j < k && c >= k;
        for offset in [0, np] {
            if off_block {
                p_indices.push(idx + offset);
            } else {
                l_indices.push(idx + offset);
            }
        }
    }
    l_indices.extend(2 * np..basis.len());
    l_indices.sort_unstable();
    p_indices.sort_unstable();
    let residual = pseudo_cartan_residual(&basis, &l_indices, &p_indices);
    if residual > NumericPolicy::current().closure {
        return Err(Error::InternalConsistency(format!(
            "pseudo-Cartan closure residual {residual:e}"
        )));
    }
    Ok(PseudoCartanSplit {
        basis,
        k,
        l_indices,
        p_indices,
    })
}

impl PseudoCartanSplit {
    pub fn basis(&self) -> &LieBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l_indices(&self) -> &[usize] {
        &self.l_indices
    }

    pub fn p_indices(&self) -> &[usize] {
        &self.p_indices
    }

    pub fn closure_residual(&self) -> f64 {
        pseudo_cartan_residual(&self.basis, &self.l_indices, &self.p_indices)
    }

    /// 𝔸 = 𝔭, 𝔹 = 𝔩: the Type I decomposition with 𝔹 a subalgebra.
    pub fn ab(&self) -> ABDecomposition {
        let mut d = make_generic_ab(self.basis.clone(), &self.p_indices).expect("𝔭 is non-empty");
        d.kind = DecompositionKind::PseudoCartan;
        d.k = Some(self.k);
        d
    }

    /// Norm of the 𝔩-component of `x` (zero iff `x ∈ 𝔭`).
    pub fn l_component_norm(&self, x: &HermitianMatrix) -> f64 {
        let c = self.basis.coordinates(x.matrix());
        self.l_indices.iter().map(|&i| c[i] * c[i]).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// Centralizer split
// ---------------------------------------------------------------------------

/// Centralizer 𝔩_a of a fixed element p̂ ∈ 𝔭 inside 𝔩, its orthogonal
/// complement 𝔩⊥, and the per-eigenvalue components of 𝔩_a.
///
/// Component `i` (eigenvalues of p̂ in descending order) consists of the
/// elements of 𝔩_a that vanish on all eigenspaces after the `i`-th, orthogonal
/// to those that already vanish after the `(i−1)`-th. Elements supported on a
/// single eigenspace land in that eigenspace's component; elements spread over
/// several eigenspaces land in the last one they touch.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizerSplit {
    parent: PseudoCartanSplit,
    a_element: HermitianMatrix,
    eigenvalues: Vec<f64>,
    /// Canonical-coordinate columns.
    l_a: DMatrix<f64>,
    l_perp: DMatrix<f64>,
    components: Vec<DMatrix<f64>>,
    q: usize,
    warning: Option<String>,
}

/// Distinct eigenvalues (descending) and the eigenvector block of each cluster.
fn clustered_spectrum(x: &HermitianMatrix, tol: f64) -> (Vec<f64>, Vec<CMatrix>, Option<String>) {
    let n = x.dim();
    let eig = x.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut warning = None;
    for &idx in &order {
        let v = eig.eigenvalues[idx];
        match clusters.last_mut() {
            Some(c) if (eig.eigenvalues[*c.last().unwrap()] - v).abs() < tol => c.push(idx),
            _ => {
                if let Some(c) = clusters.last() {
                    let gap = (eig.eigenvalues[*c.last().unwrap()] - v).abs();
                    if gap < 10.0 * tol {
                        warning = Some(format!(
                            "eigenvalues {} and {v} are separated by {gap:e}, within 10x the clustering tolerance",
                            eig.eigenvalues[*c.last().unwrap()]
                        ));
                    }
                }
                clusters.push(vec![idx]);
            }
        }
    }
    let values = clusters
        .iter()
        .map(|c| c.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / c.len() as f64)
        .collect();
    let vectors = clusters
        .iter()
        .map(|c| {
            let mut m = CMatrix::zeros(n, c.len());
            for (col, &i) in c.iter().enumerate() {
                m.set_column(col, &eig.eigenvectors.column(i));
            }
            m
        })
        .collect();
    (values, vectors, warning)
}

pub fn centralizer_split(split: &PseudoCartanSplit, p_hat: &HermitianMatrix, q: usize) -> Result<CentralizerSplit> {
    centralizer_split_with_policy(split, p_hat, q, &NumericPolicy::current())
}

pub fn centralizer_split_with_policy(
    split: &PseudoCartanSplit,
    p_hat: &HermitianMatrix,
    q: usize,
    policy: &NumericPolicy,
) -> Result<CentralizerSplit> {
    let basis = &split.basis;
    let n = basis.n();
    if p_hat.dim() != n {
        return Err(Error::invalid(format!("p_hat has dimension {}, expected {n}", p_hat.dim())));
    }
    let off = split.l_component_norm(p_hat);
    if off > policy.closure * p_hat.frobenius_norm().max(1.0) {
        return Err(Error::invalid(format!("p_hat is not in 𝔭 (𝔩-component norm {off:e})")));
    }
    let dim = basis.len();
    let nl = split.l_indices.len();

    // ad_p restricted to 𝔩, as a dim × nl real matrix
    let mut ad = DMatrix::zeros(dim, nl);
    for (c, &li) in split.l_indices.iter().enumerate() {
        let br = bracket(p_hat.matrix(), basis.element(li).matrix());
        let coords = basis.coordinates(&br);
        ad.set_column(c, &DVector::from_vec(coords));
    }
    let l_frame = {
        let mut m = DMatrix::zeros(dim, nl);
        for (c, &li) in split.l_indices.iter().enumerate() {
            m[(li, c)] = 1.0;
        }
        m
    };
    let ns = null_space(&ad, policy.pinv_threshold);
    let l_a = &l_frame * &ns;
    let l_perp = complement_within(&l_frame, &l_a, policy.pinv_threshold);

    let (eigenvalues, vectors, warning) = clustered_spectrum(p_hat, policy.eigen_cluster);
    let big_q = eigenvalues.len();
    if q > big_q {
        return Err(Error::invalid(format!("q = {q} exceeds the number of distinct eigenvalues Q = {big_q}")));
    }

    // flag filtration V_1 ⊆ V_2 ⊆ … ⊆ V_Q = 𝔩_a
    let projectors: Vec<CMatrix> = vectors.iter().map(|v| v * v.adjoint()).collect();
    let la_elems: Vec<HermitianMatrix> = (0..l_a.ncols())
        .map(|c| hermitian_from_coords(basis, l_a.column(c).as_slice()))
        .collect();
    let mut components = Vec::with_capacity(big_q);
    let mut prev = DMatrix::<f64>::zeros(dim, 0);
    for i in 0..big_q {
        let later: Vec<&CMatrix> = projectors[i + 1..].iter().collect();
        let rows = later.len() * 2 * n * n;
        let mut cons = DMatrix::zeros(rows.max(1), la_elems.len());
        for (c, y) in la_elems.iter().enumerate() {
            let mut r = 0;
            for pj in &later {
                let prod = y.matrix() * *pj;
                for z in prod.iter() {
                    cons[(r, c)] = z.re;
                    cons[(r + 1, c)] = z.im;
                    r += 2;
                }
            }
        }
        let v_i = if la_elems.is_empty() {
            DMatrix::zeros(dim, 0)
        } else if later.is_empty() {
            l_a.clone()
        } else {
            &l_a * null_space(&cons, policy.pinv_threshold)
        };
        let comp = if prev.ncols() == 0 {
            v_i.clone()
        } else {
            complement_within(&v_i, &prev, policy.pinv_threshold)
        };
        components.push(comp);
        prev = v_i;
    }

    Ok(CentralizerSplit {
        parent: split.clone(),
        a_element: p_hat.clone(),
        eigenvalues,
        l_a,
        l_perp,
        components,
        q,
        warning,
    })
}

fn columns_as_elements(basis: &LieBasis, m: &DMatrix<f64>) -> Vec<HermitianMatrix> {
    (0..m.ncols())
        .map(|c| hermitian_from_coords(basis, m.column(c).as_slice()))
        .collect()
}

impl CentralizerSplit {
    pub fn parent(&self) -> &PseudoCartanSplit {
        &self.parent
    }

    pub fn a_element(&self) -> &HermitianMatrix {
        &self.a_element
    }

    /// Distinct eigenvalues of p̂, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of distinct eigenvalues.
    pub fn big_q(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn l_a_basis(&self) -> Vec<HermitianMatrix> {
        columns_as_elements(&self.parent.basis, &self.l_a)
    }

    pub fn l_perp_basis(&self) -> Vec<HermitianMatrix> {
        columns_as_elements(&self.parent.basis, &self.l_perp)
    }

    pub fn components(&self) -> Vec<Vec<HermitianMatrix>> {
        self.components
            .iter()
            .map(|c| columns_as_elements(&self.parent.basis, c))
            .collect()
    }

    pub(crate) fn l_perp_coords(&self) -> &DMatrix<f64> {
        &self.l_perp
    }

    pub(crate) fn component_coords(&self) -> &[DMatrix<f64>] {
        &self.components
    }

    /// Largest ‖i[p̂, y]‖_F over the 𝔩_a basis.
    pub fn commutation_residual(&self) -> f64 {
        self.l_a_basis()
            .iter()
            .map(|y| bracket(self.a_element.matrix(), y.matrix()).norm())
            .fold(0.0, f64::max)
    }
}

/// Builds the decomposition 𝔞 = 𝔭 + 𝔩_a^(A), 𝔟 = 𝔩⊥ + 𝔩_a^(B).
///
/// Adapted basis order: 𝔭 (canonical elements), 𝔩_a^(A), 𝔩⊥, 𝔩_a^(B).
pub fn build_type_ab(cs: &CentralizerSplit) -> ABDecomposition {
    let basis = cs.parent.basis.clone();
    let dim = basis.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for &pi in &cs.parent.p_indices {
        let mut v = DVector::zeros(dim);
        v[pi] = 1.0;
        cols.push(v);
    }
    let push_all = |cols: &mut Vec<DVector<f64>>, m: &DMatrix<f64>| {
        for c in 0..m.ncols() {
            cols.push(m.column(c).into_owned());
        }
    };
    for comp in &cs.components[..cs.q] {
        push_all(&mut cols, comp);
    }
    let n_a = cols.len();
    push_all(&mut cols, &cs.l_perp);
    for comp in &cs.components[cs.q..] {
        push_all(&mut cols, comp);
    }
    debug_assert_eq!(cols.len(), dim);
    let rotation = DMatrix::from_columns(&cols);
    let kind = if cs.q == 0 {
        DecompositionKind::Type1
    } else if cs.q == cs.big_q() {
        DecompositionKind::Type2
    } else {
        DecompositionKind::Generic
    };
    let mut d = ABDecomposition::from_rotation(basis, rotation, (0..n_a).collect(), kind);
    d.k = Some(cs.parent.k);
    d.cartan = Some(Box::new(cs.clone()));
    d
}

// ---------------------------------------------------------------------------
// AB decomposition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ABDecomposition {
    basis: LieBasis,
    rotation: DMatrix<f64>,
    elements: Vec<HermitianMatrix>,
    a_indices: Vec<usize>,
    b_indices: Vec<usize>,
    kind: DecompositionKind,
    k: Option<usize>,
    cartan: Option<Box<CentralizerSplit>>,
}

fn validate_indices(dim: usize, a_indices: &[usize]) -> Result<()> {
    if a_indices.is_empty() {
        return Err(Error::invalid("a_indices must be non-empty"));
    }
    let mut seen = vec![false; dim];
    for &i in a_indices {
        if i >= dim {
            return Err(Error::invalid(format!("index {i} out of range for dimension {dim}")));
        }
        if seen[i] {
            return Err(Error::invalid(format!("index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// 𝔸 spanned by the given canonical basis elements, 𝔹 the complement.
pub fn make_generic_ab(basis: LieBasis, a_indices: &[usize]) -> Result<ABDecomposition> {
    let dim = basis.len();
    validate_indices(dim, a_indices)?;
    Ok(ABDecomposition::from_rotation(
        basis,
        DMatrix::identity(dim, dim),
        a_indices.to_vec(),
        DecompositionKind::Generic,
    ))
}

/// 𝔸 spanned by the given columns of an orthogonal matrix acting on canonical
/// coordinates; 𝔹 spanned by the remaining columns.
pub fn make_rotated_ab(basis: LieBasis, rotation: DMatrix<f64>, a_indices: &[usize]) -> Result<ABDecomposition> {
    let dim = basis.len();
    if rotation.nrows() != dim || rotation.ncols() != dim {
        return Err(Error::invalid(format!("rotation must be {dim}x{dim}")));
    }
    let defect = (rotation.transpose() * &rotation - DMatrix::<f64>::identity(dim, dim)).norm();
    if defect > 1e-10 {
        return Err(Error::invalid(format!("rotation is not orthogonal (defect {defect:e})")));
    }
    validate_indices(dim, a_indices)?;
    Ok(ABDecomposition::from_rotation(
        basis,
        rotation,
        a_indices.to_vec(),
        DecompositionKind::Generic,
    ))
}

impl ABDecomposition {
    fn from_rotation(basis: LieBasis, rotation: DMatrix<f64>, mut a_indices: Vec<usize>, kind: DecompositionKind) -> Self {
        let dim = basis.len();
        a_indices.sort_unstable();
        let b_indices: Vec<usize> = (0..dim).filter(|i| a_indices.binary_search(i).is_err()).collect();
        let elements = (0..dim)
            .map(|c| basis.assemble(rotation.column(c).as_slice()))
            .collect();
        Self {
            basis,
            rotation,
            elements,
            a_indices,
            b_indices,
            kind,
            k: None,
            cartan: None,
        }
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn dim_a(&self) -> usize {
        self.a_indices.len()
    }

    pub fn dim_b(&self) -> usize {
        self.b_indices.len()
    }

    pub fn basis(&self) -> &LieBasis {
        &self.basis
    }

    pub fn kind(&self) -> DecompositionKind {
        self.kind
    }

    /// Block size of the underlying pseudo-Cartan split, if any.
    pub fn block_size(&self) -> Option<usize> {
        self.k
    }

    pub fn cartan(&self) -> Option<&CentralizerSplit> {
        self.cartan.as_deref()
    }

    /// Orthogonal matrix whose columns are the adapted elements in canonical coordinates.
    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Adapted orthonormal basis.
    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    pub fn a_indices(&self) -> &[usize] {
        &self.a_indices
    }

    pub fn b_indices(&self) -> &[usize] {
        &self.b_indices
    }

    pub fn a_elements(&self) -> Vec<HermitianMatrix> {
        self.a_indices.iter().map(|&i| self.elements[i].clone()).collect()
    }

    pub fn b_elements(&self) -> Vec<HermitianMatrix> {
        self.b_indices.iter().map(|&i| self.elements[i].clone()).collect()
    }

    /// Σ aᵢ Âᵢ.
    pub fn assemble_a(&self, a: &[f64]) -> HermitianMatrix {
        let mut full = vec![0.0; self.dim()];
        for (&i, &v) in self.a_indices.iter().zip(a) {
            full[i] = v;
        }
        assemble_in(&self.elements, &full)
    }

    /// Σ λᵢ B̂ᵢ.
    pub fn assemble_b(&self, lambda: &[f64]) -> HermitianMatrix {
        let mut full = vec![0.0; self.dim()];
        for (&i, &v) in self.b_indices.iter().zip(lambda) {
            full[i] = v;
        }
        assemble_in(&self.elements, &full)
    }

    /// Matrix of full adapted coordinates.
    pub fn assemble(&self, x: &[f64]) -> HermitianMatrix {
        assemble_in(&self.elements, x)
    }

    /// Full adapted coordinates of a matrix.
    pub fn coordinates(&self, x: &CMatrix) -> Vec<f64> {
        coordinates_in(&self.elements, x)
    }

    /// Splits full adapted coordinates into (a, λ).
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            self.a_indices.iter().map(|&i| x[i]).collect(),
            self.b_indices.iter().map(|&i| x[i]).collect(),
        )
    }

    /// Full adapted coordinates from (a, λ).
    pub fn join(&self, a: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (&i, &v) in self.a_indices.iter().zip(a) {
            x[i] = v;
        }
        for (&i, &v) in self.b_indices.iter().zip(lambda) {
            x[i] = v;
        }
        x
    }

    /// Canonical Gell-Mann coordinates of adapted coordinates.
    pub fn to_canonical(&self, x: &[f64]) -> Vec<f64> {
        (&self.rotation * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn from_canonical(&self, c: &[f64]) -> Vec<f64> {
        (self.rotation.transpose() * DVector::from_column_slice(c)).as_slice().to_vec()
    }

    /// Structure constants in the adapted basis.
    pub fn adapted_structure_constants(&self) -> Vec<f64> {
        structure_constants_of(&self.elements)
    }

    pub fn verify_controllability(&self) -> bool {
        generated_dimension(&self.a_elements()).is_ok_and(|d| d == self.dim())
    }

    /// Largest 𝔸-projection of `i[B̂ᵢ, B̂ⱼ]`; zero iff 𝔹 is a subalgebra.
    pub fn b_closure_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, &i) in self.b_indices.iter().enumerate() {
            for &j in &self.b_indices[p + 1..] {
                let br = bracket(self.elements[i].matrix(), self.elements[j].matrix());
                for &k in &self.a_indices {
                    worst = worst.max(trace_product_re(&br, self.elements[k].matrix()).abs());
                }
            }
        }
        worst
    }

    /// True when 𝔹 closes under the bracket (within the closure tolerance).
    pub fn is_type1(&self) -> bool {
        self.b_closure_residual() < NumericPolicy::current().closure
    }

    /// True for centralizer decompositions with 𝔟 = 𝔩⊥.
    pub fn is_type2(&self) -> bool {
        self.cartan
            .as_ref()
            .is_some_and(|c| c.component_coords()[c.q()..].iter().all(|m| m.ncols() == 0))
    }

    pub fn project_b(&self, x: &HermitianMatrix) -> HermitianMatrix {
        let c = self.coordinates(x.matrix());
        let (_, l) = self.split(&c);
        self.assemble_b(&l)
    }

    pub fn project_a(&self, x: &HermitianMatrix) -> HermitianMatrix {
        let c = self.coordinates(x.matrix());
        let (a, _) = self.split(&c);
        self.assemble_a(&a)
    }

    pub fn to_json(&self) -> DecompositionJson {
        let dim = self.dim();
        let mut rot = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                rot.push(self.rotation[(r, c)]);
            }
        }
        DecompositionJson {
            n: self.n(),
            kind: self.kind,
            k: self.k,
            q: self.cartan.as_ref().map(|c| c.q),
            a_element: self.cartan.as_ref().map(|c| c.a_element.clone()),
            a_indices: self.a_indices.clone(),
            b_indices: self.b_indices.clone(),
            basis_rotation: rot,
        }
    }

    pub fn from_json(j: DecompositionJson) -> Result<Self> {
        let basis = gell_mann_basis(j.n)?;
        let dim = basis.len();
        if j.basis_rotation.len() != dim * dim {
            return Err(Error::invalid(format!(
                "basis_rotation must have {} entries, got {}",
                dim * dim,
                j.basis_rotation.len()
            )));
        }
        let rotation = DMatrix::from_row_slice(dim, dim, &j.basis_rotation);
        let mut all: Vec<usize> = j.a_indices.iter().chain(&j.b_indices).copied().collect();
        all.sort_unstable();
        if all != (0..dim).collect::<Vec<_>>() {
            return Err(Error::invalid("a_indices and b_indices must partition the basis"));
        }
        let rebuilt = match j.kind {
            DecompositionKind::Generic | DecompositionKind::PseudoCartan if j.a_element.is_none() => {
                if j.kind == DecompositionKind::PseudoCartan {
                    let k = j.k.ok_or_else(|| Error::invalid("pseudo_cartan decomposition needs k"))?;
                    Some(make_pseudo_cartan(j.n, k)?.ab())
                } else {
                    None
                }
            }
            _ => {
                let k = j.k.ok_or_else(|| Error::invalid("centralizer decomposition needs k"))?;
                let q = j.q.ok_or_else(|| Error::invalid("centralizer decomposition needs q"))?;
                let a = j
                    .a_element
                    .clone()
                    .ok_or_else(|| Error::invalid("centralizer decomposition needs a_element"))?;
                let split = make_pseudo_cartan(j.n, k)?;
                Some(build_type_ab(&centralizer_split(&split, &a, q)?))
            }
        };
        let mut d = make_rotated_ab(basis, rotation, &j.a_indices)?;
        d.kind = j.kind;
        if let Some(r) = rebuilt {
            let mismatch = (&r.rotation - &d.rotation).norm();
            if mismatch > 1e-8 || r.a_indices != d.a_indices || r.kind != d.kind {
                return Err(Error::invalid(format!(
                    "stored decomposition does not match its {} parameters (rotation mismatch {mismatch:e})",
                    j.kind.as_str()
                )));
            }
            d.k = r.k;
            d.cartan = r.cartan;
        }
        Ok(d)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let s = serde_json::to_string(&self.to_json()).expect("decomposition serializes");
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}

/// Serialized form of an [`ABDecomposition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionJson {
    pub n: usize,
    pub kind: DecompositionKind,
    pub k: Option<usize>,
    pub q: Option<usize>,
    pub a_element: Option<HermitianMatrix>,
    pub a_indices: Vec<usize>,
    pub b_indices: Vec<usize>,
    /// Row-major N×N orthogonal matrix; column j is adapted element j in canonical coordinates.
    pub basis_rotation: Vec<f64>,
}

impl Serialize for ABDecomposition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ABDecomposition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = DecompositionJson::deserialize(d)?;
        ABDecomposition::from_json(j).map_err(serde::de::Error::custom)
    }
}

/// Appendix-style element `c (E₁ₙ + Eₙ₁)` for the split `k = n − 1`, generalised
/// to `Σ_i c_i (E_{i,k+i} + E_{k+i,i})` along the first off-diagonal block.
pub fn block_diagonal_p(n: usize, k: usize, c: &[f64]) -> Result<HermitianMatrix> {
    let r = k.min(n - k);
    if c.len() > r {
        return Err(Error::invalid(format!("at most {r} coefficients fit the off-diagonal block")));
    }
    let mut m = CMatrix::zeros(n, n);
    for (i, &v) in c.iter().enumerate() {
        m[(i, k + i)] = C64::new(v, 0.0);
        m[(k + i, i)] = C64::new(v, 0.0);
    }
    HermitianMatrix::new(m)
}
