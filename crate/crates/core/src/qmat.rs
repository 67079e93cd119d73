//! Dense complex linear algebra and the quantum primitives built on it.
//!
//! Every operator carries an ordered list of tensor-factor dimensions so that
//! partial traces and factor-local actions can be expressed by factor index.
//! The Hermitian eigendecomposition is the single numerical backend for matrix
//! functions, norms, entropies and fidelities; the SVD is only used by the
//! Uhlmann alignment in [`crate::proto`].

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Numerical tolerances shared across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Maximum entrywise deviation from Hermiticity.
    pub herm: f64,
    /// Allowed deviation of a trace (or squared norm) from one.
    pub trace: f64,
    /// Most negative eigenvalue still accepted as PSD.
    pub psd: f64,
    /// Eigenvalues below this are treated as zero.
    pub rank: f64,
    /// Generic numerical agreement, scaled by matrix side where noted.
    pub num: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances { herm: 1e-9, trace: 1e-9, psd: 1e-10, rank: 1e-10, num: 1e-8 };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QmatError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("factor index {index} out of range for {factors} factors")]
    FactorOutOfRange { index: usize, factors: usize },
    #[error("duplicate factor index {0}")]
    DuplicateFactor(usize),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("trace {0} is not one")]
    BadTrace(f64),
    #[error("state vector has squared norm {0}, expected one")]
    BadNorm(f64),
    #[error("invalid factor dimensions: {0}")]
    BadDims(String),
}

pub type Result<T> = std::result::Result<T, QmatError>;

fn check_dims(dims: &[usize], side: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(QmatError::BadDims("empty factor list".into()));
    }
    if dims.contains(&0) {
        return Err(QmatError::BadDims(format!("zero factor in {dims:?}")));
    }
    let prod: usize = dims.iter().product();
    if prod != side {
        return Err(QmatError::BadDims(format!("factors {dims:?} multiply to {prod}, side is {side}")));
    }
    Ok(())
}

/// Index offsets of the selected factors and of the remaining factors.
///
/// For a row-major multi-index over `dims`, the flat index equals
/// `sel[a] + rest[b]` where `a` enumerates the selected factors (in the order
/// given) and `b` the remaining ones (in original order).
pub(crate) fn split_offsets(dims: &[usize], selected: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = dims.len();
    let mut seen = vec![false; n];
    for &s in selected {
        if s >= n {
            return Err(QmatError::FactorOutOfRange { index: s, factors: n });
        }
        if seen[s] {
            return Err(QmatError::DuplicateFactor(s));
        }
        seen[s] = true;
    }
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let offsets = |factors: &[usize]| -> Vec<usize> {
        let mut out = vec![0usize];
        for &f in factors {
            let mut next = Vec::with_capacity(out.len() * dims[f]);
            for &base in &out {
                for k in 0..dims[f] {
                    next.push(base + k * strides[f]);
                }
            }
            out = next;
        }
        out
    };
    let rest: Vec<usize> = (0..n).filter(|i| !seen[*i]).collect();
    Ok((offsets(selected), offsets(&rest)))
}

/// Eigendecomposition of a Hermitian operator, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: CMatrix,
}

/// Dense square complex matrix with declared tensor-factor dimensions.
#[derive(Clone, PartialEq)]
pub struct Operator {
    data: CMatrix,
    dims: Vec<usize>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator(dims={:?}){}", self.dims, self.data)
    }
}

impl Operator {
    pub fn new(data: CMatrix, dims: Vec<usize>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(QmatError::DimMismatch(format!("{}x{} matrix is not square", data.nrows(), data.ncols())));
        }
        check_dims(&dims, data.nrows())?;
        Ok(Self { data, dims })
    }

    /// Single-factor operator.
    pub fn from_matrix(data: CMatrix) -> Result<Self> {
        let side = data.nrows();
        Self::new(data, vec![side])
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = CMatrix::from_fn(n, n, |i, j| C64::new(rows[i].get(j).copied().unwrap_or(0.0), 0.0));
        Self::from_matrix(m)
    }

    pub fn identity(dims: &[usize]) -> Self {
        let side = dims.iter().product();
        Self { data: CMatrix::identity(side, side), dims: dims.to_vec() }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let side = dims.iter().product();
        Self { data: CMatrix::zeros(side, side), dims: dims.to_vec() }
    }

    pub fn diag(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0)));
        Self { data: CMatrix::from_diagonal(&d), dims: vec![values.len()] }
    }

    /// `|v><v|` for an arbitrary (not necessarily normalized) vector.
    pub fn outer(v: &StateVector) -> Self {
        Self { data: &v.amps * v.amps.adjoint(), dims: v.dims.clone() }
    }

    /// Computational basis projector `|i><i|`.
    pub fn basis_projector(dims: &[usize], index: usize) -> Self {
        let mut op = Self::zeros(dims);
        op.data[(index, index)] = C64::new(1.0, 0.0);
        op
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn side(&self) -> usize {
        self.data.nrows()
    }

    /// Same matrix, new factor structure with the same total side.
    pub fn with_dims(self, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims, self.side())?;
        Ok(Self { data: self.data, dims })
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { data: self.data.adjoint(), dims: self.dims.clone() }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { data: self.data.map(|z| z * factor), dims: self.dims.clone() }
    }

    /// Largest entrywise deviation `|m - m^dagger|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.side();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `(m + m^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let h = (&self.data + self.data.adjoint()).map(|z| z * 0.5);
        Self { data: h, dims: self.dims.clone() }
    }

    /// Eigendecomposition of the Hermitian part, eigenvalues descending.
    pub fn eigh(&self) -> Eigh {
        let eig = self.hermitian_part().data.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMatrix::zeros(self.side(), self.side());
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            fix_phase(&mut col);
            vectors.set_column(dst, &col);
        }
        Eigh { values, vectors }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.hermitian_part().data.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Hermitian check followed by a PSD check, both within `tol`.
    pub fn check_psd(&self, tol: &Tolerances) -> Result<()> {
        let dev = self.hermitian_deviation();
        if dev > tol.herm {
            return Err(QmatError::NotHermitian(dev));
        }
        let min = self.min_eigenvalue();
        if min < -tol.psd {
            return Err(QmatError::NotPsd(min));
        }
        Ok(())
    }

    /// Conjugation `self * x * self^dagger`.
    pub fn sandwich(&self, x: &Operator) -> Operator {
        Operator { data: &self.data * &x.data * self.data.adjoint(), dims: x.dims.clone() }
    }

    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        if self.side() != other.side() {
            return Err(QmatError::DimMismatch(format!("{} vs {}", self.side(), other.side())));
        }
        Ok(Operator { data: &self.data * &other.data, dims: self.dims.clone() })
    }

    fn same_side(&self, other: &Operator) {
        assert_eq!(self.side(), other.side(), "operator sides differ");
    }
}

/// Rotate a vector so its first non-negligible entry is real positive.
fn fix_phase(v: &mut CVector) {
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let phase = first.conj() / first.norm();
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.same_side(rhs);
        Operator { data: &self.data + &rhs.data, dims: self.dims.clone() }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.same_side(rhs);
        Operator { data: &self.data - &rhs.data, dims: self.dims.clone() }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.same_side(rhs);
        Operator { data: &self.data * &rhs.data, dims: self.dims.clone() }
    }
}

/// Trace-one positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    op: Operator,
}

impl DensityOperator {
    pub fn new(op: Operator, tol: &Tolerances) -> Result<Self> {
        op.check_psd(tol)?;
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(QmatError::BadTrace(tr.re));
        }
        Ok(Self { op: op.hermitian_part() })
    }

    /// Normalizes a PSD operator with positive trace.
    pub fn normalized(op: &Operator, tol: &Tolerances) -> Result<Self> {
        let tr = op.trace().re;
        if tr <= tol.rank {
            return Err(QmatError::BadTrace(tr));
        }
        Self::new(op.scale(1.0 / tr), tol)
    }

    /// Hermitian part divided by its trace, skipping validation.
    ///
    /// For operators that are PSD by construction, where rounding noise on a
    /// tiny trace would otherwise trip the PSD check.
    pub(crate) fn assume_valid(op: &Operator) -> Self {
        let h = op.hermitian_part();
        let tr = h.trace().re;
        Self { op: h.scale(1.0 / tr) }
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let side: usize = dims.iter().product();
        Self { op: Operator::identity(dims).scale(1.0 / side as f64) }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self { op: Operator::outer(psi.vector()) }
    }

    pub fn diag(probs: &[f64]) -> Result<Self> {
        Self::new(Operator::diag(probs), &Tolerances::DEFAULT)
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn into_op(self) -> Operator {
        self.op
    }

    pub fn dims(&self) -> &[usize] {
        self.op.dims()
    }

    pub fn side(&self) -> usize {
        self.op.side()
    }
}

/// Complex vector with factor dimensions and no normalization constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: CVector,
    dims: Vec<usize>,
}

impl StateVector {
    pub fn new(amps: CVector, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims, amps.len())?;
        Ok(Self { amps, dims })
    }

    pub fn basis(dims: &[usize], index: usize) -> Self {
        let side: usize = dims.iter().product();
        let mut amps = CVector::zeros(side);
        amps[index] = C64::new(1.0, 0.0);
        Self { amps, dims: dims.to_vec() }
    }

    pub fn amps(&self) -> &CVector {
        &self.amps
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { amps: self.amps.map(|z| z * factor), dims: self.dims.clone() }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.amps.len() != other.amps.len() {
            return Err(QmatError::DimMismatch(format!("{} vs {}", self.amps.len(), other.amps.len())));
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let amps = self.amps.kronecker(&other.amps);
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        StateVector { amps, dims }
    }

    /// Applies `op` to the listed factors (in that order) and identity elsewhere.
    pub fn apply(&self, op: &Operator, factors: &[usize]) -> Result<StateVector> {
        let (sel, rest) = split_offsets(&self.dims, factors)?;
        if sel.len() != op.side() {
            return Err(QmatError::DimMismatch(format!(
                "operator side {} vs selected factors of size {}",
                op.side(),
                sel.len()
            )));
        }
        let mut out = CVector::zeros(self.amps.len());
        let mut sub = CVector::zeros(sel.len());
        for &r in &rest {
            for (a, &s) in sel.iter().enumerate() {
                sub[a] = self.amps[s + r];
            }
            let img = op.matrix() * &sub;
            for (a, &s) in sel.iter().enumerate() {
                out[s + r] = img[a];
            }
        }
        Ok(StateVector { amps: out, dims: self.dims.clone() })
    }

    /// Reduced operator on the kept factors, `Tr_rest |v><v|`.
    pub fn reduced(&self, keep: &[usize]) -> Result<Operator> {
        let (sel, rest) = split_offsets(&self.dims, keep)?;
        let m = CMatrix::from_fn(sel.len(), rest.len(), |a, b| self.amps[sel[a] + rest[b]]);
        let dims = keep.iter().map(|&k| self.dims[k]).collect();
        Operator::new(&m * m.adjoint(), dims)
    }

    /// Amplitude matrix with rows indexed by `rows` factors and columns by the rest.
    pub fn as_matrix(&self, rows: &[usize]) -> Result<CMatrix> {
        let (sel, rest) = split_offsets(&self.dims, rows)?;
        Ok(CMatrix::from_fn(sel.len(), rest.len(), |a, b| self.amps[sel[a] + rest[b]]))
    }
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    v: StateVector,
}

impl PureState {
    pub fn new(v: StateVector, tol: &Tolerances) -> Result<Self> {
        let n = v.norm_sqr();
        if (n - 1.0).abs() > tol.trace {
            return Err(QmatError::BadNorm(n));
        }
        Ok(Self { v })
    }

    /// Rescales a nonzero vector to unit norm.
    pub fn normalize(v: StateVector) -> Result<Self> {
        let n = v.norm_sqr();
        if n <= 0.0 {
            return Err(QmatError::BadNorm(n));
        }
        Ok(Self { v: v.scale(1.0 / n.sqrt()) })
    }

    pub fn basis(dims: &[usize], index: usize) -> Self {
        Self { v: StateVector::basis(dims, index) }
    }

    pub fn vector(&self) -> &StateVector {
        &self.v
    }

    pub fn into_vector(self) -> StateVector {
        self.v
    }

    pub fn dims(&self) -> &[usize] {
        self.v.dims()
    }

    pub fn to_density(&self) -> DensityOperator {
        DensityOperator::from_pure(self)
    }
}

/// Kronecker product; factor lists are concatenated.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    Operator { data: a.data.kronecker(&b.data), dims }
}

/// Left-to-right Kronecker product of a non-empty list.
pub fn tensor_all<'a, I: IntoIterator<Item = &'a Operator>>(ops: I) -> Option<Operator> {
    let mut it = ops.into_iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, op| tensor(&acc, op)))
}

/// `op^{⊗n}`, with `n >= 1`.
pub fn tensor_power(op: &Operator, n: usize) -> Operator {
    assert!(n >= 1, "tensor power needs n >= 1");
    (1..n).fold(op.clone(), |acc, _| tensor(&acc, op))
}

/// Trace over every factor not in `keep`; kept factors stay in their listed order.
pub fn partial_trace(m: &Operator, keep: &[usize]) -> Result<Operator> {
    let (sel, rest) = split_offsets(&m.dims, keep)?;
    let d = sel.len();
    let mut out = CMatrix::zeros(d, d);
    for a in 0..d {
        for c in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for &r in &rest {
                acc += m.data[(sel[a] + r, sel[c] + r)];
            }
            out[(a, c)] = acc;
        }
    }
    if keep.is_empty() {
        return Operator::new(out, vec![1]);
    }
    Operator::new(out, keep.iter().map(|&k| m.dims[k]).collect())
}

/// Purification with a reference factor of the same side appended.
///
/// Eigenvectors are taken in descending eigenvalue order, each with its first
/// nonzero amplitude real positive, so the result is deterministic.
pub fn purify(rho: &DensityOperator) -> PureState {
    let side = rho.side();
    let eig = rho.op().eigh();
    let mut amps = CVector::zeros(side * side);
    for (i, &lambda) in eig.values.iter().enumerate() {
        let w = lambda.max(0.0).sqrt();
        if w == 0.0 {
            continue;
        }
        for s in 0..side {
            amps[s * side + i] += eig.vectors[(s, i)] * w;
        }
    }
    let mut dims = rho.dims().to_vec();
    dims.push(side);
    let v = StateVector { amps, dims };
    // Renormalize away the clipped negative eigenvalues.
    PureState::normalize(v).expect("density operator has unit trace")
}

/// Applies a real function to the spectrum of a Hermitian operator.
fn spectral_map(m: &Operator, tol: &Tolerances, f: impl Fn(f64) -> f64) -> Result<Operator> {
    let dev = m.hermitian_deviation();
    if dev > tol.herm * (m.side() as f64).max(1.0) {
        return Err(QmatError::NotHermitian(dev));
    }
    let eig = m.eigh();
    let fv = DVector::from_iterator(eig.values.len(), eig.values.iter().map(|&v| C64::new(f(v), 0.0)));
    let data = &eig.vectors * CMatrix::from_diagonal(&fv) * eig.vectors.adjoint();
    Ok(Operator { data, dims: m.dims.clone() })
}

/// Principal square root of a Hermitian PSD operator; tiny negative eigenvalues are clipped.
pub fn mat_sqrt(m: &Operator) -> Result<Operator> {
    mat_sqrt_with(m, &Tolerances::DEFAULT)
}

pub fn mat_sqrt_with(m: &Operator, tol: &Tolerances) -> Result<Operator> {
    // Eigenvalues at rounding level would otherwise contribute ~1e-8 after the root.
    let scale = m.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = 64.0 * f64::EPSILON * scale * m.side() as f64;
    spectral_map(m, tol, move |v| if v > floor { v.sqrt() } else { 0.0 })
}

/// Pseudo-inverse square root: inverts on the support, annihilates the kernel.
pub fn pinv_sqrt(m: &Operator) -> Result<Operator> {
    pinv_sqrt_with(m, &Tolerances::DEFAULT)
}

pub fn pinv_sqrt_with(m: &Operator, tol: &Tolerances) -> Result<Operator> {
    let cut = tol.rank;
    spectral_map(m, tol, move |v| if v > cut { 1.0 / v.sqrt() } else { 0.0 })
}

/// Projector onto the eigenspace with eigenvalues above the rank tolerance.
pub fn support_projector(m: &Operator, tol: &Tolerances) -> Result<Operator> {
    let cut = tol.rank;
    spectral_map(m, tol, move |v| if v > cut { 1.0 } else { 0.0 })
}

/// Singular value decomposition `m = u diag(sigma) v^dagger` of a square matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    /// Descending.
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

/// SVD built from the eigenvectors of `m^dagger m`.
///
/// Singular values are recomputed as `||m v_i||`, which keeps null directions at
/// rounding level instead of the square root of it. Left vectors for vanishing
/// singular values are completed to a unitary by Gram-Schmidt.
pub fn svd_square(m: &CMatrix) -> Svd {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "svd_square needs a square matrix");
    let gram = Operator { data: m.adjoint() * m, dims: vec![d] };
    let v = gram.eigh().vectors;
    let mv = m * &v;
    let sigma: Vec<f64> = (0..d).map(|i| mv.column(i).norm()).collect();
    let top = sigma.iter().copied().fold(0.0, f64::max);
    let cut = 1e-12 * top.max(f64::MIN_POSITIVE);
    let mut u = CMatrix::zeros(d, d);
    let mut filled = Vec::with_capacity(d);
    // Descending order: re-orthogonalizing against larger singular directions
    // perturbs column i by ~eps * sigma_max / sigma_i, which costs ~eps * sigma_max
    // in the reconstruction.
    let mut order: Vec<usize> = (0..d).filter(|&i| sigma[i] > cut).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    for i in order {
        let mut col = mv.column(i) / C64::new(sigma[i], 0.0);
        for _ in 0..2 {
            for &j in &filled {
                let proj = u.column(j).dotc(&col);
                col -= u.column(j) * proj;
            }
        }
        let norm = col.norm();
        u.set_column(i, &(col / C64::new(norm, 0.0)));
        filled.push(i);
    }
    let mut candidate = 0;
    for i in (0..d).filter(|i| sigma[*i] <= cut) {
        loop {
            let mut col = CVector::zeros(d);
            col[candidate % d] = C64::new(1.0, 0.0);
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let proj = u.column(j).dotc(&col);
                    col -= u.column(j) * proj;
                }
            }
            let norm = col.norm();
            if norm > 1e-6 {
                u.set_column(i, &(col / C64::new(norm, 0.0)));
                filled.push(i);
                break;
            }
        }
    }
    Svd { u, sigma, v }
}

/// Sum of singular values of a square matrix.
pub fn nuclear_norm(m: &CMatrix) -> f64 {
    svd_square(m).sigma.iter().sum()
}

/// Sum of singular values.
pub fn trace_norm(m: &Operator) -> f64 {
    if m.hermitian_deviation() <= 1e-12 * (1.0 + m.data.norm()) {
        return m.eigenvalues().iter().map(|v| v.abs()).sum();
    }
    nuclear_norm(&m.data)
}

/// `||a - b||_1`.
pub fn trace_distance(a: &Operator, b: &Operator) -> Result<f64> {
    if a.side() != b.side() {
        return Err(QmatError::DimMismatch(format!("{} vs {}", a.side(), b.side())));
    }
    Ok(trace_norm(&(a - b)))
}

/// Squared-overlap fidelity of two PSD operators, `(Tr sqrt(sqrt(a) b sqrt(a)))^2`.
///
/// Sub-normalized arguments are allowed.
pub fn fidelity_psd(a: &Operator, b: &Operator) -> Result<f64> {
    if a.side() != b.side() {
        return Err(QmatError::DimMismatch(format!("{} vs {}", a.side(), b.side())));
    }
    // ||sqrt(a) sqrt(b)||_1 from singular values; taking square roots of the
    // eigenvalues of sqrt(a) b sqrt(a) loses ~1e-8 near rank deficiency.
    let prod = mat_sqrt(a)?.data * mat_sqrt(b)?.data;
    let root = nuclear_norm(&prod);
    Ok(root * root)
}

/// Squared overlap `|<a|b>|^2` of two vectors.
pub fn fidelity_vectors(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(QmatError::DimMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(a.inner(b)?.norm_sqr())
}

/// Fidelity in the squared convention.
pub trait Fidelity {
    fn fidelity(&self, other: &Self) -> Result<f64>;
}

impl Fidelity for PureState {
    fn fidelity(&self, other: &Self) -> Result<f64> {
        fidelity_vectors(self.vector(), other.vector())
    }
}

impl Fidelity for DensityOperator {
    fn fidelity(&self, other: &Self) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(QmatError::DimMismatch(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        fidelity_psd(self.op(), other.op())
    }
}

pub fn fidelity<S: Fidelity>(a: &S, b: &S) -> Result<f64> {
    a.fidelity(b)
}

/// `-sum p log2 p` over a list of nonnegative weights (not renormalized).
pub fn shannon_bits(weights: impl IntoIterator<Item = f64>) -> f64 {
    weights.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

/// `-Tr X log2 X` for a PSD operator of any trace; eigenvalues below zero are clipped.
pub fn entropy_of_psd(m: &Operator) -> f64 {
    if m.side() == 1 {
        return shannon_bits([m.trace().re]);
    }
    shannon_bits(m.eigenvalues())
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityOperator) -> f64 {
    entropy_of_psd(rho.op())
}

/// Random states, unitaries and POVMs for tests and Monte Carlo fixtures.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
    }

    /// Haar-random unitary via QR with the diagonal phase correction.
    pub fn unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Operator {
        let qr = ginibre(rng, d, d).qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..d {
            let rjj = r[(j, j)];
            let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
            for i in 0..d {
                q[(i, j)] *= phase;
            }
        }
        Operator { data: q, dims: vec![d] }
    }

    pub fn pure_state<R: Rng + ?Sized>(rng: &mut R, d: usize) -> PureState {
        let g = ginibre(rng, d, 1);
        let v = StateVector { amps: g.column(0).into_owned(), dims: vec![d] };
        PureState::normalize(v).expect("nonzero gaussian vector")
    }

    /// Density operator of the given rank from the induced Ginibre measure.
    pub fn density<R: Rng + ?Sized>(rng: &mut R, d: usize, rank: usize) -> DensityOperator {
        let g = ginibre(rng, d, rank.max(1));
        let w = &g * g.adjoint();
        let tr = w.trace().re;
        DensityOperator { op: Operator { data: w.map(|z| z / tr), dims: vec![d] } }
    }

    /// Full-rank density operator.
    pub fn full_rank_density<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DensityOperator {
        density(rng, d, d)
    }

    /// Complete POVM with `k` effects: `S^{-1/2} G_i S^{-1/2}` with `S = sum G_i`.
    pub fn povm_effects<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Vec<Operator> {
        let gs: Vec<Operator> = (0..k)
            .map(|_| {
                let g = ginibre(rng, d, d);
                Operator { data: &g * g.adjoint(), dims: vec![d] }
            })
            .collect();
        let total = gs.iter().skip(1).fold(gs[0].clone(), |acc, g| &acc + g);
        let inv = pinv_sqrt(&total).expect("hermitian");
        gs.iter().map(|g| inv.sandwich(g).hermitian_part()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bell() -> PureState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = StateVector::new(CVector::from_vec(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]), vec![2, 2])
            .unwrap();
        PureState::new(v, &Tolerances::DEFAULT).unwrap()
    }

    fn close(a: &Operator, b: &Operator, eps: f64) -> bool {
        trace_norm(&(a - b)) < eps
    }

    #[test]
    fn tensor_identities_and_basis_projectors() {
        let i2 = Operator::identity(&[2]);
        let i4 = tensor(&i2, &i2);
        assert_eq!(i4.dims(), &[2, 2]);
        assert!(close(&i4, &Operator::identity(&[2, 2]), 1e-14));

        let p0 = Operator::diag(&[1.0, 0.0]);
        let p1 = Operator::diag(&[0.0, 1.0]);
        let t = tensor(&p0, &p1);
        assert!(close(&t, &Operator::diag(&[0.0, 1.0, 0.0, 0.0]), 1e-14));
    }

    #[test]
    fn tensor_trace_is_multiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random::full_rank_density(&mut rng, 2).into_op().scale(1.7);
        let b = random::full_rank_density(&mut rng, 2).into_op().scale(-0.4);
        // direct product of traces as the oracle
        let expected = a.trace() * b.trace();
        assert!((tensor(&a, &b).trace() - expected).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let rho = bell().to_density();
        let a = partial_trace(rho.op(), &[0]).unwrap();
        assert!(close(&a, &Operator::identity(&[2]).scale(0.5), 1e-12));
        let b = bell().vector().reduced(&[1]).unwrap();
        assert!(close(&b, &Operator::identity(&[2]).scale(0.5), 1e-12));
    }

    #[test]
    fn partial_trace_of_product_keeps_factor_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random::full_rank_density(&mut rng, 2);
        let b = random::full_rank_density(&mut rng, 3);
        let c3 = random::full_rank_density(&mut rng, 2);
        let abc = tensor(&tensor(a.op(), b.op()), c3.op());
        let ca = partial_trace(&abc, &[2, 0]).unwrap();
        assert_eq!(ca.dims(), &[2, 2]);
        assert!(close(&ca, &tensor(c3.op(), a.op()), 1e-12));
        assert!(close(&partial_trace(&abc, &[1]).unwrap(), b.op(), 1e-12));
        // full trace preserved
        let m = random::density(&mut rng, 6, 3).into_op().with_dims(vec![2, 3]).unwrap();
        let r = partial_trace(&m, &[1]).unwrap();
        assert!((r.trace() - m.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_index() {
        let m = Operator::identity(&[2, 2]);
        assert!(matches!(partial_trace(&m, &[2]), Err(QmatError::FactorOutOfRange { .. })));
        assert!(matches!(partial_trace(&m, &[0, 0]), Err(QmatError::DuplicateFactor(0))));
    }

    #[test]
    fn purify_examples() {
        let zero = DensityOperator::diag(&[1.0, 0.0]).unwrap();
        let psi = purify(&zero);
        assert_eq!(psi.dims(), &[2, 2]);
        assert!((psi.vector().amps()[0] - c(1.0, 0.0)).norm() < 1e-12);

        let mixed = DensityOperator::maximally_mixed(&[2]);
        let back = purify(&mixed).vector().reduced(&[0]).unwrap();
        assert!(close(&back, mixed.op(), 1e-12));

        // Schmidt coefficients from the eigendecomposition oracle of diag(3/4, 1/4)
        let rho = DensityOperator::diag(&[0.75, 0.25]).unwrap();
        let m = purify(&rho).vector().as_matrix(&[0]).unwrap();
        let sv = m.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!((s[0] - 0.75f64.sqrt()).abs() < 1e-12);
        assert!((s[1] - 0.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn svd_square_rank_deficient() {
        // rank-2 product of 4x2 and 2x4 factors, with a degenerate singular pair
        let a = CMatrix::from_fn(4, 2, |i, j| c((i + j) as f64 * 0.3 - 0.4, (i * j) as f64 * 0.2));
        let b = CMatrix::from_fn(2, 4, |i, j| c(if i == j { 1.0 } else { 0.1 }, (j as f64 - i as f64) * 0.25));
        for m in [&a * &b, CMatrix::identity(4, 4) * c(0.0, 2.0)] {
            let svd = svd_square(&m);
            let s = CMatrix::from_diagonal(&CVector::from_iterator(4, svd.sigma.iter().map(|&x| c(x, 0.0))));
            assert!((&svd.u * s * svd.v.adjoint() - &m).norm() < 1e-12);
            assert!((svd.u.adjoint() * &svd.u - CMatrix::identity(4, 4)).norm() < 1e-12);
            // oracle: square roots of the eigenvalues of m^dagger m
            let ev = (m.adjoint() * &m).symmetric_eigenvalues();
            let oracle: f64 = ev.iter().map(|x| x.max(0.0).sqrt()).sum();
            assert!((nuclear_norm(&m) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn sqrt_and_pinv_sqrt() {
        let i = Operator::identity(&[3]);
        assert!(close(&mat_sqrt(&i).unwrap(), &i, 1e-12));
        let s = mat_sqrt(&Operator::diag(&[4.0, 9.0])).unwrap();
        assert!(close(&s, &Operator::diag(&[2.0, 3.0]), 1e-12));
        let m = Operator::diag(&[4.0, 0.0]);
        let p = pinv_sqrt(&m).unwrap();
        assert!(close(&p.sandwich(&m), &Operator::diag(&[1.0, 0.0]), 1e-12));

        let mut bad = Operator::zeros(&[2]);
        bad = Operator::new(
            {
                let mut d = bad.into_matrix();
                d[(0, 1)] = c(1.0, 0.0);
                d
            },
            vec![2],
        )
        .unwrap();
        assert!(matches!(mat_sqrt(&bad), Err(QmatError::NotHermitian(_))));
    }

    #[test]
    fn norms_and_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random::full_rank_density(&mut rng, 3);
        assert!((trace_norm(rho.op()) - 1.0).abs() < 1e-12);
        assert_eq!(trace_distance(rho.op(), rho.op()).unwrap(), 0.0);
        let d = trace_distance(&Operator::diag(&[1.0, 0.0]), &Operator::diag(&[0.5, 0.5])).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // non-Hermitian input: singular values of [[0,2],[0,0]] are {2,0}
        let nil = Operator::new(
            CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
            vec![2],
        )
        .unwrap();
        assert!((trace_norm(&nil) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let psi = random::pure_state(&mut rng, 3);
        assert!((fidelity(&psi, &psi).unwrap() - 1.0).abs() < 1e-12);
        let z = PureState::basis(&[2], 0);
        let o = PureState::basis(&[2], 1);
        assert_eq!(fidelity(&z, &o).unwrap(), 0.0);
        // pure-vs-mixed consistency
        let a = random::pure_state(&mut rng, 2);
        let b = random::pure_state(&mut rng, 2);
        let fm = fidelity(&a.to_density(), &b.to_density()).unwrap();
        assert!((fm - fidelity(&a, &b).unwrap()).abs() < 1e-10);
        assert!(matches!(
            fidelity(&PureState::basis(&[2], 0), &PureState::basis(&[3], 0)),
            Err(QmatError::DimMismatch(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        let pure = PureState::basis(&[2], 1).to_density();
        assert!(von_neumann_entropy(&pure).abs() < 1e-12);
        assert!((von_neumann_entropy(&DensityOperator::maximally_mixed(&[2])) - 1.0).abs() < 1e-12);
        let h = von_neumann_entropy(&DensityOperator::diag(&[0.75, 0.25]).unwrap());
        // binary entropy closed form
        let oracle = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn density_validation() {
        let tol = Tolerances::DEFAULT;
        assert!(matches!(DensityOperator::new(Operator::diag(&[0.5, 0.4]), &tol), Err(QmatError::BadTrace(_))));
        assert!(matches!(DensityOperator::new(Operator::diag(&[1.1, -0.1]), &tol), Err(QmatError::NotPsd(_))));
        assert!(Operator::new(CMatrix::zeros(2, 3), vec![2]).is_err());
        assert!(Operator::new(CMatrix::zeros(4, 4), vec![2, 3]).is_err());
    }

    #[test]
    fn apply_on_factor_matches_tensor_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = random::pure_state(&mut rng, 6).into_vector();
        let v = StateVector::new(v.amps().clone(), vec![2, 3]).unwrap();
        let u = random::unitary(&mut rng, 3);
        let applied = v.apply(&u, &[1]).unwrap();
        let full = tensor(&Operator::identity(&[2]), &u);
        let direct = full.matrix() * v.amps();
        assert!((applied.amps() - direct).norm() < 1e-12);
    }
}
