//! Dense complex tensors and the linear-algebra kernels built on them.

use crate::error::{Error, Result};
use faer::{Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use num_complex::Complex64 as C64;

pub type SeededRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a master seed and a path of labels
/// by chaining splitmix64 rounds.
pub fn split_seed(master: u64, path: &[u64]) -> u64 {
    let mut x = master;
    for &p in path {
        x = splitmix64(x ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    splitmix64(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct DenseTensor {
    shape: Vec<usize>,
    entries: Vec<C64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    entries: Vec<C64>,
}

impl TryFrom<RawTensor> for DenseTensor {
    type Error = Error;
    fn try_from(raw: RawTensor) -> Result<Self> {
        DenseTensor::new(raw.shape, raw.entries)
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, entries: Vec<C64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if count != entries.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {count} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite tensor entry".into()));
        }
        Ok(Self { shape, entries })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, entries: Vec<C64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), entries.len());
        Self { shape, entries }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![C64::new(0.0, 0.0); count])
    }

    pub fn identity(n: usize) -> Self {
        Self::matrix_from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn matrix_from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self::from_parts(vec![rows, cols], entries)
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::matrix_from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn vector(entries: Vec<C64>) -> Self {
        Self::from_parts(vec![entries.len()], entries)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<C64> {
        self.entries
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self { shape: self.shape.clone(), entries: self.entries.iter().map(|z| z.conj()).collect() }
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.entries[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            off = off * e + i;
        }
        off
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.entries.len() || shape.contains(&0) {
            return Err(Error::Dimension(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Self::from_parts(shape.to_vec(), self.entries))
    }

    pub(crate) fn reshaped(self, shape: &[usize]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.entries.len());
        Self::from_parts(shape.to_vec(), self.entries)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Dimension(format!("invalid permutation {axes:?} for rank {r}")));
        }
        Ok(self.permuted(axes))
    }

    pub(crate) fn permuted(&self, axes: &[usize]) -> Self {
        let r = self.rank();
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return self.clone();
        }
        let mut strides = vec![1usize; r];
        for k in (0..r.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let new_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let mut out = Vec::with_capacity(self.entries.len());
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..self.entries.len() {
            out.push(self.entries[src]);
            for k in (0..r).rev() {
                idx[k] += 1;
                src += new_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                src -= new_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Self::from_parts(new_shape, out)
    }

    pub fn as_mat(&self) -> MatRef<'_, C64> {
        assert_eq!(self.rank(), 2, "as_mat needs a rank-2 tensor");
        MatRef::from_row_major_slice(&self.entries, self.shape[0], self.shape[1])
    }

    pub fn from_mat(m: MatRef<'_, C64>) -> Self {
        Self::from_parts(vec![m.nrows(), m.ncols()], to_row_major(m))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self::from_mat((self.as_mat() * other.as_mat()).as_ref()))
    }

    pub fn adjoint(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        Self::matrix_from_fn(c, r, |i, j| self.entries[j * c + i].conj())
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        Self::matrix_from_fn(ar * br, ac * bc, |i, j| {
            self.entries[(i / br) * ac + j / bc] * other.entries[(i % br) * bc + j % bc]
        })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_parts(self.shape.clone(), self.entries.iter().map(|&z| z * c).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!("shapes {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.entries.iter().zip(&other.entries).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.shape[0].min(self.shape[1])).map(|i| self.entries[i * self.shape[1] + i]).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.shape[0];
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.entries[i * n + j] - self.entries[j * n + i].conj()).norm());
            }
        }
        worst
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        let (_, s, _) = thin_svd(self.as_mat());
        s.first().copied().unwrap_or(0.0)
    }
}

pub(crate) fn to_row_major(m: MatRef<'_, C64>) -> Vec<C64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn mat_view(data: &[C64], rows: usize, cols: usize) -> MatRef<'_, C64> {
    MatRef::from_row_major_slice(data, rows, cols)
}

/// Thin SVD `m = U diag(s) V†`, singular values descending.
pub(crate) fn thin_svd(m: MatRef<'_, C64>) -> (Mat<C64>, Vec<f64>, Mat<C64>) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (Mat::zeros(m.nrows(), 0), vec![], Mat::zeros(m.ncols(), 0));
    }
    match m.thin_svd() {
        Ok(svd) => {
            let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
            (svd.U().to_owned(), s, svd.V().to_owned())
        }
        Err(_) => {
            // Fall back to the Hermitian eigendecomposition of m†m.
            let g = m.adjoint() * m;
            let (w, v) = eigh_mat(g.as_ref());
            let n = w.len();
            let mut s = Vec::with_capacity(k);
            let mut vm = Mat::<C64>::zeros(m.ncols(), k);
            for c in 0..k {
                s.push(w[n - 1 - c].max(0.0).sqrt());
                for r in 0..m.ncols() {
                    vm[(r, c)] = v[(r, n - 1 - c)];
                }
            }
            let mut u = m * vm.as_ref();
            for c in 0..k {
                let inv = if s[c] > 0.0 { 1.0 / s[c] } else { 0.0 };
                for r in 0..m.nrows() {
                    u[(r, c)] *= inv;
                }
            }
            (u, s, vm)
        }
    }
}

pub(crate) fn eigh_mat(a: MatRef<'_, C64>) -> (Vec<f64>, Mat<C64>) {
    let n = a.nrows();
    if n == 0 {
        return (vec![], Mat::zeros(0, 0));
    }
    let real = (0..n).all(|i| (0..n).all(|j| a[(i, j)].im == 0.0));
    if real {
        let ar = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (a[(i, j)].re + a[(j, i)].re));
        let e = ar.self_adjoint_eigen(Side::Lower).expect("real symmetric eigendecomposition failed");
        let w = e.S().column_vector().iter().copied().collect();
        let u = e.U();
        return (w, Mat::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)));
    }
    let sym = Mat::<C64>::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    let e = sym.self_adjoint_eigen(Side::Lower).expect("Hermitian eigendecomposition failed");
    let w = e.S().column_vector().iter().map(|z| z.re).collect();
    (w, e.U().to_owned())
}

/// Thin QR with `R` having a real non-negative diagonal.
pub(crate) fn thin_qr(m: MatRef<'_, C64>) -> (Mat<C64>, Mat<C64>) {
    let qr = m.qr();
    let mut q = qr.compute_thin_Q();
    let mut r = qr.thin_R().to_owned();
    for i in 0..r.nrows() {
        let d = r[(i, i)];
        let a = d.norm();
        if a > 0.0 {
            let ph = d / a;
            for j in 0..r.ncols() {
                r[(i, j)] *= ph.conj();
            }
            for k in 0..q.nrows() {
                q[(k, i)] *= ph;
            }
        }
    }
    (q, r)
}

/// Contracts `a` and `b` over the listed axis pairs `(axis_of_a, axis_of_b)`.
/// Output axes are the unpaired axes of `a` followed by those of `b`.
pub fn contract(a: &DenseTensor, b: &DenseTensor, paired_axes: &[(usize, usize)]) -> Result<DenseTensor> {
    let (ra, rb) = (a.rank(), b.rank());
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    for &(i, j) in paired_axes {
        if i >= ra || j >= rb {
            return Err(Error::Dimension(format!("axis pair ({i},{j}) out of range")));
        }
        if used_a[i] || used_b[j] {
            return Err(Error::Dimension(format!("axis pair ({i},{j}) repeats an axis")));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::Dimension(format!(
                "extent mismatch on pair ({i},{j}): {} vs {}",
                a.shape[i], b.shape[j]
            )));
        }
        used_a[i] = true;
        used_b[j] = true;
    }
    let free_a: Vec<usize> = (0..ra).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..rb).filter(|&j| !used_b[j]).collect();
    let mut perm_a = free_a.clone();
    perm_a.extend(paired_axes.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = paired_axes.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = paired_axes.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&j| b.shape[j]).product();
    let ap = a.permuted(&perm_a);
    let bp = b.permuted(&perm_b);
    let c = mat_view(&ap.entries, m, k) * mat_view(&bp.entries, k, n);
    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&j| b.shape[j]));
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(DenseTensor::from_parts(shape, to_row_major(c.as_ref())))
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `m × k`, orthonormal columns.
    pub left_isometry: DenseTensor,
    pub singular_values: Vec<f64>,
    /// `n × k`, orthonormal columns; `m ≈ U diag(σ) V†`.
    pub right_isometry: DenseTensor,
    pub discarded_weight: f64,
}

/// Truncated SVD keeping `min(max_rank, #{σ ≥ cutoff}, min(rows, cols))` values
/// (at least one).
pub fn svd_truncate(m: &DenseTensor, max_rank: usize, cutoff: f64) -> Result<SvdResult> {
    if m.rank() != 2 {
        return Err(Error::Dimension("svd_truncate needs a rank-2 tensor".into()));
    }
    if max_rank == 0 {
        return Err(Error::Parameter("max_rank must be positive".into()));
    }
    if m.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("non-finite entry in SVD input".into()));
    }
    let (u, s, v) = thin_svd(m.as_mat());
    let above = s.iter().take_while(|&&x| x >= cutoff).count();
    let keep = max_rank.min(above).min(s.len()).max(1);
    let discarded_weight = s[keep..].iter().map(|x| x * x).sum();
    Ok(SvdResult {
        left_isometry: DenseTensor::from_mat(u.as_ref().subcols(0, keep)),
        singular_values: s[..keep].to_vec(),
        right_isometry: DenseTensor::from_mat(v.as_ref().subcols(0, keep)),
        discarded_weight,
    })
}

/// Hermitian eigendecomposition with ascending eigenvalues; eigenvectors are
/// the columns of the returned matrix.
pub fn eigh(a: &DenseTensor) -> Result<(Vec<f64>, DenseTensor)> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(Error::Dimension(format!("eigh needs a square matrix, got {:?}", a.shape)));
    }
    let scale = a.norm().max(1e-300);
    if a.hermiticity_defect() > 1e-8 * scale {
        return Err(Error::Contract("eigh input is not Hermitian".into()));
    }
    let (w, v) = eigh_mat(a.as_mat());
    Ok((w, DenseTensor::from_mat(v.as_ref())))
}

/// Applies a real function to a Hermitian matrix through its spectrum.
pub fn hermitian_function(a: &DenseTensor, f: impl Fn(f64) -> f64) -> Result<DenseTensor> {
    let (w, v) = eigh(a)?;
    let n = w.len();
    let fv: Vec<f64> = w.iter().map(|&x| f(x)).collect();
    let vm = v.as_mat();
    let scaled = Mat::<C64>::from_fn(n, n, |i, j| vm[(i, j)] * fv[j]);
    Ok(DenseTensor::from_mat((scaled.as_ref() * vm.adjoint()).as_ref()))
}

/// Haar-distributed `rows × cols` isometry (complex unitary columns).
pub fn haar_isometry(rows: usize, cols: usize, seed: u64) -> Result<DenseTensor> {
    haar_isometry_with(rows, cols, &mut seeded_rng(seed), false)
}

/// Haar isometry drawn from an explicit generator; `real` selects the
/// orthogonal group instead of the unitary group.
pub fn haar_isometry_with(rows: usize, cols: usize, rng: &mut SeededRng, real: bool) -> Result<DenseTensor> {
    if cols > rows {
        return Err(Error::Dimension(format!("isometry with {cols} columns and {rows} rows")));
    }
    if cols == 0 {
        return Err(Error::Dimension("isometry needs at least one column".into()));
    }
    let g = Mat::<C64>::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        if real {
            C64::new(re, 0.0)
        } else {
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }
    });
    let (q, _) = thin_qr(g.as_ref());
    Ok(DenseTensor::from_mat(q.as_ref()))
}

pub(crate) fn random_gaussian(shape: &[usize], rng: &mut SeededRng) -> DenseTensor {
    let count: usize = shape.iter().product();
    let entries = (0..count)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
        .collect();
    DenseTensor::from_parts(shape.to_vec(), entries)
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian(n: usize, rng: &mut SeededRng) -> DenseTensor {
    let g = random_gaussian(&[n, n], rng);
    g.add(&g.adjoint()).expect("same shape").scale(C64::new(0.5, 0.0))
}
