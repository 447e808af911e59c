//! Exact-diagonalization reference: spectra, spectral subspaces, viability
//! and closeness measurements on small chains.

use crate::agsp::ChebyParams;
use crate::error::{Error, Result};
use crate::hamiltonian::{LocalHamiltonian, Region};
use crate::tensor::{eigh, eigh_mat, mat_view, thin_svd, DenseTensor, SeededRng, C64};
use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

/// Size limits for dense work.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseLimits {
    /// Largest state (amplitudes) the oracle will handle.
    pub state: usize,
    /// Largest dense operator (entries) the oracle will materialize.
    pub operator: usize,
}

impl Default for DenseLimits {
    fn default() -> Self {
        Self { state: 1 << 14, operator: 1 << 20 }
    }
}

impl DenseLimits {
    pub fn with_state_limit(state: usize) -> Self {
        Self { state, ..Self::default() }
    }

    fn check_state(&self, dim: Option<usize>) -> Result<usize> {
        match dim {
            Some(d) if d <= self.state => Ok(d),
            _ => Err(Error::Unavailable(format!("dense state of dimension {dim:?} exceeds limit {}", self.state))),
        }
    }

    fn operator_fits(&self, dim: usize) -> bool {
        dim.saturating_mul(dim) <= self.operator
    }
}

fn chain_dim(h: &LocalHamiltonian) -> Option<usize> {
    h.d().checked_pow(h.n() as u32)
}

/// Orthonormal column basis of a subspace of `C^ambient`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSubspace {
    ambient: usize,
    basis: DenseTensor,
}

impl DenseSubspace {
    /// Wraps columns that are already orthonormal (checked to 1e-8).
    pub fn new(basis: DenseTensor) -> Result<Self> {
        if basis.rank() != 2 {
            return Err(Error::Dimension("subspace basis must be a matrix".into()));
        }
        let g = basis.adjoint().matmul(&basis)?;
        let dev = g.sub(&DenseTensor::identity(basis.cols()))?.op_norm();
        if dev > 1e-8 {
            return Err(Error::Contract(format!("basis columns are not orthonormal (deviation {dev:.2e})")));
        }
        Ok(Self { ambient: basis.rows(), basis })
    }

    /// Span of arbitrary columns; directions with Gram eigenvalue ≤ `tol` are dropped.
    pub fn span(columns: &DenseTensor, tol: f64) -> Result<Self> {
        let ambient = columns.rows();
        if columns.cols() == 0 {
            return Ok(Self::empty(ambient));
        }
        let (u, s, _) = thin_svd(columns.as_mat());
        let keep = s.iter().take_while(|&&x| x * x > tol).count();
        Ok(Self { ambient, basis: DenseTensor::from_mat(u.as_ref().subcols(0, keep)) })
    }

    pub fn from_vectors(vectors: &[Vec<C64>], tol: f64) -> Result<Self> {
        let ambient = vectors.first().map(|v| v.len()).unwrap_or(0);
        if vectors.iter().any(|v| v.len() != ambient) {
            return Err(Error::Dimension("vectors of different lengths".into()));
        }
        let cols = DenseTensor::matrix_from_fn(ambient, vectors.len(), |r, c| vectors[c][r]);
        Self::span(&cols, tol)
    }

    pub fn empty(ambient: usize) -> Self {
        Self { ambient, basis: DenseTensor::zeros(&[ambient, 0]) }
    }

    pub fn full(ambient: usize) -> Self {
        Self { ambient, basis: DenseTensor::identity(ambient) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &DenseTensor {
        &self.basis
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.ambient).map(|r| self.basis.get(&[r, j])).collect()
    }

    pub fn projector(&self) -> DenseTensor {
        self.basis.matmul(&self.basis.adjoint()).expect("square")
    }

    /// `‖P v‖²` for a vector `v`.
    pub fn captured_weight(&self, v: &[C64]) -> f64 {
        let b = self.basis.as_mat();
        let x = mat_view(v, v.len(), 1);
        let c = b.adjoint() * x;
        (0..c.nrows()).map(|i| c[(i, 0)].norm_sqr()).sum()
    }
}

/// Applies `Σ_i h_i` to a dense vector without forming the operator.
pub fn apply_hamiltonian(h: &LocalHamiltonian, v: &[C64]) -> Vec<C64> {
    let d = h.d();
    let n = h.n();
    let dd = d * d;
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for (i, t) in h.terms().iter().enumerate() {
        let inner = d.pow((n - i - 2) as u32);
        let outer = d.pow(i as u32);
        let te = t.entries();
        for a in 0..outer {
            for b in 0..inner {
                for p in 0..dd {
                    let mut acc = C64::new(0.0, 0.0);
                    for q in 0..dd {
                        let hv = te[p * dd + q];
                        if hv.re != 0.0 || hv.im != 0.0 {
                            acc += hv * v[(a * dd + q) * inner + b];
                        }
                    }
                    out[(a * dd + p) * inner + b] += acc;
                }
            }
        }
    }
    out
}

/// Full spectrum by dense diagonalization.
pub fn exact_spectrum(h: &LocalHamiltonian, limits: &DenseLimits) -> Result<(Vec<f64>, DenseTensor)> {
    let dim = limits.check_state(chain_dim(h))?;
    if !limits.operator_fits(dim) {
        return Err(Error::Unavailable(format!("dense operator of dimension {dim} exceeds limit {}", limits.operator)));
    }
    eigh(&h.to_dense()?)
}

/// The `count` lowest eigenpairs; dense when the operator fits, otherwise a
/// restarted block Krylov iteration with full reorthogonalization.
pub fn lowest_eigenpairs(h: &LocalHamiltonian, count: usize, limits: &DenseLimits) -> Result<(Vec<f64>, DenseTensor)> {
    let dim = limits.check_state(chain_dim(h))?;
    let count = count.min(dim);
    if limits.operator_fits(dim) {
        let (vals, vecs) = exact_spectrum(h, limits)?;
        let cols = DenseTensor::from_mat(vecs.as_mat().subcols(0, count));
        return Ok((vals[..count].to_vec(), cols));
    }
    block_krylov(|v| apply_hamiltonian(h, v), dim, count, 1e-10, 0x5eed)
}

fn block_krylov(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    dim: usize,
    count: usize,
    tol: f64,
    seed: u64,
) -> Result<(Vec<f64>, DenseTensor)> {
    let block = (count + 4).min(dim);
    let max_cols = (block * 12).clamp(block, dim);
    let mut rng: SeededRng = crate::tensor::seeded_rng(seed);
    let mut x = Mat::<C64>::from_fn(dim, block, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    for _restart in 0..500 {
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(max_cols);
        let mut images: Vec<Vec<C64>> = Vec::with_capacity(max_cols);
        let mut pending: Vec<Vec<C64>> = (0..x.ncols()).map(|c| (0..dim).map(|r| x[(r, c)]).collect()).collect();
        while basis.len() < max_cols && !pending.is_empty() {
            let mut accepted = Vec::new();
            for mut v in pending.drain(..) {
                let before = norm(&v);
                for _ in 0..2 {
                    for b in &basis {
                        let c = dot(b, &v);
                        axpy(&mut v, -c, b);
                    }
                }
                let after = norm(&v);
                if after > 1e-10 * before.max(1e-300) && after > 1e-300 && basis.len() < max_cols {
                    v.iter_mut().for_each(|z| *z /= after);
                    basis.push(v.clone());
                    accepted.push(v);
                }
            }
            for v in accepted {
                let hv = apply(&v);
                images.push(hv.clone());
                pending.push(hv);
            }
        }
        let m = basis.len();
        let hs = Mat::<C64>::from_fn(m, m, |i, j| dot(&basis[i], &images[j]));
        let hs = Mat::<C64>::from_fn(m, m, |i, j| (hs[(i, j)] + hs[(j, i)].conj()) * 0.5);
        let (theta, y) = eigh_mat(hs.as_ref());
        let keep = block.min(m);
        let mut ritz = Mat::<C64>::zeros(dim, keep);
        let mut hritz = Mat::<C64>::zeros(dim, keep);
        for c in 0..keep {
            for (k, (b, hb)) in basis.iter().zip(&images).enumerate() {
                let w = y[(k, c)];
                for r in 0..dim {
                    ritz[(r, c)] += w * b[r];
                    hritz[(r, c)] += w * hb[r];
                }
            }
        }
        let mut worst = 0.0f64;
        for c in 0..count {
            let res: f64 = (0..dim).map(|r| (hritz[(r, c)] - ritz[(r, c)] * theta[c]).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(res);
        }
        if worst < tol || m >= dim {
            let vecs = DenseTensor::from_mat(ritz.as_ref().subcols(0, count));
            return Ok((theta[..count].to_vec(), vecs));
        }
        x = ritz;
    }
    Err(Error::Numeric("block Krylov eigensolver did not converge".into()))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Span of eigenvectors with eigenvalue in `[lo, hi]`.
pub fn spectral_subspace(h: &LocalHamiltonian, lo: f64, hi: f64, limits: &DenseLimits) -> Result<DenseSubspace> {
    let dim = limits.check_state(chain_dim(h))?;
    let (vals, vecs) = if limits.operator_fits(dim) {
        exact_spectrum(h, limits)?
    } else {
        let mut count = 8usize;
        loop {
            let (vals, vecs) = lowest_eigenpairs(h, count, limits)?;
            if vals[vals.len() - 1] > hi + 1e-9 || count >= dim {
                break (vals, vecs);
            }
            if count >= 256 {
                return Err(Error::Unavailable("spectral window too wide for the iterative solver".into()));
            }
            count *= 2;
        }
    };
    let idx: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] >= lo && vals[i] <= hi).collect();
    let basis = DenseTensor::matrix_from_fn(dim, idx.len(), |r, c| vecs.get(&[r, idx[c]]));
    Ok(DenseSubspace { ambient: dim, basis })
}

/// Eigenvectors within `tol` of the lowest eigenvalue, and that eigenvalue.
pub fn ground_space(h: &LocalHamiltonian, tol: f64, limits: &DenseLimits) -> Result<(f64, DenseSubspace)> {
    let (vals, _) = lowest_eigenpairs(h, 1, limits)?;
    let e0 = vals[0];
    Ok((e0, spectral_subspace(h, e0 - tol, e0 + tol, limits)?))
}

/// `1 − λ_min` of `Σ_a Y_a† Y_a`, where `Y_a` contracts basis vector `s_a` of
/// the region into every vector of `t`.
pub fn viability(s: &DenseSubspace, region: &Region, n: usize, d: usize, t: &DenseSubspace) -> Result<f64> {
    if region.end > n {
        return Err(Error::Dimension(format!("region {region} outside {n} sites")));
    }
    let left = d.pow((region.start - 1) as u32);
    let mid = d.pow(region.len() as u32);
    let right = d.pow((n - region.end) as u32);
    if s.ambient_dim() != mid || t.ambient_dim() != left * mid * right {
        return Err(Error::Dimension("subspace dimensions do not match the region".into()));
    }
    let k = t.dim();
    if k == 0 {
        return Ok(0.0);
    }
    let sb = s.basis().as_mat();
    let sd = s.dim();
    // projected[j] = (S† on the region) t_j, laid out (left, sd, right)
    let projected: Vec<Mat<C64>> = (0..k)
        .map(|j| {
            let col = t.column(j);
            let mut out = Mat::<C64>::zeros(sd, left * right);
            for l in 0..left {
                let block = Mat::<C64>::from_fn(mid, right, |m, r| col[(l * mid + m) * right + r]);
                let p = sb.adjoint() * block.as_ref();
                for a in 0..sd {
                    for r in 0..right {
                        out[(a, l * right + r)] = p[(a, r)];
                    }
                }
            }
            out
        })
        .collect();
    let gram = Mat::<C64>::from_fn(k, k, |i, j| {
        let (a, b) = (&projected[i], &projected[j]);
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..a.ncols() {
            for r in 0..a.nrows() {
                acc += a[(r, c)].conj() * b[(r, c)];
            }
        }
        acc
    });
    let gram = Mat::<C64>::from_fn(k, k, |i, j| (gram[(i, j)] + gram[(j, i)].conj()) * 0.5);
    let (vals, _) = eigh_mat(gram.as_ref());
    Ok((1.0 - vals[0]).clamp(0.0, 1.0))
}

/// Smallest `δ` with `P_to P_from P_to ≥ (1−δ) P_to`, i.e. how close `from` is to `to`.
pub fn closeness(from: &DenseSubspace, to: &DenseSubspace) -> Result<f64> {
    if from.ambient_dim() != to.ambient_dim() {
        return Err(Error::Dimension("subspaces of different ambient spaces".into()));
    }
    if to.dim() == 0 {
        return Ok(0.0);
    }
    if from.dim() == 0 {
        return Ok(1.0);
    }
    let overlap = from.basis().adjoint().matmul(to.basis())?;
    let m = overlap.adjoint().matmul(&overlap)?;
    let m = m.add(&m.adjoint())?.scale(C64::new(0.5, 0.0));
    let (vals, _) = eigh(&m)?;
    Ok((1.0 - vals[0]).clamp(0.0, 1.0))
}

/// The smallest `δ` for which the two subspaces are mutually `δ`-close.
pub fn mutual_closeness(t1: &DenseSubspace, t2: &DenseSubspace) -> Result<f64> {
    Ok(closeness(t1, t2)?.max(closeness(t2, t1)?))
}

/// Minimum-norm `s ∈ S_ext` with `P_T s = t` for `t = T·x`, where `S_ext` is
/// already extended to the whole chain.
pub fn viability_witness(s_ext: &DenseSubspace, t: &DenseSubspace, x: &[C64]) -> Result<Vec<C64>> {
    if s_ext.ambient_dim() != t.ambient_dim() || x.len() != t.dim() {
        return Err(Error::Dimension("witness inputs do not match".into()));
    }
    let st = s_ext.basis().adjoint().matmul(t.basis())?; // S† T
    let g = st.adjoint().matmul(&st)?; // T† P_S T
    let (vals, vecs) = eigh(&g)?;
    if vals[0] <= 1e-14 {
        return Err(Error::Numeric("S_ext misses part of T".into()));
    }
    let inv = vecs.matmul(&DenseTensor::from_real_diag(&vals.iter().map(|v| 1.0 / v).collect::<Vec<_>>()))?.matmul(&vecs.adjoint())?;
    let y = inv.matmul(&DenseTensor::new(vec![x.len(), 1], x.to_vec())?)?;
    let s = s_ext.basis().matmul(&st.matmul(&y)?)?;
    Ok(s.into_entries())
}

/// `P_k(H)` through the eigendecomposition of `H`.
pub fn exact_agsp(h_dense: &DenseTensor, p: &ChebyParams) -> Result<DenseTensor> {
    crate::tensor::hermitian_function(h_dense, |x| p.eval(x))
}

/// Rank of a dense operator on `n` sites across the cut after `cut` sites.
pub fn operator_schmidt_rank(op: &DenseTensor, n: usize, d: usize, cut: usize, tol: f64) -> Result<usize> {
    if cut == 0 || cut >= n {
        return Ok(1);
    }
    let dl = d.pow(cut as u32);
    let dr = d.pow((n - cut) as u32);
    if op.rows() != dl * dr || op.cols() != dl * dr {
        return Err(Error::Dimension("operator does not match the chain".into()));
    }
    let t = op.clone().reshape(&[dl, dr, dl, dr])?.permute(&[0, 2, 1, 3])?.reshape(&[dl * dl, dr * dr])?;
    let (_, s, _) = thin_svd(t.as_mat());
    let top = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x > tol * top.max(1e-300)).count())
}

/// Schmidt rank of a dense vector across the cut after `cut` sites.
pub fn vector_schmidt_rank(v: &[C64], n: usize, d: usize, cut: usize, tol: f64) -> usize {
    if cut == 0 || cut >= n {
        return 1;
    }
    let dl = d.pow(cut as u32);
    let m = mat_view(v, dl, v.len() / dl);
    let (_, s, _) = thin_svd(m);
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&x| x > tol * top.max(1e-300)).count()
}

/// `(1 ⊗ S ⊗ 1)`-extension of a region subspace as a dense subspace of the chain.
pub fn extend(s: &DenseSubspace, region: &Region, n: usize, d: usize) -> Result<DenseSubspace> {
    let left = d.pow((region.start - 1) as u32);
    let right = d.pow((n - region.end) as u32);
    let dim = left * s.ambient_dim() * right;
    if dim.saturating_mul(s.dim() * left * right) > crate::mps::MAX_DENSE_ENTRIES {
        return Err(Error::Unavailable("extended subspace too large".into()));
    }
    let b = DenseTensor::identity(left).kron(s.basis()).kron(&DenseTensor::identity(right));
    Ok(DenseSubspace { ambient: dim, basis: b })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_model, ModelParams};
    use crate::tensor::{haar_isometry, seeded_rng};

    fn no_params() -> ModelParams {
        ModelParams::new()
    }

    #[test]
    fn pinned_spectra() {
        let lim = DenseLimits::default();
        let (v, _) = exact_spectrum(&build_model("pinned", 2, &no_params()).unwrap(), &lim).unwrap();
        assert!(v.iter().zip([0.0, 1.0, 1.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let (v, _) = exact_spectrum(&build_model("pinned", 4, &no_params()).unwrap(), &lim).unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_free_application_matches_dense() {
        let mut p = ModelParams::new();
        p.insert("g".into(), "1.5".into());
        let h = build_model("tfi", 6, &p).unwrap();
        let dense = h.to_dense().unwrap();
        let mut rng = seeded_rng(3);
        let v: Vec<C64> = (0..64).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let a = apply_hamiltonian(&h, &v);
        let b = dense.matmul(&DenseTensor::new(vec![64, 1], v).unwrap()).unwrap();
        assert!(a.iter().zip(b.entries()).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    #[test]
    fn krylov_agrees_with_dense() {
        let h = build_model("heisenberg", 8, &no_params()).unwrap();
        let (dense_vals, _) = exact_spectrum(&h, &DenseLimits::default()).unwrap();
        let tiny = DenseLimits { state: 1 << 14, operator: 16 };
        let (vals, vecs) = lowest_eigenpairs(&h, 4, &tiny).unwrap();
        for (a, b) in vals.iter().zip(&dense_vals) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for c in 0..4 {
            let col: Vec<C64> = (0..256).map(|r| vecs.get(&[r, c])).collect();
            let hv = apply_hamiltonian(&h, &col);
            let res: f64 = hv.iter().zip(&col).map(|(x, y)| (x - y * vals[c]).norm_sqr()).sum::<f64>().sqrt();
            assert!(res < 1e-8);
        }
    }

    #[test]
    fn aklt_ground_space_is_fourfold() {
        let h = build_model("aklt", 6, &no_params()).unwrap();
        let sub = spectral_subspace(&h, -1.0, 0.1, &DenseLimits::default()).unwrap();
        assert_eq!(sub.dim(), 4);
        let pinned = build_model("pinned", 4, &no_params()).unwrap();
        let g = spectral_subspace(&pinned, 0.0, 0.5, &DenseLimits::default()).unwrap();
        assert_eq!(g.dim(), 1);
        assert!((g.basis().get(&[0, 0]).norm() - 1.0).abs() < 1e-12);
        let full = spectral_subspace(&pinned, -1.0, 100.0, &DenseLimits::default()).unwrap();
        assert_eq!(full.dim(), 16);
        let none = spectral_subspace(&pinned, 0.2, 0.3, &DenseLimits::default()).unwrap();
        assert_eq!(none.dim(), 0);
    }

    #[test]
    fn over_limit_is_unavailable() {
        let h = build_model("pinned", 16, &no_params()).unwrap();
        assert!(matches!(exact_spectrum(&h, &DenseLimits::default()), Err(Error::Unavailable(_))));
    }

    #[test]
    fn viability_extremes() {
        let region = Region::new(1, 2).unwrap();
        let t = DenseSubspace::span(&haar_isometry(16, 2, 1).unwrap(), 1e-12).unwrap();
        assert!(viability(&DenseSubspace::full(4), &region, 4, 2, &t).unwrap().abs() < 1e-12);
        // T inside span{|00⟩} ⊗ H_rest, S = complement of |00⟩
        let t = DenseSubspace::span(&DenseTensor::matrix_from_fn(16, 1, |r, _| C64::new(if r == 3 { 1.0 } else { 0.0 }, 0.0)), 1e-12).unwrap();
        let s = DenseSubspace::span(&DenseTensor::matrix_from_fn(4, 3, |r, c| C64::new(if r == c + 1 { 1.0 } else { 0.0 }, 0.0)), 1e-12).unwrap();
        assert!((viability(&s, &region, 4, 2, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn viability_matches_extended_projector() {
        let region = Region::new(2, 4).unwrap();
        let s = DenseSubspace::span(&haar_isometry(8, 3, 5).unwrap(), 1e-12).unwrap();
        let t = DenseSubspace::span(&haar_isometry(64, 2, 6).unwrap(), 1e-12).unwrap();
        let ext = extend(&s, &region, 6, 2).unwrap();
        let pt = t.basis();
        let m = pt.adjoint().matmul(&ext.projector()).unwrap().matmul(pt).unwrap();
        let (vals, _) = eigh(&m).unwrap();
        assert!((viability(&s, &region, 6, 2, &t).unwrap() - (1.0 - vals[0])).abs() < 1e-10);
    }

    #[test]
    fn closeness_of_rotated_plane() {
        let theta: f64 = 0.3;
        let a = DenseTensor::matrix_from_fn(4, 2, |r, c| C64::new(if r == c { 1.0 } else { 0.0 }, 0.0));
        let b = DenseTensor::matrix_from_fn(4, 2, |r, c| {
            let v = match (r, c) {
                (0, 0) => theta.cos(),
                (2, 0) => theta.sin(),
                (1, 1) => 1.0,
                _ => 0.0,
            };
            C64::new(v, 0.0)
        });
        let (ta, tb) = (DenseSubspace::new(a).unwrap(), DenseSubspace::new(b).unwrap());
        let m = mutual_closeness(&ta, &tb).unwrap();
        assert!((m - (1.0 - theta.cos().powi(2))).abs() < 1e-10);
        assert!(mutual_closeness(&ta, &ta).unwrap() < 1e-12);
        let c = DenseTensor::matrix_from_fn(4, 2, |r, c| C64::new(if r == c + 2 { 1.0 } else { 0.0 }, 0.0));
        assert!((mutual_closeness(&ta, &DenseSubspace::new(c).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closeness_chain_rule_on_random_triples() {
        for seed in 0..20u64 {
            let mk = |s: u64| DenseSubspace::new(haar_isometry(8, 2, s).unwrap()).unwrap();
            let (a, b, c) = (mk(3 * seed), mk(3 * seed + 1), mk(3 * seed + 2));
            let d1 = closeness(&a, &b).unwrap();
            let d2 = closeness(&b, &c).unwrap();
            assert!(closeness(&a, &c).unwrap() <= 2.0 * (d1 + d2) + 1e-6);
        }
    }

    #[test]
    fn schmidt_ranks() {
        let mut v = vec![C64::new(0.0, 0.0); 16];
        v[0] = C64::new(1.0, 0.0);
        v[15] = C64::new(1.0, 0.0);
        assert_eq!(vector_schmidt_rank(&v, 4, 2, 2, 1e-12), 2);
        let h = build_model("pinned", 4, &no_params()).unwrap().to_dense().unwrap();
        assert!(operator_schmidt_rank(&h, 4, 2, 2, 1e-12).unwrap() <= 6);
    }
}
