//! Matrix product states and operators, the shared-chain state family used
//! for whole bases, and the sweeps behind compression, spanning and trimming.
//!
//! Site tensors of a state are `(left, physical, right)`; operator tensors are
//! `(left, out, in, right)`. Sites are indexed from 0 and cut `c` separates
//! sites `0..c` from `c..n`.

use crate::error::{Error, Result};
use crate::tensor::{contract, mat_view, random_gaussian, thin_qr, thin_svd, to_row_major, DenseTensor, SeededRng, C64};
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Relative singular-value floor treated as exact zero.
pub const NUMERICAL_ZERO: f64 = 1e-14;

/// Largest dense operator (entries) any conversion will materialize.
pub const MAX_DENSE_ENTRIES: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_bond: usize,
    /// Absolute floor on kept singular values.
    pub cutoff: f64,
    /// Floor relative to the largest singular value at the cut.
    pub rel_cutoff: f64,
}

impl Truncation {
    pub fn exact() -> Self {
        Self { max_bond: usize::MAX, cutoff: 0.0, rel_cutoff: NUMERICAL_ZERO }
    }

    pub fn new(max_bond: usize, cutoff: f64) -> Self {
        Self { max_bond, cutoff, rel_cutoff: NUMERICAL_ZERO }
    }

    pub fn relative(max_bond: usize, rel_cutoff: f64) -> Self {
        Self { max_bond, cutoff: 0.0, rel_cutoff: rel_cutoff.max(NUMERICAL_ZERO) }
    }

    fn keep(&self, s: &[f64]) -> usize {
        let top = s.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 1;
        }
        let floor = self.cutoff.max(self.rel_cutoff * top);
        let above = s.iter().take_while(|&&x| x >= floor && x > 0.0).count();
        above.min(self.max_bond).max(1)
    }
}

fn dims3(t: &DenseTensor) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}

fn validate_chain(sites: &[DenseTensor], rank: usize, closed_left: bool, closed_right: bool) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::Dimension("chain with no sites".into()));
    }
    for (j, t) in sites.iter().enumerate() {
        if t.rank() != rank {
            return Err(Error::Dimension(format!("site {j} has rank {}, expected {rank}", t.rank())));
        }
        if j + 1 < sites.len() && t.shape()[rank - 1] != sites[j + 1].shape()[0] {
            return Err(Error::Dimension(format!("bond mismatch between sites {j} and {}", j + 1)));
        }
    }
    if closed_left && sites[0].shape()[0] != 1 {
        return Err(Error::Dimension("left boundary bond must have extent 1".into()));
    }
    if closed_right && sites[sites.len() - 1].shape()[rank - 1] != 1 {
        return Err(Error::Dimension("right boundary bond must have extent 1".into()));
    }
    Ok(())
}

/// Makes sites `stop+1..` right-isometries, pushing the remainder into `stop`.
fn right_orthonormalize(sites: &mut [DenseTensor], stop: usize) {
    for j in (stop + 1..sites.len()).rev() {
        let (l, d, r) = dims3(&sites[j]);
        let m = mat_view(sites[j].entries(), l, d * r);
        let (q, rr) = thin_qr(m.adjoint().to_owned().as_ref());
        let k = q.ncols();
        sites[j] = DenseTensor::from_parts(vec![k, d, r], to_row_major(q.adjoint().to_owned().as_ref()));
        let (pl, pd, pr) = dims3(&sites[j - 1]);
        let next = mat_view(sites[j - 1].entries(), pl * pd, pr) * rr.adjoint();
        sites[j - 1] = DenseTensor::from_parts(vec![pl, pd, k], to_row_major(next.as_ref()));
    }
}

/// Makes sites `..stop` left-isometries, pushing the remainder into `stop`.
fn left_orthonormalize(sites: &mut [DenseTensor], stop: usize) {
    for j in 0..stop {
        let (l, d, r) = dims3(&sites[j]);
        let (q, rr) = thin_qr(mat_view(sites[j].entries(), l * d, r));
        let k = q.ncols();
        sites[j] = DenseTensor::from_parts(vec![l, d, k], to_row_major(q.as_ref()));
        let (_, nd, nr) = dims3(&sites[j + 1]);
        let next = rr.as_ref() * mat_view(sites[j + 1].entries(), r, nd * nr);
        sites[j + 1] = DenseTensor::from_parts(vec![k, nd, nr], to_row_major(next.as_ref()));
    }
}

/// Result of a left-to-right truncating sweep over a chain whose left
/// boundary leg is folded into the right boundary leg.
struct Sweep {
    /// Left-isometric tensors for all sites but the last.
    sites: Vec<DenseTensor>,
    /// Last-site coefficients, rows `(bond, physical)`, columns `(left leg, right leg)`.
    theta: Mat<C64>,
    last_bond: usize,
    last_phys: usize,
    discarded: Vec<f64>,
    schmidt: Vec<Vec<f64>>,
}

fn sweep(mut sites: Vec<DenseTensor>, trunc: &Truncation) -> Sweep {
    let n = sites.len();
    right_orthonormalize(&mut sites, 0);
    let alpha = sites[0].shape()[0];
    let mut r = 1usize;
    let mut carry = Mat::<C64>::identity(alpha, alpha);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    let mut discarded = Vec::with_capacity(n.saturating_sub(1));
    let mut schmidt = Vec::with_capacity(n.saturating_sub(1));
    for (j, t) in sites.iter().enumerate() {
        let (chi, d, chi2) = dims3(t);
        let prod = carry.as_ref() * mat_view(t.entries(), chi, d * chi2);
        let theta = Mat::from_fn(r * d, alpha * chi2, |row, col| {
            let (ri, di) = (row / d, row % d);
            let (ai, ci) = (col / chi2, col % chi2);
            prod[(ri * alpha + ai, di * chi2 + ci)]
        });
        if j + 1 == n {
            return Sweep { sites: out, theta, last_bond: r, last_phys: d, discarded, schmidt };
        }
        let (u, s, v) = thin_svd(theta.as_ref());
        let keep = trunc.keep(&s);
        discarded.push(s[keep..].iter().map(|x| x * x).sum());
        schmidt.push(s[..keep].to_vec());
        out.push(DenseTensor::from_parts(vec![r, d, keep], to_row_major(u.as_ref().subcols(0, keep))));
        carry = Mat::from_fn(keep * alpha, chi2, |row, col| {
            let (ki, ai) = (row / alpha, row % alpha);
            v[(ai * chi2 + col, ki)].conj() * s[ki]
        });
        r = keep;
    }
    unreachable!("sweep over an empty chain")
}

// ---------------------------------------------------------------------------
// States

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain")]
pub struct MatrixProductState {
    site_tensors: Vec<DenseTensor>,
    canonical_center: Option<usize>,
}

#[derive(Deserialize)]
struct RawChain {
    site_tensors: Vec<DenseTensor>,
    #[serde(default)]
    canonical_center: Option<usize>,
}

impl TryFrom<RawChain> for MatrixProductState {
    type Error = Error;
    fn try_from(raw: RawChain) -> Result<Self> {
        let mut m = MatrixProductState::new(raw.site_tensors)?;
        if let Some(c) = raw.canonical_center {
            m = m.canonicalize(c)?;
        }
        Ok(m)
    }
}

impl MatrixProductState {
    pub fn new(site_tensors: Vec<DenseTensor>) -> Result<Self> {
        validate_chain(&site_tensors, 3, true, true)?;
        Ok(Self { site_tensors, canonical_center: None })
    }

    pub(crate) fn from_sites_unchecked(site_tensors: Vec<DenseTensor>, canonical_center: Option<usize>) -> Self {
        Self { site_tensors, canonical_center }
    }

    pub fn product_state(d: usize, levels: &[usize]) -> Result<Self> {
        let sites = levels
            .iter()
            .map(|&k| {
                if k >= d {
                    return Err(Error::Dimension(format!("level {k} out of range for d={d}")));
                }
                let mut t = DenseTensor::zeros(&[1, d, 1]);
                t.entries_mut()[k] = C64::new(1.0, 0.0);
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sites)
    }

    /// Product of arbitrary single-site vectors.
    pub fn product_of(vectors: &[Vec<C64>]) -> Result<Self> {
        let sites = vectors
            .iter()
            .map(|v| DenseTensor::new(vec![1, v.len(), 1], v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sites)
    }

    /// Random state with the given bond cap, normalized.
    pub fn random(n: usize, d: usize, bond: usize, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || d == 0 || bond == 0 {
            return Err(Error::Dimension("random state needs positive n, d, bond".into()));
        }
        let cap = |c: usize| -> usize {
            let left = (d as f64).powi(c as i32);
            let right = (d as f64).powi((n - c) as i32);
            (bond as f64).min(left).min(right) as usize
        };
        let sites = (0..n)
            .map(|j| random_gaussian(&[cap(j).max(1), d, cap(j + 1).max(1)], rng))
            .collect();
        let m = Self::new(sites)?;
        let norm = m.norm();
        Ok(m.scale(C64::new(1.0 / norm, 0.0)))
    }

    /// Exact MPS of a dense vector on `n` sites of dimension `d`.
    pub fn from_dense(vector: &[C64], n: usize, d: usize) -> Result<Self> {
        let total = d.checked_pow(n as u32).ok_or_else(|| Error::Resource("d^n overflows".into()))?;
        if vector.len() != total {
            return Err(Error::Dimension(format!("vector length {} is not {d}^{n}", vector.len())));
        }
        if n == 1 {
            return Self::new(vec![DenseTensor::new(vec![1, d, 1], vector.to_vec())?]);
        }
        let sites = exact_chain_from_vector(vector, &vec![d; n])?;
        Ok(Self { site_tensors: sites, canonical_center: Some(n - 1) })
    }

    pub fn site_tensors(&self) -> &[DenseTensor] {
        &self.site_tensors
    }

    pub fn into_site_tensors(self) -> Vec<DenseTensor> {
        self.site_tensors
    }

    pub fn canonical_center(&self) -> Option<usize> {
        self.canonical_center
    }

    pub fn len(&self) -> usize {
        self.site_tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_tensors.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.site_tensors.iter().map(|t| t.shape()[1]).collect()
    }

    /// Bond extents at the internal cuts `1..n`.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.site_tensors[..self.len() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut sites = self.site_tensors.clone();
        let k = self.canonical_center.unwrap_or(0);
        sites[k] = sites[k].scale(c);
        Self { site_tensors: sites, canonical_center: self.canonical_center }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.phys_dims() != other.phys_dims() {
            return Err(Error::Dimension("inner product of states on different chains".into()));
        }
        let mut env = Mat::<C64>::identity(1, 1);
        for (a, b) in self.site_tensors.iter().zip(&other.site_tensors) {
            env = transfer(env, a, b);
        }
        Ok(env[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let total: usize = self.phys_dims().iter().product();
        if total > MAX_DENSE_ENTRIES {
            return Err(Error::Resource(format!("dense state of {total} amplitudes")));
        }
        let mut acc = self.site_tensors[0].clone().reshaped(&[self.site_tensors[0].shape()[1], self.site_tensors[0].shape()[2]]);
        for t in &self.site_tensors[1..] {
            let (l, d, r) = dims3(t);
            let rows = acc.shape()[0];
            let m = acc.as_mat() * mat_view(t.entries(), l, d * r);
            acc = DenseTensor::from_parts(vec![rows * d, r], to_row_major(m.as_ref()));
        }
        Ok(acc.into_entries())
    }

    pub fn canonicalize(&self, center: usize) -> Result<Self> {
        if center >= self.len() {
            return Err(Error::Dimension(format!("center {center} outside {} sites", self.len())));
        }
        let mut sites = self.site_tensors.clone();
        left_orthonormalize(&mut sites, center);
        right_orthonormalize(&mut sites, center);
        Ok(Self { site_tensors: sites, canonical_center: Some(center) })
    }

    /// Sweep compression; the returned bound is the exact ℓ₂ distance of the
    /// sequence of orthogonal projections performed.
    pub fn compress(&self, max_bond: usize, cutoff: f64) -> Result<(Self, f64)> {
        if max_bond < 1 {
            return Err(Error::Parameter("max_bond must be at least 1".into()));
        }
        Ok(self.compress_with(&Truncation::new(max_bond, cutoff)))
    }

    pub(crate) fn compress_with(&self, trunc: &Truncation) -> (Self, f64) {
        let n = self.len();
        let sw = sweep(self.site_tensors.clone(), trunc);
        let mut sites = sw.sites;
        sites.push(DenseTensor::from_parts(vec![sw.last_bond, sw.last_phys, 1], to_row_major(sw.theta.as_ref())));
        let err = sw.discarded.iter().sum::<f64>().sqrt();
        (Self { site_tensors: sites, canonical_center: Some(n - 1) }, err)
    }

    /// Schmidt coefficients at every internal cut.
    pub fn schmidt_values(&self) -> Vec<Vec<f64>> {
        sweep(self.site_tensors.clone(), &Truncation::exact()).schmidt
    }

    /// Von Neumann entropies (natural log) of the normalized state at every cut.
    pub fn entanglement_entropies(&self) -> Vec<f64> {
        self.schmidt_values().iter().map(|s| entropy(s)).collect()
    }
}

pub(crate) fn entropy(s: &[f64]) -> f64 {
    let tot: f64 = s.iter().map(|x| x * x).sum();
    if tot <= 0.0 {
        return 0.0;
    }
    s.iter()
        .map(|x| x * x / tot)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// One step of `⟨a|b⟩` contraction: `env` is `(bra bond) × (ket bond)`.
fn transfer(env: Mat<C64>, a: &DenseTensor, b: &DenseTensor) -> Mat<C64> {
    let (la, d, ra) = dims3(a);
    let (lb, _, rb) = dims3(b);
    let eb = env.as_ref() * mat_view(b.entries(), lb, d * rb);
    let ma = mat_view(a.entries(), la * d, ra);
    let mut out = Mat::<C64>::zeros(ra, rb);
    // out = Σ_{l,p} conj(a[l,p,:])ᵀ · eb[l, p, :]
    let ebr = Mat::from_fn(la * d, rb, |row, col| eb[(row / d, (row % d) * rb + col)]);
    out += ma.adjoint() * ebr.as_ref();
    out
}

// ---------------------------------------------------------------------------
// Operators

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOperator")]
pub struct MatrixProductOperator {
    site_tensors: Vec<DenseTensor>,
}

#[derive(Deserialize)]
struct RawOperator {
    site_tensors: Vec<DenseTensor>,
}

impl TryFrom<RawOperator> for MatrixProductOperator {
    type Error = Error;
    fn try_from(raw: RawOperator) -> Result<Self> {
        MatrixProductOperator::new(raw.site_tensors)
    }
}

impl MatrixProductOperator {
    pub fn new(site_tensors: Vec<DenseTensor>) -> Result<Self> {
        validate_chain(&site_tensors, 4, true, true)?;
        for (j, t) in site_tensors.iter().enumerate() {
            if t.shape()[1] != t.shape()[2] {
                return Err(Error::Dimension(format!("site {j} is not square in its physical legs")));
            }
        }
        Ok(Self { site_tensors })
    }

    pub(crate) fn from_sites_unchecked(site_tensors: Vec<DenseTensor>) -> Self {
        Self { site_tensors }
    }

    pub fn identity(dims: &[usize]) -> Self {
        let sites = dims
            .iter()
            .map(|&d| DenseTensor::identity(d).reshaped(&[1, d, d, 1]))
            .collect();
        Self { site_tensors: sites }
    }

    pub fn zero(dims: &[usize]) -> Self {
        let sites = dims.iter().map(|&d| DenseTensor::zeros(&[1, d, d, 1])).collect();
        Self { site_tensors: sites }
    }

    /// Product operator `⊗_j ops[j]`.
    pub fn product_of(ops: &[DenseTensor]) -> Result<Self> {
        let sites = ops
            .iter()
            .map(|o| {
                let d = o.rows();
                o.clone().reshape(&[1, d, d, 1])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sites)
    }

    /// Exact MPO of a dense operator on `dims.len()` sites.
    pub fn from_dense(op: &DenseTensor, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if op.rank() != 2 || op.rows() != total || op.cols() != total {
            return Err(Error::Dimension("dense operator does not match site dimensions".into()));
        }
        let n = dims.len();
        let mut shape: Vec<usize> = dims.to_vec();
        shape.extend_from_slice(dims);
        let t = op.clone().reshaped(&shape);
        let mut axes = Vec::with_capacity(2 * n);
        for j in 0..n {
            axes.push(j);
            axes.push(n + j);
        }
        let interleaved = t.permuted(&axes);
        let sq: Vec<usize> = dims.iter().map(|d| d * d).collect();
        let sites = exact_chain_from_vector(interleaved.entries(), &sq)?;
        let sites = sites
            .into_iter()
            .zip(dims)
            .map(|(s, &d)| {
                let (l, _, r) = dims3(&s);
                s.reshaped(&[l, d, d, r])
            })
            .collect();
        Ok(Self { site_tensors: sites })
    }

    pub fn site_tensors(&self) -> &[DenseTensor] {
        &self.site_tensors
    }

    pub fn len(&self) -> usize {
        self.site_tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_tensors.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.site_tensors.iter().map(|t| t.shape()[1]).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.site_tensors[..self.len() - 1].iter().map(|t| t.shape()[3]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut sites = self.site_tensors.clone();
        sites[0] = sites[0].scale(c);
        Self { site_tensors: sites }
    }

    /// Block-diagonal sum `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.phys_dims() != other.phys_dims() {
            return Err(Error::Dimension("sum of operators on different chains".into()));
        }
        let n = self.len();
        if n == 1 {
            let s = self.site_tensors[0].add(&other.site_tensors[0])?;
            return Ok(Self { site_tensors: vec![s] });
        }
        let sites = (0..n)
            .map(|j| {
                let a = &self.site_tensors[j];
                let b = &other.site_tensors[j];
                let (al, d, _, ar) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
                let (bl, br) = (b.shape()[0], b.shape()[3]);
                let (l, r) = match j {
                    0 => (1, ar + br),
                    _ if j + 1 == n => (al + bl, 1),
                    _ => (al + bl, ar + br),
                };
                let mut t = DenseTensor::zeros(&[l, d, d, r]);
                let dd = d * d;
                let e = t.entries_mut();
                for x in 0..al {
                    for p in 0..dd {
                        for y in 0..ar {
                            e[(x * dd + p) * r + y] = a.entries()[(x * dd + p) * ar + y];
                        }
                    }
                }
                let (ox, oy) = match j {
                    0 => (0, ar),
                    _ if j + 1 == n => (al, 0),
                    _ => (al, ar),
                };
                for x in 0..bl {
                    for p in 0..dd {
                        for y in 0..br {
                            e[((x + ox) * dd + p) * r + y + oy] = b.entries()[(x * dd + p) * br + y];
                        }
                    }
                }
                t
            })
            .collect();
        Ok(Self { site_tensors: sites })
    }

    pub fn add_scaled_identity(&self, c: C64) -> Result<Self> {
        self.add(&Self::identity(&self.phys_dims()).scale(c))
    }

    /// Operator product `self · other` (other acts first).
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.phys_dims() != other.phys_dims() {
            return Err(Error::Dimension("product of operators on different chains".into()));
        }
        let sites = self
            .site_tensors
            .iter()
            .zip(&other.site_tensors)
            .map(|(a, b)| {
                let (al, d, _, ar) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
                let (bl, br) = (b.shape()[0], b.shape()[3]);
                // (al, o, ar) x (bl, i, br) after contracting the middle leg
                let c = contract(a, b, &[(2, 1)]).expect("matching legs");
                c.permuted(&[0, 3, 1, 4, 2, 5]).reshaped(&[al * bl, d, d, ar * br])
            })
            .collect();
        Ok(Self { site_tensors: sites })
    }

    /// `self · other` truncated site by site while it is formed (zip-up),
    /// followed by a cleaning compression. Returns the product and an estimate
    /// of the Frobenius error.
    pub fn compose_compressed(&self, other: &Self, trunc: &Truncation) -> Result<(Self, f64)> {
        if self.phys_dims() != other.phys_dims() {
            return Err(Error::Dimension("product of operators on different chains".into()));
        }
        let n = self.len();
        let mut right: Vec<DenseTensor> = other
            .site_tensors
            .iter()
            .map(|t| {
                let s = t.shape();
                t.clone().reshaped(&[s[0], s[1] * s[2], s[3]])
            })
            .collect();
        right_orthonormalize(&mut right, 0);
        let loose = Truncation { max_bond: trunc.max_bond.saturating_mul(2), cutoff: trunc.cutoff * 0.1, rel_cutoff: (trunc.rel_cutoff * 0.1).max(NUMERICAL_ZERO) };
        // carry: (k, a, b)
        let mut carry = DenseTensor::from_parts(vec![1, 1, 1], vec![C64::new(1.0, 0.0)]);
        let mut sites = Vec::with_capacity(n);
        let mut discarded = 0.0;
        for j in 0..n {
            let a = &self.site_tensors[j];
            let d = a.shape()[1];
            let bs = right[j].shape().to_vec();
            let b = right[j].clone().reshaped(&[bs[0], d, d, bs[2]]);
            let x = contract(&carry, a, &[(1, 0)])?; // (k, b, o, m, a')
            let y = contract(&x, &b, &[(1, 0), (3, 1)])?; // (k, o, a', i, b')
            let k = y.shape()[0];
            let (ar, br) = (y.shape()[2], y.shape()[4]);
            let theta = y.permuted(&[0, 1, 3, 2, 4]).reshaped(&[k * d * d, ar * br]);
            if j + 1 == n {
                sites.push(theta.reshaped(&[k, d, d, 1]));
                break;
            }
            let (u, s, v) = thin_svd(theta.as_mat());
            let keep = loose.keep(&s);
            discarded += s[keep..].iter().map(|x| x * x).sum::<f64>();
            sites.push(DenseTensor::from_parts(vec![k, d, d, keep], to_row_major(u.as_ref().subcols(0, keep))));
            let c = Mat::from_fn(keep, ar * br, |row, col| v[(col, row)].conj() * s[row]);
            carry = DenseTensor::from_parts(vec![keep, ar, br], to_row_major(c.as_ref()));
        }
        let (out, err) = Self { site_tensors: sites }.compress(trunc);
        Ok((out, err + discarded.sqrt()))
    }

    /// Operator-Frobenius compression; returns the Frobenius norm of the
    /// discarded part.
    pub fn compress(&self, trunc: &Truncation) -> (Self, f64) {
        let n = self.len();
        let flat: Vec<DenseTensor> = self
            .site_tensors
            .iter()
            .map(|t| {
                let s = t.shape();
                t.clone().reshaped(&[s[0], s[1] * s[2], s[3]])
            })
            .collect();
        let sw = sweep(flat, trunc);
        let dims = self.phys_dims();
        let mut sites: Vec<DenseTensor> = sw
            .sites
            .into_iter()
            .zip(&dims)
            .map(|(t, &d)| {
                let (l, _, r) = dims3(&t);
                t.reshaped(&[l, d, d, r])
            })
            .collect();
        let d = dims[n - 1];
        sites.push(DenseTensor::from_parts(vec![sw.last_bond, d, d, 1], to_row_major(sw.theta.as_ref())));
        (Self { site_tensors: sites }, sw.discarded.iter().sum::<f64>().sqrt())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let flat: Vec<DenseTensor> = self
            .site_tensors
            .iter()
            .map(|t| {
                let s = t.shape();
                t.clone().reshaped(&[s[0], s[1] * s[2], s[3]])
            })
            .collect();
        MatrixProductState::from_sites_unchecked(flat, None).norm()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let total: usize = self.phys_dims().iter().product();
        if total.saturating_mul(total) > MAX_DENSE_ENTRIES {
            return Err(Error::Resource(format!("dense operator of dimension {total}")));
        }
        // acc: (out, in, bond)
        let first = &self.site_tensors[0];
        let (_, d0, _, r0) = (first.shape()[0], first.shape()[1], first.shape()[2], first.shape()[3]);
        let mut acc = first.clone().reshaped(&[d0, d0, r0]);
        let mut dim = d0;
        for t in &self.site_tensors[1..] {
            let (d, r) = (t.shape()[1], t.shape()[3]);
            let c = contract(&acc, t, &[(2, 0)]).expect("bond match");
            // (O, I, o, i, r) -> (O, o, I, i, r)
            acc = c.permuted(&[0, 2, 1, 3, 4]).reshaped(&[dim * d, dim * d, r]);
            dim *= d;
        }
        Ok(acc.reshaped(&[dim, dim]))
    }

    /// Hermitian conjugate.
    pub fn adjoint(&self) -> Self {
        let sites = self
            .site_tensors
            .iter()
            .map(|t| {
                let p = t.permuted(&[0, 2, 1, 3]);
                let s = p.shape().to_vec();
                DenseTensor::from_parts(s, p.entries().iter().map(|z| z.conj()).collect())
            })
            .collect();
        Self { site_tensors: sites }
    }

    /// `1 ⊗ self ⊗ 1` with identity factors on the given extra sites.
    pub fn embedded(&self, left_dims: &[usize], right_dims: &[usize]) -> Self {
        let mut sites: Vec<DenseTensor> = left_dims.iter().map(|&d| DenseTensor::identity(d).reshaped(&[1, d, d, 1])).collect();
        sites.extend(self.site_tensors.iter().cloned());
        sites.extend(right_dims.iter().map(|&d| DenseTensor::identity(d).reshaped(&[1, d, d, 1])));
        Self { site_tensors: sites }
    }

    /// Sites `start..end` as an operator with open boundary legs.
    pub fn segment(&self, start: usize, end: usize) -> OpenOperator {
        OpenOperator { site_tensors: self.site_tensors[start..end].to_vec() }
    }

    /// The same operator in a gauge where every site left of `start` is a left
    /// isometry and every site from `end` on is a right isometry.
    pub fn weighted_gauge(&self, start: usize, end: usize) -> Self {
        let dims = self.phys_dims();
        let mut flat: Vec<DenseTensor> = self
            .site_tensors
            .iter()
            .map(|t| {
                let s = t.shape();
                t.clone().reshaped(&[s[0], s[1] * s[2], s[3]])
            })
            .collect();
        left_orthonormalize(&mut flat, start);
        right_orthonormalize(&mut flat, end - 1);
        let site_tensors = flat
            .into_iter()
            .zip(dims)
            .map(|(t, d)| {
                let (l, _, r) = dims3(&t);
                t.reshaped(&[l, d, d, r])
            })
            .collect();
        MatrixProductOperator { site_tensors }
    }

    /// Sites `start..end` of [`Self::weighted_gauge`], whose slices carry the
    /// operator's Schmidt weights.
    pub fn weighted_segment(&self, start: usize, end: usize) -> OpenOperator {
        self.weighted_gauge(start, end).segment(start, end)
    }
}

fn exact_chain_from_vector(vector: &[C64], dims: &[usize]) -> Result<Vec<DenseTensor>> {
    let n = dims.len();
    let mut sites = Vec::with_capacity(n);
    let mut rest = vector.to_vec();
    let mut r = 1usize;
    for &d in &dims[..n - 1] {
        let cols = rest.len() / (r * d);
        let (u, s, v) = thin_svd(mat_view(&rest, r * d, cols));
        let keep = Truncation::exact().keep(&s);
        sites.push(DenseTensor::from_parts(vec![r, d, keep], to_row_major(u.as_ref().subcols(0, keep))));
        let sv = Mat::from_fn(keep, cols, |a, b| v[(b, a)].conj() * s[a]);
        rest = to_row_major(sv.as_ref());
        r = keep;
    }
    sites.push(DenseTensor::from_parts(vec![r, dims[n - 1], 1], rest));
    Ok(sites)
}

/// A run of operator site tensors whose boundary bonds stay open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenOperator {
    site_tensors: Vec<DenseTensor>,
}

impl OpenOperator {
    pub fn site_tensors(&self) -> &[DenseTensor] {
        &self.site_tensors
    }

    pub fn left_dim(&self) -> usize {
        self.site_tensors[0].shape()[0]
    }

    pub fn right_dim(&self) -> usize {
        self.site_tensors[self.site_tensors.len() - 1].shape()[3]
    }

    pub fn len(&self) -> usize {
        self.site_tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_tensors.is_empty()
    }

    /// The closed operator with boundary legs fixed to `(alpha, beta)`.
    pub fn slice(&self, alpha: usize, beta: usize) -> MatrixProductOperator {
        let mut sites = self.site_tensors.clone();
        let n = sites.len();
        let pick_left = |t: &DenseTensor, a: usize| {
            let s = t.shape();
            let block = s[1] * s[2] * s[3];
            DenseTensor::from_parts(vec![1, s[1], s[2], s[3]], t.entries()[a * block..(a + 1) * block].to_vec())
        };
        sites[0] = pick_left(&sites[0], alpha);
        let last = &sites[n - 1];
        let s = last.shape().to_vec();
        let entries = last.entries().chunks(s[3]).map(|row| row[beta]).collect();
        sites[n - 1] = DenseTensor::from_parts(vec![s[0], s[1], s[2], 1], entries);
        MatrixProductOperator { site_tensors: sites }
    }

    /// `Tr(M_α† M_α')` over the left-leg slices, summed over the right leg.
    pub fn left_gram(&self) -> DenseTensor {
        let mut env = DenseTensor::identity(self.right_dim());
        for w in self.site_tensors.iter().rev() {
            let y = contract(w, &env, &[(3, 1)]).expect("bond match");
            env = contract(&w.conj(), &y, &[(1, 1), (2, 2), (3, 3)]).expect("bond match");
        }
        hermitian_part(&env)
    }

    /// `Tr(M_β† M_β')` over the right-leg slices, summed over the left leg.
    pub fn right_gram(&self) -> DenseTensor {
        let mut env = DenseTensor::identity(self.left_dim());
        for w in &self.site_tensors {
            let z = contract(&env, w, &[(1, 0)]).expect("bond match");
            env = contract(&w.conj(), &z, &[(0, 0), (1, 1), (2, 2)]).expect("bond match");
        }
        hermitian_part(&env)
    }

    /// Dense tensor `(alpha, out, in, beta)` for small segments.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let total: usize = self.site_tensors.iter().map(|t| t.shape()[1]).product();
        let (a, b) = (self.left_dim(), self.right_dim());
        if total.saturating_mul(total).saturating_mul(a * b) > MAX_DENSE_ENTRIES {
            return Err(Error::Resource("dense open segment too large".into()));
        }
        let first = &self.site_tensors[0];
        let d0 = first.shape()[1];
        let mut acc = first.clone();
        let mut dim = d0;
        for t in &self.site_tensors[1..] {
            let (d, r) = (t.shape()[1], t.shape()[3]);
            let c = contract(&acc, t, &[(3, 0)]).expect("bond match");
            // (A, O, I, o, i, r) -> (A, O, o, I, i, r)
            acc = c.permuted(&[0, 1, 3, 2, 4, 5]).reshaped(&[a, dim * d, dim * d, r]);
            dim *= d;
        }
        Ok(acc)
    }
}

fn hermitian_part(a: &DenseTensor) -> DenseTensor {
    a.add(&a.adjoint()).expect("square").scale(C64::new(0.5, 0.0))
}

// ---------------------------------------------------------------------------
// Families of states sharing one chain

/// The vectors `|u_i⟩` packaged as one chain `Σ_i |u_i⟩|i⟩`, the index `i`
/// living on the open right boundary leg (and optionally, before folding, on
/// an open left leg as well).
#[derive(Clone, Debug, PartialEq)]
pub struct StateFamily {
    sites: Vec<DenseTensor>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub input_count: usize,
    pub kept: usize,
    pub gram_eigenvalues: Vec<f64>,
    pub discarded_weight: f64,
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub max_bond_after: usize,
    /// √(ℓ·b·s)·ξ evaluated with the `b` supplied to [`TrimReport::with_rank_bound`].
    pub viability_penalty_bound: f64,
    pub discarded_weight_total: f64,
    pub sites: usize,
    pub count: usize,
    pub xi: f64,
    pub bonds_before: Vec<usize>,
    pub bonds_after: Vec<usize>,
}

impl TrimReport {
    pub fn penalty_for(&self, b: usize) -> f64 {
        ((self.sites * b * self.count) as f64).sqrt() * self.xi
    }

    pub fn with_rank_bound(mut self, b: usize) -> Self {
        self.viability_penalty_bound = self.penalty_for(b);
        self
    }
}

impl StateFamily {
    pub fn new(sites: Vec<DenseTensor>) -> Result<Self> {
        validate_chain(&sites, 3, false, false)?;
        Ok(Self { sites })
    }

    pub fn from_state(state: &MatrixProductState) -> Self {
        Self { sites: state.site_tensors.clone() }
    }

    /// Direct sum of the states into one chain with an `m`-dimensional leg.
    pub fn from_states(states: &[MatrixProductState]) -> Result<Self> {
        let m = states.len();
        if m == 0 {
            return Err(Error::Dimension("empty list of states".into()));
        }
        let dims = states[0].phys_dims();
        if states.iter().any(|s| s.phys_dims() != dims) {
            return Err(Error::Dimension("states live on different chains".into()));
        }
        let n = dims.len();
        if n == 1 {
            let d = dims[0];
            let mut t = DenseTensor::zeros(&[1, d, m]);
            for (a, s) in states.iter().enumerate() {
                for p in 0..d {
                    t.entries_mut()[p * m + a] = s.site_tensors[0].entries()[p];
                }
            }
            return Ok(Self { sites: vec![t] });
        }
        let mut sites = Vec::with_capacity(n);
        for j in 0..n {
            let d = dims[j];
            let lefts: Vec<usize> = states.iter().map(|s| s.site_tensors[j].shape()[0]).collect();
            let rights: Vec<usize> = states.iter().map(|s| s.site_tensors[j].shape()[2]).collect();
            let (l, r) = match j {
                0 => (1, rights.iter().sum()),
                _ if j + 1 == n => (lefts.iter().sum(), m),
                _ => (lefts.iter().sum(), rights.iter().sum()),
            };
            let mut t = DenseTensor::zeros(&[l, d, r]);
            let (mut ox, mut oy) = (0usize, 0usize);
            for (a, s) in states.iter().enumerate() {
                let src = &s.site_tensors[j];
                let (sl, _, sr) = dims3(src);
                let (bx, by) = match j {
                    0 => (0, oy),
                    _ if j + 1 == n => (ox, a),
                    _ => (ox, oy),
                };
                let e = t.entries_mut();
                for x in 0..sl {
                    for p in 0..d {
                        for y in 0..sr {
                            e[((x + bx) * d + p) * r + y + by] = src.entries()[(x * d + p) * sr + y];
                        }
                    }
                }
                ox += sl;
                oy += sr;
            }
            sites.push(t);
        }
        Ok(Self { sites })
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|t| t.shape()[1]).collect()
    }

    pub fn left_dim(&self) -> usize {
        self.sites[0].shape()[0]
    }

    pub fn aux_dim(&self) -> usize {
        self.sites[self.sites.len() - 1].shape()[2]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[..self.len() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn member(&self, i: usize) -> Result<MatrixProductState> {
        if self.left_dim() != 1 {
            return Err(Error::Dimension("family still has an open left leg".into()));
        }
        if i >= self.aux_dim() {
            return Err(Error::Dimension(format!("member {i} of {}", self.aux_dim())));
        }
        let mut sites = self.sites.clone();
        let last = sites.pop().expect("non-empty");
        let (l, d, r) = dims3(&last);
        let entries = last.entries().chunks(r).map(|row| row[i]).collect();
        sites.push(DenseTensor::from_parts(vec![l, d, 1], entries));
        Ok(MatrixProductState::from_sites_unchecked(sites, None))
    }

    pub fn members(&self) -> Result<Vec<MatrixProductState>> {
        (0..self.aux_dim()).map(|i| self.member(i)).collect()
    }

    /// Replaces the members by `u'_k = Σ_i u_i c_{ik}` for an `aux × m` matrix.
    pub fn recombine(&self, coeffs: &DenseTensor) -> Result<Self> {
        if coeffs.rank() != 2 || coeffs.rows() != self.aux_dim() {
            return Err(Error::Dimension("coefficient matrix does not match the family".into()));
        }
        let mut sites = self.sites.clone();
        let last = sites.pop().expect("non-empty");
        let (l, d, r) = dims3(&last);
        let m = mat_view(last.entries(), l * d, r) * coeffs.as_mat();
        sites.push(DenseTensor::from_parts(vec![l, d, coeffs.cols()], to_row_major(m.as_ref())));
        Ok(Self { sites })
    }

    /// Family on the concatenated chain whose members are `u_a ⊗ v_b`, indexed `a·|v| + b`.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        if self.left_dim() != 1 || other.left_dim() != 1 {
            return Err(Error::Dimension("tensoring needs closed left legs".into()));
        }
        let s1 = self.aux_dim();
        let mut sites = self.sites.clone();
        for t in &other.sites {
            let (l, d, r) = dims3(t);
            let mut out = DenseTensor::zeros(&[s1 * l, d, s1 * r]);
            let nr = s1 * r;
            let e = out.entries_mut();
            for a in 0..s1 {
                for x in 0..l {
                    for p in 0..d {
                        for y in 0..r {
                            e[((a * l + x) * d + p) * nr + a * r + y] = t.entries()[(x * d + p) * r + y];
                        }
                    }
                }
            }
            sites.push(out);
        }
        Ok(Self { sites })
    }

    /// Exact application of an operator segment with (possibly open) boundary
    /// legs; the operator's left leg joins the family's left leg and its
    /// right leg joins the aux leg (operator index major).
    pub fn apply(&self, op_sites: &[DenseTensor]) -> Result<Self> {
        if op_sites.len() != self.sites.len() {
            return Err(Error::Dimension("operator and family lengths differ".into()));
        }
        let sites = self
            .sites
            .iter()
            .zip(op_sites)
            .map(|(t, w)| {
                let (l, d, r) = dims3(t);
                let (a, o, i, b) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                if i != d {
                    return Err(Error::Dimension("operator input leg does not match".into()));
                }
                let c = contract(w, t, &[(2, 1)])?;
                // (a, o, b, l, r) -> (a, l, o, b, r)
                Ok(c.permuted(&[0, 3, 1, 2, 4]).reshaped(&[a * l, o, b * r]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sites })
    }

    /// As [`StateFamily::apply`], truncating every new bond while the product
    /// is formed (zip-up). Returns the family and the discarded weight.
    pub fn apply_compressed(&self, op_sites: &[DenseTensor], trunc: &Truncation) -> Result<(Self, f64)> {
        if op_sites.len() != self.sites.len() {
            return Err(Error::Dimension("operator and family lengths differ".into()));
        }
        let n = self.sites.len();
        let mut fam = self.sites.clone();
        right_orthonormalize(&mut fam, 0);
        let (a0, l0) = (op_sites[0].shape()[0], fam[0].shape()[0]);
        // carry: (k, operator bond, family bond), starting from the joined left leg
        let mut carry = DenseTensor::zeros(&[a0 * l0, a0, l0]);
        for a in 0..a0 {
            for l in 0..l0 {
                carry.entries_mut()[((a * l0 + l) * a0 + a) * l0 + l] = C64::new(1.0, 0.0);
            }
        }
        let mut sites = Vec::with_capacity(n);
        let mut discarded = 0.0;
        for (j, (t, w)) in fam.iter().zip(op_sites).enumerate() {
            let (_, d, tr) = dims3(t);
            if w.shape()[2] != d {
                return Err(Error::Dimension("operator input leg does not match".into()));
            }
            let o = w.shape()[1];
            let x = contract(&carry, t, &[(2, 0)])?; // (k, b, i, r')
            let y = contract(&x, w, &[(1, 0), (2, 2)])?; // (k, r', o, b')
            let (k, bp) = (y.shape()[0], y.shape()[3]);
            let theta = y.permuted(&[0, 2, 3, 1]).reshaped(&[k * o, bp * tr]);
            if j + 1 == n {
                sites.push(theta.reshaped(&[k, o, bp * tr]));
                break;
            }
            let (u, sv, v) = thin_svd(theta.as_mat());
            let keep = trunc.keep(&sv);
            discarded += sv[keep..].iter().map(|x| x * x).sum::<f64>();
            sites.push(DenseTensor::from_parts(vec![k, o, keep], to_row_major(u.as_ref().subcols(0, keep))));
            let c = Mat::from_fn(keep, bp * tr, |row, col| v[(col, row)].conj() * sv[row]);
            carry = DenseTensor::from_parts(vec![keep, bp, tr], to_row_major(c.as_ref()));
        }
        Ok((Self { sites }, discarded))
    }

    pub fn apply_mpo(&self, op: &MatrixProductOperator) -> Result<Self> {
        self.apply(op.site_tensors())
    }

    /// Orthonormal basis of the span of all members (every value of the left
    /// and right legs), dropping Gram eigenvalues ≤ `gram_tol` and keeping at
    /// most `cap` directions of largest Gram eigenvalue.
    pub fn orthonormalize(&self, trunc: &Truncation, gram_tol: f64, cap: Option<usize>) -> Result<(Self, SpanReport)> {
        self.span_with(trunc, |_| gram_tol, cap)
    }

    /// As [`StateFamily::orthonormalize`] with the Gram threshold taken
    /// relative to the largest Gram eigenvalue.
    pub fn orthonormalize_relative(&self, trunc: &Truncation, rel_tol: f64, cap: Option<usize>) -> Result<(Self, SpanReport)> {
        self.span_with(trunc, |top| rel_tol * top, cap)
    }

    fn span_with(&self, trunc: &Truncation, threshold: impl Fn(f64) -> f64, cap: Option<usize>) -> Result<(Self, SpanReport)> {
        let input_count = self.left_dim() * self.aux_dim();
        let sw = sweep(self.sites.clone(), trunc);
        let (u, s, _) = thin_svd(sw.theta.as_ref());
        let gram: Vec<f64> = s.iter().map(|x| x * x).collect();
        let gram_tol = threshold(gram.first().copied().unwrap_or(0.0));
        let mut kept = gram.iter().take_while(|&&g| g > gram_tol).count();
        let mut capped = false;
        if let Some(c) = cap {
            if kept > c {
                kept = c;
                capped = true;
            }
        }
        if kept == 0 {
            return Err(Error::Numeric("span of the family is numerically empty".into()));
        }
        let mut sites = sw.sites;
        sites.push(DenseTensor::from_parts(
            vec![sw.last_bond, sw.last_phys, kept],
            to_row_major(u.as_ref().subcols(0, kept)),
        ));
        let report = SpanReport {
            input_count,
            kept,
            gram_eigenvalues: gram,
            discarded_weight: sw.discarded.iter().sum(),
            capped,
        };
        Ok((Self { sites }, report))
    }

    /// Collective ξ-trimming of an orthonormal family: at every internal cut,
    /// left to right, keeps the left Schmidt vectors of `Σ_i |u_i⟩|i⟩` with
    /// coefficient at least `xi`. Members are not renormalized.
    pub fn trim(&self, xi: f64) -> Result<(Self, TrimReport)> {
        if self.left_dim() != 1 {
            return Err(Error::Dimension("trimming needs a closed left leg".into()));
        }
        let s = self.aux_dim();
        let g = self.gram();
        let dev = g.sub(&DenseTensor::identity(s))?.entries().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > 1e-6 {
            return Err(Error::Contract(format!("trimming input is not orthonormal (Gram deviation {dev:.2e})")));
        }
        let bonds_before = self.bond_dims();
        let trunc = Truncation { max_bond: usize::MAX, cutoff: xi, rel_cutoff: NUMERICAL_ZERO };
        let sw = sweep(self.sites.clone(), &trunc);
        let mut sites = sw.sites;
        sites.push(DenseTensor::from_parts(vec![sw.last_bond, sw.last_phys, s], to_row_major(sw.theta.as_ref())));
        let out = Self { sites };
        let bonds_after = out.bond_dims();
        let report = TrimReport {
            max_bond_after: bonds_after.iter().copied().max().unwrap_or(1),
            viability_penalty_bound: 0.0,
            discarded_weight_total: sw.discarded.iter().sum(),
            sites: self.len(),
            count: s,
            xi,
            bonds_before,
            bonds_after,
        };
        Ok((out, report))
    }

    /// Schmidt coefficients of `Σ_i |u_i⟩|i⟩` at every internal cut.
    pub fn schmidt_values(&self) -> Vec<Vec<f64>> {
        sweep(self.sites.clone(), &Truncation::exact()).schmidt
    }

    /// `⟨u_a|u_b⟩` as an `aux × aux` matrix.
    pub fn gram(&self) -> DenseTensor {
        Self::cross(self, None, self).expect("same family")
    }

    /// `⟨u_a|O|u_b⟩`.
    pub fn matrix_elements(&self, op: &MatrixProductOperator) -> Result<DenseTensor> {
        Self::cross(self, Some(op), self)
    }

    /// `⟨bra_a|O|ket_b⟩` between two families on the same chain.
    pub fn cross(bra: &Self, op: Option<&MatrixProductOperator>, ket: &Self) -> Result<DenseTensor> {
        if bra.phys_dims() != ket.phys_dims() || bra.left_dim() != 1 || ket.left_dim() != 1 {
            return Err(Error::Dimension("families are not on the same closed chain".into()));
        }
        match op {
            None => {
                let mut env = Mat::<C64>::identity(1, 1);
                for (a, b) in bra.sites.iter().zip(&ket.sites) {
                    env = transfer(env, a, b);
                }
                Ok(DenseTensor::from_mat(env.as_ref()))
            }
            Some(o) => {
                if o.phys_dims() != bra.phys_dims() {
                    return Err(Error::Dimension("operator on a different chain".into()));
                }
                let mut env = DenseTensor::from_parts(vec![1, 1, 1], vec![C64::new(1.0, 0.0)]);
                for ((a, w), b) in bra.sites.iter().zip(o.site_tensors()).zip(&ket.sites) {
                    let x = contract(&env, b, &[(2, 0)])?; // (lb, wa, p, rk)
                    let y = contract(&x, w, &[(1, 0), (2, 2)])?; // (lb, rk, o, wb)
                    let ac = DenseTensor::from_parts(a.shape().to_vec(), a.entries().iter().map(|z| z.conj()).collect());
                    let z = contract(&ac, &y, &[(0, 0), (1, 2)])?; // (rb, rk, wb)
                    env = z.permuted(&[0, 2, 1]);
                }
                let s = env.shape().to_vec();
                Ok(env.reshaped(&[s[0], s[2]]))
            }
        }
    }

    /// Members as dense columns: a `(d^L) × aux` matrix (left leg must be closed).
    pub fn to_dense(&self) -> Result<DenseTensor> {
        if self.left_dim() != 1 {
            return Err(Error::Dimension("family still has an open left leg".into()));
        }
        let total: usize = self.phys_dims().iter().product();
        if total.saturating_mul(self.aux_dim()) > MAX_DENSE_ENTRIES {
            return Err(Error::Resource("dense family too large".into()));
        }
        let first = &self.sites[0];
        let mut acc = first.clone().reshaped(&[first.shape()[1], first.shape()[2]]);
        for t in &self.sites[1..] {
            let (l, d, r) = dims3(t);
            let rows = acc.shape()[0];
            let m = acc.as_mat() * mat_view(t.entries(), l, d * r);
            acc = DenseTensor::from_parts(vec![rows * d, r], to_row_major(m.as_ref()));
        }
        Ok(acc)
    }
}

/// `o|m⟩` compressed to `max_bond` with absolute singular-value `cutoff`.
pub fn apply_mpo(
    o: &MatrixProductOperator,
    m: &MatrixProductState,
    max_bond: usize,
    cutoff: f64,
) -> Result<(MatrixProductState, f64)> {
    if o.phys_dims() != m.phys_dims() {
        return Err(Error::Dimension("operator and state live on different chains".into()));
    }
    if max_bond < 1 {
        return Err(Error::Parameter("max_bond must be at least 1".into()));
    }
    let fam = StateFamily::from_state(m).apply_mpo(o)?;
    let exact = MatrixProductState::from_sites_unchecked(fam.sites, None);
    Ok(exact.compress_with(&Truncation::new(max_bond, cutoff)))
}

/// Orthonormal basis for the span of `vs`.
pub fn orthonormal_span(vs: &[MatrixProductState], gram_tol: f64, max_bond: usize) -> Result<Vec<MatrixProductState>> {
    if vs.is_empty() {
        return Err(Error::Dimension("empty list of states".into()));
    }
    let fam = StateFamily::from_states(vs)?;
    let (basis, _) = fam
        .orthonormalize(&Truncation::new(max_bond, 0.0), gram_tol, None)
        .map_err(|_| Error::Numeric("all input vectors vanish".into()))?;
    basis.members()
}

/// Default Gram threshold for a list of `count` vectors.
pub fn default_gram_tol(count: usize) -> f64 {
    1e-10 * count.max(1) as f64
}

/// The ξ-trimmed spanning set of an orthonormal basis.
pub fn trim_collective(basis: &[MatrixProductState], xi: f64) -> Result<(Vec<MatrixProductState>, TrimReport)> {
    if xi < 0.0 {
        return Err(Error::Parameter("xi must be non-negative".into()));
    }
    let fam = StateFamily::from_states(basis)?;
    let (out, report) = fam.trim(xi)?;
    Ok((out.members()?, report))
}
