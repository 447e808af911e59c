//! Norm truncations of local Hamiltonians: the soft series `h_{t′,t}` realized
//! as an MPO through a cluster expansion of `e^{−βH}`, the even/odd
//! truncation of frustration-free chains, the detectability operator, and the
//! dense hard truncation used as a reference.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{operator_schmidt, LocalHamiltonian, Region, TERM_TOL};
use crate::mps::{MatrixProductOperator, Truncation};
use crate::tensor::{eigh, hermitian_function, DenseTensor, C64};

/// Largest cluster order used when the caller does not fix one.
pub fn default_cluster_cap(d: usize) -> usize {
    if d <= 2 {
        5
    } else {
        3
    }
}

/// `h_{t′,t}(x) = t·Σ_{m=1}^{t′} f^m/m` with `f = 1 − e^{−x/t}`.
pub fn soft_series_eval(x: f64, t: f64, t_prime: usize) -> f64 {
    let f = -(-x / t).exp_m1();
    let mut pow = 1.0;
    let mut sum = 0.0;
    for m in 1..=t_prime {
        pow *= f;
        sum += pow / m as f64;
    }
    t * sum
}

/// Limit of `h_{t′,t}(x)` as `x → ∞`, which is also its supremum.
pub fn soft_series_sup(t: f64, t_prime: usize) -> f64 {
    t * (1..=t_prime).map(|m| 1.0 / m as f64).sum::<f64>()
}

fn binomial(m: usize, j: usize) -> i64 {
    (0..j).fold(1i64, |acc, i| acc * (m - i) as i64 / (i + 1) as i64)
}

/// Exact coefficients `c_j` with `h_{t′,t}(x) = t·Σ_j c_j e^{−jx/t}`.
pub fn soft_coefficients_exact(t_prime: usize) -> Vec<Ratio<i64>> {
    (0..=t_prime)
        .map(|j| {
            let s = (j.max(1)..=t_prime).fold(Ratio::from_integer(0), |acc, m| acc + Ratio::new(binomial(m, j), m as i64));
            if j % 2 == 1 {
                -s
            } else {
                s
            }
        })
        .collect()
}

pub fn soft_coefficients(t_prime: usize) -> Vec<f64> {
    soft_coefficients_exact(t_prime).into_iter().map(|c| *c.numer() as f64 / *c.denom() as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftTruncParams {
    pub t: f64,
    pub t_prime: usize,
    pub region: Region,
    pub energy_estimate: f64,
    /// `None` picks the smallest order meeting the error target, up to the cap.
    pub cluster_order: Option<usize>,
    pub cluster_cap: usize,
    pub mpo_error_target: f64,
}

impl SoftTruncParams {
    pub fn new(t: f64, t_prime: usize, region: Region, energy_estimate: f64, mpo_error_target: f64) -> Result<Self> {
        let p = Self {
            t,
            t_prime,
            region,
            energy_estimate,
            cluster_order: None,
            cluster_cap: 5,
            mpo_error_target,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_cluster_order(mut self, r: usize) -> Self {
        self.cluster_order = Some(r);
        self
    }

    pub fn with_cluster_cap(mut self, cap: usize) -> Self {
        self.cluster_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t > 0.0) || self.t_prime == 0 {
            return Err(Error::Parameter(format!("need t > 0 and t′ ≥ 1, got t={}, t′={}", self.t, self.t_prime)));
        }
        if self.t_prime as f64 >= std::f64::consts::LN_2 / 2.0 * self.t {
            return Err(Error::Parameter(format!(
                "t′={} must be below (ln 2 / 2)·t = {:.4}",
                self.t_prime,
                std::f64::consts::LN_2 / 2.0 * self.t
            )));
        }
        if !self.energy_estimate.is_finite() || !(self.mpo_error_target > 0.0) {
            return Err(Error::Parameter("energy estimate must be finite and the error target positive".into()));
        }
        if self.cluster_cap < 2 || self.cluster_order.is_some_and(|r| r < 1) {
            return Err(Error::Parameter("cluster order must be at least 2".into()));
        }
        Ok(())
    }

    /// `sup_{x≥0} h_{t′,t}(x) = t·(1 + 1/2 + … + 1/t′)`.
    pub fn spectral_cap(&self) -> f64 {
        soft_series_sup(self.t, self.t_prime)
    }
}

/// Correlated-cluster operators `ρ_I` for every qudit interval of width in `[2, r]`.
#[derive(Clone, Debug)]
pub struct ClusterTable {
    pub order: usize,
    /// Keyed by `(start, width)`, 0-based start.
    pub entries: BTreeMap<(usize, usize), MatrixProductOperator>,
}

impl ClusterTable {
    pub fn build(h: &LocalHamiltonian, beta: f64, r: usize, sign_shift: f64) -> Result<Self> {
        let n = h.n();
        let d = h.d();
        let shift = if h.terms().is_empty() { 0.0 } else { sign_shift / h.terms().len() as f64 };
        let mut entries = BTreeMap::new();
        for width in 2..=r.min(n) {
            for start in 0..=n - width {
                let terms: Vec<DenseTensor> = (start..start + width - 1)
                    .map(|i| {
                        let local = DenseTensor::identity(d.pow((i - start) as u32))
                            .kron(&h.terms()[i])
                            .kron(&DenseTensor::identity(d.pow((start + width - i - 2) as u32)));
                        let dim = local.rows();
                        local.sub(&DenseTensor::identity(dim).scale(C64::new(shift, 0.0))).expect("same shape")
                    })
                    .collect();
                let rho = mobius_cluster(&terms, beta)?;
                let mpo = MatrixProductOperator::from_dense(&rho, &vec![d; width])?;
                let (mpo, _) = mpo.compress(&Truncation::relative(usize::MAX, 1e-14));
                entries.insert((start, width), mpo);
            }
        }
        Ok(Self { order: r, entries })
    }

    pub fn max_bond(&self) -> usize {
        self.entries.values().map(|m| m.max_bond()).max().unwrap_or(1)
    }
}

/// `Σ_{S ⊆ T} (−1)^{|T|−|S|} e^{−β Σ_{i∈S} h_i}`: words using every term at least once.
fn mobius_cluster(terms: &[DenseTensor], beta: f64) -> Result<DenseTensor> {
    let m = terms.len();
    let dim = terms[0].rows();
    let mut rho = DenseTensor::zeros(&[dim, dim]);
    for mask in 0u32..(1 << m) {
        let mut hs = DenseTensor::zeros(&[dim, dim]);
        for (i, t) in terms.iter().enumerate() {
            if mask & (1 << i) != 0 {
                hs = hs.add(t)?;
            }
        }
        let e = hermitian_function(&hs, |x| (-beta * x).exp())?;
        let sign = if (m - mask.count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
        rho = rho.add(&e.scale(C64::new(sign, 0.0)))?;
    }
    Ok(rho)
}

/// Theoretical bound `e^{n²(e^β−1)^r} − 1` on `‖e^{−βH} − M_r(H)‖`.
pub fn cluster_error_bound(n: usize, beta: f64, r: usize) -> f64 {
    ((n * n) as f64 * (beta.exp() - 1.0).powi(r as i32)).exp_m1()
}

/// `M_r(H)`: `e^{−βH}` keeping only words whose connected components use fewer
/// than `r` distinct terms, i.e. span at most `r` qudits. Terms are shifted by `sign_shift / #terms` first.
pub fn cluster_expansion_mpo(h: &LocalHamiltonian, beta: f64, r: usize, sign_shift: f64) -> Result<MatrixProductOperator> {
    let table = cluster_table_checked(h, beta, r, sign_shift)?;
    Ok(assemble_cluster_mpo(h.n(), h.d(), &table))
}

fn cluster_table_checked(h: &LocalHamiltonian, beta: f64, r: usize, sign_shift: f64) -> Result<ClusterTable> {
    if !(beta.is_finite() && beta >= 0.0) || beta.exp() - 1.0 >= 1.0 {
        return Err(Error::Parameter(format!("cluster expansion needs 0 ≤ β < ln 2, got β={beta}")));
    }
    if r == 0 {
        return Err(Error::Parameter("cluster order must be positive".into()));
    }
    ClusterTable::build(h, beta, r, sign_shift)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Channel {
    Closed,
    /// Segment of `width` starting at `start`, `k` sites consumed, virtual index `alpha`.
    Open { start: usize, width: usize, k: usize, alpha: usize },
}

fn channels_at_cut(cut: usize, n: usize, table: &ClusterTable) -> Vec<Channel> {
    // cut lies between sites cut-1 and cut (0-based), 1 ≤ cut ≤ n-1
    let mut out = vec![Channel::Closed];
    for (&(start, width), mpo) in &table.entries {
        if start < cut && cut < start + width && start + width <= n {
            let k = cut - start;
            let bond = mpo.site_tensors()[k - 1].shape()[3];
            out.extend((0..bond).map(|alpha| Channel::Open { start, width, k, alpha }));
        }
    }
    out
}

fn assemble_cluster_mpo(n: usize, d: usize, table: &ClusterTable) -> MatrixProductOperator {
    let cuts: Vec<Vec<Channel>> = (0..=n)
        .map(|c| if c == 0 || c == n { vec![Channel::Closed] } else { channels_at_cut(c, n, table) })
        .collect();
    let eye = DenseTensor::identity(d);
    let mut sites = Vec::with_capacity(n);
    for a in 0..n {
        let left = &cuts[a];
        let right = &cuts[a + 1];
        let rindex: BTreeMap<(usize, usize, usize, usize), usize> = right
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match *c {
                Channel::Open { start, width, k, alpha } => Some(((start, width, k, alpha), i)),
                Channel::Closed => None,
            })
            .collect();
        let (lc, rc) = (left.len(), right.len());
        let mut w = DenseTensor::zeros(&[lc, d, d, rc]);
        let mut put = |l: usize, r: usize, src: &DenseTensor, a0: usize, a1: usize| {
            let sh = src.shape();
            let e = w.entries_mut();
            for o in 0..d {
                for i in 0..d {
                    e[((l * d + o) * d + i) * rc + r] += src.entries()[((a0 * sh[1] + o) * sh[2] + i) * sh[3] + a1];
                }
            }
        };
        for (l, ch) in left.iter().enumerate() {
            match *ch {
                Channel::Closed => {
                    put(l, 0, &eye.clone().reshaped(&[1, d, d, 1]), 0, 0);
                    for (&(start, width), mpo) in table.entries.range((a, 0)..(a + 1, 0)) {
                        debug_assert_eq!(start, a);
                        let s0 = &mpo.site_tensors()[0];
                        for alpha in 0..s0.shape()[3] {
                            put(l, rindex[&(start, width, 1, alpha)], s0, 0, alpha);
                        }
                    }
                }
                Channel::Open { start, width, k, alpha } => {
                    let mpo = &table.entries[&(start, width)];
                    let site = &mpo.site_tensors()[k];
                    if k + 1 == width {
                        put(l, 0, site, alpha, 0);
                    } else {
                        for a2 in 0..site.shape()[3] {
                            put(l, rindex[&(start, width, k + 1, a2)], site, alpha, a2);
                        }
                    }
                }
            }
        }
        sites.push(w);
    }
    MatrixProductOperator::from_sites_unchecked(sites)
}

/// Diagnostics of one soft truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftTruncReport {
    pub region: Region,
    pub cluster_order: usize,
    pub exact_expansion: bool,
    pub error_bound: f64,
    pub bound_met: bool,
    pub max_bond: usize,
}

fn term_range(region: &Region) -> std::ops::Range<usize> {
    if region.len() < 2 {
        0..0
    } else {
        region.start - 1..region.end - 1
    }
}

/// `H` with the terms inside `region` removed.
pub fn complement(h: &LocalHamiltonian, region: &Region) -> Result<LocalHamiltonian> {
    let range = term_range(region);
    let d = h.d();
    let terms = h
        .terms()
        .iter()
        .enumerate()
        .map(|(i, t)| if range.contains(&i) { DenseTensor::zeros(&[d * d, d * d]) } else { t.clone() })
        .collect();
    LocalHamiltonian::new(h.n(), d, terms)
}

fn check_region(h: &LocalHamiltonian, region: &Region) -> Result<()> {
    if region.end > h.n() {
        return Err(Error::Dimension(format!("region {region} outside {} sites", h.n())));
    }
    Ok(())
}

fn pick_cluster_order(p: &SoftTruncParams, m: usize, coeffs: &[f64]) -> (usize, bool, f64) {
    let exact_order = m;
    if let Some(r) = p.cluster_order {
        let bound = soft_error_bound(p, m, r, coeffs);
        return (r, r >= exact_order || bound <= p.mpo_error_target, if r >= exact_order { 0.0 } else { bound });
    }
    if exact_order <= p.cluster_cap {
        return (exact_order, true, 0.0);
    }
    for r in 2..=p.cluster_cap {
        let bound = soft_error_bound(p, m, r, coeffs);
        if bound <= p.mpo_error_target {
            return (r, true, bound);
        }
    }
    let r = p.cluster_cap;
    (r, false, soft_error_bound(p, m, r, coeffs))
}

fn soft_error_bound(p: &SoftTruncParams, m: usize, r: usize, coeffs: &[f64]) -> f64 {
    (1..=p.t_prime)
        .map(|j| {
            let beta = j as f64 / p.t;
            p.t * coeffs[j].abs() * (j as f64 * p.energy_estimate / p.t).exp() * cluster_error_bound(m, beta, r)
        })
        .sum()
}

/// `ε′·1 + h_{t′,t}(H_J − ε′·1)` on the sites of the region, with each
/// `e^{−jH_J/t}` replaced by its cluster expansion.
fn truncated_block(h: &LocalHamiltonian, p: &SoftTruncParams) -> Result<(MatrixProductOperator, SoftTruncReport)> {
    let d = h.d();
    let m = p.region.len();
    let coeffs = soft_coefficients(p.t_prime);
    let (r, bound_met, error_bound) = pick_cluster_order(p, m, &coeffs);
    let hj = h.restrict(&p.region)?;
    let mut acc = MatrixProductOperator::identity(&vec![d; m]).scale(C64::new(p.energy_estimate + p.t * coeffs[0], 0.0));
    let trunc = Truncation::relative(usize::MAX, 1e-13);
    for (j, &c) in coeffs.iter().enumerate().skip(1) {
        let beta = j as f64 / p.t;
        let e = cluster_expansion_mpo(&hj, beta, r, 0.0)?;
        let w = p.t * c * (j as f64 * p.energy_estimate / p.t).exp();
        acc = acc.add(&e.scale(C64::new(w, 0.0)))?.compress(&trunc).0;
    }
    let report = SoftTruncReport {
        region: p.region,
        cluster_order: r,
        exact_expansion: r >= m,
        error_bound,
        bound_met,
        max_bond: acc.max_bond(),
    };
    Ok((acc, report))
}

fn check_disjoint(regions: &[Region]) -> Result<()> {
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.start < b.end && b.start < a.end {
                return Err(Error::Parameter(format!("truncation regions {a} and {b} share a term")));
            }
        }
    }
    Ok(())
}

/// `H` with the terms of every region removed.
fn complement_all(h: &LocalHamiltonian, regions: &[Region]) -> Result<LocalHamiltonian> {
    regions.iter().try_fold(h.clone(), |acc, r| complement(&acc, r))
}

/// Soft truncation applied to several regions with no term in common.
pub fn soft_truncate_regions(h: &LocalHamiltonian, params: &[SoftTruncParams]) -> Result<(MatrixProductOperator, Vec<SoftTruncReport>)> {
    let regions: Vec<Region> = params.iter().map(|p| p.region).collect();
    check_disjoint(&regions)?;
    let n = h.n();
    let d = h.d();
    let trunc = Truncation::relative(usize::MAX, 1e-13);
    let mut full = if n > 1 { complement_all(h, &regions)?.to_mpo() } else { MatrixProductOperator::zero(&[d]) };
    let mut reports = Vec::with_capacity(params.len());
    for p in params {
        p.validate()?;
        check_region(h, &p.region)?;
        if p.region.len() < 2 {
            continue;
        }
        let (block, report) = truncated_block(h, p)?;
        let embedded = block.embedded(&vec![d; p.region.start - 1], &vec![d; n - p.region.end]);
        full = full.add(&embedded)?.compress(&trunc).0;
        reports.push(report);
    }
    Ok((full, reports))
}

/// `H̃ = H_{J̄} + ε′·1 + h_{t′,t}(H_J − ε′·1)` as an MPO, with each `e^{−jH_J/t}`
/// replaced by its cluster expansion.
pub fn soft_truncate_mpo(h: &LocalHamiltonian, p: &SoftTruncParams) -> Result<(MatrixProductOperator, SoftTruncReport)> {
    p.validate()?;
    check_region(h, &p.region)?;
    if p.region.len() < 2 {
        let mpo = h.to_mpo();
        let max_bond = mpo.max_bond();
        let report = SoftTruncReport { region: p.region, cluster_order: 0, exact_expansion: true, error_bound: 0.0, bound_met: true, max_bond };
        return Ok((mpo, report));
    }
    let (mpo, mut reports) = soft_truncate_regions(h, std::slice::from_ref(p))?;
    let mut report = reports.pop().expect("one region");
    report.max_bond = mpo.max_bond();
    Ok((mpo, report))
}

/// Dense `H̃` with the series applied exactly through diagonalization.
pub fn soft_truncate_dense(h: &LocalHamiltonian, p: &SoftTruncParams) -> Result<DenseTensor> {
    p.validate()?;
    check_region(h, &p.region)?;
    truncate_dense_with(h, &p.region, |x| p.energy_estimate + soft_series_eval(x - p.energy_estimate, p.t, p.t_prime))
}

fn truncate_dense_with(h: &LocalHamiltonian, region: &Region, f: impl Fn(f64) -> f64) -> Result<DenseTensor> {
    let d = h.d();
    let rest = if h.n() > 1 { complement(h, region)?.to_dense()? } else { DenseTensor::zeros(&[d, d]) };
    if region.len() < 2 {
        return h.to_dense();
    }
    let hj = h.restrict(region)?.to_dense()?;
    let tj = hermitian_function(&hj, f)?;
    let left = DenseTensor::identity(d.pow((region.start - 1) as u32));
    let right = DenseTensor::identity(d.pow((h.n() - region.end) as u32));
    left.kron(&tj).kron(&right).add(&rest)
}

/// `H̃ = H_J Π_− + (t + ε_J) Π_+ + H_{J̄}` with `Π_+` the spectral projector of
/// `H_J` above `ε_J + t`.
pub fn hard_truncate_dense(h: &LocalHamiltonian, region: &Region, t: f64) -> Result<DenseTensor> {
    check_region(h, region)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Parameter(format!("truncation level must be positive, got {t}")));
    }
    let dim = h.d().checked_pow(h.n() as u32).unwrap_or(usize::MAX);
    if dim > 1 << 12 {
        return Err(Error::Resource(format!("dense hard truncation on {} sites", h.n())));
    }
    if region.len() < 2 {
        return h.to_dense();
    }
    let (vals, _) = eigh(&h.restrict(region)?.to_dense()?)?;
    let cap = vals[0] + t;
    truncate_dense_with(h, region, |x| x.min(cap))
}

fn check_projectors(h: &LocalHamiltonian) -> Result<()> {
    for (i, t) in h.terms().iter().enumerate() {
        let defect = t.matmul(t)?.max_abs_diff(t).max(t.hermiticity_defect());
        if defect > TERM_TOL {
            return Err(Error::Contract(format!("term {i} is not a projector (defect {defect:.2e})")));
        }
    }
    Ok(())
}

/// `⊗_{i ∈ terms} (1 − h_i)` for pairwise disjoint terms, identity elsewhere.
fn complement_layer(h: &LocalHamiltonian, terms: &[usize]) -> MatrixProductOperator {
    let d = h.d();
    let eye = DenseTensor::identity(d);
    let mut sites: Vec<DenseTensor> = (0..h.n()).map(|_| eye.clone().reshaped(&[1, d, d, 1])).collect();
    for &i in terms {
        let c = DenseTensor::identity(d * d).sub(&h.terms()[i]).expect("same shape");
        let (a, b) = operator_schmidt(&c, d);
        let k = a.len();
        let mut left = DenseTensor::zeros(&[1, d, d, k.max(1)]);
        let mut right = DenseTensor::zeros(&[k.max(1), d, d, 1]);
        for (kk, (ak, bk)) in a.iter().zip(&b).enumerate() {
            for o in 0..d {
                for x in 0..d {
                    left.entries_mut()[(o * d + x) * k + kk] = ak.entries()[o * d + x];
                    right.entries_mut()[(kk * d + o) * d + x] = bk.entries()[o * d + x];
                }
            }
        }
        sites[i] = left;
        sites[i + 1] = right;
    }
    MatrixProductOperator::from_sites_unchecked(sites)
}

/// Term indices inside `region` whose 1-based position has the given parity.
fn layer_terms(region: &Region, even: bool) -> Vec<usize> {
    term_range(region).filter(|i| ((i + 1) % 2 == 0) == even).collect()
}

/// Even and odd layers `⊗(1 − h_i)` over the terms inside `region`.
pub fn complement_layers(h: &LocalHamiltonian, region: &Region) -> Result<(MatrixProductOperator, MatrixProductOperator)> {
    check_region(h, region)?;
    check_projectors(h)?;
    Ok((complement_layer(h, &layer_terms(region, true)), complement_layer(h, &layer_terms(region, false))))
}

/// `H̃ = (1 − ⊗_{J even}(1−h_i)) + (1 − ⊗_{J odd}(1−h_i)) + H_{J̄}` for projector terms.
pub fn ff_truncate(h: &LocalHamiltonian, region: &Region) -> Result<MatrixProductOperator> {
    ff_truncate_regions(h, std::slice::from_ref(region))
}

/// Even/odd truncation applied to several regions with no term in common.
pub fn ff_truncate_regions(h: &LocalHamiltonian, regions: &[Region]) -> Result<MatrixProductOperator> {
    check_disjoint(regions)?;
    check_projectors(h)?;
    let dims = vec![h.d(); h.n()];
    let mut acc = if h.n() > 1 { complement_all(h, regions)?.to_mpo() } else { MatrixProductOperator::zero(&dims) };
    for region in regions {
        check_region(h, region)?;
        let (even, odd) = complement_layers(h, region)?;
        let part = MatrixProductOperator::identity(&dims)
            .scale(C64::new(2.0, 0.0))
            .add(&even.scale(C64::new(-1.0, 0.0)))?
            .add(&odd.scale(C64::new(-1.0, 0.0)))?;
        acc = acc.add(&part)?.compress(&Truncation::relative(usize::MAX, 1e-12)).0;
    }
    Ok(acc)
}

/// `⊗(1 − h_even) · ⊗(1 − h_odd)` over the whole chain.
pub fn dl_operator(h: &LocalHamiltonian) -> Result<MatrixProductOperator> {
    let (even, odd) = complement_layers(h, &h.full_region())?;
    even.compose(&odd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_model, ModelParams};
    use crate::oracle::{exact_spectrum, DenseLimits};

    fn model(name: &str, n: usize) -> LocalHamiltonian {
        build_model(name, n, &ModelParams::new()).unwrap()
    }

    fn dense_exp(h: &LocalHamiltonian, beta: f64) -> DenseTensor {
        hermitian_function(&h.to_dense().unwrap(), |x| (-beta * x).exp()).unwrap()
    }

    #[test]
    fn series_closed_forms() {
        for t in [1.0, 3.0, 12.0] {
            for tp in 1..6 {
                assert_eq!(soft_series_eval(0.0, t, tp), 0.0);
            }
        }
        let v = soft_series_eval(2.0, 2.0, 1);
        assert!((v - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 1.264_241_117_657_115).abs() < 1e-12);
    }

    #[test]
    fn series_is_capped_by_harmonic_sum() {
        let cap = soft_series_sup(4.0, 4);
        assert!((cap - 25.0 / 3.0).abs() < 1e-14);
        for i in 0..=10_000 {
            let x = 100.0 * i as f64 / 10_000.0;
            let h = soft_series_eval(x, 4.0, 4);
            assert!((0.0..=cap + 1e-12).contains(&h));
            assert!((h - x).abs() <= 1.0 * (x / 4.0).powi(4) + 1e-12);
        }
        assert!(soft_series_eval(100.0, 4.0, 4) > 4.0 * 4f64.ln());
    }

    #[test]
    fn exponential_coefficients_reproduce_series() {
        let c = soft_coefficients_exact(4);
        let expected = [Ratio::new(25, 12), Ratio::from_integer(-4), Ratio::from_integer(3), Ratio::new(-4, 3), Ratio::new(1, 4)];
        assert_eq!(c, expected);
        for tp in 1..=8 {
            let c = soft_coefficients(tp);
            assert!(c.iter().sum::<f64>().abs() < 1e-14);
            for x in [0.0, 0.3, 1.0, 5.0, 40.0] {
                let t = 10.0;
                let via: f64 = t * c.iter().enumerate().map(|(j, cj)| cj * (-(j as f64) * x / t).exp()).sum::<f64>();
                assert!((via - soft_series_eval(x, t, tp)).abs() < 1e-11 * (1.0 + x), "t′={tp} x={x}");
            }
        }
    }

    #[test]
    fn zero_beta_gives_identity() {
        let h = model("heisenberg", 5);
        let m = cluster_expansion_mpo(&h, 0.0, 4, 0.0).unwrap();
        let eye = DenseTensor::identity(32);
        assert!(m.to_dense().unwrap().max_abs_diff(&eye) < 1e-12);
    }

    #[test]
    fn full_order_is_exact() {
        for name in ["heisenberg", "tfi", "aklt"] {
            let n = if name == "aklt" { 4 } else { 6 };
            let h = model(name, n);
            for beta in [0.1, 0.25, 0.6] {
                let m = cluster_expansion_mpo(&h, beta, n + 1, 0.0).unwrap();
                let err = m.to_dense().unwrap().max_abs_diff(&dense_exp(&h, beta));
                assert!(err < 1e-9, "{name} β={beta}: {err}");
            }
        }
    }

    #[test]
    fn truncated_expansion_obeys_bounds() {
        for n in [3, 4, 6] {
            let h = model("pinned", n);
            for beta in [0.1, 0.25] {
                for r in 2..=5 {
                    let m = cluster_expansion_mpo(&h, beta, r, 0.0).unwrap();
                    let err = m.to_dense().unwrap().sub(&dense_exp(&h, beta)).unwrap().op_norm();
                    assert!(err <= cluster_error_bound(n, beta, r), "n={n} β={beta} r={r} err={err}");
                    assert!(m.max_bond() <= r * r * 2usize.pow(r as u32));
                }
            }
        }
    }

    #[test]
    fn order_counts_terms_per_component() {
        let h = model("pinned", 4);
        let one = cluster_expansion_mpo(&h, 0.2, 1, 0.0).unwrap().to_dense().unwrap();
        assert!(one.max_abs_diff(&DenseTensor::identity(16)) < 1e-12);
        let two = cluster_expansion_mpo(&h, 0.2, 2, 0.0).unwrap().to_dense().unwrap();
        let singles = (0..3).fold(DenseTensor::identity(16), |acc, i| {
            let t = h.embedded_term(i);
            let e = hermitian_function(&t, |x| (-0.2 * x).exp()).unwrap();
            acc.add(&e.sub(&DenseTensor::identity(16)).unwrap()).unwrap()
        });
        let pairs = [(0, 2)].iter().fold(DenseTensor::zeros(&[16, 16]), |acc, &(i, j)| {
            let a = hermitian_function(&h.embedded_term(i), |x| (-0.2 * x).exp()).unwrap().sub(&DenseTensor::identity(16)).unwrap();
            let b = hermitian_function(&h.embedded_term(j), |x| (-0.2 * x).exp()).unwrap().sub(&DenseTensor::identity(16)).unwrap();
            acc.add(&a.matmul(&b).unwrap()).unwrap()
        });
        assert!(two.max_abs_diff(&singles.add(&pairs).unwrap()) < 1e-12);
    }

    #[test]
    fn large_beta_is_rejected() {
        let h = model("pinned", 4);
        assert!(matches!(cluster_expansion_mpo(&h, 0.7, 3, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn sign_shift_multiplies_by_scalar() {
        let h = model("tfi", 4);
        let a = cluster_expansion_mpo(&h, 0.2, 5, 1.5).unwrap().to_dense().unwrap();
        let b = dense_exp(&h, 0.2).scale(C64::new((0.2f64 * 1.5).exp(), 0.0));
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn soft_truncation_matches_dense_reference() {
        let h = model("pinned", 8);
        let region = Region::new(3, 6).unwrap();
        let p = SoftTruncParams::new(9.0, 3, region, 0.0, 1e-6).unwrap();
        let (mpo, report) = soft_truncate_mpo(&h, &p).unwrap();
        assert!(report.exact_expansion && report.bound_met);
        let a = mpo.to_dense().unwrap();
        let b = soft_truncate_dense(&h, &p).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
        let diff = a.sub(&h.to_dense().unwrap()).unwrap();
        let (vals, _) = eigh(&diff).unwrap();
        assert!(*vals.last().unwrap() <= 1e-6);
    }

    #[test]
    fn soft_truncation_of_empty_region_is_identity_map() {
        let h = model("tfi", 5);
        let p = SoftTruncParams::new(12.0, 4, Region::new(2, 2).unwrap(), 0.0, 1e-6).unwrap();
        let (mpo, _) = soft_truncate_mpo(&h, &p).unwrap();
        assert!(mpo.to_dense().unwrap().max_abs_diff(&h.to_dense().unwrap()) < 1e-12);
    }

    #[test]
    fn soft_truncation_rejects_large_t_prime() {
        let region = Region::new(1, 4).unwrap();
        assert!(SoftTruncParams::new(8.0, 3, region, 0.0, 1e-6).is_err());
        assert!(SoftTruncParams::new(12.0, 4, region, 0.0, 1e-6).is_ok());
    }

    #[test]
    fn capped_order_improves_monotonically() {
        let h = model("heisenberg", 7);
        let region = Region::new(1, 7).unwrap();
        let base = SoftTruncParams::new(12.0, 4, region, 0.0, 1e-6).unwrap();
        let reference = soft_truncate_dense(&h, &base).unwrap();
        let mut last = f64::INFINITY;
        for r in 2..=8 {
            let (m, _) = soft_truncate_mpo(&h, &base.clone().with_cluster_order(r)).unwrap();
            let err = m.to_dense().unwrap().sub(&reference).unwrap().op_norm();
            assert!(err <= last + 1e-12, "r={r}: {err} > {last}");
            last = err;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn hard_truncation_caps_region_spectrum() {
        let mut params = ModelParams::new();
        params.insert("g".into(), "1.5".into());
        let h = build_model("tfi", 8, &params).unwrap();
        let region = Region::new(3, 6).unwrap();
        let big = hard_truncate_dense(&h, &region, 1e3).unwrap();
        assert!(big.max_abs_diff(&h.to_dense().unwrap()) < 1e-10);
        let ht = hard_truncate_dense(&h, &region, 0.5).unwrap();
        let (orig, _) = eigh(&h.to_dense().unwrap()).unwrap();
        let (trunc, _) = eigh(&ht).unwrap();
        for (a, b) in orig.iter().zip(&trunc) {
            assert!(b <= &(a + 1e-10));
        }
    }

    #[test]
    fn ff_truncation_keeps_kernel_and_bond() {
        let h = model("pinned", 8);
        let region = Region::new(2, 7).unwrap();
        let mpo = ff_truncate(&h, &region).unwrap();
        assert!(mpo.max_bond() <= 6);
        let limits = DenseLimits::default();
        let ht = mpo.to_dense().unwrap();
        let (vals, _) = eigh(&ht).unwrap();
        assert!(vals[0].abs() < 1e-10);
        assert!(vals[1] >= 1.0 / 8.0);
        let (orig, _) = exact_spectrum(&h, &limits).unwrap();
        assert_eq!(orig.iter().filter(|v| v.abs() < 1e-9).count(), vals.iter().filter(|v| v.abs() < 1e-9).count());
        let (even, odd) = complement_layers(&h, &region).unwrap();
        for layer in [even, odd] {
            let l = layer.to_dense().unwrap();
            assert!(l.matmul(&l).unwrap().max_abs_diff(&l) < 1e-10);
        }
    }

    #[test]
    fn ff_truncation_of_single_term_is_unchanged() {
        let h = model("pinned", 5);
        let mpo = ff_truncate(&h, &Region::new(2, 3).unwrap()).unwrap();
        assert!(mpo.to_dense().unwrap().max_abs_diff(&h.to_dense().unwrap()) < 1e-12);
    }

    #[test]
    fn dl_operator_on_single_term() {
        let h = model("pinned", 2);
        let dl = dl_operator(&h).unwrap().to_dense().unwrap();
        let expected = DenseTensor::identity(4).sub(&h.terms()[0]).unwrap();
        assert!(dl.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn non_projector_terms_are_rejected() {
        let h = model("tfi", 4);
        assert!(matches!(dl_operator(&h), Err(Error::Contract(_))));
    }
}
