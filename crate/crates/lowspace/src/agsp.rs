//! Chebyshev approximate ground-state projections as MPOs, sliced at two
//! cuts into the middle operators used to amplify viable sets.

use crate::error::{Error, Result};
use crate::hamiltonian::{LocalHamiltonian, Region};
use crate::mps::{MatrixProductOperator, OpenOperator, Truncation};
use crate::tensor::{eigh, C64};
use crate::truncation::{default_cluster_cap, ff_truncate_regions, soft_series_sup, soft_truncate_mpo, soft_truncate_regions, SoftTruncParams, SoftTruncReport};
use serde::{Deserialize, Serialize};

/// Degree and window of the rescaled Chebyshev filter
/// `P_k(x) = T_k(y(x)) / T_k(y(η0))` with `y` mapping `[η1, N]` onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyParams {
    pub k: usize,
    pub eta0: f64,
    pub eta1: f64,
    pub norm_bound: f64,
}

/// Chebyshev polynomial `T_k(y)` by the three-term recurrence.
pub fn chebyshev_t(k: usize, y: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => y,
        _ => {
            let (mut prev, mut cur) = (1.0, y);
            for _ in 1..k {
                let next = 2.0 * y * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

impl ChebyParams {
    pub fn new(k: usize, eta0: f64, eta1: f64, norm_bound: f64) -> Result<Self> {
        let p = Self { k, eta0, eta1, norm_bound };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.eta0, self.eta1, self.norm_bound].iter().all(|x| x.is_finite());
        if !all_finite || self.eta0 >= self.eta1 || self.eta1 >= self.norm_bound {
            return Err(Error::Parameter(format!(
                "need η0 < η1 < norm bound, got η0={}, η1={}, N={}",
                self.eta0, self.eta1, self.norm_bound
            )));
        }
        Ok(())
    }

    /// Affine map sending `[η1, N]` to `[-1, 1]`.
    pub fn map(&self, x: f64) -> f64 {
        2.0 * (x - self.eta1) / (self.norm_bound - self.eta1) - 1.0
    }

    /// Coefficients `(a, b)` of `y = a·x + b`.
    pub fn affine(&self) -> (f64, f64) {
        let a = 2.0 / (self.norm_bound - self.eta1);
        (a, -a * self.eta1 - 1.0)
    }

    /// `T_k(y(η0))`, the normalization making `P_k(η0) = 1`.
    pub fn normalization(&self) -> f64 {
        chebyshev_t(self.k, self.map(self.eta0))
    }

    pub fn eval(&self, x: f64) -> f64 {
        chebyshev_t(self.k, self.map(x)) / self.normalization()
    }

    /// `4·exp(−4k·√((η1−η0)/(N−η0)))`; `|P_k| ≤ √Δ` on `[η1, N]`.
    pub fn delta_formula(&self) -> f64 {
        4.0 * (-4.0 * self.k as f64 * ((self.eta1 - self.eta0) / (self.norm_bound - self.eta0)).sqrt()).exp()
    }

    /// Monomial coefficients of `P_k` in `x`, lowest degree first. Only for `k ≤ 30`.
    pub fn monomial_coefficients(&self) -> Result<Vec<f64>> {
        if self.k > 30 {
            return Err(Error::Parameter(format!("degree {} too large for a monomial expansion", self.k)));
        }
        // T_k in y
        let mut prev = vec![1.0];
        let mut cur = vec![0.0, 1.0];
        let tk = if self.k == 0 {
            prev.clone()
        } else {
            for _ in 1..self.k {
                let mut next = vec![0.0; cur.len() + 1];
                for (i, c) in cur.iter().enumerate() {
                    next[i + 1] += 2.0 * c;
                }
                for (i, c) in prev.iter().enumerate() {
                    next[i] -= c;
                }
                prev = cur;
                cur = next;
            }
            cur
        };
        // substitute y = a x + b by Horner on polynomials
        let (a, b) = self.affine();
        let mut out = vec![0.0; tk.len()];
        for &c in tk.iter().rev() {
            let mut next = vec![0.0; out.len()];
            for (i, &o) in out.iter().enumerate() {
                next[i] += b * o;
                if i + 1 < next.len() {
                    next[i + 1] += a * o;
                }
            }
            next[0] += c;
            out = next;
        }
        let norm = self.normalization();
        Ok(out.into_iter().map(|c| c / norm).collect())
    }
}

pub fn eval_monomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `P_k(H̃)` by the Chebyshev recurrence on MPOs, truncating each iterate to
/// `max_bond` with singular values below `cutoff` times the largest dropped.
/// Returns the AGSP and an estimate of its Frobenius error.
pub fn build_agsp_mpo(
    h_trunc: &MatrixProductOperator,
    p: &ChebyParams,
    max_bond: usize,
    cutoff: f64,
) -> Result<(MatrixProductOperator, f64)> {
    p.validate()?;
    if max_bond == 0 {
        return Err(Error::Parameter("max_bond must be positive".into()));
    }
    let dims = h_trunc.phys_dims();
    let eye = MatrixProductOperator::identity(&dims);
    let (a, b) = p.affine();
    let trunc = Truncation::relative(max_bond, cutoff);
    let x = h_trunc.scale(C64::new(a, 0.0)).add_scaled_identity(C64::new(b, 0.0))?.compress(&Truncation::relative(usize::MAX, 1e-14)).0;
    let norm = p.normalization();
    if p.k == 0 {
        return Ok((eye, 0.0));
    }
    let x_norm = b.abs().max((a * p.norm_bound + b).abs());
    let (mut prev, mut cur) = (eye, x.clone());
    let (mut err_prev, mut err_cur) = (0.0f64, 0.0f64);
    for _ in 1..p.k {
        let (xt, e1) = x.compose_compressed(&cur, &trunc)?;
        let (next, e2) = xt.scale(C64::new(2.0, 0.0)).add(&prev.scale(C64::new(-1.0, 0.0)))?.compress(&trunc);
        let err_next = 2.0 * x_norm * err_cur + err_prev + 2.0 * e1 + e2;
        if !err_next.is_finite() {
            return Err(Error::Numeric("Chebyshev recurrence diverged".into()));
        }
        prev = cur;
        cur = next;
        err_prev = err_cur;
        err_cur = err_next;
    }
    Ok((cur.scale(C64::new(1.0 / norm, 0.0)), err_cur / norm.abs()))
}

fn check_cuts(n: usize, i1: usize, i2: usize) -> Result<()> {
    if i1 >= i2 || i2 > n {
        return Err(Error::Dimension(format!("cuts ({i1}, {i2}) invalid for {n} sites")));
    }
    Ok(())
}

/// Sites `i1..i2` of `K` (qudits `i1+1..=i2`) with the bonds at both cuts left open.
pub fn middle_segment(k_mpo: &MatrixProductOperator, i1: usize, i2: usize) -> Result<OpenOperator> {
    check_cuts(k_mpo.len(), i1, i2)?;
    Ok(k_mpo.weighted_segment(i1, i2))
}

/// The middle operators `A_(α,β)`, ordered `α·D_right + β`.
pub fn split_agsp(k_mpo: &MatrixProductOperator, i1: usize, i2: usize) -> Result<Vec<MatrixProductOperator>> {
    let seg = middle_segment(k_mpo, i1, i2)?;
    let mut out = Vec::with_capacity(seg.left_dim() * seg.right_dim());
    for alpha in 0..seg.left_dim() {
        for beta in 0..seg.right_dim() {
            out.push(seg.slice(alpha, beta));
        }
    }
    Ok(out)
}

/// Which structural assumption the AGSP is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Frustration-free with a unique ground state.
    Ff,
    /// Gapped, with a degenerate ground space of known dimension.
    Dg,
    /// Low-density spectrum below a declared energy window.
    Ld,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ff" => Ok(Case::Ff),
            "dg" => Ok(Case::Dg),
            "ld" => Ok(Case::Ld),
            other => Err(Error::Parameter(format!("unknown case {other} (expected ff, dg or ld)"))),
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Case::Ff => "ff",
            Case::Dg => "dg",
            Case::Ld => "ld",
        })
    }
}

/// Practical parameters of the AGSP construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgspConfig {
    /// Width of the untruncated window on each side of a cut.
    pub ell: usize,
    /// Chebyshev degree is `ell² · degree_multiplier` unless `degree` is set.
    pub degree_multiplier: usize,
    pub degree: Option<usize>,
    pub t: f64,
    pub t_prime: usize,
    pub max_bond: usize,
    pub cutoff: f64,
    pub cluster_cap: Option<usize>,
    pub mpo_error_target: f64,
    /// Largest Hilbert-space dimension for which Δ is measured densely.
    pub measure_dim: usize,
}

impl Default for AgspConfig {
    fn default() -> Self {
        Self {
            ell: 2,
            degree_multiplier: 4,
            degree: None,
            t: 12.0,
            t_prime: 4,
            max_bond: 32,
            cutoff: 1e-10,
            cluster_cap: None,
            mpo_error_target: 1e-6,
            measure_dim: 1 << 10,
        }
    }
}

impl AgspConfig {
    pub fn degree(&self) -> usize {
        self.degree.unwrap_or(self.ell * self.ell * self.degree_multiplier)
    }
}

/// Energy anchors for one AGSP construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyInputs {
    /// Estimate of the lowest energy of `H_M`.
    pub eps_m: f64,
    /// Upper bound on the ground energy of the whole chain.
    pub ground_anchor: f64,
    /// Spectral gap (or its hinted lower bound).
    pub gap: f64,
    /// `(η1, μ)` of the current level in the low-density case.
    pub ld_window: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedRegion {
    pub region: Region,
    pub energy_estimate: f64,
    pub soft: Option<SoftTruncReport>,
}

/// Middle operators of one AGSP together with its diagnostics.
#[derive(Clone, Debug)]
pub struct AgspBundle {
    pub region: Region,
    pub case: Case,
    pub middle: OpenOperator,
    /// Truncated `H_M` on the sites of `region`.
    pub truncated_mpo_m: MatrixProductOperator,
    /// Largest bond of `K` at the two cuts.
    pub d_measured: usize,
    /// `max ‖K v‖²` over eigenvectors of `H̃` above `η1`, when measured densely.
    pub delta_measured: Option<f64>,
    pub delta_formula: f64,
    pub cheby: ChebyParams,
    pub truncated_regions: Vec<TruncatedRegion>,
    pub compression_error: f64,
    pub k_max_bond: usize,
    pub h_trunc_max_bond: usize,
}

impl AgspBundle {
    pub fn count(&self) -> usize {
        self.middle.left_dim() * self.middle.right_dim()
    }

    pub fn middle_ops(&self) -> Vec<MatrixProductOperator> {
        let mut out = Vec::with_capacity(self.count());
        for alpha in 0..self.middle.left_dim() {
            for beta in 0..self.middle.right_dim() {
                out.push(self.middle.slice(alpha, beta));
            }
        }
        out
    }

    /// `D¹²·Δ < 10⁻⁵`, the sufficient condition for a unique ground state.
    pub fn threshold_met(&self) -> Option<bool> {
        self.delta_measured.map(|delta| (self.d_measured as f64).powi(12) * delta < 1e-5)
    }

    /// Dense-free bundle whose middle operator is the identity on `region`.
    pub fn identity(h: &LocalHamiltonian, region: Region, case: Case) -> Result<Self> {
        let dims = vec![h.d(); region.len()];
        let eye = MatrixProductOperator::identity(&dims);
        let cheby = ChebyParams { k: 0, eta0: 0.0, eta1: 1.0, norm_bound: 2.0 };
        Ok(Self {
            region,
            case,
            middle: eye.segment(0, region.len()),
            truncated_mpo_m: h.restrict(&region)?.to_mpo(),
            d_measured: 1,
            delta_measured: None,
            delta_formula: 1.0,
            cheby,
            truncated_regions: Vec::new(),
            compression_error: 0.0,
            k_max_bond: 1,
            h_trunc_max_bond: 1,
        })
    }
}

/// The three truncation regions around `M = [a, b]`, inset by `ell` from each
/// cut. Chain ends are not cuts and are not inset.
pub fn truncation_regions(n: usize, m: &Region, ell: usize) -> Vec<Region> {
    let (i1, i2) = (m.start - 1, m.end);
    let mut out = Vec::new();
    let mut push = |lo: usize, hi: usize| {
        if lo >= 1 && hi <= n && hi > lo {
            out.push(Region { start: lo, end: hi });
        }
    };
    if i1 > ell {
        push(1, i1 - ell);
    }
    let lo = if i1 == 0 { 1 } else { i1 + ell + 1 };
    let hi = if i2 == n { n as isize } else { i2 as isize - ell as isize };
    if hi >= 1 {
        push(lo, hi as usize);
    }
    if i2 < n {
        push(i2 + ell + 1, n);
    }
    out
}

fn terms_outside(n: usize, regions: &[Region]) -> usize {
    (1..n).filter(|&i| !regions.iter().any(|r| r.start <= i && i < r.end)).count()
}

/// Builds the AGSP for block `m` of `h`: truncation of the three inset regions,
/// the Chebyshev filter with the case's energy window, and its middle slice.
pub fn generate(h: &LocalHamiltonian, m: Region, case: Case, energies: &EnergyInputs, cfg: &AgspConfig) -> Result<AgspBundle> {
    let n = h.n();
    if m.end > n || m.start == 0 || m.start > m.end {
        return Err(Error::Dimension(format!("block {m} outside {n} sites")));
    }
    if !(energies.gap.is_finite() && energies.gap > 0.0) {
        return Err(Error::Parameter("AGSP construction needs a positive gap".into()));
    }
    let regions = truncation_regions(n, &m, cfg.ell);
    let outside = terms_outside(n, &regions) as f64;
    let (h_trunc, norm_bound, eta0, eta1, truncated_mpo_m, truncated_regions) = match case {
        Case::Ff => {
            let hp = h.to_projectors()?;
            let h_trunc = ff_truncate_regions(&hp, &regions)?;
            let truncated = regions.iter().map(|r| TruncatedRegion { region: *r, energy_estimate: 0.0, soft: None }).collect();
            let norm_bound = 2.0 * regions.len() as f64 + outside;
            (h_trunc, norm_bound, 0.0, energies.gap / 8.0, hp.restrict(&m)?.to_mpo(), truncated)
        }
        Case::Dg | Case::Ld => {
            let cap = cfg.cluster_cap.unwrap_or_else(|| default_cluster_cap(h.d()));
            let sup = soft_series_sup(cfg.t, cfg.t_prime);
            let params = regions
                .iter()
                .map(|r| {
                    let eps = if m.contains(r) { (energies.eps_m - (m.len() - r.len()) as f64 - 3.0).max(0.0) } else { 0.0 };
                    Ok(SoftTruncParams::new(cfg.t, cfg.t_prime, *r, eps, cfg.mpo_error_target)?.with_cluster_cap(cap))
                })
                .collect::<Result<Vec<_>>>()?;
            let (h_trunc, reports) = soft_truncate_regions(h, &params)?;
            let norm_bound = outside
                + params
                    .iter()
                    .zip(&reports)
                    .map(|(p, r)| (p.energy_estimate + sup).min((p.region.len() - 1) as f64) + r.error_bound.min(1.0))
                    .sum::<f64>();
            let truncated = params
                .iter()
                .zip(reports)
                .map(|(p, r)| TruncatedRegion { region: p.region, energy_estimate: p.energy_estimate, soft: Some(r) })
                .collect();
            let hm = h.restrict(&m)?;
            let tm = if m.len() >= 2 {
                let p = SoftTruncParams::new(cfg.t, cfg.t_prime, hm.full_region(), (energies.eps_m - 3.0).max(0.0), cfg.mpo_error_target)?
                    .with_cluster_cap(cap);
                soft_truncate_mpo(&hm, &p)?.0
            } else {
                hm.to_mpo()
            };
            let (eta0, eta1) = match case {
                Case::Dg => (energies.ground_anchor + energies.gap / 10.0, energies.ground_anchor + 0.9 * energies.gap),
                _ => {
                    let (level_eta1, mu) = energies
                        .ld_window
                        .ok_or_else(|| Error::Parameter("low-density case needs an (η, μ) window".into()))?;
                    let log_n = (n as f64).ln().max(1.0);
                    (energies.ground_anchor + level_eta1 - mu / (2.0 * log_n), energies.ground_anchor + level_eta1)
                }
            };
            (h_trunc, norm_bound, eta0, eta1, tm, truncated)
        }
    };
    let cheby = ChebyParams::new(cfg.degree(), eta0, eta1, norm_bound.max(eta1 + 1e-6))?;
    let (k_mpo, compression_error) = build_agsp_mpo(&h_trunc, &cheby, cfg.max_bond, cfg.cutoff)?;
    let (i1, i2) = (m.start - 1, m.end);
    let middle = middle_segment(&k_mpo, i1, i2)?;
    let d_measured = middle.left_dim().max(middle.right_dim());
    let dim = h.d().checked_pow(n as u32).unwrap_or(usize::MAX);
    let delta_measured = if dim <= cfg.measure_dim { Some(measure_delta(&h_trunc, &k_mpo, eta1)?) } else { None };
    Ok(AgspBundle {
        region: m,
        case,
        middle,
        truncated_mpo_m,
        d_measured,
        delta_measured,
        delta_formula: cheby.delta_formula(),
        cheby,
        truncated_regions,
        compression_error,
        k_max_bond: k_mpo.max_bond(),
        h_trunc_max_bond: h_trunc.max_bond(),
    })
}

/// `max ‖K v‖²` over eigenvectors `v` of `H̃` with eigenvalue at least `eta1`.
pub fn measure_delta(h_trunc: &MatrixProductOperator, k_mpo: &MatrixProductOperator, eta1: f64) -> Result<f64> {
    let (vals, vecs) = eigh(&h_trunc.to_dense()?)?;
    let k = k_mpo.to_dense()?;
    let kv = k.matmul(&vecs)?;
    let cols = kv.cols();
    let mut worst = 0.0f64;
    for (j, &lam) in vals.iter().enumerate() {
        if lam >= eta1 {
            let w: f64 = (0..kv.rows()).map(|i| kv.entries()[i * cols + j].norm_sqr()).sum();
            worst = worst.max(w);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_constant_one() {
        let p = ChebyParams::new(0, 0.1, 0.9, 3.0).unwrap();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            assert_eq!(p.eval(x), 1.0);
        }
    }

    #[test]
    fn cubic_matches_closed_form() {
        let p = ChebyParams::new(3, 0.1, 0.9, 3.0).unwrap();
        let coeffs = p.monomial_coefficients().unwrap();
        for i in 0..50 {
            let x = -0.5 + 0.08 * i as f64;
            let y = p.map(x);
            let direct = (4.0 * y * y * y - 3.0 * y) / p.normalization();
            assert!((p.eval(x) - direct).abs() < 1e-10);
            assert!((eval_monomial(&coeffs, x) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn pinned_at_eta0_and_small_above_eta1() {
        let p = ChebyParams::new(12, 0.1, 0.9, 3.0).unwrap();
        assert!((p.eval(0.1) - 1.0).abs() < 1e-15);
        let bound = p.delta_formula().sqrt();
        for i in 0..=1000 {
            let x = 0.9 + 2.1 * i as f64 / 1000.0;
            assert!(p.eval(x).abs() <= bound);
        }
        for i in 0..=100 {
            assert!(p.eval(0.1 - 0.001 * i as f64) >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn recurrence_and_monomials_agree_up_to_twenty() {
        for k in 0..=20 {
            let p = ChebyParams::new(k, 0.0, 0.5, 2.0).unwrap();
            let c = p.monomial_coefficients().unwrap();
            for i in 0..=40 {
                let x = 2.0 * i as f64 / 40.0;
                let scale: f64 = c.iter().enumerate().map(|(j, cj)| cj.abs() * x.powi(j as i32)).sum();
                assert!((eval_monomial(&c, x) - p.eval(x)).abs() < 1e-9 * scale.max(1.0), "k={k} x={x}");
            }
        }
        assert!(ChebyParams::new(31, 0.0, 0.5, 2.0).unwrap().monomial_coefficients().is_err());
    }

    #[test]
    fn invalid_windows_are_rejected() {
        assert!(ChebyParams::new(2, 0.5, 0.5, 2.0).is_err());
        assert!(ChebyParams::new(2, 0.1, 2.0, 2.0).is_err());
        assert!(ChebyParams::new(2, f64::NAN, 0.5, 2.0).is_err());
    }

    use crate::hamiltonian::{build_model, ModelParams};
    use crate::tensor::{hermitian_function, DenseTensor};
    use crate::truncation::ff_truncate;

    fn pinned(n: usize) -> LocalHamiltonian {
        build_model("pinned", n, &ModelParams::new()).unwrap()
    }

    #[test]
    fn low_degrees_are_exact() {
        let h = build_model("tfi", 5, &ModelParams::new()).unwrap();
        let mpo = h.to_mpo();
        let p0 = ChebyParams::new(0, 0.0, 0.5, 5.0).unwrap();
        let (k0, e0) = build_agsp_mpo(&mpo, &p0, 16, 1e-12).unwrap();
        assert_eq!(e0, 0.0);
        assert!(k0.to_dense().unwrap().max_abs_diff(&DenseTensor::identity(32)) < 1e-14);
        let p1 = ChebyParams::new(1, 0.0, 0.5, 5.0).unwrap();
        let (k1, _) = build_agsp_mpo(&mpo, &p1, 16, 1e-12).unwrap();
        let expected = hermitian_function(&h.to_dense().unwrap(), |x| p1.eval(x)).unwrap();
        assert!(k1.to_dense().unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn agsp_shares_eigenvectors_with_truncated_hamiltonian() {
        let h = pinned(8);
        let ht = ff_truncate(&h, &Region::new(2, 7).unwrap()).unwrap();
        let p = ChebyParams::new(8, 0.0, 0.125, 8.0).unwrap();
        let (k, err) = build_agsp_mpo(&ht, &p, 64, 1e-12).unwrap();
        let (vals, vecs) = eigh(&ht.to_dense().unwrap()).unwrap();
        let kd = k.to_dense().unwrap();
        let kv = kd.matmul(&vecs).unwrap();
        let dim = vals.len();
        for (j, &lam) in vals.iter().enumerate() {
            let pk = p.eval(lam);
            let dev: f64 = (0..dim).map(|i| (kv.entries()[i * dim + j] - vecs.entries()[i * dim + j] * pk).norm_sqr()).sum::<f64>().sqrt();
            assert!(dev < 1e-6, "λ={lam} dev={dev}");
        }
        assert!(err < 1e-6);
    }

    #[test]
    fn slices_reassemble_the_agsp() {
        let h = pinned(8);
        let ht = ff_truncate(&h, &Region::new(2, 7).unwrap()).unwrap();
        let p = ChebyParams::new(8, 0.0, 0.125, 8.0).unwrap();
        let (k, _) = build_agsp_mpo(&ht, &p, 64, 1e-12).unwrap();
        let (i1, i2) = (2, 6);
        let parts = split_agsp(&k, i1, i2).unwrap();
        let gauged = k.weighted_gauge(i1, i2);
        let left = gauged.segment(0, i1);
        let right = gauged.segment(i2, 8);
        let (dl, dr) = (left.right_dim(), right.left_dim());
        assert_eq!(parts.len(), dl * dr);
        let mut acc = DenseTensor::zeros(&[256, 256]);
        for alpha in 0..dl {
            for beta in 0..dr {
                let l = left.slice(0, alpha).to_dense().unwrap();
                let r = right.slice(beta, 0).to_dense().unwrap();
                let a = parts[alpha * dr + beta].to_dense().unwrap();
                acc = acc.add(&l.kron(&a).kron(&r)).unwrap();
            }
        }
        assert!(acc.max_abs_diff(&k.to_dense().unwrap()) < 1e-9);
        let single = split_agsp(&k, 0, 4).unwrap();
        assert_eq!(single.len(), k.site_tensors()[3].shape()[3]);
        assert!(split_agsp(&k, 4, 4).is_err());
        assert!(split_agsp(&k, 2, 9).is_err());
    }

    #[test]
    fn product_operator_gives_one_segment() {
        let eye = MatrixProductOperator::identity(&[2; 4]);
        let parts = split_agsp(&eye, 1, 3).unwrap();
        assert_eq!(parts.len(), 1);
        let a = parts[0].to_dense().unwrap();
        let scale = a.get(&[0, 0]);
        assert!((scale.norm() - 2.0).abs() < 1e-12);
        assert!(a.max_abs_diff(&DenseTensor::identity(4).scale(scale)) < 1e-12);
    }

    #[test]
    fn ff_bundle_shrinks_excited_states() {
        let h = pinned(8);
        let cfg = AgspConfig { ell: 1, degree: Some(4), ..AgspConfig::default() };
        let energies = EnergyInputs { eps_m: 0.0, ground_anchor: 0.0, gap: 1.0, ld_window: None };
        let b = generate(&h, Region::new(3, 6).unwrap(), Case::Ff, &energies, &cfg).unwrap();
        let delta = b.delta_measured.unwrap();
        assert!(delta < 1.0, "Δ={delta}");
        assert!(b.d_measured <= 6usize.pow(4));
        assert!(b.count() <= b.d_measured * b.d_measured);
        assert_eq!(b.middle_ops().len(), b.count());
    }

    #[test]
    fn truncation_regions_leave_windows_at_cuts() {
        let r = truncation_regions(16, &Region::new(5, 12).unwrap(), 2);
        assert_eq!(r, vec![Region { start: 1, end: 2 }, Region { start: 7, end: 10 }, Region { start: 15, end: 16 }]);
        let r = truncation_regions(16, &Region::new(6, 12).unwrap(), 2);
        assert_eq!(r[0], Region { start: 1, end: 3 });
        let r = truncation_regions(8, &Region::new(1, 4).unwrap(), 2);
        assert_eq!(r, vec![Region { start: 1, end: 2 }, Region { start: 7, end: 8 }]);
        let r = truncation_regions(8, &Region::new(5, 8).unwrap(), 2);
        assert_eq!(r, vec![Region { start: 1, end: 2 }, Region { start: 7, end: 8 }]);
        let r = truncation_regions(8, &Region::new(1, 8).unwrap(), 2);
        assert_eq!(r, vec![Region { start: 1, end: 8 }]);
        let r = truncation_regions(8, &Region::new(1, 2).unwrap(), 2);
        assert_eq!(r, vec![Region { start: 5, end: 8 }]);
    }

    #[test]
    fn measured_shrinkage_decreases_with_degree() {
        let mut params = ModelParams::new();
        params.insert("g".into(), "1.5".into());
        let h = build_model("tfi", 6, &params).unwrap();
        let (vals, _) = eigh(&h.to_dense().unwrap()).unwrap();
        let gap = vals[1] - vals[0];
        let energies = EnergyInputs { eps_m: 0.0, ground_anchor: vals[0], gap, ld_window: None };
        let mut last = f64::INFINITY;
        for k in [2, 4, 8, 16] {
            let cfg = AgspConfig { degree: Some(k), ..AgspConfig::default() };
            let b = generate(&h, Region::new(3, 4).unwrap(), Case::Dg, &energies, &cfg).unwrap();
            let delta = b.delta_measured.unwrap();
            assert!(delta <= last + 1e-9, "k={k}: {delta} > {last}");
            assert!(delta <= b.delta_formula + 1e-8);
            last = delta;
        }
    }
}
