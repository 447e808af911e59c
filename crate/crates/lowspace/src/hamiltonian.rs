//! One-dimensional Hamiltonians `H = Σ_i h_i` with nearest-neighbour terms
//! normalized to `0 ≤ h_i ≤ 1`, plus a small model catalog.

use crate::error::{Error, Result};
use crate::mps::MatrixProductOperator;
use crate::tensor::{eigh, hermitian_function, thin_svd, DenseTensor, C64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Bound tolerance on term Hermiticity and spectrum.
pub const TERM_TOL: f64 = 1e-9;

/// Contiguous block of sites, 1-based and inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start < 1 || end < start {
            return Err(Error::Dimension(format!("invalid region [{start},{end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-based site range.
    pub fn sites(&self) -> std::ops::Range<usize> {
        self.start - 1..self.end
    }

    pub fn contains(&self, other: &Region) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn adjacent_to(&self, right: &Region) -> bool {
        self.end + 1 == right.start
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalHamiltonian {
    n: usize,
    d: usize,
    terms: Vec<DenseTensor>,
    pub gap_hint: Option<f64>,
    pub energy_window: Option<(f64, f64)>,
    pub degeneracy_hint: Option<usize>,
}

/// Model parameters as given on the command line (`key=value`).
pub type ModelParams = BTreeMap<String, String>;

fn param_f64(params: &ModelParams, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Parameter(format!("parameter {key}={v} is not a finite number"))),
    }
}

fn check_known(params: &ModelParams, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Parameter(format!("unknown model parameter {k}")));
        }
    }
    Ok(())
}

fn pauli() -> [DenseTensor; 3] {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        DenseTensor::new(vec![2, 2], vec![z, o, o, z]).unwrap(),
        DenseTensor::new(vec![2, 2], vec![z, -i, i, z]).unwrap(),
        DenseTensor::new(vec![2, 2], vec![o, z, z, -o]).unwrap(),
    ]
}

fn spin_one() -> [DenseTensor; 3] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| C64::new(re, im);
    let z = c(0.0, 0.0);
    [
        DenseTensor::new(vec![3, 3], vec![z, c(s, 0.0), z, c(s, 0.0), z, c(s, 0.0), z, c(s, 0.0), z]).unwrap(),
        DenseTensor::new(vec![3, 3], vec![z, c(0.0, -s), z, c(0.0, s), z, c(0.0, -s), z, c(0.0, s), z]).unwrap(),
        DenseTensor::from_real_diag(&[1.0, 0.0, -1.0]),
    ]
}

fn dot_product(ops: &[DenseTensor; 3]) -> DenseTensor {
    let d = ops[0].rows();
    let mut acc = DenseTensor::zeros(&[d * d, d * d]);
    for o in ops {
        acc = acc.add(&o.kron(o)).unwrap();
    }
    acc
}

/// Shifts every term to `λ_min = 0` and divides all of them by a common
/// factor `max(1, max_i(λ_max − λ_min))`.
fn normalize_terms(terms: Vec<DenseTensor>) -> Result<Vec<DenseTensor>> {
    let mut shifted = Vec::with_capacity(terms.len());
    let mut scale = 1.0f64;
    for t in terms {
        let (vals, _) = eigh(&t)?;
        let lo = vals[0];
        let hi = vals[vals.len() - 1];
        scale = scale.max(hi - lo);
        let k = t.rows();
        shifted.push(t.sub(&DenseTensor::identity(k).scale(C64::new(lo, 0.0)))?);
    }
    Ok(shifted
        .into_iter()
        .map(|t| {
            let h = t.scale(C64::new(1.0 / scale, 0.0));
            hermitize(&h)
        })
        .collect())
}

fn hermitize(h: &DenseTensor) -> DenseTensor {
    h.add(&h.adjoint()).unwrap().scale(C64::new(0.5, 0.0))
}

fn validate_term(t: &DenseTensor, d: usize, index: usize) -> Result<()> {
    if t.rank() != 2 || t.rows() != d * d || t.cols() != d * d {
        return Err(Error::Dimension(format!("term {index} is not a {0}x{0} matrix", d * d)));
    }
    if t.entries().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric(format!("term {index} has non-finite entries")));
    }
    let herm = t.hermiticity_defect();
    if herm > TERM_TOL {
        return Err(Error::Contract(format!("term {index} is not Hermitian (defect {herm:.2e})")));
    }
    let (vals, _) = eigh(&hermitize(t))?;
    let (lo, hi) = (vals[0], vals[vals.len() - 1]);
    if lo < -TERM_TOL || hi > 1.0 + TERM_TOL {
        return Err(Error::Contract(format!(
            "term {index} has spectrum [{lo:.3e}, {hi:.3e}] outside [0,1]"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct CustomFile {
    n: usize,
    d: usize,
    terms: Vec<Vec<C64>>,
    #[serde(default)]
    gap_hint: Option<f64>,
    #[serde(default)]
    energy_window: Option<(f64, f64)>,
    #[serde(default)]
    degeneracy_hint: Option<usize>,
}

impl LocalHamiltonian {
    pub fn new(n: usize, d: usize, terms: Vec<DenseTensor>) -> Result<Self> {
        if n < 1 || d < 2 {
            return Err(Error::Dimension(format!("need n ≥ 1 and d ≥ 2, got n={n}, d={d}")));
        }
        if terms.len() != n - 1 {
            return Err(Error::Dimension(format!("{} terms for {n} sites", terms.len())));
        }
        for (i, t) in terms.iter().enumerate() {
            validate_term(t, d, i)?;
        }
        let terms = terms.iter().map(hermitize).collect();
        Ok(Self { n, d, terms, gap_hint: None, energy_window: None, degeneracy_hint: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[DenseTensor] {
        &self.terms
    }

    pub fn full_region(&self) -> Region {
        Region { start: 1, end: self.n }
    }

    pub fn with_gap_hint(mut self, gamma: f64) -> Self {
        self.gap_hint = Some(gamma);
        self
    }

    pub fn with_energy_window(mut self, eta: f64, mu: f64) -> Self {
        self.energy_window = Some((eta, mu));
        self
    }

    pub fn with_degeneracy_hint(mut self, r: usize) -> Self {
        self.degeneracy_hint = Some(r);
        self
    }

    /// Loads a custom model: `{"n":…, "d":…, "terms":[[[re,im],…],…]}`, each
    /// term a row-major `d²×d²` matrix.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CustomFile = serde_json::from_str(text)?;
        if raw.n < 2 {
            return Err(Error::Parameter("custom model needs n ≥ 2".into()));
        }
        let dd = raw.d * raw.d;
        let terms = raw
            .terms
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                DenseTensor::new(vec![dd, dd], t)
                    .map_err(|_| Error::Dimension(format!("term {i} does not have {} entries", dd * dd)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = Self::new(raw.n, raw.d, terms)?;
        h.gap_hint = raw.gap_hint;
        h.energy_window = raw.energy_window;
        h.degeneracy_hint = raw.degeneracy_hint;
        Ok(h)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            n: usize,
            d: usize,
            terms: Vec<&'a [C64]>,
            gap_hint: Option<f64>,
            energy_window: Option<(f64, f64)>,
            degeneracy_hint: Option<usize>,
        }
        serde_json::to_string(&Out {
            n: self.n,
            d: self.d,
            terms: self.terms.iter().map(|t| t.entries()).collect(),
            gap_hint: self.gap_hint,
            energy_window: self.energy_window,
            degeneracy_hint: self.degeneracy_hint,
        })
        .expect("serializable")
    }

    /// Replaces each term by the projector onto its range.
    pub fn to_projectors(&self) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let (vals, _) = eigh(t)?;
                if vals[0] < -TERM_TOL {
                    return Err(Error::Contract(format!("term {i} is not positive semidefinite")));
                }
                hermitian_function(t, |x| if x > TERM_TOL { 1.0 } else { 0.0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms, ..self.clone() })
    }

    /// Terms lying fully inside the region, as a chain on its sites.
    pub fn restrict(&self, region: &Region) -> Result<Self> {
        if region.end > self.n {
            return Err(Error::Dimension(format!("region {region} outside {} sites", self.n)));
        }
        let terms = self.terms[region.start - 1..region.end - 1].to_vec();
        Ok(Self {
            n: region.len(),
            d: self.d,
            terms,
            gap_hint: None,
            energy_window: None,
            degeneracy_hint: None,
        })
    }

    /// The same Hamiltonian on `n_target ≥ n` sites, each extra site pinned to
    /// `|0⟩` by a unit-gap term, so the spectrum below 1 is unchanged.
    pub fn padded(&self, n_target: usize) -> Result<Self> {
        if n_target < self.n {
            return Err(Error::Dimension("cannot pad to fewer sites".into()));
        }
        let d = self.d;
        let mut pin = DenseTensor::identity(d);
        pin.entries_mut()[0] = C64::new(0.0, 0.0);
        let pin_right = DenseTensor::identity(d).kron(&pin);
        let mut terms = self.terms.clone();
        terms.extend(std::iter::repeat_n(pin_right, n_target - self.n));
        Ok(Self { n: n_target, d, terms, ..self.clone() })
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let dim = self
            .d
            .checked_pow(self.n as u32)
            .filter(|&x| x.saturating_mul(x) <= crate::mps::MAX_DENSE_ENTRIES)
            .ok_or_else(|| Error::Resource(format!("dense Hamiltonian on {} sites", self.n)))?;
        let mut h = DenseTensor::zeros(&[dim, dim]);
        for i in 0..self.terms.len() {
            h = h.add(&self.embedded_term(i))?;
        }
        Ok(h)
    }

    /// `1 ⊗ h_i ⊗ 1` on the full chain.
    pub fn embedded_term(&self, i: usize) -> DenseTensor {
        let left = DenseTensor::identity(self.d.pow(i as u32));
        let right = DenseTensor::identity(self.d.pow((self.n - i - 2) as u32));
        left.kron(&self.terms[i]).kron(&right)
    }

    /// Sum of nearest-neighbour terms as an MPO with bond `2 + rank(h_i)` at cut `i+1`.
    pub fn to_mpo(&self) -> MatrixProductOperator {
        let d = self.d;
        let n = self.n;
        if n == 1 {
            return MatrixProductOperator::zero(&[d]);
        }
        let split: Vec<(Vec<DenseTensor>, Vec<DenseTensor>)> = self.terms.iter().map(|t| operator_schmidt(t, d)).collect();
        let eye = DenseTensor::identity(d);
        let mut sites = Vec::with_capacity(n);
        for j in 0..n {
            // left channels: 0 finished, 1 not started, 2.. pending right factors of term j-1
            let left_pending = if j > 0 { split[j - 1].1.len() } else { 0 };
            let right_pending = if j + 1 < n { split[j].0.len() } else { 0 };
            let lch = if j == 0 { 1 } else { 2 + left_pending };
            let rch = if j + 1 == n { 1 } else { 2 + right_pending };
            let mut w = DenseTensor::zeros(&[lch, d, d, rch]);
            let mut put = |l: usize, r: usize, op: &DenseTensor| {
                let e = w.entries_mut();
                for o in 0..d {
                    for i in 0..d {
                        e[((l * d + o) * d + i) * rch + r] += op.entries()[o * d + i];
                    }
                }
            };
            let not_started = if j == 0 { 0 } else { 1 };
            if j + 1 < n {
                put(not_started, 1, &eye);
                for (k, a) in split[j].0.iter().enumerate() {
                    put(not_started, 2 + k, a);
                }
            }
            if j > 0 {
                put(0, 0, &eye);
                for (k, b) in split[j - 1].1.iter().enumerate() {
                    put(2 + k, 0, b);
                }
            }
            sites.push(w);
        }
        MatrixProductOperator::from_sites_unchecked(sites)
    }

    /// Lower bound on the spectral gap if known, else `None`.
    pub fn gap(&self) -> Option<f64> {
        self.gap_hint
    }
}

/// `h = Σ_k A_k ⊗ B_k` with `σ_k` split evenly between the factors.
pub(crate) fn operator_schmidt(h: &DenseTensor, d: usize) -> (Vec<DenseTensor>, Vec<DenseTensor>) {
    let t = h.clone().reshaped(&[d, d, d, d]).permuted(&[0, 2, 1, 3]).reshaped(&[d * d, d * d]);
    let (u, s, v) = thin_svd(t.as_mat());
    let top = s.first().copied().unwrap_or(0.0);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (k, &sk) in s.iter().enumerate() {
        if sk <= 1e-14 * top.max(1e-300) || sk == 0.0 {
            break;
        }
        let r = sk.sqrt();
        a.push(DenseTensor::matrix_from_fn(d, d, |o, i| u[(o * d + i, k)] * r));
        b.push(DenseTensor::matrix_from_fn(d, d, |o, i| v[(o * d + i, k)].conj() * r));
    }
    (a, b)
}

/// Builds a catalog model. `custom` reads the file named by the `file` parameter.
pub fn build_model(name: &str, n: usize, params: &ModelParams) -> Result<LocalHamiltonian> {
    if n < 2 {
        return Err(Error::Parameter(format!("model needs n ≥ 2, got {n}")));
    }
    match name {
        "pinned" => {
            check_known(params, &[])?;
            let mut t = DenseTensor::identity(4);
            t.entries_mut()[0] = C64::new(0.0, 0.0);
            Ok(LocalHamiltonian::new(n, 2, vec![t; n - 1])?.with_gap_hint(1.0).with_degeneracy_hint(1))
        }
        "aklt" => {
            check_known(params, &[])?;
            let ss = dot_product(&spin_one());
            let p2 = ss
                .scale(C64::new(0.5, 0.0))
                .add(&ss.matmul(&ss)?.scale(C64::new(1.0 / 6.0, 0.0)))?
                .add(&DenseTensor::identity(9).scale(C64::new(1.0 / 3.0, 0.0)))?;
            let p2 = hermitize(&p2);
            Ok(LocalHamiltonian::new(n, 3, vec![p2; n - 1])?.with_gap_hint(0.3).with_degeneracy_hint(4))
        }
        "tfi" => {
            check_known(params, &["g"])?;
            let g = param_f64(params, "g", 1.0)?;
            let [x, _, z] = pauli();
            let eye = DenseTensor::identity(2);
            let zz = z.kron(&z);
            let terms = (0..n - 1)
                .map(|i| {
                    let wl = if i == 0 { 1.0 } else { 0.5 };
                    let wr = if i == n - 2 { 1.0 } else { 0.5 };
                    let field = x.kron(&eye).scale(C64::new(wl, 0.0)).add(&eye.kron(&x).scale(C64::new(wr, 0.0)))?;
                    zz.add(&field.scale(C64::new(g, 0.0))).map(|t| t.scale(C64::new(-1.0, 0.0)))
                })
                .collect::<Result<Vec<_>>>()?;
            LocalHamiltonian::new(n, 2, normalize_terms(terms)?)
        }
        "heisenberg" => {
            check_known(params, &[])?;
            let t = dot_product(&pauli()).scale(C64::new(0.25, 0.0));
            LocalHamiltonian::new(n, 2, normalize_terms(vec![t; n - 1])?)
        }
        "custom" => {
            check_known(params, &["file"])?;
            let file = params
                .get("file")
                .ok_or_else(|| Error::Parameter("custom model needs a file parameter".into()))?;
            let h = LocalHamiltonian::load(Path::new(file))?;
            if h.n() != n {
                return Err(Error::Parameter(format!("custom file has n={}, requested n={n}", h.n())));
            }
            Ok(h)
        }
        other => Err(Error::Parameter(format!("unknown model {other}"))),
    }
}

pub const MODEL_NAMES: &[&str] = &["pinned", "aklt", "tfi", "heisenberg", "custom"];

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, &str)]) -> ModelParams {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn pinned_ground_state_is_all_zero() {
        let h = build_model("pinned", 4, &ModelParams::new()).unwrap();
        let dense = h.to_dense().unwrap();
        for r in 0..16 {
            assert!(dense.get(&[r, 0]).norm() < 1e-15);
        }
    }

    #[test]
    fn catalog_terms_are_normalized() {
        for name in ["pinned", "aklt", "tfi", "heisenberg"] {
            for n in [2, 5] {
                let h = build_model(name, n, &params(if name == "tfi" { &[("g", "1.5")] } else { &[] })).unwrap();
                for t in h.terms() {
                    let (v, _) = eigh(t).unwrap();
                    assert!(v[0] > -1e-9 && v[v.len() - 1] < 1.0 + 1e-9, "{name}");
                }
            }
        }
    }

    #[test]
    fn aklt_terms_are_projectors() {
        let h = build_model("aklt", 3, &ModelParams::new()).unwrap();
        let t = &h.terms()[0];
        assert!(t.matmul(t).unwrap().sub(t).unwrap().norm() < 1e-12);
        assert!((t.trace().re - 5.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_model_and_params_are_rejected() {
        assert!(build_model("ising3d", 4, &ModelParams::new()).is_err());
        assert!(build_model("tfi", 4, &params(&[("h", "1")])).is_err());
        assert!(build_model("tfi", 4, &params(&[("g", "abc")])).is_err());
        assert!(build_model("pinned", 1, &ModelParams::new()).is_err());
    }

    #[test]
    fn projectorization() {
        let diag = DenseTensor::from_real_diag(&[0.0, 0.5, 0.5, 1.0]);
        let h = LocalHamiltonian::new(2, 2, vec![diag]).unwrap();
        let p = h.to_projectors().unwrap();
        assert!(p.terms()[0].sub(&DenseTensor::from_real_diag(&[0.0, 1.0, 1.0, 1.0])).unwrap().norm() < 1e-12);
        let pp = p.to_projectors().unwrap();
        assert!(pp.terms()[0].sub(&p.terms()[0]).unwrap().norm() < 1e-12);
    }

    #[test]
    fn restriction() {
        let h = build_model("pinned", 6, &ModelParams::new()).unwrap();
        assert_eq!(h.restrict(&h.full_region()).unwrap().terms(), h.terms());
        let sub = h.restrict(&Region::new(2, 4).unwrap()).unwrap();
        assert_eq!(sub.terms().len(), 2);
        let one = h.restrict(&Region::new(3, 3).unwrap()).unwrap();
        assert_eq!(one.n(), 1);
        assert!(one.to_mpo().to_dense().unwrap().norm() == 0.0);
        assert!(h.restrict(&Region::new(5, 7).unwrap()).is_err());
    }

    #[test]
    fn mpo_matches_dense_sum() {
        for (name, n) in [("pinned", 2), ("tfi", 6), ("aklt", 4), ("heisenberg", 5)] {
            let h = build_model(name, n, &params(if name == "tfi" { &[("g", "1.2")] } else { &[] })).unwrap();
            let mpo = h.to_mpo();
            let diff = mpo.to_dense().unwrap().sub(&h.to_dense().unwrap()).unwrap().norm();
            assert!(diff < 1e-10, "{name}: {diff}");
            assert!(mpo.bond_dims().iter().all(|&b| b <= h.d() * h.d() + 2));
        }
    }

    #[test]
    fn padding_keeps_low_spectrum() {
        let h = build_model("tfi", 3, &params(&[("g", "0.7")])).unwrap();
        let p = h.padded(4).unwrap();
        let (a, _) = eigh(&h.to_dense().unwrap()).unwrap();
        let (b, _) = eigh(&p.to_dense().unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b).take_while(|(x, _)| **x < a[0] + 1.0 - 1e-9) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn custom_json_roundtrip_and_validation() {
        let h = build_model("aklt", 3, &ModelParams::new()).unwrap();
        let back = LocalHamiltonian::from_json(&h.to_json()).unwrap();
        assert_eq!(back.terms(), h.terms());
        let bad = r#"{"n":2,"d":2,"terms":[[[2,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]]}"#;
        let err = LocalHamiltonian::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("term 0"), "{err}");
    }
}
