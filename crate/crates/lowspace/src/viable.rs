//! Viable sets: an orthonormal MPS basis on a block of qudits, with the
//! tensoring, random sampling, AGSP error reduction and trimming steps that
//! build them up over the merge tree.

use serde::{Deserialize, Serialize};

use crate::agsp::AgspBundle;
use crate::error::{Error, Result};
use crate::hamiltonian::Region;
use crate::mps::{MatrixProductState, SpanReport, StateFamily, TrimReport, Truncation};
use crate::oracle::DenseSubspace;
use crate::tensor::{haar_isometry_with, seeded_rng, DenseTensor};

/// Relative Gram eigenvalue below which a direction counts as zero.
pub const SPAN_REL_TOL: f64 = 1e-12;

/// Orthonormal basis on `region`, stored as one shared chain.
#[derive(Clone, Debug)]
pub struct ViableSet {
    region: Region,
    family: StateFamily,
    provenance: Vec<String>,
}

fn gram_deviation(fam: &StateFamily) -> f64 {
    let g = fam.gram();
    let s = fam.aux_dim();
    g.sub(&DenseTensor::identity(s)).map(|d| d.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)).unwrap_or(f64::INFINITY)
}

impl ViableSet {
    pub fn new(region: Region, basis: &[MatrixProductState]) -> Result<Self> {
        let family = StateFamily::from_states(basis)?;
        Self::from_family(region, family, "given")
    }

    pub fn from_family(region: Region, family: StateFamily, origin: &str) -> Result<Self> {
        if family.len() != region.len() {
            return Err(Error::Dimension(format!("basis has {} sites, region {region} has {}", family.len(), region.len())));
        }
        if family.left_dim() != 1 {
            return Err(Error::Dimension("basis family has an open left leg".into()));
        }
        let dev = gram_deviation(&family);
        if dev > 1e-8 {
            return Err(Error::Contract(format!("basis is not orthonormal (Gram deviation {dev:.2e})")));
        }
        Ok(Self { region, family, provenance: vec![origin.to_string()] })
    }

    /// All of `C^d` on one site.
    pub fn full_site(site: usize, d: usize) -> Result<Self> {
        let region = Region::new(site, site)?;
        let basis = (0..d).map(|k| MatrixProductState::product_state(d, &[k])).collect::<Result<Vec<_>>>()?;
        let mut v = Self::new(region, &basis)?;
        v.provenance = vec![format!("site {site}: full basis of C^{d}")];
        Ok(v)
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn dim(&self) -> usize {
        self.family.aux_dim()
    }

    pub fn family(&self) -> &StateFamily {
        &self.family
    }

    pub fn basis(&self) -> Result<Vec<MatrixProductState>> {
        self.family.members()
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn max_bond(&self) -> usize {
        self.family.max_bond()
    }

    pub fn gram_deviation(&self) -> f64 {
        gram_deviation(&self.family)
    }

    /// Dense span on the region's sites (small regions only).
    pub fn to_dense(&self) -> Result<DenseSubspace> {
        DenseSubspace::new(self.family.to_dense()?)
    }

    fn derived(&self, region: Region, family: StateFamily, step: String) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Self { region, family, provenance }
    }
}

/// `v1 ⊗ v2` on the union of two adjacent regions.
pub fn tensor_sets(v1: &ViableSet, v2: &ViableSet) -> Result<ViableSet> {
    if !v1.region.adjacent_to(&v2.region) {
        return Err(Error::Dimension(format!("regions {} and {} are not adjacent", v1.region, v2.region)));
    }
    let family = v1.family.tensor(&v2.family)?;
    let region = Region::new(v1.region.start, v2.region.end)?;
    let mut out = v1.derived(region, family, format!("tensor {}⊗{} → dim {}", v1.region, v2.region, v1.dim() * v2.dim()));
    out.provenance.splice(0..0, v2.provenance.iter().map(|p| format!("right: {p}")));
    Ok(out)
}

/// A Haar-random `s`-dimensional subspace of `w`.
pub fn random_subspace(w: &ViableSet, s: usize, seed: u64, real: bool) -> Result<ViableSet> {
    if s == 0 || s > w.dim() {
        return Err(Error::Parameter(format!("sample dimension {s} must lie in 1..={}", w.dim())));
    }
    let mut rng = seeded_rng(seed);
    let q = haar_isometry_with(w.dim(), s, &mut rng, real)?;
    let family = w.family.recombine(&q)?;
    Ok(w.derived(w.region, family, format!("random {s} of {}", w.dim())))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReduceReport {
    pub input_dim: usize,
    pub operator_count: usize,
    pub spanned: usize,
    pub output_dim: usize,
    pub capped: bool,
    pub span_discarded_weight: f64,
    pub trim_discarded_weight: f64,
    /// Weight dropped while the operators were applied.
    pub apply_discarded_weight: f64,
    pub max_bond_after: usize,
    /// `√(ℓ·b·s)·ξ` for the trimmed set.
    pub trim_penalty: f64,
}

/// Bond cap and floor used while an operator is zipped into a family.
pub fn apply_truncation(max_bond: usize) -> Truncation {
    Truncation::relative(max_bond.saturating_mul(2), 1e-13)
}

/// Orthonormal span of the family with its trimmed version, re-orthonormalized.
fn span_and_trim(
    fam: &StateFamily,
    xi: f64,
    max_bond: usize,
    cap: Option<usize>,
) -> Result<(StateFamily, SpanReport, Option<TrimReport>)> {
    let (spanned, span) = fam.orthonormalize_relative(&Truncation::new(max_bond, 0.0), SPAN_REL_TOL, cap)?;
    if xi <= 0.0 {
        return Ok((spanned, span, None));
    }
    let (trimmed, trim) = spanned.trim(xi)?;
    let (clean, _) = trimmed.orthonormalize_relative(&Truncation::exact(), SPAN_REL_TOL, None)?;
    Ok((clean, span, Some(trim)))
}

/// `Trim_ξ(Span{A_i v})` over every middle operator of the bundle, keeping at
/// most `s_target` directions of largest weight.
pub fn error_reduce(
    v: &ViableSet,
    bundle: &AgspBundle,
    xi: f64,
    max_bond: usize,
    s_target: Option<usize>,
) -> Result<(ViableSet, ReduceReport)> {
    if bundle.region != v.region {
        return Err(Error::Dimension(format!("bundle for {} applied to a set on {}", bundle.region, v.region)));
    }
    if xi < 0.0 || max_bond == 0 {
        return Err(Error::Parameter("need ξ ≥ 0 and a positive bond cap".into()));
    }
    let (applied, lost) = v.family.apply_compressed(bundle.middle.site_tensors(), &apply_truncation(max_bond))?;
    let (family, span, trim) = span_and_trim(&applied, xi, max_bond, s_target)?;
    let out_dim = family.aux_dim();
    let max_bond_after = family.max_bond();
    let report = ReduceReport {
        input_dim: v.dim(),
        operator_count: bundle.count(),
        spanned: span.kept,
        output_dim: out_dim,
        capped: span.capped,
        span_discarded_weight: span.discarded_weight,
        trim_discarded_weight: trim.as_ref().map_or(0.0, |t| t.discarded_weight_total),
        apply_discarded_weight: lost,
        max_bond_after,
        trim_penalty: ((v.region.len() * max_bond_after * out_dim) as f64).sqrt() * xi,
    };
    let step = format!("reduce D={} ops={} → dim {out_dim}{}", bundle.d_measured, bundle.count(), if span.capped { " (capped)" } else { "" });
    Ok((v.derived(v.region, family, step), report))
}

/// Collective ξ-trimming of a viable set.
pub fn trim(v: &ViableSet, xi: f64) -> Result<(ViableSet, TrimReport)> {
    let (trimmed, report) = v.family.trim(xi)?;
    let (clean, _) = trimmed.orthonormalize_relative(&Truncation::exact(), SPAN_REL_TOL, None)?;
    let b = report.max_bond_after;
    Ok((v.derived(v.region, clean, format!("trim ξ={xi:.1e}")), report.with_rank_bound(b)))
}

/// Applies an arbitrary operator segment on the region and re-spans the result.
pub fn apply_and_span(v: &ViableSet, op_sites: &[DenseTensor], xi: f64, max_bond: usize, cap: Option<usize>) -> Result<ViableSet> {
    let (applied, _) = v.family.apply_compressed(op_sites, &apply_truncation(max_bond))?;
    let (family, _, _) = span_and_trim(&applied, xi, max_bond, cap)?;
    Ok(v.derived(v.region, family, "apply".into()))
}

/// Coefficients combining the members: `u'_k = Σ_i u_i c_{ik}`.
pub fn recombine(v: &ViableSet, coeffs: &DenseTensor, step: &str) -> Result<ViableSet> {
    let fam = v.family.recombine(coeffs)?;
    let dev = gram_deviation(&fam);
    if dev > 1e-8 {
        return Err(Error::Contract(format!("recombination is not an isometry (Gram deviation {dev:.2e})")));
    }
    Ok(v.derived(v.region, fam, step.to_string()))
}
