//! Self-checks of the building blocks against the dense oracle. Each suite
//! returns named checks with the measured quantity and the bound it is held to.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agsp::{build_agsp_mpo, generate, truncation_regions, AgspConfig, Case, ChebyParams, EnergyInputs};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_model, LocalHamiltonian, ModelParams, Region};
use crate::mps::MatrixProductState;
use crate::oracle::{
    exact_spectrum, extend, ground_space, lowest_eigenpairs, spectral_subspace, viability, viability_witness, DenseLimits,
    DenseSubspace,
};
use crate::solver::{low_space, SolveConfig};
use crate::tensor::{eigh, hermitian_function, seeded_rng, split_seed, DenseTensor, SeededRng, C64};
use crate::truncation::{
    cluster_error_bound, cluster_expansion_mpo, dl_operator, ff_truncate_regions, soft_series_eval, soft_series_sup,
    soft_truncate_dense, soft_truncate_mpo, SoftTruncParams,
};
use crate::viable::{error_reduce, random_subspace, tensor_sets, trim, ViableSet};

pub const SUITES: &[&str] = &["viable", "agsp", "cluster", "trim", "dl", "truncation", "solver"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub n: usize,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    /// Records `measured ≤ bound`.
    fn at_most(&mut self, name: impl Into<String>, measured: f64, bound: f64) {
        self.0.push(Check { name: name.into(), passed: measured <= bound, measured, bound });
    }

    /// Records `measured ≥ bound`.
    fn at_least(&mut self, name: impl Into<String>, measured: f64, bound: f64) {
        self.0.push(Check { name: name.into(), passed: measured >= bound, measured, bound });
    }
}

pub fn run_suite(suite: &str, n: usize, seed: u64) -> Result<SuiteReport> {
    let mut c = Checks::default();
    match suite {
        "viable" => viable_suite(n, seed, &mut c)?,
        "agsp" => agsp_suite(n, seed, &mut c)?,
        "cluster" => cluster_suite(n, seed, &mut c)?,
        "trim" => trim_suite(n, seed, &mut c)?,
        "dl" => dl_suite(n, seed, &mut c)?,
        "truncation" => truncation_suite(n, seed, &mut c)?,
        "solver" => solver_suite(n, seed, &mut c)?,
        other => return Err(Error::Parameter(format!("unknown suite '{other}' (known: {})", SUITES.join(", ")))),
    }
    let checks = c.0;
    Ok(SuiteReport { suite: suite.to_string(), n, seed, passed: checks.iter().all(|c| c.passed), checks })
}

fn model(name: &str, n: usize) -> Result<LocalHamiltonian> {
    build_model(name, n, &ModelParams::new())
}

fn gaussian(rng: &mut SeededRng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_vector(len: usize, rng: &mut SeededRng) -> Vec<C64> {
    (0..len).map(|_| gaussian(rng)).collect()
}

fn normalized(v: &[C64]) -> Vec<C64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / norm).collect()
}

/// Projector onto the span of `vectors`.
fn projector(vectors: &[Vec<C64>]) -> Result<DenseTensor> {
    Ok(DenseSubspace::from_vectors(vectors, 1e-10)?.projector())
}

/// A chain of rank-2 projectors that all annihilate one random product state.
pub fn random_ff_chain(n: usize, seed: u64) -> Result<LocalHamiltonian> {
    let mut rng = seeded_rng(seed);
    let phis: Vec<Vec<C64>> = (0..n).map(|_| normalized(&random_vector(2, &mut rng))).collect();
    let mut terms = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let pair: Vec<C64> = phis[i].iter().flat_map(|a| phis[i + 1].iter().map(move |b| a * b)).collect();
        let keep = DenseTensor::identity(4).sub(&projector(&[pair])?)?;
        let raw: Vec<Vec<C64>> = (0..2)
            .map(|_| {
                let v = DenseTensor::new(vec![4, 1], random_vector(4, &mut rng))?;
                Ok(keep.matmul(&v)?.into_entries())
            })
            .collect::<Result<_>>()?;
        terms.push(projector(&raw)?);
    }
    LocalHamiltonian::new(n, 2, terms)
}

/// Random local terms rescaled to spectra in `[0, 1]`.
fn random_chain(n: usize, d: usize, seed: u64) -> Result<LocalHamiltonian> {
    let mut rng = seeded_rng(seed);
    let terms = (0..n - 1)
        .map(|_| {
            let h = crate::tensor::random_hermitian(d * d, &mut rng);
            let (vals, _) = eigh(&h)?;
            let (lo, hi) = (vals[0], vals[vals.len() - 1]);
            hermitian_function(&h, |x| (x - lo) / (hi - lo))
        })
        .collect::<Result<Vec<_>>>()?;
    LocalHamiltonian::new(n, d, terms)
}

fn set_from_vectors(region: Region, vectors: &[Vec<C64>], d: usize) -> Result<ViableSet> {
    let sub = DenseSubspace::from_vectors(vectors, 1e-10)?;
    let states = (0..sub.dim())
        .map(|j| MatrixProductState::from_dense(&sub.column(j), region.len(), d))
        .collect::<Result<Vec<_>>>()?;
    ViableSet::new(region, &states)
}

/// Schmidt vectors of `psi` across the cut after `k` of `n` sites, strongest first.
fn schmidt_vectors(psi: &[C64], n: usize, d: usize, k: usize) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>)> {
    let (rows, cols) = (d.pow(k as u32), d.pow((n - k) as u32));
    let m = DenseTensor::matrix_from_fn(rows, cols, |r, c| psi[r * cols + c]);
    let left_rho = m.matmul(&m.adjoint())?;
    let right_rho = m.conj().adjoint().matmul(&m.conj())?;
    let pick = |rho: &DenseTensor| -> Result<Vec<Vec<C64>>> {
        let (_, vecs) = eigh(rho)?;
        let dim = rho.rows();
        Ok((0..dim).rev().map(|j| (0..dim).map(|r| vecs.get(&[r, j])).collect()).collect())
    };
    Ok((pick(&left_rho)?, pick(&right_rho)?))
}

fn viable_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let limits = DenseLimits::default();
    let (mut worst_merge, mut worst_reduce, mut worst_witness) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut retention = Vec::new();
    let (q, s) = (9usize, 3usize);
    for inst in 0..20u64 {
        let n_i = 6 + inst as usize % (n.clamp(6, 8) - 5);
        let local = split_seed(seed, &[inst]);
        let mut params = ModelParams::new();
        params.insert("g".into(), format!("{}", 0.5 + seeded_rng(local).random::<f64>()));
        let tfi = build_model("tfi", n_i, &params)?;
        let (_, vecs) = lowest_eigenpairs(&tfi, 1, &limits)?;
        let target = DenseSubspace::new(vecs)?;
        let psi = target.column(0);
        let k = n_i / 2;
        let (left, right) = schmidt_vectors(&psi, n_i, 2, k)?;
        let mut rng = seeded_rng(split_seed(local, &[1]));
        let mut noisy = |mut vs: Vec<Vec<C64>>, len: usize| {
            vs.push(random_vector(len, &mut rng));
            vs
        };
        let (ra, rb) = (Region::new(1, k)?, Region::new(k + 1, n_i)?);
        let v1 = set_from_vectors(ra, &noisy(left[1..3].to_vec(), 1 << k), 2)?;
        let v2 = set_from_vectors(rb, &noisy(right[..2].to_vec(), 1 << (n_i - k)), 2)?;
        let d1 = viability(&v1.to_dense()?, &ra, n_i, 2, &target)?;
        let d2 = viability(&v2.to_dense()?, &rb, n_i, 2, &target)?;
        let w = tensor_sets(&v1, &v2)?;
        let full = Region::new(1, n_i)?;
        let dw = viability(&w.to_dense()?, &full, n_i, 2, &target)?;
        worst_merge = worst_merge.max(dw - (d1 + d2));

        let sampled = random_subspace(&w, s, split_seed(local, &[2]), false)?;
        let ds = viability(&sampled.to_dense()?, &full, n_i, 2, &target)?;
        if dw < 1.0 - 1e-9 {
            retention.push((1.0 - ds) / (1.0 - dw));
        }
        debug_assert_eq!(w.dim(), q);

        let s_ext = extend(&v1.to_dense()?, &ra, n_i, 2)?;
        if d1 < 1.0 - 1e-6 {
            let witness = viability_witness(&s_ext, &target, &[C64::new(1.0, 0.0)])?;
            let norm = witness.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            worst_witness = worst_witness.max(norm - 1.0 / (1.0 - d1));
        }

        let h = random_ff_chain(n_i, local)?;
        let (vals, _) = exact_spectrum(&h, &limits)?;
        let gap = vals.iter().copied().find(|v| *v > 1e-9).unwrap_or(1.0);
        let (_, target) = ground_space(&h, 1e-9, &limits)?;
        let region = Region::new(2, n_i - 1)?;
        let mut base = vec![C64::new(0.0, 0.0); 1 << (n_i - 2)];
        base[0] = C64::new(1.0, 0.0);
        let start = set_from_vectors(region, &[base, random_vector(1 << (n_i - 2), &mut seeded_rng(split_seed(local, &[3])))], 2)?;
        let before = viability(&start.to_dense()?, &region, n_i, 2, &target)?;
        if before < 1.0 - 1e-6 {
            let cfg = AgspConfig { ell: 1, degree: Some(6), ..AgspConfig::default() };
            let energies = EnergyInputs { eps_m: 0.0, ground_anchor: 0.0, gap, ld_window: None };
            let bundle = generate(&h, region, Case::Ff, &energies, &cfg)?;
            if let Some(delta) = bundle.delta_measured {
                let (out, _) = error_reduce(&start, &bundle, 0.0, 64, None)?;
                let after = viability(&out.to_dense()?, &region, n_i, 2, &target)?;
                worst_reduce = worst_reduce.max(after - delta / (1.0 - before).powi(2));
            }
        }
    }
    c.at_most("merged viability exceeds the sum of parts by at most", worst_merge, 1e-9);
    let count = retention.len() as f64;
    let mean = retention.iter().sum::<f64>() / count;
    let sd = (retention.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0)).sqrt();
    let expected = s as f64 / q as f64;
    c.at_most("mean retention of a random subspace deviates from s/q by", (mean - expected).abs(), 3.0 * sd / count.sqrt() + 1e-12);
    c.at_most("error reduction exceeds Δ/(1−δ)² by at most", worst_reduce, 1e-6);
    c.at_most("viability witness norm exceeds 1/(1−δ) by at most", worst_witness, 1e-6);
    Ok(())
}

fn agsp_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(3, 8);
    let limits = DenseLimits::default();
    let names = ["pinned", "tfi", "heisenberg", "random"];
    let (mut worst_eig, mut worst_low, mut worst_high) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for inst in 0..10u64 {
        let local = split_seed(seed, &[inst]);
        let name = names[inst as usize % names.len()];
        let h = if name == "random" { random_chain(n, 2, local)? } else { model(name, n)? };
        let (vals, vecs) = exact_spectrum(&h, &limits)?;
        let e0 = vals[0];
        let Some(first_excited) = vals.iter().copied().find(|v| *v > e0 + 1e-6) else { continue };
        let mut rng = seeded_rng(local);
        let k = 2 + 2 * rng.random_range(0..5usize);
        let eta0 = e0 + 0.25 * (first_excited - e0) * rng.random::<f64>();
        let eta1 = first_excited - 0.25 * (first_excited - eta0) * rng.random::<f64>();
        let norm_bound = (n - 1) as f64;
        let p = ChebyParams::new(k, eta0, eta1, norm_bound)?;
        let (k_mpo, _) = build_agsp_mpo(&h.to_mpo(), &p, 1 << 12, 1e-14)?;
        let kd = k_mpo.to_dense()?;
        let diag = vecs.adjoint().matmul(&kd)?.matmul(&vecs)?;
        let cap = p.delta_formula().sqrt();
        for (i, &lam) in vals.iter().enumerate() {
            let pk = p.eval(lam);
            for j in 0..vals.len() {
                let expect = if i == j { pk } else { 0.0 };
                worst_eig = worst_eig.max((diag.get(&[i, j]) - C64::new(expect, 0.0)).norm());
            }
            let kv = diag.get(&[i, i]).re;
            if lam <= eta0 {
                worst_low = worst_low.min(kv);
            }
            if lam >= eta1 {
                worst_high = worst_high.max(kv.abs() - cap);
            }
        }
    }
    c.at_most("AGSP eigenvalues deviate from the filter polynomial by", worst_eig, 1e-8);
    c.at_least("AGSP eigenvalue on the kept window is at least", worst_low, 1.0 - 1e-8);
    c.at_most("AGSP eigenvalue above the cut exceeds √Δ by at most", worst_high, 1e-8);
    Ok(())
}

fn cluster_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(2, 8);
    let chains = [("pinned", model("pinned", n)?), ("tfi", model("tfi", n)?), ("random", random_chain(n, 2, seed)?)];
    for (name, h) in &chains {
        let dense = h.to_dense()?;
        for beta in [0.1, 0.25] {
            let exact = hermitian_function(&dense, |x| (-beta * x).exp())?;
            for r in 2..=5usize {
                let m = cluster_expansion_mpo(h, beta, r, 0.0)?;
                let err = m.to_dense()?.sub(&exact)?.op_norm();
                c.at_most(format!("cluster expansion error ({name}, β={beta}, order {r})"), err, cluster_error_bound(n, beta, r));
                c.at_most(format!("cluster expansion bond ({name}, β={beta}, order {r})"), m.max_bond() as f64, (r * r * 2usize.pow(r as u32)) as f64);
            }
            let full = cluster_expansion_mpo(h, beta, n + 1, 0.0)?;
            c.at_most(format!("cluster expansion past the chain length is exact ({name}, β={beta})"), full.to_dense()?.max_abs_diff(&exact), 1e-9);
        }
    }
    Ok(())
}

fn trim_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(4, 10);
    let region = Region::new(1, n)?;
    let b = 2usize;
    for (inst, xi) in [0.01, 0.05, 0.1].into_iter().enumerate() {
        let mut rng = seeded_rng(split_seed(seed, &[inst as u64]));
        let targets = (0..2).map(|_| MatrixProductState::random(n, 2, b, &mut rng)).collect::<Result<Vec<_>>>()?;
        let extra = MatrixProductState::random(n, 2, 6, &mut rng)?;
        let vectors: Vec<Vec<C64>> = targets.iter().chain([&extra]).map(|s| s.to_dense()).collect::<Result<_>>()?;
        let t = DenseSubspace::from_vectors(&vectors[..2], 1e-10)?;
        let set = set_from_vectors(region, &vectors, 2)?;
        let s = set.dim();
        let before = viability(&set.to_dense()?, &region, n, 2, &t)?;
        let (trimmed, report) = trim(&set, xi)?;
        let after = viability(&trimmed.to_dense()?, &region, n, 2, &t)?;
        c.at_most(format!("trimming viability loss (ξ={xi})"), after - before, report.penalty_for(b) + 1e-6);
        let rank = report.bonds_after.iter().copied().max().unwrap_or(1) as f64;
        c.at_most(format!("trimmed Schmidt rank (ξ={xi})"), rank, s as f64 / (xi * xi));
    }
    Ok(())
}

fn dl_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(2, 8);
    let limits = DenseLimits::default();
    let chains = [("pinned", model("pinned", n)?), ("aklt", model("aklt", n.min(6))?), ("random", random_ff_chain(n, seed)?)];
    for (name, h) in &chains {
        let dl = dl_operator(h)?.to_dense()?;
        let (vals, vecs) = exact_spectrum(h, &limits)?;
        let images = dl.matmul(&vecs)?;
        let (mut upper, mut lower) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (j, &eps) in vals.iter().enumerate() {
            let eps = eps.max(0.0);
            let sq: f64 = (0..images.rows()).map(|r| images.get(&[r, j]).norm_sqr()).sum();
            upper = upper.max(sq - 1.0 / (eps / 4.0 + 1.0));
            lower = lower.max((1.0 - 4.0 * eps) - sq);
        }
        c.at_most(format!("detectability upper bound excess ({name})"), upper, 1e-9);
        c.at_most(format!("detectability lower bound excess ({name})"), lower, 1e-9);
    }
    Ok(())
}

fn truncation_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(4, 8);
    let limits = DenseLimits::default();
    let chains = [("pinned", model("pinned", n)?), ("aklt", model("aklt", n.min(6))?), ("random", random_ff_chain(n, seed)?)];
    for (name, h) in &chains {
        let m = h.n();
        let block = Region::new(m / 2, m / 2 + 1)?;
        let regions = truncation_regions(m, &block, 1);
        let ht = ff_truncate_regions(h, &regions)?;
        let (vals, _) = exact_spectrum(h, &limits)?;
        let (tvals, tvecs) = eigh(&ht.to_dense()?)?;
        let kernel = |v: &[f64]| v.iter().filter(|x| x.abs() < 1e-9).count();
        let (_, ground) = ground_space(h, 1e-9, &limits)?;
        let k = kernel(&tvals);
        let truncated_kernel = DenseTensor::matrix_from_fn(tvecs.rows(), k, |r, j| tvecs.get(&[r, j]));
        let diff = ground.projector().max_abs_diff(&DenseSubspace::new(truncated_kernel)?.projector());
        c.at_most(format!("truncated kernel differs from the ground space ({name})"), diff, 1e-9);
        let gamma = vals.iter().copied().find(|v| *v > 1e-9).unwrap_or(1.0);
        let tgap = tvals.iter().copied().find(|v| *v > 1e-9).unwrap_or(f64::INFINITY);
        c.at_least(format!("truncated gap relative to γ/8 ({name})"), tgap, gamma / 8.0);
        let d = h.d();
        c.at_most(format!("truncated operator bond ({name})"), ht.max_bond() as f64, (d * d + 2) as f64);
    }

    let (t, tp) = (12.0, 4usize);
    let (mut worst_series, mut top) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..=10_000 {
        let x = 10.0 * t * i as f64 / 10_000.0;
        let h = soft_series_eval(x, t, tp);
        worst_series = worst_series.max((h - x).abs() - (t / tp as f64) * (x / t).powi(tp as i32));
        top = top.max(h);
    }
    c.at_most("soft series deviation from x beyond its polynomial bound", worst_series, 1e-12);
    c.at_most("soft series maximum", top, soft_series_sup(t, tp) + 1e-12);

    let h = model("heisenberg", n)?;
    let region = Region::new(2, n - 1)?;
    let eps = lowest_eigenpairs(&h.restrict(&region)?, 1, &limits)?.0[0];
    let p = SoftTruncParams::new(t, tp, region, eps, 1e-6)?;
    let (mpo, report) = soft_truncate_mpo(&h, &p)?;
    let excess = mpo.to_dense()?.sub(&h.to_dense()?)?;
    let (ev, _) = eigh(&excess)?;
    c.at_most("soft-truncated Hamiltonian stays below H plus the expansion error", ev[ev.len() - 1], report.error_bound + 1e-9);
    let reference = soft_truncate_dense(&h, &p)?;
    c.at_most("soft truncation operator matches its dense construction", mpo.to_dense()?.max_abs_diff(&reference), report.error_bound + 1e-9);
    Ok(())
}

fn solver_suite(n: usize, seed: u64, c: &mut Checks) -> Result<()> {
    let n = n.clamp(2, 16);
    let h = model("pinned", n)?;
    let cfg = SolveConfig { delta: 1e-3, seed, dense_limit: 1 << n.max(14), ..SolveConfig::default() };
    let run = |cfg: &SolveConfig| low_space(&h, cfg).map_err(|f| f.error);
    let first = run(&cfg)?;
    let second = run(&cfg)?;
    let oracle = first.report.oracle.as_ref().ok_or_else(|| Error::Unavailable("oracle skipped".into()))?;
    c.at_least("ground-state overlap (pinned, frustration-free)", oracle.overlap, 1.0 - cfg.delta);
    let e0 = oracle.exact_energies[0];
    let lowest = first.energies.iter().copied().fold(f64::INFINITY, f64::min);
    c.at_least("reported energy relative to the exact ground energy", lowest, e0 - 1e-8);
    let same = first.report.without_timings() == second.report.without_timings();
    c.at_least("repeated run reproduces the report", same as u8 as f64, 1.0);

    let m = n.min(8);
    let h = model("heisenberg", m)?;
    let (eta, mu) = (1.0, 0.3);
    let cfg = SolveConfig { case: Case::Ld, delta: 1e-2, window: Some((eta, mu)), seed, ..SolveConfig::default() };
    let sol = low_space(&h, &cfg).map_err(|f| f.error)?;
    let e0 = lowest_eigenpairs(&h, 1, &DenseLimits::default())?.0[0];
    let below = spectral_subspace(&h, f64::NEG_INFINITY, e0 + eta - mu, &DenseLimits::default())?;
    let worst = sol.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    c.at_most("largest returned Rayleigh quotient in the windowed case", worst, e0 + eta - mu + cfg.delta);
    c.at_least("returned vectors in the windowed case", sol.states.len() as f64, 1f64.min(below.dim() as f64));
    Ok(())
}
