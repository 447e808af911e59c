//! The merge-tree driver: viable sets on single sites are merged level by
//! level with AGSP error reduction, then refined and Rayleigh–Ritz reduced on
//! the whole chain.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agsp::{generate, AgspBundle, AgspConfig, Case, EnergyInputs, TruncatedRegion};
use crate::error::{Error, Result};
use crate::hamiltonian::{LocalHamiltonian, Region};
use crate::mps::{MatrixProductOperator, MatrixProductState, StateFamily};
use crate::oracle::{closeness, lowest_eigenpairs, mutual_closeness, spectral_subspace, viability, DenseLimits, DenseSubspace};
use crate::tensor::{eigh, seeded_rng, split_seed, DenseTensor, C64};
use crate::viable::{apply_and_span, error_reduce, random_subspace, tensor_sets, ReduceReport, ViableSet, SPAN_REL_TOL};

/// Relative Gram eigenvalue below which Rayleigh–Ritz drops a direction.
pub const RITZ_GRAM_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub case: Case,
    pub delta: f64,
    /// Spectral gap; falls back to the Hamiltonian's hint.
    pub gamma: Option<f64>,
    /// Ground-space dimension; falls back to the Hamiltonian's hint.
    pub degeneracy: Option<usize>,
    /// `(η, μ)` for the low-density case; falls back to the Hamiltonian's window.
    pub window: Option<(f64, f64)>,
    /// Sample dimension per merge; defaults to `4r + 8`.
    pub s_cap: Option<usize>,
    pub k_inner: usize,
    pub xi: f64,
    pub max_bond: usize,
    pub agsp: AgspConfig,
    pub seed: u64,
    pub real_sampling: bool,
    /// Use the asymptotic sample size, repetition count and trimming threshold.
    pub asymptotic_constants: bool,
    /// Extra reductions before each energy estimate.
    pub power_count: usize,
    pub refine_max_iters: Option<usize>,
    /// Stop once the lowest Ritz values move less than this between checks;
    /// defaults to `10⁻³·δ·γ`.
    pub refine_tol: Option<f64>,
    pub refine_check_every: usize,
    /// Largest Hilbert-space dimension for oracle diagnostics.
    pub dense_limit: usize,
    /// Largest number of tensor entries a single applied family may hold.
    pub entry_budget: usize,
    pub threads: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            case: Case::Ff,
            delta: 1e-3,
            gamma: None,
            degeneracy: None,
            window: None,
            s_cap: None,
            k_inner: 2,
            xi: 1e-8,
            max_bond: 64,
            agsp: AgspConfig::default(),
            seed: 0,
            real_sampling: false,
            asymptotic_constants: false,
            power_count: 1,
            refine_max_iters: None,
            refine_tol: None,
            refine_check_every: 4,
            dense_limit: 1 << 14,
            entry_budget: 1 << 26,
            threads: 1,
        }
    }
}

/// Parameters after hints and defaults are applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub n: usize,
    pub n_padded: usize,
    pub d: usize,
    pub r: usize,
    pub gamma: f64,
    pub window: Option<(f64, f64)>,
    pub s_cap: usize,
    pub k_inner: usize,
    pub xi: f64,
}

impl SolveConfig {
    pub fn resolve(&self, h: &LocalHamiltonian) -> Result<ResolvedParams> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("δ = {} must lie in (0, 1)", self.delta)));
        }
        if self.k_inner == 0 || self.max_bond == 0 || self.refine_check_every == 0 || self.threads == 0 {
            return Err(Error::Parameter("k_inner, max_bond, refine_check_every and threads must be positive".into()));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Parameter("ξ must be a finite non-negative number".into()));
        }
        let window = self.window.or(h.energy_window);
        let r = match self.case {
            Case::Ff => 1,
            Case::Dg => self
                .degeneracy
                .or(h.degeneracy_hint)
                .ok_or_else(|| Error::Parameter("the degenerate-gapped case needs a ground-space dimension".into()))?,
            Case::Ld => self.degeneracy.or(h.degeneracy_hint).unwrap_or(1),
        };
        if r == 0 {
            return Err(Error::Parameter("ground-space dimension must be positive".into()));
        }
        let gamma = match self.case {
            Case::Ld => {
                let (eta, mu) = window.ok_or_else(|| Error::Parameter("the low-density case needs an (η, μ) window".into()))?;
                if !(mu > 0.0 && eta > mu) {
                    return Err(Error::Parameter(format!("window needs η > μ > 0, got η={eta}, μ={mu}")));
                }
                mu
            }
            _ => self
                .gamma
                .or(h.gap_hint)
                .ok_or_else(|| Error::Parameter(format!("the {} case needs a spectral gap", self.case)))?,
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("gap {gamma} must be positive")));
        }
        let s_cap = if self.asymptotic_constants {
            (1600.0 * r as f64 * ((r as f64).ln() + 1.0)).ceil() as usize
        } else {
            self.s_cap.unwrap_or(4 * r + 8)
        };
        if s_cap < r {
            return Err(Error::Parameter(format!("sample dimension {s_cap} is below the target dimension {r}")));
        }
        let n = h.n();
        Ok(ResolvedParams {
            n,
            n_padded: n.next_power_of_two().max(2),
            d: h.d(),
            r,
            gamma,
            window,
            s_cap,
            k_inner: self.k_inner,
            xi: self.xi,
        })
    }
}

/// Settings of a single merge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    pub s_cap: usize,
    pub k_inner: usize,
    pub xi: f64,
    pub max_bond: usize,
    pub real_sampling: bool,
    pub entry_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub region: Region,
    pub tensor_dim: usize,
    pub sampled_dim: usize,
    pub k_inner: usize,
    pub xi: f64,
    pub reductions: Vec<ReduceReport>,
}

fn check_budget(v: &ViableSet, bundle: &AgspBundle, max_bond: usize, budget: usize) -> Result<()> {
    let k = max_bond.saturating_mul(2);
    let mut worst = 0usize;
    let mut rows = 1usize;
    for (j, (t, w)) in v.family().sites().iter().zip(bundle.middle.site_tensors()).enumerate() {
        let (ts, ws) = (t.shape(), w.shape());
        rows = if j == 0 { ws[0] * ts[0] } else { k.min(rows.saturating_mul(ws[1])) };
        let theta = rows.saturating_mul(ws[1]).saturating_mul(ws[3] * ts[2]);
        let partial = rows.saturating_mul(ws[0]).saturating_mul(ts[1] * ts[2]);
        worst = worst.max(theta).max(partial);
    }
    if worst > budget {
        return Err(Error::Resource(format!(
            "applying the AGSP on {} would need {worst} tensor entries (budget {budget})",
            v.region()
        )));
    }
    Ok(())
}

/// `v1 ⊗ v2`, a random `s_cap`-dimensional subspace of it, and `k_inner`
/// error reductions, each capped at `s_cap` directions.
pub fn merge_prime(
    v1: &ViableSet,
    v2: &ViableSet,
    bundle: &AgspBundle,
    p: &MergeParams,
    seed: u64,
) -> Result<(ViableSet, MergeReport)> {
    let w = tensor_sets(v1, v2)?;
    if w.region() != bundle.region {
        return Err(Error::Dimension(format!("bundle for {} merged on {}", bundle.region, w.region())));
    }
    let tensor_dim = w.dim();
    let s = p.s_cap.min(tensor_dim);
    let mut v = random_subspace(&w, s, seed, p.real_sampling)?;
    let mut reductions = Vec::with_capacity(p.k_inner);
    for _ in 0..p.k_inner {
        check_budget(&v, bundle, p.max_bond, p.entry_budget)?;
        let (next, report) = error_reduce(&v, bundle, p.xi, p.max_bond, Some(p.s_cap))?;
        reductions.push(report);
        v = next;
    }
    let report = MergeReport { region: w.region(), tensor_dim, sampled_dim: s, k_inner: p.k_inner, xi: p.xi, reductions };
    Ok((v, report))
}

/// Lowest Rayleigh quotient of the bundle's truncated `H_M` on `v` after
/// `power_count` further reductions; zero in the frustration-free case.
pub fn estimate_energy(v: &ViableSet, bundle: &AgspBundle, power_count: usize, p: &MergeParams) -> Result<f64> {
    if bundle.case == Case::Ff {
        return Ok(0.0);
    }
    let mut w = v.clone();
    for _ in 0..power_count {
        check_budget(&w, bundle, p.max_bond, p.entry_budget)?;
        w = error_reduce(&w, bundle, p.xi, p.max_bond, Some(p.s_cap))?.0;
    }
    let (vals, _) = ritz_values(w.family(), &bundle.truncated_mpo_m)?;
    Ok(vals[0])
}

/// Solves `H c = θ G c` on the range of `G` above `rel_tol·‖G‖`. Columns of
/// the returned matrix are `G`-orthonormal, eigenvalues ascend.
pub fn generalized_eigh(hm: &DenseTensor, gram: &DenseTensor, rel_tol: f64) -> Result<(Vec<f64>, DenseTensor)> {
    let herm = |a: &DenseTensor| a.add(&a.adjoint()).map(|s| s.scale(C64::new(0.5, 0.0)));
    let (g, u) = eigh(&herm(gram)?)?;
    let top = g.last().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::Numeric("Rayleigh–Ritz basis vanishes".into()));
    }
    let keep: Vec<usize> = (0..g.len()).filter(|&i| g[i] > rel_tol * top).collect();
    let x = DenseTensor::matrix_from_fn(u.rows(), keep.len(), |r, c| u.get(&[r, keep[c]]) / g[keep[c]].sqrt());
    let reduced = herm(&x.adjoint().matmul(hm)?.matmul(&x)?)?;
    let (theta, y) = eigh(&reduced)?;
    Ok((theta, x.matmul(&y)?))
}

fn ritz_values(fam: &StateFamily, op: &MatrixProductOperator) -> Result<(Vec<f64>, DenseTensor)> {
    generalized_eigh(&fam.matrix_elements(op)?, &fam.gram(), RITZ_GRAM_TOL)
}

/// Ritz pairs of `op` on the span of `fam`: the `count` lowest values and the
/// family of matching orthonormal Ritz vectors.
pub fn rayleigh_ritz_family(fam: &StateFamily, op: &MatrixProductOperator, count: usize) -> Result<(Vec<f64>, StateFamily)> {
    let (theta, c) = ritz_values(fam, op)?;
    if theta.len() < count {
        return Err(Error::Numeric(format!("Rayleigh–Ritz basis has rank {} below the requested {count}", theta.len())));
    }
    let cols = DenseTensor::matrix_from_fn(c.rows(), count, |r, k| c.get(&[r, k]));
    Ok((theta[..count].to_vec(), fam.recombine(&cols)?))
}

/// Ritz values and vectors of `op` on the span of `basis`, compressed to `max_bond`.
pub fn rayleigh_ritz(
    basis: &[MatrixProductState],
    op: &MatrixProductOperator,
    count: usize,
    max_bond: usize,
) -> Result<(Vec<f64>, Vec<MatrixProductState>)> {
    let fam = StateFamily::from_states(basis)?;
    let (vals, out) = rayleigh_ritz_family(&fam, op, count)?;
    let states = out
        .members()?
        .into_iter()
        .map(|m| m.compress(max_bond, 0.0).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    Ok((vals, states))
}

/// Variational upper bound on the ground energy of `h` from restarted Krylov
/// iterations on MPS, with the state that attains it.
pub fn ground_energy_upper_bound(h: &LocalHamiltonian, max_bond: usize, seed: u64) -> Result<(f64, MatrixProductState)> {
    const KRYLOV: usize = 8;
    const RESTARTS: usize = 40;
    let op = h.to_mpo();
    let mut rng = seeded_rng(seed);
    let mut v = MatrixProductState::random(h.n(), h.d(), 4, &mut rng)?;
    v = v.scale(C64::new(1.0 / v.norm(), 0.0));
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let mut vectors = vec![v.clone()];
        for _ in 1..KRYLOV {
            let (w, _) = crate::mps::apply_mpo(&op, vectors.last().expect("non-empty"), max_bond, 1e-13)?;
            let norm = w.norm();
            if norm < 1e-300 {
                break;
            }
            vectors.push(w.scale(C64::new(1.0 / norm, 0.0)));
        }
        let fam = StateFamily::from_states(&vectors)?;
        let (vals, ritz) = rayleigh_ritz_family(&fam, &op, 1)?;
        let (next, _) = ritz.member(0)?.compress(max_bond, 1e-13)?;
        let next = next.scale(C64::new(1.0 / next.norm(), 0.0));
        let previous = best;
        best = best.min(vals[0]);
        v = next;
        if previous.is_finite() && previous - best <= 1e-12 * best.abs().max(1.0) {
            break;
        }
    }
    Ok((best, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// `⌈10·‖H‖/γ · ln(1/δ)⌉` power steps.
    pub tau: usize,
    pub iterations: usize,
    pub stopped_early: bool,
    /// Lowest Ritz values at each convergence check.
    pub ritz_trace: Vec<Vec<f64>>,
    pub dim: usize,
    pub max_bond: usize,
}

/// Power iteration with `1 − H/‖H‖` on the span of `v`, trimming after each
/// step and stopping once the lowest `r` Ritz values settle.
pub fn final_refine(
    v: &ViableSet,
    h: &LocalHamiltonian,
    r: usize,
    gamma: f64,
    delta: f64,
    cfg: &SolveConfig,
    p: &MergeParams,
) -> Result<(ViableSet, RefineReport)> {
    let terms = (h.n() - 1).max(1) as f64;
    let tau = (10.0 * terms / gamma * (1.0 / delta).ln()).ceil() as usize;
    let limit = cfg.refine_max_iters.unwrap_or(tau).min(tau);
    let op = h.to_mpo();
    let step = op.scale(C64::new(-1.0 / terms, 0.0)).add_scaled_identity(C64::new(1.0, 0.0))?;
    let count = r.min(v.dim());
    let tol = cfg.refine_tol.unwrap_or(1e-3 * delta * gamma);
    let mut current = v.clone();
    let mut trace = vec![ritz_values(current.family(), &op)?.0[..count].to_vec()];
    let mut iterations = 0;
    let mut stopped_early = false;
    while iterations < limit {
        current = apply_and_span(&current, step.site_tensors(), p.xi, p.max_bond, Some(p.s_cap))?;
        iterations += 1;
        if iterations % cfg.refine_check_every == 0 || iterations == limit {
            let vals = ritz_values(current.family(), &op)?.0;
            let vals = vals[..count.min(vals.len())].to_vec();
            let last = trace.last().expect("non-empty");
            let settled = vals.len() == last.len() && vals.iter().zip(last).all(|(a, b)| (a - b).abs() <= tol);
            trace.push(vals);
            if settled {
                stopped_early = iterations < limit;
                break;
            }
        }
    }
    let report = RefineReport { tau, iterations, stopped_early, ritz_trace: trace, dim: current.dim(), max_bond: current.max_bond() };
    Ok((current, report))
}

/// Projects the pad sites `n..` of a family onto `|0⟩` and drops them.
fn strip_padding(fam: &StateFamily, n: usize) -> Result<StateFamily> {
    let sites = fam.sites();
    if sites.len() == n {
        return Ok(fam.clone());
    }
    let mut tail: Option<DenseTensor> = None;
    for t in &sites[n..] {
        let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let m = DenseTensor::matrix_from_fn(l, r, |a, b| t.entries()[(a * d) * r + b]);
        tail = Some(match tail {
            None => m,
            Some(acc) => acc.matmul(&m)?,
        });
    }
    let tail = tail.expect("at least one pad site");
    let mut kept: Vec<DenseTensor> = sites[..n].to_vec();
    let last = kept.pop().expect("n ≥ 1");
    let (l, d, r) = (last.shape()[0], last.shape()[1], last.shape()[2]);
    let merged = last.reshaped(&[l * d, r]).matmul(&tail)?;
    let aux = merged.cols();
    kept.push(merged.reshaped(&[l, d, aux]));
    StateFamily::new(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub level: usize,
    pub region: Region,
    pub eps_input: f64,
    pub eps_estimate: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub dim: usize,
    pub max_bond: usize,
    pub d_measured: usize,
    pub delta_measured: Option<f64>,
    pub delta_formula: f64,
    pub threshold_met: Option<bool>,
    pub k_max_bond: usize,
    pub h_trunc_max_bond: usize,
    pub compression_error: f64,
    pub truncated_regions: Vec<TruncatedRegion>,
    pub merge: MergeReport,
    pub oracle_viability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub exact_energies: Vec<f64>,
    /// `√(1 − δ)` for the smallest `δ` with the target space `δ`-close to the returned span.
    pub overlap: f64,
    pub mutual_closeness: f64,
    pub target_dim: usize,
    /// Largest Rayleigh quotient minus `ε_0`.
    pub max_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SolveConfig,
    pub params: Option<ResolvedParams>,
    pub ground_anchor: Option<f64>,
    pub levels: Vec<Vec<BlockReport>>,
    pub refine: Option<RefineReport>,
    pub energies: Vec<f64>,
    pub entropies: Vec<Vec<f64>>,
    pub schmidt_ranks: Vec<Vec<usize>>,
    pub oracle: Option<OracleReport>,
    pub warnings: Vec<String>,
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(config: &SolveConfig) -> Self {
        Self {
            config: config.clone(),
            params: None,
            ground_anchor: None,
            levels: Vec::new(),
            refine: None,
            energies: Vec::new(),
            entropies: Vec::new(),
            schmidt_ranks: Vec::new(),
            oracle: None,
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// The report with wall-clock timings removed.
    pub fn without_timings(&self) -> Self {
        Self { timings: BTreeMap::new(), ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub states: Vec<MatrixProductState>,
    pub energies: Vec<f64>,
    pub report: RunReport,
}

/// An error together with everything reported before it happened.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: Error,
    pub report: Box<RunReport>,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for SolveFailure {}

fn dense_ok(d: usize, n: usize, limit: usize) -> bool {
    d.checked_pow(n as u32).is_some_and(|x| x <= limit)
}

fn target_space(h: &LocalHamiltonian, case: Case, r: usize, window: Option<(f64, f64)>, limits: &DenseLimits) -> Result<(Vec<f64>, DenseSubspace)> {
    let (vals, vecs) = lowest_eigenpairs(h, r.max(1), limits)?;
    match (case, window) {
        (Case::Ld, Some((eta, mu))) => {
            let below = spectral_subspace(h, f64::NEG_INFINITY, vals[0] + eta - mu + 1e-9, limits)?;
            Ok((vals, below))
        }
        _ => Ok((vals, DenseSubspace::new(vecs)?)),
    }
}

struct Block {
    set: ViableSet,
    eps: f64,
}

/// Runs the whole pipeline on `h`.
pub fn low_space(h: &LocalHamiltonian, cfg: &SolveConfig) -> std::result::Result<Solution, SolveFailure> {
    let mut report = RunReport::new(cfg);
    match run(h, cfg, &mut report) {
        Ok((states, energies)) => Ok(Solution { states, energies, report }),
        Err(error) => Err(SolveFailure { error, report: Box::new(report) }),
    }
}

fn run(h: &LocalHamiltonian, cfg: &SolveConfig, report: &mut RunReport) -> Result<(Vec<MatrixProductState>, Vec<f64>)> {
    let started = Instant::now();
    let params = cfg.resolve(h)?;
    report.params = Some(params.clone());
    let hp = h.padded(params.n_padded)?;
    let n_pad = params.n_padded;
    let limits = DenseLimits::with_state_limit(cfg.dense_limit);

    let anchor = match cfg.case {
        Case::Ff => 0.0,
        _ => {
            let t = Instant::now();
            let (e, _) = ground_energy_upper_bound(&hp, cfg.max_bond, split_seed(cfg.seed, &[0xa1]))?;
            report.timings.insert("ground_anchor".into(), t.elapsed().as_secs_f64());
            report.ground_anchor = Some(e);
            e
        }
    };
    let target = if dense_ok(params.d, n_pad, cfg.dense_limit) {
        Some(target_space(&hp, cfg.case, params.r, params.window, &limits)?.1)
    } else {
        None
    };

    let mut blocks: Vec<Block> = (1..=n_pad)
        .map(|j| Ok(Block { set: ViableSet::full_site(j, params.d)?, eps: 0.0 }))
        .collect::<Result<_>>()?;
    let levels = n_pad.trailing_zeros() as usize;
    let log_n = (n_pad as f64).ln().max(1.0);
    for level in 1..=levels {
        let t = Instant::now();
        let window = params.window.map(|(eta, mu)| (eta - (level - 1) as f64 * mu / log_n, mu));
        let pairs: Vec<(Block, Block)> = {
            let mut it = std::mem::take(&mut blocks).into_iter();
            let mut out = Vec::new();
            while let (Some(a), Some(b)) = (it.next(), it.next()) {
                out.push((a, b));
            }
            out
        };
        let work = |index: usize, pair: &(Block, Block)| {
            merge_block(&hp, cfg, &params, level, index, pair, anchor, window, target.as_ref())
        };
        let results = run_parallel(&pairs, cfg.threads, work);
        let mut level_reports = Vec::with_capacity(results.len());
        for res in results {
            let (block, block_report) = res?;
            blocks.push(block);
            level_reports.push(block_report);
        }
        report.levels.push(level_reports);
        report.timings.insert(format!("level_{level}"), t.elapsed().as_secs_f64());
    }
    let top = blocks.pop().expect("one block remains");

    let t = Instant::now();
    let p = merge_params(cfg, &params, None);
    let (refined, refine) = final_refine(&top.set, &hp, params.r, params.gamma, cfg.delta, cfg, &p)?;
    report.refine = Some(refine);
    report.timings.insert("refine".into(), t.elapsed().as_secs_f64());

    let stripped = strip_padding(refined.family(), params.n)?;
    let op = h.to_mpo();
    let available = ritz_values(&stripped, &op)?.0.len();
    let (theta, ritz) = rayleigh_ritz_family(&stripped, &op, available)?;
    let count = match cfg.case {
        Case::Ld => {
            let (eta, mu) = params.window.expect("resolved");
            let within = theta.iter().filter(|&&x| x <= theta[0] + eta - mu).count().max(1);
            match cfg.degeneracy.or(h.degeneracy_hint) {
                Some(r) => within.min(r),
                None => within,
            }
        }
        _ => params.r,
    };
    if available < count {
        return Err(Error::Numeric(format!("final space has rank {available}, below {count}")));
    }
    let mut states = Vec::with_capacity(count);
    let mut energies = Vec::with_capacity(count);
    for k in 0..count {
        let (s, _) = ritz.member(k)?.compress(cfg.max_bond, 1e-14)?;
        let s = s.scale(C64::new(1.0 / s.norm(), 0.0));
        let e = crate::mps::apply_mpo(&op, &s, usize::MAX, 0.0)?.0.inner(&s)?.re;
        energies.push(e);
        states.push(s);
    }
    report.energies = energies.clone();
    report.entropies = states.iter().map(|s| s.entanglement_entropies()).collect();
    report.schmidt_ranks = states
        .iter()
        .map(|s| {
            s.schmidt_values()
                .iter()
                .map(|sv| {
                    let top = sv.first().copied().unwrap_or(0.0);
                    sv.iter().filter(|&&x| x > 1e-10 * top.max(1e-300)).count()
                })
                .collect()
        })
        .collect();

    if dense_ok(params.d, params.n, cfg.dense_limit) {
        let t = Instant::now();
        report.oracle = Some(final_oracle(h, cfg.case, params.r, params.window, &states, &energies, &limits)?);
        report.timings.insert("oracle".into(), t.elapsed().as_secs_f64());
    }
    let mut warnings = Vec::new();
    for b in report.levels.iter().flatten() {
        if b.dim < params.r {
            warnings.push(format!("block {} kept fewer than {} directions", b.region, params.r));
        }
        if let Some(delta) = b.delta_measured.filter(|&x| x > 1.0) {
            warnings.push(format!("AGSP on block {} does not shrink the excited space (Δ = {delta:.3e})", b.region));
        }
    }
    report.warnings.extend(warnings);
    report.timings.insert("total".into(), started.elapsed().as_secs_f64());
    Ok((states, energies))
}

fn merge_params(cfg: &SolveConfig, params: &ResolvedParams, bundle: Option<&AgspBundle>) -> MergeParams {
    let mut p = MergeParams {
        s_cap: params.s_cap,
        k_inner: params.k_inner,
        xi: params.xi,
        max_bond: cfg.max_bond,
        real_sampling: cfg.real_sampling,
        entry_budget: cfg.entry_budget,
    };
    if let (true, Some(b)) = (cfg.asymptotic_constants, bundle) {
        let d = (b.d_measured.max(2)) as f64;
        let s = params.s_cap as f64;
        p.k_inner = ((s.ln() / d.ln()).ceil() / 2.0).ceil().max(1.0) as usize;
        let width = b.region.len() as f64;
        p.xi = 1e-4 * d.powi(-12) / (width * cfg.max_bond as f64 * s).sqrt();
    }
    p
}

#[allow(clippy::too_many_arguments)]
fn merge_block(
    hp: &LocalHamiltonian,
    cfg: &SolveConfig,
    params: &ResolvedParams,
    level: usize,
    index: usize,
    pair: &(Block, Block),
    anchor: f64,
    window: Option<(f64, f64)>,
    target: Option<&DenseSubspace>,
) -> Result<(Block, BlockReport)> {
    let (left, right) = pair;
    let region = Region::new(left.set.region().start, right.set.region().end)?;
    let eps_input = left.eps + right.eps;
    let inputs = EnergyInputs { eps_m: eps_input, ground_anchor: anchor, gap: params.gamma, ld_window: window };
    let bundle = generate(hp, region, cfg.case, &inputs, &cfg.agsp)?;
    let p = merge_params(cfg, params, Some(&bundle));
    let seed = split_seed(cfg.seed, &[level as u64, index as u64]);
    let (set, merge) = merge_prime(&left.set, &right.set, &bundle, &p, seed)?;
    let eps_estimate = estimate_energy(&set, &bundle, cfg.power_count, &p)?;
    let oracle_viability = match target {
        Some(t) => Some(viability(&set.to_dense()?, &region, hp.n(), hp.d(), t)?),
        None => None,
    };
    let report = BlockReport {
        level,
        region,
        eps_input,
        eps_estimate,
        eta0: bundle.cheby.eta0,
        eta1: bundle.cheby.eta1,
        dim: set.dim(),
        max_bond: set.max_bond(),
        d_measured: bundle.d_measured,
        delta_measured: bundle.delta_measured,
        delta_formula: bundle.delta_formula,
        threshold_met: bundle.threshold_met(),
        k_max_bond: bundle.k_max_bond,
        h_trunc_max_bond: bundle.h_trunc_max_bond,
        compression_error: bundle.compression_error,
        truncated_regions: bundle.truncated_regions.clone(),
        merge,
        oracle_viability,
    };
    Ok((Block { set, eps: eps_estimate }, report))
}

fn run_parallel<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                scope.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn final_oracle(
    h: &LocalHamiltonian,
    case: Case,
    r: usize,
    window: Option<(f64, f64)>,
    states: &[MatrixProductState],
    energies: &[f64],
    limits: &DenseLimits,
) -> Result<OracleReport> {
    let (exact, target) = target_space(h, case, r, window, limits)?;
    let dense: Vec<Vec<C64>> = states.iter().map(|s| s.to_dense()).collect::<Result<_>>()?;
    let returned = DenseSubspace::from_vectors(&dense, SPAN_REL_TOL)?;
    let delta = closeness(&returned, &target)?;
    Ok(OracleReport {
        exact_energies: exact.clone(),
        overlap: (1.0 - delta).max(0.0).sqrt(),
        mutual_closeness: mutual_closeness(&returned, &target)?,
        target_dim: target.dim(),
        max_excess: energies.iter().map(|e| e - exact[0]).fold(f64::NEG_INFINITY, f64::max),
    })
}
