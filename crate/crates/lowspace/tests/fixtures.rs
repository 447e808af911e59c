//! Spectral fixtures. The frozen values were produced by the independent
//! reference below, which builds each chain from its spin operators without
//! going through the model catalog.

use faer::{Mat, Side};

use lowspace::hamiltonian::{build_model, ModelParams};
use lowspace::oracle::{exact_spectrum, lowest_eigenpairs, DenseLimits};

mod reference {
    use super::*;

    pub fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
        Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
    }

    /// `op` acting on `site` of an `n`-site chain of local dimension `d`.
    pub fn on_site(op: &Mat<f64>, site: usize, n: usize, d: usize) -> Mat<f64> {
        let left = Mat::<f64>::identity(d.pow(site as u32), d.pow(site as u32));
        let right = Mat::<f64>::identity(d.pow((n - site - 1) as u32), d.pow((n - site - 1) as u32));
        kron(&kron(&left, op), &right)
    }

    pub fn eigenvalues(m: &Mat<f64>) -> Vec<f64> {
        let e = m.self_adjoint_eigen(Side::Lower).unwrap();
        let mut v: Vec<f64> = e.S().column_vector().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    /// Real-valued spin operators `(Sx, i·Sy, Sz)` for spin 1/2 and spin 1.
    /// `Sy⊗Sy = −(iSy)⊗(iSy)` keeps everything real.
    pub fn spin(d: usize) -> [Mat<f64>; 3] {
        if d == 2 {
            [mat(&[&[0.0, 0.5], &[0.5, 0.0]]), mat(&[&[0.0, 0.5], &[-0.5, 0.0]]), mat(&[&[0.5, 0.0], &[0.0, -0.5]])]
        } else {
            let s = 1.0 / 2f64.sqrt();
            [
                mat(&[&[0.0, s, 0.0], &[s, 0.0, s], &[0.0, s, 0.0]]),
                mat(&[&[0.0, s, 0.0], &[-s, 0.0, s], &[0.0, -s, 0.0]]),
                mat(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, -1.0]]),
            ]
        }
    }

    /// `S_i·S_{i+1}` on the full chain.
    pub fn bond_dot(i: usize, n: usize, d: usize) -> Mat<f64> {
        let [x, iy, z] = spin(d);
        let xx = &on_site(&x, i, n, d) * &on_site(&x, i + 1, n, d);
        let yy = &on_site(&iy, i, n, d) * &on_site(&iy, i + 1, n, d);
        let zz = &on_site(&z, i, n, d) * &on_site(&z, i + 1, n, d);
        &(&xx - &yy) + &zz
    }

    /// Open Heisenberg chain with every bond shifted to the triplet projector.
    pub fn heisenberg(n: usize) -> Mat<f64> {
        let dim = 1 << n;
        (0..n - 1).fold(Mat::zeros(dim, dim), |acc, i| &acc + &(&bond_dot(i, n, 2) + &(Mat::<f64>::identity(dim, dim) * 0.75)))
    }

    /// Sum of spin-2 projectors on neighbouring spin-1 pairs.
    pub fn aklt(n: usize) -> Mat<f64> {
        let dim = 3usize.pow(n as u32);
        let eye = Mat::<f64>::identity(dim, dim);
        (0..n - 1).fold(Mat::zeros(dim, dim), |acc, i| {
            let ss = bond_dot(i, n, 3);
            let sq = &ss * &ss;
            &acc + &(&(&(&ss * 0.5) + &(&sq * (1.0 / 6.0))) + &(&eye * (1.0 / 3.0)))
        })
    }

    /// `−Σ Z_i Z_{i+1} − g Σ X_i` with each two-site term shifted to a zero
    /// minimum and all divided by the largest term range, when that exceeds one.
    pub fn tfi_normalized(n: usize, g: f64) -> Mat<f64> {
        let dim = 1 << n;
        let x = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let z = mat(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let mut h = Mat::<f64>::zeros(dim, dim);
        for i in 0..n - 1 {
            h = &h - &(&on_site(&z, i, n, 2) * &on_site(&z, i + 1, n, 2));
        }
        for i in 0..n {
            h = &h - &(&on_site(&x, i, n, 2) * g);
        }
        let eye2 = Mat::<f64>::identity(2, 2);
        let (mut shift, mut scale) = (0.0, 1.0f64);
        for i in 0..n - 1 {
            let wl = if i == 0 { 1.0 } else { 0.5 };
            let wr = if i == n - 2 { 1.0 } else { 0.5 };
            let term = &(&kron(&z, &z) + &(&kron(&x, &eye2) * (g * wl))) + &(&kron(&eye2, &x) * (g * wr));
            let v = eigenvalues(&(&term * -1.0));
            shift += v[0];
            scale = scale.max(v[3] - v[0]);
        }
        &(&h - &(Mat::<f64>::identity(dim, dim) * shift)) * (1.0 / scale)
    }
}

const TFI_G15_N8_LOWEST: [f64; 3] = [0.15167284418157312, 0.40176226841229984, 0.5168507293518176];
const HEISENBERG_N8_LOWEST: [f64; 3] = [1.8750674013121211, 2.267759512237118, 2.267759512237118];
const AKLT_N6_GAP: f64 = 0.39845123178044306;

fn tfi(n: usize, g: f64) -> lowspace::hamiltonian::LocalHamiltonian {
    let mut params = ModelParams::new();
    params.insert("g".into(), format!("{g}"));
    build_model("tfi", n, &params).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "{got:?} vs {want:?}");
    }
}

#[test]
fn reference_reproduces_frozen_values() {
    assert_close(&reference::eigenvalues(&reference::tfi_normalized(8, 1.5))[..3], &TFI_G15_N8_LOWEST, 1e-10);
    assert_close(&reference::eigenvalues(&reference::heisenberg(8))[..3], &HEISENBERG_N8_LOWEST, 1e-10);
    let aklt = reference::eigenvalues(&reference::aklt(6));
    assert_close(&aklt[..5], &[0.0, 0.0, 0.0, 0.0, AKLT_N6_GAP], 1e-10);
}

#[test]
fn catalog_tfi_matches_the_reference_matrix() {
    let dense = tfi(6, 1.2).to_dense().unwrap();
    let reference = reference::tfi_normalized(6, 1.2);
    for i in 0..64 {
        for j in 0..64 {
            let z = dense.get(&[i, j]);
            assert!((z.re - reference[(i, j)]).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_spectra_match_frozen_values() {
    let limits = DenseLimits::default();
    let (tfi_vals, _) = exact_spectrum(&tfi(8, 1.5), &limits).unwrap();
    assert_close(&tfi_vals[..3], &TFI_G15_N8_LOWEST, 1e-10);
    let heisenberg = build_model("heisenberg", 8, &ModelParams::new()).unwrap();
    let (vals, _) = exact_spectrum(&heisenberg, &limits).unwrap();
    assert_close(&vals[..3], &HEISENBERG_N8_LOWEST, 1e-10);
    let aklt = build_model("aklt", 6, &ModelParams::new()).unwrap();
    let (vals, _) = lowest_eigenpairs(&aklt, 5, &limits).unwrap();
    assert_close(&vals, &[0.0, 0.0, 0.0, 0.0, AKLT_N6_GAP], 1e-10);
}

#[test]
fn tfi_solver_energy_is_within_the_gap_tolerance() {
    use lowspace::agsp::Case;
    use lowspace::solver::{low_space, SolveConfig};
    let gamma = TFI_G15_N8_LOWEST[1] - TFI_G15_N8_LOWEST[0];
    let cfg = SolveConfig { case: Case::Dg, delta: 1e-3, gamma: Some(gamma), degeneracy: Some(1), seed: 5, ..SolveConfig::default() };
    let sol = low_space(&tfi(8, 1.5), &cfg).map_err(|f| f.error).unwrap();
    let excess = sol.energies[0] - TFI_G15_N8_LOWEST[0];
    assert!(excess >= -1e-8 && excess <= 1e-3 * gamma, "excess {excess}");
}
