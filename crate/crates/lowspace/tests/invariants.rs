use proptest::prelude::*;

use lowspace::agsp::{chebyshev_t, truncation_regions, ChebyParams};
use lowspace::hamiltonian::{build_model, ModelParams, Region};
use lowspace::mps::MatrixProductState;
use lowspace::oracle::{closeness, mutual_closeness, viability, DenseSubspace};
use lowspace::tensor::{contract, eigh, seeded_rng, split_seed, DenseTensor, C64};
use lowspace::truncation::{soft_series_eval, soft_series_sup};

fn random_subspace(ambient: usize, dim: usize, seed: u64) -> DenseSubspace {
    let mut rng = seeded_rng(seed);
    let vectors: Vec<Vec<C64>> = (0..dim).map(|_| MatrixProductState::random(ambient.trailing_zeros() as usize, 2, 2, &mut rng).unwrap().to_dense().unwrap()).collect();
    DenseSubspace::from_vectors(&vectors, 1e-10).unwrap()
}

fn mirror(n: usize, r: &Region) -> Region {
    Region::new(n + 1 - r.end, n + 1 - r.start).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_series_stays_between_zero_and_x(x in 0.0f64..200.0, t in 4.0f64..40.0, tp in 1usize..7) {
        let h = soft_series_eval(x, t, tp);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= x + 1e-12);
        prop_assert!(h <= soft_series_sup(t, tp) + 1e-12);
        prop_assert!((h - x).abs() <= (t / tp as f64) * (x / t).powi(tp as i32) + 1e-12 * (1.0 + x));
    }

    #[test]
    fn soft_series_is_monotone(x in 0.0f64..100.0, dx in 0.0f64..10.0, t in 4.0f64..40.0, tp in 1usize..7) {
        prop_assert!(soft_series_eval(x + dx, t, tp) >= soft_series_eval(x, t, tp) - 1e-12);
    }

    #[test]
    fn chebyshev_is_bounded_on_the_interval(k in 0usize..40, y in -1.0f64..1.0) {
        prop_assert!(chebyshev_t(k, y).abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn filter_polynomial_respects_its_window(
        k in 1usize..24, eta0 in 0.0f64..1.0, gap in 0.05f64..1.0, span in 1.0f64..8.0, u in 0.0f64..1.0,
    ) {
        let eta1 = eta0 + gap;
        let norm = eta1 + span;
        let p = ChebyParams::new(k, eta0, eta1, norm).unwrap();
        prop_assert!((p.eval(eta0) - 1.0).abs() < 1e-9);
        let x = eta1 + u * (norm - eta1);
        prop_assert!(p.eval(x).abs() <= p.delta_formula().sqrt() + 1e-12);
        prop_assert!(p.eval(eta0 * u) >= 1.0 - 1e-9);
    }

    #[test]
    fn truncation_regions_are_disjoint_and_leave_windows(n in 4usize..40, a in 1usize..40, len in 1usize..40, ell in 1usize..4) {
        prop_assume!(a <= n);
        let b = (a + len - 1).min(n);
        let m = Region::new(a, b).unwrap();
        let regions = truncation_regions(n, &m, ell);
        for (i, r) in regions.iter().enumerate() {
            prop_assert!(r.start >= 1 && r.end <= n && r.len() >= 2);
            for s in &regions[i + 1..] {
                prop_assert!(r.end < s.start || s.end < r.start);
            }
        }
        let in_region = |term: usize| regions.iter().any(|r| r.start <= term && term < r.end);
        for cut in [a - 1, b] {
            if cut == 0 || cut == n {
                continue;
            }
            for term in cut.saturating_sub(ell).max(1)..=(cut + ell).min(n - 1) {
                prop_assert!(!in_region(term), "term {term} near cut {cut} is truncated");
            }
        }
    }

    #[test]
    fn truncation_regions_mirror(n in 4usize..40, a in 1usize..40, len in 1usize..40, ell in 1usize..4) {
        prop_assume!(a <= n);
        let m = Region::new(a, (a + len - 1).min(n)).unwrap();
        let mut direct: Vec<Region> = truncation_regions(n, &m, ell).iter().map(|r| mirror(n, r)).collect();
        let mut mirrored = truncation_regions(n, &mirror(n, &m), ell);
        direct.sort_by_key(|r| r.start);
        mirrored.sort_by_key(|r| r.start);
        prop_assert_eq!(direct, mirrored);
    }

    #[test]
    fn contraction_shapes_multiply(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let x = MatrixProductState::random(2, 2, 2, &mut rng).unwrap().to_dense().unwrap()[0];
        let left = DenseTensor::new(vec![a, b], vec![x; a * b]).unwrap();
        let right = DenseTensor::new(vec![b, c], vec![x; b * c]).unwrap();
        let out = contract(&left, &right, &[(1, 0)]).unwrap();
        prop_assert_eq!(out.shape(), &[a, c][..]);
        let again = left.matmul(&right).unwrap();
        prop_assert!(out.max_abs_diff(&again) < 1e-12);
        let product = left.kron(&right);
        prop_assert_eq!(product.shape(), &[a * b, b * c][..]);
    }

    #[test]
    fn compression_error_is_reported_exactly(n in 3usize..8, bond in 1usize..6, cap in 1usize..6, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let psi = MatrixProductState::random(n, 2, bond, &mut rng).unwrap();
        let (small, err) = psi.compress(cap, 0.0).unwrap();
        prop_assert!(small.max_bond() <= cap);
        let a = psi.to_dense().unwrap();
        let b = small.to_dense().unwrap();
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(dist <= err + 1e-9 * (1.0 + psi.norm()), "distance {dist} > reported {err}");
    }

    #[test]
    fn dense_round_trip_keeps_inner_products(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let a = MatrixProductState::random(n, 2, 3, &mut rng).unwrap();
        let b = MatrixProductState::random(n, 2, 3, &mut rng).unwrap();
        let (va, vb) = (a.to_dense().unwrap(), b.to_dense().unwrap());
        let dense: C64 = va.iter().zip(&vb).map(|(x, y)| x.conj() * y).sum();
        prop_assert!((a.inner(&b).unwrap() - dense).norm() < 1e-10 * (1.0 + dense.norm()));
        let back = MatrixProductState::from_dense(&va, n, 2).unwrap().to_dense().unwrap();
        prop_assert!(va.iter().zip(&back).all(|(x, y)| (x - y).norm() < 1e-10));
    }

    #[test]
    fn closeness_lies_in_the_unit_interval_and_mutual_is_symmetric(d1 in 1usize..4, d2 in 1usize..4, seed in any::<u64>()) {
        let s = random_subspace(16, d1, seed);
        let t = random_subspace(16, d2, seed ^ 1);
        let c = closeness(&s, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(mutual_closeness(&s, &t).unwrap(), mutual_closeness(&t, &s).unwrap());
        prop_assert!(closeness(&s, &s).unwrap() < 1e-10);
    }

    #[test]
    fn viability_lies_in_the_unit_interval(k in 1usize..4, start in 1usize..4, width in 1usize..3, seed in any::<u64>()) {
        let n = 5;
        let region = Region::new(start, (start + width).min(n)).unwrap();
        let s = random_subspace(1 << region.len(), k.min(1 << region.len()), seed);
        let t = random_subspace(1 << n, 2, seed ^ 7);
        let v = viability(&s, &region, n, 2, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn seed_splitting_is_deterministic(master in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(split_seed(master, &[a, b]), split_seed(master, &[a, b]));
        if a != b {
            prop_assert_ne!(split_seed(master, &[a]), split_seed(master, &[b]));
        }
        prop_assert_ne!(split_seed(master, &[a]), split_seed(master, &[a, b]));
    }

    #[test]
    fn catalog_terms_lie_between_zero_and_one(n in 2usize..6, model in 0usize..4, g in 0.1f64..3.0) {
        let name = ["pinned", "aklt", "tfi", "heisenberg"][model];
        let mut params = ModelParams::new();
        if name == "tfi" {
            params.insert("g".into(), format!("{g}"));
        }
        let h = build_model(name, n, &params).unwrap();
        for term in h.terms() {
            prop_assert!(term.hermiticity_defect() < 1e-12);
            let (vals, _) = eigh(term).unwrap();
            prop_assert!(vals[0] >= -1e-12 && vals[vals.len() - 1] <= 1.0 + 1e-12);
        }
    }
}
