use attnspec::spectral::CsrMatrix;
use attnspec::synthetic::{gaussian_matrix, random_graph, GraphFamily};
use attnspec::theory::random_psd;
use attnspec::{
    build_laplacian, dense_eigh, fiedler_value, gft, graph_spectrum, hfer, lanczos_partial,
    layer_energy, smoothness_index, spectral_entropy, LanczosOptions, LaplacianKind, Which,
};
use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn oracle_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let mut ev: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn symmetric(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Array2<f64> = gaussian_matrix(&mut rng, n, n);
    Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (a[[i, j]] + a[[j, i]]))
}

fn orthogonal(d: usize, seed: u64) -> Array2<f64> {
    dense_eigh(symmetric(d, seed).view()).unwrap().eigenvectors
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_matches_independent_oracle(n in 1usize..40, seed in any::<u64>()) {
        let m = symmetric(n, seed);
        let spec = dense_eigh(m.view()).unwrap();
        let oracle = oracle_eigenvalues(&m);
        for (a, b) in spec.eigenvalues.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
        prop_assert!(spec.orthonormality_error() < 1e-12);
        let recon = spec.eigenvectors.dot(&Array2::from_diag(&ndarray::Array1::from(spec.eigenvalues.clone())))
            .dot(&spec.eigenvectors.t());
        let err = (&recon - &m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn lanczos_matches_dense(n in 2usize..60, k in 1usize..8, seed in any::<u64>(), largest in any::<bool>()) {
        let k = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_psd(&mut rng, n);
        let which = if largest { Which::Largest } else { Which::Smallest };
        let part = lanczos_partial(&m, k, which, &LanczosOptions::with_seed(seed)).unwrap();
        let full = oracle_eigenvalues(&m);
        let offset = if largest { n - k } else { 0 };
        prop_assert_eq!(part.eigenvalues.len(), k);
        for (j, v) in part.eigenvalues.iter().enumerate() {
            prop_assert!((v - full[offset + j]).abs() < 1e-6);
        }
    }

    #[test]
    fn gft_is_sign_flip_invariant(n in 2usize..24, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::ErdosRenyi);
        let x: Array2<f64> = gaussian_matrix(&mut rng, n, d);
        let mut spec = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let before = gft(&spec, x.view()).unwrap();
        for (c, mut col) in spec.eigenvectors.axis_iter_mut(Axis(1)).enumerate() {
            if c % 2 == 1 {
                col.mapv_inplace(|v| -v);
            }
        }
        let after = gft(&spec, x.view()).unwrap();
        for (a, b) in before.energies.iter().zip(&after.energies) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn energies_are_rotation_invariant(n in 2usize..24, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::Attention);
        let x: Array2<f64> = gaussian_matrix(&mut rng, n, d);
        let q = orthogonal(d, seed ^ 0x5eed);
        let xr = x.dot(&q);
        let spec = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let a = gft(&spec, x.view()).unwrap();
        let b = gft(&spec, xr.view()).unwrap();
        for (u, v) in a.energies.iter().zip(&b.energies) {
            prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
        }
        let e1 = layer_energy(&g, x.view()).unwrap();
        let e2 = layer_energy(&g, xr.view()).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-10 * e1.max(1.0));
    }

    #[test]
    fn rayleigh_sandwich(n in 2usize..24, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::ErdosRenyi);
        let x: Array2<f64> = gaussian_matrix(&mut rng, n, d);
        let spec = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let smi = smoothness_index(&g, x.view()).unwrap();
        let lmax = *spec.eigenvalues.last().unwrap();
        prop_assert!(smi >= -1e-12 && smi <= lmax * (1.0 + 1e-10));
    }

    #[test]
    fn hfer_and_entropy_bounds(n in 2usize..24, d in 1usize..6, seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::Attention);
        let x: Array2<f64> = gaussian_matrix(&mut rng, n, d);
        let spec = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let coeffs = gft(&spec, x.view()).unwrap();
        let mut prev = 1.0f64;
        for k in 0..=n {
            let h = hfer(&coeffs, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!(h <= prev + 1e-15);
            prev = h;
        }
        prop_assert_eq!(hfer(&coeffs, n).unwrap(), 0.0);
        let (raw, norm) = spectral_entropy(&coeffs).unwrap();
        prop_assert!(raw >= 0.0 && raw <= (n as f64).ln() + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&norm));
        let s1 = smoothness_index(&g, x.view()).unwrap();
        let s2 = smoothness_index(&g, (&x * c).view()).unwrap();
        prop_assert!((s1 - s2).abs() <= 1e-9 * s1.abs().max(1e-300));
    }

    #[test]
    fn node_relabeling_preserves_diagnostics(n in 3usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::ErdosRenyi);
        let x: Array2<f64> = gaussian_matrix(&mut rng, n, 3);
        let perm: Vec<usize> = (0..n).rev().collect();
        let w = g.weights.select(Axis(0), &perm).select(Axis(1), &perm);
        let gp = build_laplacian(w).unwrap();
        let xp = x.select(Axis(0), &perm);
        let e1 = layer_energy(&g, x.view()).unwrap();
        let e2 = layer_energy(&gp, xp.view()).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-10 * e1.max(1.0));
        let f1 = fiedler_value(&g, LaplacianKind::Normalized).unwrap();
        let f2 = fiedler_value(&gp, LaplacianKind::Normalized).unwrap();
        prop_assert!((f1 - f2).abs() < 1e-10);
    }
}

#[test]
fn normalized_spectrum_lies_in_zero_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for family in [GraphFamily::ErdosRenyi, GraphFamily::Attention] {
        for n in [2, 7, 30] {
            let g = random_graph::<f64, _>(&mut rng, n, family);
            let spec = graph_spectrum(&g, LaplacianKind::Normalized).unwrap();
            assert!(spec.eigenvalues[0].abs() < 1e-12);
            assert!(*spec.eigenvalues.last().unwrap() <= 2.0 + 1e-12);
        }
    }
}

#[test]
fn sparse_operator_agrees_with_dense_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_graph::<f64, _>(&mut rng, 80, GraphFamily::ErdosRenyi);
    let csr = CsrMatrix::from_dense(g.laplacian.view());
    let opts = LanczosOptions::with_seed(3);
    let a = lanczos_partial(&csr, 4, Which::Smallest, &opts).unwrap();
    let b = lanczos_partial(&g.laplacian, 4, Which::Smallest, &opts).unwrap();
    let dense = oracle_eigenvalues(&g.laplacian);
    for j in 0..4 {
        assert!((a.eigenvalues[j] - dense[j]).abs() < 1e-8);
        assert!((b.eigenvalues[j] - dense[j]).abs() < 1e-8);
    }
}

#[test]
fn lanczos_recovers_repeated_eigenvalues() {
    // complete graph K_n: eigenvalue n with multiplicity n - 1
    let n = 12;
    let w = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 });
    let g = build_laplacian::<f64>(w).unwrap();
    let spec = lanczos_partial(
        &g.laplacian,
        5,
        Which::Largest,
        &LanczosOptions::with_seed(1),
    )
    .unwrap();
    for v in &spec.eigenvalues {
        assert!((v - n as f64).abs() < 1e-8, "{:?}", spec.eigenvalues);
    }
}

#[test]
fn lanczos_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_psd(&mut rng, 50);
    let opts = LanczosOptions::with_seed(77);
    let a = lanczos_partial(&m, 5, Which::Smallest, &opts).unwrap();
    let b = lanczos_partial(&m, 5, Which::Smallest, &opts).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.eigenvectors, b.eigenvectors);
}
