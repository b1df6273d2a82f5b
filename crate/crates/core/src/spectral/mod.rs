//! Laplacian spectra and the graph Fourier transform.

mod dense;
mod lanczos;

pub use lanczos::{lanczos_partial, CsrMatrix, LanczosOptions, LinearOperator, Which};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{connectivity_check, LayerGraph};
use crate::scalar::Real;

pub const DEFAULT_DENSE_LIMIT: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("size error: N = {n} exceeds the dense limit {limit}; use lanczos_partial")]
    TooLarge { n: usize, limit: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is asymmetric at ({i}, {j}) by {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("invalid k = {k} for N = {n}")]
    InvalidK { k: usize, n: usize },
    #[error("Lanczos did not converge after {iterations} basis vectors; residuals {residuals:?}")]
    NoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("QL iteration did not converge at eigenvalue {index}")]
    DenseNoConvergence { index: usize },
    #[error("contract error: the graph Fourier transform needs a full spectrum")]
    PartialSpectrum,
    #[error("shape mismatch: spectrum has {nodes} nodes but signal has {rows} rows")]
    ShapeMismatch { nodes: usize, rows: usize },
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    #[default]
    Unnormalized,
    Normalized,
}

impl LaplacianKind {
    pub fn matrix<T: Real>(self, graph: &LayerGraph<T>) -> &Array2<T> {
        match self {
            LaplacianKind::Unnormalized => &graph.laplacian,
            LaplacianKind::Normalized => &graph.laplacian_norm,
        }
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub eigenvalues: Vec<T>,
    /// `N x M`, column `m` pairs with `eigenvalues[m]`.
    pub eigenvectors: Array2<T>,
    pub source: LaplacianKind,
    pub partial: bool,
}

impl<T: Real> Spectrum<T> {
    pub fn with_source(mut self, source: LaplacianKind) -> Self {
        self.source = source;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Largest entry of `|U^T U - I|`.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.eigenvectors.t().dot(&self.eigenvectors);
        gram.indexed_iter().fold(T::zero(), |m, ((i, j), &g)| {
            let target = if i == j { T::one() } else { T::zero() };
            m.max((g - target).abs())
        })
    }
}

/// Graph Fourier coefficients of a multi-column signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients<T> {
    /// `U^T X`, one row per frequency.
    pub coeffs: Array2<T>,
    /// `s_m = ||coeffs[m, :]||^2`
    pub energies: Vec<T>,
    /// `p_m = s_m / sum s`; all zero when `degenerate`.
    pub masses: Vec<T>,
    /// Set when the signal carries no energy.
    pub degenerate: bool,
}

impl<T: Real> SpectralCoefficients<T> {
    pub fn total_energy(&self) -> T {
        self.energies.iter().copied().sum()
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

fn check_symmetric<T: Real>(l: &ArrayView2<T>) -> Result<usize> {
    let (rows, cols) = l.dim();
    if rows != cols {
        return Err(SpectralError::NotSquare { rows, cols });
    }
    let scale = l.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let tol = T::of(1e-9).max(T::epsilon() * T::of(8.0)) * scale;
    for i in 0..rows {
        for j in i + 1..rows {
            let gap = (l[[i, j]] - l[[j, i]]).abs();
            if !(gap <= tol) {
                return Err(SpectralError::Asymmetric {
                    i,
                    j,
                    gap: gap.as_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// Full eigendecomposition of a symmetric matrix with `N <= 1024`.
pub fn dense_eigh<T: Real>(l: ArrayView2<T>) -> Result<Spectrum<T>> {
    dense_eigh_with_limit(l, DEFAULT_DENSE_LIMIT)
}

pub fn dense_eigh_with_limit<T: Real>(l: ArrayView2<T>, limit: usize) -> Result<Spectrum<T>> {
    let n = check_symmetric(&l)?;
    if n > limit {
        return Err(SpectralError::TooLarge { n, limit });
    }
    let (eigenvalues, eigenvectors) = dense::symmetric_eigen(l)?;
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        source: LaplacianKind::Unnormalized,
        partial: false,
    })
}

/// Spectrum of the chosen Laplacian of `graph`.
pub fn graph_spectrum<T: Real>(graph: &LayerGraph<T>, kind: LaplacianKind) -> Result<Spectrum<T>> {
    Ok(dense_eigh(kind.matrix(graph).view())?.with_source(kind))
}

/// `X_hat = U^T X` with per-frequency energies and masses.
pub fn gft<T: Real>(spectrum: &Spectrum<T>, x: ArrayView2<T>) -> Result<SpectralCoefficients<T>> {
    if spectrum.partial {
        return Err(SpectralError::PartialSpectrum);
    }
    if x.nrows() != spectrum.num_nodes() {
        return Err(SpectralError::ShapeMismatch {
            nodes: spectrum.num_nodes(),
            rows: x.nrows(),
        });
    }
    let coeffs = spectrum.eigenvectors.t().dot(&x);
    let energies: Vec<T> = coeffs
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&c| c * c).sum())
        .collect();
    let total: T = energies.iter().copied().sum();
    let degenerate = !(total > T::zero());
    let masses = if degenerate {
        vec![T::zero(); energies.len()]
    } else {
        energies.iter().map(|&s| s / total).collect()
    };
    Ok(SpectralCoefficients {
        coeffs,
        energies,
        masses,
        degenerate,
    })
}

/// Second-smallest eigenvalue of the chosen Laplacian; `0` for a
/// disconnected graph.
pub fn fiedler_value<T: Real>(graph: &LayerGraph<T>, variant: LaplacianKind) -> Result<T> {
    fiedler_value_seeded(graph, variant, 0)
}

/// As [`fiedler_value`]; graphs beyond the dense limit go through Lanczos
/// with the given seed.
pub fn fiedler_value_seeded<T: Real>(
    graph: &LayerGraph<T>,
    variant: LaplacianKind,
    seed: u64,
) -> Result<T> {
    let conn = connectivity_check(graph, T::zero());
    if !conn.connected {
        log::warn!(
            "graph has {} components; Fiedler value reported as 0",
            conn.num_components
        );
        return Ok(T::zero());
    }
    let l = variant.matrix(graph);
    let n = l.nrows();
    let spectrum = if n <= DEFAULT_DENSE_LIMIT {
        dense_eigh(l.view())?
    } else {
        lanczos_partial(
            &CsrMatrix::from_dense(l.view()),
            2,
            Which::Smallest,
            &LanczosOptions::with_seed(seed),
        )?
    };
    Ok(spectrum.eigenvalues[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_laplacian;
    use ndarray::array;

    fn path3() -> LayerGraph<f64> {
        build_laplacian(array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn path3_spectrum() {
        let s = dense_eigh(path3().laplacian.view()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 1.0, 3.0], 1e-12);
        assert!(s.orthonormality_error() < 1e-12);
    }

    #[test]
    fn uniform_k3_spectrum() {
        let g = build_laplacian(Array2::from_elem((3, 3), 1.0f64 / 3.0)).unwrap();
        let s = dense_eigh(g.laplacian.view()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 1.0, 1.0], 1e-12);
    }

    #[test]
    fn zero_matrix_spectrum() {
        let s = dense_eigh(Array2::<f64>::zeros((4, 4)).view()).unwrap();
        assert_close(&s.eigenvalues, &[0.0; 4], 0.0);
        assert!(s.orthonormality_error() < 1e-15);
    }

    #[test]
    fn single_node() {
        let s = dense_eigh(array![[2.5]].view()).unwrap();
        assert_eq!(s.eigenvalues, vec![2.5]);
    }

    #[test]
    fn dense_limit_enforced() {
        let z = Array2::<f64>::zeros((5, 5));
        assert_eq!(
            dense_eigh_with_limit(z.view(), 4),
            Err(SpectralError::TooLarge { n: 5, limit: 4 })
        );
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(matches!(
            dense_eigh(array![[0.0, 1.0], [0.0, 0.0]].view()),
            Err(SpectralError::Asymmetric { .. })
        ));
    }

    #[test]
    fn lanczos_path3() {
        let l = path3().laplacian;
        let s = lanczos_partial(&l, 2, Which::Smallest, &LanczosOptions::default()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 1.0], 1e-9);
        assert!(s.partial);
        let top = lanczos_partial(&l, 1, Which::Largest, &LanczosOptions::default()).unwrap();
        assert_close(&top.eigenvalues, &[3.0], 1e-9);
    }

    #[test]
    fn lanczos_degenerate_full() {
        let g = build_laplacian(Array2::from_elem((3, 3), 1.0f64 / 3.0)).unwrap();
        let s =
            lanczos_partial(&g.laplacian, 3, Which::Smallest, &LanczosOptions::default()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 1.0, 1.0], 1e-9);
        assert!(!s.partial);
    }

    #[test]
    fn lanczos_finds_repeated_eigenvalue_below_k() {
        // complete graph K8: spectrum (0, 8 x7); asks for 3 smallest
        let mut w = Array2::from_elem((8, 8), 1.0);
        w.diag_mut().fill(0.0);
        let g = build_laplacian(w).unwrap();
        let s =
            lanczos_partial(&g.laplacian, 3, Which::Smallest, &LanczosOptions::default()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 8.0, 8.0], 1e-9);
    }

    #[test]
    fn lanczos_zero_matrix() {
        let z = Array2::<f64>::zeros((6, 6));
        let s = lanczos_partial(&z, 2, Which::Largest, &LanczosOptions::default()).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 0.0], 1e-15);
    }

    #[test]
    fn lanczos_rejects_bad_k() {
        let l = path3().laplacian;
        assert_eq!(
            lanczos_partial(&l, 0, Which::Smallest, &LanczosOptions::default()).unwrap_err(),
            SpectralError::InvalidK { k: 0, n: 3 }
        );
        assert!(lanczos_partial(&l, 4, Which::Smallest, &LanczosOptions::default()).is_err());
    }

    #[test]
    fn lanczos_is_deterministic_per_seed() {
        let l = path3().laplacian;
        let a = lanczos_partial(&l, 2, Which::Smallest, &LanczosOptions::with_seed(9)).unwrap();
        let b = lanczos_partial(&l, 2, Which::Smallest, &LanczosOptions::with_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csr_matches_dense_product() {
        let l = path3().laplacian;
        let csr = CsrMatrix::from_dense(l.view());
        assert_eq!(csr.nnz(), 7);
        let x = [1.0, -2.0, 0.5];
        let mut y1 = [0.0; 3];
        let mut y2 = [0.0; 3];
        csr.apply(&x, &mut y1);
        l.apply(&x, &mut y2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn gft_examples() {
        let g = path3();
        let s = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();

        let c = gft(&s, array![[2.0], [2.0], [2.0]].view()).unwrap();
        assert!((c.masses[0] - 1.0).abs() < 1e-12);

        let z = gft(&s, Array2::<f64>::zeros((3, 2)).view()).unwrap();
        assert!(z.degenerate);
        assert!(z.energies.iter().all(|&e| e == 0.0));

        let c = gft(&s, array![[1.0], [0.0], [-1.0]].view()).unwrap();
        assert_close(&c.energies, &[0.0, 2.0, 0.0], 1e-12);
    }

    #[test]
    fn gft_refuses_partial() {
        let l = path3().laplacian;
        let s = lanczos_partial(&l, 2, Which::Smallest, &LanczosOptions::default()).unwrap();
        assert_eq!(
            gft(&s, array![[1.0], [0.0], [-1.0]].view()),
            Err(SpectralError::PartialSpectrum)
        );
    }

    #[test]
    fn fiedler_examples() {
        assert!(
            (fiedler_value(&path3(), LaplacianKind::Unnormalized).unwrap() - 1.0).abs() < 1e-12
        );
        let k3 = build_laplacian(Array2::from_elem((3, 3), 1.0f64 / 3.0)).unwrap();
        assert!((fiedler_value(&k3, LaplacianKind::Unnormalized).unwrap() - 1.0).abs() < 1e-12);
        let blocks = build_laplacian(array![
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0]
        ])
        .unwrap();
        assert_eq!(
            fiedler_value(&blocks, LaplacianKind::Normalized).unwrap(),
            0.0
        );
    }

    #[test]
    fn normalized_spectrum_within_zero_two() {
        let g = path3();
        let s = graph_spectrum(&g, LaplacianKind::Normalized).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!(s.eigenvalues.iter().all(|&l| l > -1e-12 && l < 2.0 + 1e-12));
        // path P3 normalized spectrum is (0, 1, 2)
        assert_close(&s.eigenvalues, &[0.0, 1.0, 2.0], 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let g =
            build_laplacian(array![[0.0f32, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
        let s = dense_eigh(g.laplacian.view()).unwrap();
        for (x, y) in s.eigenvalues.iter().zip([0.0f32, 1.0, 3.0]) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
