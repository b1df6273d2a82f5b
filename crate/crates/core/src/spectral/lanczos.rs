//! Partial symmetric eigensolver: Lanczos with full reorthogonalization and
//! Rayleigh-Ritz extraction on the accumulated basis.
//!
//! The start vector is drawn from a seeded ChaCha stream. On breakdown
//! (the Krylov space became invariant) a fresh random vector orthogonal to
//! the basis is injected, so eigenvalues of any multiplicity are reached once
//! the basis grows large enough. After the first convergence one extra
//! restart is run to pick up degenerate copies the first Krylov chain could
//! not see.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

use super::dense::symmetric_eigen;
use super::{LaplacianKind, Result, SpectralError, Spectrum};

/// Symmetric matrix-vector product.
pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Real> LinearOperator<T> for Array2<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        self.view().apply(x, y)
    }
}

impl<T: Real> LinearOperator<T> for ArrayView2<'_, T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        for (yi, row) in y.iter_mut().zip(self.rows()) {
            *yi = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Keeps every nonzero entry of a square matrix.
    pub fn from_dense(m: ArrayView2<T>) -> Self {
        let n = m.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.indptr[i]..self.indptr[i + 1];
            *yi = self.indices[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosOptions {
    pub seed: u64,
    /// Relative residual target, `||Au - theta u|| <= tol * max(1, |theta|)`.
    pub tol: f64,
    /// Basis-size cap. Without one the basis may grow to `N`, where
    /// Rayleigh-Ritz is exact.
    pub max_iter: Option<usize>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl LanczosOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Classical Gram-Schmidt, applied twice.
fn orthogonalize<T: Real>(r: &mut [T], basis: &[Vec<T>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, r);
            for (ri, &qi) in r.iter_mut().zip(q) {
                *ri -= c * qi;
            }
        }
    }
}

struct Ritz<T> {
    values: Vec<T>,
    vectors: Vec<Vec<T>>,
    residuals: Vec<T>,
}

/// Computes `k` eigenpairs at the requested end of the spectrum of a
/// symmetric operator.
pub fn lanczos_partial<T, A>(
    op: &A,
    k: usize,
    which: Which,
    opts: &LanczosOptions,
) -> Result<Spectrum<T>>
where
    T: Real,
    A: LinearOperator<T> + ?Sized,
{
    let n = op.dim();
    if k == 0 || k > n {
        return Err(SpectralError::InvalidK { k, n });
    }
    let max_iter = opts.max_iter.unwrap_or(n).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eps = T::epsilon();
    let tol = T::of(opts.tol).max(T::of(100.0) * eps);
    let contract_tol = T::identity_tol();

    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut images: Vec<Vec<T>> = Vec::new();
    // projected matrix H = V^T A V, stored densely and grown in place
    let mut h: Vec<Vec<T>> = Vec::new();
    let mut op_scale = T::zero();
    let mut guarded = false;
    let mut checked_at: Option<usize> = None;
    let mut hold_until = 0usize;

    let mut next = fresh_vector(&mut rng, n, &basis);
    loop {
        let Some(v) = next.take() else { break };
        let mut w = vec![T::zero(); n];
        op.apply(&v, &mut w);
        op_scale = op_scale.max(norm(&w));

        let m = basis.len();
        let mut col = Vec::with_capacity(m + 1);
        for (i, q) in basis.iter().enumerate() {
            let hij = (dot(q, &w) + dot(&v, &images[i])) * T::of(0.5);
            col.push(hij);
        }
        col.push(dot(&v, &w));
        for (row, &c) in h.iter_mut().zip(&col) {
            row.push(c);
        }
        h.push(col);
        basis.push(v);
        images.push(w.clone());

        let m = basis.len();
        let mut r = w;
        orthogonalize(&mut r, &basis);
        let beta = norm(&r);
        let floor = T::of(1e3) * eps * op_scale.max(T::min_positive_value());
        let breakdown = beta <= floor;

        if m >= n {
            next = None;
        } else if breakdown {
            next = fresh_vector(&mut rng, n, &basis);
        } else {
            let inv = beta.recip();
            next = Some(r.into_iter().map(|x| x * inv).collect());
        }

        let stride = (m / 10).max(1);
        let capped = m >= max_iter;
        let due = m >= k
            && (capped
                || (m >= hold_until
                    && (checked_at.is_none_or(|c| m - c >= stride)
                        || next.is_none()
                        || breakdown)));
        if !due {
            continue;
        }
        checked_at = Some(m);
        let ritz = ritz_pairs(&h, &basis, &images, k, which)?;
        let attainable = T::of(100.0) * eps * op_scale * T::from_usize(n).expect("n fits").sqrt();
        let converged = ritz
            .values
            .iter()
            .zip(&ritz.residuals)
            .all(|(&theta, &res)| res <= (tol * T::one().max(theta.abs())).max(attainable));

        if next.is_none() || (converged && guarded) {
            // a full basis makes Rayleigh-Ritz exact up to rounding
            return finish(ritz, m, contract_tol, attainable);
        }
        if converged {
            guarded = true;
            next = fresh_vector(&mut rng, n, &basis);
            hold_until = m + k.max(10).min(n - m);
            if next.is_none() {
                return finish(ritz, m, contract_tol, attainable);
            }
            continue;
        }
        if capped {
            return Err(SpectralError::NoConvergence {
                iterations: m,
                residuals: ritz.residuals.iter().map(|r| r.as_f64()).collect(),
            });
        }
    }
    unreachable!("Lanczos loop exits through finish or an error")
}

fn fresh_vector<T: Real>(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<T>]) -> Option<Vec<T>> {
    if basis.len() >= n {
        return None;
    }
    for _ in 0..8 {
        let mut v: Vec<T> = (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > T::of(1e-4) {
            let inv = nv.recip();
            v.iter_mut().for_each(|x| *x *= inv);
            return Some(v);
        }
    }
    None
}

fn ritz_pairs<T: Real>(
    h: &[Vec<T>],
    basis: &[Vec<T>],
    images: &[Vec<T>],
    k: usize,
    which: Which,
) -> Result<Ritz<T>> {
    let m = h.len();
    let n = basis[0].len();
    let hm = Array2::from_shape_fn((m, m), |(i, j)| h[i][j]);
    let (theta, s) = symmetric_eigen(hm.view())?;
    let take = k.min(m);
    let picks: Vec<usize> = match which {
        Which::Smallest => (0..take).collect(),
        Which::Largest => (m - take..m).collect(),
    };
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    let mut residuals = Vec::with_capacity(take);
    for idx in picks {
        let th = theta[idx];
        let mut u = vec![T::zero(); n];
        let mut au = vec![T::zero(); n];
        for (j, (q, aq)) in basis.iter().zip(images).enumerate() {
            let c = s[[j, idx]];
            for i in 0..n {
                u[i] += c * q[i];
                au[i] += c * aq[i];
            }
        }
        let res = au
            .iter()
            .zip(&u)
            .map(|(&a, &x)| {
                let d = a - th * x;
                d * d
            })
            .sum::<T>()
            .sqrt();
        values.push(th);
        vectors.push(u);
        residuals.push(res);
    }
    Ok(Ritz {
        values,
        vectors,
        residuals,
    })
}

fn finish<T: Real>(
    ritz: Ritz<T>,
    iterations: usize,
    contract_tol: T,
    attainable: T,
) -> Result<Spectrum<T>> {
    let n = ritz.vectors.first().map_or(0, Vec::len);
    let failed = ritz
        .values
        .iter()
        .zip(&ritz.residuals)
        .any(|(&theta, &res)| res > (contract_tol * T::one().max(theta.abs())).max(attainable));
    if failed {
        return Err(SpectralError::NoConvergence {
            iterations,
            residuals: ritz.residuals.iter().map(|r| r.as_f64()).collect(),
        });
    }
    let k = ritz.values.len();
    let vectors = Array2::from_shape_fn((n, k), |(i, j)| ritz.vectors[j][i]);
    Ok(Spectrum {
        eigenvalues: ritz.values,
        eigenvectors: vectors,
        source: LaplacianKind::Unnormalized,
        partial: k < n,
    })
}
