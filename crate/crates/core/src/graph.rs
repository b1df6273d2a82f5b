//! Attention-induced token graphs: symmetrization, head aggregation and
//! Laplacians.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Tolerance on head-weight normalization.
pub const HEAD_WEIGHT_SUM_TOL: f64 = 1e-9;
/// Absolute asymmetry tolerance, scaled by `max(1, max |w|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("shape error: expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape error: head {index} is {found}x{found}, expected {expected}x{expected}")]
    HeadShape {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("parameter error: {0}")]
    HeadWeights(String),
    #[error("input error: weight matrix is asymmetric at ({i}, {j}) by {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("input error: negative weight {value} at ({i}, {j})")]
    Negative { i: usize, j: usize, value: f64 },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Convex head-aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T>(Vec<T>);

impl<T: Real> HeadWeights<T> {
    pub fn uniform(heads: usize) -> Self {
        let w = T::one() / T::from_usize(heads).expect("head count fits scalar");
        Self(vec![w; heads])
    }

    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(GraphError::HeadWeights("no head weights given".into()));
        }
        if let Some((h, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= T::zero()))
        {
            return Err(GraphError::HeadWeights(format!(
                "weight {h} is negative: {w}"
            )));
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(HEAD_WEIGHT_SUM_TOL) {
            return Err(GraphError::HeadWeights(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Symmetrized, head-aggregated graph of one layer and its Laplacians.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph<T> {
    /// Symmetric nonnegative weights, self-loops included.
    pub weights: Array2<T>,
    /// `d_i = sum_j W_ij` (self-loop included).
    pub degrees: Array1<T>,
    /// `L = D - W`. Self-loops cancel on the diagonal.
    pub laplacian: Array2<T>,
    /// `I - D^{-1/2} W D^{-1/2}`; rows of isolated nodes are identity rows.
    pub laplacian_norm: Array2<T>,
    pub head_weights: Vec<T>,
    /// Total diagonal mass of `weights`; does not enter `laplacian`.
    pub self_loop_mass: T,
    /// Nodes with zero degree.
    pub isolated: Vec<usize>,
}

impl<T: Real> LayerGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.weights.nrows()
    }

    /// Iterates the undirected edges `i < j` with weight strictly above `eps`.
    pub fn edges(&self, eps: T) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let n = self.num_nodes();
        (0..n).flat_map(move |i| {
            (i + 1..n).filter_map(move |j| {
                let w = self.weights[[i, j]];
                (w > eps).then_some((i, j, w))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub num_components: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub edge_threshold: f64,
}

fn ensure_square<T>(m: &ArrayView2<T>) -> Result<usize> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    Ok(rows)
}

/// `W = (A + A^T) / 2`.
pub fn symmetrize<T: Real>(attention: ArrayView2<T>) -> Result<Array2<T>> {
    let n = ensure_square(&attention)?;
    let half = T::of(0.5);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        half * (attention[[i, j]] + attention[[j, i]])
    }))
}

/// Convex combination `sum_h alpha_h W_h`.
pub fn aggregate_heads<T: Real>(
    heads: &[Array2<T>],
    weights: &HeadWeights<T>,
) -> Result<Array2<T>> {
    if heads.len() != weights.len() {
        return Err(GraphError::HeadWeights(format!(
            "{} heads but {} weights",
            heads.len(),
            weights.len()
        )));
    }
    let n = ensure_square(&heads[0].view())?;
    let mut out = Array2::<T>::zeros((n, n));
    for (index, (w, &alpha)) in heads.iter().zip(weights.as_slice()).enumerate() {
        let found = ensure_square(&w.view())?;
        if found != n {
            return Err(GraphError::HeadShape {
                index,
                expected: n,
                found,
            });
        }
        out.scaled_add(alpha, w);
    }
    Ok(out)
}

/// Zeroes every off-diagonal weight `<= eps`. With `eps = 0` the graph is
/// returned unchanged.
pub fn sparsify<T: Real>(weights: &Array2<T>, eps: T) -> Array2<T> {
    let mut out = weights.clone();
    if eps > T::zero() {
        for ((i, j), w) in out.indexed_iter_mut() {
            if i != j && *w <= eps {
                *w = T::zero();
            }
        }
    }
    out
}

/// Builds `L = D - W` and the symmetric normalized Laplacian.
pub fn build_laplacian<T: Real>(weights: Array2<T>) -> Result<LayerGraph<T>> {
    let n = ensure_square(&weights.view())?;
    let scale = weights.iter().fold(T::one(), |m, w| m.max(w.abs()));
    let tol = T::of(SYMMETRY_TOL).max(T::epsilon() * T::of(8.0)) * scale;
    for i in 0..n {
        for j in 0..n {
            let w = weights[[i, j]];
            if !(w >= T::zero()) {
                return Err(GraphError::Negative {
                    i,
                    j,
                    value: w.as_f64(),
                });
            }
            if j > i {
                let gap = (w - weights[[j, i]]).abs();
                if !(gap <= tol) {
                    return Err(GraphError::Asymmetric {
                        i,
                        j,
                        gap: gap.as_f64(),
                    });
                }
            }
        }
    }

    let degrees: Array1<T> = weights.rows().into_iter().map(|r| r.sum()).collect();
    let self_loop_mass: T = weights.diag().sum();

    let mut laplacian = Array2::from_shape_fn((n, n), |(i, j)| -weights[[i.min(j), i.max(j)]]);
    for i in 0..n {
        // L_ii = sum_{j != i} W_ij; computing it directly avoids d_i - W_ii cancellation
        let off: T = (0..n).filter(|&j| j != i).map(|j| weights[[i, j]]).sum();
        laplacian[[i, i]] = off;
    }

    let isolated: Vec<usize> = (0..n).filter(|&i| degrees[i] <= T::zero()).collect();
    let inv_sqrt: Vec<T> = degrees
        .iter()
        .map(|&d| {
            if d > T::zero() {
                d.sqrt().recip()
            } else {
                T::zero()
            }
        })
        .collect();
    let laplacian_norm = Array2::from_shape_fn((n, n), |(i, j)| {
        if degrees[i] <= T::zero() || degrees[j] <= T::zero() {
            if i == j {
                T::one()
            } else {
                T::zero()
            }
        } else {
            let (lo, hi) = (i.min(j), i.max(j));
            let a = weights[[lo, hi]] * (inv_sqrt[lo] * inv_sqrt[hi]);
            if i == j {
                T::one() - a
            } else {
                -a
            }
        }
    });
    if !isolated.is_empty() {
        log::warn!(
            "graph has {} isolated node(s): {:?}",
            isolated.len(),
            isolated
        );
    }

    Ok(LayerGraph {
        weights,
        degrees,
        laplacian,
        laplacian_norm,
        head_weights: Vec::new(),
        self_loop_mass,
        isolated,
    })
}

/// Symmetrizes each head, aggregates and builds the layer graph.
pub fn layer_graph<T: Real>(
    heads: &[Array2<T>],
    weights: &HeadWeights<T>,
    eps: T,
) -> Result<LayerGraph<T>> {
    let sym = heads
        .iter()
        .map(|a| symmetrize(a.view()))
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate_heads(&sym, weights)?;
    let mut g = build_laplacian(sparsify(&agg, eps))?;
    g.head_weights = weights.as_slice().to_vec();
    Ok(g)
}

/// Counts connected components over edges with weight `> eps` (breadth-first
/// traversal). Degree bounds use the unthresholded degrees.
pub fn connectivity_check<T: Real>(graph: &LayerGraph<T>, eps: T) -> ConnectivityReport {
    let n = graph.num_nodes();
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !seen[j] && j != i && graph.weights[[i, j]] > eps {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let (d_min, d_max) = graph
        .degrees
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d.as_f64()), hi.max(d.as_f64()))
        });
    ConnectivityReport {
        connected: components == 1,
        num_components: components,
        d_min,
        d_max,
        edge_threshold: eps.as_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> LayerGraph<f64> {
        build_laplacian(array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn symmetrize_examples() {
        let id = Array2::<f64>::eye(3);
        assert_eq!(symmetrize(id.view()).unwrap(), id);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(symmetrize(swap.view()).unwrap(), swap);
        let a = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(
            symmetrize(a.view()).unwrap(),
            array![[1.0, 0.5], [0.5, 0.0]]
        );
        let rect = Array2::<f64>::zeros((2, 3));
        assert_eq!(
            symmetrize(rect.view()),
            Err(GraphError::NotSquare { rows: 2, cols: 3 })
        );
    }

    #[test]
    fn aggregate_examples() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let b = array![[0.0, 3.0], [3.0, 0.0]];
        let one = HeadWeights::new(vec![1.0]).unwrap();
        assert_eq!(aggregate_heads(&[a.clone()], &one).unwrap(), a);
        let half = HeadWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(aggregate_heads(&[a.clone(), a.clone()], &half).unwrap(), a);
        let w = HeadWeights::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(
            aggregate_heads(&[a, b], &w).unwrap(),
            array![[0.0, 2.5], [2.5, 0.0]]
        );
    }

    #[test]
    fn head_weights_validated() {
        assert!(HeadWeights::new(vec![0.5, 0.4]).is_err());
        assert!(HeadWeights::new(vec![1.5, -0.5]).is_err());
        assert!(HeadWeights::<f64>::new(vec![]).is_err());
        let u = HeadWeights::<f64>::uniform(4);
        assert_eq!(u.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn path_laplacian() {
        let g = path3();
        assert_eq!(
            g.laplacian,
            array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
        );
        assert_eq!(g.self_loop_mass, 0.0);
    }

    #[test]
    fn uniform_attention_self_loops_cancel() {
        let w = Array2::from_elem((3, 3), 1.0f64 / 3.0);
        let g = build_laplacian(w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((g.laplacian[[i, j]] - expected).abs() < 1e-15);
            }
        }
        assert!((g.self_loop_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_zero_laplacian() {
        let g = build_laplacian(Array2::<f64>::zeros((3, 3))).unwrap();
        assert_eq!(g.laplacian, Array2::<f64>::zeros((3, 3)));
        assert_eq!(g.isolated, vec![0, 1, 2]);
        assert_eq!(g.laplacian_norm, Array2::<f64>::eye(3));
    }

    #[test]
    fn asymmetric_rejected() {
        let w = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(matches!(
            build_laplacian(w),
            Err(GraphError::Asymmetric { .. })
        ));
    }

    #[test]
    fn self_loops_leave_laplacian_unchanged() {
        let base = array![[0.0, 0.3, 0.1], [0.3, 0.0, 0.6], [0.1, 0.6, 0.0]];
        let mut looped = base.clone();
        looped[[0, 0]] = 0.7;
        looped[[2, 2]] = 5.0;
        assert_eq!(
            build_laplacian(base).unwrap().laplacian,
            build_laplacian(looped).unwrap().laplacian
        );
    }

    #[test]
    fn connectivity_examples() {
        let g = path3();
        let r = connectivity_check(&g, 0.0);
        assert!(r.connected);
        assert_eq!(r.num_components, 1);
        assert_eq!((r.d_min, r.d_max), (1.0, 2.0));

        let blocks = array![
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 2.0],
            [0.0, 0.0, 2.0, 0.0]
        ];
        let r = connectivity_check(&build_laplacian(blocks).unwrap(), 0.0);
        assert_eq!(r.num_components, 2);
        assert!(!r.connected);

        let r = connectivity_check(&g, 1.0);
        assert_eq!(r.num_components, 3);
    }

    #[test]
    fn sparsify_keeps_diagonal() {
        let w = array![[0.5, 0.1], [0.1, 0.2]];
        let s = sparsify(&w, 0.15);
        assert_eq!(s, array![[0.5, 0.0], [0.0, 0.2]]);
        assert_eq!(sparsify(&w, 0.0), w);
    }

    #[test]
    fn post_softmax_degrees_positive() {
        let a = array![[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.0, 0.0, 1.0]];
        let g = layer_graph(&[a], &HeadWeights::uniform(1), 0.0).unwrap();
        assert!(g.degrees.iter().all(|&d| d > 0.0));
        assert!(g.isolated.is_empty());
    }
}
