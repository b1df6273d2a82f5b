//! Numerical verification of the spectral bounds.
//!
//! Each check evaluates both sides of an inequality (or identity) on a
//! concrete instance. [`run_verification`] sweeps seeded random instances
//! through all of them. The high-frequency/MAD relation has no explicit
//! constant, so it is checked as a rank correlation across an ensemble
//! rather than as an inequality.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    center_columns, energy_edge_form, energy_spectral_form, energy_trace_form, hfer, layer_energy,
    mad_discrepancy, smoothness_index, spectral_entropy, DiagnosticsError,
};
use crate::graph::{connectivity_check, LayerGraph};
use crate::scalar::Real;
use crate::spectral::{
    dense_eigh, gft, graph_spectrum, lanczos_partial, LanczosOptions, LaplacianKind, SpectralError,
    Spectrum, Which,
};
use crate::synthetic::{
    band_signal, gaussian_matrix, random_graph, random_instance, Band, GraphFamily,
};

/// Relative slack granted to an inequality before it counts as violated.
pub const BOUND_SLACK: f64 = 1e-8;
/// Slack allowed on the equality cases of the Poincaré and Lipschitz bounds.
pub const EQUALITY_SLACK: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("inapplicable: {0}")]
    Inapplicable(String),
    #[error("need at least {need} instances, got {got}")]
    TooFewInstances { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub type Result<T, E = TheoryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `rhs - lhs`
    pub slack: f64,
    pub instance_descriptor: String,
}

impl BoundCheckResult {
    pub fn new(name: &str, lhs: f64, rhs: f64, instance_descriptor: String) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            satisfied: lhs <= rhs + BOUND_SLACK * rhs.abs().max(1.0),
            slack: rhs - lhs,
            instance_descriptor,
        }
    }
}

fn describe<T: Real>(graph: &LayerGraph<T>, x: &ArrayView2<T>) -> String {
    format!("N={} d={}", graph.num_nodes(), x.ncols())
}

fn fiedler_connected<T: Real>(graph: &LayerGraph<T>) -> Result<T> {
    let conn = connectivity_check(graph, T::zero());
    if !conn.connected {
        return Err(TheoryError::Inapplicable(format!(
            "graph has {} components, Fiedler value is 0",
            conn.num_components
        )));
    }
    let spec = graph_spectrum(graph, LaplacianKind::Unnormalized)?;
    Ok(spec.eigenvalues[1])
}

/// `||X_c||_F^2 <= E(X_c) / lambda_2` with `X_c` the column-centered signal.
pub fn check_poincare<T: Real>(
    graph: &LayerGraph<T>,
    x: ArrayView2<T>,
) -> Result<BoundCheckResult> {
    let lambda2 = fiedler_connected(graph)?;
    let xc = center_columns(x);
    let lhs: T = xc.iter().map(|&v| v * v).sum();
    let energy = layer_energy(graph, xc.view())?;
    let rhs = energy / lambda2;
    Ok(BoundCheckResult::new(
        "poincare",
        lhs.as_f64(),
        rhs.as_f64(),
        describe(graph, &x),
    ))
}

/// Largest singular value, from the smaller Gram matrix.
pub fn spectral_norm<T: Real>(w: ArrayView2<T>) -> Result<T> {
    let gram = if w.nrows() <= w.ncols() {
        w.dot(&w.t())
    } else {
        w.t().dot(&w)
    };
    let spec = dense_eigh(gram.view())?;
    Ok(spec
        .eigenvalues
        .last()
        .copied()
        .unwrap_or_else(T::zero)
        .max(T::zero())
        .sqrt())
}

/// `||(X + delta) W - X W||_F <= ||W||_2 lambda_2^{-1/2} sqrt(E(delta))`.
///
/// `delta` is column-centered before use.
pub fn check_lipschitz<T: Real>(
    graph: &LayerGraph<T>,
    x: ArrayView2<T>,
    delta: ArrayView2<T>,
    w_out: ArrayView2<T>,
) -> Result<BoundCheckResult> {
    if x.dim() != delta.dim() {
        return Err(TheoryError::Shape(format!(
            "signal {:?} and perturbation {:?} differ",
            x.dim(),
            delta.dim()
        )));
    }
    if w_out.nrows() != x.ncols() {
        return Err(TheoryError::Shape(format!(
            "readout has {} rows, signal has {} columns",
            w_out.nrows(),
            x.ncols()
        )));
    }
    let lambda2 = fiedler_connected(graph)?;
    let dc = center_columns(delta);
    let perturbed = (&x + &dc).dot(&w_out);
    let base = x.dot(&w_out);
    let lhs = (&perturbed - &base)
        .iter()
        .map(|&v| v * v)
        .sum::<T>()
        .sqrt();
    let energy = layer_energy(graph, dc.view())?.max(T::zero());
    let rhs = spectral_norm(w_out)? * (energy / lambda2).sqrt();
    Ok(BoundCheckResult::new(
        "lipschitz",
        lhs.as_f64(),
        rhs.as_f64(),
        describe(graph, &x),
    ))
}

/// Trace, edge-sum and spectral forms of the energy agree.
///
/// `lhs` is the largest pairwise discrepancy, `rhs` the tolerance
/// `1e-6 * max(1, |trace|)`.
pub fn check_energy_identity<T: Real>(
    graph: &LayerGraph<T>,
    x: ArrayView2<T>,
) -> Result<BoundCheckResult> {
    let trace = energy_trace_form(graph, x)?;
    let edge = energy_edge_form(graph, x)?;
    let spec = graph_spectrum(graph, LaplacianKind::Unnormalized)?;
    let coeffs = gft(&spec, x)?;
    let spectral = energy_spectral_form(&spec, &coeffs);
    let gap = (trace - edge)
        .abs()
        .max((trace - spectral).abs())
        .max((edge - spectral).abs());
    let tol = T::identity_tol() * T::one().max(trace.abs());
    Ok(BoundCheckResult::new(
        "energy_identity",
        gap.as_f64(),
        tol.as_f64(),
        describe(graph, &x),
    ))
}

/// `sum_m s_m = ||X||_F^2`; `lhs` is the relative discrepancy, `rhs` the
/// tolerance.
pub fn check_parseval<T: Real>(
    spectrum: &Spectrum<T>,
    x: ArrayView2<T>,
) -> Result<BoundCheckResult> {
    let coeffs = gft(spectrum, x)?;
    let power: T = x.iter().map(|&v| v * v).sum();
    let rel = (coeffs.total_energy() - power).abs() / power.max(T::min_positive_value());
    let rel = if power > T::zero() {
        rel
    } else {
        coeffs.total_energy().abs()
    };
    Ok(BoundCheckResult::new(
        "parseval",
        rel.as_f64(),
        T::identity_tol().as_f64(),
        format!("N={} d={}", spectrum.num_nodes(), x.ncols()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Spearman rank correlation between `sqrt(SMI * HFER(K))` and MAD;
    /// absent when undefined.
    pub spearman: Option<f64>,
    pub used: usize,
    pub excluded: usize,
    pub degenerate: bool,
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho; `None` when either side has no rank variance.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Rank association between `sqrt(SMI * HFER(K))` and MAD over an ensemble.
///
/// Instances where a diagnostic is undefined, or where both quantities
/// vanish (pure low-frequency signals), are excluded and counted.
pub fn check_hfer_mad_correlation<T: Real>(
    instances: &[(LayerGraph<T>, Array2<T>)],
    k: usize,
) -> Result<CorrelationReport> {
    const MIN_INSTANCES: usize = 20;
    if instances.len() < MIN_INSTANCES {
        return Err(TheoryError::TooFewInstances {
            need: MIN_INSTANCES,
            got: instances.len(),
        });
    }
    let mut spectral_side = Vec::new();
    let mut mad_side = Vec::new();
    let mut excluded = 0;
    for (graph, x) in instances {
        let measured = (|| -> Result<(f64, f64)> {
            let smi = smoothness_index(graph, x.view())?;
            let spec = graph_spectrum(graph, LaplacianKind::Unnormalized)?;
            let coeffs = gft(&spec, x.view())?;
            let h = hfer(&coeffs, k.min(coeffs.len()))?;
            let mad = mad_discrepancy(graph, x.view(), T::zero())?;
            Ok(((smi.max(T::zero()) * h).sqrt().as_f64(), mad.as_f64()))
        })();
        match measured {
            Ok((a, m)) => {
                let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt().as_f64().max(1.0);
                if a <= 1e-9 && m <= 1e-9 * norm {
                    excluded += 1;
                } else {
                    spectral_side.push(a);
                    mad_side.push(m);
                }
            }
            Err(TheoryError::Diagnostics(DiagnosticsError::Degenerate(_))) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let rho = spearman(&spectral_side, &mad_side);
    Ok(CorrelationReport {
        spearman: rho,
        used: spectral_side.len(),
        excluded,
        degenerate: rho.is_none(),
    })
}

/// Settings of a verification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub sweeps: usize,
    pub seed: u64,
    pub max_nodes: usize,
    pub max_dim: usize,
    /// Largest matrix in the eigensolver agreement sweep.
    pub eigen_max_nodes: usize,
    /// Minimum Spearman correlation accepted for the HFER/MAD association.
    pub min_correlation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            sweeps: 500,
            seed: 0,
            max_nodes: 64,
            max_dim: 16,
            eigen_max_nodes: 256,
            min_correlation: 0.5,
        }
    }
}

/// Serializable replay record of a failing instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub result: BoundCheckResult,
    pub weights: Vec<Vec<f64>>,
    pub signal: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub instances: usize,
    pub passed: usize,
    /// Smallest `rhs - lhs` seen.
    pub min_slack: f64,
    /// Largest `lhs` seen (for tolerance-style checks, the worst error).
    pub max_lhs: f64,
    pub failures: Vec<FailureRecord>,
}

impl CheckSummary {
    pub fn ok(&self) -> bool {
        self.passed == self.instances
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: VerifyConfig,
    pub checks: Vec<CheckSummary>,
    pub correlation: CorrelationReport,
    pub correlation_ok: bool,
    pub all_passed: bool,
}

const MAX_DUMPS: usize = 5;

fn dump(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn instance_rng(seed: u64, check: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((check << 32) | index as u64);
    rng
}

fn family(index: usize) -> GraphFamily {
    if index % 2 == 0 {
        GraphFamily::ErdosRenyi
    } else {
        GraphFamily::Attention
    }
}

/// Runs `count` seeded instances of one check in parallel; results are
/// gathered in index order.
fn sweep<F>(name: &str, count: usize, check: F) -> CheckSummary
where
    F: Fn(usize) -> (BoundCheckResult, Array2<f64>, Array2<f64>) + Sync,
{
    let results: Vec<_> = (0..count).into_par_iter().map(&check).collect();
    let mut summary = CheckSummary {
        name: name.to_string(),
        instances: count,
        passed: 0,
        min_slack: f64::INFINITY,
        max_lhs: f64::NEG_INFINITY,
        failures: Vec::new(),
    };
    for (index, (result, w, x)) in results.into_iter().enumerate() {
        summary.min_slack = summary.min_slack.min(result.slack);
        summary.max_lhs = summary.max_lhs.max(result.lhs);
        if result.satisfied {
            summary.passed += 1;
        } else if summary.failures.len() < MAX_DUMPS {
            summary.failures.push(FailureRecord {
                index,
                result,
                weights: dump(&w),
                signal: dump(&x),
            });
        }
    }
    if count == 0 {
        summary.min_slack = 0.0;
        summary.max_lhs = 0.0;
    }
    summary
}

fn failed(name: &str, e: impl std::fmt::Display) -> BoundCheckResult {
    BoundCheckResult {
        name: name.to_string(),
        lhs: f64::MAX,
        rhs: 0.0,
        satisfied: false,
        slack: f64::MIN,
        instance_descriptor: format!("error: {e}"),
    }
}

fn unit_fiedler_signal(spec: &Spectrum<f64>, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let u = spec.eigenvectors.column(1).to_owned().insert_axis(Axis(1));
    let c: Array2<f64> = gaussian_matrix(rng, 1, d);
    u.dot(&c)
}

/// One seeded sweep of [`run_verification`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    EnergyIdentity,
    Parseval,
    Poincare,
    PoincareEquality,
    Lipschitz,
    LipschitzEquality,
    DiagnosticBounds,
    EigensolverAgreement,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::EnergyIdentity,
        Check::Parseval,
        Check::Poincare,
        Check::PoincareEquality,
        Check::Lipschitz,
        Check::LipschitzEquality,
        Check::DiagnosticBounds,
        Check::EigensolverAgreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::EnergyIdentity => "energy_identity",
            Check::Parseval => "parseval",
            Check::Poincare => "poincare",
            Check::PoincareEquality => "poincare_equality",
            Check::Lipschitz => "lipschitz",
            Check::LipschitzEquality => "lipschitz_equality",
            Check::DiagnosticBounds => "diagnostic_bounds",
            Check::EigensolverAgreement => "eigensolver_agreement",
        }
    }
}

/// Runs one check over its seeded instances.
pub fn run_check(check: Check, config: &VerifyConfig) -> CheckSummary {
    let n = config.sweeps;
    let (max_n, max_d, seed) = (config.max_nodes, config.max_dim, config.seed);
    let eigen_count = (n / 25).max(1);
    let max_eig = config.eigen_max_nodes.max(2);
    match check {
        Check::EnergyIdentity => sweep("energy_identity", n, |i| {
            let mut rng = instance_rng(seed, 1, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let r = check_energy_identity(&g, x.view())
                .unwrap_or_else(|e| failed("energy_identity", e));
            (r, g.weights, x)
        }),
        Check::Parseval => sweep("parseval", n, |i| {
            let mut rng = instance_rng(seed, 2, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let r =
                parseval_all_signals(&g, &x, &mut rng).unwrap_or_else(|e| failed("parseval", e));
            (r, g.weights, x)
        }),
        Check::Poincare => sweep("poincare", n, |i| {
            let mut rng = instance_rng(seed, 3, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let x = center_columns(x.view());
            let r = check_poincare(&g, x.view()).unwrap_or_else(|e| failed("poincare", e));
            (r, g.weights, x)
        }),
        Check::PoincareEquality => sweep("poincare_equality", n, |i| {
            let mut rng = instance_rng(seed, 4, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let r = graph_spectrum(&g, LaplacianKind::Unnormalized)
                .map_err(TheoryError::from)
                .and_then(|s| {
                    let u = unit_fiedler_signal(&s, x.ncols(), &mut rng);
                    check_poincare(&g, u.view()).map(|r| equality_result(r, "poincare_equality"))
                })
                .unwrap_or_else(|e| failed("poincare_equality", e));
            (r, g.weights, x)
        }),
        Check::Lipschitz => sweep("lipschitz", n, |i| {
            let mut rng = instance_rng(seed, 5, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let outputs = rng.random_range(1..=8);
            let w_out: Array2<f64> = gaussian_matrix(&mut rng, x.ncols(), outputs);
            let delta =
                center_columns(gaussian_matrix::<f64, _>(&mut rng, x.nrows(), x.ncols()).view());
            let r = check_lipschitz(&g, x.view(), delta.view(), w_out.view())
                .unwrap_or_else(|e| failed("lipschitz", e));
            (r, g.weights, x)
        }),
        Check::LipschitzEquality => sweep("lipschitz_equality", n, |i| {
            let mut rng = instance_rng(seed, 6, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let r = graph_spectrum(&g, LaplacianKind::Unnormalized)
                .map_err(TheoryError::from)
                .and_then(|s| {
                    let delta = unit_fiedler_signal(&s, x.ncols(), &mut rng);
                    let eye = Array2::<f64>::eye(x.ncols());
                    check_lipschitz(&g, x.view(), delta.view(), eye.view())
                        .map(|r| equality_result(r, "lipschitz_equality"))
                })
                .unwrap_or_else(|e| failed("lipschitz_equality", e));
            (r, g.weights, x)
        }),
        Check::DiagnosticBounds => sweep("diagnostic_bounds", n, |i| {
            let mut rng = instance_rng(seed, 7, i);
            let (g, x) = random_instance::<f64, _>(&mut rng, max_n, max_d, family(i));
            let c = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let r = diagnostic_bounds(&g, x.view(), c)
                .unwrap_or_else(|e| failed("diagnostic_bounds", e));
            (r, g.weights, x)
        }),
        Check::EigensolverAgreement => sweep("eigensolver_agreement", eigen_count, |i| {
            let mut rng = instance_rng(seed, 8, i);
            let size = if i == 0 {
                max_eig
            } else {
                rng.random_range(2..=max_eig)
            };
            let m = random_psd(&mut rng, size);
            let r = eigensolver_agreement(&m, seed.wrapping_add(i as u64))
                .unwrap_or_else(|e| failed("eigensolver_agreement", e));
            (r, m, Array2::zeros((0, 0)))
        }),
    }
}

/// Runs every bound and identity over seeded random instances.
///
/// The output depends only on the configuration, not on thread count.
pub fn run_verification(config: &VerifyConfig) -> VerificationReport {
    let checks: Vec<CheckSummary> = Check::ALL.iter().map(|&c| run_check(c, config)).collect();
    let correlation = correlation_ensemble(config);
    let correlation_ok = correlation
        .spearman
        .is_some_and(|r| r >= config.min_correlation);
    let all_passed = correlation_ok && checks.iter().all(CheckSummary::ok);
    VerificationReport {
        config: config.clone(),
        checks,
        correlation,
        correlation_ok,
        all_passed,
    }
}

/// Parseval on every kind of signal the other sweeps transform: raw,
/// centered, Fiedler-direction, band-limited at both ends and the full
/// eigenbasis, on both Laplacians. Reports the worst case.
fn parseval_all_signals(
    graph: &LayerGraph<f64>,
    x: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<BoundCheckResult> {
    let d = x.ncols();
    let mut worst: Option<BoundCheckResult> = None;
    for kind in [LaplacianKind::Unnormalized, LaplacianKind::Normalized] {
        let spec = graph_spectrum(graph, kind)?;
        let signals = [
            x.clone(),
            center_columns(x.view()),
            unit_fiedler_signal(&spec, d, rng),
            band_signal(rng, &spec, Band::Low, 3, d),
            band_signal(rng, &spec, Band::High, 3, d),
            spec.eigenvectors.clone(),
        ];
        for s in &signals {
            let r = check_parseval(&spec, s.view())?;
            if worst.as_ref().is_none_or(|w| r.lhs > w.lhs) {
                worst = Some(r);
            }
        }
    }
    Ok(worst.expect("at least one signal"))
}

/// Equality cases must be attained: the slack must also be tiny from below.
fn equality_result(mut r: BoundCheckResult, name: &str) -> BoundCheckResult {
    r.name = name.to_string();
    r.satisfied = r.slack.abs() <= EQUALITY_SLACK * r.rhs.abs().max(1.0);
    r
}

/// HFER in `[0, 1]` and non-increasing in `K`, entropy in `[0, ln N]`, SMI
/// invariant under `X -> cX`, and uniform spectral masses attaining `ln N`.
///
/// `lhs` is the worst violation found, `rhs` zero.
pub fn diagnostic_bounds(
    graph: &LayerGraph<f64>,
    x: ArrayView2<f64>,
    c: f64,
) -> Result<BoundCheckResult> {
    let n = graph.num_nodes();
    let spec = graph_spectrum(graph, LaplacianKind::Unnormalized)?;
    let coeffs = gft(&spec, x)?;
    let mut worst = 0.0f64;
    let mut prev = f64::INFINITY;
    for k in 0..=n {
        let h = hfer(&coeffs, k)?;
        worst = worst.max(-h).max(h - 1.0).max(h - prev);
        prev = h;
    }
    let (raw, norm) = spectral_entropy(&coeffs)?;
    let ln_n = (n as f64).ln();
    worst = worst
        .max(-raw)
        .max(raw - ln_n - 1e-12)
        .max(norm - 1.0)
        .max(-norm);

    let smi = smoothness_index(graph, x)?;
    let scaled = x.mapv(|v| v * c);
    let smi_c = smoothness_index(graph, scaled.view())?;
    let smi_gap = (smi - smi_c).abs() / smi.abs().max(f64::MIN_POSITIVE);
    if smi > 0.0 {
        worst = worst.max(smi_gap - 1e-9);
    }

    // every eigenvector as a column: unit energy at each frequency
    let uniform = gft(&spec, spec.eigenvectors.view())?;
    let (u_raw, u_norm) = spectral_entropy(&uniform)?;
    worst = worst
        .max((u_raw - ln_n).abs() - 1e-9)
        .max((u_norm - 1.0).abs() - 1e-9);

    Ok(BoundCheckResult::new(
        "diagnostic_bounds",
        worst.max(0.0),
        0.0,
        format!("N={n} d={}", x.ncols()),
    ))
}

/// Random symmetric positive semidefinite matrix `B B^T / n`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    let b: Array2<f64> = gaussian_matrix(rng, n, n);
    let m = b.dot(&b.t()) / n as f64;
    // exact symmetry
    Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (m[[i, j]] + m[[j, i]]))
}

/// Largest per-eigenvalue gap between Lanczos and the dense solver for
/// `k in {1, 5, N}` at both ends; `rhs` is `1e-6`.
pub fn eigensolver_agreement(m: &Array2<f64>, seed: u64) -> Result<BoundCheckResult> {
    let n = m.nrows();
    let dense = dense_eigh(m.view())?;
    let mut worst = 0.0f64;
    let mut ks = vec![1, 5.min(n), n];
    ks.dedup();
    for &k in &ks {
        for which in [Which::Smallest, Which::Largest] {
            let part = lanczos_partial(m, k, which, &LanczosOptions::with_seed(seed))?;
            let offset = match which {
                Which::Smallest => 0,
                Which::Largest => n - k,
            };
            for (j, &v) in part.eigenvalues.iter().enumerate() {
                worst = worst.max((v - dense.eigenvalues[offset + j]).abs());
            }
        }
    }
    Ok(BoundCheckResult::new(
        "eigensolver_agreement",
        worst,
        1e-6,
        format!("N={n}"),
    ))
}

/// Mixed low/high-frequency ensemble on a fixed graph population.
///
/// All graphs share one family and size so that the spectral constant of
/// the relation is comparable across instances. Each signal spans half of
/// the spectrum and is normalized to unit Frobenius norm.
pub fn correlation_ensemble(config: &VerifyConfig) -> CorrelationReport {
    let count = config.sweeps.max(20);
    let n = (config.max_nodes / 2)
        .clamp(8, 32)
        .min(config.max_nodes.max(8));
    let half = n / 2;
    let instances: Vec<(LayerGraph<f64>, Array2<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(config.seed, 9, i);
            let d = rng.random_range(1..=config.max_dim.max(1));
            let g = random_graph::<f64, _>(&mut rng, n, GraphFamily::ErdosRenyi);
            let spec = graph_spectrum(&g, LaplacianKind::Unnormalized).expect("small dense graph");
            let band = if i % 2 == 0 { Band::Low } else { Band::High };
            let x = band_signal(&mut rng, &spec, band, half, d);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (g, x / norm.max(f64::MIN_POSITIVE))
        })
        .collect();
    check_hfer_mad_correlation(&instances, half).unwrap_or(CorrelationReport {
        spearman: None,
        used: 0,
        excluded: count,
        degenerate: true,
    })
}
