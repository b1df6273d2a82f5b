//! Per-layer spectral diagnostics and run trajectories.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{connectivity_check, layer_graph, GraphError, HeadWeights, LayerGraph};
use crate::io::{CaptureError, RunCapture, RunLabel};
use crate::scalar::Real;
use crate::spectral::{
    dense_eigh_with_limit, gft, lanczos_partial, CsrMatrix, LanczosOptions, LaplacianKind,
    SpectralCoefficients, SpectralError, Spectrum, Which,
};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("shape mismatch: graph has {nodes} nodes but signal has {rows} rows")]
    Shape { nodes: usize, rows: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("energy forms disagree: trace form {trace:e}, edge-sum form {edge:e}")]
    EnergyMismatch { trace: f64, edge: f64 },
    #[error("cutoff K = {k} exceeds the {n} available frequencies")]
    Cutoff { k: usize, n: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<DiagnosticsError>,
    },
    #[error("capture error: {0}")]
    Capture(String),
}

impl From<CaptureError> for DiagnosticsError {
    fn from(e: CaptureError) -> Self {
        DiagnosticsError::Capture(e.to_string())
    }
}

pub type Result<T, E = DiagnosticsError> = std::result::Result<T, E>;

fn check_rows<T: Real>(graph: &LayerGraph<T>, x: &ArrayView2<T>) -> Result<()> {
    if graph.num_nodes() != x.nrows() {
        return Err(DiagnosticsError::Shape {
            nodes: graph.num_nodes(),
            rows: x.nrows(),
        });
    }
    Ok(())
}

/// `Tr(X^T L X)`.
pub fn energy_trace_form<T: Real>(graph: &LayerGraph<T>, x: ArrayView2<T>) -> Result<T> {
    check_rows(graph, &x)?;
    let lx = graph.laplacian.dot(&x);
    Ok(lx.iter().zip(x.iter()).map(|(&a, &b)| a * b).sum())
}

/// `sum_k sum_{i<j} W_ij (x_ik - x_jk)^2`.
pub fn energy_edge_form<T: Real>(graph: &LayerGraph<T>, x: ArrayView2<T>) -> Result<T> {
    check_rows(graph, &x)?;
    let mut total = T::zero();
    for (i, j, w) in graph.edges(T::zero()) {
        let d: T = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        total += w * d;
    }
    Ok(total)
}

/// `sum_m lambda_m s_m` from a full spectrum and the matching coefficients.
pub fn energy_spectral_form<T: Real>(
    spectrum: &Spectrum<T>,
    coeffs: &SpectralCoefficients<T>,
) -> T {
    spectrum
        .eigenvalues
        .iter()
        .zip(&coeffs.energies)
        .map(|(&l, &s)| l * s)
        .sum()
}

/// Layer energy `Tr(X^T L X)`, cross-checked against the edge-sum form.
pub fn layer_energy<T: Real>(graph: &LayerGraph<T>, x: ArrayView2<T>) -> Result<T> {
    let trace = energy_trace_form(graph, x)?;
    let edge = energy_edge_form(graph, x)?;
    if (trace - edge).abs() > T::identity_tol() * T::one().max(trace.abs()) {
        return Err(DiagnosticsError::EnergyMismatch {
            trace: trace.as_f64(),
            edge: edge.as_f64(),
        });
    }
    Ok(trace)
}

/// `E / Tr(X^T X)`.
pub fn smoothness_index<T: Real>(graph: &LayerGraph<T>, x: ArrayView2<T>) -> Result<T> {
    let power: T = x.iter().map(|&v| v * v).sum();
    if !(power > T::zero()) {
        return Err(DiagnosticsError::Degenerate(
            "zero signal has no smoothness index".into(),
        ));
    }
    Ok(layer_energy(graph, x)? / power)
}

/// Shannon entropy of the spectral masses in nats, raw and divided by `ln M`.
pub fn spectral_entropy<T: Real>(coeffs: &SpectralCoefficients<T>) -> Result<(T, T)> {
    if coeffs.degenerate {
        return Err(DiagnosticsError::Degenerate(
            "zero signal has no spectral entropy".into(),
        ));
    }
    let raw = -coeffs
        .masses
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| p * p.ln())
        .sum::<T>();
    let raw = raw.max(T::zero());
    let ln_n = T::from_usize(coeffs.len()).expect("length fits").ln();
    let norm = if ln_n > T::zero() {
        (raw / ln_n).min(T::one())
    } else {
        T::zero()
    };
    Ok((raw, norm))
}

/// Fraction of spectral energy above the first `k` frequencies.
pub fn hfer<T: Real>(coeffs: &SpectralCoefficients<T>, k: usize) -> Result<T> {
    let n = coeffs.len();
    if k > n {
        return Err(DiagnosticsError::Cutoff { k, n });
    }
    if coeffs.degenerate {
        return Err(DiagnosticsError::Degenerate(
            "zero signal has no HFER".into(),
        ));
    }
    let high: T = coeffs.energies[k..].iter().copied().sum();
    Ok((high / coeffs.total_energy()).min(T::one()))
}

/// Median Euclidean distance between token rows across edges `W_ij > eps`.
pub fn mad_discrepancy<T: Real>(graph: &LayerGraph<T>, x: ArrayView2<T>, eps: T) -> Result<T> {
    check_rows(graph, &x)?;
    let mut dists: Vec<T> = graph
        .edges(eps)
        .map(|(i, j, _)| {
            x.row(i)
                .iter()
                .zip(x.row(j))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
                .sqrt()
        })
        .collect();
    if dists.is_empty() {
        return Err(DiagnosticsError::Degenerate(format!(
            "no edges above threshold {eps}"
        )));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    Ok(if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        (dists[mid - 1] + dists[mid]) * T::of(0.5)
    })
}

/// Consecutive-layer energy ratios and cosine similarities of mass vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Stability<T> {
    pub ratios: Vec<T>,
    pub cos_sims: Vec<T>,
    /// Indices `l` where `E_l = 0` and the ratio is the sentinel 0.
    pub undefined_ratios: Vec<usize>,
    /// Indices where a mass vector is all zero and the cosine is the sentinel 0.
    pub undefined_cos: Vec<usize>,
}

pub fn interlayer_stability<T: Real>(energies: &[T], masses: &[Vec<T>]) -> Result<Stability<T>> {
    if energies.len() < 2 {
        return Err(DiagnosticsError::Length("need at least two layers".into()));
    }
    if energies.len() != masses.len() {
        return Err(DiagnosticsError::Length(format!(
            "{} energies but {} mass vectors",
            energies.len(),
            masses.len()
        )));
    }
    let n = masses[0].len();
    if let Some(bad) = masses.iter().position(|m| m.len() != n) {
        return Err(DiagnosticsError::Length(format!(
            "mass vector {bad} has {} entries, expected {n}",
            masses[bad].len()
        )));
    }
    let mut out = Stability {
        ratios: Vec::new(),
        cos_sims: Vec::new(),
        undefined_ratios: Vec::new(),
        undefined_cos: Vec::new(),
    };
    for l in 0..energies.len() - 1 {
        if energies[l] > T::zero() {
            out.ratios.push(energies[l + 1] / energies[l]);
        } else {
            out.ratios.push(T::zero());
            out.undefined_ratios.push(l);
        }
        let (p, q) = (&masses[l], &masses[l + 1]);
        let pq: T = p.iter().zip(q).map(|(&a, &b)| a * b).sum();
        let pp: T = p.iter().map(|&a| a * a).sum();
        let qq: T = q.iter().map(|&a| a * a).sum();
        if pp > T::zero() && qq > T::zero() {
            let c = pq / (pp.sqrt() * qq.sqrt());
            out.cos_sims.push(c.max(-T::one()).min(T::one()));
        } else {
            out.cos_sims.push(T::zero());
            out.undefined_cos.push(l);
        }
    }
    Ok(out)
}

/// Subtracts each column's mean.
pub fn center_columns<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    if x.nrows() == 0 {
        return out;
    }
    let n = T::from_usize(x.nrows()).expect("row count fits");
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
    }
    out
}

/// HFER cutoff: an absolute frequency index or a fraction of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    Absolute(usize),
    Fraction(f64),
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff::Fraction(0.5)
    }
}

impl Cutoff {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Cutoff::Absolute(k) => k,
            Cutoff::Fraction(f) => ((f * n as f64).floor() as usize).min(n),
        }
    }
}

impl FromStr for Cutoff {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.contains('.') {
            let f: f64 = s
                .parse()
                .map_err(|e| format!("bad cutoff fraction {s:?}: {e}"))?;
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("cutoff fraction {f} outside [0, 1]"));
            }
            Ok(Cutoff::Fraction(f))
        } else {
            s.parse()
                .map(Cutoff::Absolute)
                .map_err(|e| format!("bad cutoff {s:?}: {e}"))
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Absolute(k) => write!(f, "{k}"),
            Cutoff::Fraction(x) => write!(f, "{x:?}"),
        }
    }
}

/// Which hidden state is paired with layer `l`'s attention graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalAlignment {
    /// `hidden.{l}`, the representation the layer's attention is computed from.
    #[default]
    Input,
    /// `hidden.{l+1}`.
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Head aggregation weights; uniform when absent.
    pub head_weights: Option<Vec<f64>>,
    pub hfer_cutoff: Cutoff,
    pub signal_alignment: SignalAlignment,
    pub edge_threshold: f64,
    pub seed: u64,
    pub dense_limit: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            head_weights: None,
            hfer_cutoff: Cutoff::default(),
            signal_alignment: SignalAlignment::Input,
            edge_threshold: 0.0,
            seed: 0,
            dense_limit: crate::spectral::DEFAULT_DENSE_LIMIT,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self, num_heads: Option<usize>) -> Result<()> {
        if !(self.edge_threshold >= 0.0) || !self.edge_threshold.is_finite() {
            return Err(DiagnosticsError::Config(format!(
                "edge threshold must be finite and >= 0, got {}",
                self.edge_threshold
            )));
        }
        if let Cutoff::Fraction(f) = self.hfer_cutoff {
            if !(0.0..=1.0).contains(&f) {
                return Err(DiagnosticsError::Config(format!(
                    "cutoff fraction {f} outside [0, 1]"
                )));
            }
        }
        if self.dense_limit < 2 {
            return Err(DiagnosticsError::Config(
                "dense limit must be at least 2".into(),
            ));
        }
        if let Some(w) = &self.head_weights {
            HeadWeights::new(w.clone())?;
            if let Some(h) = num_heads {
                if w.len() != h {
                    return Err(DiagnosticsError::Config(format!(
                        "{} head weights for {h} heads",
                        w.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    ZeroSignal,
    Disconnected,
    IsolatedNodes,
    NoEdges,
    ZeroEnergyRatio,
    ZeroMassCosine,
    EntropyUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub layer: Option<usize>,
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub energy: f64,
    pub smi: f64,
    pub entropy_raw: f64,
    pub entropy_norm: f64,
    pub hfer: f64,
    pub cutoff: usize,
    pub fiedler: f64,
    pub fiedler_norm: f64,
    pub mad: f64,
    pub energy_ratio: Option<f64>,
    pub cos_sim: Option<f64>,
}

impl LayerDiagnostics {
    pub fn fiedler_for(&self, variant: LaplacianKind) -> f64 {
        match variant {
            LaplacianKind::Unnormalized => self.fiedler,
            LaplacianKind::Normalized => self.fiedler_norm,
        }
    }
}

/// Run metadata carried into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEcho {
    pub model_id: String,
    pub prompt_text: String,
    pub label: RunLabel,
    pub domain_tag: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_tokens: usize,
    pub hidden_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl ManifestEcho {
    pub fn from_capture(capture: &RunCapture) -> Self {
        let m = &capture.manifest;
        Self {
            model_id: m.model_id.clone(),
            prompt_text: m.prompt_text.clone(),
            label: m.label,
            domain_tag: m.domain_tag.clone(),
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            num_tokens: m.num_tokens,
            hidden_dim: m.hidden_dim,
            token_logprobs: m.token_logprobs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub peak_energy: f64,
    pub peak_layer: usize,
    pub final_energy: f64,
    /// `peak / final`; absent when the final energy is zero.
    pub reduction_ratio: Option<f64>,
    pub final_hfer: f64,
    pub final_entropy_norm: f64,
    pub final_fiedler: f64,
    pub final_fiedler_norm: f64,
}

/// Diagnostics of every layer of one run. The summary is derived from the
/// layers on demand and never stored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TrajectoryReport {
    pub run_id: String,
    pub manifest: ManifestEcho,
    pub config: AnalysisConfig,
    pub layers: Vec<LayerDiagnostics>,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

impl TrajectoryReport {
    pub fn summary(&self) -> Option<TrajectorySummary> {
        let last = self.layers.last()?;
        let (peak_layer, peak) =
            self.layers
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, be), (i, l)| {
                    if l.energy > be {
                        (i, l.energy)
                    } else {
                        (bi, be)
                    }
                });
        Some(TrajectorySummary {
            peak_energy: peak,
            peak_layer: self.layers[peak_layer].layer,
            final_energy: last.energy,
            reduction_ratio: (last.energy > 0.0).then(|| peak / last.energy),
            final_hfer: last.hfer,
            final_entropy_norm: last.entropy_norm,
            final_fiedler: last.fiedler,
            final_fiedler_norm: last.fiedler_norm,
        })
    }

    pub fn final_layer(&self) -> Option<&LayerDiagnostics> {
        self.layers.last()
    }

    /// Mean negative log-probability of the run's tokens, when captured.
    pub fn mean_nll(&self) -> Option<f64> {
        let lp = self.manifest.token_logprobs.as_ref()?;
        if lp.is_empty() {
            return None;
        }
        Some(-lp.iter().sum::<f64>() / lp.len() as f64)
    }
}

impl Serialize for TrajectoryReport {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            run_id: &'a str,
            manifest: &'a ManifestEcho,
            config: &'a AnalysisConfig,
            summary: Option<TrajectorySummary>,
            layers: &'a [LayerDiagnostics],
            warnings: &'a [Warning],
        }
        Out {
            run_id: &self.run_id,
            manifest: &self.manifest,
            config: &self.config,
            summary: self.summary(),
            layers: &self.layers,
            warnings: &self.warnings,
        }
        .serialize(serializer)
    }
}

struct LayerOutcome<T> {
    diag: LayerDiagnostics,
    energy: T,
    masses: Option<Vec<T>>,
    warnings: Vec<Warning>,
}

fn to_real<T: Real>(a: &Array2<f32>) -> Array2<T> {
    a.mapv(T::from_f32_lossless)
}

/// Full pipeline for one capture: graph, spectrum and diagnostics for every
/// layer, then inter-layer stability. Layers run in parallel; the result does
/// not depend on the schedule.
pub fn analyze_run<T: Real>(
    capture: &RunCapture,
    config: &AnalysisConfig,
) -> Result<TrajectoryReport> {
    capture.validate()?;
    config.validate(Some(capture.num_heads()))?;
    let heads = capture.num_heads();
    let weights = match &config.head_weights {
        Some(w) => HeadWeights::new(w.iter().map(|&v| T::of(v)).collect())?,
        None => HeadWeights::uniform(heads),
    };

    let outcomes = (0..capture.num_layers())
        .into_par_iter()
        .map(|layer| {
            analyze_layer::<T>(capture, config, &weights, layer).map_err(|e| {
                DiagnosticsError::Layer {
                    layer,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings: Vec<Warning> = outcomes.iter().flat_map(|o| o.warnings.clone()).collect();
    let mut layers: Vec<LayerDiagnostics> = outcomes.iter().map(|o| o.diag.clone()).collect();
    if outcomes.len() >= 2 {
        let energies: Vec<T> = outcomes.iter().map(|o| o.energy).collect();
        let n = capture.num_tokens();
        let masses: Vec<Vec<T>> = outcomes
            .iter()
            .map(|o| o.masses.clone().unwrap_or_else(|| vec![T::zero(); n]))
            .collect();
        let stab = interlayer_stability(&energies, &masses)?;
        for (l, d) in layers.iter_mut().take(outcomes.len() - 1).enumerate() {
            d.energy_ratio = Some(stab.ratios[l].as_f64());
            d.cos_sim = Some(stab.cos_sims[l].as_f64());
        }
        for l in stab.undefined_ratios {
            warnings.push(Warning {
                layer: Some(l),
                kind: WarningKind::ZeroEnergyRatio,
                message: format!("energy of layer {l} is zero; ratio reported as 0"),
            });
        }
        for l in stab.undefined_cos {
            warnings.push(Warning {
                layer: Some(l),
                kind: WarningKind::ZeroMassCosine,
                message: format!(
                    "spectral masses unavailable between layers {l} and {}; cosine reported as 0",
                    l + 1
                ),
            });
        }
    }
    for w in &warnings {
        log::warn!("{}", w.message);
    }

    Ok(TrajectoryReport {
        run_id: capture.fingerprint()?,
        manifest: ManifestEcho::from_capture(capture),
        config: config.clone(),
        layers,
        warnings,
    })
}

fn sentinel<T: Real>(
    r: Result<T>,
    layer: usize,
    kind: WarningKind,
    what: &str,
    warnings: &mut Vec<Warning>,
) -> Result<T> {
    match r {
        Ok(v) => Ok(v),
        Err(DiagnosticsError::Degenerate(msg)) => {
            warnings.push(Warning {
                layer: Some(layer),
                kind,
                message: format!("layer {layer}: {msg}; {what} reported as 0"),
            });
            Ok(T::zero())
        }
        Err(e) => Err(e),
    }
}

fn analyze_layer<T: Real>(
    capture: &RunCapture,
    config: &AnalysisConfig,
    weights: &HeadWeights<T>,
    layer: usize,
) -> Result<LayerOutcome<T>> {
    let heads: Vec<Array2<T>> = (0..capture.num_heads())
        .map(|h| to_real(capture.attention(layer, h).expect("validated capture")))
        .collect();
    let eps = T::of(config.edge_threshold);
    let graph = layer_graph(&heads, weights, eps)?;
    let signal_layer = match config.signal_alignment {
        SignalAlignment::Input => layer,
        SignalAlignment::Output => layer + 1,
    };
    let x: Array2<T> = to_real(capture.hidden(signal_layer).expect("validated capture"));
    let n = graph.num_nodes();
    let k = config.hfer_cutoff.resolve(n);
    let seed = config.seed.wrapping_add(layer as u64);
    let mut warnings = Vec::new();

    if !graph.isolated.is_empty() {
        warnings.push(Warning {
            layer: Some(layer),
            kind: WarningKind::IsolatedNodes,
            message: format!("layer {layer}: isolated nodes {:?}", graph.isolated),
        });
    }
    let conn = connectivity_check(&graph, T::zero());
    if !conn.connected {
        warnings.push(Warning {
            layer: Some(layer),
            kind: WarningKind::Disconnected,
            message: format!(
                "layer {layer}: graph has {} components; Fiedler values reported as 0",
                conn.num_components
            ),
        });
    }

    let energy = layer_energy(&graph, x.view())?;
    let smi = sentinel(
        smoothness_index(&graph, x.view()),
        layer,
        WarningKind::ZeroSignal,
        "smoothness index",
        &mut warnings,
    )?;
    let mad = sentinel(
        mad_discrepancy(&graph, x.view(), eps),
        layer,
        WarningKind::NoEdges,
        "MAD",
        &mut warnings,
    )?;

    let (entropy_raw, entropy_norm, hfer_value, fiedler, fiedler_norm, masses) = if n
        <= config.dense_limit
    {
        let spec = dense_eigh_with_limit(graph.laplacian.view(), config.dense_limit)?;
        let coeffs = gft(&spec, x.view())?;
        let (raw, norm) = match spectral_entropy(&coeffs) {
            Err(DiagnosticsError::Degenerate(msg)) => {
                warnings.push(Warning {
                    layer: Some(layer),
                    kind: WarningKind::ZeroSignal,
                    message: format!("layer {layer}: {msg}; spectral entropy reported as 0"),
                });
                (T::zero(), T::zero())
            }
            other => other?,
        };
        let h = sentinel(
            hfer(&coeffs, k),
            layer,
            WarningKind::ZeroSignal,
            "HFER",
            &mut warnings,
        )?;
        let (f, f_norm) = if conn.connected {
            let norm_spec = dense_eigh_with_limit(graph.laplacian_norm.view(), config.dense_limit)?;
            (spec.eigenvalues[1], norm_spec.eigenvalues[1])
        } else {
            (T::zero(), T::zero())
        };
        (raw, norm, h, f, f_norm, Some(coeffs.masses))
    } else {
        warnings.push(Warning {
            layer: Some(layer),
            kind: WarningKind::EntropyUnavailable,
            message: format!(
                "layer {layer}: N = {n} exceeds the dense limit; spectral entropy and masses reported as 0"
            ),
        });
        let h = sentinel(
            hfer_partial(&graph, x.view(), k, seed),
            layer,
            WarningKind::ZeroSignal,
            "HFER",
            &mut warnings,
        )?;
        let (f, f_norm) = if conn.connected {
            let opts = LanczosOptions::with_seed(seed);
            let lo = lanczos_partial(
                &CsrMatrix::from_dense(graph.laplacian.view()),
                2,
                Which::Smallest,
                &opts,
            )?;
            let ln = lanczos_partial(
                &CsrMatrix::from_dense(graph.laplacian_norm.view()),
                2,
                Which::Smallest,
                &opts,
            )?;
            (lo.eigenvalues[1], ln.eigenvalues[1])
        } else {
            (T::zero(), T::zero())
        };
        (T::zero(), T::zero(), h, f, f_norm, None)
    };

    Ok(LayerOutcome {
        diag: LayerDiagnostics {
            layer,
            energy: energy.as_f64(),
            smi: smi.as_f64(),
            entropy_raw: entropy_raw.as_f64(),
            entropy_norm: entropy_norm.as_f64(),
            hfer: hfer_value.as_f64(),
            cutoff: k,
            fiedler: fiedler.as_f64(),
            fiedler_norm: fiedler_norm.as_f64(),
            mad: mad.as_f64(),
            energy_ratio: None,
            cos_sim: None,
        },
        energy,
        masses,
        warnings,
    })
}

/// HFER from the cheaper end of a partial spectrum, using Parseval for the
/// total: low modes when `k <= N - k`, high modes otherwise.
pub fn hfer_partial<T: Real>(
    graph: &LayerGraph<T>,
    x: ArrayView2<T>,
    k: usize,
    seed: u64,
) -> Result<T> {
    check_rows(graph, &x)?;
    let n = graph.num_nodes();
    if k > n {
        return Err(DiagnosticsError::Cutoff { k, n });
    }
    let total: T = x.iter().map(|&v| v * v).sum();
    if !(total > T::zero()) {
        return Err(DiagnosticsError::Degenerate(
            "zero signal has no HFER".into(),
        ));
    }
    if k == 0 {
        return Ok(T::one());
    }
    if k == n {
        return Ok(T::zero());
    }
    let op = CsrMatrix::from_dense(graph.laplacian.view());
    let opts = LanczosOptions::with_seed(seed);
    let captured = |spec: Spectrum<T>| -> T {
        let c = spec.eigenvectors.t().dot(&x);
        c.iter().map(|&v| v * v).sum()
    };
    let ratio = if k <= n - k {
        T::one() - captured(lanczos_partial(&op, k, Which::Smallest, &opts)?) / total
    } else {
        captured(lanczos_partial(&op, n - k, Which::Largest, &opts)?) / total
    };
    Ok(ratio.max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_laplacian;
    use crate::spectral::{graph_spectrum, SpectralCoefficients};
    use ndarray::array;

    fn path3() -> LayerGraph<f64> {
        build_laplacian(array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    fn coeffs_from_masses(p: &[f64]) -> SpectralCoefficients<f64> {
        SpectralCoefficients {
            coeffs: Array2::zeros((p.len(), 1)),
            energies: p.to_vec(),
            masses: p.to_vec(),
            degenerate: false,
        }
    }

    #[test]
    fn energy_examples() {
        let g = path3();
        let x: Array2<f64> = array![[1.0], [0.0], [-1.0]];
        assert!((layer_energy(&g, x.view()).unwrap() - 2.0).abs() < 1e-12);
        let c = array![[3.0, -1.0], [3.0, -1.0], [3.0, -1.0]];
        assert_eq!(layer_energy(&g, c.view()).unwrap(), 0.0);
        let scaled = x.mapv(|v| v * 3.0);
        assert!((layer_energy(&g, scaled.view()).unwrap() - 18.0).abs() < 1e-12);
    }

    #[test]
    fn energy_shape_mismatch() {
        let g = path3();
        assert_eq!(
            layer_energy(&g, Array2::<f64>::zeros((2, 1)).view()),
            Err(DiagnosticsError::Shape { nodes: 3, rows: 2 })
        );
    }

    #[test]
    fn smi_examples() {
        let g = path3();
        let x: Array2<f64> = array![[1.0], [0.0], [-1.0]];
        assert!((smoothness_index(&g, x.view()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            smoothness_index(&g, array![[2.0], [2.0], [2.0]].view()).unwrap(),
            0.0
        );
        assert!(matches!(
            smoothness_index(&g, Array2::<f64>::zeros((3, 2)).view()),
            Err(DiagnosticsError::Degenerate(_))
        ));
    }

    #[test]
    fn smi_of_fiedler_vector_is_lambda2() {
        let w = array![
            [0.0, 0.4, 0.1, 0.0],
            [0.4, 0.0, 0.3, 0.2],
            [0.1, 0.3, 0.0, 0.7],
            [0.0, 0.2, 0.7, 0.0]
        ];
        let g = build_laplacian::<f64>(w).unwrap();
        let s = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let u = s.eigenvectors.column(1).to_owned().insert_axis(Axis(1));
        assert!((smoothness_index(&g, u.view()).unwrap() - s.eigenvalues[1]).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let (raw, norm) = spectral_entropy(&coeffs_from_masses(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!((raw, norm), (0.0, 0.0));
        let (raw, norm) = spectral_entropy(&coeffs_from_masses(&[0.25; 4])).unwrap();
        assert!((raw - 4f64.ln()).abs() < 1e-12);
        assert!((norm - 1.0).abs() < 1e-12);
        let (raw, _) = spectral_entropy(&coeffs_from_masses(&[0.5, 0.5, 0.0, 0.0])).unwrap();
        assert!((raw - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hfer_examples() {
        let g = path3();
        let s = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let c = gft(&s, array![[1.0], [1.0], [1.0]].view()).unwrap();
        assert!(hfer(&c, 1).unwrap() < 1e-12);
        let c = gft(&s, array![[1.0], [0.0], [-1.0]].view()).unwrap();
        assert_eq!(hfer(&c, 0).unwrap(), 1.0);
        assert!((hfer(&c, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(hfer(&c, 2).unwrap() < 1e-12);
        assert_eq!(hfer(&c, 4), Err(DiagnosticsError::Cutoff { k: 4, n: 3 }));
        let z = gft(&s, Array2::<f64>::zeros((3, 1)).view()).unwrap();
        assert!(matches!(hfer(&z, 1), Err(DiagnosticsError::Degenerate(_))));
        assert!(matches!(
            spectral_entropy(&z),
            Err(DiagnosticsError::Degenerate(_))
        ));
    }

    #[test]
    fn mad_examples() {
        let g = path3();
        let x: Array2<f64> = array![[1.0], [0.0], [-1.0]];
        assert_eq!(mad_discrepancy(&g, x.view(), 0.0).unwrap(), 1.0);
        assert_eq!(
            mad_discrepancy(&g, array![[5.0], [5.0], [5.0]].view(), 0.0).unwrap(),
            0.0
        );
        let doubled = x.mapv(|v| 2.0 * v);
        assert_eq!(mad_discrepancy(&g, doubled.view(), 0.0).unwrap(), 2.0);
        assert!(matches!(
            mad_discrepancy(&g, x.view(), 1.0),
            Err(DiagnosticsError::Degenerate(_))
        ));
    }

    #[test]
    fn stability_examples() {
        let p: Vec<f64> = vec![0.5, 0.5, 0.0];
        let q = vec![0.0, 0.0, 1.0];
        let s = interlayer_stability(&[1.0, 2.0, 1.0], &[p.clone(), p.clone(), q]).unwrap();
        assert_eq!(s.ratios, vec![2.0, 0.5]);
        assert!((s.cos_sims[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.cos_sims[1], 0.0);
        assert!(s.undefined_cos.is_empty());

        let s = interlayer_stability(&[0.0, 1.0], &[p.clone(), p.clone()]).unwrap();
        assert_eq!(s.ratios, vec![0.0]);
        assert_eq!(s.undefined_ratios, vec![0]);

        assert!(interlayer_stability(&[1.0], &[p.clone()]).is_err());
        assert!(interlayer_stability(&[1.0, 2.0], &[p]).is_err());
    }

    #[test]
    fn centering_examples() {
        assert_eq!(
            center_columns::<f64>(array![[1.0], [0.0], [-1.0]].view()),
            array![[1.0], [0.0], [-1.0]]
        );
        assert_eq!(
            center_columns::<f64>(array![[1.0], [1.0], [1.0]].view()),
            array![[0.0], [0.0], [0.0]]
        );
        assert_eq!(
            center_columns::<f64>(array![[2.0], [0.0]].view()),
            array![[1.0], [-1.0]]
        );
        let x: Array2<f64> = array![[1.0, 4.0], [2.0, -3.0], [6.0, 0.5]];
        let once = center_columns(x.view());
        let twice = center_columns(once.view());
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cutoff_parsing() {
        assert_eq!("3".parse::<Cutoff>().unwrap(), Cutoff::Absolute(3));
        assert_eq!("0.25".parse::<Cutoff>().unwrap(), Cutoff::Fraction(0.25));
        assert!("1.5".parse::<Cutoff>().is_err());
        assert_eq!(Cutoff::default().resolve(7), 3);
        assert_eq!(Cutoff::Fraction(1.0).resolve(7), 7);
    }

    #[test]
    fn config_validation() {
        let mut c = AnalysisConfig::default();
        c.validate(Some(2)).unwrap();
        c.head_weights = Some(vec![0.5, 0.5]);
        c.validate(Some(2)).unwrap();
        assert!(c.validate(Some(3)).is_err());
        c.head_weights = Some(vec![0.7, 0.7]);
        assert!(c.validate(Some(2)).is_err());
        c.head_weights = None;
        c.edge_threshold = -1.0;
        assert!(c.validate(None).is_err());
    }

    #[test]
    fn hfer_partial_matches_dense() {
        let w = array![
            [0.0, 0.4, 0.1, 0.0, 0.2],
            [0.4, 0.0, 0.3, 0.2, 0.0],
            [0.1, 0.3, 0.0, 0.7, 0.1],
            [0.0, 0.2, 0.7, 0.0, 0.5],
            [0.2, 0.0, 0.1, 0.5, 0.0]
        ];
        let g = build_laplacian::<f64>(w).unwrap();
        let x: Array2<f64> = array![
            [1.0, 0.2],
            [-0.5, 0.1],
            [0.3, -0.7],
            [0.9, 0.0],
            [-1.2, 0.4]
        ];
        let s = graph_spectrum(&g, LaplacianKind::Unnormalized).unwrap();
        let c = gft(&s, x.view()).unwrap();
        for k in 0..=5 {
            let dense = hfer(&c, k).unwrap();
            let partial = hfer_partial(&g, x.view(), k, 3).unwrap();
            assert!(
                (dense - partial).abs() < 1e-9,
                "k={k}: {dense} vs {partial}"
            );
        }
    }
}
