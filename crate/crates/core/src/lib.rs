//! Graph-spectral diagnostics for transformer runs.
//!
//! Attention maps become weighted token graphs, hidden states become signals
//! on those graphs, and the graph Fourier transform turns each layer into a
//! handful of scalars: Dirichlet energy, smoothness, spectral entropy,
//! high-frequency energy ratio, Fiedler value and local discrepancy.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); reports,
//! statistics and the detector work in `f64`.
//!
//! ```
//! use attnspec::{build_laplacian, dense_eigh, gft};
//! use ndarray::array;
//!
//! let g = build_laplacian::<f64>(array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
//! let spec = dense_eigh(g.laplacian.view()).unwrap();
//! let coeffs = gft(&spec, array![[1.0], [0.0], [-1.0]].view()).unwrap();
//! assert!((coeffs.total_energy() - 2.0).abs() < 1e-12);
//! ```

pub mod detector;
pub mod diagnostics;
pub mod graph;
pub mod io;
pub mod scalar;
pub mod spectral;
pub mod stats;
pub mod synthetic;
pub mod theory;

pub use detector::{
    evaluate, fit_detector, fit_perplexity, perplexity_classify, shd_classify, Classifier,
    DetectorConfig, DetectorError, DetectorModel, EvalReport, FiedlerVariant, PerplexityModel,
    Verdict,
};
pub use diagnostics::{
    analyze_run, center_columns, hfer, interlayer_stability, layer_energy, mad_discrepancy,
    smoothness_index, spectral_entropy, AnalysisConfig, Cutoff, DiagnosticsError, LayerDiagnostics,
    SignalAlignment, TrajectoryReport,
};
pub use graph::{
    aggregate_heads, build_laplacian, connectivity_check, layer_graph, symmetrize,
    ConnectivityReport, GraphError, HeadWeights, LayerGraph,
};
pub use io::{
    read_capture, read_trajectory_report, write_capture, write_report, CaptureError,
    CaptureManifest, ReportFormat, ReportRef, RunCapture, RunLabel,
};
pub use scalar::Real;
pub use spectral::{
    dense_eigh, fiedler_value, gft, graph_spectrum, lanczos_partial, LanczosOptions, LaplacianKind,
    SpectralCoefficients, SpectralError, Spectrum, Which,
};
pub use stats::{
    build_baseline, exceedance, hedges_g, summarize, welch_t, BaselineBand, EffectReport,
    GroupSummary,
};
pub use theory::{
    check_energy_identity, check_hfer_mad_correlation, check_lipschitz, check_poincare,
    run_verification, BoundCheckResult, VerificationReport, VerifyConfig,
};

pub type LayerGraph32 = graph::LayerGraph<f32>;
pub type LayerGraph64 = graph::LayerGraph<f64>;
pub type HeadWeights32 = graph::HeadWeights<f32>;
pub type HeadWeights64 = graph::HeadWeights<f64>;
pub type Spectrum32 = spectral::Spectrum<f32>;
pub type Spectrum64 = spectral::Spectrum<f64>;
pub type SpectralCoefficients32 = spectral::SpectralCoefficients<f32>;
pub type SpectralCoefficients64 = spectral::SpectralCoefficients<f64>;
pub type CsrMatrix32 = spectral::CsrMatrix<f32>;
pub type CsrMatrix64 = spectral::CsrMatrix<f64>;
