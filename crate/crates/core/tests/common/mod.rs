#![allow(dead_code)]

use attnspec::diagnostics::{LayerDiagnostics, ManifestEcho};
use attnspec::{AnalysisConfig, RunLabel, TrajectoryReport};

pub fn layer(index: usize, fiedler_norm: f64, hfer: f64) -> LayerDiagnostics {
    LayerDiagnostics {
        layer: index,
        energy: 1.0 + index as f64,
        smi: 0.5,
        entropy_raw: 1.0,
        entropy_norm: 0.5,
        hfer,
        cutoff: 4,
        fiedler: 2.0 * fiedler_norm,
        fiedler_norm,
        mad: 0.1,
        energy_ratio: None,
        cos_sim: None,
    }
}

pub fn report(
    id: &str,
    label: RunLabel,
    domain: &str,
    layers: Vec<LayerDiagnostics>,
) -> TrajectoryReport {
    TrajectoryReport {
        run_id: id.to_string(),
        manifest: ManifestEcho {
            model_id: "test".into(),
            prompt_text: String::new(),
            label,
            domain_tag: domain.into(),
            num_layers: layers.len(),
            num_heads: 1,
            num_tokens: 8,
            hidden_dim: 4,
            token_logprobs: None,
        },
        config: AnalysisConfig::default(),
        layers,
        warnings: Vec::new(),
    }
}

/// Single-layer report whose final normalized Fiedler value is `f`.
pub fn fiedler_run(id: &str, label: RunLabel, domain: &str, f: f64) -> TrajectoryReport {
    report(id, label, domain, vec![layer(0, f, 0.1)])
}
