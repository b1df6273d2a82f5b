//! Group summaries, effect sizes, Welch's t-test and baseline bands.
//!
//! p-values are raw; no multiple-comparison correction is applied.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::diagnostics::{LayerDiagnostics, TrajectoryReport};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no values to summarize")]
    Empty,
    #[error("{what} needs at least {need} values, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("zero variance in both groups: {0}")]
    ZeroVariance(String),
    #[error("layer alignment: {0}")]
    Alignment(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// Per-layer scalar that bands and comparisons are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Energy,
    Smi,
    EntropyRaw,
    EntropyNorm,
    Hfer,
    Fiedler,
    FiedlerNorm,
    Mad,
    EnergyRatio,
    CosSim,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Energy,
        Metric::Smi,
        Metric::EntropyRaw,
        Metric::EntropyNorm,
        Metric::Hfer,
        Metric::Fiedler,
        Metric::FiedlerNorm,
        Metric::Mad,
        Metric::EnergyRatio,
        Metric::CosSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Energy => "energy",
            Metric::Smi => "smi",
            Metric::EntropyRaw => "entropy_raw",
            Metric::EntropyNorm => "entropy_norm",
            Metric::Hfer => "hfer",
            Metric::Fiedler => "fiedler",
            Metric::FiedlerNorm => "fiedler_norm",
            Metric::Mad => "mad",
            Metric::EnergyRatio => "energy_ratio",
            Metric::CosSim => "cos_sim",
        }
    }

    /// `None` for the optional inter-layer metrics at the last layer.
    pub fn value(self, layer: &LayerDiagnostics) -> Option<f64> {
        Some(match self {
            Metric::Energy => layer.energy,
            Metric::Smi => layer.smi,
            Metric::EntropyRaw => layer.entropy_raw,
            Metric::EntropyNorm => layer.entropy_norm,
            Metric::Hfer => layer.hfer,
            Metric::Fiedler => layer.fiedler,
            Metric::FiedlerNorm => layer.fiedler_norm,
            Metric::Mad => layer.mad,
            Metric::EnergyRatio => return layer.energy_ratio,
            Metric::CosSim => return layer.cos_sim,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| StatsError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub sd: Option<f64>,
    pub metric_name: String,
}

impl GroupSummary {
    fn variance(&self, what: &'static str) -> Result<f64> {
        match self.sd {
            Some(sd) if self.n >= 2 => Ok(sd * sd),
            _ => Err(StatsError::TooFew {
                what,
                need: 2,
                got: self.n,
            }),
        }
    }
}

pub fn summarize(values: &[f64]) -> Result<GroupSummary> {
    summarize_metric(values, "")
}

pub fn summarize_metric(values: &[f64], metric_name: &str) -> Result<GroupSummary> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = values.len();
    let constant = values.iter().all(|&v| v == values[0]);
    let mean = if constant {
        values[0]
    } else {
        values.iter().sum::<f64>() / n as f64
    };
    let sd = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(GroupSummary {
        n,
        mean,
        sd,
        metric_name: metric_name.to_string(),
    })
}

/// Bias-corrected standardized mean difference `(mean_b - mean_a) / s_pooled * J`.
pub fn hedges_g(a: &GroupSummary, b: &GroupSummary) -> Result<f64> {
    let va = a.variance("hedges_g")?;
    let vb = b.variance("hedges_g")?;
    let (na, nb) = (a.n as f64, b.n as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(StatsError::ZeroVariance(format!(
            "pooled sd is 0, effect is infinite (means {} vs {})",
            a.mean, b.mean
        )));
    }
    let j = 1.0 - 3.0 / (4.0 * (na + nb) - 9.0);
    Ok((b.mean - a.mean) / pooled * j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Student-t p-value.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn welch_t(a: &GroupSummary, b: &GroupSummary) -> Result<WelchTest> {
    let va = a.variance("welch_t")? / a.n as f64;
    let vb = b.variance("welch_t")? / b.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(StatsError::ZeroVariance(format!(
            "both groups constant (means {} vs {})",
            a.mean, b.mean
        )));
    }
    let t = (b.mean - a.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    Ok(WelchTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub hedges_g: f64,
    pub welch_t: f64,
    pub welch_df: f64,
    pub p_value: f64,
}

pub fn effect(a: &GroupSummary, b: &GroupSummary) -> Result<EffectReport> {
    let w = welch_t(a, b)?;
    Ok(EffectReport {
        hedges_g: hedges_g(a, b)?,
        welch_t: w.t,
        welch_df: w.df,
        p_value: w.p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBand {
    pub layer: usize,
    pub metrics: BTreeMap<Metric, GroupSummary>,
}

/// Per-layer `mean ± multiplier * sd` bands over aligned runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineBand {
    pub multiplier: f64,
    pub num_runs: usize,
    pub run_ids: Vec<String>,
    pub layers: Vec<LayerBand>,
}

impl BaselineBand {
    pub fn summary(&self, layer: usize, metric: Metric) -> Option<&GroupSummary> {
        self.layers.get(layer)?.metrics.get(&metric)
    }

    pub fn bounds(&self, layer: usize, metric: Metric) -> Option<(f64, f64)> {
        let s = self.summary(layer, metric)?;
        let half = self.multiplier * s.sd.unwrap_or(0.0);
        Some((s.mean - half, s.mean + half))
    }
}

fn check_aligned<'a>(
    runs: impl IntoIterator<Item = &'a TrajectoryReport>,
    layers: usize,
) -> Result<()> {
    for run in runs {
        if run.layers.len() != layers {
            return Err(StatsError::Alignment(format!(
                "run {} has {} layers, expected {layers}",
                run.run_id,
                run.layers.len()
            )));
        }
    }
    Ok(())
}

/// Optional metrics get a band only at layers where every run has them.
pub fn build_baseline(runs: &[TrajectoryReport], multiplier: f64) -> Result<BaselineBand> {
    if runs.len() < 2 {
        return Err(StatsError::TooFew {
            what: "baseline",
            need: 2,
            got: runs.len(),
        });
    }
    let num_layers = runs[0].layers.len();
    check_aligned(runs, num_layers)?;
    let layers = (0..num_layers)
        .map(|l| {
            let mut metrics = BTreeMap::new();
            for metric in Metric::ALL {
                let values: Option<Vec<f64>> =
                    runs.iter().map(|r| metric.value(&r.layers[l])).collect();
                if let Some(values) = values {
                    metrics.insert(metric, summarize_metric(&values, metric.name())?);
                }
            }
            Ok(LayerBand { layer: l, metrics })
        })
        .collect::<Result<_>>()?;
    Ok(BaselineBand {
        multiplier,
        num_runs: runs.len(),
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricExceedance {
    pub value: f64,
    pub mean: f64,
    pub sd: f64,
    /// `(value - mean) / sd`; absent when `sd = 0` and the value differs.
    pub z: Option<f64>,
    pub infinite: bool,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExceedance {
    pub layer: usize,
    pub metrics: BTreeMap<Metric, MetricExceedance>,
}

pub fn exceedance_value(value: f64, summary: &GroupSummary, multiplier: f64) -> MetricExceedance {
    let sd = summary.sd.unwrap_or(0.0);
    let diff = value - summary.mean;
    let (z, infinite) = if sd > 0.0 {
        (Some(diff / sd), false)
    } else if diff == 0.0 {
        (Some(0.0), false)
    } else {
        (None, true)
    };
    MetricExceedance {
        value,
        mean: summary.mean,
        sd,
        z,
        infinite,
        exceeds: infinite || z.is_some_and(|z| z.abs() > multiplier),
    }
}

pub fn exceedance(report: &TrajectoryReport, band: &BaselineBand) -> Result<Vec<LayerExceedance>> {
    check_aligned([report], band.layers.len())?;
    Ok(band
        .layers
        .iter()
        .zip(&report.layers)
        .map(|(lb, diag)| LayerExceedance {
            layer: lb.layer,
            metrics: lb
                .metrics
                .iter()
                .filter_map(|(&m, s)| {
                    Some((m, exceedance_value(m.value(diag)?, s, band.multiplier)))
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub a: GroupSummary,
    pub b: GroupSummary,
    pub effect: Option<EffectReport>,
    /// Why `effect` is absent.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerComparison {
    pub layer: usize,
    pub metrics: BTreeMap<Metric, MetricComparison>,
}

/// Layer-by-layer effect of group `b` relative to group `a`.
pub fn compare_groups(
    a: &[TrajectoryReport],
    b: &[TrajectoryReport],
) -> Result<Vec<LayerComparison>> {
    let first = a.first().or(b.first()).ok_or(StatsError::Empty)?;
    let num_layers = first.layers.len();
    check_aligned(a.iter().chain(b), num_layers)?;
    let collect = |runs: &[TrajectoryReport], l: usize, m: Metric| -> Option<Vec<f64>> {
        runs.iter().map(|r| m.value(&r.layers[l])).collect()
    };
    let mut out = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let mut metrics = BTreeMap::new();
        for m in Metric::ALL {
            let (Some(va), Some(vb)) = (collect(a, l, m), collect(b, l, m)) else {
                continue;
            };
            let sa = summarize_metric(&va, m.name())?;
            let sb = summarize_metric(&vb, m.name())?;
            let (effect, note) = match effect(&sa, &sb) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            metrics.insert(
                m,
                MetricComparison {
                    a: sa,
                    b: sb,
                    effect,
                    note,
                },
            );
        }
        out.push(LayerComparison { layer: l, metrics });
    }
    Ok(out)
}
