//! Hallucination detection from the final-layer Fiedler value, plus a
//! mean-NLL baseline.
//!
//! A run is flagged when `z = (f_last - mu) / sigma` exceeds a per-domain
//! threshold, with `mu` and `sigma` taken from factual runs of the same
//! domain. Thresholds are fit by scanning midpoints of calibration scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::TrajectoryReport;
use crate::spectral::LaplacianKind;
use crate::stats::{summarize, StatsError};

/// Threshold used when a domain has no two-class calibration data.
pub const DEFAULT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("inapplicable: {0}")]
    Inapplicable(String),
    #[error("input: {0}")]
    Input(String),
    #[error("leakage: {} test run(s) also used for calibration: {}", .0.len(), .0.join(", "))]
    Leakage(Vec<String>),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Factual,
    Hallucination,
}

impl Verdict {
    pub fn from_flag(hallucination: bool) -> Self {
        if hallucination {
            Verdict::Hallucination
        } else {
            Verdict::Factual
        }
    }

    pub fn is_hallucination(self) -> bool {
        self == Verdict::Hallucination
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FiedlerVariant {
    #[default]
    #[serde(rename = "fiedler_norm")]
    Normalized,
    #[serde(rename = "fiedler_unnorm")]
    Unnormalized,
}

impl FiedlerVariant {
    pub fn kind(self) -> LaplacianKind {
        match self {
            FiedlerVariant::Normalized => LaplacianKind::Normalized,
            FiedlerVariant::Unnormalized => LaplacianKind::Unnormalized,
        }
    }
}

/// Which tail of the z-score fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `z > tau`
    #[default]
    Upper,
    /// `z < -tau`
    Lower,
}

impl Direction {
    pub fn fires(self, z: f64, tau: f64) -> bool {
        match self {
            Direction::Upper => z > tau,
            Direction::Lower => z < -tau,
        }
    }

    fn oriented(self, z: f64) -> f64 {
        match self {
            Direction::Upper => z,
            Direction::Lower => -z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub threshold: f64,
    pub accuracy: f64,
    /// Distance from the threshold to the nearest calibration score.
    pub margin: f64,
    /// False when the best threshold puts every score in one class.
    pub informative: bool,
}

/// Exhaustive scan over midpoints of the sorted distinct scores, plus one
/// candidate below and one above all scores. Positive means `score > t`.
/// Ties in accuracy go to the larger margin, then to the smaller threshold.
pub fn scan_threshold(samples: &[(f64, bool)]) -> Result<ThresholdFit> {
    if samples.is_empty() {
        return Err(DetectorError::Calibration("no calibration scores".into()));
    }
    if let Some((s, _)) = samples.iter().find(|(s, _)| !s.is_finite()) {
        return Err(DetectorError::Calibration(format!(
            "non-finite calibration score {s}"
        )));
    }
    let mut distinct: Vec<f64> = samples.iter().map(|&(s, _)| s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let pad = 1.0f64.max(hi - lo);
    let mut candidates = vec![(lo - pad, false)];
    candidates.extend(distinct.windows(2).map(|w| (0.5 * (w[0] + w[1]), true)));
    candidates.push((hi + pad, false));

    let total = samples.len() as f64;
    let mut best: Option<ThresholdFit> = None;
    for (t, interior) in candidates {
        let correct = samples.iter().filter(|&&(s, pos)| (s > t) == pos).count();
        let margin = distinct
            .iter()
            .map(|s| (s - t).abs())
            .fold(f64::INFINITY, f64::min);
        let fit = ThresholdFit {
            threshold: t,
            accuracy: correct as f64 / total,
            margin,
            informative: interior,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                fit.accuracy > b.accuracy || (fit.accuracy == b.accuracy && fit.margin > b.margin)
            }
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least two candidates"))
}

fn truth(report: &TrajectoryReport) -> Result<bool> {
    report.manifest.label.is_hallucination().ok_or_else(|| {
        DetectorError::Input(format!("run {} has no ground-truth label", report.run_id))
    })
}

/// Factual-run statistics and the fitted threshold of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    pub mu_fid: f64,
    pub sigma_fid: f64,
    pub num_factual: usize,
    pub threshold: f64,
    pub direction: Direction,
    /// Calibration accuracy at the chosen threshold, when a scan ran.
    pub calibration_accuracy: Option<f64>,
    pub informative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub variant: FiedlerVariant,
    pub default_threshold: f64,
    pub direction: Direction,
    /// Pick the direction per domain from calibration accuracy.
    pub auto_direction: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            variant: FiedlerVariant::Normalized,
            default_threshold: DEFAULT_THRESHOLD,
            direction: Direction::Upper,
            auto_direction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub variant: FiedlerVariant,
    pub default_threshold: f64,
    pub default_direction: Direction,
    /// Pooled factual statistics for domains without their own.
    pub global: DomainModel,
    pub domains: BTreeMap<String, DomainModel>,
    pub factual_run_ids: Vec<String>,
    pub calibration_run_ids: Vec<String>,
    pub warnings: Vec<String>,
}

fn final_fiedler(report: &TrajectoryReport, variant: FiedlerVariant) -> Result<f64> {
    let last = report
        .final_layer()
        .ok_or_else(|| DetectorError::Input(format!("run {} has no layers", report.run_id)))?;
    let f = last.fiedler_for(variant.kind());
    if !f.is_finite() {
        return Err(DetectorError::Input(format!(
            "run {} has a non-finite final Fiedler value",
            report.run_id
        )));
    }
    Ok(f)
}

fn factual_stats(values: &[f64], what: &str, default: &DetectorConfig) -> Result<DomainModel> {
    if values.len() < 2 {
        return Err(DetectorError::Calibration(format!(
            "{what}: need at least 2 factual runs, got {}",
            values.len()
        )));
    }
    let s = summarize(values)?;
    let sigma = s.sd.unwrap_or(0.0);
    if sigma <= 0.0 {
        return Err(DetectorError::Calibration(format!(
            "{what}: factual Fiedler values have zero spread"
        )));
    }
    Ok(DomainModel {
        mu_fid: s.mean,
        sigma_fid: sigma,
        num_factual: s.n,
        threshold: default.default_threshold,
        direction: default.direction,
        calibration_accuracy: None,
        informative: false,
    })
}

impl DetectorModel {
    pub fn domain(&self, tag: &str) -> &DomainModel {
        self.domains.get(tag).unwrap_or(&self.global)
    }

    pub fn z_score(&self, report: &TrajectoryReport) -> Result<f64> {
        let d = self.domain(&report.manifest.domain_tag);
        Ok((final_fiedler(report, self.variant)? - d.mu_fid) / d.sigma_fid)
    }

    fn all_ids(&self) -> BTreeSet<&str> {
        self.factual_run_ids
            .iter()
            .chain(&self.calibration_run_ids)
            .map(String::as_str)
            .collect()
    }
}

/// Fits per-domain statistics on factual runs and thresholds on the mixed
/// calibration set. Domains whose calibration lacks one of the classes fall
/// back to the default threshold with a warning.
pub fn fit_detector(
    factual: &[TrajectoryReport],
    calibration: &[TrajectoryReport],
    config: &DetectorConfig,
) -> Result<DetectorModel> {
    let mut by_domain: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut pooled = Vec::new();
    for r in factual {
        if truth(r)? {
            return Err(DetectorError::Calibration(format!(
                "run {} in the factual set is labeled {:?}",
                r.run_id, r.manifest.label
            )));
        }
        let f = final_fiedler(r, config.variant)?;
        by_domain.entry(&r.manifest.domain_tag).or_default().push(f);
        pooled.push(f);
    }
    if factual.is_empty() {
        return Err(DetectorError::Calibration("no factual runs".into()));
    }
    let global = factual_stats(&pooled, "all domains", config)?;
    let mut warnings = Vec::new();
    let mut domains = BTreeMap::new();
    for (tag, values) in &by_domain {
        match factual_stats(values, &format!("domain {tag:?}"), config) {
            Ok(d) => {
                domains.insert(tag.to_string(), d);
            }
            Err(DetectorError::Calibration(msg)) => {
                warnings.push(format!("{msg}; using pooled statistics"));
            }
            Err(e) => return Err(e),
        }
    }

    let mut calib: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for r in calibration {
        let tag = r.manifest.domain_tag.as_str();
        let d = domains.get(tag).unwrap_or(&global);
        let z = (final_fiedler(r, config.variant)? - d.mu_fid) / d.sigma_fid;
        calib.entry(tag).or_default().push((z, truth(r)?));
    }
    for (tag, samples) in &calib {
        let both = samples.iter().any(|s| s.1) && samples.iter().any(|s| !s.1);
        let entry = domains
            .entry(tag.to_string())
            .or_insert_with(|| global.clone());
        if !both {
            warnings.push(format!(
                "domain {tag:?}: calibration has a single class; threshold defaults to {}",
                config.default_threshold
            ));
            continue;
        }
        let directions: &[Direction] = if config.auto_direction {
            &[Direction::Upper, Direction::Lower]
        } else {
            std::slice::from_ref(&config.direction)
        };
        let mut chosen: Option<(Direction, ThresholdFit)> = None;
        for &dir in directions {
            let oriented: Vec<(f64, bool)> =
                samples.iter().map(|&(z, y)| (dir.oriented(z), y)).collect();
            let fit = scan_threshold(&oriented)?;
            if chosen
                .as_ref()
                .is_none_or(|(_, b)| fit.accuracy > b.accuracy)
            {
                chosen = Some((dir, fit));
            }
        }
        let (dir, fit) = chosen.expect("at least one direction");
        if !fit.informative {
            warnings.push(format!(
                "domain {tag:?}: calibration scores do not separate the classes"
            ));
        }
        entry.direction = dir;
        entry.threshold = fit.threshold;
        entry.calibration_accuracy = Some(fit.accuracy);
        entry.informative = fit.informative;
    }

    Ok(DetectorModel {
        variant: config.variant,
        default_threshold: config.default_threshold,
        default_direction: config.direction,
        global,
        domains,
        factual_run_ids: factual.iter().map(|r| r.run_id.clone()).collect(),
        calibration_run_ids: calibration.iter().map(|r| r.run_id.clone()).collect(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShdResult {
    pub verdict: Verdict,
    pub z_fid: f64,
    pub threshold: f64,
}

pub fn shd_classify(report: &TrajectoryReport, model: &DetectorModel) -> Result<ShdResult> {
    let d = model.domain(&report.manifest.domain_tag);
    let z = model.z_score(report)?;
    Ok(ShdResult {
        verdict: Verdict::from_flag(d.direction.fires(z, d.threshold)),
        z_fid: z,
        threshold: d.threshold,
    })
}

fn mean_nll(report: &TrajectoryReport) -> Result<f64> {
    report.mean_nll().ok_or_else(|| {
        DetectorError::Inapplicable(format!(
            "run {} carries no token log-probabilities",
            report.run_id
        ))
    })
}

/// Flags runs whose mean negative log-probability exceeds `threshold`.
pub fn perplexity_classify(report: &TrajectoryReport, threshold: f64) -> Result<Verdict> {
    Ok(Verdict::from_flag(mean_nll(report)? > threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityModel {
    pub threshold: f64,
    pub calibration_accuracy: f64,
    pub calibration_run_ids: Vec<String>,
}

pub fn fit_perplexity(calibration: &[TrajectoryReport]) -> Result<PerplexityModel> {
    let samples = calibration
        .iter()
        .map(|r| Ok((mean_nll(r)?, truth(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let fit = scan_threshold(&samples)?;
    Ok(PerplexityModel {
        threshold: fit.threshold,
        calibration_accuracy: fit.accuracy,
        calibration_run_ids: calibration.iter().map(|r| r.run_id.clone()).collect(),
    })
}

/// A fitted method that can be evaluated on held-out runs.
pub trait Classifier {
    fn method(&self) -> &str;
    fn classify(&self, report: &TrajectoryReport) -> Result<Verdict>;
    /// Run identifiers the method saw while fitting.
    fn fitted_on(&self) -> BTreeSet<&str>;
}

impl Classifier for DetectorModel {
    fn method(&self) -> &str {
        "shd"
    }

    fn classify(&self, report: &TrajectoryReport) -> Result<Verdict> {
        Ok(shd_classify(report, self)?.verdict)
    }

    fn fitted_on(&self) -> BTreeSet<&str> {
        self.all_ids()
    }
}

impl Classifier for PerplexityModel {
    fn method(&self) -> &str {
        "perplexity"
    }

    fn classify(&self, report: &TrajectoryReport) -> Result<Verdict> {
        perplexity_classify(report, self.threshold)
    }

    fn fitted_on(&self) -> BTreeSet<&str> {
        self.calibration_run_ids
            .iter()
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEval {
    pub confusion: Confusion,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub accuracy: f64,
    pub total: usize,
    pub confusion: Confusion,
    pub per_domain: BTreeMap<String, DomainEval>,
}

pub fn check_leakage(classifier: &dyn Classifier, test: &[TrajectoryReport]) -> Result<()> {
    let seen = classifier.fitted_on();
    let leaked: BTreeSet<String> = test
        .iter()
        .filter(|r| seen.contains(r.run_id.as_str()))
        .map(|r| r.run_id.clone())
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(DetectorError::Leakage(leaked.into_iter().collect()))
    }
}

pub fn evaluate_one(classifier: &dyn Classifier, test: &[TrajectoryReport]) -> Result<EvalReport> {
    check_leakage(classifier, test)?;
    let mut confusion = Confusion::default();
    let mut per_domain: BTreeMap<String, Confusion> = BTreeMap::new();
    for r in test {
        let actual = truth(r)?;
        let predicted = classifier.classify(r)?.is_hallucination();
        confusion.record(predicted, actual);
        per_domain
            .entry(r.manifest.domain_tag.clone())
            .or_default()
            .record(predicted, actual);
    }
    Ok(EvalReport {
        method: classifier.method().to_string(),
        accuracy: confusion.accuracy(),
        total: confusion.total(),
        confusion,
        per_domain: per_domain
            .into_iter()
            .map(|(k, c)| {
                (
                    k,
                    DomainEval {
                        accuracy: c.accuracy(),
                        confusion: c,
                    },
                )
            })
            .collect(),
    })
}

pub fn evaluate(
    classifiers: &[&dyn Classifier],
    test: &[TrajectoryReport],
) -> Result<Vec<EvalReport>> {
    classifiers.iter().map(|c| evaluate_one(*c, test)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(scores: &[f64], positive: bool) -> Vec<(f64, bool)> {
        scores.iter().map(|&s| (s, positive)).collect()
    }

    #[test]
    fn scan_separated_scores() {
        let mut s = labeled(&[-1.0, -0.5], false);
        s.extend(labeled(&[2.0, 3.0], true));
        let fit = scan_threshold(&s).unwrap();
        assert_eq!(fit.threshold, 0.75);
        assert_eq!(fit.accuracy, 1.0);
        assert!(fit.informative);
    }

    #[test]
    fn scan_nll_example() {
        let mut s = labeled(&[1.0, 1.2], false);
        s.extend(labeled(&[3.0, 3.5], true));
        let fit = scan_threshold(&s).unwrap();
        assert!((fit.threshold - 2.1).abs() < 1e-12);
        assert_eq!(fit.accuracy, 1.0);
    }

    #[test]
    fn scan_identical_scores_is_uninformative() {
        let mut s = labeled(&[0.4; 3], false);
        s.extend(labeled(&[0.4], true));
        let fit = scan_threshold(&s).unwrap();
        assert_eq!(fit.accuracy, 0.75);
        assert!(!fit.informative);
    }

    #[test]
    fn scan_is_optimal_over_grid() {
        let s = vec![
            (0.1, false),
            (0.5, true),
            (0.3, false),
            (0.9, true),
            (0.7, false),
            (0.2, true),
        ];
        let fit = scan_threshold(&s).unwrap();
        let mut xs: Vec<f64> = s.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let acc = s.iter().filter(|&&(x, y)| (x > t) == y).count() as f64 / s.len() as f64;
            assert!(acc <= fit.accuracy);
        }
    }

    #[test]
    fn strict_boundary() {
        assert!(!Direction::Upper.fires(2.0, 2.0));
        assert!(Direction::Upper.fires(2.0 + 1e-12, 2.0));
        assert!(Direction::Lower.fires(-3.0, 2.0));
        assert!(!Direction::Lower.fires(3.0, 2.0));
    }

    #[test]
    fn confusion_counts() {
        let mut c = Confusion::default();
        for (p, a) in [
            (true, true),
            (false, false),
            (true, false),
            (false, true),
            (true, true),
        ] {
            c.record(p, a);
        }
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        assert_eq!(c.total(), 5);
        assert!((c.accuracy() - 0.6).abs() < 1e-15);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"tp":2,"fp":1,"tn":1,"fn":1}"#);
    }

    #[test]
    fn variant_serde_names() {
        assert_eq!(
            serde_json::to_string(&FiedlerVariant::Normalized).unwrap(),
            "\"fiedler_norm\""
        );
        assert_eq!(
            serde_json::to_string(&FiedlerVariant::Unnormalized).unwrap(),
            "\"fiedler_unnorm\""
        );
    }
}
