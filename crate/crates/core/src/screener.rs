//! Hybrid symptom-count + logistic screener with a hard specificity
//! constraint, and the full confusion-matrix metric set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::MessageRecord;
use crate::error::{Error, Result};
use crate::scoring::Tier;
use crate::stats::sigmoid;

/// Interpretable symptom-count rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenRule {
    /// Messages carrying a very-high-tier symptom needed to fire.
    pub min_very_high: usize,
    /// Distinct high-tier symptoms needed to fire.
    pub min_high_distinct: usize,
}

impl Default for ScreenRule {
    fn default() -> Self {
        Self {
            min_very_high: 1,
            min_high_distinct: 2,
        }
    }
}

pub const FEATURE_NAMES: [&str; 6] = [
    "very_high_count",
    "high_count",
    "moderate_count",
    "moderate_low_count",
    "low_count",
    "total_messages",
];

/// Calibrated hybrid screener: rule parameters, logistic coefficients over
/// the window features, and the scanned threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenerModel {
    pub rule: ScreenRule,
    pub feature_names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub threshold: f64,
    pub spec_target: f64,
    pub prevalence: f64,
}

impl ScreenerModel {
    /// Rule-only screener that never fires on the score branch.
    pub fn rule_only(rule: ScreenRule, spec_target: f64, prevalence: f64) -> Self {
        Self {
            rule,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            intercept: f64::NEG_INFINITY,
            coefficients: vec![0.0; FEATURE_NAMES.len()],
            threshold: 1.0,
            spec_target,
            prevalence,
        }
    }
}

/// Which branch of the hybrid flagged the patient. Rule takes precedence in
/// reporting when both fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagReason {
    Rule,
    Score,
    None,
}

/// Per-tier message counts plus the total message count for one window.
///
/// A message counts toward tier t when any of its annotations maps to a
/// tier-t symptom, so a multi-labeled message can contribute to several
/// tiers. Every annotation must be tiered.
pub fn window_features(
    window_messages: &[&MessageRecord],
    tiers: &BTreeMap<String, Tier>,
) -> Result<[f64; 6]> {
    let mut counts = [0.0; 6];
    for m in window_messages {
        let mut seen: BTreeSet<Tier> = BTreeSet::new();
        for a in &m.annotations {
            let tier = tiers
                .get(&a.sub2_id)
                .ok_or_else(|| Error::invalid(format!("annotation `{}` has no tier", a.sub2_id)))?;
            seen.insert(*tier);
        }
        for tier in seen {
            let idx = match tier {
                Tier::VeryHigh => 0,
                Tier::High => 1,
                Tier::Moderate => 2,
                Tier::ModerateLow => 3,
                Tier::Low => 4,
            };
            counts[idx] += 1.0;
        }
        counts[5] += 1.0;
    }
    Ok(counts)
}

fn rule_fires(
    window_messages: &[&MessageRecord],
    tiers: &BTreeMap<String, Tier>,
    rule: &ScreenRule,
) -> Result<bool> {
    let mut very_high_messages = 0usize;
    let mut high_symptoms: BTreeSet<&str> = BTreeSet::new();
    for m in window_messages {
        let mut has_very_high = false;
        for a in &m.annotations {
            let tier = tiers
                .get(&a.sub2_id)
                .ok_or_else(|| Error::invalid(format!("annotation `{}` has no tier", a.sub2_id)))?;
            match tier {
                Tier::VeryHigh => has_very_high = true,
                Tier::High => {
                    high_symptoms.insert(a.sub2_id.as_str());
                }
                _ => {}
            }
        }
        if has_very_high {
            very_high_messages += 1;
        }
    }
    Ok(very_high_messages >= rule.min_very_high || high_symptoms.len() >= rule.min_high_distinct)
}

/// Flag decision for one patient's window: the symptom-count rule OR the
/// thresholded logistic score.
pub fn screen_patient(
    window_messages: &[&MessageRecord],
    tiers: &BTreeMap<String, Tier>,
    model: &ScreenerModel,
) -> Result<(bool, f64, FlagReason)> {
    let features = window_features(window_messages, tiers)?;
    let eta = model.intercept
        + features
            .iter()
            .zip(&model.coefficients)
            .map(|(x, c)| x * c)
            .sum::<f64>();
    let prob = sigmoid(eta);
    let rule = rule_fires(window_messages, tiers, &model.rule)?;
    let score = prob >= model.threshold;
    let reason = if rule {
        FlagReason::Rule
    } else if score {
        FlagReason::Score
    } else {
        FlagReason::None
    };
    Ok((rule || score, prob, reason))
}

/// The scan grid {0, step, 2*step, ..., 1}; exactly 101 values at step 0.01.
pub fn threshold_grid(grid_step: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::invalid(format!(
            "grid step {grid_step} outside (0,1]"
        )));
    }
    let denom = (1.0 / grid_step).round();
    Ok((0..=denom as usize).map(|k| k as f64 / denom).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// The chosen threshold flags nobody on the calibration set.
    pub degenerate: bool,
    /// False only when no grid point reached the specificity target (possible
    /// only when a control sits at probability 1.0 exactly).
    pub target_met: bool,
}

/// Scan the probability grid for the threshold that maximizes sensitivity
/// subject to specificity >= `spec_target`; ties prefer higher specificity,
/// then the lower threshold. Positive prediction is `prob >= threshold`.
pub fn calibrate_threshold(
    probs: &[f64],
    labels: &[bool],
    spec_target: f64,
    grid_step: f64,
) -> Result<CalibrationOutcome> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::invalid("probs/labels length mismatch or empty"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0,1]")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut best: Option<CalibrationOutcome> = None;
    let mut fallback: Option<CalibrationOutcome> = None;
    for theta in threshold_grid(grid_step)? {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&p, &y) in probs.iter().zip(labels) {
            if p >= theta {
                if y {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let se = tp as f64 / n_pos as f64;
        let sp = (n_neg - fp) as f64 / n_neg as f64;
        let candidate = CalibrationOutcome {
            threshold: theta,
            sensitivity: se,
            specificity: sp,
            degenerate: tp + fp == 0,
            target_met: true,
        };
        if sp >= spec_target {
            let better = match &best {
                None => true,
                Some(b) => se > b.sensitivity || (se == b.sensitivity && sp > b.specificity),
            };
            if better {
                best = Some(candidate.clone());
            }
        }
        let fb_better = match &fallback {
            None => true,
            Some(f) => sp > f.specificity || (sp == f.specificity && se > f.sensitivity),
        };
        if fb_better {
            fallback = Some(candidate);
        }
    }
    Ok(best.unwrap_or_else(|| {
        let mut f = fallback.expect("grid is non-empty");
        f.target_met = false;
        f
    }))
}

/// Confusion-matrix metrics with prevalence-adjusted predictive values.
/// Undefined ratios (0/0) are reported as absent, never propagated as NaN.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv_adj: Option<f64>,
    pub npv_adj: Option<f64>,
    pub f1: Option<f64>,
    pub alert_burden: f64,
    pub n_patients: usize,
    /// Context filled by the simulation layer.
    pub n_messages: usize,
    pub window: u32,
    pub block_id: String,
}

/// Compute sensitivity, specificity, Bayes-adjusted PPV/NPV at deployment
/// prevalence `pi`, raw-count F1 and alert burden.
pub fn evaluate(flags: &[bool], labels: &[bool], pi: f64) -> Result<MetricsReport> {
    if flags.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} flags for {} labels",
            flags.len(),
            labels.len()
        )));
    }
    if flags.is_empty() {
        return Err(Error::invalid("empty evaluation"));
    }
    if !(0.0 < pi && pi < 1.0) {
        return Err(Error::invalid(format!("prevalence {pi} outside (0,1)")));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&f, &y) in flags.iter().zip(labels) {
        match (f, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| -> Option<f64> {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    // With zero observed false positives the false-positive-rate estimate is
    // zero regardless of the control count.
    let fpr = if fp == 0 {
        Some(0.0)
    } else {
        ratio(fp, fp + tn)
    };
    let ppv_adj = match (sensitivity, fpr) {
        (Some(se), Some(fpr)) => {
            let den = se * pi + fpr * (1.0 - pi);
            (den > 0.0).then(|| se * pi / den)
        }
        _ => None,
    };
    let npv_adj = match (sensitivity, specificity) {
        (Some(se), Some(sp)) => {
            let den = sp * (1.0 - pi) + (1.0 - se) * pi;
            (den > 0.0).then(|| sp * (1.0 - pi) / den)
        }
        _ => None,
    };
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    let n = flags.len();
    Ok(MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        ppv_adj,
        npv_adj,
        f1,
        alert_burden: (tp + fp) as f64 / n as f64,
        n_patients: n,
        n_messages: 0,
        window: 0,
        block_id: String::new(),
    })
}
