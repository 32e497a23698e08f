//! Temporal proximity (pct7/pct30 and proximity curves), event association,
//! the composite screening score and risk tier assignment.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::MessageRecord;
use crate::error::{Error, Result};
use crate::stats::{min_max_normalize, paired_z_average, quantile};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Short-term temporal weights for (pct7, pct30).
    pub stt_weights: (f64, f64),
    /// Composite weights for (event association, short-term temporal).
    pub composite_weights: (f64, f64),
    /// Rank-fraction cutpoints on composite splitting high / moderate /
    /// moderate-low / low; quartiles by default.
    pub tier_cutpoints: [f64; 3],
    /// Short-term temporal quantile above which a symptom is very-high.
    pub very_high_quantile: f64,
    /// Observation window W in days for the pct denominators.
    pub observation_window_days: u32,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            stt_weights: (0.66, 0.33),
            composite_weights: (0.6, 0.4),
            tier_cutpoints: [0.25, 0.5, 0.75],
            very_high_quantile: 0.85,
            observation_window_days: 120,
        }
    }
}

impl ScoringConfig {
    fn validate_cutpoints(&self) -> Result<()> {
        let c = &self.tier_cutpoints;
        if !(0.0 < c[0] && c[0] < c[1] && c[1] < c[2] && c[2] < 1.0) {
            return Err(Error::invalid(format!(
                "tier cutpoints {c:?} must be strictly increasing within (0,1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    VeryHigh,
    High,
    Moderate,
    ModerateLow,
    Low,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::VeryHigh => "very-high",
            Tier::High => "high",
            Tier::Moderate => "moderate",
            Tier::ModerateLow => "moderate-low",
            Tier::Low => "low",
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-symptom temporal proximity within the observation window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProximityResult {
    pub pct7: f64,
    pub pct30: f64,
    /// Day-offset (negative, relative to anchor) to probability mass; sums
    /// to 1 whenever the symptom has any in-window message.
    pub curve: BTreeMap<i64, f64>,
}

/// pct7/pct30 and the proximity curve per SUB2, from case messages.
///
/// For symptom s with N messages inside [anchor - W, anchor):
/// pct_h = (messages within h days) / N and curve(d) = (messages at
/// day-offset d) / N. Symptoms whose messages all fall outside the window
/// get (0, 0, empty).
pub fn temporal_proximity(
    case_messages: &[MessageRecord],
    anchors: &BTreeMap<String, NaiveDate>,
    config: &ScoringConfig,
) -> BTreeMap<String, ProximityResult> {
    let w = config.observation_window_days as i64;
    let mut counts: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    for m in case_messages {
        let Some(anchor) = anchors.get(&m.patient_id) else {
            continue;
        };
        let offset = (m.date() - *anchor).num_days();
        for a in &m.annotations {
            let entry = counts.entry(a.sub2_id.clone()).or_default();
            if (-w..0).contains(&offset) {
                *entry.entry(offset).or_insert(0.0) += 1.0;
            }
        }
    }
    counts
        .into_iter()
        .map(|(sub2, day_counts)| {
            let total: f64 = day_counts.values().sum();
            if total == 0.0 {
                return (sub2, ProximityResult::default());
            }
            let within = |h: i64| -> f64 {
                day_counts
                    .iter()
                    .filter(|(&d, _)| d >= -h)
                    .map(|(_, &c)| c)
                    .sum::<f64>()
                    / total
            };
            let curve = day_counts.iter().map(|(&d, &c)| (d, c / total)).collect();
            (
                sub2,
                ProximityResult {
                    pct7: within(7),
                    pct30: within(30),
                    curve,
                },
            )
        })
        .collect()
}

/// Weighted sum of pct7 and pct30 with the configured weights.
pub fn short_term_temporal(pct7: f64, pct30: f64, weights: (f64, f64)) -> Result<f64> {
    for (name, v) in [("pct7", pct7), ("pct30", pct30)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0,1]")));
        }
    }
    Ok(weights.0 * pct7 + weights.1 * pct30)
}

/// Z-score average of the two attribution score maps.
///
/// Each vector is z-scored across symptoms (zero spread maps to zeros) and
/// the per-symptom z-scores are averaged; key sets must match exactly.
pub fn event_association(
    gnn_deltas: &BTreeMap<String, f64>,
    en_perms: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    if gnn_deltas.is_empty() {
        return Err(Error::invalid("empty attribution maps"));
    }
    if gnn_deltas.len() != en_perms.len()
        || gnn_deltas.keys().zip(en_perms.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::KeyMismatch(
            "event-delta and permutation maps cover different symptoms".into(),
        ));
    }
    Ok(paired_z_average(gnn_deltas, en_perms))
}

/// 0.6/0.4 blend of the min-max normalized association and temporal scores.
pub fn composite_score(
    event_assoc: &BTreeMap<String, f64>,
    stt: &BTreeMap<String, f64>,
    config: &ScoringConfig,
) -> Result<BTreeMap<String, f64>> {
    if event_assoc.is_empty() {
        return Err(Error::invalid("empty score table"));
    }
    if event_assoc.len() != stt.len() || event_assoc.keys().zip(stt.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch(
            "association and temporal maps cover different symptoms".into(),
        ));
    }
    let keys: Vec<&String> = event_assoc.keys().collect();
    let assoc_norm = min_max_normalize(&event_assoc.values().copied().collect::<Vec<_>>());
    let stt_norm = min_max_normalize(&keys.iter().map(|k| stt[*k]).collect::<Vec<_>>());
    let (wa, wt) = config.composite_weights;
    Ok(keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), wa * assoc_norm[i] + wt * stt_norm[i]))
        .collect())
}

/// Rank-based tiers on the composite score with a very-high override for
/// the top short-term temporal tail.
///
/// Ranks run highest composite first with ties broken by sub2 id; the
/// rank fraction against the configured cutpoints (quartiles by default)
/// maps to high / moderate / moderate-low / low. Any symptom at or above
/// the configured stt quantile is promoted to very-high, provided its stt
/// is positive (an all-zero stt table promotes nothing).
pub fn assign_tiers(
    composite: &BTreeMap<String, f64>,
    stt: &BTreeMap<String, f64>,
    config: &ScoringConfig,
) -> Result<BTreeMap<String, Tier>> {
    if composite.is_empty() {
        return Err(Error::invalid("empty score table"));
    }
    if composite.len() != stt.len() || composite.keys().zip(stt.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch(
            "composite and temporal maps cover different symptoms".into(),
        ));
    }
    config.validate_cutpoints()?;
    let mut ranked: Vec<(&String, f64)> = composite.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let n = ranked.len();
    let mut tiers: BTreeMap<String, Tier> = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (k, _))| {
            let fraction = i as f64 / n as f64;
            let crossed = config
                .tier_cutpoints
                .iter()
                .filter(|&&c| fraction >= c)
                .count();
            let tier = match crossed {
                0 => Tier::High,
                1 => Tier::Moderate,
                2 => Tier::ModerateLow,
                _ => Tier::Low,
            };
            (k.clone(), tier)
        })
        .collect();

    let stt_values: Vec<f64> = stt.values().copied().collect();
    let threshold = quantile(&stt_values, config.very_high_quantile).expect("non-empty stt table");
    for (k, &v) in stt {
        if v > 0.0 && v >= threshold {
            tiers.insert(k.clone(), Tier::VeryHigh);
        }
    }
    Ok(tiers)
}

/// One row of the symptom score table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymptomScoreRow {
    pub sub2_id: String,
    pub label: String,
    pub gnn_delta: f64,
    pub en_perm: f64,
    pub event_assoc: f64,
    pub pct7: f64,
    pub pct30: f64,
    pub stt: f64,
    pub composite: f64,
    pub tier: Tier,
}

/// Fuse attribution and proximity into the full score table, sorted by
/// composite descending.
pub fn build_score_table(
    gnn_deltas: &BTreeMap<String, f64>,
    en_perms: &BTreeMap<String, f64>,
    proximity: &BTreeMap<String, ProximityResult>,
    labels: &BTreeMap<String, String>,
    config: &ScoringConfig,
) -> Result<Vec<SymptomScoreRow>> {
    let assoc = event_association(gnn_deltas, en_perms)?;
    let mut stt = BTreeMap::new();
    for key in assoc.keys() {
        let prox = proximity.get(key).cloned().unwrap_or_default();
        stt.insert(
            key.clone(),
            short_term_temporal(prox.pct7, prox.pct30, config.stt_weights)?,
        );
    }
    let composite = composite_score(&assoc, &stt, config)?;
    let tiers = assign_tiers(&composite, &stt, config)?;

    let mut rows: Vec<SymptomScoreRow> = assoc
        .keys()
        .map(|k| {
            let prox = proximity.get(k).cloned().unwrap_or_default();
            SymptomScoreRow {
                sub2_id: k.clone(),
                label: labels.get(k).cloned().unwrap_or_else(|| k.clone()),
                gnn_delta: gnn_deltas[k],
                en_perm: en_perms[k],
                event_assoc: assoc[k],
                pct7: prox.pct7,
                pct30: prox.pct30,
                stt: stt[k],
                composite: composite[k],
                tier: tiers[k],
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.composite
            .total_cmp(&a.composite)
            .then(a.sub2_id.cmp(&b.sub2_id))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;

    fn msg(pid: &str, date: &str, sub2: &str) -> MessageRecord {
        MessageRecord {
            message_id: format!("{pid}-{date}-{sub2}"),
            patient_id: pid.into(),
            ts: format!("{date}T00:00:00").parse().unwrap(),
            text: String::new(),
            annotations: vec![Annotation {
                sub2_id: sub2.into(),
                confidence: 1.0,
            }],
        }
    }

    fn anchors(pairs: &[(&str, &str)]) -> BTreeMap<String, NaiveDate> {
        pairs
            .iter()
            .map(|(p, d)| (p.to_string(), d.parse().unwrap()))
            .collect()
    }

    #[test]
    fn single_message_three_days_before() {
        let messages = vec![msg("p1", "2024-09-07", "s1")];
        let anchors = anchors(&[("p1", "2024-09-10")]);
        let prox = temporal_proximity(&messages, &anchors, &ScoringConfig::default());
        let r = &prox["s1"];
        assert_eq!(r.pct7, 1.0);
        assert_eq!(r.pct30, 1.0);
        assert_eq!(r.curve.len(), 1);
        assert_eq!(r.curve[&-3], 1.0);
    }

    #[test]
    fn message_at_day_minus_ten() {
        let messages = vec![msg("p1", "2024-08-31", "s1")];
        let anchors = anchors(&[("p1", "2024-09-10")]);
        let prox = temporal_proximity(&messages, &anchors, &ScoringConfig::default());
        let r = &prox["s1"];
        assert_eq!(r.pct7, 0.0);
        assert_eq!(r.pct30, 1.0);
    }

    #[test]
    fn out_of_window_symptom_gets_zeroes() {
        let messages = vec![msg("p1", "2023-01-01", "s1")];
        let anchors = anchors(&[("p1", "2024-09-10")]);
        let prox = temporal_proximity(&messages, &anchors, &ScoringConfig::default());
        assert_eq!(prox["s1"], ProximityResult::default());
    }

    #[test]
    fn stt_formula() {
        let w = ScoringConfig::default().stt_weights;
        assert_eq!(short_term_temporal(1.0, 1.0, w).unwrap(), 0.99);
        assert_eq!(short_term_temporal(0.0, 0.0, w).unwrap(), 0.0);
        let v = short_term_temporal(0.30, 0.60, w).unwrap();
        assert!((v - 0.396).abs() < 1e-12);
        assert!(short_term_temporal(1.2, 0.0, w).is_err());
    }

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn constant_vectors_zero_association() {
        let a = map(&[("s1", 2.0), ("s2", 2.0), ("s3", 2.0)]);
        let b = map(&[("s1", 7.0), ("s2", 7.0), ("s3", 7.0)]);
        let assoc = event_association(&a, &b).unwrap();
        assert!(assoc.values().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_vectors_preserve_argmax() {
        let a = map(&[("s1", 1.0), ("s2", 5.0), ("s3", 3.0)]);
        let assoc = event_association(&a, &a).unwrap();
        let argmax = assoc
            .iter()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(k, _)| k.clone())
            .unwrap();
        assert_eq!(argmax, "s2");
    }

    #[test]
    fn opposing_ranks_cancel() {
        let gnn = map(&[("s1", 1.0), ("s2", 2.0), ("s3", 3.0)]);
        let en = map(&[("s1", 3.0), ("s2", 2.0), ("s3", 1.0)]);
        let assoc = event_association(&gnn, &en).unwrap();
        for v in assoc.values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_keys_rejected() {
        let a = map(&[("s1", 1.0)]);
        let b = map(&[("s2", 1.0)]);
        assert!(event_association(&a, &b).is_err());
    }

    #[test]
    fn composite_extremes() {
        let assoc = map(&[("hi", 3.0), ("mid", 1.0), ("lo", -2.0)]);
        let stt = map(&[("hi", 0.9), ("mid", 0.3), ("lo", 0.0)]);
        let comp = composite_score(&assoc, &stt, &ScoringConfig::default()).unwrap();
        assert!((comp["hi"] - 1.0).abs() < 1e-12);
        assert_eq!(comp["lo"], 0.0);
    }

    #[test]
    fn twenty_distinct_symptoms_five_per_tier() {
        let composite: BTreeMap<String, f64> = (0..20)
            .map(|i| (format!("s{i:02}"), i as f64 / 20.0))
            .collect();
        let stt: BTreeMap<String, f64> = composite.keys().map(|k| (k.clone(), 0.0)).collect();
        let tiers = assign_tiers(&composite, &stt, &ScoringConfig::default()).unwrap();
        let count = |t: Tier| tiers.values().filter(|&&v| v == t).count();
        assert_eq!(count(Tier::VeryHigh), 0);
        assert_eq!(count(Tier::High), 5);
        assert_eq!(count(Tier::Moderate), 5);
        assert_eq!(count(Tier::ModerateLow), 5);
        assert_eq!(count(Tier::Low), 5);
    }

    #[test]
    fn custom_cutpoints_reshape_tiers() {
        let composite: BTreeMap<String, f64> = (0..10)
            .map(|i| (format!("s{i:02}"), 1.0 - i as f64 / 10.0))
            .collect();
        let stt: BTreeMap<String, f64> = composite.keys().map(|k| (k.clone(), 0.0)).collect();
        let config = ScoringConfig {
            tier_cutpoints: [0.1, 0.2, 0.3],
            ..ScoringConfig::default()
        };
        let tiers = assign_tiers(&composite, &stt, &config).unwrap();
        assert_eq!(tiers["s00"], Tier::High);
        assert_eq!(tiers["s01"], Tier::Moderate);
        assert_eq!(tiers["s02"], Tier::ModerateLow);
        assert!(tiers.values().filter(|&&t| t == Tier::Low).count() == 7);

        let bad = ScoringConfig {
            tier_cutpoints: [0.5, 0.5, 0.75],
            ..ScoringConfig::default()
        };
        assert!(assign_tiers(&composite, &stt, &bad).is_err());
    }

    #[test]
    fn very_high_override_beats_low_composite() {
        let mut composite = BTreeMap::new();
        let mut stt = BTreeMap::new();
        for i in 0..20 {
            composite.insert(format!("s{i:02}"), 1.0 - i as f64 / 20.0);
            stt.insert(format!("s{i:02}"), 0.01);
        }
        // lowest composite, highest stt
        composite.insert("s19".into(), 0.0);
        stt.insert("s19".into(), 0.95);
        let tiers = assign_tiers(&composite, &stt, &ScoringConfig::default()).unwrap();
        assert_eq!(tiers["s19"], Tier::VeryHigh);
    }
}
