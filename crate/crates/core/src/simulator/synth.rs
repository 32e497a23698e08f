//! Seeded synthetic cohort generator with planted symptom-event structure.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{AgeBand, Attr, MessageRecord, PatientRecord};
use crate::error::{Error, Result};
use crate::stats::derive_seed;
use crate::taxonomy::{apply_changes, Level, ProposedChange, ProposedNode, Taxonomy};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalDist {
    pub levels: Vec<String>,
    pub weights: Vec<f64>,
}

impl CategoricalDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> String {
        let total: f64 = self.weights.iter().sum();
        let mut draw = rng.random::<f64>() * total;
        for (level, w) in self.levels.iter().zip(&self.weights) {
            draw -= w;
            if draw <= 0.0 {
                return level.clone();
            }
        }
        self.levels.last().cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemographicsSpec {
    pub age_bands: CategoricalDist,
    pub races: CategoricalDist,
    pub ethnicities: CategoricalDist,
    pub sexes: CategoricalDist,
    pub marital_statuses: CategoricalDist,
    pub comorbidity_codes: Vec<String>,
    pub comorbidity_prob: f64,
}

impl Default for DemographicsSpec {
    fn default() -> Self {
        let dist = |pairs: &[(&str, f64)]| CategoricalDist {
            levels: pairs.iter().map(|(l, _)| l.to_string()).collect(),
            weights: pairs.iter().map(|(_, w)| *w).collect(),
        };
        Self {
            age_bands: dist(&[
                ("18-34", 0.02),
                ("35-49", 0.06),
                ("50-64", 0.18),
                ("65-74", 0.30),
                ("75+", 0.44),
            ]),
            races: dist(&[
                ("Asian/Pacific Islander", 0.22),
                ("Black", 0.06),
                ("White", 0.51),
                ("Other", 0.17),
                ("Unknown", 0.04),
            ]),
            ethnicities: dist(&[
                ("Hispanic/Latino", 0.13),
                ("Non-Hispanic", 0.84),
                ("Unknown", 0.03),
            ]),
            sexes: dist(&[("Female", 0.45), ("Male", 0.55)]),
            marital_statuses: dist(&[("Married", 0.62), ("Unmarried", 0.37), ("Unknown", 0.01)]),
            comorbidity_codes: vec![
                "E11".into(),
                "E78".into(),
                "F17".into(),
                "I10".into(),
                "I25".into(),
                "I48".into(),
                "J44".into(),
                "N18".into(),
            ],
            comorbidity_prob: 0.25,
        }
    }
}

/// A symptom planted with elevated case frequency and an event-anchored
/// proximity profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedSymptom {
    pub sub2_id: String,
    /// Case-to-control rate multiplier; must exceed 1.
    pub odds_multiplier: f64,
    /// Mean days before the event for case messages.
    pub profile_mean_days: f64,
    pub profile_sd_days: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub n_controls: usize,
    pub vocab_size: usize,
    pub planted: Vec<PlantedSymptom>,
    /// Expected planted messages per case per planted symptom.
    pub planted_rate: f64,
    /// Background messages per patient-day; background draws exclude the
    /// planted symptoms so the odds multiplier is meaningful.
    pub background_rate: f64,
    pub span_start: NaiveDate,
    pub span_end: NaiveDate,
    /// Case messages are planted at offsets clamped to this many days.
    pub max_offset_days: u32,
    pub demographics: DemographicsSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases: 250,
            n_controls: 250,
            vocab_size: 30,
            planted: (0..3)
                .map(|k| PlantedSymptom {
                    sub2_id: sub2_id(k),
                    odds_multiplier: 8.0,
                    profile_mean_days: 25.0,
                    profile_sd_days: 20.0,
                })
                .collect(),
            planted_rate: 1.2,
            background_rate: 8.0 / 365.0,
            span_start: "2024-08-01".parse().unwrap(),
            span_end: "2025-08-01".parse().unwrap(),
            max_offset_days: 120,
            demographics: DemographicsSpec::default(),
            seed: 20250801,
        }
    }
}

pub fn sub2_id(k: usize) -> String {
    format!("s2-{k:03}")
}

/// Trigger phrase embedded in every message about symptom k.
pub fn trigger_phrase(k: usize) -> String {
    format!("sx{k:03} marker")
}

/// Build the vocabulary taxonomy: one SUB1 per five SUB2s, one MAIN per
/// five SUB1s, each SUB2 carrying its trigger phrase.
pub fn synthetic_taxonomy(vocab_size: usize) -> Taxonomy {
    let mut changes = Vec::new();
    let n_sub1 = vocab_size.div_ceil(5);
    let n_main = n_sub1.div_ceil(5);
    for m in 0..n_main {
        changes.push(ProposedChange::add(
            ProposedNode {
                id: format!("main-{m:02}"),
                level: Level::Main,
                label: format!("domain {m:02}"),
                parent_id: None,
                lexicon: BTreeSet::new(),
            },
            "seed taxonomy",
        ));
    }
    for s in 0..n_sub1 {
        changes.push(ProposedChange::add(
            ProposedNode {
                id: format!("sub1-{s:03}"),
                level: Level::Sub1,
                label: format!("cluster {s:03}"),
                parent_id: Some(format!("main-{:02}", s / 5)),
                lexicon: BTreeSet::new(),
            },
            "seed taxonomy",
        ));
    }
    for k in 0..vocab_size {
        changes.push(ProposedChange::add(
            ProposedNode {
                id: sub2_id(k),
                level: Level::Sub2,
                label: format!("concern {k:03}"),
                parent_id: Some(format!("sub1-{:03}", k / 5)),
                lexicon: BTreeSet::from([trigger_phrase(k)]),
            },
            "seed taxonomy",
        ));
    }
    let (tax, _) = apply_changes(&Taxonomy::default(), changes, 0)
        .expect("synthetic taxonomy is structurally valid");
    tax
}

/// Planted ids and generation provenance, for recovery tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub planted: Vec<String>,
    pub seed: u64,
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.span_start >= spec.span_end {
        return Err(Error::invalid("synthetic span is empty"));
    }
    if spec.n_cases == 0 || spec.n_controls == 0 {
        return Err(Error::invalid("need at least one case and one control"));
    }
    if spec.vocab_size == 0 {
        return Err(Error::invalid("vocabulary is empty"));
    }
    if spec.background_rate <= 0.0 || spec.planted_rate <= 0.0 {
        return Err(Error::invalid("message rates must be > 0"));
    }
    for p in &spec.planted {
        let known = (0..spec.vocab_size).any(|k| sub2_id(k) == p.sub2_id);
        if !known {
            return Err(Error::invalid(format!(
                "planted symptom `{}` outside the vocabulary",
                p.sub2_id
            )));
        }
        if p.odds_multiplier <= 1.0 {
            return Err(Error::invalid(format!(
                "odds multiplier for `{}` must exceed 1",
                p.sub2_id
            )));
        }
    }
    Ok(())
}

fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |d| d.sample(rng) as usize)
}

fn message_text(k: usize, rng: &mut ChaCha8Rng) -> String {
    let openers = [
        "Hello, I wanted to mention",
        "Quick question about",
        "Following up on",
        "I have been noticing",
    ];
    let closers = [
        "since last week.",
        "on and off for a few days.",
        "and it is getting worse.",
        "should I come in?",
    ];
    format!(
        "{} {} {}",
        openers[rng.random_range(0..openers.len())],
        trigger_phrase(k),
        closers[rng.random_range(0..closers.len())]
    )
}

/// Generate the cohort: cases carry planted symptoms at event-anchored
/// offsets, controls carry them at the reduced background rate, everyone
/// gets uniform background messages over the calendar span. Deterministic
/// per seed.
pub fn generate_synthetic_cohort(
    spec: &SyntheticSpec,
) -> Result<(Vec<PatientRecord>, Vec<MessageRecord>, SyntheticTruth)> {
    validate(spec)?;
    let span_days = (spec.span_end - spec.span_start).num_days();
    let planted_ids: BTreeSet<&str> = spec.planted.iter().map(|p| p.sub2_id.as_str()).collect();
    let background_vocab: Vec<usize> = (0..spec.vocab_size)
        .filter(|&k| !planted_ids.contains(sub2_id(k).as_str()))
        .collect();
    if background_vocab.is_empty() {
        return Err(Error::invalid("every vocabulary symptom is planted"));
    }

    let mut patients = Vec::with_capacity(spec.n_cases + spec.n_controls);
    let mut messages = Vec::new();
    let mut msg_seq = 0usize;

    let mut new_message = |patient_id: &str, date: NaiveDate, k: usize, rng: &mut ChaCha8Rng| {
        let text = message_text(k, rng);
        let id = format!("msg-{msg_seq:06}");
        msg_seq += 1;
        MessageRecord {
            message_id: id,
            patient_id: patient_id.to_string(),
            ts: date.and_time(chrono::NaiveTime::MIN),
            text,
            annotations: Vec::new(),
        }
    };

    for arm in ["case", "ctrl"] {
        let n = if arm == "case" {
            spec.n_cases
        } else {
            spec.n_controls
        };
        for i in 0..n {
            let patient_id = format!("{arm}-{i:04}");
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &patient_id.to_string()));
            let demo = &spec.demographics;
            let age_raw = demo.age_bands.sample(&mut rng);
            let age_band: AgeBand = serde_json::from_value(serde_json::Value::String(age_raw))
                .map_err(|e| Error::invalid(format!("age band distribution: {e}")))?;
            let comorbidities: BTreeSet<String> = demo
                .comorbidity_codes
                .iter()
                .filter(|_| rng.random::<f64>() < demo.comorbidity_prob)
                .cloned()
                .collect();
            let event = arm == "case";
            let event_date = event.then(|| {
                spec.span_start + chrono::Days::new(rng.random_range(0..span_days) as u64)
            });

            patients.push(PatientRecord {
                patient_id: patient_id.clone(),
                age_band,
                race: Attr(demo.races.sample(&mut rng)),
                ethnicity: Attr(demo.ethnicities.sample(&mut rng)),
                sex: Attr(demo.sexes.sample(&mut rng)),
                marital_status: Attr(demo.marital_statuses.sample(&mut rng)),
                comorbidities,
                event,
                event_date,
                anchor_date: None,
            });

            // background traffic over the whole span
            let n_background = poisson_count(&mut rng, spec.background_rate * span_days as f64);
            for _ in 0..n_background {
                let day =
                    spec.span_start + chrono::Days::new(rng.random_range(0..span_days) as u64);
                let k = background_vocab[rng.random_range(0..background_vocab.len())];
                messages.push(new_message(&patient_id, day, k, &mut rng));
            }

            // planted signal
            for planted in &spec.planted {
                let k = (0..spec.vocab_size)
                    .find(|&k| sub2_id(k) == planted.sub2_id)
                    .expect("validated above");
                if event {
                    let anchor = event_date.expect("cases have event dates");
                    let count = poisson_count(&mut rng, spec.planted_rate);
                    let normal = Normal::new(planted.profile_mean_days, planted.profile_sd_days)
                        .map_err(|e| Error::invalid(format!("proximity profile: {e}")))?;
                    for _ in 0..count {
                        let offset = normal
                            .sample(&mut rng)
                            .round()
                            .clamp(1.0, spec.max_offset_days as f64)
                            as u64;
                        let day = anchor - chrono::Days::new(offset);
                        messages.push(new_message(&patient_id, day, k, &mut rng));
                    }
                } else {
                    let count =
                        poisson_count(&mut rng, spec.planted_rate / planted.odds_multiplier);
                    for _ in 0..count {
                        let day = spec.span_start
                            + chrono::Days::new(rng.random_range(0..span_days) as u64);
                        messages.push(new_message(&patient_id, day, k, &mut rng));
                    }
                }
            }
        }
    }

    messages.sort_by(|a, b| (a.ts, &a.message_id).cmp(&(b.ts, &b.message_id)));
    Ok((
        patients,
        messages,
        SyntheticTruth {
            planted: spec.planted.iter().map(|p| p.sub2_id.clone()).collect(),
            seed: spec.seed,
        },
    ))
}
