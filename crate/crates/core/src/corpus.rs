//! Patient/message ingestion, matched cohort assembly, screening windows and
//! temporal validation blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::derive_seed;

/// One SUB2 assignment on a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub sub2_id: String,
    pub confidence: f64,
}

/// A timestamped free-text patient message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageRecord {
    pub message_id: String,
    pub patient_id: String,
    pub ts: NaiveDateTime,
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl MessageRecord {
    pub fn date(&self) -> NaiveDate {
        self.ts.date()
    }
}

/// Age bands used for exact matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "18-34")]
    From18To34,
    #[serde(rename = "35-49")]
    From35To49,
    #[serde(rename = "50-64")]
    From50To64,
    #[serde(rename = "65-74")]
    From65To74,
    #[serde(rename = "75+")]
    From75,
}

impl AgeBand {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgeBand::From18To34 => "18-34",
            AgeBand::From35To49 => "35-49",
            AgeBand::From50To64 => "50-64",
            AgeBand::From65To74 => "65-74",
            AgeBand::From75 => "75+",
        }
    }

    pub fn all() -> &'static [AgeBand] {
        &[
            AgeBand::From18To34,
            AgeBand::From35To49,
            AgeBand::From50To64,
            AgeBand::From65To74,
            AgeBand::From75,
        ]
    }
}

impl std::fmt::Display for AgeBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Open enum attribute: any string value, absent/empty means Unknown.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attr(pub String);

impl Attr {
    pub const UNKNOWN: &'static str = "Unknown";

    pub fn unknown() -> Self {
        Attr(Self::UNKNOWN.to_string())
    }

    pub fn normalized(self) -> Self {
        if self.0.trim().is_empty() {
            Attr::unknown()
        } else {
            self
        }
    }
}

impl Default for Attr {
    fn default() -> Self {
        Attr::unknown()
    }
}

impl std::fmt::Display for Attr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Demographics, comorbidities and the event label for one patient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age_band: AgeBand,
    #[serde(default)]
    pub race: Attr,
    #[serde(default)]
    pub ethnicity: Attr,
    #[serde(default)]
    pub sex: Attr,
    #[serde(default)]
    pub marital_status: Attr,
    #[serde(default)]
    pub comorbidities: BTreeSet<String>,
    pub event: bool,
    #[serde(default)]
    pub event_date: Option<NaiveDate>,
    /// Event date for cases; assigned from the paired case for controls.
    #[serde(default)]
    pub anchor_date: Option<NaiveDate>,
}

impl PatientRecord {
    fn normalize(mut self) -> Self {
        self.race = self.race.normalized();
        self.ethnicity = self.ethnicity.normalized();
        self.sex = self.sex.normalized();
        self.marital_status = self.marital_status.normalized();
        self
    }
}

/// Attribute names usable as exact-matching strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataKey {
    AgeBand,
    Race,
    Ethnicity,
    Sex,
    MaritalStatus,
}

impl StrataKey {
    pub fn value_of(&self, p: &PatientRecord) -> String {
        match self {
            StrataKey::AgeBand => p.age_band.as_str().to_string(),
            StrataKey::Race => p.race.0.clone(),
            StrataKey::Ethnicity => p.ethnicity.0.clone(),
            StrataKey::Sex => p.sex.0.clone(),
            StrataKey::MaritalStatus => p.marital_status.0.clone(),
        }
    }
}

/// Controls-per-case sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSpec {
    pub ratio: f64,
    pub strata_keys: Vec<StrataKey>,
    /// Discovery mode: case-heavy cohorts are produced by choosing ratio < 1
    /// rather than duplicating case rows.
    #[serde(default)]
    pub oversample_cases: bool,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            ratio: 1.0,
            strata_keys: vec![StrataKey::AgeBand, StrataKey::Sex],
            oversample_cases: false,
            seed: 0,
        }
    }
}

/// A look-back span of `days` before the anchor date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScreeningWindow {
    pub days: u32,
}

impl ScreeningWindow {
    pub fn new(days: u32) -> Result<Self> {
        if days < 1 {
            return Err(Error::invalid("screening window must be >= 1 day"));
        }
        Ok(Self { days })
    }
}

/// Half-open calendar interval [start, end) used for temporal validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalBlock {
    pub block_id: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl TemporalBlock {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start_date <= d && d < self.end_date
    }
}

/// All parsed records, messages sorted by (ts, message_id).
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub messages: Vec<MessageRecord>,
    pub patients: Vec<PatientRecord>,
}

impl Corpus {
    pub fn new(mut messages: Vec<MessageRecord>, patients: Vec<PatientRecord>) -> Self {
        messages.sort_by(|a, b| (a.ts, &a.message_id).cmp(&(b.ts, &b.message_id)));
        Self { messages, patients }
    }

    pub fn messages_of<'a>(
        &'a self,
        patient_id: &'a str,
    ) -> impl Iterator<Item = &'a MessageRecord> {
        self.messages
            .iter()
            .filter(move |m| m.patient_id == patient_id)
    }
}

/// Per-stratum deficit when the pool cannot satisfy the requested ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumShortfall {
    pub stratum: Vec<String>,
    pub cases: usize,
    pub requested: usize,
    pub selected: usize,
    pub deficit: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ShortfallReport {
    pub strata: Vec<StratumShortfall>,
}

impl ShortfallReport {
    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }
}

/// An assembled case/control cohort; every member has an anchor date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub shortfall: ShortfallReport,
}

impl Cohort {
    pub fn cases(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(|p| p.event)
    }

    pub fn controls(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(|p| !p.event)
    }

    pub fn anchor_of(&self, patient_id: &str) -> Option<NaiveDate> {
        self.patients
            .iter()
            .find(|p| p.patient_id == patient_id)
            .and_then(|p| p.anchor_date)
    }

    pub fn anchors(&self) -> BTreeMap<String, NaiveDate> {
        self.patients
            .iter()
            .filter_map(|p| p.anchor_date.map(|d| (p.patient_id.clone(), d)))
            .collect()
    }

    pub fn labels(&self) -> BTreeMap<String, bool> {
        self.patients
            .iter()
            .map(|p| (p.patient_id.clone(), p.event))
            .collect()
    }
}

fn parse_ts(raw: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_time(NaiveTime::MIN))
}

#[derive(Deserialize)]
struct RawMessage {
    message_id: String,
    patient_id: String,
    ts: String,
    text: String,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

/// Load messages and patients from NDJSON files.
///
/// Messages come back sorted by (ts, message_id). Duplicate ids, malformed
/// timestamps and cases without an event date are rejected with the
/// offending line number.
pub fn load_corpus(messages_path: &Path, patients_path: &Path) -> Result<Corpus> {
    let messages = load_messages(messages_path)?;
    let patients = load_patients(patients_path)?;
    Ok(Corpus::new(messages, patients))
}

pub fn load_messages(path: &Path) -> Result<Vec<MessageRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut seen = BTreeSet::new();
    let mut messages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawMessage = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let ts = parse_ts(&raw.ts).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: format!("malformed timestamp `{}`", raw.ts),
        })?;
        for a in &raw.annotations {
            if !(0.0..=1.0).contains(&a.confidence) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    msg: format!("confidence {} outside [0,1]", a.confidence),
                });
            }
        }
        if !seen.insert(raw.message_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.display().to_string(),
                line: line_no,
                id: raw.message_id,
            });
        }
        messages.push(MessageRecord {
            message_id: raw.message_id,
            patient_id: raw.patient_id,
            ts,
            text: raw.text,
            annotations: raw.annotations,
        });
    }
    Ok(messages)
}

pub fn load_patients(path: &Path) -> Result<Vec<PatientRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut seen = BTreeSet::new();
    let mut patients = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        if p.event && p.event_date.is_none() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: format!(
                    "patient `{}` has event=true but no event_date",
                    p.patient_id
                ),
            });
        }
        if !seen.insert(p.patient_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.display().to_string(),
                line: line_no,
                id: p.patient_id,
            });
        }
        patients.push(p.normalize());
    }
    Ok(patients)
}

fn stratum_of(p: &PatientRecord, keys: &[StrataKey]) -> Vec<String> {
    keys.iter().map(|k| k.value_of(p)).collect()
}

/// Exact stratified frequency matching.
///
/// Per stratum, round(ratio * cases) controls are sampled without
/// replacement. Strata with too few pool controls are filled to availability
/// and reported in the shortfall. Each selected control is paired round-robin
/// to a case in its stratum and inherits that case's event date as its
/// anchor. Cases anchor at their own event date.
pub fn match_controls(
    cases: &[PatientRecord],
    control_pool: &[PatientRecord],
    spec: &CohortSpec,
) -> Result<Cohort> {
    if cases.is_empty() {
        return Err(Error::invalid("case set is empty"));
    }
    if spec.ratio <= 0.0 {
        return Err(Error::invalid("cohort ratio must be > 0"));
    }
    if let Some(p) = cases.iter().find(|p| !p.event) {
        return Err(Error::invalid(format!(
            "case `{}` has event=false",
            p.patient_id
        )));
    }
    if let Some(p) = control_pool.iter().find(|p| p.event) {
        return Err(Error::invalid(format!(
            "pool control `{}` has event=true",
            p.patient_id
        )));
    }
    if let Some(p) = cases.iter().find(|p| p.event_date.is_none()) {
        return Err(Error::invalid(format!(
            "case `{}` has no event_date",
            p.patient_id
        )));
    }

    let mut by_stratum: BTreeMap<Vec<String>, (Vec<&PatientRecord>, Vec<&PatientRecord>)> =
        BTreeMap::new();
    for c in cases {
        by_stratum
            .entry(stratum_of(c, &spec.strata_keys))
            .or_default()
            .0
            .push(c);
    }
    for c in control_pool {
        if let Some(entry) = by_stratum.get_mut(&stratum_of(c, &spec.strata_keys)) {
            entry.1.push(c);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut selected: Vec<PatientRecord> = Vec::new();
    let mut shortfall = ShortfallReport::default();

    for (stratum, (mut stratum_cases, mut pool)) in by_stratum {
        stratum_cases.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        pool.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let requested = (spec.ratio * stratum_cases.len() as f64).round() as usize;
        let take = requested.min(pool.len());
        pool.shuffle(&mut rng);
        let mut chosen: Vec<&PatientRecord> = pool.into_iter().take(take).collect();
        chosen.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        for (i, ctl) in chosen.into_iter().enumerate() {
            let paired_case = stratum_cases[i % stratum_cases.len()];
            let mut ctl = ctl.clone();
            ctl.anchor_date = paired_case.event_date;
            selected.push(ctl);
        }
        if take < requested {
            shortfall.strata.push(StratumShortfall {
                stratum,
                cases: stratum_cases.len(),
                requested,
                selected: take,
                deficit: requested - take,
            });
        }
    }

    let mut patients: Vec<PatientRecord> = cases
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.anchor_date = c.event_date;
            c
        })
        .collect();
    patients.extend(selected);
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    Ok(Cohort {
        patients,
        shortfall,
    })
}

/// Messages of one patient within [anchor - days, anchor), ordered by ts.
/// The window includes its lower bound and excludes the anchor day itself.
pub fn extract_window<'a>(
    patient: &PatientRecord,
    messages: &'a [MessageRecord],
    window: ScreeningWindow,
) -> Result<Vec<&'a MessageRecord>> {
    let anchor = patient.anchor_date.ok_or_else(|| {
        Error::invalid(format!(
            "patient `{}` has no anchor_date",
            patient.patient_id
        ))
    })?;
    let lower = anchor - chrono::Days::new(window.days as u64);
    let mut slice: Vec<&MessageRecord> = messages
        .iter()
        .filter(|m| m.patient_id == patient.patient_id)
        .filter(|m| {
            let d = m.date();
            lower <= d && d < anchor
        })
        .collect();
    slice.sort_by(|a, b| (a.ts, &a.message_id).cmp(&(b.ts, &b.message_id)));
    Ok(slice)
}

/// One temporal block and its case/control cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCohort {
    pub block: TemporalBlock,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockAssembly {
    pub blocks: Vec<BlockCohort>,
    /// Cases whose event date fell outside every block.
    pub excluded_cases: usize,
}

fn blocks_overlap(blocks: &[TemporalBlock]) -> bool {
    for (i, a) in blocks.iter().enumerate() {
        if a.start_date >= a.end_date {
            return true;
        }
        for b in &blocks[i + 1..] {
            if a.start_date < b.end_date && b.start_date < a.end_date {
                return true;
            }
        }
    }
    false
}

/// Assign cases to the block containing their event date and resample
/// demographically matched controls 1:1 within each block.
pub fn build_temporal_blocks(
    cases: &[PatientRecord],
    control_pool: &[PatientRecord],
    blocks: &[TemporalBlock],
    spec: &CohortSpec,
) -> Result<BlockAssembly> {
    if blocks_overlap(blocks) {
        return Err(Error::invalid("temporal blocks overlap or are empty"));
    }
    let mut excluded = 0usize;
    let mut per_block: BTreeMap<usize, Vec<PatientRecord>> = BTreeMap::new();
    for case in cases {
        let date = case.event_date.ok_or_else(|| {
            Error::invalid(format!("case `{}` has no event_date", case.patient_id))
        })?;
        match blocks.iter().position(|b| b.contains(date)) {
            Some(i) => per_block.entry(i).or_default().push(case.clone()),
            None => excluded += 1,
        }
    }

    let mut out = Vec::new();
    for (i, block) in blocks.iter().enumerate() {
        let block_cases = per_block.remove(&i).unwrap_or_default();
        if block_cases.is_empty() {
            out.push(BlockCohort {
                block: block.clone(),
                cohort: Cohort {
                    patients: Vec::new(),
                    shortfall: ShortfallReport::default(),
                },
            });
            continue;
        }
        let block_spec = CohortSpec {
            ratio: 1.0,
            strata_keys: spec.strata_keys.clone(),
            oversample_cases: false,
            seed: derive_seed(spec.seed, &format!("block:{}", block.block_id)),
        };
        let cohort = match_controls(&block_cases, control_pool, &block_spec)?;
        out.push(BlockCohort {
            block: block.clone(),
            cohort,
        });
    }

    Ok(BlockAssembly {
        blocks: out,
        excluded_cases: excluded,
    })
}
