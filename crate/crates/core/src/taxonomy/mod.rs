//! Three-level symptom taxonomy: seeding, batched updates with a change
//! ledger, message annotation through a pluggable backend, and inter-rater
//! agreement.

pub mod backend;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Annotation, MessageRecord};
use crate::error::{Error, Result};

pub use backend::{
    AnnotatorBackend, BackendMessage, HttpBackend, LexiconBackend, MessageAssignment,
    ProposedChange, ProposedNode, ScriptedBackend, SeedParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "MAIN")]
    Main,
    #[serde(rename = "SUB1")]
    Sub1,
    #[serde(rename = "SUB2")]
    Sub2,
}

impl Level {
    /// The level a parent of this level must have, if any.
    pub fn parent_level(&self) -> Option<Level> {
        match self {
            Level::Main => None,
            Level::Sub1 => Some(Level::Main),
            Level::Sub2 => Some(Level::Sub1),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Main => "MAIN",
            Level::Sub1 => "SUB1",
            Level::Sub2 => "SUB2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicNode {
    pub id: String,
    pub level: Level,
    pub label: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    /// Trigger phrases used by the deterministic lexicon backend.
    #[serde(default)]
    pub lexicon: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChangeKind {
    Add,
    Merge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangeLogEntry {
    pub version: u64,
    pub kind: ChangeKind,
    pub affected: Vec<String>,
    pub reason: String,
    pub batch_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    version: u64,
    nodes: Vec<TopicNode>,
    ledger: Vec<ChangeLogEntry>,
}

/// The MAIN -> SUB1 -> SUB2 hierarchy plus its change ledger.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    pub nodes: BTreeMap<String, TopicNode>,
    pub ledger: Vec<ChangeLogEntry>,
    pub version: u64,
}

impl From<TaxonomyFile> for Taxonomy {
    fn from(f: TaxonomyFile) -> Self {
        Taxonomy {
            nodes: f.nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            ledger: f.ledger,
            version: f.version,
        }
    }
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile {
            version: t.version,
            nodes: t.nodes.into_values().collect(),
            ledger: t.ledger,
        }
    }
}

impl Taxonomy {
    pub fn count_at(&self, level: Level) -> usize {
        self.nodes.values().filter(|n| n.level == level).count()
    }

    pub fn sub2_ids(&self) -> impl Iterator<Item = &String> {
        self.nodes
            .values()
            .filter(|n| n.level == Level::Sub2)
            .map(|n| &n.id)
    }

    pub fn label_of(&self, id: &str) -> Option<&str> {
        self.nodes.get(id).map(|n| n.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    MissingParent,
    UnknownParent,
    WrongParentLevel,
    MainHasParent,
    DuplicateLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub node_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} ({:?}: {})", v.node_id, v.kind, v.detail)?;
        }
        Ok(())
    }
}

/// List every hierarchy invariant violation; an empty report means valid.
pub fn validate_hierarchy(tax: &Taxonomy) -> ValidationReport {
    let mut violations = Vec::new();
    for node in tax.nodes.values() {
        match (&node.level, &node.parent_id) {
            (Level::Main, Some(p)) => violations.push(Violation {
                node_id: node.id.clone(),
                kind: ViolationKind::MainHasParent,
                detail: format!("MAIN node has parent `{p}`"),
            }),
            (Level::Main, None) => {}
            (level, None) => violations.push(Violation {
                node_id: node.id.clone(),
                kind: ViolationKind::MissingParent,
                detail: format!("{level} node missing parent"),
            }),
            (level, Some(pid)) => match tax.nodes.get(pid) {
                None => violations.push(Violation {
                    node_id: node.id.clone(),
                    kind: ViolationKind::UnknownParent,
                    detail: format!("parent `{pid}` not found"),
                }),
                Some(parent) => {
                    let want = level.parent_level().expect("non-MAIN has a parent level");
                    if parent.level != want {
                        violations.push(Violation {
                            node_id: node.id.clone(),
                            kind: ViolationKind::WrongParentLevel,
                            detail: format!(
                                "parent `{pid}` is {} but {want} required",
                                parent.level
                            ),
                        });
                    }
                }
            },
        }
    }
    // Labels must be unique among siblings.
    let mut seen: BTreeMap<(Level, Option<&str>, &str), &str> = BTreeMap::new();
    for node in tax.nodes.values() {
        let key = (node.level, node.parent_id.as_deref(), node.label.as_str());
        if let Some(first) = seen.get(&key) {
            violations.push(Violation {
                node_id: node.id.clone(),
                kind: ViolationKind::DuplicateLabel,
                detail: format!("label `{}` duplicates node `{first}`", node.label),
            });
        } else {
            seen.insert(key, &node.id);
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub seed_batch_size: usize,
    pub update_batch_size: usize,
    pub main_target: usize,
    /// Cap on SUB2 assignments per message.
    pub max_labels: usize,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        Self {
            seed_batch_size: 200,
            update_batch_size: 50,
            main_target: 10,
            max_labels: 3,
        }
    }
}

fn apply_add(tax: &mut Taxonomy, node: ProposedNode) -> Result<String> {
    if tax.nodes.contains_key(&node.id) {
        return Err(Error::invalid(format!(
            "ADD of existing node `{}`",
            node.id
        )));
    }
    let id = node.id.clone();
    tax.nodes.insert(
        id.clone(),
        TopicNode {
            id: id.clone(),
            level: node.level,
            label: node.label,
            parent_id: node.parent_id,
            lexicon: node.lexicon,
        },
    );
    Ok(id)
}

fn apply_merge(tax: &mut Taxonomy, a: &str, b: &str) -> Result<(String, String)> {
    let node_a = tax
        .nodes
        .get(a)
        .ok_or_else(|| Error::invalid(format!("MERGE references unknown id `{a}`")))?;
    let node_b = tax
        .nodes
        .get(b)
        .ok_or_else(|| Error::invalid(format!("MERGE references unknown id `{b}`")))?;
    if node_a.level != node_b.level {
        return Err(Error::invalid(format!(
            "MERGE across levels: `{a}` is {}, `{b}` is {}",
            node_a.level, node_b.level
        )));
    }
    if a == b {
        return Err(Error::invalid(format!("MERGE of `{a}` with itself")));
    }
    // Survivor is the lexicographically smaller id.
    let (survivor, removed) = if a < b { (a, b) } else { (b, a) };
    let gone = tax.nodes.remove(removed).expect("checked above");
    for n in tax.nodes.values_mut() {
        if n.parent_id.as_deref() == Some(removed) {
            n.parent_id = Some(survivor.to_string());
        }
    }
    let keep = tax.nodes.get_mut(survivor).expect("checked above");
    keep.lexicon.extend(gone.lexicon);
    Ok((survivor.to_string(), removed.to_string()))
}

/// Bootstrap a taxonomy from a seed batch via the backend.
pub fn seed_taxonomy(
    batch: &[BackendMessage],
    backend: &mut dyn AnnotatorBackend,
    config: &TaxonomyConfig,
) -> Result<Taxonomy> {
    if batch.is_empty() {
        return Err(Error::invalid("seed batch is empty"));
    }
    let params = SeedParams {
        main_target: config.main_target,
    };
    let proposal = backend.propose_seed(batch, &params)?;
    let mut tax = Taxonomy::default();
    let mut ledger = Vec::new();
    for change in proposal {
        match change {
            ProposedChange::Add { node, reason } => {
                if reason.trim().is_empty() {
                    return Err(Error::invalid("ADD with empty reason"));
                }
                let id = apply_add(&mut tax, node)?;
                ledger.push(ChangeLogEntry {
                    version: 1,
                    kind: ChangeKind::Add,
                    affected: vec![id],
                    reason,
                    batch_index: 0,
                });
            }
            ProposedChange::Merge { .. } => {
                return Err(Error::invalid("seed proposal may not contain MERGE"));
            }
        }
    }
    let report = validate_hierarchy(&tax);
    if !report.is_empty() {
        return Err(Error::Hierarchy(report));
    }
    tax.version = 1;
    tax.ledger = ledger;
    Ok(tax)
}

/// Stream one batch through the backend and apply its ADD/MERGE changes.
///
/// The version increments exactly once per batch. A proposal that would
/// leave the hierarchy invalid is rejected wholesale.
pub fn update_taxonomy(
    tax: &Taxonomy,
    batch: &[BackendMessage],
    backend: &mut dyn AnnotatorBackend,
    batch_index: usize,
) -> Result<(Taxonomy, Vec<ChangeLogEntry>)> {
    let changes = backend.propose_update(tax, batch)?;
    apply_changes(tax, changes, batch_index)
}

/// Apply an explicit change list (the backend-independent half of an update).
pub fn apply_changes(
    tax: &Taxonomy,
    changes: Vec<ProposedChange>,
    batch_index: usize,
) -> Result<(Taxonomy, Vec<ChangeLogEntry>)> {
    let mut next = tax.clone();
    let version = tax.version + 1;
    let mut applied = Vec::new();
    for change in changes {
        match change {
            ProposedChange::Add { node, reason } => {
                if reason.trim().is_empty() {
                    return Err(Error::invalid("ADD with empty reason"));
                }
                let id = apply_add(&mut next, node)?;
                applied.push(ChangeLogEntry {
                    version,
                    kind: ChangeKind::Add,
                    affected: vec![id],
                    reason,
                    batch_index,
                });
            }
            ProposedChange::Merge { ids, reason } => {
                if reason.trim().is_empty() {
                    return Err(Error::invalid("MERGE with empty reason"));
                }
                let (survivor, removed) = apply_merge(&mut next, &ids[0], &ids[1])?;
                applied.push(ChangeLogEntry {
                    version,
                    kind: ChangeKind::Merge,
                    affected: vec![survivor, removed],
                    reason,
                    batch_index,
                });
            }
        }
    }
    let report = validate_hierarchy(&next);
    if !report.is_empty() {
        return Err(Error::Hierarchy(report));
    }
    next.version = version;
    next.ledger.extend(applied.clone());
    Ok((next, applied))
}

/// Annotate every message with up to `max_labels` SUB2 topics.
///
/// Batches are merged by message id, so the result does not depend on batch
/// boundaries or response order. Assignments referencing unknown SUB2 ids or
/// out-of-range confidences are rejected.
pub fn annotate_messages(
    messages: &[MessageRecord],
    tax: &Taxonomy,
    backend: &mut dyn AnnotatorBackend,
    config: &TaxonomyConfig,
) -> Result<Vec<MessageRecord>> {
    let report = validate_hierarchy(tax);
    if !report.is_empty() {
        return Err(Error::Hierarchy(report));
    }
    let sub2: BTreeSet<&String> = tax.sub2_ids().collect();
    let mut by_id: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    let batch_size = config.update_batch_size.max(1);
    for chunk in messages.chunks(batch_size) {
        let batch: Vec<BackendMessage> = chunk.iter().map(BackendMessage::from).collect();
        let assignments = backend.annotate(tax, &batch)?;
        for assignment in assignments {
            if !chunk.iter().any(|m| m.message_id == assignment.message_id) {
                return Err(Error::Backend(format!(
                    "assignment for unknown message `{}`",
                    assignment.message_id
                )));
            }
            for label in &assignment.labels {
                if !sub2.contains(&label.sub2_id) {
                    return Err(Error::Backend(format!(
                        "assignment references unknown sub2 `{}`",
                        label.sub2_id
                    )));
                }
                if !(0.0..=1.0).contains(&label.confidence) {
                    return Err(Error::Backend(format!(
                        "confidence {} outside [0,1] for `{}`",
                        label.confidence, label.sub2_id
                    )));
                }
            }
            by_id
                .entry(assignment.message_id)
                .or_default()
                .extend(assignment.labels);
        }
    }

    let annotated = messages
        .iter()
        .map(|m| {
            let mut m = m.clone();
            let mut labels = by_id.remove(&m.message_id).unwrap_or_default();
            // Deduplicate per sub2 keeping the highest confidence, then cap.
            labels.sort_by(|a, b| {
                a.sub2_id
                    .cmp(&b.sub2_id)
                    .then(b.confidence.total_cmp(&a.confidence))
            });
            labels.dedup_by(|a, b| a.sub2_id == b.sub2_id);
            labels.sort_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then(a.sub2_id.cmp(&b.sub2_id))
            });
            labels.truncate(config.max_labels);
            labels.sort_by(|a, b| a.sub2_id.cmp(&b.sub2_id));
            m.annotations = labels;
            m
        })
        .collect();
    Ok(annotated)
}

/// Gwet's AC1 chance-corrected agreement for two raters.
///
/// AC1 = (Pa - Pe) / (1 - Pe) with Pe = (1/(K-1)) * sum_k pi_k (1 - pi_k),
/// where pi_k is the mean across both raters of the proportion rated k.
/// A single observed category makes Pe = 0 by convention.
pub fn gwet_ac1<T: Ord>(ratings_a: &[T], ratings_b: &[T]) -> Result<f64> {
    if ratings_a.len() != ratings_b.len() {
        return Err(Error::invalid(format!(
            "rating lengths differ: {} vs {}",
            ratings_a.len(),
            ratings_b.len()
        )));
    }
    if ratings_a.is_empty() {
        return Err(Error::invalid("empty ratings"));
    }
    let n = ratings_a.len() as f64;
    let agreements = ratings_a
        .iter()
        .zip(ratings_b)
        .filter(|(a, b)| a == b)
        .count() as f64;
    let pa = agreements / n;

    let categories: BTreeSet<&T> = ratings_a.iter().chain(ratings_b.iter()).collect();
    let k = categories.len();
    let pe = if k < 2 {
        0.0
    } else {
        let sum: f64 = categories
            .iter()
            .map(|cat| {
                let ca = ratings_a.iter().filter(|r| r == cat).count() as f64 / n;
                let cb = ratings_b.iter().filter(|r| r == cat).count() as f64 / n;
                let pi = (ca + cb) / 2.0;
                pi * (1.0 - pi)
            })
            .sum();
        sum / (k as f64 - 1.0)
    };
    if pe >= 1.0 {
        return Err(Error::invalid("degenerate agreement: Pe = 1"));
    }
    Ok((pa - pe) / (1.0 - pe))
}
