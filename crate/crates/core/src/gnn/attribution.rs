//! Event-delta attribution and graph salience for symptoms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Cohort, MessageRecord};
use crate::embed::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::gnn::{eval_loss, HeteroModel};
use crate::hetgraph::{centrality, HeteroGraph};
use crate::stats::min_max_normalize;

/// Copy of the graph with one symptom masked: features zeroed and every
/// edge touching it removed. No retraining.
fn mask_symptom(graph: &HeteroGraph, idx: usize) -> HeteroGraph {
    let mut g = graph.clone();
    g.symptoms[idx].features.iter_mut().for_each(|v| *v = 0.0);
    g.patient_symptom.retain(|&(_, s, _)| s != idx);
    g.symptom_symptom.retain(|&(i, j, _)| i != idx && j != idx);
    g
}

/// Increase in the weighted event loss when `sub2_id` is masked.
pub fn event_delta(
    model: &HeteroModel,
    graph: &HeteroGraph,
    labels: &[bool],
    sub2_id: &str,
) -> Result<f64> {
    let idx = graph
        .symptom_index(sub2_id)
        .ok_or_else(|| Error::invalid(format!("unknown symptom `{sub2_id}`")))?;
    let base = eval_loss(model, graph, labels)?;
    let masked = eval_loss(model, &mask_symptom(graph, idx), labels)?;
    Ok(masked - base)
}

/// Event delta for every symptom in the graph.
pub fn event_deltas(
    model: &HeteroModel,
    graph: &HeteroGraph,
    labels: &[bool],
) -> Result<BTreeMap<String, f64>> {
    let base = eval_loss(model, graph, labels)?;
    let mut out = BTreeMap::new();
    for (idx, s) in graph.symptoms.iter().enumerate() {
        let masked = eval_loss(model, &mask_symptom(graph, idx), labels)?;
        out.insert(s.sub2_id.clone(), masked - base);
    }
    Ok(out)
}

/// Per-symptom salience components, each min-max normalized to [0,1].
///
/// A constant component maps to all zeros, so a single-symptom table has
/// composite 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SalienceTable {
    pub raw_prevalence: BTreeMap<String, f64>,
    pub raw_temporal: BTreeMap<String, f64>,
    pub raw_semantic: BTreeMap<String, f64>,
    pub raw_centrality: BTreeMap<String, f64>,
    pub prevalence: BTreeMap<String, f64>,
    pub temporal: BTreeMap<String, f64>,
    pub semantic: BTreeMap<String, f64>,
    pub centrality: BTreeMap<String, f64>,
    /// Unweighted mean of the four normalized components.
    pub composite: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionResult {
    pub event_delta: BTreeMap<String, f64>,
    pub salience: SalienceTable,
}

/// Graph-based salience: prevalence among case patients, short-term
/// temporal score, semantic intensity of messages against the symptom
/// label, and symptom centrality.
pub fn salience(
    graph: &HeteroGraph,
    messages: &[MessageRecord],
    cohort: &Cohort,
    stt: &BTreeMap<String, f64>,
    provider: &dyn EmbeddingProvider,
) -> Result<SalienceTable> {
    if graph.symptoms.is_empty() {
        return Err(Error::invalid("salience over an empty symptom set"));
    }
    let case_ids: BTreeSet<&str> = cohort.cases().map(|p| p.patient_id.as_str()).collect();
    let n_cases = case_ids.len().max(1) as f64;

    let mut case_hits: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut sims: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let label_embeds: BTreeMap<&str, Vec<f64>> = graph
        .symptoms
        .iter()
        .map(|s| (s.sub2_id.as_str(), provider.embed(&s.label)))
        .collect();

    for m in messages {
        for a in &m.annotations {
            let Some(label_vec) = label_embeds.get(a.sub2_id.as_str()) else {
                continue;
            };
            if case_ids.contains(m.patient_id.as_str()) {
                case_hits
                    .entry(a.sub2_id.as_str())
                    .or_default()
                    .insert(m.patient_id.as_str());
            }
            let text_vec = provider.embed(&m.text);
            sims.entry(a.sub2_id.as_str())
                .or_default()
                .push(cosine(&text_vec, label_vec));
        }
    }

    let central = centrality(graph);
    let ids: Vec<&str> = graph.symptoms.iter().map(|s| s.sub2_id.as_str()).collect();

    let raw_prevalence: Vec<f64> = ids
        .iter()
        .map(|id| case_hits.get(id).map_or(0.0, |s| s.len() as f64 / n_cases))
        .collect();
    let raw_temporal: Vec<f64> = ids.iter().map(|id| *stt.get(*id).unwrap_or(&0.0)).collect();
    let raw_semantic: Vec<f64> = ids
        .iter()
        .map(|id| {
            sims.get(id)
                .map_or(0.0, |v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let raw_centrality: Vec<f64> = ids
        .iter()
        .map(|id| *central.get(*id).unwrap_or(&0.0))
        .collect();

    let norm_prev = min_max_normalize(&raw_prevalence);
    let norm_temp = min_max_normalize(&raw_temporal);
    let norm_sem = min_max_normalize(&raw_semantic);
    let norm_cen = min_max_normalize(&raw_centrality);

    let to_map = |vals: &[f64]| -> BTreeMap<String, f64> {
        ids.iter()
            .zip(vals)
            .map(|(id, &v)| (id.to_string(), v))
            .collect()
    };

    let composite: BTreeMap<String, f64> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.to_string(),
                (norm_prev[i] + norm_temp[i] + norm_sem[i] + norm_cen[i]) / 4.0,
            )
        })
        .collect();

    Ok(SalienceTable {
        raw_prevalence: to_map(&raw_prevalence),
        raw_temporal: to_map(&raw_temporal),
        raw_semantic: to_map(&raw_semantic),
        raw_centrality: to_map(&raw_centrality),
        prevalence: to_map(&norm_prev),
        temporal: to_map(&norm_temp),
        semantic: to_map(&norm_sem),
        centrality: to_map(&norm_cen),
        composite,
    })
}
