//! Heterogeneous patient-symptom-comorbidity graph with temporal edge
//! attributes, similarity edges and symptom centrality.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AgeBand, Cohort, MessageRecord, PatientRecord};
use crate::embed::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// Categorical vocabularies that fix the patient feature layout.
///
/// Built once from the full cohort so that graphs over subsets (e.g. CV
/// folds) share identical feature dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub races: Vec<String>,
    pub ethnicities: Vec<String>,
    pub sexes: Vec<String>,
    pub marital_statuses: Vec<String>,
    pub comorbidities: Vec<String>,
}

impl FeatureVocab {
    pub fn from_patients(patients: &[PatientRecord]) -> Self {
        let collect = |f: &dyn Fn(&PatientRecord) -> String| -> Vec<String> {
            patients
                .iter()
                .map(f)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let comorbidities = patients
            .iter()
            .flat_map(|p| p.comorbidities.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self {
            races: collect(&|p| p.race.0.clone()),
            ethnicities: collect(&|p| p.ethnicity.0.clone()),
            sexes: collect(&|p| p.sex.0.clone()),
            marital_statuses: collect(&|p| p.marital_status.0.clone()),
            comorbidities,
        }
    }

    pub fn patient_dim(&self) -> usize {
        AgeBand::all().len()
            + self.races.len()
            + self.ethnicities.len()
            + self.sexes.len()
            + self.marital_statuses.len()
            + self.comorbidities.len()
    }

    /// One-hot demographics concatenated with multi-hot comorbidities.
    pub fn patient_features(&self, p: &PatientRecord) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.patient_dim());
        for band in AgeBand::all() {
            v.push(if *band == p.age_band { 1.0 } else { 0.0 });
        }
        let one_hot = |levels: &[String], value: &str, out: &mut Vec<f64>| {
            for l in levels {
                out.push(if l == value { 1.0 } else { 0.0 });
            }
        };
        one_hot(&self.races, &p.race.0, &mut v);
        one_hot(&self.ethnicities, &p.ethnicity.0, &mut v);
        one_hot(&self.sexes, &p.sex.0, &mut v);
        one_hot(&self.marital_statuses, &p.marital_status.0, &mut v);
        for code in &self.comorbidities {
            v.push(if p.comorbidities.contains(code) {
                1.0
            } else {
                0.0
            });
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientNode {
    pub patient_id: String,
    pub features: Vec<f64>,
    pub event: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymptomNode {
    pub sub2_id: String,
    pub label: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComorbidityNode {
    pub code: String,
    pub features: Vec<f64>,
}

/// Patient-symptom edge attributes: message count and recency kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsAttr {
    pub count: f64,
    /// exp(-dt_min / tau) with dt_min in days; always in (0, 1].
    pub recency: f64,
}

/// Typed nodes and edges. Construction is canonical: node lists are sorted
/// by id, undirected edges stored once with src index < dst index, so two
/// graphs built from the same inputs are identical regardless of input
/// ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub patients: Vec<PatientNode>,
    pub symptoms: Vec<SymptomNode>,
    pub comorbidities: Vec<ComorbidityNode>,
    pub patient_symptom: Vec<(usize, usize, PsAttr)>,
    pub patient_comorbidity: Vec<(usize, usize)>,
    pub patient_patient: Vec<(usize, usize, f64)>,
    pub symptom_symptom: Vec<(usize, usize, f64)>,
    pub vocab: FeatureVocab,
    pub embed_dim: usize,
}

impl HeteroGraph {
    pub fn patient_index(&self, patient_id: &str) -> Option<usize> {
        self.patients
            .binary_search_by(|p| p.patient_id.as_str().cmp(patient_id))
            .ok()
    }

    pub fn symptom_index(&self, sub2_id: &str) -> Option<usize> {
        self.symptoms
            .binary_search_by(|s| s.sub2_id.as_str().cmp(sub2_id))
            .ok()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.patients.iter().map(|p| p.event).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Recency kernel time constant in days.
    pub tau_days: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { tau_days: 30.0 }
    }
}

/// Drop (message, label) pairs below the relevance threshold.
pub fn prune_annotations(
    messages: &[MessageRecord],
    min_relevance: f64,
) -> Result<Vec<MessageRecord>> {
    if !(0.0..=1.0).contains(&min_relevance) {
        return Err(Error::invalid(format!(
            "min_relevance {min_relevance} outside [0,1]"
        )));
    }
    Ok(messages
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.annotations.retain(|a| a.confidence >= min_relevance);
            m
        })
        .collect())
}

/// Build the typed graph from an annotated corpus and an assembled cohort.
///
/// Symptom nodes exist for every SUB2 with at least one surviving
/// annotation. Patient-symptom edges carry the message count and
/// exp(-dt_min/tau) where dt_min is the day gap from the most recent such
/// message to the patient's anchor date.
pub fn build_graph(
    messages: &[MessageRecord],
    cohort: &Cohort,
    taxonomy: &Taxonomy,
    vocab: &FeatureVocab,
    provider: &dyn EmbeddingProvider,
    config: &GraphConfig,
) -> Result<HeteroGraph> {
    let known_sub2: BTreeSet<&String> = taxonomy.sub2_ids().collect();

    let mut patients: Vec<&PatientRecord> = cohort.patients.iter().collect();
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let patient_idx: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.patient_id.as_str(), i))
        .collect();

    // Tally per (patient, sub2): count and the most recent message date.
    let mut tallies: BTreeMap<(usize, String), (f64, chrono::NaiveDate)> = BTreeMap::new();
    let mut seen_sub2: BTreeSet<String> = BTreeSet::new();
    for m in messages {
        let Some(&pi) = patient_idx.get(m.patient_id.as_str()) else {
            continue;
        };
        for a in &m.annotations {
            if !known_sub2.contains(&a.sub2_id) {
                return Err(Error::invalid(format!(
                    "annotation references unknown sub2 `{}`",
                    a.sub2_id
                )));
            }
            seen_sub2.insert(a.sub2_id.clone());
            let entry = tallies
                .entry((pi, a.sub2_id.clone()))
                .or_insert((0.0, m.date()));
            entry.0 += 1.0;
            entry.1 = entry.1.max(m.date());
        }
    }

    let symptom_ids: Vec<String> = seen_sub2.into_iter().collect();
    let symptom_idx: BTreeMap<&str, usize> = symptom_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let symptoms: Vec<SymptomNode> = symptom_ids
        .iter()
        .map(|id| {
            let label = taxonomy.label_of(id).unwrap_or(id).to_string();
            SymptomNode {
                sub2_id: id.clone(),
                features: provider.embed(&label),
                label,
            }
        })
        .collect();

    let comorbidity_codes = &vocab.comorbidities;
    let comorbidities: Vec<ComorbidityNode> = comorbidity_codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let mut features = vec![0.0; comorbidity_codes.len()];
            features[i] = 1.0;
            ComorbidityNode {
                code: code.clone(),
                features,
            }
        })
        .collect();

    let mut patient_symptom = Vec::with_capacity(tallies.len());
    for ((pi, sub2), (count, latest)) in &tallies {
        let anchor = patients[*pi].anchor_date.ok_or_else(|| {
            Error::invalid(format!(
                "patient `{}` has no anchor_date",
                patients[*pi].patient_id
            ))
        })?;
        let dt_days = (anchor - *latest).num_days().max(0) as f64;
        let recency = (-dt_days / config.tau_days).exp();
        patient_symptom.push((
            *pi,
            symptom_idx[sub2.as_str()],
            PsAttr {
                count: *count,
                recency,
            },
        ));
    }

    let mut patient_comorbidity = Vec::new();
    for (pi, p) in patients.iter().enumerate() {
        for code in &p.comorbidities {
            if let Ok(ci) = comorbidity_codes.binary_search(code) {
                patient_comorbidity.push((pi, ci));
            }
        }
    }

    let patient_nodes = patients
        .iter()
        .map(|p| PatientNode {
            patient_id: p.patient_id.clone(),
            features: vocab.patient_features(p),
            event: p.event,
        })
        .collect();

    Ok(HeteroGraph {
        patients: patient_nodes,
        symptoms,
        comorbidities,
        patient_symptom,
        patient_comorbidity,
        patient_patient: Vec::new(),
        symptom_symptom: Vec::new(),
        vocab: vocab.clone(),
        embed_dim: provider.dim(),
    })
}

/// Connect symptom pairs whose label embeddings reach the cosine threshold.
pub fn add_semantic_edges(
    graph: &mut HeteroGraph,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<()> {
    if !(-1.0 < threshold && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "semantic threshold {threshold} outside (-1, 1)"
        )));
    }
    if provider.dim() != graph.embed_dim {
        return Err(Error::invalid(format!(
            "provider dimension {} != graph embedding dimension {}",
            provider.dim(),
            graph.embed_dim
        )));
    }
    let embeddings: Vec<Vec<f64>> = graph
        .symptoms
        .iter()
        .map(|s| provider.embed(&s.label))
        .collect();
    let mut edges = Vec::new();
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let cos = cosine(&embeddings[i], &embeddings[j]);
            if cos >= threshold {
                edges.push((i, j, cos));
            }
        }
    }
    graph.symptom_symptom = edges;
    Ok(())
}

/// Undirected k-nearest-neighbor edges between patients by cosine over
/// demographic + comorbidity features. Ties break on patient id.
pub fn add_patient_similarity_edges(graph: &mut HeteroGraph, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("patient similarity k must be >= 1"));
    }
    let n = graph.patients.len();
    if n < 2 {
        return Err(Error::invalid(
            "patient similarity needs at least 2 patients",
        ));
    }
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..n {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    j,
                    cosine(&graph.patients[i].features, &graph.patients[j].features),
                )
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                graph.patients[a.0]
                    .patient_id
                    .cmp(&graph.patients[b.0].patient_id)
            })
        });
        for (j, cos) in candidates.into_iter().take(k) {
            let key = (i.min(j), i.max(j));
            pairs.entry(key).or_insert(cos);
        }
    }
    graph.patient_patient = pairs.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    Ok(())
}

/// Weighted PageRank over the symptom-symptom subgraph.
///
/// Damping 0.85, L1 tolerance 1e-10. Isolated symptoms receive teleport
/// mass; with no semantic edges at all the result is uniform. Scores sum
/// to 1.
pub fn centrality(graph: &HeteroGraph) -> BTreeMap<String, f64> {
    let n = graph.symptoms.len();
    let mut out = BTreeMap::new();
    if n == 0 {
        return out;
    }
    let damping = 0.85;
    let tol = 1e-10;
    let nf = n as f64;

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, w) in &graph.symptom_symptom {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let out_weight: Vec<f64> = adj
        .iter()
        .map(|nbrs| nbrs.iter().map(|(_, w)| w).sum())
        .collect();

    let mut scores = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..10_000 {
        let dangling: f64 = (0..n)
            .filter(|&i| out_weight[i] <= 0.0)
            .map(|i| scores[i])
            .sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.iter_mut().for_each(|v| *v = base);
        for i in 0..n {
            if out_weight[i] > 0.0 {
                let share = damping * scores[i] / out_weight[i];
                for &(j, w) in &adj[i] {
                    next[j] += share * w;
                }
            }
        }
        let diff: f64 = scores.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut scores, &mut next);
        if diff < tol {
            break;
        }
    }
    for (i, s) in graph.symptoms.iter().enumerate() {
        out.insert(s.sub2_id.clone(), scores[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, Attr, CohortSpec};
    use crate::embed::TrigramEmbedder;
    use crate::taxonomy::tests::tiny_taxonomy;
    use std::collections::BTreeSet;

    struct BasisProvider {
        dim: usize,
        map: BTreeMap<String, usize>,
    }

    impl EmbeddingProvider for BasisProvider {
        fn dim(&self) -> usize {
            self.dim
        }
        fn embed(&self, text: &str) -> Vec<f64> {
            let mut v = vec![0.0; self.dim];
            v[*self.map.get(text).unwrap_or(&0)] = 1.0;
            v
        }
    }

    fn case(id: &str, anchor: &str) -> crate::corpus::PatientRecord {
        crate::corpus::PatientRecord {
            patient_id: id.into(),
            age_band: AgeBand::From65To74,
            race: Attr("White".into()),
            ethnicity: Attr("Non-Hispanic".into()),
            sex: Attr("F".into()),
            marital_status: Attr("Married".into()),
            comorbidities: BTreeSet::from(["E11".to_string()]),
            event: true,
            event_date: Some(anchor.parse().unwrap()),
            anchor_date: Some(anchor.parse().unwrap()),
        }
    }

    fn annotated_message(
        id: &str,
        pid: &str,
        date: &str,
        sub2: &str,
    ) -> crate::corpus::MessageRecord {
        crate::corpus::MessageRecord {
            message_id: id.into(),
            patient_id: pid.into(),
            ts: format!("{date}T00:00:00").parse().unwrap(),
            text: String::new(),
            annotations: vec![Annotation {
                sub2_id: sub2.into(),
                confidence: 1.0,
            }],
        }
    }

    fn small_cohort() -> Cohort {
        Cohort {
            patients: vec![case("p1", "2024-09-10"), case("p2", "2024-09-20")],
            shortfall: Default::default(),
        }
    }

    #[test]
    fn recency_one_for_same_day_message() {
        let cohort = small_cohort();
        let tax = tiny_taxonomy();
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let messages = vec![
            annotated_message("m1", "p1", "2024-09-01", "s2a"),
            annotated_message("m2", "p1", "2024-09-10", "s2a"),
        ];
        let g = build_graph(
            &messages,
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default(),
        )
        .unwrap();
        assert_eq!(g.symptoms.len(), 1);
        let (_, _, attr) = g.patient_symptom[0];
        assert_eq!(attr.count, 2.0);
        assert_eq!(attr.recency, 1.0);
    }

    #[test]
    fn no_annotations_no_symptom_nodes() {
        let cohort = small_cohort();
        let tax = tiny_taxonomy();
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let mut m = annotated_message("m1", "p1", "2024-09-01", "s2a");
        m.annotations.clear();
        let g = build_graph(
            &[m],
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default(),
        )
        .unwrap();
        assert!(g.symptoms.is_empty());
        assert_eq!(g.patients.len(), 2);
        assert_eq!(g.comorbidities.len(), 1);
    }

    #[test]
    fn unknown_sub2_rejected() {
        let cohort = small_cohort();
        let tax = tiny_taxonomy();
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let messages = vec![annotated_message("m1", "p1", "2024-09-01", "mystery")];
        assert!(build_graph(
            &messages,
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default()
        )
        .is_err());
    }

    #[test]
    fn pruning_thresholds() {
        let mut m = annotated_message("m1", "p1", "2024-09-01", "s2a");
        m.annotations.push(Annotation {
            sub2_id: "s2b".into(),
            confidence: 0.4,
        });
        let identity = prune_annotations(std::slice::from_ref(&m), 0.0).unwrap();
        assert_eq!(identity[0].annotations.len(), 2);
        let strict = prune_annotations(std::slice::from_ref(&m), 1.0).unwrap();
        assert_eq!(strict[0].annotations.len(), 1);
        assert!(prune_annotations(&[m], 1.5).is_err());
    }

    #[test]
    fn semantic_edges_identical_and_orthogonal() {
        let cohort = small_cohort();
        let mut tax = tiny_taxonomy();
        // identical labels for s2a/s2b under different parents is fine here:
        // give them the same label text via direct mutation
        tax.nodes.get_mut("s2b").unwrap().label = "label s2a".into();
        tax.nodes.get_mut("s2b").unwrap().parent_id = Some("s1a".into());
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let messages = vec![
            annotated_message("m1", "p1", "2024-09-01", "s2a"),
            annotated_message("m2", "p2", "2024-09-11", "s2b"),
        ];
        let provider = TrigramEmbedder::default();
        let mut g = build_graph(
            &messages,
            &cohort,
            &tax,
            &vocab,
            &provider,
            &GraphConfig::default(),
        )
        .unwrap();
        add_semantic_edges(&mut g, &provider, 0.99).unwrap();
        assert_eq!(g.symptom_symptom.len(), 1);
        assert!((g.symptom_symptom[0].2 - 1.0).abs() < 1e-12);

        // orthogonal basis embeddings: no edge at threshold 0.5
        let basis = BasisProvider {
            dim: 64,
            map: BTreeMap::from([("label s2a".to_string(), 1)]),
        };
        // both labels identical -> same bucket; give them distinct labels
        let mut tax2 = tiny_taxonomy();
        tax2.nodes.get_mut("s2b").unwrap().label = "other".into();
        let mut g2 = build_graph(
            &messages,
            &cohort,
            &tax2,
            &vocab,
            &basis,
            &GraphConfig::default(),
        )
        .unwrap();
        let basis2 = BasisProvider {
            dim: 64,
            map: BTreeMap::from([("label s2a".to_string(), 1), ("other".to_string(), 2)]),
        };
        add_semantic_edges(&mut g2, &basis2, 0.5).unwrap();
        assert!(g2.symptom_symptom.is_empty());
    }

    #[test]
    fn identical_patients_mutual_knn_edge() {
        let mut cohort = small_cohort();
        cohort.patients[1].age_band = cohort.patients[0].age_band;
        let tax = tiny_taxonomy();
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let mut g = build_graph(
            &[],
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default(),
        )
        .unwrap();
        add_patient_similarity_edges(&mut g, 1).unwrap();
        assert_eq!(g.patient_patient.len(), 1);
        assert!((g.patient_patient[0].2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knn_with_large_k_is_complete() {
        let mut cohort = small_cohort();
        for i in 3..6 {
            cohort.patients.push(case(&format!("p{i}"), "2024-09-10"));
        }
        let tax = tiny_taxonomy();
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let mut g = build_graph(
            &[],
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default(),
        )
        .unwrap();
        let n = g.patients.len();
        add_patient_similarity_edges(&mut g, n - 1).unwrap();
        assert_eq!(g.patient_patient.len(), n * (n - 1) / 2);
    }

    #[test]
    fn pagerank_star_and_cycle() {
        let mk_graph = |edges: Vec<(usize, usize, f64)>, n: usize| {
            let cohort = small_cohort();
            HeteroGraph {
                patients: Vec::new(),
                symptoms: (0..n)
                    .map(|i| SymptomNode {
                        sub2_id: format!("s{i}"),
                        label: format!("s{i}"),
                        features: vec![1.0],
                    })
                    .collect(),
                comorbidities: Vec::new(),
                patient_symptom: Vec::new(),
                patient_comorbidity: Vec::new(),
                patient_patient: Vec::new(),
                symptom_symptom: edges,
                vocab: FeatureVocab::from_patients(&cohort.patients),
                embed_dim: 1,
            }
        };

        // star: node 0 at the center of 4 spokes
        let star = mk_graph(vec![(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0)], 5);
        let scores = centrality(&star);
        let center = scores["s0"];
        for i in 1..5 {
            assert!(center > scores[&format!("s{i}")]);
        }
        let total: f64 = scores.values().sum();
        assert!((total - 1.0).abs() < 1e-9);

        // cycle: uniform 1/n
        let cycle = mk_graph(vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)], 4);
        let scores = centrality(&cycle);
        for v in scores.values() {
            assert!((v - 0.25).abs() < 1e-9);
        }

        let _ = CohortSpec::default();
    }
}
