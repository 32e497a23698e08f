//! Self-contained reference computations for the acceptance suite. These
//! deliberately re-derive results along independent routes from the library
//! implementations they gate.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use prodrome_core::corpus::{AgeBand, Annotation, Attr, Cohort, MessageRecord, PatientRecord};
use prodrome_core::embed::TrigramEmbedder;
use prodrome_core::hetgraph::{
    add_patient_similarity_edges, add_semantic_edges, build_graph, FeatureVocab, GraphConfig,
    HeteroGraph,
};
use prodrome_core::taxonomy::{apply_changes, Level, ProposedChange, ProposedNode, Taxonomy};

pub fn patient_with(
    id: &str,
    event: bool,
    event_date: &str,
    age_band: AgeBand,
    sex: &str,
    comorbidities: &[&str],
) -> PatientRecord {
    PatientRecord {
        patient_id: id.to_string(),
        age_band,
        race: Attr("White".into()),
        ethnicity: Attr("Non-Hispanic".into()),
        sex: Attr(sex.into()),
        marital_status: Attr("Married".into()),
        comorbidities: comorbidities.iter().map(|s| s.to_string()).collect(),
        event,
        event_date: Some(event_date.parse().unwrap()),
        anchor_date: Some(event_date.parse().unwrap()),
    }
}

pub fn message(id: &str, pid: &str, date: &str, sub2s: &[&str]) -> MessageRecord {
    MessageRecord {
        message_id: id.to_string(),
        patient_id: pid.to_string(),
        ts: format!("{date}T00:00:00").parse().unwrap(),
        text: format!("note about {}", sub2s.join(" and ")),
        annotations: sub2s
            .iter()
            .map(|s| Annotation {
                sub2_id: s.to_string(),
                confidence: 1.0,
            })
            .collect(),
    }
}

pub fn flat_taxonomy(n: usize) -> Taxonomy {
    let mut changes = vec![
        ProposedChange::add(
            ProposedNode {
                id: "main".into(),
                level: Level::Main,
                label: "main".into(),
                parent_id: None,
                lexicon: BTreeSet::new(),
            },
            "seed",
        ),
        ProposedChange::add(
            ProposedNode {
                id: "sub1".into(),
                level: Level::Sub1,
                label: "sub1".into(),
                parent_id: Some("main".into()),
                lexicon: BTreeSet::new(),
            },
            "seed",
        ),
    ];
    for k in 0..n {
        changes.push(ProposedChange::add(
            ProposedNode {
                id: format!("t{k:03}"),
                level: Level::Sub2,
                label: format!("topic kind {k:03}"),
                parent_id: Some("sub1".into()),
                lexicon: BTreeSet::from([format!("kw{k:03}")]),
            },
            "seed",
        ));
    }
    apply_changes(&Taxonomy::default(), changes, 0).unwrap().0
}

/// The standard 10-node heterograph (4 patients, 3 symptoms, 3
/// comorbidities) with every edge type present.
pub fn standard_test_graph() -> (HeteroGraph, Vec<bool>) {
    let patients = vec![
        patient_with(
            "case-a",
            true,
            "2024-09-10",
            AgeBand::From65To74,
            "F",
            &["E11", "I10"],
        ),
        patient_with(
            "case-b",
            true,
            "2024-09-20",
            AgeBand::From75,
            "M",
            &["E11", "I48"],
        ),
        patient_with(
            "ctl-a",
            false,
            "2024-09-10",
            AgeBand::From65To74,
            "F",
            &["I10"],
        ),
        patient_with(
            "ctl-b",
            false,
            "2024-09-20",
            AgeBand::From50To64,
            "M",
            &["E11"],
        ),
    ];
    let cohort = Cohort {
        patients,
        shortfall: Default::default(),
    };
    let taxonomy = flat_taxonomy(3);
    let messages = vec![
        message("m1", "case-a", "2024-09-05", &["t000"]),
        message("m2", "case-a", "2024-09-08", &["t000", "t001"]),
        message("m3", "case-b", "2024-09-01", &["t000"]),
        message("m4", "case-b", "2024-08-25", &["t002"]),
        message("m5", "ctl-a", "2024-09-02", &["t001"]),
        message("m6", "ctl-b", "2024-09-12", &["t002", "t001"]),
    ];
    let vocab = FeatureVocab::from_patients(&cohort.patients);
    let provider = TrigramEmbedder::default();
    let mut graph = build_graph(
        &messages,
        &cohort,
        &taxonomy,
        &vocab,
        &provider,
        &GraphConfig::default(),
    )
    .unwrap();
    add_semantic_edges(&mut graph, &provider, 0.0).unwrap();
    add_patient_similarity_edges(&mut graph, 2).unwrap();
    let labels = graph.labels();
    (graph, labels)
}

/// Hand-rolled column standardization (mean 0, population sd 1).
pub fn reference_standardize(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut xs = Array2::zeros((x.nrows(), x.ncols()));
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        let sd = (x
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n)
            .sqrt();
        if sd > 0.0 {
            for i in 0..x.nrows() {
                xs[[i, j]] = (x[[i, j]] - mean) / sd;
            }
        }
    }
    xs
}

/// Accelerated proximal-gradient (FISTA) reference for the standardized
/// elastic-net logistic objective; returns the optimal objective value.
pub fn fista_reference(xs: &Array2<f64>, y: &[f64], lambda: f64, alpha: f64) -> f64 {
    let n = xs.nrows();
    let p = xs.ncols();
    let nf = n as f64;
    let ridge = lambda * (1.0 - alpha);
    let l1 = lambda * alpha;

    let smooth = |b0: f64, b: &Array1<f64>| -> f64 {
        let mut loss = 0.0;
        for (i, &yi) in y.iter().enumerate().take(n) {
            let eta = b0 + xs.row(i).dot(b);
            let log1pe = if eta > 30.0 { eta } else { eta.exp().ln_1p() };
            loss += log1pe - yi * eta;
        }
        loss / nf + ridge / 2.0 * b.iter().map(|v| v * v).sum::<f64>()
    };
    let grad = |b0: f64, b: &Array1<f64>| -> (f64, Array1<f64>) {
        let mut g0 = 0.0;
        let mut g = Array1::zeros(p);
        for (i, &yi) in y.iter().enumerate().take(n) {
            let eta = b0 + xs.row(i).dot(b);
            let d = (1.0 / (1.0 + (-eta).exp()) - yi) / nf;
            g0 += d;
            for j in 0..p {
                g[j] += d * xs[[i, j]];
            }
        }
        for j in 0..p {
            g[j] += ridge * b[j];
        }
        (g0, g)
    };
    let soft = |z: f64, g: f64| -> f64 {
        if z > g {
            z - g
        } else if z < -g {
            z + g
        } else {
            0.0
        }
    };

    let mut b0 = 0.0;
    let mut b: Array1<f64> = Array1::zeros(p);
    let mut v0 = b0;
    let mut v: Array1<f64> = b.clone();
    let mut t = 1.0f64;
    let mut step = 1.0f64;

    let mut best = smooth(b0, &b) + l1 * b.iter().map(|x| x.abs()).sum::<f64>();
    for _ in 0..200_000 {
        let (g0, g) = grad(v0, &v);
        let f_v = smooth(v0, &v);
        let (nb0, nb) = loop {
            let cand0 = v0 - step * g0;
            let cand: Array1<f64> =
                Array1::from_iter((0..p).map(|j| soft(v[j] - step * g[j], step * l1)));
            let f_cand = smooth(cand0, &cand);
            let diff0 = cand0 - v0;
            let diff: Array1<f64> = &cand - &v;
            let quad =
                f_v + g0 * diff0 + g.dot(&diff) + (diff0 * diff0 + diff.dot(&diff)) / (2.0 * step);
            if f_cand <= quad + 1e-15 {
                break (cand0, cand);
            }
            step /= 2.0;
            if step < 1e-18 {
                break (cand0, cand);
            }
        };
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        v0 = nb0 + momentum * (nb0 - b0);
        v = &nb + &((&nb - &b) * momentum);
        b0 = nb0;
        b = nb;
        t = t_next;

        let obj = smooth(b0, &b) + l1 * b.iter().map(|x| x.abs()).sum::<f64>();
        if (best - obj).abs() < 1e-14 && obj <= best {
            best = best.min(obj);
            break;
        }
        best = best.min(obj);
    }
    best
}
