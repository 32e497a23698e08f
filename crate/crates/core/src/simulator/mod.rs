//! End-to-end screening simulation: discovery (annotation, graph, dual
//! attribution, tiers), per-window screener calibration on a designated
//! temporal block, evaluation across all windows x blocks, and report
//! emission.

pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::corpus::{
    build_temporal_blocks, extract_window, match_controls, BlockCohort, Cohort, MessageRecord,
    PatientRecord, ScreeningWindow,
};
use crate::embed::TrigramEmbedder;
use crate::enlasso::{
    self, fit_en, permutation_importance, symptom_count_matrix, CompareConfig, CvOutcome,
    DesignMatrix, ENConfig,
};
use crate::error::{Error, Result};
use crate::gnn::{self, event_deltas, salience, SalienceTable};
use crate::hetgraph::{
    add_patient_similarity_edges, add_semantic_edges, build_graph, prune_annotations, FeatureVocab,
    HeteroGraph,
};
use crate::scoring::{
    build_score_table, temporal_proximity, ProximityResult, SymptomScoreRow, Tier,
};
use crate::screener::{
    calibrate_threshold, evaluate, screen_patient, CalibrationOutcome, MetricsReport,
    ScreenerModel, FEATURE_NAMES,
};
use crate::stats::{derive_seed, mean, sample_sd};
use crate::taxonomy::{annotate_messages, AnnotatorBackend, Taxonomy};

pub use synth::{
    generate_synthetic_cohort, sub2_id, synthetic_taxonomy, trigger_phrase, CategoricalDist,
    DemographicsSpec, PlantedSymptom, SyntheticSpec, SyntheticTruth,
};

/// Discovery-phase outputs shared by scoring and screening.
pub struct DiscoveryOutput {
    pub cohort: Cohort,
    pub annotated: Vec<MessageRecord>,
    pub graph: HeteroGraph,
    pub model: gnn::HeteroModel,
    pub history: gnn::TrainHistory,
    pub gnn_deltas: BTreeMap<String, f64>,
    pub en_fit: enlasso::FitResult,
    pub en_perms: BTreeMap<String, f64>,
    pub proximity: BTreeMap<String, ProximityResult>,
    pub score_table: Vec<SymptomScoreRow>,
    pub salience: Option<SalienceTable>,
}

impl DiscoveryOutput {
    pub fn tiers(&self) -> BTreeMap<String, Tier> {
        self.score_table
            .iter()
            .map(|r| (r.sub2_id.clone(), r.tier))
            .collect()
    }
}

/// Messages within each cohort patient's observation window, one slice per
/// patient, concatenated.
pub fn observation_messages(
    messages: &[MessageRecord],
    cohort: &Cohort,
    observation_days: u32,
) -> Result<Vec<MessageRecord>> {
    let window = ScreeningWindow::new(observation_days)?;
    let mut out = Vec::new();
    for p in &cohort.patients {
        for m in extract_window(p, messages, window)? {
            out.push(m.clone());
        }
    }
    out.sort_by(|a, b| (a.ts, &a.message_id).cmp(&(b.ts, &b.message_id)));
    Ok(out)
}

/// Run the discovery pipeline on an annotated corpus: graph, network
/// training, dual attribution and the score table.
pub fn run_discovery(
    annotated: &[MessageRecord],
    cohort: &Cohort,
    taxonomy: &Taxonomy,
    config: &AppConfig,
) -> Result<DiscoveryOutput> {
    let provider = TrigramEmbedder::default();
    let vocab = FeatureVocab::from_patients(&cohort.patients);
    let windowed = observation_messages(annotated, cohort, config.scoring.observation_window_days)?;

    let mut graph = build_graph(
        &windowed,
        cohort,
        taxonomy,
        &vocab,
        &provider,
        &config.graph,
    )?;
    add_semantic_edges(&mut graph, &provider, config.semantic_threshold)?;
    if graph.patients.len() >= 2 {
        add_patient_similarity_edges(&mut graph, config.patient_knn)?;
    }
    if graph.symptoms.is_empty() {
        return Err(Error::invalid(
            "no annotated symptoms inside the observation window",
        ));
    }

    let labels = graph.labels();
    let gnn_config = gnn::TrainConfig {
        seed: derive_seed(config.seed, "gnn"),
        ..config.gnn.clone()
    };
    let (model, history) = gnn::train(&graph, &labels, &gnn_config)?;
    let gnn_deltas = event_deltas(&model, &graph, &labels)?;

    let matrix = symptom_count_matrix(&windowed, cohort, config.scoring.observation_window_days)?;
    let y: Vec<bool> = {
        let by_id = cohort.labels();
        matrix.row_ids.iter().map(|id| by_id[id]).collect()
    };
    let en_config = ENConfig {
        seed: derive_seed(config.seed, "en"),
        ..config.en.clone()
    };
    let en_fit = fit_en(&matrix, &y, &en_config)?;
    let en_perms = permutation_importance(&en_fit, &matrix, &y, &en_config)?;

    let case_anchors: BTreeMap<String, chrono::NaiveDate> = cohort
        .cases()
        .filter_map(|p| p.anchor_date.map(|d| (p.patient_id.clone(), d)))
        .collect();
    let proximity = temporal_proximity(annotated, &case_anchors, &config.scoring);

    let labels_map: BTreeMap<String, String> = graph
        .symptoms
        .iter()
        .map(|s| (s.sub2_id.clone(), s.label.clone()))
        .collect();
    let score_table = build_score_table(
        &gnn_deltas,
        &en_perms,
        &proximity,
        &labels_map,
        &config.scoring,
    )?;

    let stt_map: BTreeMap<String, f64> = score_table
        .iter()
        .map(|r| (r.sub2_id.clone(), r.stt))
        .collect();
    let salience_table = salience(&graph, &windowed, cohort, &stt_map, &provider).ok();

    Ok(DiscoveryOutput {
        cohort: cohort.clone(),
        annotated: annotated.to_vec(),
        graph,
        model,
        history,
        gnn_deltas,
        en_fit,
        en_perms,
        proximity,
        score_table,
        salience: salience_table,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSkip {
    pub window: u32,
    pub block_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowScreener {
    pub window: u32,
    pub model: ScreenerModel,
    pub calibration: Option<CalibrationOutcome>,
    pub calibration_block: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: u32,
    pub mean_sensitivity: Option<f64>,
    pub sd_sensitivity: Option<f64>,
    pub mean_alert_burden: Option<f64>,
    pub sd_alert_burden: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub cells: Vec<MetricsReport>,
    pub skipped: Vec<SimSkip>,
    pub window_summaries: Vec<WindowSummary>,
    pub screeners: Vec<WindowScreener>,
    pub score_table: Vec<SymptomScoreRow>,
    pub proximity: BTreeMap<String, ProximityResult>,
    pub en_coefficients: BTreeMap<String, f64>,
    pub cv_auc: Option<BTreeMap<String, CvOutcome>>,
    pub excluded_cases: usize,
    pub warnings: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
}

fn eligible_patients<'a>(
    block: &'a BlockCohort,
    messages: &'a [MessageRecord],
    window: ScreeningWindow,
) -> Result<Vec<(&'a PatientRecord, Vec<&'a MessageRecord>)>> {
    let mut out = Vec::new();
    for p in &block.cohort.patients {
        let slice = extract_window(p, messages, window)?;
        if !slice.is_empty() {
            out.push((p, slice));
        }
    }
    Ok(out)
}

fn fit_window_screener(
    eligible: &[(&PatientRecord, Vec<&MessageRecord>)],
    tiers: &BTreeMap<String, Tier>,
    config: &AppConfig,
    window: u32,
    warnings: &mut Vec<String>,
) -> Result<(ScreenerModel, Option<CalibrationOutcome>)> {
    let labels: Vec<bool> = eligible.iter().map(|(p, _)| p.event).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    if eligible.is_empty() || n_pos == 0 || n_pos == labels.len() {
        warnings.push(format!(
            "window {window}: calibration block has a single class or no eligible patients; rule-only screener"
        ));
        return Ok((
            ScreenerModel::rule_only(config.rule.clone(), config.spec_target, config.prevalence),
            None,
        ));
    }

    let mut rows = ndarray::Array2::zeros((eligible.len(), FEATURE_NAMES.len()));
    for (i, (_, slice)) in eligible.iter().enumerate() {
        let features = crate::screener::window_features(slice, tiers)?;
        for (j, v) in features.iter().enumerate() {
            rows[[i, j]] = *v;
        }
    }
    let matrix = DesignMatrix {
        col_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
        row_ids: eligible.iter().map(|(p, _)| p.patient_id.clone()).collect(),
    };
    // Lightly ridge-penalized logistic fit over the six count features.
    let en_config = ENConfig {
        alpha: 0.0,
        lambda: Some(1e-4),
        seed: derive_seed(config.seed, &format!("screener:{window}")),
        ..config.en.clone()
    };
    let fit = fit_en(&matrix, &labels, &en_config)?;
    let probs = fit.predict_prob(&matrix)?;
    let calibration = calibrate_threshold(&probs, &labels, config.spec_target, config.grid_step)?;
    if calibration.degenerate {
        warnings.push(format!(
            "window {window}: degenerate calibration (threshold {} flags nobody)",
            calibration.threshold
        ));
    }
    if !calibration.target_met {
        warnings.push(format!(
            "window {window}: specificity target {} unreachable on the calibration grid",
            config.spec_target
        ));
    }

    let model = ScreenerModel {
        rule: config.rule.clone(),
        feature_names: matrix.col_names.clone(),
        intercept: fit.intercept,
        coefficients: matrix
            .col_names
            .iter()
            .map(|c| fit.coefficients[c])
            .collect(),
        threshold: calibration.threshold,
        spec_target: config.spec_target,
        prevalence: config.prevalence,
    };
    Ok((model, Some(calibration)))
}

/// Calibrate one screener per configured window on the designated block.
pub fn calibrate_for_windows(
    annotated: &[MessageRecord],
    assembly: &crate::corpus::BlockAssembly,
    tiers: &BTreeMap<String, Tier>,
    config: &AppConfig,
) -> Result<(Vec<WindowScreener>, Vec<String>)> {
    let calibration_block_id = config
        .calibration_block
        .clone()
        .or_else(|| config.blocks.first().map(|b| b.block_id.clone()))
        .ok_or_else(|| Error::invalid("no temporal blocks configured"))?;
    let calibration_block = assembly
        .blocks
        .iter()
        .find(|b| b.block.block_id == calibration_block_id)
        .ok_or_else(|| {
            Error::invalid(format!(
                "calibration block `{calibration_block_id}` missing"
            ))
        })?;
    let mut warnings = Vec::new();
    let mut screeners = Vec::new();
    let mut windows = config.windows.clone();
    windows.sort_unstable();
    for &window_days in &windows {
        let window = ScreeningWindow::new(window_days)?;
        let calib_eligible = eligible_patients(calibration_block, annotated, window)?;
        let (model, calibration) =
            fit_window_screener(&calib_eligible, tiers, config, window_days, &mut warnings)?;
        screeners.push(WindowScreener {
            window: window_days,
            model,
            calibration,
            calibration_block: calibration_block_id.clone(),
        });
    }
    Ok((screeners, warnings))
}

/// Run the windowed screening simulation over the temporal blocks.
///
/// The screener for each window is calibrated on the designated block
/// (default: the first) and evaluated on every block. Cells without
/// eligible patients are marked skipped.
pub fn run_simulation(
    annotated: &[MessageRecord],
    patients: &[PatientRecord],
    taxonomy: &Taxonomy,
    config: &AppConfig,
) -> Result<SimReport> {
    config.validate()?;
    let mut warnings = Vec::new();

    let cases: Vec<PatientRecord> = patients.iter().filter(|p| p.event).cloned().collect();
    let pool: Vec<PatientRecord> = patients.iter().filter(|p| !p.event).cloned().collect();
    if cases.is_empty() || pool.is_empty() {
        return Err(Error::SingleClass);
    }

    // Discovery on the globally matched cohort.
    let cohort_spec = crate::corpus::CohortSpec {
        seed: derive_seed(config.seed, "cohort"),
        ..config.cohort.clone()
    };
    let cohort = match_controls(&cases, &pool, &cohort_spec)?;
    if !cohort.shortfall.is_empty() {
        warnings.push(format!(
            "control matching shortfall in {} strata",
            cohort.shortfall.strata.len()
        ));
    }
    let discovery = run_discovery(annotated, &cohort, taxonomy, config)?;
    let tiers = discovery.tiers();

    // Temporal blocks with per-block 1:1 matched controls.
    let assembly = build_temporal_blocks(&cases, &pool, &config.blocks, &cohort_spec)?;
    if assembly.excluded_cases > 0 {
        warnings.push(format!(
            "{} cases fall outside every temporal block",
            assembly.excluded_cases
        ));
    }

    let (screeners, calib_warnings) = calibrate_for_windows(annotated, &assembly, &tiers, config)?;
    warnings.extend(calib_warnings);

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut window_summaries = Vec::new();

    for screener in &screeners {
        let window_days = screener.window;
        let window = ScreeningWindow::new(window_days)?;
        let model = &screener.model;

        let mut sens = Vec::new();
        let mut burdens = Vec::new();
        for block in &assembly.blocks {
            let eligible = eligible_patients(block, annotated, window)?;
            if eligible.is_empty() {
                skipped.push(SimSkip {
                    window: window_days,
                    block_id: block.block.block_id.clone(),
                    reason: "no eligible patients".into(),
                });
                continue;
            }
            let mut flags = Vec::with_capacity(eligible.len());
            let labels: Vec<bool> = eligible.iter().map(|(p, _)| p.event).collect();
            let mut n_messages = 0usize;
            for (_, slice) in &eligible {
                n_messages += slice.len();
                let (flag, _, _) = screen_patient(slice, &tiers, model)?;
                flags.push(flag);
            }
            let mut metrics = evaluate(&flags, &labels, config.prevalence)?;
            metrics.window = window_days;
            metrics.block_id = block.block.block_id.clone();
            metrics.n_messages = n_messages;
            if let Some(se) = metrics.sensitivity {
                sens.push(se);
            }
            burdens.push(metrics.alert_burden);
            cells.push(metrics);
        }
        window_summaries.push(WindowSummary {
            window: window_days,
            mean_sensitivity: (!sens.is_empty()).then(|| mean(&sens)),
            sd_sensitivity: (sens.len() >= 2).then(|| sample_sd(&sens)),
            mean_alert_burden: (!burdens.is_empty()).then(|| mean(&burdens)),
            sd_alert_burden: (burdens.len() >= 2).then(|| sample_sd(&burdens)),
        });
    }

    let cv_auc = if config.run_pipeline_comparison {
        let cmp = enlasso::compare_pipelines(
            annotated,
            &cohort,
            taxonomy,
            &TrigramEmbedder::default(),
            &CompareConfig {
                en: config.en.clone(),
                gnn: config.gnn.clone(),
                graph: config.graph,
                observation_days: config.scoring.observation_window_days,
                semantic_threshold: config.semantic_threshold,
                patient_knn: config.patient_knn,
                folds: config.en.cv_folds,
                seed: derive_seed(config.seed, "compare"),
            },
        )?;
        Some(
            cmp.into_iter()
                .map(|(k, v)| (k.as_str().to_string(), v))
                .collect(),
        )
    } else {
        None
    };

    cells.sort_by(|a, b| (a.window, &a.block_id).cmp(&(b.window, &b.block_id)));
    skipped.sort_by(|a, b| (a.window, &a.block_id).cmp(&(b.window, &b.block_id)));

    Ok(SimReport {
        cells,
        skipped,
        window_summaries,
        screeners,
        en_coefficients: discovery.en_fit.coefficients.clone(),
        score_table: discovery.score_table,
        proximity: discovery.proximity,
        cv_auc,
        excluded_cases: assembly.excluded_cases,
        warnings,
        config_hash: config.hash(),
        seed: config.seed,
    })
}

/// Generate the synthetic cohort from the config, annotate it with the
/// lexicon backend seeded from the synthetic taxonomy, and simulate.
pub fn simulate_synthetic(config: &AppConfig) -> Result<(SimReport, SyntheticTruth)> {
    let (patients, messages, truth) = generate_synthetic_cohort(&config.synthetic)?;
    let taxonomy = synthetic_taxonomy(config.synthetic.vocab_size);
    let mut backend = crate::taxonomy::LexiconBackend::with_seed(taxonomy.clone());
    let report = simulate_with_backend(&messages, &patients, &taxonomy, &mut backend, config)?;
    Ok((report, truth))
}

/// Annotate through the given backend, prune, and run the simulation.
pub fn simulate_with_backend(
    messages: &[MessageRecord],
    patients: &[PatientRecord],
    taxonomy: &Taxonomy,
    backend: &mut dyn AnnotatorBackend,
    config: &AppConfig,
) -> Result<SimReport> {
    let annotated = annotate_messages(messages, taxonomy, backend, &config.taxonomy)?;
    let pruned = prune_annotations(&annotated, config.min_relevance)?;
    run_simulation(&pruned, patients, taxonomy, config)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Emitter {
    out_dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn write(&mut self, name: &str, body: String) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header)
            .and_then(|_| rows.iter().try_for_each(|r| writer.write_record(r)))
            .map_err(|e| Error::invalid(format!("csv {name}: {e}")))?;
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv {name}: {e}")))?;
        self.write(name, String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    files: &'a [String],
    config_hash: &'a str,
    seed: u64,
}

/// Write metrics.csv, summary.json, the scoring tables and the per-figure
/// plot data files, plus a manifest listing everything. Output is a pure
/// function of the report: re-emitting the same report is byte-identical.
pub fn emit_report(report: &SimReport, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut em = Emitter {
        out_dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };

    em.write_csv(
        "metrics.csv",
        &[
            "window",
            "block_id",
            "n_patients",
            "n_messages",
            "tp",
            "fp",
            "tn",
            "fn",
            "sensitivity",
            "specificity",
            "ppv_adj",
            "npv_adj",
            "f1",
            "alert_burden",
        ],
        report
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.window.to_string(),
                    c.block_id.clone(),
                    c.n_patients.to_string(),
                    c.n_messages.to_string(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.tn.to_string(),
                    c.fn_.to_string(),
                    opt(c.sensitivity),
                    opt(c.specificity),
                    opt(c.ppv_adj),
                    opt(c.npv_adj),
                    opt(c.f1),
                    c.alert_burden.to_string(),
                ]
            })
            .collect(),
    )?;

    em.write_csv(
        "scores.csv",
        &[
            "sub2_id",
            "label",
            "gnn_delta",
            "en_perm",
            "event_assoc",
            "pct7",
            "pct30",
            "stt",
            "composite",
            "tier",
        ],
        report
            .score_table
            .iter()
            .map(|r| {
                vec![
                    r.sub2_id.clone(),
                    r.label.clone(),
                    r.gnn_delta.to_string(),
                    r.en_perm.to_string(),
                    r.event_assoc.to_string(),
                    r.pct7.to_string(),
                    r.pct30.to_string(),
                    r.stt.to_string(),
                    r.composite.to_string(),
                    r.tier.to_string(),
                ]
            })
            .collect(),
    )?;

    let curve_rows = |with_tier: bool| -> Vec<Vec<String>> {
        let tiers: BTreeMap<&str, Tier> = report
            .score_table
            .iter()
            .map(|r| (r.sub2_id.as_str(), r.tier))
            .collect();
        report
            .proximity
            .iter()
            .flat_map(|(sub2, prox)| {
                let tier = tiers.get(sub2.as_str()).copied();
                prox.curve.iter().map(move |(&d, &p)| {
                    let mut row = vec![sub2.clone()];
                    if with_tier {
                        row.push(tier.map(|t| t.to_string()).unwrap_or_default());
                    }
                    row.push(d.to_string());
                    row.push(p.to_string());
                    row
                })
            })
            .collect()
    };

    em.write_csv(
        "proximity_curves.csv",
        &["sub2_id", "day_offset", "probability"],
        curve_rows(false),
    )?;
    em.write_csv(
        "fig3_curves.csv",
        &["sub2_id", "tier", "day_offset", "probability"],
        curve_rows(true),
    )?;

    em.write_csv(
        "fig4_rankings.csv",
        &[
            "sub2_id",
            "label",
            "tier",
            "event_assoc",
            "stt",
            "composite",
        ],
        report
            .score_table
            .iter()
            .map(|r| {
                vec![
                    r.sub2_id.clone(),
                    r.label.clone(),
                    r.tier.to_string(),
                    r.event_assoc.to_string(),
                    r.stt.to_string(),
                    r.composite.to_string(),
                ]
            })
            .collect(),
    )?;

    em.write_csv(
        "fig5_sensitivity_burden.csv",
        &["window", "block_id", "sensitivity", "alert_burden"],
        report
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.window.to_string(),
                    c.block_id.clone(),
                    opt(c.sensitivity),
                    c.alert_burden.to_string(),
                ]
            })
            .collect(),
    )?;

    let perm_by_id: BTreeMap<&str, f64> = report
        .score_table
        .iter()
        .map(|r| (r.sub2_id.as_str(), r.en_perm))
        .collect();
    em.write_csv(
        "en_coefficients.csv",
        &["column", "coefficient", "importance"],
        report
            .en_coefficients
            .iter()
            .map(|(col, coef)| {
                vec![
                    col.clone(),
                    coef.to_string(),
                    perm_by_id
                        .get(col.as_str())
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                ]
            })
            .collect(),
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        config_hash: &'a str,
        seed: u64,
        excluded_cases: usize,
        window_summaries: &'a [WindowSummary],
        screeners: &'a [WindowScreener],
        skipped: &'a [SimSkip],
        warnings: &'a [String],
        cv_auc: &'a Option<BTreeMap<String, CvOutcome>>,
        n_cells: usize,
    }
    let summary = serde_json::to_string_pretty(&Summary {
        config_hash: &report.config_hash,
        seed: report.seed,
        excluded_cases: report.excluded_cases,
        window_summaries: &report.window_summaries,
        screeners: &report.screeners,
        skipped: &report.skipped,
        warnings: &report.warnings,
        cv_auc: &report.cv_auc,
        n_cells: report.cells.len(),
    })
    .expect("summary serializes");
    em.write("summary.json", summary)?;

    let report_json = serde_json::to_string_pretty(report).expect("sim report serializes");
    em.write("simreport.json", report_json)?;

    em.files.sort();
    let manifest = serde_json::to_string_pretty(&Manifest {
        status: "complete",
        files: &em.files,
        config_hash: &report.config_hash,
        seed: report.seed,
    })
    .expect("manifest serializes");
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let mut files = em.files;
    files.push("manifest.json".into());
    files.sort();
    Ok(files)
}

/// Mark an output directory as incomplete after a failed run.
pub fn emit_incomplete_manifest(out_dir: &Path, error: &str) {
    #[derive(Serialize)]
    struct Incomplete<'a> {
        status: &'a str,
        error: &'a str,
    }
    if std::fs::create_dir_all(out_dir).is_ok() {
        let body = serde_json::to_string_pretty(&Incomplete {
            status: "incomplete",
            error,
        })
        .expect("manifest serializes");
        let _ = std::fs::write(out_dir.join("manifest.json"), body);
    }
}
