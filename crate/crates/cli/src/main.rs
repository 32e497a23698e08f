//! Command-line surface binding the screening pipeline end to end.
//!
//! Exit codes: 0 success, 1 data/config errors, 2 usage errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use prodrome_core::config::AppConfig;
use prodrome_core::corpus::{
    build_temporal_blocks, extract_window, load_corpus, load_messages, match_controls, Cohort,
    CohortSpec, ScreeningWindow,
};
use prodrome_core::embed::TrigramEmbedder;
use prodrome_core::enlasso::{fit_en, permutation_importance, symptom_count_matrix, ENConfig};
use prodrome_core::gnn;
use prodrome_core::hetgraph::{
    add_patient_similarity_edges, add_semantic_edges, build_graph, centrality, prune_annotations,
    FeatureVocab,
};
use prodrome_core::scoring::{temporal_proximity, Tier};
use prodrome_core::simulator::{
    self, calibrate_for_windows, emit_incomplete_manifest, emit_report, WindowScreener,
};
use prodrome_core::stats::derive_seed;
use prodrome_core::taxonomy::{
    annotate_messages, seed_taxonomy, update_taxonomy, AnnotatorBackend, BackendMessage,
    HttpBackend, LexiconBackend, ScriptedBackend, Taxonomy,
};

#[derive(Parser)]
#[command(
    name = "prodrome",
    version,
    about = "Passive-surveillance risk screening pipeline"
)]
struct Cli {
    /// JSON config file; the bundled defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config override as key.path=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Annotation backend: lexicon, scripted:<dir> or http:<url>.
    #[arg(long, global = true, default_value = "lexicon")]
    backend: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load NDJSON corpora and assemble the matched cohort.
    Ingest {
        #[arg(long)]
        messages: PathBuf,
        #[arg(long)]
        patients: PathBuf,
    },
    /// Bootstrap a taxonomy from a seed batch through the backend.
    TaxonomySeed {
        #[arg(long)]
        messages: PathBuf,
    },
    /// Stream messages in batches through the backend, applying changes.
    TaxonomyUpdate {
        #[arg(long)]
        messages: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Annotate messages with SUB2 topics.
    Annotate {
        #[arg(long)]
        messages: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Build the heterogeneous graph and dump edge lists.
    Graph {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Train the message-passing network and write a checkpoint.
    TrainGnn {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Fit the elastic-net model and export coefficients + importance.
    FitEn {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Fuse attributions and proximity into the scored symptom table.
    Score {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_name = "EN_FIT_JSON")]
        en_fit: PathBuf,
    },
    /// Calibrate per-window screeners on the designated block.
    Calibrate {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        patients: PathBuf,
        #[arg(long, value_name = "SCORES_CSV")]
        scores: PathBuf,
    },
    /// Screen a cohort with a calibrated screener for one window.
    Screen {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_name = "SCREENERS_JSON")]
        screeners: PathBuf,
        #[arg(long)]
        window: u32,
    },
    /// Run the full synthetic pipeline from config alone.
    Simulate,
    /// Print the summary table from a finished output directory.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version print and exit cleanly; everything else is usage
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<AppConfig> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    for assignment in &cli.overrides {
        config = config.with_override(assignment)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.synthetic.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn make_backend(
    spec: &str,
    taxonomy: Option<&Taxonomy>,
) -> anyhow::Result<Box<dyn AnnotatorBackend>> {
    if spec == "lexicon" {
        return Ok(Box::new(match taxonomy {
            Some(tax) => LexiconBackend::with_seed(tax.clone()),
            None => LexiconBackend::new(),
        }));
    }
    if let Some(dir) = spec.strip_prefix("scripted:") {
        return Ok(Box::new(ScriptedBackend::new(dir)));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        return Ok(Box::new(HttpBackend::new(url.trim_start_matches("//"))));
    }
    Err(anyhow!(
        "unknown backend `{spec}`; expected lexicon, scripted:<dir> or http:<url>"
    ))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    let path = dir.join(name);
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, body).with_context(|| format!("write {}", path.display()))?;
    Ok(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let body = std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parse {}", path.display()))
}

fn write_csv(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: Vec<Vec<String>>,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut writer =
        csv::Writer::from_path(&path).with_context(|| format!("write {}", path.display()))?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(path)
}

fn load_annotated(
    path: &Path,
    config: &AppConfig,
) -> anyhow::Result<Vec<prodrome_core::corpus::MessageRecord>> {
    let messages = load_messages(path)?;
    Ok(prune_annotations(&messages, config.min_relevance)?)
}

fn tiers_from_scores_csv(path: &Path) -> anyhow::Result<BTreeMap<String, Tier>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let sub2_idx = headers
        .iter()
        .position(|h| h == "sub2_id")
        .ok_or_else(|| anyhow!("{}: no sub2_id column", path.display()))?;
    let tier_idx = headers
        .iter()
        .position(|h| h == "tier")
        .ok_or_else(|| anyhow!("{}: no tier column", path.display()))?;
    let mut tiers = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let tier: Tier =
            serde_json::from_value(serde_json::Value::String(record[tier_idx].to_string()))
                .with_context(|| format!("bad tier `{}`", &record[tier_idx]))?;
        tiers.insert(record[sub2_idx].to_string(), tier);
    }
    Ok(tiers)
}

fn ndjson_out(dir: &Path, name: &str, lines: Vec<String>) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n")
        .with_context(|| format!("write {}", path.display()))?;
    Ok(path)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Ingest { messages, patients } => {
            let corpus = load_corpus(messages, patients)?;
            let cases: Vec<_> = corpus
                .patients
                .iter()
                .filter(|p| p.event)
                .cloned()
                .collect();
            let pool: Vec<_> = corpus
                .patients
                .iter()
                .filter(|p| !p.event)
                .cloned()
                .collect();
            let spec = CohortSpec {
                seed: derive_seed(config.seed, "cohort"),
                ..config.cohort.clone()
            };
            let cohort = match_controls(&cases, &pool, &spec)?;
            let assembly = build_temporal_blocks(&cases, &pool, &config.blocks, &spec)?;
            write_json(&out, "cohort.json", &cohort)?;
            write_json(&out, "shortfall.json", &cohort.shortfall)?;
            write_json(&out, "blocks.json", &assembly)?;
            println!(
                "loaded {} messages, {} patients ({} cases); cohort of {} written to {}",
                corpus.messages.len(),
                corpus.patients.len(),
                cases.len(),
                cohort.patients.len(),
                out.display()
            );
        }
        Command::TaxonomySeed { messages } => {
            let corpus = load_messages(messages)?;
            let batch: Vec<BackendMessage> = corpus
                .iter()
                .take(config.taxonomy.seed_batch_size)
                .map(BackendMessage::from)
                .collect();
            let mut backend = make_backend(&cli.backend, None)?;
            let taxonomy = seed_taxonomy(&batch, backend.as_mut(), &config.taxonomy)?;
            write_json(&out, "taxonomy.json", &taxonomy)?;
            println!(
                "seeded taxonomy v{} with {} nodes",
                taxonomy.version,
                taxonomy.nodes.len()
            );
        }
        Command::TaxonomyUpdate { messages, taxonomy } => {
            let corpus = load_messages(messages)?;
            let mut tax: Taxonomy = read_json(taxonomy)?;
            let mut backend = make_backend(&cli.backend, Some(&tax))?;
            let mut total_changes = 0;
            for (index, chunk) in corpus
                .chunks(config.taxonomy.update_batch_size.max(1))
                .enumerate()
            {
                let batch: Vec<BackendMessage> = chunk.iter().map(BackendMessage::from).collect();
                let (next, changes) = update_taxonomy(&tax, &batch, backend.as_mut(), index)?;
                total_changes += changes.len();
                tax = next;
            }
            write_json(&out, "taxonomy.json", &tax)?;
            println!(
                "applied {total_changes} changes; taxonomy now v{} with {} nodes",
                tax.version,
                tax.nodes.len()
            );
        }
        Command::Annotate { messages, taxonomy } => {
            let corpus = load_messages(messages)?;
            let tax: Taxonomy = read_json(taxonomy)?;
            let mut backend = make_backend(&cli.backend, Some(&tax))?;
            let annotated = annotate_messages(&corpus, &tax, backend.as_mut(), &config.taxonomy)?;
            let lines: Vec<String> = annotated
                .iter()
                .map(|m| serde_json::to_string(m).expect("message serializes"))
                .collect();
            let n_labeled = annotated
                .iter()
                .filter(|m| !m.annotations.is_empty())
                .count();
            ndjson_out(&out, "annotated.ndjson", lines)?;
            println!("annotated {n_labeled}/{} messages", annotated.len());
        }
        Command::Graph {
            annotated,
            cohort,
            taxonomy,
        } => {
            let messages = load_annotated(annotated, &config)?;
            let cohort: Cohort = read_json(cohort)?;
            let tax: Taxonomy = read_json(taxonomy)?;
            let provider = TrigramEmbedder::default();
            let vocab = FeatureVocab::from_patients(&cohort.patients);
            let windowed = simulator::observation_messages(
                &messages,
                &cohort,
                config.scoring.observation_window_days,
            )?;
            let mut graph =
                build_graph(&windowed, &cohort, &tax, &vocab, &provider, &config.graph)?;
            add_semantic_edges(&mut graph, &provider, config.semantic_threshold)?;
            if graph.patients.len() >= 2 {
                add_patient_similarity_edges(&mut graph, config.patient_knn)?;
            }
            let gdir = out.join("graph");
            write_csv(
                &gdir,
                "patient_symptom.csv",
                &["patient_id", "sub2_id", "count", "recency"],
                graph
                    .patient_symptom
                    .iter()
                    .map(|&(p, s, attr)| {
                        vec![
                            graph.patients[p].patient_id.clone(),
                            graph.symptoms[s].sub2_id.clone(),
                            attr.count.to_string(),
                            attr.recency.to_string(),
                        ]
                    })
                    .collect(),
            )?;
            write_csv(
                &gdir,
                "patient_comorbidity.csv",
                &["patient_id", "code"],
                graph
                    .patient_comorbidity
                    .iter()
                    .map(|&(p, c)| {
                        vec![
                            graph.patients[p].patient_id.clone(),
                            graph.comorbidities[c].code.clone(),
                        ]
                    })
                    .collect(),
            )?;
            write_csv(
                &gdir,
                "patient_patient.csv",
                &["patient_a", "patient_b", "weight"],
                graph
                    .patient_patient
                    .iter()
                    .map(|&(a, b, w)| {
                        vec![
                            graph.patients[a].patient_id.clone(),
                            graph.patients[b].patient_id.clone(),
                            w.to_string(),
                        ]
                    })
                    .collect(),
            )?;
            write_csv(
                &gdir,
                "symptom_symptom.csv",
                &["sub2_a", "sub2_b", "weight"],
                graph
                    .symptom_symptom
                    .iter()
                    .map(|&(a, b, w)| {
                        vec![
                            graph.symptoms[a].sub2_id.clone(),
                            graph.symptoms[b].sub2_id.clone(),
                            w.to_string(),
                        ]
                    })
                    .collect(),
            )?;
            write_csv(
                &gdir,
                "centrality.csv",
                &["sub2_id", "score"],
                centrality(&graph)
                    .iter()
                    .map(|(k, v)| vec![k.clone(), v.to_string()])
                    .collect(),
            )?;
            println!(
                "graph: {} patients, {} symptoms, {} comorbidities; edge lists in {}",
                graph.patients.len(),
                graph.symptoms.len(),
                graph.comorbidities.len(),
                gdir.display()
            );
        }
        Command::TrainGnn {
            annotated,
            cohort,
            taxonomy,
        } => {
            let messages = load_annotated(annotated, &config)?;
            let cohort: Cohort = read_json(cohort)?;
            let tax: Taxonomy = read_json(taxonomy)?;
            let provider = TrigramEmbedder::default();
            let vocab = FeatureVocab::from_patients(&cohort.patients);
            let windowed = simulator::observation_messages(
                &messages,
                &cohort,
                config.scoring.observation_window_days,
            )?;
            let mut graph =
                build_graph(&windowed, &cohort, &tax, &vocab, &provider, &config.graph)?;
            add_semantic_edges(&mut graph, &provider, config.semantic_threshold)?;
            if graph.patients.len() >= 2 {
                add_patient_similarity_edges(&mut graph, config.patient_knn)?;
            }
            let labels = graph.labels();
            let gnn_config = gnn::TrainConfig {
                seed: derive_seed(config.seed, "gnn"),
                ..config.gnn.clone()
            };
            let (model, history) = gnn::train(&graph, &labels, &gnn_config)?;
            write_json(&out, "model.json", &model.to_checkpoint())?;
            write_csv(
                &out,
                "history.csv",
                &["epoch", "loss"],
                history
                    .losses
                    .iter()
                    .enumerate()
                    .map(|(i, l)| vec![i.to_string(), l.to_string()])
                    .collect(),
            )?;
            println!(
                "trained {} epochs (early stop: {}); final loss {:.6}",
                history.epochs_run,
                history.stopped_early,
                history.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::FitEn { annotated, cohort } => {
            let messages = load_annotated(annotated, &config)?;
            let cohort: Cohort = read_json(cohort)?;
            let matrix =
                symptom_count_matrix(&messages, &cohort, config.scoring.observation_window_days)?;
            let labels_by_id = cohort.labels();
            let y: Vec<bool> = matrix.row_ids.iter().map(|id| labels_by_id[id]).collect();
            let en_config = ENConfig {
                seed: derive_seed(config.seed, "en"),
                ..config.en.clone()
            };
            let fit = fit_en(&matrix, &y, &en_config)?;
            let importance = permutation_importance(&fit, &matrix, &y, &en_config)?;
            write_json(&out, "en_fit.json", &fit)?;
            write_csv(
                &out,
                "en_coefficients.csv",
                &["column", "coefficient", "importance"],
                fit.coefficients
                    .iter()
                    .map(|(col, coef)| {
                        vec![col.clone(), coef.to_string(), importance[col].to_string()]
                    })
                    .collect(),
            )?;
            println!(
                "elastic net: lambda {}, {} nonzero of {} columns, converged {}",
                fit.lambda,
                fit.coefficients.values().filter(|c| **c != 0.0).count(),
                fit.coefficients.len(),
                fit.converged
            );
        }
        Command::Score {
            annotated,
            cohort,
            taxonomy,
            model,
            en_fit,
        } => {
            let messages = load_annotated(annotated, &config)?;
            let cohort: Cohort = read_json(cohort)?;
            let tax: Taxonomy = read_json(taxonomy)?;
            let checkpoint: gnn::ModelCheckpoint = read_json(model)?;
            let model = gnn::HeteroModel::from_checkpoint(checkpoint)?;
            let fit: prodrome_core::enlasso::FitResult = read_json(en_fit)?;

            let provider = TrigramEmbedder::default();
            let vocab = FeatureVocab::from_patients(&cohort.patients);
            let windowed = simulator::observation_messages(
                &messages,
                &cohort,
                config.scoring.observation_window_days,
            )?;
            let mut graph =
                build_graph(&windowed, &cohort, &tax, &vocab, &provider, &config.graph)?;
            add_semantic_edges(&mut graph, &provider, config.semantic_threshold)?;
            if graph.patients.len() >= 2 {
                add_patient_similarity_edges(&mut graph, config.patient_knn)?;
            }
            let labels = graph.labels();
            let deltas = gnn::event_deltas(&model, &graph, &labels)?;

            let matrix =
                symptom_count_matrix(&windowed, &cohort, config.scoring.observation_window_days)?;
            let labels_by_id = cohort.labels();
            let y: Vec<bool> = matrix.row_ids.iter().map(|id| labels_by_id[id]).collect();
            let en_config = ENConfig {
                seed: derive_seed(config.seed, "en"),
                ..config.en.clone()
            };
            let perms = permutation_importance(&fit, &matrix, &y, &en_config)?;

            let anchors: BTreeMap<String, chrono::NaiveDate> = cohort
                .cases()
                .filter_map(|p| p.anchor_date.map(|d| (p.patient_id.clone(), d)))
                .collect();
            let proximity = temporal_proximity(&messages, &anchors, &config.scoring);
            let label_map: BTreeMap<String, String> = graph
                .symptoms
                .iter()
                .map(|s| (s.sub2_id.clone(), s.label.clone()))
                .collect();
            let table = prodrome_core::scoring::build_score_table(
                &deltas,
                &perms,
                &proximity,
                &label_map,
                &config.scoring,
            )?;
            write_csv(
                &out,
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
                table
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
            write_csv(
                &out,
                "proximity_curves.csv",
                &["sub2_id", "day_offset", "probability"],
                proximity
                    .iter()
                    .flat_map(|(sub2, prox)| {
                        prox.curve
                            .iter()
                            .map(move |(&d, &p)| vec![sub2.clone(), d.to_string(), p.to_string()])
                    })
                    .collect(),
            )?;
            println!("scored {} symptoms", table.len());
        }
        Command::Calibrate {
            annotated,
            patients,
            scores,
        } => {
            let messages = load_annotated(annotated, &config)?;
            let all_patients = prodrome_core::corpus::load_patients(patients)?;
            let tiers = tiers_from_scores_csv(scores)?;
            let cases: Vec<_> = all_patients.iter().filter(|p| p.event).cloned().collect();
            let pool: Vec<_> = all_patients.iter().filter(|p| !p.event).cloned().collect();
            let spec = CohortSpec {
                seed: derive_seed(config.seed, "cohort"),
                ..config.cohort.clone()
            };
            let assembly = build_temporal_blocks(&cases, &pool, &config.blocks, &spec)?;
            let (screeners, warnings) =
                calibrate_for_windows(&messages, &assembly, &tiers, &config)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            write_json(&out, "screeners.json", &screeners)?;
            for s in &screeners {
                println!(
                    "window {:>3}d: threshold {:.2}{}",
                    s.window,
                    s.model.threshold,
                    s.calibration
                        .as_ref()
                        .map(|c| format!(
                            " (calibration Se {:.3}, Sp {:.3})",
                            c.sensitivity, c.specificity
                        ))
                        .unwrap_or_else(|| " (rule-only)".into())
                );
            }
        }
        Command::Screen {
            annotated,
            cohort,
            screeners,
            window,
        } => {
            let messages = load_annotated(annotated, &config)?;
            let cohort: Cohort = read_json(cohort)?;
            let screeners: Vec<WindowScreener> = read_json(screeners)?;
            let screener = screeners
                .iter()
                .find(|s| s.window == *window)
                .ok_or_else(|| anyhow!("no calibrated screener for window {window}"))?;
            let tiers = tiers_from_scores_csv(&cli.out.join("scores.csv")).map_err(|_| {
                anyhow!(
                    "scores.csv with tiers required in {} (run `score` first)",
                    cli.out.display()
                )
            })?;
            let win = ScreeningWindow::new(*window)?;
            let mut rows = Vec::new();
            let mut flagged = 0usize;
            for p in &cohort.patients {
                let slice = extract_window(p, &messages, win)?;
                if slice.is_empty() {
                    continue;
                }
                let (flag, prob, reason) =
                    prodrome_core::screener::screen_patient(&slice, &tiers, &screener.model)?;
                flagged += flag as usize;
                rows.push(vec![
                    p.patient_id.clone(),
                    flag.to_string(),
                    prob.to_string(),
                    serde_json::to_value(reason)?
                        .as_str()
                        .unwrap_or("none")
                        .to_string(),
                ]);
            }
            let n = rows.len();
            write_csv(
                &out,
                "flags.csv",
                &["patient_id", "flag", "prob", "reason"],
                rows,
            )?;
            println!("screened {n} eligible patients, flagged {flagged}");
        }
        Command::Simulate => {
            let result = simulator::simulate_synthetic(&config).and_then(|(report, truth)| {
                emit_report(&report, &out)?;
                write_json(&out, "truth.json", &truth)
                    .map_err(|e| prodrome_core::Error::invalid(e.to_string()))?;
                Ok(report)
            });
            match result {
                Ok(report) => {
                    println!(
                        "simulation complete: {} cells, {} skipped; outputs in {}",
                        report.cells.len(),
                        report.skipped.len(),
                        out.display()
                    );
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                }
                Err(err) => {
                    emit_incomplete_manifest(&out, &err.to_string());
                    return Err(err.into());
                }
            }
        }
        Command::Report { dir } => {
            let summary: serde_json::Value = read_json(&dir.join("summary.json"))?;
            let metrics_path = dir.join("metrics.csv");
            let mut reader = csv::Reader::from_path(&metrics_path)
                .with_context(|| format!("read {}", metrics_path.display()))?;
            println!(
                "config {}  seed {}",
                summary["config_hash"].as_str().unwrap_or("?"),
                summary["seed"]
            );
            println!(
                "{:>6} {:>9} {:>9} {:>12} {:>12} {:>8} {:>12}",
                "window", "block", "patients", "sensitivity", "specificity", "ppv", "burden"
            );
            for record in reader.records() {
                let r = record?;
                println!(
                    "{:>6} {:>9} {:>9} {:>12} {:>12} {:>8} {:>12}",
                    &r[0], &r[1], &r[2], &r[8], &r[9], &r[10], &r[13]
                );
            }
            if let Some(warnings) = summary["warnings"].as_array() {
                for w in warnings {
                    println!("warning: {}", w.as_str().unwrap_or(""));
                }
            }
        }
    }
    Ok(())
}
