//! Elastic-net / LASSO logistic regression via cyclic coordinate descent on
//! the IRLS quadratic majorization, permutation importance, ROC AUC, and the
//! cross-validated comparison of the three pipeline variants.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_window, Cohort, MessageRecord, ScreeningWindow};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::gnn::{self, TrainConfig};
use crate::hetgraph::{
    add_patient_similarity_edges, add_semantic_edges, build_graph, FeatureVocab, GraphConfig,
};
use crate::stats::{derive_seed, logit, sigmoid};
use crate::taxonomy::Taxonomy;

/// Patients-by-features matrix with named columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub col_names: Vec<String>,
    pub rows: Array2<f64>,
    pub row_ids: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn subset_rows(&self, indices: &[usize]) -> DesignMatrix {
        let rows = Array2::from_shape_fn((indices.len(), self.n_cols()), |(i, j)| {
            self.rows[[indices[i], j]]
        });
        DesignMatrix {
            col_names: self.col_names.clone(),
            rows,
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    /// Append one named column aligned by row id; missing ids error.
    pub fn with_column(&self, name: &str, values: &BTreeMap<String, f64>) -> Result<DesignMatrix> {
        if self.col_names.iter().any(|c| c == name) {
            return Err(Error::invalid(format!("duplicate column `{name}`")));
        }
        let mut rows = Array2::zeros((self.n_rows(), self.n_cols() + 1));
        for i in 0..self.n_rows() {
            for j in 0..self.n_cols() {
                rows[[i, j]] = self.rows[[i, j]];
            }
            let v = values.get(&self.row_ids[i]).ok_or_else(|| {
                Error::KeyMismatch(format!("no `{name}` value for row `{}`", self.row_ids[i]))
            })?;
            rows[[i, self.n_cols()]] = *v;
        }
        let mut col_names = self.col_names.clone();
        col_names.push(name.to_string());
        Ok(DesignMatrix {
            col_names,
            rows,
            row_ids: self.row_ids.clone(),
        })
    }
}

/// Per-SUB2 message counts within the observation window before each
/// patient's anchor.
pub fn symptom_count_matrix(
    messages: &[MessageRecord],
    cohort: &Cohort,
    observation_days: u32,
) -> Result<DesignMatrix> {
    let window = ScreeningWindow::new(observation_days)?;
    let mut sub2_ids: Vec<String> = messages
        .iter()
        .flat_map(|m| m.annotations.iter().map(|a| a.sub2_id.clone()))
        .collect();
    sub2_ids.sort();
    sub2_ids.dedup();
    let col_idx: BTreeMap<&str, usize> = sub2_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut patients: Vec<&crate::corpus::PatientRecord> = cohort.patients.iter().collect();
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    let mut rows = Array2::zeros((patients.len(), sub2_ids.len()));
    for (i, p) in patients.iter().enumerate() {
        for m in extract_window(p, messages, window)? {
            for a in &m.annotations {
                if let Some(&j) = col_idx.get(a.sub2_id.as_str()) {
                    rows[[i, j]] += 1.0;
                }
            }
        }
    }
    Ok(DesignMatrix {
        col_names: sub2_ids,
        rows,
        row_ids: patients.iter().map(|p| p.patient_id.clone()).collect(),
    })
}

/// Demographics one-hot plus comorbidity multi-hot, appended to a matrix.
pub fn append_demographics(
    dm: &DesignMatrix,
    cohort: &Cohort,
    vocab: &FeatureVocab,
) -> Result<DesignMatrix> {
    let by_id: BTreeMap<&str, &crate::corpus::PatientRecord> = cohort
        .patients
        .iter()
        .map(|p| (p.patient_id.as_str(), p))
        .collect();
    let mut names: Vec<String> = crate::corpus::AgeBand::all()
        .iter()
        .map(|b| format!("age:{b}"))
        .collect();
    names.extend(vocab.races.iter().map(|v| format!("race:{v}")));
    names.extend(vocab.ethnicities.iter().map(|v| format!("ethnicity:{v}")));
    names.extend(vocab.sexes.iter().map(|v| format!("sex:{v}")));
    names.extend(
        vocab
            .marital_statuses
            .iter()
            .map(|v| format!("marital:{v}")),
    );
    names.extend(
        vocab
            .comorbidities
            .iter()
            .map(|v| format!("comorbidity:{v}")),
    );

    let p0 = dm.n_cols();
    let mut rows = Array2::zeros((dm.n_rows(), p0 + names.len()));
    for i in 0..dm.n_rows() {
        for j in 0..p0 {
            rows[[i, j]] = dm.rows[[i, j]];
        }
        let patient = by_id
            .get(dm.row_ids[i].as_str())
            .ok_or_else(|| Error::KeyMismatch(format!("row `{}` not in cohort", dm.row_ids[i])))?;
        for (j, v) in vocab.patient_features(patient).into_iter().enumerate() {
            rows[[i, p0 + j]] = v;
        }
    }
    let mut col_names = dm.col_names.clone();
    col_names.extend(names);
    Ok(DesignMatrix {
        col_names,
        rows,
        row_ids: dm.row_ids.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ENConfig {
    /// Elastic-net mixing: 1 is the LASSO, 0 pure ridge.
    pub alpha: f64,
    /// Fixed penalty; when absent, chosen by cross-validated deviance.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub tol: f64,
    pub max_iterations: usize,
    pub cv_folds: usize,
    pub permutation_repeats: usize,
    pub seed: u64,
}

impl Default for ENConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: None,
            n_lambdas: 50,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_iterations: 10_000,
            cv_folds: 5,
            permutation_repeats: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Intercept and per-column coefficients on the original data scale.
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub lambda: f64,
    /// Final penalized objective on the standardized problem.
    pub objective: f64,
    pub converged: bool,
    /// Objective after each outer reweighting step (non-increasing).
    pub objective_history: Vec<f64>,
    pub col_names: Vec<String>,
    pub std_coefs: Vec<f64>,
    pub std_intercept: f64,
    pub col_means: Vec<f64>,
    pub col_sds: Vec<f64>,
}

impl FitResult {
    pub fn predict_prob(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        if x.col_names != self.col_names {
            return Err(Error::KeyMismatch(
                "design matrix columns differ from fit".into(),
            ));
        }
        Ok((0..x.n_rows())
            .map(|i| {
                let eta: f64 = self.std_intercept
                    + (0..x.n_cols())
                        .map(|j| {
                            if self.col_sds[j] > 0.0 {
                                self.std_coefs[j] * (x.rows[[i, j]] - self.col_means[j])
                                    / self.col_sds[j]
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>();
                sigmoid(eta)
            })
            .collect())
    }
}

/// Soft-thresholding operator S(z, g) = sign(z) * max(|z| - g, 0).
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn standardize(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    let mut xs = Array2::zeros((x.nrows(), x.ncols()));
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        means.push(mean);
        sds.push(sd);
        if sd > 0.0 {
            for i in 0..x.nrows() {
                xs[[i, j]] = (x[[i, j]] - mean) / sd;
            }
        }
    }
    (xs, means, sds)
}

/// Penalized logistic objective on standardized data:
/// (1/n) sum log(1+exp(eta)) - y*eta + lambda*(alpha*|b|_1 + (1-alpha)/2*|b|_2^2)
pub fn en_objective(
    xs: &Array2<f64>,
    y: &[f64],
    beta0: f64,
    beta: &Array1<f64>,
    lambda: f64,
    alpha: f64,
) -> f64 {
    let n = xs.nrows() as f64;
    let eta = xs.dot(beta) + beta0;
    let loss: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) - y*e, stable for large |e|
            let log1pe = if e > 30.0 { e } else { e.exp().ln_1p() };
            log1pe - yi * e
        })
        .sum::<f64>()
        / n;
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    loss + lambda * (alpha * l1 + (1.0 - alpha) / 2.0 * l2)
}

struct CdFit {
    beta0: f64,
    beta: Array1<f64>,
    objective: f64,
    converged: bool,
    history: Vec<f64>,
}

/// Coordinate descent with IRLS reweighting and a step-halving safeguard
/// that keeps the true objective non-increasing across outer steps.
fn fit_standardized(
    xs: &Array2<f64>,
    y: &[f64],
    alpha: f64,
    lambda: f64,
    tol: f64,
    max_cycles: usize,
    warm: Option<(f64, Array1<f64>)>,
) -> CdFit {
    let n = xs.nrows();
    let p = xs.ncols();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;

    let (mut beta0, mut beta) =
        warm.unwrap_or_else(|| (logit(y_mean.clamp(1e-6, 1.0 - 1e-6)), Array1::zeros(p)));

    let mut objective = en_objective(xs, y, beta0, &beta, lambda, alpha);
    let mut history = vec![objective];
    let mut cycles_used = 0usize;
    let mut converged = false;

    for _outer in 0..100 {
        // IRLS working response
        let eta = xs.dot(&beta) + beta0;
        let mut w = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let pi = sigmoid(eta[i]).clamp(1e-5, 1.0 - 1e-5);
            let wi = (pi * (1.0 - pi)).max(1e-5);
            w.push(wi);
            z.push(eta[i] + (y[i] - pi) / wi);
        }
        let wx2: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| w[i] * xs[[i, j]] * xs[[i, j]]).sum::<f64>() / nf)
            .collect();
        let w_sum: f64 = w.iter().sum();

        let prev_beta0 = beta0;
        let prev_beta = beta.clone();

        // residual r = z - beta0 - Xs*beta
        let mut r: Vec<f64> = (0..n)
            .map(|i| z[i] - beta0 - xs.row(i).dot(&beta))
            .collect();

        // inner coordinate descent cycles on the weighted quadratic
        loop {
            if cycles_used >= max_cycles {
                break;
            }
            cycles_used += 1;
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                if wx2[j] <= 0.0 {
                    // zero-variance column stays out of the model
                    beta[j] = 0.0;
                    continue;
                }
                let rho =
                    (0..n).map(|i| w[i] * xs[[i, j]] * r[i]).sum::<f64>() / nf + wx2[j] * beta[j];
                let new = soft_threshold(rho, lambda * alpha) / (wx2[j] + lambda * (1.0 - alpha));
                let delta = new - beta[j];
                if delta != 0.0 {
                    for i in 0..n {
                        r[i] -= delta * xs[[i, j]];
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            let delta0 = (0..n).map(|i| w[i] * r[i]).sum::<f64>() / w_sum;
            beta0 += delta0;
            r.iter_mut().for_each(|ri| *ri -= delta0);
            max_delta = max_delta.max(delta0.abs());
            if max_delta < tol {
                break;
            }
        }

        // step-halving if the quadratic step overshot the true objective
        let mut new_obj = en_objective(xs, y, beta0, &beta, lambda, alpha);
        let mut halvings = 0;
        while new_obj > objective + 1e-12 && halvings < 30 {
            beta0 = (beta0 + prev_beta0) / 2.0;
            beta = (&beta + &prev_beta) / 2.0;
            new_obj = en_objective(xs, y, beta0, &beta, lambda, alpha);
            halvings += 1;
        }
        history.push(new_obj);
        let improved = objective - new_obj;
        objective = new_obj;
        if improved.abs() < tol * (1.0 + objective.abs()) {
            converged = true;
            break;
        }
        if cycles_used >= max_cycles {
            break;
        }
    }

    CdFit {
        beta0,
        beta,
        objective,
        converged,
        history,
    }
}

fn lambda_grid(xs: &Array2<f64>, y: &[f64], config: &ENConfig) -> Vec<f64> {
    let n = xs.nrows() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut lambda_max: f64 = 0.0;
    for j in 0..xs.ncols() {
        let dot: f64 = (0..xs.nrows())
            .map(|i| xs[[i, j]] * (y[i] - y_mean))
            .sum::<f64>()
            / n;
        lambda_max = lambda_max.max(dot.abs());
    }
    lambda_max /= config.alpha.max(1e-3);
    if lambda_max <= 0.0 {
        lambda_max = 1.0;
    }
    let lambda_min = lambda_max * config.lambda_min_ratio;
    let k = config.n_lambdas.max(2);
    (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            (lambda_max.ln() * (1.0 - t) + lambda_min.ln() * t).exp()
        })
        .collect()
}

/// Stratified fold ids (0..k) per row, seeded.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % k;
        }
    }
    assignment
}

fn mean_deviance(xs: &Array2<f64>, y: &[f64], beta0: f64, beta: &Array1<f64>) -> f64 {
    let n = xs.nrows() as f64;
    let eta = xs.dot(beta) + beta0;
    2.0 * eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let log1pe = if e > 30.0 { e } else { e.exp().ln_1p() };
            log1pe - yi * e
        })
        .sum::<f64>()
        / n
}

fn validate_inputs(x: &DesignMatrix, y: &[bool]) -> Result<()> {
    if x.n_rows() < 2 {
        return Err(Error::invalid("need at least 2 rows"));
    }
    if x.col_names.len()
        != x.col_names
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    {
        return Err(Error::invalid("duplicate column names"));
    }
    if y.len() != x.n_rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            y.len(),
            x.n_rows()
        )));
    }
    let pos = y.iter().filter(|&&l| l).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    if x.rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix".into()));
    }
    Ok(())
}

/// Fit the penalized logistic model. Columns are standardized internally and
/// the intercept is unpenalized; reported coefficients are unstandardized
/// back to the original column scale.
pub fn fit_en(x: &DesignMatrix, y: &[bool], config: &ENConfig) -> Result<FitResult> {
    validate_inputs(x, y)?;
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::invalid(format!(
            "alpha {} outside [0,1]",
            config.alpha
        )));
    }
    let yf: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let (xs, means, sds) = standardize(&x.rows);

    let lambda = match config.lambda {
        Some(l) => {
            if l <= 0.0 {
                return Err(Error::invalid("lambda must be > 0"));
            }
            l
        }
        None => {
            let grid = lambda_grid(&xs, &yf, config);
            let folds = stratified_folds(y, config.cv_folds, derive_seed(config.seed, "en-cv"));
            let mut deviances = vec![0.0; grid.len()];
            let mut counted = vec![0usize; grid.len()];
            for fold in 0..config.cv_folds {
                let train_idx: Vec<usize> = (0..y.len()).filter(|i| folds[*i] != fold).collect();
                let val_idx: Vec<usize> = (0..y.len()).filter(|i| folds[*i] == fold).collect();
                if val_idx.is_empty() {
                    continue;
                }
                let pos = train_idx.iter().filter(|&&i| y[i]).count();
                if pos == 0 || pos == train_idx.len() {
                    continue;
                }
                let xtr = Array2::from_shape_fn((train_idx.len(), xs.ncols()), |(i, j)| {
                    xs[[train_idx[i], j]]
                });
                let ytr: Vec<f64> = train_idx.iter().map(|&i| yf[i]).collect();
                let xva = Array2::from_shape_fn((val_idx.len(), xs.ncols()), |(i, j)| {
                    xs[[val_idx[i], j]]
                });
                let yva: Vec<f64> = val_idx.iter().map(|&i| yf[i]).collect();
                let mut warm: Option<(f64, Array1<f64>)> = None;
                for (gi, &lam) in grid.iter().enumerate() {
                    let fit = fit_standardized(
                        &xtr,
                        &ytr,
                        config.alpha,
                        lam,
                        config.tol,
                        config.max_iterations,
                        warm.clone(),
                    );
                    deviances[gi] += mean_deviance(&xva, &yva, fit.beta0, &fit.beta);
                    counted[gi] += 1;
                    warm = Some((fit.beta0, fit.beta));
                }
            }
            let mut best = 0usize;
            let mut best_dev = f64::INFINITY;
            for (gi, &lam) in grid.iter().enumerate() {
                if counted[gi] == 0 {
                    continue;
                }
                let dev = deviances[gi] / counted[gi] as f64;
                // strict '<' prefers the larger (earlier, sparser) lambda on ties
                if dev < best_dev {
                    best_dev = dev;
                    best = gi;
                }
                let _ = lam;
            }
            grid[best]
        }
    };

    let fit = fit_standardized(
        &xs,
        &yf,
        config.alpha,
        lambda,
        config.tol,
        config.max_iterations,
        None,
    );

    let mut coefficients = BTreeMap::new();
    let mut intercept = fit.beta0;
    for j in 0..x.n_cols() {
        let orig = if sds[j] > 0.0 {
            fit.beta[j] / sds[j]
        } else {
            0.0
        };
        coefficients.insert(x.col_names[j].clone(), orig);
        intercept -= orig * means[j];
    }

    Ok(FitResult {
        intercept,
        coefficients,
        lambda,
        objective: fit.objective,
        converged: fit.converged,
        objective_history: fit.history,
        col_names: x.col_names.clone(),
        std_coefs: fit.beta.to_vec(),
        std_intercept: fit.beta0,
        col_means: means,
        col_sds: sds,
    })
}

/// Mann-Whitney ROC AUC with tied scores counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("scores/labels length mismatch or empty"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // 1-based average rank
        for &k in &order[i..=j] {
            ranks[k] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l)
        .map(|(k, _)| ranks[k])
        .sum();
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

/// Mean AUC drop over seeded row permutations of each column. Columns with
/// a zero coefficient score exactly 0.
pub fn permutation_importance(
    fit: &FitResult,
    x: &DesignMatrix,
    y: &[bool],
    config: &ENConfig,
) -> Result<BTreeMap<String, f64>> {
    validate_inputs(x, y)?;
    let base = roc_auc(&fit.predict_prob(x)?, y)?;
    let n = x.n_rows();
    // One permutation per repeat, shared across columns, so the result is
    // invariant to column order.
    let perms: Vec<Vec<usize>> = (0..config.permutation_repeats)
        .map(|r| {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("perm:{r}")));
            idx.shuffle(&mut rng);
            idx
        })
        .collect();

    let mut out = BTreeMap::new();
    for (j, name) in x.col_names.iter().enumerate() {
        if fit.coefficients.get(name).copied().unwrap_or(0.0) == 0.0 {
            out.insert(name.clone(), 0.0);
            continue;
        }
        let mut drops = 0.0;
        let mut shuffled = x.clone();
        for perm in &perms {
            for (i, &src) in perm.iter().enumerate() {
                shuffled.rows[[i, j]] = x.rows[[src, j]];
            }
            let auc = roc_auc(&fit.predict_prob(&shuffled)?, y)?;
            drops += base - auc;
        }
        // restore column before the next one reuses the buffer
        for i in 0..n {
            shuffled.rows[[i, j]] = x.rows[[i, j]];
        }
        out.insert(name.clone(), drops / perms.len() as f64);
    }
    Ok(out)
}

/// The three dual-pipeline design-matrix variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    SymptomOnly,
    SymptomDemoComorbid,
    SymptomGnnRisk,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 3] = [
        PipelineVariant::SymptomOnly,
        PipelineVariant::SymptomDemoComorbid,
        PipelineVariant::SymptomGnnRisk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineVariant::SymptomOnly => "symptom_only",
            PipelineVariant::SymptomDemoComorbid => "symptom_demo_comorbid",
            PipelineVariant::SymptomGnnRisk => "symptom_gnn_risk",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CvOutcome {
    pub fold_aucs: Vec<f64>,
    pub skipped_folds: Vec<usize>,
}

impl CvOutcome {
    pub fn mean_auc(&self) -> Option<f64> {
        if self.fold_aucs.is_empty() {
            None
        } else {
            Some(self.fold_aucs.iter().sum::<f64>() / self.fold_aucs.len() as f64)
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub en: ENConfig,
    pub gnn: TrainConfig,
    pub graph: GraphConfig,
    pub observation_days: u32,
    pub semantic_threshold: f64,
    pub patient_knn: usize,
    pub folds: usize,
    pub seed: u64,
}

/// 5-fold CV ROC AUC for each pipeline variant. The GNN-risk column of a
/// fold comes from a network trained on a graph without that fold's
/// patients.
pub fn compare_pipelines(
    messages: &[MessageRecord],
    cohort: &Cohort,
    taxonomy: &Taxonomy,
    provider: &dyn EmbeddingProvider,
    config: &CompareConfig,
) -> Result<BTreeMap<PipelineVariant, CvOutcome>> {
    let vocab = FeatureVocab::from_patients(&cohort.patients);
    let base = symptom_count_matrix(messages, cohort, config.observation_days)?;
    let labels: Vec<bool> = {
        let by_id = cohort.labels();
        base.row_ids.iter().map(|id| by_id[id]).collect()
    };
    let folds = stratified_folds(&labels, config.folds, derive_seed(config.seed, "cmp-folds"));

    let with_demo = append_demographics(&base, cohort, &vocab)?;

    let mut results: BTreeMap<PipelineVariant, CvOutcome> = PipelineVariant::ALL
        .iter()
        .map(|v| (*v, CvOutcome::default()))
        .collect();

    for fold in 0..config.folds {
        let train_idx: Vec<usize> = (0..labels.len()).filter(|i| folds[*i] != fold).collect();
        let val_idx: Vec<usize> = (0..labels.len()).filter(|i| folds[*i] == fold).collect();
        let y_train: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        let y_val: Vec<bool> = val_idx.iter().map(|&i| labels[i]).collect();
        let single_class = |ys: &[bool]| {
            let pos = ys.iter().filter(|&&l| l).count();
            pos == 0 || pos == ys.len()
        };
        if val_idx.is_empty() || single_class(&y_train) || single_class(&y_val) {
            for outcome in results.values_mut() {
                outcome.skipped_folds.push(fold);
            }
            continue;
        }

        // GNN risk trained without this fold's patients.
        let train_ids: std::collections::BTreeSet<&str> = train_idx
            .iter()
            .map(|&i| base.row_ids[i].as_str())
            .collect();
        let train_cohort = Cohort {
            patients: cohort
                .patients
                .iter()
                .filter(|p| train_ids.contains(p.patient_id.as_str()))
                .cloned()
                .collect(),
            shortfall: Default::default(),
        };
        let build = |c: &Cohort| -> Result<crate::hetgraph::HeteroGraph> {
            let mut g = build_graph(messages, c, taxonomy, &vocab, provider, &config.graph)?;
            add_semantic_edges(&mut g, provider, config.semantic_threshold)?;
            if g.patients.len() >= 2 {
                add_patient_similarity_edges(&mut g, config.patient_knn)?;
            }
            Ok(g)
        };
        let train_graph = build(&train_cohort)?;
        let gnn_cfg = TrainConfig {
            seed: derive_seed(config.seed, &format!("cmp-gnn:{fold}")),
            ..config.gnn.clone()
        };
        let (model, _) = gnn::train(&train_graph, &train_graph.labels(), &gnn_cfg)?;
        let full_graph = build(cohort)?;
        let risk = gnn::predict(&model, &full_graph);
        let with_risk = base.with_column("gnn_risk", &risk)?;

        for variant in PipelineVariant::ALL {
            let matrix = match variant {
                PipelineVariant::SymptomOnly => &base,
                PipelineVariant::SymptomDemoComorbid => &with_demo,
                PipelineVariant::SymptomGnnRisk => &with_risk,
            };
            let x_train = matrix.subset_rows(&train_idx);
            let x_val = matrix.subset_rows(&val_idx);
            let en_cfg = ENConfig {
                seed: derive_seed(config.seed, &format!("cmp-en:{fold}")),
                ..config.en.clone()
            };
            let fit = fit_en(&x_train, &y_train, &en_cfg)?;
            let auc = roc_auc(&fit.predict_prob(&x_val)?, &y_val)?;
            results.get_mut(&variant).unwrap().fold_aucs.push(auc);
        }
    }
    Ok(results)
}
