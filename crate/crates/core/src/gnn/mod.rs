//! Heterogeneous message-passing network trained on patient event labels.
//!
//! Two GraphSAGE-style layers of per-relation mean aggregation with a
//! per-type self map, ReLU, optional dropout, and a linear readout from
//! patient embeddings to an event logit. Forward, backward and Adam are
//! hand-rolled; `gradient_check` gates the backward pass against central
//! finite differences.

pub mod attribution;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::stats::{derive_seed, sigmoid};

pub use attribution::{event_delta, event_deltas, salience, AttributionResult, SalienceTable};

pub const N_TYPES: usize = 3;
pub const N_RELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Patient = 0,
    Symptom = 1,
    Comorbidity = 2,
}

/// Directed message-passing relations between node types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    SymToPat = 0,
    ComToPat = 1,
    PatToPat = 2,
    PatToSym = 3,
    SymToSym = 4,
    PatToCom = 5,
}

impl Rel {
    pub const ALL: [Rel; N_RELS] = [
        Rel::SymToPat,
        Rel::ComToPat,
        Rel::PatToPat,
        Rel::PatToSym,
        Rel::SymToSym,
        Rel::PatToCom,
    ];

    pub fn src(&self) -> usize {
        match self {
            Rel::SymToPat | Rel::SymToSym => NodeType::Symptom as usize,
            Rel::ComToPat => NodeType::Comorbidity as usize,
            Rel::PatToPat | Rel::PatToSym | Rel::PatToCom => NodeType::Patient as usize,
        }
    }

    pub fn dst(&self) -> usize {
        match self {
            Rel::SymToPat | Rel::ComToPat | Rel::PatToPat => NodeType::Patient as usize,
            Rel::PatToSym | Rel::SymToSym => NodeType::Symptom as usize,
            Rel::PatToCom => NodeType::Comorbidity as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub activation: Activation,
    /// Override for (negative, positive) class weights; the default is
    /// 1 / (2 * class prevalence).
    #[serde(default)]
    pub class_weights: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 32,
            dropout: 0.2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
            patience: 20,
            activation: Activation::Relu,
            class_weights: None,
            seed: 0,
        }
    }
}

/// All parameters as a flat list of matrices with a fixed layout:
/// 3 input projections, then per layer 3 self maps + 6 relation maps,
/// then the readout weight (1 x H) and bias (1 x 1).
#[derive(Debug, Clone)]
pub struct HeteroModel {
    pub params: Vec<Array2<f64>>,
    pub layers: usize,
    pub hidden: usize,
    pub dims: [usize; N_TYPES],
    pub activation: Activation,
}

impl HeteroModel {
    fn input_idx(t: usize) -> usize {
        t
    }

    fn self_idx(layer: usize, t: usize) -> usize {
        N_TYPES + layer * (N_TYPES + N_RELS) + t
    }

    fn rel_idx(layer: usize, r: usize) -> usize {
        N_TYPES + layer * (N_TYPES + N_RELS) + N_TYPES + r
    }

    fn readout_w_idx(&self) -> usize {
        N_TYPES + self.layers * (N_TYPES + N_RELS)
    }

    fn readout_b_idx(&self) -> usize {
        self.readout_w_idx() + 1
    }

    pub fn n_scalar_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Xavier-uniform initialization, deterministic per seed.
    pub fn init(graph: &HeteroGraph, config: &TrainConfig) -> Self {
        let dims = [
            graph.vocab.patient_dim(),
            graph.embed_dim,
            graph.vocab.comorbidities.len(),
        ];
        let h = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
        let mut xavier = |rows: usize, cols: usize| -> Array2<f64> {
            let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
        };
        let mut params = Vec::new();
        for d in dims {
            params.push(xavier(h, d));
        }
        for _ in 0..config.layers {
            for _ in 0..N_TYPES {
                params.push(xavier(h, h));
            }
            for _ in 0..N_RELS {
                params.push(xavier(h, h));
            }
        }
        params.push(xavier(1, h));
        params.push(Array2::zeros((1, 1)));
        Self {
            params,
            layers: config.layers,
            hidden: h,
            dims,
            activation: config.activation,
        }
    }
}

/// Checkpoint format: shaped parameter arrays plus the model meta, JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub dims: [usize; N_TYPES],
    pub activation: Activation,
    pub tensors: Vec<CheckpointTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl HeteroModel {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: 1,
            layers: self.layers,
            hidden: self.hidden,
            dims: self.dims,
            activation: self.activation,
            tensors: self
                .params
                .iter()
                .map(|p| CheckpointTensor {
                    rows: p.nrows(),
                    cols: p.ncols(),
                    data: p.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: ModelCheckpoint) -> Result<Self> {
        if ckpt.format_version != 1 {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        let params = ckpt
            .tensors
            .into_iter()
            .map(|t| {
                Array2::from_shape_vec((t.rows, t.cols), t.data)
                    .map_err(|e| Error::invalid(format!("bad tensor shape: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = N_TYPES + ckpt.layers * (N_TYPES + N_RELS) + 2;
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, expected {expected}",
                params.len()
            )));
        }
        Ok(Self {
            params,
            layers: ckpt.layers,
            hidden: ckpt.hidden,
            dims: ckpt.dims,
            activation: ckpt.activation,
        })
    }
}

/// Graph flattened for message passing: per-type feature matrices and
/// per-relation adjacency lists with edge scales.
pub struct MpGraph {
    pub x: [Array2<f64>; N_TYPES],
    pub adj: [Vec<Vec<(usize, f64)>>; N_RELS],
    pub n: [usize; N_TYPES],
    pub patient_ids: Vec<String>,
}

fn to_matrix(rows: usize, dim: usize, features: impl Iterator<Item = Vec<f64>>) -> Array2<f64> {
    let mut m = Array2::zeros((rows, dim));
    for (i, f) in features.enumerate() {
        for (j, v) in f.into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Scale applied to messages along a patient-symptom edge.
pub fn ps_edge_scale(count: f64, recency: f64) -> f64 {
    (1.0 + count).ln() * recency
}

pub fn mp_graph(graph: &HeteroGraph) -> MpGraph {
    let n = [
        graph.patients.len(),
        graph.symptoms.len(),
        graph.comorbidities.len(),
    ];
    let dims = [
        graph.vocab.patient_dim(),
        graph.embed_dim,
        graph.vocab.comorbidities.len(),
    ];
    let x = [
        to_matrix(
            n[0],
            dims[0],
            graph.patients.iter().map(|p| p.features.clone()),
        ),
        to_matrix(
            n[1],
            dims[1],
            graph.symptoms.iter().map(|s| s.features.clone()),
        ),
        to_matrix(
            n[2],
            dims[2],
            graph.comorbidities.iter().map(|c| c.features.clone()),
        ),
    ];

    let mut adj: [Vec<Vec<(usize, f64)>>; N_RELS] =
        std::array::from_fn(|r| vec![Vec::new(); n[Rel::ALL[r].dst()]]);
    for &(p, s, attr) in &graph.patient_symptom {
        let scale = ps_edge_scale(attr.count, attr.recency);
        adj[Rel::SymToPat as usize][p].push((s, scale));
        adj[Rel::PatToSym as usize][s].push((p, scale));
    }
    for &(p, c) in &graph.patient_comorbidity {
        adj[Rel::ComToPat as usize][p].push((c, 1.0));
        adj[Rel::PatToCom as usize][c].push((p, 1.0));
    }
    for &(i, j, w) in &graph.patient_patient {
        adj[Rel::PatToPat as usize][i].push((j, w));
        adj[Rel::PatToPat as usize][j].push((i, w));
    }
    for &(i, j, w) in &graph.symptom_symptom {
        adj[Rel::SymToSym as usize][i].push((j, w));
        adj[Rel::SymToSym as usize][j].push((i, w));
    }
    // Canonical neighbor order so float summation is reproducible.
    for rel in adj.iter_mut() {
        for nbrs in rel.iter_mut() {
            nbrs.sort_by_key(|a| a.0);
        }
    }

    MpGraph {
        x,
        adj,
        n,
        patient_ids: graph
            .patients
            .iter()
            .map(|p| p.patient_id.clone())
            .collect(),
    }
}

pub struct ForwardState {
    /// h[0] is the input projection; h[l] the post-activation (and, in
    /// training, post-dropout) embedding after layer l.
    pub h: Vec<[Array2<f64>; N_TYPES]>,
    pub z: Vec<[Array2<f64>; N_TYPES]>,
    pub msgs: Vec<[Array2<f64>; N_RELS]>,
    pub masks: Vec<[Array2<f64>; N_TYPES]>,
    pub logits: Array1<f64>,
}

fn aggregate(adj: &[Vec<(usize, f64)>], h_src: &Array2<f64>, hidden: usize) -> Array2<f64> {
    let mut m = Array2::zeros((adj.len(), hidden));
    for (v, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        for &(u, scale) in nbrs {
            let row = h_src.row(u);
            let mut out = m.row_mut(v);
            out.iter_mut()
                .zip(row.iter())
                .for_each(|(o, &x)| *o += scale * x);
        }
        m.row_mut(v).iter_mut().for_each(|o| *o *= inv);
    }
    m
}

/// Full forward pass. `dropout` is applied to hidden activations only when
/// an RNG is supplied (training mode).
pub fn forward(
    model: &HeteroModel,
    mp: &MpGraph,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> ForwardState {
    let hidden = model.hidden;
    let mut h = Vec::with_capacity(model.layers + 1);
    let mut zs = Vec::with_capacity(model.layers);
    let mut msgs = Vec::with_capacity(model.layers);
    let mut masks = Vec::with_capacity(model.layers);

    let h0: [Array2<f64>; N_TYPES] =
        std::array::from_fn(|t| mp.x[t].dot(&model.params[HeteroModel::input_idx(t)].t()));
    h.push(h0);

    for layer in 0..model.layers {
        let prev = &h[layer];
        let layer_msgs: [Array2<f64>; N_RELS] = std::array::from_fn(|r| {
            let rel = Rel::ALL[r];
            aggregate(&mp.adj[r], &prev[rel.src()], hidden)
        });
        let mut layer_z: [Array2<f64>; N_TYPES] = std::array::from_fn(|t| {
            prev[t].dot(&model.params[HeteroModel::self_idx(layer, t)].t())
        });
        for (r, rel) in Rel::ALL.iter().enumerate() {
            let contrib = layer_msgs[r].dot(&model.params[HeteroModel::rel_idx(layer, r)].t());
            layer_z[rel.dst()] += &contrib;
        }
        let mut layer_h: [Array2<f64>; N_TYPES] =
            std::array::from_fn(|t| layer_z[t].mapv(|v| model.activation.apply(v)));
        let layer_mask: [Array2<f64>; N_TYPES] = std::array::from_fn(|t| {
            let shape = (layer_h[t].nrows(), layer_h[t].ncols());
            match rng.as_deref_mut() {
                Some(rng) if dropout > 0.0 => {
                    let keep = 1.0 - dropout;
                    Array2::from_shape_fn(shape, |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                }
                _ => Array2::ones(shape),
            }
        });
        for t in 0..N_TYPES {
            layer_h[t] *= &layer_mask[t];
        }
        zs.push(layer_z);
        msgs.push(layer_msgs);
        masks.push(layer_mask);
        h.push(layer_h);
    }

    let w_out = &model.params[model.readout_w_idx()];
    let bias = model.params[model.readout_b_idx()][[0, 0]];
    let h_pat = &h[model.layers][NodeType::Patient as usize];
    let logits = h_pat.dot(&w_out.t()).column(0).to_owned() + bias;

    ForwardState {
        h,
        z: zs,
        msgs,
        masks,
        logits,
    }
}

/// Class weights 1 / (2 * prevalence), as (weight_negative, weight_positive).
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClass);
    }
    Ok((n / (2.0 * neg), n / (2.0 * pos)))
}

fn per_patient_weights(labels: &[bool], w: (f64, f64)) -> Vec<f64> {
    labels.iter().map(|&y| if y { w.1 } else { w.0 }).collect()
}

/// Weighted sum of per-patient binary cross-entropies, numerically stable.
pub fn weighted_loss(logits: &Array1<f64>, labels: &[bool], weights: &[f64]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&z, &y), &w)| {
            let y = if y { 1.0 } else { 0.0 };
            w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        })
        .sum()
}

/// Backward pass; returns gradients with the same layout as `model.params`.
pub fn backward(
    model: &HeteroModel,
    mp: &MpGraph,
    state: &ForwardState,
    labels: &[bool],
    weights: &[f64],
) -> Vec<Array2<f64>> {
    let hidden = model.hidden;
    let mut grads: Vec<Array2<f64>> = model
        .params
        .iter()
        .map(|p| Array2::zeros((p.nrows(), p.ncols())))
        .collect();

    // d loss / d logit
    let dlogit: Array1<f64> = state
        .logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&z, &y), &w)| w * (sigmoid(z) - if y { 1.0 } else { 0.0 }))
        .collect();

    let w_out = model.params[model.readout_w_idx()].clone();
    let h_pat = &state.h[model.layers][NodeType::Patient as usize];

    // readout grads
    {
        let g_w = grads.get_mut(model.readout_w_idx()).unwrap();
        for (i, &d) in dlogit.iter().enumerate() {
            let row = h_pat.row(i);
            g_w.row_mut(0)
                .iter_mut()
                .zip(row.iter())
                .for_each(|(g, &hv)| *g += d * hv);
        }
    }
    grads[model.readout_b_idx()][[0, 0]] = dlogit.sum();

    // gradient w.r.t. final embeddings
    let mut g_h: [Array2<f64>; N_TYPES] = std::array::from_fn(|t| Array2::zeros((mp.n[t], hidden)));
    for (i, &d) in dlogit.iter().enumerate() {
        let mut row = g_h[NodeType::Patient as usize].row_mut(i);
        row.iter_mut()
            .zip(w_out.row(0).iter())
            .for_each(|(g, &wv)| *g += d * wv);
    }

    for layer in (0..model.layers).rev() {
        let mut g_prev: [Array2<f64>; N_TYPES] =
            std::array::from_fn(|t| Array2::zeros((mp.n[t], hidden)));
        // through dropout and the activation
        let g_z: [Array2<f64>; N_TYPES] = std::array::from_fn(|t| {
            let mut g = g_h[t].clone();
            g *= &state.masks[layer][t];
            ndarray::Zip::from(&mut g)
                .and(&state.z[layer][t])
                .for_each(|g, &z| *g *= model.activation.derivative(z));
            g
        });

        for t in 0..N_TYPES {
            let idx = HeteroModel::self_idx(layer, t);
            grads[idx] += &g_z[t].t().dot(&state.h[layer][t]);
            g_prev[t] += &g_z[t].dot(&model.params[idx]);
        }
        for (r, rel) in Rel::ALL.iter().enumerate() {
            let t = rel.dst();
            let idx = HeteroModel::rel_idx(layer, r);
            grads[idx] += &g_z[t].t().dot(&state.msgs[layer][r]);
            let g_m = g_z[t].dot(&model.params[idx]);
            let src = rel.src();
            for (v, nbrs) in mp.adj[r].iter().enumerate() {
                if nbrs.is_empty() {
                    continue;
                }
                let inv = 1.0 / nbrs.len() as f64;
                let g_row = g_m.row(v);
                for &(u, scale) in nbrs {
                    let mut dst_row = g_prev[src].row_mut(u);
                    dst_row
                        .iter_mut()
                        .zip(g_row.iter())
                        .for_each(|(g, &x)| *g += scale * inv * x);
                }
            }
        }
        g_h = g_prev;
    }

    for t in 0..N_TYPES {
        grads[HeteroModel::input_idx(t)] += &g_h[t].t().dot(&mp.x[t]);
    }
    grads
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

/// Train with Adam on the weighted event loss. Deterministic per seed.
pub fn train(
    graph: &HeteroGraph,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<(HeteroModel, TrainHistory)> {
    if labels.len() != graph.patients.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} patients",
            labels.len(),
            graph.patients.len()
        )));
    }
    let w = match config.class_weights {
        Some(w) => w,
        None => class_weights(labels)?,
    };
    let weights = per_patient_weights(labels, w);
    let mp = mp_graph(graph);
    let mut model = HeteroModel::init(graph, config);

    let mut m: Vec<Array2<f64>> = model
        .params
        .iter()
        .map(|p| Array2::zeros((p.nrows(), p.ncols())))
        .collect();
    let mut v = m.clone();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout"));

    let mut losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let state = forward(&model, &mp, config.dropout, Some(&mut dropout_rng));
        let loss = weighted_loss(&state.logits, labels, &weights);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch} (lr={}, hidden={})",
                config.learning_rate, config.hidden_dim
            )));
        }
        losses.push(loss);
        if loss < best {
            best = loss;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                stopped_early = true;
                break;
            }
        }

        let grads = backward(&model, &mp, &state, labels, &weights);
        let t = (epoch + 1) as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for ((p, g), (mi, vi)) in model
            .params
            .iter_mut()
            .zip(&grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(mi)
                .and(vi)
                .for_each(|p, &g, m, v| {
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                });
        }
    }

    let epochs_run = losses.len();
    Ok((
        model,
        TrainHistory {
            losses,
            stopped_early,
            epochs_run,
        },
    ))
}

/// Event probability per patient; dropout disabled.
pub fn predict(model: &HeteroModel, graph: &HeteroGraph) -> BTreeMap<String, f64> {
    let mp = mp_graph(graph);
    let state = forward(model, &mp, 0.0, None);
    mp.patient_ids
        .iter()
        .zip(state.logits.iter())
        .map(|(id, &z)| (id.clone(), sigmoid(z)))
        .collect()
}

/// Evaluation-mode weighted loss on a graph (used by event deltas).
pub fn eval_loss(model: &HeteroModel, graph: &HeteroGraph, labels: &[bool]) -> Result<f64> {
    let w = class_weights(labels)?;
    let weights = per_patient_weights(labels, w);
    let mp = mp_graph(graph);
    let state = forward(model, &mp, 0.0, None);
    Ok(weighted_loss(&state.logits, labels, &weights))
}

/// Compare analytic gradients against central finite differences (h = 1e-5)
/// on a random subset of at most `max_params` scalar parameters.
///
/// The relative error divides by max(|analytic| + |numeric|, 1e-3), so
/// gradients below 1e-3 are effectively compared on an absolute scale where
/// finite differencing is noise-dominated.
pub fn gradient_check(
    model: &HeteroModel,
    graph: &HeteroGraph,
    labels: &[bool],
    max_params: usize,
    seed: u64,
) -> Result<f64> {
    let w = class_weights(labels)?;
    let weights = per_patient_weights(labels, w);
    let mp = mp_graph(graph);

    let state = forward(model, &mp, 0.0, None);
    let analytic = backward(model, &mp, &state, labels, &weights);

    let total: usize = model.n_scalar_params();
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck"));
    // Fisher-Yates prefix shuffle to pick the subset.
    for i in 0..indices.len().min(max_params) {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(max_params.min(total));

    let locate = |flat: usize| -> (usize, usize, usize) {
        let mut rest = flat;
        for (ti, p) in model.params.iter().enumerate() {
            if rest < p.len() {
                return (ti, rest / p.ncols(), rest % p.ncols());
            }
            rest -= p.len();
        }
        unreachable!("flat index within bounds");
    };

    let h = 1e-5;
    let mut model = model.clone();
    let mut max_rel: f64 = 0.0;
    for flat in indices {
        let (ti, r, c) = locate(flat);
        let original = model.params[ti][[r, c]];

        model.params[ti][[r, c]] = original + h;
        let plus = weighted_loss(&forward(&model, &mp, 0.0, None).logits, labels, &weights);
        model.params[ti][[r, c]] = original - h;
        let minus = weighted_loss(&forward(&model, &mp, 0.0, None).logits, labels, &weights);
        model.params[ti][[r, c]] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic[ti][[r, c]];
        if numeric == 0.0 && exact == 0.0 {
            continue;
        }
        let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AgeBand, Annotation, Attr, Cohort, MessageRecord, PatientRecord};
    use crate::embed::TrigramEmbedder;
    use crate::hetgraph::{build_graph, FeatureVocab, GraphConfig};
    use crate::taxonomy::{apply_changes, ProposedChange, ProposedNode, Taxonomy};
    use std::collections::BTreeSet;

    fn patient(id: &str, event: bool) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            age_band: AgeBand::From65To74,
            race: Attr("White".into()),
            ethnicity: Attr("Non-Hispanic".into()),
            sex: Attr("F".into()),
            marital_status: Attr("Married".into()),
            comorbidities: BTreeSet::from(["E11".to_string()]),
            event,
            event_date: event.then(|| "2024-09-10".parse().unwrap()),
            anchor_date: Some("2024-09-10".parse().unwrap()),
        }
    }

    fn msg(id: &str, pid: &str, sub2: &str) -> MessageRecord {
        MessageRecord {
            message_id: id.into(),
            patient_id: pid.into(),
            ts: "2024-09-05T00:00:00".parse().unwrap(),
            text: String::new(),
            annotations: vec![Annotation {
                sub2_id: sub2.into(),
                confidence: 1.0,
            }],
        }
    }

    fn two_symptom_taxonomy() -> Taxonomy {
        let node = |id: &str, level, parent: Option<&str>| ProposedNode {
            id: id.into(),
            level,
            label: format!("topic {id}"),
            parent_id: parent.map(str::to_string),
            lexicon: BTreeSet::new(),
        };
        use crate::taxonomy::Level::*;
        let changes = vec![
            ProposedChange::add(node("m1", Main, None), "seed"),
            ProposedChange::add(node("u1", Sub1, Some("m1")), "seed"),
            ProposedChange::add(node("sig", Sub2, Some("u1")), "seed"),
            ProposedChange::add(node("noise", Sub2, Some("u1")), "seed"),
        ];
        apply_changes(&Taxonomy::default(), changes, 0).unwrap().0
    }

    /// Separable toy graph: cases message about `sig`, controls about `noise`.
    pub(crate) fn toy_graph() -> (crate::hetgraph::HeteroGraph, Vec<bool>) {
        let mut patients = Vec::new();
        let mut messages = Vec::new();
        for i in 0..4 {
            let id = format!("case{i}");
            patients.push(patient(&id, true));
            messages.push(msg(&format!("mc{i}"), &id, "sig"));
        }
        for i in 0..4 {
            let id = format!("ctl{i}");
            patients.push(patient(&id, false));
            messages.push(msg(&format!("mn{i}"), &id, "noise"));
        }
        let cohort = Cohort {
            patients,
            shortfall: Default::default(),
        };
        let vocab = FeatureVocab::from_patients(&cohort.patients);
        let tax = two_symptom_taxonomy();
        let graph = build_graph(
            &messages,
            &cohort,
            &tax,
            &vocab,
            &TrigramEmbedder::default(),
            &GraphConfig::default(),
        )
        .unwrap();
        let labels = graph.labels();
        (graph, labels)
    }

    #[test]
    fn balanced_labels_unit_weights() {
        let labels = vec![true, true, false, false];
        assert_eq!(class_weights(&labels).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn single_class_rejected() {
        assert!(class_weights(&[true, true]).is_err());
    }

    #[test]
    fn all_zero_parameters_predict_half() {
        let (graph, _) = toy_graph();
        let config = TrainConfig::default();
        let mut model = HeteroModel::init(&graph, &config);
        for p in &mut model.params {
            p.fill(0.0);
        }
        for prob in predict(&model, &graph).values() {
            assert_eq!(*prob, 0.5);
        }
    }

    #[test]
    fn duplicate_patients_equal_probabilities() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            epochs: 30,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let (model, _) = train(&graph, &labels, &config).unwrap();
        let probs = predict(&model, &graph);
        // case0..case3 are identical in features and connectivity
        let p0 = probs["case0"];
        for i in 1..4 {
            assert_eq!(probs[&format!("case{i}")], p0);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (a, _) = train(&graph, &labels, &config).unwrap();
        let (b, _) = train(&graph, &labels, &config).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn loss_decreases_on_separable_toy_graph() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            epochs: 10,
            dropout: 0.0,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let (_, history) = train(&graph, &labels, &config).unwrap();
        for w in history.losses.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn early_stop_triggers_on_plateau() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            epochs: 500,
            learning_rate: 0.0, // loss can never improve
            patience: 5,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let (_, history) = train(&graph, &labels, &config).unwrap();
        assert!(history.stopped_early);
        assert_eq!(history.epochs_run, 6); // first epoch sets best, then 5 bad
    }

    #[test]
    fn checkpoint_round_trip() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (model, _) = train(&graph, &labels, &config).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let restored = HeteroModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        for (a, b) in model.params.iter().zip(&restored.params) {
            assert_eq!(a, b);
        }
        assert_eq!(predict(&model, &graph), predict(&restored, &graph));
    }

    #[test]
    fn gradient_check_identity_activation() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            activation: Activation::Identity,
            seed: 7,
            ..TrainConfig::default()
        };
        let model = HeteroModel::init(&graph, &config);
        let err = gradient_check(&model, &graph, &labels, 50, 7).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn gradient_check_default_model() {
        let (graph, labels) = toy_graph();
        let config = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let model = HeteroModel::init(&graph, &config);
        let err = gradient_check(&model, &graph, &labels, 50, 11).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_with_no_sampled_params_is_vacuous() {
        let (graph, labels) = toy_graph();
        let model = HeteroModel::init(&graph, &TrainConfig::default());
        assert_eq!(gradient_check(&model, &graph, &labels, 0, 0).unwrap(), 0.0);
    }
}
