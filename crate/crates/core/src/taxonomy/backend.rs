//! Annotator backend contract and its three implementations: the offline
//! lexicon matcher, a scripted double replaying canned responses, and the
//! HTTP-JSON client.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Annotation, MessageRecord};
use crate::error::{Error, Result};
use crate::taxonomy::{Level, Taxonomy};

/// The message view a backend sees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendMessage {
    pub message_id: String,
    pub text: String,
}

impl From<&MessageRecord> for BackendMessage {
    fn from(m: &MessageRecord) -> Self {
        BackendMessage {
            message_id: m.message_id.clone(),
            text: m.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedParams {
    pub main_target: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposedNode {
    pub id: String,
    pub level: Level,
    pub label: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub lexicon: BTreeSet<String>,
}

/// One taxonomy change proposed by a backend, with its recorded reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProposedChange {
    Add { node: ProposedNode, reason: String },
    Merge { ids: [String; 2], reason: String },
}

impl ProposedChange {
    pub fn add(node: ProposedNode, reason: &str) -> Self {
        ProposedChange::Add {
            node,
            reason: reason.to_string(),
        }
    }

    pub fn merge(a: &str, b: &str, reason: &str) -> Self {
        ProposedChange::Merge {
            ids: [a.to_string(), b.to_string()],
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageAssignment {
    pub message_id: String,
    pub labels: Vec<Annotation>,
}

/// Behavioral contract for taxonomy seeding, updates and annotation.
pub trait AnnotatorBackend {
    fn propose_seed(
        &mut self,
        batch: &[BackendMessage],
        params: &SeedParams,
    ) -> Result<Vec<ProposedChange>>;

    fn propose_update(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<ProposedChange>>;

    fn annotate(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<MessageAssignment>>;
}

// ---------------------------------------------------------------------------
// Wire format shared by the scripted and HTTP backends.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub op: String,
    pub taxonomy: Option<Taxonomy>,
    pub messages: Vec<BackendMessage>,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub changes: Option<Vec<ProposedChange>>,
    #[serde(default)]
    pub assignments: Option<Vec<MessageAssignment>>,
}

/// Content hash used to key canned responses.
pub fn request_hash(req: &WireRequest) -> String {
    let canonical = serde_json::to_string(req).expect("wire request serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

// ---------------------------------------------------------------------------
// Lexicon backend: fully offline and deterministic.
// ---------------------------------------------------------------------------

/// Deterministic backend driven by taxonomy trigger phrases.
///
/// Annotation matches SUB2 lexicon phrases case-insensitively against the
/// message text (confidence 1.0 per hit). Seeding replays an optional canned
/// taxonomy; updates never propose changes.
#[derive(Debug, Default)]
pub struct LexiconBackend {
    seed: Option<Taxonomy>,
}

impl LexiconBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: Taxonomy) -> Self {
        Self { seed: Some(seed) }
    }
}

impl AnnotatorBackend for LexiconBackend {
    fn propose_seed(
        &mut self,
        _batch: &[BackendMessage],
        _params: &SeedParams,
    ) -> Result<Vec<ProposedChange>> {
        let seed = self
            .seed
            .as_ref()
            .ok_or_else(|| Error::Backend("lexicon backend has no canned seed taxonomy".into()))?;
        // Parents before children so the adds replay in one pass.
        let mut nodes: Vec<_> = seed.nodes.values().cloned().collect();
        nodes.sort_by_key(|n| (n.level, n.id.clone()));
        Ok(nodes
            .into_iter()
            .map(|n| ProposedChange::Add {
                node: ProposedNode {
                    id: n.id,
                    level: n.level,
                    label: n.label,
                    parent_id: n.parent_id,
                    lexicon: n.lexicon,
                },
                reason: "seed taxonomy".to_string(),
            })
            .collect())
    }

    fn propose_update(
        &mut self,
        _taxonomy: &Taxonomy,
        _batch: &[BackendMessage],
    ) -> Result<Vec<ProposedChange>> {
        Ok(Vec::new())
    }

    fn annotate(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<MessageAssignment>> {
        let mut out = Vec::with_capacity(batch.len());
        for msg in batch {
            let text = msg.text.to_lowercase();
            // (first match position, sub2_id) for deterministic ordering
            let mut hits: Vec<(usize, &str)> = Vec::new();
            for node in taxonomy.nodes.values() {
                if node.level != Level::Sub2 {
                    continue;
                }
                let pos = node
                    .lexicon
                    .iter()
                    .filter(|p| !p.is_empty())
                    .filter_map(|p| text.find(&p.to_lowercase()))
                    .min();
                if let Some(pos) = pos {
                    hits.push((pos, &node.id));
                }
            }
            hits.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
            out.push(MessageAssignment {
                message_id: msg.message_id.clone(),
                labels: hits
                    .into_iter()
                    .map(|(_, id)| Annotation {
                        sub2_id: id.to_string(),
                        confidence: 1.0,
                    })
                    .collect(),
            });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Scripted backend: canned responses keyed by request hash.
// ---------------------------------------------------------------------------

/// Replays canned responses from `<dir>/<request-hash>.json`.
#[derive(Debug)]
pub struct ScriptedBackend {
    dir: PathBuf,
}

impl ScriptedBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Write a canned response for a request; returns the file path.
    pub fn record(&self, req: &WireRequest, resp: &WireResponse) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", request_hash(req)));
        let body = serde_json::to_string_pretty(resp)
            .map_err(|e| Error::Backend(format!("serialize response: {e}")))?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn lookup(&self, req: &WireRequest) -> Result<WireResponse> {
        let hash = request_hash(req);
        let path = self.dir.join(format!("{hash}.json"));
        let body = std::fs::read_to_string(&path).map_err(|_| {
            Error::Backend(format!(
                "no canned response {} for op `{}` ({} messages)",
                path.display(),
                req.op,
                req.messages.len()
            ))
        })?;
        serde_json::from_str(&body).map_err(|e| {
            Error::Backend(format!("malformed canned response {}: {e}", path.display()))
        })
    }
}

pub fn seed_request(batch: &[BackendMessage], params: &SeedParams) -> WireRequest {
    WireRequest {
        op: "seed".into(),
        taxonomy: None,
        messages: batch.to_vec(),
        params: serde_json::json!({ "main_target": params.main_target }),
    }
}

pub fn update_request(taxonomy: &Taxonomy, batch: &[BackendMessage]) -> WireRequest {
    WireRequest {
        op: "update".into(),
        taxonomy: Some(taxonomy.clone()),
        messages: batch.to_vec(),
        params: serde_json::json!({}),
    }
}

pub fn annotate_request(taxonomy: &Taxonomy, batch: &[BackendMessage]) -> WireRequest {
    WireRequest {
        op: "annotate".into(),
        taxonomy: Some(taxonomy.clone()),
        messages: batch.to_vec(),
        params: serde_json::json!({}),
    }
}

impl AnnotatorBackend for ScriptedBackend {
    fn propose_seed(
        &mut self,
        batch: &[BackendMessage],
        params: &SeedParams,
    ) -> Result<Vec<ProposedChange>> {
        let resp = self.lookup(&seed_request(batch, params))?;
        resp.changes
            .ok_or_else(|| Error::Backend("seed response missing `changes`".into()))
    }

    fn propose_update(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<ProposedChange>> {
        let resp = self.lookup(&update_request(taxonomy, batch))?;
        resp.changes
            .ok_or_else(|| Error::Backend("update response missing `changes`".into()))
    }

    fn annotate(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<MessageAssignment>> {
        let resp = self.lookup(&annotate_request(taxonomy, batch))?;
        resp.assignments
            .ok_or_else(|| Error::Backend("annotate response missing `assignments`".into()))
    }
}

// ---------------------------------------------------------------------------
// HTTP backend: POSTs the wire contract to an external service.
// ---------------------------------------------------------------------------

/// HTTP-JSON client for an external annotation service. Credentials come
/// from `PRODROME_BACKEND_TOKEN` only; nothing else is read from the
/// environment.
#[derive(Debug)]
pub struct HttpBackend {
    url: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: std::env::var("PRODROME_BACKEND_TOKEN").ok(),
        }
    }

    fn call(&self, req: &WireRequest) -> Result<WireResponse> {
        let mut builder = ureq::post(&self.url);
        if let Some(token) = &self.token {
            builder = builder.header("authorization", &format!("Bearer {token}"));
        }
        let mut resp = builder
            .send_json(req)
            .map_err(|e| Error::Backend(format!("POST {}: {e}", self.url)))?;
        resp.body_mut()
            .read_json::<WireResponse>()
            .map_err(|e| Error::Backend(format!("decode response from {}: {e}", self.url)))
    }
}

impl AnnotatorBackend for HttpBackend {
    fn propose_seed(
        &mut self,
        batch: &[BackendMessage],
        params: &SeedParams,
    ) -> Result<Vec<ProposedChange>> {
        self.call(&seed_request(batch, params))?
            .changes
            .ok_or_else(|| Error::Backend("seed response missing `changes`".into()))
    }

    fn propose_update(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<ProposedChange>> {
        self.call(&update_request(taxonomy, batch))?
            .changes
            .ok_or_else(|| Error::Backend("update response missing `changes`".into()))
    }

    fn annotate(
        &mut self,
        taxonomy: &Taxonomy,
        batch: &[BackendMessage],
    ) -> Result<Vec<MessageAssignment>> {
        self.call(&annotate_request(taxonomy, batch))?
            .assignments
            .ok_or_else(|| Error::Backend("annotate response missing `assignments`".into()))
    }
}
