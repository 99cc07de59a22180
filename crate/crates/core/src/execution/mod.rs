//! Per-backend query execution and deterministic result verbalization.
//!
//! All executors are read-only. Outcomes are normalized into a small
//! tagged union so that downstream evidence selection and execution-match
//! scoring handle every backend uniformly.

mod cypher;
mod search;
mod sparql;
mod sql;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::NativeQuery;
use crate::registry::{ConnectionSpec, SourceDescriptor};

pub use search::{
    build_index, retrieve_documents, tokenize, Document, DocumentIndex, BM25_B, BM25_K1,
};

/// Default per-execution limits.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_ROWS: usize = 500;
/// Concurrent in-flight requests per remote endpoint.
pub const DEFAULT_PER_ENDPOINT_CAP: usize = 2;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecLimits {
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_rows: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            timeout: DEFAULT_TIMEOUT,
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

mod duration_secs {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        d.as_secs_f64().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("execution timed out")]
    Timeout,
    #[error("query syntax error: {0}")]
    QuerySyntax(String),
    #[error("backend error: {0}")]
    BackendError(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("corpus parse error: {0}")]
    CorpusParse(String),
    #[error("query kind {query} cannot run on a {backend} source")]
    KindMismatch { query: String, backend: String },
}

/// A scalar cell value plus the original lexical form it was parsed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub kind: ValueKind,
    pub lexical: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum ValueKind {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Text,
}

impl Value {
    pub fn null() -> Self {
        Value {
            kind: ValueKind::Null,
            lexical: String::new(),
        }
    }

    pub fn bool(b: bool) -> Self {
        Value {
            kind: ValueKind::Bool(b),
            lexical: b.to_string(),
        }
    }

    pub fn int(i: i64) -> Self {
        Value {
            kind: ValueKind::Int(i),
            lexical: i.to_string(),
        }
    }

    /// Non-finite reals are preserved as text; `Real` values are always
    /// finite.
    pub fn real(v: f64) -> Self {
        if v.is_finite() {
            Value {
                lexical: fmt_real(v),
                kind: ValueKind::Real(v),
            }
        } else {
            Value::text(v.to_string())
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value {
            kind: ValueKind::Text,
            lexical: s.into(),
        }
    }

    pub fn with_lexical(mut self, lexical: impl Into<String>) -> Self {
        self.lexical = lexical.into();
        self
    }

    /// Deterministic rendering: integers bare, reals with up to six
    /// significant digits, text verbatim.
    pub fn render(&self) -> String {
        match &self.kind {
            ValueKind::Null => String::new(),
            ValueKind::Bool(b) => b.to_string(),
            ValueKind::Int(i) => i.to_string(),
            ValueKind::Real(v) => fmt_real(*v),
            ValueKind::Text => self.lexical.clone(),
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Value {
        match v {
            serde_json::Value::Null => Value::null(),
            serde_json::Value::Bool(b) => Value::bool(*b),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::int(i)
                } else {
                    Value::real(n.as_f64().unwrap_or(f64::NAN)).with_lexical(n.to_string())
                }
            }
            serde_json::Value::String(s) => Value::text(s.clone()),
            other => Value::text(other.to_string()),
        }
    }
}

/// Up to six significant digits, trailing zeros trimmed.
pub(crate) fn fmt_real(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).clamp(0, 17) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A ranked retrieved passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub score: f64,
    pub text: String,
}

/// Tagged union of backend result shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ExecOutcome {
    /// SQL result set, tuples in projection order.
    Rows {
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
        /// Number of rows dropped by the executor's `max_rows` limit.
        #[serde(default, skip_serializing_if = "is_zero")]
        truncated: usize,
    },
    /// SPARQL solutions. An ASK result sets `ask` and carries no bindings.
    Bindings {
        vars: Vec<String>,
        bindings: Vec<BTreeMap<String, Value>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ask: Option<bool>,
        #[serde(default, skip_serializing_if = "is_zero")]
        truncated: usize,
    },
    /// Property-graph records with graph values serialized to text.
    Records {
        keys: Vec<String>,
        records: Vec<Vec<Value>>,
        #[serde(default, skip_serializing_if = "is_zero")]
        truncated: usize,
    },
    /// Ranked passages, sorted by score descending, doc_id ascending on
    /// ties.
    Passages {
        items: Vec<Passage>,
        #[serde(default, skip_serializing_if = "is_zero")]
        truncated: usize,
    },
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl ExecOutcome {
    /// True when the execution produced no result items at all.
    pub fn is_empty(&self) -> bool {
        match self {
            ExecOutcome::Rows { rows, .. } => rows.is_empty(),
            ExecOutcome::Bindings { bindings, ask, .. } => bindings.is_empty() && ask.is_none(),
            ExecOutcome::Records { records, .. } => records.is_empty(),
            ExecOutcome::Passages { items, .. } => items.is_empty(),
        }
    }

    fn item_count(&self) -> usize {
        match self {
            ExecOutcome::Rows { rows, .. } => rows.len(),
            ExecOutcome::Bindings { bindings, ask, .. } => {
                bindings.len() + usize::from(ask.is_some())
            }
            ExecOutcome::Records { records, .. } => records.len(),
            ExecOutcome::Passages { items, .. } => items.len(),
        }
    }

    fn truncated(&self) -> usize {
        match self {
            ExecOutcome::Rows { truncated, .. }
            | ExecOutcome::Bindings { truncated, .. }
            | ExecOutcome::Records { truncated, .. }
            | ExecOutcome::Passages { truncated, .. } => *truncated,
        }
    }
}

// ---------------------------------------------------------------------------
// Verbalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct VerbalizeCaps {
    pub max_items: usize,
    pub max_item_chars: usize,
}

impl Default for VerbalizeCaps {
    fn default() -> Self {
        VerbalizeCaps {
            max_items: 50,
            max_item_chars: 2000,
        }
    }
}

fn cap_item(s: String, caps: &VerbalizeCaps) -> String {
    if s.chars().count() <= caps.max_item_chars {
        s
    } else {
        s.chars().take(caps.max_item_chars).collect()
    }
}

/// Deterministic textual rendering of an outcome for LLM consumption.
/// Shows at most `max_items` items; dropped items (including executor-side
/// truncation) are summarized with a trailing "... (N more)" marker.
pub fn verbalize(outcome: &ExecOutcome, caps: &VerbalizeCaps) -> String {
    let mut lines: Vec<String> = Vec::new();
    let shown;

    match outcome {
        ExecOutcome::Rows { columns, rows, .. } => {
            lines.push(columns.join("\t"));
            shown = rows.len().min(caps.max_items);
            for row in rows.iter().take(shown) {
                let rendered: Vec<String> = row.iter().map(Value::render).collect();
                lines.push(cap_item(rendered.join("\t"), caps));
            }
        }
        ExecOutcome::Bindings {
            vars,
            bindings,
            ask,
            ..
        } => {
            if let Some(b) = ask {
                lines.push(b.to_string());
                shown = 0;
            } else {
                shown = bindings.len().min(caps.max_items);
                for solution in bindings.iter().take(shown) {
                    let pairs: Vec<String> = vars
                        .iter()
                        .map(|v| {
                            let value = solution.get(v).map(Value::render).unwrap_or_default();
                            format!("{v}={value}")
                        })
                        .collect();
                    lines.push(cap_item(pairs.join(", "), caps));
                }
            }
        }
        ExecOutcome::Records { records, .. } => {
            shown = records.len().min(caps.max_items);
            for record in records.iter().take(shown) {
                let rendered: Vec<String> = record.iter().map(Value::render).collect();
                lines.push(cap_item(rendered.join("\t"), caps));
            }
        }
        ExecOutcome::Passages { items, .. } => {
            shown = items.len().min(caps.max_items);
            for (rank, p) in items.iter().take(shown).enumerate() {
                let one_line = p.text.replace(['\n', '\r'], " ");
                lines.push(cap_item(
                    format!("{}. {} ({:.4}) {}", rank + 1, p.doc_id, p.score, one_line),
                    caps,
                ));
            }
        }
    }

    let hidden = outcome.item_count().saturating_sub(
        shown + usize::from(matches!(outcome, ExecOutcome::Bindings { ask: Some(_), .. })),
    ) + outcome.truncated();
    if hidden > 0 {
        lines.push(format!("... ({hidden} more)"));
    }
    lines.join("\n")
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Shared executor state: lazily built corpus indexes, a pooled HTTP
/// client, and per-endpoint concurrency caps for remote backends.
pub struct Executors {
    http: reqwest::Client,
    indexes: Mutex<HashMap<String, Arc<DocumentIndex>>>,
    endpoint_sems: Mutex<HashMap<String, Arc<tokio::sync::Semaphore>>>,
    per_endpoint_cap: usize,
}

impl Default for Executors {
    fn default() -> Self {
        Executors::new(DEFAULT_PER_ENDPOINT_CAP)
    }
}

impl Executors {
    pub fn new(per_endpoint_cap: usize) -> Self {
        Executors {
            http: reqwest::Client::new(),
            indexes: Mutex::new(HashMap::new()),
            endpoint_sems: Mutex::new(HashMap::new()),
            per_endpoint_cap: per_endpoint_cap.max(1),
        }
    }

    /// Index for a Search source, built on first use and cached by kb_id.
    pub fn index_for(&self, desc: &SourceDescriptor) -> Result<Arc<DocumentIndex>, ExecError> {
        let ConnectionSpec::Corpus { path, .. } = &desc.connection else {
            return Err(ExecError::KindMismatch {
                query: "SEARCH".into(),
                backend: desc.kind.to_string(),
            });
        };
        let mut indexes = self.indexes.lock().unwrap();
        if let Some(index) = indexes.get(&desc.kb_id) {
            return Ok(index.clone());
        }
        let index = Arc::new(build_index(path)?);
        indexes.insert(desc.kb_id.clone(), index.clone());
        Ok(index)
    }

    fn endpoint_permit(&self, endpoint: &str) -> Arc<tokio::sync::Semaphore> {
        let mut sems = self.endpoint_sems.lock().unwrap();
        sems.entry(endpoint.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Semaphore::new(self.per_endpoint_cap)))
            .clone()
    }

    /// Executes a native query on its source, applying `limits`.
    pub async fn execute(
        &self,
        desc: &SourceDescriptor,
        query: &NativeQuery,
        limits: &ExecLimits,
    ) -> Result<ExecOutcome, ExecError> {
        if query.kind != desc.kind {
            return Err(ExecError::KindMismatch {
                query: query.kind.to_string(),
                backend: desc.kind.to_string(),
            });
        }
        match &desc.connection {
            ConnectionSpec::Corpus { embedding_url, .. } => {
                let index = self.index_for(desc)?;
                match embedding_url {
                    None => Ok(retrieve_documents(&index, &query.text, 10)),
                    Some(url) => {
                        search::retrieve_embedding(&self.http, url, &index, &query.text, 10, limits)
                            .await
                    }
                }
            }
            ConnectionSpec::SqlFile { path } => {
                let path = path.clone();
                let sql = query.text.clone();
                let limits = *limits;
                tokio::task::spawn_blocking(move || sql::exec_sql(&path, &sql, &limits))
                    .await
                    .map_err(|e| ExecError::BackendError(format!("executor task failed: {e}")))?
            }
            ConnectionSpec::SparqlEndpoint { url } => {
                let sem = self.endpoint_permit(url);
                let _permit = sem.acquire().await.expect("semaphore closed");
                sparql::exec_sparql(&self.http, url, &query.text, limits).await
            }
            ConnectionSpec::GraphEndpoint {
                url,
                database,
                credentials_ref,
            } => {
                let sem = self.endpoint_permit(url);
                let _permit = sem.acquire().await.expect("semaphore closed");
                cypher::exec_cypher(
                    &self.http,
                    url,
                    database,
                    credentials_ref.as_deref(),
                    &query.text,
                    limits,
                )
                .await
            }
        }
    }
}
