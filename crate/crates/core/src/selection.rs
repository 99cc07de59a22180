//! Source selection: the model reads the full rendered catalog with the
//! question and returns a ranked shortlist of candidate sources.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{extract_json_object, ChatRequest, GatewayError, Provider};
use crate::registry::{BackendKind, Catalog, RegistryError};

pub const DEFAULT_SELECTION_K: usize = 3;

const SELECTION_SYSTEM: &str = "You are a query router. Given a question, decide which backend \
to use (SEARCH, SQL, SPARQL, or CYPHER) and which knowledge base to query. Some queries are \
ambiguous and may match multiple knowledge bases, return up to <k> routing decisions, most \
likely first; return fewer if you are confident.";

const RESPONSE_INSTRUCTION: &str =
    r#"Respond with JSON: {"decisions": [{"route_type": "...", "kb_id": "..."}, ...]}"#;

pub const CORRECTIVE_INSTRUCTION: &str = "Your previous response was not valid JSON in the \
required shape. Respond with only the JSON object.";

/// One ranked routing decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: BackendKind,
    pub kb_id: String,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionBudget {
    pub k: usize,
}

impl Default for SelectionBudget {
    fn default() -> Self {
        SelectionBudget {
            k: DEFAULT_SELECTION_K,
        }
    }
}

impl SelectionBudget {
    pub fn new(k: usize) -> Self {
        SelectionBudget { k: k.max(1) }
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Catalog(#[from] RegistryError),
    #[error("no valid routing decisions survived parsing")]
    EmptySelection,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("source selection failed after retry: {0}")]
    SelectionFailed(String),
}

/// Parsed decisions plus warnings about entries that were dropped.
#[derive(Debug, Default)]
pub struct ParsedDecisions {
    pub decisions: Vec<Decision>,
    pub warnings: Vec<String>,
}

pub fn render_selection_prompt(
    question: &str,
    catalog: &Catalog,
    budget: &SelectionBudget,
) -> Result<ChatRequest, SelectionError> {
    let rendered = catalog.render(budget.k)?;
    let system = SELECTION_SYSTEM.replace("<k>", &budget.k.to_string());
    let user = format!("{rendered}\n\nQuestion: {question}\n\n{RESPONSE_INSTRUCTION}");
    Ok(ChatRequest::new("select", system, user))
}

#[derive(Deserialize)]
struct RawDecisions {
    #[serde(default)]
    decisions: Vec<RawDecision>,
}

#[derive(Deserialize)]
struct RawDecision {
    #[serde(default)]
    route_type: String,
    #[serde(default)]
    kb_id: String,
}

/// Validates raw model output against the catalog: unknown kb_ids and
/// kind-mismatched entries are dropped with warnings, duplicates keep
/// their first occurrence, and the survivors are truncated to `k` with
/// dense ranks.
pub fn parse_decisions(
    raw: &str,
    catalog: &Catalog,
    budget: &SelectionBudget,
) -> Result<ParsedDecisions, SelectionError> {
    let json = extract_json_object(raw)?;
    let parsed: RawDecisions = serde_json::from_value(json)
        .map_err(|e| SelectionError::Gateway(GatewayError::MalformedJson(e.to_string())))?;

    let mut out = ParsedDecisions::default();
    for entry in parsed.decisions {
        let Some(desc) = catalog.lookup(&entry.kb_id) else {
            out.warnings
                .push(format!("dropped decision for unknown kb_id {:?}", entry.kb_id));
            continue;
        };
        let Ok(kind) = entry.route_type.parse::<BackendKind>() else {
            out.warnings.push(format!(
                "dropped decision for {:?}: unknown route_type {:?}",
                entry.kb_id, entry.route_type
            ));
            continue;
        };
        if kind != desc.kind {
            out.warnings.push(format!(
                "dropped decision for {:?}: route_type {} does not match catalog kind {}",
                entry.kb_id, kind, desc.kind
            ));
            continue;
        }
        if out.decisions.iter().any(|d| d.kb_id == entry.kb_id) {
            out.warnings
                .push(format!("dropped duplicate decision for {:?}", entry.kb_id));
            continue;
        }
        if out.decisions.len() >= budget.k {
            out.warnings.push(format!(
                "dropped decision for {:?}: budget k={} exhausted",
                entry.kb_id, budget.k
            ));
            continue;
        }
        let rank = out.decisions.len();
        out.decisions.push(Decision {
            kind,
            kb_id: entry.kb_id,
            rank,
        });
    }

    if out.decisions.is_empty() {
        return Err(SelectionError::EmptySelection);
    }
    Ok(out)
}

/// Runs the selection prompt, retrying once with a corrective instruction
/// when the first response fails to parse into any valid decision.
pub async fn select_sources<P: Provider>(
    question: &str,
    catalog: &Catalog,
    budget: &SelectionBudget,
    provider: &P,
) -> Result<ParsedDecisions, SelectionError> {
    let request = render_selection_prompt(question, catalog, budget)?;
    let response = provider.complete(&request).await?;
    let first_error = match parse_decisions(&response.text, catalog, budget) {
        Ok(parsed) => return Ok(parsed),
        Err(e @ (SelectionError::EmptySelection | SelectionError::Gateway(_))) => e,
        Err(e) => return Err(e),
    };

    let retry = ChatRequest::new(
        request.tag.clone(),
        request.system.clone(),
        format!("{}\n\n{CORRECTIVE_INSTRUCTION}", request.user),
    );
    let response = provider
        .complete(&retry)
        .await
        .map_err(|e| SelectionError::SelectionFailed(e.to_string()))?;
    match parse_decisions(&response.text, catalog, budget) {
        Ok(mut parsed) => {
            parsed
                .warnings
                .push(format!("selection retried once: {first_error}"));
            Ok(parsed)
        }
        Err(e) => Err(SelectionError::SelectionFailed(e.to_string())),
    }
}
