//! Native query formulation: translates the question into an executable
//! per-source query (SQL, SPARQL, Cypher) grounded in the source's
//! context, or rewrites it into a retrieval query for document search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, GatewayError, Provider};
use crate::registry::{BackendKind, SourceDescriptor};
use crate::selection::Decision;
use crate::validation;

const SQL_SYSTEM: &str = "You are a text-to-SQL translator. Output only the SQL query.";
const SPARQL_SYSTEM: &str = "You are a text-to-SPARQL translator. Output only the SPARQL query.";
const CYPHER_SYSTEM: &str = "You are a text-to-Cypher translator. Output only the Cypher query.";

const SEARCH_SYSTEM: &str = "You are a search query optimizer for a dense retriever. Given the \
user query and a description of the target corpus, write a hypothetical passage that would be \
relevant evidence for the query, written in the register, style, and approximate length of \
documents in that corpus. The passage will be embedded and matched against real corpus \
documents, so favor concrete, in-domain content over generic phrasing.\n\nBegin your output \
with the user query verbatim on its own line, just the query text, not the 'Question:' label \
that precedes it, then on the next line write the hypothetical passage. This keeps the literal \
query terms in the embedding alongside the semantic expansion.\n\nIf the query is a short topic \
stub or short keyword-style query (just a handful of words, often lowercase and without \
punctuation), do NOT write a passage, output the verbatim query and nothing else. The bare term \
already gives a strong dense-retrieval signal, and a hallucinated passage tends to lock onto \
one specific aspect that may not match the gold document.\n\nOutput only the verbatim query \
followed by the passage (or for a stub query, only the verbatim query), no preamble, no \
quotes, no labels.";

/// An executable query bound to its target source. For Search sources,
/// `text` is the retriever query (question first line, optional
/// hypothetical passage after).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeQuery {
    pub kind: BackendKind,
    pub kb_id: String,
    pub text: String,
    pub raw_llm_text: String,
    pub grounded: bool,
}

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("formulation produced an empty query for {kb_id}")]
    EmptyQuery { kb_id: String },
    #[error("decision kb_id {decision} does not match descriptor kb_id {descriptor}")]
    KbMismatch { decision: String, descriptor: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Removes one outermost Markdown code-fence wrapper (with an optional
/// language tag) and trims surrounding whitespace; otherwise identity.
pub fn strip_code_fences(text: &str) -> String {
    let trimmed = text.trim();
    let lines: Vec<&str> = trimmed.lines().collect();
    if lines.len() >= 2 {
        let first = lines[0].trim();
        let last = lines[lines.len() - 1].trim();
        let opens = first.len() >= 3
            && first.starts_with("```")
            && first[3..].chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-');
        if opens && last == "```" {
            return lines[1..lines.len() - 1].join("\n").trim().to_string();
        }
    }
    trimmed.to_string()
}

fn user_prompt(context_text: &str, question: &str, lang: &str) -> String {
    format!("{context_text}\n\nQuestion: {question}\n\nGenerate the {lang} query.")
}

fn grounding_verdict(kind: BackendKind, query_text: &str, context_text: &str) -> bool {
    match validation::parse_context(kind, context_text) {
        Ok(schema) => validation::check_grounding(kind, query_text, &schema).grounded,
        // An unparseable context cannot convict the query; grounding is
        // advisory and execution remains the authoritative signal.
        Err(_) => true,
    }
}

/// Formulates the native query for one routing decision.
pub async fn formulate<P: Provider>(
    question: &str,
    decision: &Decision,
    desc: &SourceDescriptor,
    provider: &P,
) -> Result<NativeQuery, FormulationError> {
    if decision.kb_id != desc.kb_id {
        return Err(FormulationError::KbMismatch {
            decision: decision.kb_id.clone(),
            descriptor: desc.kb_id.clone(),
        });
    }
    if desc.kind == BackendKind::Search {
        return rewrite_search_query(question, desc, provider).await;
    }

    let (system, lang, tag) = match desc.kind {
        BackendKind::Sql => (SQL_SYSTEM, "SQL", "formulate.sql"),
        BackendKind::Sparql => (SPARQL_SYSTEM, "SPARQL", "formulate.sparql"),
        BackendKind::Cypher => (CYPHER_SYSTEM, "CYPHER", "formulate.cypher"),
        BackendKind::Search => unreachable!(),
    };
    let request = ChatRequest::new(tag, system, user_prompt(&desc.context_text, question, lang));
    let response = provider.complete(&request).await?;
    let text = strip_code_fences(&response.text);
    if text.is_empty() {
        return Err(FormulationError::EmptyQuery {
            kb_id: desc.kb_id.clone(),
        });
    }
    let grounded = grounding_verdict(desc.kind, &text, &desc.context_text);
    Ok(NativeQuery {
        kind: desc.kind,
        kb_id: desc.kb_id.clone(),
        text,
        raw_llm_text: response.text,
        grounded,
    })
}

/// Rewrites the question into a retriever query: the question verbatim on
/// the first line, optionally followed by a hypothetical passage. If the
/// model's first line is not the question, the question is prepended so
/// the literal query terms always reach the retriever.
pub async fn rewrite_search_query<P: Provider>(
    question: &str,
    desc: &SourceDescriptor,
    provider: &P,
) -> Result<NativeQuery, FormulationError> {
    let request = ChatRequest::new(
        "rewrite.search",
        SEARCH_SYSTEM,
        user_prompt(&desc.context_text, question, "SEARCH"),
    );
    let response = provider.complete(&request).await?;
    let stripped = strip_code_fences(&response.text);
    if stripped.is_empty() {
        return Err(FormulationError::EmptyQuery {
            kb_id: desc.kb_id.clone(),
        });
    }
    let question_line = question.trim();
    let text = if stripped.lines().next().map(str::trim) == Some(question_line) {
        stripped
    } else {
        format!("{question_line}\n{stripped}")
    };
    Ok(NativeQuery {
        kind: BackendKind::Search,
        kb_id: desc.kb_id.clone(),
        text,
        raw_llm_text: response.text,
        grounded: true,
    })
}
