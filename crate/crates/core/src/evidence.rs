//! Cross-source evidence selection: given the per-source executor
//! outputs, pick the candidate whose result best answers the question.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::ExecOutcome;
use crate::formulation::NativeQuery;
use crate::gateway::{extract_json_object, ChatRequest, GatewayError, Provider};
use crate::selection::Decision;

const EVIDENCE_SYSTEM: &str =
    "You are a result selector. Pick the candidate whose result best answers the question.";

const RESPONSE_INSTRUCTION: &str = r#"Respond with JSON: {"selected": <integer index>}"#;

const CORRECTIVE_INSTRUCTION: &str = "Your previous response was not valid JSON in the \
required shape. Respond with only the JSON object.";

/// Execution result attached to a candidate: either a normalized outcome
/// or the error text from a failed execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateOutcome {
    Ok { outcome: ExecOutcome },
    Error { message: String },
}

/// One fully processed candidate: routing decision, native query,
/// execution result, and its deterministic verbalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBundle {
    pub decision: Decision,
    pub query: NativeQuery,
    pub outcome: CandidateOutcome,
    /// Verbalized outcome on success; the error text on failure.
    pub verbalized: String,
    /// Structural context of the source, shown to the selector.
    pub context_text: String,
}

/// The chosen evidence plus everything it was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub candidates: Vec<CandidateBundle>,
    pub selected_index: usize,
    pub evidence_text: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("evidence selection requires at least one candidate")]
    NoCandidates,
}

pub fn render_evidence_prompt(
    question: &str,
    candidates: &[CandidateBundle],
) -> Result<ChatRequest, EvidenceError> {
    if candidates.is_empty() {
        return Err(EvidenceError::NoCandidates);
    }
    let mut user = format!(
        "Question: {question}\n\nCandidates (each prefixed with its integer index in brackets, \
         e.g. [0], [1], [2]):\n"
    );
    for (i, candidate) in candidates.iter().enumerate() {
        user.push_str(&format!(
            "\n[{i}] {} | {}\nquery: {}\ncontext: {}\nresult: {}\n",
            candidate.decision.kind,
            candidate.decision.kb_id,
            candidate.query.text,
            candidate.context_text,
            candidate.verbalized,
        ));
    }
    user.push_str(&format!("\n{RESPONSE_INSTRUCTION}"));
    Ok(ChatRequest::new("evidence", EVIDENCE_SYSTEM, user))
}

fn parse_selected(raw: &str, n: usize) -> Result<usize, GatewayError> {
    let json = extract_json_object(raw)?;
    let index = json
        .get("selected")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| GatewayError::MalformedJson("missing integer \"selected\"".into()))?;
    let index = index as usize;
    if index >= n {
        return Err(GatewayError::MalformedJson(format!(
            "selected index {index} out of range for {n} candidates"
        )));
    }
    Ok(index)
}

/// Selects the winning candidate. A single candidate wins without an LLM
/// call; a malformed or out-of-range response gets one corrective retry,
/// then falls back to index 0 (the top-ranked candidate) with a warning.
pub async fn select_evidence<P: Provider>(
    question: &str,
    candidates: Vec<CandidateBundle>,
    provider: &P,
) -> Result<EvidenceBundle, EvidenceError> {
    if candidates.is_empty() {
        return Err(EvidenceError::NoCandidates);
    }
    let mut warnings = Vec::new();
    let selected_index = if candidates.len() == 1 {
        0
    } else {
        let request = render_evidence_prompt(question, &candidates)?;
        match attempt(provider, &request, candidates.len()).await {
            Ok(i) => i,
            Err(first_error) => {
                let retry = ChatRequest::new(
                    request.tag.clone(),
                    request.system.clone(),
                    format!("{}\n\n{CORRECTIVE_INSTRUCTION}", request.user),
                );
                match attempt(provider, &retry, candidates.len()).await {
                    Ok(i) => {
                        warnings.push(format!("evidence selection retried once: {first_error}"));
                        i
                    }
                    Err(second_error) => {
                        warnings.push(format!(
                            "evidence selection fell back to top-ranked candidate: {second_error}"
                        ));
                        0
                    }
                }
            }
        }
    };

    let evidence_text = candidates[selected_index].verbalized.clone();
    Ok(EvidenceBundle {
        candidates,
        selected_index,
        evidence_text,
        warnings,
    })
}

async fn attempt<P: Provider>(
    provider: &P,
    request: &ChatRequest,
    n: usize,
) -> Result<usize, GatewayError> {
    let response = provider.complete(request).await?;
    parse_selected(&response.text, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::{ExecOutcome, Value};
    use crate::gateway::{MatchKey, ScriptEntry, ScriptedProvider};
    use crate::registry::BackendKind;

    fn candidate(kind: BackendKind, kb_id: &str, verbalized: &str) -> CandidateBundle {
        CandidateBundle {
            decision: Decision {
                kind,
                kb_id: kb_id.into(),
                rank: 0,
            },
            query: NativeQuery {
                kind,
                kb_id: kb_id.into(),
                text: format!("query for {kb_id}"),
                raw_llm_text: String::new(),
                grounded: true,
            },
            outcome: CandidateOutcome::Ok {
                outcome: ExecOutcome::Rows {
                    columns: vec!["x".into()],
                    rows: vec![vec![Value::int(1)]],
                    truncated: 0,
                },
            },
            verbalized: verbalized.into(),
            context_text: format!("{kb_id} context"),
        }
    }

    fn two_candidates() -> Vec<CandidateBundle> {
        vec![
            candidate(BackendKind::Sql, "concert_singer", "x\n1"),
            candidate(BackendKind::Search, "nfcorpus", "1. d1 (0.5000) passage"),
        ]
    }

    #[test]
    fn prompt_indexes_every_candidate() {
        let req = render_evidence_prompt("q?", &two_candidates()).unwrap();
        assert!(req.user.contains("[0] SQL | concert_singer"));
        assert!(req.user.contains("[1] SEARCH | nfcorpus"));
        assert!(req.user.ends_with(RESPONSE_INSTRUCTION));
        assert!(req.system.contains("Pick the candidate whose result"));
    }

    #[test]
    fn error_candidate_text_appears_in_prompt() {
        let mut candidates = two_candidates();
        candidates[1].outcome = CandidateOutcome::Error {
            message: "execution timed out".into(),
        };
        candidates[1].verbalized = "execution timed out".into();
        let req = render_evidence_prompt("q?", &candidates).unwrap();
        assert!(req.user.contains("result: execution timed out"));
    }

    #[test]
    fn no_candidates_is_an_error() {
        assert!(matches!(
            render_evidence_prompt("q", &[]),
            Err(EvidenceError::NoCandidates)
        ));
    }

    #[tokio::test]
    async fn scripted_index_is_selected() {
        let provider = ScriptedProvider::new(vec![ScriptEntry {
            tag: "evidence".into(),
            key: MatchKey::Substring("Question:".into()),
            response: r#"{"selected": 1}"#.into(),
        }]);
        let bundle = select_evidence("q", two_candidates(), &provider)
            .await
            .unwrap();
        assert_eq!(bundle.selected_index, 1);
        assert_eq!(bundle.evidence_text, "1. d1 (0.5000) passage");
        assert!(bundle.warnings.is_empty());
    }

    #[tokio::test]
    async fn out_of_range_twice_falls_back_to_zero() {
        let provider = ScriptedProvider::new(vec![ScriptEntry {
            tag: "evidence".into(),
            key: MatchKey::Substring("Question:".into()),
            response: r#"{"selected": 7}"#.into(),
        }]);
        let bundle = select_evidence("q", two_candidates(), &provider)
            .await
            .unwrap();
        assert_eq!(bundle.selected_index, 0);
        assert_eq!(bundle.warnings.len(), 1);
    }

    #[tokio::test]
    async fn retry_recovers_from_malformed_first_response() {
        let provider = ScriptedProvider::new(vec![
            ScriptEntry {
                tag: "evidence".into(),
                key: MatchKey::Substring(CORRECTIVE_INSTRUCTION.into()),
                response: r#"{"selected": 1}"#.into(),
            },
            ScriptEntry {
                tag: "evidence".into(),
                key: MatchKey::Substring("Question:".into()),
                response: "the second one looks right".into(),
            },
        ]);
        let bundle = select_evidence("q", two_candidates(), &provider)
            .await
            .unwrap();
        assert_eq!(bundle.selected_index, 1);
        assert_eq!(bundle.warnings.len(), 1);
    }

    #[tokio::test]
    async fn single_candidate_skips_the_llm() {
        struct Panicking;
        impl Provider for Panicking {
            fn complete<'a>(
                &'a self,
                _request: &'a ChatRequest,
            ) -> futures::future::BoxFuture<'a, Result<crate::gateway::ChatResponse, GatewayError>>
            {
                panic!("provider must not be called for a single candidate")
            }
        }
        let one = vec![candidate(BackendKind::Sql, "concert_singer", "x\n1")];
        let bundle = select_evidence("q", one, &Panicking).await.unwrap();
        assert_eq!(bundle.selected_index, 0);
    }
}
