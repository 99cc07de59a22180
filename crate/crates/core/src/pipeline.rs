//! Per-question orchestration: source selection, per-candidate query
//! formulation and execution, and cross-source evidence selection, plus
//! the baseline run modes used by the evaluation harness.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{select_evidence, CandidateBundle, CandidateOutcome, EvidenceBundle};
use crate::execution::{verbalize, ExecLimits, Executors, VerbalizeCaps};
use crate::formulation::{formulate, NativeQuery};
use crate::gateway::Provider;
use crate::registry::{BackendKind, Catalog};
use crate::selection::{select_sources, Decision, SelectionBudget, SelectionError};

/// How the pipeline engages the source pool for a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunMode {
    /// Full pipeline: k candidates, all executed, evidence-selected.
    Omni { k: usize },
    /// Commit to one source up front; no evidence-selection stage.
    KbRouting,
    /// Restrict the catalog to one backend, then route within it.
    SingleBackend { kind: BackendKind },
    /// Bypass selection with the gold-annotated source.
    OracleSource,
}

impl RunMode {
    /// Parses CLI-style mode strings: `omni`, `kb-routing`,
    /// `single:<kind>`, `oracle`.
    pub fn parse(s: &str, k: usize) -> Result<RunMode, PipelineError> {
        match s {
            "omni" => Ok(RunMode::Omni { k }),
            "kb-routing" => Ok(RunMode::KbRouting),
            "oracle" => Ok(RunMode::OracleSource),
            other => {
                if let Some(kind) = other.strip_prefix("single:") {
                    let kind = kind
                        .parse::<BackendKind>()
                        .map_err(|_| PipelineError::BadMode(other.to_string()))?;
                    Ok(RunMode::SingleBackend { kind })
                } else {
                    Err(PipelineError::BadMode(other.to_string()))
                }
            }
        }
    }
}

/// One candidate's full record: what was asked, what ran, what happened.
/// `query` is absent when formulation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub decision: Decision,
    pub query: Option<NativeQuery>,
    pub outcome: Option<CandidateOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formulation_error: Option<String>,
}

/// Wall-clock stage timings, milliseconds. Kept separate from the rest of
/// the trace so determinism checks can exclude them wholesale.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TraceTimings {
    pub selection_ms: f64,
    pub per_candidate_ms: Vec<CandidateTiming>,
    pub evidence_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CandidateTiming {
    pub kb_id: String,
    pub formulate_ms: f64,
    pub execute_ms: f64,
}

/// Complete per-question record; sufficient to recompute every metric
/// offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub question: String,
    pub mode: RunMode,
    pub decisions: Vec<Decision>,
    pub candidates: Vec<CandidateRecord>,
    pub evidence: Option<EvidenceBundle>,
    pub no_evidence: bool,
    pub warnings: Vec<String>,
    pub timings: TraceTimings,
}

impl QuestionTrace {
    /// The finally selected candidate (post evidence selection), if any.
    pub fn selected(&self) -> Option<&CandidateBundle> {
        let evidence = self.evidence.as_ref()?;
        evidence.candidates.get(evidence.selected_index)
    }

    /// Trace serialized with timings removed, for determinism comparison.
    pub fn comparable_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("trace serializes");
        v.as_object_mut().expect("trace is an object").remove("timings");
        v
    }

    /// The machine-readable answer summary printed by the CLI.
    pub fn to_answer_json(&self) -> serde_json::Value {
        let selected = self.selected().map(|c| {
            serde_json::json!({
                "route": c.decision.kind.as_str(),
                "kb": c.decision.kb_id,
            })
        });
        let candidates: Vec<serde_json::Value> = self
            .candidates
            .iter()
            .map(|c| {
                let status = match (&c.formulation_error, &c.outcome) {
                    (Some(_), _) => "formulation_error",
                    (_, Some(CandidateOutcome::Error { .. })) => "execution_error",
                    (_, Some(CandidateOutcome::Ok { .. })) => "ok",
                    _ => "not_executed",
                };
                serde_json::json!({
                    "route": c.decision.kind.as_str(),
                    "kb": c.decision.kb_id,
                    "query": c.query.as_ref().map(|q| q.text.clone()),
                    "grounded": c.query.as_ref().map(|q| q.grounded),
                    "status": status,
                })
            })
            .collect();
        serde_json::json!({
            "question_id": self.question_id,
            "mode": self.mode,
            "selected": selected,
            "evidence_text": self.evidence.as_ref().map(|e| e.evidence_text.clone()),
            "candidates": candidates,
            "warnings": self.warnings,
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("unknown run mode {0:?}")]
    BadMode(String),
    #[error("oracle mode requires a gold kb_id")]
    MissingOracleKb,
    #[error("oracle kb_id {0:?} is not registered")]
    UnknownOracleKb(String),
    #[error("catalog has no sources for this mode")]
    EmptyModeCatalog,
}

/// The engine: read-only shared state plus per-question orchestration.
pub struct Pipeline<P> {
    pub catalog: Catalog,
    pub provider: P,
    pub executors: Executors,
    pub limits: ExecLimits,
    pub caps: VerbalizeCaps,
}

impl<P: Provider> Pipeline<P> {
    pub fn new(catalog: Catalog, provider: P) -> Self {
        Pipeline {
            catalog,
            provider,
            executors: Executors::default(),
            limits: ExecLimits::default(),
            caps: VerbalizeCaps::default(),
        }
    }

    /// Runs the full pipeline for one question. `oracle_kb` is consulted
    /// only in [`RunMode::OracleSource`].
    pub async fn answer(
        &self,
        question_id: &str,
        question: &str,
        mode: RunMode,
        oracle_kb: Option<&str>,
    ) -> Result<QuestionTrace, PipelineError> {
        let mut warnings = Vec::new();
        let mut timings = TraceTimings::default();

        // Stage 1: routing decisions.
        let select_started = Instant::now();
        let (decisions, use_evidence_stage, catalog) = match mode {
            RunMode::Omni { k } => {
                let budget = SelectionBudget::new(k);
                let parsed =
                    select_sources(question, &self.catalog, &budget, &self.provider).await?;
                warnings.extend(parsed.warnings);
                (parsed.decisions, true, &self.catalog)
            }
            RunMode::KbRouting => {
                let budget = SelectionBudget::new(1);
                let parsed =
                    select_sources(question, &self.catalog, &budget, &self.provider).await?;
                warnings.extend(parsed.warnings);
                (parsed.decisions, false, &self.catalog)
            }
            RunMode::SingleBackend { kind } => {
                let filtered = self.catalog.filter_kind(kind);
                if filtered.is_empty() {
                    return Err(PipelineError::EmptyModeCatalog);
                }
                let budget = SelectionBudget::new(1);
                let parsed = select_sources(question, &filtered, &budget, &self.provider).await?;
                warnings.extend(parsed.warnings);
                // Descriptors are looked up from the full catalog below;
                // the filtered view only constrains the choice.
                (parsed.decisions, false, &self.catalog)
            }
            RunMode::OracleSource => {
                let kb_id = oracle_kb.ok_or(PipelineError::MissingOracleKb)?;
                let desc = self
                    .catalog
                    .lookup(kb_id)
                    .ok_or_else(|| PipelineError::UnknownOracleKb(kb_id.to_string()))?;
                let decision = Decision {
                    kind: desc.kind,
                    kb_id: desc.kb_id.clone(),
                    rank: 0,
                };
                (vec![decision], false, &self.catalog)
            }
        };
        timings.selection_ms = select_started.elapsed().as_secs_f64() * 1e3;

        // Stage 2+3: formulate and execute every candidate concurrently.
        // Failures are isolated per candidate.
        let tasks = decisions.iter().map(|decision| {
            let decision = decision.clone();
            async {
                let desc = catalog
                    .lookup(&decision.kb_id)
                    .expect("decision kb_ids are validated against the catalog");
                let mut timing = CandidateTiming {
                    kb_id: decision.kb_id.clone(),
                    ..CandidateTiming::default()
                };

                let started = Instant::now();
                let formulated = formulate(question, &decision, desc, &self.provider).await;
                timing.formulate_ms = started.elapsed().as_secs_f64() * 1e3;
                let query = match formulated {
                    Ok(q) => q,
                    Err(e) => {
                        return (
                            CandidateRecord {
                                decision,
                                query: None,
                                outcome: None,
                                formulation_error: Some(e.to_string()),
                            },
                            timing,
                        );
                    }
                };

                let started = Instant::now();
                let executed = self.executors.execute(desc, &query, &self.limits).await;
                timing.execute_ms = started.elapsed().as_secs_f64() * 1e3;
                let outcome = match executed {
                    Ok(outcome) => CandidateOutcome::Ok { outcome },
                    Err(e) => CandidateOutcome::Error {
                        message: e.to_string(),
                    },
                };
                (
                    CandidateRecord {
                        decision,
                        query: Some(query),
                        outcome: Some(outcome),
                        formulation_error: None,
                    },
                    timing,
                )
            }
        });
        let mut candidates: Vec<CandidateRecord> = Vec::new();
        for (record, timing) in futures::future::join_all(tasks).await {
            if let Some(e) = &record.formulation_error {
                warnings.push(format!(
                    "candidate {} dropped: {e}",
                    record.decision.kb_id
                ));
            }
            timings.per_candidate_ms.push(timing);
            candidates.push(record);
        }

        // Stage 4: evidence selection over the surviving candidates.
        // Formulation failures never reach the prompt; execution errors do
        // (they are informative), unless every execution failed.
        let any_success = candidates
            .iter()
            .any(|c| matches!(c.outcome, Some(CandidateOutcome::Ok { .. })));
        let evidence = if !any_success {
            warnings.push("no candidate produced evidence".to_string());
            None
        } else {
            let bundles: Vec<CandidateBundle> = candidates
                .iter()
                .filter_map(|record| {
                    let query = record.query.clone()?;
                    let outcome = record.outcome.clone()?;
                    let verbalized = match &outcome {
                        CandidateOutcome::Ok { outcome } => verbalize(outcome, &self.caps),
                        CandidateOutcome::Error { message } => message.clone(),
                    };
                    let context_text = catalog
                        .lookup(&record.decision.kb_id)
                        .map(|d| d.context_text.clone())
                        .unwrap_or_default();
                    Some(CandidateBundle {
                        decision: record.decision.clone(),
                        query,
                        outcome,
                        verbalized,
                        context_text,
                    })
                })
                .collect();
            let evidence_started = Instant::now();
            let bundle = if use_evidence_stage {
                select_evidence(question, bundles, &self.provider)
                    .await
                    .expect("bundles is non-empty when a candidate succeeded")
            } else {
                // Routed modes carry exactly one candidate; its outcome is
                // the evidence with no selection stage.
                select_evidence(question, bundles, &NeverCalled)
                    .await
                    .expect("bundles is non-empty when a candidate succeeded")
            };
            timings.evidence_ms = evidence_started.elapsed().as_secs_f64() * 1e3;
            warnings.extend(bundle.warnings.clone());
            Some(bundle)
        };

        Ok(QuestionTrace {
            question_id: question_id.to_string(),
            question: question.to_string(),
            mode,
            decisions,
            candidates,
            no_evidence: evidence.is_none(),
            evidence,
            warnings,
            timings,
        })
    }
}

/// Provider stand-in for stages that must not reach the LLM.
struct NeverCalled;

impl Provider for NeverCalled {
    fn complete<'a>(
        &'a self,
        request: &'a crate::gateway::ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<crate::gateway::ChatResponse, crate::gateway::GatewayError>>
    {
        let tag = request.tag.clone();
        Box::pin(async move {
            Err(crate::gateway::GatewayError::BadRequest(format!(
                "unexpected LLM call for tag {tag:?} in a routed mode"
            )))
        })
    }
}
