//! Metric suite and benchmark harness: source-selection accuracy,
//! NDCG@10 for document search, execution match for the structured
//! backends, an LLM judge, macro-averaging across the four paradigms,
//! and run diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::CandidateOutcome;
use crate::execution::{verbalize, ExecError, ExecOutcome, Passage, Value, ValueKind};
use crate::formulation::NativeQuery;
use crate::gateway::{extract_json_object, ChatRequest, GatewayError, Provider};
use crate::pipeline::{Pipeline, PipelineError, QuestionTrace, RunMode};
use crate::registry::BackendKind;

/// Relative tolerance for numeric value comparison in execution match.
pub const NUMERIC_RELATIVE_TOLERANCE: f64 = 1e-6;

/// Questions evaluated concurrently by the harness.
pub const DEFAULT_EVAL_CONCURRENCY: usize = 4;

// ---------------------------------------------------------------------------
// Gold annotations
// ---------------------------------------------------------------------------

/// Gold label for one benchmark question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub question_id: String,
    pub question: String,
    pub paradigm: BackendKind,
    pub gold_kb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("macro average requires all four paradigms; missing {0}")]
    MissingParadigm(BackendKind),
    #[error("gold query execution failed for {question_id}: {source}")]
    GoldExecutionFailed {
        question_id: String,
        source: ExecError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl GoldAnnotation {
    /// A Search gold must carry qrels; a structured gold must carry the
    /// gold query. Exactly one of the two is allowed.
    pub fn validate(&self) -> Result<(), EvalError> {
        let want_qrels = self.paradigm == BackendKind::Search;
        match (want_qrels, &self.gold_query, &self.qrels) {
            (true, None, Some(q)) if !q.is_empty() => Ok(()),
            (false, Some(_), None) => Ok(()),
            _ => Err(EvalError::Dataset(format!(
                "question {}: paradigm {} requires {} only",
                self.question_id,
                self.paradigm,
                if want_qrels { "qrels" } else { "gold_query" }
            ))),
        }
    }
}

/// Loads a JSONL dataset, one annotation per line.
pub fn load_dataset(path: &Path) -> Result<Vec<GoldAnnotation>, EvalError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Dataset(format!("reading {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let gold: GoldAnnotation = serde_json::from_str(line)
            .map_err(|e| EvalError::Dataset(format!("line {}: {e}", lineno + 1)))?;
        gold.validate()?;
        out.push(gold);
    }
    if out.is_empty() {
        return Err(EvalError::Dataset("dataset is empty".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Source-selection accuracy
// ---------------------------------------------------------------------------

/// 1 iff the finally selected candidate (post evidence selection) targets
/// the gold knowledge base under the gold paradigm.
pub fn source_selection_accuracy(trace: &QuestionTrace, gold: &GoldAnnotation) -> f64 {
    match trace.selected() {
        Some(c) if c.decision.kind == gold.paradigm && c.decision.kb_id == gold.gold_kb => 1.0,
        _ => 0.0,
    }
}

// ---------------------------------------------------------------------------
// NDCG@10
// ---------------------------------------------------------------------------

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain over the top-10 ranking, with
/// linear gains from the qrels. Zero ideal gain yields 0.
pub fn ndcg_at_10(items: &[Passage], qrels: &BTreeMap<String, f64>) -> f64 {
    let dcg10 = dcg(items
        .iter()
        .take(10)
        .map(|p| qrels.get(&p.doc_id).copied().unwrap_or(0.0)));
    let mut ideal: Vec<f64> = qrels.values().copied().collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg(ideal.into_iter().take(10));
    if idcg == 0.0 {
        0.0
    } else {
        dcg10 / idcg
    }
}

// ---------------------------------------------------------------------------
// Execution match
// ---------------------------------------------------------------------------

fn value_eq(a: &Value, b: &Value) -> bool {
    let num = |v: &Value| -> Option<f64> {
        match v.kind {
            ValueKind::Int(i) => Some(i as f64),
            ValueKind::Real(r) => Some(r),
            _ => None,
        }
    };
    match (num(a), num(b)) {
        (Some(x), Some(y)) => {
            let scale = x.abs().max(y.abs());
            (x - y).abs() <= NUMERIC_RELATIVE_TOLERANCE * scale.max(1e-300)
                || (x == 0.0 && y == 0.0)
        }
        _ => match (&a.kind, &b.kind) {
            (ValueKind::Null, ValueKind::Null) => true,
            (ValueKind::Bool(x), ValueKind::Bool(y)) => x == y,
            (ValueKind::Text, ValueKind::Text) => a.lexical.trim() == b.lexical.trim(),
            _ => false,
        },
    }
}

fn tuple_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| value_eq(x, y))
}

/// Canonical multiset of value tuples for one outcome. `None` marks a
/// shape that does not participate in execution match.
fn canonical_tuples(outcome: &ExecOutcome) -> Option<Vec<Vec<Value>>> {
    match outcome {
        ExecOutcome::Rows { rows, .. } => Some(rows.clone()),
        ExecOutcome::Bindings { bindings, ask, .. } => {
            if let Some(b) = ask {
                return Some(vec![vec![Value::bool(*b)]]);
            }
            // Tuple order = sorted variable names over the union of keys;
            // unbound variables become Null so arity is uniform.
            let mut vars: Vec<String> = bindings
                .iter()
                .flat_map(|s| s.keys().cloned())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            vars.sort();
            Some(
                bindings
                    .iter()
                    .map(|solution| {
                        vars.iter()
                            .map(|v| solution.get(v).cloned().unwrap_or_else(Value::null))
                            .collect()
                    })
                    .collect(),
            )
        }
        ExecOutcome::Records { records, .. } => Some(records.clone()),
        ExecOutcome::Passages { .. } => None,
    }
}

fn same_shape(a: &ExecOutcome, b: &ExecOutcome) -> bool {
    matches!(
        (a, b),
        (ExecOutcome::Rows { .. }, ExecOutcome::Rows { .. })
            | (ExecOutcome::Bindings { .. }, ExecOutcome::Bindings { .. })
            | (ExecOutcome::Records { .. }, ExecOutcome::Records { .. })
    )
}

/// Order-insensitive result-set equivalence with numeric tolerance.
/// Cross-shape comparisons are false by definition.
pub fn execution_match(pred: &ExecOutcome, gold: &ExecOutcome) -> bool {
    if !same_shape(pred, gold) {
        return false;
    }
    let (Some(pred_tuples), Some(gold_tuples)) = (canonical_tuples(pred), canonical_tuples(gold))
    else {
        return false;
    };
    if pred_tuples.len() != gold_tuples.len() {
        return false;
    }
    // Greedy multiset matching under tolerant tuple equality.
    let mut used = vec![false; gold_tuples.len()];
    for p in &pred_tuples {
        let Some(slot) = gold_tuples
            .iter()
            .enumerate()
            .position(|(i, g)| !used[i] && tuple_eq(p, g))
        else {
            return false;
        };
        used[slot] = true;
    }
    true
}

// ---------------------------------------------------------------------------
// Retrieval accuracy
// ---------------------------------------------------------------------------

/// Scores the selected candidate's result against gold: NDCG@10 for
/// Search-paradigm questions, execution match otherwise. Selecting a
/// source other than the gold kb scores 0.
pub fn retrieval_accuracy(
    trace: &QuestionTrace,
    gold: &GoldAnnotation,
    gold_outcome: Option<&ExecOutcome>,
) -> f64 {
    let Some(selected) = trace.selected() else {
        return 0.0;
    };
    if selected.decision.kb_id != gold.gold_kb {
        return 0.0;
    }
    let CandidateOutcome::Ok { outcome } = &selected.outcome else {
        return 0.0;
    };
    if gold.paradigm == BackendKind::Search {
        let (Some(qrels), ExecOutcome::Passages { items, .. }) = (&gold.qrels, outcome) else {
            return 0.0;
        };
        ndcg_at_10(items, qrels)
    } else {
        match gold_outcome {
            Some(g) if execution_match(outcome, g) => 1.0,
            _ => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// LLM judge
// ---------------------------------------------------------------------------

const JUDGE_SYSTEM: &str = "You are a strict but fair evaluator. You will see a user question \
and two sides: a PREDICTED side (the model's chosen KB) and a GOLD side (the labeled KB, known \
to be correct). Each side carries its KB schema/context, the query that was run, and the \
resulting answer.\n\nDecide whether the predicted side correctly answers the user question. \
There are two independent ways the prediction can be correct: (1) ANSWER MATCH, the predicted \
answer is equivalent in meaning to the gold answer, allowing reordering, alias differences, \
formatting differences, or extra surrounding context; (2) FAITHFUL IMPLEMENTATION ON A \
DIFFERENT KB, the predicted query faithfully realizes what the user asked, interpreted against \
the predicted KB schema and data, and the predicted answer is what that query correctly \
produces. The values may differ entirely from gold because the predicted KB legitimately holds \
different content. This case applies whenever more than one knowledge base could reasonably \
answer the same kind of question.\n\nIf the gold answer is empty or otherwise degenerate (the \
gold query may itself be buggy or stale), the gold reference is uninformative, judge by \
FAITHFUL IMPLEMENTATION alone in that case. Reject when the predicted answer is off-topic or \
when the predicted query plainly fails to capture what the question is asking. If both pred \
and gold answers are empty, ALWAYS count it as an ANSWER MATCH (this overrides any reasoning \
about whether the question should have a real-world answer). If only the predicted answer is \
empty, reject. Use the schemas and queries on both sides to interpret unfamiliar values.";

const JUDGE_RESPONSE_INSTRUCTION: &str =
    r#"Respond with JSON: {"correct": true|false, "reason": "<one-line reason>"}"#;

const CORRECTIVE_INSTRUCTION: &str = "Your previous response was not valid JSON in the \
required shape. Respond with only the JSON object.";

/// One side of the judge comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeBundle {
    pub route: BackendKind,
    pub kb_id: String,
    pub query: String,
    pub context: String,
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub correct: bool,
    pub reason: String,
    pub warnings: Vec<String>,
    /// Number of LLM calls made (0 when a pre-check decided).
    pub llm_calls: usize,
}

pub fn render_judge_prompt(
    question: &str,
    pred: &JudgeBundle,
    gold: &JudgeBundle,
) -> ChatRequest {
    let side = |label: &str, b: &JudgeBundle| {
        format!(
            "[{label}] route={} | kb={}\nquery: {}\ncontext: {}\nanswer: {}\n",
            b.route, b.kb_id, b.query, b.context, b.answer
        )
    };
    let user = format!(
        "Question: {question}\n\n{}\n{}\n{JUDGE_RESPONSE_INSTRUCTION}",
        side("PREDICTED", pred),
        side("GOLD", gold),
    );
    ChatRequest::new("judge", JUDGE_SYSTEM, user)
}

/// Judges whether the predicted side answers the question. Deterministic
/// pre-checks run first: both answers empty is always correct; only the
/// predicted answer empty is always incorrect. Neither consumes an LLM
/// call.
pub async fn judge<P: Provider>(
    question: &str,
    pred: &JudgeBundle,
    gold: &JudgeBundle,
    provider: &P,
) -> JudgeVerdict {
    let pred_empty = pred.answer.trim().is_empty();
    let gold_empty = gold.answer.trim().is_empty();
    if pred_empty && gold_empty {
        return JudgeVerdict {
            correct: true,
            reason: "both answers empty".into(),
            warnings: Vec::new(),
            llm_calls: 0,
        };
    }
    if pred_empty {
        return JudgeVerdict {
            correct: false,
            reason: "predicted answer empty".into(),
            warnings: Vec::new(),
            llm_calls: 0,
        };
    }

    let request = render_judge_prompt(question, pred, gold);
    let mut warnings = Vec::new();
    match judge_attempt(provider, &request).await {
        Ok((correct, reason)) => JudgeVerdict {
            correct,
            reason,
            warnings,
            llm_calls: 1,
        },
        Err(first_error) => {
            let retry = ChatRequest::new(
                request.tag.clone(),
                request.system.clone(),
                format!("{}\n\n{CORRECTIVE_INSTRUCTION}", request.user),
            );
            match judge_attempt(provider, &retry).await {
                Ok((correct, reason)) => {
                    warnings.push(format!("judge retried once: {first_error}"));
                    JudgeVerdict {
                        correct,
                        reason,
                        warnings,
                        llm_calls: 2,
                    }
                }
                Err(second_error) => {
                    warnings.push(format!(
                        "judge response unusable after retry, counting incorrect: {second_error}"
                    ));
                    JudgeVerdict {
                        correct: false,
                        reason: "judge output unusable".into(),
                        warnings,
                        llm_calls: 2,
                    }
                }
            }
        }
    }
}

async fn judge_attempt<P: Provider>(
    provider: &P,
    request: &ChatRequest,
) -> Result<(bool, String), GatewayError> {
    let response = provider.complete(request).await?;
    let json = extract_json_object(&response.text)?;
    let correct = json
        .get("correct")
        .and_then(serde_json::Value::as_bool)
        .ok_or_else(|| GatewayError::MalformedJson("missing boolean \"correct\"".into()))?;
    let reason = json
        .get("reason")
        .and_then(serde_json::Value::as_str)
        .unwrap_or("")
        .to_string();
    Ok((correct, reason))
}

// ---------------------------------------------------------------------------
// Macro averaging
// ---------------------------------------------------------------------------

/// Arithmetic mean over the four paradigms, each contributing equally.
pub fn macro_average(per_paradigm: &BTreeMap<BackendKind, f64>) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for kind in BackendKind::ALL {
        let v = per_paradigm
            .get(&kind)
            .ok_or(EvalError::MissingParadigm(kind))?;
        sum += v;
    }
    Ok(sum / 4.0)
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Mean distinct backend kinds per candidate list.
    pub mean_distinct_kinds: f64,
    /// Mean distinct knowledge bases per candidate list.
    pub mean_distinct_kbs: f64,
    /// Fraction of gold-containing multi-candidate questions where the
    /// evidence stage picked gold.
    pub evidence_selection_accuracy: Option<f64>,
    /// Expected accuracy of a uniform pick over the same questions.
    pub evidence_random_baseline: Option<f64>,
    /// Distribution of rank-0 predicted kinds, percent, with each gold
    /// paradigm weighted equally.
    pub rank0_paradigm_balance: BTreeMap<String, f64>,
    /// Same balance over all candidates rather than rank 0 only.
    pub all_candidate_paradigm_balance: BTreeMap<String, f64>,
    /// Fraction of questions whose candidate list contains the gold source.
    pub gold_inclusion_rate: f64,
}

/// Computes run diagnostics over paired traces and golds (same order).
pub fn diagnostics(traces: &[QuestionTrace], golds: &[GoldAnnotation]) -> DiagnosticsReport {
    assert_eq!(traces.len(), golds.len(), "traces and golds must pair up");
    if traces.is_empty() {
        return DiagnosticsReport::default();
    }
    let n = traces.len() as f64;

    let mut distinct_kinds = 0.0;
    let mut distinct_kbs = 0.0;
    let mut gold_included = 0usize;
    let mut evid_hits = 0usize;
    let mut evid_total = 0usize;
    let mut evid_baseline = 0.0;

    for (trace, gold) in traces.iter().zip(golds) {
        let kinds: std::collections::BTreeSet<_> =
            trace.decisions.iter().map(|d| d.kind).collect();
        let kbs: std::collections::BTreeSet<_> =
            trace.decisions.iter().map(|d| d.kb_id.as_str()).collect();
        distinct_kinds += kinds.len() as f64;
        distinct_kbs += kbs.len() as f64;

        let contains_gold = trace.decisions.iter().any(|d| d.kb_id == gold.gold_kb);
        if contains_gold {
            gold_included += 1;
        }
        if let Some(evidence) = &trace.evidence {
            if contains_gold && evidence.candidates.len() >= 2 {
                evid_total += 1;
                evid_baseline += 1.0 / evidence.candidates.len() as f64;
                if evidence.candidates[evidence.selected_index].decision.kb_id == gold.gold_kb {
                    evid_hits += 1;
                }
            }
        }
    }

    // Paradigm balance: per gold-paradigm distributions averaged with
    // equal weight per paradigm that appears in the gold set.
    let mut rank0 = BalanceAccumulator::default();
    let mut all = BalanceAccumulator::default();
    for (trace, gold) in traces.iter().zip(golds) {
        if let Some(first) = trace.decisions.first() {
            rank0.add(gold.paradigm, &[first.kind]);
        }
        let kinds: Vec<BackendKind> = trace.decisions.iter().map(|d| d.kind).collect();
        if !kinds.is_empty() {
            all.add(gold.paradigm, &kinds);
        }
    }

    DiagnosticsReport {
        mean_distinct_kinds: distinct_kinds / n,
        mean_distinct_kbs: distinct_kbs / n,
        evidence_selection_accuracy: (evid_total > 0)
            .then(|| evid_hits as f64 / evid_total as f64),
        evidence_random_baseline: (evid_total > 0).then(|| evid_baseline / evid_total as f64),
        rank0_paradigm_balance: rank0.finish(),
        all_candidate_paradigm_balance: all.finish(),
        gold_inclusion_rate: gold_included as f64 / n,
    }
}

/// Accumulates, per gold paradigm, the distribution of predicted kinds,
/// then averages the distributions with equal paradigm weight.
#[derive(Default)]
struct BalanceAccumulator {
    per_gold: BTreeMap<BackendKind, (BTreeMap<BackendKind, f64>, f64)>,
}

impl BalanceAccumulator {
    fn add(&mut self, gold_paradigm: BackendKind, predicted: &[BackendKind]) {
        let (counts, total) = self.per_gold.entry(gold_paradigm).or_default();
        for kind in predicted {
            *counts.entry(*kind).or_default() += 1.0;
        }
        *total += predicted.len() as f64;
    }

    fn finish(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BackendKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), 0.0))
            .collect();
        if self.per_gold.is_empty() {
            return out;
        }
        let weight = 1.0 / self.per_gold.len() as f64;
        for (counts, total) in self.per_gold.values() {
            for kind in BackendKind::ALL {
                let share = counts.get(&kind).copied().unwrap_or(0.0) / total;
                *out.get_mut(kind.as_str()).unwrap() += 100.0 * weight * share;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParadigmMetrics {
    pub questions: usize,
    /// Percentages in [0, 100].
    pub source_selection: f64,
    pub retrieval: f64,
    pub judge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub paradigm: BackendKind,
    pub selected_kb: Option<String>,
    pub source_selection: f64,
    pub retrieval: f64,
    pub judge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: RunMode,
    pub per_paradigm: BTreeMap<String, ParadigmMetrics>,
    pub macro_source_selection: f64,
    pub macro_retrieval: f64,
    pub macro_judge: f64,
    pub per_question: Vec<QuestionRecord>,
    pub diagnostics: DiagnosticsReport,
    pub warnings: Vec<String>,
}

/// Judge answer text: empty when the outcome holds no items, otherwise
/// the deterministic verbalization. The empty string is what triggers the
/// judge's pre-check rules.
pub fn answer_text(outcome: &ExecOutcome, caps: &crate::execution::VerbalizeCaps) -> String {
    if outcome.is_empty() {
        String::new()
    } else {
        verbalize(outcome, caps)
    }
}

/// Executes the gold query (or assembles the gold passage set for Search)
/// once per question; results are mode-independent.
async fn gold_outcome<P: Provider>(
    pipeline: &Pipeline<P>,
    gold: &GoldAnnotation,
) -> Result<ExecOutcome, EvalError> {
    let desc = pipeline.catalog.lookup(&gold.gold_kb).ok_or_else(|| {
        EvalError::Dataset(format!(
            "question {}: gold_kb {:?} is not registered",
            gold.question_id, gold.gold_kb
        ))
    })?;
    if gold.paradigm == BackendKind::Search {
        // The gold "result" for a search question is its relevant passage
        // set: qrels-positive documents, best gain first.
        let index = pipeline
            .executors
            .index_for(desc)
            .map_err(|e| EvalError::GoldExecutionFailed {
                question_id: gold.question_id.clone(),
                source: e,
            })?;
        let qrels = gold.qrels.as_ref().expect("validated search gold");
        let mut items: Vec<Passage> = qrels
            .iter()
            .filter(|(_, gain)| **gain > 0.0)
            .filter_map(|(doc_id, gain)| {
                index.document(doc_id).map(|doc| Passage {
                    doc_id: doc.doc_id.clone(),
                    score: *gain,
                    text: doc.text.clone(),
                })
            })
            .collect();
        items.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        return Ok(ExecOutcome::Passages {
            items,
            truncated: 0,
        });
    }
    let query = NativeQuery {
        kind: gold.paradigm,
        kb_id: gold.gold_kb.clone(),
        text: gold.gold_query.clone().expect("validated structured gold"),
        raw_llm_text: String::new(),
        grounded: true,
    };
    pipeline
        .executors
        .execute(desc, &query, &pipeline.limits)
        .await
        .map_err(|e| EvalError::GoldExecutionFailed {
            question_id: gold.question_id.clone(),
            source: e,
        })
}

fn judge_bundle_for_selected<P: Provider>(
    pipeline: &Pipeline<P>,
    trace: &QuestionTrace,
) -> Option<JudgeBundle> {
    let selected = trace.selected()?;
    let answer = match &selected.outcome {
        CandidateOutcome::Ok { outcome } => answer_text(outcome, &pipeline.caps),
        CandidateOutcome::Error { .. } => String::new(),
    };
    Some(JudgeBundle {
        route: selected.decision.kind,
        kb_id: selected.decision.kb_id.clone(),
        query: selected.query.text.clone(),
        context: selected.context_text.clone(),
        answer,
    })
}

/// Runs the benchmark: answers every question in `mode`, scores the three
/// metrics, groups by gold paradigm, and emits macro values plus
/// diagnostics. Per-question failures are recorded, never fatal.
pub async fn run_benchmark<P: Provider>(
    pipeline: &Pipeline<P>,
    dataset: &[GoldAnnotation],
    mode: RunMode,
) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Dataset("dataset is empty".into()));
    }
    let mut warnings: Vec<String> = Vec::new();

    // Gold outcomes once per question, cached for scoring and judging.
    let mut gold_outcomes: BTreeMap<String, Option<ExecOutcome>> = BTreeMap::new();
    for gold in dataset {
        match gold_outcome(pipeline, gold).await {
            Ok(outcome) => {
                gold_outcomes.insert(gold.question_id.clone(), Some(outcome));
            }
            Err(e) => {
                warnings.push(format!("question {} excluded: {e}", gold.question_id));
                gold_outcomes.insert(gold.question_id.clone(), None);
            }
        }
    }

    // Answer questions concurrently, preserving dataset order.
    let traces: Vec<Result<QuestionTrace, PipelineError>> = futures::stream::iter(
        dataset.iter().map(|gold| {
            let oracle = (mode == RunMode::OracleSource).then_some(gold.gold_kb.as_str());
            pipeline.answer(&gold.question_id, &gold.question, mode, oracle)
        }),
    )
    .buffered(DEFAULT_EVAL_CONCURRENCY)
    .collect()
    .await;

    let mut records: Vec<QuestionRecord> = Vec::new();
    let mut scored_traces: Vec<QuestionTrace> = Vec::new();
    let mut scored_golds: Vec<GoldAnnotation> = Vec::new();

    for (gold, result) in dataset.iter().zip(traces) {
        let gold_outcome = gold_outcomes
            .get(&gold.question_id)
            .cloned()
            .unwrap_or(None);
        if gold_outcome.is_none() {
            records.push(QuestionRecord {
                question_id: gold.question_id.clone(),
                paradigm: gold.paradigm,
                selected_kb: None,
                source_selection: 0.0,
                retrieval: 0.0,
                judge: 0.0,
                error: Some("gold outcome unavailable".into()),
                excluded: true,
            });
            continue;
        }
        let trace = match result {
            Ok(trace) => trace,
            Err(e) => {
                warnings.push(format!("question {} failed: {e}", gold.question_id));
                records.push(QuestionRecord {
                    question_id: gold.question_id.clone(),
                    paradigm: gold.paradigm,
                    selected_kb: None,
                    source_selection: 0.0,
                    retrieval: 0.0,
                    judge: 0.0,
                    error: Some(e.to_string()),
                    excluded: false,
                });
                continue;
            }
        };
        let gold_outcome = gold_outcome.expect("checked above");

        let selection_score = source_selection_accuracy(&trace, gold);
        let retrieval_score = retrieval_accuracy(&trace, gold, Some(&gold_outcome));

        let gold_desc = pipeline
            .catalog
            .lookup(&gold.gold_kb)
            .expect("gold kb resolved during gold execution");
        let gold_bundle = JudgeBundle {
            route: gold.paradigm,
            kb_id: gold.gold_kb.clone(),
            query: gold
                .gold_query
                .clone()
                .unwrap_or_else(|| gold.question.clone()),
            context: gold_desc.context_text.clone(),
            answer: answer_text(&gold_outcome, &pipeline.caps),
        };
        let pred_bundle =
            judge_bundle_for_selected(pipeline, &trace).unwrap_or_else(|| JudgeBundle {
                route: gold.paradigm,
                kb_id: String::new(),
                query: String::new(),
                context: String::new(),
                answer: String::new(),
            });
        let verdict = judge(&gold.question, &pred_bundle, &gold_bundle, &pipeline.provider).await;
        warnings.extend(
            verdict
                .warnings
                .iter()
                .map(|w| format!("question {}: {w}", gold.question_id)),
        );

        records.push(QuestionRecord {
            question_id: gold.question_id.clone(),
            paradigm: gold.paradigm,
            selected_kb: trace.selected().map(|c| c.decision.kb_id.clone()),
            source_selection: selection_score,
            retrieval: retrieval_score,
            judge: if verdict.correct { 1.0 } else { 0.0 },
            error: None,
            excluded: false,
        });
        scored_traces.push(trace);
        scored_golds.push(gold.clone());
    }

    // Per-paradigm means (percent), then equal-weight macro values.
    let mut per_paradigm: BTreeMap<String, ParadigmMetrics> = BTreeMap::new();
    let mut selection_by_kind: BTreeMap<BackendKind, f64> = BTreeMap::new();
    let mut retrieval_by_kind: BTreeMap<BackendKind, f64> = BTreeMap::new();
    let mut judge_by_kind: BTreeMap<BackendKind, f64> = BTreeMap::new();
    for kind in BackendKind::ALL {
        let bucket: Vec<&QuestionRecord> = records
            .iter()
            .filter(|r| r.paradigm == kind && !r.excluded)
            .collect();
        let n = bucket.len();
        let mean = |f: fn(&QuestionRecord) -> f64| -> f64 {
            if n == 0 {
                0.0
            } else {
                100.0 * bucket.iter().map(|r| f(r)).sum::<f64>() / n as f64
            }
        };
        let metrics = ParadigmMetrics {
            questions: n,
            source_selection: mean(|r| r.source_selection),
            retrieval: mean(|r| r.retrieval),
            judge: mean(|r| r.judge),
        };
        selection_by_kind.insert(kind, metrics.source_selection);
        retrieval_by_kind.insert(kind, metrics.retrieval);
        judge_by_kind.insert(kind, metrics.judge);
        per_paradigm.insert(kind.as_str().to_string(), metrics);
    }

    Ok(MetricsReport {
        mode,
        macro_source_selection: macro_average(&selection_by_kind)?,
        macro_retrieval: macro_average(&retrieval_by_kind)?,
        macro_judge: macro_average(&judge_by_kind)?,
        per_paradigm,
        diagnostics: diagnostics(&scored_traces, &scored_golds),
        per_question: records,
        warnings,
    })
}
