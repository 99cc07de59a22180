//! Property and invariant tests: result-set equivalence over randomized
//! result pairs, JSON extraction round-trips, code-fence stripping, search
//! rewriting, and schema grounding.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omni_core::evaluation::execution_match;
use omni_core::execution::{ExecOutcome, Passage, Value};
use omni_core::formulation::strip_code_fences;
use omni_core::gateway::extract_json_object;
use omni_core::validation::{check_grounding, parse_context};
use omni_core::BackendKind;

// ---------------------------------------------------------------------------
// Execution match over randomized result sets
// ---------------------------------------------------------------------------

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::null(),
        1 => Value::bool(rng.gen()),
        2 => Value::int(rng.gen_range(-50..50)),
        3 => Value::real(rng.gen_range(-5.0..5.0)),
        _ => Value::text(format!("t{}", rng.gen_range(0..20))),
    }
}

fn random_rows(rng: &mut ChaCha8Rng) -> ExecOutcome {
    let cols = rng.gen_range(1..=4);
    let n = rng.gen_range(0..=6);
    ExecOutcome::Rows {
        columns: (0..cols).map(|c| format!("c{c}")).collect(),
        rows: (0..n)
            .map(|_| (0..cols).map(|_| random_value(rng)).collect())
            .collect(),
        truncated: 0,
    }
}

fn random_bindings(rng: &mut ChaCha8Rng) -> ExecOutcome {
    let var_pool = ["x", "y", "z"];
    let n_vars = rng.gen_range(1..=3);
    let vars: Vec<String> = var_pool[..n_vars].iter().map(|s| s.to_string()).collect();
    let n = rng.gen_range(0..=5);
    let bindings = (0..n)
        .map(|_| {
            let mut row = BTreeMap::new();
            for v in &vars {
                if rng.gen_bool(0.8) {
                    row.insert(v.clone(), random_value(rng));
                }
            }
            row
        })
        .collect();
    ExecOutcome::Bindings {
        vars,
        bindings,
        ask: None,
        truncated: 0,
    }
}

fn shuffle_rows(outcome: &ExecOutcome, rng: &mut ChaCha8Rng) -> ExecOutcome {
    let mut out = outcome.clone();
    match &mut out {
        ExecOutcome::Rows { rows, .. } => rows.shuffle(rng),
        ExecOutcome::Bindings { bindings, .. } => bindings.shuffle(rng),
        _ => {}
    }
    out
}

#[test]
fn execution_match_reflexive_symmetric_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for round in 0..500 {
        let a = if round % 2 == 0 {
            random_rows(&mut rng)
        } else {
            random_bindings(&mut rng)
        };
        let b = if round % 3 == 0 {
            random_rows(&mut rng)
        } else {
            random_bindings(&mut rng)
        };

        assert!(execution_match(&a, &a), "round {round}: not reflexive");
        let shuffled = shuffle_rows(&a, &mut rng);
        assert!(
            execution_match(&a, &shuffled),
            "round {round}: row order must not matter"
        );
        assert_eq!(
            execution_match(&a, &b),
            execution_match(&b, &a),
            "round {round}: not symmetric"
        );
    }
}

#[test]
fn execution_match_numeric_tolerance() {
    let rows = |v: Value| ExecOutcome::Rows {
        columns: vec!["n".into()],
        rows: vec![vec![v]],
        truncated: 0,
    };
    // Int and Real compare numerically under a relative tolerance.
    assert!(execution_match(&rows(Value::int(1)), &rows(Value::real(1.0))));
    assert!(execution_match(
        &rows(Value::real(1.0)),
        &rows(Value::real(1.0 + 1e-9))
    ));
    assert!(!execution_match(
        &rows(Value::real(1.0)),
        &rows(Value::real(1.01))
    ));
}

#[test]
fn execution_match_requires_same_shape() {
    let rows = ExecOutcome::Rows {
        columns: vec!["a".into()],
        rows: vec![vec![Value::int(1)]],
        truncated: 0,
    };
    let bindings = ExecOutcome::Bindings {
        vars: vec!["a".into()],
        bindings: vec![BTreeMap::from([("a".to_string(), Value::int(1))])],
        ask: None,
        truncated: 0,
    };
    let passages = ExecOutcome::Passages {
        items: vec![Passage {
            doc_id: "d".into(),
            score: 1.0,
            text: "x".into(),
        }],
        truncated: 0,
    };
    assert!(!execution_match(&rows, &bindings));
    assert!(!execution_match(&rows, &passages));
    // Ranked passages are judged by graded relevance, never by set equality.
    assert!(!execution_match(&passages, &passages));
}

// ---------------------------------------------------------------------------
// JSON extraction
// ---------------------------------------------------------------------------

proptest! {
    /// Any JSON object embedded in surrounding prose is recovered intact,
    /// as long as the noise introduces no extra braces.
    #[test]
    fn extract_json_object_round_trips(
        keys in proptest::collection::btree_map("[a-z]{1,8}", any::<i64>(), 0..5),
        prefix in "[^{}]{0,40}",
        suffix in "[^{}]{0,40}",
    ) {
        let object = serde_json::to_value(&keys).unwrap();
        let wrapped = format!("{prefix}{object}{suffix}");
        let extracted = extract_json_object(&wrapped).unwrap();
        prop_assert_eq!(extracted, object);
    }

    /// Stripping is stable: a second pass never removes more.
    #[test]
    fn strip_code_fences_idempotent_on_fence_free_payloads(
        body in "[a-zA-Z0-9 ,.*=<>()']{1,120}",
        lang in "[a-z]{0,6}",
    ) {
        let fenced = format!("```{lang}\n{body}\n```");
        let once = strip_code_fences(&fenced);
        prop_assert_eq!(&once, body.trim());
        let twice = strip_code_fences(&once);
        prop_assert_eq!(twice, once);
    }
}

// ---------------------------------------------------------------------------
// Search rewriting invariant
// ---------------------------------------------------------------------------

mod rewrite {
    use super::*;
    use omni_core::formulation::rewrite_search_query;
    use omni_core::gateway::{ChatRequest, ChatResponse, GatewayError, Provider};
    use omni_core::{ConnectionSpec, SourceDescriptor};

    struct FixedProvider(String);

    impl Provider for FixedProvider {
        fn complete<'a>(
            &'a self,
            _request: &'a ChatRequest,
        ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
            Box::pin(async move {
                Ok(ChatResponse {
                    text: self.0.clone(),
                    latency: std::time::Duration::ZERO,
                    provider_id: "fixed".into(),
                })
            })
        }
    }

    fn corpus_descriptor() -> SourceDescriptor {
        SourceDescriptor {
            kb_id: "corpus".into(),
            kind: BackendKind::Search,
            context_text: "Corpus: test".into(),
            catalog_line: "test corpus".into(),
            connection: ConnectionSpec::Corpus {
                path: "/dev/null".into(),
                embedding_url: None,
            },
        }
    }

    proptest! {
        /// Whatever the model returns, the effective search query starts
        /// with the user's question verbatim on its first line.
        #[test]
        fn rewritten_query_keeps_question_first(
            question in "[a-zA-Z0-9 ?]{1,60}",
            reply in "[a-zA-Z0-9 .\n]{0,200}",
        ) {
            prop_assume!(!question.trim().is_empty());
            prop_assume!(!reply.trim().is_empty());
            let rt = tokio::runtime::Builder::new_current_thread()
                .build()
                .unwrap();
            let query = rt
                .block_on(rewrite_search_query(
                    &question,
                    &corpus_descriptor(),
                    &FixedProvider(reply),
                ))
                .unwrap();
            prop_assert_eq!(query.text.lines().next().unwrap_or(""), question.trim());
        }
    }
}

// ---------------------------------------------------------------------------
// Grounding invariant
// ---------------------------------------------------------------------------

const SQL_CONTEXT: &str = r#"CREATE TABLE "singer" (
  "Singer_ID" int,
  "Name" text,
  "Age" int,
  PRIMARY KEY ("Singer_ID")
)
CREATE TABLE "concert" (
  "concert_ID" int,
  "concert_Name" text,
  "Year" text,
  PRIMARY KEY ("concert_ID")
)"#;

proptest! {
    /// Queries assembled purely from schema vocabulary are always grounded.
    #[test]
    fn queries_built_from_schema_vocabulary_are_grounded(
        table_idx in 0usize..2,
        col_pick in proptest::collection::vec(0usize..3, 1..3),
        limit in 1u32..100,
    ) {
        let tables = [
            ("singer", ["Singer_ID", "Name", "Age"]),
            ("concert", ["concert_ID", "concert_Name", "Year"]),
        ];
        let (table, cols) = tables[table_idx];
        let projection: Vec<&str> = col_pick.iter().map(|&i| cols[i]).collect();
        let query = format!(
            "SELECT {} FROM {} LIMIT {}",
            projection.join(", "),
            table,
            limit
        );
        let schema = parse_context(BackendKind::Sql, SQL_CONTEXT).unwrap();
        let report = check_grounding(BackendKind::Sql, &query, &schema);
        prop_assert!(report.grounded, "unexpectedly ungrounded: {} ({:?})", query, report);
    }
}
