//! SPARQL protocol execution over HTTP with JSON results.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{ExecError, ExecLimits, ExecOutcome, Value, ValueKind};

#[derive(Deserialize)]
struct SparqlJson {
    #[serde(default)]
    head: SparqlHead,
    #[serde(default)]
    results: Option<SparqlResults>,
    #[serde(default)]
    boolean: Option<bool>,
}

#[derive(Deserialize, Default)]
struct SparqlHead {
    #[serde(default)]
    vars: Vec<String>,
}

#[derive(Deserialize)]
struct SparqlResults {
    #[serde(default)]
    bindings: Vec<BTreeMap<String, SparqlTerm>>,
}

#[derive(Deserialize)]
struct SparqlTerm {
    #[serde(rename = "type")]
    term_type: String,
    value: String,
    #[serde(default)]
    datatype: Option<String>,
}

const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

fn term_to_value(term: &SparqlTerm) -> Value {
    if term.term_type == "literal" || term.term_type == "typed-literal" {
        if let Some(dt) = &term.datatype {
            let local = dt.strip_prefix(XSD).unwrap_or(dt.as_str());
            match local {
                "integer" | "int" | "long" | "short" | "byte" | "nonNegativeInteger"
                | "positiveInteger" => {
                    if let Ok(i) = term.value.parse::<i64>() {
                        return Value::int(i).with_lexical(term.value.clone());
                    }
                }
                "decimal" | "double" | "float" => {
                    if let Ok(v) = term.value.parse::<f64>() {
                        if v.is_finite() {
                            return Value {
                                kind: ValueKind::Real(v),
                                lexical: term.value.clone(),
                            };
                        }
                    }
                }
                "boolean" => {
                    if let Ok(b) = term.value.parse::<bool>() {
                        return Value::bool(b).with_lexical(term.value.clone());
                    }
                }
                _ => {}
            }
        }
    }
    Value::text(term.value.clone())
}

/// Sends a query via the SPARQL protocol (`application/x-www-form-urlencoded`
/// body, JSON results) and normalizes SELECT solutions or the ASK boolean.
pub async fn exec_sparql(
    client: &reqwest::Client,
    url: &str,
    query: &str,
    limits: &ExecLimits,
) -> Result<ExecOutcome, ExecError> {
    let resp = client
        .post(url)
        .timeout(limits.timeout)
        .header("Accept", "application/sparql-results+json")
        .form(&[("query", query)])
        .send()
        .await
        .map_err(|e| {
            if e.is_timeout() {
                ExecError::Timeout
            } else {
                ExecError::Transport(e.to_string())
            }
        })?;

    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        let snippet: String = body.chars().take(300).collect();
        return Err(match status.as_u16() {
            400 => ExecError::QuerySyntax(snippet),
            401 | 403 => ExecError::Auth(format!("{status}: {snippet}")),
            _ => ExecError::BackendError(format!("{status}: {snippet}")),
        });
    }

    let parsed: SparqlJson = resp
        .json()
        .await
        .map_err(|e| ExecError::Transport(format!("decoding results: {e}")))?;

    if let Some(b) = parsed.boolean {
        return Ok(ExecOutcome::Bindings {
            vars: Vec::new(),
            bindings: Vec::new(),
            ask: Some(b),
            truncated: 0,
        });
    }

    let results = parsed.results.ok_or_else(|| {
        ExecError::BackendError("response had neither results nor boolean".into())
    })?;
    let total = results.bindings.len();
    let kept = total.min(limits.max_rows);
    let bindings: Vec<BTreeMap<String, Value>> = results
        .bindings
        .into_iter()
        .take(kept)
        .map(|solution| {
            solution
                .iter()
                .map(|(var, term)| (var.clone(), term_to_value(term)))
                .collect()
        })
        .collect();

    Ok(ExecOutcome::Bindings {
        vars: parsed.head.vars,
        bindings,
        ask: None,
        truncated: total - kept,
    })
}
