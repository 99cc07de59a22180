//! Cypher execution against a Neo4j-style HTTP transactional endpoint.
//!
//! Graph values (nodes, relationships, paths) are serialized into a
//! deterministic textual form — `(Label {key: value})`, `[TYPE {key:
//! value}]` — with property keys sorted so record renderings are stable.

use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;
use serde_json::json;

use super::{ExecError, ExecLimits, ExecOutcome, Value};

#[derive(Deserialize)]
struct TxResponse {
    #[serde(default)]
    results: Vec<TxResult>,
    #[serde(default)]
    errors: Vec<TxError>,
}

#[derive(Deserialize)]
struct TxResult {
    #[serde(default)]
    columns: Vec<String>,
    #[serde(default)]
    data: Vec<TxRow>,
}

#[derive(Deserialize)]
struct TxRow {
    #[serde(default)]
    row: Vec<serde_json::Value>,
    #[serde(default)]
    meta: Vec<serde_json::Value>,
    #[serde(default)]
    graph: Option<TxGraph>,
}

#[derive(Deserialize, Default)]
struct TxGraph {
    #[serde(default)]
    nodes: Vec<TxNode>,
    #[serde(default)]
    relationships: Vec<TxRel>,
}

#[derive(Deserialize)]
struct TxNode {
    id: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    properties: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct TxRel {
    id: String,
    #[serde(rename = "type")]
    rel_type: String,
    #[serde(default)]
    properties: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct TxError {
    #[serde(default)]
    code: String,
    #[serde(default)]
    message: String,
}

fn render_props(props: &BTreeMap<String, serde_json::Value>) -> String {
    if props.is_empty() {
        return String::new();
    }
    let pairs: Vec<String> = props
        .iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => format!("{k}: \"{s}\""),
            other => format!("{k}: {}", Value::from_json(other).render()),
        })
        .collect();
    format!(" {{{}}}", pairs.join(", "))
}

fn render_node(node: &TxNode) -> String {
    format!("({}{})", node.labels.join(":"), render_props(&node.properties))
}

fn render_rel(rel: &TxRel) -> String {
    format!("[{}{}]", rel.rel_type, render_props(&rel.properties))
}

/// Converts one result cell to a `Value`, consulting row metadata to
/// replace raw property maps with graph-aware text for nodes,
/// relationships, and paths.
fn cell_value(
    row_val: &serde_json::Value,
    meta_val: Option<&serde_json::Value>,
    nodes: &HashMap<&str, &TxNode>,
    rels: &HashMap<&str, &TxRel>,
) -> Value {
    let entity_text = |meta: &serde_json::Value| -> Option<String> {
        let id = meta.get("id")?;
        let id_str = match id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match meta.get("type").and_then(|t| t.as_str()) {
            Some("node") => nodes.get(id_str.as_str()).map(|n| render_node(n)),
            Some("relationship") => rels.get(id_str.as_str()).map(|r| render_rel(r)),
            _ => None,
        }
    };

    match meta_val {
        Some(serde_json::Value::Object(_)) => {
            if let Some(text) = entity_text(meta_val.unwrap()) {
                return Value::text(text);
            }
            Value::from_json(row_val)
        }
        // Path cells carry an array of per-element metadata.
        Some(serde_json::Value::Array(elements)) if !elements.is_empty() => {
            let parts: Vec<String> = elements
                .iter()
                .map(|m| entity_text(m).unwrap_or_else(|| "?".to_string()))
                .collect();
            Value::text(parts.join("-"))
        }
        _ => Value::from_json(row_val),
    }
}

fn classify_errors(errors: &[TxError]) -> ExecError {
    let first = &errors[0];
    let message = format!("{}: {}", first.code, first.message);
    if first.code.contains("SyntaxError") || first.code.contains("Statement") {
        ExecError::QuerySyntax(message)
    } else {
        ExecError::BackendError(message)
    }
}

/// Runs one statement through `{url}/db/{database}/tx/commit`. Basic-auth
/// credentials come from the environment variable named by
/// `credentials_ref`, formatted `user:password`.
pub async fn exec_cypher(
    client: &reqwest::Client,
    url: &str,
    database: &str,
    credentials_ref: Option<&str>,
    query: &str,
    limits: &ExecLimits,
) -> Result<ExecOutcome, ExecError> {
    let endpoint = format!("{}/db/{}/tx/commit", url.trim_end_matches('/'), database);
    let body = json!({
        "statements": [{
            "statement": query,
            "resultDataContents": ["row", "graph"],
        }]
    });

    let mut request = client.post(&endpoint).timeout(limits.timeout).json(&body);
    if let Some(var_name) = credentials_ref {
        let creds = std::env::var(var_name).map_err(|_| {
            ExecError::Auth(format!("credentials variable {var_name} is not set"))
        })?;
        let (user, pass) = creds
            .split_once(':')
            .ok_or_else(|| ExecError::Auth(format!("{var_name} must be user:password")))?;
        request = request.basic_auth(user, Some(pass));
    }

    let resp = request.send().await.map_err(|e| {
        if e.is_timeout() {
            ExecError::Timeout
        } else {
            ExecError::Transport(e.to_string())
        }
    })?;

    let status = resp.status();
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(ExecError::Auth(status.to_string()));
    }
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        let snippet: String = body.chars().take(300).collect();
        return Err(ExecError::BackendError(format!("{status}: {snippet}")));
    }

    let parsed: TxResponse = resp
        .json()
        .await
        .map_err(|e| ExecError::Transport(format!("decoding response: {e}")))?;
    if !parsed.errors.is_empty() {
        return Err(classify_errors(&parsed.errors));
    }
    let result = parsed
        .results
        .into_iter()
        .next()
        .ok_or_else(|| ExecError::BackendError("empty results array".into()))?;

    let total = result.data.len();
    let kept = total.min(limits.max_rows);
    let mut records: Vec<Vec<Value>> = Vec::with_capacity(kept);
    for item in result.data.iter().take(kept) {
        let (nodes, rels) = match &item.graph {
            Some(g) => (
                g.nodes.iter().map(|n| (n.id.as_str(), n)).collect(),
                g.relationships.iter().map(|r| (r.id.as_str(), r)).collect(),
            ),
            None => (HashMap::new(), HashMap::new()),
        };
        let record: Vec<Value> = item
            .row
            .iter()
            .enumerate()
            .map(|(i, cell)| cell_value(cell, item.meta.get(i), &nodes, &rels))
            .collect();
        records.push(record);
    }

    Ok(ExecOutcome::Records {
        keys: result.columns,
        records,
        truncated: total - kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, labels: &[&str], props: &[(&str, serde_json::Value)]) -> TxNode {
        TxNode {
            id: id.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            properties: props.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    #[test]
    fn node_renders_with_sorted_quoted_properties() {
        let n = node(
            "0",
            &["Movie"],
            &[
                ("title", json!("The Matrix")),
                ("released", json!(1999)),
            ],
        );
        assert_eq!(
            render_node(&n),
            "(Movie {released: 1999, title: \"The Matrix\"})"
        );
    }

    #[test]
    fn relationship_renders_with_type() {
        let r = TxRel {
            id: "5".into(),
            rel_type: "ACTED_IN".into(),
            properties: BTreeMap::from([("roles".to_string(), json!("Neo"))]),
        };
        assert_eq!(render_rel(&r), "[ACTED_IN {roles: \"Neo\"}]");
    }

    #[test]
    fn plain_row_values_pass_through() {
        let v = cell_value(&json!(3), None, &HashMap::new(), &HashMap::new());
        assert_eq!(v, Value::int(3));
    }

    #[test]
    fn node_cell_uses_graph_serialization() {
        let n = node("0", &["Person"], &[("name", json!("Keanu"))]);
        let nodes = HashMap::from([("0", &n)]);
        let v = cell_value(
            &json!({"name": "Keanu"}),
            Some(&json!({"id": 0, "type": "node"})),
            &nodes,
            &HashMap::new(),
        );
        assert_eq!(v, Value::text("(Person {name: \"Keanu\"})"));
    }

    #[test]
    fn syntax_error_code_classified() {
        let err = classify_errors(&[TxError {
            code: "Neo.ClientError.Statement.SyntaxError".into(),
            message: "bad".into(),
        }]);
        assert!(matches!(err, ExecError::QuerySyntax(_)));
    }
}
