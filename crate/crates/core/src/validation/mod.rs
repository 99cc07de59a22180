//! Grounding validation: lightweight per-language lexers that check a
//! generated query refers only to elements its source actually exposes.
//!
//! These are identifier-extraction lexers, not full grammars. Grounding is
//! advisory — a query that fails the check still executes, and execution
//! errors remain the authoritative failure signal.

mod cypher;
mod sparql;
mod sql;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::BackendKind;

pub use sql::RelationalSchema;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("context parse failed: {reason} (line: {line:?})")]
    ContextParse { reason: String, line: String },
    #[error("grounding validation is not defined for SEARCH sources")]
    SearchNotValidated,
    #[error("query kind {query} does not match schema kind {schema}")]
    KindMismatch { query: String, schema: String },
}

/// Structural model extracted from a source's context text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaModel {
    Relational(RelationalSchema),
    Rdf(RdfContext),
    Graph(GraphSchema),
}

/// Entity and predicate vocabulary exposed by an RDF context block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RdfContext {
    /// Q-identifiers, without the `wd:` prefix.
    pub entity_ids: BTreeSet<String>,
    /// P-identifiers, without any prefix.
    pub property_ids: BTreeSet<String>,
    /// Prefix names declared in the context, without the trailing colon.
    pub known_prefixes: BTreeSet<String>,
}

/// Labels, relationship types, and property keys of a property graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub node_labels: BTreeSet<String>,
    pub relationship_types: BTreeSet<String>,
    pub property_keys: BTreeSet<String>,
}

/// Outcome of a grounding check. `grounded` is true exactly when no
/// unknown identifiers were found.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundingReport {
    pub grounded: bool,
    pub unknown_identifiers: Vec<String>,
    pub parse_notes: Vec<String>,
}

impl GroundingReport {
    fn from_parts(unknown: Vec<String>, notes: Vec<String>) -> Self {
        GroundingReport {
            grounded: unknown.is_empty(),
            unknown_identifiers: unknown,
            parse_notes: notes,
        }
    }
}

/// Builds a [`SchemaModel`] from the verbatim context text of a structured
/// source. Deterministic and total on the three supported context formats.
pub fn parse_context(kind: BackendKind, context_text: &str) -> Result<SchemaModel, ValidationError> {
    match kind {
        BackendKind::Search => Err(ValidationError::SearchNotValidated),
        BackendKind::Sql => sql::parse_relational_context(context_text).map(SchemaModel::Relational),
        BackendKind::Sparql => sparql::parse_rdf_context(context_text).map(SchemaModel::Rdf),
        BackendKind::Cypher => cypher::parse_graph_context(context_text).map(SchemaModel::Graph),
    }
}

/// Checks that every identifier in the query is drawn from the schema.
/// Unknown items are collected, never fatal.
pub fn check_grounding(kind: BackendKind, query_text: &str, schema: &SchemaModel) -> GroundingReport {
    match (kind, schema) {
        (BackendKind::Sql, SchemaModel::Relational(s)) => sql::check_sql(query_text, s),
        (BackendKind::Sparql, SchemaModel::Rdf(s)) => sparql::check_sparql(query_text, s),
        (BackendKind::Cypher, SchemaModel::Graph(s)) => cypher::check_cypher(query_text, s),
        (kind, schema) => GroundingReport::from_parts(
            Vec::new(),
            vec![format!(
                "query kind {kind} does not match schema variant {}",
                match schema {
                    SchemaModel::Relational(_) => "relational",
                    SchemaModel::Rdf(_) => "rdf",
                    SchemaModel::Graph(_) => "graph",
                }
            )],
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SINGER_CONTEXT: &str = r#"CREATE TABLE "singer" (
  "Singer_ID" int,
  "Name" text,
  "Country" text,
  "Song_Name" text,
  "Song_release_year" text,
  "Age" int,
  "Is_male" bool,
  PRIMARY KEY ("Singer_ID")
)
"#;

    pub(crate) const WIKIDATA_CONTEXT: &str = r#"Knowledge graph: Wikidata
Prefixes: wd: (entity), wdt: (direct/truthy property), p: (entity -> statement node),
  ps: (statement -> main value), pq: (statement -> qualifier value), rdfs: (for rdfs:label)
Format examples (schematic IDs; use the actual topic entities and relations for the query):
  SELECT ?x WHERE { wd:Qxxx wdt:Pyyy ?x }
  SELECT ?x WHERE { wd:Qxxx wdt:Pyyy ?y . ?y wdt:Pzzz ?x }
  ASK WHERE { wd:Qxxx wdt:Pyyy wd:Qzzz }

Topic entities (from the question, already linked to Wikidata QIDs):
- wd:Q188920  (Delta Air Lines)
- wd:Q1002697 (periodical)

Linked relations (candidate properties per topic entity, choose among these):
- wd:Q188920  (Delta Air Lines):
    - P31   (instance of)
    - P229  (IATA airline designator)
    - P2813 (house publication)
- wd:Q1002697 (periodical):
    - P31  (instance of)
"#;

    pub(crate) const MOVIES_CONTEXT: &str = r#"Node properties:
- Movie
  - `title`: STRING Example: "The Matrix"
  - `votes`: INTEGER Min: 1, Max: 5259
  - `tagline`: STRING
    Example: "Welcome to the Real World"
  - `released`: INTEGER Min: 1975, Max: 2012
- Person
  - `born`: INTEGER Min: 1929, Max: 1996
  - `name`: STRING Example: "Keanu Reeves"
Relationship properties:
- ACTED_IN
  - `roles: LIST` Min Size: 1, Max Size: 6
- REVIEWED
  - `summary: STRING` Available options: [...]
  - `rating: INTEGER` Min: 45, Max: 100
The relationships:
(:Person)-[:ACTED_IN]->(:Movie)
(:Person)-[:DIRECTED]->(:Movie)
(:Person)-[:PRODUCED]->(:Movie)
(:Person)-[:WROTE]->(:Movie)
(:Person)-[:FOLLOWS]->(:Person)
(:Person)-[:REVIEWED]->(:Movie)
"#;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_singer_table_with_seven_columns() {
        let model = parse_context(BackendKind::Sql, SINGER_CONTEXT).unwrap();
        let SchemaModel::Relational(schema) = model else {
            panic!("expected relational schema")
        };
        let table = schema.table("singer").unwrap();
        assert_eq!(table.columns.len(), 7);
        assert!(table.columns.contains("Singer_ID"));
        assert!(table.columns.contains("Is_male"));
    }

    #[test]
    fn parses_wikidata_entities_properties_and_prefixes() {
        let model = parse_context(BackendKind::Sparql, WIKIDATA_CONTEXT).unwrap();
        let SchemaModel::Rdf(ctx) = model else {
            panic!("expected rdf context")
        };
        assert_eq!(ctx.entity_ids, set(&["Q188920", "Q1002697"]));
        assert!(ctx.property_ids.contains("P2813"));
        assert_eq!(ctx.property_ids, set(&["P31", "P229", "P2813"]));
        assert_eq!(ctx.known_prefixes, set(&["wd", "wdt", "p", "ps", "pq", "rdfs"]));
    }

    #[test]
    fn parses_movies_graph_schema() {
        let model = parse_context(BackendKind::Cypher, MOVIES_CONTEXT).unwrap();
        let SchemaModel::Graph(schema) = model else {
            panic!("expected graph schema")
        };
        assert_eq!(schema.node_labels, set(&["Movie", "Person"]));
        assert_eq!(
            schema.relationship_types,
            set(&["ACTED_IN", "DIRECTED", "PRODUCED", "WROTE", "FOLLOWS", "REVIEWED"])
        );
        assert!(schema.property_keys.contains("title"));
        assert!(schema.property_keys.contains("rating"));
    }

    #[test]
    fn grounded_sql_query_passes() {
        let model = parse_context(BackendKind::Sql, SINGER_CONTEXT).unwrap();
        let report = check_grounding(BackendKind::Sql, "SELECT Name FROM singer WHERE Age > 20", &model);
        assert!(report.grounded, "unknown: {:?}", report.unknown_identifiers);
    }

    #[test]
    fn unknown_table_is_flagged() {
        let model = parse_context(BackendKind::Sql, SINGER_CONTEXT).unwrap();
        let report = check_grounding(BackendKind::Sql, "SELECT * FROM artists", &model);
        assert!(!report.grounded);
        assert_eq!(report.unknown_identifiers, vec!["artists"]);
    }

    #[test]
    fn unknown_relationship_type_is_flagged() {
        let model = parse_context(BackendKind::Cypher, MOVIES_CONTEXT).unwrap();
        let report = check_grounding(
            BackendKind::Cypher,
            "MATCH (:Person)-[:WATCHED]->(:Movie) RETURN 1",
            &model,
        );
        assert_eq!(report.unknown_identifiers, vec!["WATCHED"]);
    }

    #[test]
    fn context_parse_rejects_garbage() {
        assert!(parse_context(BackendKind::Sql, "no tables here").is_err());
        assert!(parse_context(BackendKind::Cypher, "nothing structured").is_err());
    }

    #[test]
    fn kind_mismatch_is_a_note_not_a_crash() {
        let model = parse_context(BackendKind::Sql, SINGER_CONTEXT).unwrap();
        let report = check_grounding(BackendKind::Cypher, "MATCH (n) RETURN n", &model);
        assert!(report.grounded);
        assert!(!report.parse_notes.is_empty());
    }
}
