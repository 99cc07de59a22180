//! Shared fixtures for the integration test targets: structural contexts
//! for one source per backend, a catalog built from them, and a provider
//! that records every request it serves.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use omni_core::gateway::{ChatRequest, ChatResponse, GatewayError, Provider};
use omni_core::selection::Decision;
use omni_core::{BackendKind, Catalog, ConnectionSpec, SourceDescriptor};

pub const SINGER_CONTEXT: &str = r#"CREATE TABLE "singer" (
  "Singer_ID" int,
  "Name" text,
  "Country" text,
  "Song_Name" text,
  "Song_release_year" text,
  "Age" int,
  "Is_male" bool,
  PRIMARY KEY ("Singer_ID")
)"#;

pub const WIKIDATA_CONTEXT: &str = r#"Knowledge graph: Wikidata
Prefixes: wd: (entity), wdt: (direct/truthy property), p: (entity -> statement node),
  ps: (statement -> main value), pq: (statement -> qualifier value), rdfs: (for rdfs:label)

Topic entities (from the question, already linked to Wikidata QIDs):
- wd:Q188920  (Delta Air Lines)

Linked relations (candidate properties per topic entity, choose among these):
- wd:Q188920  (Delta Air Lines):
    - P31   (instance of)
    - P2813 (house publication)"#;

pub const MOVIES_CONTEXT: &str = r#"Node properties:
- Movie
  - `title`: STRING Example: "The Matrix"
- Person
  - `name`: STRING Example: "Keanu Reeves"
The relationships:
(:Person)-[:ACTED_IN]->(:Movie)
(:Person)-[:DIRECTED]->(:Movie)"#;

pub const CORPUS_CONTEXT: &str = r#"Corpus: nfcorpus
Description: Medical and nutritional information retrieval
Query type: a consumer-health or nutrition query, often very terse
Document style: a PubMed-style biomedical research abstract"#;

/// Returns a canned answer while recording every request verbatim.
pub struct CapturingProvider {
    requests: Mutex<Vec<ChatRequest>>,
    response: String,
}

impl CapturingProvider {
    pub fn new(response: &str) -> Self {
        CapturingProvider {
            requests: Mutex::new(Vec::new()),
            response: response.to_string(),
        }
    }

    pub fn only_request(&self) -> ChatRequest {
        let requests = self.requests.lock().unwrap();
        assert_eq!(requests.len(), 1, "expected exactly one LLM call");
        requests[0].clone()
    }
}

impl Provider for CapturingProvider {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        self.requests.lock().unwrap().push(request.clone());
        Box::pin(async move {
            Ok(ChatResponse {
                text: self.response.clone(),
                latency: std::time::Duration::ZERO,
                provider_id: "capturing".into(),
            })
        })
    }
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn render_request(request: &ChatRequest) -> String {
    format!("SYSTEM:\n{}\n\nUSER:\n{}\n", request.system, request.user)
}

pub fn fixture_catalog() -> Catalog {
    let mut catalog = Catalog::new();
    let entries = [
        (
            "nfcorpus",
            BackendKind::Search,
            CORPUS_CONTEXT,
            "Medical and nutritional information retrieval | query type: terse consumer-health \
             queries | examples: vitamin d deficiency",
            ConnectionSpec::Corpus {
                path: PathBuf::from("/dev/null"),
                embedding_url: None,
            },
        ),
        (
            "concert_singer",
            BackendKind::Sql,
            SINGER_CONTEXT,
            "tables: singer, concert, singer_in_concert, stadium",
            ConnectionSpec::SqlFile {
                path: PathBuf::from("/dev/null"),
            },
        ),
        (
            "wikidata",
            BackendKind::Sparql,
            WIKIDATA_CONTEXT,
            "entities: Delta Air Lines | relations: instance of, house publication",
            ConnectionSpec::SparqlEndpoint {
                url: "http://localhost:1/sparql".into(),
            },
        ),
        (
            "movies",
            BackendKind::Cypher,
            MOVIES_CONTEXT,
            "nodes: Movie, Person | rels: ACTED_IN, DIRECTED",
            ConnectionSpec::GraphEndpoint {
                url: "http://localhost:1".into(),
                database: "neo4j".into(),
                credentials_ref: None,
            },
        ),
    ];
    for (kb_id, kind, context, line, connection) in entries {
        catalog = catalog
            .register(SourceDescriptor {
                kb_id: kb_id.into(),
                kind,
                context_text: context.into(),
                catalog_line: line.into(),
                connection,
            })
            .unwrap();
    }
    catalog
}

pub fn descriptor(kb_id: &str) -> SourceDescriptor {
    fixture_catalog().lookup(kb_id).unwrap().clone()
}

pub fn decision(kind: BackendKind, kb_id: &str) -> Decision {
    Decision {
        kind,
        kb_id: kb_id.into(),
        rank: 0,
    }
}
