//! Knowledge-source registry: the open-ended pool of sources, their
//! structural contexts, and the routing-catalog rendering.
//!
//! A [`Catalog`] is immutable after load; adding a source produces a new
//! catalog value and never mutates existing entries, so catalogs can be
//! shared read-only across concurrent pipeline runs.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four native retrieval backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BackendKind {
    Search,
    Sql,
    Sparql,
    Cypher,
}

impl BackendKind {
    /// Fixed group order used everywhere a catalog is rendered.
    pub const ALL: [BackendKind; 4] = [
        BackendKind::Search,
        BackendKind::Sql,
        BackendKind::Sparql,
        BackendKind::Cypher,
    ];

    /// Uppercase wire form matching the selection prompt vocabulary.
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Search => "SEARCH",
            BackendKind::Sql => "SQL",
            BackendKind::Sparql => "SPARQL",
            BackendKind::Cypher => "CYPHER",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SEARCH" => Ok(BackendKind::Search),
            "SQL" => Ok(BackendKind::Sql),
            "SPARQL" => Ok(BackendKind::Sparql),
            "CYPHER" => Ok(BackendKind::Cypher),
            other => Err(RegistryError::UnknownKind(other.to_string())),
        }
    }
}

/// How to reach a source's execution engine. The variant must agree with
/// the descriptor's [`BackendKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConnectionSpec {
    /// JSONL corpus on disk, searched by the built-in lexical retriever.
    /// `embedding_url`, when set, routes ranking through an external
    /// embedding service instead.
    Corpus {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding_url: Option<String>,
    },
    /// SQLite database file, opened read-only per execution.
    SqlFile { path: PathBuf },
    /// SPARQL 1.1 protocol endpoint.
    SparqlEndpoint { url: String },
    /// Property-graph HTTP transactional endpoint. `credentials_ref` names
    /// an environment variable holding `user:password`.
    GraphEndpoint {
        url: String,
        database: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credentials_ref: Option<String>,
    },
}

impl ConnectionSpec {
    /// The backend kind this connection serves.
    pub fn kind(&self) -> BackendKind {
        match self {
            ConnectionSpec::Corpus { .. } => BackendKind::Search,
            ConnectionSpec::SqlFile { .. } => BackendKind::Sql,
            ConnectionSpec::SparqlEndpoint { .. } => BackendKind::Sparql,
            ConnectionSpec::GraphEndpoint { .. } => BackendKind::Cypher,
        }
    }

    fn validate(&self) -> Result<(), RegistryError> {
        match self {
            ConnectionSpec::Corpus { path, .. } | ConnectionSpec::SqlFile { path } => {
                if !path.exists() {
                    return Err(RegistryError::BadConnection(format!(
                        "path does not exist: {}",
                        path.display()
                    )));
                }
            }
            ConnectionSpec::SparqlEndpoint { url }
            | ConnectionSpec::GraphEndpoint { url, .. } => {
                url::Url::parse(url).map_err(|e| {
                    RegistryError::BadConnection(format!("invalid url {url}: {e}"))
                })?;
            }
        }
        Ok(())
    }
}

/// One registered knowledge source: its structural context and how to
/// reach its execution engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub kb_id: String,
    pub kind: BackendKind,
    /// Verbatim structural context exposed by the source (schema, entity
    /// and predicate lists, graph schema, or corpus descriptor).
    pub context_text: String,
    /// One-line summary shown in the routing catalog.
    pub catalog_line: String,
    pub connection: ConnectionSpec,
}

impl SourceDescriptor {
    fn validate(&self) -> Result<(), RegistryError> {
        if self.kb_id.is_empty() {
            return Err(RegistryError::BadDescriptor("empty kb_id".into()));
        }
        if self.context_text.is_empty() {
            return Err(RegistryError::BadDescriptor(format!(
                "{}: empty context_text",
                self.kb_id
            )));
        }
        if self.connection.kind() != self.kind {
            return Err(RegistryError::BadConnection(format!(
                "{}: connection is for {} but source kind is {}",
                self.kb_id,
                self.connection.kind(),
                self.kind
            )));
        }
        self.connection.validate()
    }
}

/// Ordered pool of registered sources. Iteration order is registration
/// order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    sources: Vec<SourceDescriptor>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("catalog config parse error: {0}")]
    ConfigParse(String),
    #[error("duplicate kb_id: {0}")]
    DuplicateKbId(String),
    #[error("missing context file: {0}")]
    MissingContextFile(PathBuf),
    #[error("bad connection: {0}")]
    BadConnection(String),
    #[error("bad descriptor: {0}")]
    BadDescriptor(String),
    #[error("unknown backend kind: {0}")]
    UnknownKind(String),
    #[error("catalog is empty")]
    EmptyCatalog,
}

#[derive(Deserialize)]
struct CatalogConfig {
    sources: Vec<SourceConfig>,
}

#[derive(Deserialize)]
struct SourceConfig {
    kb_id: String,
    kind: String,
    #[serde(default)]
    catalog_line: Option<String>,
    context_file: PathBuf,
    connection: ConnectionSpec,
}

/// Fallback catalog line when the config does not supply one: first line
/// of the context, truncated to 200 characters.
fn derive_catalog_line(context_text: &str) -> String {
    let first = context_text.lines().next().unwrap_or("").trim();
    first.chars().take(200).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    /// Loads and validates a catalog from a JSON config file. Relative
    /// paths in the config resolve against the config file's directory.
    pub fn load(config_path: &Path) -> Result<Catalog, RegistryError> {
        let raw = std::fs::read_to_string(config_path).map_err(|source| RegistryError::Io {
            path: config_path.to_path_buf(),
            source,
        })?;
        let config: CatalogConfig =
            serde_json::from_str(&raw).map_err(|e| RegistryError::ConfigParse(e.to_string()))?;
        let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

        let mut catalog = Catalog::new();
        for src in config.sources {
            let kind: BackendKind = src.kind.parse()?;
            let context_path = resolve(&base, &src.context_file);
            if !context_path.exists() {
                return Err(RegistryError::MissingContextFile(context_path));
            }
            let context_text =
                std::fs::read_to_string(&context_path).map_err(|source| RegistryError::Io {
                    path: context_path.clone(),
                    source,
                })?;
            let connection = match src.connection {
                ConnectionSpec::Corpus {
                    path,
                    embedding_url,
                } => ConnectionSpec::Corpus {
                    path: resolve(&base, &path),
                    embedding_url,
                },
                ConnectionSpec::SqlFile { path } => ConnectionSpec::SqlFile {
                    path: resolve(&base, &path),
                },
                other => other,
            };
            let catalog_line = src
                .catalog_line
                .unwrap_or_else(|| derive_catalog_line(&context_text));
            catalog = catalog.register(SourceDescriptor {
                kb_id: src.kb_id,
                kind,
                context_text,
                catalog_line,
                connection,
            })?;
        }
        Ok(catalog)
    }

    /// Appends a validated descriptor, returning a new catalog. Existing
    /// entries are untouched.
    pub fn register(&self, desc: SourceDescriptor) -> Result<Catalog, RegistryError> {
        desc.validate()?;
        if self.lookup(&desc.kb_id).is_some() {
            return Err(RegistryError::DuplicateKbId(desc.kb_id));
        }
        let mut sources = self.sources.clone();
        sources.push(desc);
        Ok(Catalog { sources })
    }

    pub fn lookup(&self, kb_id: &str) -> Option<&SourceDescriptor> {
        self.sources.iter().find(|s| s.kb_id == kb_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SourceDescriptor> {
        self.sources.iter()
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Sources of one kind, in registration order.
    pub fn by_kind(&self, kind: BackendKind) -> Vec<&SourceDescriptor> {
        self.sources.iter().filter(|s| s.kind == kind).collect()
    }

    /// Catalog restricted to a single backend kind (for the single-backend
    /// baseline modes).
    pub fn filter_kind(&self, kind: BackendKind) -> Catalog {
        Catalog {
            sources: self
                .sources
                .iter()
                .filter(|s| s.kind == kind)
                .cloned()
                .collect(),
        }
    }

    /// Renders the routing catalog text: sources grouped by kind in the
    /// fixed order SEARCH, SQL, SPARQL, CYPHER, one bullet per source,
    /// empty kinds omitted.
    pub fn render(&self, _k: usize) -> Result<String, RegistryError> {
        if self.sources.is_empty() {
            return Err(RegistryError::EmptyCatalog);
        }
        let mut out = String::from("Available knowledge bases:\n");
        for kind in BackendKind::ALL {
            let group = self.by_kind(kind);
            if group.is_empty() {
                continue;
            }
            out.push_str(&format!("\n  {}:\n", kind.as_str()));
            for desc in group {
                out.push_str(&format!("    - {} [{}]\n", desc.kb_id, desc.catalog_line));
            }
        }
        Ok(out)
    }
}

impl Catalog {
    /// Duplicate-free set of kb_ids, handy for config sanity checks.
    pub fn kb_ids(&self) -> HashSet<&str> {
        self.sources.iter().map(|s| s.kb_id.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn search_desc(kb_id: &str, dir: &Path) -> SourceDescriptor {
        let path = dir.join(format!("{kb_id}.jsonl"));
        std::fs::File::create(&path).unwrap();
        SourceDescriptor {
            kb_id: kb_id.to_string(),
            kind: BackendKind::Search,
            context_text: format!("Corpus: {kb_id}\nDescription: test corpus"),
            catalog_line: format!("{kb_id} corpus"),
            connection: ConnectionSpec::Corpus {
                path,
                embedding_url: None,
            },
        }
    }

    fn sql_desc(kb_id: &str, dir: &Path) -> SourceDescriptor {
        let path = dir.join(format!("{kb_id}.sqlite"));
        std::fs::File::create(&path).unwrap();
        SourceDescriptor {
            kb_id: kb_id.to_string(),
            kind: BackendKind::Sql,
            context_text: "CREATE TABLE \"t\" (\"a\" int)".to_string(),
            catalog_line: "t".to_string(),
            connection: ConnectionSpec::SqlFile { path },
        }
    }

    #[test]
    fn kind_string_forms_are_uppercase() {
        assert_eq!(BackendKind::Search.as_str(), "SEARCH");
        assert_eq!(BackendKind::Sql.as_str(), "SQL");
        assert_eq!(BackendKind::Sparql.as_str(), "SPARQL");
        assert_eq!(BackendKind::Cypher.as_str(), "CYPHER");
        assert_eq!("sparql".parse::<BackendKind>().unwrap(), BackendKind::Sparql);
    }

    #[test]
    fn register_appends_and_lookup_finds() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::new();
        let d = search_desc("movies", dir.path());
        let catalog = catalog.register(d.clone()).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(catalog.lookup("movies"), Some(&d));
    }

    #[test]
    fn duplicate_kb_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::new()
            .register(search_desc("movies", dir.path()))
            .unwrap();
        let err = catalog.register(search_desc("movies", dir.path())).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateKbId(_)));
    }

    #[test]
    fn connection_kind_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = search_desc("movies", dir.path());
        d.kind = BackendKind::Sql;
        assert!(matches!(
            Catalog::new().register(d),
            Err(RegistryError::BadConnection(_))
        ));
    }

    #[test]
    fn render_groups_in_fixed_order_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        // Register SQL before SEARCH; render must still put SEARCH first.
        let catalog = Catalog::new()
            .register(sql_desc("concert_singer", dir.path()))
            .unwrap()
            .register(search_desc("nfcorpus", dir.path()))
            .unwrap();
        let text = catalog.render(3).unwrap();
        let search_pos = text.find("SEARCH:").unwrap();
        let sql_pos = text.find("SQL:").unwrap();
        assert!(search_pos < sql_pos);
        assert!(text.contains("    - nfcorpus [nfcorpus corpus]"));
        assert!(!text.contains("SPARQL:"));
        assert_eq!(text, catalog.render(3).unwrap());
    }

    #[test]
    fn register_then_render_appends_last_in_group() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::new()
            .register(search_desc("a", dir.path()))
            .unwrap();
        let before = catalog.render(3).unwrap();
        let after = catalog
            .register(search_desc("b", dir.path()))
            .unwrap()
            .render(3)
            .unwrap();
        assert!(after.starts_with(&before[..before.len() - 1]));
        assert!(after.trim_end().ends_with("- b [b corpus]"));
    }

    #[test]
    fn empty_catalog_render_errors() {
        assert!(matches!(
            Catalog::new().render(3),
            Err(RegistryError::EmptyCatalog)
        ));
    }

    #[test]
    fn load_catalog_from_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ctx.txt"), "Corpus: c\nmore").unwrap();
        std::fs::File::create(dir.path().join("docs.jsonl")).unwrap();
        let config = serde_json::json!({
            "sources": [
                {
                    "kb_id": "c1",
                    "kind": "SEARCH",
                    "context_file": "ctx.txt",
                    "connection": {"type": "corpus", "path": "docs.jsonl"}
                },
                {
                    "kb_id": "c2",
                    "kind": "SEARCH",
                    "catalog_line": "explicit line",
                    "context_file": "ctx.txt",
                    "connection": {"type": "corpus", "path": "docs.jsonl"}
                }
            ]
        });
        let config_path = dir.path().join("catalog.json");
        let mut f = std::fs::File::create(&config_path).unwrap();
        write!(f, "{config}").unwrap();

        let catalog = Catalog::load(&config_path).unwrap();
        assert_eq!(catalog.len(), 2);
        let ids: Vec<_> = catalog.iter().map(|s| s.kb_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c2"]);
        // Auto-derived line is the first context line.
        assert_eq!(catalog.lookup("c1").unwrap().catalog_line, "Corpus: c");
        assert_eq!(catalog.lookup("c2").unwrap().catalog_line, "explicit line");
    }

    #[test]
    fn load_catalog_missing_context_file() {
        let dir = tempfile::tempdir().unwrap();
        let config = serde_json::json!({
            "sources": [{
                "kb_id": "c1",
                "kind": "SEARCH",
                "context_file": "nope.txt",
                "connection": {"type": "corpus", "path": "docs.jsonl"}
            }]
        });
        let config_path = dir.path().join("catalog.json");
        std::fs::write(&config_path, config.to_string()).unwrap();
        assert!(matches!(
            Catalog::load(&config_path),
            Err(RegistryError::MissingContextFile(_))
        ));
    }

    #[test]
    fn load_catalog_duplicate_kb_id() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ctx.txt"), "x").unwrap();
        std::fs::File::create(dir.path().join("docs.jsonl")).unwrap();
        let entry = serde_json::json!({
            "kb_id": "movies",
            "kind": "SEARCH",
            "context_file": "ctx.txt",
            "connection": {"type": "corpus", "path": "docs.jsonl"}
        });
        let config = serde_json::json!({ "sources": [entry, entry] });
        let config_path = dir.path().join("catalog.json");
        std::fs::write(&config_path, config.to_string()).unwrap();
        assert!(matches!(
            Catalog::load(&config_path),
            Err(RegistryError::DuplicateKbId(_))
        ));
    }

    #[test]
    fn catalog_line_fallback_truncates_to_200_chars() {
        let long = "x".repeat(500);
        assert_eq!(derive_catalog_line(&long).len(), 200);
    }
}
