//! In-process lexical retrieval: JSONL corpus loading, an inverted index,
//! and BM25 ranking. An external embedding service can replace the ranking
//! per source while keeping the same corpus and outcome shape.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{ExecError, ExecLimits, ExecOutcome, Passage};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Deserialize)]
struct CorpusDoc {
    doc_id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    doc: usize,
    tf: u32,
}

/// Immutable inverted index over a corpus; shareable across questions.
#[derive(Debug)]
pub struct DocumentIndex {
    docs: Vec<Document>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
}

/// Lowercased, punctuation-stripped whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl DocumentIndex {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    fn doc_text(doc: &Document) -> String {
        if doc.title.is_empty() {
            doc.text.clone()
        } else {
            format!("{} {}", doc.title, doc.text)
        }
    }
}

/// Loads a JSONL corpus ({"doc_id","title","text"} per line) and builds
/// the index. Statistics are checked for consistency with the doc store.
pub fn build_index(corpus_path: &Path) -> Result<DocumentIndex, ExecError> {
    let raw = std::fs::read_to_string(corpus_path)
        .map_err(|e| ExecError::CorpusParse(format!("reading {}: {e}", corpus_path.display())))?;

    let mut docs: Vec<Document> = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusDoc = serde_json::from_str(line).map_err(|e| {
            ExecError::CorpusParse(format!("line {}: {e}", lineno + 1))
        })?;
        if docs.iter().any(|d| d.doc_id == parsed.doc_id) {
            return Err(ExecError::CorpusParse(format!(
                "duplicate doc_id {:?} at line {}",
                parsed.doc_id,
                lineno + 1
            )));
        }
        docs.push(Document {
            doc_id: parsed.doc_id,
            title: parsed.title,
            text: parsed.text,
        });
    }
    if docs.is_empty() {
        return Err(ExecError::CorpusParse("corpus is empty".into()));
    }

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let tokens = tokenize(&DocumentIndex::doc_text(doc));
        doc_lengths.push(tokens.len());
        let mut counts: HashMap<String, u32> = HashMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        for (token, tf) in counts {
            postings.entry(token).or_default().push(Posting { doc: i, tf });
        }
    }
    // Postings sorted by doc_id ascending.
    for list in postings.values_mut() {
        list.sort_by(|a, b| docs[a.doc].doc_id.cmp(&docs[b.doc].doc_id));
    }
    let total: usize = doc_lengths.iter().sum();
    let avg_doc_length = total as f64 / docs.len() as f64;

    // Statistics consistency: term frequencies must sum back to lengths.
    let mut recount = vec![0usize; docs.len()];
    for list in postings.values() {
        for p in list {
            recount[p.doc] += p.tf as usize;
        }
    }
    if recount != doc_lengths {
        return Err(ExecError::CorpusParse(
            "index statistics inconsistent with doc store".into(),
        ));
    }

    Ok(DocumentIndex {
        docs,
        postings,
        doc_lengths,
        avg_doc_length,
    })
}

fn idf(n_docs: usize, df: usize) -> f64 {
    (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// BM25 ranking (k1 = 1.2, b = 0.75) of the corpus against the query
/// text. Every query token occurrence contributes, so a multi-line query
/// (verbatim question plus hypothetical passage) scores all its terms.
/// Results are top `top_n` by score descending, doc_id ascending on ties.
pub fn retrieve_documents(index: &DocumentIndex, query_text: &str, top_n: usize) -> ExecOutcome {
    let query_tokens = tokenize(query_text);
    let mut scores: HashMap<usize, f64> = HashMap::new();
    let n = index.docs.len();

    for token in &query_tokens {
        let Some(list) = index.postings.get(token) else {
            continue;
        };
        let term_idf = idf(n, list.len());
        for posting in list {
            let tf = posting.tf as f64;
            let dl = index.doc_lengths[posting.doc] as f64;
            let norm = tf * (BM25_K1 + 1.0)
                / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avg_doc_length));
            *scores.entry(posting.doc).or_insert(0.0) += term_idf * norm;
        }
    }

    let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.docs[a.0].doc_id.cmp(&index.docs[b.0].doc_id))
    });
    ranked.truncate(top_n);

    ExecOutcome::Passages {
        items: ranked
            .into_iter()
            .map(|(doc, score)| Passage {
                doc_id: index.docs[doc].doc_id.clone(),
                score,
                text: DocumentIndex::doc_text(&index.docs[doc]),
            })
            .collect(),
        truncated: 0,
    }
}

// ---------------------------------------------------------------------------
// External embedding service
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Ranks the corpus by cosine similarity of vectors from an external
/// embedding service (POST {"texts": [...]} -> {"vectors": [...]}).
/// The query is the first text, the documents follow.
pub(crate) async fn retrieve_embedding(
    client: &reqwest::Client,
    url: &str,
    index: &DocumentIndex,
    query_text: &str,
    top_n: usize,
    limits: &ExecLimits,
) -> Result<ExecOutcome, ExecError> {
    let doc_texts: Vec<String> = index.docs.iter().map(DocumentIndex::doc_text).collect();
    let mut texts = vec![query_text];
    texts.extend(doc_texts.iter().map(String::as_str));

    let resp = client
        .post(url)
        .timeout(limits.timeout)
        .json(&EmbedRequest { texts })
        .send()
        .await
        .map_err(|e| {
            if e.is_timeout() {
                ExecError::Timeout
            } else {
                ExecError::Transport(e.to_string())
            }
        })?;
    if !resp.status().is_success() {
        return Err(ExecError::BackendError(format!(
            "embedding service returned {}",
            resp.status()
        )));
    }
    let parsed: EmbedResponse = resp
        .json()
        .await
        .map_err(|e| ExecError::Transport(format!("decoding embedding response: {e}")))?;
    if parsed.vectors.len() != index.docs.len() + 1 {
        return Err(ExecError::BackendError(format!(
            "embedding service returned {} vectors for {} texts",
            parsed.vectors.len(),
            index.docs.len() + 1
        )));
    }

    let query_vec = &parsed.vectors[0];
    let mut ranked: Vec<(usize, f64)> = parsed.vectors[1..]
        .iter()
        .enumerate()
        .map(|(i, v)| (i, cosine(query_vec, v)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.docs[a.0].doc_id.cmp(&index.docs[b.0].doc_id))
    });
    ranked.truncate(top_n);

    Ok(ExecOutcome::Passages {
        items: ranked
            .into_iter()
            .map(|(doc, score)| Passage {
                doc_id: index.docs[doc].doc_id.clone(),
                score,
                text: DocumentIndex::doc_text(&index.docs[doc]),
            })
            .collect(),
        truncated: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn write_corpus(docs: &[(&str, &str, &str)]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for (doc_id, title, text) in docs {
            writeln!(
                file,
                "{}",
                serde_json::json!({"doc_id": doc_id, "title": title, "text": text})
            )
            .unwrap();
        }
        file.flush().unwrap();
        file
    }

    #[test]
    fn builds_index_with_exact_statistics() {
        let corpus = write_corpus(&[
            ("d1", "", "alpha beta gamma"),
            ("d2", "", "alpha alpha"),
            ("d3", "", "delta"),
        ]);
        let index = build_index(corpus.path()).unwrap();
        assert_eq!(index.len(), 3);
        assert!((index.avg_doc_length() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = write_corpus(&[]);
        assert!(matches!(
            build_index(corpus.path()),
            Err(ExecError::CorpusParse(_))
        ));
    }

    #[test]
    fn duplicate_doc_id_is_an_error() {
        let corpus = write_corpus(&[("d1", "", "a"), ("d1", "", "b")]);
        assert!(matches!(
            build_index(corpus.path()),
            Err(ExecError::CorpusParse(_))
        ));
    }

    #[test]
    fn unique_term_ranks_its_document_first() {
        let corpus = write_corpus(&[
            ("d1", "", "common words here"),
            ("d2", "", "common words zyzzyva"),
            ("d3", "", "common words again"),
        ]);
        let index = build_index(corpus.path()).unwrap();
        let ExecOutcome::Passages { items, .. } = retrieve_documents(&index, "zyzzyva", 10) else {
            panic!()
        };
        assert_eq!(items[0].doc_id, "d2");
        assert_eq!(items.len(), 1);
    }

    #[test]
    fn top_n_limits_results_descending() {
        let corpus = write_corpus(&[
            ("a", "", "term term term filler"),
            ("b", "", "term term filler pad"),
            ("c", "", "term filler pad pad"),
            ("d", "", "filler pad pad pad term"),
            ("e", "", "term pad"),
        ]);
        let index = build_index(corpus.path()).unwrap();
        let ExecOutcome::Passages { items, .. } = retrieve_documents(&index, "term", 2) else {
            panic!()
        };
        assert_eq!(items.len(), 2);
        assert!(items[0].score >= items[1].score);
    }

    #[test]
    fn empty_query_yields_empty_passages() {
        let corpus = write_corpus(&[("d1", "", "something")]);
        let index = build_index(corpus.path()).unwrap();
        let outcome = retrieve_documents(&index, "", 10);
        assert!(outcome.is_empty());
    }

    #[test]
    fn ties_break_by_doc_id_ascending() {
        let corpus = write_corpus(&[("b", "", "term pad"), ("a", "", "term pad")]);
        let index = build_index(corpus.path()).unwrap();
        let ExecOutcome::Passages { items, .. } = retrieve_documents(&index, "term", 10) else {
            panic!()
        };
        assert_eq!(items[0].doc_id, "a");
        assert_eq!(items[1].doc_id, "b");
    }
}
