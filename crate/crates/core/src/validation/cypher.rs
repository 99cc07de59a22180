//! Property-graph context parsing (node labels, relationship types,
//! property keys) and Cypher label/relationship grounding.

use std::collections::BTreeSet;

use super::{GraphSchema, GroundingReport, ValidationError};

/// Pulls `(:Label` and `[:TYPE` tokens out of a schema triple line like
/// `(:Person)-[:ACTED_IN]->(:Movie)`.
fn scan_triple_line(line: &str, labels: &mut BTreeSet<String>, rels: &mut BTreeSet<String>) {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i + 1 < chars.len() {
        if (chars[i] == '(' || chars[i] == '[') && chars[i + 1] == ':' {
            let target = if chars[i] == '(' { &mut *labels } else { &mut *rels };
            let start = i + 2;
            let mut j = start;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            if j > start {
                target.insert(chars[start..j].iter().collect());
            }
            i = j;
        } else {
            i += 1;
        }
    }
}

pub fn parse_graph_context(context_text: &str) -> Result<GraphSchema, ValidationError> {
    let mut schema = GraphSchema::default();

    #[derive(PartialEq)]
    enum Section {
        None,
        NodeProps,
        RelProps,
        Relationships,
    }
    let mut section = Section::None;

    for line in context_text.lines() {
        let trimmed = line.trim_end();
        if trimmed.starts_with("Node properties") {
            section = Section::NodeProps;
            continue;
        }
        if trimmed.starts_with("Relationship properties") {
            section = Section::RelProps;
            continue;
        }
        if trimmed.starts_with("The relationships") {
            section = Section::Relationships;
            continue;
        }

        // Backticked names are property keys regardless of section.
        let mut rest = trimmed;
        while let Some(open) = rest.find('`') {
            let tail = &rest[open + 1..];
            // Key ends at the closing backtick or at an inner colon,
            // whichever comes first ("`roles: LIST`" declares key "roles").
            let end = match (tail.find('`'), tail.find(':')) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            match end {
                Some(close) => {
                    let key = tail[..close].trim();
                    if !key.is_empty() {
                        schema.property_keys.insert(key.to_string());
                    }
                    rest = &tail[close..];
                }
                None => break,
            }
        }

        // Top-level bullets ("- Name") declare labels / relationship types;
        // indented bullets are property lines.
        if let Some(name) = trimmed.strip_prefix("- ") {
            let name = name.trim();
            if !name.is_empty() && !name.starts_with('`') {
                match section {
                    Section::NodeProps => {
                        schema.node_labels.insert(name.to_string());
                    }
                    Section::RelProps => {
                        schema.relationship_types.insert(name.to_string());
                    }
                    _ => {}
                }
            }
        }

        if section == Section::Relationships {
            scan_triple_line(
                trimmed,
                &mut schema.node_labels,
                &mut schema.relationship_types,
            );
        }
    }

    if schema.node_labels.is_empty() && schema.relationship_types.is_empty() {
        return Err(ValidationError::ContextParse {
            reason: "no node labels or relationship types found".into(),
            line: context_text.lines().next().unwrap_or("").to_string(),
        });
    }
    Ok(schema)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bracket {
    Paren,
    Square,
    Brace,
}

/// Checks every node label (`(:Label)`) and relationship type (`[:TYPE]`)
/// in the query against the schema. Map-literal colons, strings, and
/// comments are skipped.
pub fn check_cypher(query: &str, schema: &GraphSchema) -> GroundingReport {
    let chars: Vec<char> = query.chars().collect();
    let mut stack: Vec<Bracket> = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\'' | '"' => {
                let quote = c;
                i += 1;
                while i < chars.len() && chars[i] != quote {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i += 1;
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                    i += 1;
                }
                i = (i + 2).min(chars.len());
            }
            '(' => {
                stack.push(Bracket::Paren);
                i += 1;
            }
            '[' => {
                stack.push(Bracket::Square);
                i += 1;
            }
            '{' => {
                stack.push(Bracket::Brace);
                i += 1;
            }
            ')' | ']' | '}' => {
                stack.pop();
                i += 1;
            }
            ':' => {
                let context = stack.last().copied();
                i += 1;
                // Repeatedly read identifiers separated by | or & or :
                // (label conjunctions and relationship alternations).
                loop {
                    while i < chars.len() && (chars[i] == '!' || chars[i].is_whitespace()) {
                        i += 1;
                    }
                    let (name, next) = read_name(&chars, i);
                    if name.is_empty() {
                        break;
                    }
                    i = next;
                    match context {
                        Some(Bracket::Paren) => {
                            if !schema.node_labels.contains(&name) && seen.insert(name.clone()) {
                                unknown.push(name);
                            }
                        }
                        Some(Bracket::Square) => {
                            if !schema.relationship_types.contains(&name) && seen.insert(name.clone())
                            {
                                unknown.push(name);
                            }
                        }
                        // Map literal key/value colon or top-level use.
                        _ => {}
                    }
                    while i < chars.len() && chars[i].is_whitespace() {
                        i += 1;
                    }
                    match chars.get(i) {
                        Some('|') | Some('&') | Some(':') => i += 1,
                        _ => break,
                    }
                }
            }
            _ => i += 1,
        }
    }

    GroundingReport::from_parts(unknown, Vec::new())
}

fn read_name(chars: &[char], mut i: usize) -> (String, usize) {
    if chars.get(i) == Some(&'`') {
        i += 1;
        let start = i;
        while i < chars.len() && chars[i] != '`' {
            i += 1;
        }
        return (chars[start..i].iter().collect(), (i + 1).min(chars.len()));
    }
    let start = i;
    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
        i += 1;
    }
    (chars[start..i].iter().collect(), i)
}
