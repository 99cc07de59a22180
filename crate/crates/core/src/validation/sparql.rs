//! RDF context parsing (topic entities, candidate predicates, declared
//! prefixes) and SPARQL identifier grounding.

use std::collections::BTreeSet;

use super::{GroundingReport, RdfContext, ValidationError};

/// Prefixes whose local part names a property when it matches `P<digits>`.
const PROPERTY_PREFIXES: &[&str] = &["wdt", "p", "ps", "pq"];

fn is_q_id(s: &str) -> bool {
    s.len() > 1 && s.starts_with('Q') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

fn is_p_id(s: &str) -> bool {
    s.len() > 1 && s.starts_with('P') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Splits text into identifier-ish words (alphanumeric plus underscore).
fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
}

pub fn parse_rdf_context(context_text: &str) -> Result<RdfContext, ValidationError> {
    let mut ctx = RdfContext::default();

    // Declared prefixes: the "Prefixes:" line plus indented continuations.
    let mut in_prefixes = false;
    for line in context_text.lines() {
        let starts = line.trim_start().starts_with("Prefixes:");
        if starts {
            in_prefixes = true;
        } else if in_prefixes && !line.starts_with(char::is_whitespace) {
            in_prefixes = false;
        }
        if in_prefixes {
            let mut rest = line;
            while let Some(pos) = rest.find(':') {
                let head = &rest[..pos];
                let name: String = head
                    .chars()
                    .rev()
                    .take_while(|c| c.is_alphanumeric() || *c == '_' || *c == '-')
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .collect();
                if !name.is_empty() && name != "Prefixes" && name.chars().next().unwrap().is_alphabetic() {
                    ctx.known_prefixes.insert(name);
                }
                rest = &rest[pos + 1..];
            }
        }
    }

    // Entity and property identifiers anywhere in the block. Schematic
    // placeholders (Qxxx, Pyyy) carry no digits and are skipped.
    for w in words(context_text) {
        if is_q_id(w) {
            ctx.entity_ids.insert(w.to_string());
        } else if is_p_id(w) {
            ctx.property_ids.insert(w.to_string());
        }
    }

    if ctx.entity_ids.is_empty() && ctx.property_ids.is_empty() {
        return Err(ValidationError::ContextParse {
            reason: "no entity or property identifiers found".into(),
            line: context_text.lines().next().unwrap_or("").to_string(),
        });
    }
    Ok(ctx)
}

/// Collects `prefix:local` tokens from a SPARQL query, skipping string
/// literals, IRIs in angle brackets, and `#` comments.
fn prefixed_tokens(query: &str) -> Vec<(String, String)> {
    let chars: Vec<char> = query.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '<' => {
                while i < chars.len() && chars[i] != '>' {
                    i += 1;
                }
                i += 1;
            }
            '"' | '\'' => {
                let quote = chars[i];
                i += 1;
                while i < chars.len() && chars[i] != quote {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i += 1;
            }
            '?' | '$' => {
                // Variable: skip the name so it is never read as a prefix.
                i += 1;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
            }
            c if c.is_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if i < chars.len() && chars[i] == ':' {
                    i += 1;
                    let local_start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let local: String = chars[local_start..i].iter().collect();
                    out.push((word, local));
                }
            }
            _ => i += 1,
        }
    }
    out
}

pub fn check_sparql(query: &str, ctx: &RdfContext) -> GroundingReport {
    let mut unknown: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let flag = |unknown: &mut Vec<String>, seen: &mut BTreeSet<String>, item: String| {
        if seen.insert(item.clone()) {
            unknown.push(item);
        }
    };

    for (prefix, local) in prefixed_tokens(query) {
        if !ctx.known_prefixes.contains(&prefix) {
            flag(&mut unknown, &mut seen, format!("{prefix}:"));
            continue;
        }
        if prefix == "wd" {
            if is_q_id(&local) && !ctx.entity_ids.contains(&local) {
                flag(&mut unknown, &mut seen, format!("wd:{local}"));
            }
        } else if PROPERTY_PREFIXES.contains(&prefix.as_str())
            && is_p_id(&local)
            && !ctx.property_ids.contains(&local)
        {
            flag(&mut unknown, &mut seen, format!("{prefix}:{local}"));
        }
    }

    GroundingReport::from_parts(unknown, Vec::new())
}
