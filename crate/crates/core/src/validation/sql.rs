//! Relational context parsing (CREATE TABLE declarations) and SQL
//! identifier grounding.
//!
//! SQL identifiers are compared case-insensitively. Column existence is
//! checked globally (any table) for unqualified names; qualified names are
//! checked against their resolved table or alias.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{GroundingReport, ValidationError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub tables: Vec<TableSchema>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: BTreeSet<String>,
}

impl RelationalSchema {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    fn has_column_anywhere(&self, name: &str) -> bool {
        self.tables
            .iter()
            .any(|t| t.columns.iter().any(|c| c.eq_ignore_ascii_case(name)))
    }
}

impl TableSchema {
    fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.eq_ignore_ascii_case(name))
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    /// Bare or quoted identifier; quoted ones are never keywords.
    Ident { text: String, quoted: bool },
    Number,
    StringLit,
    Punct(char),
}

/// Tokenizes SQL, respecting string literals, quoted identifiers
/// (`"x"`, `` `x` ``, `[x]`), and `--` / `/* */` comments.
fn lex(input: &str) -> Vec<Tok> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i = (i + 2).min(chars.len());
        } else if c == '\'' {
            i += 1;
            while i < chars.len() {
                if chars[i] == '\'' {
                    if chars.get(i + 1) == Some(&'\'') {
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                i += 1;
            }
            toks.push(Tok::StringLit);
        } else if c == '"' || c == '`' || c == '[' {
            let close = match c {
                '"' => '"',
                '`' => '`',
                _ => ']',
            };
            i += 1;
            let start = i;
            while i < chars.len() && chars[i] != close {
                i += 1;
            }
            toks.push(Tok::Ident {
                text: chars[start..i].iter().collect(),
                quoted: true,
            });
            i = (i + 1).min(chars.len());
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            toks.push(Tok::Ident {
                text: chars[start..i].iter().collect(),
                quoted: false,
            });
        } else if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
            toks.push(Tok::Number);
        } else {
            toks.push(Tok::Punct(c));
            i += 1;
        }
    }
    toks
}

/// Reserved words and common functions that must never be read as schema
/// identifiers.
const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "HAVING", "LIMIT", "OFFSET", "JOIN",
    "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL", "ON", "AS", "AND", "OR",
    "NOT", "IN", "IS", "NULL", "LIKE", "GLOB", "REGEXP", "ESCAPE", "BETWEEN", "EXISTS", "UNION",
    "ALL", "INTERSECT", "EXCEPT", "DISTINCT", "CASE", "WHEN", "THEN", "ELSE", "END", "ASC",
    "DESC", "CAST", "WITH", "RECURSIVE", "VALUES", "COLLATE", "USING", "TRUE", "FALSE",
    "CURRENT_DATE", "CURRENT_TIME", "CURRENT_TIMESTAMP", "CREATE", "TABLE", "PRIMARY",
    "FOREIGN", "KEY", "REFERENCES", "UNIQUE", "CHECK", "DEFAULT", "CONSTRAINT", "IF", "INSERT",
    "UPDATE", "DELETE", "SET", "INTO", "COUNT", "SUM", "AVG", "MIN", "MAX", "ABS", "ROUND",
    "LENGTH", "UPPER", "LOWER", "SUBSTR", "SUBSTRING", "COALESCE", "IFNULL", "NULLIF", "INSTR",
    "TRIM", "LTRIM", "RTRIM", "REPLACE", "DATE", "TIME", "DATETIME", "STRFTIME", "JULIANDAY",
    "GROUP_CONCAT", "TOTAL", "RANDOM", "INT", "INTEGER", "TEXT", "REAL", "BOOL", "BOOLEAN",
    "NUMERIC", "VARCHAR", "CHAR", "FLOAT", "DOUBLE", "BLOB",
];

fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word.to_ascii_uppercase().as_str())
}

/// Clause starters that terminate a FROM table list.
const CLAUSE_KEYWORDS: &[&str] = &[
    "WHERE", "GROUP", "ORDER", "HAVING", "LIMIT", "OFFSET", "SELECT", "UNION", "INTERSECT",
    "EXCEPT", "ON", "SET",
];

// ---------------------------------------------------------------------------
// Context parsing
// ---------------------------------------------------------------------------

/// Column-list tokens that introduce a table constraint rather than a
/// column declaration.
const CONSTRAINT_STARTERS: &[&str] = &["PRIMARY", "FOREIGN", "UNIQUE", "CHECK", "CONSTRAINT", "KEY"];

pub fn parse_relational_context(context_text: &str) -> Result<RelationalSchema, ValidationError> {
    let toks = lex(context_text);
    let mut tables = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let is_create = matches!(&toks[i], Tok::Ident { text, quoted: false } if text.eq_ignore_ascii_case("create"));
        let is_table = matches!(&toks.get(i + 1), Some(Tok::Ident { text, quoted: false }) if text.eq_ignore_ascii_case("table"));
        if !(is_create && is_table) {
            i += 1;
            continue;
        }
        i += 2;
        // Optional IF NOT EXISTS.
        while matches!(&toks.get(i), Some(Tok::Ident { text, quoted: false })
            if ["if", "not", "exists"].contains(&text.to_ascii_lowercase().as_str()))
        {
            i += 1;
        }
        let name = match toks.get(i) {
            Some(Tok::Ident { text, .. }) => text.clone(),
            _ => {
                return Err(ValidationError::ContextParse {
                    reason: "CREATE TABLE without a table name".into(),
                    line: String::new(),
                })
            }
        };
        i += 1;
        if !matches!(toks.get(i), Some(Tok::Punct('('))) {
            return Err(ValidationError::ContextParse {
                reason: format!("CREATE TABLE {name} without a column list"),
                line: name,
            });
        }
        i += 1;
        let mut columns = BTreeSet::new();
        let mut depth = 1usize;
        let mut item_start = true;
        while i < toks.len() && depth > 0 {
            match &toks[i] {
                Tok::Punct('(') => depth += 1,
                Tok::Punct(')') => depth -= 1,
                Tok::Punct(',') if depth == 1 => item_start = true,
                Tok::Ident { text, quoted } if item_start && depth == 1 => {
                    item_start = false;
                    let is_constraint =
                        !quoted && CONSTRAINT_STARTERS.contains(&text.to_ascii_uppercase().as_str());
                    if !is_constraint {
                        columns.insert(text.clone());
                    }
                }
                _ => {}
            }
            i += 1;
        }
        tables.push(TableSchema { name, columns });
    }
    if tables.is_empty() {
        return Err(ValidationError::ContextParse {
            reason: "no CREATE TABLE declarations found".into(),
            line: context_text.lines().next().unwrap_or("").to_string(),
        });
    }
    Ok(RelationalSchema { tables })
}

// ---------------------------------------------------------------------------
// Grounding check
// ---------------------------------------------------------------------------

pub fn check_sql(query: &str, schema: &RelationalSchema) -> GroundingReport {
    let toks = lex(query);
    let table_names: BTreeSet<String> = schema
        .tables
        .iter()
        .map(|t| t.name.to_ascii_lowercase())
        .collect();
    let mut unknown: Vec<String> = Vec::new();
    let mut notes = Vec::new();

    let flag = |unknown: &mut Vec<String>, name: &str| {
        if !unknown.iter().any(|u| u == name) {
            unknown.push(name.to_string());
        }
    };

    // Pass 1: table references and aliases from FROM/JOIN clauses. Aliases
    // can be referenced before they are declared (SELECT s.Name FROM
    // singer s), so this must complete before column checking.
    let mut aliases: HashMap<String, String> = HashMap::new();
    let mut table_positions: BTreeSet<usize> = BTreeSet::new();
    {
        let mut expecting_table = false;
        let mut in_from = false;
        let mut i = 0;
        while i < toks.len() {
            match &toks[i] {
                Tok::Ident { text, quoted } => {
                    let upper = text.to_ascii_uppercase();
                    if !quoted && is_keyword(text) {
                        if upper == "FROM" {
                            in_from = true;
                            expecting_table = true;
                        } else if upper == "JOIN" {
                            expecting_table = true;
                        } else if CLAUSE_KEYWORDS.contains(&upper.as_str()) {
                            if upper != "ON" {
                                in_from = false;
                            }
                            expecting_table = false;
                        }
                        i += 1;
                        continue;
                    }
                    if expecting_table {
                        expecting_table = false;
                        let table = text.clone();
                        table_positions.insert(i);
                        if !table_names.contains(&table.to_ascii_lowercase()) {
                            flag(&mut unknown, &table);
                        }
                        i += 1;
                        // Optional alias: [AS] ident.
                        if matches!(&toks.get(i), Some(Tok::Ident { text, quoted: false }) if text.eq_ignore_ascii_case("as"))
                        {
                            table_positions.insert(i);
                            i += 1;
                        }
                        if let Some(Tok::Ident { text: alias, quoted: false }) = toks.get(i) {
                            if !is_keyword(alias) {
                                aliases.insert(alias.to_ascii_lowercase(), table.clone());
                                table_positions.insert(i);
                                i += 1;
                            }
                        }
                        continue;
                    }
                    i += 1;
                }
                Tok::Punct(',') => {
                    if in_from {
                        expecting_table = true;
                    }
                    i += 1;
                }
                Tok::Punct('(') if expecting_table => {
                    // Subquery in table position; the inner SELECT
                    // re-enters normal scanning via its own FROM.
                    expecting_table = false;
                    i += 1;
                }
                _ => i += 1,
            }
        }
    }

    // Pass 2: column and qualifier checking everywhere else.
    let mut i = 0;
    while i < toks.len() {
        if table_positions.contains(&i) {
            i += 1;
            continue;
        }
        match &toks[i] {
            Tok::Ident { text, quoted } => {
                if !quoted && is_keyword(text) {
                    i += 1;
                    continue;
                }

                // Qualified reference: qualifier.column or qualifier.*
                if matches!(toks.get(i + 1), Some(Tok::Punct('.'))) {
                    let qualifier = text.clone();
                    let q_lower = qualifier.to_ascii_lowercase();
                    let resolved = aliases
                        .get(&q_lower)
                        .cloned()
                        .or_else(|| table_names.contains(&q_lower).then(|| qualifier.clone()));
                    i += 2;
                    match (resolved, toks.get(i)) {
                        (Some(table), Some(Tok::Ident { text: col, .. })) => {
                            match schema.table(&table) {
                                Some(t) if t.has_column(col) => {}
                                Some(_) => flag(&mut unknown, col),
                                None => {}
                            }
                            i += 1;
                        }
                        (Some(_), _) => {} // qualifier.* or odd token
                        (None, _) => {
                            flag(&mut unknown, &qualifier);
                            if matches!(toks.get(i), Some(Tok::Ident { .. })) {
                                i += 1;
                            }
                        }
                    }
                    continue;
                }

                // Identifier followed by '(' is a function call.
                if matches!(toks.get(i + 1), Some(Tok::Punct('('))) {
                    i += 1;
                    continue;
                }

                let lower = text.to_ascii_lowercase();
                if !(table_names.contains(&lower)
                    || aliases.contains_key(&lower)
                    || schema.has_column_anywhere(text))
                {
                    flag(&mut unknown, text);
                }
                i += 1;
            }
            _ => i += 1,
        }
    }

    if toks.is_empty() {
        notes.push("empty query".to_string());
    }
    GroundingReport::from_parts(unknown, notes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singer_schema() -> RelationalSchema {
        parse_relational_context(crate::validation::tests::SINGER_CONTEXT).unwrap()
    }

    #[test]
    fn aliases_resolve_in_qualified_names() {
        let schema = singer_schema();
        let report = check_sql("SELECT s.Name FROM singer AS s WHERE s.Age > 20", &schema);
        assert!(report.grounded, "{:?}", report.unknown_identifiers);
    }

    #[test]
    fn hallucinated_qualified_column_flagged() {
        let schema = singer_schema();
        let report = check_sql("SELECT s.Salary FROM singer s", &schema);
        assert_eq!(report.unknown_identifiers, vec!["Salary"]);
    }

    #[test]
    fn string_literals_and_comments_ignored() {
        let schema = singer_schema();
        let report = check_sql(
            "SELECT Name FROM singer -- artists here\nWHERE Country = 'unknown_place'",
            &schema,
        );
        assert!(report.grounded, "{:?}", report.unknown_identifiers);
    }

    #[test]
    fn functions_not_flagged() {
        let schema = singer_schema();
        let report = check_sql("SELECT COUNT(*), myfunc(Age) FROM singer", &schema);
        assert!(report.grounded, "{:?}", report.unknown_identifiers);
    }

    #[test]
    fn comma_joined_tables_checked() {
        let schema = singer_schema();
        let report = check_sql("SELECT Name FROM singer, concerts", &schema);
        assert_eq!(report.unknown_identifiers, vec!["concerts"]);
    }

    #[test]
    fn case_insensitive_identifiers() {
        let schema = singer_schema();
        let report = check_sql("select NAME from SINGER where AGE > 20", &schema);
        assert!(report.grounded, "{:?}", report.unknown_identifiers);
    }

    #[test]
    fn quoted_identifiers_checked() {
        let schema = singer_schema();
        let report = check_sql("SELECT \"Name\" FROM \"singer\"", &schema);
        assert!(report.grounded);
        let report = check_sql("SELECT \"select\" FROM singer", &schema);
        assert_eq!(report.unknown_identifiers, vec!["select"]);
    }
}
