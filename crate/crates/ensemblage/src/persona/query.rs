//! Typed row predicates and their small textual form.
//!
//! A query is a conjunction of `(column, operator, literal)` clauses. The
//! textual form exists for CLI and config ergonomics:
//!
//! ```text
//! ideology == 'Liberal' AND age >= 40 AND region in ['South', 'West']
//! ```
//!
//! Operators: `==  !=  <  <=  >  >=  in`. String literals are single- or
//! double-quoted; numbers are bare; `in` takes a bracketed list.

use serde::{Deserialize, Serialize};

use super::PersonaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

impl QueryOp {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "==" => Some(QueryOp::Eq),
            "!=" => Some(QueryOp::Ne),
            "<" => Some(QueryOp::Lt),
            "<=" => Some(QueryOp::Le),
            ">" => Some(QueryOp::Gt),
            ">=" => Some(QueryOp::Ge),
            "in" => Some(QueryOp::In),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryScalar {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryLiteral {
    Scalar(QueryScalar),
    List(Vec<QueryScalar>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryClause {
    pub column: String,
    pub op: QueryOp,
    pub literal: QueryLiteral,
}

/// Conjunctive predicate over dataset rows. An empty clause list matches
/// every row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersonaQuery {
    pub clauses: Vec<QueryClause>,
}

impl PersonaQuery {
    pub fn empty() -> Self {
        PersonaQuery::default()
    }

    /// Parse the textual form: clauses joined by `AND`.
    pub fn parse(text: &str) -> Result<Self, PersonaError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(PersonaQuery::empty());
        }
        let mut clauses = Vec::new();
        for part in split_on_and(text) {
            clauses.push(parse_clause(part.trim())?);
        }
        Ok(PersonaQuery { clauses })
    }
}

/// Split on the keyword AND (either case) outside quotes and brackets.
fn split_on_and(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) => {
                if b == q {
                    quote = None;
                }
            }
            None => match b {
                b'\'' | b'"' => quote = Some(b),
                b'[' => depth += 1,
                b']' => depth = depth.saturating_sub(1),
                b'A' | b'a' if depth == 0 => {
                    let rest = &text[i..];
                    let is_and = rest.len() >= 3
                        && rest[..3].eq_ignore_ascii_case("and")
                        && (i == 0 || bytes[i - 1].is_ascii_whitespace())
                        && rest
                            .as_bytes()
                            .get(3)
                            .is_none_or(|c| c.is_ascii_whitespace());
                    if is_and {
                        parts.push(&text[start..i]);
                        start = i + 3;
                        i += 3;
                        continue;
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    parts.push(&text[start..]);
    parts
}

fn parse_clause(text: &str) -> Result<QueryClause, PersonaError> {
    let bad = |msg: &str| PersonaError::QueryParse(format!("{msg} in clause {text:?}"));
    // Longest operators first so "<=" is not read as "<".
    for op_text in ["==", "!=", "<=", ">=", "<", ">", " in "] {
        if let Some(pos) = text.find(op_text) {
            let column = text[..pos].trim();
            let literal_text = text[pos + op_text.len()..].trim();
            if column.is_empty() {
                return Err(bad("missing column"));
            }
            let op = QueryOp::parse(op_text.trim()).expect("operator table");
            let literal = if op == QueryOp::In {
                parse_list(literal_text).ok_or_else(|| bad("expected a [..] list"))?
            } else {
                QueryLiteral::Scalar(parse_scalar(literal_text).ok_or_else(|| bad("bad literal"))?)
            };
            return Ok(QueryClause {
                column: column.to_string(),
                op,
                literal,
            });
        }
    }
    Err(bad("no operator found"))
}

fn parse_scalar(text: &str) -> Option<QueryScalar> {
    let text = text.trim();
    if text.len() >= 2 {
        let b = text.as_bytes();
        if (b[0] == b'\'' && b[b.len() - 1] == b'\'') || (b[0] == b'"' && b[b.len() - 1] == b'"') {
            return Some(QueryScalar::Text(text[1..text.len() - 1].to_string()));
        }
    }
    text.parse::<f64>().ok().map(QueryScalar::Number)
}

fn parse_list(text: &str) -> Option<QueryLiteral> {
    let inner = text.strip_prefix('[')?.strip_suffix(']')?;
    let mut items = Vec::new();
    for piece in inner.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        items.push(parse_scalar(piece)?);
    }
    Some(QueryLiteral::List(items))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_conjunction() {
        let q = PersonaQuery::parse("ideology == 'Liberal' AND has_child == 'Yes'").unwrap();
        assert_eq!(q.clauses.len(), 2);
        assert_eq!(q.clauses[0].column, "ideology");
        assert_eq!(q.clauses[0].op, QueryOp::Eq);
        assert_eq!(
            q.clauses[0].literal,
            QueryLiteral::Scalar(QueryScalar::Text("Liberal".into()))
        );
    }

    #[test]
    fn parses_numbers_and_ordering_ops() {
        let q = PersonaQuery::parse("age >= 40 and age < 65").unwrap();
        assert_eq!(q.clauses[0].op, QueryOp::Ge);
        assert_eq!(
            q.clauses[0].literal,
            QueryLiteral::Scalar(QueryScalar::Number(40.0))
        );
        assert_eq!(q.clauses[1].op, QueryOp::Lt);
    }

    #[test]
    fn parses_in_lists() {
        let q = PersonaQuery::parse("region in ['South', 'West']").unwrap();
        assert_eq!(
            q.clauses[0].literal,
            QueryLiteral::List(vec![
                QueryScalar::Text("South".into()),
                QueryScalar::Text("West".into())
            ])
        );
    }

    #[test]
    fn empty_text_is_empty_query() {
        assert_eq!(PersonaQuery::parse("  ").unwrap(), PersonaQuery::empty());
    }

    #[test]
    fn and_inside_quotes_is_literal() {
        let q = PersonaQuery::parse("education == 'Arts and Letters'").unwrap();
        assert_eq!(q.clauses.len(), 1);
        assert_eq!(
            q.clauses[0].literal,
            QueryLiteral::Scalar(QueryScalar::Text("Arts and Letters".into()))
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(PersonaQuery::parse("no operator here").is_err());
        assert!(PersonaQuery::parse("col === 'x'").is_err());
        assert!(PersonaQuery::parse("region in 'South'").is_err());
    }
}
