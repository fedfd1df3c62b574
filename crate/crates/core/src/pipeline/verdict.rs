//! Parser for the verdict block that ends a classification response:
//!
//! ```text
//! ...free text...
//! VERDICT: ANSWERED
//! ```
//! or
//! ```text
//! VERDICT: INFEASIBLE
//! REASON: missing_context
//! ```
//!
//! The last `VERDICT:` line wins. Keys are case-insensitive and may be
//! wrapped in markdown emphasis. Reasons resolve by slug first, then by
//! display name (see [`InfeasibilityReason::resolve_loose`]). Anything else
//! is a [`Verdict::ParseFailure`].

use crate::records::Verdict;
use crate::taxonomy::InfeasibilityReason;

/// Strips markdown decoration around a line or value.
fn strip_decoration(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '*' | '_' | '`' | '#' | '>' | '"' | '\''))
        .trim()
}

/// `Some(value)` when `line` is `<key>: value` for the given key.
fn keyed_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = strip_decoration(line);
    let (k, v) = line.split_once(':')?;
    if strip_decoration(k).eq_ignore_ascii_case(key) {
        Some(v)
    } else {
        None
    }
}

fn is_trailer_noise(line: &str) -> bool {
    line.chars()
        .all(|c| c.is_whitespace() || matches!(c, '`' | '*' | '-' | '_' | '='))
}

pub fn parse_verdict(raw_response: &str) -> Verdict {
    let failure = || Verdict::ParseFailure {
        raw: raw_response.to_string(),
    };
    let lines: Vec<&str> = raw_response.lines().collect();
    let Some(at) = lines
        .iter()
        .rposition(|l| keyed_value(l, "verdict").is_some())
    else {
        return failure();
    };
    let value = keyed_value(lines[at], "verdict").unwrap_or_default();
    let value = strip_decoration(value).trim_end_matches('.');

    if value.eq_ignore_ascii_case("answered") {
        if !lines[at + 1..].iter().all(|l| is_trailer_noise(l)) {
            return failure();
        }
        let answer = lines[..at].join("\n").trim().to_string();
        return Verdict::Answered { answer };
    }
    if !value.eq_ignore_ascii_case("infeasible") {
        return failure();
    }
    let Some(offset) = lines[at + 1..].iter().position(|l| !l.trim().is_empty()) else {
        return failure();
    };
    let reason_at = at + 1 + offset;
    let Some(reason_text) = keyed_value(lines[reason_at], "reason") else {
        return failure();
    };
    if !lines[reason_at + 1..].iter().all(|l| is_trailer_noise(l)) {
        return failure();
    }
    let reason_text = strip_decoration(reason_text)
        .trim_matches(|c| c == '<' || c == '>')
        .trim_end_matches('.');
    match InfeasibilityReason::resolve_loose(reason_text) {
        Some(reason) => Verdict::DeclaredInfeasible { reason },
        None => failure(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_grammar() {
        assert_eq!(
            parse_verdict("The task lacks the code.\nVERDICT: INFEASIBLE\nREASON: missing_context"),
            Verdict::DeclaredInfeasible {
                reason: InfeasibilityReason::MissingContext
            }
        );
        assert_eq!(
            parse_verdict("Paris is the capital.\nVERDICT: ANSWERED"),
            Verdict::Answered {
                answer: "Paris is the capital.".to_string()
            }
        );
    }

    #[test]
    fn display_names_resolve() {
        for r in InfeasibilityReason::ALL {
            let raw = format!("x\nVERDICT: INFEASIBLE\nREASON: {}", r.display_name());
            assert_eq!(parse_verdict(&raw), Verdict::DeclaredInfeasible { reason: r });
        }
    }

    #[test]
    fn missing_block_fails() {
        let raw = "I think the answer is 42.";
        assert_eq!(
            parse_verdict(raw),
            Verdict::ParseFailure {
                raw: raw.to_string()
            }
        );
    }

    #[test]
    fn echoed_instructions_do_not_count() {
        let raw = "VERDICT: ANSWERED\nIf the task is infeasible:\nVERDICT: INFEASIBLE\nREASON: <identifier of exactly one reason from the list above>";
        assert!(parse_verdict(raw).is_parse_failure());
    }
}
