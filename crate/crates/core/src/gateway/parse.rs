//! Splitting raw model output into per-question numbered answers.

use std::sync::OnceLock;

use regex::Regex;

use super::GatewayError;

/// Line-leading answer marker: `1.`, `1)`, `**1.**`, with optional
/// surrounding whitespace and markdown bold.
fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[ \t]*(?:\*\*[ \t]*)?(\d+)[ \t]*[.)](?:[ \t]*\*\*)?[ \t]*").unwrap()
    })
}

/// Renders answers in the numbered layout the parser accepts. Used by the
/// mock providers; `parse_numbered_answers` inverts it for answers without
/// embedded line-leading numbers.
pub fn format_numbered(answers: &[String]) -> String {
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits `raw` into exactly `n` answers keyed by their leading markers.
///
/// A single unnumbered answer is accepted when `n == 1`. Any other
/// disagreement between the detected marker set and `1..=n` is a
/// parse-mismatch error; the caller decides how to score the gap.
pub fn parse_numbered_answers(raw: &str, n: usize) -> Result<Vec<String>, GatewayError> {
    assert!(n >= 1, "a frame has at least one question");

    let mut markers: Vec<(usize, usize, usize)> = Vec::new(); // (number, start, end)
    for caps in marker_regex().captures_iter(raw) {
        let whole = caps.get(0).unwrap();
        let number: usize = caps[1].parse().unwrap_or(0);
        markers.push((number, whole.start(), whole.end()));
    }

    if markers.is_empty() && n == 1 {
        return Ok(vec![raw.trim().to_string()]);
    }

    let found: Vec<usize> = markers.iter().map(|(num, _, _)| *num).collect();
    if found.len() != n || found.iter().enumerate().any(|(i, &num)| num != i + 1) {
        return Err(GatewayError::ParseMismatch { expected: n, found });
    }

    let mut answers = Vec::with_capacity(n);
    for (i, &(_, _, end)) in markers.iter().enumerate() {
        let segment_end = markers.get(i + 1).map_or(raw.len(), |&(_, start, _)| start);
        answers.push(raw[end..segment_end].trim().to_string());
    }
    Ok(answers)
}
