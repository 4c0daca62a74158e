use crate::error::{Error, Result};

const INSTRUCTION: &str = "You are an entity resolution expert. Determine if the following entity matches any of the candidate entities.

Requirements:
1. Please respond with ONLY the number (1, 2, ...) of the matching candidate, or \"NONE\" if no match is found.
2. Your response should be a single number or \"NONE\", nothing else.";

/// Render the multiple-choice matching prompt for a serialized target and
/// its serialized candidates.
pub fn render_prompt(target: &str, candidates: &[String]) -> String {
    let mut out = String::with_capacity(INSTRUCTION.len() + 64 + target.len());
    out.push_str(INSTRUCTION);
    out.push_str("\n\nQuery Entity:\n");
    out.push_str(target);
    out.push_str("\n\nCandidate Entities:");
    for (i, c) in candidates.iter().enumerate() {
        out.push('\n');
        out.push_str(&(i + 1).to_string());
        out.push_str(". ");
        out.push_str(c);
    }
    out
}

/// Parse a reply: a bare 1-based index or `NONE` (any case), surrounding
/// whitespace ignored. Anything else is rejected.
pub fn parse_response(text: &str, candidate_count: usize) -> Result<Option<usize>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::ParseFailure(text.to_string()));
    }
    let choice: usize = t
        .parse()
        .map_err(|_| Error::ParseFailure(text.to_string()))?;
    if choice == 0 || choice > candidate_count {
        return Err(Error::ChoiceOutOfRange {
            choice,
            count: candidate_count,
        });
    }
    Ok(Some(choice))
}
