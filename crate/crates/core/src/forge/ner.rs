//! Toy named-entity recognizer: the longest run of capitalized tokens,
//! ignoring a capitalized stopword at the start of the headline.

use alloc::string::String;
use alloc::vec::Vec;

const STOPWORDS: &[&str] = &[
    "A", "An", "The", "In", "On", "At", "As", "After", "Before", "This", "That", "These", "Those",
    "When", "While", "With", "From", "For", "Why", "How", "What", "Breaking",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    /// Token range `[start, end)` in the whitespace tokenization.
    pub start: usize,
    pub end: usize,
    pub name: String,
}

fn capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

pub fn find_entity(headline: &str) -> Option<EntitySpan> {
    let tokens: Vec<&str> = headline.split_whitespace().collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < tokens.len() {
        let skip = i == 0 && STOPWORDS.contains(&tokens[0]);
        if !capitalized(tokens[i]) || skip {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && capitalized(tokens[i]) {
            i += 1;
        }
        if best.map_or(true, |(s, e)| i - start > e - s) {
            best = Some((start, i));
        }
    }
    best.map(|(start, end)| EntitySpan {
        start,
        end,
        name: tokens[start..end].join(" "),
    })
}

/// Replace the tokens of `span` by `replacement`, re-joining with single spaces.
pub fn replace_span(headline: &str, span: &EntitySpan, replacement: &str) -> String {
    let tokens: Vec<&str> = headline.split_whitespace().collect();
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
    out.extend_from_slice(&tokens[..span.start]);
    out.push(replacement);
    out.extend_from_slice(&tokens[span.end..]);
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_leading_name() {
        let e = find_entity("Liu Xiang returns triumphantly and receives heated extolling").unwrap();
        assert_eq!(e.name, "Liu Xiang");
        assert_eq!((e.start, e.end), (0, 2));
    }

    #[test]
    fn skips_initial_stopword_and_prefers_longest_run() {
        let e = find_entity("The crowd cheers as Maria Del Lopez arrives in Paris").unwrap();
        assert_eq!(e.name, "Maria Del Lopez");
        assert_eq!(find_entity("The match ends"), None);
        assert_eq!(find_entity("no capitalized entity here"), None);
    }

    #[test]
    fn replacement_keeps_other_tokens() {
        let h = "Liu Xiang returns triumphantly";
        let e = find_entity(h).unwrap();
        assert_eq!(replace_span(h, &e, "Kenji Sato"), "Kenji Sato returns triumphantly");
    }
}
