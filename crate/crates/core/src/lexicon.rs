//! The closed token lexicon shared by schemas, logical forms, and the model.
//!
//! Every token is one of: a keyword, a punctuation mark, a comparison
//! operator, a variable (`?name`), a special framing token, or a plain
//! identifier/literal word. Schema identifiers must stay out of the reserved
//! classes so that vocabulary membership alone decides anchor status.

/// Keywords of the SQL and SPARQL subsets (canonical lowercase).
pub const KEYWORDS: &[&str] = &[
    "select", "from", "where", "and", "filter", "count", "sum", "avg", "max", "min",
];

/// Self-delimiting punctuation tokens.
pub const PUNCT: &[&str] = &["(", ")", "{", "}", "."];

/// Comparison operators.
pub const OPERATORS: &[&str] = &["=", ">", "<"];

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const PAD: &str = "<PAD>";
pub const SEP: &str = "<SEP>";
pub const MASK: &str = "<MASK>";

/// Special framing tokens; never produced by the lexer from source text.
pub const SPECIALS: &[&str] = &[PAD, BOS, EOS, SEP, MASK];

pub fn is_keyword(tok: &str) -> bool {
    KEYWORDS.contains(&tok)
}

pub fn is_punct(tok: &str) -> bool {
    PUNCT.contains(&tok)
}

pub fn is_operator(tok: &str) -> bool {
    OPERATORS.contains(&tok)
}

pub fn is_special(tok: &str) -> bool {
    SPECIALS.contains(&tok)
}

pub fn is_variable(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('?')
}

/// True when `tok` may serve as a schema identifier or rendered value.
/// Reserved surface forms would make vocabulary membership ambiguous.
pub fn is_valid_schema_token(tok: &str) -> bool {
    !tok.is_empty()
        && !is_keyword(tok)
        && !is_punct(tok)
        && !is_operator(tok)
        && !tok.starts_with('?')
        && !tok.starts_with('<')
        && !tok.chars().any(char::is_whitespace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_forms_rejected() {
        for t in ["select", "(", ">", "?x", "<SEP>", "", "two words"] {
            assert!(!is_valid_schema_token(t), "{t:?} should be rejected");
        }
        for t in ["company", "produced_by", "1945", "no.", "1-1000181-1"] {
            assert!(is_valid_schema_token(t), "{t:?} should be accepted");
        }
    }
}
