//! Semantic-anchor extraction and the two intermediate supervision targets.
//!
//! An anchor is a logical-form token that names a schema element: any token
//! of the serialized query whose surface form is in the schema vocabulary.
//! The extraction target concatenates the distinct anchors in first-occurrence
//! order, `<SEP>`-separated; the alignment target keeps every anchor at its
//! original position and masks everything else.

use serde::{Deserialize, Serialize};

use crate::lexicon::{self, MASK, SEP};
use crate::logical_form::TokenSeq;
use crate::schema::{SchemaVocabulary, TokenKind};

/// One anchor token at one position of the serialized main target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorOccurrence {
    pub token: String,
    pub position: usize,
    pub kind: TokenKind,
}

/// Main sequence plus both intermediate targets. `saa` is positionally
/// aligned with `main`; `sae` is the deduplicated anchor list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTargets {
    pub main: TokenSeq,
    pub sae: TokenSeq,
    pub saa: TokenSeq,
    pub saa_mask: Vec<bool>,
}

impl SupervisionTargets {
    pub fn build(main: TokenSeq, vocab: &SchemaVocabulary) -> SupervisionTargets {
        let occurrences = extract_anchors(&main, vocab);
        let sae = build_sae_target(&occurrences);
        let (saa, saa_mask) = build_saa_target(&main, &occurrences);
        SupervisionTargets { main, sae, saa, saa_mask }
    }

    pub fn anchor_count(&self) -> usize {
        self.saa_mask.iter().filter(|&&m| m).count()
    }
}

/// Every position of `main` whose token is in the schema vocabulary, in
/// sequence order. Variables, keywords, punctuation, and operators are never
/// anchors; validated schemas cannot contain them, so the guard only matters
/// for hand-built vocabularies.
pub fn extract_anchors(main: &TokenSeq, vocab: &SchemaVocabulary) -> Vec<AnchorOccurrence> {
    main.iter()
        .enumerate()
        .filter(|(_, tok)| {
            !lexicon::is_keyword(tok)
                && !lexicon::is_punct(tok)
                && !lexicon::is_operator(tok)
                && !lexicon::is_variable(tok)
        })
        .filter_map(|(position, tok)| {
            vocab.kind(tok).map(|kind| AnchorOccurrence {
                token: tok.clone(),
                position,
                kind,
            })
        })
        .collect()
}

/// Distinct anchors in first-occurrence order, joined by `<SEP>`. Framing
/// tokens are added at batch time. `s` anchors give `2s - 1` tokens.
pub fn build_sae_target(occurrences: &[AnchorOccurrence]) -> TokenSeq {
    let mut out: Vec<String> = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for occ in occurrences {
        if seen.contains(&occ.token.as_str()) {
            continue;
        }
        if !seen.is_empty() {
            out.push(SEP.to_string());
        }
        out.push(occ.token.clone());
        seen.push(&occ.token);
    }
    TokenSeq::new(out)
}

/// Length-preserving copy of `main` with non-anchor positions replaced by
/// `<MASK>`; the returned mask is true exactly at anchor positions.
pub fn build_saa_target(
    main: &TokenSeq,
    occurrences: &[AnchorOccurrence],
) -> (TokenSeq, Vec<bool>) {
    let mut mask = vec![false; main.len()];
    for occ in occurrences {
        mask[occ.position] = true;
    }
    let tokens = main
        .iter()
        .zip(&mask)
        .map(|(tok, &keep)| if keep { tok.clone() } else { MASK.to_string() })
        .collect();
    (TokenSeq::new(tokens), mask)
}
