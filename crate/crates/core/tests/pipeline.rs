//! Corpus-level pipeline checks: generated examples against the independent
//! oracles, supervision-target invariants, round-trip properties, and
//! re-serialization stability.

mod oracles;

use proptest::prelude::*;
use semanchor::anchors::extract_anchors;
use semanchor::corpus::SchemaRecord;
use semanchor::datagen::{generate_corpus, GenConfig};
use semanchor::executor::{execute_sparql, execute_sql, result_equal};
use semanchor::logical_form::{
    parse_sparql, parse_sql, serialize_sparql, serialize_sql, Aggregator, CmpOp, Condition,
    Literal, SqlQuery,
};

fn corpus(seed: u64, n: usize) -> semanchor::corpus::Corpus {
    generate_corpus(&GenConfig {
        seed,
        train: n,
        dev: 0,
        test: 0,
        schemas_per_kind: 4,
        ..GenConfig::default()
    })
    .unwrap()
}

#[test]
fn anchors_match_the_scan_oracle_and_targets_hold() {
    let corpus = corpus(21, 400);
    for ex in &corpus.examples {
        let vocab = corpus.schemas[&ex.schema_ref].vocabulary();
        let impl_positions: Vec<usize> = extract_anchors(&ex.main, &vocab)
            .iter()
            .map(|o| o.position)
            .collect();
        let oracle_positions = oracles::scan_anchor_positions(&ex.main, &vocab);
        assert_eq!(impl_positions, oracle_positions, "example {}", ex.id);

        // alignment target: length-preserving, mask true exactly at anchors
        assert_eq!(ex.saa.len(), ex.main.len(), "example {}", ex.id);
        let mask_count = ex.saa_mask.iter().filter(|&&m| m).count();
        assert_eq!(mask_count, oracle_positions.len(), "example {}", ex.id);
        for (i, tok) in ex.saa.iter().enumerate() {
            if ex.saa_mask[i] {
                assert_eq!(tok, &ex.main[i]);
            } else {
                assert_eq!(tok, "<MASK>");
            }
        }
        // extraction target: deduplicated anchors joined by separators
        let uniques: Vec<&str> = {
            let mut seen = Vec::new();
            for &p in &oracle_positions {
                let t = ex.main[p].as_str();
                if !seen.contains(&t) {
                    seen.push(t);
                }
            }
            seen
        };
        let expect_len = if uniques.is_empty() { 0 } else { 2 * uniques.len() - 1 };
        assert_eq!(ex.sae.len(), expect_len);
        let sae_content: Vec<&str> =
            ex.sae.iter().filter(|t| *t != "<SEP>").map(String::as_str).collect();
        assert_eq!(sae_content, uniques);
    }
}

#[test]
fn executors_match_their_oracles_on_generated_data() {
    let corpus = corpus(22, 400);
    let mut sql_checked = 0;
    let mut sparql_checked = 0;
    for ex in &corpus.examples {
        match &corpus.schemas[&ex.schema_ref] {
            SchemaRecord::Db { schema, rows, .. } => {
                let q = parse_sql(&ex.main.text()).unwrap();
                let got = execute_sql(&q, schema, rows).unwrap();
                let expect = oracles::row_scan_sql(&q, schema, rows).unwrap();
                assert!(result_equal(&got, &expect), "example {}", ex.id);
                sql_checked += 1;
            }
            SchemaRecord::Kb { schema, .. } => {
                let q = parse_sparql(&ex.main.text()).unwrap();
                let got = execute_sparql(&q, schema).unwrap();
                let expect = oracles::nested_loop_sparql(&q, schema).unwrap();
                assert!(result_equal(&got, &expect), "example {}", ex.id);
                sparql_checked += 1;
            }
        }
    }
    assert!(sql_checked > 50 && sparql_checked > 50);
}

#[test]
fn anchor_extraction_is_stable_under_reserialization() {
    let corpus = corpus(23, 200);
    for ex in &corpus.examples {
        let rec = &corpus.schemas[&ex.schema_ref];
        let vocab = rec.vocabulary();
        let text = ex.main.text();
        let reserialized = match rec {
            SchemaRecord::Db { .. } => serialize_sql(&parse_sql(&text).unwrap()).tokens,
            SchemaRecord::Kb { .. } => serialize_sparql(&parse_sparql(&text).unwrap()).tokens,
        };
        assert_eq!(reserialized, ex.main);
        let a = extract_anchors(&ex.main, &vocab);
        let b = extract_anchors(&reserialized, &vocab);
        assert_eq!(a, b);
    }
}

#[test]
fn generated_corpora_parse_round_trip() {
    let corpus = corpus(24, 300);
    for ex in &corpus.examples {
        let rec = &corpus.schemas[&ex.schema_ref];
        let text = ex.main.text();
        match rec {
            SchemaRecord::Db { .. } => {
                let q = parse_sql(&text).unwrap();
                assert_eq!(serialize_sql(&q).tokens.text(), text);
            }
            SchemaRecord::Kb { .. } => {
                let q = parse_sparql(&text).unwrap();
                assert_eq!(serialize_sparql(&q).tokens.text(), text);
            }
        }
    }
}

// property: parse . serialize is the identity over arbitrary ASTs from the
// grammar, not just datagen's samples
fn arb_identifier() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}".prop_filter("not reserved", |s| {
        semanchor::lexicon::is_valid_schema_token(s)
    })
}

fn arb_literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        (-9999i64..9999).prop_map(|v| Literal::Num(v as f64)),
        arb_identifier().prop_map(Literal::Word),
    ]
}

fn arb_sql() -> impl Strategy<Value = SqlQuery> {
    let agg = prop_oneof![
        Just(Aggregator::None),
        Just(Aggregator::Max),
        Just(Aggregator::Min),
        Just(Aggregator::Count),
        Just(Aggregator::Sum),
        Just(Aggregator::Avg),
    ];
    let op = prop_oneof![Just(CmpOp::Eq), Just(CmpOp::Gt), Just(CmpOp::Lt)];
    let cond = (arb_identifier(), op, arb_literal())
        .prop_map(|(column, op, literal)| Condition { column, op, literal });
    (
        agg,
        arb_identifier(),
        arb_identifier(),
        proptest::collection::vec(cond, 0..=4),
    )
        .prop_map(|(aggregator, select_column, table, conditions)| SqlQuery {
            aggregator,
            select_column,
            table,
            conditions,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sql_round_trip_over_arbitrary_asts(q in arb_sql()) {
        let s = serialize_sql(&q);
        let reparsed = parse_sql(&s.tokens.text()).unwrap();
        prop_assert_eq!(reparsed, q);
    }

    #[test]
    fn parser_never_panics_on_arbitrary_input(text in "\\PC{0,60}") {
        let _ = parse_sql(&text);
        let _ = parse_sparql(&text);
    }

    #[test]
    fn normalization_is_idempotent(raw in "\\PC{0,30}") {
        let once = semanchor::schema::normalize(&raw);
        prop_assert_eq!(semanchor::schema::normalize(&once), once);
    }
}
