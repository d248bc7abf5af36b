//! Word pools and utterance templates for the synthetic benchmark.
//!
//! Utterances are templated pseudo-natural language whose content tokens
//! (schema identifiers, literals) also appear in the target logical form.
//! Synonym tables inject surface variety; index 0 is the default phrasing
//! and alternates are picked at the configured paraphrase rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TABLE_NOUNS: &[&str] = &[
    "company", "museum", "bridge", "city", "team", "river", "school", "mountain", "airline",
    "planet", "festival", "harbor", "station", "castle", "library", "village", "stadium",
    "theater", "garden", "tower", "island", "market", "canal", "forest",
];

pub const TEXT_COLUMNS: &[&str] = &[
    "city", "country", "ceo", "color", "region", "league", "style", "owner", "sponsor", "mayor",
];

pub const NUM_COLUMNS: &[&str] = &[
    "founded", "employees", "visitors", "length", "height", "capacity", "budget", "rank", "wins",
    "floors", "area", "depth",
];

/// Entity names and name-column values.
pub const NAME_POOL: &[&str] = &[
    "saab", "volvo", "orion", "lyra", "vega", "atlas", "nova", "zephyr", "ember", "quartz",
    "falcon", "heron", "aspen", "birch", "cedar", "delta", "echo", "fable", "gale", "iris",
    "jasper", "koto", "lumen", "mira", "nimbus", "opal", "pavo", "quill", "rook", "sable",
    "talon", "umbra", "vertex", "willow", "xenon", "yarrow", "zinnia", "arbor", "basalt",
    "cobalt", "dune", "eyrie", "fjord", "grove", "haven", "inlet", "juno", "karst", "lagoon",
    "mesa", "nadir", "oasis", "prism", "reef", "sierra", "tundra", "ursa", "vale", "wharf",
    "yonder",
];

/// Text values for non-name columns and text properties.
pub const ADJ_POOL: &[&str] = &[
    "crimson", "azure", "amber", "ivory", "jade", "slate", "pearl", "onyx", "coral", "indigo",
    "maroon", "teal", "ochre", "sepia", "viridian", "ultramarine",
];

pub const REL_POOL: &[&str] = &[
    "produced_by", "located_in", "member_of", "works_at", "borders", "owns", "part_of",
    "managed_by", "connected_to", "supplied_by", "founded_by", "allied_with",
];

pub const NUM_PROPS: &[&str] = &["founded", "population", "height", "weight", "age", "rating"];

pub const TEXT_PROPS: &[&str] = &["color", "origin", "motto"];

pub const YEARS: &[i64] = &[
    1900, 1905, 1910, 1915, 1920, 1925, 1930, 1935, 1940, 1945, 1950, 1955, 1960, 1965, 1970,
    1975, 1980, 1985, 1990, 1995, 2000,
];

pub const SMALLS: &[i64] = &[
    5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95,
];

/// Synonym table rows: the default phrase first, alternates after.
pub type Synonyms = &'static [&'static str];

pub const SYN_GT: Synonyms = &["greater than", "more than", "above"];
pub const SYN_LT: Synonyms = &["less than", "under", "below"];
pub const SYN_EQ: Synonyms = &["equal to", "exactly", "being"];
pub const SYN_COUNT: Synonyms = &["how many", "count of"];
pub const SYN_MAX: Synonyms = &["highest", "largest", "maximum"];
pub const SYN_MIN: Synonyms = &["lowest", "smallest", "minimum"];
pub const SYN_SUM: Synonyms = &["total", "combined"];
pub const SYN_AVG: Synonyms = &["average", "mean", "typical"];
pub const SYN_LIST: Synonyms = &["list", "show", "give"];
pub const SYN_WHICH: Synonyms = &["which", "what"];
pub const SYN_ENTITIES: Synonyms = &["entities", "things", "items"];

/// Pick the default phrase, or a random alternate at the paraphrase rate.
pub fn pick(rng: &mut ChaCha8Rng, syn: Synonyms, paraphrase_rate: f64) -> &'static str {
    if syn.len() > 1 && rng.gen_bool(paraphrase_rate) {
        syn[rng.gen_range(1..syn.len())]
    } else {
        syn[0]
    }
}

/// Append a space-separated phrase as individual tokens.
pub fn push_phrase(out: &mut Vec<String>, phrase: &str) {
    out.extend(phrase.split(' ').map(String::from));
}
