//! Regenerates the bundled CLI fixtures:
//!
//! ```text
//! cargo run -p sociolex-core --example make_fixtures -- crates/cli/fixtures
//! ```
//!
//! Output is a pure function of the fixed seeds below.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde_json::json;

use sociolex_core::corpus::{Granularity, TimeBucket};
use sociolex_core::embedshift::PoleSets;
use sociolex_core::synth;

const CORPUS_SEED: u64 = 2024;
const SHIFT_SEED: u64 = 77;
const SHIFT_YEARS: [(&str, f64); 3] = [("2014", 0.3), ("2015", 0.5), ("2016", 0.7)];
const SHIFT_TOKENS: usize = 60_000;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/cli/fixtures".into()));
    fs::create_dir_all(&dir)?;

    let mut corpus = synth::fixture_messages(CORPUS_SEED).join("\n");
    corpus.push('\n');
    fs::write(dir.join("corpus.jsonl"), corpus)?;

    let mut treatments = String::from("state,year_month\n");
    for (s, t) in synth::fixture_treatments() {
        writeln!(treatments, "{s},{}", t.label()).unwrap();
    }
    fs::write(dir.join("treatments.csv"), treatments)?;

    let mut shift = String::new();
    let mut id = 0;
    for (year, docs) in synth::drift_corpus(&PoleSets::terms(), "dude", &SHIFT_YEARS, SHIFT_TOKENS, SHIFT_SEED) {
        let y: i32 = year.parse().expect("numeric year");
        for (i, doc) in docs.iter().enumerate() {
            id += 1;
            let ts = TimeBucket::from_year_month(y, (i % 12) as u32 + 1, Granularity::Month).start()
                + 3600 * (i % 500) as i64;
            let line = json!({"id": format!("s{id:06}"), "platform": "twitter", "ts": ts, "text": doc.join(" ")});
            writeln!(shift, "{line}").unwrap();
        }
    }
    fs::write(dir.join("shift.jsonl"), shift)?;

    fs::write(dir.join("sigother.json"), include_str!("../data/sigother.json"))?;
    fs::write(dir.join("person.json"), include_str!("../data/person.json"))?;

    let config = json!({
        "inputs": ["corpus.jsonl"],
        "variables": ["sigother.json", "person.json"],
        "output_dir": "out",
        "seed": 7,
        "analyses": [
            {"kind": "rates", "target": "partner"},
            {"kind": "rates", "name": "sigother_lgbt", "target": "partner", "granularity": "quarter",
             "filter": {"labels_all": ["sexuality:lgbt"]}},
            {"kind": "rates", "name": "person_neutral", "variable": "Person", "target": "gender:neutral", "granularity": "year"},
            {"kind": "trend", "target": "partner", "granularity": "quarter"},
            {"kind": "trend", "name": "community_mean", "target": "partner", "granularity": "year", "mode": "community_mean"},
            {"kind": "groups", "target": "partner",
             "groups": ["sexuality:lgbt", "sexuality:heterosexual", "gender:men", "gender:women", "politics:left", "politics:right"]},
            {"kind": "groups", "name": "education", "target": "partner", "attribute": "education", "min_n": 20},
            {"kind": "did", "target": "partner", "treatments": "treatments.csv", "standard_errors": "clustered_by_state"},
            {"kind": "shift", "target": "dude", "corpus": "shift.jsonl", "runs": 2, "resamples": 200,
             "train": {"dim": 24, "min_tokens": 20000},
             "anchors": ["w0", "w1", "w2", "w3", "w4", "w5"]}
        ]
    });
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    eprintln!("fixtures written to {}", dir.display());
    Ok(())
}
