//! Golden-file checks: frozen template bodies, the previous-responses
//! block format, and the shipped dataset's rendered outputs.
//!
//! Golden files live in `tests/goldens/`. Run with `UPDATE_GOLDENS=1` to
//! rewrite them after an intentional change; the diff is then reviewable.

use std::path::PathBuf;

use ensemblage::persona::load_dataset;
use ensemblage::rng::SeededRng;
use ensemblage::template::{builtin, format_previous_responses};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/goldens")
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Compare `actual` against a golden file (which ends with one newline).
fn assert_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    let with_newline = format!("{actual}\n");
    if std::env::var("UPDATE_GOLDENS").is_ok() {
        std::fs::write(&path, &with_newline).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {name}: {e}"));
    assert_eq!(
        expected, with_newline,
        "{name} drifted; run with UPDATE_GOLDENS=1 if intentional"
    );
}

#[test]
fn debate_templates_byte_match_goldens() {
    for name in ["rational_debate", "emotional_debate"] {
        let template = builtin(name).unwrap();
        assert_golden(&format!("{name}.txt"), &template.body);
    }
}

#[test]
fn debate_goldens_contain_key_lines() {
    let rational = std::fs::read_to_string(golden_dir().join("rational_debate.txt")).unwrap();
    assert!(rational.contains("Give more weight to rational arguments"));
    assert!(rational.contains("Never refer to yourself in the third person."));
    let emotional = std::fs::read_to_string(golden_dir().join("emotional_debate.txt")).unwrap();
    assert!(emotional.contains("narrative, rhetoric, testimony, and storytelling"));
}

#[test]
fn previous_responses_formats_are_frozen() {
    assert_golden(
        "previous_responses_tagged.txt",
        &format_previous_responses(&[(Some("You"), "a"), (Some("Other"), "b")]),
    );
    assert_golden(
        "previous_responses_anonymous.txt",
        &format_previous_responses(&[
            (None, "first point"),
            (None, "second point"),
            (None, "third point"),
        ]),
    );
}

#[test]
fn shipped_sample_variable_mapping_is_frozen() {
    let dataset = load_dataset(
        data_dir().join("anes_sample.csv"),
        data_dir().join("anes_codebook.json"),
    )
    .unwrap();
    let description = dataset.describe_variables();
    // One line per codebook entry.
    assert_eq!(description.lines().count(), dataset.codebook.entries.len());
    assert_golden("describe_variables.txt", &description);
}

#[test]
fn fixed_seed_persona_render_is_frozen() {
    let dataset = load_dataset(
        data_dir().join("anes_sample.csv"),
        data_dir().join("anes_codebook.json"),
    )
    .unwrap();
    let mut rng = SeededRng::new(7);
    let record = dataset.sample_weighted(&mut rng).unwrap();
    let rendered = ensemblage::persona::render_persona(record, &dataset.codebook).unwrap();
    assert!(rendered.starts_with("You are a person with the following characteristics."));
    assert!(!rendered.contains("${value}"));
    assert_golden("persona_render_seed7.txt", &rendered);
}
