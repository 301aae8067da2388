//! The shipped synthetic survey sample is authored by this checked
//! generator. `shipped_sample_matches_generator` regenerates the CSV and
//! requires byte equality with the file in `data/`; run with
//! `UPDATE_GOLDENS=1` to rewrite the file after an intentional change.

use std::path::PathBuf;

use ensemblage::persona::{load_dataset, PersonaError};
use ensemblage::rng::SeededRng;

const SAMPLE_SEED: u64 = 0x53_41_4d_50_4c_45; // "SAMPLE"
const ROWS: usize = 200;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn pick<'a>(rng: &mut SeededRng, options: &[(&'a str, u32)]) -> &'a str {
    let total: u32 = options.iter().map(|(_, w)| *w).sum();
    let mut target = rng.range(total as u64) as u32;
    for (value, weight) in options {
        if target < *weight {
            return value;
        }
        target -= weight;
    }
    options.last().expect("non-empty options").0
}

fn generate_sample_csv() -> String {
    let mut rng = SeededRng::new(SAMPLE_SEED);
    let mut out =
        String::from("age,gender,race,education,region,ideology,party,has_child,income,weight\n");
    for _ in 0..ROWS {
        let age = 18 + rng.range(73);
        let gender = pick(&mut rng, &[("Female", 50), ("Male", 48), ("Nonbinary", 2)]);
        let race = pick(
            &mut rng,
            &[
                ("White", 58),
                ("Black", 13),
                ("Hispanic", 17),
                ("Asian", 7),
                ("Other", 5),
            ],
        );
        let education = pick(
            &mut rng,
            &[
                ("High school or less", 35),
                ("Some college", 28),
                ("College degree", 24),
                ("Postgraduate degree", 13),
            ],
        );
        let region = pick(
            &mut rng,
            &[
                ("Northeast", 17),
                ("Midwest", 21),
                ("South", 38),
                ("West", 24),
            ],
        );
        let ideology = pick(
            &mut rng,
            &[
                ("Very liberal", 10),
                ("Liberal", 20),
                ("Moderate", 35),
                ("Conservative", 24),
                ("Very conservative", 11),
            ],
        );
        let party = pick(
            &mut rng,
            &[("Democrat", 33), ("Independent", 34), ("Republican", 33)],
        );
        // A few cells are left missing so the skip-on-missing rendering
        // rule is exercised by real data.
        let has_child = if rng.range(50) == 0 {
            ""
        } else {
            pick(&mut rng, &[("Yes", 38), ("No", 62)])
        };
        let income = if rng.range(40) == 0 {
            ""
        } else {
            pick(
                &mut rng,
                &[
                    ("Under 30k", 22),
                    ("30k to 60k", 27),
                    ("60k to 100k", 25),
                    ("100k to 200k", 20),
                    ("Over 200k", 6),
                ],
            )
        };
        let weight = 0.25 + 1.75 * rng.f64();
        out.push_str(&format!(
            "{age},{gender},{race},{education},{region},{ideology},{party},{has_child},{income},{weight:.4}\n"
        ));
    }
    out
}

#[test]
fn shipped_sample_matches_generator() {
    let path = data_dir().join("anes_sample.csv");
    let generated = generate_sample_csv();
    if std::env::var("UPDATE_GOLDENS").is_ok() {
        std::fs::write(&path, &generated).unwrap();
        return;
    }
    let shipped = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        shipped, generated,
        "data/anes_sample.csv does not match its generator; \
         run with UPDATE_GOLDENS=1 if the change is intentional"
    );
}

#[test]
fn shipped_sample_loads_with_positive_weights() {
    let dataset = load_dataset(
        data_dir().join("anes_sample.csv"),
        data_dir().join("anes_codebook.json"),
    )
    .unwrap();
    assert_eq!(dataset.len(), ROWS);
    for row in &dataset.rows {
        assert!(row.weight > 0.0 && row.weight.is_finite());
    }
    // The shipped case-study queries must have rows to sample from.
    let liberals_with_children = dataset
        .filter(
            &ensemblage::persona::PersonaQuery::parse(
                "ideology == 'Liberal' AND has_child == 'Yes'",
            )
            .unwrap(),
        )
        .unwrap();
    assert!(liberals_with_children.len() >= 5);
}

#[test]
fn zero_weight_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bad.csv");
    std::fs::write(
        &csv_path,
        "age,gender,race,education,region,ideology,party,has_child,income,weight\n\
         40,Female,White,Some college,South,Moderate,Independent,No,Under 30k,0\n",
    )
    .unwrap();
    let err = load_dataset(&csv_path, data_dir().join("anes_codebook.json")).unwrap_err();
    assert!(matches!(err, PersonaError::Schema(_)), "{err}");
}

#[test]
fn codebook_missing_a_rendered_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("extra.csv");
    std::fs::write(&csv_path, "age,mystery,weight\n40,hello,1.0\n").unwrap();
    let codebook_path = dir.path().join("cb.json");
    std::fs::write(
        &codebook_path,
        r#"{
            "weight_column": "weight",
            "ideology_column": "age",
            "entries": [
                {"column": "age", "human_label": "Age", "sentence_template": "Your age is ${value}."}
            ]
        }"#,
    )
    .unwrap();
    let err = load_dataset(&csv_path, &codebook_path).unwrap_err();
    assert!(matches!(err, PersonaError::CodebookMismatch(_)), "{err}");
}
