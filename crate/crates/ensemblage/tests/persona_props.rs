//! Property and Monte Carlo checks for the persona engine.
//!
//! The filter is checked against an independent brute-force row scan over
//! randomized datasets and queries; the weighted sampler is checked
//! against its target distribution.

use std::collections::BTreeMap;

use proptest::prelude::*;

use ensemblage::persona::{
    render_persona, CellValue, Codebook, CodebookEntry, PersonaDataset, PersonaQuery,
    PersonaRecord, QueryClause, QueryLiteral, QueryOp, QueryScalar,
};
use ensemblage::rng::SeededRng;

const CATEGORIES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

fn test_codebook() -> Codebook {
    Codebook {
        weight_column: "weight".into(),
        ideology_column: "cat".into(),
        entries: vec![
            CodebookEntry {
                column: "cat".into(),
                human_label: "Category".into(),
                value_labels: BTreeMap::new(),
                sentence_template: "Your category is ${value}.".into(),
            },
            CodebookEntry {
                column: "num".into(),
                human_label: "Number".into(),
                value_labels: BTreeMap::new(),
                sentence_template: "Your number is ${value}.".into(),
            },
        ],
    }
}

fn record(cat: Option<usize>, num: Option<i32>, weight: f64) -> PersonaRecord {
    let mut values = BTreeMap::new();
    if let Some(c) = cat {
        values.insert("cat".to_string(), CellValue::Text(CATEGORIES[c % 4].into()));
    }
    if let Some(n) = num {
        values.insert("num".to_string(), CellValue::Number(n as f64));
    }
    PersonaRecord { values, weight }
}

fn dataset(rows: Vec<PersonaRecord>) -> PersonaDataset {
    PersonaDataset::from_rows(rows, test_codebook(), "generated").unwrap()
}

fn row_strategy() -> impl Strategy<Value = PersonaRecord> {
    (
        proptest::option::of(0usize..4),
        proptest::option::of(-5i32..15),
        0.05f64..4.0,
    )
        .prop_map(|(cat, num, weight)| record(cat, num, weight))
}

fn clause_strategy() -> impl Strategy<Value = QueryClause> {
    let op = prop_oneof![
        Just(QueryOp::Eq),
        Just(QueryOp::Ne),
        Just(QueryOp::Lt),
        Just(QueryOp::Le),
        Just(QueryOp::Gt),
        Just(QueryOp::Ge),
    ];
    prop_oneof![
        // categorical clause
        (0usize..4, op.clone()).prop_map(|(value, op)| QueryClause {
            column: "cat".into(),
            op,
            literal: QueryLiteral::Scalar(QueryScalar::Text(CATEGORIES[value].into())),
        }),
        // numeric clause
        (-6i32..16, op).prop_map(|(value, op)| QueryClause {
            column: "num".into(),
            op,
            literal: QueryLiteral::Scalar(QueryScalar::Number(value as f64)),
        }),
        // membership clause
        proptest::collection::vec(0usize..4, 1..3).prop_map(|values| QueryClause {
            column: "cat".into(),
            op: QueryOp::In,
            literal: QueryLiteral::List(
                values
                    .into_iter()
                    .map(|v| QueryScalar::Text(CATEGORIES[v].into()))
                    .collect(),
            ),
        }),
    ]
}

/// Independent oracle: evaluate one clause against one row the long way.
fn oracle_matches(row: &PersonaRecord, clause: &QueryClause) -> bool {
    let Some(value) = row.values.get(&clause.column) else {
        return false;
    };
    let scalar_eq = |scalar: &QueryScalar| match (value, scalar) {
        (CellValue::Text(a), QueryScalar::Text(b)) => a == b,
        (CellValue::Number(a), QueryScalar::Number(b)) => a == b,
        _ => false,
    };
    match (&clause.literal, clause.op) {
        (QueryLiteral::List(items), QueryOp::In) => items.iter().any(scalar_eq),
        (QueryLiteral::Scalar(QueryScalar::Text(b)), op) => {
            let CellValue::Text(a) = value else {
                return false;
            };
            match op {
                QueryOp::Eq => a == b,
                QueryOp::Ne => a != b,
                QueryOp::Lt => a < b,
                QueryOp::Le => a <= b,
                QueryOp::Gt => a > b,
                QueryOp::Ge => a >= b,
                QueryOp::In => unreachable!(),
            }
        }
        (QueryLiteral::Scalar(QueryScalar::Number(b)), op) => {
            let CellValue::Number(a) = value else {
                return false;
            };
            match op {
                QueryOp::Eq => a == b,
                QueryOp::Ne => a != b,
                QueryOp::Lt => a < b,
                QueryOp::Le => a <= b,
                QueryOp::Gt => a > b,
                QueryOp::Ge => a >= b,
                QueryOp::In => unreachable!(),
            }
        }
        _ => false,
    }
}

proptest! {
    /// Filter soundness and completeness against the brute-force scan.
    #[test]
    fn filter_equals_brute_force_scan(
        rows in proptest::collection::vec(row_strategy(), 0..40),
        clauses in proptest::collection::vec(clause_strategy(), 0..4),
    ) {
        let data = dataset(rows.clone());
        let query = PersonaQuery { clauses: clauses.clone() };
        let filtered = data.filter(&query).unwrap();
        let expected: Vec<&PersonaRecord> = rows
            .iter()
            .filter(|row| clauses.iter().all(|c| oracle_matches(row, c)))
            .collect();
        prop_assert_eq!(filtered.len(), expected.len());
        for (got, want) in filtered.rows.iter().zip(expected) {
            prop_assert_eq!(got, want); // rows and weights unchanged
        }
    }

    /// Rendering never leaks the `${value}` placeholder.
    #[test]
    fn rendering_is_total(rows in proptest::collection::vec(row_strategy(), 1..20)) {
        let codebook = test_codebook();
        for row in &rows {
            let rendered = render_persona(row, &codebook).unwrap();
            let leaked = rendered.contains("${value}");
            prop_assert!(!leaked, "placeholder leaked: {}", rendered);
            prop_assert!(rendered.starts_with("You are a person with the following characteristics."));
        }
    }
}

#[test]
fn empty_query_is_identity() {
    let rows: Vec<PersonaRecord> = (0..10)
        .map(|i| record(Some(i), Some(i as i32), 1.0))
        .collect();
    let data = dataset(rows.clone());
    let filtered = data.filter(&PersonaQuery::empty()).unwrap();
    assert_eq!(filtered.rows, rows);
}

#[test]
fn unknown_column_is_rejected() {
    let data = dataset(vec![record(Some(0), Some(1), 1.0)]);
    let query = PersonaQuery {
        clauses: vec![QueryClause {
            column: "ghost".into(),
            op: QueryOp::Eq,
            literal: QueryLiteral::Scalar(QueryScalar::Number(1.0)),
        }],
    };
    assert!(data.filter(&query).is_err());
}

#[test]
fn mistyped_literal_is_rejected() {
    let data = dataset(vec![record(Some(0), Some(1), 1.0)]);
    // "num" is numeric; comparing it against a string is a type error,
    // not an empty result.
    let query = PersonaQuery {
        clauses: vec![QueryClause {
            column: "num".into(),
            op: QueryOp::Lt,
            literal: QueryLiteral::Scalar(QueryScalar::Text("five".into())),
        }],
    };
    assert!(matches!(
        data.filter(&query),
        Err(ensemblage::persona::PersonaError::TypeMismatch(_))
    ));
}

#[test]
fn single_row_always_sampled() {
    let data = dataset(vec![record(Some(1), Some(2), 0.7)]);
    let mut rng = SeededRng::new(99);
    for _ in 0..50 {
        let row = data.sample_weighted(&mut rng).unwrap();
        assert_eq!(row, &data.rows[0]);
    }
}

#[test]
fn empty_dataset_cannot_be_sampled() {
    let data = dataset(vec![]);
    let mut rng = SeededRng::new(1);
    assert!(data.sample_weighted(&mut rng).is_err());
}

/// Equal weights over n rows: the empirical entropy of sampled indexes
/// approaches log n.
#[test]
fn equal_weight_sampling_entropy_approaches_log_n() {
    let n = 8usize;
    let rows: Vec<PersonaRecord> = (0..n)
        .map(|i| record(Some(i), Some(i as i32), 1.0))
        .collect();
    let data = dataset(rows);
    let mut rng = SeededRng::new(424242);
    let draws = 50_000usize;
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        let row = data.sample_weighted(&mut rng).unwrap();
        let idx = match &row.values["num"] {
            CellValue::Number(v) => *v as usize,
            CellValue::Text(_) => unreachable!(),
        };
        counts[idx] += 1;
    }
    let entropy: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / draws as f64;
            -p * p.ln()
        })
        .sum();
    let max_entropy = (n as f64).ln();
    assert!(
        (entropy - max_entropy).abs() < 0.01,
        "entropy {entropy} vs log n {max_entropy}"
    );
}

#[test]
fn ideology_shortcut_buckets_and_errors() {
    let mut rows = Vec::new();
    for (i, label) in [
        "Very liberal",
        "Liberal",
        "Moderate",
        "Conservative",
        "Very conservative",
    ]
    .iter()
    .enumerate()
    {
        for _ in 0..4 {
            let mut values = BTreeMap::new();
            values.insert("cat".to_string(), CellValue::Text(label.to_string()));
            values.insert("num".to_string(), CellValue::Number(i as f64));
            rows.push(PersonaRecord {
                values,
                weight: 1.0,
            });
        }
    }
    let data = dataset(rows);
    let mut rng = SeededRng::new(5);
    for _ in 0..30 {
        let row = data.ideology_shortcut("liberal", &mut rng).unwrap();
        let value = row.values["cat"].to_string().to_lowercase();
        assert!(value == "liberal" || value == "very liberal", "{value}");
        let row = data.ideology_shortcut("conservative", &mut rng).unwrap();
        let value = row.values["cat"].to_string().to_lowercase();
        assert!(value.contains("conservative"));
        // "moderate" must not catch graded variants of other labels.
        let row = data.ideology_shortcut("Moderate", &mut rng).unwrap();
        assert_eq!(row.values["cat"].to_string(), "Moderate");
    }
    // "random" is exactly a weighted draw over the whole dataset.
    let mut rng_a = SeededRng::new(77);
    let mut rng_b = SeededRng::new(77);
    assert_eq!(
        data.ideology_shortcut("random", &mut rng_a).unwrap(),
        data.sample_weighted(&mut rng_b).unwrap().clone()
    );
    assert!(data.ideology_shortcut("centrist-x", &mut rng).is_err());
}
