use std::collections::BTreeMap;
use std::path::PathBuf;

use colexphylo::data::TraitMatrix;
use colexphylo::ingest::{
    build_colex_matrix, concept_attestation, filter_pairs, ingest, read_pairs, read_wordlist, zipf, AssociationScores,
    BorrowabilityTable, ConceptForms, ConceptPair, FilterParams, FrequencyTable, PredictorInputs, WordlistRecord,
};
use colexphylo::likelihood::TraitState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest").join(name)
}

fn expected_survivors() -> BTreeMap<String, usize> {
    let mut rdr = csv::Reader::from_path(fixture("expected_survivors.csv")).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_owned(), r[1].parse().unwrap())
        })
        .collect()
}

fn fixture_inputs() -> PredictorInputs {
    PredictorInputs {
        forms: ConceptForms::read(&fixture("concept_forms.csv")).unwrap(),
        associations: AssociationScores::read(&fixture("associations.csv")).unwrap(),
        frequencies: FrequencyTable::read(&fixture("frequencies.csv")).unwrap(),
        borrowability: BorrowabilityTable::read(&fixture("borrowability.csv")).unwrap(),
        resource_langs: vec!["eng".into(), "nld".into(), "spa".into()],
    }
}

#[test]
fn fixture_yields_hand_counted_survivors() {
    let records = read_wordlist(&fixture("wordlist.csv")).unwrap();
    let pairs = read_pairs(&fixture("pairs.csv")).unwrap();
    let matrix = build_colex_matrix(&records, &pairs).unwrap();
    let kept = filter_pairs(&matrix, &concept_attestation(&records), &FilterParams::default());
    let got: BTreeMap<String, usize> =
        (0..kept.n_characters()).map(|j| (kept.characters[j].clone(), kept.count_present(j))).collect();
    assert_eq!(got, expected_survivors());
}

#[test]
fn pipeline_keeps_only_fully_scored_pairs() {
    let records = read_wordlist(&fixture("wordlist.csv")).unwrap();
    let pairs = read_pairs(&fixture("pairs.csv")).unwrap();
    let inputs = fixture_inputs();
    let out = ingest(&records, Some(&pairs), &FilterParams::default(), &inputs).unwrap();
    let expected = expected_survivors();
    assert_eq!(out.report.after_filters, expected.len());
    assert_eq!(out.report.with_all_predictors + out.report.dropped_missing_predictors.len(), expected.len());
    assert_eq!(out.matrix.characters, out.predictors.ids);
    let counts = out.predictors.counts.as_ref().unwrap();
    for (j, id) in out.matrix.characters.iter().enumerate() {
        assert_eq!(counts[j] as usize, expected[id]);
        assert!(out.predictors.values[j].iter().all(|v| v.is_finite()));
        let (a, b) = id.split_once('+').unwrap();
        assert!(inputs.scores(&ConceptPair::new(a, b)).iter().all(Option::is_some));
    }
    let again = ingest(&records, Some(&pairs), &FilterParams::default(), &inputs).unwrap();
    let bytes = |m: &TraitMatrix| {
        let mut v = Vec::new();
        m.write_csv(&mut v).unwrap();
        v
    };
    assert_eq!(bytes(&out.matrix), bytes(&again.matrix));
}

#[test]
fn zipf_anchors() {
    assert_eq!(zipf(0.01), 1.0);
    assert_eq!(zipf(100_000.0), 8.0);
    assert_eq!(zipf(1.0), 3.0);
}

fn random_records(seed: u64) -> Vec<WordlistRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for g in 0..12 {
        for v in 0..rng.random_range(1..=3) {
            for c in 0..8 {
                if rng.random_bool(0.7) {
                    let form = format!("f{}", rng.random_range(0..6));
                    out.push(WordlistRecord {
                        glottocode: format!("g{g}"),
                        variety: format!("g{g}-{v}"),
                        concept_id: format!("C{c}"),
                        form,
                    });
                }
            }
        }
    }
    out
}

fn all_pairs(records: &[WordlistRecord]) -> Vec<ConceptPair> {
    let concepts: std::collections::BTreeSet<&str> = records.iter().map(|r| r.concept_id.as_str()).collect();
    let v: Vec<&str> = concepts.into_iter().collect();
    let mut out = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            out.push(ConceptPair::new(v[i], v[j]));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matrix_ignores_concept_order(seed in any::<u64>()) {
        let records = random_records(seed);
        let pairs = all_pairs(&records);
        let swapped: Vec<ConceptPair> = pairs.iter().map(|p| ConceptPair { a: p.b.clone(), b: p.a.clone() }).collect();
        prop_assert_eq!(build_colex_matrix(&records, &pairs).unwrap(), build_colex_matrix(&records, &swapped).unwrap());
    }

    #[test]
    fn filter_is_idempotent_and_monotone(seed in any::<u64>(), c in 0usize..6, a in 0usize..14, dc in 0usize..3, da in 0usize..4) {
        let records = random_records(seed);
        let matrix = build_colex_matrix(&records, &all_pairs(&records)).unwrap();
        let att = concept_attestation(&records);
        let params = FilterParams { min_colex: c, min_attested: a, blocklist: Default::default() };
        let once = filter_pairs(&matrix, &att, &params);
        prop_assert_eq!(&filter_pairs(&once, &att, &params), &once);
        let stricter = FilterParams { min_colex: c + dc, min_attested: a + da, blocklist: Default::default() };
        let tight = filter_pairs(&matrix, &att, &stricter);
        prop_assert!(tight.characters.iter().all(|id| once.characters.contains(id)));
    }

    #[test]
    fn merging_varieties_only_fills_gaps(seed in any::<u64>()) {
        let records = random_records(seed);
        let pairs = all_pairs(&records);
        let merged = build_colex_matrix(&records, &pairs).unwrap();
        for (row, g) in merged.taxa.iter().enumerate() {
            let mut per_variety: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
            for r in records.iter().filter(|r| &r.glottocode == g) {
                per_variety.entry(&r.variety).or_default().entry(&r.concept_id).or_default().push(&r.form);
            }
            let cells: Vec<(&str, Vec<Option<bool>>)> = per_variety
                .iter()
                .map(|(v, lex)| {
                    let row = pairs
                        .iter()
                        .map(|p| match (lex.get(p.a.as_str()), lex.get(p.b.as_str())) {
                            (Some(fa), Some(fb)) => Some(fa.iter().any(|f| fb.contains(f))),
                            _ => None,
                        })
                        .collect();
                    (*v, row)
                })
                .collect();
            let base = cells
                .iter()
                .max_by(|x, y| {
                    let n = |r: &Vec<Option<bool>>| r.iter().filter(|c| c.is_some()).count();
                    n(&x.1).cmp(&n(&y.1)).then(y.0.cmp(x.0))
                })
                .unwrap();
            for (j, cell) in merged.cells[row].iter().enumerate() {
                match base.1[j] {
                    Some(true) => prop_assert_eq!(*cell, TraitState::Present),
                    Some(false) => prop_assert_eq!(*cell, TraitState::Absent),
                    None => prop_assert_eq!(cell.is_missing(), cells.iter().all(|(_, r)| r[j].is_none())),
                }
            }
        }
    }
}
