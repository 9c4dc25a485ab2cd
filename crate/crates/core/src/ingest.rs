//! Wordlists to analysis-ready tables: colexification matrices over concept
//! pairs, the homonymy, attestation and grammatical-concept filters, and the
//! associativity, frequency and borrowability scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PredictorTable, TraitMatrix, DEFAULT_PREDICTORS};
use crate::error::{Error, Result};
use crate::likelihood::TraitState;

/// Shipped default: two grammatical concepts.
pub const DEFAULT_BLOCKLIST: &str = include_str!("../data/grammatical_blocklist.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordlistRecord {
    pub glottocode: String,
    pub variety: String,
    pub concept_id: String,
    pub form: String,
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn read_wordlist(path: &Path) -> Result<Vec<WordlistRecord>> {
    let records: Vec<WordlistRecord> = read_records(path)?;
    if let Some(r) = records.iter().find(|r| r.glottocode.is_empty() || r.variety.is_empty() || r.concept_id.is_empty()) {
        return Err(Error::parse(path.display().to_string(), format!("empty identifier in record {r:?}")));
    }
    Ok(records)
}

/// Unordered concept pair, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptPair {
    pub a: String,
    pub b: String,
}

impl ConceptPair {
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Self {
        let (x, y) = (x.into(), y.into());
        if x <= y {
            ConceptPair { a: x, b: y }
        } else {
            ConceptPair { a: y, b: x }
        }
    }

    /// `"a+b"` with the concepts sorted.
    pub fn id(&self) -> String {
        format!("{}+{}", self.a, self.b)
    }
}

/// Pairs file: CSV with columns `concept_a,concept_b`.
pub fn read_pairs(path: &Path) -> Result<Vec<ConceptPair>> {
    #[derive(Deserialize)]
    struct Row {
        concept_a: String,
        concept_b: String,
    }
    let rows: Vec<Row> = read_records(path)?;
    let set: BTreeSet<ConceptPair> = rows.into_iter().map(|r| ConceptPair::new(r.concept_a, r.concept_b)).collect();
    Ok(set.into_iter().collect())
}

type Lexicon = BTreeMap<String, BTreeSet<String>>;

/// glottocode -> variety -> concept -> forms
fn index(records: &[WordlistRecord]) -> BTreeMap<&str, BTreeMap<&str, Lexicon>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, Lexicon>> = BTreeMap::new();
    for r in records {
        out.entry(&r.glottocode)
            .or_default()
            .entry(&r.variety)
            .or_default()
            .entry(r.concept_id.clone())
            .or_default()
            .insert(r.form.trim().to_owned());
    }
    out
}

fn colex_cell(lex: &Lexicon, pair: &ConceptPair) -> TraitState {
    match (lex.get(&pair.a), lex.get(&pair.b)) {
        (Some(fa), Some(fb)) => TraitState::from_bit(u8::from(!fa.is_disjoint(fb))),
        _ => TraitState::Missing,
    }
}

/// Languages (Glottocodes) x pairs. Varieties sharing a Glottocode are merged:
/// the variety with the most non-missing pairs is taken as the base (ties
/// broken by variety id) and its missing cells are filled from the other
/// varieties in the same order of preference.
pub fn build_colex_matrix(records: &[WordlistRecord], pairs: &[ConceptPair]) -> Result<TraitMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let known: BTreeSet<&str> = records.iter().map(|r| r.concept_id.as_str()).collect();
    if let Some(p) = pairs.iter().find(|p| !known.contains(p.a.as_str()) || !known.contains(p.b.as_str())) {
        return Err(Error::Alignment(format!("pair `{}` names a concept absent from the wordlist", p.id())));
    }
    let mut pairs: Vec<ConceptPair> = pairs.iter().map(|p| ConceptPair::new(p.a.clone(), p.b.clone())).collect();
    pairs.sort();
    pairs.dedup();

    let idx = index(records);
    let mut taxa = Vec::with_capacity(idx.len());
    let mut cells = Vec::with_capacity(idx.len());
    for (glottocode, varieties) in &idx {
        let mut rows: Vec<(&str, Vec<TraitState>)> =
            varieties.iter().map(|(v, lex)| (*v, pairs.iter().map(|p| colex_cell(lex, p)).collect())).collect();
        let complete = |row: &[TraitState]| row.iter().filter(|s| !s.is_missing()).count();
        rows.sort_by(|(va, ra), (vb, rb)| complete(rb).cmp(&complete(ra)).then(va.cmp(vb)));
        let mut merged = rows[0].1.clone();
        for (_, row) in &rows[1..] {
            for (m, &s) in merged.iter_mut().zip(row) {
                if m.is_missing() {
                    *m = s;
                }
            }
        }
        taxa.push((*glottocode).to_owned());
        cells.push(merged);
    }
    TraitMatrix::new(taxa, pairs.iter().map(ConceptPair::id).collect(), cells)
}

/// Number of languages (Glottocodes) attesting each concept.
pub fn concept_attestation(records: &[WordlistRecord]) -> BTreeMap<String, usize> {
    let mut langs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        langs.entry(&r.concept_id).or_default().insert(&r.glottocode);
    }
    langs.into_iter().map(|(c, l)| (c.to_owned(), l.len())).collect()
}

/// Candidate pairs: every pair colexified in at least one language when
/// `min_colex >= 1`, otherwise every pair of concepts co-attested in some language.
pub fn candidate_pairs(records: &[WordlistRecord], min_colex: usize) -> Vec<ConceptPair> {
    let mut out = BTreeSet::new();
    for varieties in index(records).values() {
        for lex in varieties.values() {
            if min_colex >= 1 {
                let mut by_form: HashMap<&str, Vec<&str>> = HashMap::new();
                for (concept, forms) in lex {
                    for f in forms {
                        by_form.entry(f).or_default().push(concept);
                    }
                }
                for concepts in by_form.values() {
                    for (i, a) in concepts.iter().enumerate() {
                        for b in &concepts[i + 1..] {
                            out.insert(ConceptPair::new(*a, *b));
                        }
                    }
                }
            } else {
                let concepts: Vec<&String> = lex.keys().collect();
                for (i, a) in concepts.iter().enumerate() {
                    for b in &concepts[i + 1..] {
                        out.insert(ConceptPair::new(a.as_str(), b.as_str()));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

pub fn parse_blocklist(text: &str) -> BTreeSet<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_colex: usize,
    pub min_attested: usize,
    pub blocklist: BTreeSet<String>,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { min_colex: 5, min_attested: 30, blocklist: parse_blocklist(DEFAULT_BLOCKLIST) }
    }
}

fn split_id(id: &str) -> Option<(&str, &str)> {
    id.split_once('+')
}

/// Keeps pairs colexified in at least `min_colex` languages whose concepts
/// are each attested in at least `min_attested` languages and are not blocklisted.
pub fn filter_pairs(matrix: &TraitMatrix, attestation: &BTreeMap<String, usize>, params: &FilterParams) -> TraitMatrix {
    let attested = |c: &str| attestation.get(c).copied().unwrap_or(0) >= params.min_attested;
    let keep: Vec<usize> = (0..matrix.n_characters())
        .filter(|&j| {
            let Some((a, b)) = split_id(&matrix.characters[j]) else { return false };
            matrix.count_present(j) >= params.min_colex
                && attested(a)
                && attested(b)
                && !params.blocklist.contains(a)
                && !params.blocklist.contains(b)
        })
        .collect();
    matrix.select_characters(&keep)
}

/// Resource language -> concept -> forms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptForms {
    pub map: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl ConceptForms {
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            resource_lang: String,
            concept_id: String,
            form: String,
        }
        let mut out = ConceptForms::default();
        for r in read_records::<Row>(path)? {
            out.insert(&r.resource_lang, &r.concept_id, &r.form);
        }
        Ok(out)
    }

    pub fn insert(&mut self, lang: &str, concept: &str, form: &str) {
        self.map.entry(lang.to_owned()).or_default().entry(concept.to_owned()).or_default().insert(form.to_owned());
    }

    fn forms(&self, lang: &str, concept: &str) -> Option<&BTreeSet<String>> {
        self.map.get(lang).and_then(|m| m.get(concept)).filter(|f| !f.is_empty())
    }

    pub fn languages(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }
}

/// Resource language -> (cue form, response form) -> score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationScores {
    pub map: BTreeMap<String, HashMap<(String, String), f64>>,
}

impl AssociationScores {
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            resource_lang: String,
            form_a: String,
            form_b: String,
            score: f64,
        }
        let mut out = AssociationScores::default();
        for r in read_records::<Row>(path)? {
            if !(r.score.is_finite() && r.score >= 0.0) {
                return Err(Error::parse(path.display().to_string(), format!("invalid association score {}", r.score)));
            }
            out.insert(&r.resource_lang, &r.form_a, &r.form_b, r.score);
        }
        Ok(out)
    }

    pub fn insert(&mut self, lang: &str, a: &str, b: &str, score: f64) {
        self.map.entry(lang.to_owned()).or_default().insert((a.to_owned(), b.to_owned()), score);
    }

    /// Mean of the recorded directions, `None` if neither is recorded.
    fn combination(&self, lang: &str, a: &str, b: &str) -> Option<f64> {
        let m = self.map.get(lang)?;
        let key = |x: &str, y: &str| (x.to_owned(), y.to_owned());
        match (m.get(&key(a, b)), m.get(&key(b, a))) {
            (Some(x), Some(y)) => Some((x + y) / 2.0),
            (Some(x), None) | (None, Some(x)) => Some(*x),
            (None, None) => None,
        }
    }
}

/// Mean over resource languages of the mean score over all (form of A, form
/// of B) combinations. A resource language contributes when it has forms for
/// both concepts and a score for at least one combination; unscored
/// combinations then count as 0.
pub fn associativity_score(pair: &ConceptPair, forms: &ConceptForms, scores: &AssociationScores, langs: &[String]) -> Option<f64> {
    let per_lang: Vec<f64> = langs
        .iter()
        .filter_map(|lang| {
            let fa = forms.forms(lang, &pair.a)?;
            let fb = forms.forms(lang, &pair.b)?;
            let mut any = false;
            let mut total = 0.0;
            for a in fa {
                for b in fb {
                    if let Some(s) = scores.combination(lang, a, b) {
                        any = true;
                        total += s;
                    }
                }
            }
            any.then(|| total / (fa.len() * fb.len()) as f64)
        })
        .collect();
    mean(&per_lang)
}

/// Resource language -> form counts and corpus size in tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyTable {
    pub counts: BTreeMap<String, HashMap<String, f64>>,
    pub corpus_size: BTreeMap<String, f64>,
}

impl FrequencyTable {
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            resource_lang: String,
            form: String,
            count: f64,
            corpus_size: f64,
        }
        let mut out = FrequencyTable::default();
        for r in read_records::<Row>(path)? {
            out.insert(&r.resource_lang, &r.form, r.count, r.corpus_size)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, lang: &str, form: &str, count: f64, corpus_size: f64) -> Result<()> {
        if !(count >= 0.0 && corpus_size > 0.0) {
            return Err(Error::Config(format!("invalid frequency row for `{form}`: count {count}, corpus {corpus_size}")));
        }
        match self.corpus_size.get(lang) {
            Some(&c) if c != corpus_size => {
                return Err(Error::Config(format!("inconsistent corpus sizes for `{lang}`: {c} and {corpus_size}")))
            }
            _ => {}
        }
        self.corpus_size.insert(lang.to_owned(), corpus_size);
        *self.counts.entry(lang.to_owned()).or_default().entry(form.to_owned()).or_insert(0.0) += count;
        Ok(())
    }
}

/// Zipf scale: `log10(occurrences per million) + 3`.
pub fn zipf(per_million: f64) -> f64 {
    per_million.log10() + 3.0
}

/// Mean over resource languages of the Zipf value of the summed count of all
/// forms of both concepts; a zero sum is smoothed to one occurrence.
pub fn zipf_score(pair: &ConceptPair, forms: &ConceptForms, freq: &FrequencyTable, langs: &[String]) -> Option<f64> {
    let per_lang: Vec<f64> = langs
        .iter()
        .filter_map(|lang| {
            let corpus = *freq.corpus_size.get(lang)?;
            let mut all: BTreeSet<&String> = BTreeSet::new();
            for c in [&pair.a, &pair.b] {
                if let Some(f) = forms.forms(lang, c) {
                    all.extend(f);
                }
            }
            if all.is_empty() {
                return None;
            }
            let counts = freq.counts.get(lang);
            let mut total: f64 = all.iter().map(|f| counts.and_then(|m| m.get(*f)).copied().unwrap_or(0.0)).sum();
            if total == 0.0 {
                total = 1.0;
            }
            Some(zipf(total / corpus * 1e6))
        })
        .collect();
    mean(&per_lang)
}

/// Concept -> borrowed score in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BorrowabilityTable {
    pub scores: BTreeMap<String, f64>,
}

impl BorrowabilityTable {
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            concept_id: String,
            score: f64,
        }
        let mut out = BorrowabilityTable::default();
        for r in read_records::<Row>(path)? {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::parse(path.display().to_string(), format!("borrowability {} outside [0, 1]", r.score)));
            }
            out.scores.insert(r.concept_id, r.score);
        }
        Ok(out)
    }
}

/// Mean of the two concepts' scores, the single available score, or `None`.
pub fn borrowability_score(pair: &ConceptPair, table: &BorrowabilityTable) -> Option<f64> {
    match (table.scores.get(&pair.a), table.scores.get(&pair.b)) {
        (Some(x), Some(y)) => Some((x + y) / 2.0),
        (Some(x), None) | (None, Some(x)) => Some(*x),
        (None, None) => None,
    }
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, Default)]
pub struct PredictorInputs {
    pub forms: ConceptForms,
    pub associations: AssociationScores,
    pub frequencies: FrequencyTable,
    pub borrowability: BorrowabilityTable,
    /// Resource languages to average over; empty means every language in `forms`.
    pub resource_langs: Vec<String>,
}

impl PredictorInputs {
    fn langs(&self) -> Vec<String> {
        if self.resource_langs.is_empty() {
            self.forms.languages()
        } else {
            self.resource_langs.clone()
        }
    }

    /// `[assoc, freq, borrow]`, any of which may be missing.
    pub fn scores(&self, pair: &ConceptPair) -> [Option<f64>; 3] {
        let langs = self.langs();
        [
            associativity_score(pair, &self.forms, &self.associations, &langs),
            zipf_score(pair, &self.forms, &self.frequencies, &langs),
            borrowability_score(pair, &self.borrowability),
        ]
    }
}

/// Stage counts of an ingestion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub languages: usize,
    pub candidate_pairs: usize,
    pub after_filters: usize,
    pub with_all_predictors: usize,
    pub dropped_missing_predictors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub matrix: TraitMatrix,
    pub predictors: PredictorTable,
    pub report: IngestReport,
}

/// Full pipeline: candidate pairs (or the given list), matrix, filters, then
/// predictor scores; pairs lacking any score are dropped. The predictor table
/// carries the per-pair count of colexifying languages.
pub fn ingest(
    records: &[WordlistRecord],
    pairs: Option<&[ConceptPair]>,
    params: &FilterParams,
    inputs: &PredictorInputs,
) -> Result<IngestOutput> {
    let candidates = match pairs {
        Some(p) => p.to_vec(),
        None => candidate_pairs(records, params.min_colex),
    };
    let matrix = build_colex_matrix(records, &candidates)?;
    let filtered = filter_pairs(&matrix, &concept_attestation(records), params);

    let mut keep = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    for (j, id) in filtered.characters.iter().enumerate() {
        let (a, b) = split_id(id).expect("ids built from pairs");
        match inputs.scores(&ConceptPair::new(a, b)) {
            [Some(x), Some(y), Some(z)] => {
                keep.push(j);
                values.push(vec![x, y, z]);
            }
            _ => dropped.push(id.clone()),
        }
    }
    let final_matrix = filtered.select_characters(&keep);
    let mut predictors = PredictorTable::new(
        final_matrix.characters.clone(),
        DEFAULT_PREDICTORS.iter().map(|s| s.to_string()).collect(),
        values,
    )?;
    predictors.counts = Some((0..final_matrix.n_characters()).map(|j| final_matrix.count_present(j) as u64).collect());
    let report = IngestReport {
        languages: matrix.n_taxa(),
        candidate_pairs: matrix.n_characters(),
        after_filters: filtered.n_characters(),
        with_all_predictors: final_matrix.n_characters(),
        dropped_missing_predictors: dropped,
    };
    Ok(IngestOutput { matrix: final_matrix, predictors, report })
}
