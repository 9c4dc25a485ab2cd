//! Tabular inputs shared by the model, the baseline and the ingestion
//! pipeline: the taxa x characters trait matrix and the per-character
//! predictor table, with their CSV formats.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::{TipStates, TraitState};

pub const DEFAULT_PREDICTORS: [&str; 3] = ["assoc", "freq", "borrow"];

/// Taxa x characters, each cell 0, 1 or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitMatrix {
    pub taxa: Vec<String>,
    pub characters: Vec<String>,
    /// `cells[taxon][character]`
    pub cells: Vec<Vec<TraitState>>,
}

impl TraitMatrix {
    pub fn new(taxa: Vec<String>, characters: Vec<String>, cells: Vec<Vec<TraitState>>) -> Result<Self> {
        if cells.len() != taxa.len() {
            return Err(Error::Dimension { expected: taxa.len(), actual: cells.len(), context: "trait matrix rows" });
        }
        if let Some(row) = cells.iter().find(|r| r.len() != characters.len()) {
            return Err(Error::Dimension {
                expected: characters.len(),
                actual: row.len(),
                context: "trait matrix columns",
            });
        }
        let mut seen = HashMap::new();
        for t in &taxa {
            if seen.insert(t.as_str(), ()).is_some() {
                return Err(Error::DuplicateLabel(t.clone()));
            }
        }
        Ok(TraitMatrix { taxa, characters, cells })
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_characters(&self) -> usize {
        self.characters.len()
    }

    pub fn column(&self, j: usize) -> Vec<TraitState> {
        self.cells.iter().map(|row| row[j]).collect()
    }

    pub fn character_index(&self, id: &str) -> Option<usize> {
        self.characters.iter().position(|c| c == id)
    }

    pub fn tip_states(&self, j: usize) -> TipStates {
        TipStates {
            character: self.characters[j].clone(),
            states: self.taxa.iter().cloned().zip(self.column(j)).collect(),
        }
    }

    /// Number of taxa in state 1 for character `j`.
    pub fn count_present(&self, j: usize) -> usize {
        self.cells.iter().filter(|row| row[j] == TraitState::Present).count()
    }

    pub fn count_observed(&self, j: usize) -> usize {
        self.cells.iter().filter(|row| !row[j].is_missing()).count()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_characters(&self, keep: &[usize]) -> TraitMatrix {
        TraitMatrix {
            taxa: self.taxa.clone(),
            characters: keep.iter().map(|&j| self.characters[j].clone()).collect(),
            cells: self.cells.iter().map(|row| keep.iter().map(|&j| row[j]).collect()).collect(),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("taxon") {
            return Err(Error::parse(source, "first column must be `taxon`"));
        }
        let characters: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut taxa = Vec::new();
        let mut cells = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            taxa.push(rec.get(0).unwrap_or_default().to_owned());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    TraitState::parse(cell)
                        .ok_or_else(|| Error::parse(source, format!("row {}: bad cell `{cell}`", line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(row);
        }
        TraitMatrix::new(taxa, characters, cells)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["taxon".to_owned()];
        header.extend(self.characters.iter().cloned());
        w.write_record(&header)?;
        for (taxon, row) in self.taxa.iter().zip(&self.cells) {
            let mut rec = vec![taxon.clone()];
            rec.extend(row.iter().map(ToString::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Per-character predictor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    /// `values[character][predictor]`
    pub values: Vec<Vec<f64>>,
    /// Optional `count` column used by the negative binomial baseline.
    pub counts: Option<Vec<u64>>,
}

/// Location and scale removed from one predictor column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl PredictorTable {
    pub fn new(ids: Vec<String>, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != ids.len() {
            return Err(Error::Dimension { expected: ids.len(), actual: values.len(), context: "predictor rows" });
        }
        for row in &values {
            if row.len() != names.len() {
                return Err(Error::Dimension { expected: names.len(), actual: row.len(), context: "predictor columns" });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Alignment("predictor values must be finite".into()));
            }
        }
        Ok(PredictorTable { ids, names, values, counts: None })
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.values[i].as_slice())
    }

    /// z-scores every column (sample standard deviation). Constant columns
    /// are only centred.
    pub fn standardized(&self) -> (PredictorTable, Vec<Standardization>) {
        let n = self.values.len() as f64;
        let mut transforms = Vec::with_capacity(self.names.len());
        let mut out = self.clone();
        for k in 0..self.names.len() {
            let mean = self.values.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = self.values.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for row in &mut out.values {
                row[k] = (row[k] - mean) / sd;
            }
            transforms.push(Standardization { mean, sd });
        }
        (out, transforms)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Header `pair_id,<predictor...>[,count]`.
    pub fn from_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("pair_id") {
            return Err(Error::parse(source, "first column must be `pair_id`"));
        }
        let count_col = headers.iter().position(|h| h == "count");
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(i, _)| Some(*i) != count_col)
            .map(|(_, h)| h.to_owned())
            .collect();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut counts = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_owned());
            let mut row = Vec::with_capacity(names.len());
            for (i, cell) in rec.iter().enumerate().skip(1) {
                let bad = || Error::parse(source, format!("row {}: bad value `{cell}`", line + 2));
                if Some(i) == count_col {
                    counts.push(cell.parse::<u64>().map_err(|_| bad())?);
                } else {
                    row.push(cell.parse::<f64>().map_err(|_| bad())?);
                }
            }
            values.push(row);
        }
        let mut table = PredictorTable::new(ids, names, values)?;
        if count_col.is_some() {
            table.counts = Some(counts);
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["pair_id".to_owned()];
        header.extend(self.names.iter().cloned());
        if self.counts.is_some() {
            header.push("count".into());
        }
        w.write_record(&header)?;
        for (i, (id, row)) in self.ids.iter().zip(&self.values).enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            if let Some(c) = &self.counts {
                rec.push(c[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Pairs trait-matrix columns with predictor rows by identifier, in matrix
/// column order.
pub fn align_predictors(matrix: &TraitMatrix, predictors: &PredictorTable) -> Result<Vec<Vec<f64>>> {
    let by_id: BTreeMap<&str, &[f64]> = predictors
        .ids
        .iter()
        .map(String::as_str)
        .zip(predictors.values.iter().map(Vec::as_slice))
        .collect();
    if by_id.len() != matrix.n_characters() {
        return Err(Error::Alignment(format!(
            "{} predictor rows for {} trait columns",
            by_id.len(),
            matrix.n_characters()
        )));
    }
    matrix
        .characters
        .iter()
        .map(|c| {
            by_id
                .get(c.as_str())
                .map(|r| r.to_vec())
                .ok_or_else(|| Error::Alignment(format!("no predictors for character `{c}`")))
        })
        .collect()
}
