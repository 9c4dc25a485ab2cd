#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colexphylo::data::PredictorTable;
use colexphylo::simval::{generate_synthetic, SimSetting, SizeLabel};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_colexphylo"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ingest").join(name)
}

pub struct DataFiles {
    pub trees: PathBuf,
    pub traits: PathBuf,
    pub predictors: PathBuf,
}

/// Writes a synthetic dataset: `n_trees` copies of the simulated tree, the
/// trait matrix and a predictor table with `x` plus `extra` noise columns.
pub fn write_synthetic(dir: &Path, setting: &SimSetting, n_trees: usize, extra: usize) -> DataFiles {
    let syn = generate_synthetic(setting).unwrap();
    let trees = dir.join("trees.nwk");
    std::fs::write(&trees, vec![syn.tree.to_newick(); n_trees].join("\n")).unwrap();
    let traits = dir.join("traits.csv");
    syn.matrix.write_csv(std::fs::File::create(&traits).unwrap()).unwrap();
    let mut names = syn.predictors.names.clone();
    let mut values = syn.predictors.values.clone();
    for e in 0..extra {
        names.push(format!("noise{e}"));
        for (i, row) in values.iter_mut().enumerate() {
            row.push(((i * 7919 + e * 104729) % 1000) as f64 / 500.0 - 1.0);
        }
    }
    let table = PredictorTable::new(syn.predictors.ids.clone(), names, values).unwrap();
    let predictors = dir.join("predictors.csv");
    table.write_csv(std::fs::File::create(&predictors).unwrap()).unwrap();
    DataFiles { trees, traits, predictors }
}

pub fn small(seed: u64) -> SimSetting {
    SimSetting::new(SizeLabel::Small, true, true, seed)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
