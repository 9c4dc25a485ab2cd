use std::path::{Path, PathBuf};
use std::process::ExitCode;

use colexphylo::data::{align_predictors, PredictorTable, TraitMatrix};
use colexphylo::ingest::{
    ingest, parse_blocklist, read_pairs, read_wordlist, AssociationScores, BorrowabilityTable, ConceptForms,
    FilterParams, FrequencyTable, PredictorInputs, DEFAULT_BLOCKLIST,
};
use colexphylo::model::{FamilyData, ModelSpec, Variant};
use colexphylo::negbin::{fit_negbin, report, CountDataset, NegBinOptions};
use colexphylo::sampler::{max_rhat, run_family, summarize, ParamSummary, PosteriorDraws, SamplerConfig};
use colexphylo::selection::{compare, psis_loo, write_comparison_csv, PointwiseMatrix};
use colexphylo::simval::{run_study_with, SizeLabel, RHAT_FAIL};
use colexphylo::trees::TreeSample;
use serde::Serialize;
use serde_json::json;

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, create_file, write_json, Manifest};
use crate::{Cli, Command, CompareArgs, FitArgs, IngestArgs, NegbinArgs, SamplerArgs, SummaryArgs, ValidateArgs};

const CONVERGENCE_WARNING: u8 = 3;

const SAMPLER_KEYS: [&str; 7] =
    ["chains", "iterations", "warmup_fraction", "target_accept", "max_depth", "init_radius", "full_scale"];

pub fn run(cli: Cli) -> CliResult<ExitCode> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    if let Some(n) = cfg.pick(cli.jobs, "jobs")? {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&cfg, a),
        Command::Fit(a) => cmd_fit(&cfg, a),
        Command::Compare(a) => cmd_compare(&cfg, a),
        Command::Validate(a) => cmd_validate(&cfg, a),
        Command::Negbin(a) => cmd_negbin(&cfg, a),
        Command::Summary(a) => cmd_summary(&cfg, a),
    }
}

fn known_keys(specific: &[&'static str], sampler: bool) -> Vec<&'static str> {
    let mut keys = vec!["jobs"];
    keys.extend_from_slice(specific);
    if sampler {
        keys.extend_from_slice(&SAMPLER_KEYS);
    }
    keys
}

fn require_seed(cfg: &ConfigFile, flag: Option<u64>) -> CliResult<u64> {
    cfg.pick(flag, "seed")?.ok_or_else(|| CliError::Usage("`--seed` is required (or config key `seed`)".into()))
}

fn sampler_config(cfg: &ConfigFile, a: &SamplerArgs, seed: u64) -> CliResult<SamplerConfig> {
    let full = cfg.switch(a.full_scale, "full_scale")?;
    let mut sc = SamplerConfig { n_iterations: if full { 4000 } else { 1000 }, ..SamplerConfig::with_seed(seed) };
    if let Some(v) = cfg.pick(a.chains, "chains")? {
        sc.n_chains = v;
    }
    if let Some(v) = cfg.pick(a.iterations, "iterations")? {
        sc.n_iterations = v;
    }
    if let Some(v) = cfg.pick(a.warmup_fraction, "warmup_fraction")? {
        sc.warmup_fraction = v;
    }
    if let Some(v) = cfg.pick(a.target_accept, "target_accept")? {
        sc.target_accept = v;
    }
    if let Some(v) = cfg.pick(a.max_depth, "max_depth")? {
        sc.max_depth = v;
    }
    if let Some(v) = cfg.pick(a.init_radius, "init_radius")? {
        sc.init_radius = v;
    }
    sc.validate()?;
    Ok(sc)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_ingest(cfg: &ConfigFile, a: IngestArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(
        &[
            "wordlist",
            "pairs",
            "concept_forms",
            "associations",
            "frequencies",
            "borrowability",
            "resource_langs",
            "min_colex",
            "min_attested",
            "blocklist",
            "out",
        ],
        false,
    ));
    let wordlist = cfg.input_path(a.wordlist, "wordlist")?;
    let pairs_path = cfg.optional_input(a.pairs, "pairs")?;
    let forms_path = cfg.input_path(a.concept_forms, "concept_forms")?;
    let assoc_path = cfg.input_path(a.associations, "associations")?;
    let freq_path = cfg.input_path(a.frequencies, "frequencies")?;
    let borrow_path = cfg.input_path(a.borrowability, "borrowability")?;
    let blocklist_path = cfg.optional_input(a.blocklist, "blocklist")?;
    let out = cfg.required_path(a.out, "out")?;
    let resource_langs: Vec<String> = cfg.pick(a.resource_langs, "resource_langs")?.unwrap_or_default();

    let blocklist = match &blocklist_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|source| colexphylo::Error::Io { path: p.clone(), source })?;
            parse_blocklist(&text)
        }
        None => parse_blocklist(DEFAULT_BLOCKLIST),
    };
    let defaults = FilterParams::default();
    let params = FilterParams {
        min_colex: cfg.pick(a.min_colex, "min_colex")?.unwrap_or(defaults.min_colex),
        min_attested: cfg.pick(a.min_attested, "min_attested")?.unwrap_or(defaults.min_attested),
        blocklist,
    };

    let records = read_wordlist(&wordlist)?;
    let pairs = pairs_path.as_deref().map(read_pairs).transpose()?;
    let inputs = PredictorInputs {
        forms: ConceptForms::read(&forms_path)?,
        associations: AssociationScores::read(&assoc_path)?,
        frequencies: FrequencyTable::read(&freq_path)?,
        borrowability: BorrowabilityTable::read(&borrow_path)?,
        resource_langs: resource_langs.clone(),
    };
    let result = ingest(&records, pairs.as_deref(), &params, &inputs)?;

    create_dir(&out)?;
    let mut manifest = Manifest::new(
        "ingest",
        None,
        cfg.source(),
        json!({
            "min_colex": params.min_colex,
            "min_attested": params.min_attested,
            "blocklist": params.blocklist,
            "resource_langs": if resource_langs.is_empty() { inputs.forms.languages() } else { resource_langs },
        }),
    );
    manifest.input("wordlist", &wordlist);
    if let Some(p) = &pairs_path {
        manifest.input("pairs", p);
    }
    manifest.input("concept_forms", &forms_path);
    manifest.input("associations", &assoc_path);
    manifest.input("frequencies", &freq_path);
    manifest.input("borrowability", &borrow_path);
    if let Some(p) = &blocklist_path {
        manifest.input("blocklist", p);
    }

    let traits_path = out.join("traits.csv");
    result.matrix.write_csv(create_file(&traits_path)?)?;
    manifest.output(&traits_path);
    let predictors_path = out.join("predictors.csv");
    result.predictors.write_csv(create_file(&predictors_path)?)?;
    manifest.output(&predictors_path);
    if !result.report.dropped_missing_predictors.is_empty() {
        manifest.warn(format!(
            "{} pairs dropped for lacking a predictor score",
            result.report.dropped_missing_predictors.len()
        ));
    }
    manifest.results = serde_json::to_value(&result.report).map_err(colexphylo::Error::from)?;
    manifest.write(&out)?;

    let r = &result.report;
    println!(
        "languages {}  candidate pairs {}  after filters {}  with all predictors {}",
        r.languages, r.candidate_pairs, r.after_filters, r.with_all_predictors
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TransformRecord<'a> {
    predictor: &'a str,
    mean: f64,
    sd: f64,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    variant: Variant,
    predictors: &'a [String],
    trees: Vec<usize>,
    chains: usize,
    retained_per_chain: usize,
    draws: usize,
    divergent: usize,
    max_depth_hits: usize,
    max_rhat: f64,
    converged: bool,
    standardization: Option<Vec<TransformRecord<'a>>>,
    parameters: &'a [ParamSummary],
}

fn cmd_fit(cfg: &ConfigFile, a: FitArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(
        &["trees", "traits", "predictors", "variant", "seed", "tree_indices", "max_trees", "standardize", "out"],
        true,
    ));
    let trees_path = cfg.input_path(a.trees, "trees")?;
    let traits_path = cfg.input_path(a.traits, "traits")?;
    let predictors_path = cfg.input_path(a.predictors, "predictors")?;
    let out = cfg.required_path(a.out, "out")?;
    let seed = require_seed(cfg, a.seed)?;
    let variant: Variant = cfg.pick(a.variant, "variant")?.unwrap_or_else(|| "full".to_owned()).parse()?;
    let mut sampler = sampler_config(cfg, &a.sampler, seed)?;
    let standardize = cfg.switch(a.standardize, "standardize")?;

    let sample = TreeSample::<f64>::read(&trees_path)?;
    sampler.trees = match (cfg.pick(a.tree_indices, "tree_indices")?, cfg.pick(a.max_trees, "max_trees")?) {
        (Some(ix), _) => Some(ix),
        (None, Some(n)) => Some((0..n.min(sample.len())).collect()),
        (None, None) => None,
    };
    let matrix = TraitMatrix::read_csv(&traits_path)?;
    let raw = PredictorTable::read_csv(&predictors_path)?;
    let (predictors, transforms) = if standardize {
        let (t, tr) = raw.standardized();
        (t, Some(tr))
    } else {
        (raw, None)
    };
    let spec = ModelSpec::new(variant, predictors.names.clone());
    let per_tree = sample
        .trees
        .iter()
        .map(|t| FamilyData::new(t, &matrix, &predictors))
        .collect::<Result<Vec<_>, _>>()?;
    let used: Vec<usize> = sampler.trees.clone().unwrap_or_else(|| (0..per_tree.len()).collect());
    log::info!(
        "fitting {variant} model: {} characters, {} taxa, {} trees x {} chains x {} iterations",
        matrix.n_characters(),
        matrix.n_taxa(),
        used.len(),
        sampler.n_chains,
        sampler.n_iterations
    );

    let draws = run_family(&spec, &per_tree, &sampler)?;
    let summary = summarize(&draws)?;
    let worst = max_rhat(&summary);
    let converged = worst <= RHAT_FAIL;
    let pointwise = colexphylo::selection::pointwise_from_draws(variant.as_str(), &spec, &per_tree, &draws)?;

    create_dir(&out)?;
    let mut manifest = Manifest::new(
        "fit",
        Some(seed),
        cfg.source(),
        json!({
            "variant": variant,
            "sampler": sampler,
            "standardize": standardize,
            "free_parameters": spec.dim(),
        }),
    );
    manifest.input("trees", &trees_path);
    manifest.input("traits", &traits_path);
    manifest.input("predictors", &predictors_path);

    let draws_path = out.join("draws.csv");
    draws.save(&draws_path)?;
    manifest.output(&draws_path);
    let pointwise_path = out.join("pointwise.csv");
    pointwise.save(&pointwise_path)?;
    manifest.output(&pointwise_path);

    let fit_summary = FitSummary {
        variant,
        predictors: &predictors.names,
        trees: used,
        chains: sampler.n_chains,
        retained_per_chain: sampler.n_retained(),
        draws: draws.len(),
        divergent: draws.n_divergent(),
        max_depth_hits: draws.max_depth_hits,
        max_rhat: worst,
        converged,
        standardization: transforms.as_ref().map(|tr| {
            predictors
                .names
                .iter()
                .zip(tr)
                .map(|(n, t)| TransformRecord { predictor: n, mean: t.mean, sd: t.sd })
                .collect()
        }),
        parameters: &summary,
    };
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &fit_summary)?;
    manifest.output(&summary_path);
    if draws.n_divergent() > 0 {
        manifest.warn(format!("{} divergent transitions", draws.n_divergent()));
    }
    if !converged {
        manifest.warn(format!("maximum R-hat {worst:.3} exceeds {RHAT_FAIL}"));
    }
    manifest.results = json!({ "draws": draws.len(), "max_rhat": worst, "converged": converged });
    manifest.write(&out)?;

    print_summary(&summary);
    if let Some(tr) = &transforms {
        for (n, t) in predictors.names.iter().zip(tr) {
            println!("standardized {n}: (x - {:.6}) / {:.6}", t.mean, t.sd);
        }
    }
    Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(CONVERGENCE_WARNING) })
}

fn print_summary(summary: &[ParamSummary]) {
    println!("{:<24} {:>10} {:>10} {:>10} {:>8} {:>9}", "param", "median", "2.5%", "97.5%", "R-hat", "ESS");
    for s in summary {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>8.4} {:>9.1}",
            s.param, s.median, s.eti_low, s.eti_high, s.rhat, s.ess
        );
    }
}

/// `NAME=PATH`, or a bare path named after its file stem (or its directory
/// when the stem is `pointwise`).
fn parse_pointwise_arg(arg: &str) -> (String, PathBuf) {
    if let Some((name, path)) = arg.split_once('=') {
        return (name.to_owned(), PathBuf::from(path));
    }
    let path = PathBuf::from(arg);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = if stem == "pointwise" {
        path.parent()
            .and_then(|d| d.file_name())
            .map(|d| d.to_string_lossy().into_owned())
            .unwrap_or(stem)
    } else {
        stem
    };
    (name, path)
}

fn cmd_compare(cfg: &ConfigFile, a: CompareArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(&["pointwise", "out"], false));
    let args = if a.pointwise.is_empty() { cfg.pick::<Vec<String>>(None, "pointwise")?.unwrap_or_default() } else { a.pointwise };
    if args.len() < 2 {
        return Err(CliError::Usage("compare needs at least two `--pointwise` files".into()));
    }
    let out = cfg.required_path(a.out, "out")?;
    let mut manifest = Manifest::new("compare", None, cfg.source(), json!({ "pointwise": args }));
    let mut loos = Vec::with_capacity(args.len());
    for arg in &args {
        let (name, path) = parse_pointwise_arg(arg);
        if !path.exists() {
            return Err(CliError::MissingInput(path));
        }
        if loos.iter().any(|l: &colexphylo::selection::LooResult| l.model == name) {
            return Err(CliError::Usage(format!("model name `{name}` given twice; use NAME=PATH")));
        }
        let pw = PointwiseMatrix::read_csv(&path, name.clone())?;
        manifest.input(&name, &path);
        loos.push(psis_loo(&pw)?);
    }
    let rows = compare(&loos)?;

    create_dir(&out)?;
    let table_path = out.join("comparison.csv");
    write_comparison_csv(&rows, create_file(&table_path)?)?;
    manifest.output(&table_path);
    let loo_path = out.join("loo.json");
    let reports: Vec<_> = loos
        .iter()
        .map(|l| json!({ "model": l.model, "elpd": l.elpd_loo, "se": l.se, "p_loo": l.p_loo, "lppd": l.lppd, "n_high_k": l.n_high_k() }))
        .collect();
    write_json(&loo_path, &reports)?;
    manifest.output(&loo_path);
    for l in loos.iter().filter(|l| l.n_high_k() > 0) {
        manifest.warn(format!("{}: {} observations with Pareto k > 0.7", l.model, l.n_high_k()));
    }
    manifest.results = serde_json::to_value(&rows).map_err(colexphylo::Error::from)?;
    manifest.write(&out)?;

    println!("{:<20} {:>12} {:>10} {:>20} {:>8}", "model", "elpd", "se", "diff (se)", "k>0.7");
    for r in &rows {
        println!("{:<20} {:>12.2} {:>10.2} {:>20} {:>8}", r.model, r.elpd, r.se, r.formatted(), r.n_high_k);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(cfg: &ConfigFile, a: ValidateArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(&["seed", "sizes", "n_seeds", "out"], true));
    let seed = require_seed(cfg, a.seed)?;
    let out = cfg.required_path(a.out, "out")?;
    let sizes: Vec<SizeLabel> = cfg
        .pick(a.sizes, "sizes")?
        .unwrap_or_else(|| vec!["SMALL".to_owned()])
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let n_seeds = cfg.pick(a.n_seeds, "n_seeds")?.unwrap_or(10);
    let sampler = sampler_config(cfg, &a.sampler, seed)?;
    if sampler.n_chains != 1 {
        log::info!("validation fits use a single chain; ignoring chains = {}", sampler.n_chains);
    }
    log::info!("validation: {} sizes x {n_seeds} seeds x 4 patterns, {} iterations", sizes.len(), sampler.n_iterations);
    let study = run_study_with(&sizes, n_seeds, seed, &sampler, true)?;

    create_dir(&out)?;
    let mut manifest = Manifest::new(
        "validate",
        Some(seed),
        cfg.source(),
        json!({ "sizes": sizes, "n_seeds": n_seeds, "iterations": sampler.n_iterations, "warmup_fraction": sampler.warmup_fraction, "target_accept": sampler.target_accept, "max_depth": sampler.max_depth }),
    );
    let draws_dir = out.join("draws");
    create_dir(&draws_dir)?;
    for (run, draws) in study.runs.iter().zip(&study.draws) {
        if let Some(d) = draws {
            let p = draws_dir.join(format!("{}.csv", run.label()));
            d.save(&p)?;
            manifest.output(&p);
        }
    }
    let table_path = out.join("study.csv");
    study.write_table_csv(create_file(&table_path)?)?;
    manifest.output(&table_path);
    let runs_path = out.join("runs.json");
    write_json(&runs_path, &study.runs)?;
    manifest.output(&runs_path);

    for run in study.runs.iter().filter(|r| r.failed()) {
        manifest.warn(format!("{} excluded: {}", run.label(), run.failure.as_deref().unwrap_or("")));
    }
    let sign_errors: usize = study.table.iter().map(|r| r.se).sum();
    if sign_errors > 0 {
        manifest.warn(format!("{sign_errors} sign errors; none are expected"));
    }
    manifest.results = serde_json::to_value(&study.table).map_err(colexphylo::Error::from)?;
    manifest.write(&out)?;

    println!("{:<6} {:<7} {:>4} {:>4} {:>4} {:>4} {:>7}", "param", "size", "T", "FP", "FN", "SE", "failed");
    for r in &study.table {
        println!("{:<6} {:<7} {:>4} {:>4} {:>4} {:>4} {:>7}", r.param, r.size, r.t, r.fp, r.fn_, r.se, r.failed);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_negbin(cfg: &ConfigFile, a: NegbinArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(&["traits", "predictors", "intercept_only", "fixed_theta", "out"], false));
    let traits_path = cfg.input_path(a.traits, "traits")?;
    let predictors_path = cfg.input_path(a.predictors, "predictors")?;
    let out = cfg.required_path(a.out, "out")?;
    let intercept_only = cfg.switch(a.intercept_only, "intercept_only")?;
    let fixed_theta = cfg.pick(a.fixed_theta, "fixed_theta")?;

    let matrix = TraitMatrix::read_csv(&traits_path)?;
    let predictors = PredictorTable::read_csv(&predictors_path)?;
    let rows = align_predictors(&matrix, &predictors)?;
    let counts: Vec<u64> = (0..matrix.n_characters()).map(|j| matrix.count_present(j) as u64).collect();

    let mut manifest = Manifest::new(
        "negbin",
        None,
        cfg.source(),
        json!({ "intercept_only": intercept_only, "fixed_theta": fixed_theta }),
    );
    manifest.input("traits", &traits_path);
    manifest.input("predictors", &predictors_path);
    if let Some(file_counts) = &predictors.counts {
        for (j, id) in matrix.characters.iter().enumerate() {
            let i = predictors.ids.iter().position(|x| x == id).expect("aligned above");
            if file_counts[i] != counts[j] {
                manifest.warn(format!("{id}: predictor file count {} differs from matrix count {}", file_counts[i], counts[j]));
            }
        }
    }
    let (names, x) = if intercept_only {
        (Vec::new(), vec![Vec::new(); rows.len()])
    } else {
        (predictors.names.clone(), rows)
    };
    let data = CountDataset::new(matrix.characters.clone(), names, x, counts)?;
    let fit = fit_negbin(&data, &NegBinOptions { fixed_theta, ..NegBinOptions::default() })?;
    let rep = report(&fit)?;

    create_dir(&out)?;
    let report_path = out.join("negbin.json");
    write_json(&report_path, &rep)?;
    manifest.output(&report_path);
    if !fit.converged {
        manifest.warn(format!("negative binomial fit did not converge in {} outer iterations", fit.outer_iterations));
    }
    manifest.results = json!({ "log_lik": fit.log_lik, "aic": fit.aic, "theta": fit.theta, "converged": fit.converged });
    manifest.write(&out)?;

    println!("{:<16} {:>10} {:>10} {:>8} {:>10}", "term", "estimate", "se", "z", "p");
    for w in &rep.coefficients {
        println!("{:<16} {:>10.4} {:>10.4} {:>8.3} {:>10.4} {}", w.name, w.estimate, w.se, w.z, w.p, w.stars);
    }
    println!("theta {:.4} ({:.4})  logLik {:.3}  AIC {:.3}  N {}", rep.theta, rep.theta_se, rep.log_lik, rep.aic, rep.observations);
    println!("* p<0.1; ** p<0.05; *** p<0.01");
    Ok(if fit.converged { ExitCode::SUCCESS } else { ExitCode::from(CONVERGENCE_WARNING) })
}

fn cmd_summary(cfg: &ConfigFile, a: SummaryArgs) -> CliResult<ExitCode> {
    cfg.warn_unknown(&known_keys(&["draws", "out"], false));
    let draws_path = cfg.input_path(a.draws, "draws")?;
    let out = cfg.required_path(a.out, "out")?;
    let draws = PosteriorDraws::read_csv(&draws_path)?;
    let summary = summarize(&draws)?;
    let worst = max_rhat(&summary);

    create_dir(&out)?;
    let mut manifest = Manifest::new("summary", None, cfg.source(), json!({}));
    manifest.input("draws", &draws_path);
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    manifest.output(&summary_path);
    manifest.results = json!({ "draws": draws.len(), "max_rhat": worst, "divergent": draws.n_divergent() });
    manifest.write(&out)?;

    print_summary(&summary);
    println!("{} draws, {} divergent, max R-hat {:.4} ({})", draws.len(), draws.n_divergent(), worst, path_str(&draws_path));
    Ok(if worst <= RHAT_FAIL { ExitCode::SUCCESS } else { ExitCode::from(CONVERGENCE_WARNING) })
}
