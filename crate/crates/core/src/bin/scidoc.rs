//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 failed cell
//! (training, evaluation, or gradient check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use scidoc::eval::{kfold_split_by_paper, render_table, TableRow};
use scidoc::experiment::{
    evaluate, gradcheck_method, run_experiment, run_manifest, run_perturb_study, split_dev, train_method, write_experiment, write_json,
    write_text, Classifier, ExperimentConfig, GradcheckConfig, Method, MethodConfig, PerturbStudyConfig, TimingConfig,
};
use scidoc::grouping::{detect_groups, GroupingConfig};
use scidoc::hierarchical::{choose_truncation, HierConfig};
use scidoc::indicator::dump_windows_jsonl;
use scidoc::io::{load_pages, save_pages};
use scidoc::nn::ModelConfig;
use scidoc::synth::{corpus_stats, generate_corpus, CorpusConfig};
use scidoc::train::TrainHyper;
use scidoc::{Dataset, Error, GroupKind, LabelSet};

/// Every setting of every command, as one TOML file. Missing sections take
/// their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    corpus: CorpusConfig,
    grouping: GroupingConfig,
    model: ModelConfig,
    hier: HierConfig,
    train: TrainHyper,
    experiment: ExperimentConfig,
    perturb: PerturbStudyConfig,
    gradcheck: GradcheckConfig,
}

impl RunConfig {
    fn method(&self) -> MethodConfig {
        MethodConfig { model: self.model.clone(), hier: self.hier.clone(), train: self.train.clone() }
    }

    fn labels(&self) -> Result<LabelSet, Error> {
        LabelSet::builtin(&self.corpus.label_set)
    }
}

#[derive(Parser)]
#[command(name = "scidoc", version, about = "Layout-group aware token classification for scientific pages")]
struct Cli {
    /// TOML run configuration; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of the command (corpus, model and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and print its statistics.
    GenCorpus {
        #[command(flatten)]
        out: OutArgs,
    },
    /// Replace stored lines and blocks with detected ones.
    GroupDetect {
        /// Input pages (JSONL).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Dump the model inputs of a method: windows for token-level methods,
    /// truncation statistics for group-level ones.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "indicator-block")]
        method: Method,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train one method and write its checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "indicator-block")]
        method: Method,
        /// Train on the other folds of this fold; all pages when omitted.
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Evaluate only the test pages of this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Replace gold groups with detected ones before inference.
        #[arg(long)]
        detected_groups: bool,
        /// Also measure inference time.
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the method x fold x seed grid and write the merged table.
    Experiment {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare models and the group-uniform oracle under gold, detected and
    /// perturbed groups.
    PerturbStudy {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value = "indicator-block")]
        method: Method,
    },
}

enum Failure {
    Error(Error),
    Cells(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 1,
        Error::Diverged { .. } | Error::Model(_) | Error::SequenceTooLong { .. } => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
            toml::from_str(&text).map_err(|e| Error::Config { field: p.display().to_string(), reason: e.to_string() })?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.corpus.seed = s;
        cfg.model.seed = s;
        cfg.train.seed = s;
        cfg.experiment.seeds = vec![s];
        cfg.perturb.seed = s;
        cfg.gradcheck.seed = s;
    }
    Ok(cfg)
}

/// Create the output directory, refusing to reuse files unless forced.
fn prepare_out(out: &OutArgs, files: &[&str]) -> Result<(), Error> {
    fs::create_dir_all(&out.out).map_err(|e| Error::Io { path: out.out.clone(), source: e })?;
    if !out.force {
        if let Some(f) = files.iter().map(|f| out.out.join(f)).find(|p| p.exists()) {
            return Err(Error::Config { field: "out".into(), reason: format!("{} exists; pass --force to overwrite", f.display()) });
        }
    }
    Ok(())
}

fn write_resolved(out: &Path, cfg: &RunConfig, command: &str, seed: Option<u64>) -> Result<(), Error> {
    let text = toml::to_string(cfg).map_err(|e| Error::Input(format!("serializing config: {e}")))?;
    write_text(&out.join("config.toml"), &text)?;
    write_json(&out.join("run.json"), &run_manifest(command, seed))
}

fn fold_subsets(ds: &Dataset, cfg: &RunConfig, fold: Option<usize>) -> Result<(Dataset, Dataset, Dataset), Error> {
    let Some(f) = fold else {
        return Ok((ds.clone(), Dataset::new(ds.labels.clone(), Vec::new()), ds.clone()));
    };
    let folds = kfold_split_by_paper(ds, cfg.experiment.folds, cfg.experiment.split_seed)?;
    let fold = folds.get(f).ok_or_else(|| Error::Config { field: "fold".into(), reason: format!("must be below {}", folds.len()) })?;
    let (train, dev) = split_dev(ds, &fold.train, cfg.experiment.dev_fraction, cfg.train.seed);
    Ok((ds.subset(&train), ds.subset(&dev), ds.subset(&fold.test)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::GenCorpus { out } => {
            prepare_out(&out, &["corpus.jsonl"])?;
            let ds = generate_corpus(&cfg.corpus)?;
            save_pages(&ds, &out.out.join("corpus.jsonl"))?;
            let stats = corpus_stats(&ds);
            print!("{stats}");
            write_text(&out.out.join("stats.txt"), &stats.to_string())?;
            write_resolved(&out.out, &cfg, "gen-corpus", Some(cfg.corpus.seed))?;
        }
        Command::GroupDetect { input, out } => {
            prepare_out(&out, &["corpus.jsonl"])?;
            cfg.grouping.validate()?;
            let ds = load_pages(&input, &cfg.labels()?)?;
            let mut pages = Vec::with_capacity(ds.pages.len());
            let (mut agree, mut total) = (0, 0);
            for page in &ds.pages {
                let detected = detect_groups(page, &cfg.grouping);
                for kind in [GroupKind::Line, GroupKind::Block] {
                    for g in page.groups(kind) {
                        total += 1;
                        agree += usize::from(detected.groups(kind).iter().any(|d| d.token_indices == g.token_indices));
                    }
                }
                pages.push(detected);
            }
            let ds = Dataset::new(ds.labels.clone(), pages);
            save_pages(&ds, &out.out.join("corpus.jsonl"))?;
            println!("stored groups recovered exactly: {agree}/{total}");
            write_resolved(&out.out, &cfg, "group-detect", None)?;
        }
        Command::Prepare { input, method, out } => {
            prepare_out(&out, &["windows.jsonl", "truncation.json"])?;
            let ds = load_pages(&input, &cfg.labels()?)?;
            match method {
                Method::Hierarchical(kind) | Method::SimpleGroup(kind) => {
                    let stats = choose_truncation(&ds, kind, cfg.model.max_seq_len)?;
                    println!("n_tilde {} (mean tokens per group {:.2})", stats.n_tilde, stats.mean_tokens_per_group);
                    write_json(&out.out.join("truncation.json"), &serde_json::to_value(&stats).map_err(Error::from)?)?;
                }
                m => {
                    let vocab = scidoc::vocab::Vocab::build(&ds, 1);
                    let path = out.out.join("windows.jsonl");
                    let file = fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    let mut w = std::io::BufWriter::new(file);
                    let mut n = 0;
                    for page in &ds.pages {
                        let windows = scidoc::indicator::build_windows(page, m.window_mode().unwrap(), &vocab, cfg.model.max_seq_len)?;
                        n += windows.len();
                        dump_windows_jsonl(&mut w, &windows, &vocab).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    }
                    println!("{n} windows from {} pages", ds.pages.len());
                }
            }
            write_resolved(&out.out, &cfg, "prepare", None)?;
        }
        Command::Train { input, method, fold, out } => {
            prepare_out(&out, &["model.ckpt"])?;
            let ds = load_pages(&input, &cfg.labels()?)?;
            let (train, dev, _) = fold_subsets(&ds, &cfg, fold)?;
            let dev = (!dev.pages.is_empty()).then_some(&dev);
            let (clf, log) = train_method(method, &train, dev, &cfg.method())?;
            clf.save(&out.out.join("model.ckpt"))?;
            write_json(&out.out.join("train_log.json"), &serde_json::to_value(&log).map_err(Error::from)?)?;
            if let Some(last) = log.epochs.last() {
                println!("{method}: {} epochs, final loss {:.4}, best epoch {:?}", log.epochs.len(), last.mean_loss, log.best_epoch);
            }
            write_resolved(&out.out, &cfg, "train", Some(cfg.train.seed))?;
        }
        Command::Eval { input, model, fold, detected_groups, timing, out } => {
            prepare_out(&out, &["report.json"])?;
            let clf = Classifier::load(&model)?;
            let ds = load_pages(&input, clf.labels())?;
            let (_, _, mut test) = fold_subsets(&ds, &cfg, fold)?;
            if detected_groups {
                test = Dataset::new(test.labels.clone(), test.pages.iter().map(|p| detect_groups(p, &cfg.grouping)).collect());
            }
            let report = evaluate(&clf, &test, timing.then(TimingConfig::default))?;
            let table = render_table(&[TableRow::aggregate(&report.method, &[&report])]);
            print!("{table}");
            write_text(&out.out.join("table.txt"), &table)?;
            write_json(&out.out.join("report.json"), &report.to_flat_json())?;
            write_resolved(&out.out, &cfg, "eval", None)?;
        }
        Command::Experiment { input, out } => {
            prepare_out(&out, &["table.txt"])?;
            let ds = load_pages(&input, &cfg.labels()?)?;
            let outcome = run_experiment(&ds, &cfg.experiment, &cfg.method())?;
            let text = toml::to_string(&cfg).map_err(|e| Error::Input(format!("serializing config: {e}")))?;
            write_experiment(&out.out, &outcome, &text, cfg.experiment.seeds.first().copied())?;
            print!("{}", outcome.table());
            if !outcome.failures.is_empty() {
                return Err(Failure::Cells(outcome.failures.len()));
            }
        }
        Command::PerturbStudy { input, out } => {
            prepare_out(&out, &["table.txt"])?;
            let ds = load_pages(&input, &cfg.labels()?)?;
            let outcome = run_perturb_study(&ds, &cfg.perturb, &cfg.method())?;
            let table = outcome.table();
            print!("{table}");
            write_text(&out.out.join("table.txt"), &table)?;
            let cells: Vec<_> = outcome
                .cells
                .iter()
                .map(|c| {
                    let mut v = c.report.to_flat_json();
                    v["groups"] = c.condition.clone().into();
                    v
                })
                .collect();
            write_json(&out.out.join("reports.json"), &json!({ "cells": cells, "failures": outcome.failures }))?;
            write_resolved(&out.out, &cfg, "perturb-study", Some(cfg.perturb.seed))?;
            if !outcome.failures.is_empty() {
                return Err(Failure::Cells(outcome.failures.len()));
            }
        }
        Command::Gradcheck { method } => {
            let report = gradcheck_method(method, &cfg.gradcheck)?;
            for (name, err) in report.per_tensor() {
                println!("{name:<40} {err:.3e}");
            }
            println!("{method}: max relative error {:.3e} over {} samples", report.max_rel_error, report.samples.len());
            if report.max_rel_error >= 1e-3 {
                return Err(Failure::Cells(1));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Cells(n)) => {
            eprintln!("error: {n} cell(s) failed");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_config_field_is_named() {
        let err = toml::from_str::<RunConfig>("[corpus]\nn_paperz = 3\n").unwrap_err().to_string();
        assert!(err.contains("n_paperz"), "{err}");
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config { field: "x".into(), reason: "y".into() }), 1);
        assert_eq!(exit_code(&Error::Input("x".into())), 2);
        assert_eq!(exit_code(&Error::Diverged { step: 3 }), 3);
    }
}
