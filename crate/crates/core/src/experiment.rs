//! Method registry, checkpoints, evaluation cells, the experiment grid and
//! the group-perturbation study.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{group_inconsistency, macro_f1, render_table, time_inference, EvalReport, TableRow, REPORT_FORMAT};
use crate::grouping::{detect_groups, majority_vote_relabel, GroupingConfig, PerturbConfig};
use crate::hierarchical::{train_hvila, train_simple_group, HierClassifier, HierConfig, SimpleGroupClassifier};
use crate::indicator::{train_token_classifier, TokenClassifier, WindowMode};
use crate::model::{Dataset, GroupKind, LabelSet, Page};
use crate::nn::{checkpoint, ModelConfig, ParamStore};
use crate::train::{TrainHyper, TrainLog};
use crate::vocab::Vocab;

pub const MODEL_FORMAT: &str = "scidoc-model/1";
pub const RUN_FORMAT: &str = "scidoc-run/1";

/// The compared methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Token classifier over plain token sequences.
    Baseline,
    /// Token classifier with `[BLK]` between sentences.
    SentenceBreak,
    /// Token classifier with `[BLK]` between groups.
    Indicator(GroupKind),
    /// Group encoder feeding a page encoder.
    Hierarchical(GroupKind),
    /// Full-depth classifier applied to each group independently.
    SimpleGroup(GroupKind),
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Baseline,
        Method::SentenceBreak,
        Method::Indicator(GroupKind::Line),
        Method::Indicator(GroupKind::Block),
        Method::Hierarchical(GroupKind::Line),
        Method::Hierarchical(GroupKind::Block),
        Method::SimpleGroup(GroupKind::Block),
    ];

    pub fn window_mode(self) -> Option<WindowMode> {
        match self {
            Method::Baseline => Some(WindowMode::Baseline),
            Method::SentenceBreak => Some(WindowMode::SentenceBreak),
            Method::Indicator(k) => Some(WindowMode::Group(k)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baseline => f.write_str("baseline"),
            Method::SentenceBreak => f.write_str("sentence-break"),
            Method::Indicator(k) => write!(f, "indicator-{k}"),
            Method::Hierarchical(k) => write!(f, "hierarchical-{k}"),
            Method::SimpleGroup(GroupKind::Block) => f.write_str("simple-group"),
            Method::SimpleGroup(k) => write!(f, "simple-group-{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = |k: &str| match k {
            "line" => Some(GroupKind::Line),
            "block" => Some(GroupKind::Block),
            _ => None,
        };
        let parsed = match s {
            "baseline" => Some(Method::Baseline),
            "sentence-break" => Some(Method::SentenceBreak),
            "simple-group" => Some(Method::SimpleGroup(GroupKind::Block)),
            _ => {
                let (family, k) = s.rsplit_once('-').unwrap_or((s, ""));
                match (family, kind(k)) {
                    ("indicator", Some(k)) => Some(Method::Indicator(k)),
                    ("hierarchical", Some(k)) => Some(Method::Hierarchical(k)),
                    ("simple-group", Some(k)) => Some(Method::SimpleGroup(k)),
                    _ => None,
                }
            }
        };
        parsed.ok_or_else(|| {
            let known: Vec<String> = Method::ALL.iter().map(|m| m.to_string()).collect();
            Error::config("method", format!("unknown method {s:?}; expected one of {}", known.join(", ")))
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by every method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub model: ModelConfig,
    pub hier: HierConfig,
    pub train: TrainHyper,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hier.validate()?;
        self.train.validate()
    }
}

/// A trained model of any method.
#[derive(Clone, Debug)]
pub enum Classifier {
    Token(Method, TokenClassifier),
    Hier(Method, HierClassifier),
    Simple(Method, SimpleGroupClassifier),
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    method: Method,
    model: ModelConfig,
    hier: Option<HierConfig>,
    truncation: Option<usize>,
    vocab: Vec<String>,
    labels: LabelSet,
}

impl Classifier {
    pub fn method(&self) -> Method {
        match self {
            Classifier::Token(m, _) | Classifier::Hier(m, _) | Classifier::Simple(m, _) => *m,
        }
    }

    pub fn labels(&self) -> &LabelSet {
        match self {
            Classifier::Token(_, c) => &c.labels,
            Classifier::Hier(_, c) => &c.labels,
            Classifier::Simple(_, c) => &c.labels,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Classifier::Token(_, c) => &c.params,
            Classifier::Hier(_, c) => &c.params,
            Classifier::Simple(_, c) => &c.params,
        }
    }

    /// One label per token, using the groups stored on `page`.
    pub fn predict_tokens(&self, page: &Page) -> Result<Vec<usize>> {
        match self {
            Classifier::Token(_, c) => c.predict_tokens(page),
            Classifier::Hier(_, c) => c.predict_tokens(page),
            Classifier::Simple(_, c) => c.predict_tokens(page),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (model, hier, truncation, vocab) = match self {
            Classifier::Token(_, c) => (&c.model.config, None, None, &c.vocab),
            Classifier::Hier(_, c) => (&c.model.config, Some(c.model.hier.clone()), Some(c.model.truncation), &c.vocab),
            Classifier::Simple(_, c) => (&c.model.config, None, None, &c.vocab),
        };
        let header = CheckpointHeader {
            format: MODEL_FORMAT.into(),
            method: self.method(),
            model: model.clone(),
            hier,
            truncation,
            vocab: vocab.words().to_vec(),
            labels: self.labels().clone(),
        };
        checkpoint::save(path, &serde_json::to_value(header)?, self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = checkpoint::load(path)?;
        let h: CheckpointHeader = serde_json::from_value(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if h.format != MODEL_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported model format {:?}", h.format)));
        }
        let vocab = Vocab::from_words(h.vocab);
        let mut clf = match h.method {
            Method::Hierarchical(_) => {
                let hier = h.hier.ok_or_else(|| Error::Checkpoint("missing hier config".into()))?;
                let n = h.truncation.ok_or_else(|| Error::Checkpoint("missing truncation".into()))?;
                Classifier::Hier(h.method, HierClassifier::new(&h.model, &hier, n, vocab, h.labels)?)
            }
            Method::SimpleGroup(k) => Classifier::Simple(h.method, SimpleGroupClassifier::new(&h.model, k, vocab, h.labels)?),
            m => Classifier::Token(m, TokenClassifier::new(&h.model, m.window_mode().unwrap(), vocab, h.labels)?),
        };
        let slot = match &mut clf {
            Classifier::Token(_, c) => &mut c.params,
            Classifier::Hier(_, c) => &mut c.params,
            Classifier::Simple(_, c) => &mut c.params,
        };
        if !slot.same_layout(&params) {
            return Err(Error::Checkpoint("tensor layout does not match the declared model".into()));
        }
        *slot = params;
        Ok(clf)
    }
}

/// Train `method` on `train`, selecting the best epoch on `dev` if given.
pub fn train_method(method: Method, train: &Dataset, dev: Option<&Dataset>, cfg: &MethodConfig) -> Result<(Classifier, TrainLog)> {
    match method {
        Method::Hierarchical(kind) => {
            let hier = HierConfig { group_kind: kind, ..cfg.hier.clone() };
            hier.validate()?;
            let (c, log) = train_hvila(train, dev, &cfg.model, &hier, &cfg.train)?;
            Ok((Classifier::Hier(method, c), log))
        }
        Method::SimpleGroup(kind) => {
            let (c, log) = train_simple_group(train, dev, &cfg.model, kind, &cfg.train)?;
            Ok((Classifier::Simple(method, c), log))
        }
        m => {
            let (c, log) = train_token_classifier(train, dev, &cfg.model, m.window_mode().unwrap(), &cfg.train)?;
            Ok((Classifier::Token(method, c), log))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { runs: 3, warmup: 1 }
    }
}

/// Score token predictions on labelled pages; H(G) uses the groups stored on
/// each page.
pub fn score_predictions(method: &str, pages: &[Page], preds: &[Vec<usize>], labels: &LabelSet) -> Result<EvalReport> {
    let (mut all_pred, mut all_gold) = (Vec::new(), Vec::new());
    let (mut hb, mut nb, mut hl, mut nl) = (0.0, 0, 0.0, 0);
    for (page, pred) in pages.iter().zip(preds) {
        let gold = page
            .gold_labels()
            .ok_or_else(|| Error::Input(format!("page {}:{} lacks gold labels", page.paper_id, page.page_index)))?;
        all_pred.extend_from_slice(pred);
        all_gold.extend(gold);
        let b = group_inconsistency(pred, &page.blocks)?;
        let l = group_inconsistency(pred, &page.lines)?;
        hb += b.h_g * b.groups as f64;
        nb += b.groups;
        hl += l.h_g * l.groups as f64;
        nl += l.groups;
    }
    Ok(EvalReport {
        method: method.to_string(),
        fold: None,
        seed: None,
        f1: macro_f1(&all_pred, &all_gold, labels)?,
        h_g_block: if nb == 0 { 0.0 } else { hb / nb as f64 },
        h_g_line: if nl == 0 { 0.0 } else { hl / nl as f64 },
        groups_block: nb,
        groups_line: nl,
        pages: pages.len(),
        timing: None,
    })
}

/// Evaluate a trained model on `test`, optionally timing inference.
pub fn evaluate(clf: &Classifier, test: &Dataset, timing: Option<TimingConfig>) -> Result<EvalReport> {
    let preds = test.pages.iter().map(|p| clf.predict_tokens(p)).collect::<Result<Vec<_>>>()?;
    let mut report = score_predictions(&clf.method().to_string(), &test.pages, &preds, &test.labels)?;
    if let Some(t) = timing {
        report.timing = Some(time_inference(|p: &Page| clf.predict_tokens(p).map(|v| v.len()), &test.pages, t.runs, t.warmup));
    }
    Ok(report)
}

/// Modal gold label per group of `kind`, spread to the group's tokens.
pub fn oracle_report(test: &Dataset, kind: GroupKind) -> Result<EvalReport> {
    let preds = test
        .pages
        .iter()
        .map(|p| majority_vote_relabel(p, &p.covering_groups(kind)))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(&format!("oracle-{kind}"), &test.pages, &preds, &test.labels)
}

/// Hold out about `fraction` of the training papers (at least one when two
/// or more exist) as a dev set.
pub fn split_dev(ds: &Dataset, train: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let sub = ds.subset(train);
    let mut papers = sub.paper_ids();
    if fraction <= 0.0 || papers.len() < 2 {
        return (train.to_vec(), Vec::new());
    }
    papers.sort();
    papers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xde5e7));
    let n_dev = ((papers.len() as f64 * fraction).round() as usize).clamp(1, papers.len() - 1);
    let dev_papers = &papers[..n_dev];
    train.iter().partition(|&&i| !dev_papers.contains(&ds.pages[i].paper_id))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub folds: usize,
    /// Folds actually run; empty runs all.
    pub run_folds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub dev_fraction: f64,
    pub timing: Option<TimingConfig>,
    /// Overrides of `model.n_layers` for token-level and simple-group methods.
    pub token_layers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            folds: 5,
            run_folds: Vec::new(),
            seeds: vec![0],
            split_seed: 0,
            dev_fraction: 0.1,
            timing: None,
            token_layers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("experiment.methods", "must list at least one method"));
        }
        if self.folds < 2 {
            return Err(Error::config("experiment.folds", "must be >= 2"));
        }
        if let Some(&f) = self.run_folds.iter().find(|&&f| f >= self.folds) {
            return Err(Error::config("experiment.run_folds", format!("fold {f} out of range")));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "must list at least one seed"));
        }
        if !(0.0..0.5).contains(&self.dev_fraction) {
            return Err(Error::config("experiment.dev_fraction", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Per-method settings for one seed.
    pub fn method_config(&self, base: &MethodConfig, method: Method, seed: u64) -> MethodConfig {
        let mut cfg = base.clone();
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        if let (Some(n), false) = (self.token_layers, matches!(method, Method::Hierarchical(_))) {
            cfg.model.n_layers = n;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub fold: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
    pub rows: Vec<TableRow>,
}

impl ExperimentOutcome {
    pub fn table(&self) -> String {
        render_table(&self.rows)
    }

    /// Reports of one method.
    pub fn of(&self, method: &str) -> Vec<&EvalReport> {
        self.reports.iter().filter(|r| r.method == method).collect()
    }
}

fn merge_rows(names: &[String], reports: &[EvalReport]) -> Vec<TableRow> {
    names
        .iter()
        .filter_map(|name| {
            let rs: Vec<&EvalReport> = reports.iter().filter(|r| &r.method == name).collect();
            (!rs.is_empty()).then(|| TableRow::aggregate(name, &rs))
        })
        .collect()
}

/// Run every (method, fold, seed) cell. A failing cell is recorded and the
/// others continue.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig, base: &MethodConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    base.validate()?;
    let folds = crate::eval::kfold_split_by_paper(ds, cfg.folds, cfg.split_seed)?;
    let fold_ids: Vec<usize> = if cfg.run_folds.is_empty() { (0..cfg.folds).collect() } else { cfg.run_folds.clone() };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &method in &cfg.methods {
        for &f in &fold_ids {
            let fold = &folds[f];
            for &seed in &cfg.seeds {
                let (train_ix, dev_ix) = split_dev(ds, &fold.train, cfg.dev_fraction, seed);
                let train = ds.subset(&train_ix);
                let dev = ds.subset(&dev_ix);
                let test = ds.subset(&fold.test);
                let mcfg = cfg.method_config(base, method, seed);
                let cell = train_method(method, &train, (!dev.pages.is_empty()).then_some(&dev), &mcfg)
                    .and_then(|(clf, _)| evaluate(&clf, &test, cfg.timing));
                match cell {
                    Ok(mut r) => {
                        log::info!("{method} fold {f} seed {seed}: macro F1 {:.4}", r.f1.macro_f1);
                        r.fold = Some(f);
                        r.seed = Some(seed);
                        reports.push(r);
                    }
                    Err(e) => {
                        log::error!("{method} fold {f} seed {seed} failed: {e}");
                        failures.push(CellFailure { method: method.to_string(), fold: f, seed, error: e.to_string() });
                    }
                }
            }
        }
    }
    let names: Vec<String> = cfg.methods.iter().map(|m| m.to_string()).collect();
    let rows = merge_rows(&names, &reports);
    Ok(ExperimentOutcome { reports, failures, rows })
}

/// Group conditions evaluated by the perturbation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbStudyConfig {
    /// Token-level and group-level models compared on the same groups.
    pub methods: Vec<Method>,
    pub folds: usize,
    pub fold: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub dev_fraction: f64,
    pub grouping: GroupingConfig,
    /// `[merge, split, jitter]` rates, one condition each.
    pub rates: Vec<[f64; 3]>,
    pub kind: GroupKind,
}

impl Default for PerturbStudyConfig {
    fn default() -> Self {
        PerturbStudyConfig {
            methods: vec![Method::Indicator(GroupKind::Block), Method::Hierarchical(GroupKind::Block)],
            folds: 5,
            fold: 0,
            seed: 0,
            split_seed: 0,
            dev_fraction: 0.1,
            grouping: GroupingConfig::default(),
            rates: vec![[0.2, 0.2, 0.2]],
            kind: GroupKind::Block,
        }
    }
}

/// One evaluated (condition, method) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyCell {
    pub condition: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct StudyOutcome {
    pub cells: Vec<StudyCell>,
    pub failures: Vec<CellFailure>,
}

impl StudyOutcome {
    pub fn get(&self, condition: &str, method: &str) -> Option<&EvalReport> {
        self.cells.iter().find(|c| c.condition == condition && c.report.method == method).map(|c| &c.report)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let mut conditions: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !conditions.contains(&c.condition.as_str()) {
                conditions.push(&c.condition);
            }
        }
        for cond in conditions {
            out.push_str(&format!("groups: {cond}\n"));
            let rows: Vec<TableRow> =
                self.cells.iter().filter(|c| c.condition == cond).map(|c| TableRow::aggregate(&c.report.method, &[&c.report])).collect();
            out.push_str(&render_table(&rows));
            out.push('\n');
        }
        out
    }
}

fn with_groups(ds: &Dataset, f: impl Fn(&Page, usize) -> Result<Page>) -> Result<Dataset> {
    let pages = ds.pages.iter().enumerate().map(|(i, p)| f(p, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(ds.labels.clone(), pages))
}

/// Condition names and their test sets: gold, detected, perturbed per rate.
pub fn study_conditions(test: &Dataset, cfg: &PerturbStudyConfig) -> Result<Vec<(String, Dataset)>> {
    let mut out = vec![("gold".to_string(), test.clone())];
    out.push(("detected".into(), with_groups(test, |p, _| Ok(detect_groups(p, &cfg.grouping)))?));
    for r in &cfg.rates {
        let noise = PerturbConfig { kind: cfg.kind, ..PerturbConfig::with_rates(r[0], r[1], r[2]) };
        let seed = cfg.seed;
        let perturbed = with_groups(test, |p, i| crate::grouping::perturb_groups(p, &noise, seed.wrapping_add(i as u64)))?;
        out.push((format!("perturbed({},{},{})", r[0], r[1], r[2]), perturbed));
    }
    Ok(out)
}

/// Evaluate already trained models plus the group-uniform oracle under each
/// group condition.
pub fn evaluate_study(models: &[Classifier], test: &Dataset, cfg: &PerturbStudyConfig) -> Result<StudyOutcome> {
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (cond, ds) in study_conditions(test, cfg)? {
        cells.push(StudyCell { condition: cond.clone(), report: oracle_report(&ds, cfg.kind)? });
        for clf in models {
            match evaluate(clf, &ds, None) {
                Ok(r) => cells.push(StudyCell { condition: cond.clone(), report: r }),
                Err(e) => failures.push(CellFailure { method: clf.method().to_string(), fold: cfg.fold, seed: cfg.seed, error: e.to_string() }),
            }
        }
    }
    Ok(StudyOutcome { cells, failures })
}

/// Train the configured methods on one fold and run [`evaluate_study`].
pub fn run_perturb_study(ds: &Dataset, cfg: &PerturbStudyConfig, base: &MethodConfig) -> Result<StudyOutcome> {
    base.validate()?;
    if cfg.fold >= cfg.folds {
        return Err(Error::config("perturb.fold", "must be below folds"));
    }
    let folds = crate::eval::kfold_split_by_paper(ds, cfg.folds, cfg.split_seed)?;
    let fold = &folds[cfg.fold];
    let (train_ix, dev_ix) = split_dev(ds, &fold.train, cfg.dev_fraction, cfg.seed);
    let (train, dev, test) = (ds.subset(&train_ix), ds.subset(&dev_ix), ds.subset(&fold.test));
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for &m in &cfg.methods {
        let mut mc = base.clone();
        mc.model.seed = cfg.seed;
        mc.train.seed = cfg.seed;
        match train_method(m, &train, (!dev.pages.is_empty()).then_some(&dev), &mc) {
            Ok((clf, _)) => models.push(clf),
            Err(e) => failures.push(CellFailure { method: m.to_string(), fold: cfg.fold, seed: cfg.seed, error: e.to_string() }),
        }
    }
    let mut out = evaluate_study(&models, &test, cfg)?;
    failures.append(&mut out.failures);
    out.failures = failures;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub group_layers: usize,
    pub page_layers: usize,
    pub samples: usize,
    pub epsilon: f64,
    /// Tokens on the synthetic check page.
    pub page_tokens: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig { d: 32, n_heads: 2, n_layers: 1, max_seq_len: 64, dropout_rate: 0.0, ..Default::default() },
            group_layers: 1,
            page_layers: 1,
            samples: 200,
            epsilon: 1e-4,
            page_tokens: 60,
            seed: 0,
        }
    }
}

/// Central-difference check of a freshly initialized model of `method` on a
/// small synthetic page, in evaluation mode.
pub fn gradcheck_method(method: Method, cfg: &GradcheckConfig) -> Result<crate::nn::GradCheckReport> {
    use crate::hierarchical::{group_targets, GroupModel};
    use crate::nn::{gradcheck, Mode};

    let ds = crate::synth::generate_corpus(&crate::synth::CorpusConfig {
        n_papers: 1,
        pages_per_paper: [1, 1],
        tokens_per_page_mean: cfg.page_tokens as f64,
        tokens_per_page_std: 1.0,
        tokens_per_page_range: [cfg.page_tokens, cfg.page_tokens],
        seed: cfg.seed,
        ..Default::default()
    })?;
    let vocab = Vocab::build(&ds, 1);
    let page = &ds.pages[0];
    let model = ModelConfig { dropout_rate: 0.0, seed: cfg.seed, ..cfg.model.clone() };
    let mean = |loss: f64, count: usize, mut g: crate::nn::Grads| {
        g.scale(1.0 / count.max(1) as f64);
        (loss / count.max(1) as f64, g)
    };
    match method {
        Method::Hierarchical(kind) | Method::SimpleGroup(kind) => {
            let groups = page.covering_groups(kind);
            let (targets, _) = group_targets(page, &groups);
            let run = |m: &dyn GroupModel, params: &ParamStore| {
                gradcheck(
                    |p| {
                        let mut g = p.zero_grads();
                        let (l, c) = m.accumulate(p, page, &groups, &targets, &vocab, &mut Mode::Eval, &mut g)?;
                        Ok(mean(l, c, g))
                    },
                    params,
                    cfg.samples,
                    cfg.epsilon,
                    cfg.seed,
                )
            };
            if let Method::Hierarchical(_) = method {
                let hier = HierConfig { group_layers: cfg.group_layers, page_layers: cfg.page_layers, group_kind: kind, ..Default::default() };
                let n = crate::hierarchical::choose_truncation(&ds, kind, model.max_seq_len)?.n_tilde;
                let clf = HierClassifier::new(&model, &hier, n, vocab.clone(), ds.labels.clone())?;
                run(&clf.model, &clf.params)
            } else {
                let clf = SimpleGroupClassifier::new(&model, kind, vocab.clone(), ds.labels.clone())?;
                run(&clf.model, &clf.params)
            }
        }
        m => {
            let clf = TokenClassifier::new(&model, m.window_mode().unwrap(), vocab.clone(), ds.labels.clone())?;
            let windows = clf.windows(page)?;
            gradcheck(|p| clf.model.loss_and_grads(p, &windows), &clf.params, cfg.samples, cfg.epsilon, cfg.seed)
        }
    }
}

/// Marker file written next to every output set.
pub fn run_manifest(command: &str, seed: Option<u64>) -> Value {
    json!({ "format": RUN_FORMAT, "report_format": REPORT_FORMAT, "command": command, "seed": seed, "version": env!("CARGO_PKG_VERSION") })
}

/// Write per-cell reports, the merged table in text and JSON, and the manifest.
pub fn write_experiment(out: &Path, outcome: &ExperimentOutcome, resolved_config: &str, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let reports_dir = out.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| Error::io(&reports_dir, e))?;
    let mut written = Vec::new();
    for r in &outcome.reports {
        let name = format!("{}_fold{}_seed{}.json", r.method, r.fold.unwrap_or(0), r.seed.unwrap_or(0));
        let path = reports_dir.join(name);
        write_json(&path, &r.to_flat_json())?;
        written.push(path);
    }
    let table_rows: Vec<Value> = outcome.rows.iter().map(|r| serde_json::to_value(r).unwrap()).collect();
    write_text(&out.join("table.txt"), &outcome.table())?;
    write_json(&out.join("table.json"), &json!({ "format": REPORT_FORMAT, "rows": table_rows, "failures": outcome.failures }))?;
    write_text(&out.join("config.toml"), resolved_config)?;
    write_json(&out.join("run.json"), &run_manifest("experiment", seed))?;
    Ok(written)
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
