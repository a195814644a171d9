//! Metrics: per-class F1 and Macro F1, group category inconsistency, inference
//! timing, and paper-level k-fold splitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabelSet, VisualGroup};

/// Version tag written into every report.
pub const REPORT_FORMAT: &str = "scidoc-report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean F1 over classes with nonzero gold support.
    pub macro_f1: f64,
    /// Classes left out of the mean because they never occur in gold.
    pub excluded: Vec<String>,
    pub tokens: usize,
}

/// Per-class precision, recall and F1 plus their macro average.
pub fn macro_f1(pred: &[usize], gold: &[usize], labels: &LabelSet) -> Result<F1Report> {
    if pred.len() != gold.len() {
        return Err(Error::Input(format!(
            "prediction length {} differs from gold length {}",
            pred.len(),
            gold.len()
        )));
    }
    let c = labels.len();
    if let Some(&bad) = pred.iter().chain(gold).find(|&&l| l >= c) {
        return Err(Error::Input(format!("label id {bad} outside the {c}-class label set")));
    }
    let mut tp = vec![0usize; c];
    let mut n_pred = vec![0usize; c];
    let mut n_gold = vec![0usize; c];
    for (&p, &g) in pred.iter().zip(gold) {
        n_pred[p] += 1;
        n_gold[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut per_class = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut counted = 0;
    for k in 0..c {
        let precision = ratio(tp[k], n_pred[k]);
        let recall = ratio(tp[k], n_gold[k]);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        if n_gold[k] == 0 {
            excluded.push(labels.name(k).to_owned());
        } else {
            sum += f1;
            counted += 1;
        }
        per_class.push(ClassScore {
            name: labels.name(k).to_owned(),
            precision,
            recall,
            f1,
            support: n_gold[k],
            predicted: n_pred[k],
        });
    }
    Ok(F1Report {
        per_class,
        macro_f1: if counted == 0 { 0.0 } else { sum / counted as f64 },
        excluded,
        tokens: pred.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inconsistency {
    /// Mean per-group label entropy in nats, times 100.
    pub h_g: f64,
    pub groups: usize,
    pub skipped_empty: usize,
}

/// Entropy of the predicted label distribution inside one group, in nats.
pub fn group_entropy(pred: &[usize], group: &VisualGroup) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &group.token_indices {
        *counts.entry(pred[i]).or_default() += 1;
    }
    let n = group.len() as f64;
    counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Mean group entropy over non-empty groups, scaled by 100.
pub fn group_inconsistency(pred: &[usize], groups: &[VisualGroup]) -> Result<Inconsistency> {
    let mut total = 0.0;
    let mut n = 0;
    let mut skipped = 0;
    for g in groups {
        if g.is_empty() {
            skipped += 1;
            continue;
        }
        if let Some(&i) = g.token_indices.iter().find(|&&i| i >= pred.len()) {
            return Err(Error::Input(format!("group refers to token {i} beyond {} predictions", pred.len())));
        }
        total += group_entropy(pred, g);
        n += 1;
    }
    if skipped > 0 {
        log::debug!("skipped {skipped} empty groups");
    }
    Ok(Inconsistency {
        h_g: if n == 0 { 0.0 } else { 100.0 * total / n as f64 },
        groups: n,
        skipped_empty: skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms_per_page: f64,
    pub std_ms_per_page: f64,
    pub run_totals_ms: Vec<f64>,
    pub pages: usize,
}

/// Wall-clock milliseconds per page of `model_fn`, measured over `runs`
/// passes after `warmup` unmeasured passes. Inputs must be fully prepared
/// beforehand so preprocessing stays off the clock. The caller must not run
/// other work concurrently; the model code itself is single-threaded.
pub fn time_inference<P, R, F>(mut model_fn: F, pages: &[P], runs: usize, warmup: usize) -> Timing
where
    F: FnMut(&P) -> R,
{
    for _ in 0..warmup {
        for p in pages {
            std::hint::black_box(model_fn(p));
        }
    }
    let mut totals = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for p in pages {
            std::hint::black_box(model_fn(p));
        }
        totals.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let per_page: Vec<f64> = totals.iter().map(|t| t / pages.len().max(1) as f64).collect();
    let (mean, std) = mean_std(&per_page);
    Timing {
        mean_ms_per_page: mean,
        std_ms_per_page: std,
        run_totals_ms: totals,
        pages: pages.len(),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Page indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_papers: Vec<String>,
}

/// Shuffle distinct paper ids with `seed`, deal them round-robin into `k`
/// folds, and keep every page with its paper.
pub fn kfold_split_by_paper(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut papers = dataset.paper_ids();
    if k == 0 || k > papers.len() {
        return Err(Error::config("k", format!("need 1 <= k <= {} distinct papers, got {k}", papers.len())));
    }
    papers.sort();
    papers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: BTreeMap<&str, usize> = papers.iter().enumerate().map(|(i, p)| (p.as_str(), i % k)).collect();
    let mut folds: Vec<Fold> = (0..k)
        .map(|f| Fold {
            train: Vec::new(),
            test: Vec::new(),
            test_papers: papers.iter().skip(f).step_by(k).cloned().collect(),
        })
        .collect();
    for (i, page) in dataset.pages.iter().enumerate() {
        let f = fold_of[page.paper_id.as_str()];
        for (j, fold) in folds.iter_mut().enumerate() {
            if j == f {
                fold.test.push(i);
            } else {
                fold.train.push(i);
            }
        }
    }
    Ok(folds)
}

/// One evaluated cell: accuracy, consistency at both granularities, and
/// optional timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
    pub f1: F1Report,
    pub h_g_block: f64,
    pub h_g_line: f64,
    pub groups_block: usize,
    pub groups_line: usize,
    pub pages: usize,
    pub timing: Option<Timing>,
}

impl EvalReport {
    /// Flat JSON object. Per-class values use keys such as `f1/title`.
    pub fn to_flat_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("format".into(), REPORT_FORMAT.into());
        m.insert("method".into(), self.method.clone().into());
        m.insert("fold".into(), self.fold.into());
        m.insert("seed".into(), self.seed.into());
        m.insert("macro_f1".into(), self.f1.macro_f1.into());
        m.insert("h_g_block".into(), self.h_g_block.into());
        m.insert("h_g_line".into(), self.h_g_line.into());
        m.insert("tokens".into(), self.f1.tokens.into());
        m.insert("groups_block".into(), self.groups_block.into());
        m.insert("groups_line".into(), self.groups_line.into());
        m.insert("pages".into(), self.pages.into());
        m.insert("excluded_classes".into(), self.f1.excluded.join(",").into());
        m.insert("time_ms_mean".into(), self.timing.as_ref().map(|t| t.mean_ms_per_page).into());
        m.insert("time_ms_std".into(), self.timing.as_ref().map(|t| t.std_ms_per_page).into());
        for c in &self.f1.per_class {
            m.insert(format!("precision/{}", c.name), c.precision.into());
            m.insert(format!("recall/{}", c.name), c.recall.into());
            m.insert(format!("f1/{}", c.name), c.f1.into());
            m.insert(format!("support/{}", c.name), c.support.into());
        }
        Value::Object(m)
    }
}

/// One row of a merged comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub cells: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub h_g_block_mean: f64,
    pub h_g_block_std: f64,
    pub h_g_line_mean: f64,
    pub h_g_line_std: f64,
    pub time_ms_mean: Option<f64>,
    pub time_ms_std: Option<f64>,
}

impl TableRow {
    /// Aggregate reports of one method; F1 and H(G) are shown on the 0-100 scale.
    pub fn aggregate(method: &str, reports: &[&EvalReport]) -> TableRow {
        let col = |f: &dyn Fn(&EvalReport) -> f64| mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (f1m, f1s) = col(&|r| 100.0 * r.f1.macro_f1);
        let (hbm, hbs) = col(&|r| r.h_g_block);
        let (hlm, hls) = col(&|r| r.h_g_line);
        let times: Vec<f64> = reports.iter().filter_map(|r| r.timing.as_ref().map(|t| t.mean_ms_per_page)).collect();
        let (tm, ts) = mean_std(&times);
        let timed = !times.is_empty();
        TableRow {
            method: method.to_owned(),
            cells: reports.len(),
            macro_f1_mean: f1m,
            macro_f1_std: f1s,
            h_g_block_mean: hbm,
            h_g_block_std: hbs,
            h_g_line_mean: hlm,
            h_g_line_std: hls,
            time_ms_mean: timed.then_some(tm),
            time_ms_std: timed.then_some(ts),
        }
    }
}

/// Plain-text table: Macro F1 (higher is better), H(G) at block and line
/// level (lower is better), and ms per page. Values are `mean(std)`.
pub fn render_table(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>15}  {:>15}  {:>15}  {:>17}",
        "method", "Macro F1 (up)", "H(G^B) (down)", "H(G^L) (down)", "ms/page"
    );
    for r in rows {
        let time = match (r.time_ms_mean, r.time_ms_std) {
            (Some(m), Some(s)) => format!("{m:.2}({s:.2})"),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>15}  {:>15}  {:>15}  {:>17}",
            r.method,
            format!("{:.2}({:.2})", r.macro_f1_mean, r.macro_f1_std),
            format!("{:.2}({:.2})", r.h_g_block_mean, r.h_g_block_std),
            format!("{:.2}({:.2})", r.h_g_line_mean, r.h_g_line_std),
            time
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, GroupKind, Page};

    fn two() -> LabelSet {
        LabelSet::new(vec!["a".into(), "b".into()], 0).unwrap()
    }

    fn group(ix: &[usize]) -> VisualGroup {
        VisualGroup::new(BBox::new(0.0, 0.0, 1.0, 1.0), GroupKind::Block, ix.to_vec())
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let r = macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], &two()).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert!(macro_f1(&[0], &[0, 1], &two()).is_err());
    }

    #[test]
    fn one_class_wrong_halves_the_other() {
        // gold: a a a b b b; pred: a a a a a a. F1_a = 2*0.5*1/1.5 = 2/3, F1_b = 0.
        let r = macro_f1(&[0; 6], &[0, 0, 0, 1, 1, 1], &two()).unwrap();
        let f1_a = r.per_class[0].f1;
        assert!((f1_a - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.5 * f1_a).abs() < 1e-12);
    }

    #[test]
    fn absent_gold_class_is_excluded_but_costs_precision() {
        let labels = LabelSet::new(vec!["a".into(), "b".into(), "c".into()], 0).unwrap();
        // gold: a a b b; pred: a c b b. c never occurs in gold.
        let r = macro_f1(&[0, 2, 1, 1], &[0, 0, 1, 1], &labels).unwrap();
        assert_eq!(r.excluded, vec!["c".to_string()]);
        // F1_a: P=1, R=0.5 -> 2/3. F1_b = 1.
        assert!((r.macro_f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.per_class[2].predicted, 1);
    }

    #[test]
    fn entropy_fixtures() {
        let u = group_inconsistency(&[0, 0, 1, 1], &[group(&[0, 1]), group(&[2, 3])]).unwrap();
        assert_eq!(u.h_g, 0.0);
        let h = group_inconsistency(&[0, 1], &[group(&[0, 1])]).unwrap();
        assert!((h.h_g - 69.31).abs() < 0.01);
        for k in 2..=6usize {
            let pred: Vec<usize> = (0..k).collect();
            let ix: Vec<usize> = (0..k).collect();
            let h = group_inconsistency(&pred, &[group(&ix)]).unwrap();
            assert!((h.h_g - 100.0 * (k as f64).ln()).abs() < 1e-9);
        }
        let s = group_inconsistency(&[3], &[group(&[0]), group(&[])]).unwrap();
        assert_eq!((s.h_g, s.groups, s.skipped_empty), (0.0, 1, 1));
    }

    #[test]
    fn timing_is_stable_and_linear() {
        let work = |n: &u64| (0..*n).fold(0u64, |a, i| a.wrapping_mul(31).wrapping_add(i));
        let pages = vec![200_000u64; 20];
        let t = time_inference(work, &pages, 3, 1);
        assert_eq!(t.run_totals_ms.len(), 3);
        assert!(t.std_ms_per_page / t.mean_ms_per_page < 0.2, "{t:?}");
        let doubled = vec![200_000u64; 40];
        let t2 = time_inference(work, &doubled, 3, 1);
        let ratio = t2.run_totals_ms.iter().sum::<f64>() / t.run_totals_ms.iter().sum::<f64>();
        assert!((ratio - 2.0).abs() < 0.5, "{ratio}");
    }

    fn dataset(papers: usize, pages_each: usize) -> Dataset {
        let mut pages = Vec::new();
        for p in 0..papers {
            for i in 0..pages_each {
                pages.push(Page::new(format!("paper{p}"), i, 10.0, 10.0));
            }
        }
        Dataset::new(two(), pages)
    }

    #[test]
    fn kfold_basic_cases() {
        let ds = dataset(10, 3);
        let folds = kfold_split_by_paper(&ds, 5, 7).unwrap();
        assert!(folds.iter().all(|f| f.test_papers.len() == 2 && f.test.len() == 6 && f.train.len() == 24));
        assert_eq!(folds, kfold_split_by_paper(&ds, 5, 7).unwrap());
        assert!(kfold_split_by_paper(&ds, 11, 7).is_err());
    }

    #[test]
    fn flat_report_has_scalar_values() {
        let f1 = macro_f1(&[0, 1], &[0, 1], &two()).unwrap();
        let r = EvalReport {
            method: "baseline".into(),
            fold: Some(0),
            seed: Some(1),
            f1,
            h_g_block: 0.0,
            h_g_line: 0.0,
            groups_block: 1,
            groups_line: 2,
            pages: 1,
            timing: None,
        };
        let v = r.to_flat_json();
        assert!(v.as_object().unwrap().values().all(|x| !x.is_object() && !x.is_array()));
        assert_eq!(v["f1/a"], 1.0);
        let table = render_table(&[TableRow::aggregate("baseline", &[&r])]);
        assert!(table.contains("100.00(0.00)"));
    }
}
