use std::collections::{HashMap, HashSet};

use scidoc::eval::kfold_split_by_paper;
use scidoc::grouping::{detect_groups, GroupingConfig};
use scidoc::synth::{corpus_stats, generate_corpus, CorpusConfig};
use scidoc::{Dataset, GroupKind};

fn corpus(n_papers: usize, seed: u64) -> Dataset {
    generate_corpus(&CorpusConfig { n_papers, seed, ..Default::default() }).unwrap()
}

#[test]
fn page_sizes_track_the_configured_mean() {
    let ds = corpus(70, 11);
    let stats = corpus_stats(&ds);
    assert!(stats.pages >= 200, "{stats}");
    let rel = (stats.tokens_mean - 790.0).abs() / 790.0;
    assert!(rel <= 0.10, "{stats}");
    assert!(ds.pages.iter().all(|p| (40..=2400).contains(&p.tokens.len())));
}

#[test]
fn detector_recovers_gold_groups() {
    let ds = corpus(30, 5);
    let cfg = GroupingConfig::default();
    for kind in [GroupKind::Line, GroupKind::Block] {
        let (mut hit, mut total) = (0, 0);
        for page in &ds.pages {
            let detected = detect_groups(page, &cfg);
            let found: HashSet<&Vec<usize>> = detected.groups(kind).iter().map(|g| &g.token_indices).collect();
            total += page.groups(kind).len();
            hit += page.groups(kind).iter().filter(|g| found.contains(&g.token_indices)).count();
        }
        let rate = hit as f64 / total as f64;
        assert!(rate >= 0.95, "{kind}: {rate}");
    }
}

#[test]
fn labels_are_learnable_from_words_alone() {
    let ds = corpus(40, 2);
    let fold = &kfold_split_by_paper(&ds, 4, 0).unwrap()[0];
    let mut counts: HashMap<&str, Vec<usize>> = HashMap::new();
    for &i in &fold.train {
        for t in &ds.pages[i].tokens {
            counts.entry(&t.text).or_insert_with(|| vec![0; ds.labels.len()])[t.label.unwrap()] += 1;
        }
    }
    let best: HashMap<&str, usize> =
        counts.iter().map(|(w, c)| (*w, (0..c.len()).max_by_key(|&k| (c[k], std::cmp::Reverse(k))).unwrap())).collect();
    let (mut hit, mut total) = (0, 0);
    for &i in &fold.test {
        for t in &ds.pages[i].tokens {
            let guess = best.get(t.text.as_str()).copied().unwrap_or(ds.labels.background_index);
            hit += usize::from(guess == t.label.unwrap());
            total += 1;
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc > 0.80, "{acc}");
}
