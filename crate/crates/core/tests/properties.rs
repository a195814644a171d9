use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scidoc::eval::{group_entropy, group_inconsistency, kfold_split_by_paper, macro_f1};
use scidoc::grouping::{allocate_tokens, detect_groups, majority_vote_relabel, perturb_groups, GroupingConfig, PerturbConfig};
use scidoc::hierarchical::{HierClassifier, HierConfig};
use scidoc::indicator::{build_windows, TokenClassifier, WindowMode};
use scidoc::model::{reading_order_sort, validate_page};
use scidoc::nn::ModelConfig;
use scidoc::vocab::{Vocab, BLK, CLS, SEP};
use scidoc::{BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup};

/// Blocks stacked down the page, each of a few lines of word boxes. Labels are
/// uniform per block unless `mixed`.
fn random_page(seed: u64, mixed: bool) -> Page {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut page = Page::new("paper", 0, 600.0, 900.0);
    let mut y = 10.0;
    for _ in 0..rng.gen_range(1..8) {
        let label = rng.gen_range(0..15);
        let mut block = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            let mut line = Vec::new();
            let mut x = 10.0;
            for _ in 0..rng.gen_range(1..9) {
                let w = rng.gen_range(8.0..30.0);
                let l = if mixed { rng.gen_range(0..15) } else { label };
                line.push(page.tokens.len());
                page.tokens.push(Token::new(format!("w{}", rng.gen_range(0..20)), BBox::new(x, y, x + w, y + 8.0), Some(l)));
                x += w + 3.0;
            }
            let bbox = BBox::union_all(line.iter().map(|&i| &page.tokens[i].bbox)).unwrap();
            page.lines.push(VisualGroup::new(bbox, GroupKind::Line, line.clone()));
            block.extend(line);
            y += 10.0;
        }
        let bbox = BBox::union_all(block.iter().map(|&i| &page.tokens[i].bbox)).unwrap();
        page.blocks.push(VisualGroup::new(bbox, GroupKind::Block, block));
        y += 20.0;
    }
    page
}

/// Same page with its tokens in a random order and groups remapped.
fn shuffled(page: &Page, seed: u64) -> Page {
    let mut order: Vec<usize> = (0..page.tokens.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut new_of = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }
    let mut p = page.clone();
    p.tokens = order.iter().map(|&i| page.tokens[i].clone()).collect();
    for g in p.lines.iter_mut().chain(p.blocks.iter_mut()) {
        g.token_indices = g.token_indices.iter().map(|&i| new_of[i]).collect();
        g.token_indices.sort_unstable();
    }
    p
}

fn vocab() -> Vocab {
    let mut words: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLK]"].iter().map(|s| s.to_string()).collect();
    words.extend((0..20).map(|i| format!("w{i}")));
    Vocab::from_words(words)
}

fn token_sets(groups: &[VisualGroup]) -> BTreeSet<Vec<usize>> {
    groups.iter().map(|g| g.token_indices.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn validation_reports_instead_of_failing(
        coords in prop::collection::vec(prop_oneof![any::<f64>(), Just(f64::NAN), Just(f64::INFINITY), -10.0..1000.0f64], 4..40),
        width in prop_oneof![Just(f64::NAN), Just(-1.0), 0.0..1000.0f64],
    ) {
        let mut page = Page::new("p", 0, width, 800.0);
        for c in coords.chunks_exact(4) {
            page.tokens.push(Token::new("t", BBox::new(c[0], c[1], c[2], c[3]), Some(99)));
        }
        page.blocks.push(VisualGroup::new(BBox::new(0.0, 0.0, 1.0, 1.0), GroupKind::Block, vec![0, 0, 1000]));
        let report = validate_page(&page, &LabelSet::default15());
        prop_assert!(!report.is_valid());
    }

    #[test]
    fn reading_order_is_idempotent_and_line_sorted(seed in any::<u64>(), perm in any::<u64>()) {
        let page = shuffled(&random_page(seed, true), perm);
        let once = reading_order_sort(&page).unwrap();
        prop_assert_eq!(&reading_order_sort(&once).unwrap(), &once);
        for line in &once.lines {
            let xs: Vec<f64> = line.token_indices.iter().map(|&i| once.tokens[i].bbox.x0).collect();
            prop_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn detected_blocks_are_unions_of_lines(seed in any::<u64>()) {
        let page = detect_groups(&random_page(seed, true), &GroupingConfig::default());
        for line in &page.lines {
            let holders = page.blocks.iter().filter(|b| line.token_indices.iter().any(|i| b.token_indices.contains(i))).count();
            prop_assert_eq!(holders, 1);
            prop_assert!(page.blocks.iter().any(|b| line.token_indices.iter().all(|i| b.token_indices.contains(i))));
        }
    }

    #[test]
    fn allocation_partitions_tokens(seed in any::<u64>(), boxes in prop::collection::vec((0.0..500.0f64, 0.0..800.0f64, 5.0..300.0f64, 5.0..300.0f64), 1..10)) {
        let page = random_page(seed, true);
        let boxes: Vec<BBox> = boxes.iter().map(|&(x, y, w, h)| BBox::new(x, y, x + w, y + h)).collect();
        let groups = allocate_tokens(&page, &boxes, GroupKind::Block);
        let mut seen = vec![0; page.tokens.len()];
        for g in &groups {
            prop_assert!(g.token_indices.windows(2).all(|w| w[0] < w[1]));
            g.token_indices.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn relabeling_makes_every_group_uniform(seed in any::<u64>(), kind in prop_oneof![Just(GroupKind::Line), Just(GroupKind::Block)]) {
        let page = random_page(seed, true);
        let groups = page.covering_groups(kind);
        let relabeled = majority_vote_relabel(&page, &groups).unwrap();
        prop_assert!(groups.iter().all(|g| group_entropy(&relabeled, g) == 0.0));
    }

    #[test]
    fn zero_rate_perturbation_keeps_groups(seed in any::<u64>(), noise_seed in any::<u64>()) {
        let page = random_page(seed, false);
        let out = perturb_groups(&page, &PerturbConfig::with_rates(0.0, 0.0, 0.0), noise_seed).unwrap();
        prop_assert_eq!(token_sets(&out.blocks), token_sets(&page.blocks));
    }

    #[test]
    fn windows_cover_each_token_once(seed in any::<u64>(), max_len in 8usize..64, mode in 0usize..4) {
        let page = random_page(seed, true);
        let mode = [WindowMode::Baseline, WindowMode::SentenceBreak, WindowMode::Group(GroupKind::Line), WindowMode::Group(GroupKind::Block)][mode];
        let windows = build_windows(&page, mode, &vocab(), max_len).unwrap();
        let mut seen = vec![0; page.tokens.len()];
        for w in &windows {
            prop_assert!(w.len() <= max_len);
            prop_assert_eq!(w.token_ids[0], CLS);
            prop_assert_eq!(*w.token_ids.last().unwrap(), SEP);
            for (pos, o) in w.origin.iter().enumerate() {
                match o {
                    Some(i) => seen[*i] += 1,
                    None => prop_assert!([CLS, SEP, BLK].contains(&w.token_ids[pos])),
                }
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn indicators_are_the_only_difference(seed in any::<u64>(), max_len in 8usize..64, kind in prop_oneof![Just(GroupKind::Line), Just(GroupKind::Block)]) {
        let page = random_page(seed, true);
        let strip = |ws: &[scidoc::indicator::EncodedWindow]| -> Vec<usize> {
            ws.iter().flat_map(|w| w.token_ids.iter().copied().filter(|t| ![CLS, SEP, BLK].contains(t))).collect()
        };
        let base = build_windows(&page, WindowMode::Baseline, &vocab(), max_len).unwrap();
        let ind = build_windows(&page, WindowMode::Group(kind), &vocab(), max_len).unwrap();
        prop_assert_eq!(strip(&base), strip(&ind));
        let groups = page.covering_groups(kind);
        if groups.iter().all(|g| g.len() <= max_len - 2) {
            let blk: usize = ind.iter().map(|w| w.indicator_count()).sum();
            prop_assert_eq!(blk, groups.len() - ind.len());
        }
    }

    #[test]
    fn macro_f1_ignores_class_renaming(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200), shift in 1usize..6) {
        let labels = LabelSet::new((0..6).map(|i| format!("c{i}")).collect(), 0).unwrap();
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let rename = |v: &[usize]| v.iter().map(|&l| (l + shift) % 6).collect::<Vec<_>>();
        let a = macro_f1(&pred, &gold, &labels).unwrap().macro_f1;
        let b = macro_f1(&rename(&pred), &rename(&gold), &labels).unwrap().macro_f1;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn inconsistency_is_bounded_and_zero_iff_uniform(seed in any::<u64>(), c in 2usize..15) {
        let page = random_page(seed, true);
        let pred: Vec<usize> = page.tokens.iter().map(|t| t.label.unwrap() % c).collect();
        let r = group_inconsistency(&pred, &page.blocks).unwrap();
        prop_assert!(r.h_g >= 0.0 && r.h_g <= 100.0 * (c as f64).ln() + 1e-9);
        let uniform = page.blocks.iter().all(|g| g.token_indices.iter().all(|&i| pred[i] == pred[g.token_indices[0]]));
        prop_assert_eq!(r.h_g == 0.0, uniform);
    }

    #[test]
    fn folds_partition_papers(papers in prop::collection::vec(1usize..4, 2..30), seed in any::<u64>(), k in 2usize..8) {
        let mut pages = Vec::new();
        for (p, &n) in papers.iter().enumerate() {
            for i in 0..n {
                pages.push(Page::new(format!("p{p}"), i, 1.0, 1.0));
            }
        }
        let ds = Dataset::new(LabelSet::default15(), pages);
        prop_assume!(k <= papers.len());
        let folds = kfold_split_by_paper(&ds, k, seed).unwrap();
        let all: Vec<&String> = folds.iter().flat_map(|f| &f.test_papers).collect();
        let unique: BTreeSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), papers.len());
        prop_assert_eq!(unique.len(), papers.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hierarchical_predictions_are_group_uniform(seed in any::<u64>(), kind in prop_oneof![Just(GroupKind::Line), Just(GroupKind::Block)]) {
        let page = random_page(seed, true);
        let cfg = ModelConfig { d: 8, max_seq_len: 16, seed, ..Default::default() };
        let hier = HierConfig { page_layers: 1, group_kind: kind, ..Default::default() };
        let clf = HierClassifier::new(&cfg, &hier, 4, vocab(), LabelSet::default15()).unwrap();
        let pred = clf.predict_tokens(&page).unwrap();
        prop_assert_eq!(pred.len(), page.tokens.len());
        prop_assert_eq!(group_inconsistency(&pred, page.groups(kind)).unwrap().h_g, 0.0);
    }

    #[test]
    fn token_predictions_cover_the_page(seed in any::<u64>(), max_len in 8usize..40) {
        let page = random_page(seed, true);
        let cfg = ModelConfig { d: 8, max_seq_len: max_len, seed, ..Default::default() };
        let clf = TokenClassifier::new(&cfg, WindowMode::Group(GroupKind::Block), vocab(), LabelSet::default15()).unwrap();
        prop_assert_eq!(clf.predict_tokens(&page).unwrap().len(), page.tokens.len());
    }

    #[test]
    fn encode_group_ignores_other_groups(seed in any::<u64>()) {
        let page = random_page(seed, true);
        let cfg = ModelConfig { d: 8, max_seq_len: 16, ..Default::default() };
        let clf = HierClassifier::new(&cfg, &HierConfig { page_layers: 1, ..Default::default() }, 5, vocab(), LabelSet::default15()).unwrap();
        let first = &page.blocks[0];
        let mut edited = page.clone();
        for t in edited.tokens.iter_mut().skip(first.len()) {
            t.text = "w0".into();
        }
        let a = clf.model.encode_group(&clf.params, &page, first, &clf.vocab).unwrap();
        let b = clf.model.encode_group(&clf.params, &edited, first, &clf.vocab).unwrap();
        prop_assert_eq!(a, b);
    }
}
