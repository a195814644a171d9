//! Token classification with group-boundary indicator tokens.
//!
//! A page is linearized in token order. Whenever two consecutive tokens
//! belong to different groups a `[BLK]` token is inserted; it carries the
//! box of the group that follows. The same builder without indicators gives
//! the plain token baseline, and with sentence segments instead of groups it
//! gives the sentence-break variant.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::model::{BBox, Dataset, GroupKind, LabelSet, Page};
use crate::nn::{argmax, cross_entropy_loss, quantize_bbox, EncoderInput, Grads, LayoutIndex, Linear, Mat, Mode, ModelConfig, ParamStore, TokenEncoder};
use crate::train::{fit, Objective, TrainHyper, TrainLog};
use crate::vocab::{Vocab, BLK, CLS, SEP};

/// Where indicator tokens go.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WindowMode {
    /// No indicators.
    Baseline,
    /// Indicators between rule-detected sentences.
    SentenceBreak,
    /// Indicators between visual groups.
    Group(GroupKind),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncodedWindow {
    pub token_ids: Vec<usize>,
    pub bboxes: Vec<BBox>,
    /// `None` on specials and unlabeled tokens; excluded from loss and metrics.
    pub label_ids: Vec<Option<usize>>,
    /// Page token index for every non-special position.
    pub origin: Vec<Option<usize>>,
    pub paper_id: String,
    pub page_index: usize,
    /// Page token range covered by this window.
    pub start: usize,
    pub end: usize,
    pub page_width: f64,
    pub page_height: f64,
}

impl EncodedWindow {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn layout(&self, buckets: usize) -> Vec<LayoutIndex> {
        self.bboxes
            .iter()
            .map(|b| quantize_bbox(b, self.page_width, self.page_height, buckets).0)
            .collect()
    }

    pub fn indicator_count(&self) -> usize {
        self.token_ids.iter().filter(|&&t| t == BLK).count()
    }
}

/// A run of consecutive page tokens that forms one unit for packing.
struct Segment {
    start: usize,
    end: usize,
    bbox: BBox,
}

enum Item {
    Token(usize),
    Indicator(BBox),
}

const ABBREVIATIONS: &[&str] = &[
    "al.", "approx.", "cf.", "dr.", "e.g.", "eq.", "eqs.", "et", "etc.", "fig.", "figs.", "i.e.", "mr.", "mrs.", "ms.", "no.",
    "pp.", "prof.", "ref.", "refs.", "resp.", "sec.", "tab.", "vol.", "vs.",
];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{bb}'];

fn ends_sentence(text: &str) -> bool {
    let core = text.trim_end_matches(CLOSERS);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    if core.ends_with('.') {
        if ABBREVIATIONS.contains(&core.to_lowercase().as_str()) {
            return false;
        }
        let mut chars = core.chars();
        if let (Some(c), Some('.'), None) = (chars.next(), chars.next(), chars.next()) {
            if c.is_uppercase() {
                return false;
            }
        }
    }
    true
}

/// Page token indices after which a sentence ends. The last token never
/// yields a boundary since nothing follows it.
pub fn sentence_break_boundaries(page: &Page) -> Vec<usize> {
    let n = page.tokens.len();
    (0..n.saturating_sub(1)).filter(|&i| ends_sentence(&page.tokens[i].text)).collect()
}

fn segments(page: &Page, mode: WindowMode) -> Vec<Segment> {
    let n = page.tokens.len();
    let span_box = |s: usize, e: usize| BBox::union_all(page.tokens[s..e].iter().map(|t| &t.bbox)).unwrap();
    match mode {
        WindowMode::Baseline => vec![Segment { start: 0, end: n, bbox: page.extent() }],
        WindowMode::SentenceBreak => {
            let mut out = Vec::new();
            let mut start = 0;
            for b in sentence_break_boundaries(page) {
                out.push(Segment { start, end: b + 1, bbox: span_box(start, b + 1) });
                start = b + 1;
            }
            out.push(Segment { start, end: n, bbox: span_box(start, n) });
            out
        }
        WindowMode::Group(kind) => {
            let groups = page.covering_groups(kind);
            let mut owner = vec![0; n];
            for (gi, g) in groups.iter().enumerate() {
                for &t in &g.token_indices {
                    owner[t] = gi;
                }
            }
            let mut out = Vec::new();
            let mut start = 0;
            for i in 1..=n {
                if i == n || owner[i] != owner[start] {
                    out.push(Segment { start, end: i, bbox: groups[owner[start]].bbox });
                    start = i;
                }
            }
            out
        }
    }
}

/// Linearize a page into encoder windows of at most `max_len` positions.
/// Windows break only between segments unless one segment alone exceeds the
/// capacity, in which case it is cut without an indicator at the cut.
pub fn build_windows(page: &Page, mode: WindowMode, vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedWindow>> {
    if page.tokens.is_empty() {
        return Err(Error::Input(format!("page {}:{} has no tokens", page.paper_id, page.page_index)));
    }
    if max_len < 3 {
        return Err(Error::config("max_seq_len", "must leave room for [CLS], [SEP] and one token"));
    }
    let cap = max_len - 2;
    let mut windows = Vec::new();
    let mut cur: Vec<Item> = Vec::new();
    let close = |cur: &mut Vec<Item>, windows: &mut Vec<EncodedWindow>| {
        if !cur.is_empty() {
            windows.push(finish_window(page, vocab, std::mem::take(cur)));
        }
    };
    for seg in segments(page, mode) {
        let len = seg.end - seg.start;
        let need = len + usize::from(!cur.is_empty());
        if cur.len() + need <= cap {
            if !cur.is_empty() {
                cur.push(Item::Indicator(seg.bbox));
            }
            cur.extend((seg.start..seg.end).map(Item::Token));
            continue;
        }
        close(&mut cur, &mut windows);
        let mut s = seg.start;
        while seg.end - s > cap {
            cur.extend((s..s + cap).map(Item::Token));
            close(&mut cur, &mut windows);
            s += cap;
        }
        cur.extend((s..seg.end).map(Item::Token));
    }
    close(&mut cur, &mut windows);
    Ok(windows)
}

/// [`build_windows`] with indicators between groups of `kind`.
pub fn build_ivila_windows(page: &Page, kind: GroupKind, vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedWindow>> {
    build_windows(page, WindowMode::Group(kind), vocab, max_len)
}

fn finish_window(page: &Page, vocab: &Vocab, items: Vec<Item>) -> EncodedWindow {
    let n = items.len() + 2;
    let mut w = EncodedWindow {
        token_ids: Vec::with_capacity(n),
        bboxes: Vec::with_capacity(n),
        label_ids: Vec::with_capacity(n),
        origin: Vec::with_capacity(n),
        paper_id: page.paper_id.clone(),
        page_index: page.page_index,
        start: usize::MAX,
        end: 0,
        page_width: page.width,
        page_height: page.height,
    };
    let special = |w: &mut EncodedWindow, id: usize, bbox: BBox| {
        w.token_ids.push(id);
        w.bboxes.push(bbox);
        w.label_ids.push(None);
        w.origin.push(None);
    };
    special(&mut w, CLS, page.extent());
    for item in items {
        match item {
            Item::Token(i) => {
                let t = &page.tokens[i];
                w.token_ids.push(vocab.id(&t.text));
                w.bboxes.push(t.bbox);
                w.label_ids.push(t.label);
                w.origin.push(Some(i));
                w.start = w.start.min(i);
                w.end = w.end.max(i + 1);
            }
            Item::Indicator(b) => special(&mut w, BLK, b),
        }
    }
    special(&mut w, SEP, page.extent());
    w
}

#[derive(Serialize)]
struct WindowRecord<'a> {
    paper_id: &'a str,
    page_index: usize,
    start: usize,
    end: usize,
    tokens: Vec<&'a str>,
    token_ids: &'a [usize],
    bboxes: Vec<[f64; 4]>,
    label_ids: &'a [Option<usize>],
    origin: &'a [Option<usize>],
}

/// Write windows as JSON lines, one window per line.
pub fn dump_windows_jsonl<W: Write>(mut out: W, windows: &[EncodedWindow], vocab: &Vocab) -> std::io::Result<()> {
    for w in windows {
        let rec = WindowRecord {
            paper_id: &w.paper_id,
            page_index: w.page_index,
            start: w.start,
            end: w.end,
            tokens: w.token_ids.iter().map(|&t| vocab.word(t).unwrap_or("[UNK]")).collect(),
            token_ids: &w.token_ids,
            bboxes: w.bboxes.iter().map(BBox::to_array).collect(),
            label_ids: &w.label_ids,
            origin: &w.origin,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Encoder plus a linear head over every position.
#[derive(Clone, Debug)]
pub struct TokenModel {
    pub config: ModelConfig,
    pub mode: WindowMode,
    pub encoder: TokenEncoder,
    pub head: Linear,
}

impl TokenModel {
    pub fn new(config: &ModelConfig, mode: WindowMode, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TokenEncoder::new(store, "encoder", config, config.n_layers, true, &mut rng);
        let head = Linear::new(store, "classifier", config.d, config.n_classes, &mut rng);
        Ok(TokenModel { config: config.clone(), mode, encoder, head })
    }

    pub fn logits(&self, p: &ParamStore, w: &EncodedWindow, mode: &mut Mode) -> Result<Mat> {
        let layout = w.layout(self.config.coord_buckets);
        let mask = vec![true; w.len()];
        let input = EncoderInput { ids: &w.token_ids, positions: None, layout: Some(&layout), mask: &mask };
        let (h, _) = self.encoder.forward(p, &input, mode)?;
        Ok(self.head.forward(p, &h))
    }

    /// Summed cross entropy over labeled positions; adds its gradient to `g`.
    pub fn accumulate(&self, p: &ParamStore, w: &EncodedWindow, mode: &mut Mode, g: &mut Grads) -> Result<(f64, usize)> {
        if !w.label_ids.iter().any(Option::is_some) {
            return Ok((0.0, 0));
        }
        let layout = w.layout(self.config.coord_buckets);
        let mask = vec![true; w.len()];
        let input = EncoderInput { ids: &w.token_ids, positions: None, layout: Some(&layout), mask: &mask };
        let (h, cache) = self.encoder.forward(p, &input, mode)?;
        let logits = self.head.forward(p, &h);
        let mut out = cross_entropy_loss(&logits, &w.label_ids)?;
        let count = out.count as f64;
        for v in &mut out.grad.data {
            *v *= count;
        }
        let dh = self.head.backward(p, &h, &out.grad, g);
        self.encoder.backward(p, &cache, &dh, g);
        Ok((out.loss * count, out.count))
    }

    /// Mean loss and its gradient over a set of windows.
    pub fn loss_and_grads(&self, p: &ParamStore, windows: &[EncodedWindow]) -> Result<(f64, Grads)> {
        let mut g = p.zero_grads();
        let (mut loss, mut count) = (0.0, 0);
        for w in windows {
            let (l, c) = self.accumulate(p, w, &mut Mode::Eval, &mut g)?;
            loss += l;
            count += c;
        }
        if count == 0 {
            return Err(Error::Input("no labeled tokens".into()));
        }
        g.scale(1.0 / count as f64);
        Ok((loss / count as f64, g))
    }

    /// Predicted class for every page token covered by `windows`.
    pub fn predict_windows(&self, p: &ParamStore, windows: &[EncodedWindow], n_tokens: usize) -> Result<Vec<usize>> {
        let mut out = vec![usize::MAX; n_tokens];
        for w in windows {
            if let Some(&bad) = w.token_ids.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(Error::Model(format!("token id {bad} not in the model vocabulary")));
            }
            let logits = self.logits(p, w, &mut Mode::Eval)?;
            for (pos, origin) in w.origin.iter().enumerate() {
                if let Some(i) = *origin {
                    out[i] = argmax(logits.row(pos));
                }
            }
        }
        if out.contains(&usize::MAX) {
            return Err(Error::Input("windows do not cover every page token".into()));
        }
        Ok(out)
    }
}

/// A trained token classifier with everything needed to label new pages.
#[derive(Clone, Debug)]
pub struct TokenClassifier {
    pub model: TokenModel,
    pub params: ParamStore,
    pub vocab: Vocab,
    pub labels: LabelSet,
}

impl TokenClassifier {
    /// Untrained model over `vocab`, with `n_classes` taken from `labels`.
    pub fn new(config: &ModelConfig, mode: WindowMode, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        let config = ModelConfig { vocab_size: vocab.len(), n_classes: labels.len(), ..config.clone() };
        let mut params = ParamStore::new();
        let model = TokenModel::new(&config, mode, &mut params)?;
        Ok(TokenClassifier { model, params, vocab, labels })
    }

    pub fn windows(&self, page: &Page) -> Result<Vec<EncodedWindow>> {
        build_windows(page, self.model.mode, &self.vocab, self.model.config.max_seq_len)
    }

    /// One label per page token.
    pub fn predict_tokens(&self, page: &Page) -> Result<Vec<usize>> {
        let windows = self.windows(page)?;
        self.model.predict_windows(&self.params, &windows, page.tokens.len())
    }
}

struct TokenObjective<'a> {
    model: &'a TokenModel,
    windows: Vec<EncodedWindow>,
    dev: Vec<(Vec<EncodedWindow>, Vec<usize>, usize)>,
    labels: &'a LabelSet,
}

impl Objective for TokenObjective<'_> {
    fn n_examples(&self) -> usize {
        self.windows.len()
    }

    fn accumulate(&self, p: &ParamStore, i: usize, mode: &mut Mode, g: &mut Grads) -> Result<(f64, usize)> {
        self.model.accumulate(p, &self.windows[i], mode, g)
    }

    fn train_accuracy(&self, p: &ParamStore) -> Result<f64> {
        let (mut hit, mut total) = (0, 0);
        for w in &self.windows {
            let logits = self.model.logits(p, w, &mut Mode::Eval)?;
            for (pos, label) in w.label_ids.iter().enumerate() {
                if let Some(y) = label {
                    total += 1;
                    hit += usize::from(argmax(logits.row(pos)) == *y);
                }
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    fn dev_score(&self, p: &ParamStore) -> Result<Option<f64>> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        let (mut pred, mut gold) = (Vec::new(), Vec::new());
        for (windows, g, n) in &self.dev {
            pred.extend(self.model.predict_windows(p, windows, *n)?);
            gold.extend_from_slice(g);
        }
        Ok(Some(macro_f1(&pred, &gold, self.labels)?.macro_f1))
    }
}

/// Train a token classifier on `train`, keeping the epoch with the best dev
/// Macro F1 when `dev` is given. The vocabulary is built from `train`.
pub fn train_token_classifier(
    train: &Dataset,
    dev: Option<&Dataset>,
    config: &ModelConfig,
    mode: WindowMode,
    hyper: &TrainHyper,
) -> Result<(TokenClassifier, TrainLog)> {
    if train.pages.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let vocab = Vocab::build(train, 1);
    let mut clf = TokenClassifier::new(config, mode, vocab, train.labels.clone())?;
    let mut windows = Vec::new();
    for page in &train.pages {
        windows.extend(clf.windows(page)?);
    }
    let mut dev_sets = Vec::new();
    for page in dev.map(|d| d.pages.as_slice()).unwrap_or_default() {
        let Some(gold) = page.gold_labels() else { continue };
        dev_sets.push((clf.windows(page)?, gold, page.tokens.len()));
    }
    let obj = TokenObjective { model: &clf.model, windows, dev: dev_sets, labels: &clf.labels };
    let mut params = clf.params.clone();
    let log = fit(&obj, &mut params, hyper, config.dropout_rate)?;
    clf.params = params;
    Ok((clf, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Token, VisualGroup};
    use crate::vocab::{PAD, UNK};

    /// `groups` token counts laid out one group per row.
    fn page(groups: &[usize]) -> Page {
        let mut p = Page::new("paper", 0, 1000.0, 1000.0);
        let mut k = 0;
        for (gi, &n) in groups.iter().enumerate() {
            let y = 10.0 + 20.0 * gi as f64;
            let mut ix = Vec::new();
            for j in 0..n {
                let x = 1.0 + (j % 90) as f64 * 11.0;
                let yy = y + (j / 90) as f64 * 0.01;
                p.tokens.push(Token::new(format!("w{}", k % 7), BBox::new(x, yy, x + 9.0, yy + 8.0), Some(gi % 3)));
                ix.push(k);
                k += 1;
            }
            let bbox = BBox::union_all(ix.iter().map(|&i| &p.tokens[i].bbox)).unwrap();
            p.blocks.push(VisualGroup::new(bbox, GroupKind::Block, ix));
        }
        p
    }

    fn vocab() -> Vocab {
        let mut words: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLK]"].map(String::from).to_vec();
        words.extend((0..7).map(|i| format!("w{i}")));
        Vocab::from_words(words)
    }

    #[test]
    fn two_groups_template() {
        let p = page(&[3, 3]);
        let w = build_ivila_windows(&p, GroupKind::Block, &vocab(), 16).unwrap();
        assert_eq!(w.len(), 1);
        let ids = &w[0].token_ids;
        assert_eq!(ids.len(), 9);
        assert_eq!(ids[0], CLS);
        assert_eq!(ids[4], BLK);
        assert_eq!(ids[8], SEP);
        assert_eq!(w[0].bboxes[4], p.blocks[1].bbox);
        assert_eq!(w[0].bboxes[0], p.extent());
        assert_eq!(w[0].label_ids[4], None);
        assert_eq!(w[0].origin[5], Some(3));
    }

    #[test]
    fn single_group_has_no_indicator() {
        let p = page(&[5]);
        let w = build_ivila_windows(&p, GroupKind::Block, &vocab(), 16).unwrap();
        assert_eq!(w[0].indicator_count(), 0);
    }

    #[test]
    fn oversized_group_splits_without_indicator() {
        let p = page(&[600]);
        let w = build_ivila_windows(&p, GroupKind::Block, &vocab(), 512).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.iter().map(EncodedWindow::indicator_count).sum::<usize>(), 0);
        assert_eq!((w[0].start, w[0].end, w[1].start, w[1].end), (0, 510, 510, 600));
    }

    #[test]
    fn windows_break_at_group_boundaries() {
        let p = page(&[6, 6, 6, 6]);
        let w = build_ivila_windows(&p, GroupKind::Block, &vocab(), 16).unwrap();
        // capacity 14: two groups plus one indicator fit per window
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.indicator_count() == 1 && w.token_ids[1] != BLK));
        assert_eq!(w.iter().map(EncodedWindow::indicator_count).sum::<usize>(), 4 - 2);
        let baseline = build_windows(&p, WindowMode::Baseline, &vocab(), 16).unwrap();
        let strip = |ws: &[EncodedWindow]| -> Vec<usize> {
            ws.iter().flat_map(|w| w.token_ids.iter().copied().filter(|&t| t > BLK || t == UNK)).collect()
        };
        assert_eq!(strip(&w), strip(&baseline));
        assert!(strip(&w).iter().all(|&t| t != PAD));
    }

    #[test]
    fn sentence_rules() {
        let mk = |words: &[&str]| {
            let mut p = Page::new("p", 0, 100.0, 100.0);
            for (i, w) in words.iter().enumerate() {
                let x = i as f64;
                p.tokens.push(Token::new(*w, BBox::new(x, 0.0, x + 0.5, 1.0), None));
            }
            p
        };
        assert_eq!(sentence_break_boundaries(&mk(&["End.", "Next"])), vec![0]);
        assert!(sentence_break_boundaries(&mk(&["et", "al.", "2020"])).is_empty());
        assert!(sentence_break_boundaries(&mk(&["no", "stop", "here"])).is_empty());
        assert_eq!(sentence_break_boundaries(&mk(&["J.", "Smith", "said", "so.)", "Then", "Fig.", "3"])), vec![3]);
        assert_eq!(sentence_break_boundaries(&mk(&["Why?", "Because!", "Done."])), vec![0, 1]);
    }

    #[test]
    fn every_token_lands_once() {
        let p = page(&[4, 30, 2, 9, 1]);
        for mode in [WindowMode::Baseline, WindowMode::SentenceBreak, WindowMode::Group(GroupKind::Block)] {
            let ws = build_windows(&p, mode, &vocab(), 12).unwrap();
            let mut seen = vec![0; p.tokens.len()];
            for w in &ws {
                assert!(w.len() <= 12);
                let n = w.token_ids.len();
                assert_eq!((w.bboxes.len(), w.label_ids.len(), w.origin.len()), (n, n, n));
                for o in w.origin.iter().flatten() {
                    seen[*o] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        assert!(build_windows(&Page::new("e", 0, 1.0, 1.0), WindowMode::Baseline, &vocab(), 12).is_err());
    }

    #[test]
    fn zero_head_predicts_class_zero() {
        let p = page(&[3, 4]);
        let cfg = ModelConfig { n_layers: 1, max_seq_len: 32, ..Default::default() };
        let mut clf = TokenClassifier::new(&cfg, WindowMode::Group(GroupKind::Block), vocab(), LabelSet::default15()).unwrap();
        let w = clf.model.head.w;
        clf.params.get_mut(w).fill(0.0);
        assert_eq!(clf.predict_tokens(&p).unwrap(), vec![0; 7]);
    }

    #[test]
    fn dump_has_one_line_per_window() {
        let p = page(&[6, 6, 6, 6]);
        let ws = build_ivila_windows(&p, GroupKind::Block, &vocab(), 16).unwrap();
        let mut buf = Vec::new();
        dump_windows_jsonl(&mut buf, &ws, &vocab()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["tokens"][0], "[CLS]");
    }
}
