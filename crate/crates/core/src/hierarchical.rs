//! Hierarchical group-then-page model and the independent group classifier.
//!
//! The hierarchical model encodes every group on its own with a shallow
//! encoder over its first `n_tilde` tokens, averages the token states,
//! adds the layout embedding of one box per group, and runs a page-level
//! encoder over the resulting group vectors. Every token inherits the label
//! of its group.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::grouping::modal_label;
use crate::model::{BBox, Dataset, GroupKind, LabelSet, Page, VisualGroup};
use crate::nn::encoder::EncoderCache;
use crate::nn::layers::StackCache;
use crate::nn::ops::softmax_in_place;
use crate::nn::{
    argmax, cross_entropy_loss, quantize_bbox, EncoderInput, EncoderStack, Grads, Init, LayoutEmbedding, LayoutIndex,
    Linear, Mat, Mode, ModelConfig, ParamStore, TensorId, TokenEncoder,
};
use crate::train::{fit, Objective, TrainHyper, TrainLog};
use crate::vocab::{Vocab, CLS, PAD};

/// Which box supplies the layout embedding of a group vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSource {
    #[default]
    FirstTokenBbox,
    GroupBbox,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanOverTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierConfig {
    pub group_layers: usize,
    pub page_layers: usize,
    /// Tokens kept per group; 0 picks it from the training data.
    pub truncation: usize,
    pub aggregation: Aggregation,
    pub position_source: PositionSource,
    pub group_kind: GroupKind,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig {
            group_layers: 1,
            page_layers: 12,
            truncation: 0,
            aggregation: Aggregation::MeanOverTokens,
            position_source: PositionSource::FirstTokenBbox,
            group_kind: GroupKind::Block,
        }
    }
}

impl HierConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hier.group_layers", self.group_layers), ("hier.page_layers", self.page_layers)] {
            if v != 1 && v != 12 {
                return Err(Error::config(name, "must be 1 or 12"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationStats {
    pub n_tilde: usize,
    /// Mean over pages of tokens per group.
    pub mean_tokens_per_group: f64,
    pub group_len_mean: f64,
    pub group_len_std: f64,
    pub group_len_p50: usize,
    pub group_len_p95: usize,
    pub mean_tokens_per_page: f64,
    pub mean_groups_per_page: f64,
}

/// Pick `n_tilde = round(mean over pages of N / m)`, clamped to
/// `[1, max_len]`, where `N` is the page token count and `m` its group count.
pub fn choose_truncation(dataset: &Dataset, kind: GroupKind, max_len: usize) -> Result<TruncationStats> {
    let mut ratios = Vec::new();
    let mut lens = Vec::new();
    let (mut tokens, mut groups) = (0.0, 0.0);
    for page in dataset.pages.iter().filter(|p| !p.tokens.is_empty()) {
        let gs = page.covering_groups(kind);
        ratios.push(page.tokens.len() as f64 / gs.len() as f64);
        lens.extend(gs.iter().map(VisualGroup::len));
        tokens += page.tokens.len() as f64;
        groups += gs.len() as f64;
    }
    if ratios.is_empty() {
        return Err(Error::Input("cannot choose a truncation from an empty dataset".into()));
    }
    let pages = ratios.len() as f64;
    let mean_ratio = ratios.iter().sum::<f64>() / pages;
    let lf: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
    let (len_mean, len_std) = crate::eval::mean_std(&lf);
    lens.sort_unstable();
    let pct = |q: f64| lens[((q * (lens.len() - 1) as f64).round() as usize).min(lens.len() - 1)];
    Ok(TruncationStats {
        n_tilde: (mean_ratio.round() as usize).clamp(1, max_len),
        mean_tokens_per_group: mean_ratio,
        group_len_mean: len_mean,
        group_len_std: len_std,
        group_len_p50: pct(0.5),
        group_len_p95: pct(0.95),
        mean_tokens_per_page: tokens / pages,
        mean_groups_per_page: groups / pages,
    })
}

/// Contiguous group ranges of at most `max` groups, halving at the midpoint.
fn chunk_ranges(range: Range<usize>, max: usize, out: &mut Vec<Range<usize>>) {
    if range.len() <= max {
        out.push(range);
        return;
    }
    let mid = range.start + range.len() / 2;
    chunk_ranges(range.start..mid, max, out);
    chunk_ranges(mid..range.end, max, out);
}

/// Group-level gold labels: the group's own label, else the modal token
/// label. Also counts groups whose token labels disagree.
pub fn group_targets(page: &Page, groups: &[VisualGroup]) -> (Vec<Option<usize>>, usize) {
    let mut mixed = 0;
    let targets = groups
        .iter()
        .map(|g| {
            let labels: Vec<usize> = g.token_indices.iter().filter_map(|&i| page.tokens[i].label).collect();
            if labels.windows(2).any(|w| w[0] != w[1]) {
                mixed += 1;
            }
            g.label.or_else(|| modal_label(labels))
        })
        .collect();
    (targets, mixed)
}

struct GroupCache {
    enc: EncoderCache,
    rows: usize,
    layout: LayoutIndex,
}

struct ChunkCache {
    groups: Vec<GroupCache>,
    drop: Option<Vec<f64>>,
    stack: StackCache,
    s: Mat,
}

#[derive(Clone, Debug)]
pub struct HierModel {
    pub config: ModelConfig,
    pub hier: HierConfig,
    /// Resolved tokens kept per group.
    pub truncation: usize,
    pub group_encoder: TokenEncoder,
    pub layout: LayoutEmbedding,
    pub page_positions: TensorId,
    pub page_encoder: EncoderStack,
    pub head: Linear,
}

impl HierModel {
    pub fn new(config: &ModelConfig, hier: &HierConfig, truncation: usize, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        hier.validate()?;
        if truncation == 0 || truncation > config.max_seq_len {
            return Err(Error::config("hier.truncation", format!("must lie in [1, {}]", config.max_seq_len)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let group_encoder = TokenEncoder::new(store, "group_encoder", config, hier.group_layers, false, &mut rng);
        let layout = LayoutEmbedding::new(store, "group_layout", config.coord_buckets, config.d, &mut rng);
        let page_positions = store.add("page_encoder.positions", &[config.max_seq_len, config.d], Init::Normal(0.1), &mut rng);
        let page_encoder = EncoderStack::new(store, "page_encoder", hier.page_layers, config.d, config.n_heads, config.ff_dim(), &mut rng);
        let head = Linear::new(store, "classifier", config.d, config.n_classes, &mut rng);
        Ok(HierModel {
            config: config.clone(),
            hier: hier.clone(),
            truncation,
            group_encoder,
            layout,
            page_positions,
            page_encoder,
            head,
        })
    }

    fn position_box(&self, page: &Page, group: &VisualGroup) -> BBox {
        match self.hier.position_source {
            PositionSource::FirstTokenBbox => page.tokens[group.token_indices[0]].bbox,
            PositionSource::GroupBbox => group.bbox,
        }
    }

    fn encode_group_cached(&self, p: &ParamStore, page: &Page, group: &VisualGroup, vocab: &Vocab, mode: &mut Mode) -> Result<(Vec<f64>, GroupCache)> {
        if group.is_empty() {
            return Err(Error::Input("cannot encode an empty group".into()));
        }
        let ids: Vec<usize> = group.token_indices.iter().take(self.truncation).map(|&i| vocab.id(&page.tokens[i].text)).collect();
        let mask = vec![true; ids.len()];
        let input = EncoderInput { ids: &ids, positions: None, layout: None, mask: &mask };
        let (h, enc) = self.group_encoder.forward(p, &input, mode)?;
        let d = self.config.d;
        let mut out = vec![0.0; d];
        for r in 0..h.rows {
            for (o, v) in out.iter_mut().zip(h.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / h.rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let (layout, _) = quantize_bbox(&self.position_box(page, group), page.width, page.height, self.config.coord_buckets);
        self.layout.add_into(p, &layout, &mut out);
        Ok((out, GroupCache { enc, rows: h.rows, layout }))
    }

    /// Group vector: mean of the group encoder's states over the kept tokens
    /// plus the layout embedding of the configured box.
    pub fn encode_group(&self, p: &ParamStore, page: &Page, group: &VisualGroup, vocab: &Vocab) -> Result<Vec<f64>> {
        self.encode_group_cached(p, page, group, vocab, &mut Mode::Eval).map(|(h, _)| h)
    }

    fn forward_chunk(&self, p: &ParamStore, page: &Page, groups: &[VisualGroup], vocab: &Vocab, mode: &mut Mode) -> Result<(Mat, ChunkCache)> {
        let d = self.config.d;
        let m = groups.len();
        let mut x = Mat::zeros(m, d);
        let mut caches = Vec::with_capacity(m);
        let pos = p.get(self.page_positions);
        for (j, g) in groups.iter().enumerate() {
            let (h, c) = self.encode_group_cached(p, page, g, vocab, mode)?;
            for (k, v) in x.row_mut(j).iter_mut().enumerate() {
                *v = h[k] + pos[j * d + k];
            }
            caches.push(c);
        }
        let drop = mode.dropout_mask(x.data.len());
        if let Some(mask) = &drop {
            x.data.iter_mut().zip(mask).for_each(|(v, s)| *v *= s);
        }
        let (s, stack) = self.page_encoder.forward(p, x, &vec![true; m], mode);
        let logits = self.head.forward(p, &s);
        Ok((logits, ChunkCache { groups: caches, drop, stack, s }))
    }

    fn backward_chunk(&self, p: &ParamStore, c: &ChunkCache, dlogits: &Mat, g: &mut Grads) {
        let d = self.config.d;
        let ds = self.head.backward(p, &c.s, dlogits, g);
        let mut dx = self.page_encoder.backward(p, &c.stack, &ds, g);
        if let Some(mask) = &c.drop {
            dx.data.iter_mut().zip(mask).for_each(|(v, s)| *v *= s);
        }
        {
            let gp = g.get_mut(self.page_positions);
            for (a, v) in gp[..dx.data.len()].iter_mut().zip(&dx.data) {
                *a += v;
            }
        }
        for (j, gc) in c.groups.iter().enumerate() {
            let dh = dx.row(j);
            self.layout.backward_row(&gc.layout, dh, g);
            let inv = 1.0 / gc.rows as f64;
            let mut dtok = Mat::zeros(gc.rows, d);
            for r in 0..gc.rows {
                for (o, v) in dtok.row_mut(r).iter_mut().zip(dh) {
                    *o = v * inv;
                }
            }
            self.group_encoder.backward(p, &gc.enc, &dtok, g);
        }
    }

    fn chunks(&self, m: usize) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        chunk_ranges(0..m, self.config.max_seq_len, &mut out);
        out
    }
}

/// Shared interface of the two group-level classifiers.
pub trait GroupModel {
    fn n_classes(&self) -> usize;

    /// Logits `[groups x classes]`.
    fn group_logits(&self, p: &ParamStore, page: &Page, groups: &[VisualGroup], vocab: &Vocab) -> Result<Mat>;

    /// Summed group-level cross entropy; adds its gradient to `g`.
    fn accumulate(
        &self,
        p: &ParamStore,
        page: &Page,
        groups: &[VisualGroup],
        targets: &[Option<usize>],
        vocab: &Vocab,
        mode: &mut Mode,
        g: &mut Grads,
    ) -> Result<(f64, usize)>;
}

fn summed_ce(logits: &Mat, targets: &[Option<usize>]) -> Result<Option<(f64, Mat, usize)>> {
    if !targets.iter().any(Option::is_some) {
        return Ok(None);
    }
    let mut out = cross_entropy_loss(logits, targets)?;
    let count = out.count as f64;
    out.grad.data.iter_mut().for_each(|v| *v *= count);
    Ok(Some((out.loss * count, out.grad, out.count)))
}

impl GroupModel for HierModel {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn group_logits(&self, p: &ParamStore, page: &Page, groups: &[VisualGroup], vocab: &Vocab) -> Result<Mat> {
        let mut out = Mat::zeros(groups.len(), self.config.n_classes);
        for r in self.chunks(groups.len()) {
            let (logits, _) = self.forward_chunk(p, page, &groups[r.clone()], vocab, &mut Mode::Eval)?;
            out.data[r.start * logits.cols..r.end * logits.cols].copy_from_slice(&logits.data);
        }
        Ok(out)
    }

    fn accumulate(
        &self,
        p: &ParamStore,
        page: &Page,
        groups: &[VisualGroup],
        targets: &[Option<usize>],
        vocab: &Vocab,
        mode: &mut Mode,
        g: &mut Grads,
    ) -> Result<(f64, usize)> {
        let (mut loss, mut count) = (0.0, 0);
        for r in self.chunks(groups.len()) {
            let t = &targets[r.clone()];
            if !t.iter().any(Option::is_some) {
                continue;
            }
            let (logits, cache) = self.forward_chunk(p, page, &groups[r], vocab, mode)?;
            if let Some((l, dlogits, c)) = summed_ce(&logits, t)? {
                self.backward_chunk(p, &cache, &dlogits, g);
                loss += l;
                count += c;
            }
        }
        Ok((loss, count))
    }
}

/// Classifies every group on its own: `[CLS]` plus the group's tokens run
/// through a full-depth layout-aware encoder and the `[CLS]` state feeds the
/// head. The groups of a page form one batch padded to its longest member.
#[derive(Clone, Debug)]
pub struct SimpleGroupModel {
    pub config: ModelConfig,
    pub encoder: TokenEncoder,
    pub head: Linear,
}

struct SimpleInput {
    ids: Vec<usize>,
    layout: Vec<LayoutIndex>,
    mask: Vec<bool>,
}

impl SimpleGroupModel {
    pub fn new(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TokenEncoder::new(store, "encoder", config, config.n_layers, true, &mut rng);
        let head = Linear::new(store, "classifier", config.d, config.n_classes, &mut rng);
        Ok(SimpleGroupModel { config: config.clone(), encoder, head })
    }

    fn inputs(&self, page: &Page, groups: &[VisualGroup], vocab: &Vocab) -> Vec<SimpleInput> {
        let width = groups.iter().map(|g| g.len() + 1).max().unwrap_or(1).min(self.config.max_seq_len);
        let q = |b: &BBox| quantize_bbox(b, page.width, page.height, self.config.coord_buckets).0;
        groups
            .iter()
            .map(|g| {
                let mut s = SimpleInput { ids: vec![CLS], layout: vec![q(&g.bbox)], mask: vec![true] };
                for &i in g.token_indices.iter().take(width - 1) {
                    s.ids.push(vocab.id(&page.tokens[i].text));
                    s.layout.push(q(&page.tokens[i].bbox));
                    s.mask.push(true);
                }
                while s.ids.len() < width {
                    s.ids.push(PAD);
                    s.layout.push([0; 6]);
                    s.mask.push(false);
                }
                s
            })
            .collect()
    }
}

impl GroupModel for SimpleGroupModel {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn group_logits(&self, p: &ParamStore, page: &Page, groups: &[VisualGroup], vocab: &Vocab) -> Result<Mat> {
        let mut cls = Mat::zeros(groups.len(), self.config.d);
        for (j, s) in self.inputs(page, groups, vocab).iter().enumerate() {
            let input = EncoderInput { ids: &s.ids, positions: None, layout: Some(&s.layout), mask: &s.mask };
            let (h, _) = self.encoder.forward(p, &input, &mut Mode::Eval)?;
            cls.row_mut(j).copy_from_slice(h.row(0));
        }
        Ok(self.head.forward(p, &cls))
    }

    fn accumulate(
        &self,
        p: &ParamStore,
        page: &Page,
        groups: &[VisualGroup],
        targets: &[Option<usize>],
        vocab: &Vocab,
        mode: &mut Mode,
        g: &mut Grads,
    ) -> Result<(f64, usize)> {
        let (mut loss, mut count) = (0.0, 0);
        for (s, t) in self.inputs(page, groups, vocab).iter().zip(targets) {
            if t.is_none() {
                continue;
            }
            let input = EncoderInput { ids: &s.ids, positions: None, layout: Some(&s.layout), mask: &s.mask };
            let (h, cache) = self.encoder.forward(p, &input, mode)?;
            let cls = Mat::from_vec(1, self.config.d, h.row(0).to_vec());
            let logits = self.head.forward(p, &cls);
            let Some((l, dlogits, c)) = summed_ce(&logits, std::slice::from_ref(t))? else { continue };
            let dcls = self.head.backward(p, &cls, &dlogits, g);
            let mut dh = Mat::zeros(h.rows, h.cols);
            dh.row_mut(0).copy_from_slice(dcls.row(0));
            self.encoder.backward(p, &cache, &dh, g);
            loss += l;
            count += c;
        }
        Ok((loss, count))
    }
}

/// Output of a group-level classifier on one page.
#[derive(Clone, Debug)]
pub struct GroupPrediction {
    pub groups: Vec<VisualGroup>,
    /// Class distribution per group.
    pub probs: Mat,
    pub group_labels: Vec<usize>,
    /// Every token carries its group's label.
    pub token_labels: Vec<usize>,
}

/// A trained group-level classifier.
#[derive(Clone, Debug)]
pub struct GroupClassifier<M> {
    pub model: M,
    pub kind: GroupKind,
    pub params: ParamStore,
    pub vocab: Vocab,
    pub labels: LabelSet,
}

pub type HierClassifier = GroupClassifier<HierModel>;
pub type SimpleGroupClassifier = GroupClassifier<SimpleGroupModel>;

impl<M: GroupModel> GroupClassifier<M> {
    /// Classify the page's groups of the configured kind (plus singleton
    /// groups for uncovered tokens) and spread group labels to tokens.
    pub fn predict(&self, page: &Page) -> Result<GroupPrediction> {
        let groups = page.covering_groups(self.kind);
        self.predict_groups(page, groups)
    }

    pub fn predict_groups(&self, page: &Page, groups: Vec<VisualGroup>) -> Result<GroupPrediction> {
        if page.tokens.is_empty() {
            return Err(Error::Input(format!("page {}:{} has no tokens", page.paper_id, page.page_index)));
        }
        let mut probs = self.model.group_logits(&self.params, page, &groups, &self.vocab)?;
        let mut group_labels = Vec::with_capacity(groups.len());
        let mut token_labels = vec![0; page.tokens.len()];
        for (j, g) in groups.iter().enumerate() {
            let label = argmax(probs.row(j));
            softmax_in_place(probs.row_mut(j));
            for &i in &g.token_indices {
                token_labels[i] = label;
            }
            group_labels.push(label);
        }
        Ok(GroupPrediction { groups, probs, group_labels, token_labels })
    }

    pub fn predict_tokens(&self, page: &Page) -> Result<Vec<usize>> {
        Ok(self.predict(page)?.token_labels)
    }
}

/// Run the hierarchical model over a page.
pub fn hvila_forward(clf: &HierClassifier, page: &Page) -> Result<GroupPrediction> {
    clf.predict(page)
}

/// Run the independent group classifier over a page.
pub fn simple_group_classifier_forward(clf: &SimpleGroupClassifier, page: &Page) -> Result<GroupPrediction> {
    clf.predict(page)
}

struct PageExample {
    page: Page,
    groups: Vec<VisualGroup>,
    targets: Vec<Option<usize>>,
}

struct GroupObjective<'a, M> {
    model: &'a M,
    vocab: &'a Vocab,
    labels: &'a LabelSet,
    train: Vec<PageExample>,
    dev: Vec<PageExample>,
}

impl<M: GroupModel> Objective for GroupObjective<'_, M> {
    fn n_examples(&self) -> usize {
        self.train.len()
    }

    fn accumulate(&self, p: &ParamStore, i: usize, mode: &mut Mode, g: &mut Grads) -> Result<(f64, usize)> {
        let ex = &self.train[i];
        self.model.accumulate(p, &ex.page, &ex.groups, &ex.targets, self.vocab, mode, g)
    }

    fn train_accuracy(&self, p: &ParamStore) -> Result<f64> {
        let (mut hit, mut total) = (0, 0);
        for ex in &self.train {
            let logits = self.model.group_logits(p, &ex.page, &ex.groups, self.vocab)?;
            for (j, t) in ex.targets.iter().enumerate() {
                if let Some(y) = t {
                    total += 1;
                    hit += usize::from(argmax(logits.row(j)) == *y);
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
        for ex in &self.dev {
            let Some(gl) = ex.page.gold_labels() else { continue };
            let logits = self.model.group_logits(p, &ex.page, &ex.groups, self.vocab)?;
            let mut tokens = vec![0; ex.page.tokens.len()];
            for (j, g) in ex.groups.iter().enumerate() {
                let l = argmax(logits.row(j));
                g.token_indices.iter().for_each(|&i| tokens[i] = l);
            }
            pred.extend(tokens);
            gold.extend(gl);
        }
        Ok(Some(macro_f1(&pred, &gold, self.labels)?.macro_f1))
    }
}

fn examples(ds: Option<&Dataset>, kind: GroupKind) -> (Vec<PageExample>, usize) {
    let mut mixed = 0;
    let mut out = Vec::new();
    for page in ds.map(|d| d.pages.as_slice()).unwrap_or_default() {
        if page.tokens.is_empty() {
            continue;
        }
        let groups = page.covering_groups(kind);
        let (targets, m) = group_targets(page, &groups);
        mixed += m;
        out.push(PageExample { page: page.clone(), groups, targets });
    }
    (out, mixed)
}

fn train_group_model<M: GroupModel>(
    model: M,
    params: ParamStore,
    kind: GroupKind,
    vocab: Vocab,
    train: &Dataset,
    dev: Option<&Dataset>,
    hyper: &TrainHyper,
    dropout: f64,
) -> Result<(GroupClassifier<M>, TrainLog)> {
    let (train_ex, mixed) = examples(Some(train), kind);
    if mixed > 0 {
        log::warn!("{mixed} {kind} groups hold more than one gold label; training against their modal label");
    }
    let (dev_ex, _) = examples(dev, kind);
    let obj = GroupObjective { model: &model, vocab: &vocab, labels: &train.labels, train: train_ex, dev: dev_ex };
    let mut params = params;
    let mut log = fit(&obj, &mut params, hyper, dropout)?;
    log.mixed_groups = mixed;
    Ok((GroupClassifier { model, kind, params, vocab, labels: train.labels.clone() }, log))
}

impl HierClassifier {
    pub fn new(config: &ModelConfig, hier: &HierConfig, truncation: usize, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        let config = ModelConfig { vocab_size: vocab.len(), n_classes: labels.len(), ..config.clone() };
        let mut params = ParamStore::new();
        let model = HierModel::new(&config, hier, truncation, &mut params)?;
        Ok(GroupClassifier { model, kind: hier.group_kind, params, vocab, labels })
    }
}

impl SimpleGroupClassifier {
    pub fn new(config: &ModelConfig, kind: GroupKind, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        let config = ModelConfig { vocab_size: vocab.len(), n_classes: labels.len(), ..config.clone() };
        let mut params = ParamStore::new();
        let model = SimpleGroupModel::new(&config, &mut params)?;
        Ok(GroupClassifier { model, kind, params, vocab, labels })
    }
}

/// Train the hierarchical model with group-level cross entropy.
pub fn train_hvila(train: &Dataset, dev: Option<&Dataset>, config: &ModelConfig, hier: &HierConfig, hyper: &TrainHyper) -> Result<(HierClassifier, TrainLog)> {
    if train.pages.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let truncation = match hier.truncation {
        0 => choose_truncation(train, hier.group_kind, config.max_seq_len)?.n_tilde,
        n => n,
    };
    let clf = HierClassifier::new(config, hier, truncation, Vocab::build(train, 1), train.labels.clone())?;
    train_group_model(clf.model, clf.params, clf.kind, clf.vocab, train, dev, hyper, config.dropout_rate)
}

/// Train the independent group classifier.
pub fn train_simple_group(train: &Dataset, dev: Option<&Dataset>, config: &ModelConfig, kind: GroupKind, hyper: &TrainHyper) -> Result<(SimpleGroupClassifier, TrainLog)> {
    if train.pages.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let clf = SimpleGroupClassifier::new(config, kind, Vocab::build(train, 1), train.labels.clone())?;
    train_group_model(clf.model, clf.params, clf.kind, clf.vocab, train, dev, hyper, config.dropout_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::group_inconsistency;
    use crate::indicator::{TokenClassifier, WindowMode};
    use crate::model::Token;
    use crate::nn::ops::{mac_count, reset_mac_count};

    fn page_with(groups: &[usize], words: usize) -> Page {
        let mut p = Page::new("paper", 0, 600.0, 800.0);
        let mut k = 0;
        for (gi, &n) in groups.iter().enumerate() {
            let y0 = 10.0 + 30.0 * gi as f64;
            let mut ix = Vec::new();
            for j in 0..n {
                let x = 5.0 + (j % 40) as f64 * 14.0;
                let y = y0 + (j / 40) as f64 * 9.0;
                p.tokens.push(Token::new(format!("w{}", (k * 7 + gi) % words), BBox::new(x, y, x + 12.0, y + 8.0), Some(gi % 2)));
                ix.push(k);
                k += 1;
            }
            let bbox = BBox::union_all(ix.iter().map(|&i| &p.tokens[i].bbox)).unwrap();
            p.blocks.push(VisualGroup::new(bbox, GroupKind::Block, ix));
        }
        p
    }

    fn vocab(words: usize) -> Vocab {
        let mut w: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLK]"].map(String::from).to_vec();
        w.extend((0..words).map(|i| format!("w{i}")));
        Vocab::from_words(w)
    }

    fn labels() -> LabelSet {
        LabelSet::new(vec!["a".into(), "b".into(), "c".into()], 0).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig { d: 16, n_heads: 2, max_seq_len: 64, coord_buckets: 32, n_layers: 1, ..Default::default() }
    }

    fn hier(truncation: usize) -> HierClassifier {
        let h = HierConfig { page_layers: 1, ..Default::default() };
        HierClassifier::new(&tiny(), &h, truncation, vocab(10), labels()).unwrap()
    }

    fn dataset(pages: Vec<Page>) -> Dataset {
        Dataset::new(labels(), pages)
    }

    #[test]
    fn truncation_choice() {
        let even = dataset((0..3).map(|_| page_with(&[10; 10], 5)).collect());
        assert_eq!(choose_truncation(&even, GroupKind::Block, 512).unwrap().n_tilde, 10);
        // ratios 10, 12.2 and 18 average to 13.4
        let mixed = dataset(vec![page_with(&[10; 10], 5), page_with(&[12, 12, 12, 12, 13], 5), page_with(&[18; 5], 5)]);
        let s = choose_truncation(&mixed, GroupKind::Block, 512).unwrap();
        assert!((s.mean_tokens_per_group - 13.4).abs() < 1e-12);
        assert_eq!(s.n_tilde, 13);
        let big = dataset(vec![page_with(&[600], 5)]);
        assert_eq!(choose_truncation(&big, GroupKind::Block, 512).unwrap().n_tilde, 512);
        assert!(choose_truncation(&dataset(vec![]), GroupKind::Block, 512).is_err());
    }

    #[test]
    fn zero_params_give_zero_group_vector_and_class_zero() {
        let mut clf = hier(8);
        clf.params.fill(0.0);
        let p = page_with(&[3], 10);
        assert_eq!(clf.model.encode_group(&clf.params, &p, &p.blocks[0], &clf.vocab).unwrap(), vec![0.0; 16]);
        let out = hvila_forward(&clf, &p).unwrap();
        assert!(out.probs.row(0).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(out.group_labels, vec![0]);
    }

    #[test]
    fn single_token_group_is_its_encoder_state() {
        let clf = hier(8);
        let p = page_with(&[1], 10);
        let h = clf.model.encode_group(&clf.params, &p, &p.blocks[0], &clf.vocab).unwrap();
        let ids = [clf.vocab.id(&p.tokens[0].text)];
        let input = EncoderInput { ids: &ids, positions: None, layout: None, mask: &[true] };
        let (enc, _) = clf.model.group_encoder.forward(&clf.params, &input, &mut Mode::Eval).unwrap();
        let pb = clf.model.layout.embed(&clf.params, &p.tokens[0].bbox, p.width, p.height).0;
        for k in 0..16 {
            assert!((h[k] - enc.row(0)[k] - pb[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn tokens_past_truncation_are_ignored() {
        let clf = hier(5);
        let p = page_with(&[9, 4, 12], 10);
        let before = hvila_forward(&clf, &p).unwrap();
        let mut q = p.clone();
        for g in &q.blocks.clone() {
            for &i in g.token_indices.iter().skip(5) {
                q.tokens[i].text = "w9".into();
            }
        }
        let after = hvila_forward(&clf, &q).unwrap();
        assert_eq!(before.probs, after.probs);
    }

    #[test]
    fn group_vector_ignores_other_groups() {
        let clf = hier(8);
        let p = page_with(&[4, 5, 6], 10);
        let mut q = p.clone();
        for &i in &q.blocks[2].token_indices.clone() {
            q.tokens[i].text = "w3".into();
        }
        let a = clf.model.encode_group(&clf.params, &p, &p.blocks[0], &clf.vocab).unwrap();
        let b = clf.model.encode_group(&clf.params, &q, &q.blocks[0], &clf.vocab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_uniform_within_groups() {
        let clf = hier(8);
        let p = page_with(&[4, 7, 2, 9], 10);
        let out = hvila_forward(&clf, &p).unwrap();
        assert_eq!(group_inconsistency(&out.token_labels, &out.groups).unwrap().h_g, 0.0);
    }

    #[test]
    fn overflowing_group_count_is_split() {
        let cfg = ModelConfig { max_seq_len: 8, ..tiny() };
        let h = HierConfig { page_layers: 1, ..Default::default() };
        let clf = HierClassifier::new(&cfg, &h, 4, vocab(10), labels()).unwrap();
        let p = page_with(&[2; 20], 10);
        let out = hvila_forward(&clf, &p).unwrap();
        assert_eq!(out.group_labels.len(), 20);
        let mut r = Vec::new();
        chunk_ranges(0..20, 8, &mut r);
        assert_eq!(r, vec![0..5, 5..10, 10..15, 15..20]);
    }

    #[test]
    fn simple_classifier_ignores_neighbours() {
        let clf = SimpleGroupClassifier::new(&tiny(), GroupKind::Block, vocab(10), labels()).unwrap();
        let mut p = page_with(&[3, 3, 5], 10);
        let (a, b) = (p.blocks[0].token_indices.clone(), p.blocks[1].token_indices.clone());
        for (i, j) in a.iter().zip(&b) {
            p.tokens[*j].text = p.tokens[*i].text.clone();
        }
        // same text, same box size and offset inside the group
        let mut q = p.clone();
        q.blocks[1].bbox = q.blocks[0].bbox;
        for (i, j) in a.iter().zip(&b) {
            q.tokens[*j].bbox = q.tokens[*i].bbox;
        }
        let out = simple_group_classifier_forward(&clf, &q).unwrap();
        assert_eq!(out.group_labels[0], out.group_labels[1]);
        assert_eq!(out.probs.row(0), out.probs.row(1));
        let mut z = clf.clone();
        z.params.fill(0.0);
        assert!(simple_group_classifier_forward(&z, &p).unwrap().token_labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn mixed_groups_are_counted() {
        let mut p = page_with(&[4, 4], 10);
        p.tokens[0].label = Some(2);
        let (t, mixed) = group_targets(&p, &p.blocks);
        assert_eq!(mixed, 1);
        assert_eq!(t, vec![Some(0), Some(1)]);
        let hyper = TrainHyper { epochs: 1, ..Default::default() };
        let h = HierConfig { page_layers: 1, ..Default::default() };
        let (_, log) = train_hvila(&dataset(vec![p]), None, &tiny(), &h, &hyper).unwrap();
        assert_eq!(log.mixed_groups, 1);
    }

    #[test]
    fn op_count_ratio_falls_with_page_length() {
        let cfg = ModelConfig { d: 32, max_seq_len: 512, ..Default::default() };
        let h = HierConfig { page_layers: 1, ..Default::default() };
        let hv = HierClassifier::new(&cfg, &h, 16, vocab(10), labels()).unwrap();
        let base = TokenClassifier::new(&cfg, WindowMode::Baseline, vocab(10), labels()).unwrap();
        let mut last = f64::INFINITY;
        for groups in [4, 8, 16, 30] {
            let p = page_with(&vec![16; groups], 10);
            reset_mac_count();
            hv.predict(&p).unwrap();
            let h_ops = mac_count() as f64;
            reset_mac_count();
            base.predict_tokens(&p).unwrap();
            let b_ops = mac_count() as f64;
            let ratio = h_ops / b_ops;
            assert!(ratio < last, "{groups} groups: {ratio} !< {last}");
            last = ratio;
        }
    }
}
