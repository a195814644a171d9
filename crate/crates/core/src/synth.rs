//! Seeded synthetic scientific pages with gold token labels, lines and blocks.
//!
//! Pages are planned block by block from a position-dependent template
//! (front matter on the first page, references on the last, running headers
//! and page numbers), then laid out into one or two columns. Each category
//! draws most of its words from its own vocabulary, so labels are learnable
//! from text, while layout carries the group structure.

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::model::{validate_page, BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_papers: usize,
    /// Inclusive range.
    pub pages_per_paper: [usize; 2],
    /// Built-in label set name.
    pub label_set: String,
    pub tokens_per_page_mean: f64,
    pub tokens_per_page_std: f64,
    /// Inclusive clamp on sampled page sizes.
    pub tokens_per_page_range: [usize; 2],
    /// Column counts to draw from, one draw per paper.
    pub columns: Vec<usize>,
    pub words_per_category: usize,
    pub common_words: usize,
    /// Probability that a token comes from the shared vocabulary.
    pub common_word_rate: f64,
    pub page_width: f64,
    pub page_height: f64,
    pub margin: f64,
    pub gutter: f64,
    /// Body font size in points; shrunk when a page does not fit.
    pub font_size: f64,
    pub min_font_size: f64,
    /// Baseline-to-baseline distance as a multiple of the font size.
    pub leading: f64,
    /// Glyph advance as a multiple of the font size.
    pub char_width: f64,
    /// Vertical gap between blocks, in font sizes; drawn uniformly.
    pub block_gap: [f64; 2],
    /// Probability that a token near a block boundary takes a word from the
    /// neighbouring block's category vocabulary. Gold labels are unchanged.
    pub boundary_noise: f64,
    /// Tokens on each side of a boundary exposed to that noise.
    pub boundary_noise_span: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_papers: 20,
            pages_per_paper: [1, 6],
            label_set: "default15".into(),
            tokens_per_page_mean: 790.0,
            tokens_per_page_std: 450.0,
            tokens_per_page_range: [40, 2400],
            columns: vec![1, 2],
            words_per_category: 200,
            common_words: 60,
            common_word_rate: 0.3,
            page_width: 612.0,
            page_height: 792.0,
            margin: 54.0,
            gutter: 20.0,
            font_size: 9.0,
            min_font_size: 2.5,
            leading: 1.2,
            char_width: 0.45,
            block_gap: [1.6, 2.4],
            boundary_noise: 0.0,
            boundary_noise_span: 4,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let c = |f: &str, r: &str| Err(Error::config(format!("corpus.{f}"), r));
        if self.n_papers == 0 {
            return c("n_papers", "must be >= 1");
        }
        if self.pages_per_paper[0] == 0 || self.pages_per_paper[0] > self.pages_per_paper[1] {
            return c("pages_per_paper", "must be a range [lo, hi] with 1 <= lo <= hi");
        }
        if self.tokens_per_page_range[0] == 0 || self.tokens_per_page_range[0] > self.tokens_per_page_range[1] {
            return c("tokens_per_page_range", "must be a range [lo, hi] with 1 <= lo <= hi");
        }
        if !(self.tokens_per_page_mean > 0.0 && self.tokens_per_page_std > 0.0) {
            return c("tokens_per_page_mean", "mean and std must be positive");
        }
        if self.columns.is_empty() || self.columns.iter().any(|&k| k != 1 && k != 2) {
            return c("columns", "must list column counts from {1, 2}");
        }
        if self.words_per_category < 2 || self.common_words < 1 {
            return c("words_per_category", "vocabularies must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.common_word_rate) {
            return c("common_word_rate", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.boundary_noise) {
            return c("boundary_noise", "must lie in [0, 1]");
        }
        let positive = [
            ("page_width", self.page_width),
            ("page_height", self.page_height),
            ("font_size", self.font_size),
            ("min_font_size", self.min_font_size),
            ("leading", self.leading),
            ("char_width", self.char_width),
            ("gutter", self.gutter),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return c(name, "must be positive");
            }
        }
        if self.leading < 1.0 {
            return c("leading", "must be >= 1 so lines do not overlap");
        }
        if !(self.margin >= 0.0 && 2.0 * self.margin + self.gutter < self.page_width && 2.0 * self.margin < self.page_height) {
            return c("margin", "leaves no room for text");
        }
        if !(self.block_gap[0] > 0.0 && self.block_gap[0] <= self.block_gap[1]) {
            return c("block_gap", "must be a range [lo, hi] with 0 < lo <= hi");
        }
        if self.min_font_size > self.font_size {
            return c("min_font_size", "must not exceed font_size");
        }
        LabelSet::builtin(&self.label_set)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Title,
    Author,
    Abstract,
    Keywords,
    Section,
    Paragraph,
    List,
    Equation,
    Figure,
    Table,
    Caption,
    Footnote,
    Bibliography,
    Header,
    Footer,
}

const ROLES: [Role; 15] = [
    Role::Title,
    Role::Author,
    Role::Abstract,
    Role::Keywords,
    Role::Section,
    Role::Paragraph,
    Role::List,
    Role::Equation,
    Role::Figure,
    Role::Table,
    Role::Caption,
    Role::Footnote,
    Role::Bibliography,
    Role::Header,
    Role::Footer,
];

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Title => "title",
            Role::Author => "author",
            Role::Abstract => "abstract",
            Role::Keywords => "keywords",
            Role::Section => "section",
            Role::Paragraph => "paragraph",
            Role::List => "list",
            Role::Equation => "equation",
            Role::Figure => "figure",
            Role::Table => "table",
            Role::Caption => "caption",
            Role::Footnote => "footnote",
            Role::Bibliography => "bibliography",
            Role::Header => "header",
            Role::Footer => "footer",
        }
    }

    fn index(self) -> usize {
        ROLES.iter().position(|&r| r == self).unwrap()
    }

    /// Token count range of one block.
    fn size(self) -> (usize, usize) {
        match self {
            Role::Title => (6, 14),
            Role::Author => (4, 12),
            Role::Abstract => (60, 150),
            Role::Keywords => (4, 9),
            Role::Section => (2, 6),
            Role::Paragraph => (40, 150),
            Role::List => (20, 60),
            Role::Equation => (5, 18),
            Role::Figure => (6, 24),
            Role::Table => (20, 70),
            Role::Caption => (10, 40),
            Role::Footnote => (10, 30),
            Role::Bibliography => (25, 60),
            Role::Header => (3, 8),
            Role::Footer => (1, 1),
        }
    }

    fn has_sentences(self) -> bool {
        matches!(self, Role::Abstract | Role::Paragraph | Role::List | Role::Caption | Role::Footnote | Role::Bibliography)
    }

    fn font_scale(self) -> f64 {
        match self {
            Role::Title => 1.5,
            Role::Section => 1.15,
            Role::Footnote | Role::Header | Role::Footer | Role::Caption => 0.85,
            _ => 1.0,
        }
    }

    fn centered(self) -> bool {
        matches!(self, Role::Title | Role::Author | Role::Equation)
    }
}

/// Per-category and shared word lists.
struct Vocabulary {
    by_role: Vec<Vec<String>>,
    common: Vec<String>,
}

impl Vocabulary {
    fn new(cfg: &CorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_70c5);
        let mut seen = HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| loop {
            const SYL: [&str; 24] = [
                "ka", "lo", "mi", "ne", "ru", "ta", "vo", "xe", "zi", "pa", "qu", "so", "de", "fi", "gu", "ho", "ji", "be", "ce", "wa",
                "yo", "an", "er", "ix",
            ];
            let n = rng.gen_range(lo..=hi);
            let w: String = (0..n).map(|_| *SYL.choose(rng).unwrap()).collect();
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let common = (0..cfg.common_words).map(|_| fresh(&mut rng, 1, 2)).collect();
        let by_role = ROLES
            .iter()
            .map(|role| {
                (0..cfg.words_per_category)
                    .map(|_| match role {
                        Role::Equation => format!("{}{}", fresh(&mut rng, 2, 3), ["=", "+", "_i", "^2", "(x)"][rng.gen_range(0..5)]),
                        Role::Table => format!("{}{}", fresh(&mut rng, 2, 3), rng.gen_range(0..100)),
                        _ => fresh(&mut rng, 1, 3),
                    })
                    .collect()
            })
            .collect();
        Vocabulary { by_role, common }
    }
}

struct BlockPlan {
    role: Role,
    words: Vec<String>,
    /// Gap above the block, in font sizes.
    gap: f64,
    full_width: bool,
}

struct PaperStyle {
    columns: usize,
    header: bool,
    page_numbers: bool,
}

fn sample_words(rng: &mut ChaCha8Rng, vocab: &Vocabulary, cfg: &CorpusConfig, role: Role, n: usize) -> Vec<String> {
    let own = &vocab.by_role[role.index()];
    let mut words = Vec::with_capacity(n);
    let mut until_stop = rng.gen_range(6..=20);
    for i in 0..n {
        let mut w = if matches!(role, Role::Footer) {
            format!("{}", rng.gen_range(1..400))
        } else if rng.gen::<f64>() < cfg.common_word_rate {
            vocab.common.choose(rng).unwrap().clone()
        } else {
            own.choose(rng).unwrap().clone()
        };
        if role == Role::List && (i == 0 || until_stop == 20) {
            w = "\u{2022}".into();
        }
        if role.has_sentences() {
            until_stop -= 1;
            if until_stop == 0 || i + 1 == n {
                w.push('.');
                until_stop = rng.gen_range(6..=20);
            }
        }
        words.push(w);
    }
    words
}

fn plan_page(rng: &mut ChaCha8Rng, vocab: &Vocabulary, cfg: &CorpusConfig, style: &PaperStyle, page: usize, n_pages: usize) -> Vec<BlockPlan> {
    let [lo, hi] = cfg.tokens_per_page_range;
    let shape = (cfg.tokens_per_page_mean / cfg.tokens_per_page_std).powi(2);
    let scale = cfg.tokens_per_page_std.powi(2) / cfg.tokens_per_page_mean;
    let target = (Gamma::new(shape, scale).unwrap().sample(rng).round() as usize).clamp(lo, hi);
    let mut blocks = Vec::new();
    let mut budget = target as isize;
    let gap = |rng: &mut ChaCha8Rng| rng.gen_range(cfg.block_gap[0]..=cfg.block_gap[1]);
    let push = |rng: &mut ChaCha8Rng, blocks: &mut Vec<BlockPlan>, role: Role, budget: &mut isize, full: bool| {
        let (a, b) = role.size();
        let n = (rng.gen_range(a..=b) as isize).min((*budget).max(1)) as usize;
        *budget -= n as isize;
        let words = sample_words(rng, vocab, cfg, role, n);
        let g = gap(rng);
        blocks.push(BlockPlan { role, words, gap: g, full_width: full });
    };
    if style.header && page > 0 {
        push(rng, &mut blocks, Role::Header, &mut budget, true);
    }
    if style.page_numbers {
        push(rng, &mut blocks, Role::Footer, &mut budget, true);
    }
    if page == 0 {
        push(rng, &mut blocks, Role::Title, &mut budget, true);
        push(rng, &mut blocks, Role::Author, &mut budget, true);
        push(rng, &mut blocks, Role::Abstract, &mut budget, true);
        if rng.gen_bool(0.7) {
            push(rng, &mut blocks, Role::Keywords, &mut budget, true);
        }
    }
    let references_from = if page + 1 == n_pages && n_pages > 1 { target as isize / 2 } else { isize::MIN };
    let body = [Role::Paragraph, Role::Section, Role::List, Role::Equation, Role::Figure, Role::Table];
    let weights = WeightedIndex::new([0.56, 0.12, 0.08, 0.1, 0.08, 0.06]).unwrap();
    let footnote = rng.gen_bool(0.25);
    while budget > 0 {
        if budget <= references_from {
            push(rng, &mut blocks, Role::Bibliography, &mut budget, false);
            continue;
        }
        if footnote && budget <= 30 {
            push(rng, &mut blocks, Role::Footnote, &mut budget, false);
            continue;
        }
        let role = body[weights.sample(rng)];
        push(rng, &mut blocks, role, &mut budget, false);
        match role {
            Role::Section if budget > 0 => push(rng, &mut blocks, Role::Paragraph, &mut budget, false),
            Role::Figure | Role::Table if budget > 0 => push(rng, &mut blocks, Role::Caption, &mut budget, false),
            _ => {}
        }
    }
    blocks
}

/// Swap words near block boundaries for the neighbouring category's words.
fn boundary_noise(rng: &mut ChaCha8Rng, vocab: &Vocabulary, cfg: &CorpusConfig, blocks: &mut [BlockPlan]) {
    if cfg.boundary_noise == 0.0 {
        return;
    }
    let span = cfg.boundary_noise_span;
    for b in 1..blocks.len() {
        let (left, right) = blocks.split_at_mut(b);
        let (a, c) = (&mut left[b - 1], &mut right[0]);
        let (ra, rc) = (a.role, c.role);
        let na = a.words.len();
        for w in a.words[na.saturating_sub(span)..].iter_mut() {
            if rng.gen::<f64>() < cfg.boundary_noise {
                *w = vocab.by_role[rc.index()].choose(rng).unwrap().clone();
            }
        }
        for w in c.words.iter_mut().take(span) {
            if rng.gen::<f64>() < cfg.boundary_noise {
                *w = vocab.by_role[ra.index()].choose(rng).unwrap().clone();
            }
        }
    }
}

struct Placed {
    text: String,
    bbox: BBox,
}

/// Lay out the planned blocks at font size `f`; `None` when they overflow.
fn layout(cfg: &CorpusConfig, style: &PaperStyle, plan: &[BlockPlan], f: f64) -> Option<Vec<(Role, Vec<Vec<Placed>>)>> {
    let (w, h, m) = (cfg.page_width, cfg.page_height, cfg.margin);
    let bottom = h - m;
    let mut out: Vec<(Role, Vec<Vec<Placed>>)> = Vec::new();
    let wrap = |role: Role, words: &[String], x0: f64, width: f64, y: &mut f64| -> Vec<Vec<Placed>> {
        let fs = f * role.font_scale();
        let space = 0.3 * fs;
        let indent = if role == Role::Paragraph { 1.5 * fs } else { 0.0 };
        let mut lines: Vec<Vec<Placed>> = vec![Vec::new()];
        let mut x = x0 + indent;
        for word in words {
            let ww = word.chars().count() as f64 * cfg.char_width * fs;
            if x + ww > x0 + width && !lines.last().unwrap().is_empty() {
                lines.push(Vec::new());
                x = x0;
            }
            lines.last_mut().unwrap().push(Placed { text: word.clone(), bbox: BBox::new(x, 0.0, x + ww, 0.0) });
            x += ww + space;
        }
        for line in &mut lines {
            let shift = if role.centered() {
                let used = line.last().unwrap().bbox.x1 - x0;
                ((width - used) / 2.0).max(0.0)
            } else {
                0.0
            };
            for p in line.iter_mut() {
                p.bbox = BBox::new(p.bbox.x0 + shift, *y, p.bbox.x1 + shift, *y + fs);
            }
            *y += fs * cfg.leading;
        }
        lines
    };
    let full = w - 2.0 * m;
    let mut y = m;
    let mut first = true;
    // Header band above the body, footer band below it.
    for b in plan.iter().filter(|b| b.role == Role::Header) {
        let mut yy = m / 2.0 - f / 2.0;
        out.push((b.role, wrap(b.role, &b.words, m, full, &mut yy)));
    }
    for b in plan.iter().filter(|b| b.full_width && !matches!(b.role, Role::Header | Role::Footer)) {
        if !first {
            y += b.gap * f;
        }
        first = false;
        let lines = wrap(b.role, &b.words, m, full, &mut y);
        if y > bottom {
            return None;
        }
        out.push((b.role, lines));
    }
    let cols = style.columns;
    let col_w = (full - cfg.gutter * (cols - 1) as f64) / cols as f64;
    let top = y + if first { 0.0 } else { cfg.block_gap[1] * f };
    let (mut col, mut y) = (0, top);
    let mut at_col_top = true;
    for b in plan.iter().filter(|b| !b.full_width) {
        if !at_col_top {
            y += b.gap * f;
        }
        let x0 = m + col as f64 * (col_w + cfg.gutter);
        let mut yy = 0.0;
        let mut lines = wrap(b.role, &b.words, x0, col_w, &mut yy);
        let line_h = f * b.role.font_scale() * cfg.leading;
        // Place lines, continuing in the next column when this one is full.
        loop {
            let room = ((bottom - y + (line_h - f * b.role.font_scale())) / line_h).floor().max(0.0) as usize;
            let take = room.min(lines.len());
            if take > 0 {
                let rest = lines.split_off(take);
                let x0_now = m + col as f64 * (col_w + cfg.gutter);
                for (k, line) in lines.iter_mut().enumerate() {
                    for p in line.iter_mut() {
                        let dx = x0_now - x0;
                        let ly = y + k as f64 * line_h;
                        p.bbox = BBox::new(p.bbox.x0 + dx, ly, p.bbox.x1 + dx, ly + p.bbox.height());
                    }
                }
                y += take as f64 * line_h;
                out.push((b.role, std::mem::take(&mut lines)));
                lines = rest;
                at_col_top = false;
            }
            if lines.is_empty() {
                break;
            }
            col += 1;
            if col >= cols {
                return None;
            }
            y = top;
            at_col_top = true;
        }
    }
    for b in plan.iter().filter(|b| b.role == Role::Footer) {
        let mut yy = h - m / 2.0 - f / 2.0;
        out.push((b.role, wrap(b.role, &b.words, m, full, &mut yy)));
    }
    Some(out)
}

fn build_page(cfg: &CorpusConfig, labels: &LabelSet, paper_id: &str, page_index: usize, blocks: Vec<(Role, Vec<Vec<Placed>>)>) -> Page {
    let mut page = Page::new(paper_id, page_index, cfg.page_width, cfg.page_height);
    let role_label = |r: Role| labels.index_of(r.name()).unwrap_or(labels.background_index);
    for (role, lines) in blocks {
        let label = role_label(role);
        let mut block_tokens = Vec::new();
        for line in lines {
            let mut ix = Vec::new();
            for p in line {
                ix.push(page.tokens.len());
                page.tokens.push(Token::new(p.text, p.bbox, Some(label)));
            }
            let bbox = BBox::union_all(ix.iter().map(|&i| &page.tokens[i].bbox)).unwrap();
            let mut g = VisualGroup::new(bbox, GroupKind::Line, ix.clone());
            g.label = Some(label);
            page.lines.push(g);
            block_tokens.extend(ix);
        }
        let bbox = BBox::union_all(block_tokens.iter().map(|&i| &page.tokens[i].bbox)).unwrap();
        let mut g = VisualGroup::new(bbox, GroupKind::Block, block_tokens);
        g.label = Some(label);
        page.blocks.push(g);
    }
    page
}

const MAX_ATTEMPTS: usize = 40;

/// Generate a corpus. Identical configs give identical corpora.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Dataset> {
    cfg.validate()?;
    let labels = LabelSet::builtin(&cfg.label_set)?;
    let vocab = Vocabulary::new(cfg);
    let mut pages = Vec::new();
    for paper in 0..cfg.n_papers {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(paper as u64 + 1);
        let style = PaperStyle {
            columns: *cfg.columns.choose(&mut rng).unwrap(),
            header: rng.gen_bool(0.8),
            page_numbers: rng.gen_bool(0.9),
        };
        let n_pages = rng.gen_range(cfg.pages_per_paper[0]..=cfg.pages_per_paper[1]);
        let paper_id = format!("paper{paper:04}");
        for page_index in 0..n_pages {
            let mut plan = plan_page(&mut rng, &vocab, cfg, &style, page_index, n_pages);
            boundary_noise(&mut rng, &vocab, cfg, &mut plan);
            let mut f = cfg.font_size;
            let mut placed = None;
            for _ in 0..MAX_ATTEMPTS {
                placed = layout(cfg, &style, &plan, f);
                if placed.is_some() || f <= cfg.min_font_size {
                    break;
                }
                f = (f * 0.94).max(cfg.min_font_size);
            }
            let Some(blocks) = placed else {
                return Err(Error::Input(format!("{paper_id} page {page_index}: planned blocks do not fit the page")));
            };
            let page = build_page(cfg, &labels, &paper_id, page_index, blocks);
            let report = validate_page(&page, &labels);
            if !report.is_valid() {
                return Err(Error::Model(format!("generated {paper_id} page {page_index} is invalid: {report}")));
            }
            pages.push(page);
        }
    }
    Ok(Dataset::new(labels, pages))
}

/// Per-page count statistics: mean and std of tokens, lines and blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub papers: usize,
    pub pages: usize,
    pub tokens_mean: f64,
    pub tokens_std: f64,
    pub lines_mean: f64,
    pub lines_std: f64,
    pub blocks_mean: f64,
    pub blocks_std: f64,
}

pub fn corpus_stats(ds: &Dataset) -> CorpusStats {
    let col = |f: &dyn Fn(&Page) -> usize| mean_std(&ds.pages.iter().map(|p| f(p) as f64).collect::<Vec<_>>());
    let (tm, ts) = col(&|p| p.tokens.len());
    let (lm, ls) = col(&|p| p.lines.len());
    let (bm, bs) = col(&|p| p.blocks.len());
    CorpusStats {
        papers: ds.paper_ids().len(),
        pages: ds.pages.len(),
        tokens_mean: tm,
        tokens_std: ts,
        lines_mean: lm,
        lines_std: ls,
        blocks_mean: bm,
        blocks_std: bs,
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "papers  pages  tokens/page       lines/page      blocks/page")?;
        writeln!(
            f,
            "{:>6}  {:>5}  {:>7.1} ({:>6.1})  {:>6.1} ({:>5.1})  {:>6.1} ({:>5.1})",
            self.papers, self.pages, self.tokens_mean, self.tokens_std, self.lines_mean, self.lines_std, self.blocks_mean, self.blocks_std
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::group_entropy;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig { n_papers: 4, seed, ..Default::default() }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(&small(3)).unwrap();
        let b = generate_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_corpus(&small(4)).unwrap());
    }

    #[test]
    fn gold_groups_are_label_uniform_and_cover_tokens() {
        let ds = generate_corpus(&small(1)).unwrap();
        for page in &ds.pages {
            let gold = page.gold_labels().unwrap();
            for kind in [GroupKind::Line, GroupKind::Block] {
                let mut seen = vec![0; page.tokens.len()];
                for g in page.groups(kind) {
                    assert_eq!(group_entropy(&gold, g), 0.0);
                    g.token_indices.iter().for_each(|&i| seen[i] += 1);
                }
                assert!(seen.iter().all(|&c| c == 1));
            }
            for l in &page.lines {
                assert!(page.blocks.iter().any(|b| l.token_indices.iter().all(|i| b.token_indices.contains(i))));
            }
        }
    }

    #[test]
    fn invalid_config_names_the_field() {
        let cfg = CorpusConfig { columns: vec![3], ..Default::default() };
        let err = generate_corpus(&cfg).unwrap_err();
        assert!(err.to_string().contains("corpus.columns"), "{err}");
    }
}
