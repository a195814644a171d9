//! Visual group detection and token allocation.
//!
//! Lines and blocks are detected from token geometry alone. Thresholds are
//! relative to the median token (or line) height so they carry over between
//! page scales.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, GroupKind, Page, VisualGroup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    /// Max vertical-center distance, as a fraction of the median token height,
    /// for two tokens to share a line.
    pub line_y_tolerance: f64,
    /// Adjacent lines closer than this many median line heights join a block.
    pub block_gap_threshold: f64,
    /// Minimum horizontal overlap (fraction of the narrower line) for two lines
    /// to be considered adjacent.
    pub block_x_overlap_min: f64,
    /// A horizontal gap wider than this many median token heights ends a line.
    pub line_x_gap_max: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            line_y_tolerance: 0.5,
            block_gap_threshold: 1.5,
            block_x_overlap_min: 0.1,
            line_x_gap_max: 1.5,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("line_y_tolerance", self.line_y_tolerance),
            ("block_gap_threshold", self.block_gap_threshold),
            ("block_x_overlap_min", self.block_x_overlap_min),
            ("line_x_gap_max", self.line_x_gap_max),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("grouping.{name}"), "must be > 0"));
            }
        }
        if self.block_x_overlap_min > 1.0 {
            return Err(Error::config("grouping.block_x_overlap_min", "must be <= 1"));
        }
        Ok(())
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn group_from(page: &Page, kind: GroupKind, mut indices: Vec<usize>) -> VisualGroup {
    indices.sort_unstable();
    let bbox = BBox::union_all(indices.iter().map(|&i| &page.tokens[i].bbox))
        .expect("group has at least one token");
    VisualGroup::new(bbox, kind, indices)
}

/// Cluster tokens into text lines.
pub fn detect_lines(page: &Page, cfg: &GroupingConfig) -> Vec<VisualGroup> {
    if page.tokens.is_empty() {
        return Vec::new();
    }
    let mut heights: Vec<f64> = page.tokens.iter().map(|t| t.bbox.height()).collect();
    let h = median(&mut heights);
    let y_tol = cfg.line_y_tolerance * h;
    let x_gap = cfg.line_x_gap_max * h;

    let mut order: Vec<usize> = (0..page.tokens.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&page.tokens[a].bbox, &page.tokens[b].bbox);
        ta.center_y()
            .total_cmp(&tb.center_y())
            .then(ta.x0.total_cmp(&tb.x0))
            .then(a.cmp(&b))
    });

    // vertical bands anchored at their first (topmost) member
    let mut bands: Vec<Vec<usize>> = Vec::new();
    let mut anchor = f64::NEG_INFINITY;
    for i in order {
        let cy = page.tokens[i].bbox.center_y();
        match bands.last_mut() {
            Some(band) if cy - anchor <= y_tol => band.push(i),
            _ => {
                anchor = cy;
                bands.push(vec![i]);
            }
        }
    }

    let mut lines = Vec::new();
    for mut band in bands {
        band.sort_by(|&a, &b| {
            page.tokens[a]
                .bbox
                .x0
                .total_cmp(&page.tokens[b].bbox.x0)
                .then(a.cmp(&b))
        });
        let mut current: Vec<usize> = Vec::new();
        let mut right = f64::NEG_INFINITY;
        for i in band {
            let b = page.tokens[i].bbox;
            if !current.is_empty() && b.x0 - right > x_gap {
                lines.push(group_from(page, GroupKind::Line, std::mem::take(&mut current)));
                right = f64::NEG_INFINITY;
            }
            right = right.max(b.x1);
            current.push(i);
        }
        if !current.is_empty() {
            lines.push(group_from(page, GroupKind::Line, current));
        }
    }
    lines.sort_by(|a, b| a.bbox.y0.total_cmp(&b.bbox.y0).then(a.bbox.x0.total_cmp(&b.bbox.x0)));
    lines
}

/// Whether two lines are close enough to belong to the same block.
pub(crate) fn lines_adjacent(a: &BBox, b: &BBox, gap_max: f64, overlap_min: f64) -> bool {
    if a.y_gap(b) > gap_max {
        return false;
    }
    let narrow = a.width().min(b.width());
    let overlap = a.x_overlap(b);
    if narrow <= 0.0 {
        // degenerate width: require the x-ranges to touch
        return a.x0.max(b.x0) <= a.x1.min(b.x1);
    }
    overlap / narrow >= overlap_min
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Merge adjacent lines into blocks.
pub fn detect_blocks(lines: &[VisualGroup], cfg: &GroupingConfig) -> Vec<VisualGroup> {
    if lines.is_empty() {
        return Vec::new();
    }
    let mut heights: Vec<f64> = lines.iter().map(|l| l.bbox.height()).collect();
    let gap_max = cfg.block_gap_threshold * median(&mut heights);

    let mut by_top: Vec<usize> = (0..lines.len()).collect();
    by_top.sort_by(|&a, &b| lines[a].bbox.y0.total_cmp(&lines[b].bbox.y0).then(a.cmp(&b)));

    let mut sets = DisjointSet::new(lines.len());
    for (pos, &i) in by_top.iter().enumerate() {
        let bi = &lines[i].bbox;
        for &j in &by_top[pos + 1..] {
            let bj = &lines[j].bbox;
            // sorted by top edge: once j starts below i's reach, later lines do too
            if bj.y0 - bi.y1 > gap_max {
                break;
            }
            if lines_adjacent(bi, bj, gap_max, cfg.block_x_overlap_min) {
                sets.union(i, j);
            }
        }
    }

    let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..lines.len() {
        let root = sets.find(i);
        members.entry(root).or_default().push(i);
    }
    let mut blocks: Vec<VisualGroup> = members
        .into_values()
        .map(|ls| {
            let bbox = BBox::union_all(ls.iter().map(|&l| &lines[l].bbox)).unwrap();
            let mut tokens: Vec<usize> = ls.iter().flat_map(|&l| lines[l].token_indices.iter().copied()).collect();
            tokens.sort_unstable();
            VisualGroup::new(bbox, GroupKind::Block, tokens)
        })
        .collect();
    blocks.sort_by(|a, b| a.bbox.y0.total_cmp(&b.bbox.y0).then(a.bbox.x0.total_cmp(&b.bbox.x0)));
    blocks
}

/// Replace the page's lines and blocks with detected ones.
pub fn detect_groups(page: &Page, cfg: &GroupingConfig) -> Page {
    let lines = detect_lines(page, cfg);
    let blocks = detect_blocks(&lines, cfg);
    let mut out = page.clone();
    out.lines = lines;
    out.blocks = blocks;
    for kind in [GroupKind::Line, GroupKind::Block] {
        for g in out.groups_mut(kind).iter_mut() {
            g.label = None;
        }
    }
    out
}

/// Allocate page tokens to group boxes.
///
/// A token belongs to a box when its center lies strictly inside it. When
/// several boxes qualify, the token goes to the box whose earliest allocated
/// token comes first in page order; boxes still empty rank after non-empty
/// ones, by list position. The result holds one group per input box (possibly
/// empty, in input order) followed by singleton groups for tokens no box covers.
pub fn allocate_tokens(page: &Page, boxes: &[BBox], kind: GroupKind) -> Vec<VisualGroup> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); boxes.len()];
    let mut orphans = Vec::new();
    for (i, t) in page.tokens.iter().enumerate() {
        let (cx, cy) = t.bbox.center();
        let best = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.strictly_contains(cx, cy))
            .min_by_key(|(j, _)| (members[*j].first().copied().unwrap_or(usize::MAX), *j))
            .map(|(j, _)| j);
        match best {
            Some(j) => members[j].push(i),
            None => orphans.push(i),
        }
    }
    let mut groups: Vec<VisualGroup> = boxes
        .iter()
        .zip(members)
        .map(|(b, m)| VisualGroup::new(*b, kind, m))
        .collect();
    groups.extend(
        orphans
            .into_iter()
            .map(|i| VisualGroup::new(page.tokens[i].bbox, kind, vec![i])),
    );
    groups
}

/// Modal label per group; ties go to the smallest category id. Tokens outside
/// every group keep their label.
pub fn majority_vote(labels: &[usize], groups: &[VisualGroup]) -> Vec<usize> {
    let mut out = labels.to_vec();
    for g in groups {
        if let Some(mode) = modal_label(g.token_indices.iter().map(|&i| labels[i])) {
            for &i in &g.token_indices {
                out[i] = mode;
            }
        }
    }
    out
}

/// Most frequent value, smallest on ties; `None` for an empty iterator.
pub fn modal_label<I: IntoIterator<Item = usize>>(labels: I) -> Option<usize> {
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates ascending, and max_by_key keeps the last maximum,
    // so iterate in reverse to keep the smallest id on ties.
    counts.into_iter().rev().max_by_key(|&(_, c)| c).map(|(l, _)| l)
}

/// Majority-vote relabeling of the page's gold token labels within `groups`.
pub fn majority_vote_relabel(page: &Page, groups: &[VisualGroup]) -> Result<Vec<usize>> {
    let labels = page
        .gold_labels()
        .ok_or_else(|| Error::Input("majority vote needs every token labeled".into()))?;
    Ok(majority_vote(&labels, groups))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub p_merge: f64,
    pub p_split: f64,
    pub p_jitter: f64,
    /// Largest box edge shift, in median token heights.
    pub jitter_scale: f64,
    pub kind: GroupKind,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            p_merge: 0.0,
            p_split: 0.0,
            p_jitter: 0.0,
            jitter_scale: 1.0,
            kind: GroupKind::Block,
        }
    }
}

impl PerturbConfig {
    pub fn with_rates(p_merge: f64, p_split: f64, p_jitter: f64) -> Self {
        PerturbConfig {
            p_merge,
            p_split,
            p_jitter,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_merge", self.p_merge), ("p_split", self.p_split), ("p_jitter", self.p_jitter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("perturb.{name}"), "rate must lie in [0, 1]"));
            }
        }
        if !(self.jitter_scale.is_finite() && self.jitter_scale >= 0.0) {
            return Err(Error::config("perturb.jitter_scale", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Counts of the edits applied by [`perturb_groups`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerturbStats {
    pub merges: usize,
    pub split_candidates: usize,
    pub splits: usize,
    pub jitters: usize,
}

/// Corrupt the page's groups of `noise.kind` to mimic an imperfect detector.
pub fn perturb_groups(page: &Page, noise: &PerturbConfig, seed: u64) -> Result<Page> {
    perturb_groups_with_stats(page, noise, seed).map(|(p, _)| p)
}

pub fn perturb_groups_with_stats(
    page: &Page,
    noise: &PerturbConfig,
    seed: u64,
) -> Result<(Page, PerturbStats)> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = PerturbStats::default();
    let kind = noise.kind;

    let mut pairs: Vec<(Vec<usize>, BBox)> = page
        .groups(kind)
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| (g.token_indices.clone(), g.bbox))
        .collect();
    pairs.sort_by_key(|(g, _)| g[0]);
    let (mut groups, mut boxes): (Vec<Vec<usize>>, Vec<BBox>) = pairs.into_iter().unzip();

    // merge neighbours in reading order
    if !groups.is_empty() {
        let mut merged_groups = vec![groups[0].clone()];
        let mut merged_boxes = vec![boxes[0]];
        for (g, b) in groups.iter().zip(&boxes).skip(1) {
            if rng.gen::<f64>() < noise.p_merge {
                let last = merged_groups.len() - 1;
                merged_groups[last].extend_from_slice(g);
                merged_groups[last].sort_unstable();
                merged_boxes[last] = merged_boxes[last].union(b);
                stats.merges += 1;
            } else {
                merged_groups.push(g.clone());
                merged_boxes.push(*b);
            }
        }
        groups = merged_groups;
        boxes = merged_boxes;
    }

    // split at a random token boundary
    let mut split_boxes = Vec::with_capacity(boxes.len());
    for (g, b) in groups.iter().zip(&boxes) {
        if g.len() >= 2 {
            stats.split_candidates += 1;
            if rng.gen::<f64>() < noise.p_split {
                let cut = rng.gen_range(1..g.len());
                for part in [&g[..cut], &g[cut..]] {
                    split_boxes.push(BBox::union_all(part.iter().map(|&i| &page.tokens[i].bbox)).unwrap());
                }
                stats.splits += 1;
                continue;
            }
        }
        split_boxes.push(*b);
    }

    // dilate or erode box edges
    let mut heights: Vec<f64> = page.tokens.iter().map(|t| t.bbox.height()).collect();
    let scale = noise.jitter_scale * median(&mut heights);
    for b in split_boxes.iter_mut() {
        if rng.gen::<f64>() < noise.p_jitter {
            let mut d = || if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 };
            let (x0, y0, x1, y1) = (b.x0 - d(), b.y0 - d(), b.x1 + d(), b.y1 + d());
            let cx = (x0 + x1) / 2.0;
            let cy = (y0 + y1) / 2.0;
            *b = BBox::new(
                x0.min(cx).clamp(0.0, page.width),
                y0.min(cy).clamp(0.0, page.height),
                x1.max(cx).clamp(0.0, page.width),
                y1.max(cy).clamp(0.0, page.height),
            );
            stats.jitters += 1;
        }
    }

    let mut allocated: Vec<VisualGroup> = allocate_tokens(page, &split_boxes, kind)
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect();
    for g in allocated.iter_mut() {
        g.label = modal_label(g.token_indices.iter().filter_map(|&i| page.tokens[i].label));
    }
    let mut out = page.clone();
    *out.groups_mut(kind) = allocated;
    Ok((out, stats))
}
