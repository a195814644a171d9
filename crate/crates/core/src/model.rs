//! Document data model: boxes, tokens, visual groups, pages and label sets.
//!
//! Coordinates are page points with the origin at the top-left corner and y
//! growing downward.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn center_y(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }

    /// Finite, non-negative and correctly ordered.
    pub fn is_valid(&self) -> bool {
        let c = [self.x0, self.y0, self.x1, self.y1];
        c.iter().all(|v| v.is_finite() && *v >= 0.0) && self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Union of a non-empty sequence of boxes.
    pub fn union_all<'a, I: IntoIterator<Item = &'a BBox>>(boxes: I) -> Option<BBox> {
        boxes.into_iter().fold(None, |acc, b| match acc {
            None => Some(*b),
            Some(a) => Some(a.union(b)),
        })
    }

    /// Open-interior containment: points on the border are outside.
    pub fn strictly_contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width && self.y1 <= height
    }

    /// Length of the shared x-interval (0 when disjoint).
    pub fn x_overlap(&self, other: &BBox) -> f64 {
        (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0)
    }

    /// Vertical distance between the boxes, 0 when their y-ranges intersect.
    pub fn y_gap(&self, other: &BBox) -> f64 {
        (self.y0.max(other.y0) - self.y1.min(other.y1)).max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub bbox: BBox,
    pub label: Option<usize>,
}

impl Token {
    pub fn new(text: impl Into<String>, bbox: BBox, label: Option<usize>) -> Self {
        Token {
            text: text.into(),
            bbox,
            label,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Line,
    Block,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Line => f.write_str("line"),
            GroupKind::Block => f.write_str("block"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualGroup {
    pub bbox: BBox,
    pub kind: GroupKind,
    /// Indices into the page token sequence, strictly increasing.
    pub token_indices: Vec<usize>,
    pub label: Option<usize>,
}

impl VisualGroup {
    pub fn new(bbox: BBox, kind: GroupKind, token_indices: Vec<usize>) -> Self {
        VisualGroup {
            bbox,
            kind,
            token_indices,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.token_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_indices.is_empty()
    }

    pub fn first_token(&self) -> Option<usize> {
        self.token_indices.first().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub paper_id: String,
    pub page_index: usize,
    pub width: f64,
    pub height: f64,
    pub tokens: Vec<Token>,
    pub lines: Vec<VisualGroup>,
    pub blocks: Vec<VisualGroup>,
}

impl Page {
    pub fn new(paper_id: impl Into<String>, page_index: usize, width: f64, height: f64) -> Self {
        Page {
            paper_id: paper_id.into(),
            page_index,
            width,
            height,
            tokens: Vec::new(),
            lines: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn extent(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width, self.height)
    }

    pub fn groups(&self, kind: GroupKind) -> &[VisualGroup] {
        match kind {
            GroupKind::Line => &self.lines,
            GroupKind::Block => &self.blocks,
        }
    }

    pub fn groups_mut(&mut self, kind: GroupKind) -> &mut Vec<VisualGroup> {
        match kind {
            GroupKind::Line => &mut self.lines,
            GroupKind::Block => &mut self.blocks,
        }
    }

    /// Gold labels for every token, or `None` if any token is unlabeled.
    pub fn gold_labels(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.label).collect()
    }

    /// Non-empty groups of `kind` in reading order (by first token index),
    /// followed by singleton groups for tokens no group covers.
    pub fn covering_groups(&self, kind: GroupKind) -> Vec<VisualGroup> {
        let mut covered = vec![false; self.tokens.len()];
        let mut out: Vec<VisualGroup> = Vec::new();
        for g in self.groups(kind).iter().filter(|g| !g.is_empty()) {
            let mut g = g.clone();
            g.token_indices.retain(|&i| i < covered.len() && !covered[i]);
            if g.is_empty() {
                continue;
            }
            for &i in &g.token_indices {
                covered[i] = true;
            }
            out.push(g);
        }
        for (i, c) in covered.iter().enumerate() {
            if !c {
                let mut g = VisualGroup::new(self.tokens[i].bbox, kind, vec![i]);
                g.label = self.tokens[i].label;
                out.push(g);
            }
        }
        out.sort_by_key(|g| g.token_indices[0]);
        out
    }
}

/// Ordered category inventory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub names: Vec<String>,
    /// Index of the majority body-text category.
    pub background_index: usize,
}

const DEFAULT15: &str = include_str!("../labels/default15.toml");
const GROTOAP2: &str = include_str!("../labels/grotoap2.toml");
const DOCBANK: &str = include_str!("../labels/docbank.toml");

#[derive(Deserialize)]
struct LabelFile {
    names: Vec<String>,
    background: String,
}

impl LabelSet {
    pub fn new(names: Vec<String>, background_index: usize) -> Result<Self> {
        let set = LabelSet {
            names,
            background_index,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        let n = self.names.len();
        if !(2..=64).contains(&n) {
            return Err(Error::config("labels.names", format!("{n} categories, expected 2..=64")));
        }
        let unique: HashSet<&str> = self.names.iter().map(String::as_str).collect();
        if unique.len() != n {
            return Err(Error::config("labels.names", "duplicate category name"));
        }
        if self.background_index >= n {
            return Err(Error::config("labels.background", "index out of range"));
        }
        Ok(())
    }

    /// Parse a label-set configuration file (`names = [...]`, `background = "..."`).
    pub fn from_toml(src: &str) -> Result<Self> {
        let file: LabelFile =
            toml::from_str(src).map_err(|e| Error::config("labels", e.to_string()))?;
        let background_index = file
            .names
            .iter()
            .position(|n| *n == file.background)
            .ok_or_else(|| Error::config("labels.background", "not one of the names"))?;
        LabelSet::new(file.names, background_index)
    }

    /// One of the bundled inventories: `default15`, `grotoap2`, `docbank`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "default15" => LabelSet::from_toml(DEFAULT15),
            "grotoap2" => LabelSet::from_toml(GROTOAP2),
            "docbank" => LabelSet::from_toml(DOCBANK),
            other => Err(Error::config("labels", format!("unknown label set {other:?}"))),
        }
    }

    /// The 15-category hand-annotation inventory.
    pub fn default15() -> Self {
        LabelSet::builtin("default15").expect("bundled label set is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub labels: LabelSet,
    pub pages: Vec<Page>,
}

impl Dataset {
    pub fn new(labels: LabelSet, pages: Vec<Page>) -> Self {
        Dataset { labels, pages }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            labels: self.labels.clone(),
            pages: indices.iter().map(|&i| self.pages[i].clone()).collect(),
        }
    }

    pub fn paper_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.pages
            .iter()
            .filter(|p| seen.insert(p.paper_id.as_str()))
            .map(|p| p.paper_id.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    BadBBox { token: usize },
    EmptyText { token: usize },
    WhitespaceInText { token: usize },
    LabelOutOfRange { token: usize, label: usize },
    TokenOutOfBounds { token: usize },
    BadPageExtent,
    GroupBadBBox { kind: GroupKind, group: usize },
    GroupIndexOutOfRange { kind: GroupKind, group: usize, index: usize },
    GroupNotIncreasing { kind: GroupKind, group: usize },
    GroupLabelOutOfRange { kind: GroupKind, group: usize, label: usize },
    GroupOverlap { kind: GroupKind, first: usize, second: usize, shared: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadBBox { token } => write!(f, "token {token}: malformed bbox"),
            Violation::EmptyText { token } => write!(f, "token {token}: empty text"),
            Violation::WhitespaceInText { token } => write!(f, "token {token}: text contains whitespace"),
            Violation::LabelOutOfRange { token, label } => {
                write!(f, "token {token}: label {label} out of range")
            }
            Violation::TokenOutOfBounds { token } => write!(f, "token {token}: bbox outside page"),
            Violation::BadPageExtent => write!(f, "page width/height not finite and positive"),
            Violation::GroupBadBBox { kind, group } => write!(f, "{kind} {group}: malformed bbox"),
            Violation::GroupIndexOutOfRange { kind, group, index } => {
                write!(f, "{kind} {group}: token index {index} out of range")
            }
            Violation::GroupNotIncreasing { kind, group } => {
                write!(f, "{kind} {group}: token indices not strictly increasing")
            }
            Violation::GroupLabelOutOfRange { kind, group, label } => {
                write!(f, "{kind} {group}: label {label} out of range")
            }
            Violation::GroupOverlap { kind, first, second, shared } => {
                write!(f, "{kind}s {first} and {second} share tokens {shared:?}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Check every page invariant and collect the violations. Never fails.
pub fn validate_page(page: &Page, labels: &LabelSet) -> ValidationReport {
    let mut violations = Vec::new();
    let extent_ok = page.width.is_finite()
        && page.height.is_finite()
        && page.width > 0.0
        && page.height > 0.0;
    if !extent_ok {
        violations.push(Violation::BadPageExtent);
    }
    for (i, t) in page.tokens.iter().enumerate() {
        if t.text.is_empty() {
            violations.push(Violation::EmptyText { token: i });
        } else if t.text.chars().any(char::is_whitespace) {
            violations.push(Violation::WhitespaceInText { token: i });
        }
        if !t.bbox.is_valid() {
            violations.push(Violation::BadBBox { token: i });
        } else if extent_ok && !t.bbox.within(page.width, page.height) {
            violations.push(Violation::TokenOutOfBounds { token: i });
        }
        if let Some(label) = t.label {
            if label >= labels.len() {
                violations.push(Violation::LabelOutOfRange { token: i, label });
            }
        }
    }
    let n = page.tokens.len();
    for kind in [GroupKind::Line, GroupKind::Block] {
        let groups = page.groups(kind);
        // token index -> first group that claimed it
        let mut owner: HashMap<usize, usize> = HashMap::new();
        let mut shared: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            if !g.bbox.is_valid() {
                violations.push(Violation::GroupBadBBox { kind, group: gi });
            }
            if let Some(label) = g.label {
                if label >= labels.len() {
                    violations.push(Violation::GroupLabelOutOfRange { kind, group: gi, label });
                }
            }
            if g.token_indices.windows(2).any(|w| w[0] >= w[1]) {
                violations.push(Violation::GroupNotIncreasing { kind, group: gi });
            }
            for &ti in &g.token_indices {
                if ti >= n {
                    violations.push(Violation::GroupIndexOutOfRange { kind, group: gi, index: ti });
                    continue;
                }
                match owner.get(&ti) {
                    Some(&other) if other != gi => {
                        shared.entry((other, gi)).or_default().push(ti);
                    }
                    Some(_) => {}
                    None => {
                        owner.insert(ti, gi);
                    }
                }
            }
        }
        for ((first, second), shared) in shared {
            violations.push(Violation::GroupOverlap { kind, first, second, shared });
        }
    }
    ValidationReport { violations }
}

/// Reorder tokens line-major: lines by (top, left), tokens within a line by
/// left edge. Tokens outside every line keep their relative order at the end.
/// Group indices are remapped to the new order.
pub fn reading_order_sort(page: &Page) -> Result<Page> {
    if page.lines.is_empty() {
        return Err(Error::Input(
            "reading order needs line groups; detect lines first".into(),
        ));
    }
    let mut line_order: Vec<usize> = (0..page.lines.len()).collect();
    line_order.sort_by(|&a, &b| {
        let (la, lb) = (&page.lines[a].bbox, &page.lines[b].bbox);
        la.y0
            .total_cmp(&lb.y0)
            .then(la.x0.total_cmp(&lb.x0))
            .then(a.cmp(&b))
    });

    let n = page.tokens.len();
    let mut placed = vec![false; n];
    let mut new_to_old: Vec<usize> = Vec::with_capacity(n);
    for &li in &line_order {
        let mut members: Vec<usize> = page.lines[li]
            .token_indices
            .iter()
            .copied()
            .filter(|&i| i < n && !placed[i])
            .collect();
        members.sort_by(|&a, &b| {
            page.tokens[a]
                .bbox
                .x0
                .total_cmp(&page.tokens[b].bbox.x0)
                .then(a.cmp(&b))
        });
        for i in members {
            placed[i] = true;
            new_to_old.push(i);
        }
    }
    new_to_old.extend((0..n).filter(|&i| !placed[i]));

    let mut old_to_new = vec![0usize; n];
    for (new, &old) in new_to_old.iter().enumerate() {
        old_to_new[old] = new;
    }
    let remap = |g: &VisualGroup| {
        let mut g = g.clone();
        g.token_indices = g.token_indices.iter().map(|&i| old_to_new[i]).collect();
        g.token_indices.sort_unstable();
        g
    };

    Ok(Page {
        paper_id: page.paper_id.clone(),
        page_index: page.page_index,
        width: page.width,
        height: page.height,
        tokens: new_to_old.iter().map(|&i| page.tokens[i].clone()).collect(),
        lines: line_order.iter().map(|&li| remap(&page.lines[li])).collect(),
        blocks: page.blocks.iter().map(remap).collect(),
    })
}
