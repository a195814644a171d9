//! Line-delimited JSON page interchange: one page record per line, labels by name.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_page, BBox, Dataset, GroupKind, LabelSet, Page, Token, VisualGroup};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    text: String,
    bbox: [f64; 4],
    label: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    bbox: [f64; 4],
    tokens: Vec<usize>,
    label: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageRecord {
    paper_id: String,
    page_index: usize,
    width: f64,
    height: f64,
    tokens: Vec<TokenRecord>,
    lines: Vec<GroupRecord>,
    blocks: Vec<GroupRecord>,
}

fn label_name(labels: &LabelSet, id: Option<usize>) -> Option<String> {
    id.map(|i| labels.name(i).to_string())
}

fn to_record(page: &Page, labels: &LabelSet) -> PageRecord {
    let group = |g: &VisualGroup| GroupRecord {
        bbox: g.bbox.to_array(),
        tokens: g.token_indices.clone(),
        label: label_name(labels, g.label),
    };
    PageRecord {
        paper_id: page.paper_id.clone(),
        page_index: page.page_index,
        width: page.width,
        height: page.height,
        tokens: page
            .tokens
            .iter()
            .map(|t| TokenRecord { text: t.text.clone(), bbox: t.bbox.to_array(), label: label_name(labels, t.label) })
            .collect(),
        lines: page.lines.iter().map(group).collect(),
        blocks: page.blocks.iter().map(group).collect(),
    }
}

fn from_record(rec: PageRecord, labels: &LabelSet) -> std::result::Result<Page, String> {
    let resolve = |name: Option<String>, what: &str| -> std::result::Result<Option<usize>, String> {
        match name {
            None => Ok(None),
            Some(n) => labels.index_of(&n).map(Some).ok_or_else(|| format!("field `label` of {what}: unknown label {n:?}")),
        }
    };
    let mut page = Page::new(rec.paper_id, rec.page_index, rec.width, rec.height);
    for (i, t) in rec.tokens.into_iter().enumerate() {
        let label = resolve(t.label, &format!("token {i}"))?;
        page.tokens.push(Token::new(t.text, BBox::from_array(t.bbox), label));
    }
    for (kind, groups) in [(GroupKind::Line, rec.lines), (GroupKind::Block, rec.blocks)] {
        for (i, g) in groups.into_iter().enumerate() {
            let mut vg = VisualGroup::new(BBox::from_array(g.bbox), kind, g.tokens);
            vg.label = resolve(g.label, &format!("{kind} {i}"))?;
            page.groups_mut(kind).push(vg);
        }
    }
    Ok(page)
}

/// Write one record per page.
pub fn save_pages(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for page in &dataset.pages {
        serde_json::to_writer(&mut w, &to_record(page, &dataset.labels))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read and validate every page; blank lines are skipped.
pub fn load_pages(path: &Path, labels: &LabelSet) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut pages = Vec::new();
    let mut buf = String::new();
    let mut offset = 0u64;
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let start = offset;
        offset += n as u64;
        let text = buf.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String, at: u64| Error::Parse { path: path.to_path_buf(), line: line_no, offset: at, message };
        let rec: PageRecord = serde_json::from_str(text).map_err(|e| {
            // At end of input the column points at the last byte read.
            let col = if e.is_eof() { e.column() } else { e.column().saturating_sub(1) } as u64;
            parse_err(e.to_string(), start + col)
        })?;
        let page = from_record(rec, labels).map_err(|m| parse_err(m, start))?;
        let report = validate_page(&page, labels);
        if !report.is_valid() {
            return Err(Error::InvalidPage { path: path.to_path_buf(), line: line_no, violations: report.to_string() });
        }
        pages.push(page);
    }
    Ok(Dataset::new(labels.clone(), pages))
}
