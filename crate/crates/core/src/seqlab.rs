//! The three label granularities and conversions between them.
//!
//! Strong labels carry onset/offset timestamps. Sequential labels keep only
//! the time order of event boundaries, as `class_start` / `class_end` tokens.
//! Weak labels are the set of classes present. The token alphabet is laid out
//! as id 2k = start of class k, id 2k+1 = end of class k, id 2K = blank.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::ctc::TokenSeq;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("class table: {0}")]
    BadClassTable(String),
    #[error("invalid strong label: {0}")]
    InvalidStrong(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An ordered set of class names defining the token alphabet of size 2K+1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Self, LabelError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(LabelError::BadClassTable("no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return Err(LabelError::BadClassTable(format!(
                    "bad class name {name:?}: must be non-empty without whitespace"
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(LabelError::BadClassTable(format!("duplicate class {name:?}")));
            }
        }
        Ok(ClassTable { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    /// Alphabet size N = 2K + 1 (starts, ends, blank).
    pub fn alphabet_size(&self) -> usize {
        2 * self.names.len() + 1
    }

    pub fn blank(&self) -> usize {
        2 * self.names.len()
    }

    pub fn start_token(&self, class: usize) -> usize {
        2 * class
    }

    pub fn end_token(&self, class: usize) -> usize {
        2 * class + 1
    }

    pub fn is_start(&self, id: usize) -> bool {
        id < self.blank() && id % 2 == 0
    }

    /// Class index a non-blank token belongs to.
    pub fn token_class(&self, id: usize) -> Option<usize> {
        (id < self.blank()).then_some(id / 2)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Printable token name: `dog_start`, `dog_end`, or `-` for blank.
    pub fn token_name(&self, id: usize) -> Option<String> {
        if id == self.blank() {
            return Some("-".into());
        }
        let class = self.token_class(id)?;
        let suffix = if self.is_start(id) { "start" } else { "end" };
        Some(format!("{}_{}", self.names[class], suffix))
    }

    /// Parse `dog_start` / `dog_end` back into a token id.
    pub fn parse_token(&self, token: &str) -> Option<usize> {
        if let Some(name) = token.strip_suffix("_start") {
            return self.class_index(name).map(|c| self.start_token(c));
        }
        if let Some(name) = token.strip_suffix("_end") {
            return self.class_index(name).map(|c| self.end_token(c));
        }
        None
    }

    /// One class name per line.
    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = fs::read_to_string(path)?;
        ClassTable::new(text.lines().filter(|l| !l.is_empty()).collect::<Vec<_>>())
    }
}

/// One event occurrence with exact boundaries, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongLabel {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
}

impl StrongLabel {
    pub fn new(class: usize, onset: f64, offset: f64) -> Self {
        StrongLabel {
            class,
            onset,
            offset,
        }
    }
}

fn check_strong(labels: &[StrongLabel], table: &ClassTable) -> Result<(), LabelError> {
    for l in labels {
        if l.class >= table.num_classes() {
            return Err(LabelError::InvalidStrong(format!(
                "class index {} out of range",
                l.class
            )));
        }
        if !(l.onset >= 0.0 && l.onset < l.offset) {
            return Err(LabelError::InvalidStrong(format!(
                "need 0 <= onset < offset, got [{}, {}]",
                l.onset, l.offset
            )));
        }
    }
    // Instances of the same class must not overlap (cross-class overlap is
    // the polyphonic case and is fine).
    for class in 0..table.num_classes() {
        let mut spans: Vec<(f64, f64)> = labels
            .iter()
            .filter(|l| l.class == class)
            .map(|l| (l.onset, l.offset))
            .collect();
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(LabelError::InvalidStrong(format!(
                    "overlapping instances of class {}: [{}, {}] and [{}, {}]",
                    table.names()[class],
                    pair[0].0,
                    pair[0].1,
                    pair[1].0,
                    pair[1].1
                )));
            }
        }
    }
    Ok(())
}

/// Convert strong labels to the boundary-token sequence. Boundaries are
/// sorted by time; at equal times, ends sort before starts, then by class
/// index, so touching instances never read as overlapping.
pub fn sequential_from_strong(labels: &[StrongLabel], table: &ClassTable) -> Result<TokenSeq, LabelError> {
    check_strong(labels, table)?;
    // (time, start?, class, token)
    let mut boundaries: Vec<(f64, bool, usize, usize)> = Vec::with_capacity(labels.len() * 2);
    for l in labels {
        boundaries.push((l.onset, true, l.class, table.start_token(l.class)));
        boundaries.push((l.offset, false, l.class, table.end_token(l.class)));
    }
    boundaries.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1)) // false (end) before true (start)
            .then(a.2.cmp(&b.2))
    });
    Ok(boundaries.into_iter().map(|(_, _, _, token)| token).collect())
}

/// A well-formedness violation of the per-class start/end alternation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An end token with no open start, at this token position.
    EndWithoutStart { class: usize, position: usize },
    /// A start token while the class is already open.
    StartWhileOpen { class: usize, position: usize },
    /// A start token never closed by the end of the sequence.
    UnclosedStart { class: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EndWithoutStart { class, position } => {
                write!(f, "end without start for class {class} at position {position}")
            }
            Violation::StartWhileOpen { class, position } => {
                write!(f, "start while already open for class {class} at position {position}")
            }
            Violation::UnclosedStart { class } => {
                write!(f, "unclosed start for class {class}")
            }
        }
    }
}

/// Check the per-class alternation property. An empty report means valid.
pub fn validate(seq: &TokenSeq, table: &ClassTable) -> Vec<Violation> {
    let mut open = vec![false; table.num_classes()];
    let mut violations = Vec::new();
    for (position, &id) in seq.ids().iter().enumerate() {
        let Some(class) = table.token_class(id) else {
            continue;
        };
        if table.is_start(id) {
            if open[class] {
                violations.push(Violation::StartWhileOpen { class, position });
            }
            open[class] = true;
        } else {
            if !open[class] {
                violations.push(Violation::EndWithoutStart { class, position });
            }
            open[class] = false;
        }
    }
    for (class, &is_open) in open.iter().enumerate() {
        if is_open {
            violations.push(Violation::UnclosedStart { class });
        }
    }
    violations
}

/// The set of classes with at least one start token.
pub fn weak_from_sequential(seq: &TokenSeq, table: &ClassTable) -> BTreeSet<usize> {
    seq.ids()
        .iter()
        .filter(|&&id| table.is_start(id))
        .filter_map(|&id| table.token_class(id))
        .collect()
}

// ---------------------------------------------------------------------------
// File formats. One record per line, tab-separated. Sequential:
// `<clip_id>\t<token> <token> ...`; strong: `<clip_id>\t<class>\t<onset>\t<offset>`
// (one line per event, grouped by first appearance of the clip id); weak:
// `<clip_id>\t<class> <class> ...`.
// ---------------------------------------------------------------------------

pub fn write_sequential_file(
    path: &Path,
    records: &[(String, TokenSeq)],
    table: &ClassTable,
) -> Result<(), LabelError> {
    let mut out = String::new();
    for (clip_id, seq) in records {
        let tokens: Vec<String> = seq
            .ids()
            .iter()
            .map(|&id| {
                table
                    .token_name(id)
                    .ok_or_else(|| LabelError::UnknownClass(format!("token id {id}")))
            })
            .collect::<Result<_, _>>()?;
        out.push_str(clip_id);
        out.push('\t');
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn parse_sequential_file(path: &Path, table: &ClassTable) -> Result<Vec<(String, TokenSeq)>, LabelError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (clip_id, rest) = line.split_once('\t').ok_or_else(|| LabelError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "missing tab separator".into(),
        })?;
        let mut ids = Vec::new();
        for token in rest.split_whitespace() {
            let id = table.parse_token(token).ok_or_else(|| LabelError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("unknown token {token:?}"),
            })?;
            ids.push(id);
        }
        records.push((clip_id.to_string(), TokenSeq::new(ids)));
    }
    Ok(records)
}

pub fn write_strong_file(
    path: &Path,
    records: &[(String, Vec<StrongLabel>)],
    table: &ClassTable,
) -> Result<(), LabelError> {
    let mut out = String::new();
    for (clip_id, labels) in records {
        for l in labels {
            let name = table
                .names()
                .get(l.class)
                .ok_or_else(|| LabelError::UnknownClass(format!("class index {}", l.class)))?;
            out.push_str(&format!("{clip_id}\t{name}\t{}\t{}\n", l.onset, l.offset));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn parse_strong_file(path: &Path, table: &ClassTable) -> Result<Vec<(String, Vec<StrongLabel>)>, LabelError> {
    let text = fs::read_to_string(path)?;
    let mut records: Vec<(String, Vec<StrongLabel>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| LabelError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let class = table
            .class_index(fields[1])
            .ok_or_else(|| parse_err(format!("unknown class {:?}", fields[1])))?;
        let onset: f64 = fields[2]
            .parse()
            .map_err(|e| parse_err(format!("bad onset: {e}")))?;
        let offset: f64 = fields[3]
            .parse()
            .map_err(|e| parse_err(format!("bad offset: {e}")))?;
        let label = StrongLabel::new(class, onset, offset);
        match records.iter_mut().find(|(id, _)| id == fields[0]) {
            Some((_, labels)) => labels.push(label),
            None => records.push((fields[0].to_string(), vec![label])),
        }
    }
    Ok(records)
}

pub fn write_weak_file(
    path: &Path,
    records: &[(String, BTreeSet<usize>)],
    table: &ClassTable,
) -> Result<(), LabelError> {
    let mut out = String::new();
    for (clip_id, classes) in records {
        let names: Vec<&str> = classes
            .iter()
            .map(|&c| {
                table
                    .names()
                    .get(c)
                    .map(String::as_str)
                    .ok_or_else(|| LabelError::UnknownClass(format!("class index {c}")))
            })
            .collect::<Result<_, _>>()?;
        out.push_str(clip_id);
        out.push('\t');
        out.push_str(&names.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn parse_weak_file(path: &Path, table: &ClassTable) -> Result<Vec<(String, BTreeSet<usize>)>, LabelError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (clip_id, rest) = line.split_once('\t').ok_or_else(|| LabelError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "missing tab separator".into(),
        })?;
        let mut classes = BTreeSet::new();
        for name in rest.split_whitespace() {
            let class = table.class_index(name).ok_or_else(|| LabelError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("unknown class {name:?}"),
            })?;
            classes.insert(class);
        }
        records.push((clip_id.to_string(), classes));
    }
    Ok(records)
}
