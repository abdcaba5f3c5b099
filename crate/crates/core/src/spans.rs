//! Phrase spans over response tokens: a template chunker driven by a
//! part-of-speech lexicon, and the span sidecar file format.
//!
//! Sidecar lines are `sample_id start length kind`; lexicon lines are
//! `token_id TAG`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpanKind {
    Np,
    Vp,
    Pp,
    Other,
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanKind::Np => "NP",
            SpanKind::Vp => "VP",
            SpanKind::Pp => "PP",
            SpanKind::Other => "OTHER",
        })
    }
}

impl FromStr for SpanKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "NP" => Ok(SpanKind::Np),
            "VP" => Ok(SpanKind::Vp),
            "PP" => Ok(SpanKind::Pp),
            "OTHER" => Ok(SpanKind::Other),
            _ => Err(format!("unknown span kind {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub kind: SpanKind,
}

impl Span {
    pub fn new(start: usize, len: usize, kind: SpanKind) -> Self {
        Self { start, len, kind }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.start, self.len, self.kind)
    }
}

/// Checks that spans are non-empty, sorted, disjoint, and (when `seq_len` is
/// given) inside the sequence.
pub fn validate_spans(spans: &[Span], seq_len: Option<usize>) -> std::result::Result<(), String> {
    for (i, s) in spans.iter().enumerate() {
        if s.len == 0 {
            return Err(format!("span {s} has zero length"));
        }
        if let Some(n) = seq_len {
            if s.end() > n {
                return Err(format!("span {s} exceeds length {n}"));
            }
        }
        if i > 0 && spans[i - 1].end() > s.start {
            return Err(format!("span {} overlaps {s}", spans[i - 1]));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SpanAnnotation {
    pub sample_id: u64,
    pub spans: Vec<Span>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Adv,
    Prep,
    Other,
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "DET" => PosTag::Det,
            "ADJ" => PosTag::Adj,
            "NOUN" => PosTag::Noun,
            "VERB" => PosTag::Verb,
            "ADV" => PosTag::Adv,
            "PREP" => PosTag::Prep,
            "OTHER" => PosTag::Other,
            _ => return Err(format!("unknown tag {s:?}")),
        })
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosTag::Det => "DET",
            PosTag::Adj => "ADJ",
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adv => "ADV",
            PosTag::Prep => "PREP",
            PosTag::Other => "OTHER",
        })
    }
}

/// Coarse part-of-speech tag per token id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    tags: BTreeMap<usize, PosTag>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: usize, tag: PosTag) {
        self.tags.insert(id, tag);
    }

    /// Tag of `id`; unknown ids are `Other`.
    pub fn tag(&self, id: usize) -> PosTag {
        self.tags.get(&id).copied().unwrap_or(PosTag::Other)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg,
            };
            let mut parts = line.split_whitespace();
            let (Some(id), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `token_id TAG`".into()));
            };
            let id = id.parse().map_err(|_| err(format!("bad token id {id:?}")))?;
            lex.insert(id, tag.parse().map_err(err)?);
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text: String = self
            .tags
            .iter()
            .map(|(id, tag)| format!("{id} {tag}\n"))
            .collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Length of an `DET? ADJ* NOUN+` match starting at `i`, if any.
fn match_np(tags: &[PosTag], i: usize) -> Option<usize> {
    let mut j = i;
    if tags.get(j) == Some(&PosTag::Det) {
        j += 1;
    }
    while tags.get(j) == Some(&PosTag::Adj) {
        j += 1;
    }
    let nouns_from = j;
    while tags.get(j) == Some(&PosTag::Noun) {
        j += 1;
    }
    (j > nouns_from).then_some(j - i)
}

/// Template chunker over lexicon tags.
///
/// Scanning left to right, the first template that matches at the current
/// token wins: `PREP NP` → PP, `DET? ADJ* NOUN+` → NP, `VERB ADV?` → VP.
/// Tokens matching no template are skipped.
pub fn chunk_heuristic(tokens: &[usize], lexicon: &Lexicon) -> Vec<Span> {
    let tags: Vec<PosTag> = tokens.iter().map(|&t| lexicon.tag(t)).collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let found = match tags[i] {
            PosTag::Prep => match_np(&tags, i + 1).map(|n| (n + 1, SpanKind::Pp)),
            PosTag::Verb => {
                let n = if tags.get(i + 1) == Some(&PosTag::Adv) { 2 } else { 1 };
                Some((n, SpanKind::Vp))
            }
            PosTag::Det | PosTag::Adj | PosTag::Noun => match_np(&tags, i).map(|n| (n, SpanKind::Np)),
            _ => None,
        };
        match found {
            Some((len, kind)) => {
                spans.push(Span::new(i, len, kind));
                i += len;
            }
            None => i += 1,
        }
    }
    spans
}

/// Parses a span sidecar. Spans of one sample may appear on any lines; each
/// sample's set is sorted and checked for overlap.
pub fn parse_annotations(text: &str, origin: &str) -> Result<BTreeMap<u64, SpanAnnotation>> {
    let mut map: BTreeMap<u64, SpanAnnotation> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_owned(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad integer {s:?}")));
        let id = num(fields[0])?;
        let start = num(fields[1])? as usize;
        let len = num(fields[2])? as usize;
        if len == 0 {
            return Err(err("span length must be positive".into()));
        }
        let kind = fields[3].parse().map_err(err)?;
        map.entry(id)
            .or_insert_with(|| SpanAnnotation {
                sample_id: id,
                spans: Vec::new(),
            })
            .spans
            .push(Span::new(start, len, kind));
    }
    for ann in map.values_mut() {
        ann.spans.sort();
        if validate_spans(&ann.spans, None).is_err() {
            return Err(Error::SpanOverlap(ann.sample_id));
        }
    }
    Ok(map)
}

pub fn load_annotations(path: &Path) -> Result<BTreeMap<u64, SpanAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn format_annotations<'a>(anns: impl IntoIterator<Item = &'a SpanAnnotation>) -> String {
    let mut out = String::new();
    for ann in anns {
        for s in &ann.spans {
            out.push_str(&format!("{} {s}\n", ann.sample_id));
        }
    }
    out
}

pub fn save_annotations<'a>(
    path: &Path,
    anns: impl IntoIterator<Item = &'a SpanAnnotation>,
) -> Result<()> {
    fs::write(path, format_annotations(anns)).map_err(|e| Error::io(path, e))
}
