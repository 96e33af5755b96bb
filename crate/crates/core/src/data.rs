//! Domain types shared by every stage, plus the manifest, embedding and score
//! file formats.
//!
//! Embedding files (`.lide`) are binary: the magic `LIDE`, then little-endian
//! `u32` version (1), `N`, `D`, followed by `N * D` little-endian `f32` values in
//! row-major order. The format carries no ids; rows pair with manifest lines by
//! position (see [`EmbeddingSet::with_manifest`]).
//!
//! Score files are tab-separated text with a header `id<TAB>lang_1<TAB>...`
//! and one row per utterance. Values are written with shortest round-trip
//! formatting, so a written matrix reads back bit-identical.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMBEDDING_MAGIC: &[u8; 4] = b"LIDE";
const EMBEDDING_VERSION: u32 = 1;
const EMBEDDING_HEADER_LEN: usize = 16;

/// Ordered, duplicate-free list of language names. Its order fixes the
/// column order of every score matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LanguageList {
    names: Vec<String>,
}

impl LanguageList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::LanguageList("no languages".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::LanguageList("blank language name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::LanguageList(format!("duplicate language {n:?}")));
            }
        }
        Ok(LanguageList { names })
    }

    /// Reads one language per line; blank lines and `#` comments are skipped.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for LanguageList {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LanguageList::new(names)
    }
}

impl From<LanguageList> for Vec<String> {
    fn from(list: LanguageList) -> Self {
        list.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_path: Option<String>,
    pub label: Option<usize>,
    pub duration_s: Option<f64>,
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    #[serde(default)]
    audio: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    duration: Option<f64>,
}

/// Parses a JSON-lines manifest. Labels are resolved against `languages`.
/// Whitespace-only lines are skipped; line numbers in errors are 1-based.
pub fn read_manifest(path: impl AsRef<Path>, languages: &LanguageList) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file), languages).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_manifest(reader: impl BufRead, languages: &LanguageList) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        let label = match entry.label {
            Some(name) => Some(languages.index_of(&name).ok_or(Error::UnknownLabel {
                line: line_no,
                label: name,
            })?),
            None => None,
        };
        if let Some(d) = entry.duration {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: format!("invalid duration {d}"),
                });
            }
        }
        out.push(Utterance {
            id: entry.id,
            audio_path: entry.audio,
            label,
            duration_s: entry.duration,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(out)
}

/// `N` embeddings of dimension `D`, one row per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::invalid("embedding set must have N >= 1 and D >= 1"));
        }
        if ids.len() != vectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: vectors.nrows(),
                actual: ids.len(),
            });
        }
        check_unique(&ids)?;
        if let Some(row) = first_non_finite_row(&vectors) {
            return Err(Error::NonFinite { row });
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: ids.len(),
                    actual: l.len(),
                });
            }
        }
        Ok(EmbeddingSet {
            ids,
            vectors,
            labels,
        })
    }

    /// Pairs rows with manifest entries by position, taking ids and labels
    /// from the manifest. Labels are attached only when every entry has one.
    pub fn with_manifest(self, utterances: &[Utterance]) -> Result<Self> {
        if utterances.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: utterances.len(),
            });
        }
        let ids = utterances.iter().map(|u| u.id.clone()).collect();
        let labels: Option<Vec<usize>> = utterances.iter().map(|u| u.label).collect();
        EmbeddingSet::new(ids, self.vectors, labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let vectors = self.vectors.select_rows(rows.iter());
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        EmbeddingSet::new(ids, vectors, labels)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

fn first_non_finite_row(m: &DMatrix<f64>) -> Option<usize> {
    (0..m.nrows()).find(|&r| m.row(r).iter().any(|v| !v.is_finite()))
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(set.vectors());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an embedding file. Ids are the zero-based row numbers as strings
/// until replaced via [`EmbeddingSet::with_manifest`].
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

pub fn encode_embeddings(vectors: &DMatrix<f64>) -> Vec<u8> {
    let (n, d) = vectors.shape();
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * n * d);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for r in 0..n {
        for c in 0..d {
            out.extend_from_slice(&(vectors[(r, c)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::NotEmbeddingFile);
    }
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(Error::Truncated {
            expected: EMBEDDING_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != EMBEDDING_VERSION {
        return Err(Error::UnsupportedEmbeddingVersion(version));
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    let expected = EMBEDDING_HEADER_LEN + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[EMBEDDING_HEADER_LEN..];
    let vectors = DMatrix::from_fn(n, d, |r, c| {
        let i = 4 * (r * d + c);
        f32::from_le_bytes(payload[i..i + 4].try_into().unwrap()) as f64
    });
    if let Some(row) = first_non_finite_row(&vectors) {
        return Err(Error::NonFinite { row });
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    EmbeddingSet::new(ids, vectors, None)
}

/// Per-language log-likelihood scores, one row per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    ids: Vec<String>,
    scores: DMatrix<f64>,
    languages: LanguageList,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, scores: DMatrix<f64>, languages: LanguageList) -> Result<Self> {
        if scores.ncols() != languages.len() {
            return Err(Error::DimensionMismatch {
                expected: languages.len(),
                actual: scores.ncols(),
            });
        }
        if ids.len() != scores.nrows() {
            return Err(Error::DimensionMismatch {
                expected: scores.nrows(),
                actual: ids.len(),
            });
        }
        check_unique(&ids)?;
        if let Some(row) = first_non_finite_row(&scores) {
            return Err(Error::NonFinite { row });
        }
        Ok(ScoreMatrix {
            ids,
            scores,
            languages,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn languages(&self) -> &LanguageList {
        &self.languages
    }

    pub fn n_trials(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_languages(&self) -> usize {
        self.scores.ncols()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "id")?;
        for name in self.languages.names() {
            write!(w, "\t{name}")?;
        }
        writeln!(w)?;
        for (r, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for c in 0..self.scores.ncols() {
                write!(w, "\t{}", self.scores[(r, c)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::invalid("empty score file"))?;
        let mut cols = header.split('\t');
        if cols.next() != Some("id") {
            return Err(Error::MalformedLine {
                line: 1,
                message: "score header must start with `id`".into(),
            });
        }
        let languages = LanguageList::new(cols)?;
        let k = languages.len();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let row: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if row.len() != k {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    message: format!("expected {k} scores, found {}", row.len()),
                });
            }
            ids.push(id);
            values.extend(row);
        }
        let scores = DMatrix::from_row_slice(ids.len(), k, &values);
        ScoreMatrix::new(ids, scores, languages)
    }
}

/// Ground-truth language per trial id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLabels {
    ids: Vec<String>,
    true_lang: Vec<usize>,
}

impl TrialLabels {
    pub fn new(ids: Vec<String>, true_lang: Vec<usize>, n_languages: usize) -> Result<Self> {
        if ids.len() != true_lang.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: true_lang.len(),
            });
        }
        check_unique(&ids)?;
        if let Some(&bad) = true_lang.iter().find(|&&l| l >= n_languages) {
            return Err(Error::invalid(format!(
                "label index {bad} out of range for {n_languages} languages"
            )));
        }
        Ok(TrialLabels { ids, true_lang })
    }

    /// Every utterance must carry a label.
    pub fn from_utterances(utts: &[Utterance], n_languages: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(utts.len());
        let mut labels = Vec::with_capacity(utts.len());
        for u in utts {
            let l = u
                .label
                .ok_or_else(|| Error::invalid(format!("utterance {:?} has no label", u.id)))?;
            ids.push(u.id.clone());
            labels.push(l);
        }
        TrialLabels::new(ids, labels, n_languages)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn true_lang(&self) -> &[usize] {
        &self.true_lang
    }

    /// Labels reordered to follow `scores` row order. The two id sets must
    /// be equal.
    pub fn align(&self, scores: &ScoreMatrix) -> Result<Vec<usize>> {
        let by_id: HashMap<&str, usize> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.true_lang.iter().copied())
            .collect();
        let mut out = Vec::with_capacity(scores.n_trials());
        for id in scores.ids() {
            let l = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::UnmatchedId(id.clone()))?;
            if *l >= scores.n_languages() {
                return Err(Error::invalid(format!(
                    "label of {id:?} outside the score matrix languages"
                )));
            }
            out.push(*l);
        }
        if self.ids.len() != scores.n_trials() {
            let score_ids: HashSet<&str> = scores.ids().iter().map(String::as_str).collect();
            let missing = self
                .ids
                .iter()
                .find(|id| !score_ids.contains(id.as_str()))
                .expect("differing sizes imply an unmatched label id");
            return Err(Error::UnmatchedId(missing.clone()));
        }
        Ok(out)
    }
}
