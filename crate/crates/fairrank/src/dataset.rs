//! Ingestion of pre-scored ranking data, degenerate-query filtering, and
//! deterministic calibration/test splits.
//!
//! Two input formats are supported:
//!
//! - JSONL: one query per line,
//!   `{"qid": "q1", "docs": [{"id": "a", "score": 1.5, "rel": 2}]}`.
//! - SVMLight/LETOR features plus a newline-delimited score sidecar
//!   (one real per feature line). Feature values are parsed and discarded;
//!   the pipeline is post-hoc on scores and never evaluates a model.
//!
//! Paths ending in `.gz` are transparently gunzipped on read (and gzipped
//! on write for [`write_jsonl`]).
//!
//! All collections are immutable after construction and safe to share
//! across threads for reading.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One scored document: an opaque id, the external scorer's raw score, and
/// an expert relevance grade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub raw_score: f64,
    pub relevance: u8,
}

/// One query's ordered document list. Doc ids are unique within a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub qid: String,
    pub docs: Vec<Document>,
}

impl ScoredQuery {
    /// Highest relevance grade present in the query.
    pub fn max_relevance(&self) -> u8 {
        self.docs.iter().map(|d| d.relevance).max().unwrap_or(0)
    }
}

/// An immutable set of queries with unique qids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCollection {
    pub queries: Vec<ScoredQuery>,
    pub provenance: String,
}

impl QueryCollection {
    pub fn new(queries: Vec<ScoredQuery>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for q in &queries {
            if !seen.insert(q.qid.as_str()) {
                return Err(Error::Validation(format!("duplicate qid {:?}", q.qid)));
            }
            if q.docs.is_empty() {
                return Err(Error::Validation(format!(
                    "query {:?} has no documents",
                    q.qid
                )));
            }
        }
        Ok(QueryCollection {
            queries,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Total document count across all queries.
    pub fn num_docs(&self) -> usize {
        self.queries.iter().map(|q| q.docs.len()).sum()
    }
}

/// Deterministic split parameters. The partition is a pure function of
/// `(seed, trial_index)`; the fraction applies at query granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub calibration_fraction: f64,
    pub seed: u64,
    pub trial_index: u32,
}

impl SplitSpec {
    pub fn new(calibration_fraction: f64, seed: u64, trial_index: u32) -> Result<Self> {
        if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "calibration_fraction must lie in (0,1), got {calibration_fraction}"
            )));
        }
        Ok(SplitSpec {
            calibration_fraction,
            seed,
            trial_index,
        })
    }

    /// Same split parameters with a different trial index.
    pub fn for_trial(&self, trial_index: u32) -> SplitSpec {
        SplitSpec {
            trial_index,
            ..*self
        }
    }
}

/// Parsing options. LETOR grades run 0-4; widen `max_grade` for other data.
#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_grade: u8,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { max_grade: 4 }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonQuery {
    qid: String,
    docs: Vec<JsonDoc>,
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    id: String,
    score: f64,
    rel: i64,
}

fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

fn validate_doc(
    path: &Path,
    line_no: usize,
    id: &str,
    score: f64,
    rel: i64,
    opts: &ParseOptions,
) -> Result<Document> {
    if !score.is_finite() {
        return Err(Error::parse(
            path,
            line_no,
            format!("doc {id:?} has non-finite score {score}"),
        ));
    }
    if rel < 0 || rel > i64::from(opts.max_grade) {
        return Err(Error::parse(
            path,
            line_no,
            format!(
                "doc {id:?} has relevance grade {rel} outside [0,{}]",
                opts.max_grade
            ),
        ));
    }
    Ok(Document {
        doc_id: id.to_string(),
        raw_score: score,
        relevance: rel as u8,
    })
}

/// Parse a JSONL query file (one JSON object per line).
pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<QueryCollection> {
    parse_jsonl_with(path, &ParseOptions::default())
}

pub fn parse_jsonl_with(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<QueryCollection> {
    let path = path.as_ref();
    let reader = open_text(path)?;
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let jq: JsonQuery = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, line_no, format!("malformed JSON: {e}")))?;
        let mut docs = Vec::with_capacity(jq.docs.len());
        let mut ids = HashSet::new();
        for jd in &jq.docs {
            if !ids.insert(jd.id.as_str()) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate doc id {:?} in query {:?}", jd.id, jq.qid),
                ));
            }
            docs.push(validate_doc(path, line_no, &jd.id, jd.score, jd.rel, opts)?);
        }
        if docs.is_empty() {
            return Err(Error::parse(
                path,
                line_no,
                format!("query {:?} has no documents", jq.qid),
            ));
        }
        queries.push(ScoredQuery { qid: jq.qid, docs });
    }
    QueryCollection::new(queries, format!("jsonl:{}", path.display()))
}

/// Serialize a collection back to JSONL (gzipped when the path ends in `.gz`).
pub fn write_jsonl(collection: &QueryCollection, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer: Box<dyn Write> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(BufWriter::new(GzEncoder::new(file, Default::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    for q in &collection.queries {
        let jq = JsonQuery {
            qid: q.qid.clone(),
            docs: q
                .docs
                .iter()
                .map(|d| JsonDoc {
                    id: d.doc_id.clone(),
                    score: d.raw_score,
                    rel: i64::from(d.relevance),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &jq)
            .map_err(|e| Error::Validation(format!("serialize query {:?}: {e}", q.qid)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parse SVMLight/LETOR features plus a score sidecar.
///
/// Feature lines look like `2 qid:301 1:0.5 2:0.1 # comment`; the sidecar has
/// one external score per feature line, aligned 1:1. Queries are grouped by
/// consecutive qid runs (the LETOR convention); a qid that reappears after a
/// different qid is treated as data corruption and rejected. Doc ids are
/// synthesized as `<qid>:<ordinal-within-query>`.
pub fn parse_svmlight(
    features_path: impl AsRef<Path>,
    scores_path: impl AsRef<Path>,
) -> Result<QueryCollection> {
    parse_svmlight_with(features_path, scores_path, &ParseOptions::default())
}

pub fn parse_svmlight_with(
    features_path: impl AsRef<Path>,
    scores_path: impl AsRef<Path>,
    opts: &ParseOptions,
) -> Result<QueryCollection> {
    let features_path = features_path.as_ref();
    let scores_path = scores_path.as_ref();

    let mut scores = Vec::new();
    for (i, line) in open_text(scores_path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(scores_path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let s: f64 = trimmed.parse().map_err(|_| {
            Error::parse(
                scores_path,
                i + 1,
                format!("expected a real number, got {trimmed:?}"),
            )
        })?;
        scores.push(s);
    }

    let mut queries: Vec<ScoredQuery> = Vec::new();
    let mut closed_qids: HashSet<String> = HashSet::new();
    let mut line_count = 0usize;

    for (i, line) in open_text(features_path)?.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(features_path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_ascii_whitespace();
        let rel: i64 = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(features_path, line_no, "missing relevance label"))?;
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| Error::parse(features_path, line_no, "missing qid:<id> token"))?
            .to_string();

        if line_count >= scores.len() {
            return Err(Error::Validation(format!(
                "score file {} has fewer lines than feature file {}",
                scores_path.display(),
                features_path.display()
            )));
        }
        let raw_score = scores[line_count];
        if !raw_score.is_finite() {
            return Err(Error::parse(
                scores_path,
                line_count + 1,
                format!("non-finite score {raw_score}"),
            ));
        }
        line_count += 1;

        let start_new = match queries.last() {
            Some(q) => q.qid != qid,
            None => true,
        };
        if start_new {
            if closed_qids.contains(&qid) {
                return Err(Error::parse(
                    features_path,
                    line_no,
                    format!("qid {qid:?} reappears after a different qid (non-consecutive block)"),
                ));
            }
            if let Some(prev) = queries.last() {
                closed_qids.insert(prev.qid.clone());
            }
            queries.push(ScoredQuery {
                qid: qid.clone(),
                docs: Vec::new(),
            });
        }
        let query = queries.last_mut().unwrap();
        let ordinal = query.docs.len();
        let doc = validate_doc(
            features_path,
            line_no,
            &format!("{qid}:{ordinal}"),
            raw_score,
            rel,
            opts,
        )?;
        query.docs.push(doc);
    }

    if line_count != scores.len() {
        return Err(Error::Validation(format!(
            "line-count mismatch: {} feature lines vs {} score lines",
            line_count,
            scores.len()
        )));
    }

    QueryCollection::new(
        queries,
        format!(
            "svmlight:{}+{}",
            features_path.display(),
            scores_path.display()
        ),
    )
}

/// Retain only queries with at least one document of relevance >= `min_grade`.
///
/// Returns the filtered collection and the number of queries removed.
/// Idempotent: filtering a filtered collection removes nothing.
pub fn filter_no_relevant(
    collection: &QueryCollection,
    min_grade: u8,
) -> Result<(QueryCollection, usize)> {
    if min_grade < 1 {
        return Err(Error::Validation(format!(
            "min_grade must be >= 1, got {min_grade}"
        )));
    }
    let queries: Vec<ScoredQuery> = collection
        .queries
        .iter()
        .filter(|q| q.max_relevance() >= min_grade)
        .cloned()
        .collect();
    let removed = collection.len() - queries.len();
    let filtered = QueryCollection::new(
        queries,
        format!("{}|filtered(min_grade={min_grade})", collection.provenance),
    )?;
    Ok((filtered, removed))
}

/// Partition a collection into (calibration, test) at query granularity.
///
/// The calibration part gets `round(fraction * N)` queries, clamped to
/// `[1, N-1]` so both parts are non-empty. Membership is a deterministic
/// function of `(seed, trial_index)`; each part preserves the input's query
/// order. Calibration and test are disjoint and their union is the input.
pub fn split(
    collection: &QueryCollection,
    spec: &SplitSpec,
) -> Result<(QueryCollection, QueryCollection)> {
    let n = collection.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 queries to split, got {n}"
        )));
    }
    let n_cal = ((spec.calibration_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::from(spec.trial_index));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut in_cal = vec![false; n];
    for &i in order.iter().take(n_cal) {
        in_cal[i] = true;
    }

    let mut cal = Vec::with_capacity(n_cal);
    let mut test = Vec::with_capacity(n - n_cal);
    for (i, q) in collection.queries.iter().enumerate() {
        if in_cal[i] {
            cal.push(q.clone());
        } else {
            test.push(q.clone());
        }
    }
    let tag = format!(
        "{}|split(seed={},trial={})",
        collection.provenance, spec.seed, spec.trial_index
    );
    Ok((
        QueryCollection::new(cal, format!("{tag}:cal"))?,
        QueryCollection::new(test, format!("{tag}:test"))?,
    ))
}
