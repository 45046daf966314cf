//! JSONL record formats.
//!
//! Lattices are written with 17 significant digits so every `f64` survives a
//! round-trip bit-exactly; `-inf` entries are written as the string `"-inf"`.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ActionPath, Lattice};

/// Shortest decimal that is guaranteed to parse back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "\"-inf\"".to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn lattice_to_json(lattice: &Lattice) -> String {
    let (t, u, v) = (lattice.num_decisions(), lattice.target_len(), lattice.vocab_size());
    let mut s = String::new();
    write!(s, "{{\"T\":{t},\"U\":{u},\"vocab_size\":{v},\"logits\":[").unwrap();
    for i in 0..=t {
        s.push_str(if i == 0 { "[" } else { ",[" });
        for j in 0..=u {
            s.push_str(if j == 0 { "[" } else { ",[" });
            for (k, &x) in lattice.row(i, j).iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                s.push_str(&format_f64(x));
            }
            s.push(']');
        }
        s.push(']');
    }
    s.push_str("]}");
    s
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Entry {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
struct LatticeRecord {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "U")]
    u: usize,
    vocab_size: usize,
    logits: Vec<Vec<Vec<Entry>>>,
}

pub fn lattice_from_json(line: &str, line_no: usize) -> Result<Lattice> {
    let fmt_err = |msg: String| Error::Format { line: line_no, msg };
    let rec: LatticeRecord = serde_json::from_str(line).map_err(|e| fmt_err(e.to_string()))?;
    if rec.logits.len() != rec.t + 1 {
        return Err(fmt_err(format!("expected {} rows in i, found {}", rec.t + 1, rec.logits.len())));
    }
    let mut data = Vec::with_capacity((rec.t + 1) * (rec.u + 1) * (rec.vocab_size + 1));
    for (i, plane) in rec.logits.iter().enumerate() {
        if plane.len() != rec.u + 1 {
            return Err(fmt_err(format!("i = {i}: expected {} rows in j, found {}", rec.u + 1, plane.len())));
        }
        for (j, row) in plane.iter().enumerate() {
            if row.len() != rec.vocab_size + 1 {
                return Err(fmt_err(format!(
                    "({i}, {j}): expected {} entries, found {}",
                    rec.vocab_size + 1,
                    row.len()
                )));
            }
            for e in row {
                data.push(match e {
                    Entry::Num(x) => *x,
                    Entry::Text(s) if s == "-inf" || s == "-Infinity" => f64::NEG_INFINITY,
                    Entry::Text(s) => return Err(fmt_err(format!("unexpected string entry {s:?}"))),
                });
            }
        }
    }
    Lattice::new(rec.t, rec.u, rec.vocab_size, data).map_err(|e| fmt_err(e.to_string()))
}

/// Per-sentence target for loss computation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub tokens: Vec<usize>,
    /// Source length in units; defaults to `T * d` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_len: Option<usize>,
}

/// Evaluation-side delays in source units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub src_len: usize,
    pub tgt_len: usize,
    pub delays: Vec<usize>,
}

fn default_step() -> usize {
    1
}

fn is_one(d: &usize) -> bool {
    *d == 1
}

/// A decoded READ/WRITE path, `actions` in compact `"RRWRW"` form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecord {
    pub actions: String,
    pub tokens: Vec<usize>,
    pub src_len: usize,
    /// Source units per READ; 1 unless chunked decoding was used.
    #[serde(default = "default_step", skip_serializing_if = "is_one")]
    pub d: usize,
}

impl PathRecord {
    pub fn from_path(path: &ActionPath, src_len: usize, d: usize) -> Self {
        Self { actions: path.to_compact(), tokens: path.tokens().collect(), src_len, d }
    }

    pub fn to_path(&self) -> Result<ActionPath> {
        ActionPath::parse(&self.actions, &self.tokens)
    }
}

/// A hypothesis given by per-token delays in source units instead of an
/// action string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayHypothesis {
    pub delays: Vec<usize>,
    pub tokens: Vec<usize>,
    pub src_len: usize,
    #[serde(default = "default_step", skip_serializing_if = "is_one")]
    pub d: usize,
}

/// One line of an evaluation input: either form of hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HypothesisRecord {
    Path(PathRecord),
    Delays(DelayHypothesis),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefRecord {
    pub tokens: Vec<usize>,
}

/// Reads one JSON record per nonempty line, reporting 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format { line: idx + 1, msg: e.to_string() })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

/// Reads lattices one per nonempty line.
pub fn read_lattices(reader: impl BufRead) -> Result<Vec<(usize, Lattice)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, lattice_from_json(&line, idx + 1)?));
    }
    Ok(out)
}
