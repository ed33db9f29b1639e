//! Files in and out: sparse `label index:value` text, per-replication
//! results CSV and the flat `key = value` experiment config.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{normalize_columns_allow_zero, DenseMatrix};
use crate::loss::{LinearLoss, LogisticLoss, LossKind, Model};
use crate::metrics::EvalRecord;

/// How the leading label of a sparse text row is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// `-1`/`0` map to 0 and `+1`/`1` to 1; anything else is an error.
    Binary,
    /// Kept as read.
    Real,
}

/// Parsed sparse text rows; feature indices are 0-based here.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTextDataset {
    pub labels: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Largest feature index seen (1-based), i.e. the column count.
    pub p: usize,
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => parse_err(line, format!("bad {what} `{tok}`")),
    }
}

pub fn parse_sparse_text(text: &str, mode: LabelMode) -> Result<SparseTextDataset> {
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut p = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label_tok = toks.next().expect("nonempty line has a token");
        let label = parse_f64(label_tok, line, "label")?;
        let label = match mode {
            LabelMode::Real => label,
            LabelMode::Binary => match label {
                v if v == -1.0 || v == 0.0 => 0.0,
                v if v == 1.0 => 1.0,
                _ => return parse_err(line, format!("label `{label_tok}` is not binary")),
            },
        };
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in toks {
            let Some((i, v)) = tok.split_once(':') else {
                return parse_err(line, format!("expected index:value, found `{tok}`"));
            };
            let i: usize = match i.parse() {
                Ok(i) if i >= 1 => i,
                _ => return parse_err(line, format!("bad feature index `{i}`")),
            };
            if i <= last {
                return parse_err(line, format!("feature index {i} does not increase"));
            }
            last = i;
            let v = parse_f64(v, line, "value")?;
            p = p.max(i);
            row.push((i - 1, v));
        }
        labels.push(label);
        rows.push(row);
    }
    Ok(SparseTextDataset { labels, rows, p })
}

impl SparseTextDataset {
    /// Rows with at least one nonzero value.
    pub fn nonvacant_rows(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].iter().any(|&(_, v)| v != 0.0))
            .collect()
    }

    /// Dense `n x p` matrix of the given rows, before any scaling.
    pub fn densify(&self, rows: &[usize]) -> Result<DenseMatrix> {
        if rows.is_empty() || self.p == 0 {
            return Err(Error::InvalidArgument("no rows or no features to densify".into()));
        }
        let mut m = DenseMatrix::zeros(rows.len(), self.p);
        for (r, &i) in rows.iter().enumerate() {
            for &(j, v) in &self.rows[i] {
                m.set(r, j, v);
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, row) in self.labels.iter().zip(&self.rows) {
            out.push_str(&label.to_string());
            for &(j, v) in row {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
            out.push('\n');
        }
        out
    }
}

/// A real dataset ready for fitting.
#[derive(Debug, Clone)]
pub struct SparseData {
    /// Columns scaled to length `sqrt(n)`; all-zero columns stay zero.
    pub design: DenseMatrix,
    pub response: Vec<f64>,
    /// False for all-zero columns.
    pub eligible: Vec<bool>,
    pub zero_columns: Vec<usize>,
    /// Rows dropped for having no nonzero feature.
    pub dropped_rows: usize,
    pub scales: Vec<f64>,
}

impl SparseData {
    pub fn from_parsed(parsed: &SparseTextDataset) -> Result<Self> {
        let keep = parsed.nonvacant_rows();
        let raw = parsed.densify(&keep)?;
        let (design, scales, zero_columns) = normalize_columns_allow_zero(&raw);
        let mut eligible = vec![true; design.ncols()];
        for &j in &zero_columns {
            eligible[j] = false;
        }
        Ok(Self {
            design,
            response: keep.iter().map(|&i| parsed.labels[i]).collect(),
            eligible,
            zero_columns,
            dropped_rows: parsed.rows.len() - keep.len(),
            scales,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn to_model(&self, kind: LossKind, intercept: bool) -> Result<Model> {
        Ok(match kind {
            LossKind::Linear => Model::Linear(
                LinearLoss::new(self.design.clone(), self.response.clone(), intercept)?
                    .with_eligible(self.eligible.clone())?,
            ),
            LossKind::Logistic => Model::Logistic(
                LogisticLoss::new(self.design.clone(), self.response.clone())?.with_eligible(self.eligible.clone())?,
            ),
        })
    }
}

/// Reads, densifies, drops vacant rows and normalizes columns.
pub fn read_sparse_text(path: &Path, mode: LabelMode) -> Result<SparseData> {
    let text = fs::read_to_string(path)?;
    SparseData::from_parsed(&parse_sparse_text(&text, mode)?)
}

pub fn write_sparse_text(path: &Path, data: &SparseTextDataset) -> Result<()> {
    fs::write(path, data.to_text())?;
    Ok(())
}

pub const RESULTS_HEADER: [&str; 17] = [
    "method", "seed", "rep", "n", "p", "K", "T", "rho", "R", "are", "pdr", "fdr", "cdr", "car", "iters", "time_s",
    "status",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_results<W: Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.rep.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.k.to_string(),
            r.t.to_string(),
            fmt_f64(r.rho),
            fmt_f64(r.r),
            fmt_f64(r.are),
            fmt_f64(r.pdr),
            fmt_f64(r.fdr),
            fmt_f64(r.cdr),
            fmt_opt(r.car),
            r.iters.to_string(),
            fmt_opt(r.time_s),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_results(fs::File::create(path)?, records)
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected results header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().or_else(|_| parse_err(line, format!("bad number `{}`", &rec[k])))
        };
        let int = |k: usize| -> Result<u64> {
            rec[k].parse::<u64>().or_else(|_| parse_err(line, format!("bad integer `{}`", &rec[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> { if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) } };
        out.push(EvalRecord {
            method: rec[0].to_string(),
            seed: int(1)?,
            rep: int(2)?,
            n: int(3)? as usize,
            p: int(4)? as usize,
            k: int(5)? as usize,
            t: int(6)? as usize,
            rho: num(7)?,
            r: num(8)?,
            are: num(9)?,
            pdr: num(10)?,
            fdr: num(11)?,
            cdr: num(12)?,
            car: opt(13)?,
            iters: int(14)? as usize,
            time_s: opt(15)?,
            status: rec[16].to_string(),
        });
    }
    Ok(out)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    read_results(fs::File::open(path)?)
}

/// `key -> (value, line)` from a flat config; `#` starts a comment.
pub type ConfigMap = BTreeMap<String, (String, usize)>;

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return parse_err(line, format!("expected key = value, found `{content}`"));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return parse_err(line, "empty key");
        }
        if map.insert(k.to_string(), (v.to_string(), line)).is_some() {
            return parse_err(line, format!("key `{k}` given twice"));
        }
    }
    Ok(map)
}

pub fn read_config_map(path: &Path) -> Result<ConfigMap> {
    parse_config(&fs::read_to_string(path)?)
}
