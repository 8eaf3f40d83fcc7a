//! Comma-separated tables. Every table has a header row; ids are restricted
//! to `[A-Za-z0-9_.-]` so no quoting is ever needed. Floats are written with
//! 17 significant digits, which reads back bit-identically.

use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::{AnnotationRecord, FeatureBank, FeatureBankEntry, LossTable};
use crate::error::{Error, Result};
use crate::gram::{LayerLossReport, LayerSpec};
use crate::io::valid_id;
use crate::scalar::Scalar;
use crate::stylize::{StepRecord, SweepResult};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Data(format!("csv line {line}: {e}"))
}

fn write_records<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Writes a table to `path`.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(f), header, rows)
}

/// Renders a table to a string.
pub fn table_to_string(header: &[String], rows: &[Vec<String>]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, header, rows).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv of valid strings is utf-8")
}

struct Table {
    header: Vec<String>,
    /// `(line number, fields)`.
    rows: Vec<(u64, Vec<String>)>,
}

fn read_records<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn expect_header(t: &Table, expected: &[&str]) -> Result<()> {
    if t.header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "csv line 1: header is [{}], expected [{}]",
            t.header.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("csv line {line}: column {col} is not a number: {s:?}")))
}

fn check_id(s: &str, line: u64, col: &str) -> Result<String> {
    if !valid_id(s) {
        return Err(Error::Data(format!(
            "csv line {line}: {col} {s:?} must match [A-Za-z0-9_.-]+"
        )));
    }
    Ok(s.to_string())
}

/// One line of a loss report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub content_id: String,
    pub style_id: String,
    pub tap: String,
    pub classic: f64,
    pub sup: f64,
    pub inf: f64,
    pub balanced: f64,
}

pub const REPORT_HEADER: [&str; 7] = ["content_id", "style_id", "tap", "classic", "sup", "inf", "balanced"];
pub const TOTAL_TAP: &str = "total";

/// Per-layer rows plus a weighted `total` row for one (content, style) pair.
pub fn report_rows<S: Scalar>(
    content_id: &str,
    style_id: &str,
    layers: &[LayerSpec],
    reports: &[LayerLossReport<S>],
) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            content_id: content_id.into(),
            style_id: style_id.into(),
            tap: r.tap.clone(),
            classic: r.classic.as_f64(),
            sup: r.sup.as_f64(),
            inf: r.inf.as_f64(),
            balanced: r.balanced.as_f64(),
        })
        .collect();
    let weighted = |f: fn(&ReportRow) -> f64| -> f64 {
        rows.iter()
            .map(|r| layers.iter().find(|l| l.tap == r.tap).map_or(1.0, |l| l.weight) * f(r))
            .sum()
    };
    let total = ReportRow {
        content_id: content_id.into(),
        style_id: style_id.into(),
        tap: TOTAL_TAP.into(),
        classic: weighted(|r| r.classic),
        sup: weighted(|r| r.sup),
        inf: weighted(|r| r.inf),
        balanced: weighted(|r| r.balanced),
    };
    rows.push(total);
    rows
}

fn report_records(rows: &[ReportRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.content_id.clone(),
                r.style_id.clone(),
                r.tap.clone(),
                fmt_f64(r.classic),
                fmt_f64(r.sup),
                fmt_f64(r.inf),
                fmt_f64(r.balanced),
            ]
        })
        .collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    write_records(out, &header(&REPORT_HEADER), &report_records(rows))
}

pub fn write_report_file(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_table(path, &header(&REPORT_HEADER), &report_records(rows))
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let t = read_records(input)?;
    expect_header(&t, &REPORT_HEADER)?;
    t.rows
        .iter()
        .map(|(line, f)| {
            let line = *line;
            Ok(ReportRow {
                content_id: check_id(&f[0], line, "content_id")?,
                style_id: check_id(&f[1], line, "style_id")?,
                tap: check_id(&f[2], line, "tap")?,
                classic: parse_f64(&f[3], line, "classic")?,
                sup: parse_f64(&f[4], line, "sup")?,
                inf: parse_f64(&f[5], line, "inf")?,
                balanced: parse_f64(&f[6], line, "balanced")?,
            })
        })
        .collect()
}

pub fn read_report_file(path: &Path) -> Result<Vec<ReportRow>> {
    read_report(open(path)?)
}

/// Which report column a statistic reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Classic,
    Sup,
    Inf,
    Balanced,
}

impl Metric {
    pub fn of(self, r: &ReportRow) -> f64 {
        match self {
            Metric::Classic => r.classic,
            Metric::Sup => r.sup,
            Metric::Inf => r.inf,
            Metric::Balanced => r.balanced,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Metric::Classic),
            "sup" => Ok(Metric::Sup),
            "inf" => Ok(Metric::Inf),
            "balanced" => Ok(Metric::Balanced),
            _ => Err(Error::Usage(format!("unknown metric {s:?} (classic|sup|inf|balanced)"))),
        }
    }
}

/// Sample id of a (content, style) pair when joining with annotations.
pub fn sample_id(content_id: &str, style_id: &str) -> String {
    format!("{content_id}__{style_id}")
}

/// Pivots report rows into one sample per pair and one column per tap
/// (the `total` rows are dropped and recomputed from `weights`; taps missing
/// from `weights` count with weight 1).
pub fn loss_table(rows: &[ReportRow], metric: Metric, weights: &[LayerSpec]) -> Result<LossTable> {
    let mut taps: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.tap != TOTAL_TAP) {
        if !taps.contains(&r.tap) {
            taps.push(r.tap.clone());
        }
    }
    let mut samples: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for r in rows.iter().filter(|r| r.tap != TOTAL_TAP) {
        let id = sample_id(&r.content_id, &r.style_id);
        let j = taps.iter().position(|t| *t == r.tap).expect("tap collected above");
        let idx = match samples.iter().position(|(s, _)| *s == id) {
            Some(i) => i,
            None => {
                samples.push((id.clone(), vec![None; taps.len()]));
                samples.len() - 1
            }
        };
        if samples[idx].1[j].replace(metric.of(r)).is_some() {
            return Err(Error::Data(format!("sample {id} has tap {} twice", r.tap)));
        }
    }
    let layers = taps
        .iter()
        .map(|t| weights.iter().find(|l| l.tap == *t).cloned().unwrap_or_else(|| LayerSpec::unit(t.clone())))
        .collect();
    let samples = samples
        .into_iter()
        .map(|(id, vals)| {
            let v: Option<Vec<f64>> = vals.into_iter().collect();
            v.map(|v| (id.clone(), v))
                .ok_or_else(|| Error::Data(format!("sample {id} is missing a tap")))
        })
        .collect::<Result<Vec<_>>>()?;
    LossTable::new(layers, samples)
}

pub const ANNOTATION_HEADER: [&str; 2] = ["id", "score"];

pub fn read_annotations<R: Read>(input: R) -> Result<Vec<AnnotationRecord>> {
    let t = read_records(input)?;
    expect_header(&t, &ANNOTATION_HEADER)?;
    t.rows
        .iter()
        .map(|(line, f)| {
            let id = check_id(&f[0], *line, "id")?;
            let score: i8 = f[1]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("csv line {line}: score {:?} is not an integer", f[1])))?;
            AnnotationRecord::new(id, score).map_err(|e| Error::Data(format!("csv line {line}: {e}")))
        })
        .collect()
}

pub fn read_annotations_file(path: &Path) -> Result<Vec<AnnotationRecord>> {
    read_annotations(open(path)?)
}

pub fn write_annotations_file(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records.iter().map(|a| vec![a.id.clone(), a.score.to_string()]).collect();
    write_table(path, &header(&ANNOTATION_HEADER), &rows)
}

/// Feature banks: `id,artist,v0,v1,...`.
pub fn read_feature_bank<R: Read>(input: R) -> Result<FeatureBank> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let head: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if head.len() < 3 || head[0] != "id" || head[1] != "artist" {
        return Err(Error::Data("csv line 1: feature bank header must be id,artist,v0,...".into()));
    }
    let dim = head.len() - 2;
    let mut entries = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != head.len() {
            return Err(Error::Data(format!(
                "csv line {line}: expected {dim} feature values, got {}",
                rec.len().saturating_sub(2)
            )));
        }
        let vector = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(i, s)| parse_f64(s, line, &format!("v{i}")))
            .collect::<Result<Vec<_>>>()?;
        entries.push(FeatureBankEntry {
            id: check_id(&rec[0], line, "id")?,
            artist: check_id(&rec[1], line, "artist")?,
            vector,
        });
    }
    FeatureBank::new(entries)
}

pub fn read_feature_bank_file(path: &Path) -> Result<FeatureBank> {
    read_feature_bank(open(path)?)
}

pub fn write_feature_bank_file(path: &Path, bank: &FeatureBank) -> Result<()> {
    let dim = bank.dimension().unwrap_or(0);
    let mut head = header(&["id", "artist"]);
    head.extend((0..dim).map(|i| format!("v{i}")));
    let rows: Vec<Vec<String>> = bank
        .entries()
        .iter()
        .map(|e| {
            let mut r = vec![e.id.clone(), e.artist.clone()];
            r.extend(e.vector.iter().map(|v| fmt_f64(*v)));
            r
        })
        .collect();
    write_table(path, &head, &rows)
}

/// Sweep rows, with per-layer classic and balanced columns after the totals.
pub fn sweep_table<S: Scalar>(result: &SweepResult<S>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut head = header(&["content_id", "style_id", "classic_total", "balanced_total", "content_loss", "steps"]);
    if let Some(first) = result.rows.first() {
        for l in &first.layers {
            head.push(format!("classic_{}", l.tap));
            head.push(format!("balanced_{}", l.tap));
        }
    }
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.content_id.clone(),
                r.style_id.clone(),
                fmt_f64(r.classic_total.as_f64()),
                fmt_f64(r.balanced_total.as_f64()),
                fmt_f64(r.content_loss.as_f64()),
                r.steps.to_string(),
            ];
            for l in &r.layers {
                v.push(fmt_f64(l.classic.as_f64()));
                v.push(fmt_f64(l.balanced.as_f64()));
            }
            v
        })
        .collect();
    (head, rows)
}

pub fn trajectory_table<S: Scalar>(trajectory: &[StepRecord<S>]) -> (Vec<String>, Vec<Vec<String>>) {
    let head = header(&["step", "total", "content", "style_classic", "style_balanced"]);
    let rows = trajectory
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                fmt_f64(r.total.as_f64()),
                fmt_f64(r.content.as_f64()),
                fmt_f64(r.style_classic.as_f64()),
                fmt_f64(r.style_balanced.as_f64()),
            ]
        })
        .collect();
    (head, rows)
}
