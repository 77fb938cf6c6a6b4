//! JSON and CSV report emission.
//!
//! Every JSON report is an object carrying `"schema": 1` and a `"kind"`
//! string, with all floats written in scientific notation with 17
//! significant digits so they parse back to the identical `f64`.
//! Undefined statistics serialize as `null`.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::diagnostics::{Histogram, PcaResult};
use crate::error::Result;
use crate::eval::{EpisodeSummary, EvalReport, ShotsRow};

pub const SCHEMA_VERSION: u32 = 1;

/// Pretty-printing JSON formatter that writes floats with 17 significant digits.
#[derive(Debug, Default)]
pub struct ExactFloatFormatter {
    depth: usize,
    has_value: bool,
}

impl ExactFloatFormatter {
    fn indent<W: ?Sized + io::Write>(&self, w: &mut W) -> io::Result<()> {
        for _ in 0..self.depth {
            w.write_all(b"  ")?;
        }
        Ok(())
    }

    fn open<W: ?Sized + io::Write>(&mut self, w: &mut W, bracket: &[u8]) -> io::Result<()> {
        self.depth += 1;
        self.has_value = false;
        w.write_all(bracket)
    }

    fn close<W: ?Sized + io::Write>(&mut self, w: &mut W, bracket: &[u8]) -> io::Result<()> {
        self.depth -= 1;
        if self.has_value {
            w.write_all(b"\n")?;
            self.indent(w)?;
        }
        w.write_all(bracket)
    }

    fn item<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        w.write_all(if first { b"\n" } else { b",\n" })?;
        self.indent(w)
    }
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.open(w, b"[")
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.close(w, b"]")
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.item(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, _w: &mut W) -> io::Result<()> {
        self.has_value = true;
        Ok(())
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.open(w, b"{")
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.close(w, b"}")
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.item(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, _w: &mut W) -> io::Result<()> {
        self.has_value = true;
        Ok(())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Serializes `body` inside the versioned envelope, newline-terminated.
pub fn to_json<T: Serialize>(kind: &str, body: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloatFormatter::default());
    Envelope {
        schema: SCHEMA_VERSION,
        kind,
        body,
    }
    .serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Serialize)]
struct ConfusionCell {
    truth: usize,
    predicted: usize,
    count: u64,
}

#[derive(Serialize)]
struct EvalView<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    /// Nonzero cells only.
    confusion: Vec<ConfusionCell>,
}

pub fn eval_json(report: &EvalReport) -> Result<Vec<u8>> {
    let confusion = report
        .confusion_entries()
        .into_iter()
        .map(|(truth, predicted, count)| ConfusionCell {
            truth,
            predicted,
            count,
        })
        .collect();
    to_json("eval", &EvalView { report, confusion })
}

#[derive(Serialize)]
struct EpisodeView<'a> {
    #[serde(flatten)]
    summary: &'a EpisodeSummary,
    episode_accuracy: Vec<f64>,
}

pub fn episodes_json(summary: &EpisodeSummary) -> Result<Vec<u8>> {
    let episode_accuracy = summary.episodes.iter().map(|e| e.accuracy()).collect();
    to_json(
        "episodes",
        &EpisodeView {
            summary,
            episode_accuracy,
        },
    )
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(io::Error::other)?;
    for r in rows {
        w.write_record(&r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()).into())
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn episodes_csv(summary: &EpisodeSummary) -> Result<Vec<u8>> {
    let header = ["episode", "correct", "total", "accuracy", "classes"].map(String::from);
    csv_bytes(
        &header,
        summary.episodes.iter().map(|e| {
            vec![
                e.index.to_string(),
                e.correct.to_string(),
                e.total.to_string(),
                format_f64(e.accuracy()),
                e.classes.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            ]
        }),
    )
}

pub fn shots_csv(rows: &[ShotsRow]) -> Result<Vec<u8>> {
    let header = ["shots", "mean_accuracy", "standard_error"].map(String::from);
    csv_bytes(
        &header,
        rows.iter()
            .map(|r| vec![r.shots.to_string(), format_f64(r.mean_accuracy), opt(r.standard_error)]),
    )
}

/// One line per projected row: index, name, then one column per component.
pub fn projections_csv(names: &[String], projections: &[Vec<f64>]) -> Result<Vec<u8>> {
    let k = projections.first().map_or(0, Vec::len);
    let mut header = vec!["index".to_string(), "name".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    csv_bytes(
        &header,
        names.iter().zip(projections).enumerate().map(|(i, (n, p))| {
            let mut r = vec![i.to_string(), n.clone()];
            r.extend(p.iter().copied().map(format_f64));
            r
        }),
    )
}

pub fn pca_json(pca: &PcaResult, names: &[String]) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct View<'a> {
        #[serde(flatten)]
        pca: &'a PcaResult,
        names: &'a [String],
    }
    to_json("pca", &View { pca, names })
}

pub fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let header = ["bin", "lower", "upper", "count"].map(String::from);
    csv_bytes(
        &header,
        h.counts.iter().enumerate().map(|(i, c)| {
            vec![
                i.to_string(),
                format_f64(h.edges[i]),
                format_f64(h.edges[i + 1]),
                c.to_string(),
            ]
        }),
    )
}
