//! Labeled datasets as CSV (`seq_id,t,x_0..x_{m-1},y`) or NDJSON (one
//! `{"seq_id", "t", "x", "y"}` object per line).
//!
//! Floats are written in shortest round-trip form, so a write followed by a
//! read reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create, write_json, Format};
use crate::datagen::{Dataset, GenConfig};
use crate::error::{Error, Result};
use crate::training::LabeledSequence;

/// One sample of a stream or dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_id: Option<u64>,
    pub t: u64,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<u8>,
}

impl SampleRecord {
    /// Parses one NDJSON line, checking the label range and finiteness.
    pub fn parse_line(path: &Path, line_no: u64, line: &str) -> Result<Self> {
        let rec: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, line_no, format!("invalid record: {e}")))?;
        if let Some(y) = rec.y.filter(|&y| y > 1) {
            return Err(Error::format(
                path,
                line_no,
                format!("label {y} is not 0 or 1"),
            ));
        }
        if rec.x.is_empty() {
            return Err(Error::format(path, line_no, "empty sample vector"));
        }
        if !rec.x.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, line_no, "non-finite sample value"));
        }
        Ok(rec)
    }
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_sequences(path: &Path, seqs: &[LabeledSequence], format: Format) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e: std::io::Error| Error::io(path, e);
    match format {
        Format::Csv => {
            let m = seqs.first().map_or(1, LabeledSequence::input_dim);
            let mut header = vec!["seq_id".to_string(), "t".to_string()];
            header.extend((0..m).map(|j| format!("x_{j}")));
            header.push("y".into());
            writeln!(w, "{}", header.join(",")).map_err(io_err)?;
            for (id, seq) in seqs.iter().enumerate() {
                for (t, (x, y)) in seq.xs().iter().zip(seq.ys()).enumerate() {
                    let xs: Vec<String> = x.iter().map(|&v| float(v)).collect();
                    writeln!(w, "{id},{t},{},{y}", xs.join(",")).map_err(io_err)?;
                }
            }
        }
        Format::Ndjson => {
            for (id, seq) in seqs.iter().enumerate() {
                for (t, (x, &y)) in seq.xs().iter().zip(seq.ys()).enumerate() {
                    let rec = SampleRecord {
                        seq_id: Some(id as u64),
                        t: t as u64,
                        x: x.clone(),
                        y: Some(y),
                    };
                    serde_json::to_writer(&mut w, &rec).map_err(|e| io_err(e.into()))?;
                    w.write_all(b"\n").map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Groups consecutive rows by `seq_id` into sequences.
struct Assembler<'p> {
    path: &'p Path,
    out: Vec<LabeledSequence>,
    current: Option<(u64, u64, Vec<Vec<f64>>, Vec<u8>)>,
    dim: Option<usize>,
}

impl<'p> Assembler<'p> {
    fn new(path: &'p Path) -> Self {
        Assembler {
            path,
            out: Vec::new(),
            current: None,
            dim: None,
        }
    }

    fn flush(&mut self) -> Result<()> {
        if let Some((_, _, xs, ys)) = self.current.take() {
            self.out.push(LabeledSequence::new(xs, ys)?);
        }
        Ok(())
    }

    fn push(&mut self, line: u64, seq_id: u64, t: u64, x: Vec<f64>, y: u8) -> Result<()> {
        let err = |msg: String| Error::format(self.path, line, msg);
        if y > 1 {
            return Err(err(format!("label {y} is not 0 or 1")));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(err("non-finite sample value".into()));
        }
        match self.dim {
            Some(m) if m != x.len() => {
                return Err(err(format!("expected {m} values, found {}", x.len())))
            }
            None => self.dim = Some(x.len()),
            _ => {}
        }
        match &mut self.current {
            Some((id, last_t, xs, ys)) if *id == seq_id => {
                if t <= *last_t {
                    return Err(err(format!(
                        "t = {t} does not increase (previous {last_t})"
                    )));
                }
                *last_t = t;
                xs.push(x);
                ys.push(y);
            }
            Some((id, ..)) if seq_id <= *id => {
                return Err(err(format!("seq_id {seq_id} out of order after {id}")));
            }
            _ => {
                self.flush()?;
                self.current = Some((seq_id, t, vec![x], vec![y]));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LabeledSequence>> {
        self.flush()?;
        if self.out.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(self.out)
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, line, format!("field {name}: cannot parse {s:?}")))
}

pub fn read_sequences(path: &Path, format: Format) -> Result<Vec<LabeledSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut asm = Assembler::new(path);
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(file);
            let header = rdr
                .headers()
                .map_err(|e| Error::format(path, 1, e.to_string()))?
                .clone();
            let cols: Vec<&str> = header.iter().collect();
            if cols.len() < 4
                || cols[0] != "seq_id"
                || cols[1] != "t"
                || cols[cols.len() - 1] != "y"
            {
                if cols.is_empty() || (cols.len() == 1 && cols[0].is_empty()) {
                    return Err(Error::EmptyDataset);
                }
                return Err(Error::format(
                    path,
                    1,
                    "header must be seq_id,t,x_0..x_{m-1},y",
                ));
            }
            let m = cols.len() - 3;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line());
                    Error::format(path, line, e.to_string())
                })?;
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != m + 3 {
                    return Err(Error::format(
                        path,
                        line,
                        format!("expected {} fields, found {}", m + 3, rec.len()),
                    ));
                }
                let seq_id = parse_field(path, line, "seq_id", &rec[0])?;
                let t = parse_field(path, line, "t", &rec[1])?;
                let x = (0..m)
                    .map(|j| parse_field(path, line, cols[2 + j], &rec[2 + j]))
                    .collect::<Result<Vec<f64>>>()?;
                let y = parse_field(path, line, "y", &rec[m + 2])?;
                asm.push(line, seq_id, t, x, y)?;
            }
        }
        Format::Ndjson => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i as u64 + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = SampleRecord::parse_line(path, line_no, &line)?;
                let seq_id = rec
                    .seq_id
                    .ok_or_else(|| Error::format(path, line_no, "missing seq_id"))?;
                let y = rec
                    .y
                    .ok_or_else(|| Error::format(path, line_no, "missing label y"))?;
                asm.push(line_no, seq_id, rec.t, rec.x, y)?;
            }
        }
    }
    asm.finish()
}

fn split_paths(
    dir: &Path,
    format: Format,
) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("train.{}", format.extension())),
        dir.join(format!("test.{}", format.extension())),
        dir.join("gen_config.json"),
    )
}

/// Writes `train.<ext>`, `test.<ext>` and `gen_config.json` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset, format: Format) -> Result<()> {
    let (train, test, cfg) = split_paths(dir, format);
    write_sequences(&train, &dataset.train, format)?;
    write_sequences(&test, &dataset.test, format)?;
    write_json(&cfg, &dataset.config)
}

pub fn read_dataset(dir: &Path, format: Format) -> Result<Dataset> {
    let (train, test, cfg) = split_paths(dir, format);
    let config: GenConfig = match std::fs::read_to_string(&cfg) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::format(&cfg, e.line() as u64, e.to_string()))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => GenConfig::default(),
        Err(e) => return Err(Error::io(&cfg, e)),
    };
    Ok(Dataset {
        train: read_sequences(&train, format)?,
        test: read_sequences(&test, format)?,
        config,
    })
}
