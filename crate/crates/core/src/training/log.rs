//! `training_log.csv`: one row per generator step.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::objectives::LossReport;

pub const LOG_FILE: &str = "training_log.csv";

pub struct TrainingLog {
    path: PathBuf,
    file: File,
    pairs: usize,
}

fn header(pairs: usize) -> String {
    let mut h = String::from("step,d_loss,g_loss,penalty");
    if pairs > 1 {
        for k in 0..pairs {
            h.push_str(&format!(",d_loss_{k},g_loss_{k},penalty_{k}"));
        }
    }
    h
}

impl TrainingLog {
    /// Opens the log in `dir`, keeping only rows up to `keep_through` (all rows are
    /// dropped when it is `None`).
    pub fn open(dir: &Path, pairs: usize, keep_through: Option<u64>) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let mut kept = vec![header(pairs)];
        if let Some(last) = keep_through {
            if path.exists() {
                let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
                for line in BufReader::new(f).lines().skip(1) {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    let step: u64 = line
                        .split(',')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Data(format!("malformed log row {line:?}")))?;
                    if step <= last {
                        kept.push(line);
                    }
                }
            }
        }
        let mut text = kept.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file, pairs })
    }

    pub fn append(&mut self, step: u64, r: &LossReport) -> Result<()> {
        let mut row = format!("{step},{},{},{}", r.d_loss, r.g_loss, r.penalty);
        if self.pairs > 1 {
            for p in &r.pairs {
                row.push_str(&format!(",{},{},{}", p.d_loss, p.g_loss, p.penalty));
            }
        }
        writeln!(self.file, "{row}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Parsed rows: step followed by the numeric columns.
pub fn read_log(path: &Path) -> Result<(Vec<String>, Vec<(u64, Vec<f64>)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty log", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    if columns.first().map(String::as_str) != Some("step") {
        return Err(Error::Config(format!("{}: not a training log", path.display())));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut it = line.split(',');
        let bad = || Error::Config(format!("{}: malformed row {line:?}", path.display()));
        let step = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let vals = it.map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        if vals.len() + 1 != columns.len() {
            return Err(bad());
        }
        rows.push((step, vals));
    }
    Ok((columns, rows))
}
