//! Metrics CSV. Columns, in order:
//!
//! `iteration, pos_energy, neg_energy, recon, kl_prior, vae_loss,
//! energy_gap, kl_data_p, kl_p_q, kl_q_p, kl_enc_post`
//!
//! Divergence cells are empty when the quantity was not evaluated for that
//! row or is unavailable for the model type. Floats use the shortest
//! representation that parses back to the same value.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::diagnostics::DivergenceEntry;
use crate::error::{Error, Result};
use crate::training::LossReport;

pub const COLUMNS: [&str; 11] = [
    "iteration",
    "pos_energy",
    "neg_energy",
    "recon",
    "kl_prior",
    "vae_loss",
    "energy_gap",
    "kl_data_p",
    "kl_p_q",
    "kl_q_p",
    "kl_enc_post",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub pos_energy: f64,
    pub neg_energy: f64,
    pub recon: f64,
    pub kl_prior: f64,
    pub vae_loss: f64,
    pub energy_gap: f64,
    pub kl_data_p: Option<f64>,
    pub kl_p_q: Option<f64>,
    pub kl_q_p: Option<f64>,
    pub kl_enc_post: Option<f64>,
}

impl MetricsRow {
    pub fn new(r: &LossReport, d: Option<&DivergenceEntry>) -> Self {
        Self {
            iteration: r.iteration,
            pos_energy: r.pos_energy,
            neg_energy: r.neg_energy,
            recon: r.recon,
            kl_prior: r.kl_prior,
            vae_loss: r.vae_loss,
            energy_gap: r.energy_gap,
            kl_data_p: d.and_then(|d| d.kl_data_p),
            kl_p_q: d.and_then(|d| d.kl_p_q),
            kl_q_p: d.and_then(|d| d.kl_q_p),
            kl_enc_post: d.and_then(|d| d.kl_enc_post),
        }
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.iteration.to_string(),
            self.pos_energy.to_string(),
            self.neg_energy.to_string(),
            self.recon.to_string(),
            self.kl_prior.to_string(),
            self.vae_loss.to_string(),
            self.energy_gap.to_string(),
            opt(self.kl_data_p),
            opt(self.kl_p_q),
            opt(self.kl_q_p),
            opt(self.kl_enc_post),
        ]
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

impl MetricsWriter {
    /// Starts a fresh file with a header row.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(COLUMNS).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    /// Continues an existing file after dropping rows past `iteration`, so a
    /// resumed run produces the same file as an uninterrupted one.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let kept: Vec<MetricsRow> = read_metrics(path)?
            .into_iter()
            .filter(|r| r.iteration <= iteration)
            .collect();
        let mut w = Self::create(path)?;
        for row in &kept {
            w.append(row)?;
        }
        w.flush()?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner: csv::Writer::from_writer(file) })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields()).map_err(|e| csv_err(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Format(format!("{}: unexpected metrics header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |c: &str| Error::Format(format!("{}: row {}: bad `{c}`", path.display(), i + 2));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(COLUMNS[k]));
        let opt = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        rows.push(MetricsRow {
            iteration: rec[0].parse().map_err(|_| bad("iteration"))?,
            pos_energy: num(1)?,
            neg_energy: num(2)?,
            recon: num(3)?,
            kl_prior: num(4)?,
            vae_loss: num(5)?,
            energy_gap: num(6)?,
            kl_data_p: opt(7)?,
            kl_p_q: opt(8)?,
            kl_q_p: opt(9)?,
            kl_enc_post: opt(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(i: u64) -> LossReport {
        LossReport {
            iteration: i,
            pos_energy: 0.1 * i as f64,
            neg_energy: -1.0 / 3.0,
            recon: 1e-300,
            kl_prior: 2.5,
            vae_loss: f64::MAX,
            energy_gap: 0.0,
        }
    }

    #[test]
    fn header_rows_and_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for i in 1..=100 {
            w.append(&MetricsRow::new(&report(i), None)).unwrap();
        }
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,"));
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 100);
        assert_eq!(rows[9], MetricsRow::new(&report(10), None));
        assert_eq!(rows[0].kl_p_q, None);
    }

    #[test]
    fn resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for i in 1..=10 {
            w.append(&MetricsRow::new(&report(i), None)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let mut w = MetricsWriter::resume(&path, 4).unwrap();
        w.append(&MetricsRow::new(&report(5), None)).unwrap();
        w.flush().unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }
}
