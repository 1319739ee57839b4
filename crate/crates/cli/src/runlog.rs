//! Per-run CSV log.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gsde::algos::LogRow;

pub const COLUMNS: [&str; 8] = [
    "timestep",
    "episode",
    "episode_return",
    "episode_continuity_cost",
    "eval_return",
    "eval_std_error",
    "eval_continuity_cost",
    "wall_clock_seconds",
];

/// Marker written in the `episode` column of the row that records a
/// diverged run.
pub const DIVERGED: &str = "diverged";

fn writer_builder() -> csv::WriterBuilder {
    let mut b = csv::WriterBuilder::new();
    b.terminator(csv::Terminator::Any(b'\n'));
    b
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Appends rows to `log.csv` as training produces them.
pub struct RunLogWriter {
    csv: csv::Writer<File>,
    started: Option<Instant>,
}

impl RunLogWriter {
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut csv = writer_builder().from_writer(file);
        csv.write_record(COLUMNS)?;
        csv.flush()?;
        Ok(Self {
            csv,
            started: wall_clock.then(Instant::now),
        })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        let eval = row.eval;
        let record = [
            row.timestep.to_string(),
            row.episode.to_string(),
            opt(row.episode_return),
            opt(row.episode_continuity_cost),
            opt(eval.map(|e| e.mean_return)),
            opt(eval.map(|e| e.std_error)),
            opt(eval.map(|e| e.continuity_cost)),
            self.elapsed(),
        ];
        self.csv.write_record(&record)?;
        self.csv.flush()?;
        Ok(())
    }

    /// Final row of a run aborted by non-finite parameters.
    pub fn write_diverged(&mut self, timestep: u64) -> Result<()> {
        let mut record = vec![timestep.to_string(), DIVERGED.to_string()];
        record.extend(std::iter::repeat_n(String::new(), 5));
        record.push(self.elapsed());
        self.csv.write_record(&record)?;
        self.csv.flush()?;
        Ok(())
    }

    fn elapsed(&self) -> String {
        self.started
            .map(|t| format!("{:.3}", t.elapsed().as_secs_f64()))
            .unwrap_or_default()
    }

    pub fn into_inner(self) -> Result<File> {
        let mut file = self.csv.into_inner().map_err(|e| e.into_error())?;
        file.flush()?;
        Ok(file)
    }
}

/// One parsed log row; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub timestep: u64,
    pub episode: Option<u64>,
    pub diverged: bool,
    pub episode_return: Option<f64>,
    pub episode_continuity_cost: Option<f64>,
    pub eval_return: Option<f64>,
    pub eval_std_error: Option<f64>,
    pub eval_continuity_cost: Option<f64>,
    pub wall_clock_seconds: Option<f64>,
}

fn cell(record: &csv::StringRecord, i: usize, line: u64) -> Result<Option<f64>> {
    let s = record.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .with_context(|| format!("line {line}, column {}: bad number {s:?}", COLUMNS[i]))
}

/// Reads a log written by [`RunLogWriter`], rejecting any other header.
pub fn read_run_log(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(COLUMNS) {
        bail!(
            "{}: header {:?} does not match the run log columns",
            path.display(),
            header.iter().collect::<Vec<_>>()
        );
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let record = record.with_context(|| format!("{}: line {line}", path.display()))?;
        let timestep = record[0]
            .parse()
            .with_context(|| format!("{}: line {line}: bad timestep", path.display()))?;
        let (episode, diverged) = match &record[1] {
            DIVERGED => (None, true),
            s => (
                Some(
                    s.parse()
                        .with_context(|| format!("{}: line {line}: bad episode", path.display()))?,
                ),
                false,
            ),
        };
        rows.push(CsvRow {
            timestep,
            episode,
            diverged,
            episode_return: cell(&record, 2, line)?,
            episode_continuity_cost: cell(&record, 3, line)?,
            eval_return: cell(&record, 4, line)?,
            eval_std_error: cell(&record, 5, line)?,
            eval_continuity_cost: cell(&record, 6, line)?,
            wall_clock_seconds: cell(&record, 7, line)?,
        });
    }
    Ok(rows)
}

pub const PARETO_COLUMNS: [&str; 7] = [
    "label",
    "interval",
    "mean_return",
    "se_return",
    "mean_ctrain",
    "se_ctrain",
    "n_seeds",
];

/// Label prefix of rows reporting failed sweep cells.
pub const WARNING: &str = "warning";

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub label: String,
    pub interval: String,
    pub mean_return: f64,
    pub se_return: f64,
    pub mean_ctrain: f64,
    pub se_ctrain: f64,
    pub n_seeds: usize,
}

pub fn write_pareto(path: &Path, rows: &[ParetoRow], warnings: &[String]) -> Result<()> {
    let mut w = writer_builder()
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(PARETO_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.interval.clone(),
            r.mean_return.to_string(),
            r.se_return.to_string(),
            r.mean_ctrain.to_string(),
            r.se_ctrain.to_string(),
            r.n_seeds.to_string(),
        ])?;
    }
    for msg in warnings {
        let mut record = vec![format!("{WARNING}: {msg}")];
        record.extend(std::iter::repeat_n(String::new(), 6));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a Pareto table, skipping warning rows.
pub fn read_pareto(path: &Path) -> Result<Vec<ParetoRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(PARETO_COLUMNS) {
        bail!(
            "{}: header {:?} does not match the pareto columns",
            path.display(),
            header.iter().collect::<Vec<_>>()
        );
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        if record[0].starts_with(WARNING) {
            continue;
        }
        let ctx = || format!("{}: line {}", path.display(), k + 2);
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .with_context(|| format!("{}, column {}", ctx(), PARETO_COLUMNS[i]))
        };
        rows.push(ParetoRow {
            label: record[0].to_string(),
            interval: record[1].to_string(),
            mean_return: num(2)?,
            se_return: num(3)?,
            mean_ctrain: num(4)?,
            se_ctrain: num(5)?,
            n_seeds: record[6].parse().with_context(|| format!("{}, column n_seeds", ctx()))?,
        });
    }
    Ok(rows)
}
