//! CSV and plot-script writers.
//!
//! Every CSV starts with a `# schema_version,1` comment line followed by a
//! header row. Fields are quoted only when needed, per RFC 4180. Floats use
//! the shortest representation that round-trips, so identical runs produce
//! identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::LabError;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Rows of string fields under a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LabError> {
        writeln!(w, "# schema_version,{SCHEMA_VERSION}")?;
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record(&self.header)?;
        for row in &self.rows {
            csv.write_record(row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

/// Collects output files so they can be written by one thread in a fixed order.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn table(&mut self, path: PathBuf, table: &Table) -> Result<(), LabError> {
        let mut bytes = Vec::new();
        table.write_to(&mut bytes)?;
        self.files.push((path, bytes));
        Ok(())
    }

    pub fn text(&mut self, path: PathBuf, text: String) {
        self.files.push((path, text.into_bytes()));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, LabError> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// A gnuplot script that plots rows of tidy CSV selected by string filters.
pub fn gnuplot_script(title: &str, xlabel: &str, ylabel: &str, logx: bool, logy: bool, series: &[Series]) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot script; run from the output directory: gnuplot -p plot.gp\n");
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!(
        "set title \"{title}\"\nset xlabel \"{xlabel}\"\nset ylabel \"{ylabel}\"\n"
    ));
    if logx {
        s.push_str("set logscale x\n");
    }
    if logy {
        s.push_str("set logscale y\n");
    }
    s.push_str("set key left bottom\n");
    let parts: Vec<String> = series
        .iter()
        .map(|p| {
            let filter: String = p
                .filters
                .iter()
                .map(|(col, val)| format!("strcol({col}) eq \"{val}\" && "))
                .collect();
            format!(
                "'{}' using ({}1 ? column({}) : NaN):{} with linespoints title \"{}\"",
                p.file, filter, p.x, p.y, p.title
            )
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}

/// One plotted line. Column indices count from one, as in gnuplot.
pub struct Series {
    pub file: &'static str,
    pub x: usize,
    pub y: usize,
    pub filters: Vec<(usize, String)>,
    pub title: String,
}
