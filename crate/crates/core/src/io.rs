//! Text formats for coverings, measures, step statistics and matrices.
//!
//! A covering is one CSV row per live leaf with header
//! `depth,c1..cn,r1..rn`, optionally followed by a `measure` column. Floats
//! are written with 17 significant digits so that a round trip is exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BoxPartition, HyperBox};
use crate::subdivision::StepStats;
use crate::transfer::TransitionMatrix;

/// Contents of a covering (or measure) CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct CoveringTable {
    pub depth: u32,
    pub boxes: Vec<HyperBox>,
    pub measure: Option<Vec<f64>>,
}

impl CoveringTable {
    pub fn dim(&self) -> usize {
        self.boxes.first().map_or(0, HyperBox::dim)
    }

    /// Rebuilds the partition of `root` that these leaves came from.
    pub fn to_partition(&self, root: HyperBox, excluded: Vec<HyperBox>) -> Result<BoxPartition> {
        BoxPartition::from_leaves(root, self.depth, &self.boxes)?.with_excluded(excluded)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim: usize, with_measure: bool) -> String {
    let mut cols = vec!["depth".to_string()];
    cols.extend((1..=dim).map(|i| format!("c{i}")));
    cols.extend((1..=dim).map(|i| format!("r{i}")));
    if with_measure {
        cols.push("measure".to_string());
    }
    cols.join(",")
}

/// Writes the leaves of `p`, with a trailing measure column when given.
pub fn write_covering<W: Write>(w: &mut W, p: &BoxPartition, measure: Option<&[f64]>) -> Result<()> {
    if let Some(m) = measure {
        if m.len() != p.len() {
            return Err(Error::input(format!("{} measure values for {} boxes", m.len(), p.len())));
        }
    }
    let io = |e| Error::io("<covering>", e);
    writeln!(w, "{}", header(p.dim(), measure.is_some())).map_err(io)?;
    for (i, b) in p.leaves().enumerate() {
        let mut row = vec![p.depth().to_string()];
        row.extend(b.center().iter().map(|&v| fmt(v)));
        row.extend(b.radius().iter().map(|&v| fmt(v)));
        if let Some(m) = measure {
            row.push(fmt(m[i]));
        }
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Replaces the placeholder path of I/O errors raised while writing to `path`.
fn at_path(path: &Path, err: Error) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn save_covering(path: &Path, p: &BoxPartition, measure: Option<&[f64]>) -> Result<()> {
    let mut w = create(path)?;
    write_covering(&mut w, p, measure).map_err(|e| at_path(path, e))?;
    finish(path, w)
}

/// Parses a covering CSV; `source` names the input in error messages.
pub fn read_covering<R: Read>(r: R, source: &Path) -> Result<CoveringTable> {
    let parse_err = |line: usize, message: String| Error::Parse {
        what: "covering CSV",
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let with_measure = cols.last() == Some(&"measure");
    let coord_cols = cols.len() - 1 - usize::from(with_measure);
    if cols.first() != Some(&"depth") || coord_cols == 0 || coord_cols % 2 != 0 {
        return Err(parse_err(1, format!("unexpected header `{}`", cols.join(","))));
    }
    let dim = coord_cols / 2;
    let expected = header(dim, with_measure);
    if cols.join(",") != expected {
        return Err(parse_err(1, format!("expected header `{expected}`")));
    }

    let mut depth = None;
    let mut boxes = Vec::new();
    let mut measure = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column `{}`: {e}", cols[i])))
        };
        let d: u32 = record[0]
            .parse()
            .map_err(|e| parse_err(line, format!("column `depth`: {e}")))?;
        if *depth.get_or_insert(d) != d {
            return Err(parse_err(line, "all leaves must share one depth".into()));
        }
        let center = (1..=dim).map(field).collect::<Result<Vec<_>>>()?;
        let radius = (dim + 1..=2 * dim).map(field).collect::<Result<Vec<_>>>()?;
        boxes.push(HyperBox::new(center, radius).map_err(|e| parse_err(line, e.to_string()))?);
        if with_measure {
            let m = field(2 * dim + 1)?;
            if !(m.is_finite() && m >= 0.0) {
                return Err(parse_err(line, format!("measure {m} is not a nonnegative number")));
            }
            measure.push(m);
        }
    }
    Ok(CoveringTable {
        depth: depth.unwrap_or(0),
        boxes,
        measure: with_measure.then_some(measure),
    })
}

pub fn load_covering(path: &Path) -> Result<CoveringTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_covering(std::io::BufReader::new(file), path)
}

/// `step,leaves_before,leaves_after` rows.
pub fn write_stats<W: Write>(w: &mut W, stats: &[StepStats]) -> std::io::Result<()> {
    writeln!(w, "step,leaves_before,leaves_after")?;
    for s in stats {
        writeln!(w, "{},{},{}", s.step, s.leaves_before, s.leaves_after)?;
    }
    Ok(())
}

pub fn save_stats(path: &Path, stats: &[StepStats]) -> Result<()> {
    let mut w = create(path)?;
    write_stats(&mut w, stats).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Coordinate triplets `k,l,p_kl` (1-based), then one `leak,l,value` line
/// per column.
pub fn write_matrix<W: Write>(w: &mut W, m: &TransitionMatrix) -> std::io::Result<()> {
    writeln!(w, "k,l,p")?;
    for l in 0..m.dim() {
        for (k, p) in m.column(l) {
            writeln!(w, "{},{},{}", k + 1, l + 1, fmt(p))?;
        }
    }
    for l in 0..m.dim() {
        writeln!(w, "leak,{},{}", l + 1, fmt(m.leakage(l)))?;
    }
    Ok(())
}

pub fn save_matrix(path: &Path, m: &TransitionMatrix) -> Result<()> {
    let mut w = create(path)?;
    write_matrix(&mut w, m).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn save_text(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}
