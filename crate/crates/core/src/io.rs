//! Checkpoints and tables on disk.
//!
//! A checkpoint holds one time slice: a `# {json}` header line describing the grid,
//! then `i,j,x,y,value` rows. Every CSV table starts with `# schema=1`. Floats are
//! written in their shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, GridFunction, Trajectory};

pub const SCHEMA_LINE: &str = "# schema=1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed checkpoint: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("incomplete checkpoint set in {dir}: {detail}")]
    Incomplete { dir: PathBuf, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub dims: [usize; 2],
    pub lengths: [f64; 2],
    pub nt: usize,
    pub t_final: f64,
    pub level: usize,
    pub time: f64,
    pub field: String,
}

impl CheckpointHeader {
    pub fn grid(&self) -> Result<Grid, GridError> {
        Grid::new(self.dim, self.dims, self.lengths, self.nt, self.t_final)
    }
}

pub fn format_grid_function(u: &GridFunction, level: usize, field: &str) -> String {
    let g = &u.grid;
    let header = CheckpointHeader {
        dim: g.dim(),
        dims: g.cells(),
        lengths: g.lengths(),
        nt: g.nt(),
        t_final: g.t_final(),
        level,
        time: u.time,
        field: field.to_string(),
    };
    let mut out = format!("# {}\ni,j,x,y,value\n", serde_json::to_string(&header).expect("header serializes"));
    for (c, v) in u.values.iter().enumerate() {
        let (i, j) = g.coords(c);
        let [x, y] = g.center(c);
        let _ = writeln!(out, "{i},{j},{},{},{}", num(x), num(y), num(*v));
    }
    out
}

pub fn parse_grid_function(text: &str, path: &Path) -> Result<(CheckpointHeader, GridFunction), IoError> {
    let bad = |detail: String| IoError::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| bad("missing '# {header}' line".into()))?;
    let header: CheckpointHeader = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    let grid = header.grid()?;
    if lines.next() != Some("i,j,x,y,value") {
        return Err(bad("missing column line".into()));
    }
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(format!("row {k}: expected 5 columns")));
        }
        let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("row {k}: {e}")));
        let (i, j) = (parse_idx(cols[0])?, parse_idx(cols[1])?);
        if i >= grid.nx() || j >= grid.ny() {
            return Err(bad(format!("row {k}: cell ({i},{j}) out of range")));
        }
        let v: f64 = cols[4].trim().parse().map_err(|e| bad(format!("row {k}: {e}")))?;
        let c = grid.index(i, j);
        values[c] = v;
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let (i, j) = grid.coords(missing);
        return Err(bad(format!("no value for cell ({i},{j})")));
    }
    let u = GridFunction::from_values(grid, header.time, values)?;
    Ok((header, u))
}

pub fn write_grid_function(path: &Path, u: &GridFunction, level: usize, field: &str) -> Result<(), IoError> {
    write_text(path, &format_grid_function(u, level, field))
}

pub fn read_grid_function(path: &Path) -> Result<(CheckpointHeader, GridFunction), IoError> {
    parse_grid_function(&read_text(path)?, path)
}

pub fn checkpoint_name(level: usize) -> String {
    format!("step_{level:05}.csv")
}

/// One checkpoint per level in `dir`.
pub fn write_checkpoints(dir: &Path, u: &Trajectory) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for n in 0..u.slices.len() {
        write_grid_function(&dir.join(checkpoint_name(n)), &u.slice(n), n, "u")?;
    }
    Ok(())
}

/// Reassemble a trajectory; every level `0..=nt` must be present and consistent.
pub fn read_checkpoints(dir: &Path) -> Result<Trajectory, IoError> {
    let incomplete = |detail: String| IoError::Incomplete {
        dir: dir.to_path_buf(),
        detail,
    };
    let first = dir.join(checkpoint_name(0));
    if !first.exists() {
        return Err(incomplete("missing step_00000.csv".into()));
    }
    let (h0, u0) = read_grid_function(&first).map_err(|e| incomplete(e.to_string()))?;
    let grid = u0.grid;
    let mut slices = vec![u0.values];
    for n in 1..=grid.nt() {
        let path = dir.join(checkpoint_name(n));
        if !path.exists() {
            return Err(incomplete(format!("missing {}", checkpoint_name(n))));
        }
        let (h, u) = read_grid_function(&path).map_err(|e| incomplete(e.to_string()))?;
        if h.level != n || !u.grid.same_shape(&grid) || h.dims != h0.dims {
            return Err(incomplete(format!("{} does not match level {n}", checkpoint_name(n))));
        }
        slices.push(u.values);
    }
    Ok(Trajectory::new(grid, slices)?)
}

/// A `# schema=1` table. Cells are written verbatim.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> CsvTable {
        CsvTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = format!("{SCHEMA_LINE}\n{}\n", self.columns.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.render())
    }
}

/// Shortest round-trip text for a float; scientific for very small or large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Format an optional float; empty for `None`.
pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::unit_2d(5, 3, 0.3).unwrap();
        let u = GridFunction::from_fn(g, g.time(2), |x, y| (x * 7.0).sin() / 3.0 + y.exp() * 1e-17);
        let path = dir.path().join("u.csv");
        write_grid_function(&path, &u, 2, "u").unwrap();
        let (h, back) = read_grid_function(&path).unwrap();
        assert_eq!(h.level, 2);
        assert_eq!(back, u);
    }

    #[test]
    fn trajectory_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::unit_1d(6, 3, 1.0).unwrap();
        let slices = (0..4).map(|n| (0..6).map(|c| (n * 10 + c) as f64 * 0.1).collect()).collect();
        let u = Trajectory::new(g, slices).unwrap();
        write_checkpoints(dir.path(), &u).unwrap();
        assert_eq!(read_checkpoints(dir.path()).unwrap(), u);
        fs::remove_file(dir.path().join(checkpoint_name(2))).unwrap();
        assert!(matches!(read_checkpoints(dir.path()), Err(IoError::Incomplete { .. })));
        let text = fs::read_to_string(dir.path().join(checkpoint_name(1))).unwrap();
        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        write_checkpoints(dir.path(), &u).unwrap();
        fs::write(dir.path().join(checkpoint_name(1)), cut).unwrap();
        assert!(matches!(read_checkpoints(dir.path()), Err(IoError::Incomplete { .. })));
    }

    #[test]
    fn tables_carry_schema_line() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), opt(None)]);
        assert_eq!(t.render(), "# schema=1\na,b\n1,\n");
    }
}
