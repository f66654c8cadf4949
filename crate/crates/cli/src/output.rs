//! Snapshot files.
//!
//! CSV rows run over `y` ascending and columns over `x` ascending. Values
//! use the shortest decimal form that parses back to the same `f64`, so a
//! snapshot re-read is bit-identical to the field that was written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fracot::pgm::{heatmap, write_pgm};
use fracot::{FieldKind, FieldSet, GridSpec};

/// File stem used for a field kind.
pub fn stem(kind: FieldKind) -> &'static str {
    match kind {
        FieldKind::Multiplier => "phi",
        other => other.name(),
    }
}

pub fn snapshot_path(dir: &Path, kind: FieldKind, level: usize, ext: &str) -> PathBuf {
    dir.join(format!("{}_n{level:04}.{ext}", stem(kind)))
}

pub fn encode_csv(values: &[f64], width: usize) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for row in values.chunks(width) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses a snapshot CSV, returning the values and the row width.
pub fn parse_csv(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut width = None;
    for (line_no, line) in text.lines().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("line {}: bad number", line_no + 1))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                bail!("line {}: {} values, expected {w}", line_no + 1, row.len())
            }
            _ => {}
        }
        values.extend(row);
    }
    Ok((values, width.unwrap_or(0)))
}

pub fn read_csv(path: &Path) -> Result<(Vec<f64>, usize)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_csv(&text).with_context(|| format!("in {}", path.display()))
}

/// Writes one time level of one field; with `heatmap` also a PGM rendering.
pub fn write_snapshot(
    dir: &Path,
    kind: FieldKind,
    level: usize,
    values: &[f64],
    width: usize,
    with_heatmap: bool,
) -> Result<()> {
    let path = snapshot_path(dir, kind, level, "csv");
    std::fs::write(&path, encode_csv(values, width)).with_context(|| format!("cannot write {}", path.display()))?;
    if with_heatmap {
        write_heatmap(&snapshot_path(dir, kind, level, "pgm"), values, width)?;
    }
    Ok(())
}

/// Grayscale rendering with linear min-max scaling. Image row `r` is grid
/// row `j = r`, the same orientation image endpoints are read with.
pub fn write_heatmap(path: &Path, values: &[f64], width: usize) -> Result<()> {
    let height = values.len() / width;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let image = heatmap(values, width, height)?;
    let comment = format!(
        "linear scale: 0 = {lo}, 255 = {hi}; constant fields map to 0; row r is grid row j = r"
    );
    write_pgm(path, &image, Some(&comment)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Every stored level of every field.
pub fn write_all(dir: &Path, grid: &GridSpec<f64>, fields: &FieldSet<f64>, heatmaps: bool) -> Result<usize> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = 0;
    for kind in FieldKind::ALL {
        let (width, _) = grid.block_shape(kind);
        if grid.block_len(kind) == 0 {
            continue;
        }
        let (first, count) = grid.time_range(kind);
        for n in first..first + count {
            let show = heatmaps && kind == FieldKind::Density && !grid.is_1d();
            write_snapshot(dir, kind, n, fields.level(grid, kind, n), width, show)?;
            written += 1;
        }
    }
    if heatmaps && grid.is_1d() {
        // one image for the whole path: x across, time down the rows
        write_heatmap(&dir.join("density_spacetime.pgm"), &fields.p, grid.nx())?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        assert_eq!(encode_csv(&[3.25], 1), "3.25\n");
        assert_eq!(parse_csv("3.25\n").unwrap(), (vec![3.25], 1));
    }

    #[test]
    fn rows_follow_y() {
        assert_eq!(encode_csv(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3), "1,2,3\n4,5,6\n");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = parse_csv("1,2\n3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
