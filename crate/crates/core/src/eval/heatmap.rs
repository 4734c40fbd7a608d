use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const CELL: usize = 40;
const MARGIN: usize = 30;

/// Row-major matrix as CSV without a header.
pub fn matrix_csv(matrix: &[Vec<f64>]) -> String {
    matrix
        .iter()
        .map(|row| row.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        })
        .collect()
}

/// Per-row min-max brightness in `[0, 255]`; a row with no spread is mid-gray.
fn brightness(row: &[f64]) -> Vec<u8> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    row.iter()
        .map(|v| {
            if range > 0.0 {
                (255.0 * (v - lo) / range).round() as u8
            } else {
                128
            }
        })
        .collect()
}

/// Grayscale heatmap: column `x` is the influencing type, row `k` the context type.
pub fn matrix_svg(matrix: &[Vec<f64>]) -> String {
    let k = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    let (w, h) = (MARGIN + cols * CELL, MARGIN + k * CELL);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .expect("string write");
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("string write");
    for x in 0..cols {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x}</text>"#,
            MARGIN + x * CELL + CELL / 2,
            MARGIN - 10
        )
        .expect("string write");
    }
    for (r, row) in matrix.iter().enumerate() {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{r}</text>"#,
            MARGIN / 2,
            MARGIN + r * CELL + CELL / 2 + 4
        )
        .expect("string write");
        for (x, g) in brightness(row).into_iter().enumerate() {
            writeln!(
                svg,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>"#,
                MARGIN + x * CELL,
                MARGIN + r * CELL
            )
            .expect("string write");
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<prefix>.csv` and `<prefix>.svg`, returning both paths.
pub fn heatmap_export(matrix: &[Vec<f64>], prefix: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let prefix = prefix.as_ref();
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let (csv, svg) = (with_ext(".csv"), with_ext(".svg"));
    fs::write(&csv, matrix_csv(matrix) + "\n").map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, matrix_svg(matrix)).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}
