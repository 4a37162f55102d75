//! Grid export. Both formats write the maximum-y row first, so an image
//! viewer shows the map with +y up.
//!
//! CSV: one line per grid row, comma-separated values at full precision.
//! PGM: binary `P5`, maxval 255, each value clamped to `[0,1]` then scaled
//! and rounded; NaN maps to 0.

use std::fs;
use std::io::Write;
use std::path::Path;

use riskmap::RiskGrid;

use crate::error::{io_err, CliResult};

pub fn grid_csv(grid: &RiskGrid) -> String {
    let mut s = String::new();
    for y in (0..grid.height()).rev() {
        let row: Vec<String> = (0..grid.width()).map(|x| grid.get(x, y).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

pub fn grid_pgm(grid: &RiskGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for y in (0..grid.height()).rev() {
        out.extend((0..grid.width()).map(|x| to_byte(grid.get(x, y))));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub pgm: bool,
}

/// Writes `<stem>.csv` and/or `<stem>.pgm` under `dir`.
pub fn write_grid(dir: &Path, stem: &str, grid: &RiskGrid, formats: Formats) -> CliResult<()> {
    if formats.csv {
        let p = dir.join(format!("{stem}.csv"));
        fs::write(&p, grid_csv(grid)).map_err(|e| io_err(&p, e))?;
    }
    if formats.pgm {
        let p = dir.join(format!("{stem}.pgm"));
        let mut f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        f.write_all(&grid_pgm(grid)).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_csv(s: &str) -> Vec<Vec<f64>> {
        s.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
    }

    fn parse_pgm(b: &[u8]) -> (usize, usize, Vec<u8>) {
        let header: Vec<&[u8]> = b.splitn(4, |&c| c == b'\n').collect();
        assert_eq!(header[0], b"P5");
        let dims: Vec<usize> = std::str::from_utf8(header[1]).unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(header[2], b"255");
        (dims[0], dims[1], header[3].to_vec())
    }

    #[test]
    fn rows_are_written_top_down() {
        let g = RiskGrid::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        assert_eq!(grid_csv(&g), "10,11,12\n0,1,2\n");
        let g = RiskGrid::from_fn(3, 2, |x, y| (x + 3 * y) as f64 * 0.2);
        let (w, h, px) = parse_pgm(&grid_pgm(&g));
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![153, 204, 255, 0, 51, 102]);
    }

    #[test]
    fn pgm_matches_csv_within_quantization() {
        let g = RiskGrid::from_fn(7, 5, |x, y| (x as f64 * 0.37 + y as f64 * 0.11).sin() * 1.2);
        let csv = parse_csv(&grid_csv(&g));
        let (w, h, px) = parse_pgm(&grid_pgm(&g));
        assert_eq!(px.len(), w * h);
        for (r, row) in csv.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let back = px[r * w + c] as f64 / 255.0;
                assert!((back - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert_eq!(to_byte(f64::NAN), 0);
        assert_eq!(to_byte(-3.0), 0);
        assert_eq!(to_byte(7.0), 255);
    }
}
