//! Point clouds and their CSV / binary file forms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

pub const BINARY_MAGIC: &[u8; 8] = b"RMPC0001";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub stamp: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z, intensity: 0.0, stamp: 0.0 }
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.intensity, self.stamp].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(RiskError::invalid(format!("point {i} has non-finite fields")));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Latest timestamp, or 0 for an empty cloud.
    pub fn max_stamp(&self) -> f64 {
        self.points.iter().map(|p| p.stamp).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| RiskError::Format(e.to_string()))?;
        if headers != vec!["x", "y", "z", "intensity", "stamp"] {
            return Err(RiskError::Format(format!("unexpected point header {headers:?}")));
        }
        let points = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Point>, _>>()
            .map_err(|e| RiskError::Format(e.to_string()))?;
        PointCloud::new(points).map_err(|e| RiskError::Format(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for p in &self.points {
            wtr.serialize(p).map_err(|e| RiskError::Format(e.to_string()))?;
        }
        if self.points.is_empty() {
            wtr.write_record(["x", "y", "z", "intensity", "stamp"]).map_err(|e| RiskError::Format(e.to_string()))?;
        }
        wtr.flush().map_err(|e| RiskError::Format(e.to_string()))
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| RiskError::Format(e.to_string()))?;
        if buf.len() < 8 || &buf[..8] != BINARY_MAGIC {
            return Err(RiskError::Format("missing RMPC0001 magic".into()));
        }
        let body = &buf[8..];
        if body.len() % 20 != 0 {
            return Err(RiskError::Format(format!("binary body of {} bytes is not whole records", body.len())));
        }
        let points = body
            .chunks_exact(20)
            .map(|rec| {
                let f = |i: usize| f32::from_le_bytes([rec[4 * i], rec[4 * i + 1], rec[4 * i + 2], rec[4 * i + 3]]) as f64;
                Point { x: f(0), y: f(1), z: f(2), intensity: f(3), stamp: f(4) }
            })
            .collect();
        PointCloud::new(points).map_err(|e| RiskError::Format(e.to_string()))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.intensity, p.stamp] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a `.csv` file or the binary form, chosen by the magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let mut f = BufReader::new(File::open(path).map_err(|e| RiskError::io(path, e))?);
        let mut head = Vec::new();
        f.read_to_end(&mut head).map_err(|e| RiskError::io(path, e))?;
        if head.starts_with(BINARY_MAGIC) {
            PointCloud::read_binary(&head[..])
        } else {
            PointCloud::read_csv(&head[..])
        }
    }

    pub fn save(&self, path: &Path, binary: bool) -> Result<()> {
        let f = BufWriter::new(File::create(path).map_err(|e| RiskError::io(path, e))?);
        if binary {
            self.write_binary(f).map_err(|e| RiskError::io(path, e))
        } else {
            self.write_csv(f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::new(vec![
            Point { x: 1.5, y: -2.25, z: 0.125, intensity: 7.0, stamp: 3.5 },
            Point::new(0.0, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        cloud().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("x,y,z,intensity,stamp\n"));
        assert_eq!(PointCloud::read_csv(&buf[..]).unwrap(), cloud());
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let mut buf = Vec::new();
        cloud().write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * 20);
        assert_eq!(PointCloud::read_binary(&buf[..]).unwrap(), cloud());
        assert!(PointCloud::read_binary(&buf[..30]).is_err());
        assert!(PointCloud::read_binary(&b"NOTMAGIC"[..]).is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_header() {
        assert!(PointCloud::new(vec![Point::new(f64::NAN, 0.0, 0.0)]).is_err());
        assert!(PointCloud::read_csv(&b"a,b\n1,2\n"[..]).is_err());
        let empty = PointCloud::default();
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert!(PointCloud::read_csv(&buf[..]).unwrap().is_empty());
    }
}
