//! Dataset containers and their on-disk formats.
//!
//! Row sets are CSV `x,y`. Grid sets are a directory holding `manifest.json`
//! and `samples.bin`: per sample, the ten feature planes followed by the cost
//! plane, each little-endian `f32`, row-major. The known mask is the last
//! feature plane.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{GridSpec, RiskGrid};
use crate::pipeline::features::{CHANNEL_NAMES, CH_KNOWN, N_CHANNELS};
use crate::pipeline::{FeatureStack, LabeledSample, Pose};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
const FORMAT: &str = "riskmap-grid-dataset/1";

/// Labelled rows of `state_dim` inputs each.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    pub state_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl RowSet {
    pub fn new(state_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || x.len() != y.len() * state_dim {
            return Err(RiskError::invalid("row inputs do not match labels"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(RiskError::invalid("non-finite row value"));
        }
        Ok(RowSet { state_dim, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn subset(&self, idx: &[usize]) -> RowSet {
        let mut x = Vec::with_capacity(idx.len() * self.state_dim);
        for &i in idx {
            x.extend_from_slice(self.state(i));
        }
        RowSet { state_dim: self.state_dim, x, y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    /// Writes a one-dimensional set as CSV `x,y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.state_dim != 1 {
            return Err(RiskError::invalid("CSV export supports one-dimensional states"));
        }
        let mut wtr = csv::Writer::from_writer(w);
        let fmt = |e: csv::Error| RiskError::Format(e.to_string());
        wtr.write_record(["x", "y"]).map_err(fmt)?;
        for (x, y) in self.x.iter().zip(&self.y) {
            wtr.write_record([x.to_string(), y.to_string()]).map_err(fmt)?;
        }
        wtr.flush().map_err(|e| RiskError::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let fmt = |e: csv::Error| RiskError::Format(e.to_string());
        if rdr.headers().map_err(fmt)? != vec!["x", "y"] {
            return Err(RiskError::Format("expected header x,y".into()));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (a, b) = rec.map_err(fmt)?;
            x.push(a);
            y.push(b);
        }
        RowSet::new(1, x, y).map_err(|e| RiskError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| RiskError::io(path, e))?;
        RowSet::read_csv(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| RiskError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Byte offset of the sample's first plane in `samples.bin`.
    pub offset: u64,
    pub pose: Pose,
    /// Index of the generating world, for synthetic sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub format: String,
    pub grid: GridSpec,
    pub channels: Vec<String>,
    pub samples: Vec<SampleEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Grid samples with their manifest metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub spec: GridSpec,
    pub samples: Vec<LabeledSample>,
    pub worlds: Vec<Option<usize>>,
    pub extra: serde_json::Value,
}

fn plane_names() -> Vec<String> {
    CHANNEL_NAMES.iter().map(|s| s.to_string()).chain(["cost".to_string()]).collect()
}

impl GridDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| RiskError::io(dir, e))?;
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.samples.len());
        for (s, world) in self.samples.iter().zip(&self.worlds) {
            if s.shape() != (self.spec.width, self.spec.height) {
                return Err(RiskError::invalid(format!("sample {} does not match the grid", s.id)));
            }
            entries.push(SampleEntry { id: s.id.clone(), offset: blob.len() as u64, pose: s.pose, world: *world });
            for plane in s.features.channels().iter().chain([&s.cost]) {
                for &v in plane.data() {
                    blob.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        let manifest = GridManifest {
            format: FORMAT.into(),
            grid: self.spec,
            channels: plane_names(),
            samples: entries,
            extra: self.extra.clone(),
        };
        let p = dir.join(SAMPLES_FILE);
        fs::write(&p, blob).map_err(|e| RiskError::io(&p, e))?;
        let p = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| RiskError::Format(e.to_string()))?;
        fs::write(&p, json).map_err(|e| RiskError::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(|e| RiskError::io(&p, e))?;
        let m: GridManifest = serde_json::from_str(&text).map_err(|e| RiskError::Format(format!("{}: {e}", p.display())))?;
        if m.format != FORMAT {
            return Err(RiskError::Format(format!("unsupported dataset format {:?}", m.format)));
        }
        if m.channels != plane_names() {
            return Err(RiskError::Format(format!("unexpected channel list {:?}", m.channels)));
        }
        let p = dir.join(SAMPLES_FILE);
        let blob = fs::read(&p).map_err(|e| RiskError::io(&p, e))?;
        let (w, h) = (m.grid.width, m.grid.height);
        let plane_bytes = 4 * w * h;
        let sample_bytes = plane_bytes * (N_CHANNELS + 1);
        let mut samples = Vec::with_capacity(m.samples.len());
        for e in &m.samples {
            let start = e.offset as usize;
            if start + sample_bytes > blob.len() {
                return Err(RiskError::Format(format!("sample {} runs past the end of {SAMPLES_FILE}", e.id)));
            }
            let planes: Vec<RiskGrid> = (0..=N_CHANNELS)
                .map(|k| {
                    let b = &blob[start + k * plane_bytes..start + (k + 1) * plane_bytes];
                    let data = b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
                    RiskGrid::from_vec(w, h, data)
                })
                .collect::<Result<_>>()?;
            let mut planes = planes;
            let cost = planes.pop().expect("cost plane");
            let mask = planes[CH_KNOWN].clone();
            let fmt = |err: RiskError| RiskError::Format(format!("sample {}: {err}", e.id));
            let features = FeatureStack::new(planes).map_err(fmt)?;
            samples.push(LabeledSample::new(e.id.clone(), features, cost, mask, e.pose).map_err(fmt)?);
        }
        Ok(GridDataset {
            spec: m.grid,
            worlds: m.samples.iter().map(|e| e.world).collect(),
            samples,
            extra: m.extra,
        })
    }
}

/// Tells grid dataset directories apart from row CSV files.
pub fn is_grid_dataset(path: &Path) -> bool {
    path.join(MANIFEST_FILE).is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_csv_round_trip() {
        let set = RowSet::new(1, vec![0.5, -1.25], vec![2.0, 3.5]).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(RowSet::read_csv(&buf[..]).unwrap(), set);
        assert!(RowSet::read_csv(&b"a,b\n1,2\n"[..]).is_err());
        assert!(RowSet::new(2, vec![1.0], vec![1.0]).is_err());
        assert_eq!(set.subset(&[1]).y, vec![3.5]);
    }

    #[test]
    fn grid_round_trip() {
        let (w, h) = (4, 3);
        let mask = RiskGrid::from_fn(w, h, |x, _| if x > 0 { 1.0 } else { 0.0 });
        let mut chans: Vec<RiskGrid> = (0..N_CHANNELS).map(|k| RiskGrid::filled(w, h, k as f64 * 0.5)).collect();
        chans[CH_KNOWN] = mask.clone();
        let cost = RiskGrid::from_fn(w, h, |x, y| if x > 0 { 0.25 * y as f64 } else { 0.0 });
        let s = LabeledSample::new("a", FeatureStack::new(chans).unwrap(), cost, mask, Pose { x: 1.0, y: 2.0, yaw: 0.5 }).unwrap();
        let ds = GridDataset {
            spec: GridSpec::centered(w, h, 0.1),
            samples: vec![s.clone(), s],
            worlds: vec![Some(0), None],
            extra: serde_json::json!({"k": 2}),
        };
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(is_grid_dataset(dir.path()));
        let back = GridDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);

        let p = dir.path().join(SAMPLES_FILE);
        let b = fs::read(&p).unwrap();
        fs::write(&p, &b[..b.len() - 1]).unwrap();
        assert!(matches!(GridDataset::load(dir.path()), Err(RiskError::Format(_))));
    }
}
