//! Ground / obstacle / ceiling segmentation by slope-limited region growing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, RiskGrid};

use super::cloud::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    /// Largest ground slope accepted between neighbouring cells.
    pub max_slope_deg: f64,
    /// Height band above local ground that still counts as ground.
    pub ground_tolerance: f64,
    /// Points higher than this above local ground are ceiling.
    pub ceiling_height: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { max_slope_deg: 30.0, ground_tolerance: 0.1, ceiling_height: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Ground,
    Obstacle,
    Ceiling,
    /// Outside the grid; not used by any map.
    Outside,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: Vec<PointClass>,
    /// Local ground height per cell, NaN where no ground was found.
    pub ground_height: RiskGrid,
}

impl Segmentation {
    pub fn points_of(&self, cloud: &PointCloud, class: PointClass) -> Vec<Point> {
        cloud
            .points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &c)| c == class)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn count(&self, class: PointClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }
}

/// Queue entry: direct acceptances drain before inherited heights, each in
/// ascending height, with the cell index as a deterministic tie-break.
#[derive(Debug, PartialEq)]
struct Entry {
    inherited: bool,
    height: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.inherited
            .cmp(&self.inherited)
            .then(o.height.total_cmp(&self.height))
            .then(o.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Labels every point as ground, obstacle or ceiling.
///
/// Each occupied cell is represented by its lowest point. Ground grows from
/// the lowest cell to 8-neighbours whose lowest point lies within the slope
/// limit; a neighbour that fails the test inherits its parent's ground height
/// instead, so cells covered only by obstacle tops still get a reference
/// level. Disconnected patches seed new regions from their lowest cell.
pub fn segment_ground(cloud: &PointCloud, spec: &GridSpec, params: &SegmentParams) -> Segmentation {
    let (w, h) = (spec.width, spec.height);
    let mut min_z = vec![f64::INFINITY; w * h];
    let cells: Vec<Option<usize>> = cloud
        .points
        .iter()
        .map(|p| spec.cell_of(p.x, p.y).map(|(x, y)| spec.index(x, y)))
        .collect();
    for (p, c) in cloud.points.iter().zip(&cells) {
        if let Some(c) = *c {
            min_z[c] = min_z[c].min(p.z);
        }
    }
    let occupied = |c: usize| min_z[c].is_finite();
    let tan = params.max_slope_deg.to_radians().tan();
    let mut ground = vec![f64::NAN; w * h];
    let mut done = vec![false; w * h];
    let mut seeds: Vec<usize> = (0..w * h).filter(|&c| occupied(c)).collect();
    seeds.sort_by(|&a, &b| min_z[a].total_cmp(&min_z[b]).then(a.cmp(&b)));

    let mut heap = BinaryHeap::new();
    for &seed in &seeds {
        if done[seed] {
            continue;
        }
        heap.push(Entry { inherited: false, height: min_z[seed], cell: seed });
        while let Some(Entry { height, cell, .. }) = heap.pop() {
            if done[cell] {
                continue;
            }
            done[cell] = true;
            ground[cell] = height;
            let (cx, cy) = ((cell % w) as isize, (cell / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if done[n] || !occupied(n) {
                        continue;
                    }
                    let dist = spec.resolution * ((dx * dx + dy * dy) as f64).sqrt();
                    if (min_z[n] - height).abs() <= tan * dist + params.ground_tolerance {
                        heap.push(Entry { inherited: false, height: min_z[n], cell: n });
                    } else {
                        heap.push(Entry { inherited: true, height, cell: n });
                    }
                }
            }
        }
    }

    let labels = cloud
        .points
        .iter()
        .zip(&cells)
        .map(|(p, c)| match c {
            None => PointClass::Outside,
            Some(c) => {
                let above = p.z - ground[*c];
                if above <= params.ground_tolerance {
                    PointClass::Ground
                } else if above <= params.ceiling_height {
                    PointClass::Obstacle
                } else {
                    PointClass::Ceiling
                }
            }
        })
        .collect();
    Segmentation {
        labels,
        ground_height: RiskGrid::from_vec(w, h, ground).expect("grid sized"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(spec: &GridSpec, z: impl Fn(f64, f64) -> f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for iy in 0..spec.height {
            for ix in 0..spec.width {
                let (x, y) = spec.cell_center(ix, iy);
                pts.push(Point::new(x, y, z(x, y)));
            }
        }
        pts
    }

    #[test]
    fn flat_plane_is_ground() {
        let spec = GridSpec::centered(10, 10, 0.1);
        let cloud = PointCloud::new(plane(&spec, |_, _| 0.0)).unwrap();
        let s = segment_ground(&cloud, &spec, &SegmentParams::default());
        assert_eq!(s.count(PointClass::Ground), 100);
    }

    #[test]
    fn obstacle_and_ceiling_points() {
        let spec = GridSpec::centered(10, 10, 0.1);
        let mut pts = plane(&spec, |_, _| 0.0);
        pts.push(Point::new(0.01, 0.01, 1.0));
        pts.push(Point::new(0.11, 0.01, 2.5));
        pts.push(Point::new(9.0, 9.0, 0.0));
        let s = segment_ground(&PointCloud::new(pts).unwrap(), &spec, &SegmentParams::default());
        assert_eq!(s.labels[100], PointClass::Obstacle);
        assert_eq!(s.labels[101], PointClass::Ceiling);
        assert_eq!(s.labels[102], PointClass::Outside);
        assert_eq!(s.count(PointClass::Ground), 100);
    }

    #[test]
    fn box_top_inherits_ground() {
        let spec = GridSpec::centered(12, 12, 0.1);
        // a 4x4 block of cells observed only on its 0.8 m top
        let pts = plane(&spec, |x, y| if x.abs() < 0.2 && y.abs() < 0.2 { 0.8 } else { 0.0 });
        let s = segment_ground(&PointCloud::new(pts).unwrap(), &spec, &SegmentParams::default());
        assert_eq!(s.count(PointClass::Obstacle), 16);
        assert!(s.ground_height.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gentle_slope_is_ground() {
        let spec = GridSpec::centered(20, 20, 0.1);
        let pts = plane(&spec, |x, _| 0.4 * x);
        let s = segment_ground(&PointCloud::new(pts).unwrap(), &spec, &SegmentParams::default());
        assert_eq!(s.count(PointClass::Ground), 400);
    }

    #[test]
    fn empty_cloud() {
        let spec = GridSpec::centered(4, 4, 0.1);
        let s = segment_ground(&PointCloud::default(), &spec, &SegmentParams::default());
        assert!(s.labels.is_empty());
        assert!(s.ground_height.data().iter().all(|g| g.is_nan()));
    }
}
