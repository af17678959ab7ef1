//! Geographically registered map: a feature layer and the location-dependent
//! GPS and lidar sensor-model layers, each on a uniform 10 m grid.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::pipeline::{SensorKind, UpdateOutcome, UpdateStats};
use crate::types::{MapFeature, Pose2D};

pub const DEFAULT_CELL_SIZE: f64 = 10.0;

pub type CellKey = (i64, i64);

pub fn cell_of(x: f64, y: f64, cell_size: f64) -> CellKey {
    ((x / cell_size).floor() as i64, (y / cell_size).floor() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GpsQuality {
    Usable,
    Noisy,
    Unavailable,
}

/// Acceptance-ratio thresholds for classifying GPS cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub usable: f64,
    pub unavailable: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            usable: 0.8,
            unavailable: 0.1,
        }
    }
}

impl QualityThresholds {
    pub fn classify(&self, accepted: u64, rejected: u64, no_fix: u64) -> GpsQuality {
        let decided = accepted + rejected;
        if decided == 0 {
            return if no_fix > 0 {
                GpsQuality::Unavailable
            } else {
                GpsQuality::Usable
            };
        }
        let r = accepted as f64 / decided as f64;
        if r >= self.usable {
            GpsQuality::Usable
        } else if r >= self.unavailable {
            GpsQuality::Noisy
        } else {
            GpsQuality::Unavailable
        }
    }
}

/// Feature set with a uniform-grid index. Every feature is in exactly one bucket.
#[derive(Debug, Clone, Default)]
pub struct FeatureLayer {
    features: Vec<MapFeature>,
    grid: HashMap<CellKey, Vec<usize>>,
    ids: HashMap<u64, usize>,
    cell_size: f64,
}

impl FeatureLayer {
    pub fn new(cell_size: f64) -> Self {
        FeatureLayer {
            cell_size,
            ..Default::default()
        }
    }

    pub fn from_features(features: impl IntoIterator<Item = MapFeature>) -> Result<Self, MapError> {
        let mut layer = FeatureLayer::new(DEFAULT_CELL_SIZE);
        for f in features {
            layer.insert(f)?;
        }
        Ok(layer)
    }

    pub fn insert(&mut self, f: MapFeature) -> Result<(), MapError> {
        if self.ids.contains_key(&f.id) {
            return Err(MapError::DuplicateFeature(f.id));
        }
        let idx = self.features.len();
        self.ids.insert(f.id, idx);
        self.grid.entry(cell_of(f.x, f.y, self.cell_size)).or_default().push(idx);
        self.features.push(f);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[MapFeature] {
        &self.features
    }

    pub fn get(&self, id: u64) -> Option<&MapFeature> {
        self.ids.get(&id).map(|&i| &self.features[i])
    }

    /// Features within the closed ball of `radius` around `center`, sorted by id.
    pub fn query(&self, center: (f64, f64), radius: f64) -> Vec<MapFeature> {
        if radius <= 0.0 || self.features.is_empty() {
            return Vec::new();
        }
        let (lo_x, lo_y) = cell_of(center.0 - radius, center.1 - radius, self.cell_size);
        let (hi_x, hi_y) = cell_of(center.0 + radius, center.1 + radius, self.cell_size);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for cx in lo_x..=hi_x {
            for cy in lo_y..=hi_y {
                let Some(bucket) = self.grid.get(&(cx, cy)) else {
                    continue;
                };
                for &i in bucket {
                    let f = &self.features[i];
                    let (dx, dy) = (f.x - center.0, f.y - center.1);
                    if dx * dx + dy * dy <= r2 {
                        out.push(*f);
                    }
                }
            }
        }
        out.sort_by_key(|f| f.id);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingSample {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationModelCell {
    pub cx: i64,
    pub cy: i64,
    pub gps_quality: GpsQuality,
    /// Headings of lidar-accepted poses in this cell; parallel to `heading_positions`.
    pub headings: Vec<f64>,
    #[serde(default)]
    pub heading_positions: Vec<[f64; 2]>,
    /// Number of log entries that fell in this cell.
    pub samples: u64,
    #[serde(default)]
    pub gps_accepted: u64,
    #[serde(default)]
    pub gps_rejected: u64,
    #[serde(default)]
    pub gps_no_fix: u64,
}

impl LocationModelCell {
    fn heading_samples(&self) -> impl Iterator<Item = HeadingSample> + '_ {
        self.headings.iter().enumerate().map(move |(i, &h)| {
            let [x, y] = self.heading_positions.get(i).copied().unwrap_or([
                (self.cx as f64 + 0.5) * DEFAULT_CELL_SIZE,
                (self.cy as f64 + 0.5) * DEFAULT_CELL_SIZE,
            ]);
            HeadingSample { x, y, heading: h }
        })
    }
}

/// One entry of a localisation log: the filter pose at the time of an update and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationLogEntry {
    pub pose: Pose2D,
    pub stats: UpdateStats,
}

#[derive(Debug, Default)]
struct CellAccum {
    accepted: u64,
    rejected: u64,
    no_fix: u64,
    samples: u64,
    headings: Vec<HeadingSample>,
}

/// Per-cell GPS quality and lidar heading history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocationLayer {
    cells: BTreeMap<CellKey, LocationModelCell>,
}

impl LocationLayer {
    /// Builds the layer from past logs. Pure in the multiset of entries: log
    /// order and concatenation order do not matter.
    pub fn build<'a>(
        logs: impl IntoIterator<Item = &'a LocationLogEntry>,
        thresholds: &QualityThresholds,
    ) -> LocationLayer {
        let mut acc: BTreeMap<CellKey, CellAccum> = BTreeMap::new();
        for e in logs {
            let key = cell_of(e.pose.x, e.pose.y, DEFAULT_CELL_SIZE);
            let cell = acc.entry(key).or_default();
            cell.samples += 1;
            match (e.stats.sensor, e.stats.outcome) {
                (SensorKind::Gps, UpdateOutcome::Accepted) => cell.accepted += 1,
                (SensorKind::Gps, UpdateOutcome::Rejected) => cell.rejected += 1,
                (SensorKind::Gps, UpdateOutcome::NoFix) => cell.no_fix += 1,
                (SensorKind::Lidar, UpdateOutcome::Accepted) => cell.headings.push(HeadingSample {
                    x: e.pose.x,
                    y: e.pose.y,
                    heading: e.pose.heading,
                }),
                _ => {}
            }
        }
        let cells = acc
            .into_iter()
            .map(|((cx, cy), mut a)| {
                a.headings.sort_by(|p, q| {
                    p.x.total_cmp(&q.x)
                        .then(p.y.total_cmp(&q.y))
                        .then(p.heading.total_cmp(&q.heading))
                });
                let cell = LocationModelCell {
                    cx,
                    cy,
                    gps_quality: thresholds.classify(a.accepted, a.rejected, a.no_fix),
                    headings: a.headings.iter().map(|h| h.heading).collect(),
                    heading_positions: a.headings.iter().map(|h| [h.x, h.y]).collect(),
                    samples: a.samples,
                    gps_accepted: a.accepted,
                    gps_rejected: a.rejected,
                    gps_no_fix: a.no_fix,
                };
                ((cx, cy), cell)
            })
            .collect();
        LocationLayer { cells }
    }

    pub fn from_cells(cells: impl IntoIterator<Item = LocationModelCell>) -> Self {
        LocationLayer {
            cells: cells.into_iter().map(|c| ((c.cx, c.cy), c)).collect(),
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = &LocationModelCell> {
        self.cells.values()
    }

    pub fn cell(&self, key: CellKey) -> Option<&LocationModelCell> {
        self.cells.get(&key)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn gps_quality(&self, x: f64, y: f64) -> GpsQuality {
        self.cells
            .get(&cell_of(x, y, DEFAULT_CELL_SIZE))
            .map_or(GpsQuality::Usable, |c| c.gps_quality)
    }

    /// Headings recorded inside the axis-aligned box of side `box_size` centred on (x, y).
    pub fn lidar_history(&self, x: f64, y: f64, box_size: f64) -> Vec<f64> {
        let h = box_size / 2.0;
        let (lo_x, lo_y) = cell_of(x - h, y - h, DEFAULT_CELL_SIZE);
        let (hi_x, hi_y) = cell_of(x + h, y + h, DEFAULT_CELL_SIZE);
        let mut out = Vec::new();
        for cx in lo_x..=hi_x {
            for cy in lo_y..=hi_y {
                if let Some(c) = self.cells.get(&(cx, cy)) {
                    out.extend(
                        c.heading_samples()
                            .filter(|s| (s.x - x).abs() <= h && (s.y - y).abs() <= h)
                            .map(|s| s.heading),
                    );
                }
            }
        }
        out
    }
}

/// On-disk map layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub features: Vec<MapFeature>,
    #[serde(default)]
    pub cells: Vec<LocationModelCell>,
}

#[derive(Debug, Clone, Default)]
pub struct MapDb {
    pub features: FeatureLayer,
    pub location: LocationLayer,
}

impl MapDb {
    pub fn new(features: FeatureLayer, location: LocationLayer) -> Self {
        MapDb { features, location }
    }

    pub fn query_features(&self, center: (f64, f64), radius: f64) -> Vec<MapFeature> {
        self.features.query(center, radius)
    }

    pub fn query_gps_model(&self, position: (f64, f64)) -> GpsQuality {
        self.location.gps_quality(position.0, position.1)
    }

    pub fn query_lidar_history(&self, position: (f64, f64)) -> Vec<f64> {
        self.location.lidar_history(position.0, position.1, DEFAULT_CELL_SIZE)
    }

    pub fn to_file(&self) -> MapFile {
        MapFile {
            features: self.features.features().to_vec(),
            cells: self.location.cells().cloned().collect(),
        }
    }

    pub fn from_file(file: MapFile) -> Result<Self, MapError> {
        Ok(MapDb {
            features: FeatureLayer::from_features(file.features)?,
            location: LocationLayer::from_cells(file.cells),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: MapFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
