//! Synthetic fingerprint testbeds from a log-distance path-loss model with
//! log-normal shadowing.
//!
//! For each (location, scan, tower):
//! `rss = P_tx − 10·n·log10(max(d, d0) / d0) + N(0, σ²)`; towers below the
//! receiver sensitivity are dropped, the strongest `max_heard` are kept, and
//! dBm is quantized to ASU with `round((rss + 113) / 2)` clipped to [0, 31].

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::db::{FingerprintDatabase, Metadata, RawScan, ReferenceLocation, TowerId, MAX_ASU, MAX_READINGS};
use crate::error::{Error, Result};
use crate::rng::stream;

const BASE_TIMESTAMP: i64 = 1_600_000_000;
const MAX_SCAN_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Received power at the reference distance, in dBm.
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedSpec {
    pub name: String,
    pub width_m: f64,
    pub height_m: f64,
    /// Grid of cell centers with this spacing, used when `points` is empty.
    #[serde(default)]
    pub grid_spacing_m: Option<f64>,
    /// Explicit reference points; overrides the grid.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    pub towers: Vec<TowerSpec>,
    pub path_loss_exponent: f64,
    #[serde(default = "default_reference_distance")]
    pub reference_distance_m: f64,
    pub shadowing_db: f64,
    pub sensitivity_dbm: f64,
    #[serde(default = "default_max_heard")]
    pub max_heard: usize,
    pub scans_per_location: usize,
    pub seed: u64,
}

fn default_reference_distance() -> f64 {
    1.0
}

fn default_max_heard() -> usize {
    MAX_READINGS
}

/// Mean received power of a tower at a point, in dBm.
pub fn mean_rss_dbm(tower: &TowerSpec, x: f64, y: f64, exponent: f64, d0: f64) -> f64 {
    let d = (tower.x - x).hypot(tower.y - y).max(d0);
    tower.tx_power_dbm - 10.0 * exponent * (d / d0).log10()
}

/// Inverse of `dBm = 2·ASU − 113`, rounded and clipped to the ASU range.
pub fn dbm_to_asu(dbm: f64) -> i64 {
    (((dbm + 113.0) / 2.0).round() as i64).clamp(0, i64::from(MAX_ASU))
}

impl TestbedSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: TestbedSpec = toml::from_str(text).map_err(|e| Error::Config(format!("testbed spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// 12×12 m area, 6×6 grid of 2 m cells, 10 towers ringed around it.
    pub fn default_desk() -> Self {
        const RADII: [f64; 10] = [9.0, 11.0, 13.0, 10.0, 12.0, 9.0, 14.0, 11.0, 10.0, 13.0];
        const POWERS: [f64; 10] = [-55.0, -76.0, -80.0, -60.0, -83.0, -58.0, -81.0, -85.0, -65.0, -79.0];
        let towers = RADII
            .iter()
            .zip(POWERS)
            .enumerate()
            .map(|(k, (&r, p))| {
                let angle = k as f64 * std::f64::consts::TAU / 10.0;
                TowerSpec {
                    id: format!("T{k:02}"),
                    x: 6.0 + r * angle.cos(),
                    y: 6.0 + r * angle.sin(),
                    tx_power_dbm: p,
                }
            })
            .collect();
        TestbedSpec {
            name: "desk".into(),
            width_m: 12.0,
            height_m: 12.0,
            grid_spacing_m: Some(2.0),
            points: Vec::new(),
            towers,
            path_loss_exponent: 3.0,
            reference_distance_m: 1.0,
            shadowing_db: 4.0,
            sensitivity_dbm: -111.0,
            max_heard: MAX_READINGS,
            scans_per_location: 60,
            seed: 2024,
        }
    }

    pub fn reference_points(&self) -> Vec<(f64, f64)> {
        if !self.points.is_empty() {
            return self.points.iter().map(|p| (p[0], p[1])).collect();
        }
        let Some(spacing) = self.grid_spacing_m.filter(|s| *s > 0.0) else {
            return Vec::new();
        };
        let nx = (self.width_m / spacing + 1e-9).floor() as usize;
        let ny = (self.height_m / spacing + 1e-9).floor() as usize;
        (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| ((ix as f64 + 0.5) * spacing, (iy as f64 + 0.5) * spacing)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("testbed spec: {m}")));
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return bad("area dimensions must be positive");
        }
        if self.towers.len() < 2 {
            return bad("need at least 2 towers");
        }
        if self.reference_points().len() < 2 {
            return bad("need at least 2 reference locations");
        }
        if self.max_heard == 0 || self.max_heard > MAX_READINGS {
            return bad("max_heard must be in 1..=7");
        }
        if self.scans_per_location == 0 {
            return bad("scans_per_location must be positive");
        }
        if !self.reference_distance_m.is_finite() || self.reference_distance_m <= 0.0 || self.shadowing_db < 0.0 {
            return bad("reference distance must be positive and shadowing non-negative");
        }
        let mut ids: Vec<&str> = self.towers.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.iter().any(|id| id.is_empty()) || ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("tower ids must be non-empty and unique");
        }
        Ok(())
    }
}

fn draw_scan<R: Rng + ?Sized>(
    spec: &TestbedSpec,
    means: &[f64],
    ids: &[TowerId],
    timestamp: i64,
    rng: &mut R,
) -> Result<Option<RawScan>> {
    let mut heard: Vec<(f64, usize)> = means
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let shadow: f64 = rng.sample(StandardNormal);
            (m + spec.shadowing_db * shadow, j)
        })
        .filter(|(rss, _)| *rss >= spec.sensitivity_dbm)
        .collect();
    if heard.is_empty() {
        return Ok(None);
    }
    heard.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    heard.truncate(spec.max_heard);
    let readings = heard
        .into_iter()
        .map(|(rss, j)| (ids[j].clone(), dbm_to_asu(rss)))
        .collect();
    RawScan::new(timestamp, readings).map(Some)
}

/// Generates the database for a testbed spec. Each location draws from its
/// own random stream, so the output does not depend on thread scheduling.
pub fn generate(spec: &TestbedSpec) -> Result<FingerprintDatabase> {
    spec.validate()?;
    let ids = spec
        .towers
        .iter()
        .map(|t| TowerId::new(t.id.clone()))
        .collect::<Result<Vec<_>>>()?;
    let points = spec.reference_points();
    let locations = points
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let loc_id = i as u32;
            let means: Vec<f64> = spec
                .towers
                .iter()
                .map(|t| mean_rss_dbm(t, x, y, spec.path_loss_exponent, spec.reference_distance_m))
                .collect();
            let mut rng = stream(spec.seed, "synth", u64::from(loc_id));
            let mut scans = Vec::with_capacity(spec.scans_per_location);
            for s in 0..spec.scans_per_location {
                let ts = BASE_TIMESTAMP + (i * spec.scans_per_location + s) as i64;
                let mut scan = None;
                for _ in 0..MAX_SCAN_ATTEMPTS {
                    scan = draw_scan(spec, &means, &ids, ts, &mut rng)?;
                    if scan.is_some() {
                        break;
                    }
                }
                scans.push(
                    scan.ok_or_else(|| Error::Config(format!("location {loc_id} at ({x}, {y}) hears no tower")))?,
                );
            }
            Ok(ReferenceLocation {
                location_id: loc_id,
                x,
                y,
                scans,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FingerprintDatabase::new(
        Metadata {
            testbed: spec.name.clone(),
            grid_cell_m: if spec.points.is_empty() {
                spec.grid_spacing_m.unwrap_or(0.0)
            } else {
                0.0
            },
        },
        locations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tower_spec(points: Vec<[f64; 2]>) -> TestbedSpec {
        TestbedSpec {
            name: "line".into(),
            width_m: 10.0,
            height_m: 10.0,
            grid_spacing_m: None,
            points,
            towers: vec![
                TowerSpec {
                    id: "A".into(),
                    x: 0.0,
                    y: 0.0,
                    tx_power_dbm: -60.0,
                },
                TowerSpec {
                    id: "Z".into(),
                    x: 1000.0,
                    y: 0.0,
                    tx_power_dbm: -60.0,
                },
            ],
            path_loss_exponent: 2.0,
            reference_distance_m: 1.0,
            shadowing_db: 0.0,
            sensitivity_dbm: -111.0,
            max_heard: 7,
            scans_per_location: 3,
            seed: 1,
        }
    }

    #[test]
    fn doubling_distance_costs_three_asu_steps() {
        let db = generate(&two_tower_spec(vec![[2.0, 0.0], [4.0, 0.0]])).unwrap();
        let a = TowerId::new("A").unwrap();
        let near = db.locations()[0].scans[0].asu_of(&a).unwrap();
        let far = db.locations()[1].scans[0].asu_of(&a).unwrap();
        // -60 - 20·log10(2) = -66.02 dBm -> 23.49 -> 23; -72.04 dBm -> 20.48 -> 20
        assert_eq!((near, far), (23, 20));
        assert_eq!(near - far, 3);
        // Tower Z at ~1 km is at -120 dBm, below sensitivity.
        let z = TowerId::new("Z").unwrap();
        assert!(db
            .locations()
            .iter()
            .flat_map(|l| &l.scans)
            .all(|s| s.asu_of(&z).is_none()));
        assert_eq!(db.tower_universe().len(), 1);
    }

    #[test]
    fn default_desk_layout() {
        let spec = TestbedSpec::default_desk();
        assert_eq!(spec.reference_points().len(), 36);
        assert_eq!(spec.reference_points()[0], (1.0, 1.0));
        let db = generate(&spec).unwrap();
        assert_eq!(db.locations().len(), 36);
        assert!(db.tower_universe().len() <= 10);
        assert!(db.locations().iter().all(|l| l.scans.len() == 60));
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut spec = two_tower_spec(vec![[1.0, 0.0]]);
        assert!(spec.validate().is_err());
        spec.points.push([2.0, 0.0]);
        assert!(spec.validate().is_ok());
        spec.towers.truncate(1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn coincident_tower_clamps_distance() {
        let t = TowerSpec {
            id: "A".into(),
            x: 3.0,
            y: 3.0,
            tx_power_dbm: -50.0,
        };
        assert_eq!(mean_rss_dbm(&t, 3.0, 3.0, 3.0, 1.0), -50.0);
    }
}
