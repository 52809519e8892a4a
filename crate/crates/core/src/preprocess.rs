//! ASU conversion and fixed-length feature vectors over the tower universe.

use serde::{Deserialize, Serialize};

use crate::db::{FingerprintDatabase, RawScan, TowerId, MAX_ASU};
use crate::error::{Error, Result};

/// Normalized RSS vector aligned to the tower universe. Unheard towers are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub location_id: u32,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(location_id: u32, values: Vec<f64>) -> Self {
        FeatureVector { location_id, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_asu(asu: i64) -> Result<()> {
    if (0..=i64::from(MAX_ASU)).contains(&asu) {
        Ok(())
    } else {
        Err(Error::AsuOutOfRange(asu))
    }
}

/// dBm = 2·ASU − 113.
pub fn asu_to_dbm(asu: i64) -> Result<f64> {
    check_asu(asu)?;
    Ok(2.0 * asu as f64 - 113.0)
}

/// Maps ASU onto [0, 1] with the unit's fixed range (ASU / 31).
pub fn normalize_asu(asu: i64) -> Result<f64> {
    check_asu(asu)?;
    Ok(asu as f64 / f64::from(MAX_ASU))
}

fn tower_position(universe: &[TowerId], tower: &TowerId) -> Result<usize> {
    universe
        .iter()
        .position(|t| t == tower)
        .ok_or_else(|| Error::UnknownTower(tower.to_string()))
}

pub fn vectorize(scan: &RawScan, universe: &[TowerId], label: u32) -> Result<FeatureVector> {
    let mut values = vec![0.0; universe.len()];
    for r in scan.readings() {
        let j = tower_position(universe, &r.tower)?;
        values[j] = normalize_asu(i64::from(r.asu))?;
    }
    Ok(FeatureVector::new(label, values))
}

/// Which universe entries the scan actually heard. ASU 0 and "unheard" share
/// the feature value 0, so augmenters that need the heard set use this mask.
pub fn heard_mask(scan: &RawScan, universe: &[TowerId]) -> Result<Vec<bool>> {
    let mut mask = vec![false; universe.len()];
    for r in scan.readings() {
        mask[tower_position(universe, &r.tower)?] = true;
    }
    Ok(mask)
}

/// One vector per scan, in (location, scan) order.
pub fn vectorize_database(db: &FingerprintDatabase) -> Result<Vec<FeatureVector>> {
    let universe = db.tower_universe();
    db.locations()
        .iter()
        .flat_map(|loc| loc.scans.iter().map(move |s| (loc.location_id, s)))
        .map(|(label, scan)| vectorize(scan, universe, label))
        .collect()
}
