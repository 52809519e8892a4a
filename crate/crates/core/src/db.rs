//! Scans, reference locations and the fingerprint database, plus the
//! JSON-lines file format.
//!
//! File layout: the first line is a header object
//! `{"testbed": string, "grid_cell_m": number}`; every following line is one
//! scan `{"loc": int, "x": number, "y": number, "ts": int, "readings": [[id, asu], ...]}`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ASU: u8 = 31;
pub const MAX_READINGS: usize = 7;

/// Cell tower identifier (CID).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TowerId(String);

impl TowerId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyTowerId);
        }
        Ok(TowerId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TowerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reading {
    pub tower: TowerId,
    pub asu: u8,
}

/// One cellular scan: every tower heard at a single instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawScan {
    timestamp: i64,
    readings: Vec<Reading>,
}

impl RawScan {
    pub fn new(timestamp: i64, readings: Vec<(TowerId, i64)>) -> Result<Self> {
        if readings.is_empty() || readings.len() > MAX_READINGS {
            return Err(Error::ReadingCount(readings.len()));
        }
        let mut seen = HashSet::with_capacity(readings.len());
        let mut out = Vec::with_capacity(readings.len());
        for (tower, asu) in readings {
            if !(0..=i64::from(MAX_ASU)).contains(&asu) {
                return Err(Error::AsuOutOfRange(asu));
            }
            if !seen.insert(tower.clone()) {
                return Err(Error::DuplicateTower(tower.0));
            }
            out.push(Reading { tower, asu: asu as u8 });
        }
        Ok(RawScan {
            timestamp,
            readings: out,
        })
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    pub fn asu_of(&self, tower: &TowerId) -> Option<u8> {
        self.readings.iter().find(|r| &r.tower == tower).map(|r| r.asu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLocation {
    pub location_id: u32,
    pub x: f64,
    pub y: f64,
    pub scans: Vec<RawScan>,
}

impl ReferenceLocation {
    pub fn coordinates(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub testbed: String,
    pub grid_cell_m: f64,
}

/// Full training corpus. The tower universe is derived from the scans and
/// sorted lexicographically; its order defines feature-vector indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDatabase {
    metadata: Metadata,
    tower_universe: Vec<TowerId>,
    locations: Vec<ReferenceLocation>,
}

impl FingerprintDatabase {
    /// Builds a database, sorting locations by id and deriving the tower
    /// universe. Scans inside a location keep their given order.
    pub fn new(metadata: Metadata, mut locations: Vec<ReferenceLocation>) -> Result<Self> {
        locations.sort_by_key(|l| l.location_id);
        for pair in locations.windows(2) {
            if pair[0].location_id == pair[1].location_id {
                return Err(Error::Config(format!("duplicate location id {}", pair[0].location_id)));
            }
        }
        let universe: BTreeSet<TowerId> = locations
            .iter()
            .flat_map(|l| l.scans.iter())
            .flat_map(|s| s.readings.iter().map(|r| r.tower.clone()))
            .collect();
        Ok(FingerprintDatabase {
            metadata,
            tower_universe: universe.into_iter().collect(),
            locations,
        })
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn tower_universe(&self) -> &[TowerId] {
        &self.tower_universe
    }

    pub fn locations(&self) -> &[ReferenceLocation] {
        &self.locations
    }

    pub fn location(&self, id: u32) -> Option<&ReferenceLocation> {
        self.locations
            .binary_search_by_key(&id, |l| l.location_id)
            .ok()
            .map(|i| &self.locations[i])
    }

    pub fn tower_index(&self, tower: &TowerId) -> Option<usize> {
        self.tower_universe.binary_search(tower).ok()
    }

    pub fn scan_count(&self) -> usize {
        self.locations.iter().map(|l| l.scans.len()).sum()
    }

    /// Splits every location's scans in temporal order: the first
    /// `train_count(n)` scans go to the first database, the rest to the second.
    /// Both halves keep the full tower universe of `self`.
    pub fn split_by<F>(&self, train_count: F) -> (FingerprintDatabase, FingerprintDatabase)
    where
        F: Fn(usize) -> usize,
    {
        let mut train = Vec::with_capacity(self.locations.len());
        let mut test = Vec::with_capacity(self.locations.len());
        for loc in &self.locations {
            let k = train_count(loc.scans.len()).min(loc.scans.len());
            let (a, b) = loc.scans.split_at(k);
            train.push(ReferenceLocation {
                scans: a.to_vec(),
                ..loc.clone()
            });
            test.push(ReferenceLocation {
                scans: b.to_vec(),
                ..loc.clone()
            });
        }
        let keep = |locations: Vec<ReferenceLocation>| FingerprintDatabase {
            metadata: self.metadata.clone(),
            tower_universe: self.tower_universe.clone(),
            locations,
        };
        (keep(train), keep(test))
    }
}

#[derive(Serialize, Deserialize)]
struct ScanLine {
    loc: u32,
    x: f64,
    y: f64,
    ts: i64,
    readings: Vec<(String, i64)>,
}

pub fn load_database(path: impl AsRef<Path>) -> Result<FingerprintDatabase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_database(BufReader::new(file))
}

pub fn read_database<R: BufRead>(reader: R) -> Result<FingerprintDatabase> {
    let mut metadata = None;
    let mut by_loc: BTreeMap<u32, ReferenceLocation> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: lineno,
            message: e.to_string(),
        };
        if metadata.is_none() {
            metadata = Some(serde_json::from_str::<Metadata>(&line).map_err(parse_err)?);
            continue;
        }
        let scan: ScanLine = serde_json::from_str(&line).map_err(parse_err)?;
        let readings = scan
            .readings
            .into_iter()
            .map(|(id, asu)| Ok((TowerId::new(id)?, asu)))
            .collect::<Result<Vec<_>>>()?;
        let raw = RawScan::new(scan.ts, readings)?;
        let loc = by_loc.entry(scan.loc).or_insert_with(|| ReferenceLocation {
            location_id: scan.loc,
            x: scan.x,
            y: scan.y,
            scans: Vec::new(),
        });
        if loc.x.to_bits() != scan.x.to_bits() || loc.y.to_bits() != scan.y.to_bits() {
            return Err(Error::InconsistentLocation { loc: scan.loc });
        }
        loc.scans.push(raw);
    }
    let metadata = metadata.ok_or(Error::NoLocations)?;
    if by_loc.is_empty() {
        return Err(Error::NoLocations);
    }
    FingerprintDatabase::new(metadata, by_loc.into_values().collect())
}

pub fn save_database(db: &FingerprintDatabase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_database(db, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the JSON-lines format. Fails for locations without scans, which
/// the one-line-per-scan format cannot represent.
pub fn write_database<W: Write>(db: &FingerprintDatabase, out: &mut W) -> std::io::Result<()> {
    if let Some(loc) = db.locations.iter().find(|l| l.scans.is_empty()) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("location {} has no scans", loc.location_id),
        ));
    }
    serde_json::to_writer(&mut *out, &db.metadata)?;
    out.write_all(b"\n")?;
    for loc in &db.locations {
        for scan in &loc.scans {
            let line = ScanLine {
                loc: loc.location_id,
                x: loc.x,
                y: loc.y,
                ts: scan.timestamp,
                readings: scan
                    .readings
                    .iter()
                    .map(|r| (r.tower.0.clone(), i64::from(r.asu)))
                    .collect(),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Fraction of scans at `loc` that heard exactly `k` towers, for every `k`
/// that occurs.
pub fn heard_count_histogram(loc: &ReferenceLocation) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for scan in &loc.scans {
        *counts.entry(scan.readings.len()).or_default() += 1;
    }
    let total = loc.scans.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(s: &str) -> TowerId {
        TowerId::new(s).unwrap()
    }

    fn scan_with(n: usize) -> RawScan {
        let readings = (0..n).map(|i| (tid(&format!("T{i}")), 10)).collect();
        RawScan::new(0, readings).unwrap()
    }

    fn parse(text: &str) -> Result<FingerprintDatabase> {
        read_database(text.as_bytes())
    }

    #[test]
    fn parses_two_locations() {
        let mut text = String::from("{\"testbed\":\"t\",\"grid_cell_m\":1.0}\n");
        for loc in 0..2 {
            for ts in 0..3 {
                text.push_str(&format!(
                    "{{\"loc\":{loc},\"x\":{loc}.0,\"y\":0.0,\"ts\":{ts},\"readings\":[[\"B\",3],[\"A\",{ts}]]}}\n"
                ));
            }
        }
        let db = parse(&text).unwrap();
        assert_eq!(db.tower_universe(), &[tid("A"), tid("B")]);
        assert_eq!(db.locations().len(), 2);
        assert_eq!(db.scan_count(), 6);
    }

    #[test]
    fn rejects_asu_32() {
        let text =
            "{\"testbed\":\"t\",\"grid_cell_m\":1}\n{\"loc\":0,\"x\":0,\"y\":0,\"ts\":0,\"readings\":[[\"A\",32]]}\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("ASU out of range"), "{err}");
    }

    #[test]
    fn rejects_empty_file() {
        assert!(matches!(parse(""), Err(Error::NoLocations)));
        assert!(matches!(
            parse("{\"testbed\":\"t\",\"grid_cell_m\":1}\n"),
            Err(Error::NoLocations)
        ));
    }

    #[test]
    fn reports_line_number_of_malformed_line() {
        let text = "{\"testbed\":\"t\",\"grid_cell_m\":1}\n{\"loc\":0,\"x\":0,\"y\":0,\"ts\":0,\"readings\":[[\"A\",3]]}\nnot json\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_eight_readings_and_duplicates() {
        let eight = (0..8).map(|i| (tid(&format!("T{i}")), 1)).collect();
        assert!(matches!(RawScan::new(0, eight), Err(Error::ReadingCount(8))));
        let dup = vec![(tid("A"), 1), (tid("A"), 2)];
        assert!(matches!(RawScan::new(0, dup), Err(Error::DuplicateTower(_))));
        assert!(matches!(RawScan::new(0, vec![]), Err(Error::ReadingCount(0))));
        assert!(matches!(TowerId::new(""), Err(Error::EmptyTowerId)));
    }

    #[test]
    fn histogram_counts() {
        let loc = ReferenceLocation {
            location_id: 0,
            x: 0.0,
            y: 0.0,
            scans: vec![scan_with(3), scan_with(3), scan_with(4)],
        };
        let h = heard_count_histogram(&loc);
        assert_eq!(h.len(), 2);
        assert!((h[&3] - 2.0 / 3.0).abs() < 1e-15);
        assert!((h[&4] - 1.0 / 3.0).abs() < 1e-15);

        let loc = ReferenceLocation {
            scans: vec![scan_with(5); 10],
            ..loc
        };
        assert_eq!(heard_count_histogram(&loc), BTreeMap::from([(5, 1.0)]));
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let db = FingerprintDatabase::new(
            Metadata {
                testbed: "t".into(),
                grid_cell_m: 1.0,
            },
            vec![ReferenceLocation {
                location_id: 0,
                x: 0.0,
                y: 0.0,
                scans: vec![scan_with(1)],
            }],
        )
        .unwrap();
        let err = save_database(&db, "/nonexistent-dir/sub/db.jsonl").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
