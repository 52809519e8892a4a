//! Augmentation techniques over a location's training scans: additive
//! Gaussian noise, per-tower distribution sampling, random tower dropping,
//! threshold tower dropping, plus the combiner that runs all enabled ones.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::db::{heard_count_histogram, FingerprintDatabase, ReferenceLocation, TowerId};
use crate::distfit::{fit_best, FittedDistribution};
use crate::error::{Error, Result};
use crate::preprocess::{heard_mask, normalize_asu, vectorize, FeatureVector};
use crate::rng::stream;
use crate::vae::{train_vae, VaeConfig, VaeModel};

/// Largest candidate set the threshold dropper enumerates exhaustively.
pub const THRESHOLD_MAX_CANDIDATES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TowerStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub heard_probability: f64,
    /// Noise standard deviation: half the observed range.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationStats {
    pub location_id: u32,
    pub towers: Vec<TowerStats>,
    pub heard_histogram: BTreeMap<usize, f64>,
}

fn location_stats(loc: &ReferenceLocation, universe: &[TowerId]) -> LocationStats {
    let towers = universe
        .iter()
        .map(|tower| {
            let values: Vec<f64> = loc
                .scans
                .iter()
                .filter_map(|s| s.asu_of(tower))
                .map(|a| normalize_asu(i64::from(a)).expect("validated ASU"))
                .collect();
            if values.is_empty() {
                return TowerStats::default();
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            TowerStats {
                min,
                max,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                heard_probability: values.len() as f64 / loc.scans.len() as f64,
                spread: (max - min) / 2.0,
            }
        })
        .collect();
    LocationStats {
        location_id: loc.location_id,
        towers,
        heard_histogram: if loc.scans.is_empty() {
            BTreeMap::new()
        } else {
            heard_count_histogram(loc)
        },
    }
}

/// Per-location, per-tower statistics over the scans in which each tower was
/// heard, in database location order.
pub fn compute_stats(db: &FingerprintDatabase) -> Vec<LocationStats> {
    db.locations()
        .iter()
        .map(|loc| location_stats(loc, db.tower_universe()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub per_scan: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: true,
            per_scan: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub enabled: bool,
    /// Synthetic vectors per location; `None` means 10 × the location's scans.
    pub n_per_location: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropRandomConfig {
    pub enabled: bool,
    pub per_scan: usize,
    pub max_drop: usize,
}

impl Default for DropRandomConfig {
    fn default() -> Self {
        DropRandomConfig {
            enabled: true,
            per_scan: 10,
            max_drop: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropThresholdConfig {
    pub enabled: bool,
    pub value: f64,
}

impl Default for DropThresholdConfig {
    fn default() -> Self {
        DropThresholdConfig {
            enabled: true,
            value: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeAugmentConfig {
    pub enabled: bool,
    /// Generated vectors per location; `None` means 10 × the location's scans.
    pub n_per_location: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decoder_variance: f64,
}

impl Default for VaeAugmentConfig {
    fn default() -> Self {
        let base = VaeConfig::default();
        VaeAugmentConfig {
            enabled: true,
            n_per_location: None,
            epochs: base.epochs,
            learning_rate: base.learning_rate,
            decoder_variance: base.decoder_variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub seed: u64,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub drop_random: DropRandomConfig,
    pub drop_threshold: DropThresholdConfig,
    pub vae: VaeAugmentConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            seed: 0,
            noise: NoiseConfig::default(),
            sampling: SamplingConfig {
                enabled: true,
                n_per_location: None,
            },
            drop_random: DropRandomConfig::default(),
            drop_threshold: DropThresholdConfig::default(),
            vae: VaeAugmentConfig::default(),
        }
    }
}

impl AugmentConfig {
    /// Configuration with every technique switched off.
    pub fn originals_only(seed: u64) -> Self {
        let mut cfg = AugmentConfig {
            seed,
            ..AugmentConfig::default()
        };
        cfg.set_enabled(&[]);
        cfg
    }

    /// Enables exactly the listed techniques.
    pub fn set_enabled(&mut self, techniques: &[Technique]) {
        let on = |t| techniques.contains(&t);
        self.noise.enabled = on(Technique::Noise);
        self.sampling.enabled = on(Technique::Sampling);
        self.drop_random.enabled = on(Technique::DropRandom);
        self.drop_threshold.enabled = on(Technique::DropThreshold);
        self.vae.enabled = on(Technique::Vae);
    }

    pub fn is_enabled(&self, t: Technique) -> bool {
        match t {
            Technique::Original => true,
            Technique::Noise => self.noise.enabled,
            Technique::Sampling => self.sampling.enabled,
            Technique::DropRandom => self.drop_random.enabled,
            Technique::DropThreshold => self.drop_threshold.enabled,
            Technique::Vae => self.vae.enabled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.per_scan == 0 || self.drop_random.per_scan == 0 {
            return Err(Error::Config("per_scan multipliers must be at least 1".into()));
        }
        if self.drop_random.max_drop == 0 {
            return Err(Error::Config("drop_random.max_drop must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_threshold.value) {
            return Err(Error::Config(format!(
                "drop_threshold.value {} not in [0,1]",
                self.drop_threshold.value
            )));
        }
        if self.sampling.n_per_location == Some(0) || self.vae.n_per_location == Some(0) {
            return Err(Error::Config("n_per_location must be at least 1".into()));
        }
        self.vae_config().validate()
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            epochs: self.vae.epochs,
            learning_rate: self.vae.learning_rate,
            decoder_variance: self.vae.decoder_variance,
            seed: crate::rng::derive_seed(self.seed, "vae", 0),
            ..VaeConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Original,
    Noise,
    Sampling,
    DropRandom,
    DropThreshold,
    Vae,
}

impl Technique {
    pub const AUGMENTERS: [Technique; 5] = [
        Technique::Noise,
        Technique::Sampling,
        Technique::DropRandom,
        Technique::DropThreshold,
        Technique::Vae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Original => "original",
            Technique::Noise => "noise",
            Technique::Sampling => "sampling",
            Technique::DropRandom => "drop_random",
            Technique::DropThreshold => "drop_threshold",
            Technique::Vae => "vae",
        }
    }
}

/// Adds `N(0, s_ij²)` to every heard entry and clips to [0, 1]. Unheard
/// entries stay exactly 0.
pub fn augment_noise<R: Rng + ?Sized>(
    v: &FeatureVector,
    heard: &[bool],
    stats: &LocationStats,
    rng: &mut R,
) -> FeatureVector {
    let values = v
        .values
        .iter()
        .zip(heard)
        .zip(&stats.towers)
        .map(|((&x, &h), t)| {
            if !h || t.spread <= 0.0 {
                return x;
            }
            let noise = Normal::new(0.0, t.spread).expect("positive spread");
            (x + noise.sample(rng)).clamp(0.0, 1.0)
        })
        .collect();
    FeatureVector::new(v.location_id, values)
}

/// Best-fitting distribution for every tower heard at the location (indexed
/// by tower universe position); `None` for towers never heard there.
pub type LocationFits = Vec<Option<FittedDistribution>>;

pub fn fit_location(loc: &ReferenceLocation, universe: &[TowerId]) -> Result<LocationFits> {
    universe
        .iter()
        .map(|tower| {
            let values: Vec<f64> = loc
                .scans
                .iter()
                .filter_map(|s| s.asu_of(tower))
                .map(|a| normalize_asu(i64::from(a)))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                Ok(None)
            } else {
                fit_best(&values).map(Some)
            }
        })
        .collect()
}

pub fn fit_database(db: &FingerprintDatabase) -> Result<Vec<LocationFits>> {
    db.locations()
        .par_iter()
        .map(|loc| fit_location(loc, db.tower_universe()))
        .collect()
}

/// Draws each heard tower independently from its fitted distribution;
/// towers never heard at the location stay 0.
pub fn augment_sampling<R: Rng + ?Sized>(
    loc: &ReferenceLocation,
    universe: &[TowerId],
    fits: &LocationFits,
    rng: &mut R,
    n: usize,
) -> Result<Vec<FeatureVector>> {
    let mut heard = vec![false; universe.len()];
    for scan in &loc.scans {
        for (j, h) in heard_mask(scan, universe)?.into_iter().enumerate() {
            heard[j] |= h;
        }
    }
    for (j, &h) in heard.iter().enumerate() {
        if h && fits.get(j).and_then(Option::as_ref).is_none() {
            return Err(Error::MissingFit {
                loc: loc.location_id,
                tower: j,
            });
        }
    }
    Ok((0..n)
        .map(|_| {
            let values = heard
                .iter()
                .zip(fits)
                .map(|(&h, fit)| match (h, fit) {
                    (true, Some(f)) => f.draw(rng),
                    _ => 0.0,
                })
                .collect();
            FeatureVector::new(loc.location_id, values)
        })
        .collect())
}

/// Index of the protected (serving-cell proxy) tower among the nonzero
/// entries: the one with the highest mean RSS at the location.
pub fn protected_tower(v: &FeatureVector, stats: &LocationStats) -> Option<usize> {
    v.values
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .fold(None, |best: Option<usize>, (j, _)| match best {
            Some(b) if stats.towers[b].mean >= stats.towers[j].mean => Some(b),
            _ => Some(j),
        })
}

/// Zeroes a random subset of heard entries, never the protected tower. The
/// drop count is uniform on `1..=min(max_drop, heard − 1)`.
pub fn augment_drop_random<R: Rng + ?Sized>(
    v: &FeatureVector,
    stats: &LocationStats,
    cfg: &DropRandomConfig,
    rng: &mut R,
) -> FeatureVector {
    let Some(protected) = protected_tower(v, stats) else {
        return v.clone();
    };
    let candidates: Vec<usize> = v
        .values
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > 0.0 && j != protected)
        .map(|(j, _)| j)
        .collect();
    if candidates.is_empty() {
        return v.clone();
    }
    let max_k = cfg.max_drop.min(candidates.len()).max(1);
    let k = rng.random_range(1..=max_k);
    let mut out = v.clone();
    for i in index::sample(rng, candidates.len(), k) {
        out.values[candidates[i]] = 0.0;
    }
    out
}

/// Every non-empty combination of removing the heard entries that fall
/// below the threshold (the 12 weakest when there are more).
pub fn augment_drop_threshold(v: &FeatureVector, threshold: f64) -> Vec<FeatureVector> {
    let mut candidates: Vec<usize> = v
        .values
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0 && x < threshold)
        .map(|(j, _)| j)
        .collect();
    if candidates.len() > THRESHOLD_MAX_CANDIDATES {
        candidates.sort_by(|&a, &b| v.values[a].total_cmp(&v.values[b]).then(a.cmp(&b)));
        candidates.truncate(THRESHOLD_MAX_CANDIDATES);
        candidates.sort_unstable();
    }
    let k = candidates.len();
    (1u32..(1 << k))
        .map(|mask| {
            let mut out = v.clone();
            for (bit, &j) in candidates.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    out.values[j] = 0.0;
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TechniqueCounts {
    pub original: usize,
    pub noise: usize,
    pub sampling: usize,
    pub drop_random: usize,
    pub drop_threshold: usize,
    pub vae: usize,
}

impl TechniqueCounts {
    pub fn get(&self, t: Technique) -> usize {
        match t {
            Technique::Original => self.original,
            Technique::Noise => self.noise,
            Technique::Sampling => self.sampling,
            Technique::DropRandom => self.drop_random,
            Technique::DropThreshold => self.drop_threshold,
            Technique::Vae => self.vae,
        }
    }

    pub fn total(&self) -> usize {
        self.original + self.noise + self.sampling + self.drop_random + self.drop_threshold + self.vae
    }
}

/// Output of [`augment_all`]: one block per technique, originals first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub blocks: Vec<(Technique, Vec<FeatureVector>)>,
    pub warnings: Vec<String>,
}

impl AugmentedDataset {
    pub fn block(&self, t: Technique) -> &[FeatureVector] {
        self.blocks
            .iter()
            .find(|(bt, _)| *bt == t)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn counts(&self) -> TechniqueCounts {
        let mut c = TechniqueCounts::default();
        for (t, v) in &self.blocks {
            let n = v.len();
            match t {
                Technique::Original => c.original = n,
                Technique::Noise => c.noise = n,
                Technique::Sampling => c.sampling = n,
                Technique::DropRandom => c.drop_random = n,
                Technique::DropThreshold => c.drop_threshold = n,
                Technique::Vae => c.vae = n,
            }
        }
        c
    }

    /// Originals followed by the blocks of the given techniques.
    pub fn select(&self, techniques: &[Technique]) -> Vec<FeatureVector> {
        self.blocks
            .iter()
            .filter(|(t, _)| *t == Technique::Original || techniques.contains(t))
            .flat_map(|(_, v)| v.iter().cloned())
            .collect()
    }

    pub fn all(&self) -> Vec<FeatureVector> {
        self.blocks.iter().flat_map(|(_, v)| v.iter().cloned()).collect()
    }
}

fn per_location<F>(db: &FingerprintDatabase, f: F) -> Result<Vec<FeatureVector>>
where
    F: Fn(usize, &ReferenceLocation) -> Result<Vec<FeatureVector>> + Sync,
{
    let parts: Vec<Vec<FeatureVector>> = db
        .locations()
        .par_iter()
        .enumerate()
        .map(|(i, loc)| f(i, loc))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn default_volume(n: Option<usize>, loc: &ReferenceLocation) -> usize {
    n.unwrap_or(10 * loc.scans.len())
}

/// Runs every enabled technique over the database. `fits` and `vae_models`
/// are only consulted when sampling/VAE are enabled; locations without a VAE
/// model are skipped with a warning.
pub fn augment_all(
    db: &FingerprintDatabase,
    cfg: &AugmentConfig,
    fits: &[LocationFits],
    vae_models: &[VaeModel],
) -> Result<AugmentedDataset> {
    cfg.validate()?;
    let universe = db.tower_universe();
    let stats = compute_stats(db);
    let seed = cfg.seed;
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();

    let originals = per_location(db, |_, loc| {
        loc.scans
            .iter()
            .map(|s| vectorize(s, universe, loc.location_id))
            .collect()
    })?;
    blocks.push((Technique::Original, originals));

    if cfg.noise.enabled {
        let out = per_location(db, |i, loc| {
            let mut rng = stream(seed, "noise", u64::from(loc.location_id));
            let mut out = Vec::with_capacity(loc.scans.len() * cfg.noise.per_scan);
            for scan in &loc.scans {
                let v = vectorize(scan, universe, loc.location_id)?;
                let heard = heard_mask(scan, universe)?;
                for _ in 0..cfg.noise.per_scan {
                    out.push(augment_noise(&v, &heard, &stats[i], &mut rng));
                }
            }
            Ok(out)
        })?;
        blocks.push((Technique::Noise, out));
    }

    if cfg.sampling.enabled {
        if fits.len() != db.locations().len() {
            return Err(Error::DimensionMismatch {
                expected: db.locations().len(),
                got: fits.len(),
            });
        }
        let out = per_location(db, |i, loc| {
            if loc.scans.is_empty() {
                return Ok(Vec::new());
            }
            let mut rng = stream(seed, "sampling", u64::from(loc.location_id));
            let n = default_volume(cfg.sampling.n_per_location, loc);
            augment_sampling(loc, universe, &fits[i], &mut rng, n)
        })?;
        blocks.push((Technique::Sampling, out));
    }

    if cfg.drop_random.enabled {
        let out = per_location(db, |i, loc| {
            let mut rng = stream(seed, "drop_random", u64::from(loc.location_id));
            let mut out = Vec::with_capacity(loc.scans.len() * cfg.drop_random.per_scan);
            for scan in &loc.scans {
                let v = vectorize(scan, universe, loc.location_id)?;
                for _ in 0..cfg.drop_random.per_scan {
                    out.push(augment_drop_random(&v, &stats[i], &cfg.drop_random, &mut rng));
                }
            }
            Ok(out)
        })?;
        blocks.push((Technique::DropRandom, out));
    }

    if cfg.drop_threshold.enabled {
        let out = per_location(db, |_, loc| {
            let mut out = Vec::new();
            for scan in &loc.scans {
                let v = vectorize(scan, universe, loc.location_id)?;
                out.extend(augment_drop_threshold(&v, cfg.drop_threshold.value));
            }
            Ok(out)
        })?;
        blocks.push((Technique::DropThreshold, out));
    }

    if cfg.vae.enabled {
        let mut out = Vec::new();
        for loc in db.locations() {
            if loc.scans.is_empty() {
                continue;
            }
            let Some(model) = vae_models.iter().find(|m| m.location_id == loc.location_id) else {
                warnings.push(vae_skip_warning(loc));
                continue;
            };
            let mut rng = stream(seed, "vae-generate", u64::from(loc.location_id));
            out.extend(model.generate(&mut rng, default_volume(cfg.vae.n_per_location, loc))?);
        }
        blocks.push((Technique::Vae, out));
    }

    Ok(AugmentedDataset { blocks, warnings })
}

fn vae_skip_warning(loc: &ReferenceLocation) -> String {
    if loc.scans.len() < 2 {
        format!(
            "vae: location {} has {} scan(s), need at least 2; skipped",
            loc.location_id,
            loc.scans.len()
        )
    } else {
        format!("vae: no model for location {}, skipped", loc.location_id)
    }
}

/// Trains one VAE per location that has at least two scans. Locations with
/// fewer are reported in the returned warnings.
pub fn train_location_vaes(db: &FingerprintDatabase, cfg: &VaeConfig) -> Result<(Vec<VaeModel>, Vec<String>)> {
    let universe = db.tower_universe();
    let results: Vec<Result<Option<VaeModel>>> = db
        .locations()
        .par_iter()
        .map(|loc| {
            if loc.scans.len() < 2 {
                return Ok(None);
            }
            let vectors = loc
                .scans
                .iter()
                .map(|s| vectorize(s, universe, loc.location_id))
                .collect::<Result<Vec<_>>>()?;
            train_vae(&vectors, loc.location_id, cfg).map(Some)
        })
        .collect();
    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for (loc, r) in db.locations().iter().zip(results) {
        match r? {
            Some(m) => models.push(m),
            None => warnings.push(vae_skip_warning(loc)),
        }
    }
    Ok((models, warnings))
}

/// Fits distributions and trains VAEs as needed, then runs [`augment_all`].
pub fn augment_database(db: &FingerprintDatabase, cfg: &AugmentConfig) -> Result<AugmentedDataset> {
    cfg.validate()?;
    let fits = if cfg.sampling.enabled {
        fit_database(db)?
    } else {
        Vec::new()
    };
    // augment_all reports every location it skips, so the training warnings
    // would be duplicates.
    let models = if cfg.vae.enabled {
        train_location_vaes(db, &cfg.vae_config())?.0
    } else {
        Vec::new()
    };
    augment_all(db, cfg, &fits, &models)
}
