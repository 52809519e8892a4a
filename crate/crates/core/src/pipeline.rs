//! Experiment orchestration: split, augment the training half, train the
//! localizer with and without augmentation on identical seeds, evaluate both
//! on the same held-out scans.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    augment_database, AugmentConfig, AugmentedDataset, DropRandomConfig, DropThresholdConfig, NoiseConfig,
    SamplingConfig, Technique, TechniqueCounts, VaeAugmentConfig,
};
use crate::db::FingerprintDatabase;
use crate::error::{Error, Result};
use crate::localizer::{
    default_profile, improvement, train_localizer, ErrorReport, HyperProfile, Improvement, LocalizerModel, ProfileKind,
    ReferencePoint,
};
use crate::preprocess::{vectorize_database, FeatureVector};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Leading fraction of each location's scans used for training.
    pub train_fraction: f64,
    /// Fixed number of leading training scans per location; overrides the
    /// fraction when set.
    pub train_scans: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.7,
            train_scans: None,
        }
    }
}

impl SplitConfig {
    pub fn train_count(&self, n: usize) -> usize {
        match self.train_scans {
            Some(k) => k.min(n),
            None => ((n as f64 * self.train_fraction).round() as usize).clamp(1.min(n), n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("split.train_fraction must be in (0,1]".into()));
        }
        if self.train_scans == Some(0) {
            return Err(Error::Config("split.train_scans must be at least 1".into()));
        }
        Ok(())
    }

    /// Temporal split per location: leading scans train, the rest test.
    pub fn apply(&self, db: &FingerprintDatabase) -> (FingerprintDatabase, FingerprintDatabase) {
        db.split_by(|n| self.train_count(n))
    }
}

/// Everything a pipeline run reads from its config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub drop_random: DropRandomConfig,
    pub drop_threshold: DropThresholdConfig,
    pub vae: VaeAugmentConfig,
    pub split: SplitConfig,
    /// Hyperparameters for the `custom` profile.
    pub profile: Option<HyperProfile>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        PipelineConfig {
            seed: aug.seed,
            noise: aug.noise,
            sampling: aug.sampling,
            drop_random: aug.drop_random,
            drop_threshold: aug.drop_threshold,
            vae: aug.vae,
            split: SplitConfig::default(),
            profile: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment().validate()?;
        self.split.validate()?;
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        Ok(())
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed,
            noise: self.noise,
            sampling: self.sampling,
            drop_random: self.drop_random,
            drop_threshold: self.drop_threshold,
            vae: self.vae,
        }
    }

    pub fn set_augment(&mut self, aug: &AugmentConfig) {
        self.seed = aug.seed;
        self.noise = aug.noise;
        self.sampling = aug.sampling;
        self.drop_random = aug.drop_random;
        self.drop_threshold = aug.drop_threshold;
        self.vae = aug.vae;
    }

    /// Hyperparameters for a profile kind; `custom` uses the config's
    /// `profile` table, falling back to the desk defaults.
    pub fn hyper_profile(&self, kind: ProfileKind) -> HyperProfile {
        match kind {
            ProfileKind::Custom => self.profile.unwrap_or_else(|| default_profile(kind)),
            _ => default_profile(kind),
        }
    }

    pub fn classifier_seed(&self) -> u64 {
        derive_seed(self.seed, "localizer", 0)
    }
}

pub fn reference_points(db: &FingerprintDatabase) -> Vec<ReferencePoint> {
    db.locations()
        .iter()
        .map(|l| ReferencePoint {
            location_id: l.location_id,
            x: l.x,
            y: l.y,
        })
        .collect()
}

/// Splits the database and augments the training half.
pub fn augment_training_split(
    db: &FingerprintDatabase,
    cfg: &PipelineConfig,
) -> Result<(AugmentedDataset, FingerprintDatabase)> {
    cfg.validate()?;
    let (train, test) = cfg.split.apply(db);
    let augmented = augment_database(&train, &cfg.augment())?;
    Ok((augmented, test))
}

pub fn test_vectors(test: &FingerprintDatabase) -> Result<Vec<FeatureVector>> {
    let v = vectorize_database(test)?;
    if v.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub profile: HyperProfile,
    pub counts: TechniqueCounts,
    pub train_vectors_without: usize,
    pub train_vectors_with: usize,
    pub test_vectors: usize,
    pub without_augmentation: ErrorReport,
    pub with_augmentation: ErrorReport,
    pub improvement: Improvement,
    pub warnings: Vec<String>,
}

fn train_and_evaluate(
    train: &[FeatureVector],
    test: &[FeatureVector],
    profile: &HyperProfile,
    references: &[ReferencePoint],
    seed: u64,
) -> Result<(LocalizerModel, ErrorReport)> {
    let model = train_localizer(train, profile, references, seed)?;
    let report = model.evaluate(test)?;
    Ok((model, report))
}

/// Trains once on the original training scans and once on the augmented
/// set, with the same classifier seed, and evaluates both on the same test
/// split.
pub fn run_compare(db: &FingerprintDatabase, cfg: &PipelineConfig, profile: &HyperProfile) -> Result<CompareReport> {
    let (augmented, test) = augment_training_split(db, cfg)?;
    let test = test_vectors(&test)?;
    let references = reference_points(db);
    let seed = cfg.classifier_seed();
    let variants = [augmented.select(&[]), augmented.all()];
    let mut reports = variants
        .par_iter()
        .map(|train| train_and_evaluate(train, &test, profile, &references, seed).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let with = reports.pop().expect("two variants");
    let without = reports.pop().expect("two variants");
    Ok(CompareReport {
        seed: cfg.seed,
        profile: *profile,
        counts: augmented.counts(),
        train_vectors_without: variants[0].len(),
        train_vectors_with: variants[1].len(),
        test_vectors: test.len(),
        improvement: improvement(&with, &without),
        without_augmentation: without,
        with_augmentation: with,
        warnings: augmented.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub counts: TechniqueCounts,
    pub baseline: ErrorReport,
    /// Each enabled technique alone on top of the originals.
    pub single: BTreeMap<Technique, ErrorReport>,
    pub combined: ErrorReport,
    pub improvement: Improvement,
}

impl AblationReport {
    pub fn median(&self, t: Technique) -> Option<f64> {
        self.single.get(&t).map(|r| r.percentiles.p50)
    }
}

/// Baseline, every enabled technique alone, and all enabled techniques
/// combined, sharing one augmentation pass and one classifier seed.
pub fn run_ablation(db: &FingerprintDatabase, cfg: &PipelineConfig, profile: &HyperProfile) -> Result<AblationReport> {
    let (augmented, test) = augment_training_split(db, cfg)?;
    let test = test_vectors(&test)?;
    let references = reference_points(db);
    let seed = cfg.classifier_seed();
    let aug_cfg = cfg.augment();
    let enabled: Vec<Technique> = Technique::AUGMENTERS
        .into_iter()
        .filter(|&t| aug_cfg.is_enabled(t))
        .collect();
    let mut variants: Vec<(Option<Technique>, Vec<FeatureVector>)> = vec![(None, augmented.select(&[]))];
    variants.extend(enabled.iter().map(|&t| (Some(t), augmented.select(&[t]))));
    variants.push((None, augmented.all()));
    let reports = variants
        .par_iter()
        .map(|(_, train)| train_and_evaluate(train, &test, profile, &references, seed).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let baseline = reports[0].clone();
    let combined = reports[reports.len() - 1].clone();
    let single = enabled
        .iter()
        .copied()
        .zip(reports[1..reports.len() - 1].iter().cloned())
        .collect();
    Ok(AblationReport {
        seed: cfg.seed,
        counts: augmented.counts(),
        improvement: improvement(&combined, &baseline),
        baseline,
        single,
        combined,
    })
}
