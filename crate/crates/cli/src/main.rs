//! `cellaug`: synth → preprocess → fit-dist → augment → train → evaluate →
//! compare, with JSON reports, CSV CDFs and a run manifest.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use cellaug::augment::{fit_database, AugmentedDataset, Technique, TechniqueCounts};
use cellaug::distfit::FittedDistribution;
use cellaug::localizer::{train_localizer, HyperProfile, LocalizerModel, ProfileKind};
use cellaug::pipeline::{augment_training_split, reference_points, run_compare, test_vectors, PipelineConfig};
use cellaug::preprocess::vectorize_database;
use cellaug::synth::{generate, TestbedSpec};
use cellaug::{load_database, save_database, FeatureVector, FingerprintDatabase};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "cellaug",
    version,
    about = "Cellular fingerprint augmentation and localization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the seed in the config or testbed spec.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML pipeline config (augmenters, split, custom profile).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (synth, preprocess, fit-dist) or directory (other commands).
    #[arg(long)]
    out: PathBuf,
    /// Classifier hyperparameters: indoor, outdoor or custom.
    #[arg(long, default_value = "custom")]
    profile: ProfileKind,
}

#[derive(Args)]
struct DbArg {
    /// Fingerprint database (JSON lines, one scan per line).
    #[arg(long)]
    db: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fingerprint database.
    Synth {
        /// TOML testbed spec; the built-in desk testbed when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert scans to normalized feature vectors.
    Preprocess {
        #[command(flatten)]
        db: DbArg,
        /// Which scans to convert.
        #[arg(long, value_enum, default_value = "all")]
        split: Part,
        #[command(flatten)]
        common: Common,
    },
    /// Fit per-tower distributions on the training split.
    FitDist {
        #[command(flatten)]
        db: DbArg,
        #[command(flatten)]
        common: Common,
    },
    /// Augment the training split with the enabled techniques.
    Augment {
        #[command(flatten)]
        db: DbArg,
        #[command(flatten)]
        common: Common,
    },
    /// Train a localizer on the (augmented) training split.
    Train {
        #[command(flatten)]
        db: DbArg,
        /// Vector file from `augment`; augments in-process when omitted.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Train on the original scans only.
        #[arg(long)]
        originals_only: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained localizer on the test split.
    Evaluate {
        #[command(flatten)]
        db: DbArg,
        /// Model file from `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train with and without augmentation and compare test errors.
    Compare {
        #[command(flatten)]
        db: DbArg,
        #[command(flatten)]
        common: Common,
    },
}

/// Bad user input detected by the CLI itself.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|cause| {
        cause.is::<ConfigError>()
            || cause
                .downcast_ref::<cellaug::Error>()
                .is_some_and(cellaug::Error::is_config)
    });
    if config {
        2
    } else {
        1
    }
}

#[derive(Serialize, Deserialize)]
struct TaggedVector {
    technique: Technique,
    location_id: u32,
    values: Vec<f64>,
}

/// Feature vectors with the tower order that indexes them.
#[derive(Serialize, Deserialize)]
struct VectorFile {
    towers: Vec<String>,
    vectors: Vec<TaggedVector>,
}

impl VectorFile {
    fn new(db: &FingerprintDatabase, blocks: &[(Technique, Vec<FeatureVector>)]) -> Self {
        VectorFile {
            towers: tower_names(db),
            vectors: blocks
                .iter()
                .flat_map(|(t, vs)| {
                    vs.iter().map(|v| TaggedVector {
                        technique: *t,
                        location_id: v.location_id,
                        values: v.values.clone(),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct StageTiming {
    stage: &'static str,
    seconds: f64,
}

#[derive(Serialize)]
struct DatasetSizes {
    train_scans: usize,
    test_scans: usize,
    before_augmentation: usize,
    after_augmentation: usize,
    per_technique: TechniqueCounts,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    seed: u64,
    config: PipelineConfig,
    profile: Option<HyperProfile>,
    stages: Vec<StageTiming>,
    sizes: Option<DatasetSizes>,
    warnings: Vec<String>,
    outputs: Vec<PathBuf>,
}

/// Collects stage timings and output paths for the manifest.
struct Run {
    command: &'static str,
    out: PathBuf,
    stages: Vec<StageTiming>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            stages: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce() -> cellaug::Result<T>) -> Result<T> {
        let t = Instant::now();
        let value = f().with_context(|| format!("stage {stage} failed"))?;
        self.stages.push(StageTiming {
            stage,
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(value)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)?;
        self.outputs.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, report: &cellaug::localizer::ErrorReport) -> Result<()> {
        let path = self.path(name);
        report.write_cdf_csv(&path)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(
        mut self,
        cfg: &PipelineConfig,
        profile: Option<HyperProfile>,
        sizes: Option<DatasetSizes>,
        warnings: Vec<String>,
    ) -> Result<()> {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        let manifest = RunManifest {
            command: self.command,
            seed: cfg.seed,
            config: *cfg,
            profile,
            stages: std::mem::take(&mut self.stages),
            sizes,
            warnings,
            outputs: std::mem::take(&mut self.outputs),
        };
        write_json(&self.path("manifest.json"), &manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_vectors(path: &Path, file: &VectorFile) -> Result<()> {
    create_parent(path)?;
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut out = BufWriter::new(f);
    serde_json::to_writer(&mut out, file)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn read_vectors(path: &Path) -> Result<VectorFile> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn tower_names(db: &FingerprintDatabase) -> Vec<String> {
    db.tower_universe().iter().map(|t| t.as_str().to_owned()).collect()
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sizes(train: &FingerprintDatabase, test: &FingerprintDatabase, counts: TechniqueCounts) -> DatasetSizes {
    DatasetSizes {
        train_scans: train.scan_count(),
        test_scans: test.scan_count(),
        before_augmentation: counts.original,
        after_augmentation: counts.total(),
        per_technique: counts,
    }
}

fn cmd_synth(spec: Option<&Path>, common: &Common) -> Result<()> {
    let mut spec = match spec {
        Some(path) => TestbedSpec::load(path)?,
        None => TestbedSpec::default_desk(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let db = generate(&spec)?;
    create_parent(&common.out)?;
    save_database(&db, &common.out)?;
    eprintln!(
        "{} locations, {} scans, {} towers → {}",
        db.locations().len(),
        db.scan_count(),
        db.tower_universe().len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_preprocess(db_path: &Path, part: Part, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let db = load_database(db_path)?;
    let (train, test) = cfg.split.apply(&db);
    let selected = match part {
        Part::All => &db,
        Part::Train => &train,
        Part::Test => &test,
    };
    let vectors = vectorize_database(selected)?;
    write_vectors(&common.out, &VectorFile::new(&db, &[(Technique::Original, vectors)]))
}

#[derive(Serialize)]
struct TowerFit {
    tower: String,
    #[serde(flatten)]
    fit: FittedDistribution,
}

#[derive(Serialize)]
struct LocationFitReport {
    location_id: u32,
    fits: Vec<TowerFit>,
}

fn cmd_fit_dist(db_path: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let db = load_database(db_path)?;
    let (train, _) = cfg.split.apply(&db);
    let fits = fit_database(&train)?;
    let towers = tower_names(&db);
    let report: Vec<LocationFitReport> = train
        .locations()
        .iter()
        .zip(fits)
        .map(|(loc, fits)| LocationFitReport {
            location_id: loc.location_id,
            fits: towers
                .iter()
                .zip(fits)
                .filter_map(|(t, f)| f.map(|fit| TowerFit { tower: t.clone(), fit }))
                .collect(),
        })
        .collect();
    create_parent(&common.out)?;
    write_json(&common.out, &report)
}

#[derive(Serialize)]
struct CountsReport {
    train_scans: usize,
    counts: TechniqueCounts,
    total: usize,
    warnings: Vec<String>,
}

fn cmd_augment(db_path: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut run = Run::start("augment", &common.out)?;
    let db = run.stage("load", || load_database(db_path))?;
    let (augmented, test) = run.stage("augment", || augment_training_split(&db, &cfg))?;
    let (train, _) = cfg.split.apply(&db);
    let counts = augmented.counts();

    let vectors = run.path("vectors.json");
    write_vectors(&vectors, &VectorFile::new(&db, &augmented.blocks))?;
    run.outputs.push(vectors);
    run.json(
        "counts.json",
        &CountsReport {
            train_scans: train.scan_count(),
            counts,
            total: counts.total(),
            warnings: augmented.warnings.clone(),
        },
    )?;
    run.finish(&cfg, None, Some(sizes(&train, &test, counts)), augmented.warnings)
}

/// Training vectors from a vector file, checked against the database's tower
/// order.
fn vectors_from_file(path: &Path, db: &FingerprintDatabase, originals_only: bool) -> Result<AugmentedDataset> {
    let file = read_vectors(path)?;
    if file.towers != tower_names(db) {
        return Err(ConfigError(format!("{}: tower list does not match the database", path.display())).into());
    }
    let mut blocks: Vec<(Technique, Vec<FeatureVector>)> = Vec::new();
    for v in file.vectors {
        if originals_only && v.technique != Technique::Original {
            continue;
        }
        let vector = FeatureVector::new(v.location_id, v.values);
        match blocks.last_mut() {
            Some((t, block)) if *t == v.technique => block.push(vector),
            _ => blocks.push((v.technique, vec![vector])),
        }
    }
    Ok(AugmentedDataset {
        blocks,
        warnings: Vec::new(),
    })
}

fn cmd_train(db_path: &Path, vectors: Option<&Path>, originals_only: bool, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let profile = cfg.hyper_profile(common.profile);
    let mut run = Run::start("train", &common.out)?;
    let db = run.stage("load", || load_database(db_path))?;
    let (train, test) = cfg.split.apply(&db);
    let augmented = match vectors {
        Some(path) => vectors_from_file(path, &db, originals_only)?,
        None => {
            let (aug, _) = run.stage("augment", || augment_training_split(&db, &cfg))?;
            if originals_only {
                AugmentedDataset {
                    blocks: vec![(Technique::Original, aug.select(&[]))],
                    warnings: aug.warnings,
                }
            } else {
                aug
            }
        }
    };
    let train_vectors = augmented.all();
    let references = reference_points(&db);
    let model = run.stage("train", || {
        train_localizer(&train_vectors, &profile, &references, cfg.classifier_seed())
    })?;
    let path = run.path("model.json");
    model.save(&path)?;
    run.outputs.push(path);
    let counts = augmented.counts();
    run.finish(
        &cfg,
        Some(profile),
        Some(sizes(&train, &test, counts)),
        augmented.warnings,
    )
}

fn cmd_evaluate(db_path: &Path, model_path: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut run = Run::start("evaluate", &common.out)?;
    let db = run.stage("load", || load_database(db_path))?;
    let model = run.stage("load-model", || LocalizerModel::load(model_path))?;
    let (_, test) = cfg.split.apply(&db);
    let report = run.stage("evaluate", || model.evaluate(&test_vectors(&test)?))?;
    run.json("report.json", &report)?;
    run.csv("cdf.csv", &report)?;
    eprintln!(
        "p25 {:.3} m, p50 {:.3} m, p75 {:.3} m over {} test scans",
        report.percentiles.p25, report.percentiles.p50, report.percentiles.p75, report.n
    );
    run.finish(&cfg, Some(model.profile), None, Vec::new())
}

fn cmd_compare(db_path: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let profile = cfg.hyper_profile(common.profile);
    let mut run = Run::start("compare", &common.out)?;
    let db = run.stage("load", || load_database(db_path))?;
    let report = run.stage("compare", || run_compare(&db, &cfg, &profile))?;
    run.json("compare.json", &report)?;
    run.csv("cdf_without.csv", &report.without_augmentation)?;
    run.csv("cdf_with.csv", &report.with_augmentation)?;
    eprintln!(
        "median error: {:.3} m without, {:.3} m with augmentation",
        report.without_augmentation.percentiles.p50, report.with_augmentation.percentiles.p50
    );
    let (train, test) = cfg.split.apply(&db);
    let sizes = sizes(&train, &test, report.counts);
    run.finish(&cfg, Some(profile), Some(sizes), report.warnings)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, common } => cmd_synth(spec.as_deref(), &common),
        Command::Preprocess { db, split, common } => cmd_preprocess(&db.db, split, &common),
        Command::FitDist { db, common } => cmd_fit_dist(&db.db, &common),
        Command::Augment { db, common } => cmd_augment(&db.db, &common),
        Command::Train {
            db,
            vectors,
            originals_only,
            common,
        } => cmd_train(&db.db, vectors.as_deref(), originals_only, &common),
        Command::Evaluate { db, model, common } => cmd_evaluate(&db.db, &model, &common),
        Command::Compare { db, common } => cmd_compare(&db.db, &common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
