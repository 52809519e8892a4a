//! Multinomial fingerprint classifier over reference locations, decoded to a
//! position by the probability-weighted average of all reference
//! coordinates, and the percentile error report used to compare runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, DenseNetwork, LayerSpec, TrainConfig};
use crate::preprocess::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Indoor,
    Outdoor,
    Custom,
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(ProfileKind::Indoor),
            "outdoor" => Ok(ProfileKind::Outdoor),
            "custom" => Ok(ProfileKind::Custom),
            other => Err(Error::Config(format!("unknown profile {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperProfile {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub hidden_neurons: usize,
    pub hidden_layers: usize,
}

impl HyperProfile {
    pub fn indoor() -> Self {
        HyperProfile {
            learning_rate: 0.001,
            batch_size: 256,
            dropout_rate: 0.10,
            epochs: 260,
            hidden_neurons: 280,
            hidden_layers: 4,
        }
    }

    pub fn outdoor() -> Self {
        HyperProfile {
            learning_rate: 0.005,
            batch_size: 40,
            dropout_rate: 0.10,
            epochs: 500,
            hidden_neurons: 345,
            hidden_layers: 3,
        }
    }

    /// Small network sized for the synthetic desk testbed; the default for
    /// the `custom` profile. The epoch count sits on the plateau of the
    /// non-augmented model's test error with 5 training scans per location.
    pub fn desk() -> Self {
        HyperProfile {
            learning_rate: 0.05,
            batch_size: 32,
            dropout_rate: 0.10,
            epochs: 600,
            hidden_neurons: 64,
            hidden_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.hidden_neurons > 0
            && (0.0..1.0).contains(&self.dropout_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyperparameter profile {self:?}")))
        }
    }

    pub fn layer_specs(&self, input_dim: usize, classes: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = input_dim;
        for _ in 0..self.hidden_layers {
            specs.push(LayerSpec::new(prev, self.hidden_neurons, Activation::Relu));
            prev = self.hidden_neurons;
        }
        specs.push(LayerSpec::new(prev, classes, Activation::Softmax));
        specs
    }
}

pub fn default_profile(kind: ProfileKind) -> HyperProfile {
    match kind {
        ProfileKind::Indoor => HyperProfile::indoor(),
        ProfileKind::Outdoor => HyperProfile::outdoor(),
        ProfileKind::Custom => HyperProfile::desk(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub location_id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerModel {
    pub network: DenseNetwork,
    pub profile: HyperProfile,
    /// Reference locations in classifier output order.
    pub references: Vec<ReferencePoint>,
    pub trace: Vec<f64>,
}

fn to_matrix(vectors: &[FeatureVector], dim: usize) -> Result<Array2<f64>> {
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    Ok(Array2::from_shape_fn((vectors.len(), dim), |(i, j)| {
        vectors[i].values[j]
    }))
}

/// Trains the softmax classifier with the profile's hyperparameters. Every
/// reference point becomes one output class, in the given order.
pub fn train_localizer(
    train: &[FeatureVector],
    profile: &HyperProfile,
    references: &[ReferencePoint],
    seed: u64,
) -> Result<LocalizerModel> {
    profile.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::EmptyDataset);
    };
    let class_of: BTreeMap<u32, usize> = references.iter().enumerate().map(|(i, r)| (r.location_id, i)).collect();
    let targets = train
        .iter()
        .map(|v| {
            class_of
                .get(&v.location_id)
                .copied()
                .ok_or_else(|| Error::Config(format!("label {} has no reference coordinates", v.location_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(Error::SingleClass);
    }
    let dim = first.dim();
    let x = to_matrix(train, dim)?;
    let mut network =
        DenseNetwork::init(&profile.layer_specs(dim, references.len()), seed)?.with_dropout(profile.dropout_rate)?;
    let cfg = TrainConfig {
        learning_rate: profile.learning_rate,
        batch_size: profile.batch_size,
        epochs: profile.epochs,
        seed,
        shuffle: true,
    };
    let trace = nn::train_classifier(&mut network, &x, &targets, &cfg)?;
    Ok(LocalizerModel {
        network,
        profile: *profile,
        references: references.to_vec(),
        trace,
    })
}

/// Σ p_ℓ · coord_ℓ.
pub fn weighted_centroid(probs: &[f64], references: &[ReferencePoint]) -> (f64, f64) {
    probs
        .iter()
        .zip(references)
        .fold((0.0, 0.0), |(x, y), (p, r)| (x + p * r.x, y + p * r.y))
}

impl LocalizerModel {
    pub fn probabilities(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        self.network.predict(&v.values)
    }

    pub fn estimate_location(&self, v: &FeatureVector) -> Result<(f64, f64)> {
        Ok(weighted_centroid(&self.probabilities(v)?, &self.references))
    }

    pub fn estimate_batch(&self, vectors: &[FeatureVector]) -> Result<Vec<(f64, f64)>> {
        let x = to_matrix(vectors, self.network.input_dim())?;
        let probs = self.network.predict_batch(x.view())?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|p| weighted_centroid(&p.to_vec(), &self.references))
            .collect())
    }

    pub fn reference(&self, location_id: u32) -> Option<&ReferencePoint> {
        self.references.iter().find(|r| r.location_id == location_id)
    }

    /// Errors against each test vector's labeled reference coordinates.
    pub fn evaluate(&self, test: &[FeatureVector]) -> Result<ErrorReport> {
        let truth = test
            .iter()
            .map(|v| {
                self.reference(v.location_id)
                    .map(|r| (r.x, r.y))
                    .ok_or_else(|| Error::Config(format!("unknown test label {}", v.location_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let estimates = self.estimate_batch(test)?;
        ErrorReport::from_errors(
            estimates
                .iter()
                .zip(&truth)
                .map(|(e, t)| (e.0 - t.0).hypot(e.1 - t.1))
                .collect(),
        )
    }

    /// Fraction of vectors whose most probable class is their label.
    pub fn accuracy(&self, vectors: &[FeatureVector]) -> Result<f64> {
        let x = to_matrix(vectors, self.network.input_dim())?;
        let probs = self.network.predict_batch(x.view())?;
        let hits = probs
            .rows()
            .into_iter()
            .zip(vectors)
            .filter(|(p, v)| {
                let best = p
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &q)| if q > b.1 { (i, q) } else { b })
                    .0;
                self.references[best].location_id == v.location_id
            })
            .count();
        Ok(hits as f64 / vectors.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: LocalizerModel = nn::load_json(path)?;
        model.network.validate()?;
        if model.network.output_dim() != model.references.len() {
            return Err(Error::InvalidNetwork("output size differs from reference count".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Localization errors in meters, summarized by interpolated percentiles
/// and the empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub percentiles: Percentiles,
    /// Sorted `(error, fraction ≤ error)` pairs.
    pub cdf: Vec<(f64, f64)>,
    pub n: usize,
}

/// Linear interpolation between order statistics at rank `p·(n−1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ErrorReport {
    pub fn from_errors(mut errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::NonFinite("localization error"));
        }
        errors.sort_by(f64::total_cmp);
        let n = errors.len();
        Ok(ErrorReport {
            percentiles: Percentiles {
                p25: percentile(&errors, 0.25),
                p50: percentile(&errors, 0.50),
                p75: percentile(&errors, 0.75),
            },
            cdf: errors
                .iter()
                .enumerate()
                .map(|(i, &e)| (e, (i + 1) as f64 / n as f64))
                .collect(),
            n,
        })
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.cdf.iter().map(|(e, _)| *e)
    }

    pub fn write_cdf_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "error_m,fraction")?;
            for (e, f) in &self.cdf {
                writeln!(out, "{e},{f}")?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Relative improvement at one percentile, or `Exact` when the augmented
/// error is already zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Percent(f64),
    Exact(ExactMarker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactMarker {
    Exact,
}

impl Gain {
    pub fn percent(&self) -> Option<f64> {
        match self {
            Gain::Percent(p) => Some(*p),
            Gain::Exact(_) => None,
        }
    }
}

fn gain(with: f64, without: f64) -> Gain {
    if with == 0.0 {
        Gain::Exact(ExactMarker::Exact)
    } else {
        Gain::Percent((without - with) / with * 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub p25: Gain,
    pub p50: Gain,
    pub p75: Gain,
}

/// `(without − with) / with × 100` per percentile.
pub fn improvement(with_aug: &ErrorReport, without_aug: &ErrorReport) -> Improvement {
    let (w, wo) = (&with_aug.percentiles, &without_aug.percentiles);
    Improvement {
        p25: gain(w.p25, wo.p25),
        p50: gain(w.p50, wo.p50),
        p75: gain(w.p75, wo.p75),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(points: &[(f64, f64)]) -> Vec<ReferencePoint> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| ReferencePoint {
                location_id: i as u32,
                x,
                y,
            })
            .collect()
    }

    #[test]
    fn paper_profiles() {
        let p = default_profile(ProfileKind::Indoor);
        assert_eq!(p.learning_rate, 0.001);
        assert_eq!(p.batch_size, 256);
        assert_eq!((p.hidden_layers, p.hidden_neurons, p.epochs), (4, 280, 260));
        assert_eq!(p.dropout_rate, 0.10);
        let p = default_profile(ProfileKind::Outdoor);
        assert_eq!(p.learning_rate, 0.005);
        assert_eq!(p.batch_size, 40);
        assert_eq!((p.hidden_layers, p.hidden_neurons, p.epochs), (3, 345, 500));
        assert_eq!(p.dropout_rate, 0.10);
    }

    #[test]
    fn indoor_network_shape() {
        let specs = HyperProfile::indoor().layer_specs(17, 55);
        let dims: Vec<usize> = std::iter::once(specs[0].input_dim)
            .chain(specs.iter().map(|s| s.output_dim))
            .collect();
        assert_eq!(dims, vec![17, 280, 280, 280, 280, 55]);
        assert_eq!(specs.last().unwrap().activation, Activation::Softmax);
    }

    #[test]
    fn centroid_hand_cases() {
        let r = refs(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (7.0, 3.0)]);
        assert_eq!(weighted_centroid(&[0.0, 0.0, 0.0, 1.0], &r), (7.0, 3.0));
        let two = refs(&[(0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(weighted_centroid(&[0.5, 0.5], &two), (1.0, 0.0));
        assert_eq!(weighted_centroid(&[0.5, 0.25, 0.25], &r[..3]), (1.0, 1.0));
    }

    #[test]
    fn interpolated_percentiles() {
        let r = ErrorReport::from_errors(vec![4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(r.percentiles.p50, 2.5);
        assert_eq!(r.cdf.first(), Some(&(1.0, 0.25)));
        assert_eq!(r.cdf.last(), Some(&(4.0, 1.0)));
        let z = ErrorReport::from_errors(vec![0.0; 5]).unwrap();
        assert_eq!(
            (z.percentiles.p25, z.percentiles.p50, z.percentiles.p75),
            (0.0, 0.0, 0.0)
        );
        assert!(ErrorReport::from_errors(vec![]).is_err());
    }

    #[test]
    fn improvement_convention() {
        let with = ErrorReport::from_errors(vec![0.77]).unwrap();
        let without = ErrorReport::from_errors(vec![1.98]).unwrap();
        let g = improvement(&with, &without).p50.percent().unwrap();
        assert!((g - 157.0).abs() < 1.0, "{g}");
        let with = ErrorReport::from_errors(vec![89.0]).unwrap();
        let without = ErrorReport::from_errors(vec![134.0]).unwrap();
        let g = improvement(&with, &without).p50.percent().unwrap();
        assert!((g - 50.5).abs() < 0.1, "{g}");
        assert_eq!(improvement(&with, &with).p50, Gain::Percent(0.0));
        let zero = ErrorReport::from_errors(vec![0.0]).unwrap();
        let imp = improvement(&zero, &without);
        assert_eq!(imp.p50, Gain::Exact(ExactMarker::Exact));
        assert_eq!(serde_json::to_string(&imp.p50).unwrap(), "\"exact\"");
    }

    #[test]
    fn single_class_is_rejected() {
        let train = vec![FeatureVector::new(0, vec![0.1, 0.2]); 3];
        let r = refs(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(
            train_localizer(&train, &HyperProfile::desk(), &r, 0),
            Err(Error::SingleClass)
        ));
    }
}
