//! Per-location variational autoencoder over feature vectors.
//!
//! Encoder `m → hidden (tanh) → 2·latent (linear)` produces the posterior
//! mean and log-variance; decoder `latent → hidden (tanh) → m (sigmoid)`
//! produces the mean of a Gaussian observation model with fixed variance.
//! Loss per sample is `‖x − x̂‖² / (2·variance) + KL(q(z|x) ‖ N(0, I))` with a
//! single reparameterized draw of `z`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{epoch_batches, gather_rows, Activation, DenseNetwork, Gradients, LayerSpec, OutputGrad};
use crate::preprocess::FeatureVector;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub latent_dim: usize,
    /// Fixed variance of the Gaussian observation model.
    pub decoder_variance: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 3000,
            learning_rate: 0.001,
            hidden: 10,
            latent_dim: 5,
            decoder_variance: 0.01,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.learning_rate, self.decoder_variance]
            .iter()
            .any(|x| !x.is_finite() || *x <= 0.0)
        {
            return Err(Error::Config(
                "vae learning rate and decoder variance must be positive".into(),
            ));
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::Config("vae layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub location_id: u32,
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
    pub latent_dim: usize,
    pub decoder_variance: f64,
    pub trace: Vec<f64>,
}

/// KL(N(μ, diag σ²) ‖ N(0, I)) = Σ ½(σ² + μ² − 1 − ln σ²).
pub fn kl_to_standard_normal(mu: &[f64], log_var: &[f64]) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// Gradients of the batch-mean loss for the encoder and decoder.
#[derive(Debug, Clone)]
pub struct VaeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl VaeModel {
    pub fn new(location_id: u32, input_dim: usize, cfg: &VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = DenseNetwork::init(
            &[
                LayerSpec::new(input_dim, cfg.hidden, Activation::Tanh),
                LayerSpec::new(cfg.hidden, 2 * cfg.latent_dim, Activation::Linear),
            ],
            crate::rng::derive_seed(cfg.seed, "vae-encoder", u64::from(location_id)),
        )?;
        let decoder = DenseNetwork::init(
            &[
                LayerSpec::new(cfg.latent_dim, cfg.hidden, Activation::Tanh),
                LayerSpec::new(cfg.hidden, input_dim, Activation::Sigmoid),
            ],
            crate::rng::derive_seed(cfg.seed, "vae-decoder", u64::from(location_id)),
        )?;
        Ok(VaeModel {
            location_id,
            encoder,
            decoder,
            latent_dim: cfg.latent_dim,
            decoder_variance: cfg.decoder_variance,
            trace: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Batch-mean loss and exact gradients for a fixed noise draw `eps`
    /// (one row per sample, `latent_dim` columns).
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, eps: ArrayView2<f64>) -> Result<(VaeLoss, VaeGradients)> {
        let d = self.latent_dim;
        let batch = x.nrows() as f64;
        let mut no_rng = crate::rng::seeded(0);
        let enc = self.encoder.forward(x, false, &mut no_rng)?;
        let stats = enc.output();
        let mu = stats.slice(s![.., ..d]);
        let log_var = stats.slice(s![.., d..]);
        let sigma = log_var.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&sigma * &eps);
        let dec = self.decoder.forward(z.view(), false, &mut no_rng)?;
        let recon = dec.output();

        let diff = recon - &x;
        let reconstruction = diff.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.decoder_variance) / batch;
        let kl = Zip::from(&mu)
            .and(&log_var)
            .fold(0.0, |acc, &m, &lv| acc + 0.5 * (lv.exp() + m * m - 1.0 - lv))
            / batch;
        let loss = VaeLoss {
            reconstruction,
            kl,
            total: reconstruction + kl,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite("vae loss"));
        }

        let d_recon = diff / (self.decoder_variance * batch);
        let (dec_grads, dz) = self.decoder.backward(&dec, OutputGrad::Activation(d_recon))?;
        let d_mu = &dz + &(&mu / batch);
        let d_log_var = &dz * &(&sigma * &eps) * 0.5 + &(log_var.mapv(|v| v.exp() - 1.0) * (0.5 / batch));
        let d_stats = concatenate(Axis(1), &[d_mu.view(), d_log_var.view()]).expect("same rows");
        let (enc_grads, _) = self.encoder.backward(&enc, OutputGrad::Activation(d_stats))?;
        Ok((
            loss,
            VaeGradients {
                encoder: enc_grads,
                decoder: dec_grads,
            },
        ))
    }

    /// Loss of a single vector with one fresh reparameterized draw.
    pub fn loss<R: Rng + ?Sized>(&self, x: &FeatureVector, rng: &mut R) -> Result<VaeLoss> {
        if x.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.dim(),
            });
        }
        let xv = ArrayView2::from_shape((1, x.dim()), &x.values).expect("row");
        let eps = Array2::from_shape_simple_fn((1, self.latent_dim), || rng.sample(StandardNormal));
        Ok(self.loss_and_gradients(xv, eps.view())?.0)
    }

    /// Decodes `n` standard-normal latent draws into feature vectors clipped
    /// to [0, 1].
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<FeatureVector>> {
        if n == 0 {
            return Err(Error::Config("generate requires n >= 1".into()));
        }
        let z = Array2::from_shape_simple_fn((n, self.latent_dim), || rng.sample(StandardNormal));
        let out = self.decoder.predict_batch(z.view())?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| FeatureVector::new(self.location_id, r.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
            .collect())
    }
}

/// Full batch for small locations, otherwise mini-batches of 32.
pub fn vae_batch_size(n: usize) -> usize {
    if n <= 64 {
        n
    } else {
        32
    }
}

/// Trains one VAE on the vectors of a single location with plain SGD.
pub fn train_vae(vectors: &[FeatureVector], location_id: u32, cfg: &VaeConfig) -> Result<VaeModel> {
    if vectors.len() < 2 {
        return Err(Error::TooFewSamples {
            got: vectors.len(),
            need: 2,
        });
    }
    let m = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: v.dim(),
        });
    }
    let data = Array2::from_shape_fn((vectors.len(), m), |(i, j)| vectors[i].values[j]);
    let mut model = VaeModel::new(location_id, m, cfg)?;
    let mut order_rng = stream(cfg.seed, "vae-shuffle", u64::from(location_id));
    let mut noise_rng = stream(cfg.seed, "vae-noise", u64::from(location_id));
    let batch_size = vae_batch_size(vectors.len());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(data.nrows(), batch_size, true, &mut order_rng) {
            let x = gather_rows(&data, &batch);
            let eps = Array2::from_shape_simple_fn((batch.len(), cfg.latent_dim), || noise_rng.sample(StandardNormal));
            let (loss, grads) = match model.loss_and_gradients(x.view(), eps.view()) {
                Ok(v) => v,
                Err(_) => {
                    trace.push(f64::NAN);
                    return Err(Error::Divergence { epoch, trace });
                }
            };
            total += loss.total * batch.len() as f64;
            let ok = model.encoder.sgd_step(&grads.encoder, cfg.learning_rate).is_ok()
                && model.decoder.sgd_step(&grads.decoder, cfg.learning_rate).is_ok();
            if !ok {
                trace.push(f64::NAN);
                return Err(Error::Divergence { epoch, trace });
            }
        }
        trace.push(total / data.nrows() as f64);
    }
    model.trace = trace;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeBundle {
    pub models: Vec<VaeModel>,
}

impl VaeBundle {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::nn::save_json(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bundle: VaeBundle = crate::nn::load_json(path)?;
        for m in &bundle.models {
            m.encoder.validate()?;
            m.decoder.validate()?;
        }
        Ok(bundle)
    }
}
