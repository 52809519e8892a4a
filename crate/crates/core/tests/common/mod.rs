//! Oracles shared by the focused test files and the acceptance report.
#![allow(dead_code)]

use cellaug::augment::{augment_sampling, fit_location};
use cellaug::db::Metadata;
use cellaug::distfit::fit_best;
use cellaug::nn::{softmax_cross_entropy, Activation, DenseNetwork, Gradients, LayerSpec, OutputGrad};
use cellaug::preprocess::vectorize;
use cellaug::rng::{seeded, stream};
use cellaug::vae::{train_vae, VaeConfig, VaeModel};
use cellaug::{FeatureVector, FingerprintDatabase, RawScan, ReferenceLocation, TowerId};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-6;

/// Max-norm relative error between two flattened gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn flatten(g: &Gradients) -> Vec<f64> {
    g.weights
        .iter()
        .flat_map(|w| w.iter().copied())
        .chain(g.biases.iter().flat_map(|b| b.iter().copied()))
        .collect()
}

/// Central differences of `f` over every parameter of `net`, in the order
/// used by [`flatten`].
pub fn numeric_gradient(net: &DenseNetwork, f: impl Fn(&DenseNetwork) -> f64) -> Vec<f64> {
    let h = FD_STEP;
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 0..net.weights.len() {
        for idx in ndarray::indices_of(&net.weights[l]) {
            let orig = probe.weights[l][idx];
            probe.weights[l][idx] = orig + h;
            let up = f(&probe);
            probe.weights[l][idx] = orig - h;
            let down = f(&probe);
            probe.weights[l][idx] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    for l in 0..net.biases.len() {
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + h;
            let up = f(&probe);
            probe.biases[l][i] = orig - h;
            let down = f(&probe);
            probe.biases[l][i] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub const HIDDEN: [Activation; 4] = [
    Activation::Relu,
    Activation::Tanh,
    Activation::Sigmoid,
    Activation::Linear,
];
pub const OUTPUT: [Activation; 5] = [
    Activation::Relu,
    Activation::Tanh,
    Activation::Sigmoid,
    Activation::Linear,
    Activation::Softmax,
];

pub fn random_net(rng: &mut impl Rng, output: Activation, dropout: f64) -> DenseNetwork {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=5)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=6));
    }
    let specs: Vec<LayerSpec> = (0..depth)
        .map(|i| {
            let act = if i + 1 == depth {
                output
            } else {
                HIDDEN[rng.random_range(0..HIDDEN.len())]
            };
            LayerSpec::new(dims[i], dims[i + 1], act)
        })
        .collect();
    let mut net = DenseNetwork::init(&specs, rng.random()).unwrap();
    // Non-zero biases keep ReLU units away from the kink at the origin.
    for b in &mut net.biases {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    net.with_dropout(dropout).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Gradient error for a random linear functional of the output. Dropout
/// masks are frozen by reseeding the mask generator on every evaluation.
pub fn activation_gradient_error(net: &DenseNetwork, x: &Array2<f64>, c: &Array2<f64>, mask_seed: u64) -> f64 {
    let loss = |n: &DenseNetwork| {
        let cache = n.forward(x.view(), true, &mut seeded(mask_seed)).unwrap();
        (cache.output() * c).sum()
    };
    let cache = net.forward(x.view(), true, &mut seeded(mask_seed)).unwrap();
    let (grads, _) = net.backward(&cache, OutputGrad::Activation(c.clone())).unwrap();
    relative_error(&flatten(&grads), &numeric_gradient(net, loss))
}

pub fn cross_entropy_gradient_error(net: &DenseNetwork, x: &Array2<f64>, targets: &[usize], mask_seed: u64) -> f64 {
    let loss = |n: &DenseNetwork| {
        let cache = n.forward(x.view(), true, &mut seeded(mask_seed)).unwrap();
        softmax_cross_entropy(cache.logits(), targets).0
    };
    let cache = net.forward(x.view(), true, &mut seeded(mask_seed)).unwrap();
    let (_, g) = softmax_cross_entropy(cache.logits(), targets);
    let (grads, _) = net.backward(&cache, OutputGrad::PreActivation(g)).unwrap();
    relative_error(&flatten(&grads), &numeric_gradient(net, loss))
}

/// Classifier loss on a random softmax network.
pub fn random_cross_entropy_error(rng: &mut impl Rng, trial: u64) -> f64 {
    let dropout = if trial.is_multiple_of(2) { 0.2 } else { 0.0 };
    let net = random_net(rng, Activation::Softmax, dropout);
    let batch = rng.random_range(1..=5);
    let x = random_matrix(rng, batch, net.input_dim());
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..net.output_dim())).collect();
    cross_entropy_gradient_error(&net, &x, &targets, trial)
}

/// VAE loss gradients for a random small model with the reparameterization
/// noise held fixed.
pub fn vae_gradient_error(rng: &mut impl Rng) -> f64 {
    let m = rng.random_range(2..=6);
    let cfg = VaeConfig {
        hidden: rng.random_range(2..=6),
        latent_dim: rng.random_range(1..=4),
        decoder_variance: [1.0, 0.1, 0.01][rng.random_range(0..3)],
        seed: rng.random(),
        ..VaeConfig::default()
    };
    let model = VaeModel::new(0, m, &cfg).unwrap();
    let batch = rng.random_range(1..=4);
    let x = Array2::from_shape_simple_fn((batch, m), || rng.random::<f64>());
    let eps = random_matrix(rng, batch, cfg.latent_dim);
    let (_, grads) = model.loss_and_gradients(x.view(), eps.view()).unwrap();
    let total = |enc: &DenseNetwork, dec: &DenseNetwork| {
        let mut probe = model.clone();
        probe.encoder = enc.clone();
        probe.decoder = dec.clone();
        probe.loss_and_gradients(x.view(), eps.view()).unwrap().0.total
    };
    let enc_num = numeric_gradient(&model.encoder, |e| total(e, &model.decoder));
    let dec_num = numeric_gradient(&model.decoder, |d| total(&model.encoder, d));
    let analytic: Vec<f64> = flatten(&grads.encoder)
        .into_iter()
        .chain(flatten(&grads.decoder))
        .collect();
    let numeric: Vec<f64> = enc_num.into_iter().chain(dec_num).collect();
    relative_error(&analytic, &numeric)
}

pub fn toy_universe() -> Vec<TowerId> {
    ["A", "B", "C"].iter().map(|t| TowerId::new(*t).unwrap()).collect()
}

/// Scans where towers A and B have ASU values with latent correlation `rho`
/// and tower C is never heard.
pub fn correlated_location(n: usize, rho: f64, seed: u64) -> ReferenceLocation {
    let mut rng = stream(seed, "toy", 0);
    let ids = toy_universe();
    let scans = (0..n)
        .map(|i| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let a = 15.5 + 4.5 * z1;
            let b = 15.5 + 4.5 * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            let asu = |v: f64| (v.round() as i64).clamp(1, 31);
            RawScan::new(i as i64, vec![(ids[0].clone(), asu(a)), (ids[1].clone(), asu(b))]).unwrap()
        })
        .collect();
    ReferenceLocation {
        location_id: 0,
        x: 0.0,
        y: 0.0,
        scans,
    }
}

pub fn location_vectors(loc: &ReferenceLocation) -> Vec<FeatureVector> {
    loc.scans
        .iter()
        .map(|s| vectorize(s, &toy_universe(), loc.location_id).unwrap())
        .collect()
}

pub fn correlation(v: &[FeatureVector], i: usize, j: usize) -> f64 {
    let n = v.len() as f64;
    let mi = v.iter().map(|x| x.values[i]).sum::<f64>() / n;
    let mj = v.iter().map(|x| x.values[j]).sum::<f64>() / n;
    let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
    for x in v {
        let (a, b) = (x.values[i] - mi, x.values[j] - mj);
        sij += a * b;
        sii += a * a;
        sjj += b * b;
    }
    sij / (sii * sjj).sqrt()
}

/// (VAE, sampling) correlation between the two correlated towers of a
/// ρ = 0.9 toy location, over 10⁴ generated vectors each.
pub fn joint_structure() -> (f64, f64) {
    let loc = correlated_location(200, 0.9, 17);
    let model = train_vae(&location_vectors(&loc), 0, &VaeConfig::default()).unwrap();
    let vae = model.generate(&mut stream(17, "vae-out", 0), 10_000).unwrap();
    let fits = fit_location(&loc, &toy_universe()).unwrap();
    let sampled = augment_sampling(&loc, &toy_universe(), &fits, &mut stream(17, "sampling-out", 0), 10_000).unwrap();
    (correlation(&vae, 0, 1), correlation(&sampled, 0, 1))
}

pub fn draw_samples<D: Distribution<f64>>(d: D, stage: &str, trial: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(2024, stage, trial);
    d.sample_iter(&mut rng).take(n).collect()
}

/// Trials out of 100 (10⁴ samples each) in which `fit_best` picks `want`.
pub fn selection_hits<D: Distribution<f64> + Copy>(d: D, stage: &str, want: &str) -> usize {
    (0..100)
        .filter(|&t| fit_best(&draw_samples(d, stage, t, 10_000)).unwrap().family.name() == want)
        .count()
}

/// A random valid database: 1–5 locations, 1–5 scans each, random tower
/// ids, ASU values, timestamps and coordinates.
pub fn random_database(rng: &mut impl Rng) -> FingerprintDatabase {
    let n_locs = rng.random_range(1..=5);
    let mut ids: Vec<u32> = (0..n_locs).map(|_| rng.random()).collect();
    ids.sort_unstable();
    ids.dedup();
    let pool: Vec<String> = (0..12)
        .map(|i| format!("{}-{}", (b'A' + i as u8) as char, rng.random::<u16>()))
        .collect();
    let locations = ids
        .into_iter()
        .map(|location_id| {
            let scans = (0..rng.random_range(1..=5))
                .map(|_| {
                    let k = rng.random_range(1..=7);
                    let picks = rand::seq::index::sample(rng, pool.len(), k);
                    let readings = picks
                        .into_iter()
                        .map(|i| (TowerId::new(pool[i].clone()).unwrap(), rng.random_range(0..=31)))
                        .collect();
                    RawScan::new(rng.random(), readings).unwrap()
                })
                .collect();
            ReferenceLocation {
                location_id,
                x: rng.random_range(-1e4..1e4),
                y: rng.random_range(-1e4..1e4),
                scans,
            }
        })
        .collect();
    FingerprintDatabase::new(
        Metadata {
            testbed: format!("random-{}", rng.random::<u32>()),
            grid_cell_m: rng.random_range(0.0..100.0),
        },
        locations,
    )
    .unwrap()
}
