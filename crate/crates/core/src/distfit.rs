//! Maximum-likelihood fits of Beta, Gamma and Gaussian families to
//! normalized RSS samples, likelihood-based model selection, and sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Samples are clamped into `[BOUNDARY_EPS, 1 - BOUNDARY_EPS]` before the
/// Beta and Gamma fits, whose likelihoods diverge at 0 and 1.
pub const BOUNDARY_EPS: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 100;
/// Convergence threshold on the per-sample score norm.
pub const SCORE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Beta { alpha: f64, beta: f64 },
    Gamma { shape: f64, scale: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    Degenerate { point: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Beta { .. } => "beta",
            Family::Gamma { .. } => "gamma",
            Family::Gaussian { .. } => "gaussian",
            Family::Degenerate { .. } => "degenerate",
        }
    }
}

/// A fitted family with its log-likelihood on the fitting samples. For
/// `Degenerate` fits the log-likelihood is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    #[serde(flatten)]
    pub family: Family,
    pub log_likelihood: f64,
    pub sample_count: usize,
}

impl FittedDistribution {
    pub fn degenerate(point: f64, sample_count: usize) -> Self {
        FittedDistribution {
            family: Family::Degenerate {
                point: point.clamp(0.0, 1.0),
            },
            log_likelihood: 0.0,
            sample_count,
        }
    }

    /// Draws `n` i.i.d. values, each clipped to [0, 1].
    pub fn sample_from<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters are validated at fit time, so construction cannot fail.
        let v = match self.family {
            Family::Beta { alpha, beta } => Beta::new(alpha, beta).expect("valid beta").sample(rng),
            Family::Gamma { shape, scale } => Gamma::new(shape, scale).expect("valid gamma").sample(rng),
            Family::Gaussian { mean, std_dev } => Normal::new(mean, std_dev).expect("valid normal").sample(rng),
            Family::Degenerate { point } => point,
        };
        v.clamp(0.0, 1.0)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn all_identical(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

fn require_samples(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::TooFewSamples { got: xs.len(), need: 2 });
    }
    if all_identical(xs) {
        return Err(Error::ZeroVariance);
    }
    Ok(())
}

/// Trigamma function ψ'(x) for x > 0: recurrence up to x ≥ 10, then the
/// asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))))
}

pub fn gaussian_log_likelihood(xs: &[f64], mean: f64, std_dev: f64) -> f64 {
    let var = std_dev * std_dev;
    let c = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    xs.iter().map(|x| c - (x - mean).powi(2) / (2.0 * var)).sum()
}

pub fn gamma_log_likelihood(xs: &[f64], shape: f64, scale: f64) -> f64 {
    let c = -shape * scale.ln() - ln_gamma(shape);
    xs.iter().map(|&x| c + (shape - 1.0) * x.ln() - x / scale).sum()
}

pub fn beta_log_likelihood(xs: &[f64], alpha: f64, beta: f64) -> f64 {
    let c = ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta);
    xs.iter()
        .map(|&x| c + (alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln())
        .sum()
}

pub fn fit_gaussian(xs: &[f64]) -> Result<FittedDistribution> {
    require_samples(xs)?;
    let mu = mean(xs);
    let sigma = population_variance(xs, mu).sqrt();
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(FittedDistribution {
        family: Family::Gaussian {
            mean: mu,
            std_dev: sigma,
        },
        log_likelihood: gaussian_log_likelihood(xs, mu, sigma),
        sample_count: xs.len(),
    })
}

/// Gamma MLE. With the scale profiled out (θ = x̄/k) the score reduces to
/// `ln k − ψ(k) − (ln x̄ − mean ln x)`, solved by Newton's method.
pub fn fit_gamma(xs: &[f64]) -> Result<FittedDistribution> {
    if let Some(&bad) = xs.iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::NonPositiveSample(bad));
    }
    require_samples(xs)?;
    let m = mean(xs);
    let mean_log = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
    let s = m.ln() - mean_log;
    if s <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let score = |k: f64| k.ln() - digamma(k) - s;

    // Minka's closed-form approximation as the starting point.
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let mut g = score(k);
    let mut iterations = 0;
    while g.abs() >= SCORE_TOLERANCE {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                solver: "gamma newton",
                iterations,
                score: g.abs(),
            });
        }
        let step = g / (1.0 / k - trigamma(k));
        let next = k - step;
        k = if next > 0.0 { next } else { 0.5 * k };
        g = score(k);
        iterations += 1;
    }
    let scale = m / k;
    Ok(FittedDistribution {
        family: Family::Gamma { shape: k, scale },
        log_likelihood: gamma_log_likelihood(xs, k, scale),
        sample_count: xs.len(),
    })
}

/// Method-of-moments Beta parameters for a given mean and variance; falls
/// back to (1, 1) when the variance is too large for a Beta.
pub fn beta_moments_init(m: f64, v: f64) -> (f64, f64) {
    let common = m * (1.0 - m) / v - 1.0;
    if common > 0.0 && common.is_finite() {
        (m * common, (1.0 - m) * common)
    } else {
        (1.0, 1.0)
    }
}

/// Per-sample score of the Beta log-likelihood.
pub fn beta_score(alpha: f64, beta: f64, mean_log: f64, mean_log1m: f64) -> (f64, f64) {
    let psi_sum = digamma(alpha + beta);
    (
        psi_sum - digamma(alpha) + mean_log,
        psi_sum - digamma(beta) + mean_log1m,
    )
}

/// Beta MLE by two-dimensional Newton iteration from the moment estimates,
/// with step halving to stay in the positive quadrant and keep the
/// (concave) log-likelihood non-decreasing.
pub fn fit_beta(xs: &[f64]) -> Result<FittedDistribution> {
    if let Some(&bad) = xs.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::OutsideUnitInterval(bad));
    }
    require_samples(xs)?;
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut a, mut b) = beta_moments_init(m, population_variance(xs, m));
    let mean_log = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let mean_log1m = xs.iter().map(|x| (1.0 - x).ln()).sum::<f64>() / n;
    let objective =
        |a: f64, b: f64| ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * mean_log + (b - 1.0) * mean_log1m;

    let mut g = beta_score(a, b, mean_log, mean_log1m);
    let mut iterations = 0;
    while g.0.hypot(g.1) >= SCORE_TOLERANCE {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                solver: "beta newton",
                iterations,
                score: g.0.hypot(g.1),
            });
        }
        let t_sum = trigamma(a + b);
        let h11 = t_sum - trigamma(a);
        let h22 = t_sum - trigamma(b);
        let h12 = t_sum;
        let det = h11 * h22 - h12 * h12;
        let da = -(h22 * g.0 - h12 * g.1) / det;
        let db = -(h11 * g.1 - h12 * g.0) / det;

        let current = objective(a, b);
        let mut t = 1.0;
        loop {
            let (na, nb) = (a + t * da, b + t * db);
            if na > 0.0 && nb > 0.0 && objective(na, nb) >= current - 1e-12 * current.abs() {
                a = na;
                b = nb;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::NoConvergence {
                    solver: "beta newton line search",
                    iterations,
                    score: g.0.hypot(g.1),
                });
            }
        }
        g = beta_score(a, b, mean_log, mean_log1m);
        iterations += 1;
    }
    Ok(FittedDistribution {
        family: Family::Beta { alpha: a, beta: b },
        log_likelihood: beta_log_likelihood(xs, a, b),
        sample_count: xs.len(),
    })
}

pub fn clamp_to_open_unit(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| x.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)).collect()
}

/// Every family fit attempted by [`fit_best`], in the order Beta, Gamma,
/// Gaussian. Beta and Gamma see boundary-clamped samples.
pub fn fit_candidates(xs: &[f64]) -> Vec<Result<FittedDistribution>> {
    let clamped = clamp_to_open_unit(xs);
    vec![fit_beta(&clamped), fit_gamma(&clamped), fit_gaussian(xs)]
}

/// Highest-likelihood family among those that fit; `Degenerate` for one
/// sample, constant samples, or when every family fails.
pub fn fit_best(xs: &[f64]) -> Result<FittedDistribution> {
    if xs.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    if xs.len() == 1 || all_identical(xs) {
        return Ok(FittedDistribution::degenerate(xs[0], xs.len()));
    }
    let best = fit_candidates(xs)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|f| f.log_likelihood.is_finite())
        .fold(None::<FittedDistribution>, |best, f| match best {
            Some(b) if b.log_likelihood >= f.log_likelihood => Some(b),
            _ => Some(f),
        });
    Ok(best.unwrap_or_else(|| FittedDistribution::degenerate(mean(xs), xs.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn trigamma_matches_derivative_of_digamma() {
        for &x in &[0.3, 1.0, 2.5, 7.0, 40.0] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() / fd < 1e-7, "x={x}");
        }
        // ψ'(1) = π²/6
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
    }

    #[test]
    fn gaussian_two_point() {
        let f = fit_gaussian(&[0.4, 0.6]).unwrap();
        match f.family {
            Family::Gaussian { mean, std_dev } => {
                assert!((mean - 0.5).abs() < 1e-15);
                assert!((std_dev - 0.1).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert!(matches!(fit_gaussian(&[0.3, 0.3]), Err(Error::ZeroVariance)));
        assert!(matches!(fit_gaussian(&[0.3]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn gamma_rejects_bad_input() {
        assert!(matches!(fit_gamma(&[0.0, 0.2, 0.3]), Err(Error::NonPositiveSample(_))));
        assert!(fit_gamma(&[0.4; 5]).is_err());
    }

    #[test]
    fn beta_moments_example() {
        let (a, b) = beta_moments_init(0.5, 0.05);
        assert!((a - 2.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        let c = clamp_to_open_unit(&[0.999999; 4]);
        assert!(matches!(fit_beta(&c), Err(Error::ZeroVariance)));
        assert!(matches!(fit_beta(&[0.0, 0.5]), Err(Error::OutsideUnitInterval(_))));
    }

    #[test]
    fn fit_best_degenerate_cases() {
        let f = fit_best(&[0.5; 10]).unwrap();
        assert_eq!(f.family, Family::Degenerate { point: 0.5 });
        assert!(fit_best(&[]).is_err());
        let f = fit_best(&[0.3]).unwrap();
        assert_eq!(f.family, Family::Degenerate { point: 0.3 });
    }

    #[test]
    fn degenerate_sampling_repeats_point() {
        let mut rng = seeded(1);
        let f = FittedDistribution::degenerate(0.7, 3);
        assert_eq!(f.sample_from(&mut rng, 3), vec![0.7, 0.7, 0.7]);
    }

    #[test]
    fn small_sample_fits_converge() {
        // Five-scan locations are the common case in the pipeline.
        let xs = [3.0 / 31.0, 4.0 / 31.0, 4.0 / 31.0, 6.0 / 31.0, 5.0 / 31.0];
        for f in fit_candidates(&xs) {
            let f = f.unwrap();
            assert!(f.log_likelihood.is_finite());
        }
        let xs = [1.0 / 31.0, 1.0 / 31.0, 2.0 / 31.0];
        assert!(fit_best(&xs).unwrap().log_likelihood.is_finite());
    }
}
