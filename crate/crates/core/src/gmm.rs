//! Gaussian-mixture position heads: parameters, sampling, likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{row_nll, softplus_floor};
use crate::scalar::Real;

/// Number of mixture components emitted per decode step.
pub const NUM_MIXTURES: usize = 5;

/// Diagonal 2-D Gaussian mixture over a target position.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    pub means: Vec<[T; 2]>,
    pub stds: Vec<[T; 2]>,
    pub weights: Vec<T>,
}

impl<T: Real> GmmParams<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Decodes one raw head row `[mu_x(K), mu_y(K), s_x(K), s_y(K), logits(K)]`,
    /// multiplying means and stds by `scale`.
    pub fn from_raw(row: &[T], k: usize, scale: T) -> Self {
        let logits = &row[4 * k..5 * k];
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        Self {
            means: (0..k).map(|j| [row[j] * scale, row[k + j] * scale]).collect(),
            stds: (0..k)
                .map(|j| {
                    [
                        softplus_floor(row[2 * k + j]).0 * scale,
                        softplus_floor(row[3 * k + j]).0 * scale,
                    ]
                })
                .collect(),
            weights: exps.into_iter().map(|e| e / sum).collect(),
        }
    }

    /// Index of the heaviest component, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn mixture_mean(&self) -> [T; 2] {
        let mut m = [T::zero(); 2];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m[0] += *w * mu[0];
            m[1] += *w * mu[1];
        }
        m
    }

    pub fn is_valid(&self, tol: T) -> bool {
        let sum: T = self.weights.iter().copied().sum();
        (sum - T::one()).abs() <= tol
            && self.weights.iter().all(|&w| w >= T::zero())
            && self.stds.iter().all(|s| s[0] > T::zero() && s[1] > T::zero())
    }
}

/// Randomness control for drawing positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn deterministic() -> Self {
        Self {
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::deterministic()
    }
}

/// Draws a position. At temperature zero returns the heaviest component's mean;
/// otherwise picks a component from `w^(1/T)` and samples `N(mean, T * std)`.
pub fn gmm_sample<T: Real, R: Rng + ?Sized>(params: &GmmParams<T>, temperature: f64, rng: &mut R) -> [T; 2] {
    if temperature <= 0.0 {
        return params.means[params.argmax()];
    }
    let inv_t = 1.0 / temperature;
    let logw: Vec<f64> = params
        .weights
        .iter()
        .map(|w| w.as_f64().max(f64::MIN_POSITIVE).ln() * inv_t)
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sharp: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = sharp.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut k = sharp.len() - 1;
    for (i, s) in sharp.iter().enumerate() {
        if u < *s {
            k = i;
            break;
        }
        u -= s;
    }
    let zx: f64 = StandardNormal.sample(rng);
    let zy: f64 = StandardNormal.sample(rng);
    let t = T::lit(temperature);
    [
        params.means[k][0] + t * params.stds[k][0] * T::lit(zx),
        params.means[k][1] + t * params.stds[k][1] * T::lit(zy),
    ]
}

/// `-log sum_k w_k N(target; mean_k, diag(std_k^2))`, stabilized with log-sum-exp.
pub fn gmm_nll<T: Real>(params: &GmmParams<T>, target: [T; 2]) -> T {
    let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    let terms: Vec<T> = (0..params.components())
        .map(|j| {
            let [sx, sy] = params.stds[j];
            let zx = (target[0] - params.means[j][0]) / sx;
            let zy = (target[1] - params.means[j][1]) / sy;
            params.weights[j].ln() - ln_2pi - sx.ln() - sy.ln() - half * (zx * zx + zy * zy)
        })
        .collect();
    let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return T::infinity();
    }
    -(max + terms.iter().map(|&a| (a - max).exp()).sum::<T>().ln())
}

/// Likelihood of one raw head row, shared with the tape's fused op.
pub fn raw_row_nll<T: Real>(row: &[T], target: [T; 2], k: usize) -> T {
    let mut scratch = vec![T::zero(); k];
    row_nll(row, target, k, &mut scratch).0
}
