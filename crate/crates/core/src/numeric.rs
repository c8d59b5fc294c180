//! Numeric kernels shared by every actor: dense embeddings, labelled RNG
//! streams, Xavier initialization, Adam and Laplace sampling.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 64;

/// Dense real vector of fixed dimension.
#[derive(Clone, PartialEq, Default)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    /// `self += scale * other`, left to right.
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    /// `self += other`, left to right.
    pub fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }

    /// Elementwise `self * factor`.
    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|x| x * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for Embedding {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Embedding {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 / sqrt(degree)`, the factor used by symmetric degree normalization.
#[inline]
pub fn inv_sqrt(degree: usize) -> f64 {
    1.0 / (degree as f64).sqrt()
}

/// Labelled deterministic random stream.
///
/// The stream key is derived from `(seed, label)` by SHA-256, so each actor
/// owns a reproducible sequence regardless of the order in which actors are
/// scheduled.
#[derive(Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        RngStream {
            seed,
            label,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Derives an independent child stream.
    pub fn child(&self, suffix: &str) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}", self.label, suffix))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

/// Xavier-uniform vector: entries i.i.d. on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(rng: &mut RngStream, fan_in: usize, fan_out: usize, dim: usize) -> Result<Embedding> {
    if dim == 0 {
        return Err(Error::Argument("embedding dimension must be at least 1".into()));
    }
    if fan_in + fan_out == 0 {
        return Err(Error::Argument("fan_in + fan_out must be at least 1".into()));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(Embedding((0..dim).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect()))
}

/// One Laplace(0, scale) draw by inverse CDF.
pub fn laplace_draw(rng: &mut RngStream, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let mut u = rng.uniform();
    while u == 0.0 {
        u = rng.uniform();
    }
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// Vector of i.i.d. Laplace(0, scale) entries.
pub fn laplace_sample(rng: &mut RngStream, scale: f64, dim: usize) -> Result<Embedding> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::Argument(format!("Laplace scale must be finite and >= 0, got {scale}")));
    }
    Ok(Embedding((0..dim).map(|_| laplace_draw(rng, scale)).collect()))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0001,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Embedding,
    pub v: Embedding,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        AdamState {
            m: Embedding::zeros(dim),
            v: Embedding::zeros(dim),
            t: 0,
            config,
        }
    }

    /// Applies one bias-corrected Adam update in place. Weight decay is
    /// coupled: `grad + weight_decay * param` feeds the moments.
    pub fn step(&mut self, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() || param.len() != self.m.dim() {
            return Err(Error::Argument(format!(
                "adam dimension mismatch: param {}, grad {}, state {}",
                param.len(),
                grad.len(),
                self.m.dim()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let g = g + weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(param: &Embedding, grad: &Embedding, state: &AdamState) -> Result<(Embedding, AdamState)> {
    let mut param = param.clone();
    let mut state = state.clone();
    state.step(&mut param, grad)?;
    Ok((param, state))
}
