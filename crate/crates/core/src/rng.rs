//! Seedable, forkable random streams and the variate generators used by
//! the samplers.
//!
//! A [`RngStream`] is identified by its seed and the sequence of
//! [`fork`](RngStream::fork) ids leading to it. Forking never consumes state
//! from the parent, so a child stream depends only on its path. The Gibbs
//! sampler forks along `(chain, iteration, block, row)`, which keeps
//! parallel row updates reproducible regardless of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha12 stream keyed by a 256-bit path key.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u64; 4],
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u64; 4];
        let mut z = seed;
        for k in key.iter_mut() {
            z = splitmix64(z);
            *k = z;
        }
        Self::from_key(key)
    }

    fn from_key(key: [u64; 4]) -> Self {
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_exact_mut(8).zip(key.iter()) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        RngStream {
            key,
            rng: ChaCha12Rng::from_seed(bytes),
        }
    }

    /// Independent child stream number `child`. Does not advance `self`.
    pub fn fork(&self, child: u64) -> Self {
        let mut key = [0u64; 4];
        let mut acc = splitmix64(child ^ 0xA5A5_A5A5_5A5A_5A5A);
        for (i, k) in key.iter_mut().enumerate() {
            acc = splitmix64(acc ^ self.key[i].rotate_left(13 * i as u32 + 7));
            *k = acc ^ self.key[(i + 1) % 4];
        }
        Self::from_key(key)
    }

    /// Convenience for multi-level forks, e.g. `fork_path(&[iter, block, row])`.
    pub fn fork_path(&self, path: &[u64]) -> Self {
        let mut s = self.fork(path.first().copied().unwrap_or(0));
        for &p in path.iter().skip(1) {
            s = s.fork(p);
        }
        s
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draw from `Normal(P^{-1} b, P^{-1})` given precision `P` and linear term `b`.
///
/// `precision` is factored as `L L^T`; the draw is `L^{-T}(L^{-1} b + z)` with
/// `z` standard normal, so the covariance is never formed.
pub fn sample_mvn_from_precision(
    precision: &DMatrix<f64>,
    linear_term: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let k = precision.nrows();
    if precision.ncols() != k || linear_term.len() != k {
        return Err(Error::usage(format!(
            "precision is {}x{}, linear term has length {}",
            precision.nrows(),
            precision.ncols(),
            linear_term.len()
        )));
    }
    let mut a: Vec<f64> = (0..k * k).map(|p| precision[(p / k, p % k)]).collect();
    let mut b: Vec<f64> = linear_term.iter().copied().collect();
    mvn_draw_in_place(&mut a, k, &mut b, rng)?;
    Ok(DVector::from_vec(b))
}

/// Slice version of [`sample_mvn_from_precision`]. `precision` (row-major,
/// lower triangle read) is overwritten by its Cholesky factor and `linear`
/// by the draw.
pub(crate) fn mvn_draw_in_place(
    precision: &mut [f64],
    k: usize,
    linear: &mut [f64],
    rng: &mut RngStream,
) -> Result<()> {
    linalg::cholesky_in_place(precision, k)?;
    linalg::solve_lower(precision, k, linear);
    for x in linear.iter_mut() {
        *x += rng.standard_normal();
    }
    linalg::solve_lower_transpose(precision, k, linear);
    Ok(())
}

/// Draw `1/g` with `g ~ Gamma(shape, rate)`: density ∝ `x^{-shape-1} exp(-rate/x)`.
pub fn sample_inverse_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::usage(format!(
            "inverse-gamma needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::usage(format!("gamma distribution: {e}")))?
        .sample(rng);
    // g underflows to 0 only for absurdly small shape; keep the draw finite
    Ok(1.0 / g.max(f64::MIN_POSITIVE))
}

/// Draw from the inverse-Gaussian law with mean `mu` and shape `shape`.
///
/// Chi-square transformation: with `y = z^2`, the smaller root
/// `x = mu (1 + w - sqrt(w^2 + 2w))`, `w = mu y / (2 shape)`, is returned with
/// probability `mu / (mu + x)`, otherwise `mu^2 / x`. The root is evaluated
/// as `mu / (1 + w + sqrt(w^2 + 2w))` to avoid cancellation for large `w`.
pub fn sample_inverse_gaussian(mu: f64, shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) || !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::usage(format!(
            "inverse-Gaussian needs positive mean and shape, got ({mu}, {shape})"
        )));
    }
    let z = rng.standard_normal();
    let w = mu * z * z / (2.0 * shape);
    let x = mu / (1.0 + w + (w * w + 2.0 * w).sqrt());
    let u = rng.uniform();
    if u * (mu + x) <= mu {
        Ok(x)
    } else {
        Ok(mu * (mu / x))
    }
}

/// `true` with probability `prob`.
pub fn sample_bernoulli(prob: f64, rng: &mut RngStream) -> Result<bool> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::usage(format!("probability {prob} outside [0, 1]")));
    }
    Ok(rng.uniform() < prob)
}
