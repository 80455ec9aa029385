//! Closed-form full conditionals of the tempered posterior.
//!
//! Given `N` and `gamma`, the rows of `M` are independent Gaussians with
//!
//! ```text
//! V_i^{-1} = diag(gamma)^{-1} + (2 lambda / n) Σ_{k: i_k = i} N_{j_k} N_{j_k}^T
//! mean_i   = V_i (2 lambda / n) Σ_{k: i_k = i} Y_k N_{j_k}
//! ```
//!
//! and symmetrically for the rows of `N`. The conditional of `gamma` given
//! `(M, N)` factorizes over columns and depends on the data only through
//! `S_h = ||M_{.h}||^2 + ||N_{.h}||^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{FactorMatrix, ObservationSet, PriorSpec, Rating};
use crate::quadrature;
use crate::rng::{sample_bernoulli, sample_inverse_gamma, sample_inverse_gaussian, RngStream};

/// Floor applied to `S_h` before forming `beta / sqrt(S_h)`.
pub const MIN_COLUMN_SQ_NORM: f64 = 1e-12;

/// Gaussian conditional of one factor row in information form.
#[derive(Debug, Clone, PartialEq)]
pub struct RowConditional {
    pub precision: DMatrix<f64>,
    pub linear_term: DVector<f64>,
}

impl RowConditional {
    pub fn mean(&self) -> Result<DVector<f64>> {
        let k = self.linear_term.len();
        let mut l = to_row_major(&self.precision);
        linalg::cholesky_in_place(&mut l, k)?;
        let mut b: Vec<f64> = self.linear_term.iter().copied().collect();
        linalg::solve_lower(&l, k, &mut b);
        linalg::solve_lower_transpose(&l, k, &mut b);
        Ok(DVector::from_vec(b))
    }

    /// Explicit covariance; for inspection and tests only.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let k = self.linear_term.len();
        let mut l = to_row_major(&self.precision);
        linalg::cholesky_in_place(&mut l, k)?;
        let mut out = vec![0.0; k * k];
        linalg::inverse_from_cholesky(&l, k, &mut out);
        Ok(DMatrix::from_row_slice(k, k, &out))
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.nrows();
    (0..k * m.ncols()).map(|p| m[(p / k, p % k)]).collect()
}

/// `S_h = ||M_{.h}||^2 + ||N_{.h}||^2` for every column.
pub fn column_sq_norms(m: &FactorMatrix, n: &FactorMatrix) -> Result<Vec<f64>> {
    if m.cols() != n.cols() {
        return Err(Error::usage(format!(
            "M has {} columns but N has {}",
            m.cols(),
            n.cols()
        )));
    }
    Ok(m.column_sq_norms()
        .into_iter()
        .zip(n.column_sq_norms())
        .map(|(a, b)| a + b)
        .collect())
}

fn check_gamma(gamma: &[f64]) -> Result<()> {
    match gamma.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
        Some(h) => Err(Error::usage(format!(
            "gamma[{h}] = {} must be positive",
            gamma[h]
        ))),
        None => Ok(()),
    }
}

/// Fill `precision` (row-major, full) and `linear` for one factor row.
///
/// `other` is the opposite factor, `positions` the entries touching this
/// row, `other_index` picks the opposite index of an entry, and
/// `scale = 2 lambda / n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_row(
    precision: &mut [f64],
    linear: &mut [f64],
    inv_gamma: &[f64],
    other: &FactorMatrix,
    positions: &[usize],
    entries: &[Rating],
    other_index: impl Fn(&Rating) -> usize,
    scale: f64,
) {
    let k = inv_gamma.len();
    precision.iter_mut().for_each(|x| *x = 0.0);
    linear.iter_mut().for_each(|x| *x = 0.0);
    for &p in positions {
        let e = &entries[p];
        let x = other.row(other_index(e));
        linalg::add_outer_lower(precision, k, x, scale);
        let sy = scale * e.value;
        for (l, xi) in linear.iter_mut().zip(x) {
            *l += sy * xi;
        }
    }
    for h in 0..k {
        precision[h * k + h] += inv_gamma[h];
    }
    linalg::mirror_lower(precision, k);
}

fn row_conditional(
    positions: &[usize],
    other: &FactorMatrix,
    gamma: &[f64],
    obs: &ObservationSet,
    lambda: f64,
    other_index: impl Fn(&Rating) -> usize,
) -> Result<RowConditional> {
    check_gamma(gamma)?;
    if other.cols() != gamma.len() {
        return Err(Error::usage("factor rank does not match gamma length"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::usage("lambda must be positive"));
    }
    let k = gamma.len();
    let inv_gamma: Vec<f64> = gamma.iter().map(|g| 1.0 / g).collect();
    let scale = if obs.is_empty() {
        0.0
    } else {
        2.0 * lambda / obs.len() as f64
    };
    let mut prec = vec![0.0; k * k];
    let mut lin = vec![0.0; k];
    assemble_row(
        &mut prec,
        &mut lin,
        &inv_gamma,
        other,
        positions,
        obs.entries(),
        other_index,
        scale,
    );
    Ok(RowConditional {
        precision: DMatrix::from_row_slice(k, k, &prec),
        linear_term: DVector::from_vec(lin),
    })
}

/// Conditional of `M_{i.}` given `N`, `gamma` and the data.
pub fn row_conditional_m(
    i: usize,
    n_factor: &FactorMatrix,
    gamma: &[f64],
    obs: &ObservationSet,
    lambda: f64,
) -> Result<RowConditional> {
    if i >= obs.rows() || n_factor.rows() != obs.cols() {
        return Err(Error::usage(format!(
            "row {i} / N with {} rows incompatible with {}x{} observations",
            n_factor.rows(),
            obs.rows(),
            obs.cols()
        )));
    }
    row_conditional(obs.row_entries(i), n_factor, gamma, obs, lambda, |e| e.col)
}

/// Conditional of `N_{j.}` given `M`, `gamma` and the data.
pub fn row_conditional_n(
    j: usize,
    m_factor: &FactorMatrix,
    gamma: &[f64],
    obs: &ObservationSet,
    lambda: f64,
) -> Result<RowConditional> {
    if j >= obs.cols() || m_factor.rows() != obs.rows() {
        return Err(Error::usage(format!(
            "column {j} / M with {} rows incompatible with {}x{} observations",
            m_factor.rows(),
            obs.rows(),
            obs.cols()
        )));
    }
    row_conditional(obs.col_entries(j), m_factor, gamma, obs, lambda, |e| e.row)
}

/// Conditional law of a single `gamma_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ColumnLaw {
    Dirac { value: f64 },
    /// `gamma_h ~ InvGamma(shape, rate)`.
    InverseGamma { shape: f64, rate: f64 },
    /// `1 / gamma_h ~ IG(mu, shape)` with `mu = beta / sqrt(S_h)` and `shape = beta^2`.
    ReciprocalInverseGaussian { mu: f64, shape: f64 },
    /// `gamma_h = high` with probability `prob_high`, else `low`.
    TwoPoint { prob_high: f64, low: f64, high: f64 },
}

impl ColumnLaw {
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match *self {
            ColumnLaw::Dirac { value } => Ok(value),
            ColumnLaw::InverseGamma { shape, rate } => sample_inverse_gamma(shape, rate, rng),
            ColumnLaw::ReciprocalInverseGaussian { mu, shape } => {
                let precision = sample_inverse_gaussian(mu, shape, rng)?;
                Ok(1.0 / precision)
            }
            ColumnLaw::TwoPoint {
                prob_high,
                low,
                high,
            } => Ok(if sample_bernoulli(prob_high, rng)? {
                high
            } else {
                low
            }),
        }
    }
}

/// Per-column conditional of `gamma` given `(M, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaConditional {
    pub columns: Vec<ColumnLaw>,
}

impl GammaConditional {
    pub fn sample(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.columns.iter().map(|c| c.sample(rng)).collect()
    }
}

/// Posterior probability of the slab value `c` for one column, computed in
/// log space.
///
/// `dim = m1 + m2` is the number of entries in column `h` of `M` and `N`.
pub fn slab_probability(s: f64, dim: usize, epsilon: f64, c: f64, p: f64) -> f64 {
    let half_dim = dim as f64 / 2.0;
    let log_slab = p.ln() - half_dim * c.ln() - s / (2.0 * c);
    let log_spike = (1.0 - p).ln() - half_dim * epsilon.ln() - s / (2.0 * epsilon);
    1.0 / (1.0 + (log_spike - log_slab).exp())
}

/// Conditional of `gamma` given `(M, N)` under `prior`.
pub fn gamma_conditional(
    prior: &PriorSpec,
    m: &FactorMatrix,
    n: &FactorMatrix,
) -> Result<GammaConditional> {
    prior.validate()?;
    let s = column_sq_norms(m, n)?;
    let dim = m.rows() + n.rows();
    let columns = s
        .iter()
        .map(|&s_h| match *prior {
            PriorSpec::Fixed { gamma0 } => ColumnLaw::Dirac { value: gamma0 },
            PriorSpec::InverseGamma { a, b } => ColumnLaw::InverseGamma {
                shape: a + dim as f64 / 2.0,
                rate: b + s_h / 2.0,
            },
            PriorSpec::Gamma { beta } => ColumnLaw::ReciprocalInverseGaussian {
                mu: beta / s_h.max(MIN_COLUMN_SQ_NORM).sqrt(),
                shape: beta * beta,
            },
            PriorSpec::Discrete { epsilon, c, p } => ColumnLaw::TwoPoint {
                prob_high: slab_probability(s_h, dim, epsilon, c, p),
                low: epsilon,
                high: c,
            },
        })
        .collect();
    Ok(GammaConditional { columns })
}

/// Log marginal prior density of `(M, N)` under the gamma prior, with
/// `gamma` integrated out, up to an additive constant: `-beta Σ_h sqrt(S_h)`.
pub fn marginal_log_prior_gamma_prior(m: &FactorMatrix, n: &FactorMatrix, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::usage("beta must be positive"));
    }
    Ok(-beta * column_sq_norms(m, n)?.iter().map(|s| s.sqrt()).sum::<f64>())
}

/// Log of the per-column mixing integral
///
/// ```text
/// ∫_0^∞ γ^{-d/2} exp(-S / (2γ)) · γ^{(d+1)/2 - 1} exp(-beta^2 γ / 2) dγ
/// ```
///
/// evaluated by adaptive quadrature in `t = ln γ`. The first factor is the
/// Gaussian column density without its `(2π)^{-d/2}` constant; the second is
/// the unnormalized `Gamma((d+1)/2, beta^2/2)` density. `d = m1 + m2`.
pub fn log_gamma_prior_column_integral(s: f64, beta: f64, dim: usize) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::usage(format!("need S >= 0 and beta > 0, got ({s}, {beta})")));
    }
    let d = dim as f64;
    let power = -d / 2.0 + (d + 1.0) / 2.0 - 1.0;
    let b2 = beta * beta;
    // log of integrand * dγ/dt
    let log_f = move |t: f64| (power + 1.0) * t - 0.5 * s * (-t).exp() - 0.5 * b2 * t.exp();

    // ternary search for the mode on a wide bracket (log_f is concave in t)
    let (mut lo, mut hi) = (-200.0f64, 200.0f64);
    for _ in 0..300 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if log_f(a) < log_f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let peak = log_f(t_star);

    let cutoff = peak - 60.0;
    let mut left = t_star - 1.0;
    while log_f(left) > cutoff {
        left -= 1.0;
    }
    let mut right = t_star + 1.0;
    while log_f(right) > cutoff {
        right += 1.0;
    }
    let r = quadrature::integrate(|t| (log_f(t) - peak).exp(), left, right, 0.0, 1e-13)?;
    Ok(r.value.ln() + peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorMatrix;
    use proptest::prelude::*;

    fn fm(rows: usize, cols: usize, v: &[f64]) -> FactorMatrix {
        FactorMatrix::from_row_major(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn column_sq_norms_examples() {
        assert_eq!(
            column_sq_norms(&FactorMatrix::zeros(3, 2), &FactorMatrix::zeros(4, 2)).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            column_sq_norms(&fm(1, 1, &[3.0]), &fm(1, 1, &[4.0])).unwrap(),
            vec![25.0]
        );
        assert!(column_sq_norms(&FactorMatrix::zeros(3, 2), &FactorMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn column_sq_norms_direct_summation() {
        let m = FactorMatrix::from_fn(5, 3, |i, h| ((i * 3 + h) as f64 * 0.37).sin() * 2.0);
        let n = FactorMatrix::from_fn(5, 3, |i, h| ((i * 7 + h) as f64 * 0.11).cos() - 0.3);
        let s = column_sq_norms(&m, &n).unwrap();
        for h in 0..3 {
            let mut oracle = 0.0;
            for i in 0..5 {
                oracle += m.get(i, h).powi(2);
                oracle += n.get(i, h).powi(2);
            }
            assert!((s[h] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_row_falls_back_to_prior() {
        let obs = ObservationSet::new(2, 2, vec![Rating::new(1, 0, 2.0)]).unwrap();
        let n = fm(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let gamma = [0.5, 2.0];
        let c = row_conditional_m(0, &n, &gamma, &obs, 1.0).unwrap();
        assert_eq!(c.mean().unwrap(), DVector::zeros(2));
        let cov = c.covariance().unwrap();
        assert!((cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((cov[(1, 1)] - 2.0).abs() < 1e-15);
        assert_eq!(cov[(0, 1)], 0.0);
        let c = row_conditional_n(1, &n, &gamma, &obs, 1.0).unwrap();
        assert_eq!(c.linear_term, DVector::zeros(2));
    }

    #[test]
    fn scalar_hand_computation() {
        let (y, c, g, lambda) = (1.7, -0.8, 0.6, 3.0);
        let obs = ObservationSet::new(1, 1, vec![Rating::new(0, 0, y)]).unwrap();
        let rc = row_conditional_m(0, &fm(1, 1, &[c]), &[g], &obs, lambda).unwrap();
        let s = 2.0 * lambda / 1.0;
        assert!((rc.precision[(0, 0)] - (1.0 / g + s * c * c)).abs() < 1e-14);
        assert!((rc.linear_term[0] - s * y * c).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_gamma_is_rejected() {
        let obs = ObservationSet::empty(1, 1).unwrap();
        assert!(matches!(
            row_conditional_m(0, &FactorMatrix::zeros(1, 1), &[0.0], &obs, 1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn gamma_conditional_examples() {
        let m = fm(2, 1, &[1.0, 1.0]);
        let n = fm(2, 1, &[1.0, 0.0]);
        // S = 3, m1 + m2 = 4
        let g = gamma_conditional(&PriorSpec::InverseGamma { a: 1.0, b: 0.1 }, &m, &n).unwrap();
        match g.columns[0] {
            ColumnLaw::InverseGamma { shape, rate } => {
                assert_eq!(shape, 3.0);
                assert!((rate - 1.6).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        let g = gamma_conditional(&PriorSpec::Gamma { beta: 1.0 }, &fm(1, 1, &[1.0]), &fm(1, 1, &[0.0])).unwrap();
        assert_eq!(g.columns[0], ColumnLaw::ReciprocalInverseGaussian { mu: 1.0, shape: 1.0 });
        let g = gamma_conditional(&PriorSpec::Fixed { gamma0: 0.2 }, &m, &n).unwrap();
        assert_eq!(g.columns[0], ColumnLaw::Dirac { value: 0.2 });
    }

    #[test]
    fn gamma_prior_zero_column_is_clamped() {
        let z = FactorMatrix::zeros(3, 2);
        let g = gamma_conditional(&PriorSpec::Gamma { beta: 2.0 }, &z, &z).unwrap();
        let mut rng = RngStream::new(3);
        for law in &g.columns {
            match *law {
                ColumnLaw::ReciprocalInverseGaussian { mu, .. } => assert!(mu.is_finite()),
                other => panic!("{other:?}"),
            }
            let x = law.sample(&mut rng).unwrap();
            assert!(x.is_finite() && x > 0.0);
        }
    }

    #[test]
    fn slab_probability_equals_prior_when_points_coincide() {
        for s in [0.0, 1.0, 1e4] {
            let p = slab_probability(s, 400, 0.3, 0.3, 0.07);
            assert!((p - 0.07).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_probability_survives_large_dimensions() {
        // naive weights overflow: epsilon^{-(m1+m2)/2} = 20^{1000}
        let p_small = slab_probability(1.0, 2000, 0.05, 1.0, 0.05);
        let p_big = slab_probability(1e4, 2000, 0.05, 1.0, 0.05);
        assert!(p_small.is_finite() && p_big.is_finite());
        assert!(p_small < 1e-100);
        assert!((p_big - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_log_prior_examples() {
        let z = FactorMatrix::zeros(2, 3);
        assert_eq!(marginal_log_prior_gamma_prior(&z, &z, 1.5).unwrap(), 0.0);
        let v = marginal_log_prior_gamma_prior(&fm(1, 1, &[2.0]), &fm(1, 1, &[0.0]), 2.0).unwrap();
        assert_eq!(v, -4.0);
    }

    #[test]
    fn column_integral_tracks_group_lasso_penalty() {
        let beta: f64 = 1.3;
        let base = log_gamma_prior_column_integral(0.1, beta, 7).unwrap() + beta * 0.1f64.sqrt();
        for s in [1.0f64, 10.0] {
            let c = log_gamma_prior_column_integral(s, beta, 7).unwrap() + beta * s.sqrt();
            assert!((c - base).abs() < 1e-6, "S={s}: {c} vs {base}");
        }
    }

    proptest! {
        #[test]
        fn log_space_weight_matches_naive(s in 0.0f64..5.0, dim in 2usize..=20, eps in 0.05f64..0.5, c in 0.6f64..3.0, p in 0.01f64..0.99) {
            let naive_slab = p / c.powf(dim as f64 / 2.0) * (-s / (2.0 * c)).exp();
            let naive_spike = (1.0 - p) / eps.powf(dim as f64 / 2.0) * (-s / (2.0 * eps)).exp();
            let naive = naive_slab / (naive_slab + naive_spike);
            prop_assert!((slab_probability(s, dim, eps, c, p) - naive).abs() < 1e-12);
        }

        #[test]
        fn slab_probability_monotone_in_s(s1 in 0.0f64..500.0, ds in 0.0f64..500.0, dim in 2usize..400, eps in 0.01f64..0.5, p in 0.01f64..0.99) {
            let c = 1.0;
            prop_assert!(slab_probability(s1 + ds, dim, eps, c, p) >= slab_probability(s1, dim, eps, c, p));
        }

        #[test]
        fn inverse_gamma_conditional_mean_increases_with_b(b in 0.01f64..10.0, db in 0.01f64..10.0, s in 0.0f64..10.0) {
            let m = FactorMatrix::from_row_major(2, 1, vec![s.sqrt(), 0.0]).unwrap();
            let n = FactorMatrix::zeros(2, 1);
            let mean_for = |b: f64| match gamma_conditional(&PriorSpec::InverseGamma { a: 1.0, b }, &m, &n).unwrap().columns[0] {
                ColumnLaw::InverseGamma { shape, rate } => rate / (shape - 1.0),
                _ => unreachable!(),
            };
            prop_assert!(mean_for(b + db) > mean_for(b));
        }
    }
}
