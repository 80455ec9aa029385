//! Small dense kernels on row-major `k x k` slices.
//!
//! The samplers factor thousands of tiny precision matrices per sweep, so
//! these work in place on caller-owned buffers instead of allocating.

use crate::error::{Error, Result};

/// In-place lower Cholesky factorization `a = L L^T`.
///
/// Only the lower triangle of `a` is read; on success it holds `L` and the
/// strict upper triangle is zeroed.
pub(crate) fn cholesky_in_place(a: &mut [f64], k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    for j in 0..k {
        let mut diag = a[j * k + j];
        for p in 0..j {
            diag -= a[j * k + p] * a[j * k + p];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                minor: j + 1,
                context: None,
            });
        }
        let ljj = diag.sqrt();
        a[j * k + j] = ljj;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / ljj;
        }
        for i in 0..j {
            a[i * k + j] = 0.0;
        }
    }
    Ok(())
}

/// Solve `L x = b` in place.
pub(crate) fn solve_lower(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solve `L^T x = b` in place.
pub(crate) fn solve_lower_transpose(l: &[f64], k: usize, b: &mut [f64]) {
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in (i + 1)..k {
            s -= l[p * k + i] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Write `(L L^T)^{-1}` into `out` given the Cholesky factor `l`.
pub(crate) fn inverse_from_cholesky(l: &[f64], k: usize, out: &mut [f64]) {
    let mut col = vec![0.0; k];
    for j in 0..k {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        solve_lower(l, k, &mut col);
        solve_lower_transpose(l, k, &mut col);
        for i in 0..k {
            out[i * k + j] = col[i];
        }
    }
    // symmetrize to kill rounding asymmetry
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (out[i * k + j] + out[j * k + i]);
            out[i * k + j] = v;
            out[j * k + i] = v;
        }
    }
}

/// `a += scale * x x^T`, lower triangle only.
#[inline]
pub(crate) fn add_outer_lower(a: &mut [f64], k: usize, x: &[f64], scale: f64) {
    for i in 0..k {
        let sxi = scale * x[i];
        let row = &mut a[i * k..i * k + i + 1];
        for (p, r) in row.iter_mut().enumerate() {
            *r += sxi * x[p];
        }
    }
}

/// Copy the lower triangle onto the upper one.
pub(crate) fn mirror_lower(a: &mut [f64], k: usize) {
    for i in 0..k {
        for j in (i + 1)..k {
            a[i * k + j] = a[j * k + i];
        }
    }
}
