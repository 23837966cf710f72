//! Regular and irregular solid harmonics by recurrence.
//!
//! `R_n^m(x) = r^n P_n^m(cos θ) e^{imφ} / (n+m)!` and
//! `I_n^m(x) = (n-m)! P_n^m(cos θ) e^{imφ} / r^{n+1}` (no Condon-Shortley
//! phase), with `X_n^{-m} = (-1)^m conj(X_n^m)`. Then
//! `1/|x - y| = Σ conj(R_n^m(y)) I_n^m(x)` for `|y| < |x|`.

use num_complex::Complex64;

use crate::geometry::Vec3;

/// Position of `(n, m)` in a `(Q+1)²` coefficient array.
#[inline(always)]
pub fn idx(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

pub fn coefficient_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

#[inline(always)]
pub(crate) fn sign(m: i64) -> f64 {
    if m & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Fills `X_n^{-m}` from `X_n^m` for every `m > 0`.
pub(crate) fn fill_negative(out: &mut [Complex64], order: usize) {
    for n in 1..=order {
        for m in 1..=n as i64 {
            out[idx(n, -m)] = out[idx(n, m)].conj() * sign(m);
        }
    }
}

/// `R_n^m(x)` for `0 <= n <= order`, all `m`.
pub fn regular(x: Vec3, order: usize, out: &mut [Complex64]) {
    regular_nonneg(x, order, out);
    fill_negative(out, order);
}

/// `R_n^m(x)` for `m >= 0` only; negative-`m` slots are left untouched.
pub fn regular_nonneg(x: Vec3, order: usize, out: &mut [Complex64]) {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let z = x[2];
    let xy = Complex64::new(x[0], x[1]);
    let mut diag = Complex64::new(1.0, 0.0);
    for m in 0..=order {
        if m > 0 {
            diag = diag * xy / (2 * m) as f64;
        }
        out[idx(m, m as i64)] = diag;
        if m == order {
            break;
        }
        let mut prev2 = diag;
        let mut prev = diag * z;
        out[idx(m + 1, m as i64)] = prev;
        for n in m + 2..=order {
            let k = ((n + m) * (n - m)) as f64;
            let cur = (prev * ((2 * n - 1) as f64 * z) - prev2 * r2) / k;
            out[idx(n, m as i64)] = cur;
            prev2 = prev;
            prev = cur;
        }
    }
}

/// `I_n^m(x)` for `0 <= n <= order`, all `m`. `x` must be nonzero.
pub fn irregular(x: Vec3, order: usize, out: &mut [Complex64]) {
    irregular_nonneg(x, order, out);
    fill_negative(out, order);
}

pub fn irregular_nonneg(x: Vec3, order: usize, out: &mut [Complex64]) {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let inv_r2 = 1.0 / r2;
    let z = x[2];
    let xy = Complex64::new(x[0], x[1]);
    let mut diag = Complex64::new(1.0 / r2.sqrt(), 0.0);
    for m in 0..=order {
        if m > 0 {
            diag = diag * xy * ((2 * m - 1) as f64 * inv_r2);
        }
        out[idx(m, m as i64)] = diag;
        if m == order {
            break;
        }
        let mut prev2 = diag;
        let mut prev = diag * ((2 * m + 1) as f64 * z * inv_r2);
        out[idx(m + 1, m as i64)] = prev;
        for n in m + 2..=order {
            let k = ((n - 1 - m) * (n - 1 + m)) as f64;
            let cur = (prev * ((2 * n - 1) as f64 * z) - prev2 * k) * inv_r2;
            out[idx(n, m as i64)] = cur;
            prev2 = prev;
            prev = cur;
        }
    }
}
