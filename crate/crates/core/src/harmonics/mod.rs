//! Spherical-harmonic multipole and local expansions and their translations.

mod operators;
pub mod rotation;
pub mod solid;

use std::marker::PhantomData;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use operators::{M2lForm, Translator};
pub use solid::{coefficient_count, idx};

use crate::error::{FmmError, Result};
use crate::geometry::{check_theta, FmmBox, Source, Vec3};

/// Highest expansion order the tolerance map will choose.
pub const Q_MAX: usize = 60;

/// `C θ^(Q+1) / (1-θ)²`.
pub fn truncation_bound(theta: f64, order: usize, bound_constant: f64) -> f64 {
    bound_constant * theta.powi(order as i32 + 1) / ((1.0 - theta) * (1.0 - theta))
}

/// Smallest `Q` whose truncation bound is at most `tol`, capped at [`Q_MAX`].
pub fn order_from_tolerance(tol: f64, theta: f64, bound_constant: f64) -> Result<usize> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(FmmError::InvalidParameter(format!("tolerance {tol} outside (0, 1)")));
    }
    check_theta(theta)?;
    if !(bound_constant > 0.0) {
        return Err(FmmError::InvalidParameter(format!("bound constant {bound_constant} must be positive")));
    }
    Ok((0..=Q_MAX).find(|&q| truncation_bound(theta, q, bound_constant) <= tol).unwrap_or(Q_MAX))
}

/// Tolerance, θ and the expansion order derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    pub tol: f64,
    pub theta: f64,
    pub order: usize,
    pub bound_constant: f64,
}

impl PrecisionPolicy {
    pub fn new(tol: f64, theta: f64, bound_constant: f64) -> Result<Self> {
        let order = order_from_tolerance(tol, theta, bound_constant)?;
        Ok(Self { tol, theta, order, bound_constant })
    }

    /// Fixed order; `tol` is set to the bound that order achieves.
    pub fn with_order(order: usize, theta: f64, bound_constant: f64) -> Result<Self> {
        check_theta(theta)?;
        if order > Q_MAX {
            return Err(FmmError::InvalidParameter(format!("order {order} exceeds {Q_MAX}")));
        }
        Ok(Self { tol: truncation_bound(theta, order, bound_constant), theta, order, bound_constant })
    }

    /// Error bound actually achieved at the chosen order.
    pub fn bound(&self) -> f64 {
        truncation_bound(self.theta, self.order, self.bound_constant)
    }

    /// True when the order cap stopped the tolerance from being met.
    pub fn capped(&self) -> bool {
        self.bound() > self.tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multipole {}
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Local {}

/// Coefficients `(n, m)`, `0 <= n <= order`, stored at [`idx`], scaled by
/// powers of `scale` (see [`Translator`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion<K> {
    pub order: usize,
    pub center: Vec3,
    pub scale: f64,
    pub coeffs: Vec<Complex64>,
    kind: PhantomData<K>,
}

pub type MultipoleExpansion = Expansion<Multipole>;
pub type LocalExpansion = Expansion<Local>;

impl<K> Expansion<K> {
    pub fn zero(order: usize, center: Vec3, scale: f64) -> Self {
        Self::from_parts(order, center, scale, vec![Complex64::default(); coefficient_count(order)])
    }

    pub fn from_parts(order: usize, center: Vec3, scale: f64, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), coefficient_count(order));
        Self { order, center, scale, coeffs, kind: PhantomData }
    }

    pub fn get(&self, n: usize, m: i64) -> Complex64 {
        self.coeffs[idx(n, m)]
    }

    /// Largest `|X_n^{-m} - (-1)^m conj(X_n^m)|` relative to the largest coefficient.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for n in 1..=self.order {
            for m in 1..=n as i64 {
                let want = self.get(n, m).conj() * solid::sign(m);
                worst = worst.max((self.get(n, -m) - want).norm());
            }
        }
        worst / scale
    }

    pub fn encode(&self, level: u32, box_index: u32, out: &mut Vec<u8>) {
        encode_record(level, box_index, self.center, self.scale, &self.coeffs, out);
    }

    pub fn decode(bytes: &[u8]) -> Result<(u32, u32, Self)> {
        if bytes.len() < RECORD_HEADER || !(bytes.len() - RECORD_HEADER).is_multiple_of(16) {
            return Err(FmmError::Decode(format!("expansion record of {} bytes", bytes.len())));
        }
        let nc = (bytes.len() - RECORD_HEADER) / 16;
        let q = (nc as f64).sqrt().round() as usize;
        if q * q != nc || q == 0 {
            return Err(FmmError::Decode(format!("{nc} coefficients is not a square")));
        }
        let rec = decode_record(bytes, q - 1)?;
        Ok((rec.level, rec.box_index, Self::from_parts(q - 1, rec.center, rec.scale, rec.coeffs)))
    }
}

const RECORD_HEADER: usize = 8 + 4 * 8;

/// Bytes of one wire record at `order`.
pub fn record_len(order: usize) -> usize {
    RECORD_HEADER + 16 * coefficient_count(order)
}

/// Appends `[level u32][box u32][center 3×f64][scale f64][re, im f64 ...]`, little endian.
pub fn encode_record(level: u32, box_index: u32, center: Vec3, scale: f64, coeffs: &[Complex64], out: &mut Vec<u8>) {
    out.reserve(RECORD_HEADER + 16 * coeffs.len());
    out.extend_from_slice(&level.to_le_bytes());
    out.extend_from_slice(&box_index.to_le_bytes());
    for c in center {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&scale.to_le_bytes());
    for c in coeffs {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireRecord {
    pub level: u32,
    pub box_index: u32,
    pub center: Vec3,
    pub scale: f64,
    pub coeffs: Vec<Complex64>,
}

pub fn decode_record(bytes: &[u8], order: usize) -> Result<WireRecord> {
    if bytes.len() != record_len(order) {
        return Err(FmmError::Decode(format!(
            "expansion record of {} bytes, expected {} at order {order}",
            bytes.len(),
            record_len(order)
        )));
    }
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let coeffs = (0..coefficient_count(order))
        .map(|k| Complex64::new(f(RECORD_HEADER + 16 * k), f(RECORD_HEADER + 16 * k + 8)))
        .collect();
    Ok(WireRecord {
        level: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        box_index: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        center: [f(8), f(16), f(24)],
        scale: f(32),
        coeffs,
    })
}

/// Multipole of `sources` about the center of `bx`, scaled by its radius.
pub fn p2m(sources: &[Source], bx: &FmmBox, order: usize) -> MultipoleExpansion {
    let mut out = MultipoleExpansion::zero(order, bx.center, bx.radius);
    Translator::new(order).p2m(&mut out.coeffs, bx.center, bx.radius, sources.iter().map(|s| (s.position, s.mass)));
    out
}

pub fn m2m(child: &MultipoleExpansion, new_center: Vec3, new_scale: f64) -> MultipoleExpansion {
    let mut out = MultipoleExpansion::zero(child.order, new_center, new_scale);
    Translator::new(child.order).m2m(&mut out.coeffs, new_center, new_scale, &child.coeffs, child.center, child.scale);
    out
}

pub fn m2l(source: &MultipoleExpansion, target_center: Vec3, target_scale: f64, form: M2lForm) -> Result<LocalExpansion> {
    let mut out = LocalExpansion::zero(source.order, target_center, target_scale);
    Translator::new(source.order).m2l(
        &mut out.coeffs,
        target_center,
        target_scale,
        &source.coeffs,
        source.center,
        source.scale,
        form,
    )?;
    Ok(out)
}

pub fn l2l(parent: &LocalExpansion, child_center: Vec3, child_scale: f64) -> LocalExpansion {
    let mut out = LocalExpansion::zero(parent.order, child_center, child_scale);
    Translator::new(parent.order).l2l(&mut out.coeffs, child_center, child_scale, &parent.coeffs, parent.center, parent.scale);
    out
}

pub fn l2p(local: &LocalExpansion, point: Vec3) -> f64 {
    Translator::new(local.order).l2p(&local.coeffs, local.center, local.scale, point)
}

/// Far-field potential of a multipole expansion.
pub fn m2p(mult: &MultipoleExpansion, point: Vec3) -> f64 {
    Translator::new(mult.order).m2p(&mult.coeffs, mult.center, mult.scale, point)
}

#[cfg(test)]
mod tests;
