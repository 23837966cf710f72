//! P2M, M2M, M2L, L2L, L2P and M2P on scaled coefficient arrays.
//!
//! Multipole coefficients are stored as `M_n^m / ρ^n` and local coefficients
//! as `L_n^m ρ^n`, where `ρ` is the expansion's scale (box radius). The far
//! field of a multipole is `Σ M_n^m I_n^m(x - c)` and the local field is
//! `Σ L_n^m R_n^m(x - c)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::rotation::{ln_factorials, WignerD};
use super::solid::{coefficient_count, idx, irregular, regular, regular_nonneg, sign};
use crate::error::{FmmError, Result};
use crate::geometry::{norm, sub, Vec3};

/// Which multipole-to-local operator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum M2lForm {
    /// Rotate to the translation axis, shift along z, rotate back: O(Q³).
    #[default]
    Rotation,
    /// Full double sum over both expansions: O(Q⁴).
    Direct,
}

#[inline(always)]
fn scaled(x: Vec3, s: f64) -> Vec3 {
    [x[0] / s, x[1] / s, x[2] / s]
}

#[inline(always)]
fn add_symmetric(out: &mut [Complex64], n: usize, m: i64, v: Complex64) {
    out[idx(n, m)] += v;
    if m > 0 {
        out[idx(n, -m)] += v.conj() * sign(m);
    }
}

/// Operator workspace for one expansion order. Not shared between threads.
#[derive(Debug, Clone)]
pub struct Translator {
    order: usize,
    /// `sqrt((n+m)!(n-m)!)` at `idx(n, m)`.
    sqrt_fact: Vec<f64>,
    /// `(j+n)! / (sqrt((j+m)!(j-m)!) sqrt((n+m)!(n-m)!))` at `[m][n][j]`.
    axial: Vec<f64>,

    wigner: WignerD,
    harm: Vec<Complex64>,
    harm2: Vec<Complex64>,
    /// Scratch for the rotated expansions, real and imaginary parts apart.
    rot_re: Vec<f64>,
    rot_im: Vec<f64>,
    hat_re: Vec<f64>,
    hat_im: Vec<f64>,
    phase: Vec<Complex64>,
}

impl Translator {
    pub fn new(order: usize) -> Self {
        let q = order;
        let ln_fact = ln_factorials(4 * q + 2);
        let nc = coefficient_count(q);
        let mut sqrt_fact = vec![0.0; nc];
        for n in 0..=q {
            for m in -(n as i64)..=n as i64 {
                sqrt_fact[idx(n, m)] =
                    (0.5 * (ln_fact[(n as i64 + m) as usize] + ln_fact[(n as i64 - m) as usize])).exp();
            }
        }
        let w = q + 1;
        let mut axial = vec![0.0; w * w * w];
        for m in 0..=q {
            for n in m..=q {
                for j in m..=q {
                    let ln = ln_fact[j + n]
                        - 0.5 * (ln_fact[j + m] + ln_fact[j - m] + ln_fact[n + m] + ln_fact[n - m]);
                    axial[(m * w + n) * w + j] = ln.exp();
                }
            }
        }
        Self {
            order,
            sqrt_fact,
            axial,

            wigner: WignerD::new(q),
            harm: vec![Complex64::default(); coefficient_count(2 * q)],
            harm2: vec![Complex64::default(); nc],
            rot_re: vec![0.0; nc],
            rot_im: vec![0.0; nc],
            hat_re: vec![0.0; nc],
            hat_im: vec![0.0; nc],
            phase: vec![Complex64::default(); q + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficient_count(&self) -> usize {
        coefficient_count(self.order)
    }

    /// Adds the multipole of unit-free point masses `(position, mass)` about `center`.
    pub fn p2m(&mut self, out: &mut [Complex64], center: Vec3, scale: f64, points: impl IntoIterator<Item = (Vec3, f64)>) {
        let q = self.order;
        for (x, mass) in points {
            regular_nonneg(scaled(sub(x, center), scale), q, &mut self.harm2);
            for n in 0..=q {
                for m in 0..=n as i64 {
                    out[idx(n, m)] += self.harm2[idx(n, m)].conj() * mass;
                }
            }
        }
        super::solid::fill_negative(out, q);
    }

    /// Adds `child` (about `child_center`) translated to `parent_center`.
    pub fn m2m(
        &mut self,
        parent: &mut [Complex64],
        parent_center: Vec3,
        parent_scale: f64,
        child: &[Complex64],
        child_center: Vec3,
        child_scale: f64,
    ) {
        let q = self.order as i64;
        regular(scaled(sub(child_center, parent_center), parent_scale), self.order, &mut self.harm2);
        let ratio = child_scale / parent_scale;
        let mut pw = vec![1.0; self.order + 1];
        for k in 1..=self.order {
            pw[k] = pw[k - 1] * ratio;
        }
        for n in 0..=q {
            for m in 0..=n {
                let mut acc = Complex64::default();
                for k in 0..=n {
                    let nk = n - k;
                    let lmin = (-k).max(m - nk);
                    let lmax = k.min(m + nk);
                    let mut inner = Complex64::default();
                    for l in lmin..=lmax {
                        inner += self.harm2[idx(k as usize, l)].conj() * child[idx(nk as usize, m - l)];
                    }
                    acc += inner * pw[nk as usize];
                }
                add_symmetric(parent, n as usize, m, acc);
            }
        }
    }

    /// Adds the local expansion about `local_center` due to `mult`. The
    /// centers must differ.
    #[allow(clippy::too_many_arguments)]
    pub fn m2l(
        &mut self,
        local: &mut [Complex64],
        local_center: Vec3,
        local_scale: f64,
        mult: &[Complex64],
        mult_center: Vec3,
        mult_scale: f64,
        form: M2lForm,
    ) -> Result<()> {
        let t = sub(local_center, mult_center);
        let d = norm(t);
        if d == 0.0 {
            return Err(FmmError::ZeroTranslation);
        }
        match form {
            M2lForm::Direct => self.m2l_direct(local, t, d, local_scale, mult, mult_scale),
            M2lForm::Rotation => self.m2l_rotation(local, t, d, local_scale, mult, mult_scale),
        }
        Ok(())
    }

    fn m2l_direct(&mut self, local: &mut [Complex64], t: Vec3, d: f64, rl: f64, mult: &[Complex64], rm: f64) {
        let q = self.order;
        irregular(scaled(t, d), 2 * q, &mut self.harm);
        let (am, al) = (rm / d, rl / d);
        let mut pm = vec![1.0; q + 1];
        let mut pl = vec![1.0 / d; q + 1];
        for k in 1..=q {
            pm[k] = pm[k - 1] * am;
            pl[k] = pl[k - 1] * al;
        }
        for n in 0..=q {
            for m in 0..=n as i64 {
                let mut acc = Complex64::default();
                for j in 0..=q {
                    let mut inner = Complex64::default();
                    for k in -(j as i64)..=j as i64 {
                        inner += mult[idx(j, k)] * self.harm[idx(j + n, k - m)];
                    }
                    acc += inner * pm[j];
                }
                add_symmetric(local, n, m, acc * (pl[n] * sign(n as i64 + m)));
            }
        }
    }

    fn m2l_rotation(&mut self, local: &mut [Complex64], t: Vec3, d: f64, rl: f64, mult: &[Complex64], rm: f64) {
        let q = self.order;
        let w = q + 1;
        let beta = (t[2] / d).clamp(-1.0, 1.0).acos();
        let phi = t[1].atan2(t[0]);
        self.wigner.compute(beta);
        for k in 0..=q {
            self.phase[k] = Complex64::from_polar(1.0, k as f64 * phi);
        }
        // hat basis with the azimuth removed: a_j^k = M_j^k (-1)^k sqrt((j+k)!(j-k)!) e^{ikφ}
        for j in 0..=q {
            for k in -(j as i64)..=j as i64 {
                let e = if k >= 0 { self.phase[k as usize] } else { self.phase[(-k) as usize].conj() };
                let v = mult[idx(j, k)] * e * (sign(k) * self.sqrt_fact[idx(j, k)]);
                self.hat_re[idx(j, k)] = v.re;
                self.hat_im[idx(j, k)] = v.im;
            }
        }
        // polar rotation onto the z axis; only k' >= 0 is needed, stored at [k'][j]
        for j in 0..=q {
            let r = idx(j, -(j as i64))..idx(j, j as i64) + 1;
            let (sre, sim) = (&self.hat_re[r.clone()], &self.hat_im[r]);
            for kp in 0..=j {
                let col = self.wigner.column(j, kp);
                (self.rot_re[kp * w + j], self.rot_im[kp * w + j]) = dot2(sre, sim, col);
            }
        }
        // axial shift, output at idx(n, m) times (-1)^m'
        let (am, al) = (rm / d, rl / d);
        let mut pm = [0.0; super::Q_MAX + 1];
        let mut pl = [0.0; super::Q_MAX + 1];
        pm[0] = 1.0;
        pl[0] = 1.0 / d;
        for k in 1..=q {
            pm[k] = pm[k - 1] * am;
            pl[k] = pl[k - 1] * al;
        }
        for m in 0..=q {
            let r = m * w + m..m * w + w;
            for ((x, y), &p) in self.rot_re[r.clone()].iter_mut().zip(&mut self.rot_im[r.clone()]).zip(&pm[m..w]) {
                *x *= p;
                *y *= p;
            }
            let (sre, sim) = (&self.rot_re[r.clone()], &self.rot_im[r]);
            for n in m..=q {
                let row = &self.axial[(m * w + n) * w + m..(m * w + n) * w + w];
                // (-1)^{n+m} from the shift, (-1)^m folded in for the back rotation
                let f = pl[n] * sign(n as i64);
                let (i, j) = (idx(n, m as i64), idx(n, -(m as i64)));
                let (re, im) = dot2(sre, sim, row);
                let (re, im) = (re * f, im * f);
                // conjugate times (-1)^m at -m
                self.hat_re[j] = re * sign(m as i64);
                self.hat_im[j] = -im * sign(m as i64);
                self.hat_re[i] = re;
                self.hat_im[i] = im;
            }
        }
        // rotate back with d^n_{m m'} = (-1)^{m'-m} d^n_{m' m}; restore azimuth and normalization
        for n in 0..=q {
            let r = idx(n, -(n as i64))..idx(n, n as i64) + 1;
            let (sre, sim) = (&self.hat_re[r.clone()], &self.hat_im[r]);
            for m in 0..=n {
                let col = self.wigner.column(n, m);
                let (re, im) = dot2(sre, sim, col);
                let acc = Complex64::new(re, im);
                let v = acc * self.phase[m].conj() * self.sqrt_fact[idx(n, m as i64)];
                add_symmetric(local, n, m as i64, v);
            }
        }
    }

    /// Adds `parent` (about `parent_center`) re-expanded about `child_center`.
    pub fn l2l(
        &mut self,
        child: &mut [Complex64],
        child_center: Vec3,
        child_scale: f64,
        parent: &[Complex64],
        parent_center: Vec3,
        parent_scale: f64,
    ) {
        let q = self.order as i64;
        regular(scaled(sub(child_center, parent_center), parent_scale), self.order, &mut self.harm2);
        let ratio = child_scale / parent_scale;
        let mut pw = 1.0;
        for j in 0..=q {
            for qq in 0..=j {
                let mut acc = Complex64::default();
                for n in j..=q {
                    let nj = n - j;
                    for m in (qq - nj).max(-n)..=(qq + nj).min(n) {
                        acc += parent[idx(n as usize, m)] * self.harm2[idx(nj as usize, m - qq)];
                    }
                }
                add_symmetric(child, j as usize, qq, acc * pw);
            }
            pw *= ratio;
        }
    }

    /// Potential of a local expansion at `x`.
    pub fn l2p(&mut self, local: &[Complex64], center: Vec3, scale: f64, x: Vec3) -> f64 {
        let q = self.order;
        regular_nonneg(scaled(sub(x, center), scale), q, &mut self.harm2);
        let mut total = 0.0;
        for n in 0..=q {
            total += (local[idx(n, 0)] * self.harm2[idx(n, 0)]).re;
            let mut part = 0.0;
            for m in 1..=n as i64 {
                part += (local[idx(n, m)] * self.harm2[idx(n, m)]).re;
            }
            total += 2.0 * part;
        }
        total
    }

    /// Complex local-expansion sum over every `(n, m)`; its imaginary part is rounding residue.
    pub fn l2p_complex(&mut self, local: &[Complex64], center: Vec3, scale: f64, x: Vec3) -> Complex64 {
        regular(scaled(sub(x, center), scale), self.order, &mut self.harm2);
        local.iter().zip(&self.harm2).map(|(l, r)| l * r).sum()
    }

    /// Potential of a multipole expansion at a far point `x`.
    pub fn m2p(&mut self, mult: &[Complex64], center: Vec3, scale: f64, x: Vec3) -> f64 {
        irregular(scaled(sub(x, center), scale), self.order, &mut self.harm2);
        let s: Complex64 = mult.iter().zip(&self.harm2).map(|(a, b)| a * b).sum();
        s.re / scale
    }
}

/// `(Σ a_k c_k, Σ b_k c_k)` in four fixed partial sums each.
#[inline(always)]
fn dot2(a: &[f64], b: &[f64], c: &[f64]) -> (f64, f64) {
    let n = c.len().min(a.len());
    let (a, b, c) = (&a[..n], &b[..n], &c[..n]);
    let (mut x, mut y) = ([0.0; 4], [0.0; 4]);
    let (ca, cb, cc) = (a.chunks_exact(4), b.chunks_exact(4), c.chunks_exact(4));
    let (ta, tb, tc) = (ca.remainder(), cb.remainder(), cc.remainder());
    for ((ka, kb), kc) in ca.zip(cb).zip(cc) {
        for l in 0..4 {
            x[l] += ka[l] * kc[l];
            y[l] += kb[l] * kc[l];
        }
    }
    for (l, ((va, vb), vc)) in ta.iter().zip(tb).zip(tc).enumerate() {
        x[l] += va * vc;
        y[l] += vb * vc;
    }
    ((x[0] + x[1]) + (x[2] + x[3]), (y[0] + y[1]) + (y[2] + y[3]))
}
