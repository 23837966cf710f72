//! Wigner small-d matrices `d^j_{m'm}(β)` for `0 <= j <= order`.
//!
//! Only `m >= 0` is stored; `d^j_{m'm} = (-1)^{m-m'} d^j_{-m',-m}` and
//! `d^j_{m'm} = (-1)^{m-m'} d^j_{mm'}` give the rest.

use std::collections::HashMap;

/// Upper bound on cached matrix storage, in `f64`s.
const CACHE_BUDGET: usize = 1 << 22;

/// `ln k!` for `k <= len - 1`.
pub(crate) fn ln_factorials(len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..len {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Start of level `j`: `Σ_{i<j} (i+1)(2i+1)`.
#[inline(always)]
fn offset(j: usize) -> usize {
    j * (4 * j).saturating_sub(1) * (j + 1) / 6
}

#[inline(always)]
fn slot(j: usize, m: usize, mp: i64) -> usize {
    offset(j) + m * (2 * j + 1) + (mp + j as i64) as usize
}

/// `coef · cos(β/2)^c · sin(β/2)^s`.
#[derive(Debug, Clone, Copy)]
struct Seed {
    coef: f64,
    c: u32,
    s: u32,
}

#[derive(Debug, Clone)]
pub struct WignerD {
    order: usize,
    /// Border entries `j = max(|m|, |m'|)` in fill order.
    seeds: Vec<Seed>,
    /// `d^j = a ((cos β - cross) d^{j-1} - back d^{j-2})` for the rest, in fill order.
    a: Vec<f64>,
    cross: Vec<f64>,
    back: Vec<f64>,
    /// Slot 0 is scratch; the rest are cached angles.
    slots: Vec<Vec<f64>>,
    index: HashMap<u64, usize>,
    active: usize,
    cpow: Vec<f64>,
    spow: Vec<f64>,
}

impl WignerD {
    pub fn new(order: usize) -> Self {
        let lf = ln_factorials(2 * order + 2);
        let mut seeds = Vec::new();
        let (mut a, mut cross, mut back) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..=order as i64 {
            for m in 0..=j {
                for mp in -j..=j {
                    let l0 = mp.abs().max(m);
                    if l0 == j {
                        seeds.push(seed_entry(j, mp, m, &lf));
                        continue;
                    }
                    let (jf, mf, mpf) = (j as f64, m as f64, mp as f64);
                    a.push(jf * (2.0 * jf - 1.0) / ((jf * jf - mf * mf) * (jf * jf - mpf * mpf)).sqrt());
                    cross.push(if j > 1 { mf * mpf / (jf * (jf - 1.0)) } else { 0.0 });
                    back.push(if j > l0 + 1 {
                        let jm = jf - 1.0;
                        ((jm * jm - mf * mf) * (jm * jm - mpf * mpf)).sqrt() / (jm * (2.0 * jf - 1.0))
                    } else {
                        0.0
                    });
                }
            }
        }
        let size = offset(order + 1);
        debug_assert_eq!(seeds.len() + a.len(), size);
        Self {
            order,
            seeds,
            a,
            cross,
            back,
            slots: vec![vec![0.0; size]],
            index: HashMap::new(),
            active: 0,
            cpow: vec![1.0; 2 * order + 1],
            spow: vec![1.0; 2 * order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `d^j_{m'm}` for any signs.
    pub fn get(&self, j: usize, mp: i64, m: i64) -> f64 {
        let data = &self.slots[self.active];
        if m >= 0 {
            data[slot(j, m as usize, mp)]
        } else {
            let sign = if (m - mp) & 1 == 0 { 1.0 } else { -1.0 };
            sign * data[slot(j, (-m) as usize, -mp)]
        }
    }

    /// `d^j_{m'm}` for fixed `m >= 0`, indexed by `m' + j`.
    #[inline(always)]
    pub fn column(&self, j: usize, m: usize) -> &[f64] {
        let start = slot(j, m, -(j as i64));
        &self.slots[self.active][start..start + 2 * j + 1]
    }

    /// Makes the matrices for angle `beta` current, reusing a cached copy when one exists.
    pub fn compute(&mut self, beta: f64) {
        let key = beta.to_bits();
        if let Some(&at) = self.index.get(&key) {
            self.active = at;
            return;
        }
        let size = offset(self.order + 1);
        if (self.slots.len() + 1) * size <= CACHE_BUDGET {
            let mut data = vec![0.0; size];
            self.fill(beta, &mut data);
            self.index.insert(key, self.slots.len());
            self.active = self.slots.len();
            self.slots.push(data);
        } else {
            let mut data = std::mem::take(&mut self.slots[0]);
            self.fill(beta, &mut data);
            self.slots[0] = data;
            self.active = 0;
        }
    }

    fn fill(&mut self, beta: f64, data: &mut [f64]) {
        let (c, s) = ((0.5 * beta).cos(), (0.5 * beta).sin());
        let cb = beta.cos();
        for k in 1..self.cpow.len() {
            self.cpow[k] = self.cpow[k - 1] * c;
            self.spow[k] = self.spow[k - 1] * s;
        }
        let mut seeds = self.seeds.iter();
        let mut seed = || {
            let e = seeds.next().expect("seed table");
            e.coef * self.cpow[e.c as usize] * self.spow[e.s as usize]
        };
        let mut r = 0;
        for j in 0..=self.order {
            let w = 2 * j + 1;
            let (done, cur) = data.split_at_mut(offset(j));
            for m in 0..j {
                let row = &mut cur[m * w..(m + 1) * w];
                row[0] = seed();
                // interior k = 1..w-1 reads k-1 one level down and k-2 two levels down
                let n = w - 2;
                let p1 = &done[offset(j - 1) + m * n..offset(j - 1) + (m + 1) * n];
                let (a, cr, bk) = (&self.a[r..r + n], &self.cross[r..r + n], &self.back[r..r + n]);
                let out = &mut row[1..w - 1];
                for i in 0..n {
                    out[i] = a[i] * (cb - cr[i]) * p1[i];
                }
                if m + 2 <= j {
                    let n2 = w - 4;
                    let p2 = &done[offset(j - 2) + m * n2..offset(j - 2) + (m + 1) * n2];
                    for i in 0..n2 {
                        out[i + 1] -= a[i + 1] * bk[i + 1] * p2[i];
                    }
                }
                r += n;
                row[w - 1] = seed();
            }
            for v in &mut cur[j * w..(j + 1) * w] {
                *v = seed();
            }
        }
    }
}

/// `d^j_{m'm}` at `j = max(|m|, |m'|)`, where the closed-form sum has one term.
fn seed_entry(j: i64, mp: i64, m: i64, lf: &[f64]) -> Seed {
    let f = |k: i64| lf[k as usize];
    let k = 0.max(m - mp);
    debug_assert_eq!(k, (j + m).min(j - mp));
    let ln = 0.5 * (f(j + mp) + f(j - mp) + f(j + m) + f(j - m)) - f(j + m - k) - f(k) - f(mp - m + k) - f(j - mp - k);
    let sign = if (mp - m + k) & 1 == 0 { 1.0 } else { -1.0 };
    Seed { coef: sign * ln.exp(), c: (2 * j + m - mp - 2 * k) as u32, s: (mp - m + 2 * k) as u32 }
}
