//! Direct particle-particle sums and the O(N²) reference.

use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{Source, TargetPoint, Vec3};

/// Potentials keyed by global id, ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialVector {
    pub ids: Vec<u64>,
    pub values: Vec<f64>,
}

impl PotentialVector {
    pub fn from_pairs(mut pairs: Vec<(u64, f64)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        let (ids, values) = pairs.into_iter().unzip();
        Self { ids, values }
    }

    /// Concatenates per-rank vectors and re-sorts by id.
    pub fn merge(parts: impl IntoIterator<Item = PotentialVector>) -> Self {
        let pairs = parts.into_iter().flat_map(|p| p.ids.into_iter().zip(p.values)).collect();
        Self::from_pairs(pairs)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max |a - b| / max |b|` over aligned ids.
    pub fn relative_inf_diff(&self, reference: &PotentialVector) -> Result<f64> {
        self.check_aligned(reference)?;
        let scale = reference.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = self.values.iter().zip(&reference.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        Ok(if scale == 0.0 { diff } else { diff / scale })
    }

    /// `max_i |a_i - b_i| / |b_i|`.
    pub fn max_pointwise_relative(&self, reference: &PotentialVector) -> Result<f64> {
        self.check_aligned(reference)?;
        Ok(self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(x, y)| if *y == 0.0 { (x - y).abs() } else { ((x - y) / y).abs() })
            .fold(0.0, f64::max))
    }

    fn check_aligned(&self, other: &PotentialVector) -> Result<()> {
        if self.ids != other.ids {
            return Err(FmmError::InvalidParameter("potential vectors cover different ids".into()));
        }
        Ok(())
    }

    /// Binary `[FMMP][u64 N]` then `N x [u64 id, f64 value]`, or `id,potential`
    /// rows when the extension is `.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if crate::datasets::is_csv(path) {
            let mut w = csv::Writer::from_path(path).map_err(crate::datasets::csv_error)?;
            w.write_record(["id", "potential"]).map_err(crate::datasets::csv_error)?;
            for pair in self.ids.iter().zip(&self.values) {
                w.serialize(pair).map_err(crate::datasets::csv_error)?;
            }
            w.flush()?;
            return Ok(());
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(POTENTIAL_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (id, v) in self.ids.iter().zip(&self.values) {
            w.write_all(&id.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if crate::datasets::is_csv(path) {
            let mut r = csv::Reader::from_path(path).map_err(crate::datasets::csv_error)?;
            let pairs = r.deserialize::<(u64, f64)>().collect::<std::result::Result<Vec<_>, _>>();
            return Ok(Self::from_pairs(pairs.map_err(crate::datasets::csv_error)?));
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() < 12 || &bytes[..4] != POTENTIAL_MAGIC {
            return Err(FmmError::Decode(format!("{} is not a potential file", path.display())));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        if bytes.len() != 12 + 16 * n {
            return Err(FmmError::Decode(format!("potential file holds {} bytes for {n} entries", bytes.len())));
        }
        let pairs = bytes[12..]
            .chunks_exact(16)
            .map(|c| (u64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
            .collect();
        Ok(Self::from_pairs(pairs))
    }
}

pub const POTENTIAL_MAGIC: &[u8; 4] = b"FMMP";

/// Source positions and masses as separate arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceColumns {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub m: Vec<f64>,
    pub ids: Vec<u64>,
}

impl SourceColumns {
    pub fn new(sources: &[Source]) -> Self {
        let mut c = Self::default();
        for s in sources {
            c.x.push(s.position[0]);
            c.y.push(s.position[1]);
            c.z.push(s.position[2]);
            c.m.push(s.mass);
            c.ids.push(s.global_id);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn position(&self, k: usize) -> Vec3 {
        [self.x[k], self.y[k], self.z[k]]
    }
}

const LANES: usize = 8;

/// Squared distances below this count as coincident.
const TOUCHING: f64 = f64::MIN_POSITIVE;

/// Lane-wise `1 / sqrt(d2)`. Every kernel and the reference go through the
/// same implementation, so a given pair always gets the same bits.
trait InvSqrt: Copy {
    fn inv(self, d2: [f64; LANES]) -> [f64; LANES];
}

#[derive(Clone, Copy)]
struct Portable;

impl InvSqrt for Portable {
    #[inline(always)]
    fn inv(self, d2: [f64; LANES]) -> [f64; LANES] {
        d2.map(|v| 1.0 / v.sqrt())
    }
}

/// `rsqrt14` seed refined by two Newton steps.
#[cfg(target_arch = "x86_64")]
#[derive(Clone, Copy)]
struct Avx512;

#[cfg(target_arch = "x86_64")]
impl InvSqrt for Avx512 {
    #[inline(always)]
    fn inv(self, d2: [f64; LANES]) -> [f64; LANES] {
        // SAFETY: only constructed after detecting avx512f
        unsafe { rsqrt_avx512(d2) }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
#[inline]
unsafe fn rsqrt_avx512(d2: [f64; LANES]) -> [f64; LANES] {
    use std::arch::x86_64::*;
    let x = _mm512_loadu_pd(d2.as_ptr());
    let half_x = _mm512_mul_pd(x, _mm512_set1_pd(0.5));
    let three_halves = _mm512_set1_pd(1.5);
    let mut y = _mm512_rsqrt14_pd(x);
    for _ in 0..2 {
        y = _mm512_mul_pd(y, _mm512_fnmadd_pd(half_x, _mm512_mul_pd(y, y), three_halves));
    }
    let mut out = [0.0; LANES];
    _mm512_storeu_pd(out.as_mut_ptr(), y);
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn isa() -> Isa {
    static ISA: std::sync::OnceLock<Isa> = std::sync::OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        if std::env::var_os("BALFMM_PORTABLE_P2P").is_none() && is_x86_feature_detected!("avx512f") {
            return Isa::Avx512;
        }
        Isa::Portable
    })
}

/// Runs `$body` with `$k` bound to the detected kernel, compiled with the
/// matching target features.
macro_rules! dispatch {
    (|$k:ident| $body:expr) => {{
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f")]
        unsafe fn wide<R>(f: impl FnOnce(Avx512) -> R) -> R {
            f(Avx512)
        }
        match isa() {
            #[cfg(target_arch = "x86_64")]
            // SAFETY: isa() reports avx512f support
            Isa::Avx512 => unsafe { wide(|$k| $body) },
            Isa::Portable => {
                let $k = Portable;
                $body
            }
        }
    }};
}

/// Squared distances from `x` to up to one lane block of points. Missing
/// lanes read 1.0.
#[inline(always)]
fn dist2(x: Vec3, xs: &[f64], ys: &[f64], zs: &[f64]) -> [f64; LANES] {
    let mut out = [1.0; LANES];
    for l in 0..xs.len().min(LANES) {
        let (dx, dy, dz) = (x[0] - xs[l], x[1] - ys[l], x[2] - zs[l]);
        out[l] = dx * dx + dy * dy + dz * dz;
    }
    out
}

#[inline(always)]
fn pad(v: &[f64]) -> [f64; LANES] {
    let mut out = [0.0; LANES];
    out[..v.len()].copy_from_slice(v);
    out
}

#[inline(always)]
fn reduce(acc: f64, lane: [f64; LANES]) -> f64 {
    acc + (((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])))
}

#[inline(always)]
fn lane_min(v: [f64; LANES]) -> f64 {
    v.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// `acc + Σ_k m_k / |x - x_k|` over `cols[r]` in a fixed lane order. When
/// `scatter` is given as `(out, mi)`, also adds `mi / |x - x_k|` to `out[k]`.
/// Returns the sum and the smallest squared distance.
#[inline(always)]
fn row_sum<K: InvSqrt>(k: K, x: Vec3, cols: &SourceColumns, r: Range<usize>, acc: f64, mut scatter: Option<(&mut [f64], f64)>) -> (f64, f64) {
    let (xs, ys, zs, ms) = (&cols.x[r.clone()], &cols.y[r.clone()], &cols.z[r.clone()], &cols.m[r]);
    let mut lane = [0.0; LANES];
    let mut near = [f64::INFINITY; LANES];
    let full = xs.len() - xs.len() % LANES;
    for b in (0..full).step_by(LANES) {
        let d2 = dist2(x, &xs[b..b + LANES], &ys[b..b + LANES], &zs[b..b + LANES]);
        let inv = k.inv(d2);
        let m = &ms[b..b + LANES];
        for l in 0..LANES {
            lane[l] += m[l] * inv[l];
            near[l] = near[l].min(d2[l]);
        }
        if let Some((out, mi)) = scatter.as_mut() {
            let o = &mut out[b..b + LANES];
            for l in 0..LANES {
                o[l] += *mi * inv[l];
            }
        }
    }
    if full < xs.len() {
        let d2 = dist2(x, &xs[full..], &ys[full..], &zs[full..]);
        let inv = k.inv(d2);
        let m = pad(&ms[full..]);
        for l in 0..LANES {
            lane[l] += m[l] * inv[l];
            near[l] = near[l].min(d2[l]);
        }
        if let Some((out, mi)) = scatter {
            for (o, v) in out[full..xs.len()].iter_mut().zip(inv) {
                *o += mi * v;
            }
        }
    }
    (reduce(acc, lane), lane_min(near))
}

/// Index in `r` of the point closest to `x`, skipping id `skip`.
fn nearest(cols: &SourceColumns, r: impl Iterator<Item = usize>, x: Vec3, skip: Option<u64>) -> Option<usize> {
    r.filter(|&j| Some(cols.ids[j]) != skip)
        .map(|j| (dist2(x, &cols.x[j..j + 1], &cols.y[j..j + 1], &cols.z[j..j + 1])[0], j))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, j)| j)
}

/// Adds the interactions of every unordered source pair between leaves `a`
/// and `b` (within leaf `a` when `a == b`) to both sides.
pub fn p2p_symmetric(cols: &SourceColumns, a: Range<usize>, b: Range<usize>, phi: &mut [f64]) -> Result<u64> {
    if a.is_empty() || b.is_empty() {
        return Ok(0);
    }
    let touching = dispatch!(|k| symmetric_rows(k, cols, &a, &b, phi));
    if let Some(i) = touching {
        let other = nearest(cols, a.clone().chain(b.clone()), cols.position(i), Some(cols.ids[i])).map_or(cols.ids[i], |k| cols.ids[k]);
        return Err(coincident(cols.ids[i], other));
    }
    let pairs = if a == b { a.len() * a.len().saturating_sub(1) / 2 } else { a.len() * b.len() };
    Ok(pairs as u64)
}

#[inline(always)]
fn symmetric_rows<K: InvSqrt>(k: K, cols: &SourceColumns, a: &Range<usize>, b: &Range<usize>, phi: &mut [f64]) -> Option<usize> {
    let mut touching = None;
    if a == b {
        for i in a.clone() {
            let (head, tail) = phi.split_at_mut(i + 1);
            let scatter = Some((&mut tail[..a.end - i - 1], cols.m[i]));
            let (acc, near) = row_sum(k, cols.position(i), cols, i + 1..a.end, head[i], scatter);
            head[i] = acc;
            if near < TOUCHING {
                touching.get_or_insert(i);
            }
        }
    } else {
        let (lo, hi) = if a.start < b.start { (a, b) } else { (b, a) };
        debug_assert!(lo.end <= hi.start, "leaf ranges overlap");
        let (front, back) = phi.split_at_mut(hi.start);
        let (phi_lo, phi_hi) = (&mut front[lo.clone()], &mut back[..hi.len()]);
        // iterate the rows of `a` so per-target summation order is fixed by (a, b)
        let (phi_rows, phi_cols) = if a.start < b.start { (phi_lo, phi_hi) } else { (phi_hi, phi_lo) };
        for (r, i) in a.clone().enumerate() {
            let (acc, near) = row_sum(k, cols.position(i), cols, b.clone(), phi_rows[r], Some((&mut *phi_cols, cols.m[i])));
            phi_rows[r] = acc;
            if near < TOUCHING {
                touching.get_or_insert(i);
            }
        }
    }
    touching
}

/// Adds the potential of sources `foreign[r]` at `targets`, one side only.
/// `ids` are the target ids, used for error reporting.
pub fn p2p_asymmetric(targets: &[Vec3], ids: &[u64], foreign: &SourceColumns, r: Range<usize>, phi: &mut [f64]) -> Result<()> {
    let touching = dispatch!(|k| {
        let mut touching = None;
        for (t, &x) in targets.iter().enumerate() {
            let (acc, near) = row_sum(k, x, foreign, r.clone(), phi[t], None);
            if near < TOUCHING {
                touching = Some(t);
                break;
            }
            phi[t] = acc;
        }
        touching
    });
    if let Some(t) = touching {
        let j = nearest(foreign, r, targets[t], None).expect("nonempty source range");
        return Err(coincident(ids[t], foreign.ids[j]));
    }
    Ok(())
}

fn coincident(a: u64, b: u64) -> FmmError {
    FmmError::CoincidentPoints { first: a.min(b), second: a.max(b) }
}

/// Exact sum over all sources at every target, or at every source skipping
/// the self term when `targets` is `None`. Sources are taken in ascending id;
/// a source target sums the lower ids one at a time, then the higher ids in
/// the lane order of the leaf kernels, so a single-leaf run reproduces it
/// bit for bit.
pub fn brute_force(sources: &[Source], targets: Option<&[TargetPoint]>) -> Result<PotentialVector> {
    let mut src = sources.to_vec();
    src.sort_unstable_by_key(|s| s.global_id);
    let cols = SourceColumns::new(&src);
    let n = cols.len();
    let queries: Vec<(Vec3, u64)> = match targets {
        None => (0..n).map(|i| (cols.position(i), cols.ids[i])).collect(),
        Some(t) => t.iter().map(|t| (t.position, t.global_id)).collect(),
    };
    let (pairs, touching) = dispatch!(|k| {
        let mut pairs = Vec::with_capacity(queries.len());
        let mut touching = None;
        for (i, &(x, id)) in queries.iter().enumerate() {
            let (acc, near) = match targets {
                None => {
                    let (acc, near) = lower_sum(k, x, &cols, i);
                    let (acc, upper) = row_sum(k, x, &cols, i + 1..n, acc, None);
                    (acc, near.min(upper))
                }
                Some(_) => row_sum(k, x, &cols, 0..n, 0.0, None),
            };
            if near < TOUCHING {
                touching = Some(i);
                break;
            }
            pairs.push((id, acc));
        }
        (pairs, touching)
    });
    if let Some(i) = touching {
        let (x, id) = queries[i];
        let skip = targets.is_none().then_some(id);
        let j = nearest(&cols, 0..n, x, skip).expect("nonempty sources");
        return Err(coincident(id, cols.ids[j]));
    }
    Ok(PotentialVector::from_pairs(pairs))
}

/// `Σ_{j<i} m_j / |x - x_j|` added one term at a time, and the smallest
/// squared distance.
#[inline(always)]
fn lower_sum<K: InvSqrt>(k: K, x: Vec3, cols: &SourceColumns, i: usize) -> (f64, f64) {
    let mut acc = 0.0;
    let mut near = f64::INFINITY;
    for b in (0..i).step_by(LANES) {
        let e = (b + LANES).min(i);
        let d2 = dist2(x, &cols.x[b..e], &cols.y[b..e], &cols.z[b..e]);
        let inv = k.inv(d2);
        for l in 0..e - b {
            acc += cols.m[b + l] * inv[l];
            near = near.min(d2[l]);
        }
    }
    (acc, near)
}
