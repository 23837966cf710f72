//! Points, axis-aligned boxes, the θ-criterion and rank partitioning.

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::treebuild::split_plane;

pub type Vec3 = [f64; 3];

/// Relative margin (of the largest extent) added around every bounding box.
pub const BOUNDING_MARGIN: f64 = 1e-6;
/// Half-width floor for collapsed axes, relative to the global box radius.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// A point mass. `global_id` survives every reordering and repartitioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub position: Vec3,
    pub mass: f64,
    pub global_id: u64,
}

impl Source {
    pub fn new(position: Vec3, mass: f64, global_id: u64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(FmmError::InvalidParameter(format!(
                "source {global_id} has non-positive mass {mass}"
            )));
        }
        if position.iter().any(|c| !c.is_finite()) {
            return Err(FmmError::InvalidParameter(format!(
                "source {global_id} has a non-finite coordinate"
            )));
        }
        Ok(Self { position, mass, global_id })
    }
}

/// An evaluation site that carries no mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub position: Vec3,
    pub global_id: u64,
}

/// Axis-aligned box. `lo`/`hi` are the exact faces shared with neighbours;
/// the center and half-widths are derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmmBox {
    pub lo: Vec3,
    pub hi: Vec3,
    pub center: Vec3,
    pub half_widths: Vec3,
    /// Circumscribed-sphere radius, `|half_widths|`.
    pub radius: f64,
}

impl FmmBox {
    pub fn from_bounds(lo: Vec3, hi: Vec3) -> Self {
        let center = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let half_widths = [
            0.5 * (hi[0] - lo[0]),
            0.5 * (hi[1] - lo[1]),
            0.5 * (hi[2] - lo[2]),
        ];
        Self { lo, hi, center, half_widths, radius: norm(half_widths) }
    }

    pub fn from_center(center: Vec3, half_widths: Vec3) -> Self {
        let lo = [
            center[0] - half_widths[0],
            center[1] - half_widths[1],
            center[2] - half_widths[2],
        ];
        let hi = [
            center[0] + half_widths[0],
            center[1] + half_widths[1],
            center[2] + half_widths[2],
        ];
        Self { lo, hi, center, half_widths, radius: norm(half_widths) }
    }

    /// Half-open containment: `lo <= x < hi` on every axis.
    #[inline]
    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] < self.hi[k])
    }

    /// Closed containment, used for the outer faces of a root box.
    #[inline]
    pub fn contains_closed(&self, x: Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }
}

/// Classification of a same-level box pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connection {
    Unconnected,
    Strong,
    Weak,
}

pub fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(FmmError::InvalidParameter(format!("theta = {theta} outside (0, 1)")))
    }
}

/// `R + θ r ≤ θ d` on radii and center distance; zero distance is never weak.
#[inline]
pub fn is_weak(center_a: Vec3, radius_a: f64, center_b: Vec3, radius_b: f64, theta: f64) -> bool {
    let d = distance(center_a, center_b);
    if d == 0.0 {
        return false;
    }
    let (big, small) = if radius_a >= radius_b { (radius_a, radius_b) } else { (radius_b, radius_a) };
    big + theta * small <= theta * d
}

/// Returns `true` when the pair is weakly connected.
pub fn theta_criterion(a: &FmmBox, b: &FmmBox, theta: f64) -> Result<bool> {
    check_theta(theta)?;
    Ok(is_weak(a.center, a.radius, b.center, b.radius, theta))
}

pub fn classify(a: &FmmBox, b: &FmmBox, theta: f64) -> Connection {
    if is_weak(a.center, a.radius, b.center, b.radius, theta) {
        Connection::Weak
    } else {
        Connection::Strong
    }
}

/// Tight box around `points` widened by `margin` times the largest extent on
/// every side. Collapsed axes receive the degenerate floor.
pub fn bounding_box_of(points: impl IntoIterator<Item = Vec3>, margin: f64) -> Result<FmmBox> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in points {
        any = true;
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !any {
        return Err(FmmError::EmptyInput("bounding box of an empty point set"));
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let pad = margin * extent;
    let mut half = [0.0; 3];
    let mut center = [0.0; 3];
    for k in 0..3 {
        center[k] = 0.5 * (lo[k] + hi[k]);
        half[k] = 0.5 * (hi[k] - lo[k]) + pad;
    }
    let scale = norm(half).max(center.iter().fold(0.0_f64, |m, c| m.max(c.abs())));
    let floor = if scale > 0.0 { DEGENERATE_FLOOR * scale } else { DEGENERATE_FLOOR };
    for h in half.iter_mut() {
        if *h < floor {
            *h = floor;
        }
    }
    Ok(FmmBox::from_center(center, half))
}

pub fn bounding_box(sources: &[Source]) -> Result<FmmBox> {
    bounding_box_of(sources.iter().map(|s| s.position), BOUNDING_MARGIN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionScheme {
    /// Equal lattice of `P^(1/3)` cells per axis; `P` must be a cube.
    CubicGrid,
    /// Orthogonal recursive bisection at η-weighted planes; `P` must be a power of two.
    RecursiveBisection,
}

impl PartitionScheme {
    pub fn name(self) -> &'static str {
        match self {
            PartitionScheme::CubicGrid => "cubic-grid",
            PartitionScheme::RecursiveBisection => "recursive-bisection",
        }
    }
}

pub fn integer_cube_root(p: usize) -> Option<usize> {
    let mut n = 1;
    while n * n * n < p {
        n += 1;
    }
    (n * n * n == p).then_some(n)
}

/// Sources split among `ranks` level-1 boxes, which tile `global`.
#[derive(Debug, Clone)]
pub struct Partition {
    pub global: FmmBox,
    pub rank_boxes: Vec<FmmBox>,
    pub rank_sources: Vec<Vec<Source>>,
}

impl Partition {
    /// Rank whose (half-open) box holds `x`. Points on the global upper faces
    /// belong to the last cell on that axis.
    pub fn owner_of(&self, x: Vec3) -> Option<usize> {
        self.rank_boxes
            .iter()
            .position(|b| {
                (0..3).all(|k| {
                    x[k] >= b.lo[k] && (x[k] < b.hi[k] || (b.hi[k] == self.global.hi[k] && x[k] <= b.hi[k]))
                })
            })
    }
}

pub fn partition_sources(
    sources: &[Source],
    ranks: usize,
    scheme: PartitionScheme,
    eta: f64,
) -> Result<Partition> {
    let global = bounding_box(sources)?;
    partition_in(global, sources, ranks, scheme, eta)
}

/// Partition inside a caller-supplied global box (which must hold every source).
pub fn partition_in(
    global: FmmBox,
    sources: &[Source],
    ranks: usize,
    scheme: PartitionScheme,
    eta: f64,
) -> Result<Partition> {
    if ranks == 0 {
        return Err(FmmError::IncompatibleRankCount { ranks, scheme: scheme.name() });
    }
    match scheme {
        PartitionScheme::CubicGrid => cubic_grid(global, sources, ranks),
        PartitionScheme::RecursiveBisection => {
            if !ranks.is_power_of_two() {
                return Err(FmmError::IncompatibleRankCount { ranks, scheme: scheme.name() });
            }
            let mut boxes = Vec::with_capacity(ranks);
            let mut lists = Vec::with_capacity(ranks);
            bisect(global, sources.to_vec(), ranks, 0, eta, &mut boxes, &mut lists);
            Ok(Partition { global, rank_boxes: boxes, rank_sources: lists })
        }
    }
}

fn cubic_grid(global: FmmBox, sources: &[Source], ranks: usize) -> Result<Partition> {
    let n = integer_cube_root(ranks).ok_or(FmmError::IncompatibleRankCount {
        ranks,
        scheme: PartitionScheme::CubicGrid.name(),
    })?;
    // planes[k][i] for i = 0..=n; the outer ones are the global faces
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let (lo, hi) = (global.lo[k], global.hi[k]);
            (0..=n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n => hi,
                    i => lo + (hi - lo) * (i as f64 / n as f64),
                })
                .collect()
        })
        .collect();
    let mut rank_boxes = Vec::with_capacity(ranks);
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let idx = [ix, iy, iz];
                let lo = [planes[0][idx[0]], planes[1][idx[1]], planes[2][idx[2]]];
                let hi = [planes[0][idx[0] + 1], planes[1][idx[1] + 1], planes[2][idx[2] + 1]];
                rank_boxes.push(FmmBox::from_bounds(lo, hi));
            }
        }
    }
    let mut rank_sources = vec![Vec::new(); ranks];
    for s in sources {
        let cell = |k: usize| planes[k][1..n].iter().take_while(|&&p| p <= s.position[k]).count();
        let r = (cell(0) * n + cell(1)) * n + cell(2);
        rank_sources[r].push(*s);
    }
    Ok(Partition { global, rank_boxes, rank_sources })
}

fn bisect(
    region: FmmBox,
    sources: Vec<Source>,
    ranks: usize,
    depth: usize,
    eta: f64,
    boxes: &mut Vec<FmmBox>,
    lists: &mut Vec<Vec<Source>>,
) {
    if ranks == 1 {
        boxes.push(region);
        lists.push(sources);
        return;
    }
    let axis = depth % 3;
    let mut coords: Vec<f64> = sources.iter().map(|s| s.position[axis]).collect();
    let plane = split_plane(&mut coords, region.lo[axis], region.hi[axis], eta);
    let (lower, upper): (Vec<Source>, Vec<Source>) =
        sources.into_iter().partition(|s| s.position[axis] < plane);
    let mut hi = region.hi;
    hi[axis] = plane;
    let mut lo = region.lo;
    lo[axis] = plane;
    bisect(FmmBox::from_bounds(region.lo, hi), lower, ranks / 2, depth + 1, eta, boxes, lists);
    bisect(FmmBox::from_bounds(lo, region.hi), upper, ranks / 2, depth + 1, eta, boxes, lists);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_sources(n: usize, seed: u64) -> Vec<Source> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Source::new([rng.random(), rng.random(), rng.random()], 1.0, i as u64).unwrap())
            .collect()
    }

    fn ball(center: Vec3, radius: f64) -> FmmBox {
        let h = radius / 3f64.sqrt();
        FmmBox::from_center(center, [h, h, h])
    }

    #[test]
    fn theta_equality_is_weak() {
        let a = ball([0.0; 3], 1.0);
        let b = ball([3.0, 0.0, 0.0], 1.0);
        // the radii carry rounding from the sqrt(3) round trip
        assert!((a.radius - 1.0).abs() < 1e-15);
        assert!(is_weak(a.center, 1.0, b.center, 1.0, 0.5));
        let c = ball([2.9, 0.0, 0.0], 1.0);
        assert!(!theta_criterion(&a, &c, 0.5).unwrap());
        assert!(!theta_criterion(&a, &a, 0.5).unwrap());
        assert!(theta_criterion(&a, &b, 1.0).is_err());
        assert!(theta_criterion(&a, &b, 0.0).is_err());
    }

    #[test]
    fn bounding_box_examples() {
        let s = [
            Source::new([0.0; 3], 1.0, 0).unwrap(),
            Source::new([1.0; 3], 1.0, 1).unwrap(),
        ];
        let b = bounding_box_of(s.iter().map(|s| s.position), 0.0).unwrap();
        assert_eq!(b.center, [0.5; 3]);
        assert_eq!(b.half_widths, [0.5; 3]);
        let single = bounding_box(&s[..1]).unwrap();
        assert!(single.half_widths.iter().all(|&h| h > 0.0));
        assert!(bounding_box(&[]).is_err());

        let pts = unit_sources(1000, 3);
        let b = bounding_box(&pts).unwrap();
        let eps = 2e-6;
        let (mut mn, mut mx) = ([f64::MAX; 3], [f64::MIN; 3]);
        for p in &pts {
            for k in 0..3 {
                mn[k] = mn[k].min(p.position[k]);
                mx[k] = mx[k].max(p.position[k]);
            }
        }
        for k in 0..3 {
            assert!(b.lo[k] >= -eps && b.hi[k] <= 1.0 + eps);
            assert!(b.lo[k] < mn[k] && b.hi[k] > mx[k]);
        }
    }

    #[test]
    fn source_invariants() {
        assert!(Source::new([0.0; 3], 0.0, 0).is_err());
        assert!(Source::new([f64::NAN, 0.0, 0.0], 1.0, 0).is_err());
    }

    #[test]
    fn partition_identity_and_octants() {
        let pts = unit_sources(500, 9);
        let p1 = partition_sources(&pts, 1, PartitionScheme::CubicGrid, 0.5).unwrap();
        assert_eq!(p1.rank_boxes[0], p1.global);
        assert_eq!(p1.rank_sources[0].len(), 500);

        let unit = FmmBox::from_bounds([0.0; 3], [1.0; 3]);
        let p8 = partition_in(unit, &pts, 8, PartitionScheme::CubicGrid, 0.0).unwrap();
        for b in &p8.rank_boxes {
            assert_eq!(b.half_widths, [0.25; 3]);
        }
        assert!(partition_in(unit, &pts, 9, PartitionScheme::CubicGrid, 0.0).is_err());
        assert!(partition_in(unit, &pts, 6, PartitionScheme::RecursiveBisection, 0.0).is_err());
    }

    #[test]
    fn bisection_balances_counts() {
        let pts = unit_sources(4000, 11);
        let p = partition_sources(&pts, 8, PartitionScheme::RecursiveBisection, 1.0).unwrap();
        for list in &p.rank_sources {
            assert!((list.len() as i64 - 500).abs() <= 1, "{}", list.len());
        }
        for (b, list) in p.rank_boxes.iter().zip(&p.rank_sources) {
            assert!(list.iter().all(|s| b.contains_closed(s.position)));
        }
    }

    fn arb_box() -> impl Strategy<Value = FmmBox> {
        (prop::array::uniform3(-10.0..10.0f64), prop::array::uniform3(0.01..3.0f64))
            .prop_map(|(c, h)| FmmBox::from_center(c, h))
    }

    proptest! {
        #[test]
        fn theta_symmetric(a in arb_box(), b in arb_box(), theta in 0.01..0.99f64) {
            prop_assert_eq!(theta_criterion(&a, &b, theta).unwrap(), theta_criterion(&b, &a, theta).unwrap());
        }

        #[test]
        fn theta_monotone(a in arb_box(), b in arb_box(), t1 in 0.01..0.99f64, t2 in 0.01..0.99f64) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let d = distance(a.center, b.center);
            prop_assume!(d > a.radius.min(b.radius));
            if theta_criterion(&a, &b, lo).unwrap() {
                prop_assert!(theta_criterion(&a, &b, hi).unwrap());
            }
        }

        #[test]
        fn partition_complete(n in 1usize..300, seed in 0u64..1000, orb in any::<bool>(), eta in 0.0..=1.0f64) {
            let pts = unit_sources(n, seed);
            let (ranks, scheme) = if orb { (4, PartitionScheme::RecursiveBisection) } else { (8, PartitionScheme::CubicGrid) };
            let p = partition_sources(&pts, ranks, scheme, eta).unwrap();
            let mut ids: Vec<u64> = p.rank_sources.iter().flatten().map(|s| s.global_id).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
        }
    }
}
