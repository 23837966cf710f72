//! Balanced (pyramid) octrees with η-weighted splits, per-level connectivity
//! in compressed column storage, and cross-rank halo matrices.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{classify, Connection, FmmBox, Source, TargetPoint, Vec3};
use crate::transport::{stage, Endpoint, RecvToken, Tag};

/// Tree shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    /// 0 splits at geometric midpoints, 1 at point medians.
    pub eta: f64,
    /// Number of local levels, `>= 1`. Level `l` holds `8^(l-1)` boxes.
    pub levels: usize,
}

impl SplitParams {
    pub fn new(eta: f64, levels: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(FmmError::InvalidParameter(format!("eta = {eta} outside [0, 1]")));
        }
        if levels == 0 || levels > 12 {
            return Err(FmmError::InvalidParameter(format!("levels = {levels} outside [1, 12]")));
        }
        Ok(Self { eta, levels })
    }
}

/// Median of `coords` (mean of the two middle values for even length).
/// Reorders `coords`.
pub fn median(coords: &mut [f64]) -> Option<f64> {
    let n = coords.len();
    if n == 0 {
        return None;
    }
    let (_, upper, _) = coords.select_nth_unstable_by(n / 2, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Some(upper);
    }
    let lower = coords[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lower + upper))
}

/// `(1-η)·midpoint + η·median`, clamped into the open interval `(lo, hi)`.
/// An empty coordinate list yields the midpoint for every η.
pub fn split_plane(coords: &mut [f64], lo: f64, hi: f64, eta: f64) -> f64 {
    debug_assert!(lo < hi);
    let mid = lo + 0.5 * (hi - lo);
    let plane = match median(coords) {
        Some(m) if eta > 0.0 => (1.0 - eta) * mid + eta * m,
        _ => mid,
    };
    let (floor, ceil) = (lo.next_up(), hi.next_down());
    if floor >= ceil {
        mid
    } else {
        plane.clamp(floor, ceil)
    }
}

fn stable_partition<T: Copy>(items: &mut [T], scratch: &mut Vec<T>, lower: impl Fn(&T) -> bool) -> usize {
    scratch.clear();
    let mut k = 0;
    for i in 0..items.len() {
        let it = items[i];
        if lower(&it) {
            items[k] = it;
            k += 1;
        } else {
            scratch.push(it);
        }
    }
    items[k..].copy_from_slice(scratch);
    k
}

/// Splits `parent` into 8 children (x first, then y in each half, then z in
/// each quadrant) and stably reorders `items` so each child's items are
/// contiguous. Child `4·ix + 2·iy + iz` is the upper half on an axis when its
/// bit is set; points on a plane go to the upper side.
pub fn split_items<T: Copy>(
    parent: &FmmBox,
    items: &mut [T],
    pos: impl Fn(&T) -> Vec3 + Copy,
    eta: f64,
) -> [(FmmBox, Range<usize>); 8] {
    let mut scratch = Vec::with_capacity(items.len());
    let mut coords = Vec::with_capacity(items.len());
    let mut cut = |items: &mut [T], axis: usize, lo: f64, hi: f64| -> (f64, usize) {
        coords.clear();
        coords.extend(items.iter().map(|it| pos(it)[axis]));
        let plane = split_plane(&mut coords, lo, hi, eta);
        let k = stable_partition(items, &mut scratch, |it| pos(it)[axis] < plane);
        (plane, k)
    };
    let mut out: [(FmmBox, Range<usize>); 8] = std::array::from_fn(|_| (*parent, 0..0));
    let (px, kx) = cut(items, 0, parent.lo[0], parent.hi[0]);
    for ix in 0..2 {
        let xr = if ix == 0 { 0..kx } else { kx..items.len() };
        let (xlo, xhi) = if ix == 0 { (parent.lo[0], px) } else { (px, parent.hi[0]) };
        let (py, ky) = cut(&mut items[xr.clone()], 1, parent.lo[1], parent.hi[1]);
        for iy in 0..2 {
            let yr = if iy == 0 { xr.start..xr.start + ky } else { xr.start + ky..xr.end };
            let (ylo, yhi) = if iy == 0 { (parent.lo[1], py) } else { (py, parent.hi[1]) };
            let (pz, kz) = cut(&mut items[yr.clone()], 2, parent.lo[2], parent.hi[2]);
            for iz in 0..2 {
                let zr = if iz == 0 { yr.start..yr.start + kz } else { yr.start + kz..yr.end };
                let (zlo, zhi) = if iz == 0 { (parent.lo[2], pz) } else { (pz, parent.hi[2]) };
                out[4 * ix + 2 * iy + iz] = (FmmBox::from_bounds([xlo, ylo, zlo], [xhi, yhi, zhi]), zr);
            }
        }
    }
    out
}

pub fn split_box(parent: &FmmBox, sources: &mut [Source], eta: f64) -> [(FmmBox, Range<usize>); 8] {
    split_items(parent, sources, |s| s.position, eta)
}

/// One rank's pyramid tree.
#[derive(Debug, Clone)]
pub struct LocalTree {
    pub rank: usize,
    /// `levels[l-1]` holds the `8^(l-1)` boxes of level `l`.
    pub levels: Vec<Vec<FmmBox>>,
    /// Source index ranges (into `sources`) per box, per level.
    pub ranges: Vec<Vec<Range<usize>>>,
    /// Sources in leaf order, ascending `global_id` inside each leaf.
    pub sources: Vec<Source>,
    /// `sources[k]` is input item `point_permutation[k]`.
    pub point_permutation: Vec<usize>,
}

impl LocalTree {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn boxes(&self, level: usize) -> &[FmmBox] {
        &self.levels[level - 1]
    }

    pub fn ranges_at(&self, level: usize) -> &[Range<usize>] {
        &self.ranges[level - 1]
    }

    pub fn leaf_ranges(&self) -> &[Range<usize>] {
        self.ranges.last().expect("at least one level")
    }

    pub fn root(&self) -> &FmmBox {
        &self.levels[0][0]
    }

    pub fn count(&self, level: usize, index: usize) -> usize {
        self.ranges[level - 1][index].len()
    }

    /// Leaf index holding `x`, following the split planes from the root.
    pub fn locate_leaf(&self, x: Vec3) -> usize {
        let mut idx = 0;
        for level in 1..self.levels.len() {
            let kids = &self.levels[level][8 * idx..8 * idx + 8];
            let ix = usize::from(x[0] >= kids[4].lo[0]);
            let iy = usize::from(x[1] >= kids[4 * ix + 2].lo[1]);
            let iz = usize::from(x[2] >= kids[4 * ix + 2 * iy + 1].lo[2]);
            idx = 8 * idx + 4 * ix + 2 * iy + iz;
        }
        idx
    }

    /// Points-per-leaf (min, max, mean).
    pub fn leaf_stats(&self) -> (usize, usize, f64) {
        let counts = self.leaf_ranges().iter().map(Range::len);
        let min = counts.clone().min().unwrap_or(0);
        let max = counts.clone().max().unwrap_or(0);
        let n = self.leaf_ranges().len().max(1);
        (min, max, self.sources.len() as f64 / n as f64)
    }
}

/// Ranges of all ancestor levels from leaf ranges; boxes are contiguous in leaf order.
fn ranges_from_leaves(leaf: Vec<Range<usize>>, levels: usize) -> Vec<Vec<Range<usize>>> {
    let mut out = vec![leaf];
    for _ in 1..levels {
        let below = out.last().unwrap();
        let up: Vec<Range<usize>> =
            below.chunks(8).map(|c| c[0].start..c[7].end).collect();
        out.push(up);
    }
    out.reverse();
    out
}

pub fn build_local_tree(rank: usize, sources: &[Source], root: FmmBox, params: SplitParams) -> LocalTree {
    debug_assert!(sources.iter().all(|s| root.contains_closed(s.position)));
    let mut order: Vec<usize> = (0..sources.len()).collect();
    let pos = |&i: &usize| sources[i].position;
    let mut levels = vec![vec![root]];
    let mut ranges = vec![0..sources.len()];
    for _ in 1..params.levels {
        let parents = levels.last().unwrap();
        let mut kids = Vec::with_capacity(parents.len() * 8);
        let mut kid_ranges = Vec::with_capacity(parents.len() * 8);
        for (b, r) in parents.iter().zip(&ranges) {
            for (child, cr) in split_items(b, &mut order[r.clone()], pos, params.eta) {
                kids.push(child);
                kid_ranges.push(r.start + cr.start..r.start + cr.end);
            }
        }
        levels.push(kids);
        ranges = kid_ranges;
    }
    for r in &ranges {
        order[r.clone()].sort_unstable_by_key(|&i| sources[i].global_id);
    }
    LocalTree {
        rank,
        ranges: ranges_from_leaves(ranges, params.levels),
        levels,
        sources: order.iter().map(|&i| sources[i]).collect(),
        point_permutation: order,
    }
}

/// External evaluation points binned into the leaves of a tree.
#[derive(Debug, Clone)]
pub struct TargetLayout {
    pub targets: Vec<TargetPoint>,
    pub ranges: Vec<Vec<Range<usize>>>,
}

impl TargetLayout {
    pub fn count(&self, level: usize, index: usize) -> usize {
        self.ranges[level - 1][index].len()
    }

    pub fn leaf_ranges(&self) -> &[Range<usize>] {
        self.ranges.last().unwrap()
    }
}

pub fn bin_targets(tree: &LocalTree, targets: &[TargetPoint]) -> TargetLayout {
    let mut keyed: Vec<(usize, TargetPoint)> =
        targets.iter().map(|t| (tree.locate_leaf(t.position), *t)).collect();
    keyed.sort_unstable_by_key(|(leaf, t)| (*leaf, t.global_id));
    let nleaf = tree.leaf_ranges().len();
    let mut counts = vec![0usize; nleaf];
    for (leaf, _) in &keyed {
        counts[*leaf] += 1;
    }
    let mut start = 0;
    let leaf: Vec<Range<usize>> = counts
        .iter()
        .map(|c| {
            let r = start..start + c;
            start += c;
            r
        })
        .collect();
    TargetLayout {
        targets: keyed.into_iter().map(|(_, t)| t).collect(),
        ranges: ranges_from_leaves(leaf, tree.num_levels()),
    }
}

/// One level of the same-rank connectivity relation in compressed column storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsLevel {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub kind: Vec<Connection>,
}

impl CcsLevel {
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, Connection)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()].iter().zip(&self.kind[r]).map(|(&i, &k)| (i as usize, k))
    }

    /// All `(row, col, kind)` entries, column-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Connection)> + '_ {
        (0..self.n).flat_map(move |j| self.column(j).map(move |(i, k)| (i, j, k)))
    }

    pub fn get(&self, i: usize, j: usize) -> Connection {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.row_idx[r.clone()].binary_search(&(i as u32)) {
            Ok(k) => self.kind[r.start + k],
            Err(_) => Connection::Unconnected,
        }
    }

    pub fn count(&self, kind: Connection) -> usize {
        self.kind.iter().filter(|&&k| k == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityMatrix {
    pub levels: Vec<CcsLevel>,
}

impl ConnectivityMatrix {
    pub fn level(&self, l: usize) -> &CcsLevel {
        &self.levels[l - 1]
    }

    pub fn count(&self, l: usize, kind: Connection) -> usize {
        self.level(l).count(kind)
    }
}

pub(crate) fn root_connectivity() -> CcsLevel {
    CcsLevel { n: 1, col_ptr: vec![0, 1], row_idx: vec![0], kind: vec![Connection::Strong] }
}

/// Children of Strong pairs at `parent` level classified at the next level.
pub fn refine_connectivity(parent: &CcsLevel, children: &[FmmBox], theta: f64) -> CcsLevel {
    let n = parent.n * 8;
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut kind = Vec::new();
    col_ptr.push(0);
    for j in 0..parent.n {
        let strong: Vec<usize> =
            parent.column(j).filter(|&(_, k)| k == Connection::Strong).map(|(i, _)| i).collect();
        for b in 0..8 {
            let cj = 8 * j + b;
            for &i in &strong {
                for a in 0..8 {
                    let ci = 8 * i + a;
                    row_idx.push(ci as u32);
                    kind.push(classify(&children[ci], &children[cj], theta));
                }
            }
            col_ptr.push(row_idx.len());
        }
    }
    CcsLevel { n, col_ptr, row_idx, kind }
}

pub fn build_connectivity(tree: &LocalTree, theta: f64) -> ConnectivityMatrix {
    let mut levels = vec![root_connectivity()];
    for l in 2..=tree.num_levels() {
        let next = refine_connectivity(levels.last().unwrap(), tree.boxes(l), theta);
        levels.push(next);
    }
    ConnectivityMatrix { levels }
}

/// Cached geometry of a foreign box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteBox {
    pub center: Vec3,
    pub radius: f64,
}

/// One level of `H_pq`: strong pairs packed from the front, weak from the back.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HaloLevel {
    pub ibox: Vec<u32>,
    pub jbox: Vec<u32>,
    pub n_strong: usize,
    pub n_weak: usize,
    pub foreign: BTreeMap<u32, RemoteBox>,
}

impl HaloLevel {
    pub fn strong_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ibox[..self.n_strong].iter().zip(&self.jbox[..self.n_strong]).map(|(&i, &j)| (i as usize, j as usize))
    }

    pub fn weak_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.ibox.len() - self.n_weak..self.ibox.len();
        self.ibox[r.clone()].iter().zip(&self.jbox[r]).map(|(&i, &j)| (i as usize, j as usize))
    }

    pub fn is_empty(&self) -> bool {
        self.ibox.is_empty()
    }
}

/// Connections from rank `local` to rank `foreign`, per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaloMatrix {
    pub local: usize,
    pub foreign: usize,
    pub levels: Vec<HaloLevel>,
}

impl HaloMatrix {
    pub fn level(&self, l: usize) -> &HaloLevel {
        &self.levels[l - 1]
    }
}

/// How `build_halos` waits on geometry receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaloWait {
    /// Wait in process-number order.
    RankOrder,
    /// Handle whichever receive completes first.
    Completion,
}

const GEOMETRY_RECORD: usize = 4 + 4 * 8;

fn encode_geometry(boxes: &[FmmBox], list: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(list.len() * GEOMETRY_RECORD);
    for &i in list {
        let b = &boxes[i as usize];
        out.extend_from_slice(&i.to_le_bytes());
        for c in b.center {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&b.radius.to_le_bytes());
    }
    out
}

fn decode_geometry(bytes: &[u8]) -> Result<BTreeMap<u32, RemoteBox>> {
    if !bytes.len().is_multiple_of(GEOMETRY_RECORD) {
        return Err(FmmError::Decode(format!("geometry payload of {} bytes", bytes.len())));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
    Ok(bytes
        .chunks_exact(GEOMETRY_RECORD)
        .map(|c| {
            let idx = u32::from_le_bytes(c[0..4].try_into().unwrap());
            (idx, RemoteBox { center: [f(&c[4..12]), f(&c[12..20]), f(&c[20..28])], radius: f(&c[28..36]) })
        })
        .collect())
}

/// Classifies all candidate pairs and packs strong forward, weak backward.
fn pack_pairs(
    candidates: &[(u32, u32)],
    local: &[FmmBox],
    foreign: BTreeMap<u32, RemoteBox>,
    theta: f64,
) -> Result<HaloLevel> {
    let ncon = candidates.len();
    let mut ibox = vec![0u32; ncon];
    let mut jbox = vec![0u32; ncon];
    let (mut fwd, mut bwd) = (0usize, ncon);
    for &(i, j) in candidates {
        let a = &local[i as usize];
        let b = foreign
            .get(&j)
            .ok_or_else(|| FmmError::Protocol(format!("geometry of foreign box {j} missing")))?;
        if crate::geometry::is_weak(a.center, a.radius, b.center, b.radius, theta) {
            bwd -= 1;
            ibox[bwd] = i;
            jbox[bwd] = j;
        } else {
            ibox[fwd] = i;
            jbox[fwd] = j;
            fwd += 1;
        }
    }
    Ok(HaloLevel { ibox, jbox, n_strong: fwd, n_weak: ncon - fwd, foreign })
}

/// Unique children of the local (`side = 0`) or foreign (`side = 1`) boxes in strong pairs.
fn children_of_strong(level: &HaloLevel, foreign_side: bool) -> Vec<u32> {
    let mut v: Vec<u32> = level
        .strong_pairs()
        .map(|(i, j)| if foreign_side { j } else { i } as u32)
        .collect();
    v.sort_unstable();
    v.dedup();
    v.iter().flat_map(|&b| (0..8).map(move |c| 8 * b + c)).collect()
}

/// Collective construction of all halo matrices of this rank. `between_levels`
/// runs after the level-`l` geometry sends are posted and before the waits,
/// which is where local connectivity work overlaps communication.
pub fn build_halos(
    tree: &LocalTree,
    ep: &mut Endpoint,
    theta: f64,
    wait: HaloWait,
    mut between_levels: impl FnMut(usize),
) -> Result<Vec<HaloMatrix>> {
    let p = ep.rank();
    let size = ep.size();
    let peers: Vec<usize> = (0..size).filter(|&q| q != p).collect();
    let mut halos: Vec<HaloMatrix> =
        (0..size).map(|q| HaloMatrix { local: p, foreign: q, levels: Vec::new() }).collect();

    for l in 1..=tree.num_levels() {
        let tag = Tag::new(stage::TREE, l as u32, 0);
        let mut candidates: Vec<Vec<(u32, u32)>> = vec![Vec::new(); size];
        let mut tokens = Vec::with_capacity(peers.len());
        for &q in &peers {
            let ilist: Vec<u32> = if l == 1 {
                candidates[q] = vec![(0, 0)];
                vec![0]
            } else {
                let prev = halos[q].level(l - 1);
                let mut c = Vec::with_capacity(prev.n_strong * 64);
                for (i, j) in prev.strong_pairs() {
                    for a in 0..8 {
                        for b in 0..8 {
                            c.push(((8 * i + a) as u32, (8 * j + b) as u32));
                        }
                    }
                }
                candidates[q] = c;
                children_of_strong(prev, false)
            };
            // an empty ilist still gets a (zero-byte) message so receives always match
            ep.send_nb(q, tag, encode_geometry(tree.boxes(l), &ilist))?;
            tokens.push(ep.recv_nb(q, tag)?);
        }
        halos[p].levels.push(HaloLevel::default());
        between_levels(l);
        let mut handle = |tok: RecvToken, payload: Vec<u8>| -> Result<()> {
            let q = tok.src;
            let foreign = decode_geometry(&payload)?;
            if l > 1 {
                let expect = children_of_strong(halos[q].level(l - 1), true);
                if expect.len() != foreign.len() {
                    return Err(FmmError::Protocol(format!(
                        "rank {q} sent {} boxes at level {l}, expected {}",
                        foreign.len(),
                        expect.len()
                    )));
                }
            }
            let level = pack_pairs(&candidates[q], tree.boxes(l), foreign, theta)?;
            halos[q].levels.push(level);
            Ok(())
        };
        match wait {
            HaloWait::RankOrder => {
                for tok in tokens {
                    let key = RecvToken { src: tok.src, tag: tok.tag };
                    let payload = ep.wait(tok)?;
                    handle(key, payload)?;
                }
            }
            HaloWait::Completion => {
                while !tokens.is_empty() {
                    let (tok, payload) = ep.wait_any(&mut tokens)?;
                    handle(tok, payload)?;
                }
            }
        }
    }
    Ok(halos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bounding_box, partition_sources, PartitionScheme};
    use crate::transport::{memory_cluster, run_ranks};
    use rand::{Rng, SeedableRng};

    fn uniform(n: usize, seed: u64) -> Vec<Source> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Source::new([rng.random(), rng.random(), rng.random()], 1.0, i as u64).unwrap())
            .collect()
    }

    fn unit_box() -> FmmBox {
        FmmBox::from_bounds([0.0; 3], [1.0; 3])
    }

    #[test]
    fn split_plane_examples() {
        let c = [0.0, 1.0, 2.0, 10.0];
        assert_eq!(split_plane(&mut c.clone(), 0.0, 10.0, 0.0), 5.0);
        assert_eq!(split_plane(&mut c.clone(), 0.0, 10.0, 1.0), 1.5);
        assert_eq!(split_plane(&mut c.clone(), 0.0, 10.0, 0.5), 3.25);
        assert_eq!(split_plane(&mut [], 0.0, 10.0, 1.0), 5.0);
        // all points on the lower face: clamped strictly inside
        let p = split_plane(&mut [0.0, 0.0, 0.0], 0.0, 1.0, 1.0);
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn octant_centres_one_per_child() {
        for eta in [0.0, 0.3, 1.0] {
            let mut pts: Vec<Source> = (0..8)
                .map(|k| {
                    let c = |b: usize| if k >> b & 1 == 1 { 0.75 } else { 0.25 };
                    Source::new([c(2), c(1), c(0)], 1.0, k as u64).unwrap()
                })
                .collect();
            let kids = split_box(&unit_box(), &mut pts, eta);
            for (b, r) in &kids {
                assert_eq!(r.len(), 1);
                assert!(b.contains(pts[r.start].position));
            }
        }
    }

    #[test]
    fn geometric_split_gives_equal_children() {
        let mut pts = uniform(1000, 3);
        let kids = split_box(&unit_box(), &mut pts, 0.0);
        for (b, _) in &kids {
            assert_eq!(b.half_widths, kids[0].0.half_widths);
        }
    }

    #[test]
    fn median_split_balances() {
        let mut pts = uniform(10_000, 4);
        let kids = split_box(&unit_box(), &mut pts, 1.0);
        let counts: Vec<usize> = kids.iter().map(|(_, r)| r.len()).collect();
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        assert!(hi - lo <= 7);
        assert!(hi as f64 / lo as f64 <= 1.02);
    }

    #[test]
    fn children_tile_parent() {
        let mut pts = uniform(500, 5);
        let parent = bounding_box(&pts).unwrap();
        let kids = split_box(&parent, &mut pts, 0.7);
        let vol = |b: &FmmBox| (0..3).map(|k| b.hi[k] - b.lo[k]).product::<f64>();
        let total: f64 = kids.iter().map(|(b, _)| vol(b)).sum();
        assert!((total - vol(&parent)).abs() < 1e-12 * vol(&parent));
        for (b, r) in &kids {
            for s in &pts[r.clone()] {
                assert!(b.contains_closed(s.position));
            }
        }
    }

    #[test]
    fn tree_shapes() {
        let pts = uniform(1000, 6);
        let root = bounding_box(&pts).unwrap();
        let t1 = build_local_tree(0, &pts, root, SplitParams::new(1.0, 1).unwrap());
        assert_eq!(t1.leaf_ranges(), &[0..1000]);
        let t3 = build_local_tree(0, &pts, root, SplitParams::new(1.0, 3).unwrap());
        assert_eq!(t3.leaf_ranges().len(), 64);
        for r in t3.leaf_ranges() {
            assert!(r.len() == 15 || r.len() == 16, "{}", r.len());
        }
        for eta in [0.0, 0.5, 1.0] {
            let t = build_local_tree(0, &pts, root, SplitParams::new(eta, 4).unwrap());
            for l in 1..=4 {
                assert_eq!(t.boxes(l).len(), 8usize.pow(l as u32 - 1));
            }
        }
    }

    #[test]
    fn clustered_octant_leaves_empty_siblings() {
        let mut pts = uniform(200, 7);
        for s in &mut pts {
            for c in &mut s.position {
                *c *= 0.4;
            }
        }
        pts.push(Source::new([1.0, 1.0, 1.0], 1.0, 999).unwrap());
        let root = bounding_box(&pts).unwrap();
        let t = build_local_tree(0, &pts, root, SplitParams::new(0.0, 2).unwrap());
        let counts: Vec<usize> = t.leaf_ranges().iter().map(Range::len).collect();
        assert_eq!(counts[0], 200);
        assert_eq!(counts[7], 1);
        assert_eq!(counts[1..7].iter().sum::<usize>(), 0);
    }

    #[test]
    fn permutation_and_leaf_membership() {
        let pts = uniform(3000, 8);
        let root = bounding_box(&pts).unwrap();
        let t = build_local_tree(0, &pts, root, SplitParams::new(0.5, 4).unwrap());
        let mut seen = vec![false; pts.len()];
        for (k, &i) in t.point_permutation.iter().enumerate() {
            assert!(!seen[i]);
            seen[i] = true;
            assert_eq!(t.sources[k], pts[i]);
        }
        for (leaf, r) in t.leaf_ranges().iter().enumerate() {
            let b = &t.boxes(4)[leaf];
            for s in &t.sources[r.clone()] {
                assert!(b.contains_closed(s.position));
                assert_eq!(t.locate_leaf(s.position), leaf);
            }
            assert!(t.sources[r.clone()].windows(2).all(|w| w[0].global_id < w[1].global_id));
        }
        for l in 1..4 {
            for (i, r) in t.ranges_at(l).iter().enumerate() {
                let kids = &t.ranges_at(l + 1)[8 * i..8 * i + 8];
                assert_eq!(r.start, kids[0].start);
                assert_eq!(r.end, kids[7].end);
            }
        }
    }

    #[test]
    fn targets_binned_by_leaf() {
        let pts = uniform(2000, 9);
        let targets: Vec<TargetPoint> = uniform(500, 10)
            .iter()
            .map(|s| TargetPoint { position: s.position, global_id: s.global_id })
            .collect();
        let all = pts.iter().map(|s| s.position).chain(targets.iter().map(|t| t.position));
        let root = crate::geometry::bounding_box_of(all, crate::geometry::BOUNDING_MARGIN).unwrap();
        let t = build_local_tree(0, &pts, root, SplitParams::new(1.0, 3).unwrap());
        let lay = bin_targets(&t, &targets);
        assert_eq!(lay.targets.len(), 500);
        for (leaf, r) in lay.leaf_ranges().iter().enumerate() {
            for x in &lay.targets[r.clone()] {
                assert!(t.boxes(3)[leaf].contains_closed(x.position));
            }
        }
    }

    #[test]
    fn connectivity_examples() {
        let pts = uniform(4000, 11);
        let t = build_local_tree(0, &pts, unit_box(), SplitParams::new(0.0, 2).unwrap());
        let c = build_connectivity(&t, 0.5);
        assert_eq!(c.level(1).entries().collect::<Vec<_>>(), vec![(0, 0, Connection::Strong)]);
        assert_eq!(c.level(2).nnz(), 64);
        assert_eq!(c.count(2, Connection::Strong), 64);

        let t4 = build_local_tree(0, &pts, unit_box(), SplitParams::new(0.0, 4).unwrap());
        let tiny = build_connectivity(&t4, 1e-9);
        for l in 1..=4 {
            assert_eq!(tiny.count(l, Connection::Weak), 0);
            assert_eq!(tiny.level(l).nnz(), 8usize.pow(2 * (l as u32 - 1)));
        }
    }

    #[test]
    fn inheritance_and_symmetry_audit() {
        let pts = uniform(2000, 12);
        let root = bounding_box(&pts).unwrap();
        for (eta, theta) in [(0.0, 0.5), (1.0, 0.4), (0.5, 0.7)] {
            let t = build_local_tree(0, &pts, root, SplitParams::new(eta, 4).unwrap());
            let c = build_connectivity(&t, theta);
            for l in 1..=4 {
                let lv = c.level(l);
                for j in 0..lv.n {
                    assert_eq!(lv.get(j, j), Connection::Strong);
                }
                for (i, j, k) in lv.entries() {
                    assert_eq!(lv.get(j, i), k);
                    assert_eq!(k, classify(&t.boxes(l)[i], &t.boxes(l)[j], theta));
                    if l > 1 {
                        assert_eq!(c.level(l - 1).get(i / 8, j / 8), Connection::Strong);
                    }
                }
                // exhaustive: every admissible pair under strong parents is present
                if l > 1 {
                    let nb = lv.n;
                    for i in 0..nb {
                        for j in 0..nb {
                            let parents = c.level(l - 1).get(i / 8, j / 8);
                            let expect = if parents == Connection::Strong {
                                classify(&t.boxes(l)[i], &t.boxes(l)[j], theta)
                            } else {
                                Connection::Unconnected
                            };
                            assert_eq!(lv.get(i, j), expect);
                        }
                    }
                }
            }
        }
    }

    fn halos_for(
        pts: &[Source],
        ranks: usize,
        scheme: PartitionScheme,
        eta: f64,
        levels: usize,
        wait: HaloWait,
    ) -> Vec<Vec<HaloMatrix>> {
        let part = partition_sources(pts, ranks, scheme, eta).unwrap();
        let params = SplitParams::new(eta, levels).unwrap();
        run_ranks(memory_cluster(ranks), |mut ep| {
            let p = ep.rank();
            let tree = build_local_tree(p, &part.rank_sources[p], part.rank_boxes[p], params);
            build_halos(&tree, &mut ep, 0.5, wait, |_| {}).unwrap()
        })
    }

    #[test]
    fn single_rank_halos_are_empty() {
        let pts = uniform(300, 13);
        let h = halos_for(&pts, 1, PartitionScheme::CubicGrid, 0.0, 3, HaloWait::RankOrder);
        assert!(h[0].iter().all(|m| m.levels.iter().all(HaloLevel::is_empty)));
    }

    #[test]
    fn octant_root_halo_all_strong() {
        let pts = uniform(4000, 14);
        let h = halos_for(&pts, 8, PartitionScheme::CubicGrid, 0.0, 2, HaloWait::RankOrder);
        let roots: usize = h[0].iter().map(|m| m.level(1).ibox.len()).sum();
        let strong: usize = h[0].iter().map(|m| m.level(1).n_strong).sum();
        assert_eq!(roots, 7);
        assert_eq!(strong, 7);
    }

    #[test]
    fn halos_are_transposes() {
        let pts = uniform(3000, 15);
        for (scheme, eta, wait) in [
            (PartitionScheme::CubicGrid, 0.0, HaloWait::RankOrder),
            (PartitionScheme::RecursiveBisection, 1.0, HaloWait::Completion),
        ] {
            let h = halos_for(&pts, 8, scheme, eta, 4, wait);
            for p in 0..8 {
                for q in 0..8 {
                    for l in 1..=4 {
                        let a = h[p][q].level(l);
                        let b = h[q][p].level(l);
                        assert_eq!(a.ibox.len(), a.n_strong + a.n_weak);
                        let set = |lv: &HaloLevel, flip: bool| {
                            let mut s: Vec<(usize, usize, bool)> = lv
                                .strong_pairs()
                                .map(|x| (x, true))
                                .chain(lv.weak_pairs().map(|x| (x, false)))
                                .map(|((i, j), k)| if flip { (j, i, k) } else { (i, j, k) })
                                .collect();
                            s.sort_unstable();
                            s
                        };
                        assert_eq!(set(a, false), set(b, true));
                        if l > 1 {
                            assert!(a.ibox.len() <= 64 * h[p][q].level(l - 1).n_strong);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn halo_wait_modes_agree() {
        let pts = uniform(2000, 16);
        let a = halos_for(&pts, 8, PartitionScheme::CubicGrid, 0.0, 3, HaloWait::RankOrder);
        let b = halos_for(&pts, 8, PartitionScheme::CubicGrid, 0.0, 3, HaloWait::Completion);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SplitParams::new(1.5, 3).is_err());
        assert!(SplitParams::new(0.5, 0).is_err());
    }
}
