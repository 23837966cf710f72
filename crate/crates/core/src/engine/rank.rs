use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Duration;

use num_complex::Complex64;

use super::census::ConnectionCounts;
use super::report::{LeafStats, Stage, StageClock, StageReport};
use super::FmmConfig;
use crate::direct::{p2p_asymmetric, p2p_symmetric, PotentialVector, SourceColumns};
use crate::error::{FmmError, Result};
use crate::geometry::{Connection, FmmBox, Source, TargetPoint, Vec3};
use crate::harmonics::{coefficient_count, decode_record, encode_record, record_len, Translator};
use crate::transport::{stage, Endpoint, RecvToken, Tag};
use crate::treebuild::{
    bin_targets, build_halos, build_local_tree, refine_connectivity, root_connectivity, ConnectivityMatrix,
    HaloMatrix, LocalTree,
};

/// One rank's share of the problem.
#[derive(Debug, Clone, Copy)]
pub struct RankInput<'a> {
    /// Level-1 box of this rank; must hold every source and target below.
    pub rank_box: FmmBox,
    pub sources: &'a [Source],
    /// External evaluation points owned by this rank. `None` evaluates at the sources.
    pub targets: Option<&'a [TargetPoint]>,
}

#[derive(Debug, Clone)]
pub struct RankOutput {
    pub potentials: PotentialVector,
    pub report: StageReport,
}

/// Evaluation sites in leaf order with per-level box ranges.
struct Sites {
    positions: Vec<Vec3>,
    ids: Vec<u64>,
    ranges: Vec<Vec<Range<usize>>>,
    are_sources: bool,
}

impl Sites {
    fn count(&self, level: usize, i: usize) -> usize {
        self.ranges[level - 1][i].len()
    }

    fn leaf(&self, i: usize) -> Range<usize> {
        self.ranges.last().unwrap()[i].clone()
    }
}

/// Flat coefficient storage, one block of `nc` per box per level.
struct Coefficients {
    nc: usize,
    levels: Vec<Vec<Complex64>>,
}

impl Coefficients {
    fn new(tree: &LocalTree, nc: usize) -> Self {
        let levels = (1..=tree.num_levels()).map(|l| vec![Complex64::default(); tree.boxes(l).len() * nc]).collect();
        Self { nc, levels }
    }

    fn get(&self, level: usize, i: usize) -> &[Complex64] {
        &self.levels[level - 1][i * self.nc..(i + 1) * self.nc]
    }

    fn get_mut(&mut self, level: usize, i: usize) -> &mut [Complex64] {
        &mut self.levels[level - 1][i * self.nc..(i + 1) * self.nc]
    }

    /// Box `i` at `level` and box `j` at `level + 1`.
    fn pair_mut(&mut self, level: usize, i: usize, j: usize) -> (&mut [Complex64], &mut [Complex64]) {
        let nc = self.nc;
        let (upper, lower) = self.levels.split_at_mut(level);
        (&mut upper[level - 1][i * nc..(i + 1) * nc], &mut lower[0][j * nc..(j + 1) * nc])
    }
}

const POINT_RECORD: usize = 5 * 8;

fn encode_points(tree: &LocalTree, leaves: &[u32]) -> Vec<u8> {
    let ranges = tree.leaf_ranges();
    let total: usize = leaves.iter().map(|&i| ranges[i as usize].len()).sum();
    let mut out = Vec::with_capacity(leaves.len() * 8 + total * POINT_RECORD);
    for &i in leaves {
        let r = ranges[i as usize].clone();
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&(r.len() as u32).to_le_bytes());
        for s in &tree.sources[r] {
            for c in s.position {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&s.mass.to_le_bytes());
            out.extend_from_slice(&s.global_id.to_le_bytes());
        }
    }
    out
}

fn decode_points(bytes: &[u8]) -> Result<BTreeMap<u32, SourceColumns>> {
    let mut out = BTreeMap::new();
    let mut at = 0;
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    while at < bytes.len() {
        if at + 8 > bytes.len() {
            return Err(FmmError::Decode("truncated point block header".into()));
        }
        let leaf = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as usize;
        at += 8;
        if at + n * POINT_RECORD > bytes.len() {
            return Err(FmmError::Decode(format!("point block for leaf {leaf} overruns payload")));
        }
        let pts: Vec<Source> = (0..n)
            .map(|k| {
                let o = at + k * POINT_RECORD;
                Source {
                    position: [f(o), f(o + 8), f(o + 16)],
                    mass: f(o + 24),
                    global_id: u64::from_le_bytes(bytes[o + 32..o + 40].try_into().unwrap()),
                }
            })
            .collect();
        at += n * POINT_RECORD;
        out.insert(leaf, SourceColumns::new(&pts));
    }
    Ok(out)
}

fn handshake(ep: &mut Endpoint, config: &FmmConfig) -> Result<()> {
    let p = ep.rank();
    let tag = Tag::new(stage::ALLOC, 0, 1);
    let sum = config.checksum();
    let mut pending = Vec::new();
    for q in (0..ep.size()).filter(|&q| q != p) {
        ep.send_nb(q, tag, sum.to_le_bytes().to_vec())?;
        pending.push(ep.recv_nb(q, tag)?);
    }
    while !pending.is_empty() {
        let (tok, payload) = ep.wait_any(&mut pending)?;
        let theirs: [u8; 8] = payload
            .as_slice()
            .try_into()
            .map_err(|_| FmmError::Decode("config checksum payload".into()))?;
        if u64::from_le_bytes(theirs) != sum {
            return Err(FmmError::ConfigMismatch { local: p, remote: tok.src });
        }
    }
    Ok(())
}

/// Tokens from `pending` whose messages have already arrived.
fn take_ready(ep: &mut Endpoint, pending: &mut Vec<RecvToken>) -> Result<Vec<(usize, Vec<u8>)>> {
    let mut ready = Vec::new();
    let mut k = 0;
    while k < pending.len() {
        if ep.test(&pending[k])? {
            let tok = pending.swap_remove(k);
            let src = tok.src;
            ready.push((src, ep.wait(tok)?));
        } else {
            k += 1;
        }
    }
    Ok(ready)
}

fn unique_local(pairs: impl Iterator<Item = (usize, usize)>, keep: impl Fn(usize) -> bool) -> Vec<u32> {
    let mut v: Vec<u32> = pairs.map(|(i, _)| i).filter(|&i| keep(i)).map(|i| i as u32).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn stage_name(id: u32) -> String {
    match id {
        stage::ALLOC => "Alloc".into(),
        stage::TREE => "Tree".into(),
        stage::M2LH => "M2Lh".into(),
        stage::P2P => "P2P".into(),
        stage::GATHER => "Gather".into(),
        stage::BARRIER => "Barrier".into(),
        other => format!("stage-{other}"),
    }
}

/// Runs every stage for one rank. Collective: all ranks of `ep` must call it
/// with the same configuration.
pub fn run_distributed(input: RankInput<'_>, config: &FmmConfig, ep: &mut Endpoint) -> Result<RankOutput> {
    config.validate()?;
    if ep.size() != config.ranks {
        return Err(FmmError::InvalidParameter(format!(
            "configured for {} ranks but the endpoint has {}",
            config.ranks,
            ep.size()
        )));
    }
    ep.set_watchdog(Duration::from_secs_f64(config.watchdog_secs));
    let policy = config.policy()?;
    let p = ep.rank();
    let peers: Vec<usize> = (0..ep.size()).filter(|&q| q != p).collect();
    let mut clock = StageClock::new();

    clock.enter(Stage::Alloc);
    handshake(ep, config)?;

    // tree, local connectivity and halos (local levels are built while halo messages are in flight)
    clock.enter(Stage::Tree);
    let tree = build_local_tree(p, input.sources, input.rank_box, config.split_params()?);
    let levels = tree.num_levels();
    let mut conn_levels = Vec::with_capacity(levels);
    let halos: Vec<HaloMatrix> = build_halos(&tree, ep, config.theta, config.halo_wait, |l| {
        let next = match conn_levels.last() {
            None => root_connectivity(),
            Some(prev) => refine_connectivity(prev, tree.boxes(l), config.theta),
        };
        conn_levels.push(next);
    })?;
    let conn = ConnectivityMatrix { levels: conn_levels };

    clock.enter(Stage::Alloc);
    let sites = match input.targets {
        None => Sites {
            positions: tree.sources.iter().map(|s| s.position).collect(),
            ids: tree.sources.iter().map(|s| s.global_id).collect(),
            ranges: tree.ranges.clone(),
            are_sources: true,
        },
        Some(t) => {
            let lay = bin_targets(&tree, t);
            Sites {
                positions: lay.targets.iter().map(|t| t.position).collect(),
                ids: lay.targets.iter().map(|t| t.global_id).collect(),
                ranges: lay.ranges,
                are_sources: false,
            }
        }
    };
    let q = policy.order;
    let nc = coefficient_count(q);
    let rec_len = record_len(q);
    let mut mult = Coefficients::new(&tree, nc);
    let mut local = Coefficients::new(&tree, nc);
    let mut has_local: Vec<Vec<bool>> = (1..=levels).map(|l| vec![false; tree.boxes(l).len()]).collect();
    let mut tr = Translator::new(q);
    let mut report = StageReport { rank: p, sources: input.sources.len(), targets: sites.ids.len(), ..Default::default() };

    // upward pass
    clock.enter(Stage::P2M);
    for (i, r) in tree.leaf_ranges().iter().enumerate() {
        if r.is_empty() {
            continue;
        }
        let b = &tree.boxes(levels)[i];
        let pts = tree.sources[r.clone()].iter().map(|s| (s.position, s.mass));
        tr.p2m(mult.get_mut(levels, i), b.center, b.radius, pts);
    }
    clock.enter(Stage::M2M);
    for l in (2..=levels).rev() {
        for c in 0..tree.boxes(l).len() {
            if tree.count(l, c) == 0 {
                continue;
            }
            let (pb, cb) = (&tree.boxes(l - 1)[c / 8], &tree.boxes(l)[c]);
            let (parent, child) = mult.pair_mut(l - 1, c / 8, c);
            tr.m2m(parent, pb.center, pb.radius, child, cb.center, cb.radius);
        }
    }

    // downward pass
    for l in 1..=levels {
        clock.enter(Stage::M2Lh);
        let tag = Tag::new(stage::M2LH, l as u32, 0);
        let mut pending = Vec::new();
        for &qr in &peers {
            let h = halos[qr].level(l);
            if h.n_weak == 0 {
                continue;
            }
            let send = unique_local(h.weak_pairs(), |i| tree.count(l, i) > 0);
            let mut payload = Vec::with_capacity(send.len() * rec_len);
            for &i in &send {
                let b = &tree.boxes(l)[i as usize];
                encode_record(l as u32, i, b.center, b.radius, mult.get(l, i as usize), &mut payload);
            }
            ep.send_nb(qr, tag, payload)?;
            pending.push(ep.recv_nb(qr, tag)?);
        }
        let mut staged: BTreeMap<usize, BTreeMap<u32, Vec<Complex64>>> = BTreeMap::new();
        let mut apply_foreign = |src: usize, payload: Vec<u8>, tr: &mut Translator, report: &mut StageReport| -> Result<()> {
            if !payload.len().is_multiple_of(rec_len) {
                return Err(FmmError::Decode(format!("multipole payload of {} bytes from rank {src}", payload.len())));
            }
            let mut records = BTreeMap::new();
            for chunk in payload.chunks_exact(rec_len) {
                let rec = decode_record(chunk, q)?;
                if rec.level != l as u32 {
                    return Err(FmmError::Protocol(format!("rank {src} sent a level-{} expansion at level {l}", rec.level)));
                }
                records.insert(rec.box_index, rec);
            }
            let buf = staged.entry(src).or_default();
            for (i, j) in halos[src].level(l).weak_pairs() {
                if sites.count(l, i) == 0 {
                    continue;
                }
                let Some(rec) = records.get(&(j as u32)) else { continue };
                let b = &tree.boxes(l)[i];
                let out = buf.entry(i as u32).or_insert_with(|| vec![Complex64::default(); nc]);
                tr.m2l(out, b.center, b.radius, &rec.coeffs, rec.center, rec.scale, config.m2l)?;
                report.m2lh_shifts += 1;
            }
            Ok(())
        };

        clock.enter(Stage::M2L);
        let lv = conn.level(l);
        for j in 0..lv.n {
            if tree.count(l, j) > 0 {
                let bj = tree.boxes(l)[j];
                for (i, kind) in lv.column(j) {
                    if kind != Connection::Weak || sites.count(l, i) == 0 {
                        continue;
                    }
                    let bi = &tree.boxes(l)[i];
                    tr.m2l(local.get_mut(l, i), bi.center, bi.radius, mult.get(l, j), bj.center, bj.radius, config.m2l)?;
                    has_local[l - 1][i] = true;
                    report.m2l_shifts += 1;
                }
            }
            if j % 8 == 7 && !pending.is_empty() {
                clock.enter(Stage::M2Lh);
                for (src, payload) in take_ready(ep, &mut pending)? {
                    apply_foreign(src, payload, &mut tr, &mut report)?;
                }
                clock.enter(Stage::M2L);
            }
        }
        clock.enter(Stage::M2Lh);
        while !pending.is_empty() {
            let (tok, payload) = ep.wait_any(&mut pending)?;
            apply_foreign(tok.src, payload, &mut tr, &mut report)?;
        }
        for (_, boxes) in staged {
            for (i, buf) in boxes {
                for (a, b) in local.get_mut(l, i as usize).iter_mut().zip(&buf) {
                    *a += b;
                }
                has_local[l - 1][i as usize] = true;
            }
        }

        if l < levels {
            clock.enter(Stage::L2L);
            for i in 0..tree.boxes(l).len() {
                if !has_local[l - 1][i] {
                    continue;
                }
                let pb = tree.boxes(l)[i];
                for c in 8 * i..8 * i + 8 {
                    if sites.count(l + 1, c) == 0 {
                        continue;
                    }
                    let cb = &tree.boxes(l + 1)[c];
                    let (parent, child) = local.pair_mut(l, i, c);
                    tr.l2l(child, cb.center, cb.radius, parent, pb.center, pb.radius);
                    has_local[l][c] = true;
                }
            }
        }
    }

    // evaluation
    clock.enter(Stage::P2P);
    let tag = Tag::new(stage::P2P, levels as u32, 0);
    let mut pending = Vec::new();
    for &qr in &peers {
        let h = halos[qr].level(levels);
        if h.n_strong == 0 {
            continue;
        }
        let send = unique_local(h.strong_pairs(), |i| tree.count(levels, i) > 0);
        ep.send_nb(qr, tag, encode_points(&tree, &send))?;
        pending.push(ep.recv_nb(qr, tag)?);
    }

    clock.enter(Stage::L2P);
    let mut phi = vec![0.0; sites.ids.len()];
    for (i, &has) in has_local[levels - 1].iter().enumerate() {
        if !has {
            continue;
        }
        let b = &tree.boxes(levels)[i];
        let coeffs = local.get(levels, i);
        for k in sites.leaf(i) {
            phi[k] = tr.l2p(coeffs, b.center, b.radius, sites.positions[k]);
        }
    }

    clock.enter(Stage::P2P);
    let leaf = conn.level(levels);
    let ranges = tree.leaf_ranges();
    let cols = SourceColumns::new(&tree.sources);
    for j in 0..leaf.n {
        for (i, kind) in leaf.column(j) {
            if kind != Connection::Strong {
                continue;
            }
            if sites.are_sources {
                if i <= j {
                    p2p_symmetric(&cols, ranges[i].clone(), ranges[j].clone(), &mut phi)?;
                }
            } else {
                let r = sites.leaf(i);
                p2p_asymmetric(&sites.positions[r.clone()], &sites.ids[r.clone()], &cols, ranges[j].clone(), &mut phi[r])?;
            }
        }
    }
    let mut foreign: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    while !pending.is_empty() {
        let (tok, payload) = ep.wait_any(&mut pending)?;
        let pts = decode_points(&payload)?;
        let buf = foreign.entry(tok.src).or_insert_with(|| vec![0.0; phi.len()]);
        for (i, j) in halos[tok.src].level(levels).strong_pairs() {
            let Some(src) = pts.get(&(j as u32)) else { continue };
            let r = sites.leaf(i);
            p2p_asymmetric(&sites.positions[r.clone()], &sites.ids[r.clone()], src, 0..src.len(), &mut buf[r])?;
        }
    }
    for buf in foreign.values() {
        for (a, b) in phi.iter_mut().zip(buf) {
            *a += b;
        }
    }
    clock.stop();

    let (min, max, mean) = tree.leaf_stats();
    report.leaf_points = LeafStats { min, max, mean };
    let counts = ConnectionCounts::tally(&conn, &halos, p, levels);
    report.n_near = counts.n_near;
    report.n_far = counts.n_far;
    report.n_near_halo = counts.n_near_halo;
    report.n_far_halo = counts.n_far_halo;
    report.messages = ep.sent_traffic().iter().map(|(&k, &v)| (stage_name(k), v)).collect();
    report.stages = clock.stages;

    let potentials = PotentialVector::from_pairs(sites.ids.iter().copied().zip(phi).collect());
    Ok(RankOutput { potentials, report })
}
