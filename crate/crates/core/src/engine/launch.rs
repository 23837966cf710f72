use std::net::{SocketAddr, TcpListener};
use std::time::Instant;

use super::rank::{run_distributed, RankInput, RankOutput};
use super::report::{RunReport, StageReport};
use super::FmmConfig;
use crate::direct::PotentialVector;
use crate::error::{FmmError, Result};
use crate::geometry::{bounding_box_of, partition_in, Partition, Source, TargetPoint, BOUNDING_MARGIN};
use crate::transport::{connect_roster, local_tcp_cluster, memory_cluster, run_ranks, stage, Endpoint, Tag};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub potentials: PotentialVector,
    pub report: RunReport,
}

struct Split {
    partition: Partition,
    targets: Option<Vec<Vec<TargetPoint>>>,
}

fn split(sources: &[Source], targets: Option<&[TargetPoint]>, config: &FmmConfig) -> Result<Split> {
    config.validate()?;
    if sources.is_empty() {
        return Err(FmmError::EmptyInput("sources"));
    }
    let all = sources.iter().map(|s| s.position).chain(targets.unwrap_or(&[]).iter().map(|t| t.position));
    let global = bounding_box_of(all, BOUNDING_MARGIN)?;
    let partition = partition_in(global, sources, config.ranks, config.partition, config.eta)?;
    let targets = targets.map(|t| {
        let mut per = vec![Vec::new(); config.ranks];
        for x in t {
            let r = partition.owner_of(x.position).expect("global box holds every target");
            per[r].push(*x);
        }
        per
    });
    Ok(Split { partition, targets })
}

fn input<'a>(s: &'a Split, rank: usize) -> RankInput<'a> {
    RankInput {
        rank_box: s.partition.rank_boxes[rank],
        sources: &s.partition.rank_sources[rank],
        targets: s.targets.as_ref().map(|t| t[rank].as_slice()),
    }
}

fn finish(config: &FmmConfig, outputs: Vec<RankOutput>, started: Instant) -> RunOutput {
    let (pots, reports): (Vec<_>, Vec<_>) = outputs.into_iter().map(|o| (o.potentials, o.report)).unzip();
    RunOutput {
        potentials: PotentialVector::merge(pots),
        report: RunReport::new(*config, reports, started.elapsed().as_secs_f64()),
    }
}

/// Single rank in the calling thread.
pub fn run_serial(sources: &[Source], targets: Option<&[TargetPoint]>, config: &FmmConfig) -> Result<RunOutput> {
    if config.ranks != 1 {
        return Err(FmmError::InvalidParameter(format!("serial run with {} ranks", config.ranks)));
    }
    let started = Instant::now();
    let s = split(sources, targets, config)?;
    let mut ep = Endpoint::solo();
    let out = run_distributed(input(&s, 0), config, &mut ep)?;
    Ok(finish(config, vec![out], started))
}

/// One thread per endpoint; `endpoints.len()` must equal `config.ranks`.
pub fn run_on_endpoints(
    endpoints: Vec<Endpoint>,
    sources: &[Source],
    targets: Option<&[TargetPoint]>,
    config: &FmmConfig,
) -> Result<RunOutput> {
    let started = Instant::now();
    let s = split(sources, targets, config)?;
    let results = run_ranks(endpoints, |mut ep| {
        let rank = ep.rank();
        run_distributed(input(&s, rank), config, &mut ep)
    });
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(finish(config, outputs, started))
}

pub fn run_memory(sources: &[Source], targets: Option<&[TargetPoint]>, config: &FmmConfig) -> Result<RunOutput> {
    config.validate()?;
    run_on_endpoints(memory_cluster(config.ranks), sources, targets, config)
}

/// All ranks in this process, talking over loopback sockets.
pub fn run_tcp_local(sources: &[Source], targets: Option<&[TargetPoint]>, config: &FmmConfig) -> Result<RunOutput> {
    config.validate()?;
    run_on_endpoints(local_tcp_cluster(config.ranks)?, sources, targets, config)
}

/// This process is `rank` of a roster of processes; every process passes
/// the full input. Rank 0 returns the gathered result.
pub fn run_roster(
    rank: usize,
    roster: &[SocketAddr],
    sources: &[Source],
    targets: Option<&[TargetPoint]>,
    config: &FmmConfig,
) -> Result<Option<RunOutput>> {
    if roster.len() != config.ranks {
        return Err(FmmError::InvalidParameter(format!(
            "roster lists {} ranks, configuration has {}",
            roster.len(),
            config.ranks
        )));
    }
    let started = Instant::now();
    let s = split(sources, targets, config)?;
    let listener = TcpListener::bind(roster.get(rank).ok_or(FmmError::UnknownRank { rank, size: roster.len() })?)?;
    let mut ep = connect_roster(rank, roster, listener)?;
    let out = run_distributed(input(&s, rank), config, &mut ep)?;
    let gathered = gather_potentials(&mut ep, out)?;
    ep.barrier()?;
    Ok(gathered.map(|outs| finish(config, outs, started)))
}

/// Collects every rank's output on rank 0.
pub fn gather_potentials(ep: &mut Endpoint, local: RankOutput) -> Result<Option<Vec<RankOutput>>> {
    let tag = Tag::new(stage::GATHER, 0, 0);
    if ep.rank() != 0 {
        let mut payload = Vec::with_capacity(16 * local.potentials.len());
        let report = serde_json::to_vec(&local.report).map_err(|e| FmmError::Decode(e.to_string()))?;
        payload.extend_from_slice(&(report.len() as u64).to_le_bytes());
        payload.extend_from_slice(&report);
        for (id, v) in local.potentials.ids.iter().zip(&local.potentials.values) {
            payload.extend_from_slice(&id.to_le_bytes());
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let tok = ep.send_nb(0, tag, payload)?;
        ep.wait_send(&tok)?;
        return Ok(None);
    }
    let mut outs = vec![local];
    for q in 1..ep.size() {
        let tok = ep.recv_nb(q, tag)?;
        let bytes = ep.wait(tok)?;
        let bad = || FmmError::Decode(format!("gather payload from rank {q}"));
        let n = u64::from_le_bytes(bytes.get(0..8).ok_or_else(bad)?.try_into().unwrap()) as usize;
        let json = bytes.get(8..8 + n).ok_or_else(bad)?;
        let report: StageReport = serde_json::from_slice(json).map_err(|e| FmmError::Decode(e.to_string()))?;
        let rest = &bytes[8 + n..];
        if rest.len() % 16 != 0 {
            return Err(bad());
        }
        let pairs = rest
            .chunks_exact(16)
            .map(|c| (u64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
            .collect();
        outs.push(RankOutput { potentials: PotentialVector::from_pairs(pairs), report });
    }
    Ok(Some(outs))
}
