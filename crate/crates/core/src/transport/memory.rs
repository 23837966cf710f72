use crossbeam_channel::unbounded;

use super::{Endpoint, Outgoing};

/// `ranks` endpoints connected through in-process unbounded queues.
pub fn memory_cluster(ranks: usize) -> Vec<Endpoint> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..ranks).map(|_| unbounded()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(rank, rx)| Endpoint::new(rank, ranks, Outgoing::Memory(senders.clone()), rx))
        .collect()
}
