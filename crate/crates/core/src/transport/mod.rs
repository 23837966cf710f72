//! Non-blocking point-to-point messaging between logical ranks.
//!
//! Two backends share one [`Endpoint`]: an in-process backend where every
//! rank is a thread connected by unbounded queues, and a TCP backend with one
//! connection per ordered rank pair. Both feed arriving messages into a
//! per-endpoint mailbox keyed by `(source rank, tag)`.

mod memory;
mod tcp;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};

pub use memory::memory_cluster;
pub use tcp::{connect_roster, local_tcp_cluster, read_roster, FRAME_HEADER_LEN, HANDSHAKE_MAGIC};

/// Default idle time before a blocked wait is declared a deadlock.
pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(60);

/// Message tag: `(stage, level, purpose)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    pub stage: u32,
    pub level: u32,
    pub purpose: u32,
}

impl Tag {
    pub const fn new(stage: u32, level: u32, purpose: u32) -> Self {
        Self { stage, level, purpose }
    }
}

pub mod stage {
    pub const ALLOC: u32 = 0;
    pub const TREE: u32 = 1;
    pub const M2LH: u32 = 2;
    pub const P2P: u32 = 3;
    pub const GATHER: u32 = 4;
    pub const TEST: u32 = 100;
    pub const BARRIER: u32 = u32::MAX;
}

#[derive(Debug, Clone)]
pub struct Message {
    pub src: usize,
    pub tag: Tag,
    pub payload: Vec<u8>,
}

pub(crate) enum Incoming {
    Message(Message),
    Failure(String),
}

/// Handle for a posted send. Memory sends complete at hand-off; TCP sends
/// complete once the writer thread has flushed the frame.
#[derive(Debug, Clone)]
pub struct SendToken {
    done: Arc<AtomicBool>,
}

impl SendToken {
    pub fn is_complete(&self) -> bool {
        self.done.load(Ordering::Acquire)
    }
}

/// Handle for a posted receive, matched on `(src, tag)`.
#[derive(Debug, PartialEq, Eq)]
pub struct RecvToken {
    pub src: usize,
    pub tag: Tag,
}

pub(crate) enum Outgoing {
    Memory(Vec<Sender<Incoming>>),
    Tcp {
        queues: Vec<Option<Sender<(Message, Arc<AtomicBool>)>>>,
        writers: Vec<JoinHandle<()>>,
    },
}

/// Per-stage send counters.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrafficCount {
    pub messages: u64,
    pub bytes: u64,
}

pub struct Endpoint {
    rank: usize,
    size: usize,
    outgoing: Outgoing,
    incoming: Receiver<Incoming>,
    mailbox: HashMap<(usize, Tag), VecDeque<Vec<u8>>>,
    seen: HashSet<(usize, Tag)>,
    posted: HashSet<(usize, Tag)>,
    watchdog: Duration,
    barrier_epoch: u32,
    sent: BTreeMap<u32, TrafficCount>,
    received: BTreeMap<u32, TrafficCount>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("rank", &self.rank).field("size", &self.size).finish()
    }
}

impl Endpoint {
    pub(crate) fn new(rank: usize, size: usize, outgoing: Outgoing, incoming: Receiver<Incoming>) -> Self {
        Self {
            rank,
            size,
            outgoing,
            incoming,
            mailbox: HashMap::new(),
            seen: HashSet::new(),
            posted: HashSet::new(),
            watchdog: DEFAULT_WATCHDOG,
            barrier_epoch: 0,
            sent: BTreeMap::new(),
            received: BTreeMap::new(),
        }
    }

    /// A single-rank endpoint; every point-to-point call is an error.
    pub fn solo() -> Self {
        memory_cluster(1).pop().expect("one endpoint")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set_watchdog(&mut self, timeout: Duration) {
        self.watchdog = timeout;
    }

    pub fn watchdog(&self) -> Duration {
        self.watchdog
    }

    pub fn sent_traffic(&self) -> &BTreeMap<u32, TrafficCount> {
        &self.sent
    }

    pub fn received_traffic(&self) -> &BTreeMap<u32, TrafficCount> {
        &self.received
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.size || peer == self.rank {
            return Err(FmmError::UnknownRank { rank: peer, size: self.size });
        }
        Ok(())
    }

    pub fn send_nb(&mut self, dest: usize, tag: Tag, payload: Vec<u8>) -> Result<SendToken> {
        self.check_peer(dest)?;
        let entry = self.sent.entry(tag.stage).or_default();
        entry.messages += 1;
        entry.bytes += payload.len() as u64;
        let msg = Message { src: self.rank, tag, payload };
        match &self.outgoing {
            Outgoing::Memory(peers) => {
                peers[dest]
                    .send(Incoming::Message(msg))
                    .map_err(|_| FmmError::Transport(format!("rank {dest} has shut down")))?;
                Ok(SendToken { done: Arc::new(AtomicBool::new(true)) })
            }
            Outgoing::Tcp { queues, .. } => {
                let done = Arc::new(AtomicBool::new(false));
                queues[dest]
                    .as_ref()
                    .ok_or_else(|| FmmError::Transport(format!("no connection to rank {dest}")))?
                    .send((msg, done.clone()))
                    .map_err(|_| FmmError::Transport(format!("writer for rank {dest} has stopped")))?;
                Ok(SendToken { done })
            }
        }
    }

    pub fn recv_nb(&mut self, src: usize, tag: Tag) -> Result<RecvToken> {
        self.check_peer(src)?;
        if !self.posted.insert((src, tag)) {
            return Err(FmmError::Protocol(format!("receive from {src} with {tag:?} posted twice")));
        }
        Ok(RecvToken { src, tag })
    }

    fn accept(&mut self, incoming: Incoming) -> Result<()> {
        match incoming {
            Incoming::Message(msg) => {
                let key = (msg.src, msg.tag);
                if !self.seen.insert(key) {
                    return Err(FmmError::Protocol(format!(
                        "duplicate message from rank {} with {:?}",
                        msg.src, msg.tag
                    )));
                }
                self.mailbox.entry(key).or_default().push_back(msg.payload);
                Ok(())
            }
            Incoming::Failure(why) => Err(FmmError::Transport(why)),
        }
    }

    fn progress(&mut self) -> Result<()> {
        loop {
            match self.incoming.try_recv() {
                Ok(m) => self.accept(m)?,
                Err(TryRecvError::Empty) => return Ok(()),
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
    }

    fn block_once(&mut self, deadline: Instant, what: &dyn Fn() -> String) -> Result<()> {
        let now = Instant::now();
        if now >= deadline {
            return Err(FmmError::Watchdog { seconds: self.watchdog.as_secs_f64(), what: what() });
        }
        match self.incoming.recv_timeout(deadline - now) {
            Ok(m) => self.accept(m),
            Err(RecvTimeoutError::Timeout) => {
                Err(FmmError::Watchdog { seconds: self.watchdog.as_secs_f64(), what: what() })
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(FmmError::Transport(format!("rank {} lost all peers", self.rank)))
            }
        }
    }

    fn take(&mut self, token: &RecvToken) -> Option<Vec<u8>> {
        let key = (token.src, token.tag);
        let queue = self.mailbox.get_mut(&key)?;
        let payload = queue.pop_front()?;
        if queue.is_empty() {
            self.mailbox.remove(&key);
        }
        self.posted.remove(&key);
        let entry = self.received.entry(token.tag.stage).or_default();
        entry.messages += 1;
        entry.bytes += payload.len() as u64;
        Some(payload)
    }

    /// Non-blocking completion check.
    pub fn test(&mut self, token: &RecvToken) -> Result<bool> {
        self.progress()?;
        Ok(self.mailbox.contains_key(&(token.src, token.tag)))
    }

    /// Blocks until the matching message has arrived and returns its payload.
    pub fn wait(&mut self, token: RecvToken) -> Result<Vec<u8>> {
        self.progress()?;
        let deadline = Instant::now() + self.watchdog;
        loop {
            if let Some(p) = self.take(&token) {
                return Ok(p);
            }
            let (src, tag) = (token.src, token.tag);
            self.block_once(deadline, &|| format!("message from rank {src} with {tag:?}"))?;
        }
    }

    /// Removes and returns some completed token from `pending`, in no
    /// particular order. Every arrived message is eventually returned.
    pub fn wait_any(&mut self, pending: &mut Vec<RecvToken>) -> Result<(RecvToken, Vec<u8>)> {
        if pending.is_empty() {
            return Err(FmmError::Protocol("wait_any on an empty set".into()));
        }
        self.progress()?;
        let deadline = Instant::now() + self.watchdog;
        loop {
            if let Some(i) = pending.iter().position(|t| self.mailbox.contains_key(&(t.src, t.tag))) {
                let token = pending.swap_remove(i);
                let payload = self.take(&token).expect("checked above");
                return Ok((token, payload));
            }
            let n = pending.len();
            self.block_once(deadline, &|| format!("any of {n} pending receives"))?;
        }
    }

    /// Blocks on a posted send until it has been handed to the wire.
    pub fn wait_send(&mut self, token: &SendToken) -> Result<()> {
        let deadline = Instant::now() + self.watchdog;
        while !token.is_complete() {
            if Instant::now() >= deadline {
                return Err(FmmError::Watchdog {
                    seconds: self.watchdog.as_secs_f64(),
                    what: "send completion".into(),
                });
            }
            std::thread::sleep(Duration::from_micros(50));
        }
        Ok(())
    }

    /// Gather-release barrier through rank 0.
    pub fn barrier(&mut self) -> Result<()> {
        if self.size == 1 {
            return Ok(());
        }
        let epoch = self.barrier_epoch;
        self.barrier_epoch += 1;
        let arrive = Tag::new(stage::BARRIER, epoch, 0);
        let release = Tag::new(stage::BARRIER, epoch, 1);
        if self.rank == 0 {
            let mut tokens = Vec::with_capacity(self.size - 1);
            for q in 1..self.size {
                tokens.push(self.recv_nb(q, arrive)?);
            }
            while !tokens.is_empty() {
                self.wait_any(&mut tokens)?;
            }
            for q in 1..self.size {
                self.send_nb(q, release, Vec::new())?;
            }
        } else {
            self.send_nb(0, arrive, Vec::new())?;
            let t = self.recv_nb(0, release)?;
            self.wait(t)?;
        }
        Ok(())
    }

    /// Messages that arrived but were never received.
    pub fn unclaimed(&mut self) -> usize {
        let _ = self.progress();
        self.mailbox.values().map(VecDeque::len).sum()
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        if let Outgoing::Tcp { queues, writers } = &mut self.outgoing {
            queues.clear();
            for w in writers.drain(..) {
                let _ = w.join();
            }
        }
    }
}

/// Runs `body` once per rank on its own thread and collects the results in rank order.
pub fn run_ranks<T, F>(endpoints: Vec<Endpoint>, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(Endpoint) -> T + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|ep| {
                let body = &body;
                std::thread::Builder::new()
                    .name(format!("rank-{}", ep.rank()))
                    .stack_size(16 << 20)
                    .spawn_scoped(scope, move || body(ep))
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    })
}
