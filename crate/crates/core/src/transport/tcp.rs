//! TCP backend. Frames are little-endian `[tag: 3 x u32][len: u64][payload]`,
//! preceded once per connection by `[b"FMMT"][source rank: u32]`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Endpoint, Incoming, Message, Outgoing, Tag, DEFAULT_WATCHDOG};
use crate::error::{FmmError, Result};

pub const HANDSHAKE_MAGIC: &[u8; 4] = b"FMMT";
pub const FRAME_HEADER_LEN: usize = 20;

pub(crate) fn encode_header(tag: Tag, len: usize) -> [u8; FRAME_HEADER_LEN] {
    let mut h = [0u8; FRAME_HEADER_LEN];
    h[0..4].copy_from_slice(&tag.stage.to_le_bytes());
    h[4..8].copy_from_slice(&tag.level.to_le_bytes());
    h[8..12].copy_from_slice(&tag.purpose.to_le_bytes());
    h[12..20].copy_from_slice(&(len as u64).to_le_bytes());
    h
}

pub(crate) fn decode_header(h: &[u8; FRAME_HEADER_LEN]) -> (Tag, u64) {
    let u = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
    let len = u64::from_le_bytes(h[12..20].try_into().unwrap());
    (Tag::new(u(0), u(4), u(8)), len)
}

/// Reads a roster file: one `host:port` per line, line `i` is rank `i`.
/// Blank lines and `#` comments are skipped.
pub fn read_roster(path: &Path) -> Result<Vec<SocketAddr>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.to_socket_addrs()
                .map_err(|e| FmmError::Transport(format!("bad roster entry {l:?}: {e}")))?
                .next()
                .ok_or_else(|| FmmError::Transport(format!("roster entry {l:?} did not resolve")))
        })
        .collect()
}

fn reader_loop(stream: TcpStream, src: usize, tx: Sender<Incoming>) {
    let mut r = BufReader::with_capacity(1 << 16, stream);
    loop {
        let mut header = [0u8; FRAME_HEADER_LEN];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return,
            Err(e) => {
                let _ = tx.send(Incoming::Failure(format!("read from rank {src}: {e}")));
                return;
            }
        }
        let (tag, len) = decode_header(&header);
        let mut payload = vec![0u8; len as usize];
        if let Err(e) = r.read_exact(&mut payload) {
            let _ = tx.send(Incoming::Failure(format!("truncated frame from rank {src}: {e}")));
            return;
        }
        if tx.send(Incoming::Message(Message { src, tag, payload })).is_err() {
            return;
        }
    }
}

fn writer_loop(stream: TcpStream, rx: Receiver<(Message, Arc<AtomicBool>)>) {
    let mut w = BufWriter::with_capacity(1 << 16, stream);
    while let Ok((msg, done)) = rx.recv() {
        let ok = w
            .write_all(&encode_header(msg.tag, msg.payload.len()))
            .and_then(|_| w.write_all(&msg.payload))
            .and_then(|_| if rx.is_empty() { w.flush() } else { Ok(()) });
        if ok.is_err() {
            return;
        }
        done.store(true, Ordering::Release);
    }
    let _ = w.flush();
}

fn accept_loop(listener: TcpListener, expected: usize, tx: Sender<Incoming>) {
    for _ in 0..expected {
        let (mut stream, _) = match listener.accept() {
            Ok(s) => s,
            Err(e) => {
                let _ = tx.send(Incoming::Failure(format!("accept: {e}")));
                return;
            }
        };
        let mut hello = [0u8; 8];
        if let Err(e) = stream.read_exact(&mut hello) {
            let _ = tx.send(Incoming::Failure(format!("handshake: {e}")));
            return;
        }
        if &hello[0..4] != HANDSHAKE_MAGIC {
            let _ = tx.send(Incoming::Failure("handshake magic mismatch".into()));
            return;
        }
        let src = u32::from_le_bytes(hello[4..8].try_into().unwrap()) as usize;
        let _ = stream.set_nodelay(true);
        let tx = tx.clone();
        thread::spawn(move || reader_loop(stream, src, tx));
    }
}

/// Joins a run as `rank`, listening on `listener` and dialling every other
/// roster entry. Connection attempts retry until the watchdog expires.
pub fn connect_roster(rank: usize, roster: &[SocketAddr], listener: TcpListener) -> Result<Endpoint> {
    let size = roster.len();
    if rank >= size {
        return Err(FmmError::UnknownRank { rank, size });
    }
    let (tx, rx) = unbounded();
    {
        let tx = tx.clone();
        thread::spawn(move || accept_loop(listener, size - 1, tx));
    }
    drop(tx);
    let mut queues = Vec::with_capacity(size);
    let mut writers = Vec::with_capacity(size);
    for (q, addr) in roster.iter().enumerate() {
        if q == rank {
            queues.push(None);
            continue;
        }
        let deadline = Instant::now() + DEFAULT_WATCHDOG;
        let mut stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if Instant::now() < deadline => {
                    let _ = e;
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(FmmError::Transport(format!("connect to rank {q} at {addr}: {e}"))),
            }
        };
        stream.set_nodelay(true)?;
        let mut hello = [0u8; 8];
        hello[0..4].copy_from_slice(HANDSHAKE_MAGIC);
        hello[4..8].copy_from_slice(&(rank as u32).to_le_bytes());
        stream.write_all(&hello)?;
        let (qtx, qrx) = unbounded();
        writers.push(thread::spawn(move || writer_loop(stream, qrx)));
        queues.push(Some(qtx));
    }
    Ok(Endpoint::new(rank, size, Outgoing::Tcp { queues, writers }, rx))
}

/// `ranks` endpoints talking over loopback TCP inside this process.
pub fn local_tcp_cluster(ranks: usize) -> Result<Vec<Endpoint>> {
    let listeners: Vec<TcpListener> =
        (0..ranks).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<_>>()?;
    let roster: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr()).collect::<std::io::Result<_>>()?;
    listeners
        .into_iter()
        .enumerate()
        .map(|(rank, l)| connect_roster(rank, &roster, l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let tag = Tag::new(1, 2, 3);
        let h = encode_header(tag, 24);
        assert_eq!(&h[0..4], &1u32.to_le_bytes());
        assert_eq!(&h[12..20], &24u64.to_le_bytes());
        assert_eq!(decode_header(&h), (tag, 24));
    }

    #[test]
    fn roster_parsing() {
        let dir = std::env::temp_dir().join(format!("roster-{}", std::process::id()));
        std::fs::write(&dir, "# ranks\n127.0.0.1:7000\n\n127.0.0.1:7001\n").unwrap();
        let r = read_roster(&dir).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].port(), 7001);
        std::fs::remove_file(dir).unwrap();
    }
}
