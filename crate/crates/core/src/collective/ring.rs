//! Rendezvous and ring all-reduce over TCP.
//!
//! Every message is a frame: a 16-byte header (`magic: u32`, `opcode: u32`,
//! `payload length: u64`, all little-endian) followed by the payload.
//!
//! Rendezvous: rank 0 listens on the group address. Every rank binds its
//! own data listener first, then ranks `1..P` send `JOIN(rank, world,
//! data address)` to rank 0, which answers `TABLE` (every rank's data
//! address, one per line) once all ranks have joined, or `REJECT`. Each rank
//! then connects to its successor, accepts its predecessor, and a token
//! travels once around the ring as a barrier.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const FRAME_MAGIC: u32 = 0x3154_5253; // "SRT1"
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Opcode {
    Join = 1,
    Reject = 2,
    Table = 3,
    Hello = 4,
    Data = 5,
    Barrier = 6,
    Length = 7,
}

impl Opcode {
    fn from_u32(v: u32) -> Option<Self> {
        use Opcode::*;
        [Join, Reject, Table, Hello, Data, Barrier, Length]
            .into_iter()
            .find(|o| *o as u32 == v)
    }
}

pub fn frame_header(op: Opcode, len: u64) -> [u8; 16] {
    let mut h = [0u8; 16];
    h[..4].copy_from_slice(&FRAME_MAGIC.to_le_bytes());
    h[4..8].copy_from_slice(&(op as u32).to_le_bytes());
    h[8..].copy_from_slice(&len.to_le_bytes());
    h
}

pub fn write_frame(w: &mut impl Write, op: Opcode, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&frame_header(op, payload.len() as u64))?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `max_len` bounds the payload allocation.
pub fn read_frame(r: &mut impl Read, max_len: u64) -> std::result::Result<(Opcode, Vec<u8>), FrameError> {
    let mut h = [0u8; 16];
    r.read_exact(&mut h).map_err(FrameError::Io)?;
    let magic = u32::from_le_bytes(h[..4].try_into().unwrap());
    if magic != FRAME_MAGIC {
        return Err(FrameError::Protocol(format!("bad frame magic {magic:#010x}")));
    }
    let code = u32::from_le_bytes(h[4..8].try_into().unwrap());
    let op = Opcode::from_u32(code).ok_or_else(|| FrameError::Protocol(format!("unknown opcode {code}")))?;
    let len = u64::from_le_bytes(h[8..].try_into().unwrap());
    if len > max_len {
        return Err(FrameError::Protocol(format!("frame of {len} bytes exceeds limit {max_len}")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(FrameError::Io)?;
    Ok((op, payload))
}

#[derive(Debug)]
pub enum FrameError {
    Io(std::io::Error),
    Protocol(String),
}

impl FrameError {
    fn into_error(self, rank: usize) -> Error {
        match self {
            FrameError::Io(e) => Error::Communication { rank, msg: e.to_string() },
            FrameError::Protocol(msg) => Error::Protocol(msg),
        }
    }
}

const CONTROL_LIMIT: u64 = 1 << 16;

/// One rank's membership in a ring.
#[derive(Debug)]
pub struct WorkerGroup {
    rank: usize,
    world: usize,
    next: Option<TcpStream>,
    prev: Option<TcpStream>,
}

impl WorkerGroup {
    /// A group of one; all-reduce is the identity.
    pub fn solo() -> Self {
        WorkerGroup {
            rank: 0,
            world: 1,
            next: None,
            prev: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world(&self) -> usize {
        self.world
    }

    pub fn successor(&self) -> usize {
        (self.rank + 1) % self.world
    }

    pub fn predecessor(&self) -> usize {
        (self.rank + self.world - 1) % self.world
    }

    fn links(&mut self) -> (&mut TcpStream, &mut TcpStream) {
        (
            self.next.as_mut().expect("ring link to successor"),
            self.prev.as_mut().expect("ring link from predecessor"),
        )
    }

    /// Sends `payload` to the successor while receiving one frame from the
    /// predecessor.
    fn exchange(&mut self, op: Opcode, payload: &[u8], max_len: u64) -> Result<(Opcode, Vec<u8>)> {
        let (succ, pred) = (self.successor(), self.predecessor());
        let (next, prev) = self.links();
        thread::scope(|s| {
            let sender = s.spawn(move || write_frame(next, op, payload));
            let received = read_frame(prev, max_len).map_err(|e| e.into_error(pred));
            let sent = sender
                .join()
                .expect("sender thread panicked")
                .map_err(|e| Error::Communication { rank: succ, msg: e.to_string() });
            // report the receive error first: it names the peer that went away
            let received = received?;
            sent?;
            Ok(received)
        })
    }

    /// A token travels once around the ring.
    pub fn barrier(&mut self) -> Result<()> {
        if self.world == 1 {
            return Ok(());
        }
        let (succ, pred, first) = (self.successor(), self.predecessor(), self.rank == 0);
        let (next, prev) = self.links();
        let send = |next: &mut TcpStream| {
            write_frame(next, Opcode::Barrier, &[]).map_err(|e| Error::Communication { rank: succ, msg: e.to_string() })
        };
        let recv = |prev: &mut TcpStream| match read_frame(prev, 0) {
            Ok((Opcode::Barrier, _)) => Ok(()),
            Ok((op, _)) => Err(Error::Protocol(format!("expected barrier, got {op:?}"))),
            Err(e) => Err(e.into_error(pred)),
        };
        if first {
            send(next)?;
            recv(prev)
        } else {
            recv(prev)?;
            send(next)
        }
    }

    /// Replaces `buf` on every rank with the elementwise mean over ranks.
    ///
    /// Reduce-scatter then all-gather, `2(P-1)` steps over `P` chunks. Chunk
    /// `c` is summed in rank order `c, c+1, ..., c-1` (mod P) and divided by
    /// `P` on its final owner, exactly as [`reference_mean`] does.
    pub fn allreduce_mean<T: Real>(&mut self, buf: &mut [T]) -> Result<()> {
        let p = self.world;
        if p == 1 {
            return Ok(());
        }
        let n = buf.len();
        let (_, len) = self.exchange(Opcode::Length, &(n as u64).to_le_bytes(), 8)?;
        let theirs = u64::from_le_bytes(
            len.as_slice()
                .try_into()
                .map_err(|_| Error::Protocol("malformed length frame".into()))?,
        );
        if theirs != n as u64 {
            return Err(Error::Protocol(format!(
                "buffer length mismatch: rank {} has {n}, rank {} has {theirs}",
                self.rank,
                self.predecessor()
            )));
        }

        let bounds = |c: usize| (c * n / p, (c + 1) * n / p);
        let max_len = ((n / p + 1) * T::BYTES) as u64;
        let r = self.rank;
        let mut bytes = Vec::new();

        for s in 0..p - 1 {
            let send_c = (r + p - s) % p;
            let recv_c = (r + 2 * p - s - 1) % p;
            let (lo, hi) = bounds(send_c);
            bytes.clear();
            for &x in &buf[lo..hi] {
                x.write_le(&mut bytes);
            }
            let (op, payload) = self.exchange(Opcode::Data, &bytes, max_len)?;
            let (lo, hi) = bounds(recv_c);
            check_data(op, &payload, hi - lo, T::BYTES)?;
            for (x, b) in buf[lo..hi].iter_mut().zip(payload.chunks_exact(T::BYTES)) {
                *x = T::read_le(b) + *x;
            }
        }

        let owned = (r + 1) % p;
        let (lo, hi) = bounds(owned);
        let denom = T::of(p as f64);
        for x in &mut buf[lo..hi] {
            *x = *x / denom;
        }

        for s in 0..p - 1 {
            let send_c = (r + 1 + p - s) % p;
            let recv_c = (r + p - s) % p;
            let (lo, hi) = bounds(send_c);
            bytes.clear();
            for &x in &buf[lo..hi] {
                x.write_le(&mut bytes);
            }
            let (op, payload) = self.exchange(Opcode::Data, &bytes, max_len)?;
            let (lo, hi) = bounds(recv_c);
            check_data(op, &payload, hi - lo, T::BYTES)?;
            for (x, b) in buf[lo..hi].iter_mut().zip(payload.chunks_exact(T::BYTES)) {
                *x = T::read_le(b);
            }
        }
        Ok(())
    }
}

fn check_data(op: Opcode, payload: &[u8], count: usize, width: usize) -> Result<()> {
    if op != Opcode::Data || payload.len() != count * width {
        return Err(Error::Protocol(format!(
            "expected {count} values in a data frame, got {op:?} with {} bytes",
            payload.len()
        )));
    }
    Ok(())
}

/// Tensor form of [`WorkerGroup::allreduce_mean`].
pub fn ring_allreduce<T: Real>(group: &mut WorkerGroup, buffer: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = buffer.clone();
    group.allreduce_mean(out.data_mut())?;
    Ok(out)
}

/// Single-process mean with the ring's exact summation order.
pub fn reference_mean<T: Real>(buffers: &[Vec<T>]) -> Result<Vec<T>> {
    let p = buffers.len();
    let n = buffers.first().map_or(0, |b| b.len());
    if p == 0 || buffers.iter().any(|b| b.len() != n) {
        return Err(Error::Protocol("buffers differ in length".into()));
    }
    if p == 1 {
        return Ok(buffers[0].clone());
    }
    let denom = T::of(p as f64);
    let mut out = vec![T::zero(); n];
    for c in 0..p {
        for i in c * n / p..(c + 1) * n / p {
            let mut acc = buffers[c][i];
            for k in 1..p {
                acc = buffers[(c + k) % p][i] + acc;
            }
            out[i] = acc / denom;
        }
    }
    Ok(out)
}

fn resolve(address: &str) -> Result<SocketAddr> {
    address
        .to_socket_addrs()
        .map_err(|e| Error::InvalidArgument(format!("cannot resolve {address:?}: {e}")))?
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{address:?} resolves to nothing")))
}

fn accept_until(listener: &TcpListener, deadline: Instant, what: &str) -> Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Timeout(format!("waiting for {what}")));
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn connect_until(addr: SocketAddr, deadline: Instant, what: &str) -> Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(Error::Timeout(format!("connecting to {what} at {addr}: {e}")));
                }
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn u64_at(b: &[u8], i: usize) -> Option<u64> {
    b.get(8 * i..8 * i + 8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
}

/// Joins (or, for rank 0, hosts) a group of `world` ranks at `address`.
pub fn rendezvous(world: usize, address: &str, rank: usize, timeout: Duration) -> Result<WorkerGroup> {
    if world == 0 || rank >= world {
        return Err(Error::InvalidArgument(format!("rank {rank} outside world of {world}")));
    }
    if world == 1 {
        return Ok(WorkerGroup::solo());
    }
    let deadline = Instant::now() + timeout;
    let addr = resolve(address)?;

    let (data_listener, table) = if rank == 0 {
        let control = TcpListener::bind(addr).map_err(|e| {
            if e.kind() == ErrorKind::AddrInUse {
                Error::DuplicateRank(0)
            } else {
                e.into()
            }
        })?;
        let data = TcpListener::bind(SocketAddr::new(addr.ip(), 0))?;
        let table = host(&control, world, data.local_addr()?, deadline)?;
        (data, table)
    } else {
        join(addr, world, rank, deadline)?
    };

    let succ = (rank + 1) % world;
    let pred = (rank + world - 1) % world;
    let mut next = connect_until(table[succ], deadline, "successor")?;
    next.set_nodelay(true)?;
    write_frame(&mut next, Opcode::Hello, &(rank as u64).to_le_bytes())
        .map_err(|e| Error::Communication { rank: succ, msg: e.to_string() })?;
    let mut prev = accept_until(&data_listener, deadline, "predecessor")?;
    prev.set_nodelay(true)?;
    prev.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))?;
    match read_frame(&mut prev, 8) {
        Ok((Opcode::Hello, p)) if u64_at(&p, 0) == Some(pred as u64) => {}
        Ok((op, p)) => {
            return Err(Error::Protocol(format!(
                "expected hello from rank {pred}, got {op:?} {:?}",
                u64_at(&p, 0)
            )))
        }
        Err(e) => return Err(e.into_error(pred)),
    }
    prev.set_read_timeout(None)?;

    let mut group = WorkerGroup {
        rank,
        world,
        next: Some(next),
        prev: Some(prev),
    };
    group.barrier()?;
    Ok(group)
}

fn host(control: &TcpListener, world: usize, own: SocketAddr, deadline: Instant) -> Result<Vec<SocketAddr>> {
    let mut table: Vec<Option<SocketAddr>> = vec![None; world];
    table[0] = Some(own);
    let mut members: Vec<TcpStream> = Vec::new();
    while table.iter().any(Option::is_none) {
        let mut s = accept_until(control, deadline, "workers to join")?;
        s.set_read_timeout(Some(Duration::from_secs(5)))?;
        let (op, p) = match read_frame(&mut s, CONTROL_LIMIT) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("dropping malformed join: {e:?}");
                continue;
            }
        };
        let parsed = (op == Opcode::Join)
            .then(|| (u64_at(&p, 0), u64_at(&p, 1), p.get(16..).and_then(|a| std::str::from_utf8(a).ok())))
            .and_then(|(r, w, a)| Some((r? as usize, w? as usize, a?.parse::<SocketAddr>().ok()?)));
        let reply_err = |s: &mut TcpStream, msg: String| {
            log::warn!("rejecting join: {msg}");
            let _ = write_frame(s, Opcode::Reject, msg.as_bytes());
        };
        match parsed {
            None => reply_err(&mut s, "malformed join".into()),
            Some((_, w, _)) if w != world => reply_err(&mut s, format!("world size {w} != {world}")),
            Some((r, _, _)) if r >= world => reply_err(&mut s, format!("rank {r} outside world of {world}")),
            Some((r, _, _)) if table[r].is_some() => reply_err(&mut s, format!("rank {r} already joined")),
            Some((r, _, a)) => {
                table[r] = Some(a);
                members.push(s);
            }
        }
    }
    let table: Vec<SocketAddr> = table.into_iter().map(|a| a.expect("filled")).collect();
    let text = table.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("\n");
    for mut m in members {
        write_frame(&mut m, Opcode::Table, text.as_bytes())?;
    }
    Ok(table)
}

fn join(addr: SocketAddr, world: usize, rank: usize, deadline: Instant) -> Result<(TcpListener, Vec<SocketAddr>)> {
    let mut control = connect_until(addr, deadline, "rank 0")?;
    let data = TcpListener::bind(SocketAddr::new(control.local_addr()?.ip(), 0))?;
    let mut msg = Vec::new();
    msg.extend_from_slice(&(rank as u64).to_le_bytes());
    msg.extend_from_slice(&(world as u64).to_le_bytes());
    msg.extend_from_slice(data.local_addr()?.to_string().as_bytes());
    write_frame(&mut control, Opcode::Join, &msg).map_err(|e| Error::Communication { rank: 0, msg: e.to_string() })?;
    control.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))?;
    match read_frame(&mut control, CONTROL_LIMIT) {
        Ok((Opcode::Table, p)) => {
            let text = String::from_utf8(p).map_err(|_| Error::Protocol("table is not UTF-8".into()))?;
            let table = text
                .lines()
                .map(|l| l.parse::<SocketAddr>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Protocol(format!("bad address table: {e}")))?;
            if table.len() != world {
                return Err(Error::Protocol(format!("table has {} ranks, expected {world}", table.len())));
            }
            Ok((data, table))
        }
        Ok((Opcode::Reject, p)) => {
            let msg = String::from_utf8_lossy(&p).into_owned();
            if msg.contains("already joined") {
                Err(Error::DuplicateRank(rank))
            } else {
                Err(Error::Protocol(format!("join rejected: {msg}")))
            }
        }
        Ok((op, _)) => Err(Error::Protocol(format!("unexpected {op:?} during join"))),
        Err(FrameError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            Err(Error::Timeout("waiting for the group to form".into()))
        }
        Err(e) => Err(e.into_error(0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_address() -> String {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    }

    /// Runs `f` on every rank of a fresh localhost group, joining in the
    /// order given by `order`.
    fn with_group<R: Send + 'static>(
        world: usize,
        order: &[usize],
        f: impl Fn(WorkerGroup) -> R + Send + Sync + Clone + 'static,
    ) -> Vec<R> {
        let addr = free_address();
        let handles: Vec<_> = order
            .iter()
            .map(|&rank| {
                let (addr, f) = (addr.clone(), f.clone());
                thread::spawn(move || {
                    let g = rendezvous(world, &addr, rank, Duration::from_secs(20)).unwrap();
                    (rank, f(g))
                })
            })
            .collect();
        let mut out: Vec<(usize, R)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        out.sort_by_key(|(r, _)| *r);
        out.into_iter().map(|(_, v)| v).collect()
    }

    #[test]
    fn mean_of_known_vectors() {
        let res = with_group(4, &[0, 1, 2, 3], |mut g| {
            let r = g.rank() as f32;
            let mut buf = vec![2.0 * r + 1.0, 2.0 * r + 2.0];
            g.allreduce_mean(&mut buf).unwrap();
            buf
        });
        for buf in res {
            assert_eq!(buf, vec![4.0, 5.0]);
        }
    }

    #[test]
    fn solo_group_is_identity() {
        let mut g = rendezvous(1, "127.0.0.1:1", 0, DEFAULT_TIMEOUT).unwrap();
        let t = Tensor::new(vec![3], vec![0.1f32, -0.0, 7.5]).unwrap();
        assert!(ring_allreduce(&mut g, &t).unwrap().bitwise_eq(&t));
    }

    #[test]
    fn matches_reference_mean_and_ranks_agree() {
        for world in [2usize, 3, 4] {
            let n = 1000 + world;
            let inputs: Vec<Vec<f64>> = (0..world)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
                })
                .collect();
            let shared = inputs.clone();
            let order: Vec<usize> = (0..world).rev().collect();
            let res = with_group(world, &order, move |mut g| {
                let mut buf = shared[g.rank()].clone();
                g.allreduce_mean(&mut buf).unwrap();
                (g.successor(), g.predecessor(), buf)
            });
            let expect = reference_mean(&inputs).unwrap();
            for (r, (succ, pred, buf)) in res.iter().enumerate() {
                assert_eq!((*succ, *pred), ((r + 1) % world, (r + world - 1) % world));
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(buf), bits(&expect));
                for i in 0..n {
                    let naive = inputs.iter().map(|b| b[i]).sum::<f64>() / world as f64;
                    assert!((buf[i] - naive).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn f32_mean_and_linearity() {
        let world = 3;
        let res = with_group(world, &[1, 0, 2], |mut g| {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + g.rank() as u64);
            let a: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (mut ma, mut mb) = (a.clone(), b.clone());
            g.allreduce_mean(&mut ma).unwrap();
            g.allreduce_mean(&mut mb).unwrap();
            g.allreduce_mean(&mut sum).unwrap();
            (a, ma, mb, sum)
        });
        let inputs: Vec<Vec<f32>> = res.iter().map(|r| r.0.clone()).collect();
        for (_, ma, mb, sum) in &res {
            for i in 0..64 {
                let oracle = inputs.iter().map(|v| v[i] as f64).sum::<f64>() / 3.0;
                assert!((ma[i] as f64 - oracle).abs() < 1e-6);
                assert!((sum[i] - (ma[i] + mb[i])).abs() < 1e-6);
            }
            assert_eq!(ma, &res[0].1);
        }
    }

    #[test]
    fn length_mismatch_is_a_protocol_error() {
        let res = with_group(2, &[0, 1], |mut g| {
            let mut buf = vec![1.0f32; 4 + g.rank()];
            g.allreduce_mean(&mut buf)
        });
        assert!(res.iter().all(|r| matches!(r, Err(Error::Protocol(_)))));
    }

    #[test]
    fn duplicate_rank_zero_rejected() {
        let addr = free_address();
        let a2 = addr.clone();
        let host = thread::spawn(move || rendezvous(2, &a2, 0, Duration::from_millis(1500)));
        thread::sleep(Duration::from_millis(200));
        let second = rendezvous(2, &addr, 0, Duration::from_millis(500));
        assert!(matches!(second, Err(Error::DuplicateRank(0))), "{second:?}");
        assert!(matches!(host.join().unwrap(), Err(Error::Timeout(_))));
    }

    #[test]
    fn duplicate_joiner_rejected() {
        let addr = free_address();
        let a2 = addr.clone();
        let host = thread::spawn(move || rendezvous(3, &a2, 0, Duration::from_secs(5)));
        let a3 = addr.clone();
        let first = thread::spawn(move || rendezvous(3, &a3, 1, Duration::from_secs(5)));
        thread::sleep(Duration::from_millis(300));
        let dup = rendezvous(3, &addr, 1, Duration::from_secs(5));
        assert!(matches!(dup, Err(Error::DuplicateRank(1))), "{dup:?}");
        let last = rendezvous(3, &addr, 2, Duration::from_secs(5));
        assert!(last.is_ok());
        assert!(host.join().unwrap().is_ok());
        assert!(first.join().unwrap().is_ok());
    }

    #[test]
    fn disconnect_names_the_peer() {
        let res = with_group(2, &[0, 1], |mut g| {
            if g.rank() == 1 {
                drop(g);
                return None;
            }
            thread::sleep(Duration::from_millis(100));
            let mut buf = vec![1.0f64; 8];
            Some(g.allreduce_mean(&mut buf))
        });
        match &res[0] {
            Some(Err(Error::Communication { rank: 1, .. })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, Opcode::Data, &[1, 2, 3]).unwrap();
        assert_eq!(&buf[..16], &frame_header(Opcode::Data, 3));
        let (op, p) = read_frame(&mut buf.as_slice(), 16).unwrap();
        assert_eq!((op, p), (Opcode::Data, vec![1, 2, 3]));
        let mut bad = buf.clone();
        bad[0] ^= 1;
        assert!(matches!(read_frame(&mut bad.as_slice(), 16), Err(FrameError::Protocol(_))));
    }
}
