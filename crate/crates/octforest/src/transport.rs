//! In-process message passing between simulated ranks.

use std::cell::Cell as StdCell;
use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How rank threads are interleaved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// One rank runs at a time; the turn passes when a rank blocks or finishes.
    RoundRobin,
    /// All ranks run concurrently.
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub epoch: u64,
    pub kind: String,
    pub rank: usize,
    pub peer: Option<usize>,
    pub len: usize,
    pub checksum: u64,
}

/// Per-rank communication events, in program order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub ranks: Vec<Vec<TraceEvent>>,
}

impl Trace {
    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.ranks.iter().flatten()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.events().filter(|e| e.kind == kind).count()
    }

    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for e in self.events() {
            s.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            s.push('\n');
        }
        s
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json_lines().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

struct Collective {
    kind: &'static str,
    parts: Vec<Option<Vec<u8>>>,
    readers: usize,
}

struct State {
    size: usize,
    schedule: Schedule,
    mailboxes: Vec<VecDeque<Vec<u8>>>,
    collectives: HashMap<u64, Collective>,
    finished: Vec<bool>,
    turn: usize,
    stalls: usize,
    progress: u64,
    blocked_at: Vec<Option<u64>>,
    deadlock: Option<Vec<usize>>,
    mismatch: Option<Error>,
    trace: Vec<Vec<TraceEvent>>,
}

impl State {
    fn live(&self) -> usize {
        self.finished.iter().filter(|f| !**f).count()
    }

    fn pass_turn(&mut self, from: usize) {
        for k in 1..=self.size {
            let q = (from + k) % self.size;
            if !self.finished[q] {
                self.turn = q;
                return;
            }
        }
    }

    fn made_progress(&mut self, rank: usize) {
        self.progress += 1;
        self.stalls = 0;
        self.blocked_at[rank] = None;
    }

    fn blocked_ranks(&self) -> Vec<usize> {
        (0..self.size).filter(|&q| !self.finished[q]).collect()
    }
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
}

/// A rank's handle on the communicator.
pub struct Comm<'a> {
    rank: usize,
    size: usize,
    shared: &'a Shared,
    epoch: StdCell<u64>,
}

impl<'a> Comm<'a> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn lock(&self) -> MutexGuard<'a, State> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn record(&self, st: &mut State, kind: &str, peer: Option<usize>, bytes: &[u8]) {
        st.trace[self.rank].push(TraceEvent {
            epoch: self.epoch.get(),
            kind: kind.to_string(),
            rank: self.rank,
            peer,
            len: bytes.len(),
            checksum: checksum(bytes),
        });
    }

    fn wait_until<T>(&self, mut cond: impl FnMut(&mut State) -> Result<Option<T>>) -> Result<T> {
        let mut st = self.lock();
        loop {
            if let Some(e) = &st.mismatch {
                return Err(e.clone());
            }
            if let Some(b) = &st.deadlock {
                return Err(Error::Deadlock { blocked: b.clone() });
            }
            if st.schedule == Schedule::RoundRobin && st.turn != self.rank {
                st = self.shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
                continue;
            }
            match cond(&mut st) {
                Err(e) => {
                    st.mismatch = Some(e.clone());
                    self.shared.cv.notify_all();
                    return Err(e);
                }
                Ok(Some(v)) => {
                    st.made_progress(self.rank);
                    self.shared.cv.notify_all();
                    return Ok(v);
                }
                Ok(None) => {}
            }
            match st.schedule {
                Schedule::RoundRobin => {
                    st.stalls += 1;
                    if st.stalls >= st.live() {
                        st.deadlock = Some(st.blocked_ranks());
                    } else {
                        st.pass_turn(self.rank);
                    }
                }
                Schedule::Parallel => {
                    let p = st.progress;
                    st.blocked_at[self.rank] = Some(p);
                    let all = (0..st.size).all(|q| st.finished[q] || st.blocked_at[q] == Some(p));
                    if all {
                        st.deadlock = Some(st.blocked_ranks());
                    }
                }
            }
            self.shared.cv.notify_all();
            if st.deadlock.is_none() {
                st = self.shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        }
    }

    /// Buffered send; messages between a fixed pair arrive in send order.
    pub fn send(&self, to: usize, bytes: Vec<u8>) -> Result<()> {
        assert!(to < self.size, "destination rank out of range");
        let me = self.rank;
        let size = self.size;
        self.wait_until(|st| {
            self.record(st, "send", Some(to), &bytes);
            st.mailboxes[me * size + to].push_back(bytes.clone());
            Ok(Some(()))
        })
    }

    pub fn recv(&self, from: usize) -> Result<Vec<u8>> {
        assert!(from < self.size, "source rank out of range");
        let me = self.rank;
        let size = self.size;
        self.wait_until(|st| {
            let m = st.mailboxes[from * size + me].pop_front();
            if let Some(m) = &m {
                self.record(st, "recv", Some(from), m);
            }
            Ok(m)
        })
    }

    fn collective(&self, kind: &'static str, bytes: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let e = self.epoch.get();
        let me = self.rank;
        let size = self.size;
        let mut contributed = false;
        let out = self.wait_until(|st| {
            if !contributed {
                self.record(st, kind, None, &bytes);
                let c = st.collectives.entry(e).or_insert_with(|| Collective {
                    kind,
                    parts: vec![None; size],
                    readers: 0,
                });
                if c.kind != kind {
                    return Err(Error::CollectiveMismatch {
                        rank: me,
                        expected: c.kind.to_string(),
                        found: kind.to_string(),
                    });
                }
                c.parts[me] = Some(bytes.clone());
                contributed = true;
                st.progress += 1;
                st.stalls = 0;
            }
            let c = st.collectives.get_mut(&e).expect("collective exists");
            if c.parts.iter().all(|p| p.is_some()) {
                let v: Vec<Vec<u8>> = c.parts.iter().map(|p| p.clone().unwrap()).collect();
                c.readers += 1;
                if c.readers == size {
                    st.collectives.remove(&e);
                }
                Ok(Some(v))
            } else {
                Ok(None)
            }
        })?;
        self.epoch.set(e + 1);
        Ok(out)
    }

    /// Every rank's contribution, in rank order.
    pub fn allgather(&self, bytes: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        self.collective("allgather", bytes)
    }

    pub fn allgather_u64(&self, v: u64) -> Result<Vec<u64>> {
        Ok(self
            .allgather(v.to_le_bytes().to_vec())?
            .into_iter()
            .map(|b| u64::from_le_bytes(b[..8].try_into().expect("8 bytes")))
            .collect())
    }

    pub fn allgather_words(&self, w: &[u64]) -> Result<Vec<Vec<u64>>> {
        Ok(self
            .allgather(encode_words(w))?
            .iter()
            .map(|b| decode_words(b))
            .collect::<Result<_>>()?)
    }

    pub fn send_words(&self, to: usize, w: &[u64]) -> Result<()> {
        self.send(to, encode_words(w))
    }

    pub fn recv_words(&self, from: usize) -> Result<Vec<u64>> {
        decode_words(&self.recv(from)?)
    }

    pub fn barrier(&self) -> Result<()> {
        self.collective("barrier", Vec::new()).map(|_| ())
    }

    /// Exclusive prefix sums with a leading zero.
    pub fn prefix_sums(v: &[u64]) -> Vec<u64> {
        let mut out = Vec::with_capacity(v.len());
        let mut acc = 0;
        for x in v {
            out.push(acc);
            acc += x;
        }
        out
    }
}

pub fn encode_words(w: &[u64]) -> Vec<u8> {
    let mut b = Vec::with_capacity(w.len() * 8);
    for x in w {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b
}

pub fn decode_words(b: &[u8]) -> Result<Vec<u64>> {
    if b.len() % 8 != 0 {
        return Err(Error::Decode(format!("{} bytes is not a word multiple", b.len())));
    }
    Ok(b.chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Result of running a closure on every rank.
pub struct Run<R> {
    pub results: Vec<R>,
    pub trace: Trace,
}

/// Run `f` on `size` simulated ranks and collect the per-rank results.
pub fn run<R, F>(size: usize, schedule: Schedule, f: F) -> Result<Run<R>>
where
    R: Send,
    F: Fn(&Comm) -> R + Sync,
{
    assert!(size > 0, "need at least one rank");
    let shared = Shared {
        state: Mutex::new(State {
            size,
            schedule,
            mailboxes: vec![VecDeque::new(); size * size],
            collectives: HashMap::new(),
            finished: vec![false; size],
            turn: 0,
            stalls: 0,
            progress: 0,
            blocked_at: vec![None; size],
            deadlock: None,
            mismatch: None,
            trace: vec![Vec::new(); size],
        }),
        cv: Condvar::new(),
    };
    let outcomes: Vec<std::thread::Result<R>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let shared = &shared;
                let f = &f;
                std::thread::Builder::new()
                    .stack_size(32 << 20)
                    .spawn_scoped(s, move || {
                        let comm = Comm {
                            rank,
                            size,
                            shared,
                            epoch: StdCell::new(0),
                        };
                        if schedule == Schedule::RoundRobin {
                            let mut st = comm.lock();
                            while st.turn != rank && st.deadlock.is_none() {
                                st = shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
                            }
                        }
                        let out = catch_unwind(AssertUnwindSafe(|| f(&comm)));
                        let mut st = comm.lock();
                        st.finished[rank] = true;
                        st.made_progress(rank);
                        if st.turn == rank {
                            st.pass_turn(rank);
                        }
                        if schedule == Schedule::Parallel && st.live() > 0 {
                            let p = st.progress;
                            let all = (0..size).all(|q| st.finished[q] || st.blocked_at[q] == Some(p));
                            if all {
                                st.deadlock = Some(st.blocked_ranks());
                            }
                        }
                        shared.cv.notify_all();
                        out
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rank thread joins")).collect()
    });
    let mut results = Vec::with_capacity(size);
    for (rank, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.push(r),
            Err(_) => return Err(Error::RankPanic(rank)),
        }
    }
    let st = shared.state.into_inner().unwrap_or_else(|e| e.into_inner());
    Ok(Run {
        results,
        trace: Trace { ranks: st.trace },
    })
}

/// Like [`run`] for fallible rank closures; the first rank error is returned.
pub fn run_ok<T, F>(size: usize, schedule: Schedule, f: F) -> Result<Run<T>>
where
    T: Send,
    F: Fn(&Comm) -> Result<T> + Sync,
{
    let r = run(size, schedule, f)?;
    let mut results = Vec::with_capacity(size);
    let mut first_err = None;
    for x in r.results {
        match x {
            Ok(v) => results.push(v),
            Err(e) => {
                let better = match (&first_err, &e) {
                    (None, _) => true,
                    (Some(Error::Deadlock { .. }), e) => !matches!(e, Error::Deadlock { .. }),
                    _ => false,
                };
                if better {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(Run {
            results,
            trace: r.trace,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allgather_and_prefix() {
        for sched in [Schedule::RoundRobin, Schedule::Parallel] {
            let vals = [2u64, 5, 1];
            let r = run_ok(3, sched, |c| c.allgather_u64(vals[c.rank()])).unwrap();
            for v in &r.results {
                assert_eq!(v, &vec![2, 5, 1]);
                assert_eq!(Comm::prefix_sums(v), vec![0, 2, 7]);
            }
        }
        let r = run_ok(1, Schedule::RoundRobin, |c| c.allgather_u64(9)).unwrap();
        assert_eq!(r.results[0], vec![9]);
        assert_eq!(Comm::prefix_sums(&[9]), vec![0]);
    }

    #[test]
    fn fifo_per_pair() {
        for sched in [Schedule::RoundRobin, Schedule::Parallel] {
            let r = run_ok(2, sched, |c| {
                if c.rank() == 0 {
                    c.send(1, b"A".to_vec())?;
                    c.send(1, b"B".to_vec())?;
                    Ok(Vec::new())
                } else {
                    Ok(vec![c.recv(0)?, c.recv(0)?])
                }
            })
            .unwrap();
            assert_eq!(r.results[1], vec![b"A".to_vec(), b"B".to_vec()]);
        }
    }

    #[test]
    fn deadlock_is_detected() {
        for sched in [Schedule::RoundRobin, Schedule::Parallel] {
            let r = run_ok(2, sched, |c| c.recv(1 - c.rank()).map(|_| ()));
            assert!(matches!(r, Err(Error::Deadlock { .. })), "{sched:?}");
            let r = run_ok(2, sched, |c| if c.rank() == 0 { c.barrier() } else { Ok(()) });
            assert!(matches!(r, Err(Error::Deadlock { .. })), "{sched:?}");
        }
    }

    #[test]
    fn mismatched_collectives_fail() {
        let r = run_ok(2, Schedule::RoundRobin, |c| {
            if c.rank() == 0 {
                c.barrier()
            } else {
                c.allgather(vec![1]).map(|_| ())
            }
        });
        assert!(matches!(r, Err(Error::CollectiveMismatch { .. })));
    }

    #[test]
    fn traces_are_schedule_independent() {
        let body = |c: &Comm| -> Result<u64> {
            let n = c.size();
            for q in 0..n {
                if q != c.rank() {
                    c.send_words(q, &[c.rank() as u64, q as u64])?;
                }
            }
            let mut s = 0;
            for q in 0..n {
                if q != c.rank() {
                    s += c.recv_words(q)?.iter().sum::<u64>();
                }
            }
            Ok(s + c.allgather_u64(s)?.iter().sum::<u64>())
        };
        let a = run_ok(4, Schedule::RoundRobin, body).unwrap();
        let b = run_ok(4, Schedule::Parallel, body).unwrap();
        assert_eq!(a.results, b.results);
        assert_eq!(a.trace.hash(), b.trace.hash());
    }
}
