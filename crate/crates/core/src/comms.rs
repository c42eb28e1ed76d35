//! In-process collectives for `K` worker threads.
//!
//! Every collective is a rendezvous: ranks deposit their buffers, the last
//! rank to arrive reduces them in ascending rank order, and all ranks read
//! the same result. The fixed association makes results bit-identical on
//! every rank and across runs for a given `K`.
//!
//! Buffers travel and are summed as `f64`; single-precision callers get the
//! f64 sum rounded once to `f32`.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error(
        "collective #{seq}: rank {rank} contributed {got} values, rank 0 contributed {expected}"
    )]
    LengthMismatch {
        seq: u64,
        rank: usize,
        expected: usize,
        got: usize,
    },
    #[error("collective sequence mismatch: rank {rank} is at #{got}, rank 0 at #{expected}")]
    SequenceMismatch {
        rank: usize,
        expected: u64,
        got: u64,
    },
    #[error("collective #{seq} timed out waiting for ranks {missing:?}")]
    Timeout { seq: u64, missing: Vec<usize> },
    #[error("worker group aborted by rank {0}")]
    Aborted(usize),
    #[error("rank {rank} out of range for {size} workers")]
    InvalidRank { rank: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Filling,
    Draining,
}

#[derive(Debug)]
struct Slots {
    phase: Phase,
    generation: u64,
    contributions: Vec<Option<(u64, Vec<f64>)>>,
    result: Option<Result<Arc<Vec<f64>>, CommError>>,
    remaining_readers: usize,
    aborted_by: Option<usize>,
}

#[derive(Debug)]
struct Shared {
    size: usize,
    timeout: Duration,
    slots: Mutex<Slots>,
    cv: Condvar,
}

/// A group of `K` ranks sharing reduction buffers.
#[derive(Debug, Clone)]
pub struct WorkerGroup {
    shared: Arc<Shared>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

impl WorkerGroup {
    pub fn new(size: usize) -> Self {
        Self::with_timeout(size, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(size: usize, timeout: Duration) -> Self {
        assert!(size >= 1, "a worker group needs at least one rank");
        WorkerGroup {
            shared: Arc::new(Shared {
                size,
                timeout,
                slots: Mutex::new(Slots {
                    phase: Phase::Filling,
                    generation: 0,
                    contributions: vec![None; size],
                    result: None,
                    remaining_readers: 0,
                    aborted_by: None,
                }),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    /// Handle for one rank; each rank must own exactly one.
    pub fn communicator(&self, rank: usize) -> Result<Communicator, CommError> {
        if rank >= self.size() {
            return Err(CommError::InvalidRank {
                rank,
                size: self.size(),
            });
        }
        Ok(Communicator {
            group: self.clone(),
            rank,
            seq: 0,
        })
    }

    /// One handle per rank, in rank order.
    pub fn communicators(&self) -> Vec<Communicator> {
        (0..self.size())
            .map(|r| self.communicator(r).expect("rank in range"))
            .collect()
    }

    /// Wakes every waiting rank with [`CommError::Aborted`]; later
    /// collectives fail immediately.
    pub fn abort(&self, rank: usize) {
        let mut slots = self.lock();
        if slots.aborted_by.is_none() {
            slots.aborted_by = Some(rank);
        }
        self.shared.cv.notify_all();
    }

    fn lock(&self) -> MutexGuard<'_, Slots> {
        // a panicking rank poisons the lock; the state itself stays consistent
        self.shared.slots.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Per-rank collective endpoint.
#[derive(Debug)]
pub struct Communicator {
    group: WorkerGroup,
    rank: usize,
    seq: u64,
}

impl Communicator {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.group.size()
    }

    /// Number of collectives this rank has completed.
    pub fn sequence(&self) -> u64 {
        self.seq
    }

    pub fn abort(&self) {
        self.group.abort(self.rank);
    }

    /// Element-wise sum over all ranks, accumulated in ascending rank order.
    pub fn allreduce_sum<T: Real>(&mut self, local: &[T]) -> Result<Vec<T>, CommError> {
        let local = local.iter().map(|v| v.as_f64()).collect();
        let result = self.collective(local, |contributions| {
            let mut acc = contributions[0].clone();
            for c in &contributions[1..] {
                for (a, v) in acc.iter_mut().zip(c) {
                    *a += *v;
                }
            }
            acc
        })?;
        Ok(result.iter().map(|&v| T::of(v)).collect())
    }

    /// In-place variant of [`Self::allreduce_sum`].
    pub fn allreduce_sum_in_place<T: Real>(&mut self, buf: &mut [T]) -> Result<(), CommError> {
        let reduced = self.allreduce_sum(buf)?;
        buf.copy_from_slice(&reduced);
        Ok(())
    }

    /// Returns once every rank has entered.
    pub fn barrier(&mut self) -> Result<(), CommError> {
        self.collective(Vec::new(), |_| Vec::new()).map(|_| ())
    }

    /// True when every rank passed a bit-identical buffer.
    pub fn all_identical<T: Real>(&mut self, local: &[T]) -> Result<bool, CommError> {
        let local = local.iter().map(|v| v.as_f64()).collect();
        let result = self.collective(local, |contributions| {
            let first = &contributions[0];
            let same = contributions[1..].iter().all(|c| {
                c.len() == first.len()
                    && c.iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits())
            });
            vec![if same { 1.0 } else { 0.0 }]
        })?;
        Ok(result[0] == 1.0)
    }

    fn collective(
        &mut self,
        local: Vec<f64>,
        reduce: impl FnOnce(&[Vec<f64>]) -> Vec<f64>,
    ) -> Result<Arc<Vec<f64>>, CommError> {
        let shared = &self.group.shared;
        let deadline = Instant::now() + shared.timeout;
        let mut slots = self.group.lock();

        // wait for the previous collective to be fully drained
        while slots.phase == Phase::Draining {
            slots = self.wait(slots, deadline)?;
        }
        if let Some(r) = slots.aborted_by {
            return Err(CommError::Aborted(r));
        }
        let generation = slots.generation;
        slots.contributions[self.rank] = Some((self.seq, local));

        if slots.contributions.iter().all(|c| c.is_some()) {
            let contributions: Vec<(u64, Vec<f64>)> = slots
                .contributions
                .iter_mut()
                .map(|c| c.take().expect("all present"))
                .collect();
            let result = validate(&contributions).map(|()| {
                let bufs: Vec<Vec<f64>> = contributions.into_iter().map(|(_, b)| b).collect();
                Arc::new(reduce(&bufs))
            });
            slots.result = Some(result);
            slots.phase = Phase::Draining;
            slots.remaining_readers = shared.size;
            shared.cv.notify_all();
        } else {
            while !(slots.phase == Phase::Draining && slots.generation == generation) {
                slots = match self.wait(slots, deadline) {
                    Ok(s) => s,
                    Err(CommError::Timeout { seq, .. }) => {
                        let slots = self.group.lock();
                        let missing = slots
                            .contributions
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| c.is_none())
                            .map(|(r, _)| r)
                            .collect();
                        return Err(CommError::Timeout { seq, missing });
                    }
                    Err(e) => return Err(e),
                };
            }
        }

        let result = slots.result.clone().expect("result published");
        slots.remaining_readers -= 1;
        if slots.remaining_readers == 0 {
            slots.result = None;
            slots.phase = Phase::Filling;
            slots.generation += 1;
            shared.cv.notify_all();
        }
        drop(slots);
        self.seq += 1;
        result
    }

    fn wait<'a>(
        &self,
        guard: MutexGuard<'a, Slots>,
        deadline: Instant,
    ) -> Result<MutexGuard<'a, Slots>, CommError> {
        if let Some(r) = guard.aborted_by {
            return Err(CommError::Aborted(r));
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(CommError::Timeout {
                seq: self.seq,
                missing: Vec::new(),
            });
        }
        let (guard, _) = self
            .group
            .shared
            .cv
            .wait_timeout(guard, deadline - now)
            .unwrap_or_else(|e| e.into_inner());
        if let Some(r) = guard.aborted_by {
            return Err(CommError::Aborted(r));
        }
        Ok(guard)
    }
}

fn validate(contributions: &[(u64, Vec<f64>)]) -> Result<(), CommError> {
    let (seq0, ref buf0) = contributions[0];
    for (rank, (seq, buf)) in contributions.iter().enumerate().skip(1) {
        if *seq != seq0 {
            return Err(CommError::SequenceMismatch {
                rank,
                expected: seq0,
                got: *seq,
            });
        }
        if buf.len() != buf0.len() {
            return Err(CommError::LengthMismatch {
                seq: seq0,
                rank,
                expected: buf0.len(),
                got: buf.len(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::thread;

    fn run<R: Send>(k: usize, f: impl Fn(Communicator) -> R + Sync) -> Vec<R> {
        let group = WorkerGroup::new(k);
        thread::scope(|s| {
            let handles: Vec<_> = group
                .communicators()
                .into_iter()
                .map(|c| {
                    let f = &f;
                    s.spawn(move || f(c))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    #[test]
    fn two_rank_sum() {
        let out = run(2, |mut c| {
            let local = if c.rank() == 0 {
                [1.0, 2.0]
            } else {
                [3.0, 4.0]
            };
            c.allreduce_sum(&local).unwrap()
        });
        assert_eq!(out, vec![vec![4.0, 6.0], vec![4.0, 6.0]]);
    }

    #[test]
    fn single_rank_is_identity() {
        let mut c = WorkerGroup::new(1).communicator(0).unwrap();
        let x = [0.1, -3.0, 1e300];
        assert_eq!(c.allreduce_sum(&x).unwrap(), x.to_vec());
        c.barrier().unwrap();
        assert_eq!(c.sequence(), 2);
    }

    #[test]
    fn matches_sequential_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let locals: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..257).map(|_| rng.gen_range(-1e3..1e3)).collect())
            .collect();
        let mut oracle = locals[0].clone();
        for l in &locals[1..] {
            for (a, b) in oracle.iter_mut().zip(l) {
                *a += b;
            }
        }
        for _ in 0..5 {
            let out = run(4, |mut c| {
                let mut last = Vec::new();
                for _ in 0..10 {
                    last = c.allreduce_sum(&locals[c.rank()]).unwrap();
                }
                last
            });
            for o in &out {
                assert!(o
                    .iter()
                    .zip(&oracle)
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn length_mismatch_is_reported_on_all_ranks() {
        let out = run(3, |mut c| {
            let local = vec![1.0; if c.rank() == 2 { 4 } else { 3 }];
            c.allreduce_sum(&local)
        });
        for r in out {
            assert!(matches!(r, Err(CommError::LengthMismatch { rank: 2, .. })));
        }
    }

    #[test]
    fn sequence_mismatch_is_detected() {
        let group = WorkerGroup::with_timeout(2, Duration::from_secs(5));
        let mut comms = group.communicators();
        let mut c1 = comms.pop().unwrap();
        let mut c0 = comms.pop().unwrap();
        // rank 1 pretends to have already completed a collective
        c1.seq = 1;
        let out = thread::scope(|s| {
            let a = s.spawn(move || c0.barrier());
            let b = s.spawn(move || c1.barrier());
            (a.join().unwrap(), b.join().unwrap())
        });
        assert!(matches!(out.0, Err(CommError::SequenceMismatch { .. })));
        assert!(matches!(out.1, Err(CommError::SequenceMismatch { .. })));
    }

    #[test]
    fn timeout_names_missing_ranks() {
        let group = WorkerGroup::with_timeout(3, Duration::from_millis(100));
        let mut c0 = group.communicator(0).unwrap();
        match c0.barrier() {
            Err(CommError::Timeout { missing, .. }) => assert_eq!(missing, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn abort_wakes_waiters() {
        let group = WorkerGroup::new(2);
        let mut comms = group.communicators();
        let c1 = comms.pop().unwrap();
        let mut c0 = comms.pop().unwrap();
        let out = thread::scope(|s| {
            let h = s.spawn(move || c0.allreduce_sum(&[1.0]));
            thread::sleep(Duration::from_millis(50));
            c1.abort();
            h.join().unwrap()
        });
        assert_eq!(out, Err(CommError::Aborted(1)));
    }

    #[test]
    fn staggered_barrier_waits_for_last() {
        let start = Instant::now();
        let out = run(3, |mut c| {
            thread::sleep(Duration::from_millis(30 * c.rank() as u64));
            c.barrier().unwrap();
            start.elapsed()
        });
        for t in out {
            assert!(t >= Duration::from_millis(60));
        }
    }

    #[test]
    fn ten_thousand_barriers() {
        let out = run(4, |mut c| {
            for _ in 0..10_000 {
                c.barrier().unwrap();
            }
            c.sequence()
        });
        assert!(out.iter().all(|&s| s == 10_000));
    }

    #[test]
    fn identity_check() {
        let out = run(3, |mut c| {
            let same = c.all_identical(&[1.0, 2.0]).unwrap();
            let v = if c.rank() == 1 { 2.0 + 1e-15 } else { 2.0 };
            let differ = c.all_identical(&[1.0, v]).unwrap();
            (same, differ)
        });
        assert!(out.iter().all(|&(s, d)| s && !d));
    }

    #[test]
    fn single_precision_group() {
        let out = run(2, |mut c| {
            c.allreduce_sum(&[c.rank() as f32 + 0.5]).unwrap()
        });
        assert_eq!(out[0], vec![2.0f32]);
    }
}
