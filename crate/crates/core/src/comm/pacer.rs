//! Time and scheduling for simulated clusters.
//!
//! A [`Pacer`] is either free-running (real threads, real monotonic clock) or
//! lockstep. In lockstep mode every worker thread of every simulated rank
//! holds a [`Seat`] in a token ring ordered by `(rank, thread)`. Only the
//! token holder runs; [`Seat::tick`] hands the token to the next worker. One
//! full trip around the ring advances the virtual clock by one tick, so each
//! worker performs exactly one unit of work (one sample or one poll) per
//! tick. Execution is therefore fully deterministic and independent of the
//! OS scheduler.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerId {
    pub rank: usize,
    pub thread: usize,
}

impl WorkerId {
    pub fn new(rank: usize, thread: usize) -> Self {
        WorkerId { rank, thread }
    }
}

#[derive(Clone)]
pub enum Pacer {
    Free(Arc<Instant>),
    Lockstep(Arc<Lockstep>),
}

impl std::fmt::Debug for Pacer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pacer::Free(_) => f.write_str("Pacer::Free"),
            Pacer::Lockstep(l) => write!(f, "Pacer::Lockstep(tick = {}s)", l.tick_secs),
        }
    }
}

impl Pacer {
    pub fn free() -> Self {
        Pacer::Free(Arc::new(Instant::now()))
    }

    /// Lockstep pacer whose clock advances `tick_secs` per ring round.
    pub fn lockstep(tick_secs: f64) -> Self {
        assert!(tick_secs > 0.0);
        Pacer::Lockstep(Arc::new(Lockstep {
            ring: Mutex::new(Ring::default()),
            turn: Condvar::new(),
            tick_secs,
        }))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Pacer::Lockstep(_))
    }

    /// Seconds since the pacer was created (virtual in lockstep mode).
    pub fn now(&self) -> f64 {
        match self {
            Pacer::Free(start) => start.elapsed().as_secs_f64(),
            Pacer::Lockstep(l) => l.ring.lock().unwrap().ticks as f64 * l.tick_secs,
        }
    }

    /// Adds a worker to the ring before its thread starts. In lockstep mode
    /// this must be called by the current token holder (or before any
    /// worker runs).
    pub fn admit(&self, id: WorkerId) {
        if let Pacer::Lockstep(l) = self {
            l.admit(id);
        }
    }

    /// Takes the seat of an admitted worker; blocks until it is its turn.
    pub fn seat(&self, id: WorkerId) -> Seat {
        if let Pacer::Lockstep(l) = self {
            l.wait_turn(id);
        }
        Seat {
            pacer: self.clone(),
            id,
        }
    }
}

pub struct Lockstep {
    ring: Mutex<Ring>,
    turn: Condvar,
    tick_secs: f64,
}

#[derive(Default)]
struct Ring {
    order: Vec<WorkerId>,
    pos: usize,
    ticks: u64,
}

impl Ring {
    fn advance(&mut self) {
        self.pos += 1;
        if self.pos >= self.order.len() {
            self.pos = 0;
            self.ticks += 1;
        }
    }

    fn holder(&self) -> Option<WorkerId> {
        self.order.get(self.pos).copied()
    }
}

impl Lockstep {
    fn admit(&self, id: WorkerId) {
        let mut ring = self.ring.lock().unwrap();
        let idx = match ring.order.binary_search(&id) {
            Ok(_) => panic!("worker {id:?} admitted twice"),
            Err(idx) => idx,
        };
        let was_empty = ring.order.is_empty();
        ring.order.insert(idx, id);
        if !was_empty && idx <= ring.pos {
            ring.pos += 1;
        }
        self.turn.notify_all();
    }

    fn wait_turn(&self, id: WorkerId) {
        let ring = self.ring.lock().unwrap();
        assert!(ring.order.contains(&id), "worker {id:?} was not admitted");
        let _ring = self.turn.wait_while(ring, |r| r.holder() != Some(id)).unwrap();
    }

    fn tick(&self, id: WorkerId) {
        let mut ring = self.ring.lock().unwrap();
        assert_eq!(ring.holder(), Some(id), "tick by a worker not holding the token");
        ring.advance();
        self.turn.notify_all();
        let _ring = self.turn.wait_while(ring, |r| r.holder() != Some(id)).unwrap();
    }

    // Normally called by the holder; a panicking worker may leave out of turn.
    fn leave(&self, id: WorkerId) {
        let mut ring = self.ring.lock().unwrap();
        let Ok(idx) = ring.order.binary_search(&id) else {
            return;
        };
        ring.order.remove(idx);
        if idx < ring.pos {
            ring.pos -= 1;
        } else if idx == ring.pos && ring.pos >= ring.order.len() {
            ring.pos = 0;
            ring.ticks += 1;
        }
        self.turn.notify_all();
    }
}

/// A worker's place in the schedule. Dropping it leaves the ring.
pub struct Seat {
    pacer: Pacer,
    id: WorkerId,
}

impl Seat {
    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn pacer(&self) -> &Pacer {
        &self.pacer
    }

    pub fn now(&self) -> f64 {
        self.pacer.now()
    }

    /// Ends one unit of work.
    #[inline]
    pub fn tick(&self) {
        if let Pacer::Lockstep(l) = &self.pacer {
            l.tick(self.id);
        }
    }

    /// Called while waiting without doing work.
    #[inline]
    pub fn idle(&self) {
        match &self.pacer {
            Pacer::Lockstep(l) => l.tick(self.id),
            Pacer::Free(_) => std::thread::yield_now(),
        }
    }

    /// Admits a child worker (e.g. a sampling thread about to be spawned).
    pub fn admit(&self, id: WorkerId) {
        self.pacer.admit(id);
    }
}

impl Drop for Seat {
    fn drop(&mut self) {
        if let Pacer::Lockstep(l) = &self.pacer {
            l.leave(self.id);
        }
    }
}
