//! Epoch-based aggregation of per-thread sampling state.
//!
//! Each thread owns two [`StateFrame`]s and writes only to the one belonging
//! to its current epoch (`epoch % 2`). Thread zero (the coordinator) ends an
//! epoch with [`Coordinator::force_transition`], which moves it to the next
//! epoch immediately. Every other thread joins the transition the next time
//! it calls [`SamplerHandle::check_transition`]; a call made while no
//! transition is pending has no effect. Once every sampler has moved on, the
//! frames of the closed epoch are frozen and the coordinator can fold them
//! with [`Coordinator::collect_epoch`].
//!
//! Samplers never wait: `check_transition` is one acquire load and, at most,
//! one release store. The coordinator polls in `O(T)`.

use std::cell::UnsafeCell;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_utils::CachePadded;

use crate::graph::Vertex;

/// Sample count plus per-vertex occurrence counts.
///
/// Stored as one word vector `[tau, c_0, .., c_{n-1}]` so that a frame can be
/// handed to a reduction without repacking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateFrame {
    words: Vec<u64>,
}

impl StateFrame {
    pub fn zeroed(n: usize) -> Self {
        StateFrame { words: vec![0; n + 1] }
    }

    /// Rebuilds a frame from the `[tau, counts..]` layout.
    pub fn from_words(words: Vec<u64>) -> Self {
        assert!(!words.is_empty(), "a state frame has at least the tau word");
        StateFrame { words }
    }

    pub fn from_parts(tau: u64, counts: &[u64]) -> Self {
        let mut words = Vec::with_capacity(counts.len() + 1);
        words.push(tau);
        words.extend_from_slice(counts);
        StateFrame { words }
    }

    pub fn n(&self) -> usize {
        self.words.len() - 1
    }

    pub fn tau(&self) -> u64 {
        self.words[0]
    }

    pub fn counts(&self) -> &[u64] {
        &self.words[1..]
    }

    pub fn as_words(&self) -> &[u64] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u64> {
        self.words
    }

    /// Adds one sample whose path has the given internal vertices.
    #[inline]
    pub fn record(&mut self, internal: &[Vertex]) {
        self.words[0] += 1;
        for &v in internal {
            self.words[v + 1] += 1;
        }
    }

    pub fn add_assign(&mut self, other: &StateFrame) {
        assert_eq!(self.words.len(), other.words.len(), "frame length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a += b;
        }
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

struct FrameSlot {
    frame: UnsafeCell<StateFrame>,
    /// Seqlock-style writer generation: odd while a write is in progress.
    stamp: AtomicU64,
}

/// Counters of protocol violations observed by the runtime checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochViolations {
    /// A frame changed (or was being written) while the coordinator read it.
    pub stamp: u64,
    /// Two threads of the process were more than one epoch apart.
    pub skew: u64,
}

/// Shared state of the epoch mechanism for one process.
pub struct EpochClock {
    threads: usize,
    /// Epoch of thread zero; only thread zero stores to it.
    target: CachePadded<AtomicU64>,
    /// Current epoch of each thread (entry 0 mirrors `target`).
    epochs: Box<[CachePadded<AtomicU64>]>,
    frames: Box<[[FrameSlot; 2]]>,
    claimed: Box<[AtomicBool]>,
    live_samplers: AtomicUsize,
    stamp_violations: AtomicU64,
    skew_violations: AtomicU64,
}

// Frames are accessed under the single-writer epoch discipline documented on
// each accessor; all cross-thread hand-offs go through release/acquire pairs
// on `target` and `epochs`.
unsafe impl Sync for EpochClock {}

impl EpochClock {
    pub fn new(threads: usize, n: usize) -> Arc<Self> {
        assert!(threads >= 1, "need at least the coordinator thread");
        let frames = (0..threads)
            .map(|_| {
                [0, 1].map(|_| FrameSlot {
                    frame: UnsafeCell::new(StateFrame::zeroed(n)),
                    stamp: AtomicU64::new(0),
                })
            })
            .collect();
        Arc::new(EpochClock {
            threads,
            target: CachePadded::new(AtomicU64::new(0)),
            epochs: (0..threads).map(|_| CachePadded::new(AtomicU64::new(0))).collect(),
            frames,
            claimed: (0..threads).map(|_| AtomicBool::new(false)).collect(),
            live_samplers: AtomicUsize::new(0),
            stamp_violations: AtomicU64::new(0),
            skew_violations: AtomicU64::new(0),
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn violations(&self) -> EpochViolations {
        EpochViolations {
            stamp: self.stamp_violations.load(Ordering::Relaxed),
            skew: self.skew_violations.load(Ordering::Relaxed),
        }
    }

    /// Current epoch of thread `t` as last published.
    pub fn epoch_of(&self, t: usize) -> u64 {
        self.epochs[t].load(Ordering::Acquire)
    }

    fn claim(&self, t: usize) {
        assert!(t < self.threads, "thread {t} out of range");
        let was = self.claimed[t].swap(true, Ordering::AcqRel);
        assert!(!was, "handle for thread {t} already taken");
    }

    pub fn coordinator(self: &Arc<Self>) -> Coordinator {
        self.claim(0);
        Coordinator {
            clock: Arc::clone(self),
            epoch: self.target.load(Ordering::Relaxed),
            in_flight: false,
        }
    }

    pub fn sampler(self: &Arc<Self>, t: usize) -> SamplerHandle {
        assert!(t != 0, "thread 0 is the coordinator");
        self.claim(t);
        self.live_samplers.fetch_add(1, Ordering::AcqRel);
        SamplerHandle {
            clock: Arc::clone(self),
            t,
            epoch: self.epochs[t].load(Ordering::Acquire),
            recorded: 0,
        }
    }

    /// Writes into the frame of thread `t` for `epoch`.
    ///
    /// Safety: only thread `t` may call this, and only for its current epoch.
    unsafe fn write_frame(&self, t: usize, epoch: u64, internal: &[Vertex]) {
        let slot = &self.frames[t][(epoch % 2) as usize];
        let s = slot.stamp.load(Ordering::Relaxed);
        slot.stamp.store(s + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        (*slot.frame.get()).record(internal);
        slot.stamp.store(s + 2, Ordering::Release);
    }

    /// Adds the frame of thread `t` for `epoch` into `acc` and zeroes it.
    ///
    /// Safety: thread `t` must have left `epoch` (observed with acquire
    /// ordering) and must not be able to re-enter it before the next
    /// transition is forced.
    unsafe fn drain_frame(&self, t: usize, epoch: u64, acc: &mut StateFrame) {
        let slot = &self.frames[t][(epoch % 2) as usize];
        let before = slot.stamp.load(Ordering::Acquire);
        let frame = &mut *slot.frame.get();
        acc.add_assign(frame);
        frame.clear();
        fence(Ordering::Acquire);
        let after = slot.stamp.load(Ordering::Relaxed);
        if before != after || before % 2 == 1 {
            self.stamp_violations.fetch_add(1, Ordering::Relaxed);
            debug_assert!(false, "frame of thread {t} written during collection");
        }
    }

    fn note_skew(&self) {
        self.skew_violations.fetch_add(1, Ordering::Relaxed);
    }
}

/// Thread zero's handle.
pub struct Coordinator {
    clock: Arc<EpochClock>,
    epoch: u64,
    in_flight: bool,
}

/// An in-progress (or finished) transition out of one epoch.
#[derive(Debug)]
pub struct TransitionHandle {
    epoch: u64,
    pending: usize,
    done: bool,
}

impl TransitionHandle {
    /// The epoch being closed.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Threads not yet seen in the next epoch, as of the last poll.
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

impl Coordinator {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn threads(&self) -> usize {
        self.clock.threads
    }

    pub fn clock(&self) -> &Arc<EpochClock> {
        &self.clock
    }

    /// Records a sample into thread zero's frame for its current epoch.
    #[inline]
    pub fn record(&mut self, internal: &[Vertex]) {
        // SAFETY: the coordinator is the only writer of thread 0's frames.
        unsafe { self.clock.write_frame(0, self.epoch, internal) }
    }

    /// Starts closing epoch `e` and moves thread zero to `e + 1`. Constant time.
    pub fn force_transition(&mut self, e: u64) -> TransitionHandle {
        assert_eq!(e, self.epoch, "force_transition called from the wrong epoch");
        assert!(
            !self.in_flight,
            "previous epoch must be collected before forcing another transition"
        );
        self.in_flight = true;
        self.epoch = e + 1;
        self.clock.epochs[0].store(e + 1, Ordering::Release);
        self.clock.target.store(e + 1, Ordering::Release);
        let pending = self.clock.threads - 1;
        TransitionHandle {
            epoch: e,
            pending,
            done: pending == 0,
        }
    }

    /// Returns true once every sampler has entered the next epoch. `O(T)`.
    pub fn poll_transition(&self, handle: &mut TransitionHandle) -> bool {
        if handle.done {
            return true;
        }
        let e = handle.epoch;
        let mut pending = 0;
        for t in 1..self.clock.threads {
            let et = self.clock.epochs[t].load(Ordering::Acquire);
            if et <= e {
                pending += 1;
            }
            if et < e || et > e + 1 {
                self.clock.note_skew();
            }
        }
        handle.pending = pending;
        handle.done = pending == 0;
        handle.done
    }

    /// Sums the frozen frames of the closed epoch (all threads, including
    /// thread zero) and zeroes them for reuse two epochs later.
    pub fn collect_epoch(&mut self, handle: TransitionHandle) -> StateFrame {
        assert!(handle.done, "collect_epoch before the transition completed");
        assert_eq!(handle.epoch + 1, self.epoch);
        let n = self.frame_len();
        let mut acc = StateFrame::zeroed(n);
        for t in 0..self.clock.threads {
            // SAFETY: every thread published an epoch > handle.epoch (acquire
            // in poll_transition), and none can return to this slot until the
            // next force_transition, which requires `in_flight` to be cleared.
            unsafe { self.clock.drain_frame(t, handle.epoch, &mut acc) };
        }
        self.in_flight = false;
        acc
    }

    /// Collects every frame still holding samples once all samplers are gone.
    ///
    /// Used at termination to account for samples that were taken but never
    /// aggregated.
    pub fn drain_remaining(&mut self) -> StateFrame {
        assert_eq!(
            self.clock.live_samplers.load(Ordering::Acquire),
            0,
            "samplers still running"
        );
        let mut acc = StateFrame::zeroed(self.frame_len());
        for t in 0..self.clock.threads {
            for e in [self.epoch, self.epoch + 1] {
                // SAFETY: no sampler handle is alive.
                unsafe { self.clock.drain_frame(t, e, &mut acc) };
            }
        }
        acc
    }

    fn frame_len(&self) -> usize {
        // SAFETY: reading the length only; lengths never change.
        unsafe { (*self.clock.frames[0][0].frame.get()).n() }
    }
}

/// Handle of a sampling thread `t != 0`.
pub struct SamplerHandle {
    clock: Arc<EpochClock>,
    t: usize,
    epoch: u64,
    recorded: u64,
}

impl SamplerHandle {
    pub fn thread(&self) -> usize {
        self.t
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Samples recorded through this handle.
    pub fn recorded(&self) -> u64 {
        self.recorded
    }

    #[inline]
    pub fn record(&mut self, internal: &[Vertex]) {
        // SAFETY: `self` is the unique handle of thread t.
        unsafe { self.clock.write_frame(self.t, self.epoch, internal) };
        self.recorded += 1;
    }

    /// Joins a pending transition out of epoch `e`, if there is one.
    #[inline]
    pub fn check_transition(&mut self, e: u64) -> bool {
        assert_eq!(e, self.epoch, "check_transition called from the wrong epoch");
        let target = self.clock.target.load(Ordering::Acquire);
        if target <= e {
            return false;
        }
        if target > e + 1 {
            self.clock.note_skew();
        }
        self.epoch = e + 1;
        self.clock.epochs[self.t].store(e + 1, Ordering::Release);
        true
    }
}

impl Drop for SamplerHandle {
    fn drop(&mut self) {
        self.clock.live_samplers.fetch_sub(1, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_thread_transition_completes_immediately() {
        let clock = EpochClock::new(1, 3);
        let mut co = clock.coordinator();
        co.record(&[1]);
        let mut h = co.force_transition(0);
        assert!(h.is_done());
        assert!(co.poll_transition(&mut h));
        assert_eq!(co.epoch(), 1);
        let agg = co.collect_epoch(h);
        assert_eq!(agg.tau(), 1);
        assert_eq!(agg.counts(), &[0, 1, 0]);
    }

    #[test]
    fn transition_completes_after_last_check() {
        let clock = EpochClock::new(3, 2);
        let mut co = clock.coordinator();
        let mut s1 = clock.sampler(1);
        let mut s2 = clock.sampler(2);

        // Calls before forceTransition have no effect.
        assert!(!s1.check_transition(0));
        assert_eq!(s1.epoch(), 0);

        let mut h = co.force_transition(0);
        assert_eq!(co.epoch(), 1);
        assert!(!co.poll_transition(&mut h));
        assert_eq!(h.pending(), 2);

        // Thread 0 keeps sampling into the next epoch meanwhile.
        co.record(&[0]);
        assert!(s1.check_transition(0));
        assert!(!co.poll_transition(&mut h));
        assert_eq!(h.pending(), 1);
        assert!(s2.check_transition(0));
        assert!(co.poll_transition(&mut h));
        assert!(co.poll_transition(&mut h), "completion is permanent");

        // A second check in the new epoch sees no transition.
        assert!(!s1.check_transition(1));
        let agg = co.collect_epoch(h);
        assert!(agg.is_zero());
        assert_eq!(clock.violations(), EpochViolations::default());
    }

    #[test]
    fn frames_alternate_and_collect_sums_all_threads() {
        let clock = EpochClock::new(3, 2);
        let mut co = clock.coordinator();
        let mut s = [clock.sampler(1), clock.sampler(2)];
        co.record(&[0]);
        co.record(&[0, 1]);
        co.record(&[]);
        for _ in 0..4 {
            s[0].record(&[1]);
        }
        for _ in 0..5 {
            s[1].record(&[]);
        }
        let mut h = co.force_transition(0);
        co.record(&[1]); // belongs to epoch 1
        for x in &mut s {
            assert!(x.check_transition(0));
            x.record(&[0]); // epoch 1
        }
        assert!(co.poll_transition(&mut h));
        let agg = co.collect_epoch(h);
        assert_eq!(agg.tau(), 12);
        assert_eq!(agg.counts(), &[2, 5]);

        let mut h = co.force_transition(1);
        for x in &mut s {
            assert!(x.check_transition(1));
        }
        assert!(co.poll_transition(&mut h));
        let agg = co.collect_epoch(h);
        assert_eq!(agg.tau(), 3);
        assert_eq!(agg.counts(), &[2, 1]);
    }

    #[test]
    #[should_panic(expected = "wrong epoch")]
    fn check_transition_from_wrong_epoch_panics() {
        let clock = EpochClock::new(2, 1);
        let mut s = clock.sampler(1);
        s.check_transition(3);
    }

    #[test]
    #[should_panic(expected = "collected before forcing")]
    fn reentrant_force_panics() {
        let clock = EpochClock::new(2, 1);
        let mut co = clock.coordinator();
        let _h = co.force_transition(0);
        co.force_transition(1);
    }

    #[test]
    #[should_panic(expected = "before the transition completed")]
    fn collect_before_completion_panics() {
        let clock = EpochClock::new(2, 1);
        let mut co = clock.coordinator();
        let _s = clock.sampler(1);
        let h = co.force_transition(0);
        co.collect_epoch(h);
    }

    #[test]
    #[should_panic(expected = "already taken")]
    fn handles_are_unique() {
        let clock = EpochClock::new(2, 1);
        let _a = clock.sampler(1);
        let _b = clock.sampler(1);
    }

    #[test]
    fn stalled_sampler_blocks_completion() {
        let clock = EpochClock::new(2, 1);
        let mut co = clock.coordinator();
        let _stalled = clock.sampler(1);
        let mut h = co.force_transition(0);
        for _ in 0..1000 {
            assert!(!co.poll_transition(&mut h));
        }
    }

    #[test]
    fn drain_collects_leftovers_after_samplers_exit() {
        let clock = EpochClock::new(2, 1);
        let mut co = clock.coordinator();
        let mut s = clock.sampler(1);
        s.record(&[0]);
        co.record(&[]);
        drop(s);
        let rest = co.drain_remaining();
        assert_eq!(rest.tau(), 2);
        assert!(co.drain_remaining().is_zero());
    }
}
