//! Per-rank execution of the pipeline.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};

use crate::comm::{Communicator, Seat, WorkerId};
use crate::epoch::{Coordinator, EpochClock, StateFrame};
use crate::graph::{diameter_upper_bound, Graph};
use crate::sampler::{worker_rng, PathSampler, Phase};
use crate::stopping::{calibrate, check_stop, compute_omega, StoppingParams};

use super::topology::{hierarchical_topology, Topology};
use super::{panic_message, Algorithm, ApproxResult, EngineError, ReduceMode, RunConfig, RunStats};

/// Cross-rank epoch observer for in-process clusters.
///
/// Each rank publishes its epoch when it starts a new one and checks that no
/// other rank is more than one epoch away.
#[derive(Debug)]
pub struct SkewMonitor {
    epochs: Vec<AtomicU64>,
    violations: AtomicU64,
    max_skew: AtomicU64,
}

impl SkewMonitor {
    pub fn new(ranks: usize) -> Self {
        SkewMonitor {
            epochs: (0..ranks).map(|_| AtomicU64::new(0)).collect(),
            violations: AtomicU64::new(0),
            max_skew: AtomicU64::new(0),
        }
    }

    pub fn enter(&self, rank: usize, epoch: u64) {
        self.epochs[rank].store(epoch, Ordering::SeqCst);
        for (q, other) in self.epochs.iter().enumerate() {
            if q == rank {
                continue;
            }
            let eq = other.load(Ordering::SeqCst);
            let skew = eq.abs_diff(epoch);
            self.max_skew.fetch_max(skew, Ordering::Relaxed);
            if skew > 1 {
                self.violations.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }

    pub fn max_skew(&self) -> u64 {
        self.max_skew.load(Ordering::Relaxed)
    }
}

/// What a rank returns; `result` is present on rank 0 only and `stats` is
/// only complete there.
#[derive(Debug)]
pub struct RankOutcome {
    pub result: Option<ApproxResult>,
    pub stats: RunStats,
}

/// Counts a finished worker. Dropped before the worker's seat, so the count
/// changes while the worker still holds its turn.
struct DoneGuard<'a>(&'a AtomicUsize);

impl Drop for DoneGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_add(1, Ordering::AcqRel);
    }
}

struct SetOnDrop<'a>(&'a AtomicBool);

impl Drop for SetOnDrop<'_> {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Release);
    }
}

/// Runs `worker(t)` on threads `1..threads` of `rank` while the calling
/// thread runs `coord`, then waits for all workers.
fn with_workers<RW, RC>(
    seat: &Seat,
    rank: usize,
    threads: usize,
    worker: impl Fn(usize, &Seat) -> RW + Sync,
    coord: impl FnOnce() -> RC,
) -> (RC, Vec<Result<RW, EngineError>>)
where
    RW: Send,
{
    let done = AtomicUsize::new(0);
    std::thread::scope(|s| {
        let handles: Vec<_> = (1..threads)
            .map(|t| {
                let id = WorkerId::new(rank, t);
                seat.admit(id);
                let pacer = seat.pacer().clone();
                let (worker, done) = (&worker, &done);
                s.spawn(move || {
                    let ws = pacer.seat(id);
                    let _done = DoneGuard(done);
                    worker(t, &ws)
                })
            })
            .collect();
        let rc = coord();
        while done.load(Ordering::Acquire) < threads - 1 {
            seat.idle();
        }
        let rw = handles
            .into_iter()
            .map(|h| h.join().map_err(|p| EngineError::Panicked(panic_message(p))))
            .collect();
        (rc, rw)
    })
}

/// Thread-local sample source that counts what it produces.
struct Producer<'g> {
    sampler: PathSampler<'g>,
    applied: u64,
}

impl<'g> Producer<'g> {
    fn new(g: &'g Graph, seed: u64, phase: Phase, rank: usize, thread: usize) -> Result<Self, EngineError> {
        Ok(Producer {
            sampler: PathSampler::new(g, worker_rng(seed, phase, rank, thread))?,
            applied: 0,
        })
    }

    #[inline]
    fn sample_into(&mut self, frame: &mut StateFrame, seat: &Seat) {
        frame.record(self.sampler.next_internal());
        self.applied += 1;
        seat.tick();
    }

    #[inline]
    fn sample_into_epoch(&mut self, coord: &mut Coordinator, seat: &Seat) {
        coord.record(self.sampler.next_internal());
        self.applied += 1;
        seat.tick();
    }
}

/// State owned by rank 0 during the adaptive phase.
struct Root {
    params: StoppingParams,
    state: StateFrame,
}

#[derive(Default)]
struct AdaptiveOut {
    applied: u64,
    discarded: u64,
    stamp: u64,
    skew: u64,
}

/// Runs the whole pipeline as one rank of `world`, on the thread owning
/// `seat`. Every rank of `world` must call this with the same graph and
/// configuration.
pub fn run_rank<C: Communicator>(
    g: &Graph,
    cfg: &RunConfig,
    mut world: C,
    seat: &Seat,
    monitor: &SkewMonitor,
) -> Result<RankOutcome, EngineError> {
    let rank = world.rank();
    let n = g.n();
    let mut stats = RunStats {
        ranks: world.size(),
        threads: cfg.threads,
        ..Default::default()
    };
    let t_start = seat.now();

    let local_vd = if rank == 0 {
        match diameter_upper_bound(g, cfg.diameter_sweeps, cfg.seed) {
            Ok(gs) => gs.vertex_diameter_bound as u64,
            Err(e) => {
                world.broadcast_blocking(0, 0, seat)?;
                return Err(e.into());
            }
        }
    } else {
        0
    };
    let vd = world.broadcast_blocking(local_vd, 0, seat)?;
    if vd == 0 {
        return Err(EngineError::Config("diameter computation failed on rank 0".into()));
    }
    stats.diameter_s = seat.now() - t_start;
    stats.vertex_diameter_bound = vd;
    stats.omega = cfg
        .omega_override
        .unwrap_or_else(|| compute_omega(vd, cfg.eps, cfg.delta));
    stats.epoch_length = cfg.epoch_length();

    let t_cal = seat.now();
    let threads = cfg.threads;
    let per_thread = cfg.calibration_per_thread;
    let calibrate_thread = |t: usize, seat: &Seat| -> Result<StateFrame, EngineError> {
        let mut p = Producer::new(g, cfg.seed, Phase::Calibration, rank, t)?;
        let mut frame = StateFrame::zeroed(n);
        for _ in 0..per_thread {
            p.sample_into(&mut frame, seat);
        }
        Ok(frame)
    };
    let (own, others) = with_workers(seat, rank, threads, calibrate_thread, || calibrate_thread(0, seat));
    let mut cal = own?;
    for f in others {
        cal.add_assign(&f??);
    }
    let cal_total = world.reduce_sum_blocking(cal.as_words(), 0, seat)?;
    let mut root = cal_total.map(|words| {
        let frame = StateFrame::from_words(words);
        let (dl, du) = calibrate(&frame, cfg.delta, n, cfg.allocator);
        stats.calibration_samples = frame.tau();
        Root {
            params: StoppingParams::new(cfg.eps, cfg.delta, stats.omega, dl, du),
            state: StateFrame::zeroed(n),
        }
    });
    stats.calibration_s = seat.now() - t_cal;

    let out = match cfg.algorithm {
        Algorithm::RankOnly => rank_only(g, cfg, &mut world, seat, monitor, root.as_mut(), &mut stats)?,
        Algorithm::Epoch => {
            let mut topo = hierarchical_topology(&mut world, |r| cfg.node_of(r), seat)?;
            epoch_based(g, cfg, rank, &mut topo, seat, monitor, root.as_mut(), &mut stats)?
        }
    };

    let totals = world.reduce_sum_blocking(&[out.applied, out.discarded, out.stamp, out.skew], 0, seat)?;
    stats.total_s = seat.now() - t_start;
    let result = match (root, totals) {
        (Some(root), Some(t)) => {
            stats.applied = t[0];
            stats.discarded = t[1];
            stats.stamp_violations = t[2];
            stats.skew_violations = t[3];
            stats.tau = root.state.tau();
            stats.samples = stats.applied + stats.calibration_samples;
            debug_assert_eq!(stats.tau, stats.applied - stats.discarded);
            let words = root.state.into_words();
            Some(ApproxResult::from_counts(
                words[0],
                words[1..].to_vec(),
                g.original_ids().to_vec(),
            ))
        }
        _ => None,
    };
    Ok(RankOutcome { result, stats })
}

fn mib(words: usize) -> f64 {
    (words * 8) as f64 / (1u64 << 20) as f64
}

/// One thread per rank; each round snapshots the local frame, reduces the
/// snapshot to rank 0 without blocking and broadcasts the decision, sampling
/// into a fresh frame while either collective is in flight.
fn rank_only<C: Communicator>(
    g: &Graph,
    cfg: &RunConfig,
    world: &mut C,
    seat: &Seat,
    monitor: &SkewMonitor,
    mut root: Option<&mut Root>,
    stats: &mut RunStats,
) -> Result<AdaptiveOut, EngineError> {
    let rank = world.rank();
    let n = g.n();
    let n0 = stats.epoch_length;
    stats.comm_mib_per_epoch = mib((n + 1) * world.size());
    let t0 = seat.now();
    let mut p = Producer::new(g, cfg.seed, Phase::Adaptive, rank, 0)?;
    let mut local = StateFrame::zeroed(n);
    let mut round = 0;
    loop {
        for _ in 0..n0 {
            p.sample_into(&mut local, seat);
        }
        let snapshot = std::mem::replace(&mut local, StateFrame::zeroed(n));
        round += 1;
        monitor.enter(rank, round);

        let tb = seat.now();
        let mut req = world.ireduce_sum(snapshot.as_words(), 0)?;
        while !req.poll()? {
            p.sample_into(&mut local, seat);
        }
        stats.barrier_s += seat.now() - tb;

        let mut stop = false;
        if let Some(total) = req.take() {
            let root = root.as_deref_mut().expect("reduction result outside rank 0");
            let tc = seat.now();
            root.state.add_assign(&StateFrame::from_words(total));
            stats.epochs += 1;
            stop = check_stop(&root.state, &root.params, cfg.bound);
            stats.check_s += seat.now() - tc;
        }
        let mut req = world.ibroadcast(stop as u64, 0)?;
        while !req.poll()? {
            p.sample_into(&mut local, seat);
        }
        if req.take() != 0 {
            break;
        }
    }
    stats.adaptive_s = seat.now() - t0;
    Ok(AdaptiveOut {
        applied: p.applied,
        discarded: local.tau(),
        stamp: 0,
        skew: 0,
    })
}

/// `threads` per rank: samplers run freely and only acknowledge epoch
/// transitions; thread 0 drives the epochs and all communication.
#[allow(clippy::too_many_arguments)]
fn epoch_based<C: Communicator>(
    g: &Graph,
    cfg: &RunConfig,
    rank: usize,
    topo: &mut Topology<C>,
    seat: &Seat,
    monitor: &SkewMonitor,
    mut root: Option<&mut Root>,
    stats: &mut RunStats,
) -> Result<AdaptiveOut, EngineError> {
    let n = g.n();
    let n0 = stats.epoch_length;
    let threads = cfg.threads;
    let mut nodes: Vec<usize> = (0..stats.ranks).map(|r| cfg.node_of(r)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    stats.comm_mib_per_epoch = mib((n + 1) * (stats.ranks + nodes.len()));

    let clock = EpochClock::new(threads, n);
    let mut coord = clock.coordinator();
    let stop = AtomicBool::new(false);

    let sampler = |t: usize, seat: &Seat| -> Result<u64, EngineError> {
        let mut h = clock.sampler(t);
        let mut p = PathSampler::new(g, worker_rng(cfg.seed, Phase::Adaptive, rank, t))?;
        let mut applied = 0;
        loop {
            h.record(p.next_internal());
            applied += 1;
            seat.tick();
            h.check_transition(h.epoch());
            if stop.load(Ordering::Acquire) {
                return Ok(applied);
            }
        }
    };

    let t0 = seat.now();
    let drive = || -> Result<u64, EngineError> {
        let _stop = SetOnDrop(&stop);
        let mut p = Producer::new(g, cfg.seed, Phase::Adaptive, rank, 0)?;
        let coord = &mut coord;
        let mut e = 0;
        loop {
            for _ in 0..n0 {
                p.sample_into_epoch(coord, seat);
            }
            let tt = seat.now();
            let mut h = coord.force_transition(e);
            monitor.enter(rank, e + 1);
            while !coord.poll_transition(&mut h) {
                p.sample_into_epoch(coord, seat);
            }
            stats.transition_s += seat.now() - tt;
            let frame = coord.collect_epoch(h);
            e += 1;

            let tr = seat.now();
            let local_sum = topo.local.reduce_sum_blocking(frame.as_words(), 0, seat)?;
            stats.reduce_s += seat.now() - tr;

            let mut stop_now = false;
            if let Some(global) = topo.global.as_mut() {
                let local_sum = local_sum.expect("node leader is the local root");
                let tb = seat.now();
                let total = match cfg.reduce_mode {
                    ReduceMode::Ireduce => {
                        let mut req = global.ireduce_sum(&local_sum, 0)?;
                        while !req.poll()? {
                            p.sample_into_epoch(coord, seat);
                        }
                        stats.barrier_s += seat.now() - tb;
                        req.take()
                    }
                    ReduceMode::IbarrierReduce => {
                        let mut req = global.ibarrier()?;
                        while !req.poll()? {
                            p.sample_into_epoch(coord, seat);
                        }
                        let tr = seat.now();
                        stats.barrier_s += tr - tb;
                        let total = global.reduce_sum_blocking(&local_sum, 0, seat)?;
                        stats.reduce_s += seat.now() - tr;
                        total
                    }
                };
                if let Some(total) = total {
                    let root = root.as_deref_mut().expect("reduction result outside rank 0");
                    let tc = seat.now();
                    root.state.add_assign(&StateFrame::from_words(total));
                    stats.epochs += 1;
                    stop_now = check_stop(&root.state, &root.params, cfg.bound);
                    stats.check_s += seat.now() - tc;
                }
                let mut req = global.ibroadcast(stop_now as u64, 0)?;
                while !req.poll()? {
                    p.sample_into_epoch(coord, seat);
                }
                stop_now = req.take() != 0;
            }
            let mut req = topo.local.ibroadcast(stop_now as u64, 0)?;
            while !req.poll()? {
                p.sample_into_epoch(coord, seat);
            }
            if req.take() != 0 {
                stats.adaptive_s = seat.now() - t0;
                return Ok(p.applied);
            }
        }
    };

    let (own, samplers) = with_workers(seat, rank, threads, sampler, drive);
    let mut applied = own?;
    for s in samplers {
        applied += s??;
    }
    let discarded = coord.drain_remaining().tau();
    let v = clock.violations();
    Ok(AdaptiveOut {
        applied,
        discarded,
        stamp: v.stamp,
        skew: v.skew,
    })
}
