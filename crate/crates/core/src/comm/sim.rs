//! In-process simulated cluster.
//!
//! Every rank is an ordinary thread holding a [`SimComm`]. Collectives meet in
//! a shared router keyed by `(communicator, call sequence number)`. An
//! operation completes once every member has joined it and the clock (from
//! the cluster's [`Pacer`]) has passed
//!
//! ```text
//! last_arrival + (latency + jitter) * factor + bytes / bandwidth
//! ```
//!
//! Completion times on one communicator never decrease with the sequence
//! number, so operations complete in the order they were issued.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CommError, Communicator, Link, OpKind, Pacer, PendingOp, Request, Seat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Deterministic lockstep schedule with a virtual clock.
    Virtual,
    /// Free-running threads and wall-clock time.
    #[default]
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimNetConfig {
    /// Base latency of every inter-node collective.
    pub latency_ms: f64,
    /// Uniform extra latency in `[0, jitter_ms)`, drawn per operation.
    pub jitter_ms: f64,
    /// Zero means unlimited.
    pub bandwidth_mbps: f64,
    pub seed: u64,
    /// Multiplies the latency of non-blocking reductions only. Models
    /// implementations that make no asynchronous progress on them.
    pub slow_ireduce_factor: f64,
    /// Latency of collectives on intra-node communicators.
    pub intra_node_latency_ms: f64,
    pub clock: ClockMode,
    /// Length of one lockstep tick in virtual mode.
    pub tick_us: f64,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        SimNetConfig {
            latency_ms: 0.0,
            jitter_ms: 0.0,
            bandwidth_mbps: 0.0,
            seed: 0,
            slow_ireduce_factor: 1.0,
            intra_node_latency_ms: 0.0,
            clock: ClockMode::Real,
            tick_us: 10.0,
        }
    }
}

impl SimNetConfig {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("latency_ms", self.latency_ms),
            ("jitter_ms", self.jitter_ms),
            ("bandwidth_mbps", self.bandwidth_mbps),
            ("intra_node_latency_ms", self.intra_node_latency_ms),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.slow_ireduce_factor.is_finite() && self.slow_ireduce_factor >= 1.0) {
            return Err(format!(
                "slow_ireduce_factor must be >= 1, got {}",
                self.slow_ireduce_factor
            ));
        }
        if !(self.tick_us.is_finite() && self.tick_us > 0.0) {
            return Err(format!("tick_us must be positive, got {}", self.tick_us));
        }
        Ok(())
    }

    /// The pacer matching `clock`.
    pub fn pacer(&self) -> Pacer {
        match self.clock {
            ClockMode::Virtual => Pacer::lockstep(self.tick_us * 1e-6),
            ClockMode::Real => Pacer::free(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotKind {
    IReduce,
    Reduce,
    Barrier,
    Broadcast,
    Split,
}

impl SlotKind {
    fn op(self) -> OpKind {
        match self {
            SlotKind::IReduce | SlotKind::Reduce => OpKind::Reduce,
            SlotKind::Barrier => OpKind::Barrier,
            SlotKind::Broadcast => OpKind::Broadcast,
            SlotKind::Split => OpKind::Split,
        }
    }
}

struct Slot {
    kind: SlotKind,
    root: usize,
    len: usize,
    inputs: Vec<Option<Vec<u64>>>,
    arrived: usize,
    ready_at: f64,
    collected: usize,
    error: Option<CommError>,
    output: Option<Output>,
}

enum Output {
    Sum(Vec<u64>),
    Value(u64),
    /// Per member: new communicator id, rank, size and link code.
    Groups(Vec<(u64, usize, usize, u64)>),
}

struct CommInfo {
    size: usize,
    link: Link,
    last_ready: f64,
}

struct RouterState {
    comms: HashMap<u64, CommInfo>,
    slots: HashMap<(u64, u64), Slot>,
}

struct Router {
    cfg: SimNetConfig,
    pacer: Pacer,
    state: Mutex<RouterState>,
}

const WORLD: u64 = 0;

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn tree_sum(inputs: &[Option<Vec<u64>>]) -> Vec<u64> {
    let mut level: Vec<Vec<u64>> = inputs.iter().map(|v| v.clone().unwrap_or_default()).collect();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        level = next;
    }
    level.pop().unwrap_or_default()
}

impl Router {
    fn delay(&self, comm: u64, seq: u64, info: &CommInfo, kind: SlotKind, len: usize) -> f64 {
        let cfg = &self.cfg;
        let mut lat = match info.link {
            Link::Network => {
                let jitter = if cfg.jitter_ms > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ mix(comm ^ mix(seq))));
                    rng.gen_range(0.0..cfg.jitter_ms)
                } else {
                    0.0
                };
                cfg.latency_ms + jitter
            }
            Link::IntraNode => cfg.intra_node_latency_ms,
        } * 1e-3;
        if kind == SlotKind::IReduce {
            lat *= cfg.slow_ireduce_factor;
        }
        let bytes = (len * 8) as f64;
        if cfg.bandwidth_mbps > 0.0 && info.link == Link::Network {
            lat += bytes * 8.0 / (cfg.bandwidth_mbps * 1e6);
        }
        lat
    }

    fn join(
        &self,
        comm: u64,
        seq: u64,
        rank: usize,
        kind: SlotKind,
        root: usize,
        input: Vec<u64>,
    ) -> Result<(), CommError> {
        let now = self.pacer.now();
        let mut st = self.state.lock().unwrap();
        let size = st.comms[&comm].size;
        let len = input.len();
        let slot = st.slots.entry((comm, seq)).or_insert_with(|| Slot {
            kind,
            root,
            len,
            inputs: vec![None; size],
            arrived: 0,
            ready_at: 0.0,
            collected: 0,
            error: None,
            output: None,
        });
        let mismatch = if slot.kind != kind {
            Some(format!("{:?} joined {:?}", kind, slot.kind))
        } else if slot.root != root {
            Some(format!("root {root} vs {}", slot.root))
        } else if slot.len != len {
            Some(format!("length {len} vs {}", slot.len))
        } else {
            None
        };
        if let Some(detail) = mismatch {
            let err = CommError::Mismatch { comm, seq, detail };
            slot.error.get_or_insert_with(|| err.clone());
            return Err(err);
        }
        debug_assert!(slot.inputs[rank].is_none());
        slot.inputs[rank] = Some(input);
        slot.arrived += 1;
        if slot.arrived < size {
            return Ok(());
        }
        let output = match kind {
            SlotKind::IReduce | SlotKind::Reduce => Output::Sum(tree_sum(&slot.inputs)),
            SlotKind::Barrier => Output::Value(0),
            SlotKind::Broadcast => Output::Value(slot.inputs[root].as_ref().unwrap()[0]),
            SlotKind::Split => {
                let keys: Vec<(u64, u64)> = slot
                    .inputs
                    .iter()
                    .map(|v| {
                        let v = v.as_ref().unwrap();
                        (v[0], v[1])
                    })
                    .collect();
                let groups = keys
                    .iter()
                    .enumerate()
                    .map(|(r, &(color, link))| {
                        let id = mix(comm ^ mix(seq ^ mix(color))) | 1;
                        let rank = keys[..r].iter().filter(|k| k.0 == color).count();
                        let size = keys.iter().filter(|k| k.0 == color).count();
                        (id, rank, size, link)
                    })
                    .collect();
                Output::Groups(groups)
            }
        };
        slot.output = Some(output);
        let slot_len = slot.len;
        let info = &st.comms[&comm];
        let ready = (now + self.delay(comm, seq, info, kind, slot_len)).max(info.last_ready);
        if let Some(Output::Groups(groups)) = &st.slots[&(comm, seq)].output {
            let new: Vec<(u64, usize, Link)> = groups
                .iter()
                .map(|&(id, _, size, link)| (id, size, if link == 1 { Link::IntraNode } else { Link::Network }))
                .collect();
            for (id, size, link) in new {
                st.comms.entry(id).or_insert(CommInfo {
                    size,
                    link,
                    last_ready: 0.0,
                });
            }
        }
        st.comms.get_mut(&comm).unwrap().last_ready = ready;
        st.slots.get_mut(&(comm, seq)).unwrap().ready_at = ready;
        Ok(())
    }

    /// `Some(output)` once the operation has completed for `rank`.
    fn test(&self, comm: u64, seq: u64, rank: usize) -> Result<Option<Output>, CommError> {
        let now = self.pacer.now();
        let mut st = self.state.lock().unwrap();
        let size = st.comms[&comm].size;
        let slot = st.slots.get_mut(&(comm, seq)).expect("unknown collective");
        if let Some(err) = &slot.error {
            return Err(err.clone());
        }
        if slot.arrived < size || now < slot.ready_at {
            return Ok(None);
        }
        let out = match slot.output.as_ref().unwrap() {
            Output::Sum(v) => Output::Sum(if rank == slot.root { v.clone() } else { Vec::new() }),
            Output::Value(v) => Output::Value(*v),
            Output::Groups(g) => Output::Groups(vec![g[rank]]),
        };
        slot.collected += 1;
        if slot.collected == size {
            st.slots.remove(&(comm, seq));
        }
        Ok(Some(out))
    }
}

/// Builds the world communicators of a simulated cluster.
pub struct SimCluster;

impl SimCluster {
    /// One communicator per rank; hand each to the thread that will run it.
    #[allow(clippy::new_ret_no_self)]
    pub fn new(size: usize, cfg: SimNetConfig, pacer: Pacer) -> Vec<SimComm> {
        assert!(size > 0);
        let mut comms = HashMap::new();
        comms.insert(
            WORLD,
            CommInfo {
                size,
                link: Link::Network,
                last_ready: 0.0,
            },
        );
        let router = Arc::new(Router {
            cfg,
            pacer,
            state: Mutex::new(RouterState {
                comms,
                slots: HashMap::new(),
            }),
        });
        (0..size)
            .map(|rank| SimComm {
                router: Arc::clone(&router),
                id: WORLD,
                rank,
                size,
                seq: 0,
                owner: None,
            })
            .collect()
    }
}

pub struct SimComm {
    router: Arc<Router>,
    id: u64,
    rank: usize,
    size: usize,
    seq: u64,
    owner: Option<ThreadId>,
}

impl std::fmt::Debug for SimComm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimComm")
            .field("id", &self.id)
            .field("rank", &self.rank)
            .field("size", &self.size)
            .finish()
    }
}

struct SimOp<T> {
    router: Arc<Router>,
    comm: u64,
    seq: u64,
    rank: usize,
    map: fn(Output) -> T,
}

impl<T: Send> PendingOp<T> for SimOp<T> {
    fn test(&mut self) -> Result<Option<T>, CommError> {
        Ok(self.router.test(self.comm, self.seq, self.rank)?.map(self.map))
    }
}

impl SimComm {
    pub fn id(&self) -> u64 {
        self.id
    }

    fn check_owner(&mut self) -> Result<(), CommError> {
        let me = std::thread::current().id();
        match self.owner {
            None => {
                self.owner = Some(me);
                Ok(())
            }
            Some(o) if o == me => Ok(()),
            Some(_) => Err(CommError::WrongThread),
        }
    }

    fn start<T: Send + 'static>(
        &mut self,
        kind: SlotKind,
        root: usize,
        input: Vec<u64>,
        map: fn(Output) -> T,
    ) -> Result<Request<T>, CommError> {
        self.check_owner()?;
        if root >= self.size {
            return Err(CommError::BadRoot { root, size: self.size });
        }
        let seq = self.seq;
        self.seq += 1;
        self.router.join(self.id, seq, self.rank, kind, root, input)?;
        Ok(Request::new(
            kind.op(),
            Box::new(SimOp {
                router: Arc::clone(&self.router),
                comm: self.id,
                seq,
                rank: self.rank,
                map,
            }),
        ))
    }
}

fn sum_output(o: Output) -> Vec<u64> {
    match o {
        Output::Sum(v) => v,
        _ => unreachable!(),
    }
}

fn value_output(o: Output) -> u64 {
    match o {
        Output::Value(v) => v,
        _ => unreachable!(),
    }
}

fn group_output(o: Output) -> (u64, usize, usize) {
    match o {
        Output::Groups(g) => (g[0].0, g[0].1, g[0].2),
        _ => unreachable!(),
    }
}

impl Communicator for SimComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn ireduce_sum(&mut self, data: &[u64], root: usize) -> Result<Request<Option<Vec<u64>>>, CommError> {
        if self.rank == root {
            self.start(SlotKind::IReduce, root, data.to_vec(), |o| Some(sum_output(o)))
        } else {
            self.start(SlotKind::IReduce, root, data.to_vec(), |_| None)
        }
    }

    fn ibarrier(&mut self) -> Result<Request<()>, CommError> {
        self.start(SlotKind::Barrier, 0, Vec::new(), |_| ())
    }

    fn ibroadcast(&mut self, value: u64, root: usize) -> Result<Request<u64>, CommError> {
        let input = if self.rank == root { vec![value] } else { vec![0] };
        self.start(SlotKind::Broadcast, root, input, value_output)
    }

    fn reduce_sum_blocking(&mut self, data: &[u64], root: usize, seat: &Seat) -> Result<Option<Vec<u64>>, CommError> {
        let is_root = self.rank == root;
        let v = self
            .start(SlotKind::Reduce, root, data.to_vec(), sum_output)?
            .wait(seat)?;
        Ok(is_root.then_some(v))
    }

    fn split(&mut self, color: u64, link: Link, seat: &Seat) -> Result<Self, CommError> {
        let code = match link {
            Link::Network => 0,
            Link::IntraNode => 1,
        };
        let (id, rank, size) = self
            .start(SlotKind::Split, 0, vec![color, code], group_output)?
            .wait(seat)?;
        Ok(SimComm {
            router: Arc::clone(&self.router),
            id,
            rank,
            size,
            seq: 0,
            owner: self.owner,
        })
    }
}
