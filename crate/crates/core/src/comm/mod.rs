//! Rank-level collectives.
//!
//! [`Communicator`] is the contract the engine is written against: rank and
//! size, non-blocking sum-reduction, barrier and broadcast, a blocking
//! reduction and communicator splitting. Only thread zero of a rank may use
//! its communicator (the funneled threading discipline); the simulated
//! backend checks this at runtime.
//!
//! A binding to a real message-passing library maps one-to-one:
//! `ireduce_sum` to a non-blocking `MPI_SUM` reduction over `u64`,
//! `ibarrier`, `ibroadcast` to their non-blocking counterparts,
//! `reduce_sum_blocking` to the blocking reduction and `split` to a
//! communicator split keyed by color with rank order preserved. Polling maps
//! to `test` on the underlying request. Such a binding would pass a free
//! running [`Pacer`] to the engine.

pub mod pacer;
pub mod sim;

use thiserror::Error;

pub use pacer::{Pacer, Seat, WorkerId};
pub use sim::{ClockMode, SimCluster, SimComm, SimNetConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("collective mismatch on communicator {comm} (call #{seq}): {detail}")]
    Mismatch { comm: u64, seq: u64, detail: String },
    #[error("buffer length mismatch: expected {expected} words, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("root {root} out of range for communicator of size {size}")]
    BadRoot { root: usize, size: usize },
    #[error("communicator used from a thread other than its owner")]
    WrongThread,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// How a communicator's members are connected; selects the latency model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Between compute nodes.
    Network,
    /// Ranks on the same node (shared memory).
    IntraNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Reduce,
    Barrier,
    Broadcast,
    Split,
}

/// Backend side of an in-flight operation.
pub trait PendingOp<T>: Send {
    /// Returns the result once the operation has completed.
    fn test(&mut self) -> Result<Option<T>, CommError>;
}

/// Handle to a non-blocking collective. Completes exactly once; polling a
/// completed handle keeps returning true.
pub struct Request<T> {
    kind: OpKind,
    op: Option<Box<dyn PendingOp<T>>>,
    result: Option<T>,
}

impl<T> std::fmt::Debug for Request<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Request")
            .field("kind", &self.kind)
            .field("done", &self.result.is_some())
            .finish()
    }
}

impl<T> Request<T> {
    pub fn new(kind: OpKind, op: Box<dyn PendingOp<T>>) -> Self {
        Request {
            kind,
            op: Some(op),
            result: None,
        }
    }

    /// An already completed request.
    pub fn ready(kind: OpKind, value: T) -> Self {
        Request {
            kind,
            op: None,
            result: Some(value),
        }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn poll(&mut self) -> Result<bool, CommError> {
        if self.result.is_some() {
            return Ok(true);
        }
        let op = self.op.as_mut().expect("request without operation");
        if let Some(value) = op.test()? {
            self.result = Some(value);
            self.op = None;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn is_done(&self) -> bool {
        self.result.is_some()
    }

    /// The result of a completed request.
    pub fn take(self) -> T {
        self.result.expect("request not completed")
    }

    /// Polls until completion, idling the caller's seat in between.
    pub fn wait(mut self, seat: &Seat) -> Result<T, CommError> {
        while !self.poll()? {
            seat.idle();
        }
        Ok(self.take())
    }
}

pub trait Communicator: Send + Sized {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;

    /// Starts an elementwise sum of `data` over all ranks; the root's request
    /// yields `Some(sum)`, every other rank's yields `None`. `data` is copied
    /// at initiation.
    fn ireduce_sum(&mut self, data: &[u64], root: usize) -> Result<Request<Option<Vec<u64>>>, CommError>;

    fn ibarrier(&mut self) -> Result<Request<()>, CommError>;

    /// Every rank's request yields the root's `value`.
    fn ibroadcast(&mut self, value: u64, root: usize) -> Result<Request<u64>, CommError>;

    fn reduce_sum_blocking(&mut self, data: &[u64], root: usize, seat: &Seat) -> Result<Option<Vec<u64>>, CommError>;

    /// Ranks passing the same `color` form a new communicator, ordered by
    /// their rank in `self`.
    fn split(&mut self, color: u64, link: Link, seat: &Seat) -> Result<Self, CommError>;

    fn broadcast_blocking(&mut self, value: u64, root: usize, seat: &Seat) -> Result<u64, CommError> {
        self.ibroadcast(value, root)?.wait(seat)
    }

    fn barrier_blocking(&mut self, seat: &Seat) -> Result<(), CommError> {
        self.ibarrier()?.wait(seat)
    }
}
