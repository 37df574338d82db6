//! Uniform shortest-path sampling between uniformly random vertex pairs.
//!
//! A sample draws an ordered pair `(s, t)` with `s != t` and one shortest
//! `s`-`t` path uniformly among all of them. The path is found with a
//! level-synchronous bidirectional BFS that counts shortest paths (`sigma`)
//! from both ends; once the two balls touch, a meeting vertex is chosen with
//! probability proportional to `sigma_s(v) * sigma_t(v)` and the path is
//! completed by walking towards each endpoint, picking every predecessor
//! with probability proportional to its own path count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::epoch::StateFrame;
use crate::graph::{Graph, Vertex, UNREACHED};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("pair sampling needs at least two vertices, graph has {0}")]
    TooFewVertices(usize),
}

/// Phase tags used to derive independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Calibration = 1,
    Adaptive = 2,
}

/// Independent generator for one worker: the master seed keys the
/// generator and `(phase, rank, thread)` selects the stream.
pub fn worker_rng(master_seed: u64, phase: Phase, rank: usize, thread: usize) -> ChaCha8Rng {
    assert!(rank < 1 << 24 && thread < 1 << 24);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((phase as u64) << 48) | ((rank as u64) << 24) | thread as u64);
    rng
}

/// Uniform ordered pair of distinct vertices.
pub fn sample_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(Vertex, Vertex), SamplerError> {
    if n < 2 {
        return Err(SamplerError::TooFewVertices(n));
    }
    let s = rng.gen_range(0..n);
    let mut t = rng.gen_range(0..n - 1);
    if t >= s {
        t += 1;
    }
    Ok((s, t))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSample {
    pub source: Vertex,
    pub target: Vertex,
    /// Vertices strictly between source and target; empty if unreachable.
    pub internal: Vec<Vertex>,
}

pub fn apply_sample(frame: &mut StateFrame, sample: &PathSample) {
    frame.record(&sample.internal);
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    S,
    T,
}

/// Per-worker search state, reset in O(1) between searches by stamping.
#[derive(Debug, Clone)]
pub struct SearchScratch {
    stamp: u32,
    seen_s: Vec<u32>,
    seen_t: Vec<u32>,
    dist_s: Vec<u32>,
    dist_t: Vec<u32>,
    sigma_s: Vec<f64>,
    sigma_t: Vec<f64>,
    frontier_s: Vec<Vertex>,
    frontier_t: Vec<Vertex>,
    next: Vec<Vertex>,
    meeting: Vec<Vertex>,
    half: Vec<Vertex>,
}

impl SearchScratch {
    pub fn new(n: usize) -> Self {
        SearchScratch {
            stamp: 0,
            seen_s: vec![0; n],
            seen_t: vec![0; n],
            dist_s: vec![UNREACHED; n],
            dist_t: vec![UNREACHED; n],
            sigma_s: vec![0.0; n],
            sigma_t: vec![0.0; n],
            frontier_s: Vec::new(),
            frontier_t: Vec::new(),
            next: Vec::new(),
            meeting: Vec::new(),
            half: Vec::new(),
        }
    }

    fn begin(&mut self) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.seen_s.fill(0);
            self.seen_t.fill(0);
            self.stamp = 1;
        }
    }

    #[inline]
    fn on_s(&self, v: Vertex) -> bool {
        self.seen_s[v] == self.stamp
    }

    #[inline]
    fn on_t(&self, v: Vertex) -> bool {
        self.seen_t[v] == self.stamp
    }

    #[inline]
    fn visit(&mut self, side: Side, v: Vertex, dist: u32, sigma: f64) {
        match side {
            Side::S => {
                self.seen_s[v] = self.stamp;
                self.dist_s[v] = dist;
                self.sigma_s[v] = sigma;
            }
            Side::T => {
                self.seen_t[v] = self.stamp;
                self.dist_t[v] = dist;
                self.sigma_t[v] = sigma;
            }
        }
    }

    /// Expands one full BFS level on `side`. Returns the new level's pending
    /// edge count (sum of degrees). Newly reached vertices already seen by
    /// the other side are collected into `self.meeting`.
    fn expand(&mut self, g: &Graph, side: Side, level: u32) -> usize {
        let frontier = match side {
            Side::S => std::mem::take(&mut self.frontier_s),
            Side::T => std::mem::take(&mut self.frontier_t),
        };
        let mut next = std::mem::take(&mut self.next);
        next.clear();
        let mut pending = 0;
        for &u in &frontier {
            let sigma_u = match side {
                Side::S => self.sigma_s[u],
                Side::T => self.sigma_t[u],
            };
            for &w in g.neighbors(u) {
                let (seen, other) = match side {
                    Side::S => (self.on_s(w), self.on_t(w)),
                    Side::T => (self.on_t(w), self.on_s(w)),
                };
                if !seen {
                    self.visit(side, w, level + 1, sigma_u);
                    next.push(w);
                    pending += g.degree(w);
                    if other {
                        self.meeting.push(w);
                    }
                } else {
                    match side {
                        Side::S if self.dist_s[w] == level + 1 => self.sigma_s[w] += sigma_u,
                        Side::T if self.dist_t[w] == level + 1 => self.sigma_t[w] += sigma_u,
                        _ => {}
                    }
                }
            }
        }
        self.next = frontier;
        match side {
            Side::S => self.frontier_s = next,
            Side::T => self.frontier_t = next,
        }
        pending
    }

    /// Walks from `from` towards the root of `side`, pushing every vertex
    /// strictly between `from` and the root into `out` (excluding `from`).
    fn walk_to_root<R: Rng + ?Sized>(&self, g: &Graph, side: Side, from: Vertex, rng: &mut R, out: &mut Vec<Vertex>) {
        let (dist, sigma) = match side {
            Side::S => (&self.dist_s, &self.sigma_s),
            Side::T => (&self.dist_t, &self.sigma_t),
        };
        let seen = |v: Vertex| match side {
            Side::S => self.on_s(v),
            Side::T => self.on_t(v),
        };
        let mut x = from;
        while dist[x] > 1 {
            let d = dist[x];
            let mut r = rng.gen::<f64>() * sigma[x];
            let mut chosen = None;
            for &y in g.neighbors(x) {
                if seen(y) && dist[y] + 1 == d {
                    chosen = Some(y);
                    r -= sigma[y];
                    if r < 0.0 {
                        break;
                    }
                }
            }
            x = chosen.expect("BFS predecessor");
            out.push(x);
        }
    }

    /// Samples one uniform shortest `s`-`t` path and writes its internal
    /// vertices (in order from `s` to `t`) into `internal`. Returns false if
    /// `t` is unreachable, leaving `internal` empty.
    pub fn sample_path<R: Rng + ?Sized>(
        &mut self,
        g: &Graph,
        s: Vertex,
        t: Vertex,
        rng: &mut R,
        internal: &mut Vec<Vertex>,
    ) -> bool {
        assert_ne!(s, t, "sample_path needs distinct endpoints");
        internal.clear();
        self.begin();
        self.meeting.clear();
        self.frontier_s.clear();
        self.frontier_t.clear();
        self.visit(Side::S, s, 0, 1.0);
        self.visit(Side::T, t, 0, 1.0);
        self.frontier_s.push(s);
        self.frontier_t.push(t);
        let (mut level_s, mut level_t) = (0u32, 0u32);
        let (mut pending_s, mut pending_t) = (g.degree(s), g.degree(t));

        loop {
            if self.frontier_s.is_empty() || self.frontier_t.is_empty() {
                return false;
            }
            if pending_s <= pending_t {
                pending_s = self.expand(g, Side::S, level_s);
                level_s += 1;
            } else {
                pending_t = self.expand(g, Side::T, level_t);
                level_t += 1;
            }
            if !self.meeting.is_empty() {
                break;
            }
        }

        // Every shortest path crosses the meeting set exactly once.
        let total: f64 = self.meeting.iter().map(|&v| self.sigma_s[v] * self.sigma_t[v]).sum();
        let mut r = rng.gen::<f64>() * total;
        let mut mid = *self.meeting.last().unwrap();
        for &v in &self.meeting {
            r -= self.sigma_s[v] * self.sigma_t[v];
            if r < 0.0 {
                mid = v;
                break;
            }
        }
        debug_assert_eq!(self.dist_s[mid] + self.dist_t[mid], level_s + level_t);

        let mut half = std::mem::take(&mut self.half);
        half.clear();
        self.walk_to_root(g, Side::S, mid, rng, &mut half);
        internal.extend(half.iter().rev());
        if mid != s && mid != t {
            internal.push(mid);
        }
        self.walk_to_root(g, Side::T, mid, rng, internal);
        self.half = half;
        true
    }

    /// Reference sampler: plain BFS from `s`, then a backward walk from `t`.
    /// Induces the same path distribution as [`SearchScratch::sample_path`].
    pub fn sample_path_unidirectional<R: Rng + ?Sized>(
        &mut self,
        g: &Graph,
        s: Vertex,
        t: Vertex,
        rng: &mut R,
        internal: &mut Vec<Vertex>,
    ) -> bool {
        assert_ne!(s, t);
        internal.clear();
        self.begin();
        self.frontier_s.clear();
        self.visit(Side::S, s, 0, 1.0);
        self.frontier_s.push(s);
        let mut level = 0;
        while !self.on_s(t) {
            if self.frontier_s.is_empty() {
                return false;
            }
            self.expand(g, Side::S, level);
            level += 1;
        }
        // `t`'s level is complete once the loop exits, so sigma_s(t) is final.
        let mut back = std::mem::take(&mut self.half);
        back.clear();
        self.walk_to_root(g, Side::S, t, rng, &mut back);
        internal.extend(back.iter().rev());
        self.half = back;
        true
    }
}

/// One shortest-path sample between `s` and `t`.
pub fn sample_shortest_path<R: Rng + ?Sized>(
    g: &Graph,
    s: Vertex,
    t: Vertex,
    scratch: &mut SearchScratch,
    rng: &mut R,
) -> PathSample {
    let mut internal = Vec::new();
    scratch.sample_path(g, s, t, rng, &mut internal);
    PathSample {
        source: s,
        target: t,
        internal,
    }
}

/// Pair-plus-path sampler owned by one worker thread.
pub struct PathSampler<'g> {
    graph: &'g Graph,
    scratch: SearchScratch,
    rng: ChaCha8Rng,
    internal: Vec<Vertex>,
}

impl<'g> PathSampler<'g> {
    pub fn new(graph: &'g Graph, rng: ChaCha8Rng) -> Result<Self, SamplerError> {
        if graph.n() < 2 {
            return Err(SamplerError::TooFewVertices(graph.n()));
        }
        Ok(PathSampler {
            graph,
            scratch: SearchScratch::new(graph.n()),
            rng,
            internal: Vec::new(),
        })
    }

    /// Draws a pair and a shortest path; returns the internal vertices.
    pub fn next_internal(&mut self) -> &[Vertex] {
        let (s, t) = sample_pair(self.graph.n(), &mut self.rng).expect("n >= 2 checked at construction");
        self.scratch
            .sample_path(self.graph, s, t, &mut self.rng, &mut self.internal);
        &self.internal
    }

    pub fn next_sample(&mut self) -> PathSample {
        let (s, t) = sample_pair(self.graph.n(), &mut self.rng).expect("n >= 2 checked at construction");
        sample_shortest_path(self.graph, s, t, &mut self.scratch, &mut self.rng)
    }
}
