//! Exact betweenness references.
//!
//! [`brandes_exact`] runs one BFS per source and accumulates dependencies
//! bottom-up; [`brute_force_betweenness`] counts shortest paths for every
//! pair explicitly. The two share no code beyond BFS distances, so agreement
//! between them is meaningful. Scores are normalised by `n (n - 1)` over
//! ordered pairs, with endpoints excluded.

use std::collections::VecDeque;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{bfs, Graph, Vertex, UNREACHED};

pub const BRUTE_FORCE_MAX_N: usize = 200;
pub const ENUMERATION_MAX_N: usize = 50;
pub const ENUMERATION_MAX_PATHS: usize = 10_000;

/// Fixed number of source blocks, so the summation order does not depend on
/// the thread pool.
const SOURCE_BLOCKS: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("graph has {n} vertices, limit is {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("more than {0} shortest paths")]
    TooManyPaths(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactScores {
    pub scores: Vec<f64>,
}

impl ExactScores {
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.scores.len(), other.len());
        self.scores
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

struct Brandes {
    order: Vec<Vertex>,
    queue: VecDeque<Vertex>,
    dist: Vec<u32>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
}

impl Brandes {
    fn new(n: usize) -> Self {
        Brandes {
            order: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
            dist: vec![UNREACHED; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
        }
    }

    /// Adds the dependencies of source `s` to `acc`.
    fn accumulate(&mut self, g: &Graph, s: Vertex, acc: &mut [Compensated]) {
        self.order.clear();
        self.dist.fill(UNREACHED);
        self.sigma.fill(0.0);
        self.delta.fill(0.0);
        self.dist[s] = 0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.order.push(v);
            for &w in g.neighbors(v) {
                if self.dist[w] == UNREACHED {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                }
            }
        }
        for &w in self.order.iter().rev() {
            for &v in g.neighbors(w) {
                if self.dist[v] != UNREACHED && self.dist[v] + 1 == self.dist[w] {
                    self.delta[v] += self.sigma[v] / self.sigma[w] * (1.0 + self.delta[w]);
                }
            }
            if w != s {
                acc[w].add(self.delta[w]);
            }
        }
    }
}

/// Exact normalised betweenness of every vertex.
pub fn brandes_exact(g: &Graph) -> ExactScores {
    let n = g.n();
    if n < 2 {
        return ExactScores { scores: vec![0.0; n] };
    }
    let block = n.div_ceil(SOURCE_BLOCKS);
    let partials: Vec<Vec<Compensated>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(block)
        .map(|sources| {
            let mut state = Brandes::new(n);
            let mut acc = vec![Compensated::default(); n];
            for &s in sources {
                state.accumulate(g, s, &mut acc);
            }
            acc
        })
        .collect();
    let norm = (n * (n - 1)) as f64;
    let scores = (0..n)
        .map(|v| {
            let mut total = Compensated::default();
            for part in &partials {
                total.add(part[v].sum);
                total.add(part[v].carry);
            }
            total.value() / norm
        })
        .collect();
    ExactScores { scores }
}

/// All-pairs shortest-path counting; `O(n^3)`, limited to small graphs.
pub fn brute_force_betweenness(g: &Graph) -> Result<ExactScores, OracleError> {
    let n = g.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(OracleError::TooLarge {
            n,
            limit: BRUTE_FORCE_MAX_N,
        });
    }
    if n < 2 {
        return Ok(ExactScores { scores: vec![0.0; n] });
    }
    let dist: Vec<Vec<u32>> = (0..n).map(|s| bfs(g, s).dist).collect();
    let sigma: Vec<Vec<f64>> = (0..n).map(|s| path_counts(g, &dist[s])).collect();
    let mut scores = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            let d = dist[s][t];
            if s == t || d == UNREACHED {
                continue;
            }
            for v in 0..n {
                if v == s || v == t || dist[s][v] == UNREACHED || dist[v][t] == UNREACHED {
                    continue;
                }
                if dist[s][v] + dist[v][t] == d {
                    scores[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
                }
            }
        }
    }
    let norm = (n * (n - 1)) as f64;
    for x in &mut scores {
        *x /= norm;
    }
    Ok(ExactScores { scores })
}

/// Number of shortest paths from the BFS root to every vertex, given its distances.
fn path_counts(g: &Graph, dist: &[u32]) -> Vec<f64> {
    let n = g.n();
    let mut by_level: Vec<Vertex> = (0..n).filter(|&v| dist[v] != UNREACHED).collect();
    by_level.sort_by_key(|&v| dist[v]);
    let mut sigma = vec![0.0; n];
    for &v in &by_level {
        if dist[v] == 0 {
            sigma[v] = 1.0;
            continue;
        }
        sigma[v] = g
            .neighbors(v)
            .iter()
            .filter(|&&u| dist[u] != UNREACHED && dist[u] + 1 == dist[v])
            .map(|&u| sigma[u])
            .sum();
    }
    sigma
}

/// Every distinct shortest `s`-`t` path, as full vertex sequences.
pub fn enumerate_shortest_paths(g: &Graph, s: Vertex, t: Vertex) -> Result<Vec<Vec<Vertex>>, OracleError> {
    let n = g.n();
    if n > ENUMERATION_MAX_N {
        return Err(OracleError::TooLarge {
            n,
            limit: ENUMERATION_MAX_N,
        });
    }
    let from_t = bfs(g, t).dist;
    if from_t[s] == UNREACHED {
        return Ok(Vec::new());
    }
    let mut paths = Vec::new();
    let mut current = vec![s];
    extend_paths(g, &from_t, t, &mut current, &mut paths)?;
    Ok(paths)
}

fn extend_paths(
    g: &Graph,
    to_t: &[u32],
    t: Vertex,
    current: &mut Vec<Vertex>,
    out: &mut Vec<Vec<Vertex>>,
) -> Result<(), OracleError> {
    let v = *current.last().unwrap();
    if v == t {
        if out.len() == ENUMERATION_MAX_PATHS {
            return Err(OracleError::TooManyPaths(ENUMERATION_MAX_PATHS));
        }
        out.push(current.clone());
        return Ok(());
    }
    for &w in g.neighbors(v) {
        if to_t[w] != UNREACHED && to_t[w] + 1 == to_t[v] {
            current.push(w);
            extend_paths(g, to_t, t, current, out)?;
            current.pop();
        }
    }
    Ok(())
}
