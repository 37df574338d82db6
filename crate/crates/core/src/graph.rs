//! Undirected, unweighted graphs in compressed sparse row form.
//!
//! Vertices are dense indices in `[0, n)`. Every graph keeps the original
//! identifier of each vertex so that results can be reported against the
//! input file even after the largest connected component was extracted.

use std::collections::VecDeque;
use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Vertex = usize;

/// Distance marker for vertices not reached by a search.
pub const UNREACHED: u32 = u32::MAX;

const CACHE_MAGIC: &[u8; 8] = b"ABCGRAPH";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph has no edges")]
    Empty,
    #[error("graph is not connected")]
    Disconnected,
    #[error("invalid R-MAT parameters: {0}")]
    InvalidRmat(String),
    #[error("invalid binary graph cache: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable symmetric adjacency structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<Vertex>,
    original_ids: Vec<u64>,
}

impl Graph {
    /// Builds a graph on `n` vertices from an undirected edge list.
    ///
    /// Self-loops are dropped and parallel edges collapsed. Vertex `i` keeps
    /// `i` as its original identifier.
    pub fn from_edges(n: usize, edges: &[(Vertex, Vertex)]) -> Self {
        Self::from_edges_with_ids(edges, (0..n as u64).collect())
    }

    fn from_edges_with_ids(edges: &[(Vertex, Vertex)], original_ids: Vec<u64>) -> Self {
        let n = original_ids.len();
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) out of range for n = {n}");
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0; offsets[n]];
        for &(u, v) in edges {
            if u != v {
                targets[fill[u]] = v;
                fill[u] += 1;
                targets[fill[v]] = u;
                fill[v] += 1;
            }
        }

        // Sort and deduplicate each adjacency list, compacting in place.
        let mut write = 0;
        let mut new_offsets = Vec::with_capacity(n + 1);
        new_offsets.push(0);
        for v in 0..n {
            let (lo, hi) = (offsets[v], offsets[v + 1]);
            targets[lo..hi].sort_unstable();
            let mut last = None;
            for i in lo..hi {
                let w = targets[i];
                if last != Some(w) {
                    targets[write] = w;
                    write += 1;
                    last = Some(w);
                }
            }
            new_offsets.push(write);
        }
        targets.truncate(write);
        targets.shrink_to_fit();

        Graph {
            offsets: new_offsets,
            targets,
            original_ids,
        }
    }

    pub fn n(&self) -> usize {
        self.original_ids.len()
    }

    /// Number of undirected edges.
    pub fn m(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: Vertex) -> &[Vertex] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: Vertex) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn original_id(&self, v: Vertex) -> u64 {
        self.original_ids[v]
    }

    pub fn original_ids(&self) -> &[u64] {
        &self.original_ids
    }

    pub fn has_edge(&self, u: Vertex, v: Vertex) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (Vertex, Vertex)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Induced subgraph on `keep` (which must be sorted), with original ids carried over.
    fn induced(&self, keep: &[Vertex]) -> Graph {
        let mut remap = vec![usize::MAX; self.n()];
        for (i, &v) in keep.iter().enumerate() {
            remap[v] = i;
        }
        let edges: Vec<_> = keep
            .iter()
            .flat_map(|&u| {
                let remap = &remap;
                self.neighbors(u)
                    .iter()
                    .filter(move |&&v| u < v && remap[v] != usize::MAX)
                    .map(move |&v| (remap[u], remap[v]))
            })
            .collect();
        let ids = keep.iter().map(|&v| self.original_ids[v]).collect();
        Graph::from_edges_with_ids(&edges, ids)
    }
}

/// Reads a whitespace-separated edge list.
///
/// Lines starting with `#` or `%` are comments. Columns after the second are
/// ignored. Vertex identifiers are remapped to dense indices in increasing
/// order of their original value.
pub fn load_edge_list<R: BufRead>(reader: R) -> Result<Graph, GraphError> {
    let mut raw = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let mut next_id = |what: &str| -> Result<u64, GraphError> {
            let tok = tokens.next().ok_or_else(|| GraphError::Parse {
                line: lineno,
                msg: format!("missing {what} vertex"),
            })?;
            tok.parse::<u64>().map_err(|_| GraphError::Parse {
                line: lineno,
                msg: format!("invalid vertex id {tok:?}"),
            })
        };
        let u = next_id("source")?;
        let v = next_id("target")?;
        raw.push((u, v));
    }

    let mut ids: Vec<u64> = raw.iter().flat_map(|&(u, v)| [u, v]).collect();
    ids.sort_unstable();
    ids.dedup();
    let index = |x: u64| ids.binary_search(&x).unwrap();
    let edges: Vec<_> = raw.iter().map(|&(u, v)| (index(u), index(v))).collect();
    let g = Graph::from_edges_with_ids(&edges, ids.clone());
    if g.m() == 0 {
        return Err(GraphError::Empty);
    }
    Ok(g)
}

/// Writes the graph in the format accepted by [`load_edge_list`], using original ids.
pub fn write_edge_list<W: Write>(g: &Graph, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# n={} m={}", g.n(), g.m())?;
    for (u, v) in g.edges() {
        writeln!(out, "{} {}", g.original_id(u), g.original_id(v))?;
    }
    out.flush()
}

/// Little-endian binary cache: magic, version, n, m2, offsets, targets, ids.
pub fn write_binary<W: Write>(g: &Graph, mut out: W) -> std::io::Result<()> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(g.n() as u64).to_le_bytes())?;
    out.write_all(&(g.targets.len() as u64).to_le_bytes())?;
    for &o in &g.offsets {
        out.write_all(&(o as u64).to_le_bytes())?;
    }
    for &t in &g.targets {
        out.write_all(&(t as u64).to_le_bytes())?;
    }
    for &id in &g.original_ids {
        out.write_all(&id.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Graph, GraphError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(GraphError::BadCache("bad magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CACHE_VERSION {
        return Err(GraphError::BadCache(format!("unsupported version {version}")));
    }
    let read_u64 = |input: &mut R| -> Result<u64, GraphError> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let n = read_u64(&mut input)? as usize;
    let m2 = read_u64(&mut input)? as usize;
    let offsets = (0..=n)
        .map(|_| read_u64(&mut input).map(|x| x as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = (0..m2)
        .map(|_| read_u64(&mut input).map(|x| x as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let original_ids = (0..n).map(|_| read_u64(&mut input)).collect::<Result<Vec<_>, _>>()?;
    if offsets[n] != m2 || offsets.windows(2).any(|w| w[0] > w[1]) || targets.iter().any(|&t| t >= n) {
        return Err(GraphError::BadCache("inconsistent adjacency arrays".into()));
    }
    Ok(Graph {
        offsets,
        targets,
        original_ids,
    })
}

/// Induced subgraph on the largest connected component.
///
/// Ties between equally large components go to the one containing the
/// smallest original vertex id.
pub fn largest_connected_component(g: &Graph) -> Graph {
    let n = g.n();
    let mut comp = vec![usize::MAX; n];
    let mut best: Option<(usize, usize)> = None; // (size, component id)
    let mut queue = VecDeque::new();
    let mut next_id = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &w in g.neighbors(u) {
                if comp[w] == usize::MAX {
                    comp[w] = id;
                    queue.push_back(w);
                }
            }
        }
        // Components are discovered in increasing order of their smallest
        // vertex, and dense ids follow original-id order, so a strict
        // comparison keeps the tie-break.
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, id));
        }
    }
    let Some((size, id)) = best else {
        return g.clone();
    };
    if size == n {
        return g.clone();
    }
    let keep: Vec<_> = (0..n).filter(|&v| comp[v] == id).collect();
    g.induced(&keep)
}

/// Parameters of the recursive-matrix generator.
#[derive(Debug, Clone, Copy)]
pub struct RmatParams {
    pub scale: u32,
    pub edge_factor: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub seed: u64,
}

impl RmatParams {
    /// Graph500-style probabilities `(0.57, 0.19, 0.19, 0.05)` with 30 edges per vertex.
    pub fn graph500(scale: u32, seed: u64) -> Self {
        RmatParams {
            scale,
            edge_factor: 30,
            a: 0.57,
            b: 0.19,
            c: 0.19,
            d: 0.05,
            seed,
        }
    }
}

/// Generates an R-MAT graph on `2^scale` vertices from `edge_factor * 2^scale`
/// edge samples. Loops and duplicate samples are dropped.
pub fn gen_rmat(p: &RmatParams) -> Result<Graph, GraphError> {
    let probs = [p.a, p.b, p.c, p.d];
    if probs.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(GraphError::InvalidRmat("probabilities must lie in [0, 1]".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(GraphError::InvalidRmat(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    if p.scale == 0 || p.scale > 30 {
        return Err(GraphError::InvalidRmat(format!("scale {} outside [1, 30]", p.scale)));
    }
    let n = 1usize << p.scale;
    let samples = p.edge_factor as usize * n;
    let ab = p.a + p.b;
    let abc = ab + p.c;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut edges = Vec::with_capacity(samples);
    for _ in 0..samples {
        let (mut u, mut v) = (0usize, 0usize);
        for _ in 0..p.scale {
            let r: f64 = rng.gen();
            let (bu, bv) = if r < p.a {
                (0, 0)
            } else if r < ab {
                (0, 1)
            } else if r < abc {
                (1, 0)
            } else {
                (1, 1)
            };
            u = (u << 1) | bu;
            v = (v << 1) | bv;
        }
        edges.push((u, v));
    }
    Ok(Graph::from_edges(n, &edges))
}

#[derive(Debug, Clone)]
pub struct Bfs {
    /// Hop distance from the source, [`UNREACHED`] outside its component.
    pub dist: Vec<u32>,
    pub farthest: Vertex,
    pub eccentricity: u32,
}

pub fn bfs(g: &Graph, source: Vertex) -> Bfs {
    assert!(source < g.n(), "source {source} out of range");
    let mut dist = vec![UNREACHED; g.n()];
    let mut queue = VecDeque::with_capacity(g.n());
    dist[source] = 0;
    queue.push_back(source);
    let mut farthest = source;
    while let Some(u) = queue.pop_front() {
        let du = dist[u];
        if du > dist[farthest] {
            farthest = u;
        }
        for &w in g.neighbors(u) {
            if dist[w] == UNREACHED {
                dist[w] = du + 1;
                queue.push_back(w);
            }
        }
    }
    let eccentricity = dist[farthest];
    Bfs {
        dist,
        farthest,
        eccentricity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct GraphStats {
    pub n: usize,
    pub m: usize,
    pub diameter_lower_bound: u32,
    pub diameter_upper_bound: u32,
    /// Upper bound on the number of vertices of any shortest path.
    pub vertex_diameter_bound: u32,
}

/// Certified diameter bounds from a few BFS sweeps.
///
/// Every BFS from a vertex `v` yields `ecc(v) <= diam <= 2 ecc(v)`. The first
/// sweep starts at a maximum-degree vertex; each sweep then runs a double
/// sweep from the farthest vertex found and continues from the midpoint of
/// the resulting path, which tends to have small eccentricity. `seed` breaks
/// ties between equally far vertices.
pub fn diameter_upper_bound(g: &Graph, sweeps: usize, seed: u64) -> Result<GraphStats, GraphError> {
    let n = g.n();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (0..n).max_by_key(|&v| (g.degree(v), std::cmp::Reverse(v))).unwrap();
    let mut lower = 0u32;
    let mut upper = u32::MAX;
    let mut current = start;
    for sweep in 0..sweeps.max(1) {
        let from_current = bfs(g, current);
        if sweep == 0 && from_current.dist.contains(&UNREACHED) {
            return Err(GraphError::Disconnected);
        }
        lower = lower.max(from_current.eccentricity);
        upper = upper.min(from_current.eccentricity.saturating_mul(2));

        let a = pick_farthest(&from_current.dist, from_current.eccentricity, &mut rng);
        let from_a = bfs(g, a);
        lower = lower.max(from_a.eccentricity);
        upper = upper.min(from_a.eccentricity.saturating_mul(2));
        if lower == upper {
            break;
        }

        // Walk back from the far endpoint to the middle of the a-b path.
        let b = pick_farthest(&from_a.dist, from_a.eccentricity, &mut rng);
        let mut mid = b;
        while from_a.dist[mid] > from_a.eccentricity / 2 {
            let d = from_a.dist[mid];
            mid = *g
                .neighbors(mid)
                .iter()
                .find(|&&w| from_a.dist[w] + 1 == d)
                .expect("BFS predecessor");
        }
        current = mid;
    }
    debug_assert!(lower <= upper);
    Ok(GraphStats {
        n,
        m: g.m(),
        diameter_lower_bound: lower,
        diameter_upper_bound: upper,
        vertex_diameter_bound: upper + 1,
    })
}

fn pick_farthest(dist: &[u32], ecc: u32, rng: &mut ChaCha8Rng) -> Vertex {
    let far: Vec<_> = (0..dist.len()).filter(|&v| dist[v] == ecc).collect();
    far[rng.gen_range(0..far.len())]
}

/// Deterministic small graphs used throughout the tests and examples.
pub mod fixtures {
    use super::{Graph, Vertex};

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        Graph::from_edges(n, &edges)
    }

    pub fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|v| (v, (v + 1) % n)).collect();
        Graph::from_edges(n, &edges)
    }

    /// Star with center 0 and `n - 1` leaves.
    pub fn star(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (0, v)).collect();
        Graph::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::from_edges(n, &edges)
    }

    /// `rows x cols` grid; vertex `(r, c)` has index `r * cols + c`.
    pub fn grid(rows: usize, cols: usize) -> Graph {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        Graph::from_edges(rows * cols, &edges)
    }

    /// Two vertex-disjoint paths of length 3 between 0 and 5: 0-1-2-5 and 0-3-4-5.
    pub fn two_parallel_paths() -> Graph {
        Graph::from_edges(6, &[(0, 1), (1, 2), (2, 5), (0, 3), (3, 4), (4, 5)])
    }

    /// G(n, p) Erdős–Rényi graph from a seeded generator.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(Vertex, Vertex)> = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edges(n, &edges)
    }

    /// Random recursive tree: vertex `v` attaches to a uniform earlier vertex.
    pub fn random_tree(n: usize, seed: u64) -> Graph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<_> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
        Graph::from_edges(n, &edges)
    }
}
