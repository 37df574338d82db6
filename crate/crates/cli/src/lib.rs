//! The `adaptive-bc` command-line tool.
//!
//! Exit codes: 0 success, 1 comparison above tolerance, 2 configuration
//! error, 3 I/O or input error, 4 backend fault.

pub mod scores;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptive_bc::comm::ClockMode;
use adaptive_bc::engine::{run_pipeline, Algorithm, EngineError, ReduceMode, RunConfig};
use adaptive_bc::graph::{
    gen_rmat, largest_connected_component, load_edge_list, read_binary, write_binary, write_edge_list, Graph,
    GraphError, RmatParams,
};
use adaptive_bc::oracle::brandes_exact;
use adaptive_bc::stopping::{AllocatorKind, BoundKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scores::{compare, ScoreFile};

pub const EXIT_COMPARE_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: m.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::Config(_) | EngineError::Sampler(_) | EngineError::Graph(_) => EXIT_CONFIG,
            EngineError::Comm(_) | EngineError::Panicked(_) => EXIT_BACKEND,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "adaptive-bc",
    version,
    about = "Adaptive-sampling betweenness centrality approximation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Approximate betweenness on a simulated cluster.
    Run(RunArgs),
    /// Exact betweenness (Brandes).
    Exact(ExactArgs),
    /// Compare an approximation against a reference score file.
    Compare(CompareArgs),
    /// Write an R-MAT graph as an edge list.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GraphSource {
    /// Edge list (text) or binary cache (`.bin`).
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    pub graph: Option<PathBuf>,
    /// Synthetic input, e.g. `rmat:scale=10,ef=30[,seed=1,a=..,b=..,c=..,d=..]`.
    #[arg(long)]
    pub gen: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Sim,
    Mp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    #[value(name = "1")]
    RankOnly,
    #[value(name = "2")]
    Epoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundArg {
    Hoeffding,
    Eb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AllocatorArg {
    Uniform,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReduceArg {
    Ireduce,
    IbarrierReduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Virtual,
    Real,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: GraphSource,
    /// Base configuration (JSON); flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Simulated network (JSON), overrides the `sim` section of `--config`.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    /// Default 0.001.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Default 0.1.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub ranks: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: Backend,
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    #[arg(long, value_enum)]
    pub bound: Option<BoundArg>,
    #[arg(long, value_enum)]
    pub allocator: Option<AllocatorArg>,
    #[arg(long, value_enum)]
    pub reduce: Option<ReduceArg>,
    /// Node of each rank, comma separated (e.g. `0,0,1,1`).
    #[arg(long)]
    pub topology: Option<String>,
    /// Simulator clock (default virtual, unless a config file sets it).
    /// Virtual runs are deterministic.
    #[arg(long, value_enum)]
    pub clock: Option<ClockArg>,
    #[arg(long)]
    pub latency_ms: Option<f64>,
    /// Score file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Statistics (JSON).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refuse graphs with more vertices than this.
    #[arg(long, default_value_t = 50_000)]
    pub max_n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub approx: PathBuf,
    pub exact: PathBuf,
    /// Tolerance; defaults to the `eps` recorded in the approximation header.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub scale: u32,
    #[arg(long, default_value_t = 30)]
    pub edge_factor: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.57)]
    pub a: f64,
    #[arg(long, default_value_t = 0.19)]
    pub b: f64,
    #[arg(long, default_value_t = 0.19)]
    pub c: f64,
    #[arg(long, default_value_t = 0.05)]
    pub d: f64,
    /// Keep only the largest connected component.
    #[arg(long)]
    pub lcc: bool,
    /// Write the binary cache format instead of text.
    #[arg(long)]
    pub binary: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{}", e.render())
            } else {
                write!(stderr, "{}", e.render())
            };
            return code;
        }
    };
    let res = match cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Exact(a) => cmd_exact(a, stdout),
        Command::Compare(a) => cmd_compare(a, stdout),
        Command::Gen(a) => cmd_gen(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

pub fn parse_gen_spec(spec: &str, default_seed: u64) -> Result<RmatParams, CliError> {
    let rest = spec
        .strip_prefix("rmat:")
        .ok_or_else(|| CliError::config(format!("unknown generator {spec:?}, expected rmat:scale=..,ef=..")))?;
    let mut p = RmatParams::graph500(0, default_seed);
    let mut have_scale = false;
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("expected key=value in generator spec, got {kv:?}")))?;
        let bad = || CliError::config(format!("bad value for {k}: {v:?}"));
        match k.trim() {
            "scale" => {
                p.scale = v.parse().map_err(|_| bad())?;
                have_scale = true;
            }
            "ef" | "edge_factor" => p.edge_factor = v.parse().map_err(|_| bad())?,
            "seed" => p.seed = v.parse().map_err(|_| bad())?,
            "a" => p.a = v.parse().map_err(|_| bad())?,
            "b" => p.b = v.parse().map_err(|_| bad())?,
            "c" => p.c = v.parse().map_err(|_| bad())?,
            "d" => p.d = v.parse().map_err(|_| bad())?,
            other => return Err(CliError::config(format!("unknown generator key {other:?}"))),
        }
    }
    if !have_scale {
        return Err(CliError::config("generator spec needs scale=.."));
    }
    Ok(p)
}

fn graph_error(path: &Path, e: GraphError) -> CliError {
    match e {
        GraphError::Io(_) | GraphError::Parse { .. } | GraphError::BadCache(_) | GraphError::Empty => {
            CliError::io(path, e)
        }
        other => CliError::config(other.to_string()),
    }
}

/// Loads or generates the input and restricts it to its largest component.
pub fn load_graph(src: &GraphSource, seed: u64) -> Result<Graph, CliError> {
    let g = match (&src.graph, &src.gen) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            let reader = BufReader::new(file);
            let g = if path.extension().is_some_and(|x| x == "bin") {
                read_binary(reader)
            } else {
                load_edge_list(reader)
            };
            g.map_err(|e| graph_error(path, e))?
        }
        (None, Some(spec)) => gen_rmat(&parse_gen_spec(spec, seed)?).map_err(|e| CliError::config(e.to_string()))?,
        (None, None) => return Err(CliError::config("one of --graph or --gen is required")),
    };
    Ok(largest_connected_component(&g))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_scores(file: &ScoreFile, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => file.write(create(path)?).map_err(|e| CliError::io(path, e)),
        None => file.write(stdout).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

pub fn build_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.sim_config {
        cfg.sim = read_json(p)?;
    }
    let clock = match (a.clock, &a.config, &a.sim_config) {
        (Some(c), _, _) => Some(c),
        (None, None, None) => Some(ClockArg::Virtual),
        _ => None,
    };
    if let Some(c) = clock {
        cfg.sim.clock = match c {
            ClockArg::Virtual => ClockMode::Virtual,
            ClockArg::Real => ClockMode::Real,
        };
    }
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    set!(eps, a.eps);
    set!(delta, a.delta);
    set!(ranks, a.ranks);
    set!(threads, a.threads);
    set!(seed, a.seed);
    set!(
        algorithm,
        a.algo.map(|x| match x {
            AlgoArg::RankOnly => Algorithm::RankOnly,
            AlgoArg::Epoch => Algorithm::Epoch,
        })
    );
    set!(
        bound,
        a.bound.map(|x| match x {
            BoundArg::Hoeffding => BoundKind::Hoeffding,
            BoundArg::Eb => BoundKind::EmpiricalBernstein,
        })
    );
    set!(
        allocator,
        a.allocator.map(|x| match x {
            AllocatorArg::Uniform => AllocatorKind::Uniform,
            AllocatorArg::Weighted => AllocatorKind::Weighted,
        })
    );
    set!(
        reduce_mode,
        a.reduce.map(|x| match x {
            ReduceArg::Ireduce => ReduceMode::Ireduce,
            ReduceArg::IbarrierReduce => ReduceMode::IbarrierReduce,
        })
    );
    if let Some(l) = a.latency_ms {
        cfg.sim.latency_ms = l;
    }
    if let Some(t) = &a.topology {
        let map: Result<Vec<usize>, _> = t.split(',').map(|s| s.trim().parse()).collect();
        cfg.topology = Some(map.map_err(|_| CliError::config(format!("bad --topology {t:?}")))?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = build_config(&a)?;
    if a.backend == Backend::Mp {
        return Err(CliError {
            code: EXIT_BACKEND,
            message: "backend `mp` not compiled in; this build only provides the simulated cluster (`--backend sim`)"
                .into(),
        });
    }
    let g = load_graph(&a.source, cfg.seed)?;
    let (result, stats) = run_pipeline(&g, &cfg)?;
    let meta = vec![
        ("eps".into(), cfg.eps.to_string()),
        ("delta".into(), cfg.delta.to_string()),
        ("tau".into(), result.tau.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("ranks".into(), cfg.ranks.to_string()),
        ("threads".into(), cfg.threads.to_string()),
        ("n".into(), g.n().to_string()),
        ("m".into(), g.m().to_string()),
    ];
    let file = ScoreFile::new(meta, &result.original_ids, &result.scores);
    write_scores(&file, a.out.as_deref(), stdout)?;
    if let Some(path) = &a.stats {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &stats).map_err(|e| CliError::io(path, e))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))?;
    }
    Ok(0)
}

fn cmd_exact(a: ExactArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let g = load_graph(&a.source, a.seed.unwrap_or(0))?;
    if g.n() > a.max_n {
        return Err(CliError::config(format!(
            "graph has {} vertices, more than --max-n {}",
            g.n(),
            a.max_n
        )));
    }
    let exact = brandes_exact(&g);
    let meta = vec![
        ("exact".into(), "brandes".into()),
        ("n".into(), g.n().to_string()),
        ("m".into(), g.m().to_string()),
    ];
    let file = ScoreFile::new(meta, g.original_ids(), &exact.scores);
    write_scores(&file, a.out.as_deref(), stdout)?;
    Ok(0)
}

fn read_scores(path: &Path) -> Result<ScoreFile, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    ScoreFile::read(BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

fn cmd_compare(a: CompareArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let approx = read_scores(&a.approx)?;
    let exact = read_scores(&a.exact)?;
    let eps = match a.eps {
        Some(e) => e,
        None => approx
            .meta("eps")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::config("no --eps given and none recorded in the approximation"))?,
    };
    let c = compare(&approx, &exact, eps).map_err(CliError::config)?;
    let io = |e: io::Error| CliError::io(Path::new("<stdout>"), e);
    writeln!(stdout, "vertices\t{}", exact.scores.len()).map_err(io)?;
    writeln!(stdout, "eps\t{eps}").map_err(io)?;
    writeln!(stdout, "max_abs_error\t{}", c.max_abs_error).map_err(io)?;
    if let Some(v) = c.argmax {
        writeln!(stdout, "max_error_vertex\t{v}").map_err(io)?;
    }
    writeln!(stdout, "above_eps\t{}", c.above_eps).map_err(io)?;
    for (k, overlap) in &c.top_k_overlap {
        let k_eff = (*k).min(exact.scores.len());
        writeln!(stdout, "top{k}_overlap\t{overlap}/{k_eff}").map_err(io)?;
    }
    Ok(if c.max_abs_error <= eps { 0 } else { EXIT_COMPARE_FAILED })
}

fn cmd_gen(a: GenArgs) -> Result<i32, CliError> {
    let p = RmatParams {
        scale: a.scale,
        edge_factor: a.edge_factor,
        a: a.a,
        b: a.b,
        c: a.c,
        d: a.d,
        seed: a.seed,
    };
    let mut g = gen_rmat(&p).map_err(|e| CliError::config(e.to_string()))?;
    if a.lcc {
        g = largest_connected_component(&g);
    }
    let mut w = create(&a.out)?;
    let res = if a.binary {
        write_binary(&g, &mut w)
    } else {
        write_edge_list(&g, &mut w)
    };
    res.and_then(|_| w.flush()).map_err(|e| CliError::io(&a.out, e))?;
    Ok(0)
}
