//! Command-line front end: `encode`, `align`, `bench` and `init-weights`.
//!
//! Every `run_*` function returns the process exit code: 0 on success, 1 on
//! a domain error (with an `error [stage]: ...` diagnostic on stderr).
//! Usage errors are reported by the argument parser with code 2.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::align::{durations, loglik_lattice, mas};
use crate::bsp::{bench, bsp_forward, partition, BenchConfig, BspOptions, Precision, SparseGraph};
use crate::encoder::{encode_utterance, encode_with, EncodeError, EncoderDims, EncoderWeights};
use crate::gcnmath::GcnError;
use crate::syngraph::parse_conllu;
use crate::tensorio::{Tensor, TensorContainer};
use crate::textfront::{build_utterance, Lexicon};

#[derive(Debug, Parser)]
#[command(name = "fgtts", version, about = "Syntax-aware graph encoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode sentences into g_text, p_text, mu and sigma
    Encode(EncodeArgs),
    /// Extract durations from stats and frames with monotonic alignment search
    Align(AlignArgs),
    /// Time the tile engine for several worker counts
    Bench(BenchArgs),
    /// Write a seeded (or zero) encoder weights file
    InitWeights(InitWeightsArgs),
}

/// Widths `E,F,G,D[,H]`: embedding, GCN output, graph embedding, stats and
/// optionally the hidden GCN width (defaults to F).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimsArg {
    pub embed: usize,
    pub gcn_out: usize,
    pub graph: usize,
    pub stats: usize,
    pub hidden: usize,
}

impl DimsArg {
    pub fn with_vocab(self, vocab: usize) -> EncoderDims {
        EncoderDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            gcn_out: self.gcn_out,
            graph: self.graph,
            stats: self.stats,
        }
    }
}

impl Default for DimsArg {
    fn default() -> Self {
        DimsArg {
            embed: 16,
            gcn_out: 16,
            graph: 16,
            stats: 16,
            hidden: 16,
        }
    }
}

impl std::str::FromStr for DimsArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad dimension {p:?}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        match parts[..] {
            [embed, gcn_out, graph, stats] => Ok(DimsArg {
                embed,
                gcn_out,
                graph,
                stats,
                hidden: gcn_out,
            }),
            [embed, gcn_out, graph, stats, hidden] => Ok(DimsArg {
                embed,
                gcn_out,
                graph,
                stats,
                hidden,
            }),
            _ => Err(format!("expected E,F,G,D or E,F,G,D,H, got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub conllu: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Raw text for each sentence, in order; defaults to the parse's word forms
    #[arg(long)]
    pub text: Vec<String>,
    /// Run the GCN on the tile engine with this many workers
    #[arg(long)]
    pub workers: Option<usize>,
    /// Tile count for the tile engine (defaults to the worker count)
    #[arg(long)]
    pub tiles: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Container holding `mu` and `sigma` (or `mu.<i>`, `sigma.<i>`)
    #[arg(long)]
    pub stats: PathBuf,
    /// Container holding a `frames` tensor of shape S x D
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sentence index to read when the stats carry `.<i>` suffixes
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 8)]
    pub degree: usize,
    /// Feature width of every layer
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub tiles: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,8")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, overrides_with = "unfused")]
    pub fused: bool,
    #[arg(long, overrides_with = "fused")]
    pub unfused: bool,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "16,16,16,16")]
    pub dims: DimsArg,
    /// Phoneme inventory size; taken from `--lexicon` when omitted
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Write all-zero weights
    #[arg(long)]
    pub zero: bool,
}

#[derive(Debug)]
struct Failure {
    stage: &'static str,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error [{}]: {}", self.stage, self.message)
    }
}

fn fail(stage: &'static str, err: impl fmt::Display) -> Failure {
    Failure {
        stage,
        message: err.to_string(),
    }
}

fn exit_code(result: Result<(), Failure>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            1
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn load_container(path: &Path) -> Result<TensorContainer, Failure> {
    TensorContainer::load(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn encode_stage(err: &EncodeError) -> &'static str {
    match err {
        EncodeError::WordCountMismatch { .. } => "encode",
        EncodeError::Io(_) => "io",
        EncodeError::EmptySpan(_) | EncodeError::Shape(_) | EncodeError::Weights(_) => "shape",
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Encode(a) => run_encode(&a),
        Command::Align(a) => run_align(&a),
        Command::Bench(a) => run_bench(&a),
        Command::InitWeights(a) => run_init_weights(&a),
    }
}

pub fn run_encode(args: &EncodeArgs) -> i32 {
    exit_code(encode_impl(args))
}

fn encode_impl(args: &EncodeArgs) -> Result<(), Failure> {
    let lexicon = Lexicon::parse(&read_text(&args.lexicon)?).map_err(|e| fail("lexicon", e))?;
    let parses = parse_conllu(&read_text(&args.conllu)?).map_err(|e| fail("parse", e))?;
    if parses.is_empty() {
        return Err(fail("parse", "no sentences in input"));
    }
    if !args.text.is_empty() && args.text.len() != parses.len() {
        return Err(fail(
            "encode",
            format!(
                "{} texts given for {} parsed sentences",
                args.text.len(),
                parses.len()
            ),
        ));
    }
    let container = load_container(&args.weights)?;
    let weights = EncoderWeights::from_container(&container).map_err(|e| fail("shape", e))?;
    if weights.dims().vocab < lexicon.inventory_size() {
        return Err(fail(
            "shape",
            format!(
                "embedding table has {} rows but the inventory has {} symbols",
                weights.dims().vocab,
                lexicon.inventory_size()
            ),
        ));
    }
    if args.workers == Some(0) || args.tiles == Some(0) {
        return Err(fail("shape", "workers and tiles must be positive"));
    }

    let mut out = TensorContainer::new();
    for (i, parse) in parses.iter().enumerate() {
        let parse = parse.without_punct();
        let text = args.text.get(i).cloned().unwrap_or_else(|| parse.text());
        let utt = build_utterance(&text, &lexicon)
            .map_err(|e| fail("lexicon", format!("sentence {i}: {e}")))?;
        let encoded = match args.workers {
            None => encode_utterance(&utt, &parse, &weights),
            Some(workers) => encode_with(&utt, &parse, &weights, |x, graph, params| {
                let sparse = SparseGraph::from_syngraph(graph);
                let tiles = args.tiles.unwrap_or(workers);
                let plan = partition(&sparse, tiles).map_err(bsp_to_gcn)?;
                let opts = BspOptions {
                    workers,
                    fused: true,
                };
                bsp_forward(x, &sparse, params, &plan, &opts).map_err(bsp_to_gcn)
            }),
        }
        .map_err(|e| fail(encode_stage(&e), format!("sentence {i}: {e}")))?;
        for (name, m) in [
            ("g_text", &encoded.g_text),
            ("p_text", &encoded.p_text),
            ("mu", &encoded.mu),
            ("sigma", &encoded.sigma),
        ] {
            out.insert(format!("{name}.{i}"), Tensor::from_matrix(m))
                .map_err(|e| fail("io", e))?;
        }
    }
    out.save(&args.out)
        .map_err(|e| fail("io", format!("{}: {e}", args.out.display())))
}

fn bsp_to_gcn(e: crate::bsp::BspError) -> GcnError {
    GcnError::ShapeMismatch {
        op: "bsp_forward",
        detail: e.to_string(),
    }
}

pub fn run_align(args: &AlignArgs) -> i32 {
    exit_code(align_impl(args))
}

fn stats_matrix(c: &TensorContainer, base: &str, index: usize) -> Result<Array2<f64>, Failure> {
    let suffixed = format!("{base}.{index}");
    let name = if c.get(&suffixed).is_some() {
        suffixed.as_str()
    } else {
        base
    };
    c.matrix(name).map_err(|e| fail("shape", e))
}

fn align_impl(args: &AlignArgs) -> Result<(), Failure> {
    let stats = load_container(&args.stats)?;
    let mu = stats_matrix(&stats, "mu", args.index)?;
    let sigma = stats_matrix(&stats, "sigma", args.index)?;
    let frames = load_container(&args.frames)?
        .matrix("frames")
        .map_err(|e| fail("shape", e))?;
    let lattice = loglik_lattice(&mu, &sigma, &frames).map_err(|e| fail("align", e))?;
    let path = mas(&lattice).map_err(|e| fail("align", e))?;
    let d = durations(&path, mu.nrows());
    let mut out = TensorContainer::new();
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    out.insert("durations", Tensor::f64(vec![d.d.len()], as_f64(&d.d)))
        .and_then(|_| {
            out.insert(
                "path",
                Tensor::f64(vec![path.n_frames()], as_f64(&path.assign)),
            )
        })
        .map_err(|e| fail("io", e))?;
    out.save(&args.out)
        .map_err(|e| fail("io", format!("{}: {e}", args.out.display())))?;
    println!("{:.6}", path.score(&lattice));
    Ok(())
}

pub fn run_bench(args: &BenchArgs) -> i32 {
    exit_code(bench_impl(args))
}

fn bench_impl(args: &BenchArgs) -> Result<(), Failure> {
    let cfg = BenchConfig {
        n_nodes: args.nodes,
        avg_degree: args.degree,
        feature_dim: args.dim,
        n_tiles: args.tiles,
        workers: args.workers.clone(),
        repeats: args.repeats,
        seed: args.seed,
        fused: !args.unfused,
        precision: match args.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
    };
    let report = bench(&cfg).map_err(|e| fail("bench", e))?;
    let json = report.to_json();
    match &args.out {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| fail("io", format!("{}: {e}", path.display())))
        }
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

pub fn run_init_weights(args: &InitWeightsArgs) -> i32 {
    exit_code(init_weights_impl(args))
}

fn init_weights_impl(args: &InitWeightsArgs) -> Result<(), Failure> {
    let vocab = match (args.vocab, &args.lexicon) {
        (Some(v), _) => v,
        (None, Some(path)) => Lexicon::parse(&read_text(path)?)
            .map_err(|e| fail("lexicon", e))?
            .inventory_size(),
        (None, None) => return Err(fail("shape", "either --vocab or --lexicon is required")),
    };
    let dims = args.dims.with_vocab(vocab);
    let weights = if args.zero {
        EncoderWeights::zeros(dims)
    } else {
        EncoderWeights::seeded(dims, args.seed)
    }
    .map_err(|e| fail("shape", e))?;
    weights
        .to_container()
        .save(&args.out)
        .map_err(|e| fail("io", format!("{}: {e}", args.out.display())))
}
