//! Bulk-synchronous tile engine for the two-layer GCN forward pass.
//!
//! Nodes are split into contiguous tile ranges. A run alternates
//! exchange and compute phases separated by full barriers:
//!
//! ```text
//! exchange(X halos) | compute(layer 0) | exchange | compute(layer 1)
//! ```
//!
//! In a compute phase a worker touches only the buffers of the tiles it
//! owns. In an exchange phase a tile pulls the rows it needs from the other
//! tiles' output buffers into its own halo, following a schedule fixed at
//! planning time. Neighbor contributions are summed in ascending node order
//! regardless of the tile layout, so the result is bit-identical to
//! [`crate::gcnmath::gcn_forward`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Debug;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Barrier, Mutex, RwLock};
use std::time::Instant;

use ndarray::Array2;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::gcnmath::{
    activate_row, init_uniform, row_times_matrix, Activation, GcnParams, OutputActivation,
};
use crate::syngraph::{sym_norm_coeff, SynGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BspError {
    #[error("tile count must be at least 1")]
    ZeroTiles,
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("plan covers {plan} nodes but the graph has {graph}")]
    PlanMismatch { plan: usize, graph: usize },
    #[error("tile {tile} needs {required} bytes, budget is {budget}")]
    BudgetExceeded {
        tile: usize,
        required: usize,
        budget: usize,
    },
    #[error("invalid benchmark parameter: {0}")]
    InvalidParameter(String),
}

/// Element type the engine can run in.
pub trait Scalar: Float + Send + Sync + Debug + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Undirected graph in CSR form over closed neighborhoods (self included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    n_edges: usize,
}

impl SparseGraph {
    pub fn from_edges<I>(n: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
        let mut seen = HashSet::new();
        for (i, j) in pairs {
            assert!(i < n && j < n, "edge ({i},{j}) out of range for {n} nodes");
            if i == j || !seen.insert((i.min(j), i.max(j))) {
                continue;
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(n + 2 * seen.len());
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        SparseGraph {
            offsets,
            neighbors,
            n_edges: seen.len(),
        }
    }

    pub fn from_syngraph(g: &SynGraph) -> Self {
        Self::from_edges(g.n(), g.edges().iter().copied())
    }

    /// Uniform random simple graph with about `n * avg_degree / 2` edges.
    pub fn random(n: usize, avg_degree: usize, seed: u64) -> Self {
        let max_edges = n.saturating_mul(n.saturating_sub(1)) / 2;
        let target = (n * avg_degree / 2).min(max_edges);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::with_capacity(target);
        let mut seen = HashSet::with_capacity(target);
        while edges.len() < target {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j && seen.insert((i.min(j), i.max(j))) {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Closed neighborhood of `v`, ascending.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Degree in `A_tilde`.
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Undirected edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }
}

/// Assignment of nodes to tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub n_tiles: usize,
    pub owner: Vec<usize>,
    pub tile_nodes: Vec<Range<usize>>,
    pub memory_budget: Option<usize>,
}

impl TilePlan {
    pub fn with_memory_budget(mut self, bytes: usize) -> Self {
        self.memory_budget = Some(bytes);
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.owner.len()
    }

    pub fn tile_sizes(&self) -> Vec<usize> {
        self.tile_nodes.iter().map(|r| r.len()).collect()
    }
}

/// Contiguous balanced split: node `i` goes to tile `floor(i * n_tiles / n)`.
pub fn partition(graph: &SparseGraph, n_tiles: usize) -> Result<TilePlan, BspError> {
    partition_nodes(graph.n_nodes(), n_tiles)
}

pub fn partition_nodes(n: usize, n_tiles: usize) -> Result<TilePlan, BspError> {
    if n_tiles == 0 {
        return Err(BspError::ZeroTiles);
    }
    let owner: Vec<usize> = (0..n)
        .map(|i| ((i as u128 * n_tiles as u128) / n as u128) as usize)
        .collect();
    let mut tile_nodes = vec![0..0; n_tiles];
    let mut start = 0;
    for (t, range) in tile_nodes.iter_mut().enumerate() {
        let mut end = start;
        while end < n && owner[end] == t {
            end += 1;
        }
        *range = start..end;
        start = end;
    }
    Ok(TilePlan {
        n_tiles,
        owner,
        tile_nodes,
        memory_budget: None,
    })
}

/// Rows of `nodes` (ascending) travel from `src_tile` to `dst_tile`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub src_tile: usize,
    pub dst_tile: usize,
    pub nodes: Vec<usize>,
}

/// Messages of one exchange phase, sorted by `(src_tile, dst_tile)`.
///
/// The graph does not change between layers, so the same list is replayed
/// in every exchange phase.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExchangeSchedule {
    pub messages: Vec<Message>,
}

impl ExchangeSchedule {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Nodes that `tile` receives, ascending.
    pub fn received_by(&self, tile: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .messages
            .iter()
            .filter(|m| m.dst_tile == tile)
            .flat_map(|m| m.nodes.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn total_rows(&self) -> usize {
        self.messages.iter().map(|m| m.nodes.len()).sum()
    }
}

pub fn plan_exchange(plan: &TilePlan, graph: &SparseGraph) -> Result<ExchangeSchedule, BspError> {
    if plan.n_nodes() != graph.n_nodes() {
        return Err(BspError::PlanMismatch {
            plan: plan.n_nodes(),
            graph: graph.n_nodes(),
        });
    }
    let mut wanted: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for (u, v) in graph.edges() {
        let (tu, tv) = (plan.owner[u], plan.owner[v]);
        if tu != tv {
            wanted.entry((tu, tv)).or_default().insert(u);
            wanted.entry((tv, tu)).or_default().insert(v);
        }
    }
    Ok(ExchangeSchedule {
        messages: wanted
            .into_iter()
            .map(|((src_tile, dst_tile), nodes)| Message {
                src_tile,
                dst_tile,
                nodes: nodes.into_iter().collect(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BspOptions {
    pub workers: usize,
    /// aggregate, multiply and activate in one pass per row
    pub fused: bool,
}

impl Default for BspOptions {
    fn default() -> Self {
        BspOptions {
            workers: 1,
            fused: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Compute,
    Exchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Buffer {
    /// layer input rows of owned nodes
    Input,
    /// layer output rows of owned nodes
    Output,
    /// received neighbor rows
    Halo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub seq: u64,
    /// position of the phase in the run, starting at 0
    pub phase_index: usize,
    pub phase: Phase,
    pub worker: usize,
    /// tile on whose behalf the access happens
    pub acting_tile: usize,
    /// tile whose buffer is touched
    pub target_tile: usize,
    pub buffer: Buffer,
    pub access: Access,
}

/// Records every buffer acquisition made during a run.
#[derive(Debug, Default)]
pub struct PhaseTrace {
    seq: AtomicU64,
    events: Mutex<Vec<AccessEvent>>,
}

impl PhaseTrace {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        phase_index: usize,
        phase: Phase,
        worker: usize,
        acting_tile: usize,
        target_tile: usize,
        buffer: Buffer,
        access: Access,
    ) {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        self.events.lock().unwrap().push(AccessEvent {
            seq,
            phase_index,
            phase,
            worker,
            acting_tile,
            target_tile,
            buffer,
            access,
        });
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        let mut ev = self.events.lock().unwrap().clone();
        ev.sort_by_key(|e| e.seq);
        ev
    }
}

/// Neighbor slot inside a tile: owned rows first, then halo rows.
#[derive(Debug, Clone)]
struct TileLayout {
    nodes: Range<usize>,
    halo_nodes: Vec<usize>,
    /// per owned node, range into `slots`/`coeffs`
    row_offsets: Vec<usize>,
    slots: Vec<u32>,
    /// `(src_tile, [(src_local_row, halo_row)])`
    incoming: Vec<(usize, Vec<(usize, usize)>)>,
}

impl TileLayout {
    fn n_owned(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Default)]
struct TileBuffers<T> {
    input: RwLock<Vec<T>>,
    output: RwLock<Vec<T>>,
    halo: RwLock<Vec<T>>,
}

/// A planned graph/tile layout, reusable across forward passes.
#[derive(Debug)]
pub struct BspEngine<T: Scalar> {
    n: usize,
    plan: TilePlan,
    schedule: ExchangeSchedule,
    layouts: Vec<TileLayout>,
    /// per tile normalization coefficients aligned with `slots`
    coeffs: Vec<Vec<T>>,
}

struct Layer<T> {
    weights: Vec<T>,
    d_in: usize,
    d_out: usize,
    act: Activation,
}

impl<T: Scalar> BspEngine<T> {
    pub fn new(graph: &SparseGraph, plan: TilePlan) -> Result<Self, BspError> {
        let schedule = plan_exchange(&plan, graph)?;
        let mut layouts = Vec::with_capacity(plan.n_tiles);
        let mut coeffs = Vec::with_capacity(plan.n_tiles);
        for (tile, nodes) in plan.tile_nodes.iter().enumerate() {
            let halo_nodes = schedule.received_by(tile);
            let n_owned = nodes.len();
            let mut row_offsets = Vec::with_capacity(n_owned + 1);
            let mut slots = Vec::new();
            let mut tile_coeffs = Vec::new();
            row_offsets.push(0);
            for v in nodes.clone() {
                for &u in graph.neighbors(v) {
                    let slot = if nodes.contains(&u) {
                        u - nodes.start
                    } else {
                        n_owned
                            + halo_nodes
                                .binary_search(&u)
                                .expect("schedule delivers every remote neighbor")
                    };
                    slots.push(u32::try_from(slot).expect("tile fits u32 slots"));
                    tile_coeffs.push(sym_norm_coeff::<T>(graph.degree(v), graph.degree(u)));
                }
                row_offsets.push(slots.len());
            }
            let incoming = schedule
                .messages
                .iter()
                .filter(|m| m.dst_tile == tile)
                .map(|m| {
                    let src_start = plan.tile_nodes[m.src_tile].start;
                    let rows = m
                        .nodes
                        .iter()
                        .map(|&u| (u - src_start, halo_nodes.binary_search(&u).unwrap()))
                        .collect();
                    (m.src_tile, rows)
                })
                .collect();
            layouts.push(TileLayout {
                nodes: nodes.clone(),
                halo_nodes,
                row_offsets,
                slots,
                incoming,
            });
            coeffs.push(tile_coeffs);
        }
        Ok(BspEngine {
            n: graph.n_nodes(),
            plan,
            schedule,
            layouts,
            coeffs,
        })
    }

    pub fn plan(&self) -> &TilePlan {
        &self.plan
    }

    pub fn schedule(&self) -> &ExchangeSchedule {
        &self.schedule
    }

    /// Bytes each tile holds for a run whose widest layer has `max_width`
    /// columns: input, output and halo rows plus replicated weights.
    pub fn tile_memory(&self, max_width: usize, weight_elems: usize) -> Vec<usize> {
        let elem = std::mem::size_of::<T>();
        self.layouts
            .iter()
            .zip(&self.coeffs)
            .map(|(l, c)| {
                let rows = 2 * l.n_owned() + l.halo_nodes.len();
                rows * max_width * elem
                    + weight_elems * elem
                    + c.len() * (elem + std::mem::size_of::<u32>())
            })
            .collect()
    }

    pub fn check_budget(&self, max_width: usize, weight_elems: usize) -> Result<(), BspError> {
        let Some(budget) = self.plan.memory_budget else {
            return Ok(());
        };
        for (tile, required) in self
            .tile_memory(max_width, weight_elems)
            .into_iter()
            .enumerate()
        {
            if required > budget {
                return Err(BspError::BudgetExceeded {
                    tile,
                    required,
                    budget,
                });
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        x: &Array2<T>,
        params: &GcnParams,
        opts: &BspOptions,
    ) -> Result<Array2<T>, BspError> {
        self.run(x, params, opts, None)
    }

    pub fn forward_traced(
        &self,
        x: &Array2<T>,
        params: &GcnParams,
        opts: &BspOptions,
        trace: &PhaseTrace,
    ) -> Result<Array2<T>, BspError> {
        self.run(x, params, opts, Some(trace))
    }

    fn run(
        &self,
        x: &Array2<T>,
        params: &GcnParams,
        opts: &BspOptions,
        trace: Option<&PhaseTrace>,
    ) -> Result<Array2<T>, BspError> {
        if opts.workers == 0 {
            return Err(BspError::ZeroWorkers);
        }
        if x.nrows() != self.n || x.ncols() != params.input_dim() {
            return Err(BspError::ShapeMismatch(format!(
                "X is {:?}, expected ({}, {})",
                x.dim(),
                self.n,
                params.input_dim()
            )));
        }
        let to_t = |m: &Array2<f64>| -> Vec<T> {
            m.iter()
                .map(|&v| T::from(v).expect("weight representable"))
                .collect()
        };
        let layers = [
            Layer {
                weights: to_t(&params.w0),
                d_in: params.input_dim(),
                d_out: params.hidden_dim(),
                act: params.hidden_activation.into(),
            },
            Layer {
                weights: to_t(&params.w1),
                d_in: params.hidden_dim(),
                d_out: params.output_dim(),
                act: match params.output_activation {
                    OutputActivation::SoftmaxRows => Activation::SoftmaxRows,
                    OutputActivation::None => Activation::Identity,
                },
            },
        ];
        let max_width = params
            .input_dim()
            .max(params.hidden_dim())
            .max(params.output_dim());
        self.check_budget(max_width, params.w0.len() + params.w1.len())?;

        let n_tiles = self.plan.n_tiles;
        let tiles: Vec<TileBuffers<T>> = self
            .layouts
            .iter()
            .map(|l| {
                let mut rows = Vec::with_capacity(l.n_owned() * x.ncols());
                for v in l.nodes.clone() {
                    rows.extend(x.row(v).iter().copied());
                }
                TileBuffers {
                    input: RwLock::new(Vec::new()),
                    output: RwLock::new(rows),
                    halo: RwLock::new(Vec::new()),
                }
            })
            .collect();

        let workers = opts.workers.min(n_tiles);
        let barrier = Barrier::new(workers);
        let worker_tiles = |w: usize| (w * n_tiles / workers)..((w + 1) * n_tiles / workers);

        std::thread::scope(|scope| {
            for w in 0..workers {
                let tiles = &tiles;
                let layers = &layers;
                let barrier = &barrier;
                let mine = worker_tiles(w);
                scope.spawn(move || {
                    let mut phase_index = 0;
                    for t in mine.clone() {
                        self.exchange(t, layers[0].d_in, tiles, trace, phase_index, w);
                    }
                    barrier.wait();
                    phase_index += 1;
                    for (l, layer) in layers.iter().enumerate() {
                        for t in mine.clone() {
                            self.compute(t, layer, opts.fused, tiles, trace, phase_index, w);
                        }
                        barrier.wait();
                        phase_index += 1;
                        if l + 1 < layers.len() {
                            for t in mine.clone() {
                                self.exchange(t, layer.d_out, tiles, trace, phase_index, w);
                            }
                            barrier.wait();
                            phase_index += 1;
                        }
                    }
                });
            }
        });

        let d_out = params.output_dim();
        let mut out = Vec::with_capacity(self.n * d_out);
        for tb in &tiles {
            out.extend_from_slice(&tb.output.read().unwrap());
        }
        Ok(Array2::from_shape_vec((self.n, d_out), out).expect("tiles cover all rows"))
    }

    fn exchange(
        &self,
        tile: usize,
        width: usize,
        tiles: &[TileBuffers<T>],
        trace: Option<&PhaseTrace>,
        phase_index: usize,
        worker: usize,
    ) {
        let layout = &self.layouts[tile];
        let rec = |target: usize, buffer: Buffer, access: Access| {
            if let Some(tr) = trace {
                tr.record(
                    phase_index,
                    Phase::Exchange,
                    worker,
                    tile,
                    target,
                    buffer,
                    access,
                );
            }
        };
        let mut halo = tiles[tile].halo.write().unwrap();
        rec(tile, Buffer::Halo, Access::Write);
        halo.clear();
        halo.resize(layout.halo_nodes.len() * width, T::zero());
        for (src, rows) in &layout.incoming {
            let src_out = tiles[*src].output.read().unwrap();
            rec(*src, Buffer::Output, Access::Read);
            for &(src_row, halo_row) in rows {
                halo[halo_row * width..(halo_row + 1) * width]
                    .copy_from_slice(&src_out[src_row * width..(src_row + 1) * width]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn compute(
        &self,
        tile: usize,
        layer: &Layer<T>,
        fused: bool,
        tiles: &[TileBuffers<T>],
        trace: Option<&PhaseTrace>,
        phase_index: usize,
        worker: usize,
    ) {
        let layout = &self.layouts[tile];
        let coeffs = &self.coeffs[tile];
        let rec = |buffer: Buffer, access: Access| {
            if let Some(tr) = trace {
                tr.record(
                    phase_index,
                    Phase::Compute,
                    worker,
                    tile,
                    tile,
                    buffer,
                    access,
                );
            }
        };
        let buffers = &tiles[tile];
        let mut input = buffers.input.write().unwrap();
        let mut output = buffers.output.write().unwrap();
        rec(Buffer::Input, Access::Write);
        rec(Buffer::Output, Access::Write);
        // last phase's output becomes this layer's input
        std::mem::swap(&mut *input, &mut *output);
        let halo = buffers.halo.read().unwrap();
        rec(Buffer::Halo, Access::Read);

        let (d_in, d_out) = (layer.d_in, layer.d_out);
        let n_owned = layout.n_owned();
        output.clear();
        output.resize(n_owned * d_out, T::zero());

        let aggregate = |v: usize, acc: &mut [T]| {
            acc.iter_mut().for_each(|a| *a = T::zero());
            let span = layout.row_offsets[v]..layout.row_offsets[v + 1];
            for (&slot, &c) in layout.slots[span.clone()].iter().zip(&coeffs[span]) {
                let slot = slot as usize;
                let src = if slot < n_owned {
                    &input[slot * d_in..(slot + 1) * d_in]
                } else {
                    let h = slot - n_owned;
                    &halo[h * d_in..(h + 1) * d_in]
                };
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a = *a + c * s;
                }
            }
        };

        if fused {
            let mut acc = vec![T::zero(); d_in];
            for (v, out_row) in output.chunks_exact_mut(d_out).enumerate() {
                aggregate(v, &mut acc);
                row_times_matrix(&acc, &layer.weights, out_row);
                activate_row(out_row, layer.act);
            }
        } else {
            let mut agg = vec![T::zero(); n_owned * d_in];
            for (v, acc) in agg.chunks_exact_mut(d_in).enumerate() {
                aggregate(v, acc);
            }
            for (acc, out_row) in agg.chunks_exact(d_in).zip(output.chunks_exact_mut(d_out)) {
                row_times_matrix(acc, &layer.weights, out_row);
            }
            for out_row in output.chunks_exact_mut(d_out) {
                activate_row(out_row, layer.act);
            }
        }
    }
}

/// Plans and runs one forward pass.
pub fn bsp_forward<T: Scalar>(
    x: &Array2<T>,
    graph: &SparseGraph,
    params: &GcnParams,
    plan: &TilePlan,
    opts: &BspOptions,
) -> Result<Array2<T>, BspError> {
    BspEngine::<T>::new(graph, plan.clone())?.forward(x, params, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub n_nodes: usize,
    pub avg_degree: usize,
    pub feature_dim: usize,
    pub n_tiles: usize,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub fused: bool,
    pub precision: Precision,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_nodes: 100_000,
            avg_degree: 8,
            feature_dim: 16,
            n_tiles: 64,
            workers: vec![1, 8],
            repeats: 5,
            seed: 0,
            fused: true,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReportConfig {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub avg_degree: usize,
    pub feature_dim: usize,
    pub n_tiles: usize,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub fused: bool,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchReportConfig,
    /// median wall time per entry of `config.workers`
    pub timings_ms: Vec<f64>,
    /// single-worker median divided by each entry of `timings_ms`
    pub speedup: Vec<f64>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn time_runs<T: Scalar>(
    engine: &BspEngine<T>,
    x: &Array2<T>,
    params: &GcnParams,
    opts: &BspOptions,
    repeats: usize,
) -> Result<Vec<f64>, BspError> {
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            let out = engine.forward(x, params, opts)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            Ok(ms.max(f64::MIN_POSITIVE))
        })
        .collect()
}

fn bench_typed<T: Scalar>(
    cfg: &BenchConfig,
    graph: &SparseGraph,
    params: &GcnParams,
) -> Result<Vec<(usize, f64)>, BspError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let x = Array2::from_shape_simple_fn((cfg.n_nodes, cfg.feature_dim), || {
        T::from(rng.gen_range(-1.0..1.0)).unwrap()
    });
    let engine = BspEngine::<T>::new(graph, partition(graph, cfg.n_tiles)?)?;
    let mut counts = cfg.workers.clone();
    if !counts.contains(&1) {
        counts.push(1);
    }
    counts
        .into_iter()
        .map(|workers| {
            let opts = BspOptions {
                workers,
                fused: cfg.fused,
            };
            Ok((
                workers,
                median(&time_runs(&engine, &x, params, &opts, cfg.repeats)?),
            ))
        })
        .collect()
}

/// Times the tile engine on a seeded random graph for each worker count.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport, BspError> {
    let positive = [
        ("nodes", cfg.n_nodes),
        ("degree", cfg.avg_degree),
        ("dim", cfg.feature_dim),
        ("tiles", cfg.n_tiles),
        ("repeats", cfg.repeats),
    ];
    if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
        return Err(BspError::InvalidParameter(format!(
            "{name} must be positive"
        )));
    }
    if cfg.workers.is_empty() || cfg.workers.contains(&0) {
        return Err(BspError::InvalidParameter(
            "workers must be a non-empty list of positive counts".into(),
        ));
    }
    let graph = SparseGraph::random(cfg.n_nodes, cfg.avg_degree, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    let params = GcnParams::new(
        init_uniform(d, d, &mut rng),
        init_uniform(d, d, &mut rng),
        OutputActivation::None,
    )
    .expect("square weights");
    let measured = match cfg.precision {
        Precision::F32 => bench_typed::<f32>(cfg, &graph, &params)?,
        Precision::F64 => bench_typed::<f64>(cfg, &graph, &params)?,
    };
    let lookup = |w: usize| {
        measured
            .iter()
            .find(|(k, _)| *k == w)
            .map(|(_, t)| *t)
            .unwrap()
    };
    let baseline = lookup(1);
    let timings_ms: Vec<f64> = cfg.workers.iter().map(|&w| lookup(w)).collect();
    let speedup = timings_ms.iter().map(|&t| baseline / t).collect();
    Ok(BenchReport {
        config: BenchReportConfig {
            n_nodes: cfg.n_nodes,
            n_edges: graph.n_edges(),
            avg_degree: cfg.avg_degree,
            feature_dim: cfg.feature_dim,
            n_tiles: cfg.n_tiles,
            workers: cfg.workers.clone(),
            repeats: cfg.repeats,
            seed: cfg.seed,
            fused: cfg.fused,
            precision: cfg.precision,
        },
        timings_ms,
        speedup,
    })
}
