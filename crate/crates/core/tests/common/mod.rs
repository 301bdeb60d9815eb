//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use fgtts::gcnmath::{init_uniform, GcnParams, OutputActivation};
use fgtts::syngraph::SynGraph;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdos-Renyi edge list on `n` nodes with edge probability `p`.
pub fn random_edges<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> SynGraph {
    SynGraph::from_edges(n, random_edges(n, p, rng))
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

pub fn random_params<R: Rng>(
    c: usize,
    h: usize,
    f: usize,
    out: OutputActivation,
    rng: &mut R,
) -> GcnParams {
    GcnParams::new(init_uniform(c, h, rng), init_uniform(h, f, rng), out).unwrap()
}

pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Dense 0/1 adjacency straight from an edge list.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for &(i, j) in edges {
        if i != j {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
    }
    a
}

/// `D^-1/2 (A + I) D^-1/2` as explicit triple matrix products.
pub fn oracle_a_hat(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let a_tilde = a + &Array2::<f64>::eye(n);
    let deg: Array1<f64> = a_tilde.sum_axis(ndarray::Axis(1));
    let mut d_inv_sqrt = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        d_inv_sqrt[[i, i]] = 1.0 / deg[i].sqrt();
    }
    d_inv_sqrt.dot(&a_tilde).dot(&d_inv_sqrt)
}

pub fn oracle_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Two-layer forward model composed from `ndarray` products.
pub fn oracle_forward(x: &Array2<f64>, a_hat: &Array2<f64>, p: &GcnParams) -> Array2<f64> {
    let h = a_hat.dot(x).dot(&p.w0).mapv(|v| v.max(0.0));
    let z = a_hat.dot(&h).dot(&p.w1);
    match p.output_activation {
        OutputActivation::SoftmaxRows => oracle_softmax_rows(&z),
        OutputActivation::None => z,
    }
}

/// Degree-minus-adjacency, then `2 * trace(F^T Delta F)`.
pub fn oracle_trace_penalty(a: &Array2<f64>, f: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut delta = -a.clone();
    for i in 0..n {
        delta[[i, i]] += a.row(i).sum();
    }
    let m = f.t().dot(&delta).dot(f);
    2.0 * (0..m.nrows()).map(|k| m[[k, k]]).sum::<f64>()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Row permutation `out[p[i]] = m[i]`.
pub fn permute_rows(m: &Array2<f64>, p: &[usize]) -> Array2<f64> {
    let mut out = m.clone();
    for (i, &pi) in p.iter().enumerate() {
        out.row_mut(pi).assign(&m.row(i));
    }
    out
}

/// Every monotonic surjective path of `s` frames over `t` tokens, by
/// choosing which `t - 1` of the `s - 1` frame boundaries advance.
pub fn all_paths(s: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << (s - 1)) {
        if mask.count_ones() as usize != t - 1 {
            continue;
        }
        let mut path = vec![0usize; s];
        for f in 1..s {
            path[f] = path[f - 1] + ((mask >> (f - 1)) & 1) as usize;
        }
        out.push(path);
    }
    out
}

pub fn path_score(lattice: &Array2<f64>, path: &[usize]) -> f64 {
    path.iter()
        .enumerate()
        .fold(0.0, |acc, (s, &t)| acc + lattice[[s, t]])
}

pub fn brute_force_mas(lattice: &Array2<f64>) -> f64 {
    let (s, t) = lattice.dim();
    all_paths(s, t)
        .iter()
        .map(|p| path_score(lattice, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sum(upstream ⊙ f(theta))` for finite differences.
pub fn weighted_sum(out: &Array2<f64>, upstream: &Array2<f64>) -> f64 {
    out.iter().zip(upstream).map(|(a, b)| a * b).sum()
}

/// Central differences of `loss` with respect to every entry of `theta`.
pub fn central_differences<F>(theta: &Array2<f64>, h: f64, mut loss: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(theta.dim());
    let mut probe = theta.clone();
    for idx in ndarray::indices(theta.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = loss(&probe);
        probe[idx] = orig - h;
        let down = loss(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// Entry-wise relative error with a floor on the denominator.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
