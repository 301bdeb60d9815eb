//! GCN numerics in double precision.
//!
//! Every matrix product here accumulates in ascending inner index starting
//! from `+0.0`. The tile engine in [`crate::bsp`] follows the same order,
//! which is what makes its output bit-identical to this reference path.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_traits::Float;
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use thiserror::Error;

use crate::syngraph::SynGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("regularization weight must be non-negative, got {0}")]
    NegativeLambda(f64),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> GcnError {
    GcnError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    SoftmaxRows,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    SoftmaxRows,
    None,
}

impl From<HiddenActivation> for Activation {
    fn from(_: HiddenActivation) -> Self {
        Activation::Relu
    }
}

impl From<OutputActivation> for Activation {
    fn from(a: OutputActivation) -> Self {
        match a {
            OutputActivation::SoftmaxRows => Activation::SoftmaxRows,
            OutputActivation::None => Activation::Identity,
        }
    }
}

/// Weights of the two-layer model: `w0` is C×H, `w1` is H×F.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl GcnParams {
    pub fn new(
        w0: Array2<f64>,
        w1: Array2<f64>,
        output_activation: OutputActivation,
    ) -> Result<Self, GcnError> {
        if w0.ncols() != w1.nrows() {
            return Err(shape_err(
                "GcnParams::new",
                format!("W0 is {:?} but W1 is {:?}", w0.dim(), w1.dim()),
            ));
        }
        Ok(GcnParams {
            w0,
            w1,
            hidden_activation: HiddenActivation::Relu,
            output_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w1.ncols()
    }
}

/// Max-shifted, in-place softmax of one row.
#[inline]
pub fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

#[inline]
pub fn relu<T: Float>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Applies an activation to one row in place.
#[inline]
pub fn activate_row<T: Float>(row: &mut [T], act: Activation) {
    match act {
        Activation::Relu => row.iter_mut().for_each(|x| *x = relu(*x)),
        Activation::SoftmaxRows => softmax_in_place(row),
        Activation::Identity => {}
    }
}

/// `out = row · w` for a row-major `w` with `out.len()` columns.
#[inline]
pub fn row_times_matrix<T: Float>(row: &[T], w: &[T], out: &mut [T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), row.len() * cols);
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &rk) in row.iter().enumerate() {
        let wk = &w[k * cols..(k + 1) * cols];
        for (o, &wkj) in out.iter_mut().zip(wk) {
            *o = *o + rk * wkj;
        }
    }
}

/// Dense product with ascending-k accumulation from zero.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>, GcnError> {
    if a.ncols() != b.nrows() {
        return Err(shape_err(
            "matmul",
            format!("{:?} x {:?}", a.dim(), b.dim()),
        ));
    }
    let (n, m) = (a.nrows(), b.ncols());
    let mut out = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let mut orow = out.row_mut(i);
        for k in 0..a.ncols() {
            let aik = a[[i, k]];
            for (o, &bkj) in orow.iter_mut().zip(b.row(k).iter()) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

fn apply_activation(m: &mut Array2<f64>, act: Activation) {
    for mut row in m.rows_mut() {
        match row.as_slice_mut() {
            Some(s) => activate_row(s, act),
            None => {
                let mut v = row.to_vec();
                activate_row(&mut v, act);
                row.assign(&Array1::from(v));
            }
        }
    }
}

/// One propagation step: `act((A_hat · H) · W)`.
pub fn gcn_layer(
    h_in: &Array2<f64>,
    a_hat: &Array2<f64>,
    w: &Array2<f64>,
    activation: Activation,
) -> Result<Array2<f64>, GcnError> {
    let n = h_in.nrows();
    if a_hat.dim() != (n, n) {
        return Err(shape_err(
            "gcn_layer",
            format!("A_hat is {:?} for {n} nodes", a_hat.dim()),
        ));
    }
    if h_in.ncols() != w.nrows() {
        return Err(shape_err(
            "gcn_layer",
            format!("H is {:?} but W is {:?}", h_in.dim(), w.dim()),
        ));
    }
    let agg = matmul(a_hat.view(), h_in.view())?;
    let mut out = matmul(agg.view(), w.view())?;
    apply_activation(&mut out, activation);
    Ok(out)
}

/// Two-layer forward model `out_act(A_hat · ReLU(A_hat X W0) · W1)`.
pub fn gcn_forward(
    x: &Array2<f64>,
    a_hat: &Array2<f64>,
    params: &GcnParams,
) -> Result<Array2<f64>, GcnError> {
    let hidden = gcn_layer(x, a_hat, &params.w0, params.hidden_activation.into())?;
    gcn_layer(&hidden, a_hat, &params.w1, params.output_activation.into())
}

pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    apply_activation(&mut out, Activation::SoftmaxRows);
    out
}

/// Mean-aggregation propagation: `ReLU(mean_{u in N(v)} h_u · W)` where
/// `N(v)` is the closed neighborhood (self included).
pub fn mean_aggregate_layer(
    h_in: &Array2<f64>,
    graph: &SynGraph,
    w: &Array2<f64>,
) -> Result<Array2<f64>, GcnError> {
    let n = graph.n();
    if h_in.nrows() != n {
        return Err(shape_err(
            "mean_aggregate_layer",
            format!("{} feature rows for {n} nodes", h_in.nrows()),
        ));
    }
    if h_in.ncols() != w.nrows() {
        return Err(shape_err(
            "mean_aggregate_layer",
            format!("H is {:?} but W is {:?}", h_in.dim(), w.dim()),
        ));
    }
    let d = h_in.ncols();
    let mut out = Array2::<f64>::zeros((n, w.ncols()));
    let w_flat = w.as_standard_layout();
    let w_flat = w_flat.as_slice().expect("standard layout");
    let mut mean = vec![0.0; d];
    for v in 0..n {
        let nbrs = graph.closed_neighborhood(v);
        mean.iter_mut().for_each(|m| *m = 0.0);
        for &u in &nbrs {
            for (m, &x) in mean.iter_mut().zip(h_in.row(u)) {
                *m += x;
            }
        }
        let count = nbrs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let mut row = vec![0.0; w.ncols()];
        row_times_matrix(&mean, w_flat, &mut row);
        activate_row(&mut row, Activation::Relu);
        out.row_mut(v).assign(&Array1::from(row));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub lambda: f64,
    pub base_loss: f64,
}

impl RegConfig {
    pub fn new(lambda: f64, base_loss: f64) -> Result<Self, GcnError> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(GcnError::NegativeLambda(lambda));
        }
        Ok(RegConfig { lambda, base_loss })
    }
}

/// Smoothness penalty summed over ordered node pairs.
///
/// Returns `(base_loss + lambda * penalty, penalty)`. For symmetric `A` the
/// penalty equals `2 * trace(F^T Δ F)`.
pub fn laplacian_penalty(
    f_out: &Array2<f64>,
    adjacency: &Array2<f64>,
    cfg: &RegConfig,
) -> Result<(f64, f64), GcnError> {
    let n = f_out.nrows();
    if adjacency.dim() != (n, n) {
        return Err(shape_err(
            "laplacian_penalty",
            format!("adjacency is {:?} for {n} rows", adjacency.dim()),
        ));
    }
    let mut penalty = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = adjacency[[i, j]];
            if a == 0.0 {
                continue;
            }
            let dist: f64 = f_out
                .row(i)
                .iter()
                .zip(f_out.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            penalty += a * dist;
        }
    }
    Ok((cfg.base_loss + cfg.lambda * penalty, penalty))
}

/// Reverse-mode gradients of `sum(upstream ⊙ gcn_forward(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub x: Array2<f64>,
}

pub fn gcn_gradients(
    x: &Array2<f64>,
    a_hat: &Array2<f64>,
    params: &GcnParams,
    upstream: &Array2<f64>,
) -> Result<GcnGradients, GcnError> {
    let n = x.nrows();
    if upstream.dim() != (n, params.output_dim()) {
        return Err(shape_err(
            "gcn_gradients",
            format!(
                "upstream is {:?}, output is {:?}",
                upstream.dim(),
                (n, params.output_dim())
            ),
        ));
    }
    if x.ncols() != params.input_dim() || a_hat.dim() != (n, n) {
        return Err(shape_err(
            "gcn_gradients",
            format!(
                "X is {:?}, A_hat is {:?}, W0 is {:?}",
                x.dim(),
                a_hat.dim(),
                params.w0.dim()
            ),
        ));
    }
    // forward, keeping intermediates
    let p1 = matmul(a_hat.view(), x.view())?;
    let z1 = matmul(p1.view(), params.w0.view())?;
    let h1 = z1.mapv(relu);
    let p2 = matmul(a_hat.view(), h1.view())?;
    let z2 = matmul(p2.view(), params.w1.view())?;

    let dz2 = match params.output_activation {
        OutputActivation::None => upstream.clone(),
        OutputActivation::SoftmaxRows => {
            let y = softmax_rows(&z2);
            let mut dz = Array2::<f64>::zeros(y.dim());
            for ((mut drow, yrow), urow) in dz
                .axis_iter_mut(Axis(0))
                .zip(y.axis_iter(Axis(0)))
                .zip(upstream.axis_iter(Axis(0)))
            {
                let dot: f64 = yrow.iter().zip(urow).map(|(a, b)| a * b).sum();
                for ((d, &yv), &uv) in drow.iter_mut().zip(yrow).zip(urow) {
                    *d = yv * (uv - dot);
                }
            }
            dz
        }
    };
    let dw1 = matmul(p2.t(), dz2.view())?;
    let dp2 = matmul(dz2.view(), params.w1.t())?;
    let dh1 = matmul(a_hat.t(), dp2.view())?;
    let mut dz1 = dh1;
    dz1.zip_mut_with(&z1, |d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    let dw0 = matmul(p1.t(), dz1.view())?;
    let dp1 = matmul(dz1.view(), params.w0.t())?;
    let dx = matmul(a_hat.t(), dp1.view())?;
    Ok(GcnGradients {
        w0: dw0,
        w1: dw1,
        x: dx,
    })
}

/// Uniform `[-1/sqrt(rows), 1/sqrt(rows)]` initialization.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Uniform bias vector with the fan-in of the matrix it belongs to.
pub fn init_bias<R: Rng + ?Sized>(fan_in: usize, len: usize, rng: &mut R) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_graph_relu() {
        let h = arr2(&[[-2.0, 3.0]]);
        let out = gcn_layer(&h, &arr2(&[[1.0]]), &Array2::eye(2), Activation::Relu).unwrap();
        assert_eq!(out, arr2(&[[0.0, 3.0]]));
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = SynGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let h = rand_mat(&mut rng, 4, 3);
        let out = gcn_layer(&h, g.a_hat(), &Array2::zeros((3, 5)), Activation::Relu).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_matches_triple_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = SynGraph::from_edges(4, [(0, 1), (0, 2), (2, 3)]);
        let h = rand_mat(&mut rng, 4, 3);
        let w = rand_mat(&mut rng, 3, 2);
        let oracle = g.a_hat().dot(&h).dot(&w);
        let out = gcn_layer(&h, g.a_hat(), &w, Activation::Identity).unwrap();
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Array2::<f64>::eye(2);
        assert!(gcn_layer(
            &Array2::zeros((3, 2)),
            &a,
            &Array2::eye(2),
            Activation::Relu
        )
        .is_err());
        assert!(gcn_layer(
            &Array2::zeros((2, 3)),
            &a,
            &Array2::eye(2),
            Activation::Relu
        )
        .is_err());
        assert!(GcnParams::new(
            Array2::zeros((2, 3)),
            Array2::zeros((2, 3)),
            OutputActivation::None
        )
        .is_err());
    }

    #[test]
    fn forward_zero_weights_softmax() {
        let g = SynGraph::from_edges(3, [(0, 1)]);
        let p = GcnParams::new(
            Array2::zeros((2, 4)),
            Array2::zeros((4, 2)),
            OutputActivation::SoftmaxRows,
        )
        .unwrap();
        let z = gcn_forward(&Array2::ones((3, 2)), g.a_hat(), &p).unwrap();
        assert!(z.iter().all(|&v| v == 0.5));

        let p = GcnParams::new(
            arr2(&[[0.3]]),
            arr2(&[[-1.7]]),
            OutputActivation::SoftmaxRows,
        )
        .unwrap();
        let z = gcn_forward(&arr2(&[[2.0]]), &arr2(&[[1.0]]), &p).unwrap();
        assert_eq!(z, arr2(&[[1.0]]));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_rows(&arr2(&[[0.0, 0.0]])), arr2(&[[0.5, 0.5]]));
        assert_eq!(
            softmax_rows(&arr2(&[[1000.0, 1000.0]])),
            arr2(&[[0.5, 0.5]])
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let row = rand_mat(&mut rng, 1, 6) * 10.0;
            let c = rng.gen_range(-50.0..50.0);
            let a = softmax_rows(&row);
            let b = softmax_rows(&(row.clone() + c));
            assert!((a.sum() - 1.0).abs() <= 1e-9);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mean_aggregation_cases() {
        let g = SynGraph::from_edges(3, [(0, 1), (1, 2)]);
        let h = arr2(&[[1.0, -2.0], [1.0, -2.0], [1.0, -2.0]]);
        let out = mean_aggregate_layer(&h, &g, &Array2::eye(2)).unwrap();
        assert_eq!(out, arr2(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]));

        let iso = SynGraph::from_edges(2, []);
        let h = arr2(&[[0.5, 2.0], [-1.0, 4.0]]);
        let w = arr2(&[[1.0, -1.0], [0.5, 0.25]]);
        let out = mean_aggregate_layer(&h, &iso, &w).unwrap();
        assert_eq!(out, arr2(&[[1.5, 0.0], [1.0, 2.0]]));
    }

    #[test]
    fn mean_aggregation_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = SynGraph::from_edges(5, [(0, 1), (1, 2), (1, 3), (3, 4), (0, 4)]);
        let h = rand_mat(&mut rng, 5, 3);
        let w = rand_mat(&mut rng, 3, 4);
        let out = mean_aggregate_layer(&h, &g, &w).unwrap();
        for v in 0..5 {
            let nbrs: Vec<usize> = (0..5)
                .filter(|&u| u == v || g.edges().contains(&(u.min(v), u.max(v))))
                .collect();
            for j in 0..4 {
                let mut s = 0.0;
                for &u in &nbrs {
                    for k in 0..3 {
                        s += w[[k, j]] * h[[u, k]];
                    }
                }
                let expect = (s / nbrs.len() as f64).max(0.0);
                assert!((out[[v, j]] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn penalty_examples() {
        let g = SynGraph::from_edges(2, [(0, 1)]);
        let cfg = RegConfig::new(1.0, 0.0).unwrap();
        let (total, pen) = laplacian_penalty(&arr2(&[[0.0], [1.0]]), g.adjacency(), &cfg).unwrap();
        assert_eq!(pen, 2.0);
        assert_eq!(total, 2.0);

        let cfg = RegConfig::new(0.7, 3.25).unwrap();
        let f = arr2(&[[1.0, 2.0], [1.0, 2.0]]);
        assert_eq!(
            laplacian_penalty(&f, g.adjacency(), &cfg).unwrap(),
            (3.25, 0.0)
        );
        assert!(RegConfig::new(-0.1, 0.0).is_err());
        assert!(laplacian_penalty(&Array2::zeros((3, 1)), g.adjacency(), &cfg).is_err());
    }

    #[test]
    fn gradient_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = SynGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let p = GcnParams::new(
            rand_mat(&mut rng, 3, 5),
            rand_mat(&mut rng, 5, 2),
            OutputActivation::SoftmaxRows,
        )
        .unwrap();
        let x = rand_mat(&mut rng, 4, 3);
        let grads = gcn_gradients(&x, g.a_hat(), &p, &Array2::zeros((4, 2))).unwrap();
        assert!(grads
            .w0
            .iter()
            .chain(&grads.w1)
            .chain(&grads.x)
            .all(|&v| v == 0.0));

        let up = rand_mat(&mut rng, 4, 2);
        let grads = gcn_gradients(&Array2::zeros((4, 3)), g.a_hat(), &p, &up).unwrap();
        assert!(grads.w1.iter().all(|&v| v == 0.0));
        assert!(gcn_gradients(&x, g.a_hat(), &p, &Array2::zeros((4, 3))).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let m = init_uniform(16, 4, &mut a);
        assert_eq!(m, init_uniform(16, 4, &mut b));
        assert!(m.iter().all(|v| v.abs() <= 0.25));
    }
}
