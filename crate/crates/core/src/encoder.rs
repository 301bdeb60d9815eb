//! Graph encoder: phoneme embedding, word pooling, GCN over the syntax graph,
//! combine/projection, broadcast back to phonemes and the Gaussian stats head.

use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gcnmath::{
    gcn_forward, init_bias, init_uniform, matmul, GcnError, GcnParams, OutputActivation,
};
use crate::syngraph::{build_syntax_graph, DependencyParse, SynGraph};
use crate::tensorio::{Tensor, TensorContainer, TensorIoError};
use crate::textfront::Utterance;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("utterance has {utterance} words but the parse has {parse}")]
    WordCountMismatch { utterance: usize, parse: usize },
    #[error("word span {0} is empty")]
    EmptySpan(usize),
    #[error(transparent)]
    Shape(#[from] GcnError),
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

/// Widths of every encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    /// phoneme inventory size
    pub vocab: usize,
    /// phoneme embedding width
    pub embed: usize,
    /// hidden GCN width
    pub hidden: usize,
    /// GCN output width
    pub gcn_out: usize,
    /// projected graph embedding width
    pub graph: usize,
    /// statistics width
    pub stats: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<(), EncodeError> {
        let all = [
            self.vocab,
            self.embed,
            self.hidden,
            self.gcn_out,
            self.graph,
            self.stats,
        ];
        if all.contains(&0) {
            return Err(EncodeError::Weights(format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

pub const PHONEME_EMBEDDING: &str = "phoneme_embedding";
pub const GCN_W0: &str = "gcn.W0";
pub const GCN_W1: &str = "gcn.W1";
pub const COMBINE_W: &str = "combine.W";
pub const COMBINE_B: &str = "combine.b";
pub const STATS_W: &str = "stats.W";
pub const STATS_B: &str = "stats.b";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub phoneme_embedding: Array2<f64>,
    pub gcn: GcnParams,
    pub combine_w: Array2<f64>,
    pub combine_b: Array1<f64>,
    pub stats_w: Array2<f64>,
    pub stats_b: Array1<f64>,
}

impl EncoderWeights {
    pub fn zeros(dims: EncoderDims) -> Result<Self, EncodeError> {
        dims.validate()?;
        Self::from_parts(
            Array2::zeros((dims.vocab, dims.embed)),
            Array2::zeros((dims.embed, dims.hidden)),
            Array2::zeros((dims.hidden, dims.gcn_out)),
            Array2::zeros((dims.embed + dims.gcn_out, dims.graph)),
            Array1::zeros(dims.graph),
            Array2::zeros((dims.graph + dims.embed, 2 * dims.stats)),
            Array1::zeros(2 * dims.stats),
        )
    }

    /// Seeded uniform initialization; tensors are drawn in container order.
    pub fn seeded(dims: EncoderDims, seed: u64) -> Result<Self, EncodeError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = init_uniform(dims.vocab, dims.embed, &mut rng);
        let w0 = init_uniform(dims.embed, dims.hidden, &mut rng);
        let w1 = init_uniform(dims.hidden, dims.gcn_out, &mut rng);
        let comb_in = dims.embed + dims.gcn_out;
        let cw = init_uniform(comb_in, dims.graph, &mut rng);
        let cb = init_bias(comb_in, dims.graph, &mut rng);
        let stats_in = dims.graph + dims.embed;
        let sw = init_uniform(stats_in, 2 * dims.stats, &mut rng);
        let sb = init_bias(stats_in, 2 * dims.stats, &mut rng);
        Self::from_parts(emb, w0, w1, cw, cb, sw, sb)
    }

    pub fn from_parts(
        phoneme_embedding: Array2<f64>,
        w0: Array2<f64>,
        w1: Array2<f64>,
        combine_w: Array2<f64>,
        combine_b: Array1<f64>,
        stats_w: Array2<f64>,
        stats_b: Array1<f64>,
    ) -> Result<Self, EncodeError> {
        let gcn = GcnParams::new(w0, w1, OutputActivation::None)?;
        let w = EncoderWeights {
            phoneme_embedding,
            gcn,
            combine_w,
            combine_b,
            stats_w,
            stats_b,
        };
        w.check_shapes()?;
        Ok(w)
    }

    fn check_shapes(&self) -> Result<(), EncodeError> {
        let e = self.phoneme_embedding.ncols();
        let f = self.gcn.output_dim();
        let g = self.combine_w.ncols();
        let bad = |what: &str| Err(EncodeError::Weights(what.to_owned()));
        if self.gcn.input_dim() != e {
            return bad("gcn.W0 rows must equal the embedding width");
        }
        if self.combine_w.nrows() != e + f {
            return bad("combine.W rows must equal embedding width + GCN output width");
        }
        if self.combine_b.len() != g {
            return bad("combine.b length must equal combine.W columns");
        }
        if self.stats_w.nrows() != g + e {
            return bad("stats.W rows must equal graph width + embedding width");
        }
        if !self.stats_w.ncols().is_multiple_of(2) || self.stats_w.ncols() == 0 {
            return bad("stats.W must have an even, positive column count");
        }
        if self.stats_b.len() != self.stats_w.ncols() {
            return bad("stats.b length must equal stats.W columns");
        }
        Ok(())
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            vocab: self.phoneme_embedding.nrows(),
            embed: self.phoneme_embedding.ncols(),
            hidden: self.gcn.hidden_dim(),
            gcn_out: self.gcn.output_dim(),
            graph: self.combine_w.ncols(),
            stats: self.stats_w.ncols() / 2,
        }
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        let entries = [
            (
                PHONEME_EMBEDDING,
                Tensor::from_matrix(&self.phoneme_embedding),
            ),
            (GCN_W0, Tensor::from_matrix(&self.gcn.w0)),
            (GCN_W1, Tensor::from_matrix(&self.gcn.w1)),
            (COMBINE_W, Tensor::from_matrix(&self.combine_w)),
            (COMBINE_B, Tensor::from_vector(&self.combine_b)),
            (STATS_W, Tensor::from_matrix(&self.stats_w)),
            (STATS_B, Tensor::from_vector(&self.stats_b)),
        ];
        for (name, t) in entries {
            c.insert(name, t).expect("fixed weight names are unique");
        }
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self, EncodeError> {
        let mat = |name: &str| -> Result<Array2<f64>, EncodeError> {
            let t = c
                .get(name)
                .ok_or_else(|| EncodeError::Weights(format!("missing tensor {name}")))?;
            Ok(t.to_matrix()?)
        };
        let vec = |name: &str| -> Result<Array1<f64>, EncodeError> {
            let t = c
                .get(name)
                .ok_or_else(|| EncodeError::Weights(format!("missing tensor {name}")))?;
            Ok(t.to_vector()?)
        };
        Self::from_parts(
            mat(PHONEME_EMBEDDING)?,
            mat(GCN_W0)?,
            mat(GCN_W1)?,
            mat(COMBINE_W)?,
            vec(COMBINE_B)?,
            mat(STATS_W)?,
            vec(STATS_B)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub g_text: Array2<f64>,
    pub p_text: Array2<f64>,
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

fn check_spans(spans: &[Range<usize>], total: usize) -> Result<(), EncodeError> {
    let mut next = 0;
    for (w, span) in spans.iter().enumerate() {
        if span.is_empty() {
            return Err(EncodeError::EmptySpan(w));
        }
        if span.start != next {
            return Err(GcnError::ShapeMismatch {
                op: "spans",
                detail: format!("span {w} starts at {} instead of {next}", span.start),
            }
            .into());
        }
        next = span.end;
    }
    if next != total {
        return Err(GcnError::ShapeMismatch {
            op: "spans",
            detail: format!("spans cover {next} of {total} rows"),
        }
        .into());
    }
    Ok(())
}

/// Word-level average pooling.
pub fn word_pool(
    phoneme_features: &Array2<f64>,
    spans: &[Range<usize>],
) -> Result<Array2<f64>, EncodeError> {
    check_spans(spans, phoneme_features.nrows())?;
    let mut out = Array2::<f64>::zeros((spans.len(), phoneme_features.ncols()));
    for (mut row, span) in out.rows_mut().into_iter().zip(spans) {
        let block = phoneme_features.slice(s![span.clone(), ..]);
        for r in block.rows() {
            row += &r;
        }
        row /= span.len() as f64;
    }
    Ok(out)
}

/// Row-wise concatenation `[wp_out | gcn_out]`.
pub fn combine(wp_out: &Array2<f64>, gcn_out: &Array2<f64>) -> Result<Array2<f64>, EncodeError> {
    if wp_out.nrows() != gcn_out.nrows() {
        return Err(GcnError::ShapeMismatch {
            op: "combine",
            detail: format!("{} vs {} rows", wp_out.nrows(), gcn_out.nrows()),
        }
        .into());
    }
    Ok(concatenate![Axis(1), *wp_out, *gcn_out])
}

/// Copies word row `w` onto every phoneme row in span `w`.
pub fn broadcast_to_phonemes(word_features: &Array2<f64>, spans: &[Range<usize>]) -> Array2<f64> {
    assert_eq!(word_features.nrows(), spans.len(), "one span per word row");
    let total = spans.last().map_or(0, |s| s.end);
    let mut out = Array2::<f64>::zeros((total, word_features.ncols()));
    for (w, span) in spans.iter().enumerate() {
        for t in span.clone() {
            out.row_mut(t).assign(&word_features.row(w));
        }
    }
    out
}

fn affine(
    x: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    op: &'static str,
) -> Result<Array2<f64>, EncodeError> {
    if x.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(GcnError::ShapeMismatch {
            op,
            detail: format!("x {:?}, W {:?}, b {}", x.dim(), w.dim(), b.len()),
        }
        .into());
    }
    let mut y = matmul(x.view(), w.view())?;
    y += b;
    Ok(y)
}

/// Linear projection to `2D` values; `mu` is the first half and
/// `sigma = exp(second half)`.
pub fn stats_head(
    fused: &Array2<f64>,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<(Array2<f64>, Array2<f64>), EncodeError> {
    if !weights.ncols().is_multiple_of(2) {
        return Err(GcnError::ShapeMismatch {
            op: "stats_head",
            detail: format!("odd output width {}", weights.ncols()),
        }
        .into());
    }
    let y = affine(fused, weights, bias, "stats_head")?;
    let d = weights.ncols() / 2;
    let mu = y.slice(s![.., ..d]).to_owned();
    let sigma = y.slice(s![.., d..]).mapv(f64::exp);
    Ok((mu, sigma))
}

/// Embedding lookup `p_text`.
pub fn embed(phoneme_ids: &[usize], table: &Array2<f64>) -> Result<Array2<f64>, EncodeError> {
    let mut out = Array2::<f64>::zeros((phoneme_ids.len(), table.ncols()));
    for (t, &id) in phoneme_ids.iter().enumerate() {
        if id >= table.nrows() {
            return Err(GcnError::ShapeMismatch {
                op: "embed",
                detail: format!("phoneme id {id} outside table of {} rows", table.nrows()),
            }
            .into());
        }
        out.row_mut(t).assign(&table.row(id));
    }
    Ok(out)
}

pub fn encode_utterance(
    utterance: &Utterance,
    parse: &DependencyParse,
    weights: &EncoderWeights,
) -> Result<EncoderOutput, EncodeError> {
    encode_with(utterance, parse, weights, |x, graph, params| {
        gcn_forward(x, graph.a_hat(), params)
    })
}

/// Same pipeline with a caller-supplied GCN evaluator, e.g. the tile engine.
pub fn encode_with<F>(
    utterance: &Utterance,
    parse: &DependencyParse,
    weights: &EncoderWeights,
    gcn: F,
) -> Result<EncoderOutput, EncodeError>
where
    F: FnOnce(&Array2<f64>, &SynGraph, &GcnParams) -> Result<Array2<f64>, GcnError>,
{
    if utterance.n_words() != parse.n_words() {
        return Err(EncodeError::WordCountMismatch {
            utterance: utterance.n_words(),
            parse: parse.n_words(),
        });
    }
    let p_text = embed(&utterance.phoneme_ids, &weights.phoneme_embedding)?;
    let wp = word_pool(&p_text, &utterance.spans)?;
    let graph = build_syntax_graph(parse);
    let gcn_out = gcn(&wp, &graph, &weights.gcn)?;
    let combined = combine(&wp, &gcn_out)?;
    let word_embedding = affine(&combined, &weights.combine_w, &weights.combine_b, "combine")?;
    let g_text = broadcast_to_phonemes(&word_embedding, &utterance.spans);
    let fused = concatenate![Axis(1), g_text, p_text];
    let (mu, sigma) = stats_head(&fused, &weights.stats_w, &weights.stats_b)?;
    Ok(EncoderOutput {
        g_text,
        p_text,
        mu,
        sigma,
    })
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};

    fn dims() -> EncoderDims {
        EncoderDims {
            vocab: 6,
            embed: 3,
            hidden: 4,
            gcn_out: 2,
            graph: 5,
            stats: 2,
        }
    }

    fn utterance(spans: Vec<Range<usize>>, ids: Vec<usize>) -> Utterance {
        Utterance {
            words: (0..spans.len()).map(|i| format!("w{i}")).collect(),
            phoneme_ids: ids,
            spans,
        }
    }

    fn parse(heads: Vec<usize>) -> DependencyParse {
        let n = heads.len();
        DependencyParse::new(heads, vec!["dep".into(); n], vec!["w".into(); n], 1).unwrap()
    }

    #[test]
    fn pooling_cases() {
        let x = arr2(&[[1.0, 5.0], [3.0, 7.0], [4.0, 4.0]]);
        let out = word_pool(&x, &[0..2, 2..3]).unwrap();
        assert_eq!(out, arr2(&[[2.0, 6.0], [4.0, 4.0]]));
        assert!(matches!(
            word_pool(&x, &[0..0, 0..3]),
            Err(EncodeError::EmptySpan(0))
        ));
        assert!(word_pool(&x, &[0..2]).is_err());
    }

    #[test]
    fn pooling_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((20, 4), || rng.gen_range(-1.0..1.0));
        let spans = vec![0..3, 3..4, 4..9, 9..15, 15..20];
        let out = word_pool(&x, &spans).unwrap();
        for (w, span) in spans.iter().enumerate() {
            for k in 0..4 {
                let mut s = 0.0;
                for t in span.clone() {
                    s += x[[t, k]];
                }
                assert!((out[[w, k]] - s / span.len() as f64).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn combine_order_and_slicing() {
        let a = arr2(&[[1.0, 2.0]]);
        let b = arr2(&[[3.0, 4.0, 5.0]]);
        let c = combine(&a, &b).unwrap();
        assert_eq!(c, arr2(&[[1.0, 2.0, 3.0, 4.0, 5.0]]));
        assert_eq!(c.slice(s![.., ..2]), a);
        assert_eq!(c.slice(s![.., 2..]), b);
        assert!(combine(&a, &Array2::zeros((2, 1))).is_err());
    }

    #[test]
    fn broadcast_then_pool_roundtrip() {
        let w = arr2(&[[0.1, -3.0], [2.5, 0.7], [1.0, 1.0]]);
        let spans = vec![0..4, 4..5, 5..7];
        let b = broadcast_to_phonemes(&w, &spans);
        assert_eq!(b.nrows(), 7);
        let back = word_pool(&b, &spans).unwrap();
        for (x, y) in back.iter().zip(w.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
        let one = broadcast_to_phonemes(&arr2(&[[4.0, 2.0]]), &[0..3]);
        assert!(one
            .rows()
            .into_iter()
            .all(|r| r == arr2(&[[4.0, 2.0]]).row(0)));
        assert_eq!(broadcast_to_phonemes(&w, &[0..1, 1..2, 2..3]), w);
    }

    #[test]
    fn stats_head_cases() {
        let x = arr2(&[[0.3, -1.0], [2.0, 0.5]]);
        let (mu, sigma) = stats_head(&x, &Array2::zeros((2, 4)), &Array1::zeros(4)).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        assert!(sigma.iter().all(|&v| v == 1.0));

        let bias = Array1::from(vec![0.0, 0.0, 2f64.ln(), 2f64.ln()]);
        let (_, sigma) = stats_head(&x, &Array2::zeros((2, 4)), &bias).unwrap();
        assert!(sigma.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert!(stats_head(&x, &Array2::zeros((2, 3)), &Array1::zeros(3)).is_err());
    }

    #[test]
    fn sigma_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = Array2::from_shape_simple_fn((3, 4), || rng.gen_range(-2.0..2.0));
        let b = Array1::from_shape_simple_fn(4, || rng.gen_range(-2.0..2.0));
        let x = Array2::from_shape_simple_fn((1000, 3), || rng.gen_range(-3.0..3.0));
        let (_, sigma) = stats_head(&x, &w, &b).unwrap();
        assert!(sigma.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_network() {
        let w = EncoderWeights::zeros(dims()).unwrap();
        let u = utterance(vec![0..2, 2..5], vec![0, 1, 2, 3, 4]);
        let out = encode_utterance(&u, &parse(vec![0, 1]), &w).unwrap();
        assert_eq!(out.mu.dim(), (5, 2));
        assert!(out.mu.iter().all(|&v| v == 0.0));
        assert!(out.sigma.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_word_single_phoneme() {
        let w = EncoderWeights::seeded(dims(), 4).unwrap();
        let u = utterance(vec![0..1], vec![3]);
        let out = encode_utterance(&u, &parse(vec![0]), &w).unwrap();
        assert_eq!(out.g_text.dim(), (1, 5));
        assert_eq!(out.p_text.row(0), w.phoneme_embedding.row(3));
    }

    #[test]
    fn word_count_mismatch() {
        let w = EncoderWeights::zeros(dims()).unwrap();
        let u = utterance(vec![0..1, 1..2], vec![0, 1]);
        assert!(matches!(
            encode_utterance(&u, &parse(vec![0]), &w),
            Err(EncodeError::WordCountMismatch {
                utterance: 2,
                parse: 1
            })
        ));
        let u = utterance(vec![0..1], vec![6]);
        assert!(matches!(
            encode_utterance(&u, &parse(vec![0]), &w),
            Err(EncodeError::Shape(_))
        ));
    }

    #[test]
    fn weights_container_roundtrip() {
        let w = EncoderWeights::seeded(dims(), 17).unwrap();
        let back = EncoderWeights::from_container(&w.to_container()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.dims(), dims());
        let mut c = w.to_container();
        c.remove(STATS_B);
        assert!(EncoderWeights::from_container(&c).is_err());
    }

    #[test]
    fn invalid_dims() {
        let mut d = dims();
        d.graph = 0;
        assert!(EncoderWeights::zeros(d).is_err());
    }
}
