mod common;

use common::*;
use fgtts::align::{durations, loglik_lattice, mas, AlignmentPath};
use fgtts::encoder::{encode_utterance, EncoderDims, EncoderWeights};
use fgtts::gcnmath::{
    gcn_forward, laplacian_penalty, mean_aggregate_layer, softmax_rows, OutputActivation, RegConfig,
};
use fgtts::syngraph::{parse_conllu, DependencyParse};
use fgtts::textfront::{build_utterance, Lexicon};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn lexicon() -> Lexicon {
    Lexicon::parse(&std::fs::read_to_string(fixture("lexicon.txt")).unwrap()).unwrap()
}

fn dims(vocab: usize) -> EncoderDims {
    EncoderDims {
        vocab,
        embed: 6,
        hidden: 7,
        gcn_out: 5,
        graph: 4,
        stats: 3,
    }
}

#[test]
fn mean_aggregation_matches_oracle() {
    let mut r = rng(31);
    for _ in 0..20 {
        let n = r.gen_range(1..12);
        let g = random_graph(n, 0.3, &mut r);
        let h = random_matrix(n, 4, &mut r);
        let w = random_matrix(4, 3, &mut r);
        let got = mean_aggregate_layer(&h, &g, &w).unwrap();
        let mut mean = Array2::<f64>::zeros((n, 4));
        for v in 0..n {
            let nb = g.closed_neighborhood(v);
            for &u in &nb {
                let row = &mean.row(v) + &h.row(u);
                mean.row_mut(v).assign(&row);
            }
            mean.row_mut(v).mapv_inplace(|x| x / nb.len() as f64);
        }
        let want = mean.dot(&w).mapv(|x| x.max(0.0));
        assert!(max_abs_diff(&got, &want) <= 1e-12);
    }
}

#[test]
fn penalty_with_zero_lambda_is_base_loss() {
    let mut r = rng(5);
    let g = random_graph(8, 0.5, &mut r);
    let f = random_matrix(8, 3, &mut r);
    let (total, penalty) =
        laplacian_penalty(&f, g.adjacency(), &RegConfig::new(0.0, 1.25).unwrap()).unwrap();
    assert_eq!(total, 1.25);
    assert!(penalty > 0.0);
    assert!(RegConfig::new(-0.1, 0.0).is_err());
}

#[test]
fn zero_weights_give_unit_gaussians() {
    let lex = lexicon();
    let parse = parse_conllu(&std::fs::read_to_string(fixture("telescope_verb.conllu")).unwrap())
        .unwrap()
        .remove(0);
    let utt = build_utterance(&parse.text(), &lex).unwrap();
    let out = encode_utterance(
        &utt,
        &parse,
        &EncoderWeights::zeros(dims(lex.inventory_size())).unwrap(),
    )
    .unwrap();
    assert!(out.mu.iter().all(|&v| v == 0.0));
    assert!(out.sigma.iter().all(|&v| v == 1.0));
    assert_eq!(out.mu.dim(), (utt.n_phonemes(), 3));
}

#[test]
fn encoder_is_deterministic_and_broadcasts_per_word() {
    let lex = lexicon();
    let conllu = std::fs::read_to_string(fixture("corpus.conllu")).unwrap();
    let weights = EncoderWeights::seeded(dims(lex.inventory_size()), 3).unwrap();
    for parse in parse_conllu(&conllu).unwrap().iter().take(10) {
        let parse = parse.without_punct();
        let utt = build_utterance(&parse.text(), &lex).unwrap();
        let a = encode_utterance(&utt, &parse, &weights).unwrap();
        let b = encode_utterance(&utt, &parse, &weights).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma.iter().all(|&s| s > 0.0));
        for span in &utt.spans {
            for p in span.clone() {
                assert_eq!(a.g_text.row(p), a.g_text.row(span.start));
            }
        }
    }
    assert_eq!(
        EncoderWeights::seeded(dims(9), 4)
            .unwrap()
            .to_container()
            .to_bytes()
            .unwrap(),
        EncoderWeights::seeded(dims(9), 4)
            .unwrap()
            .to_container()
            .to_bytes()
            .unwrap()
    );
}

#[test]
fn word_count_mismatch_is_reported() {
    let lex = lexicon();
    let parse = DependencyParse::new(
        vec![0, 1],
        vec!["root".into(), "obj".into()],
        vec!["a".into(), "b".into()],
        1,
    )
    .unwrap();
    let utt = build_utterance("a b c", &lex).unwrap();
    let weights = EncoderWeights::seeded(dims(lex.inventory_size()), 1).unwrap();
    assert!(encode_utterance(&utt, &parse, &weights).is_err());
}

/// Encoding with words relabeled by a parse isomorphism leaves per-word
/// outputs unchanged when the text is permuted alongside.
#[test]
fn encoder_follows_graph_structure_not_word_order() {
    let lex = lexicon();
    let weights = EncoderWeights::seeded(dims(lex.inventory_size()), 8).unwrap();
    // "dog" heads the other two words in both orders
    let p1 =
        DependencyParse::new(vec![2, 0, 2], vec!["dep".into(); 3], vec!["x".into(); 3], 1).unwrap();
    let p2 =
        DependencyParse::new(vec![0, 1, 1], vec!["dep".into(); 3], vec!["x".into(); 3], 1).unwrap();
    let u1 = build_utterance("cat dog mat", &lex).unwrap();
    let u2 = build_utterance("dog cat mat", &lex).unwrap();
    let o1 = encode_utterance(&u1, &p1, &weights).unwrap();
    let o2 = encode_utterance(&u2, &p2, &weights).unwrap();
    // "mat" is last in both and attached to "dog" in both
    let last1 = u1.spans[2].clone();
    let last2 = u2.spans[2].clone();
    let a = o1.g_text.slice(ndarray::s![last1, ..]).to_owned();
    let b = o2.g_text.slice(ndarray::s![last2, ..]).to_owned();
    assert!(max_abs_diff(&a, &b) <= 1e-12);
}

fn lattice_strategy() -> impl Strategy<Value = Array2<f64>> {
    (1usize..=8)
        .prop_flat_map(|s| (Just(s), 1usize..=s.min(5)))
        .prop_flat_map(|(s, t)| {
            prop::collection::vec(-64i32..=0, s * t).prop_map(move |v| {
                Array2::from_shape_vec((s, t), v.into_iter().map(|x| x as f64 / 8.0).collect())
                    .unwrap()
            })
        })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), n in 1usize..10, f in 1usize..8) {
        let z = random_matrix(n, f, &mut rng(seed)).mapv(|v| v * 50.0);
        let y = softmax_rows(&z);
        prop_assert!(max_abs_diff(&y, &oracle_softmax_rows(&z)) <= 1e-12);
        for s in y.sum_axis(Axis(1)) {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        prop_assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn forward_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..15) {
        let mut r = rng(seed);
        let g = random_graph(n, 0.3, &mut r);
        let params = random_params(3, 4, 2, OutputActivation::SoftmaxRows, &mut r);
        let x = random_matrix(n, 3, &mut r);
        let perm = random_permutation(n, &mut r);
        let y = gcn_forward(&x, g.a_hat(), &params).unwrap();
        let yp = gcn_forward(&permute_rows(&x, &perm), g.permuted(&perm).a_hat(), &params).unwrap();
        prop_assert!(max_abs_diff(&yp, &permute_rows(&y, &perm)) <= 1e-12);
    }

    #[test]
    fn penalty_is_twice_trace_form(seed in any::<u64>(), n in 1usize..15) {
        let mut r = rng(seed);
        let g = random_graph(n, 0.4, &mut r);
        let f = random_matrix(n, 3, &mut r);
        let (_, p) = laplacian_penalty(&f, g.adjacency(), &RegConfig::new(1.0, 0.0).unwrap()).unwrap();
        prop_assert!((p - oracle_trace_penalty(g.adjacency(), &f)).abs() <= 1e-10);
        prop_assert!(p >= 0.0);
    }

    #[test]
    fn mas_is_optimal_and_surjective(lattice in lattice_strategy()) {
        let (s, t) = lattice.dim();
        let path = mas(&lattice).unwrap();
        prop_assert!(path.is_valid_for(t));
        prop_assert_eq!(path.score(&lattice), brute_force_mas(&lattice));
        let d = durations(&path, t);
        prop_assert_eq!(d.total(), s);
        prop_assert!(d.d.iter().all(|&k| k >= 1));
    }

    /// Adding a constant per frame shifts every path score by the same sum,
    /// so the chosen path is unchanged. Dyadic values keep the sums exact.
    #[test]
    fn mas_is_shift_invariant(lattice in lattice_strategy(), shift in prop::collection::vec(-32i32..32, 8)) {
        let mut shifted = lattice.clone();
        for (s, mut row) in shifted.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v + shift[s] as f64 / 4.0);
        }
        prop_assert_eq!(mas(&lattice).unwrap(), mas(&shifted).unwrap());
    }

    #[test]
    fn mas_handles_real_gaussian_lattices(seed in any::<u64>(), t in 1usize..6, extra in 0usize..6) {
        let mut r = rng(seed);
        let mu = random_matrix(t, 2, &mut r);
        let sigma = random_matrix(t, 2, &mut r).mapv(|v| v.abs() + 0.1);
        let frames = random_matrix(t + extra, 2, &mut r);
        let l = loglik_lattice(&mu, &sigma, &frames).unwrap();
        let path = mas(&l).unwrap();
        prop_assert!((path.score(&l) - brute_force_mas(&l)).abs() <= 1e-12);
    }
}

#[test]
fn diagonal_lattice_and_single_token() {
    let mut l = Array2::<f64>::from_elem((5, 5), -3.0);
    for i in 0..5 {
        l[[i, i]] = 0.0;
    }
    assert_eq!(
        mas(&l).unwrap(),
        AlignmentPath {
            assign: (0..5).collect()
        }
    );
    let one = Array2::<f64>::from_elem((7, 1), -1.0);
    assert_eq!(durations(&mas(&one).unwrap(), 1).d, vec![7]);
}

#[test]
fn exhaustive_path_counts_are_binomial() {
    assert_eq!(all_paths(8, 5).len(), 35);
    assert_eq!(all_paths(4, 1).len(), 1);
    assert_eq!(all_paths(5, 5).len(), 1);
}
