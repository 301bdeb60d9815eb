//! Dependency parses and the undirected syntax graph built from them.
//!
//! Each word is a node. Every head relation contributes one undirected edge,
//! which is the same thing as adding both the forward and the backward tree
//! edge. Self-connections enter through `A_tilde = A + I`.

use std::collections::BTreeSet;

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed CoNLL-U line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("sentence {sentence_no}: head relations contain a cycle")]
    CyclicParse { sentence_no: usize },
    #[error("sentence {sentence_no}: more than one root")]
    MultipleRoots { sentence_no: usize },
}

/// One sentence worth of dependency relations. `heads` are 1-based, 0 is root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyParse {
    pub heads: Vec<usize>,
    pub relations: Vec<String>,
    pub forms: Vec<String>,
}

impl DependencyParse {
    /// Validates the tree invariants. `sentence_no` is only used for errors.
    pub fn new(
        heads: Vec<usize>,
        relations: Vec<String>,
        forms: Vec<String>,
        sentence_no: usize,
    ) -> Result<Self, ParseError> {
        let parse = DependencyParse {
            heads,
            relations,
            forms,
        };
        parse.validate(sentence_no)?;
        Ok(parse)
    }

    pub fn n_words(&self) -> usize {
        self.heads.len()
    }

    /// 0-based index of the root word.
    pub fn root(&self) -> usize {
        self.heads
            .iter()
            .position(|&h| h == 0)
            .expect("validated parse has a root")
    }

    fn validate(&self, sentence_no: usize) -> Result<(), ParseError> {
        let n = self.heads.len();
        assert_eq!(self.relations.len(), n, "relations length");
        assert_eq!(self.forms.len(), n, "forms length");
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots > 1 {
            return Err(ParseError::MultipleRoots { sentence_no });
        }
        // Any out-of-range head is a caller bug; the reader rejects them per line.
        assert!(self.heads.iter().all(|&h| h <= n), "head out of range");
        // With zero roots every walk must revisit a node, so it is caught here too.
        // 0 = unvisited, 1 = on current walk, 2 = known to reach the root.
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut walk = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => return Err(ParseError::CyclicParse { sentence_no }),
                    _ => {}
                }
                state[cur] = 1;
                walk.push(cur);
                match self.heads[cur] {
                    0 => break,
                    h => cur = h - 1,
                }
            }
            for w in walk {
                state[w] = 2;
            }
        }
        if roots == 0 && n > 0 {
            return Err(ParseError::CyclicParse { sentence_no });
        }
        Ok(())
    }

    /// Removes words whose relation is `punct` (or a `punct:` subtype).
    ///
    /// Dependents of a removed word are re-attached to its nearest kept
    /// ancestor. If the root itself is removed, its first kept dependent
    /// becomes the new root and the remaining orphans attach to it.
    pub fn without_punct(&self) -> DependencyParse {
        let is_punct = |i: usize| self.relations[i].split(':').next() == Some("punct");
        let n = self.n_words();
        if (0..n).all(|i| !is_punct(i)) || (0..n).all(is_punct) {
            return self.clone();
        }
        let kept: Vec<usize> = (0..n).filter(|&i| !is_punct(i)).collect();
        let mut new_index = vec![usize::MAX; n];
        for (k, &i) in kept.iter().enumerate() {
            new_index[i] = k;
        }
        // nearest kept ancestor, as a 1-based index into the new parse (0 = none)
        let kept_ancestor = |mut i: usize| -> usize {
            loop {
                match self.heads[i] {
                    0 => return 0,
                    h if !is_punct(h - 1) => return new_index[h - 1] + 1,
                    h => i = h - 1,
                }
            }
        };
        let mut heads: Vec<usize> = kept.iter().map(|&i| kept_ancestor(i)).collect();
        let orphans: Vec<usize> = (0..heads.len()).filter(|&k| heads[k] == 0).collect();
        if let Some((&new_root, rest)) = orphans.split_first() {
            for &k in rest {
                heads[k] = new_root + 1;
            }
        }
        DependencyParse {
            heads,
            relations: kept.iter().map(|&i| self.relations[i].clone()).collect(),
            forms: kept.iter().map(|&i| self.forms[i].clone()).collect(),
        }
    }

    /// Surface text of the sentence (forms joined by single spaces).
    pub fn text(&self) -> String {
        self.forms.join(" ")
    }
}

/// Reads every sentence from a CoNLL-U document.
///
/// Only ID, FORM, HEAD and DEPREL are interpreted. Multiword-token ranges
/// (`3-4`) and empty nodes (`3.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencyParse>, ParseError> {
    let mut parses = Vec::new();
    let mut heads = Vec::new();
    let mut relations = Vec::new();
    let mut forms = Vec::new();
    // line number of each word's row, for head range errors
    let mut rows = Vec::new();

    let mut flush = |heads: &mut Vec<usize>,
                     relations: &mut Vec<String>,
                     forms: &mut Vec<String>,
                     rows: &mut Vec<usize>|
     -> Result<(), ParseError> {
        if heads.is_empty() {
            return Ok(());
        }
        let n = heads.len();
        if let Some(i) = heads.iter().position(|&h| h > n) {
            return Err(ParseError::MalformedLine {
                line_no: rows[i],
                reason: format!("head {} exceeds sentence length {n}", heads[i]),
            });
        }
        let sentence_no = parses.len() + 1;
        parses.push(DependencyParse::new(
            std::mem::take(heads),
            std::mem::take(relations),
            std::mem::take(forms),
            sentence_no,
        )?);
        rows.clear();
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut heads, &mut relations, &mut forms, &mut rows)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let malformed = |reason: String| ParseError::MalformedLine { line_no, reason };
        if cols.len() != 10 {
            return Err(malformed(format!(
                "expected 10 columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| malformed(format!("invalid ID {id:?}")))?;
        if id != heads.len() + 1 {
            return Err(malformed(format!(
                "expected ID {}, found {id}",
                heads.len() + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| malformed(format!("invalid HEAD {:?}", cols[6])))?;
        heads.push(head);
        relations.push(cols[7].to_owned());
        forms.push(cols[1].to_owned());
        rows.push(line_no);
    }
    flush(&mut heads, &mut relations, &mut forms, &mut rows)?;
    Ok(parses)
}

/// Normalization coefficient `1 / sqrt(d_i d_j)` for degrees of `A_tilde`.
///
/// Shared by the dense graph and the sparse engine so both produce the same bits.
#[inline]
pub fn sym_norm_coeff<T: num_traits::Float>(deg_i: usize, deg_j: usize) -> T {
    let prod = T::from(deg_i * deg_j).expect("degree product fits the float type");
    T::one() / prod.sqrt()
}

/// Undirected syntax graph with dense matrices `A`, `A_tilde` and `A_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    a: Array2<f64>,
    a_tilde: Array2<f64>,
    degrees: Vec<usize>,
    a_hat: Array2<f64>,
}

impl SynGraph {
    /// Builds a graph from arbitrary undirected node pairs. Pairs are
    /// canonicalized to `(min, max)`; self-pairs and duplicates are dropped.
    pub fn from_edges<I>(n: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let edges: BTreeSet<(usize, usize)> = pairs
            .into_iter()
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| {
                assert!(i < n && j < n, "edge ({i},{j}) out of range for {n} nodes");
                (i.min(j), i.max(j))
            })
            .collect();
        let mut a = Array2::<f64>::zeros((n, n));
        for &(i, j) in &edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        let mut a_tilde = a.clone();
        for i in 0..n {
            a_tilde[[i, i]] = 1.0;
        }
        let mut degrees = vec![1usize; n];
        for &(i, j) in &edges {
            degrees[i] += 1;
            degrees[j] += 1;
        }
        let mut a_hat = Array2::<f64>::zeros((n, n));
        for ((i, j), &v) in a_tilde.indexed_iter() {
            if v != 0.0 {
                a_hat[[i, j]] = sym_norm_coeff(degrees[i], degrees[j]);
            }
        }
        SynGraph {
            n,
            edges,
            a,
            a_tilde,
            degrees,
            a_hat,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges as `(i, j)` with `i < j`, ascending.
    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn adjacency_tilde(&self) -> &Array2<f64> {
        &self.a_tilde
    }

    /// Diagonal of `D_tilde`, i.e. node degrees counting the self-loop.
    pub fn degrees_tilde(&self) -> &[usize] {
        &self.degrees
    }

    pub fn d_tilde(&self) -> Array2<f64> {
        Array2::from_diag(&ndarray::Array1::from_iter(
            self.degrees.iter().map(|&d| d as f64),
        ))
    }

    pub fn a_hat(&self) -> &Array2<f64> {
        &self.a_hat
    }

    /// Neighbors of `v` in `A_tilde` (self included), ascending.
    pub fn closed_neighborhood(&self, v: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&u| self.a_tilde[[v, u]] != 0.0)
            .collect()
    }

    /// Applies the node relabeling `v -> perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> SynGraph {
        assert_eq!(perm.len(), self.n);
        SynGraph::from_edges(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }
}

/// One node per word, one undirected edge per non-root head relation.
pub fn build_syntax_graph(parse: &DependencyParse) -> SynGraph {
    let pairs = parse
        .heads
        .iter()
        .enumerate()
        .filter(|&(_, &h)| h != 0)
        .map(|(i, &h)| (i, h - 1));
    SynGraph::from_edges(parse.n_words(), pairs)
}

pub fn normalized_adjacency(graph: &SynGraph) -> Array2<f64> {
    graph.a_hat.clone()
}

/// `D - A` with integer entries; `D` excludes self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaplacianMatrix {
    delta: Array2<i64>,
}

impl LaplacianMatrix {
    pub fn as_int(&self) -> &Array2<i64> {
        &self.delta
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.delta.mapv(|v| v as f64)
    }

    /// Quadratic form `f^T Δ f` for a single feature column.
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        let n = self.delta.nrows();
        assert_eq!(f.len(), n);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += f[i] * self.delta[[i, j]] as f64 * f[j];
            }
        }
        acc
    }
}

pub fn unnormalized_laplacian(graph: &SynGraph) -> LaplacianMatrix {
    let n = graph.n;
    let mut delta = Array2::<i64>::zeros((n, n));
    for &(i, j) in &graph.edges {
        delta[[i, j]] -= 1;
        delta[[j, i]] -= 1;
        delta[[i, i]] += 1;
        delta[[j, j]] += 1;
    }
    LaplacianMatrix { delta }
}
