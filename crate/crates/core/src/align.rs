//! Monotonic alignment search between per-token Gaussians and frames.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sigma[{token}][{dim}] = {value} is not positive")]
    NonPositiveSigma {
        token: usize,
        dim: usize,
        value: f64,
    },
    #[error("frames fewer than tokens ({frames} < {tokens})")]
    TooFewFrames { frames: usize, tokens: usize },
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `L[s][t]`: diagonal-Gaussian log density of frame `s` under token `t`.
pub fn loglik_lattice(
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
    frames: &Array2<f64>,
) -> Result<Array2<f64>, AlignError> {
    if mu.dim() != sigma.dim() {
        return Err(AlignError::ShapeMismatch(format!(
            "mu is {:?} but sigma is {:?}",
            mu.dim(),
            sigma.dim()
        )));
    }
    if frames.ncols() != mu.ncols() {
        return Err(AlignError::ShapeMismatch(format!(
            "frames have width {} but stats have width {}",
            frames.ncols(),
            mu.ncols()
        )));
    }
    if let Some(((token, dim), &value)) =
        sigma.indexed_iter().find(|(_, &v)| v.is_nan() || v <= 0.0)
    {
        return Err(AlignError::NonPositiveSigma { token, dim, value });
    }
    let (s_len, t_len) = (frames.nrows(), mu.nrows());
    let log_sigma = sigma.mapv(f64::ln);
    let mut lattice = Array2::<f64>::zeros((s_len, t_len));
    for s in 0..s_len {
        let x = frames.row(s);
        for t in 0..t_len {
            let mut acc = 0.0;
            for k in 0..mu.ncols() {
                let r = x[k] - mu[[t, k]];
                let sd = sigma[[t, k]];
                acc += -log_sigma[[t, k]] - HALF_LN_2PI - r * r / (2.0 * sd * sd);
            }
            lattice[[s, t]] = acc;
        }
    }
    Ok(lattice)
}

/// Frame-to-token assignment; non-decreasing in steps of 0 or 1, starting at
/// token 0 and ending at the last token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub assign: Vec<usize>,
}

impl AlignmentPath {
    pub fn n_frames(&self) -> usize {
        self.assign.len()
    }

    pub fn is_valid_for(&self, n_tokens: usize) -> bool {
        let a = &self.assign;
        !a.is_empty()
            && a[0] == 0
            && a[a.len() - 1] + 1 == n_tokens
            && a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1)
    }

    /// Sum of `L[s][assign[s]]` in ascending frame order.
    pub fn score(&self, lattice: &Array2<f64>) -> f64 {
        self.assign
            .iter()
            .enumerate()
            .fold(0.0, |acc, (s, &t)| acc + lattice[[s, t]])
    }
}

/// Per-token frame counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationVector {
    pub d: Vec<usize>,
}

impl DurationVector {
    pub fn total(&self) -> usize {
        self.d.iter().sum()
    }
}

/// Maximum-score monotonic surjective path by dynamic programming.
///
/// `Q[s][t] = L[s][t] + max(Q[s-1][t], Q[s-1][t-1])`. On ties the
/// backtrack stays on the current token.
pub fn mas(lattice: &Array2<f64>) -> Result<AlignmentPath, AlignError> {
    let (s_len, t_len) = lattice.dim();
    if t_len == 0 {
        return Err(AlignError::ShapeMismatch("lattice has no tokens".into()));
    }
    if s_len < t_len {
        return Err(AlignError::TooFewFrames {
            frames: s_len,
            tokens: t_len,
        });
    }
    let neg = f64::NEG_INFINITY;
    let mut q = Array2::<f64>::from_elem((s_len, t_len), neg);
    q[[0, 0]] = lattice[[0, 0]];
    for s in 1..s_len {
        // token t is reachable at frame s only if t <= s and the remaining
        // frames can still cover the remaining tokens
        let lo = (t_len + s).saturating_sub(s_len);
        let hi = s.min(t_len - 1);
        for t in lo..=hi {
            let stay = q[[s - 1, t]];
            let advance = if t > 0 { q[[s - 1, t - 1]] } else { neg };
            q[[s, t]] = lattice[[s, t]] + stay.max(advance);
        }
    }
    let mut assign = vec![0usize; s_len];
    let mut t = t_len - 1;
    for s in (0..s_len).rev() {
        assign[s] = t;
        if s == 0 {
            break;
        }
        if t > 0 && q[[s - 1, t - 1]] > q[[s - 1, t]] {
            t -= 1;
        }
    }
    debug_assert_eq!(t, 0);
    Ok(AlignmentPath { assign })
}

pub fn durations(path: &AlignmentPath, n_tokens: usize) -> DurationVector {
    let mut d = vec![0usize; n_tokens];
    for &t in &path.assign {
        d[t] += 1;
    }
    DurationVector { d }
}
