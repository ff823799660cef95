//! Similarity and regression metrics. Matrices are flat row-major slices
//! with an explicit column count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Above this many rows [`RankingMode::Auto`] samples pairs.
pub const EXACT_LIMIT: usize = 5000;
pub const DEFAULT_SAMPLED_PAIRS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("matrix of {len} values does not have {cols} columns")]
    Shape { len: usize, cols: usize },
    #[error("every target column has zero variance")]
    NoVariance,
    #[error("empty input")]
    Empty,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators, fixed combination order
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Length(a.len(), b.len()));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn check_pair(p: &[f64], t: &[f64], cols: usize) -> Result<usize, MetricsError> {
    if p.len() != t.len() {
        return Err(MetricsError::Length(p.len(), t.len()));
    }
    if cols == 0 || p.len() % cols != 0 {
        return Err(MetricsError::Shape { len: p.len(), cols });
    }
    Ok(p.len() / cols)
}

pub fn mse(p: &[f64], t: &[f64], cols: usize) -> Result<f64, MetricsError> {
    let n = check_pair(p, t, cols)?;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    /// Uniform average over the included columns.
    pub value: f64,
    /// Columns skipped because their targets are constant.
    pub excluded: Vec<usize>,
}

/// Per-column `1 − SSE/SST` against each column's target mean, averaged.
pub fn r_squared(p: &[f64], t: &[f64], cols: usize) -> Result<RSquared, MetricsError> {
    let n = check_pair(p, t, cols)?;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let mut mean = vec![0.0; cols];
    for row in t.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sse = vec![0.0; cols];
    let mut sst = vec![0.0; cols];
    for (pr, tr) in p.chunks_exact(cols).zip(t.chunks_exact(cols)) {
        for c in 0..cols {
            sse[c] += (pr[c] - tr[c]) * (pr[c] - tr[c]);
            sst[c] += (tr[c] - mean[c]) * (tr[c] - mean[c]);
        }
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for c in 0..cols {
        if sst[c] > 0.0 {
            total += 1.0 - sse[c] / sst[c];
            used += 1;
        } else {
            excluded.push(c);
        }
    }
    if used == 0 {
        return Err(MetricsError::NoVariance);
    }
    if !excluded.is_empty() {
        log::warn!("r_squared: {} zero-variance target columns excluded", excluded.len());
    }
    Ok(RSquared {
        value: total / used as f64,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RankingMode {
    Exact,
    Sampled { pairs: usize, seed: u64 },
    /// Exact up to [`EXACT_LIMIT`] rows, otherwise sampled with
    /// [`DEFAULT_SAMPLED_PAIRS`] pairs and seed 0.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingScores {
    pub forward: f64,
    pub reverse: f64,
    pub n: usize,
    pub mode: RankingMode,
}

fn unit_rows(m: &[f64], cols: usize) -> Result<Vec<f64>, MetricsError> {
    let mut out = m.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(MetricsError::ZeroVector);
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Pairwise ranking scores:
///
/// * forward = (1/N²) Σᵢ Σⱼ [S(Pᵢ,Tᵢ) > S(Pᵢ,Tⱼ)]
/// * reverse = (1/N²) Σᵢ Σⱼ [S(Pᵢ,Tᵢ) > S(Pⱼ,Tᵢ)]
///
/// with S the cosine similarity. The sums include j = i, which never counts,
/// so the largest attainable value is 1 − 1/N.
pub fn ranking_scores(p: &[f64], t: &[f64], cols: usize, mode: RankingMode) -> Result<RankingScores, MetricsError> {
    let n = check_pair(p, t, cols)?;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let mode = match mode {
        RankingMode::Auto if n > EXACT_LIMIT => RankingMode::Sampled {
            pairs: DEFAULT_SAMPLED_PAIRS,
            seed: 0,
        },
        RankingMode::Auto => RankingMode::Exact,
        m => m,
    };
    let pu = unit_rows(p, cols)?;
    let tu = unit_rows(t, cols)?;
    let s = |i: usize, j: usize| dot(&pu[i * cols..(i + 1) * cols], &tu[j * cols..(j + 1) * cols]);
    let diag: Vec<f64> = (0..n).map(|i| s(i, i)).collect();
    let (forward, reverse) = match mode {
        RankingMode::Exact => {
            let (mut f, mut r) = (0u64, 0u64);
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    if diag[i] > s(i, j) {
                        f += 1;
                    }
                    if diag[i] > s(j, i) {
                        r += 1;
                    }
                }
            }
            let total = (n * n) as f64;
            (f as f64 / total, r as f64 / total)
        }
        RankingMode::Sampled { pairs, seed } => {
            if pairs == 0 {
                return Err(MetricsError::Empty);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut f, mut r) = (0u64, 0u64);
            for _ in 0..pairs {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j {
                    if diag[i] > s(i, j) {
                        f += 1;
                    }
                    if diag[i] > s(j, i) {
                        r += 1;
                    }
                }
            }
            (f as f64 / pairs as f64, r as f64 / pairs as f64)
        }
        RankingMode::Auto => unreachable!("resolved above"),
    };
    Ok(RankingScores {
        forward,
        reverse,
        n,
        mode,
    })
}
