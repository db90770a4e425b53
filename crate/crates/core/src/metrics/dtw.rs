use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::synth::MelSpectrogram;

/// Monotone frame pairing from `(0, 0)` to `(I-1, J-1)` with steps
/// `(1,0)`, `(0,1)` and `(1,1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn diagonal(len: usize) -> Self {
        Self { pairs: (0..len).map(|i| (i, i)).collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_valid(&self, rows: usize, cols: usize) -> bool {
        let Some(&first) = self.pairs.first() else { return false };
        first == (0, 0)
            && self.pairs.last() == Some(&(rows - 1, cols - 1))
            && self.pairs.windows(2).all(|w| matches!((w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1)), (1, 0) | (0, 1) | (1, 1)))
    }
}

pub(crate) fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum::<f64>().sqrt()
}

/// Minimal-cost alignment under Euclidean frame distance. On equal
/// predecessor costs the backtrack prefers the diagonal, then `(1,0)`, then
/// `(0,1)`.
pub fn dtw_align(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<(AlignmentPath, f64), MetricsError> {
    if a.bins() != b.bins() {
        return Err(MetricsError::DimensionMismatch(a.bins(), b.bins()));
    }
    let (rows, cols) = (a.frames(), b.frames());
    if rows == 0 || cols == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut acc = vec![f64::INFINITY; rows * cols];
    let at = |i: usize, j: usize| i * cols + j;
    for i in 0..rows {
        let ra = a.row(i);
        for j in 0..cols {
            let cost = euclidean(ra, b.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = best + cost;
        }
    }
    let total = acc[at(rows - 1, cols - 1)];

    let mut pairs = vec![(rows - 1, cols - 1)];
    let (mut i, mut j) = (rows - 1, cols - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
        let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
        let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((AlignmentPath { pairs }, total))
}
