use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Entries are exactly 0 or 1.
    Discrete,
    /// Entries are clamped dot products in [-1, 1] (possibly mixed with 0/1 columns).
    Relaxed,
}

/// Row-major |X|×K feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    mode: FeatureMode,
}

/// Distinct feature rows with multiplicities.
#[derive(Debug, Clone)]
pub struct Patterns {
    pub rows: Vec<f64>,
    pub counts: Vec<f64>,
    /// Pattern index of every original row.
    pub index: Vec<usize>,
    pub cols: usize,
}

impl Patterns {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.rows[p * self.cols..(p + 1) * self.cols]
    }
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, mode: FeatureMode) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            mode,
        })
    }

    /// Builds a discrete matrix from 0/1 denotation columns.
    pub fn from_columns(columns: &[&[u8]], rows: usize) -> Result<Self> {
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (k, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                data[i * cols + k] = f64::from(v.min(1));
            }
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            mode: FeatureMode::Discrete,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, k)).collect()
    }

    /// A copy with column `k` replaced by zeros.
    pub fn with_zeroed(&self, k: usize) -> FeatureMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + k] = 0.0;
        }
        out
    }

    /// A copy with rows reordered: row `i` of the result is row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: order.len(),
            cols: self.cols,
            data,
            mode: self.mode,
        }
    }

    /// Groups identical rows. Discrete matrices collapse to at most 2^K
    /// patterns, which is what keeps the weight optimizers cheap.
    pub fn patterns(&self) -> Patterns {
        if self.mode == FeatureMode::Relaxed {
            return Patterns {
                rows: self.data.clone(),
                counts: vec![1.0; self.rows],
                index: (0..self.rows).collect(),
                cols: self.cols,
            };
        }
        let mut lookup: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        let mut index = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let p = *lookup.entry(key).or_insert_with(|| {
                rows.extend_from_slice(row);
                counts.push(0.0);
                counts.len() - 1
            });
            counts[p] += 1.0;
            index.push(p);
        }
        Patterns {
            rows,
            counts,
            index,
            cols: self.cols,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log Σ exp(v_i + log c_i), stable under large v.
pub(crate) fn log_sum_exp_weighted(values: &[f64], counts: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values
        .iter()
        .zip(counts)
        .map(|(v, c)| c * (v - m).exp())
        .sum();
    m + s.ln()
}

/// log Σ_{x∈X} exp(wᵀF(x)), computed with max-subtraction.
pub fn log_normalizer(w: &[f64], features: &FeatureMatrix) -> Result<f64> {
    if w.len() != features.cols() {
        return Err(Error::DimensionMismatch {
            expected: features.cols(),
            found: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    let scores: Vec<f64> = (0..features.rows()).map(|i| dot(w, features.row(i))).collect();
    let ones = vec![1.0; scores.len()];
    Ok(log_sum_exp_weighted(&scores, &ones))
}

/// p(x | φ, w) for every sample, in corpus order.
pub fn distribution(w: &[f64], features: &FeatureMatrix) -> Result<Vec<f64>> {
    let z = log_normalizer(w, features)?;
    Ok((0..features.rows())
        .map(|i| (dot(w, features.row(i)) - z).exp())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_log_n() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 1, 0]], 5).unwrap();
        assert!((log_normalizer(&[0.0], &f).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn direct_summation_example() {
        let f = FeatureMatrix::from_columns(&[&[1, 1, 0, 0]], 4).unwrap();
        let got = log_normalizer(&[10.0], &f).unwrap();
        let want = (2.0 * 10f64.exp() + 2.0).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn huge_weights_stay_finite() {
        let f = FeatureMatrix::from_columns(&[&[1, 0]], 2).unwrap();
        let z = log_normalizer(&[1000.0], &f).unwrap();
        assert!((z - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn shift_identity() {
        // A constant column shifts every score by the same amount.
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1], &[1, 1, 1]], 3).unwrap();
        let base = log_normalizer(&[0.7, 0.0], &f).unwrap();
        let shifted = log_normalizer(&[0.7, 2.5], &f).unwrap();
        assert!((shifted - base - 2.5).abs() < 1e-12);
    }

    #[test]
    fn reweighting_example() {
        // English, non-sports sample under w = [-5, 3].
        let w = [-5.0, 3.0];
        let x = [1.0, 0.0];
        assert_eq!(dot(&w, &x), -5.0);
    }

    #[test]
    fn rejects_bad_input() {
        let f = FeatureMatrix::from_columns(&[&[1, 0]], 2).unwrap();
        assert!(log_normalizer(&[1.0, 2.0], &f).is_err());
        assert!(log_normalizer(&[f64::NAN], &f).is_err());
    }

    #[test]
    fn patterns_collapse_duplicates() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 1], &[0, 0, 0, 0]], 4).unwrap();
        let p = f.patterns();
        assert_eq!(p.len(), 2);
        assert_eq!(p.counts, [3.0, 1.0]);
        assert_eq!(p.index, [0, 1, 0, 0]);
    }
}
