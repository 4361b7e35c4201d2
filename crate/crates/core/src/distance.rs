//! Rank-based robust Mahalanobis distance.
//!
//! Each covariate column is replaced by its ranks (average ranks for ties).
//! The rank covariance matrix is rescaled so every column has the variance
//! of untied ranks, `(L^2 - 1) / 12`, keeping the rank correlations, and the
//! distance between two units is the quadratic form of their rank
//! difference under the (pseudo-)inverse of that matrix.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Relative cutoff on singular values when inverting the rank covariance.
pub const PINV_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    /// Set when the rescaled covariance was singular and the pseudo-inverse
    /// discarded at least one direction.
    pub rank_deficient: bool,
}

impl DistanceMatrix {
    /// Builds a matrix from a full row-major `n x n` buffer.
    pub fn from_full(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "distance buffer has {} entries, expected {}",
                values.len(),
                n * n
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if i != j && (!v.is_finite() || v < 0.0 || v != values[j * n + i]) {
                    return Err(Error::InvalidArgument(format!(
                        "distance ({i},{j}) must be finite, nonnegative and symmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            n,
            values,
            rank_deficient: false,
        })
    }

    /// Builds a matrix from a function of unordered pairs.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self::from_full(n, values)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Off-diagonal entries `(i, j)` with `i < j`.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }

    /// CSV dump with unit ids as the header row and first column.
    pub fn to_csv(&self, ids: &[String]) -> String {
        let mut out = String::from("id");
        for id in ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in ids.iter().enumerate().take(self.n) {
            out.push_str(id);
            for j in 0..self.n {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Ranks with ties replaced by their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Robust Mahalanobis distances between the rows of `rows` (one covariate
/// vector per unit, all of equal length).
pub fn robust_mahalanobis(rows: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "robust Mahalanobis distance needs at least 2 units, got {n}"
        )));
    }
    let k = rows[0].len();
    if k == 0 {
        return Err(Error::InvalidArgument("no covariates".into()));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument(
            "covariate vectors differ in length".into(),
        ));
    }

    let mut ranks = DMatrix::<f64>::zeros(n, k);
    for c in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        for (r, v) in average_ranks(&col).into_iter().enumerate() {
            ranks[(r, c)] = v;
        }
    }

    let centered = {
        let mut m = ranks.clone();
        for c in 0..k {
            let mean = m.column(c).mean();
            m.column_mut(c).add_scalar_mut(-mean);
        }
        m
    };
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);

    let untied = (n as f64 * n as f64 - 1.0) / 12.0;
    let scale: Vec<f64> = (0..k)
        .map(|c| {
            let v = cov[(c, c)];
            if v > 0.0 {
                (untied / v).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| cov[(i, j)] * scale[i] * scale[j]);

    let svd = scaled.svd(true, true);
    let max_sv = svd.singular_values.max();
    let cutoff = PINV_TOLERANCE * max_sv.max(f64::MIN_POSITIVE);
    let rank_deficient = svd.singular_values.iter().any(|&s| s <= cutoff);
    let inverse = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;

    let mut values = vec![0.0; n * n];
    let mut diff = vec![0.0; k];
    for i in 0..n {
        for j in i + 1..n {
            for c in 0..k {
                diff[c] = ranks[(i, c)] - ranks[(j, c)];
            }
            let mut q = 0.0;
            for a in 0..k {
                if diff[a] == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for b in 0..k {
                    row += inverse[(a, b)] * diff[b];
                }
                q += diff[a] * row;
            }
            let q = q.max(0.0);
            values[i * n + j] = q;
            values[j * n + i] = q;
        }
    }
    Ok(DistanceMatrix {
        n,
        values,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn two_units_one_covariate() {
        // rank gap 1, untied rank variance (4 - 1) / 12
        let d = robust_mahalanobis(&[vec![7.0], vec![11.0]]).unwrap();
        let oracle = 1.0_f64.powi(2) / ((4.0 - 1.0) / 12.0);
        assert!((d.get(0, 1) - oracle).abs() < 1e-12);
        assert!((d.get(0, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_are_at_zero_distance() {
        let d = robust_mahalanobis(&[vec![1.0, 5.0], vec![1.0, 5.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn uncorrelated_columns_use_diagonal_inverse() {
        // rank columns (1,2,3,4) and (2,4,1,3) have zero rank correlation
        let rows = vec![
            vec![10.0, 0.2],
            vec![20.0, 0.4],
            vec![30.0, 0.1],
            vec![40.0, 0.3],
        ];
        let d = robust_mahalanobis(&rows).unwrap();
        let r1: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
        let r2: [f64; 4] = [2.0, 4.0, 1.0, 3.0];
        let var = 15.0 / 12.0;
        for i in 0..4 {
            for j in 0..4 {
                let oracle = ((r1[i] - r1[j]).powi(2) + (r2[i] - r2[j]).powi(2)) / var;
                assert!((d.get(i, j) - oracle).abs() < 1e-9, "{i},{j}");
            }
        }
        assert!(!d.rank_deficient);
    }

    #[test]
    fn constant_column_is_ignored() {
        let base = vec![vec![3.0], vec![1.0], vec![4.0], vec![1.5], vec![9.0]];
        let with_const: Vec<Vec<f64>> = base.iter().map(|r| vec![r[0], 2.0]).collect();
        let a = robust_mahalanobis(&base).unwrap();
        let b = robust_mahalanobis(&with_const).unwrap();
        assert!(b.rank_deficient);
        for i in 0..5 {
            for j in 0..5 {
                assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_columns_do_not_fail() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let d = robust_mahalanobis(&rows).unwrap();
        assert!(d.rank_deficient);
        assert!(d.upper_triangle().all(|v| v.is_finite() && v >= 0.0));
    }

    #[test]
    fn too_few_units() {
        assert!(robust_mahalanobis(&[vec![1.0]]).is_err());
    }

    #[test]
    fn csv_dump_has_ids() {
        let d = DistanceMatrix::from_fn(2, |_, _| 4.0).unwrap();
        let csv = d.to_csv(&["a".into(), "b".into()]);
        assert_eq!(csv, "id,a,b\na,0,4\nb,4,0\n");
    }
}
