use crate::data::SnpMatrix;
use crate::error::{Error, Result};

/// Column-major token features for tree learners.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_features: usize,
    columns: Vec<u8>,
}

impl FeatureMatrix {
    /// Builds from a row-major grid.
    pub fn from_row_major(n_rows: usize, n_features: usize, values: &[u8]) -> Result<Self> {
        if values.len() != n_rows * n_features {
            return Err(Error::Structural(format!(
                "{} values for {n_rows} x {n_features} features",
                values.len()
            )));
        }
        let mut columns = vec![0u8; values.len()];
        for (r, row) in values.chunks_exact(n_features.max(1)).enumerate() {
            for (f, &v) in row.iter().enumerate() {
                columns[f * n_rows + r] = v;
            }
        }
        Ok(FeatureMatrix {
            n_rows,
            n_features,
            columns,
        })
    }

    /// The given matrix rows, in order.
    pub fn from_snp(matrix: &SnpMatrix, rows: &[usize]) -> Self {
        let n_features = matrix.n_loci();
        let n_rows = rows.len();
        let mut columns = vec![0u8; n_rows * n_features];
        for (r, &src) in rows.iter().enumerate() {
            for (f, &v) in matrix.row(src).iter().enumerate() {
                columns[f * n_rows + r] = v;
            }
        }
        FeatureMatrix {
            n_rows,
            n_features,
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> u8 {
        self.columns[feature * self.n_rows + row]
    }

    #[inline]
    pub fn column(&self, feature: usize) -> &[u8] {
        &self.columns[feature * self.n_rows..(feature + 1) * self.n_rows]
    }

    pub fn row(&self, row: usize) -> Vec<u8> {
        (0..self.n_features).map(|f| self.get(row, f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_agree() {
        let m = SnpMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1, 2],
            vec![0, 1, 2, 3, 4, 0],
        )
        .unwrap();
        let f = FeatureMatrix::from_snp(&m, &[2, 0]);
        assert_eq!(f.row(0), vec![4, 0]);
        assert_eq!(f.row(1), vec![0, 1]);
        assert_eq!(f.column(1), &[0, 1]);
        let g = FeatureMatrix::from_row_major(2, 2, &[4, 0, 0, 1]).unwrap();
        assert_eq!(f, g);
    }
}
