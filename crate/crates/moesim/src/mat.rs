//! Minimal dense row-major matrix used for router and expert weights.

use rand::Rng;

/// Dense `rows x cols` matrix of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Entries drawn i.i.d. uniform in [lo, hi), row-major draw order.
    pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Mat { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`, accumulating one MAC per (row, col) pair into `macs`.
    pub fn matvec(&self, x: &[f64], macs: &mut u64) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        *macs += (self.rows * self.cols) as u64;
        (0..self.rows).map(|r| self.row(r).iter().zip(x).map(|(w, xi)| w * xi).sum()).collect()
    }

    /// Frobenius norm, used by gradient checks.
    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}
