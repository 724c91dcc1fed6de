//! Row-major dense matrix helpers shared by the forward and backward passes.
//!
//! Every reduction runs in index order so results are bitwise reproducible.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = a · w + bias` where `a` is `n×k` and `w` is `k×m` (row-major).
pub fn affine(a: &Matrix, w: &[f64], bias: &[f64], m: usize) -> Matrix {
    let (n, k) = (a.rows, a.cols);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(bias.len(), m);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let orow = &mut out.data[i * m..(i + 1) * m];
        orow.copy_from_slice(bias);
        let arow = a.row(i);
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let wrow = &w[p * m..(p + 1) * m];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += av * wv;
            }
        }
    }
    out
}

/// Backward of [`affine`]: accumulates `dW += aᵀ·dout`, `db += Σ_rows dout`
/// and returns `da = dout · wᵀ`.
pub fn affine_backward(
    a: &Matrix,
    w: &[f64],
    dout: &Matrix,
    dw: &mut [f64],
    db: &mut [f64],
) -> Matrix {
    let (n, k, m) = (a.rows, a.cols, dout.cols);
    let mut da = Matrix::zeros(n, k);
    for i in 0..n {
        let drow = dout.row(i);
        for (o, &g) in db.iter_mut().zip(drow) {
            *o += g;
        }
        let arow = a.row(i);
        let darow = &mut da.data[i * k..(i + 1) * k];
        for p in 0..k {
            let wrow = &w[p * m..(p + 1) * m];
            let dwrow = &mut dw[p * m..(p + 1) * m];
            let av = arow[p];
            let mut acc = 0.0;
            for j in 0..m {
                dwrow[j] += av * drow[j];
                acc += drow[j] * wrow[j];
            }
            darow[p] = acc;
        }
    }
    da
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable `ln Σ exp(x)` over the given values.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place softmax; entries equal to `-inf` receive probability exactly 0.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = if *x == f64::NEG_INFINITY {
            0.0
        } else {
            (*x - max).exp()
        };
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let w = [1.0, 0.0, -1.0, 0.5, 1.0, 2.0];
        let out = affine(&a, &w, &[0.1, 0.2, 0.3], 3);
        assert_eq!(out.row(0), &[2.1, 2.2, 3.3]);
        assert_eq!(out.row(1), &[5.1, 4.2, 5.3]);
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let mut xs = [0.0, f64::NEG_INFINITY, 0.0];
        softmax_in_place(&mut xs);
        assert_eq!(xs, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-40.0, -3.0, 0.0, 0.7, 25.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
