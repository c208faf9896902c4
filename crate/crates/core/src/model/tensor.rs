//! Row-major 2-D `f64` tensors and the dense kernels behind the graph ops.

use crate::error::{HelioError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HelioError::Shape(format!(
                "{} values cannot form a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c += a * b` for `a: n x k`, `b: k x m`, `c: n x m`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a * b^T` for `a: n x m`, `b: k x m`, `c: n x k`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            c[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += a^T * b` for `a: n x k`, `b: n x m`, `c: k x m`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut c = Tensor::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                c.data[i * b.cols + j] = (0..a.cols).map(|p| a.at(i, p) * b.at(p, j)).sum();
            }
        }
        c
    }

    fn transpose(t: &Tensor) -> Tensor {
        let mut o = Tensor::zeros(t.cols, t.rows);
        for i in 0..t.rows {
            for j in 0..t.cols {
                o.data[j * t.rows + i] = t.at(i, j);
            }
        }
        o
    }

    #[test]
    fn kernels_match_naive_products() {
        let a = Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let b = Tensor::from_vec(4, 5, (0..20).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let want = naive(&a, &b);
        let mut c = vec![0.0; 15];
        matmul_acc(&a.data, &b.data, &mut c, 3, 4, 5);
        assert!(c.iter().zip(&want.data).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt = transpose(&b);
        let mut c2 = vec![0.0; 15];
        matmul_nt_acc(&a.data, &bt.data, &mut c2, 3, 4, 5);
        assert!(c2.iter().zip(&want.data).all(|(x, y)| (x - y).abs() < 1e-12));

        let at = transpose(&a);
        let mut c3 = vec![0.0; 15];
        matmul_tn_acc(&at.data, &b.data, &mut c3, 4, 3, 5);
        assert!(c3.iter().zip(&want.data).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
