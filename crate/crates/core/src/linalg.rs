//! Small dense helpers shared by the geometry modules.

use nalgebra::{DMatrix, DVector};
use serde::ser::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Dense rank-3 array, row-major over `(a, b, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(a: usize, b: usize, c: usize) -> Tensor3 {
        Tensor3 { dims: [a, b, c], data: vec![0.0; a * b * c] }
    }

    #[inline]
    fn at(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.dims[1] + b) * self.dims[2] + c
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.at(a, b, c)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.at(a, b, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.at(a, b, c);
        self.data[i] += v;
    }

    pub fn max_abs_diff(&self, o: &Tensor3) -> f64 {
        max_abs_diff(&self.data, &o.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 { dims: self.dims, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.dims[0])
            .map(|a| {
                (0..self.dims[1])
                    .map(|b| (0..self.dims[2]).map(|c| self.get(a, b, c)).collect())
                    .collect()
            })
            .collect()
    }
}

impl Serialize for Tensor3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

/// Dense rank-4 array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dim: usize) -> Tensor4 {
        Tensor4 { dim, data: vec![0.0; dim.pow(4)] }
    }

    #[inline]
    fn at(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dim + b) * self.dim + c) * self.dim + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.at(a, b, c, d)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let i = self.at(a, b, c, d);
        self.data[i] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        let k = self.dim;
        (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| {
                        (0..k).map(|c| (0..k).map(|d| self.get(a, b, c, d)).collect()).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl Serialize for Tensor4 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Lower-triangular factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
    pub min_pivot: f64,
}

impl Cholesky {
    pub fn new(a: &DMatrix<f64>) -> Result<Cholesky> {
        let n = a.nrows();
        let mut l = DMatrix::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            min_pivot = min_pivot.min(d);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { smallest_pivot: d });
            }
            let s = d.sqrt();
            l[(j, j)] = s;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for p in 0..j {
                    v -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = v / s;
            }
        }
        Ok(Cholesky { l, min_pivot })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut z = b.clone();
        for i in 0..n {
            for p in 0..i {
                z[i] -= self.l[(i, p)] * z[p];
            }
            z[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for p in (i + 1)..n {
                z[i] -= self.l[(p, i)] * z[p];
            }
            z[i] /= self.l[(i, i)];
        }
        z
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut inv = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut e = DVector::zeros(n);
            e[c] = 1.0;
            inv.set_column(c, &self.solve(&e));
        }
        // exact symmetry for downstream contractions
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_inverse_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = Cholesky::new(&a).unwrap();
        let prod = &a * c.inverse();
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((prod - id).abs().max() < 1e-14);
        assert!(c.min_pivot > 0.0);
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match Cholesky::new(&a) {
            Err(Error::NotPositiveDefinite { smallest_pivot }) => {
                assert!((smallest_pivot + 3.0).abs() < 1e-15)
            }
            other => panic!("{other:?}"),
        }
    }
}
