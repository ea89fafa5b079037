//! Truncated Taylor arithmetic up to third order over `m` active variables.
//!
//! Second and third partials are stored once per sorted index tuple
//! (`i <= j` and `i <= j <= k`), so symmetry is exact by construction.

use std::ops::{Add, Mul, Neg, Sub};

#[inline]
pub fn tri2(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

#[inline]
pub fn tri3(i: usize, j: usize, k: usize) -> usize {
    let mut s = [i, j, k];
    s.sort_unstable();
    let [a, b, c] = s;
    c * (c + 1) * (c + 2) / 6 + b * (b + 1) / 2 + a
}

pub fn len2(m: usize) -> usize {
    m * (m + 1) / 2
}

pub fn len3(m: usize) -> usize {
    m * (m + 1) * (m + 2) / 6
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub order: u8,
    pub m: usize,
    pub v: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, m: usize, order: u8) -> Jet {
        Jet {
            order,
            m,
            v,
            d1: vec![0.0; if order >= 1 { m } else { 0 }],
            d2: vec![0.0; if order >= 2 { len2(m) } else { 0 }],
            d3: vec![0.0; if order >= 3 { len3(m) } else { 0 }],
        }
    }

    /// The coordinate function for active slot `slot`.
    pub fn variable(v: f64, slot: usize, m: usize, order: u8) -> Jet {
        let mut j = Jet::constant(v, m, order);
        if order >= 1 {
            j.d1[slot] = 1.0;
        }
        j
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.d2[tri2(i, j)]
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d3[tri3(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.d1.iter().all(|v| v.is_finite())
            && self.d2.iter().all(|v| v.is_finite())
            && self.d3.iter().all(|v| v.is_finite())
    }

    fn zip(&self, o: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert_eq!((self.m, self.order), (o.m, o.order));
        Jet {
            order: self.order,
            m: self.m,
            v: f(self.v, o.v),
            d1: self.d1.iter().zip(&o.d1).map(|(a, b)| f(*a, *b)).collect(),
            d2: self.d2.iter().zip(&o.d2).map(|(a, b)| f(*a, *b)).collect(),
            d3: self.d3.iter().zip(&o.d3).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            order: self.order,
            m: self.m,
            v: self.v * s,
            d1: self.d1.iter().map(|a| a * s).collect(),
            d2: self.d2.iter().map(|a| a * s).collect(),
            d3: self.d3.iter().map(|a| a * s).collect(),
        }
    }

    pub fn product(&self, b: &Jet) -> Jet {
        let a = self;
        let m = a.m;
        let mut out = Jet::constant(a.v * b.v, m, a.order);
        if a.order >= 1 {
            for i in 0..m {
                out.d1[i] = a.v * b.d1[i] + a.d1[i] * b.v;
            }
        }
        if a.order >= 2 {
            for j in 0..m {
                for i in 0..=j {
                    let t = tri2(i, j);
                    out.d2[t] = a.v * b.d2[t] + a.d1[i] * b.d1[j] + a.d1[j] * b.d1[i] + a.d2[t] * b.v;
                }
            }
        }
        if a.order >= 3 {
            for k in 0..m {
                for j in 0..=k {
                    for i in 0..=j {
                        let t = tri3(i, j, k);
                        let (jk, ik, ij) = (tri2(j, k), tri2(i, k), tri2(i, j));
                        out.d3[t] = a.v * b.d3[t]
                            + a.d1[i] * b.d2[jk]
                            + a.d1[j] * b.d2[ik]
                            + a.d1[k] * b.d2[ij]
                            + a.d2[ij] * b.d1[k]
                            + a.d2[ik] * b.d1[j]
                            + a.d2[jk] * b.d1[i]
                            + a.d3[t] * b.v;
                    }
                }
            }
        }
        out
    }

    /// `f(self)` given `f` and its first three derivatives at `self.v`.
    pub fn compose(&self, f: [f64; 4]) -> Jet {
        let u = self;
        let m = u.m;
        let [f0, f1, f2, f3] = f;
        let mut out = Jet::constant(f0, m, u.order);
        if u.order >= 1 {
            for i in 0..m {
                out.d1[i] = f1 * u.d1[i];
            }
        }
        if u.order >= 2 {
            for j in 0..m {
                for i in 0..=j {
                    let t = tri2(i, j);
                    out.d2[t] = f2 * u.d1[i] * u.d1[j] + f1 * u.d2[t];
                }
            }
        }
        if u.order >= 3 {
            for k in 0..m {
                for j in 0..=k {
                    for i in 0..=j {
                        let t = tri3(i, j, k);
                        let (jk, ik, ij) = (tri2(j, k), tri2(i, k), tri2(i, j));
                        out.d3[t] = f3 * u.d1[i] * u.d1[j] * u.d1[k]
                            + f2 * (u.d2[ij] * u.d1[k] + u.d2[ik] * u.d1[j] + u.d2[jk] * u.d1[i])
                            + f1 * u.d3[t];
                    }
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let v = self.v;
        let r = 1.0 / v;
        self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }

    pub fn powi(&self, n: u32) -> Jet {
        let v = self.v;
        let nf = n as f64;
        let p = |e: i64| if e < 0 { 0.0 } else { v.powi(e as i32) };
        let n = n as i64;
        self.compose([
            p(n),
            nf * p(n - 1),
            nf * (nf - 1.0) * p(n - 2),
            nf * (nf - 1.0) * (nf - 2.0) * p(n - 3),
        ])
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.v.sqrt();
        self.compose([s, 0.5 / s, -0.25 / (s * self.v), 0.375 / (s * self.v * self.v)])
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.compose([e, e, e, e])
    }

    pub fn ln(&self) -> Jet {
        let r = 1.0 / self.v;
        self.compose([self.v.ln(), r, -r * r, 2.0 * r * r * r])
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose([c, -s, -c, s])
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        self.zip(o, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        self.zip(o, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        self.product(o)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_indices_are_dense() {
        let m = 5;
        let mut seen2 = vec![false; len2(m)];
        for j in 0..m {
            for i in 0..=j {
                seen2[tri2(i, j)] = true;
                assert_eq!(tri2(i, j), tri2(j, i));
            }
        }
        assert!(seen2.iter().all(|s| *s));
        let mut seen3 = vec![false; len3(m)];
        for k in 0..m {
            for j in 0..=k {
                for i in 0..=j {
                    seen3[tri3(i, j, k)] = true;
                    assert_eq!(tri3(i, j, k), tri3(k, i, j));
                }
            }
        }
        assert!(seen3.iter().all(|s| *s));
    }

    #[test]
    fn cube_of_a_variable() {
        // t^3 at t = 2: 8, 12, 12, 6
        let t = Jet::variable(2.0, 0, 1, 3);
        let c = &(&t * &t) * &t;
        assert_eq!((c.v, c.d1[0], c.d2[0], c.d3[0]), (8.0, 12.0, 12.0, 6.0));
        let p = t.powi(3);
        assert_eq!((p.v, p.d1[0], p.d2[0], p.d3[0]), (8.0, 12.0, 12.0, 6.0));
    }

    #[test]
    fn mixed_third_partial_of_monomial() {
        // f = a^2 b at (a, b) = (3, 5): f_aab = 2
        let a = Jet::variable(3.0, 0, 2, 3);
        let b = Jet::variable(5.0, 1, 2, 3);
        let f = &(&a * &a) * &b;
        assert_eq!(f.d3(0, 0, 1), 2.0);
        assert_eq!(f.d3(0, 1, 1), 0.0);
        assert_eq!(f.d2(0, 1), 6.0);
        assert_eq!(f.d2(0, 0), 10.0);
    }

    #[test]
    fn reciprocal_derivatives() {
        let t = Jet::variable(2.0, 0, 1, 3);
        let r = t.recip();
        assert_eq!((r.v, r.d1[0], r.d2[0], r.d3[0]), (0.5, -0.25, 0.25, -0.375));
    }
}
