//! Metric data: a Finsler function `F(x, y)` (with `L = F^2 / 2`) or a raw
//! Lagrangian `L(x, y)`, and the fiber quantities derived from it.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::exprjet::{eval_jet, eval_value, ActiveSet, Expr};
use crate::linalg::{max_abs_diff, norm, Cholesky, Tensor3};

/// Partials of `L` at one point. Third-order blocks are present when
/// requested with `order = 3`.
#[derive(Clone, Debug)]
pub struct LagrangianJet {
    pub value: f64,
    pub dx: DVector<f64>,
    pub dy: DVector<f64>,
    /// `d^2 L / dy^a dy^b`
    pub dyy: DMatrix<f64>,
    /// `(i, a)` entry is `d^2 L / dx^i dy^a`
    pub dxy: DMatrix<f64>,
    /// `d^3 L / dy^a dy^b dy^c`
    pub dyyy: Option<Tensor3>,
    /// `(i, a, b)` entry is `d^3 L / dx^i dy^a dy^b`
    pub dxyy: Option<Tensor3>,
}

impl LagrangianJet {
    pub fn third(&self) -> Result<(&Tensor3, &Tensor3)> {
        match (&self.dyyy, &self.dxyy) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Dimension("third-order Lagrangian partials were not computed".into())),
        }
    }
}

/// Anything that can supply partials of a Lagrangian on `M x R^k`.
pub trait Lagrangian: Send + Sync + Debug {
    fn dims(&self) -> (usize, usize);
    fn value(&self, x: &[f64], y: &[f64]) -> Result<f64>;
    fn jet(&self, x: &[f64], y: &[f64], order: u8) -> Result<LagrangianJet>;
}

/// Lagrangian given by an expression in `x1..xn, y1..yk`.
#[derive(Clone, Debug)]
pub struct ExprLagrangian {
    n: usize,
    k: usize,
    pub expr: Expr,
    active: ActiveSet,
}

impl ExprLagrangian {
    pub fn new(expr: Expr, n: usize, k: usize) -> ExprLagrangian {
        ExprLagrangian { n, k, expr, active: ActiveSet::base_and_fiber(n, k) }
    }

    /// `L = F^2 / 2`.
    pub fn from_finsler(f: &Expr, n: usize, k: usize) -> ExprLagrangian {
        let l = Expr::mul(Expr::num(0.5), Expr::pow(f.clone(), 2));
        ExprLagrangian::new(l, n, k)
    }
}

impl Lagrangian for ExprLagrangian {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.k)
    }

    fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        eval_value(&self.expr, x, y)
    }

    fn jet(&self, x: &[f64], y: &[f64], order: u8) -> Result<LagrangianJet> {
        let (n, k) = (self.n, self.k);
        let j = eval_jet(&self.expr, x, y, &self.active, order.max(2))?;
        let dx = DVector::from_iterator(n, (0..n).map(|i| j.d1[i]));
        let dy = DVector::from_iterator(k, (0..k).map(|a| j.d1[n + a]));
        let dyy = DMatrix::from_fn(k, k, |a, b| j.d2(n + a, n + b));
        let dxy = DMatrix::from_fn(n, k, |i, a| j.d2(i, n + a));
        let (dyyy, dxyy) = if order >= 3 {
            let mut t = Tensor3::zeros(k, k, k);
            let mut u = Tensor3::zeros(n, k, k);
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        t.set(a, b, c, j.d3(n + a, n + b, n + c));
                    }
                    for i in 0..n {
                        u.set(i, a, b, j.d3(i, n + a, n + b));
                    }
                }
            }
            (Some(t), Some(u))
        } else {
            (None, None)
        };
        Ok(LagrangianJet { value: j.v, dx, dy, dyy, dxy, dyyy, dxyy })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Positively 1-homogeneous `F`, conic domain away from the zero section.
    Finsler,
    /// Raw Lagrangian (mechanical systems), no homogeneity assumed.
    Lagrangian,
}

#[derive(Clone, Debug)]
pub struct FinslerData {
    pub kind: MetricKind,
    pub n: usize,
    pub k: usize,
    pub lagrangian: Arc<dyn Lagrangian>,
    pub domain: Domain,
}

/// Fiber quantities at one point.
#[derive(Clone, Debug, Serialize)]
pub struct MetricAtPoint {
    /// `F` on the Finsler path, `sqrt(2 L)` when `L > 0` otherwise.
    pub f: Option<f64>,
    pub l: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub g: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub g_inv: DMatrix<f64>,
    /// `A_{abc} = (1/2) d^3 L / dy^a dy^b dy^c`
    pub cartan: Tensor3,
    pub min_pivot: f64,
}

pub fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::linalg::matrix_rows(m).serialize(s)
}

pub fn ser_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter().cloned().collect::<Vec<f64>>().serialize(s)
}

impl FinslerData {
    pub fn finsler(f: &Expr, n: usize, k: usize, domain: Domain) -> FinslerData {
        FinslerData {
            kind: MetricKind::Finsler,
            n,
            k,
            lagrangian: Arc::new(ExprLagrangian::from_finsler(f, n, k)),
            domain,
        }
    }

    pub fn lagrangian(l: &Expr, n: usize, k: usize, domain: Domain) -> FinslerData {
        FinslerData {
            kind: MetricKind::Lagrangian,
            n,
            k,
            lagrangian: Arc::new(ExprLagrangian::new(l.clone(), n, k)),
            domain,
        }
    }

    pub fn from_source(kind: MetricKind, source: Arc<dyn Lagrangian>, domain: Domain) -> FinslerData {
        let (n, k) = source.dims();
        FinslerData { kind, n, k, lagrangian: source, domain }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.kind == MetricKind::Finsler
    }

    /// Dimension and conic-domain check for a fiber point.
    pub fn check_point(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.n || y.len() != self.k {
            return Err(Error::Dimension(format!(
                "point has ({}, {}) coordinates, expected ({}, {})",
                x.len(),
                y.len(),
                self.n,
                self.k
            )));
        }
        if self.is_homogeneous() {
            let r = norm(y);
            if r < self.domain.y_min {
                return Err(Error::ExcludedCone { norm: r, y_min: self.domain.y_min });
            }
        }
        Ok(())
    }

    pub fn jet(&self, x: &[f64], y: &[f64], order: u8) -> Result<LagrangianJet> {
        self.check_point(x, y)?;
        self.lagrangian.jet(x, y, order)
    }

    pub fn lagrangian_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x, y)?;
        self.lagrangian.value(x, y)
    }

    /// `F = sqrt(2 L)`.
    pub fn finsler_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let l = self.lagrangian_value(x, y)?;
        Ok((2.0 * l).max(0.0).sqrt())
    }

    pub fn metric_at(&self, x: &[f64], y: &[f64]) -> Result<MetricAtPoint> {
        let j = self.jet(x, y, 3)?;
        metric_from_jet(&j, self.is_homogeneous())
    }
}

pub fn metric_from_jet(j: &LagrangianJet, homogeneous: bool) -> Result<MetricAtPoint> {
    let chol = Cholesky::new(&j.dyy)?;
    let (dyyy, _) = j.third()?;
    let f = if homogeneous || j.value > 0.0 { Some((2.0 * j.value).max(0.0).sqrt()) } else { None };
    Ok(MetricAtPoint {
        f,
        l: j.value,
        g: j.dyy.clone(),
        g_inv: chol.inverse(),
        cartan: dyyy.scaled(0.5),
        min_pivot: chol.min_pivot,
    })
}

/// Deviations from the homogeneity degrees of `F` (1), `g` (0) and the
/// Cartan tensor (-1) under `y -> lambda y`.
#[derive(Clone, Debug, Serialize)]
pub struct HomogeneityReport {
    pub lambda: f64,
    pub f: f64,
    pub g: f64,
    pub cartan: f64,
}

impl HomogeneityReport {
    pub fn max(&self) -> f64 {
        self.f.max(self.g).max(self.cartan)
    }
}

pub fn homogeneity_report(fd: &FinslerData, x: &[f64], y: &[f64], lambda: f64) -> Result<HomogeneityReport> {
    let ly: Vec<f64> = y.iter().map(|v| v * lambda).collect();
    let a = fd.metric_at(x, y)?;
    let b = fd.metric_at(x, &ly)?;
    let fa = fd.finsler_value(x, y)?;
    let fb = fd.finsler_value(x, &ly)?;
    Ok(HomogeneityReport {
        lambda,
        f: (fb - lambda * fa).abs(),
        g: max_abs_diff(b.g.as_slice(), a.g.as_slice()),
        cartan: b.cartan.max_abs_diff(&a.cartan.scaled(1.0 / lambda)),
    })
}

/// `max |y^a A_{abc}|`, zero for a homogeneous metric.
pub fn cartan_contraction(m: &MetricAtPoint, y: &[f64]) -> f64 {
    let k = y.len();
    let mut worst: f64 = 0.0;
    for b in 0..k {
        for c in 0..k {
            let s: f64 = (0..k).map(|a| y[a] * m.cartan.get(a, b, c)).sum();
            worst = worst.max(s.abs());
        }
    }
    worst
}

/// `|g(y, y) - F^2|`.
pub fn energy_identity(m: &MetricAtPoint, y: &[f64]) -> f64 {
    let yv = DVector::from_column_slice(y);
    let gyy = (yv.transpose() * &m.g * &yv)[(0, 0)];
    (gyy - 2.0 * m.l).abs()
}
