//! Spray, nonlinear connection and Chern-type Christoffel symbols.
//!
//! Index conventions:
//! * `nonlinear[(b, a)] = N^b_a`
//! * `gamma.get(c, a, b) = Gamma^c_{ab}` (upper index first)
//! * `s_low.get(l, a, b) = S_{l a b}` (lowered index first)

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bundle::AnchoredBundle;
use crate::error::{Error, Result};
use crate::exprjet::{eval_jet, ActiveSet, Expr};
use crate::finsler::{ser_matrix, ser_vector, FinslerData, LagrangianJet};
use crate::linalg::{Cholesky, Tensor3};

/// Index order tag written next to serialised Christoffel arrays.
pub const GAMMA_INDEX_ORDER: &str = "upper,lower1,lower2";

/// Tolerance on agreement of the two Christoffel assemblies.
pub const ASSEMBLY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NonlinearMethod {
    /// Implicit differentiation of `g S = R` using third-order jets.
    Exact,
    /// Central differences of the spray in the fiber.
    CentralDifference { h: f64 },
}

impl Default for NonlinearMethod {
    fn default() -> Self {
        NonlinearMethod::Exact
    }
}

fn frame(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64]) -> Result<(DMatrix<f64>, Tensor3)> {
    if bundle.n != fd.n || bundle.k != fd.k {
        return Err(Error::Dimension(format!(
            "bundle is ({}, {}) but metric is ({}, {})",
            bundle.n, bundle.k, fd.n, fd.k
        )));
    }
    Ok((bundle.anchor_at(x)?, bundle.structure_at(x)?))
}

/// `R_a = rho^i_a dL/dx^i - d2L/dx^i dy^a rho^i_d y^d - dL/dy^g C^g_{ad} y^d`.
fn spray_rhs(rho: &DMatrix<f64>, c: &Tensor3, j: &LagrangianJet, y: &[f64]) -> DVector<f64> {
    let (n, k) = rho.shape();
    let ry: Vec<f64> = (0..n).map(|i| (0..k).map(|d| rho[(i, d)] * y[d]).sum()).collect();
    DVector::from_fn(k, |a, _| {
        let mut r = 0.0;
        for i in 0..n {
            r += rho[(i, a)] * j.dx[i] - j.dxy[(i, a)] * ry[i];
        }
        for g in 0..k {
            let cy: f64 = (0..k).map(|d| c.get(g, a, d) * y[d]).sum();
            r -= j.dy[g] * cy;
        }
        r
    })
}

/// `(a, e)` entry is `dR_a / dy^e`.
fn spray_rhs_dy(rho: &DMatrix<f64>, c: &Tensor3, j: &LagrangianJet, y: &[f64]) -> Result<DMatrix<f64>> {
    let (n, k) = rho.shape();
    let (_, dxyy) = j.third()?;
    let ry: Vec<f64> = (0..n).map(|i| (0..k).map(|d| rho[(i, d)] * y[d]).sum()).collect();
    Ok(DMatrix::from_fn(k, k, |a, e| {
        let mut r = 0.0;
        for i in 0..n {
            r += rho[(i, a)] * j.dxy[(i, e)] - dxyy.get(i, a, e) * ry[i] - j.dxy[(i, a)] * rho[(i, e)];
        }
        for g in 0..k {
            let cy: f64 = (0..k).map(|d| c.get(g, a, d) * y[d]).sum();
            r -= j.dyy[(g, e)] * cy + j.dy[g] * c.get(g, a, e);
        }
        r
    }))
}

/// Force contribution `omega_a - y^d d omega_a / dy^d`.
fn force_terms(force: &[Expr], x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
    let k = y.len();
    if force.len() != k {
        return Err(Error::Dimension(format!("force has {} components, expected {k}", force.len())));
    }
    let active = ActiveSet::fiber(k);
    let mut out = DVector::zeros(k);
    for (a, w) in force.iter().enumerate() {
        let j = eval_jet(w, x, y, &active, 1)?;
        let euler: f64 = (0..k).map(|d| y[d] * j.d1[d]).sum();
        out[a] = j.v - euler;
    }
    Ok(out)
}

/// Geodesic spray coefficients `S^a(x, y)`.
pub fn spray(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
    let (rho, c) = frame(bundle, fd, x)?;
    let j = fd.jet(x, y, 2)?;
    let chol = Cholesky::new(&j.dyy)?;
    Ok(chol.solve(&spray_rhs(&rho, &c, &j, y)))
}

/// Spray of the mechanical system with force components `force` (which may
/// depend on `x` and `y`).
pub fn forced_spray(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    force: &[Expr],
    x: &[f64],
    y: &[f64],
) -> Result<DVector<f64>> {
    let (rho, c) = frame(bundle, fd, x)?;
    let j = fd.jet(x, y, 2)?;
    let chol = Cholesky::new(&j.dyy)?;
    let rhs = spray_rhs(&rho, &c, &j, y) + force_terms(force, x, y)?;
    Ok(chol.solve(&rhs))
}

fn nonlinear_from_dspray(c: &Tensor3, ds: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
    let k = y.len();
    DMatrix::from_fn(k, k, |b, a| {
        let cy: f64 = (0..k).map(|d| c.get(b, a, d) * y[d]).sum();
        0.5 * (-ds[(b, a)] + cy)
    })
}

fn exact_dspray(
    rho: &DMatrix<f64>,
    c: &Tensor3,
    j: &LagrangianJet,
    chol: &Cholesky,
    s: &DVector<f64>,
    y: &[f64],
) -> Result<DMatrix<f64>> {
    let k = y.len();
    let (dyyy, _) = j.third()?;
    let dr = spray_rhs_dy(rho, c, j, y)?;
    let mut ds = DMatrix::zeros(k, k);
    for e in 0..k {
        let col = DVector::from_fn(k, |a, _| {
            dr[(a, e)] - (0..k).map(|b| dyyy.get(a, b, e) * s[b]).sum::<f64>()
        });
        ds.set_column(e, &chol.solve(&col));
    }
    Ok(ds)
}

/// `N^b_a = (1/2)(-dS^b/dy^a + C^b_{ad} y^d)`, as `nonlinear[(b, a)]`.
pub fn nonlinear_connection(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    x: &[f64],
    y: &[f64],
    method: NonlinearMethod,
) -> Result<DMatrix<f64>> {
    let (rho, c) = frame(bundle, fd, x)?;
    let k = y.len();
    let ds = match method {
        NonlinearMethod::Exact => {
            let j = fd.jet(x, y, 3)?;
            let chol = Cholesky::new(&j.dyy)?;
            let s = chol.solve(&spray_rhs(&rho, &c, &j, y));
            exact_dspray(&rho, &c, &j, &chol, &s, y)?
        }
        NonlinearMethod::CentralDifference { h } => {
            let mut ds = DMatrix::zeros(k, k);
            for a in 0..k {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[a] += h;
                ym[a] -= h;
                let col = (spray(bundle, fd, x, &yp)? - spray(bundle, fd, x, &ym)?) / (2.0 * h);
                ds.set_column(a, &col);
            }
            ds
        }
    };
    Ok(nonlinear_from_dspray(&c, &ds, y))
}

/// Everything the connection pipeline produces at one fiber point.
#[derive(Clone, Debug, Serialize)]
pub struct ConnectionData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub g: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub g_inv: DMatrix<f64>,
    pub cartan: Tensor3,
    pub s_low: Tensor3,
    pub s_up: Tensor3,
    #[serde(serialize_with = "ser_vector")]
    pub spray: DVector<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub nonlinear: DMatrix<f64>,
    pub gamma: Tensor3,
    pub gamma_index_order: &'static str,
    /// Max difference between the symbol-plus-correction assembly and the
    /// direct horizontal-derivative assembly.
    pub dual_assembly_deviation: f64,
}

impl ConnectionData {
    pub fn k(&self) -> usize {
        self.y.len()
    }

    /// `Gamma_{l a b} = g_{l c} Gamma^c_{ab}`.
    pub fn gamma_low(&self, l: usize, a: usize, b: usize) -> f64 {
        (0..self.k()).map(|c| self.g[(l, c)] * self.gamma.get(c, a, b)).sum()
    }
}

fn c_terms(g: &DMatrix<f64>, c: &Tensor3, l: usize, a: usize, b: usize) -> f64 {
    let k = g.nrows();
    (0..k)
        .map(|m| g[(m, l)] * c.get(m, a, b) + g[(m, b)] * c.get(m, l, a) + g[(m, a)] * c.get(m, l, b))
        .sum()
}

fn raise(g_inv: &DMatrix<f64>, low: &Tensor3) -> Tensor3 {
    let k = g_inv.nrows();
    let mut up = Tensor3::zeros(k, k, k);
    for c in 0..k {
        for a in 0..k {
            for b in 0..k {
                let v: f64 = (0..k).map(|l| g_inv[(c, l)] * low.get(l, a, b)).sum();
                up.set(c, a, b, v);
            }
        }
    }
    up
}

/// Full connection data at `(x, y)`; fails if the two Christoffel assemblies
/// disagree beyond [`ASSEMBLY_TOL`].
pub fn connection_at(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64], y: &[f64]) -> Result<ConnectionData> {
    let (rho, c) = frame(bundle, fd, x)?;
    let (n, k) = (bundle.n, bundle.k);
    let j = fd.jet(x, y, 3)?;
    let (dyyy, dxyy) = j.third()?;
    let chol = Cholesky::new(&j.dyy)?;
    let g = j.dyy.clone();
    let g_inv = chol.inverse();
    let cartan = dyyy.scaled(0.5);

    let s = chol.solve(&spray_rhs(&rho, &c, &j, y));
    let ds = exact_dspray(&rho, &c, &j, &chol, &s, y)?;
    let nl = nonlinear_from_dspray(&c, &ds, y);

    // rho_a(g_{bc}) as (a, b, c)
    let mut xg = Tensor3::zeros(k, k, k);
    for a in 0..k {
        for b in 0..k {
            for cc in 0..k {
                let v: f64 = (0..n).map(|i| rho[(i, a)] * dxyy.get(i, b, cc)).sum();
                xg.set(a, b, cc, v);
            }
        }
    }

    let mut s_low = Tensor3::zeros(k, k, k);
    let mut corr = Tensor3::zeros(k, k, k);
    let mut alt = Tensor3::zeros(k, k, k);
    for l in 0..k {
        for a in 0..k {
            for b in 0..k {
                let ct = c_terms(&g, &c, l, a, b);
                let sv = 0.5 * (xg.get(a, b, l) + xg.get(b, a, l) - xg.get(l, a, b) + ct);
                s_low.set(l, a, b, sv);
                let mut cv = 0.0;
                for m in 0..k {
                    cv += -nl[(m, a)] * cartan.get(m, b, l) - nl[(m, b)] * cartan.get(m, a, l)
                        + nl[(m, l)] * cartan.get(m, a, b);
                }
                corr.set(l, a, b, cv);
                // horizontal derivative delta_a g_{bc} = rho_a(g_{bc}) - N^m_a d g_{bc} / dy^m
                let dg = |p: usize, q: usize, r: usize| {
                    xg.get(p, q, r) - (0..k).map(|m| nl[(m, p)] * dyyy.get(m, q, r)).sum::<f64>()
                };
                alt.set(l, a, b, 0.5 * (dg(a, b, l) + dg(b, a, l) - dg(l, a, b) + ct));
            }
        }
    }
    let s_up = raise(&g_inv, &s_low);
    let corr_up = raise(&g_inv, &corr);
    let mut gamma = s_up.clone();
    for (dst, v) in gamma.data.iter_mut().zip(&corr_up.data) {
        *dst += v;
    }
    let alt_up = raise(&g_inv, &alt);
    let dev = gamma.max_abs_diff(&alt_up);
    if !(dev <= ASSEMBLY_TOL) {
        return Err(Error::AssemblyMismatch { deviation: dev });
    }
    Ok(ConnectionData {
        x: x.to_vec(),
        y: y.to_vec(),
        g,
        g_inv,
        cartan,
        s_low,
        s_up,
        spray: s,
        nonlinear: nl,
        gamma,
        gamma_index_order: GAMMA_INDEX_ORDER,
        dual_assembly_deviation: dev,
    })
}

/// Christoffel symbols `Gamma^c_{ab}` at `(x, y)`.
pub fn christoffel(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64], y: &[f64]) -> Result<Tensor3> {
    Ok(connection_at(bundle, fd, x, y)?.gamma)
}

/// `max |Gamma^c_{ab} - Gamma^c_{ba} - C^c_{ab}|`.
pub fn torsion_residual(cd: &ConnectionData, c: &Tensor3) -> f64 {
    let k = cd.k();
    let mut worst: f64 = 0.0;
    for g in 0..k {
        for a in 0..k {
            for b in 0..k {
                let r = cd.gamma.get(g, a, b) - cd.gamma.get(g, b, a) - c.get(g, a, b);
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Horizontal derivatives `delta_a g_{bc}` from central differences of the
/// metric (step `h`), independent of the jet third partials.
pub fn horizontal_metric_derivative_fd(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    cd: &ConnectionData,
    h: f64,
) -> Result<Tensor3> {
    let (n, k) = (bundle.n, bundle.k);
    let rho = bundle.anchor_at(&cd.x)?;
    let metric = |x: &[f64], y: &[f64]| -> Result<DMatrix<f64>> { Ok(fd.jet(x, y, 2)?.dyy) };
    let mut gx = Vec::with_capacity(n);
    for i in 0..n {
        let mut xp = cd.x.clone();
        let mut xm = cd.x.clone();
        xp[i] += h;
        xm[i] -= h;
        gx.push((metric(&xp, &cd.y)? - metric(&xm, &cd.y)?) / (2.0 * h));
    }
    let mut gy = Vec::with_capacity(k);
    for m in 0..k {
        let mut yp = cd.y.clone();
        let mut ym = cd.y.clone();
        yp[m] += h;
        ym[m] -= h;
        gy.push((metric(&cd.x, &yp)? - metric(&cd.x, &ym)?) / (2.0 * h));
    }
    let mut out = Tensor3::zeros(k, k, k);
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let mut v = 0.0;
                for i in 0..n {
                    v += rho[(i, a)] * gx[i][(b, c)];
                }
                for m in 0..k {
                    v -= cd.nonlinear[(m, a)] * gy[m][(b, c)];
                }
                out.set(a, b, c, v);
            }
        }
    }
    Ok(out)
}

/// `max |delta_a g_{bc} - Gamma_{bac} - Gamma_{cab}|` with finite-difference
/// horizontal derivatives.
pub fn horizontal_compatibility(bundle: &AnchoredBundle, fd: &FinslerData, cd: &ConnectionData) -> Result<f64> {
    let k = cd.k();
    let dg = horizontal_metric_derivative_fd(bundle, fd, cd, 1e-5)?;
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let r = dg.get(a, b, c) - cd.gamma_low(b, a, c) - cd.gamma_low(c, a, b);
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// `(nabla^U_X Y)^c = X^a rho^i_a dY^c/dx^i + Gamma^c_{ab}(x, U(x)) X^a Y^b` for
/// sections given as expressions in `x`.
pub fn sectional_connection(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    u: &[Expr],
    xs: &[Expr],
    ys: &[Expr],
    x: &[f64],
) -> Result<DVector<f64>> {
    let (n, k) = (bundle.n, bundle.k);
    if u.len() != k || xs.len() != k || ys.len() != k {
        return Err(Error::Dimension(format!("sections must have {k} components")));
    }
    for e in u.iter().chain(xs).chain(ys) {
        if e.uses_fiber() {
            return Err(Error::Spec(format!("section component depends on the fiber: {e}")));
        }
    }
    let uv: Vec<f64> = u.iter().map(|e| crate::exprjet::eval_value(e, x, &[])).collect::<Result<_>>()?;
    let xv: Vec<f64> = xs.iter().map(|e| crate::exprjet::eval_value(e, x, &[])).collect::<Result<_>>()?;
    let active = ActiveSet::base(n);
    let yj = ys.iter().map(|e| eval_jet(e, x, &[], &active, 1)).collect::<Result<Vec<_>>>()?;
    let rho = bundle.anchor_at(x)?;
    let gamma = christoffel(bundle, fd, x, &uv)?;
    let rx: Vec<f64> = (0..n).map(|i| (0..k).map(|a| rho[(i, a)] * xv[a]).sum()).collect();
    Ok(DVector::from_fn(k, |c, _| {
        let mut v: f64 = (0..n).map(|i| rx[i] * yj[c].d1[i]).sum();
        for a in 0..k {
            for b in 0..k {
                v += gamma.get(c, a, b) * xv[a] * yj[b].v;
            }
        }
        v
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::StructureFunctions;
    use crate::domain::Domain;
    use crate::exprjet::parse;

    fn dom(n: usize, k: usize) -> Domain {
        Domain { x_box: vec![[-2.0, 2.0]; n], y_box: vec![[-2.0, 2.0]; k], y_min: 1e-3 }
    }

    fn sphere() -> (AnchoredBundle, FinslerData) {
        let f = parse("2*sqrt(y1^2+y2^2)/(1+x1^2+x2^2)").unwrap();
        (AnchoredBundle::tangent(2), FinslerData::finsler(&f, 2, 2, dom(2, 2)))
    }

    /// Levi-Civita symbols of `e^{2 phi} delta` with `phi = log 2 - log(1 + |x|^2)`.
    fn sphere_levi_civita(x: &[f64]) -> Tensor3 {
        let q = 1.0 + x[0] * x[0] + x[1] * x[1];
        let dphi = [-2.0 * x[0] / q, -2.0 * x[1] / q];
        let mut t = Tensor3::zeros(2, 2, 2);
        for c in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let mut v = 0.0;
                    if c == a {
                        v += dphi[b];
                    }
                    if c == b {
                        v += dphi[a];
                    }
                    if a == b {
                        v -= dphi[c];
                    }
                    t.set(c, a, b, v);
                }
            }
        }
        t
    }

    #[test]
    fn sphere_matches_levi_civita() {
        let (b, fd) = sphere();
        let x = [0.3, -0.45];
        let y = [0.8, 0.35];
        let cd = connection_at(&b, &fd, &x, &y).unwrap();
        let lc = sphere_levi_civita(&x);
        assert!(cd.gamma.max_abs_diff(&lc) < 1e-12);
        // spray of a Riemannian metric is -Gamma^c_{ab} y^a y^b
        for c in 0..2 {
            let mut s = 0.0;
            for a in 0..2 {
                for bb in 0..2 {
                    s -= lc.get(c, a, bb) * y[a] * y[bb];
                }
            }
            assert!((cd.spray[c] - s).abs() < 1e-12);
            // N^c_a = Gamma^c_{ad} y^d
            for a in 0..2 {
                let nv: f64 = (0..2).map(|d| lc.get(c, a, d) * y[d]).sum();
                assert!((cd.nonlinear[(c, a)] - nv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_and_difference_nonlinear_agree() {
        let f = parse("sqrt((1 + x1^2)*y1^2 + y2^2 + 0.3*y1*y2) + 0.2*x2*y1 + 0.1*y2").unwrap();
        let fd = FinslerData::finsler(&f, 2, 2, dom(2, 2));
        let b = AnchoredBundle::tangent(2);
        let x = [0.2, 0.6];
        let y = [-0.7, 1.1];
        let e = nonlinear_connection(&b, &fd, &x, &y, NonlinearMethod::Exact).unwrap();
        let d = nonlinear_connection(&b, &fd, &x, &y, NonlinearMethod::CentralDifference { h: 1e-5 }).unwrap();
        assert!((e - d).abs().max() < 1e-8);
    }

    fn rotation_randers() -> (AnchoredBundle, FinslerData) {
        let rho = ["-x2", "1", "0", "x1", "0", "1"].iter().map(|s| parse(s).unwrap()).collect();
        let mut c = StructureFunctions::zero(3);
        c.set(2, 0, 1, parse("-1").unwrap()).unwrap();
        c.set(1, 0, 2, parse("1").unwrap()).unwrap();
        let b = AnchoredBundle::new(2, 3, rho, c).unwrap();
        let f = parse("sqrt((1 + 0.25*x1^2)*y1^2 + y2^2 + y3^2 + 0.5*y1*y2) + 0.2*y3").unwrap();
        (b, FinslerData::finsler(&f, 2, 3, dom(2, 3)))
    }

    #[test]
    fn torsion_and_compatibility_on_rotation_model() {
        let (b, fd) = rotation_randers();
        let x = [0.4, -0.3];
        let y = [0.5, -0.8, 0.6];
        let cd = connection_at(&b, &fd, &x, &y).unwrap();
        let c = b.structure_at(&x).unwrap();
        assert!(torsion_residual(&cd, &c) < 1e-12);
        assert!(horizontal_compatibility(&b, &fd, &cd).unwrap() < 1e-6);
        assert!(cd.dual_assembly_deviation < 1e-12);
    }

    #[test]
    fn constant_force_accelerates_uniformly() {
        let f = parse("sqrt(y1^2+y2^2)").unwrap();
        let fd = FinslerData::finsler(&f, 2, 2, dom(2, 2));
        let b = AnchoredBundle::tangent(2);
        let force = [parse("0.7").unwrap(), parse("0").unwrap()];
        let s = forced_spray(&b, &fd, &force, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!((s[0] - 0.7).abs() < 1e-15 && s[1].abs() < 1e-15);
        let none = [parse("0").unwrap(), parse("0").unwrap()];
        let s0 = forced_spray(&b, &fd, &none, &[0.3, 0.1], &[1.0, 2.0]).unwrap();
        let sp = spray(&b, &fd, &[0.3, 0.1], &[1.0, 2.0]).unwrap();
        assert_eq!(s0, sp);
    }

    #[test]
    fn flat_sectional_connection_is_directional_derivative() {
        let f = parse("sqrt(y1^2+y2^2)").unwrap();
        let fd = FinslerData::finsler(&f, 2, 2, dom(2, 2));
        let b = AnchoredBundle::tangent(2);
        let p = |s: &str| parse(s).unwrap();
        let u = [p("1"), p("0")];
        let xs = [p("x2"), p("1")];
        let ys = [p("x1*x2"), p("x1^2")];
        let v = sectional_connection(&b, &fd, &u, &xs, &ys, &[0.5, 2.0]).unwrap();
        // X = (2, 1): dY = (x2*2 + x1*1, 2*x1*2) = (4.5, 2)
        assert!((v[0] - 4.5).abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);
    }
}
