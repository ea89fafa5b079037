//! hh- and hv-curvature of the Chern-type connection and flag curvature.
//!
//! Sign convention: `R^b_{a g d} = -[R(X^H_g, X^H_d) e_a]^b` with the usual
//! `R(X, Y) = [nabla_X, nabla_Y] - nabla_[X, Y]`, so that
//! `K = g(R(u, v) u, v) / (g(u,u) g(v,v) - g(u,v)^2)` is `+1` on the unit sphere.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bundle::AnchoredBundle;
use crate::connection::connection_at;
use crate::error::{Error, Result};
use crate::finsler::FinslerData;
use crate::linalg::{Tensor3, Tensor4};

pub const CURVATURE_STEP: f64 = 1e-4;
pub const SIGN_CONVENTION: &str = "R^b_{agd} = -[R(X^H_g, X^H_d) e_a]^b; unit sphere has K = +1";

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: f64,
    /// `r.get(b, a, g, d) = R^b_{a g d}`
    pub r: Tensor4,
    /// `p.get(b, a, g, d) = P^b_{a g d} = -d Gamma^b_{ag} / dy^d`
    pub p: Tensor4,
    /// `max |D(h) - D(h/2)|` over all difference quotients used.
    pub richardson_residual: f64,
    pub sign_convention: &'static str,
}

impl CurvatureData {
    /// `max |R^b_{agd} + R^b_{adg}|`
    pub fn antisymmetry_residual(&self) -> f64 {
        let k = self.r.dim;
        let mut worst: f64 = 0.0;
        for b in 0..k {
            for a in 0..k {
                for g in 0..k {
                    for d in 0..k {
                        worst = worst.max((self.r.get(b, a, g, d) + self.r.get(b, a, d, g)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Richardson-extrapolated central difference of `f` along one coordinate;
/// returns `(value, |D(h) - D(h/2)|)`.
fn diff<F>(f: &F, base: &[f64], i: usize, h: f64) -> Result<(Tensor3, f64)>
where
    F: Fn(&[f64]) -> Result<Tensor3>,
{
    let quotient = |step: f64| -> Result<Tensor3> {
        let mut p = base.to_vec();
        let mut m = base.to_vec();
        p[i] += step;
        m[i] -= step;
        let (a, b) = (f(&p)?, f(&m)?);
        let mut out = a;
        for (o, v) in out.data.iter_mut().zip(&b.data) {
            *o = (*o - v) / (2.0 * step);
        }
        Ok(out)
    };
    let d1 = quotient(h)?;
    let d2 = quotient(h / 2.0)?;
    let res = d1.max_abs_diff(&d2);
    let mut out = d2.clone();
    for (o, v) in out.data.iter_mut().zip(&d1.data) {
        *o = (4.0 * *o - v) / 3.0;
    }
    Ok((out, res))
}

pub fn curvature_at(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64], y: &[f64], h: f64) -> Result<CurvatureData> {
    let margin = 2.0 * h;
    if !fd.domain.contains_x(x, margin) || (fd.is_homogeneous() && !fd.domain.cone_ok(y, margin)) {
        return Err(Error::Margin { margin });
    }
    let (n, k) = (bundle.n, bundle.k);
    let cd = connection_at(bundle, fd, x, y)?;
    let rho = bundle.anchor_at(x)?;
    let c = bundle.structure_at(x)?;
    let gx = |xx: &[f64]| Ok(connection_at(bundle, fd, xx, y)?.gamma);
    let gy = |yy: &[f64]| Ok(connection_at(bundle, fd, x, yy)?.gamma);
    let mut resid: f64 = 0.0;
    let mut dgx = Vec::with_capacity(n);
    for i in 0..n {
        if (0..k).all(|a| rho[(i, a)] == 0.0) {
            // no anchor component along x^i: derivative never used
            dgx.push(Tensor3::zeros(k, k, k));
            continue;
        }
        let (d, r) = diff(&gx, x, i, h)?;
        resid = resid.max(r);
        dgx.push(d);
    }
    let mut dgy = Vec::with_capacity(k);
    for m in 0..k {
        let (d, r) = diff(&gy, y, m, h)?;
        resid = resid.max(r);
        dgy.push(d);
    }
    let gamma = &cd.gamma;
    let nl = &cd.nonlinear;
    // delta_d Gamma^b_{ga} stored as (d, b, g, a)
    let hor = |d: usize, b: usize, g: usize, a: usize| -> f64 {
        let mut v = 0.0;
        for i in 0..n {
            v += rho[(i, d)] * dgx[i].get(b, g, a);
        }
        for m in 0..k {
            v -= nl[(m, d)] * dgy[m].get(b, g, a);
        }
        v
    };
    let mut r = Tensor4::zeros(k);
    let mut p = Tensor4::zeros(k);
    for b in 0..k {
        for a in 0..k {
            for g in 0..k {
                for d in 0..k {
                    let mut v = hor(d, b, g, a) - hor(g, b, d, a);
                    for l in 0..k {
                        v += gamma.get(b, d, l) * gamma.get(l, g, a) - gamma.get(b, g, l) * gamma.get(l, d, a);
                    }
                    for m in 0..k {
                        v += c.get(m, g, d) * gamma.get(b, m, a);
                    }
                    r.set(b, a, g, d, v);
                    p.set(b, a, g, d, -dgy[d].get(b, a, g));
                }
            }
        }
    }
    Ok(CurvatureData {
        x: x.to_vec(),
        y: y.to_vec(),
        h,
        r,
        p,
        richardson_residual: resid,
        sign_convention: SIGN_CONVENTION,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlagCurvature {
    pub k: f64,
    pub numerator: f64,
    pub gram: f64,
}

/// Flag curvature from precomputed curvature at `(x, u)` and `g = g(x, u)`.
pub fn flag_from(cd: &CurvatureData, g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> Result<FlagCurvature> {
    let k = u.len();
    let gf = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += g[(i, j)] * a[i] * b[j];
            }
        }
        s
    };
    let (uu, vv, uv) = (gf(u, u), gf(v, v), gf(u, v));
    let gram = uu * vv - uv * uv;
    if !(gram > 1e-12 * uu * vv) {
        return Err(Error::DegenerateFlag { gram });
    }
    let mut w = vec![0.0; k];
    for (b, wb) in w.iter_mut().enumerate() {
        for a in 0..k {
            for g in 0..k {
                for d in 0..k {
                    *wb += cd.r.get(b, a, g, d) * u[a] * u[g] * v[d];
                }
            }
        }
    }
    let numerator = gf(&w, v);
    Ok(FlagCurvature { k: numerator / gram, numerator, gram })
}

/// `K(x, u, v)` with the flag pole `u` used as the fiber point.
pub fn flag_curvature(bundle: &AnchoredBundle, fd: &FinslerData, x: &[f64], u: &[f64], v: &[f64]) -> Result<FlagCurvature> {
    let cd = curvature_at(bundle, fd, x, u, CURVATURE_STEP)?;
    let g = fd.jet(x, u, 2)?.dyy;
    flag_from(&cd, &g, u, v)
}
