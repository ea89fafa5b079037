//! Reduction to a leaf of the anchor image for block anchors
//! `rho = [[I_q, 0], [0, 0]]`: the transverse coordinates `x_{q+1..n}` are
//! frozen at `locus` and the frame elements `e_{q+1..k}` span `ker rho`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bundle::{AnchoredBundle, StructureFunctions};
use crate::connection::{connection_at, spray};
use crate::curvature::flag_curvature;
use crate::domain::Domain;
use crate::dynamics::geodesic;
use crate::error::{Error, Result};
use crate::finsler::{FinslerData, Lagrangian, LagrangianJet};
use crate::linalg::{max_abs, max_abs_diff, Cholesky, Tensor3};

/// Step for the third partials of the induced Lagrangian.
pub const INDUCED_FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LeafModel {
    pub bundle: AnchoredBundle,
    pub fd: FinslerData,
    pub q: usize,
    pub locus: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InducedPoint {
    /// Full fiber point `(x_dot, y_K)` solving the stationarity condition.
    pub y_star: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl LeafModel {
    /// Checks the block form of the anchor at every probe (leaf) point.
    pub fn new(bundle: AnchoredBundle, fd: FinslerData, q: usize, locus: Vec<f64>, probes: &[Vec<f64>]) -> Result<LeafModel> {
        let (n, k) = (bundle.n, bundle.k);
        if q == 0 || q > n || q > k {
            return Err(Error::Leaf(format!("leaf dimension {q} incompatible with n = {n}, k = {k}")));
        }
        if locus.len() != n - q {
            return Err(Error::Leaf(format!("locus has {} coordinates, expected {}", locus.len(), n - q)));
        }
        let leaf = LeafModel { bundle, fd, q, locus };
        for xb in probes {
            leaf.check_block(xb)?;
        }
        Ok(leaf)
    }

    fn check_block(&self, xbar: &[f64]) -> Result<()> {
        let (n, k, q) = (self.bundle.n, self.bundle.k, self.q);
        let x = self.full_x(xbar)?;
        let rho = self.bundle.anchor_at(&x)?;
        for i in 0..n {
            for a in 0..k {
                let expect = if a < q && i == a { 1.0 } else { 0.0 };
                if (rho[(i, a)] - expect).abs() > 1e-12 {
                    return Err(Error::Leaf(format!(
                        "anchor is not in block form at x = {x:?}: rho^{}_{} = {}",
                        i + 1,
                        a + 1,
                        rho[(i, a)]
                    )));
                }
            }
        }
        let sv = rho.svd(false, false).singular_values;
        let rank = sv.iter().filter(|s| **s > 1e-8).count();
        if rank != q {
            return Err(Error::Leaf(format!("anchor rank {rank} differs from leaf dimension {q}")));
        }
        Ok(())
    }

    pub fn full_x(&self, xbar: &[f64]) -> Result<Vec<f64>> {
        if xbar.len() != self.q {
            return Err(Error::Dimension(format!("leaf point has {} coordinates, expected {}", xbar.len(), self.q)));
        }
        let mut x = xbar.to_vec();
        x.extend_from_slice(&self.locus);
        Ok(x)
    }

    /// Solve `y^a = x_dot^a` (a <= q) and `dL/dy^b = 0` (b > q) by Newton.
    pub fn induced_lagrangian(&self, xbar: &[f64], xdot: &[f64]) -> Result<InducedPoint> {
        let (k, q) = (self.bundle.k, self.q);
        if xdot.len() != q {
            return Err(Error::Dimension(format!("leaf velocity has {} entries, expected {q}", xdot.len())));
        }
        let x = self.full_x(xbar)?;
        let mut y = xdot.to_vec();
        y.resize(k, 0.0);
        let m = k - q;
        if m == 0 {
            let value = self.fd.lagrangian_value(&x, &y)?;
            return Ok(InducedPoint { y_star: y, value, iterations: 0, residual: 0.0 });
        }
        let kernel_grad = |y: &[f64]| -> Result<(LagrangianJet, Vec<f64>)> {
            let j = self.fd.jet(&x, y, 2)?;
            let r: Vec<f64> = (q..k).map(|b| j.dy[b]).collect();
            Ok((j, r))
        };
        let (mut j, mut r) = kernel_grad(&y)?;
        let scale = max_abs(j.dy.as_slice()).max(1.0);
        let mut rn = max_abs(&r);
        let mut polish = 0;
        for it in 0..50 {
            if rn <= 1e-12 * scale {
                // one or two extra steps take the residual to round-off level
                if polish == 2 || rn == 0.0 {
                    return Ok(InducedPoint { y_star: y, value: j.value, iterations: it, residual: rn });
                }
                polish += 1;
            }
            let hkk = DMatrix::from_fn(m, m, |a, b| j.dyy[(q + a, q + b)]);
            let step = Cholesky::new(&hkk)?.solve(&DVector::from_column_slice(&r));
            let mut lam = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = y.clone();
                for a in 0..m {
                    trial[q + a] -= lam * step[a];
                }
                if let Ok((tj, tr)) = kernel_grad(&trial) {
                    let tn = max_abs(&tr);
                    if tn < rn || (tn <= rn && lam == 1.0) {
                        y = trial;
                        j = tj;
                        r = tr;
                        rn = tn;
                        accepted = true;
                        break;
                    }
                }
                lam *= 0.5;
            }
            if !accepted {
                if rn <= 1e-12 * scale {
                    return Ok(InducedPoint { y_star: y, value: j.value, iterations: it, residual: rn });
                }
                return Err(Error::NewtonFailed { iterations: it, residual: rn, last: y });
            }
        }
        if rn <= 1e-12 * scale {
            return Ok(InducedPoint { y_star: y, value: j.value, iterations: 50, residual: rn });
        }
        Err(Error::NewtonFailed { iterations: 50, residual: rn, last: y })
    }

    /// Lift of a leaf vector `v_bar` that is `g_u`-orthogonal to `ker rho`.
    pub fn orthogonal_lift(&self, xbar: &[f64], u: &[f64], vbar: &[f64]) -> Result<Vec<f64>> {
        let (k, q) = (self.bundle.k, self.q);
        let x = self.full_x(xbar)?;
        let g = self.fd.jet(&x, u, 2)?.dyy;
        let mut v = vbar.to_vec();
        v.resize(k, 0.0);
        if k > q {
            let m = k - q;
            let gkk = DMatrix::from_fn(m, m, |a, b| g[(q + a, q + b)]);
            let rhs = DVector::from_fn(m, |a, _| (0..q).map(|b| g[(q + a, b)] * vbar[b]).sum::<f64>());
            let w = Cholesky::new(&gkk)?.solve(&rhs);
            for a in 0..m {
                v[q + a] = -w[a];
            }
        }
        Ok(v)
    }

    /// The leaf as a classical model: `n = k = q`, `rho = Id`, `C = 0`, metric
    /// the induced Lagrangian.
    pub fn leaf_model(self: &Arc<Self>) -> (AnchoredBundle, FinslerData) {
        let q = self.q;
        let domain = Domain {
            x_box: self.fd.domain.x_box[..q].to_vec(),
            y_box: self.fd.domain.y_box[..q].to_vec(),
            y_min: self.fd.domain.y_min,
        };
        let src: Arc<dyn Lagrangian> = Arc::new(InducedLagrangian { leaf: Arc::clone(self) });
        (AnchoredBundle::tangent(q), FinslerData::from_source(self.fd.kind, src, domain))
    }

    pub fn with_bracket(&self, theta: &StructureFunctions, probes: &[Vec<f64>]) -> Result<LeafModel> {
        let full: Vec<Vec<f64>> = probes.iter().map(|p| self.full_x(p)).collect::<Result<_>>()?;
        Ok(LeafModel {
            bundle: self.bundle.with_perturbation(theta, &full)?,
            fd: self.fd.clone(),
            q: self.q,
            locus: self.locus.clone(),
        })
    }
}

/// `L_N(x_bar, x_dot) = L(x_bar, locus, y*)`. First and second partials come
/// from the envelope identity and Schur complements of the parent Hessian;
/// third partials are central differences of the second.
#[derive(Debug)]
pub struct InducedLagrangian {
    leaf: Arc<LeafModel>,
}

impl InducedLagrangian {
    fn second(&self, xbar: &[f64], xdot: &[f64]) -> Result<LagrangianJet> {
        let leaf = &self.leaf;
        let (k, q) = (leaf.bundle.k, leaf.q);
        let ip = leaf.induced_lagrangian(xbar, xdot)?;
        let x = leaf.full_x(xbar)?;
        let j = leaf.fd.jet(&x, &ip.y_star, 2)?;
        let dx = DVector::from_fn(q, |i, _| j.dx[i]);
        let dy = DVector::from_fn(q, |a, _| j.dy[a]);
        let m = k - q;
        let (dyy, dxy) = if m == 0 {
            (
                DMatrix::from_fn(q, q, |a, b| j.dyy[(a, b)]),
                DMatrix::from_fn(q, q, |i, a| j.dxy[(i, a)]),
            )
        } else {
            let hkk = DMatrix::from_fn(m, m, |a, b| j.dyy[(q + a, q + b)]);
            let chol = Cholesky::new(&hkk)?;
            // columns: d y_K / d (outer) = -H_KK^{-1} H_K,outer
            let hky = DMatrix::from_fn(m, q, |a, b| j.dyy[(q + a, b)]);
            let hkx = DMatrix::from_fn(m, q, |a, i| j.dxy[(i, q + a)]);
            let mut sy = DMatrix::zeros(m, q);
            let mut sx = DMatrix::zeros(m, q);
            for c in 0..q {
                sy.set_column(c, &chol.solve(&hky.column(c).into_owned()));
                sx.set_column(c, &chol.solve(&hkx.column(c).into_owned()));
            }
            let dyy = DMatrix::from_fn(q, q, |a, b| {
                j.dyy[(a, b)] - (0..m).map(|p| hky[(p, a)] * sy[(p, b)]).sum::<f64>()
            });
            let dxy = DMatrix::from_fn(q, q, |i, a| {
                j.dxy[(i, a)] - (0..m).map(|p| hkx[(p, i)] * sy[(p, a)]).sum::<f64>()
            });
            (dyy, dxy)
        };
        Ok(LagrangianJet { value: ip.value, dx, dy, dyy, dxy, dyyy: None, dxyy: None })
    }
}

impl Lagrangian for InducedLagrangian {
    fn dims(&self) -> (usize, usize) {
        (self.leaf.q, self.leaf.q)
    }

    fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.leaf.induced_lagrangian(x, y)?.value)
    }

    fn jet(&self, x: &[f64], y: &[f64], order: u8) -> Result<LagrangianJet> {
        let mut base = self.second(x, y)?;
        if order < 3 {
            return Ok(base);
        }
        let q = self.leaf.q;
        let h = INDUCED_FD_STEP;
        let mut dyyy = Tensor3::zeros(q, q, q);
        let mut dxyy = Tensor3::zeros(q, q, q);
        for c in 0..q {
            let (mut yp, mut ym) = (y.to_vec(), y.to_vec());
            yp[c] += h;
            ym[c] -= h;
            let d = (self.second(x, &yp)?.dyy - self.second(x, &ym)?.dyy) / (2.0 * h);
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[c] += h;
            xm[c] -= h;
            let e = (self.second(&xp, y)?.dyy - self.second(&xm, y)?.dyy) / (2.0 * h);
            for a in 0..q {
                for b in 0..q {
                    dyyy.set(a, b, c, d[(a, b)]);
                    dxyy.set(c, a, b, 0.5 * (e[(a, b)] + e[(b, a)]));
                }
            }
        }
        // symmetrise over all index permutations
        let mut sym = Tensor3::zeros(q, q, q);
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    let v = (dyyy.get(a, b, c) + dyyy.get(a, c, b) + dyyy.get(b, a, c)
                        + dyyy.get(b, c, a) + dyyy.get(c, a, b) + dyyy.get(c, b, a))
                        / 6.0;
                    sym.set(a, b, c, v);
                }
            }
        }
        base.dyyy = Some(sym);
        base.dxyy = Some(dxyy);
        Ok(base)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafConnectionComparison {
    pub gamma_deviation: f64,
    pub nonlinear_deviation: f64,
    pub y_star: Vec<f64>,
}

/// Restricted `Gamma^c_{ab}` and `N^b_a` (indices `<= q`) at the lifted point
/// versus the leaf model computed through the induced Lagrangian.
pub fn leaf_connection_compare(leaf: &Arc<LeafModel>, xbar: &[f64], xdot: &[f64]) -> Result<LeafConnectionComparison> {
    let q = leaf.q;
    let ip = leaf.induced_lagrangian(xbar, xdot)?;
    let x = leaf.full_x(xbar)?;
    let full = connection_at(&leaf.bundle, &leaf.fd, &x, &ip.y_star)?;
    let (lb, lfd) = leaf.leaf_model();
    let red = connection_at(&lb, &lfd, xbar, xdot)?;
    let mut gd: f64 = 0.0;
    let mut nd: f64 = 0.0;
    for c in 0..q {
        for a in 0..q {
            for b in 0..q {
                gd = gd.max((full.gamma.get(c, a, b) - red.gamma.get(c, a, b)).abs());
            }
            nd = nd.max((full.nonlinear[(c, a)] - red.nonlinear[(c, a)]).abs());
        }
    }
    Ok(LeafConnectionComparison { gamma_deviation: gd, nonlinear_deviation: nd, y_star: ip.y_star })
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafGeodesicComparison {
    pub deviation: f64,
    /// `max |x_transverse(t) - locus|` along the full run.
    pub transverse_drift: f64,
    pub full_end: Vec<f64>,
    pub leaf_end: Vec<f64>,
}

pub fn leaf_geodesic_compare(
    leaf: &Arc<LeafModel>,
    xbar: &[f64],
    xdot: &[f64],
    t_end: f64,
    rtol: f64,
) -> Result<LeafGeodesicComparison> {
    let q = leaf.q;
    let ip = leaf.induced_lagrangian(xbar, xdot)?;
    let x = leaf.full_x(xbar)?;
    let full = geodesic(&leaf.bundle, &leaf.fd, None, &x, &ip.y_star, t_end, rtol)?;
    let (lb, lfd) = leaf.leaf_model();
    let red = geodesic(&lb, &lfd, None, xbar, xdot, t_end, rtol)?;
    for (name, tr) in [("full", &full.trajectory), ("leaf", &red.trajectory)] {
        if let Some(msg) = &tr.truncated {
            return Err(Error::Leaf(format!("{name} geodesic truncated: {msg}")));
        }
    }
    let n = leaf.bundle.n;
    let transverse_drift = full
        .trajectory
        .states
        .iter()
        .map(|s| max_abs_diff(&s[q..n], &leaf.locus))
        .fold(0.0, f64::max);
    let fe = full.trajectory.last()[..q].to_vec();
    let le = red.trajectory.last()[..q].to_vec();
    Ok(LeafGeodesicComparison { deviation: max_abs_diff(&fe, &le), transverse_drift, full_end: fe, leaf_end: le })
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafFlagComparison {
    pub k_full: f64,
    pub k_leaf: f64,
    pub deviation: f64,
}

/// Flag curvature of the parent at the lifted flag versus the leaf model.
pub fn leaf_flag_consistency(leaf: &Arc<LeafModel>, xbar: &[f64], ubar: &[f64], vbar: &[f64]) -> Result<LeafFlagComparison> {
    let ip = leaf.induced_lagrangian(xbar, ubar)?;
    let x = leaf.full_x(xbar)?;
    let u = ip.y_star;
    let v = leaf.orthogonal_lift(xbar, &u, vbar)?;
    let kf = flag_curvature(&leaf.bundle, &leaf.fd, &x, &u, &v)?.k;
    let (lb, lfd) = leaf.leaf_model();
    let kl = flag_curvature(&lb, &lfd, xbar, ubar, vbar)?.k;
    Ok(LeafFlagComparison { k_full: kf, k_leaf: kl, deviation: (kf - kl).abs() })
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketComparison {
    /// Restricted Christoffel deviation at the lifted point.
    pub restricted_gamma: f64,
    /// Restricted nonlinear-connection deviation at the lifted point.
    pub restricted_nonlinear: f64,
    /// Spray deviation at the lifted point (on the constraint set).
    pub spray_on_constraint: f64,
    /// Largest Christoffel deviation over all indices.
    pub unrestricted_gamma: f64,
    /// Spray deviation after moving the fiber point off the constraint set.
    pub spray_off_constraint: f64,
}

/// Recompute the leaf-relevant quantities with bracket `C + Theta`.
pub fn leaf_bracket_independence(
    leaf: &LeafModel,
    perturbed: &LeafModel,
    xbar: &[f64],
    xdot: &[f64],
) -> Result<BracketComparison> {
    let (k, q) = (leaf.bundle.k, leaf.q);
    let ip = leaf.induced_lagrangian(xbar, xdot)?;
    let x = leaf.full_x(xbar)?;
    let a = connection_at(&leaf.bundle, &leaf.fd, &x, &ip.y_star)?;
    let b = connection_at(&perturbed.bundle, &perturbed.fd, &x, &ip.y_star)?;
    let mut rg: f64 = 0.0;
    let mut rn: f64 = 0.0;
    for c in 0..q {
        for p in 0..q {
            for r in 0..q {
                rg = rg.max((a.gamma.get(c, p, r) - b.gamma.get(c, p, r)).abs());
            }
            rn = rn.max((a.nonlinear[(c, p)] - b.nonlinear[(c, p)]).abs());
        }
    }
    let mut off = ip.y_star.clone();
    for v in off.iter_mut().skip(q) {
        *v += 0.5;
    }
    if k > q {
        off[k - 1] -= 0.25;
    }
    let s_off = max_abs_diff(
        spray(&leaf.bundle, &leaf.fd, &x, &off)?.as_slice(),
        spray(&perturbed.bundle, &perturbed.fd, &x, &off)?.as_slice(),
    );
    Ok(BracketComparison {
        restricted_gamma: rg,
        restricted_nonlinear: rn,
        spray_on_constraint: max_abs_diff(a.spray.as_slice(), b.spray.as_slice()),
        unrestricted_gamma: a.gamma.max_abs_diff(&b.gamma),
        spray_off_constraint: s_off,
    })
}

/// Spray deviation between brackets `C` and `C + Theta` at points `(x, y, xi)`
/// of the constraint set `rho^T xi = dL/dy`.
pub fn bracket_independence_spray(
    base: &AnchoredBundle,
    perturbed: &AnchoredBundle,
    fd: &FinslerData,
    points: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, y, xi) in points {
        let eta = crate::dynamics::pullback(base, x, xi)?;
        let dl = crate::dynamics::legendre(fd, x, y)?;
        let res = max_abs_diff(&eta, &dl);
        if res > 1e-8 {
            return Err(Error::OffConstraint { residual: res });
        }
        let d = max_abs_diff(spray(base, fd, x, y)?.as_slice(), spray(perturbed, fd, x, y)?.as_slice());
        worst = worst.max(d);
    }
    Ok(worst)
}
