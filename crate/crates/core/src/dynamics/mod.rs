//! Geodesics, the Legendre map, the Hamiltonian flow on the cotangent
//! bundle of the base, and bi-extremal residuals.

mod integrator;

pub use integrator::{integrate_adaptive, integrate_rk4, Tolerance, Trajectory};

use std::cell::RefCell;

use nalgebra::DVector;
use serde::Serialize;

use crate::bundle::AnchoredBundle;
use crate::connection::{forced_spray, spray};
use crate::error::{Error, Result};
use crate::exprjet::Expr;
use crate::finsler::FinslerData;
use crate::linalg::{max_abs, max_abs_diff, Cholesky};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

/// Conserved quantity along unforced geodesics: `F` on the Finsler path,
/// `y . dL/dy - L` otherwise.
pub fn energy(fd: &FinslerData, x: &[f64], y: &[f64]) -> Result<f64> {
    if fd.is_homogeneous() {
        fd.finsler_value(x, y)
    } else {
        let j = fd.jet(x, y, 2)?;
        Ok(y.iter().zip(j.dy.iter()).map(|(a, b)| a * b).sum::<f64>() - j.value)
    }
}

fn domain_guard(fd: &FinslerData) -> impl Fn(&[f64]) -> Option<String> + '_ {
    move |s: &[f64]| {
        let (x, y) = s.split_at(fd.n);
        if !fd.domain.contains_x(x, 0.0) {
            return Some(format!("left the domain box at x = {x:?}"));
        }
        if fd.is_homogeneous() && !fd.domain.cone_ok(y, 0.0) {
            return Some("entered the excluded cone".into());
        }
        None
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicRun {
    pub trajectory: Trajectory,
    /// Energy (see [`energy`]) at each stored state.
    pub energy: Vec<f64>,
    /// `max |E(t) - E(0)| / |E(0)|`
    pub relative_drift: f64,
}

fn geodesic_rhs<'a>(
    bundle: &'a AnchoredBundle,
    fd: &'a FinslerData,
    force: Option<&'a [Expr]>,
) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + 'a {
    move |_t, s| {
        let (x, y) = s.split_at(bundle.n);
        let rho = bundle.anchor_at(x)?;
        let sp = match force {
            Some(w) => forced_spray(bundle, fd, w, x, y)?,
            None => spray(bundle, fd, x, y)?,
        };
        let mut out: Vec<f64> = (rho * DVector::from_column_slice(y)).iter().cloned().collect();
        out.extend(sp.iter());
        Ok(out)
    }
}

fn with_energy(fd: &FinslerData, trajectory: Trajectory) -> Result<GeodesicRun> {
    let energy = trajectory
        .states
        .iter()
        .map(|s| {
            let (x, y) = s.split_at(fd.n);
            self::energy(fd, x, y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let e0 = energy[0];
    let relative_drift = energy.iter().fold(0.0, |m: f64, e| m.max((e - e0).abs())) / e0.abs().max(f64::MIN_POSITIVE);
    Ok(GeodesicRun { trajectory, energy, relative_drift })
}

/// Integrate `x' = rho(x) y`, `y' = S(x, y)` (with the force if given).
pub fn geodesic(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    force: Option<&[Expr]>,
    x0: &[f64],
    y0: &[f64],
    t_end: f64,
    rtol: f64,
) -> Result<GeodesicRun> {
    fd.check_point(x0, y0)?;
    let mut s0 = x0.to_vec();
    s0.extend_from_slice(y0);
    let tr = integrate_adaptive(geodesic_rhs(bundle, fd, force), &s0, t_end, Tolerance::uniform(rtol), domain_guard(fd))?;
    with_energy(fd, tr)
}

/// Same system with fixed-step RK4 (cross-check integrator).
pub fn geodesic_rk4(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    x0: &[f64],
    y0: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<GeodesicRun> {
    fd.check_point(x0, y0)?;
    let mut s0 = x0.to_vec();
    s0.extend_from_slice(y0);
    let tr = integrate_rk4(geodesic_rhs(bundle, fd, None), &s0, t_end, steps)?;
    with_energy(fd, tr)
}

/// `eta = dL/dy`.
pub fn legendre(fd: &FinslerData, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Ok(fd.jet(x, y, 2)?.dy.iter().cloned().collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct LegendreInverse {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `dL/dy (x, y) = eta` by damped Newton from `y_guess`.
pub fn legendre_inverse(fd: &FinslerData, x: &[f64], eta: &[f64], y_guess: &[f64]) -> Result<LegendreInverse> {
    let scale = max_abs(eta).max(1.0);
    let mut y = y_guess.to_vec();
    let resid = |y: &[f64]| -> Result<(Vec<f64>, f64)> {
        let j = fd.jet(x, y, 2)?;
        let r: Vec<f64> = j.dy.iter().zip(eta).map(|(a, b)| a - b).collect();
        let m = max_abs(&r);
        Ok((r, m))
    };
    let (_, mut r_norm) = resid(&y).map_err(|e| match e {
        Error::ExcludedCone { .. } | Error::Domain { .. } => Error::NewtonFailed {
            iterations: 0,
            residual: f64::INFINITY,
            last: y_guess.to_vec(),
        },
        other => other,
    })?;
    for it in 0..=NEWTON_MAX_ITER {
        if r_norm <= NEWTON_TOL * scale {
            return Ok(LegendreInverse { y, iterations: it, residual: r_norm });
        }
        if it == NEWTON_MAX_ITER {
            break;
        }
        let j = fd.jet(x, &y, 2)?;
        let chol = Cholesky::new(&j.dyy)?;
        let r = DVector::from_iterator(y.len(), j.dy.iter().zip(eta).map(|(a, b)| a - b));
        let step = chol.solve(&r);
        let mut lam = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a - lam * s).collect();
            if let Ok((_, tn)) = resid(&trial) {
                if tn < r_norm || (lam == 1.0 && tn <= NEWTON_TOL * scale) {
                    y = trial;
                    r_norm = tn;
                    improved = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !improved {
            // no descent left: accept if already at round-off level
            if r_norm <= 1e3 * NEWTON_TOL * scale {
                return Ok(LegendreInverse { y, iterations: it, residual: r_norm });
            }
            return Err(Error::NewtonFailed { iterations: it, residual: r_norm, last: y });
        }
    }
    Err(Error::NewtonFailed { iterations: NEWTON_MAX_ITER, residual: r_norm, last: y })
}

/// `(rho^T xi)_a = rho^j_a xi_j`
pub fn pullback(bundle: &AnchoredBundle, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let rho = bundle.anchor_at(x)?;
    Ok((0..bundle.k).map(|a| (0..bundle.n).map(|j| rho[(j, a)] * xi[j]).sum()).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct HamiltonianRun {
    /// States `(x, xi)`.
    pub trajectory: Trajectory,
    /// Fiber velocity `y = H(x, rho^T xi)` at each stored state.
    pub velocities: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// `max |rho^T xi - dL/dy(x, y)|` along the run.
    pub constraint_drift: f64,
    /// `max |xi_dot - xi_dot_simplified|`, where the simplified right-hand
    /// side drops the anchor derivative and uses `d2L/dx dy . y`.
    pub simplified_form_discrepancy: f64,
}

struct HamState<'a> {
    bundle: &'a AnchoredBundle,
    fd: &'a FinslerData,
    guess: RefCell<Vec<f64>>,
}

impl HamState<'_> {
    fn velocity(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let eta = pullback(self.bundle, x, xi)?;
        let guess = self.guess.borrow().clone();
        let sol = legendre_inverse(self.fd, x, &eta, &guess)?;
        *self.guess.borrow_mut() = sol.y.clone();
        Ok(sol.y)
    }

    /// `(x_dot, xi_dot, xi_dot_simplified)`
    fn field(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.bundle.n;
        let (x, xi) = s.split_at(n);
        let y = self.velocity(x, xi)?;
        let aj = self.bundle.anchor_jet(x)?;
        let j = self.fd.jet(x, &y, 2)?;
        let k = self.bundle.k;
        let xdot: Vec<f64> = (0..n).map(|i| (0..k).map(|a| aj.rho[(i, a)] * y[a]).sum()).collect();
        let xidot: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = j.dx[i];
                for jj in 0..n {
                    for a in 0..k {
                        v -= xi[jj] * aj.drho.get(jj, a, i) * y[a];
                    }
                }
                v
            })
            .collect();
        let simplified: Vec<f64> =
            (0..n).map(|i| j.dx[i] - (0..k).map(|a| j.dxy[(i, a)] * y[a]).sum::<f64>()).collect();
        Ok((xdot, xidot, simplified))
    }
}

/// Flow of `H(x, xi) = h(x, rho^T xi)` on `T*M`, starting from `(x0, xi0)`;
/// `y_guess` seeds the first Legendre inversion.
pub fn hamiltonian_flow(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    x0: &[f64],
    xi0: &[f64],
    y_guess: &[f64],
    t_end: f64,
    rtol: f64,
) -> Result<HamiltonianRun> {
    let n = bundle.n;
    if x0.len() != n || xi0.len() != n {
        return Err(Error::Dimension(format!("Hamiltonian flow needs x and xi of length {n}")));
    }
    let st = HamState { bundle, fd, guess: RefCell::new(y_guess.to_vec()) };
    let mut s0 = x0.to_vec();
    s0.extend_from_slice(xi0);
    let rhs = |_t: f64, s: &[f64]| -> Result<Vec<f64>> {
        let (mut xd, xid, _) = st.field(s)?;
        xd.extend(xid);
        Ok(xd)
    };
    let guard = |s: &[f64]| {
        let x = &s[..n];
        if fd.domain.contains_x(x, 0.0) {
            None
        } else {
            Some(format!("left the domain box at x = {x:?}"))
        }
    };
    let tr = integrate_adaptive(rhs, &s0, t_end, Tolerance::uniform(rtol), guard)?;
    let mut velocities = Vec::with_capacity(tr.states.len());
    let mut energy = Vec::with_capacity(tr.states.len());
    let mut drift: f64 = 0.0;
    let mut simpl: f64 = 0.0;
    *st.guess.borrow_mut() = y_guess.to_vec();
    for s in &tr.states {
        let (x, xi) = s.split_at(n);
        let y = st.velocity(x, xi)?;
        let eta = pullback(bundle, x, xi)?;
        drift = drift.max(max_abs_diff(&eta, &legendre(fd, x, &y)?));
        let (_, xid, xis) = st.field(s)?;
        simpl = simpl.max(max_abs_diff(&xid, &xis));
        energy.push(self::energy(fd, x, &y)?);
        velocities.push(y);
    }
    Ok(HamiltonianRun {
        trajectory: tr,
        velocities,
        energy,
        constraint_drift: drift,
        simplified_form_discrepancy: simpl,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowComparison {
    pub y0: Vec<f64>,
    pub geodesic_end: Vec<f64>,
    pub hamiltonian_end: Vec<f64>,
    /// `max |x_geodesic(T) - x_hamiltonian(T)|`
    pub deviation: f64,
    pub constraint_drift: f64,
    pub simplified_form_discrepancy: f64,
}

/// Launch both flows from `(x0, xi0)` with `y0 = H(x0, rho^T xi0)` and compare
/// base endpoints.
pub fn flow_equivalence(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    x0: &[f64],
    xi0: &[f64],
    y_guess: &[f64],
    t_end: f64,
    rtol: f64,
) -> Result<FlowComparison> {
    let eta = pullback(bundle, x0, xi0)?;
    let y0 = legendre_inverse(fd, x0, &eta, y_guess)?.y;
    let geo = geodesic(bundle, fd, None, x0, &y0, t_end, rtol)?;
    let ham = hamiltonian_flow(bundle, fd, x0, xi0, &y0, t_end, rtol)?;
    for (name, tr) in [("geodesic", &geo.trajectory), ("hamiltonian", &ham.trajectory)] {
        if let Some(msg) = &tr.truncated {
            return Err(Error::Spec(format!("{name} run truncated: {msg}")));
        }
    }
    let n = bundle.n;
    let ge = geo.trajectory.last()[..n].to_vec();
    let he = ham.trajectory.last()[..n].to_vec();
    Ok(FlowComparison {
        deviation: max_abs_diff(&ge, &he),
        y0,
        geodesic_end: ge,
        hamiltonian_end: he,
        constraint_drift: ham.constraint_drift,
        simplified_form_discrepancy: ham.simplified_form_discrepancy,
    })
}

/// Find a covector `xi` with `rho^T xi` closest to `eta` (least squares);
/// returns `(xi, |rho^T xi - eta|)`.
pub fn covector_for(bundle: &AnchoredBundle, x: &[f64], eta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let rho = bundle.anchor_at(x)?;
    let rt = rho.transpose();
    let svd = rt.clone().svd(true, true);
    let b = DVector::from_column_slice(eta);
    let xi = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Spec(format!("least squares for the covector failed: {e}")))?;
    let res = (&rt * &xi - b).amax();
    Ok((xi.iter().cloned().collect(), res))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremalClass {
    Normal,
    AbnormalCandidate,
    Degenerate,
    Inconsistent,
}

/// One sample `(x, y, xi, nu)` with the observed derivatives.
#[derive(Clone, Debug)]
pub struct BiextremalSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub nu: f64,
    pub x_dot: Vec<f64>,
    pub xi_dot: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiextremalResidual {
    pub state: f64,
    pub costate: f64,
    pub constraint: f64,
    pub class: ExtremalClass,
}

/// Residuals of `x' = rho y`, `xi_i' = -xi_j d_i rho^j_a y^a + nu dL/dx^i`,
/// `rho^j_b xi_j = nu dL/dy^b`.
pub fn biextremal_residual(
    bundle: &AnchoredBundle,
    fd: &FinslerData,
    s: &BiextremalSample,
    tol: f64,
) -> Result<BiextremalResidual> {
    if s.nu != 0.0 && s.nu != 1.0 {
        return Err(Error::Spec(format!("nu must be 0 or 1, got {}", s.nu)));
    }
    let (n, k) = (bundle.n, bundle.k);
    let aj = bundle.anchor_jet(&s.x)?;
    let j = fd.jet(&s.x, &s.y, 2)?;
    let mut state: f64 = 0.0;
    let mut costate: f64 = 0.0;
    for i in 0..n {
        let xd: f64 = (0..k).map(|a| aj.rho[(i, a)] * s.y[a]).sum();
        state = state.max((s.x_dot[i] - xd).abs());
        let mut v = s.nu * j.dx[i];
        for jj in 0..n {
            for a in 0..k {
                v -= s.xi[jj] * aj.drho.get(jj, a, i) * s.y[a];
            }
        }
        costate = costate.max((s.xi_dot[i] - v).abs());
    }
    let eta = pullback(bundle, &s.x, &s.xi)?;
    let mut constraint: f64 = 0.0;
    for b in 0..k {
        constraint = constraint.max((eta[b] - s.nu * j.dy[b]).abs());
    }
    let xi_zero = max_abs(&s.xi) <= tol;
    let eta_zero = max_abs(&eta) <= tol;
    let class = if s.nu == 1.0 && constraint <= tol {
        ExtremalClass::Normal
    } else if s.nu == 0.0 && eta_zero && !xi_zero {
        ExtremalClass::AbnormalCandidate
    } else if s.nu == 0.0 && xi_zero {
        ExtremalClass::Degenerate
    } else {
        ExtremalClass::Inconsistent
    };
    Ok(BiextremalResidual { state, costate, constraint, class })
}
