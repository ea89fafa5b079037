//! Embedded Dormand-Prince 5(4) with PI step control, and classical RK4.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    /// Set when integration stopped before the final time.
    pub truncated: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn end_time(&self) -> f64 {
        *self.t.last().expect("trajectory has at least the initial time")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Tolerance {
        Tolerance { rtol: tol, atol: tol }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn axpy(y: &[f64], h: f64, ks: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, wk) in ks.iter().zip(w) {
        if *wk != 0.0 {
            for (o, kv) in out.iter_mut().zip(k) {
                *o += h * wk * kv;
            }
        }
    }
    out
}

/// Integrate `y' = f(t, y)` on `[0, t_end]`. The guard is checked on every
/// accepted state; a `false` stops integration with a truncation note.
pub fn integrate_adaptive<F, G>(mut f: F, y0: &[f64], t_end: f64, tol: Tolerance, guard: G) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> Option<String>,
{
    let mut traj = Trajectory { t: vec![0.0], states: vec![y0.to_vec()], accepted: 0, rejected: 0, truncated: None };
    if t_end <= 0.0 {
        return Ok(traj);
    }
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut k1 = f(t, &y)?;
    let scale0: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let d0 = rms(&y, &scale0);
    let d1 = rms(&k1, &scale0);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(t_end);
    let mut err_prev: f64 = 1e-4;
    let mut last_failure: Option<String> = None;
    loop {
        if t_end - t <= 1e-15 * t_end.max(1.0) {
            return Ok(traj);
        }
        let h_eff = h.min(t_end - t);
        if h_eff < 1e-14 * t.abs().max(1.0) {
            if let Some(msg) = last_failure {
                traj.truncated = Some(msg);
                return Ok(traj);
            }
            return Err(Error::StepUnderflow { t });
        }
        let stage = (|| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut ks: Vec<Vec<f64>> = vec![k1.clone()];
            for s in 1..7 {
                let ys = axpy(&y, h_eff, &ks, &A[s][..s]);
                ks.push(f(t + C[s] * h_eff, &ys)?);
            }
            let y_new = axpy(&y, h_eff, &ks[..6], &A[6][..6]);
            let err: Vec<f64> = (0..y.len()).map(|i| h_eff * (0..7).map(|s| E[s] * ks[s][i]).sum::<f64>()).collect();
            Ok((y_new, err, ks.pop().expect("seven stages")))
        })();
        let (y_new, err, k7) = match stage {
            Ok(v) => v,
            Err(e) => {
                // stage left the domain of the vector field: shrink and retry
                last_failure = Some(e.to_string());
                traj.rejected += 1;
                h = h_eff * 0.25;
                continue;
            }
        };
        let scale: Vec<f64> = (0..y.len()).map(|i| tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs())).collect();
        let en = rms(&err, &scale);
        if en <= 1.0 {
            t += h_eff;
            if let Some(msg) = guard(&y_new) {
                traj.truncated = Some(msg);
                return Ok(traj);
            }
            y = y_new;
            k1 = k7;
            traj.t.push(t);
            traj.states.push(y.clone());
            traj.accepted += 1;
            last_failure = None;
            let en = en.max(1e-10);
            let fac = 0.9 * en.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h = h_eff * fac.clamp(0.2, 5.0);
            err_prev = en;
        } else {
            traj.rejected += 1;
            let fac = 0.9 * en.powf(-1.0 / 5.0);
            h = h_eff * fac.clamp(0.2, 1.0);
        }
    }
}

fn rms(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, b)| (a / b) * (a / b)).sum();
    (s / v.len().max(1) as f64).sqrt()
}

/// Classical fixed-step RK4 with `steps` equal steps.
pub fn integrate_rk4<F>(mut f: F, y0: &[f64], t_end: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let h = t_end / steps as f64;
    let mut y = y0.to_vec();
    let mut traj = Trajectory { t: vec![0.0], states: vec![y.clone()], accepted: 0, rejected: 0, truncated: None };
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = f(t, &y)?;
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &[k1.clone()], &[1.0]))?;
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &[k2.clone()], &[1.0]))?;
        let k4 = f(t + h, &axpy(&y, h, &[k3.clone()], &[1.0]))?;
        y = axpy(&y, h / 6.0, &[k1, k2, k3, k4], &[1.0, 2.0, 2.0, 1.0]);
        traj.t.push(t + h);
        traj.states.push(y.clone());
        traj.accepted += 1;
    }
    Ok(traj)
}
