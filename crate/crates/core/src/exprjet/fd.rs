use serde::Serialize;

use super::ast::{Expr, Var};
use super::eval::{eval_jet, eval_value, ActiveSet};
use crate::error::Result;

/// Step for first partials.
pub const H1: f64 = 1e-5;
/// Largest base steps for the second and third partials.
pub const H2: f64 = 2e-2;
pub const H3: f64 = 5e-2;
const LADDER: usize = 7;

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    /// Largest `|fd - jet| / (1 + |jet|)` per derivative order (index 0 is
    /// first order).
    pub max_deviation: Vec<f64>,
    pub worst: Option<Vec<usize>>,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.max_deviation.iter().cloned().fold(0.0, f64::max)
    }
}

fn shifted(
    e: &Expr,
    x: &[f64],
    y: &[f64],
    vars: &[Var],
    offsets: &[f64],
) -> Result<f64> {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    for (v, d) in vars.iter().zip(offsets) {
        match v {
            Var::X(i) => xs[*i] += d,
            Var::Y(i) => ys[*i] += d,
        }
    }
    eval_value(e, &xs, &ys)
}

/// Nested central difference over the listed variables (repeats allowed).
fn nested_central(e: &Expr, x: &[f64], y: &[f64], vars: &[Var], h: f64) -> Result<f64> {
    let r = vars.len();
    let mut acc = 0.0;
    for mask in 0..(1u32 << r) {
        let mut sign = 1.0;
        let offs: Vec<f64> = (0..r)
            .map(|b| {
                if mask & (1 << b) != 0 {
                    sign = -sign;
                    -h
                } else {
                    h
                }
            })
            .collect();
        acc += sign * shifted(e, x, y, vars, &offs)?;
    }
    Ok(acc / (2.0 * h).powi(r as i32))
}

/// Two Richardson levels over steps `h`, `h/2`, `h/4` (error O(h^6)).
fn richardson(e: &Expr, x: &[f64], y: &[f64], vars: &[Var], h: f64) -> Result<f64> {
    let a = nested_central(e, x, y, vars, h)?;
    let b = nested_central(e, x, y, vars, h / 2.0)?;
    let c = nested_central(e, x, y, vars, h / 4.0)?;
    let ab = (4.0 * b - a) / 3.0;
    let bc = (4.0 * c - b) / 3.0;
    Ok((16.0 * bc - ab) / 15.0)
}

/// Richardson estimates on a halving ladder of base steps starting at `h`;
/// returns the estimate where consecutive rungs agree best. Rungs whose
/// stencil leaves the expression's domain are skipped.
fn ladder(e: &Expr, x: &[f64], y: &[f64], vars: &[Var], h: f64) -> Result<f64> {
    let mut rungs: Vec<Option<f64>> = Vec::with_capacity(LADDER);
    let mut last_err = None;
    for j in 0..LADDER {
        match richardson(e, x, y, vars, h / f64::powi(2.0, j as i32)) {
            Ok(v) => rungs.push(Some(v)),
            Err(err) => {
                rungs.push(None);
                last_err = Some(err);
            }
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for w in rungs.windows(2) {
        if let [Some(a), Some(b)] = w {
            let d = (a - b).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, *b));
            }
        }
    }
    match (best, last_err) {
        (Some((_, v)), _) => Ok(v),
        (None, Some(err)) => Err(err),
        (None, None) => unreachable!("ladder has at least two rungs"),
    }
}

/// Compare jet partials with finite differences of plain evaluations.
fn rel(fd: f64, jet: f64) -> f64 {
    (fd - jet).abs() / (1.0 + jet.abs())
}

pub fn fd_check(e: &Expr, x: &[f64], y: &[f64], active: &ActiveSet, order: u8) -> Result<FdReport> {
    let jet = eval_jet(e, x, y, active, order)?;
    let m = active.len();
    let vars = active.vars();
    let mut report = FdReport { max_deviation: vec![0.0; order as usize], worst: None };
    let mut worst_val = -1.0;
    let mut note = |r: &mut FdReport, idx: Vec<usize>, dev: f64| {
        let o = idx.len() - 1;
        r.max_deviation[o] = r.max_deviation[o].max(dev);
        if dev > worst_val {
            worst_val = dev;
            r.worst = Some(idx);
        }
    };
    if order >= 1 {
        for i in 0..m {
            let fd = richardson(e, x, y, &[vars[i]], H1)?;
            note(&mut report, vec![i], rel(fd, jet.d1[i]));
        }
    }
    if order >= 2 {
        for j in 0..m {
            for i in 0..=j {
                let fd = ladder(e, x, y, &[vars[i], vars[j]], H2)?;
                note(&mut report, vec![i, j], rel(fd, jet.d2(i, j)));
            }
        }
    }
    if order >= 3 {
        for k in 0..m {
            for j in 0..=k {
                for i in 0..=j {
                    let fd = ladder(e, x, y, &[vars[i], vars[j], vars[k]], H3)?;
                    note(&mut report, vec![i, j, k], rel(fd, jet.d3(i, j, k)));
                }
            }
        }
    }
    Ok(report)
}
