//! Command implementations behind the `falg` binary. Each command returns a
//! [`Report`]; the binary only parses flags and writes files.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bundle::AnchoredBundle;
use crate::connection::{
    connection_at, horizontal_compatibility, nonlinear_connection, spray, torsion_residual, NonlinearMethod,
};
use crate::curvature::{curvature_at, flag_from, CURVATURE_STEP};
use crate::domain::{Domain, FiberPoint};
use crate::dynamics::{
    biextremal_residual, covector_for, flow_equivalence, geodesic, geodesic_rk4, hamiltonian_flow, legendre,
    legendre_inverse, BiextremalSample, ExtremalClass,
};
use crate::error::{Error, Result};
use crate::exprjet::{fd_check, ActiveSet};
use crate::finsler::{cartan_contraction, energy_identity, homogeneity_report, FinslerData};
use crate::leaf::{
    bracket_independence_spray, leaf_bracket_independence, leaf_connection_compare, leaf_flag_consistency,
    leaf_geodesic_compare, LeafModel,
};
use crate::linalg::{max_abs, max_abs_diff, norm};
use crate::model::Model;

pub const DETERMINISM: &str = "no random number generator; sample points from fixed Halton sequences";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Record {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Record {
        Record {
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtMost,
            pass: value <= tolerance,
            note: None,
        }
    }

    /// Negative controls: the quantity must move by at least `tolerance`.
    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Record {
        Record {
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtLeast,
            pass: value >= tolerance,
            note: None,
        }
    }

    pub fn failed(name: &str, tolerance: f64, err: &Error) -> Record {
        Record {
            name: name.into(),
            value: f64::INFINITY,
            tolerance,
            comparison: Comparison::AtMost,
            pass: false,
            note: Some(err.to_string()),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Record {
        self.note = Some(note.into());
        self
    }

    fn retolerate(&mut self, tol: f64) {
        if self.comparison == Comparison::AtMost {
            self.tolerance = tol;
            self.pass = self.value <= tol;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub model: String,
    pub version: &'static str,
    pub determinism: &'static str,
    pub records: Vec<Record>,
    pub payload: Value,
    #[serde(skip)]
    pub csv: Option<String>,
}

impl Report {
    fn new(command: &str, model: &Model) -> Report {
        Report {
            command: command.into(),
            model: model.name().into(),
            version: env!("CARGO_PKG_VERSION"),
            determinism: DETERMINISM,
            records: Vec::new(),
            payload: Value::Null,
            csv: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} {}\n", self.command, self.model);
        for r in &self.records {
            let op = match r.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            let _ = write!(out, "{} {:<34} {:.3e} {op} {:.1e}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.value, r.tolerance);
            if let Some(n) = &r.note {
                let _ = write!(out, "  ({n})");
            }
            out.push('\n');
        }
        let failed = self.records.iter().filter(|r| !r.pass).count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.records.len());
        out
    }

    fn push(&mut self, r: Record) {
        self.records.push(r);
    }
}

/// Per-command inputs; `None` falls back to the model's probe data and the
/// documented defaults.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub points: Option<usize>,
    /// Replaces the tolerance of every upper-bound record.
    pub tol: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub rtol: Option<f64>,
    pub point: Option<Vec<f64>>,
    pub flag: Option<(Vec<f64>, Vec<f64>)>,
    pub velocity: Option<Vec<f64>>,
}

fn finish(mut report: Report, opts: &Options) -> Report {
    if let Some(t) = opts.tol {
        for r in &mut report.records {
            r.retolerate(t);
        }
    }
    report
}

/// Max over per-point values; any error fails the record and names the point.
fn aggregate(name: &str, tol: f64, vals: &[Result<f64>]) -> Record {
    let mut worst: f64 = 0.0;
    for (i, v) in vals.iter().enumerate() {
        match v {
            Ok(v) => worst = worst.max(*v),
            Err(e) => return Record::failed(name, tol, e).with_note(format!("point {i}: {e}")),
        }
    }
    Record::at_most(name, worst, tol).with_note(format!("max over {} points", vals.len()))
}

fn expect_len(what: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {len}", v.len())));
    }
    Ok(())
}

fn scaled(v: &[f64], l: f64) -> Vec<f64> {
    v.iter().map(|a| a * l).collect()
}

/// Scalings `lambda` that keep `lambda y` clear of the excluded cone.
fn admissible(fd: &FinslerData, y: &[f64], lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().cloned().filter(|l| norm(y) * l >= 2.0 * fd.domain.y_min).collect()
}

pub fn cmd_check(model: &Model, opts: &Options) -> Result<Report> {
    let mut rep = Report::new("check", model);
    let pts = model.fd.domain.sample(opts.points.unwrap_or(100), 0);
    let (b, fd) = (&model.bundle, &model.fd);
    let homog = fd.is_homogeneous();
    let active = ActiveSet::base_and_fiber(model.n(), model.k());
    struct Row {
        prelie: Result<f64>,
        pivot: Result<f64>,
        contraction: Result<f64>,
        identity: Result<f64>,
        hf: Result<f64>,
        hg: Result<f64>,
        ha: Result<f64>,
        fd: Result<f64>,
        range: Option<Result<f64>>,
    }
    let rows: Vec<Row> = pts
        .par_iter()
        .map(|p| {
            let m = fd.metric_at(&p.x, &p.y);
            let h = admissible(fd, &p.y, &[0.5, 2.0, 7.0])
                .iter()
                .map(|l| homogeneity_report(fd, &p.x, &p.y, *l))
                .collect::<Result<Vec<_>>>();
            let hmax = |f: fn(&crate::finsler::HomogeneityReport) -> f64| -> Result<f64> {
                Ok(h.as_ref().map_err(clone_err)?.iter().map(f).fold(0.0, f64::max))
            };
            Row {
                prelie: b.prelie_residual(&p.x).map(|r| r.max_abs),
                pivot: m.as_ref().map(|m| m.min_pivot).map_err(clone_err),
                contraction: m.as_ref().map(|m| cartan_contraction(m, &p.y)).map_err(clone_err),
                identity: m.as_ref().map(|m| energy_identity(m, &p.y)).map_err(clone_err),
                hf: hmax(|r| r.f),
                hg: hmax(|r| r.g),
                ha: hmax(|r| r.cartan),
                fd: fd_check(&model.metric, &p.x, &p.y, &active, 2).map(|r| r.max()),
                range: model.theta.as_ref().map(|t| b.range_violation(t, &p.x).map(|r| r.0)),
            }
        })
        .collect();
    let col = |f: fn(&Row) -> &Result<f64>| rows.iter().map(|r| clone_res(f(r))).collect::<Vec<_>>();
    rep.push(aggregate("prelie_residual", 1e-10, &col(|r| &r.prelie)));
    let pivots = col(|r| &r.pivot);
    let mut conv = match pivots.iter().find_map(|p| p.as_ref().err()) {
        Some(e) => Record::failed("convexity_min_pivot", 0.0, e),
        None => {
            let m = pivots.iter().map(|p| *p.as_ref().unwrap()).fold(f64::INFINITY, f64::min);
            Record::at_least("convexity_min_pivot", m, f64::MIN_POSITIVE)
        }
    };
    conv.note = Some(format!("smallest Cholesky pivot of g over {} points", pts.len()));
    rep.push(conv);
    if homog {
        rep.push(aggregate("cartan_contraction", 1e-10, &col(|r| &r.contraction)));
        rep.push(aggregate("energy_identity", 1e-10, &col(|r| &r.identity)));
        rep.push(aggregate("homogeneity_f", 1e-10, &col(|r| &r.hf)));
        rep.push(aggregate("homogeneity_g", 1e-10, &col(|r| &r.hg)));
        rep.push(aggregate("homogeneity_cartan", 1e-10, &col(|r| &r.ha)));
    }
    rep.push(aggregate("fd_check_metric", 1e-7, &col(|r| &r.fd)));
    if model.theta.is_some() {
        let v: Vec<Result<f64>> = rows.iter().map(|r| clone_res(r.range.as_ref().unwrap())).collect();
        rep.push(aggregate("perturbation_range", 1e-10, &v));
    }
    let p = model.probe();
    let probe_metric = fd.metric_at(&p.x, &p.y)?;
    rep.payload = json!({ "points": pts.len(), "probe": p, "metric_at_probe": probe_metric });
    Ok(finish(rep, opts))
}

fn clone_err(e: &Error) -> Error {
    // errors are not Clone (io/json sources); the message is what reports need
    Error::Spec(e.to_string())
}

fn clone_res(r: &Result<f64>) -> Result<f64> {
    r.as_ref().map(|v| *v).map_err(clone_err)
}

pub fn cmd_connection(model: &Model, opts: &Options) -> Result<Report> {
    let mut rep = Report::new("connection", model);
    let pts = model.fd.domain.sample(opts.points.unwrap_or(100), 0);
    let (b, fd) = (&model.bundle, &model.fd);
    let homog = fd.is_homogeneous();
    struct Row {
        torsion: Result<f64>,
        compat: Result<f64>,
        dual: Result<f64>,
        nfd: Result<f64>,
        spray2: Result<f64>,
        n1: Result<f64>,
        g0: Result<f64>,
    }
    let rows: Vec<Row> = pts
        .par_iter()
        .map(|p| {
            let cd = connection_at(b, fd, &p.x, &p.y);
            let cd = match cd {
                Ok(c) => c,
                Err(e) => {
                    let m = e.to_string();
                    let err = || Err(Error::Spec(m.clone()));
                    return Row {
                        torsion: err(),
                        compat: err(),
                        dual: err(),
                        nfd: err(),
                        spray2: err(),
                        n1: err(),
                        g0: err(),
                    };
                }
            };
            let torsion = b.structure_at(&p.x).map(|c| torsion_residual(&cd, &c));
            let compat = horizontal_compatibility(b, fd, &cd);
            let nfd = nonlinear_connection(b, fd, &p.x, &p.y, NonlinearMethod::CentralDifference { h: 1e-5 })
                .map(|n| max_abs_diff(n.as_slice(), cd.nonlinear.as_slice()));
            let spray2 = (|| {
                let s3 = spray(b, fd, &p.x, &scaled(&p.y, 3.0))?;
                let target = &cd.spray * 9.0;
                Ok(max_abs_diff(s3.as_slice(), target.as_slice()) / max_abs(target.as_slice()).max(1.0))
            })();
            let n1 = (|| {
                let n2 = nonlinear_connection(b, fd, &p.x, &scaled(&p.y, 2.0), NonlinearMethod::Exact)?;
                Ok(max_abs_diff(n2.as_slice(), (&cd.nonlinear * 2.0).as_slice()))
            })();
            let g0 = (|| {
                let mut w: f64 = 0.0;
                for l in admissible(fd, &p.y, &[0.5, 2.0]) {
                    let g = connection_at(b, fd, &p.x, &scaled(&p.y, l))?.gamma;
                    w = w.max(g.max_abs_diff(&cd.gamma));
                }
                Ok(w)
            })();
            Row { torsion, compat, dual: Ok(cd.dual_assembly_deviation), nfd, spray2, n1, g0 }
        })
        .collect();
    let col = |f: fn(&Row) -> &Result<f64>| rows.iter().map(|r| clone_res(f(r))).collect::<Vec<_>>();
    rep.push(aggregate("torsion_identity", 1e-8, &col(|r| &r.torsion)));
    rep.push(aggregate("horizontal_compatibility", 1e-6, &col(|r| &r.compat)));
    rep.push(aggregate("dual_assembly", 1e-6, &col(|r| &r.dual)));
    rep.push(aggregate("nonlinear_exact_vs_fd", 1e-6, &col(|r| &r.nfd)));
    if homog {
        rep.push(aggregate("spray_homogeneity_deg2", 1e-9, &col(|r| &r.spray2)));
        rep.push(aggregate("nonlinear_homogeneity_deg1", 1e-6, &col(|r| &r.n1)));
        rep.push(aggregate("gamma_homogeneity_deg0", 1e-6, &col(|r| &r.g0)));
    }
    let p = model.probe();
    rep.payload = json!({ "points": pts.len(), "at_probe": connection_at(b, fd, &p.x, &p.y)? });
    Ok(finish(rep, opts))
}

fn trajectory_csv(n: usize, k: usize, dual: bool, energy_name: &str, t: &[f64], states: &[Vec<f64>], e: &[f64]) -> String {
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    let (prefix, m) = if dual { ("xi", n) } else { ("y", k) };
    for a in 1..=m {
        let _ = write!(out, ",{prefix}{a}");
    }
    let _ = writeln!(out, ",{energy_name}");
    for ((ti, s), ei) in t.iter().zip(states).zip(e) {
        let _ = write!(out, "{ti:?}");
        for v in s {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{ei:?}");
    }
    out
}

fn initial(model: &Model, opts: &Options) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.probe();
    let x0 = opts.x0.clone().unwrap_or(p.x);
    let y0 = opts.y0.clone().unwrap_or(p.y);
    expect_len("--x0", &x0, model.n())?;
    expect_len("--y0", &y0, model.k())?;
    model.fd.check_point(&x0, &y0)?;
    Ok((x0, y0))
}

pub fn cmd_geodesic(model: &Model, opts: &Options) -> Result<Report> {
    let mut rep = Report::new("geodesic", model);
    let (b, fd) = (&model.bundle, &model.fd);
    let (x0, y0) = initial(model, opts)?;
    let t_end = opts.t_end.unwrap_or(1.0);
    let rtol = opts.rtol.unwrap_or(1e-9);
    if !(t_end > 0.0) || !(rtol > 0.0) {
        return Err(Error::Spec("time and rtol must be positive".into()));
    }
    let force = model.force.as_deref();
    let run = geodesic(b, fd, force, &x0, &y0, t_end, rtol)?;
    let n = model.n();
    let completed = run.trajectory.truncated.is_none();
    let mut rec = Record::at_most("completed", if completed { 0.0 } else { 1.0 }, 0.0);
    if let Some(m) = &run.trajectory.truncated {
        rec = rec.with_note(m.clone());
    }
    rep.push(rec);
    let end = run.trajectory.last()[..n].to_vec();
    if force.is_none() {
        rep.push(Record::at_most("energy_drift", run.relative_drift, 100.0 * rtol).with_note("relative, max over the run"));
    }
    if completed {
        let half = geodesic(b, fd, force, &x0, &y0, t_end, 0.5 * rtol)?;
        rep.push(Record::at_most("rtol_halving", max_abs_diff(&end, &half.trajectory.last()[..n]), 10.0 * rtol));
        if force.is_none() {
            let rk = geodesic_rk4(b, fd, &x0, &y0, t_end, 2000)?;
            rep.push(Record::at_most("rk4_cross_check", max_abs_diff(&end, &rk.trajectory.last()[..n]), 1e-6));
            if fd.is_homogeneous() {
                let re = geodesic(b, fd, None, &x0, &scaled(&y0, 2.0), 0.5 * t_end, rtol)?;
                rep.push(Record::at_most("reparametrization", max_abs_diff(&end, &re.trajectory.last()[..n]), 1e-6));
            }
        }
        let rho = b.anchor_at(&x0)?;
        let frozen: Vec<usize> = (0..n).filter(|i| (0..model.k()).all(|a| rho[(*i, a)] == 0.0)).collect();
        if !frozen.is_empty() {
            let drift = run
                .trajectory
                .states
                .iter()
                .flat_map(|s| frozen.iter().map(|i| (s[*i] - x0[*i]).abs()).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            rep.push(Record::at_most("leaf_confinement", drift, 1e-12).with_note(format!("coordinates {frozen:?} (0-based)")));
        }
    }
    let ename = if fd.is_homogeneous() { "F" } else { "E" };
    rep.csv = Some(trajectory_csv(n, model.k(), false, ename, &run.trajectory.t, &run.trajectory.states, &run.energy));
    rep.payload = json!({
        "x0": x0, "y0": y0, "t_end": t_end, "rtol": rtol, "forced": force.is_some(),
        "end": run.trajectory.last(), "end_time": run.trajectory.end_time(),
        "accepted": run.trajectory.accepted, "rejected": run.trajectory.rejected,
        "relative_energy_drift": run.relative_drift,
    });
    Ok(finish(rep, opts))
}

/// Derivative of the Hamiltonian flow at `s` from short forward runs,
/// Richardson-extrapolated to third order.
fn flow_derivative(b: &AnchoredBundle, fd: &FinslerData, s: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = b.n;
    let quotient = |d: f64| -> Result<Vec<f64>> {
        let run = hamiltonian_flow(b, fd, &s[..n], &s[n..], y, d, 1e-14)?;
        Ok(run.trajectory.last().iter().zip(s).map(|(e, a)| (e - a) / d).collect())
    };
    let d = 4e-3;
    let (q1, q2, q3) = (quotient(d)?, quotient(d / 2.0)?, quotient(d / 4.0)?);
    Ok((0..s.len())
        .map(|i| {
            let e1 = 2.0 * q2[i] - q1[i];
            let e2 = 2.0 * q3[i] - q2[i];
            (4.0 * e2 - e1) / 3.0
        })
        .collect())
}

pub fn cmd_hamiltonian(model: &Model, opts: &Options) -> Result<Report> {
    let mut rep = Report::new("hamiltonian", model);
    let (b, fd) = (&model.bundle, &model.fd);
    let (x0, y0) = initial(model, opts)?;
    let t_end = opts.t_end.unwrap_or(1.0);
    let rtol = opts.rtol.unwrap_or(1e-10);
    let n = model.n();
    let eta = legendre(fd, &x0, &y0)?;
    let (xi0, lsq) = covector_for(b, &x0, &eta)?;
    let cmp = flow_equivalence(b, fd, &x0, &xi0, &y0, t_end, rtol);
    match &cmp {
        Ok(c) => {
            rep.push(Record::at_most("flow_equivalence", c.deviation, 1e-6));
            rep.push(Record::at_most("constraint_drift", c.constraint_drift, 1e-5));
        }
        Err(e) => rep.push(Record::failed("flow_equivalence", 1e-6, e)),
    }
    let pts = fd.domain.sample(opts.points.unwrap_or(100), 0);
    let round: Vec<Result<f64>> = pts
        .par_iter()
        .map(|p| {
            let eta = legendre(fd, &p.x, &p.y)?;
            let guess: Vec<f64> = p.y.iter().map(|v| 0.8 * v + 0.05).collect();
            let inv = legendre_inverse(fd, &p.x, &eta, &guess)?;
            Ok(max_abs_diff(&inv.y, &p.y))
        })
        .collect();
    rep.push(aggregate("legendre_roundtrip", 1e-9, &round));
    let mut bi = json!(null);
    if let Ok(c) = &cmp {
        let ham = hamiltonian_flow(b, fd, &x0, &xi0, &c.y0, t_end, rtol)?;
        let m = ham.trajectory.states.len();
        let picks = [0, m / 2, m.saturating_sub(2)];
        let mut worst: f64 = 0.0;
        let mut classes = Vec::new();
        for &i in &picks {
            let s = &ham.trajectory.states[i];
            let y = &ham.velocities[i];
            let d = flow_derivative(b, fd, s, y)?;
            let sample = BiextremalSample {
                x: s[..n].to_vec(),
                y: y.clone(),
                xi: s[n..].to_vec(),
                nu: 1.0,
                x_dot: d[..n].to_vec(),
                xi_dot: d[n..].to_vec(),
            };
            let r = biextremal_residual(b, fd, &sample, 1e-8)?;
            worst = worst.max(r.state).max(r.costate).max(r.constraint);
            classes.push(r.class);
        }
        rep.push(Record::at_most("biextremal_residual", worst, 1e-6).with_note("three samples along the dual flow"));
        let normal = classes.iter().all(|c| *c == ExtremalClass::Normal);
        rep.push(Record::at_most("biextremal_normal", if normal { 0.0 } else { 1.0 }, 0.0));
        let e0 = ham.energy[0];
        let drift = ham.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
        bi = json!({ "classes": classes, "energy_drift": drift });
        rep.csv = Some(trajectory_csv(
            n,
            model.k(),
            true,
            if fd.is_homogeneous() { "F" } else { "E" },
            &ham.trajectory.t,
            &ham.trajectory.states,
            &ham.energy,
        ));
    }
    rep.payload = json!({
        "x0": x0, "y0": y0, "xi0": xi0, "covector_lsq_residual": lsq,
        "t_end": t_end, "rtol": rtol, "comparison": cmp.ok(), "biextremal": bi,
    });
    Ok(finish(rep, opts))
}

fn flag_input(model: &Model, opts: &Options) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = model.probe();
    let x = opts.point.clone().unwrap_or(p.x);
    let (u, v) = opts.flag.clone().unwrap_or((p.y, p.v));
    expect_len("--point", &x, model.n())?;
    expect_len("flag u", &u, model.k())?;
    expect_len("flag v", &v, model.k())?;
    Ok((x, u, v))
}

pub fn cmd_curvature(model: &Model, opts: &Options) -> Result<Report> {
    let mut rep = Report::new("curvature", model);
    let (b, fd) = (&model.bundle, &model.fd);
    let (x, u, v) = flag_input(model, opts)?;
    let cd = curvature_at(b, fd, &x, &u, CURVATURE_STEP)?;
    let g = fd.jet(&x, &u, 2)?.dyy;
    let fc = flag_from(&cd, &g, &u, &v)?;
    rep.push(Record::at_most("r_antisymmetry", cd.antisymmetry_residual(), 1e-5));
    rep.push(Record::at_most("richardson_consistency", cd.richardson_residual, 1e-5));
    if let Some(k) = model.spec.expected.as_ref().and_then(|e| e.flag_curvature) {
        rep.push(Record::at_most("flag_curvature_expected", (fc.k - k).abs(), 1e-3).with_note(format!("expected {k}")));
    }
    let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| -1.7 * a + 0.4 * b).collect();
    let kw = flag_from(&cd, &g, &u, &w)?.k;
    rep.push(Record::at_most("flag_basis_invariance", (kw - fc.k).abs(), 1e-8));
    if fd.is_homogeneous() {
        let u2 = scaled(&u, 2.0);
        let c2 = curvature_at(b, fd, &x, &u2, CURVATURE_STEP)?;
        let g2 = fd.jet(&x, &u2, 2)?.dyy;
        let k2 = flag_from(&c2, &g2, &u2, &v)?.k;
        rep.push(Record::at_most("flag_homogeneity_deg0", (k2 - fc.k).abs(), 1e-5));
        let m = fd.metric_at(&x, &u)?;
        if m.cartan.max_abs() < 1e-10 {
            rep.push(Record::at_most("p_vanishes_riemannian", cd.p.max_abs(), 1e-5));
        }
    }
    rep.payload = json!({ "flag": { "u": u, "v": v }, "flag_curvature": fc, "curvature": cd });
    Ok(finish(rep, opts))
}

/// Quasi-random leaf points `(x_bar, x_dot)` in the middle half of the leaf box.
pub fn leaf_points(leaf: &LeafModel, count: usize) -> Vec<FiberPoint> {
    let q = leaf.q;
    let d = &leaf.fd.domain;
    let shrink = |b: &[[f64; 2]]| -> Vec<[f64; 2]> {
        b[..q].iter().map(|[lo, hi]| {
            let (c, r) = (0.5 * (lo + hi), 0.25 * (hi - lo));
            [c - r, c + r]
        }).collect()
    };
    let dom = Domain { x_box: shrink(&d.x_box), y_box: shrink(&d.y_box), y_min: (10.0 * d.y_min).max(0.05) };
    dom.sample(count, 0)
}

pub fn cmd_leaf(model: &Model, opts: &Options) -> Result<Report> {
    let leaf = model
        .leaf
        .as_ref()
        .ok_or_else(|| Error::Leaf(format!("model `{}` has no leaf section", model.name())))?;
    let mut rep = Report::new("leaf", model);
    let q = leaf.q;
    let p = model.probe();
    let xb = opts.point.clone().unwrap_or_else(|| p.x[..q].to_vec());
    let xd = opts.velocity.clone().unwrap_or_else(|| p.y[..q].to_vec());
    let vb = p.v[..q].to_vec();
    expect_len("--point", &xb, q)?;
    expect_len("--velocity", &xd, q)?;
    let pts = leaf_points(leaf, opts.points.unwrap_or(25));
    struct Row {
        stat: Result<f64>,
        homog: Result<f64>,
        gamma: Result<f64>,
        nl: Result<f64>,
    }
    let homog = model.fd.is_homogeneous();
    let rows: Vec<Row> = pts
        .par_iter()
        .map(|pt| {
            let ip = leaf.induced_lagrangian(&pt.x, &pt.y);
            let stat = (|| {
                let ip = ip.as_ref().map_err(clone_err)?;
                let j = leaf.fd.jet(&leaf.full_x(&pt.x)?, &ip.y_star, 1)?;
                Ok(max_abs(&j.dy.as_slice()[q..]))
            })();
            let homog = (|| {
                let ip = ip.as_ref().map_err(clone_err)?;
                let v2 = leaf.induced_lagrangian(&pt.x, &scaled(&pt.y, 2.0))?.value;
                Ok((v2 - 4.0 * ip.value).abs() / (4.0 * ip.value.abs()).max(1.0))
            })();
            let cmp = leaf_connection_compare(leaf, &pt.x, &pt.y);
            Row {
                stat,
                homog,
                gamma: cmp.as_ref().map(|c| c.gamma_deviation).map_err(clone_err),
                nl: cmp.as_ref().map(|c| c.nonlinear_deviation).map_err(clone_err),
            }
        })
        .collect();
    let col = |f: fn(&Row) -> &Result<f64>| rows.iter().map(|r| clone_res(f(r))).collect::<Vec<_>>();
    rep.push(aggregate("stationarity_residual", 1e-10, &col(|r| &r.stat)));
    if homog {
        rep.push(aggregate("induced_homogeneity_deg2", 1e-8, &col(|r| &r.homog)));
    }
    rep.push(aggregate("leaf_gamma", 1e-5, &col(|r| &r.gamma)));
    rep.push(aggregate("leaf_nonlinear", 1e-5, &col(|r| &r.nl)));
    let geo = leaf_geodesic_compare(leaf, &xb, &xd, 1.0, 1e-10);
    match &geo {
        Ok(g) => {
            rep.push(Record::at_most("leaf_geodesic", g.deviation, 1e-6));
            rep.push(Record::at_most("transverse_drift", g.transverse_drift, 1e-12));
        }
        Err(e) => rep.push(Record::failed("leaf_geodesic", 1e-6, e)),
    }
    let flag = leaf_flag_consistency(leaf, &xb, &xd, &vb);
    let flag_scaled = leaf_flag_consistency(leaf, &xb, &xd, &scaled(&vb, 3.0));
    match (&flag, &flag_scaled) {
        (Ok(f), Ok(fs)) => {
            rep.push(Record::at_most("leaf_flag_curvature", f.deviation, 1e-4));
            rep.push(Record::at_most("leaf_flag_rescale", (fs.k_full - f.k_full).abs(), 1e-8));
        }
        (Err(e), _) | (_, Err(e)) => rep.push(Record::failed("leaf_flag_curvature", 1e-4, e)),
    }
    let mut bracket = Value::Null;
    if let (Some(pb), Some(_)) = (&model.perturbed, &model.theta) {
        let pl = LeafModel { bundle: pb.clone(), fd: leaf.fd.clone(), q, locus: leaf.locus.clone() };
        let bi = leaf_bracket_independence(leaf, &pl, &xb, &xd)?;
        rep.push(Record::at_most("bracket_restricted_gamma", bi.restricted_gamma, 1e-8));
        rep.push(Record::at_most("bracket_spray_on_constraint", bi.spray_on_constraint, 1e-9));
        rep.push(
            Record::at_least("bracket_unrestricted_gamma_shift", bi.unrestricted_gamma, 1e-3)
                .with_note("negative control"),
        );
        let on_g: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = pts
            .iter()
            .map(|pt| {
                let ip = leaf.induced_lagrangian(&pt.x, &pt.y)?;
                let x = leaf.full_x(&pt.x)?;
                let dl = legendre(&leaf.fd, &x, &ip.y_star)?;
                let mut xi = vec![0.0; model.n()];
                xi[..q].copy_from_slice(&dl[..q]);
                Ok((x, ip.y_star, xi))
            })
            .collect::<Result<_>>()?;
        let sd = bracket_independence_spray(&model.bundle, pb, &model.fd, &on_g)?;
        rep.push(Record::at_most("bracket_spray_constraint_set", sd, 1e-9).with_note(format!("{} points", on_g.len())));
        let ip = leaf.induced_lagrangian(&xb, &xd)?;
        let x = leaf.full_x(&xb)?;
        let g1 = geodesic(&model.bundle, &model.fd, None, &x, &ip.y_star, 1.0, 1e-10)?;
        let g2 = geodesic(pb, &model.fd, None, &x, &ip.y_star, 1.0, 1e-10)?;
        let n = model.n();
        rep.push(Record::at_most(
            "bracket_geodesic",
            max_abs_diff(&g1.trajectory.last()[..n], &g2.trajectory.last()[..n]),
            1e-6,
        ));
        bracket = json!(bi);
    }
    rep.payload = json!({
        "q": q, "locus": leaf.locus, "point": xb, "velocity": xd, "points": pts.len(),
        "connection_at_point": leaf_connection_compare(leaf, &xb, &xd).ok(),
        "geodesic": geo.ok(), "flag": flag.ok(), "bracket": bracket,
    });
    Ok(finish(rep, opts))
}

pub fn run(command: &str, model: &Model, opts: &Options) -> Result<Report> {
    match command {
        "check" => cmd_check(model, opts),
        "connection" => cmd_connection(model, opts),
        "geodesic" => cmd_geodesic(model, opts),
        "hamiltonian" => cmd_hamiltonian(model, opts),
        "curvature" => cmd_curvature(model, opts),
        "leaf" => cmd_leaf(model, opts),
        other => Err(Error::Spec(format!("unknown command `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;

    #[test]
    fn nan_never_passes() {
        assert!(!Record::at_most("x", f64::NAN, 1.0).pass);
        assert!(!Record::at_least("x", f64::NAN, 1.0).pass);
    }

    #[test]
    fn tol_override_leaves_negative_controls_alone() {
        let m = gallery::load("euclidean").unwrap();
        let mut rep = Report::new("check", &m);
        rep.push(Record::at_most("small", 1e-9, 1e-6));
        rep.push(Record::at_least("control", 0.5, 1e-3));
        let rep = finish(rep, &Options { tol: Some(1e-12), ..Options::default() });
        assert!(!rep.records[0].pass && rep.records[0].tolerance == 1e-12);
        assert!(rep.records[1].pass && rep.records[1].tolerance == 1e-3);
        assert_eq!(rep.exit_code(), 1);
        let s = rep.summary();
        assert!(s.lines().nth(1).unwrap().starts_with("FAIL small"));
        assert!(s.ends_with("2 checks, 1 failed\n"));
    }

    #[test]
    fn leaf_points_stay_inside_the_middle_half() {
        let m = gallery::load("product-foliation").unwrap();
        let pts = leaf_points(m.leaf.as_ref().unwrap(), 25);
        assert_eq!(pts.len(), 25);
        for p in pts {
            assert!(p.x.iter().chain(&p.y).all(|v| v.abs() <= 1.0), "{p:?}");
            assert!(crate::linalg::norm(&p.y) >= 0.05);
        }
    }

    #[test]
    fn unknown_command_is_an_error() {
        let m = gallery::load("euclidean").unwrap();
        assert!(run("teleport", &m, &Options::default()).is_err());
    }
}
