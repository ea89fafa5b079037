//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles here are computed independently of the code under test
//! (closed-form tensors, explicit Poisson matrices, brute-force minima).

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use falg::bundle::{AnchoredBundle, StructureFunctions};
use falg::cli::leaf_points;
use falg::connection::{connection_at, horizontal_compatibility, nonlinear_connection, spray, torsion_residual, NonlinearMethod};
use falg::curvature::{curvature_at, flag_curvature, CURVATURE_STEP};
use falg::domain::{halton, halton_points, Domain};
use falg::dynamics::{covector_for, flow_equivalence, geodesic, legendre};
use falg::exprjet::{eval_value, parse};
use falg::finsler::{homogeneity_report, FinslerData};
use falg::gallery;
use falg::leaf::{bracket_independence_spray, leaf_bracket_independence, leaf_connection_compare, leaf_geodesic_compare, LeafModel};
use falg::linalg::{max_abs_diff, Tensor3};
use falg::{Model, Result};

type Outcome = Result<(bool, String)>;

fn all_models() -> Vec<Model> {
    gallery::names().into_iter().map(|n| gallery::load(n).expect("gallery model loads")).collect()
}

fn c1_prelie() -> Outcome {
    let m = gallery::load("rotation-algebroid")?;
    let xs = m.fd.domain.sample_base(100, 0, 0.0);
    let mut worst: f64 = 0.0;
    for x in &xs {
        worst = worst.max(m.bundle.prelie_residual(x)?.max_abs);
    }
    let mut broken = m.spec.clone();
    broken.c[0].expr = "1".into();
    let b = Model::from_spec(broken)?;
    let mut least = f64::INFINITY;
    for x in &xs {
        least = least.min(b.bundle.prelie_residual(x)?.max_abs);
    }
    Ok((worst < 1e-12 && least > 0.5, format!("rotation max {worst:.2e} < 1e-12; broken bracket min {least:.3} > 0.5")))
}

/// Levi-Civita symbols `(c, a, b)` of `a_ij(x)` from its first derivatives
/// `da[l][(i, j)] = d a_ij / d x^l`.
fn levi_civita(a: &DMatrix<f64>, da: &[DMatrix<f64>]) -> Tensor3 {
    let k = a.nrows();
    let inv = a.clone().try_inverse().unwrap();
    let mut t = Tensor3::zeros(k, k, k);
    for c in 0..k {
        for p in 0..k {
            for q in 0..k {
                let mut v = 0.0;
                for l in 0..k {
                    v += 0.5 * inv[(c, l)] * (da[p][(l, q)] + da[q][(l, p)] - da[l][(p, q)]);
                }
                t.set(c, p, q, v);
            }
        }
    }
    t
}

fn c2_riemannian() -> Outcome {
    // a = [[1 + x1^2, x1 x2 / 2], [x1 x2 / 2, 2 + sin(x2)]]
    let f = parse("sqrt((1 + x1^2)*y1^2 + x1*x2*y1*y2 + (2 + sin(x2))*y2^2)")?;
    let dom = Domain { x_box: vec![[-1.0, 1.0]; 2], y_box: vec![[-2.0, 2.0]; 2], y_min: 1e-3 };
    let fd = FinslerData::finsler(&f, 2, 2, dom.clone());
    let b = AnchoredBundle::tangent(2);
    let mut cartan: f64 = 0.0;
    let mut gamma: f64 = 0.0;
    for p in dom.sample(100, 0) {
        let (x1, x2) = (p.x[0], p.x[1]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0 + x1 * x1, 0.5 * x1 * x2, 0.5 * x1 * x2, 2.0 + x2.sin()]);
        let d1 = DMatrix::from_row_slice(2, 2, &[2.0 * x1, 0.5 * x2, 0.5 * x2, 0.0]);
        let d2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.5 * x1, 0.5 * x1, x2.cos()]);
        let cd = connection_at(&b, &fd, &p.x, &p.y)?;
        cartan = cartan.max(cd.cartan.max_abs());
        gamma = gamma.max(cd.gamma.max_abs_diff(&levi_civita(&a, &[d1, d2])));
    }
    // conformal galleries: a = e^{2 phi} delta
    for (name, dphi) in [
        ("riemann-sphere", (|x: &[f64]| {
            let q = 1.0 + x[0] * x[0] + x[1] * x[1];
            [-2.0 * x[0] / q, -2.0 * x[1] / q]
        }) as fn(&[f64]) -> [f64; 2]),
        ("hyperbolic", |x: &[f64]| [0.0, -1.0 / x[1]]),
    ] {
        let m = gallery::load(name)?;
        for p in m.fd.domain.sample(100, 0) {
            let d = dphi(&p.x);
            let mut lc = Tensor3::zeros(2, 2, 2);
            for c in 0..2 {
                for a in 0..2 {
                    for bb in 0..2 {
                        let mut v = 0.0;
                        if c == a {
                            v += d[bb];
                        }
                        if c == bb {
                            v += d[a];
                        }
                        if a == bb {
                            v -= d[c];
                        }
                        lc.set(c, a, bb, v);
                    }
                }
            }
            let cd = connection_at(&m.bundle, &m.fd, &p.x, &p.y)?;
            cartan = cartan.max(cd.cartan.max_abs());
            gamma = gamma.max(cd.gamma.max_abs_diff(&lc));
        }
    }
    Ok((cartan < 1e-12 && gamma < 1e-8, format!("Cartan max {cartan:.2e} < 1e-12; Levi-Civita deviation {gamma:.2e} < 1e-8 (3 metrics x 100 points)")))
}

fn c3_c4_torsion_compat() -> Result<((bool, String), (bool, String))> {
    let mut tors: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut per = Vec::new();
    for m in all_models() {
        let mut tm: f64 = 0.0;
        for p in m.fd.domain.sample(100, 0) {
            let cd = connection_at(&m.bundle, &m.fd, &p.x, &p.y)?;
            tm = tm.max(torsion_residual(&cd, &m.bundle.structure_at(&p.x)?));
            comp = comp.max(horizontal_compatibility(&m.bundle, &m.fd, &cd)?);
        }
        tors = tors.max(tm);
        per.push(format!("{}={tm:.1e}", m.name()));
    }
    Ok((
        (tors < 1e-8, format!("max {tors:.2e} < 1e-8 over 7 galleries x 100 points [{}]", per.join(", "))),
        (comp < 1e-6, format!("max {comp:.2e} < 1e-6 over 7 galleries x 100 points")),
    ))
}

fn c5_homogeneity() -> Outcome {
    let mut exact: f64 = 0.0;
    let mut fd_class: f64 = 0.0;
    for m in all_models().into_iter().filter(|m| m.fd.is_homogeneous()) {
        let (b, fd) = (&m.bundle, &m.fd);
        for (i, p) in fd.domain.sample(20, 0).into_iter().enumerate() {
            if falg::linalg::norm(&p.y) < 0.1 {
                continue;
            }
            let base = connection_at(b, fd, &p.x, &p.y)?;
            let probe = m.probe();
            let v: Vec<f64> = probe.v.clone();
            let k0 = if i < 5 { Some(flag_curvature(b, fd, &p.x, &p.y, &v)) } else { None };
            for l in [0.5, 2.0] {
                let ly: Vec<f64> = p.y.iter().map(|t| t * l).collect();
                let h = homogeneity_report(fd, &p.x, &p.y, l)?;
                exact = exact.max(h.f).max(h.g).max(h.cartan);
                let s = spray(b, fd, &p.x, &ly)?;
                exact = exact.max(max_abs_diff(s.as_slice(), (&base.spray * (l * l)).as_slice()));
                let n = nonlinear_connection(b, fd, &p.x, &ly, NonlinearMethod::Exact)?;
                fd_class = fd_class.max(max_abs_diff(n.as_slice(), (&base.nonlinear * l).as_slice()));
                let g = connection_at(b, fd, &p.x, &ly)?.gamma;
                fd_class = fd_class.max(g.max_abs_diff(&base.gamma));
                if let Some(Ok(k0)) = &k0 {
                    if fd.domain.contains_x(&p.x, 2.0 * CURVATURE_STEP) {
                        let kl = flag_curvature(b, fd, &p.x, &ly, &v)?;
                        fd_class = fd_class.max((kl.k - k0.k).abs());
                    }
                }
            }
        }
    }
    Ok((exact < 1e-9 && fd_class < 1e-6, format!("F, g, Cartan, spray max {exact:.2e} < 1e-9; N, Gamma, K max {fd_class:.2e} < 1e-6")))
}

fn c6_energy() -> Outcome {
    let rtol = 1e-9;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for (name, x0, y0) in [("riemann-sphere", [0.4, 0.7], [0.6, -0.2]), ("randers", [0.2, -0.3], [0.5, 0.25])] {
        let m = gallery::load(name)?;
        let run = geodesic(&m.bundle, &m.fd, None, &x0, &y0, 2.0, rtol)?;
        if let Some(t) = &run.trajectory.truncated {
            return Ok((false, format!("{name} run truncated: {t}")));
        }
        worst = worst.max(run.relative_drift);
        notes.push(format!("{name}={:.2e}", run.relative_drift));
    }
    Ok((worst <= 100.0 * rtol, format!("relative F drift {} <= 1e-7 at rtol 1e-9, T = 2", notes.join(", "))))
}

fn c7_flow_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut per = Vec::new();
    for m in all_models() {
        let p = m.probe();
        let eta = legendre(&m.fd, &p.x, &p.y)?;
        let (xi, _) = covector_for(&m.bundle, &p.x, &eta)?;
        let c = flow_equivalence(&m.bundle, &m.fd, &p.x, &xi, &p.y, 1.0, 1e-10)?;
        worst = worst.max(c.deviation);
        per.push(format!("{}={:.1e}", m.name(), c.deviation));
    }
    Ok((worst < 1e-6, format!("max endpoint deviation {worst:.2e} < 1e-6 [{}]", per.join(", "))))
}

fn c8_curvature() -> Outcome {
    let e = gallery::load("euclidean")?;
    let p = e.probe();
    let cd = curvature_at(&e.bundle, &e.fd, &p.x, &p.y, CURVATURE_STEP)?;
    let kf = flag_curvature(&e.bundle, &e.fd, &p.x, &p.y, &p.v)?.k;
    let flat = cd.r.max_abs().max(cd.p.max_abs()).max(kf.abs());
    let mut sphere: f64 = 0.0;
    let mut hyper: f64 = 0.0;
    let mut pmax: f64 = 0.0;
    let flags = halton_points(4, 10, 0);
    for (name, target) in [("riemann-sphere", 1.0), ("hyperbolic", -1.0)] {
        let m = gallery::load(name)?;
        for (x, f) in m.fd.domain.sample_base(10, 0, 0.3).iter().zip(&flags) {
            let u = [2.0 * f[0] - 1.0, 2.0 * f[1] - 1.0 + 0.3];
            let v = [2.0 * f[2] - 1.0 - 0.5, 2.0 * f[3] - 1.0];
            let k = flag_curvature(&m.bundle, &m.fd, x, &u, &v)?.k;
            let d = (k - target).abs();
            if target > 0.0 {
                sphere = sphere.max(d);
            } else {
                hyper = hyper.max(d);
            }
            pmax = pmax.max(curvature_at(&m.bundle, &m.fd, x, &u, CURVATURE_STEP)?.p.max_abs());
        }
    }
    let pf = gallery::load("product-foliation")?;
    for x in pf.fd.domain.sample_base(5, 0, 0.3) {
        pmax = pmax.max(curvature_at(&pf.bundle, &pf.fd, &x, &[1.0, 0.5, -0.3, 0.2], CURVATURE_STEP)?.p.max_abs());
    }
    let pass = flat < 1e-8 && sphere <= 1e-3 && hyper <= 1e-3 && pmax < 1e-5;
    Ok((pass, format!("flat max(R, P, K) {flat:.1e} < 1e-8; |K - 1| sphere {sphere:.1e}; |K + 1| hyperbolic {hyper:.1e} (<= 1e-3, 10 flags each); Riemannian P max {pmax:.1e} < 1e-5")))
}

fn product_leaf() -> Result<(Model, Arc<LeafModel>)> {
    let m = gallery::load("product-foliation")?;
    let leaf = m.leaf.clone().expect("product-foliation has a leaf");
    Ok((m, leaf))
}

fn c9_leaf() -> Outcome {
    let (_, leaf) = product_leaf()?;
    // closed-form induced metric: Schur complement P - Q R^{-1} Q^T with
    // Q = diag(0.2, 0.1), R = diag(1 + 0.1 x3^2, 1) at the locus x3 = 0.2
    let r3 = 1.0 + 0.1 * 0.2 * 0.2;
    let fnx = format!("sqrt((1 + 0.2*x1^2 - {})*y1^2 + 0.2*x1*x2*y1*y2 + (1 + 0.1*x2^2 - 0.01)*y2^2)", 0.04 / r3);
    let dom = Domain { x_box: vec![[-2.0, 2.0]; 2], y_box: vec![[-2.0, 2.0]; 2], y_min: 1e-3 };
    let oracle = FinslerData::finsler(&parse(&fnx)?, 2, 2, dom);
    let tb = AnchoredBundle::tangent(2);
    let pts = leaf_points(&leaf, 25);
    let mut pipe: f64 = 0.0;
    let mut closed: f64 = 0.0;
    for p in &pts {
        let c = leaf_connection_compare(&leaf, &p.x, &p.y)?;
        pipe = pipe.max(c.gamma_deviation).max(c.nonlinear_deviation);
        let full = connection_at(&leaf.bundle, &leaf.fd, &leaf.full_x(&p.x)?, &c.y_star)?;
        let o = connection_at(&tb, &oracle, &p.x, &p.y)?;
        for a in 0..2 {
            for b in 0..2 {
                for g in 0..2 {
                    closed = closed.max((full.gamma.get(a, b, g) - o.gamma.get(a, b, g)).abs());
                }
                closed = closed.max((full.nonlinear[(a, b)] - o.nonlinear[(a, b)]).abs());
            }
        }
    }
    let g = leaf_geodesic_compare(&leaf, &[0.2, -0.3], &[1.0, 0.5], 1.0, 1e-10)?;
    let pass = pipe < 1e-5 && closed < 1e-5 && g.deviation < 1e-6;
    Ok((pass, format!("restricted Gamma/N vs leaf pipeline {pipe:.1e}, vs closed-form leaf metric {closed:.1e} (< 1e-5, 25 points); leaf geodesic {:.1e} < 1e-6", g.deviation)))
}

fn c10_bracket() -> Outcome {
    let (m, leaf) = product_leaf()?;
    let pb = m.perturbed.clone().expect("product-foliation has a perturbation");
    let pl = LeafModel { bundle: pb.clone(), fd: leaf.fd.clone(), q: leaf.q, locus: leaf.locus.clone() };
    let pts = leaf_points(&leaf, 25);
    let mut on_g = Vec::new();
    let mut restricted: f64 = 0.0;
    let mut shift: f64 = 0.0;
    let mut off: f64 = 0.0;
    for p in &pts {
        let ip = leaf.induced_lagrangian(&p.x, &p.y)?;
        let x = leaf.full_x(&p.x)?;
        let dl = legendre(&m.fd, &x, &ip.y_star)?;
        on_g.push((x, ip.y_star, vec![dl[0], dl[1], 0.0, 0.0]));
        let bi = leaf_bracket_independence(&leaf, &pl, &p.x, &p.y)?;
        restricted = restricted.max(bi.restricted_gamma);
        shift = shift.max(bi.unrestricted_gamma);
        off = off.max(bi.spray_off_constraint);
    }
    let s = bracket_independence_spray(&m.bundle, &pb, &m.fd, &on_g)?;
    let pass = s < 1e-9 && restricted < 1e-8 && shift > 1e-3 && off > 1e-3;
    Ok((pass, format!("spray on constraint set {s:.1e} < 1e-9; restricted Gamma {restricted:.1e} < 1e-8; controls: unrestricted Gamma shift {shift:.2}, off-set spray shift {off:.2} (> 1e-3)")))
}

fn c11_dual_field() -> Outcome {
    let m = gallery::load("rotation-algebroid")?;
    let (n, k) = (2, 3);
    let mut worst: f64 = 0.0;
    for s in 0..50u64 {
        let c = |j: u32| 2.0 * halton(s + 30, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43][j as usize]) - 1.0;
        // h = 1/2 eta^T A eta + (e + f x1 + g x2) . eta + p x1^2 + r x1 x2
        let a = DMatrix::from_row_slice(3, 3, &[c(0), c(1), c(2), c(1), c(3), c(4), c(2), c(4), c(5)]);
        let (e, f, g) = ([c(6), c(7), c(8)], [c(9), c(10), c(11)], [c(12), c(13), c(6) * c(7)]);
        let (pc, rc) = (c(9) * c(12), c(10) * c(13));
        let mut src = format!("{pc:?}*x1^2 + {rc:?}*x1*x2");
        for i in 0..3 {
            for j in 0..3 {
                src += &format!(" + {:?}*y{}*y{}", 0.5 * a[(i, j)], i + 1, j + 1);
            }
            src += &format!(" + ({:?} + {:?}*x1 + {:?}*x2)*y{}", e[i], f[i], g[i], i + 1);
        }
        let h = parse(&src)?;
        let pt = &m.fd.domain.sample(50, 0)[s as usize];
        let (x, eta) = (&pt.x, &pt.y);
        let (xd, ed) = m.bundle.dual_hamiltonian_field(&h, x, eta)?;
        // gradient of h in (x1, x2, eta1..3), by hand
        let ae = &a * DVector::from_column_slice(eta);
        let mut dh = vec![
            2.0 * pc * x[0] + rc * x[1] + (0..3).map(|i| f[i] * eta[i]).sum::<f64>(),
            rc * x[0] + (0..3).map(|i| g[i] * eta[i]).sum::<f64>(),
        ];
        for i in 0..3 {
            dh.push(ae[i] + e[i] + f[i] * x[0] + g[i] * x[1]);
        }
        // Poisson matrix: P(d eta_a, d x^i) = rho^i_a, P(d eta_a, d eta_b) = C^g_{ab} eta_g
        let rho = [[-x[1], 1.0, 0.0], [x[0], 0.0, 1.0]];
        let mut cst = [[[0.0; 3]; 3]; 3];
        cst[2][0][1] = -1.0;
        cst[2][1][0] = 1.0;
        cst[1][0][2] = 1.0;
        cst[1][2][0] = -1.0;
        let mut p = DMatrix::<f64>::zeros(n + k, n + k);
        for a in 0..k {
            for i in 0..n {
                p[(n + a, i)] = rho[i][a];
                p[(i, n + a)] = -rho[i][a];
            }
            for b in 0..k {
                p[(n + a, n + b)] = (0..k).map(|gg| cst[gg][a][b] * eta[gg]).sum();
            }
        }
        // X_h(z_J) = P(dh, dz_J)
        let field = p.transpose() * DVector::from_vec(dh);
        let mine: Vec<f64> = xd.into_iter().chain(ed).collect();
        worst = worst.max(max_abs_diff(&mine, field.as_slice()));
    }
    Ok((worst < 1e-10, format!("max deviation from the explicit Poisson contraction {worst:.2e} < 1e-10 over 50 (h, point) pairs")))
}

fn c12_induced_oracle() -> Outcome {
    let rho = ["1", "0", "0", "0"].iter().map(|s| parse(s)).collect::<std::result::Result<Vec<_>, _>>()?;
    let b = AnchoredBundle::new(2, 2, rho, StructureFunctions::zero(2))?;
    let fsrc = "sqrt(y1^2 + (1 + 0.3*x1^2)*y2^2 + 0.5*y1*y2) + 0.2*y2 + 0.1*y1";
    let f = parse(fsrc)?;
    let dom = Domain { x_box: vec![[-1.0, 1.0], [-1.0, 1.0]], y_box: vec![[-2.0, 2.0]; 2], y_min: 1e-3 };
    let fd = FinslerData::finsler(&f, 2, 2, dom);
    let locus = 0.3;
    let leaf = LeafModel::new(b, fd, 1, vec![locus], &[vec![-0.5], vec![0.0], vec![0.5]])?;
    let mut worst: f64 = 0.0;
    for u in halton_points(2, 50, 7) {
        let xb = 2.0 * u[0] - 1.0;
        let mut xd = 4.0 * u[1] - 2.0;
        if xd.abs() < 0.1 {
            xd += 0.2;
        }
        let newton = leaf.induced_lagrangian(&[xb], &[xd])?.value;
        let mut best = f64::INFINITY;
        for j in 0..=10_000 {
            let y2 = -5.0 + 1e-3 * j as f64;
            let fv = eval_value(&f, &[xb, locus], &[xd, y2])?;
            best = best.min(0.5 * fv * fv);
        }
        worst = worst.max((newton - best).abs());
    }
    Ok((worst < 1e-5, format!("|Newton value - grid infimum| max {worst:.2e} < 1e-5 over 50 leaf inputs")))
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut failed = 0;
    let mut line = |id: &str, title: &str, r: Outcome| {
        let (ok, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!("{} {id:<4} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    line("1", "pre-Lie residual", c1_prelie());
    line("2", "Riemannian degeneration", c2_riemannian());
    match c3_c4_torsion_compat() {
        Ok((t, c)) => {
            line("3", "torsion identity", Ok(t));
            line("4", "horizontal metric compatibility", Ok(c));
        }
        Err(e) => {
            let msg = e.to_string();
            line("3", "torsion identity", Err(falg::Error::Spec(msg.clone())));
            line("4", "horizontal metric compatibility", Err(falg::Error::Spec(msg)));
        }
    }
    line("5", "homogeneity ladder", c5_homogeneity());
    line("6", "energy conservation", c6_energy());
    line("7", "Lagrangian/Hamiltonian equivalence", c7_flow_equivalence());
    line("8", "curvature oracles", c8_curvature());
    line("9", "leaf reduction", c9_leaf());
    line("10", "bracket independence", c10_bracket());
    line("11", "dual Hamiltonian field", c11_dual_field());
    line("12", "induced Lagrangian oracle", c12_induced_oracle());
    println!("acceptance: {} of 12 criteria passed in {:.1}s", 12 - failed, t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
