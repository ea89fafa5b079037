//! Anchored bundle data: anchor `rho^i_a(x)` and structure functions
//! `C^g_{ab}(x)` in a local frame `e_1..e_k` over coordinates `x1..xn`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprjet::{eval_jet, eval_value, ActiveSet, Expr};
use crate::linalg::Tensor3;

/// Antisymmetric structure functions. Only entries with `a < b` are stored.
#[derive(Clone, Debug, Default)]
pub struct StructureFunctions {
    pub k: usize,
    entries: Vec<(usize, usize, usize, Expr)>,
}

impl StructureFunctions {
    pub fn zero(k: usize) -> StructureFunctions {
        StructureFunctions { k, entries: Vec::new() }
    }

    /// Set `C^upper_{a b}` (zero-based). `a > b` stores the negated entry.
    pub fn set(&mut self, upper: usize, a: usize, b: usize, e: Expr) -> Result<()> {
        if upper >= self.k || a >= self.k || b >= self.k {
            return Err(Error::Dimension(format!(
                "structure index ({upper}, {a}, {b}) outside rank {}",
                self.k
            )));
        }
        if a == b {
            return Err(Error::Spec(format!(
                "C^{}_{{{}{}}} has equal lower indices",
                upper + 1,
                a + 1,
                b + 1
            )));
        }
        let (a, b, e) = if a < b { (a, b, e) } else { (b, a, Expr::neg(e)) };
        self.entries.retain(|(u, p, q, _)| (*u, *p, *q) != (upper, a, b));
        self.entries.push((upper, a, b, e));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, usize, usize, Expr)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dense `(upper, a, b)` values with antisymmetry in `(a, b)`.
    pub fn at(&self, x: &[f64]) -> Result<Tensor3> {
        let k = self.k;
        let mut t = Tensor3::zeros(k, k, k);
        for (u, a, b, e) in &self.entries {
            let v = eval_value(e, x, &[])?;
            t.add(*u, *a, *b, v);
            t.add(*u, *b, *a, -v);
        }
        Ok(t)
    }

    /// Entry-wise sum (used to form `C + Theta`).
    pub fn plus(&self, other: &StructureFunctions) -> StructureFunctions {
        let mut out = self.clone();
        for (u, a, b, e) in &other.entries {
            match out.entries.iter_mut().find(|(p, q, r, _)| (*p, *q, *r) == (*u, *a, *b)) {
                Some(slot) => slot.3 = Expr::add(slot.3.clone(), e.clone()),
                None => out.entries.push((*u, *a, *b, e.clone())),
            }
        }
        out
    }
}

/// Anchor values and first x-derivatives at a base point.
#[derive(Clone, Debug)]
pub struct AnchorJet {
    /// `rho[(i, a)] = rho^i_a`
    pub rho: DMatrix<f64>,
    /// `(i, a, j)` entry is `d rho^i_a / d x^j`.
    pub drho: Tensor3,
}

#[derive(Clone, Debug, Serialize)]
pub struct PreLieResidual {
    pub max_abs: f64,
    /// `(a, b, l)` zero-based, `a < b`
    pub worst: (usize, usize, usize),
}

#[derive(Clone, Debug)]
pub struct AnchoredBundle {
    pub n: usize,
    pub k: usize,
    /// Row-major `n x k` anchor entries, functions of `x` only.
    rho: Vec<Expr>,
    pub c: StructureFunctions,
}

impl AnchoredBundle {
    pub fn new(n: usize, k: usize, rho: Vec<Expr>, c: StructureFunctions) -> Result<AnchoredBundle> {
        if rho.len() != n * k {
            return Err(Error::Dimension(format!(
                "anchor has {} entries, expected {n} x {k}",
                rho.len()
            )));
        }
        if c.k != k {
            return Err(Error::Dimension(format!("structure functions of rank {} for k = {k}", c.k)));
        }
        for (idx, e) in rho.iter().enumerate() {
            let (nx, _) = e.max_indices();
            if e.uses_fiber() || nx > n {
                return Err(Error::Spec(format!(
                    "anchor entry ({}, {}) must depend on x1..x{n} only: {e}",
                    idx / k + 1,
                    idx % k + 1
                )));
            }
        }
        for (_, _, _, e) in c.entries() {
            let (nx, _) = e.max_indices();
            if e.uses_fiber() || nx > n {
                return Err(Error::Spec(format!(
                    "structure function must depend on x1..x{n} only: {e}"
                )));
            }
        }
        Ok(AnchoredBundle { n, k, rho, c })
    }

    /// The standard tangent bundle: `rho = Id`, `C = 0`.
    pub fn tangent(n: usize) -> AnchoredBundle {
        let rho = (0..n * n)
            .map(|idx| Expr::num(if idx / n == idx % n { 1.0 } else { 0.0 }))
            .collect();
        AnchoredBundle { n, k: n, rho, c: StructureFunctions::zero(n) }
    }

    pub fn rho_expr(&self, i: usize, a: usize) -> &Expr {
        &self.rho[i * self.k + a]
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!("base point has {} coordinates, expected {}", x.len(), self.n)));
        }
        Ok(())
    }

    pub fn anchor_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let mut m = DMatrix::zeros(self.n, self.k);
        for i in 0..self.n {
            for a in 0..self.k {
                m[(i, a)] = eval_value(self.rho_expr(i, a), x, &[])?;
            }
        }
        Ok(m)
    }

    pub fn anchor_jet(&self, x: &[f64]) -> Result<AnchorJet> {
        self.check_x(x)?;
        let (n, k) = (self.n, self.k);
        let active = ActiveSet::base(n);
        let mut rho = DMatrix::zeros(n, k);
        let mut drho = Tensor3::zeros(n, k, n);
        for i in 0..n {
            for a in 0..k {
                let j = eval_jet(self.rho_expr(i, a), x, &[], &active, 1)?;
                rho[(i, a)] = j.v;
                for d in 0..n {
                    drho.set(i, a, d, j.d1[d]);
                }
            }
        }
        Ok(AnchorJet { rho, drho })
    }

    pub fn structure_at(&self, x: &[f64]) -> Result<Tensor3> {
        self.check_x(x)?;
        self.c.at(x)
    }

    /// `rho^i_b d_i rho^l_a - rho^i_a d_i rho^l_b + C^g_{ab} rho^l_g`; zero
    /// exactly when the anchor maps the frame bracket to the vector field bracket.
    pub fn prelie_residual(&self, x: &[f64]) -> Result<PreLieResidual> {
        let aj = self.anchor_jet(x)?;
        let c = self.structure_at(x)?;
        let (n, k) = (self.n, self.k);
        let mut out = PreLieResidual { max_abs: 0.0, worst: (0, 0, 0) };
        for a in 0..k {
            for b in (a + 1)..k {
                for l in 0..n {
                    let mut r = 0.0;
                    for i in 0..n {
                        r += aj.rho[(i, b)] * aj.drho.get(l, a, i) - aj.rho[(i, a)] * aj.drho.get(l, b, i);
                    }
                    for g in 0..k {
                        r += c.get(g, a, b) * aj.rho[(l, g)];
                    }
                    if r.abs() > out.max_abs {
                        out = PreLieResidual { max_abs: r.abs(), worst: (a, b, l) };
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest `|rho Theta|` entry at `x`, with its location.
    pub fn range_violation(&self, theta: &StructureFunctions, x: &[f64]) -> Result<(f64, (usize, usize, usize))> {
        let rho = self.anchor_at(x)?;
        let t = theta.at(x)?;
        let mut worst = (0.0, (0, 0, 0));
        for a in 0..self.k {
            for b in (a + 1)..self.k {
                for l in 0..self.n {
                    let v: f64 = (0..self.k).map(|g| rho[(l, g)] * t.get(g, a, b)).sum();
                    if v.abs() > worst.0 {
                        worst = (v.abs(), (l, a, b));
                    }
                }
            }
        }
        Ok(worst)
    }

    /// `C + Theta` at `x`, provided `Theta` takes values in `ker rho` there.
    pub fn perturbed_structure(&self, theta: &StructureFunctions, x: &[f64]) -> Result<Tensor3> {
        let (v, (_, a, b)) = self.range_violation(theta, x)?;
        if v > 1e-10 {
            let t = theta.at(x)?;
            let upper = (0..self.k)
                .max_by(|p, q| t.get(*p, a, b).abs().total_cmp(&t.get(*q, a, b).abs()))
                .unwrap_or(0);
            return Err(Error::RangeCondition { upper: upper + 1, a: a + 1, b: b + 1, value: v });
        }
        let mut c = self.structure_at(x)?;
        let t = theta.at(x)?;
        for (dst, add) in c.data.iter_mut().zip(&t.data) {
            *dst += add;
        }
        Ok(c)
    }

    /// Bundle with bracket `C + Theta`, after checking the range condition at
    /// the probe points.
    pub fn with_perturbation(&self, theta: &StructureFunctions, probes: &[Vec<f64>]) -> Result<AnchoredBundle> {
        for x in probes {
            self.perturbed_structure(theta, x)?;
        }
        AnchoredBundle::new(self.n, self.k, self.rho.clone(), self.c.plus(theta))
    }

    /// Hamiltonian vector field on the dual bundle for `h(x, eta)`; in `h` the
    /// fiber variables `y1..yk` stand for `eta`. Returns `(x_dot, eta_dot)`.
    pub fn dual_hamiltonian_field(&self, h: &Expr, x: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, k) = (self.n, self.k);
        if eta.len() != k {
            return Err(Error::Dimension(format!("covector has {} entries, expected {k}", eta.len())));
        }
        let rho = self.anchor_at(x)?;
        let c = self.structure_at(x)?;
        let j = eval_jet(h, x, eta, &ActiveSet::base_and_fiber(n, k), 1)?;
        let (dhdx, dhde) = j.d1.split_at(n);
        let xdot = (0..n).map(|i| (0..k).map(|a| rho[(i, a)] * dhde[a]).sum()).collect();
        let edot = (0..k)
            .map(|a| {
                let mut s = 0.0;
                for b in 0..k {
                    for g in 0..k {
                        s += c.get(g, a, b) * eta[g] * dhde[b];
                    }
                }
                for i in 0..n {
                    s += rho[(i, a)] * dhdx[i];
                }
                -s
            })
            .collect();
        Ok((xdot, edot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprjet::parse;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    /// Rotation field plus the two coordinate fields on the plane.
    fn rotation() -> AnchoredBundle {
        let rho = ["-x2", "1", "0", "x1", "0", "1"].iter().map(|s| p(s)).collect();
        let mut c = StructureFunctions::zero(3);
        c.set(2, 0, 1, p("-1")).unwrap();
        c.set(1, 0, 2, p("1")).unwrap();
        AnchoredBundle::new(2, 3, rho, c).unwrap()
    }

    #[test]
    fn single_rotation_field() {
        let m = AnchoredBundle::new(2, 1, vec![p("-x2"), p("x1")], StructureFunctions::zero(1)).unwrap();
        let r = m.anchor_at(&[1.0, 0.0]).unwrap();
        assert_eq!((r[(0, 0)], r[(1, 0)]), (0.0, 1.0));
    }

    #[test]
    fn tangent_bundle_has_zero_residual() {
        let m = AnchoredBundle::tangent(3);
        assert_eq!(m.prelie_residual(&[0.3, -1.0, 2.0]).unwrap().max_abs, 0.0);
    }

    #[test]
    fn rotation_model_is_a_lie_algebroid() {
        let m = rotation();
        for x in [[0.3, -0.7], [1.5, 2.0], [-1.0, 0.25]] {
            assert!(m.prelie_residual(&x).unwrap().max_abs < 1e-12);
        }
    }

    #[test]
    fn wrong_sign_is_detected() {
        let m = rotation();
        let mut c = m.c.clone();
        c.set(2, 0, 1, p("1")).unwrap();
        let broken = AnchoredBundle::new(2, 3, m.rho.clone(), c).unwrap();
        // oracle: the residual picks up 2 * rho(e3) = (0, 2)
        let r = broken.prelie_residual(&[0.4, 0.1]).unwrap();
        assert_eq!(r.max_abs, 2.0);
        assert_eq!(r.worst, (0, 1, 1));
    }

    #[test]
    fn antisymmetry_on_materialisation() {
        let mut c = StructureFunctions::zero(2);
        c.set(0, 1, 0, p("x1")).unwrap();
        let t = c.at(&[2.0]).unwrap();
        assert_eq!((t.get(0, 0, 1), t.get(0, 1, 0)), (-2.0, 2.0));
        assert!(c.clone().set(0, 1, 1, p("1")).is_err());
    }

    #[test]
    fn anchor_rejects_fiber_dependence() {
        let r = AnchoredBundle::new(1, 1, vec![p("y1")], StructureFunctions::zero(1));
        assert!(matches!(r, Err(Error::Spec(_))));
    }

    #[test]
    fn perturbation_must_lie_in_kernel() {
        let m = rotation();
        // ker rho at x is spanned by (1, x2, -x1)
        let mut good = StructureFunctions::zero(3);
        good.set(0, 1, 2, p("1")).unwrap();
        good.set(1, 1, 2, p("x2")).unwrap();
        good.set(2, 1, 2, p("-x1")).unwrap();
        let x = [0.6, -0.2];
        let pc = m.perturbed_structure(&good, &x).unwrap();
        assert_eq!(pc.get(1, 1, 2), -0.2);
        let mut bad = StructureFunctions::zero(3);
        bad.set(1, 0, 1, p("1")).unwrap();
        assert!(matches!(m.perturbed_structure(&bad, &x), Err(Error::RangeCondition { .. })));
    }

    #[test]
    fn linear_hamiltonian_on_tangent_bundle() {
        // h = eta_1: x_dot = e_1, eta_dot = 0
        let m = AnchoredBundle::tangent(2);
        let (xd, ed) = m.dual_hamiltonian_field(&p("y1"), &[0.1, 0.2], &[3.0, 4.0]).unwrap();
        assert_eq!(xd, vec![1.0, 0.0]);
        assert_eq!(ed, vec![0.0, 0.0]);
    }
}
