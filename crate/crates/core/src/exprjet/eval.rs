use super::ast::{Expr, Func, Var};
use super::jet::Jet;
use crate::error::{Error, Result};

/// Ordered list of variables to differentiate with respect to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    vars: Vec<Var>,
}

impl ActiveSet {
    pub fn new(vars: Vec<Var>) -> ActiveSet {
        ActiveSet { vars }
    }

    /// `x1..xn` followed by `y1..yk`.
    pub fn base_and_fiber(n: usize, k: usize) -> ActiveSet {
        let mut vars: Vec<Var> = (0..n).map(Var::X).collect();
        vars.extend((0..k).map(Var::Y));
        ActiveSet { vars }
    }

    pub fn fiber(k: usize) -> ActiveSet {
        ActiveSet { vars: (0..k).map(Var::Y).collect() }
    }

    pub fn base(n: usize) -> ActiveSet {
        ActiveSet { vars: (0..n).map(Var::X).collect() }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn slot(&self, v: Var) -> Option<usize> {
        self.vars.iter().position(|w| *w == v)
    }
}

fn lookup(v: Var, x: &[f64], y: &[f64]) -> Result<f64> {
    let (vals, i) = match v {
        Var::X(i) => (x, i),
        Var::Y(i) => (y, i),
    };
    vals.get(i).copied().ok_or_else(|| {
        Error::Dimension(format!("variable {v} referenced but only {} values given", vals.len()))
    })
}

fn domain(e: &Expr, reason: &'static str) -> Error {
    Error::Domain { subexpr: e.to_string(), reason }
}

fn check_arg(e: &Expr, f: Func, u: f64, differentiate: bool) -> Result<()> {
    match f {
        Func::Sqrt if u < 0.0 => Err(domain(e, "sqrt of a negative value")),
        Func::Sqrt if u == 0.0 && differentiate => Err(domain(e, "sqrt is not smooth at 0")),
        Func::Log if u <= 0.0 => Err(domain(e, "log of a non-positive value")),
        _ => Ok(()),
    }
}

fn finite(e: &Expr, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(e, "non-finite result"))
    }
}

/// Plain value of `e` at `(x, y)`.
pub fn eval_value(e: &Expr, x: &[f64], y: &[f64]) -> Result<f64> {
    let v = match e {
        Expr::Num(v) => *v,
        Expr::Var(v) => lookup(*v, x, y)?,
        Expr::Neg(a) => -eval_value(a, x, y)?,
        Expr::Add(a, b) => eval_value(a, x, y)? + eval_value(b, x, y)?,
        Expr::Sub(a, b) => eval_value(a, x, y)? - eval_value(b, x, y)?,
        Expr::Mul(a, b) => eval_value(a, x, y)? * eval_value(b, x, y)?,
        Expr::Div(a, b) => {
            let d = eval_value(b, x, y)?;
            if d == 0.0 {
                return Err(domain(e, "division by zero"));
            }
            eval_value(a, x, y)? / d
        }
        Expr::Pow(a, n) => eval_value(a, x, y)?.powi(*n as i32),
        Expr::Call(f, a) => {
            let u = eval_value(a, x, y)?;
            check_arg(e, *f, u, false)?;
            match f {
                Func::Sqrt => u.sqrt(),
                Func::Exp => u.exp(),
                Func::Log => u.ln(),
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
            }
        }
    };
    finite(e, v)
}

/// Value and partial derivatives up to `order` (at most 3) with respect to
/// the active set.
pub fn eval_jet(e: &Expr, x: &[f64], y: &[f64], active: &ActiveSet, order: u8) -> Result<Jet> {
    assert!(order <= 3, "jets are truncated at third order");
    let m = active.len();
    let j = match e {
        Expr::Num(v) => Jet::constant(*v, m, order),
        Expr::Var(v) => {
            let val = lookup(*v, x, y)?;
            match active.slot(*v) {
                Some(s) => Jet::variable(val, s, m, order),
                None => Jet::constant(val, m, order),
            }
        }
        Expr::Neg(a) => -&eval_jet(a, x, y, active, order)?,
        Expr::Add(a, b) => &eval_jet(a, x, y, active, order)? + &eval_jet(b, x, y, active, order)?,
        Expr::Sub(a, b) => &eval_jet(a, x, y, active, order)? - &eval_jet(b, x, y, active, order)?,
        Expr::Mul(a, b) => &eval_jet(a, x, y, active, order)? * &eval_jet(b, x, y, active, order)?,
        Expr::Div(a, b) => {
            let d = eval_jet(b, x, y, active, order)?;
            if d.v == 0.0 {
                return Err(domain(e, "division by zero"));
            }
            &eval_jet(a, x, y, active, order)? * &d.recip()
        }
        Expr::Pow(a, n) => eval_jet(a, x, y, active, order)?.powi(*n),
        Expr::Call(f, a) => {
            let u = eval_jet(a, x, y, active, order)?;
            check_arg(e, *f, u.v, order > 0)?;
            match f {
                Func::Sqrt => u.sqrt(),
                Func::Exp => u.exp(),
                Func::Log => u.ln(),
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
            }
        }
    };
    if !j.is_finite() {
        return Err(domain(e, "non-finite result"));
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprjet::parse;

    #[test]
    fn randers_gradient_at_unit_vector() {
        // F = sqrt(y1^2+y2^2) + 0.3 y1 at y = (1, 0)
        let f = parse("sqrt(y1^2+y2^2) + 0.3*y1").unwrap();
        let j = eval_jet(&f, &[], &[1.0, 0.0], &ActiveSet::fiber(2), 2).unwrap();
        assert_eq!(j.v, 1.3);
        assert_eq!(j.d1, vec![1.3, 0.0]);
        assert_eq!(j.d2(0, 0), 0.0);
        assert_eq!(j.d2(1, 1), 1.0);
    }

    #[test]
    fn inactive_variables_are_constants() {
        let f = parse("x1 * y1^2").unwrap();
        let j = eval_jet(&f, &[3.0], &[2.0], &ActiveSet::fiber(1), 3).unwrap();
        assert_eq!((j.v, j.d1[0], j.d2[0], j.d3[0]), (12.0, 12.0, 6.0, 0.0));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let f = parse("log(x1 - 1)").unwrap();
        match eval_value(&f, &[0.5], &[]) {
            Err(Error::Domain { subexpr, .. }) => assert_eq!(subexpr, "log(x1 - 1.0)"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let g = parse("sqrt(y1^2 + y2^2)").unwrap();
        assert!(eval_jet(&g, &[], &[0.0, 0.0], &ActiveSet::fiber(2), 1).is_err());
        assert!(eval_value(&g, &[], &[0.0, 0.0]).is_ok());
        let h = parse("1 / (x1 - x1)").unwrap();
        assert!(eval_value(&h, &[1.0], &[]).is_err());
    }

    #[test]
    fn missing_values_are_dimension_errors() {
        let f = parse("y3").unwrap();
        assert!(matches!(eval_value(&f, &[], &[1.0]), Err(Error::Dimension(_))));
    }
}
