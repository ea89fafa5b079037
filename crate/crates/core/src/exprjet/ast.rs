use std::fmt;

/// A model variable. Indices are zero-based; the surface syntax is one-based
/// (`x1` is `Var::X(0)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X(usize),
    Y(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Y(i) => write!(f, "y{}", i + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    pub const ALL: [Func; 5] = [Func::Sqrt, Func::Exp, Func::Log, Func::Sin, Func::Cos];
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn x(i: usize) -> Expr {
        Expr::Var(Var::X(i))
    }

    pub fn y(i: usize) -> Expr {
        Expr::Var(Var::Y(i))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, n: u32) -> Expr {
        Expr::Pow(Box::new(a), n)
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    /// Constant zero test on the syntax tree (no simplification).
    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.visit_vars(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    pub fn uses_fiber(&self) -> bool {
        let mut any = false;
        self.visit_vars(&mut |v| any |= matches!(v, Var::Y(_)));
        any
    }

    /// Largest `(x index, y index)` referenced, one-based; zero when unused.
    pub fn max_indices(&self) -> (usize, usize) {
        let (mut nx, mut ny) = (0, 0);
        self.visit_vars(&mut |v| match v {
            Var::X(i) => nx = nx.max(i + 1),
            Var::Y(i) => ny = ny.max(i + 1),
        });
        (nx, ny)
    }

    /// Replace variables by other expressions.
    pub fn substitute(&self, f: &impl Fn(Var) -> Expr) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => f(*v),
            Expr::Neg(a) => Expr::neg(a.substitute(f)),
            Expr::Add(a, b) => Expr::add(a.substitute(f), b.substitute(f)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(f), b.substitute(f)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(f), b.substitute(f)),
            Expr::Div(a, b) => Expr::div(a.substitute(f), b.substitute(f)),
            Expr::Pow(a, n) => Expr::pow(a.substitute(f), *n),
            Expr::Call(g, a) => Expr::call(*g, a.substitute(f)),
        }
    }

    fn is_atomic(&self) -> bool {
        matches!(self, Expr::Num(_) | Expr::Var(_) | Expr::Call(..))
    }
}

struct Operand<'a>(&'a Expr);

impl fmt::Display for Operand<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_atomic() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "({})", self.0)
        }
    }
}

/// Fully parenthesised form. Reparsing the output yields an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "-{}", Operand(a)),
            Expr::Add(a, b) => write!(f, "{} + {}", Operand(a), Operand(b)),
            Expr::Sub(a, b) => write!(f, "{} - {}", Operand(a), Operand(b)),
            Expr::Mul(a, b) => write!(f, "{} * {}", Operand(a), Operand(b)),
            Expr::Div(a, b) => write!(f, "{} / {}", Operand(a), Operand(b)),
            Expr::Pow(a, n) => write!(f, "{}^{}", Operand(a), n),
            Expr::Call(g, a) => write!(f, "{}({})", g.name(), a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_parenthesised() {
        let e = Expr::sub(Expr::x(0), Expr::add(Expr::y(1), Expr::num(2.0)));
        assert_eq!(e.to_string(), "x1 - (y2 + 2.0)");
        let p = Expr::pow(Expr::neg(Expr::x(0)), 2);
        assert_eq!(p.to_string(), "(-x1)^2");
    }

    #[test]
    fn max_indices_and_fiber_use() {
        let e = Expr::mul(Expr::x(2), Expr::call(Func::Sin, Expr::y(0)));
        assert_eq!(e.max_indices(), (3, 1));
        assert!(e.uses_fiber());
        assert!(!Expr::x(0).uses_fiber());
    }
}
