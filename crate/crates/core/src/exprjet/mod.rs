//! Expression language for model data and forward-mode jets over it.

mod ast;
mod eval;
mod fd;
mod jet;
mod parser;

pub use ast::{Expr, Func, Var};
pub use eval::{eval_jet, eval_value, ActiveSet};
pub use fd::{fd_check, FdReport};
pub use jet::{len2, len3, tri2, tri3, Jet};
pub use parser::{parse, parse_in, ParseError, ParseErrorKind, Scope};
