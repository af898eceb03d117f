//! Exterior algebra over named odd generators.

pub mod expr;
pub mod form;
pub mod poly;

pub use expr::{Atom, Expr, Term, Var, VarClass};
pub use form::{Coeff, Form, Generator};
pub use poly::Poly;
