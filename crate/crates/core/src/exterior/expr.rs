//! Expression coefficients with exact partial derivatives.
//!
//! Every [`Expr`] is kept in an expanded normal form: a sum of terms, each a
//! complex coefficient times a sorted product of atoms raised to nonzero integer
//! powers. Atoms are variables, `exp`, reciprocals of sums and square roots.
//! Sums are never nested inside products except under one of those atoms, so
//! equal expressions built along different routes usually compare equal.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Variable tags. Vertex and component indices are 1-based, edges and levels
/// 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Z(u16, u16),
    Zbar(u16, u16),
    X(u16, u16),
    T(u16),
    Xi(u16),
    Rho(u16),
    Aux(u16),
}

/// Which differential a variable belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarClass {
    Holomorphic,
    AntiHolomorphic,
    Real,
    Schwinger,
    Aux,
}

impl Var {
    pub fn class(self) -> VarClass {
        match self {
            Var::Z(..) => VarClass::Holomorphic,
            Var::Zbar(..) => VarClass::AntiHolomorphic,
            Var::X(..) => VarClass::Real,
            Var::T(_) | Var::Xi(_) | Var::Rho(_) => VarClass::Schwinger,
            Var::Aux(_) => VarClass::Aux,
        }
    }

    pub fn is_position(self) -> bool {
        matches!(self, Var::Z(..) | Var::Zbar(..) | Var::X(..))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Z(i, k) => write!(f, "z{i}_{k}"),
            Var::Zbar(i, k) => write!(f, "zb{i}_{k}"),
            Var::X(i, k) => write!(f, "x{i}_{k}"),
            Var::T(e) => write!(f, "t{e}"),
            Var::Xi(e) => write!(f, "xi{e}"),
            Var::Rho(l) => write!(f, "rho{l}"),
            Var::Aux(a) => write!(f, "a{a}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Atom {
    Var(Var),
    /// Always carried with power 1.
    Exp(Expr),
    /// Reciprocal of a sum with at least two terms, power > 0.
    Recip(Expr),
    /// Square root, power +1 or -1.
    Sqrt(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coef: Complex64,
    pub factors: Vec<(Atom, i32)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Expr {
    terms: Vec<Term>,
}

const CANCEL_TOL: f64 = 1e-13;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn cmp_c(a: Complex64, b: Complex64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn atom_rank(a: &Atom) -> u8 {
    match a {
        Atom::Var(_) => 0,
        Atom::Exp(_) => 1,
        Atom::Recip(_) => 2,
        Atom::Sqrt(_) => 3,
    }
}

fn cmp_atom(a: &Atom, b: &Atom) -> Ordering {
    match (a, b) {
        (Atom::Var(x), Atom::Var(y)) => x.cmp(y),
        (Atom::Exp(x), Atom::Exp(y))
        | (Atom::Recip(x), Atom::Recip(y))
        | (Atom::Sqrt(x), Atom::Sqrt(y)) => cmp_expr(x, y),
        _ => atom_rank(a).cmp(&atom_rank(b)),
    }
}

fn cmp_factors(a: &[(Atom, i32)], b: &[(Atom, i32)]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = cmp_atom(&x.0, &y.0).then(x.1.cmp(&y.1));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn cmp_expr(a: &Expr, b: &Expr) -> Ordering {
    for (x, y) in a.terms.iter().zip(&b.terms) {
        let o = cmp_factors(&x.factors, &y.factors).then(cmp_c(x.coef, y.coef));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.terms.len().cmp(&b.terms.len())
}

impl Expr {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn one() -> Self {
        Self::constant(c(1.0))
    }

    pub fn constant(v: Complex64) -> Self {
        if v == Complex64::new(0.0, 0.0) {
            return Self::zero();
        }
        Self { terms: vec![Term { coef: v, factors: Vec::new() }] }
    }

    pub fn real(v: f64) -> Self {
        Self::constant(c(v))
    }

    pub fn var(v: Var) -> Self {
        Self { terms: vec![Term { coef: c(1.0), factors: vec![(Atom::Var(v), 1)] }] }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The constant value if the expression has no atoms.
    pub fn as_constant(&self) -> Option<Complex64> {
        match self.terms.as_slice() {
            [] => Some(c(0.0)),
            [t] if t.factors.is_empty() => Some(t.coef),
            _ => None,
        }
    }

    fn from_terms(mut terms: Vec<Term>) -> Self {
        terms.sort_by(|a, b| cmp_factors(&a.factors, &b.factors));
        let mut out: Vec<Term> = Vec::with_capacity(terms.len());
        let mut mass = 0.0;
        for t in terms {
            if let Some(last) = out.last_mut() {
                if cmp_factors(&last.factors, &t.factors) == Ordering::Equal {
                    last.coef += t.coef;
                    mass += t.coef.norm();
                    continue;
                }
            }
            if let Some(last) = out.last() {
                if last.coef.norm() <= CANCEL_TOL * mass {
                    out.pop();
                }
            }
            mass = t.coef.norm();
            out.push(t);
        }
        if let Some(last) = out.last() {
            if last.coef.norm() <= CANCEL_TOL * mass {
                out.pop();
            }
        }
        out.retain(|t| t.coef.norm() != 0.0);
        Self { terms: out }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::from_terms(terms)
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Expr {
        self.scale(c(-1.0))
    }

    pub fn scale(&self, s: Complex64) -> Expr {
        if s == c(0.0) {
            return Self::zero();
        }
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| Term { coef: t.coef * s, factors: t.factors.clone() })
                .collect(),
        }
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
        let terms: Vec<Term> = items.into_iter().flat_map(|e| e.terms).collect();
        Self::from_terms(terms)
    }

    pub fn product<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
        items.into_iter().fold(Expr::one(), |acc, e| acc.mul(&e))
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        if let Some(r) = self.cancel_recip(other).or_else(|| other.cancel_recip(self)) {
            return r;
        }
        let mut acc: Vec<Term> = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut f = a.factors.clone();
                f.extend(b.factors.iter().cloned());
                acc.extend(normalize_term(a.coef * b.coef, f).terms);
            }
        }
        Self::from_terms(acc)
    }

    /// `self * sum` when every term of `self` carries `Recip(sum)`: lower the
    /// reciprocal power instead of expanding.
    fn cancel_recip(&self, sum: &Expr) -> Option<Expr> {
        if sum.terms.len() < 2 {
            return None;
        }
        let lead = sum.terms[0].coef;
        let inner = sum.scale(c(1.0) / lead);
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let j = t.factors.iter().position(|(a, _)| matches!(a, Atom::Recip(e) if *e == inner))?;
            let mut f = t.factors.clone();
            f[j].1 -= 1;
            out.extend(normalize_term(t.coef * lead, f).terms);
        }
        Some(Self::from_terms(out))
    }

    /// Integer power; negative powers go through [`Expr::recip`].
    pub fn powi(&self, p: i32) -> Expr {
        if p < 0 {
            return self.recip().powi(-p);
        }
        let mut out = Expr::one();
        for _ in 0..p {
            out = out.mul(self);
        }
        out
    }

    pub fn exp(&self) -> Expr {
        if let Some(v) = self.as_constant() {
            return Self::constant(v.exp());
        }
        normalize_term(c(1.0), vec![(Atom::Exp(self.clone()), 1)])
    }

    /// `1/self`. Single terms are inverted in place; sums become an atom with
    /// the leading coefficient pulled out.
    pub fn recip(&self) -> Expr {
        match self.terms.as_slice() {
            [] => Self::constant(c(f64::INFINITY)),
            [t] => {
                let f = t.factors.iter().map(|(a, p)| (a.clone(), -p)).collect();
                normalize_term(c(1.0) / t.coef, f)
            }
            _ => {
                let lead = self.terms[0].coef;
                let inner = self.scale(c(1.0) / lead);
                normalize_term(c(1.0) / lead, vec![(Atom::Recip(inner), 1)])
            }
        }
    }

    pub fn sqrt(&self) -> Expr {
        if let Some(v) = self.as_constant() {
            return Self::constant(v.sqrt());
        }
        if let [t] = self.terms.as_slice() {
            if t.factors.iter().all(|(_, p)| p % 2 == 0) && t.coef.im == 0.0 && t.coef.re > 0.0 {
                let f = t.factors.iter().map(|(a, p)| (a.clone(), p / 2)).collect();
                return normalize_term(c(t.coef.re.sqrt()), f);
            }
        }
        normalize_term(c(1.0), vec![(Atom::Sqrt(self.clone()), 1)])
    }

    /// Variables occurring anywhere, including inside atoms.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut s = BTreeSet::new();
        self.collect_vars(&mut s);
        s
    }

    fn collect_vars(&self, s: &mut BTreeSet<Var>) {
        for t in &self.terms {
            for (a, _) in &t.factors {
                match a {
                    Atom::Var(v) => {
                        s.insert(*v);
                    }
                    Atom::Exp(e) | Atom::Recip(e) | Atom::Sqrt(e) => e.collect_vars(s),
                }
            }
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.terms.iter().any(|t| {
            t.factors.iter().any(|(a, _)| match a {
                Atom::Var(w) => *w == v,
                Atom::Exp(e) | Atom::Recip(e) | Atom::Sqrt(e) => e.depends_on(v),
            })
        })
    }

    /// Exact partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        let mut out = Vec::new();
        for t in &self.terms {
            for (j, (a, p)) in t.factors.iter().enumerate() {
                let da = match a {
                    Atom::Var(w) => {
                        if *w != v {
                            continue;
                        }
                        Expr::real(*p as f64).mul(&atom_pow(a, p - 1))
                    }
                    Atom::Exp(e) => {
                        let de = e.diff(v);
                        if de.is_zero() {
                            continue;
                        }
                        atom_pow(a, 1).mul(&de)
                    }
                    Atom::Recip(e) => {
                        let de = e.diff(v);
                        if de.is_zero() {
                            continue;
                        }
                        atom_pow(a, p + 1).mul(&de).scale(c(-*p as f64))
                    }
                    Atom::Sqrt(e) => {
                        let de = e.diff(v);
                        if de.is_zero() {
                            continue;
                        }
                        // d sqrt(e)^p = (p/2) sqrt(e)^p e' / e
                        atom_pow(a, *p).mul(&e.recip()).mul(&de).scale(c(*p as f64 / 2.0))
                    }
                };
                let mut rest: Vec<(Atom, i32)> = Vec::with_capacity(t.factors.len());
                for (k, f) in t.factors.iter().enumerate() {
                    if k != j {
                        rest.push(f.clone());
                    }
                }
                let r = normalize_term(t.coef, rest);
                out.extend(r.mul(&da).terms);
            }
        }
        Self::from_terms(out)
    }

    /// Substitute variables; `None` keeps a variable unchanged.
    pub fn subst(&self, map: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        let mut out = Vec::new();
        for t in &self.terms {
            let mut acc = Expr::constant(t.coef);
            for (a, p) in &t.factors {
                let base = match a {
                    Atom::Var(v) => match map(*v) {
                        Some(e) => e,
                        None => Expr::var(*v),
                    },
                    Atom::Exp(e) => e.subst(map).exp(),
                    Atom::Recip(e) => e.subst(map).recip(),
                    Atom::Sqrt(e) => e.subst(map).sqrt(),
                };
                acc = acc.mul(&base.powi(*p));
                if acc.is_zero() {
                    break;
                }
            }
            out.extend(acc.terms);
        }
        Self::from_terms(out)
    }

    pub fn eval(&self, env: &dyn Fn(Var) -> Complex64) -> Complex64 {
        self.terms.iter().map(|t| eval_term(t, env)).sum()
    }

    /// Sum of absolute values of the terms; a natural scale for zero tests.
    pub fn eval_abs(&self, env: &dyn Fn(Var) -> Complex64) -> f64 {
        self.terms.iter().map(|t| eval_term(t, env).norm()).sum()
    }

    /// Zero test: structurally empty, or below `1e-9` (relative to the
    /// term-wise absolute sum) at 20 random points.
    pub fn is_numerically_zero(&self, seed: u64) -> bool {
        if self.is_zero() {
            return true;
        }
        let vars: Vec<Var> = self.vars().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let env = random_env(&vars, &mut rng);
            let f = |v: Var| lookup(&env, v);
            let val = self.eval(&f);
            let scale = self.eval_abs(&f).max(1e-300);
            if val.norm() > 1e-9 * scale {
                return false;
            }
        }
        true
    }
}

/// Random sample point: complex positions with conjugate pairs, positive reals
/// elsewhere so reciprocals and roots stay defined.
pub fn random_env(vars: &[Var], rng: &mut ChaCha8Rng) -> Vec<(Var, Complex64)> {
    let mut env: Vec<(Var, Complex64)> = Vec::with_capacity(vars.len() * 2);
    let mut zs: std::collections::BTreeMap<(u16, u16), Complex64> = Default::default();
    for &v in vars {
        match v {
            Var::Z(i, k) | Var::Zbar(i, k) => {
                let z = *zs
                    .entry((i, k))
                    .or_insert_with(|| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                env.push((v, if matches!(v, Var::Z(..)) { z } else { z.conj() }));
            }
            Var::X(..) => env.push((v, c(rng.gen_range(-1.0..1.0)))),
            _ => env.push((v, c(rng.gen_range(0.2..1.5)))),
        }
    }
    env
}

pub fn lookup(env: &[(Var, Complex64)], v: Var) -> Complex64 {
    env.iter().find(|(w, _)| *w == v).map_or(c(0.0), |(_, x)| *x)
}

fn eval_term(t: &Term, env: &dyn Fn(Var) -> Complex64) -> Complex64 {
    let mut acc = t.coef;
    for (a, p) in &t.factors {
        let base = match a {
            Atom::Var(v) => env(*v),
            Atom::Exp(e) => e.eval(env).exp(),
            Atom::Recip(e) => c(1.0) / e.eval(env),
            Atom::Sqrt(e) => e.eval(env).sqrt(),
        };
        acc *= base.powi(*p);
    }
    acc
}

fn atom_pow(a: &Atom, p: i32) -> Expr {
    if p == 0 {
        return Expr::one();
    }
    normalize_term(c(1.0), vec![(a.clone(), p)])
}

/// Canonicalise one product: merge equal atoms, combine exponentials, reduce
/// square-root and reciprocal powers. May spill into a sum.
fn normalize_term(coef: Complex64, mut factors: Vec<(Atom, i32)>) -> Expr {
    if coef == c(0.0) {
        return Expr::zero();
    }
    let mut coef = coef;
    let mut spill = Expr::one();
    // combine all exponentials into one
    let mut exp_arg: Option<Expr> = None;
    factors.retain(|(a, p)| {
        if let Atom::Exp(e) = a {
            let s = e.scale(c(*p as f64));
            exp_arg = Some(match exp_arg.take() {
                Some(x) => x.add(&s),
                None => s,
            });
            false
        } else {
            true
        }
    });
    if let Some(arg) = exp_arg {
        if let Some(v) = arg.as_constant() {
            coef *= v.exp();
        } else {
            factors.push((Atom::Exp(arg), 1));
        }
    }
    factors.sort_by(|a, b| cmp_atom(&a.0, &b.0));
    let mut merged: Vec<(Atom, i32)> = Vec::with_capacity(factors.len());
    for (a, p) in factors {
        if let Some(last) = merged.last_mut() {
            if cmp_atom(&last.0, &a) == Ordering::Equal {
                last.1 += p;
                continue;
            }
        }
        merged.push((a, p));
    }
    let mut out = Vec::with_capacity(merged.len());
    for (a, p) in merged {
        if p == 0 {
            continue;
        }
        match &a {
            Atom::Sqrt(e) if !(p == 1 || p == -1) => {
                // sqrt(e)^p = e^(p div 2) * sqrt(e)^(p mod 2)
                let q = p.div_euclid(2);
                let r = p.rem_euclid(2);
                spill = spill.mul(&e.powi(q));
                if r != 0 {
                    out.push((a, r));
                }
            }
            Atom::Recip(e) if p < 0 => {
                spill = spill.mul(&e.powi(-p));
            }
            _ => out.push((a, p)),
        }
    }
    let term = Expr { terms: vec![Term { coef, factors: out }] };
    if spill.as_constant() == Some(c(1.0)) {
        term
    } else {
        term.mul(&spill)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if t.coef.im == 0.0 {
                write!(f, "{}", t.coef.re)?;
            } else {
                write!(f, "({})", t.coef)?;
            }
            for (a, p) in &t.factors {
                match a {
                    Atom::Var(v) => write!(f, "*{v}")?,
                    Atom::Exp(e) => write!(f, "*exp({e})")?,
                    Atom::Recip(e) => write!(f, "/({e})")?,
                    Atom::Sqrt(e) => write!(f, "*sqrt({e})")?,
                }
                if *p != 1 {
                    write!(f, "^{p}")?;
                }
            }
        }
        Ok(())
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::real(v)
    }
}

impl From<Var> for Expr {
    fn from(v: Var) -> Self {
        Expr::var(v)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(&self, &rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(&self, &rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(&self, &rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}
