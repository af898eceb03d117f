//! Differential forms over a fixed, globally ordered set of odd generators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

use super::expr::{Expr, Var, VarClass};
use crate::error::{Error, Result};

/// Odd generators. The derived order (kind first, then indices) is the global
/// sign convention: positions come before Schwinger generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Generator {
    Dz(u16, u16),
    Dzbar(u16, u16),
    Dx(u16, u16),
    Dt(u16),
    Dxi(u16),
    Drho(u16),
    Daux(u16),
}

impl Generator {
    pub fn of(v: Var) -> Generator {
        match v {
            Var::Z(i, k) => Generator::Dz(i, k),
            Var::Zbar(i, k) => Generator::Dzbar(i, k),
            Var::X(i, k) => Generator::Dx(i, k),
            Var::T(e) => Generator::Dt(e),
            Var::Xi(e) => Generator::Dxi(e),
            Var::Rho(l) => Generator::Drho(l),
            Var::Aux(a) => Generator::Daux(a),
        }
    }

    pub fn var(self) -> Var {
        match self {
            Generator::Dz(i, k) => Var::Z(i, k),
            Generator::Dzbar(i, k) => Var::Zbar(i, k),
            Generator::Dx(i, k) => Var::X(i, k),
            Generator::Dt(e) => Var::T(e),
            Generator::Dxi(e) => Var::Xi(e),
            Generator::Drho(l) => Var::Rho(l),
            Generator::Daux(a) => Var::Aux(a),
        }
    }

    pub fn is_position(self) -> bool {
        matches!(self, Generator::Dz(..) | Generator::Dzbar(..) | Generator::Dx(..))
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.var())
    }
}

/// Coefficient ring of a form.
pub trait Coeff: Clone + PartialEq + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
}

impl Coeff for Expr {
    fn zero() -> Self {
        Expr::zero()
    }
    fn one() -> Self {
        Expr::one()
    }
    fn is_zero(&self) -> bool {
        Expr::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        Expr::add(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Expr::mul(self, o)
    }
    fn neg(&self) -> Self {
        Expr::neg(self)
    }
}

impl Coeff for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn is_zero(&self) -> bool {
        *self == Complex64::new(0.0, 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
}

/// Sign of sorting `gens` into increasing order, or `None` on a repeat.
pub fn sort_sign(gens: &[Generator]) -> Option<(Vec<Generator>, i32)> {
    let mut v = gens.to_vec();
    let mut sign = 1;
    // insertion sort counting transpositions
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

/// Sign of merging two sorted disjoint lists, or `None` if they overlap.
fn merge_sign(a: &[Generator], b: &[Generator]) -> Option<(Vec<Generator>, bool)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut odd = false;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                // b[j] jumps over the remaining a's
                if (a.len() - i) % 2 == 1 {
                    odd = !odd;
                }
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => return None,
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    Some((out, odd))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Form<C: Coeff> {
    terms: BTreeMap<Vec<Generator>, C>,
}

impl<C: Coeff> Default for Form<C> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<C: Coeff> Form<C> {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new() }
    }

    pub fn scalar(c: C) -> Self {
        Self::monomial(&[], c)
    }

    pub fn generator(g: Generator) -> Self {
        Self::monomial(&[g], C::one())
    }

    /// `c * g_1 ^ ... ^ g_k` with the generators in the given order.
    pub fn monomial(gens: &[Generator], c: C) -> Self {
        let mut f = Self::zero();
        if let Some((sorted, sign)) = sort_sign(gens) {
            let c = if sign < 0 { c.neg() } else { c };
            f.insert(sorted, c);
        }
        f
    }

    fn insert(&mut self, key: Vec<Generator>, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&key) {
            Some(v) => {
                let s = v.add(&c);
                if s.is_zero() {
                    self.terms.remove(&key);
                } else {
                    *v = s;
                }
            }
            None => {
                self.terms.insert(key, c);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Generator>, &C)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Degrees present, sorted.
    pub fn degrees(&self) -> Vec<usize> {
        let s: BTreeSet<usize> = self.terms.keys().map(Vec::len).collect();
        s.into_iter().collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut f = self.clone();
        for (k, v) in &o.terms {
            f.insert(k.clone(), v.clone());
        }
        f
    }

    pub fn neg(&self) -> Self {
        self.map(|c| c.neg())
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut f = Self::zero();
        for (k, v) in &self.terms {
            f.insert(k.clone(), v.mul(c));
        }
        f
    }

    pub fn map<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Form<D> {
        let mut out = Form::<D>::zero();
        for (k, v) in &self.terms {
            out.insert(k.clone(), f(v));
        }
        out
    }

    pub fn wedge(&self, o: &Self) -> Self {
        let mut f = Self::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &o.terms {
                if let Some((key, odd)) = merge_sign(a, b) {
                    let p = ca.mul(cb);
                    f.insert(key, if odd { p.neg() } else { p });
                }
            }
        }
        f
    }

    /// Keep only terms whose generator set passes `keep`.
    pub fn filter(&self, keep: impl Fn(&[Generator]) -> bool) -> Self {
        Self { terms: self.terms.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }

    pub fn homogeneous(&self, degree: usize) -> Self {
        self.filter(|k| k.len() == degree)
    }

    /// Coefficient of `g_1 ^ ... ^ g_k` in the requested order.
    pub fn top_component(&self, gens: &[Generator]) -> C {
        match sort_sign(gens) {
            Some((sorted, sign)) => match self.terms.get(&sorted) {
                Some(c) if sign < 0 => c.neg(),
                Some(c) => c.clone(),
                None => C::zero(),
            },
            None => C::zero(),
        }
    }

    /// Interior product with a constant-coefficient-free vector field given by
    /// its components along each generator.
    pub fn contract_with(&self, field: &BTreeMap<Generator, C>) -> Self {
        let mut f = Self::zero();
        for (k, v) in &self.terms {
            for (j, g) in k.iter().enumerate() {
                if let Some(comp) = field.get(g) {
                    let mut rest = k.clone();
                    rest.remove(j);
                    let p = v.mul(comp);
                    f.insert(rest, if j % 2 == 1 { p.neg() } else { p });
                }
            }
        }
        f
    }
}

impl Form<Expr> {
    pub fn expr(e: Expr) -> Self {
        Self::scalar(e)
    }

    /// Exterior derivative restricted to the variables of the given classes:
    /// `d(f g_S) = sum_v df/dv dv ^ g_S`.
    pub fn exterior_derivative(&self, classes: &[VarClass]) -> Self {
        let mut f = Self::zero();
        for (k, v) in &self.terms {
            for var in v.vars() {
                if !classes.contains(&var.class()) {
                    continue;
                }
                let dv = v.diff(var);
                if dv.is_zero() {
                    continue;
                }
                let g = Generator::of(var);
                if let Some((key, odd)) = merge_sign(&[g], k) {
                    f.insert(key, if odd { dv.neg() } else { dv });
                }
            }
        }
        f
    }

    /// Full de Rham differential over every variable class.
    pub fn d(&self) -> Self {
        self.exterior_derivative(&[
            VarClass::Holomorphic,
            VarClass::AntiHolomorphic,
            VarClass::Real,
            VarClass::Schwinger,
            VarClass::Aux,
        ])
    }

    pub fn contract(&self, field: &BTreeMap<Generator, Expr>) -> Self {
        self.contract_with(field)
    }

    /// Pullback along a substitution defined for every variable that occurs.
    pub fn pullback(&self, subst: &BTreeMap<Var, Expr>) -> Result<Self> {
        for (k, v) in &self.terms {
            for var in v.vars().into_iter().chain(k.iter().map(|g| g.var())) {
                if !subst.contains_key(&var) {
                    return Err(Error::MissingSubstitution(var.to_string()));
                }
            }
        }
        Ok(self.pullback_partial(subst))
    }

    /// Pullback where unlisted variables stay fixed.
    pub fn pullback_partial(&self, subst: &BTreeMap<Var, Expr>) -> Self {
        let map = |v: Var| subst.get(&v).cloned();
        let mut cache: BTreeMap<Generator, Form<Expr>> = BTreeMap::new();
        let mut f = Self::zero();
        for (k, v) in &self.terms {
            let mut acc = Self::scalar(v.subst(&map));
            for g in k {
                let dg = cache
                    .entry(*g)
                    .or_insert_with(|| match subst.get(&g.var()) {
                        Some(e) => Form::scalar(e.clone()).d(),
                        None => Form::generator(*g),
                    })
                    .clone();
                acc = acc.wedge(&dg);
                if acc.is_empty() {
                    break;
                }
            }
            f = f.add(&acc);
        }
        f
    }

    pub fn eval(&self, env: &dyn Fn(Var) -> Complex64) -> Form<Complex64> {
        self.map(|e| e.eval(env))
    }

    pub fn is_numerically_zero(&self, seed: u64) -> bool {
        self.terms.values().all(|e| e.is_numerically_zero(seed))
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut s = BTreeSet::new();
        for (k, v) in &self.terms {
            s.extend(v.vars());
            s.extend(k.iter().map(|g| g.var()));
        }
        s
    }
}

impl<C: Coeff + fmt::Display> fmt::Display for Form<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (k, v)) in self.terms.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "[{v}]")?;
            for g in k {
                write!(f, " {g}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(i: u16) -> Generator {
        Generator::Dzbar(i, 1)
    }

    #[test]
    fn wedge_signs() {
        let a = Form::<f64>::generator(g(1));
        let b = Form::<f64>::generator(g(2));
        assert_eq!(a.wedge(&b).top_component(&[g(1), g(2)]), 1.0);
        assert_eq!(b.wedge(&a).top_component(&[g(1), g(2)]), -1.0);
        assert!(a.wedge(&a).is_empty());
        let c = Form::<f64>::monomial(&[g(2), g(1)], 3.0);
        assert_eq!(c.top_component(&[g(1), g(2)]), -3.0);
        assert_eq!(c.top_component(&[g(3)]), 0.0);
    }

    #[test]
    fn d_t_examples() {
        let t = Expr::var(Var::T(0));
        let f = Form::expr(t.powi(3));
        let df = f.d();
        assert_eq!(df.top_component(&[Generator::Dt(0)]), t.powi(2).scale(Complex64::new(3.0, 0.0)));
        assert!(df.d().is_empty());
        let zb = Expr::var(Var::Zbar(1, 1));
        let z = Expr::var(Var::Z(1, 1));
        let gauss = z.mul(&zb).neg().exp();
        let dbar = Form::expr(gauss.clone()).exterior_derivative(&[VarClass::AntiHolomorphic]);
        assert_eq!(dbar.top_component(&[Generator::Dzbar(1, 1)]), z.neg().mul(&gauss));
    }

    #[test]
    fn contraction_examples() {
        let t = Expr::var(Var::T(0));
        let mut field = BTreeMap::new();
        field.insert(Generator::Dt(0), Expr::one());
        assert_eq!(Form::<Expr>::generator(Generator::Dt(0)).contract(&field), Form::scalar(Expr::one()));
        let f = Form::monomial(&[Generator::Dzbar(1, 1)], t.clone());
        assert!(f.contract(&field).is_empty());
        let mut eu = BTreeMap::new();
        eu.insert(Generator::Dt(0), t.clone());
        let w = Form::<Expr>::monomial(&[Generator::Dt(0), Generator::Dzbar(1, 1)], Expr::one());
        let r = w.contract(&eu);
        // dzbar sorts before dt, so the contraction picks up a sign from the reorder
        assert_eq!(r.top_component(&[Generator::Dzbar(1, 1)]), t);
    }

    #[test]
    fn pullback_examples() {
        let t = Expr::var(Var::T(0));
        let rho = Expr::var(Var::Rho(0));
        let xi = Expr::var(Var::Xi(0));
        let f = Form::monomial(&[Generator::Dt(0)], t.exp());
        let mut s = BTreeMap::new();
        s.insert(Var::T(0), rho.mul(&xi));
        let p = f.pullback(&s).unwrap();
        let e = rho.mul(&xi).exp();
        assert_eq!(p.top_component(&[Generator::Drho(0)]), e.mul(&xi));
        assert_eq!(p.top_component(&[Generator::Dxi(0)]), e.mul(&rho));

        let mut id = BTreeMap::new();
        id.insert(Var::T(0), t.clone());
        assert_eq!(f.pullback(&id).unwrap(), f);

        let mut bad = BTreeMap::new();
        bad.insert(Var::Rho(0), rho.clone());
        assert!(matches!(f.pullback(&bad), Err(Error::MissingSubstitution(_))));

        let dt = Form::<Expr>::generator(Generator::Dt(0));
        let polar = dt.pullback(&s).unwrap();
        let mut restrict = BTreeMap::new();
        restrict.insert(Var::Rho(0), Expr::zero());
        restrict.insert(Var::Xi(0), xi.clone());
        assert!(polar.pullback(&restrict).unwrap().is_empty());
    }
}
