//! Sparse complex polynomials over numbered variables, used as a fast
//! coefficient ring once all non-position variables are fixed numerically.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use super::form::Coeff;

/// Monomial as a sorted multiset of variable indices.
pub type Mono = Vec<u16>;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    terms: BTreeMap<Mono, Complex64>,
}

fn merge(a: &[u16], b: &[u16]) -> Mono {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl Poly {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new() }
    }

    pub fn constant(c: Complex64) -> Self {
        let mut p = Self::zero();
        p.push(Vec::new(), c);
        p
    }

    pub fn var(i: u16) -> Self {
        let mut p = Self::zero();
        p.push(vec![i], Complex64::new(1.0, 0.0));
        p
    }

    /// `sum_i w_i x_i`.
    pub fn linear(weights: &[(u16, Complex64)]) -> Self {
        let mut p = Self::zero();
        for &(i, w) in weights {
            p.push(vec![i], w);
        }
        p
    }

    pub fn monomial(mut vars: Mono, c: Complex64) -> Self {
        vars.sort_unstable();
        let mut p = Self::zero();
        p.push(vars, c);
        p
    }

    fn push(&mut self, m: Mono, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let e = self.terms.entry(m).or_insert(Complex64::new(0.0, 0.0));
        *e += c;
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        if s == Complex64::new(0.0, 0.0) {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut p = self.clone();
        for (m, c) in &o.terms {
            p.push(m.clone(), *c);
        }
        p.prune()
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut p = Self::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                p.push(merge(ma, mb), ca * cb);
            }
        }
        p.prune()
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Self::constant(Complex64::new(1.0, 0.0)), |acc, _| acc.mul(self))
    }

    /// Partial derivative in variable `v`.
    pub fn diff(&self, v: u16) -> Self {
        let mut p = Self::zero();
        for (m, c) in &self.terms {
            let k = m.iter().filter(|&&i| i == v).count();
            if k == 0 {
                continue;
            }
            let mut rest = m.clone();
            let pos = rest.iter().position(|&i| i == v).unwrap();
            rest.remove(pos);
            p.push(rest, c * k as f64);
        }
        p.prune()
    }

    /// Replace each variable `v` by `f(v)`, keeping it when `f` returns `None`.
    pub fn substitute(&self, f: &dyn Fn(u16) -> Option<Poly>) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            let mut acc = Self::constant(*c);
            for &v in m {
                acc = match f(v) {
                    Some(q) => acc.mul(&q),
                    None => acc.mul(&Self::var(v)),
                };
                if acc.is_empty() {
                    break;
                }
            }
            out = out.add(&acc);
        }
        out
    }

    /// Evaluate with a variable lookup.
    pub fn eval_with(&self, x: &dyn Fn(u16) -> Complex64) -> Complex64 {
        self.terms.iter().map(|(m, c)| m.iter().fold(*c, |acc, &i| acc * x(i))).sum()
    }

    pub fn eval(&self, x: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(m, c)| m.iter().fold(*c, |acc, &i| acc * x[i as usize]))
            .sum()
    }
}

impl Coeff for Poly {
    fn zero() -> Self {
        Poly::zero()
    }
    fn one() -> Self {
        Poly::constant(Complex64::new(1.0, 0.0))
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn add(&self, o: &Self) -> Self {
        Poly::add(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Poly::mul(self, o)
    }
    fn neg(&self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({c})")?;
            for v in m {
                write!(f, "*v{v}")?;
            }
        }
        Ok(())
    }
}
