//! Gaussian integrals over vertex positions.
//!
//! A [`GaussianSpec`] carries a complex quadratic form `A` (weight
//! `exp(-sum w_a A_ab wbar_b)`) and a real one `B` (weight
//! `exp(-1/2 q.B.q)`). Moments are sums over perfect matchings: a permanent for
//! the `(w, wbar)` pairs and a hafnian for the real variables.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exterior::{Atom, Expr, Form, Generator, Var};
use crate::graph::Signature;
use crate::quad;

pub const MAX_DEGREE: usize = 12;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Monomial in the Gaussian variables, each index repeated by its power.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub w: Vec<usize>,
    pub wbar: Vec<usize>,
    pub q: Vec<usize>,
}

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn new(mut w: Vec<usize>, mut wbar: Vec<usize>, mut q: Vec<usize>) -> Self {
        w.sort_unstable();
        wbar.sort_unstable();
        q.sort_unstable();
        Self { w, wbar, q }
    }

    pub fn degree(&self) -> usize {
        self.w.len() + self.wbar.len() + self.q.len()
    }

    pub fn eval(&self, w: &[Complex64], q: &[f64]) -> Complex64 {
        let mut acc = c(1.0);
        for &a in &self.w {
            acc *= w[a];
        }
        for &b in &self.wbar {
            acc *= w[b].conj();
        }
        for &a in &self.q {
            acc *= q[a];
        }
        acc
    }
}

#[derive(Debug)]
pub struct GaussianSpec {
    a: DMatrix<Complex64>,
    b: DMatrix<f64>,
    a_inv: DMatrix<Complex64>,
    b_inv: DMatrix<f64>,
    norm: Complex64,
    memo: RefCell<HashMap<Monomial, Complex64>>,
}

impl Clone for GaussianSpec {
    fn clone(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            a_inv: self.a_inv.clone(),
            b_inv: self.b_inv.clone(),
            norm: self.norm,
            memo: RefCell::new(HashMap::new()),
        }
    }
}

impl GaussianSpec {
    /// `a` must be invertible (Hermitian positive definite for convergence);
    /// `b` symmetric positive definite.
    pub fn new(a: DMatrix<Complex64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || !b.is_square() {
            return Err(Error::InvalidArgument("quadratic forms must be square".into()));
        }
        let (det_b, b_inv) = if b.nrows() == 0 {
            (1.0, b.clone())
        } else if let Some(r) = m_matrix_inverse(&b) {
            r
        } else {
            let chol = b.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
            let l = chol.l();
            let det = l.diagonal().iter().map(|x| x * x).product::<f64>();
            (det, chol.inverse())
        };
        let real_a = a.iter().all(|x| x.im == 0.0);
        let (det_a, a_inv) = if a.nrows() == 0 {
            (c(1.0), a.clone())
        } else if let Some((det, inv)) = real_a.then(|| m_matrix_inverse(&a.map(|x| x.re))).flatten() {
            (c(det), inv.map(c))
        } else {
            let lu = a.clone().lu();
            let det = lu.determinant();
            let inv = lu.try_inverse().ok_or(Error::NotPositiveDefinite)?;
            (det, inv)
        };
        let nc = a.nrows() as i32;
        let nr = b.nrows() as f64;
        let norm = c(PI.powi(nc)) / det_a * ((2.0 * PI).powf(nr / 2.0) / det_b.sqrt());
        Ok(Self { a, b, a_inv, b_inv, norm, memo: RefCell::new(HashMap::new()) })
    }

    /// From precomputed inverses and determinants.
    pub fn with_inverses(a: DMatrix<Complex64>, a_inv: DMatrix<Complex64>, det_a: Complex64, b: DMatrix<f64>, b_inv: DMatrix<f64>, det_b: f64) -> Self {
        let nc = a.nrows() as i32;
        let nr = b.nrows() as f64;
        let norm = c(PI.powi(nc)) / det_a * ((2.0 * PI).powf(nr / 2.0) / det_b.sqrt());
        Self { a, b, a_inv, b_inv, norm, memo: RefCell::new(HashMap::new()) }
    }

    pub fn real_only(b: DMatrix<f64>) -> Result<Self> {
        Self::new(DMatrix::zeros(0, 0), b)
    }

    pub fn complex_only(a: DMatrix<Complex64>) -> Result<Self> {
        Self::new(a, DMatrix::zeros(0, 0))
    }

    pub fn complex_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn real_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn a(&self) -> &DMatrix<Complex64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Integral of the bare Gaussian.
    pub fn normalization(&self) -> Complex64 {
        self.norm
    }

    /// Unnormalized moment `int m(w, wbar, q) exp(...) dLeb`.
    pub fn gaussian_moment(&self, m: &Monomial) -> Result<Complex64> {
        Ok(self.norm * self.expectation(m)?)
    }

    /// Normalized moment: the matching sum alone.
    pub fn expectation(&self, m: &Monomial) -> Result<Complex64> {
        if m.degree() > MAX_DEGREE {
            return Err(Error::TooLarge(format!("monomial degree {} > {MAX_DEGREE}", m.degree())));
        }
        for &i in m.w.iter().chain(&m.wbar) {
            if i >= self.complex_dim() {
                return Err(Error::IndexOutOfRange(format!("complex variable {i}")));
            }
        }
        for &i in &m.q {
            if i >= self.real_dim() {
                return Err(Error::IndexOutOfRange(format!("real variable {i}")));
            }
        }
        if m.w.len() != m.wbar.len() || m.q.len() % 2 == 1 {
            return Ok(c(0.0));
        }
        if let Some(v) = self.memo.borrow().get(m) {
            return Ok(*v);
        }
        let v = permanent(&m.wbar, &m.w, &self.a_inv) * hafnian(&m.q, &self.b_inv);
        self.memo.borrow_mut().insert(m.clone(), v);
        Ok(v)
    }
}

/// Determinant and inverse of a symmetric diagonally dominant M-matrix by
/// subtraction-free elimination. `None` if `m` is not of that form.
pub fn m_matrix_inverse(m: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let n = m.nrows();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut s = vec![0.0; n];
    for i in 0..n {
        let mut row = m[(i, i)];
        for j in 0..n {
            if i != j {
                if m[(i, j)] > 0.0 || m[(i, j)] != m[(j, i)] {
                    return None;
                }
                w[(i, j)] = -m[(i, j)];
                row += m[(i, j)];
            }
        }
        if row < -1e-12 * m[(i, i)].abs() {
            return None;
        }
        s[i] = row.max(0.0);
    }
    m_matrix_inverse_parts(&w, &s)
}

/// [`m_matrix_inverse`] for the matrix with off-diagonal entries `-w_ij`
/// (`w_ij >= 0`, diagonal of `w` ignored) and row sums `s_i >= 0`. Accurate to
/// high relative precision however spread the weights are, since the small
/// row sums never pass through the large diagonal.
pub fn m_matrix_inverse_parts(w: &DMatrix<f64>, s: &[f64]) -> Option<(f64, DMatrix<f64>)> {
    let n = w.nrows();
    let mut w = w.clone();
    let mut s = s.to_vec();
    let mut d = vec![0.0; n];
    for k in 0..n {
        d[k] = s[k] + (k + 1..n).map(|j| w[(k, j)]).sum::<f64>();
        if !(d[k] > 0.0) {
            return None;
        }
        for i in k + 1..n {
            let f = w[(i, k)] / d[k];
            if f == 0.0 {
                continue;
            }
            s[i] += f * s[k];
            for j in k + 1..n {
                if j != i {
                    w[(i, j)] += f * w[(k, j)];
                }
            }
        }
    }
    // N = L^-1 with L_jk = -w_jk / d_k; all entries non-negative
    let mut nn = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for k in 0..i {
            nn[(i, k)] = (k..i).map(|m| w[(i, m)] / d[m] * nn[(m, k)]).sum();
        }
    }
    let inv = DMatrix::from_fn(n, n, |i, j| (i.max(j)..n).map(|m| nn[(m, i)] * nn[(m, j)] / d[m]).sum());
    Some((d.iter().product(), inv))
}

/// `sum_sigma prod_j M[rows_j, cols_sigma(j)]` by dynamic programming over
/// column subsets.
fn permanent(rows: &[usize], cols: &[usize], m: &DMatrix<Complex64>) -> Complex64 {
    let k = rows.len();
    if k == 0 {
        return c(1.0);
    }
    let mut dp = vec![c(0.0); 1 << k];
    dp[0] = c(1.0);
    for mask in 0..(1usize << k) {
        let r = mask.count_ones() as usize;
        let v = dp[mask];
        if r >= k || v == c(0.0) {
            continue;
        }
        for j in 0..k {
            if mask >> j & 1 == 0 {
                dp[mask | 1 << j] += v * m[(rows[r], cols[j])];
            }
        }
    }
    dp[(1 << k) - 1]
}

/// Sum over perfect matchings of `prod M[a, b]`.
fn hafnian(vars: &[usize], m: &DMatrix<f64>) -> f64 {
    let n = vars.len();
    if n == 0 {
        return 1.0;
    }
    let mut memo = vec![f64::NAN; 1 << n];
    fn rec(mask: usize, vars: &[usize], m: &DMatrix<f64>, memo: &mut [f64]) -> f64 {
        if mask == 0 {
            return 1.0;
        }
        if !memo[mask].is_nan() {
            return memo[mask];
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut s = 0.0;
        let mut r = rest;
        while r != 0 {
            let j = r.trailing_zeros() as usize;
            r &= r - 1;
            s += m[(vars[i], vars[j])] * rec(rest & !(1 << j), vars, m, memo);
        }
        memo[mask] = s;
        s
    }
    rec((1 << n) - 1, vars, m, &mut memo)
}

/// Tensor Gauss-Hermite oracle for the unnormalized moment, after Cholesky
/// whitening. Total real dimension `2 n_c + n_r` is capped at 4.
pub fn gaussian_moment_oracle(spec: &GaussianSpec, m: &Monomial) -> Result<Complex64> {
    let nc = spec.complex_dim();
    let nr = spec.real_dim();
    let dim = 2 * nc + nr;
    if dim > 4 {
        return Err(Error::TooLarge(format!("oracle dimension {dim} > 4")));
    }
    // complex part: A = C C^H, y = C^T w
    let (ct_inv, jac_c) = if nc > 0 {
        let a = spec.a();
        let herm = (a - a.adjoint()).norm() <= 1e-12 * a.norm();
        if !herm {
            return Err(Error::InvalidArgument("oracle needs a Hermitian complex form".into()));
        }
        let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let cl = chol.l();
        let det: f64 = cl.diagonal().iter().map(|x| x.norm_sqr()).product();
        (cl.transpose().try_inverse().ok_or(Error::NotPositiveDefinite)?, 1.0 / det)
    } else {
        (DMatrix::zeros(0, 0), 1.0)
    };
    // real part: B = L L^T, y = L^T q / sqrt 2
    let (lt_inv, jac_r) = if nr > 0 {
        let chol = spec.b().clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let det: f64 = l.diagonal().iter().product();
        (
            l.transpose().try_inverse().ok_or(Error::NotPositiveDefinite)? * 2f64.sqrt(),
            2f64.powf(nr as f64 / 2.0) / det,
        )
    } else {
        (DMatrix::zeros(0, 0), 1.0)
    };
    let nodes = if dim <= 2 { 64 } else { 16 };
    let rule = quad::hermite(nodes);
    let mut total = c(0.0);
    let n = rule.nodes.len();
    let count = n.pow(dim as u32);
    let mut y = vec![0.0; dim];
    for mut idx in 0..count {
        let mut wt = 1.0;
        for yi in y.iter_mut() {
            let k = idx % n;
            idx /= n;
            *yi = rule.nodes[k];
            wt *= rule.weights[k];
        }
        let yc: Vec<Complex64> = (0..nc).map(|a| Complex64::new(y[2 * a], y[2 * a + 1])).collect();
        let w: Vec<Complex64> = (0..nc)
            .map(|a| (0..nc).map(|b| ct_inv[(a, b)] * yc[b]).sum())
            .collect();
        let q: Vec<f64> = (0..nr)
            .map(|a| (0..nr).map(|b| lt_inv[(a, b)] * y[2 * nc + b]).sum())
            .collect();
        total += m.eval(&w, &q) * wt;
    }
    Ok(total * jac_c * jac_r)
}

/// Layout of the position variables of `n` vertices.
#[derive(Clone, Copy, Debug)]
pub struct PositionLayout {
    pub sig: Signature,
    pub vertices: usize,
}

impl PositionLayout {
    pub fn complex_index(&self, i: u16, k: u16) -> usize {
        (i as usize - 1) * self.sig.d + (k as usize - 1)
    }

    pub fn real_index(&self, i: u16, k: u16) -> usize {
        (i as usize - 1) * self.sig.d_prime + (k as usize - 1)
    }

    pub fn complex_count(&self) -> usize {
        self.vertices * self.sig.d
    }

    pub fn real_count(&self) -> usize {
        self.vertices * self.sig.d_prime
    }

    /// Top position form in orientation order: per vertex
    /// `dz_1 dzbar_1 ... dz_d dzbar_d dx_1 ... dx_d'`.
    pub fn volume_order(&self) -> Vec<Generator> {
        let mut v = Vec::new();
        for i in 1..=self.vertices as u16 {
            for k in 1..=self.sig.d as u16 {
                v.push(Generator::Dz(i, k));
                v.push(Generator::Dzbar(i, k));
            }
            for k in 1..=self.sig.d_prime as u16 {
                v.push(Generator::Dx(i, k));
            }
        }
        v
    }

    /// `int f dz_1 dzbar_1 = -2i int f dLeb` for each complex coordinate.
    pub fn volume_factor(&self) -> Complex64 {
        Complex64::new(0.0, -2.0).powi(self.complex_count() as i32)
    }

    pub fn position_generators(&self) -> Vec<Generator> {
        let mut v = self.volume_order();
        v.sort();
        v
    }
}

/// One Gaussian family found in a coefficient: exponent data and the
/// polynomial prefactor.
#[derive(Debug)]
struct GaussGroup {
    a: DMatrix<Complex64>,
    b: DMatrix<f64>,
    poly: Vec<(Monomial, Complex64)>,
}

fn same_form(x: &GaussGroup, a: &DMatrix<Complex64>, b: &DMatrix<f64>) -> bool {
    (&x.a - a).norm() <= 1e-14 * (1.0 + a.norm()) && (&x.b - b).norm() <= 1e-14 * (1.0 + b.norm())
}

/// Split a coefficient into `sum_groups exp(-wAwbar - qBq/2) * poly` with all
/// non-position variables evaluated through `env`.
fn parse_gaussian(
    e: &Expr,
    layout: &PositionLayout,
    env: &dyn Fn(Var) -> Complex64,
) -> Result<Vec<GaussGroup>> {
    let nc = layout.complex_count();
    let nr = layout.real_count();
    let mut groups: Vec<GaussGroup> = Vec::new();
    for t in e.terms() {
        let mut coef = t.coef;
        let mut mono = Monomial::default();
        let mut a = DMatrix::<Complex64>::zeros(nc, nc);
        let mut b = DMatrix::<f64>::zeros(nr, nr);
        let mut has_exp = false;
        for (atom, p) in &t.factors {
            match atom {
                Atom::Var(v) if v.is_position() => {
                    if *p < 0 {
                        return Err(Error::NonGaussian(format!("negative power of {v}")));
                    }
                    for _ in 0..*p {
                        match *v {
                            Var::Z(i, k) => mono.w.push(layout.complex_index(i, k)),
                            Var::Zbar(i, k) => mono.wbar.push(layout.complex_index(i, k)),
                            Var::X(i, k) => mono.q.push(layout.real_index(i, k)),
                            _ => unreachable!(),
                        }
                    }
                }
                Atom::Exp(arg) => {
                    has_exp = true;
                    coef *= parse_quadratic(arg, layout, env, &mut a, &mut b)?;
                }
                other => {
                    let atom_expr = atom_as_expr(other);
                    if atom_expr.vars().iter().any(|v| v.is_position()) {
                        return Err(Error::NonGaussian(format!("position-dependent factor {atom_expr}")));
                    }
                    coef *= atom_expr.eval(env).powi(*p);
                }
            }
        }
        if !has_exp {
            return Err(Error::NonGaussian("term without Gaussian decay".into()));
        }
        mono.w.sort_unstable();
        mono.wbar.sort_unstable();
        mono.q.sort_unstable();
        match groups.iter_mut().find(|g| same_form(g, &a, &b)) {
            Some(g) => g.poly.push((mono, coef)),
            None => groups.push(GaussGroup { a, b, poly: vec![(mono, coef)] }),
        }
    }
    Ok(groups)
}

/// Read `arg = -w A wbar - q B q / 2 + const` into `A`, `B`; returns `exp(const)`.
fn parse_quadratic(
    arg: &Expr,
    layout: &PositionLayout,
    env: &dyn Fn(Var) -> Complex64,
    a: &mut DMatrix<Complex64>,
    b: &mut DMatrix<f64>,
) -> Result<Complex64> {
    let mut constant = c(0.0);
    for t in arg.terms() {
        let mut coef = t.coef;
        let mut pos: Vec<Var> = Vec::new();
        for (atom, p) in &t.factors {
            match atom {
                Atom::Var(v) if v.is_position() => {
                    if *p < 0 {
                        return Err(Error::NonGaussian(format!("negative power of {v} in exponent")));
                    }
                    for _ in 0..*p {
                        pos.push(*v);
                    }
                }
                _ => {
                    let e = atom_as_expr(atom);
                    if e.vars().iter().any(|v| v.is_position()) {
                        return Err(Error::NonGaussian("non-polynomial exponent".into()));
                    }
                    coef *= e.eval(env).powi(*p);
                }
            }
        }
        match pos.as_slice() {
            [] => constant += coef,
            [Var::Z(i, k), Var::Zbar(j, l)] | [Var::Zbar(j, l), Var::Z(i, k)] => {
                a[(layout.complex_index(*i, *k), layout.complex_index(*j, *l))] -= coef;
            }
            [Var::X(i, k), Var::X(j, l)] => {
                if coef.im.abs() > 1e-14 * coef.norm() {
                    return Err(Error::NonGaussian("complex real-variable exponent".into()));
                }
                let (x, y) = (layout.real_index(*i, *k), layout.real_index(*j, *l));
                if x == y {
                    b[(x, x)] -= 2.0 * coef.re;
                } else {
                    b[(x, y)] -= coef.re;
                    b[(y, x)] -= coef.re;
                }
            }
            other => {
                return Err(Error::NonGaussian(format!("exponent term in {other:?}")));
            }
        }
    }
    Ok(constant.exp())
}

fn atom_as_expr(atom: &Atom) -> Expr {
    match atom {
        Atom::Var(v) => Expr::var(*v),
        Atom::Exp(x) => x.exp(),
        Atom::Recip(x) => x.recip(),
        Atom::Sqrt(x) => x.sqrt(),
    }
}

/// Integrate all position variables out of `form`. Terms lacking a full set
/// of position generators drop out; the rest become numeric coefficients of
/// the remaining (Schwinger) generators. Positions are integrated first:
/// `int (f V_pos ^ R) = (int f V_pos) R`.
pub fn integrate_positions(
    form: &Form<Expr>,
    layout: &PositionLayout,
    env: &dyn Fn(Var) -> Complex64,
) -> Result<Form<Complex64>> {
    let order = layout.volume_order();
    let sorted = layout.position_generators();
    let (_, sign) = crate::exterior::form::sort_sign(&order).expect("distinct generators");
    let factor = layout.volume_factor() * sign as f64;
    let mut out = Form::<Complex64>::zero();
    for (gens, coef) in form.terms() {
        let npos = gens.iter().filter(|g| g.is_position()).count();
        if npos != sorted.len() || gens[..npos] != sorted[..] {
            continue;
        }
        let rest = &gens[npos..];
        let mut value = c(0.0);
        for g in parse_gaussian(coef, layout, env)? {
            let spec = GaussianSpec::new(g.a, g.b)?;
            for (m, k) in &g.poly {
                value += k * spec.gaussian_moment(m)?;
            }
        }
        out = out.add(&Form::monomial(rest, value * factor));
    }
    Ok(out)
}

/// Convenience: Gaussian spec from real symmetric blocks.
pub fn spec_from_real(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GaussianSpec> {
    GaussianSpec::new(a.map(c), b.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn m_matrix_inverse_matches_lu() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, -1.0, -0.5, -1.0, 2.5, -1.0, -0.5, -1.0, 2.0]);
        let (det, inv) = m_matrix_inverse(&m).unwrap();
        assert!((det - m.determinant()).abs() < 1e-12 * det);
        assert!((inv - m.clone().try_inverse().unwrap()).norm() < 1e-12);
        assert!(m_matrix_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).is_none());
        // weights 1e16 and 1 on a path with unit grounding at the far end
        let big = 1e16;
        let w = DMatrix::from_row_slice(2, 2, &[0.0, big, big, 0.0]);
        let (det, inv) = m_matrix_inverse_parts(&w, &[0.0, 1.0]).unwrap();
        assert!((det - big).abs() < 1e-6 * big);
        assert!((inv[(0, 0)] - (1.0 + 1.0 / big)).abs() < 1e-12);
    }

    #[test]
    fn isserlis_q4() {
        let s = GaussianSpec::real_only(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let m = Monomial::new(vec![], vec![], vec![0, 0, 0, 0]);
        assert!((s.expectation(&m).unwrap() - c(3.0)).norm() < 1e-14);
        let o = gaussian_moment_oracle(&s, &m).unwrap() / s.normalization();
        assert!((o - c(3.0)).norm() < 1e-10);
    }

    #[test]
    fn single_pair() {
        let a = 2.5;
        let s = GaussianSpec::complex_only(DMatrix::from_element(1, 1, c(a))).unwrap();
        let m = Monomial::new(vec![0], vec![0], vec![]);
        assert!((s.expectation(&m).unwrap() - c(1.0 / a)).norm() < 1e-15);
        assert!((s.normalization() - c(PI / a)).norm() < 1e-14);
        assert_eq!(s.expectation(&Monomial::new(vec![0], vec![], vec![])).unwrap(), c(0.0));
        let o = gaussian_moment_oracle(&s, &Monomial::one()).unwrap();
        assert!((o - s.normalization()).norm() < 1e-12);
    }

    #[test]
    fn correlated_real() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let s = GaussianSpec::real_only(b.clone()).unwrap();
        let inv = b.try_inverse().unwrap();
        let m = Monomial::new(vec![], vec![], vec![0, 0, 1, 1]);
        let expect = inv[(0, 0)] * inv[(1, 1)] + 2.0 * inv[(0, 1)].powi(2);
        assert!((s.expectation(&m).unwrap().re - expect).abs() < 1e-14);
        let o = gaussian_moment_oracle(&s, &m).unwrap();
        assert!((o - s.gaussian_moment(&m).unwrap()).norm() < 1e-10 * o.norm());
    }

    #[test]
    fn oracle_agreement_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let nc = trial % 3;
            let nr = if nc == 2 { 0 } else { rng.gen_range(0..=(4 - 2 * nc).min(2)) };
            let ra = DMatrix::<f64>::from_fn(nc, nc, |_, _| rng.gen_range(-0.4..0.4));
            let a = (&ra * ra.transpose()) + DMatrix::identity(nc, nc) * 0.8;
            let rb = DMatrix::<f64>::from_fn(nr, nr, |_, _| rng.gen_range(-0.4..0.4));
            let b = (&rb * rb.transpose()) + DMatrix::identity(nr, nr) * 0.8;
            let s = spec_from_real(&a, &b).unwrap();
            let k = if nc > 0 { rng.gen_range(0..=2) } else { 0 };
            let w: Vec<usize> = (0..k).map(|_| rng.gen_range(0..nc)).collect();
            let wb: Vec<usize> = (0..k).map(|_| rng.gen_range(0..nc)).collect();
            let nq = if nr > 0 { rng.gen_range(0..=2) * 2 } else { 0 };
            let q: Vec<usize> = (0..nq).map(|_| rng.gen_range(0..nr)).collect();
            let m = Monomial::new(w, wb, q);
            let exact = s.gaussian_moment(&m).unwrap();
            let o = gaussian_moment_oracle(&s, &m).unwrap();
            assert!((exact - o).norm() <= 1e-8 * o.norm().max(1e-3), "{m:?} {exact} {o}");
        }
    }

    #[test]
    fn odd_and_unbalanced_vanish() {
        let s = spec_from_real(&DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(s.expectation(&Monomial::new(vec![], vec![], vec![0, 0, 0])).unwrap(), c(0.0));
        assert_eq!(s.expectation(&Monomial::new(vec![0, 1], vec![0], vec![])).unwrap(), c(0.0));
    }

    #[test]
    fn integrate_single_gaussian_form() {
        // int exp(-z zbar) dz dzbar = -2i pi over C
        let sig = Signature::new(1, 0).unwrap();
        let layout = PositionLayout { sig, vertices: 1 };
        let z = Expr::var(Var::Z(1, 1));
        let zb = Expr::var(Var::Zbar(1, 1));
        let f = Form::monomial(
            &[Generator::Dz(1, 1), Generator::Dzbar(1, 1), Generator::Dt(0)],
            z.mul(&zb).neg().exp().mul(&z).mul(&zb),
        );
        let r = integrate_positions(&f, &layout, &|_| c(0.0)).unwrap();
        let v = r.top_component(&[Generator::Dt(0)]);
        assert!((v - Complex64::new(0.0, -2.0 * PI)).norm() < 1e-13);
        // missing dz: the term dies
        let g = Form::monomial(&[Generator::Dzbar(1, 1)], z.mul(&zb).neg().exp());
        assert!(integrate_positions(&g, &layout, &|_| c(0.0)).unwrap().is_empty());
        // linear exponent is rejected
        let h = Form::monomial(&[Generator::Dz(1, 1), Generator::Dzbar(1, 1)], z.neg().exp());
        assert!(matches!(integrate_positions(&h, &layout, &|_| c(0.0)), Err(Error::NonGaussian(_))));
    }
}
