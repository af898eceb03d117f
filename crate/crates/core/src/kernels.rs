//! Heat kernel, Schwinger-space propagator, Bochner-Martinelli kernel and the
//! regularized propagator on `R^d' x C^d`.
//!
//! Symbolic kernels live in the variables of vertex 1 (and vertex 2 for
//! two-point kernels) with the heat-kernel time `T(0)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ui};

use crate::error::{Error, Result};
use crate::exterior::{Expr, Form, Generator, Var, VarClass};
use crate::graph::Signature;
use crate::quad;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimePoint {
    pub z: Vec<Complex64>,
    pub x: Vec<f64>,
}

impl SpacetimePoint {
    pub fn new(z: Vec<Complex64>, x: Vec<f64>) -> Self {
        Self { z, x }
    }

    pub fn check(&self, sig: Signature) -> Result<()> {
        if self.z.len() != sig.d || self.x.len() != sig.d_prime {
            return Err(Error::InvalidArgument(format!(
                "point has {} complex and {} real coordinates, signature wants ({}, {})",
                self.z.len(),
                self.x.len(),
                sig.d,
                sig.d_prime
            )));
        }
        Ok(())
    }

    /// `2|z|^2 + |x|^2`.
    pub fn radius_sq(&self) -> f64 {
        2.0 * self.z.iter().map(|z| z.norm_sqr()).sum::<f64>() + self.x.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { z: self.z.iter().map(|z| z * lambda).collect(), x: self.x.iter().map(|x| x * lambda).collect() }
    }

    /// Variable assignment for vertex 1.
    pub fn env(&self) -> impl Fn(Var) -> Complex64 + '_ {
        move |v| match v {
            Var::Z(1, k) => self.z[k as usize - 1],
            Var::Zbar(1, k) => self.z[k as usize - 1].conj(),
            Var::X(1, k) => c(self.x[k as usize - 1]),
            _ => c(0.0),
        }
    }
}

fn zv(i: u16, k: usize) -> Expr {
    Expr::var(Var::Z(i, k as u16))
}
fn zbv(i: u16, k: usize) -> Expr {
    Expr::var(Var::Zbar(i, k as u16))
}
fn xv(i: u16, k: usize) -> Expr {
    Expr::var(Var::X(i, k as u16))
}
fn tv() -> Expr {
    Expr::var(Var::T(0))
}

/// `t^(-p)` for half-integer `p`.
fn t_pow_neg(p2: i32) -> Expr {
    let mut e = tv().powi(-(p2 / 2));
    if p2 % 2 == 1 {
        e = e.mul(&tv().sqrt().recip());
    }
    e
}

/// Anti-holomorphic top generators of one point, sorted.
pub fn point_generators(sig: Signature, vertex: u16) -> Vec<Generator> {
    let mut g: Vec<Generator> = (1..=sig.d as u16).map(|k| Generator::Dzbar(vertex, k)).collect();
    g.extend((1..=sig.d_prime as u16).map(|k| Generator::Dx(vertex, k)));
    g
}

/// Heat kernel `H(t, z, x)` at vertex 1 as a form.
pub fn heat_kernel_form(sig: Signature) -> Form<Expr> {
    let r = Expr::sum(
        (1..=sig.d)
            .map(|k| zv(1, k).mul(&zbv(1, k)).scale(c(2.0)))
            .chain((1..=sig.d_prime).map(|k| xv(1, k).powi(2))),
    );
    let expo = r.mul(&tv().recip()).scale(c(-0.25)).exp();
    let pref = 1.0 / (2f64.powi(sig.dim() as i32) * PI.powf(sig.half_dim()));
    let coef = expo.mul(&t_pow_neg((2 * sig.d + sig.d_prime) as i32)).scale(c(pref));
    Form::monomial(&point_generators(sig, 1), coef)
}

/// Heat kernel coefficient at a numeric point.
pub fn heat_kernel(sig: Signature, t: f64, p: &SpacetimePoint) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveParameter(0, t));
    }
    p.check(sig)?;
    let s = sig.half_dim();
    Ok((-p.radius_sq() / (4.0 * t)).exp() / (2f64.powi(sig.dim() as i32) * (PI * t).powf(s)))
}

/// `dbar^* = -2 sum_i d/dz_i i_{d/dzbar_i}` at vertex `v`.
pub fn dbar_star(sig: Signature, form: &Form<Expr>, v: u16) -> Form<Expr> {
    let mut out = Form::zero();
    for k in 1..=sig.d as u16 {
        let mut field = BTreeMap::new();
        field.insert(Generator::Dzbar(v, k), Expr::one());
        let contracted = form.contract(&field);
        out = out.add(&contracted.map(|e| e.diff(Var::Z(v, k)).scale(c(-2.0))));
    }
    out
}

/// `d^* = -sum_i d/dx_i i_{d/dx_i}` at vertex `v`.
pub fn d_star(sig: Signature, form: &Form<Expr>, v: u16) -> Form<Expr> {
    let mut out = Form::zero();
    for k in 1..=sig.d_prime as u16 {
        let mut field = BTreeMap::new();
        field.insert(Generator::Dx(v, k), Expr::one());
        let contracted = form.contract(&field);
        out = out.add(&contracted.map(|e| e.diff(Var::X(v, k)).neg()));
    }
    out
}

/// Pull a one-point form at vertex 1 back along `p -> p_1 - p_2`.
pub fn two_point(sig: Signature, form: &Form<Expr>) -> Form<Expr> {
    let mut s = BTreeMap::new();
    for k in 1..=sig.d {
        s.insert(Var::Z(1, k as u16), zv(1, k).sub(&zv(2, k)));
        s.insert(Var::Zbar(1, k as u16), zbv(1, k).sub(&zbv(2, k)));
    }
    for k in 1..=sig.d_prime {
        s.insert(Var::X(1, k as u16), xv(1, k).sub(&xv(2, k)));
    }
    form.pullback_partial(&s)
}

/// `P_t = -dt ^ (dbar^* + d^*) H + H`, one-point version at vertex 1.
pub fn schwinger_propagator_one_point(sig: Signature) -> Form<Expr> {
    let h = heat_kernel_form(sig);
    let q = dbar_star(sig, &h, 1).add(&d_star(sig, &h, 1));
    Form::<Expr>::generator(Generator::Dt(0)).wedge(&q).neg().add(&h)
}

/// Two-point propagator between vertex 1 and vertex 2, from the definition.
pub fn schwinger_propagator(sig: Signature) -> Form<Expr> {
    two_point(sig, &schwinger_propagator_one_point(sig))
}

/// The same propagator built as `pi^-(d+d'/2) exp(-(z-w).u - v.v) d^d u d^d' v`
/// with `u = (zbar - wbar)/2t`, `v = (x - y)/(2 sqrt t)`, via pullback from
/// auxiliary variables.
pub fn schwinger_propagator_uv(sig: Signature) -> Form<Expr> {
    let d = sig.d;
    let u = |k: usize| Expr::var(Var::Aux(k as u16));
    let v = |k: usize| Expr::var(Var::Aux((d + k) as u16));
    let expo = Expr::sum(
        (1..=d)
            .map(|k| zv(1, k).sub(&zv(2, k)).mul(&u(k)))
            .chain((1..=sig.d_prime).map(|k| v(k).powi(2))),
    )
    .neg()
    .exp()
    .scale(c(PI.powf(-sig.half_dim())));
    let gens: Vec<Generator> = (1..=d + sig.d_prime).map(|k| Generator::Daux(k as u16)).collect();
    let aux_form = Form::monomial(&gens, expo);
    let mut s = BTreeMap::new();
    let two_t = tv().scale(c(2.0));
    for k in 1..=d {
        s.insert(Var::Aux(k as u16), zbv(1, k).sub(&zbv(2, k)).mul(&two_t.recip()));
    }
    let two_sqrt_t = tv().sqrt().scale(c(2.0));
    for k in 1..=sig.d_prime {
        s.insert(Var::Aux((d + k) as u16), xv(1, k).sub(&xv(2, k)).mul(&two_sqrt_t.recip()));
    }
    aux_form.pullback_partial(&s)
}

/// `(d_t + dbar + d) P`.
pub fn propagator_differential(p: &Form<Expr>) -> Form<Expr> {
    p.exterior_derivative(&[VarClass::Schwinger, VarClass::AntiHolomorphic, VarClass::Real])
}

/// Coefficient of the real Euler field in the contraction identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EulerConvention {
    /// `x d/dx`, as printed.
    Literal,
    /// `1/2 x d/dx`, the generator of the scaling that fixes `u` and `v`.
    Half,
}

/// `(i_{Eu_t} + i_{Eu_zbar} + i_{Eu_wbar} + i_{Eu_x} + i_{Eu_y}) P`.
pub fn euler_contraction(sig: Signature, p: &Form<Expr>, conv: EulerConvention) -> Form<Expr> {
    let cx = match conv {
        EulerConvention::Literal => 1.0,
        EulerConvention::Half => 0.5,
    };
    let mut field = BTreeMap::new();
    field.insert(Generator::Dt(0), tv());
    for v in 1..=2u16 {
        for k in 1..=sig.d {
            field.insert(Generator::Dzbar(v, k as u16), zbv(v, k));
        }
        for k in 1..=sig.d_prime {
            field.insert(Generator::Dx(v, k as u16), xv(v, k).scale(c(cx)));
        }
    }
    p.contract(&field)
}

/// Normalization of the real components of the Bochner-Martinelli kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BmNormalization {
    /// Prefactor `2^d Gamma(s) / pi^s` on every component, as printed.
    Displayed,
    /// The `t`-integral of `(dbar^* + d^*) H`: the `x` components carry half of
    /// the printed prefactor.
    Corrected,
}

impl BmNormalization {
    /// `(C_z, C_x)` with `s = d + d'/2`.
    pub fn constants(self, sig: Signature) -> (f64, f64) {
        let s = sig.half_dim();
        let cz = 2f64.powi(sig.d as i32) * gamma(s) / PI.powf(s);
        match self {
            BmNormalization::Displayed => (cz, cz),
            BmNormalization::Corrected => (cz, cz / 2.0),
        }
    }
}

/// Bochner-Martinelli kernel at vertex 1 as a symbolic form:
/// `sum_i (-1)^(i-1) C_z zbar_i R^-s [no dzbar_i] + sum_j (-1)^(d+j-1) C_x x_j R^-s [no dx_j]`
/// with `R = 2|z|^2 + |x|^2`.
pub fn bochner_martinelli_form(sig: Signature, norm: BmNormalization) -> Form<Expr> {
    let (cz, cx) = norm.constants(sig);
    let r = Expr::sum(
        (1..=sig.d)
            .map(|k| zv(1, k).mul(&zbv(1, k)).scale(c(2.0)))
            .chain((1..=sig.d_prime).map(|k| xv(1, k).powi(2))),
    );
    let p2 = (2 * sig.d + sig.d_prime) as i32;
    let mut rs = r.powi(-(p2 / 2));
    if p2 % 2 == 1 {
        rs = rs.mul(&r.sqrt().recip());
    }
    let gens = point_generators(sig, 1);
    let mut out = Form::zero();
    for (pos, g) in gens.iter().enumerate() {
        let mut rest = gens.clone();
        rest.remove(pos);
        let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
        let coef = match *g {
            Generator::Dzbar(1, k) => zbv(1, k as usize).scale(c(sign * cz)),
            Generator::Dx(1, k) => xv(1, k as usize).scale(c(sign * cx)),
            _ => unreachable!(),
        };
        out = out.add(&Form::monomial(&rest, coef.mul(&rs)));
    }
    out
}

/// Components of the Bochner-Martinelli kernel at `p`.
pub fn bochner_martinelli(sig: Signature, p: &SpacetimePoint, norm: BmNormalization) -> Result<Form<Complex64>> {
    p.check(sig)?;
    if p.radius_sq() == 0.0 {
        return Err(Error::Singular("Bochner-Martinelli kernel at the origin".into()));
    }
    let (cz, cx) = norm.constants(sig);
    let r = p.radius_sq();
    Ok(kernel_components(sig, p, cz * r.powf(-sig.half_dim()), cx * r.powf(-sig.half_dim())))
}

/// Form `sum_i (-1)^(i-1) a zbar_i [no dzbar_i] + sum_j (-1)^(d+j-1) b x_j [no dx_j]`.
fn kernel_components(sig: Signature, p: &SpacetimePoint, a: f64, b: f64) -> Form<Complex64> {
    let gens = point_generators(sig, 1);
    let mut out = Form::zero();
    for (pos, g) in gens.iter().enumerate() {
        let mut rest = gens.clone();
        rest.remove(pos);
        let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
        let v = match *g {
            Generator::Dzbar(1, k) => p.z[k as usize - 1].conj() * a,
            Generator::Dx(1, k) => c(p.x[k as usize - 1] * b),
            _ => unreachable!(),
        };
        out = out.add(&Form::monomial(&rest, v * sign));
    }
    out
}

/// `int_eps^L t^(-s-1) exp(-a/t) dt` by adaptive quadrature in `log t`.
pub fn regularized_time_integral(s: f64, a: f64, eps: f64, l: f64) -> f64 {
    if eps >= l {
        return 0.0;
    }
    let f = |u: f64| {
        let t = u.exp();
        c(t.powf(-s) * (-a / t).exp())
    };
    let (v, _) = quad::adaptive(&f, eps.ln(), l.ln(), 1e-14 * a.powf(-s).max(1.0), 60);
    v.re
}

/// Closed form of the same integral through the upper incomplete gamma
/// function; used as an independent check.
pub fn regularized_time_integral_exact(s: f64, a: f64, eps: f64, l: f64) -> f64 {
    a.powf(-s) * (gamma_ui(s, a / l) - gamma_ui(s, a / eps))
}

/// `int_eps^L (dbar^* + d^*) H dt` at `p`.
pub fn regularized_propagator(sig: Signature, eps: f64, l: f64, p: &SpacetimePoint) -> Result<Form<Complex64>> {
    p.check(sig)?;
    if !(eps > 0.0) || eps > l {
        return Err(Error::InvalidArgument(format!("need 0 < eps <= L, got eps={eps}, L={l}")));
    }
    if eps == l {
        return Ok(Form::zero());
    }
    // (dbar^* + d^*) H has zbar_i components h/t and x_j components h/(2t)
    let s = sig.half_dim();
    let a = p.radius_sq() / 4.0;
    let pref = 1.0 / (2f64.powi(sig.dim() as i32) * PI.powf(s));
    let i = pref * regularized_time_integral(s, a, eps, l);
    Ok(kernel_components(sig, p, i, i / 2.0))
}

/// Green's identity pairing `-int (dphi ^ K)` for `phi = exp(-|z|^2 - |x|^2)`,
/// which should equal `phi(0) = 1` for a propagator `K`.
///
/// For the kernel with constants `(C_z, C_x)` this is
/// `int (C_z |z|^2 + 2 C_x |x|^2) R^-s phi dLeb`, evaluated in polar
/// coordinates of the `(|z|, |x|)` quarter plane out to radius 8.
pub fn greens_pairing(sig: Signature, norm: BmNormalization, nodes: usize) -> f64 {
    let (cz, cx) = norm.constants(sig);
    let (d, dp) = (sig.d as f64, sig.d_prime as f64);
    let s = sig.half_dim();
    let area = |n: f64| if n == 0.0 { 1.0 } else { 2.0 * PI.powf(n / 2.0) / gamma(n / 2.0) };
    let az = area(2.0 * d);
    let ax = area(dp);
    let radius = 8.0;
    let rule = quad::legendre_unit(nodes);
    let radial = |rz: f64, rx: f64| {
        let r = 2.0 * rz * rz + rx * rx;
        let phi = (-rz * rz - rx * rx).exp();
        let jac = az * if d > 0.0 { rz.powf(2.0 * d - 1.0) } else { 1.0 } * ax * if dp > 0.0 { rx.powf(dp - 1.0) } else { 1.0 };
        (cz * rz * rz + 2.0 * cx * rx * rx) * r.powf(-s) * phi * jac
    };
    let mut total = 0.0;
    if sig.d == 0 || sig.d_prime == 0 {
        let one = |r: f64| if sig.d == 0 { radial(0.0, r) } else { radial(r, 0.0) };
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * radius * one(radius * x);
        }
        return total;
    }
    for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
        let rho = radius * x;
        for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
            let th = 0.5 * PI * y;
            total += wx * wy * radius * 0.5 * PI * rho * radial(rho * th.cos(), rho * th.sin());
        }
    }
    total
}

/// `int H(s, p - y) H(t, y) dLeb(y)` by Gauss-Hermite in the variables of
/// `H(t, .)`.
pub fn heat_convolution(sig: Signature, s: f64, t: f64, p: &SpacetimePoint, nodes: usize) -> Result<f64> {
    p.check(sig)?;
    let rule = quad::hermite(nodes);
    let dim = sig.real_dim();
    // y_z = sqrt(2t) u per real component, y_x = sqrt(4t) u
    let scale_z = (2.0 * t).sqrt();
    let scale_x = (4.0 * t).sqrt();
    let jac = scale_z.powi(2 * sig.d as i32) * scale_x.powi(sig.d_prime as i32);
    let norm_t = 1.0 / (2f64.powi(sig.dim() as i32) * (PI * t).powf(sig.half_dim()));
    let n = rule.nodes.len();
    let mut total = 0.0;
    for mut idx in 0..n.pow(dim as u32) {
        let mut w = 1.0;
        let mut u = Vec::with_capacity(dim);
        for _ in 0..dim {
            let k = idx % n;
            idx /= n;
            u.push(rule.nodes[k]);
            w *= rule.weights[k];
        }
        let q = SpacetimePoint {
            z: (0..sig.d)
                .map(|k| p.z[k] - Complex64::new(scale_z * u[2 * k], scale_z * u[2 * k + 1]))
                .collect(),
            x: (0..sig.d_prime).map(|k| p.x[k] - scale_x * u[2 * sig.d + k]).collect(),
        };
        total += w * heat_kernel(sig, s, &q)?;
    }
    Ok(total * norm_t * jac)
}

/// Lebesgue mass of `H(t, .)` by Gauss-Hermite.
pub fn heat_mass(sig: Signature, t: f64) -> Result<f64> {
    let rule = quad::hermite(20);
    let dim = sig.real_dim();
    let scale_z = (2.0 * t).sqrt();
    let scale_x = (4.0 * t).sqrt();
    let jac = scale_z.powi(2 * sig.d as i32) * scale_x.powi(sig.d_prime as i32);
    let n = rule.nodes.len();
    let mut total = 0.0;
    for mut idx in 0..n.pow(dim as u32) {
        let mut w = 1.0;
        let mut u = Vec::with_capacity(dim);
        for _ in 0..dim {
            let k = idx % n;
            idx /= n;
            u.push(rule.nodes[k]);
            w *= rule.weights[k];
        }
        let q = SpacetimePoint {
            z: (0..sig.d).map(|k| Complex64::new(scale_z * u[2 * k], scale_z * u[2 * k + 1])).collect(),
            x: (0..sig.d_prime).map(|k| scale_x * u[2 * sig.d + k]).collect(),
        };
        let r2: f64 = u.iter().map(|x| x * x).sum();
        total += w * r2.exp() * heat_kernel(sig, t, &q)?;
    }
    Ok(total * jac)
}
