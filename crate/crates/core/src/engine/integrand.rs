//! The graph integrand at a fixed Schwinger point and its position integral.
//!
//! At fixed `t~` every propagator is `pi^-s exp(-w.u - v.v) prod_k (u_k)^n_k
//! d^d u d^d' v` with `u^e = sum_i rho^e_i zbar^i / (2 t~_e^2)` and
//! `v^e = sum_i rho^e_i x^i / (2 t~_e)`, so the integrand is a Gaussian times a
//! polynomial-coefficient form. Forms are kept as `(mask, Poly)` pairs over a
//! local numbering of generators: active position generators in global order,
//! then `dt~_0 .. dt~_{E-1}`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::source::{decode_var, pos_var, Kind, Positions, Source};
use crate::error::{Error, Result};
use crate::exterior::{Form, Generator, Poly};
use crate::graph::{mask_indices, DecoratedGraph, EdgeMask, Signature};
use crate::schwinger::Scaled;
use crate::wick::{m_matrix_inverse_parts, GaussianSpec, Monomial, PositionLayout};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `(-1)^{(d+d'-1) E (E-1)/2 + E}`.
pub fn global_sign(sig: Signature, e: usize) -> f64 {
    let k = sig.dim() - 1;
    if (k * e * e.saturating_sub(1) / 2 + e) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign of appending generator bit `g` to the sorted product `mask`.
fn wedge_sign(mask: u64, g: u32) -> bool {
    (mask >> (g + 1)).count_ones() % 2 == 1
}

pub type Terms = BTreeMap<u64, Poly>;

type Mono = Vec<u16>;

/// Wick selection data of a monomial: `sum (+-64^k)` over `z`/`zbar` in
/// direction `k`, and the parity mask of the real directions. Moments vanish
/// unless both cancel.
fn charge(m: &[u16]) -> (i64, u32) {
    let mut q = 0i64;
    let mut p = 0u32;
    for &v in m {
        let (kind, _, k) = decode_var(v);
        match kind {
            Kind::Z => q += 1 << (6 * (k - 1)),
            Kind::Zbar => q -= 1 << (6 * (k - 1)),
            Kind::X => p ^= 1 << (k - 1),
        }
    }
    (q, p)
}

fn merge_into(out: &mut Mono, a: &[u16], b: &[u16]) {
    out.clear();
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
}

fn insert(terms: &mut Terms, mask: u64, p: Poly) {
    match terms.get_mut(&mask) {
        Some(q) => {
            *q = q.add(&p);
            if q.is_empty() {
                terms.remove(&mask);
            }
        }
        None => {
            if !p.is_empty() {
                terms.insert(mask, p);
            }
        }
    }
}

/// Integrand data for one graph, signature and (optional) source.
pub struct Integrand<'a> {
    graph: &'a DecoratedGraph,
    sig: Signature,
    source: Option<&'a Source>,
    active: usize,
    layout: PositionLayout,
    bits: HashMap<Generator, u32>,
    pos_count: u32,
    pos_full: u64,
    allowed: u64,
    src_terms: Vec<(u64, Poly)>,
    src_monos: Vec<Vec<(Mono, Complex64, i64, u32)>>,
    cache: Mutex<HashMap<usize, Arc<Vec<Paired>>>>,
}

/// One block of the paired integrand: `prod_e t~_e^-pow_e sum_m c_m m` with
/// the `dt~` generators `dts`.
struct Paired {
    dts: u64,
    pow: Vec<u8>,
    monos: Vec<(Mono, Complex64)>,
}

fn t_power(t: &[f64], pow: &[u8]) -> f64 {
    t.iter().zip(pow).map(|(x, &k)| x.powi(-(k as i32))).product()
}

impl<'a> Integrand<'a> {
    pub fn new(graph: &'a DecoratedGraph, sig: Signature, source: &'a Source) -> Result<Self> {
        if source.vertices != graph.vertex_count() || source.sig != sig {
            return Err(Error::InvalidArgument("source does not match the graph".into()));
        }
        Self::build(graph, sig, Some(source), source.positions)
    }

    /// Propagator product only, without a source.
    pub fn bare(graph: &'a DecoratedGraph, sig: Signature, positions: Positions) -> Result<Self> {
        Self::build(graph, sig, None, positions)
    }

    fn build(graph: &'a DecoratedGraph, sig: Signature, source: Option<&'a Source>, positions: Positions) -> Result<Self> {
        if graph.has_self_loops() {
            return Err(Error::SelfLoop(graph.edges().iter().position(|e| e.is_loop()).unwrap_or(0)));
        }
        graph.check_decorations(sig)?;
        let active = match positions {
            Positions::Full => graph.vertex_count(),
            Positions::Relative => graph.vertex_count() - 1,
        };
        let layout = PositionLayout { sig, vertices: active };
        let pos_gens = layout.position_generators();
        let pos_count = pos_gens.len() as u32;
        if pos_count as usize + graph.edge_count() > 64 {
            return Err(Error::TooLarge("more than 64 generators".into()));
        }
        let mut bits = HashMap::new();
        for (b, g) in pos_gens.iter().enumerate() {
            bits.insert(*g, b as u32);
        }
        for e in 0..graph.edge_count() {
            bits.insert(Generator::Dt(e as u16), pos_count + e as u32);
        }
        let pos_full = if pos_count == 0 { 0 } else { u64::MAX >> (64 - pos_count) };
        let mut src_terms = Vec::new();
        let mut allowed = 0u64;
        if let Some(src) = source {
            for (gens, p) in src.form.terms() {
                let mut mask = 0u64;
                for g in gens {
                    let b = *bits
                        .get(g)
                        .ok_or_else(|| Error::InvalidArgument(format!("source generator {g} is not an active position")))?;
                    mask |= 1 << b;
                }
                allowed |= pos_full & !mask;
                src_terms.push((mask, p.clone()));
            }
        } else {
            allowed = pos_full;
        }
        let src_monos = src_terms
            .iter()
            .map(|(_, p)| {
                p.terms()
                    .map(|(m, c)| {
                        let (q, par) = charge(m);
                        (m.clone(), *c, q, par)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { graph, sig, source, active, layout, bits, pos_count, pos_full, allowed, src_terms, src_monos, cache: Mutex::new(HashMap::new()) })
    }

    pub fn layout(&self) -> PositionLayout {
        self.layout
    }

    /// `dt~`-degree of the reduced form for a source of `source_degree` non-holomorphic generators.
    pub fn dt_degree_for(sig: Signature, graph: &DecoratedGraph, positions: Positions, source_degree: usize) -> Option<usize> {
        let active = match positions {
            Positions::Full => graph.vertex_count(),
            Positions::Relative => graph.vertex_count() - 1,
        };
        let need = active * (sig.d + sig.d_prime);
        let from_props = need.checked_sub(source_degree)?;
        (graph.edge_count() * sig.dim()).checked_sub(from_props).filter(|&k| k <= graph.edge_count())
    }

    fn sum_rho(&self, e: usize, kind: Kind, k: usize, scale: f64) -> Poly {
        let w: Vec<(u16, Complex64)> = (1..=self.active)
            .filter_map(|i| {
                let r = self.graph.rho(e, i);
                (r != 0).then(|| (pos_var(kind, i, k), c(r as f64 * scale)))
            })
            .collect();
        Poly::linear(&w)
    }

    /// One-forms `du^e_k` then `dv^e_k` of edge `e`; an entry `(bit, p, k)`
    /// stands for `p * t~_e^-k`.
    fn edge_one_forms(&self, e: usize) -> Vec<Vec<(u32, Poly, u8)>> {
        let dt = self.bits[&Generator::Dt(e as u16)];
        let mut out = Vec::new();
        for k in 1..=self.sig.d {
            let mut f = Vec::new();
            for i in 1..=self.active {
                let r = self.graph.rho(e, i);
                if r != 0 {
                    f.push((self.bits[&Generator::Dzbar(i as u16, k as u16)], Poly::constant(c(0.5 * r as f64)), 2));
                }
            }
            f.push((dt, self.sum_rho(e, Kind::Zbar, k, -1.0), 3));
            out.push(f);
        }
        for k in 1..=self.sig.d_prime {
            let mut f = Vec::new();
            for i in 1..=self.active {
                let r = self.graph.rho(e, i);
                if r != 0 {
                    f.push((self.bits[&Generator::Dx(i as u16, k as u16)], Poly::constant(c(0.5 * r as f64)), 1));
                }
            }
            f.push((dt, self.sum_rho(e, Kind::X, k, -0.5), 2));
            out.push(f);
        }
        out
    }

    /// `prod_k (u^e_k)^{n_k}` as `(p, k)` standing for `p * t~_e^-k`.
    fn decoration(&self, e: usize) -> (Poly, u8) {
        let n = self.graph.edge(e).decoration_for(self.sig.d);
        let mut p = Poly::constant(c(1.0));
        let mut pow = 0u8;
        for (k, &nk) in n.iter().enumerate() {
            if nk > 0 {
                p = p.mul(&self.sum_rho(e, Kind::Zbar, k + 1, 0.5).pow(nk));
                pow += 2 * nk as u8;
            }
        }
        (p, pow)
    }

    fn dt_count(&self, mask: u64) -> usize {
        (mask >> self.pos_count).count_ones() as usize
    }

    /// The propagator product over `edges` with its `t~` dependence split off:
    /// entries `(mask, powers, p)` standing for `p * prod_e t~_e^-powers_e`.
    fn symbolic_product(&self, edges: EdgeMask, dt_budget: Option<usize>) -> Vec<(u64, Vec<u8>, Poly)> {
        let ne = self.graph.edge_count();
        let mut acc: BTreeMap<(u64, Vec<u8>), Poly> = BTreeMap::new();
        acc.insert((0, vec![0; ne]), Poly::constant(c(1.0)));
        for e in mask_indices(edges) {
            let (dec, dpow) = self.decoration(e);
            if dec.is_empty() {
                return Vec::new();
            }
            acc = acc
                .into_iter()
                .map(|((m, mut pw), p)| {
                    pw[e] += dpow;
                    ((m, pw), p.mul(&dec))
                })
                .collect();
            for form in self.edge_one_forms(e) {
                let mut next: BTreeMap<(u64, Vec<u8>), Poly> = BTreeMap::new();
                for ((mask, pw), p) in &acc {
                    for (g, q, k) in &form {
                        if mask >> g & 1 == 1 {
                            continue;
                        }
                        let nm = mask | 1 << g;
                        if let Some(budget) = dt_budget {
                            if nm & self.pos_full & !self.allowed != 0 || self.dt_count(nm) > budget {
                                continue;
                            }
                        }
                        let prod = p.mul(q);
                        let prod = if wedge_sign(*mask, *g) { prod.scale(c(-1.0)) } else { prod };
                        let mut npw = pw.clone();
                        npw[e] += k;
                        let slot = next.entry((nm, npw)).or_default();
                        *slot = slot.add(&prod);
                    }
                }
                next.retain(|_, p| !p.is_empty());
                acc = next;
            }
        }
        acc.into_iter().map(|((m, pw), p)| (m, pw, p)).collect()
    }

    /// Product over the edges in `edges` (increasing order) of decoration and
    /// one-forms, without the exponential and the constant prefactor. With a
    /// `dt_budget`, terms that cannot pair with the source or carry more `dt~`
    /// generators are dropped.
    pub fn propagator_product(&self, t: &[f64], edges: EdgeMask, dt_budget: Option<usize>) -> Terms {
        let mut out: Terms = BTreeMap::new();
        for (m, pw, p) in self.symbolic_product(edges, dt_budget) {
            insert(&mut out, m, p.scale(c(t_power(t, &pw))));
        }
        out
    }

    /// Propagator product paired with the source for one `dt~`-degree, with
    /// monomials that cannot survive the Wick contraction removed.
    fn paired(&self, dt_degree: usize) -> Arc<Vec<Paired>> {
        if let Some(p) = self.cache.lock().unwrap().get(&dt_degree) {
            return p.clone();
        }
        let mut acc: BTreeMap<(u64, Vec<u8>), BTreeMap<Mono, Complex64>> = BTreeMap::new();
        let mut buf: Mono = Vec::new();
        for (pm, pw, p) in self.symbolic_product(self.graph.full_mask(), Some(dt_degree)) {
            if self.dt_count(pm) != dt_degree {
                continue;
            }
            for (si, (sm, _)) in self.src_terms.iter().enumerate() {
                if pm & sm != 0 || (pm | sm) & self.pos_full != self.pos_full {
                    continue;
                }
                let odd = mask_indices(*sm).iter().filter(|&&g| wedge_sign(pm, g as u32)).count() % 2 == 1;
                let sign = if odd { -1.0 } else { 1.0 };
                let slot = acc.entry(((pm | sm) >> self.pos_count, pw.clone())).or_default();
                for (ma, ca) in p.terms() {
                    let (qa, pa) = charge(ma);
                    for (mb, cb, qb, pb) in &self.src_monos[si] {
                        if qa + qb != 0 || pa != *pb {
                            continue;
                        }
                        merge_into(&mut buf, ma, mb);
                        *slot.entry(buf.clone()).or_insert(c(0.0)) += ca * cb * sign;
                    }
                }
            }
        }
        let out: Vec<Paired> = acc
            .into_iter()
            .map(|((dts, pow), monos)| Paired { dts, pow, monos: monos.into_iter().filter(|(_, c)| c.norm() > 0.0).collect() })
            .filter(|p| !p.monos.is_empty())
            .collect();
        let out = Arc::new(out);
        self.cache.lock().unwrap().insert(dt_degree, out.clone());
        out
    }

    /// Quadratic forms at `t~`: `A = L(t~^2)/2 + Gz`, `B_k = L(t~^2)/2 + 2 Gx_k`.
    pub fn gaussian(&self, t: &[f64]) -> Result<GaussianSpec> {
        let n = self.graph.vertex_count();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for (e, edge) in self.graph.edges().iter().enumerate() {
            let w = 1.0 / (t[e] * t[e]);
            let (h, tl) = (edge.head - 1, edge.tail - 1);
            l[(h, h)] += w;
            l[(tl, tl)] += w;
            l[(h, tl)] -= w;
            l[(tl, h)] -= w;
        }
        let na = self.active;
        let (d, dp) = (self.sig.d, self.sig.d_prime);
        let mut a = DMatrix::<Complex64>::zeros(na * d, na * d);
        let mut b = DMatrix::<f64>::zeros(na * dp, na * dp);
        let gauss = self.source.and_then(|s| s.gaussian.as_ref());
        for i in 0..na {
            for j in 0..na {
                for k in 0..d {
                    let g = gauss.map_or(0.0, |(gz, _)| gz[(i, j)]);
                    a[(i * d + k, j * d + k)] = c(0.5 * l[(i, j)] + g);
                }
                for k in 0..dp {
                    let g = gauss.map_or(0.0, |(_, gx)| gx[k][(i, j)]);
                    b[(i * dp + k, j * dp + k)] = 0.5 * l[(i, j)] + 2.0 * g;
                }
            }
        }
        // Large edge weights swamp the source width in the assembled matrices;
        // factor from weights and row sums instead when possible.
        let zb = if d > 0 { self.m_block(t, gauss.map(|(gz, _)| gz), 1.0) } else { None };
        let xb: Option<Vec<_>> = (0..dp).map(|k| self.m_block(t, gauss.map(|(_, gx)| &gx[k]), 2.0)).collect();
        match (zb, xb) {
            (z, Some(xs)) if d == 0 || z.is_some() => {
                let mut a_inv = DMatrix::<Complex64>::zeros(na * d, na * d);
                let mut det_a = c(1.0);
                if let Some((det, inv)) = z {
                    for k in 0..d {
                        for i in 0..na {
                            for j in 0..na {
                                a_inv[(i * d + k, j * d + k)] = c(inv[(i, j)]);
                            }
                        }
                        det_a *= det;
                    }
                }
                let mut b_inv = DMatrix::<f64>::zeros(na * dp, na * dp);
                let mut det_b = 1.0;
                for (k, (det, inv)) in xs.into_iter().enumerate() {
                    for i in 0..na {
                        for j in 0..na {
                            b_inv[(i * dp + k, j * dp + k)] = inv[(i, j)];
                        }
                    }
                    det_b *= det;
                }
                Ok(GaussianSpec::with_inverses(a, a_inv, det_a, b, b_inv, det_b))
            }
            _ => GaussianSpec::new(a, b),
        }
    }

    /// Inverse and determinant of `L(t~^2)/2 + mult * g` on the active
    /// vertices through [`m_matrix_inverse_parts`], if that is an M-matrix.
    fn m_block(&self, t: &[f64], g: Option<&DMatrix<f64>>, mult: f64) -> Option<(f64, DMatrix<f64>)> {
        let na = self.active;
        let mut w = DMatrix::<f64>::zeros(na, na);
        let mut s = vec![0.0; na];
        for (e, edge) in self.graph.edges().iter().enumerate() {
            let x = 0.5 / (t[e] * t[e]);
            let (h, tl) = (edge.head - 1, edge.tail - 1);
            match (h < na, tl < na) {
                (true, true) => {
                    w[(h, tl)] += x;
                    w[(tl, h)] += x;
                }
                (true, false) => s[h] += x,
                (false, true) => s[tl] += x,
                (false, false) => {}
            }
        }
        if let Some(g) = g {
            for i in 0..na {
                let mut row = 0.0;
                for j in 0..na {
                    let v = mult * g[(i, j)];
                    row += v;
                    if i != j {
                        if v > 0.0 {
                            return None;
                        }
                        w[(i, j)] -= v;
                    }
                }
                if row < 0.0 {
                    return None;
                }
                s[i] += row;
            }
        }
        m_matrix_inverse_parts(&w, &s)
    }

    fn monomial(&self, m: &[u16]) -> Monomial {
        let mut out = Monomial::default();
        for &v in m {
            let (kind, i, k) = decode_var(v);
            match kind {
                Kind::Z => out.w.push(self.layout.complex_index(i as u16, k as u16)),
                Kind::Zbar => out.wbar.push(self.layout.complex_index(i as u16, k as u16)),
                Kind::X => out.q.push(self.layout.real_index(i as u16, k as u16)),
            }
        }
        Monomial::new(out.w, out.wbar, out.q)
    }

    /// `pi^{-s E}` times the global sign.
    pub fn prefactor(&self) -> f64 {
        let e = self.graph.edge_count();
        PI.powf(-self.sig.half_dim() * e as f64) * global_sign(self.sig, e)
    }

    /// Position integral of the integrand at `t~`: a form of `dt~`-degree
    /// `dt_degree` with numeric coefficients, and its majorant (sum of the
    /// absolute values of the individual Wick contributions).
    pub fn reduce(&self, t: &[f64], dt_degree: usize) -> Result<Scaled> {
        if self.source.is_none() {
            return Err(Error::Precondition("position integral needs a source".into()));
        }
        for (e, &x) in t.iter().enumerate() {
            if !(x > 0.0) {
                return Err(Error::NonPositiveParameter(e, x));
            }
        }
        let paired = self.paired(dt_degree);
        let order = self.layout.volume_order();
        let (_, vsign) = crate::exterior::form::sort_sign(&order).expect("distinct generators");
        let factor = self.layout.volume_factor() * (vsign as f64 * self.prefactor());
        let mut value = Form::<Complex64>::zero();
        let mut major = Form::<f64>::zero();
        if paired.is_empty() {
            return Ok((value, major));
        }
        let spec = self.gaussian(t)?;
        let mut memo: HashMap<&[u16], Complex64> = HashMap::new();
        let mut acc: BTreeMap<u64, (Complex64, f64)> = BTreeMap::new();
        for p in paired.iter() {
            let s = t_power(t, &p.pow);
            let mut v = c(0.0);
            let mut a = 0.0;
            for (m, k) in &p.monos {
                let mom = match memo.get(m.as_slice()) {
                    Some(x) => *x,
                    None => {
                        let x = spec.gaussian_moment(&self.monomial(m))?;
                        memo.insert(m.as_slice(), x);
                        x
                    }
                };
                let x = k * mom;
                v += x;
                a += x.norm();
            }
            let e = acc.entry(p.dts).or_insert((c(0.0), 0.0));
            e.0 += v * s;
            e.1 += a * s;
        }
        for (dts, (v, a)) in acc {
            let gens: Vec<Generator> = mask_indices(dts).into_iter().map(|e| Generator::Dt(e as u16)).collect();
            value = value.add(&Form::monomial(&gens, v * factor));
            major = major.add(&Form::monomial(&gens, a * factor.norm()));
        }
        Ok((value, major))
    }
}

/// Pick source generators for `dt_degree`: the first subset (in
/// lexicographic order of the volume-ordered generators) for which the
/// reduced form does not vanish at a probe point. Falls back to the first
/// subset when every candidate vanishes.
pub fn select_generators(
    graph: &DecoratedGraph,
    sig: Signature,
    spec: &super::source::TestSource,
    dt_degree: usize,
) -> Result<Vec<Generator>> {
    let active = match spec.positions {
        Positions::Full => graph.vertex_count(),
        Positions::Relative => graph.vertex_count() - 1,
    };
    let pool = Source::antiholomorphic_generators(sig, active);
    let props_positional = (graph.edge_count() * sig.dim())
        .checked_sub(dt_degree)
        .ok_or_else(|| Error::Precondition(format!("dt-degree {dt_degree} exceeds the edge count")))?;
    let m = (active * (sig.d + sig.d_prime)).checked_sub(props_positional).filter(|&m| m <= pool.len()).ok_or_else(|| {
        Error::Precondition(format!("no source gives a form of dt-degree {dt_degree} for this graph and signature"))
    })?;
    let probe: Vec<f64> = (0..graph.edge_count()).map(|e| 0.45 + 0.37 * ((e * 7 + 3) % 5) as f64 / 5.0).collect();
    let mut idx: Vec<usize> = (0..m).collect();
    let mut first = None;
    for _ in 0..2000 {
        let gens: Vec<Generator> = idx.iter().map(|&i| pool[i]).collect();
        let src = Source::compile(spec, sig, graph.vertex_count(), &gens)?;
        let ig = Integrand::new(graph, sig, &src)?;
        let (v, a) = ig.reduce(&probe, dt_degree)?;
        let vmax = v.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max);
        let amax = a.terms().map(|(_, c)| *c).fold(0.0, f64::max);
        if vmax > 1e-9 * amax && vmax > 0.0 {
            return Ok(gens);
        }
        first.get_or_insert(gens);
        // next combination
        let mut j = m;
        loop {
            if j == 0 {
                return Ok(first.unwrap_or_default());
            }
            j -= 1;
            if idx[j] < pool.len() - m + j {
                idx[j] += 1;
                for l in j + 1..m {
                    idx[l] = idx[l - 1] + 1;
                }
                break;
            }
        }
    }
    Ok(first.unwrap_or_default())
}

/// Size of the raw propagator product over `edges` at `t~`: the largest
/// coefficient after cancellation and the product of one-form majorants.
pub fn propagator_product_size(graph: &DecoratedGraph, sig: Signature, edges: EdgeMask, t: &[f64]) -> Result<(f64, f64)> {
    let ig = Integrand::bare(graph, sig, Positions::Full)?;
    let terms = ig.propagator_product(t, edges, None);
    let l1 = |p: &Poly| p.terms().map(|(_, c)| c.norm()).sum::<f64>();
    let max = terms.values().map(l1).fold(0.0, f64::max);
    let mut scale = 1.0;
    for e in mask_indices(edges) {
        let te = t[e];
        let (dec, k) = ig.decoration(e);
        scale *= (l1(&dec) * te.powi(-(k as i32))).max(1.0);
        for f in ig.edge_one_forms(e) {
            scale *= f.iter().map(|(_, p, k)| l1(p) * te.powi(-(*k as i32))).sum::<f64>();
        }
    }
    Ok((max, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::source::{PolyTerm, TestSource};
    use crate::exterior::{Expr, Var};
    use crate::graph::library;
    use crate::kernels;

    #[test]
    fn sign_prefactor() {
        let s = Signature::new(1, 0).unwrap();
        assert_eq!(global_sign(s, 1), -1.0);
        assert_eq!(global_sign(s, 2), 1.0);
        let s = Signature::new(1, 1).unwrap();
        assert_eq!(global_sign(s, 2), -1.0);
        assert_eq!(global_sign(s, 3), 1.0);
    }

    #[test]
    fn rank_deficient_product_vanishes() {
        let sig = Signature::new(2, 0).unwrap();
        let g = library::banana();
        let (max, scale) = propagator_product_size(&g, sig, g.full_mask(), &[0.7, 1.3]).unwrap();
        assert!(max <= 1e-12 * scale, "{max} {scale}");
        let tri = library::triangle();
        let (max, scale) = propagator_product_size(&tri, Signature::new(1, 1).unwrap(), tri.full_mask(), &[0.7, 1.3, 0.4]).unwrap();
        assert!(max > 1e-3 * scale);
    }

    /// Independent path: the symbolic propagator of the kernels module,
    /// pulled back to the graph, wedged with the source and integrated over
    /// `C x R` by Gauss-Hermite quadrature.
    #[test]
    fn single_edge_matches_brute_force() {
        let sig = Signature::new(1, 1).unwrap();
        let g = library::single_edge();
        let spec = TestSource {
            poly: vec![
                PolyTerm { re: 1.0, im: 0.0, vars: vec![] },
                PolyTerm { re: 0.3, im: -0.2, vars: vec!["z1.1".into()] },
                PolyTerm { re: 0.5, im: 0.0, vars: vec!["x1.1".into(), "x1.1".into()] },
            ],
            ..TestSource::default()
        }
        .relative();
        let src = Source::compile(&spec, sig, 2, &[Generator::Dzbar(1, 1)]).unwrap();
        let ig = Integrand::new(&g, sig, &src).unwrap();
        let tt = 0.8;
        let (v, _) = ig.reduce(&[tt], 1).unwrap();
        let engine = v.top_component(&[Generator::Dt(0)]);

        // kernel vertex 1 = head (base, pinned at 0), vertex 2 = tail
        let p = kernels::schwinger_propagator(sig);
        let mut sub = BTreeMap::new();
        sub.insert(Var::Z(1, 1), Expr::zero());
        sub.insert(Var::Zbar(1, 1), Expr::zero());
        sub.insert(Var::X(1, 1), Expr::zero());
        sub.insert(Var::Z(2, 1), Expr::var(Var::Z(1, 1)));
        sub.insert(Var::Zbar(2, 1), Expr::var(Var::Zbar(1, 1)));
        sub.insert(Var::X(2, 1), Expr::var(Var::X(1, 1)));
        sub.insert(Var::T(0), Expr::var(Var::T(0)).powi(2));
        let p = p.pullback_partial(&sub);
        let z = Expr::var(Var::Z(1, 1));
        let zb = Expr::var(Var::Zbar(1, 1));
        let x = Expr::var(Var::X(1, 1));
        let poly = Expr::one()
            .add(&z.scale(Complex64::new(0.3, -0.2)))
            .add(&x.powi(2).scale(c(0.5)));
        let gauss = z.mul(&zb).add(&x.powi(2)).neg().exp();
        let phi = Form::monomial(&[Generator::Dz(1, 1), Generator::Dzbar(1, 1)], poly.mul(&gauss));
        let w = p.wedge(&phi);
        let key = [Generator::Dz(1, 1), Generator::Dzbar(1, 1), Generator::Dx(1, 1), Generator::Dt(0)];
        let coef = w.top_component(&key);
        let rule = crate::quad::hermite(24);
        let s = 0.6;
        let mut total = c(0.0);
        for (a, wa) in rule.nodes.iter().zip(&rule.weights) {
            for (b, wb) in rule.nodes.iter().zip(&rule.weights) {
                for (q, wq) in rule.nodes.iter().zip(&rule.weights) {
                    let (re, im, xx) = (a * s, b * s, q * s);
                    let zv = Complex64::new(re, im);
                    let env = |v: Var| match v {
                        Var::Z(..) => zv,
                        Var::Zbar(..) => zv.conj(),
                        Var::X(..) => c(xx),
                        Var::T(_) => c(tt),
                        _ => c(0.0),
                    };
                    let f = coef.eval(&env);
                    let weight = wa * wb * wq * (a * a + b * b + q * q).exp() * s * s * s;
                    total += f * weight;
                }
            }
        }
        let brute = total * Complex64::new(0.0, -2.0) * global_sign(sig, 1);
        assert!(brute.norm() > 1e-3);
        assert!((engine - brute).norm() <= 1e-5 * brute.norm(), "{engine} {brute}");
    }
}
