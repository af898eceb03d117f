//! Test sources `Phi = P(z, x) exp(-Q) dz_all ^ (generators)` with a Gaussian
//! factor `Q = sum_k z_k Gz zbar_k + sum_k x_k Gx_k x_k`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{Form, Generator, Poly};
use crate::graph::Signature;

pub const MAX_SOURCE_DEGREE: usize = 8;

/// Variable kinds in the polynomial coefficient ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Z = 0,
    Zbar = 1,
    X = 2,
}

/// Packed id of a position variable: kind, 1-based vertex, 1-based component.
pub fn pos_var(kind: Kind, i: usize, k: usize) -> u16 {
    ((kind as u16) << 12) | (((i - 1) as u16) << 6) | ((k - 1) as u16)
}

pub fn decode_var(v: u16) -> (Kind, usize, usize) {
    let kind = match v >> 12 {
        0 => Kind::Z,
        1 => Kind::Zbar,
        _ => Kind::X,
    };
    (kind, ((v >> 6) & 63) as usize + 1, (v & 63) as usize + 1)
}

/// Which vertex positions are integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    /// All vertices, the source supplying decay.
    #[default]
    Full,
    /// Base vertex pinned at the origin; only the others are integrated.
    Relative,
}

/// One term `c * prod vars` of the source polynomial. Variables are written
/// `z<i>.<k>`, `zbar<i>.<k>` or `x<i>.<k>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default)]
    pub vars: Vec<String>,
}

fn default_sigma() -> Option<f64> {
    Some(1.0)
}

fn default_poly() -> Vec<PolyTerm> {
    vec![PolyTerm { re: 1.0, im: 0.0, vars: vec![] }]
}

/// Serializable description of a test source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSource {
    #[serde(default)]
    pub positions: Positions,
    /// Gaussian width; `None` drops the Gaussian (relative positions only).
    #[serde(default = "default_sigma")]
    pub sigma: Option<f64>,
    #[serde(default = "default_poly")]
    pub poly: Vec<PolyTerm>,
    /// Generators `dzbar<i>.<k>` / `dx<i>.<k>` wedged after all `dz`. `None`
    /// picks the first subset giving a non-vanishing integrand.
    #[serde(default)]
    pub generators: Option<Vec<String>>,
}

impl Default for TestSource {
    fn default() -> Self {
        Self { positions: Positions::Full, sigma: Some(1.0), poly: default_poly(), generators: None }
    }
}

fn parse_index(s: &str) -> Option<(usize, usize)> {
    let (i, k) = s.split_once('.')?;
    Some((i.parse().ok()?, k.parse().ok()?))
}

pub fn parse_var(s: &str) -> Result<(Kind, usize, usize)> {
    let bad = || Error::Config(format!("bad variable name '{s}' (expected z1.1, zbar1.1 or x1.1)"));
    let (kind, rest) = if let Some(r) = s.strip_prefix("zbar") {
        (Kind::Zbar, r)
    } else if let Some(r) = s.strip_prefix('z') {
        (Kind::Z, r)
    } else if let Some(r) = s.strip_prefix('x') {
        (Kind::X, r)
    } else {
        return Err(bad());
    };
    let (i, k) = parse_index(rest).ok_or_else(bad)?;
    if i == 0 || k == 0 || i > 64 || k > 64 {
        return Err(bad());
    }
    Ok((kind, i, k))
}

pub fn parse_generator(s: &str) -> Result<Generator> {
    let bad = || Error::Config(format!("bad generator name '{s}' (expected dzbar1.1 or dx1.1)"));
    let rest = s.strip_prefix('d').ok_or_else(bad)?;
    let (kind, i, k) = parse_var(rest).map_err(|_| bad())?;
    Ok(match kind {
        Kind::Z => Generator::Dz(i as u16, k as u16),
        Kind::Zbar => Generator::Dzbar(i as u16, k as u16),
        Kind::X => Generator::Dx(i as u16, k as u16),
    })
}

pub fn generator_name(g: Generator) -> String {
    match g {
        Generator::Dz(i, k) => format!("dz{i}.{k}"),
        Generator::Dzbar(i, k) => format!("dzbar{i}.{k}"),
        Generator::Dx(i, k) => format!("dx{i}.{k}"),
        other => other.to_string(),
    }
}

fn var_name(kind: Kind, i: usize, k: usize) -> String {
    match kind {
        Kind::Z => format!("z{i}.{k}"),
        Kind::Zbar => format!("zbar{i}.{k}"),
        Kind::X => format!("x{i}.{k}"),
    }
}

impl TestSource {
    /// Deterministic generic prefactor: a random polynomial of degree at most
    /// two in the holomorphic and real coordinates of all vertices.
    pub fn generic(sig: Signature, vertices: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = Vec::new();
        for i in 1..=vertices {
            for k in 1..=sig.d {
                vars.push(var_name(Kind::Z, i, k));
            }
            for k in 1..=sig.d_prime {
                vars.push(var_name(Kind::X, i, k));
            }
        }
        let coef = |rng: &mut ChaCha8Rng| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (re, im) = coef(&mut rng);
        let mut poly = vec![PolyTerm { re: 1.0 + 0.5 * re, im: 0.5 * im, vars: vec![] }];
        for v in &vars {
            let (re, im) = coef(&mut rng);
            poly.push(PolyTerm { re, im, vars: vec![v.clone()] });
        }
        for a in 0..vars.len() {
            for b in a..vars.len() {
                let (re, im) = coef(&mut rng);
                poly.push(PolyTerm { re: 0.5 * re, im: 0.5 * im, vars: vec![vars[a].clone(), vars[b].clone()] });
            }
        }
        Self { poly, ..Self::default() }
    }

    /// Sparse random prefactor: `terms` monomials of degree at most `degree`
    /// in all position coordinates (including `zbar`), plus a constant.
    pub fn random(sig: Signature, vertices: usize, seed: u64, degree: usize, terms: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = Vec::new();
        for i in 1..=vertices {
            for k in 1..=sig.d {
                vars.push(var_name(Kind::Z, i, k));
                vars.push(var_name(Kind::Zbar, i, k));
            }
            for k in 1..=sig.d_prime {
                vars.push(var_name(Kind::X, i, k));
            }
        }
        let mut poly = vec![PolyTerm { re: 1.0, im: 0.0, vars: vec![] }];
        for _ in 0..terms {
            let deg = rng.gen_range(1..=degree.clamp(1, MAX_SOURCE_DEGREE));
            let vs = (0..deg).map(|_| vars[rng.gen_range(0..vars.len())].clone()).collect();
            poly.push(PolyTerm { re: rng.gen_range(-1.0..1.0), im: rng.gen_range(-1.0..1.0), vars: vs });
        }
        Self { poly, ..Self::default() }
    }

    pub fn with_generators(mut self, gens: &[Generator]) -> Self {
        self.generators = Some(gens.iter().map(|&g| generator_name(g)).collect());
        self
    }

    pub fn relative(mut self) -> Self {
        self.positions = Positions::Relative;
        self
    }

    pub fn polynomial(&self) -> Result<Poly> {
        let mut p = Poly::zero();
        for t in &self.poly {
            if t.vars.len() > MAX_SOURCE_DEGREE {
                return Err(Error::TooLarge(format!("source monomial of degree {} > {MAX_SOURCE_DEGREE}", t.vars.len())));
            }
            let ids = t
                .vars
                .iter()
                .map(|s| parse_var(s).map(|(kind, i, k)| pos_var(kind, i, k)))
                .collect::<Result<Vec<_>>>()?;
            p = p.add(&Poly::monomial(ids, Complex64::new(t.re, t.im)));
        }
        Ok(p)
    }
}

/// A compiled source on `vertices` vertices.
#[derive(Clone, Debug)]
pub struct Source {
    pub sig: Signature,
    pub positions: Positions,
    /// Number of graph vertices (including the base).
    pub vertices: usize,
    pub form: Form<Poly>,
    /// `(Gz, [Gx_k])` over the active vertices, or `None`.
    pub gaussian: Option<(DMatrix<f64>, Vec<DMatrix<f64>>)>,
}

impl Source {
    pub fn active_vertices(&self) -> usize {
        match self.positions {
            Positions::Full => self.vertices,
            Positions::Relative => self.vertices - 1,
        }
    }

    /// `dz` generators of all active vertices, sorted.
    pub fn holomorphic_volume(sig: Signature, active: usize) -> Vec<Generator> {
        let mut v = Vec::new();
        for i in 1..=active as u16 {
            for k in 1..=sig.d as u16 {
                v.push(Generator::Dz(i, k));
            }
        }
        v
    }

    /// Non-holomorphic position generators of the active vertices, in volume order.
    pub fn antiholomorphic_generators(sig: Signature, active: usize) -> Vec<Generator> {
        let mut v = Vec::new();
        for i in 1..=active as u16 {
            for k in 1..=sig.d as u16 {
                v.push(Generator::Dzbar(i, k));
            }
            for k in 1..=sig.d_prime as u16 {
                v.push(Generator::Dx(i, k));
            }
        }
        v
    }

    /// Build from a description and an explicit generator list.
    pub fn compile(spec: &TestSource, sig: Signature, vertices: usize, gens: &[Generator]) -> Result<Self> {
        let active = match spec.positions {
            Positions::Full => vertices,
            Positions::Relative => vertices - 1,
        };
        let gaussian = match spec.sigma {
            Some(s) if s > 0.0 && s.is_finite() => {
                let g = DMatrix::identity(active, active) / (s * s);
                Some((g.clone(), vec![g; sig.d_prime]))
            }
            Some(s) => return Err(Error::InvalidArgument(format!("source width must be positive, got {s}"))),
            None if spec.positions == Positions::Full => {
                return Err(Error::InvalidArgument("a full-position source needs a Gaussian width".into()))
            }
            None => None,
        };
        let mut poly = spec.polynomial()?;
        for m in poly.terms().map(|(m, _)| m.clone()).collect::<Vec<_>>() {
            for &v in &m {
                let (_, i, k) = decode_var(v);
                let (kind, ..) = decode_var(v);
                let kmax = if kind == Kind::X { sig.d_prime } else { sig.d };
                if i > vertices || k > kmax {
                    return Err(Error::Config(format!("source variable {} out of range", var_name(kind, i, k))));
                }
            }
        }
        if spec.positions == Positions::Relative {
            poly = poly.substitute(&|v| (decode_var(v).1 == vertices).then(Poly::zero));
        }
        let allowed = Self::antiholomorphic_generators(sig, active);
        for g in gens {
            if !allowed.contains(g) {
                return Err(Error::Config(format!("generator {} not available", generator_name(*g))));
            }
        }
        let mut all = Self::holomorphic_volume(sig, active);
        all.extend_from_slice(gens);
        Ok(Self { sig, positions: spec.positions, vertices, form: Form::monomial(&all, poly), gaussian })
    }

    /// `Phi' ^ Phi''` of sources on disjoint vertex sets; `other`'s vertices are
    /// shifted past this one's.
    pub fn disjoint_product(&self, other: &Source) -> Result<Source> {
        if self.positions != Positions::Full || other.positions != Positions::Full || self.sig != other.sig {
            return Err(Error::InvalidArgument("products need full-position sources of one signature".into()));
        }
        let shift = self.vertices;
        let moved = other.form.map(|p| {
            p.substitute(&|v| {
                let (kind, i, k) = decode_var(v);
                Some(Poly::var(pos_var(kind, i + shift, k)))
            })
        });
        let moved = relabel_generators(&moved, &|g| shift_generator(g, shift as u16));
        let gaussian = match (&self.gaussian, &other.gaussian) {
            (Some((a, ax)), Some((b, bx))) => {
                let n = shift + other.vertices;
                let block = |p: &DMatrix<f64>, q: &DMatrix<f64>| {
                    let mut m = DMatrix::zeros(n, n);
                    m.view_mut((0, 0), (shift, shift)).copy_from(p);
                    m.view_mut((shift, shift), (other.vertices, other.vertices)).copy_from(q);
                    m
                };
                Some((block(a, b), ax.iter().zip(bx).map(|(p, q)| block(p, q)).collect()))
            }
            _ => return Err(Error::InvalidArgument("products need Gaussian sources".into())),
        };
        Ok(Source {
            sig: self.sig,
            positions: Positions::Full,
            vertices: shift + other.vertices,
            form: self.form.wedge(&moved),
            gaussian,
        })
    }

    /// `(dbar + d) Phi`, differentiating polynomial and Gaussian.
    pub fn dbar_plus_d(&self) -> Source {
        let active = self.active_vertices();
        let mut out = Form::<Poly>::zero();
        for (gens, p) in self.form.terms() {
            let rest = Form::monomial(gens, Poly::constant(Complex64::new(1.0, 0.0)));
            for i in 1..=active {
                for k in 1..=self.sig.d {
                    let mut c = p.diff(pos_var(Kind::Zbar, i, k));
                    if let Some((gz, _)) = &self.gaussian {
                        // d/dzbar_i of -z Gz zbar = -sum_j Gz_ji z_j
                        let lin = Poly::linear(
                            &(1..=active).map(|j| (pos_var(Kind::Z, j, k), Complex64::new(-gz[(j - 1, i - 1)], 0.0))).collect::<Vec<_>>(),
                        );
                        c = c.add(&p.mul(&lin));
                    }
                    let g = Form::monomial(&[Generator::Dzbar(i as u16, k as u16)], c);
                    out = out.add(&g.wedge(&rest));
                }
                for k in 1..=self.sig.d_prime {
                    let mut c = p.diff(pos_var(Kind::X, i, k));
                    if let Some((_, gx)) = &self.gaussian {
                        let lin = Poly::linear(
                            &(1..=active)
                                .map(|j| (pos_var(Kind::X, j, k), Complex64::new(-2.0 * gx[k - 1][(i - 1, j - 1)], 0.0)))
                                .collect::<Vec<_>>(),
                        );
                        c = c.add(&p.mul(&lin));
                    }
                    let g = Form::monomial(&[Generator::Dx(i as u16, k as u16)], c);
                    out = out.add(&g.wedge(&rest));
                }
            }
        }
        Source { form: out, ..self.clone() }
    }

    /// Pullback along `x^i_1 -> 2 x^N_1 - x^i_1` for `i < N`: reflection of the
    /// first real coordinate through the base vertex.
    pub fn reflect(&self) -> Result<Source> {
        if self.positions != Positions::Full || self.sig.d_prime == 0 {
            return Err(Error::Precondition("reflection needs a full-position source with d' >= 1".into()));
        }
        let n = self.vertices;
        let image = |i: usize| -> Vec<(usize, f64)> {
            if i == n {
                vec![(n, 1.0)]
            } else {
                vec![(n, 2.0), (i, -1.0)]
            }
        };
        let poly_map = |v: u16| {
            let (kind, i, k) = decode_var(v);
            (kind == Kind::X && k == 1 && i < n).then(|| {
                Poly::linear(&image(i).into_iter().map(|(j, c)| (pos_var(Kind::X, j, 1), Complex64::new(c, 0.0))).collect::<Vec<_>>())
            })
        };
        let coeffs = self.form.map(|p| p.substitute(&poly_map));
        let form = pullback_generators(&coeffs, &|g| match g {
            Generator::Dx(i, 1) if (i as usize) < n => {
                image(i as usize).into_iter().map(|(j, c)| (Generator::Dx(j as u16, 1), c)).collect()
            }
            other => vec![(other, 1.0)],
        });
        let gaussian = self.gaussian.as_ref().map(|(gz, gx)| {
            let r = DMatrix::from_fn(n, n, |a, b| {
                image(a + 1).iter().find(|(j, _)| *j == b + 1).map_or(0.0, |(_, c)| *c)
            });
            let mut gx = gx.clone();
            gx[0] = r.transpose() * &gx[0] * &r;
            (gz.clone(), gx)
        });
        Ok(Source { form, gaussian, ..self.clone() })
    }

    /// Multiply the coefficient by a polynomial.
    pub fn times(&self, p: &Poly) -> Source {
        Source { form: self.form.map(|c| c.mul(p)), ..self.clone() }
    }

    pub fn add(&self, other: &Source) -> Result<Source> {
        if self.gaussian != other.gaussian || self.positions != other.positions || self.vertices != other.vertices {
            return Err(Error::InvalidArgument("sources must share their Gaussian".into()));
        }
        Ok(Source { form: self.form.add(&other.form), ..self.clone() })
    }
}

fn shift_generator(g: Generator, s: u16) -> Generator {
    match g {
        Generator::Dz(i, k) => Generator::Dz(i + s, k),
        Generator::Dzbar(i, k) => Generator::Dzbar(i + s, k),
        Generator::Dx(i, k) => Generator::Dx(i + s, k),
        other => other,
    }
}

fn relabel_generators(f: &Form<Poly>, map: &dyn Fn(Generator) -> Generator) -> Form<Poly> {
    let mut out = Form::zero();
    for (gens, c) in f.terms() {
        let g: Vec<Generator> = gens.iter().map(|&g| map(g)).collect();
        out = out.add(&Form::monomial(&g, c.clone()));
    }
    out
}

/// Pullback of the generators along a linear map `g -> sum c_j g_j`.
pub fn pullback_generators(f: &Form<Poly>, map: &dyn Fn(Generator) -> Vec<(Generator, f64)>) -> Form<Poly> {
    let mut cache: BTreeMap<Generator, Form<Poly>> = BTreeMap::new();
    let mut out = Form::zero();
    for (gens, c) in f.terms() {
        let mut acc = Form::scalar(c.clone());
        for g in gens {
            let img = cache
                .entry(*g)
                .or_insert_with(|| {
                    map(*g).into_iter().fold(Form::zero(), |a, (h, x)| {
                        a.add(&Form::monomial(&[h], Poly::constant(Complex64::new(x, 0.0))))
                    })
                })
                .clone();
            acc = acc.wedge(&img);
        }
        out = out.add(&acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(parse_var("zbar2.1").unwrap(), (Kind::Zbar, 2, 1));
        assert_eq!(parse_generator("dx3.2").unwrap(), Generator::Dx(3, 2));
        assert_eq!(generator_name(Generator::Dzbar(1, 2)), "dzbar1.2");
        assert!(parse_var("y1.1").is_err());
        let v = pos_var(Kind::X, 5, 2);
        assert_eq!(decode_var(v), (Kind::X, 5, 2));
    }

    #[test]
    fn compile_and_differentiate() {
        let sig = Signature::new(1, 1).unwrap();
        let spec = TestSource { poly: vec![PolyTerm { re: 1.0, im: 0.0, vars: vec!["z1.1".into()] }], ..TestSource::default() };
        let src = Source::compile(&spec, sig, 2, &[Generator::Dzbar(1, 1)]).unwrap();
        assert_eq!(src.form.degrees(), vec![3]);
        let d = src.dbar_plus_d();
        // (dbar + d)(z1 e^{-Q} dz1 dz2 dzbar1): dzbar2 and dx1, dx2 survive
        assert_eq!(d.form.len(), 3);
        let dd = d.dbar_plus_d();
        assert!(dd.form.terms().all(|(_, p)| p.terms().all(|(_, c)| c.norm() < 1e-14)));
    }

    #[test]
    fn reflection_is_involution() {
        let sig = Signature::new(0, 1).unwrap();
        let spec = TestSource { poly: vec![PolyTerm { re: 1.0, im: 0.0, vars: vec!["x1.1".into(), "x1.1".into()] }], ..TestSource::default() };
        let src = Source::compile(&spec, sig, 2, &[Generator::Dx(1, 1)]).unwrap();
        let r = src.reflect().unwrap();
        let (_, gx) = r.gaussian.as_ref().unwrap();
        assert!((gx[0][(0, 1)] + 2.0).abs() < 1e-15);
        let rr = r.reflect().unwrap();
        assert_eq!(rr.gaussian, src.gaussian);
        let diff = rr.form.sub(&src.form);
        assert!(diff.terms().all(|(_, p)| p.terms().all(|(_, c)| c.norm() < 1e-13)));
        // dx1 -> 2 dx2 - dx1
        let one_gen = r.form.terms().find(|(g, _)| g == &&vec![Generator::Dx(1, 1)]).unwrap().1.clone();
        assert!((one_gen.eval_with(&|_| c(1.0)) + c(1.0)).norm() < 1e-14);
    }
}
