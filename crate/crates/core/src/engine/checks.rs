//! Numerical verifications of the vanishing and structural statements about
//! graph integrals.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::integrals::{anomaly_of_source, GraphIntegralProblem, Reduced};
use super::integrand::{propagator_product_size, Integrand};
use super::source::{pos_var, Kind, Positions, Source, TestSource};
use crate::error::{Error, Result};
use crate::exterior::{Form, Generator, Poly};
use crate::graph::{DecoratedGraph, EdgeMask, Signature};
use crate::quad::{IntegralResult, QuadratureSpec};
use crate::schwinger::{self, Scaled};

/// `|v| <= max(3 err, 1e-6 scale)` for a bare number.
pub fn numerically_zero(value: f64, error: f64, scale: f64) -> bool {
    value <= (3.0 * error).max(1e-6 * scale)
}

fn max_coeff(f: &Form<Complex64>) -> f64 {
    f.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max)
}

/// Componentwise numerical zero of a reduced form against its majorant.
fn form_is_zero(s: &Scaled, error: f64) -> bool {
    s.0.terms().all(|(g, c)| {
        let scale = s.1.terms().find(|(h, _)| *h == g).map_or(0.0, |(_, a)| *a);
        numerically_zero(c.norm(), error, scale)
    })
}

fn random_t(rng: &mut ChaCha8Rng, e: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..e).map(|_| rng.gen_range(lo..hi)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KontsevichReport {
    pub nodes: usize,
    /// `2|E| - 2(|V|-1)`; above `|E|` the reduced form vanishes by degree.
    pub dt_degree: usize,
    pub max_component: f64,
    pub max_scale: f64,
    pub all_zero: bool,
}

/// For `(d, d') = (0, 2)`: the position integral of the bare integrand (base
/// vertex fixed, source `1`) at every node of a `grid^|E|` Schwinger grid.
pub fn kontsevich_check(g: &DecoratedGraph, grid: usize) -> Result<KontsevichReport> {
    let sig = Signature::new(0, 2)?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    if g.betti_1() == 0 {
        return Err(Error::Precondition("the Kontsevich lemma needs h1 >= 1".into()));
    }
    let e = g.edge_count();
    let n = g.vertex_count();
    let dt_degree = 2 * e - 2 * (n - 1);
    let spec = TestSource { positions: Positions::Relative, sigma: None, generators: Some(vec![]), ..TestSource::default() };
    let src = Source::compile(&spec, sig, n, &[])?;
    let ig = Integrand::new(g, sig, &src)?;
    let grid = grid.max(1);
    let axis: Vec<f64> = (0..grid).map(|k| 0.2 + (k as f64 + 0.5) / grid as f64).collect();
    let total = grid.pow(e as u32);
    let (mut max_component, mut max_scale, mut all_zero) = (0.0f64, 0.0f64, true);
    for mut idx in 0..total {
        let t: Vec<f64> = (0..e)
            .map(|_| {
                let k = idx % grid;
                idx /= grid;
                axis[k]
            })
            .collect();
        let s = ig.reduce(&t, dt_degree)?;
        max_component = max_component.max(max_coeff(&s.0));
        max_scale = max_scale.max(s.1.terms().map(|(_, a)| *a).fold(0.0, f64::max));
        all_zero &= form_is_zero(&s, 0.0);
    }
    Ok(KontsevichReport { nodes: total, dt_degree, max_component, max_scale, all_zero })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankReport {
    pub vanishes: bool,
    pub witness: Option<EdgeMask>,
    pub samples: usize,
    /// Largest `|product over the witness| / majorant` over the samples.
    pub max_product_ratio: f64,
    /// Largest reduced coefficient relative to its majorant.
    pub max_reduced_ratio: f64,
    pub numeric_ok: bool,
}

/// Combinatorial rank criterion with numerical cross-validation at random
/// Schwinger nodes.
pub fn rank_vanishing_check(g: &DecoratedGraph, sig: Signature, samples: usize, seed: u64) -> Result<RankReport> {
    let witness = g.rank_witness(sig);
    let Some(w) = witness else {
        return Ok(RankReport { vanishes: false, witness, samples: 0, max_product_ratio: 0.0, max_reduced_ratio: 0.0, numeric_ok: true });
    };
    let e = g.edge_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_spec = TestSource::generic(sig, g.vertex_count(), seed);
    let pool = Source::antiholomorphic_generators(sig, g.vertex_count());
    // any dt-degree the graph admits; sources are taken from the front of the pool
    let reduced = (0..=e).rev().find_map(|dt| {
        let m = g.vertex_count() * sig.dim() + dt;
        let m = m.checked_sub(e * sig.dim())?;
        (m <= pool.len()).then(|| (dt, pool[..m].to_vec()))
    });
    let (mut pr, mut rr) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let t = random_t(&mut rng, e, 0.2, 1.5);
        let (max, scale) = propagator_product_size(g, sig, w, &t)?;
        pr = pr.max(max / scale.max(f64::MIN_POSITIVE));
        if let Some((dt, gens)) = &reduced {
            let src = Source::compile(&src_spec, sig, g.vertex_count(), gens)?;
            let s = reduce_at(g, sig, &src, &t, *dt)?;
            let v = max_coeff(&s.0);
            let a = s.1.terms().map(|(_, a)| *a).fold(0.0, f64::max);
            if v > 0.0 {
                rr = rr.max(v / a.max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(RankReport { vanishes: true, witness, samples, max_product_ratio: pr, max_reduced_ratio: rr, numeric_ok: pr <= 1e-10 && rr <= 1e-10 })
}

fn reduce_at(g: &DecoratedGraph, sig: Signature, src: &Source, t: &[f64], dt: usize) -> Result<Scaled> {
    Reduced::new(g, sig, src, dt)?.eval(t)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentReport {
    pub c: f64,
    pub samples: usize,
    /// Smallest `c * lambda_min` seen; the bound holds when this is `>= 1`.
    pub min_scaled_eigenvalue: f64,
    pub violations: usize,
}

fn reduced_m(rho: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = rho.ncols();
    DMatrix::from_fn(n, n, |i, j| (0..rho.nrows()).map(|e| rho[(e, i)] * rho[(e, j)] * w[e]).sum())
}

/// `M(t~)^-1 M(t~^2) M(t~)^-1 >= Id / c` with `M(t) = rho diag(1/t) rho^T` on
/// the non-base vertices and `c = |E| max |(rho^T rho)_{ee'}|`, sampled at
/// log-uniform `t~` in `[1e-4, 1]`.
pub fn exponent_bound_check(g: &DecoratedGraph, samples: usize, seed: u64) -> Result<ExponentReport> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let rho = g.reduced_incidence();
    let e = g.edge_count();
    let gram = &rho * rho.transpose();
    let c = e as f64 * gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut violations) = (f64::INFINITY, 0);
    for _ in 0..samples {
        let t: Vec<f64> = (0..e).map(|_| 10f64.powf(rng.gen_range(-4.0..0.0))).collect();
        let w1: Vec<f64> = t.iter().map(|x| 1.0 / x).collect();
        let w2: Vec<f64> = t.iter().map(|x| 1.0 / (x * x)).collect();
        let m1 = reduced_m(&rho, &w1);
        let inv = m1.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
        let x = &inv * reduced_m(&rho, &w2) * &inv;
        let x = (&x + x.transpose()) * 0.5;
        let lam = SymmetricEigen::new(x).eigenvalues.min();
        let scaled = lam * c;
        worst = worst.min(scaled);
        if scaled < 1.0 - 1e-9 {
            violations += 1;
        }
    }
    Ok(ExponentReport { c, samples, min_scaled_eigenvalue: worst, violations })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubgraphReport {
    pub subgraph: EdgeMask,
    pub laman_excess: i64,
    pub subgraph_is_laman: bool,
    pub direct: IntegralResult,
    pub factored: IntegralResult,
    pub agree: bool,
    /// Non-Laman subgraphs have vanishing anomaly, hence a vanishing stratum.
    pub expected_zero: bool,
    pub zero_ok: bool,
}

/// The stratum where the edges of `subgraph` shrink together, evaluated as
/// one Richardson limit over the whole stratum and as the iterated limit
/// (the subgraph's sphere integral at each node of the remaining Schwinger
/// box, then the box integral).
pub fn subgraph_boundary_reduction(problem: &GraphIntegralProblem, subgraph: EdgeMask, spec: &QuadratureSpec) -> Result<SubgraphReport> {
    problem.validate()?;
    let g = &problem.graph;
    let e = g.edge_count();
    if subgraph == 0 || subgraph == g.full_mask() || subgraph & !g.full_mask() != 0 {
        return Err(Error::Precondition("need a proper non-empty edge subset".into()));
    }
    if !g.is_connected_subgraph(subgraph) {
        return Err(Error::Precondition("the subgraph must be connected".into()));
    }
    let (sub, _) = g.subgraph(subgraph)?;
    let laman_excess = g.laman_excess(subgraph, problem.sig);
    let subgraph_is_laman = sub.is_laman(problem.sig);
    let src = problem.compile_source(e - 1)?;
    let r = Reduced::new(g, problem.sig, &src, e - 1)?;
    let f = |t: &[f64]| r.eval(t);
    let hi = problem.l.sqrt();
    let direct = schwinger::origin_stratum_limit_scaled(e, f, subgraph, hi, spec)?;
    let factored = schwinger::iterated_stratum_limit_scaled(e, f, subgraph, hi, spec)?;
    let agree = direct.agrees_with(&factored, 1e-3);
    let expected_zero = !subgraph_is_laman;
    let zero_ok = !expected_zero || (direct.is_numerically_zero() && factored.is_numerically_zero());
    Ok(SubgraphReport { subgraph, laman_excess, subgraph_is_laman, direct, factored, agree, expected_zero, zero_ok })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParityReport {
    pub h1: usize,
    pub original: IntegralResult,
    pub reflected: IntegralResult,
    /// `(-1)^h1`.
    pub expected_sign: i32,
    pub agree: bool,
}

/// `O(r^* Phi) = (-1)^{h1} O(Phi)` for the reflection `r` of the first real
/// coordinate through the base vertex.
pub fn reflection_parity_check(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<ParityReport> {
    problem.validate()?;
    let g = &problem.graph;
    let src = problem.compile_source(g.edge_count() - 1)?;
    let refl = src.reflect()?;
    let original = anomaly_of_source(g, problem.sig, &src, spec)?;
    let reflected = anomaly_of_source(g, problem.sig, &refl, spec)?;
    let h1 = g.betti_1();
    let expected_sign = if h1 % 2 == 0 { 1 } else { -1 };
    let target = IntegralResult { value: original.value * expected_sign as f64, ..original.clone() };
    let agree = reflected.agrees_with(&target, 1e-3);
    Ok(ParityReport { h1, original, reflected, expected_sign, agree })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub first: IntegralResult,
    pub second: IntegralResult,
    pub agree: bool,
}

/// Anomalies of `Phi` and `Phi (1 + 0.7 f)` where `f = zbar^1 - zbar^2`
/// (`x^1 - x^2` when `d = 0`) vanishes on the diagonal together with all its
/// holomorphic derivatives.
pub fn localization_check(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<LocalizationReport> {
    problem.validate()?;
    let g = &problem.graph;
    if g.vertex_count() < 2 {
        return Err(Error::Precondition("localization needs two vertices".into()));
    }
    let src = problem.compile_source(g.edge_count() - 1)?;
    let kind = if problem.sig.d > 0 { Kind::Zbar } else { Kind::X };
    let one = Complex64::new(1.0, 0.0);
    let f = Poly::linear(&[(pos_var(kind, 1, 1), one * 0.7), (pos_var(kind, 2, 1), -one * 0.7)]);
    let other = src.times(&Poly::constant(one).add(&f));
    let first = anomaly_of_source(g, problem.sig, &src, spec)?;
    let second = anomaly_of_source(g, problem.sig, &other, spec)?;
    let agree = first.agrees_with(&second, 1e-3);
    Ok(LocalizationReport { first, second, agree })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorizationReport {
    /// Sign `s` with `W~(G' + G'') = s W~(G') ^ W~(G'')`, if one fits.
    pub sign: Option<i32>,
    pub max_deviation: f64,
    pub scale: f64,
}

/// Reduced integrand of a disjoint union against the wedge of the component
/// integrands (second component's `dt~` shifted), at one Schwinger node.
pub fn factorization_check(
    g1: &DecoratedGraph,
    g2: &DecoratedGraph,
    sig: Signature,
    sources: (&Source, &Source),
    t: (&[f64], &[f64]),
    dt: (usize, usize),
) -> Result<FactorizationReport> {
    let e1 = g1.edge_count();
    let mut edges = g1.edges().to_vec();
    let shift = g1.vertex_count();
    for edge in g2.edges() {
        let mut ne = edge.clone();
        ne.head += shift;
        ne.tail += shift;
        edges.push(ne);
    }
    let g = DecoratedGraph::new(g1.vertex_count() + g2.vertex_count(), edges)?;
    let src = sources.0.disjoint_product(sources.1)?;
    let mut tt = t.0.to_vec();
    tt.extend_from_slice(t.1);
    let whole = Reduced::new(&g, sig, &src, dt.0 + dt.1)?.eval(&tt)?;
    let a = Reduced::new(g1, sig, sources.0, dt.0)?.eval(t.0)?;
    let b = Reduced::new(g2, sig, sources.1, dt.1)?.eval(t.1)?;
    let b = shift_dt(&b.0, e1);
    let prod = a.0.wedge(&b);
    let scale = max_coeff(&whole.0).max(max_coeff(&prod));
    let dev = |s: f64| max_coeff(&whole.0.add(&prod.map(|c| -c * s)));
    let (dp, dm) = (dev(1.0), dev(-1.0));
    let (sign, max_deviation) = if dp <= dm { (1, dp) } else { (-1, dm) };
    let fits = max_deviation <= 1e-9 * scale.max(1e-300);
    Ok(FactorizationReport { sign: fits.then_some(sign), max_deviation, scale })
}

fn shift_dt(f: &Form<Complex64>, by: usize) -> Form<Complex64> {
    let mut out = Form::zero();
    for (gens, c) in f.terms() {
        let g: Vec<Generator> = gens
            .iter()
            .map(|g| match *g {
                Generator::Dt(e) => Generator::Dt(e + by as u16),
                other => other,
            })
            .collect();
        out = out.add(&Form::monomial(&g, *c));
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub lambdas: Vec<f64>,
    /// Fitted degree of every non-zero coefficient.
    pub fitted: Vec<f64>,
    pub expected: f64,
    pub max_deviation: f64,
}

/// Scaling degree of the reduced form under `t~ -> lambda t~` for a
/// Gaussian-free relative source. Expected: `w(Phi) - d|E| - k` where every
/// position variable and generator has weight one and `k` is the
/// `dt~`-degree.
pub fn homogeneity_check(
    g: &DecoratedGraph,
    sig: Signature,
    source: &TestSource,
    dt_degree: usize,
    t: &[f64],
    lambdas: &[f64],
) -> Result<HomogeneityReport> {
    if source.positions != Positions::Relative || source.sigma.is_some() {
        return Err(Error::Precondition("homogeneity needs a relative source without Gaussian".into()));
    }
    let gens = match &source.generators {
        Some(names) => names.iter().map(|s| super::source::parse_generator(s)).collect::<Result<Vec<_>>>()?,
        None => return Err(Error::Precondition("homogeneity needs explicit generators".into())),
    };
    let poly = source.polynomial()?;
    let degrees: Vec<usize> = poly.terms().map(|(m, _)| m.len()).collect();
    if degrees.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Precondition("homogeneity needs a homogeneous polynomial".into()));
    }
    let src = Source::compile(source, sig, g.vertex_count(), &gens)?;
    let weight = degrees.first().copied().unwrap_or(0) + sig.d * (g.vertex_count() - 1) + gens.len();
    let expected = weight as f64 - (sig.d * g.edge_count()) as f64 - dt_degree as f64;
    let r = Reduced::new(g, sig, &src, dt_degree)?;
    let base = r.eval(t)?.0;
    let mut fitted = Vec::new();
    for &lam in lambdas.iter().filter(|&&l| l != 1.0) {
        let ts: Vec<f64> = t.iter().map(|x| x * lam).collect();
        let v = r.eval(&ts)?.0;
        for (gens, c0) in base.terms() {
            if c0.norm() == 0.0 {
                continue;
            }
            let c1 = v.terms().find(|(h, _)| *h == gens).map_or(Complex64::new(0.0, 0.0), |(_, c)| *c);
            fitted.push((c1.norm() / c0.norm()).ln() / lam.ln());
        }
    }
    let max_deviation = fitted.iter().map(|f| (f - expected).abs()).fold(0.0, f64::max);
    Ok(HomogeneityReport { lambdas: lambdas.to_vec(), fitted, expected, max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::select_generators;
    use crate::graph::library;

    fn sig(d: usize, dp: usize) -> Signature {
        Signature::new(d, dp).unwrap()
    }

    #[test]
    fn kontsevich_zero_on_loops() {
        for g in [library::banana(), library::theta(), library::triangle()] {
            let r = kontsevich_check(&g, 3).unwrap();
            assert!(r.all_zero, "{r:?}");
        }
        assert!(matches!(kontsevich_check(&library::path3(), 3), Err(Error::Precondition(_))));
    }

    #[test]
    fn rank_witnesses() {
        let r = rank_vanishing_check(&library::banana(), sig(2, 0), 10, 1).unwrap();
        assert!(r.vanishes && r.numeric_ok, "{r:?}");
        assert_eq!(r.witness, Some(0b11));
        let r = rank_vanishing_check(&library::triangle(), sig(1, 1), 10, 1).unwrap();
        assert!(!r.vanishes && r.witness.is_none());
    }

    #[test]
    fn exponent_constants() {
        for (g, c) in [(library::single_edge(), 1.0), (library::banana(), 2.0), (library::triangle(), 6.0)] {
            let r = exponent_bound_check(&g, 300, 2).unwrap();
            assert_eq!(r.c, c);
            assert_eq!(r.violations, 0, "{r:?}");
        }
    }

    #[test]
    fn non_laman_path_stratum_vanishes() {
        let spec = QuadratureSpec::default();
        let s = sig(1, 1);
        let p = GraphIntegralProblem::new(library::triangle(), s, TestSource::generic(s, 3, 3), 1.0, 0.0).unwrap();
        let r = subgraph_boundary_reduction(&p, 0b011, &spec).unwrap();
        assert_eq!(r.laman_excess, 1);
        assert!(r.expected_zero && r.zero_ok && r.agree, "{r:?}");
    }

    #[test]
    fn iterated_limit_matches_direct() {
        let spec = QuadratureSpec::default();
        let s = sig(1, 0);
        let p = GraphIntegralProblem::new(library::banana_tail(), s, TestSource::random(s, 3, 5, 4, 40), 1.0, 0.0).unwrap();
        let r = subgraph_boundary_reduction(&p, 0b100, &spec).unwrap();
        assert!(r.subgraph_is_laman);
        assert!(r.direct.value.norm() > 0.1);
        assert!(r.agree, "{r:?}");
        assert!(subgraph_boundary_reduction(&p, 0b111, &spec).is_err());
    }

    #[test]
    fn single_edge_parity_even() {
        let spec = QuadratureSpec::default();
        for s in [sig(0, 1), sig(1, 1)] {
            let p = GraphIntegralProblem::new(library::single_edge(), s, TestSource::generic(s, 2, 3), 1.0, 0.0).unwrap();
            let r = reflection_parity_check(&p, &spec).unwrap();
            assert_eq!(r.expected_sign, 1);
            assert!(r.original.value.norm() > 0.1);
            assert!(r.agree, "{r:?}");
        }
    }

    #[test]
    fn single_edge_localization() {
        let spec = QuadratureSpec::default();
        for s in [sig(1, 0), sig(0, 1)] {
            let p = GraphIntegralProblem::new(library::single_edge(), s, TestSource::generic(s, 2, 3), 1.0, 0.0).unwrap();
            let r = localization_check(&p, &spec).unwrap();
            assert!(r.agree, "{r:?}");
        }
    }

    #[test]
    fn banana_homogeneity() {
        let ts = TestSource {
            positions: Positions::Relative,
            sigma: None,
            poly: vec![crate::engine::PolyTerm { re: 1.0, im: 0.0, vars: vec!["z1.1".into()] }],
            generators: Some(vec![]),
        };
        let r = homogeneity_check(&library::banana(), sig(1, 0), &ts, 1, &[0.6, 0.9], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.expected, -1.0);
        assert!(!r.fitted.is_empty());
        assert!(r.max_deviation < 1e-9, "{r:?}");
    }

    #[test]
    fn disjoint_edges_factor() {
        let s = sig(1, 1);
        let g = library::single_edge();
        let (a, b) = (TestSource::generic(s, 2, 1), TestSource::generic(s, 2, 2));
        let src1 = Source::compile(&a, s, 2, &select_generators(&g, s, &a, 1).unwrap()).unwrap();
        let src2 = Source::compile(&b, s, 2, &select_generators(&g, s, &b, 1).unwrap()).unwrap();
        let r = factorization_check(&g, &g, s, (&src1, &src2), (&[0.7], &[1.1]), (1, 1)).unwrap();
        assert!(r.scale > 1.0);
        assert!(r.sign.is_some(), "{r:?}");
    }
}
