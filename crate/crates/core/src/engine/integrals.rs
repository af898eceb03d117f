//! Schwinger-space integrals of the position-reduced integrand.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::integrand::{select_generators, Integrand};
use super::source::{parse_generator, Source, TestSource};
use crate::error::{Error, Result};
use crate::exterior::Generator;
use crate::graph::{DecoratedGraph, Signature};
use crate::quad::{self, IntegralResult, QuadratureSpec};
use crate::schwinger::{self, Domain, Scaled, StratumKind};

/// A regularized graph integral `W_eps^L((Gamma, n), Phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphIntegralProblem {
    pub graph: DecoratedGraph,
    pub sig: Signature,
    pub source: TestSource,
    #[serde(rename = "L")]
    pub l: f64,
    pub eps: f64,
}

impl GraphIntegralProblem {
    pub fn new(graph: DecoratedGraph, sig: Signature, source: TestSource, l: f64, eps: f64) -> Result<Self> {
        let p = Self { graph, sig, source, l, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.graph.edges().iter().position(|e| e.is_loop()) {
            return Err(Error::SelfLoop(e));
        }
        if !self.graph.is_connected() {
            return Err(Error::Disconnected);
        }
        self.graph.check_decorations(self.sig)?;
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::InvalidArgument(format!("L must be positive, got {}", self.l)));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("problem serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Compile the source for a reduced form of `dt~`-degree `dt_degree`.
    pub fn compile_source(&self, dt_degree: usize) -> Result<Source> {
        let gens: Vec<Generator> = match &self.source.generators {
            Some(names) => names.iter().map(|s| parse_generator(s)).collect::<Result<_>>()?,
            None => select_generators(&self.graph, self.sig, &self.source, dt_degree)?,
        };
        Source::compile(&self.source, self.sig, self.graph.vertex_count(), &gens)
    }
}

/// The position-reduced integrand of one graph and source as a function on
/// Schwinger space.
pub struct Reduced<'a> {
    integrand: Integrand<'a>,
    dt_degree: usize,
}

impl<'a> Reduced<'a> {
    pub fn new(graph: &'a DecoratedGraph, sig: Signature, source: &'a Source, dt_degree: usize) -> Result<Self> {
        Ok(Self { integrand: Integrand::new(graph, sig, source)?, dt_degree })
    }

    pub fn eval(&self, t: &[f64]) -> Result<Scaled> {
        self.integrand.reduce(t, self.dt_degree)
    }
}

/// `reduce_positions`: the `dt~` form at a Schwinger node.
pub fn reduce_positions(graph: &DecoratedGraph, sig: Signature, source: &Source, t: &[f64], dt_degree: usize) -> Result<Scaled> {
    Reduced::new(graph, sig, source, dt_degree)?.eval(t)
}

/// Integral over the ordered-sector parametrization of `[lo, hi]^E`.
pub fn box_integral(graph: &DecoratedGraph, sig: Signature, source: &Source, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<IntegralResult> {
    let e = graph.edge_count();
    let r = Reduced::new(graph, sig, source, e)?;
    schwinger::integrate_scaled(e, |t: &[f64]| r.eval(t), &Domain::Box { lo, hi }, spec)
}

/// `W_eps^L` by quadrature over `[sqrt eps, sqrt L]^E` in `t~ = sqrt t`.
pub fn w_eps_l(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<IntegralResult> {
    problem.validate()?;
    if !(problem.eps > 0.0) {
        return Err(Error::Precondition("w_eps_L needs eps > 0".into()));
    }
    if problem.eps > problem.l {
        return Err(Error::InvalidArgument(format!("eps = {} exceeds L = {}", problem.eps, problem.l)));
    }
    if problem.eps == problem.l {
        return Ok(IntegralResult::exact(Complex64::new(0.0, 0.0)));
    }
    let src = problem.compile_source(problem.edge_count())?;
    box_integral(&problem.graph, problem.sig, &src, problem.eps.sqrt(), problem.l.sqrt(), spec)
}

/// `W_0^L` over the whole box, using that the integrand extends smoothly to
/// the compactification (interior nodes only).
pub fn w_0_l(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<IntegralResult> {
    problem.validate()?;
    let src = problem.compile_source(problem.edge_count())?;
    box_integral(&problem.graph, problem.sig, &src, 0.0, problem.l.sqrt(), spec)
}

/// `eps -> 0` study on `eps = 4^-k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UvReport {
    pub eps: Vec<f64>,
    pub values: Vec<IntegralResult>,
    /// Richardson-accelerated value after each new point.
    pub accelerated: Vec<Complex64>,
    pub limit: IntegralResult,
    pub w0: IntegralResult,
    /// Successive `|W_{k+1} - W_k|`.
    pub differences: Vec<f64>,
    pub converged: bool,
    pub agrees: bool,
}

/// Evaluate `W_eps^L` for `eps = 4^-k`, `k = 1..=k_max`, accelerating in
/// `sqrt eps` (ratio 2, step 1); stop once three successive accelerated values
/// agree within the quadrature noise.
pub fn uv_sequence(problem: &GraphIntegralProblem, k_max: usize, spec: &QuadratureSpec) -> Result<UvReport> {
    problem.validate()?;
    if !(1..=14).contains(&k_max) {
        return Err(Error::InvalidArgument(format!("eps grid k_max = {k_max} outside 1..=14")));
    }
    let src = problem.compile_source(problem.edge_count())?;
    let hi = problem.l.sqrt();
    let mut eps = Vec::new();
    let mut values: Vec<IntegralResult> = Vec::new();
    let mut accelerated = Vec::new();
    let mut converged = false;
    let mut qerr: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 1..=k_max {
        let e = 4f64.powi(-(k as i32));
        if e >= problem.l {
            continue;
        }
        let r = box_integral(&problem.graph, problem.sig, &src, e.sqrt(), hi, spec)?;
        qerr = qerr.max(r.error);
        scale = scale.max(r.scale);
        eps.push(e);
        values.push(r);
        let vals: Vec<Complex64> = values.iter().map(|v| v.value).collect();
        // a short table: the last four points
        let tail = &vals[vals.len().saturating_sub(4)..];
        accelerated.push(quad::richardson(tail, 2.0, 1.0).0);
        if accelerated.len() >= 4 {
            let n = accelerated.len();
            let tol = (1e-6 * scale).max(30.0 * qerr);
            let a = &accelerated[n - 3..];
            if (a[0] - a[1]).norm() <= tol && (a[1] - a[2]).norm() <= tol {
                converged = true;
                break;
            }
        }
    }
    let differences = values.windows(2).map(|w| (w[1].value - w[0].value).norm()).collect();
    let n = accelerated.len();
    let spread = if n >= 3 { (accelerated[n - 1] - accelerated[n - 2]).norm().max((accelerated[n - 2] - accelerated[n - 3]).norm()) } else { f64::INFINITY };
    let limit = IntegralResult {
        value: *accelerated.last().ok_or_else(|| Error::Precondition("L too small for the eps grid".into()))?,
        error: spread + 16.0 * qerr,
        scale,
        nodes: values.iter().map(|v| v.nodes).sum(),
        seed: values[0].seed,
        converged,
    };
    let w0 = box_integral(&problem.graph, problem.sig, &src, 0.0, hi, spec)?;
    let agrees = (limit.value - w0.value).norm() <= 3.0 * (limit.error + w0.error) + 1e-6 * scale;
    Ok(UvReport { eps, values, accelerated, limit, w0, differences, converged, agrees })
}

/// Integral of a reduced `(E-1)`-form over one boundary stratum: an
/// extrapolated origin face or a scale face `t~_e = sqrt L`.
pub fn stratum_integral(
    graph: &DecoratedGraph,
    sig: Signature,
    source: &Source,
    kind: &StratumKind,
    l: f64,
    spec: &QuadratureSpec,
) -> Result<IntegralResult> {
    let e = graph.edge_count();
    if e == 0 {
        return Err(Error::EmptySet);
    }
    let r = Reduced::new(graph, sig, source, e - 1)?;
    let f = |t: &[f64]| r.eval(t);
    match *kind {
        StratumKind::Origin { subgraph } => schwinger::origin_stratum_limit_scaled(e, f, subgraph, l.sqrt(), spec),
        StratumKind::ScaleFace { edge } => schwinger::integrate_scaled(e, f, &Domain::ScaleFace { edge, hi: l.sqrt() }, spec),
    }
}

/// `O_(Gamma, n)(Phi)`: the integral over the deepest origin stratum, where all
/// `t~_e -> 0` together, by Richardson extrapolation in the sphere radius.
pub fn anomaly_functional(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<IntegralResult> {
    problem.validate()?;
    let e = problem.edge_count();
    let src = problem.compile_source(e - 1)?;
    anomaly_of_source(&problem.graph, problem.sig, &src, spec)
}

pub fn anomaly_of_source(graph: &DecoratedGraph, sig: Signature, source: &Source, spec: &QuadratureSpec) -> Result<IntegralResult> {
    let kind = StratumKind::Origin { subgraph: graph.full_mask() };
    stratum_integral(graph, sig, source, &kind, 1.0, spec)
}

/// One boundary term of the boundary identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryTerm {
    pub description: String,
    pub sign: i32,
    pub value: IntegralResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `(-1)^{(d+d')E + d'|V|} W_0^L((dbar + d) Phi)`.
    pub lhs: IntegralResult,
    /// `sum_strata sign * integral`.
    pub rhs: IntegralResult,
    pub terms: Vec<BoundaryTerm>,
    pub discrepancy: f64,
    pub agree: bool,
}

/// First seed from `seed` on whose [`TestSource::random`] source gives an
/// anomaly integrand that is not identically zero at a probe node.
pub fn nontrivial_random_source(
    graph: &DecoratedGraph,
    sig: Signature,
    seed: u64,
    degree: usize,
    terms: usize,
) -> Result<(u64, TestSource)> {
    let e = graph.edge_count();
    let probe: Vec<f64> = (0..e).map(|k| 0.3 + 0.4 * (k as f64 + 1.0) / e as f64).collect();
    for s in seed..seed + 64 {
        let ts = TestSource::random(sig, graph.vertex_count(), s, degree, terms);
        let p = GraphIntegralProblem::new(graph.clone(), sig, ts.clone(), 1.0, 0.0)?;
        let src = p.compile_source(e - 1)?;
        let (_, majorant) = Reduced::new(graph, sig, &src, e - 1)?.eval(&probe)?;
        if majorant.terms().any(|(_, a)| *a > 0.0) {
            return Ok((s, ts));
        }
    }
    Err(Error::Precondition("no random source with a non-vanishing anomaly integrand".into()))
}

/// Two-sided evaluation of `(dbar + d) W_0^L = boundary integral` for a
/// source whose reduced form has `dt~`-degree `E - 1`.
pub fn boundary_identity_check(problem: &GraphIntegralProblem, spec: &QuadratureSpec) -> Result<BoundaryReport> {
    problem.validate()?;
    let (g, sig) = (&problem.graph, problem.sig);
    let e = g.edge_count();
    let src = problem.compile_source(e - 1)?;
    let dsrc = src.dbar_plus_d();
    let mut lhs = box_integral(g, sig, &dsrc, 0.0, problem.l.sqrt(), spec)?;
    let k = sig.dim() * e + sig.d_prime * g.vertex_count();
    if k % 2 == 1 {
        lhs.value = -lhs.value;
    }
    let mut terms = Vec::new();
    let mut total = Complex64::new(0.0, 0.0);
    let (mut err, mut scale, mut nodes) = (0.0, 0.0f64, 0);
    for st in schwinger::boundary_strata(g, problem.l)? {
        let v = stratum_integral(g, sig, &src, &st.kind, problem.l, spec)?;
        total += v.value * st.sign as f64;
        err += v.error;
        scale = scale.max(v.scale);
        nodes += v.nodes;
        terms.push(BoundaryTerm { description: st.description, sign: st.sign, value: v });
    }
    let converged = terms.iter().all(|t| t.value.converged);
    let rhs = IntegralResult { value: total, error: err, scale, nodes, seed: lhs.seed, converged };
    let discrepancy = (lhs.value - rhs.value).norm();
    let both_zero = lhs.is_numerically_zero() && rhs.is_numerically_zero();
    let agree = both_zero || discrepancy <= 1e-3 * lhs.value.norm().max(rhs.value.norm()) + 3.0 * (lhs.error + rhs.error);
    Ok(BoundaryReport { lhs, rhs, terms, discrepancy, agree })
}
