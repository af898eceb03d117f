//! Compactified Schwinger space: corner charts, the square map, extended
//! Laplacian functions, boundary strata and integration of forms in the
//! `t~` coordinates.
//!
//! Forms on Schwinger space use the generators `Dt(e)` for `dt~_e`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{Form, Generator};
use crate::graph::{mask_indices, DecoratedGraph, EdgeMask};
use crate::quad::{self, IntegralResult, QuadratureSpec};

/// `Gamma_1 = S_0 ⊇ S_1 ⊋ S_2 ⊋ ... ⊋ S_m ⊋ ∅`; only `S_1..S_m` are stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    edge_count: usize,
    levels: Vec<EdgeMask>,
}

impl Flag {
    pub fn new(edge_count: usize, levels: Vec<EdgeMask>) -> Result<Self> {
        let full = crate::graph::mask_all(edge_count);
        let mut prev = full;
        for (i, &s) in levels.iter().enumerate() {
            if s == 0 {
                return Err(Error::EmptySet);
            }
            if s & !prev != 0 || (i > 0 && s == prev) {
                return Err(Error::InvalidArgument(format!("flag level {} is not a proper subset", i + 1)));
            }
            prev = s;
        }
        Ok(Self { edge_count, levels })
    }

    pub fn trivial(edge_count: usize) -> Self {
        Self { edge_count, levels: Vec::new() }
    }

    /// Single level `S_1 = subset`.
    pub fn single(edge_count: usize, subset: EdgeMask) -> Result<Self> {
        Self::new(edge_count, vec![subset])
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn levels(&self) -> &[EdgeMask] {
        &self.levels
    }

    /// Deepest level containing `e` (0 for `S_0 \ S_1`).
    pub fn level_of(&self, e: usize) -> usize {
        self.levels.iter().take_while(|&&s| s >> e & 1 == 1).count()
    }
}

/// A point of the corner `C_{S_1..S_m}`. `coord[e]` is `t_e` for level-0 edges
/// and `xi^k_e` for edges of level `k >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerChart {
    pub flag: Flag,
    pub rho: Vec<f64>,
    pub coord: Vec<f64>,
}

impl CornerChart {
    pub fn new(flag: Flag, rho: Vec<f64>, coord: Vec<f64>) -> Result<Self> {
        if rho.len() != flag.depth() || coord.len() != flag.edge_count() {
            return Err(Error::InvalidArgument("chart coordinate lengths do not match the flag".into()));
        }
        if rho.iter().chain(&coord).any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument("chart coordinates must be finite and non-negative".into()));
        }
        Ok(Self { flag, rho, coord })
    }

    /// Product `rho_{from+1} ... rho_{to}`.
    fn rho_product(&self, from: usize, to: usize) -> f64 {
        self.rho[from..to].iter().product()
    }

    /// `t_e / |t_{S_j}|` for `e` in `S_j`, valid up to the boundary.
    fn normalized(&self, j: usize, e: usize) -> f64 {
        let lev = self.flag.level_of(e);
        debug_assert!(lev >= j);
        self.rho_product(j, lev) * self.coord[e]
    }

    /// Residuals of the normalization equations, one per level.
    pub fn constraint_residuals(&self) -> Vec<f64> {
        (1..=self.flag.depth())
            .map(|j| {
                let s: f64 = mask_indices(self.flag.levels[j - 1]).iter().map(|&e| self.normalized(j, e).powi(2)).sum();
                s - 1.0
            })
            .collect()
    }

    pub fn is_interior(&self) -> bool {
        self.rho.iter().all(|&r| r > 0.0)
    }
}

/// `t~_e = (prod_{k <= level(e)} rho_k) xi_e`.
pub fn chart_to_interior(chart: &CornerChart) -> Result<Vec<f64>> {
    if !chart.is_interior() {
        return Err(Error::Precondition("chart point lies on the boundary (some rho = 0)".into()));
    }
    Ok((0..chart.flag.edge_count())
        .map(|e| chart.rho_product(0, chart.flag.level_of(e)) * chart.coord[e])
        .collect())
}

fn norm_of(t: &[f64], mask: EdgeMask) -> f64 {
    mask_indices(mask).iter().map(|&e| t[e] * t[e]).sum::<f64>().sqrt()
}

/// `rho_1 = |t_{S_1}|`, `rho_k = |t_{S_k}| / |t_{S_{k-1}}|`, `xi_e = t_e / |t_{S_level}|`.
pub fn interior_to_chart(t: &[f64], flag: &Flag) -> Result<CornerChart> {
    if t.len() != flag.edge_count() {
        return Err(Error::InvalidArgument(format!("expected {} parameters", flag.edge_count())));
    }
    for (e, &x) in t.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::NonPositiveParameter(e, x));
        }
    }
    let norms: Vec<f64> = flag.levels.iter().map(|&s| norm_of(t, s)).collect();
    let rho = (0..flag.depth()).map(|k| if k == 0 { norms[0] } else { norms[k] / norms[k - 1] }).collect();
    let coord = (0..t.len())
        .map(|e| match flag.level_of(e) {
            0 => t[e],
            l => t[e] / norms[l - 1],
        })
        .collect();
    CornerChart::new(flag.clone(), rho, coord)
}

/// Extension of `t_e -> t_e^2` to the corner:
/// `rho~_1 = rho_1^2 Q_1`, `rho~_j = rho_j^2 Q_j / Q_{j-1}`, `xi~_e = n_j(e)^2 / Q_j`
/// where `n_j` is the unit vector of level `j` and `Q_j = sqrt(sum n_j^4)`.
pub fn t_square(chart: &CornerChart) -> CornerChart {
    let m = chart.flag.depth();
    let q: Vec<f64> = (1..=m)
        .map(|j| {
            mask_indices(chart.flag.levels[j - 1])
                .iter()
                .map(|&e| chart.normalized(j, e).powi(4))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let rho = (0..m)
        .map(|k| {
            let r2 = chart.rho[k] * chart.rho[k];
            if k == 0 {
                r2 * q[0]
            } else {
                r2 * q[k] / q[k - 1]
            }
        })
        .collect();
    let coord = (0..chart.flag.edge_count())
        .map(|e| match chart.flag.level_of(e) {
            0 => chart.coord[e] * chart.coord[e],
            l => chart.coord[e] * chart.coord[e] / q[l - 1],
        })
        .collect();
    CornerChart { flag: chart.flag.clone(), rho, coord }
}

/// Polynomial in the edge parameters with integer coefficients; exponents may
/// be negative after division by a single `t_e`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgePoly {
    terms: BTreeMap<Vec<i32>, i64>,
}

impl EdgePoly {
    fn add_mask(&mut self, mask: EdgeMask, n: usize, c: i64) {
        let key: Vec<i32> = (0..n).map(|e| (mask >> e & 1) as i32).collect();
        let v = self.terms.entry(key.clone()).or_insert(0);
        *v += c;
        if *v == 0 {
            self.terms.remove(&key);
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, &c)| c as f64 * k.iter().zip(t).map(|(&p, &x)| x.powi(p)).product::<f64>())
            .sum()
    }

    /// Evaluate `self / den` in chart coordinates after removing the
    /// common factor `prod_k rho_k^{alpha_k}` of the denominator.
    fn eval_chart(&self, chart: &CornerChart, alpha: &[i32]) -> f64 {
        let m = chart.flag.depth();
        self.terms
            .iter()
            .map(|(k, &c)| {
                let mut v = c as f64;
                let mut rho_exp = vec![0i32; m];
                for (e, &p) in k.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    v *= chart.coord[e].powi(p);
                    for r in rho_exp.iter_mut().take(chart.flag.level_of(e)) {
                        *r += p;
                    }
                }
                for j in 0..m {
                    let ex = rho_exp[j] - alpha[j];
                    if ex != 0 {
                        v *= chart.rho[j].powi(ex);
                    }
                }
                v
            })
            .sum()
    }
}

/// Tree polynomial `sum_T prod_{e not in T} t_e`.
fn tree_edge_poly(g: &DecoratedGraph) -> Result<EdgePoly> {
    let n = g.edge_count();
    let full = g.full_mask();
    let mut p = EdgePoly::default();
    for tr in g.spanning_trees()? {
        p.add_mask(full & !tr, n, 1);
    }
    Ok(p)
}

fn m_inverse_numerator(g: &DecoratedGraph, i: usize, j: usize) -> Result<EdgePoly> {
    let nv = g.vertex_count();
    if i == 0 || j == 0 || i >= nv || j >= nv {
        return Err(Error::IndexOutOfRange(format!("({i}, {j}) with base vertex {nv}")));
    }
    let v1: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
    let mut p = EdgePoly::default();
    for c in g.cut_sets(&v1, &[nv])? {
        p.add_mask(c, g.edge_count(), 1);
    }
    Ok(p)
}

/// Minimal rho exponents of the tree polynomial: `|S_k| - rank(S_k)`.
fn tree_alpha(g: &DecoratedGraph, flag: &Flag) -> Vec<i32> {
    flag.levels
        .iter()
        .map(|&s| {
            let rank = g.vertex_count() - g.component_count_of(s);
            s.count_ones() as i32 - rank as i32
        })
        .collect()
}

fn check_chart(g: &DecoratedGraph, chart: &CornerChart) -> Result<()> {
    if chart.flag.edge_count() != g.edge_count() {
        return Err(Error::InvalidArgument("chart and graph edge counts differ".into()));
    }
    Ok(())
}

/// `(M^-1)^{ij}` at a chart point, finite up to the boundary.
pub fn extended_m_inverse(g: &DecoratedGraph, chart: &CornerChart, i: usize, j: usize) -> Result<f64> {
    check_chart(g, chart)?;
    let num = m_inverse_numerator(g, i, j)?;
    let den = tree_edge_poly(g)?;
    let alpha = tree_alpha(g, &chart.flag);
    Ok(num.eval_chart(chart, &alpha) / den.eval_chart(chart, &alpha))
}

/// `(d^-1)^{ej} = (1/t_e) sum_i rho^e_i (M^-1)^{ij}` at a chart point. The
/// signed numerator is combined before dividing by `t_e`.
pub fn extended_d_inverse(g: &DecoratedGraph, chart: &CornerChart, e: usize, j: usize) -> Result<f64> {
    check_chart(g, chart)?;
    if e >= g.edge_count() {
        return Err(Error::IndexOutOfRange(format!("edge {e}")));
    }
    let mut num = EdgePoly::default();
    for i in 1..g.vertex_count() {
        let r = g.rho(e, i) as i64;
        if r == 0 {
            continue;
        }
        for (k, c) in m_inverse_numerator(g, i, j)?.terms {
            let v = num.terms.entry(k.clone()).or_insert(0);
            *v += r * c;
            if *v == 0 {
                num.terms.remove(&k);
            }
        }
    }
    let num = EdgePoly { terms: num.terms.into_iter().map(|(mut k, c)| {
        k[e] -= 1;
        (k, c)
    }).collect() };
    let den = tree_edge_poly(g)?;
    let alpha = tree_alpha(g, &chart.flag);
    Ok(num.eval_chart(chart, &alpha) / den.eval_chart(chart, &alpha))
}

/// Interior version of [`extended_d_inverse`] via the same combined numerator.
pub fn d_inverse_polynomial(g: &DecoratedGraph, t: &[f64], e: usize, j: usize) -> Result<f64> {
    extended_d_inverse(g, &interior_to_chart(t, &Flag::trivial(g.edge_count()))?, e, j)
}

/// Sign of the shuffle that puts the edges of `s` (in order) before the rest.
pub fn shuffle_sign(s: EdgeMask, edge_count: usize) -> i32 {
    let mut inversions = 0;
    for e in 0..edge_count {
        if s >> e & 1 == 1 {
            // count non-S edges before e
            inversions += (0..e).filter(|&f| s >> f & 1 == 0).count();
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StratumKind {
    /// `t~_e -> 0` together for `e` in the subgraph.
    Origin { subgraph: EdgeMask },
    /// `t~_e = sqrt L`.
    ScaleFace { edge: usize },
}

/// One codimension-one boundary piece. `sign` is its outward orientation
/// relative to the product orientation (sphere oriented as the boundary of the
/// ball, then the remaining coordinates in edge order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStratum {
    pub kind: StratumKind,
    pub sign: i32,
    pub description: String,
}

/// Outward sign of the origin stratum of `s`: `-eps(S, R)`.
pub fn origin_sign(s: EdgeMask, edge_count: usize) -> i32 {
    -shuffle_sign(s, edge_count)
}

/// Outward sign of the scale face of edge `e`: `(-1)^e` with 0-based `e`.
pub fn scale_face_sign(e: usize) -> i32 {
    if e % 2 == 0 {
        1
    } else {
        -1
    }
}

pub fn boundary_strata(g: &DecoratedGraph, l: f64) -> Result<Vec<BoundaryStratum>> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("L must be positive, got {l}")));
    }
    let n = g.edge_count();
    let mut out = Vec::new();
    for s in 1..=crate::graph::mask_all(n) {
        let k = s.count_ones() as usize;
        out.push(BoundaryStratum {
            kind: StratumKind::Origin { subgraph: s },
            sign: origin_sign(s, n),
            description: format!(
                "edges {:?} -> 0: sphere of dimension {} times box of dimension {}",
                mask_indices(s),
                k - 1,
                n - k
            ),
        });
    }
    for e in 0..n {
        out.push(BoundaryStratum {
            kind: StratumKind::ScaleFace { edge: e },
            sign: scale_face_sign(e),
            description: format!("t~_{e} = sqrt(L) = {}", l.sqrt()),
        });
    }
    Ok(out)
}

/// All permutations of `items` with their parity.
pub fn permutations(items: &[usize]) -> Vec<(Vec<usize>, i32)> {
    if items.is_empty() {
        return vec![(Vec::new(), 1)];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        let sign = if i % 2 == 0 { 1 } else { -1 };
        for (mut p, s) in permutations(&rest) {
            p.insert(0, first);
            out.push((p, s * sign));
        }
    }
    out
}

/// Parity of `order` as a permutation of its sorted self.
fn parity(order: &[usize]) -> i32 {
    let mut inv = 0;
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if order[i] > order[j] {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

/// A parametrized piece of a domain in `t~` space. Unit-cube parameters map to
/// an ordered sector of a box over `boxed`, a sphere sector over `sphere.0`
/// and fixed coordinates. The sphere radius is `sphere.1 * m` where `m` is the
/// smallest boxed coordinate (1 without a box), so that as `sphere.1 -> 0` the
/// patch approaches the blown-up origin face of the sphere edges.
#[derive(Clone, Debug)]
pub struct Patch {
    edge_count: usize,
    sphere: Option<(Vec<usize>, f64)>,
    boxed: Vec<usize>,
    lo: f64,
    hi: f64,
    fixed: Vec<(usize, f64)>,
}

impl Patch {
    pub fn dim(&self) -> usize {
        self.sphere.as_ref().map_or(0, |s| s.0.len() - 1) + self.boxed.len()
    }

    /// Point, tangent frame (columns) and orientation sign at `u`. Sphere
    /// parameters come first, then box parameters.
    pub fn eval(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>, f64) {
        let k = self.dim();
        let ns = self.sphere.as_ref().map_or(0, |s| s.0.len() - 1);
        let mut t = vec![0.0; self.edge_count];
        let mut v = DMatrix::zeros(self.edge_count, k);
        let mut sign = 1.0;
        let b = self.boxed.len();
        // t_{pi_k} = lo + (t_{pi_{k-1}} - lo) u_k with t_{pi_0} = hi
        let ub = &u[ns..];
        let mut vals = vec![0.0; b];
        let mut grads = vec![vec![0.0; b]; b];
        for a in 0..b {
            let prev = if a == 0 { self.hi } else { vals[a - 1] };
            vals[a] = self.lo + (prev - self.lo) * ub[a];
            for j in 0..a {
                grads[a][j] = ub[a] * grads[a - 1][j];
            }
            grads[a][a] = prev - self.lo;
        }
        for a in 0..b {
            t[self.boxed[a]] = vals[a];
            for j in 0..b {
                v[(self.boxed[a], ns + j)] = grads[a][j];
            }
        }
        if b > 0 {
            sign *= parity(&self.boxed) as f64;
        }
        if let Some((order, delta)) = &self.sphere {
            let (m, dm) = if b > 0 { (vals[b - 1], grads[b - 1].clone()) } else { (1.0, Vec::new()) };
            let r = delta * m;
            let s = order.len();
            // n_{pi_1} = 1, n_{pi_k} = prod_{j<k} u_j
            let mut n = vec![1.0; s];
            for a in 1..s {
                n[a] = n[a - 1] * u[a - 1];
            }
            let norm = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let unit: Vec<f64> = n.iter().map(|x| x / norm).collect();
            for a in 0..s {
                t[order[a]] = r * unit[a];
                for (j, g) in dm.iter().enumerate() {
                    v[(order[a], ns + j)] = delta * g * unit[a];
                }
            }
            let mut frame = DMatrix::zeros(s, s);
            for a in 0..s {
                frame[(a, 0)] = unit[a];
            }
            for j in 0..s - 1 {
                // d n / d u_j: entries a > j carry n_a / u_j
                let dn: Vec<f64> = (0..s).map(|a| if a > j { n[a] / u[j] } else { 0.0 }).collect();
                let proj: f64 = dn.iter().zip(&unit).map(|(x, y)| x * y).sum();
                for a in 0..s {
                    let d = (dn[a] - unit[a] * proj) / norm;
                    v[(order[a], j)] = r * d;
                    frame[(a, j + 1)] = d;
                }
            }
            // rows of `frame` follow `order`; reorder to edge order for the sign
            let mut rows: Vec<usize> = (0..s).collect();
            rows.sort_by_key(|&a| order[a]);
            let sorted = DMatrix::from_fn(s, s, |i, j| frame[(rows[i], j)]);
            sign *= sorted.determinant().signum();
        }
        for &(e, x) in &self.fixed {
            t[e] = x;
        }
        (t, v, sign)
    }
}

/// `omega(v_1, ..., v_k)` for a form in `Dt` generators.
pub fn pairing(form: &Form<Complex64>, frame: &DMatrix<f64>) -> Result<Complex64> {
    let k = frame.ncols();
    let mut total = Complex64::new(0.0, 0.0);
    for (gens, c) in form.terms() {
        if gens.len() != k {
            return Err(Error::DegreeMismatch(format!("form of degree {} on a {k}-dimensional domain", gens.len())));
        }
        let mut rows = Vec::with_capacity(k);
        for g in gens {
            match *g {
                Generator::Dt(e) if (e as usize) < frame.nrows() => rows.push(e as usize),
                _ => return Err(Error::DegreeMismatch(format!("generator {g:?} is not a Schwinger differential"))),
            }
        }
        let det = if k == 0 { 1.0 } else { DMatrix::from_fn(k, k, |i, j| frame[(rows[i], j)]).determinant() };
        total += c * det;
    }
    Ok(total)
}

/// Integration domains in `t~` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// `[lo, hi]^E`, top forms.
    Box { lo: f64, hi: f64 },
    /// Hypersurface `t~_S = delta * min(t~_R) * n`, `n` on the unit sphere of
    /// the `subgraph` coordinates and `t~_R` in the box `[0, hi]`, oriented as
    /// sphere (boundary of the ball) times box. Without remaining edges the
    /// radius is `delta`.
    Stratum { subgraph: EdgeMask, delta: f64, hi: f64 },
    /// `t~_edge = hi`, box `[0, hi]` in the others.
    ScaleFace { edge: usize, hi: f64 },
}

impl Domain {
    pub fn dim(&self, edge_count: usize) -> usize {
        match self {
            Domain::Box { .. } => edge_count,
            Domain::Stratum { .. } | Domain::ScaleFace { .. } => edge_count - 1,
        }
    }

    pub fn patches(&self, edge_count: usize) -> Vec<Patch> {
        let all: Vec<usize> = (0..edge_count).collect();
        match *self {
            Domain::Box { lo, hi } => permutations(&all)
                .into_iter()
                .map(|(p, _)| Patch { edge_count, sphere: None, boxed: p, lo, hi, fixed: vec![] })
                .collect(),
            Domain::Stratum { subgraph, delta, hi } => {
                let s = mask_indices(subgraph);
                let r: Vec<usize> = all.iter().copied().filter(|e| subgraph >> e & 1 == 0).collect();
                let mut out = Vec::new();
                for (ps, _) in permutations(&s) {
                    for (pr, _) in permutations(&r) {
                        out.push(Patch {
                            edge_count,
                            sphere: Some((ps.clone(), delta)),
                            boxed: pr,
                            lo: 0.0,
                            hi,
                            fixed: vec![],
                        });
                    }
                }
                out
            }
            Domain::ScaleFace { edge, hi } => {
                let r: Vec<usize> = all.iter().copied().filter(|&e| e != edge).collect();
                permutations(&r)
                    .into_iter()
                    .map(|(p, _)| Patch { edge_count, sphere: None, boxed: p, lo: 0.0, hi, fixed: vec![(edge, hi)] })
                    .collect()
            }
        }
    }
}

/// A form-valued function on Schwinger space together with a majorant form
/// (coefficientwise absolute values before cancellation), used for the
/// numerical-zero scale.
pub type Scaled = (Form<Complex64>, Form<f64>);

fn with_abs(f: Form<Complex64>) -> Scaled {
    let a = f.map(|c| c.norm());
    (f, a)
}

/// `sum |c| |det|`, the majorant of [`pairing`].
fn pairing_abs(form: &Form<f64>, frame: &DMatrix<f64>) -> f64 {
    let k = frame.ncols();
    form.terms()
        .filter(|(g, _)| g.len() == k)
        .map(|(gens, c)| {
            if k == 0 {
                return c.abs();
            }
            let rows: Vec<usize> = gens
                .iter()
                .map(|g| match *g {
                    Generator::Dt(e) => e as usize,
                    _ => 0,
                })
                .collect();
            c.abs() * DMatrix::from_fn(k, k, |i, j| frame[(rows[i], j)]).determinant().abs()
        })
        .sum()
}

/// Tensor Gauss-Legendre over all patches with `n` nodes per axis.
fn patch_sum<F>(patches: &[Patch], n: usize, f: &F) -> Result<(Complex64, f64, usize)>
where
    F: Fn(&[f64]) -> Result<Scaled> + Sync,
{
    let mut total = Complex64::new(0.0, 0.0);
    let mut abs = 0.0;
    let mut count = 0;
    for p in patches {
        let k = p.dim();
        let pts = if k == 0 { vec![(Vec::new(), 1.0)] } else { quad::tensor_points(k, &quad::legendre_unit(n)) };
        let vals: Vec<Result<(Complex64, f64)>> = pts
            .par_iter()
            .map(|(u, w)| {
                let (t, v, s) = p.eval(u);
                let (form, maj) = f(&t)?;
                Ok((pairing(&form, &v)? * (s * w), pairing_abs(&maj, &v) * w))
            })
            .collect();
        for v in vals {
            let (x, a) = v?;
            total += x;
            abs += a;
        }
        count += pts.len();
    }
    Ok((total, abs, count))
}

fn patch_mc<F>(patches: &[Patch], samples: usize, seed: u64, f: &F) -> Result<(Complex64, f64, f64, usize)>
where
    F: Fn(&[f64]) -> Result<Scaled> + Sync,
{
    let mut total = Complex64::new(0.0, 0.0);
    let mut var = 0.0;
    let mut abs = 0.0;
    let mut count = 0;
    for (pi, p) in patches.iter().enumerate() {
        let k = p.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(pi as u64));
        let m = if k == 0 { 1 } else { samples.max(2) };
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let vals: Vec<Result<(Complex64, f64)>> = pts
            .par_iter()
            .map(|u| {
                let (t, v, s) = p.eval(u);
                let (form, maj) = f(&t)?;
                Ok((pairing(&form, &v)? * s, pairing_abs(&maj, &v)))
            })
            .collect();
        let vals: Vec<(Complex64, f64)> = vals.into_iter().collect::<Result<_>>()?;
        let mean: Complex64 = vals.iter().map(|v| v.0).sum::<Complex64>() / m as f64;
        if k > 0 {
            var += vals.iter().map(|v| (v.0 - mean).norm_sqr()).sum::<f64>() / ((m - 1) as f64 * m as f64);
        }
        abs += vals.iter().map(|v| v.1).sum::<f64>() / m as f64;
        total += mean;
        count += m;
    }
    Ok((total, var.sqrt(), abs, count))
}

/// Integrate a form over a domain. The form must be homogeneous of the
/// domain's dimension in the `Dt` generators. With `mc_samples > 0` the
/// integral is a seeded Monte Carlo estimate; otherwise tensor Gauss-Legendre
/// with the error taken from node doubling.
pub fn integrate_form<F>(edge_count: usize, f: F, domain: &Domain, spec: &QuadratureSpec) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> Result<Form<Complex64>> + Sync,
{
    integrate_scaled(edge_count, |t: &[f64]| f(t).map(with_abs), domain, spec)
}

/// [`integrate_form`] for integrands that supply their own majorant.
pub fn integrate_scaled<F>(edge_count: usize, f: F, domain: &Domain, spec: &QuadratureSpec) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> Result<Scaled> + Sync,
{
    let patches = domain.patches(edge_count);
    if spec.mc_samples > 0 {
        let (value, err, abs, nodes) = patch_mc(&patches, spec.mc_samples, spec.seed, &f)?;
        return Ok(IntegralResult { value, error: err, scale: abs, nodes, seed: Some(spec.seed), converged: true });
    }
    let n = spec.nodes_per_axis.max(2);
    let (a, _, na) = patch_sum(&patches, n, &f)?;
    let (b, abs, nb) = patch_sum(&patches, 2 * n, &f)?;
    Ok(IntegralResult { value: b, error: (b - a).norm(), scale: abs, nodes: na + nb, seed: None, converged: true })
}

/// Limit `delta -> 0` of the stratum integral over `subgraph` by Richardson
/// extrapolation over `delta = 2^-2 ... 2^-(1 + levels)`.
pub fn origin_stratum_limit<F>(edge_count: usize, f: F, subgraph: EdgeMask, hi: f64, spec: &QuadratureSpec) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> Result<Form<Complex64>> + Sync,
{
    origin_stratum_limit_scaled(edge_count, |t: &[f64]| f(t).map(with_abs), subgraph, hi, spec)
}

pub fn origin_stratum_limit_scaled<F>(
    edge_count: usize,
    f: F,
    subgraph: EdgeMask,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> Result<Scaled> + Sync,
{
    let levels = spec.richardson_levels.max(2);
    let mut values = Vec::new();
    let mut qerr: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut nodes = 0;
    for k in 2..2 + levels {
        let delta = 0.5f64.powi(k as i32);
        let res = integrate_scaled(edge_count, &f, &Domain::Stratum { subgraph, delta, hi }, spec)?;
        values.push(res.value);
        qerr = qerr.max(res.error);
        scale = scale.max(res.scale);
        nodes += res.nodes;
    }
    Ok(richardson_result(&values, qerr, scale, nodes, spec))
}

/// Iterated form of [`origin_stratum_limit_scaled`]: at every quadrature node
/// of the remaining edges the sphere integral over `subgraph` at absolute
/// radius `delta` is extrapolated to `delta -> 0`, and only then integrated
/// over the box of the remaining edges.
pub fn iterated_stratum_limit_scaled<F>(
    edge_count: usize,
    f: F,
    subgraph: EdgeMask,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<IntegralResult>
where
    F: Fn(&[f64]) -> Result<Scaled> + Sync,
{
    let s = mask_indices(subgraph);
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    let r: Vec<usize> = (0..edge_count).filter(|e| subgraph >> e & 1 == 0).collect();
    let levels = spec.richardson_levels.max(2);
    let orders = permutations(&s);
    let ks = s.len() - 1;
    let run = |n: usize| -> Result<(Complex64, f64, f64, usize)> {
        let rule = quad::legendre_unit(n);
        let points = |k: usize| if k == 0 { vec![(Vec::new(), 1.0)] } else { quad::tensor_points(k, &rule) };
        let spts = points(ks);
        let (mut value, mut rerr, mut abs, mut count) = (Complex64::new(0.0, 0.0), 0.0, 0.0, 0);
        for (perm, _) in permutations(&r) {
            let bp = Patch { edge_count, sphere: None, boxed: perm, lo: 0.0, hi, fixed: vec![] };
            let kb = bp.dim();
            let vals: Vec<Result<(Complex64, f64, f64, usize)>> = points(kb)
                .par_iter()
                .map(|(ub, wb)| {
                    let (tb, vb, sb) = bp.eval(ub);
                    let fixed: Vec<(usize, f64)> = r.iter().map(|&e| (e, tb[e])).collect();
                    let mut seq = Vec::with_capacity(levels);
                    let (mut a, mut cnt) = (0.0f64, 0);
                    for k in 2..2 + levels {
                        let delta = 0.5f64.powi(k as i32);
                        let (mut sum, mut ak) = (Complex64::new(0.0, 0.0), 0.0);
                        for (order, _) in &orders {
                            let sp = Patch { edge_count, sphere: Some((order.clone(), delta)), boxed: vec![], lo: 0.0, hi, fixed: fixed.clone() };
                            for (us, ws) in &spts {
                                let (t, vs, ss) = sp.eval(us);
                                let frame = DMatrix::from_fn(edge_count, ks + kb, |i, j| if j < ks { vs[(i, j)] } else { vb[(i, j - ks)] });
                                let (form, maj) = f(&t)?;
                                sum += pairing(&form, &frame)? * (ss * sb * ws);
                                ak += pairing_abs(&maj, &frame) * ws;
                                cnt += 1;
                            }
                        }
                        seq.push(sum);
                        a = a.max(ak);
                    }
                    let (v, e) = quad::richardson(&seq, 2.0, 1.0);
                    Ok((v * *wb, e * wb, a * wb, cnt))
                })
                .collect();
            for v in vals {
                let (x, e, a, c) = v?;
                value += x;
                rerr += e;
                abs += a;
                count += c;
            }
        }
        Ok((value, rerr, abs, count))
    };
    let n = spec.nodes_per_axis.max(2);
    let (va, _, _, na) = run(n)?;
    let (vb, rerr, abs, nb) = run(2 * n)?;
    let error = (vb - va).norm() + rerr;
    let converged = rerr <= 1e-3 * abs.max(vb.norm()) + (vb - va).norm();
    Ok(IntegralResult { value: vb, error, scale: abs, nodes: na + nb, seed: None, converged })
}

/// Richardson limit (ratio 2, step 1) of a halving sequence with quadrature
/// error `qerr` per value.
pub fn richardson_result(values: &[Complex64], qerr: f64, scale: f64, nodes: usize, spec: &QuadratureSpec) -> IntegralResult {
    let (value, rerr) = quad::richardson(values, 2.0, 1.0);
    // amplification of quadrature noise through the Richardson table
    let amp = 2f64.powi(values.len() as i32);
    let error = rerr + amp * qerr;
    let converged = rerr <= 1e-3 * scale.max(value.norm()) + amp * qerr;
    IntegralResult { value, error, scale, nodes, seed: (spec.mc_samples > 0).then_some(spec.seed), converged }
}

/// Least-squares sign table from Stokes: for each test form, the box
/// integral of `d omega` is matched to `sum_k s_k J_k(omega)` over the given
/// boundary pieces. Returns the fitted real coefficients.
pub fn fit_signs(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if m < k {
        return Err(Error::InvalidArgument("need at least as many test forms as boundary pieces".into()));
    }
    let a = DMatrix::from_fn(m, k, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Singular(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// Outcome of the Stokes orientation fit on the banana square.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StokesReport {
    /// Boundary pieces in [`boundary_strata`] order.
    pub strata: Vec<String>,
    pub fitted: Vec<f64>,
    pub analytic: Vec<i32>,
    /// Largest `|int_box d omega - sum_k s_k J_k(omega)|` with the analytic signs.
    pub discrepancy: f64,
}

impl StokesReport {
    pub fn signs_match(&self) -> bool {
        self.fitted.iter().zip(&self.analytic).all(|(f, a)| (f - *a as f64).abs() < 1e-3)
    }
}

fn banana_test_forms() -> Vec<Form<crate::exterior::Expr>> {
    use crate::exterior::{Expr, Var};
    let t = |e: u16| Expr::var(Var::T(e));
    let dt = |e: u16| Form::<Expr>::generator(Generator::Dt(e));
    let r2 = t(0).powi(2).add(&t(1).powi(2));
    vec![
        dt(1).scale(&t(0)),
        dt(0).scale(&t(1)),
        dt(0).add(&dt(1).scale(&Expr::real(2.0))).scale(&t(0).add(&t(1)).neg().exp()),
        dt(1).scale(&t(0)).sub(&dt(0).scale(&t(1))).scale(&r2.recip()),
        dt(1).scale(&t(0).neg().exp()),
    ]
}

/// Numerical Stokes on the compactified square `[0, sqrt L]^2` of the banana:
/// for five test one-forms the box integral of `d omega` is matched against
/// the boundary pieces, the signs are solved for, and compared with
/// [`origin_sign`] and [`scale_face_sign`].
pub fn banana_stokes_table(l: f64, spec: &QuadratureSpec) -> Result<StokesReport> {
    let g = crate::graph::library::banana();
    let strata = boundary_strata(&g, l)?;
    let hi = l.sqrt();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for omega in banana_test_forms() {
        let d_omega = omega.d();
        let eval = |f: &Form<crate::exterior::Expr>, t: &[f64]| {
            f.eval(&|v| match v {
                crate::exterior::Var::T(e) => Complex64::new(t[e as usize], 0.0),
                _ => Complex64::new(0.0, 0.0),
            })
        };
        let lhs = integrate_form(2, |t: &[f64]| Ok(eval(&d_omega, t)), &Domain::Box { lo: 0.0, hi }, spec)?;
        let mut row = Vec::new();
        for st in &strata {
            let f = |t: &[f64]| Ok(eval(&omega, t));
            let v = match st.kind {
                StratumKind::Origin { subgraph } => origin_stratum_limit(2, f, subgraph, hi, spec)?,
                StratumKind::ScaleFace { edge } => integrate_form(2, f, &Domain::ScaleFace { edge, hi }, spec)?,
            };
            row.push(v.value.re);
        }
        rows.push(row);
        rhs.push(lhs.value.re);
    }
    let analytic: Vec<i32> = strata.iter().map(|s| s.sign).collect();
    let discrepancy = rows
        .iter()
        .zip(&rhs)
        .map(|(r, b)| (r.iter().zip(&analytic).map(|(x, s)| x * *s as f64).sum::<f64>() - b).abs())
        .fold(0.0, f64::max);
    Ok(StokesReport {
        strata: strata.iter().map(|s| s.description.clone()).collect(),
        fitted: fit_signs(&rows, &rhs)?,
        analytic,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::library;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn one_form(a: Complex64, b: Complex64) -> Form<Complex64> {
        Form::monomial(&[Generator::Dt(0)], a).add(&Form::monomial(&[Generator::Dt(1)], b))
    }

    #[test]
    fn chart_examples() {
        let flag = Flag::single(2, 0b11).unwrap();
        let chart = CornerChart::new(flag.clone(), vec![2.0], vec![0.6, 0.8]).unwrap();
        let t = chart_to_interior(&chart).unwrap();
        assert!((t[0] - 1.2).abs() < 1e-15 && (t[1] - 1.6).abs() < 1e-15);
        let back = interior_to_chart(&[1.0, 1.0], &flag).unwrap();
        assert!((back.rho[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((back.coord[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let triv = interior_to_chart(&[1.0], &Flag::trivial(1)).unwrap();
        assert_eq!(chart_to_interior(&triv).unwrap(), vec![1.0]);
        let boundary = CornerChart::new(flag, vec![0.0], vec![0.6, 0.8]).unwrap();
        assert!(matches!(chart_to_interior(&boundary), Err(Error::Precondition(_))));
    }

    #[test]
    fn nested_flag_products() {
        let flag = Flag::new(3, vec![0b111, 0b110, 0b100]).unwrap();
        let t = [0.3, 0.2, 0.05];
        let chart = interior_to_chart(&t, &flag).unwrap();
        assert!(chart.constraint_residuals().iter().all(|r| r.abs() < 1e-14));
        let back = chart_to_interior(&chart).unwrap();
        for e in 0..3 {
            assert!((back[e] - t[e]).abs() < 1e-15);
        }
        assert!(Flag::new(3, vec![0b011, 0b110]).is_err());
        assert!(Flag::new(3, vec![0b011, 0b011]).is_err());
    }

    #[test]
    fn square_map() {
        let flag = Flag::single(2, 0b11).unwrap();
        let h = 0.5f64.sqrt();
        let sq = t_square(&CornerChart::new(flag.clone(), vec![1.0], vec![h, h]).unwrap());
        assert!((sq.rho[0] - h).abs() < 1e-15 && (sq.coord[0] - h).abs() < 1e-15);
        let at0 = t_square(&CornerChart::new(flag.clone(), vec![0.0], vec![0.6, 0.8]).unwrap());
        assert_eq!(at0.rho[0], 0.0);
        assert!(at0.coord.iter().all(|x| x.is_finite()));
        assert!(at0.constraint_residuals()[0].abs() < 1e-14);
        let flag3 = Flag::new(3, vec![0b110, 0b100]).unwrap();
        let t = [0.7, 0.3, 0.1];
        let sq = t_square(&interior_to_chart(&t, &flag3).unwrap());
        let img = chart_to_interior(&sq).unwrap();
        for e in 0..3 {
            assert!((img[e] - t[e] * t[e]).abs() < 1e-15);
        }
    }

    #[test]
    fn extended_inverses() {
        let g = library::banana();
        let flag = Flag::single(2, 0b11).unwrap();
        let chart = CornerChart::new(flag.clone(), vec![0.0], vec![0.6, 0.8]).unwrap();
        assert_eq!(extended_m_inverse(&g, &chart, 1, 1).unwrap(), 0.0);
        let near = CornerChart::new(flag, vec![1e-3], vec![0.6, 0.8]).unwrap();
        let v = extended_m_inverse(&g, &near, 1, 1).unwrap();
        assert!((v - 1e-3 * 0.48 / 1.4).abs() < 1e-15);

        let tri = library::triangle();
        let t = [0.4, 0.9, 1.3];
        let chart = interior_to_chart(&t, &Flag::trivial(3)).unwrap();
        for i in 1..3 {
            for j in 1..3 {
                let a = extended_m_inverse(&tri, &chart, i, j).unwrap();
                let b = tri.laplacian_inverse_entry(&t, i, j).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
            for e in 0..3 {
                let a = extended_d_inverse(&tri, &chart, e, i).unwrap();
                let b = tri.d_inverse_entry(&t, e, i).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
        // subgraph {a} shrinking: d^-1 stays bounded
        let flag = Flag::single(3, 0b001).unwrap();
        let ch = CornerChart::new(flag, vec![0.0], vec![1.0, 0.7, 0.4]).unwrap();
        for j in 1..3 {
            let v = extended_d_inverse(&tri, &ch, 0, j).unwrap();
            assert!(v.is_finite() && v.abs() <= 2.0);
        }
    }

    #[test]
    fn strata_census() {
        assert_eq!(boundary_strata(&library::single_edge(), 1.0).unwrap().len(), 2);
        let b = boundary_strata(&library::banana(), 1.0).unwrap();
        assert_eq!(b.iter().filter(|s| matches!(s.kind, StratumKind::Origin { .. })).count(), 3);
        assert_eq!(b.len(), 5);
        let t = boundary_strata(&library::triangle(), 1.0).unwrap();
        assert_eq!(t.len(), 10);
    }

    #[test]
    fn unit_square_and_quarter_circle() {
        let spec = QuadratureSpec::default();
        let top = |_: &[f64]| Ok(Form::monomial(&[Generator::Dt(0), Generator::Dt(1)], c(1.0)));
        let r = integrate_form(2, top, &Domain::Box { lo: 0.0, hi: 1.0 }, &spec).unwrap();
        assert!((r.value.re - 1.0).abs() < 1e-14);
        // arc-length form i_n(dt1 dt2) = t1 dt2 - t2 dt1 on the unit circle
        let arc = |t: &[f64]| Ok(one_form(c(-t[1]), c(t[0])));
        let r = integrate_form(2, arc, &Domain::Stratum { subgraph: 0b11, delta: 1.0, hi: 1.0 }, &spec).unwrap();
        assert!((r.value.re - std::f64::consts::FRAC_PI_2).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn stokes_on_unit_box() {
        // omega = t1 dt2, d omega = dt1 dt2
        let spec = QuadratureSpec::default();
        let lhs = integrate_form(
            2,
            |_: &[f64]| Ok(Form::monomial(&[Generator::Dt(0), Generator::Dt(1)], c(1.0))),
            &Domain::Box { lo: 0.0, hi: 1.0 },
            &spec,
        )
        .unwrap();
        let omega = |t: &[f64]| Ok(one_form(c(0.0), c(t[0])));
        let mut rhs = Complex64::new(0.0, 0.0);
        for s in [0b01u64, 0b10, 0b11] {
            let j = origin_stratum_limit(2, omega, s, 1.0, &spec).unwrap();
            rhs += j.value * origin_sign(s, 2) as f64;
        }
        for e in 0..2 {
            let k = integrate_form(2, omega, &Domain::ScaleFace { edge: e, hi: 1.0 }, &spec).unwrap();
            rhs += k.value * scale_face_sign(e) as f64;
        }
        assert!((lhs.value - rhs).norm() < 1e-8);
    }

    #[test]
    fn banana_sign_table() {
        let spec = QuadratureSpec { nodes_per_axis: 12, ..QuadratureSpec::default() };
        let rep = banana_stokes_table(1.0, &spec).unwrap();
        assert!(rep.discrepancy <= 1e-6, "{rep:?}");
        assert!(rep.signs_match(), "{rep:?}");
    }

    #[test]
    fn permutation_parities() {
        let p = permutations(&[0, 1, 2]);
        assert_eq!(p.len(), 6);
        for (perm, s) in p {
            assert_eq!(parity(&perm), s);
        }
        assert_eq!(shuffle_sign(0b10, 2), -1);
        assert_eq!(shuffle_sign(0b01, 2), 1);
    }
}
