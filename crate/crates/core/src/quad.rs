//! Quadrature building blocks: Gauss rules, tensor cubes, adaptive 1-d
//! integration, Richardson tables and seeded Monte Carlo.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre_cache() -> &'static Mutex<HashMap<usize, Rule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss-Legendre rule on `[0, 1]`.
pub fn legendre_unit(n: usize) -> Rule {
    let n = n.max(2);
    let mut cache = legendre_cache().lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(n.try_into().unwrap()).expect("legendre rule");
            let mut pairs: Vec<(f64, f64)> = gl
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Rule {
                nodes: pairs.iter().map(|p| p.0).collect(),
                weights: pairs.iter().map(|p| p.1).collect(),
            }
        })
        .clone()
}

/// Gauss-Hermite rule for the weight `exp(-x^2)`.
pub fn hermite(n: usize) -> Rule {
    let gh = GaussHermite::new(n.try_into().unwrap()).expect("hermite rule");
    let mut pairs: Vec<(f64, f64)> = gh.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Tensor-product points of a unit-cube rule: `(point, weight)`.
pub fn tensor_points(dim: usize, rule: &Rule) -> Vec<(Vec<f64>, f64)> {
    let n = rule.nodes.len();
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = Vec::with_capacity(dim);
            let mut w = 1.0;
            for _ in 0..dim {
                let k = idx % n;
                idx /= n;
                x.push(rule.nodes[k]);
                w *= rule.weights[k];
            }
            (x, w)
        })
        .collect()
}

/// Tensor Gauss-Legendre integral of `f` over the box `[lo, hi]`. Node values
/// are computed in parallel and summed in a fixed order.
pub fn integrate_box<F>(lo: &[f64], hi: &[f64], n: usize, f: F) -> Complex64
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let dim = lo.len();
    if dim == 0 {
        return f(&[]);
    }
    let rule = legendre_unit(n);
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let pts = tensor_points(dim, &rule);
    let vals: Vec<Complex64> = pts
        .par_iter()
        .map(|(u, w)| {
            let x: Vec<f64> = u.iter().zip(lo.iter().zip(hi)).map(|(s, (a, b))| a + (b - a) * s).collect();
            f(&x) * *w
        })
        .collect();
    vals.into_iter().sum::<Complex64>() * vol
}

/// Value and error estimate from `n` and `2n` nodes.
pub fn integrate_box_doubling<F>(lo: &[f64], hi: &[f64], n: usize, f: F) -> (Complex64, f64)
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let a = integrate_box(lo, hi, n, &f);
    let b = integrate_box(lo, hi, 2 * n, &f);
    (b, (b - a).norm())
}

/// Seeded Monte Carlo over a box: mean estimate and standard error.
pub fn integrate_box_mc<F>(lo: &[f64], hi: &[f64], samples: usize, seed: u64, f: F) -> (Complex64, f64)
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let dim = lo.len();
    let samples = samples.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..dim).map(|i| rng.gen_range(lo[i]..hi[i])).collect())
        .collect();
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let vals: Vec<Complex64> = pts.par_iter().map(|x| f(x)).collect();
    let n = samples as f64;
    let mean: Complex64 = vals.iter().sum::<Complex64>() / n;
    let var: f64 = vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    (mean * vol, vol * (var / n).sqrt())
}

/// Adaptive Gauss-Legendre on `[a, b]`: 10- and 20-point rules per panel,
/// bisecting panels whose estimates disagree.
pub fn adaptive<F>(f: &F, a: f64, b: f64, tol: f64, max_depth: usize) -> (Complex64, f64)
where
    F: Fn(f64) -> Complex64,
{
    let lo = legendre_unit(10);
    let hi = legendre_unit(20);
    let panel = |a: f64, b: f64| {
        let h = b - a;
        let s1: Complex64 = lo.nodes.iter().zip(&lo.weights).map(|(x, w)| f(a + h * x) * *w).sum();
        let s2: Complex64 = hi.nodes.iter().zip(&hi.weights).map(|(x, w)| f(a + h * x) * *w).sum();
        (s2 * h, ((s2 - s1) * h).norm())
    };
    let mut stack = vec![(a, b, 0usize)];
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    while let Some((x, y, depth)) = stack.pop() {
        let (v, e) = panel(x, y);
        let local_tol = tol * (y - x) / (b - a);
        if e <= local_tol.max(1e-15 * v.norm()) || depth >= max_depth {
            total += v;
            err += e;
        } else {
            let m = 0.5 * (x + y);
            stack.push((m, y, depth + 1));
            stack.push((x, m, depth + 1));
        }
    }
    (total, err)
}

/// Richardson extrapolation for values `v_k` sampled at `h_k = h_0 / ratio^k`
/// with error expansion in powers `step, 2 step, ...` of `h`.
/// Returns the extrapolated value and an error estimate.
pub fn richardson(values: &[Complex64], ratio: f64, step: f64) -> (Complex64, f64) {
    let n = values.len();
    assert!(n > 0);
    if n == 1 {
        return (values[0], f64::INFINITY);
    }
    let mut table: Vec<Vec<Complex64>> = vec![values.to_vec()];
    for j in 1..n {
        let prev = &table[j - 1];
        let f = ratio.powf(step * j as f64) - 1.0;
        let row: Vec<Complex64> = (1..prev.len()).map(|k| prev[k] + (prev[k] - prev[k - 1]) / f).collect();
        table.push(row);
    }
    let best = table[n - 1][0];
    let e1 = (best - table[n - 2][1]).norm();
    let e2 = (best - table[n - 2][0]).norm();
    (best, e1.max(e2))
}

/// Outcome of a numerical integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralResult {
    pub value: Complex64,
    pub error: f64,
    /// The same integral with the absolute value of the integrand.
    pub scale: f64,
    pub nodes: usize,
    pub seed: Option<u64>,
    pub converged: bool,
}

impl IntegralResult {
    pub fn exact(value: Complex64) -> Self {
        Self { value, error: 0.0, scale: value.norm(), nodes: 0, seed: None, converged: true }
    }

    /// `|value| <= max(3 error, 1e-6 scale)`.
    pub fn is_numerically_zero(&self) -> bool {
        self.value.norm() <= (3.0 * self.error).max(1e-6 * self.scale)
    }

    /// `|a - b| <= 3 (err_a + err_b)` up to a relative floor.
    pub fn agrees_with(&self, other: &IntegralResult, rel: f64) -> bool {
        let diff = (self.value - other.value).norm();
        let floor = rel * self.value.norm().max(other.value.norm()).max(1e-6 * self.scale.max(other.scale));
        diff <= (3.0 * (self.error + other.error)).max(floor)
    }
}

/// Quadrature settings shared by the integrators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub nodes_per_axis: usize,
    /// Zero selects Gauss-Legendre; otherwise the number of Monte Carlo samples.
    pub mc_samples: usize,
    pub seed: u64,
    pub richardson_levels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_axis: 8, mc_samples: 0, seed: 0, richardson_levels: 5 }
    }
}
