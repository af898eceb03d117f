use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use thf_core::exterior::form::sort_sign;
use thf_core::exterior::{Form, Generator};
use thf_core::graph::DecoratedGraph;
use thf_core::quad::richardson;
use thf_core::schwinger::{chart_to_interior, interior_to_chart, Flag};
use thf_core::wick::{gaussian_moment_oracle, GaussianSpec, Monomial};

/// Connected multigraph: a random spanning tree plus extra edges, at most 6 edges.
fn graph_strategy() -> impl Strategy<Value = DecoratedGraph> {
    (2usize..=5)
        .prop_flat_map(|n| {
            let parents: Vec<_> = (1..n).map(|v| 0..v).collect();
            let extra = proptest::collection::vec((0..n, 0..n), 0..=(7 - n));
            (Just(n), parents, extra, any::<u64>())
        })
        .prop_map(|(n, parents, extra, flips)| {
            let mut pairs: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (p + 1, i + 2)).collect();
            pairs.extend(extra.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a + 1, b + 1)));
            for (k, p) in pairs.iter_mut().enumerate() {
                if flips >> k & 1 == 1 {
                    *p = (p.1, p.0);
                }
            }
            DecoratedGraph::from_pairs(n, &pairs).unwrap()
        })
}

fn with_t(lo: f64, hi: f64) -> impl Strategy<Value = (DecoratedGraph, Vec<f64>)> {
    graph_strategy().prop_flat_map(move |g| {
        let e = g.edge_count();
        (Just(g), proptest::collection::vec(lo..hi, e).prop_map(|v| v.iter().map(|x| 10f64.powf(*x)).collect()))
    })
}

/// Reduced Laplacian from the edge list, base vertex last.
fn laplacian(g: &DecoratedGraph, w: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = g.vertex_count() - 1;
    let mut m = DMatrix::zeros(n, n);
    for (e, edge) in g.edges().iter().enumerate() {
        let (a, b) = (edge.tail, edge.head);
        for (x, y, s) in [(a, a, 1.0), (b, b, 1.0), (a, b, -1.0), (b, a, -1.0)] {
            if x <= n && y <= n {
                m[(x - 1, y - 1)] += s * w(e);
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kirchhoff_matches_lu((g, t) in with_t(-1.0, 1.0)) {
        let det = laplacian(&g, |e| 1.0 / t[e]).lu().determinant();
        let k = g.kirchhoff_det(&t).unwrap();
        prop_assert!((k - det).abs() <= 1e-10 * det.abs());
    }

    #[test]
    fn tree_count_is_unit_determinant(g in graph_strategy()) {
        let det = laplacian(&g, |_| 1.0).lu().determinant();
        prop_assert_eq!(g.spanning_trees().unwrap().len() as f64, det.round());
    }

    #[test]
    fn inverse_entries_and_bound((g, t) in with_t(-1.0, 1.0)) {
        let inv = laplacian(&g, |e| 1.0 / t[e]).try_inverse().unwrap();
        let n = g.vertex_count();
        let scale = inv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 1..n {
            for j in 1..n {
                let v = g.laplacian_inverse_entry(&t, i, j).unwrap();
                prop_assert!((v - inv[(i - 1, j - 1)]).abs() <= 1e-10 * scale);
            }
        }
        for e in 0..g.edge_count() {
            for j in 1..n {
                prop_assert!(g.d_inverse_entry(&t, e, j).unwrap().abs() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn d_inverse_bounded_at_wide_spread((g, t) in with_t(-4.0, 4.0)) {
        for e in 0..g.edge_count() {
            for j in 1..g.vertex_count() {
                prop_assert!(g.d_inverse_entry(&t, e, j).unwrap().abs() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn betti_of_connected(g in graph_strategy()) {
        prop_assert_eq!(g.betti_1() + g.vertex_count(), g.edge_count() + 1);
    }

    #[test]
    fn laman_and_witness_exclusive(g in graph_strategy(), d in 0usize..3, dp in 0usize..3) {
        prop_assume!(d + dp >= 1);
        let sig = thf_core::Signature::new(d, dp).unwrap();
        if g.is_laman(sig) {
            prop_assert_eq!(g.laman_excess(g.full_mask(), sig), 0);
            prop_assert!(g.rank_witness(sig).is_none());
        }
        if let Some(w) = g.rank_witness(sig) {
            prop_assert!(g.laman_excess(w, sig) < 0);
            prop_assert!(g.is_connected_subgraph(w));
        }
    }

    #[test]
    fn sort_sign_is_inversion_parity(perm in Just((0u16..6).collect::<Vec<_>>()).prop_shuffle()) {
        let gens: Vec<Generator> = perm.iter().map(|&e| Generator::Dt(e)).collect();
        let inversions = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).filter(|&(i, j)| perm[i] > perm[j]).count();
        let (sorted, sign) = sort_sign(&gens).unwrap();
        prop_assert_eq!(sign, if inversions % 2 == 0 { 1 } else { -1 });
        prop_assert!(sorted.windows(2).all(|w| w[0] < w[1]));
        let mut rep = gens.clone();
        rep.push(gens[0]);
        prop_assert!(sort_sign(&rep).is_none());
    }

    #[test]
    fn wedge_graded_commutative(split in 0usize..=5, perm in Just((0u16..5).collect::<Vec<_>>()).prop_shuffle()) {
        let gens: Vec<Generator> = perm.iter().map(|&e| Generator::Dt(e)).collect();
        let a = Form::monomial(&gens[..split], Complex64::new(1.0, 0.0));
        let b = Form::monomial(&gens[split..], Complex64::new(1.0, 0.0));
        let sign = if split * (5 - split) % 2 == 0 { 1.0 } else { -1.0 };
        let ab = a.wedge(&b);
        let ba = b.wedge(&a).map(|c| c * sign);
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn real_moments_match_quadrature(a in 0.5f64..2.0, c in 0.5f64..2.0, b in -0.4f64..0.4, powers in proptest::collection::vec(0usize..2, 0..5)) {
        let m = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        let spec = GaussianSpec::real_only(m).unwrap();
        let mono = Monomial::new(vec![], vec![], powers);
        let fast = spec.gaussian_moment(&mono).unwrap();
        let slow = gaussian_moment_oracle(&spec, &mono).unwrap();
        prop_assert!((fast - slow).norm() <= 1e-8 * (1.0 + slow.norm()), "{} {}", fast, slow);
    }

    #[test]
    fn chart_round_trip(t in proptest::collection::vec(0.01f64..3.0, 3), inner in 1u64..7) {
        let flag = Flag::new(3, vec![0b111, inner]).or_else(|_| Flag::new(3, vec![inner])).unwrap();
        let chart = interior_to_chart(&t, &flag).unwrap();
        let back = chart_to_interior(&chart).unwrap();
        for (x, y) in t.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn richardson_removes_polynomial_error(c in proptest::collection::vec(-2.0f64..2.0, 4)) {
        let vals: Vec<Complex64> = (0..5)
            .map(|k| {
                let h = 0.5f64.powi(k);
                Complex64::new(c[0] + c[1] * h + c[2] * h * h + c[3] * h * h * h, 0.0)
            })
            .collect();
        let (v, _) = richardson(&vals, 2.0, 1.0);
        prop_assert!((v.re - c[0]).abs() <= 1e-9);
    }
}
